//! Fixtures shared by the attention benchmarks.

use megt::attention::{self_attention, AttentionHeadParams, AttentionKind, NystromConfig};
use megt::numerics::uniform;
use megt::{Graph, ParamStore, RngState, Tensor};

pub struct AttentionFixture {
    pub store: ParamStore,
    pub params: AttentionHeadParams,
    pub input: Tensor,
}

impl AttentionFixture {
    pub fn new(n: usize, d_model: usize, n_heads: usize, seed: u64) -> Self {
        let rng = RngState::new(seed);
        let mut store = ParamStore::new();
        let params = AttentionHeadParams::init(&mut store, &rng, "attn", d_model, n_heads).expect("heads divide d_model");
        let input = uniform(n, d_model, -1.0, 1.0, &mut rng.child("x"));
        AttentionFixture { store, params, input }
    }

    /// One forward pass; returns the output's first element so the work is
    /// observable.
    pub fn forward(&self, kind: AttentionKind, cfg: &NystromConfig) -> f64 {
        let mut g = Graph::with_params(&self.store);
        let x = g.constant(self.input.clone());
        let (out, _) = self_attention(&mut g, x, &self.params, kind, cfg).expect("valid fixture");
        g.value(out).data()[0]
    }
}
