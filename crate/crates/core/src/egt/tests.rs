use super::*;
use crate::gradcheck::{check_param_grads, GradCheckOptions};
use crate::numerics::{uniform, Tensor};

fn rand_t(rows: usize, cols: usize, seed: u64) -> Tensor {
    uniform(rows, cols, -1.0, 1.0, &mut RngState::new(seed))
}

fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut acc = 0.0;
            for p in 0..a.cols() {
                acc += a.get(i, p) * b.get(p, j);
            }
            out.set(i, j, acc);
        }
    }
    out
}

fn naive_softmax(a: &Tensor) -> Tensor {
    let mut out = a.clone();
    for i in 0..a.rows() {
        let max = (0..a.cols()).map(|j| a.get(i, j)).fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = (0..a.cols()).map(|j| (a.get(i, j) - max).exp()).sum();
        for j in 0..a.cols() {
            out.set(i, j, (a.get(i, j) - max).exp() / total);
        }
    }
    out
}

fn cols(a: &Tensor, start: usize, len: usize) -> Tensor {
    let mut out = Tensor::zeros(a.rows(), len);
    for i in 0..a.rows() {
        for j in 0..len {
            out.set(i, j, a.get(i, start + j));
        }
    }
    out
}

fn hcat(parts: &[Tensor]) -> Tensor {
    let rows = parts[0].rows();
    let width: usize = parts.iter().map(Tensor::cols).sum();
    let mut out = Tensor::zeros(rows, width);
    let mut off = 0;
    for p in parts {
        for i in 0..rows {
            for j in 0..p.cols() {
                out.set(i, off + j, p.get(i, j));
            }
        }
        off += p.cols();
    }
    out
}

fn readout_loss(g: &mut Graph, out: Var, seed: u64) -> Result<Var> {
    let (r, c) = g.shape(out);
    let w = g.constant(rand_t(r, c, seed));
    let prod = g.mul(out, w)?;
    Ok(g.sum_all(prod))
}

fn settings(kind: AttentionKind, m: usize, k_keep: usize, tpm: bool, gtl: bool) -> EgtSettings {
    EgtSettings {
        attention: AttentionSetup {
            kind,
            nystrom: NystromConfig {
                m_landmarks: m,
                pinv_iters: 20,
            },
        },
        k_keep,
        enable_tpm: tpm,
        enable_gtl: gtl,
    }
}

fn encoder(d: usize, heads: usize, seed: u64) -> (ParamStore, EncoderLayerParams) {
    let mut store = ParamStore::new();
    let p = EncoderLayerParams::init(&mut store, &RngState::new(seed), "enc", d, heads, 4).unwrap();
    (store, p)
}

#[test]
fn encoder_with_zero_weights_is_identity() {
    let (mut store, p) = encoder(8, 2, 1);
    let keep = [p.ln1.gamma, p.ln1.beta, p.ln2.gamma, p.ln2.beta];
    for id in store.ids().collect::<Vec<_>>() {
        if !keep.contains(&id) {
            store.get_mut(id).data_mut().fill(0.0);
        }
    }
    let x = rand_t(6, 8, 2);
    for kind in [AttentionKind::Exact, AttentionKind::Nystrom] {
        let mut g = Graph::with_params(&store);
        let xv = g.constant(x.clone());
        let setup = AttentionSetup {
            kind,
            nystrom: NystromConfig::default(),
        };
        let (out, _) = encoder_layer(&mut g, xv, &p, &setup).unwrap();
        assert_eq!(g.value(out).max_abs_diff(&x), 0.0);
    }
}

#[test]
fn encoder_gradients_match_finite_differences() {
    let (store, p) = encoder(8, 2, 3);
    let x = rand_t(7, 8, 4);
    for kind in [AttentionKind::Exact, AttentionKind::Nystrom] {
        let setup = AttentionSetup {
            kind,
            nystrom: NystromConfig {
                m_landmarks: 3,
                pinv_iters: 6,
            },
        };
        let report = check_param_grads(
            &store,
            |g| {
                let xv = g.constant(x.clone());
                let (out, _) = encoder_layer(g, xv, &p, &setup)?;
                readout_loss(g, out, 5)
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.passes(1e-4), "{kind}: {:?}", report.worst());
    }
}

#[test]
fn encoder_exact_and_nystrom_agree_with_full_landmarks() {
    let (store, p) = encoder(8, 2, 6);
    let x = rand_t(9, 8, 7);
    let run = |kind| {
        let mut g = Graph::with_params(&store);
        let xv = g.constant(x.clone());
        let setup = AttentionSetup {
            kind,
            nystrom: NystromConfig {
                m_landmarks: 9,
                pinv_iters: 20,
            },
        };
        let (out, _) = encoder_layer(&mut g, xv, &p, &setup).unwrap();
        g.value(out).clone()
    };
    let diff = run(AttentionKind::Exact).max_abs_diff(&run(AttentionKind::Nystrom));
    assert!(diff <= 1e-4, "diff {diff}");
}

#[test]
fn head_average_examples() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::row_vector(&[0.1, 0.4, 0.3, 0.2]));
    let b = g.constant(Tensor::row_vector(&[0.3, 0.2, 0.3, 0.2]));
    let avg = head_average(&mut g, &[a, b]).unwrap();
    let want = Tensor::row_vector(&[0.2, 0.3, 0.3, 0.2]);
    assert!(g.value(avg).max_abs_diff(&want) < 1e-15);

    let one = head_average(&mut g, &[a]).unwrap();
    assert_eq!(g.value(one).data(), g.value(a).data());

    let same = head_average(&mut g, &[b, b, b]).unwrap();
    assert!(g.value(same).max_abs_diff(g.value(b)) < 1e-15);

    let short = g.constant(Tensor::row_vector(&[0.5, 0.5]));
    assert!(matches!(head_average(&mut g, &[a, short]), Err(MegtError::Shape { .. })));
    assert!(head_average(&mut g, &[]).is_err());
}

#[test]
fn top_k_prefers_lower_index_on_ties() {
    assert_eq!(top_k_indices(&[0.2, 0.3, 0.3, 0.2], 2), vec![1, 2]);
    assert_eq!(top_k_indices(&[0.2, 0.3, 0.3, 0.2], 1), vec![1]);
    assert_eq!(top_k_indices(&[0.5, 0.5, 0.5], 2), vec![0, 1]);
    assert_eq!(top_k_indices(&[0.1, 0.9], 5), vec![0, 1]);
}

#[test]
fn prune_example_fuses_discarded_tokens() {
    let mut g = Graph::new();
    let h = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0], [7.0, 8.0]]);
    let patches = g.constant(h.clone());
    let abar = g.constant(Tensor::row_vector(&[0.2, 0.3, 0.3, 0.2]));
    let r = prune_tokens(&mut g, patches, abar, 2).unwrap();
    assert_eq!(r.kept_indices, vec![1, 2]);
    assert_eq!(g.value(r.kept_tokens).data(), &[3.0, 4.0, 5.0, 6.0]);
    let fusion = g.value(r.fusion_token.unwrap());
    let want = Tensor::row_vector(&[0.2 * 1.0 + 0.2 * 7.0, 0.2 * 2.0 + 0.2 * 8.0]);
    assert!(fusion.max_abs_diff(&want) < 1e-15);
    let all = r.tokens(&mut g).unwrap();
    assert_eq!(g.shape(all), (3, 2));
}

#[test]
fn prune_keeps_everything_when_k_covers_n() {
    let mut g = Graph::new();
    let patches = g.constant(rand_t(3, 2, 1));
    let abar = g.constant(Tensor::row_vector(&[0.1, 0.5, 0.2]));
    for k in [3, 10] {
        let r = prune_tokens(&mut g, patches, abar, k).unwrap();
        assert_eq!(r.kept_indices, vec![0, 1, 2]);
        assert!(r.fusion_token.is_none());
        assert_eq!(g.value(r.kept_tokens).data(), g.value(patches).data());
    }
    assert!(matches!(prune_tokens(&mut g, patches, abar, 0), Err(MegtError::Config(_))));
}

#[test]
fn prune_is_permutation_equivariant() {
    let h = rand_t(6, 3, 9);
    let a = [0.05, 0.31, 0.12, 0.22, 0.08, 0.17];
    let perm = [3, 0, 5, 1, 4, 2];
    let mut g = Graph::new();
    let p1 = g.constant(h.clone());
    let a1 = g.constant(Tensor::row_vector(&a));
    let r1 = prune_tokens(&mut g, p1, a1, 3).unwrap();

    let h2 = h.select_rows(&perm);
    let a2: Vec<f64> = perm.iter().map(|&i| a[i]).collect();
    let p2 = g.constant(h2);
    let a2v = g.constant(Tensor::row_vector(&a2));
    let r2 = prune_tokens(&mut g, p2, a2v, 3).unwrap();

    let mut mapped: Vec<usize> = r2.kept_indices.iter().map(|&i| perm[i]).collect();
    mapped.sort_unstable();
    assert_eq!(mapped, r1.kept_indices);
    let diff = g
        .value(r1.fusion_token.unwrap())
        .max_abs_diff(g.value(r2.fusion_token.unwrap()));
    assert!(diff <= 1e-12);
}

#[test]
fn prune_selection_ignores_monotone_transforms() {
    let a = [0.05, 0.31, 0.12, 0.22, 0.08, 0.17, 0.29];
    let base = top_k_indices(&a, 4);
    let exp: Vec<f64> = a.iter().map(|v| (3.0 * v).exp()).collect();
    let cube: Vec<f64> = a.iter().map(|v| v * v * v - 2.0).collect();
    assert_eq!(top_k_indices(&exp, 4), base);
    assert_eq!(top_k_indices(&cube, 4), base);
}

fn gtl(d: usize, heads: usize, seed: u64) -> (ParamStore, GtlParams) {
    let mut store = ParamStore::new();
    let p = GtlParams::init(&mut store, &RngState::new(seed), "gtl", d, heads).unwrap();
    (store, p)
}

#[test]
fn gtl_rejects_indivisible_heads() {
    let mut store = ParamStore::new();
    assert!(GtlParams::init(&mut store, &RngState::new(0), "gtl", 6, 4).is_err());
}

#[test]
fn gtl_scores_vanish_with_zero_query() {
    let (mut store, p) = gtl(8, 2, 1);
    store.get_mut(p.wq).data_mut().fill(0.0);
    let mut g = Graph::with_params(&store);
    let x = g.constant(rand_t(4, 8, 2));
    let heads = gtl_scores(&mut g, x, &p).unwrap();
    for a in heads.scores {
        assert!(g.value(a).data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn gtl_scores_hand_example() {
    let (mut store, p) = gtl(2, 1, 1);
    *store.get_mut(p.wq) = Tensor::from_rows(&[[1.0, 0.0], [0.0, 2.0]]);
    *store.get_mut(p.wk) = Tensor::from_rows(&[[0.0, 1.0], [1.0, 0.0]]);
    let mut g = Graph::with_params(&store);
    let x = g.constant(Tensor::from_rows(&[[1.0, 2.0], [3.0, -1.0]]));
    let heads = gtl_scores(&mut g, x, &p).unwrap();
    // Q = [[1,4],[3,-2]], K = [[2,1],[-1,3]], scale 1/√2.
    let s = 1.0 / 2f64.sqrt();
    let want = Tensor::from_rows(&[[6.0 * s, 11.0 * s], [4.0 * s, -9.0 * s]]);
    assert!(g.value(heads.scores[0]).max_abs_diff(&want) <= 1e-12);
}

#[test]
fn gtl_scores_are_linear_in_query() {
    let (mut store, p) = gtl(8, 2, 3);
    let x = rand_t(5, 8, 4);
    let scores = |store: &ParamStore| {
        let mut g = Graph::with_params(store);
        let xv = g.constant(x.clone());
        let heads = gtl_scores(&mut g, xv, &p).unwrap();
        heads.scores.iter().map(|&a| g.value(a).clone()).collect::<Vec<_>>()
    };
    let base = scores(&store);
    store.get_mut(p.wq).data_mut().iter_mut().for_each(|v| *v *= 2.0);
    let doubled = scores(&store);
    for (b, d) in base.iter().zip(&doubled) {
        assert!(b.map(|v| 2.0 * v).max_abs_diff(d) <= 1e-12);
    }
}

fn identity_store(d: usize) -> (ParamStore, ParamId) {
    let mut store = ParamStore::new();
    let id = store.insert("eye", Tensor::identity(d));
    (store, id)
}

#[test]
fn transformer_branch_uniform_scores_average_values() {
    let (store, eye) = identity_store(3);
    let mut g = Graph::with_params(&store);
    let a = g.constant(Tensor::zeros(4, 4));
    let v = rand_t(4, 3, 5);
    let vv = g.constant(v.clone());
    let out = gtl_transformer_branch(&mut g, &[a], &[vv], eye).unwrap();
    for i in 0..4 {
        for j in 0..3 {
            let mean = (0..4).map(|r| v.get(r, j)).sum::<f64>() / 4.0;
            assert!((g.value(out).get(i, j) - mean).abs() < 1e-12);
        }
    }
}

#[test]
fn transformer_branch_dominant_diagonal_returns_values() {
    let (store, eye) = identity_store(3);
    let mut g = Graph::with_params(&store);
    let mut scores = rand_t(4, 4, 6);
    for i in 0..4 {
        scores.set(i, i, 1e6);
    }
    let a = g.constant(scores);
    let v = rand_t(4, 3, 7);
    let vv = g.constant(v.clone());
    let out = gtl_transformer_branch(&mut g, &[a], &[vv], eye).unwrap();
    assert!(g.value(out).max_abs_diff(&v) <= 1e-6);
}

#[test]
fn transformer_branch_matches_loop_oracle() {
    let (store, p) = gtl(8, 2, 8);
    let x = rand_t(5, 8, 9);
    let mut g = Graph::with_params(&store);
    let xv = g.constant(x.clone());
    let heads = gtl_scores(&mut g, xv, &p).unwrap();
    let out = gtl_transformer_branch(&mut g, &heads.scores, &heads.v1, p.wo1).unwrap();

    let q = naive_matmul(&x, store.get(p.wq));
    let k = naive_matmul(&x, store.get(p.wk));
    let v1 = naive_matmul(&x, store.get(p.wv1));
    let parts: Vec<Tensor> = (0..2)
        .map(|h| {
            let (qh, kh, vh) = (cols(&q, 4 * h, 4), cols(&k, 4 * h, 4), cols(&v1, 4 * h, 4));
            let a = naive_matmul(&qh, &kh.transpose()).map(|s| s / 2.0);
            naive_matmul(&naive_softmax(&a), &vh)
        })
        .collect();
    let want = naive_matmul(&hcat(&parts), store.get(p.wo1));
    assert!(g.value(out).max_abs_diff(&want) <= 1e-12);
}

#[test]
fn gcn_with_identity_graph_is_relu_of_projection() {
    let mut g = Graph::new();
    let adj = g.constant(Tensor::identity(4));
    let v = rand_t(4, 3, 10);
    let w = rand_t(3, 3, 11);
    let (vv, wv) = (g.constant(v.clone()), g.constant(w.clone()));
    let out = gcn_propagate(&mut g, adj, vv, wv).unwrap();
    let want = naive_matmul(&v, &w).map(|x| x.max(0.0));
    assert!(g.value(out).max_abs_diff(&want) <= 1e-12);
}

#[test]
fn gcn_two_node_propagation_matrix() {
    let mut g = Graph::new();
    let scores = g.constant(Tensor::zeros(2, 2));
    let adj = gcn_adjacency(&mut g, scores).unwrap();
    assert_eq!(g.value(adj).data(), &[1.5, 0.5, 0.5, 1.5]);
    let p = g.sym_normalize(adj).unwrap();
    let want = Tensor::from_rows(&[[0.75, 0.25], [0.25, 0.75]]);
    assert!(g.value(p).max_abs_diff(&want) <= 1e-15);
}

#[test]
fn gcn_adjacency_is_nonnegative_and_self_connected() {
    let mut g = Graph::new();
    let scores = g.constant(rand_t(6, 6, 12).map(|v| 50.0 * v));
    let adj = gcn_adjacency(&mut g, scores).unwrap();
    let a = g.value(adj);
    for i in 0..6 {
        assert!(a.get(i, i) >= 1.0);
        assert!(a.row(i).iter().all(|&v| v >= 0.0));
        assert!(a.row(i).iter().sum::<f64>() > 0.0);
    }
}

#[test]
fn gtl_fuse_selects_a_branch() {
    let mut store = ParamStore::new();
    let top = Tensor::vstack(&[&Tensor::identity(3), &Tensor::zeros(3, 3)]).unwrap();
    let bottom = Tensor::vstack(&[&Tensor::zeros(3, 3), &Tensor::identity(3)]).unwrap();
    let (t, b) = (store.insert("top", top), store.insert("bottom", bottom));
    let mut g = Graph::with_params(&store);
    let v1 = rand_t(4, 3, 13);
    let v2 = rand_t(4, 3, 14);
    let (a, c) = (g.constant(v1.clone()), g.constant(v2.clone()));
    let o1 = gtl_fuse(&mut g, a, c, t).unwrap();
    let o2 = gtl_fuse(&mut g, a, c, b).unwrap();
    assert_eq!(g.value(o1).max_abs_diff(&v1), 0.0);
    assert_eq!(g.value(o2).max_abs_diff(&v2), 0.0);

    let short = g.constant(rand_t(2, 3, 15));
    assert!(gtl_fuse(&mut g, a, short, t).is_err());
}

#[test]
fn gtl_fuse_matches_direct_evaluation() {
    let mut store = ParamStore::new();
    let w = rand_t(6, 3, 16);
    let id = store.insert("w", w.clone());
    let mut g = Graph::with_params(&store);
    let (v1, v2) = (rand_t(5, 3, 17), rand_t(5, 3, 18));
    let (a, b) = (g.constant(v1.clone()), g.constant(v2.clone()));
    let out = gtl_fuse(&mut g, a, b, id).unwrap();
    let want = naive_matmul(&hcat(&[v1, v2]), &w);
    assert!(g.value(out).max_abs_diff(&want) <= 1e-12);
}

#[test]
fn gtl_gradients_are_correct_and_alive() {
    let (store, p) = gtl(8, 2, 19);
    let x = rand_t(6, 8, 20);
    let report = check_param_grads(
        &store,
        |g| {
            let xv = g.constant(x.clone());
            let out = graph_transformer_layer(g, xv, &p)?;
            readout_loss(g, out, 21)
        },
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.passes(1e-4), "{:?}", report.worst());
    for check in &report.params {
        assert!(check.nonzero, "{} received no gradient", check.name);
    }
}

fn branch(d_in: usize, d: usize, heads: usize, seed: u64) -> (ParamStore, EgtBranchParams) {
    let mut store = ParamStore::new();
    let b = EgtBranchParams::init(&mut store, &RngState::new(seed), "low", d_in, d, heads, 4, 1, true)
        .unwrap();
    (store, b)
}

fn run_branch(store: &ParamStore, b: &EgtBranchParams, x: &Tensor, s: &EgtSettings) -> Tensor {
    let mut g = Graph::with_params(store);
    let xv = g.constant(x.clone());
    let out = egt_forward(&mut g, xv, b, s).unwrap();
    g.value(out.tokens).clone()
}

#[test]
fn egt_token_count() {
    let (store, b) = branch(5, 8, 2, 22);
    for n in [1, 3, 6, 10] {
        for k in [1, 2, 6, 20] {
            let x = rand_t(n, 5, 23);
            let out = run_branch(&store, &b, &x, &settings(AttentionKind::Nystrom, 4, k, true, true));
            let want = 1 + k.min(n) + usize::from(k < n);
            assert_eq!(out.rows(), want, "n={n} k={k}");
        }
    }
}

#[test]
fn egt_rejects_empty_bag() {
    let (store, b) = branch(5, 8, 2, 24);
    let mut g = Graph::with_params(&store);
    let x = g.constant(Tensor::zeros(0, 5));
    let s = settings(AttentionKind::Nystrom, 4, 2, true, true);
    assert!(egt_forward(&mut g, x, &b, &s).is_err());
}

#[test]
fn egt_m_is_two_stacked_encoders() {
    let (store, b) = branch(5, 8, 2, 25);
    let x = rand_t(7, 5, 26);
    for k in [3, 100] {
        let s = settings(AttentionKind::Nystrom, 4, k, false, false);
        let got = run_branch(&store, &b, &x, &s);

        let mut g = Graph::with_params(&store);
        let xv = g.constant(x.clone());
        let proj = g.param(b.input_proj);
        let patches = g.matmul(xv, proj).unwrap();
        let cls = g.param(b.class_token);
        let t = g.concat_rows(&[cls, patches]).unwrap();
        let (t, _) = encoder_layer(&mut g, t, &b.encoder_1[0], &s.attention).unwrap();
        let (t, _) = encoder_layer(&mut g, t, &b.encoder_2[0], &s.attention).unwrap();
        assert!(got.max_abs_diff(g.value(t)) <= 1e-12);
    }
}

#[test]
fn egt_with_full_keep_equals_gtl_only_variant() {
    let (store, b) = branch(5, 8, 2, 27);
    let x = rand_t(6, 5, 28);
    let pruned_but_keep_all = run_branch(&store, &b, &x, &settings(AttentionKind::Nystrom, 4, 6, true, true));
    let no_tpm = run_branch(&store, &b, &x, &settings(AttentionKind::Nystrom, 4, 6, false, true));
    assert!(pruned_but_keep_all.max_abs_diff(&no_tpm) <= 1e-12);
}

#[test]
fn egt_tpm_only_matches_manual_composition() {
    let (store, b) = branch(5, 8, 2, 29);
    let x = rand_t(9, 5, 30);
    let s = settings(AttentionKind::Nystrom, 4, 4, true, false);
    let got = run_branch(&store, &b, &x, &s);

    let mut g = Graph::with_params(&store);
    let xv = g.constant(x.clone());
    let proj = g.param(b.input_proj);
    let patches = g.matmul(xv, proj).unwrap();
    let cls = g.param(b.class_token);
    let t = g.concat_rows(&[cls, patches]).unwrap();
    let (t, trace) = encoder_layer(&mut g, t, &b.encoder_1[0], &s.attention).unwrap();
    let cls = g.slice_rows(t, 0, 1).unwrap();
    let patches = g.slice_rows(t, 1, 9).unwrap();
    let r = prune_tokens(&mut g, patches, trace.mean_row, 4).unwrap();
    let kept = r.tokens(&mut g).unwrap();
    let t = g.concat_rows(&[cls, kept]).unwrap();
    let (t, _) = encoder_layer(&mut g, t, &b.encoder_2[0], &s.attention).unwrap();
    assert!(got.max_abs_diff(g.value(t)) <= 1e-12);
}

#[test]
fn egt_gtl_disabled_needs_no_gtl_params() {
    let mut store = ParamStore::new();
    let b = EgtBranchParams::init(&mut store, &RngState::new(31), "low", 5, 8, 2, 4, 1, false).unwrap();
    assert!(b.gtl.is_none());
    let x = rand_t(4, 5, 32);
    let mut g = Graph::with_params(&store);
    let xv = g.constant(x);
    assert!(egt_forward(&mut g, xv, &b, &settings(AttentionKind::Nystrom, 4, 2, true, true)).is_err());
    assert!(egt_forward(&mut g, xv, &b, &settings(AttentionKind::Nystrom, 4, 2, true, false)).is_ok());
}

#[test]
fn egt_class_token_bypasses_gtl() {
    // The class row entering encoder 2 must be the encoder-1 class row
    // regardless of GTL weights.
    let (mut store, b) = branch(5, 8, 2, 33);
    let x = rand_t(6, 5, 34);
    let s = settings(AttentionKind::Nystrom, 4, 3, true, true);
    let cls_before_enc2 = |store: &ParamStore| {
        let mut g = Graph::with_params(store);
        let xv = g.constant(x.clone());
        let only_enc1 = EgtBranchParams {
            encoder_2: Vec::new(),
            ..b.clone()
        };
        let out = egt_forward(&mut g, xv, &only_enc1, &s).unwrap();
        g.value(out.tokens).row(0).to_vec()
    };
    let before = cls_before_enc2(&store);
    let wo3 = b.gtl.as_ref().unwrap().wo3;
    store.get_mut(wo3).data_mut().iter_mut().for_each(|v| *v *= -3.0);
    assert_eq!(before, cls_before_enc2(&store));
}

#[test]
fn egt_full_branch_gradient_check() {
    let (store, b) = branch(6, 16, 2, 35);
    let x = rand_t(12, 6, 36);
    let s = EgtSettings {
        attention: AttentionSetup {
            kind: AttentionKind::Nystrom,
            nystrom: NystromConfig {
                m_landmarks: 4,
                pinv_iters: 6,
            },
        },
        k_keep: 5,
        enable_tpm: true,
        enable_gtl: true,
    };
    let report = check_param_grads(
        &store,
        |g| {
            let xv = g.constant(x.clone());
            let out = egt_forward(g, xv, &b, &s)?;
            readout_loss(g, out.tokens, 37)
        },
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.passes(1e-4), "{:?}", report.worst());
    let gtl_names: Vec<_> = report.params.iter().filter(|p| p.name.contains(".gtl.")).collect();
    assert!(!gtl_names.is_empty());
    assert!(gtl_names.iter().all(|p| p.nonzero));
}

