use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use std::fmt;
use std::str::FromStr;

use super::Bag;
use crate::error::{MegtError, Result};
use crate::numerics::{RngState, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthTask {
    /// Label 1 iff a witness signal is present at both scales of the bag.
    Witness,
    /// Label 1 iff the low-scale and the high-scale signals are both present.
    CrossScale,
}

impl FromStr for SynthTask {
    type Err = MegtError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "witness" => Ok(SynthTask::Witness),
            "cross_scale" | "cross-scale" => Ok(SynthTask::CrossScale),
            other => Err(MegtError::Config(format!("unknown task {other:?}"))),
        }
    }
}

impl fmt::Display for SynthTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthTask::Witness => "witness",
            SynthTask::CrossScale => "cross_scale",
        })
    }
}

/// Which scales carry signal in a cross-scale bag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BagType {
    Both,
    LowOnly,
    HighOnly,
    Neither,
}

impl BagType {
    const ALL: [BagType; 4] = [BagType::Both, BagType::LowOnly, BagType::HighOnly, BagType::Neither];

    pub fn low(self) -> bool {
        matches!(self, BagType::Both | BagType::LowOnly)
    }

    pub fn high(self) -> bool {
        matches!(self, BagType::Both | BagType::HighOnly)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub task: SynthTask,
    pub bags: usize,
    pub n_low_min: usize,
    pub n_low_max: usize,
    pub children_per_low: usize,
    pub d: usize,
    pub signal_strength: f64,
    pub noise: f64,
    /// Fraction of tokens receiving the signal in a signal-bearing scale.
    pub witness_fraction: f64,
    /// Probabilities of (both, low only, high only, neither) for cross-scale.
    pub type_probs: [f64; 4],
    pub seed: u64,
}

impl SynthSpec {
    pub fn new(task: SynthTask, bags: usize, seed: u64) -> Self {
        SynthSpec {
            task,
            bags,
            n_low_min: 96,
            n_low_max: 128,
            children_per_low: 4,
            d: 64,
            signal_strength: 3.0,
            noise: 1.0,
            witness_fraction: 0.25,
            type_probs: [0.5, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(MegtError::Config(msg));
        if self.n_low_min == 0 || self.n_low_min > self.n_low_max {
            return bad(format!("invalid n_low range [{}, {}]", self.n_low_min, self.n_low_max));
        }
        if self.children_per_low == 0 || self.d == 0 {
            return bad("children_per_low and d must be positive".into());
        }
        if self.task == SynthTask::CrossScale && self.d < 2 {
            return bad("cross_scale needs d >= 2 for orthogonal directions".into());
        }
        if !(self.noise.is_finite() && self.noise >= 0.0 && self.signal_strength.is_finite()) {
            return bad("noise and signal_strength must be finite, noise >= 0".into());
        }
        if !(self.witness_fraction > 0.0 && self.witness_fraction <= 1.0) {
            return bad(format!("witness_fraction {} outside (0, 1]", self.witness_fraction));
        }
        let total: f64 = self.type_probs.iter().sum();
        if self.type_probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return bad(format!("type probabilities {:?} are not a distribution", self.type_probs));
        }
        Ok(())
    }
}

/// The unit directions `(μ_L, μ_H)`, orthogonal when `d ≥ 2`; a function of
/// the seed and width only.
pub fn signal_directions(seed: u64, d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut rng = RngState::new(seed).child("directions");
    let mut draw = || -> Vec<f64> {
        (0..d)
            .map(|_| StandardNormal.sample(rng.stream()))
            .collect()
    };
    let normalize = |v: &mut Vec<f64>| {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
    };
    let mut low = draw();
    normalize(&mut low);
    let mut high = draw();
    if d >= 2 {
        let proj: f64 = low.iter().zip(&high).map(|(a, b)| a * b).sum();
        high.iter_mut().zip(&low).for_each(|(h, l)| *h -= proj * l);
    }
    normalize(&mut high);
    (low, high)
}

fn noise_matrix(rows: usize, d: usize, sigma: f64, rng: &mut RngState) -> Tensor {
    let dist = Normal::new(0.0, sigma).expect("validated sigma");
    let data = (0..rows * d).map(|_| dist.sample(rng.stream())).collect();
    Tensor::from_vec(rows, d, data).expect("sized")
}

fn add_signal(t: &mut Tensor, rows: impl IntoIterator<Item = usize>, dir: &[f64], s: f64) {
    for r in rows {
        t.row_mut(r).iter_mut().zip(dir).for_each(|(x, u)| *x += s * u);
    }
}

fn subset(n: usize, fraction: f64, rng: &mut RngState) -> Vec<usize> {
    let k = ((n as f64 * fraction).round() as usize).clamp(1, n);
    let mut idx = sample(rng.stream(), n, k).into_vec();
    idx.sort_unstable();
    idx
}

/// Features are rounded to `f32` so that bag files round-trip exactly.
fn round_f32(t: &mut Tensor) {
    t.data_mut().iter_mut().for_each(|x| *x = *x as f32 as f64);
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<Vec<Bag>> {
    spec.validate()?;
    let (mu_low, mu_high) = signal_directions(spec.seed, spec.d);
    let root = RngState::new(spec.seed);
    let mut bags = Vec::with_capacity(spec.bags);
    for i in 0..spec.bags {
        let mut rng = root.child(&format!("bag{i}"));
        let n_low = rng.stream().random_range(spec.n_low_min..=spec.n_low_max);
        let n_high = n_low * spec.children_per_low;
        let mut low = noise_matrix(n_low, spec.d, spec.noise, &mut rng);
        let mut high = noise_matrix(n_high, spec.d, spec.noise, &mut rng);
        let s = spec.signal_strength;
        let label = match spec.task {
            SynthTask::Witness => {
                let positive = rng.stream().random_bool(0.5);
                if positive {
                    let parents = subset(n_low, spec.witness_fraction, &mut rng);
                    let children = parents.iter().flat_map(|&p| {
                        (0..spec.children_per_low).map(move |c| p * spec.children_per_low + c)
                    });
                    add_signal(&mut high, children, &mu_high, s);
                    add_signal(&mut low, parents, &mu_low, s);
                }
                usize::from(positive)
            }
            SynthTask::CrossScale => {
                let bag_type = draw_type(&spec.type_probs, &mut rng);
                if bag_type.low() {
                    let rows = subset(n_low, spec.witness_fraction, &mut rng);
                    add_signal(&mut low, rows, &mu_low, s);
                }
                if bag_type.high() {
                    let rows = subset(n_high, spec.witness_fraction, &mut rng);
                    add_signal(&mut high, rows, &mu_high, s);
                }
                usize::from(bag_type == BagType::Both)
            }
        };
        round_f32(&mut low);
        round_f32(&mut high);
        bags.push(Bag::new(format!("bag{i:05}"), label, low, high)?);
    }
    Ok(bags)
}

fn draw_type(probs: &[f64; 4], rng: &mut RngState) -> BagType {
    let u: f64 = rng.stream().random();
    let mut acc = 0.0;
    for (t, p) in BagType::ALL.iter().zip(probs) {
        acc += p;
        if u < acc {
            return *t;
        }
    }
    BagType::Neither
}
