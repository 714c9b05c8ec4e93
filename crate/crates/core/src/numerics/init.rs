use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{RngState, Tensor};
use crate::error::MegtError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitScheme {
    /// `U(−a, a)` with `a = √(6 / (fan_in + fan_out))`, fans = (rows, cols).
    XavierUniform,
    Normal { std: f64 },
    Zeros,
    Ones,
}

impl FromStr for InitScheme {
    type Err = MegtError;

    /// Accepts `xavier_uniform`, `zeros`, `ones`, `normal(<std>)`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "xavier_uniform" => Ok(InitScheme::XavierUniform),
            "zeros" => Ok(InitScheme::Zeros),
            "ones" => Ok(InitScheme::Ones),
            other => {
                let std = other
                    .strip_prefix("normal(")
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|v| v.trim().parse::<f64>().ok())
                    .filter(|v| v.is_finite() && *v >= 0.0)
                    .ok_or_else(|| MegtError::Config(format!("unknown init scheme {other:?}")))?;
                Ok(InitScheme::Normal { std })
            }
        }
    }
}

impl fmt::Display for InitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitScheme::XavierUniform => f.write_str("xavier_uniform"),
            InitScheme::Normal { std } => write!(f, "normal({std})"),
            InitScheme::Zeros => f.write_str("zeros"),
            InitScheme::Ones => f.write_str("ones"),
        }
    }
}

pub fn init_params(rows: usize, cols: usize, scheme: InitScheme, rng: &mut RngState) -> Tensor {
    let mut t = Tensor::zeros(rows, cols);
    match scheme {
        InitScheme::Zeros => {}
        InitScheme::Ones => t.data_mut().iter_mut().for_each(|v| *v = 1.0),
        InitScheme::XavierUniform => {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            let s = rng.stream();
            for v in t.data_mut() {
                *v = s.random_range(-bound..bound);
            }
        }
        InitScheme::Normal { std } => {
            let dist = Normal::new(0.0, std).expect("finite std");
            let s = rng.stream();
            for v in t.data_mut() {
                *v = dist.sample(s);
            }
        }
    }
    t
}

/// Entries drawn i.i.d. from `U(lo, hi)`.
pub fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut RngState) -> Tensor {
    let mut t = Tensor::zeros(rows, cols);
    let s = rng.stream();
    for v in t.data_mut() {
        *v = s.random_range(lo..hi);
    }
    t
}
