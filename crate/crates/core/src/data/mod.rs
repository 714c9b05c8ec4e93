//! Dual-resolution bags: the in-memory type, a synthetic generator with a
//! known Bayes bound, the `.megb` file format and split manifests.

mod bagfile;
mod manifest;
mod synth;

pub use bagfile::{decode_bag, encode_bag, read_bag, write_bag, BAG_MAGIC, BAG_VERSION};
pub use manifest::{
    load_manifest, parse_manifest, split_bags, standard_split, write_manifest, ManifestEntry, Split, Splits,
};
pub use synth::{generate_synthetic, signal_directions, BagType, SynthSpec, SynthTask};

use crate::error::{MegtError, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub id: String,
    pub label: usize,
    /// `n_low × d`
    pub low: Tensor,
    /// `n_high × d`
    pub high: Tensor,
}

impl Bag {
    pub fn new(id: impl Into<String>, label: usize, low: Tensor, high: Tensor) -> Result<Self> {
        let bag = Bag {
            id: id.into(),
            label,
            low,
            high,
        };
        bag.validate()?;
        Ok(bag)
    }

    pub fn validate(&self) -> Result<()> {
        if self.low.rows() == 0 {
            return Err(MegtError::EmptyBag { resolution: "low" });
        }
        if self.high.rows() == 0 {
            return Err(MegtError::EmptyBag { resolution: "high" });
        }
        if self.low.cols() != self.high.cols() {
            return Err(MegtError::Data(format!(
                "bag {}: low width {} differs from high width {}",
                self.id,
                self.low.cols(),
                self.high.cols()
            )));
        }
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.low.cols()
    }

    pub fn n_low(&self) -> usize {
        self.low.rows()
    }

    pub fn n_high(&self) -> usize {
        self.high.rows()
    }
}
