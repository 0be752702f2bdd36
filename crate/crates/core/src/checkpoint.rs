//! Single-file training checkpoint: a JSON document with a magic string and a
//! format version in front of the payload.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diversity::DiversityState;
use crate::error::{CoreError, Result};
use crate::grpo::AdamWState;
use crate::policy::PolicyParams;

pub const MAGIC: &str = "SYNGRPO-CKPT";
pub const FORMAT_VERSION: u32 = 1;

/// Everything the optimizer carries from step to step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingState {
    pub params: PolicyParams,
    /// Frozen policy for the KL term.
    pub reference: PolicyParams,
    pub adam: AdamWState,
    pub diversity: DiversityState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub magic: String,
    pub format_version: u32,
    /// Steps completed when the checkpoint was taken.
    pub step: u64,
    pub state: TrainingState,
}

impl Checkpoint {
    pub fn new(step: u64, state: TrainingState) -> Self {
        Checkpoint { magic: MAGIC.into(), format_version: FORMAT_VERSION, step, state }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Checks the header before decoding the payload, so a file from another
    /// format version fails with a version error rather than a field error.
    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            magic: Option<String>,
            format_version: Option<u32>,
        }
        let header: Header = serde_json::from_str(text)?;
        if header.magic.as_deref() != Some(MAGIC) {
            return Err(CoreError::contract("not a checkpoint file (magic mismatch)"));
        }
        let found = header.format_version.unwrap_or(0);
        if found != FORMAT_VERSION {
            return Err(CoreError::Version { what: "checkpoint", found, expected: FORMAT_VERSION });
        }
        let ck: Checkpoint = serde_json::from_str(text)?;
        let s = &ck.state;
        let n = s.params.shape().num_params();
        if s.params.shape() != s.reference.shape() || s.adam.m.len() != n || s.adam.v.len() != n {
            return Err(CoreError::contract("checkpoint tensors disagree on shape"));
        }
        // re-run the finiteness and length checks of the constructor
        PolicyParams::from_vec(*s.params.shape(), s.params.as_slice().to_vec())?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_json()?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PolicyShape;

    fn sample() -> Checkpoint {
        let shape = PolicyShape { feature_dim: 2, context_dim: 1, diversity_buckets: 2, description_len: 1, vocab: 2 };
        let params = PolicyParams::from_vec(shape, vec![0.1, -0.2, 0.3, 1e-17, 5.0, -7.25]).unwrap();
        let mut adam = AdamWState::new(6);
        adam.step = 3;
        adam.m[1] = 0.123456789012345;
        let diversity = DiversityState { k: 3, global_avg: 0.3333333333333333, gamma: 0.7 };
        Checkpoint::new(3, TrainingState { reference: PolicyParams::zeros(shape), params, adam, diversity })
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        assert_eq!(Checkpoint::from_json(&ck.to_json().unwrap()).unwrap(), ck);
    }

    #[test]
    fn header_is_checked_first() {
        let mut ck = sample();
        ck.format_version = 2;
        let err = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap_err();
        assert!(matches!(err, CoreError::Version { found: 2, expected: 1, .. }));
        ck.magic = "nope".into();
        assert!(Checkpoint::from_json(&ck.to_json().unwrap()).is_err());
        assert!(Checkpoint::from_json("{}").is_err());
    }
}
