//! Self-contained model checkpoints: parameters plus everything inference
//! needs (bins, normalization ranges, training static features).

use std::fs;
use std::path::Path;

use pathsim_autodiff::ParamStore;
use pathsim_core::io::{Discretizer, GlobalRanges};
use pathsim_core::trace::StaticFeatures;
use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineConfig, BaselineKind};
use crate::error::{Error, Result};
use crate::rbu::RbuConfig;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelSpec {
    Rbu(RbuConfig),
    Baseline { baseline: BaselineKind, config: BaselineConfig },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model: ModelSpec,
    pub params: ParamStore,
    pub bins: Discretizer,
    /// Static-feature normalization ranges of the training set.
    pub ranges: GlobalRanges,
    /// Static features of every training trace, sampled jointly at inference.
    pub train_features: Vec<StaticFeatures>,
    /// Protocol tag of the training traces.
    pub train_protocol: String,
}

impl Checkpoint {
    pub fn model_id(&self) -> String {
        match &self.model {
            ModelSpec::Rbu(c) if c.multipath => "rbu-2path".into(),
            ModelSpec::Rbu(_) => "rbu".into(),
            ModelSpec::Baseline { baseline, .. } => baseline.tag().into(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Checkpoint> {
        let mut c: Checkpoint = serde_json::from_str(s)?;
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                c.version
            )));
        }
        if c.train_features.is_empty() {
            return Err(Error::Checkpoint("no training static features".into()));
        }
        c.params.reindex()?;
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        Checkpoint::from_json(&fs::read_to_string(path)?)
    }
}
