//! Run configuration: everything needed to reproduce a dataset, model and
//! report from a master seed. Serialized as TOML.

use lobcal_core::chiarella::ChiarellaConfig;
use lobcal_core::features::FeatureKind;
use lobcal_core::prior::PriorSpec;
use lobcal_core::zi::ZiConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::flow::Flavor;
use crate::npe::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Zi,
    Chiarella,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Zi => "zi",
            ModelKind::Chiarella => "chiarella",
        }
    }

    pub fn default_prior(self) -> PriorSpec {
        match self {
            ModelKind::Zi => PriorSpec::zi(),
            ModelKind::Chiarella => PriorSpec::chiarella(),
        }
    }

    /// NSF for ZI, MAF for Chiarella.
    pub fn default_flavor(self) -> Flavor {
        match self {
            ModelKind::Zi => Flavor::Nsf,
            ModelKind::Chiarella => Flavor::Maf,
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "zi" => Ok(ModelKind::Zi),
            "chiarella" => Ok(ModelKind::Chiarella),
            other => Err(format!(
                "unknown model `{other}` (expected zi or chiarella)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelKind,
    /// Feature encodings; datasets and models are built for each, from the
    /// same simulations. The first is the primary one.
    pub features: Vec<FeatureKind>,
    /// Observation length `T` in ticks.
    pub len: usize,
    /// Simulator steps per tick.
    pub sample_interval: u64,
    /// Number of simulations.
    pub budget: usize,
    pub seed: u64,
    /// Overrides the model's default log10 prior box.
    pub prior: Option<PriorSpec>,
    /// Overrides the model's default flow flavor.
    pub flavor: Option<Flavor>,
    pub zi: ZiConfig,
    pub chiarella: ChiarellaConfig,
    pub train: TrainConfig,
    /// Posterior draws per test point for RMSE.
    pub posterior_samples: usize,
    /// Posterior draws per SBC rank.
    pub sbc_samples: usize,
    /// Test points used for RMSE and SBC (at most the test split).
    pub eval_points: usize,
    /// Abort when more than this fraction of runs diverge.
    pub max_diverged_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_model(ModelKind::Zi)
    }
}

impl RunConfig {
    pub fn for_model(model: ModelKind) -> Self {
        RunConfig {
            model,
            features: vec![FeatureKind::Vwap],
            len: 600,
            sample_interval: 1,
            budget: 2_000,
            seed: 0,
            prior: None,
            flavor: None,
            zi: ZiConfig::default(),
            chiarella: ChiarellaConfig::default(),
            train: TrainConfig::default(),
            posterior_samples: 1_000,
            sbc_samples: 100,
            eval_points: 100,
            max_diverged_fraction: 0.05,
        }
    }

    pub fn prior(&self) -> PriorSpec {
        self.prior
            .clone()
            .unwrap_or_else(|| self.model.default_prior())
    }

    pub fn flavor(&self) -> Flavor {
        self.flavor.unwrap_or_else(|| self.model.default_flavor())
    }

    /// Training configuration with the effective flavor and a seed derived
    /// from the master seed.
    pub fn train_config(&self) -> TrainConfig {
        let mut t = self.train.clone();
        t.flow.flavor = self.flavor();
        t.seed = lobcal_core::rng::derive_seed(self.seed, 10);
        t
    }

    pub fn simulation_steps(&self) -> u64 {
        self.len as u64 * self.sample_interval
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("configuration serializes");
        hex::encode(Sha256::digest(json))
    }
}
