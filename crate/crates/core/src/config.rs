//! Run configuration, read from JSON. Unknown keys are rejected by name.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::awareness::EstimatorConfig;
use crate::error::{Error, Result};
use crate::objective::LossWeights;
use crate::saliency::{SaliencyParams, SaliencyProvider};

/// Gaze noise defaults shared by the benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseDefaults {
    /// Growth of the noise std with distance from the frame center.
    pub w: f64,
    /// Noise level the denoiser assumes when none is given.
    pub reference_sigma: f64,
}

impl Default for NoiseDefaults {
    fn default() -> Self {
        Self {
            w: 0.1,
            reference_sigma: 0.03,
        }
    }
}

/// Gaze-conditioned density and meanshift settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DenoiseConfig {
    /// Weight of the gaze likelihood against saliency in the conditioned density.
    pub lambda: f64,
    /// Meanshift iteration cap.
    pub max_iterations: usize,
    /// Meanshift convergence threshold in pixels.
    pub epsilon_px: f64,
    /// Smallest meanshift bandwidth (normalized), used when σ_n is tiny.
    pub min_bandwidth: f64,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        Self {
            lambda: 0.6,
            max_iterations: 100,
            epsilon_px: 0.01,
            min_bandwidth: 0.03,
        }
    }
}

/// Optimizer settings for the correction network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrectionConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Std of the supervised target Gaussian (normalized, diagonal-relative).
    pub target_sigma: f64,
    /// Scale of the random initial output-layer weights.
    pub init_scale: f64,
    /// L2 penalty on the hidden-to-output weights.
    pub weight_decay: f64,
}

impl Default for CorrectionConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            learning_rate: 0.01,
            epochs: 600,
            target_sigma: 0.0347,
            init_scale: 1e-3,
            weight_decay: 10.0,
        }
    }
}

/// Everything a CLI run needs besides its inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    /// Coefficients used when scoring maps with the objective.
    pub weights: LossWeights,
    /// Coefficients for the variational estimator, which fits the maps directly
    /// and therefore needs a different balance than the scoring table.
    pub fit_weights: LossWeights,
    pub estimator: EstimatorConfig,
    pub noise: NoiseDefaults,
    pub saliency: SaliencyParams,
    pub denoise: DenoiseConfig,
    pub correction: CorrectionConfig,
    /// Directory of precomputed saliency maps; computed from frames when absent.
    pub saliency_dir: Option<PathBuf>,
    pub seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            fit_weights: default_fit_weights(),
            estimator: EstimatorConfig::default(),
            noise: NoiseDefaults::default(),
            saliency: SaliencyParams::default(),
            denoise: DenoiseConfig::default(),
            correction: CorrectionConfig::default(),
            saliency_dir: None,
            seed: 0,
        }
    }
}

pub fn default_fit_weights() -> LossWeights {
    LossWeights {
        alpha_g: 0.0,
        alpha_att: 4.0,
        alpha_aa: 1.0,
        alpha_s_a: 1e-2,
        alpha_s_g: 0.0,
        alpha_t: 0.1,
        alpha_dec: 0.01,
        alpha_cap: 1e-6,
        alpha_con_g: 0.0,
        alpha_con_a: 0.0,
        // awareness carried along the flow decays at the recursive estimator's rate
        w_of: 0.8,
        ..LossWeights::default()
    }
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.fit_weights.validate()?;
        self.estimator.validate()?;
        let n = &self.noise;
        if !(n.w >= 0.0 && n.reference_sigma >= 0.0) {
            return Err(Error::Config("noise parameters must be nonnegative".into()));
        }
        let d = &self.denoise;
        if !(d.lambda >= 0.0 && d.epsilon_px > 0.0 && d.min_bandwidth > 0.0 && d.max_iterations > 0) {
            return Err(Error::Config("invalid denoise settings".into()));
        }
        let c = &self.correction;
        if c.hidden == 0 || !(c.learning_rate > 0.0 && c.target_sigma > 0.0 && c.init_scale >= 0.0 && c.weight_decay >= 0.0) {
            return Err(Error::Config("invalid correction settings".into()));
        }
        Ok(())
    }

    /// Saliency from `saliency_dir` when set, computed from the frames otherwise.
    pub fn saliency_provider(&self) -> SaliencyProvider {
        match &self.saliency_dir {
            Some(dir) => SaliencyProvider::FileBacked(dir.clone()),
            None => SaliencyProvider::Computed(self.saliency),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(serde_json::to_vec(self).expect("config serializes"));
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_ship_the_coefficient_table() {
        let c = Config::default();
        assert_eq!(c.weights.alpha_dec, 1.5e6);
        assert_eq!(c.weights.alpha_s_g, 5e10);
        assert_eq!(c.weights.eps_dec, 0.2);
        c.validate().unwrap();
    }

    #[test]
    fn round_trip_and_partial() {
        let c = Config::default();
        assert_eq!(Config::from_json(&c.to_json()).unwrap(), c);
        let partial = Config::from_json(r#"{"seed": 9, "weights": {"alpha_t": 2.0}}"#).unwrap();
        assert_eq!(partial.seed, 9);
        assert_eq!(partial.weights.alpha_t, 2.0);
        assert_eq!(partial.weights.alpha_aa, 1.0);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = Config::from_json(r#"{"weights": {"alpha_zz": 1}}"#).unwrap_err();
        assert!(err.to_string().contains("alpha_zz"), "{err}");
        let err = Config::from_json(r#"{"sede": 1}"#).unwrap_err();
        assert!(err.to_string().contains("sede"), "{err}");
    }

    #[test]
    fn hash_tracks_content() {
        let a = Config::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
