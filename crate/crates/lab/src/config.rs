//! Experiment configuration: JSON files, dotted overrides and the config hash.

use std::path::Path;

use ntk_core::kernels::Quadrature;
use ntk_core::spectrum::Measure;
use ntk_core::{Activation, NetworkConfig, ParamBlocks};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::LabError;

/// Master seed used when neither the config nor the command line sets one.
pub const DEFAULT_MASTER_SEED: u64 = 20_240_601;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub threads: usize,
    pub network: NetworkSection,
    pub kernel: KernelSection,
    pub spectrum: SpectrumSection,
    pub target: TargetSection,
    pub data: DataSection,
    pub train: TrainSection,
    pub bounds: BoundsSection,
    pub rates: RatesSection,
    pub coupling: CouplingSection,
    pub weights: WeightsSection,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: DEFAULT_MASTER_SEED,
            threads: 1,
            network: NetworkSection::default(),
            kernel: KernelSection::default(),
            spectrum: SpectrumSection::default(),
            target: TargetSection::default(),
            data: DataSection::default(),
            train: TrainSection::default(),
            bounds: BoundsSection::default(),
            rates: RatesSection::default(),
            coupling: CouplingSection::default(),
            weights: WeightsSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub width: usize,
    pub dim: usize,
    pub gamma: f64,
    pub tau: f64,
    pub activation: String,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            width: 256,
            dim: 2,
            gamma: 0.5,
            tau: 1.0,
            activation: "tanh".into(),
        }
    }
}

impl NetworkSection {
    pub fn build(&self) -> Result<NetworkConfig, LabError> {
        let act = Activation::from_id(&self.activation)?;
        Ok(NetworkConfig::new(self.width, self.dim, self.gamma, self.tau, act)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSection {
    pub quadrature: Quadrature,
    /// Clip negative eigenvalues of limit-kernel Gram matrices.
    pub psd_repair: bool,
    /// Number of points for the `kernel` subcommand.
    pub points: usize,
}

impl Default for KernelSection {
    fn default() -> Self {
        KernelSection {
            quadrature: Quadrature::default(),
            psd_repair: true,
            points: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumSource {
    /// Nyström surrogate of the limit NTK.
    Ntk,
    /// Fourier basis on the circle with `μ_j = scale · j^{-decay}`.
    PowerLaw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumSection {
    pub source: SpectrumSource,
    pub grid_size: usize,
    pub measure: Measure,
    /// Seed of the atom grid; derived from the master seed when absent.
    pub seed: Option<u64>,
    pub decay: f64,
    pub scale: f64,
    /// 1-based eigenvalue range for the decay fits.
    pub fit_range: Option<(usize, usize)>,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        SpectrumSection {
            source: SpectrumSource::Ntk,
            grid_size: 4096,
            measure: Measure::UniformSphere,
            seed: None,
            decay: 1.5,
            scale: 0.5,
            fit_range: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetSection {
    pub r: f64,
    #[serde(rename = "R")]
    pub radius: f64,
}

impl Default for TargetSection {
    fn default() -> Self {
        TargetSection { r: 0.5, radius: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub n: usize,
    /// Half-width `s` of the uniform label noise.
    pub noise: f64,
    /// Label bound; `max|g| + s` when absent.
    pub c_y: Option<f64>,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            n: 256,
            noise: 0.1,
            c_y: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub alpha: f64,
    pub steps: usize,
    pub snapshot_stride: usize,
    pub blocks: ParamBlocks,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            alpha: 0.15,
            steps: 100,
            snapshot_stride: 0,
            blocks: ParamBlocks::All,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsSection {
    pub delta: f64,
    /// The unnamed constant in front of width thresholds and rates.
    pub constant: f64,
}

impl Default for BoundsSection {
    fn default() -> Self {
        BoundsSection { delta: 0.1, constant: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateMode {
    Kernel,
    Network,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RatesSection {
    pub n_grid: Vec<usize>,
    pub reps: usize,
    pub mode: RateMode,
    /// Capacity exponent; fitted from the surrogate spectrum when absent.
    pub b: Option<f64>,
    /// Multiplier applied to the neuron threshold before clamping.
    pub width_scale: f64,
    pub min_width: usize,
    pub max_width: usize,
}

impl Default for RatesSection {
    fn default() -> Self {
        RatesSection {
            n_grid: vec![256, 512, 1024, 2048, 4096, 8192],
            reps: 10,
            mode: RateMode::Kernel,
            b: None,
            width_scale: 1.0,
            min_width: 16,
            max_width: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CouplingSection {
    pub widths: Vec<usize>,
    pub seeds: usize,
    /// Number of atoms used as the held-out evaluation set.
    pub eval_points: usize,
    /// Add outer-layer-only control rows.
    pub outer_control: bool,
}

impl Default for CouplingSection {
    fn default() -> Self {
        CouplingSection {
            widths: vec![64, 128, 256, 512, 1024, 2048, 4096],
            seeds: 50,
            eval_points: 128,
            outer_control: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsSection {
    pub t_grid: Vec<usize>,
    pub reps: usize,
    pub width_scale: f64,
    pub min_width: usize,
    pub max_width: usize,
}

impl Default for WeightsSection {
    fn default() -> Self {
        WeightsSection {
            t_grid: vec![8, 16, 32, 64, 128, 256, 512],
            reps: 10,
            width_scale: 1.0,
            min_width: 64,
            max_width: 1024,
        }
    }
}

impl Config {
    /// Parses a JSON document; unknown keys are rejected.
    pub fn from_json(text: &str) -> Result<Self, LabError> {
        serde_json::from_str(text).map_err(|e| LabError::Config {
            key: unknown_key(&e.to_string()).unwrap_or_else(|| "<document>".into()),
            reason: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, LabError> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_json(&text)
    }

    /// Applies `key=value` overrides; `key` is a dotted path into the
    /// configuration and `value` is parsed as JSON, falling back to a string.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self, LabError> {
        let mut tree = serde_json::to_value(self).expect("config serializes");
        for item in overrides {
            let (key, raw) = item.split_once('=').ok_or_else(|| LabError::Config {
                key: item.clone(),
                reason: "override must have the form key=value".into(),
            })?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut tree, key, value)?;
        }
        serde_json::from_value(tree).map_err(|e| LabError::Config {
            key: overrides.join(","),
            reason: e.to_string(),
        })
    }

    /// Canonical JSON text: every field present, object keys sorted.
    pub fn canonical_json(&self) -> String {
        let v = serde_json::to_value(self).expect("config serializes");
        serde_json::to_string(&v).expect("value serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

fn set_path(tree: &mut Value, key: &str, value: Value) -> Result<(), LabError> {
    let mut node = tree;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node.as_object_mut().ok_or_else(|| LabError::Config {
            key: key.into(),
            reason: format!("`{}` is not a section", parts[..i].join(".")),
        })?;
        let child = obj.get_mut(*part).ok_or_else(|| LabError::Config {
            key: key.into(),
            reason: "unknown configuration key".into(),
        })?;
        if i + 1 == parts.len() {
            *child = value;
            return Ok(());
        }
        node = child;
    }
    Ok(())
}

fn unknown_key(message: &str) -> Option<String> {
    let rest = message.strip_prefix("unknown field `")?;
    rest.split('`').next().map(str::to_string)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_named() {
        let err = Config::from_json(r#"{"network": {"widht": 4}}"#).unwrap_err();
        match err {
            LabError::Config { key, .. } => assert_eq!(key, "widht"),
            other => panic!("{other:?}"),
        }
        let err = Config::default().with_overrides(&["network.depth=3".into()]).unwrap_err();
        assert!(matches!(err, LabError::Config { ref key, .. } if key == "network.depth"));
    }

    #[test]
    fn overrides_apply() {
        let c = Config::default()
            .with_overrides(&["network.width=8".into(), "rates.mode=network".into(), "data.c_y=2.5".into()])
            .unwrap();
        assert_eq!(c.network.width, 8);
        assert_eq!(c.rates.mode, RateMode::Network);
        assert_eq!(c.data.c_y, Some(2.5));
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = Config::default();
        assert_eq!(a.hash(), Config::from_json("{}").unwrap().hash());
        assert_eq!(a.hash().len(), 16);
        let b = a.with_overrides(&["seed=1".into()]).unwrap();
        assert_ne!(a.hash(), b.hash());
    }
}
