use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{BlobSpec, SkewSpec, TrustPattern};
use crate::diversity::DistanceMetric;
use crate::error::{Error, Result};
use crate::exchange::DeliveryMode;
use crate::fl::{Scheme, TrainConfig};
use crate::net::{RadioModel, RssSpec};
use crate::rl::{BaselineKind, PolicyHyper};

/// Link-selection method of one sweep cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ours,
    Uniform,
    Closest,
    MostTrusted,
    None,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Ours,
        Method::Uniform,
        Method::Closest,
        Method::MostTrusted,
        Method::None,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ours => "ours",
            Method::Uniform => "uniform",
            Method::Closest => "closest",
            Method::MostTrusted => "most_trusted",
            Method::None => "none",
        }
    }

    pub fn baseline(self) -> Option<BaselineKind> {
        match self {
            Method::Ours => None,
            Method::Uniform => Some(BaselineKind::Uniform),
            Method::Closest => Some(BaselineKind::Closest),
            Method::MostTrusted => Some(BaselineKind::MostTrusted),
            Method::None => Some(BaselineKind::None),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Supervised,
    SemiSupervised,
    Unsupervised,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub devices: usize,
    /// Incoming edges per device.
    pub edges: usize,
    /// Uniform diversity threshold b.
    pub threshold: u64,
    pub l_hat: usize,
    /// Inter-cluster budget B_k of every reliable cluster.
    pub budget: u64,
    pub alpha_d: f64,
    pub rate: f64,
    pub noise: f64,
    /// Side of the square the devices are dropped on, meters.
    pub side: f64,
    pub rss: RssSpec,
    /// Redraw the RSS at every RL step.
    pub dynamic: bool,
    pub rss_resolution: usize,
    pub delivery: DeliveryMode,
    pub radio: RadioModel,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            devices: 10,
            edges: 1,
            threshold: 20,
            l_hat: 3,
            budget: 200,
            alpha_d: 0.1,
            rate: 0.8,
            noise: 0.02,
            side: 100.0,
            rss: RssSpec::default(),
            dynamic: false,
            rss_resolution: 1,
            delivery: DeliveryMode::Sampled,
            radio: RadioModel::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub mode: Mode,
    pub blobs: BlobSpec,
    pub pool_per_class: usize,
    pub test_per_class: usize,
    pub skew: SkewSpec,
    pub trust_pattern: TrustPattern,
    pub trust_sparsity: f64,
    pub labeled_fraction: f64,
    pub pca_dim: usize,
    pub k_neighbors: usize,
    pub kmeans_clusters: usize,
    pub metric: DistanceMetric,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Supervised,
            blobs: BlobSpec {
                classes: 10,
                dim: 8,
                separation: 3.0,
                noise: 1.0,
            },
            pool_per_class: 300,
            test_per_class: 100,
            skew: SkewSpec::default(),
            trust_pattern: TrustPattern::Random,
            trust_sparsity: 0.2,
            labeled_fraction: 0.2,
            pca_dim: 3,
            k_neighbors: 8,
            kmeans_clusters: 4,
            metric: DistanceMetric::Wasserstein,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Softmax,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Classifier for the (semi-)supervised modes; unsupervised runs
    /// always train an encoder.
    pub kind: ModelKind,
    pub hidden: usize,
    pub edim: usize,
    /// Accuracy that counts as "reached" in summaries.
    pub target: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Softmax,
            hidden: 32,
            edim: 4,
            target: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SweepValue {
    Int(i64),
    Float(f64),
    Text(String),
}

impl std::fmt::Display for SweepValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SweepValue::Int(v) => write!(f, "{v}"),
            SweepValue::Float(v) => write!(f, "{v}"),
            SweepValue::Text(v) => f.write_str(v),
        }
    }
}

impl SweepValue {
    fn as_f64(&self) -> Result<f64> {
        match *self {
            SweepValue::Int(v) => Ok(v as f64),
            SweepValue::Float(v) => Ok(v),
            SweepValue::Text(ref s) => Err(Error::Config(format!("expected a number, got {s:?}"))),
        }
    }

    fn as_usize(&self) -> Result<usize> {
        match *self {
            SweepValue::Int(v) if v >= 0 => Ok(v as usize),
            _ => Err(Error::Config(format!(
                "expected a nonnegative integer, got {self}"
            ))),
        }
    }
}

/// One swept axis, e.g. `fl.tau_a` over `[1, 2, 4]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub axis: String,
    pub values: Vec<SweepValue>,
}

pub const SWEEP_AXES: [&str; 9] = [
    "fl.straggler_frac",
    "fl.tau_a",
    "data.labels_per_device",
    "system.rss_resolution",
    "system.devices",
    "data.trust_pattern",
    "data.pca_dim",
    "data.kmeans_clusters",
    "system.edges",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub output: Option<PathBuf>,
    pub system: SystemConfig,
    pub data: DataConfig,
    pub rl: PolicyHyper,
    pub model: ModelConfig,
    pub fl: TrainConfig,
    pub sweep: Option<Sweep>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: "default".into(),
            seeds: vec![0, 1, 2],
            methods: Method::ALL.to_vec(),
            output: None,
            system: SystemConfig::default(),
            data: DataConfig::default(),
            rl: PolicyHyper {
                t_rl: 1000,
                ..PolicyHyper::default()
            },
            model: ModelConfig::default(),
            fl: TrainConfig {
                rounds: 40,
                ..TrainConfig::default()
            },
            sweep: None,
        }
    }
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| cfg_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| cfg_err(e.to_string()))
    }

    /// Number of partitions the exchange works on.
    pub fn partitions(&self) -> usize {
        match self.data.mode {
            Mode::Unsupervised => self.data.kmeans_clusters,
            _ => self.data.blobs.classes,
        }
    }

    /// Copy with one sweep value applied and the sweep removed.
    pub fn with_sweep_value(&self, axis: &str, value: &SweepValue) -> Result<Self> {
        let mut c = self.clone();
        c.sweep = None;
        match axis {
            "fl.straggler_frac" => c.fl.straggler_frac = value.as_f64()?,
            "fl.tau_a" => c.fl.tau_a = value.as_usize()?,
            "data.labels_per_device" => {
                let k = value.as_usize()?;
                if k == 0 {
                    return Err(cfg_err("labels_per_device must be positive"));
                }
                c.data.skew = SkewSpec {
                    dirichlet_alpha: None,
                    ..SkewSpec::uniform(k)
                };
            }
            "system.rss_resolution" => c.system.rss_resolution = value.as_usize()?,
            "system.devices" => c.system.devices = value.as_usize()?,
            "data.trust_pattern" => {
                let name = value.to_string();
                c.data.trust_pattern = toml::Value::String(name.clone())
                    .try_into()
                    .map_err(|_| cfg_err(format!("unknown trust pattern {name:?}")))?;
            }
            "data.pca_dim" => c.data.pca_dim = value.as_usize()?,
            "data.kmeans_clusters" => c.data.kmeans_clusters = value.as_usize()?,
            "system.edges" => c.system.edges = value.as_usize()?,
            other => {
                return Err(cfg_err(format!(
                    "unknown sweep axis {other:?}; valid axes: {}",
                    SWEEP_AXES.join(", ")
                )))
            }
        }
        Ok(c)
    }

    /// Concrete configurations with their scenario labels.
    pub fn expand(&self) -> Result<Vec<(String, ExperimentConfig)>> {
        match &self.sweep {
            None => Ok(vec![(self.scenario.clone(), self.clone())]),
            Some(s) => s
                .values
                .iter()
                .map(|v| {
                    Ok((
                        format!("{}/{}={v}", self.scenario, s.axis),
                        self.with_sweep_value(&s.axis, v)?,
                    ))
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return Err(cfg_err("sweep needs at least one value"));
            }
            for (_, c) in self.expand()? {
                c.validate()?;
            }
            return Ok(());
        }
        if self.seeds.is_empty() || self.methods.is_empty() {
            return Err(cfg_err("seeds and methods must be nonempty"));
        }
        let s = &self.system;
        let d = &self.data;
        if s.devices < 2 {
            return Err(cfg_err("need at least two devices"));
        }
        if s.edges == 0 || s.edges >= s.devices {
            return Err(cfg_err(format!("edges must lie in 1..{}", s.devices)));
        }
        let l = self.partitions();
        if l == 0 || s.l_hat > l {
            return Err(cfg_err(format!(
                "L_hat {} must not exceed {l} partitions",
                s.l_hat
            )));
        }
        if !(s.alpha_d > 0.0 && s.alpha_d < 1.0)
            || !(s.rate > 0.0)
            || !(s.noise > 0.0)
            || !(s.side > 0.0)
        {
            return Err(cfg_err(
                "alpha_d must lie in (0, 1); rate, noise and side must be positive",
            ));
        }
        s.rss.validate().map_err(|e| cfg_err(e.to_string()))?;
        if s.rss_resolution == 0 {
            return Err(cfg_err("rss_resolution must be positive"));
        }
        let states = (s.rss_resolution as f64).powi(s.devices as i32 - 1);
        if states > 2f64.powi(127) {
            return Err(cfg_err(
                "rss_resolution^(devices-1) overflows the state encoding",
            ));
        }
        if d.blobs.classes < 2 || d.blobs.dim == 0 || d.pool_per_class == 0 || d.test_per_class == 0
        {
            return Err(cfg_err(
                "blob data needs two classes, a dimension and nonempty pools",
            ));
        }
        d.skew
            .validate(d.blobs.classes)
            .map_err(|e| cfg_err(e.to_string()))?;
        if !(0.0..=1.0).contains(&d.trust_sparsity) {
            return Err(cfg_err("trust_sparsity must lie in [0, 1]"));
        }
        match d.mode {
            Mode::SemiSupervised => {
                if !(d.labeled_fraction > 0.0 && d.labeled_fraction <= 1.0) || d.k_neighbors == 0 {
                    return Err(cfg_err(
                        "semi-supervised runs need labeled_fraction in (0, 1] and k_neighbors > 0",
                    ));
                }
            }
            Mode::Unsupervised => {
                if d.pca_dim == 0 || d.pca_dim >= d.blobs.dim {
                    return Err(cfg_err(format!("pca_dim must lie in 1..{}", d.blobs.dim)));
                }
                if self.model.edim == 0 {
                    return Err(cfg_err("edim must be positive"));
                }
            }
            Mode::Supervised => {}
        }
        if self.model.kind == ModelKind::Mlp && self.model.hidden == 0 {
            return Err(cfg_err("hidden width must be positive"));
        }
        self.rl.validate().map_err(|e| cfg_err(e.to_string()))?;
        self.fl.validate()?;
        match self.fl.scheme {
            Scheme::Decentralized if self.fl.neighbors >= s.devices => Err(cfg_err(format!(
                "{} neighbors need more than {} devices",
                self.fl.neighbors, s.devices
            ))),
            Scheme::SemiDecentralized if !s.devices.is_multiple_of(self.fl.subset_size) => {
                Err(cfg_err(format!(
                    "{} devices cannot form subsets of {}",
                    s.devices, self.fl.subset_size
                )))
            }
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_roundtrip() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let back = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c =
            ExperimentConfig::from_toml("seeds = [4]\n[system]\ndevices = 6\n[fl]\ntau_a = 2\n")
                .unwrap();
        assert_eq!(c.seeds, vec![4]);
        assert_eq!(c.system.devices, 6);
        assert_eq!(c.system.edges, 1);
        assert_eq!(c.fl.tau_a, 2);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(ExperimentConfig::from_toml("[system]\nedges = 10\n").is_err());
        assert!(ExperimentConfig::from_toml("[system]\nl_hat = 11\n").is_err());
        assert!(ExperimentConfig::from_toml("[system]\nbogus = 1\n").is_err());
        assert!(ExperimentConfig::from_toml("[system]\nrss_resolution = 3000000\n").is_err());
        assert!(
            ExperimentConfig::from_toml("[fl]\nscheme = \"decentralized\"\nneighbors = 12\n")
                .is_err()
        );
        assert!(
            ExperimentConfig::from_toml("[sweep]\naxis = \"fl.nope\"\nvalues = [1]\n").is_err()
        );
    }

    #[test]
    fn sweep_expansion() {
        let c = ExperimentConfig::from_toml(
            "scenario = \"trust\"\n[sweep]\naxis = \"data.trust_pattern\"\nvalues = [\"random\", \"block\"]\n",
        )
        .unwrap();
        let cells = c.expand().unwrap();
        assert_eq!(cells[0].0, "trust/data.trust_pattern=random");
        assert_eq!(cells[1].1.data.trust_pattern, TrustPattern::Block);
        let c = c
            .with_sweep_value("data.labels_per_device", &SweepValue::Int(2))
            .unwrap();
        assert_eq!(c.data.skew.proportions, vec![0.5, 0.5]);
        assert!(c
            .with_sweep_value("data.trust_pattern", &SweepValue::Text("zig".into()))
            .is_err());
    }
}
