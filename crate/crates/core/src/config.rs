//! Experiment configuration: strict JSON schema, validation, fingerprints,
//! and the bundled presets.
//!
//! Configs are plain data. Parsing rejects unknown keys everywhere so a
//! typo cannot silently fall back to a default; validation checks every
//! field's domain and cross-field consistency and names the offending field
//! in its message.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregation::{CompensationScope, NagMode};
use crate::error::{Error, Result};
use crate::model::{ModelKind, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    #[serde(rename = "fedavg")]
    FedAvg,
    #[serde(rename = "overlap")]
    Overlap,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::FedAvg => "fedavg",
            Strategy::Overlap => "overlap",
        }
    }
}

/// Where the corpus comes from: the seeded generator or an IDX image/label
/// file pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DatasetSource {
    #[serde(rename = "generate")]
    Generate { n_samples: usize, input_dim: usize, class_count: usize, cluster_spread: f64 },
    #[serde(rename = "idx")]
    Idx { images: String, labels: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DatasetSource,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Seeded fraction of the corpus held out for evaluation.
    #[serde(default = "default_holdout")]
    pub holdout_fraction: f64,
}

fn default_batch_size() -> usize {
    32
}

fn default_holdout() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    pub n_clients: usize,
    /// Dirichlet concentration over each client's class mixture; small
    /// values mean heavy label skew.
    pub label_alpha: f64,
    /// Dirichlet concentration over shard sizes; small values mean a few
    /// clients hold most of the data.
    pub size_alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Base learning rate, shared by clients and server.
    pub eta: f64,
    /// Per-round decay: the rate at round `t` is `eta / (1 + eta_decay·t)`.
    #[serde(default)]
    pub eta_decay: f64,
    /// Stale-gradient compensation strength.
    #[serde(default)]
    pub lambda: f64,
    /// Server momentum coefficient.
    #[serde(default)]
    pub beta: f64,
    #[serde(default = "default_nag_mode")]
    pub nag_mode: NagMode,
    #[serde(default = "default_compensation")]
    pub compensation: CompensationScope,
    /// Local iterations per round: the fixed count for the synchronous
    /// strategy, the adaptive cap for the overlapped one.
    pub e_max: u32,
    /// Fraction of clients sampled each synchronous round. The overlapped
    /// strategy involves every client and requires 1.0.
    #[serde(default = "default_fraction_c")]
    pub fraction_c: f64,
}

fn default_nag_mode() -> NagMode {
    NagMode::ScaledCorrection
}

fn default_compensation() -> CompensationScope {
    CompensationScope::Aggregate
}

fn default_fraction_c() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// One-way link latency in virtual seconds.
    pub latency: f64,
    /// Link bandwidth in bytes per virtual second.
    pub bandwidth: f64,
    /// Multiplicative transit jitter: each leg is scaled by a seeded factor
    /// in `[1 − jitter_frac, 1 + jitter_frac]`. Zero means a flat network.
    #[serde(default)]
    pub jitter_frac: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComputeConfig {
    /// Virtual seconds one local iteration takes.
    pub t_train: f64,
    /// Optional per-client override, one entry per client.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_client: Option<Vec<f64>>,
}

/// The five named seeds every random stream derives from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    /// Corpus generation and the holdout split.
    pub data: u64,
    /// Shard assignment.
    pub partition: u64,
    /// Model initialization.
    pub init: u64,
    /// Client subsampling and per-round batch order.
    pub sampling: u64,
    /// Network transit jitter.
    pub jitter: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub strategy: Strategy,
    pub model: ModelSpec,
    pub dataset: DatasetConfig,
    pub partition: PartitionConfig,
    pub optimizer: OptimizerConfig,
    pub network: NetworkConfig,
    pub compute: ComputeConfig,
    pub rounds: u64,
    pub seeds: Seeds,
}

impl ExperimentConfig {
    /// Parses strict JSON; unknown keys and malformed values are errors
    /// with the line and column attached.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("{}:{}: {e}", e.line(), e.column())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| {
            Error::Config(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }

    /// Learning rate at global round `t`: `eta / (1 + eta_decay · t)`.
    pub fn eta_at(&self, round: u64) -> f64 {
        self.optimizer.eta / (1.0 + self.optimizer.eta_decay * round as f64)
    }

    /// Full-field checkup; every error names the field it concerns.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;

        match &self.dataset.source {
            DatasetSource::Generate { n_samples, input_dim, class_count, cluster_spread } => {
                if *input_dim != self.model.input_dim {
                    return Err(Error::Config(format!(
                        "dataset.source.generate.input_dim ({input_dim}) must equal model.input_dim ({})",
                        self.model.input_dim
                    )));
                }
                if *class_count != self.model.output_dim {
                    return Err(Error::Config(format!(
                        "dataset.source.generate.class_count ({class_count}) must equal model.output_dim ({})",
                        self.model.output_dim
                    )));
                }
                if *n_samples < *class_count {
                    return Err(Error::Config(format!(
                        "dataset.source.generate.n_samples ({n_samples}) must be >= class_count ({class_count})"
                    )));
                }
                if !cluster_spread.is_finite() || *cluster_spread < 0.0 {
                    return Err(Error::Config(format!(
                        "dataset.source.generate.cluster_spread must be finite and >= 0, got {cluster_spread}"
                    )));
                }
            }
            DatasetSource::Idx { images, labels } => {
                if images.is_empty() || labels.is_empty() {
                    return Err(Error::Config(
                        "dataset.source.idx.images and .labels must be non-empty paths".into(),
                    ));
                }
            }
        }
        if self.dataset.batch_size == 0 {
            return Err(Error::Config("dataset.batch_size must be >= 1".into()));
        }
        let hf = self.dataset.holdout_fraction;
        if !hf.is_finite() || hf <= 0.0 || hf >= 1.0 {
            return Err(Error::Config(format!(
                "dataset.holdout_fraction must lie in (0, 1), got {hf}"
            )));
        }

        if self.partition.n_clients == 0 {
            return Err(Error::Config("partition.n_clients must be >= 1".into()));
        }
        for (name, alpha) in [
            ("partition.label_alpha", self.partition.label_alpha),
            ("partition.size_alpha", self.partition.size_alpha),
        ] {
            if !alpha.is_finite() || alpha <= 0.0 {
                return Err(Error::Config(format!("{name} must be finite and > 0, got {alpha}")));
            }
        }

        let opt = &self.optimizer;
        if !opt.eta.is_finite() || opt.eta <= 0.0 {
            return Err(Error::Config(format!(
                "optimizer.eta must be finite and > 0, got {}",
                opt.eta
            )));
        }
        if !opt.eta_decay.is_finite() || opt.eta_decay < 0.0 {
            return Err(Error::Config(format!(
                "optimizer.eta_decay must be finite and >= 0, got {}",
                opt.eta_decay
            )));
        }
        if !opt.lambda.is_finite() || opt.lambda < 0.0 {
            return Err(Error::Config(format!(
                "optimizer.lambda must be finite and >= 0, got {}",
                opt.lambda
            )));
        }
        if !opt.beta.is_finite() || !(0.0..1.0).contains(&opt.beta) {
            return Err(Error::Config(format!(
                "optimizer.beta must lie in [0, 1), got {}",
                opt.beta
            )));
        }
        if opt.e_max == 0 {
            return Err(Error::Config("optimizer.e_max must be >= 1".into()));
        }
        if !opt.fraction_c.is_finite() || opt.fraction_c <= 0.0 || opt.fraction_c > 1.0 {
            return Err(Error::Config(format!(
                "optimizer.fraction_c must lie in (0, 1], got {}",
                opt.fraction_c
            )));
        }
        if self.strategy == Strategy::Overlap && opt.fraction_c != 1.0 {
            return Err(Error::Config(format!(
                "optimizer.fraction_c must be 1.0 under the overlap strategy (every client \
                 participates every round), got {}",
                opt.fraction_c
            )));
        }

        let net = &self.network;
        if !net.latency.is_finite() || net.latency < 0.0 {
            return Err(Error::Config(format!(
                "network.latency must be finite and >= 0, got {}",
                net.latency
            )));
        }
        if !net.bandwidth.is_finite() || net.bandwidth <= 0.0 {
            return Err(Error::Config(format!(
                "network.bandwidth must be finite and > 0, got {}",
                net.bandwidth
            )));
        }
        if !net.jitter_frac.is_finite() || !(0.0..1.0).contains(&net.jitter_frac) {
            return Err(Error::Config(format!(
                "network.jitter_frac must lie in [0, 1), got {}",
                net.jitter_frac
            )));
        }

        if !self.compute.t_train.is_finite() || self.compute.t_train <= 0.0 {
            return Err(Error::Config(format!(
                "compute.t_train must be finite and > 0, got {}",
                self.compute.t_train
            )));
        }
        if let Some(per) = &self.compute.per_client {
            if per.len() != self.partition.n_clients {
                return Err(Error::Config(format!(
                    "compute.per_client has {} entries but partition.n_clients is {}",
                    per.len(),
                    self.partition.n_clients
                )));
            }
            if let Some(bad) = per.iter().find(|t| !t.is_finite() || **t <= 0.0) {
                return Err(Error::Config(format!(
                    "compute.per_client entries must be finite and > 0, got {bad}"
                )));
            }
        }

        if self.rounds == 0 {
            return Err(Error::Config("rounds must be >= 1".into()));
        }
        Ok(())
    }

    /// SHA-256 over the canonical serialization of the whole config;
    /// identical configs fingerprint identically across processes.
    pub fn fingerprint(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serialization cannot fail");
        hex_digest(canon.as_bytes())
    }

    /// Fingerprint of the learning task alone — model, dataset, partition,
    /// rounds, seeds — ignoring strategy, optimizer, and timing. Two runs
    /// are comparable exactly when these match.
    pub fn task_fingerprint(&self) -> String {
        let task = serde_json::json!({
            "model": &self.model,
            "dataset": &self.dataset,
            "partition": &self.partition,
            "rounds": self.rounds,
            "seeds": &self.seeds,
        });
        hex_digest(task.to_string().as_bytes())
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

// ── presets ─────────────────────────────────────────────────────────────
//
// Two bundled regimes, calibrated from measured per-round wall-clock times
// of a real parameter-server deployment. In both, communication dominates
// a round (t_comm > e_max · t_train), so the overlapped schedule runs at
// the communication bound while the synchronous one pays compute and
// communication serially:
//
//   light: t_train = 0.47 s,  round trip = 28.85 s  → saving ≈  7.5%
//   heavy: t_train = 9.058 s, round trip = 87.90 s  → saving ≈ 34.0%

/// Names accepted by [`preset`].
pub const PRESET_NAMES: [&str; 4] = ["light", "heavy", "light-fedavg", "heavy-fedavg"];

/// Returns a bundled configuration. `light`/`heavy` run the overlapped
/// strategy; the `-fedavg` twins are identical scenarios under the
/// synchronous baseline, ready for `compare`.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let (base, strategy) = match name {
        "light" => ("light", Strategy::Overlap),
        "heavy" => ("heavy", Strategy::Overlap),
        "light-fedavg" => ("light", Strategy::FedAvg),
        "heavy-fedavg" => ("heavy", Strategy::FedAvg),
        other => {
            return Err(Error::Config(format!(
                "unknown preset {other:?}; available: {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    let (hidden, t_train, round_trip) = match base {
        "light" => (16usize, 0.47, 28.85),
        _ => (32usize, 9.058, 87.9),
    };
    let model = ModelSpec {
        kind: ModelKind::MlpOneHidden,
        input_dim: 20,
        output_dim: 10,
        hidden_dim: Some(hidden),
        loss: crate::model::LossKind::CrossEntropy,
    };
    let payload = 4.0 * model.param_count() as f64;
    let cfg = ExperimentConfig {
        strategy,
        model,
        dataset: DatasetConfig {
            source: DatasetSource::Generate {
                n_samples: 2000,
                input_dim: 20,
                class_count: 10,
                cluster_spread: 1.0,
            },
            batch_size: 32,
            holdout_fraction: 0.1,
        },
        partition: PartitionConfig { n_clients: 10, label_alpha: 0.5, size_alpha: 100.0 },
        optimizer: OptimizerConfig {
            eta: 0.2,
            eta_decay: 0.01,
            lambda: 0.2,
            beta: 0.0,
            nag_mode: NagMode::ScaledCorrection,
            compensation: CompensationScope::Aggregate,
            e_max: 5,
            fraction_c: 1.0,
        },
        // Flat network; bandwidth chosen so upload + download = round_trip.
        network: NetworkConfig {
            latency: 0.0,
            bandwidth: 2.0 * payload / round_trip,
            jitter_frac: 0.0,
        },
        compute: ComputeConfig { t_train, per_client: None },
        rounds: 200,
        seeds: Seeds { data: 101, partition: 102, init: 103, sampling: 104, jitter: 105 },
    };
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn light() -> ExperimentConfig {
        preset("light").unwrap()
    }

    #[test]
    fn presets_validate_and_fingerprint_stably() {
        for name in PRESET_NAMES {
            let cfg = preset(name).unwrap();
            assert_eq!(cfg.fingerprint(), cfg.fingerprint());
            assert_eq!(cfg.fingerprint().len(), 64);
        }
        assert!(preset("enormous").is_err());
    }

    #[test]
    fn fingerprint_survives_reserialization() {
        let cfg = light();
        let text = cfg.to_json_pretty();
        let reparsed = ExperimentConfig::from_json_str(&text).unwrap();
        assert_eq!(cfg.fingerprint(), reparsed.fingerprint());
        assert_eq!(cfg, reparsed);
    }

    #[test]
    fn task_fingerprint_ignores_strategy_and_optimizer() {
        let a = preset("light").unwrap();
        let b = preset("light-fedavg").unwrap();
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.task_fingerprint(), b.task_fingerprint());
        let c = preset("heavy").unwrap();
        assert_ne!(a.task_fingerprint(), c.task_fingerprint());
    }

    #[test]
    fn unknown_keys_are_rejected_with_position() {
        let mut text = light().to_json_pretty();
        text = text.replacen("\"rounds\"", "\"rouns\"", 1);
        let err = ExperimentConfig::from_json_str(&text).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("rouns"), "message should name the unknown key: {msg}");
        assert!(msg.contains(':'), "message should carry line:column: {msg}");
    }

    #[test]
    fn validation_names_the_field() {
        let mut cfg = light();
        cfg.optimizer.lambda = -1.0;
        let msg = format!("{}", cfg.validate().unwrap_err());
        assert!(msg.contains("optimizer.lambda"), "{msg}");

        let mut cfg = light();
        cfg.optimizer.beta = 1.0;
        assert!(format!("{}", cfg.validate().unwrap_err()).contains("optimizer.beta"));

        let mut cfg = light();
        cfg.network.bandwidth = 0.0;
        assert!(format!("{}", cfg.validate().unwrap_err()).contains("network.bandwidth"));

        let mut cfg = light();
        cfg.dataset.holdout_fraction = 1.0;
        assert!(format!("{}", cfg.validate().unwrap_err()).contains("dataset.holdout_fraction"));

        let mut cfg = light();
        cfg.compute.per_client = Some(vec![1.0; 3]);
        assert!(format!("{}", cfg.validate().unwrap_err()).contains("compute.per_client"));
    }

    #[test]
    fn overlap_requires_full_participation() {
        let mut cfg = light();
        cfg.optimizer.fraction_c = 0.5;
        assert!(format!("{}", cfg.validate().unwrap_err()).contains("fraction_c"));
        cfg.strategy = Strategy::FedAvg;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn model_dataset_dimension_mismatch_rejected() {
        let mut cfg = light();
        cfg.model.input_dim = 21;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn eta_decay_schedule() {
        let mut cfg = light();
        cfg.optimizer.eta = 0.5;
        cfg.optimizer.eta_decay = 0.1;
        assert_eq!(cfg.eta_at(0), 0.5);
        assert!((cfg.eta_at(10) - 0.25).abs() < 1e-15);
        cfg.optimizer.eta_decay = 0.0;
        assert_eq!(cfg.eta_at(1000), 0.5);
    }
}
