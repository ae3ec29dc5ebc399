//! Experiment configuration: a flat TOML document, validated, with defaults
//! for every omitted key. See `docs/config.md` for the schema.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::Architecture;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Fedcorr,
    Fedavg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Blobs,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    Iid,
    Noniid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Softmax,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub seed: u64,
    pub output_dir: PathBuf,

    pub dataset: DatasetKind,
    pub n_classes: usize,
    pub n_samples: usize,
    pub n_test: usize,
    pub dim: usize,
    pub cluster_std: f64,
    pub center_scale: f64,
    pub csv_path: Option<PathBuf>,
    pub csv_test_fraction: f64,

    pub n_clients: usize,
    pub partition: PartitionMode,
    pub noniid_p: f64,
    pub dirichlet_alpha: f64,

    pub rho: f64,
    pub tau: f64,

    pub model: ModelKind,
    pub hidden: usize,
    pub learning_rate: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,

    pub lid_k: usize,
    pub mixup_alpha: f64,
    pub prox_beta: f64,
    pub theta: f64,
    pub relabel_ratio: f64,
    pub kappa: f64,

    pub fraction: f64,
    pub t1: usize,
    pub t2: usize,
    pub t3: usize,
    /// Rounds for `mode = "fedavg"`; omitted means the FedCorr-equivalent
    /// communication budget.
    pub fedavg_rounds: Option<usize>,

    pub no_correction: bool,
    pub no_fraction_scheduling: bool,
    pub no_proximal: bool,
    pub no_finetuning: bool,
    pub no_usual_training: bool,
    pub no_mixup: bool,
    /// Pre-processing trains every client from the same weights and averages
    /// once per iteration instead of chaining clients.
    pub experimental_averaged_preprocessing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: Mode::Fedcorr,
            seed: 0,
            output_dir: PathBuf::from("fedcorr-out"),

            dataset: DatasetKind::Blobs,
            n_classes: 5,
            n_samples: 4000,
            n_test: 1000,
            dim: 20,
            cluster_std: 1.0,
            center_scale: 10.0,
            csv_path: None,
            csv_test_fraction: 0.2,

            n_clients: 20,
            partition: PartitionMode::Iid,
            noniid_p: 0.7,
            dirichlet_alpha: 10.0,

            rho: 0.0,
            tau: 0.0,

            model: ModelKind::Mlp,
            hidden: crate::model::DEFAULT_HIDDEN,
            learning_rate: 0.03,
            local_epochs: 5,
            batch_size: 10,
            momentum: 0.5,

            lid_k: crate::lid::DEFAULT_K,
            mixup_alpha: 1.0,
            prox_beta: 5.0,
            theta: 0.5,
            relabel_ratio: 0.5,
            kappa: 0.1,

            fraction: 0.1,
            t1: 5,
            t2: 50,
            t3: 50,
            fedavg_rounds: None,

            no_correction: false,
            no_fraction_scheduling: false,
            no_proximal: false,
            no_finetuning: false,
            no_usual_training: false,
            no_mixup: false,
            experimental_averaged_preprocessing: false,
        }
    }
}

fn in_unit(key: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::config(key, format!("{v} is outside [0, 1]")))
    }
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(key, format!("{v} must be positive")))
    }
}

fn at_least_one(key: &str, v: usize) -> Result<()> {
    if v >= 1 {
        Ok(())
    } else {
        Err(Error::config(key, "must be at least 1"))
    }
}

impl ExperimentConfig {
    /// Every key the document may contain, in declaration order.
    pub fn keys() -> Vec<String> {
        match toml::Table::try_from(ExperimentConfig {
            csv_path: Some(PathBuf::new()),
            fedavg_rounds: Some(0),
            ..Default::default()
        }) {
            Ok(table) => table.keys().cloned().collect(),
            Err(_) => Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        at_least_one("n_classes", self.n_classes)?;
        at_least_one("n_clients", self.n_clients)?;
        at_least_one("local_epochs", self.local_epochs)?;
        at_least_one("batch_size", self.batch_size)?;
        at_least_one("lid_k", self.lid_k)?;
        at_least_one("hidden", self.hidden)?;
        match self.dataset {
            DatasetKind::Blobs => {
                at_least_one("dim", self.dim)?;
                if self.n_samples < self.n_classes {
                    return Err(Error::config("n_samples", "must be at least n_classes"));
                }
                if self.n_samples < self.n_clients {
                    return Err(Error::config("n_samples", "must be at least n_clients"));
                }
                if self.n_test < self.n_classes {
                    return Err(Error::config("n_test", "must be at least n_classes"));
                }
                if !(self.cluster_std >= 0.0 && self.cluster_std.is_finite()) {
                    return Err(Error::config("cluster_std", "must be non-negative"));
                }
                positive("center_scale", self.center_scale)?;
            }
            DatasetKind::Csv => {
                if self.csv_path.is_none() {
                    return Err(Error::config("csv_path", "required when dataset = \"csv\""));
                }
                if !(self.csv_test_fraction > 0.0 && self.csv_test_fraction < 1.0) {
                    return Err(Error::config("csv_test_fraction", "must lie in (0, 1)"));
                }
            }
        }
        if !(self.noniid_p > 0.0 && self.noniid_p <= 1.0) {
            return Err(Error::config("noniid_p", "must lie in (0, 1]"));
        }
        positive("dirichlet_alpha", self.dirichlet_alpha)?;
        in_unit("rho", self.rho)?;
        if !(0.0..1.0).contains(&self.tau) {
            return Err(Error::config("tau", format!("{} is outside [0, 1)", self.tau)));
        }
        positive("learning_rate", self.learning_rate)?;
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", "must lie in [0, 1)"));
        }
        if !(self.mixup_alpha >= 0.0 && self.mixup_alpha.is_finite()) {
            return Err(Error::config("mixup_alpha", "must be non-negative (0 disables mixup)"));
        }
        if !(self.prox_beta >= 0.0 && self.prox_beta.is_finite()) {
            return Err(Error::config("prox_beta", "must be non-negative"));
        }
        in_unit("theta", self.theta)?;
        in_unit("relabel_ratio", self.relabel_ratio)?;
        in_unit("kappa", self.kappa)?;
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::config("fraction", "must lie in (0, 1]"));
        }
        if self.fraction * (self.n_clients as f64) < 1.0 {
            return Err(Error::config("fraction", "fraction * n_clients must be at least 1"));
        }
        if self.mode == Mode::Fedcorr {
            at_least_one("t1", self.t1)?;
        }
        Ok(())
    }

    pub fn architecture(&self, input_dim: usize) -> Architecture {
        match self.model {
            ModelKind::Softmax => Architecture::Softmax {
                input_dim,
                n_classes: self.n_classes,
            },
            ModelKind::Mlp => Architecture::Mlp {
                input_dim,
                hidden: self.hidden,
                n_classes: self.n_classes,
            },
        }
    }

    /// Parses a TOML document, rejecting unknown keys, then validates.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg = Self::parse_toml_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses a document, checking keys and value types but not ranges or
    /// cross-field rules, so that later overrides can complete it.
    pub fn parse_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config("<document>", e.message().to_string()))?;
        let known = Self::keys();
        if let Some(bad) = table.keys().find(|k| !known.contains(k)) {
            return Err(Error::config(bad.clone(), "unknown key"));
        }
        let cfg: ExperimentConfig = table.clone().try_into().map_err(|e: toml::de::Error| {
            let key = offending_key(&table).unwrap_or_else(|| "<document>".into());
            Error::config(key, e.message().to_string())
        })?;
        Ok(cfg)
    }

    /// The canonical resolved document: every key, in a fixed order.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config always serialises")
    }

    /// Hex SHA-256 of the resolved document with `output_dir` reset to its
    /// default, so the same experiment hashes alike wherever it is written.
    pub fn hash(&self) -> String {
        let canonical = ExperimentConfig {
            output_dir: ExperimentConfig::default().output_dir,
            ..self.clone()
        };
        hex::encode(Sha256::digest(canonical.to_toml_string().as_bytes()))
    }

    /// Overrides one key from its textual value, as a command-line flag would.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !Self::keys().iter().any(|k| k == key) {
            return Err(Error::config(key, "unknown key"));
        }
        let mut table = toml::Table::try_from(&*self).expect("config always serialises");
        let parsed = format!("v = {value}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        table.insert(key.to_string(), parsed);
        let updated: ExperimentConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(key, e.message().to_string()))?;
        *self = updated;
        Ok(())
    }
}

/// The first key whose value fails to deserialise on its own.
fn offending_key(table: &toml::Table) -> Option<String> {
    table.iter().find_map(|(k, v)| {
        let mut single = toml::Table::new();
        single.insert(k.clone(), v.clone());
        single.try_into::<ExperimentConfig>().is_err().then(|| k.clone())
    })
}

/// Reads and validates a configuration file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let cfg = load_config_unvalidated(path)?;
    cfg.validate().map_err(|e| e.context(format!("loading {}", path.display())))?;
    Ok(cfg)
}

/// Reads a configuration file without range or cross-field checks.
pub fn load_config_unvalidated(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentConfig::parse_toml_str(&text).map_err(|e| e.context(format!("loading {}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!((cfg.t1, cfg.theta, cfg.relabel_ratio, cfg.kappa), (5, 0.5, 0.5, 0.1));
        assert_eq!((cfg.prox_beta, cfg.mixup_alpha, cfg.lid_k), (5.0, 1.0, 20));
        assert_eq!((cfg.learning_rate, cfg.momentum, cfg.batch_size, cfg.local_epochs), (0.03, 0.5, 10, 5));
    }

    #[test]
    fn out_of_range_rho_names_the_key() {
        let err = ExperimentConfig::from_toml_str("rho = 1.5").unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "rho"), "{err}");
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let err = ExperimentConfig::from_toml_str("foo = 1").unwrap_err();
        assert!(matches!(&err, Error::Config { key, .. } if key == "foo"), "{err}");
    }

    #[test]
    fn type_errors_name_the_key() {
        let err = ExperimentConfig::from_toml_str("t2 = \"many\"").unwrap_err();
        assert!(err.to_string().contains("t2"), "{err}");
    }

    #[test]
    fn resolved_document_round_trips() {
        let cfg = ExperimentConfig {
            rho: 0.6,
            fedavg_rounds: Some(12),
            csv_path: Some("data.csv".into()),
            ..ExperimentConfig::default()
        };
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn set_overrides_single_keys() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("rho", "0.6").unwrap();
        cfg.set("mode", "fedavg").unwrap();
        cfg.set("no_mixup", "true").unwrap();
        cfg.set("output_dir", "/tmp/x").unwrap();
        cfg.set("fedavg_rounds", "7").unwrap();
        assert_eq!(cfg.rho, 0.6);
        assert_eq!(cfg.mode, Mode::Fedavg);
        assert!(cfg.no_mixup);
        assert_eq!(cfg.output_dir, PathBuf::from("/tmp/x"));
        assert_eq!(cfg.fedavg_rounds, Some(7));
        assert!(cfg.set("bogus", "1").is_err());
        assert!(cfg.set("t1", "abc").is_err());
    }

    #[test]
    fn keys_cover_optional_fields() {
        let keys = ExperimentConfig::keys();
        assert!(keys.contains(&"csv_path".to_string()));
        assert!(keys.contains(&"fedavg_rounds".to_string()));
        assert!(keys.contains(&"rho".to_string()));
    }
}
