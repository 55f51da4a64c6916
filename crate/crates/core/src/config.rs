//! Experiment configuration: a flat `key = value` file with `#` comments.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::hidta::{DistanceNorm, HidtaOptions};
use crate::privacy::{PrivacyConfig, Variation};
use crate::tasks::TaskLevel;
use crate::vpg::AttachRule;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value {value:?} for {key}: {msg}")]
    BadValue {
        key: String,
        value: String,
        msg: String,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Directed transfer aggregation.
    FedGpl,
    /// Uniform parameter mean.
    FedAvg,
    /// No parameter exchange; the shared encoder is still trained.
    Local,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::FedGpl => "fedgpl",
            Mode::FedAvg => "fedavg",
            Mode::Local => "local",
        })
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fedgpl" => Ok(Mode::FedGpl),
            "fedavg" => Ok(Mode::FedAvg),
            "local" => Ok(Mode::Local),
            _ => Err("expected fedgpl, fedavg or local".into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptKind {
    Vpg,
    Gpf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// One thread per client inside a round; same end state as sequential.
    Parallel,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic {
        nodes: usize,
        classes: usize,
        feature_dim: usize,
        homophily: f64,
        avg_degree: f64,
        separation: f64,
        noise: f64,
    },
    Files {
        nodes: PathBuf,
        edges: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data: DataSource,
    /// Task levels present, each served by `clients_per_task` clients.
    pub tasks: Vec<TaskLevel>,
    pub clients_per_task: usize,
    pub partition_alpha: f64,
    pub test_fraction: f64,
    /// Cap on samples built per task level.
    pub max_samples: Option<usize>,
    /// Cap on training samples per client.
    pub few_shot: Option<usize>,
    pub kappa: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub lr: f64,
    pub encoder_lr: f64,
    pub rounds: usize,
    pub seed: u64,
    pub mode: Mode,
    pub prompt: PromptKind,
    pub alpha_n: f64,
    pub alpha_e: f64,
    pub gamma: f64,
    pub k_prime: usize,
    pub learnable_candidates: bool,
    pub attach_rule: AttachRule,
    pub freeze_encoder: bool,
    pub epsilon: Option<f64>,
    pub variation: Variation,
    pub dp_on_params: bool,
    pub hidta: HidtaOptions,
    pub execution: Execution,
    /// Stop when mean loss improves by less than this over 5 rounds; 0 disables.
    pub early_stop_tol: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataSource::Synthetic {
                nodes: 600,
                classes: 3,
                feature_dim: 16,
                homophily: 0.9,
                avg_degree: 4.0,
                separation: 1.0,
                noise: 0.5,
            },
            tasks: TaskLevel::ALL.to_vec(),
            clients_per_task: 3,
            partition_alpha: 1.0,
            test_fraction: 0.2,
            max_samples: None,
            few_shot: None,
            kappa: 2,
            hidden_dim: 100,
            layers: 2,
            lr: 0.1,
            encoder_lr: 0.1,
            rounds: 50,
            seed: 0,
            mode: Mode::FedGpl,
            prompt: PromptKind::Vpg,
            alpha_n: 0.5,
            alpha_e: 0.5,
            gamma: 0.5,
            k_prime: 10,
            learnable_candidates: false,
            attach_rule: AttachRule::Below,
            freeze_encoder: false,
            epsilon: None,
            variation: Variation::StdDev,
            dp_on_params: false,
            hidta: HidtaOptions::default(),
            execution: Execution::Sequential,
            early_stop_tol: 0.0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        msg: e.to_string(),
    })
}

fn bad(key: &str, value: &str, msg: &str) -> ConfigError {
    ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        msg: msg.into(),
    }
}

/// `0`, `none` and `off` mean "no cap".
fn parse_cap(key: &str, value: &str) -> Result<Option<usize>, ConfigError> {
    match value {
        "none" | "off" => Ok(None),
        _ => Ok(Some(parse::<usize>(key, value)?).filter(|&c| c > 0)),
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        let mut encoder_lr_set = false;
        let mut node_file = None;
        let mut edge_file = None;
        let mut use_files = false;
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(ConfigError::Syntax { line: i + 1 })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "dataset" => match value {
                    "synthetic" => use_files = false,
                    "files" => use_files = true,
                    _ => return Err(bad(key, value, "expected synthetic or files")),
                },
                "dataset.nodes" => node_file = Some(PathBuf::from(value)),
                "dataset.edges" => edge_file = Some(PathBuf::from(value)),
                "encoder_lr" => {
                    encoder_lr_set = true;
                    cfg.set(key, value)?;
                }
                _ => cfg.set(key, value)?,
            }
        }
        if !encoder_lr_set {
            cfg.encoder_lr = cfg.lr;
        }
        if use_files || node_file.is_some() || edge_file.is_some() {
            match (node_file, edge_file) {
                (Some(nodes), Some(edges)) => cfg.data = DataSource::Files { nodes, edges },
                _ => {
                    return Err(ConfigError::Invalid(
                        "dataset.nodes and dataset.edges must both be set".into(),
                    ))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one key; used by the parser and by command-line overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "synth.nodes" | "synth.classes" | "synth.feature_dim" | "synth.homophily"
            | "synth.avg_degree" | "synth.separation" | "synth.noise" => {
                let DataSource::Synthetic {
                    nodes,
                    classes,
                    feature_dim,
                    homophily,
                    avg_degree,
                    separation,
                    noise,
                } = &mut self.data
                else {
                    return Err(ConfigError::Invalid(format!(
                        "{key} set for a file dataset"
                    )));
                };
                match key {
                    "synth.nodes" => *nodes = parse(key, value)?,
                    "synth.classes" => *classes = parse(key, value)?,
                    "synth.feature_dim" => *feature_dim = parse(key, value)?,
                    "synth.homophily" => *homophily = parse(key, value)?,
                    "synth.avg_degree" => *avg_degree = parse(key, value)?,
                    "synth.separation" => *separation = parse(key, value)?,
                    _ => *noise = parse(key, value)?,
                }
            }
            "tasks" => {
                self.tasks = value
                    .split(',')
                    .map(|t| {
                        t.trim()
                            .parse::<TaskLevel>()
                            .map_err(|e| bad(key, value, &e.to_string()))
                    })
                    .collect::<Result<_, _>>()?;
                self.tasks.sort();
                self.tasks.dedup();
            }
            "clients_per_task" => self.clients_per_task = parse(key, value)?,
            "partition.alpha" => self.partition_alpha = parse(key, value)?,
            "test_fraction" => self.test_fraction = parse(key, value)?,
            "max_samples" => self.max_samples = parse_cap(key, value)?,
            "few_shot" => self.few_shot = parse_cap(key, value)?,
            "kappa" => self.kappa = parse(key, value)?,
            "d" | "hidden_dim" => self.hidden_dim = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "encoder_lr" => self.encoder_lr = parse(key, value)?,
            "rounds" => self.rounds = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "mode" => self.mode = parse(key, value)?,
            "prompt" => {
                self.prompt = match value {
                    "vpg" => PromptKind::Vpg,
                    "gpf" => PromptKind::Gpf,
                    _ => return Err(bad(key, value, "expected vpg or gpf")),
                }
            }
            "alpha_n" => self.alpha_n = parse(key, value)?,
            "alpha_e" => self.alpha_e = parse(key, value)?,
            "gamma" => self.gamma = parse(key, value)?,
            "k_prime" | "k'" => self.k_prime = parse(key, value)?,
            "learnable_candidates" => self.learnable_candidates = parse(key, value)?,
            "attach_rule" => {
                self.attach_rule = match value {
                    "below" => AttachRule::Below,
                    "at_least" => AttachRule::AtLeast,
                    _ => return Err(bad(key, value, "expected below or at_least")),
                }
            }
            "freeze_encoder" => self.freeze_encoder = parse(key, value)?,
            "privacy.epsilon" => {
                self.epsilon = match value {
                    "off" | "none" | "inf" => None,
                    _ => Some(parse(key, value)?),
                }
            }
            "privacy.variation" => {
                self.variation = match value {
                    "std" => Variation::StdDev,
                    "range" => Variation::Range,
                    _ => return Err(bad(key, value, "expected std or range")),
                }
            }
            "dp_on_params" => self.dp_on_params = parse(key, value)?,
            "hidta.norm" => {
                self.hidta.norm = match value {
                    "sigmoid" => DistanceNorm::Sigmoid,
                    "relu" => DistanceNorm::Relu,
                    _ => return Err(bad(key, value, "expected sigmoid or relu")),
                }
            }
            "hidta.direct_intra_task" => self.hidta.direct_intra_task = parse(key, value)?,
            "execution" => {
                self.execution = match value {
                    "sequential" => Execution::Sequential,
                    "parallel" => Execution::Parallel,
                    _ => return Err(bad(key, value, "expected sequential or parallel")),
                }
            }
            "early_stop_tol" => self.early_stop_tol = parse(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: &str| Err(ConfigError::Invalid(m.into()));
        if self.tasks.is_empty() {
            return fail("no task levels");
        }
        if self.clients_per_task == 0 {
            return fail("clients_per_task must be >= 1");
        }
        if !(self.test_fraction >= 0.0 && self.test_fraction < 1.0) {
            return fail("test_fraction must be in [0, 1)");
        }
        if !(self.partition_alpha > 0.0) {
            return fail("partition.alpha must be > 0");
        }
        if self.hidden_dim == 0 || self.layers == 0 {
            return fail("hidden_dim and layers must be >= 1");
        }
        if !(self.lr > 0.0) || !(self.encoder_lr >= 0.0) {
            return fail("learning rates must be positive");
        }
        for (name, a) in [("alpha_n", self.alpha_n), ("alpha_e", self.alpha_e)] {
            if !(a > 0.0 && a <= 1.0) {
                return Err(ConfigError::Invalid(format!("{name} must be in (0, 1]")));
            }
        }
        if let Some(e) = self.epsilon {
            if !(e > 0.0) {
                return fail("privacy.epsilon must be > 0");
            }
        }
        if !(self.early_stop_tol >= 0.0) {
            return fail("early_stop_tol must be >= 0");
        }
        if let DataSource::Synthetic {
            homophily, classes, ..
        } = self.data
        {
            if !(0.0..=1.0).contains(&homophily) {
                return fail("synth.homophily must be in [0, 1]");
            }
            if classes < 2 {
                return fail("synth.classes must be >= 2");
            }
        }
        Ok(())
    }

    pub fn privacy(&self) -> PrivacyConfig {
        match self.epsilon {
            Some(epsilon) => PrivacyConfig {
                epsilon,
                enabled: true,
                seed: self.seed,
                variation: self.variation,
            },
            None => PrivacyConfig {
                seed: self.seed,
                variation: self.variation,
                ..PrivacyConfig::default()
            },
        }
    }

    pub fn n_clients(&self) -> usize {
        self.tasks.len() * self.clients_per_task
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let cfg = ExperimentConfig::parse_str(
            "# comment\nmode = fedavg\nrounds=3\nlr = 0.05 # trailing\ntasks = graph,node\nprivacy.epsilon = 2\n",
        )
        .unwrap();
        assert_eq!(cfg.mode, Mode::FedAvg);
        assert_eq!(cfg.rounds, 3);
        assert_eq!(cfg.encoder_lr, 0.05);
        assert_eq!(cfg.tasks, vec![TaskLevel::Node, TaskLevel::Graph]);
        assert!(cfg.privacy().enabled);
        assert_eq!(cfg.n_clients(), 6);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            ExperimentConfig::parse_str("nonsense"),
            Err(ConfigError::Syntax { line: 1 })
        ));
        assert!(matches!(
            ExperimentConfig::parse_str("colour = red"),
            Err(ConfigError::UnknownKey(_))
        ));
        assert!(matches!(
            ExperimentConfig::parse_str("rounds = many"),
            Err(ConfigError::BadValue { .. })
        ));
        assert!(matches!(
            ExperimentConfig::parse_str("alpha_n = 0"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            ExperimentConfig::parse_str("dataset.nodes = a.tsv"),
            Err(ConfigError::Invalid(_))
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            ExperimentConfig::load(Path::new("/nonexistent/missing.cfg")),
            Err(ConfigError::Io { .. })
        ));
    }
}
