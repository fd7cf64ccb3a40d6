//! Flat `key=value` experiment configuration.
//!
//! One key per line, `#` starts a comment. Unknown keys are rejected by
//! name. Every run is fully determined by the resolved configuration (user
//! keys over defaults) plus nothing else; the resolved block is embedded in
//! every output file so a run can be reproduced from its own artifact.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use gossiplab::data::{load_csv, partition_dirichlet, synth_classification, FederatedDataset};
use gossiplab::model::ModelSpec;
use gossiplab::optimizer::{InitKind, LrSchedule, RecordSet, RunConfig};
use gossiplab::topology::{matrix_from_csv, TopologyKind};
use gossiplab::Real;

#[derive(Debug)]
pub enum ConfigError {
    Io(String, std::io::Error),
    Syntax { line: usize, msg: String },
    UnknownKey(String),
    MissingKey(String),
    BadValue { key: String, msg: String },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io(path, e) => write!(f, "cannot read {path}: {e}"),
            ConfigError::Syntax { line, msg } => write!(f, "config line {line}: {msg}"),
            ConfigError::UnknownKey(k) => write!(f, "unknown config key {k:?}"),
            ConfigError::MissingKey(k) => write!(f, "missing config key {k:?}"),
            ConfigError::BadValue { key, msg } => write!(f, "bad value for {key:?}: {msg}"),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Keys understood by the experiment commands (`run`, `stability`, `sweep`).
const EXPERIMENT_KEYS: &[&str] = &[
    "model",
    "dim",
    "classes",
    "separation",
    "quad_weights",
    "mlp_hidden",
    "loss_bound",
    "loss_bound_radius",
    "topology",
    "torus_rows",
    "torus_cols",
    "topology_csv",
    "m",
    "n",
    "pool_extra",
    "alpha",
    "data",
    "data_csv",
    "data_seed",
    "rounds",
    "gossip_steps",
    "lr",
    "lr_c",
    "lr_eta",
    "batch",
    "init",
    "init_scale",
    "init_seed",
    "record_every",
    "record",
    "seeds",
    "out",
    "perturb_agent",
    "perturb_index",
    "identity_perturbation",
    "sweep_q",
    "sweep_topology",
    "sweep_c",
    "sweep_m",
    "sweep_b",
    "include_centralized",
];

const DEFAULTS: &[(&str, &str)] = &[
    ("model", "logistic"),
    ("dim", "2"),
    ("classes", "2"),
    ("separation", "3.0"),
    ("quad_weights", "1"),
    ("mlp_hidden", "4"),
    ("loss_bound", "none"),
    ("loss_bound_radius", "4.0"),
    ("topology", "ring"),
    ("m", "8"),
    ("n", "50"),
    ("pool_extra", "50"),
    ("alpha", "0.3"),
    ("data", "synthetic"),
    ("data_seed", "run"),
    ("rounds", "100"),
    ("gossip_steps", "1"),
    ("lr", "decaying"),
    ("lr_c", "0.1"),
    ("lr_eta", "auto"),
    ("batch", "1"),
    ("init", "zeros"),
    ("init_scale", "1.0"),
    ("init_seed", "run"),
    ("record_every", "1"),
    ("record", "train_loss,test_loss,consensus_error"),
    ("seeds", "1"),
    ("out", "out"),
    ("perturb_agent", "random"),
    ("perturb_index", "random"),
    ("identity_perturbation", "false"),
    ("include_centralized", "true"),
];

/// Parse `key=value` text into a map, rejecting unknown keys.
pub fn parse_kv(text: &str, known: &[&str]) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax {
            line: idx + 1,
            msg: format!("expected key=value, got {line:?}"),
        })?;
        let k = k.trim();
        let v = v.trim();
        if !known.contains(&k) {
            return Err(ConfigError::UnknownKey(k.to_string()));
        }
        map.insert(k.to_string(), v.to_string());
    }
    Ok(map)
}

/// A parsed experiment configuration: raw resolved strings plus typed
/// accessors. The resolved map (defaults materialized, overrides applied) is
/// what gets embedded into outputs.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    resolved: BTreeMap<String, String>,
    base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(path.display().to_string(), e))?;
        Self::from_text(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn from_text(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let user = parse_kv(text, EXPERIMENT_KEYS)?;
        let mut resolved: BTreeMap<String, String> = DEFAULTS
            .iter()
            .map(|&(k, v)| (k.to_string(), v.to_string()))
            .collect();
        for (k, v) in user {
            resolved.insert(k, v);
        }
        let cfg = ExperimentConfig {
            resolved,
            base_dir: base_dir.to_path_buf(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn override_seeds(&mut self, seeds: &str) {
        self.resolved.insert("seeds".into(), seeds.to_string());
    }

    pub fn override_out(&mut self, out: &str) {
        self.resolved.insert("out".into(), out.to_string());
    }

    fn get(&self, key: &str) -> &str {
        self.resolved
            .get(key)
            .map(String::as_str)
            .unwrap_or_default()
    }

    fn parse_num<T: std::str::FromStr>(&self, key: &str) -> Result<T, ConfigError> {
        self.get(key).parse().map_err(|_| ConfigError::BadValue {
            key: key.into(),
            msg: format!("cannot parse {:?}", self.get(key)),
        })
    }

    fn parse_list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>, ConfigError> {
        self.get(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse().map_err(|_| ConfigError::BadValue {
                    key: key.into(),
                    msg: format!("cannot parse list element {s:?}"),
                })
            })
            .collect()
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, msg: String| {
            Err(ConfigError::BadValue {
                key: key.into(),
                msg,
            })
        };
        match self.get("model") {
            "logistic" | "quadratic" | "mlp" => {}
            other => return bad("model", format!("unknown family {other:?}")),
        }
        match self.get("topology") {
            "ring" | "fully_connected" | "exponential_graph" => {}
            "torus" => {
                if !self.resolved.contains_key("torus_rows")
                    || !self.resolved.contains_key("torus_cols")
                {
                    return Err(ConfigError::MissingKey("torus_rows/torus_cols".into()));
                }
            }
            "custom" => {
                if !self.resolved.contains_key("topology_csv") {
                    return Err(ConfigError::MissingKey("topology_csv".into()));
                }
            }
            other => return bad("topology", format!("unknown topology {other:?}")),
        }
        match self.get("data") {
            "synthetic" => {}
            "csv" => {
                if !self.resolved.contains_key("data_csv") {
                    return Err(ConfigError::MissingKey("data_csv".into()));
                }
            }
            other => return bad("data", format!("unknown data source {other:?}")),
        }
        match self.get("lr") {
            "decaying" | "constant" => {}
            other => return bad("lr", format!("unknown schedule {other:?}")),
        }
        match self.get("init") {
            "zeros" | "gaussian" => {}
            other => return bad("init", format!("unknown initializer {other:?}")),
        }
        let _: usize = self.parse_num("m")?;
        let _: usize = self.parse_num("n")?;
        let _: usize = self.parse_num("rounds")?;
        let _: usize = self.parse_num("gossip_steps")?;
        let _: usize = self.parse_num("batch")?;
        let _: Vec<u64> = self.parse_list("seeds")?;
        Ok(())
    }

    /// Resolved configuration as `key=value` lines (sorted, deterministic).
    ///
    /// The output directory is an execution detail like `--jobs`, not part
    /// of the experiment identity, so it is left out: artifacts produced in
    /// different locations stay byte-identical and replayable anywhere.
    pub fn resolved_block(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.resolved {
            if k == "out" {
                continue;
            }
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn seeds(&self) -> Result<Vec<u64>, ConfigError> {
        self.parse_list("seeds")
    }

    pub fn out_dir(&self) -> PathBuf {
        let p = PathBuf::from(self.get("out"));
        if p.is_absolute() {
            p
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn agents(&self) -> Result<usize, ConfigError> {
        self.parse_num("m")
    }

    pub fn shard_len(&self) -> Result<usize, ConfigError> {
        self.parse_num("n")
    }

    pub fn identity_perturbation(&self) -> bool {
        self.get("identity_perturbation") == "true"
    }

    /// Perturbation site for one seed: explicit 1-based indices in the
    /// config, or drawn from the seed.
    pub fn perturb_site(&self, seed: u64, m: usize, n: usize) -> Result<(usize, usize), ConfigError> {
        let mut st =
            gossiplab::rng::Stream::keyed(&[seed, gossiplab::rng::domain::PERTURB_SITE]);
        let agent = match self.get("perturb_agent") {
            "random" => st.index(m),
            s => {
                let v: usize = s.parse().map_err(|_| ConfigError::BadValue {
                    key: "perturb_agent".into(),
                    msg: format!("expected 'random' or a 1-based index, got {s:?}"),
                })?;
                if v == 0 || v > m {
                    return Err(ConfigError::BadValue {
                        key: "perturb_agent".into(),
                        msg: format!("index {v} outside 1..={m}"),
                    });
                }
                v - 1
            }
        };
        let position = match self.get("perturb_index") {
            "random" => st.index(n),
            s => {
                let v: usize = s.parse().map_err(|_| ConfigError::BadValue {
                    key: "perturb_index".into(),
                    msg: format!("expected 'random' or a 1-based index, got {s:?}"),
                })?;
                if v == 0 || v > n {
                    return Err(ConfigError::BadValue {
                        key: "perturb_index".into(),
                        msg: format!("index {v} outside 1..={n}"),
                    });
                }
                v - 1
            }
        };
        Ok((agent, position))
    }

    pub fn topology_kind(&self) -> Result<TopologyKind<Real>, ConfigError> {
        self.topology_kind_named(self.get("topology"))
    }

    pub fn topology_kind_named(&self, name: &str) -> Result<TopologyKind<Real>, ConfigError> {
        Ok(match name {
            "ring" => TopologyKind::Ring,
            "fully_connected" => TopologyKind::FullyConnected,
            "exponential_graph" => TopologyKind::ExponentialGraph,
            "torus" => TopologyKind::Torus {
                rows: self.parse_num("torus_rows")?,
                cols: self.parse_num("torus_cols")?,
            },
            "custom" => {
                let path = self.base_dir.join(self.get("topology_csv"));
                let text =
                    std::fs::read_to_string(&path).map_err(|e| ConfigError::Io(path.display().to_string(), e))?;
                let rows = matrix_from_csv(&text).map_err(|e| ConfigError::BadValue {
                    key: "topology_csv".into(),
                    msg: e.to_string(),
                })?;
                TopologyKind::Custom(rows)
            }
            other => {
                return Err(ConfigError::BadValue {
                    key: "topology".into(),
                    msg: format!("unknown topology {other:?}"),
                })
            }
        })
    }

    /// Build the dataset for one seed (and a given agent count, which sweeps
    /// may override). `data_seed = run` derives the dataset from the run
    /// seed; a fixed integer pins one dataset instance across all seeds, the
    /// usual protocol when only algorithmic randomness should vary.
    pub fn dataset(&self, seed: u64, m: usize) -> Result<FederatedDataset<Real>, ConfigError> {
        let seed = match self.get("data_seed") {
            "run" => seed,
            v => v.parse().map_err(|_| ConfigError::BadValue {
                key: "data_seed".into(),
                msg: format!("expected 'run' or an integer, got {v:?}"),
            })?,
        };
        let n: usize = self.parse_num("n")?;
        let pool = match self.get("data") {
            "synthetic" => {
                let extra: usize = self.parse_num("pool_extra")?;
                let dim: usize = self.parse_num("dim")?;
                let classes: usize = self.parse_num("classes")?;
                let sep: f64 = self.parse_num("separation")?;
                synth_classification(seed, m * n + extra, dim, classes, sep).map_err(|e| {
                    ConfigError::BadValue {
                        key: "data".into(),
                        msg: e.to_string(),
                    }
                })?
            }
            "csv" => {
                let path = self.base_dir.join(self.get("data_csv"));
                load_csv(&path).map_err(|e| ConfigError::BadValue {
                    key: "data_csv".into(),
                    msg: e.to_string(),
                })?
            }
            other => {
                return Err(ConfigError::BadValue {
                    key: "data".into(),
                    msg: format!("unknown data source {other:?}"),
                })
            }
        };
        let alpha: f64 = self.parse_num("alpha")?;
        partition_dirichlet(&pool, m, n, alpha, seed).map_err(|e| ConfigError::BadValue {
            key: "data".into(),
            msg: e.to_string(),
        })
    }

    /// Build the model; `auto` loss bounds are calibrated on the training
    /// pool of the given dataset.
    pub fn model(&self, dataset: &FederatedDataset<Real>) -> Result<ModelSpec<Real>, ConfigError> {
        let dim: usize = self.parse_num("dim")?;
        let model = match self.get("model") {
            "logistic" => ModelSpec::logistic(dim),
            "quadratic" => {
                let mut weights: Vec<Real> = self.parse_list("quad_weights")?;
                if weights.len() == 1 {
                    weights = vec![weights[0]; dim];
                }
                if weights.len() != dim {
                    return Err(ConfigError::BadValue {
                        key: "quad_weights".into(),
                        msg: format!("need 1 or {dim} entries, got {}", weights.len()),
                    });
                }
                ModelSpec::quadratic_shared(weights)
            }
            "mlp" => {
                let hidden: Vec<usize> = self.parse_list("mlp_hidden")?;
                let classes: usize = self.parse_num("classes")?;
                ModelSpec::mlp(dim, hidden, classes)
            }
            other => {
                return Err(ConfigError::BadValue {
                    key: "model".into(),
                    msg: format!("unknown family {other:?}"),
                })
            }
        };
        let pool: Vec<_> = dataset.iter_all().cloned().collect();
        match self.get("loss_bound") {
            "none" => Ok(model),
            "auto" => {
                let radius: Real = self.parse_num("loss_bound_radius")?;
                let sup = model
                    .calibrate_sup(&pool, radius)
                    .map_err(|e| ConfigError::BadValue {
                        key: "loss_bound".into(),
                        msg: e.to_string(),
                    })?;
                model.with_bound(sup).map_err(|e| ConfigError::BadValue {
                    key: "loss_bound".into(),
                    msg: e.to_string(),
                })
            }
            v => {
                let sup: Real = v.parse().map_err(|_| ConfigError::BadValue {
                    key: "loss_bound".into(),
                    msg: format!("expected none, auto, or a positive real, got {v:?}"),
                })?;
                model.with_bound(sup).map_err(|e| ConfigError::BadValue {
                    key: "loss_bound".into(),
                    msg: e.to_string(),
                })
            }
        }
    }

    fn lr_schedule(
        &self,
        c_override: Option<Real>,
        model: &ModelSpec<Real>,
        dataset: &FederatedDataset<Real>,
    ) -> Result<LrSchedule<Real>, ConfigError> {
        match self.get("lr") {
            "decaying" => {
                let c = match c_override {
                    Some(c) => c,
                    None => self.parse_num("lr_c")?,
                };
                Ok(LrSchedule::Decaying { c })
            }
            "constant" => {
                let eta = match self.get("lr_eta") {
                    "auto" => {
                        let pool: Vec<_> = dataset.iter_all().cloned().collect();
                        let beta =
                            model
                                .smoothness_constant(&pool)
                                .map_err(|e| ConfigError::BadValue {
                                    key: "lr_eta".into(),
                                    msg: e.to_string(),
                                })?;
                        1.0 / beta
                    }
                    v => v.parse().map_err(|_| ConfigError::BadValue {
                        key: "lr_eta".into(),
                        msg: format!("expected auto or a positive real, got {v:?}"),
                    })?,
                };
                Ok(LrSchedule::Constant { eta })
            }
            other => Err(ConfigError::BadValue {
                key: "lr".into(),
                msg: format!("unknown schedule {other:?}"),
            }),
        }
    }

    fn record_set(&self) -> Result<RecordSet, ConfigError> {
        let spec = self.get("record");
        if spec == "all" {
            return Ok(RecordSet::all());
        }
        if spec == "none" {
            return Ok(RecordSet::none());
        }
        let mut set = RecordSet::none();
        for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item {
                "train_loss" => set.train_loss = true,
                "test_loss" => set.test_loss = true,
                "consensus_error" => set.consensus_error = true,
                "gbar" => set.gbar = true,
                other => {
                    return Err(ConfigError::BadValue {
                        key: "record".into(),
                        msg: format!("unknown metric {other:?}"),
                    })
                }
            }
        }
        Ok(set)
    }

    /// Assemble the run configuration for one seed; sweeps may override the
    /// topology name, gossip steps, learning-rate scale, and batch.
    pub fn run_config(
        &self,
        seed: u64,
        dataset: &FederatedDataset<Real>,
        overrides: &PointOverrides,
    ) -> Result<RunConfig<Real>, ConfigError> {
        let model = self.model(dataset)?;
        let topology = match &overrides.topology {
            Some(name) => self.topology_kind_named(name)?,
            None => self.topology_kind()?,
        };
        let lr = self.lr_schedule(overrides.lr_c, &model, dataset)?;
        let init = match self.get("init") {
            "zeros" => InitKind::Zeros,
            "gaussian" => InitKind::Gaussian {
                scale: self.parse_num("init_scale")?,
                seed: match self.get("init_seed") {
                    "run" => seed,
                    v => v.parse().map_err(|_| ConfigError::BadValue {
                        key: "init_seed".into(),
                        msg: format!("expected 'run' or an integer, got {v:?}"),
                    })?,
                },
            },
            other => {
                return Err(ConfigError::BadValue {
                    key: "init".into(),
                    msg: format!("unknown initializer {other:?}"),
                })
            }
        };
        Ok(RunConfig {
            topology,
            model,
            rounds: self.parse_num("rounds")?,
            gossip_steps: overrides
                .gossip_steps
                .map_or_else(|| self.parse_num("gossip_steps"), Ok)?,
            lr,
            batch: overrides.batch.map_or_else(|| self.parse_num("batch"), Ok)?,
            seed,
            init,
            record_every: self.parse_num("record_every")?,
            record: self.record_set()?,
        })
    }

    /// Sweep axes; each falls back to the scalar key when the list key is
    /// absent.
    pub fn sweep_axes(&self) -> Result<SweepAxes, ConfigError> {
        let qs: Vec<usize> = if self.resolved.contains_key("sweep_q") {
            self.parse_list("sweep_q")?
        } else {
            vec![self.parse_num("gossip_steps")?]
        };
        let topologies: Vec<String> = if self.resolved.contains_key("sweep_topology") {
            self.get("sweep_topology")
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect()
        } else {
            vec![self.get("topology").to_string()]
        };
        let cs: Vec<String> = if self.resolved.contains_key("sweep_c") {
            self.get("sweep_c")
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect()
        } else {
            vec![self.get("lr_c").to_string()]
        };
        let ms: Vec<usize> = if self.resolved.contains_key("sweep_m") {
            self.parse_list("sweep_m")?
        } else {
            vec![self.parse_num("m")?]
        };
        let bs: Vec<usize> = if self.resolved.contains_key("sweep_b") {
            self.parse_list("sweep_b")?
        } else {
            vec![self.parse_num("batch")?]
        };
        Ok(SweepAxes {
            qs,
            topologies,
            cs,
            ms,
            bs,
            include_centralized: self.get("include_centralized") == "true",
        })
    }

    pub fn sweep_qs(&self) -> Result<Vec<usize>, ConfigError> {
        Ok(self.sweep_axes()?.qs)
    }
}

/// Per-grid-point overrides applied on top of the scalar config.
#[derive(Debug, Clone, Default)]
pub struct PointOverrides {
    pub topology: Option<String>,
    pub gossip_steps: Option<usize>,
    pub lr_c: Option<Real>,
    pub batch: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct SweepAxes {
    pub qs: Vec<usize>,
    pub topologies: Vec<String>,
    /// Learning-rate scales as config literals (kept as strings for stable
    /// file naming).
    pub cs: Vec<String>,
    pub ms: Vec<usize>,
    pub bs: Vec<usize>,
    pub include_centralized: bool,
}
