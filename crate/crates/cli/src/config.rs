//! Training configuration file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::failure::{read_file, Failure};
use crate::{TaskKind, TrainArgs};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub task: Option<TaskKind>,
    pub corpus: Option<PathBuf>,
    pub heldout: Option<PathBuf>,
    pub heldout_fraction: Option<f64>,
    pub k: Option<u64>,
    #[serde(default)]
    pub node_k: BTreeMap<usize, u64>,
    pub order: Option<usize>,
    #[serde(default)]
    pub em: EmConfig,
    pub uniform_fallback: Option<bool>,
    /// Lattice spec file for `custom`.
    pub lattice: Option<PathBuf>,
    /// Per-node count tables replacing ingested counts (`custom` only).
    #[serde(default)]
    pub count_overrides: Vec<CountOverride>,
    /// Extra declared outcomes: words for `ngram`, `slot=term` lists for `custom`.
    #[serde(default)]
    pub vocab: Vec<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmConfig {
    #[serde(default = "EmConfig::default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "EmConfig::default_tol")]
    pub tol: f64,
}

impl EmConfig {
    fn default_max_iters() -> usize {
        100
    }

    fn default_tol() -> f64 {
        1e-6
    }
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iters: Self::default_max_iters(),
            tol: Self::default_tol(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountOverride {
    pub node: usize,
    pub path: PathBuf,
}

impl TrainConfig {
    /// Reads the config named by `args` (if any); relative paths in the
    /// file resolve against its directory. Flags then override fields.
    pub fn resolve(args: &TrainArgs) -> Result<TrainConfig, Failure> {
        let mut cfg = match &args.config {
            Some(path) => {
                let text = read_file(path)?;
                let mut cfg: TrainConfig = serde_json::from_str(&text)
                    .map_err(|e| Failure::usage(format!("bad config: {e}")).in_file(path))?;
                let base = path.parent().unwrap_or(Path::new("."));
                let fix = |p: &mut Option<PathBuf>| {
                    if let Some(q) = p.as_mut() {
                        if q.is_relative() {
                            *q = base.join(&*q);
                        }
                    }
                };
                fix(&mut cfg.corpus);
                fix(&mut cfg.heldout);
                fix(&mut cfg.lattice);
                fix(&mut cfg.out);
                for o in &mut cfg.count_overrides {
                    if o.path.is_relative() {
                        o.path = base.join(&o.path);
                    }
                }
                cfg
            }
            None => TrainConfig::default(),
        };
        macro_rules! take {
            ($field:ident) => {
                if args.$field.is_some() {
                    cfg.$field = args.$field.clone();
                }
            };
        }
        take!(task);
        take!(corpus);
        take!(heldout);
        take!(heldout_fraction);
        take!(k);
        take!(order);
        take!(lattice);
        take!(seed);
        take!(out);
        if let Some(n) = args.max_iters {
            cfg.em.max_iters = n;
        }
        if let Some(t) = args.tol {
            cfg.em.tol = t;
        }
        if let Some(f) = cfg.heldout_fraction {
            if !(0.0..1.0).contains(&f) {
                return Err(Failure::usage(format!("heldout_fraction {f} is outside [0, 1)")));
            }
        }
        Ok(cfg)
    }
}
