//! Bayesian optimisation of model size and dropout.
//!
//! Points live in the unit cube `[0, 1]⁴` and map to embedding size
//! (log-uniform on [4, 1024]), hidden size (log-uniform on [32, 1024]),
//! layer count (1–4) and dropout ([0, 0.5]). After a Latin-hypercube warm-up,
//! each suggestion maximizes expected improvement under a Gaussian process
//! with a Matérn-5/2 kernel fitted to standardized observations.

mod gp;

use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{train, ModelConfig, Split};
use crate::rng::{derived, Rng};

pub use gp::{expected_improvement, GaussianProcess};

pub const DIMS: usize = 4;
pub type Point = [f64; DIMS];

/// Points closer than this (max-norm) count as duplicates.
pub const DUPLICATE_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub embedding_dim: (usize, usize),
    pub hidden_dim: (usize, usize),
    pub layers: (usize, usize),
    pub dropout: (f64, f64),
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            embedding_dim: (4, 1024),
            hidden_dim: (32, 1024),
            layers: (1, 4),
            dropout: (0.0, 0.5),
        }
    }
}

fn log_uniform(u: f64, (lo, hi): (usize, usize)) -> f64 {
    let (lo, hi) = ((lo as f64).ln(), (hi as f64).ln());
    (lo + u.clamp(0.0, 1.0) * (hi - lo)).exp()
}

impl SearchSpace {
    /// Unrounded embedding size, for distribution checks.
    pub fn embedding_continuous(&self, u: f64) -> f64 {
        log_uniform(u, self.embedding_dim)
    }

    /// Maps a unit-cube point onto a configuration, rounding integer sizes.
    pub fn to_config(&self, u: &Point, base: &ModelConfig) -> ModelConfig {
        let round = |v: f64, (lo, hi): (usize, usize)| (v.round() as usize).clamp(lo, hi);
        let (l_lo, l_hi) = self.layers;
        let span = (l_hi - l_lo + 1) as f64;
        let layers = l_lo + ((u[2].clamp(0.0, 1.0) * span).floor() as usize).min(l_hi - l_lo);
        ModelConfig {
            embedding_dim: round(log_uniform(u[0], self.embedding_dim), self.embedding_dim),
            hidden_dim: round(log_uniform(u[1], self.hidden_dim), self.hidden_dim),
            layers,
            dropout: self.dropout.0 + u[3].clamp(0.0, 1.0) * (self.dropout.1 - self.dropout.0),
            ..base.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub point: Point,
    /// Best validation cross-entropy of the trial; `None` if it failed.
    pub value: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrialHistory {
    pub trials: Vec<Trial>,
}

impl TrialHistory {
    pub fn observations(&self) -> (Vec<Point>, Vec<f64>) {
        self.trials
            .iter()
            .filter_map(|t| t.value.map(|v| (t.point, v)))
            .unzip()
    }

    pub fn contains(&self, p: &Point) -> bool {
        self.trials.iter().any(|t| {
            t.point
                .iter()
                .zip(p)
                .all(|(a, b)| (a - b).abs() <= DUPLICATE_TOL)
        })
    }

    pub fn push(&mut self, trial: Trial) -> Result<()> {
        if trial.value.is_some_and(|v| !v.is_finite()) {
            return Err(Error::numeric("non-finite trial observation"));
        }
        if self.contains(&trial.point) {
            return Err(Error::data("duplicate trial point"));
        }
        self.trials.push(trial);
        Ok(())
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.trials
            .iter()
            .enumerate()
            .filter_map(|(i, t)| t.value.map(|v| (i, v)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }

    /// Reads a JSON-lines history; a missing file is an empty history.
    pub fn load(path: &Path) -> Result<Self> {
        let file = match std::fs::File::open(path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Self::default()),
            Err(source) => {
                return Err(Error::File {
                    path: path.to_path_buf(),
                    source,
                })
            }
        };
        let mut h = Self::default();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let t: Trial = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            h.push(t)?;
        }
        Ok(h)
    }

    pub fn append_to(path: &Path, trial: &Trial) -> Result<()> {
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| Error::File {
                path: path.to_path_buf(),
                source,
            })?;
        writeln!(f, "{}", serde_json::to_string(trial)?)?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SuggestionKind {
    /// Latin-hypercube warm-up point.
    SpaceFilling,
    ExpectedImprovement,
    /// Uniform random point used when the surrogate is unusable.
    Fallback,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Suggestion {
    pub point: Point,
    pub kind: SuggestionKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub warmup: usize,
    pub candidates: usize,
    design: Vec<Point>,
}

fn latin_hypercube(n: usize, rng: &mut Rng) -> Vec<Point> {
    let mut pts = vec![[0.0; DIMS]; n];
    for d in 0..DIMS {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        for (p, s) in pts.iter_mut().zip(strata) {
            p[d] = (s as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    pts
}

fn random_point(rng: &mut Rng) -> Point {
    std::array::from_fn(|_| rng.random())
}

impl Optimizer {
    pub fn new(seed: u64) -> Self {
        let warmup = 5.max(DIMS + 1);
        Self {
            warmup,
            candidates: 10_000,
            design: latin_hypercube(warmup, &mut derived(seed, "latin-hypercube")),
        }
    }

    fn fresh_random(&self, history: &TrialHistory, rng: &mut Rng) -> Point {
        loop {
            let p = random_point(rng);
            if !history.contains(&p) {
                return p;
            }
        }
    }

    pub fn suggest(&self, history: &TrialHistory, rng: &mut Rng) -> Suggestion {
        let n = history.trials.len();
        if n < self.warmup {
            let p = self.design[n];
            if !history.contains(&p) {
                return Suggestion {
                    point: p,
                    kind: SuggestionKind::SpaceFilling,
                };
            }
        }
        let fallback = |why: &str, rng: &mut Rng| {
            warn!("surrogate unusable ({why}); suggesting a random point");
            Suggestion {
                point: self.fresh_random(history, rng),
                kind: SuggestionKind::Fallback,
            }
        };
        let (x, y) = history.observations();
        if x.len() < 2 {
            return fallback("fewer than two observations", rng);
        }
        let gp = match GaussianProcess::fit(&x, &y) {
            Ok(gp) => gp,
            Err(e) => return fallback(&e.to_string(), rng),
        };
        let best = y.iter().copied().fold(f64::INFINITY, f64::min);
        let mut top: Option<(f64, Point)> = None;
        for _ in 0..self.candidates {
            let c = random_point(rng);
            if history.contains(&c) {
                continue;
            }
            let (mu, sd) = gp.predict(&c);
            let ei = expected_improvement(mu, sd, best);
            if ei.is_finite() && top.is_none_or(|(b, _)| ei > b) {
                top = Some((ei, c));
            }
        }
        match top {
            Some((ei, p)) if ei > 0.0 => Suggestion {
                point: p,
                kind: SuggestionKind::ExpectedImprovement,
            },
            _ => fallback("expected improvement vanished everywhere", rng),
        }
    }

    /// Runs `budget` trials (counting those already in `history`). Failed
    /// evaluations are recorded as missing. `on_trial` sees every new trial.
    pub fn minimize(
        &self,
        history: &mut TrialHistory,
        budget: usize,
        seed: u64,
        mut objective: impl FnMut(&Point) -> Result<f64>,
        mut on_trial: impl FnMut(&Trial) -> Result<()>,
    ) -> Result<()> {
        if budget == 0 {
            return Err(Error::config("search budget must be at least 1"));
        }
        while history.trials.len() < budget {
            let i = history.trials.len();
            let mut rng = derived(seed, &format!("suggest/{i}"));
            let s = self.suggest(history, &mut rng);
            let value = match objective(&s.point) {
                Ok(v) if v.is_finite() => Some(v),
                Ok(v) => {
                    warn!("trial {i} produced {v}; recorded as missing");
                    None
                }
                Err(e) => {
                    warn!("trial {i} failed: {e}");
                    None
                }
            };
            let trial = Trial {
                point: s.point,
                value,
            };
            on_trial(&trial)?;
            history.push(trial)?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub best: ModelConfig,
    pub best_value: f64,
    pub history: TrialHistory,
}

/// Searches model configurations on `split`. Each trial trains
/// `seeds_per_config` models and scores the configuration by their best
/// validation cross-entropy. With `history_path`, completed trials are read
/// back first and each new trial is appended, so interrupted searches resume.
pub fn run_search(
    split: &Split,
    base: &ModelConfig,
    space: &SearchSpace,
    budget: usize,
    seeds_per_config: usize,
    seed: u64,
    history_path: Option<&Path>,
) -> Result<SearchOutcome> {
    if seeds_per_config == 0 {
        return Err(Error::config("seeds_per_config must be at least 1"));
    }
    let mut history = match history_path {
        Some(p) => TrialHistory::load(p)?,
        None => TrialHistory::default(),
    };
    let opt = Optimizer::new(seed);
    opt.minimize(
        &mut history,
        budget,
        seed,
        |u| {
            let cfg = space.to_config(u, base);
            let mut best = f64::INFINITY;
            for s in 0..seeds_per_config as u64 {
                best = best.min(train(split, &cfg, s)?.validation_xent);
            }
            info!("trial {cfg:?}: {best:.4}");
            Ok(best)
        },
        |t| match history_path {
            Some(p) => TrialHistory::append_to(p, t),
            None => Ok(()),
        },
    )?;
    let (i, best_value) = history
        .best()
        .ok_or_else(|| Error::numeric("every search trial failed"))?;
    Ok(SearchOutcome {
        best: space.to_config(&history.trials[i].point, base),
        best_value,
        history,
    })
}
