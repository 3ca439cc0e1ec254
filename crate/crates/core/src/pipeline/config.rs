use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{read_file, Error, Result};
use crate::hyperopt::SearchSpace;
use crate::lexicon::{FilterPolicy, FoldScheme, InputFormat, StatusFlag};
use crate::models::ModelConfig;
use crate::synth::SyntheticSpec;

/// Declarative description of one pipeline run, read from TOML.
///
/// Exactly one data source must be given: `paths.input` (a wordlist TSV) or a
/// `[synthetic]` table. `paths.run_dir` and `workers` only control where and
/// how the run executes; they are left out of the config snapshot so that
/// they cannot change any output byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticInput>,
    #[serde(default)]
    pub folds: FoldConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub hyperopt: HyperoptConfig,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    /// Worker threads; 0 means one per available core.
    #[serde(default, skip_serializing)]
    pub workers: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    /// Alphabet file, one symbol per line. Defaults to ASJP.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alphabet: Option<PathBuf>,
    /// May be left out of the file and given on the command line instead.
    #[serde(default, skip_serializing)]
    pub run_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatName {
    #[default]
    Tsv,
    AsjpForms,
}

impl From<FormatName> for InputFormat {
    fn from(f: FormatName) -> Self {
        match f {
            FormatName::Tsv => InputFormat::Tsv,
            FormatName::AsjpForms => InputFormat::AsjpForms,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub format: FormatName,
    pub drop_loans: bool,
    pub exclude_pidgin_creole: bool,
    pub exclude_constructed: bool,
    /// Move families spanning several macroareas to their majority area
    /// before building macroarea folds.
    pub reassign_families: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            format: FormatName::Tsv,
            drop_loans: true,
            exclude_pidgin_creole: true,
            exclude_constructed: true,
            reassign_families: true,
        }
    }
}

impl DataConfig {
    pub fn filter_policy(&self) -> FilterPolicy {
        let mut p = FilterPolicy {
            drop_loans: self.drop_loans,
            ..FilterPolicy::default()
        };
        if self.exclude_pidgin_creole {
            p.exclude_flags.insert(StatusFlag::PidginCreole);
        }
        if self.exclude_constructed {
            p.exclude_flags.insert(StatusFlag::Constructed);
        }
        p
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticInput {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub spec: SyntheticSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FoldConfig {
    pub scheme: FoldScheme,
    pub seed: u64,
    /// Restrict the run to these fold indices; all folds when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub only: Option<Vec<usize>>,
}

impl Default for FoldConfig {
    fn default() -> Self {
        Self {
            scheme: FoldScheme::Macroarea,
            seed: 0,
            only: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperoptConfig {
    pub enabled: bool,
    pub budget: usize,
    pub seeds_per_config: usize,
    /// Fold whose validation set scores the trials.
    pub fold: usize,
    pub seed: u64,
    pub space: SearchSpace,
}

impl Default for HyperoptConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            budget: 30,
            seeds_per_config: 1,
            fold: 0,
            seed: 0,
            space: SearchSpace::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    /// Model pairs per fold, seeded `first_seed..first_seed + seeds`.
    pub seeds: usize,
    pub first_seed: u64,
    /// Train the conditional models on permuted concept labels.
    pub shuffle_concepts: bool,
    pub shuffle_seed: u64,
    /// Keep every trained model under `models/`.
    pub save_models: bool,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            seeds: 25,
            first_seed: 0,
            shuffle_concepts: false,
            shuffle_seed: 0,
            save_models: false,
        }
    }
}

impl EnsembleConfig {
    pub fn seed_list(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| self.first_seed + i).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub n_permutations: usize,
    pub seed: u64,
    pub concepts: bool,
    pub languages: bool,
    pub pairs: bool,
    pub q_concepts: f64,
    pub q_languages: f64,
    pub q_pairs: f64,
    pub min_joint: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            n_permutations: 100_000,
            seed: 0,
            concepts: true,
            languages: true,
            pairs: true,
            q_concepts: 0.01,
            q_languages: 0.01,
            q_pairs: 0.01,
            min_joint: 1000,
        }
    }
}

impl RunConfig {
    /// A config that reads `input` and writes to `run_dir`, all else default.
    pub fn new(input: Option<PathBuf>, run_dir: PathBuf) -> Self {
        Self {
            paths: Paths {
                input,
                alphabet: None,
                run_dir,
            },
            data: DataConfig::default(),
            synthetic: None,
            folds: FoldConfig::default(),
            model: ModelConfig::default(),
            hyperopt: HyperoptConfig::default(),
            ensemble: EnsembleConfig::default(),
            analysis: AnalysisConfig::default(),
            workers: 0,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = cfg.paths.input.as_mut() {
            rebase(p);
        }
        if let Some(p) = cfg.paths.alphabet.as_mut() {
            rebase(p);
        }
        if !cfg.paths.run_dir.as_os_str().is_empty() {
            rebase(&mut cfg.paths.run_dir);
        }
        Ok(cfg)
    }

    /// TOML snapshot written into the run directory. Execution-only settings
    /// (run directory, workers) are omitted.
    pub fn snapshot(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.paths.input, &self.synthetic) {
            (Some(_), Some(_)) => return Err(Error::config("give either paths.input or [synthetic], not both")),
            (None, None) => return Err(Error::config("no input: set paths.input or add a [synthetic] table")),
            (None, Some(s)) => s.spec.validate()?,
            (Some(_), None) => {}
        }
        self.model.validate()?;
        if self.ensemble.seeds == 0 {
            return Err(Error::config("ensemble.seeds must be at least 1"));
        }
        if self.analysis.n_permutations == 0 {
            return Err(Error::config("analysis.n_permutations must be at least 1"));
        }
        for q in [self.analysis.q_concepts, self.analysis.q_languages, self.analysis.q_pairs] {
            if !(q > 0.0 && q < 1.0) {
                return Err(Error::config(format!("q threshold {q} outside (0, 1)")));
            }
        }
        if self.hyperopt.enabled && (self.hyperopt.budget == 0 || self.hyperopt.seeds_per_config == 0) {
            return Err(Error::config("hyperopt budget and seeds_per_config must be positive"));
        }
        Ok(())
    }
}
