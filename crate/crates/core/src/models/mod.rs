//! Phone-level language models p(w) and p(w | v): data splits, the
//! family-weighted training loop with early stopping, scoring, and seed
//! ensembles.

use std::path::Path;
use std::sync::Arc;

use log::{debug, warn};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{read_file, Error, Result};
use crate::estimate::{hierarchical_mean_of, Grouped};
use crate::lexicon::{family_weights, Doculect, Fold, Lexicon, Macroarea, Phone};
use crate::neural::{
    adamw_step, word_backward, word_forward, AdamWConfig, AdamWState, Checkpoint, LstmParams,
    LstmShape,
};
use crate::rng::{derive_seed, derived};

const LN2: f64 = std::f64::consts::LN_2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub layers: usize,
    pub dropout: f64,
    pub conditional: bool,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embedding_dim: 64,
            hidden_dim: 128,
            layers: 1,
            dropout: 0.2,
            conditional: false,
            batch_size: 32,
            max_epochs: 100,
            patience: 5,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            grad_clip: 5.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::config(format!("{what} out of range in {self:?}")))
            }
        };
        check((4..=1024).contains(&self.embedding_dim), "embedding_dim")?;
        check((32..=1024).contains(&self.hidden_dim), "hidden_dim")?;
        check((1..=4).contains(&self.layers), "layers")?;
        check((0.0..=0.5).contains(&self.dropout), "dropout")?;
        check(self.batch_size >= 1, "batch_size")?;
        check(self.max_epochs >= 1, "max_epochs")?;
        check(self.patience >= 1, "patience")?;
        check(self.learning_rate > 0.0 && self.learning_rate.is_finite(), "learning_rate")?;
        check((0.0..1.0).contains(&(self.learning_rate * self.weight_decay)), "weight_decay")?;
        check(self.grad_clip >= 0.0, "grad_clip")?;
        Ok(())
    }

    pub fn with_conditional(&self, conditional: bool) -> Self {
        Self {
            conditional,
            ..self.clone()
        }
    }

    pub fn shape(&self, vocab: usize, n_concepts: usize) -> LstmShape {
        LstmShape {
            vocab,
            embed_dim: self.embedding_dim,
            hidden_dim: self.hidden_dim,
            layers: self.layers,
            concepts: self.conditional.then_some(n_concepts),
        }
    }

    fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}

/// Where a word comes from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Origin {
    pub doculect_id: String,
    pub language: String,
    pub family: String,
    pub macroarea: Macroarea,
}

impl Origin {
    pub fn of(d: &Doculect) -> Self {
        Self {
            doculect_id: d.doculect_id.clone(),
            language: d.language().to_string(),
            family: d.family.clone(),
            macroarea: d.macroarea,
        }
    }
}

/// One word ready for the model: eos-terminated phones, its concept and its
/// loss weight.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub origin: Arc<Origin>,
    pub concept_id: usize,
    pub phones: Vec<Phone>,
    pub weight: f64,
}

impl Grouped for Example {
    fn macroarea(&self) -> Macroarea {
        self.origin.macroarea
    }
    fn family(&self) -> &str {
        &self.origin.family
    }
    fn language(&self) -> &str {
        &self.origin.language
    }
    fn doculect_id(&self) -> &str {
        &self.origin.doculect_id
    }
    fn concept_id(&self) -> usize {
        self.concept_id
    }
}

/// Turns doculects into examples, each word weighted by the inverse size of
/// its family within `doculects`.
pub fn examples<'a>(doculects: impl IntoIterator<Item = &'a Doculect> + Clone) -> Vec<Example> {
    let weights = family_weights(doculects.clone());
    let mut out = Vec::new();
    for d in doculects {
        let origin = Arc::new(Origin::of(d));
        let w = weights[&d.doculect_id].value();
        for e in &d.entries {
            out.push(Example {
                origin: Arc::clone(&origin),
                concept_id: e.concept_id,
                phones: e.phones.clone(),
                weight: w,
            });
        }
    }
    out
}

/// Train, validation and test examples of one fold.
#[derive(Clone, Debug)]
pub struct Split {
    pub fold_index: usize,
    pub alphabet_hash: String,
    pub vocab: usize,
    pub n_concepts: usize,
    pub train: Vec<Example>,
    pub validation: Vec<Example>,
    pub test: Vec<Example>,
}

impl Split {
    pub fn from_fold(lex: &Lexicon, fold: &Fold) -> Result<Self> {
        let pick = |ids: &[String]| -> Result<Vec<&Doculect>> {
            ids.iter()
                .map(|id| {
                    lex.doculect(id)
                        .ok_or_else(|| Error::data(format!("fold refers to unknown doculect {id}")))
                })
                .collect()
        };
        let (train, validation, test) = (pick(&fold.train)?, pick(&fold.validation)?, pick(&fold.test)?);
        let split = Self {
            fold_index: fold.index,
            alphabet_hash: lex.alphabet.hash(),
            vocab: lex.alphabet.vocab_size(),
            n_concepts: lex.n_concepts(),
            train: examples(train.iter().copied()),
            validation: examples(validation.iter().copied()),
            test: examples(test.iter().copied()),
        };
        if split.train.is_empty() || split.validation.is_empty() {
            return Err(Error::data(format!(
                "fold {} has an empty training or validation set",
                fold.index
            )));
        }
        Ok(split)
    }
}

/// Permutes concept labels across the whole set, keeping the multiset of ids.
pub fn shuffle_concept_ids(examples: &mut [Example], seed: u64) {
    let mut ids: Vec<usize> = examples.iter().map(|e| e.concept_id).collect();
    ids.shuffle(&mut derived(seed, "shuffle-concepts"));
    for (e, id) in examples.iter_mut().zip(ids) {
        e.concept_id = id;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Weighted mean training loss, bits per word.
    pub train_loss: f64,
    /// Hierarchically averaged validation cross-entropy, bits per phone.
    pub validation_xent: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub params: LstmParams,
    pub config: ModelConfig,
    pub fold_id: usize,
    pub seed: u64,
    pub validation_xent: f64,
    pub training_curve: Vec<EpochStats>,
    pub alphabet_hash: String,
}

#[derive(Serialize, Deserialize)]
struct SavedModel {
    config: ModelConfig,
    fold_id: usize,
    seed: u64,
    validation_xent: f64,
    training_curve: Vec<EpochStats>,
    checkpoint: Checkpoint,
}

impl TrainedModel {
    pub fn conditional(&self) -> bool {
        self.params.shape().concepts.is_some()
    }

    fn concept_for(&self, concept: Option<usize>) -> Result<Option<usize>> {
        match (concept, self.conditional()) {
            (Some(_), false) => Err(Error::config("unconditioned model cannot use a concept")),
            (c, _) => Ok(c),
        }
    }

    /// `log₂ p(w [| v])` summed over every prediction step, and the number of
    /// steps (eos included).
    pub fn word_logprob(&self, phones: &[Phone], concept: Option<usize>) -> Result<(f64, usize)> {
        let lp = self.step_log2_probs(phones, concept)?;
        Ok((lp.iter().sum(), lp.len()))
    }

    pub fn step_log2_probs(&self, phones: &[Phone], concept: Option<usize>) -> Result<Vec<f64>> {
        let concept = self.concept_for(concept)?;
        let pass = word_forward(&self.params, phones, concept, None)?;
        Ok(pass.log_probs.iter().map(|v| v / LN2).collect())
    }

    /// Hierarchical mean per-phone cross-entropy on `examples`, using their
    /// concepts when the model is conditional.
    pub fn evaluate(&self, examples: &[Example]) -> Result<f64> {
        evaluate(&self.params, examples)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let saved = SavedModel {
            config: self.config.clone(),
            fold_id: self.fold_id,
            seed: self.seed,
            validation_xent: self.validation_xent,
            training_curve: self.training_curve.clone(),
            checkpoint: Checkpoint::new(&self.params, &self.alphabet_hash),
        };
        let text = serde_json::to_string(&saved)?;
        std::fs::write(path, text).map_err(|source| Error::File {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let saved: SavedModel = serde_json::from_slice(&bytes)?;
        Ok(Self {
            params: saved.checkpoint.params()?,
            config: saved.config,
            fold_id: saved.fold_id,
            seed: saved.seed,
            validation_xent: saved.validation_xent,
            training_curve: saved.training_curve,
            alphabet_hash: saved.checkpoint.alphabet_hash,
        })
    }
}

fn word_xent(params: &LstmParams, ex: &Example) -> Result<f64> {
    let concept = params.shape().concepts.map(|_| ex.concept_id);
    let pass = word_forward(params, &ex.phones, concept, None)?;
    Ok(-pass.total_log_prob() / LN2 / ex.phones.len() as f64)
}

fn evaluate(params: &LstmParams, examples: &[Example]) -> Result<f64> {
    let xents: Vec<f64> = examples
        .iter()
        .map(|ex| word_xent(params, ex))
        .collect::<Result<_>>()?;
    Ok(hierarchical_mean_of(examples, &xents)?.value)
}

/// Full-batch weighted loss `Σ wₙ·(−log₂ p(wₙ)) / Σ wₙ` in bits per word.
pub fn weighted_loss(params: &LstmParams, examples: &[Example]) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for ex in examples {
        let concept = params.shape().concepts.map(|_| ex.concept_id);
        let pass = word_forward(params, &ex.phones, concept, None)?;
        num += ex.weight * -pass.total_log_prob() / LN2;
        den += ex.weight;
    }
    Ok(num / den)
}

/// Gradient of [`weighted_loss`] over `batch`, accumulated into `grads`.
/// Returns the batch loss.
fn batch_gradient(
    params: &LstmParams,
    batch: &[&Example],
    dropout: f64,
    rng: &mut crate::rng::Rng,
    grads: &mut LstmParams,
) -> Result<f64> {
    let total: f64 = batch.iter().map(|e| e.weight).sum();
    let mut loss = 0.0;
    for ex in batch {
        let concept = params.shape().concepts.map(|_| ex.concept_id);
        let drop = (dropout > 0.0).then_some((dropout, &mut *rng));
        let pass = word_forward(params, &ex.phones, concept, drop)?;
        let scale = ex.weight / total;
        loss += scale * -pass.total_log_prob() / LN2;
        word_backward(params, &pass, scale / LN2, grads);
    }
    Ok(loss)
}

fn clip(grads: &mut [f64], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
}

/// Minimizes the family-weighted loss with AdamW, stopping once validation
/// cross-entropy has not improved for `patience` epochs. Returns the
/// parameters of the best validation epoch.
pub fn train(split: &Split, config: &ModelConfig, seed: u64) -> Result<TrainedModel> {
    config.validate()?;
    if split.train.is_empty() || split.validation.is_empty() {
        return Err(Error::data("training and validation sets must be non-empty"));
    }
    let kind = if config.conditional { "cond" } else { "uncond" };
    let label = |what: &str| format!("fold{}/{kind}/{what}", split.fold_index);
    let shape = config.shape(split.vocab, split.n_concepts);
    let mut params = LstmParams::init(shape, &mut derived(seed, &label("init")))?;
    let mut grads = LstmParams::zeros(shape)?;
    let mut opt = AdamWState::new(params.len());
    let opt_cfg = config.optimizer();
    let mut order_rng = derived(seed, &label("order"));
    let mut drop_rng = derived(seed, &label("dropout"));

    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let mut curve: Vec<EpochStats> = Vec::new();
    let mut best: Option<(f64, LstmParams)> = None;
    let mut stale = 0;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut order_rng);
        let mut epoch_num = 0.0;
        let mut epoch_den = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &split.train[i]).collect();
            grads.fill_zero();
            let loss = batch_gradient(&params, &batch, config.dropout, &mut drop_rng, &mut grads)?;
            if !loss.is_finite() || grads.values().iter().any(|g| !g.is_finite()) {
                let mut trajectory: Vec<f64> = curve.iter().map(|c| c.train_loss).collect();
                trajectory.push(loss);
                return Err(Error::Divergence {
                    epoch,
                    loss,
                    trajectory,
                });
            }
            let w: f64 = batch.iter().map(|e| e.weight).sum();
            epoch_num += loss * w;
            epoch_den += w;
            clip(grads.values_mut(), config.grad_clip);
            adamw_step(params.values_mut(), grads.values(), &mut opt, &opt_cfg);
        }
        let val = evaluate(&params, &split.validation)?;
        let train_loss = epoch_num / epoch_den;
        curve.push(EpochStats {
            epoch,
            train_loss,
            validation_xent: val,
        });
        if !val.is_finite() {
            return Err(Error::Divergence {
                epoch,
                loss: val,
                trajectory: curve.iter().map(|c| c.train_loss).collect(),
            });
        }
        debug!("fold {} {kind} seed {seed} epoch {epoch}: train {train_loss:.4} val {val:.4}", split.fold_index);
        if best.as_ref().is_none_or(|(b, _)| val < *b) {
            best = Some((val, params.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    let (validation_xent, params) = best.expect("at least one epoch");
    Ok(TrainedModel {
        params,
        config: config.clone(),
        fold_id: split.fold_index,
        seed,
        validation_xent,
        training_curve: curve,
        alphabet_hash: split.alphabet_hash.clone(),
    })
}

/// Which concept labels the conditional model trains on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConceptLabels {
    True,
    /// Labels permuted over the training and validation sets with this seed.
    Shuffled(u64),
}

#[derive(Clone, Debug)]
pub struct ModelPair {
    pub seed: u64,
    pub uncond: TrainedModel,
    pub cond: TrainedModel,
}

#[derive(Clone, Debug)]
pub struct SeedFailure {
    pub seed: u64,
    pub conditional: bool,
    pub message: String,
}

#[derive(Clone, Debug, Default)]
pub struct Ensemble {
    pub pairs: Vec<ModelPair>,
    pub failures: Vec<SeedFailure>,
}

impl Ensemble {
    pub fn model_pairs(&self) -> Vec<(TrainedModel, TrainedModel)> {
        self.pairs
            .iter()
            .map(|p| (p.uncond.clone(), p.cond.clone()))
            .collect()
    }
}

/// Trains an unconditioned and a conditional model for each seed on the same
/// split. Jobs run on the current rayon pool; a failing seed is reported and
/// the others continue.
pub fn train_seed_ensemble(
    split: &Split,
    config: &ModelConfig,
    seeds: &[u64],
    labels: ConceptLabels,
) -> Result<Ensemble> {
    if seeds.is_empty() {
        return Err(Error::config("ensemble needs at least one seed"));
    }
    let cond_split = match labels {
        ConceptLabels::True => None,
        ConceptLabels::Shuffled(s) => {
            let mut sp = split.clone();
            shuffle_concept_ids(&mut sp.train, s);
            shuffle_concept_ids(&mut sp.validation, derive_seed(s, "validation"));
            Some(sp)
        }
    };
    let jobs: Vec<(u64, bool)> = seeds.iter().flat_map(|&s| [(s, false), (s, true)]).collect();
    let results: Vec<Result<TrainedModel>> = jobs
        .par_iter()
        .map(|&(seed, conditional)| {
            let sp = if conditional { cond_split.as_ref().unwrap_or(split) } else { split };
            train(sp, &config.with_conditional(conditional), seed)
        })
        .collect();
    let mut ens = Ensemble::default();
    let mut it = jobs.iter().zip(results);
    while let (Some(((seed, _), u)), Some((_, c))) = (it.next(), it.next()) {
        match (u, c) {
            (Ok(uncond), Ok(cond)) => ens.pairs.push(ModelPair {
                seed: *seed,
                uncond,
                cond,
            }),
            (u, c) => {
                for (conditional, r) in [(false, u.err()), (true, c.err())] {
                    if let Some(e) = r {
                        warn!("seed {seed} ({}) failed: {e}", if conditional { "cond" } else { "uncond" });
                        ens.failures.push(SeedFailure {
                            seed: *seed,
                            conditional,
                            message: e.to_string(),
                        });
                    }
                }
            }
        }
    }
    if ens.pairs.is_empty() {
        return Err(Error::numeric(format!(
            "every seed failed: {}",
            ens.failures
                .iter()
                .map(|f| f.message.as_str())
                .collect::<Vec<_>>()
                .join("; ")
        )));
    }
    Ok(ens)
}

/// Lowest validation cross-entropy; ties go to the lower seed.
pub fn select_best(models: &[TrainedModel]) -> Option<&TrainedModel> {
    models.iter().min_by(|a, b| {
        a.validation_xent
            .total_cmp(&b.validation_xent)
            .then(a.seed.cmp(&b.seed))
    })
}

#[cfg(test)]
mod tests;
