//! Held-out scoring and hierarchical averaging.
//!
//! Every held-out word yields one [`PmiRecord`]: its per-phone cross-entropy
//! under the unconditioned and the concept-conditioned model and their
//! difference. Entropy estimates average word values per language, then per
//! family, then per macroarea, and finally across macroareas.

mod records;

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lexicon::Macroarea;
use crate::models::{Example, TrainedModel};

pub use records::{
    read_pmi_records, read_token_records, write_pmi_records, write_token_records,
    PMI_RECORD_COLUMNS, TOKEN_RECORD_COLUMNS,
};

/// Position of a held-out item in the language/family/macroarea hierarchy.
pub trait Grouped {
    fn macroarea(&self) -> Macroarea;
    fn family(&self) -> &str;
    fn language(&self) -> &str;
    fn doculect_id(&self) -> &str;
    fn concept_id(&self) -> usize;
}

#[derive(Clone, Debug, PartialEq)]
pub struct PmiRecord {
    pub doculect_id: String,
    /// ISO code when known, otherwise the doculect id. Not part of the CSV
    /// schema; recovered from the doculect table when records are read back.
    pub language: String,
    pub family: String,
    pub macroarea: Macroarea,
    pub concept_id: usize,
    pub word_xent_uncond: f64,
    pub word_xent_cond: f64,
    pub pmi: f64,
    pub phone_count: usize,
}

impl PmiRecord {
    fn new(origin: &Example, uncond: f64, cond: f64) -> Self {
        Self {
            doculect_id: origin.origin.doculect_id.clone(),
            language: origin.origin.language.clone(),
            family: origin.origin.family.clone(),
            macroarea: origin.origin.macroarea,
            concept_id: origin.concept_id,
            word_xent_uncond: uncond,
            word_xent_cond: cond,
            pmi: uncond - cond,
            phone_count: origin.phones.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenPmiRecord {
    pub doculect_id: String,
    pub language: String,
    pub family: String,
    pub macroarea: Macroarea,
    pub concept_id: usize,
    pub position: usize,
    /// Phone index; `alphabet.len()` is eos.
    pub symbol: u16,
    /// `log₂ p(w_t | w_<t, v) − log₂ p(w_t | w_<t)`, in bits.
    pub pmi_token: f64,
}

macro_rules! impl_grouped {
    ($t:ty) => {
        impl Grouped for $t {
            fn macroarea(&self) -> Macroarea {
                self.macroarea
            }
            fn family(&self) -> &str {
                &self.family
            }
            fn language(&self) -> &str {
                &self.language
            }
            fn doculect_id(&self) -> &str {
                &self.doculect_id
            }
            fn concept_id(&self) -> usize {
                self.concept_id
            }
        }
    };
}

impl_grouped!(PmiRecord);
impl_grouped!(TokenPmiRecord);

/// A hierarchically averaged quantity with its intermediate means.
#[derive(Clone, Debug, PartialEq)]
pub struct EntropyEstimate {
    pub value: f64,
    pub per_language: BTreeMap<(Macroarea, String, String), f64>,
    pub per_family: BTreeMap<(Macroarea, String), f64>,
    pub per_macroarea: BTreeMap<Macroarea, f64>,
    pub n_words: usize,
    /// Digest of the (doculect, concept) pairs averaged over.
    pub heldout_fingerprint: String,
}

type Tree = BTreeMap<Macroarea, BTreeMap<String, BTreeMap<String, Vec<usize>>>>;

fn group_tree<T: Grouped>(items: &[T]) -> Tree {
    let mut tree: Tree = BTreeMap::new();
    for (i, it) in items.iter().enumerate() {
        tree.entry(it.macroarea())
            .or_default()
            .entry(it.family().to_string())
            .or_default()
            .entry(it.language().to_string())
            .or_default()
            .push(i);
    }
    tree
}

fn mean(xs: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = xs.len() as f64;
    xs.sum::<f64>() / n
}

pub fn heldout_fingerprint<T: Grouped>(items: &[T]) -> String {
    let mut keys: Vec<(&str, usize)> = items
        .iter()
        .map(|i| (i.doculect_id(), i.concept_id()))
        .collect();
    keys.sort_unstable();
    let mut text = String::new();
    for (d, c) in keys {
        text.push_str(d);
        text.push('\t');
        text.push_str(&c.to_string());
        text.push('\n');
    }
    crate::rng::sha256_hex(text.as_bytes())
}

/// Mean over words within each language, then over languages within each
/// family, families within each macroarea, and macroareas.
pub fn hierarchical_mean<T: Grouped>(items: &[T], value: impl Fn(&T) -> f64) -> Result<EntropyEstimate> {
    let values: Vec<f64> = items.iter().map(value).collect();
    hierarchical_mean_of(items, &values)
}

/// [`hierarchical_mean`] with the word values given alongside the items.
pub fn hierarchical_mean_of<T: Grouped>(items: &[T], values: &[f64]) -> Result<EntropyEstimate> {
    assert_eq!(items.len(), values.len());
    if items.is_empty() {
        return Err(Error::data("hierarchical mean over an empty set"));
    }
    let tree = group_tree(items);
    let mut est = EntropyEstimate {
        value: 0.0,
        per_language: BTreeMap::new(),
        per_family: BTreeMap::new(),
        per_macroarea: BTreeMap::new(),
        n_words: items.len(),
        heldout_fingerprint: heldout_fingerprint(items),
    };
    for (&area, families) in &tree {
        let mut fam_means = Vec::with_capacity(families.len());
        for (family, languages) in families {
            let mut lang_means = Vec::with_capacity(languages.len());
            for (language, idx) in languages {
                let m = mean(idx.iter().map(|&i| values[i]));
                est.per_language
                    .insert((area, family.clone(), language.clone()), m);
                lang_means.push(m);
            }
            let m = mean(lang_means.into_iter());
            est.per_family.insert((area, family.clone()), m);
            fam_means.push(m);
        }
        est.per_macroarea.insert(area, mean(fam_means.into_iter()));
    }
    est.value = mean(est.per_macroarea.values().copied());
    Ok(est)
}

/// Per-item coefficients ω with `hierarchical_mean(v) == Σ ωᵢ vᵢ`.
pub fn hierarchy_weights<T: Grouped>(items: &[T]) -> Vec<f64> {
    let tree = group_tree(items);
    let mut w = vec![0.0; items.len()];
    let n_areas = tree.len() as f64;
    for families in tree.values() {
        let n_fam = families.len() as f64;
        for languages in families.values() {
            let n_lang = languages.len() as f64;
            for idx in languages.values() {
                let omega = 1.0 / (n_areas * n_fam * n_lang * idx.len() as f64);
                for &i in idx {
                    w[i] = omega;
                }
            }
        }
    }
    w
}

/// `H(W) − H(W|V)`, signed.
pub fn mutual_information(hw: &EntropyEstimate, hwv: &EntropyEstimate) -> Result<f64> {
    if hw.heldout_fingerprint != hwv.heldout_fingerprint {
        return Err(Error::data(
            "entropy estimates were computed on different held-out sets",
        ));
    }
    Ok(hw.value - hwv.value)
}

pub fn uncertainty_coefficient(mi: f64, hw: f64) -> Result<f64> {
    if !(hw > 0.0) {
        return Err(Error::numeric(format!("entropy {hw} is not positive")));
    }
    Ok(mi / hw)
}

fn check_pair(uncond: &TrainedModel, cond: &TrainedModel) -> Result<()> {
    if uncond.alphabet_hash != cond.alphabet_hash {
        return Err(Error::AlphabetMismatch {
            expected: uncond.alphabet_hash.clone(),
            found: cond.alphabet_hash.clone(),
        });
    }
    if uncond.config.conditional || !cond.config.conditional {
        return Err(Error::config(
            "expected an unconditioned and a conditional model, in that order",
        ));
    }
    Ok(())
}

fn check_alphabet(model: &TrainedModel, hash: &str) -> Result<()> {
    if model.alphabet_hash != hash {
        return Err(Error::AlphabetMismatch {
            expected: model.alphabet_hash.clone(),
            found: hash.to_string(),
        });
    }
    Ok(())
}

/// Per-word cross-entropies (bits/phone) of one model pair on `heldout`.
fn word_xents(
    uncond: &TrainedModel,
    cond: &TrainedModel,
    heldout: &[Example],
) -> Result<Vec<(f64, f64)>> {
    heldout
        .par_iter()
        .map(|ex| {
            let n = ex.phones.len() as f64;
            let (lu, _) = uncond.word_logprob(&ex.phones, None)?;
            let (lc, _) = cond.word_logprob(&ex.phones, Some(ex.concept_id))?;
            Ok((-lu / n, -lc / n))
        })
        .collect()
}

/// One record per held-out word. `alphabet_hash` identifies the alphabet the
/// held-out words were encoded with.
pub fn score_heldout(
    uncond: &TrainedModel,
    cond: &TrainedModel,
    heldout: &[Example],
    alphabet_hash: &str,
) -> Result<Vec<PmiRecord>> {
    score_ensemble(&[(uncond.clone(), cond.clone())], heldout, alphabet_hash)
}

/// Per-word cross-entropies of every model pair, one vector per pair.
pub fn score_pairs(
    pairs: &[(TrainedModel, TrainedModel)],
    heldout: &[Example],
    alphabet_hash: &str,
) -> Result<Vec<Vec<PmiRecord>>> {
    pairs
        .iter()
        .map(|(u, c)| {
            check_pair(u, c)?;
            check_alphabet(u, alphabet_hash)?;
            Ok(heldout
                .iter()
                .zip(word_xents(u, c, heldout)?)
                .map(|(ex, (xu, xc))| PmiRecord::new(ex, xu, xc))
                .collect())
        })
        .collect()
}

/// Averages each word's two cross-entropies over per-pair scores and
/// recomputes PMI from the averages.
pub fn average_scores(per_pair: &[Vec<PmiRecord>]) -> Result<Vec<PmiRecord>> {
    let first = per_pair
        .first()
        .ok_or_else(|| Error::config("no model pairs to average"))?;
    let k = per_pair.len() as f64;
    Ok(first
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let (su, sc) = per_pair.iter().fold((0.0, 0.0), |(a, b), p| {
                (a + p[i].word_xent_uncond, b + p[i].word_xent_cond)
            });
            let (xu, xc) = (su / k, sc / k);
            PmiRecord {
                word_xent_uncond: xu,
                word_xent_cond: xc,
                pmi: xu - xc,
                ..r.clone()
            }
        })
        .collect())
}

/// Like [`score_heldout`] with each word's two cross-entropies averaged over
/// all model pairs before taking their difference.
pub fn score_ensemble(
    pairs: &[(TrainedModel, TrainedModel)],
    heldout: &[Example],
    alphabet_hash: &str,
) -> Result<Vec<PmiRecord>> {
    average_scores(&score_pairs(pairs, heldout, alphabet_hash)?)
}

/// Per-position token PMI in bits, averaged over model pairs.
pub fn score_tokens(
    pairs: &[(TrainedModel, TrainedModel)],
    heldout: &[Example],
    alphabet_hash: &str,
) -> Result<Vec<TokenPmiRecord>> {
    if pairs.is_empty() {
        return Err(Error::config("no model pairs to score with"));
    }
    for (u, c) in pairs {
        check_pair(u, c)?;
        check_alphabet(u, alphabet_hash)?;
    }
    let k = pairs.len() as f64;
    let per_word: Vec<Vec<TokenPmiRecord>> = heldout
        .par_iter()
        .map(|ex| {
            let mut acc = vec![0.0; ex.phones.len()];
            for (u, c) in pairs {
                let lu = u.step_log2_probs(&ex.phones, None)?;
                let lc = c.step_log2_probs(&ex.phones, Some(ex.concept_id))?;
                for ((a, pu), pc) in acc.iter_mut().zip(lu).zip(lc) {
                    *a += pc - pu;
                }
            }
            Ok(acc
                .into_iter()
                .enumerate()
                .map(|(t, a)| TokenPmiRecord {
                    doculect_id: ex.origin.doculect_id.clone(),
                    language: ex.origin.language.clone(),
                    family: ex.origin.family.clone(),
                    macroarea: ex.origin.macroarea,
                    concept_id: ex.concept_id,
                    position: t,
                    symbol: ex.phones[t],
                    pmi_token: a / k,
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_word.into_iter().flatten().collect())
}

/// H(W), H(W|V), MI and U from a record set.
#[derive(Clone, Debug, PartialEq)]
pub struct InformationSummary {
    pub h_w: EntropyEstimate,
    pub h_w_given_v: EntropyEstimate,
    pub mi: f64,
    pub uncertainty: f64,
}

pub fn summarize(records: &[PmiRecord]) -> Result<InformationSummary> {
    let h_w = hierarchical_mean(records, |r| r.word_xent_uncond)?;
    let h_w_given_v = hierarchical_mean(records, |r| r.word_xent_cond)?;
    let mi = mutual_information(&h_w, &h_w_given_v)?;
    let uncertainty = uncertainty_coefficient(mi, h_w.value)?;
    Ok(InformationSummary {
        h_w,
        h_w_given_v,
        mi,
        uncertainty,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn rec(area: Macroarea, fam: &str, lang: &str, doc: &str, c: usize, v: f64) -> PmiRecord {
        PmiRecord {
            doculect_id: doc.into(),
            language: lang.into(),
            family: fam.into(),
            macroarea: area,
            concept_id: c,
            word_xent_uncond: v,
            word_xent_cond: 0.0,
            pmi: v,
            phone_count: 3,
        }
    }

    #[test]
    fn single_word_is_its_own_mean() {
        let r = vec![rec(Macroarea::Africa, "f", "l", "d", 0, 2.5)];
        let e = hierarchical_mean(&r, |r| r.pmi).unwrap();
        assert_eq!(e.value, 2.5);
        assert_eq!(e.per_family[&(Macroarea::Africa, "f".into())], 2.5);
    }

    #[test]
    fn families_count_equally_regardless_of_size() {
        let mut r: Vec<_> = (0..99)
            .map(|i| rec(Macroarea::Eurasia, "big", "l1", "d1", i, 1.0))
            .collect();
        r.push(rec(Macroarea::Eurasia, "small", "l2", "d2", 0, 3.0));
        let e = hierarchical_mean(&r, |r| r.pmi).unwrap();
        assert_eq!(e.value, 2.0);
    }

    #[test]
    fn doculects_of_one_language_pool_words() {
        let r = vec![
            rec(Macroarea::Pacific, "f", "iso", "a", 0, 1.0),
            rec(Macroarea::Pacific, "f", "iso", "a", 1, 1.0),
            rec(Macroarea::Pacific, "f", "iso", "b", 0, 4.0),
            rec(Macroarea::Pacific, "f", "other", "c", 0, 0.0),
        ];
        let e = hierarchical_mean(&r, |r| r.pmi).unwrap();
        assert_eq!(e.value, 1.0);
    }

    #[test]
    fn weights_reproduce_the_mean() {
        let r = vec![
            rec(Macroarea::Africa, "f", "l", "d", 0, 0.3),
            rec(Macroarea::Africa, "g", "l", "d2", 0, -1.0),
            rec(Macroarea::Africa, "g", "m", "d3", 1, 2.0),
            rec(Macroarea::Americas, "h", "n", "d4", 0, 5.0),
        ];
        let w = hierarchy_weights(&r);
        let lin: f64 = w.iter().zip(&r).map(|(w, r)| w * r.pmi).sum();
        let e = hierarchical_mean(&r, |r| r.pmi).unwrap();
        assert!((lin - e.value).abs() < 1e-15);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mi_requires_matching_heldout_sets() {
        let a = vec![rec(Macroarea::Africa, "f", "l", "d", 0, 1.0)];
        let b = vec![rec(Macroarea::Africa, "f", "l", "d", 1, 1.0)];
        let ea = hierarchical_mean(&a, |r| r.pmi).unwrap();
        let eb = hierarchical_mean(&b, |r| r.pmi).unwrap();
        assert!(mutual_information(&ea, &eb).is_err());
        assert_eq!(mutual_information(&ea, &ea).unwrap(), 0.0);
    }

    #[test]
    fn uncertainty_coefficient_cases() {
        assert_eq!(uncertainty_coefficient(0.0, 3.0).unwrap(), 0.0);
        let u = uncertainty_coefficient(0.012, 3.857).unwrap();
        assert!((u * 100.0 - 0.311).abs() < 5e-4);
        assert!(uncertainty_coefficient(0.1, 0.0).is_err());
    }

    #[test]
    fn empty_set_is_an_error() {
        let r: Vec<PmiRecord> = Vec::new();
        assert!(hierarchical_mean(&r, |r| r.pmi).is_err());
    }
}
