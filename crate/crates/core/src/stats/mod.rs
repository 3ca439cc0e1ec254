//! Significance testing: paired sign-flip permutation tests at several
//! granularities, Benjamini–Hochberg correction and Welch's t-test.

mod analysis;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::estimate::{hierarchy_weights, Grouped};
use crate::rng::Rng;

pub use analysis::{
    concept_token_analysis, per_concept_analysis, per_language_analysis, AnalysisReport,
    ConceptRow, Granularity, LanguageRow, PairRow,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    pub observed_mean: f64,
    pub n_permutations: usize,
    /// One-sided add-one estimate: `(1 + #{permuted ≥ observed}) / (n + 1)`.
    pub p_value: f64,
    pub unit_count: usize,
}

/// Counts sign assignments whose signed sum reaches the all-positive sum.
fn flip_test(x: &[f64], n_perm: usize, rng: &mut Rng) -> (f64, usize) {
    let observed: f64 = x.iter().sum();
    let tol = 1e-12 * x.iter().map(|v| v.abs()).sum::<f64>();
    let mut hits = 0;
    for _ in 0..n_perm {
        let mut s = 0.0;
        for chunk in x.chunks(64) {
            let bits = rng.next_u64();
            for (j, v) in chunk.iter().enumerate() {
                if bits >> j & 1 == 1 {
                    s += v;
                } else {
                    s -= v;
                }
            }
        }
        if s >= observed - tol {
            hits += 1;
        }
    }
    (observed, hits)
}

fn result(observed: f64, hits: usize, n_perm: usize, units: usize) -> PermutationResult {
    PermutationResult {
        observed_mean: observed,
        n_permutations: n_perm,
        p_value: (1 + hits) as f64 / (n_perm + 1) as f64,
        unit_count: units,
    }
}

/// Flips the sign of each value independently and compares permuted means
/// with the observed mean.
pub fn sign_flip_test(values: &[f64], n_perm: usize, rng: &mut Rng) -> Result<PermutationResult> {
    if values.is_empty() {
        return Err(Error::data("sign-flip test on an empty sample"));
    }
    let n = values.len() as f64;
    let scaled: Vec<f64> = values.iter().map(|v| v / n).collect();
    let (obs, hits) = flip_test(&scaled, n_perm, rng);
    Ok(result(obs, hits, n_perm, values.len()))
}

/// Word-level sign flips re-aggregated through language, family and
/// macroarea means. The statistic is linear in the word values, so each
/// permutation is a weighted signed sum.
pub fn hierarchical_sign_flip_test<T: Grouped>(
    items: &[T],
    value: impl Fn(&T) -> f64,
    n_perm: usize,
    rng: &mut Rng,
) -> Result<PermutationResult> {
    if items.is_empty() {
        return Err(Error::data("sign-flip test on an empty sample"));
    }
    let w = hierarchy_weights(items);
    let x: Vec<f64> = items.iter().zip(&w).map(|(it, w)| w * value(it)).collect();
    let (obs, hits) = flip_test(&x, n_perm, rng);
    Ok(result(obs, hits, n_perm, items.len()))
}

/// Sign-flip test of a weighted mean `Σ wᵢ vᵢ` with the weights given.
pub fn weighted_sign_flip_test(
    values: &[f64],
    weights: &[f64],
    n_perm: usize,
    rng: &mut Rng,
) -> Result<PermutationResult> {
    if values.is_empty() || values.len() != weights.len() {
        return Err(Error::data("weighted sign-flip test needs matching non-empty inputs"));
    }
    let x: Vec<f64> = values.iter().zip(weights).map(|(v, w)| v * w).collect();
    let (obs, hits) = flip_test(&x, n_perm, rng);
    Ok(result(obs, hits, n_perm, values.len()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct BhResult {
    /// Step-up adjusted p-values, in input order.
    pub adjusted: Vec<f64>,
    pub rejected: Vec<bool>,
}

/// Benjamini–Hochberg step-up procedure at false discovery rate `q`.
pub fn benjamini_hochberg(pvalues: &[f64], q: f64) -> Result<BhResult> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::config(format!("FDR level {q} outside (0, 1)")));
    }
    if let Some(p) = pvalues.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::data(format!("p-value {p} outside [0, 1]")));
    }
    let m = pvalues.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvalues[a].total_cmp(&pvalues[b]).then(a.cmp(&b)));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank, &i) in order.iter().enumerate().rev() {
        running = running.min(pvalues[i] * m as f64 / (rank + 1) as f64);
        adjusted[i] = running;
    }
    let rejected = adjusted.iter().map(|&a| a <= q).collect();
    Ok(BhResult { adjusted, rejected })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    /// One-sided p-value for mean(a) > mean(b).
    pub p: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Unequal-variance t-test with Welch–Satterthwaite degrees of freedom.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::data("Welch's t-test needs at least two values per sample"));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    if va == 0.0 || vb == 0.0 || !va.is_finite() || !vb.is_finite() {
        return Err(Error::numeric("Welch's t-test on a sample with zero variance"));
    }
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let t = (ma - mb) / (sa + sb).sqrt();
    let df = (sa + sb).powi(2)
        / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::numeric(e.to_string()))?;
    Ok(WelchResult { t, df, p: dist.sf(t) })
}
