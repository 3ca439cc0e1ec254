//! Synthetic lexica with exactly computable form–meaning mutual information.
//!
//! Every concept owns a first-order Markov chain over the phone symbols plus
//! eos. All chains share one set of symbol-to-symbol rows; a planted concept
//! differs only in its start distribution, which is pulled towards a
//! concept-specific target symbol. Unplanted concepts start from the average
//! of the planted start rows, so the marginal p(w) equals the average planted
//! distribution and unplanted concepts carry exactly zero information.

mod oracle;

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lexicon::{Alphabet, Doculect, Lexicon, Macroarea, Phone, WordEntry, ASJP_SYMBOLS};
use crate::rng::{derived, Rng};

pub use oracle::{true_mi_bruteforce, OracleResult};

const ROW_TOL: f64 = 1e-12;

/// Generating parameters of a synthetic lexicon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Number of phone symbols (eos excluded); the first symbols of the ASJP
    /// alphabet are used.
    pub alphabet_size: usize,
    pub concepts: usize,
    /// The first `planted` concepts carry signal.
    pub planted: usize,
    /// Weight of the target symbol in a planted concept's start row.
    pub strength: f64,
    pub families: usize,
    pub languages_per_family: usize,
    /// Families are dealt round-robin over the first `macroareas` areas.
    pub macroareas: usize,
    /// Probability of ending the word after each symbol.
    pub eos_prob: f64,
    /// Concentration of the Dirichlet draws for the shared rows.
    pub dirichlet_alpha: f64,
    /// Seed for the chains themselves; the lexicon sample uses its own seed.
    pub chain_seed: u64,
    /// Largest admissible expected word length.
    pub max_expected_length: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            alphabet_size: 41,
            concepts: 20,
            planted: 5,
            strength: 0.9,
            families: 40,
            languages_per_family: 10,
            macroareas: 4,
            eos_prob: 0.25,
            dirichlet_alpha: 0.3,
            chain_seed: 0,
            max_expected_length: 50.0,
        }
    }
}

/// A first-order chain over `n` symbols. Rows have `n + 1` entries, the last
/// being eos. The start row gives eos zero probability, so words are
/// non-empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkovChain {
    pub start: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
}

impl MarkovChain {
    pub fn n_symbols(&self) -> usize {
        self.rows.len()
    }

    /// Row for `state`; `None` is the start state.
    pub fn row(&self, state: Option<usize>) -> &[f64] {
        match state {
            None => &self.start,
            Some(s) => &self.rows[s],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_symbols();
        if n == 0 || n > crate::lexicon::MAX_SYMBOLS {
            return Err(Error::config(format!("chain over {n} symbols")));
        }
        for (i, row) in std::iter::once(&self.start).chain(&self.rows).enumerate() {
            if row.len() != n + 1 {
                return Err(Error::config(format!("row {i} has {} entries, expected {}", row.len(), n + 1)));
            }
            if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(Error::config(format!("row {i} has a negative or non-finite entry")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_TOL * (n + 1) as f64 {
                return Err(Error::config(format!("row {i} sums to {s}")));
            }
        }
        if self.start[n] != 0.0 {
            return Err(Error::config("start row may not emit eos"));
        }
        Ok(())
    }

    /// Expected number of prediction steps (symbols plus eos), from the
    /// fundamental matrix of the symbol-to-symbol block.
    pub fn expected_length(&self) -> Result<f64> {
        let visits = self.expected_visits()?;
        Ok(visits.iter().sum::<f64>() + 1.0)
    }

    /// Expected number of emissions of each symbol per word.
    pub fn expected_visits(&self) -> Result<Vec<f64>> {
        let n = self.n_symbols();
        let q = DMatrix::from_fn(n, n, |i, j| self.rows[i][j]);
        let m = DMatrix::<f64>::identity(n, n) - q;
        let start = DVector::from_iterator(n, self.start[..n].iter().copied());
        // visits = start · (I − Q)⁻¹, i.e. solve (I − Q)ᵀ x = start.
        let visits = m
            .transpose()
            .lu()
            .solve(&start)
            .ok_or_else(|| Error::config("chain never terminates"))?;
        if visits.iter().any(|v| !v.is_finite() || *v < -1e-9) {
            return Err(Error::config("chain never terminates"));
        }
        Ok(visits.iter().map(|v| v.max(0.0)).collect())
    }

    fn sample(&self, rng: &mut Rng, cap: usize) -> Result<Vec<Phone>> {
        let n = self.n_symbols();
        let mut out = Vec::new();
        let mut state = None;
        loop {
            let row = self.row(state);
            let x = sample_index(row, rng);
            out.push(x as Phone);
            if x == n {
                return Ok(out);
            }
            if out.len() > cap {
                return Err(Error::config(format!("word exceeded {cap} phones; chain does not terminate")));
            }
            state = Some(x);
        }
    }
}

fn sample_index(p: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    // Rounding left u above the cumulative total: take the last non-zero.
    p.iter().rposition(|&pi| pi > 0.0).unwrap_or(p.len() - 1)
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(format!("synthetic spec: {m}")));
        if !(1..=crate::lexicon::MAX_SYMBOLS).contains(&self.alphabet_size) {
            return bad("alphabet_size must lie in 1..=41");
        }
        if self.concepts == 0 || self.planted > self.concepts {
            return bad("need 0 <= planted <= concepts and concepts >= 1");
        }
        if self.planted > self.alphabet_size {
            return bad("more planted concepts than symbols");
        }
        if !(0.0..=1.0).contains(&self.strength) {
            return bad("strength must lie in [0, 1]");
        }
        if self.families == 0 || self.languages_per_family == 0 {
            return bad("need at least one family and one language per family");
        }
        if !(1..=4).contains(&self.macroareas) {
            return bad("macroareas must lie in 1..=4");
        }
        if !(self.eos_prob > 0.0 && self.eos_prob < 1.0) {
            return bad("eos_prob must lie in (0, 1)");
        }
        if !(self.dirichlet_alpha > 0.0) {
            return bad("dirichlet_alpha must be positive");
        }
        Ok(())
    }

    pub fn alphabet(&self) -> Alphabet {
        Alphabet::new(ASJP_SYMBOLS[..self.alphabet_size].iter().copied()).expect("prefix of ASJP")
    }

    pub fn concept_names(&self) -> Vec<String> {
        (0..self.concepts).map(|c| format!("c{c:02}")).collect()
    }

    pub fn planted_concepts(&self) -> BTreeSet<usize> {
        (0..self.planted).collect()
    }

    /// Materializes one chain per concept.
    pub fn chains(&self) -> Result<Vec<MarkovChain>> {
        self.validate()?;
        let n = self.alphabet_size;
        let mut rng = derived(self.chain_seed, "synthetic-chains");
        let dirichlet = |rng: &mut Rng| -> Vec<f64> {
            if n == 1 {
                return vec![1.0];
            }
            // Normalized Gamma(α, 1) draws are Dirichlet(α, …, α).
            let gamma = Gamma::new(self.dirichlet_alpha, 1.0).expect("positive concentration");
            let g: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
            let total: f64 = g.iter().sum();
            g.into_iter().map(|x| x / total).collect()
        };
        let base_start = dirichlet(&mut rng);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let mut r: Vec<f64> = dirichlet(&mut rng)
                    .into_iter()
                    .map(|p| p * (1.0 - self.eos_prob))
                    .collect();
                r.push(self.eos_prob);
                r
            })
            .collect();
        let mut symbols: Vec<usize> = (0..n).collect();
        symbols.shuffle(&mut rng);
        let targets = &symbols[..self.planted];

        let s = self.strength;
        let planted_starts: Vec<Vec<f64>> = targets
            .iter()
            .map(|&t| {
                let mut row: Vec<f64> = base_start.iter().map(|p| (1.0 - s) * p).collect();
                row[t] += s;
                row.push(0.0);
                row
            })
            .collect();
        let background: Vec<f64> = if planted_starts.is_empty() {
            let mut b = base_start.clone();
            b.push(0.0);
            b
        } else {
            (0..=n)
                .map(|i| {
                    let col: Vec<f64> = planted_starts.iter().map(|r| r[i]).collect();
                    if col.iter().all(|&v| v == col[0]) {
                        col[0]
                    } else {
                        col.iter().sum::<f64>() / col.len() as f64
                    }
                })
                .collect()
        };
        let chains: Vec<MarkovChain> = (0..self.concepts)
            .map(|c| MarkovChain {
                start: planted_starts.get(c).cloned().unwrap_or_else(|| background.clone()),
                rows: rows.clone(),
            })
            .collect();
        for ch in &chains {
            ch.validate()?;
            let len = ch.expected_length()?;
            if len > self.max_expected_length {
                return Err(Error::config(format!(
                    "expected word length {len:.2} exceeds cap {}",
                    self.max_expected_length
                )));
            }
        }
        Ok(chains)
    }

    /// Target symbol of each planted concept.
    pub fn targets(&self) -> Result<Vec<Phone>> {
        let chains = self.chains()?;
        Ok(chains[..self.planted]
            .iter()
            .map(|c| {
                let bg = &chains[self.concepts - 1].start;
                let (t, _) = c
                    .start
                    .iter()
                    .zip(bg)
                    .enumerate()
                    .max_by(|a, b| (a.1 .0 - a.1 .1).total_cmp(&(b.1 .0 - b.1 .1)))
                    .unwrap();
                t as Phone
            })
            .collect())
    }
}

/// Samples a lexicon: every language has one word per concept.
pub fn generate(spec: &SyntheticSpec, seed: u64) -> Result<Lexicon> {
    let chains = spec.chains()?;
    generate_from_chains(spec, &chains, seed)
}

pub fn generate_from_chains(spec: &SyntheticSpec, chains: &[MarkovChain], seed: u64) -> Result<Lexicon> {
    spec.validate()?;
    if chains.len() != spec.concepts {
        return Err(Error::config("one chain per concept required"));
    }
    let cap = (spec.max_expected_length * 20.0).ceil() as usize;
    let mut rng = derived(seed, "synthetic-words");
    let mut doculects = Vec::with_capacity(spec.families * spec.languages_per_family);
    for f in 0..spec.families {
        let macroarea = Macroarea::ALL[f % spec.macroareas];
        for l in 0..spec.languages_per_family {
            let mut entries = Vec::with_capacity(spec.concepts);
            for (c, chain) in chains.iter().enumerate() {
                entries.push(WordEntry {
                    concept_id: c,
                    phones: chain.sample(&mut rng, cap)?,
                    loan: false,
                });
            }
            doculects.push(Doculect {
                doculect_id: format!("syn{f:03}_{l:02}"),
                iso_code: None,
                family: format!("fam{f:03}"),
                macroarea,
                latitude: rng.random_range(-60.0..70.0),
                longitude: rng.random_range(-180.0..180.0),
                status_flags: Default::default(),
                entries,
            });
        }
    }
    let lex = Lexicon {
        alphabet: spec.alphabet(),
        concepts: spec.concept_names(),
        doculects,
    };
    lex.validate()?;
    Ok(lex)
}

#[cfg(test)]
mod tests;
