use super::MarkovChain;
use crate::error::{Error, Result};

/// Largest acceptable probability mass of words longer than `max_len`.
pub const TRUNCATION_LIMIT: f64 = 1e-9;

/// Prefix-tree nodes the enumeration may visit before giving up.
const NODE_BUDGET: usize = 50_000_000;

/// Exact information quantities of a uniform mixture of concept chains.
/// Per-phone values are expectations of per-word quantities divided by the
/// word's number of prediction steps (eos included), which is how the
/// estimator normalizes held-out words.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct OracleResult {
    /// `E[PMI(w; v) / L(w)]`, bits per phone.
    pub mi: f64,
    /// `E[−log₂ p(w) / L(w)]`.
    pub h_w: f64,
    /// `E[−log₂ p(w | v) / L(w)]`.
    pub h_w_given_v: f64,
    /// `E_{w ~ p(·|c)}[PMI(w; c) / L(w)]` for every concept.
    pub mi_per_concept: Vec<f64>,
    /// `E[PMI(w; v)]`, bits per word.
    pub mi_per_word: f64,
    /// `E[L(w)]` under the marginal.
    pub expected_length: f64,
    /// Marginal probability of words longer than `max_len`.
    pub truncated_mass: f64,
}

/// Enumerates every word of at most `max_len` prediction steps and sums the
/// entropies directly. Subtrees below a state whose reachable rows coincide
/// across all chains are summed in closed form over their length
/// distribution, which keeps large alphabets tractable when chains differ
/// only near the start. Fails if more than 1e-9 of the mass lies beyond
/// `max_len`.
pub fn true_mi_bruteforce(chains: &[MarkovChain], max_len: usize) -> Result<OracleResult> {
    let r = enumerate(chains, max_len)?;
    if r.truncated_mass >= TRUNCATION_LIMIT {
        return Err(Error::config(format!(
            "{:.3e} of the probability mass lies beyond {max_len} phones; increase max_len",
            r.truncated_mass
        )));
    }
    Ok(r)
}

struct Walk<'a> {
    chains: &'a [MarkovChain],
    n: usize,
    k: f64,
    max_len: usize,
    collapsible: Vec<bool>,
    /// `a[s][l]`: probability that exactly `l` more predictions follow state `s`.
    a: Vec<Vec<f64>>,
    /// `b[s][l]`: `E[−log₂ p(suffix); length l]` from state `s`.
    b: Vec<Vec<f64>>,
    nodes: usize,
    hw: f64,
    hwv: Vec<f64>,
    mi_c: Vec<f64>,
    mi_word: Vec<f64>,
    len: f64,
    truncated: f64,
}

fn xlog2x_neg(p: f64) -> f64 {
    if p > 0.0 {
        -p * p.log2()
    } else {
        0.0
    }
}

fn mixture(q: &[f64]) -> f64 {
    if q.iter().all(|&v| v == q[0]) {
        q[0]
    } else {
        q.iter().sum::<f64>() / q.len() as f64
    }
}

/// Same as [`true_mi_bruteforce`] without the truncation check.
pub(crate) fn enumerate(chains: &[MarkovChain], max_len: usize) -> Result<OracleResult> {
    let first = chains.first().ok_or_else(|| Error::config("no chains"))?;
    let n = first.n_symbols();
    for c in chains {
        c.validate()?;
        if c.n_symbols() != n {
            return Err(Error::config("chains over different alphabets"));
        }
    }
    if max_len == 0 {
        return Err(Error::config("max_len must be positive"));
    }
    let identical: Vec<bool> = (0..n)
        .map(|s| chains.iter().all(|c| c.rows[s] == first.rows[s]))
        .collect();
    let collapsible: Vec<bool> = (0..n)
        .map(|s| {
            let mut seen = vec![false; n];
            let mut stack = vec![s];
            seen[s] = true;
            while let Some(t) = stack.pop() {
                if !identical[t] {
                    return false;
                }
                for x in 0..n {
                    if !seen[x] && chains.iter().any(|c| c.rows[t][x] > 0.0) {
                        seen[x] = true;
                        stack.push(x);
                    }
                }
            }
            true
        })
        .collect();

    let t = &first.rows;
    let mut a = vec![vec![0.0; max_len + 1]; n];
    let mut b = vec![vec![0.0; max_len + 1]; n];
    for s in 0..n {
        a[s][1] = t[s][n];
        b[s][1] = xlog2x_neg(t[s][n]);
    }
    for l in 2..=max_len {
        for s in 0..n {
            let (mut al, mut bl) = (0.0, 0.0);
            for x in 0..n {
                let p = t[s][x];
                if p > 0.0 {
                    al += p * a[x][l - 1];
                    bl += p * (b[x][l - 1] - p.log2() * a[x][l - 1]);
                }
            }
            a[s][l] = al;
            b[s][l] = bl;
        }
    }

    let k = chains.len();
    let mut w = Walk {
        chains,
        n,
        k: k as f64,
        max_len,
        collapsible,
        a,
        b,
        nodes: 0,
        hw: 0.0,
        hwv: vec![0.0; k],
        mi_c: vec![0.0; k],
        mi_word: vec![0.0; k],
        len: 0.0,
        truncated: 0.0,
    };
    w.expand(None, 0, vec![1.0; k])?;

    let h_w_given_v = w.hwv.iter().sum::<f64>() / w.k;
    let mi = w.mi_c.iter().sum::<f64>() / w.k;
    Ok(OracleResult {
        mi,
        h_w: w.hw,
        h_w_given_v,
        mi_per_concept: w.mi_c,
        mi_per_word: w.mi_word.iter().sum::<f64>() / w.k,
        expected_length: w.len,
        truncated_mass: w.truncated,
    })
}

impl Walk<'_> {
    fn expand(&mut self, state: Option<usize>, m: usize, q: Vec<f64>) -> Result<()> {
        self.nodes += 1;
        if self.nodes > NODE_BUDGET {
            return Err(Error::config(
                "word enumeration too large; chains differ too deep into the word",
            ));
        }
        if let Some(s) = state {
            if self.collapsible[s] {
                self.collapse(s, m, &q);
                return Ok(());
            }
        }
        let n = self.n;
        for x in 0..=n {
            let next: Vec<f64> = q
                .iter()
                .zip(self.chains)
                .map(|(qc, c)| qc * c.row(state)[x])
                .collect();
            if next.iter().all(|&v| v == 0.0) {
                continue;
            }
            if x == n {
                self.word(&next, m + 1);
            } else if m + 1 >= self.max_len {
                self.truncated += mixture(&next);
            } else {
                self.expand(Some(x), m + 1, next)?;
            }
        }
        Ok(())
    }

    fn word(&mut self, q: &[f64], l: usize) {
        let lf = l as f64;
        let p = mixture(q);
        self.hw += xlog2x_neg(p) / lf;
        self.len += p * lf;
        for (c, &qc) in q.iter().enumerate() {
            if qc > 0.0 {
                let pmi = (qc / p).log2();
                self.hwv[c] += xlog2x_neg(qc) / lf;
                self.mi_c[c] += qc * pmi / lf;
                self.mi_word[c] += qc * pmi;
            }
        }
    }

    /// Sums every completion of a prefix ending in collapsible state `s`.
    fn collapse(&mut self, s: usize, m: usize, q: &[f64]) {
        let p = mixture(q);
        let neg_log_p = if p > 0.0 { -p.log2() } else { 0.0 };
        let mut covered = 0.0;
        for l in 1..=self.max_len - m {
            let (a, b) = (self.a[s][l], self.b[s][l]);
            if a == 0.0 {
                continue;
            }
            covered += a;
            let lf = (m + l) as f64;
            self.hw += p * (a * neg_log_p + b) / lf;
            self.len += p * a * lf;
            for (c, &qc) in q.iter().enumerate() {
                if qc > 0.0 {
                    let pmi = (qc / p).log2();
                    self.hwv[c] += qc * (-a * qc.log2() + b) / lf;
                    self.mi_c[c] += qc * a * pmi / lf;
                    self.mi_word[c] += qc * a * pmi;
                }
            }
        }
        self.truncated += p * (1.0 - covered).max(0.0);
    }
}
