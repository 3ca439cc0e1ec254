use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    Manifest, RunStatus, Table1, CONCEPT_REPORT_FILE, LANGUAGE_REPORT_FILE, PAIR_REPORT_FILE, TABLE1_FILE,
};
use crate::error::{read_file, Error, Result};
use crate::stats::welch_t_test;

/// Renders a completed run as text: the Table 1 layout followed by the
/// significant rows of each analysis. Refuses runs whose files do not match
/// the manifest hashes.
pub fn cmd_report(run_dir: &Path) -> Result<String> {
    let manifest = Manifest::load(run_dir)?;
    manifest.verify(run_dir)?;
    if manifest.status != RunStatus::Complete {
        return Err(Error::data(format!(
            "run is incomplete: {}",
            manifest.error.as_deref().unwrap_or("unknown failure")
        )));
    }
    let t = Table1::load(&run_dir.join(TABLE1_FILE))?;
    let mut out = String::new();
    let m = &t.model;
    let _ = writeln!(
        out,
        "scheme {}  seeds {}  emb {}  hidden {}  layers {}  dropout {:.2}{}",
        t.scheme,
        t.n_seeds,
        m.embedding_dim,
        m.hidden_dim,
        m.layers,
        m.dropout,
        if t.shuffled_concepts { "  (shuffled concepts)" } else { "" }
    );
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:<28} {:<14} {:<14} {:>7} {:>9} {:>8}",
        "Train", "Validation", "Test", "H(W)", "MI", "U"
    );
    for r in &t.rows {
        let _ = writeln!(
            out,
            "{:<28} {:<14} {:<14} {:>7.3} {:>9} {:>7.2}%",
            r.train.join(", "),
            r.validation,
            r.test,
            r.h_w,
            format!("{:.3}{}", r.mi, r.marker),
            100.0 * r.uncertainty
        );
    }
    let a = &t.average;
    let _ = writeln!(
        out,
        "{:<58} {:>7.3} {:>9} {:>7.2}%",
        "Average",
        a.h_w,
        format!("{:.3}{}", a.mi, a.marker),
        100.0 * a.uncertainty
    );
    let _ = writeln!(out, "‡ p<0.01  * p<0.1   word-level p {:.4}", a.word_level_p);
    if !t.failures.is_empty() {
        let _ = writeln!(out, "{} training job(s) failed", t.failures.len());
    }
    for (title, file, key) in [
        ("Concepts", CONCEPT_REPORT_FILE, "significant"),
        ("Languages", LANGUAGE_REPORT_FILE, "significant"),
        ("Concept-symbol pairs", PAIR_REPORT_FILE, "all_significant"),
    ] {
        if manifest.files.contains_key(file) {
            section(&mut out, title, &run_dir.join(file), key)?;
        }
    }
    Ok(out)
}

/// Prints the header of a report CSV and its rows flagged in `key`.
fn section(out: &mut String, title: &str, path: &Path, key: &str) -> Result<()> {
    let bytes = read_file(path)?;
    let mut rd = csv::Reader::from_reader(bytes.as_slice());
    let header = rd.headers()?.clone();
    let col = header
        .iter()
        .position(|h| h == key)
        .ok_or_else(|| Error::data(format!("{}: no {key} column", path.display())))?;
    let rows: Vec<csv::StringRecord> = rd.records().collect::<std::result::Result<_, _>>()?;
    let hits: Vec<&csv::StringRecord> = rows.iter().filter(|r| r.get(col) == Some("true")).collect();
    let _ = writeln!(out, "\n{title}: {} of {} significant", hits.len(), rows.len());
    let _ = writeln!(out, "{}", header.iter().collect::<Vec<_>>().join("\t"));
    for r in hits {
        let _ = writeln!(out, "{}", r.iter().map(short).collect::<Vec<_>>().join("\t"));
    }
    Ok(())
}

/// Shortens long float renderings for display.
fn short(field: &str) -> String {
    match field.parse::<f64>() {
        Ok(v) if field.contains('.') || field.contains('e') => format!("{v:.4}"),
        _ => field.to_owned(),
    }
}

/// Welch's t-test between the (fold, seed) MI values of two runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub n_a: usize,
    pub n_b: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    pub t: f64,
    pub df: f64,
    /// One-sided, alternative mean(a) > mean(b).
    pub p: f64,
}

pub fn compare_runs(a: &Path, b: &Path) -> Result<Comparison> {
    let load = |dir: &Path| -> Result<Vec<f64>> {
        let m = Manifest::load(dir)?;
        m.verify(dir)?;
        Ok(Table1::load(&dir.join(TABLE1_FILE))?.unit_mis())
    };
    let (xa, xb) = (load(a)?, load(b)?);
    let w = welch_t_test(&xa, &xb)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(Comparison {
        n_a: xa.len(),
        n_b: xb.len(),
        mean_a: mean(&xa),
        mean_b: mean(&xb),
        t: w.t,
        df: w.df,
        p: w.p,
    })
}
