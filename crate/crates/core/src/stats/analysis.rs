use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{benjamini_hochberg, hierarchical_sign_flip_test, weighted_sign_flip_test};
use crate::error::{Error, Result};
use crate::estimate::{hierarchical_mean, PmiRecord, TokenPmiRecord};
use crate::lexicon::{Alphabet, Macroarea, Phone};
use crate::rng::derived;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Overall,
    Concept,
    Language,
    ConceptToken,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisReport<R> {
    pub granularity: Granularity,
    pub q: f64,
    pub n_permutations: usize,
    /// Sorted by key.
    pub rows: Vec<R>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConceptRow {
    pub concept: String,
    pub n_words: usize,
    /// Hierarchically averaged PMI, bits per phone.
    pub mi: Option<f64>,
    pub uncertainty: Option<f64>,
    /// Mean number of phones per word, eos excluded.
    pub mean_len: Option<f64>,
    pub p: Option<f64>,
    pub adj_p: Option<f64>,
    pub significant: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LanguageRow {
    pub language: String,
    pub latitude: f64,
    pub longitude: f64,
    pub n_words: usize,
    pub mean_pmi: f64,
    pub uncertainty: Option<f64>,
    pub p: f64,
    pub adj_p: f64,
    pub significant: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairRow {
    pub concept: String,
    pub symbol: String,
    pub joint_count: usize,
    /// Per macroarea in `Macroarea::ALL` order; `None` where the pair does
    /// not occur.
    pub p: [Option<f64>; 4],
    pub adj_p: [Option<f64>; 4],
    pub all_significant: bool,
}

/// Runs BH over the defined p-values, leaving `None` entries out of the
/// family.
fn bh_partial(p: &[Option<f64>], q: f64) -> Result<Vec<Option<(f64, bool)>>> {
    let defined: Vec<f64> = p.iter().flatten().copied().collect();
    let bh = benjamini_hochberg(&defined, q)?;
    let mut it = bh.adjusted.into_iter().zip(bh.rejected);
    Ok(p.iter().map(|v| v.and_then(|_| it.next())).collect())
}

/// One hierarchical sign-flip test per concept over its word PMIs, BH across
/// concepts. Concepts without held-out words get a row with no p-value.
pub fn per_concept_analysis(
    records: &[PmiRecord],
    concepts: &[String],
    n_perm: usize,
    q: f64,
    seed: u64,
) -> Result<AnalysisReport<ConceptRow>> {
    let mut by_concept: Vec<Vec<PmiRecord>> = vec![Vec::new(); concepts.len()];
    for r in records {
        by_concept
            .get_mut(r.concept_id)
            .ok_or_else(|| Error::data(format!("record with unknown concept id {}", r.concept_id)))?
            .push(r.clone());
    }
    let tested: Vec<Option<(f64, f64, f64, f64)>> = by_concept
        .par_iter()
        .zip(concepts)
        .map(|(recs, name)| {
            if recs.is_empty() {
                return Ok(None);
            }
            let mut rng = derived(seed, &format!("concept/{name}"));
            let test = hierarchical_sign_flip_test(recs, |r| r.pmi, n_perm, &mut rng)?;
            let h = hierarchical_mean(recs, |r| r.word_xent_uncond)?.value;
            let len = recs.iter().map(|r| (r.phone_count - 1) as f64).sum::<f64>() / recs.len() as f64;
            Ok(Some((test.observed_mean, h, len, test.p_value)))
        })
        .collect::<Result<_>>()?;
    let bh = bh_partial(&tested.iter().map(|t| t.map(|t| t.3)).collect::<Vec<_>>(), q)?;
    let mut rows: Vec<ConceptRow> = concepts
        .iter()
        .zip(&by_concept)
        .zip(tested.iter().zip(bh))
        .map(|((name, recs), (t, adj))| ConceptRow {
            concept: name.clone(),
            n_words: recs.len(),
            mi: t.map(|t| t.0),
            uncertainty: t.and_then(|t| (t.1 > 0.0).then(|| t.0 / t.1)),
            mean_len: t.map(|t| t.2),
            p: t.map(|t| t.3),
            adj_p: adj.map(|a| a.0),
            significant: adj.is_some_and(|a| a.1),
        })
        .collect();
    rows.sort_by(|a, b| a.concept.cmp(&b.concept));
    Ok(AnalysisReport {
        granularity: Granularity::Concept,
        q,
        n_permutations: n_perm,
        rows,
    })
}

/// One test per language (ISO code, else doculect). The statistic averages
/// words within each doculect and doculects within the language; signs are
/// flipped per word. `locations` maps doculect ids to (latitude, longitude).
pub fn per_language_analysis(
    records: &[PmiRecord],
    locations: &BTreeMap<String, (f64, f64)>,
    n_perm: usize,
    q: f64,
    seed: u64,
) -> Result<AnalysisReport<LanguageRow>> {
    let mut by_lang: BTreeMap<&str, BTreeMap<&str, Vec<&PmiRecord>>> = BTreeMap::new();
    for r in records {
        by_lang
            .entry(r.language.as_str())
            .or_default()
            .entry(r.doculect_id.as_str())
            .or_default()
            .push(r);
    }
    let langs: Vec<(&str, &BTreeMap<&str, Vec<&PmiRecord>>)> =
        by_lang.iter().map(|(k, v)| (*k, v)).collect();
    let tested: Vec<(LanguageRow, f64)> = langs
        .par_iter()
        .map(|(lang, docs)| {
            let mut values = Vec::new();
            let mut weights = Vec::new();
            let mut h = 0.0;
            let (mut lat, mut lon) = (0.0, 0.0);
            for (doc, recs) in docs.iter() {
                let w = 1.0 / (docs.len() * recs.len()) as f64;
                for r in recs {
                    values.push(r.pmi);
                    weights.push(w);
                    h += w * r.word_xent_uncond;
                }
                let (la, lo) = locations
                    .get(*doc)
                    .ok_or_else(|| Error::data(format!("no location for doculect {doc}")))?;
                lat += la / docs.len() as f64;
                lon += lo / docs.len() as f64;
            }
            let mut rng = derived(seed, &format!("language/{lang}"));
            let t = weighted_sign_flip_test(&values, &weights, n_perm, &mut rng)?;
            Ok((
                LanguageRow {
                    language: lang.to_string(),
                    latitude: lat,
                    longitude: lon,
                    n_words: values.len(),
                    mean_pmi: t.observed_mean,
                    uncertainty: (h > 0.0).then(|| t.observed_mean / h),
                    p: t.p_value,
                    adj_p: f64::NAN,
                    significant: false,
                },
                t.p_value,
            ))
        })
        .collect::<Result<_>>()?;
    let p: Vec<f64> = tested.iter().map(|t| t.1).collect();
    let bh = benjamini_hochberg(&p, q)?;
    let rows = tested
        .into_iter()
        .zip(bh.adjusted.into_iter().zip(bh.rejected))
        .map(|((row, _), (adj, rej))| LanguageRow {
            adj_p: adj,
            significant: rej,
            ..row
        })
        .collect();
    Ok(AnalysisReport {
        granularity: Granularity::Language,
        q,
        n_permutations: n_perm,
        rows,
    })
}

/// For every (concept, symbol) pair occurring at least `min_joint` times,
/// one hierarchical test of its token PMIs per macroarea; BH across all
/// (concept, symbol, macroarea) tests. A pair is reported significant when
/// it is rejected in all four macroareas.
pub fn concept_token_analysis(
    records: &[TokenPmiRecord],
    concepts: &[String],
    alphabet: &Alphabet,
    min_joint: usize,
    n_perm: usize,
    q: f64,
    seed: u64,
) -> Result<AnalysisReport<PairRow>> {
    let mut by_pair: BTreeMap<(usize, Phone), Vec<&TokenPmiRecord>> = BTreeMap::new();
    for r in records {
        by_pair.entry((r.concept_id, r.symbol)).or_default().push(r);
    }
    let name = |c: usize| {
        concepts
            .get(c)
            .cloned()
            .ok_or_else(|| Error::data(format!("record with unknown concept id {c}")))
    };
    let kept: Vec<((usize, Phone), Vec<&TokenPmiRecord>)> = by_pair
        .into_iter()
        .filter(|(_, v)| v.len() >= min_joint)
        .collect();
    let tests: Vec<[Option<f64>; 4]> = kept
        .par_iter()
        .map(|((c, s), recs)| {
            let mut ps = [None; 4];
            for area in Macroarea::ALL {
                let subset: Vec<TokenPmiRecord> = recs
                    .iter()
                    .filter(|r| r.macroarea == area)
                    .map(|r| (*r).clone())
                    .collect();
                if subset.is_empty() {
                    continue;
                }
                let mut rng = derived(seed, &format!("pair/{c}/{s}/{area}"));
                let t = hierarchical_sign_flip_test(&subset, |r| r.pmi_token, n_perm, &mut rng)?;
                ps[area.index()] = Some(t.p_value);
            }
            Ok(ps)
        })
        .collect::<Result<_>>()?;
    let flat: Vec<Option<f64>> = tests.iter().flatten().copied().collect();
    let bh = bh_partial(&flat, q)?;
    let mut rows = Vec::with_capacity(kept.len());
    for (i, ((c, s), recs)) in kept.iter().enumerate() {
        let adj: [Option<(f64, bool)>; 4] = std::array::from_fn(|a| bh[4 * i + a]);
        rows.push(PairRow {
            concept: name(*c)?,
            symbol: alphabet.symbol(*s).to_string(),
            joint_count: recs.len(),
            p: tests[i],
            adj_p: adj.map(|a| a.map(|a| a.0)),
            all_significant: adj.iter().all(|a| a.is_some_and(|a| a.1)),
        });
    }
    rows.sort_by(|a, b| (&a.concept, &a.symbol).cmp(&(&b.concept, &b.symbol)));
    Ok(AnalysisReport {
        granularity: Granularity::ConceptToken,
        q,
        n_permutations: n_perm,
        rows,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl AnalysisReport<ConceptRow> {
    pub fn significant_concepts(&self) -> BTreeSet<&str> {
        self.rows
            .iter()
            .filter(|r| r.significant)
            .map(|r| r.concept.as_str())
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["concept", "U", "mean_len", "p", "adj_p", "significant"])?;
        for r in &self.rows {
            w.write_record([
                r.concept.clone(),
                opt(r.uncertainty),
                opt(r.mean_len),
                opt(r.p),
                opt(r.adj_p),
                r.significant.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

impl AnalysisReport<LanguageRow> {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["language", "latitude", "longitude", "U", "p", "adj_p", "significant"])?;
        for r in &self.rows {
            w.write_record([
                r.language.clone(),
                r.latitude.to_string(),
                r.longitude.to_string(),
                opt(r.uncertainty),
                r.p.to_string(),
                r.adj_p.to_string(),
                r.significant.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

impl AnalysisReport<PairRow> {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "concept",
            "symbol",
            "p_africa",
            "p_americas",
            "p_eurasia",
            "p_pacific",
            "all_significant",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.concept.clone(),
                r.symbol.clone(),
                opt(r.p[0]),
                opt(r.p[1]),
                opt(r.p[2]),
                opt(r.p[3]),
                r.all_significant.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
