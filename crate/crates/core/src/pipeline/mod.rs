//! End-to-end runs: ingest, folds, ensembles, scoring, analyses, and the
//! self-contained run directory they produce.
//!
//! A run directory holds the config snapshot, every output table and a
//! `manifest.json` listing each file with its SHA-256. Results do not depend
//! on the worker count: all parallel work collects in input order and every
//! random stream is derived from a labelled seed.

mod config;
mod manifest;
mod report;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use log::{info, warn};
use serde::{Deserialize, Serialize};

pub use config::{
    AnalysisConfig, DataConfig, EnsembleConfig, FoldConfig, FormatName, HyperoptConfig, Paths, RunConfig,
    SyntheticInput,
};
pub use manifest::{Manifest, RunStatus, MANIFEST_FILE};
pub use report::{cmd_report, compare_runs, Comparison};

use crate::error::{read_file, Error, Result};
use crate::estimate::{
    average_scores, read_pmi_records, read_token_records, score_pairs, score_tokens, summarize, write_pmi_records, write_token_records, PmiRecord, TokenPmiRecord,
};
use crate::hyperopt::run_search;
use crate::lexicon::{
    filter_lexicon, make_folds, parse_wordlists, reassign_families_to_macroareas, Alphabet, FilterReport,
    FoldAssignment, FoldScheme, Lexicon, Macroarea,
};
use crate::models::{train_seed_ensemble, ConceptLabels, ModelConfig, Split};
use crate::rng::derived;
use crate::stats::{
    benjamini_hochberg, concept_token_analysis, hierarchical_sign_flip_test, per_concept_analysis,
    per_language_analysis, sign_flip_test,
};
use manifest::RunWriter;

pub const CONFIG_FILE: &str = "config.toml";
pub const TABLE1_FILE: &str = "table1.json";
pub const DOCULECTS_FILE: &str = "doculects.csv";
pub const CONCEPTS_FILE: &str = "concepts.txt";
pub const ALPHABET_FILE: &str = "alphabet.txt";
pub const FOLDS_FILE: &str = "folds.json";
pub const PMI_FILE: &str = "pmi_records.csv";
pub const TOKEN_FILE: &str = "token_pmi_records.csv";
pub const CONCEPT_REPORT_FILE: &str = "concept_report.csv";
pub const LANGUAGE_REPORT_FILE: &str = "language_report.csv";
pub const PAIR_REPORT_FILE: &str = "pair_report.csv";
pub const HYPEROPT_FILE: &str = "hyperopt_history.jsonl";

/// Table 1 marker: `‡` below 0.01, `*` below 0.1.
pub fn significance_marker(p: f64) -> &'static str {
    if p < 0.01 {
        "‡"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldRow {
    pub fold: usize,
    pub train: Vec<String>,
    pub validation: String,
    pub test: String,
    pub n_test_words: usize,
    pub h_w: f64,
    pub h_w_given_v: f64,
    pub mi: f64,
    pub uncertainty: f64,
    /// MI of each seed's model pair on this fold's test set.
    pub seed_mi: Vec<f64>,
    /// Sign-flip test over `seed_mi`.
    pub p: f64,
    /// BH-adjusted across folds.
    pub adj_p: f64,
    pub marker: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AverageRow {
    pub h_w: f64,
    pub h_w_given_v: f64,
    pub mi: f64,
    pub uncertainty: f64,
    /// Sign-flip test over every (fold, seed) MI value.
    pub p: f64,
    pub marker: String,
    /// Word-level hierarchical sign-flip test over the pooled test PMIs.
    pub word_level_p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureRow {
    pub fold: usize,
    pub seed: u64,
    pub conditional: bool,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table1 {
    pub scheme: FoldScheme,
    pub n_seeds: usize,
    pub shuffled_concepts: bool,
    pub model: ModelConfig,
    pub rows: Vec<FoldRow>,
    pub average: AverageRow,
    pub failures: Vec<FailureRow>,
}

impl Table1 {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&read_file(path)?)?)
    }

    /// Every (fold, seed) MI value, folds in order.
    pub fn unit_mis(&self) -> Vec<f64> {
        self.rows.iter().flat_map(|r| r.seed_mi.iter().copied()).collect()
    }
}

/// Ingested and filtered data, ready for folding.
#[derive(Clone, Debug)]
pub struct LoadedData {
    pub lexicon: Lexicon,
    pub diagnostics: usize,
    pub filter: FilterReport,
}

pub fn load_lexicon(cfg: &RunConfig) -> Result<LoadedData> {
    let (lex, diagnostics) = match (&cfg.paths.input, &cfg.synthetic) {
        (_, Some(s)) => (crate::synth::generate(&s.spec, s.seed)?, 0),
        (Some(path), None) => {
            let alphabet = match &cfg.paths.alphabet {
                Some(p) => Alphabet::from_path(p)?,
                None => Alphabet::asjp(),
            };
            let file = File::open(path).map_err(|source| Error::File {
                path: path.clone(),
                source,
            })?;
            let parsed = parse_wordlists(BufReader::new(file), &alphabet, cfg.data.format.into())?;
            for d in parsed.diagnostics.iter().take(20) {
                warn!("line {}: {}", d.line, d.message);
            }
            if parsed.diagnostics.len() > 20 {
                warn!("{} more row diagnostics", parsed.diagnostics.len() - 20);
            }
            (parsed.lexicon, parsed.diagnostics.len())
        }
        (None, None) => return Err(Error::config("no input configured")),
    };
    let (mut lexicon, filter) = filter_lexicon(lex, &cfg.data.filter_policy())?;
    if cfg.folds.scheme == FoldScheme::Macroarea && cfg.data.reassign_families {
        lexicon = reassign_families_to_macroareas(lexicon);
    }
    Ok(LoadedData {
        lexicon,
        diagnostics,
        filter,
    })
}

#[derive(Serialize, Deserialize)]
struct DoculectRow {
    doculect_id: String,
    iso_code: String,
    language: String,
    family: String,
    macroarea: Macroarea,
    latitude: f64,
    longitude: f64,
    n_words: usize,
}

fn doculects_csv(lex: &Lexicon) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for d in &lex.doculects {
        w.serialize(DoculectRow {
            doculect_id: d.doculect_id.clone(),
            iso_code: d.iso_code.clone().unwrap_or_default(),
            language: d.language().into(),
            family: d.family.clone(),
            macroarea: d.macroarea,
            latitude: d.latitude,
            longitude: d.longitude,
            n_words: d.entries.len(),
        })?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn lines(items: &[String]) -> Vec<u8> {
    let mut s = items.join("\n");
    s.push('\n');
    s.into_bytes()
}

/// Everything a run produced, in memory.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub table1: Table1,
    pub records: Vec<PmiRecord>,
    pub tokens: Vec<TokenPmiRecord>,
    pub reports: Reports,
}

#[derive(Clone, Debug, Default)]
pub struct Reports {
    pub concepts: Option<crate::stats::AnalysisReport<crate::stats::ConceptRow>>,
    pub languages: Option<crate::stats::AnalysisReport<crate::stats::LanguageRow>>,
    pub pairs: Option<crate::stats::AnalysisReport<crate::stats::PairRow>>,
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))
}

/// Runs the whole pipeline into `cfg.paths.run_dir`. On failure the files
/// written so far stay in place and the manifest is marked incomplete.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    if cfg.paths.run_dir.as_os_str().is_empty() {
        return Err(Error::config("no run directory given"));
    }
    let mut writer = RunWriter::create(&cfg.paths.run_dir)?;
    let pool = thread_pool(cfg.workers)?;
    let mut output = None;
    let outcome = pool.install(|| run_stages(cfg, &mut writer).map(|o| output = Some(o)));
    writer.finish(&outcome)?;
    outcome.map(|()| output.expect("stages produced output"))
}

fn run_stages(cfg: &RunConfig, w: &mut RunWriter) -> Result<RunOutput> {
    w.manifest.seeds = cfg.ensemble.seed_list();
    w.write(CONFIG_FILE, cfg.snapshot()?.as_bytes())?;

    let data = load_lexicon(cfg)?;
    let lex = &data.lexicon;
    info!(
        "{} doculects, {} words after filtering ({} row diagnostics, {} loans dropped)",
        lex.doculects.len(),
        lex.word_count(),
        data.diagnostics,
        data.filter.loans_dropped
    );
    w.manifest.data_hash = Some(lex.content_hash());
    w.manifest.alphabet_hash = Some(lex.alphabet.hash());
    w.write(DOCULECTS_FILE, &doculects_csv(lex)?)?;
    w.write(CONCEPTS_FILE, &lines(&lex.concepts))?;
    w.write(ALPHABET_FILE, lex.alphabet.to_text().as_bytes())?;

    let folds = make_folds(lex, cfg.folds.scheme, cfg.folds.seed)?;
    w.write(FOLDS_FILE, &pretty(&folds)?)?;
    let selected = selected_folds(&folds, cfg.folds.only.as_deref())?;

    let model = if cfg.hyperopt.enabled {
        let h = &cfg.hyperopt;
        let fold = folds
            .folds
            .get(h.fold)
            .ok_or_else(|| Error::config(format!("hyperopt fold {} does not exist", h.fold)))?;
        let split = Split::from_fold(lex, fold)?;
        let path = w.dir.join(HYPEROPT_FILE);
        let out = run_search(&split, &cfg.model, &h.space, h.budget, h.seeds_per_config, h.seed, Some(&path))?;
        w.register(HYPEROPT_FILE)?;
        info!("search picked {:?} (validation {:.4})", out.best, out.best_value);
        out.best
    } else {
        cfg.model.clone()
    };

    let seeds = cfg.ensemble.seed_list();
    let labels = if cfg.ensemble.shuffle_concepts {
        ConceptLabels::Shuffled(cfg.ensemble.shuffle_seed)
    } else {
        ConceptLabels::True
    };
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut records = Vec::new();
    let mut tokens = Vec::new();
    for fold in selected {
        let split = Split::from_fold(lex, fold)?;
        if split.test.is_empty() {
            return Err(Error::data(format!("fold {} has no test words", fold.index)));
        }
        info!(
            "fold {}: {} train, {} validation, {} test words",
            fold.index,
            split.train.len(),
            split.validation.len(),
            split.test.len()
        );
        let ens = train_seed_ensemble(&split, &model, &seeds, labels)?;
        failures.extend(ens.failures.iter().map(|f| FailureRow {
            fold: fold.index,
            seed: f.seed,
            conditional: f.conditional,
            message: f.message.clone(),
        }));
        if cfg.ensemble.save_models {
            for p in &ens.pairs {
                for (kind, m) in [("uncond", &p.uncond), ("cond", &p.cond)] {
                    let name = format!("models/fold{}_seed{}_{kind}.json", fold.index, p.seed);
                    std::fs::create_dir_all(w.dir.join("models"))?;
                    m.save(&w.dir.join(&name))?;
                    w.register(&name)?;
                }
            }
        }
        let pairs = ens.model_pairs();
        let per_pair = score_pairs(&pairs, &split.test, &split.alphabet_hash)?;
        let seed_mi = per_pair
            .iter()
            .map(|r| summarize(r).map(|s| s.mi))
            .collect::<Result<Vec<_>>>()?;
        let fold_records = average_scores(&per_pair)?;
        let s = summarize(&fold_records)?;
        let mut rng = derived(cfg.analysis.seed, &format!("table1/fold{}", fold.index));
        let p = sign_flip_test(&seed_mi, cfg.analysis.n_permutations, &mut rng)?.p_value;
        info!("fold {}: H(W) {:.4}, MI {:.4}, p {p:.4}", fold.index, s.h_w.value, s.mi);
        rows.push(FoldRow {
            fold: fold.index,
            train: fold.train_groups.clone(),
            validation: fold.validation_group.clone(),
            test: fold.test_group.clone(),
            n_test_words: fold_records.len(),
            h_w: s.h_w.value,
            h_w_given_v: s.h_w_given_v.value,
            mi: s.mi,
            uncertainty: s.uncertainty,
            seed_mi,
            p,
            adj_p: p,
            marker: String::new(),
        });
        if cfg.analysis.pairs {
            tokens.extend(score_tokens(&pairs, &split.test, &split.alphabet_hash)?);
        }
        records.extend(fold_records);
    }

    let bh = benjamini_hochberg(&rows.iter().map(|r| r.p).collect::<Vec<_>>(), 0.01)?;
    for (r, adj) in rows.iter_mut().zip(bh.adjusted) {
        r.adj_p = adj;
        r.marker = significance_marker(adj).into();
    }
    let n = rows.len() as f64;
    let mean = |f: fn(&FoldRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let units: Vec<f64> = rows.iter().flat_map(|r| r.seed_mi.iter().copied()).collect();
    let mut rng = derived(cfg.analysis.seed, "table1/overall");
    let p = sign_flip_test(&units, cfg.analysis.n_permutations, &mut rng)?.p_value;
    let mut rng = derived(cfg.analysis.seed, "table1/words");
    let word_level_p = hierarchical_sign_flip_test(&records, |r| r.pmi, cfg.analysis.n_permutations, &mut rng)?.p_value;
    let average = AverageRow {
        h_w: mean(|r| r.h_w),
        h_w_given_v: mean(|r| r.h_w_given_v),
        mi: mean(|r| r.mi),
        uncertainty: mean(|r| r.uncertainty),
        p,
        marker: significance_marker(p).into(),
        word_level_p,
    };
    let table1 = Table1 {
        scheme: cfg.folds.scheme,
        n_seeds: seeds.len(),
        shuffled_concepts: cfg.ensemble.shuffle_concepts,
        model,
        rows,
        average,
        failures,
    };

    let mut buf = Vec::new();
    write_pmi_records(&mut buf, &records, &lex.concepts)?;
    w.write(PMI_FILE, &buf)?;
    if cfg.analysis.pairs {
        let mut buf = Vec::new();
        write_token_records(&mut buf, &tokens, &lex.concepts, &lex.alphabet)?;
        w.write(TOKEN_FILE, &buf)?;
    }
    w.write(TABLE1_FILE, &pretty(&table1)?)?;

    let reports = analyze(
        &records,
        &tokens,
        &lex.concepts,
        &lex.alphabet,
        &locations(lex),
        &cfg.analysis,
    )?;
    write_reports(w, &reports)?;
    Ok(RunOutput {
        table1,
        records,
        tokens,
        reports,
    })
}

fn selected_folds<'a>(folds: &'a FoldAssignment, only: Option<&[usize]>) -> Result<Vec<&'a crate::lexicon::Fold>> {
    match only {
        None => Ok(folds.folds.iter().collect()),
        Some(ix) if ix.is_empty() => Err(Error::config("folds.only is empty")),
        Some(ix) => ix
            .iter()
            .map(|&i| {
                folds
                    .folds
                    .get(i)
                    .ok_or_else(|| Error::config(format!("fold {i} does not exist")))
            })
            .collect(),
    }
}

fn pretty<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn locations(lex: &Lexicon) -> BTreeMap<String, (f64, f64)> {
    lex.doculects
        .iter()
        .map(|d| (d.doculect_id.clone(), (d.latitude, d.longitude)))
        .collect()
}

/// Runs the enabled analyses over pooled held-out records.
pub fn analyze(
    records: &[PmiRecord],
    tokens: &[TokenPmiRecord],
    concepts: &[String],
    alphabet: &Alphabet,
    locations: &BTreeMap<String, (f64, f64)>,
    cfg: &AnalysisConfig,
) -> Result<Reports> {
    let n = cfg.n_permutations;
    let concepts_report = cfg
        .concepts
        .then(|| per_concept_analysis(records, concepts, n, cfg.q_concepts, cfg.seed))
        .transpose()?;
    let languages = cfg
        .languages
        .then(|| per_language_analysis(records, locations, n, cfg.q_languages, cfg.seed))
        .transpose()?;
    let pairs = cfg
        .pairs
        .then(|| concept_token_analysis(tokens, concepts, alphabet, cfg.min_joint, n, cfg.q_pairs, cfg.seed))
        .transpose()?;
    Ok(Reports {
        concepts: concepts_report,
        languages,
        pairs,
    })
}

fn write_reports(w: &mut RunWriter, reports: &Reports) -> Result<()> {
    if let Some(r) = &reports.concepts {
        let mut buf = Vec::new();
        r.write_csv(&mut buf)?;
        w.write(CONCEPT_REPORT_FILE, &buf)?;
    }
    if let Some(r) = &reports.languages {
        let mut buf = Vec::new();
        r.write_csv(&mut buf)?;
        w.write(LANGUAGE_REPORT_FILE, &buf)?;
    }
    if let Some(r) = &reports.pairs {
        let mut buf = Vec::new();
        r.write_csv(&mut buf)?;
        w.write(PAIR_REPORT_FILE, &buf)?;
    }
    Ok(())
}

/// Held-out records and metadata read back from a completed run.
#[derive(Clone, Debug)]
pub struct StoredRun {
    pub manifest: Manifest,
    pub concepts: Vec<String>,
    pub alphabet: Alphabet,
    pub records: Vec<PmiRecord>,
    pub tokens: Option<Vec<TokenPmiRecord>>,
    pub locations: BTreeMap<String, (f64, f64)>,
}

/// Loads a run directory after checking it is complete and untampered.
pub fn load_run(run_dir: &Path) -> Result<StoredRun> {
    let manifest = Manifest::load(run_dir)?;
    if manifest.status != RunStatus::Complete {
        return Err(Error::data(format!(
            "run is incomplete: {}",
            manifest.error.as_deref().unwrap_or("unknown failure")
        )));
    }
    manifest.verify(run_dir)?;
    let text = |name: &str| -> Result<String> {
        String::from_utf8(read_file(&run_dir.join(name))?).map_err(|e| Error::data(format!("{name}: {e}")))
    };
    let concepts: Vec<String> = text(CONCEPTS_FILE)?.lines().map(str::to_owned).collect();
    let alphabet = Alphabet::from_text(&text(ALPHABET_FILE)?)?;
    let mut languages = BTreeMap::new();
    let mut locations = BTreeMap::new();
    let doculects = read_file(&run_dir.join(DOCULECTS_FILE))?;
    let mut rd = csv::Reader::from_reader(doculects.as_slice());
    for row in rd.deserialize() {
        let row: DoculectRow = row?;
        locations.insert(row.doculect_id.clone(), (row.latitude, row.longitude));
        languages.insert(row.doculect_id, row.language);
    }
    let records = read_pmi_records(read_file(&run_dir.join(PMI_FILE))?.as_slice(), &concepts, &languages)?;
    let tokens = if manifest.files.contains_key(TOKEN_FILE) {
        Some(read_token_records(
            read_file(&run_dir.join(TOKEN_FILE))?.as_slice(),
            &concepts,
            &alphabet,
            &languages,
        )?)
    } else {
        None
    };
    Ok(StoredRun {
        manifest,
        concepts,
        alphabet,
        records,
        tokens,
        locations,
    })
}

/// Recomputes the analyses of a completed run with new settings and
/// rewrites the report files and the manifest.
pub fn reanalyze(run_dir: &Path, cfg: &AnalysisConfig, workers: usize) -> Result<Reports> {
    let run = load_run(run_dir)?;
    if cfg.pairs && run.tokens.is_none() {
        return Err(Error::config("run has no token records; rerun the pipeline with pair analysis on"));
    }
    let tokens = run.tokens.unwrap_or_default();
    let reports = thread_pool(workers)?.install(|| {
        analyze(&run.records, &tokens, &run.concepts, &run.alphabet, &run.locations, cfg)
    })?;
    let mut w = RunWriter {
        dir: run_dir.to_owned(),
        manifest: run.manifest,
    };
    write_reports(&mut w, &reports)?;
    w.finish(&Ok(()))?;
    Ok(reports)
}
