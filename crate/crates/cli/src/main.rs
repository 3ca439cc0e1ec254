use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use formmi_core::estimate::summarize;
use formmi_core::hyperopt::run_search;
use formmi_core::lexicon::{
    filter_lexicon, make_folds, parse_wordlists, serialize_wordlists, Alphabet, FilterPolicy, FoldScheme,
    InputFormat, StatusFlag,
};
use formmi_core::models::{train_seed_ensemble, ConceptLabels, Split};
use formmi_core::pipeline::{self, compare_runs, load_lexicon, load_run, reanalyze, run_pipeline, RunConfig};
use formmi_core::rng::derived;
use formmi_core::stats::hierarchical_sign_flip_test;
use formmi_core::synth::{generate, true_mi_bruteforce, SyntheticSpec};

#[derive(Parser)]
#[command(name = "formmi", version, about = "Form-meaning mutual information from concept-aligned wordlists")]
struct Cli {
    /// Worker threads for all parallel work (default: available cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, validate and filter a wordlist TSV.
    Ingest(IngestArgs),
    /// Train model pairs for one fold.
    Train(TrainArgs),
    /// Recompute the analyses of a finished run.
    Analyze(AnalyzeArgs),
    /// Bayesian search over model sizes.
    Hyperopt(HyperoptArgs),
    /// Write a synthetic lexicon with a known mutual information.
    Synth(SynthArgs),
    /// Run everything described by a config file.
    Pipeline(PipelineArgs),
    /// Print a summary of a finished run.
    Report { run_dir: PathBuf },
    /// Welch's t-test between the per-seed MI values of two runs.
    Compare { a: PathBuf, b: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Tsv,
    AsjpForms,
}

impl From<Format> for InputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Tsv => InputFormat::Tsv,
            Format::AsjpForms => InputFormat::AsjpForms,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Scheme {
    Macroarea,
    Family,
}

impl From<Scheme> for FoldScheme {
    fn from(s: Scheme) -> Self {
        match s {
            Scheme::Macroarea => FoldScheme::Macroarea,
            Scheme::Family => FoldScheme::Family,
        }
    }
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "tsv")]
    format: Format,
    /// One symbol per line; ASJP when omitted.
    #[arg(long)]
    alphabet: Option<PathBuf>,
    #[arg(long)]
    keep_loans: bool,
    /// Keep pidgins, creoles and constructed languages.
    #[arg(long)]
    keep_flagged: bool,
    /// Normalized TSV output; only the summary is printed when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Config file plus the overrides shared by several subcommands.
#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    fold_scheme: Option<Scheme>,
    #[arg(long)]
    seeds: Option<usize>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(s) = self.fold_scheme {
            cfg.folds.scheme = s.into();
        }
        if let Some(n) = self.seeds {
            cfg.ensemble.seeds = n;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value_t = 0)]
    fold: usize,
    /// Directory for the model files.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    run_dir: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    granularity: Granularity,
    #[arg(long, alias = "n-perm")]
    n_permutations: Option<usize>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    min_joint: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Granularity {
    /// Word-level hierarchical test over all held-out words.
    Overall,
    Concept,
    Language,
    Pair,
    All,
}

#[derive(Args)]
struct HyperoptArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    seeds_per_config: Option<usize>,
    #[arg(long)]
    fold: Option<usize>,
    /// JSON-lines trial log; an existing log is resumed.
    #[arg(long)]
    history: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// TOML generating parameters; defaults when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also print the exact mutual information as JSON.
    #[arg(long)]
    oracle: bool,
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    run_dir: Option<PathBuf>,
    #[arg(long)]
    n_permutations: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    e.chain()
        .find_map(|c| c.downcast_ref::<formmi_core::Error>())
        .map_or(3, |e| e.exit_code() as u8)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("setting up worker threads")?;
    }
    match cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Train(a) => train(a),
        Command::Analyze(a) => analyze(a, cli.workers.unwrap_or(0)),
        Command::Hyperopt(a) => hyperopt(a),
        Command::Synth(a) => synth(a),
        Command::Pipeline(a) => {
            let mut cfg = a.config.load()?;
            if let Some(d) = a.run_dir {
                cfg.paths.run_dir = d;
            }
            if let Some(n) = a.n_permutations {
                cfg.analysis.n_permutations = n;
            }
            if let Some(n) = cli.workers {
                cfg.workers = n;
            }
            let out = run_pipeline(&cfg)?;
            let avg = &out.table1.average;
            println!(
                "MI {:.4}{} bits/phone, H(W) {:.4}, p {:.4}; outputs in {}",
                avg.mi,
                avg.marker,
                avg.h_w,
                avg.p,
                cfg.paths.run_dir.display()
            );
            Ok(())
        }
        Command::Report { run_dir } => {
            print!("{}", pipeline::cmd_report(&run_dir)?);
            Ok(())
        }
        Command::Compare { a, b } => {
            let c = compare_runs(&a, &b)?;
            println!("{}", serde_json::to_string_pretty(&c)?);
            Ok(())
        }
    }
}

fn ingest(a: IngestArgs) -> Result<()> {
    let alphabet = match &a.alphabet {
        Some(p) => Alphabet::from_path(p)?,
        None => Alphabet::asjp(),
    };
    let file = fs::File::open(&a.input).with_context(|| format!("opening {}", a.input.display()))?;
    let parsed = parse_wordlists(BufReader::new(file), &alphabet, a.format.into())?;
    for d in &parsed.diagnostics {
        eprintln!("line {}: {}", d.line, d.message);
    }
    let mut policy = if a.keep_flagged {
        FilterPolicy::default()
    } else {
        FilterPolicy {
            exclude_flags: [StatusFlag::PidginCreole, StatusFlag::Constructed].into_iter().collect(),
            drop_loans: false,
        }
    };
    policy.drop_loans = !a.keep_loans;
    let (lex, report) = filter_lexicon(parsed.lexicon, &policy)?;
    println!(
        "{} doculects ({} flagged, {} emptied), {} words, {} loans dropped, {} row diagnostics",
        report.doculects_out,
        report.doculects_flagged,
        report.doculects_emptied,
        report.words_out,
        report.loans_dropped,
        parsed.diagnostics.len()
    );
    if let Some(out) = a.out {
        write_file(&out, serialize_wordlists(&lex).as_bytes())?;
    }
    Ok(())
}

fn fold_split(cfg: &RunConfig, fold: usize) -> Result<Split> {
    let data = load_lexicon(cfg)?;
    let folds = make_folds(&data.lexicon, cfg.folds.scheme, cfg.folds.seed)?;
    let Some(f) = folds.folds.get(fold) else {
        bail!(formmi_core::Error::Config(format!(
            "fold {fold} does not exist ({} folds)",
            folds.folds.len()
        )));
    };
    Ok(Split::from_fold(&data.lexicon, f)?)
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let split = fold_split(&cfg, a.fold)?;
    let labels = if cfg.ensemble.shuffle_concepts {
        ConceptLabels::Shuffled(cfg.ensemble.shuffle_seed)
    } else {
        ConceptLabels::True
    };
    let ens = train_seed_ensemble(&split, &cfg.model, &cfg.ensemble.seed_list(), labels)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for p in &ens.pairs {
        for (kind, m) in [("uncond", &p.uncond), ("cond", &p.cond)] {
            let path = a.out.join(format!("fold{}_seed{}_{kind}.json", a.fold, p.seed));
            m.save(&path)?;
            println!(
                "fold {} seed {} {kind}: validation {:.4} bits/phone after {} epochs",
                a.fold,
                p.seed,
                m.validation_xent,
                m.training_curve.len()
            );
        }
    }
    for f in &ens.failures {
        println!("seed {} failed: {}", f.seed, f.message);
    }
    Ok(())
}

fn analyze(a: AnalyzeArgs, workers: usize) -> Result<()> {
    pipeline::Manifest::load(&a.run_dir)?;
    let snapshot = fs::read_to_string(a.run_dir.join(pipeline::CONFIG_FILE))?;
    let mut cfg = RunConfig::from_toml(&snapshot)?.analysis;
    cfg.concepts = matches!(a.granularity, Granularity::Concept | Granularity::All);
    cfg.languages = matches!(a.granularity, Granularity::Language | Granularity::All);
    cfg.pairs = matches!(a.granularity, Granularity::Pair | Granularity::All);
    if let Some(n) = a.n_permutations {
        cfg.n_permutations = n;
    }
    if let Some(q) = a.q {
        cfg.q_concepts = q;
        cfg.q_languages = q;
        cfg.q_pairs = q;
    }
    if let Some(m) = a.min_joint {
        cfg.min_joint = m;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if a.granularity == Granularity::Overall {
        let run = load_run(&a.run_dir)?;
        let s = summarize(&run.records)?;
        let mut rng = derived(cfg.seed, "table1/words");
        let t = hierarchical_sign_flip_test(&run.records, |r| r.pmi, cfg.n_permutations, &mut rng)?;
        println!(
            "H(W) {:.4}, H(W|V) {:.4}, MI {:.4}, U {:.4}, p {:.6} ({} words)",
            s.h_w.value,
            s.h_w_given_v.value,
            s.mi,
            s.uncertainty,
            t.p_value,
            run.records.len()
        );
        return Ok(());
    }
    let r = reanalyze(&a.run_dir, &cfg, workers)?;
    let count = |rows: Option<usize>, sig: Option<usize>, what: &str| {
        if let (Some(n), Some(k)) = (rows, sig) {
            println!("{what}: {k} of {n} significant");
        }
    };
    count(
        r.concepts.as_ref().map(|c| c.rows.len()),
        r.concepts.as_ref().map(|c| c.rows.iter().filter(|r| r.significant).count()),
        "concepts",
    );
    count(
        r.languages.as_ref().map(|c| c.rows.len()),
        r.languages.as_ref().map(|c| c.rows.iter().filter(|r| r.significant).count()),
        "languages",
    );
    count(
        r.pairs.as_ref().map(|c| c.rows.len()),
        r.pairs.as_ref().map(|c| c.rows.iter().filter(|r| r.all_significant).count()),
        "concept-symbol pairs",
    );
    Ok(())
}

fn hyperopt(a: HyperoptArgs) -> Result<()> {
    let cfg = a.config.load()?;
    let h = &cfg.hyperopt;
    let fold = a.fold.unwrap_or(h.fold);
    let split = fold_split(&cfg, fold)?;
    let out = run_search(
        &split,
        &cfg.model,
        &h.space,
        a.budget.unwrap_or(h.budget),
        a.seeds_per_config.unwrap_or(h.seeds_per_config),
        h.seed,
        Some(&a.history),
    )?;
    info!("{} trials, best validation {:.4}", out.history.trials.len(), out.best_value);
    print!("[model]\n{}", toml::to_string(&out.best)?);
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec: SyntheticSpec = match &a.spec {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).map_err(|e| formmi_core::Error::Config(format!("{}: {e}", p.display())))?
        }
        None => SyntheticSpec::default(),
    };
    let lex = generate(&spec, a.seed)?;
    write_file(&a.out, serialize_wordlists(&lex).as_bytes())?;
    if a.oracle {
        let r = true_mi_bruteforce(&spec.chains()?, 200)?;
        println!("{}", serde_json::to_string_pretty(&r)?);
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(bytes)?;
    Ok(())
}
