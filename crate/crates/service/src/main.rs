use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::{Arc, Mutex};

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sqlcritic_core::dataset::{
    balance_sample, classify_hardness, corpus_stats, label_corpus, read_corpus, write_records, Hardness, LabelOutcome,
};
use sqlcritic_core::exec::VerifyMode;
use sqlcritic_core::grpo::RolloutGroup;
use sqlcritic_core::judge::StubMode;
use sqlcritic_core::llm::HttpChatClient;
use sqlcritic_core::metrics::{grouped_report, ScoredPrediction};
use sqlcritic_core::reward::{Coefficients, OutcomeSource, Variant};
use sqlcritic_core::synthesis::{run_pipeline, AlignOutcome, MemoryBuffer, SynthesisAgents};
use sqlcritic_core::tree_edit::TreeEditMatcher;
use sqlcritic_core::{parse_critique, EvalSample, RewardMode};
use sqlcritic_service::config::ModelEndpoint;
use sqlcritic_service::{server, Engine, JudgeKind, ScoreOptions, ServiceConfig};

#[derive(Parser)]
#[command(name = "sqlcritic", version, about = "Reward scoring and evaluation for text-to-SQL critiques")]
struct Cli {
    /// TOML config file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides db_root from the config and environment.
    #[arg(long, global = true)]
    db_root: Option<PathBuf>,
    /// Where per-sample errors go, one JSON object per line (default stderr).
    #[arg(long, global = true)]
    error_log: Option<PathBuf>,
    /// Score one sample at a time instead of on the thread pool.
    #[arg(long, global = true)]
    sequential: bool,
    #[arg(long, global = true, default_value = "warn")]
    log_level: tracing::Level,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score critiques in a corpus file and write one breakdown per line.
    Score(ScoreArgs),
    /// Accuracy, F1 and AUC of critique verdicts against labels.
    Evaluate(EvaluateArgs),
    /// Label a corpus by executing predicted and gold SQL.
    Label(LabelArgs),
    /// Generate, correct and filter critiques with the synthesis agents.
    Synthesize(SynthesizeArgs),
    /// Group-relative advantages for a file of rollout groups.
    Advantages(IoArgs),
    /// Down-sample the majority class of a labeled corpus.
    Balance(BalanceArgs),
    /// Label and hardness distribution of a corpus.
    Stats(StatsArgs),
    /// Run the HTTP scoring service.
    Serve(ServeArgs),
    /// Print the effective configuration as TOML.
    ShowConfig,
}

#[derive(clap::Args)]
struct IoArgs {
    #[arg(long, short)]
    input: PathBuf,
    /// Output file; stdout when omitted or `-`.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StubArg {
    Echo,
    SoundUnlessFlagged,
    AllSound,
    AllUnsound,
}

impl From<StubArg> for StubMode {
    fn from(s: StubArg) -> Self {
        match s {
            StubArg::Echo => StubMode::Echo,
            StubArg::SoundUnlessFlagged => StubMode::SoundUnlessFlagged,
            StubArg::AllSound => StubMode::AllSound,
            StubArg::AllUnsound => StubMode::AllUnsound,
        }
    }
}

#[derive(clap::Args)]
struct ScoreArgs {
    #[command(flatten)]
    io: IoArgs,
    /// Reward variant: ex, ex_pr or ex_pr_vc.
    #[arg(long)]
    mode: Option<Variant>,
    /// static or static_dynamic.
    #[arg(long)]
    coefficients: Option<Coefficients>,
    /// result_tag, rubric_flags or literal_xor.
    #[arg(long)]
    outcome_source: Option<OutcomeSource>,
    /// stub or live.
    #[arg(long)]
    judge: Option<JudgeKind>,
    #[arg(long, value_enum)]
    stub: Option<StubArg>,
    #[arg(long, value_enum)]
    verify_mode: Option<VerifyArg>,
}

#[derive(Clone, Copy, ValueEnum)]
enum VerifyArg {
    Gold,
    Differential,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Csv,
    Tsv,
    Json,
}

#[derive(clap::Args)]
struct EvaluateArgs {
    #[command(flatten)]
    io: IoArgs,
    /// Critique runs, one `{sample_id, critique_text}` per line. Several
    /// lines for one sample are repeated runs. Defaults to the corpus's own
    /// critique_text.
    #[arg(long)]
    critiques: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: ReportFormat,
}

#[derive(clap::Args)]
struct LabelArgs {
    #[command(flatten)]
    io: IoArgs,
    /// Samples whose gold query fails are written here.
    #[arg(long)]
    quarantine: Option<PathBuf>,
    /// Keep labels already present instead of recomputing them.
    #[arg(long)]
    keep_existing: bool,
}

#[derive(clap::Args)]
struct SynthesizeArgs {
    #[command(flatten)]
    io: IoArgs,
    /// Corpus file that accepted samples are appended to.
    #[arg(long)]
    accepted: Option<PathBuf>,
    #[arg(long)]
    generator_endpoint: Option<String>,
    #[arg(long)]
    generator_model: Option<String>,
}

#[derive(clap::Args)]
struct BalanceArgs {
    #[command(flatten)]
    io: IoArgs,
    /// Target share of positive samples.
    #[arg(long, default_value_t = 0.5)]
    ratio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(clap::Args)]
struct StatsArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long)]
    json: bool,
}

#[derive(clap::Args)]
struct ServeArgs {
    /// Overrides server.bind.
    #[arg(long)]
    bind: Option<SocketAddr>,
}

/// How a command ended short of full success.
enum Failure {
    /// Bad configuration or unusable input; nothing trustworthy was written.
    Config(anyhow::Error),
    /// The command finished but this many items failed.
    Partial(usize),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Config(e)
    }
}

type Outcome = Result<(), Failure>;

fn partial(failed: usize) -> Outcome {
    if failed == 0 {
        Ok(())
    } else {
        Err(Failure::Partial(failed))
    }
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    command: &'a str,
    id: &'a str,
    error: &'a str,
}

/// Line-delimited JSON error sink.
struct ErrorLog {
    command: &'static str,
    out: Mutex<Box<dyn Write + Send>>,
}

impl ErrorLog {
    fn open(path: Option<&Path>, command: &'static str) -> anyhow::Result<Self> {
        let out: Box<dyn Write + Send> = match path {
            Some(p) => Box::new(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)
                    .with_context(|| format!("opening error log {}", p.display()))?,
            ),
            None => Box::new(io::stderr()),
        };
        Ok(ErrorLog {
            command,
            out: Mutex::new(out),
        })
    }

    fn record(&self, id: &str, error: &str) {
        let rec = ErrorRecord {
            command: self.command,
            id,
            error,
        };
        let mut out = self.out.lock().unwrap_or_else(|p| p.into_inner());
        // the log is best effort; a broken stderr must not abort the run
        if serde_json::to_writer(&mut *out, &rec).is_ok() {
            let _ = out.write_all(b"\n");
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Score(_) => "score",
        Command::Evaluate(_) => "evaluate",
        Command::Label(_) => "label",
        Command::Synthesize(_) => "synthesize",
        Command::Advantages(_) => "advantages",
        Command::Balance(_) => "balance",
        Command::Stats(_) => "stats",
        Command::Serve(_) => "serve",
        Command::ShowConfig => "show-config",
    }
}

fn open_output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        None => Box::new(BufWriter::new(io::stdout().lock())),
        Some(p) if p == Path::new("-") => Box::new(BufWriter::new(io::stdout().lock())),
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
    })
}

fn write_all_records<T: Serialize>(path: Option<&Path>, records: &[T]) -> anyhow::Result<()> {
    let mut w = open_output(path)?;
    write_records(&mut w, records)?;
    w.flush()?;
    Ok(())
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<Vec<T>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

fn load_corpus(path: &Path) -> anyhow::Result<Vec<EvalSample>> {
    Ok(read_corpus(path)?)
}

fn run_score(engine: &Engine, args: &ScoreArgs, log: &ErrorLog) -> Outcome {
    let mut samples = load_corpus(&args.io.input)?;
    if samples.is_empty() {
        return Err(Failure::Config(anyhow!("{} holds no samples", args.io.input.display())));
    }
    engine.prepare(&mut samples);
    let base = engine.config().reward.mode;
    let mode = RewardMode::new(
        args.mode.unwrap_or(base.variant),
        args.coefficients.unwrap_or(base.coefficients),
        args.outcome_source.unwrap_or(base.outcome_source),
    );
    let opts = ScoreOptions {
        mode: Some(mode),
        judge: args.judge,
        stub: args.stub.map(StubMode::from),
        verify_mode: args.verify_mode.map(|v| match v {
            VerifyArg::Gold => VerifyMode::Gold,
            VerifyArg::Differential => VerifyMode::Differential,
        }),
    };
    let (results, _) = engine.score(&samples, &opts);
    write_all_records(args.io.output.as_deref(), &results)?;
    let mut failed = 0;
    for r in &results {
        if let Some(e) = &r.error {
            log.record(&r.sample_id, e);
            failed += 1;
        }
    }
    partial(failed)
}

#[derive(Deserialize)]
struct CritiqueRun {
    sample_id: String,
    critique_text: String,
}

fn run_evaluate(args: &EvaluateArgs, log: &ErrorLog) -> Outcome {
    let corpus = load_corpus(&args.io.input)?;
    let mut runs: HashMap<String, Vec<String>> = HashMap::new();
    match &args.critiques {
        Some(p) => {
            for r in read_lines::<CritiqueRun>(p)? {
                runs.entry(r.sample_id).or_default().push(r.critique_text);
            }
        }
        None => {
            for s in &corpus {
                if let Some(t) = &s.critique_text {
                    runs.entry(s.sample_id.clone()).or_default().push(t.clone());
                }
            }
        }
    }

    let mut items = Vec::new();
    let mut failed = 0;
    for s in &corpus {
        let Some(label) = s.label else {
            log.record(&s.sample_id, "sample has no label; skipped");
            failed += 1;
            continue;
        };
        let texts = runs.get(&s.sample_id).map(Vec::as_slice).unwrap_or_default();
        let mut verdicts = Vec::with_capacity(texts.len());
        for t in texts {
            let c = parse_critique(t);
            match c.verdict.filter(|_| c.format.valid) {
                Some(v) => verdicts.push(v),
                None => {
                    log.record(&s.sample_id, "critique is malformed; run skipped");
                    failed += 1;
                }
            }
        }
        let hardness = match (s.hardness, &s.gold_sql) {
            (Hardness::Unknown, Some(gold)) => classify_hardness(gold).unwrap_or(Hardness::Unknown),
            (h, _) => h,
        };
        match ScoredPrediction::from_runs(&verdicts, label, hardness) {
            Some(p) => items.push(p),
            None => {
                if texts.is_empty() {
                    log.record(&s.sample_id, "no critique for sample");
                    failed += 1;
                }
            }
        }
    }
    if items.is_empty() {
        return Err(Failure::Config(anyhow!("no sample could be evaluated")));
    }
    let report = grouped_report(&items);
    let text = match args.format {
        ReportFormat::Csv => report.to_delimited(','),
        ReportFormat::Tsv => report.to_delimited('\t'),
        ReportFormat::Json => serde_json::to_string_pretty(&report.to_json()).map_err(anyhow::Error::from)? + "\n",
    };
    let mut w = open_output(args.io.output.as_deref())?;
    w.write_all(text.as_bytes()).map_err(anyhow::Error::from)?;
    w.flush().map_err(anyhow::Error::from)?;
    partial(failed)
}

fn run_label(engine: &Engine, args: &LabelArgs, strategy_seq: bool, log: &ErrorLog) -> Outcome {
    let original = load_corpus(&args.io.input)?;
    let mut resolved = original.clone();
    engine.prepare(&mut resolved);
    let strategy = if strategy_seq {
        sqlcritic_core::par::Strategy::Sequential
    } else {
        engine.config().strategy()
    };
    let outcomes = label_corpus(&resolved, engine.executor(), strategy);

    let mut labeled = Vec::new();
    let mut quarantined = Vec::new();
    let mut failed = 0;
    for (mut s, outcome) in original.into_iter().zip(outcomes) {
        if s.hardness == Hardness::Unknown {
            let sql = s.gold_sql.as_deref().unwrap_or(&s.predicted_sql);
            s.hardness = classify_hardness(sql).unwrap_or(Hardness::Unknown);
        }
        match outcome {
            Ok(LabelOutcome::Labeled { label }) => {
                if !(args.keep_existing && s.label.is_some()) {
                    s.label = Some(label);
                }
                labeled.push(s);
            }
            Ok(LabelOutcome::Unusable { reason }) => {
                log.record(&s.sample_id, &reason);
                failed += 1;
                quarantined.push(s);
            }
            Err(e) => {
                log.record(&s.sample_id, &e.to_string());
                failed += 1;
                quarantined.push(s);
            }
        }
    }
    write_all_records(args.io.output.as_deref(), &labeled)?;
    if let Some(q) = &args.quarantine {
        write_all_records(Some(q), &quarantined)?;
    }
    partial(failed)
}

fn chat_client(m: &ModelEndpoint) -> HttpChatClient {
    HttpChatClient::new(&m.endpoint, m.model_name.clone(), m.temperature, m.api_key.clone(), m.timeout())
}

fn run_synthesize(engine: &Engine, args: &SynthesizeArgs, log: &ErrorLog) -> Outcome {
    let mut samples = load_corpus(&args.io.input)?;
    engine.prepare(&mut samples);
    let syn = &engine.config().synthesis;
    let mut gen_cfg = syn.generator.clone();
    if let Some(e) = &args.generator_endpoint {
        gen_cfg.endpoint = e.clone();
    }
    if let Some(m) = &args.generator_model {
        gen_cfg.model_name = m.clone();
    }
    let generator = chat_client(&gen_cfg);
    let corrector = chat_client(syn.corrector.as_ref().unwrap_or(&gen_cfg));
    let matcher = TreeEditMatcher {
        threshold: syn.pipeline.partial_match_threshold,
    };
    let agents = SynthesisAgents {
        generator: &generator,
        corrector: &corrector,
        exec: engine.executor(),
        matcher: &matcher,
    };
    let mut memory = MemoryBuffer::new(syn.pipeline.memory_capacity);
    let records = run_pipeline(&samples, &agents, &syn.pipeline, &mut memory, engine.config().strategy());
    write_all_records(args.io.output.as_deref(), &records)?;

    let mut failed = 0;
    for r in &records {
        if r.align == AlignOutcome::Errored {
            let why = r
                .error
                .as_deref()
                .or_else(|| r.decision.as_ref().and_then(|d| d.reason.as_deref()))
                .unwrap_or("errored");
            log.record(&r.sample.sample_id, why);
            failed += 1;
        }
    }
    if let Some(path) = &args.accepted {
        let accepted: Vec<EvalSample> = records.iter().filter_map(|r| r.to_corpus_sample()).collect();
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .with_context(|| format!("opening {}", path.display()))?;
        let mut w = BufWriter::new(file);
        write_records(&mut w, &accepted).map_err(anyhow::Error::from)?;
        w.flush().map_err(anyhow::Error::from)?;
    }
    partial(failed)
}

fn run_advantages(engine: &Engine, args: &IoArgs, log: &ErrorLog) -> Outcome {
    let groups: Vec<RolloutGroup> = read_lines(&args.input)?;
    let cfg = engine.config().grpo;
    let mut out = Vec::with_capacity(groups.len());
    let mut failed = 0;
    for mut g in groups {
        match g.compute_advantages(&cfg) {
            Ok(_) => out.push(g),
            Err(e) => {
                log.record(&g.prompt_id, &e.to_string());
                failed += 1;
            }
        }
    }
    write_all_records(args.output.as_deref(), &out)?;
    partial(failed)
}

fn run_balance(args: &BalanceArgs) -> Outcome {
    let corpus = load_corpus(&args.io.input)?;
    let balanced = balance_sample(&corpus, args.ratio, args.seed).map_err(anyhow::Error::from)?;
    write_all_records(args.io.output.as_deref(), &balanced)?;
    Ok(())
}

fn run_stats(args: &StatsArgs) -> Outcome {
    let corpus = load_corpus(&args.input)?;
    let stats = corpus_stats(&corpus);
    if args.json {
        println!("{}", serde_json::to_string_pretty(&stats.to_json()).map_err(anyhow::Error::from)?);
    } else {
        print!("{stats}");
    }
    Ok(())
}

fn run_serve(engine: Engine, args: &ServeArgs) -> Outcome {
    let addr = match args.bind {
        Some(a) => a,
        None => engine
            .config()
            .server
            .bind
            .parse()
            .with_context(|| format!("server.bind `{}`", engine.config().server.bind))?,
    };
    let rt = tokio::runtime::Runtime::new().context("starting runtime")?;
    rt.block_on(server::serve(addr, Arc::new(engine)))
        .with_context(|| format!("serving on {addr}"))?;
    Ok(())
}

fn load_config(cli: &Cli) -> anyhow::Result<ServiceConfig> {
    let mut cfg = ServiceConfig::load(cli.config.as_deref())?;
    if let Some(root) = &cli.db_root {
        cfg.db_root = root.clone();
    }
    if cli.sequential {
        cfg.server.parallel = false;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Outcome {
    let cfg = load_config(&cli)?;
    let log = ErrorLog::open(cli.error_log.as_deref(), command_name(&cli.command))?;
    match &cli.command {
        Command::Score(a) => run_score(&Engine::new(cfg), a, &log),
        Command::Evaluate(a) => run_evaluate(a, &log),
        Command::Label(a) => run_label(&Engine::new(cfg), a, cli.sequential, &log),
        Command::Synthesize(a) => run_synthesize(&Engine::new(cfg), a, &log),
        Command::Advantages(a) => run_advantages(&Engine::new(cfg), a, &log),
        Command::Balance(a) => run_balance(a),
        Command::Stats(a) => run_stats(a),
        Command::Serve(a) => run_serve(Engine::new(cfg), a),
        Command::ShowConfig => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    tracing_subscriber::fmt()
        .with_max_level(cli.log_level)
        .with_writer(io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Partial(n)) => {
            eprintln!("sqlcritic: {n} item(s) failed; see the error log");
            ExitCode::from(1)
        }
        Err(Failure::Config(e)) => {
            eprintln!("sqlcritic: {e:#}");
            ExitCode::from(2)
        }
    }
}

