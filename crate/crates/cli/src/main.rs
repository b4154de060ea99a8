use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

use rankr1::backend::{HttpBackend, HttpConfig, PreferenceBackend};
use rankr1::config::RunConfig;
use rankr1::corpus_io::{self, Query};
use rankr1::metrics::mean_ndcg;
use rankr1::parse_reward::{compute_reward, parse_completion};
use rankr1::setwise::rerank_all;
use rankr1::toy_env::{moving_average, train_toy};
use rankr1::traindata::{build_grpo_instances, build_sft_examples, write_instances, write_sft_examples};
use rankr1::{
    BackendError, BudgetUnit, CompletionBackend, FormatError, GrpoError, ObjectiveMode, PromptBudget, PromptMode,
    RerankConfig, RerankError, RewardError, SamplingParams, ToyTrainConfig, TrainDataError,
};

/// Setwise reasoning reranker and GRPO toolkit.
#[derive(Debug, Parser)]
#[command(name = "rankr1", version, about)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// Base URL of an OpenAI-compatible API, e.g. http://localhost:8000/v1
    #[arg(long, global = true, env = "RANKR1_ENDPOINT")]
    endpoint: Option<String>,
    #[arg(long, global = true, env = "RANKR1_MODEL")]
    model: Option<String>,
    /// Queries processed in parallel (also caps in-flight HTTP requests).
    #[arg(long, global = true)]
    concurrency: Option<usize>,
    /// Seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON configuration file; flags and environment variables take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    temperature: Option<f64>,
    #[arg(long, global = true)]
    group_size: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample 20-candidate training instances from qrels and a first-stage run.
    BuildTrainData(BuildTrainDataArgs),
    /// Rerank a first-stage run with setwise heapsort.
    Rerank(RerankArgs),
    /// Mean nDCG@k of a run against qrels.
    Evaluate(EvaluateArgs),
    /// Train the softmax toy policy with GRPO and log per-step statistics.
    GrpoToyTrain(ToyArgs),
    /// Parse completions and report their structure.
    ParseCheck(ParseCheckArgs),
}

#[derive(Debug, Args)]
struct BuildTrainDataArgs {
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Query texts, one `qid<TAB>text` per line.
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write answer-only supervised pairs here.
    #[arg(long)]
    sft_out: Option<PathBuf>,
    #[command(flatten)]
    budget: BudgetArgs,
}

#[derive(Debug, Args)]
struct BudgetArgs {
    /// Maximum prompt size; documents are truncated evenly to fit.
    #[arg(long)]
    max_prompt_length: Option<usize>,
    #[arg(long, default_value = "chars")]
    budget_unit: BudgetUnit,
}

#[derive(Debug, Args)]
struct RerankArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 19)]
    arity: usize,
    /// First-stage depth to rerank; deeper entries keep their order.
    #[arg(long, default_value_t = 100)]
    top_n: usize,
    #[arg(long, default_value = "rank-r1")]
    mode: PromptMode,
    #[arg(long, default_value = "rankr1")]
    tag: String,
    /// Use a deterministic selector preferring higher `doc<TAB>score` values
    /// instead of a model endpoint.
    #[arg(long)]
    mock_preferences: Option<PathBuf>,
    #[command(flatten)]
    budget: BudgetArgs,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Write `qid<TAB>ndcg` rows here.
    #[arg(long)]
    per_query: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Objective {
    Full,
    Simplified,
}

#[derive(Debug, Args)]
struct ToyArgs {
    #[arg(long)]
    steps: Option<usize>,
    /// KL coefficient.
    #[arg(long)]
    beta: Option<f64>,
    /// Clip range.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    num_tasks: Option<usize>,
    #[arg(long)]
    candidates: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long, value_enum)]
    objective: Option<Objective>,
    /// Per-step statistics as JSON lines.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ParseCheckArgs {
    /// File of completions, one per line: raw text, a JSON string, or a JSON
    /// object with a `text` field. Reads stdin when omitted or `-`.
    input: Option<PathBuf>,
    #[arg(long, default_value = "rank-r1")]
    mode: PromptMode,
    /// Also report the reward against this gold label.
    #[arg(long)]
    gold: Option<u32>,
    /// Candidate count used to validate `--gold`.
    #[arg(long, default_value_t = 20)]
    candidates: u32,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(Box<dyn std::error::Error + Send + Sync>),
}

macro_rules! runtime_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Runtime(Box::new(e))
            }
        }
    )*};
}
runtime_from!(
    io::Error,
    FormatError,
    RerankError,
    GrpoError,
    TrainDataError,
    BackendError,
    RewardError
);

type Result<T> = std::result::Result<T, CliError>;

/// Global settings after layering flags/environment over the config file.
struct Settings {
    global: GlobalArgs,
    file: RunConfig,
}

impl Settings {
    fn load(global: GlobalArgs) -> Result<Self> {
        let file = match &global.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        Ok(Self { global, file })
    }

    fn seed(&self) -> u64 {
        self.global.seed.or(self.file.seed).unwrap_or(0)
    }

    fn concurrency(&self) -> usize {
        self.global.concurrency.or(self.file.concurrency).unwrap_or(1).max(1)
    }

    fn budget(&self, args: &BudgetArgs) -> Option<PromptBudget> {
        args.max_prompt_length
            .or(self.file.max_prompt_length)
            .map(|max_units| PromptBudget {
                max_units,
                unit: args.budget_unit,
            })
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let Some(command) = cli.command else {
        let _ = Cli::command().write_help(&mut io::stderr());
        return ExitCode::from(1);
    };
    let result = Settings::load(cli.global).and_then(|settings| match command {
        Command::BuildTrainData(args) => build_train_data(&settings, args),
        Command::Rerank(args) => rerank(&settings, args),
        Command::Evaluate(args) => evaluate(args),
        Command::GrpoToyTrain(args) => grpo_toy_train(&settings, args),
        Command::ParseCheck(args) => parse_check(args),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::Usage(_) => 1,
                CliError::Runtime(_) => 2,
            })
        }
    }
}

fn load_query_map(path: &Path) -> Result<HashMap<String, Query>> {
    Ok(corpus_io::load_queries(path)?
        .into_iter()
        .map(|q| (q.id.clone(), q))
        .collect())
}

fn build_train_data(settings: &Settings, args: BuildTrainDataArgs) -> Result<()> {
    let qrels = corpus_io::load_qrels(&args.qrels)?;
    let runs = corpus_io::load_run(&args.run)?;
    let corpus = corpus_io::load_corpus(&args.corpus)?;
    let queries = load_query_map(&args.queries)?;
    let report = build_grpo_instances(&qrels, &runs, &queries, &corpus, settings.seed());
    write_instances(&report.instances, &args.out)?;
    if let Some(path) = &args.sft_out {
        let examples = build_sft_examples(&report.instances, &corpus, settings.budget(&args.budget))?;
        write_sft_examples(&examples, path)?;
    }
    eprintln!(
        "wrote {} instances to {} (skipped {}: {:?})",
        report.instances.len(),
        args.out.display(),
        report.skipped.total(),
        report.skipped
    );
    Ok(())
}

fn load_preferences(path: &Path) -> Result<PreferenceBackend> {
    let reader = BufReader::new(File::open(path)?);
    let mut scores = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| FormatError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let (doc, score) = line
            .split_once('\t')
            .ok_or_else(|| parse_err("expected `doc<TAB>score`".into()))?;
        let score: f64 = score
            .trim()
            .parse()
            .map_err(|e| parse_err(format!("bad score `{score}`: {e}")))?;
        scores.push((doc.to_string(), score));
    }
    Ok(PreferenceBackend::new(scores))
}

fn http_backend(settings: &Settings) -> Result<HttpBackend> {
    let endpoint = settings
        .global
        .endpoint
        .clone()
        .or_else(|| settings.file.endpoint.clone());
    let model = settings.global.model.clone().or_else(|| settings.file.model.clone());
    let (Some(endpoint), Some(model)) = (endpoint, model) else {
        return Err(CliError::Usage(
            "rerank needs --endpoint and --model (or RANKR1_ENDPOINT / RANKR1_MODEL), or --mock-preferences".into(),
        ));
    };
    let mut config = HttpConfig::new(endpoint, model);
    config.api_key = std::env::var("RANKR1_API_KEY").ok().filter(|k| !k.is_empty());
    config.max_in_flight = settings.concurrency();
    Ok(HttpBackend::new(config)?)
}

fn rerank(settings: &Settings, args: RerankArgs) -> Result<()> {
    let runs = corpus_io::load_run(&args.run)?;
    let store = corpus_io::load_corpus(&args.corpus)?;
    let queries = load_query_map(&args.queries)?;
    let backend: Box<dyn CompletionBackend> = match &args.mock_preferences {
        Some(path) => Box::new(load_preferences(path)?),
        None => Box::new(http_backend(settings)?),
    };
    let mut sampling = SamplingParams::greedy();
    sampling.temperature = settings.global.temperature.or(settings.file.temperature).unwrap_or(0.0);
    sampling.seed = settings.global.seed.or(settings.file.seed);
    if let Some(max) = settings.file.max_completion_length {
        sampling.max_completion_units = max;
    }
    let config = RerankConfig {
        top_n_in: args.top_n,
        top_k_out: args.k.min(args.top_n),
        heap_arity: args.arity,
        mode: args.mode,
        budget: settings.budget(&args.budget),
        sampling,
        ..RerankConfig::default()
    };
    if let Err(e) = config.validate() {
        return Err(CliError::Usage(e.to_string()));
    }
    let outcomes = rerank_all(
        &queries,
        &runs,
        &store,
        backend.as_ref(),
        &config,
        settings.concurrency(),
    )?;
    let calls: usize = outcomes.iter().map(|o| o.selector_calls).sum();
    let fallbacks: usize = outcomes.iter().map(|o| o.fallbacks).sum();
    let lists: Vec<_> = outcomes.into_iter().map(|o| o.ranked).collect();
    corpus_io::write_run(&lists, &args.tag, &args.out)?;
    eprintln!(
        "reranked {} queries with {calls} selector calls ({fallbacks} fallbacks) into {}",
        lists.len(),
        args.out.display()
    );
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let runs = corpus_io::load_run(&args.run)?;
    let qrels = corpus_io::load_qrels(&args.qrels)?;
    let report = mean_ndcg(&runs, &qrels, args.k);
    if let Some(path) = &args.per_query {
        let mut out = BufWriter::new(File::create(path)?);
        for (qid, score) in &report.per_query {
            writeln!(out, "{qid}\t{score:.6}")?;
        }
        out.flush()?;
    }
    println!("ndcg@{} {:.4}", args.k, report.mean);
    Ok(())
}

fn grpo_toy_train(settings: &Settings, args: ToyArgs) -> Result<()> {
    let file = &settings.file;
    let mut config = ToyTrainConfig {
        seed: settings.seed(),
        ..ToyTrainConfig::default()
    };
    let grpo = &mut config.grpo;
    grpo.group_size = settings
        .global
        .group_size
        .or(file.group_size)
        .unwrap_or(grpo.group_size);
    grpo.kl_beta = args.beta.or(file.kl_beta).unwrap_or(grpo.kl_beta);
    grpo.clip_eps = args.eps.or(file.clip_eps).unwrap_or(grpo.clip_eps);
    grpo.learning_rate = args.lr.or(file.learning_rate).unwrap_or(grpo.learning_rate);
    grpo.batch_size = args.batch_size.or(file.batch_size).unwrap_or(grpo.batch_size);
    if let Some(objective) = args.objective {
        grpo.objective_mode = match objective {
            Objective::Full => ObjectiveMode::Full,
            Objective::Simplified => ObjectiveMode::Simplified,
        };
    }
    config.steps = args.steps.unwrap_or(config.steps);
    config.num_tasks = args.num_tasks.unwrap_or(config.num_tasks);
    config.n_candidates = args.candidates.unwrap_or(config.n_candidates);
    config.dim = args.dim.unwrap_or(config.dim);
    if let Err(e) = config.grpo.validate() {
        return Err(CliError::Usage(e.to_string()));
    }

    let mut out = match &args.out {
        Some(path) => Some(BufWriter::new(File::create(path)?)),
        None => None,
    };
    let mut write_error = None;
    let report = train_toy(&config, |stats| {
        if let (Some(out), None) = (out.as_mut(), write_error.as_ref()) {
            let line = serde_json::to_string(stats).expect("stats serialize");
            if let Err(e) = writeln!(out, "{line}") {
                write_error = Some(e);
            }
        }
        if stats.step % 100 == 0 {
            log::info!("step {} mean reward {:.3}", stats.step, stats.mean_reward);
        }
    })?;
    if let Some(e) = write_error {
        return Err(e.into());
    }
    if let Some(out) = out.as_mut() {
        out.flush()?;
    }

    let rewards: Vec<f64> = report.stats.iter().map(|s| s.mean_reward).collect();
    let window = rewards.len().min(200);
    let ma = moving_average(&rewards, window);
    let first = rewards.first().copied().unwrap_or(0.0);
    let last = ma.last().copied().unwrap_or(0.0);
    println!(
        "steps {} first-step reward {first:.4} final {window}-step mean reward {last:.4}",
        rewards.len()
    );
    Ok(())
}

fn completion_text(line: &str) -> String {
    match serde_json::from_str::<serde_json::Value>(line) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(serde_json::Value::Object(map)) => match map.get("text").or_else(|| map.get("completion")) {
            Some(serde_json::Value::String(s)) => s.clone(),
            _ => line.to_string(),
        },
        _ => line.to_string(),
    }
}

fn parse_check(args: ParseCheckArgs) -> Result<()> {
    let input: Box<dyn BufRead> = match &args.input {
        Some(path) if path.as_os_str() != "-" => Box::new(BufReader::new(File::open(path)?)),
        _ => Box::new(io::stdin().lock()),
    };
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let (mut total, mut well_formed, mut rewarded) = (0usize, 0usize, 0usize);
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = parse_completion(&completion_text(&line), args.mode);
        let mut record = serde_json::json!({ "line": i + 1, "parsed": parsed });
        if let Some(gold) = args.gold {
            let reward = compute_reward(&parsed, gold, args.candidates)?;
            rewarded += usize::from(reward);
            record["reward"] = reward.into();
        }
        total += 1;
        well_formed += usize::from(parsed.is_well_formed());
        writeln!(out, "{record}")?;
    }
    out.flush()?;
    eprintln!("{well_formed}/{total} well-formed");
    if args.gold.is_some() {
        eprintln!("{rewarded}/{total} rewarded");
    }
    Ok(())
}
