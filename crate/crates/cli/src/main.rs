use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fallacy_core::dataset::{
    attach_tones, balanced_sample, dataset_digest, load_pool, tone_distribution, write_jsonl, PoolFormat,
    Strictness,
};
use fallacy_core::gateway::{GatewayOptions, HttpBackend, ResponseCache, TopKDialect, API_KEY_ENV};
use fallacy_core::prompt::TemplateSet;
use fallacy_core::runner::{build_report, execute_grid, execute_run, run_dir, write_report, MANIFEST_FILE};
use fallacy_core::{Condition, DatasetPool, Framework, Gateway, PromptForge, RunConfig, Snippet};
use tracing::{info, warn};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "fallacy", version, about = "Fallacy classification harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw class-balanced validation and test splits from a pool.
    Sample(SampleArgs),
    /// Run one framework × condition cell.
    Run(RunArgs),
    /// Run every framework × condition cell.
    Grid(GridArgs),
    /// Score run directories and write report.md / report.json.
    Report(ReportArgs),
    /// Join a tone sidecar CSV onto a pool and write JSONL.
    TonesJoin(TonesJoinArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Snippets as JSONL or CSV (by extension).
    #[arg(long)]
    split: PathBuf,
    /// Tone sidecar CSV joined by (date, snippet_id).
    #[arg(long)]
    tones: Option<PathBuf>,
    /// Skip malformed rows and unknown tone keys instead of failing.
    #[arg(long)]
    lenient: bool,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    pool: PathBuf,
    #[arg(long)]
    tones: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    per_class_val: usize,
    #[arg(long, default_value_t = 20)]
    per_class_test: usize,
    #[arg(long)]
    seed: u64,
    /// Directory for validation.jsonl and test.jsonl.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    lenient: bool,
}

/// RunConfig overrides. Anything unset falls back to the config file, then
/// to built-in defaults.
#[derive(Args, Default)]
struct ConfigArgs {
    /// TOML file with RunConfig fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Sampling temperature [default: 0.6]
    #[arg(long)]
    temperature: Option<f64>,
    /// Nucleus sampling mass [default: 0.95]
    #[arg(long)]
    top_p: Option<f64>,
    /// Top-k cutoff [default: 20]
    #[arg(long)]
    top_k: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Requests in flight at once [default: 4]
    #[arg(long)]
    max_concurrency: Option<usize>,
    /// Per-attempt timeout in seconds [default: 300]
    #[arg(long)]
    timeout_secs: Option<f64>,
    /// Retries after the first attempt [default: 3]
    #[arg(long)]
    max_retries: Option<u32>,
    /// How top-k is sent: extension (top-level field) or unsupported.
    #[arg(long, default_value = "extension", value_parser = parse_dialect)]
    top_k_dialect: TopKDialect,
    /// Reuse responses for identical requests from this directory.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Directory overriding the built-in prompt templates.
    #[arg(long)]
    templates: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    framework: Option<Framework>,
    #[arg(long)]
    condition: Option<Condition>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Comma-separated frameworks [default: basic,pd,pta]
    #[arg(long, value_delimiter = ',')]
    frameworks: Vec<Framework>,
    /// Comma-separated conditions [default: base,context,context-audio]
    #[arg(long, value_delimiter = ',')]
    conditions: Vec<Condition>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Also write report.md / report.json into the output directory.
    #[arg(long)]
    report: bool,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Run directories; defaults to every run under --out-dir.
    #[arg(long, num_args = 1..)]
    runs: Vec<PathBuf>,
    /// Directory holding run directories; also where the report is written.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Run to subtract in difference matrices; defaults to each framework's
    /// base run.
    #[arg(long)]
    base: Option<PathBuf>,
    /// Where to write the report files [default: --out-dir or current dir]
    #[arg(long)]
    report_dir: Option<PathBuf>,
}

#[derive(Args)]
struct TonesJoinArgs {
    #[arg(long)]
    pool: PathBuf,
    #[arg(long)]
    tones: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    lenient: bool,
}

fn parse_dialect(s: &str) -> Result<TopKDialect, String> {
    match s {
        "extension" => Ok(TopKDialect::Extension),
        "unsupported" => Ok(TopKDialect::Unsupported),
        other => Err(format!("unknown top-k dialect {other:?} (extension, unsupported)")),
    }
}

fn strictness(lenient: bool) -> Strictness {
    if lenient {
        Strictness::Lenient
    } else {
        Strictness::Strict
    }
}

fn load(path: &Path, tones: Option<&Path>, strict: Strictness) -> Result<DatasetPool> {
    let loaded = load_pool(path, PoolFormat::from_path(path), strict)
        .with_context(|| format!("loading {}", path.display()))?;
    for r in &loaded.rejections {
        warn!(line = r.line, reason = %r.reason, "skipped row");
    }
    let Some(tones) = tones else {
        return Ok(loaded.pool);
    };
    let joined = attach_tones(loaded.pool, tones, strict).with_context(|| format!("joining {}", tones.display()))?;
    if !joined.without_tone.is_empty() {
        warn!(count = joined.without_tone.len(), "snippets without a tone triple");
    }
    Ok(joined.pool)
}

fn write_split(path: &Path, snippets: &[Snippet]) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_jsonl(snippets, BufWriter::new(file))?;
    Ok(())
}

impl ConfigArgs {
    fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => RunConfig::default(),
        };
        if let Some(v) = &self.endpoint {
            cfg.endpoint_url = v.clone();
        }
        if let Some(v) = &self.model {
            cfg.model_name = v.clone();
        }
        if let Some(v) = self.temperature {
            cfg.temperature = v;
        }
        if let Some(v) = self.top_p {
            cfg.top_p = v;
        }
        if let Some(v) = self.top_k {
            cfg.top_k = v;
        }
        if self.seed.is_some() {
            cfg.seed = self.seed;
        }
        if let Some(v) = self.max_concurrency {
            cfg.max_concurrency = v;
        }
        if let Some(v) = self.timeout_secs {
            cfg.request_timeout = Duration::try_from_secs_f64(v).context("--timeout-secs")?;
        }
        if let Some(v) = self.max_retries {
            cfg.max_retries = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn gateway(&self, cfg: &RunConfig) -> Result<Gateway<HttpBackend>> {
        if std::env::var_os(API_KEY_ENV).is_none() {
            info!("{API_KEY_ENV} not set; sending requests without authorization");
        }
        let options = GatewayOptions {
            top_k_dialect: self.top_k_dialect,
            ..GatewayOptions::default()
        };
        let mut gateway = Gateway::with_options(HttpBackend::from_env(&cfg.endpoint_url), options);
        if let Some(dir) = &self.cache_dir {
            gateway = gateway.with_cache(ResponseCache::new(dir).with_context(|| format!("cache {}", dir.display()))?);
        }
        Ok(gateway)
    }

    fn forge(&self) -> Result<PromptForge> {
        Ok(match &self.templates {
            Some(dir) => PromptForge::new(TemplateSet::load(dir)?),
            None => PromptForge::default(),
        })
    }
}

/// Runs `fut`, turning Ctrl-C into an error that explains how to resume.
async fn interruptible<T>(fut: impl std::future::Future<Output = T>) -> Result<T> {
    tokio::select! {
        out = fut => Ok(out),
        _ = tokio::signal::ctrl_c() => bail!("interrupted; rerun the same command to resume"),
    }
}

fn cmd_sample(args: SampleArgs) -> Result<()> {
    let pool = load(&args.pool, args.tones.as_deref(), strictness(args.lenient))?;
    let split = balanced_sample(&pool, args.per_class_val, args.per_class_test, args.seed)?;
    fs::create_dir_all(&args.out_dir)?;
    write_split(&args.out_dir.join("validation.jsonl"), &split.validation)?;
    write_split(&args.out_dir.join("test.jsonl"), &split.test)?;
    println!(
        "validation: {} snippets ({})\ntest: {} snippets ({})",
        split.validation.len(),
        dataset_digest(&split.validation),
        split.test.len(),
        dataset_digest(&split.test)
    );
    if split.test.iter().all(|s| s.tone.is_some()) {
        for (label, tone) in tone_distribution(&split.test)? {
            println!(
                "  {:<20} arousal {:+.3}  dominance {:+.3}  valence {:+.3}",
                label.name(),
                tone.arousal(),
                tone.dominance(),
                tone.valence()
            );
        }
    }
    Ok(())
}

async fn cmd_run(args: RunArgs) -> Result<()> {
    let mut cfg = args.config.run_config()?;
    if let Some(fw) = args.framework {
        cfg.framework = fw;
    }
    if let Some(c) = args.condition {
        cfg.condition = c;
    }
    let pool = load(&args.input.split, args.input.tones.as_deref(), strictness(args.input.lenient))?;
    let gateway = args.config.gateway(&cfg)?;
    let forge = args.config.forge()?;
    let manifest = interruptible(execute_run(&cfg, pool.snippets(), &args.out_dir, &gateway, &forge)).await??;
    let c = manifest.counts;
    println!(
        "{}: {} completed, {} failed, {} unparsable of {}",
        manifest.run_id, c.completed, c.failed, c.unparsable, c.total
    );
    if c.failed > 0 {
        bail!("{} request(s) failed; rerun to retry them", c.failed);
    }
    Ok(())
}

async fn cmd_grid(args: GridArgs) -> Result<()> {
    let cfg = args.config.run_config()?;
    let frameworks = if args.frameworks.is_empty() { Framework::ALL.to_vec() } else { args.frameworks };
    let conditions = if args.conditions.is_empty() {
        vec![Condition::Base, Condition::Context, Condition::ContextAudio]
    } else {
        args.conditions
    };
    let pool = load(&args.input.split, args.input.tones.as_deref(), strictness(args.input.lenient))?;
    let gateway = args.config.gateway(&cfg)?;
    let forge = args.config.forge()?;
    let outcome = interruptible(execute_grid(
        &frameworks,
        &conditions,
        &cfg,
        pool.snippets(),
        &args.out_dir,
        &gateway,
        &forge,
    ))
    .await??;
    for m in &outcome.manifests {
        let c = m.counts;
        println!(
            "{}: {} completed, {} failed, {} unparsable of {}",
            m.run_id, c.completed, c.failed, c.unparsable, c.total
        );
    }
    for (run_id, err) in &outcome.errors {
        println!("{run_id}: error: {err}");
    }
    if args.report && !outcome.manifests.is_empty() {
        let dirs: Vec<PathBuf> = outcome.manifests.iter().map(|m| run_dir(&args.out_dir, &m.run_id)).collect();
        let bundle = build_report(&dirs, None, pool.snippets(), Strictness::Lenient)?;
        let (md, json) = write_report(&bundle, &args.out_dir)?;
        println!("report: {} {}", md.display(), json.display());
    }
    let failed: usize = outcome.manifests.iter().map(|m| m.counts.failed).sum();
    if !outcome.errors.is_empty() || failed > 0 {
        bail!("{} cell(s) failed, {failed} request(s) failed", outcome.errors.len());
    }
    Ok(())
}

fn discover_runs(out_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut runs = Vec::new();
    for entry in fs::read_dir(out_dir).with_context(|| format!("reading {}", out_dir.display()))? {
        let path = entry?.path();
        if path.join(MANIFEST_FILE).is_file() {
            runs.push(path);
        }
    }
    runs.sort();
    Ok(runs)
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let strict = strictness(args.input.lenient);
    let pool = load(&args.input.split, args.input.tones.as_deref(), strict)?;
    let runs = match (&args.runs[..], &args.out_dir) {
        ([], Some(dir)) => discover_runs(dir)?,
        ([], None) => bail!("pass --runs or --out-dir"),
        (runs, _) => runs.to_vec(),
    };
    if runs.is_empty() {
        bail!("no run directories found");
    }
    let bundle = build_report(&runs, args.base.as_deref(), pool.snippets(), strict)?;
    let target = args
        .report_dir
        .or(args.out_dir)
        .unwrap_or_else(|| PathBuf::from("."));
    let (md, json) = write_report(&bundle, &target)?;
    print!("{}", bundle.markdown);
    eprintln!("wrote {} and {}", md.display(), json.display());
    Ok(())
}

fn cmd_tones_join(args: TonesJoinArgs) -> Result<()> {
    let strict = strictness(args.lenient);
    let loaded = load_pool(&args.pool, PoolFormat::from_path(&args.pool), strict)?;
    let joined = attach_tones(loaded.pool, &args.tones, strict)?;
    write_split(&args.out, joined.pool.snippets())?;
    println!(
        "joined {} tone rows; {} unmatched; {} snippets without tone",
        joined.matched,
        joined.unmatched.len(),
        joined.without_tone.len()
    );
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sample(a) => cmd_sample(a),
        Command::TonesJoin(a) => cmd_tones_join(a),
        Command::Report(a) => cmd_report(a),
        Command::Run(a) => runtime().and_then(|rt| rt.block_on(cmd_run(a))),
        Command::Grid(a) => runtime().and_then(|rt| rt.block_on(cmd_grid(a))),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}
