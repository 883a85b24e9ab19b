//! `soda` command-line interface.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::Ordering;

use clap::{Args, Parser, Subcommand};

use soda::corpus::store;
use soda::eval::{self, BenchContext, EvalRequest};
use soda::pipeline::{self, OpenOptions, Pipeline, PipelineError, RunConfig, CONFIG_FILE};
use soda::prompts::PromptSet;

#[derive(Parser)]
#[command(name = "soda", version, about = "Self-paced knowledge distillation pipeline for code models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Run directory.
    #[arg(long)]
    run: PathBuf,
    /// Print the planned stage actions and exit without writing anything.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Create a run directory from a config file and import the seed questions.
    Init {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dry_run: bool,
    },
    /// Teacher solutions, CSL/FCL split and training export.
    Deliver(RunArgs),
    /// Student examination: execution verdicts, rubric scores and buckets.
    Examine(RunArgs),
    /// New questions generated from the feedback buckets.
    Update(RunArgs),
    /// All remaining stages of all remaining iterations.
    Run(RunArgs),
    /// Pass@k and mean rubric score on a benchmark file.
    Eval {
        /// Run directory whose config supplies backends and sandbox settings.
        #[arg(long, required_unless_present = "config")]
        run: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// JSONL benchmark problems.
        #[arg(long)]
        bench: PathBuf,
        #[arg(long, default_value = "1")]
        k: String,
        /// Backend to evaluate; defaults to the configured student.
        #[arg(long)]
        backend: Option<String>,
        /// Skip the rubric score.
        #[arg(long)]
        no_score: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample scoring annotations from the examined iterations.
    ExportAnnotations {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

extern "C" fn on_signal(_: libc::c_int) {
    pipeline::INTERRUPTED.store(true, Ordering::SeqCst);
}

fn install_signal_handlers() {
    let handler = on_signal as extern "C" fn(libc::c_int) as libc::sighandler_t;
    // SAFETY: the handler only stores to an atomic, which is async-signal-safe.
    unsafe {
        libc::signal(libc::SIGINT, handler);
        libc::signal(libc::SIGTERM, handler);
    }
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Eval(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Pipeline(e) => e.exit_code() as u8,
            CliError::Usage(_) => 2,
            CliError::Eval(_) => 3,
        }
    }
}

fn print_plan(dir: &Path) -> Result<(), CliError> {
    for line in pipeline::plan(dir)? {
        println!("{line}");
    }
    Ok(())
}

fn stage(args: &RunArgs, f: impl FnOnce(&mut Pipeline) -> Result<Vec<pipeline::StageReport>, PipelineError>) -> Result<(), CliError> {
    if args.dry_run {
        return print_plan(&args.run);
    }
    let mut p = Pipeline::open(&args.run, OpenOptions::default())?;
    for r in f(&mut p)? {
        println!("{r}");
    }
    Ok(())
}

fn load_config(run: Option<&Path>, config: Option<&Path>) -> Result<RunConfig, CliError> {
    let path = match (config, run) {
        (Some(c), _) => c.to_path_buf(),
        (None, Some(r)) => r.join(CONFIG_FILE),
        (None, None) => return Err(CliError::Usage("either --run or --config is required".into())),
    };
    Ok(RunConfig::load(&path).map_err(PipelineError::from)?)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Init { run, config, dry_run } => {
            let cfg = RunConfig::load(&config).map_err(PipelineError::from)?;
            if dry_run {
                let n = pipeline::read_import(&cfg.corpus_import)?.len();
                println!(
                    "would create {} with {n} imported questions (before near-duplicate filtering), {} iterations",
                    run.display(),
                    cfg.iterations
                );
                return Ok(());
            }
            let p = Pipeline::init(&cfg, &run)?;
            let n = store::load_jsonl::<soda::corpus::Question>(&p.iter_dir(0).join(soda::corpus::QUESTIONS_FILE))
                .map_err(PipelineError::from)?
                .records
                .len();
            println!("initialised {} with {n} questions", run.display());
            Ok(())
        }
        Command::Deliver(a) => stage(&a, |p| p.deliver().map(|r| vec![r])),
        Command::Examine(a) => stage(&a, |p| p.examine().map(|r| vec![r])),
        Command::Update(a) => stage(&a, |p| p.update().map(|r| vec![r])),
        Command::Run(a) => stage(&a, |p| {
            let reports = p.run()?;
            if reports.is_empty() {
                println!("run is already complete");
            }
            Ok(reports)
        }),
        Command::Eval {
            run,
            config,
            bench,
            k,
            backend,
            no_score,
            out,
        } => {
            let cfg = load_config(run.as_deref(), config.as_deref())?;
            let k_values = eval::parse_k_list(&k).map_err(|e| CliError::Usage(e.to_string()))?;
            let problems = eval::load_problems(&bench).map_err(|e| CliError::Usage(e.to_string()))?;
            let gateway = pipeline::build_gateway(&cfg, &[], None)?;
            let sandbox = pipeline::build_sandbox(&cfg.sandbox, None).map_err(PipelineError::from)?;
            let prompts = match &run {
                Some(r) => PromptSet::load_dir(&r.join(pipeline::PROMPTS_DIR)).map_err(PipelineError::from)?,
                None => PromptSet::defaults(),
            };
            let ctx = BenchContext {
                gateway: &gateway,
                sandbox: &sandbox,
                backend: backend.as_deref().unwrap_or(&cfg.student),
                timeout_ms: cfg.sandbox.timeout_ms,
                parallelism: cfg.parallelism,
                seed: cfg.seed,
            };
            let suite = bench
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.split('.').next())
                .unwrap_or("bench")
                .to_string();
            let report = eval::evaluate(
                &ctx,
                &problems,
                &EvalRequest {
                    suite: &suite,
                    k_values: &k_values,
                    scorer: (!no_score).then_some((cfg.scorer.as_str(), &prompts)),
                    nucleus: cfg.decoding.params(soda::gateway::DecodingMode::Nucleus),
                },
            )
            .map_err(|e| CliError::Eval(e.to_string()))?;
            for (k, v) in &report.pass_at_k {
                println!("pass@{k}: {v:.4}");
            }
            if let Some(m) = report.mean_score {
                println!("mean score: {m:.3}");
            }
            for n in &report.notes {
                println!("note: {n}");
            }
            let out = out.unwrap_or_else(|| run.as_deref().unwrap_or(Path::new(".")).join(eval::REPORT_FILE));
            store::write_json(&out, &report).map_err(PipelineError::from)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::ExportAnnotations { run, out } => {
            let p = Pipeline::open(&run, OpenOptions::default())?;
            let out = out.unwrap_or_else(|| run.join(soda::feedback::ANNOTATIONS_FILE));
            let n = p.export_annotations(&out)?;
            println!("wrote {n} annotations to {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    install_signal_handlers();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
