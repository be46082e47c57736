//! The `ttsp` command line.

pub mod config;
mod render;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use ttsp_core::backend::{
    BackendError, ChatBackend, ChatRequest, ChatResponse, OpenAiBackend, OpenAiConfig,
    ScriptedBackend,
};
use ttsp_core::harness::{evaluate, load_dataset, load_report, EvalOptions, TaskInstance};
use ttsp_core::prompts::PromptSet;
use ttsp_core::simlab::{
    coverage_probability, paired_difference, simulate_coverage, simulate_ttsp, sweep, to_csv,
    AgentPolicy, SimReport, SweepParameter, SyntheticScene,
};
use ttsp_core::{
    ablation_mode, AnswerOption, ImageAsset, Orchestrator, Question, RunConfig, Task, Variant,
    VoteTemperature,
};

pub use config::ConfigArgs;

#[derive(Debug, Parser)]
#[command(
    name = "ttsp",
    version,
    about = "Multi-round, multi-trace perception scaling"
)]
pub struct Cli {
    /// TOML file with run settings; keys are the flag names.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Repeat for more logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(flatten)]
    pub run_config: ConfigArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct BackendArgs {
    /// Replay a JSONL script instead of calling the endpoint in TTSP_ENDPOINT.
    #[arg(long, value_name = "FILE")]
    pub script: Option<PathBuf>,
    /// Directory of prompt templates overriding the built-in ones.
    #[arg(long, value_name = "DIR")]
    pub prompts: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate a dataset.
    Run {
        #[arg(long)]
        dataset: PathBuf,
        /// Parent directory of run folders.
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Instances in flight at once.
        #[arg(long, default_value_t = 4)]
        concurrency: usize,
        /// Evaluate at most this many new instances, then stop.
        #[arg(long)]
        limit: Option<usize>,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Solve one instance and print its traces and memory.
    Single {
        /// Pick the instance from a dataset file...
        #[arg(long, requires = "id", conflicts_with_all = ["image", "question"])]
        dataset: Option<PathBuf>,
        #[arg(long)]
        id: Option<String>,
        /// ...or describe it directly.
        #[arg(long, requires = "question")]
        image: Vec<PathBuf>,
        #[arg(long)]
        question: Option<String>,
        /// Answer option text; letters are assigned A, B, C...
        #[arg(long = "option")]
        options: Vec<String>,
        /// Print the full result as JSON.
        #[arg(long)]
        json: bool,
        /// Also write trace and memory log lines here.
        #[arg(long, value_name = "FILE")]
        log: Option<PathBuf>,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Run a simulation lab scenario.
    Simulate {
        #[arg(long, value_enum, default_value_t = Scenario::Ttsp)]
        scenario: Scenario,
        #[command(flatten)]
        sim: SimArgs,
        /// Per-round success probabilities for the coverage scenario are all `p`.
        #[arg(long, default_value_t = 8)]
        k: usize,
        #[arg(long)]
        json: bool,
    },
    /// Sweep one parameter in the simulation lab and emit CSV.
    Sweep {
        #[arg(long)]
        parameter: SweepParameter,
        /// Comma-separated grid.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[command(flatten)]
        sim: SimArgs,
        /// Write the CSV here instead of stdout.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Rebuild and print the report of a persisted run.
    Report {
        run_dir: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scenario {
    /// Probability that at least one of k attempts succeeds.
    Coverage,
    /// Accuracy of the configured run.
    Ttsp,
    /// Configured run against self-consistency with the same budget.
    Compare,
    /// Configured run against each single-component removal.
    Ablation,
}

#[derive(Debug, Clone, clap::Args)]
pub struct SimArgs {
    /// Hit probability of a trace without useful memory.
    #[arg(long, default_value_t = 0.3)]
    pub p: f64,
    /// Hit probability of a guided trace once the key fact is confirmed.
    #[arg(long, default_value_t = 0.8)]
    pub p_guided: f64,
    /// Use entropy ranges that never overlap.
    #[arg(long)]
    pub separated: bool,
    #[arg(long, default_value_t = 5000)]
    pub trials: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

impl SimArgs {
    fn policy(&self) -> anyhow::Result<AgentPolicy> {
        let mut policy = AgentPolicy::new(self.p, self.p_guided);
        if self.separated {
            policy = policy.separated();
        }
        policy.validate().map_err(|e| anyhow!(e))?;
        Ok(policy)
    }
}

/// Failure classes, mapped to exit codes 1 and 2.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Eval(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Eval(_) => 2,
        }
    }
}

trait Classify<T> {
    fn config_err(self) -> Result<T, Failure>;
    fn eval_err(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn config_err(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Config(e.into()))
    }
    fn eval_err(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Eval(e.into()))
    }
}

/// Either backend behind one type.
pub enum AnyBackend {
    Scripted(ScriptedBackend),
    OpenAi(OpenAiBackend),
}

impl ChatBackend for AnyBackend {
    fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        match self {
            AnyBackend::Scripted(b) => b.chat(request),
            AnyBackend::OpenAi(b) => b.chat(request),
        }
    }
}

fn orchestrator(
    args: &BackendArgs,
    config: &RunConfig,
) -> anyhow::Result<Orchestrator<AnyBackend>> {
    let prompts = match &args.prompts {
        Some(dir) => PromptSet::load_dir(dir)
            .with_context(|| format!("loading prompts from {}", dir.display()))?,
        None => PromptSet::builtin(),
    };
    let backend = match &args.script {
        Some(path) => AnyBackend::Scripted(ScriptedBackend::load(path).map_err(|e| anyhow!(e))?),
        None => {
            let mut c = OpenAiConfig::from_env()?;
            c.max_concurrency = 2 * config.traces_per_round as usize;
            AnyBackend::OpenAi(OpenAiBackend::new(c)?)
        }
    };
    Ok(Orchestrator::new(backend, prompts))
}

/// Parse `argv` and run; returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return 0;
            }
            eprintln!("\n{}", Cli::command().render_help());
            return 1;
        }
    };
    init_logging(cli.verbose);
    match execute(&cli) {
        Ok(()) => 0,
        Err(f) => {
            let (kind, e) = match &f {
                Failure::Config(e) => ("configuration error", e),
                Failure::Eval(e) => ("evaluation failed", e),
            };
            eprintln!("ttsp: {kind}: {e:#}");
            f.exit_code()
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
}

/// The configuration a command line resolves to, before the variant is applied.
pub fn resolve_config(cli: &Cli) -> anyhow::Result<(RunConfig, Variant)> {
    cli.run_config.resolve(cli.config.as_deref())
}

pub fn execute(cli: &Cli) -> Result<(), Failure> {
    let (config, variant) = resolve_config(cli).config_err()?;
    match &cli.command {
        Command::Run {
            dataset,
            out,
            concurrency,
            limit,
            backend,
        } => {
            let data = load_dataset(dataset).config_err()?;
            let orch = orchestrator(backend, &config).config_err()?;
            let options = EvalOptions {
                variant,
                concurrency: *concurrency,
                out_dir: Some(out.clone()),
                max_new_instances: *limit,
            };
            let report = evaluate(&data, &orch, &config, &options).eval_err()?;
            print!("{}", report.summary());
            println!(
                "artifacts: {}",
                out.join(report.manifest.dir_name()).display()
            );
            if report.overall.scored + report.failed > 0 && report.failed == report.records.len() {
                return Err(Failure::Eval(anyhow!("every instance failed")));
            }
            Ok(())
        }
        Command::Single {
            dataset,
            id,
            image,
            question,
            options,
            json,
            log,
            backend,
        } => {
            let task = single_task(
                dataset.as_deref(),
                id.as_deref(),
                image,
                question.as_deref(),
                options,
            )
            .config_err()?;
            let config = ablation_mode(&config, variant);
            let orch = orchestrator(backend, &config).config_err()?;
            let result = orch.run_ttsp(&task, &config).eval_err()?;
            if let Some(path) = log {
                let mut lines = result.log_lines().join("\n");
                lines.push('\n');
                std::fs::write(path, lines)
                    .with_context(|| format!("writing {}", path.display()))
                    .eval_err()?;
            }
            if *json {
                println!("{}", result.to_json());
            } else {
                print!("{}", render::run_tree(&result));
            }
            Ok(())
        }
        Command::Simulate {
            scenario,
            sim,
            k,
            json,
        } => simulate(*scenario, sim, *k, *json, &config, variant),
        Command::Sweep {
            parameter,
            values,
            sim,
            out,
        } => {
            let policy = sim.policy().config_err()?;
            let base = ablation_mode(&config, variant);
            let rows = sweep(
                *parameter,
                values,
                &base,
                &SyntheticScene::default(),
                &policy,
                sim.trials,
                sim.seed,
            )
            .config_err()?;
            let csv = to_csv(&rows);
            match out {
                Some(path) => std::fs::write(path, csv)
                    .with_context(|| format!("writing {}", path.display()))
                    .eval_err()?,
                None => print!("{csv}"),
            }
            Ok(())
        }
        Command::Report { run_dir, json } => {
            let report = load_report(run_dir).config_err()?;
            if *json {
                println!("{}", serde_json::to_string_pretty(&report).eval_err()?);
            } else {
                print!("{}", report.summary());
            }
            Ok(())
        }
    }
}

fn single_task(
    dataset: Option<&Path>,
    id: Option<&str>,
    images: &[PathBuf],
    question: Option<&str>,
    options: &[String],
) -> anyhow::Result<Task> {
    if let Some(path) = dataset {
        let id = id.ok_or_else(|| anyhow!("--dataset needs --id"))?;
        let data = load_dataset(path)?;
        let inst: &TaskInstance = data
            .iter()
            .find(|d| d.id == id)
            .ok_or_else(|| anyhow!("no instance `{id}` in {}", path.display()))?;
        return Ok(inst.to_task()?);
    }
    let question =
        question.ok_or_else(|| anyhow!("give --dataset and --id, or --image and --question"))?;
    if images.is_empty() {
        return Err(anyhow!("--question needs at least one --image"));
    }
    let question = if options.is_empty() {
        Question::open(question)
    } else {
        let options = options
            .iter()
            .zip('A'..='Z')
            .map(|(text, l)| AnswerOption {
                letter: l.to_string(),
                text: text.clone(),
            })
            .collect();
        Question::with_options(question, options)
    };
    Ok(Task {
        id: "single".into(),
        question,
        images: images
            .iter()
            .map(|p| ImageAsset::open(p))
            .collect::<Result<_, _>>()?,
    })
}

fn sim_line(label: &str, r: &SimReport) -> String {
    format!(
        "{label:<10} {:.4} ± {:.4}  ({} trials)",
        r.accuracy, r.stderr, r.trials
    )
}

fn simulate(
    scenario: Scenario,
    sim: &SimArgs,
    k: usize,
    json: bool,
    config: &RunConfig,
    variant: Variant,
) -> Result<(), Failure> {
    let config = ablation_mode(config, variant);
    let scene = SyntheticScene::default();
    if scenario == Scenario::Coverage {
        if !(0.0..=1.0).contains(&sim.p) {
            return Err(Failure::Config(anyhow!("p must be in [0, 1]")));
        }
        let probs = vec![sim.p; k];
        let exact = coverage_probability(&probs);
        let (est, se) = simulate_coverage(&probs, sim.trials, sim.seed);
        if json {
            println!(
                "{}",
                serde_json::json!({ "k": k, "p": sim.p, "closed_form": exact, "estimate": est, "stderr": se, "trials": sim.trials })
            );
        } else {
            println!(
                "coverage k={k} p={}: {est:.4} ± {se:.4} (closed form {exact:.6}, {} trials)",
                sim.p, sim.trials
            );
        }
        return Ok(());
    }
    let policy = sim.policy().config_err()?;
    let run = |c: &RunConfig| simulate_ttsp(&scene, &policy, c, sim.trials, sim.seed).config_err();
    let main = run(&config)?;
    let mut others: Vec<(String, SimReport)> = Vec::new();
    match scenario {
        Scenario::Coverage | Scenario::Ttsp => {}
        Scenario::Compare => {
            let sc = RunConfig {
                rounds: 1,
                traces_per_round: config.rounds * config.traces_per_round,
                filter_ratio: 0.0,
                vote_temperature: VoteTemperature::Uniform,
                structured_knowledge: false,
                ..config.clone()
            };
            others.push(("sc".into(), run(&sc)?));
        }
        Scenario::Ablation => {
            for v in [Variant::NoRf, Variant::NoSk, Variant::NoWa] {
                others.push((v.to_string(), run(&ablation_mode(&config, v))?));
            }
        }
    }
    if json {
        let diffs: Vec<_> = others
            .iter()
            .map(|(name, r)| {
                let d = paired_difference(&main, r);
                serde_json::json!({ "name": name, "report": r, "difference": d.mean, "stderr": d.stderr })
            })
            .collect();
        println!("{}", serde_json::json!({ "ttsp": main, "against": diffs }));
        return Ok(());
    }
    println!("{}", sim_line("ttsp", &main));
    for s in &main.rounds {
        println!(
            "  round {}: hit {:.3}, retained hit {:.3}, key fact {:.3}, false fact {:.3}, conflict {:.3}",
            s.round, s.hit_rate, s.retained_hit_rate, s.key_fact_rate, s.false_fact_rate, s.conflict_rate
        );
    }
    for (name, r) in &others {
        let d = paired_difference(&main, r);
        println!(
            "{}  ttsp - {name} = {:+.4} ± {:.4} (z = {:.1})",
            sim_line(name, r),
            d.mean,
            d.stderr,
            d.z()
        );
    }
    Ok(())
}
