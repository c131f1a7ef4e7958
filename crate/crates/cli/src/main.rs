use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use steerprobe_core::capture::{capture_windows, CaptureConfig, HeadActivationSet, DEFAULT_FEW_SHOT_PREFIX};
use steerprobe_core::dataset::{load_mc_dataset, load_pairs, McFormat, PairFormat};
use steerprobe_core::eval::{chunk_corpus, evaluate, summary_csv, DriftBaseline, ScoreMode, Scorer};
use steerprobe_core::fixture::{make_synthetic_fixture, FixturePaths, FixtureSpec};
use steerprobe_core::intervention::{plan_from_activations, DirectionMode, InterventionPlan, InterventionScope};
use steerprobe_core::pipeline::{fixture_pipeline_config, run_pipeline, run_sweep, PipelineConfig, SweepGrid};
use steerprobe_core::probe::{
    export_head_heatmap, head_scores_csv, parse_head_scores_csv, probes_to_container, rank_by_accuracy,
    train_all_heads, ProbeKind, ProbeTrainConfig,
};
use steerprobe_core::{load_model, ByteTokenizer, Error};

/// Probe attention heads for truthfulness and steer them at inference.
#[derive(Parser)]
#[command(name = "steerprobe", version)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Capture window-averaged head activations for labeled pairs.
    Capture(CaptureArgs),
    /// Train a probe per head and write scores and the accuracy heatmap.
    Probe(ProbeArgs),
    /// Build an intervention plan from ranked heads and activations.
    Plan(PlanArgs),
    /// Score a multiple-choice dataset, optionally under a plan.
    Eval(EvalArgs),
    /// Run the full pipeline from a config file.
    Run(RunArgs),
    /// Sweep alpha, k, tau and rho from a config and a grid file.
    Sweep(SweepArgs),
    /// Write the synthetic planted-direction fixture.
    Fixture(FixtureArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Linear,
    Mlp,
}

impl From<KindArg> for ProbeKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Linear => ProbeKind::Linear,
            KindArg::Mlp => ProbeKind::Mlp,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    MassMeanShift,
    TruthfulMean,
    OverallMean,
}

impl From<DirectionArg> for DirectionMode {
    fn from(d: DirectionArg) -> Self {
        match d {
            DirectionArg::MassMeanShift => DirectionMode::MassMeanShift,
            DirectionArg::TruthfulMean => DirectionMode::TruthfulMean,
            DirectionArg::OverallMean => DirectionMode::OverallMean,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    AllPositions,
    LastPosition,
}

impl From<ScopeArg> for InterventionScope {
    fn from(s: ScopeArg) -> Self {
        match s {
            ScopeArg::AllPositions => InterventionScope::AllPositions,
            ScopeArg::LastPosition => InterventionScope::LastPosition,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PairFormatArg {
    QaJsonl,
    TruthfulqaJson,
    GenericMcJsonl,
}

impl From<PairFormatArg> for PairFormat {
    fn from(f: PairFormatArg) -> Self {
        match f {
            PairFormatArg::QaJsonl => PairFormat::QaJsonl,
            PairFormatArg::TruthfulqaJson => PairFormat::TruthfulqaJson,
            PairFormatArg::GenericMcJsonl => PairFormat::GenericMcJsonl,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum McFormatArg {
    TruthfulqaJson,
    GenericMcJsonl,
}

impl From<McFormatArg> for McFormat {
    fn from(f: McFormatArg) -> Self {
        match f {
            McFormatArg::TruthfulqaJson => McFormat::TruthfulqaJson,
            McFormatArg::GenericMcJsonl => McFormat::GenericMcJsonl,
        }
    }
}

#[derive(Args)]
struct PromptArgs {
    /// Prompt template with `{q}` and `{a}` slots.
    #[arg(long)]
    template: Option<String>,
    /// File whose contents precede every prompt.
    #[arg(long, conflicts_with = "few_shot")]
    prefix_file: Option<PathBuf>,
    /// Use the bundled five-shot prefix.
    #[arg(long)]
    few_shot: bool,
}

impl PromptArgs {
    fn config(&self) -> anyhow::Result<CaptureConfig> {
        let mut cfg = CaptureConfig::default();
        if let Some(t) = &self.template {
            cfg.template = t.clone();
        }
        if let Some(p) = &self.prefix_file {
            cfg.prompt_prefix = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        } else if self.few_shot {
            cfg.prompt_prefix = DEFAULT_FEW_SHOT_PREFIX.to_string();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct CaptureArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long, value_enum, default_value = "qa-jsonl")]
    pair_format: PairFormatArg,
    /// Window sizes to capture; one file per window.
    #[arg(long = "window", required = true, num_args = 1..)]
    windows: Vec<usize>,
    #[command(flatten)]
    prompt: PromptArgs,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ProbeArgs {
    /// Activations captured with the probing window (tau).
    #[arg(long)]
    activations: PathBuf,
    #[arg(long, value_enum, default_value = "mlp")]
    kind: KindArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct PlanArgs {
    /// Activations captured with the direction window (rho).
    #[arg(long)]
    activations: PathBuf,
    /// `head_scores.csv` written by `probe`.
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    alpha: f64,
    #[arg(long, value_enum, default_value = "mass-mean-shift")]
    direction_mode: DirectionArg,
    #[arg(long, value_enum, default_value = "all-positions")]
    scope: ScopeArg,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value = "generic-mc-jsonl")]
    format: McFormatArg,
    /// Dataset name used in output file names.
    #[arg(long, default_value = "eval")]
    name: String,
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Overrides the plan's alpha.
    #[arg(long)]
    alpha: Option<f64>,
    /// Reference text for KL and CE; drift is reported as 0 without it.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 128)]
    chunk_len: usize,
    #[arg(long, default_value_t = 64)]
    max_chunks: usize,
    #[arg(long)]
    mean_per_token: bool,
    #[command(flatten)]
    prompt: PromptArgs,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    tau: Option<usize>,
    #[arg(long)]
    rho: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    probe_kind: Option<KindArg>,
    #[arg(long, value_enum)]
    direction_mode: Option<DirectionArg>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// TOML file overriding fixture settings.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
}

fn write(path: &Path, data: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, data).with_context(|| format!("writing {}", path.display()))
}

fn create(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn capture(args: CaptureArgs) -> anyhow::Result<()> {
    let cfg = args.prompt.config()?;
    let model = load_model(&args.model)?;
    let pairs = load_pairs(&args.pairs, args.pair_format.into())?;
    let sets = capture_windows(&model, &ByteTokenizer, &pairs, &cfg, &args.windows)?;
    create(&args.out_dir)?;
    for set in sets {
        let path = args.out_dir.join(format!("activations_w{}.bin", set.window()));
        set.save(&path)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn probe(args: ProbeArgs) -> anyhow::Result<()> {
    let set = HeadActivationSet::load(&args.activations)?;
    let mut cfg = ProbeTrainConfig {
        seed: args.seed,
        hidden_dim: args.hidden_dim,
        ..ProbeTrainConfig::default()
    };
    if let Some(lr) = args.learning_rate {
        cfg.learning_rate = lr;
    }
    if let Some(e) = args.max_epochs {
        cfg.max_epochs = e;
    }
    cfg.validate()?;
    let scores = train_all_heads(&set, &cfg, args.kind.into())?;
    let n_layers = set.heads().map(|h| h.layer + 1).max().unwrap_or(0);
    let n_heads = set.heads().map(|h| h.head + 1).max().unwrap_or(0);
    create(&args.out_dir)?;
    write(&args.out_dir.join("head_scores.csv"), head_scores_csv(&scores))?;
    write(&args.out_dir.join("head_heatmap.csv"), export_head_heatmap(&scores, n_layers, n_heads)?)?;
    probes_to_container(&scores).write(&args.out_dir.join("probes.bin"))?;
    Ok(())
}

fn plan(args: PlanArgs) -> anyhow::Result<()> {
    let set = HeadActivationSet::load(&args.activations)?;
    let text = fs::read_to_string(&args.scores).with_context(|| format!("reading {}", args.scores.display()))?;
    let scores: Vec<_> = parse_head_scores_csv(&text)?.into_iter().map(|(h, _, acc)| (h, acc)).collect();
    let ranked = rank_by_accuracy(&scores, args.k)?;
    let plan = plan_from_activations(&set, &ranked, args.direction_mode.into(), args.alpha)?.with_scope(args.scope.into());
    create(&args.out_dir)?;
    plan.save(&args.out_dir.join("plan.json"))?;
    Ok(())
}

fn eval(args: EvalArgs) -> anyhow::Result<()> {
    if !args.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') || args.name.is_empty() {
        return Err(Error::InvalidConfig(format!("invalid dataset name {:?}", args.name)).into());
    }
    let cfg = args.prompt.config()?;
    let model = load_model(&args.model)?;
    let questions = load_mc_dataset(&args.dataset, args.format.into())?;
    let plan = match &args.plan {
        Some(p) => {
            let plan = InterventionPlan::load(p)?;
            Some(match args.alpha {
                Some(a) => plan.with_alpha(a)?,
                None => plan,
            })
        }
        None if args.alpha.is_some() => bail!(Error::InvalidConfig("--alpha requires --plan".into())),
        None => None,
    };
    let mode = if args.mean_per_token {
        ScoreMode::MeanPerToken
    } else {
        ScoreMode::Sum
    };
    let scorer = Scorer::new(&model, &ByteTokenizer, &cfg).with_mode(mode);
    let report = match &args.corpus {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let chunk_len = args.chunk_len.min(model.config().max_seq_len);
            let corpus = chunk_corpus(&text, &ByteTokenizer, chunk_len, args.max_chunks);
            let baseline = DriftBaseline::new(&model, &corpus, chunk_len.saturating_sub(1).max(1))?;
            evaluate(&scorer, plan.as_ref(), &questions, &baseline)?
        }
        None => steerprobe_core::eval::EvalReport::from_details(
            scorer.score_questions(plan.as_ref(), &questions)?,
            steerprobe_core::eval::Drift { kl: 0.0, ce: 0.0 },
        ),
    };
    create(&args.out_dir)?;
    write(&args.out_dir.join(format!("report_{}.json", args.name)), report.to_json()?)?;
    let summary = summary_csv([(args.name.as_str(), &report)]);
    write(&args.out_dir.join("summary.csv"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn run(args: RunArgs) -> anyhow::Result<()> {
    let mut cfg = PipelineConfig::from_file(&args.config)?;
    if let Some(d) = args.out_dir {
        cfg.out_dir = d;
    }
    if let Some(a) = args.alpha {
        cfg.alpha = a;
    }
    if let Some(k) = args.k {
        cfg.k = k;
    }
    if let Some(t) = args.tau {
        cfg.capture.tau = t;
    }
    if let Some(r) = args.rho {
        cfg.capture.rho = r;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(kind) = args.probe_kind {
        cfg.probe_kind = kind.into();
    }
    if let Some(d) = args.direction_mode {
        cfg.direction_mode = d.into();
    }
    let outcome = run_pipeline(&cfg)?;
    println!("dataset,baseline_mc1,mc1,baseline_mc2,mc2,kl,ce");
    for ((name, base), (_, steered)) in outcome.baselines.iter().zip(&outcome.reports) {
        println!(
            "{name},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}",
            base.mc1, steered.mc1, base.mc2, steered.mc2, steered.kl, steered.ce
        );
    }
    Ok(())
}

fn sweep(args: SweepArgs) -> anyhow::Result<()> {
    let mut cfg = PipelineConfig::from_file(&args.config)?;
    if let Some(d) = args.out_dir {
        cfg.out_dir = d;
    }
    let text = fs::read_to_string(&args.grid).with_context(|| format!("reading {}", args.grid.display()))?;
    let grid = SweepGrid::from_toml(&text)?;
    let outcome = run_sweep(&cfg, &grid)?;
    let failed = outcome.rows.iter().filter(|r| r.outcome.is_err()).count();
    println!(
        "{} points, {failed} failed; results in {}",
        outcome.rows.len(),
        cfg.out_dir.join("sweep_results.csv").display()
    );
    Ok(())
}

const FIXTURE_GRID: &str = "alpha = [0.0, 0.1, 0.25, 0.5, 1.0, 2.0]\nk = [1, 2]\ntau = [1, 4]\nrho = [1, 6]\n";

fn fixture(args: FixtureArgs) -> anyhow::Result<()> {
    let spec = match &args.spec {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            FixtureSpec::from_toml(&text)?
        }
        None => FixtureSpec::default(),
    };
    let fx = make_synthetic_fixture(args.seed, &spec)?;
    fx.write(&args.out_dir)?;
    let m = &fx.manifest;
    let relative = FixturePaths {
        model: m.model_file.clone().into(),
        probe: m.probe_file.clone().into(),
        eval: m.eval_file.clone().into(),
        corpus: m.corpus_file.clone().into(),
        manifest: "manifest.json".into(),
    };
    let mut cfg = fixture_pipeline_config(&relative, Path::new("run"), 1.0, 1);
    cfg.seed = args.seed;
    write(&args.out_dir.join("pipeline.toml"), cfg.to_toml()?)?;
    write(&args.out_dir.join("sweep.toml"), FIXTURE_GRID)?;
    println!(
        "fixture written to {} (target head {}, baseline MC1 {:.3})",
        args.out_dir.display(),
        m.target_head,
        m.baseline_mc1
    );
    Ok(())
}

/// Exit status for an error: 3 config or validation, 4 input/output or
/// format, 5 a failure inside a pipeline stage, 1 anything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    let Some(core) = err.chain().find_map(|e| e.downcast_ref::<Error>()) else {
        return if err.chain().any(|e| e.is::<std::io::Error>()) { 4 } else { 1 };
    };
    core_code(core)
}

fn core_code(err: &Error) -> u8 {
    match err {
        Error::Stage { stage, source } => match *stage {
            "validate" => 3,
            "load" => 4,
            _ => match core_code(source) {
                3 => 3,
                _ => 5,
            },
        },
        Error::InvalidConfig(_)
        | Error::InvalidAlpha(_)
        | Error::KOutOfRange { .. }
        | Error::Template(_)
        | Error::Toml(_)
        | Error::HeadOutOfBounds(_)
        | Error::DuplicateHead(_) => 3,
        Error::Io { .. }
        | Error::MalformedHeader(_)
        | Error::ShapeMismatch { .. }
        | Error::Truncated { .. }
        | Error::MissingTensor(_)
        | Error::Schema { .. }
        | Error::Json(_)
        | Error::EmptyCorpus(_) => 4,
        _ => 5,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Capture(a) => capture(a),
        Command::Probe(a) => probe(a),
        Command::Plan(a) => plan(a),
        Command::Eval(a) => eval(a),
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::Fixture(a) => fixture(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = e.to_string();
            for cause in e.chain().skip(1).map(ToString::to_string) {
                if !msg.contains(&cause) {
                    msg = format!("{msg}: {cause}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(exit_code(&e))
        }
    }
}
