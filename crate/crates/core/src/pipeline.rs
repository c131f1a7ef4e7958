//! End-to-end orchestration: capture, probe, rank, plan, evaluate, and
//! hyperparameter sweeps over `(alpha, k, tau, rho)`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::capture::{capture_windows, CaptureConfig, HeadActivationSet, QaPair};
use crate::dataset::{load_mc_dataset, load_pairs, McFormat, McQuestion, PairFormat};
use crate::error::{Error, Result};
use crate::eval::{chunk_corpus, evaluate, summary_csv, DriftBaseline, EvalReport, ScoreMode, Scorer};
use crate::intervention::{plan_from_activations, DirectionMode, InterventionPlan, InterventionScope};
use crate::model::{load_model, HeadId, Model};
use crate::probe::{
    export_head_heatmap, head_scores_csv, probes_to_container, rank_heads, train_all_heads, HeadScore, ProbeKind,
    ProbeTrainConfig,
};
use crate::tokenizer::ByteTokenizer;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalDatasetConfig {
    /// Used in artifact file names; letters, digits, `_` and `-` only.
    pub name: String,
    pub path: PathBuf,
    #[serde(default)]
    pub format: McFormat,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftConfig {
    /// Tokens per corpus chunk, BOS included.
    pub chunk_len: usize,
    pub max_chunks: usize,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            chunk_len: 128,
            max_chunks: 64,
        }
    }
}

fn default_probe_kind() -> ProbeKind {
    ProbeKind::Mlp
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub model: PathBuf,
    pub probe_dataset: PathBuf,
    #[serde(default)]
    pub probe_format: PairFormat,
    pub eval_datasets: Vec<EvalDatasetConfig>,
    pub corpus: PathBuf,
    pub out_dir: PathBuf,
    pub alpha: f64,
    pub k: usize,
    /// Overrides `probe.seed`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_probe_kind")]
    pub probe_kind: ProbeKind,
    #[serde(default)]
    pub direction_mode: DirectionMode,
    #[serde(default)]
    pub scope: InterventionScope,
    #[serde(default)]
    pub score_mode: ScoreMode,
    /// Read into `capture.prompt_prefix` when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_prefix_file: Option<PathBuf>,
    #[serde(default)]
    pub capture: CaptureConfig,
    #[serde(default)]
    pub probe: ProbeTrainConfig,
    #[serde(default)]
    pub drift: DriftConfig,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Parses a config file; relative paths are taken relative to its directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.model);
        resolve(base, &mut self.probe_dataset);
        resolve(base, &mut self.corpus);
        resolve(base, &mut self.out_dir);
        for d in &mut self.eval_datasets {
            resolve(base, &mut d.path);
        }
        if let Some(p) = &mut self.prompt_prefix_file {
            resolve(base, p);
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    fn input_paths(&self) -> Vec<&Path> {
        let mut paths = vec![self.model.as_path(), self.probe_dataset.as_path(), self.corpus.as_path()];
        paths.extend(self.eval_datasets.iter().map(|d| d.path.as_path()));
        paths.extend(self.prompt_prefix_file.as_deref());
        paths
    }

    /// Checks values and that every input path exists; all missing paths
    /// are listed in one error.
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidAlpha(self.alpha));
        }
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if self.eval_datasets.is_empty() {
            return Err(Error::InvalidConfig("at least one eval dataset is required".into()));
        }
        let mut seen = Vec::new();
        for d in &self.eval_datasets {
            let ok = !d.name.is_empty() && d.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
            if !ok {
                return Err(Error::InvalidConfig(format!("invalid dataset name {:?}", d.name)));
            }
            if seen.contains(&&d.name) {
                return Err(Error::InvalidConfig(format!("duplicate dataset name {:?}", d.name)));
            }
            seen.push(&d.name);
        }
        if self.drift.chunk_len < 2 || self.drift.max_chunks == 0 {
            return Err(Error::InvalidConfig("drift needs chunk_len >= 2 and max_chunks >= 1".into()));
        }
        self.capture.validate()?;
        self.probe.validate()?;
        let missing: Vec<String> = self
            .input_paths()
            .into_iter()
            .filter(|p| !p.exists())
            .map(|p| p.display().to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::InvalidConfig(format!("missing input paths: {}", missing.join(", "))));
        }
        Ok(())
    }

    /// Copy with the prefix file inlined and the seed pushed into the probe
    /// config; this is what a run actually uses.
    pub fn resolved(&self) -> Result<Self> {
        let mut out = self.clone();
        if let Some(p) = out.prompt_prefix_file.take() {
            out.capture.prompt_prefix = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        }
        out.probe.seed = out.seed;
        Ok(out)
    }
}

/// Files collected during a run, flushed together at the end.
#[derive(Default)]
struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    fn add(&mut self, name: impl Into<String>, data: impl Into<Vec<u8>>) {
        self.files.push((name.into(), data.into()));
    }

    fn flush(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, data) in &self.files {
            let path = dir.join(name);
            fs::write(&path, data).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// On failure, whatever was produced goes to `out_dir/failed/` with the error.
fn finish<T>(out_dir: &Path, mut art: Artifacts, result: Result<T>) -> Result<T> {
    match result {
        Ok(v) => {
            art.flush(out_dir)?;
            Ok(v)
        }
        Err(e) => {
            art.add("error.txt", format!("{e}\n"));
            if let Err(write_err) = art.flush(&out_dir.join("failed")) {
                log::error!("could not write partial artifacts: {write_err}");
            }
            Err(e)
        }
    }
}

trait StageExt<T> {
    fn stage(self, name: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, name: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(name))
    }
}

struct Inputs {
    model: Model,
    pairs: Vec<QaPair>,
    datasets: Vec<(String, Vec<McQuestion>)>,
    corpus: Vec<Vec<u32>>,
}

fn load_inputs(cfg: &PipelineConfig) -> Result<Inputs> {
    let model = load_model(&cfg.model)?;
    let pairs = load_pairs(&cfg.probe_dataset, cfg.probe_format)?;
    let datasets = cfg
        .eval_datasets
        .iter()
        .map(|d| Ok((d.name.clone(), load_mc_dataset(&d.path, d.format)?)))
        .collect::<Result<Vec<_>>>()?;
    let text = fs::read_to_string(&cfg.corpus).map_err(|e| Error::io(&cfg.corpus, e))?;
    let corpus = chunk_corpus(&text, &ByteTokenizer, cfg.drift.chunk_len.min(model.config().max_seq_len), cfg.drift.max_chunks);
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus(cfg.corpus.display().to_string()));
    }
    Ok(Inputs {
        model,
        pairs,
        datasets,
        corpus,
    })
}

fn check_k(k: usize, model: &Model) -> Result<()> {
    let max = model.config().total_heads();
    if k == 0 || k > max {
        return Err(Error::KOutOfRange { k, max });
    }
    Ok(())
}

/// Captures every distinct window in one pass over the pairs.
fn capture_all(inputs: &Inputs, capture: &CaptureConfig, windows: &[usize]) -> Result<BTreeMap<usize, HeadActivationSet>> {
    let mut distinct = windows.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let sets = capture_windows(&inputs.model, &ByteTokenizer, &inputs.pairs, capture, &distinct)?;
    Ok(distinct.into_iter().zip(sets).collect())
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub scores: Vec<HeadScore>,
    pub ranked: Vec<HeadId>,
    pub plan: InterventionPlan,
    /// Steered reports, in config order.
    pub reports: Vec<(String, EvalReport)>,
    /// Unsteered reports on the same datasets.
    pub baselines: Vec<(String, EvalReport)>,
}

/// Runs capture, probing, ranking, planning and evaluation, writing
/// `config.resolved.toml`, `head_scores.csv`, `head_heatmap.csv`,
/// `probes.bin`, `plan.json`, `report_<name>.json`, `baseline_<name>.json`,
/// `summary.csv` and `baseline_summary.csv` under `out_dir`.
pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineOutcome> {
    let mut art = Artifacts::default();
    let result = execute_pipeline(config, &mut art);
    finish(&config.out_dir, art, result)
}

fn execute_pipeline(config: &PipelineConfig, art: &mut Artifacts) -> Result<PipelineOutcome> {
    config.validate().stage("validate")?;
    let cfg = config.resolved().stage("validate")?;
    art.add("config.resolved.toml", cfg.to_toml()?);

    let inputs = load_inputs(&cfg).stage("load")?;
    check_k(cfg.k, &inputs.model).stage("validate")?;
    let (l, h) = (inputs.model.config().n_layers, inputs.model.config().n_heads);

    let sets = capture_all(&inputs, &cfg.capture, &[cfg.capture.tau, cfg.capture.rho]).stage("capture")?;
    let probe_set = &sets[&cfg.capture.tau];
    let direction_set = &sets[&cfg.capture.rho];

    let scores = train_all_heads(probe_set, &cfg.probe, cfg.probe_kind).stage("probe")?;
    art.add("head_scores.csv", head_scores_csv(&scores));
    art.add("head_heatmap.csv", export_head_heatmap(&scores, l, h).stage("probe")?);
    art.add("probes.bin", probes_to_container(&scores).to_bytes().stage("probe")?);

    let ranked = rank_heads(&scores, cfg.k).stage("rank")?;

    let plan = plan_from_activations(direction_set, &ranked, cfg.direction_mode, cfg.alpha)
        .stage("plan")?
        .with_scope(cfg.scope);
    art.add("plan.json", plan.to_json()?);

    let drift_positions = cfg.drift.chunk_len - 1;
    let baseline = DriftBaseline::new(&inputs.model, &inputs.corpus, drift_positions).stage("eval")?;
    let scorer = Scorer::new(&inputs.model, &ByteTokenizer, &cfg.capture).with_mode(cfg.score_mode);
    let mut reports = Vec::new();
    let mut baselines = Vec::new();
    for (name, questions) in &inputs.datasets {
        let base = evaluate(&scorer, None, questions, &baseline).stage("eval")?;
        let steered = evaluate(&scorer, Some(&plan), questions, &baseline).stage("eval")?;
        art.add(format!("baseline_{name}.json"), base.to_json()?);
        art.add(format!("report_{name}.json"), steered.to_json()?);
        log::info!(
            "{name}: MC1 {:.4} -> {:.4}, MC2 {:.4} -> {:.4}, KL {:.4}",
            base.mc1,
            steered.mc1,
            base.mc2,
            steered.mc2,
            steered.kl
        );
        baselines.push((name.clone(), base));
        reports.push((name.clone(), steered));
    }
    art.add("summary.csv", summary_csv(reports.iter().map(|(n, r)| (n.as_str(), r))));
    art.add("baseline_summary.csv", summary_csv(baselines.iter().map(|(n, r)| (n.as_str(), r))));

    Ok(PipelineOutcome {
        scores,
        ranked,
        plan,
        reports,
        baselines,
    })
}

fn default_max_points() -> usize {
    256
}

/// Values swept per axis; an absent axis keeps the base config's value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(default)]
    pub alpha: Option<Vec<f64>>,
    #[serde(default)]
    pub k: Option<Vec<usize>>,
    #[serde(default)]
    pub tau: Option<Vec<usize>>,
    #[serde(default)]
    pub rho: Option<Vec<usize>>,
    /// Names of eval datasets to score; all of them when absent.
    #[serde(default)]
    pub datasets: Option<Vec<String>>,
    #[serde(default = "default_max_points")]
    pub max_points: usize,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            alpha: None,
            k: None,
            tau: None,
            rho: None,
            datasets: None,
            max_points: default_max_points(),
        }
    }
}

struct Axes {
    alpha: Vec<f64>,
    k: Vec<usize>,
    tau: Vec<usize>,
    rho: Vec<usize>,
    datasets: Vec<String>,
}

impl SweepGrid {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    fn axes(&self, base: &PipelineConfig) -> Result<Axes> {
        fn pick<T: Clone>(name: &str, list: &Option<Vec<T>>, fallback: T) -> Result<Vec<T>> {
            match list {
                Some(v) if v.is_empty() => Err(Error::InvalidConfig(format!("sweep axis `{name}` is empty"))),
                Some(v) => Ok(v.clone()),
                None => Ok(vec![fallback]),
            }
        }
        let alpha = pick("alpha", &self.alpha, base.alpha)?;
        if let Some(a) = alpha.iter().find(|a| !(**a >= 0.0 && a.is_finite())) {
            return Err(Error::InvalidAlpha(*a));
        }
        let tau = pick("tau", &self.tau, base.capture.tau)?;
        let rho = pick("rho", &self.rho, base.capture.rho)?;
        if tau.iter().chain(&rho).any(|w| *w == 0) {
            return Err(Error::InvalidConfig("sweep windows must be at least 1".into()));
        }
        let all: Vec<String> = base.eval_datasets.iter().map(|d| d.name.clone()).collect();
        let datasets = match &self.datasets {
            Some(v) if v.is_empty() => return Err(Error::InvalidConfig("sweep axis `datasets` is empty".into())),
            Some(v) => {
                if let Some(unknown) = v.iter().find(|n| !all.contains(n)) {
                    return Err(Error::InvalidConfig(format!("sweep names unknown dataset {unknown:?}")));
                }
                v.clone()
            }
            None => all,
        };
        let axes = Axes {
            alpha,
            k: pick("k", &self.k, base.k)?,
            tau,
            rho,
            datasets,
        };
        let size = axes.alpha.len() * axes.k.len() * axes.tau.len() * axes.rho.len() * axes.datasets.len();
        if size > self.max_points {
            return Err(Error::InvalidConfig(format!(
                "sweep has {size} points, above the cap of {}",
                self.max_points
            )));
        }
        Ok(axes)
    }

    /// Number of result rows: the product of all axis lengths.
    pub fn cardinality(&self, base: &PipelineConfig) -> Result<usize> {
        let a = self.axes(base)?;
        Ok(a.alpha.len() * a.k.len() * a.tau.len() * a.rho.len() * a.datasets.len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepMetrics {
    pub mc1: f64,
    pub mc2: f64,
    pub ce: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub alpha: f64,
    pub k: usize,
    pub tau: usize,
    pub rho: usize,
    pub dataset: String,
    pub outcome: std::result::Result<SweepMetrics, String>,
}

pub const SWEEP_HEADER: &str = "alpha,k,tau,rho,dataset,mc1,mc2,ce,kl,error";
pub const CURVE_HEADER: &str = "kl,mc1,mc2,ce,alpha,k,tau,rho";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\"").replace('\n', " "))
    } else {
        s.to_string()
    }
}

impl SweepRow {
    pub fn to_csv_line(&self) -> String {
        let head = format!("{},{},{},{},{}", self.alpha, self.k, self.tau, self.rho, csv_field(&self.dataset));
        match &self.outcome {
            Ok(m) => format!("{head},{},{},{},{},", m.mc1, m.mc2, m.ce, m.kl),
            Err(e) => format!("{head},,,,,{}", csv_field(e)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub taus: Vec<usize>,
    pub rhos: Vec<usize>,
    pub datasets: Vec<String>,
    /// Whether both window axes were given in the grid.
    pub windows_swept: bool,
}

impl SweepOutcome {
    pub fn results_csv(&self) -> String {
        let mut out = format!("{SWEEP_HEADER}\n");
        for r in &self.rows {
            out.push_str(&r.to_csv_line());
            out.push('\n');
        }
        out
    }

    /// Successful points of one dataset ordered by KL (ties keep grid order).
    pub fn curve_csv(&self, dataset: &str) -> String {
        let mut points: Vec<(&SweepRow, &SweepMetrics)> = self
            .rows
            .iter()
            .filter(|r| r.dataset == dataset)
            .filter_map(|r| r.outcome.as_ref().ok().map(|m| (r, m)))
            .collect();
        points.sort_by(|a, b| a.1.kl.total_cmp(&b.1.kl));
        let mut out = format!("{CURVE_HEADER}\n");
        for (r, m) in points {
            writeln!(out, "{},{},{},{},{},{},{},{}", m.kl, m.mc1, m.mc2, m.ce, r.alpha, r.k, r.tau, r.rho).unwrap();
        }
        out
    }

    /// Best MC1 over alpha and k for each `(tau, rho)` cell: one row per tau,
    /// one column per rho. Cells where every point failed are left empty.
    pub fn heatmap_csv(&self, dataset: &str) -> String {
        let mut out = String::from("tau\\rho");
        for rho in &self.rhos {
            write!(out, ",{rho}").unwrap();
        }
        out.push('\n');
        for &tau in &self.taus {
            write!(out, "{tau}").unwrap();
            for &rho in &self.rhos {
                let best = self
                    .rows
                    .iter()
                    .filter(|r| r.dataset == dataset && r.tau == tau && r.rho == rho)
                    .filter_map(|r| r.outcome.as_ref().ok().map(|m| m.mc1))
                    .reduce(f64::max);
                match best {
                    Some(v) => write!(out, ",{v:.6}").unwrap(),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Evaluates every grid point. Activations are captured once for all
/// windows, probes are trained once per tau, and the drift baseline is
/// computed once. Per-point failures become error rows. Writes
/// `config.resolved.toml`, `sweep_grid.toml`, `sweep_results.csv`,
/// `mc1_vs_kl_<dataset>.csv` and, when both tau and rho are swept,
/// `heatmap_tau_rho_<dataset>.csv`; `sweep_results.log` is appended to as
/// points finish.
pub fn run_sweep(base: &PipelineConfig, grid: &SweepGrid) -> Result<SweepOutcome> {
    let mut art = Artifacts::default();
    let result = execute_sweep(base, grid, &mut art);
    finish(&base.out_dir, art, result)
}

fn execute_sweep(base: &PipelineConfig, grid: &SweepGrid, art: &mut Artifacts) -> Result<SweepOutcome> {
    base.validate().stage("validate")?;
    let cfg = base.resolved().stage("validate")?;
    let axes = grid.axes(&cfg).stage("validate")?;
    art.add("config.resolved.toml", cfg.to_toml()?);
    art.add(
        "sweep_grid.toml",
        toml::to_string(grid).map_err(|e| Error::InvalidConfig(e.to_string()))?,
    );

    let inputs = load_inputs(&cfg).stage("load")?;
    let windows: Vec<usize> = axes.tau.iter().chain(&axes.rho).copied().collect();
    let sets = capture_all(&inputs, &cfg.capture, &windows).stage("capture")?;

    let mut probes: BTreeMap<usize, std::result::Result<Vec<HeadScore>, String>> = BTreeMap::new();
    for &tau in &axes.tau {
        probes
            .entry(tau)
            .or_insert_with(|| train_all_heads(&sets[&tau], &cfg.probe, cfg.probe_kind).map_err(|e| e.to_string()));
    }

    let baseline = DriftBaseline::new(&inputs.model, &inputs.corpus, cfg.drift.chunk_len - 1).stage("eval")?;
    let scorer = Scorer::new(&inputs.model, &ByteTokenizer, &cfg.capture).with_mode(cfg.score_mode);
    let questions: BTreeMap<&str, &[McQuestion]> =
        inputs.datasets.iter().map(|(n, q)| (n.as_str(), q.as_slice())).collect();

    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let log_path = cfg.out_dir.join("sweep_results.log");
    let mut log_file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;

    let mut rows = Vec::new();
    for &tau in &axes.tau {
        for &rho in &axes.rho {
            for &k in &axes.k {
                for &alpha in &axes.alpha {
                    let plan = probes[&tau]
                        .clone()
                        .and_then(|scores| {
                            check_k(k, &inputs.model)
                                .and_then(|_| rank_heads(&scores, k))
                                .and_then(|ranked| plan_from_activations(&sets[&rho], &ranked, cfg.direction_mode, alpha))
                                .map(|p| p.with_scope(cfg.scope))
                                .map_err(|e| e.to_string())
                        });
                    for name in &axes.datasets {
                        let outcome = plan.clone().and_then(|plan| {
                            evaluate(&scorer, Some(&plan), questions[name.as_str()], &baseline)
                                .map(|r| SweepMetrics {
                                    mc1: r.mc1,
                                    mc2: r.mc2,
                                    ce: r.ce,
                                    kl: r.kl,
                                })
                                .map_err(|e| e.to_string())
                        });
                        let row = SweepRow {
                            alpha,
                            k,
                            tau,
                            rho,
                            dataset: name.clone(),
                            outcome,
                        };
                        let line = format!("{}\n", row.to_csv_line());
                        log_file
                            .write_all(line.as_bytes())
                            .map_err(|e| Error::io(&log_path, e))?;
                        if let Err(e) = &row.outcome {
                            log::warn!("sweep point alpha={alpha} k={k} tau={tau} rho={rho} {name}: {e}");
                        }
                        rows.push(row);
                    }
                }
            }
        }
    }

    let outcome = SweepOutcome {
        rows,
        taus: axes.tau,
        rhos: axes.rho,
        datasets: axes.datasets,
        windows_swept: grid.tau.is_some() && grid.rho.is_some(),
    };
    art.add("sweep_results.csv", outcome.results_csv());
    for name in &outcome.datasets {
        art.add(format!("mc1_vs_kl_{name}.csv"), outcome.curve_csv(name));
        if outcome.windows_swept {
            art.add(format!("heatmap_tau_rho_{name}.csv"), outcome.heatmap_csv(name));
        }
    }
    Ok(outcome)
}

/// A ready-to-run config pointing at a fixture directory written by
/// [`crate::fixture::Fixture::write`].
pub fn fixture_pipeline_config(paths: &crate::fixture::FixturePaths, out_dir: &Path, alpha: f64, k: usize) -> PipelineConfig {
    PipelineConfig {
        model: paths.model.clone(),
        probe_dataset: paths.probe.clone(),
        probe_format: PairFormat::QaJsonl,
        eval_datasets: vec![EvalDatasetConfig {
            name: "fixture".into(),
            path: paths.eval.clone(),
            format: McFormat::GenericMcJsonl,
        }],
        corpus: paths.corpus.clone(),
        out_dir: out_dir.to_path_buf(),
        alpha,
        k,
        seed: 0,
        probe_kind: ProbeKind::Mlp,
        direction_mode: DirectionMode::MassMeanShift,
        scope: InterventionScope::AllPositions,
        score_mode: ScoreMode::Sum,
        prompt_prefix_file: None,
        capture: CaptureConfig {
            template: crate::fixture::TEMPLATE.to_string(),
            ..CaptureConfig::default()
        },
        probe: ProbeTrainConfig::default(),
        drift: DriftConfig {
            chunk_len: 32,
            max_chunks: 16,
        },
    }
}
