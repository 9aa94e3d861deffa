//! End-to-end orchestration: dataset preparation, optional Hyperband tuning,
//! k-fold training, probability-matrix persistence, ensemble scoring, and
//! report emission. Expensive stages are stamped with a digest of their
//! inputs and skipped when the stamp matches and the outputs still exist.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bench::{
    bench_ensemble, bench_model, emit_report, BenchConfig, BenchReport, EnsembleBenchReport,
    ReportFormat,
};
use crate::data::{
    kfold, load_csv_dataset, load_image_folder, preprocess, replicate_channels, split_holdout,
    synth_glyphs, Dataset, FoldAssignment, PreprocessSpec,
};
use crate::ensemble::{compute_metrics, Member, ProbabilityMatrix};
use crate::error::{Error, Result};
use crate::hpo::{run_hyperband, SampledConfig, SearchSpace, TuningReport};
use crate::models::{preset_spec, Family, Model, ModelSpec, PresetKind, Strategy};
use crate::report::{
    build_summary, emit_base_table, emit_combination_table, emit_summary_table,
    score_combinations, BaseEntry, Scores,
};
use crate::rng::CounterRng;
use crate::tensor::optim::OptimConfig;
use crate::train::{
    cross_validate, evaluate, load_checkpoint, restore_model, train_run, write_json_atomic,
    CvSummary, RunRecord, TrainConfig,
};

/// Where samples come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataSource {
    #[serde(rename_all = "kebab-case")]
    Csv { path: PathBuf, height: usize, width: usize },
    #[serde(rename_all = "kebab-case")]
    Folder { path: PathBuf },
    #[serde(rename_all = "kebab-case")]
    Synth {
        classes: usize,
        per_class: usize,
        #[serde(default = "d_side")]
        height: usize,
        #[serde(default = "d_side")]
        width: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn d_side() -> usize {
    32
}

/// Hyperband settings; absence of the whole block disables tuning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct HpoSettings {
    #[serde(default = "d_rmax")]
    pub r_max: usize,
    #[serde(default = "d_eta")]
    pub eta: usize,
}

fn d_rmax() -> usize {
    9
}
fn d_eta() -> usize {
    3
}

impl Default for HpoSettings {
    fn default() -> Self {
        HpoSettings { r_max: d_rmax(), eta: d_eta() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct CvSettings {
    #[serde(default = "d_k")]
    pub k: usize,
    #[serde(default = "d_fraction")]
    pub train_fraction: f64,
}

fn d_k() -> usize {
    5
}
fn d_fraction() -> f64 {
    0.8
}

impl Default for CvSettings {
    fn default() -> Self {
        CvSettings { k: d_k(), train_fraction: d_fraction() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct TrainSettings {
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub optim: OptimConfig,
}

fn d_epochs() -> usize {
    10
}
fn d_batch() -> usize {
    32
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings { epochs: d_epochs(), batch_size: d_batch(), optim: OptimConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct EnsembleSettings {
    #[serde(default = "d_min_size")]
    pub min_size: usize,
}

fn d_min_size() -> usize {
    1
}

impl Default for EnsembleSettings {
    fn default() -> Self {
        EnsembleSettings { min_size: d_min_size() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct BenchSettings {
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_reps")]
    pub repetitions: usize,
    #[serde(default = "d_warmup")]
    pub warmup: usize,
}

fn d_reps() -> usize {
    30
}
fn d_warmup() -> usize {
    5
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings { batch_size: d_batch(), repetitions: d_reps(), warmup: d_warmup() }
    }
}

/// One experiment: a dataset, the architecture grid, and every stage's knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct PipelineConfig {
    /// Dataset label used in run ids; defaults from the source.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub dataset: DataSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preprocess: Option<PreprocessSpec>,
    pub families: Vec<Family>,
    pub strategies: Vec<Strategy>,
    #[serde(default = "d_preset")]
    pub preset: PresetKind,
    #[serde(default = "d_wm")]
    pub width_mult: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hpo: Option<HpoSettings>,
    #[serde(default)]
    pub cv: CvSettings,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub ensemble: EnsembleSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bench: Option<BenchSettings>,
    /// Checkpoint whose features seed hft/fft entries. Without it, a donor
    /// model is trained per family on a synthetic pretext set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transfer_source: Option<PathBuf>,
    #[serde(default = "d_seed")]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

fn d_preset() -> PresetKind {
    PresetKind::Micro
}
fn d_wm() -> f64 {
    1.0
}
fn d_seed() -> u64 {
    7
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.families.is_empty() {
            return Err(Error::Config("at least one family is required".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::Config("at least one strategy is required".into()));
        }
        for (i, f) in self.families.iter().enumerate() {
            if self.families[..i].contains(f) {
                return Err(Error::Config(format!("family {f} listed twice")));
            }
        }
        for (i, s) in self.strategies.iter().enumerate() {
            if self.strategies[..i].contains(s) {
                return Err(Error::Config(format!("strategy {s} listed twice")));
            }
        }
        if !(self.width_mult > 0.0) {
            return Err(Error::Config(format!("width multiplier {} must be positive", self.width_mult)));
        }
        if self.cv.k < 2 {
            return Err(Error::Config(format!("cross-validation needs k >= 2, got {}", self.cv.k)));
        }
        if !(self.cv.train_fraction > 0.0 && self.cv.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train fraction {} outside (0,1)",
                self.cv.train_fraction
            )));
        }
        if self.train.epochs == 0 || self.train.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be at least 1".into()));
        }
        if let Some(h) = &self.hpo {
            if h.r_max == 0 {
                return Err(Error::Config("hpo r-max must be at least 1".into()));
            }
            if h.eta < 2 {
                return Err(Error::Config(format!("hpo eta {} must be at least 2", h.eta)));
            }
        }
        if self.ensemble.min_size == 0 {
            return Err(Error::Config("ensemble min-size must be at least 1".into()));
        }
        Ok(())
    }

    /// Dataset label: explicit name, else derived from the source.
    pub fn dataset_name(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        match &self.dataset {
            DataSource::Synth { .. } => "synth".into(),
            DataSource::Csv { path, .. } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "csv".into()),
            DataSource::Folder { path } => path
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "folder".into()),
        }
    }
}

/// Output root: explicit setting, else the FENS_HOME environment value,
/// else `fens-runs` in the working directory.
pub fn resolve_out_dir(explicit: Option<&Path>, home: Option<&str>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    if let Some(h) = home {
        if !h.is_empty() {
            return PathBuf::from(h);
        }
    }
    PathBuf::from("fens-runs")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntryState {
    Done,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct StageOutcome {
    pub name: String,
    pub cached: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct EntryStatus {
    pub family: Family,
    pub strategy: Strategy,
    pub status: EntryState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub stages: Vec<StageOutcome>,
}

/// Per-(family, strategy) status of one pipeline invocation.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ExperimentMatrix {
    pub dataset: String,
    pub entries: Vec<EntryStatus>,
}

/// Manifest row linking a trained entry to its persisted matrices.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct MemberEntry {
    pub id: String,
    pub family: Family,
    pub strategy: Strategy,
    /// Run id of the winning fold.
    pub run_id: String,
    /// Paths relative to the output root.
    pub val_matrix: String,
    pub test_matrix: String,
    pub val_score: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct MemberManifest {
    pub dataset: String,
    pub classes: usize,
    pub members: Vec<MemberEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
struct LabelsFile {
    classes: usize,
    val: Vec<usize>,
    test: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct BenchFile {
    pub members: Vec<BenchReport>,
    pub ensemble: EnsembleBenchReport,
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

fn combine(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0x1f]);
    }
    hex(&h.finalize())
}

fn file_digest(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    h.update(fs::read(path)?);
    Ok(hex(&h.finalize()))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

#[derive(Serialize, Deserialize)]
struct Stamp {
    input: String,
}

fn stamp_matches(out: &Path, stage: &str, input: &str) -> bool {
    read_json::<Stamp>(&out.join("stamps").join(format!("{stage}.json")))
        .map(|s| s.input == input)
        .unwrap_or(false)
}

fn write_stamp(out: &Path, stage: &str, input: &str) -> Result<()> {
    let dir = out.join("stamps");
    fs::create_dir_all(&dir)?;
    write_json_atomic(&dir.join(format!("{stage}.json")), &Stamp { input: input.into() })
}

fn load_source(source: &DataSource) -> Result<Dataset> {
    match source {
        DataSource::Csv { path, height, width } => load_csv_dataset(path, *height, *width),
        DataSource::Folder { path } => load_image_folder(path),
        DataSource::Synth { classes, per_class, height, width, seed } => {
            synth_glyphs(*classes, *per_class, *height, *width, *seed)
        }
    }
}

/// Load, preprocess, and split the configured dataset into the training
/// portion (with its fold assignment) and the held-out test portion.
pub fn prepare_dataset(config: &PipelineConfig) -> Result<(Dataset, Dataset, FoldAssignment)> {
    let ds = load_source(&config.dataset)?;
    let ds = match &config.preprocess {
        Some(p) => preprocess(&ds, p)?,
        None => ds,
    };
    let (train, test) = split_holdout(&ds, config.cv.train_fraction, config.seed)?;
    let folds = kfold(&train, config.cv.k, config.seed)?;
    Ok((train, test, folds))
}

struct EntryPlan {
    family: Family,
    strategy: Strategy,
    id: String,
}

struct EntryDone {
    member: Option<MemberEntry>,
    stages: Vec<StageOutcome>,
}

/// How much of an entry to execute. `Frozen` never trains: it reuses runs
/// already on disk and fails entries that lack them.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    Full,
    Tune,
    Frozen,
}

struct Ctx<'a> {
    config: &'a PipelineConfig,
    out: PathBuf,
    mode: Mode,
    train: Dataset,
    test: Dataset,
    folds: FoldAssignment,
    input: [usize; 3],
    data_digest: String,
    folds_digest: String,
    /// Donor checkpoint per family, relative to the output root.
    donors: BTreeMap<Family, PathBuf>,
    donor_errors: BTreeMap<Family, String>,
    source_override: Option<PathBuf>,
}

impl Ctx<'_> {
    fn spec_for(&self, family: Family) -> Result<ModelSpec> {
        preset_spec(family, self.config.preset, self.config.width_mult, self.input, self.train.classes)
    }

    /// Source checkpoint for a strategy, as seen from a run directory
    /// `depth` levels below the output root.
    fn source_for(&self, family: Family, strategy: Strategy, depth: usize) -> Result<Option<PathBuf>> {
        if strategy == Strategy::Tfs {
            return Ok(None);
        }
        if let Some(p) = &self.source_override {
            return Ok(Some(p.clone()));
        }
        if let Some(root_rel) = self.donors.get(&family) {
            let mut up = PathBuf::new();
            for _ in 0..depth {
                up.push("..");
            }
            return Ok(Some(up.join(root_rel)));
        }
        let detail = self
            .donor_errors
            .get(&family)
            .cloned()
            .unwrap_or_else(|| "donor training never ran".into());
        Err(Error::State(format!("no feature donor for {family}: {detail}")))
    }

    fn base_config(&self, strategy: Strategy, source: Option<PathBuf>) -> TrainConfig {
        TrainConfig {
            epochs: self.config.train.epochs,
            batch_size: self.config.train.batch_size,
            optim: self.config.train.optim,
            strategy,
            seed: self.config.seed,
            source_checkpoint: source,
        }
    }
}

/// Retrain a fold whose winning checkpoint vanished; deterministic training
/// reproduces the original run.
fn repair_record(
    spec: &ModelSpec,
    data: &Dataset,
    folds: &FoldAssignment,
    config: &TrainConfig,
    run_dir: &Path,
    rec: RunRecord,
) -> Result<RunRecord> {
    if rec.best_checkpoint(run_dir).exists() {
        return Ok(rec);
    }
    log::info!("run={} lost its best checkpoint, retraining", rec.run_id);
    fs::remove_dir_all(run_dir)?;
    train_run(spec, data, folds, rec.fold, config, run_dir)
}

fn load_cv(ctx: &Ctx, plan: &EntryPlan, spec: &ModelSpec, config: &TrainConfig) -> Option<CvSummary> {
    let runs = ctx.out.join("runs");
    let digest = spec.digest();
    let mut records = Vec::new();
    for fold in 0..ctx.folds.k {
        let dir = runs.join(format!("{}-fold{fold}-{}", plan.id, config.seed));
        let rec: RunRecord = read_json(&dir.join("record.json")).ok()?;
        if rec.spec_digest != digest
            || rec.config != *config
            || rec.epochs.len() != config.epochs
            || !rec.best_checkpoint(&dir).exists()
        {
            return None;
        }
        records.push(rec);
    }
    Some(summarize(records))
}

fn summarize(records: Vec<RunRecord>) -> CvSummary {
    let mut best = 0;
    for (i, rec) in records.iter().enumerate() {
        if rec.best_row().val_accuracy > records[best].best_row().val_accuracy {
            best = i;
        }
    }
    let mean =
        records.iter().map(|r| r.best_row().val_accuracy).sum::<f64>() / records.len() as f64;
    CvSummary {
        best_fold: records[best].fold,
        mean_val_accuracy: mean,
        records,
        failed_folds: Vec::new(),
    }
}

fn ensure_hpo(
    ctx: &Ctx,
    plan: &EntryPlan,
    spec: &ModelSpec,
    settings: &HpoSettings,
) -> Result<(SampledConfig, bool)> {
    let stage = format!("hpo-{}", plan.id);
    let report_path = ctx.out.join("hpo").join(format!("{}.json", plan.id));
    if ctx.mode == Mode::Frozen {
        let report = read_json::<TuningReport>(&report_path)
            .map_err(|_| Error::State(format!("{}: no tuning report on disk", plan.id)))?;
        return Ok((report.best().config.clone(), true));
    }
    let space = SearchSpace::default();
    let input = combine(&[
        "hpo",
        &ctx.data_digest,
        &ctx.folds_digest,
        &spec.digest(),
        &serde_json::to_string(settings)?,
        &serde_json::to_string(&space)?,
        plan.strategy.as_str(),
        &ctx.config.seed.to_string(),
    ]);
    if stamp_matches(&ctx.out, &stage, &input) {
        if let Ok(report) = read_json::<TuningReport>(&report_path) {
            return Ok((report.best().config.clone(), true));
        }
    }
    // Trials live three levels below the output root.
    let source = ctx.source_for(plan.family, plan.strategy, 3)?;
    let trial_base = ctx.out.join("hpo").join(&plan.id);
    let objective = |trial: usize, sampled: &SampledConfig, epochs: usize| -> Result<f64> {
        let mut cfg = sampled.to_train_config(epochs, plan.strategy, ctx.config.seed);
        cfg.source_checkpoint = source.clone();
        let dir = trial_base.join(format!("trial{trial:03}"));
        let rec = train_run(spec, &ctx.train, &ctx.folds, 0, &cfg, &dir)?;
        Ok(rec.best_row().val_accuracy)
    };
    let seed = CounterRng::new(ctx.config.seed, &["hpo", &plan.id]).next_u64();
    let report = run_hyperband(&space, objective, settings.r_max, settings.eta, seed, 1)?;
    fs::create_dir_all(ctx.out.join("hpo"))?;
    write_json_atomic(&report_path, &report)?;
    write_stamp(&ctx.out, &stage, &input)?;
    Ok((report.best().config.clone(), false))
}

fn ensure_cv(
    ctx: &Ctx,
    plan: &EntryPlan,
    spec: &ModelSpec,
    config: &TrainConfig,
) -> Result<(CvSummary, bool)> {
    if ctx.mode == Mode::Frozen {
        return match load_cv(ctx, plan, spec, config) {
            Some(cv) => Ok((cv, true)),
            None => Err(Error::State(format!("{}: no finished training runs on disk", plan.id))),
        };
    }
    let stage = format!("cv-{}", plan.id);
    let input = combine(&[
        "cv",
        &ctx.data_digest,
        &ctx.folds_digest,
        &spec.digest(),
        &serde_json::to_string(config)?,
    ]);
    if stamp_matches(&ctx.out, &stage, &input) {
        if let Some(cv) = load_cv(ctx, plan, spec, config) {
            return Ok((cv, true));
        }
    }
    let runs = ctx.out.join("runs");
    let cv = cross_validate(spec, &ctx.train, &ctx.folds, config, &runs, &plan.id)?;
    if !cv.failed_folds.is_empty() {
        return Err(Error::TrainFailed(format!(
            "{}: folds {:?} failed",
            plan.id, cv.failed_folds
        )));
    }
    let mut records = Vec::new();
    for rec in cv.records {
        let dir = runs.join(&rec.run_id);
        records.push(repair_record(spec, &ctx.train, &ctx.folds, config, &dir, rec)?);
    }
    let cv = summarize(records);
    write_stamp(&ctx.out, &stage, &input)?;
    Ok((cv, false))
}

fn restored_model(spec: &ModelSpec, ckpt_path: &Path) -> Result<Model<f32>> {
    let mut model = Model::build(spec.clone(), 0)?;
    restore_model(&mut model, &load_checkpoint(ckpt_path)?)?;
    Ok(model)
}

fn matrix_accuracy(matrix: &ProbabilityMatrix, labels: &[usize]) -> f64 {
    let preds = matrix.argmax_rows();
    let correct = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    correct as f64 / labels.len() as f64
}

fn ensure_eval(
    ctx: &Ctx,
    plan: &EntryPlan,
    spec: &ModelSpec,
    cv: &CvSummary,
    batch_size: usize,
) -> Result<(MemberEntry, bool)> {
    let stage = format!("eval-{}", plan.id);
    let runs = ctx.out.join("runs");
    let mut parts: Vec<String> =
        vec!["eval".into(), ctx.data_digest.clone(), spec.digest()];
    for rec in &cv.records {
        parts.push(file_digest(&rec.best_checkpoint(&runs.join(&rec.run_id)))?);
    }
    let part_refs: Vec<&str> = parts.iter().map(String::as_str).collect();
    let input = combine(&part_refs);

    let val_rel = format!("matrices/{}.val.txt", plan.id);
    let test_rel = format!("matrices/{}.test.txt", plan.id);
    let best = cv
        .records
        .iter()
        .find(|r| r.fold == cv.best_fold)
        .expect("best fold has a record");
    let entry = |val_score: f64| MemberEntry {
        id: plan.id.clone(),
        family: plan.family,
        strategy: plan.strategy,
        run_id: best.run_id.clone(),
        val_matrix: val_rel.clone(),
        test_matrix: test_rel.clone(),
        val_score,
    };

    if stamp_matches(&ctx.out, &stage, &input) {
        if let (Ok(val), Ok(_test)) = (
            ProbabilityMatrix::load(&ctx.out.join(&val_rel)),
            ProbabilityMatrix::load(&ctx.out.join(&test_rel)),
        ) {
            return Ok((entry(matrix_accuracy(&val, &ctx.train.labels)), true));
        }
    }

    // Out-of-fold validation matrix: each fold's winning checkpoint scores
    // the samples it never trained on, stitched back into dataset order.
    let n = ctx.train.len();
    let c = ctx.train.classes;
    let mut rows = vec![0.0f64; n * c];
    let mut seen = vec![false; n];
    for rec in &cv.records {
        let dir = runs.join(&rec.run_id);
        let mut model = restored_model(spec, &rec.best_checkpoint(&dir))?;
        let idx = ctx.folds.val_indices(rec.fold);
        let (_, matrix) = evaluate(&mut model, &ctx.train, &idx, batch_size)?;
        for (row, &i) in idx.iter().enumerate() {
            rows[i * c..(i + 1) * c].copy_from_slice(matrix.row(row));
            seen[i] = true;
        }
    }
    if !seen.iter().all(|&s| s) {
        return Err(Error::State(format!("{}: folds did not cover every sample", plan.id)));
    }
    let val = ProbabilityMatrix::new(n, c, rows)?;

    let mut model = restored_model(spec, &best.best_checkpoint(&runs.join(&best.run_id)))?;
    let test_idx: Vec<usize> = (0..ctx.test.len()).collect();
    let (_, test) = evaluate(&mut model, &ctx.test, &test_idx, batch_size)?;

    fs::create_dir_all(ctx.out.join("matrices"))?;
    val.save(&ctx.out.join(&val_rel))?;
    test.save(&ctx.out.join(&test_rel))?;
    write_stamp(&ctx.out, &stage, &input)?;
    Ok((entry(matrix_accuracy(&val, &ctx.train.labels)), false))
}

fn run_entry(ctx: &Ctx, plan: &EntryPlan) -> Result<EntryDone> {
    let mut stages = Vec::new();
    let spec = ctx.spec_for(plan.family)?;

    let config = if let Some(settings) = &ctx.config.hpo {
        let (sampled, cached) = ensure_hpo(ctx, plan, &spec, settings)?;
        stages.push(StageOutcome { name: "hpo".into(), cached });
        let mut cfg = sampled.to_train_config(
            ctx.config.train.epochs,
            plan.strategy,
            ctx.config.seed,
        );
        cfg.source_checkpoint = ctx.source_for(plan.family, plan.strategy, 2)?;
        cfg
    } else {
        ctx.base_config(plan.strategy, ctx.source_for(plan.family, plan.strategy, 2)?)
    };
    if ctx.mode == Mode::Tune {
        return Ok(EntryDone { member: None, stages });
    }

    let (cv, cached) = ensure_cv(ctx, plan, &spec, &config)?;
    stages.push(StageOutcome { name: "cv".into(), cached });

    let (member, cached) = ensure_eval(ctx, plan, &spec, &cv, config.batch_size)?;
    stages.push(StageOutcome { name: "eval".into(), cached });

    Ok(EntryDone { member: Some(member), stages })
}

fn run_entries(ctx: &Ctx, plans: &[EntryPlan], jobs: usize) -> Vec<Result<EntryDone>> {
    let jobs = jobs.max(1).min(plans.len().max(1));
    if jobs <= 1 {
        return plans.iter().map(|p| run_entry(ctx, p)).collect();
    }
    let cursor = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, Result<EntryDone>)>> = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::SeqCst);
                if i >= plans.len() {
                    break;
                }
                let r = run_entry(ctx, &plans[i]);
                results.lock().unwrap().push((i, r));
            });
        }
    });
    let mut v = results.into_inner().unwrap();
    v.sort_by_key(|(i, _)| *i);
    v.into_iter().map(|(_, r)| r).collect()
}

fn train_donor(ctx: &Ctx, family: Family) -> Result<PathBuf> {
    let dir = ctx.out.join("donors").join(family.to_string());
    let seed = CounterRng::new(ctx.config.seed, &["donor", family.as_str()]).next_u64();
    let [c, h, w] = ctx.input;
    let mut pretext = synth_glyphs(ctx.train.classes, 12, h, w, seed)?;
    if c != 1 {
        pretext = replicate_channels(&pretext, c)?;
    }
    let spec = preset_spec(
        family,
        ctx.config.preset,
        ctx.config.width_mult,
        ctx.input,
        pretext.classes,
    )?;
    let folds = kfold(&pretext, 2, seed)?;
    let config = TrainConfig {
        epochs: ctx.config.train.epochs,
        batch_size: ctx.config.train.batch_size,
        optim: ctx.config.train.optim,
        strategy: Strategy::Tfs,
        seed,
        source_checkpoint: None,
    };
    let rec = train_run(&spec, &pretext, &folds, 0, &config, &dir)?;
    let rec = repair_record(&spec, &pretext, &folds, &config, &dir, rec)?;
    Ok(PathBuf::from("donors")
        .join(family.to_string())
        .join(&rec.checkpoints[rec.best_epoch - 1]))
}

fn locate_donor(out: &Path, family: Family) -> Result<PathBuf> {
    let dir = out.join("donors").join(family.to_string());
    let rec: RunRecord = read_json(&dir.join("record.json"))
        .map_err(|_| Error::State(format!("no donor run on disk for {family}")))?;
    let name = &rec.checkpoints[rec.best_epoch - 1];
    if !dir.join(name).exists() {
        return Err(Error::State(format!("donor checkpoint for {family} is missing")));
    }
    Ok(PathBuf::from("donors").join(family.to_string()).join(name))
}

fn setup_ctx<'a>(config: &'a PipelineConfig, out_dir: &Path, mode: Mode) -> Result<Ctx<'a>> {
    config.validate()?;
    fs::create_dir_all(out_dir)?;
    let name = config.dataset_name();

    let mut persisted = config.clone();
    persisted.name = Some(name);
    persisted.out_dir = None;
    write_json_atomic(&out_dir.join("config.json"), &persisted)?;

    let (train, test, folds) = prepare_dataset(config)?;
    let (c, h, w) = train.chw();
    write_json_atomic(
        &out_dir.join("labels.json"),
        &LabelsFile { classes: train.classes, val: train.labels.clone(), test: test.labels.clone() },
    )?;

    let source_override = config.transfer_source.as_ref().map(|p| {
        if p.is_absolute() {
            p.clone()
        } else {
            std::env::current_dir().map(|d| d.join(p)).unwrap_or_else(|_| p.clone())
        }
    });

    let mut ctx = Ctx {
        config,
        out: out_dir.to_path_buf(),
        mode,
        data_digest: combine(&[&train.digest(), &test.digest()]),
        folds_digest: combine(&[
            &folds.k.to_string(),
            &folds.seed.to_string(),
            &serde_json::to_string(&folds.fold)?,
        ]),
        input: [c, h, w],
        train,
        test,
        folds,
        donors: BTreeMap::new(),
        donor_errors: BTreeMap::new(),
        source_override,
    };

    if config.strategies.iter().any(|&s| s != Strategy::Tfs) && ctx.source_override.is_none() {
        for &family in &config.families {
            let donor = if mode == Mode::Frozen {
                locate_donor(out_dir, family)
            } else {
                train_donor(&ctx, family)
            };
            match donor {
                Ok(p) => {
                    ctx.donors.insert(family, p);
                }
                Err(e) => {
                    log::warn!("donor for {family} failed: {e}");
                    ctx.donor_errors.insert(family, e.to_string());
                }
            }
        }
    }
    Ok(ctx)
}

fn drive(
    config: &PipelineConfig,
    out_dir: &Path,
    jobs: usize,
    mode: Mode,
) -> Result<(ExperimentMatrix, Vec<MemberEntry>, usize)> {
    let ctx = setup_ctx(config, out_dir, mode)?;
    let name = config.dataset_name();
    let mut plans = Vec::new();
    for &family in &config.families {
        for &strategy in &config.strategies {
            plans.push(EntryPlan { family, strategy, id: format!("{name}-{family}-{strategy}") });
        }
    }
    let results = run_entries(&ctx, &plans, jobs);

    let mut entries = Vec::new();
    let mut members = Vec::new();
    for (plan, result) in plans.iter().zip(results) {
        match result {
            Ok(done) => {
                entries.push(EntryStatus {
                    family: plan.family,
                    strategy: plan.strategy,
                    status: EntryState::Done,
                    error: None,
                    stages: done.stages,
                });
                members.extend(done.member);
            }
            Err(e) => {
                log::warn!("entry {} failed: {e}", plan.id);
                entries.push(EntryStatus {
                    family: plan.family,
                    strategy: plan.strategy,
                    status: EntryState::Failed,
                    error: Some(e.to_string()),
                    stages: Vec::new(),
                });
            }
        }
    }
    Ok((ExperimentMatrix { dataset: name, entries }, members, ctx.train.classes))
}

/// Run the whole experiment under `out_dir`: donors (when transfer
/// strategies are requested), then per-entry tuning/training/evaluation in a
/// bounded worker pool, then the member manifest, ensemble scoring, and
/// reports. Finished stages are skipped on reruns.
pub fn run_pipeline(config: &PipelineConfig, out_dir: &Path, jobs: usize) -> Result<ExperimentMatrix> {
    let (matrix, members, classes) = drive(config, out_dir, jobs, Mode::Full)?;
    write_json_atomic(&out_dir.join("matrix.json"), &matrix)?;
    if members.is_empty() {
        return Err(Error::TrainFailed("every matrix entry failed".into()));
    }
    write_json_atomic(
        &out_dir.join("members.json"),
        &MemberManifest { dataset: matrix.dataset.clone(), classes, members },
    )?;
    cmd_report(out_dir)?;
    Ok(matrix)
}

/// Hyperparameter search only: every entry runs its tuning stage and stores
/// the report under `hpo/`, without cross-validation or evaluation.
pub fn run_tune(config: &PipelineConfig, out_dir: &Path, jobs: usize) -> Result<ExperimentMatrix> {
    if config.hpo.is_none() {
        return Err(Error::Config("tuning requires hpo settings".into()));
    }
    let (matrix, _, _) = drive(config, out_dir, jobs, Mode::Tune)?;
    Ok(matrix)
}

/// Rebuild probability matrices and the member manifest from runs already on
/// disk; never trains. Entries without finished runs are marked failed.
pub fn run_eval(config: &PipelineConfig, out_dir: &Path, jobs: usize) -> Result<MemberManifest> {
    let (matrix, members, classes) = drive(config, out_dir, jobs, Mode::Frozen)?;
    write_json_atomic(&out_dir.join("matrix.json"), &matrix)?;
    if members.is_empty() {
        return Err(Error::State("no entry has finished training runs; run train first".into()));
    }
    let manifest = MemberManifest { dataset: matrix.dataset, classes, members };
    write_json_atomic(&out_dir.join("members.json"), &manifest)?;
    Ok(manifest)
}

/// Benchmark every manifest member plus their soft-voting ensemble and store
/// `bench.json`; reports pick the table up on the next emission. Reuses the
/// previous measurement when inputs are unchanged.
pub fn run_bench(config: &PipelineConfig, out_dir: &Path) -> Result<bool> {
    let settings = config.bench.clone().unwrap_or_default();
    let manifest: MemberManifest = read_json(&out_dir.join("members.json"))
        .map_err(|_| Error::State("no trained members to benchmark; run training first".into()))?;
    let (train, _, _) = prepare_dataset(config)?;
    let (c, h, w) = train.chw();
    let bench_config = BenchConfig {
        batch_size: settings.batch_size,
        repetitions: settings.repetitions,
        warmup: settings.warmup,
        input: [c, h, w],
    };
    let input = combine(&[
        "bench",
        &file_digest(&out_dir.join("members.json"))?,
        &serde_json::to_string(&settings)?,
    ]);
    if stamp_matches(out_dir, "bench", &input)
        && read_json::<BenchFile>(&out_dir.join("bench.json")).is_ok()
    {
        return Ok(true);
    }
    let mut specs = Vec::new();
    let mut reports = Vec::new();
    for m in &manifest.members {
        let spec =
            preset_spec(m.family, config.preset, config.width_mult, [c, h, w], manifest.classes)?;
        reports.push(bench_model(&m.id, &spec, &bench_config)?);
        specs.push((m.id.clone(), spec));
    }
    let ensemble = bench_ensemble("ensemble-all", &specs, &bench_config)?;
    write_json_atomic(&out_dir.join("bench.json"), &BenchFile { members: reports, ensemble })?;
    write_stamp(out_dir, "bench", &input)?;
    Ok(false)
}

/// Scores recomputed from persisted matrices, as the report tables show them.
pub struct DiskScores {
    pub base: Vec<BaseEntry>,
    pub combos: Vec<crate::report::ComboRow>,
    pub summary: Vec<crate::report::SummaryRow>,
}

/// Re-derive every table's contents from artifacts on disk without writing
/// anything.
pub fn compute_scores(out_dir: &Path) -> Result<DiskScores> {
    let manifest: MemberManifest = read_json(&out_dir.join("members.json"))
        .map_err(|_| Error::State("no completed entries; run training first".into()))?;
    if manifest.members.is_empty() {
        return Err(Error::State("no completed entries; run training first".into()));
    }
    let labels: LabelsFile = read_json(&out_dir.join("labels.json"))?;
    let config: PipelineConfig = read_json(&out_dir.join("config.json"))?;

    let members = manifest
        .members
        .iter()
        .map(|e| {
            Ok(Member {
                id: e.id.clone(),
                family: e.family,
                strategy: e.strategy,
                val: ProbabilityMatrix::load(&out_dir.join(&e.val_matrix))?,
                test: ProbabilityMatrix::load(&out_dir.join(&e.test_matrix))?,
            })
        })
        .collect::<Result<Vec<Member>>>()?;

    let base = members
        .iter()
        .map(|m| {
            let metrics = compute_metrics(&labels.test, &m.test.argmax_rows(), labels.classes)?;
            Ok(BaseEntry { family: m.family, strategy: m.strategy, scores: Scores::from(&metrics) })
        })
        .collect::<Result<Vec<BaseEntry>>>()?;
    let combos =
        score_combinations(&members, &labels.val, &labels.test, config.ensemble.min_size)?;
    let summary = build_summary(&base, &combos)?;
    Ok(DiskScores { base, combos, summary })
}

/// Emit every comparison table from the artifacts on disk. Writes only under
/// `reports/`; everything it reads was produced by earlier stages.
pub fn cmd_report(out_dir: &Path) -> Result<Vec<PathBuf>> {
    let scores = compute_scores(out_dir)?;
    let dir = out_dir.join("reports");
    fs::create_dir_all(&dir)?;
    let mut written = Vec::new();
    let mut emit = |name: &str, text: String| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, text)?;
        written.push(path);
        Ok(())
    };
    emit("base.csv", emit_base_table(&scores.base, ReportFormat::Csv))?;
    emit("base.md", emit_base_table(&scores.base, ReportFormat::Markdown))?;
    emit("combinations.csv", emit_combination_table(&scores.combos, ReportFormat::Csv))?;
    emit("combinations.md", emit_combination_table(&scores.combos, ReportFormat::Markdown))?;
    emit("summary.csv", emit_summary_table(&scores.summary, ReportFormat::Csv))?;
    emit("summary.md", emit_summary_table(&scores.summary, ReportFormat::Markdown))?;
    if let Ok(bench) = read_json::<BenchFile>(&out_dir.join("bench.json")) {
        let mut rows = bench.members.clone();
        rows.push(bench.ensemble.combined.clone());
        emit("bench.csv", emit_report(&rows, ReportFormat::Csv))?;
        emit("bench.md", emit_report(&rows, ReportFormat::Markdown))?;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> PipelineConfig {
        PipelineConfig {
            name: None,
            dataset: DataSource::Synth { classes: 4, per_class: 6, height: 32, width: 32, seed: 9 },
            preprocess: None,
            families: vec![Family::Shuffle],
            strategies: vec![Strategy::Tfs],
            preset: PresetKind::Micro,
            width_mult: 0.5,
            hpo: None,
            cv: CvSettings { k: 2, train_fraction: 0.75 },
            train: TrainSettings { epochs: 2, batch_size: 8, optim: OptimConfig::default() },
            ensemble: EnsembleSettings { min_size: 1 },
            bench: None,
            transfer_source: None,
            seed: 11,
            out_dir: None,
        }
    }

    fn read(path: &Path) -> String {
        String::from_utf8(fs::read(path).unwrap()).unwrap()
    }

    #[test]
    fn config_defaults_and_validation() {
        let json = r#"{
            "dataset": {"kind": "synth", "classes": 4, "per-class": 6},
            "families": ["shuffle"],
            "strategies": ["tfs"]
        }"#;
        let cfg: PipelineConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.preset, PresetKind::Micro);
        assert_eq!(cfg.width_mult, 1.0);
        assert_eq!((cfg.cv.k, cfg.cv.train_fraction), (5, 0.8));
        assert_eq!((cfg.train.epochs, cfg.train.batch_size), (10, 32));
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.ensemble.min_size, 1);
        assert_eq!(cfg.dataset_name(), "synth");
        cfg.validate().unwrap();

        let mut bad = cfg.clone();
        bad.families.clear();
        assert!(bad.validate().is_err());
        let mut bad = cfg.clone();
        bad.strategies = vec![Strategy::Tfs, Strategy::Tfs];
        assert!(bad.validate().is_err());
        let mut bad = cfg.clone();
        bad.cv.k = 1;
        assert!(bad.validate().is_err());
        let mut bad = cfg;
        bad.cv.train_fraction = 1.0;
        assert!(bad.validate().is_err());

        assert!(serde_json::from_str::<PipelineConfig>("{\"bogus\": 1}").is_err());
    }

    #[test]
    fn out_dir_resolution_order() {
        assert_eq!(
            resolve_out_dir(Some(Path::new("x")), Some("/home/me/fens")),
            PathBuf::from("x")
        );
        assert_eq!(resolve_out_dir(None, Some("/home/me/fens")), PathBuf::from("/home/me/fens"));
        assert_eq!(resolve_out_dir(None, Some("")), PathBuf::from("fens-runs"));
        assert_eq!(resolve_out_dir(None, None), PathBuf::from("fens-runs"));
    }

    #[test]
    fn synth_pipeline_end_to_end_and_relocatable() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let config = tiny_config();
        let matrix = run_pipeline(&config, &out, 1).unwrap();
        assert_eq!(matrix.entries.len(), 1);
        assert_eq!(matrix.entries[0].status, EntryState::Done);

        let manifest: MemberManifest = read_json(&out.join("members.json")).unwrap();
        assert_eq!(manifest.members.len(), 1);
        let m = &manifest.members[0];
        assert_eq!(m.id, "synth-shuffle-tfs");
        assert!(m.run_id.starts_with("synth-shuffle-tfs-fold"));
        assert!(out.join(&m.val_matrix).exists());
        assert!(out.join(&m.test_matrix).exists());
        assert!((0.0..=1.0).contains(&m.val_score));

        let combos = read(&out.join("reports/combinations.csv"));
        let names: Vec<&str> =
            combos.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(names, ["All-Ens", "TFS-Ens", "Shuffle-Ens", "Best-Ens"]);
        let summary = read(&out.join("reports/summary.csv"));
        assert_eq!(summary.lines().count(), 3);

        // Val matrix is out-of-fold over the whole training split.
        let labels: LabelsFile = read_json(&out.join("labels.json")).unwrap();
        let val = ProbabilityMatrix::load(&out.join(&m.val_matrix)).unwrap();
        assert_eq!(val.n(), labels.val.len());
        assert_eq!(labels.val.len() + labels.test.len(), 24);

        // Moving the whole tree must not break report generation.
        let moved = dir.path().join("elsewhere");
        fs::rename(&out, &moved).unwrap();
        let before = read(&moved.join("reports/summary.csv"));
        cmd_report(&moved).unwrap();
        assert_eq!(read(&moved.join("reports/summary.csv")), before);
    }

    #[test]
    fn rerun_skips_all_stages_and_reproduces_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let config = tiny_config();
        let first = run_pipeline(&config, &out, 1).unwrap();
        assert!(first.entries[0].stages.iter().all(|s| !s.cached));
        let snapshot: Vec<(PathBuf, String)> = ["reports/combinations.csv", "reports/summary.csv", "reports/base.csv", "members.json"]
            .iter()
            .map(|p| (out.join(p), read(&out.join(p))))
            .collect();

        let second = run_pipeline(&config, &out, 1).unwrap();
        assert!(second.entries[0].stages.iter().all(|s| s.cached), "{:?}", second.entries[0].stages);
        for (path, before) in snapshot {
            assert_eq!(read(&path), before, "{path:?} changed on rerun");
        }
    }

    #[test]
    fn deleting_a_checkpoint_recomputes_only_that_entry() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let mut config = tiny_config();
        config.families = vec![Family::Shuffle, Family::Mobile];
        run_pipeline(&config, &out, 1).unwrap();

        let manifest: MemberManifest = read_json(&out.join("members.json")).unwrap();
        let victim = &manifest.members[0];
        let run_dir = out.join("runs").join(&victim.run_id);
        let rec: RunRecord = read_json(&run_dir.join("record.json")).unwrap();
        fs::remove_file(rec.best_checkpoint(&run_dir)).unwrap();

        let matrix = run_pipeline(&config, &out, 1).unwrap();
        let fresh: Vec<bool> = matrix.entries[0].stages.iter().map(|s| !s.cached).collect();
        assert!(fresh.contains(&true), "damaged entry must recompute");
        assert!(
            matrix.entries[1].stages.iter().all(|s| s.cached),
            "untouched entry must stay cached"
        );
        assert!(rec.best_checkpoint(&run_dir).exists(), "checkpoint restored");
    }

    #[test]
    fn failed_entries_do_not_block_the_rest() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let mut config = tiny_config();
        config.strategies = vec![Strategy::Tfs, Strategy::Hft];
        config.transfer_source = Some(dir.path().join("missing.ckpt"));
        let matrix = run_pipeline(&config, &out, 1).unwrap();
        assert_eq!(matrix.entries[0].status, EntryState::Done);
        assert_eq!(matrix.entries[1].status, EntryState::Failed);
        assert!(matrix.entries[1].error.is_some());
        let manifest: MemberManifest = read_json(&out.join("members.json")).unwrap();
        assert_eq!(manifest.members.len(), 1);
        assert!(out.join("reports/summary.csv").exists());
    }

    #[test]
    fn transfer_entries_train_against_a_donor() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let mut config = tiny_config();
        config.strategies = vec![Strategy::Hft];
        let matrix = run_pipeline(&config, &out, 1).unwrap();
        assert_eq!(matrix.entries[0].status, EntryState::Done, "{:?}", matrix.entries[0].error);
        assert!(out.join("donors/shuffle/record.json").exists());
        let manifest: MemberManifest = read_json(&out.join("members.json")).unwrap();
        assert_eq!(manifest.members[0].strategy, Strategy::Hft);
        // The run's stored config references the donor relatively.
        let run_dir = out.join("runs").join(&manifest.members[0].run_id);
        let stored: TrainConfig = read_json(&run_dir.join("config.json")).unwrap();
        let src = stored.source_checkpoint.unwrap();
        assert!(src.is_relative(), "stored donor path must be relative, got {src:?}");
    }

    #[test]
    fn eval_reuses_runs_and_tune_stops_after_search() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let config = tiny_config();

        assert!(matches!(run_eval(&config, &out, 1), Err(Error::State(_))));
        assert!(matches!(run_tune(&config, &out, 1), Err(Error::Config(_))));

        run_pipeline(&config, &out, 1).unwrap();
        let before = read(&out.join("members.json"));
        let manifest = run_eval(&config, &out, 1).unwrap();
        assert_eq!(manifest.members.len(), 1);
        assert_eq!(read(&out.join("members.json")), before);

        let mut tuned = config;
        tuned.hpo = Some(HpoSettings { r_max: 1, eta: 2 });
        let matrix = run_tune(&tuned, &out, 1).unwrap();
        assert_eq!(matrix.entries[0].status, EntryState::Done);
        let names: Vec<&str> =
            matrix.entries[0].stages.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["hpo"]);
        assert!(out.join("hpo/synth-shuffle-tfs.json").exists());
    }

    #[test]
    fn tuned_pipeline_records_winner_and_reuses_it() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let mut config = tiny_config();
        config.hpo = Some(HpoSettings { r_max: 2, eta: 2 });
        let matrix = run_pipeline(&config, &out, 1).unwrap();
        let names: Vec<&str> =
            matrix.entries[0].stages.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["hpo", "cv", "eval"]);
        let report: TuningReport =
            read_json(&out.join("hpo/synth-shuffle-tfs.json")).unwrap();
        assert!(!report.trials.is_empty());
        let winner = report.best().config.clone();
        // The CV runs must have trained with the winning sample.
        let manifest: MemberManifest = read_json(&out.join("members.json")).unwrap();
        let run_dir = out.join("runs").join(&manifest.members[0].run_id);
        let stored: TrainConfig = read_json(&run_dir.join("config.json")).unwrap();
        assert_eq!(stored.optim.lr, winner.learning_rate);
        assert_eq!(stored.batch_size, winner.batch_size);

        let second = run_pipeline(&config, &out, 1).unwrap();
        assert!(second.entries[0].stages.iter().all(|s| s.cached));
    }
}
