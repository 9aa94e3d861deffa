//! Training loop, binary checkpoints, and transfer-strategy initialization.
//!
//! A run owns a directory: `config.json`, one `epoch_NNN.ckpt` per finished
//! epoch (parameters, running statistics, and optimizer moments), and a
//! `record.json` with the per-epoch metric rows. Interrupted runs resume from
//! the latest checkpoint covered by the record and reproduce the exact
//! metrics of an uninterrupted run.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FoldAssignment};
use crate::ensemble::{self, Metrics, ProbabilityMatrix};
use crate::models::{Model, ModelSpec, Strategy};
use crate::rng::CounterRng;
use crate::tensor::optim::{OptimConfig, Optimizer};
use crate::tensor::tape::Tape;
use crate::tensor::Tensor;
use crate::{Error, Result};

const CKPT_MAGIC: &[u8; 4] = b"FENS";
const CKPT_VERSION: u32 = 1;

/// Count of training loops currently running in this process; the benchmark
/// harness refuses to measure while this is non-zero.
pub(crate) static ACTIVE_TRAINING: AtomicUsize = AtomicUsize::new(0);

pub(crate) struct TrainGuard;

impl TrainGuard {
    pub(crate) fn new() -> Self {
        ACTIVE_TRAINING.fetch_add(1, Ordering::SeqCst);
        TrainGuard
    }
}

impl Drop for TrainGuard {
    fn drop(&mut self) {
        ACTIVE_TRAINING.fetch_sub(1, Ordering::SeqCst);
    }
}

/// One training run: optimizer settings plus schedule and strategy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: OptimConfig,
    pub strategy: Strategy,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_checkpoint: Option<PathBuf>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.optim.lr.is_finite() && self.optim.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.optim.lr)));
        }
        if self.optim.weight_decay < 0.0 {
            return Err(Error::Config("weight decay must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.optim.momentum) {
            return Err(Error::Config(format!("momentum {} must be in [0, 1)", self.optim.momentum)));
        }
        match self.strategy {
            Strategy::Tfs if self.source_checkpoint.is_some() => Err(Error::Config(
                "training from scratch does not take a source checkpoint".into(),
            )),
            Strategy::Hft | Strategy::Fft if self.source_checkpoint.is_none() => Err(Error::Config(
                format!("{} requires a source checkpoint", self.strategy),
            )),
            _ => Ok(()),
        }
    }
}

/// JSON metadata block stored inside a checkpoint.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct CheckpointMeta {
    pub spec_digest: String,
    pub feature_digest: String,
    pub epoch: usize,
    pub fold: usize,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub rng_digest: String,
    pub optim_step: u64,
}

/// A parsed checkpoint: metadata plus named tensors in file order.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

/// Write a checkpoint atomically: serialize to a sibling temp file, then rename.
pub fn save_checkpoint(path: &Path, meta: &CheckpointMeta, tensors: &[(String, Tensor<f32>)]) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CKPT_MAGIC);
    buf.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    let meta_json = serde_json::to_vec(meta)?;
    buf.extend_from_slice(&(meta_json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&meta_json);
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(0u8);
        buf.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let tmp = path.with_extension("ckpt.tmp");
    std::fs::write(&tmp, &buf)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint(format!(
                "{}: truncated while reading {what} ({} of {} bytes left)",
                self.path,
                self.buf.len() - self.pos,
                n
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let buf = std::fs::read(path)?;
    let mut r = ByteReader { buf: &buf, pos: 0, path: path.display().to_string() };
    if r.take(4, "magic")? != CKPT_MAGIC {
        return Err(Error::Checkpoint(format!("{}: not a checkpoint file", path.display())));
    }
    let version = r.u32("version")?;
    if version != CKPT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: version {version}, this build reads {CKPT_VERSION}",
            path.display()
        )));
    }
    let meta_len = r.u64("metadata length")? as usize;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len, "metadata")?)?;
    let mut tensors = Vec::new();
    while !r.done() {
        let name_len = r.u32("name length")? as usize;
        let name = String::from_utf8(r.take(name_len, "name")?.to_vec())
            .map_err(|_| Error::Checkpoint(format!("{}: tensor name is not UTF-8", path.display())))?;
        let dtype = r.take(1, "dtype")?[0];
        if dtype != 0 {
            return Err(Error::Checkpoint(format!(
                "{}: tensor {name} has unsupported dtype {dtype}",
                path.display()
            )));
        }
        let rank = r.u32("rank")? as usize;
        if rank > 8 {
            return Err(Error::Checkpoint(format!("{}: tensor {name} has rank {rank}", path.display())));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("dimension")? as usize);
        }
        let len: usize = shape.iter().product();
        let raw = r.take(len * 4, &format!("payload of {name}"))?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((name, Tensor::new(shape, data)?));
    }
    Ok(Checkpoint { meta, tensors })
}

fn snapshot_tensors(model: &Model<f32>, optimizer: &Optimizer<f32>) -> Vec<(String, Tensor<f32>)> {
    let mut out: Vec<(String, Tensor<f32>)> = model
        .store
        .slots()
        .iter()
        .map(|s| (s.name.clone(), s.value.clone()))
        .collect();
    out.extend(optimizer.state_tensors(&model.store));
    out
}

/// Restore every model parameter from a checkpoint of the same
/// architecture. The parameter name sets must match exactly; `optim.*`
/// records are ignored here.
pub fn restore_model(model: &mut Model<f32>, ckpt: &Checkpoint) -> Result<()> {
    let mut seen = vec![false; model.store.slots().len()];
    for (name, t) in &ckpt.tensors {
        if name.starts_with("optim.") {
            continue;
        }
        let idx = model
            .store
            .find(name)
            .ok_or_else(|| Error::Checkpoint(format!("checkpoint has unexpected parameter {name}")))?;
        if seen[idx] {
            return Err(Error::Checkpoint(format!("checkpoint repeats parameter {name}")));
        }
        let slot = model.store.slot_mut(idx);
        if slot.value.shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter {name}: checkpoint shape {:?} vs model shape {:?}",
                t.shape(),
                slot.value.shape()
            )));
        }
        slot.value = t.clone();
        seen[idx] = true;
    }
    if let Some(i) = seen.iter().position(|&s| !s) {
        return Err(Error::Checkpoint(format!(
            "checkpoint is missing parameter {}",
            model.store.slot(i).name
        )));
    }
    Ok(())
}

/// `restore_model` plus the optimizer moments, for resuming a run.
fn restore_exact(model: &mut Model<f32>, optimizer: &mut Optimizer<f32>, ckpt: &Checkpoint) -> Result<()> {
    restore_model(model, ckpt)?;
    let moments: Vec<(String, Tensor<f32>)> = ckpt
        .tensors
        .iter()
        .filter(|(n, _)| n.starts_with("optim."))
        .cloned()
        .collect();
    optimizer.load_state(&model.store, ckpt.meta.optim_step, &moments)?;
    Ok(())
}

/// Build a model and initialize it for the configured strategy: fresh
/// parameters for tfs, donor features for hft and fft. With hft the head is
/// taken from the donor only when its shape still fits; a changed class
/// count keeps the fresh head.
pub fn init_model(spec: &ModelSpec, config: &TrainConfig) -> Result<Model<f32>> {
    config.validate()?;
    let mut model: Model<f32> = Model::build(spec.clone(), config.seed)?;
    if let Some(src) = &config.source_checkpoint {
        let ckpt = load_checkpoint(src)?;
        if ckpt.meta.feature_digest != spec.feature_digest() {
            return Err(Error::Checkpoint(format!(
                "{}: source checkpoint trained a different feature extractor",
                src.display()
            )));
        }
        for i in 0..model.store.slots().len() {
            let (name, head, shape) = {
                let s = model.store.slot(i);
                (s.name.clone(), s.head, s.value.shape().to_vec())
            };
            match ckpt.tensor(&name) {
                Some(t) if t.shape() == shape => {
                    model.store.slot_mut(i).value = t.clone();
                }
                Some(t) if !head => {
                    return Err(Error::Checkpoint(format!(
                        "feature parameter {name}: source shape {:?} vs model shape {:?}",
                        t.shape(),
                        shape
                    )));
                }
                None if !head => {
                    return Err(Error::Checkpoint(format!("source checkpoint lacks feature parameter {name}")));
                }
                // Head mismatch or absence: the fresh initialization stands.
                _ => {}
            }
        }
    }
    model.apply_strategy(config.strategy);
    Ok(model)
}

/// One row of the per-epoch training record.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub wall_secs: f64,
}

/// Everything a finished (or resumed) run reports.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct RunRecord {
    pub run_id: String,
    pub spec_digest: String,
    pub fold: usize,
    pub config: TrainConfig,
    pub epochs: Vec<EpochRow>,
    pub checkpoints: Vec<String>,
    /// Epoch number with the highest validation accuracy; ties go to the
    /// earliest epoch.
    pub best_epoch: usize,
}

impl RunRecord {
    pub fn best_row(&self) -> &EpochRow {
        self.epochs
            .iter()
            .find(|r| r.epoch == self.best_epoch)
            .expect("best epoch is recorded")
    }

    /// Checkpoint file of the best epoch, under `run_dir`. The record itself
    /// stores bare file names so run directories stay relocatable.
    pub fn best_checkpoint(&self, run_dir: &Path) -> PathBuf {
        run_dir.join(&self.checkpoints[self.best_epoch - 1])
    }

    fn recompute_best(&mut self) {
        let mut best = 0;
        for (i, row) in self.epochs.iter().enumerate() {
            if row.val_accuracy > self.epochs[best].val_accuracy {
                best = i;
            }
        }
        self.best_epoch = self.epochs[best].epoch;
    }
}

pub(crate) fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, serde_json::to_vec_pretty(value)?)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn ckpt_name(epoch: usize) -> String {
    format!("epoch_{epoch:03}.ckpt")
}

/// Numerically stable mean cross-entropy and accuracy from raw logits.
fn scores_from_logits(logits: &Tensor<f32>, labels: &[usize]) -> (f64, f64) {
    let (n, c) = (logits.dim(0), logits.dim(1));
    let mut loss = 0.0;
    let mut correct = 0usize;
    for i in 0..n {
        let row = &logits.data()[i * c..(i + 1) * c];
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max) as f64;
        let lse = max + row.iter().map(|&v| ((v as f64) - max).exp()).sum::<f64>().ln();
        loss += lse - row[labels[i]] as f64;
        let pred = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
            .unwrap()
            .0;
        if pred == labels[i] {
            correct += 1;
        }
    }
    (loss / n as f64, correct as f64 / n as f64)
}

/// Inference pass over `indices`, in batches: probability matrix plus
/// metrics from the ensemble module.
pub fn evaluate(
    model: &mut Model<f32>,
    data: &Dataset,
    indices: &[usize],
    batch_size: usize,
) -> Result<(Metrics, ProbabilityMatrix)> {
    if model.spec.classes != data.classes {
        return Err(Error::Config(format!(
            "model head has {} classes, dataset has {}",
            model.spec.classes, data.classes
        )));
    }
    if indices.is_empty() {
        return Err(Error::Dim("evaluation needs at least one sample".into()));
    }
    let mut rows: Vec<f64> = Vec::with_capacity(indices.len() * data.classes);
    let mut labels: Vec<usize> = Vec::with_capacity(indices.len());
    for chunk in indices.chunks(batch_size.max(1)) {
        let (batch, ys) = data.batch(chunk);
        let logits = model.forward_logits(&batch)?;
        let probs = ProbabilityMatrix::from_logits(&logits)?;
        rows.extend_from_slice(probs.data());
        labels.extend(ys);
    }
    let matrix = ProbabilityMatrix::new(indices.len(), data.classes, rows)?;
    let metrics = ensemble::compute_metrics(&labels, &matrix.argmax_rows(), data.classes)?;
    Ok((metrics, matrix))
}

fn val_scores(model: &mut Model<f32>, data: &Dataset, indices: &[usize], batch_size: usize) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut acc = 0.0;
    for chunk in indices.chunks(batch_size.max(1)) {
        let (batch, ys) = data.batch(chunk);
        let logits = model.forward_logits(&batch)?;
        let (l, a) = scores_from_logits(&logits, &ys);
        loss += l * chunk.len() as f64;
        acc += a * chunk.len() as f64;
    }
    Ok((loss / indices.len() as f64, acc / indices.len() as f64))
}

/// Find the newest epoch that both a loadable checkpoint and the record
/// cover, so a resumed run continues from durable state.
fn resume_point(run_dir: &Path, spec_digest: &str) -> Option<(usize, RunRecord, Checkpoint)> {
    let record: RunRecord =
        serde_json::from_slice(&std::fs::read(run_dir.join("record.json")).ok()?).ok()?;
    if record.spec_digest != spec_digest {
        return None;
    }
    for row in record.epochs.iter().rev() {
        let path = run_dir.join(ckpt_name(row.epoch));
        if let Ok(ckpt) = load_checkpoint(&path) {
            if ckpt.meta.spec_digest == spec_digest && ckpt.meta.epoch == row.epoch {
                let mut rec = record.clone();
                rec.epochs.truncate(
                    rec.epochs.iter().position(|r| r.epoch == row.epoch).map_or(0, |i| i + 1),
                );
                rec.checkpoints.truncate(rec.epochs.len());
                return Some((row.epoch, rec, ckpt));
            }
        }
    }
    None
}

/// Train one fold. The run directory gains `config.json`, per-epoch
/// checkpoints, and `record.json`; calling again with the same arguments
/// resumes (or returns the finished record unchanged). A non-finite training
/// loss aborts the run with a `TrainFailed` error.
pub fn train_run(
    spec: &ModelSpec,
    data: &Dataset,
    folds: &FoldAssignment,
    fold: usize,
    config: &TrainConfig,
    run_dir: &Path,
) -> Result<RunRecord> {
    let _guard = TrainGuard::new();
    config.validate()?;
    spec.validate()?;
    if data.classes != spec.classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, model expects {}",
            data.classes, spec.classes
        )));
    }
    if fold >= folds.k {
        return Err(Error::Config(format!("fold {fold} out of range for k={}", folds.k)));
    }
    let spec_digest = spec.digest();
    let run_id = run_dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .ok_or_else(|| Error::Config("run directory needs a name".into()))?;
    std::fs::create_dir_all(run_dir)?;

    let config_path = run_dir.join("config.json");
    if config_path.exists() {
        // A resumed run may extend the epoch budget; everything else must match.
        let mut stored: TrainConfig = serde_json::from_slice(&std::fs::read(&config_path)?)?;
        stored.epochs = config.epochs;
        if stored != *config {
            return Err(Error::Config(format!(
                "{} already holds a different config",
                config_path.display()
            )));
        }
    }
    write_json_atomic(&config_path, config)?;

    let train_idx = folds.train_indices(fold);
    let val_idx = folds.val_indices(fold);
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::Config(format!("fold {fold} has an empty split")));
    }

    // A relative source checkpoint is anchored at the run directory, so run
    // trees stay relocatable; the stored config keeps the relative form.
    let mut init_config = config.clone();
    if let Some(src) = &config.source_checkpoint {
        if src.is_relative() {
            init_config.source_checkpoint = Some(run_dir.join(src));
        }
    }
    let mut model = init_model(spec, &init_config)?;
    let mut optimizer: Optimizer<f32> = Optimizer::new(config.optim, model.store.slots().len());
    let mut record = RunRecord {
        run_id: run_id.clone(),
        spec_digest: spec_digest.clone(),
        fold,
        config: config.clone(),
        epochs: Vec::new(),
        checkpoints: Vec::new(),
        best_epoch: 0,
    };
    let mut start = 1usize;
    if let Some((epoch, rec, ckpt)) = resume_point(run_dir, &spec_digest) {
        restore_exact(&mut model, &mut optimizer, &ckpt)?;
        record = rec;
        record.config = config.clone();
        record.run_id = run_id.clone();
        start = epoch + 1;
        log::info!("run={run_id} resume epoch={epoch}");
    }
    if start > config.epochs {
        record.epochs.truncate(config.epochs);
        record.checkpoints.truncate(config.epochs);
        record.recompute_best();
        return Ok(record);
    }

    for epoch in start..=config.epochs {
        let t0 = Instant::now();
        let mut rng = CounterRng::new(config.seed, &["shuffle", &fold.to_string(), &epoch.to_string()]);
        let rng_digest = rng.digest();
        let mut order = train_idx.clone();
        rng.shuffle(&mut order);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let (batch, ys) = data.batch(chunk);
            let mut tape: Tape<f32> = Tape::new();
            let x = tape.leaf(batch);
            let logits = model.forward_on_tape(&mut tape, x, true)?;
            let loss = tape.softmax_cross_entropy(logits, &ys)?;
            let loss_val = tape.value(loss).item() as f64;
            if !loss_val.is_finite() {
                return Err(Error::TrainFailed(format!(
                    "run {run_id}: non-finite loss {loss_val} at epoch {epoch}"
                )));
            }
            loss_sum += loss_val * chunk.len() as f64;
            let probs = tape.probabilities(loss)?;
            let c = probs.dim(1);
            for (i, &y) in ys.iter().enumerate() {
                let row = &probs.data()[i * c..(i + 1) * c];
                let pred = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
                    .unwrap()
                    .0;
                if pred == y {
                    correct += 1;
                }
            }
            let grads = tape.backward(loss)?.param_grads(&tape);
            optimizer.step(&mut model.store, &grads)?;
        }

        let (val_loss, val_accuracy) = val_scores(&mut model, data, &val_idx, config.batch_size)?;
        let meta = CheckpointMeta {
            spec_digest: spec_digest.clone(),
            feature_digest: spec.feature_digest(),
            epoch,
            fold,
            val_loss,
            val_accuracy,
            rng_digest,
            optim_step: optimizer.step_count(),
        };
        let ckpt_path = run_dir.join(ckpt_name(epoch));
        save_checkpoint(&ckpt_path, &meta, &snapshot_tensors(&model, &optimizer))?;

        record.epochs.push(EpochRow {
            epoch,
            train_loss: loss_sum / train_idx.len() as f64,
            train_accuracy: correct as f64 / train_idx.len() as f64,
            val_loss,
            val_accuracy,
            wall_secs: t0.elapsed().as_secs_f64(),
        });
        record.checkpoints.push(ckpt_name(epoch));
        record.recompute_best();
        write_json_atomic(&run_dir.join("record.json"), &record)?;
        log::info!(
            "run={run_id} epoch={epoch} train_loss={:.4} val_acc={:.4}",
            record.epochs.last().unwrap().train_loss,
            val_accuracy
        );
    }
    Ok(record)
}

/// Cross-validation outcome: the per-fold records that finished, which folds
/// failed, and the winning fold (highest best-epoch validation accuracy,
/// ties to the lowest fold index).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct CvSummary {
    pub records: Vec<RunRecord>,
    pub failed_folds: Vec<usize>,
    pub best_fold: usize,
    pub mean_val_accuracy: f64,
}

/// Run every fold of `folds` with the same config; fold `f` trains under
/// `base_dir/{prefix}-fold{f}-{seed}`.
pub fn cross_validate(
    spec: &ModelSpec,
    data: &Dataset,
    folds: &FoldAssignment,
    config: &TrainConfig,
    base_dir: &Path,
    prefix: &str,
) -> Result<CvSummary> {
    let mut records = Vec::new();
    let mut failed = Vec::new();
    for fold in 0..folds.k {
        let run_dir = base_dir.join(format!("{prefix}-fold{fold}-{}", config.seed));
        match train_run(spec, data, folds, fold, config, &run_dir) {
            Ok(rec) => records.push(rec),
            Err(e) => {
                log::warn!("fold={fold} failed: {e}");
                failed.push(fold);
            }
        }
    }
    if records.is_empty() {
        return Err(Error::TrainFailed("every fold failed".into()));
    }
    let mut best = 0;
    for (i, rec) in records.iter().enumerate() {
        if rec.best_row().val_accuracy > records[best].best_row().val_accuracy {
            best = i;
        }
    }
    let mean = records.iter().map(|r| r.best_row().val_accuracy).sum::<f64>() / records.len() as f64;
    Ok(CvSummary {
        best_fold: records[best].fold,
        mean_val_accuracy: mean,
        records,
        failed_folds: failed,
    })
}
