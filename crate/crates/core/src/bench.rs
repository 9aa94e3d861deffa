//! CPU benchmarking: batch latency, per-image inference time, and memory
//! footprint for single models and voting ensembles.
//!
//! Memory uses two labeled methods: a resident-set delta read from the OS,
//! and a byte-accounting fallback backed by [`TrackingAlloc`], which a binary
//! opts into with `#[global_allocator]`. Inference memory always needs the
//! tracking allocator. Timings are medians over repetitions, with warmup
//! iterations discarded.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::ensemble::{soft_mean, ProbabilityMatrix};
use crate::models::{count_params, Model, ModelSpec};
use crate::rng::CounterRng;
use crate::tensor::Tensor;
use crate::{Error, Result};

static TRACKING_REGISTERED: AtomicBool = AtomicBool::new(false);
static TRACKED_CURRENT: AtomicUsize = AtomicUsize::new(0);
static TRACKED_PEAK: AtomicUsize = AtomicUsize::new(0);

/// Byte-counting allocator wrapper around the system allocator. Register in
/// a binary with `#[global_allocator]` to enable tracked memory measurement.
pub struct TrackingAlloc;

unsafe impl GlobalAlloc for TrackingAlloc {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        TRACKING_REGISTERED.store(true, Ordering::Relaxed);
        let p = unsafe { System.alloc(layout) };
        if !p.is_null() {
            let cur = TRACKED_CURRENT.fetch_add(layout.size(), Ordering::Relaxed) + layout.size();
            TRACKED_PEAK.fetch_max(cur, Ordering::Relaxed);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        TRACKED_CURRENT.fetch_sub(layout.size(), Ordering::Relaxed);
        unsafe { System.dealloc(ptr, layout) }
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = unsafe { System.realloc(ptr, layout, new_size) };
        if !p.is_null() {
            if new_size >= layout.size() {
                let cur =
                    TRACKED_CURRENT.fetch_add(new_size - layout.size(), Ordering::Relaxed) + new_size
                        - layout.size();
                TRACKED_PEAK.fetch_max(cur, Ordering::Relaxed);
            } else {
                TRACKED_CURRENT.fetch_sub(layout.size() - new_size, Ordering::Relaxed);
            }
        }
        p
    }
}

fn tracking_enabled() -> bool {
    TRACKING_REGISTERED.load(Ordering::Relaxed)
}

fn tracked_current() -> usize {
    TRACKED_CURRENT.load(Ordering::Relaxed)
}

fn reset_tracked_peak() {
    TRACKED_PEAK.store(TRACKED_CURRENT.load(Ordering::Relaxed), Ordering::Relaxed);
}

fn tracked_peak() -> usize {
    TRACKED_PEAK.load(Ordering::Relaxed)
}

fn rss_bytes() -> Option<usize> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmRSS:"))?;
    let kb: usize = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}

/// How a memory figure was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MemoryMethod {
    /// Resident-set-size delta around the load, read from the OS.
    RssDelta,
    /// Net allocated bytes counted by the tracking allocator.
    TrackedAlloc,
}

impl MemoryMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            MemoryMethod::RssDelta => "rss-delta",
            MemoryMethod::TrackedAlloc => "tracked-alloc",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub struct BenchConfig {
    pub batch_size: usize,
    pub repetitions: usize,
    pub warmup: usize,
    pub input: [usize; 3],
}

impl BenchConfig {
    pub fn new(input: [usize; 3]) -> Self {
        BenchConfig { batch_size: 32, repetitions: 30, warmup: 5, input }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions < 3 {
            return Err(Error::Config(format!(
                "{} repetitions; at least 3 needed for a stable median",
                self.repetitions
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("bench batch size must be at least 1".into()));
        }
        if self.input.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!("bench input shape {:?} is degenerate", self.input)));
        }
        Ok(())
    }
}

/// Host description attached to every report; reports from different hosts
/// are never compared.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub struct EnvDescriptor {
    pub cpu: String,
    pub cores: usize,
    pub ram_mb: u64,
    pub os: String,
}

pub fn probe_env() -> EnvDescriptor {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|v| v.trim().to_string())
        })
        .unwrap_or_else(|| "unknown".into());
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let ram_mb = std::fs::read_to_string("/proc/meminfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("MemTotal:"))
                .and_then(|l| l.split_whitespace().nth(1))
                .and_then(|kb| kb.parse::<u64>().ok())
        })
        .map(|kb| kb / 1024)
        .unwrap_or(0);
    EnvDescriptor {
        cpu,
        cores,
        ram_mb,
        os: format!("{} {}", std::env::consts::OS, std::env::consts::ARCH),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case")]
pub struct BenchReport {
    pub subject: String,
    pub latency_batch_s: f64,
    pub inference_time_img_s: f64,
    pub load_memory_mb: f64,
    pub inference_memory_img_mb: f64,
    pub memory_method: MemoryMethod,
    pub params: u64,
    pub macs: u64,
    pub batch_size: usize,
    pub repetitions: usize,
    pub env: EnvDescriptor,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct EnsembleBenchReport {
    pub combined: BenchReport,
    pub members: Vec<BenchReport>,
}

fn median(samples: &mut [f64]) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len();
    if n % 2 == 1 {
        samples[n / 2]
    } else {
        (samples[n / 2 - 1] + samples[n / 2]) / 2.0
    }
}

fn bench_input(input: [usize; 3], n: usize) -> Tensor<f32> {
    let mut rng = CounterRng::new(0xBE1C, &["bench-input"]);
    Tensor::from_fn(&[n, input[0], input[1], input[2]], |_| rng.uniform(0.0, 1.0) as f32)
}

fn ensure_no_training() -> Result<()> {
    if crate::train::ACTIVE_TRAINING.load(Ordering::SeqCst) > 0 {
        return Err(Error::State(
            "benchmarking refuses to run while training is active in this process".into(),
        ));
    }
    Ok(())
}

fn with_input(spec: &ModelSpec, input: [usize; 3]) -> Result<ModelSpec> {
    let mut s = spec.clone();
    s.input = input;
    s.validate()?;
    Ok(s)
}

/// Time one closure `reps` times after `warmup` discarded runs; median seconds.
fn timed<F: FnMut()>(reps: usize, warmup: usize, mut f: F) -> f64 {
    for _ in 0..warmup {
        f();
    }
    let mut samples: Vec<f64> = (0..reps)
        .map(|_| {
            let t0 = Instant::now();
            f();
            t0.elapsed().as_secs_f64()
        })
        .collect();
    median(&mut samples)
}

/// Median full-batch latency and median single-image inference time.
pub fn measure_latency(model: &mut Model<f32>, config: &BenchConfig) -> Result<(f64, f64)> {
    config.validate()?;
    ensure_no_training()?;
    let batch = bench_input(config.input, config.batch_size);
    let single = bench_input(config.input, 1);
    let mut check: Result<()> = Ok(());
    let latency = timed(config.repetitions, config.warmup, || {
        if let Err(e) = model.forward_logits(&batch) {
            check = Err(e);
        }
    });
    check?;
    let mut check: Result<()> = Ok(());
    let per_image = timed(config.repetitions, config.warmup, || {
        if let Err(e) = model.forward_logits(&single) {
            check = Err(e);
        }
    });
    check?;
    Ok((latency, per_image))
}

struct MemoryProbe {
    load_mb: f64,
    inference_mb: f64,
    method: MemoryMethod,
    models: Vec<Model<f32>>,
}

/// Build every spec inside a measurement scope and run one single-image
/// forward per model for the inference peak.
fn measure_memory_multi(
    specs: &[ModelSpec],
    config: &BenchConfig,
    method: Option<MemoryMethod>,
    seed: u64,
) -> Result<MemoryProbe> {
    let method = match method {
        Some(m) => m,
        None if rss_bytes().is_some() => MemoryMethod::RssDelta,
        None if tracking_enabled() => MemoryMethod::TrackedAlloc,
        None => {
            return Err(Error::Unsupported(
                "no memory probe available: /proc is unreadable and the tracking allocator is not registered"
                    .into(),
            ))
        }
    };
    let before = match method {
        MemoryMethod::RssDelta => rss_bytes()
            .ok_or_else(|| Error::Unsupported("resident-set size is unreadable on this platform".into()))?,
        MemoryMethod::TrackedAlloc => {
            if !tracking_enabled() {
                return Err(Error::Unsupported(
                    "tracking allocator is not registered in this binary".into(),
                ));
            }
            tracked_current()
        }
    };
    let mut models = Vec::with_capacity(specs.len());
    for spec in specs {
        models.push(Model::build(spec.clone(), seed)?);
    }
    let after = match method {
        MemoryMethod::RssDelta => rss_bytes().unwrap_or(before),
        MemoryMethod::TrackedAlloc => tracked_current(),
    };
    let load_mb = after.saturating_sub(before) as f64 / (1024.0 * 1024.0);

    let inference_mb = if tracking_enabled() {
        let single = bench_input(config.input, 1);
        let baseline = tracked_current();
        reset_tracked_peak();
        for model in &mut models {
            model.forward_logits(&single)?;
        }
        tracked_peak().saturating_sub(baseline) as f64 / (1024.0 * 1024.0)
    } else {
        f64::NAN
    };
    Ok(MemoryProbe { load_mb, inference_mb, method, models })
}

/// Load-memory and single-image inference-memory for one model, in MB.
/// Inference memory is `NaN` unless the tracking allocator is registered.
pub fn measure_memory(
    spec: &ModelSpec,
    config: &BenchConfig,
    method: Option<MemoryMethod>,
) -> Result<(f64, f64, MemoryMethod)> {
    config.validate()?;
    ensure_no_training()?;
    let spec = with_input(spec, config.input)?;
    let probe = measure_memory_multi(std::slice::from_ref(&spec), config, method, 7)?;
    Ok((probe.load_mb, probe.inference_mb, probe.method))
}

/// Full benchmark of one model: memory across load, then latency medians.
pub fn bench_model(subject: &str, spec: &ModelSpec, config: &BenchConfig) -> Result<BenchReport> {
    config.validate()?;
    ensure_no_training()?;
    let spec = with_input(spec, config.input)?;
    let cost = count_params(&spec)?;
    let probe = measure_memory_multi(std::slice::from_ref(&spec), config, None, 7)?;
    let mut models = probe.models;
    let (latency_batch_s, inference_time_img_s) = measure_latency(&mut models[0], config)?;
    Ok(BenchReport {
        subject: subject.to_string(),
        latency_batch_s,
        inference_time_img_s,
        load_memory_mb: probe.load_mb,
        inference_memory_img_mb: probe.inference_mb,
        memory_method: probe.method,
        params: cost.params,
        macs: cost.macs,
        batch_size: config.batch_size,
        repetitions: config.repetitions,
        env: probe_env(),
    })
}

/// Benchmark a soft-voting ensemble: members run sequentially and their
/// probability matrices are averaged inside the timed region. Per-member
/// standalone reports ride along.
pub fn bench_ensemble(
    subject: &str,
    members: &[(String, ModelSpec)],
    config: &BenchConfig,
) -> Result<EnsembleBenchReport> {
    config.validate()?;
    ensure_no_training()?;
    if members.is_empty() {
        return Err(Error::Config("ensemble benchmark needs at least one member".into()));
    }
    let mut member_reports = Vec::with_capacity(members.len());
    for (id, spec) in members {
        member_reports.push(bench_model(id, spec, config)?);
    }

    let specs: Vec<ModelSpec> =
        members.iter().map(|(_, s)| with_input(s, config.input)).collect::<Result<_>>()?;
    let probe = measure_memory_multi(&specs, config, None, 7)?;
    let mut models = probe.models;

    let batch = bench_input(config.input, config.batch_size);
    let single = bench_input(config.input, 1);
    let mut run_all = |input: &Tensor<f32>| -> Result<()> {
        let mut mats = Vec::with_capacity(models.len());
        for model in models.iter_mut() {
            mats.push(ProbabilityMatrix::from_logits(&model.forward_logits(input)?)?);
        }
        soft_mean(&mats.iter().collect::<Vec<_>>())?;
        Ok(())
    };
    let mut check: Result<()> = Ok(());
    let latency_batch_s = timed(config.repetitions, config.warmup, || {
        if let Err(e) = run_all(&batch) {
            check = Err(e);
        }
    });
    check?;
    let mut check: Result<()> = Ok(());
    let inference_time_img_s = timed(config.repetitions, config.warmup, || {
        if let Err(e) = run_all(&single) {
            check = Err(e);
        }
    });
    check?;

    let combined = BenchReport {
        subject: subject.to_string(),
        latency_batch_s,
        inference_time_img_s,
        load_memory_mb: probe.load_mb,
        inference_memory_img_mb: probe.inference_mb,
        memory_method: probe.method,
        params: member_reports.iter().map(|r| r.params).sum(),
        macs: member_reports.iter().map(|r| r.macs).sum(),
        batch_size: config.batch_size,
        repetitions: config.repetitions,
        env: probe_env(),
    };
    Ok(EnsembleBenchReport { combined, members: member_reports })
}

pub const CSV_HEADER: &str =
    "subject,latency_batch_s,inference_time_img_s,load_memory_mb,inference_memory_img_mb,params,macs";

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub subject: String,
    pub latency_batch_s: f64,
    pub inference_time_img_s: f64,
    pub load_memory_mb: f64,
    pub inference_memory_img_mb: f64,
    pub params: u64,
    pub macs: u64,
}

impl From<&BenchReport> for BenchRow {
    fn from(r: &BenchReport) -> Self {
        BenchRow {
            subject: r.subject.clone(),
            latency_batch_s: r.latency_batch_s,
            inference_time_img_s: r.inference_time_img_s,
            load_memory_mb: r.load_memory_mb,
            inference_memory_img_mb: r.inference_memory_img_mb,
            params: r.params,
            macs: r.macs,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

pub fn emit_report(reports: &[BenchReport], format: ReportFormat) -> String {
    let rows: Vec<BenchRow> = reports.iter().map(BenchRow::from).collect();
    match format {
        ReportFormat::Csv => {
            let mut out = String::from(CSV_HEADER);
            out.push('\n');
            for r in &rows {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    r.subject,
                    r.latency_batch_s,
                    r.inference_time_img_s,
                    r.load_memory_mb,
                    r.inference_memory_img_mb,
                    r.params,
                    r.macs
                ));
            }
            out
        }
        ReportFormat::Markdown => {
            let mut out = String::from(
                "| subject | latency (batch) s | inference time (img) s | load memory MB | inference memory (img) MB | params | MACs |\n|---|---|---|---|---|---|---|\n",
            );
            for r in &rows {
                out.push_str(&format!(
                    "| {} | {:.4} | {:.5} | {:.2} | {:.3} | {} | {} |\n",
                    r.subject,
                    r.latency_batch_s,
                    r.inference_time_img_s,
                    r.load_memory_mb,
                    r.inference_memory_img_mb,
                    r.params,
                    r.macs
                ));
            }
            if let Some(first) = reports.first() {
                out.push_str(&format!(
                    "\nbatch size {}, {} repetitions, median timing; memory via {}; host: {} ({} cores, {} MB RAM)\n",
                    first.batch_size,
                    first.repetitions,
                    first.memory_method.as_str(),
                    first.env.cpu,
                    first.env.cores,
                    first.env.ram_mb
                ));
            }
            out
        }
    }
}

pub fn parse_report_csv(text: &str) -> Result<Vec<BenchRow>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty bench CSV".into()))?;
    if header != CSV_HEADER {
        return Err(Error::Parse(format!("unexpected bench CSV header '{header}'")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(Error::Parse(format!("bench CSV row {}: {} fields, expected 7", i + 2, fields.len())));
        }
        let f = |j: usize| -> Result<f64> {
            fields[j]
                .parse()
                .map_err(|_| Error::Parse(format!("bench CSV row {}: bad number '{}'", i + 2, fields[j])))
        };
        let u = |j: usize| -> Result<u64> {
            fields[j]
                .parse()
                .map_err(|_| Error::Parse(format!("bench CSV row {}: bad count '{}'", i + 2, fields[j])))
        };
        rows.push(BenchRow {
            subject: fields[0].to_string(),
            latency_batch_s: f(1)?,
            inference_time_img_s: f(2)?,
            load_memory_mb: f(3)?,
            inference_memory_img_mb: f(4)?,
            params: u(5)?,
            macs: u(6)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{default_input, preset_spec, Family, PresetKind};

    fn micro(family: Family, wm: f64) -> ModelSpec {
        preset_spec(family, PresetKind::Micro, wm, default_input(PresetKind::Micro), 8).unwrap()
    }

    fn quick_config() -> BenchConfig {
        BenchConfig { batch_size: 4, repetitions: 5, warmup: 1, input: [1, 32, 32] }
    }

    #[test]
    fn config_validation() {
        assert!(quick_config().validate().is_ok());
        assert!(BenchConfig { repetitions: 2, ..quick_config() }.validate().is_err());
        assert!(BenchConfig { batch_size: 0, ..quick_config() }.validate().is_err());
        let default = BenchConfig::new([1, 32, 32]);
        assert_eq!((default.batch_size, default.repetitions, default.warmup), (32, 30, 5));
    }

    #[test]
    fn median_is_order_invariant() {
        let mut a = vec![3.0, 1.0, 2.0];
        let mut b = vec![2.0, 3.0, 1.0];
        assert_eq!(median(&mut a), 2.0);
        assert_eq!(median(&mut b), 2.0);
        let mut even = vec![4.0, 1.0, 3.0, 2.0];
        assert_eq!(median(&mut even), 2.5);
    }

    #[test]
    fn report_has_env_and_batch_and_positive_times() {
        let report = bench_model("mobile-micro", &micro(Family::Mobile, 1.0), &quick_config()).unwrap();
        assert!(report.latency_batch_s > 0.0);
        assert!(report.inference_time_img_s > 0.0);
        assert!(report.latency_batch_s >= report.inference_time_img_s);
        assert_eq!(report.batch_size, 4);
        assert_eq!(report.repetitions, 5);
        assert!(!report.env.cpu.is_empty());
        assert!(report.env.cores >= 1);
        assert!(report.params > 0 && report.macs > 0);
    }

    #[test]
    fn doubled_width_is_strictly_slower() {
        let config = quick_config();
        let narrow = bench_model("w1", &micro(Family::Mobile, 1.0), &config).unwrap();
        let wide = bench_model("w2", &micro(Family::Mobile, 2.0), &config).unwrap();
        assert!(wide.macs > 2 * narrow.macs);
        assert!(
            wide.latency_batch_s > narrow.latency_batch_s,
            "wide {} vs narrow {}",
            wide.latency_batch_s,
            narrow.latency_batch_s
        );
    }

    #[test]
    fn single_member_ensemble_close_to_standalone() {
        let config = quick_config();
        let spec = micro(Family::Mnas, 1.0);
        let solo = bench_model("mnas", &spec, &config).unwrap();
        let ens = bench_ensemble("ens1", &[("mnas".into(), spec)], &config).unwrap();
        assert_eq!(ens.members.len(), 1);
        let ratio = ens.combined.latency_batch_s / solo.latency_batch_s;
        assert!((0.9..=1.1).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn ensemble_latency_is_roughly_additive_and_monotone() {
        let config = quick_config();
        let members: Vec<(String, ModelSpec)> = [Family::Mobile, Family::Mnas, Family::Shuffle, Family::Squeeze]
            .iter()
            .map(|&f| (f.to_string(), micro(f, 1.0)))
            .collect();
        let ens = bench_ensemble("all", &members, &config).unwrap();
        assert_eq!(ens.members.len(), 4);
        let sum: f64 = ens.members.iter().map(|m| m.latency_batch_s).sum();
        let ratio = ens.combined.latency_batch_s / sum;
        assert!((0.8..=1.3).contains(&ratio), "ratio {ratio}");
        assert_eq!(ens.combined.params, ens.members.iter().map(|m| m.params).sum::<u64>());

        let slowest = ens
            .members
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.latency_batch_s.partial_cmp(&b.1.latency_batch_s).unwrap())
            .unwrap()
            .0;
        let reduced: Vec<(String, ModelSpec)> = members
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != slowest)
            .map(|(_, m)| m.clone())
            .collect();
        let smaller = bench_ensemble("minus-slowest", &reduced, &config).unwrap();
        assert!(
            smaller.combined.latency_batch_s < ens.combined.latency_batch_s,
            "{} vs {}",
            smaller.combined.latency_batch_s,
            ens.combined.latency_batch_s
        );
    }

    #[test]
    fn csv_round_trip_and_markdown_shape() {
        let config = quick_config();
        let a = bench_model("a", &micro(Family::Shuffle, 1.0), &config).unwrap();
        let b = bench_model("b", &micro(Family::Squeeze, 1.0), &config).unwrap();
        let reports = vec![a, b];
        let csv = emit_report(&reports, ReportFormat::Csv);
        assert!(csv.starts_with(CSV_HEADER));
        assert_eq!(csv.lines().count(), 3);
        let rows = parse_report_csv(&csv).unwrap();
        let want: Vec<BenchRow> = reports.iter().map(BenchRow::from).collect();
        let same = |x: f64, y: f64| x == y || (x.is_nan() && y.is_nan());
        assert_eq!(rows.len(), want.len());
        for (r, w) in rows.iter().zip(&want) {
            assert_eq!(r.subject, w.subject);
            assert!(same(r.latency_batch_s, w.latency_batch_s));
            assert!(same(r.inference_time_img_s, w.inference_time_img_s));
            assert!(same(r.load_memory_mb, w.load_memory_mb));
            assert!(same(r.inference_memory_img_mb, w.inference_memory_img_mb));
            assert_eq!((r.params, r.macs), (w.params, w.macs));
        }

        assert_eq!(emit_report(&[], ReportFormat::Csv), format!("{CSV_HEADER}\n"));
        let md = emit_report(&reports, ReportFormat::Markdown);
        assert!(md.starts_with("| subject |"));
        assert!(md.contains("batch size 4, 5 repetitions"));
        assert!(parse_report_csv("bogus\n1,2\n").is_err());
    }

    #[test]
    fn bench_refuses_during_training() {
        let guard = crate::train::TrainGuard::new();
        let err = bench_model("x", &micro(Family::Mobile, 1.0), &quick_config()).unwrap_err();
        assert!(matches!(err, Error::State(_)));
        drop(guard);
        assert!(bench_model("x", &micro(Family::Mobile, 1.0), &quick_config()).is_ok());
    }

    #[test]
    fn memory_probe_reports_method() {
        let (load_mb, _inf, method) =
            measure_memory(&micro(Family::Mobile, 0.5), &quick_config(), None).unwrap();
        assert!(load_mb >= 0.0);
        assert!(matches!(method, MemoryMethod::RssDelta | MemoryMethod::TrackedAlloc));
        // Forcing the tracked method without a registered allocator must be
        // an explicit error, never a silent zero.
        if !tracking_enabled() {
            let err = measure_memory(&micro(Family::Mobile, 0.5), &quick_config(), Some(MemoryMethod::TrackedAlloc));
            assert!(matches!(err, Err(Error::Unsupported(_))));
        }
    }
}
