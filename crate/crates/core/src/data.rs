//! Dataset loading (CSV and image folders), the synthetic glyph generator,
//! preprocessing, and stratified split / fold management.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::rng::CounterRng;
use crate::{Error, Result, Tensor};

/// Provenance carried next to the sample tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    /// Original label of each class index (file label, folder name, …).
    pub class_map: Vec<String>,
    /// Smallest raw label in the source (0 for already 0-based files).
    pub label_base: i64,
    pub source_digest: String,
}

/// Labeled image collection; one `[N, C, H, W]` tensor with values in [0,1]
/// straight after loading (preprocessing may shift the range).
#[derive(Clone, Debug)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// (C, H, W) of one sample.
    pub fn chw(&self) -> (usize, usize, usize) {
        let s = self.images.shape();
        (s[1], s[2], s[3])
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.images.shape();
        if s.len() != 4 {
            return Err(Error::Dim(format!("dataset images must be 4-d, got {s:?}")));
        }
        if s[0] != self.labels.len() {
            return Err(Error::Dim(format!(
                "{} images but {} labels",
                s[0],
                self.labels.len()
            )));
        }
        if self.classes == 0 {
            return Err(Error::Config("dataset has zero classes".into()));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.classes) {
            return Err(Error::Config(format!(
                "label {bad} out of range for {} classes",
                self.classes
            )));
        }
        Ok(())
    }

    /// Copy of the selected samples, preserving order of `idx`.
    pub fn subset(&self, idx: &[usize], name: &str) -> Dataset {
        let (c, h, w) = self.chw();
        let stride = c * h * w;
        let mut data = Vec::with_capacity(idx.len() * stride);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            data.extend_from_slice(&self.images.data()[i * stride..(i + 1) * stride]);
            labels.push(self.labels[i]);
        }
        Dataset {
            images: Tensor::new(vec![idx.len(), c, h, w], data).expect("subset shape"),
            labels,
            classes: self.classes,
            meta: DatasetMeta { name: name.to_string(), ..self.meta.clone() },
        }
    }

    /// Minibatch tensor plus labels for the given sample indices.
    pub fn batch(&self, idx: &[usize]) -> (Tensor, Vec<usize>) {
        let sub = self.subset(idx, &self.meta.name);
        (sub.images, sub.labels)
    }

    /// Content digest over shape, labels, and pixel bits; identical datasets
    /// hash identically regardless of where they were loaded from.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("{:?};{};", self.images.shape(), self.classes).as_bytes());
        for &l in &self.labels {
            h.update((l as u64).to_le_bytes());
        }
        for &v in self.images.data() {
            h.update(v.to_le_bytes());
        }
        let out = h.finalize();
        let mut s = String::with_capacity(64);
        for b in out {
            s.push_str(&format!("{b:02x}"));
        }
        s
    }

    fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.classes];
        for (i, &l) in self.labels.iter().enumerate() {
            by_class[l].push(i);
        }
        by_class
    }
}

/// Stratified k-fold assignment over a training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    /// Fold index per sample, in [0, k).
    pub fold: Vec<usize>,
    pub seed: u64,
}

impl FoldAssignment {
    pub fn val_indices(&self, f: usize) -> Vec<usize> {
        (0..self.fold.len()).filter(|&i| self.fold[i] == f).collect()
    }

    pub fn train_indices(&self, f: usize) -> Vec<usize> {
        (0..self.fold.len()).filter(|&i| self.fold[i] != f).collect()
    }
}

/// Resize target, per-channel normalization, and polarity flip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSpec {
    pub target: [usize; 2],
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub invert: bool,
}

impl PreprocessSpec {
    pub fn identity(h: usize, w: usize) -> Self {
        PreprocessSpec { target: [h, w], mean: vec![0.0], std: vec![1.0], invert: false }
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.target[0] == 0 || self.target[1] == 0 {
            return Err(Error::Config("preprocess target dims must be positive".into()));
        }
        for v in [&self.mean, &self.std] {
            if v.len() != 1 && v.len() != channels {
                return Err(Error::Config(format!(
                    "normalization vector length {} for {channels} channels",
                    v.len()
                )));
            }
        }
        if self.std.iter().any(|&s| s <= 0.0) {
            return Err(Error::Config("normalization std must be positive".into()));
        }
        Ok(())
    }
}

fn digest_bytes(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let out = h.finalize();
    let mut s = String::with_capacity(64);
    for b in out {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Load a `label,p0,…,pN-1` CSV of 8-bit pixels into a dataset.
pub fn load_csv_dataset(path: &Path, h: usize, w: usize) -> Result<Dataset> {
    let raw = fs::read(path)?;
    let text = std::str::from_utf8(&raw)
        .map_err(|_| Error::Parse(format!("{}: not UTF-8", path.display())))?;
    let mut raw_labels = Vec::new();
    let mut pixels: Vec<f32> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let row = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 1 + h * w {
            return Err(Error::Parse(format!(
                "row {row}: {} fields, expected {}",
                fields.len(),
                1 + h * w
            )));
        }
        let label: i64 = fields[0]
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("row {row}: bad label {:?}", fields[0])))?;
        raw_labels.push(label);
        for f in &fields[1..] {
            let v: i64 = f
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("row {row}: bad pixel {f:?}")))?;
            if !(0..=255).contains(&v) {
                return Err(Error::Parse(format!("row {row}: pixel {v} outside 0..=255")));
            }
            pixels.push(v as f32 / 255.0);
        }
    }
    if raw_labels.is_empty() {
        return Err(Error::Parse(format!("{}: no samples", path.display())));
    }
    // Remap raw labels to contiguous 0-based class indices by sorted rank.
    let mut uniq: Vec<i64> = raw_labels.clone();
    uniq.sort_unstable();
    uniq.dedup();
    let rank: BTreeMap<i64, usize> = uniq.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let labels: Vec<usize> = raw_labels.iter().map(|l| rank[l]).collect();
    let n = labels.len();
    let ds = Dataset {
        images: Tensor::new(vec![n, 1, h, w], pixels)?,
        labels,
        classes: uniq.len(),
        meta: DatasetMeta {
            name: path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "csv".into()),
            class_map: uniq.iter().map(|l| l.to_string()).collect(),
            label_base: uniq[0],
            source_digest: digest_bytes(&raw),
        },
    };
    ds.validate()?;
    Ok(ds)
}

/// Write a dataset back out in the CSV format `load_csv_dataset` reads,
/// quantizing pixels to 8 bits, plus a `.meta.json` sidecar.
pub fn save_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let (c, h, w) = ds.chw();
    if c != 1 {
        return Err(Error::Unsupported(format!("csv export is single-channel, got {c}")));
    }
    let stride = h * w;
    let mut out = String::with_capacity(ds.len() * (stride * 4 + 4));
    for i in 0..ds.len() {
        out.push_str(&ds.labels[i].to_string());
        for v in &ds.images.data()[i * stride..(i + 1) * stride] {
            let q = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            out.push(',');
            out.push_str(&q.to_string());
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    let sidecar = path.with_extension("meta.json");
    fs::write(sidecar, serde_json::to_string_pretty(&ds.meta)?)?;
    Ok(())
}

/// Load per-class subfolders of grayscale PGM/PNG images; class index is the
/// lexicographic rank of the folder name.
pub fn load_image_folder(path: &Path) -> Result<Dataset> {
    let mut class_dirs: Vec<(String, std::path::PathBuf)> = Vec::new();
    for entry in fs::read_dir(path)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            class_dirs.push((entry.file_name().to_string_lossy().into_owned(), entry.path()));
        }
    }
    if class_dirs.is_empty() {
        return Err(Error::Parse(format!("{}: no class folders", path.display())));
    }
    class_dirs.sort();

    let mut pixels: Vec<f32> = Vec::new();
    let mut labels = Vec::new();
    let mut dims: Option<(usize, usize)> = None;
    let mut digest_input = String::new();
    for (class, (name, dir)) in class_dirs.iter().enumerate() {
        let mut files: Vec<std::path::PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        let mut loaded = 0;
        for file in files {
            let ext = file
                .extension()
                .map(|e| e.to_string_lossy().to_ascii_lowercase())
                .unwrap_or_default();
            if ext != "pgm" && ext != "png" {
                log::warn!("skipping non-image file {}", file.display());
                continue;
            }
            let img = image::open(&file)
                .map_err(|e| Error::Parse(format!("{}: {e}", file.display())))?
                .into_luma8();
            let (w, h) = (img.width() as usize, img.height() as usize);
            match dims {
                None => dims = Some((h, w)),
                Some(d) if d != (h, w) => {
                    return Err(Error::Parse(format!(
                        "{}: size {w}x{h} differs from first image {}x{}",
                        file.display(),
                        d.1,
                        d.0
                    )))
                }
                _ => {}
            }
            pixels.extend(img.pixels().map(|p| p.0[0] as f32 / 255.0));
            labels.push(class);
            loaded += 1;
            digest_input.push_str(&format!("{name}/{}:{}\n", file.display(), h * w));
        }
        if loaded == 0 {
            return Err(Error::Parse(format!("{}: empty class folder", dir.display())));
        }
    }
    let (h, w) = dims.expect("at least one image loaded");
    let n = labels.len();
    let ds = Dataset {
        images: Tensor::new(vec![n, 1, h, w], pixels)?,
        labels,
        classes: class_dirs.len(),
        meta: DatasetMeta {
            name: path
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "folder".into()),
            class_map: class_dirs.into_iter().map(|(n, _)| n).collect(),
            label_base: 0,
            source_digest: digest_bytes(digest_input.as_bytes()),
        },
    };
    ds.validate()?;
    Ok(ds)
}

/// One stroke as a sampled polyline in normalized [0,1]² glyph coordinates.
#[derive(Clone)]
struct Stroke {
    pts: Vec<(f64, f64)>,
}

fn random_stroke(rng: &mut CounterRng) -> Stroke {
    let p = |rng: &mut CounterRng| (rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85));
    let a = p(rng);
    let b = p(rng);
    if rng.next_f64() < 0.5 {
        Stroke { pts: vec![a, b] }
    } else {
        // Quadratic Bezier arc through a random control point.
        let c = p(rng);
        let pts = (0..=12)
            .map(|i| {
                let t = i as f64 / 12.0;
                let u = 1.0 - t;
                (
                    u * u * a.0 + 2.0 * u * t * c.0 + t * t * b.0,
                    u * u * a.1 + 2.0 * u * t * c.1 + t * t * b.1,
                )
            })
            .collect();
        Stroke { pts }
    }
}

fn template_strokes(seed: u64, class: usize, attempt: usize) -> Vec<Stroke> {
    let mut rng = CounterRng::new(
        seed,
        &["glyph-template", &class.to_string(), &attempt.to_string()],
    );
    let n = 3 + rng.below(4) as usize;
    (0..n).map(|_| random_stroke(&mut rng)).collect()
}

fn dist_to_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

/// Rasterize strokes (already in pixel coordinates) with soft 1-px edges.
fn render(strokes: &[Stroke], w: usize, out: &mut [f32]) {
    const THICKNESS: f64 = 1.1;
    for (i, v) in out.iter_mut().enumerate() {
        let y = (i / w) as f64 + 0.5;
        let x = (i % w) as f64 + 0.5;
        let mut best = f64::INFINITY;
        for s in strokes {
            for pair in s.pts.windows(2) {
                let d = dist_to_segment((x, y), pair[0], pair[1]);
                if d < best {
                    best = d;
                }
            }
        }
        *v = (THICKNESS - best).clamp(0.0, 1.0) as f32;
    }
}

fn to_pixels(strokes: &[Stroke], h: usize, w: usize) -> Vec<Stroke> {
    strokes
        .iter()
        .map(|s| Stroke {
            pts: s.pts.iter().map(|&(x, y)| (x * w as f64, y * h as f64)).collect(),
        })
        .collect()
}

fn transform(strokes: &[Stroke], h: usize, w: usize, theta: f64, dx: f64, dy: f64) -> Vec<Stroke> {
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let (sin, cos) = theta.sin_cos();
    strokes
        .iter()
        .map(|s| Stroke {
            pts: s
                .pts
                .iter()
                .map(|&(x, y)| {
                    let (rx, ry) = (x - cx, y - cy);
                    (cx + cos * rx - sin * ry + dx, cy + sin * rx + cos * ry + dy)
                })
                .collect(),
        })
        .collect()
}

fn l2(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| ((x - y) as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Deterministic synthetic glyph dataset: one random stroke template per
/// class (resampled until visually distinct from earlier classes), then
/// per-sample jitter and pixel noise.
pub fn synth_glyphs(
    classes: usize,
    per_class: usize,
    h: usize,
    w: usize,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::Config(format!("need at least 2 classes, got {classes}")));
    }
    if per_class == 0 || h == 0 || w == 0 {
        return Err(Error::Config("per-class count and dims must be positive".into()));
    }
    let min_sep = 0.15 * ((h * w) as f64).sqrt();
    let mut templates: Vec<Vec<Stroke>> = Vec::with_capacity(classes);
    let mut renders: Vec<Vec<f32>> = Vec::with_capacity(classes);
    for class in 0..classes {
        let mut chosen = None;
        let mut best: Option<(f64, Vec<Stroke>, Vec<f32>)> = None;
        for attempt in 0..40 {
            let strokes = to_pixels(&template_strokes(seed, class, attempt), h, w);
            let mut img = vec![0.0f32; h * w];
            render(&strokes, w, &mut img);
            let sep = renders
                .iter()
                .map(|r| l2(r, &img))
                .fold(f64::INFINITY, f64::min);
            if sep >= min_sep {
                chosen = Some((strokes, img));
                break;
            }
            if best.as_ref().map_or(true, |(b, _, _)| sep > *b) {
                best = Some((sep, strokes, img));
            }
        }
        let (strokes, img) = chosen.unwrap_or_else(|| {
            let (_, s, i) = best.expect("at least one attempt");
            (s, i)
        });
        templates.push(strokes);
        renders.push(img);
    }

    let mut pixels = Vec::with_capacity(classes * per_class * h * w);
    let mut labels = Vec::with_capacity(classes * per_class);
    let deg = std::f64::consts::PI / 180.0;
    for class in 0..classes {
        for i in 0..per_class {
            let mut rng = CounterRng::new(
                seed,
                &["glyph-sample", &class.to_string(), &i.to_string()],
            );
            let theta = rng.uniform(-10.0 * deg, 10.0 * deg);
            let dx = rng.uniform(-2.0, 2.0);
            let dy = rng.uniform(-2.0, 2.0);
            let strokes = transform(&templates[class], h, w, theta, dx, dy);
            let mut img = vec![0.0f32; h * w];
            render(&strokes, w, &mut img);
            for v in &mut img {
                *v = (*v + 0.05 * rng.normal() as f32).clamp(0.0, 1.0);
            }
            pixels.extend_from_slice(&img);
            labels.push(class);
        }
    }
    let n = labels.len();
    let ds = Dataset {
        images: Tensor::new(vec![n, 1, h, w], pixels)?,
        labels,
        classes,
        meta: DatasetMeta {
            name: "synth".into(),
            class_map: (0..classes).map(|c| format!("c{c:02}")).collect(),
            label_base: 0,
            source_digest: digest_bytes(
                format!("synth:{classes}:{per_class}:{h}:{w}:{seed}").as_bytes(),
            ),
        },
    };
    ds.validate()?;
    Ok(ds)
}

/// Stratified train/test split. Per-class train counts are fraction·n
/// apportioned by largest remainder, so the global train size is exactly
/// round(fraction·N) and every class is within one sample of fraction·n.
pub fn split_holdout(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("train fraction {fraction} outside (0,1)")));
    }
    ds.validate()?;
    let by_class = ds.class_indices();
    for (class, idx) in by_class.iter().enumerate() {
        if idx.len() < 2 {
            return Err(Error::Config(format!(
                "class {class} has {} samples, need at least 2 to split",
                idx.len()
            )));
        }
    }
    let total_train = (fraction * ds.len() as f64).round() as usize;
    let mut take: Vec<usize> = Vec::with_capacity(ds.classes);
    let mut remainders: Vec<(f64, usize)> = Vec::with_capacity(ds.classes);
    for (class, idx) in by_class.iter().enumerate() {
        let t = fraction * idx.len() as f64;
        take.push(t.floor() as usize);
        remainders.push((t - t.floor(), class));
    }
    let mut extra = total_train.saturating_sub(take.iter().sum());
    remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    for &(_, class) in &remainders {
        if extra == 0 {
            break;
        }
        if take[class] < by_class[class].len() {
            take[class] += 1;
            extra -= 1;
        }
    }
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for (class, mut idx) in by_class.into_iter().enumerate() {
        let mut rng = CounterRng::new(seed, &["split", &class.to_string()]);
        rng.shuffle(&mut idx);
        train_idx.extend_from_slice(&idx[..take[class]]);
        test_idx.extend_from_slice(&idx[take[class]..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let train = ds.subset(&train_idx, &format!("{}/train", ds.meta.name));
    let test = ds.subset(&test_idx, &format!("{}/test", ds.meta.name));
    Ok((train, test))
}

/// Stratified k-fold assignment; one global cyclic cursor keeps both overall
/// and per-class fold sizes within 1 of each other.
pub fn kfold(ds: &Dataset, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::Config(format!("fold count {k} below 2")));
    }
    ds.validate()?;
    let mut fold = vec![0usize; ds.len()];
    let mut cursor = 0usize;
    for (class, mut idx) in ds.class_indices().into_iter().enumerate() {
        if idx.len() < k {
            return Err(Error::Config(format!(
                "class {class} has {} samples, fewer than {k} folds",
                idx.len()
            )));
        }
        let mut rng = CounterRng::new(seed, &["fold", &class.to_string()]);
        rng.shuffle(&mut idx);
        for i in idx {
            fold[i] = cursor % k;
            cursor += 1;
        }
    }
    Ok(FoldAssignment { k, fold, seed })
}

fn bilinear_plane(src: &[f32], hi: usize, wi: usize, ho: usize, wo: usize, dst: &mut [f32]) {
    let sy = hi as f64 / ho as f64;
    let sx = wi as f64 / wo as f64;
    for oy in 0..ho {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (hi - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(hi - 1);
        let wy = fy - y0 as f64;
        for ox in 0..wo {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (wi - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(wi - 1);
            let wx = fx - x0 as f64;
            let v = (1.0 - wy) * (1.0 - wx) * src[y0 * wi + x0] as f64
                + (1.0 - wy) * wx * src[y0 * wi + x1] as f64
                + wy * (1.0 - wx) * src[y1 * wi + x0] as f64
                + wy * wx * src[y1 * wi + x1] as f64;
            dst[oy * wo + ox] = v as f32;
        }
    }
}

/// Bilinear resize, optional polarity inversion, then per-channel
/// normalization. Sample count and labels pass through unchanged.
pub fn preprocess(ds: &Dataset, spec: &PreprocessSpec) -> Result<Dataset> {
    ds.validate()?;
    let (c, hi, wi) = ds.chw();
    spec.validate(c)?;
    let [ho, wo] = spec.target;
    let n = ds.len();
    let mut out = vec![0.0f32; n * c * ho * wo];
    for i in 0..n {
        for ch in 0..c {
            let src = &ds.images.data()[(i * c + ch) * hi * wi..(i * c + ch + 1) * hi * wi];
            let dst = &mut out[(i * c + ch) * ho * wo..(i * c + ch + 1) * ho * wo];
            if (hi, wi) == (ho, wo) {
                dst.copy_from_slice(src);
            } else {
                bilinear_plane(src, hi, wi, ho, wo, dst);
            }
            let mean = spec.mean[ch.min(spec.mean.len() - 1)] as f32;
            let std = spec.std[ch.min(spec.std.len() - 1)] as f32;
            for v in dst.iter_mut() {
                let x = if spec.invert { 1.0 - *v } else { *v };
                *v = (x - mean) / std;
            }
        }
    }
    Ok(Dataset {
        images: Tensor::new(vec![n, c, ho, wo], out)?,
        labels: ds.labels.clone(),
        classes: ds.classes,
        meta: ds.meta.clone(),
    })
}

/// Repeat a single-channel dataset across `c` channels (grayscale fed to a
/// 3-channel preset).
pub fn replicate_channels(ds: &Dataset, c: usize) -> Result<Dataset> {
    let (c0, h, w) = ds.chw();
    if c0 == c {
        return Ok(ds.clone());
    }
    if c0 != 1 {
        return Err(Error::Unsupported(format!("cannot replicate {c0} channels to {c}")));
    }
    let n = ds.len();
    let plane = h * w;
    let mut out = Vec::with_capacity(n * c * plane);
    for i in 0..n {
        let src = &ds.images.data()[i * plane..(i + 1) * plane];
        for _ in 0..c {
            out.extend_from_slice(src);
        }
    }
    Ok(Dataset {
        images: Tensor::new(vec![n, c, h, w], out)?,
        labels: ds.labels.clone(),
        classes: ds.classes,
        meta: ds.meta.clone(),
    })
}
