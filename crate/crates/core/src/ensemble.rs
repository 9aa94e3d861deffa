//! Voting ensembles over per-model class-probability matrices, plus the
//! classification metrics used to score individual models and combinations.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::models::{Family, Strategy};
use crate::tensor::{Elem, Tensor};
use crate::{Error, Result};

/// Row-stochastic matrix of per-sample class probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMatrix {
    n: usize,
    c: usize,
    data: Vec<f64>,
}

impl ProbabilityMatrix {
    pub fn new(n: usize, c: usize, data: Vec<f64>) -> Result<Self> {
        let m = ProbabilityMatrix { n, c, data };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        if self.c == 0 {
            return Err(Error::Dim("probability matrix needs at least one class".into()));
        }
        if self.data.len() != self.n * self.c {
            return Err(Error::Dim(format!(
                "probability matrix {}x{} expects {} entries, got {}",
                self.n,
                self.c,
                self.n * self.c,
                self.data.len()
            )));
        }
        for (i, row) in self.data.chunks(self.c).enumerate() {
            let mut sum = 0.0;
            for &p in row {
                if !p.is_finite() || p < 0.0 {
                    return Err(Error::Numeric(format!("row {i} has invalid probability {p}")));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > 1e-5 {
                return Err(Error::Numeric(format!("row {i} sums to {sum}, expected 1")));
            }
        }
        Ok(())
    }

    /// Row-wise stable softmax over a `[N, C]` logit tensor.
    pub fn from_logits<E: Elem>(logits: &Tensor<E>) -> Result<Self> {
        if logits.ndim() != 2 {
            return Err(Error::Dim(format!(
                "logits must be [N, C], got {:?}",
                logits.shape()
            )));
        }
        let (n, c) = (logits.dim(0), logits.dim(1));
        let mut data = vec![0.0f64; n * c];
        for i in 0..n {
            let row = &logits.data()[i * c..(i + 1) * c];
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v.to_f64()));
            let exps: Vec<f64> = row.iter().map(|&v| (v.to_f64() - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for (j, e) in exps.iter().enumerate() {
                data[i * c + j] = e / sum;
            }
        }
        ProbabilityMatrix::new(n, c, data)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.c..(i + 1) * self.c]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Per-row argmax; ties resolve to the lowest class index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.n).map(|i| argmax(self.row(i))).collect()
    }

    /// Text format: a `N C` header line, then one row of probabilities per line.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.n, self.c);
        for i in 0..self.n {
            let row: Vec<String> = self.row(i).iter().map(|p| p.to_string()).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse(format!("{}: empty matrix file", path.display())))?;
        let dims: Vec<&str> = header.split_whitespace().collect();
        if dims.len() != 2 {
            return Err(Error::Parse(format!(
                "{}: header must be two integers, got '{header}'",
                path.display()
            )));
        }
        let n: usize = dims[0]
            .parse()
            .map_err(|_| Error::Parse(format!("{}: bad row count '{}'", path.display(), dims[0])))?;
        let c: usize = dims[1]
            .parse()
            .map_err(|_| Error::Parse(format!("{}: bad class count '{}'", path.display(), dims[1])))?;
        let mut data = Vec::with_capacity(n * c);
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            for tok in line.split_whitespace() {
                let p: f64 = tok.parse().map_err(|_| {
                    Error::Parse(format!("{}: row {}: bad probability '{tok}'", path.display(), i + 1))
                })?;
                data.push(p);
            }
        }
        ProbabilityMatrix::new(n, c, data)
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &p) in row.iter().enumerate() {
        if p > row[best] {
            best = j;
        }
    }
    best
}

/// One trained model that can join an ensemble: its identity plus the
/// probability matrices it produced on the validation and test splits.
#[derive(Clone, Debug)]
pub struct Member {
    pub id: String,
    pub family: Family,
    pub strategy: Strategy,
    pub val: ProbabilityMatrix,
    pub test: ProbabilityMatrix,
}

fn check_pool(mats: &[&ProbabilityMatrix]) -> Result<(usize, usize)> {
    let first = mats
        .first()
        .ok_or_else(|| Error::Dim("ensemble needs at least one member".into()))?;
    for m in mats {
        if m.n() != first.n() || m.c() != first.c() {
            return Err(Error::Dim(format!(
                "member matrices disagree: {}x{} vs {}x{}",
                m.n(),
                m.c(),
                first.n(),
                first.c()
            )));
        }
    }
    Ok((first.n(), first.c()))
}

/// Scale weights to sum to one. Weights must be finite, non-negative, and
/// not all zero.
pub fn normalize_weights(weights: &[f64]) -> Result<Vec<f64>> {
    if weights.is_empty() {
        return Err(Error::Config("no weights given".into()));
    }
    let mut sum = 0.0;
    for &w in weights {
        if !w.is_finite() || w < 0.0 {
            return Err(Error::Config(format!("invalid weight {w}")));
        }
        sum += w;
    }
    if sum == 0.0 {
        return Err(Error::Config("weights sum to zero".into()));
    }
    Ok(weights.iter().map(|w| w / sum).collect())
}

/// Weighted average of the member matrices, with weights normalized first.
pub fn weighted_mean(mats: &[&ProbabilityMatrix], weights: &[f64]) -> Result<ProbabilityMatrix> {
    let (n, c) = check_pool(mats)?;
    if weights.len() != mats.len() {
        return Err(Error::Dim(format!(
            "{} weights for {} members",
            weights.len(),
            mats.len()
        )));
    }
    let w = normalize_weights(weights)?;
    let mut data = vec![0.0f64; n * c];
    for (m, &wk) in mats.iter().zip(&w) {
        for (d, &p) in data.iter_mut().zip(m.data()) {
            *d += wk * p;
        }
    }
    ProbabilityMatrix { n, c, data }.validate_ok()
}

impl ProbabilityMatrix {
    fn validate_ok(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }
}

/// Weighted soft voting: argmax of the weighted mean probabilities.
pub fn weighted_vote(mats: &[&ProbabilityMatrix], weights: &[f64]) -> Result<Vec<usize>> {
    Ok(weighted_mean(mats, weights)?.argmax_rows())
}

/// Unweighted mean of the member matrices.
pub fn soft_mean(mats: &[&ProbabilityMatrix]) -> Result<ProbabilityMatrix> {
    weighted_mean(mats, &vec![1.0; mats.len()])
}

/// Soft voting: weighted voting with uniform weights.
pub fn soft_vote(mats: &[&ProbabilityMatrix]) -> Result<Vec<usize>> {
    weighted_vote(mats, &vec![1.0; mats.len()])
}

/// Hard (majority) voting over per-member argmax predictions. Vote ties go
/// to the tied class with the highest mean probability, then to the lowest
/// class index.
pub fn hard_vote(mats: &[&ProbabilityMatrix]) -> Result<Vec<usize>> {
    let (n, c) = check_pool(mats)?;
    let votes: Vec<Vec<usize>> = mats.iter().map(|m| m.argmax_rows()).collect();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut counts = vec![0usize; c];
        for v in &votes {
            counts[v[i]] += 1;
        }
        let top = *counts.iter().max().unwrap();
        let mut best: Option<(usize, f64)> = None;
        for j in 0..c {
            if counts[j] != top {
                continue;
            }
            let mean: f64 = mats.iter().map(|m| m.row(i)[j]).sum::<f64>() / mats.len() as f64;
            let better = match best {
                None => true,
                Some((_, bm)) => mean > bm,
            };
            if better {
                best = Some((j, mean));
            }
        }
        out.push(best.unwrap().0);
    }
    Ok(out)
}

/// Accuracy plus macro-averaged precision, recall, and F1. Per-class scores
/// with an empty denominator count as zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassScore>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn compute_metrics(labels: &[usize], preds: &[usize], classes: usize) -> Result<Metrics> {
    if labels.len() != preds.len() {
        return Err(Error::Dim(format!(
            "{} labels vs {} predictions",
            labels.len(),
            preds.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Dim("metrics need at least one sample".into()));
    }
    if let Some(&bad) = labels.iter().chain(preds).find(|&&v| v >= classes) {
        return Err(Error::Dim(format!("class {bad} out of range for {classes} classes")));
    }
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fn_ = vec![0usize; classes];
    let mut correct = 0usize;
    for (&y, &p) in labels.iter().zip(preds) {
        if y == p {
            correct += 1;
            tp[y] += 1;
        } else {
            fp[p] += 1;
            fn_[y] += 1;
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let mut per_class = Vec::with_capacity(classes);
    for j in 0..classes {
        let precision = ratio(tp[j], tp[j] + fp[j]);
        let recall = ratio(tp[j], tp[j] + fn_[j]);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class.push(ClassScore { precision, recall, f1 });
    }
    let mean = |f: fn(&ClassScore) -> f64| per_class.iter().map(f).sum::<f64>() / classes as f64;
    Ok(Metrics {
        accuracy: correct as f64 / labels.len() as f64,
        macro_precision: mean(|s| s.precision),
        macro_recall: mean(|s| s.recall),
        macro_f1: mean(|s| s.f1),
        per_class,
    })
}

/// Which member subsets to turn into ensembles.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ComboSelector {
    /// One ensemble containing every member.
    All,
    /// One ensemble per training strategy present in the pool.
    PerStrategy,
    /// One ensemble per architecture family present in the pool.
    PerModel,
    /// The validation-accuracy-maximizing subset of at least `min_size` members.
    Best { min_size: usize },
}

/// A named subset of the member pool, as indices into it.
#[derive(Clone, Debug, PartialEq)]
pub struct Combination {
    pub name: String,
    pub members: Vec<usize>,
}

pub fn enumerate_combinations(
    members: &[Member],
    selector: ComboSelector,
    val_labels: &[usize],
) -> Result<Vec<Combination>> {
    if members.is_empty() {
        return Err(Error::Config("empty member pool".into()));
    }
    match selector {
        ComboSelector::All => Ok(vec![Combination {
            name: "all".into(),
            members: (0..members.len()).collect(),
        }]),
        ComboSelector::PerStrategy => Ok(Strategy::ALL
            .iter()
            .filter_map(|&s| {
                let idx: Vec<usize> = (0..members.len()).filter(|&i| members[i].strategy == s).collect();
                (!idx.is_empty()).then(|| Combination { name: s.to_string(), members: idx })
            })
            .collect()),
        ComboSelector::PerModel => Ok(Family::ALL
            .iter()
            .filter_map(|&f| {
                let idx: Vec<usize> = (0..members.len()).filter(|&i| members[i].family == f).collect();
                (!idx.is_empty()).then(|| Combination { name: f.to_string(), members: idx })
            })
            .collect()),
        ComboSelector::Best { min_size } => {
            let (subset, _) = best_ens_search(members, val_labels, min_size)?;
            Ok(vec![Combination { name: "best".into(), members: subset }])
        }
    }
}

fn subset_accuracy(members: &[Member], subset: &[usize], labels: &[usize]) -> Result<f64> {
    let mats: Vec<&ProbabilityMatrix> = subset.iter().map(|&i| &members[i].val).collect();
    let preds = soft_vote(&mats)?;
    let correct = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / labels.len() as f64)
}

fn subset_ids(members: &[Member], subset: &[usize]) -> Vec<String> {
    let mut ids: Vec<String> = subset.iter().map(|&i| members[i].id.clone()).collect();
    ids.sort();
    ids
}

/// Search member subsets for the best soft-vote accuracy on the validation
/// matrices. Exhaustive for pools of up to 20 members, greedy forward
/// selection beyond that. Ties prefer smaller subsets, then the
/// lexicographically smallest sorted id list. Returns the winning subset
/// (as pool indices, ascending) and its validation accuracy.
pub fn best_ens_search(
    members: &[Member],
    val_labels: &[usize],
    min_size: usize,
) -> Result<(Vec<usize>, f64)> {
    let n = members.len();
    if n == 0 {
        return Err(Error::Config("empty member pool".into()));
    }
    let min_size = min_size.max(1);
    if min_size > n {
        return Err(Error::Config(format!(
            "min ensemble size {min_size} exceeds pool of {n}"
        )));
    }
    for m in members {
        if m.val.n() != val_labels.len() {
            return Err(Error::Dim(format!(
                "member {} has {} validation rows, expected {}",
                m.id,
                m.val.n(),
                val_labels.len()
            )));
        }
    }
    if n <= 20 {
        let mut best: Option<(Vec<usize>, f64)> = None;
        for mask in 1u32..(1u32 << n) {
            if (mask.count_ones() as usize) < min_size {
                continue;
            }
            let subset: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
            let acc = subset_accuracy(members, &subset, val_labels)?;
            let replace = match &best {
                None => true,
                Some((cur, cur_acc)) => {
                    acc > *cur_acc
                        || (acc == *cur_acc
                            && (subset.len() < cur.len()
                                || (subset.len() == cur.len()
                                    && subset_ids(members, &subset) < subset_ids(members, cur))))
                }
            };
            if replace {
                best = Some((subset, acc));
            }
        }
        Ok(best.unwrap())
    } else {
        let mut chosen: Vec<usize> = Vec::new();
        let mut acc = f64::NEG_INFINITY;
        loop {
            let mut cand: Option<(usize, f64)> = None;
            for i in 0..n {
                if chosen.contains(&i) {
                    continue;
                }
                let mut trial = chosen.clone();
                trial.push(i);
                trial.sort();
                let a = subset_accuracy(members, &trial, val_labels)?;
                let better = match cand {
                    None => true,
                    Some((j, ca)) => a > ca || (a == ca && members[i].id < members[j].id),
                };
                if better {
                    cand = Some((i, a));
                }
            }
            match cand {
                Some((i, a)) if a > acc || chosen.len() < min_size => {
                    chosen.push(i);
                    chosen.sort();
                    acc = a;
                }
                _ => break,
            }
        }
        Ok((chosen, acc))
    }
}
