//! Comparison tables: base-model scores, ensemble combinations under the
//! three voting schemes, and the base-vs-ensemble summary.

use serde::{Deserialize, Serialize};

use crate::bench::ReportFormat;
use crate::ensemble::{
    compute_metrics, enumerate_combinations, hard_vote, soft_vote, weighted_vote, ComboSelector,
    Combination, Member, Metrics, ProbabilityMatrix,
};
use crate::error::{Error, Result};
use crate::models::{Family, Strategy};

/// The four headline scores kept for every model or ensemble.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Scores {
    pub accuracy: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

impl From<&Metrics> for Scores {
    fn from(m: &Metrics) -> Self {
        Scores {
            accuracy: m.accuracy,
            f1: m.macro_f1,
            precision: m.macro_precision,
            recall: m.macro_recall,
        }
    }
}

/// Test-set scores of one trained base model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct BaseEntry {
    pub family: Family,
    pub strategy: Strategy,
    pub scores: Scores,
}

/// One ensemble combination scored under all three voting schemes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ComboRow {
    pub name: String,
    pub members: Vec<String>,
    pub soft: Scores,
    pub hard: Scores,
    pub weighted: Scores,
}

/// One line of the base-vs-ensemble summary. `delta` is set only on the
/// ensemble line: its accuracy minus the best base accuracy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct SummaryRow {
    pub label: String,
    pub accuracy: f64,
    pub delta: Option<f64>,
}

fn pretty_combo_name(raw: &str) -> String {
    let stem = match raw {
        "all" => "All".to_string(),
        "best" => "Best".to_string(),
        "tfs" | "hft" | "fft" => raw.to_uppercase(),
        other => {
            let mut chars = other.chars();
            match chars.next() {
                Some(c) => c.to_uppercase().collect::<String>() + chars.as_str(),
                None => String::new(),
            }
        }
    };
    format!("{stem}-Ens")
}

fn vote_accuracy(preds: &[usize], labels: &[usize]) -> f64 {
    let correct = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    correct as f64 / labels.len() as f64
}

fn score_combo(
    members: &[Member],
    combo: &Combination,
    val_accuracy: &[f64],
    test_labels: &[usize],
) -> Result<ComboRow> {
    let mats: Vec<&ProbabilityMatrix> = combo.members.iter().map(|&i| &members[i].test).collect();
    let classes = mats[0].c();
    let mut weights: Vec<f64> = combo.members.iter().map(|&i| val_accuracy[i]).collect();
    if weights.iter().all(|&w| w == 0.0) {
        weights = vec![1.0; weights.len()];
    }
    let score = |preds: Vec<usize>| -> Result<Scores> {
        Ok(Scores::from(&compute_metrics(test_labels, &preds, classes)?))
    };
    Ok(ComboRow {
        name: pretty_combo_name(&combo.name),
        members: combo.members.iter().map(|&i| members[i].id.clone()).collect(),
        soft: score(soft_vote(&mats)?)?,
        hard: score(hard_vote(&mats)?)?,
        weighted: score(weighted_vote(&mats, &weights)?)?,
    })
}

/// Score the canonical combination set — everyone, one per strategy, one per
/// family, and the searched best subset — on the test matrices. Weighted
/// voting weighs each member by its validation accuracy (uniform when every
/// member scored zero there).
pub fn score_combinations(
    members: &[Member],
    val_labels: &[usize],
    test_labels: &[usize],
    min_size: usize,
) -> Result<Vec<ComboRow>> {
    for m in members {
        if m.test.n() != test_labels.len() {
            return Err(Error::Dim(format!(
                "member {} has {} test rows, expected {}",
                m.id,
                m.test.n(),
                test_labels.len()
            )));
        }
    }
    let val_accuracy: Vec<f64> =
        members.iter().map(|m| vote_accuracy(&m.val.argmax_rows(), val_labels)).collect();
    let selectors = [
        ComboSelector::All,
        ComboSelector::PerStrategy,
        ComboSelector::PerModel,
        ComboSelector::Best { min_size },
    ];
    let mut rows = Vec::new();
    for selector in selectors {
        for combo in enumerate_combinations(members, selector, val_labels)? {
            rows.push(score_combo(members, &combo, &val_accuracy, test_labels)?);
        }
    }
    Ok(rows)
}

/// Best base accuracy per family plus the best ensemble accuracy, with the
/// ensemble-minus-best-base delta on the ensemble line.
pub fn build_summary(base: &[BaseEntry], combos: &[ComboRow]) -> Result<Vec<SummaryRow>> {
    if base.is_empty() || combos.is_empty() {
        return Err(Error::Config("summary needs base entries and combination rows".into()));
    }
    let mut rows = Vec::new();
    for family in Family::ALL {
        let best = base
            .iter()
            .filter(|e| e.family == family)
            .map(|e| e.scores.accuracy)
            .fold(f64::NEG_INFINITY, f64::max);
        if best.is_finite() {
            rows.push(SummaryRow { label: family.to_string(), accuracy: best, delta: None });
        }
    }
    let best_base = rows.iter().map(|r| r.accuracy).fold(f64::NEG_INFINITY, f64::max);
    let best_ensemble = combos
        .iter()
        .flat_map(|c| [c.soft.accuracy, c.hard.accuracy, c.weighted.accuracy])
        .fold(f64::NEG_INFINITY, f64::max);
    rows.push(SummaryRow {
        label: "ensemble".into(),
        accuracy: best_ensemble,
        delta: Some(best_ensemble - best_base),
    });
    Ok(rows)
}

fn base_order(entries: &[BaseEntry]) -> Vec<&BaseEntry> {
    let mut sorted: Vec<&BaseEntry> = entries.iter().collect();
    let pos = |e: &BaseEntry| {
        let f = Family::ALL.iter().position(|&x| x == e.family).unwrap();
        let s = Strategy::ALL.iter().position(|&x| x == e.strategy).unwrap();
        (f, s)
    };
    sorted.sort_by_key(|e| pos(e));
    sorted
}

fn fmt3(x: f64) -> String {
    format!("{x:.3}")
}

/// Base-model table: one row per (family, strategy) in CSV, one row per
/// family with strategy column groups in markdown.
pub fn emit_base_table(entries: &[BaseEntry], format: ReportFormat) -> String {
    let sorted = base_order(entries);
    match format {
        ReportFormat::Csv => {
            let mut out = String::from("model,strategy,accuracy,f1,precision,recall\n");
            for e in sorted {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    e.family,
                    e.strategy,
                    e.scores.accuracy,
                    e.scores.f1,
                    e.scores.precision,
                    e.scores.recall
                ));
            }
            out
        }
        ReportFormat::Markdown => {
            let strategies: Vec<Strategy> = Strategy::ALL
                .into_iter()
                .filter(|&s| entries.iter().any(|e| e.strategy == s))
                .collect();
            let families: Vec<Family> = Family::ALL
                .into_iter()
                .filter(|&f| entries.iter().any(|e| e.family == f))
                .collect();
            let mut head = String::from("| model |");
            for s in &strategies {
                head.push_str(&format!(" {s} acc | {s} f1 | {s} prec | {s} rec |"));
            }
            let mut out = format!("{head}\n|{}\n", "---|".repeat(1 + 4 * strategies.len()));
            for f in families {
                let mut row = format!("| {f} |");
                for &s in &strategies {
                    match entries.iter().find(|e| e.family == f && e.strategy == s) {
                        Some(e) => row.push_str(&format!(
                            " {} | {} | {} | {} |",
                            fmt3(e.scores.accuracy),
                            fmt3(e.scores.f1),
                            fmt3(e.scores.precision),
                            fmt3(e.scores.recall)
                        )),
                        None => row.push_str(" - | - | - | - |"),
                    }
                }
                out.push_str(&row);
                out.push('\n');
            }
            out
        }
    }
}

/// Combinations table: rows are combinations, column groups are the three
/// voting schemes.
pub fn emit_combination_table(rows: &[ComboRow], format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => {
            let mut out = String::from(
                "combination,members,soft-accuracy,soft-f1,soft-precision,soft-recall,\
                 hard-accuracy,hard-f1,hard-precision,hard-recall,\
                 weighted-accuracy,weighted-f1,weighted-precision,weighted-recall\n",
            );
            for r in rows {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                    r.name,
                    r.members.join("+"),
                    r.soft.accuracy,
                    r.soft.f1,
                    r.soft.precision,
                    r.soft.recall,
                    r.hard.accuracy,
                    r.hard.f1,
                    r.hard.precision,
                    r.hard.recall,
                    r.weighted.accuracy,
                    r.weighted.f1,
                    r.weighted.precision,
                    r.weighted.recall
                ));
            }
            out
        }
        ReportFormat::Markdown => {
            let mut out = String::from(
                "| combination | soft acc | soft f1 | soft prec | soft rec \
                 | hard acc | hard f1 | hard prec | hard rec \
                 | weighted acc | weighted f1 | weighted prec | weighted rec |\n",
            );
            out.push_str(&format!("|{}\n", "---|".repeat(13)));
            for r in rows {
                out.push_str(&format!(
                    "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |\n",
                    r.name,
                    fmt3(r.soft.accuracy),
                    fmt3(r.soft.f1),
                    fmt3(r.soft.precision),
                    fmt3(r.soft.recall),
                    fmt3(r.hard.accuracy),
                    fmt3(r.hard.f1),
                    fmt3(r.hard.precision),
                    fmt3(r.hard.recall),
                    fmt3(r.weighted.accuracy),
                    fmt3(r.weighted.f1),
                    fmt3(r.weighted.precision),
                    fmt3(r.weighted.recall)
                ));
            }
            out
        }
    }
}

/// Base-vs-ensemble summary. Markdown bolds the best accuracy in the column.
pub fn emit_summary_table(rows: &[SummaryRow], format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => {
            let mut out = String::from("model,accuracy,delta\n");
            for r in rows {
                let delta = r.delta.map(|d| d.to_string()).unwrap_or_default();
                out.push_str(&format!("{},{},{}\n", r.label, r.accuracy, delta));
            }
            out
        }
        ReportFormat::Markdown => {
            let best = rows.iter().map(|r| r.accuracy).fold(f64::NEG_INFINITY, f64::max);
            let mut out = String::from("| model | accuracy | delta |\n|---|---|---|\n");
            for r in rows {
                let acc = if r.accuracy == best {
                    format!("**{}**", fmt3(r.accuracy))
                } else {
                    fmt3(r.accuracy)
                };
                let delta = r.delta.map(|d| format!("{d:+.3}")).unwrap_or_default();
                out.push_str(&format!("| {} | {} | {} |\n", r.label, acc, delta));
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot(preds: &[usize], classes: usize) -> ProbabilityMatrix {
        let mut data = vec![0.0; preds.len() * classes];
        for (i, &p) in preds.iter().enumerate() {
            data[i * classes + p] = 1.0;
        }
        ProbabilityMatrix::new(preds.len(), classes, data).unwrap()
    }

    fn blended(preds: &[usize], classes: usize, confidence: f64) -> ProbabilityMatrix {
        let rest = (1.0 - confidence) / (classes - 1) as f64;
        let mut data = vec![rest; preds.len() * classes];
        for (i, &p) in preds.iter().enumerate() {
            data[i * classes + p] = confidence;
        }
        ProbabilityMatrix::new(preds.len(), classes, data).unwrap()
    }

    fn member(id: &str, family: Family, strategy: Strategy, hits: usize) -> Member {
        // Correct on the first `hits` rows of [0,1,2,0,1,2], wrong elsewhere.
        let labels = [0usize, 1, 2, 0, 1, 2];
        let preds: Vec<usize> =
            labels.iter().enumerate().map(|(i, &y)| if i < hits { y } else { (y + 1) % 3 }).collect();
        Member {
            id: id.into(),
            family,
            strategy,
            val: blended(&preds, 3, 0.8),
            test: blended(&preds, 3, 0.8),
        }
    }

    fn labels() -> Vec<usize> {
        vec![0, 1, 2, 0, 1, 2]
    }

    fn full_pool() -> Vec<Member> {
        let mut pool = Vec::new();
        let mut tag = 0;
        for family in Family::ALL {
            for strategy in Strategy::ALL {
                let hits = 3 + (tag % 4);
                pool.push(member(&format!("m{tag:02}"), family, strategy, hits));
                tag += 1;
            }
        }
        pool
    }

    #[test]
    fn twelve_member_pool_yields_nine_canonical_rows() {
        let pool = full_pool();
        let rows = score_combinations(&pool, &labels(), &labels(), 1).unwrap();
        let names: Vec<&str> = rows.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(
            names,
            [
                "All-Ens",
                "TFS-Ens",
                "HFT-Ens",
                "FFT-Ens",
                "Mobile-Ens",
                "Mnas-Ens",
                "Shuffle-Ens",
                "Squeeze-Ens",
                "Best-Ens"
            ]
        );
        assert_eq!(rows[0].members.len(), 12);
        assert_eq!(rows[1].members.len(), 4);
        assert_eq!(rows[4].members.len(), 3);
        for r in &rows {
            for s in [&r.soft, &r.hard, &r.weighted] {
                assert!(s.accuracy >= 0.0 && s.accuracy <= 1.0);
                assert!(s.f1.is_finite());
            }
        }

        let csv = emit_combination_table(&rows, ReportFormat::Csv);
        assert_eq!(csv.lines().count(), 10);
        assert!(csv.starts_with("combination,members,soft-accuracy"));
        let md = emit_combination_table(&rows, ReportFormat::Markdown);
        assert_eq!(md.lines().count(), 11);
        assert!(md.contains("| Best-Ens |"));
    }

    #[test]
    fn sparse_pools_skip_empty_groups() {
        let pool = vec![
            member("a", Family::Mobile, Strategy::Tfs, 5),
            member("b", Family::Shuffle, Strategy::Tfs, 4),
        ];
        let rows = score_combinations(&pool, &labels(), &labels(), 1).unwrap();
        let names: Vec<&str> = rows.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, ["All-Ens", "TFS-Ens", "Mobile-Ens", "Shuffle-Ens", "Best-Ens"]);
    }

    #[test]
    fn weighted_voting_follows_validation_accuracy() {
        // `good` is perfect on validation, `bad` never right; on test they
        // disagree and `bad` is louder, so soft voting follows `bad` while
        // validation-weighted voting follows `good`.
        let test_labels = vec![0usize, 0, 0, 0];
        let good = Member {
            id: "good".into(),
            family: Family::Mobile,
            strategy: Strategy::Tfs,
            val: one_hot(&[0, 1, 2, 0], 3),
            test: blended(&[0, 0, 0, 0], 3, 0.6),
        };
        let bad = Member {
            id: "bad".into(),
            family: Family::Mnas,
            strategy: Strategy::Tfs,
            val: one_hot(&[1, 2, 0, 1], 3),
            test: one_hot(&[1, 1, 1, 1], 3),
        };
        let rows =
            score_combinations(&[good, bad], &[0, 1, 2, 0], &test_labels, 1).unwrap();
        let all = &rows[0];
        assert_eq!(all.name, "All-Ens");
        assert!(all.soft.accuracy < 0.5);
        assert_eq!(all.weighted.accuracy, 1.0);
    }

    #[test]
    fn summary_has_delta_and_bolds_the_maximum() {
        let pool = full_pool();
        let test_labels = labels();
        let base: Vec<BaseEntry> = pool
            .iter()
            .map(|m| {
                let metrics =
                    compute_metrics(&test_labels, &m.test.argmax_rows(), 3).unwrap();
                BaseEntry { family: m.family, strategy: m.strategy, scores: Scores::from(&metrics) }
            })
            .collect();
        let combos = score_combinations(&pool, &test_labels, &test_labels, 1).unwrap();
        let summary = build_summary(&base, &combos).unwrap();
        assert_eq!(summary.len(), 5);
        assert_eq!(summary[4].label, "ensemble");
        let best_base =
            summary[..4].iter().map(|r| r.accuracy).fold(f64::NEG_INFINITY, f64::max);
        let delta = summary[4].delta.unwrap();
        assert!((delta - (summary[4].accuracy - best_base)).abs() < 1e-12);

        let md = emit_summary_table(&summary, ReportFormat::Markdown);
        assert!(md.contains("**"));
        assert!(md.lines().count() == 7);
        let csv = emit_summary_table(&summary, ReportFormat::Csv);
        assert!(csv.starts_with("model,accuracy,delta\n"));
        assert_eq!(csv.lines().count(), 6);
        assert!(csv.lines().nth(1).unwrap().ends_with(','));
    }

    #[test]
    fn base_table_orders_and_fills_gaps() {
        let scores = Scores { accuracy: 0.9, f1: 0.9, precision: 0.9, recall: 0.9 };
        let entries = vec![
            BaseEntry { family: Family::Squeeze, strategy: Strategy::Tfs, scores },
            BaseEntry { family: Family::Mobile, strategy: Strategy::Fft, scores },
            BaseEntry { family: Family::Mobile, strategy: Strategy::Tfs, scores },
        ];
        let csv = emit_base_table(&entries, ReportFormat::Csv);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "model,strategy,accuracy,f1,precision,recall");
        assert!(lines[1].starts_with("mobile,tfs,"));
        assert!(lines[2].starts_with("mobile,fft,"));
        assert!(lines[3].starts_with("squeeze,tfs,"));

        let md = emit_base_table(&entries, ReportFormat::Markdown);
        let rows: Vec<&str> = md.lines().collect();
        assert_eq!(rows[0], "| model | tfs acc | tfs f1 | tfs prec | tfs rec | fft acc | fft f1 | fft prec | fft rec |");
        assert_eq!(rows.len(), 4);
        assert!(rows[3].contains("| squeeze | 0.900 |"));
        assert!(rows[3].contains(" - |"));
    }

    #[test]
    fn zero_validation_weights_fall_back_to_uniform() {
        let test_labels = vec![0usize, 1, 2];
        let a = Member {
            id: "a".into(),
            family: Family::Mobile,
            strategy: Strategy::Tfs,
            val: one_hot(&[1, 2, 0], 3),
            test: blended(&[0, 1, 2], 3, 0.7),
        };
        let b = Member {
            id: "b".into(),
            family: Family::Mnas,
            strategy: Strategy::Tfs,
            val: one_hot(&[2, 0, 1], 3),
            test: blended(&[0, 1, 1], 3, 0.7),
        };
        let rows = score_combinations(&[a, b], &[0, 1, 2], &test_labels, 1).unwrap();
        let all = &rows[0];
        assert_eq!(all.weighted.accuracy, all.soft.accuracy);
    }
}
