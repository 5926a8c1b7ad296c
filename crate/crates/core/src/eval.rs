//! Accuracy, heuristic confusion, rarity analysis and report tables.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::EntityId;
use crate::pipeline::DocumentRun;

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Correct over total, pooled. `None` predictions count as wrong.
pub fn micro_accuracy(predicted: &[Option<EntityId>], gold: &[EntityId]) -> Result<f64> {
    if predicted.len() != gold.len() {
        return Err(Error::Shape(
            "one prediction per gold mention required".into(),
        ));
    }
    if gold.is_empty() {
        return Err(Error::data("empty evaluation set"));
    }
    let correct = predicted
        .iter()
        .zip(gold)
        .filter(|(p, g)| **p == Some(**g))
        .count();
    Ok(correct as f64 / gold.len() as f64)
}

/// Rows: local prediction correct / incorrect. Columns: flagged as low
/// confidence / not flagged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub correct_low: usize,
    pub correct_high: usize,
    pub incorrect_low: usize,
    pub incorrect_high: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.correct_low + self.correct_high + self.incorrect_low + self.incorrect_high
    }

    pub fn flagged(&self) -> usize {
        self.correct_low + self.incorrect_low
    }

    /// Share of local mistakes that were flagged.
    pub fn mistake_recall(&self) -> f64 {
        let mistakes = self.incorrect_low + self.incorrect_high;
        if mistakes == 0 {
            1.0
        } else {
            self.incorrect_low as f64 / mistakes as f64
        }
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        self.correct_low += other.correct_low;
        self.correct_high += other.correct_high;
        self.incorrect_low += other.incorrect_low;
        self.incorrect_high += other.incorrect_high;
    }
}

pub fn heuristic_confusion(correct: &[bool], flagged: &[bool]) -> Result<ConfusionMatrix> {
    if correct.len() != flagged.len() {
        return Err(Error::Shape(format!(
            "{} correctness flags vs {} heuristic flags",
            correct.len(),
            flagged.len()
        )));
    }
    let mut m = ConfusionMatrix::default();
    for (&c, &f) in correct.iter().zip(flagged) {
        match (c, f) {
            (true, true) => m.correct_low += 1,
            (true, false) => m.correct_high += 1,
            (false, true) => m.incorrect_low += 1,
            (false, false) => m.incorrect_high += 1,
        }
    }
    Ok(m)
}

/// Flags the `ceil(fraction · n)` least confident positions.
pub fn lowest_fraction(order: &[usize], fraction: f64) -> Vec<bool> {
    let n = order.len();
    let take = ((n as f64) * fraction).ceil() as usize;
    let mut flags = vec![false; n];
    for &p in order.iter().take(take.min(n)) {
        flags[p] = true;
    }
    flags
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RarityBin {
    pub bin: usize,
    /// Bin range on the 0–100 prior scale.
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub local_accuracy: f64,
    pub global_accuracy: f64,
    pub delta: f64,
}

pub fn rarity_bin(prior: f64, bins: usize) -> usize {
    let scaled = (prior * 100.0).clamp(0.0, 100.0);
    let width = 100.0 / bins as f64;
    ((scaled / width).ceil() as usize)
        .saturating_sub(1)
        .min(bins - 1)
}

/// Global-minus-local accuracy per equal-width bin of `p(gold | surface)`;
/// empty bins are left out.
pub fn rarity_analysis(
    global_correct: &[bool],
    local_correct: &[bool],
    priors: &[f64],
    bins: usize,
) -> Result<Vec<RarityBin>> {
    if global_correct.len() != local_correct.len() || local_correct.len() != priors.len() {
        return Err(Error::Shape("rarity inputs differ in length".into()));
    }
    if bins == 0 {
        return Err(Error::Config("rarity bin count must be positive".into()));
    }
    let mut acc = vec![(0usize, 0usize, 0usize); bins];
    for ((&g, &l), &p) in global_correct.iter().zip(local_correct).zip(priors) {
        let b = &mut acc[rarity_bin(p, bins)];
        b.0 += 1;
        b.1 += l as usize;
        b.2 += g as usize;
    }
    let width = 100.0 / bins as f64;
    Ok(acc
        .into_iter()
        .enumerate()
        .filter(|(_, (n, _, _))| *n > 0)
        .map(|(bin, (n, l, g))| {
            let (la, ga) = (l as f64 / n as f64, g as f64 / n as f64);
            RarityBin {
                bin,
                lo: bin as f64 * width,
                hi: (bin + 1) as f64 * width,
                count: n,
                local_accuracy: la,
                global_accuracy: ga,
                delta: ga - la,
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemAccuracy {
    pub system: String,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub label: String,
    pub systems: Vec<SystemAccuracy>,
    pub confusion: Vec<(String, ConfusionMatrix)>,
    pub rarity: Vec<RarityBin>,
    pub config: serde_json::Value,
}

impl EvalReport {
    pub fn accuracy(&self, system: &str) -> Option<f64> {
        self.systems
            .iter()
            .find(|s| s.system == system)
            .map(|s| s.accuracy)
    }

    pub fn confusion(&self, name: &str) -> Option<&ConfusionMatrix> {
        self.confusion
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
    }
}

/// Per-system predicted entities of every evaluated mention, in document
/// order.
fn system_outputs(run: &DocumentRun) -> Vec<(String, Vec<EntityId>)> {
    let b = &run.baselines;
    let mut out = vec![
        ("local".to_string(), run.entities_of(&b.local)),
        ("one_step".to_string(), run.entities_of(&b.one_step)),
        ("converged".to_string(), run.entities_of(&b.converged)),
        ("lds".to_string(), run.entities_of(&b.lds)),
    ];
    for (label, sol) in &run.variants {
        out.push((label.clone(), run.entities_of(sol)));
    }
    out
}

/// Aggregates document runs into one report.
pub fn build_report(
    label: &str,
    runs: &[DocumentRun],
    h1_fraction: f64,
    rarity_bins: usize,
    config: serde_json::Value,
) -> Result<EvalReport> {
    let names: Vec<String> = runs
        .first()
        .map(|r| system_outputs(r).into_iter().map(|(n, _)| n).collect())
        .unwrap_or_default();
    let mut correct = vec![0usize; names.len()];
    let mut total = 0usize;
    let mut h1 = ConfusionMatrix::default();
    let mut h2: Option<ConfusionMatrix> = None;
    let (mut local_ok, mut lds_ok, mut priors) = (Vec::new(), Vec::new(), Vec::new());
    for run in runs {
        let outputs = system_outputs(run);
        total += run.unlinkable_gold;
        let local_entities = &outputs[0].1;
        let mut local_correct = Vec::with_capacity(run.gold.len());
        for (pos, gold) in run.gold.iter().enumerate() {
            let Some(g) = gold else { continue };
            total += 1;
            for (k, (_, ents)) in outputs.iter().enumerate() {
                correct[k] += (ents[pos] == *g) as usize;
            }
            local_ok.push(local_entities[pos] == *g);
            lds_ok.push(outputs[3].1[pos] == *g);
            priors.push(run.gold_prior[pos]);
            local_correct.push(local_entities[pos] == *g);
        }
        let labelled: Vec<usize> = (0..run.gold.len())
            .filter(|&p| run.gold[p].is_some())
            .collect();
        let pick = |flags: &[bool]| labelled.iter().map(|&p| flags[p]).collect::<Vec<_>>();
        h1.add(&heuristic_confusion(
            &local_correct,
            &pick(&lowest_fraction(&run.h1.order, h1_fraction)),
        )?);
        if let Some(r) = &run.h2 {
            h2.get_or_insert_with(ConfusionMatrix::default)
                .add(&heuristic_confusion(&local_correct, &pick(&r.flagged))?);
        }
    }
    if total == 0 {
        return Err(Error::data("empty evaluation set"));
    }
    let systems = names
        .into_iter()
        .zip(correct)
        .map(|(system, c)| SystemAccuracy {
            system,
            correct: c,
            total,
            accuracy: c as f64 / total as f64,
        })
        .collect();
    let mut confusion = vec![("h1".to_string(), h1)];
    if let Some(m) = h2 {
        confusion.push(("h2".to_string(), m));
    }
    Ok(EvalReport {
        version: REPORT_FORMAT_VERSION,
        label: label.to_string(),
        systems,
        confusion,
        rarity: rarity_analysis(&lds_ok, &local_ok, &priors, rarity_bins)?,
        config,
    })
}

/// One report per labelled variant, each with that variant's search in
/// the `lds` row.
pub fn variant_reports(
    runs: &[DocumentRun],
    h1_fraction: f64,
    rarity_bins: usize,
    configs: &[(String, serde_json::Value)],
) -> Result<Vec<EvalReport>> {
    configs
        .iter()
        .enumerate()
        .map(|(k, (label, config))| {
            let swapped: Vec<DocumentRun> = runs
                .iter()
                .map(|r| {
                    let mut r = r.clone();
                    r.baselines.lds = r.variants[k].1.clone();
                    r.variants.clear();
                    r
                })
                .collect();
            build_report(label, &swapped, h1_fraction, rarity_bins, config.clone())
        })
        .collect()
}

/// One JSON object per line.
pub fn reports_to_jsonl(reports: &[EvalReport]) -> Result<String> {
    let mut out = String::new();
    for r in reports {
        out.push_str(&serde_json::to_string(r).map_err(|e| Error::data(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| {
                if i == 0 {
                    format!("{c:<w$}")
                } else {
                    format!("{c:>w$}")
                }
            })
            .collect();
        out.push_str(parts.join("  ").trim_end());
        out.push('\n');
    };
    line(header.to_vec(), &mut out);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    line(rule.iter().map(String::as_str).collect(), &mut out);
    for row in rows {
        line(row.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

pub fn render_text(report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "== {} ==", report.label);
    let rows: Vec<Vec<String>> = report
        .systems
        .iter()
        .map(|s| {
            vec![
                s.system.clone(),
                s.correct.to_string(),
                s.total.to_string(),
                format!("{:.2}", 100.0 * s.accuracy),
            ]
        })
        .collect();
    out.push_str(&table(&["system", "correct", "total", "accuracy"], &rows));
    out.push('\n');
    let rows: Vec<Vec<String>> = report
        .confusion
        .iter()
        .flat_map(|(name, m)| {
            [
                vec![
                    format!("{name} correct"),
                    m.correct_low.to_string(),
                    m.correct_high.to_string(),
                ],
                vec![
                    format!("{name} incorrect"),
                    m.incorrect_low.to_string(),
                    m.incorrect_high.to_string(),
                ],
            ]
        })
        .collect();
    out.push_str(&table(&["local prediction", "low", "high"], &rows));
    out.push('\n');
    let rows: Vec<Vec<String>> = report
        .rarity
        .iter()
        .map(|b| {
            vec![
                format!("({:.0}, {:.0}]", b.lo, b.hi),
                b.count.to_string(),
                format!("{:.2}", 100.0 * b.local_accuracy),
                format!("{:.2}", 100.0 * b.global_accuracy),
                format!("{:+.2}", 100.0 * b.delta),
            ]
        })
        .collect();
    out.push_str(&table(
        &["prior bin", "mentions", "local", "global", "delta"],
        &rows,
    ));
    out
}

/// One row per report: label and the accuracy of each system.
pub fn render_ablation(reports: &[EvalReport]) -> String {
    let Some(first) = reports.first() else {
        return String::new();
    };
    let names: Vec<&str> = first.systems.iter().map(|s| s.system.as_str()).collect();
    let mut header = vec!["setting"];
    header.extend(&names);
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let mut row = vec![r.label.clone()];
            row.extend(
                r.systems
                    .iter()
                    .map(|s| format!("{:.2}", 100.0 * s.accuracy)),
            );
            row
        })
        .collect();
    table(&header, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn flags(counts: [usize; 4]) -> (Vec<bool>, Vec<bool>) {
        let mut c = Vec::new();
        let mut f = Vec::new();
        for (n, (corr, flag)) in
            counts
                .iter()
                .zip([(true, true), (true, false), (false, true), (false, false)])
        {
            c.extend(std::iter::repeat_n(corr, *n));
            f.extend(std::iter::repeat_n(flag, *n));
        }
        (c, f)
    }

    #[test]
    fn micro_accuracy_examples() {
        assert_eq!(micro_accuracy(&[Some(1), Some(2)], &[1, 2]).unwrap(), 1.0);
        let gold = vec![7u32; 4483];
        let pred: Vec<Option<u32>> = (0..4483)
            .map(|i| if i < 4071 { Some(7) } else { None })
            .collect();
        assert!((micro_accuracy(&pred, &gold).unwrap() - 4071.0 / 4483.0).abs() < 1e-12);
        assert!(micro_accuracy(&[], &[]).is_err());
    }

    #[test]
    fn confusion_reproduces_table_counts() {
        let (c, f) = flags([1134, 2937, 276, 136]);
        let m = heuristic_confusion(&c, &f).unwrap();
        assert_eq!(
            (
                m.correct_low,
                m.correct_high,
                m.incorrect_low,
                m.incorrect_high
            ),
            (1134, 2937, 276, 136)
        );
        assert_eq!(m.total(), 4483);
        let m = heuristic_confusion(&[true; 5], &[false; 5]).unwrap();
        assert_eq!(m.correct_high, 5);
        assert!(heuristic_confusion(&[true], &[]).is_err());
    }

    #[test]
    fn rarity_examples() {
        let bins = rarity_analysis(
            &[true, false, true],
            &[true, false, true],
            &[0.05, 0.5, 1.0],
            10,
        )
        .unwrap();
        assert!(bins.iter().all(|b| b.delta == 0.0));
        assert_eq!(rarity_bin(1.0, 10), 9);
        assert_eq!(rarity_bin(0.0, 10), 0);
        assert_eq!(rarity_bin(0.1, 10), 0);
        assert_eq!(rarity_bin(0.1000001, 10), 1);
    }

    proptest! {
        #[test]
        fn rarity_counts_cover_mentions(priors in prop::collection::vec(0.0f64..=1.0, 1..60), bins in 1usize..12) {
            let ok = vec![true; priors.len()];
            let r = rarity_analysis(&ok, &ok, &priors, bins).unwrap();
            prop_assert_eq!(r.iter().map(|b| b.count).sum::<usize>(), priors.len());
        }

        #[test]
        fn confusion_is_order_invariant(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 0..50)) {
            let (c, f): (Vec<bool>, Vec<bool>) = pairs.iter().copied().unzip();
            let m = heuristic_confusion(&c, &f).unwrap();
            let (rc, rf): (Vec<bool>, Vec<bool>) = pairs.iter().rev().copied().unzip();
            prop_assert_eq!(heuristic_confusion(&rc, &rf).unwrap(), m);
            prop_assert_eq!(m.total(), pairs.len());
        }

        #[test]
        fn accuracy_is_one_minus_hamming_rate(pairs in prop::collection::vec((0u32..4, 0u32..4), 1..50)) {
            let pred: Vec<Option<u32>> = pairs.iter().map(|p| Some(p.0)).collect();
            let gold: Vec<u32> = pairs.iter().map(|p| p.1).collect();
            let wrong = pairs.iter().filter(|p| p.0 != p.1).count();
            let acc = micro_accuracy(&pred, &gold).unwrap();
            prop_assert!((acc - (1.0 - wrong as f64 / pairs.len() as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn lowest_fraction_flags_ceiling() {
        assert_eq!(
            lowest_fraction(&[2, 0, 1, 3], 0.25),
            vec![false, false, true, false]
        );
        assert_eq!(
            lowest_fraction(&[4, 3, 2, 1, 0], 0.5)
                .iter()
                .filter(|&&f| f)
                .count(),
            3
        );
    }
}
