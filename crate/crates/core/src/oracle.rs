//! Brute-force references for tests and acceptance runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coherence::{propagate, DocScores, Solution, WINDOW};
use crate::error::{Error, Result};
use crate::heuristics::{h1, ConfidenceReport, Heuristic};
use crate::lds::{search, DepthMode, SearchConfig};
use crate::pruner::{prune_score, PruneScore};

/// Largest enumeration either oracle will attempt.
pub const ENUMERATION_GUARD: u64 = 1_000_000;

fn checked_product(sizes: impl Iterator<Item = usize>) -> Result<u64> {
    let mut total: u64 = 1;
    for k in sizes {
        total = total.saturating_mul(k as u64);
        if total > ENUMERATION_GUARD {
            return Err(Error::Guard(format!(
                "enumeration exceeds {ENUMERATION_GUARD} assignments"
            )));
        }
    }
    Ok(total)
}

/// Advances a mixed-radix counter; false once it wraps.
fn next_assignment(digits: &mut [usize], radix: &[usize]) -> bool {
    for (d, &r) in digits.iter_mut().zip(radix).rev() {
        *d += 1;
        if *d < r {
            return true;
        }
        *d = 0;
    }
    false
}

/// Σψ plus the ordered double sum of φ over all mention pairs.
pub fn joint_objective(scores: &DocScores, assignment: &[usize]) -> f64 {
    let n = scores.n();
    let mut total = 0.0;
    for i in 0..n {
        total += scores.psi()[i][assignment[i]];
        for j in 0..n {
            if i != j {
                total += scores.phi(i, assignment[i], j, assignment[j]);
            }
        }
    }
    total
}

/// Exact maximizer of [`joint_objective`]; the lexicographically smallest
/// assignment wins ties.
pub fn exact_argmax(scores: &DocScores) -> Result<(Solution, f64)> {
    let n = scores.n();
    if n > scores.window() / 2 + 1 {
        return Err(Error::Guard(format!(
            "{n} mentions do not fit inside one coherence window of {}",
            scores.window()
        )));
    }
    let radix: Vec<usize> = (0..n).map(|i| scores.k(i)).collect();
    checked_product(radix.iter().copied())?;
    let mut digits = vec![0; n];
    let mut best = (digits.clone(), joint_objective(scores, &digits));
    while next_assignment(&mut digits, &radix) {
        let v = joint_objective(scores, &digits);
        if v > best.1 {
            best = (digits.clone(), v);
        }
    }
    Ok(best)
}

/// Best final-depth solution over every discrepancy set on the first
/// `depth` mentions of `order`, with the search's tie rules.
pub fn exhaustive_discrepancy_best(
    scores: &DocScores,
    order: &[usize],
    depth: usize,
    branch_k: usize,
) -> Result<(Solution, PruneScore)> {
    let initial = scores.local_argmax();
    if depth > order.len() {
        return Err(Error::data(format!(
            "depth {depth} exceeds {} ordered mentions",
            order.len()
        )));
    }
    let mentions = &order[..depth];
    let radix: Vec<usize> = mentions
        .iter()
        .map(|&m| branch_k.min(scores.k(m)))
        .collect();
    checked_product(radix.iter().copied())?;
    let changes = |o: &[usize]| o.iter().zip(&initial).filter(|(a, b)| a != b).count();
    let mut digits = vec![0; depth];
    let mut best: Option<(Solution, PruneScore, usize)> = None;
    loop {
        let d: Vec<(usize, usize)> = mentions
            .iter()
            .copied()
            .zip(digits.iter().copied())
            .collect();
        let out = propagate(scores, &initial, &d)?;
        let score = prune_score(scores, &out);
        let ch = changes(&out);
        let better = match &best {
            None => true,
            Some((_, s, c)) => score.total > s.total || (score.total == s.total && ch < *c),
        };
        if better {
            best = Some((out, score, ch));
        }
        if !next_assignment(&mut digits, &radix) {
            break;
        }
    }
    let (solution, score, _) = best.expect("at least one enumeration");
    Ok((solution, score))
}

/// Random instance with `n` mentions, up to `kmax` candidates each and
/// dense φ tables in [-1, 1).
pub fn random_tiny_scores(rng: &mut ChaCha8Rng, n: usize, kmax: usize) -> Result<DocScores> {
    let psi: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..rng.gen_range(1..=kmax))
                .map(|_| rng.gen_range(0.0..1.0))
                .collect()
        })
        .collect();
    let slots: usize = psi.iter().map(Vec::len).sum();
    let phi = (0..slots * slots)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let phi_g = (0..slots * slots)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    DocScores::from_tables(psi, Some(phi), Some(phi_g), WINDOW)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleCheckReport {
    pub instances: usize,
    /// Full-depth searches whose prune score equals the exhaustive best.
    pub search_matches: usize,
    pub max_search_gap: f64,
    pub sampled_assignments: usize,
    /// Sampled assignments scoring above `exact_argmax`.
    pub argmax_violations: usize,
}

impl OracleCheckReport {
    pub fn passed(&self) -> bool {
        self.search_matches == self.instances && self.argmax_violations == 0
    }
}

/// Seeded tiny-instance suite: a wide enough beam at full depth must
/// reach the exhaustive discrepancy optimum, and no sampled assignment
/// may beat the exact joint maximizer.
pub fn tiny_instance_suite(
    instances: usize,
    samples: usize,
    seed: u64,
) -> Result<OracleCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = OracleCheckReport {
        instances,
        ..Default::default()
    };
    for _ in 0..instances {
        let n = rng.gen_range(1..=3);
        let scores = random_tiny_scores(&mut rng, n, 3)?;
        let conf: Vec<f64> = scores.psi().iter().map(|p| h1(p)).collect();
        let report = ConfidenceReport::from_confidence(conf, vec![true; n]);
        let kmax = (0..n).map(|i| scores.k(i)).max().unwrap_or(1);
        let cfg = SearchConfig {
            beam: kmax.pow(n as u32),
            branch_k: kmax,
            heuristic: Heuristic::H2,
            depth: DepthMode::Flexible,
            seed,
        };
        let found = search(&scores, &report, &cfg)?;
        let (_, best) = exhaustive_discrepancy_best(&scores, &report.order, n, kmax)?;
        let gap = (best.total - found.score.total).abs();
        out.max_search_gap = out.max_search_gap.max(gap);
        if gap <= 1e-9 * best.total.abs().max(1.0) {
            out.search_matches += 1;
        }
        let (_, exact) = exact_argmax(&scores)?;
        for _ in 0..samples {
            let a: Vec<usize> = (0..n).map(|i| rng.gen_range(0..scores.k(i))).collect();
            out.sampled_assignments += 1;
            if joint_objective(&scores, &a) > exact + 1e-12 {
                out.argmax_violations += 1;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_mention_is_local_argmax() {
        let s = DocScores::from_tables(vec![vec![0.1, 0.8, 0.3]], None, None, WINDOW).unwrap();
        assert_eq!(exact_argmax(&s).unwrap().0, vec![1]);
        assert_eq!(
            exhaustive_discrepancy_best(&s, &[0], 0, 3).unwrap().0,
            vec![1]
        );
    }

    #[test]
    fn coherent_pair_beats_local_preference() {
        // slots: a1=0 a2=1 b1=2 b2=3
        let mut phi = vec![0.0; 16];
        phi[4 + 3] = 1.0; // φ(a2, b2)
        phi[3 * 4 + 1] = 1.0; // φ(b2, a2)
        let s = DocScores::from_tables(
            vec![vec![0.9, 0.5], vec![0.8, 0.4]],
            Some(phi),
            None,
            WINDOW,
        )
        .unwrap();
        let (sol, v) = exact_argmax(&s).unwrap();
        assert_eq!(sol, vec![1, 1]);
        assert!((v - 2.9).abs() < 1e-12);
    }

    #[test]
    fn tiny_suite_passes() {
        let r = tiny_instance_suite(30, 20, 5).unwrap();
        assert!(r.passed(), "{r:?}");
        assert_eq!(r.sampled_assignments, 600);
    }

    #[test]
    fn guard_is_enforced() {
        let psi = vec![vec![0.5; 10]; 7];
        let s = DocScores::from_tables(psi, None, None, WINDOW).unwrap();
        assert!(matches!(exact_argmax(&s), Err(Error::Guard(_))));
        let order: Vec<usize> = (0..7).collect();
        assert!(matches!(
            exhaustive_discrepancy_best(&s, &order, 7, 10),
            Err(Error::Guard(_))
        ));
    }

    #[test]
    fn odometer_visits_every_assignment() {
        let radix = [2, 3, 1, 2];
        let mut d = vec![0; 4];
        let mut seen = 1;
        while next_assignment(&mut d, &radix) {
            seen += 1;
        }
        assert_eq!(seen, 12);
        assert_eq!(d, vec![0; 4]);
    }
}
