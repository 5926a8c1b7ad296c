//! Collective solution score, hamming loss and rank training.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coherence::{CoherenceParams, DocScores};
use crate::corpus::LinkingInstance;
use crate::error::{Error, Result};
use crate::kb::KnowledgeBase;
use crate::local::{TrainConfig, TrainReport};
use crate::nn::{dot, hinge_rank_loss};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneScore {
    pub local: f64,
    pub coherence: f64,
    pub total: f64,
}

/// Mentions whose assigned entity differs from gold.
pub fn hamming(instance: &LinkingInstance, solution: &[usize]) -> Result<usize> {
    let mut loss = 0;
    for (pos, &j) in solution.iter().enumerate() {
        let gold = instance.gold(pos).ok_or_else(|| {
            Error::data(format!(
                "mention {pos} of {} has no gold label",
                instance.document.id
            ))
        })?;
        if instance.active[pos].entity(j) != gold {
            loss += 1;
        }
    }
    Ok(loss)
}

/// Unordered position pairs `i < j` within half a window of each other.
pub fn scored_pairs(n: usize, window: usize) -> impl Iterator<Item = (usize, usize)> {
    let half = window / 2;
    (0..n).flat_map(move |i| (i + 1..n.min(i + half + 1)).map(move |j| (i, j)))
}

pub fn prune_score(scores: &DocScores, solution: &[usize]) -> PruneScore {
    let local: f64 = solution
        .iter()
        .enumerate()
        .map(|(i, &j)| scores.psi()[i][j])
        .sum();
    let coherence: f64 = scored_pairs(scores.n(), scores.window())
        .map(|(i, j)| scores.phi_g(i, solution[i], j, solution[j]))
        .sum();
    PruneScore {
        local,
        coherence,
        total: local + coherence,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingPair {
    pub better: usize,
    pub worse: usize,
    pub delta: f64,
}

/// Pairs the lowest-hamming solution (first on ties) against every other.
pub fn make_ranking_pairs(hammings: &[usize]) -> Vec<RankingPair> {
    let Some(best) = (0..hammings.len()).min_by_key(|&i| (hammings[i], i)) else {
        return Vec::new();
    };
    (0..hammings.len())
        .filter(|&i| i != best)
        .map(|i| RankingPair {
            better: best,
            worse: i,
            delta: hammings[i].abs_diff(hammings[best]) as f64,
        })
        .collect()
}

/// The parameter-linear part of a solution's score:
/// `s = local + ⟨C_g, outer⟩ + w_g · pairs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionFeatures {
    pub local: f64,
    /// Sum over scored pairs of `e_i e_jᵀ`, row-major.
    pub outer: Vec<f64>,
    pub pairs: [f64; 3],
}

impl SolutionFeatures {
    pub fn build(
        instance: &LinkingInstance,
        kb: &KnowledgeBase,
        psi: &[Vec<f64>],
        solution: &[usize],
        window: usize,
    ) -> Result<Self> {
        let d = kb.dim();
        let mut outer = vec![0.0; d * d];
        let mut pairs = [0.0; 3];
        for (i, j) in scored_pairs(solution.len(), window) {
            let (ei, ej) = (
                instance.active[i].entity(solution[i]),
                instance.active[j].entity(solution[j]),
            );
            let (ui, uj) = (kb.embedding(ei)?, kb.embedding(ej)?);
            for (r, a) in ui.iter().enumerate() {
                for (c, b) in uj.iter().enumerate() {
                    outer[r * d + c] += a * b;
                }
            }
            for (acc, v) in pairs.iter_mut().zip(kb.pair_features(ei, ej)?) {
                *acc += v;
            }
        }
        let local = solution.iter().enumerate().map(|(i, &j)| psi[i][j]).sum();
        Ok(SolutionFeatures {
            local,
            outer,
            pairs,
        })
    }

    pub fn score(&self, params: &CoherenceParams) -> f64 {
        self.local + dot(params.c.data(), &self.outer) + dot(&params.w, &self.pairs)
    }
}

/// The complete solutions considered at one pruning step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruningStep {
    pub solutions: Vec<SolutionFeatures>,
    pub hammings: Vec<usize>,
}

impl PruningStep {
    /// Mean hinge loss over the step's ranking pairs; pairs with a zero
    /// margin carry no signal and are left out.
    pub fn loss(&self, params: &CoherenceParams, grads: Option<&mut CoherenceParams>) -> f64 {
        let scores: Vec<f64> = self.solutions.iter().map(|s| s.score(params)).collect();
        let mut total = 0.0;
        let mut coeff = vec![0.0; scores.len()];
        let pairs: Vec<RankingPair> = make_ranking_pairs(&self.hammings)
            .into_iter()
            .filter(|p| p.delta != 0.0)
            .collect();
        let norm = 1.0 / pairs.len().max(1) as f64;
        for p in pairs {
            let h = hinge_rank_loss(scores[p.better], scores[p.worse], p.delta);
            total += norm * h.loss;
            coeff[p.better] += norm * h.d_true;
            coeff[p.worse] += norm * h.d_false;
        }
        if let Some(g) = grads {
            for (s, &k) in self.solutions.iter().zip(&coeff) {
                if k == 0.0 {
                    continue;
                }
                for (gc, o) in g.c.data_mut().iter_mut().zip(&s.outer) {
                    *gc += k * o;
                }
                for (gw, r) in g.w.iter_mut().zip(s.pairs) {
                    *gw += k * r;
                }
            }
        }
        total
    }

    pub fn is_informative(&self) -> bool {
        self.solutions.len() >= 2 && self.hammings.iter().any(|&h| h != self.hammings[0])
    }
}

/// Mean ranking loss over steps.
pub fn pruner_objective(steps: &[PruningStep], params: &CoherenceParams) -> f64 {
    steps.iter().map(|s| s.loss(params, None)).sum::<f64>() / steps.len().max(1) as f64
}

pub fn pruner_objective_grad(steps: &[PruningStep], params: &CoherenceParams) -> Vec<f64> {
    let mut g = CoherenceParams::zeros(params.dim());
    for s in steps {
        s.loss(params, Some(&mut g));
    }
    let scale = 1.0 / steps.len().max(1) as f64;
    g.flat().into_iter().map(|v| v * scale).collect()
}

/// Per-step SGD on the ranking loss starting from `init`.
pub fn train_pruner(
    steps: &[PruningStep],
    init: CoherenceParams,
    cfg: &TrainConfig,
) -> Result<(CoherenceParams, TrainReport)> {
    let usable: Vec<&PruningStep> = steps.iter().filter(|s| s.solutions.len() >= 2).collect();
    let mut report = TrainReport {
        used: usable.len(),
        skipped: steps.len() - usable.len(),
        ..Default::default()
    };
    let mut params = init;
    if usable.is_empty() {
        return Ok((params, report));
    }
    let dim = params.dim();
    let anchor = params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..usable.len()).collect();
    let mut grads = CoherenceParams::zeros(dim);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            grads.c.scale(0.0);
            grads.w = [0.0; 3];
            let loss = usable[i].loss(&params, Some(&mut grads));
            total += loss;
            // the penalty pulls toward the starting point, so a zero loss
            // from the start leaves the weights where they are
            grads.c.axpy(cfg.l2, &params.c)?;
            grads.c.axpy(-cfg.l2, &anchor.c)?;
            params.c.axpy(-cfg.lr, &grads.c)?;
            for ((w, g), w0) in params.w.iter_mut().zip(grads.w).zip(anchor.w) {
                *w -= cfg.lr * (g + cfg.l2 * (*w - w0));
            }
        }
        report.epoch_losses.push(total / order.len() as f64);
    }
    Ok((params, report))
}
