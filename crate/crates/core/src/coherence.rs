//! Pairwise coherence, entity contexts and the discrepancy propagator.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::LinkingInstance;
use crate::error::{Error, Result};
use crate::kb::{EntityId, KnowledgeBase};
use crate::local::{TrainConfig, TrainReport};
use crate::nn::{dot, softmax_cross_entropy, Matrix};

/// Number of surrounding mentions in an entity context.
pub const WINDOW: usize = 30;

/// Candidate index chosen for each active mention.
pub type Solution = Vec<usize>;

/// Bilinear-plus-linear pair scorer `eᵀCy + wᵀr(e, y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoherenceParams {
    pub c: Matrix,
    pub w: [f64; 3],
}

impl CoherenceParams {
    pub fn zeros(dim: usize) -> Self {
        CoherenceParams {
            c: Matrix::zeros(dim, dim),
            w: [0.0; 3],
        }
    }

    pub fn dim(&self) -> usize {
        self.c.rows()
    }

    pub fn is_zero(&self) -> bool {
        self.w == [0.0; 3] && self.c.data().iter().all(|&v| v == 0.0)
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.c.shape() != (dim, dim) {
            return Err(Error::Shape(format!(
                "coherence matrix is {:?}, expected {dim}x{dim}",
                self.c.shape()
            )));
        }
        Ok(())
    }

    pub fn flat(&self) -> Vec<f64> {
        self.c.data().iter().chain(&self.w).copied().collect()
    }

    pub fn from_flat(dim: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != dim * dim + 3 {
            return Err(Error::Shape(format!(
                "expected {} coherence values, got {}",
                dim * dim + 3,
                flat.len()
            )));
        }
        Ok(CoherenceParams {
            c: Matrix::from_vec(dim, dim, flat[..dim * dim].to_vec())?,
            w: [flat[dim * dim], flat[dim * dim + 1], flat[dim * dim + 2]],
        })
    }
}

pub fn phi(e: EntityId, y: EntityId, params: &CoherenceParams, kb: &KnowledgeBase) -> Result<f64> {
    let r = kb.pair_features(e, y)?;
    let (ee, ye) = (kb.embedding(e)?, kb.embedding(y)?);
    if ee.len() != params.dim() {
        return Err(Error::Shape(format!(
            "embedding dim {} vs coherence dim {}",
            ee.len(),
            params.dim()
        )));
    }
    Ok(params.c.bilinear(ee, ye) + dot(&params.w, &r))
}

/// Positions within `window / 2` of `i`, excluding `i`, clipped to `0..n`.
pub fn context_positions(n: usize, i: usize, window: usize) -> impl Iterator<Item = usize> {
    let half = window / 2;
    (i.saturating_sub(half)..n.min(i + half + 1)).filter(move |&m| m != i)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityContext {
    pub members: Vec<(usize, EntityId)>,
}

impl EntityContext {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

pub fn entity_context(
    instance: &LinkingInstance,
    solution: &[usize],
    i: usize,
    window: usize,
) -> EntityContext {
    let members = context_positions(instance.n_active(), i, window)
        .map(|m| (m, instance.active[m].entity(solution[m])))
        .collect();
    EntityContext { members }
}

/// Cached ψ and φ values for one document.
///
/// Candidate `j` of position `i` occupies slot `offsets[i] + j`. The φ
/// tables are indexed `[context slot][candidate slot]` and only filled
/// for positions within the window of each other.
#[derive(Clone, Debug)]
pub struct DocScores {
    psi: Vec<Vec<f64>>,
    offsets: Vec<usize>,
    n_slots: usize,
    window: usize,
    phi: Vec<f64>,
    phi_g: Vec<f64>,
}

fn slot_offsets(psi: &[Vec<f64>]) -> (Vec<usize>, usize) {
    let mut offsets = Vec::with_capacity(psi.len());
    let mut total = 0;
    for p in psi {
        offsets.push(total);
        total += p.len();
    }
    (offsets, total)
}

impl DocScores {
    pub fn new(
        instance: &LinkingInstance,
        kb: &KnowledgeBase,
        psi: Vec<Vec<f64>>,
        coherence: &CoherenceParams,
        global: &CoherenceParams,
        window: usize,
    ) -> Result<Self> {
        if psi.len() != instance.n_active()
            || psi
                .iter()
                .zip(&instance.active)
                .any(|(p, a)| p.len() != a.len())
        {
            return Err(Error::Shape(
                "local scores do not match the candidate sets".into(),
            ));
        }
        coherence.validate(kb.dim())?;
        global.validate(kb.dim())?;
        let (offsets, n_slots) = slot_offsets(&psi);
        let mut entities = Vec::with_capacity(n_slots);
        for am in &instance.active {
            entities.extend(am.candidates.iter().map(|c| c.entity));
        }
        let embed: Vec<&[f64]> = entities
            .iter()
            .map(|&e| kb.embedding(e))
            .collect::<Result<_>>()?;
        let c_y: Vec<Vec<f64>> = embed.iter().map(|y| coherence.c.matvec(y)).collect();
        let cg_y: Vec<Vec<f64>> = embed.iter().map(|y| global.c.matvec(y)).collect();
        let mut phi = vec![0.0; n_slots * n_slots];
        let mut phi_g = vec![0.0; n_slots * n_slots];
        let n = psi.len();
        for i in 0..n {
            for m in context_positions(n, i, window) {
                for a in offsets[m]..offsets[m] + psi[m].len() {
                    for b in offsets[i]..offsets[i] + psi[i].len() {
                        let r = kb.pair_features(entities[a], entities[b])?;
                        phi[a * n_slots + b] = dot(embed[a], &c_y[b]) + dot(&coherence.w, &r);
                        phi_g[a * n_slots + b] = dot(embed[a], &cg_y[b]) + dot(&global.w, &r);
                    }
                }
            }
        }
        Ok(DocScores {
            psi,
            offsets,
            n_slots,
            window,
            phi,
            phi_g,
        })
    }

    /// Builds a cache from explicit slot-by-slot tables. Missing φ tables
    /// are taken as zero.
    pub fn from_tables(
        psi: Vec<Vec<f64>>,
        phi: Option<Vec<f64>>,
        phi_g: Option<Vec<f64>>,
        window: usize,
    ) -> Result<Self> {
        let (offsets, n_slots) = slot_offsets(&psi);
        let check = |t: Option<Vec<f64>>| -> Result<Vec<f64>> {
            match t {
                Some(t) if t.len() == n_slots * n_slots => Ok(t),
                Some(t) => Err(Error::Shape(format!(
                    "table has {} entries, expected {}",
                    t.len(),
                    n_slots * n_slots
                ))),
                None => Ok(vec![0.0; n_slots * n_slots]),
            }
        };
        if psi.iter().any(|p| p.is_empty()) {
            return Err(Error::Shape(
                "every mention needs at least one candidate".into(),
            ));
        }
        Ok(DocScores {
            phi: check(phi)?,
            phi_g: check(phi_g)?,
            psi,
            offsets,
            n_slots,
            window,
        })
    }

    pub fn n(&self) -> usize {
        self.psi.len()
    }

    pub fn k(&self, i: usize) -> usize {
        self.psi[i].len()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn psi(&self) -> &[Vec<f64>] {
        &self.psi
    }

    pub fn slot(&self, i: usize, j: usize) -> usize {
        self.offsets[i] + j
    }

    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    /// φ(entity of `(m, jm)`, entity of `(i, ji)`).
    pub fn phi(&self, m: usize, jm: usize, i: usize, ji: usize) -> f64 {
        self.phi[self.slot(m, jm) * self.n_slots + self.slot(i, ji)]
    }

    pub fn phi_g(&self, m: usize, jm: usize, i: usize, ji: usize) -> f64 {
        self.phi_g[self.slot(m, jm) * self.n_slots + self.slot(i, ji)]
    }

    pub fn context(&self, i: usize) -> impl Iterator<Item = usize> {
        context_positions(self.n(), i, self.window)
    }

    /// `ψ + mean φ` over the entity context; `ψ` alone when it is empty.
    pub fn g_score(&self, assignment: &[usize], i: usize, j: usize) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for m in self.context(i) {
            sum += self.phi(m, assignment[m], i, j);
            count += 1;
        }
        if count == 0 {
            self.psi[i][j]
        } else {
            self.psi[i][j] + sum / count as f64
        }
    }

    /// Argmax of `g` over the candidates of `i`, lowest index on ties.
    pub fn argmax_g(&self, assignment: &[usize], i: usize) -> usize {
        argmax_first((0..self.k(i)).map(|j| self.g_score(assignment, i, j)))
    }

    /// Per-mention argmax of ψ, lowest index on ties.
    pub fn local_argmax(&self) -> Solution {
        self.psi
            .iter()
            .map(|p| argmax_first(p.iter().copied()))
            .collect()
    }

    pub fn validate_solution(&self, solution: &[usize]) -> Result<()> {
        if solution.len() != self.n() {
            return Err(Error::Shape(format!(
                "solution has {} entries for {} mentions",
                solution.len(),
                self.n()
            )));
        }
        for (i, &j) in solution.iter().enumerate() {
            if j >= self.k(i) {
                return Err(Error::Shape(format!("mention {i} has no candidate {j}")));
            }
        }
        Ok(())
    }
}

pub(crate) fn argmax_first(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (j, v) in values.enumerate() {
        if v > best.1 {
            best = (j, v);
        }
    }
    best.0
}

/// Applies `discrepancies` to `initial` and re-assigns, in one synchronous
/// pass, every unpinned mention whose context holds a pinned mention. A pin
/// that keeps the incumbent still counts.
pub fn propagate(
    scores: &DocScores,
    initial: &[usize],
    discrepancies: &[(usize, usize)],
) -> Result<Solution> {
    scores.validate_solution(initial)?;
    let n = scores.n();
    let mut pinned = vec![false; n];
    let mut after = initial.to_vec();
    for &(m, j) in discrepancies {
        if m >= n || j >= scores.k(m) {
            return Err(Error::data(format!("discrepancy ({m}, {j}) out of range")));
        }
        if pinned[m] {
            return Err(Error::data(format!(
                "mention {m} repeated in discrepancy set"
            )));
        }
        pinned[m] = true;
        after[m] = j;
    }
    let pins: Vec<usize> = (0..n).filter(|&m| pinned[m]).collect();
    if pins.is_empty() {
        return Ok(after);
    }
    let half = scores.window() / 2;
    let mut out = after.clone();
    for i in 0..n {
        if pinned[i] {
            continue;
        }
        let touched = pins.iter().any(|&m| m != i && m.abs_diff(i) <= half);
        if touched {
            out[i] = scores.argmax_g(&after, i);
        }
    }
    Ok(out)
}

/// One synchronous re-assignment of every mention.
pub fn sweep(scores: &DocScores, assignment: &[usize]) -> Solution {
    (0..scores.n())
        .map(|i| scores.argmax_g(assignment, i))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Propagation {
    pub solution: Solution,
    pub iterations: usize,
    pub converged: bool,
}

/// Synchronous sweeps until a fixed point or `max_iters`.
pub fn iterate_propagation(
    scores: &DocScores,
    solution: &[usize],
    max_iters: usize,
) -> Result<Propagation> {
    if max_iters == 0 {
        return Err(Error::Config("max_iters must be at least 1".into()));
    }
    scores.validate_solution(solution)?;
    let mut current = solution.to_vec();
    for it in 1..=max_iters {
        let next = sweep(scores, &current);
        if next == current {
            return Ok(Propagation {
                solution: next,
                iterations: it,
                converged: true,
            });
        }
        current = next;
    }
    let converged = sweep(scores, &current) == current;
    Ok(Propagation {
        solution: current,
        iterations: max_iters,
        converged,
    })
}

struct CoherenceExample {
    psi: Vec<f64>,
    gold: usize,
    /// Mean embedding of the gold entity context.
    mean_context: Vec<f64>,
    candidates: Vec<Vec<f64>>,
    /// Mean pair features of each candidate against the gold context.
    mean_pairs: Vec<[f64; 3]>,
}

impl CoherenceExample {
    fn loss(&self, params: &CoherenceParams, grads: Option<&mut CoherenceParams>) -> f64 {
        let ce = params.c.tmatvec(&self.mean_context);
        let g: Vec<f64> = (0..self.psi.len())
            .map(|j| {
                self.psi[j] + dot(&ce, &self.candidates[j]) + dot(&params.w, &self.mean_pairs[j])
            })
            .collect();
        let (loss, dg) = softmax_cross_entropy(&g, self.gold);
        if let Some(gr) = grads {
            for (j, d) in dg.iter().enumerate() {
                gr.c.add_outer(*d, &self.mean_context, &self.candidates[j]);
                for (wk, rk) in gr.w.iter_mut().zip(self.mean_pairs[j]) {
                    *wk += d * rk;
                }
            }
        }
        loss
    }
}

/// Mention-wise training data with gold entity contexts.
pub struct CoherenceTrainingSet {
    examples: Vec<CoherenceExample>,
    dim: usize,
    pub skipped: usize,
}

impl CoherenceTrainingSet {
    pub fn build(
        instances: &[LinkingInstance],
        kb: &KnowledgeBase,
        psi: &[Vec<Vec<f64>>],
        window: usize,
    ) -> Result<Self> {
        if psi.len() != instances.len() {
            return Err(Error::Shape(
                "one local score table per instance required".into(),
            ));
        }
        let d = kb.dim();
        let mut examples = Vec::new();
        let mut skipped = 0;
        for (inst, scores) in instances.iter().zip(psi) {
            for (i, (am, local)) in inst.active.iter().zip(scores).enumerate() {
                let Some(gold) = inst.gold_candidate(i) else {
                    if inst.gold(i).is_some() {
                        skipped += 1;
                    }
                    continue;
                };
                let ctx: Vec<EntityId> = context_positions(inst.n_active(), i, window)
                    .filter_map(|m| inst.gold(m))
                    .collect();
                if ctx.is_empty() {
                    continue;
                }
                let mut mean_context = vec![0.0; d];
                for &e in &ctx {
                    for (acc, v) in mean_context.iter_mut().zip(kb.embedding(e)?) {
                        *acc += v / ctx.len() as f64;
                    }
                }
                let mut candidates = Vec::with_capacity(am.len());
                let mut mean_pairs = Vec::with_capacity(am.len());
                for cand in &am.candidates {
                    candidates.push(kb.embedding(cand.entity)?.to_vec());
                    let mut r = [0.0; 3];
                    for &e in &ctx {
                        for (acc, v) in r.iter_mut().zip(kb.pair_features(e, cand.entity)?) {
                            *acc += v / ctx.len() as f64;
                        }
                    }
                    mean_pairs.push(r);
                }
                examples.push(CoherenceExample {
                    psi: local.clone(),
                    gold,
                    mean_context,
                    candidates,
                    mean_pairs,
                });
            }
        }
        Ok(CoherenceTrainingSet {
            examples,
            dim: d,
            skipped,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Mean cross-entropy plus `l2 / 2 * |params|^2`.
    pub fn objective(&self, params: &CoherenceParams, l2: f64) -> f64 {
        let total: f64 = self.examples.iter().map(|e| e.loss(params, None)).sum();
        let sq: f64 = params.flat().iter().map(|v| v * v).sum();
        total / self.examples.len().max(1) as f64 + 0.5 * l2 * sq
    }

    pub fn objective_grad(&self, params: &CoherenceParams, l2: f64) -> Vec<f64> {
        let mut g = CoherenceParams::zeros(self.dim);
        for e in &self.examples {
            e.loss(params, Some(&mut g));
        }
        let scale = 1.0 / self.examples.len().max(1) as f64;
        g.flat()
            .into_iter()
            .zip(params.flat())
            .map(|(v, p)| v * scale + l2 * p)
            .collect()
    }
}

/// Per-mention SGD on C and w from zero, with ψ frozen.
pub fn train_coherence(
    instances: &[LinkingInstance],
    kb: &KnowledgeBase,
    psi: &[Vec<Vec<f64>>],
    cfg: &TrainConfig,
) -> Result<(CoherenceParams, TrainReport)> {
    let set = CoherenceTrainingSet::build(instances, kb, psi, WINDOW)?;
    if set.is_empty() {
        return Err(Error::data(
            "coherence training: no mention with a gold candidate and a non-empty context",
        ));
    }
    let mut params = CoherenceParams::zeros(kb.dim());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut report = TrainReport {
        used: set.len(),
        skipped: set.skipped,
        ..Default::default()
    };
    let mut grads = CoherenceParams::zeros(kb.dim());
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            grads.c.scale(0.0);
            grads.w = [0.0; 3];
            total += set.examples[i].loss(&params, Some(&mut grads));
            params.c.scale(1.0 - cfg.lr * cfg.l2);
            params.c.axpy(-cfg.lr, &grads.c)?;
            for (w, g) in params.w.iter_mut().zip(grads.w) {
                *w -= cfg.lr * (g + cfg.l2 * *w);
            }
        }
        report.epoch_losses.push(total / order.len() as f64);
    }
    Ok((params, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn context_windows() {
        assert_eq!(
            context_positions(5, 2, WINDOW).collect::<Vec<_>>(),
            vec![0, 1, 3, 4]
        );
        assert_eq!(
            context_positions(40, 0, WINDOW).collect::<Vec<_>>(),
            (1..=15).collect::<Vec<_>>()
        );
        assert_eq!(context_positions(1, 0, WINDOW).count(), 0);
        for n in 1..70 {
            for i in 0..n {
                let ctx: Vec<_> = context_positions(n, i, WINDOW).collect();
                assert!(ctx.len() <= 30 && !ctx.contains(&i));
            }
        }
    }

    /// Two mentions with two candidates; φ rewards matching indices.
    fn matching_pair(psi: Vec<Vec<f64>>, reward: f64) -> DocScores {
        let mut phi = vec![0.0; 16];
        // slots: (0,0)=0 (0,1)=1 (1,0)=2 (1,1)=3
        for (a, b) in [(0, 2), (2, 0), (1, 3), (3, 1)] {
            phi[a * 4 + b] = reward;
        }
        DocScores::from_tables(psi, Some(phi), None, WINDOW).unwrap()
    }

    #[test]
    fn g_score_examples() {
        let single = DocScores::from_tables(vec![vec![0.3, 0.6]], None, None, WINDOW).unwrap();
        assert_eq!(single.g_score(&[0], 0, 1), 0.6);
        let s = matching_pair(vec![vec![0.9, 0.2], vec![0.6, 0.5]], 0.7);
        assert!((s.g_score(&[1, 0], 1, 1) - (0.5 + 0.7)).abs() < 1e-12);
        assert!((s.g_score(&[1, 0], 1, 0) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn propagate_flips_neighbour() {
        let s = matching_pair(vec![vec![0.9, 0.2], vec![0.6, 0.5]], 0.7);
        let init = s.local_argmax();
        assert_eq!(init, vec![0, 0]);
        assert_eq!(propagate(&s, &init, &[]).unwrap(), init);
        assert_eq!(propagate(&s, &init, &[(0, 1)]).unwrap(), vec![1, 1]);
        assert!(propagate(&s, &init, &[(0, 1), (0, 0)]).is_err());
    }

    #[test]
    fn oscillation_hits_iteration_cap() {
        // Each mention prefers the opposite index of the other.
        let mut phi = vec![0.0; 16];
        for (a, b) in [(0, 3), (3, 0), (1, 2), (2, 1)] {
            phi[a * 4 + b] = 1.0;
        }
        let s = DocScores::from_tables(
            vec![vec![0.5, 0.4], vec![0.5, 0.4]],
            Some(phi),
            None,
            WINDOW,
        )
        .unwrap();
        let p = iterate_propagation(&s, &[0, 0], 7).unwrap();
        assert_eq!(p.iterations, 7);
        assert!(!p.converged);
    }

    fn random_scores(rng: &mut ChaCha8Rng, n: usize, kmax: usize, coherent: bool) -> DocScores {
        let psi: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..rng.gen_range(1..=kmax))
                    .map(|_| rng.gen_range(0.0..1.0))
                    .collect()
            })
            .collect();
        let slots: usize = psi.iter().map(Vec::len).sum();
        let mut table = || -> Vec<f64> {
            (0..slots * slots)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect()
        };
        let (phi, phi_g) = if coherent {
            (Some(table()), Some(table()))
        } else {
            (None, None)
        };
        DocScores::from_tables(psi, phi, phi_g, WINDOW).unwrap()
    }

    proptest! {
        #[test]
        fn empty_discrepancy_is_identity(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(1..12);
            let s = random_scores(&mut rng, n, 4, true);
            let init: Vec<usize> = (0..s.n()).map(|i| rng.gen_range(0..s.k(i))).collect();
            prop_assert_eq!(propagate(&s, &init, &[]).unwrap(), init);
        }

        #[test]
        fn pinned_mentions_hold_and_changes_are_local(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(2..40);
            let s = random_scores(&mut rng, n, 4, true);
            let init = s.local_argmax();
            let mut mentions: Vec<usize> = (0..n).collect();
            mentions.shuffle(&mut rng);
            let d: Vec<(usize, usize)> = mentions[..rng.gen_range(1..=n.min(4))]
                .iter()
                .map(|&m| (m, rng.gen_range(0..s.k(m))))
                .collect();
            let out = propagate(&s, &init, &d).unwrap();
            let mut after = init.clone();
            for &(m, j) in &d {
                prop_assert_eq!(out[m], j);
                after[m] = j;
            }
            for i in 0..n {
                if out[i] != after[i] {
                    prop_assert!(s.context(i).any(|m| d.iter().any(|&(p, _)| p == m)));
                }
            }
        }

        #[test]
        fn zero_coherence_sweeps_to_local_argmax(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(1..20);
            let s = random_scores(&mut rng, n, 5, false);
            let start: Vec<usize> = (0..s.n()).map(|i| rng.gen_range(0..s.k(i))).collect();
            let p = iterate_propagation(&s, &start, 5).unwrap();
            prop_assert_eq!(&p.solution, &s.local_argmax());
            prop_assert!(p.iterations <= 2);
        }

        #[test]
        fn converged_output_is_fixed_point(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.gen_range(1..15);
            let s = random_scores(&mut rng, n, 3, true);
            let p = iterate_propagation(&s, &s.local_argmax(), 50).unwrap();
            if p.converged {
                prop_assert_eq!(sweep(&s, &p.solution), p.solution);
            }
        }
    }
}
