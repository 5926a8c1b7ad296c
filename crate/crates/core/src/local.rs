//! The local compatibility score ψ(mention, candidate).
//!
//! Context words are attended with weights
//! `α = softmax_l(max_j yⱼᵀ A w_l)` and pooled into `c = Σ α_l w_l`. Each
//! candidate `y` then gets contextual features `[yᵀBc; yᵀB; c]`, which
//! are concatenated with RBF-binned lexical and prior features and fed to
//! a two-hidden-layer relu MLP with a sigmoid output.
//!
//! Training is two-tiered: `A` and `B` are pretrained on the candidate
//! cross-entropy of `softmax_j(yⱼᵀBc)`, then frozen while the MLP is
//! trained on the cross-entropy of `softmax_j(ψⱼ)`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::LinkingInstance;
use crate::error::{Error, Result};
use crate::feat::{fit_binner, RbfBinner, LEXICAL_FEATURES, RBF_BINS};
use crate::kb::KnowledgeBase;
use crate::nn::{dot, softmax, softmax_cross_entropy, Activation, Matrix, Mlp};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    /// d × d word–entity relatedness.
    pub a: Matrix,
    /// d × d bilinear feature form.
    pub b: Matrix,
}

impl AttentionParams {
    pub fn init(dim: usize, rng: &mut ChaCha8Rng) -> Self {
        AttentionParams {
            a: Matrix::xavier(dim, dim, rng),
            b: Matrix::xavier(dim, dim, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.a.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.a.rows();
        if self.a.shape() != (d, d) || self.b.shape() != (d, d) {
            return Err(Error::Shape(format!(
                "attention matrices must be square and equal: A {:?}, B {:?}",
                self.a.shape(),
                self.b.shape()
            )));
        }
        Ok(())
    }
}

fn check_dims(candidates: &[&[f64]], context: &[Vec<f64>], m: &Matrix) -> Result<()> {
    if candidates.is_empty() || context.is_empty() {
        return Err(Error::Shape(
            "attention needs at least one candidate and one context word".into(),
        ));
    }
    let d = m.rows();
    if candidates.iter().any(|y| y.len() != d) || context.iter().any(|w| w.len() != m.cols()) {
        return Err(Error::Shape(format!(
            "embeddings do not match a {:?} matrix",
            m.shape()
        )));
    }
    Ok(())
}

/// Per-word score `max_j yⱼᵀ A w_l` and the maximizing candidate
/// (lowest index on ties).
fn word_scores(candidates: &[&[f64]], context: &[Vec<f64>], a: &Matrix) -> Vec<(f64, usize)> {
    context
        .iter()
        .map(|w| {
            let aw = a.matvec(w);
            candidates
                .iter()
                .enumerate()
                .map(|(j, y)| (dot(y, &aw), j))
                .fold((f64::NEG_INFINITY, 0), |best, cur| {
                    if cur.0 > best.0 {
                        cur
                    } else {
                        best
                    }
                })
        })
        .collect()
}

pub fn attention_weights(
    candidates: &[&[f64]],
    context: &[Vec<f64>],
    a: &Matrix,
) -> Result<Vec<f64>> {
    check_dims(candidates, context, a)?;
    let u: Vec<f64> = word_scores(candidates, context, a)
        .into_iter()
        .map(|(s, _)| s)
        .collect();
    Ok(softmax(&u))
}

pub fn context_embedding(alpha: &[f64], context: &[Vec<f64>]) -> Vec<f64> {
    assert_eq!(alpha.len(), context.len(), "one weight per context word");
    let d = context.first().map_or(0, Vec::len);
    let mut c = vec![0.0; d];
    for (a, w) in alpha.iter().zip(context) {
        for (ci, wi) in c.iter_mut().zip(w) {
            *ci += a * wi;
        }
    }
    c
}

/// `[yᵀBc; yᵀB; c]`, length `2d + 1`.
pub fn contextual_features(y: &[f64], b: &Matrix, c: &[f64]) -> Vec<f64> {
    let yb = b.tmatvec(y);
    let mut out = Vec::with_capacity(2 * c.len() + 1);
    out.push(dot(&yb, c));
    out.extend_from_slice(&yb);
    out.extend_from_slice(c);
    out
}

/// Loss of `softmax_j(yⱼᵀBc)` against `gold`, with gradients w.r.t. A and B
/// accumulated into `grads` when given.
pub fn attention_loss(
    candidates: &[&[f64]],
    context: &[Vec<f64>],
    gold: usize,
    params: &AttentionParams,
    grads: Option<&mut AttentionParams>,
) -> f64 {
    let scored = word_scores(candidates, context, &params.a);
    let u: Vec<f64> = scored.iter().map(|(s, _)| *s).collect();
    let alpha = softmax(&u);
    let c = context_embedding(&alpha, context);
    let bc = params.b.matvec(&c);
    let s: Vec<f64> = candidates.iter().map(|y| dot(y, &bc)).collect();
    let (loss, ds) = softmax_cross_entropy(&s, gold);
    if let Some(g) = grads {
        for (y, &dsj) in candidates.iter().zip(&ds) {
            g.b.add_outer(dsj, y, &c);
        }
        let mut ysum = vec![0.0; bc.len()];
        for (y, &dsj) in candidates.iter().zip(&ds) {
            for (acc, yi) in ysum.iter_mut().zip(y.iter()) {
                *acc += dsj * yi;
            }
        }
        let dc = params.b.tmatvec(&ysum);
        let dalpha: Vec<f64> = context.iter().map(|w| dot(w, &dc)).collect();
        let mean = dot(&alpha, &dalpha);
        for (l, w) in context.iter().enumerate() {
            let du = alpha[l] * (dalpha[l] - mean);
            g.a.add_outer(du, candidates[scored[l].1], w);
        }
    }
    loss
}

/// Binned lexical and prior feature maps, fit on training pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureBinners {
    pub lexical: Vec<RbfBinner>,
    pub prior: RbfBinner,
}

impl FeatureBinners {
    pub fn fit(instances: &[LinkingInstance]) -> Result<Self> {
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); LEXICAL_FEATURES];
        let mut priors = Vec::new();
        for inst in instances {
            for am in &inst.active {
                for (lex, cand) in am.lexical.iter().zip(&am.candidates) {
                    for (col, v) in columns.iter_mut().zip(lex.0) {
                        col.push(v);
                    }
                    priors.push(cand.prior);
                }
            }
        }
        if priors.is_empty() {
            return Err(Error::data("no candidate pairs to fit feature binners on"));
        }
        Ok(FeatureBinners {
            lexical: columns
                .iter()
                .map(|c| fit_binner(c))
                .collect::<Result<_>>()?,
            prior: fit_binner(&priors)?,
        })
    }

    pub fn width(&self) -> usize {
        (self.lexical.len() + 1) * RBF_BINS
    }
}

/// MLP scorer plus the binners that feed it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalModel {
    pub mlp: Mlp,
    pub binners: FeatureBinners,
}

/// Hidden sizes `min(200, 4·input)` and `min(50, input)`.
pub fn local_hidden_sizes(input: usize) -> (usize, usize) {
    ((4 * input).min(200), input.min(50))
}

pub fn local_input_dim(dim: usize) -> usize {
    2 * dim + 1 + (LEXICAL_FEATURES + 1) * RBF_BINS
}

impl LocalModel {
    pub fn init(dim: usize, binners: FeatureBinners, rng: &mut ChaCha8Rng) -> Result<Self> {
        let input = local_input_dim(dim);
        let (h1, h2) = local_hidden_sizes(input);
        let mlp = Mlp::new(
            &[input, h1, h2, 1],
            &[Activation::Relu, Activation::Relu, Activation::Sigmoid],
            rng,
        )?;
        Ok(LocalModel { mlp, binners })
    }
}

/// Attention context vector of one active mention.
pub fn mention_context(
    instance: &LinkingInstance,
    pos: usize,
    kb: &KnowledgeBase,
    attention: &AttentionParams,
) -> Result<Vec<f64>> {
    let am = &instance.active[pos];
    let embs = candidate_embeddings(instance, pos, kb)?;
    let alpha = attention_weights(&embs, &am.context.words, &attention.a)?;
    Ok(context_embedding(&alpha, &am.context.words))
}

fn candidate_embeddings<'k>(
    instance: &LinkingInstance,
    pos: usize,
    kb: &'k KnowledgeBase,
) -> Result<Vec<&'k [f64]>> {
    instance.active[pos]
        .candidates
        .iter()
        .map(|c| kb.embedding(c.entity))
        .collect()
}

/// Full MLP input for every candidate of an active mention.
pub fn candidate_features(
    instance: &LinkingInstance,
    pos: usize,
    kb: &KnowledgeBase,
    attention: &AttentionParams,
    binners: &FeatureBinners,
) -> Result<Vec<Vec<f64>>> {
    let am = &instance.active[pos];
    let c = mention_context(instance, pos, kb, attention)?;
    am.candidates
        .iter()
        .zip(&am.lexical)
        .map(|(cand, lex)| {
            let y = kb.embedding(cand.entity)?;
            let mut x = contextual_features(y, &attention.b, &c);
            let base = x.len();
            x.resize(base + binners.width(), 0.0);
            for (f, (binner, v)) in binners.lexical.iter().zip(lex.0).enumerate() {
                binner.bin_into(v, &mut x[base + f * RBF_BINS..base + (f + 1) * RBF_BINS]);
            }
            let off = base + binners.lexical.len() * RBF_BINS;
            binners
                .prior
                .bin_into(cand.prior, &mut x[off..off + RBF_BINS]);
            Ok(x)
        })
        .collect()
}

/// ψ for every candidate of every active mention.
pub fn local_scores(
    instance: &LinkingInstance,
    kb: &KnowledgeBase,
    attention: &AttentionParams,
    model: &LocalModel,
) -> Result<Vec<Vec<f64>>> {
    (0..instance.n_active())
        .map(|pos| {
            let xs = candidate_features(instance, pos, kb, attention, &model.binners)?;
            xs.iter()
                .map(|x| Ok(model.mlp.try_forward(x)?[0]))
                .collect()
        })
        .collect()
}

pub fn local_score(
    instance: &LinkingInstance,
    pos: usize,
    candidate: usize,
    kb: &KnowledgeBase,
    attention: &AttentionParams,
    model: &LocalModel,
) -> Result<f64> {
    let xs = candidate_features(instance, pos, kb, attention, &model.binners)?;
    let x = xs
        .get(candidate)
        .ok_or_else(|| Error::data(format!("mention {pos} has no candidate {candidate}")))?;
    Ok(model.mlp.try_forward(x)?[0])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// L2 penalty coefficient; the coherence and pruner stages apply it.
    #[serde(default)]
    pub l2: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean loss per used example, one entry per epoch (before the update
    /// of each example).
    pub epoch_losses: Vec<f64>,
    pub used: usize,
    /// Examples skipped because the gold entity was not a candidate.
    pub skipped: usize,
}

/// (instance, position, gold candidate) for every trainable mention.
pub(crate) fn gold_examples(instances: &[LinkingInstance]) -> (Vec<(usize, usize, usize)>, usize) {
    let mut used = Vec::new();
    let mut skipped = 0;
    for (ii, inst) in instances.iter().enumerate() {
        for pos in 0..inst.n_active() {
            match inst.gold_candidate(pos) {
                Some(g) => used.push((ii, pos, g)),
                None if inst.gold(pos).is_some() => skipped += 1,
                None => {}
            }
        }
    }
    (used, skipped)
}

/// Mean pretraining loss over the trainable mentions.
pub fn attention_objective(
    instances: &[LinkingInstance],
    kb: &KnowledgeBase,
    params: &AttentionParams,
) -> Result<f64> {
    let (examples, _) = gold_examples(instances);
    if examples.is_empty() {
        return Err(Error::data("no mentions with a gold candidate"));
    }
    let mut total = 0.0;
    for &(ii, pos, g) in &examples {
        let embs = candidate_embeddings(&instances[ii], pos, kb)?;
        total += attention_loss(
            &embs,
            &instances[ii].active[pos].context.words,
            g,
            params,
            None,
        );
    }
    Ok(total / examples.len() as f64)
}

/// Analytic gradient of [`attention_objective`], flattened as `[A; B]`.
pub fn attention_objective_grad(
    instances: &[LinkingInstance],
    kb: &KnowledgeBase,
    params: &AttentionParams,
) -> Result<Vec<f64>> {
    let (examples, _) = gold_examples(instances);
    let d = params.dim();
    let mut g = AttentionParams {
        a: Matrix::zeros(d, d),
        b: Matrix::zeros(d, d),
    };
    for &(ii, pos, gold) in &examples {
        let embs = candidate_embeddings(&instances[ii], pos, kb)?;
        attention_loss(
            &embs,
            &instances[ii].active[pos].context.words,
            gold,
            params,
            Some(&mut g),
        );
    }
    let scale = 1.0 / examples.len().max(1) as f64;
    g.a.scale(scale);
    g.b.scale(scale);
    Ok(g.a.data().iter().chain(g.b.data()).copied().collect())
}

/// Per-mention SGD on the candidate cross-entropy of `softmax(yᵀBc)`.
pub fn pretrain_attention(
    instances: &[LinkingInstance],
    kb: &KnowledgeBase,
    cfg: &TrainConfig,
) -> Result<(AttentionParams, TrainReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = AttentionParams::init(kb.dim(), &mut rng);
    let (mut examples, skipped) = gold_examples(instances);
    if examples.is_empty() {
        return Err(Error::data(
            "attention pretraining: no mentions with a gold candidate",
        ));
    }
    let d = kb.dim();
    let mut report = TrainReport {
        used: examples.len(),
        skipped,
        ..Default::default()
    };
    let mut grads = AttentionParams {
        a: Matrix::zeros(d, d),
        b: Matrix::zeros(d, d),
    };
    for _ in 0..cfg.epochs {
        examples.shuffle(&mut rng);
        let mut total = 0.0;
        for &(ii, pos, g) in &examples {
            let embs = candidate_embeddings(&instances[ii], pos, kb)?;
            grads.a.scale(0.0);
            grads.b.scale(0.0);
            total += attention_loss(
                &embs,
                &instances[ii].active[pos].context.words,
                g,
                &params,
                Some(&mut grads),
            );
            params.a.axpy(-cfg.lr, &grads.a)?;
            params.b.axpy(-cfg.lr, &grads.b)?;
        }
        report.epoch_losses.push(total / examples.len() as f64);
    }
    Ok((params, report))
}

/// Cross-entropy of `softmax_j(ψⱼ)` for one mention, backpropagated into
/// `grads` when given.
fn mlp_mention_loss(
    mlp: &Mlp,
    xs: &[Vec<f64>],
    gold: usize,
    dropout: Option<(f64, &mut ChaCha8Rng)>,
    grads: Option<&mut Mlp>,
) -> f64 {
    let mut dropout = dropout;
    let traces: Vec<_> = xs
        .iter()
        .map(|x| mlp.forward_trace(x, dropout.as_mut().map(|(r, g)| (*r, &mut **g))))
        .collect();
    let psi: Vec<f64> = traces.iter().map(|t| t.output[0]).collect();
    let (loss, dpsi) = softmax_cross_entropy(&psi, gold);
    if let Some(g) = grads {
        for (t, d) in traces.iter().zip(&dpsi) {
            mlp.backward(t, &[*d], g);
        }
    }
    loss
}

/// Precomputed MLP inputs for the trainable mentions of `instances`.
pub struct LocalTrainingSet {
    pub examples: Vec<(Vec<Vec<f64>>, usize)>,
    pub skipped: usize,
}

impl LocalTrainingSet {
    pub fn build(
        instances: &[LinkingInstance],
        kb: &KnowledgeBase,
        attention: &AttentionParams,
        binners: &FeatureBinners,
    ) -> Result<Self> {
        let (ex, skipped) = gold_examples(instances);
        let examples = ex
            .into_iter()
            .map(|(ii, pos, g)| {
                Ok((
                    candidate_features(&instances[ii], pos, kb, attention, binners)?,
                    g,
                ))
            })
            .collect::<Result<_>>()?;
        Ok(LocalTrainingSet { examples, skipped })
    }

    /// Mean loss without dropout.
    pub fn objective(&self, mlp: &Mlp) -> f64 {
        let total: f64 = self
            .examples
            .iter()
            .map(|(xs, g)| mlp_mention_loss(mlp, xs, *g, None, None))
            .sum();
        total / self.examples.len().max(1) as f64
    }

    /// Gradient of [`LocalTrainingSet::objective`], flattened.
    pub fn objective_grad(&self, mlp: &Mlp) -> Vec<f64> {
        let mut g = mlp.zeros_like();
        for (xs, gold) in &self.examples {
            mlp_mention_loss(mlp, xs, *gold, None, Some(&mut g));
        }
        let scale = 1.0 / self.examples.len().max(1) as f64;
        g.params_flat().into_iter().map(|v| v * scale).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub dropout: f64,
    pub seed: u64,
}

/// Trains the scoring MLP with `attention` frozen. Binners are fit on the
/// training pairs.
pub fn train_local_mlp(
    instances: &[LinkingInstance],
    kb: &KnowledgeBase,
    attention: &AttentionParams,
    cfg: &MlpTrainConfig,
) -> Result<(LocalModel, TrainReport)> {
    if !(0.0..1.0).contains(&cfg.dropout) {
        return Err(Error::Config(format!(
            "dropout rate {} outside [0, 1)",
            cfg.dropout
        )));
    }
    let binners = FeatureBinners::fit(instances)?;
    let set = LocalTrainingSet::build(instances, kb, attention, &binners)?;
    if set.examples.is_empty() {
        return Err(Error::data(
            "local model training: no mentions with a gold candidate",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = LocalModel::init(kb.dim(), binners, &mut rng)?;
    let mut order: Vec<usize> = (0..set.examples.len()).collect();
    let mut report = TrainReport {
        used: set.examples.len(),
        skipped: set.skipped,
        ..Default::default()
    };
    let mut grads = model.mlp.zeros_like();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let (xs, gold) = &set.examples[i];
            grads = grads.zeros_like();
            total += mlp_mention_loss(
                &model.mlp,
                xs,
                *gold,
                Some((cfg.dropout, &mut rng)),
                Some(&mut grads),
            );
            model.mlp.sgd_update(&grads, cfg.lr)?;
        }
        report.epoch_losses.push(total / order.len() as f64);
    }
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, norm};
    use proptest::prelude::*;
    use rand::Rng;

    fn rand_vecs(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect()
    }

    #[test]
    fn attention_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ys = rand_vecs(&mut rng, 3, 4);
        let yr: Vec<&[f64]> = ys.iter().map(Vec::as_slice).collect();
        let a = Matrix::xavier(4, 4, &mut rng);
        let one = rand_vecs(&mut rng, 1, 4);
        assert_eq!(attention_weights(&yr, &one, &a).unwrap(), vec![1.0]);

        let ctx = rand_vecs(&mut rng, 5, 4);
        let uniform = attention_weights(&yr, &ctx, &Matrix::zeros(4, 4)).unwrap();
        assert!(uniform.iter().all(|v| (v - 0.2).abs() < 1e-12));
        assert!(attention_weights(&yr, &rand_vecs(&mut rng, 2, 3), &a).is_err());
    }

    proptest! {
        #[test]
        fn doubling_a_keeps_argmax_word(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ys = rand_vecs(&mut rng, 3, 4);
            let yr: Vec<&[f64]> = ys.iter().map(Vec::as_slice).collect();
            let ctx = rand_vecs(&mut rng, 6, 4);
            let a = Matrix::xavier(4, 4, &mut rng);
            let mut a2 = a.clone();
            a2.scale(2.0);
            let p = attention_weights(&yr, &ctx, &a).unwrap();
            let q = attention_weights(&yr, &ctx, &a2).unwrap();
            let arg = |v: &[f64]| v.iter().enumerate().max_by(|x, y| x.1.total_cmp(y.1)).unwrap().0;
            prop_assert_eq!(arg(&p), arg(&q));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn context_in_convex_hull(seed in any::<u64>(), m in 1usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ctx = rand_vecs(&mut rng, m, 3);
            let raw: Vec<f64> = (0..m).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let alpha = softmax(&raw);
            let c = context_embedding(&alpha, &ctx);
            let max = ctx.iter().map(|w| norm(w)).fold(0.0, f64::max);
            prop_assert!(norm(&c) <= max + 1e-12);
        }
    }

    #[test]
    fn context_embedding_examples() {
        let ctx = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        assert_eq!(context_embedding(&[0.0, 1.0], &ctx), vec![3.0, 4.0]);
        let same = vec![vec![1.5, -2.0], vec![1.5, -2.0]];
        assert_eq!(context_embedding(&[0.5, 0.5], &same), vec![1.5, -2.0]);
    }

    #[test]
    fn contextual_feature_examples() {
        let c = vec![0.3, -0.7, 0.2];
        let f = contextual_features(&[1.0, 2.0, 3.0], &Matrix::zeros(3, 3), &c);
        assert_eq!(f, vec![0.0, 0.0, 0.0, 0.0, 0.3, -0.7, 0.2]);
        let e1 = vec![1.0, 0.0, 0.0];
        let f = contextual_features(&e1, &Matrix::identity(3), &e1);
        assert_eq!(f, vec![1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        for d in 1..6 {
            assert_eq!(
                contextual_features(&vec![0.1; d], &Matrix::identity(d), &vec![0.2; d]).len(),
                2 * d + 1
            );
        }
    }

    #[test]
    fn attention_loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = 5;
        let ys = rand_vecs(&mut rng, 3, d);
        let yr: Vec<&[f64]> = ys.iter().map(Vec::as_slice).collect();
        let ctx = rand_vecs(&mut rng, 7, d);
        let params = AttentionParams::init(d, &mut rng);
        let mut g = AttentionParams {
            a: Matrix::zeros(d, d),
            b: Matrix::zeros(d, d),
        };
        attention_loss(&yr, &ctx, 1, &params, Some(&mut g));
        let flat: Vec<f64> = params
            .a
            .data()
            .iter()
            .chain(params.b.data())
            .copied()
            .collect();
        let analytic: Vec<f64> = g.a.data().iter().chain(g.b.data()).copied().collect();
        let report = grad_check(
            |p| {
                let q = AttentionParams {
                    a: Matrix::from_vec(d, d, p[..d * d].to_vec()).unwrap(),
                    b: Matrix::from_vec(d, d, p[d * d..].to_vec()).unwrap(),
                };
                attention_loss(&yr, &ctx, 1, &q, None)
            },
            &flat,
            &analytic,
            1e-5,
            1e-6,
        );
        assert!(report.passed(), "{report:?}");
    }

    /// Toy forward pass through a 2-input network, recomputed by hand.
    #[test]
    fn hand_computed_forward_pass() {
        let mlp = Mlp {
            layers: vec![
                crate::nn::Dense {
                    weight: Matrix::from_vec(2, 2, vec![1.0, -1.0, 0.5, 2.0]).unwrap(),
                    bias: vec![0.0, -1.0],
                    activation: Activation::Relu,
                },
                crate::nn::Dense {
                    weight: Matrix::from_vec(1, 2, vec![0.25, -0.5]).unwrap(),
                    bias: vec![0.1],
                    activation: Activation::Sigmoid,
                },
            ],
        };
        // x = (2, 1): h = relu([2-1, 1+2-1]) = [1, 2]; z = 0.25 - 1 + 0.1 = -0.65
        let expected = 1.0 / (1.0 + 0.65f64.exp());
        assert!((mlp.forward(&[2.0, 1.0])[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn hidden_sizes_scale_down() {
        assert_eq!(local_hidden_sizes(1000), (200, 50));
        assert_eq!(local_hidden_sizes(20), (80, 20));
        assert_eq!(local_input_dim(16), 33 + 100);
    }
}
