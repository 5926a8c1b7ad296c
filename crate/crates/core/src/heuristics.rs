//! Confidence of local predictions and the mention expansion order.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feat::{fit_binner, RbfBinner, RBF_BINS};
use crate::nn::{entropy, sigmoid, softmax, Activation, Mlp};

pub const H2_FEATURES: usize = 5;
/// Below this probability a local prediction is flagged as incorrect.
pub const H2_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Heuristic {
    H1,
    H2,
}

/// Largest softmax probability of the local scores.
pub fn h1(scores: &[f64]) -> f64 {
    softmax(scores)
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `[max, second max, entropy, acronym, length]` of the softmaxed scores.
pub fn h2_features(is_acronym: bool, mention_len: usize, scores: &[f64]) -> [f64; H2_FEATURES] {
    let l = softmax(scores);
    let mut sorted = l.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    [
        sorted[0],
        sorted.get(1).copied().unwrap_or(0.0),
        entropy(&l),
        if is_acronym { 1.0 } else { 0.0 },
        mention_len as f64,
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum H2Model {
    Learned {
        mlp: Mlp,
        binners: Vec<RbfBinner>,
    },
    /// Fallback when training saw no local mistakes.
    AlwaysCorrect,
}

impl H2Model {
    pub fn init(binners: Vec<RbfBinner>, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mlp = Mlp::new(
            &[H2_FEATURES * RBF_BINS, 100, 20, 1],
            &[Activation::Relu, Activation::Relu, Activation::Identity],
            rng,
        )?;
        Ok(H2Model::Learned { mlp, binners })
    }

    pub fn input(binners: &[RbfBinner], features: &[f64; H2_FEATURES]) -> Vec<f64> {
        let mut x = vec![0.0; H2_FEATURES * RBF_BINS];
        for (f, (b, v)) in binners.iter().zip(features).enumerate() {
            b.bin_into(*v, &mut x[f * RBF_BINS..(f + 1) * RBF_BINS]);
        }
        x
    }

    /// Probability that the local prediction is correct.
    pub fn probability(&self, features: &[f64; H2_FEATURES]) -> f64 {
        match self {
            H2Model::Learned { mlp, binners } => {
                sigmoid(mlp.forward(&Self::input(binners, features))[0])
            }
            H2Model::AlwaysCorrect => 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            H2Model::Learned { mlp, binners } => {
                mlp.validate()?;
                if binners.len() != H2_FEATURES
                    || mlp.input_dim() != H2_FEATURES * RBF_BINS
                    || mlp.output_dim() != 1
                {
                    return Err(Error::Shape("h2 classifier has the wrong shape".into()));
                }
                Ok(())
            }
            H2Model::AlwaysCorrect => Ok(()),
        }
    }
}

/// One local prediction: its features and whether it was correct.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct H2Example {
    pub features: [f64; H2_FEATURES],
    pub correct: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct H2TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub dropout: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct H2Report {
    pub positives_used: usize,
    pub negatives: usize,
    pub positives_available: usize,
    pub epoch_losses: Vec<f64>,
    pub warning: Option<String>,
}

/// Sub-samples positives (without replacement, seeded) to the negative
/// count. Returned indices are in input order.
pub fn balance(examples: &[H2Example], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let pos: Vec<usize> = (0..examples.len())
        .filter(|&i| examples[i].correct)
        .collect();
    let neg: Vec<usize> = (0..examples.len())
        .filter(|&i| !examples[i].correct)
        .collect();
    let keep = neg.len().min(pos.len());
    let mut chosen: Vec<usize> = sample(rng, pos.len(), keep)
        .into_iter()
        .map(|i| pos[i])
        .collect();
    chosen.extend(neg);
    chosen.sort_unstable();
    chosen
}

/// Binary cross-entropy of one example against the logit, with the
/// gradient pushed into `grads`.
pub(crate) fn h2_loss(
    mlp: &Mlp,
    x: &[f64],
    correct: bool,
    dropout: Option<(f64, &mut ChaCha8Rng)>,
    grads: Option<&mut Mlp>,
) -> f64 {
    let trace = mlp.forward_trace(x, dropout);
    let z = trace.output[0];
    let y = if correct { 1.0 } else { 0.0 };
    // -[y ln σ(z) + (1-y) ln(1-σ(z))] written stably
    let loss = z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
    if let Some(g) = grads {
        mlp.backward(&trace, &[sigmoid(z) - y], g);
    }
    loss
}

/// Mean loss and flattened gradient over binned examples, no dropout.
pub fn h2_objective(mlp: &Mlp, inputs: &[(Vec<f64>, bool)]) -> (f64, Vec<f64>) {
    let mut g = mlp.zeros_like();
    let mut total = 0.0;
    for (x, y) in inputs {
        total += h2_loss(mlp, x, *y, None, Some(&mut g));
    }
    let scale = 1.0 / inputs.len().max(1) as f64;
    (
        total * scale,
        g.params_flat().into_iter().map(|v| v * scale).collect(),
    )
}

pub fn train_h2(examples: &[H2Example], cfg: &H2TrainConfig) -> Result<(H2Model, H2Report)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let negatives = examples.iter().filter(|e| !e.correct).count();
    let mut report = H2Report {
        negatives,
        positives_available: examples.len() - negatives,
        ..Default::default()
    };
    if negatives == 0 {
        report.warning =
            Some("no local mistakes in training data; h2 defaults to constant 1".into());
        return Ok((H2Model::AlwaysCorrect, report));
    }
    let chosen = balance(examples, &mut rng);
    report.positives_used = chosen.len() - negatives;
    let columns: Vec<Vec<f64>> = (0..H2_FEATURES)
        .map(|f| chosen.iter().map(|&i| examples[i].features[f]).collect())
        .collect();
    let binners: Vec<RbfBinner> = columns
        .iter()
        .map(|c| fit_binner(c))
        .collect::<Result<_>>()?;
    let inputs: Vec<(Vec<f64>, bool)> = chosen
        .iter()
        .map(|&i| {
            (
                H2Model::input(&binners, &examples[i].features),
                examples[i].correct,
            )
        })
        .collect();
    let model = H2Model::init(binners, &mut rng)?;
    let H2Model::Learned { mut mlp, binners } = model else {
        unreachable!()
    };
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut grads = mlp.zeros_like();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            grads = grads.zeros_like();
            let (x, y) = &inputs[i];
            total += h2_loss(&mlp, x, *y, Some((cfg.dropout, &mut rng)), Some(&mut grads));
            mlp.sgd_update(&grads, cfg.lr)?;
        }
        report.epoch_losses.push(total / order.len() as f64);
    }
    Ok((H2Model::Learned { mlp, binners }, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceReport {
    pub confidence: Vec<f64>,
    /// Mention positions, least confident first.
    pub order: Vec<usize>,
    /// Mentions the classifier predicts the local model gets wrong
    /// (always empty for h1).
    pub flagged: Vec<bool>,
}

impl ConfidenceReport {
    pub fn from_confidence(confidence: Vec<f64>, flagged: Vec<bool>) -> Self {
        let mut order: Vec<usize> = (0..confidence.len()).collect();
        order.sort_by(|&a, &b| confidence[a].total_cmp(&confidence[b]).then(a.cmp(&b)));
        ConfidenceReport {
            confidence,
            order,
            flagged,
        }
    }

    pub fn flagged_count(&self) -> usize {
        self.flagged.iter().filter(|&&f| f).count()
    }
}

/// Per-mention inputs the heuristics need beyond the local scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MentionShape {
    pub is_acronym: bool,
    pub tokens: usize,
}

pub fn order_mentions(
    psi: &[Vec<f64>],
    shapes: &[MentionShape],
    heuristic: Heuristic,
    h2: Option<&H2Model>,
) -> Result<ConfidenceReport> {
    if shapes.len() != psi.len() {
        return Err(Error::Shape(
            "one mention shape per scored mention required".into(),
        ));
    }
    match heuristic {
        Heuristic::H1 => {
            let conf = psi.iter().map(|p| h1(p)).collect();
            Ok(ConfidenceReport::from_confidence(
                conf,
                vec![false; psi.len()],
            ))
        }
        Heuristic::H2 => {
            let model =
                h2.ok_or_else(|| Error::Missing("h2 classifier in parameter file".into()))?;
            let conf: Vec<f64> = psi
                .iter()
                .zip(shapes)
                .map(|(p, s)| model.probability(&h2_features(s.is_acronym, s.tokens, p)))
                .collect();
            let flagged = conf.iter().map(|&c| c < H2_THRESHOLD).collect();
            Ok(ConfidenceReport::from_confidence(conf, flagged))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn h1_examples() {
        assert!((h1(&[0.3; 4]) - 0.25).abs() < 1e-12);
        assert_eq!(h1(&[0.7]), 1.0);
        let e2 = 2f64.exp();
        assert!((h1(&[2.0, 0.0, 0.0]) - e2 / (e2 + 2.0)).abs() < 1e-12);
    }

    #[test]
    fn h2_feature_examples() {
        let f = h2_features(false, 2, &[1.0; 4]);
        assert!((f[0] - 0.25).abs() < 1e-12 && (f[1] - 0.25).abs() < 1e-12);
        assert!((f[2] - 4f64.ln()).abs() < 1e-12);
        assert_eq!(h2_features(true, 1, &[3.0]), [1.0, 0.0, 0.0, 1.0, 1.0]);
        let onehot = h2_features(false, 3, &[0.0, 800.0]);
        assert_eq!(onehot[2], 0.0);
    }

    #[test]
    fn ordering_examples() {
        let r = ConfidenceReport::from_confidence(vec![0.9, 0.1, 0.5], vec![false; 3]);
        assert_eq!(r.order, vec![1, 2, 0]);
        let r = ConfidenceReport::from_confidence(vec![0.4; 5], vec![false; 5]);
        assert_eq!(r.order, vec![0, 1, 2, 3, 4]);
    }

    proptest! {
        #[test]
        fn h1_bounds_and_shift(scores in prop::collection::vec(-5.0f64..5.0, 1..8), shift in -10.0f64..10.0) {
            let k = scores.len() as f64;
            let v = h1(&scores);
            prop_assert!(v >= 1.0 / k - 1e-12 && v <= 1.0 + 1e-12);
            let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
            prop_assert!((h1(&shifted) - v).abs() < 1e-12);
        }

        #[test]
        fn order_is_ascending_permutation(conf in prop::collection::vec(0.0f64..1.0, 0..30)) {
            let r = ConfidenceReport::from_confidence(conf.clone(), vec![false; conf.len()]);
            let mut seen = r.order.clone();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..conf.len()).collect::<Vec<_>>());
            for w in r.order.windows(2) {
                prop_assert!(conf[w[0]] <= conf[w[1]]);
            }
        }
    }

    fn toy_examples(seed: u64, n: usize) -> Vec<H2Example> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let k = rng.gen_range(2..6);
                let scores: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..3.0)).collect();
                let features = h2_features(rng.gen_bool(0.1), rng.gen_range(1..4), &scores);
                H2Example {
                    correct: features[2] <= 0.8,
                    features,
                }
            })
            .collect()
    }

    #[test]
    fn balancing_matches_negative_count_and_is_seeded() {
        let ex = toy_examples(1, 300);
        let neg = ex.iter().filter(|e| !e.correct).count();
        let a = balance(&ex, &mut ChaCha8Rng::seed_from_u64(5));
        let b = balance(&ex, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
        let pos = a.iter().filter(|&&i| ex[i].correct).count();
        assert_eq!(pos, neg.min(ex.len() - neg));
    }

    #[test]
    fn separable_toy_is_learned() {
        let cfg = H2TrainConfig {
            epochs: 30,
            lr: 0.02,
            dropout: 0.0,
            seed: 3,
        };
        let (model, report) = train_h2(&toy_examples(2, 600), &cfg).unwrap();
        assert!(report.warning.is_none());
        let held = toy_examples(99, 400);
        let scored: Vec<(f64, bool)> = held
            .iter()
            .map(|e| (model.probability(&e.features), e.correct))
            .collect();
        let (mut pairs, mut wins) = (0.0, 0.0);
        for (p, c) in &scored {
            for (q, d) in &scored {
                if *c && !*d {
                    pairs += 1.0;
                    wins += if p > q {
                        1.0
                    } else if p == q {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        assert!(wins / pairs > 0.95, "AUC {}", wins / pairs);
    }

    #[test]
    fn all_positive_falls_back_to_constant() {
        let ex: Vec<H2Example> = toy_examples(4, 50)
            .into_iter()
            .map(|e| H2Example { correct: true, ..e })
            .collect();
        let cfg = H2TrainConfig {
            epochs: 1,
            lr: 0.1,
            dropout: 0.0,
            seed: 0,
        };
        let (model, report) = train_h2(&ex, &cfg).unwrap();
        assert_eq!(model, H2Model::AlwaysCorrect);
        assert!(report.warning.is_some());
        assert_eq!(model.probability(&ex[0].features), 1.0);
    }
}
