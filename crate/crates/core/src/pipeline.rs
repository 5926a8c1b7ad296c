//! Stage-by-stage training and per-document linking.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coherence::{context_positions, train_coherence, CoherenceParams, DocScores};
use crate::config::Config;
use crate::corpus::{build_instance, Document, Lexicon, LinkingInstance};
use crate::error::{Error, Result};
use crate::heuristics::{
    h2_features, order_mentions, train_h2, ConfidenceReport, H2Example, H2Report, Heuristic,
    MentionShape,
};
use crate::kb::{EntityId, KnowledgeBase};
use crate::lds::{run_baselines, search, Baselines, DepthMode, SearchConfig};
use crate::local::{local_scores, pretrain_attention, train_local_mlp, TrainReport};
use crate::params::ModelParams;
use crate::pruner::{hamming, train_pruner, PruningStep, SolutionFeatures};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "attention")]
    Attention,
    #[serde(rename = "local-mlp")]
    LocalMlp,
    #[serde(rename = "coherence")]
    Coherence,
    #[serde(rename = "h2")]
    H2,
    #[serde(rename = "pruner")]
    Pruner,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Attention,
        Stage::LocalMlp,
        Stage::Coherence,
        Stage::H2,
        Stage::Pruner,
    ];
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Attention => "attention",
            Stage::LocalMlp => "local-mlp",
            Stage::Coherence => "coherence",
            Stage::H2 => "h2",
            Stage::Pruner => "pruner",
        })
    }
}

/// Builds linking instances for every document, in order.
pub fn prepare(
    docs: &[Document],
    kb: &KnowledgeBase,
    lexicon: &Lexicon,
    k: usize,
) -> Result<Vec<LinkingInstance>> {
    docs.par_iter()
        .map(|d| build_instance(d, kb, lexicon, k))
        .collect()
}

pub fn mention_shapes(instance: &LinkingInstance) -> Vec<MentionShape> {
    (0..instance.n_active())
        .map(|p| MentionShape {
            is_acronym: instance.is_acronym(p),
            tokens: instance.mention_tokens(p).len(),
        })
        .collect()
}

pub fn instance_psi(
    instance: &LinkingInstance,
    kb: &KnowledgeBase,
    params: &ModelParams,
) -> Result<Vec<Vec<f64>>> {
    local_scores(instance, kb, params.attention()?, params.local()?)
}

/// Score cache for one document. Stages not yet trained contribute zero
/// coherence when `allow_partial` is set.
pub fn doc_scores(
    instance: &LinkingInstance,
    kb: &KnowledgeBase,
    params: &ModelParams,
    window: usize,
    allow_partial: bool,
) -> Result<DocScores> {
    let psi = instance_psi(instance, kb, params)?;
    let zero = CoherenceParams::zeros(kb.dim());
    fn pick<'a>(
        p: Result<&'a CoherenceParams>,
        zero: &'a CoherenceParams,
        allow_partial: bool,
    ) -> Result<&'a CoherenceParams> {
        match p {
            Ok(p) => Ok(p),
            Err(_) if allow_partial => Ok(zero),
            Err(e) => Err(e),
        }
    }
    let coherence = pick(params.coherence(), &zero, allow_partial)?;
    let pruner = pick(params.pruner(), &zero, allow_partial)?;
    DocScores::new(instance, kb, psi, coherence, pruner, window)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Option<Stage>,
    pub train: Option<TrainReport>,
    pub h2: Option<H2Report>,
    /// Pruning steps collected per round.
    pub collected_steps: Vec<usize>,
}

fn h2_examples(
    instances: &[LinkingInstance],
    kb: &KnowledgeBase,
    params: &ModelParams,
) -> Result<Vec<H2Example>> {
    let per_doc: Vec<Vec<H2Example>> = instances
        .par_iter()
        .map(|inst| {
            let psi = instance_psi(inst, kb, params)?;
            let shapes = mention_shapes(inst);
            let mut out = Vec::new();
            for (pos, p) in psi.iter().enumerate() {
                let Some(gold) = inst.gold(pos) else { continue };
                let best = crate::coherence::argmax_first(p.iter().copied());
                out.push(H2Example {
                    features: h2_features(shapes[pos].is_acronym, shapes[pos].tokens, p),
                    correct: inst.active[pos].entity(best) == gold,
                });
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(per_doc.into_iter().flatten().collect())
}

/// Search configuration used to collect pruning steps on training data.
pub fn collection_search(cfg: &Config) -> SearchConfig {
    SearchConfig {
        beam: cfg.search.beam,
        branch_k: cfg.search.branch_k,
        heuristic: Heuristic::H1,
        depth: DepthMode::Quarter,
        seed: cfg.seed,
    }
}

/// Every pruning step of an h1 search over each fully labelled document.
pub fn collect_pruning_steps(
    instances: &[LinkingInstance],
    kb: &KnowledgeBase,
    params: &ModelParams,
    cfg: &Config,
) -> Result<Vec<PruningStep>> {
    let search_cfg = collection_search(cfg);
    let per_doc: Vec<Vec<PruningStep>> = instances
        .par_iter()
        .map(|inst| {
            if (0..inst.n_active()).any(|p| inst.gold(p).is_none()) || inst.n_active() == 0 {
                return Ok(Vec::new());
            }
            let scores = doc_scores(inst, kb, params, cfg.window, false)?;
            let report = order_mentions(scores.psi(), &mention_shapes(inst), Heuristic::H1, None)?;
            let result = search(&scores, &report, &search_cfg)?;
            result
                .trace
                .steps
                .iter()
                .map(|step| {
                    let mut solutions = Vec::with_capacity(step.children.len());
                    let mut hammings = Vec::with_capacity(step.children.len());
                    for child in &step.children {
                        solutions.push(SolutionFeatures::build(
                            inst,
                            kb,
                            scores.psi(),
                            &child.output,
                            cfg.window,
                        )?);
                        hammings.push(hamming(inst, &child.output)?);
                    }
                    Ok(PruningStep {
                        solutions,
                        hammings,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_doc.into_iter().flatten().collect())
}

/// Runs one stage, checking that the stages it depends on are present.
pub fn train_stage(
    stage: Stage,
    params: &mut ModelParams,
    train: &[LinkingInstance],
    kb: &KnowledgeBase,
    cfg: &Config,
) -> Result<StageReport> {
    if params.dim != kb.dim() {
        return Err(Error::Shape(format!(
            "parameter dim {} vs KB dim {}",
            params.dim,
            kb.dim()
        )));
    }
    let mut report = StageReport {
        stage: Some(stage),
        ..Default::default()
    };
    match stage {
        Stage::Attention => {
            let (a, r) = pretrain_attention(train, kb, &cfg.attention_train())?;
            params.attention = Some(a);
            report.train = Some(r);
        }
        Stage::LocalMlp => {
            let (model, r) = train_local_mlp(train, kb, params.attention()?, &cfg.local_train())?;
            params.local = Some(model);
            report.train = Some(r);
        }
        Stage::Coherence => {
            let psi: Vec<Vec<Vec<f64>>> = train
                .par_iter()
                .map(|inst| instance_psi(inst, kb, params))
                .collect::<Result<_>>()?;
            let (c, r) = train_coherence(train, kb, &psi, &cfg.coherence_train())?;
            params.coherence = Some(c);
            report.train = Some(r);
        }
        Stage::H2 => {
            params.local()?;
            let examples = h2_examples(train, kb, params)?;
            let (model, r) = train_h2(&examples, &cfg.h2_train())?;
            params.h2 = Some(model);
            report.h2 = Some(r);
        }
        Stage::Pruner => {
            params.h2()?;
            let mut current = pruner_warm_start(params.coherence()?, train, cfg.window)?;
            let mut steps: Vec<PruningStep> = Vec::new();
            let mut last = None;
            for round in 0..cfg.train.pruner.rounds.max(1) {
                params.pruner = Some(current.clone());
                let collected = collect_pruning_steps(train, kb, params, cfg)?;
                report.collected_steps.push(collected.len());
                steps.extend(collected);
                let mut tc = cfg.pruner_train();
                tc.seed = tc.seed.wrapping_add(round as u64);
                let (p, r) = train_pruner(&steps, current, &tc)?;
                current = p;
                last = Some(r);
            }
            params.pruner = Some(current);
            report.train = last;
        }
    }
    Ok(report)
}

/// Propagation weights divided by the mean context size, since g averages
/// over the context while the prune score sums over it.
fn pruner_warm_start(
    coherence: &CoherenceParams,
    train: &[LinkingInstance],
    window: usize,
) -> Result<CoherenceParams> {
    let (mut total, mut count) = (0usize, 0usize);
    for inst in train {
        let n = inst.n_active();
        for i in 0..n {
            total += context_positions(n, i, window).count();
            count += 1;
        }
    }
    let scale = if total == 0 {
        1.0
    } else {
        count as f64 / total as f64
    };
    let flat: Vec<f64> = coherence.flat().iter().map(|v| v * scale).collect();
    CoherenceParams::from_flat(coherence.dim(), &flat)
}

pub fn train_all(
    params: &mut ModelParams,
    train: &[LinkingInstance],
    kb: &KnowledgeBase,
    cfg: &Config,
) -> Result<Vec<StageReport>> {
    Stage::ALL
        .iter()
        .map(|&s| train_stage(s, params, train, kb, cfg))
        .collect()
}

/// Everything computed for one document at evaluation time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DocumentRun {
    pub id: String,
    /// Document mention index of each active position.
    pub mentions: Vec<usize>,
    /// Gold-labelled mentions without candidates; always wrong.
    pub unlinkable_gold: usize,
    pub gold: Vec<Option<EntityId>>,
    /// p(gold | surface) per active position, 0 when gold is absent.
    pub gold_prior: Vec<f64>,
    pub baselines: Baselines,
    pub h1: ConfidenceReport,
    pub h2: Option<ConfidenceReport>,
    /// Extra searches keyed by label.
    pub variants: Vec<(String, Vec<usize>)>,
    pub entities: Vec<Vec<EntityId>>,
}

impl DocumentRun {
    pub fn entity(&self, pos: usize, candidate: usize) -> EntityId {
        self.entities[pos][candidate]
    }

    pub fn entities_of(&self, solution: &[usize]) -> Vec<EntityId> {
        solution
            .iter()
            .enumerate()
            .map(|(p, &j)| self.entity(p, j))
            .collect()
    }
}

/// Runs the ablation baselines plus one search per labelled variant.
pub fn run_document(
    instance: &LinkingInstance,
    kb: &KnowledgeBase,
    params: &ModelParams,
    cfg: &Config,
    variants: &[(String, SearchConfig)],
) -> Result<DocumentRun> {
    let scores = doc_scores(instance, kb, params, cfg.window, false)?;
    let shapes = mention_shapes(instance);
    let h1 = order_mentions(scores.psi(), &shapes, Heuristic::H1, None)?;
    let h2 = match params.h2() {
        Ok(m) => Some(order_mentions(
            scores.psi(),
            &shapes,
            Heuristic::H2,
            Some(m),
        )?),
        Err(_) => None,
    };
    let report_for = |h: Heuristic| -> Result<&ConfidenceReport> {
        match h {
            Heuristic::H1 => Ok(&h1),
            Heuristic::H2 => h2
                .as_ref()
                .ok_or_else(|| Error::Missing("h2 classifier in parameter file".into())),
        }
    };
    let main = cfg.search_config();
    let baselines = run_baselines(
        &scores,
        report_for(main.heuristic)?,
        &main,
        cfg.eval.max_iters,
    )?;
    let variants = variants
        .iter()
        .map(|(label, sc)| {
            Ok((
                label.clone(),
                search(&scores, report_for(sc.heuristic)?, sc)?.solution,
            ))
        })
        .collect::<Result<_>>()?;
    let gold: Vec<Option<EntityId>> = (0..instance.n_active()).map(|p| instance.gold(p)).collect();
    let gold_prior = instance
        .active
        .iter()
        .zip(&gold)
        .map(|(am, g)| {
            g.and_then(|g| am.candidates.iter().find(|c| c.entity == g))
                .map_or(0.0, |c| c.prior)
        })
        .collect();
    Ok(DocumentRun {
        id: instance.document.id.clone(),
        mentions: instance.active.iter().map(|a| a.mention).collect(),
        unlinkable_gold: instance
            .unlinkable
            .iter()
            .filter(|&&m| instance.document.mentions[m].gold.is_some())
            .count(),
        gold,
        gold_prior,
        baselines,
        h1,
        h2,
        variants,
        entities: instance
            .active
            .iter()
            .map(|a| a.candidates.iter().map(|c| c.entity).collect())
            .collect(),
    })
}

/// Evaluates every grid point over shared per-document caches.
pub fn ablation_run(
    instances: &[LinkingInstance],
    kb: &KnowledgeBase,
    params: &ModelParams,
    cfg: &Config,
    grid: &[(String, SearchConfig)],
) -> Result<Vec<crate::eval::EvalReport>> {
    let runs = run_documents(instances, kb, params, cfg, grid)?;
    let configs: Vec<(String, serde_json::Value)> = grid
        .iter()
        .map(|(l, sc)| {
            Ok((
                l.clone(),
                serde_json::to_value(sc).map_err(|e| Error::data(e.to_string()))?,
            ))
        })
        .collect::<Result<_>>()?;
    crate::eval::variant_reports(&runs, cfg.eval.h1_fraction, cfg.eval.rarity_bins, &configs)
}

pub fn run_documents(
    instances: &[LinkingInstance],
    kb: &KnowledgeBase,
    params: &ModelParams,
    cfg: &Config,
    variants: &[(String, SearchConfig)],
) -> Result<Vec<DocumentRun>> {
    instances
        .par_iter()
        .map(|inst| run_document(inst, kb, params, cfg, variants))
        .collect()
}
