//! Limited discrepancy beam search over the least confident mentions.
//!
//! The search starts from the local argmax. At depth `t` every beam state
//! pins the `t`-th least confident mention to each of its top candidates,
//! the propagator re-assigns the neighbourhood, and the pruning score cuts
//! the children back to the beam width.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::coherence::{iterate_propagation, propagate, DocScores, Solution};
use crate::error::{Error, Result};
use crate::heuristics::{ConfidenceReport, Heuristic};
use crate::pruner::{prune_score, PruneScore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DepthMode {
    #[serde(rename = "25")]
    Quarter,
    #[serde(rename = "50")]
    Half,
    #[serde(rename = "flex")]
    Flexible,
}

impl FromStr for DepthMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "25" => Ok(DepthMode::Quarter),
            "50" => Ok(DepthMode::Half),
            "flex" => Ok(DepthMode::Flexible),
            other => Err(Error::Config(format!(
                "unknown depth mode {other:?} (expected 25, 50 or flex)"
            ))),
        }
    }
}

impl fmt::Display for DepthMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DepthMode::Quarter => "25",
            DepthMode::Half => "50",
            DepthMode::Flexible => "flex",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub beam: usize,
    pub branch_k: usize,
    pub heuristic: Heuristic,
    pub depth: DepthMode,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            beam: 5,
            branch_k: 5,
            heuristic: Heuristic::H2,
            depth: DepthMode::Flexible,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam == 0 || self.branch_k == 0 {
            return Err(Error::Config("beam and branch-k must be at least 1".into()));
        }
        if self.depth == DepthMode::Flexible && self.heuristic == Heuristic::H1 {
            return Err(Error::Config(
                "flexible depth needs the h2 heuristic".into(),
            ));
        }
        Ok(())
    }
}

/// Pinned (mention, candidate) pairs in the order they were added.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DiscrepancySet(Vec<(usize, usize)>);

impl DiscrepancySet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(&self, mention: usize, candidate: usize) -> Result<Self> {
        if self.contains(mention) {
            return Err(Error::data(format!(
                "mention {mention} already has a discrepancy"
            )));
        }
        let mut next = self.0.clone();
        next.push((mention, candidate));
        Ok(DiscrepancySet(next))
    }

    pub fn contains(&self, mention: usize) -> bool {
        self.0.iter().any(|&(m, _)| m == mention)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[(usize, usize)] {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchState {
    pub discrepancies: DiscrepancySet,
    pub output: Solution,
    pub score: PruneScore,
    /// Mentions where `output` differs from the initial solution.
    pub changes: usize,
}

fn count_changes(a: &[usize], b: &[usize]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

pub fn initial_state(scores: &DocScores) -> SearchState {
    let output = scores.local_argmax();
    SearchState {
        discrepancies: DiscrepancySet::new(),
        score: prune_score(scores, &output),
        output,
        changes: 0,
    }
}

/// One child per top-`k` candidate of `mention`, the incumbent included.
pub fn expand(
    scores: &DocScores,
    initial: &[usize],
    state: &SearchState,
    mention: usize,
    k: usize,
) -> Result<Vec<SearchState>> {
    if mention >= scores.n() {
        return Err(Error::data(format!("mention {mention} out of range")));
    }
    (0..k.min(scores.k(mention)))
        .map(|j| {
            let discrepancies = state.discrepancies.with(mention, j)?;
            let output = propagate(scores, initial, discrepancies.as_slice())?;
            Ok(SearchState {
                score: prune_score(scores, &output),
                changes: count_changes(&output, initial),
                discrepancies,
                output,
            })
        })
        .collect()
}

/// Higher score first, then fewer changes; stable for expansion order.
fn rank(a: &SearchState, b: &SearchState) -> Ordering {
    b.score
        .total
        .total_cmp(&a.score.total)
        .then(a.changes.cmp(&b.changes))
}

pub fn depth_limit(n: usize, mode: DepthMode, report: &ConfidenceReport) -> usize {
    let limit = match mode {
        DepthMode::Quarter => (n as f64 * 0.25).ceil() as usize,
        DepthMode::Half => (n as f64 * 0.5).ceil() as usize,
        DepthMode::Flexible => report.flagged_count(),
    };
    limit.min(n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceChild {
    pub discrepancies: DiscrepancySet,
    pub output: Solution,
    pub score: f64,
    pub changes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub depth: usize,
    pub mention: usize,
    /// Every child in expansion order.
    pub children: Vec<TraceChild>,
    /// Indices into `children` that survived, best first.
    pub kept: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub order: Vec<usize>,
    pub depth_limit: usize,
    pub initial: Solution,
    pub steps: Vec<TraceStep>,
    /// Best state seen at any depth, kept for comparison with the
    /// last-beam answer.
    pub best_over_depths: Solution,
    pub best_over_depths_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub solution: Solution,
    pub score: PruneScore,
    pub trace: SearchTrace,
}

pub fn search(
    scores: &DocScores,
    report: &ConfidenceReport,
    config: &SearchConfig,
) -> Result<SearchResult> {
    config.validate()?;
    if report.order.len() != scores.n() {
        return Err(Error::Shape(
            "confidence report does not match the document".into(),
        ));
    }
    let root = initial_state(scores);
    let initial = root.output.clone();
    let limit = depth_limit(scores.n(), config.depth, report);
    let mut beam = vec![root.clone()];
    let mut best = root.clone();
    let mut steps = Vec::with_capacity(limit);
    for depth in 0..limit {
        let mention = report.order[depth];
        let mut children = Vec::with_capacity(beam.len() * config.branch_k);
        for state in &beam {
            children.extend(expand(scores, &initial, state, mention, config.branch_k)?);
        }
        let mut idx: Vec<usize> = (0..children.len()).collect();
        idx.sort_by(|&a, &b| rank(&children[a], &children[b]));
        idx.truncate(config.beam);
        steps.push(TraceStep {
            depth: depth + 1,
            mention,
            children: children
                .iter()
                .map(|c| TraceChild {
                    discrepancies: c.discrepancies.clone(),
                    output: c.output.clone(),
                    score: c.score.total,
                    changes: c.changes,
                })
                .collect(),
            kept: idx.clone(),
        });
        beam = idx.iter().map(|&i| children[i].clone()).collect();
        if rank(&beam[0], &best) == Ordering::Less {
            best = beam[0].clone();
        }
    }
    let last = beam.swap_remove(0);
    Ok(SearchResult {
        solution: last.output,
        score: last.score,
        trace: SearchTrace {
            order: report.order.clone(),
            depth_limit: limit,
            initial,
            steps,
            best_over_depths: best.output,
            best_over_depths_score: best.score.total,
        },
    })
}

/// Solutions of the four ablation rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    pub local: Solution,
    pub one_step: Solution,
    pub converged: Solution,
    pub converged_iterations: usize,
    pub lds: Solution,
}

pub fn run_baselines(
    scores: &DocScores,
    report: &ConfidenceReport,
    config: &SearchConfig,
    max_iters: usize,
) -> Result<Baselines> {
    let local = scores.local_argmax();
    let one_step = iterate_propagation(scores, &local, 1)?.solution;
    let conv = iterate_propagation(scores, &local, max_iters)?;
    let lds = search(scores, report, config)?.solution;
    Ok(Baselines {
        local,
        one_step,
        converged: conv.solution,
        converged_iterations: conv.iterations,
        lds,
    })
}
