//! Word alignment as a minimum-weight edge cover over cosine distances.
//!
//! Costs are cosine distances between word vectors plus an optional
//! position-based distortion penalty. Predictions are scored against gold
//! sure/possible links.

mod cover;
pub mod pharaoh;

use std::collections::BTreeSet;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cover::{edge_cover, is_edge_cover, solve_assignment};

use crate::embstore::{pool_words, TokenEmbeddingMatrix};
use crate::error::{Error, Result};
use crate::geometry::{cosine_distance, fit_projection, mean_vector, FitOptions, LinearProjection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyKind {
    None,
    /// `1/d` for positions `d >= 1` apart.
    #[default]
    Inverse,
    /// `d / max(rows, cols)`.
    Linear,
}

impl PenaltyKind {
    /// Penalty for a link between positions `d` apart; always 0 at `d = 0`.
    pub fn penalty(self, d: usize, rows: usize, cols: usize) -> f64 {
        if d == 0 {
            return 0.0;
        }
        match self {
            PenaltyKind::None => 0.0,
            PenaltyKind::Inverse => 1.0 / d as f64,
            PenaltyKind::Linear => d as f64 / rows.max(cols) as f64,
        }
    }
}

impl std::str::FromStr for PenaltyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PenaltyKind::None),
            "inverse" => Ok(PenaltyKind::Inverse),
            "linear" => Ok(PenaltyKind::Linear),
            other => Err(Error::config(format!("unknown penalty kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub rows: usize,
    pub cols: usize,
    /// Row-major, `rows * cols`.
    pub costs: Vec<f64>,
    pub distortion_weight: f64,
    pub penalty_kind: PenaltyKind,
}

impl CostMatrix {
    /// Wraps precomputed costs without any penalty.
    pub fn from_costs(rows: usize, cols: usize, costs: Vec<f64>) -> Result<Self> {
        if costs.len() != rows * cols {
            return Err(Error::validation(format!(
                "{} costs for a {rows}x{cols} matrix",
                costs.len()
            )));
        }
        Ok(CostMatrix {
            rows,
            cols,
            costs,
            distortion_weight: 0.0,
            penalty_kind: PenaltyKind::None,
        })
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.costs[i * self.cols + j]
    }

    pub fn total(&self, links: &AlignmentLinkSet) -> f64 {
        links.links.iter().map(|&(i, j)| self.at(i, j)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AlignmentLinkSet {
    pub links: BTreeSet<(usize, usize)>,
}

impl AlignmentLinkSet {
    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GoldAlignment {
    pub sure: BTreeSet<(usize, usize)>,
    /// Always a superset of `sure`.
    pub possible: BTreeSet<(usize, usize)>,
}

impl GoldAlignment {
    pub fn new(sure: BTreeSet<(usize, usize)>, possible: BTreeSet<(usize, usize)>) -> Self {
        let possible = possible.union(&sure).copied().collect();
        GoldAlignment { sure, possible }
    }
}

pub fn build_cost_matrix(
    src_words: &[Vec<f64>],
    tgt_words: &[Vec<f64>],
    weight: f64,
    kind: PenaltyKind,
) -> Result<CostMatrix> {
    if src_words.is_empty() || tgt_words.is_empty() {
        return Err(Error::validation("cost matrix needs words on both sides"));
    }
    if !(weight.is_finite() && weight >= 0.0) {
        return Err(Error::validation(format!(
            "distortion weight must be finite and non-negative, got {weight}"
        )));
    }
    let (rows, cols) = (src_words.len(), tgt_words.len());
    let mut costs = Vec::with_capacity(rows * cols);
    for (i, s) in src_words.iter().enumerate() {
        for (j, t) in tgt_words.iter().enumerate() {
            let cos = cosine_distance(s, t)
                .map_err(|e| Error::validation(format!("words ({i}, {j}): {e}")))?;
            costs.push(cos + weight * kind.penalty(i.abs_diff(j), rows, cols));
        }
    }
    Ok(CostMatrix {
        rows,
        cols,
        costs,
        distortion_weight: weight,
        penalty_kind: kind,
    })
}

pub fn min_edge_cover(c: &CostMatrix) -> Result<AlignmentLinkSet> {
    Ok(AlignmentLinkSet {
        links: edge_cover(&c.costs, c.rows, c.cols)?,
    })
}

/// Word vectors of both sentences of a parallel pair.
#[derive(Debug, Clone, PartialEq)]
pub struct WordPair {
    pub src: Vec<Vec<f64>>,
    pub tgt: Vec<Vec<f64>>,
}

impl WordPair {
    pub fn from_matrices(src: &TokenEmbeddingMatrix, tgt: &TokenEmbeddingMatrix) -> Result<Self> {
        Ok(WordPair {
            src: pool_words(src)?,
            tgt: pool_words(tgt)?,
        })
    }

    pub fn align(&self, weight: f64, kind: PenaltyKind) -> Result<AlignmentLinkSet> {
        Ok(self.align_with_cost(weight, kind)?.0)
    }

    fn align_with_cost(&self, weight: f64, kind: PenaltyKind) -> Result<(AlignmentLinkSet, f64)> {
        let c = build_cost_matrix(&self.src, &self.tgt, weight, kind)?;
        let links = min_edge_cover(&c)?;
        let cost = c.total(&links);
        Ok((links, cost))
    }
}

pub fn align_pair(
    src: &TokenEmbeddingMatrix,
    tgt: &TokenEmbeddingMatrix,
    weight: f64,
    kind: PenaltyKind,
) -> Result<AlignmentLinkSet> {
    WordPair::from_matrices(src, tgt)?.align(weight, kind)
}

/// Aligns every pair; output order follows input order.
pub fn align_corpus(
    pairs: &[WordPair],
    weight: f64,
    kind: PenaltyKind,
) -> Result<Vec<AlignmentLinkSet>> {
    pairs
        .par_iter()
        .enumerate()
        .map(|(k, p)| {
            p.align(weight, kind)
                .map_err(|e| Error::validation(format!("pair {k}: {e}")))
        })
        .collect()
}

/// Subtracts each side's centroid over all of its words in the corpus.
pub fn center_word_pairs(pairs: &[WordPair]) -> Result<Vec<WordPair>> {
    let (src_mean, _) = mean_vector(pairs.iter().flat_map(|p| p.src.iter().map(Vec::as_slice)))?;
    let (tgt_mean, _) = mean_vector(pairs.iter().flat_map(|p| p.tgt.iter().map(Vec::as_slice)))?;
    let shift = |words: &[Vec<f64>], mean: &[f64]| -> Vec<Vec<f64>> {
        words
            .iter()
            .map(|w| w.iter().zip(mean).map(|(x, m)| x - m).collect())
            .collect()
    };
    Ok(pairs
        .iter()
        .map(|p| WordPair {
            src: shift(&p.src, &src_mean),
            tgt: shift(&p.tgt, &tgt_mean),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct F1Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl F1Score {
    fn from_counts(hits_possible: usize, predicted: usize, hits_sure: usize, sure: usize) -> Self {
        let precision = if predicted == 0 {
            0.0
        } else {
            hits_possible as f64 / predicted as f64
        };
        let recall = hits_sure as f64 / sure as f64;
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        F1Score {
            precision,
            recall,
            f1,
        }
    }
}

/// Precision against possible links, recall against sure links.
pub fn evaluate_f1(pred: &AlignmentLinkSet, gold: &GoldAlignment) -> Result<F1Score> {
    if gold.sure.is_empty() {
        return Err(Error::validation("gold alignment has no sure links"));
    }
    let hits_possible = pred
        .links
        .iter()
        .filter(|l| gold.possible.contains(l))
        .count();
    let hits_sure = pred.links.iter().filter(|l| gold.sure.contains(l)).count();
    Ok(F1Score::from_counts(
        hits_possible,
        pred.len(),
        hits_sure,
        gold.sure.len(),
    ))
}

/// Corpus-level scores from summed link counts. Pairs whose gold has no
/// sure links are skipped.
pub fn evaluate_corpus(preds: &[AlignmentLinkSet], golds: &[GoldAlignment]) -> Result<F1Score> {
    if preds.len() != golds.len() {
        return Err(Error::validation(format!(
            "{} predictions for {} gold alignments",
            preds.len(),
            golds.len()
        )));
    }
    let (mut hp, mut np, mut hs, mut ns) = (0, 0, 0, 0);
    for (p, g) in preds.iter().zip(golds) {
        if g.sure.is_empty() {
            continue;
        }
        hp += p.links.iter().filter(|l| g.possible.contains(l)).count();
        np += p.len();
        hs += p.links.iter().filter(|l| g.sure.contains(l)).count();
        ns += g.sure.len();
    }
    if ns == 0 {
        return Err(Error::validation("gold corpus has no sure links"));
    }
    Ok(F1Score::from_counts(hp, np, hs, ns))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best_weight: f64,
    /// Mean F1 for every grid value, in grid order.
    pub scores: Vec<(f64, f64)>,
}

/// Picks the grid weight with the highest mean F1 on the development pairs;
/// ties go to the smallest weight.
pub fn tune_distortion_weight(
    dev: &[WordPair],
    gold: &[GoldAlignment],
    grid: &[f64],
    kind: PenaltyKind,
) -> Result<TuneResult> {
    if grid.is_empty() {
        return Err(Error::config("empty distortion weight grid"));
    }
    if dev.is_empty() {
        return Err(Error::validation("empty development set"));
    }
    if dev.len() != gold.len() {
        return Err(Error::validation(format!(
            "{} development pairs for {} gold alignments",
            dev.len(),
            gold.len()
        )));
    }
    let mut scores = Vec::with_capacity(grid.len());
    for &w in grid {
        let preds = align_corpus(dev, w, kind)?;
        let mut sum = 0.0;
        for (p, g) in preds.iter().zip(gold) {
            sum += evaluate_f1(p, g)?.f1;
        }
        scores.push((w, sum / dev.len() as f64));
    }
    let best_weight = scores
        .iter()
        .copied()
        .reduce(|best, cur| {
            if cur.1 > best.1 || (cur.1 == best.1 && cur.0 < best.0) {
                cur
            } else {
                best
            }
        })
        .map(|(w, _)| w)
        .unwrap_or(0.0);
    Ok(TuneResult {
        best_weight,
        scores,
    })
}

#[derive(Debug, Clone)]
pub struct EmAlignment {
    /// Projection under which `alignments` were produced.
    pub projection: LinearProjection,
    pub alignments: Vec<AlignmentLinkSet>,
    /// Mean link cost of each accepted round.
    pub round_costs: Vec<f64>,
    /// Why refinement stopped before the requested number of rounds.
    pub stopped_early: Option<String>,
}

fn align_projected(
    pairs: &[WordPair],
    projection: &LinearProjection,
    weight: f64,
    kind: PenaltyKind,
) -> Result<(Vec<AlignmentLinkSet>, f64)> {
    let results = pairs
        .par_iter()
        .map(|p| {
            let projected = WordPair {
                src: p
                    .src
                    .iter()
                    .map(|w| projection.apply(w))
                    .collect::<Result<_>>()?,
                tgt: p.tgt.clone(),
            };
            projected.align_with_cost(weight, kind)
        })
        .collect::<Result<Vec<_>>>()?;
    let links: usize = results.iter().map(|(l, _)| l.len()).sum();
    let cost: f64 = results.iter().map(|(_, c)| c).sum();
    let mean = cost / links.max(1) as f64;
    Ok((results.into_iter().map(|(l, _)| l).collect(), mean))
}

/// Alternates alignment and least-squares refitting of a source-to-target
/// projection. Round 1 aligns with the identity. A refit that fails, or
/// whose alignment costs more than the previous round, ends refinement and
/// keeps the previous round.
pub fn em_projection_align(
    pairs: &[WordPair],
    rounds: usize,
    weight: f64,
    kind: PenaltyKind,
) -> Result<EmAlignment> {
    if rounds == 0 {
        return Err(Error::config("at least one alignment round is needed"));
    }
    let dim = pairs
        .first()
        .and_then(|p| p.src.first())
        .map(Vec::len)
        .ok_or_else(|| Error::validation("no word pairs to align"))?;
    let mut projection = LinearProjection::identity(dim, "src", "tgt");
    let (mut alignments, cost) = align_projected(pairs, &projection, weight, kind)?;
    let mut round_costs = vec![cost];
    let mut stopped_early = None;

    for round in 2..=rounds {
        let (src, tgt): (Vec<Vec<f64>>, Vec<Vec<f64>>) = pairs
            .iter()
            .zip(&alignments)
            .flat_map(|(p, a)| {
                a.links
                    .iter()
                    .map(|&(i, j)| (p.src[i].clone(), p.tgt[j].clone()))
            })
            .unzip();
        let candidate = match fit_projection(&src, &tgt, FitOptions::default()) {
            Ok(p) => p,
            Err(e) => {
                warn!("round {round}: projection fit failed ({e}), keeping previous projection");
                stopped_early = Some(format!("round {round}: fit failed: {e}"));
                break;
            }
        };
        match align_projected(pairs, &candidate, weight, kind) {
            Ok((next, next_cost)) if next_cost <= *round_costs.last().unwrap() => {
                projection = candidate;
                alignments = next;
                round_costs.push(next_cost);
            }
            Ok((_, next_cost)) => {
                warn!("round {round}: mean cost rose to {next_cost}, keeping previous projection");
                stopped_early = Some(format!("round {round}: cost increased to {next_cost}"));
                break;
            }
            Err(e) => {
                warn!("round {round}: alignment failed ({e}), keeping previous projection");
                stopped_early = Some(format!("round {round}: alignment failed: {e}"));
                break;
            }
        }
    }
    projection.source_language = String::from("src");
    projection.target_language = String::from("tgt");
    Ok(EmAlignment {
        projection,
        alignments,
        round_costs,
        stopped_early,
    })
}
