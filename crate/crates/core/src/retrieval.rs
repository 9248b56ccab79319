//! Parallel sentence retrieval by nearest cosine neighbour.

use std::collections::HashMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embstore::SentenceVector;
use crate::error::{Error, Result};
use crate::geometry::{cosine_from_parts, dot, LanguageCentroid, LinearProjection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrievalMode {
    Plain,
    Centered,
    Projected,
}

impl RetrievalMode {
    pub fn as_str(self) -> &'static str {
        match self {
            RetrievalMode::Plain => "plain",
            RetrievalMode::Centered => "centered",
            RetrievalMode::Projected => "projected",
        }
    }
}

impl std::str::FromStr for RetrievalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(RetrievalMode::Plain),
            "centered" => Ok(RetrievalMode::Centered),
            "projected" => Ok(RetrievalMode::Projected),
            other => Err(Error::config(format!("unknown retrieval mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query_language: String,
    pub candidate_language: String,
    pub mode: RetrievalMode,
    /// Index of the retrieved candidate for every query.
    pub predictions: Vec<usize>,
    /// Fraction of queries whose prediction is their own line index.
    pub accuracy: f64,
}

fn squared_norms(vectors: &[&[f64]], ids: &[&str], side: &str) -> Result<Vec<f64>> {
    vectors
        .iter()
        .zip(ids)
        .map(|(v, id)| {
            let n = dot(v, v);
            if n == 0.0 || !n.is_finite() {
                Err(Error::validation(format!(
                    "{side} record `{id}` has a zero or non-finite norm"
                )))
            } else {
                Ok(n)
            }
        })
        .collect()
}

/// For every query, the index of the closest candidate under cosine
/// distance. Ties go to the lowest index.
pub fn nearest_neighbors(
    queries: &[&[f64]],
    candidates: &[&[f64]],
    query_ids: &[&str],
    candidate_ids: &[&str],
) -> Result<Vec<usize>> {
    if queries.is_empty() || candidates.is_empty() {
        return Err(Error::validation("retrieval needs queries and candidates"));
    }
    let dim = queries[0].len();
    if let Some(v) = queries.iter().chain(candidates).find(|v| v.len() != dim) {
        return Err(Error::validation(format!(
            "dimension mismatch: {} vs {dim}",
            v.len()
        )));
    }
    let qn = squared_norms(queries, query_ids, "query")?;
    let cn = squared_norms(candidates, candidate_ids, "candidate")?;
    Ok(queries
        .par_iter()
        .zip(&qn)
        .map(|(q, &nq)| {
            let mut best = 0;
            let mut best_dist = f64::INFINITY;
            for (j, (c, &nc)) in candidates.iter().zip(&cn).enumerate() {
                let dist = cosine_from_parts(dot(q, c), nq, nc);
                if dist < best_dist {
                    best = j;
                    best_dist = dist;
                }
            }
            best
        })
        .collect())
}

pub fn positional_accuracy(predictions: &[usize]) -> f64 {
    if predictions.is_empty() {
        return 0.0;
    }
    let hits = predictions
        .iter()
        .enumerate()
        .filter(|(i, &p)| *i == p)
        .count();
    hits as f64 / predictions.len() as f64
}

/// Retrieves a candidate for every query; the gold candidate of query `i`
/// is candidate `i`.
pub fn retrieve(
    queries: &[SentenceVector],
    candidates: &[SentenceVector],
) -> Result<RetrievalResult> {
    let q: Vec<&[f64]> = queries.iter().map(|v| v.vector.as_slice()).collect();
    let c: Vec<&[f64]> = candidates.iter().map(|v| v.vector.as_slice()).collect();
    let qi: Vec<&str> = queries.iter().map(|v| v.sentence_id.as_str()).collect();
    let ci: Vec<&str> = candidates.iter().map(|v| v.sentence_id.as_str()).collect();
    let predictions = nearest_neighbors(&q, &c, &qi, &ci)?;
    Ok(RetrievalResult {
        query_language: queries[0].language.clone(),
        candidate_language: candidates[0].language.clone(),
        mode: RetrievalMode::Plain,
        accuracy: positional_accuracy(&predictions),
        predictions,
    })
}

/// One language's sentences of a multi-parallel corpus.
#[derive(Debug, Clone)]
pub struct LanguageSide {
    pub language: String,
    pub vectors: Vec<SentenceVector>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrievalSuite {
    pub languages: Vec<String>,
    pub results: Vec<RetrievalResult>,
    /// Mean accuracy over all ordered pairs of distinct languages.
    pub mode_averages: Vec<(RetrievalMode, f64)>,
}

impl RetrievalSuite {
    pub fn result(
        &self,
        mode: RetrievalMode,
        query: &str,
        candidate: &str,
    ) -> Option<&RetrievalResult> {
        self.results.iter().find(|r| {
            r.mode == mode && r.query_language == query && r.candidate_language == candidate
        })
    }

    pub fn average(&self, mode: RetrievalMode) -> Option<f64> {
        self.mode_averages
            .iter()
            .find(|(m, _)| *m == mode)
            .map(|&(_, a)| a)
    }

    /// Accuracy matrix for one mode: rows are query languages, columns
    /// candidate languages.
    pub fn to_tsv(&self, mode: RetrievalMode) -> String {
        let mut out = String::from(mode.as_str());
        for l in &self.languages {
            out.push('\t');
            out.push_str(l);
        }
        out.push('\n');
        for q in &self.languages {
            out.push_str(q);
            for c in &self.languages {
                match self.result(mode, q, c) {
                    Some(r) => {
                        let _ = write!(out, "\t{:.4}", r.accuracy);
                    }
                    None => out.push_str("\t-"),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Settings for [`run_retrieval_suite`]. Centroids are keyed by language;
/// projections map a language into a shared pivot space, and the pivot
/// language itself needs no entry.
#[derive(Debug, Clone, Default)]
pub struct SuiteInputs<'a> {
    pub centroids: Option<&'a HashMap<String, LanguageCentroid>>,
    pub projections: Option<&'a HashMap<String, LinearProjection>>,
}

fn transformed(
    side: &LanguageSide,
    mode: RetrievalMode,
    inputs: &SuiteInputs<'_>,
) -> Result<Vec<SentenceVector>> {
    match mode {
        RetrievalMode::Plain => Ok(side.vectors.clone()),
        RetrievalMode::Centered => {
            let c = inputs
                .centroids
                .ok_or_else(|| Error::config("centered mode requested without centroids"))?
                .get(&side.language)
                .ok_or_else(|| {
                    Error::config(format!("no centroid for language `{}`", side.language))
                })?;
            crate::geometry::center(&side.vectors, c)
        }
        RetrievalMode::Projected => {
            let projections = inputs
                .projections
                .ok_or_else(|| Error::config("projected mode requested without projections"))?;
            match projections.get(&side.language) {
                Some(p) => side
                    .vectors
                    .iter()
                    .map(|v| {
                        Ok(SentenceVector {
                            vector: p.apply(&v.vector)?,
                            ..v.clone()
                        })
                    })
                    .collect(),
                None if projections
                    .values()
                    .any(|p| p.target_language == side.language) =>
                {
                    Ok(side.vectors.clone())
                }
                None => Err(Error::config(format!(
                    "no projection for language `{}`",
                    side.language
                ))),
            }
        }
    }
}

/// Retrieval for every ordered pair of distinct languages in every mode.
pub fn run_retrieval_suite(
    sides: &[LanguageSide],
    modes: &[RetrievalMode],
    inputs: &SuiteInputs<'_>,
) -> Result<RetrievalSuite> {
    if sides.len() < 2 {
        return Err(Error::validation(
            "retrieval suite needs at least two languages",
        ));
    }
    let n = sides[0].vectors.len();
    if let Some(s) = sides.iter().find(|s| s.vectors.len() != n) {
        return Err(Error::validation(format!(
            "language `{}` has {} sentences, expected {n} (sides must be parallel)",
            s.language,
            s.vectors.len()
        )));
    }
    let mut results = Vec::new();
    let mut mode_averages = Vec::new();
    for &mode in modes {
        let views = sides
            .iter()
            .map(|s| transformed(s, mode, inputs))
            .collect::<Result<Vec<_>>>()?;
        let mut total = 0.0;
        let mut count = 0usize;
        for (qi, q) in sides.iter().enumerate() {
            for (ci, c) in sides.iter().enumerate() {
                if qi == ci {
                    continue;
                }
                let mut r = retrieve(&views[qi], &views[ci])?;
                r.mode = mode;
                r.query_language = q.language.clone();
                r.candidate_language = c.language.clone();
                total += r.accuracy;
                count += 1;
                results.push(r);
            }
        }
        mode_averages.push((mode, total / count as f64));
    }
    Ok(RetrievalSuite {
        languages: sides.iter().map(|s| s.language.clone()).collect(),
        results,
        mode_averages,
    })
}
