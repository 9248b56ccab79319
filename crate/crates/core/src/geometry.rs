//! Cosine distance, language centroids, centering and linear projections
//! between embedding spaces.

use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::embstore::{
    read_dump, read_sidecar, write_sidecar, EmbeddingSet, Pooling, SentenceVector,
};
use crate::error::{Error, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `1 - ab / sqrt(aa * bb)`. Taking one square root of the product keeps
/// the distance of a vector to itself exactly zero.
pub(crate) fn cosine_from_parts(ab: f64, aa: f64, bb: f64) -> f64 {
    1.0 - (ab / (aa * bb).sqrt()).clamp(-1.0, 1.0)
}

/// `1 - cos(a, b)`, in `[0, 2]`. Zero vectors are an error: they only show
/// up when something upstream went wrong.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::validation(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let (sa, sb) = (dot(a, a), dot(b, b));
    if sa == 0.0 || sb == 0.0 {
        return Err(Error::validation("zero-norm vector in cosine distance"));
    }
    Ok(cosine_from_parts(dot(a, b), sa, sb))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageCentroid {
    pub language: String,
    pub vector: Vec<f64>,
    pub sample_count: usize,
}

impl LanguageCentroid {
    pub fn zeros(language: impl Into<String>, dim: usize) -> Self {
        LanguageCentroid {
            language: language.into(),
            vector: vec![0.0; dim],
            sample_count: 1,
        }
    }
}

/// Element-wise mean of equally sized vectors.
pub fn mean_vector<'a, I>(vectors: I) -> Result<(Vec<f64>, usize)>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut iter = vectors.into_iter();
    let first = iter
        .next()
        .ok_or_else(|| Error::validation("mean of an empty set"))?;
    let mut acc = first.to_vec();
    let mut count = 1usize;
    for v in iter {
        if v.len() != acc.len() {
            return Err(Error::validation(format!(
                "dimension mismatch: {} vs {}",
                v.len(),
                acc.len()
            )));
        }
        acc.iter_mut().zip(v).for_each(|(a, x)| *a += x);
        count += 1;
    }
    let n = count as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok((acc, count))
}

/// Mean sentence vector of one language.
pub fn centroid(vectors: &[SentenceVector]) -> Result<LanguageCentroid> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::validation("centroid of an empty set"))?;
    if let Some(other) = vectors.iter().find(|v| v.language != first.language) {
        return Err(Error::validation(format!(
            "centroid over mixed languages: `{}` and `{}` (record `{}`)",
            first.language, other.language, other.sentence_id
        )));
    }
    let (vector, sample_count) = mean_vector(vectors.iter().map(|v| v.vector.as_slice()))?;
    Ok(LanguageCentroid {
        language: first.language.clone(),
        vector,
        sample_count,
    })
}

/// One centroid per language, in order of first appearance.
pub fn centroids_by_language(vectors: &[SentenceVector]) -> Result<Vec<LanguageCentroid>> {
    let mut languages: Vec<&str> = Vec::new();
    for v in vectors {
        if !languages.contains(&v.language.as_str()) {
            languages.push(&v.language);
        }
    }
    languages
        .into_iter()
        .map(|lang| {
            let group: Vec<SentenceVector> = vectors
                .iter()
                .filter(|v| v.language == lang)
                .cloned()
                .collect();
            centroid(&group)
        })
        .collect()
}

pub fn center_vector(v: &[f64], c: &[f64]) -> Result<Vec<f64>> {
    if v.len() != c.len() {
        return Err(Error::validation(format!(
            "dimension mismatch: vector {} vs centroid {}",
            v.len(),
            c.len()
        )));
    }
    Ok(v.iter().zip(c).map(|(x, m)| x - m).collect())
}

/// Subtracts the centroid from every vector; order is kept.
pub fn center(vectors: &[SentenceVector], c: &LanguageCentroid) -> Result<Vec<SentenceVector>> {
    vectors
        .iter()
        .map(|v| {
            Ok(SentenceVector {
                vector: center_vector(&v.vector, &c.vector)?,
                ..v.clone()
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProjection {
    /// `dim x dim`, applied as `matrix * v`.
    pub matrix: DMatrix<f64>,
    pub bias: Option<DVector<f64>>,
    pub source_language: String,
    pub target_language: String,
    /// Element-wise mean squared error on the fitting data.
    pub residual_mse: f64,
    /// Set when the normal equations were singular and a ridge term was added.
    pub regularized: bool,
}

impl LinearProjection {
    pub fn identity(dim: usize, source: impl Into<String>, target: impl Into<String>) -> Self {
        LinearProjection {
            matrix: DMatrix::identity(dim, dim),
            bias: None,
            source_language: source.into(),
            target_language: target.into(),
            residual_mse: 0.0,
            regularized: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        apply_projection(self, v)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FitOptions {
    pub bias: bool,
}

/// Least-squares fit of `tgt_i ≈ P src_i (+ b)`, solved through the normal
/// equations. A singular system gets a ridge term of `1e-8 * trace / dim`.
pub fn fit_projection(
    src: &[Vec<f64>],
    tgt: &[Vec<f64>],
    options: FitOptions,
) -> Result<LinearProjection> {
    if src.len() != tgt.len() {
        return Err(Error::validation(format!(
            "{} source vectors but {} target vectors",
            src.len(),
            tgt.len()
        )));
    }
    if src.is_empty() {
        return Err(Error::validation("no samples to fit a projection"));
    }
    let dim = src[0].len();
    if dim == 0 {
        return Err(Error::validation("zero-dimensional vectors"));
    }
    if let Some(v) = src.iter().chain(tgt).find(|v| v.len() != dim) {
        return Err(Error::validation(format!(
            "dimension mismatch: {} vs {dim}",
            v.len()
        )));
    }
    let n = src.len();
    let cols = dim + usize::from(options.bias);
    let x = DMatrix::from_fn(n, cols, |i, j| if j < dim { src[i][j] } else { 1.0 });
    let y = DMatrix::from_fn(n, dim, |i, j| tgt[i][j]);

    let gram = x.transpose() * &x;
    let rhs = x.transpose() * &y;
    let (weights, regularized) = solve_normal_equations(gram, &rhs)?;
    if regularized {
        warn!("projection fit: singular normal equations, solved with ridge regularization");
    }

    let matrix = weights.rows(0, dim).transpose();
    let bias = options
        .bias
        .then(|| weights.row(dim).transpose().into_owned());
    let residual = &x * &weights - &y;
    let residual_mse = residual.norm_squared() / (n * dim) as f64;
    if !residual_mse.is_finite() || matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::Training(
            "projection fit produced non-finite values".into(),
        ));
    }
    Ok(LinearProjection {
        matrix,
        bias,
        source_language: String::new(),
        target_language: String::new(),
        residual_mse,
        regularized,
    })
}

fn solve_normal_equations(gram: DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<(DMatrix<f64>, bool)> {
    let dim = gram.nrows();
    let max_diag = gram.diagonal().max();
    if let Some(chol) = gram.clone().cholesky() {
        let l = chol.l_dirty();
        let min_pivot = (0..dim)
            .map(|i| l[(i, i)] * l[(i, i)])
            .fold(f64::INFINITY, f64::min);
        if min_pivot > 1e-12 * max_diag.max(f64::MIN_POSITIVE) {
            return Ok((chol.solve(rhs), false));
        }
    }
    let trace = gram.trace();
    let lambda = if trace > 0.0 {
        1e-8 * trace / dim as f64
    } else {
        1e-8
    };
    let ridged = gram + DMatrix::identity(dim, dim) * lambda;
    let chol = ridged
        .cholesky()
        .ok_or_else(|| Error::Training("regularized normal equations not solvable".into()))?;
    Ok((chol.solve(rhs), true))
}

pub fn apply_projection(p: &LinearProjection, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != p.matrix.ncols() {
        return Err(Error::validation(format!(
            "projection expects dim {}, got {}",
            p.matrix.ncols(),
            v.len()
        )));
    }
    let mut out = vec![0.0; p.matrix.nrows()];
    for (i, o) in out.iter_mut().enumerate() {
        *o = (0..v.len()).map(|j| p.matrix[(i, j)] * v[j]).sum();
        if let Some(b) = &p.bias {
            *o += b[i];
        }
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct ProjectionHeader {
    kind: String,
    model_id: String,
    layer: u32,
    source_language: String,
    target_language: String,
    bias: Option<Vec<f64>>,
    residual_mse: f64,
    regularized: bool,
}

/// Stores the matrix as a sentence-vector dump (one record per row) with a
/// JSON sidecar naming the languages and holding the bias.
pub fn save_projection(
    p: &LinearProjection,
    model_id: &str,
    layer: u32,
    path: &Path,
) -> Result<()> {
    let rows = (0..p.matrix.nrows())
        .map(|i| {
            SentenceVector::new(
                format!("row{i}"),
                p.target_language.clone(),
                Pooling::Mean,
                p.matrix.row(i).iter().copied().collect(),
            )
        })
        .collect();
    let set = EmbeddingSet::sentences(model_id, layer, p.matrix.ncols(), rows);
    crate::embstore::write_dump(&set, path)?;
    write_sidecar(
        path,
        &ProjectionHeader {
            kind: "projection".into(),
            model_id: model_id.into(),
            layer,
            source_language: p.source_language.clone(),
            target_language: p.target_language.clone(),
            bias: p
                .bias
                .as_ref()
                .map(|b| b.iter().map(|&v| f64::from(v as f32)).collect()),
            residual_mse: p.residual_mse,
            regularized: p.regularized,
        },
    )
}

pub fn load_projection(path: &Path) -> Result<LinearProjection> {
    let set = read_dump(path)?;
    let header: ProjectionHeader = read_sidecar(path)?
        .ok_or_else(|| Error::Format(format!("{}: missing projection sidecar", path.display())))?;
    if header.kind != "projection" {
        return Err(Error::Format(format!(
            "{}: sidecar describes a `{}`, not a projection",
            path.display(),
            header.kind
        )));
    }
    let rows = set.sentence_records()?;
    if rows.len() != set.dim {
        return Err(Error::Corruption(format!(
            "projection has {} rows for dim {}",
            rows.len(),
            set.dim
        )));
    }
    let matrix = DMatrix::from_fn(set.dim, set.dim, |i, j| rows[i].vector[j]);
    let bias = match header.bias {
        Some(b) if b.len() != set.dim => {
            return Err(Error::Corruption("bias length differs from dim".into()))
        }
        Some(b) => Some(DVector::from_vec(b)),
        None => None,
    };
    Ok(LinearProjection {
        matrix,
        bias,
        source_language: header.source_language,
        target_language: header.target_language,
        residual_mse: header.residual_mse,
        regularized: header.regularized,
    })
}

#[derive(Serialize, Deserialize)]
struct CentroidHeader {
    kind: String,
    model_id: String,
    layer: u32,
    sample_counts: Vec<usize>,
}

/// One sentence-vector record per language, id and language both set to
/// the language code.
pub fn save_centroids(
    centroids: &[LanguageCentroid],
    model_id: &str,
    layer: u32,
    path: &Path,
) -> Result<()> {
    let dim = centroids
        .first()
        .map(|c| c.vector.len())
        .ok_or_else(|| Error::validation("no centroids to save"))?;
    let records = centroids
        .iter()
        .map(|c| {
            SentenceVector::new(
                c.language.clone(),
                c.language.clone(),
                Pooling::Mean,
                c.vector.clone(),
            )
        })
        .collect();
    crate::embstore::write_dump(
        &EmbeddingSet::sentences(model_id, layer, dim, records),
        path,
    )?;
    write_sidecar(
        path,
        &CentroidHeader {
            kind: "centroids".into(),
            model_id: model_id.into(),
            layer,
            sample_counts: centroids.iter().map(|c| c.sample_count).collect(),
        },
    )
}

pub fn load_centroids(path: &Path) -> Result<Vec<LanguageCentroid>> {
    let set = read_dump(path)?;
    let header: Option<CentroidHeader> = read_sidecar(path)?;
    let records = set.sentence_records()?;
    let counts = match header {
        Some(h) if h.kind == "centroids" && h.sample_counts.len() == records.len() => {
            h.sample_counts
        }
        _ => vec![1; records.len()],
    };
    Ok(records
        .iter()
        .zip(counts)
        .map(|(r, sample_count)| LanguageCentroid {
            language: r.language.clone(),
            vector: r.vector.clone(),
            sample_count,
        })
        .collect())
}
