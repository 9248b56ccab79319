//! Embedding containers and pooling.
//!
//! A dump holds either per-sentence token matrices (one row per subword,
//! straight from an encoder layer) or pooled sentence vectors. Records keep
//! corpus line order, so two dumps of a parallel corpus pair up by position.

mod container;

pub use container::{read_dump, read_sidecar, sidecar_path, write_dump, write_sidecar, DumpMeta};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Record flag: row 0 is a prepended special token such as `[cls]`.
pub const FLAG_LEADING_SPECIAL: u8 = 0b0000_0001;
/// Record flag: the last row is a trailing separator token.
pub const FLAG_TRAILING_SPECIAL: u8 = 0b0000_0010;
/// Sentence-vector flag: the vector was taken from the leading special token.
pub const FLAG_POOLED_CLS: u8 = 0b0000_0100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Cls,
    Mean,
}

impl std::str::FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cls" => Ok(Pooling::Cls),
            "mean" => Ok(Pooling::Mean),
            other => Err(Error::config(format!("unknown pooling `{other}`"))),
        }
    }
}

/// Hidden states of one sentence: `n_tokens` rows of `dim` values.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddingMatrix {
    pub sentence_id: String,
    pub language: String,
    pub dim: usize,
    pub flags: u8,
    /// Row-major, `n_tokens * dim` entries.
    pub values: Vec<f32>,
    /// Half-open subword ranges, one per surface word. Empty means every
    /// non-special token is its own word.
    pub word_spans: Vec<(u32, u32)>,
}

impl TokenEmbeddingMatrix {
    pub fn new(
        sentence_id: impl Into<String>,
        language: impl Into<String>,
        dim: usize,
        values: Vec<f32>,
    ) -> Self {
        TokenEmbeddingMatrix {
            sentence_id: sentence_id.into(),
            language: language.into(),
            dim,
            flags: 0,
            values,
            word_spans: Vec::new(),
        }
    }

    pub fn with_flags(mut self, flags: u8) -> Self {
        self.flags = flags;
        self
    }

    pub fn with_word_spans(mut self, spans: Vec<(u32, u32)>) -> Self {
        self.word_spans = spans;
        self
    }

    pub fn n_tokens(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.values.len() / self.dim
        }
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn has_leading_special(&self) -> bool {
        self.flags & FLAG_LEADING_SPECIAL != 0
    }

    pub fn has_trailing_special(&self) -> bool {
        self.flags & FLAG_TRAILING_SPECIAL != 0
    }

    /// Token rows that are not flagged as special, as a half-open range.
    pub fn content_range(&self) -> (usize, usize) {
        let n = self.n_tokens();
        let start = usize::from(self.has_leading_special());
        let end = if self.has_trailing_special() {
            n.saturating_sub(1)
        } else {
            n
        };
        (start, end.max(start))
    }

    pub fn validate(&self) -> Result<()> {
        let id = &self.sentence_id;
        if self.dim == 0 {
            return Err(Error::validation(format!("record `{id}`: dim is 0")));
        }
        if self.values.len() % self.dim != 0 {
            return Err(Error::validation(format!(
                "record `{id}`: {} values is not a multiple of dim {}",
                self.values.len(),
                self.dim
            )));
        }
        if self.n_tokens() == 0 {
            return Err(Error::validation(format!("record `{id}`: no tokens")));
        }
        if let Some(pos) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "record `{id}`: non-finite value at token {}, component {}",
                pos / self.dim,
                pos % self.dim
            )));
        }
        if self.has_leading_special() && self.has_trailing_special() && self.n_tokens() < 2 {
            return Err(Error::validation(format!(
                "record `{id}`: both special flags set on a single-token record"
            )));
        }
        self.validate_spans()
    }

    fn validate_spans(&self) -> Result<()> {
        if self.word_spans.is_empty() {
            return Ok(());
        }
        let id = &self.sentence_id;
        let (start, end) = self.content_range();
        let mut expected = start;
        for &(s, e) in &self.word_spans {
            let (s, e) = (s as usize, e as usize);
            if s != expected || e <= s {
                return Err(Error::validation(format!(
                    "record `{id}`: word span ({s}, {e}) does not continue at token {expected}"
                )));
            }
            expected = e;
        }
        if expected != end {
            return Err(Error::validation(format!(
                "record `{id}`: word spans end at {expected}, content tokens end at {end}"
            )));
        }
        Ok(())
    }

    /// Word spans, defaulting to one word per content token.
    pub fn effective_spans(&self) -> Vec<(usize, usize)> {
        if self.word_spans.is_empty() {
            let (start, end) = self.content_range();
            (start..end).map(|i| (i, i + 1)).collect()
        } else {
            self.word_spans
                .iter()
                .map(|&(s, e)| (s as usize, e as usize))
                .collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentenceVector {
    pub sentence_id: String,
    pub language: String,
    pub pooling: Pooling,
    pub vector: Vec<f64>,
}

impl SentenceVector {
    pub fn new(
        sentence_id: impl Into<String>,
        language: impl Into<String>,
        pooling: Pooling,
        vector: Vec<f64>,
    ) -> Self {
        SentenceVector {
            sentence_id: sentence_id.into(),
            language: language.into(),
            pooling,
            vector,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Records {
    Tokens(Vec<TokenEmbeddingMatrix>),
    Sentences(Vec<SentenceVector>),
}

impl Records {
    pub fn len(&self) -> usize {
        match self {
            Records::Tokens(r) => r.len(),
            Records::Sentences(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn kind(&self) -> u8 {
        match self {
            Records::Tokens(_) => 0,
            Records::Sentences(_) => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub model_id: String,
    /// 0 is the embedding layer, 1..=L the encoder layers.
    pub layer: u32,
    pub dim: usize,
    pub records: Records,
}

impl EmbeddingSet {
    pub fn tokens(
        model_id: impl Into<String>,
        layer: u32,
        dim: usize,
        records: Vec<TokenEmbeddingMatrix>,
    ) -> Self {
        EmbeddingSet {
            model_id: model_id.into(),
            layer,
            dim,
            records: Records::Tokens(records),
        }
    }

    pub fn sentences(
        model_id: impl Into<String>,
        layer: u32,
        dim: usize,
        records: Vec<SentenceVector>,
    ) -> Self {
        EmbeddingSet {
            model_id: model_id.into(),
            layer,
            dim,
            records: Records::Sentences(records),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        match &self.records {
            Records::Tokens(records) => {
                for r in records {
                    if r.dim != self.dim {
                        return Err(Error::validation(format!(
                            "record `{}` has dim {}, set has dim {}",
                            r.sentence_id, r.dim, self.dim
                        )));
                    }
                    r.validate()?;
                }
            }
            Records::Sentences(records) => {
                for r in records {
                    if r.vector.len() != self.dim {
                        return Err(Error::validation(format!(
                            "record `{}` has dim {}, set has dim {}",
                            r.sentence_id,
                            r.vector.len(),
                            self.dim
                        )));
                    }
                    if r.vector.iter().any(|v| !v.is_finite()) {
                        return Err(Error::validation(format!(
                            "record `{}` has a non-finite value",
                            r.sentence_id
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn token_records(&self) -> Result<&[TokenEmbeddingMatrix]> {
        match &self.records {
            Records::Tokens(r) => Ok(r),
            Records::Sentences(_) => Err(Error::validation(
                "expected token matrices, found sentence vectors",
            )),
        }
    }

    pub fn sentence_records(&self) -> Result<&[SentenceVector]> {
        match &self.records {
            Records::Sentences(r) => Ok(r),
            Records::Tokens(_) => Err(Error::validation(
                "expected sentence vectors, found token matrices",
            )),
        }
    }

    /// Pools every token matrix into a sentence vector.
    pub fn pooled(&self, pooling: Pooling, skip_special: bool) -> Result<EmbeddingSet> {
        let records = self
            .token_records()?
            .iter()
            .map(|m| match pooling {
                Pooling::Mean => pool_mean(m, skip_special),
                Pooling::Cls => pool_cls(m),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EmbeddingSet::sentences(
            self.model_id.clone(),
            self.layer,
            self.dim,
            records,
        ))
    }
}

fn mean_rows(m: &TokenEmbeddingMatrix, start: usize, end: usize) -> Vec<f64> {
    let mut acc = vec![0.0f64; m.dim];
    for i in start..end {
        for (a, &v) in acc.iter_mut().zip(m.row(i)) {
            *a += f64::from(v);
        }
    }
    let n = (end - start) as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// Mean of the token rows. With `skip_special`, flagged `[cls]`/separator
/// rows are left out.
pub fn pool_mean(m: &TokenEmbeddingMatrix, skip_special: bool) -> Result<SentenceVector> {
    let (start, end) = if skip_special {
        m.content_range()
    } else {
        (0, m.n_tokens())
    };
    if end <= start {
        return Err(Error::validation(format!(
            "record `{}`: no tokens left to mean-pool",
            m.sentence_id
        )));
    }
    Ok(SentenceVector::new(
        m.sentence_id.clone(),
        m.language.clone(),
        Pooling::Mean,
        mean_rows(m, start, end),
    ))
}

/// The leading special-token row.
pub fn pool_cls(m: &TokenEmbeddingMatrix) -> Result<SentenceVector> {
    if !m.has_leading_special() || m.n_tokens() == 0 {
        return Err(Error::validation(format!(
            "record `{}`: no leading special token flagged",
            m.sentence_id
        )));
    }
    Ok(SentenceVector::new(
        m.sentence_id.clone(),
        m.language.clone(),
        Pooling::Cls,
        m.row(0).iter().map(|&v| f64::from(v)).collect(),
    ))
}

/// One vector per surface word, averaging the word's subword rows.
pub fn pool_words(m: &TokenEmbeddingMatrix) -> Result<Vec<Vec<f64>>> {
    m.validate_spans()?;
    let spans = m.effective_spans();
    if spans.is_empty() {
        return Err(Error::validation(format!(
            "record `{}`: no words",
            m.sentence_id
        )));
    }
    Ok(spans.into_iter().map(|(s, e)| mean_rows(m, s, e)).collect())
}
