//! Additive-model embeddings: every token row is a shared meaning vector
//! plus a fixed per-language offset plus Gaussian noise.
//!
//! Sentence `i` has the same meaning rows in every language, so the
//! generated dumps are line-parallel and token `t` of one language
//! corresponds to token `t` of every other.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embstore::{EmbeddingSet, TokenEmbeddingMatrix};
use crate::error::{Error, Result};

pub const LANGUAGE_CODES: [&str; 20] = [
    "en", "de", "fr", "cs", "es", "ru", "it", "pl", "nl", "pt", "sv", "fi", "hu", "ro", "bg", "el",
    "tr", "ja", "zh", "ar",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub languages: usize,
    pub sentences: usize,
    pub dim: usize,
    pub tokens_per_sentence: usize,
    /// Standard deviation of each offset coordinate.
    pub offset_scale: f64,
    /// Standard deviation of the per-row noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            languages: 6,
            sentences: 500,
            dim: 32,
            tokens_per_sentence: 1,
            offset_scale: 3.0,
            noise: 0.1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.languages < 2 || self.languages > LANGUAGE_CODES.len() {
            return Err(Error::config(format!(
                "language count must be in 2..={}, got {}",
                LANGUAGE_CODES.len(),
                self.languages
            )));
        }
        if self.dim < 2 {
            return Err(Error::config("dim must be at least 2"));
        }
        if self.sentences == 0 || self.tokens_per_sentence == 0 {
            return Err(Error::config("need at least one sentence and one token"));
        }
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.offset_scale) || !ok(self.noise) {
            return Err(Error::config(
                "offset scale and noise must be finite and non-negative",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub languages: Vec<String>,
    /// True language offsets, aligned with `languages`.
    pub offsets: Vec<Vec<f64>>,
    /// One token-matrix set per language.
    pub sets: Vec<EmbeddingSet>,
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let languages: Vec<String> = LANGUAGE_CODES[..cfg.languages]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let offsets: Vec<Vec<f64>> = languages
        .iter()
        .map(|_| gaussian(&mut rng, cfg.dim, cfg.offset_scale))
        .collect();
    let rows = cfg.tokens_per_sentence;
    let meanings: Vec<Vec<f64>> = (0..cfg.sentences)
        .map(|_| gaussian(&mut rng, rows * cfg.dim, 1.0))
        .collect();
    let sets = languages
        .iter()
        .zip(&offsets)
        .map(|(lang, offset)| {
            let records = meanings
                .iter()
                .enumerate()
                .map(|(i, meaning)| {
                    let noise = gaussian(&mut rng, rows * cfg.dim, cfg.noise);
                    let values = meaning
                        .iter()
                        .zip(&noise)
                        .enumerate()
                        .map(|(k, (m, e))| (m + offset[k % cfg.dim] + e) as f32)
                        .collect();
                    TokenEmbeddingMatrix::new(format!("{lang}-{i}"), lang.clone(), cfg.dim, values)
                })
                .collect();
            EmbeddingSet::tokens("synthetic", 0, cfg.dim, records)
        })
        .collect();
    Ok(SynthCorpus {
        languages,
        offsets,
        sets,
    })
}
