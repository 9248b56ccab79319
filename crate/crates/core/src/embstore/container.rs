//! Byte layout of `.memb` dumps and their JSON-lines twin.
//!
//! Binary, little-endian:
//!
//! ```text
//! "MEMB" | version u32 = 1 | kind u8 | dim u32 | record_count u64
//! per record:
//!   id_len u16, id (UTF-8) | lang_len u8, lang (UTF-8) | flags u8
//!   kind 0 only: n_tokens u32 | n_words u32, n_words x (start u32, end u32)
//!   payload: f32 values (n_tokens x dim for kind 0, dim for kind 1)
//! ```
//!
//! Model id and layer do not fit the header; they live in a
//! `<file>.meta.json` sidecar next to the binary file. The JSON-lines form
//! carries them in its header line instead.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{
    EmbeddingSet, Pooling, Records, SentenceVector, TokenEmbeddingMatrix, FLAG_POOLED_CLS,
};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MEMB";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpMeta {
    pub model_id: String,
    pub layer: u32,
}

impl Default for DumpMeta {
    fn default() -> Self {
        DumpMeta {
            model_id: "unknown".to_string(),
            layer: 0,
        }
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

pub fn write_sidecar<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(sidecar_path(path), text).map_err(|e| Error::io_at(&sidecar_path(path), e))?;
    Ok(())
}

/// Reads the sidecar of `path`, or `None` when there is none.
pub fn read_sidecar<T: DeserializeOwned>(path: &Path) -> Result<Option<T>> {
    let side = sidecar_path(path);
    if !side.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io_at(&side, e))?;
    Ok(Some(serde_json::from_str(&text)?))
}

fn is_jsonl(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "jsonl")
}

/// Writes `set` to `path`. A `.jsonl` extension selects the text form.
pub fn write_dump(set: &EmbeddingSet, path: &Path) -> Result<()> {
    set.validate()?;
    if is_jsonl(path) {
        return write_jsonl(set, path);
    }
    let mut bytes = Vec::new();
    encode(set, &mut bytes)?;
    std::fs::write(path, bytes).map_err(|e| Error::io_at(path, e))?;
    write_sidecar(
        path,
        &DumpMeta {
            model_id: set.model_id.clone(),
            layer: set.layer,
        },
    )
}

pub fn read_dump(path: &Path) -> Result<EmbeddingSet> {
    if is_jsonl(path) {
        return read_jsonl(path);
    }
    let file = File::open(path).map_err(|e| Error::io_at(path, e))?;
    let meta: DumpMeta = read_sidecar(path)?.unwrap_or_default();
    let mut set = decode(&mut BufReader::new(file))?;
    set.model_id = meta.model_id;
    set.layer = meta.layer;
    set.validate()?;
    Ok(set)
}

pub(crate) fn encode(set: &EmbeddingSet, out: &mut Vec<u8>) -> Result<()> {
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(set.records.kind());
    out.extend_from_slice(&dim_u32(set.dim)?.to_le_bytes());
    out.extend_from_slice(&(set.len() as u64).to_le_bytes());
    match &set.records {
        Records::Tokens(records) => {
            for r in records {
                write_header(out, &r.sentence_id, &r.language, r.flags)?;
                out.extend_from_slice(&(r.n_tokens() as u32).to_le_bytes());
                out.extend_from_slice(&(r.word_spans.len() as u32).to_le_bytes());
                for &(s, e) in &r.word_spans {
                    out.extend_from_slice(&s.to_le_bytes());
                    out.extend_from_slice(&e.to_le_bytes());
                }
                for v in &r.values {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Records::Sentences(records) => {
            for r in records {
                let flags = if r.pooling == Pooling::Cls {
                    FLAG_POOLED_CLS
                } else {
                    0
                };
                write_header(out, &r.sentence_id, &r.language, flags)?;
                for &v in &r.vector {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
        }
    }
    Ok(())
}

fn dim_u32(dim: usize) -> Result<u32> {
    u32::try_from(dim).map_err(|_| Error::validation(format!("dim {dim} too large")))
}

fn write_header(out: &mut Vec<u8>, id: &str, lang: &str, flags: u8) -> Result<()> {
    let id_len = u16::try_from(id.len())
        .map_err(|_| Error::validation(format!("sentence id too long: {} bytes", id.len())))?;
    let lang_len = u8::try_from(lang.len())
        .map_err(|_| Error::validation(format!("language code too long: `{lang}`")))?;
    out.extend_from_slice(&id_len.to_le_bytes());
    out.extend_from_slice(id.as_bytes());
    out.push(lang_len);
    out.extend_from_slice(lang.as_bytes());
    out.push(flags);
    Ok(())
}

struct Cursor<'a, R> {
    inner: &'a mut R,
    record: u64,
}

impl<R: Read> Cursor<'_, R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| self.truncated(e))?;
        Ok(buf)
    }

    fn vec(&mut self, len: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; len];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| self.truncated(e))?;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn string(&mut self, len: usize) -> Result<String> {
        let raw = self.vec(len)?;
        String::from_utf8(raw)
            .map_err(|_| Error::Corruption(format!("record {}: invalid UTF-8", self.record)))
    }

    fn floats(&mut self, count: usize) -> Result<Vec<f32>> {
        let raw = self.vec(count * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    fn truncated(&self, e: std::io::Error) -> Error {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Corruption(format!("file truncated in record {}", self.record))
        } else {
            Error::Io(e)
        }
    }
}

pub(crate) fn decode<R: Read>(input: &mut R) -> Result<EmbeddingSet> {
    let mut magic = [0u8; 4];
    input
        .read_exact(&mut magic)
        .map_err(|_| Error::Format("file too short for a header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let mut cur = Cursor {
        inner: input,
        record: 0,
    };
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let kind = cur.u8()?;
    if kind > 1 {
        return Err(Error::Format(format!("unknown record kind {kind}")));
    }
    let dim = cur.u32()? as usize;
    let count = cur.u64()?;

    // Counts come from the file, so grow vectors as records arrive.
    let mut tokens = Vec::new();
    let mut sentences = Vec::new();
    for i in 0..count {
        cur.record = i;
        let id_len = cur.u16()? as usize;
        let id = cur.string(id_len)?;
        let lang_len = cur.u8()? as usize;
        let lang = cur.string(lang_len)?;
        let flags = cur.u8()?;
        if kind == 0 {
            let n_tokens = cur.u32()? as usize;
            let n_words = cur.u32()? as usize;
            if n_words > n_tokens {
                return Err(Error::Corruption(format!(
                    "record `{id}`: {n_words} words over {n_tokens} tokens"
                )));
            }
            let mut spans = Vec::with_capacity(n_words);
            for _ in 0..n_words {
                spans.push((cur.u32()?, cur.u32()?));
            }
            let values = cur.floats(n_tokens * dim)?;
            tokens.push(TokenEmbeddingMatrix {
                sentence_id: id,
                language: lang,
                dim,
                flags,
                values,
                word_spans: spans,
            });
        } else {
            let pooling = if flags & FLAG_POOLED_CLS != 0 {
                Pooling::Cls
            } else {
                Pooling::Mean
            };
            let vector = cur.floats(dim)?.into_iter().map(f64::from).collect();
            sentences.push(SentenceVector::new(id, lang, pooling, vector));
        }
    }
    let mut rest = [0u8; 1];
    if cur.inner.read(&mut rest)? != 0 {
        return Err(Error::Corruption(format!(
            "trailing bytes after {count} records"
        )));
    }
    let records = if kind == 0 {
        Records::Tokens(tokens)
    } else {
        Records::Sentences(sentences)
    };
    Ok(EmbeddingSet {
        model_id: DumpMeta::default().model_id,
        layer: 0,
        dim,
        records,
    })
}

#[derive(Serialize, Deserialize)]
struct JsonHeader {
    magic: String,
    version: u32,
    kind: u8,
    dim: usize,
    #[serde(default)]
    model_id: Option<String>,
    #[serde(default)]
    layer: Option<u32>,
    #[serde(default)]
    record_count: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct JsonRecord {
    id: String,
    lang: String,
    #[serde(default)]
    flags: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_tokens: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    word_spans: Vec<(u32, u32)>,
    /// Token rows for kind 0, a single row for kind 1.
    values: Vec<Vec<f32>>,
}

fn write_jsonl(set: &EmbeddingSet, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io_at(path, e))?);
    let header = JsonHeader {
        magic: "MEMB".into(),
        version: VERSION,
        kind: set.records.kind(),
        dim: set.dim,
        model_id: Some(set.model_id.clone()),
        layer: Some(set.layer),
        record_count: Some(set.len()),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    let lines: Vec<JsonRecord> = match &set.records {
        Records::Tokens(records) => records
            .iter()
            .map(|r| JsonRecord {
                id: r.sentence_id.clone(),
                lang: r.language.clone(),
                flags: r.flags,
                n_tokens: Some(r.n_tokens()),
                word_spans: r.word_spans.clone(),
                values: r.values.chunks(r.dim).map(<[f32]>::to_vec).collect(),
            })
            .collect(),
        Records::Sentences(records) => records
            .iter()
            .map(|r| JsonRecord {
                id: r.sentence_id.clone(),
                lang: r.language.clone(),
                flags: if r.pooling == Pooling::Cls {
                    FLAG_POOLED_CLS
                } else {
                    0
                },
                n_tokens: None,
                word_spans: Vec::new(),
                values: vec![r.vector.iter().map(|&v| v as f32).collect()],
            })
            .collect(),
    };
    for line in lines {
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn read_jsonl(path: &Path) -> Result<EmbeddingSet> {
    let reader = BufReader::new(File::open(path).map_err(|e| Error::io_at(path, e))?);
    let mut lines = reader
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map(|s| !s.trim().is_empty()).unwrap_or(true));
    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::Format("empty JSON-lines dump".into()))?;
    let header: JsonHeader = serde_json::from_str(&first?)
        .map_err(|e| Error::Format(format!("bad JSON-lines header: {e}")))?;
    if header.magic != "MEMB" {
        return Err(Error::Format(format!("bad magic `{}`", header.magic)));
    }
    if header.version != VERSION {
        return Err(Error::Format(format!(
            "unsupported version {}",
            header.version
        )));
    }
    if header.kind > 1 {
        return Err(Error::Format(format!(
            "unknown record kind {}",
            header.kind
        )));
    }
    let dim = header.dim;
    let mut tokens = Vec::new();
    let mut sentences = Vec::new();
    for (lineno, line) in lines {
        let rec: JsonRecord = serde_json::from_str(&line?)
            .map_err(|e| Error::Corruption(format!("line {}: {e}", lineno + 1)))?;
        if let Some(row) = rec.values.iter().find(|r| r.len() != dim) {
            return Err(Error::Corruption(format!(
                "record `{}`: row of length {}, dim is {dim}",
                rec.id,
                row.len()
            )));
        }
        if header.kind == 0 {
            if rec.n_tokens.is_some_and(|n| n != rec.values.len()) {
                return Err(Error::Corruption(format!(
                    "record `{}`: n_tokens disagrees with row count",
                    rec.id
                )));
            }
            tokens.push(TokenEmbeddingMatrix {
                sentence_id: rec.id,
                language: rec.lang,
                dim,
                flags: rec.flags,
                values: rec.values.concat(),
                word_spans: rec.word_spans,
            });
        } else {
            if rec.values.len() != 1 {
                return Err(Error::Corruption(format!(
                    "record `{}`: sentence vectors take exactly one row",
                    rec.id
                )));
            }
            let pooling = if rec.flags & FLAG_POOLED_CLS != 0 {
                Pooling::Cls
            } else {
                Pooling::Mean
            };
            let vector = rec.values[0].iter().map(|&v| f64::from(v)).collect();
            sentences.push(SentenceVector::new(rec.id, rec.lang, pooling, vector));
        }
    }
    let records = if header.kind == 0 {
        Records::Tokens(tokens)
    } else {
        Records::Sentences(sentences)
    };
    if let Some(n) = header.record_count {
        if n != records.len() {
            return Err(Error::Corruption(format!(
                "header announces {n} records, found {}",
                records.len()
            )));
        }
    }
    let meta = DumpMeta::default();
    let set = EmbeddingSet {
        model_id: header.model_id.unwrap_or(meta.model_id),
        layer: header.layer.unwrap_or(meta.layer),
        dim,
        records,
    };
    set.validate()?;
    Ok(set)
}
