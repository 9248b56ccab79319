use std::io::Write;
use std::path::Path;

use lngprobe::{Error, Result};
use serde_json::Value;

use crate::{Common, Format};

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
        }
    }
    Ok(())
}

pub fn render(format: Format, json: &Value, tsv: impl FnOnce() -> String) -> Result<String> {
    Ok(match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(json)?;
            s.push('\n');
            s
        }
        Format::Tsv => tsv(),
    })
}

/// Writes a report to `--output`, or stdout.
pub fn emit(common: &Common, json: &Value, tsv: impl FnOnce() -> String) -> Result<()> {
    let text = render(common.format, json, tsv)?;
    write_text(common.output.as_deref(), &text)
}

/// Writes a report to stdout, for commands whose `--output` is an artifact.
pub fn emit_stdout(common: &Common, json: &Value, tsv: impl FnOnce() -> String) -> Result<()> {
    let text = render(common.format, json, tsv)?;
    write_text(None, &text)
}

pub fn require_output(common: &Common) -> Result<&Path> {
    common
        .output
        .as_deref()
        .ok_or_else(|| Error::Config("this command needs --output".into()))
}

/// `key<TAB>value` lines.
pub fn kv_tsv(pairs: &[(&str, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k}\t{v}\n")).collect()
}
