//! Pharaoh-style link lists: `i-j` is a sure link, `i?j` a possible one.

use std::collections::BTreeSet;

use super::{AlignmentLinkSet, GoldAlignment};
use crate::error::{Error, Result};

fn parse_index(s: &str, one_based: bool, line: usize) -> Result<usize> {
    let v: usize = s
        .parse()
        .map_err(|_| Error::Format(format!("line {line}: bad index `{s}`")))?;
    if one_based {
        v.checked_sub(1)
            .ok_or_else(|| Error::Format(format!("line {line}: index 0 in a 1-based file")))
    } else {
        Ok(v)
    }
}

/// Parses one line of gold links. `line` is only used in messages.
pub fn parse_gold_line(text: &str, one_based: bool, line: usize) -> Result<GoldAlignment> {
    let mut sure = BTreeSet::new();
    let mut possible = BTreeSet::new();
    for tok in text.split_whitespace() {
        let (sep, is_sure) = if tok.contains('-') {
            ('-', true)
        } else if tok.contains('?') {
            ('?', false)
        } else {
            return Err(Error::Format(format!("line {line}: bad link `{tok}`")));
        };
        let (a, b) = tok
            .split_once(sep)
            .ok_or_else(|| Error::Format(format!("line {line}: bad link `{tok}`")))?;
        let link = (
            parse_index(a, one_based, line)?,
            parse_index(b, one_based, line)?,
        );
        if is_sure {
            sure.insert(link);
        }
        possible.insert(link);
    }
    Ok(GoldAlignment { sure, possible })
}

pub fn parse_gold(text: &str, one_based: bool) -> Result<Vec<GoldAlignment>> {
    text.lines()
        .enumerate()
        .map(|(i, l)| parse_gold_line(l, one_based, i + 1))
        .collect()
}

/// Predicted links as one line, `i-j` in ascending order.
pub fn format_links(links: &AlignmentLinkSet) -> String {
    links
        .links
        .iter()
        .map(|(i, j)| format!("{i}-{j}"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn parse_links_line(text: &str, one_based: bool, line: usize) -> Result<AlignmentLinkSet> {
    let gold = parse_gold_line(text, one_based, line)?;
    if gold.sure.len() != gold.possible.len() {
        return Err(Error::Format(format!(
            "line {line}: predicted links cannot be marked possible"
        )));
    }
    Ok(AlignmentLinkSet { links: gold.sure })
}
