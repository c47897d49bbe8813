//! Plain-text form of a forest.
//!
//! One line per rank, in rank order:
//!
//! ```text
//! nroots nleaves leaf:rank.offset leaf:rank.offset ...
//! ```
//!
//! with exactly `nleaves` edge tokens. `#` starts a comment and blank lines
//! are skipped. A corpus holds several forests separated by lines of `---`.
//! Parsed graphs always carry an explicit leaf list.

use std::fmt::Write as _;

use super::{RankGraph, RootRef};
use crate::error::{Result, SfError};

fn parse_edge(tok: &str) -> Option<(usize, RootRef)> {
    let (leaf, root) = tok.split_once(':')?;
    let (rank, offset) = root.split_once('.')?;
    Some((
        leaf.parse().ok()?,
        RootRef::new(rank.parse().ok()?, offset.parse().ok()?),
    ))
}

fn parse_line(line: &str, lineno: usize) -> Result<RankGraph> {
    let err = |msg: String| SfError::Parse { line: lineno, msg };
    let mut it = line.split_whitespace();
    let mut count = |what: &str| -> Result<usize> {
        it.next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err(format!("expected {what}")))
    };
    let nroots = count("nroots")?;
    let nleaves = count("nleaves")?;
    let mut local = Vec::with_capacity(nleaves);
    let mut remote = Vec::with_capacity(nleaves);
    for tok in it {
        let (l, r) = parse_edge(tok).ok_or_else(|| err(format!("malformed edge {tok:?}")))?;
        local.push(l);
        remote.push(r);
    }
    if remote.len() != nleaves {
        return Err(err(format!("{nleaves} leaves declared, {} given", remote.len())));
    }
    Ok(RankGraph {
        nroots,
        leaf_local: Some(local),
        leaf_remote: remote,
    })
}

fn content(raw: &str) -> &str {
    raw.split('#').next().unwrap().trim()
}

/// Parses a single forest.
pub fn parse_forest(text: &str) -> Result<Vec<RankGraph>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = content(raw);
        if line.is_empty() {
            continue;
        }
        if line == "---" {
            return Err(SfError::Parse {
                line: i + 1,
                msg: "separator in single-forest text".into(),
            });
        }
        out.push(parse_line(line, i + 1)?);
    }
    Ok(out)
}

/// Parses a `---`-separated list of forests.
pub fn parse_corpus(text: &str) -> Result<Vec<Vec<RankGraph>>> {
    let mut forests = vec![Vec::new()];
    for (i, raw) in text.lines().enumerate() {
        let line = content(raw);
        if line.is_empty() {
            continue;
        }
        if line == "---" {
            forests.push(Vec::new());
        } else {
            forests.last_mut().unwrap().push(parse_line(line, i + 1)?);
        }
    }
    forests.retain(|f| !f.is_empty());
    Ok(forests)
}

pub fn format_forest(ranks: &[RankGraph]) -> String {
    let mut s = String::new();
    for g in ranks {
        write!(s, "{} {}", g.nroots, g.nleaves()).unwrap();
        for (l, r) in g.edges() {
            write!(s, " {l}:{}.{}", r.rank, r.offset).unwrap();
        }
        s.push('\n');
    }
    s
}
