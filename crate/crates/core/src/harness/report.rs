//! Score normalization and the report tables.
//!
//! Raw per-game scores (random and expert baselines, a reference agent, and
//! this system's agent) are normalized onto a scale where 0 is random play
//! and 100 is the expert. A second column normalizes against the reference
//! agent instead. Degenerate baselines are never silently dropped: rows get
//! explicit flags and undefined entries an explicit marker.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("undefined baseline: human and random scores are equal ({0})")]
    UndefinedBaseline(f64),
    #[error("raw score file: {0}")]
    Schema(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Expert-anchored normalization: `100 * (agent - random) / (human - random)`.
pub fn normalize(agent: f64, random: f64, human: f64) -> Result<f64, ReportError> {
    if human == random {
        return Err(ReportError::UndefinedBaseline(human));
    }
    Ok(100.0 * (agent - random) / (human - random))
}

/// Outcome of reference-agent normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DqnNorm {
    /// `100 * (gorila - random) / (dqn - random)`.
    Standard(f64),
    /// The reference score does not beat random; the random baseline is
    /// substituted with 0: `100 * gorila / dqn`.
    Fallback(f64),
    /// No meaningful value (reference at or below zero after the fallback).
    Undefined,
}

/// Reference-agent normalization with the degenerate-baseline fallback.
/// With `fallback` disabled, any `dqn <= random` case is undefined.
pub fn dqn_normalize(gorila: f64, random: f64, dqn: f64, fallback: bool) -> DqnNorm {
    if dqn > random {
        return DqnNorm::Standard(100.0 * (gorila - random) / (dqn - random));
    }
    if fallback && dqn > 0.0 {
        return DqnNorm::Fallback(100.0 * gorila / dqn);
    }
    DqnNorm::Undefined
}

/// One row of the raw score file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawScoreRow {
    pub game: String,
    pub random: f64,
    pub human: f64,
    pub dqn: f64,
    pub gorila: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowFlag {
    /// Expert baseline below random play; the normalization keeps the
    /// numerator's sign by using the absolute denominator.
    HumanBelowRandom,
    /// Human and random scores are equal; human-normalized entries are
    /// undefined markers.
    UndefinedHumanBaseline,
    /// Reference agent at or below random; the fallback normalization
    /// (random := 0) was applied.
    DqnFallback,
    /// Reference-agent normalization has no meaningful value.
    UndefinedDqnBaseline,
}

impl RowFlag {
    pub fn as_str(&self) -> &'static str {
        match self {
            RowFlag::HumanBelowRandom => "human_below_random",
            RowFlag::UndefinedHumanBaseline => "undefined_human_baseline",
            RowFlag::DqnFallback => "dqn_fallback",
            RowFlag::UndefinedDqnBaseline => "undefined_dqn_baseline",
        }
    }
}

/// One row of the normalized tables. `None` entries are undefined markers.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub game: String,
    pub dqn_human_norm: Option<f64>,
    pub gorila_human_norm: Option<f64>,
    pub gorila_dqn_norm: Option<f64>,
    pub flags: Vec<RowFlag>,
}

/// Normalize every raw row into the two report columns, flagging the
/// special cases instead of dropping them.
pub fn report_tables(rows: &[RawScoreRow], fallback: bool) -> Vec<ReportRow> {
    rows.iter()
        .map(|r| {
            let mut flags = Vec::new();
            let (dqn_human_norm, gorila_human_norm) = if r.human == r.random {
                flags.push(RowFlag::UndefinedHumanBaseline);
                (None, None)
            } else if r.human < r.random {
                // keep "above random" positive by normalizing against the
                // magnitude of the (inverted) baseline gap
                flags.push(RowFlag::HumanBelowRandom);
                let denom = (r.human - r.random).abs();
                (
                    Some(100.0 * (r.dqn - r.random) / denom),
                    Some(100.0 * (r.gorila - r.random) / denom),
                )
            } else {
                (
                    Some(100.0 * (r.dqn - r.random) / (r.human - r.random)),
                    Some(100.0 * (r.gorila - r.random) / (r.human - r.random)),
                )
            };
            let gorila_dqn_norm = match dqn_normalize(r.gorila, r.random, r.dqn, fallback) {
                DqnNorm::Standard(v) => Some(v),
                DqnNorm::Fallback(v) => {
                    flags.push(RowFlag::DqnFallback);
                    Some(v)
                }
                DqnNorm::Undefined => {
                    flags.push(RowFlag::UndefinedDqnBaseline);
                    None
                }
            };
            ReportRow {
                game: r.game.clone(),
                dqn_human_norm,
                gorila_human_norm,
                gorila_dqn_norm,
                flags,
            }
        })
        .collect()
}

/// Parse the raw score CSV: header `game,random,human,dqn,gorila`.
pub fn parse_raw_scores(text: &str) -> Result<Vec<RawScoreRow>, ReportError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('#')
    });
    let (_, header) = lines
        .next()
        .ok_or_else(|| ReportError::Schema("empty file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols != ["game", "random", "human", "dqn", "gorila"] {
        return Err(ReportError::Schema(format!(
            "expected header 'game,random,human,dqn,gorila', got '{header}'"
        )));
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(ReportError::Schema(format!(
                "line {}: expected 5 fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let num = |i: usize| -> Result<f64, ReportError> {
            fields[i].parse().map_err(|_| {
                ReportError::Schema(format!(
                    "line {}: '{}' is not a number",
                    lineno + 1,
                    fields[i]
                ))
            })
        };
        rows.push(RawScoreRow {
            game: fields[0].to_string(),
            random: num(1)?,
            human: num(2)?,
            dqn: num(3)?,
            gorila: num(4)?,
        });
    }
    if rows.is_empty() {
        return Err(ReportError::Schema("no data rows".into()));
    }
    Ok(rows)
}

pub fn read_raw_scores(path: &Path) -> Result<Vec<RawScoreRow>, ReportError> {
    let mut text = String::new();
    std::io::BufReader::new(std::fs::File::open(path)?).read_to_string(&mut text)?;
    parse_raw_scores(&text)
}

/// Write the normalized table as CSV; undefined entries stay empty and
/// flags are semicolon-joined in the last column.
pub fn write_report<W: Write>(w: &mut W, rows: &[ReportRow]) -> Result<(), ReportError> {
    writeln!(w, "game,dqn_human_norm,gorila_human_norm,gorila_dqn_norm,flags")?;
    for r in rows {
        let cell = |v: &Option<f64>| match v {
            Some(x) => format!("{x:.2}"),
            None => String::new(),
        };
        let flags: Vec<&str> = r.flags.iter().map(|f| f.as_str()).collect();
        writeln!(
            w,
            "{},{},{},{},{}",
            r.game,
            cell(&r.dqn_human_norm),
            cell(&r.gorila_human_norm),
            cell(&r.gorila_dqn_norm),
            flags.join(";")
        )?;
    }
    Ok(())
}

use std::io::Read;
