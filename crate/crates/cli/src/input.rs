use std::path::Path;

use anyhow::{Context, Result};

use chbell::counts::parse_blocks_csv;
use chbell::sim::{expand_schedule, parse_settings};
use chbell::timetag::{parse_timetags, TimetagFormat};
use chbell::{BlockRecord, CountsTable, SettingPair, TimetagStream};

use crate::InputKind;

pub enum Loaded {
    Counts(CountsTable),
    Blocks(Vec<BlockRecord>),
    Timetags(TimetagStream),
}

pub fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// Counts JSON by `.json`, binary timetags by `.bin`, and CSV by field count.
fn guess_kind(path: &Path, bytes: &[u8]) -> InputKind {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") => InputKind::Counts,
        Some("bin") => InputKind::TimetagsBinary,
        _ => {
            let text = String::from_utf8_lossy(&bytes[..bytes.len().min(4096)]);
            let first = text
                .lines()
                .map(str::trim)
                .find(|l| !l.is_empty())
                .unwrap_or("");
            match first.split(',').count() {
                2 => InputKind::TimetagsCsv,
                5 => InputKind::Blocks,
                _ if first.starts_with('{') => InputKind::Counts,
                _ => InputKind::TimetagsBinary,
            }
        }
    }
}

pub fn load(path: &Path, kind: Option<InputKind>) -> Result<Loaded> {
    let bytes = read(path)?;
    let kind = kind.unwrap_or_else(|| guess_kind(path, &bytes));
    let utf8 = || {
        String::from_utf8(bytes.clone()).with_context(|| format!("{} is not UTF-8", path.display()))
    };
    Ok(match kind {
        InputKind::Counts => Loaded::Counts(CountsTable::from_json(&utf8()?)?),
        InputKind::Blocks => Loaded::Blocks(parse_blocks_csv(&utf8()?)?),
        InputKind::TimetagsCsv => Loaded::Timetags(parse_timetags(&bytes, TimetagFormat::Csv)?),
        InputKind::TimetagsBinary => {
            Loaded::Timetags(parse_timetags(&bytes, TimetagFormat::Binary)?)
        }
    })
}

/// Counts table from counts JSON or block CSV.
pub fn load_table(path: &Path) -> Result<CountsTable> {
    match load(path, None)? {
        Loaded::Counts(t) => Ok(t),
        Loaded::Blocks(b) => Ok(CountsTable::from_blocks(&b)?),
        Loaded::Timetags(_) => anyhow::bail!(crate::commands::Invalid(format!(
            "{} holds timetags; run `analyze` first and pass the counts JSON",
            path.display()
        ))),
    }
}

/// Per-trial settings from a settings file with `trials_per_line` trials per line.
pub fn per_trial_settings(path: &Path, trials_per_line: u64) -> Result<Vec<SettingPair>> {
    let lines = parse_settings(&read_text(path)?)?;
    Ok(expand_schedule(&lines, trials_per_line))
}
