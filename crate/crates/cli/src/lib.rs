//! Experiment runner and data plumbing for the `msa` command-line tool.

pub mod config;
pub mod estimate;
pub mod output;
pub mod pipeline;

use anyhow::{anyhow, Result};

/// Parses `j->k`.
pub fn parse_transition(text: &str) -> Result<(usize, usize)> {
    let (a, b) = text
        .split_once("->")
        .ok_or_else(|| anyhow!("transition {text:?} is not of the form j->k"))?;
    Ok((a.trim().parse()?, b.trim().parse()?))
}

/// Parses a comma-separated list of times.
pub fn parse_times(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| anyhow!("bad time {v:?}")))
        .collect()
}
