//! Per-step state-change rows and the predictions TSV format.
//!
//! Each line is `process_id \t step \t entity \t action \t before \t after`,
//! with no header. Locations are lowercase; `-` and `?` are literal.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TslmError};
use crate::types::Location;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    None,
    Create,
    Move,
    Destroy,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::None => "None",
            Action::Create => "Create",
            Action::Move => "Move",
            Action::Destroy => "Destroy",
        })
    }
}

impl FromStr for Action {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Action::None),
            "create" => Ok(Action::Create),
            "move" => Ok(Action::Move),
            "destroy" => Ok(Action::Destroy),
            _ => Err(format!("unknown action `{s}`")),
        }
    }
}

/// Action implied by a (before, after) pair. Any change between two existing
/// values, `?` included, is a move.
pub fn derive_action(before: &Location, after: &Location) -> Action {
    match (before.exists(), after.exists()) {
        (false, true) => Action::Create,
        (true, false) => Action::Destroy,
        _ if before == after => Action::None,
        _ => Action::Move,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateChangeRow {
    pub process_id: String,
    pub step: usize,
    pub entity: String,
    pub action: Action,
    pub before: Location,
    pub after: Location,
}

/// One process's entity timelines, each covering states `0..=n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcessGrid {
    pub process_id: String,
    pub entities: Vec<String>,
    pub timelines: Vec<Vec<Location>>,
}

impl ProcessGrid {
    pub fn n_steps(&self) -> usize {
        self.timelines.first().map_or(0, |t| t.len().saturating_sub(1))
    }

    pub fn timeline(&self, entity: &str) -> Option<&[Location]> {
        let i = self.entities.iter().position(|e| e == entity)?;
        Some(&self.timelines[i])
    }
}

/// Rows for every (entity, step 1..=n), entity-major.
pub fn build_table(grid: &ProcessGrid, n_steps: usize) -> Result<Vec<StateChangeRow>> {
    let mut rows = Vec::with_capacity(grid.entities.len() * n_steps);
    for (entity, timeline) in grid.entities.iter().zip(&grid.timelines) {
        if timeline.len() == n_steps {
            return Err(TslmError::MissingInitialState(entity.clone()));
        }
        if timeline.len() != n_steps + 1 {
            return Err(TslmError::GridColumns {
                process: grid.process_id.clone(),
                entity: entity.clone(),
                expected: n_steps + 1,
                actual: timeline.len(),
            });
        }
        for step in 1..=n_steps {
            let before = timeline[step - 1].clone();
            let after = timeline[step].clone();
            rows.push(StateChangeRow {
                process_id: grid.process_id.clone(),
                step,
                entity: entity.clone(),
                action: derive_action(&before, &after),
                before,
                after,
            });
        }
    }
    Ok(rows)
}

pub fn write_tsv(rows: &[StateChangeRow]) -> String {
    let mut out = String::new();
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            r.process_id, r.step, r.entity, r.action, r.before, r.after
        ));
    }
    out
}

pub fn parse_tsv(text: &str) -> Result<Vec<StateChangeRow>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| TslmError::Tsv { line: line_no, message };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 6 {
            return Err(bad(format!("expected 6 tab-separated columns, found {}", cols.len())));
        }
        let step = cols[1].trim().parse::<usize>().map_err(|e| bad(format!("step `{}`: {e}", cols[1])))?;
        if step == 0 {
            return Err(bad("steps start at 1".into()));
        }
        let action = cols[3].trim().parse::<Action>().map_err(bad)?;
        let cell = |c: &str, what: &str| Location::parse(c).ok_or_else(|| bad(format!("empty {what} location")));
        let before = cell(cols[4], "before")?;
        let after = cell(cols[5], "after")?;
        rows.push(StateChangeRow {
            process_id: cols[0].trim().to_string(),
            step,
            entity: cols[2].trim().to_string(),
            action,
            before,
            after,
        });
    }
    Ok(rows)
}

/// Regroups rows into per-process grids, in any row order. Steps must be
/// exactly `1..=n` for every entity and each row must chain from the last.
pub fn grids_from_rows(rows: &[StateChangeRow]) -> Result<Vec<ProcessGrid>> {
    let mut by_process: BTreeMap<&str, IndexMap<&str, Vec<&StateChangeRow>>> = BTreeMap::new();
    for r in rows {
        by_process.entry(&r.process_id).or_default().entry(&r.entity).or_default().push(r);
    }
    let mut grids = Vec::with_capacity(by_process.len());
    for (process, entities) in by_process {
        let mut grid = ProcessGrid { process_id: process.to_string(), entities: vec![], timelines: vec![] };
        let mut n_steps = None;
        for (entity, mut erows) in entities {
            erows.sort_by_key(|r| r.step);
            let chain_err = |step: usize, message: String| TslmError::Chaining {
                process: process.to_string(),
                entity: entity.to_string(),
                step,
                message,
            };
            let mut timeline = vec![erows[0].before.clone()];
            for (k, r) in erows.iter().enumerate() {
                if r.step != k + 1 {
                    return Err(chain_err(r.step, format!("expected step {}", k + 1)));
                }
                if r.before != timeline[k] {
                    return Err(chain_err(
                        r.step,
                        format!("before `{}` does not match previous after `{}`", r.before, timeline[k]),
                    ));
                }
                timeline.push(r.after.clone());
            }
            match n_steps {
                None => n_steps = Some(erows.len()),
                Some(n) if n != erows.len() => {
                    return Err(TslmError::GridColumns {
                        process: process.to_string(),
                        entity: entity.to_string(),
                        expected: n + 1,
                        actual: erows.len() + 1,
                    })
                }
                _ => {}
            }
            grid.entities.push(entity.to_string());
            grid.timelines.push(timeline);
        }
        grids.push(grid);
    }
    Ok(grids)
}
