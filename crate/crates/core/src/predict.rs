//! Decoding a trained model into state grids and state-change rows.

use numcore::Tape;

use crate::encoder::Mode;
use crate::error::Result;
use crate::heads::{SpanPrediction, StatusPrediction};
use crate::inference::{decode_step, repair_timeline, rule_violations, StepState};
use crate::input::timestamp;
use crate::model::{PreparedProcedure, TslmModel};
use crate::state_table::{build_table, ProcessGrid, StateChangeRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PredictOptions {
    /// Repair each timeline with the consistency rules.
    pub constraints: bool,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions { constraints: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub grids: Vec<ProcessGrid>,
    pub rows: Vec<StateChangeRow>,
    /// Rule-breaking transitions in the raw (unrepaired) timelines.
    pub rule_violations: usize,
    /// Known-location steps that had no candidate span and became `?`.
    pub fallbacks: usize,
}

/// Raw decoded timeline of one entity, states `0..=n`.
pub fn decode_entity(
    model: &TslmModel,
    proc: &PreparedProcedure,
    entity: usize,
) -> Result<(Vec<StepState>, usize)> {
    let pe = &proc.entities[entity];
    let mut states = Vec::with_capacity(proc.n_steps + 1);
    let mut fallbacks = 0;
    for step in 0..=proc.n_steps {
        let mut tape = Tape::new();
        let input = timestamp(&pe.layout, step)?;
        let out = model.forward(&mut tape, &input, &mut Mode::Eval)?;
        let status = StatusPrediction::from_tape(&tape, out.status);
        let span = SpanPrediction::from_tape(&tape, out.start, out.end);
        let d = decode_step(&status, &span, &pe.candidates, &pe.layout);
        fallbacks += d.fell_back as usize;
        states.push(d.state);
    }
    Ok((states, fallbacks))
}

pub fn predict(model: &TslmModel, set: &[PreparedProcedure], options: PredictOptions) -> Result<Predictions> {
    let mut grids = Vec::with_capacity(set.len());
    let mut rows = Vec::new();
    let mut violations = 0;
    let mut fallbacks = 0;
    for proc in set {
        let mut grid = ProcessGrid { process_id: proc.id.clone(), entities: vec![], timelines: vec![] };
        for (i, pe) in proc.entities.iter().enumerate() {
            let (raw, fb) = decode_entity(model, proc, i)?;
            fallbacks += fb;
            violations += rule_violations(&raw);
            let states = if options.constraints { repair_timeline(&raw) } else { raw };
            grid.entities.push(pe.entity.clone());
            grid.timelines.push(states.into_iter().map(|s| s.location).collect());
        }
        rows.extend(build_table(&grid, proc.n_steps)?);
        grids.push(grid);
    }
    if fallbacks > 0 {
        log::warn!("{fallbacks} known-location predictions had no candidate span and were emitted as `?`");
    }
    Ok(Predictions { grids, rows, rule_violations: violations, fallbacks })
}
