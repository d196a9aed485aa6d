//! Sentence-level (Cat1-3), document-level (inputs, outputs, conversions,
//! moves) and location-change scoring.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Result, TslmError};
use crate::state_table::{build_table, derive_action, Action, ProcessGrid, StateChangeRow};
use crate::types::Location;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Create,
    Destroy,
    Move,
}

impl EventKind {
    pub const ALL: [EventKind; 3] = [EventKind::Create, EventKind::Destroy, EventKind::Move];
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventRecord {
    pub process_id: String,
    pub entity: String,
    pub kind: EventKind,
    pub step: usize,
    pub from: Location,
    pub to: Location,
}

/// One event per non-`None` row. Rows must chain per (process, entity) and
/// carry the action their locations imply.
pub fn extract_events(rows: &[StateChangeRow]) -> Result<Vec<EventRecord>> {
    let mut last: HashMap<(&str, &str), (usize, &Location)> = HashMap::new();
    let mut sorted: Vec<&StateChangeRow> = rows.iter().collect();
    sorted.sort_by(|a, b| (&a.process_id, &a.entity, a.step).cmp(&(&b.process_id, &b.entity, b.step)));
    let mut events = Vec::new();
    for r in sorted {
        let err = |message: String| TslmError::Chaining {
            process: r.process_id.clone(),
            entity: r.entity.clone(),
            step: r.step,
            message,
        };
        let key = (r.process_id.as_str(), r.entity.as_str());
        let expected_step = last.get(&key).map_or(1, |(s, _)| s + 1);
        if r.step != expected_step {
            return Err(err(format!("expected step {expected_step}")));
        }
        if let Some((_, prev_after)) = last.get(&key) {
            if *prev_after != &r.before {
                return Err(err(format!("before `{}` does not match previous after `{prev_after}`", r.before)));
            }
        }
        let implied = derive_action(&r.before, &r.after);
        if implied != r.action {
            return Err(err(format!("action {} contradicts {} -> {} ({implied})", r.action, r.before, r.after)));
        }
        last.insert(key, (r.step, &r.after));
        let kind = match r.action {
            Action::None => continue,
            Action::Create => EventKind::Create,
            Action::Destroy => EventKind::Destroy,
            Action::Move => EventKind::Move,
        };
        events.push(EventRecord {
            process_id: r.process_id.clone(),
            entity: r.entity.clone(),
            kind,
            step: r.step,
            from: r.before.clone(),
            to: r.after.clone(),
        });
    }
    Ok(events)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceScores {
    pub cat1: f64,
    pub cat2: f64,
    pub cat3: f64,
    pub macro_avg: f64,
    pub micro_avg: f64,
    /// Question counts behind cat1, cat2 and cat3.
    pub counts: [usize; 3],
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

type EventKey = (String, String, EventKind);
type EventDetail = BTreeSet<(usize, Location, Location)>;

fn group(events: &[EventRecord]) -> BTreeMap<EventKey, EventDetail> {
    let mut out: BTreeMap<EventKey, EventDetail> = BTreeMap::new();
    for e in events {
        out.entry((e.process_id.clone(), e.entity.clone(), e.kind))
            .or_default()
            .insert((e.step, e.from.clone(), e.to.clone()));
    }
    out
}

/// `participants` are (process, entity) pairs whose three event kinds are
/// asked about even when neither side reports an event for them.
///
/// Cat1 asks whether each kind occurs; Cat2 and Cat3 are asked only where
/// both sides say it does, comparing step sets and (step, from, to) sets.
pub fn sentence_level(
    pred: &[EventRecord],
    gold: &[EventRecord],
    participants: &[(String, String)],
) -> SentenceScores {
    let p = group(pred);
    let g = group(gold);
    let mut universe: BTreeSet<EventKey> = p.keys().chain(g.keys()).cloned().collect();
    for (proc_id, entity) in participants {
        for kind in EventKind::ALL {
            universe.insert((proc_id.clone(), entity.clone(), kind));
        }
    }
    let (mut c1, mut c2, mut c3, mut n2) = (0, 0, 0, 0);
    for key in &universe {
        let (pk, gk) = (p.get(key), g.get(key));
        if pk.is_some() == gk.is_some() {
            c1 += 1;
        }
        if let (Some(pk), Some(gk)) = (pk, gk) {
            n2 += 1;
            let steps = |s: &EventDetail| s.iter().map(|t| t.0).collect::<BTreeSet<_>>();
            if steps(pk) == steps(gk) {
                c2 += 1;
            }
            if pk == gk {
                c3 += 1;
            }
        }
    }
    let n1 = universe.len();
    let (cat1, cat2, cat3) = (ratio(c1, n1), ratio(c2, n2), ratio(c3, n2));
    SentenceScores {
        cat1,
        cat2,
        cat3,
        macro_avg: (cat1 + cat2 + cat3) / 3.0,
        micro_avg: ratio(c1 + c2 + c3, n1 + 2 * n2),
        counts: [n1, n2, n2],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn new(precision: f64, recall: f64) -> Self {
        Prf { precision, recall, f1: harmonic(precision, recall) }
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentScores {
    pub inputs: Prf,
    pub outputs: Prf,
    pub conversions: Prf,
    pub moves: Prf,
    pub overall: Prf,
}

/// Answer sets for the four document-level questions of one process.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DocumentAnswers {
    pub inputs: BTreeSet<String>,
    pub outputs: BTreeSet<String>,
    /// (step, destroyed entity, created entity, location)
    pub conversions: BTreeSet<(usize, String, String, Location)>,
    /// (entity, step, before, after)
    pub moves: BTreeSet<(String, usize, Location, Location)>,
}

pub fn document_answers(grid: &ProcessGrid) -> DocumentAnswers {
    let mut a = DocumentAnswers::default();
    for (entity, tl) in grid.entities.iter().zip(&grid.timelines) {
        let (Some(first), Some(last)) = (tl.first(), tl.last()) else { continue };
        if first.exists() && !last.exists() {
            a.inputs.insert(entity.clone());
        }
        if !first.exists() && last.exists() {
            a.outputs.insert(entity.clone());
        }
        for i in 1..tl.len() {
            if derive_action(&tl[i - 1], &tl[i]) == Action::Move {
                a.moves.insert((entity.clone(), i, tl[i - 1].clone(), tl[i].clone()));
            }
        }
    }
    let n = grid.n_steps();
    for i in 1..=n {
        for (d, dtl) in grid.entities.iter().zip(&grid.timelines) {
            if derive_action(&dtl[i - 1], &dtl[i]) != Action::Destroy {
                continue;
            }
            for (c, ctl) in grid.entities.iter().zip(&grid.timelines) {
                if derive_action(&ctl[i - 1], &ctl[i]) == Action::Create && ctl[i] == dtl[i - 1] {
                    a.conversions.insert((i, d.clone(), c.clone(), ctl[i].clone()));
                }
            }
        }
    }
    a
}

fn set_pr<T: Ord>(pred: &BTreeSet<T>, gold: &BTreeSet<T>) -> (f64, f64) {
    let hit = pred.intersection(gold).count();
    (ratio(hit, pred.len()), ratio(hit, gold.len()))
}

fn check_alignment(pred: &[ProcessGrid], gold: &[ProcessGrid]) -> Result<()> {
    let p: BTreeSet<&str> = pred.iter().map(|g| g.process_id.as_str()).collect();
    let g: BTreeSet<&str> = gold.iter().map(|g| g.process_id.as_str()).collect();
    if p != g {
        return Err(TslmError::ProcessMismatch {
            missing_in_pred: g.difference(&p).map(|s| s.to_string()).collect(),
            missing_in_gold: p.difference(&g).map(|s| s.to_string()).collect(),
        });
    }
    Ok(())
}

fn by_id(grids: &[ProcessGrid]) -> BTreeMap<&str, &ProcessGrid> {
    grids.iter().map(|g| (g.process_id.as_str(), g)).collect()
}

/// Per-process set precision and recall, macro-averaged over processes;
/// overall precision and recall are means over the four criteria.
pub fn document_level(pred: &[ProcessGrid], gold: &[ProcessGrid]) -> Result<DocumentScores> {
    check_alignment(pred, gold)?;
    let pred = by_id(pred);
    let mut sums = [(0.0, 0.0); 4];
    for (id, g) in by_id(gold) {
        let ga = document_answers(g);
        let pa = document_answers(pred[id]);
        let scores = [
            set_pr(&pa.inputs, &ga.inputs),
            set_pr(&pa.outputs, &ga.outputs),
            set_pr(&pa.conversions, &ga.conversions),
            set_pr(&pa.moves, &ga.moves),
        ];
        for (s, (p, r)) in sums.iter_mut().zip(scores) {
            s.0 += p;
            s.1 += r;
        }
    }
    let n = pred.len().max(1) as f64;
    let crit: Vec<Prf> = if pred.is_empty() {
        vec![Prf::new(1.0, 1.0); 4]
    } else {
        sums.iter().map(|(p, r)| Prf::new(p / n, r / n)).collect()
    };
    let p = crit.iter().map(|c| c.precision).sum::<f64>() / 4.0;
    let r = crit.iter().map(|c| c.recall).sum::<f64>() / 4.0;
    Ok(DocumentScores {
        inputs: crit[0],
        outputs: crit[1],
        conversions: crit[2],
        moves: crit[3],
        overall: Prf::new(p, r),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationChangeScore {
    pub accuracy: f64,
    pub change_steps: usize,
    pub correct: usize,
}

/// Accuracy over gold steps whose value differs from the previous step.
pub fn location_change_accuracy(pred: &[ProcessGrid], gold: &[ProcessGrid]) -> Result<LocationChangeScore> {
    check_alignment(pred, gold)?;
    let pred = by_id(pred);
    let (mut total, mut correct) = (0, 0);
    for (id, g) in by_id(gold) {
        let p = pred[id];
        for (entity, gtl) in g.entities.iter().zip(&g.timelines) {
            let mismatch = || TslmError::EntityMismatch { process: id.to_string(), entity: entity.clone() };
            let ptl = p.timeline(entity).ok_or_else(mismatch)?;
            if ptl.len() != gtl.len() {
                return Err(mismatch());
            }
            for i in 1..gtl.len() {
                if gtl[i] != gtl[i - 1] {
                    total += 1;
                    if ptl[i] == gtl[i] {
                        correct += 1;
                    }
                }
            }
        }
    }
    if total == 0 {
        log::warn!("gold timelines contain no location changes; reporting accuracy 1.0");
    }
    Ok(LocationChangeScore { accuracy: ratio(correct, total), change_steps: total, correct })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sentence: SentenceScores,
    pub document: DocumentScores,
    pub location_change: LocationChangeScore,
}

fn events_of(grids: &[ProcessGrid]) -> Result<Vec<EventRecord>> {
    let mut rows = Vec::new();
    for g in grids {
        rows.extend(build_table(g, g.n_steps())?);
    }
    extract_events(&rows)
}

/// Every metric, with all gold entities as sentence-level participants.
pub fn evaluate(pred: &[ProcessGrid], gold: &[ProcessGrid]) -> Result<MetricsReport> {
    let document = document_level(pred, gold)?;
    let location_change = location_change_accuracy(pred, gold)?;
    let participants: Vec<(String, String)> = gold
        .iter()
        .flat_map(|g| g.entities.iter().map(|e| (g.process_id.clone(), e.clone())))
        .collect();
    let sentence = sentence_level(&events_of(pred)?, &events_of(gold)?, &participants);
    Ok(MetricsReport { sentence, document, location_change })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Sentence,
    Document,
    Npn,
}

impl std::str::FromStr for EvalMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sentence" => Ok(EvalMode::Sentence),
            "document" => Ok(EvalMode::Document),
            "npn" => Ok(EvalMode::Npn),
            _ => Err(format!("unknown evaluation mode `{s}`")),
        }
    }
}

/// Plain-text table for one evaluation mode, values in percent.
pub fn render_table(report: &MetricsReport, mode: EvalMode) -> String {
    let pct = |v: f64| format!("{:.2}", 100.0 * v);
    match mode {
        EvalMode::Sentence => {
            let s = &report.sentence;
            format!(
                "Cat1\tCat2\tCat3\tMacro-avg\tMicro-avg\n{}\t{}\t{}\t{}\t{}\n",
                pct(s.cat1),
                pct(s.cat2),
                pct(s.cat3),
                pct(s.macro_avg),
                pct(s.micro_avg)
            )
        }
        EvalMode::Document => {
            let d = &report.document;
            let mut out = String::from("Criterion\tP\tR\tF1\n");
            for (name, prf) in [
                ("Inputs", d.inputs),
                ("Outputs", d.outputs),
                ("Conversions", d.conversions),
                ("Moves", d.moves),
                ("Overall", d.overall),
            ] {
                out.push_str(&format!("{name}\t{}\t{}\t{}\n", pct(prf.precision), pct(prf.recall), pct(prf.f1)));
            }
            out
        }
        EvalMode::Npn => {
            let l = &report.location_change;
            format!("Accuracy\tCorrect\tChanges\n{}\t{}\t{}\n", pct(l.accuracy), l.correct, l.change_steps)
        }
    }
}
