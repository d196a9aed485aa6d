//! Decoding per-step predictions and repairing timelines with the two
//! consistency rules: an entity is created at most once and destroyed at most
//! once, and nothing is created after it has been destroyed.

use crate::error::{Result, TslmError};
use crate::heads::{SpanPrediction, StatusPrediction};
use crate::input::QueryLayout;
use crate::types::{Location, StatusClass};

/// Allowed answer spans for one query, in query positions, inclusive.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CandidateSpans {
    spans: Vec<(usize, usize)>,
}

impl CandidateSpans {
    /// Validates query-position spans: each must lie inside a single sentence
    /// and cover no question or separator token. Output is sorted and deduped.
    pub fn new(layout: &QueryLayout, spans: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut out = Vec::new();
        for (s, e) in spans {
            if s > e || e >= layout.len() {
                return Err(TslmError::Config(format!("candidate span ({s}, {e}) is out of range")));
            }
            let sentence = layout.sentence_index[s];
            let ok = sentence != 0
                && (s..=e).all(|p| layout.sentence_index[p] == sentence && !layout.is_separator(p));
            if !ok {
                return Err(TslmError::Config(format!(
                    "candidate span ({s}, {e}) leaves the paragraph sentence it starts in"
                )));
            }
            out.push((s, e));
        }
        out.sort_unstable();
        out.dedup();
        Ok(CandidateSpans { spans: out })
    }

    /// Maps paragraph-global spans (as stored in datasets) into the query.
    pub fn from_paragraph(layout: &QueryLayout, spans: &[(usize, usize)]) -> Result<Self> {
        let mapped = spans
            .iter()
            .map(|&(s, e)| {
                layout.query_span(s, e).ok_or_else(|| {
                    TslmError::Config(format!("paragraph span ({s}, {e}) crosses a sentence boundary"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layout, mapped)
    }

    /// Every contiguous span inside each sentence: the unfiltered answer space.
    pub fn all_spans(layout: &QueryLayout) -> Self {
        let mut spans = Vec::new();
        let n = layout.len();
        for s in 0..n {
            if layout.sentence_index[s] == 0 || layout.is_separator(s) {
                continue;
            }
            let mut e = s;
            while e < n && layout.sentence_index[e] == layout.sentence_index[s] && !layout.is_separator(e) {
                spans.push((s, e));
                e += 1;
            }
        }
        CandidateSpans { spans }
    }

    pub fn spans(&self) -> &[(usize, usize)] {
        &self.spans
    }

    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    pub fn contains(&self, span: (usize, usize)) -> bool {
        self.spans.binary_search(&span).is_ok()
    }
}

/// A decoded step: the location plus, when known, the span it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepState {
    pub location: Location,
    pub span: Option<(usize, usize)>,
}

impl StepState {
    pub fn absent() -> Self {
        StepState { location: Location::Absent, span: None }
    }

    pub fn unknown() -> Self {
        StepState { location: Location::Unknown, span: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub state: StepState,
    /// Known location was predicted but there was no candidate to choose.
    pub fell_back: bool,
}

/// Highest `start[s] * end[e]` over candidates. Candidates are sorted by
/// start then end, so keeping the first maximum breaks ties by earliest start
/// and then shortest span.
pub fn best_span(span: &SpanPrediction, candidates: &CandidateSpans) -> Option<(usize, usize)> {
    let mut best: Option<((usize, usize), f64)> = None;
    for &(s, e) in candidates.spans() {
        let score = span.start[s] * span.end[e];
        if best.is_none_or(|(_, b)| score > b) {
            best = Some(((s, e), score));
        }
    }
    best.map(|(sp, _)| sp)
}

pub fn decode_step(
    status: &StatusPrediction,
    span: &SpanPrediction,
    candidates: &CandidateSpans,
    layout: &QueryLayout,
) -> Decoded {
    match status.argmax() {
        StatusClass::NonExistent => Decoded { state: StepState::absent(), fell_back: false },
        StatusClass::UnknownLocation => Decoded { state: StepState::unknown(), fell_back: false },
        StatusClass::KnownLocation => match best_span(span, candidates) {
            Some((s, e)) => Decoded {
                state: StepState {
                    location: Location::known(&layout.span_text(s, e)),
                    span: Some((s, e)),
                },
                fell_back: false,
            },
            None => Decoded { state: StepState::unknown(), fell_back: true },
        },
    }
}

/// Anything that can be placed on an entity timeline.
pub trait Existence {
    fn exists(&self) -> bool;
}

impl Existence for Location {
    fn exists(&self) -> bool {
        Location::exists(self)
    }
}

impl Existence for StepState {
    fn exists(&self) -> bool {
        self.location.exists()
    }
}

#[derive(Default)]
struct RuleState {
    created: bool,
    destroyed: bool,
}

impl RuleState {
    /// Whether moving from `prev` to `cur` breaks a rule, given the history.
    fn violates(&self, prev: bool, cur: bool) -> bool {
        match (prev, cur) {
            (false, true) => self.created || self.destroyed,
            (true, false) => self.destroyed,
            _ => false,
        }
    }

    fn record(&mut self, prev: bool, cur: bool) {
        match (prev, cur) {
            (false, true) => self.created = true,
            (true, false) => self.destroyed = true,
            _ => {}
        }
    }
}

/// Number of transitions that break a rule, scanning from step 1.
pub fn rule_violations<T: Existence>(states: &[T]) -> usize {
    let mut rules = RuleState::default();
    let mut count = 0;
    for w in states.windows(2) {
        let (prev, cur) = (w[0].exists(), w[1].exists());
        if rules.violates(prev, cur) {
            count += 1;
        }
        rules.record(prev, cur);
    }
    count
}

pub fn satisfies_rules<T: Existence>(states: &[T]) -> bool {
    rule_violations(states) == 0
}

/// Scans steps in order; a step whose transition from the (already repaired)
/// previous step would break a rule takes the previous step's state instead.
pub fn repair_timeline<T: Existence + Clone>(states: &[T]) -> Vec<T> {
    let mut out: Vec<T> = Vec::with_capacity(states.len());
    let mut rules = RuleState::default();
    for cur in states {
        let Some(prev) = out.last() else {
            out.push(cur.clone());
            continue;
        };
        let (p, c) = (prev.exists(), cur.exists());
        if rules.violates(p, c) {
            out.push(prev.clone());
        } else {
            rules.record(p, c);
            out.push(cur.clone());
        }
    }
    out
}
