//! Per-entity question input and its step-dependent timestamping.
//!
//! One layout is built per entity:
//! `[CLS] where is <entity> ? [SEP] s1 [SEP] s2 [SEP] ... sn [SEP]`.
//! Timestamping a layout for a step only attaches a timestamp id to every
//! token; token and position ids never depend on the step.

use crate::error::{Result, TslmError};
use crate::tokenizer::{tokenize, Vocab, CLS, RESERVED, SEP};

pub const TS_QUESTION: usize = 0;
pub const TS_PAST: usize = 1;
pub const TS_CURRENT: usize = 2;
pub const TS_FUTURE: usize = 3;
pub const TIMESTAMP_VOCAB: usize = 4;

/// The name used in the question: the first of `;`-separated aliases.
pub fn question_entity(entity: &str) -> &str {
    entity.split(';').next().unwrap_or("").trim()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryLayout {
    pub tokens: Vec<String>,
    pub token_ids: Vec<usize>,
    /// 0 for the question region, `j` for tokens of sentence `j` and the
    /// separator that closes it.
    pub sentence_index: Vec<usize>,
    pub position_ids: Vec<usize>,
    /// Query position of every paragraph token (paragraph-global index).
    pub paragraph_positions: Vec<usize>,
    pub n_sentences: usize,
}

impl QueryLayout {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Number of tokens in the question region, including `[CLS]` and its `[SEP]`.
    pub fn question_len(&self) -> usize {
        self.sentence_index.iter().take_while(|&&s| s == 0).count()
    }

    /// Maps an inclusive paragraph-global span to query positions. Spans that
    /// cross a sentence boundary have no contiguous image and map to `None`.
    pub fn query_span(&self, start: usize, end: usize) -> Option<(usize, usize)> {
        if start > end {
            return None;
        }
        let s = *self.paragraph_positions.get(start)?;
        let e = *self.paragraph_positions.get(end)?;
        (e - s == end - start).then_some((s, e))
    }

    /// Surface text of an inclusive query span.
    pub fn span_text(&self, start: usize, end: usize) -> String {
        self.tokens[start..=end].join(" ")
    }

    pub fn is_separator(&self, pos: usize) -> bool {
        self.token_ids[pos] == SEP && self.tokens[pos] == RESERVED[SEP]
    }
}

pub fn build_query(
    entity: &str,
    sentences: &[Vec<String>],
    vocab: &Vocab,
    max_len: usize,
) -> Result<QueryLayout> {
    if sentences.is_empty() {
        return Err(TslmError::EmptyProcedure);
    }
    let entity_tokens = tokenize(question_entity(entity));
    if entity_tokens.is_empty() {
        return Err(TslmError::EmptyEntity);
    }

    let mut tokens: Vec<String> = Vec::new();
    let mut sentence_index = Vec::new();
    tokens.push(RESERVED[CLS].to_string());
    tokens.push("where".into());
    tokens.push("is".into());
    tokens.extend(entity_tokens);
    tokens.push("?".into());
    tokens.push(RESERVED[SEP].to_string());
    sentence_index.resize(tokens.len(), 0);

    let mut paragraph_positions = Vec::new();
    for (j, sentence) in sentences.iter().enumerate() {
        for tok in sentence {
            paragraph_positions.push(tokens.len());
            tokens.push(tok.clone());
            sentence_index.push(j + 1);
        }
        tokens.push(RESERVED[SEP].to_string());
        sentence_index.push(j + 1);
    }

    if tokens.len() > max_len {
        return Err(TslmError::SequenceTooLong { len: tokens.len(), max: max_len });
    }

    let token_ids = tokens
        .iter()
        .enumerate()
        .map(|(i, t)| match t.as_str() {
            "[CLS]" if i == 0 => CLS,
            "[SEP]" => SEP,
            _ => vocab.id(t),
        })
        .collect();
    let position_ids = (0..tokens.len()).collect();
    Ok(QueryLayout {
        tokens,
        token_ids,
        sentence_index,
        position_ids,
        paragraph_positions,
        n_sentences: sentences.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimestampedInput<'a> {
    pub layout: &'a QueryLayout,
    pub timestamp_ids: Vec<usize>,
    pub step: usize,
}

impl TimestampedInput<'_> {
    pub fn len(&self) -> usize {
        self.layout.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layout.is_empty()
    }
}

fn timestamp_id(sentence: usize, step: usize) -> usize {
    use std::cmp::Ordering::*;
    if sentence == 0 {
        return TS_QUESTION;
    }
    if step == 0 {
        // state before the process: the whole paragraph is "current"
        return TS_CURRENT;
    }
    match sentence.cmp(&step) {
        Less => TS_PAST,
        Equal => TS_CURRENT,
        Greater => TS_FUTURE,
    }
}

pub fn timestamp(layout: &QueryLayout, step: usize) -> Result<TimestampedInput<'_>> {
    if step > layout.n_sentences {
        return Err(TslmError::StepOutOfRange { step, n_steps: layout.n_sentences });
    }
    let timestamp_ids = layout
        .sentence_index
        .iter()
        .map(|&s| timestamp_id(s, step))
        .collect();
    Ok(TimestampedInput { layout, timestamp_ids, step })
}
