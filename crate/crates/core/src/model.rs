//! Encoder, heads, parameters and vocabulary bundled together, with the
//! on-disk model directory format.

use std::path::Path;

use numcore::{Checkpoint, ParamStore, Tape, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{write_atomic, Procedure};
use crate::encoder::{Encoder, EncoderConfig, Mode};
use crate::error::{Result, TslmError};
use crate::heads::{GoldStep, Heads};
use crate::inference::CandidateSpans;
use crate::input::{build_query, QueryLayout, TimestampedInput};
use crate::tokenizer::{tokenize, Vocab};
use crate::types::Location;

pub const PARAMS_FILE: &str = "params.json";
pub const VOCAB_FILE: &str = "vocab.json";
pub const CONFIG_FILE: &str = "encoder.json";

#[derive(Debug, Clone, Copy)]
pub struct StepOutputs {
    pub status: Var,
    pub start: Var,
    pub end: Var,
}

#[derive(Debug, Clone)]
pub struct TslmModel {
    pub encoder: Encoder,
    pub heads: Heads,
    pub store: ParamStore,
    pub vocab: Vocab,
}

/// Vocabulary over every paragraph token, entity name and the question words.
pub fn build_vocab(procs: &[Procedure]) -> Vocab {
    let question = tokenize("where is ?");
    let mut tokens: Vec<String> = question;
    for p in procs {
        tokens.extend(p.sentences.iter().flatten().cloned());
        for e in &p.entities {
            tokens.extend(tokenize(crate::input::question_entity(e)));
        }
    }
    Vocab::build(tokens.iter())
}

impl TslmModel {
    pub fn new(mut config: EncoderConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        config.vocab_size = vocab.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(config, &mut store, &mut rng)?;
        let heads = Heads::new(encoder.config.d_model, &mut store, &mut rng)?;
        Ok(TslmModel { encoder, heads, store, vocab })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.encoder.config
    }

    pub fn forward(&self, tape: &mut Tape, input: &TimestampedInput, mode: &mut Mode) -> Result<StepOutputs> {
        let x = self.encoder.embed(tape, &self.store, input)?;
        let out = self.encoder.encode(tape, &self.store, x, mode)?;
        let status = self.heads.status(tape, &self.store, &out)?;
        let (start, end) = self.heads.span(tape, &self.store, &out)?;
        Ok(StepOutputs { status, start, end })
    }

    /// Zeroes the timestamp table and excludes it from updates.
    pub fn freeze_zero_timestamps(&mut self) {
        let t = self.store.get_mut(self.encoder.timestamp_embedding);
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        t.zero_grad();
        t.set_requires_grad(false);
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| TslmError::io(dir, e))?;
        write_atomic(&dir.join(CONFIG_FILE), serde_json::to_string_pretty(&self.encoder.config)?.as_bytes())?;
        self.vocab.save(&dir.join(VOCAB_FILE))?;
        Checkpoint::from_store(&self.store).save(&dir.join(PARAMS_FILE))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(CONFIG_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| TslmError::io(&path, e))?;
        let config: EncoderConfig = serde_json::from_str(&text)?;
        let vocab = Vocab::load(&dir.join(VOCAB_FILE))?;
        let ckpt = Checkpoint::load(&dir.join(PARAMS_FILE))?;
        let rows = ckpt
            .params
            .get("encoder.token_embedding")
            .and_then(|e| e.shape.first().copied())
            .ok_or_else(|| TslmError::Config("checkpoint has no token embedding".into()))?;
        if rows != vocab.len() || config.vocab_size != vocab.len() {
            return Err(TslmError::VocabMismatch { vocab: vocab.len(), embedding_rows: rows });
        }
        let mut model = TslmModel::new(config, vocab, 0)?;
        ckpt.apply_to(&mut model.store)?;
        Ok(model)
    }
}

/// A query layout with its gold labels and candidate spans.
#[derive(Debug, Clone)]
pub struct PreparedEntity {
    pub entity: String,
    pub layout: QueryLayout,
    pub candidates: CandidateSpans,
    /// One entry per state `0..=n`.
    pub gold: Vec<GoldStep>,
    pub gold_locations: Vec<Location>,
}

#[derive(Debug, Clone)]
pub struct PreparedProcedure {
    pub id: String,
    pub n_steps: usize,
    pub entities: Vec<PreparedEntity>,
}

impl PreparedProcedure {
    pub fn queries(&self) -> usize {
        self.entities.len() * (self.n_steps + 1)
    }
}

/// Builds layouts and gold targets once. Known locations resolve to their
/// first verbatim occurrence; unresolved ones keep `span: None`.
pub fn prepare(p: &Procedure, vocab: &Vocab, max_len: usize, np_filter: bool) -> Result<PreparedProcedure> {
    let mut entities = Vec::with_capacity(p.entities.len());
    for (entity, timeline) in p.entities.iter().zip(&p.grid) {
        let layout = build_query(entity, &p.sentences, vocab, max_len)?;
        let candidates = if np_filter {
            CandidateSpans::from_paragraph(&layout, &p.candidate_spans)?
        } else {
            CandidateSpans::all_spans(&layout)
        };
        let gold = timeline
            .iter()
            .map(|loc| GoldStep {
                status: loc.status(),
                span: loc.text().and_then(|t| p.find_span(t)).and_then(|(s, e)| layout.query_span(s, e)),
            })
            .collect();
        entities.push(PreparedEntity {
            entity: entity.clone(),
            layout,
            candidates,
            gold,
            gold_locations: timeline.clone(),
        });
    }
    Ok(PreparedProcedure { id: p.id.clone(), n_steps: p.n_steps(), entities })
}

pub fn prepare_all(procs: &[Procedure], vocab: &Vocab, max_len: usize, np_filter: bool) -> Result<Vec<PreparedProcedure>> {
    procs.iter().map(|p| prepare(p, vocab, max_len, np_filter)).collect()
}
