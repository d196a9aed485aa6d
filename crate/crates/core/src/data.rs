//! Procedures with gold state grids: the canonical JSON schema, an NPN-style
//! annotation schema, a grid TSV converter and a seeded synthetic generator.

use std::collections::BTreeSet;
use std::path::Path;

use indexmap::IndexMap;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TslmError};
use crate::input::question_entity;
use crate::state_table::ProcessGrid;
use crate::tokenizer::tokenize;
use crate::types::Location;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Procedure {
    pub id: String,
    pub sentences: Vec<Vec<String>>,
    pub entities: Vec<String>,
    /// One timeline per entity, in `entities` order, covering states `0..=n`.
    pub grid: Vec<Vec<Location>>,
    /// Paragraph-global inclusive token spans.
    pub candidate_spans: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputEntityFlag<'a> {
    pub entity: &'a str,
    pub is_input: bool,
}

impl Procedure {
    pub fn n_steps(&self) -> usize {
        self.sentences.len()
    }

    pub fn paragraph_len(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }

    /// Sentence number (0-based) of every paragraph token.
    pub fn token_sentences(&self) -> Vec<usize> {
        self.sentences.iter().enumerate().flat_map(|(j, s)| std::iter::repeat_n(j, s.len())).collect()
    }

    /// First exact occurrence of `phrase` inside a single sentence.
    pub fn find_span(&self, phrase: &str) -> Option<(usize, usize)> {
        self.find_all_spans(phrase).into_iter().next()
    }

    pub fn find_all_spans(&self, phrase: &str) -> Vec<(usize, usize)> {
        let needle = tokenize(phrase);
        let mut out = Vec::new();
        if needle.is_empty() {
            return out;
        }
        let mut offset = 0;
        for sentence in &self.sentences {
            if sentence.len() >= needle.len() {
                for i in 0..=sentence.len() - needle.len() {
                    if sentence[i..i + needle.len()] == needle[..] {
                        out.push((offset + i, offset + i + needle.len() - 1));
                    }
                }
            }
            offset += sentence.len();
        }
        out
    }

    /// Known locations with no verbatim occurrence: (entity, state, text).
    pub fn unaligned_locations(&self) -> Vec<(&str, usize, &str)> {
        let mut out = Vec::new();
        for (entity, timeline) in self.entities.iter().zip(&self.grid) {
            for (k, loc) in timeline.iter().enumerate() {
                if let Location::Known(text) = loc {
                    if self.find_span(text).is_none() {
                        out.push((entity.as_str(), k, text.as_str()));
                    }
                }
            }
        }
        out
    }

    /// An entity is an input when it exists (known or unknown location) at state 0.
    pub fn input_flags(&self) -> Vec<InputEntityFlag<'_>> {
        self.entities
            .iter()
            .zip(&self.grid)
            .map(|(entity, tl)| InputEntityFlag { entity, is_input: tl[0].exists() })
            .collect()
    }

    pub fn to_grid(&self) -> ProcessGrid {
        ProcessGrid { process_id: self.id.clone(), entities: self.entities.clone(), timelines: self.grid.clone() }
    }

    pub fn timeline(&self, entity: &str) -> Option<&[Location]> {
        let i = self.entities.iter().position(|e| e == entity)?;
        Some(&self.grid[i])
    }
}

/// Candidate spans a converter can derive without a chunker: every
/// occurrence of a gold known-location phrase or an entity name.
pub fn derive_candidates(p: &Procedure) -> Vec<(usize, usize)> {
    let mut phrases: BTreeSet<String> = BTreeSet::new();
    for tl in &p.grid {
        for loc in tl {
            if let Location::Known(t) = loc {
                phrases.insert(t.clone());
            }
        }
    }
    for e in &p.entities {
        phrases.insert(question_entity(e).to_string());
    }
    let mut spans: Vec<_> = phrases.iter().flat_map(|ph| p.find_all_spans(ph)).collect();
    spans.sort_unstable();
    spans.dedup();
    spans
}

// ---- canonical JSON ----

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProcedure {
    id: String,
    sentences: Vec<Vec<String>>,
    entities: Vec<String>,
    grid: IndexMap<String, Vec<String>>,
    candidate_spans: Vec<[usize; 2]>,
}

fn deserialize<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        TslmError::schema(if path == "." { "$".to_string() } else { path }, e.into_inner().to_string())
    })
}

fn validate_spans(at: &str, p: &Procedure, spans: &[(usize, usize)]) -> Result<()> {
    let sentence_of = p.token_sentences();
    let mut seen = BTreeSet::new();
    for (k, &(s, e)) in spans.iter().enumerate() {
        let path = format!("{at}.candidate_spans[{k}]");
        if s > e || e >= sentence_of.len() {
            return Err(TslmError::schema(path, format!("span [{s}, {e}] is out of range")));
        }
        if sentence_of[s] != sentence_of[e] {
            return Err(TslmError::schema(path, format!("span [{s}, {e}] crosses a sentence boundary")));
        }
        if !seen.insert((s, e)) {
            return Err(TslmError::schema(path, format!("duplicate span [{s}, {e}]")));
        }
    }
    Ok(())
}

fn check_shape(at: &str, id: &str, sentences: &[Vec<String>], entities: &[String]) -> Result<()> {
    if id.trim().is_empty() {
        return Err(TslmError::schema(format!("{at}.id"), "empty process id"));
    }
    if sentences.is_empty() {
        return Err(TslmError::schema(format!("{at}.sentences"), "procedure has no sentences"));
    }
    for (j, s) in sentences.iter().enumerate() {
        if s.is_empty() {
            return Err(TslmError::schema(format!("{at}.sentences[{j}]"), "empty sentence"));
        }
    }
    let mut seen = BTreeSet::new();
    for (k, e) in entities.iter().enumerate() {
        if question_entity(e).is_empty() {
            return Err(TslmError::schema(format!("{at}.entities[{k}]"), "empty entity name"));
        }
        if !seen.insert(e) {
            return Err(TslmError::schema(format!("{at}.entities[{k}]"), format!("duplicate entity `{e}`")));
        }
    }
    Ok(())
}

fn lower_sentences(sentences: Vec<Vec<String>>) -> Vec<Vec<String>> {
    sentences.into_iter().map(|s| s.into_iter().map(|t| t.to_lowercase()).collect()).collect()
}

impl RawProcedure {
    fn validate(self, index: usize) -> Result<Procedure> {
        let at = format!("[{index}]");
        check_shape(&at, &self.id, &self.sentences, &self.entities)?;
        let sentences = lower_sentences(self.sentences);
        let n = sentences.len();
        for key in self.grid.keys() {
            if !self.entities.contains(key) {
                return Err(TslmError::schema(format!("{at}.grid.{key}"), "entity not listed in `entities`"));
            }
        }
        let mut grid = Vec::with_capacity(self.entities.len());
        for entity in &self.entities {
            let cells = self
                .grid
                .get(entity)
                .ok_or_else(|| TslmError::schema(format!("{at}.grid"), format!("no grid column for `{entity}`")))?;
            if cells.len() != n + 1 {
                return Err(TslmError::GridColumns {
                    process: self.id.clone(),
                    entity: entity.clone(),
                    expected: n + 1,
                    actual: cells.len(),
                });
            }
            let timeline = cells
                .iter()
                .enumerate()
                .map(|(k, c)| {
                    Location::parse(c)
                        .ok_or_else(|| TslmError::schema(format!("{at}.grid.{entity}[{k}]"), "empty location cell"))
                })
                .collect::<Result<Vec<_>>>()?;
            grid.push(timeline);
        }
        let spans: Vec<(usize, usize)> = self.candidate_spans.iter().map(|s| (s[0], s[1])).collect();
        let p = Procedure { id: self.id, sentences, entities: self.entities, grid, candidate_spans: spans };
        validate_spans(&at, &p, &p.candidate_spans)?;
        Ok(p)
    }
}

impl From<&Procedure> for RawProcedure {
    fn from(p: &Procedure) -> Self {
        RawProcedure {
            id: p.id.clone(),
            sentences: p.sentences.clone(),
            entities: p.entities.clone(),
            grid: p
                .entities
                .iter()
                .zip(&p.grid)
                .map(|(e, tl)| (e.clone(), tl.iter().map(Location::to_string).collect()))
                .collect(),
            candidate_spans: p.candidate_spans.iter().map(|&(s, e)| [s, e]).collect(),
        }
    }
}

fn warn_unaligned(procs: &[Procedure]) {
    for p in procs {
        for (entity, k, text) in p.unaligned_locations() {
            log::warn!("{}: `{entity}` at state {k} is at `{text}`, which does not occur in the paragraph", p.id);
        }
    }
}

fn check_unique_ids(procs: &[Procedure]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for (i, p) in procs.iter().enumerate() {
        if !seen.insert(&p.id) {
            return Err(TslmError::schema(format!("[{i}].id"), format!("duplicate process id `{}`", p.id)));
        }
    }
    Ok(())
}

pub fn parse_propara(text: &str) -> Result<Vec<Procedure>> {
    let raw: Vec<RawProcedure> = deserialize(text)?;
    let procs = raw.into_iter().enumerate().map(|(i, r)| r.validate(i)).collect::<Result<Vec<_>>>()?;
    check_unique_ids(&procs)?;
    warn_unaligned(&procs);
    Ok(procs)
}

pub fn load_propara(path: &Path) -> Result<Vec<Procedure>> {
    let text = std::fs::read_to_string(path).map_err(|e| TslmError::io(path, e))?;
    parse_propara(&text)
}

pub fn to_json(procs: &[Procedure]) -> Result<String> {
    let raw: Vec<RawProcedure> = procs.iter().map(RawProcedure::from).collect();
    Ok(serde_json::to_string_pretty(&raw)?)
}

pub fn save_procedures(path: &Path, procs: &[Procedure]) -> Result<()> {
    write_atomic(path, to_json(procs)?.as_bytes())
}

/// Writes through a sibling temporary file so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, bytes).map_err(|e| TslmError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| TslmError::io(path, e))
}

// ---- NPN-style annotations ----

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecipe {
    id: String,
    sentences: Vec<Vec<String>>,
    ingredients: Vec<String>,
    annotations: Vec<RawAnnotation>,
    #[serde(default)]
    candidate_spans: Option<Vec<[usize; 2]>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAnnotation {
    ingredient: String,
    step: usize,
    location: String,
}

impl RawRecipe {
    fn validate(self, index: usize) -> Result<Procedure> {
        let at = format!("[{index}]");
        check_shape(&at, &self.id, &self.sentences, &self.ingredients)?;
        let sentences = lower_sentences(self.sentences);
        let n = sentences.len();
        let mut cells: IndexMap<&str, Vec<Option<Location>>> =
            self.ingredients.iter().map(|i| (i.as_str(), vec![None; n + 1])).collect();
        for (k, a) in self.annotations.iter().enumerate() {
            let path = format!("{at}.annotations[{k}]");
            let Some(col) = cells.get_mut(a.ingredient.as_str()) else {
                return Err(TslmError::schema(path, format!("unknown ingredient `{}`", a.ingredient)));
            };
            if a.step > n {
                return Err(TslmError::schema(path, format!("step {} is outside 0..={n}", a.step)));
            }
            let loc = Location::parse(&a.location).ok_or_else(|| TslmError::schema(&path, "empty location"))?;
            if col[a.step].replace(loc).is_some() {
                return Err(TslmError::schema(path, format!("step {} annotated twice", a.step)));
            }
        }
        let mut entities = Vec::new();
        let mut grid = Vec::new();
        for (name, col) in cells {
            if col.iter().all(Option::is_none) {
                log::warn!("{}: ingredient `{name}` has no location annotations and is skipped", self.id);
                continue;
            }
            let mut timeline = Vec::with_capacity(n + 1);
            let mut current = Location::Unknown;
            for cell in col {
                if let Some(loc) = cell {
                    current = loc;
                }
                timeline.push(current.clone());
            }
            entities.push(name.to_string());
            grid.push(timeline);
        }
        let mut p = Procedure { id: self.id, sentences, entities, grid, candidate_spans: vec![] };
        p.candidate_spans = match self.candidate_spans {
            Some(spans) => spans.iter().map(|s| (s[0], s[1])).collect(),
            None => derive_candidates(&p),
        };
        validate_spans(&at, &p, &p.candidate_spans)?;
        Ok(p)
    }
}

pub fn parse_npn(text: &str) -> Result<Vec<Procedure>> {
    let raw: Vec<RawRecipe> = deserialize(text)?;
    let procs = raw.into_iter().enumerate().map(|(i, r)| r.validate(i)).collect::<Result<Vec<_>>>()?;
    check_unique_ids(&procs)?;
    warn_unaligned(&procs);
    Ok(procs)
}

pub fn load_npn(path: &Path) -> Result<Vec<Procedure>> {
    let text = std::fs::read_to_string(path).map_err(|e| TslmError::io(path, e))?;
    parse_npn(&text)
}

/// Number of (entity, step) pairs whose value differs from the previous step.
pub fn change_steps(procs: &[Procedure]) -> usize {
    procs
        .iter()
        .flat_map(|p| &p.grid)
        .map(|tl| tl.windows(2).filter(|w| w[0] != w[1]).count())
        .sum()
}

// ---- grid TSV ----

/// Converts grid blocks separated by blank lines. Each block starts with
/// `<process id> \t <anything> \t <entity>...`, followed by one row per state:
/// `state<k> \t <sentence text, empty for state0> \t <location>...`.
pub fn convert_grid_tsv(text: &str) -> Result<Vec<Procedure>> {
    let mut procs = Vec::new();
    let mut block: Vec<(usize, &str)> = Vec::new();
    for (i, line) in text.lines().enumerate().chain(std::iter::once((usize::MAX, ""))) {
        if line.trim().is_empty() {
            if !block.is_empty() {
                procs.push(convert_block(&block)?);
                block.clear();
            }
            continue;
        }
        block.push((i + 1, line));
    }
    check_unique_ids(&procs)?;
    warn_unaligned(&procs);
    Ok(procs)
}

fn convert_block(block: &[(usize, &str)]) -> Result<Procedure> {
    let (header_line, header) = block[0];
    let head: Vec<&str> = header.split('\t').map(str::trim).collect();
    if head.len() < 3 || head[0].is_empty() {
        return Err(TslmError::Tsv {
            line: header_line,
            message: "header needs a process id, a sentence column and at least one entity".into(),
        });
    }
    let id = head[0].to_string();
    let entities: Vec<String> = head[2..].iter().map(|e| e.to_lowercase()).collect();
    let mut sentences = Vec::new();
    let mut grid: Vec<Vec<Location>> = vec![Vec::new(); entities.len()];
    for (k, &(line, row)) in block[1..].iter().enumerate() {
        let cols: Vec<&str> = row.split('\t').collect();
        let bad = |message: String| TslmError::Tsv { line, message };
        if cols.len() != entities.len() + 2 {
            return Err(bad(format!("expected {} columns, found {}", entities.len() + 2, cols.len())));
        }
        if cols[0].trim() != format!("state{k}") {
            return Err(bad(format!("expected `state{k}`, found `{}`", cols[0].trim())));
        }
        if k == 0 {
            if !cols[1].trim().is_empty() {
                return Err(bad("state0 has no sentence".into()));
            }
        } else {
            let tokens = tokenize(cols[1]);
            if tokens.is_empty() {
                return Err(bad(format!("state{k} has an empty sentence")));
            }
            sentences.push(tokens);
        }
        for (e, cell) in cols[2..].iter().enumerate() {
            grid[e].push(Location::parse(cell).ok_or_else(|| bad(format!("empty cell for `{}`", entities[e])))?);
        }
    }
    if sentences.is_empty() {
        return Err(TslmError::Tsv { line: header_line, message: format!("process `{id}` has no sentences") });
    }
    let mut p = Procedure { id, sentences, entities, grid, candidate_spans: vec![] };
    p.candidate_spans = derive_candidates(&p);
    Ok(p)
}

// ---- synthetic corpus ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrammarConfig {
    pub min_inputs: usize,
    pub max_inputs: usize,
    pub min_steps: usize,
    pub max_steps: usize,
    /// Probability that an input starts at a known location.
    pub known_start: f64,
    pub substances: Vec<String>,
    pub products: Vec<String>,
    pub places: Vec<String>,
}

fn words(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

impl Default for GrammarConfig {
    fn default() -> Self {
        GrammarConfig {
            min_inputs: 2,
            max_inputs: 3,
            min_steps: 3,
            max_steps: 5,
            known_start: 0.75,
            substances: words(&["water", "salt", "iron", "seed", "clay", "oil", "sand", "gas", "dust", "wax"]),
            products: words(&["paste", "mixture", "crystal", "vapor", "foam", "gel", "alloy", "syrup"]),
            places: words(&["tank", "jar", "pipe", "bowl", "oven", "tray", "cup", "box", "basin", "vat"]),
        }
    }
}

impl GrammarConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TslmError::Config(m.to_string()));
        if self.min_inputs < 1 || self.min_inputs > self.max_inputs {
            return bad("need 1 <= min_inputs <= max_inputs");
        }
        if self.min_steps < 1 || self.min_steps > self.max_steps {
            return bad("need 1 <= min_steps <= max_steps");
        }
        if !(0.0..=1.0).contains(&self.known_start) {
            return bad("known_start must lie in [0, 1]");
        }
        if self.substances.len() < self.max_inputs {
            return bad("fewer substances than max_inputs");
        }
        if self.products.len() < self.max_steps {
            return bad("fewer products than max_steps");
        }
        if self.places.len() < 2 {
            return bad("need at least two places");
        }
        let mut all = BTreeSet::new();
        for w in self.substances.iter().chain(&self.products).chain(&self.places) {
            if tokenize(w).len() != 1 || !all.insert(w.to_lowercase()) {
                return bad("vocabulary words must be distinct single tokens");
            }
        }
        Ok(())
    }
}

struct Draft {
    sentences: Vec<String>,
    entities: Vec<String>,
    /// State per entity; products not yet created hold `-`.
    grid: Vec<Vec<Location>>,
}

fn draft(rng: &mut ChaCha8Rng, cfg: &GrammarConfig) -> Draft {
    let n_inputs = rng.random_range(cfg.min_inputs..=cfg.max_inputs);
    let n_steps = rng.random_range(cfg.min_steps..=cfg.max_steps);
    let mut entities: Vec<String> = cfg.substances.choose_multiple(rng, n_inputs).cloned().collect();
    let mut products: Vec<String> = cfg.products.clone();
    products.shuffle(rng);
    let mut state: Vec<Location> = entities
        .iter()
        .map(|_| {
            if rng.random_bool(cfg.known_start) {
                Location::Known(cfg.places.choose(rng).expect("places").clone())
            } else {
                Location::Unknown
            }
        })
        .collect();
    let mut grid: Vec<Vec<Location>> = state.iter().map(|l| vec![l.clone()]).collect();
    let mut sentences = Vec::with_capacity(n_steps);

    let other_place = |rng: &mut ChaCha8Rng, from: &Location| loop {
        let p = cfg.places.choose(rng).expect("places").clone();
        if from.text() != Some(p.as_str()) {
            return p;
        }
    };

    for step in 0..n_steps {
        let alive: Vec<usize> = (0..entities.len()).filter(|&i| state[i].exists()).collect();
        let mut kinds = vec!["create"];
        if !alive.is_empty() {
            kinds.extend(["move", "move", "destroy"]);
            if alive.iter().any(|&i| matches!(state[i], Location::Known(_))) {
                kinds.push("stay");
            }
        }
        if alive.len() >= 2 {
            kinds.extend(["combine", "combine"]);
        }
        let sentence = match *kinds.choose(rng).expect("non-empty") {
            "move" => {
                let i = *alive.choose(rng).expect("alive");
                let to = other_place(rng, &state[i]);
                let s = match &state[i] {
                    Location::Known(from) => format!("the {} moves from {from} to {to}", entities[i]),
                    _ => format!("the {} moves to {to}", entities[i]),
                };
                state[i] = Location::Known(to);
                s
            }
            "destroy" => {
                let i = *alive.choose(rng).expect("alive");
                let s = match &state[i] {
                    Location::Known(at) => format!("the {} is destroyed in {at}", entities[i]),
                    _ => format!("the {} is destroyed", entities[i]),
                };
                state[i] = Location::Absent;
                s
            }
            "stay" => {
                let known: Vec<usize> =
                    alive.iter().copied().filter(|&i| matches!(state[i], Location::Known(_))).collect();
                let i = *known.choose(rng).expect("known");
                format!("the {} stays in {}", entities[i], state[i])
            }
            "combine" => {
                let pair: Vec<usize> = alive.choose_multiple(rng, 2).copied().collect();
                let z = products.pop().expect("products");
                let at = cfg.places.choose(rng).expect("places").clone();
                let s = format!("{} and {} combine into {z} at {at}", entities[pair[0]], entities[pair[1]]);
                for &i in &pair {
                    state[i] = Location::Absent;
                }
                entities.push(z);
                state.push(Location::Known(at));
                grid.push(vec![Location::Absent; step + 1]);
                s
            }
            _ => {
                let z = products.pop().expect("products");
                let at = cfg.places.choose(rng).expect("places").clone();
                entities.push(z.clone());
                state.push(Location::Known(at.clone()));
                grid.push(vec![Location::Absent; step + 1]);
                format!("{z} is created at {at}")
            }
        };
        sentences.push(sentence);
        for (tl, s) in grid.iter_mut().zip(&state) {
            tl.push(s.clone());
        }
    }
    Draft { sentences, entities, grid }
}

/// Every known location of an entity is named in a sentence that also names
/// the entity, so no answer depends on an accidental mention.
fn grounded(p: &Procedure) -> bool {
    p.entities.iter().zip(&p.grid).all(|(entity, tl)| {
        tl.iter().filter_map(Location::text).all(|place| {
            p.sentences.iter().any(|s| s.iter().any(|t| t == entity) && s.iter().any(|t| t == place))
        })
    })
}

/// Template-generated procedures with exact gold grids. Drafts with a known
/// location the text never ties to its entity are redrawn.
pub fn generate_synthetic(seed: u64, n_procedures: usize, cfg: &GrammarConfig) -> Result<Vec<Procedure>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_procedures);
    while out.len() < n_procedures {
        let d = draft(&mut rng, cfg);
        let mut p = Procedure {
            id: format!("syn{seed}-{}", out.len()),
            sentences: d.sentences.iter().map(|s| tokenize(s)).collect(),
            entities: d.entities,
            grid: d.grid,
            candidate_spans: vec![],
        };
        if !grounded(&p) {
            continue;
        }
        p.candidate_spans = derive_candidates(&p);
        out.push(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const PHOTOSYNTHESIS_TSV: &str = "photosynthesis\tsentence\twater\tlight\tco2\tmixture\tsugar
state0\t\tsoil\tsun\t?\t-\t-
state1\tRoots absorb water from soil\troot\tsun\t?\t-\t-
state2\tThe water flows to the leaf\tleaf\tsun\t?\t-\t-
state3\tLight from the sun and CO2 enter the leaf\tleaf\tleaf\tleaf\t-\t-
state4\tThe water, light, and CO2 combine into a mixture\t-\t-\t-\tleaf\t-
state5\tMixture forms sugar\t-\t-\t-\t-\tleaf
";

    #[test]
    fn converter_reads_photosynthesis() {
        let p = &convert_grid_tsv(PHOTOSYNTHESIS_TSV).unwrap()[0];
        assert_eq!(p.n_steps(), 5);
        assert_eq!(p.entities.len(), 5);
        assert_eq!(p.grid[0][0], Location::known("soil"));
        assert_eq!(p.sentences[3][2], ",");
        let want = [2, 4, 6, 10, 11, 14, 16, 19, 21, 23, 26, 30, 31, 33];
        assert_eq!(p.candidate_spans, want.iter().map(|&i| (i, i)).collect::<Vec<_>>());
        assert_eq!(p.unaligned_locations(), vec![("water", 1, "root")]);
        let flags: Vec<bool> = p.input_flags().iter().map(|f| f.is_input).collect();
        assert_eq!(flags, [true, true, true, false, false]);
    }

    #[test]
    fn json_round_trip() {
        let procs = convert_grid_tsv(PHOTOSYNTHESIS_TSV).unwrap();
        let json = to_json(&procs).unwrap();
        let back = parse_propara(&json).unwrap();
        assert_eq!(back, procs);
        assert_eq!(to_json(&back).unwrap(), json);
    }

    #[test]
    fn missing_state_zero_rejected() {
        let json = r#"[{"id":"p","sentences":[["a","b"]],"entities":["a"],"grid":{"a":["b"]},"candidate_spans":[]}]"#;
        assert!(matches!(parse_propara(json), Err(TslmError::GridColumns { expected: 2, actual: 1, .. })));
    }

    #[test]
    fn schema_errors_have_paths() {
        let json = r#"[{"id":"p","sentences":[["a"]],"entities":["a"],"grid":{"a":["-", 3]},"candidate_spans":[]}]"#;
        match parse_propara(json) {
            Err(TslmError::Schema { path, .. }) => assert_eq!(path, "[0].grid.a[1]"),
            other => panic!("{other:?}"),
        }
        let json = r#"[{"id":"p","sentences":[["a"]],"entities":["a"],"grid":{"a":["-","-"]},"candidate_spans":[],"x":1}]"#;
        assert!(matches!(parse_propara(json), Err(TslmError::Schema { .. })));
        let json = r#"[{"id":"p","sentences":[["a"],["b"]],"entities":["a"],"grid":{"a":["-","-","-"]},"candidate_spans":[[0,1]]}]"#;
        match parse_propara(json) {
            Err(TslmError::Schema { path, .. }) => assert_eq!(path, "[0].candidate_spans[0]"),
            other => panic!("{other:?}"),
        }
        let json = r#"[{"id":"p","sentences":[["a"]],"entities":["a","a"],"grid":{"a":["-","-"]},"candidate_spans":[]}]"#;
        assert!(parse_propara(json).is_err());
        assert!(parse_propara("{").is_err());
    }

    #[test]
    fn npn_carries_forward() {
        let json = r#"[{"id":"r1","sentences":[["a"],["b"],["c"],["d"],["e"],["f"]],
            "ingredients":["flour","egg","salt"],
            "annotations":[
                {"ingredient":"flour","step":0,"location":"bag"},
                {"ingredient":"flour","step":2,"location":"bowl"},
                {"ingredient":"flour","step":5,"location":"oven"},
                {"ingredient":"egg","step":3,"location":"bowl"}]}]"#;
        let p = &parse_npn(json).unwrap()[0];
        assert_eq!(p.entities, ["flour", "egg"]);
        let flour: Vec<String> = p.grid[0].iter().map(|l| l.to_string()).collect();
        assert_eq!(flour, ["bag", "bag", "bowl", "bowl", "bowl", "oven", "oven"]);
        assert_eq!(p.grid[0].windows(2).filter(|w| w[0] != w[1]).count(), 2);
        let egg: Vec<String> = p.grid[1].iter().map(|l| l.to_string()).collect();
        assert_eq!(egg, ["?", "?", "?", "bowl", "bowl", "bowl", "bowl"]);
        assert_eq!(change_steps(std::slice::from_ref(p)), 3);
    }

    #[test]
    fn npn_rejects_bad_annotations() {
        let base = |ann: &str| {
            format!(r#"[{{"id":"r","sentences":[["a"]],"ingredients":["x"],"annotations":[{ann}]}}]"#)
        };
        assert!(parse_npn(&base(r#"{"ingredient":"y","step":1,"location":"a"}"#)).is_err());
        assert!(parse_npn(&base(r#"{"ingredient":"x","step":2,"location":"a"}"#)).is_err());
        match parse_npn(&base(r#"{"ingredient":"x","step":"one","location":"a"}"#)) {
            Err(TslmError::Schema { path, .. }) => assert_eq!(path, "[0].annotations[0].step"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn tsv_errors() {
        assert!(matches!(convert_grid_tsv("p\ts\ta\nstate1\tx\t-\n"), Err(TslmError::Tsv { line: 2, .. })));
        assert!(matches!(convert_grid_tsv("p\ts\ta\nstate0\t\t-\tb\n"), Err(TslmError::Tsv { line: 2, .. })));
        assert!(convert_grid_tsv("p\ts\ta\nstate0\t\t-\n").is_err());
    }

    #[test]
    fn synthetic_is_deterministic_and_aligned() {
        let cfg = GrammarConfig::default();
        let a = generate_synthetic(7, 20, &cfg).unwrap();
        let b = generate_synthetic(7, 20, &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_synthetic(8, 20, &cfg).unwrap());
        for p in &a {
            assert!(p.unaligned_locations().is_empty());
            assert!(p.grid.iter().all(|tl| tl.len() == p.n_steps() + 1));
            for tl in &p.grid {
                for loc in tl {
                    if let Location::Known(t) = loc {
                        let span = p.find_span(t).unwrap();
                        assert!(p.candidate_spans.contains(&span));
                    }
                }
            }
        }
        let json = to_json(&a).unwrap();
        assert_eq!(parse_propara(&json).unwrap(), a);
    }

    #[test]
    fn grammar_validation() {
        let mut cfg = GrammarConfig::default();
        cfg.places = words(&["tank"]);
        assert!(generate_synthetic(1, 1, &cfg).is_err());
        let mut cfg = GrammarConfig::default();
        cfg.places.push("water".into());
        assert!(cfg.validate().is_err());
    }
}
