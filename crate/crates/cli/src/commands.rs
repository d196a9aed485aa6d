use std::io::Write;
use std::path::Path;

use serde::Serialize;
use tslm_core::data::{self, Procedure};
use tslm_core::evaluation::{evaluate, render_table};
use tslm_core::model::{build_vocab, prepare_all, TslmModel};
use tslm_core::predict::{predict, PredictOptions};
use tslm_core::state_table::{grids_from_rows, parse_tsv, write_tsv, ProcessGrid};
use tslm_core::train::train;
use tslm_core::{Result, TslmError};

use crate::config::{ConvertJob, DataFormat, EvaluateJob, GenerateJob, Job, PredictJob, TrainJob};

pub fn run(job: Job) -> Result<()> {
    match job {
        Job::Train(j) => run_train(j),
        Job::Predict(j) => run_predict(j),
        Job::Evaluate(j) => run_evaluate(j),
        Job::Generate(j) => run_generate(j),
        Job::Convert(j) => run_convert(j),
    }
}

fn load_procedures(path: &Path, format: DataFormat) -> Result<Vec<Procedure>> {
    match format {
        DataFormat::Propara => data::load_propara(path),
        DataFormat::Npn => data::load_npn(path),
    }
}

/// Writes to `out` atomically, or to stdout.
fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => data::write_atomic(path, text.as_bytes()),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| TslmError::io(Path::new("<stdout>"), e))
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

fn run_train(job: TrainJob) -> Result<()> {
    let train_procs = load_procedures(&job.train_data, job.format)?;
    if train_procs.is_empty() {
        return Err(TslmError::Config(format!("{} holds no procedures", job.train_data.display())));
    }
    let dev_procs = job.dev_data.as_deref().map(|p| load_procedures(p, job.format)).transpose()?;

    let vocab = build_vocab(&train_procs);
    let max_len = job.encoder.max_len;
    let train_set = prepare_all(&train_procs, &vocab, max_len, job.np_filter)?;
    let dev_set = dev_procs.as_deref().map(|d| prepare_all(d, &vocab, max_len, job.np_filter)).transpose()?;
    log::info!(
        "training on {} procedures ({} queries), vocabulary {}",
        train_set.len(),
        train_set.iter().map(|p| p.queries()).sum::<usize>(),
        vocab.len()
    );

    let mut model = TslmModel::new(job.encoder, vocab, job.train.seed)?;
    let log = train(&mut model, &train_set, dev_set.as_deref(), &job.train, Some(&job.model_dir))?;
    emit(job.out.as_deref(), &to_json(&log)?)
}

#[derive(Serialize)]
struct PredictSummary {
    rows: usize,
    constraints: bool,
    rule_violations: usize,
    fallbacks: usize,
}

fn run_predict(job: PredictJob) -> Result<()> {
    let model = TslmModel::load(&job.model_dir)?;
    let procs = load_procedures(&job.data, job.format)?;
    let set = prepare_all(&procs, &model.vocab, model.config().max_len, job.np_filter)?;
    let out = predict(&model, &set, PredictOptions { constraints: job.constraints })?;
    let summary = PredictSummary {
        rows: out.rows.len(),
        constraints: job.constraints,
        rule_violations: out.rule_violations,
        fallbacks: out.fallbacks,
    };
    if job.constraints {
        log::info!("repaired {} rule-breaking transitions", out.rule_violations);
    } else {
        log::warn!("constraints disabled: {} rule-breaking transitions left in the output", out.rule_violations);
    }
    emit(job.out.as_deref(), &write_tsv(&out.rows))?;
    if job.out.is_some() {
        emit(None, &to_json(&summary)?)?;
    }
    Ok(())
}

/// Reads a state-change TSV, or a procedure corpus when the file is JSON.
fn load_grids(path: &Path, npn: bool) -> Result<Vec<ProcessGrid>> {
    let is_tsv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("tsv"));
    if is_tsv {
        let text = std::fs::read_to_string(path).map_err(|e| TslmError::io(path, e))?;
        let rows = parse_tsv(&text).map_err(|e| TslmError::Schema { path: path.display().to_string(), message: e.to_string() })?;
        return grids_from_rows(&rows);
    }
    let format = if npn { DataFormat::Npn } else { DataFormat::Propara };
    Ok(load_procedures(path, format)?.iter().map(Procedure::to_grid).collect())
}

fn run_evaluate(job: EvaluateJob) -> Result<()> {
    let npn = matches!(job.mode, tslm_core::evaluation::EvalMode::Npn);
    let pred = load_grids(&job.predictions, npn)?;
    let gold = load_grids(&job.gold, npn)?;
    let report = evaluate(&pred, &gold)?;
    eprint!("{}", render_table(&report, job.mode));
    emit(job.out.as_deref(), &to_json(&report)?)
}

fn run_generate(job: GenerateJob) -> Result<()> {
    let procs = data::generate_synthetic(job.seed, job.count, &job.grammar)?;
    log::info!("generated {} procedures", procs.len());
    let mut text = data::to_json(&procs)?;
    text.push('\n');
    emit(job.out.as_deref(), &text)
}

fn run_convert(job: ConvertJob) -> Result<()> {
    let text = std::fs::read_to_string(&job.input).map_err(|e| TslmError::io(&job.input, e))?;
    let procs = data::convert_grid_tsv(&text)?;
    for p in &procs {
        for (entity, step, location) in p.unaligned_locations() {
            log::warn!("{}: `{location}` ({entity}, state {step}) does not occur in the text", p.id);
        }
    }
    let mut json = data::to_json(&procs)?;
    json.push('\n');
    emit(job.out.as_deref(), &json)
}
