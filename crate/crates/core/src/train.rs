//! Per-procedure training: every (entity, step) loss of a procedure is
//! averaged, back-propagated once and followed by one SGD update.

use std::path::Path;

use numcore::{Sgd, SgdConfig, Tape};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::Mode;
use crate::error::{Result, TslmError};
use crate::heads::{joint_loss, SpanPrediction, StatusPrediction};
use crate::inference::best_span;
use crate::input::timestamp;
use crate::model::{PreparedProcedure, TslmModel};
use crate::types::StatusClass;

/// Training-set fit thresholds that end training early once met.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitTargets {
    pub status_accuracy: f64,
    pub span_exact_match: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub seed: u64,
    pub sgd: SgdConfig,
    /// Ablation: timestamp table held at zero and never updated.
    pub zero_timestamp: bool,
    pub stop_at: Option<FitTargets>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 10, seed: 0, sgd: SgdConfig::default(), zero_timestamp: false, stop_at: None }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.sgd.validate()?;
        if self.epochs == 0 {
            return Err(TslmError::Config("epochs must be positive".into()));
        }
        if let Some(t) = self.stop_at {
            for v in [t.status_accuracy, t.span_exact_match] {
                if !(0.0..=1.0).contains(&v) {
                    return Err(TslmError::Config(format!("fit target {v} is outside [0, 1]")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub learning_rate_first: f64,
    pub learning_rate_last: f64,
    pub optimizer_steps: usize,
    pub dev_status_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// Known-location targets with no alignable span, per epoch.
    pub skipped_spans: usize,
    pub stopped_early: bool,
}

/// Mean joint loss of one procedure, recorded on `tape`.
fn procedure_loss(
    model: &TslmModel,
    tape: &mut Tape,
    proc: &PreparedProcedure,
    mode: &mut Mode,
    skipped: &mut usize,
) -> Result<numcore::Var> {
    let mut losses = Vec::with_capacity(proc.queries());
    for pe in &proc.entities {
        for (step, gold) in pe.gold.iter().enumerate() {
            let input = timestamp(&pe.layout, step)?;
            let out = model.forward(tape, &input, mode)?;
            let l = joint_loss(tape, out.status, out.start, out.end, gold)?;
            if l.span_skipped {
                *skipped += 1;
            }
            losses.push(l.loss);
        }
    }
    let total = tape.add_all(&losses)?;
    Ok(tape.scale(total, 1.0 / losses.len() as f64))
}

/// Trains in place. A checkpoint is written to `checkpoint_dir` after every
/// epoch; a non-finite loss aborts before the update, leaving the last
/// written checkpoint as the most recent good state.
pub fn train(
    model: &mut TslmModel,
    train_set: &[PreparedProcedure],
    dev_set: Option<&[PreparedProcedure]>,
    config: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainLog> {
    config.validate()?;
    if config.zero_timestamp {
        model.freeze_zero_timestamps();
    }
    let mut sgd = Sgd::new(config.sgd)?;
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = TrainLog::default();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut order_rng);
        let lr_first = sgd.current_learning_rate();
        let mut lr_last = lr_first;
        let mut loss_sum = 0.0;
        let mut skipped = 0;
        for &i in &order {
            let proc = &train_set[i];
            if proc.queries() == 0 {
                continue;
            }
            let mut tape = Tape::new();
            let mut mode = Mode::Train(&mut dropout_rng);
            let loss = procedure_loss(model, &mut tape, proc, &mut mode, &mut skipped)?;
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(TslmError::NonFiniteLoss { epoch, process: proc.id.clone() });
            }
            loss_sum += value;
            tape.backward(loss)?.accumulate_into(&tape, &mut model.store)?;
            lr_last = sgd.step(&mut model.store)?;
        }
        let dev_status_accuracy = match dev_set {
            Some(dev) => Some(fit_metrics(model, dev)?.status_accuracy),
            None => None,
        };
        let entry = EpochLog {
            epoch,
            mean_loss: loss_sum / train_set.len().max(1) as f64,
            learning_rate_first: lr_first,
            learning_rate_last: lr_last,
            optimizer_steps: sgd.steps_taken(),
            dev_status_accuracy,
        };
        log::info!(
            "epoch {epoch}: loss {:.6} lr {:.3e}..{:.3e} dev status acc {}",
            entry.mean_loss,
            lr_first,
            lr_last,
            dev_status_accuracy.map_or("n/a".to_string(), |a| format!("{a:.4}"))
        );
        log.epochs.push(entry);
        log.skipped_spans = skipped;
        if let Some(dir) = checkpoint_dir {
            model.save(dir)?;
        }
        if let Some(target) = config.stop_at {
            let fit = fit_metrics(model, train_set)?;
            if fit.status_accuracy >= target.status_accuracy && fit.span_exact_match >= target.span_exact_match {
                log::info!("fit targets met after epoch {epoch}");
                log.stopped_early = true;
                break;
            }
        }
    }
    Ok(log)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitMetrics {
    /// Argmax status against gold over every (entity, step).
    pub status_accuracy: f64,
    /// Known-location gold steps whose best candidate span has the gold text.
    pub span_exact_match: f64,
    /// Status accuracy restricted to entities whose gold status changes.
    pub changing_status_accuracy: f64,
    pub queries: usize,
    pub span_targets: usize,
    pub changing_queries: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

pub fn fit_metrics(model: &TslmModel, set: &[PreparedProcedure]) -> Result<FitMetrics> {
    let (mut queries, mut status_ok) = (0, 0);
    let (mut span_targets, mut span_ok) = (0, 0);
    let (mut changing, mut changing_ok) = (0, 0);
    for proc in set {
        for pe in &proc.entities {
            let first = pe.gold[0].status;
            let changes = pe.gold.iter().any(|g| g.status != first);
            for (step, gold) in pe.gold.iter().enumerate() {
                let mut tape = Tape::new();
                let input = timestamp(&pe.layout, step)?;
                let out = model.forward(&mut tape, &input, &mut Mode::Eval)?;
                let status = StatusPrediction::from_tape(&tape, out.status);
                let hit = status.argmax() == gold.status;
                queries += 1;
                status_ok += hit as usize;
                if changes {
                    changing += 1;
                    changing_ok += hit as usize;
                }
                if gold.status == StatusClass::KnownLocation {
                    span_targets += 1;
                    let span = SpanPrediction::from_tape(&tape, out.start, out.end);
                    let text = best_span(&span, &pe.candidates).map(|(s, e)| pe.layout.span_text(s, e));
                    if text.as_deref() == pe.gold_locations[step].text() {
                        span_ok += 1;
                    }
                }
            }
        }
    }
    Ok(FitMetrics {
        status_accuracy: ratio(status_ok, queries),
        span_exact_match: ratio(span_ok, span_targets),
        changing_status_accuracy: ratio(changing_ok, changing),
        queries,
        span_targets,
        changing_queries: changing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, GrammarConfig};
    use crate::encoder::EncoderConfig;
    use crate::model::{build_vocab, prepare_all};

    fn tiny() -> EncoderConfig {
        EncoderConfig { d_model: 8, n_heads: 2, n_layers: 1, ff_width: 8, max_len: 64, ..Default::default() }
    }

    fn setup(n: usize) -> (TslmModel, Vec<PreparedProcedure>) {
        let procs = generate_synthetic(3, n, &GrammarConfig::default()).unwrap();
        let model = TslmModel::new(tiny(), build_vocab(&procs), 9).unwrap();
        let prepared = prepare_all(&procs, &model.vocab, 64, true).unwrap();
        (model, prepared)
    }

    #[test]
    fn one_procedure_one_epoch_one_step() {
        let (mut model, prepared) = setup(1);
        let cfg = TrainConfig { epochs: 1, ..Default::default() };
        let log = train(&mut model, &prepared, None, &cfg, None).unwrap();
        assert_eq!(log.epochs.len(), 1);
        assert_eq!(log.epochs[0].optimizer_steps, 1);
    }

    #[test]
    fn logged_schedule_follows_step_decay() {
        let (mut model, prepared) = setup(10);
        let cfg = TrainConfig { epochs: 12, ..Default::default() };
        let log = train(&mut model, &prepared, None, &cfg, None).unwrap();
        for e in &log.epochs {
            let first_step = e.optimizer_steps - 10;
            let last_step = e.optimizer_steps - 1;
            let want = |k: usize| 3e-4 * 0.5f64.powi((k / 50) as i32);
            assert_eq!(e.learning_rate_first, want(first_step));
            assert_eq!(e.learning_rate_last, want(last_step));
        }
        assert_eq!(log.epochs[11].learning_rate_last, 3e-4 * 0.25);
    }

    #[test]
    fn zero_timestamp_stays_zero() {
        let (mut model, prepared) = setup(2);
        let cfg = TrainConfig { epochs: 2, zero_timestamp: true, ..Default::default() };
        train(&mut model, &prepared, None, &cfg, None).unwrap();
        let t = model.store.get(model.encoder.timestamp_embedding);
        assert!(t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn checkpoint_written_each_epoch() {
        let (mut model, prepared) = setup(2);
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig { epochs: 2, ..Default::default() };
        train(&mut model, &prepared, Some(&prepared), &cfg, Some(dir.path())).unwrap();
        let back = TslmModel::load(dir.path()).unwrap();
        assert_eq!(
            numcore::Checkpoint::from_store(&back.store),
            numcore::Checkpoint::from_store(&model.store)
        );
    }

    #[test]
    fn non_finite_loss_aborts_without_update() {
        let (mut model, prepared) = setup(2);
        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path()).unwrap();
        let before = numcore::Checkpoint::from_store(&model.store);
        let id = model.heads.status;
        model.store.get_mut(id).data_mut()[0] = f64::NAN;
        let cfg = TrainConfig { epochs: 1, ..Default::default() };
        let err = train(&mut model, &prepared, None, &cfg, Some(dir.path())).unwrap_err();
        assert!(matches!(err, TslmError::NonFiniteLoss { epoch: 1, .. }));
        let on_disk = TslmModel::load(dir.path()).unwrap();
        assert_eq!(numcore::Checkpoint::from_store(&on_disk.store), before);
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
        let json = r#"{"epochs": 3, "learning_rate": 0.1}"#;
        assert!(serde_json::from_str::<TrainConfig>(json).is_err());
    }
}
