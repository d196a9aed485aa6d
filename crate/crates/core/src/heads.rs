//! Output heads: a 3-way status classifier over the `[CLS]` row and
//! start/end distributions over every token, plus their joint loss.

use numcore::{ParamId, ParamStore, Tape, Tensor, Var};
use rand_chacha::ChaCha8Rng;

use crate::encoder::EncoderOutput;
use crate::error::{Result, TslmError};
use crate::types::StatusClass;

#[derive(Debug, Clone)]
pub struct Heads {
    /// `d_model x 3`
    pub status: ParamId,
    /// `d_model x 1`
    pub start: ParamId,
    /// `d_model x 1`
    pub end: ParamId,
}

impl Heads {
    pub fn new(d_model: usize, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<Self> {
        let std = 1.0 / (d_model as f64).sqrt();
        Ok(Heads {
            status: store.register("heads.status", Tensor::randn(vec![d_model, 3], std, rng)?)?,
            start: store.register("heads.start", Tensor::randn(vec![d_model, 1], std, rng)?)?,
            end: store.register("heads.end", Tensor::randn(vec![d_model, 1], std, rng)?)?,
        })
    }

    pub fn status(&self, tape: &mut Tape, store: &ParamStore, out: &EncoderOutput) -> Result<Var> {
        let w = tape.param(store, self.status);
        status_head(tape, out, w)
    }

    pub fn span(&self, tape: &mut Tape, store: &ParamStore, out: &EncoderOutput) -> Result<(Var, Var)> {
        let ws = tape.param(store, self.start);
        let we = tape.param(store, self.end);
        span_head(tape, out, ws, we)
    }
}

fn hidden_width(tape: &Tape, out: &EncoderOutput) -> usize {
    tape.shape(out.hidden)[1]
}

/// `softmax(W^T · h_[CLS])` as a length-3 vector.
pub fn status_head(tape: &mut Tape, out: &EncoderOutput, w: Var) -> Result<Var> {
    let d = hidden_width(tape, out);
    if tape.shape(w) != [d, 3] {
        return Err(numcore::NumError::ShapeMismatch {
            op: "status_head",
            left: vec![d, 3],
            right: tape.shape(w).to_vec(),
        }
        .into());
    }
    let cls = out.cls(tape)?;
    let logits = tape.matmul(cls, w)?;
    let logits = tape.reshape(logits, vec![3])?;
    Ok(tape.softmax(logits, 0)?)
}

/// Start and end distributions over all `T` tokens.
pub fn span_head(tape: &mut Tape, out: &EncoderOutput, w_start: Var, w_end: Var) -> Result<(Var, Var)> {
    let d = hidden_width(tape, out);
    let len = tape.shape(out.hidden)[0];
    let mut dist = |w: Var| -> Result<Var> {
        if tape.value(w).len() != d {
            return Err(numcore::NumError::ShapeMismatch {
                op: "span_head",
                left: vec![d, 1],
                right: tape.shape(w).to_vec(),
            }
            .into());
        }
        let w = tape.reshape(w, vec![d, 1])?;
        let logits = tape.matmul(out.hidden, w)?;
        let logits = tape.reshape(logits, vec![len])?;
        Ok(tape.softmax(logits, 0)?)
    };
    let start = dist(w_start)?;
    let end = dist(w_end)?;
    Ok((start, end))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatusPrediction {
    pub probs: [f64; 3],
}

impl StatusPrediction {
    pub fn from_tape(tape: &Tape, var: Var) -> Self {
        let v = tape.value(var);
        StatusPrediction { probs: [v[0], v[1], v[2]] }
    }

    /// Highest-probability class; ties go to the lower index.
    pub fn argmax(&self) -> StatusClass {
        let mut best = 0;
        for i in 1..3 {
            if self.probs[i] > self.probs[best] {
                best = i;
            }
        }
        StatusClass::from_index(best).expect("index < 3")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpanPrediction {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

impl SpanPrediction {
    pub fn from_tape(tape: &Tape, start: Var, end: Var) -> Self {
        SpanPrediction { start: tape.value(start).to_vec(), end: tape.value(end).to_vec() }
    }
}

/// Gold label for one (entity, step) query. `span` is in query positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldStep {
    pub status: StatusClass,
    pub span: Option<(usize, usize)>,
}

#[derive(Debug, Clone, Copy)]
pub struct JointLoss {
    pub loss: Var,
    /// Gold status is known-location but no span could be aligned, so only the
    /// status term was used.
    pub span_skipped: bool,
}

/// `CE(status) + [gold is known-location] * (CE(start) + CE(end))`.
pub fn joint_loss(tape: &mut Tape, status: Var, start: Var, end: Var, gold: &GoldStep) -> Result<JointLoss> {
    let status_loss = tape.cross_entropy(status, gold.status.index())?;
    if gold.status != StatusClass::KnownLocation {
        return Ok(JointLoss { loss: status_loss, span_skipped: false });
    }
    let Some((s, e)) = gold.span else {
        return Ok(JointLoss { loss: status_loss, span_skipped: true });
    };
    if s > e {
        return Err(TslmError::Config(format!("gold span ({s}, {e}) has start after end")));
    }
    let ls = tape.cross_entropy(start, s)?;
    let le = tape.cross_entropy(end, e)?;
    let span_loss = tape.add(ls, le)?;
    Ok(JointLoss { loss: tape.add(status_loss, span_loss)?, span_skipped: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use numcore::gradcheck;
    use rand::SeedableRng;

    fn fake_output(tape: &mut Tape, rows: usize, d: usize, seed: u64) -> EncoderOutput {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = Tensor::randn(vec![rows, d], 1.0, &mut rng).unwrap();
        EncoderOutput { hidden: tape.leaf(&h), attention: vec![] }
    }

    #[test]
    fn zero_weights_give_uniform_status() {
        let mut tape = Tape::new();
        let out = fake_output(&mut tape, 4, 5, 1);
        let w = tape.leaf(&Tensor::zeros(vec![5, 3]).unwrap());
        let p = status_head(&mut tape, &out, w).unwrap();
        for v in tape.value(p) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn analytic_status_softmax() {
        // cls row = e_0, W row 0 = (ln2, 0, 0)
        let mut tape = Tape::new();
        let h = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.3, 0.7]).unwrap();
        let out = EncoderOutput { hidden: tape.leaf(&h), attention: vec![] };
        let w = tape.leaf(&Tensor::matrix(2, 3, vec![2f64.ln(), 0.0, 0.0, 5.0, 5.0, 5.0]).unwrap());
        let p = status_head(&mut tape, &out, w).unwrap();
        let v = tape.value(p);
        assert!((v[0] - 0.5).abs() < 1e-12);
        assert!((v[1] - 0.25).abs() < 1e-12);
        assert!((v[2] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn status_weight_shape_checked() {
        let mut tape = Tape::new();
        let out = fake_output(&mut tape, 3, 4, 2);
        let w = tape.leaf(&Tensor::zeros(vec![4, 2]).unwrap());
        assert!(status_head(&mut tape, &out, w).is_err());
        let w = tape.leaf(&Tensor::zeros(vec![5, 1]).unwrap());
        assert!(span_head(&mut tape, &out, w, w).is_err());
    }

    #[test]
    fn zero_start_weights_give_uniform_span() {
        let mut tape = Tape::new();
        let out = fake_output(&mut tape, 7, 4, 3);
        let z = tape.leaf(&Tensor::zeros(vec![4, 1]).unwrap());
        let (s, _) = span_head(&mut tape, &out, z, z).unwrap();
        for v in tape.value(s) {
            assert!((v - 1.0 / 7.0).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_rows_identical_start_probability() {
        let mut tape = Tape::new();
        let row = [0.2, -1.0, 0.5];
        let mut data = Vec::new();
        for r in 0..4 {
            if r == 1 || r == 3 {
                data.extend_from_slice(&row);
            } else {
                data.extend_from_slice(&[r as f64, 1.0, -0.5]);
            }
        }
        let out = EncoderOutput { hidden: tape.leaf(&Tensor::matrix(4, 3, data).unwrap()), attention: vec![] };
        let w = tape.leaf(&Tensor::vector(vec![0.7, -0.1, 2.0]).unwrap());
        let (s, e) = span_head(&mut tape, &out, w, w).unwrap();
        assert_eq!(tape.value(s)[1], tape.value(s)[3]);
        assert_eq!(tape.value(e)[1], tape.value(e)[3]);
    }

    #[test]
    fn span_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let h = Tensor::randn(vec![6, 4], 1.0, &mut rng).unwrap();
        let ws = Tensor::randn(vec![4, 1], 1.0, &mut rng).unwrap();
        let we = Tensor::randn(vec![4, 1], 1.0, &mut rng).unwrap();
        let mut tape = Tape::new();
        let out = EncoderOutput { hidden: tape.leaf(&h), attention: vec![] };
        let wsv = tape.leaf(&ws);
        let wev = tape.leaf(&we);
        let (s, e) = span_head(&mut tape, &out, wsv, wev).unwrap();
        for (w, var) in [(&ws, s), (&we, e)] {
            let logits: Vec<f64> = (0..6)
                .map(|r| (0..4).map(|c| h.at(r, c) * w.data()[c]).sum())
                .collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            for (r, l) in logits.iter().enumerate() {
                assert!((tape.value(var)[r] - l.exp() / z).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn status_loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = Tensor::randn(vec![5, 4], 1.0, &mut rng).unwrap();
        let w = Tensor::randn(vec![4, 3], 1.0, &mut rng).unwrap();
        for gold in 0..3 {
            let report = gradcheck::check(&[h.clone(), w.clone()], 1e-5, |t, v| {
                let out = EncoderOutput { hidden: v[0], attention: vec![] };
                let p = status_head(t, &out, v[1]).map_err(|e| match e {
                    TslmError::Num(n) => n,
                    other => panic!("{other}"),
                })?;
                t.cross_entropy(p, gold)
            })
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "{report:?}");
        }
    }

    fn one_hot(tape: &mut Tape, n: usize, i: usize) -> Var {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        tape.leaf(&Tensor::vector(v).unwrap())
    }

    #[test]
    fn perfect_predictions_have_zero_loss() {
        let mut tape = Tape::new();
        let st = one_hot(&mut tape, 3, 2);
        let s = one_hot(&mut tape, 6, 1);
        let e = one_hot(&mut tape, 6, 3);
        let gold = GoldStep { status: StatusClass::KnownLocation, span: Some((1, 3)) };
        let l = joint_loss(&mut tape, st, s, e, &gold).unwrap();
        assert_eq!(tape.scalar(l.loss), 0.0);
    }

    #[test]
    fn uniform_status_absent_gold_is_ln3() {
        let mut tape = Tape::new();
        let st = tape.leaf(&Tensor::vector(vec![1.0 / 3.0; 3]).unwrap());
        let s = tape.leaf(&Tensor::vector(vec![0.25; 4]).unwrap());
        let gold = GoldStep { status: StatusClass::NonExistent, span: None };
        let l = joint_loss(&mut tape, st, s, s, &gold).unwrap();
        assert!((tape.scalar(l.loss) - 3f64.ln()).abs() < 1e-12);
        assert!(!l.span_skipped);
    }

    #[test]
    fn random_case_equals_hand_sum() {
        let status = [0.2, 0.3, 0.5];
        let start = [0.1, 0.6, 0.2, 0.1];
        let end = [0.05, 0.05, 0.4, 0.5];
        let mut tape = Tape::new();
        let st = tape.leaf(&Tensor::vector(status.to_vec()).unwrap());
        let s = tape.leaf(&Tensor::vector(start.to_vec()).unwrap());
        let e = tape.leaf(&Tensor::vector(end.to_vec()).unwrap());
        let gold = GoldStep { status: StatusClass::KnownLocation, span: Some((1, 3)) };
        let l = joint_loss(&mut tape, st, s, e, &gold).unwrap();
        let expect = -(0.5f64.ln()) - 0.6f64.ln() - 0.5f64.ln();
        assert!((tape.scalar(l.loss) - expect).abs() < 1e-9);
    }

    #[test]
    fn unresolvable_span_is_skipped_and_flagged() {
        let mut tape = Tape::new();
        let st = tape.leaf(&Tensor::vector(vec![0.2, 0.3, 0.5]).unwrap());
        let s = tape.leaf(&Tensor::vector(vec![0.5, 0.5]).unwrap());
        let gold = GoldStep { status: StatusClass::KnownLocation, span: None };
        let l = joint_loss(&mut tape, st, s, s, &gold).unwrap();
        assert!(l.span_skipped);
        assert!((tape.scalar(l.loss) + 0.5f64.ln()).abs() < 1e-12);
        let g = tape.backward(l.loss).unwrap();
        assert!(g.get(s).is_none());
    }

    #[test]
    fn span_terms_only_for_known_gold() {
        for status in [StatusClass::NonExistent, StatusClass::UnknownLocation] {
            let mut tape = Tape::new();
            let st = tape.leaf(&Tensor::vector(vec![0.2, 0.3, 0.5]).unwrap());
            let s = tape.leaf(&Tensor::vector(vec![0.5, 0.5]).unwrap());
            let gold = GoldStep { status, span: Some((0, 1)) };
            let l = joint_loss(&mut tape, st, s, s, &gold).unwrap();
            let g = tape.backward(l.loss).unwrap();
            assert!(g.get(s).is_none());
        }
    }

    #[test]
    fn argmax_prefers_lower_index_on_tie() {
        let p = StatusPrediction { probs: [0.4, 0.4, 0.2] };
        assert_eq!(p.argmax(), StatusClass::NonExistent);
        let p = StatusPrediction { probs: [0.1, 0.2, 0.7] };
        assert_eq!(p.argmax(), StatusClass::KnownLocation);
    }
}
