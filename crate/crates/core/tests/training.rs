use tslm_core::data::{generate_synthetic, GrammarConfig};
use tslm_core::encoder::EncoderConfig;
use tslm_core::model::{build_vocab, prepare_all, TslmModel};
use tslm_core::train::{train, TrainConfig};

#[test]
fn loss_falls_over_two_hundred_epochs() {
    let procs = generate_synthetic(11, 10, &GrammarConfig::default()).unwrap();
    let cfg = EncoderConfig { d_model: 16, n_heads: 2, n_layers: 1, ff_width: 16, max_len: 128, ..Default::default() };
    let mut model = TslmModel::new(cfg, build_vocab(&procs), 2).unwrap();
    let set = prepare_all(&procs, &model.vocab, 128, true).unwrap();
    let mut tc = TrainConfig { epochs: 200, seed: 2, ..Default::default() };
    tc.sgd.learning_rate = 0.05;
    tc.sgd.decay_every = 1000;
    let log = train(&mut model, &set, Some(&set), &tc, None).unwrap();
    assert_eq!(log.epochs.len(), 200);
    let first = log.epochs[0].mean_loss;
    let last = log.epochs[199].mean_loss;
    assert!(last < first, "first {first}, last {last}");
    assert!(log.epochs.iter().all(|e| e.dev_status_accuracy.is_some()));
}
