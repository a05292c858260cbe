//! Loss, rate metric and training-loop behaviour.

use std::f64::consts::LN_2;

use transrx::channel::{TdlProfile, DEFAULT_CARRIER_HZ};
use transrx::checkpoint;
use transrx::ldpc::QcLdpcCode;
use transrx::link::Link;
use transrx::modem::{Constellation, ResourceGridSpec};
use transrx::neural_rx::{PositionalEncoding, TransRxConfig};
use transrx::trainer::{bce_loss, evaluate_loss, make_batch, rate_metric, TrainConfig, Trainer, LOG_HEADER};
use transrx_numerics::{Graph, Tensor};

fn smoke_link() -> Link {
    Link::new(
        ResourceGridSpec::new(14, 16, &[2, 11], 1, 2).unwrap(),
        Constellation::qam(2).unwrap(),
        QcLdpcCode::with_lifting(24).unwrap(),
        TdlProfile::uma_like(),
        DEFAULT_CARRIER_HZ,
        240e3,
    )
    .unwrap()
}

fn smoke_model() -> TransRxConfig {
    TransRxConfig {
        num_blocks: 2,
        num_heads: 2,
        d_model: 32,
        ffn_dim: 64,
        bits_per_symbol: 2,
        rx_antennas: 2,
        positional_encoding: PositionalEncoding::Sinusoidal2d,
        num_symbols: 14,
        num_subcarriers: 16,
    }
}

fn smoke_train(steps: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        steps,
        lr: 1e-3,
        snr_range_db: (10.0, 20.0),
        speed_range_kmh: (0.0, 30.0),
        seed: 3,
        checkpoint_interval: 1000,
        record_wallclock: false,
    }
}

fn loss_of(llrs: &[f32], bits: &[f32]) -> (f64, Vec<f32>) {
    let mut g = Graph::<f32>::new();
    let l = g
        .leaf(
            Tensor::new(vec![llrs.len()], llrs.to_vec())
                .unwrap()
                .with_requires_grad(true),
        )
        .unwrap();
    let loss = bce_loss(&mut g, l, bits).unwrap();
    let grads = g.backward(loss).unwrap();
    (g.value(loss).data()[0] as f64, grads.of(l))
}

#[test]
fn bce_and_rate_spot_values() {
    let (bce, _) = loss_of(&[0.0; 6], &[0.0, 1.0, 1.0, 0.0, 1.0, 0.0]);
    assert!((bce - LN_2).abs() < 1e-6);
    assert!(rate_metric(LN_2).abs() < 1e-9);
    assert!((rate_metric(2.0 * LN_2) + 1.0).abs() < 1e-12);
    // label 1 with P(1) = 0.25
    let (bce, _) = loss_of(&[3f32.ln()], &[1.0]);
    assert!((bce - 1.3863).abs() < 1e-4);
    let bits = [0.0, 1.0, 1.0, 0.0];
    let perfect: Vec<f32> = bits.iter().map(|&b| if b == 0.0 { 20.0 } else { -20.0 }).collect();
    let (bce, _) = loss_of(&perfect, &bits);
    assert!(rate_metric(bce) > 0.99);
}

#[test]
fn bce_gradient_is_the_sigmoid_residual() {
    let llrs = [-3.0f32, -0.5, 0.0, 0.7, 4.0, 1.2];
    let bits = [1.0f32, 0.0, 1.0, 0.0, 0.0, 1.0];
    let (_, grad) = loss_of(&llrs, &bits);
    for ((&l, &b), &g) in llrs.iter().zip(&bits).zip(&grad) {
        // P(bit = 1) = σ(-l); d/dl of -[b ln σ(-l) + (1-b) ln σ(l)] is σ(l) - (1-b)
        let sig = 1.0 / (1.0 + (-l as f64).exp());
        let want = (sig - (1.0 - b as f64)) / llrs.len() as f64;
        assert!(
            (g as f64 - want).abs() < 1e-5 * 1f64.max(want.abs()),
            "llr {l}: {g} vs {want}"
        );
    }
}

#[test]
fn smoke_training_reduces_loss() {
    let link = smoke_link();
    let cfg = smoke_train(200);
    let held_out = make_batch(
        &link,
        &TrainConfig {
            seed: 999,
            batch_size: 8,
            ..cfg.clone()
        },
        0,
    )
    .unwrap();
    let mut trainer = Trainer::new(link, cfg, smoke_model()).unwrap();
    let initial = evaluate_loss(&trainer.model, &held_out).unwrap();
    let mut log = Vec::new();
    let history = trainer.run(&mut log, None).unwrap();
    let last = evaluate_loss(&trainer.model, &held_out).unwrap();
    assert_eq!(history.len(), 200);
    assert!((initial - LN_2).abs() < 1e-4, "zero head starts at ln 2, got {initial}");
    assert!(last < 0.95 * initial, "held-out BCE {initial} -> {last}");
}

#[test]
fn training_log_is_reproducible_and_resumable() {
    let run = |steps| {
        let mut t = Trainer::new(smoke_link(), smoke_train(steps), smoke_model()).unwrap();
        let mut log = Vec::new();
        t.run(&mut log, None).unwrap();
        (t, String::from_utf8(log).unwrap())
    };
    let (full, log_a) = run(6);
    let (_, log_b) = run(6);
    assert_eq!(log_a, log_b);
    assert_eq!(log_a.lines().next(), Some(LOG_HEADER));
    assert_eq!(log_a.lines().count(), 7);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("half.ckpt");
    let mut first = Trainer::new(smoke_link(), smoke_train(3), smoke_model()).unwrap();
    let mut log = Vec::new();
    first.run(&mut log, Some(&path)).unwrap();
    let mut second = Trainer::resume(smoke_link(), smoke_train(6), checkpoint::load(&path).unwrap()).unwrap();
    second.run(&mut log, None).unwrap();
    assert_eq!(String::from_utf8(log).unwrap(), log_a);
    assert_eq!(second.model.params(), full.model.params());
}
