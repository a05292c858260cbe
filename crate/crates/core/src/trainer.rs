//! Supervised training of TransRx on freshly simulated slots.
//!
//! The loss is the mean binary cross-entropy between the network's LLRs at
//! data REs and the transmitted coded bits. The reported rate is
//! `1 − BCE / ln 2`.

use std::f64::consts::LN_2;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use transrx_numerics::{AdamW, Graph, NumericsError, Tensor, Var};

use crate::channel::snr_to_noise_var;
use crate::checkpoint::{self, Checkpoint};
use crate::error::{Error, Result};
use crate::link::{sample_range, Link};
use crate::neural_rx::{derotate_pilots, preprocess_into, TransRxConfig, TransRxModel};
use crate::seed;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Slot grids per optimizer step.
    pub batch_size: usize,
    pub steps: u64,
    pub lr: f64,
    pub snr_range_db: (f64, f64),
    pub speed_range_kmh: (f64, f64),
    pub seed: u64,
    /// Steps between checkpoint writes; the final step is always written.
    pub checkpoint_interval: u64,
    /// When false the log's wallclock column is 0 so logs are reproducible
    /// byte for byte.
    pub record_wallclock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            steps: 1000,
            lr: 1e-3,
            snr_range_db: (0.0, 12.0),
            speed_range_kmh: (60.0, 120.0),
            seed: 1,
            checkpoint_interval: 100,
            record_wallclock: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let (s0, s1) = self.snr_range_db;
        let (v0, v1) = self.speed_range_kmh;
        if self.batch_size == 0 || self.steps == 0 || self.checkpoint_interval == 0 {
            return Err(Error::contract(
                "train config",
                "batch size, steps and checkpoint interval must be positive",
            ));
        }
        if !(self.lr > 0.0) {
            return Err(Error::contract("train config", "learning rate must be positive"));
        }
        if !(s0.is_finite() && s1.is_finite() && s0 <= s1) {
            return Err(Error::contract("train config", format!("empty SNR range {s0}..{s1}")));
        }
        if !(v0 >= 0.0 && v1.is_finite() && v0 <= v1) {
            return Err(Error::contract("train config", format!("bad speed range {v0}..{v1}")));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamW {
        AdamW {
            lr: self.lr,
            ..AdamW::default()
        }
    }
}

/// Mean BCE of `llrs` against 0/1 `bits`, where a positive LLR favors 0.
pub fn bce_loss(g: &mut Graph<f32>, llrs: Var, bits: &[f32]) -> Result<Var> {
    let n = g.value(llrs).numel();
    if n != bits.len() {
        return Err(Error::contract(
            "bce_loss",
            format!("{n} LLRs for {} labels", bits.len()),
        ));
    }
    Ok(g.bce_llr(llrs, bits)?)
}

pub fn rate_metric(bce: f64) -> f64 {
    1.0 - bce / LN_2
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `[batch, tokens, 2A+1]`.
    pub features: Tensor<f32>,
    /// Coded bits at data REs, grid by grid.
    pub labels: Vec<f32>,
    /// Token indices of the data REs.
    pub rows: Vec<usize>,
}

/// Simulates the grids of optimizer step `step`. Each grid draws its own
/// SNR and speed from the configured ranges.
pub fn make_batch(link: &Link, cfg: &TrainConfig, step: u64) -> Result<Batch> {
    let spec = &link.spec;
    let tokens = spec.num_res();
    let feats_per = 2 * spec.rx_antennas() + 1;
    let mut features = Vec::with_capacity(cfg.batch_size * tokens * feats_per);
    let mut labels = Vec::with_capacity(cfg.batch_size * link.bits_per_block());
    for b in 0..cfg.batch_size {
        let grid_seed = seed::derive(cfg.seed, &[seed::tag::TRAIN, step, b as u64]);
        let mut rng = seed::stream(grid_seed, &[seed::tag::SPEED]);
        let snr_db = sample_range(&mut rng, cfg.snr_range_db);
        let speed = sample_range(&mut rng, cfg.speed_range_kmh);
        let noise_var = snr_to_noise_var(snr_db);
        let tx = link.transmit(grid_seed)?;
        let rx = link.propagate(&tx.grid, noise_var, speed, grid_seed)?;
        preprocess_into(&derotate_pilots(&rx.y, spec)?, noise_var, &mut features)?;
        labels.extend(tx.coded_bits.iter().map(|&b| b as f32));
    }
    Ok(Batch {
        features: Tensor::new(vec![cfg.batch_size, tokens, feats_per], features)?,
        labels,
        rows: spec.data_positions(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub bce: f64,
    pub grad_norm: f64,
}

fn training_error(e: Error) -> Error {
    match e {
        Error::Numerics(NumericsError::NonFinite { op }) => {
            Error::Training(format!("non-finite value produced by `{op}`; lower the learning rate"))
        }
        other => other,
    }
}

/// Loss of `model` on `batch` without updating anything.
pub fn evaluate_loss(model: &TransRxModel<f32>, batch: &Batch) -> Result<f64> {
    let mut g = Graph::new();
    let loss = record_loss(&mut g, model, batch)?;
    Ok(g.value(loss).data()[0] as f64)
}

fn record_loss(g: &mut Graph<f32>, model: &TransRxModel<f32>, batch: &Batch) -> Result<Var> {
    let x = g.leaf(batch.features.clone())?;
    let out = model.forward(g, x)?;
    let data = g.select_rows(out, &batch.rows)?;
    bce_loss(g, data, &batch.labels)
}

/// Forward, backward and one AdamW update.
pub fn train_step(model: &mut TransRxModel<f32>, optimizer: &AdamW, batch: &Batch) -> Result<StepStats> {
    let mut g = Graph::new();
    let loss = record_loss(&mut g, model, batch).map_err(training_error)?;
    let bce = g.value(loss).data()[0] as f64;
    if !bce.is_finite() {
        return Err(Error::Training(format!("loss became {bce}")));
    }
    let grads = g.backward(loss)?;
    let params = model.params_mut();
    params.zero_grads();
    params.accumulate_grads(&g, &grads)?;
    let grad_norm = params.grad_norm();
    if !grad_norm.is_finite() {
        return Err(Error::Training(format!("gradient norm became {grad_norm}")));
    }
    optimizer.step(params)?;
    Ok(StepStats { bce, grad_norm })
}

pub const LOG_HEADER: &str = "step,bce,rate,grad_norm,lr,wallclock_s";

#[derive(Clone, Debug)]
pub struct Trainer {
    pub link: Link,
    pub cfg: TrainConfig,
    pub model: TransRxModel<f32>,
    pub optimizer: AdamW,
    /// Steps completed so far.
    pub step: u64,
}

fn check_compatible(link: &Link, model: &TransRxConfig) -> Result<()> {
    let spec = &link.spec;
    let want = (
        link.constellation.bits_per_symbol(),
        spec.rx_antennas(),
        spec.num_symbols(),
        spec.num_subcarriers(),
    );
    let have = (
        model.bits_per_symbol,
        model.rx_antennas,
        model.num_symbols,
        model.num_subcarriers,
    );
    if want != have {
        return Err(Error::contract(
            "trainer",
            format!("model (bits, antennas, symbols, subcarriers) = {have:?} but link has {want:?}"),
        ));
    }
    Ok(())
}

impl Trainer {
    pub fn new(link: Link, cfg: TrainConfig, model_cfg: TransRxConfig) -> Result<Self> {
        cfg.validate()?;
        check_compatible(&link, &model_cfg)?;
        let model = TransRxModel::init(model_cfg, cfg.seed)?;
        let optimizer = cfg.optimizer();
        Ok(Trainer {
            link,
            cfg,
            model,
            optimizer,
            step: 0,
        })
    }

    /// Continues from a saved state. The stored seed replaces `cfg.seed` so
    /// the batch sequence carries on where it stopped.
    pub fn resume(link: Link, mut cfg: TrainConfig, ckpt: Checkpoint) -> Result<Self> {
        cfg.validate()?;
        check_compatible(&link, ckpt.model.config())?;
        cfg.seed = ckpt.seed;
        Ok(Trainer {
            link,
            cfg,
            model: ckpt.model,
            optimizer: ckpt.optimizer,
            step: ckpt.step,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            optimizer: self.optimizer,
            step: self.step,
            seed: self.cfg.seed,
        }
    }

    /// Trains until `cfg.steps` steps are done, appending one CSV row per
    /// step to `log` (header first when starting fresh).
    pub fn run(&mut self, log: &mut dyn Write, checkpoint_path: Option<&Path>) -> Result<Vec<StepStats>> {
        let io = |e| Error::io("training log", e);
        if self.step == 0 {
            writeln!(log, "{LOG_HEADER}").map_err(io)?;
        }
        let start = Instant::now();
        let mut history = Vec::new();
        while self.step < self.cfg.steps {
            let batch = make_batch(&self.link, &self.cfg, self.step)?;
            let stats = train_step(&mut self.model, &self.optimizer, &batch)?;
            self.step += 1;
            let wall = if self.cfg.record_wallclock {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            };
            writeln!(
                log,
                "{},{:.6},{:.6},{:.6},{},{:.3}",
                self.step,
                stats.bce,
                rate_metric(stats.bce),
                stats.grad_norm,
                self.optimizer.lr,
                wall
            )
            .map_err(io)?;
            history.push(stats);
            if let Some(path) = checkpoint_path {
                if self.step % self.cfg.checkpoint_interval == 0 || self.step == self.cfg.steps {
                    checkpoint::save(&self.checkpoint(), path)?;
                }
            }
        }
        log.flush().map_err(io)?;
        Ok(history)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{TdlProfile, DEFAULT_CARRIER_HZ};
    use crate::ldpc::QcLdpcCode;
    use crate::modem::{Constellation, ResourceGridSpec};
    use crate::neural_rx::PositionalEncoding;

    fn tiny_link() -> Link {
        Link::new(
            ResourceGridSpec::new(14, 8, &[2, 11], 1, 1).unwrap(),
            Constellation::qam(2).unwrap(),
            QcLdpcCode::with_lifting(12).unwrap(),
            TdlProfile::uma_like(),
            DEFAULT_CARRIER_HZ,
            240e3,
        )
        .unwrap()
    }

    fn tiny_model() -> TransRxConfig {
        TransRxConfig {
            num_blocks: 1,
            num_heads: 2,
            d_model: 8,
            ffn_dim: 8,
            bits_per_symbol: 2,
            rx_antennas: 1,
            positional_encoding: PositionalEncoding::Sinusoidal2d,
            num_symbols: 14,
            num_subcarriers: 8,
        }
    }

    #[test]
    fn bce_spot_values() {
        let mut g = Graph::<f32>::new();
        let l = g.leaf(Tensor::zeros(&[4])).unwrap();
        let loss = bce_loss(&mut g, l, &[0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!((g.value(loss).data()[0] as f64 - LN_2).abs() < 1e-6);
        // label 1 with P(1) = 0.25 means LLR = ln 3
        let l = g.leaf(Tensor::new(vec![1], vec![3f32.ln()]).unwrap()).unwrap();
        let loss = bce_loss(&mut g, l, &[1.0]).unwrap();
        assert!((g.value(loss).data()[0] as f64 - 1.3862944).abs() < 1e-5);
        assert!(bce_loss(&mut g, l, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn rate_spot_values() {
        assert_eq!(rate_metric(LN_2), 0.0);
        assert_eq!(rate_metric(0.0), 1.0);
        assert_eq!(rate_metric(2.0 * LN_2), -1.0);
    }

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let link = tiny_link();
        let cfg = TrainConfig {
            batch_size: 2,
            ..TrainConfig::default()
        };
        let mut model = TransRxModel::<f32>::init(tiny_model(), 3).unwrap();
        let before = model.params().clone();
        let batch = make_batch(&link, &cfg, 0).unwrap();
        let opt = AdamW {
            lr: 0.0,
            ..AdamW::default()
        };
        train_step(&mut model, &opt, &batch).unwrap();
        for (a, b) in model.params().iter().zip(before.iter()) {
            assert_eq!(a.tensor.data(), b.tensor.data(), "{}", a.name);
        }
    }

    #[test]
    fn batch_order_does_not_change_loss() {
        let link = tiny_link();
        let cfg = TrainConfig {
            batch_size: 3,
            ..TrainConfig::default()
        };
        let model = TransRxModel::<f32>::init_with(tiny_model(), 3, crate::neural_rx::HeadInit::Random).unwrap();
        let batch = make_batch(&link, &cfg, 5).unwrap();
        let per_grid_feats = batch.features.numel() / 3;
        let per_grid_labels = batch.labels.len() / 3;
        let order = [2, 0, 1];
        let features: Vec<f32> = order
            .iter()
            .flat_map(|&b| batch.features.data()[b * per_grid_feats..(b + 1) * per_grid_feats].to_vec())
            .collect();
        let labels: Vec<f32> = order
            .iter()
            .flat_map(|&b| batch.labels[b * per_grid_labels..(b + 1) * per_grid_labels].to_vec())
            .collect();
        let shuffled = Batch {
            features: Tensor::new(batch.features.shape().to_vec(), features).unwrap(),
            labels,
            rows: batch.rows.clone(),
        };
        let a = evaluate_loss(&model, &batch).unwrap();
        let b = evaluate_loss(&model, &shuffled).unwrap();
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }

    #[test]
    fn incompatible_model_is_rejected() {
        let mut m = tiny_model();
        m.bits_per_symbol = 4;
        assert!(Trainer::new(tiny_link(), TrainConfig::default(), m).is_err());
    }
}
