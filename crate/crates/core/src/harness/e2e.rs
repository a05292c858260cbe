//! One block through the full chain: bits, LDPC encode, QAM map, grid,
//! channel, receiver LLRs, grid demap, LDPC decode, compare.

use std::sync::Arc;

use crate::baseline_rx::{baseline_receive, CsiMode};
use crate::channel::{snr_to_noise_var, ChannelRealization};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::harness::config::{ReceiverSpec, SimConfig};
use crate::link::{sample_range, Link, Transmission};
use crate::modem::{grid_demap, LlrGrid, ResourceGrid};
use crate::neural_rx::{TransRxConfig, TransRxModel};
use crate::seed;

/// A ready-to-run receiver. The neural model is shared read-only across
/// worker threads.
#[derive(Clone, Debug)]
pub enum Receiver {
    PerfectCsi,
    LsLmmse,
    TransRx { id: String, model: Arc<TransRxModel<f32>> },
}

impl Receiver {
    /// Resolves a receiver id; checkpoints must match `expected`.
    pub fn load(spec: &ReceiverSpec, expected: &TransRxConfig) -> Result<Self> {
        Ok(match spec {
            ReceiverSpec::PerfectCsi => Receiver::PerfectCsi,
            ReceiverSpec::LsLmmse => Receiver::LsLmmse,
            ReceiverSpec::TransRx(path) => {
                let ckpt = checkpoint::load_expecting(path, expected)?;
                Receiver::TransRx {
                    id: spec.id(),
                    model: Arc::new(ckpt.model),
                }
            }
        })
    }

    pub fn neural(id: impl Into<String>, model: Arc<TransRxModel<f32>>) -> Self {
        Receiver::TransRx { id: id.into(), model }
    }

    pub fn id(&self) -> String {
        match self {
            Receiver::PerfectCsi => "perfect-csi".into(),
            Receiver::LsLmmse => "ls-lmmse".into(),
            Receiver::TransRx { id, .. } => id.clone(),
        }
    }

    /// Per-RE LLRs. The neural receiver and the genie are told the true
    /// noise power; the LS receiver estimates its own.
    pub fn llrs(&self, link: &Link, y: &ResourceGrid, truth: &ChannelRealization) -> Result<LlrGrid> {
        match self {
            Receiver::PerfectCsi => baseline_receive(y, &link.spec, &link.constellation, CsiMode::Perfect, Some(truth)),
            Receiver::LsLmmse => baseline_receive(y, &link.spec, &link.constellation, CsiMode::Ls, None),
            Receiver::TransRx { model, .. } => model.receive(y, &link.spec, truth.noise_var()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Simulation {
    pub link: Link,
    pub max_iterations: usize,
    pub llr_clip: f64,
    pub speed_range_kmh: (f64, f64),
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BlockOutcome {
    /// Information bits sent, codewords concatenated.
    pub tx_bits: Vec<u8>,
    /// Decoder output for the same positions.
    pub rx_bits: Vec<u8>,
    pub bit_errors: u64,
    pub codewords: u64,
    pub codeword_errors: u64,
}

impl Simulation {
    pub fn new(link: Link, max_iterations: usize, llr_clip: f64, speed_range_kmh: (f64, f64)) -> Self {
        Simulation {
            link,
            max_iterations,
            llr_clip,
            speed_range_kmh,
        }
    }

    pub fn from_config(cfg: &SimConfig) -> Result<Self> {
        Ok(Simulation::new(
            cfg.link()?,
            cfg.code.max_iterations,
            cfg.code.llr_clip,
            (cfg.channel.speed_min_kmh, cfg.channel.speed_max_kmh),
        ))
    }

    /// Speed drawn for a block; shared by every receiver using that seed.
    pub fn block_speed(&self, block_seed: u64) -> f64 {
        let mut rng = seed::stream(block_seed, &[seed::tag::SPEED]);
        sample_range(&mut rng, self.speed_range_kmh)
    }

    pub fn run_block(&self, receiver: &Receiver, snr_db: f64, block_seed: u64) -> Result<BlockOutcome> {
        let tx = self.link.transmit(block_seed).map_err(|e| block_error(block_seed, e))?;
        self.finish_block(receiver, tx, snr_db, block_seed)
    }

    /// Like [`Simulation::run_block`] with caller-chosen payloads, one per
    /// codeword slot.
    pub fn run_block_with(
        &self,
        receiver: &Receiver,
        info_bits: Vec<Vec<u8>>,
        snr_db: f64,
        block_seed: u64,
    ) -> Result<BlockOutcome> {
        let tx = self
            .link
            .transmit_info(info_bits, block_seed)
            .map_err(|e| block_error(block_seed, e))?;
        self.finish_block(receiver, tx, snr_db, block_seed)
    }

    fn finish_block(
        &self,
        receiver: &Receiver,
        tx: Transmission,
        snr_db: f64,
        block_seed: u64,
    ) -> Result<BlockOutcome> {
        let run = || -> Result<BlockOutcome> {
            let noise_var = snr_to_noise_var(snr_db);
            let rx = self
                .link
                .propagate(&tx.grid, noise_var, self.block_speed(block_seed), block_seed)?;
            let llr_grid = receiver.llrs(&self.link, &rx.y, &rx.channel)?;
            let llrs = grid_demap(&llr_grid, &self.link.spec)?;
            let n = self.link.code.n();
            let mut out = BlockOutcome::default();
            for (c, info) in tx.info_bits.iter().enumerate() {
                let decoded = self
                    .link
                    .code
                    .decode(&llrs[c * n..(c + 1) * n], self.max_iterations, self.llr_clip)?;
                let errors = info.iter().zip(&decoded.info_bits).filter(|(a, b)| a != b).count() as u64;
                out.bit_errors += errors;
                out.codewords += 1;
                out.codeword_errors += (errors > 0) as u64;
                out.tx_bits.extend_from_slice(info);
                out.rx_bits.extend_from_slice(&decoded.info_bits);
            }
            Ok(out)
        };
        run().map_err(|e| block_error(block_seed, e))
    }
}

fn block_error(block: u64, source: Error) -> Error {
    match source {
        e @ Error::Block { .. } => e,
        other => Error::Block {
            block,
            source: Box::new(other),
        },
    }
}
