//! Transmit chain and channel pass shared by training and evaluation.
//!
//! One block is one slot grid. It carries as many whole LDPC codewords as
//! fit in the data REs; leftover data bits are random padding that is
//! transmitted but never scored.

use rand::Rng;

use crate::channel::{self, ChannelRealization, DopplerSpec, TdlProfile};
use crate::error::{Error, Result};
use crate::ldpc::QcLdpcCode;
use crate::modem::{grid_map, Constellation, ResourceGrid, ResourceGridSpec};
use crate::seed;

#[derive(Clone, Debug)]
pub struct Link {
    pub spec: ResourceGridSpec,
    pub constellation: Constellation,
    pub code: QcLdpcCode,
    pub profile: TdlProfile,
    pub carrier_hz: f64,
    pub subcarrier_spacing_hz: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transmission {
    /// Information bits, one vector per codeword.
    pub info_bits: Vec<Vec<u8>>,
    /// Every bit placed on the data REs, in mapping order: codewords then
    /// padding.
    pub coded_bits: Vec<u8>,
    pub grid: ResourceGrid,
}

#[derive(Clone, Debug)]
pub struct Reception {
    pub y: ResourceGrid,
    pub channel: ChannelRealization,
}

impl Link {
    pub fn new(
        spec: ResourceGridSpec,
        constellation: Constellation,
        code: QcLdpcCode,
        profile: TdlProfile,
        carrier_hz: f64,
        subcarrier_spacing_hz: f64,
    ) -> Result<Self> {
        let link = Link {
            spec,
            constellation,
            code,
            profile,
            carrier_hz,
            subcarrier_spacing_hz,
        };
        if link.codewords_per_block() == 0 {
            return Err(Error::contract(
                "link",
                format!(
                    "a {}-bit codeword does not fit in {} data bits per grid",
                    link.code.n(),
                    link.bits_per_block()
                ),
            ));
        }
        Ok(link)
    }

    pub fn bits_per_block(&self) -> usize {
        self.spec.data_capacity() * self.constellation.bits_per_symbol()
    }

    pub fn codewords_per_block(&self) -> usize {
        self.bits_per_block() / self.code.n()
    }

    pub fn info_bits_per_block(&self) -> usize {
        self.codewords_per_block() * self.code.k()
    }

    /// Random information bits for every codeword slot of the block.
    pub fn transmit(&self, block_seed: u64) -> Result<Transmission> {
        let mut bit_rng = seed::stream(block_seed, &[seed::tag::BITS]);
        let info_bits = (0..self.codewords_per_block())
            .map(|_| (0..self.code.k()).map(|_| bit_rng.random::<bool>() as u8).collect())
            .collect();
        self.transmit_info(info_bits, block_seed)
    }

    /// Encodes, pads, maps and places the given codeword payloads.
    pub fn transmit_info(&self, info_bits: Vec<Vec<u8>>, block_seed: u64) -> Result<Transmission> {
        if info_bits.len() != self.codewords_per_block() {
            return Err(Error::contract(
                "transmit",
                format!(
                    "{} codewords for a block of {}",
                    info_bits.len(),
                    self.codewords_per_block()
                ),
            ));
        }
        let mut coded_bits = Vec::with_capacity(self.bits_per_block());
        for info in &info_bits {
            coded_bits.extend(self.code.encode(info)?);
        }
        let mut pad_rng = seed::stream(block_seed, &[seed::tag::PAD]);
        coded_bits.extend((coded_bits.len()..self.bits_per_block()).map(|_| pad_rng.random::<bool>() as u8));
        let symbols = self.constellation.map_bits(&coded_bits)?;
        let grid = grid_map(&symbols, &self.spec)?;
        Ok(Transmission {
            info_bits,
            coded_bits,
            grid,
        })
    }

    pub fn propagate(&self, tx: &ResourceGrid, noise_var: f64, speed_kmh: f64, block_seed: u64) -> Result<Reception> {
        let doppler = DopplerSpec::new(speed_kmh, self.carrier_hz)?;
        let channel = channel::sample_realization(
            &self.profile,
            &doppler,
            &self.spec,
            self.subcarrier_spacing_hz,
            noise_var,
            block_seed,
        )?;
        let y = channel::apply(tx, &channel)?;
        Ok(Reception { y, channel })
    }
}

/// Uniform draw from `[lo, hi]`, or `lo` when the range is a single point.
pub fn sample_range(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}
