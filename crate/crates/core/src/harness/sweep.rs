//! Monte-Carlo BER/BLER sweeps over SNR and receivers.
//!
//! Blocks are simulated in fixed-size rounds. Each block's seed depends only
//! on `(master seed, SNR, block index)`, so every receiver sees the same
//! channel and noise draws, and totals do not depend on the worker count.
//! A point stops after the first round where
//! `(bits ≥ min_bits and bit errors ≥ target_errors)`, `bits ≥ max_bits`,
//! or `blocks ≥ max_blocks`.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::SweepConfig;
use crate::harness::e2e::{Receiver, Simulation};
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub receiver: String,
    pub snr_db: f64,
    pub bits: u64,
    pub bit_errors: u64,
    pub ber: f64,
    pub blocks: u64,
    pub codewords: u64,
    pub codeword_errors: u64,
    pub bler: f64,
    pub seed: u64,
}

pub fn block_seed(master: u64, snr_db: f64, block: u64) -> u64 {
    seed::derive(master, &[snr_db.to_bits(), block])
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn run_point(sim: &Simulation, receiver: &Receiver, snr_db: f64, sweep: &SweepConfig) -> Result<SweepPoint> {
    let (mut bits, mut bit_errors, mut blocks, mut codewords, mut codeword_errors) = (0u64, 0u64, 0u64, 0u64, 0u64);
    loop {
        let end = (blocks + sweep.round_blocks).min(sweep.max_blocks);
        let outcomes: Vec<_> = (blocks..end)
            .into_par_iter()
            .map(|b| sim.run_block(receiver, snr_db, block_seed(sweep.seed, snr_db, b)))
            .collect::<Result<_>>()?;
        for o in outcomes {
            bits += o.tx_bits.len() as u64;
            bit_errors += o.bit_errors;
            codewords += o.codewords;
            codeword_errors += o.codeword_errors;
        }
        blocks = end;
        let enough = bits >= sweep.min_bits && bit_errors >= sweep.target_errors;
        if enough || bits >= sweep.max_bits || blocks >= sweep.max_blocks {
            break;
        }
    }
    Ok(SweepPoint {
        receiver: receiver.id(),
        snr_db,
        bits,
        bit_errors,
        ber: ratio(bit_errors, bits),
        blocks,
        codewords,
        codeword_errors,
        bler: ratio(codeword_errors, codewords),
        seed: sweep.seed,
    })
}

/// One point per (receiver, SNR), receivers outermost.
pub fn ber_sweep(sim: &Simulation, receivers: &[Receiver], sweep: &SweepConfig) -> Result<Vec<SweepPoint>> {
    if sweep.snr_db.is_empty() {
        return Err(Error::contract("ber_sweep", "SNR list is empty"));
    }
    let mut points = Vec::with_capacity(receivers.len() * sweep.snr_db.len());
    for rx in receivers {
        for &snr in &sweep.snr_db {
            points.push(run_point(sim, rx, snr, sweep)?);
        }
    }
    Ok(points)
}

fn csv_error(e: csv::Error) -> Error {
    Error::Results(e.to_string())
}

pub fn results_to_csv(points: &[SweepPoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in points {
        w.serialize(p).map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Results(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn parse_results_csv(text: &str) -> Result<Vec<SweepPoint>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(csv_error)
}

/// BER table with one row per SNR and one column per receiver.
#[derive(Clone, Debug, PartialEq)]
pub struct PlotData {
    pub receivers: Vec<String>,
    pub snr_db: Vec<f64>,
    /// `ber[snr index][receiver index]`; `None` where no point was run.
    pub ber: Vec<Vec<Option<f64>>>,
}

impl PlotData {
    pub fn from_points(points: &[SweepPoint]) -> Self {
        let mut receivers: Vec<String> = Vec::new();
        let mut snr_db: Vec<f64> = Vec::new();
        for p in points {
            if !receivers.contains(&p.receiver) {
                receivers.push(p.receiver.clone());
            }
            if !snr_db.iter().any(|s| s.to_bits() == p.snr_db.to_bits()) {
                snr_db.push(p.snr_db);
            }
        }
        snr_db.sort_by(f64::total_cmp);
        let mut ber = vec![vec![None; receivers.len()]; snr_db.len()];
        for p in points {
            let r = receivers.iter().position(|x| *x == p.receiver).unwrap();
            let s = snr_db.iter().position(|x| x.to_bits() == p.snr_db.to_bits()).unwrap();
            ber[s][r] = Some(p.ber);
        }
        PlotData { receivers, snr_db, ber }
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header = std::iter::once("snr_db".to_string()).chain(self.receivers.iter().cloned());
        w.write_record(header).map_err(csv_error)?;
        for (snr, row) in self.snr_db.iter().zip(&self.ber) {
            let fields = std::iter::once(snr.to_string())
                .chain(row.iter().map(|v| v.map(|b| b.to_string()).unwrap_or_default()));
            w.write_record(fields).map_err(csv_error)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Results(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers().map_err(csv_error)?.clone();
        if header.get(0) != Some("snr_db") {
            return Err(Error::Results("plot data must start with an snr_db column".into()));
        }
        let receivers: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Results(format!("`{s}` is not a number")))
        };
        let (mut snr_db, mut ber) = (Vec::new(), Vec::new());
        for rec in r.records() {
            let rec = rec.map_err(csv_error)?;
            snr_db.push(num(&rec[0])?);
            ber.push(
                rec.iter()
                    .skip(1)
                    .map(|f| if f.is_empty() { Ok(None) } else { num(f).map(Some) })
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Ok(PlotData { receivers, snr_db, ber })
    }
}

pub fn write_outputs(points: &[SweepPoint], results_csv: &Path, plot_csv: &Path) -> Result<()> {
    std::fs::write(results_csv, results_to_csv(points)?).map_err(|e| Error::io(results_csv, e))?;
    std::fs::write(plot_csv, PlotData::from_points(points).to_csv()?).map_err(|e| Error::io(plot_csv, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(rx: &str, snr: f64, ber: f64) -> SweepPoint {
        SweepPoint {
            receiver: rx.into(),
            snr_db: snr,
            bits: 1000,
            bit_errors: (ber * 1000.0) as u64,
            ber,
            blocks: 2,
            codewords: 4,
            codeword_errors: 1,
            bler: 0.25,
            seed: 3,
        }
    }

    #[test]
    fn results_roundtrip() {
        let pts = vec![point("ls-lmmse", 0.0, 0.125), point("transrx:m.ckpt", 2.5, 0.0)];
        let text = results_to_csv(&pts).unwrap();
        assert!(text.starts_with("receiver,snr_db,bits,bit_errors,ber,"));
        assert_eq!(parse_results_csv(&text).unwrap(), pts);
    }

    #[test]
    fn plot_roundtrip_with_gaps() {
        let pts = vec![point("a", 4.0, 0.5), point("a", 0.0, 0.25), point("b", 0.0, 0.125)];
        let plot = PlotData::from_points(&pts);
        assert_eq!(plot.snr_db, vec![0.0, 4.0]);
        assert_eq!(plot.ber[1], vec![Some(0.5), None]);
        let text = plot.to_csv().unwrap();
        assert_eq!(PlotData::parse(&text).unwrap(), plot);
        assert!(PlotData::parse("x,a\n1,2\n").is_err());
    }
}
