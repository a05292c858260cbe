//! Binary checkpoint: architecture, weights, AdamW state and the training
//! position, all little-endian.
//!
//! ```text
//! "TRX1"  u32 version
//! u32 × 9 config: blocks, heads, d_model, ffn_dim, bits, antennas,
//!                 positional (0 none, 1 sinusoidal-2d), symbols, subcarriers
//! u32 count, count × record                      parameters
//! f64 × 5 lr, beta1, beta2, eps, weight_decay
//! u64 adam step
//! u32 count, count × record                      first moments
//! u32 count, count × record                      second moments
//! u64 training step, u64 master seed
//!
//! record = u32 name_len, name bytes (UTF-8), u32 rank, u32 × rank dims,
//!          f32 × prod(dims) values
//! ```

use std::path::Path;

use transrx_numerics::{AdamW, ParamStore, Tensor};

use crate::error::{Error, Result};
use crate::neural_rx::{PositionalEncoding, TransRxConfig, TransRxModel};

pub const MAGIC: &[u8; 4] = b"TRX1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: TransRxModel<f32>,
    pub optimizer: AdamW,
    pub step: u64,
    pub seed: u64,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn len(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("extent {v} exceeds u32")))?;
        self.u32(v);
        Ok(())
    }

    fn record(&mut self, name: &str, shape: &[usize], values: &[f32]) -> Result<()> {
        self.len(name.len())?;
        self.0.extend_from_slice(name.as_bytes());
        self.len(shape.len())?;
        for &d in shape {
            self.len(d)?;
        }
        for v in values {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
        Ok(())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        Ok(self.u32(what)? as usize)
    }

    fn record(&mut self) -> Result<(String, Vec<usize>, Vec<f32>)> {
        let name_len = self.usize("name length")?;
        let name = std::str::from_utf8(self.take(name_len, "name")?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = self.usize("rank")?;
        if rank == 0 || rank > 8 {
            return Err(Error::Checkpoint(format!("`{name}`: implausible rank {rank}")));
        }
        let shape = (0..rank).map(|_| self.usize("dims")).collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Checkpoint(format!("`{name}`: bad shape {shape:?}")))?;
        let bytes = self.take(
            numel
                .checked_mul(4)
                .ok_or_else(|| Error::Checkpoint("size overflow".into()))?,
            "values",
        )?;
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((name, shape, values))
    }
}

fn config_fields(c: &TransRxConfig) -> [usize; 9] {
    let pe = match c.positional_encoding {
        PositionalEncoding::None => 0,
        PositionalEncoding::Sinusoidal2d => 1,
    };
    [
        c.num_blocks,
        c.num_heads,
        c.d_model,
        c.ffn_dim,
        c.bits_per_symbol,
        c.rx_antennas,
        pe,
        c.num_symbols,
        c.num_subcarriers,
    ]
}

pub fn encode(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(FORMAT_VERSION);
    for v in config_fields(ckpt.model.config()) {
        w.len(v)?;
    }
    let params = ckpt.model.params();
    w.len(params.len())?;
    for p in params.iter() {
        w.record(&p.name, p.tensor.shape(), p.tensor.data())?;
    }
    let opt = &ckpt.optimizer;
    for v in [opt.lr, opt.beta1, opt.beta2, opt.eps, opt.weight_decay] {
        w.f64(v);
    }
    w.u64(params.iter().map(|p| p.step).max().unwrap_or(0));
    for moments in [0, 1] {
        w.len(params.len())?;
        for p in params.iter() {
            let m = if moments == 0 {
                &p.first_moment
            } else {
                &p.second_moment
            };
            w.record(&p.name, p.tensor.shape(), m)?;
        }
    }
    w.u64(ckpt.step);
    w.u64(ckpt.seed);
    Ok(w.0)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::CheckpointVersion {
            expected: FORMAT_VERSION,
            found: version,
        });
    }
    let f: Vec<usize> = (0..9).map(|_| r.usize("config")).collect::<Result<_>>()?;
    let positional_encoding = match f[6] {
        0 => PositionalEncoding::None,
        1 => PositionalEncoding::Sinusoidal2d,
        other => return Err(Error::Checkpoint(format!("unknown positional encoding code {other}"))),
    };
    let config = TransRxConfig {
        num_blocks: f[0],
        num_heads: f[1],
        d_model: f[2],
        ffn_dim: f[3],
        bits_per_symbol: f[4],
        rx_antennas: f[5],
        positional_encoding,
        num_symbols: f[7],
        num_subcarriers: f[8],
    };
    config
        .validate()
        .map_err(|e| Error::Checkpoint(format!("invalid stored config: {e}")))?;

    let mut store = ParamStore::new();
    let count = r.usize("parameter count")?;
    for _ in 0..count {
        let (name, shape, values) = r.record()?;
        store
            .insert(name, Tensor::new(shape, values)?)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
    }
    let mut h = [0.0; 5];
    for v in &mut h {
        *v = r.f64("optimizer hyperparameters")?;
    }
    let optimizer = AdamW {
        lr: h[0],
        beta1: h[1],
        beta2: h[2],
        eps: h[3],
        weight_decay: h[4],
    };
    let adam_step = r.u64("adam step")?;
    for moments in [0, 1] {
        let n = r.usize("moment count")?;
        if n != store.len() {
            return Err(Error::Checkpoint(format!(
                "{n} moment records for {} parameters",
                store.len()
            )));
        }
        for _ in 0..n {
            let (name, shape, values) = r.record()?;
            let id = store
                .id(&name)
                .ok_or_else(|| Error::Checkpoint(format!("moment for unknown parameter `{name}`")))?;
            let p = store.get_mut(id);
            if p.tensor.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!("moment shape mismatch for `{name}`")));
            }
            if moments == 0 {
                p.first_moment = values;
            } else {
                p.second_moment = values;
            }
            p.step = adam_step;
        }
    }
    let step = r.u64("training step")?;
    let seed = r.u64("seed")?;
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let model = TransRxModel::from_parts(config, store)?;
    Ok(Checkpoint {
        model,
        optimizer,
        step,
        seed,
    })
}

pub fn save(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = encode(ckpt)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Loads a checkpoint and refuses it unless its architecture equals
/// `expected`.
pub fn load_expecting(path: &Path, expected: &TransRxConfig) -> Result<Checkpoint> {
    let ckpt = load(path)?;
    if ckpt.model.config() != expected {
        return Err(Error::Checkpoint(format!(
            "{} was trained for {:?}, but {:?} was requested",
            path.display(),
            ckpt.model.config(),
            expected
        )));
    }
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural_rx::HeadInit;

    fn sample() -> Checkpoint {
        let cfg = TransRxConfig {
            num_blocks: 1,
            num_heads: 2,
            d_model: 8,
            ffn_dim: 4,
            bits_per_symbol: 2,
            rx_antennas: 1,
            positional_encoding: PositionalEncoding::Sinusoidal2d,
            num_symbols: 2,
            num_subcarriers: 3,
        };
        let mut model = TransRxModel::init_with(cfg, 5, HeadInit::Random).unwrap();
        for (k, p) in model.params_mut().iter_mut().enumerate() {
            p.first_moment.iter_mut().for_each(|v| *v = 0.25 * k as f32);
            p.second_moment.iter_mut().for_each(|v| *v = 0.5 + k as f32);
            p.step = 7;
        }
        Checkpoint {
            model,
            optimizer: AdamW::default(),
            step: 42,
            seed: 99,
        }
    }

    #[test]
    fn roundtrip_is_exact() {
        let ck = sample();
        let bytes = encode(&ck).unwrap();
        assert_eq!(&bytes[..4], b"TRX1");
        let back = decode(&bytes).unwrap();
        assert_eq!(back.model.params(), ck.model.params());
        assert_eq!(back.model.config(), ck.model.config());
        assert_eq!(back.optimizer, ck.optimizer);
        assert_eq!((back.step, back.seed), (42, 99));
        assert_eq!(encode(&back).unwrap(), bytes);
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let bytes = encode(&sample()).unwrap();
        for cut in [0, 3, 8, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(decode(&bytes[..cut]), Err(Error::Checkpoint(_))), "cut {cut}");
        }
        let mut wrong = bytes.clone();
        wrong[4..8].copy_from_slice(&7u32.to_le_bytes());
        match decode(&wrong) {
            Err(Error::CheckpointVersion { expected, found }) => assert_eq!((expected, found), (1, 7)),
            other => panic!("expected version error, got {other:?}"),
        }
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(decode(&bad_magic).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(decode(&extra).is_err());
    }
}
