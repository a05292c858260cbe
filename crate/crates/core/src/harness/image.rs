//! Image transmission demo: PGM/PPM in, pixels through the coded link,
//! PGM/PPM out, PSNR against the original.

use std::fmt;
use std::io::Cursor;
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageFormat};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::harness::e2e::{Receiver, Simulation};
use crate::harness::sweep::block_seed;

/// 8-bit grayscale or RGB raster, samples row-major and interleaved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    /// 1 (gray) or 3 (RGB).
    pub channels: u8,
    pub pixels: Vec<u8>,
}

const EXPECTED: &str = "expected a PGM (P2/P5) or PPM (P3/P6) file with maxval <= 255";

impl Image {
    pub fn new(width: u32, height: u32, channels: u8, pixels: Vec<u8>) -> Result<Self> {
        if !matches!(channels, 1 | 3) {
            return Err(Error::Image(format!("{channels} channels; {EXPECTED}")));
        }
        if pixels.len() != width as usize * height as usize * channels as usize || width == 0 || height == 0 {
            return Err(Error::Image(format!(
                "{} samples for a {width}×{height}×{channels} image",
                pixels.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if !(bytes.len() >= 2 && bytes[0] == b'P' && matches!(bytes[1], b'2' | b'3' | b'5' | b'6')) {
            return Err(Error::Image(format!("unsupported format; {EXPECTED}")));
        }
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Pnm)
            .map_err(|e| Error::Image(format!("{e}; {EXPECTED}")))?;
        let (w, h) = (img.width(), img.height());
        match img {
            DynamicImage::ImageLuma8(buf) => Self::new(w, h, 1, buf.into_raw()),
            DynamicImage::ImageRgb8(buf) => Self::new(w, h, 3, buf.into_raw()),
            _ => Err(Error::Image(format!("16-bit samples are not supported; {EXPECTED}"))),
        }
    }

    /// Binary (P5/P6) or plain-text (P2/P3) encoding.
    pub fn encode(&self, ascii: bool) -> Result<Vec<u8>> {
        let enc = if ascii {
            SampleEncoding::Ascii
        } else {
            SampleEncoding::Binary
        };
        let (subtype, color) = match self.channels {
            1 => (PnmSubtype::Graymap(enc), ExtendedColorType::L8),
            _ => (PnmSubtype::Pixmap(enc), ExtendedColorType::Rgb8),
        };
        let mut out = Cursor::new(Vec::new());
        PnmEncoder::new(&mut out)
            .with_subtype(subtype)
            .write_image(&self.pixels, self.width, self.height, color)
            .map_err(|e| Error::Image(e.to_string()))?;
        Ok(out.into_inner())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| match e {
            Error::Image(msg) => Error::Image(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode(false)?).map_err(|e| Error::io(path, e))
    }

    /// Every sample as 8 bits, most significant first.
    pub fn to_bits(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .flat_map(|&b| (0..8).rev().map(move |k| (b >> k) & 1))
            .collect()
    }

    /// Inverse of [`Image::to_bits`]; extra trailing bits are ignored.
    pub fn with_bits(&self, bits: &[u8]) -> Result<Self> {
        if bits.len() < self.pixels.len() * 8 {
            return Err(Error::Image(format!(
                "{} bits for {} samples",
                bits.len(),
                self.pixels.len()
            )));
        }
        let pixels = bits
            .chunks(8)
            .take(self.pixels.len())
            .map(|c| c.iter().fold(0u8, |acc, &b| (acc << 1) | (b & 1)))
            .collect();
        Self::new(self.width, self.height, self.channels, pixels)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Psnr {
    Finite(f64),
    /// The images are identical.
    Infinite,
}

impl Psnr {
    /// Infinite counts as larger than any finite value.
    pub fn at_least(self, other: Psnr) -> bool {
        match (self, other) {
            (Psnr::Infinite, _) => true,
            (Psnr::Finite(_), Psnr::Infinite) => false,
            (Psnr::Finite(a), Psnr::Finite(b)) => a >= b,
        }
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Finite(db) => write!(f, "{db:.4} dB"),
            Psnr::Infinite => write!(f, "inf"),
        }
    }
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> Psnr {
    if mse == 0.0 {
        Psnr::Infinite
    } else {
        Psnr::Finite(10.0 * (peak * peak / mse).log10())
    }
}

pub fn psnr(reference: &Image, reconstructed: &Image, peak: f64) -> Result<Psnr> {
    if !(peak > 0.0) {
        return Err(Error::contract("psnr", "peak must be positive"));
    }
    if (reference.width, reference.height, reference.channels)
        != (reconstructed.width, reconstructed.height, reconstructed.channels)
    {
        return Err(Error::contract(
            "psnr",
            format!(
                "{}×{}×{} vs {}×{}×{}",
                reference.width,
                reference.height,
                reference.channels,
                reconstructed.width,
                reconstructed.height,
                reconstructed.channels
            ),
        ));
    }
    let sse: f64 = reference
        .pixels
        .iter()
        .zip(&reconstructed.pixels)
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum();
    Ok(psnr_from_mse(sse / reference.pixels.len() as f64, peak))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageDemo {
    pub image: Image,
    pub psnr: Psnr,
    pub bits: u64,
    pub bit_errors: u64,
    pub blocks: u64,
}

/// Sends `image` through `receiver` at `snr_db`. Codewords the decoder
/// cannot fix are kept as decoded, so residual errors show up as corrupted
/// pixels.
pub fn image_demo(sim: &Simulation, image: &Image, receiver: &Receiver, snr_db: f64, seed: u64) -> Result<ImageDemo> {
    let bits = image.to_bits();
    let k = sim.link.code.k();
    let per_block = sim.link.info_bits_per_block();
    let blocks = bits.len().div_ceil(per_block);
    let received: Vec<Vec<u8>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut chunk = bits[b * per_block..bits.len().min((b + 1) * per_block)].to_vec();
            chunk.resize(per_block, 0);
            let info = chunk.chunks(k).map(<[u8]>::to_vec).collect();
            let out = sim.run_block_with(receiver, info, snr_db, block_seed(seed, snr_db, b as u64))?;
            Ok(out.rx_bits)
        })
        .collect::<Result<_>>()?;
    let rx_bits: Vec<u8> = received.concat();
    let rebuilt = image.with_bits(&rx_bits)?;
    let bit_errors = bits.iter().zip(&rx_bits).filter(|(a, b)| a != b).count() as u64;
    Ok(ImageDemo {
        psnr: psnr(image, &rebuilt, 255.0)?,
        image: rebuilt,
        bits: bits.len() as u64,
        bit_errors,
        blocks: blocks as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient(w: u32, h: u32, channels: u8) -> Image {
        let n = (w * h) as usize * channels as usize;
        Image::new(w, h, channels, (0..n).map(|i| (i * 37 % 256) as u8).collect()).unwrap()
    }

    #[test]
    fn pnm_roundtrip_all_variants() {
        for channels in [1, 3] {
            let img = gradient(5, 3, channels);
            for ascii in [false, true] {
                let bytes = img.encode(ascii).unwrap();
                let magic = match (channels, ascii) {
                    (1, true) => b"P2",
                    (1, false) => b"P5",
                    (_, true) => b"P3",
                    _ => b"P6",
                };
                assert_eq!(&bytes[..2], magic);
                assert_eq!(Image::decode(&bytes).unwrap(), img);
            }
        }
    }

    #[test]
    fn handwritten_plain_pgm() {
        let img = Image::decode(b"P2\n# c\n2 2\n255\n0 10\n200 255\n").unwrap();
        assert_eq!(img.pixels, vec![0, 10, 200, 255]);
        assert_eq!(img.channels, 1);
    }

    #[test]
    fn unsupported_inputs_name_the_format() {
        for bytes in [&b"\x89PNG\r\n"[..], b"P7\n", b"P5\n2 1\n65535\n\0\0\0\0"] {
            match Image::decode(bytes) {
                Err(Error::Image(msg)) => assert!(msg.contains("PGM"), "{msg}"),
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn bits_are_msb_first() {
        let img = Image::new(2, 1, 1, vec![0b1000_0001, 0x0f]).unwrap();
        assert_eq!(img.to_bits(), vec![1, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 1, 1, 1]);
        assert_eq!(img.with_bits(&img.to_bits()).unwrap(), img);
    }

    #[test]
    fn psnr_spot_values() {
        let a = gradient(4, 4, 1);
        assert_eq!(psnr(&a, &a, 255.0).unwrap(), Psnr::Infinite);
        match psnr_from_mse(1.0, 255.0) {
            Psnr::Finite(db) => assert!((db - 48.1308).abs() < 1e-4),
            p => panic!("{p:?}"),
        }
        assert_eq!(psnr_from_mse(255.0 * 255.0, 255.0), Psnr::Finite(0.0));
        assert!(psnr(&a, &gradient(4, 4, 3), 255.0).is_err());
        assert!(Psnr::Infinite.at_least(Psnr::Finite(1e9)));
        assert!(!Psnr::Finite(3.0).at_least(Psnr::Infinite));
    }
}
