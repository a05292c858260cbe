//! Gray-mapped square QAM, soft demapping, and the resource-grid layout.
//!
//! # Bit convention
//!
//! Bits are consumed MSB-first in groups of `N`. Even positions
//! (`b0, b2, ...`) select the in-phase amplitude and odd positions
//! (`b1, b3, ...`) the quadrature amplitude. Per axis with bits
//! `a0 a1 ... a(m-1)` the amplitude is
//!
//! ```text
//! (1 - 2·a0) · (2^(m-1) - (1 - 2·a1) · (2^(m-2) - (1 - 2·a2) · ...))
//! ```
//!
//! so a zero sign bit maps to the positive half-plane and adjacent levels
//! differ in exactly one bit. Points are scaled to unit average energy
//! (QPSK by √2, 16-QAM by √10, 64-QAM by √42).

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq)]
pub struct Constellation {
    bits_per_symbol: usize,
    /// Indexed by the integer label, MSB = first bit.
    points: Vec<Complex64>,
}

fn axis_level(bits: &[u8]) -> f64 {
    let m = bits.len();
    let sign = |b: u8| 1.0 - 2.0 * b as f64;
    let mut level = sign(bits[m - 1]);
    for depth in (0..m - 1).rev() {
        level = sign(bits[depth]) * ((1u32 << (m - 1 - depth)) as f64 - level);
    }
    level
}

impl Constellation {
    /// Square Gray QAM with 2, 4 or 6 bits per symbol.
    pub fn qam(bits_per_symbol: usize) -> Result<Self> {
        if !matches!(bits_per_symbol, 2 | 4 | 6) {
            return Err(Error::contract(
                "constellation",
                format!("bits per symbol must be 2, 4 or 6, got {bits_per_symbol}"),
            ));
        }
        let order = 1usize << bits_per_symbol;
        let scale = (2.0 * (order as f64 - 1.0) / 3.0).sqrt();
        let points = (0..order)
            .map(|label| {
                let bits = Self::label_bits(label, bits_per_symbol);
                let i_bits: Vec<u8> = bits.iter().step_by(2).copied().collect();
                let q_bits: Vec<u8> = bits.iter().skip(1).step_by(2).copied().collect();
                Complex64::new(axis_level(&i_bits), axis_level(&q_bits)) / scale
            })
            .collect();
        Ok(Constellation {
            bits_per_symbol,
            points,
        })
    }

    fn label_bits(label: usize, n: usize) -> Vec<u8> {
        (0..n).map(|b| ((label >> (n - 1 - b)) & 1) as u8).collect()
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.bits_per_symbol
    }

    pub fn order(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    /// Label bits of point `index`, MSB first.
    pub fn label(&self, index: usize) -> Vec<u8> {
        Self::label_bits(index, self.bits_per_symbol)
    }

    pub fn map_bits(&self, bits: &[u8]) -> Result<Vec<Complex64>> {
        let n = self.bits_per_symbol;
        if bits.len() % n != 0 {
            return Err(Error::contract(
                "map_bits",
                format!("{} bits is not a multiple of {n}", bits.len()),
            ));
        }
        bits.chunks(n)
            .map(|group| {
                let mut label = 0usize;
                for &b in group {
                    if b > 1 {
                        return Err(Error::contract("map_bits", format!("bit value {b} is not 0/1")));
                    }
                    label = (label << 1) | b as usize;
                }
                Ok(self.points[label])
            })
            .collect()
    }

    fn check_noise(op: &'static str, noise_var: f64) -> Result<()> {
        if !(noise_var > 0.0) {
            return Err(Error::contract(
                op,
                format!("noise variance must be positive, got {noise_var}"),
            ));
        }
        Ok(())
    }

    /// Exact LLRs `log Σ_{b_k=0} exp(-|y-x|²/σ²) - log Σ_{b_k=1} exp(-|y-x|²/σ²)`,
    /// evaluated with a log-sum-exp per bit class.
    pub fn demap_exact_into(&self, y: Complex64, noise_var: f64, out: &mut [f64]) -> Result<()> {
        Self::check_noise("demap_exact", noise_var)?;
        let n = self.bits_per_symbol;
        let metrics: Vec<f64> = self.points.iter().map(|x| -(y - x).norm_sqr() / noise_var).collect();
        for (k, slot) in out.iter_mut().enumerate().take(n) {
            let shift = n - 1 - k;
            let (mut max0, mut max1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for (label, &m) in metrics.iter().enumerate() {
                if (label >> shift) & 1 == 0 {
                    max0 = max0.max(m);
                } else {
                    max1 = max1.max(m);
                }
            }
            let (mut s0, mut s1) = (0.0, 0.0);
            for (label, &m) in metrics.iter().enumerate() {
                if (label >> shift) & 1 == 0 {
                    s0 += (m - max0).exp();
                } else {
                    s1 += (m - max1).exp();
                }
            }
            *slot = (max0 + s0.ln()) - (max1 + s1.ln());
        }
        Ok(())
    }

    pub fn demap_exact(&self, y: Complex64, noise_var: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.bits_per_symbol];
        self.demap_exact_into(y, noise_var, &mut out)?;
        Ok(out)
    }

    /// Max-log approximation: `(min_{b_k=1} |y-x|² - min_{b_k=0} |y-x|²) / σ²`.
    pub fn demap_maxlog(&self, y: Complex64, noise_var: f64) -> Result<Vec<f64>> {
        Self::check_noise("demap_maxlog", noise_var)?;
        let n = self.bits_per_symbol;
        let dists: Vec<f64> = self.points.iter().map(|x| (y - x).norm_sqr()).collect();
        Ok((0..n)
            .map(|k| {
                let shift = n - 1 - k;
                let (mut d0, mut d1) = (f64::INFINITY, f64::INFINITY);
                for (label, &d) in dists.iter().enumerate() {
                    if (label >> shift) & 1 == 0 {
                        d0 = d0.min(d);
                    } else {
                        d1 = d1.min(d);
                    }
                }
                (d1 - d0) / noise_var
            })
            .collect())
    }
}

/// Layout of one slot: which OFDM symbols carry pilots, the pilot values,
/// and the receive antenna count.
#[derive(Clone, Debug, PartialEq)]
pub struct ResourceGridSpec {
    num_symbols: usize,
    num_subcarriers: usize,
    pilot_symbols: Vec<usize>,
    pilot_seed: u64,
    rx_antennas: usize,
    /// `pilot_symbols.len() × num_subcarriers` unit-modulus QPSK values.
    pilots: Vec<Complex64>,
}

pub const DEFAULT_PILOT_SYMBOLS: [usize; 2] = [2, 11];
pub const DEFAULT_PILOT_SEED: u64 = 0x5eed;

impl ResourceGridSpec {
    pub fn new(
        num_symbols: usize,
        num_subcarriers: usize,
        pilot_symbols: &[usize],
        pilot_seed: u64,
        rx_antennas: usize,
    ) -> Result<Self> {
        if num_symbols == 0 || num_subcarriers == 0 || rx_antennas == 0 {
            return Err(Error::contract(
                "grid spec",
                "symbols, subcarriers and antennas must be positive",
            ));
        }
        let mut pilot_symbols = pilot_symbols.to_vec();
        pilot_symbols.sort_unstable();
        pilot_symbols.dedup();
        if pilot_symbols.iter().any(|&p| p >= num_symbols) {
            return Err(Error::contract(
                "grid spec",
                format!("pilot symbols {pilot_symbols:?} outside 0..{num_symbols}"),
            ));
        }
        if pilot_symbols.len() == num_symbols {
            return Err(Error::contract(
                "grid spec",
                "every OFDM symbol is a pilot; no data capacity",
            ));
        }
        let mut rng = seed::stream(pilot_seed, &[seed::tag::PILOTS]);
        let amp = std::f64::consts::FRAC_1_SQRT_2;
        let pilots = (0..pilot_symbols.len() * num_subcarriers)
            .map(|_| {
                let re = if rng.random::<bool>() { amp } else { -amp };
                let im = if rng.random::<bool>() { amp } else { -amp };
                Complex64::new(re, im)
            })
            .collect();
        Ok(ResourceGridSpec {
            num_symbols,
            num_subcarriers,
            pilot_symbols,
            pilot_seed,
            rx_antennas,
            pilots,
        })
    }

    /// 14 symbols × 128 subcarriers, pilots on symbols 2 and 11, 2 antennas.
    pub fn default_slot() -> Self {
        Self::new(14, 128, &DEFAULT_PILOT_SYMBOLS, DEFAULT_PILOT_SEED, 2).expect("valid default")
    }

    pub fn num_symbols(&self) -> usize {
        self.num_symbols
    }

    pub fn num_subcarriers(&self) -> usize {
        self.num_subcarriers
    }

    pub fn rx_antennas(&self) -> usize {
        self.rx_antennas
    }

    pub fn pilot_symbols(&self) -> &[usize] {
        &self.pilot_symbols
    }

    pub fn pilot_seed(&self) -> u64 {
        self.pilot_seed
    }

    pub fn num_res(&self) -> usize {
        self.num_symbols * self.num_subcarriers
    }

    pub fn is_pilot_symbol(&self, symbol: usize) -> bool {
        self.pilot_symbols.binary_search(&symbol).is_ok()
    }

    /// Pilot on the `p`-th pilot symbol at subcarrier `j`.
    pub fn pilot(&self, p: usize, subcarrier: usize) -> Complex64 {
        self.pilots[p * self.num_subcarriers + subcarrier]
    }

    pub fn data_capacity(&self) -> usize {
        (self.num_symbols - self.pilot_symbols.len()) * self.num_subcarriers
    }

    /// Row-major RE indices (`symbol · F + subcarrier`) of data positions.
    pub fn data_positions(&self) -> Vec<usize> {
        (0..self.num_symbols)
            .filter(|&i| !self.is_pilot_symbol(i))
            .flat_map(|i| (0..self.num_subcarriers).map(move |j| i * self.num_subcarriers + j))
            .collect()
    }

    pub fn with_rx_antennas(&self, rx_antennas: usize) -> Result<Self> {
        Self::new(
            self.num_symbols,
            self.num_subcarriers,
            &self.pilot_symbols,
            self.pilot_seed,
            rx_antennas,
        )
    }
}

/// Complex values indexed `(symbol, subcarrier, antenna)`, antenna fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct ResourceGrid {
    num_symbols: usize,
    num_subcarriers: usize,
    num_antennas: usize,
    values: Vec<Complex64>,
}

impl ResourceGrid {
    pub fn zeros(num_symbols: usize, num_subcarriers: usize, num_antennas: usize) -> Self {
        ResourceGrid {
            num_symbols,
            num_subcarriers,
            num_antennas,
            values: vec![Complex64::new(0.0, 0.0); num_symbols * num_subcarriers * num_antennas],
        }
    }

    pub fn from_values(
        num_symbols: usize,
        num_subcarriers: usize,
        num_antennas: usize,
        values: Vec<Complex64>,
    ) -> Result<Self> {
        if values.len() != num_symbols * num_subcarriers * num_antennas {
            return Err(Error::contract(
                "resource grid",
                format!(
                    "{} values for a {num_symbols}×{num_subcarriers}×{num_antennas} grid",
                    values.len()
                ),
            ));
        }
        Ok(ResourceGrid {
            num_symbols,
            num_subcarriers,
            num_antennas,
            values,
        })
    }

    pub fn num_symbols(&self) -> usize {
        self.num_symbols
    }

    pub fn num_subcarriers(&self) -> usize {
        self.num_subcarriers
    }

    pub fn num_antennas(&self) -> usize {
        self.num_antennas
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    fn index(&self, symbol: usize, subcarrier: usize, antenna: usize) -> usize {
        (symbol * self.num_subcarriers + subcarrier) * self.num_antennas + antenna
    }

    pub fn get(&self, symbol: usize, subcarrier: usize, antenna: usize) -> Complex64 {
        self.values[self.index(symbol, subcarrier, antenna)]
    }

    pub fn set(&mut self, symbol: usize, subcarrier: usize, antenna: usize, v: Complex64) {
        let i = self.index(symbol, subcarrier, antenna);
        self.values[i] = v;
    }

    /// All antenna values at one RE.
    pub fn re(&self, symbol: usize, subcarrier: usize) -> &[Complex64] {
        let i = self.index(symbol, subcarrier, 0);
        &self.values[i..i + self.num_antennas]
    }
}

/// Places data symbols row-major on non-pilot REs and the pilot sequence on
/// pilot symbols of a single-antenna transmit grid.
pub fn grid_map(symbols: &[Complex64], spec: &ResourceGridSpec) -> Result<ResourceGrid> {
    if symbols.len() != spec.data_capacity() {
        return Err(Error::contract(
            "grid_map",
            format!("{} symbols for {} data REs", symbols.len(), spec.data_capacity()),
        ));
    }
    let f = spec.num_subcarriers();
    let mut grid = ResourceGrid::zeros(spec.num_symbols(), f, 1);
    for (p, &i) in spec.pilot_symbols().iter().enumerate() {
        for j in 0..f {
            grid.set(i, j, 0, spec.pilot(p, j));
        }
    }
    for (&re, &s) in spec.data_positions().iter().zip(symbols) {
        grid.set(re / f, re % f, 0, s);
    }
    Ok(grid)
}

/// Per-RE payload over the whole grid (pilot positions included), e.g. the
/// LLR output of a receiver.
#[derive(Clone, Debug, PartialEq)]
pub struct LlrGrid {
    pub per_re: usize,
    pub values: Vec<f64>,
}

/// Extracts the payload at data REs, in the order [`grid_map`] filled them.
pub fn grid_demap(llrs: &LlrGrid, spec: &ResourceGridSpec) -> Result<Vec<f64>> {
    if llrs.per_re == 0 || llrs.values.len() != spec.num_res() * llrs.per_re {
        return Err(Error::contract(
            "grid_demap",
            format!(
                "{} values with {} per RE for {} REs",
                llrs.values.len(),
                llrs.per_re,
                spec.num_res()
            ),
        ));
    }
    let n = llrs.per_re;
    let mut out = Vec::with_capacity(spec.data_capacity() * n);
    for re in spec.data_positions() {
        out.extend_from_slice(&llrs.values[re * n..(re + 1) * n]);
    }
    Ok(out)
}

pub(crate) fn check_grid(op: &'static str, y: &ResourceGrid, spec: &ResourceGridSpec) -> Result<()> {
    if y.num_symbols() != spec.num_symbols()
        || y.num_subcarriers() != spec.num_subcarriers()
        || y.num_antennas() != spec.rx_antennas()
    {
        return Err(Error::contract(
            op,
            format!(
                "received grid {}×{}×{} does not match spec {}×{}×{}",
                y.num_symbols(),
                y.num_subcarriers(),
                y.num_antennas(),
                spec.num_symbols(),
                spec.num_subcarriers(),
                spec.rx_antennas()
            ),
        ));
    }
    Ok(())
}
