//! Classical receiver: least-squares pilot estimation with linear time
//! interpolation, per-RE LMMSE combining across receive antennas, and exact
//! soft demapping.

use num_complex::Complex64;

use crate::channel::ChannelRealization;
use crate::error::{Error, Result};
use crate::modem::{check_grid, Constellation, LlrGrid, ResourceGrid, ResourceGridSpec};

pub const NOISE_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CsiSource {
    LsInterpolated,
    Perfect,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CsiMode {
    Ls,
    Perfect,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelEstimate {
    /// Same `(symbol, subcarrier, antenna)` layout as the received grid.
    pub h: ResourceGrid,
    pub noise_var: f64,
    pub source: CsiSource,
}

/// `Ĥ = y·x*` on pilot symbols, linearly interpolated along the symbol
/// axis and held constant before the first and after the last pilot.
///
/// The noise power is the mean squared deviation of the pilot estimates
/// from a 3-tap moving average across subcarriers, rescaled by 3/2 so that
/// white noise is estimated without bias.
pub fn ls_estimate(y: &ResourceGrid, spec: &ResourceGridSpec) -> Result<ChannelEstimate> {
    check_grid("ls_estimate", y, spec)?;
    let pilots = spec.pilot_symbols();
    if pilots.is_empty() {
        return Err(Error::contract("ls_estimate", "grid has no pilot symbols"));
    }
    let (s, f, a) = (spec.num_symbols(), spec.num_subcarriers(), spec.rx_antennas());

    // raw[p][j][ant]
    let raw: Vec<Complex64> = pilots
        .iter()
        .enumerate()
        .flat_map(|(p, &i)| {
            (0..f).flat_map(move |j| {
                let x = spec.pilot(p, j).conj();
                (0..a).map(move |ant| y.get(i, j, ant) * x)
            })
        })
        .collect();
    let at = |p: usize, j: usize, ant: usize| raw[(p * f + j) * a + ant];

    let mut h = ResourceGrid::zeros(s, f, a);
    for i in 0..s {
        let after = pilots.partition_point(|&p| p <= i);
        let (p0, p1, w) = if after == 0 {
            (0, 0, 0.0)
        } else if after == pilots.len() {
            (after - 1, after - 1, 0.0)
        } else {
            let (lo, hi) = (pilots[after - 1], pilots[after]);
            (after - 1, after, (i - lo) as f64 / (hi - lo) as f64)
        };
        for j in 0..f {
            for ant in 0..a {
                let v = at(p0, j, ant) * (1.0 - w) + at(p1, j, ant) * w;
                h.set(i, j, ant, v);
            }
        }
    }

    let mut noise_var = NOISE_FLOOR;
    if f >= 3 {
        let mut acc = 0.0;
        let mut count = 0usize;
        for p in 0..pilots.len() {
            for j in 1..f - 1 {
                for ant in 0..a {
                    let smooth = (at(p, j - 1, ant) + at(p, j, ant) + at(p, j + 1, ant)) / 3.0;
                    acc += (at(p, j, ant) - smooth).norm_sqr();
                    count += 1;
                }
            }
        }
        noise_var = (1.5 * acc / count as f64).max(NOISE_FLOOR);
    }
    Ok(ChannelEstimate {
        h,
        noise_var,
        source: CsiSource::LsInterpolated,
    })
}

/// Genie estimate: the true response and noise power.
pub fn perfect_estimate(truth: &ChannelRealization) -> Result<ChannelEstimate> {
    let h = ResourceGrid::from_values(
        truth.num_symbols(),
        truth.num_subcarriers(),
        truth.num_antennas(),
        truth.response().to_vec(),
    )?;
    Ok(ChannelEstimate {
        h,
        noise_var: truth.noise_var().max(NOISE_FLOOR),
        source: CsiSource::Perfect,
    })
}

/// Output of the single-stream LMMSE combiner at one RE.
///
/// `symbol` is `ĥᴴy / (‖ĥ‖² + σ̂²)`, which shrinks the transmitted symbol by
/// `bias = ‖ĥ‖² / (‖ĥ‖² + σ̂²)`. Demapping uses the bias-removed form
/// `symbol / bias` whose residual noise variance is `σ̂² / ‖ĥ‖²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Equalized {
    pub symbol: Complex64,
    pub bias: f64,
    pub gain: f64,
    pub noise_var: f64,
}

impl Equalized {
    /// Bias-removed symbol and its noise variance, or `None` when the
    /// channel estimate is zero and nothing can be recovered.
    pub fn unbiased(&self) -> Option<(Complex64, f64)> {
        (self.bias > 0.0 && self.gain > 0.0).then(|| (self.symbol / self.bias, self.noise_var / self.gain))
    }
}

pub fn lmmse_equalize(y: &[Complex64], h: &[Complex64], noise_var: f64) -> Result<Equalized> {
    if y.is_empty() || y.len() != h.len() {
        return Err(Error::contract(
            "lmmse_equalize",
            format!("{} received values for {} channel taps", y.len(), h.len()),
        ));
    }
    if !(noise_var >= 0.0) {
        return Err(Error::contract("lmmse_equalize", "noise variance must be >= 0"));
    }
    let gain: f64 = h.iter().map(|v| v.norm_sqr()).sum();
    let denom = gain + noise_var;
    if denom == 0.0 {
        return Err(Error::SingularEqualizer);
    }
    let matched: Complex64 = h.iter().zip(y).map(|(hv, yv)| hv.conj() * yv).sum();
    Ok(Equalized {
        symbol: matched / denom,
        bias: gain / denom,
        gain,
        noise_var,
    })
}

/// Equalizes and demaps every data RE. Pilot REs are left at zero.
pub fn baseline_receive(
    y: &ResourceGrid,
    spec: &ResourceGridSpec,
    constellation: &Constellation,
    csi: CsiMode,
    truth: Option<&ChannelRealization>,
) -> Result<LlrGrid> {
    check_grid("baseline_receive", y, spec)?;
    let est = match csi {
        CsiMode::Ls => ls_estimate(y, spec)?,
        CsiMode::Perfect => {
            let truth = truth
                .ok_or_else(|| Error::contract("baseline_receive", "perfect CSI requested without the true channel"))?;
            let est = perfect_estimate(truth)?;
            if est.h.num_symbols() != y.num_symbols()
                || est.h.num_subcarriers() != y.num_subcarriers()
                || est.h.num_antennas() != y.num_antennas()
            {
                return Err(Error::contract(
                    "baseline_receive",
                    "true channel shape does not match grid",
                ));
            }
            est
        }
    };
    let n = constellation.bits_per_symbol();
    let f = spec.num_subcarriers();
    let mut values = vec![0.0; spec.num_res() * n];
    for re in spec.data_positions() {
        let (i, j) = (re / f, re % f);
        let eq = lmmse_equalize(y.re(i, j), est.h.re(i, j), est.noise_var)?;
        if let Some((symbol, var)) = eq.unbiased() {
            constellation.demap_exact_into(symbol, var, &mut values[re * n..(re + 1) * n])?;
        }
    }
    Ok(LlrGrid { per_re: n, values })
}
