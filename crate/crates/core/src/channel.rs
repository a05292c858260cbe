//! Frequency-domain tapped-delay-line Rayleigh channel.
//!
//! Each (antenna, tap) gain evolves over OFDM symbols as a sum of
//! sinusoids with random arrival angles and phases (Jakes spectrum at the
//! maximum Doppler `v·f_c/c`). The channel is held constant within one OFDM
//! symbol, and the per-RE response is the discrete Fourier sum over taps at
//! each subcarrier frequency.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::modem::{ResourceGrid, ResourceGridSpec};
use crate::seed;

pub const SPEED_OF_LIGHT: f64 = 3e8;
pub const DEFAULT_CARRIER_HZ: f64 = 28e9;
pub const DEFAULT_SUBCARRIER_SPACING_HZ: f64 = 240e3;
pub const DEFAULT_DELAY_SPREAD_S: f64 = 266e-9;
pub const SINUSOIDS_PER_TAP: usize = 32;

/// OFDM symbol period including cyclic prefix: fourteen symbols fill a slot
/// of `1 ms · 15 kHz / Δf`.
pub fn symbol_period(subcarrier_spacing_hz: f64) -> f64 {
    1e-3 * 15e3 / subcarrier_spacing_hz / 14.0
}

/// Noise variance for a given Es/N0 per receive antenna at unit symbol
/// energy.
pub fn snr_to_noise_var(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TdlProfile {
    name: String,
    delays_s: Vec<f64>,
    powers: Vec<f64>,
}

impl TdlProfile {
    pub fn new(name: impl Into<String>, taps: Vec<(f64, f64)>) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::contract("tdl profile", "at least one tap is required"));
        }
        if taps
            .iter()
            .any(|&(d, p)| !(d >= 0.0) || !(p >= 0.0) || !d.is_finite() || !p.is_finite())
        {
            return Err(Error::contract(
                "tdl profile",
                "delays and powers must be finite and non-negative",
            ));
        }
        let mut taps = taps;
        taps.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = taps.iter().map(|t| t.1).sum();
        if total <= 0.0 {
            return Err(Error::contract("tdl profile", "total tap power must be positive"));
        }
        Ok(TdlProfile {
            name: name.into(),
            delays_s: taps.iter().map(|t| t.0).collect(),
            powers: taps.iter().map(|t| t.1 / total).collect(),
        })
    }

    /// Exponential power-delay profile on a 60 ns tap grid, decay tuned so
    /// the discrete RMS delay spread equals `rms_s`.
    pub fn exponential(name: &str, rms_s: f64) -> Self {
        const TAPS: usize = 24;
        const SPACING: f64 = 60e-9;
        let build = |decay: f64| {
            let taps = (0..TAPS)
                .map(|k| {
                    let d = k as f64 * SPACING;
                    (d, (-d / decay).exp())
                })
                .collect();
            TdlProfile::new(name, taps).expect("valid taps")
        };
        let (mut lo, mut hi) = (1e-9, 2e-6);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if build(mid).rms_delay_spread() < rms_s {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        build(0.5 * (lo + hi))
    }

    /// The preset used for training: exponential decay, 266 ns RMS.
    pub fn uma_like() -> Self {
        Self::exponential("uma-like", DEFAULT_DELAY_SPREAD_S)
    }

    /// Clustered profile (six clusters of three rays, strongest cluster
    /// delayed) scaled to 266 ns RMS. Used as the out-of-distribution test
    /// channel.
    pub fn cdl_like() -> Self {
        const CLUSTERS: [(f64, f64); 6] = [
            (0.0, -3.0),
            (0.35, 0.0),
            (0.6, -2.0),
            (1.2, -6.0),
            (2.0, -9.0),
            (3.1, -14.0),
        ];
        const RAYS: [(f64, f64); 3] = [(0.0, 0.0), (0.04, -1.5), (0.08, -3.0)];
        let taps: Vec<(f64, f64)> = CLUSTERS
            .iter()
            .flat_map(|&(c, cp)| RAYS.iter().map(move |&(r, rp)| (c + r, 10f64.powf((cp + rp) / 10.0))))
            .collect();
        let unit = TdlProfile::new("cdl-like", taps).expect("valid taps");
        unit.scaled_to_rms(DEFAULT_DELAY_SPREAD_S)
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "uma-like" => Ok(Self::uma_like()),
            "cdl-like" => Ok(Self::cdl_like()),
            other => Err(Error::contract(
                "tdl profile",
                format!("unknown preset `{other}` (expected uma-like or cdl-like)"),
            )),
        }
    }

    /// Two-column CSV `delay_s,power_linear`; `#` starts a comment and a
    /// non-numeric first line is treated as a header.
    pub fn from_csv(name: &str, text: &str) -> Result<Self> {
        let mut taps = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let parsed = (fields.len() == 2)
                .then(|| Some((fields[0].parse::<f64>().ok()?, fields[1].parse::<f64>().ok()?)))
                .flatten();
            match parsed {
                Some(t) => taps.push(t),
                None if lineno == 0 && taps.is_empty() => continue,
                None => {
                    return Err(Error::Config {
                        line: lineno + 1,
                        detail: format!("expected `delay_s,power_linear`, got `{line}`"),
                    })
                }
            }
        }
        Self::new(name, taps)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&path.display().to_string(), &text)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn delays(&self) -> &[f64] {
        &self.delays_s
    }

    pub fn powers(&self) -> &[f64] {
        &self.powers
    }

    pub fn mean_delay(&self) -> f64 {
        self.delays_s.iter().zip(&self.powers).map(|(d, p)| d * p).sum()
    }

    pub fn rms_delay_spread(&self) -> f64 {
        let mean = self.mean_delay();
        let second: f64 = self.delays_s.iter().zip(&self.powers).map(|(d, p)| d * d * p).sum();
        (second - mean * mean).max(0.0).sqrt()
    }

    pub fn scaled_to_rms(&self, rms_s: f64) -> Self {
        let current = self.rms_delay_spread();
        let factor = if current > 0.0 { rms_s / current } else { 1.0 };
        TdlProfile {
            name: self.name.clone(),
            delays_s: self.delays_s.iter().map(|d| d * factor).collect(),
            powers: self.powers.clone(),
        }
    }

    /// `E[H(f + Δf) · H*(f)] = Σ_l P_l · exp(-j2πΔf·τ_l)`.
    pub fn frequency_correlation(&self, delta_f: f64) -> Complex64 {
        self.delays_s
            .iter()
            .zip(&self.powers)
            .map(|(&d, &p)| Complex64::from_polar(p, -2.0 * PI * delta_f * d))
            .sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DopplerSpec {
    pub speed_kmh: f64,
    pub carrier_hz: f64,
}

impl DopplerSpec {
    pub fn new(speed_kmh: f64, carrier_hz: f64) -> Result<Self> {
        if !(speed_kmh >= 0.0) || !(carrier_hz > 0.0) {
            return Err(Error::contract(
                "doppler",
                format!("speed must be >= 0 and carrier > 0, got {speed_kmh} km/h at {carrier_hz} Hz"),
            ));
        }
        Ok(DopplerSpec { speed_kmh, carrier_hz })
    }

    pub fn speed_mps(&self) -> f64 {
        self.speed_kmh / 3.6
    }

    pub fn max_doppler_hz(&self) -> f64 {
        self.speed_mps() * self.carrier_hz / SPEED_OF_LIGHT
    }
}

/// True per-RE channel response plus noise power for one slot.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRealization {
    num_symbols: usize,
    num_subcarriers: usize,
    num_antennas: usize,
    /// Indexed like [`ResourceGrid`]: `(symbol, subcarrier, antenna)`.
    h: Vec<Complex64>,
    noise_var: f64,
    seed: u64,
}

impl ChannelRealization {
    pub fn from_values(
        num_symbols: usize,
        num_subcarriers: usize,
        num_antennas: usize,
        h: Vec<Complex64>,
        noise_var: f64,
        seed: u64,
    ) -> Result<Self> {
        if h.len() != num_symbols * num_subcarriers * num_antennas {
            return Err(Error::contract(
                "channel realization",
                "response size does not match grid",
            ));
        }
        if !(noise_var >= 0.0) {
            return Err(Error::contract("channel realization", "noise variance must be >= 0"));
        }
        Ok(ChannelRealization {
            num_symbols,
            num_subcarriers,
            num_antennas,
            h,
            noise_var,
            seed,
        })
    }

    /// Same response everywhere.
    pub fn flat(spec: &ResourceGridSpec, h: Complex64, noise_var: f64, seed: u64) -> Self {
        let n = spec.num_res() * spec.rx_antennas();
        ChannelRealization {
            num_symbols: spec.num_symbols(),
            num_subcarriers: spec.num_subcarriers(),
            num_antennas: spec.rx_antennas(),
            h: vec![h; n],
            noise_var,
            seed,
        }
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

    pub fn response(&self) -> &[Complex64] {
        &self.h
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn get(&self, symbol: usize, subcarrier: usize, antenna: usize) -> Complex64 {
        self.h[(symbol * self.num_subcarriers + subcarrier) * self.num_antennas + antenna]
    }

    /// All antenna responses at one RE.
    pub fn re(&self, symbol: usize, subcarrier: usize) -> &[Complex64] {
        let i = (symbol * self.num_subcarriers + subcarrier) * self.num_antennas;
        &self.h[i..i + self.num_antennas]
    }
}

/// Draws one slot of fading for `spec.rx_antennas()` independent antennas.
pub fn sample_realization(
    profile: &TdlProfile,
    doppler: &DopplerSpec,
    spec: &ResourceGridSpec,
    subcarrier_spacing_hz: f64,
    noise_var: f64,
    seed: u64,
) -> Result<ChannelRealization> {
    if !(subcarrier_spacing_hz > 0.0) {
        return Err(Error::contract(
            "sample_realization",
            "subcarrier spacing must be positive",
        ));
    }
    let (s, f, a) = (spec.num_symbols(), spec.num_subcarriers(), spec.rx_antennas());
    let taps = profile.delays().len();
    let fd = doppler.max_doppler_hz();
    let period = symbol_period(subcarrier_spacing_hz);
    let mut rng = seed::stream(seed, &[seed::tag::CHANNEL]);

    // tap gains over time: [antenna][tap][symbol]
    let mut gains = vec![Complex64::new(0.0, 0.0); a * taps * s];
    let m = SINUSOIDS_PER_TAP;
    for ant in 0..a {
        for (l, &p) in profile.powers().iter().enumerate() {
            let amp = (p / m as f64).sqrt();
            let waves: Vec<(f64, f64)> = (0..m)
                .map(|_| {
                    let angle: f64 = rng.random_range(0.0..2.0 * PI);
                    let phase: f64 = rng.random_range(0.0..2.0 * PI);
                    (2.0 * PI * fd * angle.cos(), phase)
                })
                .collect();
            for i in 0..s {
                let t = i as f64 * period;
                let g: Complex64 = waves
                    .iter()
                    .map(|&(w, phase)| Complex64::from_polar(amp, w * t + phase))
                    .sum();
                gains[(ant * taps + l) * s + i] = g;
            }
        }
    }

    // steering[j][l] = exp(-j2π f_j τ_l)
    let steering: Vec<Complex64> = (0..f)
        .flat_map(|j| {
            let fj = j as f64 * subcarrier_spacing_hz;
            profile
                .delays()
                .iter()
                .map(move |&d| Complex64::from_polar(1.0, -2.0 * PI * fj * d))
        })
        .collect();

    let mut h = vec![Complex64::new(0.0, 0.0); s * f * a];
    for i in 0..s {
        for j in 0..f {
            for ant in 0..a {
                let mut acc = Complex64::new(0.0, 0.0);
                for l in 0..taps {
                    acc += gains[(ant * taps + l) * s + i] * steering[j * taps + l];
                }
                h[(i * f + j) * a + ant] = acc;
            }
        }
    }
    ChannelRealization::from_values(s, f, a, h, noise_var, seed)
}

/// `y = H·x + n` per RE and receive antenna. `x` is a single-antenna
/// transmit grid; noise is circularly-symmetric Gaussian with `E|n|² = σ²`
/// drawn from the realization's seed.
pub fn apply(x: &ResourceGrid, h: &ChannelRealization) -> Result<ResourceGrid> {
    if x.num_antennas() != 1 || x.num_symbols() != h.num_symbols || x.num_subcarriers() != h.num_subcarriers {
        return Err(Error::contract(
            "channel apply",
            format!(
                "transmit grid {}×{}×{} vs channel {}×{}×{}",
                x.num_symbols(),
                x.num_subcarriers(),
                x.num_antennas(),
                h.num_symbols,
                h.num_subcarriers,
                h.num_antennas
            ),
        ));
    }
    let mut rng = seed::stream(h.seed, &[seed::tag::NOISE]);
    let sigma = (h.noise_var / 2.0).sqrt();
    let mut y = ResourceGrid::zeros(h.num_symbols, h.num_subcarriers, h.num_antennas);
    for i in 0..h.num_symbols {
        for j in 0..h.num_subcarriers {
            let xv = x.get(i, j, 0);
            for a in 0..h.num_antennas {
                let mut v = h.get(i, j, a) * xv;
                if sigma > 0.0 {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    v += Complex64::new(sigma * re, sigma * im);
                }
                y.set(i, j, a, v);
            }
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snr_conversion() {
        assert_eq!(snr_to_noise_var(0.0), 1.0);
        assert!((snr_to_noise_var(10.0) - 0.1).abs() < 1e-15);
        assert!((snr_to_noise_var(-3.0) - 1.99526231).abs() < 1e-8);
    }

    #[test]
    fn doppler_at_highway_speed() {
        let d = DopplerSpec::new(120.0, DEFAULT_CARRIER_HZ).unwrap();
        assert!((d.max_doppler_hz() - 3111.111).abs() < 1e-2);
        assert_eq!(DopplerSpec::new(0.0, DEFAULT_CARRIER_HZ).unwrap().max_doppler_hz(), 0.0);
        assert!(DopplerSpec::new(-1.0, 1e9).is_err());
    }

    #[test]
    fn presets_hit_target_delay_spread() {
        for p in [TdlProfile::uma_like(), TdlProfile::cdl_like()] {
            let total: f64 = p.powers().iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
            assert!(p.delays().windows(2).all(|w| w[0] <= w[1]) && p.delays()[0] >= 0.0);
            let rel = (p.rms_delay_spread() - 266e-9).abs() / 266e-9;
            assert!(rel < 0.05, "{}: {}", p.name(), p.rms_delay_spread());
        }
        assert_ne!(TdlProfile::uma_like().powers(), TdlProfile::cdl_like().powers());
    }

    #[test]
    fn csv_profile() {
        let p = TdlProfile::from_csv("x", "delay_s,power_linear\n0,3\n1e-7,1\n").unwrap();
        assert_eq!(p.delays(), &[0.0, 1e-7]);
        assert_eq!(p.powers(), &[0.75, 0.25]);
        assert!(TdlProfile::from_csv("x", "0,1\nbad\n").is_err());
    }

    #[test]
    fn static_single_tap_is_flat() {
        let spec = ResourceGridSpec::new(14, 16, &[2, 11], 1, 2).unwrap();
        let profile = TdlProfile::new("one", vec![(0.0, 1.0)]).unwrap();
        let d = DopplerSpec::new(0.0, DEFAULT_CARRIER_HZ).unwrap();
        let h = sample_realization(&profile, &d, &spec, 240e3, 0.1, 9).unwrap();
        for a in 0..2 {
            let v0 = h.get(0, 0, a);
            for i in 0..14 {
                for j in 0..16 {
                    assert_eq!(h.get(i, j, a), v0);
                }
            }
        }
        assert_ne!(h.get(0, 0, 0), h.get(0, 0, 1));
    }

    #[test]
    fn zero_speed_is_time_invariant() {
        let spec = ResourceGridSpec::new(14, 8, &[2, 11], 1, 2).unwrap();
        let d = DopplerSpec::new(0.0, DEFAULT_CARRIER_HZ).unwrap();
        let h = sample_realization(&TdlProfile::uma_like(), &d, &spec, 240e3, 0.1, 4).unwrap();
        for i in 1..14 {
            for j in 0..8 {
                assert_eq!(h.re(i, j), h.re(0, j));
            }
        }
    }

    #[test]
    fn realization_is_seed_reproducible() {
        let spec = ResourceGridSpec::new(14, 8, &[2, 11], 1, 2).unwrap();
        let d = DopplerSpec::new(90.0, DEFAULT_CARRIER_HZ).unwrap();
        let p = TdlProfile::uma_like();
        let a = sample_realization(&p, &d, &spec, 240e3, 0.1, 77).unwrap();
        let b = sample_realization(&p, &d, &spec, 240e3, 0.1, 77).unwrap();
        let c = sample_realization(&p, &d, &spec, 240e3, 0.1, 78).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(
            apply(&ResourceGrid::zeros(14, 8, 1), &a).unwrap(),
            apply(&ResourceGrid::zeros(14, 8, 1), &b).unwrap()
        );
    }

    #[test]
    fn noiseless_apply_is_exact_multiplication() {
        let spec = ResourceGridSpec::new(3, 4, &[1], 1, 1).unwrap();
        let x_vals: Vec<Complex64> = (0..12).map(|i| Complex64::new(i as f64, 1.0 - i as f64)).collect();
        let x = ResourceGrid::from_values(3, 4, 1, x_vals.clone()).unwrap();
        let unit = ChannelRealization::flat(&spec, Complex64::new(1.0, 0.0), 0.0, 0);
        assert_eq!(apply(&x, &unit).unwrap().values(), &x_vals[..]);
        let twoi = ChannelRealization::flat(&spec, Complex64::new(0.0, 2.0), 0.0, 0);
        let y = apply(&x, &twoi).unwrap();
        for (a, b) in y.values().iter().zip(&x_vals) {
            assert_eq!(*a, Complex64::new(0.0, 2.0) * b);
        }
        let wrong = ResourceGrid::zeros(3, 5, 1);
        assert!(apply(&wrong, &unit).is_err());
    }
}
