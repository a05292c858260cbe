//! Simulation configuration: a TOML file of `key = value` lines grouped in
//! sections. Every key is optional and falls back to the defaults below.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::{TdlProfile, DEFAULT_CARRIER_HZ, DEFAULT_SUBCARRIER_SPACING_HZ};
use crate::error::{Error, Result};
use crate::ldpc::{QcLdpcCode, DEFAULT_LIFTING, DEFAULT_LLR_CLIP, DEFAULT_MAX_ITERS};
use crate::link::Link;
use crate::modem::{Constellation, ResourceGridSpec, DEFAULT_PILOT_SEED, DEFAULT_PILOT_SYMBOLS};
use crate::neural_rx::{PositionalEncoding, TransRxConfig};
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveformConfig {
    pub num_symbols: usize,
    pub num_subcarriers: usize,
    pub subcarrier_spacing_hz: f64,
    pub carrier_hz: f64,
    pub pilot_symbols: Vec<usize>,
    pub pilot_seed: u64,
    pub rx_antennas: usize,
    pub bits_per_symbol: usize,
}

impl Default for WaveformConfig {
    fn default() -> Self {
        WaveformConfig {
            num_symbols: 14,
            num_subcarriers: 128,
            subcarrier_spacing_hz: DEFAULT_SUBCARRIER_SPACING_HZ,
            carrier_hz: DEFAULT_CARRIER_HZ,
            pilot_symbols: DEFAULT_PILOT_SYMBOLS.to_vec(),
            pilot_seed: DEFAULT_PILOT_SEED,
            rx_antennas: 2,
            bits_per_symbol: 6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodeConfig {
    pub lifting: usize,
    /// Base-matrix text file; empty selects the built-in rate-1/2 matrix.
    pub base_matrix: String,
    pub max_iterations: usize,
    pub llr_clip: f64,
}

impl Default for CodeConfig {
    fn default() -> Self {
        CodeConfig {
            lifting: DEFAULT_LIFTING,
            base_matrix: String::new(),
            max_iterations: DEFAULT_MAX_ITERS,
            llr_clip: DEFAULT_LLR_CLIP,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    /// `uma-like`, `cdl-like`, or `csv:<path>` for a custom power-delay
    /// profile.
    pub profile: String,
    pub speed_min_kmh: f64,
    pub speed_max_kmh: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            profile: "uma-like".into(),
            speed_min_kmh: 60.0,
            speed_max_kmh: 120.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// `perfect-csi`, `ls-lmmse`, or `transrx:<checkpoint>`.
    pub receivers: Vec<String>,
    pub snr_db: Vec<f64>,
    pub min_bits: u64,
    pub max_bits: u64,
    pub max_blocks: u64,
    pub target_errors: u64,
    /// Blocks simulated between stopping checks. Fixed so totals do not
    /// depend on the worker count.
    pub round_blocks: u64,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            receivers: vec!["perfect-csi".into(), "ls-lmmse".into()],
            snr_db: vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0],
            min_bits: 100_000,
            max_bits: 10_000_000,
            max_blocks: 10_000,
            target_errors: 100,
            round_blocks: 16,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub num_blocks: usize,
    pub num_heads: usize,
    pub d_model: usize,
    pub ffn_dim: usize,
    /// `sinusoidal-2d` or `none`.
    pub positional_encoding: String,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let d = TransRxConfig::default();
        ModelConfig {
            num_blocks: d.num_blocks,
            num_heads: d.num_heads,
            d_model: d.d_model,
            ffn_dim: d.ffn_dim,
            positional_encoding: d.positional_encoding.as_str().into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub steps: u64,
    pub lr: f64,
    pub snr_min_db: f64,
    pub snr_max_db: f64,
    pub speed_min_kmh: f64,
    pub speed_max_kmh: f64,
    pub seed: u64,
    pub checkpoint_interval: u64,
    pub record_wallclock: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            batch_size: t.batch_size,
            steps: t.steps,
            lr: t.lr,
            snr_min_db: t.snr_range_db.0,
            snr_max_db: t.snr_range_db.1,
            speed_min_kmh: t.speed_range_kmh.0,
            speed_max_kmh: t.speed_range_kmh.1,
            seed: t.seed,
            checkpoint_interval: t.checkpoint_interval,
            record_wallclock: t.record_wallclock,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub results_csv: String,
    pub plot_csv: String,
    pub checkpoint: String,
    pub train_log: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            results_csv: "results.csv".into(),
            plot_csv: "plot.csv".into(),
            checkpoint: "transrx.ckpt".into(),
            train_log: "train_log.csv".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub waveform: WaveformConfig,
    pub code: CodeConfig,
    pub channel: ChannelConfig,
    pub sweep: SweepConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub output: OutputConfig,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl SimConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| Error::Config {
            line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
            detail: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    /// Cross-field checks that the component constructors would otherwise
    /// report later.
    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Err(Error::Config { line: 0, detail });
        let c = &self.channel;
        if !(c.speed_min_kmh >= 0.0 && c.speed_min_kmh <= c.speed_max_kmh) {
            return bad(format!(
                "channel speed range {}..{} is invalid",
                c.speed_min_kmh, c.speed_max_kmh
            ));
        }
        let s = &self.sweep;
        if s.snr_db.is_empty() {
            return bad("sweep.snr_db must list at least one SNR".into());
        }
        if s.snr_db.iter().any(|v| !v.is_finite()) {
            return bad("sweep.snr_db values must be finite".into());
        }
        if s.round_blocks == 0 || s.max_blocks == 0 {
            return bad("sweep.round_blocks and sweep.max_blocks must be positive".into());
        }
        for r in &s.receivers {
            ReceiverSpec::parse(r)?;
        }
        PositionalEncoding::parse(&self.model.positional_encoding)?;
        if self.code.max_iterations == 0 || !(self.code.llr_clip > 0.0) {
            return bad("code.max_iterations and code.llr_clip must be positive".into());
        }
        Ok(())
    }

    pub fn grid_spec(&self) -> Result<ResourceGridSpec> {
        let w = &self.waveform;
        ResourceGridSpec::new(
            w.num_symbols,
            w.num_subcarriers,
            &w.pilot_symbols,
            w.pilot_seed,
            w.rx_antennas,
        )
    }

    pub fn code(&self) -> Result<QcLdpcCode> {
        if self.code.base_matrix.is_empty() {
            QcLdpcCode::with_lifting(self.code.lifting)
        } else {
            QcLdpcCode::load(Path::new(&self.code.base_matrix), self.code.lifting)
        }
    }

    pub fn profile(&self) -> Result<TdlProfile> {
        match self.channel.profile.strip_prefix("csv:") {
            Some(path) => TdlProfile::load_csv(Path::new(path)),
            None => TdlProfile::by_name(&self.channel.profile),
        }
    }

    pub fn link(&self) -> Result<Link> {
        Link::new(
            self.grid_spec()?,
            Constellation::qam(self.waveform.bits_per_symbol)?,
            self.code()?,
            self.profile()?,
            self.waveform.carrier_hz,
            self.waveform.subcarrier_spacing_hz,
        )
    }

    pub fn model_config(&self) -> Result<TransRxConfig> {
        let m = &self.model;
        let cfg = TransRxConfig {
            num_blocks: m.num_blocks,
            num_heads: m.num_heads,
            d_model: m.d_model,
            ffn_dim: m.ffn_dim,
            bits_per_symbol: self.waveform.bits_per_symbol,
            rx_antennas: self.waveform.rx_antennas,
            positional_encoding: PositionalEncoding::parse(&m.positional_encoding)?,
            num_symbols: self.waveform.num_symbols,
            num_subcarriers: self.waveform.num_subcarriers,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            batch_size: t.batch_size,
            steps: t.steps,
            lr: t.lr,
            snr_range_db: (t.snr_min_db, t.snr_max_db),
            speed_range_kmh: (t.speed_min_kmh, t.speed_max_kmh),
            seed: t.seed,
            checkpoint_interval: t.checkpoint_interval,
            record_wallclock: t.record_wallclock,
        }
    }

    pub fn receivers(&self) -> Result<Vec<ReceiverSpec>> {
        self.sweep.receivers.iter().map(|r| ReceiverSpec::parse(r)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ReceiverSpec {
    PerfectCsi,
    LsLmmse,
    TransRx(PathBuf),
}

impl ReceiverSpec {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "perfect-csi" => Ok(ReceiverSpec::PerfectCsi),
            "ls-lmmse" => Ok(ReceiverSpec::LsLmmse),
            other => match other.strip_prefix("transrx:") {
                Some(path) if !path.is_empty() => Ok(ReceiverSpec::TransRx(PathBuf::from(path))),
                _ => Err(Error::Config {
                    line: 0,
                    detail: format!("unknown receiver `{other}` (perfect-csi, ls-lmmse or transrx:<checkpoint>)"),
                }),
            },
        }
    }

    pub fn id(&self) -> String {
        match self {
            ReceiverSpec::PerfectCsi => "perfect-csi".into(),
            ReceiverSpec::LsLmmse => "ls-lmmse".into(),
            ReceiverSpec::TransRx(p) => format!("transrx:{}", p.display()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_to_a_fixpoint() {
        let d = SimConfig::default();
        let text = d.to_text();
        let back = SimConfig::parse(&text).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn defaults_match_reference_system() {
        let d = SimConfig::default();
        assert_eq!(d.waveform.num_symbols, 14);
        assert_eq!(d.waveform.subcarrier_spacing_hz, 240e3);
        assert_eq!(d.waveform.carrier_hz, 28e9);
        assert_eq!(d.waveform.rx_antennas, 2);
        assert_eq!(d.waveform.bits_per_symbol, 6);
        assert_eq!(d.code().unwrap().rate(), 0.5);
        assert_eq!(d.train.lr, 1e-3);
        assert_eq!((d.channel.speed_min_kmh, d.channel.speed_max_kmh), (60.0, 120.0));
        assert_eq!(d.model_config().unwrap(), TransRxConfig::default());
        d.link().unwrap();
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = SimConfig::parse("[waveform]\nnum_subcarriers = 32\n\n[sweep]\nsnr_db = [1.5]\n").unwrap();
        assert_eq!(cfg.waveform.num_subcarriers, 32);
        assert_eq!(cfg.sweep.snr_db, vec![1.5]);
        assert_eq!(cfg.waveform.num_symbols, 14);
    }

    #[test]
    fn errors_name_the_line() {
        match SimConfig::parse("[waveform]\nnum_symbols = 14\nbogus = 3\n") {
            Err(Error::Config { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(SimConfig::parse("[sweep]\nreceivers = [\"deeprx\"]\n").is_err());
        assert!(SimConfig::parse("[sweep]\nsnr_db = []\n").is_err());
    }

    #[test]
    fn receiver_ids() {
        for id in ["perfect-csi", "ls-lmmse", "transrx:a/b.ckpt"] {
            assert_eq!(ReceiverSpec::parse(id).unwrap().id(), id);
        }
        assert!(ReceiverSpec::parse("transrx:").is_err());
    }
}
