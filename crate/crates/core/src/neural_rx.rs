//! TransRx: a transformer encoder over the received resource grid that emits
//! per-RE bit LLRs.
//!
//! Every resource element is one token with features
//! `[Re y (per antenna), Im y (per antenna), ln σ²]`, ordered row-major over
//! `(symbol, subcarrier)`. The network is
//!
//! ```text
//! dense(d) [+ 2-D sinusoidal position table]
//!   → N × { x = LN(x + MHSA(x)); x = LN(x + W2·relu(W1·x)) }
//!   → dense(bits_per_symbol)
//! ```

use rand::Rng;
use transrx_numerics::{Graph, ParamId, ParamStore, Real, Tensor, Var};

use crate::error::{Error, Result};
use crate::modem::{check_grid, LlrGrid, ResourceGrid, ResourceGridSpec};
use crate::seed;

pub const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PositionalEncoding {
    None,
    Sinusoidal2d,
}

impl PositionalEncoding {
    pub fn as_str(self) -> &'static str {
        match self {
            PositionalEncoding::None => "none",
            PositionalEncoding::Sinusoidal2d => "sinusoidal-2d",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PositionalEncoding::None),
            "sinusoidal-2d" => Ok(PositionalEncoding::Sinusoidal2d),
            other => Err(Error::contract(
                "positional encoding",
                format!("expected none or sinusoidal-2d, got `{other}`"),
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TransRxConfig {
    pub num_blocks: usize,
    pub num_heads: usize,
    pub d_model: usize,
    pub ffn_dim: usize,
    pub bits_per_symbol: usize,
    pub rx_antennas: usize,
    pub positional_encoding: PositionalEncoding,
    /// Grid extent the position table and checkpoints are built for.
    pub num_symbols: usize,
    pub num_subcarriers: usize,
}

impl Default for TransRxConfig {
    fn default() -> Self {
        TransRxConfig {
            num_blocks: 4,
            num_heads: 4,
            d_model: 128,
            ffn_dim: 128,
            bits_per_symbol: 6,
            rx_antennas: 2,
            positional_encoding: PositionalEncoding::Sinusoidal2d,
            num_symbols: 14,
            num_subcarriers: 128,
        }
    }
}

impl TransRxConfig {
    pub fn validate(&self) -> Result<()> {
        let extents = [
            self.num_blocks,
            self.num_heads,
            self.d_model,
            self.ffn_dim,
            self.bits_per_symbol,
            self.rx_antennas,
            self.num_symbols,
            self.num_subcarriers,
        ];
        if extents.contains(&0) {
            return Err(Error::contract("transrx config", "all extents must be positive"));
        }
        if self.d_model % self.num_heads != 0 {
            return Err(Error::contract(
                "transrx config",
                format!("d_model {} not divisible by {} heads", self.d_model, self.num_heads),
            ));
        }
        if self.positional_encoding == PositionalEncoding::Sinusoidal2d && self.d_model % 4 != 0 {
            return Err(Error::contract(
                "transrx config",
                format!(
                    "2-D sinusoidal encoding needs d_model divisible by 4, got {}",
                    self.d_model
                ),
            ));
        }
        Ok(())
    }

    pub fn num_features(&self) -> usize {
        2 * self.rx_antennas + 1
    }

    pub fn num_tokens(&self) -> usize {
        self.num_symbols * self.num_subcarriers
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.num_heads
    }

    /// Trainable scalars implied by the layer shapes.
    pub fn parameter_count(&self) -> usize {
        let (d, f, c, b) = (self.d_model, self.ffn_dim, self.num_features(), self.bits_per_symbol);
        let input = c * d + d;
        let attention = 4 * (d * d + d);
        let norms = 2 * 2 * d;
        let ffn = d * f + f + f * d + d;
        let output = d * b + b;
        input + self.num_blocks * (attention + norms + ffn) + output
    }
}

#[derive(Clone, Copy, Debug)]
struct BlockIds {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    norm1_gain: ParamId,
    norm1_bias: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    norm2_gain: ParamId,
    norm2_bias: ParamId,
}

#[derive(Clone, Debug)]
struct Layout {
    input_w: ParamId,
    input_b: ParamId,
    blocks: Vec<BlockIds>,
    output_w: ParamId,
    output_b: ParamId,
}

impl Layout {
    fn resolve(config: &TransRxConfig, store: &ParamStore<impl Real>) -> Result<Self> {
        let id = |name: String| {
            store
                .id(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))
        };
        let blocks = (0..config.num_blocks)
            .map(|i| {
                let p = |s: &str| id(format!("block{i}/{s}"));
                Ok(BlockIds {
                    wq: p("mhsa/wq")?,
                    bq: p("mhsa/bq")?,
                    wk: p("mhsa/wk")?,
                    bk: p("mhsa/bk")?,
                    wv: p("mhsa/wv")?,
                    bv: p("mhsa/bv")?,
                    wo: p("mhsa/wo")?,
                    bo: p("mhsa/bo")?,
                    norm1_gain: p("norm1/gain")?,
                    norm1_bias: p("norm1/bias")?,
                    w1: p("ffn/w1")?,
                    b1: p("ffn/b1")?,
                    w2: p("ffn/w2")?,
                    b2: p("ffn/b2")?,
                    norm2_gain: p("norm2/gain")?,
                    norm2_bias: p("norm2/bias")?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Layout {
            input_w: id("input/w".into())?,
            input_b: id("input/b".into())?,
            blocks,
            output_w: id("output/w".into())?,
            output_b: id("output/b".into())?,
        })
    }
}

/// How the output projection starts out.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadInit {
    Zero,
    Random,
}

#[derive(Clone, Debug)]
pub struct TransRxModel<T> {
    config: TransRxConfig,
    params: ParamStore<T>,
    layout: Layout,
    positions: Option<Tensor<T>>,
}

/// Angular frequencies for one grid axis of `len` positions, geometric
/// from π (neighbours in antiphase) down to π/len (half a period across
/// the axis).
fn axis_frequencies(len: usize, pairs: usize) -> Vec<f64> {
    let slowest = std::f64::consts::PI / len.max(1) as f64;
    (0..pairs)
        .map(|k| {
            let t = if pairs > 1 { k as f64 / (pairs - 1) as f64 } else { 0.0 };
            std::f64::consts::PI * (slowest / std::f64::consts::PI).powf(t)
        })
        .collect()
}

/// Fixed `[tokens, d]` table: the first half of the channels encodes the
/// OFDM symbol index, the second half the subcarrier index, each as
/// interleaved sin/cos pairs at frequencies spread over the grid extent.
pub fn positional_table<T: Real>(num_symbols: usize, num_subcarriers: usize, d_model: usize) -> Tensor<T> {
    let half = d_model / 2;
    let pairs = half / 2;
    let freqs = [
        axis_frequencies(num_symbols, pairs),
        axis_frequencies(num_subcarriers, pairs),
    ];
    let mut data = vec![T::zero(); num_symbols * num_subcarriers * d_model];
    for i in 0..num_symbols {
        for j in 0..num_subcarriers {
            let row = &mut data[(i * num_subcarriers + j) * d_model..][..d_model];
            for (axis, (offset, pos)) in [(0, i), (half, j)].into_iter().enumerate() {
                for (k, &freq) in freqs[axis].iter().enumerate() {
                    let angle = pos as f64 * freq;
                    row[offset + 2 * k] = T::from_f64_lossy(angle.sin());
                    row[offset + 2 * k + 1] = T::from_f64_lossy(angle.cos());
                }
            }
        }
    }
    Tensor::new(vec![num_symbols * num_subcarriers, d_model], data).expect("positive extents")
}

fn lecun_uniform<T: Real>(rng: &mut seed::SimRng, fan_in: usize, fan_out: usize) -> Tensor<T> {
    let limit = (3.0 / fan_in as f64).sqrt();
    Tensor::from_fn(&[fan_in, fan_out], |_| {
        T::from_f64_lossy(rng.random_range(-limit..limit))
    })
}

impl<T: Real> TransRxModel<T> {
    pub fn init(config: TransRxConfig, seed: u64) -> Result<Self> {
        Self::init_with(config, seed, HeadInit::Zero)
    }

    /// Fan-in scaled uniform weights, zero biases, unit norm gains. The
    /// same seed yields the same weights at any float precision.
    pub fn init_with(config: TransRxConfig, seed: u64, head: HeadInit) -> Result<Self> {
        config.validate()?;
        let mut rng = seed::stream(seed, &[seed::tag::INIT]);
        let (d, f) = (config.d_model, config.ffn_dim);
        let mut store = ParamStore::new();
        let zeros = |n: usize| Tensor::<T>::zeros(&[n]);
        store.insert("input/w", lecun_uniform(&mut rng, config.num_features(), d))?;
        store.insert("input/b", zeros(d))?;
        for i in 0..config.num_blocks {
            let name = |s: &str| format!("block{i}/{s}");
            for (w, b) in [("wq", "bq"), ("wk", "bk"), ("wv", "bv"), ("wo", "bo")] {
                store.insert(name(&format!("mhsa/{w}")), lecun_uniform(&mut rng, d, d))?;
                store.insert(name(&format!("mhsa/{b}")), zeros(d))?;
            }
            store.insert(name("norm1/gain"), Tensor::full(&[d], T::one()))?;
            store.insert(name("norm1/bias"), zeros(d))?;
            store.insert(name("ffn/w1"), lecun_uniform(&mut rng, d, f))?;
            store.insert(name("ffn/b1"), zeros(f))?;
            store.insert(name("ffn/w2"), lecun_uniform(&mut rng, f, d))?;
            store.insert(name("ffn/b2"), zeros(d))?;
            store.insert(name("norm2/gain"), Tensor::full(&[d], T::one()))?;
            store.insert(name("norm2/bias"), zeros(d))?;
        }
        let head_w = match head {
            HeadInit::Zero => Tensor::zeros(&[d, config.bits_per_symbol]),
            HeadInit::Random => lecun_uniform(&mut rng, d, config.bits_per_symbol),
        };
        store.insert("output/w", head_w)?;
        store.insert("output/b", zeros(config.bits_per_symbol))?;
        Self::from_parts(config, store)
    }

    /// Wraps an existing parameter set, checking names and shapes.
    pub fn from_parts(config: TransRxConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::resolve(&config, &params)?;
        let expected = config.parameter_count();
        if params.num_scalars() != expected || params.len() != 4 + 16 * config.num_blocks {
            return Err(Error::Checkpoint(format!(
                "parameter set has {} tensors / {} scalars, config expects {} / {expected}",
                params.len(),
                params.num_scalars(),
                4 + 16 * config.num_blocks
            )));
        }
        let (d, f, c, b) = (
            config.d_model,
            config.ffn_dim,
            config.num_features(),
            config.bits_per_symbol,
        );
        let mut shapes: Vec<(ParamId, Vec<usize>)> = vec![
            (layout.input_w, vec![c, d]),
            (layout.input_b, vec![d]),
            (layout.output_w, vec![d, b]),
            (layout.output_b, vec![b]),
        ];
        for blk in &layout.blocks {
            for (w, bias) in [(blk.wq, blk.bq), (blk.wk, blk.bk), (blk.wv, blk.bv), (blk.wo, blk.bo)] {
                shapes.push((w, vec![d, d]));
                shapes.push((bias, vec![d]));
            }
            for id in [blk.norm1_gain, blk.norm1_bias, blk.norm2_gain, blk.norm2_bias, blk.b2] {
                shapes.push((id, vec![d]));
            }
            shapes.push((blk.w1, vec![d, f]));
            shapes.push((blk.b1, vec![f]));
            shapes.push((blk.w2, vec![f, d]));
        }
        for (id, shape) in shapes {
            let p = params.get(id);
            if p.tensor.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` has shape {:?}, config expects {shape:?}",
                    p.name,
                    p.tensor.shape()
                )));
            }
        }
        let positions = (config.positional_encoding == PositionalEncoding::Sinusoidal2d)
            .then(|| positional_table(config.num_symbols, config.num_subcarriers, d));
        Ok(TransRxModel {
            config,
            params,
            layout,
            positions,
        })
    }

    pub fn config(&self) -> &TransRxConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Same weights at another float precision.
    pub fn cast<U: Real>(&self) -> TransRxModel<U> {
        let mut store = ParamStore::new();
        for p in self.params.iter() {
            store
                .insert(p.name.clone(), p.tensor.cast::<U>())
                .expect("names are unique in the source store");
        }
        TransRxModel::from_parts(self.config, store).expect("same layout as source")
    }

    /// Records the network on `g` for `features` of shape
    /// `[batch, tokens, 2A+1]` and returns LLRs `[batch, tokens, bits]`.
    pub fn forward(&self, g: &mut Graph<T>, features: Var) -> Result<Var> {
        let cfg = &self.config;
        let shape = g.shape(features).to_vec();
        if shape.len() != 3 || shape[2] != cfg.num_features() {
            return Err(Error::contract(
                "transrx forward",
                format!("features {shape:?}, expected [batch, tokens, {}]", cfg.num_features()),
            ));
        }
        let (batch, tokens) = (shape[0], shape[1]);
        if self.positions.is_some() && tokens != cfg.num_tokens() {
            return Err(Error::contract(
                "transrx forward",
                format!("{tokens} tokens but the position table covers {}", cfg.num_tokens()),
            ));
        }
        let (d, heads, dh) = (cfg.d_model, cfg.num_heads, cfg.head_dim());
        let eps = T::from_f64_lossy(LAYER_NORM_EPS);
        let attn_scale = T::from_f64_lossy(1.0 / (dh as f64).sqrt());
        let vars = g.bind_all(&self.params)?;
        let p = |id: ParamId| vars[id.index()];
        let dense = |g: &mut Graph<T>, x: Var, w: ParamId, b: ParamId| -> Result<Var> {
            let y = g.matmul(x, p(w))?;
            Ok(g.add_broadcast(y, p(b))?)
        };

        let mut x = dense(g, features, self.layout.input_w, self.layout.input_b)?;
        if let Some(table) = &self.positions {
            let pe = g.leaf(table.clone())?;
            x = g.add_broadcast(x, pe)?;
        }
        let split_heads = |g: &mut Graph<T>, t: Var| -> Result<Var> {
            let t = g.reshape(t, &[batch, tokens, heads, dh])?;
            let t = g.permute(t, &[0, 2, 1, 3])?;
            Ok(g.reshape(t, &[batch * heads, tokens, dh])?)
        };
        for blk in &self.layout.blocks {
            let q = dense(g, x, blk.wq, blk.bq)?;
            let k = dense(g, x, blk.wk, blk.bk)?;
            let v = dense(g, x, blk.wv, blk.bv)?;
            let q = g.scale(q, attn_scale)?;
            let (q, k, v) = (split_heads(g, q)?, split_heads(g, k)?, split_heads(g, v)?);
            let scores = g.bmm(q, k, true)?;
            let weights = g.softmax_lastaxis(scores)?;
            let ctx = g.bmm(weights, v, false)?;
            let ctx = g.reshape(ctx, &[batch, heads, tokens, dh])?;
            let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
            let ctx = g.reshape(ctx, &[batch, tokens, d])?;
            let attn = dense(g, ctx, blk.wo, blk.bo)?;
            let res = g.add(x, attn)?;
            let (gain, bias) = (p(blk.norm1_gain), p(blk.norm1_bias));
            x = g.layer_norm(res, gain, bias, eps)?;

            let hidden = dense(g, x, blk.w1, blk.b1)?;
            let hidden = g.relu(hidden)?;
            let ffn = dense(g, hidden, blk.w2, blk.b2)?;
            let res = g.add(x, ffn)?;
            let (gain, bias) = (p(blk.norm2_gain), p(blk.norm2_bias));
            x = g.layer_norm(res, gain, bias, eps)?;
        }
        dense(g, x, self.layout.output_w, self.layout.output_b)
    }

    /// LLRs for a batch of `[batch, tokens, 2A+1]` features, without
    /// keeping the graph.
    pub fn predict(&self, features: Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.leaf(features)?;
        let out = self.forward(&mut g, x)?;
        Ok(g.value(out).clone())
    }

    /// Receiver front end: pilot de-rotation, then [`TransRxModel::infer`].
    pub fn receive(&self, y: &ResourceGrid, spec: &ResourceGridSpec, noise_var: f64) -> Result<LlrGrid> {
        self.infer(&derotate_pilots(y, spec)?, noise_var)
    }

    /// Per-RE LLRs for one received grid.
    pub fn infer(&self, y: &ResourceGrid, noise_var: f64) -> Result<LlrGrid> {
        if y.num_symbols() != self.config.num_symbols
            || y.num_subcarriers() != self.config.num_subcarriers
            || y.num_antennas() != self.config.rx_antennas
        {
            return Err(Error::contract(
                "transrx infer",
                format!(
                    "grid {}×{}×{} but model expects {}×{}×{}",
                    y.num_symbols(),
                    y.num_subcarriers(),
                    y.num_antennas(),
                    self.config.num_symbols,
                    self.config.num_subcarriers,
                    self.config.rx_antennas
                ),
            ));
        }
        let feats = preprocess::<T>(y, noise_var)?;
        let out = self.predict(feats)?;
        Ok(LlrGrid {
            per_re: self.config.bits_per_symbol,
            values: out.data().iter().map(|v| v.to_f64_lossy()).collect(),
        })
    }
}

/// Copy of `y` with every pilot RE replaced by its least-squares channel
/// observation `y·p*/|p|²`; data REs are untouched.
pub fn derotate_pilots(y: &ResourceGrid, spec: &ResourceGridSpec) -> Result<ResourceGrid> {
    check_grid("derotate_pilots", y, spec)?;
    let mut out = y.clone();
    for (p, &i) in spec.pilot_symbols().iter().enumerate() {
        for j in 0..spec.num_subcarriers() {
            let pilot = spec.pilot(p, j);
            let inv = pilot.conj() / pilot.norm_sqr();
            for a in 0..spec.rx_antennas() {
                out.set(i, j, a, y.get(i, j, a) * inv);
            }
        }
    }
    Ok(out)
}

/// Token features `[1, S·F, 2A+1]` for one received grid.
pub fn preprocess<T: Real>(y: &ResourceGrid, noise_var: f64) -> Result<Tensor<T>> {
    let mut data = Vec::new();
    preprocess_into(y, noise_var, &mut data)?;
    let tokens = y.num_symbols() * y.num_subcarriers();
    Ok(Tensor::new(vec![1, tokens, 2 * y.num_antennas() + 1], data)?)
}

/// Appends the token features of `y` to `out`, so several grids can be
/// stacked into one batch.
pub fn preprocess_into<T: Real>(y: &ResourceGrid, noise_var: f64, out: &mut Vec<T>) -> Result<()> {
    if !(noise_var > 0.0) {
        return Err(Error::contract(
            "preprocess",
            format!("noise variance must be positive, got {noise_var}"),
        ));
    }
    let log_noise = T::from_f64_lossy(noise_var.ln());
    let a = y.num_antennas();
    out.reserve(y.num_symbols() * y.num_subcarriers() * (2 * a + 1));
    for i in 0..y.num_symbols() {
        for j in 0..y.num_subcarriers() {
            let re = y.re(i, j);
            out.extend(re.iter().map(|v| T::from_f64_lossy(v.re)));
            out.extend(re.iter().map(|v| T::from_f64_lossy(v.im)));
            out.push(log_noise);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use rand::SeedableRng;

    fn tiny(pe: PositionalEncoding) -> TransRxConfig {
        TransRxConfig {
            num_blocks: 2,
            num_heads: 2,
            d_model: 8,
            ffn_dim: 12,
            bits_per_symbol: 2,
            rx_antennas: 2,
            positional_encoding: pe,
            num_symbols: 3,
            num_subcarriers: 4,
        }
    }

    fn random_grid(seed: u64, s: usize, f: usize, a: usize) -> ResourceGrid {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let vals = (0..s * f * a)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        ResourceGrid::from_values(s, f, a, vals).unwrap()
    }

    #[test]
    fn default_shapes_and_count() {
        let cfg = TransRxConfig::default();
        assert_eq!(cfg.num_features(), 5);
        assert_eq!(cfg.num_tokens(), 1792);
        let m = TransRxModel::<f32>::init(cfg, 1).unwrap();
        assert_eq!(m.num_parameters(), cfg.parameter_count());
        // input 5·128+128, per block 4·(128²+128) + 4·128 + (128·128+128)·2, output 128·6+6
        let block = 4 * (128 * 128 + 128) + 4 * 128 + 2 * (128 * 128 + 128);
        assert_eq!(cfg.parameter_count(), 768 + 4 * block + 774);
    }

    #[test]
    fn config_validation() {
        let mut cfg = tiny(PositionalEncoding::None);
        cfg.num_heads = 3;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny(PositionalEncoding::Sinusoidal2d);
        cfg.d_model = 6;
        cfg.num_heads = 2;
        assert!(cfg.validate().is_err());
        cfg.positional_encoding = PositionalEncoding::None;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn init_is_deterministic_with_unit_gains() {
        let cfg = tiny(PositionalEncoding::Sinusoidal2d);
        let a = TransRxModel::<f32>::init(cfg, 3).unwrap();
        let b = TransRxModel::<f32>::init(cfg, 3).unwrap();
        let c = TransRxModel::<f32>::init(cfg, 4).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
        for p in a.params().iter().filter(|p| p.name.ends_with("/gain")) {
            assert!(p.tensor.data().iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn preprocess_layout() {
        let y = ResourceGrid::from_values(
            1,
            2,
            2,
            vec![
                Complex64::new(1.0, 2.0),
                Complex64::new(3.0, 4.0),
                Complex64::new(5.0, 0.0),
                Complex64::new(6.0, 0.0),
            ],
        )
        .unwrap();
        let t = preprocess::<f64>(&y, 1.0).unwrap();
        assert_eq!(t.shape(), &[1, 2, 5]);
        assert_eq!(t.data(), &[1.0, 3.0, 2.0, 4.0, 0.0, 5.0, 6.0, 0.0, 0.0, 0.0]);
        let zero = preprocess::<f64>(&ResourceGrid::zeros(14, 128, 2), 1.0).unwrap();
        assert_eq!(zero.shape(), &[1, 1792, 5]);
        assert!(zero.data().iter().all(|&v| v == 0.0));
        assert!(preprocess::<f64>(&y, 0.0).is_err());
    }

    #[test]
    fn derotated_pilots_expose_the_channel() {
        use crate::channel::{apply, ChannelRealization};
        use crate::modem::grid_map;
        let spec = ResourceGridSpec::new(6, 5, &[1, 4], 9, 2).unwrap();
        let symbols: Vec<Complex64> = (0..spec.data_capacity())
            .map(|k| Complex64::from_polar(1.0, k as f64))
            .collect();
        let tx = grid_map(&symbols, &spec).unwrap();
        let h = Complex64::new(0.3, -1.1);
        let y = apply(&tx, &ChannelRealization::flat(&spec, h, 1e-24, 0)).unwrap();
        let d = derotate_pilots(&y, &spec).unwrap();
        for i in 0..6 {
            for j in 0..5 {
                for a in 0..2 {
                    if spec.is_pilot_symbol(i) {
                        assert!((d.get(i, j, a) - h).norm() < 1e-9);
                    } else {
                        assert_eq!(d.get(i, j, a), y.get(i, j, a));
                    }
                }
            }
        }
        assert!(derotate_pilots(&random_grid(0, 6, 4, 2), &spec).is_err());
    }

    #[test]
    fn zero_head_gives_zero_llrs() {
        let cfg = tiny(PositionalEncoding::Sinusoidal2d);
        let m = TransRxModel::<f32>::init(cfg, 9).unwrap();
        let llr = m.infer(&random_grid(1, 3, 4, 2), 0.3).unwrap();
        assert_eq!(llr.per_re, 2);
        assert_eq!(llr.values.len(), 24);
        assert!(llr.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn attention_without_positions_is_permutation_equivariant() {
        let cfg = tiny(PositionalEncoding::None);
        let m = TransRxModel::<f32>::init_with(cfg, 2, HeadInit::Random).unwrap();
        let feats = preprocess::<f32>(&random_grid(5, 3, 4, 2), 0.5).unwrap();
        let perm = [7, 3, 11, 0, 5, 9, 1, 10, 2, 8, 4, 6];
        let c = cfg.num_features();
        let permuted: Vec<f32> = perm
            .iter()
            .flat_map(|&t| feats.data()[t * c..(t + 1) * c].to_vec())
            .collect();
        let out = m.predict(feats.clone()).unwrap();
        let out_p = m.predict(Tensor::new(vec![1, 12, c], permuted).unwrap()).unwrap();
        let b = cfg.bits_per_symbol;
        for (row, &t) in perm.iter().enumerate() {
            for k in 0..b {
                let diff = (out_p.data()[row * b + k] - out.data()[t * b + k]).abs();
                assert!(diff <= 1e-5, "token {t} bit {k}: {diff}");
            }
        }
    }

    #[test]
    fn positional_table_rows_differ() {
        let t = positional_table::<f64>(3, 4, 8);
        assert_eq!(t.shape(), &[12, 8]);
        let rows: Vec<&[f64]> = t.data().chunks(8).collect();
        for a in 0..12 {
            for b in a + 1..12 {
                assert_ne!(rows[a], rows[b]);
            }
        }
        assert_eq!(&rows[0][..4], &[0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn cast_preserves_layout() {
        let cfg = tiny(PositionalEncoding::Sinusoidal2d);
        let m = TransRxModel::<f32>::init_with(cfg, 2, HeadInit::Random).unwrap();
        let m64: TransRxModel<f64> = m.cast();
        assert_eq!(m64.num_parameters(), m.num_parameters());
        let back: TransRxModel<f32> = m64.cast();
        assert_eq!(back.params(), m.params());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let cfg = tiny(PositionalEncoding::Sinusoidal2d);
        let m = TransRxModel::<f32>::init(cfg, 1).unwrap();
        assert!(m.infer(&random_grid(1, 3, 5, 2), 0.1).is_err());
        assert!(m.predict(Tensor::zeros(&[1, 12, 4])).is_err());
    }
}
