//! Built-in consistency checks run by the `selftest` command: demapper
//! against brute-force enumeration, finite-difference gradients, LDPC
//! roundtrips. Also the constellation and pilot tables for external review.

use std::fmt::Write as _;

use num_complex::Complex64;
use rand::Rng;
use transrx_numerics::gradcheck::{self, relative_error};
use transrx_numerics::{Graph, Real, Result as NumericsResult, Tensor, Var};

use crate::error::Result;
use crate::ldpc::QcLdpcCode;
use crate::modem::{Constellation, ResourceGridSpec};
use crate::neural_rx::{HeadInit, PositionalEncoding, TransRxConfig, TransRxModel};
use crate::seed;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Check {
            name: name.into(),
            value,
            limit,
        }
    }

    pub fn passed(&self) -> bool {
        self.value < self.limit
    }
}

/// LLRs by direct enumeration: per bit, the log of summed likelihoods over
/// the points whose label has a 0 there minus the same for 1.
pub fn brute_force_llrs(constellation: &Constellation, y: Complex64, noise_var: f64) -> Vec<f64> {
    let points = constellation.points();
    let d: Vec<f64> = points.iter().map(|x| (y - x).norm_sqr()).collect();
    let dmin = d.iter().copied().fold(f64::INFINITY, f64::min);
    (0..constellation.bits_per_symbol())
        .map(|k| {
            let (mut p0, mut p1) = (0.0f64, 0.0f64);
            for (idx, &di) in d.iter().enumerate() {
                let w = (-(di - dmin) / noise_var).exp();
                if constellation.label(idx)[k] == 0 {
                    p0 += w;
                } else {
                    p1 += w;
                }
            }
            p0.ln() - p1.ln()
        })
        .collect()
}

/// Largest |exact − brute force| over `pairs` random `(y, σ²)` draws per
/// constellation order (QPSK, 16-QAM, 64-QAM).
pub fn demapper_oracle(pairs: usize, master: u64) -> Result<f64> {
    let mut worst = 0.0f64;
    for bits in [2, 4, 6] {
        let c = Constellation::qam(bits)?;
        let mut rng = seed::stream(master, &[bits as u64]);
        for _ in 0..pairs {
            let y = Complex64::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
            let noise_var = 10f64.powf(rng.random_range(-1.0..1.0));
            let exact = c.demap_exact(y, noise_var)?;
            for (a, b) in exact.iter().zip(brute_force_llrs(&c, y, noise_var)) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    Ok(worst)
}

type Build<T> = Box<dyn Fn(&mut Graph<T>, &[Var]) -> NumericsResult<Var>>;

fn random<T: Real>(rng: &mut seed::SimRng, shape: &[usize]) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.random_range(-1.0..1.0)))
}

/// Worst relative error over the inputs of every differentiable primitive,
/// in 64-bit arithmetic.
pub fn primitive_gradient_errors(master: u64) -> Result<Vec<(&'static str, f64)>> {
    let mut rng = seed::stream(master, &[0x67726164]);
    let mut r = |s: &[usize]| random::<f64>(&mut rng, s);
    let labels: Vec<f64> = (0..8).map(|i| (i % 3 == 0) as u8 as f64).collect();
    let kinkless = Tensor::new(vec![6], vec![-0.9, -0.4, -0.1, 0.2, 0.5, 1.3])?;
    let cases: Vec<(&'static str, Build<f64>, Vec<Tensor<f64>>)> = vec![
        (
            "matmul",
            Box::new(|g, v| g.matmul(v[0], v[1])),
            vec![r(&[2, 3, 4]), r(&[4, 5])],
        ),
        (
            "bmm",
            Box::new(|g, v| g.bmm(v[0], v[1], false)),
            vec![r(&[2, 3, 4]), r(&[2, 4, 5])],
        ),
        (
            "bmm_nt",
            Box::new(|g, v| g.bmm(v[0], v[1], true)),
            vec![r(&[2, 3, 4]), r(&[2, 5, 4])],
        ),
        (
            "add_broadcast",
            Box::new(|g, v| g.add_broadcast(v[0], v[1])),
            vec![r(&[2, 3, 4]), r(&[3, 4])],
        ),
        ("add", Box::new(|g, v| g.add(v[0], v[1])), vec![r(&[3, 4]), r(&[3, 4])]),
        ("mul", Box::new(|g, v| g.mul(v[0], v[1])), vec![r(&[3, 4]), r(&[3, 4])]),
        ("scale", Box::new(|g, v| g.scale(v[0], -1.7)), vec![r(&[5])]),
        ("relu", Box::new(|g, v| g.relu(v[0])), vec![kinkless]),
        ("sigmoid", Box::new(|g, v| g.sigmoid(v[0])), vec![r(&[2, 5])]),
        ("softmax", Box::new(|g, v| g.softmax_lastaxis(v[0])), vec![r(&[3, 6])]),
        (
            "layer_norm",
            Box::new(|g, v| g.layer_norm(v[0], v[1], v[2], 1e-6)),
            vec![r(&[4, 6]), r(&[6]), r(&[6])],
        ),
        (
            "concat",
            Box::new(|g, v| g.concat_lastaxis(v[0], v[1])),
            vec![r(&[2, 3, 4]), r(&[2, 3, 1])],
        ),
        ("reshape", Box::new(|g, v| g.reshape(v[0], &[6, 2])), vec![r(&[3, 4])]),
        (
            "permute",
            Box::new(|g, v| g.permute(v[0], &[2, 0, 1])),
            vec![r(&[2, 3, 4])],
        ),
        (
            "transpose",
            Box::new(|g, v| g.transpose_last2(v[0])),
            vec![r(&[2, 3, 4])],
        ),
        (
            "select_rows",
            Box::new(|g, v| g.select_rows(v[0], &[0, 2, 2])),
            vec![r(&[2, 4, 3])],
        ),
        ("sum", Box::new(|g, v| g.sum(v[0])), vec![r(&[7])]),
        ("mean", Box::new(|g, v| g.mean(v[0])), vec![r(&[7])]),
        (
            "bce_llr",
            Box::new(move |g, v| g.bce_llr(v[0], &labels)),
            vec![r(&[2, 4])],
        ),
    ];
    cases
        .into_iter()
        .map(|(name, build, inputs)| {
            let errs = gradcheck::check(&*build, &inputs, 1e-6)?;
            Ok((name, errs.into_iter().fold(0.0, f64::max)))
        })
        .collect()
}

/// Small model for whole-graph checks: every parameter kind, both
/// positional modes exercised by the caller.
pub fn gradcheck_model_config(positional_encoding: PositionalEncoding) -> TransRxConfig {
    TransRxConfig {
        num_blocks: 2,
        num_heads: 2,
        d_model: 8,
        ffn_dim: 12,
        bits_per_symbol: 2,
        rx_antennas: 2,
        positional_encoding,
        num_symbols: 3,
        num_subcarriers: 4,
    }
}

fn model_loss<T: Real>(model: &TransRxModel<T>, features: &Tensor<T>, labels: &[T]) -> Result<(Graph<T>, Var)> {
    let mut g = Graph::new();
    let x = g.leaf(features.clone())?;
    let out = model.forward(&mut g, x)?;
    let loss = g.bce_llr(out, labels)?;
    Ok((g, loss))
}

/// Relative error between gradients backpropagated in `T` and 64-bit
/// central differences (step `1e-6`) of a BCE loss through the whole
/// network, over `per_param` coordinates of every parameter tensor. The
/// head is random so every path carries signal.
pub fn transrx_gradient_error<T: Real>(cfg: TransRxConfig, master: u64, per_param: usize) -> Result<f64> {
    const STEP: f64 = 1e-6;
    let mut model = TransRxModel::<T>::init_with(cfg, master, HeadInit::Random)?;
    let mut rng = seed::stream(master, &[0x66656174]);
    let features: Tensor<T> = random(&mut rng, &[2, cfg.num_tokens(), cfg.num_features()]);
    let labels: Vec<T> = (0..2 * cfg.num_tokens() * cfg.bits_per_symbol)
        .map(|_| T::from_f64_lossy(rng.random_range(0..2) as f64))
        .collect();

    let (g, loss) = model_loss(&model, &features, &labels)?;
    let grads = g.backward(loss)?;
    model.params_mut().zero_grads();
    model.params_mut().accumulate_grads(&g, &grads)?;

    let mut reference = model.cast::<f64>();
    let features64 = Tensor::new(
        features.shape().to_vec(),
        features.data().iter().map(|v| v.to_f64_lossy()).collect(),
    )?;
    let labels64: Vec<f64> = labels.iter().map(|v| v.to_f64_lossy()).collect();

    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    for id in model.params().ids() {
        let param = &model.params().get(id).tensor;
        let numel = param.numel();
        let grad = param.grad().map(<[T]>::to_vec).unwrap_or_default();
        for s in 0..per_param.min(numel) {
            let i = if per_param >= numel {
                s
            } else {
                s * (numel - 1) / (per_param - 1).max(1)
            };
            let base = reference.params().get(id).tensor.data()[i];
            let mut eval = |x: f64| -> Result<f64> {
                reference.params_mut().get_mut(id).tensor.data_mut()[i] = x;
                let (g, loss) = model_loss(&reference, &features64, &labels64)?;
                Ok(g.value(loss).data()[0])
            };
            let (plus, minus) = (eval(base + STEP)?, eval(base - STEP)?);
            reference.params_mut().get_mut(id).tensor.data_mut()[i] = base;
            numeric.push((plus - minus) / (2.0 * STEP));
            analytic.push(grad.get(i).map_or(0.0, |v| v.to_f64_lossy()));
        }
    }
    Ok(relative_error(&analytic, &numeric, 1e-12))
}

/// Noiseless encode/decode roundtrips; returns the number of failures
/// (wrong info bits or a non-zero syndrome).
pub fn ldpc_roundtrips(code: &QcLdpcCode, trials: usize, master: u64) -> Result<usize> {
    let mut rng = seed::stream(master, &[0x6c647063]);
    let mut failures = 0;
    for _ in 0..trials {
        let info: Vec<u8> = (0..code.k()).map(|_| rng.random::<bool>() as u8).collect();
        let cw = code.encode(&info)?;
        let llrs: Vec<f64> = cw.iter().map(|&b| if b == 0 { 10.0 } else { -10.0 }).collect();
        let out = code.decode(&llrs, 5, 20.0)?;
        if !code.syndrome_ok(&cw) || out.info_bits != info {
            failures += 1;
        }
    }
    Ok(failures)
}

/// Every check the `selftest` command runs, with its limit.
pub fn run_selftest(master: u64) -> Result<Vec<Check>> {
    let mut checks = vec![Check::new(
        "demapper vs brute force (max abs diff)",
        demapper_oracle(1000, master)?,
        1e-9,
    )];
    for (name, err) in primitive_gradient_errors(master)? {
        checks.push(Check::new(format!("gradient {name} (f64 rel err)"), err, 1e-4));
    }
    for pe in [PositionalEncoding::Sinusoidal2d, PositionalEncoding::None] {
        let cfg = gradcheck_model_config(pe);
        checks.push(Check::new(
            format!("gradient transrx {} (f64 rel err)", pe.as_str()),
            transrx_gradient_error::<f64>(cfg, master, 4)?,
            1e-4,
        ));
        checks.push(Check::new(
            format!("gradient transrx {} (f32 rel err)", pe.as_str()),
            transrx_gradient_error::<f32>(cfg, master, 4)?,
            1e-2,
        ));
    }
    let code = QcLdpcCode::default_code();
    checks.push(Check::new(
        "ldpc noiseless roundtrip failures",
        ldpc_roundtrips(&code, 200, master)? as f64,
        0.5,
    ));
    Ok(checks)
}

/// CSV of the mapping table (label bits MSB first) for QPSK/16/64-QAM and
/// the pilot values of `spec`.
pub fn convention_tables_csv(spec: &ResourceGridSpec) -> Result<String> {
    let mut out = String::from("table,bits_per_symbol,symbol,subcarrier,index,label,re,im\n");
    for bits in [2, 4, 6] {
        let c = Constellation::qam(bits)?;
        for (idx, p) in c.points().iter().enumerate() {
            let label: String = c.label(idx).iter().map(|b| char::from(b'0' + b)).collect();
            writeln!(out, "constellation,{bits},,,{idx},{label},{:.17e},{:.17e}", p.re, p.im).expect("string write");
        }
    }
    for (p, &symbol) in spec.pilot_symbols().iter().enumerate() {
        for j in 0..spec.num_subcarriers() {
            let v = spec.pilot(p, j);
            writeln!(out, "pilot,2,{symbol},{j},,,{:.17e},{:.17e}", v.re, v.im).expect("string write");
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brute_force_matches_closed_form_qpsk() {
        // Gray QPSK splits into two independent BPSK decisions, so each LLR is
        // 2·√2·component/σ² (sign per the label convention).
        let c = Constellation::qam(2).unwrap();
        let y = Complex64::new(0.3, -0.8);
        let l = brute_force_llrs(&c, y, 0.5);
        assert!((l[0].abs() - 2.0 * 2f64.sqrt() * 0.3 / 0.5).abs() < 1e-12);
        assert!((l[1].abs() - 2.0 * 2f64.sqrt() * 0.8 / 0.5).abs() < 1e-12);
    }

    #[test]
    fn tables_cover_every_point_and_pilot() {
        let spec = ResourceGridSpec::new(14, 8, &[2, 11], 1, 1).unwrap();
        let csv = convention_tables_csv(&spec).unwrap();
        assert_eq!(csv.lines().count(), 1 + 4 + 16 + 64 + 2 * 8);
        assert!(csv.lines().nth(1).unwrap().starts_with("constellation,2,,,0,00,"));
    }

    #[test]
    fn small_selftest_pieces_pass() {
        assert!(demapper_oracle(20, 3).unwrap() < 1e-9);
        assert_eq!(ldpc_roundtrips(&QcLdpcCode::with_lifting(8).unwrap(), 5, 3).unwrap(), 0);
    }
}
