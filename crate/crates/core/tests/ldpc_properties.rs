//! Encoder and min-sum decoder properties of the default QC-LDPC code.

use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;
use transrx::ldpc::{QcLdpcCode, DEFAULT_LLR_CLIP, DEFAULT_MAX_ITERS};
use transrx::seed;

/// Parity-check matrix expanded directly from the base matrix, one row of
/// bytes per check.
fn expanded_h(code: &QcLdpcCode) -> Vec<Vec<u8>> {
    let z = code.lifting();
    let base = code.base();
    let cols = base[0].len();
    let mut h = vec![vec![0u8; cols * z]; base.len() * z];
    for (r, row) in base.iter().enumerate() {
        for (c, &shift) in row.iter().enumerate() {
            if shift < 0 {
                continue;
            }
            for i in 0..z {
                h[r * z + i][c * z + (i + shift as usize) % z] = 1;
            }
        }
    }
    h
}

fn gf2_rank(mut m: Vec<Vec<u8>>) -> usize {
    let cols = m.first().map_or(0, Vec::len);
    let mut rank = 0;
    for col in 0..cols {
        let Some(pivot) = (rank..m.len()).find(|&r| m[r][col] == 1) else {
            continue;
        };
        m.swap(rank, pivot);
        for r in 0..m.len() {
            if r != rank && m[r][col] == 1 {
                let (src, dst) = if r < rank {
                    let (a, b) = m.split_at_mut(rank);
                    (&b[0], &mut a[r])
                } else {
                    let (a, b) = m.split_at_mut(r);
                    (&a[rank], &mut b[0])
                };
                dst.iter_mut().zip(src.iter()).for_each(|(d, s)| *d ^= s);
            }
        }
        rank += 1;
    }
    rank
}

fn checks_pass(h: &[Vec<u8>], codeword: &[u8]) -> bool {
    h.iter()
        .all(|row| row.iter().zip(codeword).fold(0u8, |acc, (a, b)| acc ^ (a & b)) == 0)
}

fn to_llrs(codeword: &[u8]) -> Vec<f64> {
    codeword
        .iter()
        .map(|&b| if b == 0 { DEFAULT_LLR_CLIP } else { -DEFAULT_LLR_CLIP })
        .collect()
}

fn info_strategy(k: usize) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..=1, k)
}

#[test]
fn default_code_shape() {
    let code = QcLdpcCode::default_code();
    assert_eq!(code.rate(), 0.5);
    assert_eq!(code.n(), 2 * code.k());
    let h = expanded_h(&code);
    assert_eq!(h.len(), code.num_checks());
    assert_eq!(gf2_rank(h), code.num_checks());
}

#[test]
fn zero_word_converges_immediately() {
    let code = QcLdpcCode::default_code();
    let cw = code.encode(&vec![0; code.k()]).unwrap();
    assert!(cw.iter().all(|&b| b == 0));
    let out = code.decode(&to_llrs(&cw), DEFAULT_MAX_ITERS, DEFAULT_LLR_CLIP).unwrap();
    assert!(out.converged);
    assert!(out.iterations <= 1);
    assert!(out.info_bits.iter().all(|&b| b == 0));
}

#[test]
fn bpsk_awgn_ber_does_not_increase_with_snr() {
    let code = QcLdpcCode::default_code();
    let mut bers = Vec::new();
    for (p, ebn0_db) in [0.5f64, 1.5, 2.5].into_iter().enumerate() {
        let es_n0 = 10f64.powf(ebn0_db / 10.0) * code.rate();
        let sigma = (1.0 / (2.0 * es_n0)).sqrt();
        let mut rng = seed::stream(77, &[p as u64]);
        let (mut errors, mut bits) = (0usize, 0usize);
        for _ in 0..150 {
            let info: Vec<u8> = (0..code.k()).map(|_| rng.random::<bool>() as u8).collect();
            let cw = code.encode(&info).unwrap();
            let llrs: Vec<f64> = cw
                .iter()
                .map(|&b| {
                    let x = 1.0 - 2.0 * b as f64;
                    let noise: f64 = rng.sample(StandardNormal);
                    2.0 * (x + sigma * noise) / (sigma * sigma)
                })
                .collect();
            let out = code.decode(&llrs, DEFAULT_MAX_ITERS, DEFAULT_LLR_CLIP).unwrap();
            errors += out.info_bits.iter().zip(&info).filter(|(a, b)| a != b).count();
            bits += info.len();
        }
        bers.push(errors as f64 / bits as f64);
    }
    assert!(bers.windows(2).all(|w| w[1] <= w[0]), "{bers:?}");
    assert!(bers[0] > 0.0, "sweep starts above the waterfall: {bers:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn codewords_satisfy_the_expanded_checks(info in info_strategy(QcLdpcCode::default_code().k())) {
        let code = QcLdpcCode::default_code();
        let cw = code.encode(&info).unwrap();
        prop_assert!(code.syndrome_ok(&cw));
        prop_assert!(checks_pass(&expanded_h(&code), &cw));
    }

    #[test]
    fn encoding_is_linear(
        a in info_strategy(QcLdpcCode::default_code().k()),
        b in info_strategy(QcLdpcCode::default_code().k()),
    ) {
        let code = QcLdpcCode::default_code();
        let sum: Vec<u8> = a.iter().zip(&b).map(|(x, y)| x ^ y).collect();
        let lhs: Vec<u8> = code
            .encode(&a)
            .unwrap()
            .iter()
            .zip(code.encode(&b).unwrap())
            .map(|(x, y)| x ^ y)
            .collect();
        prop_assert_eq!(lhs, code.encode(&sum).unwrap());
    }

    #[test]
    fn noiseless_roundtrip_survives_one_flip(
        info in info_strategy(QcLdpcCode::default_code().k()),
        flip in 0usize..QcLdpcCode::default_code().n(),
    ) {
        let code = QcLdpcCode::default_code();
        let cw = code.encode(&info).unwrap();
        let clean = to_llrs(&cw);
        let out = code.decode(&clean, DEFAULT_MAX_ITERS, DEFAULT_LLR_CLIP).unwrap();
        prop_assert_eq!(&out.info_bits, &info);
        prop_assert_eq!(&out.codeword, &cw);
        let mut noisy = clean.clone();
        noisy[flip] = -noisy[flip];
        let before = noisy.clone();
        let out = code.decode(&noisy, DEFAULT_MAX_ITERS, DEFAULT_LLR_CLIP).unwrap();
        prop_assert_eq!(noisy, before);
        prop_assert!(out.converged);
        prop_assert_eq!(out.info_bits, info);
    }
}
