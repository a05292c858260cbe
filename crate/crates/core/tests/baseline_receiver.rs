//! LS estimation and LMMSE receiver behaviour over the fading channel.

use num_complex::Complex64;
use rand::Rng;
use transrx::baseline_rx::{baseline_receive, lmmse_equalize, ls_estimate, CsiMode};
use transrx::channel::{
    apply, sample_realization, snr_to_noise_var, ChannelRealization, DopplerSpec, TdlProfile, DEFAULT_CARRIER_HZ,
    DEFAULT_SUBCARRIER_SPACING_HZ,
};
use transrx::modem::{grid_demap, grid_map, Constellation, ResourceGridSpec};
use transrx::seed;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn random_bits(n: usize, master: u64) -> Vec<u8> {
    let mut rng = seed::stream(master, &[1]);
    (0..n).map(|_| rng.random::<bool>() as u8).collect()
}

/// Hard-decision bit errors of one fading slot for each CSI mode.
fn slot_errors(
    spec: &ResourceGridSpec,
    constellation: &Constellation,
    snr_db: f64,
    master: u64,
    modes: &[CsiMode],
) -> (usize, Vec<usize>) {
    let n = spec.data_capacity() * constellation.bits_per_symbol();
    let bits = random_bits(n, master);
    let x = grid_map(&constellation.map_bits(&bits).unwrap(), spec).unwrap();
    let doppler = DopplerSpec::new(90.0, DEFAULT_CARRIER_HZ).unwrap();
    let h = sample_realization(
        &TdlProfile::uma_like(),
        &doppler,
        spec,
        DEFAULT_SUBCARRIER_SPACING_HZ,
        snr_to_noise_var(snr_db),
        master,
    )
    .unwrap();
    let y = apply(&x, &h).unwrap();
    let errors = modes
        .iter()
        .map(|&mode| {
            let llrs = baseline_receive(&y, spec, constellation, mode, Some(&h)).unwrap();
            let soft = grid_demap(&llrs, spec).unwrap();
            soft.iter().zip(&bits).filter(|(l, &b)| (**l < 0.0) as u8 != b).count()
        })
        .collect();
    (n, errors)
}

#[test]
fn closed_form_equalizer_cases() {
    let y = [c(0.3, -0.7)];
    assert_eq!(lmmse_equalize(&y, &[c(1.0, 0.0)], 0.0).unwrap().symbol, y[0]);
    let y2 = [c(0.5, 1.0), c(-0.25, 0.4)];
    let eq = lmmse_equalize(&y2, &[c(1.0, 0.0), c(1.0, 0.0)], 0.0).unwrap();
    assert!((eq.symbol - (y2[0] + y2[1]) / 2.0).norm() < 1e-12);
    let huge = lmmse_equalize(&y, &[c(1.0, 0.0)], 1e12).unwrap();
    assert!(huge.symbol.norm() < 1e-11);
    assert!(lmmse_equalize(&y, &[c(0.0, 0.0)], 0.0).is_err());
}

#[test]
fn ls_estimate_is_unbiased_at_pilots() {
    let spec = ResourceGridSpec::new(14, 16, &[2, 11], 9, 2).unwrap();
    let x = grid_map(&vec![c(1.0, 0.0); spec.data_capacity()], &spec).unwrap();
    let truth = c(0.6, -0.8);
    let mut err = c(0.0, 0.0);
    let mut count = 0usize;
    for s in 0..2000 {
        let h = ChannelRealization::flat(&spec, truth, 0.5, s);
        let y = apply(&x, &h).unwrap();
        let est = ls_estimate(&y, &spec).unwrap();
        for &i in spec.pilot_symbols() {
            for j in 0..16 {
                for a in 0..2 {
                    err += est.h.get(i, j, a) - truth;
                    count += 1;
                }
            }
        }
    }
    // per-sample std is √0.5, so the mean error has std ≈ 0.003
    let bias = err / count as f64;
    assert!(bias.norm() < 0.015, "mean LS error {bias}");
}

#[test]
fn ls_interpolation_is_exact_for_linear_time_variation() {
    let spec = ResourceGridSpec::new(14, 4, &[2, 11], 5, 1).unwrap();
    let (a, b) = (c(0.2, 0.5), c(0.05, -0.03));
    let h: Vec<Complex64> = (0..14)
        .flat_map(|i| std::iter::repeat(a + b * i as f64).take(4))
        .collect();
    let h = ChannelRealization::from_values(14, 4, 1, h, 0.0, 0).unwrap();
    let x = grid_map(&vec![c(0.0, 1.0); spec.data_capacity()], &spec).unwrap();
    let est = ls_estimate(&apply(&x, &h).unwrap(), &spec).unwrap();
    for i in 2..=11 {
        for j in 0..4 {
            assert!((est.h.get(i, j, 0) - (a + b * i as f64)).norm() < 1e-12, "symbol {i}");
        }
    }
    for j in 0..4 {
        assert!((est.h.get(0, j, 0) - (a + b * 2.0)).norm() < 1e-12);
        assert!((est.h.get(13, j, 0) - (a + b * 11.0)).norm() < 1e-12);
    }
}

#[test]
fn perfect_csi_never_loses_to_ls() {
    let spec = ResourceGridSpec::default_slot();
    let qam = Constellation::qam(4).unwrap();
    for (k, snr_db) in [6.0, 9.0, 12.0, 15.0, 18.0].into_iter().enumerate() {
        let (mut bits, mut perfect, mut ls) = (0usize, 0usize, 0usize);
        let mut slot = 0u64;
        while bits < 100_000 {
            let (n, e) = slot_errors(
                &spec,
                &qam,
                snr_db,
                seed::derive(11, &[k as u64, slot]),
                &[CsiMode::Perfect, CsiMode::Ls],
            );
            bits += n;
            perfect += e[0];
            ls += e[1];
            slot += 1;
        }
        assert!(
            perfect <= ls,
            "{snr_db} dB: perfect {perfect} vs LS {ls} errors in {bits} bits"
        );
    }
}

#[test]
fn second_antenna_gives_array_gain() {
    let qpsk = Constellation::qam(2).unwrap();
    let one = ResourceGridSpec::new(14, 128, &[2, 11], 1, 1).unwrap();
    let two = one.with_rx_antennas(2).unwrap();
    let (mut e1, mut e2) = (0usize, 0usize);
    for s in 0..40 {
        e1 += slot_errors(&one, &qpsk, 6.0, s, &[CsiMode::Perfect]).1[0];
        e2 += slot_errors(&two, &qpsk, 6.0, s, &[CsiMode::Perfect]).1[0];
    }
    assert!(e2 < e1, "A=2 {e2} errors vs A=1 {e1}");
}

#[test]
fn noiseless_perfect_csi_is_error_free() {
    let spec = ResourceGridSpec::default_slot();
    for bits in [2, 4, 6] {
        let qam = Constellation::qam(bits).unwrap();
        for s in 0..3 {
            let n = spec.data_capacity() * bits;
            let tx = random_bits(n, s);
            let x = grid_map(&qam.map_bits(&tx).unwrap(), &spec).unwrap();
            let doppler = DopplerSpec::new(120.0, DEFAULT_CARRIER_HZ).unwrap();
            let h = sample_realization(
                &TdlProfile::cdl_like(),
                &doppler,
                &spec,
                DEFAULT_SUBCARRIER_SPACING_HZ,
                0.0,
                s,
            )
            .unwrap();
            let y = apply(&x, &h).unwrap();
            let llrs = baseline_receive(&y, &spec, &qam, CsiMode::Perfect, Some(&h)).unwrap();
            let rx: Vec<u8> = grid_demap(&llrs, &spec)
                .unwrap()
                .iter()
                .map(|&l| (l < 0.0) as u8)
                .collect();
            assert_eq!(rx, tx);
        }
    }
}
