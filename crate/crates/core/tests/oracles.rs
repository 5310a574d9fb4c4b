mod common;

use common::*;
use diamond_core::degrade::{add_awgn, DegradationOp};
use diamond_core::diter::{g_update, y_update, DiamondState, DiterParams, Prior};
use diamond_core::metrics::{psnr, psnr_from_rmse};
use diamond_core::nnexec::{
    build_generator, decode_bundle, encode_bundle, layer_forward, GeneratorConfig, LayerSpec,
    Tensor, Variant, WeightInit,
};
use diamond_core::tvprox::{
    anisotropic_tv, fft_quad_solve, tv_objective as core_objective, tv_prox,
};
use diamond_core::{generator_forward, run_diamond, Image, TvParams};
use std::path::Path;

fn to_f64(img: &Image) -> Vec<f64> {
    img.data().iter().map(|&v| f64::from(v)).collect()
}

#[test]
fn tv_prox_beats_subgradient_oracle() {
    for seed in 0..10 {
        let v = uniform_image(6, 6, 100 + seed);
        let vf = to_f64(&v);
        let out = tv_prox(&v, &TvParams::new(0.1, 0.1)).unwrap();
        let got = core_objective(&out.image, &v, 0.1).unwrap();
        let oracle = tv_subgradient_best(&vf, 6, 6, 0.1, 50_000);
        assert!(got <= oracle + 1e-4, "seed {seed}: {got} vs {oracle}");
    }
}

#[test]
fn tv_prox_reaches_the_dual_optimum() {
    // Run to the cap, the split converges to the optimum itself; the default
    // relative-change stop leaves a small gap at weak penalties.
    for seed in 0..5 {
        let v = uniform_image(6, 6, 200 + seed);
        let dual = tv_dual_value(&to_f64(&v), 6, 6, 0.1, 50_000);
        let long = TvParams {
            inner_iters: 3000,
            tol: 0.0,
            ..TvParams::new(0.1, 0.1)
        };
        let tight = core_objective(&tv_prox(&v, &long).unwrap().image, &v, 0.1).unwrap();
        assert!(
            (tight - dual).abs() < 1e-8,
            "seed {seed}: {tight} vs {dual}"
        );
        let quick = tv_prox(&v, &TvParams::new(0.1, 0.1)).unwrap();
        let loose = core_objective(&quick.image, &v, 0.1).unwrap();
        assert!(loose - dual < 5e-5, "seed {seed}: {loose} vs {dual}");
    }
}

#[test]
fn tv_ladder_is_monotone_and_bounded() {
    for seed in 0..4 {
        let v = uniform_image(12, 10, 300 + seed);
        let vmax = f64::from(v.max_abs());
        let mut last = f64::INFINITY;
        for xi in [0.01, 0.05, 0.2, 1.0] {
            let out = tv_prox(&v, &TvParams::new(xi, xi)).unwrap();
            let tv = anisotropic_tv(&out.image);
            assert!(tv <= last + 1e-6, "seed {seed} xi {xi}: {tv} > {last}");
            last = tv;
            assert!(f64::from(out.image.max_abs()) <= vmax + xi + 1e-6);
        }
    }
}

#[test]
fn fft_solve_matches_dense_system() {
    for rho in [0.01, 1.0, 100.0] {
        for seed in 0..3 {
            let rhs = uniform_image(8, 8, 400 + seed);
            let got = fft_quad_solve(&rhs, rho).unwrap();
            let want = dense_periodic_solve(&to_f64(&rhs), 8, 8, rho);
            let err = max_abs_diff(got.data(), &want);
            assert!(err <= 1e-6, "rho {rho}: {err}");
        }
    }
}

#[test]
fn fft_solve_rectangular_against_dense() {
    let rhs = uniform_image(6, 9, 7);
    let got = fft_quad_solve(&rhs, 3.0).unwrap();
    let want = dense_periodic_solve(&to_f64(&rhs), 6, 9, 3.0);
    assert!(max_abs_diff(got.data(), &want) <= 1e-6);
}

#[test]
fn conv_engine_matches_loop_oracle() {
    let mut transposed_s2 = 0;
    for case in 0..50 {
        let (x, w, bias, stride, transposed) = random_conv_case(case);
        let (layer, want) = if transposed {
            if stride == 2 {
                transposed_s2 += 1;
            }
            let want = conv_transpose_oracle(&x, &w, &bias, stride);
            (
                LayerSpec::ConvTranspose {
                    weight: w,
                    bias,
                    stride,
                },
                want,
            )
        } else {
            let want = conv_oracle(&x, &w, &bias, stride);
            (
                LayerSpec::Conv {
                    weight: w,
                    bias,
                    stride,
                },
                want,
            )
        };
        let got = layer_forward(0, &layer, &[&x]).unwrap();
        let err = max_abs_diff(got.data(), &want);
        assert!(err <= 1e-5, "case {case}: {err}");
    }
    assert!(
        transposed_s2 > 0,
        "case mix must include stride-2 transposed convs"
    );
}

#[test]
fn conv_small_fixed_case() {
    // 1×5×5 input, 2×1×3×3 kernel.
    let (x, w, bias, _, _) = {
        let mut s = diamond_core::degrade::GaussianStream::new(5);
        let x = Tensor::new(1, 5, 5, uniform_vec(25, -1.0, 1.0, &mut s)).unwrap();
        let w = diamond_core::nnexec::Weights4::new(2, 1, 3, 3, uniform_vec(18, -1.0, 1.0, &mut s))
            .unwrap();
        (x, w, vec![0.1, -0.2], 1, false)
    };
    let want = conv_oracle(&x, &w, &bias, 1);
    let got = layer_forward(
        0,
        &LayerSpec::Conv {
            weight: w,
            bias,
            stride: 1,
        },
        &[&x],
    )
    .unwrap();
    assert_eq!(got.shape(), (2, 5, 5));
    assert!(max_abs_diff(got.data(), &want) <= 1e-5);
}

fn random_op(seed: u64) -> DegradationOp {
    if seed.is_multiple_of(2) {
        DegradationOp::identity()
    } else {
        let k = diamond_core::degrade::gaussian_kernel(5, 1.2).unwrap();
        DegradationOp::blur(k, diamond_core::Boundary::Replicate)
    }
}

#[test]
fn update_formulas_match_scalar_loops_bitwise() {
    for case in 0..100u64 {
        let (h, w) = (5 + (case % 4) as usize, 5 + (case % 3) as usize);
        let il = uniform_image(h, w, 3 * case);
        let ik = uniform_image(h, w, 3 * case + 1);
        let gk = uniform_image(h, w, 3 * case + 2);
        let op = random_op(case);
        let upsilon = 0.05 + (case as f64) * 0.37;
        let mu = 0.5 + (case % 7) as f64;

        let y = y_update(&il, &ik, &gk, &op, upsilon).unwrap();
        let (hi, hg) = (op.apply(&ik).unwrap(), op.apply(&gk).unwrap());
        for i in 0..h * w {
            let want = ((f64::from(il.data()[i]) - f64::from(hi.data()[i])
                + upsilon * f64::from(hg.data()[i]))
                / (1.0 + upsilon)) as f32;
            assert_eq!(
                y.data()[i].to_bits(),
                want.to_bits(),
                "y case {case} px {i}"
            );
        }

        let g = g_update(&y, upsilon, mu).unwrap();
        for i in 0..h * w {
            let want = ((upsilon * f64::from(y.data()[i])) / (upsilon + mu)) as f32;
            assert_eq!(
                g.data()[i].to_bits(),
                want.to_bits(),
                "g case {case} px {i}"
            );
        }
    }
}

#[test]
fn y_update_identity_substitution() {
    let il = uniform_image(7, 7, 1);
    let ik = uniform_image(7, 7, 2);
    let ups = 2.5;
    let y = y_update(&il, &ik, &ik, &DegradationOp::identity(), ups).unwrap();
    for i in 0..49 {
        let want = (f64::from(il.data()[i]) + (ups - 1.0) * f64::from(ik.data()[i])) / (1.0 + ups);
        assert!((f64::from(y.data()[i]) - want).abs() < 1e-6);
    }
}

#[test]
fn one_outer_step_obeys_superposition() {
    // Identity prior, ε = 0: the step is linear in (I_L, I⁰, g⁰).
    use diamond_core::diter::outer_step;
    let params = DiterParams {
        epsilon_tv: 0.0,
        step: 0.7,
        upsilon: 1.3,
        mu: 0.4,
        ..DiterParams::default()
    };
    let op = random_op(1);
    let prior = Prior::Identity;
    let state = |a: &Image, b: &Image| DiamondState {
        image: a.clone(),
        g: b.clone(),
    };
    let (l1, i1, g1) = (
        uniform_image(9, 9, 1),
        uniform_image(9, 9, 2),
        uniform_image(9, 9, 3),
    );
    let (l2, i2, g2) = (
        uniform_image(9, 9, 4),
        uniform_image(9, 9, 5),
        uniform_image(9, 9, 6),
    );
    let (a, b) = (0.6f32, -1.7f32);
    let mix = |p: &Image, q: &Image| p.zip_map(q, |x, y| a * x + b * y).unwrap();

    let s1 = outer_step(&l1, &op, &prior, &params, &state(&i1, &g1), 1).unwrap();
    let s2 = outer_step(&l2, &op, &prior, &params, &state(&i2, &g2), 1).unwrap();
    let s12 = outer_step(
        &mix(&l1, &l2),
        &op,
        &prior,
        &params,
        &state(&mix(&i1, &i2), &mix(&g1, &g2)),
        1,
    )
    .unwrap();
    let want = mix(&s1.state.image, &s2.state.image);
    for (p, q) in s12.state.image.data().iter().zip(want.data()) {
        assert!((p - q).abs() < 1e-5);
    }
    let want_g = mix(&s1.state.g, &s2.state.g);
    for (p, q) in s12.state.g.data().iter().zip(want_g.data()) {
        assert!((p - q).abs() < 1e-5);
    }
}

#[test]
fn huge_mu_keeps_the_iterate_at_the_input() {
    let il = uniform_image(10, 10, 9);
    let params = DiterParams {
        epsilon_tv: 0.0,
        step: 1.0,
        mu: 1e9,
        outer_iters: 5,
        ..DiterParams::default()
    };
    let (out, trace) = run_diamond(
        &il,
        &DegradationOp::identity(),
        &Prior::Identity,
        &params,
        None,
    )
    .unwrap();
    assert_eq!(trace.len(), 5);
    for (p, q) in out.data().iter().zip(il.data()) {
        assert!((p - q).abs() < 1e-6);
    }
}

#[test]
fn traces_are_bitwise_reproducible() {
    let clean = phantom(32, 32);
    let (noisy, _) = add_awgn(&clean, 15.0, 11).unwrap();
    let params = DiterParams {
        outer_iters: 6,
        ..DiterParams::default()
    };
    let prior = Prior::GaussianSmooth { sigma: 1.0 };
    let op = DegradationOp::identity();
    let (a, ta) = run_diamond(&noisy, &op, &prior, &params, Some(&clean)).unwrap();
    let (b, tb) = run_diamond(&noisy, &op, &prior, &params, Some(&clean)).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta.to_csv(), tb.to_csv());
    assert!(ta.records.iter().all(|r| r.data_fidelity.is_finite()));
}

#[test]
fn metric_convention_reproduces_reported_pair() {
    let p = psnr_from_rmse(6.9677).finite().unwrap();
    assert!((p - 31.2399).abs() <= 0.15, "{p}");
}

#[test]
fn awgn_level_15_psnr_is_near_theory() {
    // σ = 15 on 0..255 gives PSNR ≈ 20·log10(255/15) = 24.61 dB.
    let clean = Image::filled(128, 128, 0.5);
    let (noisy, _) = add_awgn(&clean, 15.0, 3).unwrap();
    let p = psnr(&noisy, &clean).unwrap().finite().unwrap();
    assert!((p - 24.61).abs() < 0.15, "{p}");
}

#[test]
fn zero_bundle_round_trip_is_identity() {
    for variant in [Variant::Sr2x, Variant::Denoise] {
        let cfg = GeneratorConfig {
            variant,
            depth: 2,
            res_counts: vec![1, 2],
            widths: vec![4, 8],
            ..GeneratorConfig::default()
        };
        let g = build_generator(&cfg, WeightInit::Zeros).unwrap();
        let bytes = encode_bundle(&g).unwrap();
        let loaded = decode_bundle(&bytes, Path::new("mem")).unwrap();
        let img = uniform_image(16, 16, 4);
        assert_eq!(generator_forward(&loaded, &img).unwrap(), img);
    }
}
