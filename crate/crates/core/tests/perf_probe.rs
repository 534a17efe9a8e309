//! Scale probe: whole-image relaxation and one region MILP on a synthetic
//! natural image, checking wall time stays in the workable range.

use std::time::Instant;

use sbr_core::codec::{mask_signs, CodingConfig, DiffChain};
use sbr_core::image::level_shift;
use sbr_core::model::{build_model, Integrality, ModelScope};
use sbr_core::recovery::{recover, Method, RecoveryConfig};
use sbr_core::solver::{solve_lp, BuiltinSolver, SolveStatus};
use sbr_core::synth::synthetic_image;
use sbr_core::transform::{forward_dct, DctBasis};

#[test]
#[ignore = "manual scale probe"]
fn whole_image_lp_128() {
    let basis = DctBasis::new(8).unwrap();
    let size: usize = std::env::var("PROBE_SIZE").ok().and_then(|v| v.parse().ok()).unwrap_or(64);
    let img = synthetic_image(size, size, 11);
    let shifted = level_shift(&img, sbr_core::image::ShiftDirection::Forward);
    let coeffs = forward_dct(&shifted, &basis).unwrap();
    let cfg = CodingConfig { level_shift: true, ..CodingConfig::default() };
    let mut chain = DiffChain::empty();
    let mask = mask_signs(&coeffs, &mut chain, 5, &cfg, 0).unwrap();
    let masked = sbr_core::codec::MaskedImage { coeffs, mask, chain, cfg };
    let scope = ModelScope::full_image(&masked.coeffs);
    let t0 = Instant::now();
    let model = build_model(&masked, &scope, Integrality::LpRelaxed, &basis).unwrap();
    let built = t0.elapsed().as_secs_f64();
    eprintln!(
        "model: {} vars, {} rows, built in {built:.2}s",
        model.variables.len(),
        model.constraints.len()
    );
    let t1 = Instant::now();
    let sol = solve_lp(&model).unwrap();
    eprintln!(
        "lp: status={:?} obj={:.3} iters={} t={:.2}s",
        sol.status,
        sol.objective,
        sol.stats.simplex_iterations,
        t1.elapsed().as_secs_f64()
    );
    assert_eq!(sol.status, SolveStatus::Optimal);
}

#[test]
#[ignore = "manual scale probe"]
fn hier_milp_64() {
    let basis = DctBasis::new(8).unwrap();
    let img = synthetic_image(64, 64, 3);
    let shifted = level_shift(&img, sbr_core::image::ShiftDirection::Forward);
    let coeffs = forward_dct(&shifted, &basis).unwrap();
    let cfg = CodingConfig { level_shift: true, ..CodingConfig::default() };
    let mut chain = DiffChain::empty();
    let mask = mask_signs(&coeffs, &mut chain, 3, &cfg, 0).unwrap();
    let masked = sbr_core::codec::MaskedImage { coeffs, mask, chain, cfg };
    let recovery = RecoveryConfig::for_method(Method::HierMilp);
    let t0 = Instant::now();
    let out = recover(&masked, &recovery, &BuiltinSolver, &basis).unwrap();
    eprintln!(
        "hier-milp 64x64: status={:?} tv={:.1} nodes={} iters={} t={:.2}s",
        out.status,
        out.objective,
        out.stats.nodes,
        out.stats.simplex_iterations,
        t0.elapsed().as_secs_f64()
    );
}

#[test]
#[ignore = "manual quality probe"]
fn method_quality_comparison() {
    let basis = DctBasis::new(8).unwrap();
    let size: usize = std::env::var("PROBE_SIZE").ok().and_then(|v| v.parse().ok()).unwrap_or(64);
    let u: usize = std::env::var("PROBE_U").ok().and_then(|v| v.parse().ok()).unwrap_or(3);
    let seed: u64 = std::env::var("PROBE_SEED").ok().and_then(|v| v.parse().ok()).unwrap_or(11);
    let img = synthetic_image(size, size, seed);
    let shifted = level_shift(&img, sbr_core::image::ShiftDirection::Forward);
    let coeffs = forward_dct(&shifted, &basis).unwrap();
    let cfg = CodingConfig { level_shift: true, ..CodingConfig::default() };
    let mut chain = DiffChain::empty();
    let mask = mask_signs(&coeffs, &mut chain, u, &cfg, 0).unwrap();
    let masked = sbr_core::codec::MaskedImage { coeffs, mask, chain, cfg };
    for method in [
        Method::NaiveNegative,
        Method::NaivePositive,
        Method::NaiveLp,
        Method::RelaxedLp,
        Method::HierMilp,
    ] {
        let mut rc = RecoveryConfig::for_method(method);
        rc.threshold = 0.0;
        if std::env::var("PROBE_NO_ALIGN").is_ok() {
            rc.alignment = sbr_core::recovery::Alignment::None;
        }
        let t0 = Instant::now();
        let out = recover(&masked, &rc, &BuiltinSolver, &basis).unwrap();
        let psnr = sbr_core::metrics::psnr(&img, &out.image).unwrap();
        let ssim = sbr_core::metrics::ssim(&img, &out.image).unwrap();
        eprintln!(
            "{:>10}: psnr={:6.2} ssim={:.4} tv={:9.1} nodes={:6} t={:7.2}s status={:?}",
            method.as_str(),
            psnr,
            ssim,
            out.objective,
            out.stats.nodes,
            t0.elapsed().as_secs_f64(),
            out.status
        );
    }
}
