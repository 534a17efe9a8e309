//! Acceptance suite: one test per criterion, each printing a PASS line
//! with its measurements. Oracles here are independent of the library
//! paths they check: exhaustive enumeration for the solver, direct cosine
//! sums for transform bounds, and the JPEG magnitude-code enumeration for
//! category candidates.
//!
//! Run with `cargo test -p sbr-cli --test acceptance -- --nocapture`.

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sbr_core::codec::{
    self, encode_dc_chain, mask_signs, CodingConfig, CoeffKey, DiffChain, MaskedImage,
};
use sbr_core::image::{finalize, level_shift, write_pgm, PixelImage, ShiftDirection};
use sbr_core::metrics::{psnr, ssim, total_variation};
use sbr_core::model::{build_model, Integrality, ModelScope};
use sbr_core::recovery::{
    assemble_coefficients, recover, Alignment, Method, RecoveryConfig,
};
use sbr_core::solver::{solve_lp, solve_milp, MilpOptions, SolveStatus};
use sbr_core::synth::synthetic_image;
use sbr_core::transform::{
    forward_dct, inverse_dct, quantize, scale_quant_table, DctBasis, QuantTable,
};

/// The deterministic five-image evaluation corpus, 128x128.
fn corpus() -> Vec<PixelImage> {
    (1u64..=5).map(|seed| synthetic_image(128, 128, seed)).collect()
}

/// Runs the encoding pipeline and masks the first `u` zigzag positions.
fn build_instance(img: &PixelImage, u: usize, cfg: &CodingConfig, n: usize) -> MaskedImage {
    let basis = DctBasis::new(n).unwrap();
    let source =
        if cfg.level_shift { level_shift(img, ShiftDirection::Forward) } else { img.clone() };
    let mut coeffs = forward_dct(&source, &basis).unwrap();
    if let Some(q) = &cfg.quant {
        coeffs = quantize(&coeffs, q).unwrap();
    }
    let mut chain = if cfg.dc_prediction_mode == 0 {
        DiffChain::empty()
    } else {
        let dcs: Vec<f64> = (0..coeffs.block_rows * coeffs.block_cols)
            .map(|b| coeffs.get(b / coeffs.block_cols, b % coeffs.block_cols, 0, 0))
            .collect();
        encode_dc_chain(&dcs, coeffs.block_rows, coeffs.block_cols, cfg.dc_prediction_mode)
            .unwrap()
    };
    let mask = mask_signs(&coeffs, &mut chain, u, cfg, 0).unwrap();
    MaskedImage { coeffs, mask, chain, cfg: cfg.clone() }
}

/// Independent quantization-error widening, straight from raw cosines.
fn oracle_widen(quant: &QuantTable, n: usize) -> Vec<f64> {
    let c = |k: usize| {
        if k == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        }
    };
    let mut widen = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                for l in 0..n {
                    let a = c(k)
                        * ((i as f64 + 0.5) * k as f64 * std::f64::consts::PI / n as f64).cos()
                        * c(l)
                        * ((j as f64 + 0.5) * l as f64 * std::f64::consts::PI / n as f64).cos();
                    acc += a.abs() * quant.step(k, l) / 2.0;
                }
            }
            widen[i * n + j] = acc + 1.0;
        }
    }
    widen
}

/// Brute-force oracle: the best objective over every candidate assignment,
/// with pixel-range feasibility checked on the raw reconstruction.
fn enumeration_oracle(masked: &MaskedImage, basis: &DctBasis) -> Option<f64> {
    let keys: Vec<CoeffKey> = masked.mask.entries.keys().copied().collect();
    assert!(keys.len() <= 12);
    let n = masked.coeffs.n;
    let (x_min, x_max) = if masked.cfg.level_shift { (-128.0, 127.0) } else { (0.0, 255.0) };
    let widen = match (&masked.cfg.quant, masked.cfg.relax_pixels) {
        (Some(q), true) => oracle_widen(q, n),
        _ => vec![0.0; n * n],
    };
    let mut best: Option<f64> = None;
    for pattern in 0u64..(1 << keys.len()) {
        let assignment: BTreeMap<CoeffKey, f64> = keys
            .iter()
            .enumerate()
            .map(|(bit, &key)| {
                let e = &masked.mask.entries[&key];
                (key, if (pattern >> bit) & 1 == 1 { e.hi } else { e.lo })
            })
            .collect();
        let coeffs = assemble_coefficients(masked, &assignment).unwrap();
        let raw = inverse_dct(&coeffs, basis, x_min, x_max);
        let mut feasible = true;
        'scan: for i in 0..raw.height {
            for j in 0..raw.width {
                let v = raw.sample(i, j);
                let wdn = widen[(i % n) * n + (j % n)];
                if v < x_min - wdn - 1e-7 || v > x_max + wdn + 1e-7 {
                    feasible = false;
                    break 'scan;
                }
            }
        }
        if !feasible {
            continue;
        }
        let tv = total_variation(&raw);
        best = Some(best.map_or(tv, |b: f64| b.min(tv)));
    }
    best
}

struct OracleInstance {
    milp_objective: Option<f64>,
    oracle_objective: Option<f64>,
    relaxation_objective: Option<f64>,
}

/// The 200 random recovery MILPs shared by criteria 1 and 2.
fn oracle_instances() -> &'static Vec<OracleInstance> {
    static INSTANCES: OnceLock<Vec<OracleInstance>> = OnceLock::new();
    INSTANCES.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5b1c);
        let mut out = Vec::new();
        while out.len() < 200 {
            let n = if rng.random_bool(0.5) { 4 } else { 8 };
            let (w, h) = match (n, rng.random_range(0u8..3)) {
                (4, 0) => (8, 8),
                (4, 1) => (12, 8),
                (4, _) => (16, 12),
                (_, 0) => (8, 8),
                (_, 1) => (16, 8),
                (_, _) => (16, 16),
            };
            let img = synthetic_image(w, h, rng.random());
            let quant = match rng.random_range(0u8..3) {
                0 => None,
                1 => Some(scale_quant_table(&QuantTable::annex_k_luma(), 85).unwrap()),
                _ => Some(scale_quant_table(&QuantTable::annex_k_luma(), 95).unwrap()),
            };
            let quant = match (n, quant) {
                (8, q) => q,
                _ => None, // the standard table is 8x8
            };
            let cfg = CodingConfig {
                level_shift: rng.random_bool(0.5),
                twos_complement: quant.is_some() && rng.random_bool(0.4),
                quant,
                dc_prediction_mode: rng.random_range(0..4),
                threshold: 0.0,
                relax_pixels: true,
                relax_coeffs: false,
            };
            let blocks = (w / n) * (h / n);
            let mut u = rng.random_range(1..=3);
            let masked = loop {
                let candidate = build_instance(&img, u, &cfg, n);
                if candidate.mask.entries.len() <= 12 {
                    break candidate;
                }
                u -= 1;
                assert!(u >= 1, "cannot fit {blocks} blocks under 12 selectors");
            };
            if masked.mask.entries.is_empty() {
                continue;
            }
            let basis = DctBasis::new(n).unwrap();
            let scope = ModelScope::full_image(&masked.coeffs);
            let milp_model = build_model(&masked, &scope, Integrality::Milp, &basis).unwrap();
            let milp = solve_milp(&milp_model, &MilpOptions::default()).unwrap();
            let relax_model =
                build_model(&masked, &scope, Integrality::LpRelaxed, &basis).unwrap();
            let relax = solve_lp(&relax_model).unwrap();
            out.push(OracleInstance {
                milp_objective: match milp.status {
                    SolveStatus::Optimal => Some(milp.objective),
                    _ => None,
                },
                oracle_objective: enumeration_oracle(&masked, &basis),
                relaxation_objective: match relax.status {
                    SolveStatus::Optimal => Some(relax.objective),
                    _ => None,
                },
            });
        }
        out
    })
}

#[test]
fn criterion_1_solver_oracle_equivalence() {
    let started = Instant::now();
    let instances = oracle_instances();
    let mut checked = 0;
    for (idx, inst) in instances.iter().enumerate() {
        match (inst.milp_objective, inst.oracle_objective) {
            (Some(milp), Some(oracle)) => {
                assert!(
                    (milp - oracle).abs() <= 1e-6,
                    "instance {idx}: solver {milp} vs enumeration {oracle}"
                );
                checked += 1;
            }
            (None, None) => checked += 1,
            (milp, oracle) => {
                panic!("instance {idx}: solver {milp:?} disagrees with enumeration {oracle:?}")
            }
        }
    }
    println!(
        "criterion 1 (solver oracle equivalence): PASS - {checked}/200 instances agree within 1e-6 in {:.1}s",
        started.elapsed().as_secs_f64()
    );
}

#[test]
fn criterion_2_relaxation_bound() {
    let instances = oracle_instances();
    let mut checked = 0;
    for (idx, inst) in instances.iter().enumerate() {
        if let (Some(relax), Some(milp)) = (inst.relaxation_objective, inst.milp_objective) {
            assert!(
                relax <= milp + 1e-6,
                "instance {idx}: relaxation {relax} exceeds MILP {milp}"
            );
            checked += 1;
        }
    }
    assert!(checked >= 150, "only {checked} solved instances");
    println!(
        "criterion 2 (relaxation bound): PASS - LP <= MILP (1e-6 slack) on {checked}/{} solved instances",
        instances.len()
    );
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[test]
fn criterion_3_method_ordering() {
    let started = Instant::now();
    let images = corpus();
    let cfg = CodingConfig { level_shift: true, ..CodingConfig::default() };
    let mut psnrs: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for u in [3usize, 5] {
        for img in &images {
            let masked = build_instance(img, u, &cfg, 8);
            let basis = DctBasis::new(8).unwrap();
            for method in [
                Method::NaiveNegative,
                Method::NaivePositive,
                Method::NaiveLp,
                Method::RelaxedLp,
                Method::HierMilp,
            ] {
                let mut rc = RecoveryConfig::for_method(method);
                rc.region_size = (32, 32);
                rc.alignment = Alignment::GlobalMilp;
                rc.milp_time_limit = 600.0;
                let out = recover(&masked, &rc, &sbr_core::solver::BuiltinSolver, &basis).unwrap();
                let p = psnr(img, &out.image).unwrap();
                psnrs.entry(method.as_str()).or_default().push(p.min(99.0));
            }
        }
    }
    let m = |name: &str| mean(&psnrs[name]);
    let (hier, relax, nlp) = (m("hier-milp"), m("relaxed-lp"), m("naive-lp"));
    let naive_best = m("naive-neg").max(m("naive-pos"));
    assert!(hier > relax, "hier {hier:.2} vs relaxed {relax:.2}");
    assert!(relax > nlp, "relaxed {relax:.2} vs naive-lp {nlp:.2}");
    assert!(nlp > naive_best, "naive-lp {nlp:.2} vs best naive {naive_best:.2}");
    assert!(hier >= relax + 2.0, "hier advantage {:.2} dB below the 2 dB bar", hier - relax);
    println!(
        "criterion 3 (method ordering): PASS - mean PSNR hier {hier:.2} > relaxed {relax:.2} > naive-lp {nlp:.2} > naive {naive_best:.2}; margin {:.2} dB in {:.0}s",
        hier - relax,
        started.elapsed().as_secs_f64()
    );
}

#[test]
fn criterion_4_threshold_insensitivity() {
    let started = Instant::now();
    let images = corpus();
    let cfg = CodingConfig { level_shift: true, ..CodingConfig::default() };
    let basis = DctBasis::new(8).unwrap();
    let mut means = Vec::new();
    for threshold in [5.0, 0.0] {
        let mut scores = Vec::new();
        for img in &images {
            let masked = build_instance(img, 6, &cfg, 8);
            let mut rc = RecoveryConfig::for_method(Method::RelaxedLp);
            rc.threshold = threshold;
            let out = recover(&masked, &rc, &sbr_core::solver::BuiltinSolver, &basis).unwrap();
            scores.push(ssim(img, &out.image).unwrap());
        }
        means.push(mean(&scores));
    }
    let delta = (means[0] - means[1]).abs();
    assert!(delta < 0.05, "mean SSIM T=5 {} vs T=0 {}: delta {delta}", means[0], means[1]);
    println!(
        "criterion 4 (threshold insensitivity): PASS - |SSIM(T=5) - SSIM(T=0)| = {delta:.4} < 0.05 ({:.4} vs {:.4}) in {:.0}s",
        means[0],
        means[1],
        started.elapsed().as_secs_f64()
    );
}

#[test]
fn criterion_5_dc_prediction_degradation() {
    let started = Instant::now();
    let images = corpus();
    let basis = DctBasis::new(8).unwrap();
    let mut means = Vec::new();
    for mode in [0u8, 1, 2, 3] {
        let cfg = CodingConfig {
            level_shift: true,
            dc_prediction_mode: mode,
            ..CodingConfig::default()
        };
        let mut scores = Vec::new();
        for img in &images {
            let masked = build_instance(img, 2, &cfg, 8);
            let rc = RecoveryConfig::for_method(Method::RelaxedLp);
            let out = recover(&masked, &rc, &sbr_core::solver::BuiltinSolver, &basis).unwrap();
            scores.push(ssim(img, &out.image).unwrap());
        }
        means.push(mean(&scores));
    }
    let (m0, m1, m2, m3) = (means[0], means[1], means[2], means[3]);
    assert!(m0 > m3, "mode 0 {m0:.4} vs mode 3 {m3:.4}");
    assert!(m3 > m1, "mode 3 {m3:.4} vs mode 1 {m1:.4}");
    assert!(m1 > m2, "mode 1 {m1:.4} vs mode 2 {m2:.4}");
    println!(
        "criterion 5 (DC prediction degradation): PASS - mean SSIM mode0 {m0:.4} > mode3 {m3:.4} > mode1 {m1:.4} > mode2 {m2:.4} in {:.0}s",
        started.elapsed().as_secs_f64()
    );
}

#[test]
fn criterion_6_exactness_on_smooth_gradients() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6a_de);
    let basis = DctBasis::new(8).unwrap();
    let mut exact = 0;
    for case in 0..50 {
        let (a, b) = loop {
            let a = rng.random_range(-3i64..=3);
            let b = rng.random_range(-3i64..=3);
            if a != 0 || b != 0 {
                break (a, b);
            }
        };
        let (w, h) = (16usize, 16usize);
        // Keep the ramp inside [0, 255].
        let reach = (a.abs() as f64) * (h as f64 - 1.0) + (b.abs() as f64) * (w as f64 - 1.0);
        let base = rng.random_range(reach + 4.0..251.0 - reach).max(reach + 4.0);
        let samples: Vec<f64> = (0..w * h)
            .map(|p| base + a as f64 * (p / w) as f64 + b as f64 * (p % w) as f64)
            .collect();
        let img = finalize(&PixelImage::new(w, h, samples).unwrap());
        // Unshifted coding: the nonnegative DC anchors each block's
        // brightness, so trend-cancelling flip patterns are infeasible and
        // the true signs are the unique smoothness optimum.
        let cfg = CodingConfig::default();
        let u = rng.random_range(1..=3);
        let masked = build_instance(&img, u, &cfg, 8);
        let mut rc = RecoveryConfig::for_method(Method::HierMilp);
        rc.region_size = (16, 16);
        rc.alignment = Alignment::None;
        let out = recover(&masked, &rc, &sbr_core::solver::BuiltinSolver, &basis).unwrap();
        if out.image.samples == img.samples {
            exact += 1;
        } else {
            panic!(
                "case {case}: gradient a={a} b={b} base={base:.0} u={u} not exactly recovered"
            );
        }
    }
    println!(
        "criterion 6 (exactness on smooth gradients): PASS - {exact}/50 exact recoveries in {:.0}s",
        started.elapsed().as_secs_f64()
    );
}

#[test]
fn criterion_7_round_trip_suite() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x707);

    // Transform round trip, infinity norm below 1e-9.
    for _ in 0..1000 {
        let n = if rng.random_bool(0.5) { 4 } else { 8 };
        let (w, h) = (n * rng.random_range(1..=2), n * rng.random_range(1..=2));
        let samples: Vec<f64> = (0..w * h).map(|_| rng.random_range(0..256) as f64).collect();
        let img = PixelImage::new(w, h, samples).unwrap();
        let basis = DctBasis::new(n).unwrap();
        let co = forward_dct(&img, &basis).unwrap();
        let back = inverse_dct(&co, &basis, 0.0, 255.0);
        for (x, y) in img.samples.iter().zip(&back.samples) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    // PGM bytes survive a write/read cycle.
    for _ in 0..1000 {
        let (w, h) = (rng.random_range(1..24), rng.random_range(1..24));
        let samples: Vec<f64> = (0..w * h).map(|_| rng.random_range(0..256) as f64).collect();
        let img = PixelImage::new(w, h, samples).unwrap();
        let back = sbr_core::image::read_pgm(&write_pgm(&img)).unwrap();
        assert_eq!(back.samples, img.samples);
    }

    // Differential chains decode to their input exactly.
    for _ in 0..1000 {
        let mode = rng.random_range(1..=3);
        let (rows, cols) = (rng.random_range(1..6), rng.random_range(1..6));
        let dcs: Vec<f64> =
            (0..rows * cols).map(|_| rng.random_range(-2048..=2048) as f64).collect();
        let chain = encode_dc_chain(&dcs, rows, cols, mode).unwrap();
        let back = codec::decode_dc_chain(&chain, rows, cols).unwrap();
        for (x, y) in dcs.iter().zip(&back) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    // Coefficient files reparse to the identical structure and bytes.
    for round in 0..1000 {
        let n = if round % 2 == 0 { 4 } else { 8 };
        let img = synthetic_image(2 * n, 2 * n, rng.random());
        let quant = if n == 8 && rng.random_bool(0.5) {
            Some(scale_quant_table(&QuantTable::annex_k_luma(), rng.random_range(50..=95)).unwrap())
        } else {
            None
        };
        let cfg = CodingConfig {
            level_shift: rng.random_bool(0.5),
            twos_complement: quant.is_some() && rng.random_bool(0.5),
            quant,
            dc_prediction_mode: rng.random_range(0..4),
            threshold: if rng.random_bool(0.3) { 5.0 } else { 0.0 },
            relax_pixels: true,
            relax_coeffs: rng.random_bool(0.2),
        };
        let masked = build_instance(&img, rng.random_range(1..=4), &cfg, n);
        let text = codec::write_coeff_file(&masked);
        let back = codec::read_coeff_file(&text).unwrap();
        assert_eq!(codec::write_coeff_file(&back), text);
        assert_eq!(back.chain, masked.chain);
        assert_eq!(back.mask.forced_zero, masked.mask.forced_zero);
        assert_eq!(back.mask.entries.len(), masked.mask.entries.len());
    }

    println!(
        "criterion 7 (round-trip suite): PASS - 4 x 1000 cases in {:.1}s",
        started.elapsed().as_secs_f64()
    );
}

#[test]
fn criterion_8_category_candidates() {
    // Enumerate every JPEG magnitude code with S <= 10 and check both
    // decode rules against the library's candidate pair.
    let mut total = 0;
    for s in 1u32..=10 {
        let half = 1i64 << (s - 1);
        let full = (1i64 << s) - 1;
        let mut by_b: BTreeMap<u64, (Option<i64>, Option<i64>)> = BTreeMap::new();
        for v in (half..=full).chain(-full..=-half) {
            let code = if v > 0 { v as u64 } else { (v + full) as u64 };
            let leading = code >> (s - 1);
            let b = if s == 1 { 0 } else { code & ((1u64 << (s - 1)) - 1) };
            let slot = by_b.entry(b).or_default();
            if leading == 1 {
                slot.1 = Some(v);
            } else {
                slot.0 = Some(v);
            }
        }
        for (b, (lo, hi)) in by_b {
            let (clo, chi) = codec::sign_candidates_category(s, b).unwrap();
            assert_eq!(Some(clo), lo, "S={s} b={b}");
            assert_eq!(Some(chi), hi, "S={s} b={b}");
            total += 1;
        }
    }
    println!(
        "criterion 8 (category candidates): PASS - all {total} (S, b) codes with S <= 10 match the enumeration"
    );
}

#[test]
fn criterion_9_determinism() {
    let started = Instant::now();
    let dir = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance_determinism");
    let _ = std::fs::remove_dir_all(&dir);
    let images_dir = dir.join("imgs");
    std::fs::create_dir_all(&images_dir).unwrap();
    for seed in [21u64, 22, 23] {
        let img = synthetic_image(48, 48, seed);
        std::fs::write(images_dir.join(format!("img{seed}.pgm")), write_pgm(&img)).unwrap();
    }
    let sweep = "u = 2\nmethod = naive-neg,relaxed-lp,hier-milp\nregion = 16x16\nlevel_shift = 1\n";
    let sweep_path = dir.join("sweep.txt");
    std::fs::write(&sweep_path, sweep).unwrap();

    let mut outputs: Vec<(Vec<u8>, BTreeMap<String, Vec<u8>>)> = Vec::new();
    for run in 0..3 {
        let keep = dir.join(format!("keep{run}"));
        let csv = dir.join(format!("run{run}.csv"));
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_sbr"))
            .args(["bench", "--images"])
            .arg(&images_dir)
            .arg("--sweep")
            .arg(&sweep_path)
            .arg("--out")
            .arg(&csv)
            .arg("--keep-images")
            .arg(&keep)
            .args(["--jobs", "2", "--seed", "99", "--zero-time"])
            .status()
            .unwrap();
        assert!(status.success());
        let mut pgms = BTreeMap::new();
        for entry in std::fs::read_dir(&keep).unwrap() {
            let path = entry.unwrap().path();
            pgms.insert(
                path.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&path).unwrap(),
            );
        }
        assert_eq!(pgms.len(), 9, "3 images x 3 configs recovered images");
        outputs.push((std::fs::read(&csv).unwrap(), pgms));
    }
    assert_eq!(outputs[0].0, outputs[1].0, "CSV run 0 vs 1");
    assert_eq!(outputs[1].0, outputs[2].0, "CSV run 1 vs 2");
    assert_eq!(outputs[0].1, outputs[1].1, "PGMs run 0 vs 1");
    assert_eq!(outputs[1].1, outputs[2].1, "PGMs run 1 vs 2");
    println!(
        "criterion 9 (determinism): PASS - 3/3 bench repeats byte-identical (CSV and 9 PGMs) in {:.0}s",
        started.elapsed().as_secs_f64()
    );
}
