//! Manual probe for the gradient-exactness corner cases.

use std::collections::BTreeMap;

use sbr_core::codec::{mask_signs, CodingConfig, CoeffKey, DiffChain, MaskedImage};
use sbr_core::image::{finalize, PixelImage};
use sbr_core::metrics::total_variation;
use sbr_core::recovery::assemble_coefficients;
use sbr_core::transform::{forward_dct, inverse_dct, DctBasis};

#[test]
#[ignore = "manual probe"]
fn inspect_case() {
    let (a, b, base, u) = (-2f64, 1f64, 52f64, 3usize);
    let (w, h) = (16usize, 16usize);
    let samples: Vec<f64> =
        (0..w * h).map(|p| base + a * (p / w) as f64 + b * (p % w) as f64).collect();
    let img = finalize(&PixelImage::new(w, h, samples).unwrap());
    let basis = DctBasis::new(8).unwrap();
    let coeffs = forward_dct(&img, &basis).unwrap();
    let cfg = CodingConfig::default();
    let mut chain = DiffChain::empty();
    let mask = mask_signs(&coeffs, &mut chain, u, &cfg, 0).unwrap();
    let masked = MaskedImage { coeffs, mask, chain, cfg };
    let keys: Vec<CoeffKey> = masked.mask.entries.keys().copied().collect();
    eprintln!("unknowns: {}", keys.len());
    let mut best = (f64::INFINITY, 0u64);
    let mut truth_pattern = 0u64;
    for (bit, key) in keys.iter().enumerate() {
        let e = &masked.mask.entries[key];
        if e.truth.unwrap() > 0.0 {
            truth_pattern |= 1 << bit;
        }
    }
    for pattern in 0u64..(1 << keys.len()) {
        let assignment: BTreeMap<CoeffKey, f64> = keys
            .iter()
            .enumerate()
            .map(|(bit, &key)| {
                let e = &masked.mask.entries[&key];
                (key, if (pattern >> bit) & 1 == 1 { e.hi } else { e.lo })
            })
            .collect();
        let co = assemble_coefficients(&masked, &assignment).unwrap();
        let raw = inverse_dct(&co, &basis, 0.0, 255.0);
        if raw.samples.iter().any(|&v| v < 0.0 - 1e-7 || v > 255.0 + 1e-7) {
            continue;
        }
        let tv = total_variation(&raw);
        if tv < best.0 {
            best = (tv, pattern);
        }
        if pattern == truth_pattern {
            eprintln!("truth pattern {pattern:b}: tv = {tv:.6}");
        }
    }
    eprintln!("best pattern {:b}: tv = {:.6}", best.1, best.0);
    eprintln!("truth is best: {}", best.1 == truth_pattern);
}
