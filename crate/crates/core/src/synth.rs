//! Deterministic generation of natural-looking grayscale test images:
//! smooth low-frequency shading, a few region edges, and mild texture, so
//! neighbor differences follow the heavy-tailed, near-Laplacian statistics
//! the smoothness objective relies on.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::image::{finalize, PixelImage};

/// Generates a `width` x `height` image from a seed. Identical inputs give
/// identical images on every platform.
pub fn synthetic_image(width: usize, height: usize, seed: u64) -> PixelImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = width as f64;
    let h = height as f64;

    // Background with a photographic roughly-1/f spectrum: a few waves
    // per octave from one cycle per image up to a few cycles per block,
    // amplitudes falling off with frequency. Mid-band energy is what
    // anchors sign recovery; spectra much steeper than 1/f make smooth
    // forgeries cheap.
    let slope = rng.random_range(0.9..1.2);
    let base_amp = rng.random_range(26.0..40.0);
    let mut waves: Vec<(f64, f64, f64, f64)> = Vec::new();
    let octaves = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0];
    for &cycles in &octaves {
        let per_octave = if cycles <= 2.0 { 2 } else { 3 };
        for _ in 0..per_octave {
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let f = cycles * rng.random_range(0.75..1.35) * std::f64::consts::TAU / w.max(h);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let amp = base_amp / cycles.powf(slope) * rng.random_range(0.6..1.4);
            waves.push((f * theta.cos(), f * theta.sin(), phase, amp));
        }
    }

    // A few elliptical patches with their own brightness. The boundary
    // falls off over a couple of pixels the way defocused object edges do;
    // razor-sharp steps would be unrealistically easy for the smoothness
    // objective to cancel.
    let n_blobs = 2 + (rng.random::<u32>() % 4) as usize;
    let blobs: Vec<(f64, f64, f64, f64, f64, f64)> = (0..n_blobs)
        .map(|_| {
            let cx = rng.random_range(0.1 * w..0.9 * w);
            let cy = rng.random_range(0.1 * h..0.9 * h);
            let rx = rng.random_range(0.08 * w..0.35 * w);
            let ry = rng.random_range(0.08 * h..0.35 * h);
            let delta = rng.random_range(-40.0..40.0);
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            (cx, cy, rx, ry, delta, angle)
        })
        .collect();

    let base = rng.random_range(100.0..150.0);

    // Texture: white noise smoothed by a small box filter.
    let mut noise = vec![0.0f64; width * height];
    for v in &mut noise {
        *v = rng.random_range(-13.0..13.0);
    }
    let smooth = |field: &[f64], i: usize, j: usize| -> f64 {
        let mut acc = 0.0;
        let mut cnt = 0.0;
        for di in -1i64..=1 {
            for dj in -1i64..=1 {
                let r = i as i64 + di;
                let c = j as i64 + dj;
                if r >= 0 && r < height as i64 && c >= 0 && c < width as i64 {
                    acc += field[r as usize * width + c as usize];
                    cnt += 1.0;
                }
            }
        }
        acc / cnt
    };

    let mut samples = vec![0.0f64; width * height];
    for i in 0..height {
        for j in 0..width {
            let (x, y) = (j as f64, i as f64);
            let mut v = base;
            for &(fx, fy, phase, amp) in &waves {
                v += amp * (fx * x + fy * y + phase).cos();
            }
            for &(cx, cy, rx, ry, delta, angle) in &blobs {
                let (dx, dy) = (x - cx, y - cy);
                let (ca, sa) = (angle.cos(), angle.sin());
                let u = (dx * ca + dy * sa) / rx;
                let t = (-dx * sa + dy * ca) / ry;
                let r2 = u * u + t * t;
                // Smooth falloff roughly 2-3 pixels wide at the rim.
                let edge = (rx.min(ry) * (1.0 - r2) / 2.5).clamp(-40.0, 40.0);
                v += delta / (1.0 + (-edge).exp());
            }
            v += smooth(&noise, i, j);
            samples[i * width + j] = v;
        }
    }
    // Rescale into [8, 247] so clamping never creates saturated plateaus.
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = (hi - lo).max(1e-9);
    for v in &mut samples {
        *v = 8.0 + (*v - lo) / span * 239.0;
    }
    finalize(&PixelImage {
        width,
        height,
        bit_depth: 8,
        samples,
        x_min: 0.0,
        x_max: 255.0,
    })
}
