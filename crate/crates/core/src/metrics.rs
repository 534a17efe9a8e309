//! Objective quality metrics (PSNR, single-scale SSIM) and the Laplacian
//! neighbor-difference statistics behind the smoothness objective.

use crate::error::{Error, Result};
use crate::image::PixelImage;

/// Quality summary of one recovered image against its reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    /// Decibels; `f64::INFINITY` when the images are identical.
    pub psnr: f64,
    pub ssim: f64,
}

fn check_dims(a: &PixelImage, b: &PixelImage) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::Shape(format!(
            "image dimensions differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio with a 255 peak: `10 log10(255^2 / MSE)`.
pub fn psnr(reference: &PixelImage, test: &PixelImage) -> Result<f64> {
    check_dims(reference, test)?;
    let mse: f64 = reference
        .samples
        .iter()
        .zip(&test.samples)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / reference.samples.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_L: f64 = 255.0;

fn gaussian_window() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW * SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for r in 0..SSIM_WINDOW {
        for s in 0..SSIM_WINDOW {
            let d2 = (r as f64 - c).powi(2) + (s as f64 - c).powi(2);
            let v = (-d2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            w[r * SSIM_WINDOW + s] = v;
            sum += v;
        }
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Single-scale SSIM: 11x11 Gaussian window with sigma 1.5, K1 = 0.01,
/// K2 = 0.03, L = 255, averaged over valid (fully interior) windows, no
/// downsampling.
pub fn ssim(reference: &PixelImage, test: &PixelImage) -> Result<f64> {
    check_dims(reference, test)?;
    if reference.width < SSIM_WINDOW || reference.height < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels"
        )));
    }
    let window = gaussian_window();
    let c1 = (SSIM_K1 * SSIM_L) * (SSIM_K1 * SSIM_L);
    let c2 = (SSIM_K2 * SSIM_L) * (SSIM_K2 * SSIM_L);
    let w = reference.width;
    let mut total = 0.0;
    let mut count = 0usize;
    for top in 0..=(reference.height - SSIM_WINDOW) {
        for left in 0..=(reference.width - SSIM_WINDOW) {
            let mut mu_x = 0.0;
            let mut mu_y = 0.0;
            for r in 0..SSIM_WINDOW {
                for s in 0..SSIM_WINDOW {
                    let g = window[r * SSIM_WINDOW + s];
                    mu_x += g * reference.samples[(top + r) * w + left + s];
                    mu_y += g * test.samples[(top + r) * w + left + s];
                }
            }
            let mut var_x = 0.0;
            let mut var_y = 0.0;
            let mut cov = 0.0;
            for r in 0..SSIM_WINDOW {
                for s in 0..SSIM_WINDOW {
                    let g = window[r * SSIM_WINDOW + s];
                    let dx = reference.samples[(top + r) * w + left + s] - mu_x;
                    let dy = test.samples[(top + r) * w + left + s] - mu_y;
                    var_x += g * dx * dx;
                    var_y += g * dy * dy;
                    cov += g * dx * dy;
                }
            }
            let num = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2);
            let den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

pub fn report(reference: &PixelImage, test: &PixelImage) -> Result<MetricsReport> {
    Ok(MetricsReport { psnr: psnr(reference, test)?, ssim: ssim(reference, test)? })
}

/// All 4-neighbor pixel differences of an image, horizontal pairs first
/// within each pixel's row-major visit.
pub fn neighbor_differences(img: &PixelImage) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * img.width * img.height);
    for i in 0..img.height {
        for j in 0..img.width {
            let v = img.sample(i, j);
            if j + 1 < img.width {
                out.push(v - img.sample(i, j + 1));
            }
            if i + 1 < img.height {
                out.push(v - img.sample(i + 1, j));
            }
        }
    }
    out
}

/// Sum of absolute 4-neighbor differences: the value of the smoothness
/// objective at a fully determined image.
pub fn total_variation(img: &PixelImage) -> f64 {
    neighbor_differences(img).iter().map(|d| d.abs()).sum()
}

/// Maximum-likelihood estimate of the Laplacian scale parameter from
/// zero-mean samples: the mean absolute value.
pub fn laplacian_b_mle(samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Config("MLE needs at least one sample".into()));
    }
    Ok(samples.iter().map(|v| v.abs()).sum::<f64>() / samples.len() as f64)
}
