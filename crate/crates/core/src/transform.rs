//! Blockwise N×N 2-D DCT/IDCT, JPEG zigzag ordering, quantization tables,
//! quality-factor scaling, and the per-pixel quantization error bound.
//!
//! The transform is computed by direct multiplication with the orthonormal
//! basis tensor; at N = 8 the cost is negligible and the results are
//! bit-for-bit reproducible across platforms.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::image::PixelImage;

/// The JPEG Annex K luminance quantization table, row-major.
pub const ANNEX_K_LUMA: [u32; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Orthonormal 2-D DCT basis for an N×N block.
///
/// `weight(i, j, k, l)` is the contribution of coefficient `(k, l)` to pixel
/// `(i, j)`; as an N²×N² matrix the basis satisfies `AᵀA = I`.
#[derive(Debug, Clone)]
pub struct DctBasis {
    pub n: usize,
    /// Flattened tensor indexed by `((i * n + j) * n + k) * n + l`.
    weights: Vec<f64>,
}

impl DctBasis {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Shape("block size must be positive".into()));
        }
        let norm0 = (1.0 / n as f64).sqrt();
        let norm = (2.0 / n as f64).sqrt();
        let scale = |k: usize| if k == 0 { norm0 } else { norm };
        let mut weights = vec![0.0; n * n * n * n];
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let ck = scale(k) * ((i as f64 + 0.5) * k as f64 * PI / n as f64).cos();
                        let cl = scale(l) * ((j as f64 + 0.5) * l as f64 * PI / n as f64).cos();
                        weights[((i * n + j) * n + k) * n + l] = ck * cl;
                    }
                }
            }
        }
        Ok(DctBasis { n, weights })
    }

    #[inline]
    pub fn weight(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        let n = self.n;
        self.weights[((i * n + j) * n + k) * n + l]
    }
}

/// Positive integer quantization steps for an N×N block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantTable {
    pub n: usize,
    /// Row-major steps, all >= 1.
    pub steps: Vec<u32>,
    pub source: QuantSource,
}

/// Provenance of a quantization table, recorded so coefficient files can be
/// reconstructed exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QuantSource {
    Explicit,
    QfScaled(u8),
}

impl QuantTable {
    pub fn new(n: usize, steps: Vec<u32>, source: QuantSource) -> Result<Self> {
        if steps.len() != n * n {
            return Err(Error::Shape(format!(
                "quantization table needs {} entries, got {}",
                n * n,
                steps.len()
            )));
        }
        if steps.iter().any(|&q| q == 0) {
            return Err(Error::Config("quantization steps must be >= 1".into()));
        }
        Ok(QuantTable { n, steps, source })
    }

    /// The standard luminance table for N = 8.
    pub fn annex_k_luma() -> Self {
        QuantTable { n: 8, steps: ANNEX_K_LUMA.to_vec(), source: QuantSource::Explicit }
    }

    #[inline]
    pub fn step(&self, k: usize, l: usize) -> f64 {
        self.steps[k * self.n + l] as f64
    }

    /// Parses a whitespace-separated list of N² integers in row-major order.
    pub fn from_text(n: usize, text: &str) -> Result<Self> {
        let steps: Vec<u32> = text
            .split_whitespace()
            .map(|t| t.parse::<u32>().map_err(|_| Error::Format(format!("bad table entry {t:?}"))))
            .collect::<Result<_>>()?;
        QuantTable::new(n, steps, QuantSource::Explicit)
    }
}

/// Scales a base table by the IJG quality-factor law:
/// `scale = 5000/QF` below 50, else `200 - 2*QF`, then
/// `Q'(k,l) = max(1, floor((Q(k,l)*scale + 50) / 100))`.
pub fn scale_quant_table(base: &QuantTable, qf: u8) -> Result<QuantTable> {
    if qf == 0 || qf > 100 {
        return Err(Error::Config(format!("quality factor {qf} outside 1..=100")));
    }
    let scale: u64 = if qf < 50 { 5000 / qf as u64 } else { 200 - 2 * qf as u64 };
    let steps = base
        .steps
        .iter()
        .map(|&q| ((q as u64 * scale + 50) / 100).max(1) as u32)
        .collect();
    Ok(QuantTable { n: base.n, steps, source: QuantSource::QfScaled(qf) })
}

/// Per-block DCT coefficient grid with optional quantization metadata.
///
/// `coeffs` always holds dequantized (real) values; when `quant` is present,
/// `coeffs[b][k][l] == quantized[b][k][l] * Q(k,l)` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffImage {
    pub n: usize,
    pub block_rows: usize,
    pub block_cols: usize,
    /// Indexed by `((br * block_cols + bc) * n + k) * n + l`.
    pub coeffs: Vec<f64>,
    pub quant: Option<QuantTable>,
    pub quantized: Option<Vec<i64>>,
}

impl CoeffImage {
    pub fn zeros(n: usize, block_rows: usize, block_cols: usize) -> Self {
        CoeffImage {
            n,
            block_rows,
            block_cols,
            coeffs: vec![0.0; block_rows * block_cols * n * n],
            quant: None,
            quantized: None,
        }
    }

    #[inline]
    pub fn idx(&self, br: usize, bc: usize, k: usize, l: usize) -> usize {
        ((br * self.block_cols + bc) * self.n + k) * self.n + l
    }

    #[inline]
    pub fn get(&self, br: usize, bc: usize, k: usize, l: usize) -> f64 {
        self.coeffs[self.idx(br, bc, k, l)]
    }

    #[inline]
    pub fn set(&mut self, br: usize, bc: usize, k: usize, l: usize, v: f64) {
        let i = self.idx(br, bc, k, l);
        self.coeffs[i] = v;
    }

    pub fn width(&self) -> usize {
        self.block_cols * self.n
    }

    pub fn height(&self) -> usize {
        self.block_rows * self.n
    }
}

/// Blockwise forward DCT. Image dimensions must be multiples of the block
/// size.
pub fn forward_dct(img: &PixelImage, basis: &DctBasis) -> Result<CoeffImage> {
    let n = basis.n;
    if img.width % n != 0 || img.height % n != 0 {
        return Err(Error::Shape(format!(
            "image {}x{} not divisible into {n}x{n} blocks",
            img.width, img.height
        )));
    }
    let block_rows = img.height / n;
    let block_cols = img.width / n;
    let mut out = CoeffImage::zeros(n, block_rows, block_cols);
    for br in 0..block_rows {
        for bc in 0..block_cols {
            for k in 0..n {
                for l in 0..n {
                    let mut acc = 0.0;
                    for i in 0..n {
                        for j in 0..n {
                            let x = img.sample(br * n + i, bc * n + j);
                            acc += basis.weight(i, j, k, l) * x;
                        }
                    }
                    out.set(br, bc, k, l, acc);
                }
            }
        }
    }
    Ok(out)
}

/// Blockwise inverse DCT producing raw real samples (no clamping or
/// rounding). The output keeps the `[x_min, x_max]` range metadata supplied
/// by the caller.
pub fn inverse_dct(coeffs: &CoeffImage, basis: &DctBasis, x_min: f64, x_max: f64) -> PixelImage {
    let n = coeffs.n;
    debug_assert_eq!(basis.n, n);
    let width = coeffs.width();
    let height = coeffs.height();
    let mut samples = vec![0.0; width * height];
    for br in 0..coeffs.block_rows {
        for bc in 0..coeffs.block_cols {
            for i in 0..n {
                for j in 0..n {
                    let mut acc = 0.0;
                    for k in 0..n {
                        for l in 0..n {
                            acc += basis.weight(i, j, k, l) * coeffs.get(br, bc, k, l);
                        }
                    }
                    samples[(br * n + i) * width + bc * n + j] = acc;
                }
            }
        }
    }
    PixelImage { width, height, bit_depth: 8, samples, x_min, x_max }
}

/// The position visited at step `u` of the JPEG zigzag scan of an N×N block.
pub fn zigzag_index(n: usize, u: usize) -> Result<(usize, usize)> {
    zigzag_order(n)
        .get(u)
        .copied()
        .ok_or_else(|| Error::Config(format!("zigzag position {u} out of range for {n}x{n}")))
}

/// The full zigzag scan order: anti-diagonals of increasing `k + l`, odd
/// diagonals walked top-right to bottom-left, even ones the reverse.
pub fn zigzag_order(n: usize) -> Vec<(usize, usize)> {
    let mut order = Vec::with_capacity(n * n);
    for s in 0..(2 * n - 1) {
        let lo = s.saturating_sub(n - 1);
        let hi = s.min(n - 1);
        if s % 2 == 1 {
            for k in lo..=hi {
                order.push((k, s - k));
            }
        } else {
            for k in (lo..=hi).rev() {
                order.push((k, s - k));
            }
        }
    }
    order
}

/// Rounds to the nearest integer with ties away from zero.
#[inline]
pub fn round_half_away(v: f64) -> f64 {
    v.round()
}

/// Divides each coefficient by its step and rounds to the nearest integer
/// (ties away from zero), storing both the integer grid and the dequantized
/// values.
pub fn quantize(coeffs: &CoeffImage, quant: &QuantTable) -> Result<CoeffImage> {
    if quant.n != coeffs.n {
        return Err(Error::Shape("quantization table block size mismatch".into()));
    }
    let n = coeffs.n;
    let mut quantized = vec![0i64; coeffs.coeffs.len()];
    let mut deq = vec![0.0; coeffs.coeffs.len()];
    for br in 0..coeffs.block_rows {
        for bc in 0..coeffs.block_cols {
            for k in 0..n {
                for l in 0..n {
                    let i = coeffs.idx(br, bc, k, l);
                    let q = quant.step(k, l);
                    let y = round_half_away(coeffs.coeffs[i] / q) as i64;
                    quantized[i] = y;
                    deq[i] = y as f64 * q;
                }
            }
        }
    }
    Ok(CoeffImage {
        n,
        block_rows: coeffs.block_rows,
        block_cols: coeffs.block_cols,
        coeffs: deq,
        quant: Some(quant.clone()),
        quantized: Some(quantized),
    })
}

/// Rebuilds dequantized values from an integer grid: `y = Y * Q`.
pub fn dequantize(
    quantized: &[i64],
    quant: &QuantTable,
    block_rows: usize,
    block_cols: usize,
) -> Result<CoeffImage> {
    let n = quant.n;
    if quantized.len() != block_rows * block_cols * n * n {
        return Err(Error::Shape("quantized grid length mismatch".into()));
    }
    let mut out = CoeffImage::zeros(n, block_rows, block_cols);
    for br in 0..block_rows {
        for bc in 0..block_cols {
            for k in 0..n {
                for l in 0..n {
                    let i = out.idx(br, bc, k, l);
                    out.coeffs[i] = quantized[i] as f64 * quant.step(k, l);
                }
            }
        }
    }
    out.quant = Some(quant.clone());
    out.quantized = Some(quantized.to_vec());
    Ok(out)
}

/// Worst-case pixel perturbation from coefficient quantization:
/// `eps(i,j) = sum_{k,l} |A(i,j,k,l)| * Q(k,l) / 2`, returned row-major.
pub fn quant_error_bound(quant: &QuantTable, basis: &DctBasis) -> Vec<f64> {
    let n = basis.n;
    debug_assert_eq!(quant.n, n);
    let mut eps = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                for l in 0..n {
                    acc += basis.weight(i, j, k, l).abs() * quant.step(k, l) / 2.0;
                }
            }
            eps[i * n + j] = acc;
        }
    }
    eps
}
