//! Models which sign bits are unknown and what each unknown's two candidate
//! values are: plain symmetric magnitudes, JPEG-style magnitude-category
//! codes with asymmetric candidates, and DC differential coding with four
//! prediction modes. Also defines the `SBC1` coefficient interchange file.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::transform::{
    scale_quant_table, zigzag_order, CoeffImage, QuantSource, QuantTable,
};

/// Coefficient position addressed as (block_row, block_col, k, l).
pub type CoeffKey = (usize, usize, usize, usize);

/// One unknown-sign entry: the two candidate values and, for evaluation
/// only, the original signed value.
#[derive(Debug, Clone, PartialEq)]
pub struct SignEntry {
    pub lo: f64,
    pub hi: f64,
    pub truth: Option<f64>,
}

/// The set of coefficient positions whose sign bit is unknown.
///
/// Under DC prediction modes 1-3 an entry at `(br, bc, 0, 0)` refers to the
/// sign of that block's differential `z`, not the DC itself.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SignMask {
    pub entries: BTreeMap<CoeffKey, SignEntry>,
    /// Positions whose value was destroyed by thresholding; they decode as
    /// hard zeros.
    pub forced_zero: BTreeSet<CoeffKey>,
}

impl SignMask {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty() && self.forced_zero.is_empty()
    }
}

/// Differential slot of one block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ZSlot {
    Known(f64),
    /// Candidates live in the mask entry at this block's (0, 0) key.
    Unknown,
    ForcedZero,
}

/// DC differential chain. Empty for prediction mode 0 (absolute coding);
/// otherwise one slot per block in raster order.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffChain {
    pub mode: u8,
    pub z: Vec<ZSlot>,
}

impl DiffChain {
    pub fn empty() -> Self {
        DiffChain { mode: 0, z: Vec::new() }
    }
}

/// Everything the encoder settings determine about the coefficient stream.
#[derive(Debug, Clone, PartialEq)]
pub struct CodingConfig {
    pub level_shift: bool,
    pub quant: Option<QuantTable>,
    /// 0 = absolute DC, 1 = previous block in the same row, 2 = raster
    /// predecessor, 3 = average of the blocks above and to the left.
    pub dc_prediction_mode: u8,
    pub twos_complement: bool,
    /// Unknown values with magnitude below this are destroyed at mask time.
    pub threshold: f64,
    /// Widen pixel bounds by the quantization error bound plus one.
    pub relax_pixels: bool,
    /// Replace known-coefficient equalities with half-step boxes.
    pub relax_coeffs: bool,
}

impl Default for CodingConfig {
    fn default() -> Self {
        CodingConfig {
            level_shift: false,
            quant: None,
            dc_prediction_mode: 0,
            twos_complement: false,
            threshold: 0.0,
            relax_pixels: true,
            relax_coeffs: false,
        }
    }
}

impl CodingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dc_prediction_mode > 3 {
            return Err(Error::Config(format!(
                "DC prediction mode {} outside 0..=3",
                self.dc_prediction_mode
            )));
        }
        if self.twos_complement && self.quant.is_none() {
            return Err(Error::Config(
                "two's-complement candidates require quantization (category codes apply to quantized integers)".into(),
            ));
        }
        if self.threshold < 0.0 || !self.threshold.is_finite() {
            return Err(Error::Config("threshold must be a nonnegative real".into()));
        }
        Ok(())
    }
}

/// Symmetric candidates for a plainly coded magnitude: `(-|y|, +|y|)`.
pub fn sign_candidates_plain(abs_value: f64) -> (f64, f64) {
    (-abs_value.abs(), abs_value.abs())
}

/// Candidates for a magnitude-category code: size category `S >= 1` and
/// trailing-bits value `0 <= b < 2^(S-1)`. The leading (sign) bit selects
/// between `hi = 2^(S-1) + b` and `lo = b - (2^S - 1)`.
pub fn sign_candidates_category(s: u32, b: u64) -> Result<(i64, i64)> {
    if s == 0 || s > 62 {
        return Err(Error::Config(format!("size category {s} outside 1..=62")));
    }
    let half = 1u64 << (s - 1);
    if s > 1 && b >= half {
        return Err(Error::Config(format!("trailing bits {b} out of range for category {s}")));
    }
    if s == 1 && b != 0 {
        return Err(Error::Config("category 1 has no trailing bits".into()));
    }
    let hi = (half + b) as i64;
    let lo = b as i64 - ((1i64 << s) - 1);
    Ok((lo, hi))
}

/// Splits a nonzero integer into its magnitude-category code `(S, b)`.
pub fn category_of(value: i64) -> (u32, u64) {
    debug_assert!(value != 0);
    let mag = value.unsigned_abs();
    let s = 64 - mag.leading_zeros();
    let code = if value > 0 { value as u64 } else { (value + ((1i64 << s) - 1)) as u64 };
    let b = if s == 1 { 0 } else { code & ((1u64 << (s - 1)) - 1) };
    (s, b)
}

fn predictor(mode: u8, dcs: &[f64], cols: usize, br: usize, bc: usize) -> f64 {
    let at = |r: usize, c: usize| dcs[r * cols + c];
    match mode {
        1 => {
            if bc == 0 {
                0.0
            } else {
                at(br, bc - 1)
            }
        }
        2 => {
            if br == 0 && bc == 0 {
                0.0
            } else if bc == 0 {
                at(br - 1, cols - 1)
            } else {
                at(br, bc - 1)
            }
        }
        3 => match (br, bc) {
            (0, 0) => 0.0,
            (0, _) => at(0, bc - 1),
            (_, 0) => at(br - 1, 0),
            _ => (at(br - 1, bc) + at(br, bc - 1)) / 2.0,
        },
        _ => unreachable!("mode {mode} has no predictor"),
    }
}

/// Differentially encodes a raster-order DC grid: `z(b) = DC(b) - predictor(b)`.
pub fn encode_dc_chain(dcs: &[f64], rows: usize, cols: usize, mode: u8) -> Result<DiffChain> {
    if !(1..=3).contains(&mode) {
        return Err(Error::Config(format!("differential coding needs mode 1..=3, got {mode}")));
    }
    if dcs.len() != rows * cols || dcs.is_empty() {
        return Err(Error::Shape("DC grid shape mismatch".into()));
    }
    let mut z = Vec::with_capacity(dcs.len());
    for br in 0..rows {
        for bc in 0..cols {
            let p = predictor(mode, dcs, cols, br, bc);
            z.push(ZSlot::Known(dcs[br * cols + bc] - p));
        }
    }
    Ok(DiffChain { mode, z })
}

/// Exact inverse of [`encode_dc_chain`]; every slot must be `Known`.
pub fn decode_dc_chain(chain: &DiffChain, rows: usize, cols: usize) -> Result<Vec<f64>> {
    if !(1..=3).contains(&chain.mode) {
        return Err(Error::Config("decode requires a differential chain (mode 1..=3)".into()));
    }
    if chain.z.len() != rows * cols {
        return Err(Error::Shape("chain length mismatch".into()));
    }
    let mut dcs = vec![0.0; rows * cols];
    for br in 0..rows {
        for bc in 0..cols {
            let z = match chain.z[br * cols + bc] {
                ZSlot::Known(v) => v,
                ZSlot::ForcedZero => 0.0,
                ZSlot::Unknown => {
                    return Err(Error::Model(format!(
                        "cannot decode chain with unresolved z at block ({br},{bc})"
                    )))
                }
            };
            let p = predictor(chain.mode, &dcs, cols, br, bc);
            dcs[br * cols + bc] = p + z;
        }
    }
    Ok(dcs)
}

/// Candidate pair for an unknown-sign value, in the dequantized domain.
///
/// Plain coding gives `(-|v|, +|v|)`. Under two's-complement coding the
/// candidates come from the magnitude-category code of the quantized
/// integer; when the value is not an integer multiple of the step (the
/// mode-3 averaged predictor can produce half-integer differentials) the
/// plain symmetric pair is used instead.
fn candidates_for(value: f64, step: Option<f64>, twos: bool) -> (f64, f64) {
    if twos {
        if let Some(q) = step {
            let scaled = value / q;
            if scaled.fract() == 0.0 && scaled.abs() < 4e18 {
                let (s, b) = category_of(scaled as i64);
                if let Ok((lo, hi)) = sign_candidates_category(s, b) {
                    return (lo as f64 * q, hi as f64 * q);
                }
            }
        }
    }
    sign_candidates_plain(value)
}

/// Marks the first `u_count` zigzag positions of every block as
/// unknown-sign. Zero values carry no sign and are skipped; nonzero values
/// with magnitude below the threshold are destroyed (`forced_zero`). Under
/// DC prediction modes 1-3 the (0, 0) slot masks the block's differential
/// `z` (the chain slot flips to `Unknown`), and the DC becomes a derived
/// quantity.
///
/// Masking is deterministic; the seed parameter is reserved for future
/// randomized masking policies and is unused today.
pub fn mask_signs(
    coeffs: &CoeffImage,
    chain: &mut DiffChain,
    u_count: usize,
    cfg: &CodingConfig,
    _rng_seed: u64,
) -> Result<SignMask> {
    cfg.validate()?;
    let n = coeffs.n;
    if u_count == 0 || u_count > n * n {
        return Err(Error::Config(format!("U = {u_count} outside 1..={}", n * n)));
    }
    if cfg.dc_prediction_mode != 0 {
        if chain.mode != cfg.dc_prediction_mode {
            return Err(Error::Config("chain mode disagrees with coding config".into()));
        }
        if chain.z.len() != coeffs.block_rows * coeffs.block_cols {
            return Err(Error::Shape("chain length mismatch".into()));
        }
    }
    let order = zigzag_order(n);
    let step00 = cfg.quant.as_ref().map(|q| q.step(0, 0));
    let mut mask = SignMask::default();
    for br in 0..coeffs.block_rows {
        for bc in 0..coeffs.block_cols {
            for &(k, l) in order.iter().take(u_count) {
                let key = (br, bc, k, l);
                if (k, l) == (0, 0) && cfg.dc_prediction_mode != 0 {
                    let slot = br * coeffs.block_cols + bc;
                    let z = match chain.z[slot] {
                        ZSlot::Known(v) => v,
                        _ => return Err(Error::Model("chain already masked".into())),
                    };
                    if z == 0.0 {
                        continue;
                    }
                    if z.abs() < cfg.threshold {
                        chain.z[slot] = ZSlot::ForcedZero;
                        mask.forced_zero.insert(key);
                        continue;
                    }
                    let (lo, hi) = candidates_for(z, step00, cfg.twos_complement);
                    chain.z[slot] = ZSlot::Unknown;
                    mask.entries.insert(key, SignEntry { lo, hi, truth: Some(z) });
                } else {
                    let v = coeffs.get(br, bc, k, l);
                    if v == 0.0 {
                        continue;
                    }
                    if v.abs() < cfg.threshold {
                        mask.forced_zero.insert(key);
                        continue;
                    }
                    let step = cfg.quant.as_ref().map(|q| q.step(k, l));
                    let (lo, hi) = candidates_for(v, step, cfg.twos_complement);
                    mask.entries.insert(key, SignEntry { lo, hi, truth: Some(v) });
                }
            }
        }
    }
    Ok(mask)
}

/// A coefficient stream plus everything needed to attempt sign recovery:
/// the contents of one `SBC1` file.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedImage {
    pub coeffs: CoeffImage,
    pub mask: SignMask,
    pub chain: DiffChain,
    pub cfg: CodingConfig,
}

fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_real(t: &str) -> Result<f64> {
    t.parse::<f64>().map_err(|_| Error::Format(format!("bad real {t:?}")))
}

/// Serializes a masked image as a line-oriented `SBC1` text file.
pub fn write_coeff_file(img: &MaskedImage) -> String {
    let co = &img.coeffs;
    let cfg = &img.cfg;
    let mut out = String::new();
    out.push_str("SBC1\n");
    let _ = writeln!(out, "dims {} {} {}", co.width(), co.height(), co.n);
    let (qf_field, explicit_table) = match &cfg.quant {
        None => ("none".to_string(), None),
        Some(t) => match t.source {
            QuantSource::QfScaled(qf)
                if scale_quant_table(&QuantTable::annex_k_luma(), qf)
                    .map(|s| s.steps == t.steps)
                    .unwrap_or(false) =>
            {
                (qf.to_string(), None)
            }
            _ => ("none".to_string(), Some(t)),
        },
    };
    let _ = writeln!(
        out,
        "cfg level_shift={} qf={} dcpred={} twos={} T={} Rx={} Ry={}",
        cfg.level_shift as u8,
        qf_field,
        cfg.dc_prediction_mode,
        cfg.twos_complement as u8,
        fmt_real(cfg.threshold),
        cfg.relax_pixels as u8,
        cfg.relax_coeffs as u8,
    );
    if let Some(t) = explicit_table {
        out.push_str("quant");
        for &q in &t.steps {
            let _ = write!(out, " {q}");
        }
        out.push('\n');
    }
    let order = zigzag_order(co.n);
    for br in 0..co.block_rows {
        for bc in 0..co.block_cols {
            let mut line = String::new();
            for (u, &(k, l)) in order.iter().enumerate() {
                if u > 0 {
                    line.push(' ');
                }
                let key = (br, bc, k, l);
                if let Some(e) = img.mask.entries.get(&key) {
                    let _ = write!(line, "u:{}:{}", fmt_real(e.lo), fmt_real(e.hi));
                } else if img.mask.forced_zero.contains(&key) {
                    line.push_str("z0");
                } else if (k, l) == (0, 0) && cfg.dc_prediction_mode != 0 {
                    let z = match img.chain.z[br * co.block_cols + bc] {
                        ZSlot::Known(v) => v,
                        ZSlot::ForcedZero => {
                            // Covered by forced_zero above; defensive.
                            line.push_str("z0");
                            continue;
                        }
                        ZSlot::Unknown => unreachable!("unknown z without mask entry"),
                    };
                    let _ = write!(line, "k:{}", fmt_real(z));
                } else {
                    let _ = write!(line, "k:{}", fmt_real(co.get(br, bc, k, l)));
                }
            }
            out.push_str(&line);
            out.push('\n');
        }
    }
    out
}

/// Parses an `SBC1` file back into a masked image. Unknown and forced-zero
/// slots hold 0 in the coefficient grid; candidate values live in the mask.
pub fn read_coeff_file(content: &str) -> Result<MaskedImage> {
    let mut lines = content.lines();
    let magic = lines.next().ok_or_else(|| Error::Format("empty coefficient file".into()))?;
    if magic.trim_end() != "SBC1" {
        return Err(Error::Format(format!("bad magic {magic:?}, expected SBC1")));
    }
    let dims = lines.next().ok_or_else(|| Error::Format("missing dims line".into()))?;
    let mut it = dims.split_whitespace();
    if it.next() != Some("dims") {
        return Err(Error::Format("missing dims line".into()));
    }
    let mut next_num = |what: &str| -> Result<usize> {
        it.next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Format(format!("bad dims field {what}")))
    };
    let width = next_num("width")?;
    let height = next_num("height")?;
    let n = next_num("block size")?;
    if n == 0 || width % n != 0 || height % n != 0 {
        return Err(Error::Format(format!("dims {width}x{height} not divisible by N={n}")));
    }
    let cfg_line = lines.next().ok_or_else(|| Error::Format("missing cfg line".into()))?;
    let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
    let mut cfg_it = cfg_line.split_whitespace();
    if cfg_it.next() != Some("cfg") {
        return Err(Error::Format("missing cfg line".into()));
    }
    for tok in cfg_it {
        let (key, val) = tok
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("bad cfg field {tok:?}")))?;
        fields.insert(key, val);
    }
    let flag = |key: &str| -> Result<bool> {
        match fields.get(key) {
            Some(&"0") => Ok(false),
            Some(&"1") => Ok(true),
            other => Err(Error::Format(format!("bad cfg flag {key}={other:?}"))),
        }
    };
    let level_shift = flag("level_shift")?;
    let twos_complement = flag("twos")?;
    let relax_pixels = flag("Rx")?;
    let relax_coeffs = flag("Ry")?;
    let dc_prediction_mode: u8 = fields
        .get("dcpred")
        .and_then(|v| v.parse().ok())
        .filter(|m| *m <= 3)
        .ok_or_else(|| Error::Format("bad cfg field dcpred".into()))?;
    let threshold = parse_real(fields.get("T").ok_or_else(|| Error::Format("missing T".into()))?)?;
    let qf_field = *fields.get("qf").ok_or_else(|| Error::Format("missing qf".into()))?;

    let mut rest = lines.peekable();
    let mut quant: Option<QuantTable> = None;
    if let Some(line) = rest.peek() {
        if let Some(body) = line.strip_prefix("quant") {
            quant = Some(QuantTable::from_text(n, body)?);
            rest.next();
        }
    }
    if quant.is_none() && qf_field != "none" {
        let qf: u8 = qf_field
            .parse()
            .map_err(|_| Error::Format(format!("bad qf field {qf_field:?}")))?;
        quant = Some(scale_quant_table(&QuantTable::annex_k_luma(), qf)?);
    }

    let cfg = CodingConfig {
        level_shift,
        quant,
        dc_prediction_mode,
        twos_complement,
        threshold,
        relax_pixels,
        relax_coeffs,
    };
    cfg.validate()?;

    let block_rows = height / n;
    let block_cols = width / n;
    let order = zigzag_order(n);
    let mut coeffs = CoeffImage::zeros(n, block_rows, block_cols);
    coeffs.quant = cfg.quant.clone();
    let mut mask = SignMask::default();
    let mut chain = if dc_prediction_mode == 0 {
        DiffChain::empty()
    } else {
        DiffChain { mode: dc_prediction_mode, z: vec![ZSlot::Known(0.0); block_rows * block_cols] }
    };

    for br in 0..block_rows {
        for bc in 0..block_cols {
            let line = rest
                .next()
                .ok_or_else(|| Error::Format(format!("missing block line ({br},{bc})")))?;
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.len() != n * n {
                return Err(Error::Format(format!(
                    "block ({br},{bc}) has {} tokens, expected {}",
                    tokens.len(),
                    n * n
                )));
            }
            for (u, tok) in tokens.iter().enumerate() {
                let (k, l) = order[u];
                let key = (br, bc, k, l);
                let is_z = (k, l) == (0, 0) && dc_prediction_mode != 0;
                if *tok == "z0" {
                    mask.forced_zero.insert(key);
                    if is_z {
                        chain.z[br * block_cols + bc] = ZSlot::ForcedZero;
                    }
                } else if let Some(body) = tok.strip_prefix("u:") {
                    let (lo_s, hi_s) = body
                        .split_once(':')
                        .ok_or_else(|| Error::Format(format!("bad unknown token {tok:?}")))?;
                    let lo = parse_real(lo_s)?;
                    let hi = parse_real(hi_s)?;
                    if lo > hi {
                        return Err(Error::Format(format!(
                            "unknown entry at ({br},{bc},{k},{l}) has lo {lo} > hi {hi}"
                        )));
                    }
                    mask.entries.insert(key, SignEntry { lo, hi, truth: None });
                    if is_z {
                        chain.z[br * block_cols + bc] = ZSlot::Unknown;
                    }
                } else if let Some(body) = tok.strip_prefix("k:") {
                    let v = parse_real(body)?;
                    if is_z {
                        chain.z[br * block_cols + bc] = ZSlot::Known(v);
                    } else {
                        coeffs.set(br, bc, k, l, v);
                    }
                } else {
                    return Err(Error::Format(format!("unrecognized token {tok:?}")));
                }
            }
        }
    }
    if rest.next().is_some() {
        return Err(Error::Format("trailing content after block lines".into()));
    }
    if let Some(q) = &cfg.quant {
        let grid = coeffs
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let kl = i % (n * n);
                (v / q.step(kl / n, kl % n)).round() as i64
            })
            .collect();
        coeffs.quantized = Some(grid);
    }
    Ok(MaskedImage { coeffs, mask, chain, cfg })
}

/// Serializes the truth sidecar: same block layout, one token per zigzag
/// slot, `+`/`-` for unknown entries and `.` everywhere else.
pub fn write_truth_sidecar(img: &MaskedImage) -> Result<String> {
    let co = &img.coeffs;
    let mut out = String::new();
    out.push_str("SBC1-TRUTH\n");
    let _ = writeln!(out, "dims {} {} {}", co.width(), co.height(), co.n);
    let order = zigzag_order(co.n);
    for br in 0..co.block_rows {
        for bc in 0..co.block_cols {
            let mut line = String::new();
            for (u, &(k, l)) in order.iter().enumerate() {
                if u > 0 {
                    line.push(' ');
                }
                match img.mask.entries.get(&(br, bc, k, l)) {
                    Some(e) => {
                        let t = e.truth.ok_or_else(|| {
                            Error::Model("mask entry lacks a truth value for the sidecar".into())
                        })?;
                        line.push(if t > 0.0 { '+' } else { '-' });
                    }
                    None => line.push('.'),
                }
            }
            out.push_str(&line);
            out.push('\n');
        }
    }
    Ok(out)
}

/// Loads a truth sidecar, filling `truth` on every mask entry with the
/// candidate selected by the recorded sign.
pub fn read_truth_sidecar(img: &mut MaskedImage, content: &str) -> Result<()> {
    let mut lines = content.lines();
    if lines.next().map(str::trim_end) != Some("SBC1-TRUTH") {
        return Err(Error::Format("bad truth sidecar magic".into()));
    }
    let co = &img.coeffs;
    let dims = lines.next().unwrap_or_default();
    let expect = format!("dims {} {} {}", co.width(), co.height(), co.n);
    if dims != expect {
        return Err(Error::Format(format!("sidecar dims {dims:?} do not match {expect:?}")));
    }
    let order = zigzag_order(co.n);
    for br in 0..co.block_rows {
        for bc in 0..co.block_cols {
            let line =
                lines.next().ok_or_else(|| Error::Format("sidecar missing block line".into()))?;
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.len() != co.n * co.n {
                return Err(Error::Format("sidecar token count mismatch".into()));
            }
            for (u, tok) in tokens.iter().enumerate() {
                let (k, l) = order[u];
                let key = (br, bc, k, l);
                match (*tok, img.mask.entries.get_mut(&key)) {
                    (".", None) => {}
                    ("+", Some(e)) => e.truth = Some(e.hi),
                    ("-", Some(e)) => e.truth = Some(e.lo),
                    _ => {
                        return Err(Error::Format(format!(
                            "sidecar token {tok:?} inconsistent with mask at ({br},{bc},{k},{l})"
                        )))
                    }
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::{forward_dct, quantize, DctBasis};
    use crate::image::PixelImage;
    use proptest::prelude::*;

    #[test]
    fn plain_candidates() {
        assert_eq!(sign_candidates_plain(7.0), (-7.0, 7.0));
        assert_eq!(sign_candidates_plain(0.5), (-0.5, 0.5));
    }

    #[test]
    fn category_candidate_examples() {
        assert_eq!(sign_candidates_category(1, 0).unwrap(), (-1, 1));
        assert_eq!(sign_candidates_category(2, 0).unwrap(), (-3, 2));
        assert_eq!(sign_candidates_category(3, 1).unwrap(), (-6, 5));
        assert!(sign_candidates_category(2, 2).is_err());
        assert!(sign_candidates_category(0, 0).is_err());
    }

    /// Enumerates every category-S value per the JPEG magnitude coding and
    /// checks both decode rules reproduce the trailing bits.
    #[test]
    fn category_candidates_match_enumeration() {
        for s in 1u32..=10 {
            let half = 1i64 << (s - 1);
            let full = (1i64 << s) - 1;
            let mut by_b: BTreeMap<u64, (Option<i64>, Option<i64>)> = BTreeMap::new();
            let values = (half..=full).chain(-full..=-half);
            for v in values {
                let code = if v > 0 { v as u64 } else { (v + full) as u64 };
                let leading = code >> (s - 1);
                let b = if s == 1 { 0 } else { code & ((1u64 << (s - 1)) - 1) };
                let slot = by_b.entry(b).or_default();
                if leading == 1 {
                    assert!(slot.1.replace(v).is_none());
                } else {
                    assert!(slot.0.replace(v).is_none());
                }
                // category_of must invert the enumeration.
                assert_eq!(category_of(v), (s, b));
            }
            assert_eq!(by_b.len(), 1usize << (s - 1).min(62));
            for (b, (lo, hi)) in by_b {
                let (clo, chi) = sign_candidates_category(s, b).unwrap();
                assert_eq!(Some(clo), lo, "S={s} b={b}");
                assert_eq!(Some(chi), hi, "S={s} b={b}");
            }
        }
    }

    #[test]
    fn chain_mode1_examples() {
        let chain = encode_dc_chain(&[10.0, 12.0, 9.0], 1, 3, 1).unwrap();
        let z: Vec<f64> = chain
            .z
            .iter()
            .map(|s| match s {
                ZSlot::Known(v) => *v,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(z, vec![10.0, 2.0, -3.0]);
        assert_eq!(decode_dc_chain(&chain, 1, 3).unwrap(), vec![10.0, 12.0, 9.0]);
    }

    #[test]
    fn chain_mode2_wraps_rows() {
        let chain = encode_dc_chain(&[10.0, 12.0, 9.0, 9.0], 2, 2, 2).unwrap();
        let z: Vec<f64> = chain
            .z
            .iter()
            .map(|s| match s {
                ZSlot::Known(v) => *v,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(z, vec![10.0, 2.0, -3.0, 0.0]);
    }

    #[test]
    fn chain_mode3_averages() {
        let chain = encode_dc_chain(&[8.0, 10.0, 12.0, 14.0], 2, 2, 3).unwrap();
        let z: Vec<f64> = chain
            .z
            .iter()
            .map(|s| match s {
                ZSlot::Known(v) => *v,
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(z, vec![8.0, 2.0, 4.0, 3.0]);
        assert_eq!(decode_dc_chain(&chain, 2, 2).unwrap(), vec![8.0, 10.0, 12.0, 14.0]);
    }

    #[test]
    fn mode1_resets_each_row() {
        let chain = encode_dc_chain(&[5.0, 7.0, 20.0, 21.0], 2, 2, 1).unwrap();
        match chain.z[2] {
            ZSlot::Known(v) => assert_eq!(v, 20.0), // not 20 - 7
            _ => unreachable!(),
        }
    }

    fn sample_coeffs() -> CoeffImage {
        let basis = DctBasis::new(4).unwrap();
        let samples: Vec<f64> =
            (0..64).map(|p| ((p * 37 + (p / 8) * 11) % 256) as f64).collect();
        let img = PixelImage::new(8, 8, samples).unwrap();
        forward_dct(&img, &basis).unwrap()
    }

    #[test]
    fn mask_u1_mode0_hits_dc_only() {
        let co = sample_coeffs();
        let mut chain = DiffChain::empty();
        let cfg = CodingConfig::default();
        let mask = mask_signs(&co, &mut chain, 1, &cfg, 0).unwrap();
        assert_eq!(mask.entries.len(), 4); // all four DCs nonzero
        for (&(_, _, k, l), e) in &mask.entries {
            assert_eq!((k, l), (0, 0));
            assert_eq!(e.lo, -e.hi);
        }
    }

    #[test]
    fn mask_skips_zero_coefficients() {
        let mut co = CoeffImage::zeros(4, 1, 1);
        co.set(0, 0, 0, 0, 80.0);
        co.set(0, 0, 1, 0, -12.0); // zigzag position 2
        // position 1 = (0,1) stays zero
        let mut chain = DiffChain::empty();
        let mask = mask_signs(&co, &mut chain, 3, &CodingConfig::default(), 0).unwrap();
        assert_eq!(mask.entries.len(), 2);
        assert!(mask.entries.contains_key(&(0, 0, 0, 0)));
        assert!(mask.entries.contains_key(&(0, 0, 1, 0)));
        assert!(mask.forced_zero.is_empty());
    }

    #[test]
    fn mask_thresholds_small_values() {
        let mut co = CoeffImage::zeros(4, 1, 1);
        co.set(0, 0, 0, 0, 80.0);
        co.set(0, 0, 0, 1, 3.0);
        let cfg = CodingConfig { threshold: 5.0, ..CodingConfig::default() };
        let mut chain = DiffChain::empty();
        let mask = mask_signs(&co, &mut chain, 2, &cfg, 0).unwrap();
        assert_eq!(mask.entries.len(), 1);
        assert!(mask.forced_zero.contains(&(0, 0, 0, 1)));
    }

    #[test]
    fn mask_u_out_of_range() {
        let co = sample_coeffs();
        let mut chain = DiffChain::empty();
        assert!(mask_signs(&co, &mut chain, 0, &CodingConfig::default(), 0).is_err());
        assert!(mask_signs(&co, &mut chain, 17, &CodingConfig::default(), 0).is_err());
    }

    #[test]
    fn mask_mode1_masks_z_not_dc() {
        let co = sample_coeffs();
        let dcs: Vec<f64> = (0..4)
            .map(|b| co.get(b / 2, b % 2, 0, 0))
            .collect();
        let mut chain = encode_dc_chain(&dcs, 2, 2, 1).unwrap();
        let cfg = CodingConfig { dc_prediction_mode: 1, ..CodingConfig::default() };
        let mask = mask_signs(&co, &mut chain, 1, &cfg, 0).unwrap();
        for (key, entry) in &mask.entries {
            assert_eq!((key.2, key.3), (0, 0));
            // candidates are ± the differential, not ± the DC
            let slot = key.0 * 2 + key.1;
            assert!(matches!(chain.z[slot], ZSlot::Unknown));
            assert!(entry.hi.abs() != dcs[slot].abs() || entry.truth == Some(dcs[slot]));
        }
    }

    #[test]
    fn twos_requires_quant() {
        let cfg = CodingConfig { twos_complement: true, ..CodingConfig::default() };
        assert!(cfg.validate().is_err());
    }

    fn masked_fixture(twos: bool, dcpred: u8) -> MaskedImage {
        let basis = DctBasis::new(8).unwrap();
        let samples: Vec<f64> =
            (0..256).map(|p| ((p * 53 + (p / 16) * 29) % 256) as f64).collect();
        let img = PixelImage::new(16, 16, samples).unwrap();
        let co = forward_dct(&img, &basis).unwrap();
        let quant = scale_quant_table(&QuantTable::annex_k_luma(), 85).unwrap();
        let co = quantize(&co, &quant).unwrap();
        let cfg = CodingConfig {
            quant: Some(quant),
            twos_complement: twos,
            dc_prediction_mode: dcpred,
            threshold: 5.0,
            ..CodingConfig::default()
        };
        let mut chain = if dcpred == 0 {
            DiffChain::empty()
        } else {
            let dcs: Vec<f64> = (0..4).map(|b| co.get(b / 2, b % 2, 0, 0)).collect();
            encode_dc_chain(&dcs, 2, 2, dcpred).unwrap()
        };
        let mut mask = mask_signs(&co, &mut chain, 4, &cfg, 0).unwrap();
        // The file stores masked slots as unknowns; wipe their values the way
        // an attacker would see them. Under differential coding the DC plane
        // lives in the chain, so those grid slots are zero placeholders.
        let mut coeffs = co;
        for &(br, bc, k, l) in mask.entries.keys() {
            if (k, l) != (0, 0) || dcpred == 0 {
                coeffs.set(br, bc, k, l, 0.0);
            }
        }
        for &(br, bc, k, l) in &mask.forced_zero {
            if (k, l) != (0, 0) || dcpred == 0 {
                coeffs.set(br, bc, k, l, 0.0);
            }
        }
        if dcpred != 0 {
            for br in 0..coeffs.block_rows {
                for bc in 0..coeffs.block_cols {
                    coeffs.set(br, bc, 0, 0, 0.0);
                }
            }
        }
        // keep truth for sidecar tests
        for e in mask.entries.values_mut() {
            assert!(e.truth.is_some());
        }
        MaskedImage { coeffs, mask, chain, cfg }
    }

    #[test]
    fn coeff_file_round_trip() {
        for (twos, dcpred) in [(false, 0u8), (true, 0), (false, 2), (true, 1)] {
            let img = masked_fixture(twos, dcpred);
            let text = write_coeff_file(&img);
            let back = read_coeff_file(&text).unwrap();
            // truth never travels in the main file
            let mut expect = img.clone();
            for e in expect.mask.entries.values_mut() {
                e.truth = None;
            }
            assert_eq!(back.cfg, expect.cfg);
            assert_eq!(back.mask, expect.mask);
            assert_eq!(back.chain, expect.chain);
            assert_eq!(back.coeffs.coeffs, expect.coeffs.coeffs);
            // canonical re-serialization is byte-identical
            assert_eq!(write_coeff_file(&back), text);

            // sidecar round trip restores candidate-valued truths
            let sidecar = write_truth_sidecar(&img).unwrap();
            let mut loaded = back;
            read_truth_sidecar(&mut loaded, &sidecar).unwrap();
            for (key, e) in &loaded.mask.entries {
                let orig = img.mask.entries[key].truth.unwrap();
                let expect = if orig > 0.0 { e.hi } else { e.lo };
                assert_eq!(e.truth, Some(expect));
            }
        }
    }

    #[test]
    fn coeff_file_bad_magic() {
        let img = masked_fixture(false, 0);
        let text = write_coeff_file(&img).replace("SBC1", "SBC2");
        assert!(matches!(read_coeff_file(&text), Err(Error::Format(_))));
    }

    #[test]
    fn coeff_file_rejects_inverted_candidates() {
        let img = masked_fixture(false, 0);
        let text = write_coeff_file(&img);
        // find one unknown token and swap its candidates
        let swapped = text
            .lines()
            .map(|line| {
                if let Some(pos) = line.find("u:") {
                    let tok_end =
                        line[pos..].find(' ').map(|e| pos + e).unwrap_or(line.len());
                    let tok = &line[pos..tok_end];
                    let parts: Vec<&str> = tok.splitn(3, ':').collect();
                    let flipped = format!("u:{}:{}", parts[2], parts[1]);
                    format!("{}{}{}", &line[..pos], flipped, &line[tok_end..])
                } else {
                    line.to_string()
                }
            })
            .collect::<Vec<_>>()
            .join("\n")
            + "\n";
        assert!(matches!(read_coeff_file(&swapped), Err(Error::Format(ref m)) if m.contains("lo")));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn chain_round_trip(mode in 1u8..=3, rows in 1usize..5, cols in 1usize..5, seed in any::<u64>()) {
            let mut state = seed | 1;
            let dcs: Vec<f64> = (0..rows * cols)
                .map(|_| {
                    state = state.wrapping_mul(6364136223846793005).wrapping_add(99);
                    (((state >> 33) % 4096) as f64) - 2048.0
                })
                .collect();
            let chain = encode_dc_chain(&dcs, rows, cols, mode).unwrap();
            let back = decode_dc_chain(&chain, rows, cols).unwrap();
            for (a, b) in dcs.iter().zip(&back) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }
}
