//! Implementations behind the `sbr` command-line tool: masking sign bits
//! into `SBC1` coefficient files, running the recovery methods, computing
//! quality metrics, and benchmark sweeps with CSV reporting.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use sbr_core::codec::{
    encode_dc_chain, mask_signs, read_coeff_file, read_truth_sidecar, write_coeff_file,
    write_truth_sidecar, CodingConfig, DiffChain, MaskedImage,
};
use sbr_core::error::Error;
use sbr_core::image::{level_shift, read_pgm, write_pgm, PixelImage, ShiftDirection};
use sbr_core::metrics;
use sbr_core::recovery::{
    recover, Alignment, DependencyMode, Method, RecoveryConfig, RecoveryOutcome, ZeroSignStrategy,
};
use sbr_core::solver::BuiltinSolver;
use sbr_core::transform::{forward_dct, quantize, scale_quant_table, DctBasis, QuantTable};

/// Exit codes: 0 success, 2 usage error, 3 input format error, 4 solver
/// failure.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::Format(_) | Error::Shape(_) | Error::Io(_) => 3,
        Error::Model(_) | Error::Solver(_) => 4,
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "sbr",
    about = "Simulate and recover unknown DCT coefficient sign bits in grayscale images",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Mask coefficient sign bits of a PGM image into an SBC1 file plus a
    /// truth sidecar.
    Mask(MaskArgs),
    /// Recover an image from an SBC1 file with one of the five methods.
    Recover(RecoverArgs),
    /// PSNR and SSIM between a reference and a test PGM.
    Metrics(MetricsArgs),
    /// Sweep configurations over a directory of PGMs, writing one CSV.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
pub struct MaskArgs {
    /// Input binary PGM (P5).
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output SBC1 coefficient file.
    #[arg(long)]
    pub out: PathBuf,
    /// Truth sidecar path (defaults to `<out>.truth`).
    #[arg(long)]
    pub truth_out: Option<PathBuf>,
    /// Number of leading zigzag positions to mask per block.
    #[arg(long)]
    pub u: usize,
    /// JPEG quality factor 1..=100; enables quantization with the standard
    /// luminance table scaled by the usual IJG law.
    #[arg(long)]
    pub qf: Option<u8>,
    /// Quantization table file: 64 whitespace-separated integers,
    /// row-major. Overrides --qf.
    #[arg(long)]
    pub quant_file: Option<PathBuf>,
    /// Subtract 128 before the transform (JPEG DC level shift).
    #[arg(long)]
    pub level_shift: bool,
    /// DC prediction mode: 0 absolute, 1 same-row, 2 raster, 3 averaged.
    #[arg(long, default_value_t = 0)]
    pub dc_pred: u8,
    /// Encode unknown magnitudes as asymmetric magnitude-category
    /// candidates (requires quantization).
    #[arg(long)]
    pub twos: bool,
    /// Destroy masked values with magnitude below this threshold.
    #[arg(long, default_value_t = 0.0)]
    pub threshold: f64,
    /// Widen pixel bounds by the quantization error bound plus one.
    #[arg(long, default_value_t = 1)]
    pub rx: u8,
    /// Relax known coefficients to their half-step quantization boxes.
    #[arg(long, default_value_t = 0)]
    pub ry: u8,
    /// Masking seed (reserved; masking is deterministic).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Transform block size.
    #[arg(long, default_value_t = 8)]
    pub block_size: usize,
}

#[derive(Args, Debug, Clone)]
pub struct RecoverArgs {
    /// Input SBC1 coefficient file.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output PGM path.
    #[arg(long)]
    pub out: PathBuf,
    /// Recovery method: naive-neg, naive-pos, naive-lp, relaxed-lp,
    /// hier-milp.
    #[arg(long)]
    pub method: String,
    /// Recovery-side threshold; unknowns with both candidates below it are
    /// zeroed. Defaults to 5 for the LP methods and 0 for hier-milp.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Zero-ambiguity strategy 1..=4 for relaxed-lp.
    #[arg(long, default_value_t = 1)]
    pub zero_sign: u8,
    /// Bernoulli probability of the positive candidate under strategy 4.
    #[arg(long, default_value_t = 0.5)]
    pub zero_sign_p: f64,
    /// Region size HxW for hier-milp, e.g. 32x32.
    #[arg(long, default_value = "32x32")]
    pub region: String,
    /// Cross-region DC dependency mode 0..=2.
    #[arg(long, default_value_t = 0)]
    pub dep_mode: u8,
    /// Brightness alignment: none, global-milp, block-lp, region-lp.
    #[arg(long, default_value = "global-milp")]
    pub align: String,
    /// Per-MILP time limit in seconds.
    #[arg(long, default_value_t = 600.0)]
    pub timeout: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Append a JSON-lines run record here.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Dump the whole-image model in line-oriented text form and exit
    /// without solving.
    #[arg(long)]
    pub dump_model: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MetricsArgs {
    #[arg(long = "ref")]
    pub reference: PathBuf,
    #[arg(long = "test")]
    pub test: PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Directory of input PGM images.
    #[arg(long)]
    pub images: PathBuf,
    /// Sweep specification file (key = comma-separated values).
    #[arg(long)]
    pub sweep: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    pub out: PathBuf,
    /// Concurrent images.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Master seed; per-run seeds derive from it, the image name, and the
    /// configuration index.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep recovered images in this directory.
    #[arg(long)]
    pub keep_images: Option<PathBuf>,
    /// Report zero in the seconds column so reruns are byte-identical.
    #[arg(long)]
    pub zero_time: bool,
}

pub fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Mask(args) => cmd_mask(&args),
        Command::Recover(args) => cmd_recover(&args).map(|_| ()),
        Command::Metrics(args) => cmd_metrics(&args),
        Command::Bench(args) => cmd_bench(&args),
    }
}

/// Runs the full encoding pipeline and writes the coefficient file and
/// truth sidecar.
pub fn cmd_mask(args: &MaskArgs) -> Result<(), Error> {
    if args.u == 0 {
        return Err(Error::Config("--u must be at least 1".into()));
    }
    let quant = match (&args.quant_file, args.qf) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)?;
            Some(QuantTable::from_text(args.block_size, &text)?)
        }
        (None, Some(qf)) => {
            if args.block_size != 8 {
                return Err(Error::Config("--qf applies to 8x8 blocks only".into()));
            }
            Some(scale_quant_table(&QuantTable::annex_k_luma(), qf)?)
        }
        (None, None) => None,
    };
    let cfg = CodingConfig {
        level_shift: args.level_shift,
        quant,
        dc_prediction_mode: args.dc_pred,
        twos_complement: args.twos,
        threshold: args.threshold,
        relax_pixels: args.rx != 0,
        relax_coeffs: args.ry != 0,
    };
    cfg.validate()?;

    let bytes = std::fs::read(&args.input)?;
    let img = read_pgm(&bytes)?;
    let basis = DctBasis::new(args.block_size)?;
    let source =
        if cfg.level_shift { level_shift(&img, ShiftDirection::Forward) } else { img.clone() };
    let mut coeffs = forward_dct(&source, &basis)?;
    if let Some(q) = &cfg.quant {
        coeffs = quantize(&coeffs, q)?;
    }
    let mut chain = if cfg.dc_prediction_mode == 0 {
        DiffChain::empty()
    } else {
        let dcs: Vec<f64> = (0..coeffs.block_rows * coeffs.block_cols)
            .map(|b| coeffs.get(b / coeffs.block_cols, b % coeffs.block_cols, 0, 0))
            .collect();
        encode_dc_chain(&dcs, coeffs.block_rows, coeffs.block_cols, cfg.dc_prediction_mode)?
    };
    let mask = mask_signs(&coeffs, &mut chain, args.u, &cfg, args.seed)?;
    let masked = MaskedImage { coeffs, mask, chain, cfg };

    std::fs::write(&args.out, write_coeff_file(&masked))?;
    let truth_path = args
        .truth_out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.truth", args.out.display())));
    std::fs::write(truth_path, write_truth_sidecar(&masked)?)?;
    Ok(())
}

fn parse_region(text: &str) -> Result<(usize, usize), Error> {
    let (h, w) = text
        .split_once('x')
        .ok_or_else(|| Error::Config(format!("region {text:?} must look like 32x32")))?;
    let parse = |t: &str| {
        t.parse::<usize>()
            .map_err(|_| Error::Config(format!("bad region dimension {t:?}")))
    };
    Ok((parse(h)?, parse(w)?))
}

pub fn recovery_config_from(args: &RecoverArgs) -> Result<RecoveryConfig, Error> {
    let method = Method::parse(&args.method)?;
    let mut rc = RecoveryConfig::for_method(method);
    if let Some(t) = args.threshold {
        if t < 0.0 {
            return Err(Error::Config("threshold must be nonnegative".into()));
        }
        rc.threshold = t;
    }
    rc.zero_sign = ZeroSignStrategy::from_index(args.zero_sign, args.zero_sign_p)?;
    rc.region_size = parse_region(&args.region)?;
    rc.dependency_mode = DependencyMode::from_index(args.dep_mode)?;
    rc.alignment = Alignment::parse(&args.align)?;
    if args.timeout <= 0.0 || args.timeout.is_nan() {
        return Err(Error::Config("timeout must be positive".into()));
    }
    rc.milp_time_limit = args.timeout;
    rc.seed = args.seed;
    Ok(rc)
}

fn json_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out
}

fn run_record(args: &RecoverArgs, rc: &RecoveryConfig, outcome: &RecoveryOutcome, wall: f64) -> String {
    format!(
        concat!(
            "{{\"method\":\"{}\",\"threshold\":{},\"zero_sign\":{},\"region\":\"{}x{}\",",
            "\"dep_mode\":{},\"align\":\"{}\",\"timeout\":{},\"seed\":{},\"objective\":{:.6},",
            "\"status\":\"{}\",\"nodes\":{},\"simplex_iterations\":{},\"wall_seconds\":{:.3},",
            "\"out\":\"{}\"}}"
        ),
        rc.method.as_str(),
        rc.threshold,
        rc.zero_sign.index(),
        rc.region_size.0,
        rc.region_size.1,
        rc.dependency_mode.index(),
        rc.alignment.as_str(),
        rc.milp_time_limit,
        rc.seed,
        outcome.objective,
        outcome.status.as_str(),
        outcome.stats.nodes,
        outcome.stats.simplex_iterations,
        wall,
        json_escape(&args.out.display().to_string()),
    )
}

/// Recovers an image from a coefficient file, writing the PGM and an
/// optional JSON-lines run record. Returns the outcome for callers that
/// want the statistics.
pub fn cmd_recover(args: &RecoverArgs) -> Result<RecoveryOutcome, Error> {
    let rc = recovery_config_from(args)?;
    let content = std::fs::read_to_string(&args.input)?;
    let masked = read_coeff_file(&content)?;
    let basis = DctBasis::new(masked.coeffs.n)?;

    if let Some(path) = &args.dump_model {
        let scope = sbr_core::model::ModelScope::full_image(&masked.coeffs);
        let model = sbr_core::model::build_model(
            &masked,
            &scope,
            sbr_core::model::Integrality::Milp,
            &basis,
        )?;
        std::fs::write(path, model.to_text())?;
        return Ok(RecoveryOutcome {
            image: PixelImage::new(masked.coeffs.width(), masked.coeffs.height(), vec![
                0.0;
                masked.coeffs.width() * masked.coeffs.height()
            ])?,
            objective: f64::NAN,
            status: sbr_core::solver::SolveStatus::Optimal,
            stats: Default::default(),
        });
    }

    let started = Instant::now();
    let outcome = recover(&masked, &rc, &BuiltinSolver, &basis)?;
    let wall = started.elapsed().as_secs_f64();
    std::fs::write(&args.out, write_pgm(&outcome.image))?;
    if let Some(log) = &args.log {
        use std::io::Write;
        let mut file = std::fs::OpenOptions::new().create(true).append(true).open(log)?;
        writeln!(file, "{}", run_record(args, &rc, &outcome, wall))?;
    }
    Ok(outcome)
}

pub fn cmd_metrics(args: &MetricsArgs) -> Result<(), Error> {
    let reference = read_pgm(&std::fs::read(&args.reference)?)?;
    let test = read_pgm(&std::fs::read(&args.test)?)?;
    let report = metrics::report(&reference, &test)?;
    println!("psnr={} ssim={:.6}", format_db(report.psnr), report.ssim);
    Ok(())
}

fn format_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.4}")
    }
}

/// One cell of the sweep grid.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub u: usize,
    pub qf: Option<u8>,
    pub method: Method,
    pub dc_pred: u8,
    pub dep_mode: DependencyMode,
    pub region: (usize, usize),
    pub align: Alignment,
    /// None means the method default.
    pub threshold: Option<f64>,
    pub level_shift: bool,
    pub twos: bool,
    pub timeout: f64,
}

/// Parses the plain key=value sweep file: one key per line, comma-separated
/// value lists, `#` comments. Unknown keys are errors.
pub fn parse_sweep(text: &str) -> Result<Vec<SweepConfig>, Error> {
    let mut fields: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, values) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("sweep line {} lacks '='", lineno + 1)))?;
        fields.insert(
            key.trim().to_string(),
            values.split(',').map(|v| v.trim().to_string()).collect(),
        );
    }
    let known = [
        "u", "qf", "method", "dcpred", "depmode", "region", "align", "threshold", "level_shift",
        "twos", "timeout",
    ];
    for key in fields.keys() {
        if !known.contains(&key.as_str()) {
            return Err(Error::Format(format!("unknown sweep key {key:?}")));
        }
    }
    let one = |key: &str, default: &str| -> Vec<String> {
        fields.get(key).cloned().unwrap_or_else(|| vec![default.to_string()])
    };
    let us = one("u", "3");
    let qfs = one("qf", "none");
    let methods = one("method", "relaxed-lp");
    let dcpreds = one("dcpred", "0");
    let depmodes = one("depmode", "0");
    let regions = one("region", "32x32");
    let aligns = one("align", "global-milp");
    let thresholds = one("threshold", "default");
    let level_shift = one("level_shift", "1");
    let twos = one("twos", "0");
    let timeout = one("timeout", "600");

    let parse_err = |key: &str, v: &str| Error::Format(format!("bad sweep value {key}={v:?}"));
    let mut out = Vec::new();
    for u in &us {
        for qf in &qfs {
            for method in &methods {
                for dcpred in &dcpreds {
                    for depmode in &depmodes {
                        for region in &regions {
                            for align in &aligns {
                                for threshold in &thresholds {
                                    for ls in &level_shift {
                                        for tw in &twos {
                                            for to in &timeout {
                                                out.push(SweepConfig {
                                                    u: u.parse().map_err(|_| parse_err("u", u))?,
                                                    qf: match qf.as_str() {
                                                        "none" => None,
                                                        v => Some(
                                                            v.parse()
                                                                .map_err(|_| parse_err("qf", v))?,
                                                        ),
                                                    },
                                                    method: Method::parse(method)?,
                                                    dc_pred: dcpred
                                                        .parse()
                                                        .map_err(|_| parse_err("dcpred", dcpred))?,
                                                    dep_mode: DependencyMode::from_index(
                                                        depmode
                                                            .parse()
                                                            .map_err(|_| parse_err("depmode", depmode))?,
                                                    )?,
                                                    region: parse_region(region)?,
                                                    align: Alignment::parse(align)?,
                                                    threshold: match threshold.as_str() {
                                                        "default" => None,
                                                        v => Some(
                                                            v.parse().map_err(|_| {
                                                                parse_err("threshold", v)
                                                            })?,
                                                        ),
                                                    },
                                                    level_shift: ls != "0",
                                                    twos: tw != "0",
                                                    timeout: to
                                                        .parse()
                                                        .map_err(|_| parse_err("timeout", to))?,
                                                });
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

fn fnv1a(text: &str) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for b in text.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Per-run seed from the master seed, the image name, and the
/// configuration index.
pub fn derive_seed(master: u64, image_name: &str, config_index: usize) -> u64 {
    splitmix(master ^ fnv1a(image_name).rotate_left(17) ^ (config_index as u64))
}

/// One benchmark measurement.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub image: String,
    pub config_index: usize,
    pub ssim: f64,
    pub psnr: f64,
    pub seconds: f64,
    pub status: String,
}

fn config_columns(c: &SweepConfig) -> String {
    format!(
        "{},{},{},{},{},{}x{},{},{}",
        c.u,
        c.qf.map(|v| v.to_string()).unwrap_or_else(|| "none".into()),
        c.dc_pred,
        c.dep_mode.index(),
        c.method.as_str(),
        c.region.0,
        c.region.1,
        c.align.as_str(),
        c.threshold
            .map(|v| v.to_string())
            .unwrap_or_else(|| effective_threshold(c).to_string()),
    )
}

fn effective_threshold(c: &SweepConfig) -> f64 {
    c.threshold.unwrap_or_else(|| RecoveryConfig::for_method(c.method).threshold)
}

/// Runs mask, recover, and metrics for one image under one configuration.
pub fn bench_one(
    image_name: &str,
    original: &PixelImage,
    config: &SweepConfig,
    seed: u64,
) -> Result<(BenchRow, PixelImage), Error> {
    let basis = DctBasis::new(8)?;
    let quant = match config.qf {
        Some(qf) => Some(scale_quant_table(&QuantTable::annex_k_luma(), qf)?),
        None => None,
    };
    let cfg = CodingConfig {
        level_shift: config.level_shift,
        quant,
        dc_prediction_mode: config.dc_pred,
        twos_complement: config.twos,
        threshold: 0.0,
        relax_pixels: true,
        relax_coeffs: false,
    };
    cfg.validate()?;
    let source = if cfg.level_shift {
        level_shift(original, ShiftDirection::Forward)
    } else {
        original.clone()
    };
    let mut coeffs = forward_dct(&source, &basis)?;
    if let Some(q) = &cfg.quant {
        coeffs = quantize(&coeffs, q)?;
    }
    let mut chain = if cfg.dc_prediction_mode == 0 {
        DiffChain::empty()
    } else {
        let dcs: Vec<f64> = (0..coeffs.block_rows * coeffs.block_cols)
            .map(|b| coeffs.get(b / coeffs.block_cols, b % coeffs.block_cols, 0, 0))
            .collect();
        encode_dc_chain(&dcs, coeffs.block_rows, coeffs.block_cols, cfg.dc_prediction_mode)?
    };
    let mask = mask_signs(&coeffs, &mut chain, config.u, &cfg, seed)?;
    let masked = MaskedImage { coeffs, mask, chain, cfg };

    let mut rc = RecoveryConfig::for_method(config.method);
    if let Some(t) = config.threshold {
        rc.threshold = t;
    }
    rc.region_size = config.region;
    rc.dependency_mode = config.dep_mode;
    rc.alignment = config.align;
    rc.milp_time_limit = config.timeout;
    rc.seed = seed;

    let started = Instant::now();
    let outcome = recover(&masked, &rc, &BuiltinSolver, &basis)?;
    let seconds = started.elapsed().as_secs_f64();
    let report = metrics::report(original, &outcome.image)?;
    Ok((
        BenchRow {
            image: image_name.to_string(),
            config_index: 0,
            ssim: report.ssim,
            psnr: report.psnr,
            seconds,
            status: outcome.status.as_str().to_string(),
        },
        outcome.image,
    ))
}

/// Renders the CSV: a header, one data row per (image, config) in
/// deterministic order, then one mean row per config.
pub fn render_csv(configs: &[SweepConfig], rows: &[BenchRow], zero_time: bool) -> String {
    let mut out = String::new();
    out.push_str("image,U,QF,dcpred,depmode,method,region,align,T,ssim,psnr,seconds,status\n");
    let fmt_secs = |s: f64| if zero_time { "0.000".to_string() } else { format!("{s:.3}") };
    let fmt_db = |v: f64| {
        if v.is_infinite() {
            "inf".to_string()
        } else {
            format!("{v:.4}")
        }
    };
    for row in rows {
        let c = &configs[row.config_index];
        let cols = config_columns(c);
        let (u, rest) = cols.split_once(',').unwrap();
        let (qf, rest) = rest.split_once(',').unwrap();
        let (dcpred, rest) = rest.split_once(',').unwrap();
        let (depmode, rest) = rest.split_once(',').unwrap();
        let (method, rest) = rest.split_once(',').unwrap();
        let (region, rest) = rest.split_once(',').unwrap();
        let (align, threshold) = rest.split_once(',').unwrap();
        let _ = writeln!(
            out,
            "{},{u},{qf},{dcpred},{depmode},{method},{region},{align},{threshold},{:.6},{},{},{}",
            row.image,
            row.ssim,
            fmt_db(row.psnr),
            fmt_secs(row.seconds),
            row.status
        );
    }
    for (ci, c) in configs.iter().enumerate() {
        let members: Vec<&BenchRow> = rows.iter().filter(|r| r.config_index == ci).collect();
        if members.is_empty() {
            continue;
        }
        let n = members.len() as f64;
        let ssim = members.iter().map(|r| r.ssim).sum::<f64>() / n;
        let psnr = members.iter().map(|r| r.psnr).sum::<f64>() / n;
        let secs = members.iter().map(|r| r.seconds).sum::<f64>() / n;
        let _ = writeln!(
            out,
            "mean,{},{:.6},{},{},mean",
            config_columns(c),
            ssim,
            fmt_db(psnr),
            fmt_secs(secs)
        );
    }
    out
}

pub fn cmd_bench(args: &BenchArgs) -> Result<(), Error> {
    let configs = parse_sweep(&std::fs::read_to_string(&args.sweep)?)?;
    if configs.is_empty() {
        return Err(Error::Format("sweep file produced no configurations".into()));
    }
    let mut images: Vec<(String, PixelImage)> = Vec::new();
    let mut names: Vec<PathBuf> = std::fs::read_dir(&args.images)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|x| x == "pgm").unwrap_or(false))
        .collect();
    names.sort();
    for path in &names {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        images.push((name, read_pgm(&std::fs::read(path)?)?));
    }
    if images.is_empty() {
        return Err(Error::Format(format!("no PGM images under {}", args.images.display())));
    }

    let jobs = args.jobs.max(1);
    let rows = run_grid(&images, &configs, args.seed, jobs, args.keep_images.as_deref())?;
    std::fs::write(&args.out, render_csv(&configs, &rows, args.zero_time))?;
    Ok(())
}

/// Runs the whole (image, configuration) grid, images concurrently up to
/// `jobs`, collecting rows in deterministic order.
pub fn run_grid(
    images: &[(String, PixelImage)],
    configs: &[SweepConfig],
    master_seed: u64,
    jobs: usize,
    keep_images: Option<&Path>,
) -> Result<Vec<BenchRow>, Error> {
    if let Some(dir) = keep_images {
        std::fs::create_dir_all(dir)?;
    }
    let jobs = jobs.clamp(1, images.len().max(1));
    let mut results: Vec<Option<Result<Vec<BenchRow>, Error>>> =
        (0..images.len()).map(|_| None).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results_lock = std::sync::Mutex::new(&mut results);
    std::thread::scope(|scope| {
        let next = &next;
        let results = &results_lock;
        for _ in 0..jobs {
            scope.spawn(move || loop {
                let idx = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if idx >= images.len() {
                    break;
                }
                let (name, img) = &images[idx];
                let mut rows = Vec::with_capacity(configs.len());
                let mut failure: Option<Error> = None;
                for (ci, config) in configs.iter().enumerate() {
                    let seed = derive_seed(master_seed, name, ci);
                    match bench_one(name, img, config, seed) {
                        Ok((mut row, recovered)) => {
                            row.config_index = ci;
                            if let Some(dir) = keep_images {
                                let path = dir.join(format!("{name}__{ci}.pgm"));
                                if let Err(e) = std::fs::write(path, write_pgm(&recovered)) {
                                    failure = Some(Error::Io(e));
                                    break;
                                }
                            }
                            rows.push(row);
                        }
                        Err(e) => {
                            failure = Some(e);
                            break;
                        }
                    }
                }
                let outcome = match failure {
                    Some(e) => Err(e),
                    None => Ok(rows),
                };
                results.lock().unwrap()[idx] = Some(outcome);
            });
        }
    });
    let mut rows = Vec::with_capacity(images.len() * configs.len());
    for slot in results {
        let mut r = slot.expect("worker finished every image")?;
        rows.append(&mut r);
    }
    Ok(rows)
}

/// Reads a coefficient file and its truth sidecar together.
pub fn load_masked_with_truth(file: &Path, sidecar: &Path) -> Result<MaskedImage, Error> {
    let mut masked = read_coeff_file(&std::fs::read_to_string(file)?)?;
    read_truth_sidecar(&mut masked, &std::fs::read_to_string(sidecar)?)?;
    Ok(masked)
}
