use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::Context;
use rayon::prelude::*;
use satlora_core::detect::{
    calibrate_threshold, detect_narrowband, detect_wideband, synthesize_capture, CaptureSpec, CorrelatorConfig,
    DEFAULT_THRESHOLD,
};
use serde::Serialize;
use serde_json::json;

use crate::common::{config_error, derive_seed, RadioArgs, Report};

/// Lead noise is randomised over one wide symbol so timing is not fixed.
const LEAD_BASE: usize = 1000;
const TAIL: usize = 2000;
const PAYLOAD_BYTES: usize = 8;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// CSV output, one row per Doppler offset.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    radio: RadioArgs,
    #[arg(long, default_value_t = 915.6e6)]
    carrier_hz: f64,
    #[arg(long, default_value_t = 0.0)]
    from_hz: f64,
    #[arg(long, default_value_t = 125_000.0)]
    to_hz: f64,
    #[arg(long, default_value_t = 1000.0)]
    step_hz: f64,
    /// In-band SNR of the packet.
    #[arg(long, default_value_t = -5.0)]
    snr_db: f64,
    #[arg(long, default_value_t = 4)]
    trials: usize,
    #[arg(long, default_value_t = 250_000.0)]
    wide_bw_hz: f64,
    /// Threshold for both correlators; ignored with `--calibrate-pfa`.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Calibrate each correlator's threshold to this false-alarm rate on
    /// noise buffers of the capture length.
    #[arg(long)]
    calibrate_pfa: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    calibration_trials: usize,
    #[arg(long)]
    seed: u64,
}

#[derive(Serialize)]
struct Row {
    doppler_hz: f64,
    narrow_detect_rate: f64,
    wide_detect_rate: f64,
    narrow_snr_db: f64,
    wide_snr_db: f64,
}

/// Largest offset up to which every row is detected at least half the time.
fn limit(rows: &[Row], rate: impl Fn(&Row) -> f64) -> Option<f64> {
    rows.iter().take_while(|r| rate(r) >= 0.5).last().map(|r| r.doppler_hz)
}

pub fn run(a: Args) -> anyhow::Result<Report> {
    let params = a.radio.params(a.carrier_hz)?;
    if !(a.step_hz > 0.0) || !a.from_hz.is_finite() || !a.to_hz.is_finite() || a.trials == 0 {
        return Err(config_error("need a positive --step-hz, finite bounds and at least one trial"));
    }
    if a.snr_db.is_nan() {
        return Err(config_error("--snr-db must be a number"));
    }
    let mut wide = CorrelatorConfig::new(params, a.wide_bw_hz)?;
    let mut narrow = CorrelatorConfig::narrowband(params);
    let n_per_symbol = params.samples_per_symbol() * wide.ratio();
    let capture_len = LEAD_BASE + n_per_symbol / 2 + TAIL + params.samples_per_symbol() * (params.header_symbols() + params.data_symbols(PAYLOAD_BYTES));
    let (tn, tw) = match a.calibrate_pfa {
        Some(pfa) => (
            calibrate_threshold(&narrow, params.sample_rate_hz, capture_len, a.calibration_trials, pfa, derive_seed(a.seed, u64::MAX))?,
            calibrate_threshold(&wide, params.sample_rate_hz, capture_len, a.calibration_trials, pfa, derive_seed(a.seed, u64::MAX - 1))?,
        ),
        None => (a.threshold, a.threshold),
    };
    narrow = narrow.with_threshold(tn);
    wide = wide.with_threshold(tw);

    let n_points = if a.to_hz < a.from_hz {
        0
    } else {
        ((a.to_hz - a.from_hz) / a.step_hz + 1e-9).floor() as usize + 1
    };
    let bin = params.bin_spacing_hz();
    let rows: Vec<Row> = (0..n_points)
        .into_par_iter()
        .map(|i| {
            let d = a.from_hz + i as f64 * a.step_hz;
            let mut acc = [0.0f64; 4];
            for trial in 0..a.trials {
                let seed = derive_seed(a.seed, (i * a.trials + trial) as u64);
                let spec = CaptureSpec {
                    doppler_hz: d,
                    snr_db: a.snr_db,
                    lead_samples: LEAD_BASE + (seed % n_per_symbol as u64) as usize,
                    tail_samples: TAIL,
                    payload_len: PAYLOAD_BYTES,
                    seed,
                };
                let iq = synthesize_capture(&params, &spec)?;
                let n = detect_narrowband(&iq, &params, narrow.detection_threshold)?;
                let w = detect_wideband(&iq, &wide)?;
                // a detection counts when the coarse Doppler lands within two bins
                let hit = |r: &satlora_core::detect::DetectionResult| r.detected && (r.coarse_doppler_hz - d).abs() <= 2.0 * bin;
                acc[0] += hit(&n) as u8 as f64;
                acc[1] += hit(&w) as u8 as f64;
                acc[2] += n.detection_snr_db;
                acc[3] += w.detection_snr_db;
            }
            let t = a.trials as f64;
            Ok(Row {
                doppler_hz: d,
                narrow_detect_rate: acc[0] / t,
                wide_detect_rate: acc[1] / t,
                narrow_snr_db: acc[2] / t,
                wide_snr_db: acc[3] / t,
            })
        })
        .collect::<satlora_core::Result<_>>()?;

    let mut out = BufWriter::new(File::create(&a.out).with_context(|| format!("creating {}", a.out.display()))?);
    writeln!(out, "doppler_hz,narrow_detect_rate,wide_detect_rate,narrow_snr_db,wide_snr_db")?;
    for r in &rows {
        writeln!(
            out,
            "{},{},{},{:.4},{:.4}",
            r.doppler_hz, r.narrow_detect_rate, r.wide_detect_rate, r.narrow_snr_db, r.wide_snr_db
        )?;
    }
    out.flush()?;

    let narrow_limit = limit(&rows, |r| r.narrow_detect_rate);
    let wide_limit = limit(&rows, |r| r.wide_detect_rate);
    let ratio = match (narrow_limit, wide_limit) {
        (Some(n), Some(w)) if n > 0.0 => Some(w / n),
        _ => None,
    };
    let zero_penalty = rows.first().filter(|r| r.doppler_hz == 0.0).map(|r| r.narrow_snr_db - r.wide_snr_db);
    let at_bw = rows
        .iter()
        .min_by(|x, y| (x.doppler_hz - params.bw_hz).abs().total_cmp(&(y.doppler_hz - params.bw_hz).abs()))
        .filter(|r| (r.doppler_hz - params.bw_hz).abs() <= a.step_hz / 2.0)
        .map(|r| r.wide_snr_db - r.narrow_snr_db);
    let summary = json!({
        "points": rows.len(),
        "snr_db": a.snr_db,
        "thresholds": {"narrow": tn, "wide": tw},
        "narrow_limit_hz": narrow_limit,
        "wide_limit_hz": wide_limit,
        "limit_ratio": ratio,
        "zero_offset_penalty_db": zero_penalty,
        "advantage_at_bw_db": at_bw,
        "csv": a.out,
    });
    let mut report = Report::new(summary);
    let fmt = |x: Option<f64>, unit: &str| x.map_or("n/a".to_string(), |v| format!("{v:.1}{unit}"));
    report.line(format!("{} offsets × {} trials at {} dB", rows.len(), a.trials, a.snr_db));
    report.line(format!(
        "detection limit: narrowband {}, wideband {} (ratio {})",
        fmt(narrow_limit, " Hz"),
        fmt(wide_limit, " Hz"),
        fmt(ratio, "")
    ));
    report.line(format!(
        "zero-offset penalty {}, wideband advantage at Doppler = bw {}",
        fmt(zero_penalty, " dB"),
        fmt(at_bw, " dB")
    ));
    Ok(report)
}
