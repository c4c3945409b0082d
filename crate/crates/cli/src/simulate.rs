use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use clap::ValueEnum;
use satlora_core::channel::LinkBudget;
use satlora_core::detect::{detect_wideband, CorrelatorConfig, DetectionResult, DEFAULT_THRESHOLD};
use satlora_core::errmodel::{capture_packet, random_payload, trace_from_capture, DopplerModel, PacketSimConfig};
use satlora_core::io;
use satlora_core::orbit::{DopplerCurve, PassGeometry};
use serde_json::json;

use crate::common::{config_error, create_dir, derive_seed, OrbitArgs, RadioArgs, Report};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DopplerMode {
    On,
    Off,
}

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Directory for the per-packet files and the pass summary.
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    orbit: OrbitArgs,
    #[command(flatten)]
    radio: RadioArgs,
    #[arg(long, default_value_t = 90.0)]
    max_elevation_deg: f64,
    /// One packet every this many seconds.
    #[arg(long, default_value_t = 30.0)]
    cadence_s: f64,
    /// Start of the first packet, seconds after rise.
    #[arg(long, default_value_t = 0.0)]
    first_packet_s: f64,
    /// In-band SNR for every packet (`inf` for none). Defaults to the link
    /// budget at each packet's slant range.
    #[arg(long)]
    snr_db: Option<f64>,
    #[arg(long, value_enum, default_value_t = DopplerMode::On)]
    doppler: DopplerMode,
    #[arg(long, default_value_t = 32)]
    payload_bytes: usize,
    /// Noise-only samples before and after each packet.
    #[arg(long, default_value_t = 4096)]
    pad_samples: usize,
    #[arg(long, default_value_t = 250_000.0)]
    wide_bw_hz: f64,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Skip writing IQ captures.
    #[arg(long)]
    no_iq: bool,
    #[arg(long)]
    seed: u64,
}

pub fn run(a: Args) -> anyhow::Result<Report> {
    let orbit = a.orbit.orbit()?;
    let params = a.radio.params(orbit.carrier_hz)?;
    let pass = PassGeometry::new(orbit, a.max_elevation_deg, 0.0)?;
    if !(a.cadence_s > 0.0) || !(a.first_packet_s >= 0.0) {
        return Err(config_error("cadence must be positive and the first packet at or after rise"));
    }
    if a.snr_db.is_some_and(|s| s.is_nan() || s == f64::NEG_INFINITY) {
        return Err(config_error("--snr-db must be a number or inf"));
    }
    let wide = CorrelatorConfig::new(params, a.wide_bw_hz)?.with_threshold(a.threshold);
    let budget = LinkBudget {
        bandwidth_hz: params.bw_hz,
        ..LinkBudget::default()
    };
    create_dir(&a.out_dir)?;

    let airtime = params.airtime_s(a.payload_bytes);
    let header_s = (params.preamble_len + params.sync_len) as f64 * params.symbol_duration_s();
    let pad_s = a.pad_samples as f64 / params.sample_rate_hz;
    let mut detections: Vec<DetectionResult> = Vec::new();
    let (mut t_meas, mut d_meas, mut d_true) = (Vec::new(), Vec::new(), Vec::new());
    let mut slots = Vec::new();
    let mut k = 0u64;
    loop {
        let start = a.first_packet_s + k as f64 * a.cadence_s;
        if start + airtime > pass.duration_s() {
            break;
        }
        let seed = derive_seed(a.seed, k);
        let payload = random_payload(a.payload_bytes, derive_seed(seed, 0));
        let t_abs = pass.t_start_s + start;
        let snr_db = match a.snr_db {
            Some(s) => s,
            None => budget.pass_snr_db(&pass, t_abs + airtime / 2.0)?,
        };
        let doppler = match a.doppler {
            DopplerMode::On => DopplerModel::Pass {
                pass,
                packet_start_s: start,
            },
            DopplerMode::Off => DopplerModel::Off,
        };
        let cfg = PacketSimConfig {
            detection_threshold: a.threshold,
            ..PacketSimConfig::new(snr_db, doppler, seed)
        };
        let capture = capture_packet(&cfg, &params, &payload, a.pad_samples, a.pad_samples)?;
        let trace = trace_from_capture(&cfg, &params, &payload, &capture)?;
        let det = detect_wideband(&capture.iq, &wide)?;

        let stem = format!("packet_{k:03}");
        if !a.no_iq {
            io::save_iq(&a.out_dir.join(format!("{stem}.iq")), &capture.iq, &params)?;
        }
        io::save_error_trace(&a.out_dir.join(format!("{stem}.trace.csv")), &trace)?;
        if det.detected {
            // the estimate averages the header, whose centre is here
            let t = t_abs + header_s / 2.0;
            let f = det.fine_doppler_hz.unwrap_or(det.coarse_doppler_hz);
            t_meas.push(t);
            d_meas.push(f);
            d_true.push(match a.doppler {
                DopplerMode::On => pass.doppler(t)?,
                DopplerMode::Off => 0.0,
            });
        }
        slots.push(json!({
            "slot": k,
            "packet_start_s": start,
            "snr_db": io_float(snr_db),
            "preamble_correction_hz": capture.preamble_correction_hz,
            "symbol_errors": trace.symbol_errors(),
            "narrowband_detected": trace.header.detected,
            "wideband_detected": det.detected,
            "doppler_estimate_hz": det.detected.then(|| det.fine_doppler_hz.unwrap_or(det.coarse_doppler_hz)),
            "packet_start_index": capture.packet_start_index,
            "pad_s": pad_s,
        }));
        detections.push(det);
        k += 1;
    }

    io::write_detections(BufWriter::new(File::create(a.out_dir.join("detections.jsonl"))?), &detections)?;
    let measured = DopplerCurve::new(t_meas.clone(), d_meas)?;
    io::save_doppler_curve(&a.out_dir.join("doppler_measured.csv"), &measured)?;
    io::save_doppler_curve(&a.out_dir.join("doppler_true.csv"), &DopplerCurve::new(t_meas, d_true)?)?;

    let narrow = slots.iter().filter(|s| s["narrowband_detected"] == true).count();
    let wideband = detections.iter().filter(|d| d.detected).count();
    let errors: u64 = slots.iter().map(|s| s["symbol_errors"].as_u64().unwrap_or(0)).sum();
    let summary = json!({
        "pass": pass,
        "duration_s": pass.duration_s(),
        "params": params,
        "seed": a.seed,
        "slots": slots.len(),
        "narrowband_detected": narrow,
        "wideband_detected": wideband,
        "symbol_errors": errors,
        "packets": slots,
    });
    io::write_json(&a.out_dir.join("pass.json"), &summary)?;

    let mut report = Report::new(summary);
    report.line(format!(
        "pass θmax {:.1}° duration {:.1} s: {} packet slots",
        a.max_elevation_deg,
        pass.duration_s(),
        slots.len()
    ));
    report.line(format!("detected: narrowband {narrow}, wideband {wideband}; payload symbol errors {errors}"));
    report.line(format!("wrote {}", a.out_dir.display()));
    Ok(report)
}

/// JSON has no infinity; report it as a string.
fn io_float(x: f64) -> serde_json::Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!(x.to_string())
    }
}
