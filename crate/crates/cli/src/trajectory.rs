use anyhow::Context;
use std::path::PathBuf;

use clap::ValueEnum;
use satlora_core::io;
use satlora_core::trajectory::{estimate_trajectory, predict_next_pass_doppler, Score, SearchGrid};
use serde_json::json;

use crate::common::{config_error, OrbitArgs, Report};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScoreArg {
    Matched,
    Normalized,
}

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Measured Doppler, CSV `t_s,doppler_hz`.
    #[arg(long)]
    doppler_csv: PathBuf,
    /// Orbit altitude and carrier; the inclination is what gets estimated.
    #[command(flatten)]
    orbit: OrbitArgs,
    #[arg(long, default_value_t = 0.25)]
    theta_step_deg: f64,
    #[arg(long, default_value_t = 0.5)]
    phi_step_deg: f64,
    #[arg(long, value_enum, default_value_t = ScoreArg::Matched)]
    score: ScoreArg,
    /// Write the estimate as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Predict Doppler of the estimated pass over this span.
    #[arg(long)]
    predict_horizon_s: Option<f64>,
    /// Start of the prediction; defaults to the estimated pass start.
    #[arg(long)]
    predict_from_s: Option<f64>,
    #[arg(long, default_value_t = 30.0)]
    predict_period_s: f64,
    /// CSV for the prediction; required with `--predict-horizon-s`.
    #[arg(long)]
    predict_out: Option<PathBuf>,
}

pub fn run(a: Args) -> anyhow::Result<Report> {
    let orbit = a.orbit.orbit()?;
    let grid = SearchGrid {
        theta_step_deg: a.theta_step_deg,
        phi_step_deg: a.phi_step_deg,
        coarse_theta_step_deg: a.theta_step_deg.max(1.0),
        coarse_phi_step_deg: a.phi_step_deg.max(2.0),
        score: match a.score {
            ScoreArg::Matched => Score::Matched,
            ScoreArg::Normalized => Score::Normalized,
        },
        ..SearchGrid::default()
    };
    grid.validate()?;
    if a.predict_horizon_s.is_some() != a.predict_out.is_some() {
        return Err(config_error("--predict-horizon-s and --predict-out go together"));
    }
    let measured = io::load_doppler_curve(&a.doppler_csv).with_context(|| format!("reading {}", a.doppler_csv.display()))?;
    let est = estimate_trajectory(&measured, &orbit, &grid)?;
    if let Some(path) = &a.out {
        io::write_json(path, &est)?;
    }
    let mut summary = json!({ "estimate": est, "measurements": measured.len() });
    let mut prediction_line = None;
    if let (Some(h), Some(path)) = (a.predict_horizon_s, &a.predict_out) {
        let from = a.predict_from_s.unwrap_or(est.t_start_s);
        let pred = predict_next_pass_doppler(&est, &orbit, from, h, a.predict_period_s)?;
        io::save_doppler_curve(path, &pred.curve)?;
        summary["prediction"] = json!({
            "points": pred.curve.len(),
            "error_bound_hz": pred.error_bound_hz,
            "csv": path,
        });
        prediction_line = Some(format!(
            "predicted {} points, error bound {:.1} Hz",
            pred.curve.len(),
            pred.error_bound_hz
        ));
    }
    let mut report = Report::new(summary);
    report.line(format!(
        "θmax {:.2}°  φ {:.2}°  t_start {:.1} s  score {:.4}",
        est.theta_max_deg, est.phi_deg, est.t_start_s, est.correlation_score
    ));
    if let Some(l) = prediction_line {
        report.line(l);
    }
    Ok(report)
}
