use anyhow::Context;
use std::path::PathBuf;

use clap::ValueEnum;
use satlora_core::errmodel::{
    fit_bin_offset_distribution, mask_flip_rates, sample_bit_masks, ErrorTrace, MaskSource, OffsetModel,
};
use satlora_core::io;
use serde_json::json;

use crate::common::{config_error, files_with_suffix, Report};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SourceArg {
    /// Concatenate the recorded traces' masks.
    Replay,
    /// Sample the traces' empirical signed offsets.
    Empirical,
    /// Sample the exponential fit to the traces.
    Fit,
    /// Noise-only model: `--ser` spread uniformly over the other bins.
    Uniform,
    /// Drift-only model: `--ser` with geometric |offset| of decay `--rate`.
    Exponential,
}

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Packed mask file; the sidecar goes to `<out>.json`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 256)]
    payload_bytes: usize,
    #[arg(long, value_enum, default_value_t = SourceArg::Replay)]
    source: SourceArg,
    /// Trace files, or directories searched for `*.trace.csv`.
    #[arg(long)]
    traces: Vec<PathBuf>,
    /// Spreading factor of the parametric models.
    #[arg(long, default_value_t = 8)]
    sf: u8,
    #[arg(long)]
    ser: Option<f64>,
    /// Decay per bin of the exponential model.
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    positive_fraction: f64,
    /// Superpose uniform noise errors at this symbol error rate.
    #[arg(long)]
    noise_ser: Option<f64>,
    #[arg(long)]
    seed: u64,
}

fn load_traces(paths: &[PathBuf]) -> anyhow::Result<Vec<ErrorTrace>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            files.extend(files_with_suffix(p, ".trace.csv")?);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        return Err(config_error("this source needs --traces"));
    }
    files.iter().map(|f| Ok(io::load_error_trace(f).with_context(|| format!("reading {}", f.display()))?)).collect()
}

pub fn run(a: Args) -> anyhow::Result<Report> {
    let bits = 8 * a.payload_bytes;
    let traces = match a.source {
        SourceArg::Replay | SourceArg::Empirical | SourceArg::Fit => load_traces(&a.traces)?,
        _ => Vec::new(),
    };
    let need = |x: Option<f64>, flag: &str| x.ok_or_else(|| config_error(format!("this source needs {flag}")));
    let mut model = match a.source {
        SourceArg::Replay => None,
        SourceArg::Empirical => Some(OffsetModel::empirical(&traces)?),
        SourceArg::Fit => Some(OffsetModel::from_fit(&fit_bin_offset_distribution(&traces)?)?),
        SourceArg::Uniform => Some(OffsetModel::uniform(a.sf, need(a.ser, "--ser")?)?),
        SourceArg::Exponential => Some(OffsetModel::exponential(
            a.sf,
            need(a.ser, "--ser")?,
            need(a.rate, "--rate")?,
            a.positive_fraction,
        )?),
    };
    if let Some(noise) = a.noise_ser {
        let base = model.take().ok_or_else(|| config_error("--noise-ser needs a model source, not replay"))?;
        model = Some(base.superpose(&OffsetModel::uniform(base.sf, noise)?)?);
    }
    let sf = model.as_ref().map_or_else(|| traces.first().map_or(a.sf, |t| t.header.params.sf), |m| m.sf);
    let source = match &model {
        Some(m) => MaskSource::Model(m),
        None => MaskSource::Traces(&traces),
    };
    let masks = sample_bit_masks(source, bits, a.count, a.seed)?;
    let description = json!({
        "kind": a.source.to_possible_value().map(|v| v.get_name().to_string()),
        "seed": a.seed,
        "traces": traces.len(),
        "sf": sf,
        "ser": a.ser,
        "rate": a.rate,
        "noise_ser": a.noise_ser,
    });
    let meta = io::save_bit_masks(&a.out, &masks, description)?;
    let rates = mask_flip_rates(&masks, sf);
    let mut report = Report::new(json!({ "file": a.out, "metadata": meta, "flip_rate_msb_first": rates }));
    report.line(format!("wrote {} masks of {} bits to {}", meta.count, meta.bits_per_mask, a.out.display()));
    report.line(format!(
        "flip rate by bit, MSB first: {}",
        rates.iter().map(|r| format!("{r:.2e}")).collect::<Vec<_>>().join(" ")
    ));
    Ok(report)
}
