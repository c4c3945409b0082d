use anyhow::Context;
use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use satlora_core::io;
use satlora_core::netplan::{
    contact_schedule, fixture_catalog, latency_series, latency_stats, GroundStationCatalog, GroundTrack, Network,
    DEFAULT_MASK_DEG, MAX_STEP_S,
};
use serde_json::json;

use crate::common::{config_error, create_dir, OrbitArgs, Report};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Catalog CSV (`id,lat_deg,lon_deg,alt_m,network`); repeatable.
    #[arg(long)]
    catalog: Vec<PathBuf>,
    /// Built-in fixture catalogs; used when no `--catalog` is given.
    #[arg(long, value_delimiter = ',', default_value = "ttn,tinygs,satnogs")]
    network: Vec<Network>,
    #[command(flatten)]
    orbit: OrbitArgs,
    /// Longitude of the ascending node at t = 0.
    #[arg(long, default_value_t = 0.0)]
    node_lon_deg: f64,
    /// Satellite position past the node at t = 0.
    #[arg(long, default_value_t = 0.0)]
    arg_lat0_deg: f64,
    #[arg(long, default_value_t = 2.0 * 86_400.0)]
    window_s: f64,
    #[arg(long, default_value_t = MAX_STEP_S)]
    step_s: f64,
    #[arg(long, default_value_t = DEFAULT_MASK_DEG)]
    mask_deg: f64,
    /// Where to write `latency_<name>.csv` series and `latency.json`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 60.0)]
    series_step_s: f64,
}

pub fn run(a: Args) -> anyhow::Result<Report> {
    let track = GroundTrack::new(a.orbit.orbit()?, a.node_lon_deg, a.arg_lat0_deg)?;
    if !(a.series_step_s > 0.0) {
        return Err(config_error("--series-step-s must be positive"));
    }
    let catalogs: Vec<(String, GroundStationCatalog)> = if a.catalog.is_empty() {
        a.network
            .iter()
            .map(|&n| Ok((n.to_string(), fixture_catalog(n)?)))
            .collect::<anyhow::Result<_>>()?
    } else {
        a.catalog
            .iter()
            .map(|p| {
                let name = p.file_stem().map_or("catalog".into(), |s| s.to_string_lossy().into_owned());
                Ok((name, io::load_catalog(p).with_context(|| format!("reading {}", p.display()))?))
            })
            .collect::<anyhow::Result<_>>()?
    };
    if let Some(dir) = &a.out_dir {
        create_dir(dir)?;
    }

    let mut rows = Vec::new();
    let mut report = Report::new(json!(null));
    report.line(format!("{:<12} {:>8} {:>9} {:>9} {:>9} {:>9}", "catalog", "stations", "coverage", "p50 s", "p90 s", "max s"));
    for (name, cat) in &catalogs {
        let schedule = contact_schedule(&track, cat, a.window_s, a.step_s, a.mask_deg)?;
        let stats = latency_stats(&schedule);
        if let Some(dir) = &a.out_dir {
            let series = latency_series(&schedule, a.series_step_s)?;
            io::write_latency_series(BufWriter::new(File::create(dir.join(format!("latency_{name}.csv")))?), &series)?;
        }
        report.line(format!(
            "{:<12} {:>8} {:>8.2}% {:>9.0} {:>9.0} {:>9.0}{}",
            name,
            cat.len(),
            100.0 * stats.coverage_fraction,
            stats.p50_s,
            stats.p90_s,
            stats.max_s,
            if stats.no_contact { "  (no contact)" } else { "" }
        ));
        rows.push(json!({ "catalog": name, "stations": cat.len(), "stats": stats }));
    }
    let summary = json!({
        "window_s": a.window_s,
        "step_s": a.step_s,
        "mask_deg": a.mask_deg,
        "track": track,
        "catalogs": rows,
    });
    if let Some(dir) = &a.out_dir {
        io::write_json(&dir.join("latency.json"), &summary)?;
    }
    report.summary = summary;
    Ok(report)
}
