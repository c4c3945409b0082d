use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use satlora_core::orbit::OrbitParams;
use satlora_core::phy::LoRaParams;

/// Invalid user input detected by the CLI itself.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

/// 1 when the first recognised error in the chain is a configuration
/// problem, 2 otherwise.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    use satlora_core::Error;
    for cause in e.chain() {
        if cause.is::<ConfigError>() {
            return 1;
        }
        if let Some(core) = cause.downcast_ref::<Error>() {
            return match core {
                Error::InvalidParameter(_) | Error::OutOfRange { .. } | Error::Configuration(_) => 1,
                _ => 2,
            };
        }
    }
    2
}

/// What a subcommand prints: `text` normally, `summary` with `--json`.
pub struct Report {
    pub summary: serde_json::Value,
    pub text: String,
}

impl Report {
    pub fn new(summary: serde_json::Value) -> Self {
        Self {
            summary,
            text: String::new(),
        }
    }

    pub fn line(&mut self, s: impl AsRef<str>) {
        let _ = writeln!(self.text, "{}", s.as_ref());
    }
}

#[derive(Args, Debug, Clone)]
pub struct OrbitArgs {
    #[arg(long, default_value_t = 525e3)]
    pub altitude_m: f64,
    #[arg(long, default_value_t = 97.52)]
    pub inclination_deg: f64,
    #[arg(long, default_value_t = 915.6e6)]
    pub carrier_hz: f64,
}

impl OrbitArgs {
    pub fn orbit(&self) -> anyhow::Result<OrbitParams> {
        Ok(OrbitParams::new(self.altitude_m, self.inclination_deg, self.carrier_hz)?)
    }
}

#[derive(Args, Debug, Clone)]
pub struct RadioArgs {
    #[arg(long, default_value_t = 8)]
    pub sf: u8,
    #[arg(long, default_value_t = 62_500.0)]
    pub bw_hz: f64,
    /// Sample rate as a multiple of the bandwidth.
    #[arg(long, default_value_t = 4)]
    pub oversampling: usize,
    #[arg(long, default_value_t = 8)]
    pub preamble_len: usize,
}

impl RadioArgs {
    pub fn params(&self, carrier_hz: f64) -> anyhow::Result<LoRaParams> {
        let mut p = LoRaParams::new(self.sf, self.bw_hz)?.with_oversampling(self.oversampling);
        p.preamble_len = self.preamble_len;
        p.carrier_hz = carrier_hz;
        p.validate()?;
        Ok(p)
    }
}

pub fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Files named `*{suffix}` in `dir`, sorted by name.
pub fn files_with_suffix(dir: &Path, suffix: &str) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(suffix)) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Independent seed for item `index` of a run seeded with `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
