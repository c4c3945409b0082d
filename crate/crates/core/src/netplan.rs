//! Ground-network contact and latency analysis.
//!
//! The satellite flies a circular orbit over a spherical Earth rotating at the
//! sidereal rate. A station sees it when its elevation above the local
//! (geocentric) horizon reaches the mask. Contacts are found on a time grid and
//! their edges refined by bisection; latency at instant `t` is the wait until
//! the next contact with any station, zero during a contact.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::orbit::{OrbitParams, OMEGA_EARTH, R_EARTH};
use crate::{Error, Result};

pub const DEFAULT_MASK_DEG: f64 = 10.0;
pub const MAX_STEP_S: f64 = 10.0;
/// Contact edges are refined to this precision.
const EDGE_TOLERANCE_S: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Network {
    Ttn,
    Tinygs,
    Satnogs,
    Custom,
}

impl Network {
    pub const ALL: [Network; 4] = [Network::Ttn, Network::Tinygs, Network::Satnogs, Network::Custom];

    pub fn as_str(self) -> &'static str {
        match self {
            Network::Ttn => "ttn",
            Network::Tinygs => "tinygs",
            Network::Satnogs => "satnogs",
            Network::Custom => "custom",
        }
    }
}

impl fmt::Display for Network {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Network {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Network::ALL
            .into_iter()
            .find(|n| n.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Parse(format!("unknown network {s:?}")))
    }
}

/// Wraps a longitude into (−180, 180].
pub fn normalize_lon_deg(lon: f64) -> f64 {
    if lon > -180.0 && lon <= 180.0 {
        return lon;
    }
    let x = (lon + 180.0).rem_euclid(360.0) - 180.0;
    if x == -180.0 {
        180.0
    } else {
        x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundStation {
    pub id: String,
    pub lat_deg: f64,
    pub lon_deg: f64,
    pub alt_m: f64,
    pub network: Network,
}

impl GroundStation {
    pub fn new(id: impl Into<String>, lat_deg: f64, lon_deg: f64, alt_m: f64, network: Network) -> Result<Self> {
        let mut s = Self {
            id: id.into(),
            lat_deg,
            lon_deg,
            alt_m,
            network,
        };
        s.normalize()?;
        Ok(s)
    }

    fn normalize(&mut self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::invalid("station id must not be empty"));
        }
        if !(self.lat_deg.abs() <= 90.0) {
            return Err(Error::OutOfRange {
                what: "lat_deg",
                value: self.lat_deg,
                min: -90.0,
                max: 90.0,
            });
        }
        if !self.lon_deg.is_finite() || !self.alt_m.is_finite() || self.alt_m <= -R_EARTH {
            return Err(Error::invalid(format!("station {}: non-finite position", self.id)));
        }
        self.lon_deg = normalize_lon_deg(self.lon_deg);
        Ok(())
    }

    /// Earth-fixed position, m.
    pub fn position_ecef(&self) -> [f64; 3] {
        scale(unit(self.lat_deg, self.lon_deg), R_EARTH + self.alt_m)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundStationCatalog {
    pub stations: Vec<GroundStation>,
}

impl GroundStationCatalog {
    /// Validates every station and rejects duplicate ids.
    pub fn new(mut stations: Vec<GroundStation>) -> Result<Self> {
        let mut seen = HashSet::new();
        for s in &mut stations {
            s.normalize()?;
            if !seen.insert(s.id.clone()) {
                return Err(Error::invalid(format!("duplicate station id {:?}", s.id)));
            }
        }
        Ok(Self { stations })
    }

    pub fn len(&self) -> usize {
        self.stations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stations.is_empty()
    }

    pub fn filter_network(&self, network: Network) -> Self {
        Self {
            stations: self.stations.iter().filter(|s| s.network == network).cloned().collect(),
        }
    }

    /// Union of two catalogs; ids must stay unique.
    pub fn merged(&self, other: &Self) -> Result<Self> {
        Self::new(self.stations.iter().chain(&other.stations).cloned().collect())
    }
}

fn unit(lat_deg: f64, lon_deg: f64) -> [f64; 3] {
    let (la, lo) = (lat_deg.to_radians(), lon_deg.to_radians());
    [la.cos() * lo.cos(), la.cos() * lo.sin(), la.sin()]
}

fn scale(v: [f64; 3], k: f64) -> [f64; 3] {
    [v[0] * k, v[1] * k, v[2] * k]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

/// Circular orbit phased against the rotating Earth. At `t = 0` the inertial
/// and Earth-fixed frames coincide, the ascending node sits over
/// `node_lon_deg` and the satellite is `arg_lat0_deg` past it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTrack {
    pub orbit: OrbitParams,
    pub node_lon_deg: f64,
    pub arg_lat0_deg: f64,
}

impl GroundTrack {
    pub fn new(orbit: OrbitParams, node_lon_deg: f64, arg_lat0_deg: f64) -> Result<Self> {
        orbit.validate()?;
        if !node_lon_deg.is_finite() || !arg_lat0_deg.is_finite() {
            return Err(Error::invalid("orbit phasing must be finite"));
        }
        Ok(Self {
            orbit,
            node_lon_deg,
            arg_lat0_deg,
        })
    }

    pub fn position_eci(&self, t: f64) -> [f64; 3] {
        let u = self.arg_lat0_deg.to_radians() + self.orbit.mean_motion() * t;
        let (so, co) = self.node_lon_deg.to_radians().sin_cos();
        let (si, ci) = self.orbit.inclination_deg.to_radians().sin_cos();
        let (su, cu) = u.sin_cos();
        scale([co * cu - so * su * ci, so * cu + co * su * ci, su * si], self.orbit.radius_m())
    }

    pub fn position_ecef(&self, t: f64) -> [f64; 3] {
        let p = self.position_eci(t);
        let (s, c) = (OMEGA_EARTH * t).sin_cos();
        [c * p[0] + s * p[1], -s * p[0] + c * p[1], p[2]]
    }

    /// Subsatellite (lat, lon) in degrees.
    pub fn subsatellite_point(&self, t: f64) -> (f64, f64) {
        let p = self.position_ecef(t);
        let lat = (p[2] / norm(p)).asin().to_degrees();
        (lat, normalize_lon_deg(p[1].atan2(p[0]).to_degrees()))
    }
}

/// Subsatellite point of an orbit whose ascending node is over longitude 0 at `t = 0`.
pub fn ground_track(orbit: &OrbitParams, t: f64) -> (f64, f64) {
    GroundTrack {
        orbit: *orbit,
        node_lon_deg: 0.0,
        arg_lat0_deg: 0.0,
    }
    .subsatellite_point(t)
}

/// Elevation of `sat_ecef` above the station's horizon, degrees.
pub fn elevation_deg(station: &GroundStation, sat_ecef: [f64; 3]) -> f64 {
    let g = station.position_ecef();
    let d = [sat_ecef[0] - g[0], sat_ecef[1] - g[1], sat_ecef[2] - g[2]];
    let r = norm(d);
    if r == 0.0 {
        return 90.0;
    }
    (dot(d, g) / (r * norm(g))).clamp(-1.0, 1.0).asin().to_degrees()
}

pub fn visibility(station: &GroundStation, sat_ecef: [f64; 3], min_elevation_deg: f64) -> bool {
    elevation_deg(station, sat_ecef) >= min_elevation_deg
}

/// Station precomputed for fast tests against satellites on a fixed radius:
/// on a sphere, elevation ≥ mask is equivalent to the central angle being
/// small enough.
struct Observer {
    up: [f64; 3],
    cos_max: f64,
}

impl Observer {
    fn new(station: &GroundStation, sat_radius_m: f64, mask_deg: f64) -> Self {
        let rg = R_EARTH + station.alt_m;
        let e = mask_deg.to_radians();
        let lambda = if rg >= sat_radius_m {
            // Station above the orbit sees it only from below the horizon.
            if mask_deg <= 0.0 {
                PI
            } else {
                -1.0
            }
        } else {
            ((rg / sat_radius_m) * e.cos()).clamp(-1.0, 1.0).acos() - e
        };
        Self {
            up: unit(station.lat_deg, station.lon_deg),
            cos_max: if lambda < 0.0 { 2.0 } else { lambda.cos() },
        }
    }

    fn sees(&self, sat_unit: [f64; 3]) -> bool {
        dot(self.up, sat_unit) >= self.cos_max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contact {
    pub station_id: String,
    pub rise_s: f64,
    pub set_s: f64,
}

impl Contact {
    pub fn duration_s(&self) -> f64 {
        self.set_s - self.rise_s
    }
}

/// Contacts clipped to `[0, window_s]`, sorted by rise, then set, then station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactSchedule {
    pub window_s: f64,
    pub contacts: Vec<Contact>,
}

impl ContactSchedule {
    pub fn new(window_s: f64, mut contacts: Vec<Contact>) -> Result<Self> {
        check_window(window_s)?;
        for c in &contacts {
            if !(0.0 <= c.rise_s && c.rise_s < c.set_s && c.set_s <= window_s) {
                return Err(Error::invalid(format!(
                    "contact {} [{}, {}] is not inside [0, {window_s}]",
                    c.station_id, c.rise_s, c.set_s
                )));
            }
        }
        contacts.sort_by(|a, b| {
            a.rise_s
                .total_cmp(&b.rise_s)
                .then(a.set_s.total_cmp(&b.set_s))
                .then_with(|| a.station_id.cmp(&b.station_id))
        });
        Ok(Self { window_s, contacts })
    }

    /// Union of all contacts as disjoint, sorted intervals.
    pub fn merged_intervals(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = Vec::new();
        for c in &self.contacts {
            match out.last_mut() {
                Some(last) if c.rise_s <= last.1 => last.1 = last.1.max(c.set_s),
                _ => out.push((c.rise_s, c.set_s)),
            }
        }
        out
    }

    /// Latency at instant `t`, or `None` when no contact starts before the
    /// window ends.
    pub fn latency_at(&self, t: f64) -> Option<f64> {
        self.merged_intervals()
            .into_iter()
            .find(|&(_, set)| set > t)
            .map(|(rise, _)| (rise - t).max(0.0))
    }
}

fn check_window(window_s: f64) -> Result<()> {
    if window_s > 0.0 && window_s.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("window must be positive, got {window_s}")))
    }
}

/// Visibility of every station over `[0, window_s]`.
///
/// Visibility is sampled every `step_s` (at most 10 s) and each transition is
/// refined by bisection, so contacts shorter than a step can be missed.
pub fn contact_schedule(
    track: &GroundTrack,
    catalog: &GroundStationCatalog,
    window_s: f64,
    step_s: f64,
    mask_deg: f64,
) -> Result<ContactSchedule> {
    check_window(window_s)?;
    if !(step_s > 0.0 && step_s <= MAX_STEP_S) {
        return Err(Error::OutOfRange {
            what: "step_s",
            value: step_s,
            min: 0.0,
            max: MAX_STEP_S,
        });
    }
    if !(-90.0..=90.0).contains(&mask_deg) {
        return Err(Error::OutOfRange {
            what: "mask_deg",
            value: mask_deg,
            min: -90.0,
            max: 90.0,
        });
    }
    let n = (window_s / step_s).ceil() as usize;
    let times: Vec<f64> = (0..=n).map(|k| (k as f64 * step_s).min(window_s)).collect();
    let sat_unit = |t: f64| {
        let p = track.position_ecef(t);
        scale(p, 1.0 / norm(p))
    };
    let positions: Vec<[f64; 3]> = times.par_iter().map(|&t| sat_unit(t)).collect();
    let radius = track.orbit.radius_m();

    let contacts = catalog
        .stations
        .par_iter()
        .flat_map_iter(|station| {
            let obs = Observer::new(station, radius, mask_deg);
            let sees = |t: f64| obs.sees(sat_unit(t));
            // Edge between a sample where visibility is `before` and the next.
            let edge = |mut a: f64, mut b: f64, before: bool| {
                while b - a > EDGE_TOLERANCE_S {
                    let m = 0.5 * (a + b);
                    if sees(m) == before {
                        a = m;
                    } else {
                        b = m;
                    }
                }
                0.5 * (a + b)
            };
            let mut out = Vec::new();
            let mut rise = obs.sees(positions[0]).then_some(0.0);
            for k in 1..times.len() {
                let v = obs.sees(positions[k]);
                match (rise, v) {
                    (None, true) => rise = Some(edge(times[k - 1], times[k], false)),
                    (Some(r), false) => {
                        out.push((r, edge(times[k - 1], times[k], true)));
                        rise = None;
                    }
                    _ => {}
                }
            }
            if let Some(r) = rise {
                out.push((r, window_s));
            }
            out.into_iter().filter(|(r, s)| s > r).map(|(rise_s, set_s)| Contact {
                station_id: station.id.clone(),
                rise_s,
                set_s,
            })
        })
        .collect();
    ContactSchedule::new(window_s, contacts)
}

/// Coverage and latency over a window, with capture instants uniform on it.
///
/// Waiting times after the last contact are censored at the window end; they
/// are counted as the time remaining and reported in `censored_fraction`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub window_s: f64,
    pub coverage_fraction: f64,
    pub p50_s: f64,
    pub p90_s: f64,
    pub max_s: f64,
    pub mean_s: f64,
    /// Share of the window after the last contact.
    pub censored_fraction: f64,
    /// No contact at all; percentiles are then the window length.
    pub no_contact: bool,
    pub contact_count: usize,
}

/// Exact latency distribution of a schedule: a point mass at zero for the
/// covered time plus, for each gap of length `g`, latency uniform on `(0, g]`.
pub fn latency_stats(schedule: &ContactSchedule) -> LatencyStats {
    let w = schedule.window_s;
    let merged = schedule.merged_intervals();
    if merged.is_empty() {
        return LatencyStats {
            window_s: w,
            coverage_fraction: 0.0,
            p50_s: w,
            p90_s: w,
            max_s: w,
            mean_s: w,
            censored_fraction: 1.0,
            no_contact: true,
            contact_count: 0,
        };
    }
    let covered: f64 = merged.iter().map(|(a, b)| b - a).sum();
    let mut gaps = Vec::with_capacity(merged.len() + 1);
    let mut prev = 0.0;
    for &(a, b) in &merged {
        gaps.push(a - prev);
        prev = b;
    }
    let tail = w - prev;
    gaps.push(tail);
    gaps.retain(|&g| g > 0.0);
    gaps.sort_by(f64::total_cmp);

    let coverage = covered / w;
    let quantile = |p: f64| {
        // F(x) = coverage + (Σ_{g<x} g + x·#{g ≥ x}) / w, piecewise linear.
        if p <= coverage {
            return 0.0;
        }
        let mut below = 0.0;
        for (i, &g) in gaps.iter().enumerate() {
            let above = (gaps.len() - i) as f64;
            let f_at_g = coverage + (below + g * above) / w;
            if f_at_g >= p {
                return ((p - coverage) * w - below) / above;
            }
            below += g;
        }
        gaps.last().copied().unwrap_or(0.0)
    };
    LatencyStats {
        window_s: w,
        coverage_fraction: coverage,
        p50_s: quantile(0.5),
        p90_s: quantile(0.9),
        max_s: gaps.last().copied().unwrap_or(0.0),
        mean_s: gaps.iter().map(|g| g * g).sum::<f64>() / (2.0 * w),
        censored_fraction: tail / w,
        no_contact: false,
        contact_count: schedule.contacts.len(),
    }
}

/// Latency sampled every `step_s`, as `(t, latency)` rows.
pub fn latency_series(schedule: &ContactSchedule, step_s: f64) -> Result<Vec<(f64, f64)>> {
    if !(step_s > 0.0) {
        return Err(Error::invalid("step must be positive"));
    }
    let w = schedule.window_s;
    let merged = schedule.merged_intervals();
    let mut out = Vec::new();
    let mut j = 0;
    let mut k = 0usize;
    loop {
        let t = k as f64 * step_s;
        if t > w {
            break;
        }
        while j < merged.len() && merged[j].1 < t {
            j += 1;
        }
        let lat = match merged.get(j) {
            Some(&(rise, _)) => (rise - t).max(0.0),
            None => w - t,
        };
        out.push((t, lat));
        k += 1;
    }
    Ok(out)
}

/// Population cluster a synthetic network draws stations from.
struct Region {
    lat: f64,
    lon: f64,
    spread_deg: f64,
    weight: f64,
}

const fn region(lat: f64, lon: f64, spread_deg: f64, weight: f64) -> Region {
    Region {
        lat,
        lon,
        spread_deg,
        weight,
    }
}

/// Terrestrial LoRa gateways: dense in Europe and North America, with a real
/// presence on every inhabited continent.
const TTN_REGIONS: &[Region] = &[
    region(50.0, 8.0, 6.0, 30.0),
    region(52.0, -1.0, 3.0, 6.0),
    region(40.0, -4.0, 3.0, 4.0),
    region(39.0, -92.0, 8.0, 14.0),
    region(45.0, -75.0, 5.0, 4.0),
    region(36.0, -119.0, 2.5, 4.0),
    region(20.0, -100.0, 5.0, 2.0),
    region(-23.0, -47.0, 5.0, 3.0),
    region(-34.0, -60.0, 4.0, 2.0),
    region(5.0, -74.0, 4.0, 1.5),
    region(-12.0, -77.0, 3.0, 1.0),
    region(6.0, 3.0, 4.0, 1.5),
    region(-1.0, 37.0, 4.0, 1.5),
    region(-28.0, 27.0, 4.0, 1.5),
    region(30.0, 31.0, 3.0, 1.0),
    region(20.0, 78.0, 7.0, 4.0),
    region(1.0, 104.0, 4.0, 2.0),
    region(14.0, 101.0, 4.0, 1.5),
    region(-7.0, 110.0, 4.0, 1.5),
    region(35.0, 135.0, 4.0, 3.0),
    region(37.0, 127.0, 2.0, 1.5),
    region(23.0, 114.0, 4.0, 1.5),
    region(-33.0, 150.0, 4.0, 3.0),
    region(-37.0, 145.0, 3.0, 1.5),
    region(-31.0, 116.0, 3.0, 1.0),
    region(-40.0, 175.0, 3.0, 1.0),
    region(55.0, 37.0, 6.0, 1.5),
    region(60.0, 18.0, 5.0, 2.0),
    region(64.0, -20.0, 2.0, 0.3),
    region(25.0, 51.0, 3.0, 1.0),
];

/// Amateur LoRa satellite stations: Europe and Latin America heavy.
const TINYGS_REGIONS: &[Region] = &[
    region(46.0, 5.0, 7.0, 30.0),
    region(40.0, -4.0, 3.0, 10.0),
    region(39.0, -92.0, 8.0, 8.0),
    region(-34.0, -60.0, 5.0, 6.0),
    region(-23.0, -47.0, 5.0, 4.0),
    region(20.0, -100.0, 5.0, 2.0),
    region(5.0, -74.0, 4.0, 1.0),
    region(35.0, 135.0, 4.0, 2.0),
    region(-33.0, 150.0, 4.0, 2.0),
    region(20.0, 78.0, 6.0, 2.0),
    region(55.0, 37.0, 6.0, 2.0),
    region(-28.0, 27.0, 3.0, 0.8),
    region(1.0, 104.0, 3.0, 0.8),
];

/// Dedicated satellite stations: few, concentrated in Europe and North America.
const SATNOGS_REGIONS: &[Region] = &[
    region(48.0, 10.0, 8.0, 35.0),
    region(39.0, -92.0, 8.0, 20.0),
    region(35.0, 135.0, 3.0, 3.0),
    region(-33.0, 150.0, 4.0, 3.0),
    region(20.0, 78.0, 5.0, 2.0),
    region(-23.0, -47.0, 4.0, 2.0),
    region(-34.0, -60.0, 3.0, 1.0),
    region(55.0, 37.0, 5.0, 2.0),
];

/// Seed of the shipped fixture catalogs.
pub const FIXTURE_SEED: u64 = 2022;

/// Default number of stations of a synthetic network.
pub fn synthetic_size(network: Network) -> usize {
    match network {
        Network::Ttn => 600,
        Network::Tinygs => 300,
        Network::Satnogs => 100,
        Network::Custom => 100,
    }
}

/// Plausible station layout for a network, deterministic in `seed`. `Custom`
/// spreads stations uniformly over the sphere.
pub fn synthetic_catalog(network: Network, count: usize, seed: u64) -> Result<GroundStationCatalog> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let regions = match network {
        Network::Ttn => TTN_REGIONS,
        Network::Tinygs => TINYGS_REGIONS,
        Network::Satnogs => SATNOGS_REGIONS,
        Network::Custom => &[],
    };
    let total: f64 = regions.iter().map(|r| r.weight).sum();
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let stations = (0..count)
        .map(|i| {
            let (lat, lon) = if regions.is_empty() {
                let z: f64 = rng.random_range(-1.0..1.0);
                (z.asin().to_degrees(), rng.random_range(-180.0..180.0))
            } else {
                let mut pick = rng.random_range(0.0..total);
                let r = regions
                    .iter()
                    .find(|r| {
                        pick -= r.weight;
                        pick < 0.0
                    })
                    .unwrap_or(&regions[regions.len() - 1]);
                let lat: f64 = r.lat + r.spread_deg * std.sample(&mut rng);
                let lon_scale = lat.to_radians().cos().max(0.2);
                let lon = r.lon + r.spread_deg / lon_scale * std.sample(&mut rng);
                (lat.clamp(-89.0, 89.0), lon)
            };
            let alt: f64 = rng.random_range(0.0..500.0);
            let round = |x: f64| format!("{x:.4}").parse::<f64>().expect("formatted float");
            GroundStation::new(format!("{network}-{i:05}"), round(lat), round(lon), alt.round(), network)
        })
        .collect::<Result<_>>()?;
    GroundStationCatalog::new(stations)
}

/// The catalog shipped in `fixtures/<network>.csv`.
pub fn fixture_catalog(network: Network) -> Result<GroundStationCatalog> {
    synthetic_catalog(network, synthetic_size(network), FIXTURE_SEED)
}

/// Stations every `spacing_deg` in latitude and longitude, both poles included once.
pub fn grid_catalog(spacing_deg: f64) -> Result<GroundStationCatalog> {
    if !(spacing_deg > 0.0 && spacing_deg <= 90.0) {
        return Err(Error::invalid("grid spacing must be in (0, 90]"));
    }
    let mut stations = Vec::new();
    let n_lat = (180.0 / spacing_deg).round() as i64;
    let n_lon = (360.0 / spacing_deg).round() as i64;
    for i in 0..=n_lat {
        let lat = -90.0 + i as f64 * 180.0 / n_lat as f64;
        let lons = if lat.abs() >= 90.0 { 1 } else { n_lon };
        for j in 0..lons {
            let lon = -180.0 + (j as f64 + 0.5) * 360.0 / n_lon as f64;
            stations.push(GroundStation::new(format!("grid-{i}-{j}"), lat, lon, 0.0, Network::Custom)?);
        }
    }
    GroundStationCatalog::new(stations)
}
