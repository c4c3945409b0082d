//! Circular low-Earth-orbit pass geometry.
//!
//! A pass is modelled on a spherical Earth: the satellite sweeps a great
//! circle relative to the ground station at a constant angular rate, and the
//! closest approach is fixed by the maximum elevation. Earth rotation enters
//! only through that relative angular rate, which is the magnitude of
//! `ω·n̂ − ω_e·ẑ` for an orbit normal `n̂` tilted by the inclination. This keeps
//! the Doppler family three-parametric (maximum elevation, inclination, start
//! time) and exactly antisymmetric about closest approach.

use serde::{Deserialize, Serialize};

use crate::{Error, Result, SPEED_OF_LIGHT};

/// Standard gravitational parameter of the Earth, m³/s².
pub const MU_EARTH: f64 = 3.986_004_418e14;
/// Mean spherical Earth radius, m.
pub const R_EARTH: f64 = 6.371e6;
/// Sidereal rotation rate of the Earth, rad/s.
pub const OMEGA_EARTH: f64 = 7.292_115_9e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitParams {
    pub altitude_m: f64,
    pub inclination_deg: f64,
    pub carrier_hz: f64,
}

impl OrbitParams {
    pub fn new(altitude_m: f64, inclination_deg: f64, carrier_hz: f64) -> Result<Self> {
        let orbit = Self {
            altitude_m,
            inclination_deg,
            carrier_hz,
        };
        orbit.validate()?;
        Ok(orbit)
    }

    /// 525 km, 97.52° sun-synchronous orbit downlinking at 915.6 MHz.
    pub fn reference() -> Self {
        Self {
            altitude_m: 525e3,
            inclination_deg: 97.52,
            carrier_hz: 915.6e6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_range("altitude_m", self.altitude_m, 300e3, 2000e3)?;
        check_range("inclination_deg", self.inclination_deg, 0.0, 180.0)?;
        if !(self.carrier_hz > 0.0) || !self.carrier_hz.is_finite() {
            return Err(Error::invalid("carrier_hz must be positive"));
        }
        Ok(())
    }

    pub fn radius_m(&self) -> f64 {
        R_EARTH + self.altitude_m
    }

    /// Inertial angular rate of the orbit, rad/s.
    pub fn mean_motion(&self) -> f64 {
        (MU_EARTH / self.radius_m().powi(3)).sqrt()
    }

    pub fn velocity_mps(&self) -> f64 {
        orbital_velocity(self.altitude_m)
    }

    pub fn period_s(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.mean_motion()
    }

    /// Angular rate of the satellite as seen from the rotating Earth.
    pub fn relative_angular_rate(&self) -> f64 {
        relative_angular_rate(self.mean_motion(), self.inclination_deg)
    }

    pub fn with_inclination(mut self, inclination_deg: f64) -> Self {
        self.inclination_deg = inclination_deg;
        self
    }
}

/// Circular orbital speed `sqrt(μ / (R + h))`.
pub fn orbital_velocity(altitude_m: f64) -> f64 {
    (MU_EARTH / (R_EARTH + altitude_m)).sqrt()
}

pub(crate) fn relative_angular_rate(mean_motion: f64, inclination_deg: f64) -> f64 {
    let w = mean_motion;
    let cos_i = inclination_deg.to_radians().cos();
    (w * w - 2.0 * w * OMEGA_EARTH * cos_i + OMEGA_EARTH * OMEGA_EARTH).sqrt()
}

/// Free-space path loss `20·log10(4π·d·f/c)` in dB.
pub fn path_loss_db(range_m: f64, carrier_hz: f64) -> f64 {
    20.0 * (4.0 * std::f64::consts::PI * range_m * carrier_hz / SPEED_OF_LIGHT).log10()
}

/// One horizon-to-horizon pass over a ground station.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassGeometry {
    pub orbit: OrbitParams,
    pub max_elevation_deg: f64,
    /// Time at which the satellite rises above the horizon.
    pub t_start_s: f64,
}

impl PassGeometry {
    pub fn new(orbit: OrbitParams, max_elevation_deg: f64, t_start_s: f64) -> Result<Self> {
        orbit.validate()?;
        if !(max_elevation_deg > 0.0 && max_elevation_deg <= 90.0) {
            return Err(Error::OutOfRange {
                what: "max_elevation_deg",
                value: max_elevation_deg,
                min: 0.0,
                max: 90.0,
            });
        }
        if !t_start_s.is_finite() {
            return Err(Error::invalid("t_start_s must be finite"));
        }
        Ok(Self {
            orbit,
            max_elevation_deg,
            t_start_s,
        })
    }

    /// Earth central angle between the station and the sub-satellite point
    /// at closest approach.
    pub fn min_central_angle(&self) -> f64 {
        central_angle_for_elevation(self.orbit.radius_m(), self.max_elevation_deg.to_radians())
    }

    pub fn angular_rate(&self) -> f64 {
        self.orbit.relative_angular_rate()
    }

    pub fn duration_s(&self) -> f64 {
        let r = self.orbit.radius_m();
        let cos_beta = self.min_central_angle().cos();
        let half_arc = ((R_EARTH / r) / cos_beta).clamp(-1.0, 1.0).acos();
        2.0 * half_arc / self.angular_rate()
    }

    pub fn t_end_s(&self) -> f64 {
        self.t_start_s + self.duration_s()
    }

    /// Time of closest approach.
    pub fn t_ca_s(&self) -> f64 {
        self.t_start_s + 0.5 * self.duration_s()
    }

    pub fn contains(&self, t: f64) -> bool {
        let slack = 1e-9 * self.duration_s().max(1.0);
        t >= self.t_start_s - slack && t <= self.t_end_s() + slack
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if self.contains(t) {
            Ok(())
        } else {
            Err(Error::OutOfRange {
                what: "pass time",
                value: t,
                min: self.t_start_s,
                max: self.t_end_s(),
            })
        }
    }

    pub fn slant_range(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(self.range_at_offset(t - self.t_ca_s()))
    }

    pub fn elevation_deg(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        let tau = t - self.t_ca_s();
        let r = self.orbit.radius_m();
        let cos_gamma = self.min_central_angle().cos() * (self.angular_rate() * tau).cos();
        let d = self.range_at_offset(tau);
        Ok(((r * cos_gamma - R_EARTH) / d).clamp(-1.0, 1.0).asin().to_degrees())
    }

    /// Doppler shift in Hz; positive while the satellite approaches.
    pub fn doppler(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(self.doppler_at_offset(t - self.t_ca_s()))
    }

    /// Time derivative of the Doppler shift in Hz/s.
    pub fn doppler_rate(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        let tau = t - self.t_ca_s();
        let h = 1e-3;
        Ok((self.doppler_at_offset(tau + h) - self.doppler_at_offset(tau - h)) / (2.0 * h))
    }

    /// Slant range as a function of the offset from closest approach. Defined
    /// for any offset; outside the pass it continues below the horizon.
    pub(crate) fn range_at_offset(&self, tau: f64) -> f64 {
        let r = self.orbit.radius_m();
        let cos_gamma = self.min_central_angle().cos() * (self.angular_rate() * tau).cos();
        (R_EARTH * R_EARTH + r * r - 2.0 * R_EARTH * r * cos_gamma).sqrt()
    }

    pub(crate) fn doppler_at_offset(&self, tau: f64) -> f64 {
        DopplerShape::new(self).eval(tau)
    }
}

/// Precomputed constants for evaluating a pass' Doppler many times.
#[derive(Debug, Clone, Copy)]
pub(crate) struct DopplerShape {
    cos_beta: f64,
    rate: f64,
    r: f64,
    scale: f64,
}

impl DopplerShape {
    pub fn new(pass: &PassGeometry) -> Self {
        let r = pass.orbit.radius_m();
        let cos_beta = pass.min_central_angle().cos();
        let rate = pass.angular_rate();
        Self {
            cos_beta,
            rate,
            r,
            scale: -pass.orbit.carrier_hz / SPEED_OF_LIGHT * R_EARTH * r * cos_beta * rate,
        }
    }

    #[inline]
    pub fn eval(&self, tau: f64) -> f64 {
        let (s, c) = (self.rate * tau).sin_cos();
        let d2 = R_EARTH * R_EARTH + self.r * self.r - 2.0 * R_EARTH * self.r * self.cos_beta * c;
        self.scale * s / d2.sqrt()
    }
}

/// Central angle β at which a satellite at radius `r` appears at elevation `el`.
pub(crate) fn central_angle_for_elevation(r: f64, el_rad: f64) -> f64 {
    ((R_EARTH / r) * el_rad.cos()).clamp(-1.0, 1.0).acos() - el_rad
}

/// Sampled Doppler-versus-time curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DopplerCurve {
    pub times_s: Vec<f64>,
    pub doppler_hz: Vec<f64>,
}

impl DopplerCurve {
    pub fn new(times_s: Vec<f64>, doppler_hz: Vec<f64>) -> Result<Self> {
        if times_s.len() != doppler_hz.len() {
            return Err(Error::invalid(format!(
                "curve has {} times but {} Doppler values",
                times_s.len(),
                doppler_hz.len()
            )));
        }
        if times_s.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("curve times must be strictly increasing"));
        }
        if times_s.iter().chain(&doppler_hz).any(|v| !v.is_finite()) {
            return Err(Error::invalid("curve contains non-finite values"));
        }
        Ok(Self { times_s, doppler_hz })
    }

    pub fn empty() -> Self {
        Self {
            times_s: Vec::new(),
            doppler_hz: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.times_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times_s.is_empty()
    }

    pub fn span_s(&self) -> f64 {
        match (self.times_s.first(), self.times_s.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.times_s.iter().copied().zip(self.doppler_hz.iter().copied())
    }
}

/// Samples the pass Doppler at `t_start, t_start + period, …` up to the end
/// of the pass.
pub fn emulate_doppler_curve(pass: &PassGeometry, sample_period_s: f64) -> Result<DopplerCurve> {
    if !(sample_period_s > 0.0) {
        return Err(Error::invalid("sample_period_s must be positive"));
    }
    let n = (pass.duration_s() / sample_period_s + 1e-9).floor() as usize + 1;
    let shape = DopplerShape::new(pass);
    let t_ca = pass.t_ca_s();
    let times: Vec<f64> = (0..n)
        .map(|k| pass.t_start_s + k as f64 * sample_period_s)
        .collect();
    let doppler = times.iter().map(|&t| shape.eval(t - t_ca)).collect();
    DopplerCurve::new(times, doppler)
}

fn check_range(what: &'static str, value: f64, min: f64, max: f64) -> Result<()> {
    if value.is_finite() && value >= min && value <= max {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            what,
            value,
            min,
            max,
        })
    }
}
