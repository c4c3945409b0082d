//! Satellite channel impairments: AWGN at a prescribed in-band SNR, the
//! time-varying Doppler of a pass, and the link budget that maps slant range
//! to SNR.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::orbit::{path_loss_db, PassGeometry};
use crate::phy::IqBuffer;
use crate::{Cplx, Error, Result, SPEED_OF_LIGHT};

/// Boltzmann noise density at 290 K, dBm/Hz.
pub const THERMAL_NOISE_DBM_PER_HZ: f64 = -174.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelConfig {
    /// In-band SNR at the receiver, over the occupied bandwidth.
    pub snr_db: f64,
    pub pass: PassGeometry,
    /// Packet start, seconds into the pass.
    pub packet_start_s: f64,
    pub seed: u64,
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return Err(Error::invalid("snr_db must be finite or +inf"));
        }
        if !(self.packet_start_s >= 0.0 && self.packet_start_s <= self.pass.duration_s()) {
            return Err(Error::OutOfRange {
                what: "packet_start_s",
                value: self.packet_start_s,
                min: 0.0,
                max: self.pass.duration_s(),
            });
        }
        Ok(())
    }

    /// Absolute time of the packet start.
    pub fn packet_time_s(&self) -> f64 {
        self.pass.t_start_s + self.packet_start_s
    }
}

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Adds circularly-symmetric complex Gaussian noise so that the SNR over
/// `occupied_bw_hz` equals `snr_db`. Signal power is measured over the
/// buffer. `snr_db = +inf` returns the input unchanged.
pub fn apply_awgn(iq: &IqBuffer, snr_db: f64, occupied_bw_hz: f64, seed: u64) -> Result<IqBuffer> {
    let mut out = iq.clone();
    add_awgn_in_place(&mut out.samples, iq.sample_rate_hz, snr_db, occupied_bw_hz, seed)?;
    Ok(out)
}

pub(crate) fn add_awgn_in_place(
    samples: &mut [Cplx],
    sample_rate_hz: f64,
    snr_db: f64,
    occupied_bw_hz: f64,
    seed: u64,
) -> Result<()> {
    if snr_db == f64::INFINITY {
        return Ok(());
    }
    if !snr_db.is_finite() {
        return Err(Error::invalid("snr_db must be finite or +inf"));
    }
    if !(occupied_bw_hz > 0.0 && occupied_bw_hz <= sample_rate_hz) {
        return Err(Error::invalid("occupied bandwidth must lie in (0, sample rate]"));
    }
    let signal_power = crate::phy::mean_power(samples);
    if !(signal_power > 0.0) {
        return Err(Error::Precondition("signal power must be positive".into()));
    }
    let noise_power = noise_power_for(signal_power, snr_db, sample_rate_hz / occupied_bw_hz);
    add_noise(samples, noise_power, &mut rng(seed));
    Ok(())
}

/// Total per-sample noise variance that gives `snr_db` in a band `1/ratio`
/// of the sample rate.
pub(crate) fn noise_power_for(signal_power: f64, snr_db: f64, oversampling: f64) -> f64 {
    signal_power * oversampling / 10f64.powf(snr_db / 10.0)
}

pub(crate) fn add_noise(samples: &mut [Cplx], noise_power: f64, rng: &mut ChaCha8Rng) {
    let sigma = (noise_power / 2.0).sqrt();
    for z in samples.iter_mut() {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        *z += Cplx::new(sigma * re, sigma * im);
    }
}

/// Pure-noise buffer of unit in-band noise power.
pub fn noise_buffer(len: usize, sample_rate_hz: f64, occupied_bw_hz: f64, seed: u64) -> Result<IqBuffer> {
    let mut samples = vec![Cplx::new(0.0, 0.0); len];
    add_noise(&mut samples, sample_rate_hz / occupied_bw_hz, &mut rng(seed));
    IqBuffer::new(samples, sample_rate_hz)
}

/// Rotates the buffer by a constant frequency offset.
pub fn apply_frequency_offset(iq: &IqBuffer, offset_hz: f64) -> IqBuffer {
    let mut out = iq.clone();
    rotate_in_place(&mut out.samples, iq.sample_rate_hz, offset_hz, 0.0);
    out
}

pub(crate) fn rotate_in_place(samples: &mut [Cplx], fs: f64, offset_hz: f64, phase0: f64) {
    if offset_hz == 0.0 && phase0 == 0.0 {
        return;
    }
    let step = 2.0 * std::f64::consts::PI * offset_hz / fs;
    for (i, z) in samples.iter_mut().enumerate() {
        *z *= Cplx::from_polar(1.0, phase0 + step * i as f64);
    }
}

/// Applies the pass Doppler to a buffer whose first sample is emitted
/// `packet_start_s` seconds into the pass. The phase is the exact integral
/// of the instantaneous Doppler, `-f_c/c · (range(t) - range(t0))`.
pub fn apply_doppler_track(iq: &IqBuffer, pass: &PassGeometry, packet_start_s: f64) -> Result<IqBuffer> {
    let mut out = iq.clone();
    doppler_track_in_place(&mut out.samples, iq.sample_rate_hz, pass, packet_start_s, 0.0)?;
    Ok(out)
}

/// Same as [`apply_doppler_track`] but also removes a constant
/// `correction_hz`, as a receiver locked to the preamble would.
pub(crate) fn doppler_track_in_place(
    samples: &mut [Cplx],
    fs: f64,
    pass: &PassGeometry,
    packet_start_s: f64,
    correction_hz: f64,
) -> Result<()> {
    let t0 = pass.t_start_s + packet_start_s;
    let t1 = t0 + samples.len() as f64 / fs;
    if !pass.contains(t0) || !pass.contains(t1) {
        return Err(Error::OutOfRange {
            what: "packet time",
            value: if pass.contains(t0) { t1 } else { t0 },
            min: pass.t_start_s,
            max: pass.t_end_s(),
        });
    }
    let k = -pass.orbit.carrier_hz / SPEED_OF_LIGHT;
    let tau0 = t0 - pass.t_ca_s();
    let r0 = pass.range_at_offset(tau0);
    let two_pi = 2.0 * std::f64::consts::PI;
    for (i, z) in samples.iter_mut().enumerate() {
        let dt = i as f64 / fs;
        let cycles = k * (pass.range_at_offset(tau0 + dt) - r0) - correction_hz * dt;
        *z *= Cplx::from_polar(1.0, two_pi * cycles.rem_euclid(1.0));
    }
    Ok(())
}

/// Mean Doppler over `[t, t + duration]` of the pass.
pub fn mean_doppler(pass: &PassGeometry, t: f64, duration_s: f64) -> f64 {
    let k = -pass.orbit.carrier_hz / SPEED_OF_LIGHT;
    let tau = t - pass.t_ca_s();
    k * (pass.range_at_offset(tau + duration_s) - pass.range_at_offset(tau)) / duration_s
}

/// Receiver-side link budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    pub tx_power_dbm: f64,
    /// Net receive antenna and LNA gain.
    pub rx_gain_db: f64,
    pub noise_figure_db: f64,
    /// Polarisation mismatch from tumbling, pointing and cable losses.
    pub system_loss_db: f64,
    pub bandwidth_hz: f64,
}

impl Default for LinkBudget {
    /// +27 dBm into a 62.5 kHz receiver; the losses put the pass-average SNR
    /// of a 525 km overhead pass near −10 dB.
    fn default() -> Self {
        Self {
            tx_power_dbm: 27.0,
            rx_gain_db: 0.0,
            noise_figure_db: 6.0,
            system_loss_db: 3.5,
            bandwidth_hz: 62_500.0,
        }
    }
}

impl LinkBudget {
    pub fn received_power_dbm(&self, range_m: f64, carrier_hz: f64) -> f64 {
        self.tx_power_dbm - path_loss_db(range_m, carrier_hz) + self.rx_gain_db - self.system_loss_db
    }

    pub fn noise_floor_dbm(&self) -> f64 {
        THERMAL_NOISE_DBM_PER_HZ + 10.0 * self.bandwidth_hz.log10() + self.noise_figure_db
    }

    pub fn snr_db(&self, range_m: f64, carrier_hz: f64) -> f64 {
        self.received_power_dbm(range_m, carrier_hz) - self.noise_floor_dbm()
    }

    /// SNR at time `t` of a pass.
    pub fn pass_snr_db(&self, pass: &PassGeometry, t: f64) -> Result<f64> {
        Ok(self.snr_db(pass.slant_range(t)?, pass.orbit.carrier_hz))
    }
}

/// `tx − FSPL + gain − (kTB + NF)` over bandwidth `bw_hz`.
pub fn attenuation_to_snr(
    tx_dbm: f64,
    range_m: f64,
    carrier_hz: f64,
    rx_noise_figure_db: f64,
    rx_gain_db: f64,
    bw_hz: f64,
) -> Result<f64> {
    if !(range_m > 0.0) {
        return Err(Error::invalid("range must be positive"));
    }
    let budget = LinkBudget {
        tx_power_dbm: tx_dbm,
        rx_gain_db,
        noise_figure_db: rx_noise_figure_db,
        system_loss_db: 0.0,
        bandwidth_hz: bw_hz,
    };
    Ok(budget.snr_db(range_m, carrier_hz))
}
