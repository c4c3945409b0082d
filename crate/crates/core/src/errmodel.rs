//! Symbol and bit error characterization.
//!
//! A packet is pushed through modulation, the pass Doppler track and AWGN,
//! then demodulated at known timing. The receiver is assumed to have locked
//! onto the mean Doppler of the preamble, so what remains is the drift that
//! accumulates over the packet. Each payload symbol's outcome is recorded in
//! an [`ErrorTrace`]; traces are summarized as bin-offset and per-bit flip
//! statistics and turned into [`BitMask`]s for training the image codec.
//!
//! Two error mechanisms show up. Noise scatters a wrong decision uniformly
//! over all other bins. Drift moves the tone by a fraction of a bin per
//! symbol, so errors land on neighbouring bins and flip mostly the low bits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::channel::{add_noise, doppler_track_in_place, mean_doppler, noise_power_for, ChannelConfig};
use crate::detect::{detection_statistic, CorrelatorConfig, DEFAULT_THRESHOLD};
use crate::io::nonfinite;
use crate::orbit::PassGeometry;
use crate::phy::{bin_to_bits, modulate_packet, Demodulator, IqBuffer, LoRaParams, PacketFrame};
use crate::{Cplx, Error, Result};

/// Minimum number of symbol outcomes for the distribution statistics.
pub const MIN_SYMBOLS: usize = 10_000;

/// Significance level of the goodness-of-fit tests.
pub const SIGNIFICANCE: f64 = 0.05;

/// Expected count below which chi-square bins are pooled.
const MIN_EXPECTED: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DopplerModel {
    /// No frequency impairment.
    Off,
    /// The pass Doppler track, preamble-corrected.
    Pass { pass: PassGeometry, packet_start_s: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacketSimConfig {
    /// In-band SNR; `+inf` disables noise.
    #[serde(with = "nonfinite")]
    pub snr_db: f64,
    pub doppler: DopplerModel,
    pub seed: u64,
    /// Narrowband detection threshold used to flag lost packets.
    pub detection_threshold: f64,
}

impl PacketSimConfig {
    pub fn new(snr_db: f64, doppler: DopplerModel, seed: u64) -> Self {
        Self {
            snr_db,
            doppler,
            seed,
            detection_threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl From<&ChannelConfig> for PacketSimConfig {
    fn from(c: &ChannelConfig) -> Self {
        Self::new(
            c.snr_db,
            DopplerModel::Pass {
                pass: c.pass,
                packet_start_s: c.packet_start_s,
            },
            c.seed,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymbolOutcome {
    pub symbol_index: usize,
    pub true_bin: usize,
    pub decoded_bin: usize,
    /// `decoded − true` wrapped to `(−N/2, N/2]`.
    pub offset: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub params: LoRaParams,
    pub payload_len: usize,
    #[serde(with = "nonfinite")]
    pub snr_db: f64,
    pub doppler: DopplerModel,
    /// Constant frequency removed by the preamble lock.
    pub preamble_correction_hz: f64,
    pub seed: u64,
    /// Whether the preamble cleared the detection threshold. Outcomes are
    /// recorded either way.
    pub detected: bool,
    #[serde(with = "nonfinite")]
    pub detection_ratio: f64,
}

/// Per-symbol outcomes of the payload of one packet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorTrace {
    pub header: TraceHeader,
    pub symbols: Vec<SymbolOutcome>,
}

pub(crate) fn signed_offset(true_bin: usize, decoded_bin: usize, n: usize) -> i64 {
    let d = (decoded_bin as i64 - true_bin as i64).rem_euclid(n as i64);
    if d > n as i64 / 2 {
        d - n as i64
    } else {
        d
    }
}

impl ErrorTrace {
    pub fn symbol_errors(&self) -> usize {
        self.symbols.iter().filter(|s| s.offset != 0).count()
    }

    /// Flip pattern over the payload bits: `bits(true) XOR bits(decoded)`
    /// per symbol, concatenated and cut to `8·payload_len` bits.
    pub fn bit_mask(&self) -> BitMask {
        let sf = self.header.params.sf;
        let mut flips = Vec::with_capacity(self.symbols.len() * sf as usize);
        for s in &self.symbols {
            let x = s.true_bin ^ s.decoded_bin;
            flips.extend((0..sf).rev().map(|b| (x >> b) & 1 == 1));
        }
        flips.truncate(8 * self.header.payload_len);
        BitMask {
            flips,
            trace_seed: Some(self.header.seed),
        }
    }
}

/// One packet as received: `lead` noise-only samples, the packet with the
/// uncorrected pass Doppler, then `tail` noise-only samples.
#[derive(Debug, Clone, PartialEq)]
pub struct PacketCapture {
    pub iq: IqBuffer,
    /// First preamble sample.
    pub packet_start_index: usize,
    /// Mean Doppler over the preamble, the constant a preamble-locked
    /// receiver removes.
    pub preamble_correction_hz: f64,
}

/// Modulates `payload` and applies the configured Doppler and noise. The
/// signal has unit power, so `snr_db` fixes the noise level of the padding too.
pub fn capture_packet(
    cfg: &PacketSimConfig,
    params: &LoRaParams,
    payload: &[u8],
    lead: usize,
    tail: usize,
) -> Result<PacketCapture> {
    if cfg.snr_db.is_nan() || cfg.snr_db == f64::NEG_INFINITY {
        return Err(Error::invalid("snr_db must be finite or +inf"));
    }
    let frame = PacketFrame::new(payload.to_vec(), *params)?;
    let packet = modulate_packet(&frame)?;
    let fs = params.sample_rate_hz;
    let mut samples = vec![Cplx::new(0.0, 0.0); lead];
    samples.extend(packet.samples);

    let mut correction = 0.0;
    if let DopplerModel::Pass { pass, packet_start_s } = cfg.doppler {
        let t0 = pass.t_start_s + packet_start_s;
        let preamble_s = params.preamble_len as f64 * params.symbol_duration_s();
        if !pass.contains(t0) || !pass.contains(t0 + preamble_s) {
            return Err(Error::OutOfRange {
                what: "packet_start_s",
                value: packet_start_s,
                min: 0.0,
                max: pass.duration_s(),
            });
        }
        correction = mean_doppler(&pass, t0, preamble_s);
        doppler_track_in_place(&mut samples[lead..], fs, &pass, packet_start_s, 0.0)?;
    }
    samples.resize(samples.len() + tail, Cplx::new(0.0, 0.0));
    if cfg.snr_db.is_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        add_noise(&mut samples, noise_power_for(1.0, cfg.snr_db, params.oversampling() as f64), &mut rng);
    }
    Ok(PacketCapture {
        iq: IqBuffer::new(samples, fs)?,
        packet_start_index: lead,
        preamble_correction_hz: correction,
    })
}

/// Demodulates the payload of a capture at known timing, removing the
/// preamble correction, and flags whether the narrowband detector would have
/// seen the packet at all.
pub fn trace_from_capture(
    cfg: &PacketSimConfig,
    params: &LoRaParams,
    payload: &[u8],
    capture: &PacketCapture,
) -> Result<ErrorTrace> {
    let frame = PacketFrame::new(payload.to_vec(), *params)?;
    let ratio = detection_statistic(&capture.iq, &CorrelatorConfig::narrowband(*params))?;
    let demod = Demodulator::new(params)?;
    let true_bins = &frame.symbols()[params.header_symbols()..];
    let offset = capture.packet_start_index + params.header_symbols() * params.samples_per_symbol();
    let correction = capture.preamble_correction_hz;
    let decisions = demod.symbols(&capture.iq.samples, offset, true_bins.len(), |_| correction)?;
    let n = params.n_bins();
    let symbols = true_bins
        .iter()
        .zip(&decisions)
        .enumerate()
        .map(|(i, (&t, d))| SymbolOutcome {
            symbol_index: i,
            true_bin: t,
            decoded_bin: d.bin,
            offset: signed_offset(t, d.bin, n),
        })
        .collect();
    Ok(ErrorTrace {
        header: TraceHeader {
            params: *params,
            payload_len: payload.len(),
            snr_db: cfg.snr_db,
            doppler: cfg.doppler,
            preamble_correction_hz: correction,
            seed: cfg.seed,
            detected: ratio >= cfg.detection_threshold,
            detection_ratio: ratio,
        },
        symbols,
    })
}

/// Modulates `payload`, applies the configured impairments and demodulates
/// the payload symbols at known timing.
pub fn simulate_packet_errors(cfg: &PacketSimConfig, params: &LoRaParams, payload: &[u8]) -> Result<ErrorTrace> {
    let capture = capture_packet(cfg, params, payload, 0, 0)?;
    trace_from_capture(cfg, params, payload, &capture)
}

/// Random payload of `len` bytes drawn from `seed`.
pub fn random_payload(len: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random()).collect()
}

fn check_traces(traces: &[ErrorTrace]) -> Result<(u8, usize)> {
    let sf = traces
        .first()
        .map(|t| t.header.params.sf)
        .ok_or(Error::InsufficientData { needed: MIN_SYMBOLS, got: 0 })?;
    if traces.iter().any(|t| t.header.params.sf != sf) {
        return Err(Error::invalid("traces mix spreading factors"));
    }
    let total: usize = traces.iter().map(|t| t.symbols.len()).sum();
    if total < MIN_SYMBOLS {
        return Err(Error::InsufficientData {
            needed: MIN_SYMBOLS,
            got: total,
        });
    }
    Ok((sf, total))
}

/// Geometric fit `P(k) = (1 − q)·q^(k−1)`, `k ≥ 1`, to the nonzero |offsets|.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentialFit {
    /// Decay rate `λ = −ln q` per bin.
    pub rate: f64,
    pub chi_square: f64,
    pub dof: usize,
    /// Absent when too few bins survive pooling to test anything.
    pub p_value: Option<f64>,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetDistribution {
    pub sf: u8,
    pub total: usize,
    /// `counts[k]` symbols had `|offset| = k`, for `k = 0..=N/2`.
    pub counts: Vec<u64>,
    /// Errors with a positive offset.
    pub positive: u64,
    pub exponential: Option<ExponentialFit>,
    /// Chi-square p-value against offsets uniform over the other `N − 1` bins.
    pub uniform_p_value: Option<f64>,
}

impl OffsetDistribution {
    pub fn errors(&self) -> u64 {
        self.counts[1..].iter().sum()
    }

    pub fn symbol_error_rate(&self) -> f64 {
        self.errors() as f64 / self.total as f64
    }

    /// Empirical `P(|offset| = k)`.
    pub fn probabilities(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64 / self.total as f64).collect()
    }

    /// Empirical fraction of errors with a positive offset; ½ without errors.
    pub fn positive_fraction(&self) -> f64 {
        match self.errors() {
            0 => 0.5,
            e => self.positive as f64 / e as f64,
        }
    }
}

/// Pools `(observed, expected)` bins left to right until every bin expects
/// at least [`MIN_EXPECTED`]; a short remainder joins the last bin.
fn pool(bins: impl IntoIterator<Item = (f64, f64)>) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    let mut acc = (0.0, 0.0);
    for (o, e) in bins {
        acc.0 += o;
        acc.1 += e;
        if acc.1 >= MIN_EXPECTED {
            out.push(acc);
            acc = (0.0, 0.0);
        }
    }
    if acc.1 > 0.0 || acc.0 > 0.0 {
        match out.last_mut() {
            Some(last) => {
                last.0 += acc.0;
                last.1 += acc.1;
            }
            None => out.push(acc),
        }
    }
    out
}

fn chi_square(bins: &[(f64, f64)]) -> f64 {
    bins.iter().map(|&(o, e)| (o - e) * (o - e) / e).sum()
}

fn p_value(stat: f64, dof: usize) -> Option<f64> {
    (dof >= 1).then(|| ChiSquared::new(dof as f64).map(|d| d.sf(stat)).unwrap_or(f64::NAN))
}

fn fit_exponential(counts: &[u64]) -> Option<ExponentialFit> {
    let n: u64 = counts[1..].iter().sum();
    if n == 0 {
        return None;
    }
    let mean = counts.iter().enumerate().map(|(k, &c)| k as f64 * c as f64).sum::<f64>() / n as f64;
    let q = 1.0 - 1.0 / mean;
    let nf = n as f64;
    // expected counts for k = 1..K−1, then everything from K on (including
    // mass the geometric puts beyond the largest possible offset)
    let k_max = counts.len() - 1;
    let mut bins: Vec<(f64, f64)> = (1..k_max)
        .map(|k| (counts[k] as f64, nf * (1.0 - q) * q.powi(k as i32 - 1)))
        .collect();
    bins.push((counts[k_max] as f64, nf * q.powi(k_max as i32 - 1)));
    let pooled = pool(bins);
    let stat = chi_square(&pooled);
    let dof = pooled.len().saturating_sub(2);
    let p = p_value(stat, dof);
    Some(ExponentialFit {
        rate: if q > 0.0 { -q.ln() } else { f64::INFINITY },
        chi_square: stat,
        dof,
        p_value: p,
        accepted: p.is_some_and(|p| p >= SIGNIFICANCE),
    })
}

fn uniform_test(counts: &[u64]) -> Option<f64> {
    let n: u64 = counts[1..].iter().sum();
    if n == 0 {
        return None;
    }
    let k_max = counts.len() - 1;
    let others = (2 * k_max - 1) as f64;
    let bins = (1..=k_max).map(|k| {
        let ways = if k == k_max { 1.0 } else { 2.0 };
        (counts[k] as f64, n as f64 * ways / others)
    });
    let pooled = pool(bins);
    p_value(chi_square(&pooled), pooled.len().saturating_sub(1))
}

/// Empirical |offset| table with an exponential fit over `k ≥ 1` and a
/// uniformity test.
pub fn fit_bin_offset_distribution(traces: &[ErrorTrace]) -> Result<OffsetDistribution> {
    let (sf, total) = check_traces(traces)?;
    let n = 1usize << sf;
    let mut counts = vec![0u64; n / 2 + 1];
    let mut positive = 0;
    for s in traces.iter().flat_map(|t| &t.symbols) {
        counts[s.offset.unsigned_abs() as usize] += 1;
        positive += (s.offset > 0) as u64;
    }
    Ok(OffsetDistribution {
        sf,
        total,
        exponential: fit_exponential(&counts),
        uniform_p_value: uniform_test(&counts),
        counts,
        positive,
    })
}

/// Flip probability of each bit position within a symbol, MSB first.
pub fn bit_flip_probabilities(traces: &[ErrorTrace]) -> Result<Vec<f64>> {
    let (sf, total) = check_traces(traces)?;
    let mut flips = vec![0u64; sf as usize];
    for s in traces.iter().flat_map(|t| &t.symbols) {
        let x = s.true_bin ^ s.decoded_bin;
        for (pos, f) in flips.iter_mut().enumerate() {
            *f += ((x >> (sf as usize - 1 - pos)) & 1) as u64;
        }
    }
    Ok(flips.into_iter().map(|f| f as f64 / total as f64).collect())
}

/// Distribution of the signed bin offset of one symbol, independent of its
/// position in the packet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetModel {
    pub sf: u8,
    /// `pmf[i]` is the probability of offset `i − (N/2 − 1)`, covering
    /// `(−N/2, N/2]`.
    pub pmf: Vec<f64>,
}

impl OffsetModel {
    fn zero(sf: u8) -> Self {
        let n = 1usize << sf;
        let mut pmf = vec![0.0; n];
        pmf[n / 2 - 1] = 1.0;
        Self { sf, pmf }
    }

    fn half(&self) -> i64 {
        (self.pmf.len() / 2) as i64
    }

    pub fn probability(&self, offset: i64) -> f64 {
        let i = offset + self.half() - 1;
        if (0..self.pmf.len() as i64).contains(&i) {
            self.pmf[i as usize]
        } else {
            0.0
        }
    }

    fn set(&mut self, offset: i64, p: f64) {
        let i = (offset + self.half() - 1) as usize;
        self.pmf[i] = p;
    }

    fn renormalize_zero(mut self) -> Result<Self> {
        let h = self.half();
        let errors: f64 = (-h + 1..=h).filter(|&o| o != 0).map(|o| self.probability(o)).sum();
        if !(0.0..=1.0).contains(&errors) {
            return Err(Error::invalid(format!("error probability {errors} outside [0, 1]")));
        }
        self.set(0, 1.0 - errors);
        Ok(self)
    }

    /// The empirical signed offsets of a trace collection.
    pub fn empirical(traces: &[ErrorTrace]) -> Result<Self> {
        let (sf, total) = check_traces(traces)?;
        let mut m = Self::zero(sf);
        m.pmf.iter_mut().for_each(|p| *p = 0.0);
        for s in traces.iter().flat_map(|t| &t.symbols) {
            let i = (s.offset + m.half() - 1) as usize;
            m.pmf[i] += 1.0 / total as f64;
        }
        Ok(m)
    }

    /// Noise component: an error with probability `ser`, uniform over the
    /// other bins.
    pub fn uniform(sf: u8, ser: f64) -> Result<Self> {
        let mut m = Self::zero(sf);
        let h = m.half();
        let each = ser / (m.pmf.len() - 1) as f64;
        for o in (-h + 1..=h).filter(|&o| o != 0) {
            m.set(o, each);
        }
        m.renormalize_zero()
    }

    /// Drift component: an error with probability `ser`, geometric in
    /// `|offset|` with decay `rate`, positive with probability `p_positive`.
    /// Mass beyond `N/2` is folded back by renormalization.
    pub fn exponential(sf: u8, ser: f64, rate: f64, p_positive: f64) -> Result<Self> {
        if !(rate > 0.0) || !(0.0..=1.0).contains(&p_positive) {
            return Err(Error::invalid("rate must be positive and p_positive in [0, 1]"));
        }
        let mut m = Self::zero(sf);
        let h = m.half();
        let q = (-rate).exp();
        let weights: Vec<f64> = (1..=h).map(|k| q.powi(k as i32 - 1)).collect();
        let norm: f64 = weights.iter().sum();
        for (k, w) in (1..=h).zip(&weights) {
            let p = ser * w / norm;
            if k == h {
                m.set(k, p);
            } else {
                m.set(k, p * p_positive);
                m.set(-k, p * (1.0 - p_positive));
            }
        }
        m.renormalize_zero()
    }

    /// Parametric model from a fitted distribution: the exponential fit with
    /// the observed error rate and sign balance.
    pub fn from_fit(dist: &OffsetDistribution) -> Result<Self> {
        match dist.exponential {
            Some(fit) if fit.rate.is_finite() => Self::exponential(
                dist.sf,
                dist.symbol_error_rate(),
                fit.rate,
                dist.positive_fraction(),
            ),
            Some(_) => {
                let p = dist.positive_fraction();
                let mut m = Self::zero(dist.sf);
                m.set(1, dist.symbol_error_rate() * p);
                m.set(-1, dist.symbol_error_rate() * (1.0 - p));
                m.renormalize_zero()
            }
            None => Ok(Self::zero(dist.sf)),
        }
    }

    /// Superposes two independent error mechanisms: nonzero-offset
    /// probabilities add.
    pub fn superpose(&self, other: &Self) -> Result<Self> {
        if self.sf != other.sf {
            return Err(Error::invalid("cannot superpose models of different spreading factors"));
        }
        let mut m = Self::zero(self.sf);
        let h = m.half();
        for o in (-h + 1..=h).filter(|&o| o != 0) {
            m.set(o, self.probability(o) + other.probability(o));
        }
        m.renormalize_zero()
    }

    /// Exact per-bit flip probabilities, MSB first, for uniformly distributed
    /// transmitted bins.
    pub fn bit_flip_probabilities(&self) -> Vec<f64> {
        let n = self.pmf.len();
        let sf = self.sf as usize;
        let h = self.half();
        let mut out = vec![0.0; sf];
        for o in (-h + 1..=h).filter(|&o| o != 0) {
            let p = self.probability(o);
            if p == 0.0 {
                continue;
            }
            for t in 0..n {
                let d = (t as i64 + o).rem_euclid(n as i64) as usize;
                let x = t ^ d;
                for (pos, v) in out.iter_mut().enumerate() {
                    *v += p * ((x >> (sf - 1 - pos)) & 1) as f64 / n as f64;
                }
            }
        }
        out
    }

    fn sample(&self, rng: &mut impl Rng) -> i64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in self.pmf.iter().enumerate() {
            acc += p;
            if u < acc {
                return i as i64 - (self.half() - 1);
            }
        }
        0
    }
}

/// Per-payload-bit flip flags, in payload bit order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitMask {
    pub flips: Vec<bool>,
    /// Seed of the trace the mask was read from, if replayed.
    pub trace_seed: Option<u64>,
}

impl BitMask {
    pub fn len(&self) -> usize {
        self.flips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flips.is_empty()
    }

    pub fn flip_count(&self) -> usize {
        self.flips.iter().filter(|&&f| f).count()
    }
}

#[derive(Debug, Clone, Copy)]
pub enum MaskSource<'a> {
    /// Replay recorded traces, chaining several if one is too short.
    Traces(&'a [ErrorTrace]),
    /// Draw random symbols and offsets from a model.
    Model(&'a OffsetModel),
}

/// `count` masks of `payload_bits` flips each. Mask `i` depends only on
/// `(seed, i)`.
pub fn sample_bit_masks(source: MaskSource<'_>, payload_bits: usize, count: usize, seed: u64) -> Result<Vec<BitMask>> {
    match source {
        MaskSource::Traces(traces) => {
            if traces.is_empty() || traces.iter().all(|t| t.symbols.is_empty()) {
                return Err(Error::invalid("no traces to replay"));
            }
            let masks: Vec<BitMask> = traces.iter().map(ErrorTrace::bit_mask).collect();
            Ok((0..count)
                .into_par_iter()
                .map(|i| {
                    let mut rng = mask_rng(seed, i);
                    let first = rng.random_range(0..masks.len());
                    let mut flips = Vec::with_capacity(payload_bits);
                    let mut pick = first;
                    while flips.len() < payload_bits {
                        flips.extend_from_slice(&masks[pick].flips);
                        pick = rng.random_range(0..masks.len());
                    }
                    flips.truncate(payload_bits);
                    BitMask {
                        flips,
                        trace_seed: masks[first].trace_seed,
                    }
                })
                .collect())
        }
        MaskSource::Model(model) => {
            let sf = model.sf;
            let n = 1usize << sf;
            let symbols = payload_bits.div_ceil(sf as usize);
            (0..count)
                .into_par_iter()
                .map(|i| {
                    let mut rng = mask_rng(seed, i);
                    let mut flips = Vec::with_capacity(symbols * sf as usize);
                    for _ in 0..symbols {
                        let t = rng.random_range(0..n);
                        let d = (t as i64 + model.sample(&mut rng)).rem_euclid(n as i64) as usize;
                        flips.extend(bin_to_bits(t ^ d, sf)?);
                    }
                    flips.truncate(payload_bits);
                    Ok(BitMask {
                        flips,
                        trace_seed: None,
                    })
                })
                .collect()
        }
    }
}

fn mask_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Per-bit-position flip rate of a mask collection, for positions within
/// `sf`-bit symbols, MSB first.
pub fn mask_flip_rates(masks: &[BitMask], sf: u8) -> Vec<f64> {
    let sf = sf as usize;
    let mut flips = vec![0u64; sf];
    let mut seen = vec![0u64; sf];
    for m in masks {
        for (i, &f) in m.flips.iter().enumerate() {
            flips[i % sf] += f as u64;
            seen[i % sf] += 1;
        }
    }
    flips
        .iter()
        .zip(&seen)
        .map(|(&f, &s)| if s == 0 { 0.0 } else { f as f64 / s as f64 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orbit::OrbitParams;

    fn params() -> LoRaParams {
        LoRaParams::default().with_oversampling(1)
    }

    fn trace_from(offsets: &[i64], sf: u8) -> ErrorTrace {
        let n = 1i64 << sf;
        ErrorTrace {
            header: TraceHeader {
                params: LoRaParams { sf, ..params() },
                payload_len: offsets.len() * sf as usize / 8,
                snr_db: 0.0,
                doppler: DopplerModel::Off,
                preamble_correction_hz: 0.0,
                seed: 0,
                detected: true,
                detection_ratio: 10.0,
            },
            symbols: offsets
                .iter()
                .enumerate()
                .map(|(i, &o)| {
                    let t = (i * 37) % n as usize;
                    let d = (t as i64 + o).rem_euclid(n) as usize;
                    SymbolOutcome {
                        symbol_index: i,
                        true_bin: t,
                        decoded_bin: d,
                        offset: signed_offset(t, d, n as usize),
                    }
                })
                .collect(),
        }
    }

    #[test]
    fn clean_channel_has_no_errors() {
        let cfg = PacketSimConfig::new(f64::INFINITY, DopplerModel::Off, 3);
        let t = simulate_packet_errors(&cfg, &params(), &random_payload(64, 1)).unwrap();
        assert_eq!(t.symbols.len(), 64);
        assert_eq!(t.symbol_errors(), 0);
        assert!(t.header.detected);
        assert!(t.bit_mask().flips.iter().all(|f| !f));
    }

    #[test]
    fn zenith_drift_grows_along_the_packet() {
        let pass = PassGeometry::new(OrbitParams::reference(), 90.0, 0.0).unwrap();
        let start = 0.5 * pass.duration_s() - 0.5;
        let cfg = PacketSimConfig::new(
            f64::INFINITY,
            DopplerModel::Pass {
                pass,
                packet_start_s: start,
            },
            1,
        );
        let t = simulate_packet_errors(&cfg, &params(), &random_payload(256, 2)).unwrap();
        let n = t.symbols.len();
        let head: i64 = t.symbols[..n / 4].iter().map(|s| s.offset.abs()).sum();
        let tail: i64 = t.symbols[3 * n / 4..].iter().map(|s| s.offset.abs()).sum();
        assert!(tail > head, "head {head} tail {tail}");
        let last = t.symbols.last().unwrap().offset.abs();
        assert!((1..=2).contains(&last), "last offset {last}");
    }

    #[test]
    fn preamble_lock_removes_large_doppler() {
        let pass = PassGeometry::new(OrbitParams::reference(), 30.0, 0.0).unwrap();
        let cfg = PacketSimConfig::new(
            f64::INFINITY,
            DopplerModel::Pass {
                pass,
                packet_start_s: 20.0,
            },
            1,
        );
        let cap = capture_packet(&cfg, &params(), &random_payload(64, 2), 500, 500).unwrap();
        assert!(cap.preamble_correction_hz > 10e3, "{}", cap.preamble_correction_hz);
        let t = trace_from_capture(&cfg, &params(), &random_payload(64, 2), &cap).unwrap();
        assert_eq!(t.symbol_errors(), 0);
        assert!(t.header.detected);
    }

    #[test]
    fn signed_offset_wraps() {
        assert_eq!(signed_offset(255, 0, 256), 1);
        assert_eq!(signed_offset(0, 255, 256), -1);
        assert_eq!(signed_offset(0, 128, 256), 128);
        assert_eq!(signed_offset(10, 10, 256), 0);
    }

    #[test]
    fn statistics_need_enough_symbols() {
        let t = trace_from(&[0; 100], 8);
        assert!(matches!(
            fit_bin_offset_distribution(&[t.clone()]),
            Err(Error::InsufficientData { .. })
        ));
        assert!(bit_flip_probabilities(&[t]).is_err());
    }

    #[test]
    fn error_free_traces_are_a_point_mass() {
        let t = trace_from(&vec![0; MIN_SYMBOLS], 8);
        let d = fit_bin_offset_distribution(&[t.clone()]).unwrap();
        assert_eq!(d.counts[0], MIN_SYMBOLS as u64);
        assert_eq!(d.errors(), 0);
        assert!(d.exponential.is_none());
        assert!(bit_flip_probabilities(&[t]).unwrap().iter().all(|&p| p == 0.0));
    }

    #[test]
    fn geometric_offsets_pass_and_uniform_offsets_fail_the_exponential_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q: f64 = 0.3;
        let geometric: Vec<i64> = (0..40_000)
            .map(|_| {
                if rng.random::<f64>() < 0.9 {
                    return 0;
                }
                let u: f64 = rng.random();
                let k = 1 + (u.ln() / q.ln()).floor() as i64;
                if rng.random() { k } else { -k }
            })
            .collect();
        let d = fit_bin_offset_distribution(&[trace_from(&geometric, 8)]).unwrap();
        let fit = d.exponential.unwrap();
        assert!(fit.accepted, "{fit:?}");
        assert!((fit.rate - -q.ln()).abs() < 0.1, "{fit:?}");
        assert!(d.uniform_p_value.unwrap() < SIGNIFICANCE);

        let uniform: Vec<i64> = (0..40_000)
            .map(|_| {
                if rng.random::<f64>() < 0.9 {
                    0
                } else {
                    signed_offset(0, rng.random_range(1..256), 256)
                }
            })
            .collect();
        let d = fit_bin_offset_distribution(&[trace_from(&uniform, 8)]).unwrap();
        assert!(!d.exponential.unwrap().accepted);
        assert!(d.uniform_p_value.unwrap() > 0.001);
    }

    #[test]
    fn model_flip_rates_match_closed_forms() {
        // uniform errors flip each bit with probability N/(2(N−1))·SER
        let m = OffsetModel::uniform(8, 0.01).unwrap();
        for p in m.bit_flip_probabilities() {
            assert!((p - 0.01 * 256.0 / 510.0).abs() < 1e-12);
        }
        // ±1 offsets always flip the LSB, bit b with probability 2^-b
        let m = OffsetModel::exponential(8, 0.2, 50.0, 0.5).unwrap();
        let p = m.bit_flip_probabilities();
        assert!((p[7] - 0.2).abs() < 1e-9);
        assert!((p[6] - 0.1).abs() < 1e-9);
        assert!((p[0] - 0.2 / 128.0).abs() < 1e-9);
    }

    #[test]
    fn masks_are_deterministic_and_sized() {
        let m = OffsetModel::exponential(8, 0.05, 1.0, 0.7).unwrap();
        let a = sample_bit_masks(MaskSource::Model(&m), 2048, 20, 9).unwrap();
        let b = sample_bit_masks(MaskSource::Model(&m), 2048, 20, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|x| x.len() == 2048));
        assert!(sample_bit_masks(MaskSource::Model(&m), 2048, 0, 9).unwrap().is_empty());

        let t = trace_from(&[0, 1, 0, -2, 0, 0, 3, 0], 8);
        let r = sample_bit_masks(MaskSource::Traces(std::slice::from_ref(&t)), 100, 3, 1).unwrap();
        assert!(r.iter().all(|x| x.len() == 100));
        assert_eq!(&r[0].flips[..64], &t.bit_mask().flips[..]);
    }

    #[test]
    fn bit_mask_is_the_xor_of_symbol_bits() {
        let t = trace_from(&[0, 1, -1, 128], 8);
        let mask = t.bit_mask();
        for (i, s) in t.symbols.iter().enumerate() {
            let a = bin_to_bits(s.true_bin, 8).unwrap();
            let b = bin_to_bits(s.decoded_bin, 8).unwrap();
            let x: Vec<bool> = a.iter().zip(&b).map(|(p, q)| p ^ q).collect();
            assert_eq!(&mask.flips[8 * i..8 * i + 8], &x[..]);
        }
        // offset N/2 flips only the MSB
        assert_eq!(&mask.flips[24..32], &[true, false, false, false, false, false, false, false]);
    }

    #[test]
    fn superposition_adds_error_mass() {
        let a = OffsetModel::uniform(7, 0.01).unwrap();
        let b = OffsetModel::exponential(7, 0.02, 1.0, 0.5).unwrap();
        let c = a.superpose(&b).unwrap();
        assert!((c.probability(0) - 0.97).abs() < 1e-12);
        assert!((c.pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
