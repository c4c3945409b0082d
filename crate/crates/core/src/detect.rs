//! Preamble detection and Doppler estimation.
//!
//! A correlator at bandwidth `m·bw` with spreading factor `sf + 2·log2(m)`
//! has the same chirp slope as the transmitted signal, so each narrow
//! preamble chirp is a time slice (a "fragment") of the wide chirp.
//! Dechirping with fragments keeps the correlation coherent over one narrow
//! symbol while widening the Doppler acceptance region to `±m·bw/2`. The
//! price is that a narrow chirp that straddles a fragment boundary splits
//! its energy between two wide-FFT bins, which costs about 3 dB on average.

use std::ops::Range;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::channel::{add_noise, noise_power_for, rotate_in_place};
use crate::phy::{chirp_slope, modulate_packet, write_chirp, Demodulator, IqBuffer, LoRaParams, PacketFrame};
use crate::{Cplx, Error, Result};

/// Peak-to-floor ratio used when no calibration has been run. The
/// false-alarm point grows with buffer length; for SF8 the 1% points of
/// either correlator run from about 3.85 at 16k samples to 4.2 at 64k.
pub const DEFAULT_THRESHOLD: f64 = 4.0;

/// Widest correlator the gateway hardware offers.
pub const MAX_CORRELATOR_BW_HZ: f64 = 250_000.0;

/// Bins on each side of the peak excluded from the noise-floor estimate.
const PEAK_GUARD_BINS: usize = 2;

/// Coarse timing candidates whose ridge offset is refined.
const RIDGE_SEEDS: usize = 3;

/// FFT zero-padding of the correlator windows. Interleaved bins cap the
/// scalloping of a tone between bins, which a sub-chip timing offset or a
/// fractional Doppler otherwise costs the peak, at about 0.9 dB.
const ZERO_PAD: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelatorConfig {
    /// Parameters of the transmitted signal.
    pub narrow: LoRaParams,
    pub wide_bw_hz: f64,
    pub wide_sf: u8,
    /// Accumulated peak-to-noise-floor power ratio required to declare a packet.
    pub detection_threshold: f64,
}

impl CorrelatorConfig {
    /// Equal-slope correlator at `wide_bw_hz`.
    pub fn new(narrow: LoRaParams, wide_bw_hz: f64) -> Result<Self> {
        let ratio = wide_bw_hz / narrow.bw_hz;
        if !(ratio >= 1.0 && ratio.fract() == 0.0 && (ratio as u64).is_power_of_two()) {
            return Err(Error::Configuration(format!(
                "correlator bandwidth {wide_bw_hz} Hz is not a power-of-two multiple of {} Hz",
                narrow.bw_hz
            )));
        }
        let wide_sf = narrow.sf as u32 + 2 * (ratio as u64).trailing_zeros();
        let cfg = Self {
            narrow,
            wide_bw_hz,
            wide_sf: u8::try_from(wide_sf).map_err(|_| Error::Configuration("wide SF overflow".into()))?,
            detection_threshold: DEFAULT_THRESHOLD,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The conventional correlator at the transmitted bandwidth.
    pub fn narrowband(narrow: LoRaParams) -> Self {
        Self {
            narrow,
            wide_bw_hz: narrow.bw_hz,
            wide_sf: narrow.sf,
            detection_threshold: DEFAULT_THRESHOLD,
        }
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.detection_threshold = threshold;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.narrow.validate()?;
        let ratio = self.wide_bw_hz / self.narrow.bw_hz;
        if !(ratio >= 1.0 && ratio.fract() == 0.0 && (ratio as u64).is_power_of_two()) {
            return Err(Error::Configuration(format!(
                "correlator bandwidth {} Hz is not a power-of-two multiple of {} Hz",
                self.wide_bw_hz, self.narrow.bw_hz
            )));
        }
        if self.wide_sf > 20 {
            return Err(Error::Configuration(format!("wide SF {} too large", self.wide_sf)));
        }
        let narrow = chirp_slope(self.narrow.sf as u32, self.narrow.bw_hz);
        let wide = chirp_slope(self.wide_sf as u32, self.wide_bw_hz);
        if narrow != wide {
            return Err(Error::Configuration(format!(
                "chirp slope mismatch: SF{}/{} Hz gives {narrow} Hz/s, SF{}/{} Hz gives {wide} Hz/s",
                self.narrow.sf, self.narrow.bw_hz, self.wide_sf, self.wide_bw_hz
            )));
        }
        if !(self.detection_threshold > 1.0) {
            return Err(Error::Configuration("detection threshold must exceed 1".into()));
        }
        Ok(())
    }

    /// Bandwidth multiple `m`.
    pub fn ratio(&self) -> usize {
        (self.wide_bw_hz / self.narrow.bw_hz).round() as usize
    }

    pub fn is_narrowband(&self) -> bool {
        self.ratio() == 1
    }

    /// Largest |Doppler| the correlator reports: half its bandwidth minus a bin.
    pub fn acceptance_hz(&self) -> f64 {
        self.wide_bw_hz / 2.0 - self.narrow.bin_spacing_hz()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub detected: bool,
    pub coarse_doppler_hz: f64,
    pub fine_doppler_hz: Option<f64>,
    /// `10·log10((peak − floor)/floor)` of the accumulated preamble spectrum.
    pub detection_snr_db: f64,
    /// First preamble sample in the input buffer.
    pub symbol_start_index: usize,
    pub correlator_bw_hz: f64,
}

impl DetectionResult {
    fn missed(snr_db: f64, correlator_bw_hz: f64) -> Self {
        Self {
            detected: false,
            coarse_doppler_hz: 0.0,
            fine_doppler_hz: None,
            detection_snr_db: snr_db,
            symbol_start_index: 0,
            correlator_bw_hz,
        }
    }
}

fn snr_db_from_ratio(ratio: f64) -> f64 {
    10.0 * (ratio - 1.0).max(1e-12).log10()
}

fn wrap_signed(x: f64, period: f64) -> f64 {
    let y = x.rem_euclid(period);
    if y >= period / 2.0 {
        y - period
    } else {
        y
    }
}

/// Header symbols of a frame: preamble upchirps then SYNC.
fn header_symbols(params: &LoRaParams) -> Vec<usize> {
    let mut s = vec![0; params.preamble_len];
    s.extend(params.sync_bins());
    s
}

/// Brick-wall low-pass to `±fs/(2·decim)` and decimation, done with one
/// FFT over the whole buffer.
fn bandlimit(samples: &[Cplx], decim: usize) -> Vec<Cplx> {
    if decim == 1 {
        return samples.to_vec();
    }
    let out_len = samples.len() / decim;
    let len = out_len * decim;
    let mut spec = samples[..len].to_vec();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut spec);
    let half = out_len / 2;
    let mut narrow = Vec::with_capacity(out_len);
    narrow.extend_from_slice(&spec[..out_len - half]);
    narrow.extend_from_slice(&spec[len - half..]);
    planner.plan_fft_inverse(out_len).process(&mut narrow);
    let scale = 1.0 / len as f64;
    narrow.iter_mut().for_each(|z| *z *= scale);
    narrow
}

struct Scan {
    ratio: f64,
    /// Input sample of the best-aligned window start.
    start_sample: usize,
    strength: f64,
    /// Fractional peak of the accumulated spectrum, in unpadded bins.
    peak_bin: f64,
}

/// Dechirp machinery for one correlator configuration at one input rate.
struct Correlator {
    cfg: CorrelatorConfig,
    n: usize,
    m: usize,
    /// Samples per narrow symbol at the correlator rate; also the FFT size.
    l: usize,
    decim: usize,
    /// Conjugated wide-chirp fragments.
    fragments: Vec<Vec<Cplx>>,
    /// Spectrum roll that undoes each fragment's frequency offset.
    rolls: Vec<usize>,
    fft: Arc<dyn Fft<f64>>,
    /// Input samples per narrow chip.
    os_in: usize,
    /// Conjugated header templates at the input rate.
    templates: Vec<Vec<Cplx>>,
    accumulate: usize,
}

impl Correlator {
    fn new(cfg: &CorrelatorConfig, input_rate_hz: f64) -> Result<Self> {
        cfg.validate()?;
        let decim_f = input_rate_hz / cfg.wide_bw_hz;
        if !(decim_f >= 1.0 && (decim_f - decim_f.round()).abs() < 1e-9) {
            return Err(Error::Precondition(format!(
                "input rate {input_rate_hz} Hz must be an integer multiple of the {} Hz correlator",
                cfg.wide_bw_hz
            )));
        }
        if cfg.narrow.preamble_len < 2 {
            return Err(Error::Configuration("detection needs at least two preamble chirps".into()));
        }
        let n = cfg.narrow.n_bins();
        let m = cfg.ratio();
        let l = n * m;
        let mut wide = vec![Cplx::new(0.0, 0.0); l * m];
        write_chirp(&mut wide, 0, cfg.wide_sf);
        let fragments = wide.chunks(l).map(|c| c.iter().map(|z| z.conj()).collect()).collect();
        // fragment j starts j·bw above the bottom of the wide band, so a narrow
        // upchirp dechirps to a tone N·(m−1)/2 − j·N bins away from its
        // narrowband position
        let rolls = (0..m)
            .map(|j| ((n * (m - 1)) as i64 / 2 - (j * n) as i64).rem_euclid(l as i64) as usize)
            .collect();
        let decim = decim_f.round() as usize;
        let os_in = m * decim;
        let templates = header_symbols(&cfg.narrow)
            .into_iter()
            .map(|s| {
                let mut t = vec![Cplx::new(0.0, 0.0); n * os_in];
                write_chirp(&mut t, s, cfg.narrow.sf);
                t.iter_mut().for_each(|z| *z = z.conj());
                t
            })
            .collect();
        Ok(Self {
            cfg: *cfg,
            n,
            m,
            l,
            decim,
            fragments,
            rolls,
            fft: FftPlanner::new().plan_fft_forward(l * ZERO_PAD),
            os_in,
            templates,
            accumulate: cfg.narrow.preamble_len - 1,
        })
    }

    fn bin_hz(&self) -> f64 {
        self.cfg.narrow.bin_spacing_hz()
    }

    fn window_powers(&self, y: &[Cplx]) -> Vec<Vec<f64>> {
        let windows = y.len() / self.l;
        (0..windows)
            .map(|w| {
                let j = w % self.m;
                let size = self.l * ZERO_PAD;
                let mut buf = vec![Cplx::new(0.0, 0.0); size];
                for ((o, a), b) in buf.iter_mut().zip(&y[w * self.l..(w + 1) * self.l]).zip(&self.fragments[j]) {
                    *o = a * b;
                }
                self.fft.process(&mut buf);
                let roll = self.rolls[j] * ZERO_PAD;
                (0..size).map(|b| buf[(b + roll) % size].norm_sqr()).collect()
            })
            .collect()
    }

    /// Slides a `preamble_len − 1` window accumulator over the buffer and
    /// returns the start with the best peak-to-floor ratio.
    fn scan(&self, y: &[Cplx]) -> Result<Scan> {
        let powers = self.window_powers(y);
        let p = self.accumulate;
        if powers.len() < p {
            return Err(Error::InsufficientData {
                needed: p * self.l,
                got: y.len(),
            });
        }
        let mut acc = vec![0.0; self.l * ZERO_PAD];
        for w in &powers[..p] {
            acc.iter_mut().zip(w).for_each(|(a, b)| *a += b);
        }
        // detection uses the best ratio; alignment uses the strongest peak,
        // which is the start fully inside the preamble
        let mut best = Scan {
            ratio: f64::NEG_INFINITY,
            start_sample: 0,
            strength: f64::NEG_INFINITY,
            peak_bin: 0.0,
        };
        for start in 0..=powers.len() - p {
            if start > 0 {
                let (gone, new) = (&powers[start - 1], &powers[start + p - 1]);
                for (k, a) in acc.iter_mut().enumerate() {
                    *a += new[k] - gone[k];
                }
            }
            let (ratio, peak, peak_bin) = self.peak_ratio(&acc);
            best.ratio = best.ratio.max(ratio);
            if peak > best.strength {
                best.strength = peak;
                best.start_sample = start * self.l * self.decim;
                best.peak_bin = peak_bin / ZERO_PAD as f64;
            }
        }
        Ok(best)
    }

    /// Scans every sub-chip phase of the input. After decimation a window
    /// straddling a symbol boundary folds both halves of the split chirp
    /// onto one bin, and off the chip grid they partly cancel: half a chip
    /// out costs the narrowband correlator several dB.
    fn scan_phases(&self, x: &[Cplx]) -> Result<Scan> {
        let mut best: Option<Scan> = None;
        for phase in 0..self.decim.min(x.len()) {
            let mut s = self.scan(&bandlimit(&x[phase..], self.decim))?;
            s.start_sample += phase;
            best = Some(match best {
                None => s,
                Some(b) => {
                    let ratio = b.ratio.max(s.ratio);
                    let mut keep = if s.strength > b.strength { s } else { b };
                    keep.ratio = ratio;
                    keep
                }
            });
        }
        best.ok_or_else(|| Error::InsufficientData { needed: self.l * self.decim, got: x.len() })
    }

    /// Peak-to-floor ratio, peak power and fractional peak bin.
    fn peak_ratio(&self, acc: &[f64]) -> (f64, f64, f64) {
        let l = acc.len();
        let (k, &peak) = acc
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty spectrum");
        let total: f64 = acc.iter().sum();
        let guard = PEAK_GUARD_BINS * ZERO_PAD;
        let mut guarded = 0.0;
        for d in 0..=2 * guard {
            guarded += acc[(k + l + d - guard) % l];
        }
        let floor = ((total - guarded) / (l - 2 * guard - 1) as f64).max(f64::MIN_POSITIVE);
        let (a, b, c) = (acc[(k + l - 1) % l], peak, acc[(k + 1) % l]);
        let denom = a - 2.0 * b + c;
        let delta = if denom < 0.0 { (0.5 * (a - c) / denom).clamp(-0.5, 0.5) } else { 0.0 };
        (peak / floor, peak, k as f64 + delta)
    }

    /// Header matched-filter energy at input sample `t` and offset `f_bins`.
    fn header_score(&self, x: &[Cplx], t: usize, f_bins: f64) -> f64 {
        let len = self.n * self.os_in;
        let step = -2.0 * std::f64::consts::PI * f_bins / len as f64;
        let rot: Vec<Cplx> = (0..len).map(|n| Cplx::from_polar(1.0, step * n as f64)).collect();
        let mut score = 0.0;
        for (k, tmpl) in self.templates.iter().enumerate() {
            let s = t + k * len;
            if s + len > x.len() {
                break;
            }
            let mut acc = Cplx::new(0.0, 0.0);
            for ((a, b), r) in x[s..s + len].iter().zip(tmpl).zip(&rot) {
                acc += a * b * r;
            }
            score += acc.norm_sqr();
        }
        score
    }

    /// Resolves the timing/frequency trade-off left by the preamble peak by
    /// matching the full header at the input rate, where chirp wraps and
    /// the SYNC symbols break the symmetry. Along the ridge `f = peak − chips`
    /// the score is flat except at those features, so the peak estimate is
    /// refined before the final ridge search.
    fn resolve_timing(&self, x: &[Cplx], scan: &Scan) -> (usize, f64) {
        let p = scan.start_sample as i64;
        let os = self.os_in as i64;
        let l = self.n as i64 * os;
        let period = self.l as f64;
        // A misaligned window at the correlator rate can peak on either half
        // of the split chirp; the wrapped half sits N bins lower.
        let wraps: &[f64] = if self.m > 1 { &[0.0, 1.0] } else { &[0.0] };
        let hypothesis = |peak: f64, t: i64, wrap: f64| {
            let chips = (p - t) as f64 / os as f64;
            wrap_signed(peak - chips + wrap * self.n as f64, period)
        };
        let score_all = |peak: f64, candidates: &[(i64, f64)]| -> Vec<(f64, i64, f64)> {
            candidates
                .par_iter()
                .map(|&(t, w)| (self.header_score(x, t as usize, hypothesis(peak, t, w)), t, w))
                .collect()
        };
        let best_of = |scores: Vec<(f64, i64, f64)>| {
            scores
                .into_iter()
                .fold((f64::NEG_INFINITY, p.max(0), 0.0), |best, s| if s.0 > best.0 { s } else { best })
        };
        let grid: Vec<(i64, f64)> = ((p - 3 * l / 2)..(p + 3 * l / 2))
            .step_by(os as usize)
            .filter(|&t| t >= 0)
            .flat_map(|t| wraps.iter().map(move |&w| (t, w)))
            .collect();

        // The preamble peak of a partly filtered chirp can be more than a bin
        // out, which can put the best coarse point off the true ridge. The
        // few strongest coarse points each get their ridge offset refined.
        let mut coarse = score_all(scan.peak_bin, &grid);
        coarse.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut seeds: Vec<(i64, f64)> = Vec::new();
        for &(_, t, w) in &coarse {
            if seeds.iter().all(|&(s, _)| (s - t).abs() > 2 * os) {
                seeds.push((t, w));
            }
            if seeds.len() == RIDGE_SEEDS {
                break;
            }
        }
        let refine = |t0: i64, w0: f64| -> (f64, f64) {
            let mut f0 = hypothesis(scan.peak_bin, t0, w0);
            let mut best = f64::NEG_INFINITY;
            for span in [1.5, 0.25] {
                let steps = (span * 32.0) as i64;
                let (s, df) = (-steps..=steps)
                    .into_par_iter()
                    .map(|k| {
                        let df = k as f64 / 32.0;
                        (self.header_score(x, t0 as usize, f0 + df), df)
                    })
                    .collect::<Vec<_>>()
                    .into_iter()
                    .fold((f64::NEG_INFINITY, 0.0), |best, s| if s.0 > best.0 { s } else { best });
                f0 += df;
                best = s;
            }
            // back to the peak position implied at this point
            (best, f0 - hypothesis(scan.peak_bin, t0, w0) + scan.peak_bin)
        };
        let peak = seeds
            .iter()
            .map(|&(t, w)| refine(t, w))
            .fold((f64::NEG_INFINITY, scan.peak_bin), |best, s| if s.0 > best.0 { s } else { best })
            .1;

        let (_, t1, w1) = best_of(score_all(peak, &grid));
        let fine: Vec<(i64, f64)> = ((t1 - os + 1)..(t1 + os)).filter(|&t| t >= 0).map(|t| (t, w1)).collect();
        let (_, t, w) = best_of(score_all(peak, &fine));
        (t as usize, hypothesis(peak, t, w))
    }

    fn detect(&self, iq: &IqBuffer) -> Result<DetectionResult> {
        iq.validate()?;
        let scan = self.scan_phases(&iq.samples)?;
        let snr_db = snr_db_from_ratio(scan.ratio);
        if scan.ratio < self.cfg.detection_threshold {
            return Ok(DetectionResult::missed(snr_db, self.cfg.wide_bw_hz));
        }
        // Header alignment is shared post-detection work and sees the whole
        // capture, so correlators differ only in detection and acceptance.
        let (t, f_bins) = self.resolve_timing(&iq.samples, &scan);
        let coarse = f_bins * self.bin_hz();
        if coarse.abs() > self.cfg.acceptance_hz() {
            return Ok(DetectionResult::missed(snr_db, self.cfg.wide_bw_hz));
        }
        let mut det = DetectionResult {
            detected: true,
            coarse_doppler_hz: coarse,
            fine_doppler_hz: None,
            detection_snr_db: snr_db,
            symbol_start_index: t,
            correlator_bw_hz: self.cfg.wide_bw_hz,
        };
        det.fine_doppler_hz = estimate_doppler_fine(iq, &self.cfg, &det).ok();
        Ok(det)
    }

    fn statistic(&self, iq: &IqBuffer) -> Result<f64> {
        Ok(self.scan_phases(&iq.samples)?.ratio)
    }
}

/// Conventional detector: filters to `±bw/2`, accumulates dechirped
/// preamble spectra at the transmitted bandwidth and thresholds the peak.
pub fn detect_narrowband(iq: &IqBuffer, params: &LoRaParams, threshold: f64) -> Result<DetectionResult> {
    let cfg = CorrelatorConfig::narrowband(*params).with_threshold(threshold);
    Correlator::new(&cfg, iq.sample_rate_hz)?.detect(iq)
}

/// Best preamble peak-to-floor ratio over all alignments, the statistic the
/// detection threshold applies to. Skips timing resolution.
pub fn detection_statistic(iq: &IqBuffer, cfg: &CorrelatorConfig) -> Result<f64> {
    iq.validate()?;
    Correlator::new(cfg, iq.sample_rate_hz)?.statistic(iq)
}

/// Equal-slope wide correlator detector.
pub fn detect_wideband(iq: &IqBuffer, cfg: &CorrelatorConfig) -> Result<DetectionResult> {
    Correlator::new(cfg, iq.sample_rate_hz)?.detect(iq)
}

/// Preamble + SYNC frequency estimate: spectral refinement to a fraction of
/// a bin, then a weighted phase-difference fit across all header symbols.
pub fn estimate_doppler_fine(iq: &IqBuffer, cfg: &CorrelatorConfig, det: &DetectionResult) -> Result<f64> {
    let p = &cfg.narrow;
    fine_estimate(iq, p, det, 0..p.preamble_len + p.sync_len)
}

/// The same estimator restricted to the SYNC symbols.
pub fn estimate_doppler_sync_only(iq: &IqBuffer, cfg: &CorrelatorConfig, det: &DetectionResult) -> Result<f64> {
    let p = &cfg.narrow;
    if p.sync_len < 2 {
        return Err(Error::Configuration("SYNC-only estimate needs two SYNC symbols".into()));
    }
    fine_estimate(iq, p, det, p.preamble_len..p.preamble_len + p.sync_len)
}

fn fine_estimate(iq: &IqBuffer, narrow: &LoRaParams, det: &DetectionResult, windows: Range<usize>) -> Result<f64> {
    if !det.detected {
        return Err(Error::Precondition("no detected packet to refine".into()));
    }
    let params = LoRaParams {
        sample_rate_hz: iq.sample_rate_hz,
        ..*narrow
    };
    params.validate()?;
    let demod = Demodulator::new(&params)?;
    let len = params.samples_per_symbol();
    let start = det.symbol_start_index + windows.start * len;
    let end = det.symbol_start_index + windows.end * len;
    if end > iq.len() {
        return Err(Error::InsufficientData {
            needed: end,
            got: iq.len(),
        });
    }
    let symbols: Vec<usize> = header_symbols(narrow)[windows.clone()].to_vec();
    let n = params.n_bins();
    let bin_hz = params.bin_spacing_hz();
    let fs = iq.sample_rate_hz;

    let spectra = |offset_hz: f64| -> Result<Vec<Vec<Cplx>>> {
        // one continuous mix keeps the inter-symbol phase meaningful
        let mut span = iq.samples[start..end].to_vec();
        rotate_in_place(&mut span, fs, -offset_hz, 0.0);
        span.chunks(len).map(|c| demod.spectrum(c, 0.0)).collect()
    };

    let first = spectra(det.coarse_doppler_hz)?;
    let energy = |shift: i64| -> f64 {
        first
            .iter()
            .zip(&symbols)
            .map(|(x, &s)| x[(s as i64 + shift).rem_euclid(n as i64) as usize].norm_sqr())
            .sum()
    };
    let span = 3i64;
    let e: Vec<f64> = (-span - 1..=span + 1).map(energy).collect();
    let (k, _) = e[1..e.len() - 1]
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let k = k + 1;
    let (a, b, c) = (e[k - 1], e[k], e[k + 1]);
    let denom = a - 2.0 * b + c;
    let delta = if denom < 0.0 { (0.5 * (a - c) / denom).clamp(-0.5, 0.5) } else { 0.0 };
    let refined = det.coarse_doppler_hz + (k as f64 - (span + 1) as f64 + delta) * bin_hz;

    let second = spectra(refined)?;
    let z: Vec<Cplx> = second.iter().zip(&symbols).map(|(x, &s)| x[s]).collect();
    let count = z.len() as f64;
    let half = count / 2.0;
    let mut residual_cycles = 0.0;
    for k in 0..z.len() - 1 {
        let w = 1.5 * count / (count * count - 1.0) * (1.0 - ((k as f64 - (half - 1.0)) / half).powi(2));
        residual_cycles += w * (z[k + 1] * z[k].conj()).arg() / (2.0 * std::f64::consts::PI);
    }
    Ok(refined + residual_cycles / params.symbol_duration_s())
}

/// Narrowest power-of-two correlator whose acceptance region covers the
/// expected Doppler plus a quarter-bandwidth margin, capped at the widest
/// available correlator.
pub fn select_correlator(expected_doppler_hz: f64, narrow: &LoRaParams) -> Result<CorrelatorConfig> {
    narrow.validate()?;
    let margin = narrow.bw_hz / 4.0;
    let need = expected_doppler_hz.abs() + margin;
    let mut bw = narrow.bw_hz;
    while bw / 2.0 < need && bw * 2.0 <= MAX_CORRELATOR_BW_HZ {
        bw *= 2.0;
    }
    CorrelatorConfig::new(*narrow, bw)
}

/// CFAR threshold: the `1 − pfa` quantile of the detection statistic over
/// `trials` pure-noise buffers of `buffer_len` samples.
pub fn calibrate_threshold(
    cfg: &CorrelatorConfig,
    sample_rate_hz: f64,
    buffer_len: usize,
    trials: usize,
    pfa: f64,
    seed: u64,
) -> Result<f64> {
    if !(pfa > 0.0 && pfa < 1.0) || trials == 0 {
        return Err(Error::invalid("need pfa in (0, 1) and at least one trial"));
    }
    let corr = Correlator::new(cfg, sample_rate_hz)?;
    let mut stats: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let iq = crate::channel::noise_buffer(buffer_len, sample_rate_hz, cfg.narrow.bw_hz, seed.wrapping_add(i as u64))?;
            corr.statistic(&iq)
        })
        .collect::<Result<_>>()?;
    stats.sort_by(f64::total_cmp);
    let idx = (((1.0 - pfa) * trials as f64).ceil() as usize).clamp(1, trials) - 1;
    Ok(stats[idx])
}

/// Test-capture recipe: a packet at a constant Doppler offset embedded in
/// noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaptureSpec {
    pub doppler_hz: f64,
    /// In-band SNR over the signal bandwidth; `+inf` for a clean capture.
    pub snr_db: f64,
    pub lead_samples: usize,
    pub tail_samples: usize,
    pub payload_len: usize,
    pub seed: u64,
}

impl Default for CaptureSpec {
    fn default() -> Self {
        Self {
            doppler_hz: 0.0,
            snr_db: f64::INFINITY,
            lead_samples: 0,
            tail_samples: 0,
            payload_len: 16,
            seed: 0,
        }
    }
}

pub fn synthesize_capture(params: &LoRaParams, spec: &CaptureSpec) -> Result<IqBuffer> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let payload: Vec<u8> = (0..spec.payload_len).map(|_| rng.random()).collect();
    let packet = modulate_packet(&PacketFrame::new(payload, *params)?)?;
    let mut samples = vec![Cplx::new(0.0, 0.0); spec.lead_samples];
    samples.extend(packet.samples);
    samples.resize(samples.len() + spec.tail_samples, Cplx::new(0.0, 0.0));
    rotate_in_place(&mut samples, params.sample_rate_hz, spec.doppler_hz, 0.0);
    if spec.snr_db.is_nan() || spec.snr_db == f64::NEG_INFINITY {
        return Err(Error::invalid("snr_db must be finite or +inf"));
    }
    if spec.snr_db.is_finite() {
        let noise = noise_power_for(1.0, spec.snr_db, params.oversampling() as f64);
        add_noise(&mut samples, noise, &mut rng);
    }
    IqBuffer::new(samples, params.sample_rate_hz)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> LoRaParams {
        LoRaParams::default()
    }

    fn capture(doppler: f64, snr: f64, lead: usize, seed: u64) -> IqBuffer {
        synthesize_capture(
            &params(),
            &CaptureSpec {
                doppler_hz: doppler,
                snr_db: snr,
                lead_samples: lead,
                tail_samples: 3000,
                payload_len: 8,
                seed,
            },
        )
        .unwrap()
    }

    #[test]
    fn equal_slope_configuration() {
        let cfg = CorrelatorConfig::new(params(), 250_000.0).unwrap();
        assert_eq!(cfg.wide_sf, 12);
        assert_eq!(cfg.ratio(), 4);
        let bad = CorrelatorConfig { wide_sf: 11, ..cfg };
        assert!(matches!(bad.validate(), Err(Error::Configuration(_))));
        assert!(CorrelatorConfig::new(params(), 187_500.0).is_err());
        assert!(CorrelatorConfig::new(params(), 31_250.0).is_err());
    }

    #[test]
    fn fragment_rolls_put_tone_at_narrow_bin() {
        let cfg = CorrelatorConfig::new(params(), 250_000.0).unwrap();
        let corr = Correlator::new(&cfg, 250_000.0).unwrap();
        let iq = modulate_packet(&PacketFrame::new(vec![], params()).unwrap()).unwrap();
        for w in corr.window_powers(&iq.samples).iter().take(8) {
            let (k, _) = w.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
            assert_eq!(k, 0);
        }
    }

    #[test]
    fn clean_zero_doppler_is_found_by_both() {
        let iq = capture(0.0, f64::INFINITY, 777, 1);
        let nb = detect_narrowband(&iq, &params(), DEFAULT_THRESHOLD).unwrap();
        assert!(nb.detected);
        assert!(nb.coarse_doppler_hz.abs() < 2.0 * params().bin_spacing_hz(), "{nb:?}");
        assert!(nb.symbol_start_index.abs_diff(777) <= 4, "{nb:?}");
        let wb = detect_wideband(&iq, &CorrelatorConfig::new(params(), 250_000.0).unwrap()).unwrap();
        assert!(wb.detected);
        assert!(wb.coarse_doppler_hz.abs() < 2.0 * params().bin_spacing_hz(), "{wb:?}");
        assert!(wb.fine_doppler_hz.unwrap().abs() < params().bin_spacing_hz() / 8.0, "{wb:?}");
    }

    #[test]
    fn narrowband_rejects_offsets_beyond_half_band() {
        let bw = params().bw_hz;
        let iq = capture(0.6 * bw, 0.0, 500, 2);
        let nb = detect_narrowband(&iq, &params(), DEFAULT_THRESHOLD).unwrap();
        let ok = nb.detected && (nb.coarse_doppler_hz - 0.6 * bw).abs() <= 2.0 * params().bin_spacing_hz();
        assert!(!ok, "{nb:?}");
        let wb = detect_wideband(&iq, &CorrelatorConfig::new(params(), 250_000.0).unwrap()).unwrap();
        assert!(wb.detected && (wb.coarse_doppler_hz - 0.6 * bw).abs() <= 2.0 * params().bin_spacing_hz(), "{wb:?}");
    }

    #[test]
    fn wideband_acceptance_is_symmetric() {
        let cfg = CorrelatorConfig::new(params(), 250_000.0).unwrap();
        for d in [40_000.0, 90_000.0, 120_000.0] {
            let a = detect_wideband(&capture(d, 0.0, 300, 3), &cfg).unwrap();
            let b = detect_wideband(&capture(-d, 0.0, 300, 3), &cfg).unwrap();
            assert_eq!(a.detected, b.detected);
            assert!((a.coarse_doppler_hz - d).abs() < 500.0, "{a:?}");
            assert!((b.coarse_doppler_hz + d).abs() < 500.0, "{b:?}");
        }
    }

    #[test]
    fn fine_estimate_requires_detection() {
        let iq = capture(0.0, f64::INFINITY, 0, 4);
        let cfg = CorrelatorConfig::narrowband(params());
        let det = DetectionResult::missed(0.0, 62_500.0);
        assert!(matches!(estimate_doppler_fine(&iq, &cfg, &det), Err(Error::Precondition(_))));
    }

    #[test]
    fn select_correlator_examples() {
        let p = params();
        assert_eq!(select_correlator(0.0, &p).unwrap().wide_bw_hz, 62_500.0);
        assert_eq!(select_correlator(20_000.0, &p).unwrap().wide_bw_hz, 125_000.0);
        assert_eq!(select_correlator(-50_000.0, &p).unwrap().wide_bw_hz, 250_000.0);
        assert_eq!(select_correlator(400_000.0, &p).unwrap().wide_bw_hz, 250_000.0);
    }

    #[test]
    fn short_buffer_is_insufficient() {
        let iq = IqBuffer::new(vec![Cplx::new(0.0, 0.0); 2000], 250_000.0).unwrap();
        assert!(matches!(
            detect_narrowband(&iq, &params(), DEFAULT_THRESHOLD),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn wrap_signed_range() {
        assert_eq!(wrap_signed(3.0, 8.0), 3.0);
        assert_eq!(wrap_signed(5.0, 8.0), -3.0);
        assert_eq!(wrap_signed(-4.0, 8.0), -4.0);
    }
}
