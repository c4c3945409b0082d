//! LoRa chirp spread spectrum baseband modem.
//!
//! Symbols are cyclically shifted linear upchirps. A packet is a run of
//! base upchirps (preamble), a couple of SYNC symbols at fixed bins, then the
//! payload packed MSB-first into `sf`-bit symbols with plain binary bin
//! mapping. There is no Gray coding, whitening, interleaving or FEC: the bit
//! error structure produced by frequency drift is kept intact.

use std::sync::Arc;

use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::{Cplx, Error, Result};

pub const SUPPORTED_BANDWIDTHS_HZ: [f64; 3] = [62_500.0, 125_000.0, 250_000.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoRaParams {
    pub sf: u8,
    pub bw_hz: f64,
    pub carrier_hz: f64,
    pub preamble_len: usize,
    pub sync_len: usize,
    pub sample_rate_hz: f64,
}

impl Default for LoRaParams {
    /// SF8 at 62.5 kHz on 915.6 MHz, sampled at 4× the bandwidth.
    fn default() -> Self {
        Self {
            sf: 8,
            bw_hz: 62_500.0,
            carrier_hz: 915.6e6,
            preamble_len: 8,
            sync_len: 2,
            sample_rate_hz: 250_000.0,
        }
    }
}

impl LoRaParams {
    pub fn new(sf: u8, bw_hz: f64) -> Result<Self> {
        let p = Self {
            sf,
            bw_hz,
            sample_rate_hz: 4.0 * bw_hz,
            ..Self::default()
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_oversampling(mut self, factor: usize) -> Self {
        self.sample_rate_hz = self.bw_hz * factor as f64;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(7..=12).contains(&self.sf) {
            return Err(Error::OutOfRange {
                what: "sf",
                value: self.sf as f64,
                min: 7.0,
                max: 12.0,
            });
        }
        if !SUPPORTED_BANDWIDTHS_HZ.contains(&self.bw_hz) {
            return Err(Error::invalid(format!(
                "bandwidth {} Hz not one of {:?}",
                self.bw_hz, SUPPORTED_BANDWIDTHS_HZ
            )));
        }
        if !(self.carrier_hz > 0.0) {
            return Err(Error::invalid("carrier_hz must be positive"));
        }
        let ratio = self.sample_rate_hz / self.bw_hz;
        if ratio < 1.0 || (ratio - ratio.round()).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "sample rate {} Hz is not an integer multiple of bandwidth {} Hz",
                self.sample_rate_hz, self.bw_hz
            )));
        }
        Ok(())
    }

    /// Number of chirp positions, `2^sf`.
    pub fn n_bins(&self) -> usize {
        1 << self.sf
    }

    pub fn oversampling(&self) -> usize {
        (self.sample_rate_hz / self.bw_hz).round() as usize
    }

    pub fn samples_per_symbol(&self) -> usize {
        self.n_bins() * self.oversampling()
    }

    pub fn symbol_duration_s(&self) -> f64 {
        self.n_bins() as f64 / self.bw_hz
    }

    pub fn bin_spacing_hz(&self) -> f64 {
        self.bw_hz / self.n_bins() as f64
    }

    /// Chirp slope in Hz/s, `bw² / 2^sf`.
    pub fn chirp_slope(&self) -> f64 {
        chirp_slope(self.sf as u32, self.bw_hz)
    }

    pub fn sync_bins(&self) -> Vec<usize> {
        let n = self.n_bins();
        let pattern = [n / 8, n / 4];
        (0..self.sync_len).map(|i| pattern[i % 2]).collect()
    }

    /// Number of payload symbols needed for `payload_len` bytes.
    pub fn data_symbols(&self, payload_len: usize) -> usize {
        (8 * payload_len).div_ceil(self.sf as usize)
    }

    pub fn header_symbols(&self) -> usize {
        self.preamble_len + self.sync_len
    }

    pub fn airtime_s(&self, payload_len: usize) -> f64 {
        (self.header_symbols() + self.data_symbols(payload_len)) as f64 * self.symbol_duration_s()
    }
}

pub fn chirp_slope(sf: u32, bw_hz: f64) -> f64 {
    bw_hz * bw_hz / (1u64 << sf) as f64
}

/// Complex baseband samples with their sampling metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IqBuffer {
    pub samples: Vec<Cplx>,
    pub sample_rate_hz: f64,
    /// Offset of the buffer centre frequency from the nominal carrier.
    pub center_offset_hz: f64,
}

impl IqBuffer {
    pub fn new(samples: Vec<Cplx>, sample_rate_hz: f64) -> Result<Self> {
        let buf = Self {
            samples,
            sample_rate_hz,
            center_offset_hz: 0.0,
        };
        buf.validate()?;
        Ok(buf)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::invalid("IQ buffer is empty"));
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if self.samples.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::invalid("IQ buffer contains non-finite samples"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }

    pub fn mean_power(&self) -> f64 {
        mean_power(&self.samples)
    }
}

pub(crate) fn mean_power(samples: &[Cplx]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|z| z.norm_sqr()).sum::<f64>() / samples.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketFrame {
    pub payload: Vec<u8>,
    pub params: LoRaParams,
}

pub const MAX_PAYLOAD_BYTES: usize = 256;

impl PacketFrame {
    pub fn new(payload: Vec<u8>, params: LoRaParams) -> Result<Self> {
        if payload.len() > MAX_PAYLOAD_BYTES {
            return Err(Error::invalid(format!(
                "payload of {} bytes exceeds {MAX_PAYLOAD_BYTES}",
                payload.len()
            )));
        }
        params.validate()?;
        Ok(Self { payload, params })
    }

    /// Full symbol sequence: preamble, SYNC, payload.
    pub fn symbols(&self) -> Vec<usize> {
        let mut out = vec![0; self.params.preamble_len];
        out.extend(self.params.sync_bins());
        out.extend(bytes_to_symbols(&self.payload, self.params.sf));
        out
    }
}

/// Writes one chirp for `symbol` into `out`, whose length sets the
/// oversampling (`out.len() == 2^sf · os`). The sweep starts at
/// `-bw/2 + symbol·bw/2^sf` and wraps once at `+bw/2`.
pub(crate) fn write_chirp(out: &mut [Cplx], symbol: usize, sf: u8) {
    let n = (1usize << sf) as f64;
    let os = out.len() as f64 / n;
    let s = symbol as f64;
    let wrap = n - s;
    for (i, z) in out.iter_mut().enumerate() {
        let u = i as f64 / os;
        let mut cycles = u * u / (2.0 * n) + (s / n - 0.5) * u;
        if u >= wrap {
            cycles -= u - wrap;
        }
        let phase = 2.0 * std::f64::consts::PI * cycles.rem_euclid(1.0);
        *z = Cplx::from_polar(1.0, phase);
    }
}

pub fn modulate_symbol(symbol: usize, params: &LoRaParams) -> Result<IqBuffer> {
    params.validate()?;
    check_symbol(symbol, params.sf)?;
    let mut samples = vec![Cplx::new(0.0, 0.0); params.samples_per_symbol()];
    write_chirp(&mut samples, symbol, params.sf);
    IqBuffer::new(samples, params.sample_rate_hz)
}

pub fn modulate_symbols(symbols: &[usize], params: &LoRaParams) -> Result<IqBuffer> {
    params.validate()?;
    let len = params.samples_per_symbol();
    let mut samples = vec![Cplx::new(0.0, 0.0); len * symbols.len().max(1)];
    if symbols.is_empty() {
        return Err(Error::invalid("no symbols to modulate"));
    }
    for (chunk, &s) in samples.chunks_exact_mut(len).zip(symbols) {
        check_symbol(s, params.sf)?;
        write_chirp(chunk, s, params.sf);
    }
    IqBuffer::new(samples, params.sample_rate_hz)
}

pub fn modulate_packet(frame: &PacketFrame) -> Result<IqBuffer> {
    modulate_symbols(&frame.symbols(), &frame.params)
}

/// Dechirp-FFT demodulator with cached FFT plans.
pub struct Demodulator {
    params: LoRaParams,
    downchirp: Vec<Cplx>,
    fft_n: Arc<dyn Fft<f64>>,
    fft_wide: Option<(Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>)>,
}

impl std::fmt::Debug for Demodulator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Demodulator").field("params", &self.params).finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymbolDecision {
    pub bin: usize,
    /// Peak magnitude normalised so that a clean unit-amplitude symbol gives 1.
    pub peak_magnitude: f64,
}

impl Demodulator {
    pub fn new(params: &LoRaParams) -> Result<Self> {
        params.validate()?;
        let n = params.n_bins();
        let mut base = vec![Cplx::new(0.0, 0.0); n];
        write_chirp(&mut base, 0, params.sf);
        let downchirp = base.iter().map(|z| z.conj()).collect();
        let mut planner = FftPlanner::new();
        let fft_n = planner.plan_fft_forward(n);
        let fft_wide = (params.oversampling() > 1).then(|| {
            (
                planner.plan_fft_forward(params.samples_per_symbol()),
                planner.plan_fft_inverse(n),
            )
        });
        Ok(Self {
            params: *params,
            downchirp,
            fft_n,
            fft_wide,
        })
    }

    pub fn params(&self) -> &LoRaParams {
        &self.params
    }

    /// Mixes out `freq_correction_hz`, low-pass filters to the signal
    /// bandwidth and decimates to one sample per chip.
    pub fn decimate(&self, samples: &[Cplx], freq_correction_hz: f64) -> Result<Vec<Cplx>> {
        let len = self.params.samples_per_symbol();
        if samples.len() != len {
            return Err(Error::Framing(format!(
                "expected {len} samples for one symbol, got {}",
                samples.len()
            )));
        }
        let fs = self.params.sample_rate_hz;
        let step = -2.0 * std::f64::consts::PI * freq_correction_hz / fs;
        let mut buf: Vec<Cplx> = if freq_correction_hz == 0.0 {
            samples.to_vec()
        } else {
            samples
                .iter()
                .enumerate()
                .map(|(i, z)| z * Cplx::from_polar(1.0, step * i as f64))
                .collect()
        };
        let Some((fwd, inv)) = &self.fft_wide else {
            return Ok(buf);
        };
        let n = self.params.n_bins();
        fwd.process(&mut buf);
        let mut narrow = Vec::with_capacity(n);
        narrow.extend_from_slice(&buf[..n / 2]);
        narrow.extend_from_slice(&buf[len - n / 2..]);
        inv.process(&mut narrow);
        let scale = 1.0 / len as f64;
        narrow.iter_mut().for_each(|z| *z *= scale);
        Ok(narrow)
    }

    /// Dechirped spectrum of one symbol window.
    pub fn spectrum(&self, samples: &[Cplx], freq_correction_hz: f64) -> Result<Vec<Cplx>> {
        let mut x = self.decimate(samples, freq_correction_hz)?;
        x.iter_mut().zip(&self.downchirp).for_each(|(a, b)| *a *= b);
        self.fft_n.process(&mut x);
        Ok(x)
    }

    pub fn symbol(&self, samples: &[Cplx], freq_correction_hz: f64) -> Result<SymbolDecision> {
        let spec = self.spectrum(samples, freq_correction_hz)?;
        let (bin, mag) = argmax_norm(&spec);
        Ok(SymbolDecision {
            bin,
            peak_magnitude: mag / self.params.n_bins() as f64,
        })
    }

    /// Demodulates consecutive symbols starting at `offset`.
    pub fn symbols(
        &self,
        samples: &[Cplx],
        offset: usize,
        count: usize,
        freq_correction: impl Fn(usize) -> f64,
    ) -> Result<Vec<SymbolDecision>> {
        let len = self.params.samples_per_symbol();
        if offset + count * len > samples.len() {
            return Err(Error::Framing(format!(
                "buffer of {} samples too short for {count} symbols at offset {offset}",
                samples.len()
            )));
        }
        (0..count)
            .map(|k| {
                let start = offset + k * len;
                self.symbol(&samples[start..start + len], freq_correction(k))
            })
            .collect()
    }
}

pub(crate) fn argmax_norm(spec: &[Cplx]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (k, z) in spec.iter().enumerate() {
        let m = z.norm_sqr();
        if m > best.1 {
            best = (k, m);
        }
    }
    (best.0, best.1.sqrt())
}

/// Demodulates a single-symbol buffer: dechirp, optional frequency
/// correction, decimate to `bw`, FFT of length `2^sf`, argmax.
pub fn demodulate_symbol(
    iq: &IqBuffer,
    params: &LoRaParams,
    freq_correction_hz: f64,
) -> Result<(usize, f64)> {
    if (iq.sample_rate_hz - params.sample_rate_hz).abs() > 1e-6 {
        return Err(Error::Framing(format!(
            "buffer sampled at {} Hz, parameters expect {} Hz",
            iq.sample_rate_hz, params.sample_rate_hz
        )));
    }
    let d = Demodulator::new(params)?.symbol(&iq.samples, freq_correction_hz)?;
    Ok((d.bin, d.peak_magnitude))
}

/// Demodulates a clean, aligned packet back to its payload bytes.
pub fn demodulate_packet(iq: &IqBuffer, params: &LoRaParams, payload_len: usize) -> Result<Vec<u8>> {
    let demod = Demodulator::new(params)?;
    let n_data = params.data_symbols(payload_len);
    let offset = params.header_symbols() * params.samples_per_symbol();
    let decisions = demod.symbols(&iq.samples, offset, n_data, |_| 0.0)?;
    let bins: Vec<usize> = decisions.iter().map(|d| d.bin).collect();
    Ok(symbols_to_bytes(&bins, params.sf, payload_len))
}

fn check_symbol(symbol: usize, sf: u8) -> Result<()> {
    let n = 1usize << sf;
    if symbol >= n {
        return Err(Error::OutOfRange {
            what: "symbol",
            value: symbol as f64,
            min: 0.0,
            max: (n - 1) as f64,
        });
    }
    Ok(())
}

/// Plain binary, MSB-first `sf`-bit representation of a bin index.
pub fn bin_to_bits(bin: usize, sf: u8) -> Result<Vec<bool>> {
    check_symbol(bin, sf)?;
    Ok((0..sf).rev().map(|b| (bin >> b) & 1 == 1).collect())
}

pub fn bits_to_bin(bits: &[bool]) -> Result<usize> {
    if bits.is_empty() || bits.len() > 16 {
        return Err(Error::invalid(format!("cannot map {} bits to a bin", bits.len())));
    }
    Ok(bits.iter().fold(0, |acc, &b| (acc << 1) | b as usize))
}

/// Packs bytes MSB-first into `sf`-bit symbols, zero-padding the last one.
pub fn bytes_to_symbols(bytes: &[u8], sf: u8) -> Vec<usize> {
    let sf = sf as usize;
    let total_bits = 8 * bytes.len();
    let bit = |i: usize| (bytes[i / 8] >> (7 - i % 8)) & 1;
    (0..total_bits.div_ceil(sf))
        .map(|k| {
            (0..sf).fold(0usize, |acc, j| {
                let i = k * sf + j;
                (acc << 1) | if i < total_bits { bit(i) as usize } else { 0 }
            })
        })
        .collect()
}

pub fn symbols_to_bytes(symbols: &[usize], sf: u8, n_bytes: usize) -> Vec<u8> {
    let sf = sf as usize;
    let mut out = vec![0u8; n_bytes];
    for i in 0..(8 * n_bytes).min(symbols.len() * sf) {
        let s = symbols[i / sf];
        let b = (s >> (sf - 1 - i % sf)) & 1;
        out[i / 8] |= (b as u8) << (7 - i % 8);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn shifted(iq: &IqBuffer, hz: f64) -> Vec<Cplx> {
        let step = 2.0 * std::f64::consts::PI * hz / iq.sample_rate_hz;
        iq.samples
            .iter()
            .enumerate()
            .map(|(i, z)| z * Cplx::from_polar(1.0, step * i as f64))
            .collect()
    }

    #[test]
    fn definition_arithmetic() {
        let p = LoRaParams::default();
        assert_relative_eq!(p.symbol_duration_s(), 4.096e-3);
        assert_relative_eq!(p.bin_spacing_hz(), 244.140625);
        assert_eq!(p.samples_per_symbol(), 1024);
        assert_eq!(p.sync_bins(), vec![32, 64]);
    }

    #[test]
    fn equal_slope_across_sf_and_bandwidth() {
        for sf in 7..=10u32 {
            for bw in [62_500.0, 125_000.0] {
                assert_relative_eq!(chirp_slope(sf + 2, 2.0 * bw), chirp_slope(sf, bw));
            }
        }
    }

    #[test]
    fn base_upchirp_sweeps_the_band() {
        let p = LoRaParams::default();
        let iq = modulate_symbol(0, &p).unwrap();
        let fs = p.sample_rate_hz;
        let inst = |i: usize| {
            (iq.samples[i + 1] * iq.samples[i].conj()).arg() * fs / (2.0 * std::f64::consts::PI)
        };
        assert!((inst(0) + p.bw_hz / 2.0).abs() < 2.0 * p.bin_spacing_hz());
        let last = iq.len() - 2;
        assert!((inst(last) - p.bw_hz / 2.0).abs() < 2.0 * p.bin_spacing_hz());
        assert!((1..last).all(|i| inst(i) > inst(i - 1)));
    }

    #[test]
    fn samples_have_unit_magnitude() {
        let p = LoRaParams::default();
        for s in [0, 1, 100, 255] {
            let iq = modulate_symbol(s, &p).unwrap();
            assert!(iq.samples.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn exhaustive_round_trip_sf8() {
        for os in [1, 4] {
            let p = LoRaParams::default().with_oversampling(os);
            let demod = Demodulator::new(&p).unwrap();
            for s in 0..p.n_bins() {
                let iq = modulate_symbol(s, &p).unwrap();
                let d = demod.symbol(&iq.samples, 0.0).unwrap();
                assert_eq!(d.bin, s);
                assert!(d.peak_magnitude > 0.95, "{s}: {}", d.peak_magnitude);
            }
        }
    }

    #[test]
    fn top_symbol_wraps() {
        let p = LoRaParams::default();
        let iq = modulate_symbol(255, &p).unwrap();
        assert_eq!(demodulate_symbol(&iq, &p, 0.0).unwrap().0, 255);
        assert!(modulate_symbol(256, &p).is_err());
    }

    #[test]
    fn one_bin_shift_moves_decision() {
        let p = LoRaParams::default();
        let demod = Demodulator::new(&p).unwrap();
        for s in [0, 17, 128, 255] {
            let iq = modulate_symbol(s, &p).unwrap();
            let moved = shifted(&iq, p.bin_spacing_hz());
            assert_eq!(demod.symbol(&moved, 0.0).unwrap().bin, (s + 1) % 256);
            // correcting the offset restores the symbol
            assert_eq!(demod.symbol(&moved, p.bin_spacing_hz()).unwrap().bin, s);
        }
    }

    #[test]
    fn half_bin_shift_leaks() {
        let p = LoRaParams::default();
        let demod = Demodulator::new(&p).unwrap();
        let s = 40;
        let clean = demod.symbol(&modulate_symbol(s, &p).unwrap().samples, 0.0).unwrap();
        let iq = modulate_symbol(s, &p).unwrap();
        let d = demod.symbol(&shifted(&iq, 0.5 * p.bin_spacing_hz()), 0.0).unwrap();
        assert!(d.bin == s || d.bin == s + 1);
        // sinc(1/2) = 2/π
        assert!(d.peak_magnitude < 0.7 * clean.peak_magnitude);
        assert!(d.peak_magnitude > 0.6 * clean.peak_magnitude);
    }

    #[test]
    fn wrong_buffer_length_is_framing_error() {
        let p = LoRaParams::default();
        let iq = IqBuffer::new(vec![Cplx::new(1.0, 0.0); 100], p.sample_rate_hz).unwrap();
        assert!(matches!(demodulate_symbol(&iq, &p, 0.0), Err(Error::Framing(_))));
    }

    #[test]
    fn packet_layout_and_airtime() {
        let p = LoRaParams::default();
        let empty = PacketFrame::new(vec![], p).unwrap();
        assert_eq!(empty.symbols(), vec![0, 0, 0, 0, 0, 0, 0, 0, 32, 64]);
        let full = PacketFrame::new(vec![0xA5; 256], p).unwrap();
        assert_eq!(p.data_symbols(256), 256);
        assert_eq!(full.symbols().len(), 266);
        assert!((p.airtime_s(256) - 1.0895).abs() < 1e-3);
        let iq = modulate_packet(&full).unwrap();
        assert_eq!(iq.len(), 266 * 1024);
        assert_relative_eq!(iq.duration_s(), p.airtime_s(256), max_relative = 1e-12);
        assert!(PacketFrame::new(vec![0; 257], p).is_err());
    }

    #[test]
    fn packet_round_trip() {
        let p = LoRaParams::default();
        let payload: Vec<u8> = (0..=255).collect();
        let iq = modulate_packet(&PacketFrame::new(payload.clone(), p).unwrap()).unwrap();
        assert_eq!(demodulate_packet(&iq, &p, payload.len()).unwrap(), payload);
        let p7 = LoRaParams::new(7, 125_000.0).unwrap();
        let msg = b"hello from orbit".to_vec();
        let iq = modulate_packet(&PacketFrame::new(msg.clone(), p7).unwrap()).unwrap();
        assert_eq!(demodulate_packet(&iq, &p7, msg.len()).unwrap(), msg);
    }

    #[test]
    fn bin_bit_mapping() {
        assert_eq!(bin_to_bits(0, 8).unwrap(), vec![false; 8]);
        assert_eq!(bin_to_bits(255, 8).unwrap(), vec![true; 8]);
        assert_eq!(bin_to_bits(1, 8).unwrap()[7], true);
        assert!(bin_to_bits(256, 8).is_err());
        for b in 0..256 {
            assert_eq!(bits_to_bin(&bin_to_bits(b, 8).unwrap()).unwrap(), b);
            let diff = (b ^ (b ^ 128)).count_ones();
            assert_eq!(diff, 1);
        }
        // cyclically adjacent bins differ in 2 - 2^(1-sf) bits on average
        for sf in 7..=12u8 {
            let n = 1usize << sf;
            let total: u32 = (0..n).map(|b| (b ^ ((b + 1) % n)).count_ones()).sum();
            assert_relative_eq!(total as f64 / n as f64, 2.0 - 2f64.powi(1 - sf as i32));
        }
    }

    #[test]
    fn byte_symbol_packing() {
        assert_eq!(bytes_to_symbols(&[0xFF, 0x00], 8), vec![255, 0]);
        assert_eq!(bytes_to_symbols(&[0b1010_0000], 7), vec![0b1010000, 0]);
        let bytes: Vec<u8> = (0..37).map(|i| (i * 73 + 5) as u8).collect();
        for sf in 7..=12 {
            let syms = bytes_to_symbols(&bytes, sf);
            assert_eq!(syms.len(), (8 * bytes.len()).div_ceil(sf as usize));
            assert_eq!(symbols_to_bytes(&syms, sf, bytes.len()), bytes);
        }
    }
}
