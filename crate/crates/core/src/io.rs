//! On-disk formats.
//!
//! | data | format |
//! |---|---|
//! | [`DopplerCurve`] | CSV `t_s,doppler_hz` |
//! | [`IqBuffer`] | little-endian interleaved `f32` I,Q pairs, JSON sidecar |
//! | [`DetectionResult`] | JSON lines, one record per packet |
//! | [`ErrorTrace`] | `#`-prefixed JSON header block, then CSV `symbol_index,true_bin,decoded_bin,offset` |
//! | [`BitMask`] collections | packed bits, LSB first within each byte, JSON sidecar |
//! | [`GroundStationCatalog`] | CSV `id,lat_deg,lon_deg,alt_m,network` |
//! | latency series | CSV `t_s,latency_s` |
//!
//! Sidecars live next to the binary file with `.json` appended to its name.
//! Any other record (trajectory estimates, summaries) is plain JSON.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::detect::DetectionResult;
use crate::errmodel::{BitMask, ErrorTrace, SymbolOutcome, TraceHeader};
use crate::netplan::{GroundStation, GroundStationCatalog};
use crate::orbit::DopplerCurve;
use crate::phy::{IqBuffer, LoRaParams};
use crate::{Cplx, Error, Result};

/// JSON has no infinities or NaN; these are written as the strings `"inf"`,
/// `"-inf"` and `"nan"`.
pub(crate) mod nonfinite {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" | "+inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("not a number: {other}"))),
            },
        }
    }
}

/// `path` with `.json` appended to the file name.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".json");
    path.with_file_name(name)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Parse(format!("{other:?}")),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

fn write_rows<T: Serialize>(w: impl Write, rows: impl IntoIterator<Item = T>, header: &[&str]) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(header).map_err(csv_err)?;
    for r in rows {
        out.serialize(r).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

fn read_rows<T: DeserializeOwned>(r: impl Read, header: &[&str]) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(r);
    let found: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(str::to_owned).collect();
    if found != header {
        return Err(Error::Parse(format!("expected CSV header {header:?}, found {found:?}")));
    }
    rdr.deserialize().map(|r| r.map_err(csv_err)).collect()
}

const CURVE_HEADER: [&str; 2] = ["t_s", "doppler_hz"];

pub fn write_doppler_curve(w: impl Write, curve: &DopplerCurve) -> Result<()> {
    write_rows(w, curve.iter(), &CURVE_HEADER)
}

pub fn read_doppler_curve(r: impl Read) -> Result<DopplerCurve> {
    let rows: Vec<(f64, f64)> = read_rows(r, &CURVE_HEADER)?;
    let (t, d) = rows.into_iter().unzip();
    DopplerCurve::new(t, d)
}

pub fn save_doppler_curve(path: &Path, curve: &DopplerCurve) -> Result<()> {
    write_doppler_curve(create(path)?, curve)
}

pub fn load_doppler_curve(path: &Path) -> Result<DopplerCurve> {
    read_doppler_curve(File::open(path)?)
}

/// Radio parameters carried by an IQ sidecar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IqParams {
    pub sf: u8,
    pub bw_hz: f64,
    pub carrier_hz: f64,
    pub preamble_len: usize,
    pub sync_len: usize,
}

impl From<&LoRaParams> for IqParams {
    fn from(p: &LoRaParams) -> Self {
        Self {
            sf: p.sf,
            bw_hz: p.bw_hz,
            carrier_hz: p.carrier_hz,
            preamble_len: p.preamble_len,
            sync_len: p.sync_len,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IqMetadata {
    pub sample_rate_hz: f64,
    pub center_offset_hz: f64,
    pub params: IqParams,
}

impl IqMetadata {
    /// Full modem parameters at the recorded sample rate.
    pub fn lora_params(&self) -> Result<LoRaParams> {
        let p = LoRaParams {
            sf: self.params.sf,
            bw_hz: self.params.bw_hz,
            carrier_hz: self.params.carrier_hz,
            preamble_len: self.params.preamble_len,
            sync_len: self.params.sync_len,
            sample_rate_hz: self.sample_rate_hz,
        };
        p.validate()?;
        Ok(p)
    }
}

/// Writes samples as `f32` pairs to `path` and the metadata to its sidecar.
pub fn save_iq(path: &Path, iq: &IqBuffer, params: &LoRaParams) -> Result<()> {
    let mut w = create(path)?;
    for z in &iq.samples {
        w.write_all(&(z.re as f32).to_le_bytes())?;
        w.write_all(&(z.im as f32).to_le_bytes())?;
    }
    w.flush()?;
    write_json(
        &sidecar_path(path),
        &IqMetadata {
            sample_rate_hz: iq.sample_rate_hz,
            center_offset_hz: iq.center_offset_hz,
            params: params.into(),
        },
    )
}

pub fn load_iq(path: &Path) -> Result<(IqBuffer, IqMetadata)> {
    let meta: IqMetadata = read_json(&sidecar_path(path))?;
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Framing(format!("{} bytes is not a whole number of f32 pairs", bytes.len())));
    }
    let f = |b: &[u8]| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64;
    let samples = bytes.chunks_exact(8).map(|c| Cplx::new(f(&c[..4]), f(&c[4..]))).collect();
    let mut iq = IqBuffer::new(samples, meta.sample_rate_hz)?;
    iq.center_offset_hz = meta.center_offset_hz;
    Ok((iq, meta))
}

/// One JSON record per line.
pub fn write_detections(mut w: impl Write, results: &[DetectionResult]) -> Result<()> {
    for r in results {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_detections(r: impl Read) -> Result<Vec<DetectionResult>> {
    BufReader::new(r)
        .lines()
        .filter(|l| !matches!(l, Ok(s) if s.trim().is_empty()))
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect()
}

const TRACE_HEADER: [&str; 4] = ["symbol_index", "true_bin", "decoded_bin", "offset"];

pub fn write_error_trace(mut w: impl Write, trace: &ErrorTrace) -> Result<()> {
    let header = serde_json::to_string_pretty(&trace.header)?;
    for line in header.lines() {
        writeln!(w, "# {line}")?;
    }
    write_rows(w, &trace.symbols, &TRACE_HEADER)
}

pub fn read_error_trace(r: impl Read) -> Result<ErrorTrace> {
    let mut text = String::new();
    BufReader::new(r).read_to_string(&mut text)?;
    let header_json: String = text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .map(|l| l.trim_start_matches('#').trim_start_matches(' '))
        .collect::<Vec<_>>()
        .join("\n");
    if header_json.is_empty() {
        return Err(Error::Parse("error trace has no header block".into()));
    }
    let header: TraceHeader = serde_json::from_str(&header_json)?;
    let symbols: Vec<SymbolOutcome> = read_rows(text.as_bytes(), &TRACE_HEADER)?;
    let n = header.params.n_bins();
    for s in &symbols {
        if s.true_bin >= n || s.decoded_bin >= n || s.offset != crate::errmodel::signed_offset(s.true_bin, s.decoded_bin, n) {
            return Err(Error::Parse(format!("inconsistent trace row {}", s.symbol_index)));
        }
    }
    Ok(ErrorTrace { header, symbols })
}

pub fn save_error_trace(path: &Path, trace: &ErrorTrace) -> Result<()> {
    write_error_trace(create(path)?, trace)
}

pub fn load_error_trace(path: &Path) -> Result<ErrorTrace> {
    read_error_trace(File::open(path)?)
}

pub const BITMASK_FORMAT: &str = "satlora-bitmask";

/// Sidecar of a packed mask file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BitMaskMetadata {
    pub format: String,
    pub version: u32,
    pub count: usize,
    pub bits_per_mask: usize,
    /// Each mask starts on a byte boundary.
    pub bytes_per_mask: usize,
    /// Always `"lsb_first"`: payload bit `i` of a mask is bit `i % 8` of byte `i / 8`.
    pub bit_order: String,
    /// Where the masks came from, free form.
    pub source: serde_json::Value,
}

pub fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        out[i / 8] |= (b as u8) << (i % 8);
    }
    out
}

pub fn unpack_bits(bytes: &[u8], n_bits: usize) -> Result<Vec<bool>> {
    if bytes.len() * 8 < n_bits {
        return Err(Error::Framing(format!("{} bytes cannot hold {n_bits} bits", bytes.len())));
    }
    Ok((0..n_bits).map(|i| (bytes[i / 8] >> (i % 8)) & 1 == 1).collect())
}

pub fn save_bit_masks(path: &Path, masks: &[BitMask], source: serde_json::Value) -> Result<BitMaskMetadata> {
    let bits = masks.first().map_or(0, BitMask::len);
    if masks.iter().any(|m| m.len() != bits) {
        return Err(Error::invalid("all masks in a file must have the same length"));
    }
    let mut w = create(path)?;
    for m in masks {
        w.write_all(&pack_bits(&m.flips))?;
    }
    w.flush()?;
    let meta = BitMaskMetadata {
        format: BITMASK_FORMAT.into(),
        version: 1,
        count: masks.len(),
        bits_per_mask: bits,
        bytes_per_mask: bits.div_ceil(8),
        bit_order: "lsb_first".into(),
        source,
    };
    write_json(&sidecar_path(path), &meta)?;
    Ok(meta)
}

pub fn load_bit_masks(path: &Path) -> Result<(Vec<BitMask>, BitMaskMetadata)> {
    let meta: BitMaskMetadata = read_json(&sidecar_path(path))?;
    if meta.format != BITMASK_FORMAT || meta.bit_order != "lsb_first" {
        return Err(Error::Parse(format!("unsupported mask file {} / {}", meta.format, meta.bit_order)));
    }
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() != meta.count * meta.bytes_per_mask || meta.bytes_per_mask != meta.bits_per_mask.div_ceil(8) {
        return Err(Error::Framing(format!(
            "{} bytes does not match {} masks of {} bytes",
            bytes.len(),
            meta.count,
            meta.bytes_per_mask
        )));
    }
    let masks = if meta.bytes_per_mask == 0 {
        vec![
            BitMask {
                flips: Vec::new(),
                trace_seed: None
            };
            meta.count
        ]
    } else {
        bytes
            .chunks_exact(meta.bytes_per_mask)
            .map(|c| {
                Ok(BitMask {
                    flips: unpack_bits(c, meta.bits_per_mask)?,
                    trace_seed: None,
                })
            })
            .collect::<Result<_>>()?
    };
    Ok((masks, meta))
}

const CATALOG_HEADER: [&str; 5] = ["id", "lat_deg", "lon_deg", "alt_m", "network"];

pub fn write_catalog(w: impl Write, catalog: &GroundStationCatalog) -> Result<()> {
    write_rows(w, &catalog.stations, &CATALOG_HEADER)
}

pub fn read_catalog(r: impl Read) -> Result<GroundStationCatalog> {
    let stations: Vec<GroundStation> = read_rows(r, &CATALOG_HEADER)?;
    GroundStationCatalog::new(stations)
}

pub fn save_catalog(path: &Path, catalog: &GroundStationCatalog) -> Result<()> {
    write_catalog(create(path)?, catalog)
}

pub fn load_catalog(path: &Path) -> Result<GroundStationCatalog> {
    read_catalog(File::open(path)?)
}

const LATENCY_HEADER: [&str; 2] = ["t_s", "latency_s"];

pub fn write_latency_series(w: impl Write, series: &[(f64, f64)]) -> Result<()> {
    write_rows(w, series, &LATENCY_HEADER)
}

pub fn read_latency_series(r: impl Read) -> Result<Vec<(f64, f64)>> {
    read_rows(r, &LATENCY_HEADER)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::errmodel::{random_payload, simulate_packet_errors, DopplerModel, PacketSimConfig};
    use crate::netplan::Network;
    use crate::orbit::{emulate_doppler_curve, OrbitParams, PassGeometry};
    use crate::phy::{modulate_packet, PacketFrame};

    #[test]
    fn doppler_curve_round_trip() {
        let pass = PassGeometry::new(OrbitParams::reference(), 70.0, 5.0).unwrap();
        let curve = emulate_doppler_curve(&pass, 30.0).unwrap();
        let mut buf = Vec::new();
        write_doppler_curve(&mut buf, &curve).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("t_s,doppler_hz\n"));
        assert_eq!(read_doppler_curve(buf.as_slice()).unwrap(), curve);
        assert!(read_doppler_curve("a,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn iq_round_trip_is_f32_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.iq");
        let params = LoRaParams::default();
        let iq = modulate_packet(&PacketFrame::new(vec![1, 2, 3], params).unwrap()).unwrap();
        save_iq(&path, &iq, &params).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len() as usize, iq.len() * 8);
        let (back, meta) = load_iq(&path).unwrap();
        assert_eq!(meta.lora_params().unwrap(), params);
        for (a, b) in iq.samples.iter().zip(&back.samples) {
            assert_eq!(b.re, a.re as f32 as f64);
            assert_eq!(b.im, a.im as f32 as f64);
        }
    }

    #[test]
    fn detections_round_trip() {
        let rs = vec![
            DetectionResult {
                detected: true,
                coarse_doppler_hz: 1234.5,
                fine_doppler_hz: Some(1230.25),
                detection_snr_db: 12.0,
                symbol_start_index: 77,
                correlator_bw_hz: 250e3,
            },
            DetectionResult {
                detected: false,
                coarse_doppler_hz: 0.0,
                fine_doppler_hz: None,
                detection_snr_db: -3.0,
                symbol_start_index: 0,
                correlator_bw_hz: 62.5e3,
            },
        ];
        let mut buf = Vec::new();
        write_detections(&mut buf, &rs).unwrap();
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 2);
        assert_eq!(read_detections(buf.as_slice()).unwrap(), rs);
    }

    #[test]
    fn error_trace_round_trip_with_infinite_snr() {
        let pass = PassGeometry::new(OrbitParams::reference(), 90.0, 0.0).unwrap();
        let cfg = PacketSimConfig::new(
            f64::INFINITY,
            DopplerModel::Pass {
                pass,
                packet_start_s: 300.0,
            },
            4,
        );
        let trace = simulate_packet_errors(&cfg, &LoRaParams::default().with_oversampling(1), &random_payload(32, 4)).unwrap();
        let mut buf = Vec::new();
        write_error_trace(&mut buf, &trace).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# {"));
        assert!(text.contains("\nsymbol_index,true_bin,decoded_bin,offset\n"));
        assert_eq!(read_error_trace(buf.as_slice()).unwrap(), trace);
    }

    #[test]
    fn bits_pack_lsb_first() {
        let bits = [true, false, false, false, false, false, false, false, false, true];
        assert_eq!(pack_bits(&bits), vec![0x01, 0x02]);
        assert_eq!(unpack_bits(&[0x01, 0x02], 10).unwrap(), bits);
        assert!(unpack_bits(&[0x01], 10).is_err());
    }

    #[test]
    fn bit_masks_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("masks.bin");
        let masks: Vec<BitMask> = (0..5)
            .map(|k| BitMask {
                flips: (0..21).map(|i| (i * k) % 3 == 1).collect(),
                trace_seed: None,
            })
            .collect();
        let meta = save_bit_masks(&path, &masks, serde_json::json!({"kind": "test"})).unwrap();
        assert_eq!(meta.bytes_per_mask, 3);
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 15);
        let (back, m2) = load_bit_masks(&path).unwrap();
        assert_eq!(back, masks);
        assert_eq!(m2, meta);
    }

    #[test]
    fn catalog_round_trip() {
        let cat = GroundStationCatalog::new(vec![
            GroundStation::new("a", 40.44, -79.94, 300.0, Network::Ttn).unwrap(),
            GroundStation::new("b", -33.9, 151.2, 0.0, Network::Satnogs).unwrap(),
        ])
        .unwrap();
        let mut buf = Vec::new();
        write_catalog(&mut buf, &cat).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("id,lat_deg,lon_deg,alt_m,network\na,40.44,-79.94,300.0,ttn\n"));
        assert_eq!(read_catalog(buf.as_slice()).unwrap(), cat);
    }

    #[test]
    fn nonfinite_values_survive_json() {
        #[derive(Serialize, Deserialize, PartialEq, Debug)]
        struct S {
            #[serde(with = "nonfinite")]
            v: f64,
        }
        for v in [f64::INFINITY, f64::NEG_INFINITY, -2.5] {
            let text = serde_json::to_string(&S { v }).unwrap();
            assert_eq!(serde_json::from_str::<S>(&text).unwrap(), S { v });
        }
    }
}
