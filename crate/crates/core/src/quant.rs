//! k-bit uniform quantization of values in [−1, 1], the contract shared with
//! the image codec: `2^k` equal cells, midpoint reconstruction, values
//! serialized MSB-first in payload bit order.

use crate::{Error, Result};

pub const MAX_BITS: u32 = 16;

fn check_bits(k: u32) -> Result<()> {
    if (1..=MAX_BITS).contains(&k) {
        Ok(())
    } else {
        Err(Error::invalid(format!("bits per value must be in 1..={MAX_BITS}, got {k}")))
    }
}

/// Cell index of `x`. Inputs outside [−1, 1] saturate to the end cells.
pub fn quantize(x: f64, k: u32) -> Result<u32> {
    check_bits(k)?;
    if x.is_nan() {
        return Err(Error::invalid("cannot quantize NaN"));
    }
    let levels = 1u32 << k;
    let cell = ((x + 1.0) * 0.5 * levels as f64).floor();
    Ok(cell.clamp(0.0, (levels - 1) as f64) as u32)
}

/// Midpoint of cell `level`.
pub fn dequantize(level: u32, k: u32) -> Result<f64> {
    check_bits(k)?;
    let levels = 1u32 << k;
    if level >= levels {
        return Err(Error::OutOfRange {
            what: "level",
            value: level as f64,
            min: 0.0,
            max: (levels - 1) as f64,
        });
    }
    Ok(-1.0 + (level as f64 + 0.5) * 2.0 / levels as f64)
}

/// Expected mean absolute error for inputs uniform on [−1, 1].
pub fn expected_mean_abs_error(k: u32) -> f64 {
    1.0 / (1u64 << (k + 1)) as f64
}

/// Quantizes every value and serializes each level as `k` bits, MSB first.
pub fn levels_to_bits(levels: &[u32], k: u32) -> Result<Vec<bool>> {
    check_bits(k)?;
    let mut bits = Vec::with_capacity(levels.len() * k as usize);
    for &l in levels {
        if l >= 1 << k {
            return Err(Error::invalid(format!("level {l} does not fit in {k} bits")));
        }
        bits.extend((0..k).rev().map(|b| (l >> b) & 1 == 1));
    }
    Ok(bits)
}

pub fn bits_to_levels(bits: &[bool], k: u32) -> Result<Vec<u32>> {
    check_bits(k)?;
    if bits.len() % k as usize != 0 {
        return Err(Error::Framing(format!("{} bits is not a multiple of {k}", bits.len())));
    }
    Ok(bits
        .chunks(k as usize)
        .map(|c| c.iter().fold(0u32, |acc, &b| (acc << 1) | b as u32))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_bit_arithmetic() {
        assert_eq!(quantize(0.3, 1).unwrap(), 1);
        assert_eq!(dequantize(1, 1).unwrap(), 0.5);
        assert_eq!(quantize(-0.3, 1).unwrap(), 0);
        assert_eq!(dequantize(0, 1).unwrap(), -0.5);
    }

    #[test]
    fn edges_saturate() {
        assert_eq!(quantize(1.0, 4).unwrap(), 15);
        assert_eq!(quantize(-1.0, 4).unwrap(), 0);
        assert_eq!(quantize(7.0, 4).unwrap(), 15);
        assert!(quantize(f64::NAN, 4).is_err());
        assert!(quantize(0.0, 0).is_err());
        assert!(dequantize(16, 4).is_err());
    }

    #[test]
    fn midpoints_are_fixed_points() {
        for k in [1, 2, 4, 8] {
            for l in 0..(1u32 << k) {
                let m = dequantize(l, k).unwrap();
                assert_eq!(quantize(m, k).unwrap(), l);
            }
        }
    }

    #[test]
    fn bit_serialization_round_trip() {
        let levels = [0u32, 5, 15, 9];
        let bits = levels_to_bits(&levels, 4).unwrap();
        assert_eq!(&bits[4..8], &[false, true, false, true]);
        assert_eq!(bits_to_levels(&bits, 4).unwrap(), levels);
        assert!(bits_to_levels(&bits[..5], 4).is_err());
        assert!(levels_to_bits(&[16], 4).is_err());
    }
}
