//! Random 1-bit quantization and the worker payload wire format.
//!
//! Coordinate `k` of a vector `f` is mapped to `+1` with probability
//! `1/2 + f_k / (2 ||f||)` and to `-1` otherwise. Scaling the signs by `||f||`
//! gives an unbiased estimate of `f` whose squared norm is always
//! `w * ||f||^2`.
//!
//! Wire format of one payload with dimension `w`:
//!
//! ```text
//! [ ceil(w/8) bytes: sign bits, bit k at byte k/8, LSB first, +1 -> 1 ]
//! [ 8 bytes: ||f|| as big-endian IEEE-754 f64                        ]
//! ```
//!
//! Padding bits in the last sign byte are zero.

use rand::Rng;

use crate::error::{Error, Result};
use crate::simulation::Method;

/// Bits carried by one scalar norm unless configured otherwise.
pub const DEFAULT_ZETA: u64 = 64;

/// Sign vector plus norm broadcast by one non-straggling worker.
#[derive(Clone, Debug, PartialEq)]
pub struct WorkerPayload {
    bits: Vec<u8>,
    dim: usize,
    norm: f64,
}

impl WorkerPayload {
    /// Build a payload from explicit signs (`true` is `+1`).
    pub fn from_signs(signs: &[bool], norm: f64) -> Result<Self> {
        if !(norm.is_finite() && norm >= 0.0) {
            return Err(Error::invalid(format!("payload norm {norm} is not a finite nonnegative value")));
        }
        let mut bits = vec![0u8; signs.len().div_ceil(8)];
        for (k, _) in signs.iter().enumerate().filter(|(_, s)| **s) {
            bits[k / 8] |= 1 << (k % 8);
        }
        Ok(Self {
            bits,
            dim: signs.len(),
            norm,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn packed_bits(&self) -> &[u8] {
        &self.bits
    }

    #[inline]
    pub fn is_positive(&self, k: usize) -> bool {
        self.bits[k / 8] >> (k % 8) & 1 == 1
    }

    /// Coordinate `k` as `+1.0` or `-1.0`.
    #[inline]
    pub fn sign(&self, k: usize) -> f64 {
        if self.is_positive(k) {
            1.0
        } else {
            -1.0
        }
    }
}

/// Quantize `f` with one uniform draw per coordinate from `rng`.
///
/// A zero vector yields norm `0` and all-positive signs, which decodes to
/// the zero vector.
pub fn quantize<R: Rng + ?Sized>(f: &[f64], rng: &mut R) -> Result<WorkerPayload> {
    if let Some(k) = f.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("entry {k} of the encoded vector is not finite")));
    }
    let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut bits = vec![0u8; f.len().div_ceil(8)];
    if norm == 0.0 {
        for k in 0..f.len() {
            bits[k / 8] |= 1 << (k % 8);
        }
    } else {
        for (k, v) in f.iter().enumerate() {
            let prob_plus = 0.5 + 0.5 * (v / norm);
            let u: f64 = rng.random();
            if u < prob_plus {
                bits[k / 8] |= 1 << (k % 8);
            }
        }
    }
    Ok(WorkerPayload {
        bits,
        dim: f.len(),
        norm,
    })
}

/// Entries `sign_k * norm`.
pub fn dequantize(p: &WorkerPayload) -> Vec<f64> {
    let mut out = vec![0.0; p.dim];
    add_dequantized(p, &mut out);
    out
}

/// `out += dequantize(p)`.
pub fn add_dequantized(p: &WorkerPayload, out: &mut [f64]) {
    if p.norm == 0.0 {
        return;
    }
    for (k, o) in out.iter_mut().enumerate().take(p.dim) {
        *o += p.sign(k) * p.norm;
    }
}

/// Dimension `w` and bits per real scalar `zeta`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BitBudget {
    pub w: u64,
    pub zeta: u64,
}

impl BitBudget {
    pub fn new(w: u64, zeta: u64) -> Result<Self> {
        if w == 0 {
            return Err(Error::config("w", "must be at least 1"));
        }
        if zeta == 0 {
            return Err(Error::config("zeta", "must be at least 1"));
        }
        Ok(Self { w, zeta })
    }
}

/// Bits sent by one non-straggling worker in one iteration.
pub fn payload_bits(method: Method, budget: BitBudget) -> u64 {
    match method {
        Method::OneBitGc | Method::IgnoreStragglers1Bit => budget.w + budget.zeta,
        Method::Sgc => budget.w * budget.zeta,
    }
}

/// Serialized length for dimension `w`.
pub fn encoded_len(w: usize) -> usize {
    w.div_ceil(8) + 8
}

pub fn encode_payload(p: &WorkerPayload) -> Vec<u8> {
    let mut out = Vec::with_capacity(encoded_len(p.dim));
    out.extend_from_slice(&p.bits);
    out.extend_from_slice(&p.norm.to_be_bytes());
    out
}

pub fn decode_payload(bytes: &[u8], w: usize) -> Result<WorkerPayload> {
    let expected = encoded_len(w);
    if bytes.len() != expected {
        return Err(Error::Codec(format!(
            "expected {expected} bytes for w = {w}, got {}",
            bytes.len()
        )));
    }
    let (bits, norm) = bytes.split_at(w.div_ceil(8));
    if !w.is_multiple_of(8) {
        let padding = bits[bits.len() - 1] >> (w % 8);
        if padding != 0 {
            return Err(Error::Codec("nonzero padding bits".into()));
        }
    }
    let norm = f64::from_be_bytes(norm.try_into().expect("split at fixed offset"));
    if !(norm.is_finite() && norm >= 0.0) {
        return Err(Error::Codec(format!("invalid norm {norm}")));
    }
    Ok(WorkerPayload {
        bits: bits.to_vec(),
        dim: w,
        norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Purpose};
    use proptest::prelude::*;

    #[test]
    fn aligned_coordinate_is_always_positive() {
        let mut s = rng::stream(1, Purpose::Oracle, 0, 0);
        let mut plus = 0usize;
        let draws = 20_000;
        for _ in 0..draws {
            let p = quantize(&[3.0, 0.0], &mut s).unwrap();
            assert!(p.is_positive(0));
            assert_eq!(p.norm(), 3.0);
            plus += p.is_positive(1) as usize;
        }
        // fair coin, 4 sigma
        let sigma = (draws as f64 * 0.25).sqrt();
        assert!((plus as f64 - draws as f64 / 2.0).abs() < 4.0 * sigma);
    }

    #[test]
    fn zero_vector_decodes_to_zero() {
        let mut s = rng::stream(1, Purpose::Oracle, 0, 0);
        let p = quantize(&[0.0; 5], &mut s).unwrap();
        assert_eq!(p.norm(), 0.0);
        assert!((0..5).all(|k| p.is_positive(k)));
        assert_eq!(dequantize(&p), vec![0.0; 5]);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut s = rng::stream(1, Purpose::Oracle, 0, 0);
        assert!(quantize(&[1.0, f64::NAN], &mut s).is_err());
        assert!(quantize(&[f64::INFINITY], &mut s).is_err());
    }

    #[test]
    fn dequantize_all_positive() {
        let p = WorkerPayload::from_signs(&[true; 4], 2.0).unwrap();
        assert_eq!(dequantize(&p), vec![2.0; 4]);
    }

    #[test]
    fn unbiased_per_coordinate() {
        let f = [0.8, -0.3, 0.1, 0.0, -1.2];
        let norm2: f64 = f.iter().map(|v| v * v).sum();
        let draws = 100_000;
        let mut s = rng::stream(5, Purpose::Oracle, 1, 0);
        let mut sum = [0.0; 5];
        for _ in 0..draws {
            let p = quantize(&f, &mut s).unwrap();
            for (acc, v) in sum.iter_mut().zip(dequantize(&p)) {
                *acc += v;
            }
        }
        for k in 0..5 {
            let mean = sum[k] / draws as f64;
            let band = 4.0 * ((norm2 - f[k] * f[k]) / draws as f64).sqrt();
            assert!((mean - f[k]).abs() <= band, "k={k} mean={mean}");
        }
    }

    #[test]
    fn bit_accounting() {
        let b = BitBudget::new(100, 64).unwrap();
        assert_eq!(payload_bits(Method::OneBitGc, b), 164);
        assert_eq!(payload_bits(Method::IgnoreStragglers1Bit, b), 164);
        assert_eq!(payload_bits(Method::Sgc, b), 6400);
        let b = BitBudget::new(1, 1).unwrap();
        assert_eq!(payload_bits(Method::OneBitGc, b), 2);
        assert_eq!(payload_bits(Method::Sgc, b), 1);
        assert!(BitBudget::new(0, 64).is_err());
    }

    #[test]
    fn wire_format_is_lsb_first() {
        let signs = [true, false, true, false, true, false, true, false];
        let p = WorkerPayload::from_signs(&signs, 1.0).unwrap();
        let bytes = encode_payload(&p);
        assert_eq!(bytes.len(), 9);
        assert_eq!(bytes[0], 0x55);
        assert_eq!(&bytes[1..], &1.0f64.to_be_bytes());
    }

    #[test]
    fn ceiling_packing() {
        let p = WorkerPayload::from_signs(&[true, true, true], 0.5).unwrap();
        let bytes = encode_payload(&p);
        assert_eq!(bytes.len(), 9);
        assert_eq!(bytes[0], 0b0000_0111);
    }

    #[test]
    fn malformed_buffers_are_rejected() {
        let p = WorkerPayload::from_signs(&[true, false, true], 0.5).unwrap();
        let bytes = encode_payload(&p);
        assert!(matches!(decode_payload(&bytes[..8], 3), Err(Error::Codec(_))));
        let mut long = bytes.clone();
        long.push(0);
        assert!(decode_payload(&long, 3).is_err());
        let mut padded = bytes.clone();
        padded[0] |= 0b1000_0000;
        assert!(decode_payload(&padded, 3).is_err());
        let mut negative = bytes;
        negative[1..].copy_from_slice(&(-1.0f64).to_be_bytes());
        assert!(decode_payload(&negative, 3).is_err());
    }

    proptest! {
        #[test]
        fn codec_round_trip(signs in proptest::collection::vec(any::<bool>(), 0..200), norm in 0.0f64..1e12) {
            let p = WorkerPayload::from_signs(&signs, norm).unwrap();
            let bytes = encode_payload(&p);
            prop_assert_eq!(bytes.len(), encoded_len(signs.len()));
            prop_assert_eq!(decode_payload(&bytes, signs.len()).unwrap(), p);
        }

        #[test]
        fn decoded_norm_is_sqrt_w_times_norm(f in proptest::collection::vec(-1e3f64..1e3, 1..64), seed in any::<u64>()) {
            let mut s = rng::stream(seed, Purpose::Oracle, 0, 0);
            let p = quantize(&f, &mut s).unwrap();
            let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
            let d = dequantize(&p);
            let sq: f64 = d.iter().map(|v| v * v).sum();
            prop_assert!((sq - f.len() as f64 * norm * norm).abs() <= 1e-9 * (1.0 + sq));
            prop_assert!(d.iter().all(|v| v.abs() == norm));
        }
    }
}
