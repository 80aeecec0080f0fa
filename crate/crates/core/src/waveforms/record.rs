//! `TFSIG001` binary signal records: a 16-byte header (8-byte magic, label
//! byte, 7 zero pad bytes) followed by little-endian `f32` samples.

use std::fs;
use std::path::Path;

use super::SignalClass;
use crate::error::{Error, Result};

pub const RECORD_MAGIC: &[u8; 8] = b"TFSIG001";
pub const RECORD_HEADER_LEN: usize = 16;

pub fn encode_record(label: SignalClass, samples: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(RECORD_HEADER_LEN + 4 * samples.len());
    out.extend_from_slice(RECORD_MAGIC);
    out.push(label.id());
    out.extend_from_slice(&[0u8; 7]);
    for &v in samples {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// Decodes a record. Rejects bad magic, unknown labels, non-zero padding, a payload that is not
/// a whole number of `f32`s, an empty payload, and non-finite samples.
pub fn decode_record(bytes: &[u8]) -> Result<(SignalClass, Vec<f64>)> {
    if bytes.len() < RECORD_HEADER_LEN {
        return Err(Error::Format(format!(
            "signal record is {} bytes, shorter than its {RECORD_HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if &bytes[..8] != RECORD_MAGIC {
        return Err(Error::Format("bad signal record magic".into()));
    }
    let label = SignalClass::from_id(bytes[8])
        .ok_or_else(|| Error::Format(format!("signal record label {} is not a known class", bytes[8])))?;
    if bytes[9..RECORD_HEADER_LEN].iter().any(|&b| b != 0) {
        return Err(Error::Format("signal record header padding is not zero".into()));
    }
    let payload = &bytes[RECORD_HEADER_LEN..];
    if payload.is_empty() || payload.len() % 4 != 0 {
        return Err(Error::Format(format!(
            "signal record payload of {} bytes is not a positive multiple of 4",
            payload.len()
        )));
    }
    let samples = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .map(|v| {
            if v.is_finite() {
                Ok(v as f64)
            } else {
                Err(Error::Format("signal record contains a non-finite sample".into()))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((label, samples))
}

pub fn write_record(path: &Path, label: SignalClass, samples: &[f64]) -> Result<()> {
    fs::write(path, encode_record(label, samples)).map_err(|e| Error::io(path, e))
}

pub fn read_record(path: &Path) -> Result<(SignalClass, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_record(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let bytes = encode_record(SignalClass::Lfm, &[1.0, -0.5]);
        assert_eq!(bytes.len(), 24);
        assert_eq!(&bytes[..8], b"TFSIG001");
        assert_eq!(bytes[8], 2);
        assert_eq!(&bytes[9..16], &[0u8; 7]);
        assert_eq!(&bytes[16..20], &1.0f32.to_le_bytes());
    }

    #[test]
    fn malformed_records_are_rejected() {
        let good = encode_record(SignalClass::Barker, &[0.25; 4]);
        assert!(decode_record(&good[..10]).is_err());
        assert!(decode_record(&good[..18]).is_err());
        assert!(decode_record(&good[..16]).is_err());
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(decode_record(&bad_magic).is_err());
        let mut bad_label = good.clone();
        bad_label[8] = 3;
        assert!(decode_record(&bad_label).is_err());
        let mut nan = good;
        nan[16..20].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(decode_record(&nan).is_err());
    }

    proptest! {
        #[test]
        fn f32_exact_samples_round_trip(
            label in 0u8..3,
            samples in prop::collection::vec(-1e6f32..1e6f32, 1..64),
        ) {
            let label = SignalClass::from_id(label).unwrap();
            let samples: Vec<f64> = samples.into_iter().map(f64::from).collect();
            let (l, s) = decode_record(&encode_record(label, &samples)).unwrap();
            prop_assert_eq!(l, label);
            prop_assert_eq!(s, samples);
        }
    }
}
