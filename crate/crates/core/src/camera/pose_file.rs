//! RealEstate10K-style pose text files.
//!
//! One frame per line:
//!
//! ```text
//! timestamp fx fy cx cy k1 k2 r00 r01 r02 t0 r10 r11 r12 t1 r20 r21 r22 t2
//! ```
//!
//! Intrinsics are normalized by the image width/height, the extrinsic block
//! is the world→camera `[R|T]` in row-major order and `k1 k2` are the two
//! (normally zero) distortion slots. An optional first line holding a single
//! token (the source URL in the original dataset) is kept as a header.
//! Floats are written in Rust's shortest round-trip form, so parse → write
//! → parse reproduces every value bit for bit.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};

use super::{CameraIntrinsics, CameraPose, PoseSequence};
use crate::error::{Error, Result};
use crate::scalar::Real;

const FIELDS: usize = 19;

#[derive(Debug, Clone, PartialEq)]
pub struct PoseRecord {
    pub timestamp: u64,
    /// Normalized `fx, fy, cx, cy`.
    pub intrinsics: [f64; 4],
    pub distortion: [f64; 2],
    /// Row-major `[R|T]`.
    pub extrinsics: [[f64; 4]; 3],
}

impl PoseRecord {
    pub fn rotation(&self) -> Matrix3<f64> {
        let e = &self.extrinsics;
        Matrix3::new(e[0][0], e[0][1], e[0][2], e[1][0], e[1][1], e[1][2], e[2][0], e[2][1], e[2][2])
    }

    pub fn translation(&self) -> Vector3<f64> {
        let e = &self.extrinsics;
        Vector3::new(e[0][3], e[1][3], e[2][3])
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PoseFile {
    pub header: Option<String>,
    pub records: Vec<PoseRecord>,
}

fn parse_record(line: &str, lineno: usize) -> Result<PoseRecord> {
    let toks: Vec<&str> = line.split_whitespace().collect();
    if toks.len() != FIELDS {
        return Err(Error::Parse { line: lineno, msg: format!("expected {FIELDS} fields, found {}", toks.len()) });
    }
    let timestamp = toks[0]
        .parse::<u64>()
        .map_err(|e| Error::Parse { line: lineno, msg: format!("timestamp {:?}: {e}", toks[0]) })?;
    let mut vals = [0.0f64; FIELDS - 1];
    for (slot, tok) in vals.iter_mut().zip(&toks[1..]) {
        *slot = tok.parse::<f64>().map_err(|e| Error::Parse { line: lineno, msg: format!("value {tok:?}: {e}") })?;
        if !slot.is_finite() {
            return Err(Error::Parse { line: lineno, msg: format!("non-finite value {tok:?}") });
        }
    }
    let mut extrinsics = [[0.0; 4]; 3];
    for (r, row) in extrinsics.iter_mut().enumerate() {
        row.copy_from_slice(&vals[6 + 4 * r..10 + 4 * r]);
    }
    Ok(PoseRecord {
        timestamp,
        intrinsics: [vals[0], vals[1], vals[2], vals[3]],
        distortion: [vals[4], vals[5]],
        extrinsics,
    })
}

impl PoseFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut header = None;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if records.is_empty() && header.is_none() && trimmed.split_whitespace().count() == 1 {
                header = Some(trimmed.to_string());
                continue;
            }
            records.push(parse_record(trimmed, i + 1)?);
        }
        Ok(Self { header, records })
    }

    pub fn read(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(h) = &self.header {
            out.push_str(h);
            out.push('\n');
        }
        for r in &self.records {
            let _ = write!(out, "{}", r.timestamp);
            for v in r.intrinsics.iter().chain(&r.distortion) {
                let _ = write!(out, " {v}");
            }
            for row in &r.extrinsics {
                for v in row {
                    let _ = write!(out, " {v}");
                }
            }
            out.push('\n');
        }
        out
    }

    /// Builds a pose sequence with the first frame's intrinsics scaled to
    /// `width × height`. With `repair`, slightly non-orthonormal rotations are
    /// projected back onto SO(3).
    pub fn to_sequence<T: Real>(&self, width: usize, height: usize, repair: bool) -> Result<PoseSequence<T>> {
        let first = self.records.first().ok_or_else(|| Error::EmptyInput("pose file has no frames".into()))?;
        let [fx, fy, cx, cy] = first.intrinsics.map(T::lit);
        let intrinsics = CameraIntrinsics::from_normalized(fx, fy, cx, cy, width, height)?;
        let poses = self
            .records
            .iter()
            .map(|r| {
                let rot = r.rotation().map(T::lit);
                let t = r.translation().map(T::lit);
                if repair {
                    CameraPose::new_repaired(rot, t)
                } else {
                    CameraPose::new(rot, t)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        PoseSequence::new(poses, intrinsics)
    }

    /// Inverse of [`PoseFile::to_sequence`]. Timestamps default to the frame
    /// index when `timestamps` is shorter than the sequence.
    pub fn from_sequence<T: Real>(seq: &PoseSequence<T>, timestamps: &[u64], header: Option<String>) -> Self {
        let intrinsics = seq.intrinsics().normalized().map(|v| v.as_f64());
        let records = seq
            .poses()
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let (r, t) = (p.rotation(), p.translation());
                let mut extrinsics = [[0.0; 4]; 3];
                for (row, e) in extrinsics.iter_mut().enumerate() {
                    *e = [r[(row, 0)].as_f64(), r[(row, 1)].as_f64(), r[(row, 2)].as_f64(), t[row].as_f64()];
                }
                PoseRecord {
                    timestamp: timestamps.get(i).copied().unwrap_or(i as u64),
                    intrinsics,
                    distortion: [0.0, 0.0],
                    extrinsics,
                }
            })
            .collect();
        Self { header, records }
    }

    pub fn timestamps(&self) -> Vec<u64> {
        self.records.iter().map(|r| r.timestamp).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SAMPLE: &str = "https://www.youtube.com/watch?v=abc\n\
        52553000 0.48 0.853 0.5 0.5 0 0 1 0 0 0.1 0 1 0 -0.25 0 0 1 3\n\
        52586000 0.48 0.853 0.5 0.5 0 0 0 -1 0 0 1 0 0 0 0 0 1 0\n";

    #[test]
    fn parses_header_and_records() {
        let f = PoseFile::parse(SAMPLE).unwrap();
        assert_eq!(f.header.as_deref(), Some("https://www.youtube.com/watch?v=abc"));
        assert_eq!(f.records.len(), 2);
        assert_eq!(f.records[0].timestamp, 52553000);
        assert_eq!(f.records[0].translation(), Vector3::new(0.1, -0.25, 3.0));
        assert_eq!(f.records[1].rotation()[(0, 1)], -1.0);
        assert_eq!(f.to_text(), SAMPLE);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(matches!(PoseFile::parse("1 2 3\n4 5 6"), Err(Error::Parse { line: 1, .. })));
        let bad = "0 0.5 0.5 0.5 0.5 0 0 1 0 0 0 0 1 0 0 0 0 1 nan\n";
        assert!(PoseFile::parse(bad).is_err());
    }

    #[test]
    fn converts_to_pixel_intrinsics() {
        let f = PoseFile::parse(SAMPLE).unwrap();
        let seq = f.to_sequence::<f64>(256, 256, false).unwrap();
        assert_eq!(seq.len(), 2);
        assert_eq!(seq.intrinsics().fx, 0.48 * 256.0);
        let back = PoseFile::from_sequence(&seq, &f.timestamps(), f.header.clone());
        assert_eq!(back.records[1].extrinsics, f.records[1].extrinsics);
    }

    proptest! {
        #[test]
        fn text_round_trip_is_bit_exact(
            ts in any::<u64>(),
            vals in proptest::collection::vec(-1e6f64..1e6, 18),
        ) {
            let mut extrinsics = [[0.0; 4]; 3];
            for (r, row) in extrinsics.iter_mut().enumerate() {
                row.copy_from_slice(&vals[6 + 4 * r..10 + 4 * r]);
            }
            let file = PoseFile {
                header: None,
                records: vec![PoseRecord {
                    timestamp: ts,
                    intrinsics: [vals[0], vals[1], vals[2], vals[3]],
                    distortion: [vals[4], vals[5]],
                    extrinsics,
                }],
            };
            let text = file.to_text();
            let parsed = PoseFile::parse(&text).unwrap();
            prop_assert_eq!(&parsed, &file);
            prop_assert_eq!(parsed.to_text(), text);
        }
    }
}
