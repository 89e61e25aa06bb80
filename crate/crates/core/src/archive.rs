//! Containers for intermediate pipeline artifacts: recordings and scalograms.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{self, PayloadReader};
use crate::error::{Error, Result};
use crate::siggen::Recording;
use crate::tfr::TfMatrix;

pub const RECORDINGS_MAGIC: &[u8; 8] = b"MCGRECS\0";
pub const RECORDINGS_VERSION: u16 = 1;
pub const MATRICES_MAGIC: &[u8; 8] = b"MCGTFMS\0";
pub const MATRICES_VERSION: u16 = 1;

#[derive(Serialize, Deserialize)]
struct RecordingMeta {
    len: usize,
    rate: f64,
    position: Option<(usize, usize)>,
    subject_id: String,
    env_field: f64,
    segment_id: usize,
}

pub fn recordings_to_bytes(recs: &[Recording]) -> Result<Vec<u8>> {
    let header: Vec<RecordingMeta> = recs
        .iter()
        .map(|r| RecordingMeta {
            len: r.samples.len(),
            rate: r.rate,
            position: r.position,
            subject_id: r.subject_id.clone(),
            env_field: r.env_field,
            segment_id: r.segment_id,
        })
        .collect();
    let mut payload = Vec::with_capacity(recs.iter().map(|r| r.samples.len() * 8).sum());
    for r in recs {
        container::put_f64s(&mut payload, &r.samples);
    }
    container::encode(RECORDINGS_MAGIC, RECORDINGS_VERSION, &header, &payload)
}

pub fn recordings_from_bytes(bytes: &[u8], origin: &Path) -> Result<Vec<Recording>> {
    let (header, payload): (Vec<RecordingMeta>, _) = container::decode(bytes, RECORDINGS_MAGIC, RECORDINGS_VERSION, origin)?;
    let mut reader = PayloadReader::new(&payload);
    let mut out = Vec::with_capacity(header.len());
    for m in header {
        out.push(Recording {
            samples: reader.f64s(m.len)?,
            rate: m.rate,
            position: m.position,
            subject_id: m.subject_id,
            env_field: m.env_field,
            segment_id: m.segment_id,
        });
    }
    reader.finish()?;
    Ok(out)
}

pub fn save_recordings(recs: &[Recording], path: &Path) -> Result<()> {
    container::write_bytes(path, &recordings_to_bytes(recs)?)
}

pub fn load_recordings(path: &Path) -> Result<Vec<Recording>> {
    recordings_from_bytes(&std::fs::read(path)?, path)
}

#[derive(Serialize, Deserialize)]
struct MatrixMeta {
    t_span: f64,
    position: (usize, usize),
    subject_id: String,
    env_field: f64,
    segment_id: usize,
}

#[derive(Serialize, Deserialize)]
struct MatricesHeader {
    size: usize,
    scale_freqs: Vec<f64>,
    matrices: Vec<MatrixMeta>,
}

/// All matrices must share one size and frequency axis.
pub fn matrices_to_bytes(ms: &[TfMatrix]) -> Result<Vec<u8>> {
    let (size, scale_freqs) = ms.first().map(|m| (m.size, m.scale_freqs.clone())).unwrap_or_default();
    for (i, m) in ms.iter().enumerate() {
        if m.size != size || m.values.len() != size * size || m.scale_freqs != scale_freqs {
            return Err(Error::ShapeMismatch(format!("matrix {i} differs in size or frequency axis from matrix 0")));
        }
    }
    let header = MatricesHeader {
        size,
        scale_freqs,
        matrices: ms
            .iter()
            .map(|m| MatrixMeta {
                t_span: m.t_span,
                position: m.position,
                subject_id: m.subject_id.clone(),
                env_field: m.env_field,
                segment_id: m.segment_id,
            })
            .collect(),
    };
    let mut payload = Vec::with_capacity(ms.len() * size * size * 4);
    for m in ms {
        container::put_f32s(&mut payload, &m.values);
    }
    container::encode(MATRICES_MAGIC, MATRICES_VERSION, &header, &payload)
}

pub fn matrices_from_bytes(bytes: &[u8], origin: &Path) -> Result<Vec<TfMatrix>> {
    let (header, payload): (MatricesHeader, _) = container::decode(bytes, MATRICES_MAGIC, MATRICES_VERSION, origin)?;
    let per = header.size * header.size;
    let mut reader = PayloadReader::new(&payload);
    let mut out = Vec::with_capacity(header.matrices.len());
    for m in header.matrices {
        out.push(TfMatrix {
            values: reader.f32s(per)?,
            size: header.size,
            scale_freqs: header.scale_freqs.clone(),
            t_span: m.t_span,
            position: m.position,
            subject_id: m.subject_id,
            env_field: m.env_field,
            segment_id: m.segment_id,
        });
    }
    reader.finish()?;
    Ok(out)
}

pub fn save_matrices(ms: &[TfMatrix], path: &Path) -> Result<()> {
    container::write_bytes(path, &matrices_to_bytes(ms)?)
}

pub fn load_matrices(path: &Path) -> Result<Vec<TfMatrix>> {
    matrices_from_bytes(&std::fs::read(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(seg: usize) -> Recording {
        Recording {
            samples: (0..50).map(|i| (i as f64 * 0.37 + seg as f64).sin() * 1e-3).collect(),
            rate: 500.0,
            position: if seg == 0 { None } else { Some((seg, 2)) },
            subject_id: format!("S{seg}"),
            env_field: 8_000.0 * seg as f64,
            segment_id: seg,
        }
    }

    fn tf(seg: usize) -> TfMatrix {
        TfMatrix {
            values: (0..9).map(|i| i as f32 / 7.0 + seg as f32).collect(),
            size: 3,
            scale_freqs: vec![10.0, 3.0, 1.0],
            t_span: 2.5,
            position: (seg, 1),
            subject_id: "B".into(),
            env_field: 20_000.0,
            segment_id: seg,
        }
    }

    #[test]
    fn recordings_round_trip() {
        let recs: Vec<_> = (0..3).map(rec).collect();
        let bytes = recordings_to_bytes(&recs).unwrap();
        assert_eq!(recordings_from_bytes(&bytes, Path::new("x")).unwrap(), recs);
    }

    #[test]
    fn matrices_round_trip() {
        let ms: Vec<_> = (0..4).map(tf).collect();
        let bytes = matrices_to_bytes(&ms).unwrap();
        assert_eq!(matrices_from_bytes(&bytes, Path::new("x")).unwrap(), ms);
        assert!(matches!(recordings_from_bytes(&bytes, Path::new("x")), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn mixed_sizes_rejected() {
        let mut b = tf(1);
        b.scale_freqs[0] = 11.0;
        assert!(matrices_to_bytes(&[tf(0), b]).is_err());
    }
}
