//! 2x2-window assembly of grid scalograms into 4-channel samples, the
//! train/test split and the binary dataset container.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::container::{self, PayloadReader};
use crate::error::{Error, Result};
use crate::nn::LabeledSet;
use crate::rng;
use crate::siggen::GridSpec;
use crate::tfr::TfMatrix;

pub const DATASET_MAGIC: &[u8; 8] = b"MCGDSET\0";
pub const DATASET_VERSION: u16 = 1;
pub const CHANNELS: usize = 4;

/// Window offsets in channel order: top-left, top-right, bottom-left, bottom-right.
pub const WINDOW_OFFSETS: [(usize, usize); CHANNELS] = [(0, 0), (1, 0), (0, 1), (1, 1)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// `4 x N x N`, channel-major.
    pub channels: Vec<f32>,
    pub label: usize,
    /// Top-left cell `(col, row)` of the window.
    pub window_origin: (usize, usize),
    pub env_field: f64,
    pub segment_id: usize,
}

impl Sample {
    pub fn channel(&self, c: usize, n: usize) -> &[f32] {
        &self.channels[c * n * n..(c + 1) * n * n]
    }

    /// Identifies the recording session the window came from.
    pub fn session_key(&self) -> (usize, u64, usize) {
        (self.label, self.env_field.to_bits(), self.segment_id)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: u64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub subjects: Vec<String>,
    pub tf_size: usize,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, subjects: Vec<String>, tf_size: usize, manifest: Manifest) -> Result<Self> {
        let ds = Dataset { samples, subjects, tf_size, manifest };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::Empty("dataset samples"));
        }
        let want = CHANNELS * self.tf_size * self.tf_size;
        for (i, s) in self.samples.iter().enumerate() {
            if s.channels.len() != want {
                return Err(Error::ShapeMismatch(format!(
                    "sample {i} has {} values, expected {want} (4x{}x{})",
                    s.channels.len(),
                    self.tf_size,
                    self.tf_size
                )));
            }
            if s.label >= self.subjects.len() {
                return Err(Error::LabelOutOfRange { label: s.label, classes: self.subjects.len() });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.subjects.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.subjects.len()];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
            subjects: self.subjects.clone(),
            tf_size: self.tf_size,
            manifest: self.manifest.clone(),
        }
    }
}

/// Scans one session's grid of scalograms with a 2x2 window.
pub fn window_scan(grid_tfs: &BTreeMap<(usize, usize), TfMatrix>, grid: &GridSpec, subjects: &[String]) -> Result<Vec<Sample>> {
    grid.validate()?;
    for (col, row) in grid.cells() {
        if !grid_tfs.contains_key(&(col, row)) {
            return Err(Error::MissingCell { col, row });
        }
    }
    let first = &grid_tfs[&(0, 0)];
    for (pos, m) in grid_tfs {
        if m.subject_id != first.subject_id
            || m.env_field.to_bits() != first.env_field.to_bits()
            || m.segment_id != first.segment_id
        {
            return Err(Error::InconsistentMetadata(format!(
                "cell {pos:?} is ({}, {} nT, seg {}) but (0, 0) is ({}, {} nT, seg {})",
                m.subject_id, m.env_field, m.segment_id, first.subject_id, first.env_field, first.segment_id
            )));
        }
        if m.size != first.size || m.values.len() != first.size * first.size {
            return Err(Error::ShapeMismatch(format!("cell {pos:?} matrix size differs from (0, 0)")));
        }
    }
    let label = subjects
        .iter()
        .position(|s| *s == first.subject_id)
        .ok_or_else(|| Error::InconsistentMetadata(format!("subject `{}` not in subject list", first.subject_id)))?;

    let mut out = Vec::with_capacity((grid.rows - 1) * (grid.cols - 1));
    for row in 0..grid.rows - 1 {
        for col in 0..grid.cols - 1 {
            let mut channels = Vec::with_capacity(CHANNELS * first.values.len());
            for (dc, dr) in WINDOW_OFFSETS {
                channels.extend_from_slice(&grid_tfs[&(col + dc, row + dr)].values);
            }
            out.push(Sample {
                channels,
                label,
                window_origin: (col, row),
                env_field: first.env_field,
                segment_id: first.segment_id,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitMode {
    /// Windows are shuffled individually.
    #[default]
    Sample,
    /// Whole recording sessions go to one side.
    Session,
}

/// Uniform random partition into `train_count` training samples and the rest.
pub fn split(ds: &Dataset, train_count: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if train_count == 0 || train_count >= ds.len() {
        return Err(Error::param("train_count", format!("{train_count} not in 1..{}", ds.len())));
    }
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut rng::stream(seed, &[]));
    let (train, test) = idx.split_at(train_count);
    let (mut train, mut test) = (train.to_vec(), test.to_vec());
    train.sort_unstable();
    test.sort_unstable();
    Ok((ds.subset(&train), ds.subset(&test)))
}

/// Session-level partition: sessions are shuffled and assigned to training
/// until it holds at least `train_count` samples.
pub fn split_by_session(ds: &Dataset, train_count: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if train_count == 0 || train_count >= ds.len() {
        return Err(Error::param("train_count", format!("{train_count} not in 1..{}", ds.len())));
    }
    let mut sessions: BTreeMap<(usize, u64, usize), Vec<usize>> = BTreeMap::new();
    for (i, s) in ds.samples.iter().enumerate() {
        sessions.entry(s.session_key()).or_default().push(i);
    }
    if sessions.len() < 2 {
        return Err(Error::param("split", "session split needs at least two sessions"));
    }
    let mut keys: Vec<_> = sessions.keys().copied().collect();
    keys.shuffle(&mut rng::stream(seed, &[]));
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (n, k) in keys.iter().enumerate() {
        let last = n + 1 == keys.len();
        if train.len() < train_count && !(last && test.is_empty()) {
            train.extend_from_slice(&sessions[k]);
        } else {
            test.extend_from_slice(&sessions[k]);
        }
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((ds.subset(&train), ds.subset(&test)))
}

pub fn split_with(ds: &Dataset, train_count: usize, seed: u64, mode: SplitMode) -> Result<(Dataset, Dataset)> {
    match mode {
        SplitMode::Sample => split(ds, train_count, seed),
        SplitMode::Session => split_by_session(ds, train_count, seed),
    }
}

#[derive(Serialize, Deserialize)]
struct SampleMeta {
    label: usize,
    window_origin: (usize, usize),
    env_field: f64,
    segment_id: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    tf_size: usize,
    n_samples: usize,
    subjects: Vec<String>,
    seed: u64,
    config_hash: u64,
    samples: Vec<SampleMeta>,
}

pub fn to_bytes(ds: &Dataset) -> Result<Vec<u8>> {
    ds.validate()?;
    let header = Header {
        tf_size: ds.tf_size,
        n_samples: ds.len(),
        subjects: ds.subjects.clone(),
        seed: ds.manifest.seed,
        config_hash: ds.manifest.config_hash,
        samples: ds
            .samples
            .iter()
            .map(|s| SampleMeta { label: s.label, window_origin: s.window_origin, env_field: s.env_field, segment_id: s.segment_id })
            .collect(),
    };
    let mut payload = Vec::with_capacity(ds.len() * CHANNELS * ds.tf_size * ds.tf_size * 4);
    for s in &ds.samples {
        container::put_f32s(&mut payload, &s.channels);
    }
    container::encode(DATASET_MAGIC, DATASET_VERSION, &header, &payload)
}

pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Dataset> {
    let (header, payload): (Header, _) = container::decode(bytes, DATASET_MAGIC, DATASET_VERSION, origin)?;
    if header.samples.len() != header.n_samples {
        return Err(Error::Truncated(format!("header lists {} of {} samples", header.samples.len(), header.n_samples)));
    }
    let per = CHANNELS * header.tf_size * header.tf_size;
    let mut reader = PayloadReader::new(&payload);
    let mut samples = Vec::with_capacity(header.n_samples);
    for meta in header.samples {
        samples.push(Sample {
            channels: reader.f32s(per)?,
            label: meta.label,
            window_origin: meta.window_origin,
            env_field: meta.env_field,
            segment_id: meta.segment_id,
        });
    }
    reader.finish()?;
    Dataset::new(samples, header.subjects, header.tf_size, Manifest { config_hash: header.config_hash, seed: header.seed })
}

pub fn save(ds: &Dataset, path: &Path) -> Result<()> {
    container::write_bytes(path, &to_bytes(ds)?)
}

pub fn load(path: &Path) -> Result<Dataset> {
    from_bytes(&std::fs::read(path)?, path)
}

/// Human-readable mirror of the container header.
pub fn manifest_text(ds: &Dataset) -> String {
    let counts = ds.class_counts();
    let envs: BTreeSet<u64> = ds.samples.iter().map(|s| s.env_field.to_bits()).collect();
    let mut s = String::new();
    s.push_str(&format!("format: MCGDSET v{DATASET_VERSION}\n"));
    s.push_str(&format!("tf_size: {}\n", ds.tf_size));
    s.push_str(&format!("samples: {}\n", ds.len()));
    s.push_str(&format!("seed: {}\n", ds.manifest.seed));
    s.push_str(&format!("config_hash: {:016x}\n", ds.manifest.config_hash));
    s.push_str(&format!("env_fields_nT: {:?}\n", envs.iter().map(|b| f64::from_bits(*b)).collect::<Vec<_>>()));
    for (name, c) in ds.subjects.iter().zip(counts) {
        s.push_str(&format!("subject {name}: {c}\n"));
    }
    s
}

impl LabeledSet<f32> for Dataset {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn input(&self, i: usize) -> &[f32] {
        &self.samples[i].channels
    }

    fn label(&self, i: usize) -> usize {
        self.samples[i].label
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tf(pos: (usize, usize), subject: &str, n: usize) -> TfMatrix {
        TfMatrix {
            values: (0..n * n).map(|i| (pos.0 * 100 + pos.1 * 10) as f32 + i as f32 * 1e-3).collect(),
            size: n,
            scale_freqs: (0..n).map(|i| (n - i) as f64).collect(),
            t_span: 3.0,
            position: pos,
            subject_id: subject.into(),
            env_field: 8000.0,
            segment_id: 0,
        }
    }

    fn grid_tfs(grid: &GridSpec, subject: &str) -> BTreeMap<(usize, usize), TfMatrix> {
        grid.cells().map(|p| (p, tf(p, subject, 3))).collect()
    }

    #[test]
    fn window_counts() {
        let subjects = vec!["A".to_string()];
        let g7 = GridSpec::default();
        assert_eq!(window_scan(&grid_tfs(&g7, "A"), &g7, &subjects).unwrap().len(), 36);

        let g2 = GridSpec { rows: 2, cols: 2, spacing: 0.05 };
        let tfs = grid_tfs(&g2, "A");
        let s = window_scan(&tfs, &g2, &subjects).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].channel(0, 3), &tfs[&(0, 0)].values[..]);
        assert_eq!(s[0].channel(1, 3), &tfs[&(1, 0)].values[..]);
        assert_eq!(s[0].channel(2, 3), &tfs[&(0, 1)].values[..]);
        assert_eq!(s[0].channel(3, 3), &tfs[&(1, 1)].values[..]);
    }

    #[test]
    fn window_scan_rejects_mixed_subjects_and_holes() {
        let subjects = vec!["A".to_string(), "B".to_string()];
        let g = GridSpec { rows: 3, cols: 3, spacing: 0.05 };
        let mut tfs = grid_tfs(&g, "A");
        tfs.insert((2, 2), tf((2, 2), "B", 3));
        assert!(matches!(window_scan(&tfs, &g, &subjects), Err(Error::InconsistentMetadata(_))));
        let mut tfs = grid_tfs(&g, "A");
        tfs.remove(&(1, 2));
        assert!(matches!(window_scan(&tfs, &g, &subjects), Err(Error::MissingCell { col: 1, row: 2 })));
    }

    pub(crate) fn toy(n: usize, classes: usize) -> Dataset {
        let samples = (0..n)
            .map(|i| Sample {
                channels: (0..CHANNELS * 4).map(|k| (i * 31 + k) as f32 * 0.25).collect(),
                label: i % classes,
                window_origin: (i % 6, (i / 6) % 6),
                env_field: if i % 2 == 0 { 8000.0 } else { 47000.0 },
                segment_id: i / 36,
            })
            .collect();
        Dataset::new(samples, (0..classes).map(|c| format!("S{c}")).collect(), 2, Manifest { config_hash: 7, seed: 1 }).unwrap()
    }

    #[test]
    fn split_sizes_match_protocol() {
        let ds = toy(3276, 5);
        let (train, test) = split(&ds, 2601, 3).unwrap();
        assert_eq!((train.len(), test.len()), (2601, 675));
    }

    #[test]
    fn split_is_a_deterministic_partition() {
        let ds = toy(100, 3);
        let (a1, b1) = split(&ds, 70, 9).unwrap();
        let (a2, b2) = split(&ds, 70, 9).unwrap();
        assert_eq!(a1, a2);
        assert_eq!(b1, b2);
        let key = |s: &Sample| s.channels[0].to_bits();
        let ta: BTreeSet<u32> = a1.samples.iter().map(key).collect();
        let tb: BTreeSet<u32> = b1.samples.iter().map(key).collect();
        assert!(ta.is_disjoint(&tb));
        assert_eq!(ta.len() + tb.len(), 100);
        assert!(split(&ds, 0, 1).is_err());
        assert!(split(&ds, 100, 1).is_err());
    }

    #[test]
    fn session_split_keeps_sessions_whole() {
        let ds = toy(360, 5);
        let (train, test) = split_by_session(&ds, 280, 4).unwrap();
        assert_eq!(train.len() + test.len(), 360);
        let tr: BTreeSet<_> = train.samples.iter().map(Sample::session_key).collect();
        let te: BTreeSet<_> = test.samples.iter().map(Sample::session_key).collect();
        assert!(tr.is_disjoint(&te));
        assert!(!test.is_empty());
    }

    #[test]
    fn bytes_round_trip() {
        let ds = toy(10, 2);
        let back = from_bytes(&to_bytes(&ds).unwrap(), Path::new("mem")).unwrap();
        assert_eq!(back, ds);
    }
}
