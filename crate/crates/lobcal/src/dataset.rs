//! Persisted calibration datasets: log10 parameters, normalized features,
//! disjoint train/validation/test splits and provenance.
//!
//! File layout (little-endian):
//!
//! ```text
//! magic "LOBCALDS", version u32, header_len u64, header (JSON),
//! theta (n x d f64, row-major), x (n x D f64, row-major)
//! ```

use std::path::Path;

use lobcal_core::features::DataSplit;
use lobcal_core::prior::PriorSpec;
use lobcal_nn::Matrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::ModelKind;
use crate::npe::{FeatureInfo, Samples};

const MAGIC: &[u8; 8] = b"LOBCALDS";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("dataset header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("not a dataset file (bad magic)")]
    BadMagic,
    #[error("unsupported dataset version {0}")]
    Version(u32),
    #[error("dataset file truncated or has trailing bytes")]
    Length,
    #[error("splits are not a disjoint cover of 0..{0}")]
    Splits(usize),
    #[error("content hash mismatch: header says {stored}, data hashes to {actual}")]
    Hash { stored: String, actual: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    /// Proportions 8:1:1 over a given permutation of `0..n`.
    pub fn from_permutation(perm: &[usize]) -> Self {
        let n = perm.len();
        let n_val = (n as f64 * 0.1).round() as usize;
        let n_test = (n as f64 * 0.1).round() as usize;
        let n_train = n - n_val - n_test;
        Splits {
            train: perm[..n_train].to_vec(),
            validation: perm[n_train..n_train + n_val].to_vec(),
            test: perm[n_train + n_val..].to_vec(),
        }
    }

    pub fn get(&self, split: DataSplit) -> &[usize] {
        match split {
            DataSplit::Train => &self.train,
            DataSplit::Validation => &self.validation,
            DataSplit::Test | DataSplit::Observed => &self.test,
        }
    }

    /// Whether the splits partition `0..n`.
    pub fn is_partition(&self, n: usize) -> bool {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.validation).chain(&self.test) {
            if i >= n || seen[i] {
                return false;
            }
            seen[i] = true;
        }
        seen.into_iter().all(|s| s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
    /// Runs re-drawn after divergence.
    pub redraws: usize,
    /// SHA-256 over the header (without this field) and the data.
    pub content_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub model: ModelKind,
    pub feature: FeatureInfo,
    pub prior: PriorSpec,
    pub n: usize,
    pub theta_dim: usize,
    pub x_dim: usize,
    pub splits: Splits,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationDataset {
    pub header: DatasetHeader,
    /// log10 parameters, one row per simulation.
    pub theta: Matrix,
    /// Normalized observation vectors.
    pub x: Matrix,
}

fn matrix_bytes(m: &Matrix, out: &mut Vec<u8>) {
    for v in m.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn read_matrix(bytes: &[u8], rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    )
}

impl CalibrationDataset {
    /// Assembles a dataset and stamps its content hash.
    pub fn new(mut header: DatasetHeader, theta: Matrix, x: Matrix) -> Result<Self, DatasetError> {
        if !header.splits.is_partition(header.n) {
            return Err(DatasetError::Splits(header.n));
        }
        header.provenance.content_hash = String::new();
        let mut ds = CalibrationDataset { header, theta, x };
        ds.header.provenance.content_hash = ds.compute_hash();
        Ok(ds)
    }

    pub fn compute_hash(&self) -> String {
        let mut h = self.header.clone();
        h.provenance.content_hash = String::new();
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(&h).expect("header serializes"));
        let mut data = Vec::with_capacity(8 * (self.theta.len() + self.x.len()));
        matrix_bytes(&self.theta, &mut data);
        matrix_bytes(&self.x, &mut data);
        hasher.update(&data);
        hex::encode(hasher.finalize())
    }

    pub fn content_hash(&self) -> &str {
        &self.header.provenance.content_hash
    }

    pub fn split(&self, split: DataSplit) -> Samples {
        let idx = self.header.splits.get(split);
        Samples::new(self.theta.select_rows(idx), self.x.select_rows(idx))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + header.len() + 8 * (self.theta.len() + self.x.len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        matrix_bytes(&self.theta, &mut out);
        matrix_bytes(&self.x, &mut out);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DatasetError> {
        if bytes.len() < 20 {
            return Err(DatasetError::Length);
        }
        if &bytes[..8] != MAGIC {
            return Err(DatasetError::BadMagic);
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(DatasetError::Version(version));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let rest = &bytes[20..];
        if rest.len() < hlen {
            return Err(DatasetError::Length);
        }
        let header: DatasetHeader = serde_json::from_slice(&rest[..hlen])?;
        let data = &rest[hlen..];
        let (n, d, dx) = (header.n, header.theta_dim, header.x_dim);
        let theta_len = n * d * 8;
        if data.len() != theta_len + n * dx * 8 {
            return Err(DatasetError::Length);
        }
        if !header.splits.is_partition(n) {
            return Err(DatasetError::Splits(n));
        }
        let ds = CalibrationDataset {
            theta: read_matrix(&data[..theta_len], n, d),
            x: read_matrix(&data[theta_len..], n, dx),
            header,
        };
        let actual = ds.compute_hash();
        if actual != ds.header.provenance.content_hash {
            return Err(DatasetError::Hash {
                stored: ds.header.provenance.content_hash.clone(),
                actual,
            });
        }
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        crate::io::write_atomic(path, &self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use lobcal_core::features::{ChannelStats, FeatureKind, FeatureStats};

    fn tiny() -> CalibrationDataset {
        let n = 10;
        let perm: Vec<usize> = (0..n).rev().collect();
        let header = DatasetHeader {
            model: ModelKind::Zi,
            feature: FeatureInfo {
                kind: FeatureKind::Vwap,
                len: 2,
                sample_interval: 1,
                stats: FeatureStats {
                    kind: FeatureKind::Vwap,
                    len: 2,
                    channels: vec![
                        ChannelStats {
                            mean: 0.0,
                            std: 1.0
                        };
                        2
                    ],
                    fitted_on: DataSplit::Train,
                    n_series: 8,
                },
            },
            prior: PriorSpec::zi(),
            n,
            theta_dim: 4,
            x_dim: 4,
            splits: Splits::from_permutation(&perm),
            provenance: Provenance {
                seed: 1,
                config_hash: "abc".into(),
                redraws: 0,
                content_hash: String::new(),
            },
        };
        let theta = Matrix::from_vec(n, 4, (0..4 * n).map(|i| i as f64 * 0.1).collect());
        let x = Matrix::from_vec(n, 4, (0..4 * n).map(|i| (i as f64).sin()).collect());
        CalibrationDataset::new(header, theta, x).unwrap()
    }

    #[test]
    fn splits_are_8_1_1() {
        let s = Splits::from_permutation(&(0..10).collect::<Vec<_>>());
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (8, 1, 1));
        assert!(s.is_partition(10));
        let s = Splits::from_permutation(&(0..2000).collect::<Vec<_>>());
        assert_eq!(
            (s.train.len(), s.validation.len(), s.test.len()),
            (1600, 200, 200)
        );
    }

    #[test]
    fn persistence_round_trip_and_tamper_detection() {
        let ds = tiny();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ds.bin");
        ds.save(&p).unwrap();
        let back = CalibrationDataset::load(&p).unwrap();
        assert_eq!(back, ds);
        let mut bytes = ds.to_bytes();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        assert!(matches!(
            CalibrationDataset::from_bytes(&bytes),
            Err(DatasetError::Hash { .. })
        ));
        assert!(matches!(
            CalibrationDataset::from_bytes(&bytes[..last]),
            Err(DatasetError::Length)
        ));
    }

    #[test]
    fn header_floats_round_trip_exactly() {
        let mut ds = tiny();
        let awkward = [
            0.1 + 0.2,
            1.0 / 3.0,
            -4.440892098500626e-16,
            7.62939453125e-6 * 0.7,
            1e-300 / 3.0,
        ];
        for (i, ch) in ds.header.feature.stats.channels.iter_mut().enumerate() {
            ch.mean = awkward[i];
            ch.std = awkward[i + 2].abs() * 1e3 + 0.1 / 3.0;
        }
        let ds = CalibrationDataset::new(ds.header, ds.theta, ds.x).unwrap();
        assert_eq!(CalibrationDataset::from_bytes(&ds.to_bytes()).unwrap(), ds);
    }

    #[test]
    fn split_selects_rows() {
        let ds = tiny();
        let test = ds.split(DataSplit::Test);
        let i = ds.header.splits.test[0];
        assert_eq!(test.theta.row(0), ds.theta.row(i));
    }
}
