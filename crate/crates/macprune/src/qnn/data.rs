//! Desk-scale datasets: idx/csv loaders and a synthetic generator.

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Idx,
    Csv,
}

/// Feature matrix with integer labels and train/test tags. Features are
/// expected non-negative (activations are unsigned codes); loaders scale
/// byte data into [0, 1].
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Array2<f32>,
    pub labels: Vec<u8>,
    pub split: Vec<Split>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| m as usize + 1)
    }

    /// Loads a dataset from disk.
    ///
    /// For [`DataFormat::Idx`] the path names the unsigned-byte image file
    /// (magic 0x00000803 or 0x00000802); the label file is found by
    /// replacing `images` with `labels` in the file name. For
    /// [`DataFormat::Csv`] rows are `label,f0,f1,...` with a header.
    pub fn load(path: &Path, format: DataFormat) -> Result<Dataset> {
        match format {
            DataFormat::Idx => load_idx(path),
            DataFormat::Csv => load_csv(path),
        }
    }

    /// Retags rows so that a seeded random `test_fraction` becomes the
    /// test split.
    pub fn with_holdout(mut self, test_fraction: f64, seed: u64) -> Dataset {
        let n = self.len();
        let n_test = ((n as f64) * test_fraction).round() as usize;
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        idx.shuffle(&mut rng);
        self.split = vec![Split::Train; n];
        for &i in idx.iter().take(n_test) {
            self.split[i] = Split::Test;
        }
        self
    }

    /// Copies out the rows of one split.
    pub fn subset(&self, split: Split) -> (Array2<f32>, Vec<u8>) {
        let rows: Vec<usize> = (0..self.len()).filter(|&i| self.split[i] == split).collect();
        let mut features = Array2::zeros((rows.len(), self.feature_dim()));
        let mut labels = Vec::with_capacity(rows.len());
        for (out, &i) in rows.iter().enumerate() {
            features.row_mut(out).assign(&self.features.row(i));
            labels.push(self.labels[i]);
        }
        (features, labels)
    }

    /// Test split when present, otherwise everything.
    pub fn eval_set(&self) -> (Array2<f32>, Vec<u8>) {
        if self.split.iter().any(|&s| s == Split::Test) {
            self.subset(Split::Test)
        } else {
            (self.features.clone(), self.labels.clone())
        }
    }

    /// Digit-style stand-in: Gaussian blobs, one cluster per class,
    /// min-max normalized to [0, 1], with a seeded 80/20 holdout.
    pub fn synthetic_blobs(n: usize, dims: usize, classes: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unit = Normal::new(0.0f32, 1.0).expect("unit normal");
        let means: Vec<Vec<f32>> = (0..classes)
            .map(|_| (0..dims).map(|_| unit.sample(&mut rng)).collect())
            .collect();
        let mut features = Array2::zeros((n, dims));
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % classes;
            labels.push(c as u8);
            for d in 0..dims {
                features[[i, d]] = means[c][d] + unit.sample(&mut rng);
            }
        }
        let lo = features.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = features.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let range = (hi - lo).max(1e-6);
        features.mapv_inplace(|v| (v - lo) / range);
        Dataset { features, labels, split: vec![Split::Train; n] }
            .with_holdout(0.2, seed.wrapping_add(1))
    }
}

fn read_u32_be(bytes: &[u8], at: usize) -> Result<u32> {
    let slice: [u8; 4] = bytes
        .get(at..at + 4)
        .ok_or_else(|| Error::Parse(format!("idx header truncated at byte {at}")))?
        .try_into()
        .unwrap();
    Ok(u32::from_be_bytes(slice))
}

fn parse_idx(bytes: &[u8], path: &Path) -> Result<(Vec<usize>, Vec<u8>)> {
    let magic = read_u32_be(bytes, 0)?;
    if magic >> 8 != 0x08 || magic & 0xFFFF_0000 != 0 {
        return Err(Error::Parse(format!(
            "{}: bad idx magic {magic:#010x} (expected unsigned-byte type 0x08)",
            path.display()
        )));
    }
    let ndims = (magic & 0xFF) as usize;
    if ndims == 0 || ndims > 3 {
        return Err(Error::Parse(format!(
            "{}: unsupported idx dimensionality {ndims}",
            path.display()
        )));
    }
    let mut dims = Vec::with_capacity(ndims);
    for d in 0..ndims {
        dims.push(read_u32_be(bytes, 4 + 4 * d)? as usize);
    }
    let header = 4 + 4 * ndims;
    let expected = dims.iter().product::<usize>();
    let actual = bytes.len() - header;
    if actual != expected {
        return Err(Error::Parse(format!(
            "{}: idx payload has {actual} bytes, header promises {expected}",
            path.display()
        )));
    }
    Ok((dims, bytes[header..].to_vec()))
}

fn load_idx(images_path: &Path) -> Result<Dataset> {
    let name = images_path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Input(format!("bad path {}", images_path.display())))?;
    if !name.contains("images") {
        return Err(Error::Input(format!(
            "idx image file name must contain `images` so the label file can be \
             derived by substituting `labels`: {}",
            images_path.display()
        )));
    }
    let labels_path = images_path.with_file_name(name.replace("images", "labels"));

    let image_bytes = std::fs::read(images_path)?;
    let (dims, data) = parse_idx(&image_bytes, images_path)?;
    let n = dims[0];
    let row: usize = dims[1..].iter().product::<usize>().max(1);

    let label_bytes = std::fs::read(&labels_path)?;
    let (ldims, labels) = parse_idx(&label_bytes, &labels_path)?;
    if ldims.len() != 1 || ldims[0] != n {
        return Err(Error::Parse(format!(
            "{}: label count {:?} does not match {n} samples",
            labels_path.display(),
            ldims
        )));
    }

    let features =
        Array2::from_shape_vec((n, row), data.iter().map(|&b| b as f32 / 255.0).collect())
            .expect("shape checked above");
    Ok(Dataset { features, labels, split: vec![Split::Train; n] })
}

fn load_csv(path: &Path) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path)?;
    {
        let headers = reader.headers()?;
        if headers.get(0) != Some("label") {
            return Err(Error::Parse(format!(
                "{}: first csv column must be `label`, found {:?}",
                path.display(),
                headers.get(0)
            )));
        }
    }
    let mut rows: Vec<Vec<f32>> = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let label: u8 = record
            .get(0)
            .unwrap_or("")
            .parse()
            .map_err(|e| Error::Parse(format!("{}:{line}: bad label: {e}", path.display())))?;
        let feats: Vec<f32> = record
            .iter()
            .skip(1)
            .enumerate()
            .map(|(j, v)| {
                v.parse().map_err(|e| {
                    Error::Parse(format!("{}:{line}: feature {j}: {e}", path.display()))
                })
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if feats.len() != first.len() {
                return Err(Error::Parse(format!(
                    "{}:{line}: row has {} features, expected {}",
                    path.display(),
                    feats.len(),
                    first.len()
                )));
            }
        }
        labels.push(label);
        rows.push(feats);
    }
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    let features = Array2::from_shape_vec((n, d), rows.into_iter().flatten().collect())
        .expect("rectangular checked above");
    Ok(Dataset { features, labels, split: vec![Split::Train; n] })
}

/// Writes a dataset in the csv form accepted by [`Dataset::load`].
pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["label".to_string()];
    header.extend((0..dataset.feature_dim()).map(|i| format!("f{i}")));
    w.write_record(&header)?;
    for i in 0..dataset.len() {
        let mut rec = vec![dataset.labels[i].to_string()];
        rec.extend(dataset.features.row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Returns features as a view for callers that only need the matrix.
pub fn features_of(d: &Dataset) -> ArrayView2<'_, f32> {
    d.features.view()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idx_roundtrip_and_shape() {
        let dir = tempfile::tempdir().unwrap();
        let images = dir.path().join("tiny-images-idx3-ubyte");
        let labels = dir.path().join("tiny-labels-idx3-ubyte");
        // 10 samples of 28x28 = 784 bytes each.
        let mut img = vec![0u8, 0, 0x08, 3];
        img.extend(10u32.to_be_bytes());
        img.extend(28u32.to_be_bytes());
        img.extend(28u32.to_be_bytes());
        img.extend((0..10 * 784).map(|v| (v % 251) as u8));
        std::fs::write(&images, &img).unwrap();
        let mut lab = vec![0u8, 0, 0x08, 1];
        lab.extend(10u32.to_be_bytes());
        lab.extend((0..10).map(|v| v as u8));
        std::fs::write(&labels, &lab).unwrap();

        let d = Dataset::load(&images, DataFormat::Idx).unwrap();
        assert_eq!(d.features.dim(), (10, 784));
        assert_eq!(d.labels, (0..10).map(|v| v as u8).collect::<Vec<_>>());
    }

    #[test]
    fn idx_truncation_reports_lengths() {
        let dir = tempfile::tempdir().unwrap();
        let images = dir.path().join("bad-images-idx3-ubyte");
        let mut img = vec![0u8, 0, 0x08, 2];
        img.extend(4u32.to_be_bytes());
        img.extend(3u32.to_be_bytes());
        img.extend([1u8, 2, 3]); // 3 of 12 payload bytes
        std::fs::write(&images, &img).unwrap();
        let err = Dataset::load(&images, DataFormat::Idx).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("3 bytes") && msg.contains("12"), "{msg}");
    }

    #[test]
    fn csv_single_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.csv");
        std::fs::write(&path, "label,f0,f1\n3,0.1,0.2\n").unwrap();
        let d = Dataset::load(&path, DataFormat::Csv).unwrap();
        assert_eq!(d.features.dim(), (1, 2));
        assert_eq!(d.labels, vec![3]);
        assert!((d.features[[0, 0]] - 0.1).abs() < 1e-6);
    }

    #[test]
    fn blobs_are_normalized_and_split() {
        let d = Dataset::synthetic_blobs(100, 8, 4, 7);
        assert_eq!(d.len(), 100);
        assert!(d.features.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let n_test = d.split.iter().filter(|&&s| s == Split::Test).count();
        assert_eq!(n_test, 20);
        assert_eq!(d.n_classes(), 4);
        // Determinism.
        let e = Dataset::synthetic_blobs(100, 8, 4, 7);
        assert_eq!(d.features, e.features);
    }
}
