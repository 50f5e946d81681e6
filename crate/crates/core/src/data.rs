//! Dataset generation, loading, preprocessing and IID sharding.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A labeled dataset with row-major inputs and integer class labels
/// (binary problems use {0, 1}).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    inputs: Vec<f64>,
    labels: Vec<usize>,
    features: usize,
}

impl LabeledDataset {
    pub fn new(inputs: Vec<f64>, labels: Vec<usize>, features: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Empty { what: "dataset" });
        }
        if features == 0 {
            return Err(Error::invalid("features", "must be at least 1"));
        }
        if inputs.len() != labels.len() * features {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * features,
                got: inputs.len(),
            });
        }
        if let Some(i) = inputs.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("dataset input {}, feature {}", i / features, i % features),
            });
        }
        Ok(LabeledDataset {
            inputs,
            labels,
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.features..(i + 1) * self.features]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Number of distinct classes implied by the labels (max label + 1).
    pub fn class_count(&self) -> usize {
        self.labels.iter().copied().max().unwrap_or(0) + 1
    }

    /// Decomposes into (inputs, labels, features) for transformations.
    pub fn into_parts(self) -> (Vec<f64>, Vec<usize>, usize) {
        (self.inputs, self.labels, self.features)
    }

    /// Copies the given rows into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Result<LabeledDataset> {
        let mut inputs = Vec::with_capacity(indices.len() * self.features);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            inputs.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        LabeledDataset::new(inputs, labels, self.features)
    }
}

/// Input preprocessing applied by the file loaders.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    /// Affine map of each column's observed [min, max] onto [-1, 1].
    ToUnitIntervalSigned,
    /// Nonzero values become 1, zeros stay 0.
    Binarize,
    None,
}

/// Where a dataset comes from and how to read it.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    /// Gaussian class clusters clipped to [-1, 1], balanced across classes.
    SyntheticBlobs {
        train_size: usize,
        test_size: usize,
        /// Distance of each class mean from the origin along its own axis.
        center_separation: f64,
        /// Standard deviation of each cluster.
        cluster_std: f64,
    },
    /// Comma-separated file, one sample per row, label in the last column.
    CsvFile {
        path: PathBuf,
        skip_header: bool,
        /// Keep only the first N feature columns (the label column is
        /// unaffected).
        feature_limit: Option<usize>,
        /// Fraction of rows that go into the training split.
        train_fraction: f64,
    },
    /// IDX container pair per split (the MNIST container format).
    IdxPair {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub source: DatasetSource,
    pub classes: usize,
    pub features: usize,
    pub normalization: Normalization,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::invalid("classes", "must be at least 2"));
        }
        if self.features == 0 {
            return Err(Error::invalid("features", "must be at least 1"));
        }
        match &self.source {
            DatasetSource::SyntheticBlobs {
                train_size,
                test_size,
                center_separation,
                cluster_std,
            } => {
                if *train_size == 0 || *test_size == 0 {
                    return Err(Error::invalid("train_size/test_size", "must be at least 1"));
                }
                if !center_separation.is_finite()
                    || *center_separation <= 0.0
                    || !cluster_std.is_finite()
                    || *cluster_std <= 0.0
                {
                    return Err(Error::invalid(
                        "center_separation/cluster_std",
                        "must be positive",
                    ));
                }
                if self.classes > 2 * self.features {
                    return Err(Error::invalid(
                        "classes",
                        "synthetic blobs support at most 2 * features classes",
                    ));
                }
            }
            DatasetSource::CsvFile { train_fraction, .. } => {
                if !(*train_fraction > 0.0 && *train_fraction < 1.0) {
                    return Err(Error::invalid(
                        "train_fraction",
                        format!("must lie in (0, 1), got {train_fraction}"),
                    ));
                }
            }
            DatasetSource::IdxPair { .. } => {}
        }
        Ok(())
    }
}

/// Generates balanced Gaussian blobs: class j is centered at
/// ±separation · e_{j mod features}, points are clipped to [-1, 1] and
/// labels are assigned round-robin so class counts differ by at most one.
pub fn generate_synthetic_blobs(
    spec: &DatasetSpec,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    spec.validate()?;
    let DatasetSource::SyntheticBlobs {
        train_size,
        test_size,
        center_separation,
        cluster_std,
    } = &spec.source
    else {
        return Err(Error::invalid("source", "expected synthetic_blobs"));
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means = vec![vec![0.0; spec.features]; spec.classes];
    for (j, mean) in means.iter_mut().enumerate() {
        let axis = j % spec.features;
        let sign = if j < spec.features { 1.0 } else { -1.0 };
        mean[axis] = sign * center_separation;
    }

    let mut generate = |n: usize| -> Result<LabeledDataset> {
        let mut inputs = Vec::with_capacity(n * spec.features);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % spec.classes;
            for mean in &means[class] {
                let x = mean + cluster_std * standard_normal(&mut rng);
                inputs.push(x.clamp(-1.0, 1.0));
            }
            labels.push(class);
        }
        LabeledDataset::new(inputs, labels, spec.features)
    };

    let train = generate(*train_size)?;
    let test = generate(*test_size)?;
    Ok((train, test))
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    use rand_distr::Distribution;
    rand_distr::StandardNormal.sample(rng)
}

/// Loads a comma-separated file with the label in the last column and
/// applies the requested normalization. Malformed rows are reported with their
/// 1-based line number.
pub fn load_csv(path: &Path, spec: &DatasetSpec) -> Result<LabeledDataset> {
    let (skip_header, feature_limit) = match &spec.source {
        DatasetSource::CsvFile {
            skip_header,
            feature_limit,
            ..
        } => (*skip_header, *feature_limit),
        _ => (false, None),
    };

    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);

    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    let mut features: Option<usize> = None;

    let data_format = |line: usize, reason: String| Error::DataFormat {
        path: path.to_path_buf(),
        line,
        reason,
    };

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if skip_header && idx == 0 {
            continue;
        }
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let cells: Vec<&str> = trimmed.split(',').collect();
        if cells.len() < 2 {
            return Err(data_format(
                line_no,
                format!(
                    "expected at least one feature and a label, got {} cell(s)",
                    cells.len()
                ),
            ));
        }
        let n_features = cells.len() - 1;
        match features {
            None => features = Some(n_features),
            Some(expected) if expected != n_features => {
                return Err(data_format(
                    line_no,
                    format!("expected {expected} feature columns, got {n_features}"),
                ));
            }
            _ => {}
        }
        let keep = feature_limit.unwrap_or(n_features).min(n_features);
        for (col, cell) in cells[..keep].iter().enumerate() {
            let value: f64 = cell.trim().parse().map_err(|_| {
                data_format(
                    line_no,
                    format!("non-numeric cell `{cell}` in column {}", col + 1),
                )
            })?;
            inputs.push(value);
        }
        let label_cell = cells[n_features].trim();
        let label: usize = label_cell
            .parse()
            .map_err(|_| data_format(line_no, format!("non-integer label `{label_cell}`")))?;
        labels.push(label);
    }

    if labels.is_empty() {
        return Err(data_format(0, "file contains no data rows".to_string()));
    }

    let features = feature_limit
        .unwrap_or(features.unwrap())
        .min(features.unwrap());
    let ds = LabeledDataset::new(inputs, labels, features)?;
    Ok(apply_normalization(ds, spec.normalization))
}

fn apply_normalization(ds: LabeledDataset, normalization: Normalization) -> LabeledDataset {
    match normalization {
        Normalization::None => ds,
        Normalization::Binarize => {
            let (mut inputs, labels, features) = ds.into_parts();
            for v in &mut inputs {
                *v = if *v != 0.0 { 1.0 } else { 0.0 };
            }
            LabeledDataset::new(inputs, labels, features).expect("binarize keeps shape")
        }
        Normalization::ToUnitIntervalSigned => {
            let (mut inputs, labels, features) = ds.into_parts();
            let n = labels.len();
            for col in 0..features {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for r in 0..n {
                    let v = inputs[r * features + col];
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
                for r in 0..n {
                    let v = &mut inputs[r * features + col];
                    *v = if hi > lo {
                        2.0 * (*v - lo) / (hi - lo) - 1.0
                    } else {
                        0.0
                    };
                }
            }
            LabeledDataset::new(inputs, labels, features).expect("normalization keeps shape")
        }
    }
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Loads an IDX image/label file pair. Pixels are mapped from [0, 255] to
/// [-1, 1] via x / 127.5 - 1 and images are flattened row-major.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let images_raw = read_all(images_path)?;
    let labels_raw = read_all(labels_path)?;

    let img_err = |reason: String| Error::DataFormat {
        path: images_path.to_path_buf(),
        line: 0,
        reason,
    };
    let lbl_err = |reason: String| Error::DataFormat {
        path: labels_path.to_path_buf(),
        line: 0,
        reason,
    };

    if images_raw.len() < 16 {
        return Err(img_err("truncated IDX header".to_string()));
    }
    let magic = be_u32(&images_raw[0..4]);
    if magic != IDX_IMAGES_MAGIC {
        return Err(img_err(format!(
            "bad magic number {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let count = be_u32(&images_raw[4..8]) as usize;
    let rows = be_u32(&images_raw[8..12]) as usize;
    let cols = be_u32(&images_raw[12..16]) as usize;
    let expected = 16 + count * rows * cols;
    if images_raw.len() != expected {
        return Err(img_err(format!(
            "payload is {} bytes, header implies {expected}",
            images_raw.len()
        )));
    }

    if labels_raw.len() < 8 {
        return Err(lbl_err("truncated IDX header".to_string()));
    }
    let magic = be_u32(&labels_raw[0..4]);
    if magic != IDX_LABELS_MAGIC {
        return Err(lbl_err(format!(
            "bad magic number {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let label_count = be_u32(&labels_raw[4..8]) as usize;
    if labels_raw.len() != 8 + label_count {
        return Err(lbl_err(format!(
            "payload is {} bytes, header implies {}",
            labels_raw.len(),
            8 + label_count
        )));
    }
    if label_count != count {
        return Err(lbl_err(format!("{label_count} labels for {count} images")));
    }

    let inputs: Vec<f64> = images_raw[16..]
        .iter()
        .map(|&px| f64::from(px) / 127.5 - 1.0)
        .collect();
    let labels: Vec<usize> = labels_raw[8..].iter().map(|&l| l as usize).collect();
    LabeledDataset::new(inputs, labels, rows * cols)
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
    Ok(buf)
}

fn be_u32(bytes: &[u8]) -> u32 {
    u32::from_be_bytes(bytes.try_into().expect("slice of length 4"))
}

/// Splits a dataset into K IID shards: a seeded shuffle followed by a
/// contiguous split. With explicit proportions, sizes follow the
/// largest-remainder method; the uniform default differs by at most one
/// point between shards. Every point lands in exactly one shard and every
/// shard is nonempty.
pub fn shard_iid(
    dataset: &LabeledDataset,
    k: usize,
    proportions: Option<&[f64]>,
    seed: u64,
) -> Result<Vec<LabeledDataset>> {
    if k == 0 {
        return Err(Error::invalid("k", "must be at least 1"));
    }
    let n = dataset.len();
    if k > n {
        return Err(Error::invalid(
            "k",
            format!("cannot split {n} points across {k} clients"),
        ));
    }
    let sizes = match proportions {
        None => {
            let base = n / k;
            let extra = n % k;
            (0..k)
                .map(|i| base + usize::from(i < extra))
                .collect::<Vec<_>>()
        }
        Some(props) => {
            if props.len() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    got: props.len(),
                });
            }
            if props.iter().any(|p| !p.is_finite() || *p <= 0.0) {
                return Err(Error::invalid("proportions", "must all be positive"));
            }
            let total: f64 = props.iter().sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(
                    "proportions",
                    format!("must sum to 1 (got {total})"),
                ));
            }
            largest_remainder_sizes(props, n)
        }
    };
    if let Some(i) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::invalid(
            "proportions",
            format!("shard {i} would receive zero points"),
        ));
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut shards = Vec::with_capacity(k);
    let mut offset = 0;
    for size in sizes {
        shards.push(dataset.subset(&order[offset..offset + size])?);
        offset += size;
    }
    Ok(shards)
}

/// Largest-remainder apportionment: floor every quota, then hand the
/// leftover points to the largest fractional remainders (ties to the lower
/// index).
fn largest_remainder_sizes(proportions: &[f64], n: usize) -> Vec<usize> {
    let quotas: Vec<f64> = proportions.iter().map(|p| p * n as f64).collect();
    let mut sizes: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(n - assigned) {
        sizes[i] += 1;
    }
    sizes
}

/// Seeded random split into train and test partitions.
pub fn split_train_test(
    dataset: &LabeledDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(
            "train_fraction",
            format!("must lie in (0, 1), got {train_fraction}"),
        ));
    }
    let n = dataset.len();
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let train = dataset.subset(&order[..n_train])?;
    let test = dataset.subset(&order[n_train..])?;
    Ok((train, test))
}
