//! Datasets: IDX (MNIST) files, seeded synthetic blobs, and the trace CSV.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::diagnostics::TraceRecord;
use crate::linalg::Matrix;
use crate::state::ObjectiveBreakdown;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: bad magic {found:#010x} at offset 0, expected {expected:#010x}")]
    BadMagic {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("{path}: truncated at offset {offset}: need {needed} bytes, {available} available")]
    Truncated {
        path: PathBuf,
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("count mismatch: {images_path} holds {images} images but {labels_path} holds {labels} labels")]
    CountMismatch {
        images_path: PathBuf,
        labels_path: PathBuf,
        images: usize,
        labels: usize,
    },
    #[error("{path}: label {label} at offset {offset} is not below {classes}")]
    BadLabel {
        path: PathBuf,
        offset: usize,
        label: u8,
        classes: usize,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    BadCsv {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("cannot write an empty trace")]
    EmptyTrace,
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Inputs `X` (one sample per column), one-hot targets `Y` and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Matrix,
    pub labels: Vec<usize>,
}

pub fn one_hot(labels: &[usize], classes: usize) -> Matrix {
    let mut y = Matrix::zeros(classes, labels.len());
    for (j, &l) in labels.iter().enumerate() {
        y.set(l, j, 1.0);
    }
    y
}

impl Dataset {
    pub fn new(x: Matrix, labels: Vec<usize>, classes: usize) -> Result<Self, DataError> {
        if labels.len() != x.cols() {
            return Err(DataError::Invalid(format!(
                "{} labels for {} samples",
                labels.len(),
                x.cols()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(DataError::Invalid(format!("label {l} with only {classes} classes")));
        }
        let y = one_hot(&labels, classes);
        Ok(Dataset { x, y, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.y.rows()
    }

    pub fn features(&self) -> usize {
        self.x.rows()
    }

    /// Targets in `{−1, +1}` (`2Y − 1`), the encoding the hinge loss expects.
    pub fn signed_targets(&self) -> Matrix {
        self.y.map(|v| 2.0 * v - 1.0)
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_columns(idx),
            y: self.y.select_columns(idx),
            labels: idx.iter().map(|&j| self.labels[j]).collect(),
        }
    }

    /// Seeded random subset of `n` samples, kept in their original order.
    pub fn subsample(&self, n: usize, seed: u64) -> Dataset {
        if n >= self.len() {
            return self.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, self.len(), n).into_vec();
        idx.sort_unstable();
        self.select(&idx)
    }

    /// The first `k` samples and the rest.
    pub fn split_at(&self, k: usize) -> (Dataset, Dataset) {
        let k = k.min(self.len());
        let head: Vec<usize> = (0..k).collect();
        let tail: Vec<usize> = (k..self.len()).collect();
        (self.select(&head), self.select(&tail))
    }
}

fn read_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32, DataError> {
    let chunk = bytes.get(offset..offset + 4).ok_or_else(|| DataError::Truncated {
        path: path.to_path_buf(),
        offset,
        needed: 4,
        available: bytes.len().saturating_sub(offset),
    })?;
    Ok(u32::from_be_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]))
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<(), DataError> {
    let found = read_u32(bytes, 0, path)?;
    if found != expected {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            found,
            expected,
        });
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], offset: usize, len: usize, path: &Path) -> Result<&'a [u8], DataError> {
    bytes.get(offset..offset + len).ok_or_else(|| DataError::Truncated {
        path: path.to_path_buf(),
        offset,
        needed: len,
        available: bytes.len().saturating_sub(offset),
    })
}

/// Parses an IDX image file into a `pixels × count` matrix scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<Matrix, DataError> {
    check_magic(bytes, IMAGE_MAGIC, path)?;
    let count = read_u32(bytes, 4, path)? as usize;
    let rows = read_u32(bytes, 8, path)? as usize;
    let cols = read_u32(bytes, 12, path)? as usize;
    let pixels = rows * cols;
    if count == 0 || pixels == 0 {
        return Err(DataError::Invalid(format!(
            "{}: header declares {count} images of {rows}x{cols}",
            path.display()
        )));
    }
    let data = payload(bytes, 16, count * pixels, path)?;
    let mut x = Matrix::zeros(pixels, count);
    for (j, image) in data.chunks_exact(pixels).enumerate() {
        for (p, &b) in image.iter().enumerate() {
            x.set(p, j, f64::from(b) / 255.0);
        }
    }
    Ok(x)
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path, classes: usize) -> Result<Vec<usize>, DataError> {
    check_magic(bytes, LABEL_MAGIC, path)?;
    let count = read_u32(bytes, 4, path)? as usize;
    let data = payload(bytes, 8, count, path)?;
    data.iter()
        .enumerate()
        .map(|(k, &b)| {
            if (b as usize) < classes {
                Ok(b as usize)
            } else {
                Err(DataError::BadLabel {
                    path: path.to_path_buf(),
                    offset: 8 + k,
                    label: b,
                    classes,
                })
            }
        })
        .collect()
}

/// Loads an image/label IDX pair with ten classes.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset, DataError> {
    let img = std::fs::read(images_path).map_err(io_err(images_path))?;
    let lab = std::fs::read(labels_path).map_err(io_err(labels_path))?;
    let x = parse_idx_images(&img, images_path)?;
    let labels = parse_idx_labels(&lab, labels_path, 10)?;
    if labels.len() != x.cols() {
        return Err(DataError::CountMismatch {
            images_path: images_path.to_path_buf(),
            labels_path: labels_path.to_path_buf(),
            images: x.cols(),
            labels: labels.len(),
        });
    }
    Dataset::new(x, labels, 10)
}

/// IDX image bytes for `pixels` laid out as a `rows × cols` image per
/// column of `x`. Values are min-max scaled to the full byte range.
pub fn encode_idx_images(x: &Matrix, rows: usize, cols: usize) -> Result<Vec<u8>, DataError> {
    if rows * cols != x.rows() {
        return Err(DataError::Invalid(format!(
            "{rows}x{cols} images need {} features, dataset has {}",
            rows * cols,
            x.rows()
        )));
    }
    let (lo, hi) = x
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = Vec::with_capacity(16 + x.data().len());
    for v in [IMAGE_MAGIC, x.cols() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for j in 0..x.cols() {
        for p in 0..x.rows() {
            let q = ((x.get(p, j) - lo) / span * 255.0).round();
            out.push(q.clamp(0.0, 255.0) as u8);
        }
    }
    Ok(out)
}

pub fn encode_idx_labels(labels: &[usize]) -> Result<Vec<u8>, DataError> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        let b = u8::try_from(l).map_err(|_| DataError::Invalid(format!("label {l} does not fit a byte")))?;
        out.push(b);
    }
    Ok(out)
}

pub fn write_idx_pair(
    data: &Dataset,
    rows: usize,
    cols: usize,
    images_path: &Path,
    labels_path: &Path,
) -> Result<(), DataError> {
    std::fs::write(images_path, encode_idx_images(&data.x, rows, cols)?).map_err(io_err(images_path))?;
    std::fs::write(labels_path, encode_idx_labels(&data.labels)?).map_err(io_err(labels_path))?;
    Ok(())
}

/// Gaussian blobs around class centres drawn uniformly on the unit sphere.
/// Sample `j` belongs to class `j mod classes`.
pub fn synthetic_blobs(
    n: usize,
    d0: usize,
    classes: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    if classes == 0 || classes > n || d0 == 0 {
        return Err(DataError::Invalid(format!(
            "synthetic blobs need 0 < classes <= n and d0 > 0 (n={n}, d0={d0}, classes={classes})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = Matrix::zeros(d0, classes);
    for c in 0..classes {
        let v: Vec<f64> = (0..d0).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|t| t * t).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        for (p, t) in v.iter().enumerate() {
            centers.set(p, c, t / norm);
        }
    }
    let labels: Vec<usize> = (0..n).map(|j| j % classes).collect();
    let mut x = Matrix::zeros(d0, n);
    for (j, &l) in labels.iter().enumerate() {
        for p in 0..d0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            x.set(p, j, centers.get(p, l) + spread * z);
        }
    }
    Dataset::new(x, labels, classes)
}

pub const TRACE_HEADER: &str =
    "epoch,total,risk,penalty,w_reg,v_reg,delta_sq,residual,bbar_bound,train_acc,test_acc,seconds";

/// CSV text of a trace; floats carry 17 significant digits so reading the
/// text back reproduces them exactly.
pub fn render_trace_csv(trace: &[TraceRecord]) -> Result<String, DataError> {
    if trace.is_empty() {
        return Err(DataError::EmptyTrace);
    }
    let mut out = String::with_capacity(64 * (trace.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for r in trace {
        let o = &r.objective;
        write!(out, "{}", r.epoch).expect("writing to a String");
        for v in [
            o.total,
            o.risk,
            o.penalty,
            o.w_reg,
            o.v_reg,
            r.delta_sq,
            r.residual_norm,
            r.bbar_bound,
            r.train_acc,
            r.test_acc,
            r.wall_seconds,
        ] {
            write!(out, ",{v:.16e}").expect("writing to a String");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_trace_csv(trace: &[TraceRecord], path: &Path) -> Result<(), DataError> {
    let text = render_trace_csv(trace)?;
    std::fs::write(path, text).map_err(io_err(path))
}

pub fn parse_trace_csv(text: &str, path: &Path) -> Result<Vec<TraceRecord>, DataError> {
    let bad = |line: usize, reason: String| DataError::BadCsv {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == TRACE_HEADER => {}
        _ => return Err(bad(1, "missing or unexpected header".into())),
    }
    let mut out = Vec::new();
    for (k, line) in lines.enumerate() {
        let lineno = k + 2;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 12 {
            return Err(bad(lineno, format!("expected 12 fields, found {}", fields.len())));
        }
        let epoch = fields[0]
            .parse()
            .map_err(|_| bad(lineno, format!("bad epoch {:?}", fields[0])))?;
        let mut v = [0.0f64; 11];
        for (slot, f) in v.iter_mut().zip(&fields[1..]) {
            *slot = f.parse().map_err(|_| bad(lineno, format!("bad number {f:?}")))?;
        }
        out.push(TraceRecord {
            epoch,
            objective: ObjectiveBreakdown {
                total: v[0],
                risk: v[1],
                penalty: v[2],
                w_reg: v[3],
                v_reg: v[4],
            },
            delta_sq: v[5],
            residual_norm: v[6],
            bbar_bound: v[7],
            train_acc: v[8],
            test_acc: v[9],
            wall_seconds: v[10],
        });
    }
    Ok(out)
}

pub fn read_trace_csv(path: &Path) -> Result<Vec<TraceRecord>, DataError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_trace_csv(&text, path)
}
