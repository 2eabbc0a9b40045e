//! Dataset plumbing: IDX (MNIST) ingestion with gzip detection,
//! pixel-serialized sequence construction, deterministic permutations,
//! stratified splits, and synthetic generators.

use crate::laes::{LaesError, SequenceBatch};
use crate::numerics::{Matrix, SplitMix64};
use flate2::read::GzDecoder;
use std::io::Read;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: expected magic {expected:#010x} at offset 0, got {got:#010x}")]
    BadMagic { path: String, expected: u32, got: u32 },
    #[error("{path}: truncated at offset {offset}, needed {needed} more bytes")]
    Truncated { path: String, offset: usize, needed: usize },
    #[error("{path}: {extra} trailing bytes after payload")]
    TrailingBytes { path: String, extra: usize },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("permutation has {got} entries, need {expected}")]
    PermutationLength { expected: usize, got: usize },
    #[error("permutation is not a bijection (index {index} seen twice or out of range)")]
    PermutationInvalid { index: usize },
    #[error("image side {side} not divisible by downsample factor {factor}")]
    DownsampleFactor { side: usize, factor: usize },
    #[error("validation count {val} must be below the dataset size {n}")]
    ValTooLarge { val: usize, n: usize },
    #[error(transparent)]
    Laes(#[from] LaesError),
}

/// Raw images straight out of an IDX file: `count` images of
/// `rows x cols` bytes, concatenated row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn image(&self, i: usize) -> &[u8] {
        let size = self.rows * self.cols;
        &self.pixels[i * size..(i + 1) * size]
    }
}

/// A classification dataset: sequences plus one label per sequence.
#[derive(Clone, Debug)]
pub struct LabeledSequences {
    pub batch: SequenceBatch,
    pub labels: Vec<usize>,
}

impl LabeledSequences {
    pub fn len(&self) -> usize {
        self.batch.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batch.is_empty()
    }
}

/// How raw byte pixels become sequence values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScaleMode {
    /// `byte / 255` into [0, 1].
    Unit,
    /// `(byte/255 - mean) / std` with statistics taken from the
    /// training set (compute them once with [`pixel_stats`]).
    Centered { mean: f64, std: f64 },
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    let raw = std::fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    // RFC 1952: gzip streams open with 0x1f 0x8b
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
    path: &'a str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        if self.offset + n > self.bytes.len() {
            return Err(DataError::Truncated {
                path: self.path.to_string(),
                offset: self.offset,
                needed: self.offset + n - self.bytes.len(),
            });
        }
        let out = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(out)
    }

    fn be_u32(&mut self) -> Result<u32, DataError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }
}

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn parse_images(bytes: &[u8], path: &str) -> Result<IdxImages, DataError> {
    let mut cur = Cursor { bytes, offset: 0, path };
    let magic = cur.be_u32()?;
    if magic != IMAGES_MAGIC {
        return Err(DataError::BadMagic { path: path.to_string(), expected: IMAGES_MAGIC, got: magic });
    }
    let count = cur.be_u32()? as usize;
    let rows = cur.be_u32()? as usize;
    let cols = cur.be_u32()? as usize;
    let pixels = cur.take(count * rows * cols)?.to_vec();
    if cur.offset != bytes.len() {
        return Err(DataError::TrailingBytes {
            path: path.to_string(),
            extra: bytes.len() - cur.offset,
        });
    }
    Ok(IdxImages { count, rows, cols, pixels })
}

fn parse_labels(bytes: &[u8], path: &str) -> Result<Vec<u8>, DataError> {
    let mut cur = Cursor { bytes, offset: 0, path };
    let magic = cur.be_u32()?;
    if magic != LABELS_MAGIC {
        return Err(DataError::BadMagic { path: path.to_string(), expected: LABELS_MAGIC, got: magic });
    }
    let count = cur.be_u32()? as usize;
    let labels = cur.take(count)?.to_vec();
    if cur.offset != bytes.len() {
        return Err(DataError::TrailingBytes {
            path: path.to_string(),
            extra: bytes.len() - cur.offset,
        });
    }
    Ok(labels)
}

/// Loads an IDX image/label pair (gzip accepted, detected by prefix)
/// and validates that the counts agree.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<(IdxImages, Vec<u8>), DataError> {
    let images = parse_images(&read_file(images_path)?, &images_path.display().to_string())?;
    let labels = parse_labels(&read_file(labels_path)?, &labels_path.display().to_string())?;
    if images.count != labels.len() {
        return Err(DataError::CountMismatch { images: images.count, labels: labels.len() });
    }
    Ok((images, labels))
}

/// Mean pooling over `factor x factor` blocks, unit-scaled to [0, 1].
fn pooled_pixels(images: &IdxImages, i: usize, factor: usize) -> Vec<f64> {
    let side_r = images.rows / factor;
    let side_c = images.cols / factor;
    let img = images.image(i);
    let mut out = Vec::with_capacity(side_r * side_c);
    for br in 0..side_r {
        for bc in 0..side_c {
            let mut sum = 0.0;
            for dr in 0..factor {
                for dc in 0..factor {
                    sum += img[(br * factor + dr) * images.cols + (bc * factor + dc)] as f64;
                }
            }
            out.push(sum / (255.0 * (factor * factor) as f64));
        }
    }
    out
}

/// Mean and standard deviation of unit-scaled (optionally pooled)
/// pixels over a whole image set — the statistics `ScaleMode::Centered`
/// expects, computed on the training set.
pub fn pixel_stats(images: &IdxImages, downsample: usize) -> Result<(f64, f64), DataError> {
    let factor = downsample.max(1);
    if images.rows % factor != 0 || images.cols % factor != 0 {
        return Err(DataError::DownsampleFactor { side: images.rows, factor });
    }
    let mut sum = 0.0;
    let mut sq = 0.0;
    let mut n = 0usize;
    for i in 0..images.count {
        for v in pooled_pixels(images, i, factor) {
            sum += v;
            sq += v * v;
            n += 1;
        }
    }
    let mean = sum / n.max(1) as f64;
    let var = (sq / n.max(1) as f64 - mean * mean).max(0.0);
    Ok((mean, var.sqrt().max(1e-12)))
}

/// Serializes images into pixel-by-pixel sequences (`d = 1`), optionally
/// downsampled by mean pooling, permuted by a fixed pixel permutation,
/// and scaled. Row-major scan order; the permutation maps sequence step
/// t to flattened pixel `perm[t]`.
pub fn make_sequences(
    images: &IdxImages,
    labels: &[u8],
    permutation: Option<&[usize]>,
    scale: ScaleMode,
    downsample: usize,
) -> Result<LabeledSequences, DataError> {
    if images.count != labels.len() {
        return Err(DataError::CountMismatch { images: images.count, labels: labels.len() });
    }
    let factor = downsample.max(1);
    if images.rows % factor != 0 || images.cols % factor != 0 {
        return Err(DataError::DownsampleFactor { side: images.rows, factor });
    }
    let t_len = (images.rows / factor) * (images.cols / factor);
    if let Some(perm) = permutation {
        if perm.len() != t_len {
            return Err(DataError::PermutationLength { expected: t_len, got: perm.len() });
        }
        let mut seen = vec![false; t_len];
        for &idx in perm {
            if idx >= t_len || seen[idx] {
                return Err(DataError::PermutationInvalid { index: idx });
            }
            seen[idx] = true;
        }
    }
    let mut seqs = Vec::with_capacity(images.count);
    for i in 0..images.count {
        let flat = pooled_pixels(images, i, factor);
        let mut m = Matrix::zeros(t_len, 1);
        for t in 0..t_len {
            let src = permutation.map_or(t, |perm| perm[t]);
            let v = match scale {
                ScaleMode::Unit => flat[src],
                ScaleMode::Centered { mean, std } => (flat[src] - mean) / std,
            };
            *m.at_mut(t, 0) = v;
        }
        seqs.push(m);
    }
    Ok(LabeledSequences {
        batch: SequenceBatch::new(seqs)?,
        labels: labels.iter().map(|&l| l as usize).collect(),
    })
}

/// Fisher-Yates permutation of `0..n` driven by SplitMix64; identical
/// across platforms for equal `(n, seed)`.
pub fn fixed_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    SplitMix64::new(seed).shuffle(&mut perm);
    perm
}

/// Seeded stratified split: each class contributes proportionally to
/// the validation set (so the label distribution matches the source
/// within rounding), with a deterministic shuffle inside each class.
pub fn split(
    dataset: &LabeledSequences,
    val_count: usize,
    seed: u64,
) -> Result<(LabeledSequences, LabeledSequences), DataError> {
    let n = dataset.len();
    if val_count >= n && !(val_count == 0 && n == 0) {
        return Err(DataError::ValTooLarge { val: val_count, n });
    }
    let classes = dataset.labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &label) in dataset.labels.iter().enumerate() {
        by_class[label].push(i);
    }
    let mut rng = SplitMix64::derive(seed, 1);
    let mut val_indices = Vec::with_capacity(val_count);
    let mut train_indices = Vec::with_capacity(n - val_count);
    // largest-remainder allocation of val_count over classes
    let mut quotas: Vec<(usize, f64)> = by_class
        .iter()
        .map(|members| {
            let exact = val_count as f64 * members.len() as f64 / n as f64;
            (exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let mut allocated: usize = quotas.iter().map(|q| q.0).sum();
    let mut order: Vec<usize> = (0..classes).collect();
    order.sort_by(|&a, &b| quotas[b].1.partial_cmp(&quotas[a].1).unwrap().then(a.cmp(&b)));
    for &c in &order {
        if allocated == val_count {
            break;
        }
        if quotas[c].0 < by_class[c].len() {
            quotas[c].0 += 1;
            allocated += 1;
        }
    }
    for (c, members) in by_class.iter_mut().enumerate() {
        rng.shuffle(members);
        let take = quotas[c].0.min(members.len());
        val_indices.extend_from_slice(&members[..take]);
        train_indices.extend_from_slice(&members[take..]);
    }
    train_indices.sort_unstable();
    val_indices.sort_unstable();
    let subset = |indices: &[usize]| -> Result<LabeledSequences, DataError> {
        let batch = if indices.is_empty() {
            SequenceBatch::empty(dataset.batch.dim())
        } else {
            let seqs: Vec<Matrix> =
                indices.iter().map(|&i| dataset.batch.sequence(i).clone()).collect();
            SequenceBatch::new(seqs)?
        };
        let labels: Vec<usize> = indices.iter().map(|&i| dataset.labels[i]).collect();
        Ok(LabeledSequences { batch, labels })
    };
    Ok((subset(&train_indices)?, subset(&val_indices)?))
}

/// Gaussian sequences whose label is the sign of the first coordinate
/// of the first step: exact-memory fuel for LAES tests. The labeled
/// coordinate is shifted half a unit away from zero so the two classes
/// have a margin instead of touching at the origin.
pub fn synthetic_copy_task(n: usize, t: usize, d: usize, seed: u64) -> LabeledSequences {
    let mut rng = SplitMix64::new(seed);
    let mut seqs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let mut m = Matrix::from_fn(t, d, |_, _| rng.next_normal());
        let g = m.at(0, 0);
        *m.at_mut(0, 0) = g + 0.5 * g.signum();
        labels.push(usize::from(g >= 0.0));
        seqs.push(m);
    }
    LabeledSequences {
        batch: SequenceBatch::new(seqs).expect("generated sequences are well-formed"),
        labels,
    }
}
