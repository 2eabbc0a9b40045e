//! Binary checkpoint container: an ordered list of named matrices.
//!
//! Layout: magic `LAESCKPT`, format version (u32 LE), entry count
//! (u32 LE), then per entry a name-length u16 LE, the UTF-8 name, rows
//! and cols as u64 LE, and the row-major f64 LE payload. A CRC32 of
//! everything preceding it closes the file. Writing the same content
//! twice produces identical bytes, so reruns are diffable by checksum.

use crate::diagnostics::{ReconCell, ReconstructionModel};
use crate::laes::LaesModel;
use crate::models::{LinearRnnParams, LmnParams, LstmParams, RnnParams};
use crate::numerics::Matrix;
use crate::training::{FfParams, ModelParams};
use std::path::Path;
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"LAESCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint: bad magic")]
    BadMagic,
    #[error("unsupported checkpoint version {got}, this build reads {VERSION}")]
    UnsupportedVersion { got: u32 },
    #[error("truncated at offset {offset}, needed {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("{extra} trailing bytes after checksum")]
    TrailingBytes { extra: usize },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    CrcMismatch { stored: u32, computed: u32 },
    #[error("entry name is not UTF-8")]
    BadName,
    #[error("duplicate entry `{name}`")]
    DuplicateEntry { name: String },
    #[error("checkpoint is missing entry `{name}`")]
    MissingEntry { name: String },
    #[error("entry `{name}`: expected {expected_rows}x{expected_cols}, got {rows}x{cols}")]
    ShapeMismatch { name: String, expected_rows: usize, expected_cols: usize, rows: usize, cols: usize },
    #[error("checkpoint does not contain a recognizable {wanted} parameter set")]
    WrongContents { wanted: &'static str },
}

/// Ordered named matrices; order is part of the byte format, so encode
/// helpers always push in a fixed order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<(String, Matrix)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: &str, m: Matrix) {
        self.entries.push((name.to_string(), m));
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    fn require(&self, name: &str) -> Result<&Matrix, CheckpointError> {
        self.get(name).ok_or_else(|| CheckpointError::MissingEntry { name: name.to_string() })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, m) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
            for &v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut hasher = crc32fast::Hasher::new();
        hasher.update(&out);
        out.extend_from_slice(&hasher.finalize().to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        struct Cursor<'a> {
            bytes: &'a [u8],
            offset: usize,
        }
        impl<'a> Cursor<'a> {
            fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
                if self.offset + n > self.bytes.len() {
                    return Err(CheckpointError::Truncated {
                        offset: self.offset,
                        needed: self.offset + n - self.bytes.len(),
                    });
                }
                let s = &self.bytes[self.offset..self.offset + n];
                self.offset += n;
                Ok(s)
            }
            fn le_u32(&mut self) -> Result<u32, CheckpointError> {
                let b = self.take(4)?;
                Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            }
            fn le_u64(&mut self) -> Result<usize, CheckpointError> {
                let b = self.take(8)?;
                Ok(u64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]) as usize)
            }
        }
        let mut cur = Cursor { bytes, offset: 0 };
        if cur.take(8)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = cur.le_u32()?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion { got: version });
        }
        let count = cur.le_u32()? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = {
                let b = cur.take(2)?;
                u16::from_le_bytes([b[0], b[1]]) as usize
            };
            let name = std::str::from_utf8(cur.take(name_len)?)
                .map_err(|_| CheckpointError::BadName)?
                .to_string();
            let rows = cur.le_u64()?;
            let cols = cur.le_u64()?;
            let data: Vec<f64> = cur
                .take(rows * cols * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
                .collect();
            if entries.iter().any(|(n, _)| *n == name) {
                return Err(CheckpointError::DuplicateEntry { name });
            }
            entries.push((name, Matrix::from_vec(rows, cols, data)));
        }
        let body_end = cur.offset;
        let stored = cur.le_u32()?;
        if cur.offset != bytes.len() {
            return Err(CheckpointError::TrailingBytes { extra: bytes.len() - cur.offset });
        }
        let mut hasher = crc32fast::Hasher::new();
        hasher.update(&bytes[..body_end]);
        let computed = hasher.finalize();
        if stored != computed {
            return Err(CheckpointError::CrcMismatch { stored, computed });
        }
        Ok(Self { entries })
    }

    pub fn write(&self, path: &Path) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes()).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }
}

fn expect_shape(
    m: &Matrix,
    name: &str,
    rows: usize,
    cols: usize,
) -> Result<(), CheckpointError> {
    if m.rows() != rows || m.cols() != cols {
        return Err(CheckpointError::ShapeMismatch {
            name: name.to_string(),
            expected_rows: rows,
            expected_cols: cols,
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    Ok(())
}

// ---- autoencoder ----

pub fn encode_laes(model: &LaesModel, out: &mut Checkpoint) {
    out.push("laes.a", model.a.clone());
    out.push("laes.b", model.b.clone());
    if let Some(mean) = &model.mean {
        out.push("laes.mean", Matrix::from_vec(1, mean.len(), mean.clone()));
    }
}

pub fn decode_laes(ckpt: &Checkpoint) -> Result<LaesModel, CheckpointError> {
    let a = ckpt.require("laes.a")?.clone();
    let b = ckpt.require("laes.b")?.clone();
    let (p, d) = (a.rows(), a.cols());
    expect_shape(&b, "laes.b", p, p)?;
    let mean = match ckpt.get("laes.mean") {
        Some(m) => {
            expect_shape(m, "laes.mean", 1, d)?;
            Some(m.as_slice().to_vec())
        }
        None => None,
    };
    Ok(LaesModel { a, b, p, d, mean })
}

// ---- trainable networks ----

const LINEAR_RNN_NAMES: [&str; 3] = ["linear_rnn.a", "linear_rnn.b", "linear_rnn.w_o"];
const RNN_NAMES: [&str; 3] = ["rnn.v", "rnn.u", "rnn.w_o"];
const LMN_NAMES: [&str; 5] = ["lmn.w_xh", "lmn.w_mh", "lmn.w_hm", "lmn.w_mm", "lmn.w_o"];
const LSTM_NAMES: [&str; 9] = [
    "lstm.w_i", "lstm.w_f", "lstm.w_c", "lstm.w_og", "lstm.b_i", "lstm.b_f", "lstm.b_c",
    "lstm.b_og", "lstm.w_o",
];

pub fn encode_model(params: &ModelParams, out: &mut Checkpoint) {
    match params {
        ModelParams::LinearRnn(p) => {
            for (name, m) in LINEAR_RNN_NAMES.iter().zip([&p.a, &p.b, &p.w_o]) {
                out.push(name, m.clone());
            }
        }
        ModelParams::Rnn(p) => {
            for (name, m) in RNN_NAMES.iter().zip([&p.v, &p.u, &p.w_o]) {
                out.push(name, m.clone());
            }
        }
        ModelParams::Lmn(p) => {
            for (name, m) in
                LMN_NAMES.iter().zip([&p.w_xh, &p.w_mh, &p.w_hm, &p.w_mm, &p.w_o])
            {
                out.push(name, m.clone());
            }
        }
        ModelParams::Lstm(p) => {
            let mats =
                [&p.w_i, &p.w_f, &p.w_c, &p.w_og, &p.b_i, &p.b_f, &p.b_c, &p.b_og, &p.w_o];
            for (name, m) in LSTM_NAMES.iter().zip(mats) {
                out.push(name, m.clone());
            }
        }
    }
}

pub fn decode_model(ckpt: &Checkpoint) -> Result<ModelParams, CheckpointError> {
    if ckpt.contains("linear_rnn.a") {
        let [a, b, w_o] = LINEAR_RNN_NAMES.map(|n| ckpt.require(n).cloned());
        return Ok(ModelParams::LinearRnn(LinearRnnParams { a: a?, b: b?, w_o: w_o? }));
    }
    if ckpt.contains("rnn.v") {
        let [v, u, w_o] = RNN_NAMES.map(|n| ckpt.require(n).cloned());
        return Ok(ModelParams::Rnn(RnnParams { v: v?, u: u?, w_o: w_o? }));
    }
    if ckpt.contains("lmn.w_xh") {
        let [w_xh, w_mh, w_hm, w_mm, w_o] = LMN_NAMES.map(|n| ckpt.require(n).cloned());
        return Ok(ModelParams::Lmn(LmnParams {
            w_xh: w_xh?,
            w_mh: w_mh?,
            w_hm: w_hm?,
            w_mm: w_mm?,
            w_o: w_o?,
        }));
    }
    if ckpt.contains("lstm.w_i") {
        let [w_i, w_f, w_c, w_og, b_i, b_f, b_c, b_og, w_o] =
            LSTM_NAMES.map(|n| ckpt.require(n).cloned());
        return Ok(ModelParams::Lstm(LstmParams {
            w_i: w_i?,
            w_f: w_f?,
            w_c: w_c?,
            w_og: w_og?,
            b_i: b_i?,
            b_f: b_f?,
            b_c: b_c?,
            b_og: b_og?,
            w_o: w_o?,
        }));
    }
    Err(CheckpointError::WrongContents { wanted: "network" })
}

// ---- classification heads over autoencoder states ----

#[derive(Clone, Debug, PartialEq)]
pub enum HeadParams {
    Linear(Matrix),
    Svm(Matrix),
    Ff(FfParams),
}

pub fn encode_head(head: &HeadParams, out: &mut Checkpoint) {
    match head {
        HeadParams::Linear(w) => out.push("head.linear.w", w.clone()),
        HeadParams::Svm(w) => out.push("head.svm.w", w.clone()),
        HeadParams::Ff(p) => {
            out.push("head.ff.w1", p.w1.clone());
            out.push("head.ff.b1", p.b1.clone());
            out.push("head.ff.w2", p.w2.clone());
            out.push("head.ff.b2", p.b2.clone());
        }
    }
}

pub fn decode_head(ckpt: &Checkpoint) -> Result<HeadParams, CheckpointError> {
    if let Some(w) = ckpt.get("head.linear.w") {
        return Ok(HeadParams::Linear(w.clone()));
    }
    if let Some(w) = ckpt.get("head.svm.w") {
        return Ok(HeadParams::Svm(w.clone()));
    }
    if ckpt.contains("head.ff.w1") {
        return Ok(HeadParams::Ff(FfParams {
            w1: ckpt.require("head.ff.w1")?.clone(),
            b1: ckpt.require("head.ff.b1")?.clone(),
            w2: ckpt.require("head.ff.w2")?.clone(),
            b2: ckpt.require("head.ff.b2")?.clone(),
        }));
    }
    Err(CheckpointError::WrongContents { wanted: "classification head" })
}

// ---- sequence-reconstruction networks ----

pub fn encode_recon(model: &ReconstructionModel, out: &mut Checkpoint) {
    match &model.cell {
        ReconCell::Rnn { v, u } => {
            out.push("recon.rnn.v", v.clone());
            out.push("recon.rnn.u", u.clone());
        }
        ReconCell::Lstm { w_i, w_f, w_c, w_og, b_i, b_f, b_c, b_og } => {
            out.push("recon.lstm.w_i", w_i.clone());
            out.push("recon.lstm.w_f", w_f.clone());
            out.push("recon.lstm.w_c", w_c.clone());
            out.push("recon.lstm.w_og", w_og.clone());
            out.push("recon.lstm.b_i", b_i.clone());
            out.push("recon.lstm.b_f", b_f.clone());
            out.push("recon.lstm.b_c", b_c.clone());
            out.push("recon.lstm.b_og", b_og.clone());
        }
    }
    out.push("recon.w_out", model.w_out.clone());
}

pub fn decode_recon(ckpt: &Checkpoint) -> Result<ReconstructionModel, CheckpointError> {
    let cell = if ckpt.contains("recon.rnn.v") {
        ReconCell::Rnn {
            v: ckpt.require("recon.rnn.v")?.clone(),
            u: ckpt.require("recon.rnn.u")?.clone(),
        }
    } else if ckpt.contains("recon.lstm.w_i") {
        ReconCell::Lstm {
            w_i: ckpt.require("recon.lstm.w_i")?.clone(),
            w_f: ckpt.require("recon.lstm.w_f")?.clone(),
            w_c: ckpt.require("recon.lstm.w_c")?.clone(),
            w_og: ckpt.require("recon.lstm.w_og")?.clone(),
            b_i: ckpt.require("recon.lstm.b_i")?.clone(),
            b_f: ckpt.require("recon.lstm.b_f")?.clone(),
            b_c: ckpt.require("recon.lstm.b_c")?.clone(),
            b_og: ckpt.require("recon.lstm.b_og")?.clone(),
        }
    } else {
        return Err(CheckpointError::WrongContents { wanted: "reconstruction network" });
    };
    Ok(ReconstructionModel { cell, w_out: ckpt.require("recon.w_out")?.clone() })
}
