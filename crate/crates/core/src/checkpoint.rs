//! Binary checkpoints.
//!
//! An HDMF record is
//!
//! ```text
//! "HDMF" | version u32 | K u32 | input_dim u32 | K × layer size u32
//!        | W_1..W_K, b_1..b_2K as f64, row-major | CRC32 u32
//! ```
//!
//! with every integer and float little-endian and the CRC taken over all
//! preceding bytes of the record. Untied towers are two records back to
//! back (users, then items). The MF baseline uses magic `"MFBL"` followed by
//! version, user count, item count and `k`, then both factor matrices.

use std::fs;
use std::path::Path;

use crate::autoencoder::{Architecture, ModelParams, Towers};
use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;
use crate::train::MfModel;

pub const HDMF_MAGIC: [u8; 4] = *b"HDMF";
pub const MF_MAGIC: [u8; 4] = *b"MFBL";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Hdmf(Towers),
    Mf(MfModel),
}

/// Byte length of one HDMF record for `arch`.
pub fn record_len(arch: &Architecture) -> usize {
    16 + 4 * arch.depth() + 8 * arch.parameter_count() + 4
}

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    let v = u32::try_from(v).expect("dimension fits in u32");
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(buf: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

fn seal(mut buf: Vec<u8>) -> Vec<u8> {
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

pub fn encode_params(params: &ModelParams) -> Vec<u8> {
    let arch = params.arch();
    let mut buf = Vec::with_capacity(record_len(arch));
    buf.extend_from_slice(&HDMF_MAGIC);
    put_u32(&mut buf, FORMAT_VERSION as usize);
    put_u32(&mut buf, arch.depth());
    put_u32(&mut buf, arch.input_dim());
    for &s in arch.encoder_sizes() {
        put_u32(&mut buf, s);
    }
    for s in params.slices() {
        put_f64s(&mut buf, s);
    }
    seal(buf)
}

pub fn encode_towers(towers: &Towers) -> Vec<u8> {
    towers.param_sets().into_iter().flat_map(encode_params).collect()
}

pub fn encode_mf(mf: &MfModel) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&MF_MAGIC);
    put_u32(&mut buf, FORMAT_VERSION as usize);
    put_u32(&mut buf, mf.user_factors().rows());
    put_u32(&mut buf, mf.item_factors().rows());
    put_u32(&mut buf, mf.k());
    put_f64s(&mut buf, mf.user_factors().as_slice());
    put_f64s(&mut buf, mf.item_factors().as_slice());
    seal(buf)
}

/// Sequential reader over one record.
struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("file is truncated".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?;
        Ok(self
            .take(len)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    /// Checks the CRC over `[start, pos)` against the next four bytes.
    fn verify_crc(&mut self, start: usize) -> Result<()> {
        let computed = crc32fast::hash(&self.bytes[start..self.pos]);
        let stored = self.u32()? as u32;
        if stored != computed {
            return Err(Error::Checkpoint(format!(
                "CRC mismatch (stored {stored:08x}, computed {computed:08x})"
            )));
        }
        Ok(())
    }

    fn header(&mut self, magic: [u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION as usize {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        Ok(())
    }
}

fn bad_shape(e: Error) -> Error {
    Error::Checkpoint(e.to_string())
}

fn read_params(c: &mut Cursor<'_>) -> Result<ModelParams> {
    let start = c.pos;
    c.header(HDMF_MAGIC)?;
    let depth = c.u32()?;
    let input_dim = c.u32()?;
    if depth > 64 {
        return Err(Error::Checkpoint(format!("implausible depth {depth}")));
    }
    let sizes = (0..depth).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
    let arch = Architecture::new(input_dim, sizes).map_err(bad_shape)?;
    let mut weights = Vec::with_capacity(depth);
    for j in 1..=depth {
        let (r, k) = arch.weight_shape(j);
        weights.push(c.f64s(r * k)?);
    }
    let layer_sizes = arch.layer_sizes();
    let mut biases = Vec::with_capacity(2 * depth);
    for l in 1..=2 * depth {
        biases.push(c.f64s(layer_sizes[l])?);
    }
    c.verify_crc(start)?;
    let weights = weights
        .into_iter()
        .enumerate()
        .map(|(j, w)| {
            let (r, k) = arch.weight_shape(j + 1);
            DenseMatrix::from_vec(r, k, w)
        })
        .collect::<Result<Vec<_>>>()
        .map_err(bad_shape)?;
    ModelParams::from_parts(arch, weights, biases).map_err(bad_shape)
}

fn read_mf(c: &mut Cursor<'_>) -> Result<MfModel> {
    c.header(MF_MAGIC)?;
    let users = c.u32()?;
    let items = c.u32()?;
    let k = c.u32()?;
    let uf = c.f64s(users.saturating_mul(k))?;
    let vf = c.f64s(items.saturating_mul(k))?;
    c.verify_crc(0)?;
    if c.pos != c.bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after MF record".into()));
    }
    let uf = DenseMatrix::from_vec(users, k, uf).map_err(bad_shape)?;
    let vf = DenseMatrix::from_vec(items, k, vf).map_err(bad_shape)?;
    MfModel::from_factors(uf, vf).map_err(bad_shape)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Model> {
    let mut c = Cursor { bytes, pos: 0 };
    if bytes.starts_with(&MF_MAGIC) {
        return read_mf(&mut c).map(Model::Mf);
    }
    let mut sets = Vec::new();
    while c.pos < bytes.len() || sets.is_empty() {
        sets.push(read_params(&mut c)?);
    }
    Towers::from_sets(sets).map(Model::Hdmf)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_params(params: &ModelParams, path: &Path) -> Result<()> {
    write(path, &encode_params(params))
}

pub fn save_towers(towers: &Towers, path: &Path) -> Result<()> {
    write(path, &encode_towers(towers))
}

pub fn save_mf(mf: &MfModel, path: &Path) -> Result<()> {
    write(path, &encode_mf(mf))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
