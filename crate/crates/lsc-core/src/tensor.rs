//! Binary tensor file format.
//!
//! Layout: magic `LSCT`, format-version u8, ndim u8, dims as u32
//! little-endian, payload little-endian row-major, trailing CRC32 (IEEE) of
//! the payload bytes. Version 1 carries float32 payloads and is the external
//! interchange format; version 2 carries float64 and is used for snapshots,
//! where bit-exact resume requires full precision.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"LSCT";
pub const VERSION_F32: u8 = 1;
pub const VERSION_F64: u8 = 2;

fn crc32_table() -> [u32; 256] {
    let mut table = [0u32; 256];
    for (i, entry) in table.iter_mut().enumerate() {
        let mut c = i as u32;
        for _ in 0..8 {
            c = if c & 1 != 0 { 0xedb8_8320 ^ (c >> 1) } else { c >> 1 };
        }
        *entry = c;
    }
    table
}

/// CRC32 (IEEE 802.3) of a byte slice.
pub fn crc32(data: &[u8]) -> u32 {
    let table = crc32_table();
    let mut c = 0xffff_ffffu32;
    for &b in data {
        c = table[((c ^ u32::from(b)) & 0xff) as usize] ^ (c >> 8);
    }
    c ^ 0xffff_ffff
}

/// In-memory tensor: shape plus flat row-major f64 data.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn from_matrix(m: &Array2<f64>) -> Self {
        Tensor {
            dims: vec![m.nrows(), m.ncols()],
            data: m.iter().copied().collect(),
        }
    }

    pub fn into_matrix(self) -> Result<Array2<f64>> {
        if self.dims.len() != 2 {
            return Err(Error::Format(format!(
                "expected a 2-d tensor, got {} dims",
                self.dims.len()
            )));
        }
        Array2::from_shape_vec((self.dims[0], self.dims[1]), self.data)
            .map_err(|e| Error::Format(e.to_string()))
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn payload_bytes(t: &Tensor, version: u8) -> Vec<u8> {
    match version {
        VERSION_F32 => {
            let mut buf = Vec::with_capacity(t.data.len() * 4);
            for &v in &t.data {
                buf.extend_from_slice(&(v as f32).to_le_bytes());
            }
            buf
        }
        _ => {
            let mut buf = Vec::with_capacity(t.data.len() * 8);
            for &v in &t.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            buf
        }
    }
}

pub fn write_tensor(path: &Path, t: &Tensor, version: u8) -> Result<()> {
    if version != VERSION_F32 && version != VERSION_F64 {
        return Err(Error::Usage(format!("unsupported tensor format version {version}")));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&[version, t.dims.len() as u8])?;
    for &d in &t.dims {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    let payload = payload_bytes(t, version);
    w.write_all(&payload)?;
    w.write_all(&crc32(&payload).to_le_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let mut r = BufReader::new(File::open(path)?);
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    parse_tensor(&buf).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn parse_tensor(buf: &[u8]) -> Result<Tensor> {
    if buf.len() < 6 {
        return Err(Error::Format("truncated header at byte offset 0".into()));
    }
    if &buf[0..4] != MAGIC {
        return Err(Error::Format("bad magic at byte offset 0".into()));
    }
    let version = buf[4];
    let elem = match version {
        VERSION_F32 => 4usize,
        VERSION_F64 => 8,
        v => return Err(Error::Format(format!("unknown format version {v} at byte offset 4"))),
    };
    let ndim = buf[5] as usize;
    let header_len = 6 + 4 * ndim;
    if buf.len() < header_len {
        return Err(Error::Format(format!("truncated dims at byte offset {}", buf.len())));
    }
    let mut dims = Vec::with_capacity(ndim);
    for i in 0..ndim {
        let off = 6 + 4 * i;
        dims.push(u32::from_le_bytes(buf[off..off + 4].try_into().unwrap()) as usize);
    }
    let count: usize = dims.iter().product();
    let payload_len = count * elem;
    let expect = header_len + payload_len + 4;
    if buf.len() != expect {
        return Err(Error::Format(format!(
            "payload length mismatch at byte offset {header_len}: have {} bytes, expected {expect}",
            buf.len()
        )));
    }
    let payload = &buf[header_len..header_len + payload_len];
    let stored_crc =
        u32::from_le_bytes(buf[header_len + payload_len..].try_into().unwrap());
    let actual_crc = crc32(payload);
    if stored_crc != actual_crc {
        return Err(Error::Format(format!(
            "CRC mismatch at byte offset {}: stored {stored_crc:#010x}, computed {actual_crc:#010x}",
            header_len + payload_len
        )));
    }
    let mut data = Vec::with_capacity(count);
    match version {
        VERSION_F32 => {
            for chunk in payload.chunks_exact(4) {
                data.push(f64::from(f32::from_le_bytes(chunk.try_into().unwrap())));
            }
        }
        _ => {
            for chunk in payload.chunks_exact(8) {
                data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
            }
        }
    }
    Ok(Tensor { dims, data })
}

/// Write a D x N (or N x D) matrix as a version-1 interchange tensor.
pub fn write_matrix_f32(path: &Path, m: &Array2<f64>) -> Result<()> {
    write_tensor(path, &Tensor::from_matrix(m), VERSION_F32)
}

/// Write a matrix at full precision (snapshots).
pub fn write_matrix_f64(path: &Path, m: &Array2<f64>) -> Result<()> {
    write_tensor(path, &Tensor::from_matrix(m), VERSION_F64)
}

pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    read_tensor(path)?.into_matrix()
}
