//! Binary parameter-vector (`DPSFTPV1`) and projection-matrix (`DPSFTPM1`) files.
//!
//! All integers are u64 little-endian, all floats IEEE-754 f64 little-endian. Text blocks
//! are a u64 byte length followed by UTF-8.
//!
//! ```text
//! PV: magic[8] | len | values[len] | layout text block
//! PM: magic[8] | d | k | values[d*k] (row-major) | fingerprint text block
//! ```

use std::path::Path;
use std::sync::Arc;

use super::{with_path, IoError};
use crate::linalg::{orthonormality_defect, DenseMatrix};
use crate::models::{Layout, ParameterVector};
use crate::subspace::ProjectionMatrix;

pub const PVEC_MAGIC: &[u8; 8] = b"DPSFTPV1";
pub const PMAT_MAGIC: &[u8; 8] = b"DPSFTPM1";
/// Orthonormality defect accepted when loading a projection matrix.
pub const PMAT_TOLERANCE: f64 = 1e-6;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], IoError> {
        let end = self.pos.checked_add(n).ok_or(IoError::Truncated(what))?;
        let s = self.buf.get(self.pos..end).ok_or(IoError::Truncated(what))?;
        self.pos = end;
        Ok(s)
    }

    fn magic(&mut self, expected: &[u8; 8]) -> Result<(), IoError> {
        let found = self.take(8, "magic")?;
        if found != expected {
            return Err(IoError::BadMagic {
                expected: String::from_utf8_lossy(expected).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        Ok(())
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, IoError> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize, what: &'static str) -> Result<Vec<f64>, IoError> {
        let bytes = n.checked_mul(8).ok_or(IoError::Truncated(what))?;
        let b = self.take(bytes, what)?;
        Ok(b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn text(&mut self, what: &'static str) -> Result<String, IoError> {
        let n = self.u64(what)?;
        let n = usize::try_from(n).map_err(|_| IoError::Truncated(what))?;
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec()).map_err(|e| IoError::LayoutMismatch(format!("{what} is not UTF-8: {e}")))
    }

    fn finish(self) -> Result<(), IoError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(IoError::TrailingBytes(n)),
        }
    }
}

fn put_text(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u64).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

pub fn encode_pvec(v: &ParameterVector) -> Vec<u8> {
    let layout = v.layout().to_string();
    let mut out = Vec::with_capacity(8 + 8 + 8 * v.len() + 8 + layout.len());
    out.extend_from_slice(PVEC_MAGIC);
    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
    for x in v.values() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    put_text(&mut out, &layout);
    out
}

pub fn decode_pvec(bytes: &[u8]) -> Result<ParameterVector, IoError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    r.magic(PVEC_MAGIC)?;
    let len = usize::try_from(r.u64("length")?).map_err(|_| IoError::Truncated("values"))?;
    let values = r.f64s(len, "values")?;
    let layout: Layout = r.text("layout")?.parse().map_err(IoError::LayoutMismatch)?;
    r.finish()?;
    if layout.total() != len {
        return Err(IoError::LayoutMismatch(format!("layout describes {} values, file holds {len}", layout.total())));
    }
    ParameterVector::new(Arc::new(layout), values).map_err(|e| IoError::LayoutMismatch(e.to_string()))
}

pub fn save_pvec(path: &Path, v: &ParameterVector) -> Result<(), IoError> {
    with_path(path, std::fs::write(path, encode_pvec(v)))
}

pub fn load_pvec(path: &Path) -> Result<ParameterVector, IoError> {
    decode_pvec(&with_path(path, std::fs::read(path))?)
}

pub fn encode_pmat(p: &ProjectionMatrix) -> Vec<u8> {
    let cols = p.columns();
    let mut out = Vec::with_capacity(24 + 8 * cols.data().len() + 8 + p.fingerprint().len());
    out.extend_from_slice(PMAT_MAGIC);
    out.extend_from_slice(&(p.d() as u64).to_le_bytes());
    out.extend_from_slice(&(p.k() as u64).to_le_bytes());
    for x in cols.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    put_text(&mut out, p.fingerprint());
    out
}

pub fn decode_pmat(bytes: &[u8]) -> Result<ProjectionMatrix, IoError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    r.magic(PMAT_MAGIC)?;
    let d = r.u64("d")?;
    let k = r.u64("k")?;
    if k == 0 || k > d {
        return Err(IoError::Shape(format!("need 1 <= k <= d, got d = {d}, k = {k}")));
    }
    let n = d
        .checked_mul(k)
        .and_then(|n| usize::try_from(n).ok())
        .ok_or_else(|| IoError::Shape(format!("{d} x {k} does not fit in memory")))?;
    let values = r.f64s(n, "matrix")?;
    let fingerprint = r.text("fingerprint")?;
    r.finish()?;
    let columns = DenseMatrix::from_row_major(d as usize, k as usize, values).map_err(|e| IoError::Shape(e.to_string()))?;
    let defect = orthonormality_defect(&columns);
    if !(defect < PMAT_TOLERANCE) {
        return Err(IoError::NotOrthonormal(defect));
    }
    ProjectionMatrix::new(columns, fingerprint, PMAT_TOLERANCE).map_err(|_| IoError::NotOrthonormal(defect))
}

pub fn save_pmat(path: &Path, p: &ProjectionMatrix) -> Result<(), IoError> {
    with_path(path, std::fs::write(path, encode_pmat(p)))
}

pub fn load_pmat(path: &Path) -> Result<ProjectionMatrix, IoError> {
    decode_pmat(&with_path(path, std::fs::read(path))?)
}
