//! Binary artifact format.
//!
//! ```text
//! "SKFEM1" | u64 LE header length | JSON header |
//! D triplets (row, col, value) | D Psi (row-major) | Psi (row-major) |
//! Psi^T b | row norms | omega | b
//! ```
//!
//! Every section after the header is a run of little-endian `f64`; section
//! lengths follow from the header dimensions.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::mesh::ElementVolumes;
use crate::sparse::CsrMatrix;
use crate::subspace::{ArtifactHeader, Basis, OfflineArtifact};

pub const MAGIC: &[u8; 6] = b"SKFEM1";

fn put(out: &mut Vec<u8>, values: impl IntoIterator<Item = f64>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn to_bytes(art: &OfflineArtifact) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&art.header)?;
    let h = &art.header;
    let floats = 3 * h.d_nnz + h.n_rows * h.rho + h.n_dof * h.rho + h.rho + h.n_rows + h.n_elements + h.n_dof;
    let mut out = Vec::with_capacity(MAGIC.len() + 8 + header.len() + 8 * floats);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for r in 0..art.d.nrows() {
        let (cols, vals) = art.d.row(r);
        for (&c, &v) in cols.iter().zip(vals) {
            put(&mut out, [r as f64, c as f64, v]);
        }
    }
    put(&mut out, art.dpsi.iter().copied());
    let psi = art.basis.psi();
    for i in 0..psi.nrows() {
        put(&mut out, psi.row(i).iter().copied());
    }
    put(&mut out, art.psi_tb.iter().copied());
    put(&mut out, art.row_norms.iter().copied());
    put(&mut out, art.omega.omega.iter().copied());
    put(&mut out, art.b.iter().copied());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated file while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn floats(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let len = n.checked_mul(8).ok_or_else(|| Error::Format(format!("{what} section too large")))?;
        let raw = self.take(len, what)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

fn as_index(v: f64, len: usize, what: &'static str) -> Result<usize> {
    if v.fract() != 0.0 || v < 0.0 || v >= len as f64 {
        return Err(Error::Format(format!("invalid {what} index {v} in D triplets (dimension {len})")));
    }
    Ok(v as usize)
}

pub fn from_bytes(bytes: &[u8]) -> Result<OfflineArtifact> {
    let mut rd = Reader { bytes, pos: 0 };
    if rd.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::Format("not an artifact file (bad magic)".into()));
    }
    let hlen = u64::from_le_bytes(rd.take(8, "header length")?.try_into().unwrap()) as usize;
    let header: ArtifactHeader = serde_json::from_slice(rd.take(hlen, "header")?)?;
    if header.endianness != "little" {
        return Err(Error::Format(format!("unsupported endianness {:?}", header.endianness)));
    }
    if header.n_rows != header.n_elements * header.dim
        || header.dof_map.len() != header.n_nodes
        || header.eigenvalues.len() != header.rho
        || header.eigen_residuals.len() != header.rho
    {
        return Err(Error::Format("header dimensions are inconsistent".into()));
    }
    let h = &header;
    let trip = rd.floats(3 * h.d_nnz, "D")?;
    let mut rows = Vec::with_capacity(h.d_nnz);
    let mut cols = Vec::with_capacity(h.d_nnz);
    let mut vals = Vec::with_capacity(h.d_nnz);
    for t in trip.chunks_exact(3) {
        rows.push(as_index(t[0], h.n_rows, "row")?);
        cols.push(as_index(t[1], h.n_dof, "column")?);
        vals.push(t[2]);
    }
    let d = CsrMatrix::from_triplets(h.n_rows, h.n_dof, &rows, &cols, &vals)?;
    let dpsi = rd.floats(h.n_rows * h.rho, "D Psi")?;
    let psi = DMatrix::from_row_slice(h.n_dof, h.rho, &rd.floats(h.n_dof * h.rho, "Psi")?);
    let psi_tb = rd.floats(h.rho, "Psi^T b")?;
    let row_norms = rd.floats(h.n_rows, "row norms")?;
    let omega = ElementVolumes { omega: rd.floats(h.n_elements, "omega")? };
    let b = rd.floats(h.n_dof, "b")?;
    if rd.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - rd.pos)));
    }
    if h.rho > 0 {
        for (r, (row, &rn)) in dpsi.chunks_exact(h.rho).zip(&row_norms).enumerate() {
            if (norm(row) - rn).abs() > 1e-12 * rn.max(1.0) {
                return Err(Error::Format(format!("row norm {r} does not match D Psi")));
            }
        }
    }
    let basis = Basis::from_parts(psi, h.eigenvalues.clone(), h.eigen_residuals.clone())?;
    Ok(OfflineArtifact { header, d, dpsi, basis, psi_tb, row_norms, omega, b })
}

pub fn save(art: &OfflineArtifact, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(art)?)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<OfflineArtifact> {
    from_bytes(&fs::read(path)?)
}
