//! Little-endian binary formats for descriptors (`FSRD`), graphs (`FSRG`)
//! and decompositions (`FSRX`), plus a whitespace text format for
//! descriptors.

use std::fs;
use std::path::Path;

use crate::graph::{ComponentLabeling, DescriptorSet};
use crate::linalg::DenseMatrix;
use crate::sparse::{CsrMatrix, SparseSymmetricMatrix};
use crate::spectral::{Basis, Provenance, SpectralDecomposition, Variant};
use crate::{Error, Result};

pub const DESCRIPTOR_MAGIC: &[u8; 4] = b"FSRD";
pub const GRAPH_MAGIC: &[u8; 4] = b"FSRG";
pub const DECOMPOSITION_MAGIC: &[u8; 4] = b"FSRX";
pub const FORMAT_VERSION: u32 = 1;

const FLAG_NORMALIZE: u8 = 1;

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f64) {
        self.bytes(&(v as f32).to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
    fn usize(&mut self, v: usize) {
        self.u64(v as u64);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Format(format!("truncated file at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    /// A count that must fit in the remaining bytes at `unit` bytes each.
    fn count(&mut self, unit: usize) -> Result<usize> {
        let v = self.u64()?;
        let remaining = (self.buf.len() - self.pos) as u64;
        if v.saturating_mul(unit as u64) > remaining {
            return Err(Error::Format(format!("count {v} exceeds file size")));
        }
        Ok(v as usize)
    }

    fn f32s(&mut self, len: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            len.checked_mul(4)
                .ok_or_else(|| Error::Format("size overflow".into()))?,
        )?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }

    fn u64s(&mut self, len: usize) -> Result<Vec<u64>> {
        let raw = self.take(
            len.checked_mul(8)
                .ok_or_else(|| Error::Format("size overflow".into()))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn u32s(&mut self, len: usize) -> Result<Vec<u32>> {
        let raw = self.take(
            len.checked_mul(4)
                .ok_or_else(|| Error::Format("size overflow".into()))?,
        )?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        let m = self.take(4)?;
        if m != magic {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(m),
                String::from_utf8_lossy(magic)
            )));
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(Error::Format(format!(
                "{} trailing bytes",
                self.buf.len() - self.pos
            )))
        }
    }
}

fn u64s_to_usize(v: Vec<u64>) -> Vec<usize> {
    v.into_iter().map(|x| x as usize).collect()
}

pub fn encode_descriptors(data: &DescriptorSet) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(DESCRIPTOR_MAGIC);
    w.u32(FORMAT_VERSION);
    w.usize(data.len());
    w.u32(data.dim() as u32);
    w.u8(0);
    for v in data.vectors() {
        v.iter().for_each(|&x| w.f32(x));
    }
    data.region_to_image().iter().for_each(|&id| w.u64(id));
    w.buf
}

/// Decodes an `FSRD` payload. Vectors are renormalized when the file sets
/// its normalize flag or when `normalize` is requested; otherwise they must be
/// unit norm to single precision.
pub fn decode_descriptors(bytes: &[u8], normalize: bool) -> Result<DescriptorSet> {
    let mut r = Reader::new(bytes);
    r.header(DESCRIPTOR_MAGIC)?;
    let n = r.count(4)?;
    let d = r.u32()? as usize;
    let flags = r.u8()?;
    let values = r.f32s(
        n.checked_mul(d)
            .ok_or_else(|| Error::Format("size overflow".into()))?,
    )?;
    let images = r.u64s(n)?;
    r.finish()?;
    let vectors: Vec<Vec<f64>> = if d == 0 {
        vec![vec![]; n]
    } else {
        values.chunks_exact(d).map(<[f64]>::to_vec).collect()
    };
    let set = if normalize || flags & FLAG_NORMALIZE != 0 {
        DescriptorSet::normalized(vectors)?
    } else {
        DescriptorSet::new(vectors)?
    };
    set.with_images(images)
}

pub fn write_descriptors(path: impl AsRef<Path>, data: &DescriptorSet) -> Result<()> {
    fs::write(path, encode_descriptors(data))?;
    Ok(())
}

/// Reads a binary `FSRD` file, or the text format when the file does not
/// start with the magic.
pub fn read_descriptors(path: impl AsRef<Path>, normalize: bool) -> Result<DescriptorSet> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(DESCRIPTOR_MAGIC) {
        decode_descriptors(&bytes, normalize)
    } else {
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::Format("descriptor file is neither FSRD nor UTF-8 text".into()))?;
        parse_descriptor_text(&text, normalize)
    }
}

/// One whitespace-separated vector per line; blank lines and lines starting
/// with `#` are skipped. Each vector is its own image.
pub fn parse_descriptor_text(text: &str, normalize: bool) -> Result<DescriptorSet> {
    let mut vectors = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        vectors.push(v);
    }
    if normalize {
        DescriptorSet::normalized(vectors)
    } else {
        DescriptorSet::new(vectors)
    }
}

pub fn encode_graph(w: &SparseSymmetricMatrix) -> Vec<u8> {
    let csr = w.csr();
    let mut out = Writer::default();
    out.bytes(GRAPH_MAGIC);
    out.u32(FORMAT_VERSION);
    out.usize(csr.rows());
    out.usize(csr.nnz());
    csr.indptr().iter().for_each(|&p| out.usize(p));
    csr.indices().iter().for_each(|&j| out.u32(j));
    csr.values().iter().for_each(|&v| out.f32(v));
    out.buf
}

pub fn decode_graph(bytes: &[u8]) -> Result<SparseSymmetricMatrix> {
    let mut r = Reader::new(bytes);
    r.header(GRAPH_MAGIC)?;
    let n = r.count(8)?;
    let nnz = r.count(8)?;
    let indptr = u64s_to_usize(r.u64s(n + 1)?);
    let indices = r.u32s(nnz)?;
    let values = r.f32s(nnz)?;
    r.finish()?;
    let csr = CsrMatrix::from_raw(n, n, indptr, indices, values)?;
    SparseSymmetricMatrix::new(csr).map_err(|e| Error::Format(format!("graph: {e}")))
}

pub fn write_graph(path: impl AsRef<Path>, w: &SparseSymmetricMatrix) -> Result<()> {
    fs::write(path, encode_graph(w))?;
    Ok(())
}

pub fn read_graph(path: impl AsRef<Path>) -> Result<SparseSymmetricMatrix> {
    decode_graph(&fs::read(path)?)
}

/// Serializes a decomposition. `U` and `η` are stored in single precision;
/// [`SpectralDecomposition::to_storage_precision`] yields exactly what a
/// reload returns.
pub fn encode_decomposition(dec: &SpectralDecomposition) -> Vec<u8> {
    let mut w = Writer::default();
    let n = dec.n();
    let r = dec.rank();
    w.bytes(DECOMPOSITION_MAGIC);
    w.u32(FORMAT_VERSION);
    w.usize(n);
    w.u32(r as u32);
    w.u8(dec.variant().code());
    w.u64(dec.provenance().seed);
    w.f64(dec.alpha_hint().unwrap_or(f64::NAN));
    dec.eigenvalues().iter().for_each(|&l| w.f64(l));
    match dec.basis() {
        Basis::Dense(m) => m.as_slice().iter().for_each(|&v| w.f32(v)),
        Basis::Sparse(m) => {
            w.usize(m.nnz());
            m.indptr().iter().for_each(|&p| w.usize(p));
            m.indices().iter().for_each(|&j| w.u32(j));
            m.values().iter().for_each(|&v| w.f32(v));
        }
    }
    dec.row_norms().iter().for_each(|&v| w.f32(v));
    let comps = dec.components();
    w.usize(comps.count());
    comps.sizes.iter().for_each(|&s| w.usize(s));
    comps.order.iter().for_each(|&v| w.usize(v));
    let crc = crc32fast::hash(&w.buf);
    w.u32(crc);
    w.buf
}

pub fn decode_decomposition(bytes: &[u8]) -> Result<SpectralDecomposition> {
    if bytes.len() < 4 {
        return Err(Error::Format("truncated file".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    let mut rd = Reader::new(body);
    rd.header(DECOMPOSITION_MAGIC)?;
    let n = rd.count(4)?;
    let r = rd.u32()? as usize;
    let variant = Variant::from_code(rd.u8()?).map_err(|e| Error::Format(e.to_string()))?;
    let seed = rd.u64()?;
    let alpha = rd.f64()?;
    let eigenvalues = (0..r).map(|_| rd.f64()).collect::<Result<Vec<_>>>()?;
    let basis = if variant == Variant::Sparse {
        let nnz = rd.count(8)?;
        let indptr = u64s_to_usize(rd.u64s(n + 1)?);
        let indices = rd.u32s(nnz)?;
        let values = rd.f32s(nnz)?;
        Basis::Sparse(CsrMatrix::from_raw(n, r, indptr, indices, values)?)
    } else {
        let values = rd.f32s(
            n.checked_mul(r)
                .ok_or_else(|| Error::Format("size overflow".into()))?,
        )?;
        Basis::Dense(DenseMatrix::from_row_major(n, r, values)?)
    };
    let row_norms = rd.f32s(n)?;
    let c = rd.count(8)?;
    let sizes = u64s_to_usize(rd.u64s(c)?);
    let order = u64s_to_usize(rd.u64s(n)?);
    rd.finish()?;
    let components = labeling_from_layout(n, sizes, order)?;
    let provenance = Provenance {
        rank: r,
        oversampling: None,
        power_iterations: None,
        tau: (variant == Variant::Sparse).then(|| basis.nnz()),
        seed,
    };
    SpectralDecomposition::from_parts(
        basis,
        eigenvalues,
        row_norms,
        components,
        variant,
        provenance,
        (!alpha.is_nan()).then_some(alpha),
    )
    .map_err(|e| Error::Format(e.to_string()))
}

fn labeling_from_layout(
    n: usize,
    sizes: Vec<usize>,
    order: Vec<usize>,
) -> Result<ComponentLabeling> {
    if sizes.iter().sum::<usize>() != n {
        return Err(Error::Format("component sizes do not sum to n".into()));
    }
    let mut labels = vec![usize::MAX; n];
    let mut p = 0;
    for (c, &s) in sizes.iter().enumerate() {
        for &v in &order[p..p + s] {
            if v >= n || labels[v] != usize::MAX {
                return Err(Error::Format("component order is not a permutation".into()));
            }
            labels[v] = c;
        }
        p += s;
    }
    let labeling =
        ComponentLabeling::from_labels(labels).map_err(|e| Error::Format(e.to_string()))?;
    if labeling.order != order || labeling.sizes != sizes {
        return Err(Error::Format("component layout is not canonical".into()));
    }
    Ok(labeling)
}

pub fn write_decomposition(path: impl AsRef<Path>, dec: &SpectralDecomposition) -> Result<()> {
    fs::write(path, encode_decomposition(dec))?;
    Ok(())
}

pub fn read_decomposition(path: impl AsRef<Path>) -> Result<SpectralDecomposition> {
    decode_decomposition(&fs::read(path)?)
}
