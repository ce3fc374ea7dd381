//! File formats: JSON symbol specs, CSV block data and a raw binary dump.
//!
//! Complex numbers are `[re, im]` pairs in JSON; matrices are lists of rows.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{BlockMatrix, BlockVector, CMat, C64};
use crate::symbol::{RationalSymbolSpec, SharpCoeffs};

type JsonMat = Vec<Vec<[f64; 2]>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SharpFile {
    pub rho00: JsonMat,
    #[serde(default)]
    pub rho0: Vec<JsonMat>,
    #[serde(default)]
    pub rho: Vec<Vec<JsonMat>>,
}

/// On-disk form of a [`RationalSymbolSpec`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecFile {
    pub d: usize,
    pub rho00: JsonMat,
    #[serde(default)]
    pub rho0: Vec<JsonMat>,
    #[serde(default)]
    pub poles: Vec<[f64; 2]>,
    #[serde(default)]
    pub rho: Vec<Vec<JsonMat>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sharp: Option<SharpFile>,
}

fn to_json(m: &CMat) -> JsonMat {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

fn from_json(m: &JsonMat, d: usize, what: &str) -> Result<CMat> {
    if m.len() != d || m.iter().any(|r| r.len() != d) {
        return Err(Error::MalformedSpec(format!("{what} must be a {d}x{d} matrix")));
    }
    Ok(CMat::from_fn(d, d, |i, j| C64::new(m[i][j][0], m[i][j][1])))
}

impl SpecFile {
    pub fn from_spec(spec: &RationalSymbolSpec) -> Self {
        let sharp = if spec.sharp_explicit || spec.d > 1 {
            Some(SharpFile {
                rho00: to_json(&spec.sharp.rho00),
                rho0: spec.sharp.rho0.iter().map(to_json).collect(),
                rho: spec
                    .sharp
                    .rho
                    .iter()
                    .map(|r| r.iter().map(to_json).collect())
                    .collect(),
            })
        } else {
            None
        };
        SpecFile {
            d: spec.d,
            rho00: to_json(&spec.rho00),
            rho0: spec.rho0.iter().map(to_json).collect(),
            poles: spec.poles.iter().map(|p| [p.re, p.im]).collect(),
            rho: spec.rho.iter().map(|r| r.iter().map(to_json).collect()).collect(),
            sharp,
        }
    }

    pub fn to_spec(&self) -> Result<RationalSymbolSpec> {
        let d = self.d;
        if d == 0 {
            return Err(Error::MalformedSpec("d must be positive".into()));
        }
        let mats = |v: &[JsonMat], what: &str| -> Result<Vec<CMat>> {
            v.iter().map(|m| from_json(m, d, what)).collect()
        };
        let groups = |v: &[Vec<JsonMat>], what: &str| -> Result<Vec<Vec<CMat>>> {
            v.iter().map(|g| mats(g, what)).collect()
        };
        let sharp = match &self.sharp {
            Some(s) => Some(SharpCoeffs {
                rho00: from_json(&s.rho00, d, "sharp.rho00")?,
                rho0: mats(&s.rho0, "sharp.rho0")?,
                rho: groups(&s.rho, "sharp.rho")?,
            }),
            None => None,
        };
        RationalSymbolSpec::new(
            d,
            from_json(&self.rho00, d, "rho00")?,
            mats(&self.rho0, "rho0")?,
            self.poles.iter().map(|p| C64::new(p[0], p[1])).collect(),
            groups(&self.rho, "rho")?,
            sharp,
        )
    }
}

pub fn read_spec(path: &Path) -> Result<RationalSymbolSpec> {
    let f = File::open(path)?;
    let file: SpecFile = serde_json::from_reader(BufReader::new(f))
        .map_err(|e| Error::MalformedSpec(e.to_string()))?;
    file.to_spec()
}

pub fn write_spec(path: &Path, spec: &RationalSymbolSpec) -> Result<()> {
    let f = File::create(path)?;
    serde_json::to_writer_pretty(BufWriter::new(f), &SpecFile::from_spec(spec))?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct VectorRecord {
    k: usize,
    row: usize,
    col: usize,
    re: f64,
    im: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct MatrixRecord {
    s: usize,
    t: usize,
    row: usize,
    col: usize,
    re: f64,
    im: f64,
}

/// Block vector as CSV rows `k,row,col,re,im` (`k` 1-based, `row`/`col` 0-based).
pub fn write_vector_csv<W: Write>(w: W, v: &BlockVector) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for (k, b) in v.blocks.iter().enumerate() {
        for row in 0..b.nrows() {
            for col in 0..b.ncols() {
                let z = b[(row, col)];
                out.serialize(VectorRecord {
                    k: k + 1,
                    row,
                    col,
                    re: z.re,
                    im: z.im,
                })?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_vector_csv<R: Read>(r: R) -> Result<BlockVector> {
    let mut rdr = csv::Reader::from_reader(r);
    let recs: Vec<VectorRecord> = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
    if recs.is_empty() {
        return Err(Error::Parse("empty block vector".into()));
    }
    if recs.iter().any(|r| r.k == 0) {
        return Err(Error::Parse("block index k is 1-based".into()));
    }
    let n = recs.iter().map(|r| r.k).max().unwrap_or(0);
    let d = recs.iter().map(|r| r.row).max().unwrap_or(0) + 1;
    let cols = recs.iter().map(|r| r.col).max().unwrap_or(0) + 1;
    let mut v = BlockVector::zeros(n, d, cols);
    for r in recs {
        v.blocks[r.k - 1][(r.row, r.col)] = C64::new(r.re, r.im);
    }
    Ok(v)
}

/// Block matrix as CSV rows `s,t,row,col,re,im`.
pub fn write_matrix_csv<W: Write>(w: W, m: &BlockMatrix) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for s in 1..=m.n {
        for t in 1..=m.n {
            let b = m.block(s, t);
            for row in 0..m.d {
                for col in 0..m.d {
                    let z = b[(row, col)];
                    out.serialize(MatrixRecord {
                        s,
                        t,
                        row,
                        col,
                        re: z.re,
                        im: z.im,
                    })?;
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_matrix_csv<R: Read>(r: R) -> Result<BlockMatrix> {
    let mut rdr = csv::Reader::from_reader(r);
    let recs: Vec<MatrixRecord> = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
    if recs.is_empty() {
        return Err(Error::Parse("empty block matrix".into()));
    }
    let n = recs.iter().map(|r| r.s.max(r.t)).max().unwrap_or(0);
    let d = recs.iter().map(|r| r.row.max(r.col)).max().unwrap_or(0) + 1;
    let mut m = BlockMatrix::zeros(n, d);
    for r in recs {
        if r.s == 0 || r.t == 0 {
            return Err(Error::Parse("block indices are 1-based".into()));
        }
        m.data[((r.s - 1) * d + r.row, (r.t - 1) * d + r.col)] = C64::new(r.re, r.im);
    }
    Ok(m)
}

/// Magic number opening every binary dump.
pub const BINARY_MAGIC: u64 = 0x5450_5a42_4c4b_0001;
pub const BINARY_VERSION: u64 = 1;
const LAYOUT_VECTOR: u64 = 0;
const LAYOUT_MATRIX: u64 = 1;

/// Raw little-endian dump: eight `u64` header values
/// `(magic, version, n, d, layout, cols, 0, 0)` followed by interleaved
/// `re, im` pairs in block-major, row-major order.
fn write_binary<W: Write>(mut w: W, n: usize, d: usize, layout: u64, cols: usize, data: &[C64]) -> Result<()> {
    let header = [BINARY_MAGIC, BINARY_VERSION, n as u64, d as u64, layout, cols as u64, 0, 0];
    for h in header {
        w.write_all(&h.to_le_bytes())?;
    }
    for z in data {
        w.write_all(&z.re.to_le_bytes())?;
        w.write_all(&z.im.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_binary<R: Read>(mut r: R, layout: u64) -> Result<(usize, usize, usize, Vec<C64>)> {
    let mut buf = [0u8; 8];
    let mut header = [0u64; 8];
    for h in header.iter_mut() {
        r.read_exact(&mut buf)?;
        *h = u64::from_le_bytes(buf);
    }
    if header[0] != BINARY_MAGIC {
        return Err(Error::Parse("bad magic number".into()));
    }
    if header[1] != BINARY_VERSION {
        return Err(Error::Parse(format!("unsupported version {}", header[1])));
    }
    if header[4] != layout {
        return Err(Error::Parse("unexpected layout".into()));
    }
    let (n, d, cols) = (header[2] as usize, header[3] as usize, header[5] as usize);
    let count = if layout == LAYOUT_VECTOR { n * d * cols } else { n * n * d * d };
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut buf)?;
        let re = f64::from_le_bytes(buf);
        r.read_exact(&mut buf)?;
        data.push(C64::new(re, f64::from_le_bytes(buf)));
    }
    Ok((n, d, cols, data))
}

pub fn write_vector_binary<W: Write>(w: W, v: &BlockVector) -> Result<()> {
    let cols = v.cols();
    let mut data = Vec::with_capacity(v.n * v.d * cols);
    for b in &v.blocks {
        for i in 0..v.d {
            for j in 0..cols {
                data.push(b[(i, j)]);
            }
        }
    }
    write_binary(w, v.n, v.d, LAYOUT_VECTOR, cols, &data)
}

pub fn read_vector_binary<R: Read>(r: R) -> Result<BlockVector> {
    let (n, d, cols, data) = read_binary(r, LAYOUT_VECTOR)?;
    let blocks = (0..n)
        .map(|k| CMat::from_fn(d, cols, |i, j| data[(k * d + i) * cols + j]))
        .collect();
    BlockVector::new(d, blocks)
}

pub fn write_matrix_binary<W: Write>(w: W, m: &BlockMatrix) -> Result<()> {
    let dim = m.n * m.d;
    let data: Vec<C64> = (0..dim)
        .flat_map(|i| (0..dim).map(move |j| (i, j)))
        .map(|(i, j)| m.data[(i, j)])
        .collect();
    write_binary(w, m.n, m.d, LAYOUT_MATRIX, dim, &data)
}

pub fn read_matrix_binary<R: Read>(r: R) -> Result<BlockMatrix> {
    let (n, d, _, data) = read_binary(r, LAYOUT_MATRIX)?;
    let dim = n * d;
    BlockMatrix::from_dense(n, d, CMat::from_fn(dim, dim, |i, j| data[i * dim + j]))
}

/// Output encoding for bulk numeric data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Binary,
}

impl Format {
    /// `.bin` selects the binary dump, anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => Format::Binary,
            _ => Format::Csv,
        }
    }
}

pub fn read_vector(path: &Path) -> Result<BlockVector> {
    let f = BufReader::new(File::open(path)?);
    match Format::from_path(path) {
        Format::Csv => read_vector_csv(f),
        Format::Binary => read_vector_binary(f),
    }
}

pub fn write_vector(path: &Path, v: &BlockVector, fmt: Format) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    match fmt {
        Format::Csv => write_vector_csv(f, v),
        Format::Binary => write_vector_binary(f, v),
    }
}

pub fn read_matrix(path: &Path) -> Result<BlockMatrix> {
    let f = BufReader::new(File::open(path)?);
    match Format::from_path(path) {
        Format::Csv => read_matrix_csv(f),
        Format::Binary => read_matrix_binary(f),
    }
}

pub fn write_matrix(path: &Path, m: &BlockMatrix, fmt: Format) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    match fmt {
        Format::Csv => write_matrix_csv(f, m),
        Format::Binary => write_matrix_binary(f, m),
    }
}
