//! Binary embedding stores.
//!
//! A store is a pair of files sharing a base path:
//!
//! ```text
//! <name>.embs   magic "EMBS" | u32 LE version (1) | u32 LE dim | u64 LE count
//!               | count × dim f32 LE values, row-major
//! <name>.ids    count newline-terminated UTF-8 ids, line i names row i
//! ```
//!
//! The payload is a plain rectangular block, so row `i` lives at a fixed
//! offset. Stores opened from disk are memory-mapped and read in place on
//! little-endian hosts.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use memmap2::Mmap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"EMBS";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 20;

enum Payload {
    Mapped(Mmap),
    Owned(Vec<f32>),
}

/// An immutable collection of `count` vectors of dimension `dim`, each with a
/// string id.
pub struct EmbeddingStore {
    dim: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    payload: Payload,
}

impl std::fmt::Debug for EmbeddingStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EmbeddingStore")
            .field("dim", &self.dim)
            .field("count", &self.len())
            .field("mapped", &matches!(self.payload, Payload::Mapped(_)))
            .finish()
    }
}

impl PartialEq for EmbeddingStore {
    /// Equal ids and bit-identical vectors.
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.ids == other.ids
            && self
                .data()
                .iter()
                .zip(other.data())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

fn build_index(ids: &[String]) -> HashMap<String, usize> {
    let mut index = HashMap::with_capacity(ids.len());
    for (row, id) in ids.iter().enumerate() {
        index.entry(id.clone()).or_insert(row);
    }
    index
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id.contains(['\n', '\r']) {
        return Err(Error::InvalidId(id.to_string()));
    }
    Ok(())
}

fn flatten_rows<R: AsRef<[f32]>>(dim: usize, rows: &[R]) -> Result<Vec<f32>> {
    let mut data = Vec::with_capacity(dim * rows.len());
    for (row, values) in rows.iter().enumerate() {
        let values = values.as_ref();
        if values.len() != dim {
            return Err(Error::RaggedMatrix {
                row,
                expected: dim,
                found: values.len(),
            });
        }
        data.extend_from_slice(values);
    }
    Ok(data)
}

impl EmbeddingStore {
    /// Builds an in-memory store. Ids must be unique and non-empty and every
    /// row must have `dim` values.
    pub fn from_rows<S, R>(dim: usize, ids: &[S], rows: &[R]) -> Result<Self>
    where
        S: AsRef<str>,
        R: AsRef<[f32]>,
    {
        if dim == 0 {
            return Err(Error::ZeroDim);
        }
        if ids.len() != rows.len() {
            return Err(Error::IdRowMismatch {
                ids: ids.len(),
                rows: rows.len(),
            });
        }
        let ids: Vec<String> = ids.iter().map(|s| s.as_ref().to_string()).collect();
        for id in &ids {
            check_id(id)?;
        }
        let index = build_index(&ids);
        if index.len() != ids.len() {
            let mut seen = std::collections::HashSet::new();
            let dup = ids.iter().find(|id| !seen.insert(*id)).cloned();
            return Err(Error::DuplicateId(dup.unwrap_or_default()));
        }
        let data = flatten_rows(dim, rows)?;
        Ok(EmbeddingStore {
            dim,
            ids,
            index,
            payload: Payload::Owned(data),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn id(&self, row: usize) -> &str {
        &self.ids[row]
    }

    /// Row of the first occurrence of `id`.
    pub fn row_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// The whole payload, row-major.
    pub fn data(&self) -> &[f32] {
        match &self.payload {
            Payload::Mapped(map) => bytemuck::cast_slice(&map[HEADER_LEN..]),
            Payload::Owned(v) => v,
        }
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.data()[row * self.dim..(row + 1) * self.dim]
    }

    pub fn vector(&self, id: &str) -> Option<&[f32]> {
        self.row_of(id).map(|r| self.row(r))
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> {
        self.data().chunks_exact(self.dim)
    }

    pub fn write<P: AsRef<Path>>(&self, base: P) -> Result<()> {
        write_raw(base.as_ref(), self.dim, &self.ids, self.data())
    }
}

/// Returns the `(<base>.embs, <base>.ids)` pair for a store base path.
/// A path already ending in `.embs` or `.ids` is treated as its base.
pub fn store_paths(base: &Path) -> (PathBuf, PathBuf) {
    let base = match base.extension().and_then(|e| e.to_str()) {
        Some("embs") | Some("ids") => base.with_extension(""),
        _ => base.to_path_buf(),
    };
    let with = |ext: &str| {
        let mut s: OsString = base.clone().into_os_string();
        s.push(ext);
        PathBuf::from(s)
    };
    (with(".embs"), with(".ids"))
}

/// Writes `ids` and `rows` as a store at `base`.
pub fn write_store<P, S, R>(base: P, dim: usize, ids: &[S], rows: &[R]) -> Result<()>
where
    P: AsRef<Path>,
    S: AsRef<str>,
    R: AsRef<[f32]>,
{
    if dim == 0 {
        return Err(Error::ZeroDim);
    }
    if ids.len() != rows.len() {
        return Err(Error::IdRowMismatch {
            ids: ids.len(),
            rows: rows.len(),
        });
    }
    let mut seen = std::collections::HashSet::with_capacity(ids.len());
    for id in ids {
        let id = id.as_ref();
        check_id(id)?;
        if !seen.insert(id) {
            return Err(Error::DuplicateId(id.to_string()));
        }
    }
    let data = flatten_rows(dim, rows)?;
    write_raw(base.as_ref(), dim, ids, &data)
}

fn write_raw<S: AsRef<str>>(base: &Path, dim: usize, ids: &[S], data: &[f32]) -> Result<()> {
    let (embs, id_path) = store_paths(base);
    let dim32 = u32::try_from(dim).map_err(|_| Error::InvalidConfig(format!("dim {dim} exceeds u32")))?;

    let file = File::create(&embs).map_err(|e| Error::io(&embs, e))?;
    let mut w = BufWriter::new(file);
    let mut header = [0u8; HEADER_LEN];
    header[0..4].copy_from_slice(&MAGIC);
    header[4..8].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
    header[8..12].copy_from_slice(&dim32.to_le_bytes());
    header[12..20].copy_from_slice(&(ids.len() as u64).to_le_bytes());
    let io = |e| Error::io(&embs, e);
    w.write_all(&header).map_err(io)?;
    for v in data {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)?;

    let file = File::create(&id_path).map_err(|e| Error::io(&id_path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(&id_path, e);
    for id in ids {
        w.write_all(id.as_ref().as_bytes()).map_err(io)?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

fn read_ids(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .split_terminator('\n')
        .map(|l| l.strip_suffix('\r').unwrap_or(l).to_string())
        .collect())
}

/// Opens a store written by [`write_store`]. Rows are validated for shape
/// only; use [`validate_store`] for content checks.
pub fn open_store<P: AsRef<Path>>(base: P) -> Result<EmbeddingStore> {
    let (embs, id_path) = store_paths(base.as_ref());
    let file = File::open(&embs).map_err(|e| Error::io(&embs, e))?;
    // SAFETY: store files are immutable once written; the map is read-only.
    let map = unsafe { Mmap::map(&file) }.map_err(|e| Error::io(&embs, e))?;

    if map.len() < HEADER_LEN {
        return Err(Error::PayloadLength {
            path: embs,
            expected: HEADER_LEN as u64,
            found: map.len() as u64,
        });
    }
    if map[0..4] != MAGIC {
        return Err(Error::BadMagic(embs));
    }
    let version = u32::from_le_bytes(map[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            path: embs,
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let dim = u32::from_le_bytes(map[8..12].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(map[12..20].try_into().unwrap());
    if dim == 0 {
        return Err(Error::ZeroDim);
    }
    let expected = (count as u128) * (dim as u128) * 4 + HEADER_LEN as u128;
    if expected != map.len() as u128 {
        return Err(Error::PayloadLength {
            path: embs,
            expected: u64::try_from(expected).unwrap_or(u64::MAX),
            found: map.len() as u64,
        });
    }

    let ids = read_ids(&id_path)?;
    if ids.len() as u64 != count {
        return Err(Error::CountMismatch {
            path: id_path,
            header: count,
            manifest: ids.len(),
        });
    }

    let in_place = cfg!(target_endian = "little")
        && bytemuck::try_cast_slice::<u8, f32>(&map[HEADER_LEN..]).is_ok();
    let payload = if in_place {
        Payload::Mapped(map)
    } else {
        Payload::Owned(
            map[HEADER_LEN..]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect(),
        )
    };
    let index = build_index(&ids);
    Ok(EmbeddingStore {
        dim,
        ids,
        index,
        payload,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IssueCode {
    NonFinite,
    ZeroNorm,
    DuplicateId,
    EmptyId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Issue {
    pub row: usize,
    pub code: IssueCode,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub issues: Vec<Issue>,
}

/// Reports non-finite rows, zero-norm rows, and empty or repeated ids.
pub fn validate_store(store: &EmbeddingStore) -> ValidationReport {
    let mut issues = Vec::new();
    let mut first_seen: HashMap<&str, usize> = HashMap::with_capacity(store.len());
    for (row, id) in store.ids().iter().enumerate() {
        if id.is_empty() {
            issues.push(Issue {
                row,
                code: IssueCode::EmptyId,
                message: "empty id".into(),
            });
        } else if let Some(&first) = first_seen.get(id.as_str()) {
            issues.push(Issue {
                row,
                code: IssueCode::DuplicateId,
                message: format!("id {id:?} already used by row {first}"),
            });
        } else {
            first_seen.insert(id, row);
        }
    }
    for (row, v) in store.rows().enumerate() {
        if let Some(col) = v.iter().position(|x| !x.is_finite()) {
            issues.push(Issue {
                row,
                code: IssueCode::NonFinite,
                message: format!("non-finite value {} at column {col}", v[col]),
            });
        } else if dot(v, v) == 0.0 {
            issues.push(Issue {
                row,
                code: IssueCode::ZeroNorm,
                message: "vector has zero norm".into(),
            });
        }
    }
    issues.sort_by_key(|i| i.row);
    ValidationReport {
        ok: issues.is_empty(),
        issues,
    }
}

/// Dot product of two f32 slices accumulated in f64.
///
/// Lanes are reduced in a fixed order, so the result depends only on the
/// inputs.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ta, tb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] as f64 * y[l] as f64;
        }
    }
    let mut tail = 0f64;
    for (x, y) in ta.iter().zip(tb) {
        tail += *x as f64 * *y as f64;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

#[inline]
pub fn norm(a: &[f32]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine from a precomputed dot product and norms. Shared with the matcher
/// so both produce bit-identical scores.
#[inline]
pub fn cosine_from_parts(dot: f64, norm_a: f64, norm_b: f64) -> f64 {
    (dot / (norm_a * norm_b)).clamp(-1.0, 1.0)
}

/// Cosine similarity. Zero-norm operands are an error, not a zero score.
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm(None));
    }
    Ok(cosine_from_parts(dot(a, b), na, nb))
}
