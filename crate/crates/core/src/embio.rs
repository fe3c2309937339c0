//! On-disk formats: EMBF float matrices, EMBQ packed codes, TREC qrels and
//! run files, and newline-delimited id lists.
//!
//! Binary headers are little-endian:
//!
//! ```text
//! EMBF: magic "EMBF" | version u32 | rows u64 | dims u32 | dtype u8 | rows*dims f32
//! EMBQ: magic "EMBQ" | version u32 | rows u64 | dims u32 | bits u8  | rows*ceil(dims*bits/8) bytes
//! ```
//!
//! EMBQ payloads are row-major symbols packed most-significant-bit first,
//! each row padded to a byte boundary with zero bits.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::EmbeddingMatrix;

pub const EMBF_MAGIC: [u8; 4] = *b"EMBF";
pub const EMBQ_MAGIC: [u8; 4] = *b"EMBQ";
pub const FORMAT_VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;

// ---------------------------------------------------------------------------
// little-endian helpers shared by every binary format in the crate

pub(crate) fn read_magic(r: &mut impl Read, expected: [u8; 4]) -> Result<()> {
    let mut found = [0u8; 4];
    r.read_exact(&mut found)
        .map_err(|_| Error::Corrupt("file shorter than its magic".into()))?;
    if found != expected {
        return Err(Error::BadMagic { expected, found });
    }
    Ok(())
}

fn read_array<const N: usize>(r: &mut impl Read, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Corrupt(format!("truncated while reading {what}")))?;
    Ok(buf)
}

pub(crate) fn read_u8(r: &mut impl Read, what: &str) -> Result<u8> {
    Ok(read_array::<1>(r, what)?[0])
}

pub(crate) fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r, what)?))
}

pub(crate) fn read_u64(r: &mut impl Read, what: &str) -> Result<u64> {
    Ok(u64::from_le_bytes(read_array(r, what)?))
}

pub(crate) fn read_f32(r: &mut impl Read, what: &str) -> Result<f32> {
    Ok(f32::from_le_bytes(read_array(r, what)?))
}

pub(crate) fn read_f64(r: &mut impl Read, what: &str) -> Result<f64> {
    Ok(f64::from_le_bytes(read_array(r, what)?))
}

pub(crate) fn read_version(r: &mut impl Read) -> Result<u32> {
    let v = read_u32(r, "version")?;
    if v != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(v));
    }
    Ok(v)
}

/// Reads everything left and checks it is exactly `expected` bytes long.
pub(crate) fn read_payload(r: &mut impl Read, expected: usize) -> Result<Vec<u8>> {
    let mut payload = Vec::with_capacity(expected);
    r.read_to_end(&mut payload)
        .map_err(|e| Error::Corrupt(format!("reading payload: {e}")))?;
    if payload.len() != expected {
        return Err(Error::Corrupt(format!(
            "payload has {} bytes, expected {expected}",
            payload.len()
        )));
    }
    Ok(payload)
}

/// Reads to EOF and fails if any bytes remain.
pub(crate) fn expect_eof(r: &mut impl Read) -> Result<()> {
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)
        .map_err(|e| Error::Corrupt(e.to_string()))?;
    if !rest.is_empty() {
        return Err(Error::Corrupt(format!("{} trailing bytes", rest.len())));
    }
    Ok(())
}

pub(crate) fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

/// Runs `body` against a buffered writer on `path` and flushes it.
pub(crate) fn with_writer(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Attaches the path to format errors coming out of a reader.
fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io { .. } => e,
        other => other.in_stage(path.display().to_string()),
    })
}

// ---------------------------------------------------------------------------
// EMBF

pub fn decode_embeddings(r: &mut impl Read) -> Result<EmbeddingMatrix> {
    read_magic(r, EMBF_MAGIC)?;
    read_version(r)?;
    let rows = read_u64(r, "rows")?;
    let dims = read_u32(r, "dims")? as usize;
    let dtype = read_u8(r, "dtype")?;
    if dtype != DTYPE_F32 {
        return Err(Error::UnsupportedDtype(dtype));
    }
    if dims == 0 {
        return Err(Error::Corrupt("header declares zero dims".into()));
    }
    let rows =
        usize::try_from(rows).map_err(|_| Error::Corrupt(format!("row count {rows} too large")))?;
    let expected = rows
        .checked_mul(dims)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Corrupt(format!("{rows}x{dims} payload overflows")))?;
    let payload = read_payload(r, expected)?;
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    EmbeddingMatrix::new(rows, dims, data)
}

pub fn encode_embeddings(m: &EmbeddingMatrix, w: &mut impl Write) -> Result<()> {
    if m.rows() > 0 && m.dims() == 0 {
        return Err(Error::Dimension("cannot store rows with zero dims".into()));
    }
    if let Some(pos) = m.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("element {pos}")));
    }
    let io = |e: std::io::Error| Error::Corrupt(e.to_string());
    w.write_all(&EMBF_MAGIC).map_err(io)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(m.rows() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&(m.dims().max(1) as u32).to_le_bytes())
        .map_err(io)?;
    w.write_all(&[DTYPE_F32]).map_err(io)?;
    for v in m.as_slice() {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    Ok(())
}

/// Loads an EMBF file; values are returned exactly as stored.
pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    with_path(path, decode_embeddings(&mut open(path)?))
}

/// Writes an EMBF file. A matrix with no rows and no columns is stored with dims 1.
pub fn write_embeddings(m: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(21 + m.as_slice().len() * 4);
    encode_embeddings(m, &mut buf)?;
    with_writer(path, |w| w.write_all(&buf))
}

// ---------------------------------------------------------------------------
// EMBQ and bit packing

/// Bytes per packed row for `dims` symbols of `bits` bits.
#[inline]
pub fn packed_row_bytes(dims: usize, bits: u8) -> usize {
    (dims * bits as usize).div_ceil(8)
}

/// Packs row-major symbols MSB-first, padding each row to a byte boundary.
pub fn pack_symbols(symbols: &[u8], rows: usize, dims: usize, bits: u8) -> Result<Vec<u8>> {
    check_bits(bits)?;
    if symbols.len() != rows * dims {
        return Err(Error::Dimension(format!(
            "{} symbols for a {rows}x{dims} code matrix",
            symbols.len()
        )));
    }
    let limit = 1u16 << bits;
    let row_bytes = packed_row_bytes(dims, bits);
    let mut out = vec![0u8; rows * row_bytes];
    for (row, packed) in symbols
        .chunks(dims.max(1))
        .zip(out.chunks_mut(row_bytes.max(1)))
    {
        let mut cursor = 0usize;
        for &s in row {
            if s as u16 >= limit {
                return Err(Error::Validation(format!(
                    "symbol {s} does not fit in {bits} bits"
                )));
            }
            for bit in (0..bits).rev() {
                if (s >> bit) & 1 == 1 {
                    packed[cursor / 8] |= 0x80 >> (cursor % 8);
                }
                cursor += 1;
            }
        }
    }
    Ok(out)
}

/// Inverse of [`pack_symbols`]; nonzero padding bits are reported as corruption.
pub fn unpack_symbols(packed: &[u8], rows: usize, dims: usize, bits: u8) -> Result<Vec<u8>> {
    check_bits(bits)?;
    let row_bytes = packed_row_bytes(dims, bits);
    if packed.len() != rows * row_bytes {
        return Err(Error::Corrupt(format!(
            "packed payload has {} bytes, expected {}",
            packed.len(),
            rows * row_bytes
        )));
    }
    let used_bits = dims * bits as usize;
    let mut out = Vec::with_capacity(rows * dims);
    for (r, row) in packed.chunks(row_bytes.max(1)).take(rows).enumerate() {
        let mut cursor = 0usize;
        for _ in 0..dims {
            let mut s = 0u8;
            for _ in 0..bits {
                let bit = (row[cursor / 8] >> (7 - cursor % 8)) & 1;
                s = (s << 1) | bit;
                cursor += 1;
            }
            out.push(s);
        }
        for pad in used_bits..row_bytes * 8 {
            if (row[pad / 8] >> (7 - pad % 8)) & 1 != 0 {
                return Err(Error::Corrupt(format!("row {r} has nonzero padding bits")));
            }
        }
    }
    Ok(out)
}

fn check_bits(bits: u8) -> Result<()> {
    if !(1..=8).contains(&bits) {
        return Err(Error::Validation(format!("bit width {bits} outside 1..=8")));
    }
    Ok(())
}

/// Contents of an EMBQ file: packed symbols plus shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedCodes {
    pub rows: usize,
    pub dims: usize,
    pub bits: u8,
    pub payload: Vec<u8>,
}

impl PackedCodes {
    pub fn row_bytes(&self) -> usize {
        packed_row_bytes(self.dims, self.bits)
    }

    pub fn row(&self, i: usize) -> &[u8] {
        let n = self.row_bytes();
        &self.payload[i * n..(i + 1) * n]
    }
}

pub fn decode_codes(r: &mut impl Read) -> Result<PackedCodes> {
    read_magic(r, EMBQ_MAGIC)?;
    read_version(r)?;
    let rows = read_u64(r, "rows")?;
    let dims = read_u32(r, "dims")? as usize;
    let bits = read_u8(r, "bits")?;
    check_bits(bits).map_err(|e| Error::Corrupt(e.to_string()))?;
    if dims == 0 {
        return Err(Error::Corrupt("header declares zero dims".into()));
    }
    let rows =
        usize::try_from(rows).map_err(|_| Error::Corrupt(format!("row count {rows} too large")))?;
    let expected = rows
        .checked_mul(packed_row_bytes(dims, bits))
        .ok_or_else(|| Error::Corrupt("payload size overflows".into()))?;
    let payload = read_payload(r, expected)?;
    // validates padding
    unpack_symbols(&payload, rows, dims, bits)?;
    Ok(PackedCodes {
        rows,
        dims,
        bits,
        payload,
    })
}

pub fn encode_codes(codes: &PackedCodes, w: &mut impl Write) -> std::io::Result<()> {
    w.write_all(&EMBQ_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(codes.rows as u64).to_le_bytes())?;
    w.write_all(&(codes.dims as u32).to_le_bytes())?;
    w.write_all(&[codes.bits])?;
    w.write_all(&codes.payload)
}

pub fn read_codes(path: impl AsRef<Path>) -> Result<PackedCodes> {
    let path = path.as_ref();
    with_path(path, decode_codes(&mut open(path)?))
}

pub fn write_codes(codes: &PackedCodes, path: impl AsRef<Path>) -> Result<()> {
    if codes.payload.len() != codes.rows * codes.row_bytes() {
        return Err(Error::Dimension(format!(
            "payload has {} bytes for {} rows of {} bytes",
            codes.payload.len(),
            codes.rows,
            codes.row_bytes()
        )));
    }
    with_writer(path.as_ref(), |w| encode_codes(codes, w))
}

// ---------------------------------------------------------------------------
// qrels

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QrelEntry {
    pub query_id: String,
    pub doc_id: String,
    pub relevance: u32,
}

/// Relevance judgments; `(query_id, doc_id)` pairs are unique.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Qrels {
    entries: Vec<QrelEntry>,
}

impl Qrels {
    pub fn new(entries: Vec<QrelEntry>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !seen.insert((e.query_id.as_str(), e.doc_id.as_str())) {
                return Err(Error::Validation(format!(
                    "duplicate judgment for ({}, {})",
                    e.query_id, e.doc_id
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[QrelEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Judgments keyed by query, then document.
    pub fn by_query(&self) -> BTreeMap<&str, BTreeMap<&str, u32>> {
        let mut map: BTreeMap<&str, BTreeMap<&str, u32>> = BTreeMap::new();
        for e in &self.entries {
            map.entry(&e.query_id)
                .or_default()
                .insert(&e.doc_id, e.relevance);
        }
        map
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if fields.len() != 4 {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected 4 fields `qid 0 docid rel`, got {}", fields.len()),
                });
            }
            let relevance: i64 = fields[3].parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("relevance `{}` is not an integer", fields[3]),
            })?;
            let relevance = u32::try_from(relevance).map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("relevance {relevance} is negative or too large"),
            })?;
            if !seen.insert((fields[0].to_string(), fields[2].to_string())) {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("duplicate judgment for ({}, {})", fields[0], fields[2]),
                });
            }
            entries.push(QrelEntry {
                query_id: fields[0].to_string(),
                doc_id: fields[2].to_string(),
                relevance,
            });
        }
        Ok(Self { entries })
    }

    pub fn to_trec_string(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!("{} 0 {} {}\n", e.query_id, e.doc_id, e.relevance));
        }
        out
    }
}

pub fn read_qrels(path: impl AsRef<Path>) -> Result<Qrels> {
    let path = path.as_ref();
    with_path(path, Qrels::parse(&read_text(path)?))
}

pub fn write_qrels(qrels: &Qrels, path: impl AsRef<Path>) -> Result<()> {
    let text = qrels.to_trec_string();
    with_writer(path.as_ref(), |w| w.write_all(text.as_bytes()))
}

// ---------------------------------------------------------------------------
// run files

#[derive(Debug, Clone, PartialEq)]
pub struct RunEntry {
    pub query_id: String,
    pub doc_id: String,
    pub rank: usize,
    pub score: f64,
    pub tag: String,
}

/// Ranked retrieval output. Within a query, ranks are `1..=k` and scores
/// do not increase with rank.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunFile {
    entries: Vec<RunEntry>,
}

impl RunFile {
    pub fn new(entries: Vec<RunEntry>) -> Result<Self> {
        let mut by_query: BTreeMap<&str, Vec<&RunEntry>> = BTreeMap::new();
        for e in &entries {
            if !e.score.is_finite() {
                return Err(Error::Validation(format!(
                    "query {}: non-finite score for {}",
                    e.query_id, e.doc_id
                )));
            }
            by_query.entry(&e.query_id).or_default().push(e);
        }
        for (qid, mut list) in by_query {
            list.sort_by_key(|e| e.rank);
            for (expected, e) in (1..).zip(&list) {
                if e.rank != expected {
                    return Err(Error::Validation(format!(
                        "query {qid}: expected rank {expected}, found {}",
                        e.rank
                    )));
                }
            }
            for pair in list.windows(2) {
                if pair[1].score > pair[0].score {
                    return Err(Error::Validation(format!(
                        "query {qid}: score at rank {} ({}) exceeds score at rank {} ({})",
                        pair[1].rank, pair[1].score, pair[0].rank, pair[0].score
                    )));
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[RunEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries grouped by query, each group sorted by rank.
    pub fn by_query(&self) -> BTreeMap<&str, Vec<&RunEntry>> {
        let mut map: BTreeMap<&str, Vec<&RunEntry>> = BTreeMap::new();
        for e in &self.entries {
            map.entry(&e.query_id).or_default().push(e);
        }
        for list in map.values_mut() {
            list.sort_by_key(|e| e.rank);
        }
        map
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            if fields.len() != 6 {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!(
                        "expected 6 fields `qid Q0 docid rank score tag`, got {}",
                        fields.len()
                    ),
                });
            }
            let rank = fields[3].parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("rank `{}` is not a positive integer", fields[3]),
            })?;
            let score = fields[4].parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("score `{}` is not a number", fields[4]),
            })?;
            entries.push(RunEntry {
                query_id: fields[0].to_string(),
                doc_id: fields[2].to_string(),
                rank,
                score,
                tag: fields[5].to_string(),
            });
        }
        Self::new(entries)
    }

    /// TREC run text; scores carry six decimal places.
    pub fn to_trec_string(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!(
                "{} Q0 {} {} {:.6} {}\n",
                e.query_id, e.doc_id, e.rank, e.score, e.tag
            ));
        }
        out
    }
}

pub fn read_run(path: impl AsRef<Path>) -> Result<RunFile> {
    let path = path.as_ref();
    with_path(path, RunFile::parse(&read_text(path)?))
}

pub fn write_run(run: &RunFile, path: impl AsRef<Path>) -> Result<()> {
    let text = run.to_trec_string();
    with_writer(path.as_ref(), |w| w.write_all(text.as_bytes()))
}

// ---------------------------------------------------------------------------
// id lists

/// Reads one id per non-empty line; row i of the matching matrix is line i.
pub fn read_ids(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let reader = open(path)?;
    let mut ids = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let id = line.trim();
        if !id.is_empty() {
            ids.push(id.to_string());
        }
    }
    Ok(ids)
}

pub fn write_ids(ids: &[String], path: impl AsRef<Path>) -> Result<()> {
    with_writer(path.as_ref(), |w| {
        for id in ids {
            writeln!(w, "{id}")?;
        }
        Ok(())
    })
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}
