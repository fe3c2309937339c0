//! Per-dimension percentile scalar quantization.
//!
//! Calibration sorts each reference column and places `2^b - 1` break-points
//! at its `100·k/2^b` percentiles, so the `2^b` buckets hold equal mass on the
//! reference set. A value's symbol is the number of break-points strictly
//! below it. Dequantization maps a symbol to the mean of the reference values
//! that fell in its bucket.
//!
//! Percentiles interpolate linearly between closest ranks: for `S` sorted
//! values and quantile `q`, position `p = (S - 1)·q` and the result
//! interpolates between `x[floor p]` and `x[ceil p]`.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::embio::{
    self, expect_eof, open, read_f32, read_magic, read_u32, read_u8, read_version, with_writer,
    PackedCodes, FORMAT_VERSION,
};
use crate::error::{Error, Result};
use crate::linalg::EmbeddingMatrix;

pub const EMBC_MAGIC: [u8; 4] = *b"EMBC";

/// Break-point table learned on a reference set.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizerCalibration {
    dims: usize,
    bits: u8,
    mins: Vec<f32>,
    maxs: Vec<f32>,
    /// `dims × (2^b - 1)`, each row non-decreasing.
    breakpoints: Vec<f32>,
    /// `dims × 2^b` bucket representatives.
    reps: Vec<f32>,
}

fn check_bits(bits: u8) -> Result<()> {
    if !(1..=8).contains(&bits) {
        return Err(Error::Validation(format!("bit width {bits} outside 1..=8")));
    }
    Ok(())
}

/// Linear-interpolation percentile at position `(S - 1)·k / 2^b` of sorted `xs`.
fn percentile_at(xs: &[f64], k: usize, levels: usize) -> f64 {
    // exact: integer numerator divided by a power of two
    let pos = ((xs.len() - 1) * k) as f64 / levels as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    xs[lo] + frac * (xs[hi] - xs[lo])
}

#[inline]
fn symbol_of(breakpoints: &[f32], v: f32) -> u8 {
    breakpoints.partition_point(|&t| t < v) as u8
}

struct Column {
    min: f32,
    max: f32,
    breakpoints: Vec<f32>,
    reps: Vec<f32>,
}

fn calibrate_column(values: Vec<f32>, bits: u8) -> Column {
    let levels = 1usize << bits;
    let mut sorted: Vec<f64> = values.iter().map(|&v| v as f64).collect();
    sorted.sort_by(f64::total_cmp);
    let min = sorted[0] as f32;
    let max = sorted[sorted.len() - 1] as f32;
    let breakpoints: Vec<f32> = (1..levels)
        .map(|k| percentile_at(&sorted, k, levels) as f32)
        .collect();

    let mut sums = vec![0.0f64; levels];
    let mut counts = vec![0usize; levels];
    for &v in &values {
        let s = symbol_of(&breakpoints, v) as usize;
        sums[s] += v as f64;
        counts[s] += 1;
    }
    let reps = (0..levels)
        .map(|k| {
            if counts[k] > 0 {
                return (sums[k] / counts[k] as f64) as f32;
            }
            let lo = if k == 0 { min } else { breakpoints[k - 1] };
            let hi = if k == levels - 1 { max } else { breakpoints[k] };
            let mid = ((lo as f64 + hi as f64) / 2.0) as f32;
            if symbol_of(&breakpoints, mid) as usize == k {
                mid
            } else if symbol_of(&breakpoints, lo.next_up()) as usize == k {
                // degenerate interval: smallest value that still maps to k
                lo.next_up()
            } else {
                // unreachable symbol (collapsed break-points)
                mid
            }
        })
        .collect();
    Column {
        min,
        max,
        breakpoints,
        reps,
    }
}

impl QuantizerCalibration {
    /// Learns break-points and bucket representatives from `reference`.
    pub fn calibrate(reference: &EmbeddingMatrix, bits: u8) -> Result<Self> {
        check_bits(bits)?;
        let levels = 1usize << bits;
        if reference.rows() < levels {
            return Err(Error::InsufficientData(format!(
                "{} reference rows for {levels} buckets",
                reference.rows()
            )));
        }
        let dims = reference.dims();
        let columns: Vec<Column> = (0..dims)
            .into_par_iter()
            .map(|j| {
                let col = reference.iter_rows().map(|r| r[j]).collect();
                calibrate_column(col, bits)
            })
            .collect();
        let mut cal = Self {
            dims,
            bits,
            mins: Vec::with_capacity(dims),
            maxs: Vec::with_capacity(dims),
            breakpoints: Vec::with_capacity(dims * (levels - 1)),
            reps: Vec::with_capacity(dims * levels),
        };
        for c in columns {
            cal.mins.push(c.min);
            cal.maxs.push(c.max);
            cal.breakpoints.extend(c.breakpoints);
            cal.reps.extend(c.reps);
        }
        Ok(cal)
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn levels(&self) -> usize {
        1 << self.bits
    }

    pub fn min(&self, j: usize) -> f32 {
        self.mins[j]
    }

    pub fn max(&self, j: usize) -> f32 {
        self.maxs[j]
    }

    /// The `2^b - 1` interior break-points of dimension `j`.
    pub fn breakpoints(&self, j: usize) -> &[f32] {
        let n = self.levels() - 1;
        &self.breakpoints[j * n..(j + 1) * n]
    }

    /// The `2^b` bucket representatives of dimension `j`.
    pub fn representatives(&self, j: usize) -> &[f32] {
        let n = self.levels();
        &self.reps[j * n..(j + 1) * n]
    }

    #[inline]
    pub fn quantize_value(&self, j: usize, v: f32) -> u8 {
        symbol_of(self.breakpoints(j), v)
    }

    pub fn quantize(&self, h: &EmbeddingMatrix) -> Result<QuantizedCodes> {
        if h.dims() != self.dims {
            return Err(Error::Dimension(format!(
                "calibration has {} dims, input has {}",
                self.dims,
                h.dims()
            )));
        }
        let mut symbols = vec![0u8; h.rows() * self.dims];
        symbols
            .par_chunks_mut(self.dims.max(1))
            .zip(h.as_slice().par_chunks(self.dims.max(1)))
            .for_each(|(out, row)| {
                for (j, (o, &v)) in out.iter_mut().zip(row).enumerate() {
                    *o = self.quantize_value(j, v);
                }
            });
        Ok(QuantizedCodes {
            rows: h.rows(),
            dims: self.dims,
            bits: self.bits,
            symbols,
        })
    }

    /// Maps every symbol to its bucket representative.
    pub fn dequantize(&self, codes: &QuantizedCodes) -> Result<EmbeddingMatrix> {
        if codes.dims != self.dims || codes.bits != self.bits {
            return Err(Error::Dimension(format!(
                "codes are {} dims at {} bits, calibration {} dims at {} bits",
                codes.dims, codes.bits, self.dims, self.bits
            )));
        }
        let levels = self.levels();
        let mut data = Vec::with_capacity(codes.symbols.len());
        for (i, row) in codes
            .symbols
            .chunks(self.dims.max(1))
            .enumerate()
            .take(codes.rows)
        {
            for (j, &s) in row.iter().enumerate() {
                if s as usize >= levels {
                    return Err(Error::Corrupt(format!(
                        "symbol {s} at row {i}, dim {j} exceeds {} bits",
                        self.bits
                    )));
                }
                data.push(self.representatives(j)[s as usize]);
            }
        }
        EmbeddingMatrix::new(codes.rows, self.dims, data)
    }

    pub fn encode(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(&EMBC_MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(self.dims as u32).to_le_bytes())?;
        w.write_all(&[self.bits])?;
        for j in 0..self.dims {
            w.write_all(&self.mins[j].to_le_bytes())?;
            w.write_all(&self.maxs[j].to_le_bytes())?;
            for v in self.breakpoints(j).iter().chain(self.representatives(j)) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn decode(r: &mut impl Read) -> Result<Self> {
        read_magic(r, EMBC_MAGIC)?;
        read_version(r)?;
        let dims = read_u32(r, "dims")? as usize;
        let bits = read_u8(r, "bits")?;
        check_bits(bits).map_err(|e| Error::Corrupt(e.to_string()))?;
        let levels = 1usize << bits;
        let mut cal = Self {
            dims,
            bits,
            mins: Vec::new(),
            maxs: Vec::new(),
            breakpoints: Vec::new(),
            reps: Vec::new(),
        };
        for j in 0..dims {
            let min = read_f32(r, "min")?;
            let max = read_f32(r, "max")?;
            let bps = (0..levels - 1)
                .map(|_| read_f32(r, "break-point"))
                .collect::<Result<Vec<_>>>()?;
            let reps = (0..levels)
                .map(|_| read_f32(r, "representative"))
                .collect::<Result<Vec<_>>>()?;
            let finite = [min, max]
                .iter()
                .chain(&bps)
                .chain(&reps)
                .all(|v| v.is_finite());
            let ordered =
                bps.windows(2).all(|w| w[0] <= w[1]) && min <= bps[0] && bps[levels - 2] <= max;
            if !finite || !ordered {
                return Err(Error::Corrupt(format!(
                    "dimension {j}: invalid break-point table"
                )));
            }
            cal.mins.push(min);
            cal.maxs.push(max);
            cal.breakpoints.extend(bps);
            cal.reps.extend(reps);
        }
        expect_eof(r)?;
        Ok(cal)
    }
}

pub fn write_calibration(cal: &QuantizerCalibration, path: impl AsRef<Path>) -> Result<()> {
    with_writer(path.as_ref(), |w| cal.encode(w))
}

pub fn read_calibration(path: impl AsRef<Path>) -> Result<QuantizerCalibration> {
    let path = path.as_ref();
    QuantizerCalibration::decode(&mut open(path)?).map_err(|e| match e {
        Error::Io { .. } => e,
        other => other.in_stage(path.display().to_string()),
    })
}

/// N×d matrix of b-bit symbols.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedCodes {
    rows: usize,
    dims: usize,
    bits: u8,
    symbols: Vec<u8>,
}

impl QuantizedCodes {
    pub fn new(rows: usize, dims: usize, bits: u8, symbols: Vec<u8>) -> Result<Self> {
        check_bits(bits)?;
        if symbols.len() != rows * dims {
            return Err(Error::Dimension(format!(
                "{} symbols for {rows}x{dims} codes",
                symbols.len()
            )));
        }
        if let Some(s) = symbols.iter().find(|&&s| s as u16 >= 1u16 << bits) {
            return Err(Error::Validation(format!("symbol {s} exceeds {bits} bits")));
        }
        Ok(Self {
            rows,
            dims,
            bits,
            symbols,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn symbols(&self) -> &[u8] {
        &self.symbols
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.symbols[i * self.dims..(i + 1) * self.dims]
    }

    pub fn to_packed(&self) -> PackedCodes {
        PackedCodes {
            rows: self.rows,
            dims: self.dims,
            bits: self.bits,
            payload: embio::pack_symbols(&self.symbols, self.rows, self.dims, self.bits)
                .expect("symbols validated on construction"),
        }
    }

    pub fn from_packed(p: &PackedCodes) -> Result<Self> {
        let symbols = embio::unpack_symbols(&p.payload, p.rows, p.dims, p.bits)?;
        Self::new(p.rows, p.dims, p.bits, symbols)
    }

    /// Storage ratio against 32-bit floats.
    pub fn compression_factor(&self) -> f64 {
        32.0 / self.bits as f64
    }
}

pub fn write_quantized(codes: &QuantizedCodes, path: impl AsRef<Path>) -> Result<()> {
    embio::write_codes(&codes.to_packed(), path)
}

pub fn read_quantized(path: impl AsRef<Path>) -> Result<QuantizedCodes> {
    QuantizedCodes::from_packed(&embio::read_codes(path)?)
}
