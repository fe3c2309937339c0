//! Random-hyperplane LSH: Gaussian projection followed by sign bits.
//!
//! Similarity between two codes is estimated as `cos(π · hamming / d_proj)`,
//! the SimHash estimator of the angle between the original vectors.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::embio::{
    self, expect_eof, open, read_magic, read_u32, read_u64, with_writer, PackedCodes,
};
use crate::error::{Error, Result};
use crate::linalg::{dot, EmbeddingMatrix};

pub const EMBL_MAGIC: [u8; 4] = *b"EMBL";

/// Storage ratio of `d_in` floats of `float_bits` bits against `d_proj` bits.
pub fn compression_factor(d_in: usize, float_bits: u32, d_proj: usize) -> f64 {
    (d_in as f64 * float_bits as f64) / d_proj as f64
}

/// `d_proj × d_in` Gaussian projection scaled by `1/√d_proj`, regenerated from its seed.
#[derive(Clone)]
pub struct LshProjector {
    d_in: usize,
    d_proj: usize,
    seed: u64,
    projection: Vec<f32>,
}

impl std::fmt::Debug for LshProjector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LshProjector")
            .field("d_in", &self.d_in)
            .field("d_proj", &self.d_proj)
            .field("seed", &self.seed)
            .finish_non_exhaustive()
    }
}

impl PartialEq for LshProjector {
    fn eq(&self, other: &Self) -> bool {
        (self.d_in, self.d_proj, self.seed) == (other.d_in, other.d_proj, other.seed)
    }
}

impl LshProjector {
    pub fn new(d_in: usize, d_proj: usize, seed: u64) -> Result<Self> {
        if d_in == 0 || d_proj == 0 {
            return Err(Error::Dimension("projector needs d_in, d_proj >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (d_proj as f64).sqrt();
        let projection = (0..d_proj * d_in)
            .map(|_| (rng.sample::<f64, _>(StandardNormal) * scale) as f32)
            .collect();
        Ok(Self {
            d_in,
            d_proj,
            seed,
            projection,
        })
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_proj(&self) -> usize {
        self.d_proj
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn projection_row(&self, k: usize) -> &[f32] {
        &self.projection[k * self.d_in..(k + 1) * self.d_in]
    }

    /// Projected coordinates of one input row.
    pub fn project_row(&self, row: &[f32]) -> Vec<f64> {
        self.projection
            .chunks_exact(self.d_in)
            .map(|p| dot(p, row))
            .collect()
    }

    /// Bit `(i, k)` is set iff the k-th projection of row `i` is strictly positive.
    pub fn project_and_binarize(&self, m: &EmbeddingMatrix) -> Result<BitCodes> {
        if m.dims() != self.d_in {
            return Err(Error::Dimension(format!(
                "projector expects {} dims, input has {}",
                self.d_in,
                m.dims()
            )));
        }
        let row_bytes = self.d_proj.div_ceil(8);
        let mut packed = vec![0u8; m.rows() * row_bytes];
        packed
            .par_chunks_mut(row_bytes)
            .zip(m.as_slice().par_chunks(self.d_in))
            .for_each(|(out, row)| {
                for (k, p) in self.projection.chunks_exact(self.d_in).enumerate() {
                    if dot(p, row) > 0.0 {
                        out[k / 8] |= 0x80 >> (k % 8);
                    }
                }
            });
        Ok(BitCodes {
            rows: m.rows(),
            bits_per_row: self.d_proj,
            packed,
        })
    }

    /// Bits of the input a float row costs relative to its code.
    pub fn compression_factor(&self) -> f64 {
        compression_factor(self.d_in, 32, self.d_proj)
    }

    pub fn encode(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(&EMBL_MAGIC)?;
        w.write_all(&(self.d_in as u32).to_le_bytes())?;
        w.write_all(&(self.d_proj as u32).to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())
    }

    pub fn decode(r: &mut impl Read) -> Result<Self> {
        read_magic(r, EMBL_MAGIC)?;
        let d_in = read_u32(r, "d_in")? as usize;
        let d_proj = read_u32(r, "d_proj")? as usize;
        let seed = read_u64(r, "seed")?;
        expect_eof(r)?;
        Self::new(d_in, d_proj, seed).map_err(|e| Error::Corrupt(e.to_string()))
    }
}

pub fn write_projector(p: &LshProjector, path: impl AsRef<Path>) -> Result<()> {
    with_writer(path.as_ref(), |w| p.encode(w))
}

pub fn read_projector(path: impl AsRef<Path>) -> Result<LshProjector> {
    let path = path.as_ref();
    LshProjector::decode(&mut open(path)?).map_err(|e| match e {
        Error::Io { .. } => e,
        other => other.in_stage(path.display().to_string()),
    })
}

/// Packed sign bits, one row per input vector, MSB first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitCodes {
    rows: usize,
    bits_per_row: usize,
    packed: Vec<u8>,
}

impl BitCodes {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn bits_per_row(&self) -> usize {
        self.bits_per_row
    }

    pub fn row_bytes(&self) -> usize {
        self.bits_per_row.div_ceil(8)
    }

    pub fn row(&self, i: usize) -> &[u8] {
        let n = self.row_bytes();
        &self.packed[i * n..(i + 1) * n]
    }

    pub fn bit(&self, i: usize, k: usize) -> bool {
        (self.row(i)[k / 8] >> (7 - k % 8)) & 1 == 1
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.packed
    }

    pub fn to_packed(&self) -> PackedCodes {
        PackedCodes {
            rows: self.rows,
            dims: self.bits_per_row,
            bits: 1,
            payload: self.packed.clone(),
        }
    }

    pub fn from_packed(p: &PackedCodes) -> Result<Self> {
        if p.bits != 1 {
            return Err(Error::Validation(format!(
                "LSH codes need 1 bit per symbol, file has {}",
                p.bits
            )));
        }
        if p.payload.len() != p.rows * p.row_bytes() {
            return Err(Error::Corrupt(
                "payload length does not match header".into(),
            ));
        }
        Ok(Self {
            rows: p.rows,
            bits_per_row: p.dims,
            packed: p.payload.clone(),
        })
    }

    /// Similarity estimate between row `i` of `self` and row `j` of `other`.
    pub fn similarity(&self, i: usize, other: &BitCodes, j: usize) -> Result<f64> {
        if self.bits_per_row != other.bits_per_row {
            return Err(Error::Dimension(format!(
                "codes of {} and {} bits",
                self.bits_per_row, other.bits_per_row
            )));
        }
        hamming_similarity(self.row(i), other.row(j), self.bits_per_row)
    }
}

pub fn write_bit_codes(codes: &BitCodes, path: impl AsRef<Path>) -> Result<()> {
    embio::write_codes(&codes.to_packed(), path)
}

pub fn read_bit_codes(path: impl AsRef<Path>) -> Result<BitCodes> {
    BitCodes::from_packed(&embio::read_codes(path)?)
}

pub fn hamming_distance(a: &[u8], b: &[u8]) -> u32 {
    let mut dist = 0u32;
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        let x = u64::from_le_bytes(x.try_into().unwrap());
        let y = u64::from_le_bytes(y.try_into().unwrap());
        dist += (x ^ y).count_ones();
    }
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        dist += (x ^ y).count_ones();
    }
    dist
}

/// `cos(π · hamming(a, b) / bits)`; `a` and `b` are packed rows of `bits` bits.
pub fn hamming_similarity(a: &[u8], b: &[u8], bits: usize) -> Result<f64> {
    if a.len() != b.len() || a.len() != bits.div_ceil(8) || bits == 0 {
        return Err(Error::Dimension(format!(
            "code rows of {} and {} bytes for {bits} bits",
            a.len(),
            b.len()
        )));
    }
    let h = hamming_distance(a, b) as f64;
    Ok((std::f64::consts::PI * h / bits as f64).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    #[test]
    fn compression_factors() {
        assert_eq!(compression_factor(1536, 32, 1024), 48.0);
        assert_eq!(compression_factor(1536, 32, 8192), 6.0);
        assert_eq!(compression_factor(100, 32, 3200), 1.0);
    }

    #[test]
    fn zero_row_gives_all_zero_bits() {
        let p = LshProjector::new(5, 20, 1).unwrap();
        let codes = p
            .project_and_binarize(&EmbeddingMatrix::zeros(1, 5))
            .unwrap();
        assert!(codes.row(0).iter().all(|&b| b == 0));
        assert_eq!(codes.row_bytes(), 3);
    }

    #[test]
    fn deterministic_in_seed() {
        let m = synth::gaussian(10, 8, 3);
        let a = LshProjector::new(8, 64, 42)
            .unwrap()
            .project_and_binarize(&m)
            .unwrap();
        let b = LshProjector::new(8, 64, 42)
            .unwrap()
            .project_and_binarize(&m)
            .unwrap();
        let c = LshProjector::new(8, 64, 43)
            .unwrap()
            .project_and_binarize(&m)
            .unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn negation_flips_nonzero_projections() {
        let m = synth::gaussian(20, 12, 5);
        let neg = EmbeddingMatrix::new(20, 12, m.as_slice().iter().map(|v| -v).collect()).unwrap();
        let p = LshProjector::new(12, 100, 9).unwrap();
        let (a, b) = (
            p.project_and_binarize(&m).unwrap(),
            p.project_and_binarize(&neg).unwrap(),
        );
        for i in 0..20 {
            let proj = p.project_row(m.row(i));
            for (k, v) in proj.iter().enumerate() {
                if *v != 0.0 {
                    assert_ne!(a.bit(i, k), b.bit(i, k));
                }
            }
            assert_eq!(a.similarity(i, &b, i).unwrap(), -1.0);
        }
    }

    #[test]
    fn hamming_similarity_extremes() {
        let a = [0b1010_1010u8, 0xff];
        assert_eq!(hamming_similarity(&a, &a, 16).unwrap(), 1.0);
        let comp = [!a[0], !a[1]];
        assert_eq!(hamming_similarity(&a, &comp, 16).unwrap(), -1.0);
        assert!(hamming_similarity(&a, &[0u8], 16).is_err());
        assert_eq!(hamming_distance(&[0xffu8; 11], &[0u8; 11]), 88);
    }

    #[test]
    fn descriptor_round_trip_regenerates_matrix() {
        let p = LshProjector::new(7, 33, 1234).unwrap();
        let mut bytes = Vec::new();
        p.encode(&mut bytes).unwrap();
        assert_eq!(bytes.len(), 4 + 4 + 4 + 8);
        let q = LshProjector::decode(&mut bytes.as_slice()).unwrap();
        assert_eq!(q.projection, p.projection);
    }

    #[test]
    fn bit_codes_via_embq() {
        let p = LshProjector::new(4, 13, 2).unwrap();
        let codes = p.project_and_binarize(&synth::gaussian(6, 4, 1)).unwrap();
        let packed = codes.to_packed();
        assert_eq!(packed.payload.len(), 6 * 2);
        assert_eq!(BitCodes::from_packed(&packed).unwrap(), codes);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.embq");
        write_bit_codes(&codes, &path).unwrap();
        assert_eq!(read_bit_codes(&path).unwrap(), codes);
    }

    #[test]
    fn estimator_is_symmetric() {
        let p = LshProjector::new(6, 256, 3).unwrap();
        let c = p.project_and_binarize(&synth::gaussian(5, 6, 8)).unwrap();
        for i in 0..5 {
            assert_eq!(c.similarity(i, &c, i).unwrap(), 1.0);
            for j in 0..5 {
                assert_eq!(
                    c.similarity(i, &c, j).unwrap(),
                    c.similarity(j, &c, i).unwrap()
                );
            }
        }
    }
}
