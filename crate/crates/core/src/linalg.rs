//! Dense row-major matrices and the kernels shared by every other module.
//!
//! Storage is generic over [`Scalar`] so that embeddings live in `f32` while
//! training buffers stay in `f64`. Every reduction (dot products, norms)
//! accumulates in `f64` regardless of the storage type.

use std::fmt;

use crate::error::{Error, Result};

/// Element type of a [`Matrix`].
pub trait Scalar: Copy + PartialEq + fmt::Debug + Send + Sync + 'static {
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
    fn is_finite(self) -> bool;
}

impl Scalar for f32 {
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
}

impl Scalar for f64 {
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// Row-major dense matrix with finite entries.
#[derive(Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    dims: usize,
    data: Vec<T>,
}

/// N×d embedding matrix in 32-bit storage.
pub type EmbeddingMatrix = Matrix<f32>;

impl<T: Scalar> fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Matrix")
            .field("rows", &self.rows)
            .field("dims", &self.dims)
            .finish_non_exhaustive()
    }
}

impl<T: Scalar> Matrix<T> {
    /// Builds a matrix, rejecting length mismatches and non-finite entries.
    pub fn new(rows: usize, dims: usize, data: Vec<T>) -> Result<Self> {
        if rows.checked_mul(dims) != Some(data.len()) {
            return Err(Error::Dimension(format!(
                "{rows}x{dims} matrix needs {} values, got {}",
                rows.saturating_mul(dims),
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "row {}, column {}",
                pos / dims.max(1),
                pos % dims.max(1)
            )));
        }
        Ok(Self { rows, dims, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let dims = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * dims);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dims {
                return Err(Error::Dimension(format!(
                    "row {i} has {} values, expected {dims}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), dims, data)
    }

    pub fn zeros(rows: usize, dims: usize) -> Self {
        Self {
            rows,
            dims,
            data: vec![T::from_f64(0.0); rows * dims],
        }
    }

    /// Caller guarantees the length and finiteness invariants.
    pub(crate) fn from_raw(rows: usize, dims: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(rows * dims, data.len());
        Self { rows, dims, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn dims(&self) -> usize {
        self.dims
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dims..(i + 1) * self.dims]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.dims + j]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[T]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.dims);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self::from_raw(indices.len(), self.dims, data)
    }

    /// Converts the storage type (e.g. `f32` to `f64` for training).
    pub fn convert<U: Scalar>(&self) -> Result<Matrix<U>> {
        Matrix::new(
            self.rows,
            self.dims,
            self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        )
    }

    /// First `k` columns, copied.
    pub fn truncate(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.dims {
            return Err(Error::Dimension(format!(
                "truncation to {k} columns out of range 1..={}",
                self.dims
            )));
        }
        if k == self.dims {
            return Ok(self.clone());
        }
        let mut data = Vec::with_capacity(self.rows * k);
        for r in self.iter_rows() {
            data.extend_from_slice(&r[..k]);
        }
        Ok(Self::from_raw(self.rows, k, data))
    }

    /// Rescales every row to unit L2 norm.
    pub fn l2_normalize_rows(&self) -> Result<Self> {
        let mut data = Vec::with_capacity(self.data.len());
        for (i, r) in self.iter_rows().enumerate() {
            let norm = norm(r);
            if norm == 0.0 {
                return Err(Error::ZeroVector(format!("row {i}")));
            }
            data.extend(r.iter().map(|v| T::from_f64(v.to_f64() / norm)));
        }
        Ok(Self::from_raw(self.rows, self.dims, data))
    }

    /// `self · otherᵀ` accumulated in f64: (rows × k)·(n × k)ᵀ → rows × n.
    pub fn matmul_transposed<U: Scalar>(&self, other: &Matrix<U>) -> Result<Matrix<f64>> {
        if self.dims != other.dims {
            return Err(Error::Dimension(format!(
                "inner dimensions differ: {} vs {}",
                self.dims, other.dims
            )));
        }
        let mut out = Vec::with_capacity(self.rows * other.rows);
        for a in self.iter_rows() {
            out.extend(other.iter_rows().map(|b| dot(a, b)));
        }
        Ok(Matrix::from_raw(self.rows, other.rows, out))
    }

    /// Matrix-vector product accumulated in f64.
    pub fn matvec<U: Scalar>(&self, v: &[U]) -> Result<Vec<f64>> {
        if v.len() != self.dims {
            return Err(Error::Dimension(format!(
                "vector has {} entries, matrix has {} columns",
                v.len(),
                self.dims
            )));
        }
        Ok(self.iter_rows().map(|r| dot(r, v)).collect())
    }
}

/// Horizontal concatenation: row i of the result is row i of every part, in order.
pub fn concat<T: Scalar>(parts: &[&Matrix<T>]) -> Result<Matrix<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Dimension("nothing to concatenate".into()))?;
    let rows = first.rows;
    for p in &parts[1..] {
        if p.rows != rows {
            return Err(Error::Dimension(format!(
                "row count mismatch: {} vs {}",
                rows, p.rows
            )));
        }
    }
    let dims: usize = parts.iter().map(|p| p.dims).sum();
    let mut data = Vec::with_capacity(rows * dims);
    for i in 0..rows {
        for p in parts {
            data.extend_from_slice(p.row(i));
        }
    }
    Ok(Matrix::from_raw(rows, dims, data))
}

/// L2-normalizes each part separately, then concatenates.
pub fn concat_normalized<T: Scalar>(parts: &[&Matrix<T>]) -> Result<Matrix<T>> {
    let normalized = parts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            p.l2_normalize_rows()
                .map_err(|e| e.in_stage(format!("source {i}")))
        })
        .collect::<Result<Vec<_>>>()?;
    concat(&normalized.iter().collect::<Vec<_>>())
}

/// Dot product with f64 accumulation in index order.
#[inline]
pub fn dot<A: Scalar, B: Scalar>(a: &[A], b: &[B]) -> f64 {
    let mut acc = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        acc += x.to_f64() * y.to_f64();
    }
    acc
}

#[inline]
pub fn norm<T: Scalar>(a: &[T]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity `u·v / (‖u‖‖v‖)`; a zero vector is an error, not 0.
pub fn cosine<A: Scalar, B: Scalar>(u: &[A], v: &[B]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Dimension(format!(
            "cosine of vectors with {} and {} entries",
            u.len(),
            v.len()
        )));
    }
    let nu = norm(u);
    if nu == 0.0 {
        return Err(Error::ZeroVector("first operand".into()));
    }
    let nv = norm(v);
    if nv == 0.0 {
        return Err(Error::ZeroVector("second operand".into()));
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[f32]]) -> EmbeddingMatrix {
        Matrix::from_rows(rows).unwrap()
    }

    fn random(rows: usize, dims: usize, seed: u64) -> EmbeddingMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * dims)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Matrix::new(rows, dims, data).unwrap()
    }

    #[test]
    fn concat_hand_example() {
        let a = m(&[&[1., 2.], &[3., 4.]]);
        let b = m(&[&[5.], &[6.]]);
        let c = concat(&[&a, &b]).unwrap();
        assert_eq!(c, m(&[&[1., 2., 5.], &[3., 4., 6.]]));
        assert_eq!(concat(&[&a]).unwrap(), a);
    }

    #[test]
    fn concat_four_sources_gives_1536_dims() {
        let parts: Vec<_> = (0..4).map(|s| random(3, 384, s)).collect();
        let c = concat(&parts.iter().collect::<Vec<_>>()).unwrap();
        assert_eq!(c.dims(), 1536);
    }

    #[test]
    fn concat_rejects_row_mismatch() {
        let err = concat(&[&random(100, 2, 0), &random(99, 2, 1)]).unwrap_err();
        assert_eq!(
            err.to_string(),
            "dimension mismatch: row count mismatch: 100 vs 99"
        );
        assert!(concat::<f32>(&[]).is_err());
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&[1.0f32, 0.0], &[0.0f32, 1.0]).unwrap(), 0.0);
        let c = cosine(&[1.0f32, 1.0], &[1.0f32, 0.0]).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        let x = [0.3f32, -2.0, 7.5];
        assert!((cosine(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(
            cosine(&[0.0f32, 0.0], &[1.0f32, 0.0]),
            Err(Error::ZeroVector(_))
        ));
        assert!(matches!(
            cosine(&[1.0f32], &[1.0f32, 0.0]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn truncate_examples() {
        let a = m(&[&[1., 2., 3.]]);
        assert_eq!(a.truncate(2).unwrap(), m(&[&[1., 2.]]));
        assert_eq!(a.truncate(3).unwrap(), a);
        assert!(a.truncate(0).is_err());
        assert!(a.truncate(4).is_err());
    }

    #[test]
    fn truncated_cosine_matches_sliced_cosine() {
        let a = random(10, 8, 7);
        for k in 1..=8 {
            let t = a.truncate(k).unwrap();
            for i in 0..10 {
                for j in 0..10 {
                    let via_truncate = cosine(t.row(i), t.row(j)).unwrap();
                    let via_slice = cosine(&a.row(i)[..k], &a.row(j)[..k]).unwrap();
                    assert_eq!(via_truncate, via_slice);
                }
            }
        }
    }

    #[test]
    fn normalize_examples() {
        let n = m(&[&[3., 4.]]).l2_normalize_rows().unwrap();
        assert!((n.get(0, 0) - 0.6).abs() < 1e-7 && (n.get(0, 1) - 0.8).abs() < 1e-7);
        let err = m(&[&[1., 1.], &[0., 0.]]).l2_normalize_rows().unwrap_err();
        assert!(err.to_string().contains("row 1"));

        let a = random(20, 16, 3);
        let once = a.l2_normalize_rows().unwrap();
        let twice = once.l2_normalize_rows().unwrap();
        for (x, y) in once.as_slice().iter().zip(twice.as_slice()) {
            assert!((x - y).abs() < 1e-6);
        }
        for i in 0..20 {
            assert!((norm(once.row(i)) - 1.0).abs() < 1e-6);
            for j in 0..20 {
                let d = dot(once.row(i), once.row(j));
                assert!((d - cosine(a.row(i), a.row(j)).unwrap()).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(
            Matrix::new(1, 2, vec![1.0f32, f32::NAN]),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            Matrix::new(2, 2, vec![1.0f32; 3]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn reductions_match_naive_double_loop() {
        let a = random(100, 64, 11);
        let b = random(100, 64, 12);
        let prod = a.matmul_transposed(&b).unwrap();
        for i in 0..100 {
            for j in 0..100 {
                let mut naive = 0.0f64;
                for c in 0..64 {
                    naive += a.get(i, c) as f64 * b.get(j, c) as f64;
                }
                let got = prod.get(i, j);
                assert!((got - naive).abs() <= 1e-10 * naive.abs().max(1e-300));
            }
        }
        let v: Vec<f64> = (0..64).map(|c| c as f64 * 0.01).collect();
        let mv = a.matvec(&v).unwrap();
        for (i, got) in mv.iter().enumerate() {
            let naive: f64 = (0..64).map(|c| a.get(i, c) as f64 * v[c]).sum();
            assert!((got - naive).abs() <= 1e-10 * naive.abs().max(1e-12));
        }
    }

    fn arb_matrix(rows: usize, dims: usize) -> impl Strategy<Value = EmbeddingMatrix> {
        prop::collection::vec(-10.0f32..10.0, rows * dims)
            .prop_map(move |d| Matrix::new(rows, dims, d).unwrap())
    }

    proptest! {
        #[test]
        fn concat_is_associative(a in arb_matrix(4, 3), b in arb_matrix(4, 2), c in arb_matrix(4, 5)) {
            let nested = concat(&[&a, &concat(&[&b, &c]).unwrap()]).unwrap();
            let flat = concat(&[&a, &b, &c]).unwrap();
            prop_assert_eq!(&nested, &flat);
            prop_assert_eq!(concat(&[&a, &b]).unwrap().truncate(3).unwrap(), a);
        }

        #[test]
        fn cosine_symmetric_and_scale_invariant(
            u in prop::collection::vec(-5.0f64..5.0, 6),
            v in prop::collection::vec(-5.0f64..5.0, 6),
            alpha in 0.01f64..100.0,
        ) {
            prop_assume!(norm(&u) > 1e-3 && norm(&v) > 1e-3);
            let c = cosine(&u, &v).unwrap();
            prop_assert_eq!(c, cosine(&v, &u).unwrap());
            let scaled: Vec<f64> = u.iter().map(|x| x * alpha).collect();
            prop_assert!((cosine(&scaled, &v).unwrap() - c).abs() < 1e-6);
        }
    }
}
