//! The structured matrices of the model: rows of `B_n`, its Gram matrix, square
//! row submatrices, and the simplicial boundary matrices `I_{n,r}`.
//!
//! `B_n` has `n^k` rows and is never materialized; rows are produced from a
//! [`RowIndex`] on demand. Indices are 1-based throughout to match `[n]`.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_traits::One;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{binomial, pow_u64, ExactMatrix};

/// A tuple `(b_1, ..., b_k) ∈ [n]^k` naming one row of `B_n`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RowIndex {
    n: usize,
    entries: Vec<usize>,
}

impl RowIndex {
    pub fn new(n: usize, entries: Vec<usize>) -> Result<Self> {
        if entries.len() < 3 {
            return Err(Error::invalid(format!(
                "row weight k = {} must be at least 3",
                entries.len()
            )));
        }
        if let Some(&bad) = entries.iter().find(|&&b| b == 0 || b > n) {
            return Err(Error::invalid(format!("row entry {bad} outside [1, {n}]")));
        }
        Ok(Self { n, entries })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[usize] {
        &self.entries
    }

    /// Number of positions holding the value `i`.
    pub fn multiplicity(&self, i: usize) -> usize {
        self.entries.iter().filter(|&&b| b == i).count()
    }
}

/// The row `e_{b_1} + ... + e_{b_k}` stored as index → multiplicity.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SparseRowVector {
    n: usize,
    multiplicities: BTreeMap<usize, u32>,
}

impl SparseRowVector {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn multiplicities(&self) -> &BTreeMap<usize, u32> {
        &self.multiplicities
    }

    pub fn weight(&self) -> u32 {
        self.multiplicities.values().sum()
    }

    pub fn to_dense(&self) -> Vec<i64> {
        let mut v = vec![0; self.n];
        for (&i, &m) in &self.multiplicities {
            v[i - 1] = i64::from(m);
        }
        v
    }
}

pub fn build_row(b: &RowIndex) -> SparseRowVector {
    let mut multiplicities = BTreeMap::new();
    for &x in &b.entries {
        *multiplicities.entry(x).or_insert(0) += 1;
    }
    SparseRowVector {
        n: b.n,
        multiplicities,
    }
}

/// Iterates `[n]^k` in lexicographic order.
pub fn all_row_indices(n: usize, k: usize) -> impl Iterator<Item = RowIndex> {
    let total = if n == 0 { 0 } else { (n as u128).pow(k as u32) };
    let mut state = vec![1usize; k];
    let mut emitted: u128 = 0;
    std::iter::from_fn(move || {
        if emitted == total {
            return None;
        }
        let out = RowIndex {
            n,
            entries: state.clone(),
        };
        emitted += 1;
        for pos in (0..k).rev() {
            if state[pos] < n {
                state[pos] += 1;
                break;
            }
            state[pos] = 1;
        }
        Some(out)
    })
}

fn check_nk(n: usize, k: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("n must be at least 1"));
    }
    if k < 3 {
        return Err(Error::invalid(format!("k = {k} must be at least 3")));
    }
    Ok(())
}

/// `(α, β)` with `B_n^T B_n = αJ + βI`: `α = k(k-1)n^{k-2}`, `β = k n^{k-1}`.
pub fn gram_coefficients(n: usize, k: usize) -> (BigInt, BigInt) {
    let (n64, k64) = (n as u64, k as u64);
    let alpha = BigInt::from(k64 * (k64 - 1)) * pow_u64(n64, k64 - 2);
    let beta = BigInt::from(k64) * pow_u64(n64, k64 - 1);
    (alpha, beta)
}

pub fn gram_closed_form(n: usize, k: usize) -> Result<ExactMatrix> {
    check_nk(n, k)?;
    let (alpha, beta) = gram_coefficients(n, k);
    let mut g = ExactMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let v = if i == j { &alpha + &beta } else { alpha.clone() };
            g.set(i, j, v);
        }
    }
    Ok(g)
}

/// `C_{n,k} = det(B_n^T B_n) = k^{n+1} n^{(k-1)n}`.
///
/// `n = 0` is accepted and gives `k` (empty-product convention), which the
/// intersection formulas of the kernel-defect module rely on.
pub fn gram_det(n: usize, k: usize) -> BigInt {
    let (n64, k64) = (n as u64, k as u64);
    pow_u64(k64, n64 + 1) * pow_u64(n64, (k64 - 1) * n64)
}

/// `B_n[Y]` with rows in lexicographic order of `Y`.
pub fn submatrix(y: &[RowIndex], n: usize, k: usize) -> Result<ExactMatrix> {
    check_nk(n, k)?;
    if y.len() != n {
        return Err(Error::invalid(format!("|Y| = {} but n = {n}", y.len())));
    }
    let mut sorted: Vec<&RowIndex> = y.iter().collect();
    sorted.sort();
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            return Err(Error::invalid(format!("duplicate row {:?} in Y", w[0].entries)));
        }
    }
    let mut m = ExactMatrix::zeros(n, n);
    for (r, b) in sorted.iter().enumerate() {
        if b.n != n || b.k() != k {
            return Err(Error::invalid(format!(
                "row {:?} is not an element of [{n}]^{k}",
                b.entries
            )));
        }
        for (&i, &mult) in build_row(b).multiplicities() {
            m.set(r, i - 1, BigInt::from(mult));
        }
    }
    Ok(m)
}

/// A face as a strictly increasing vertex tuple.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FaceIndex {
    vertices: Vec<usize>,
}

impl FaceIndex {
    pub fn new(vertices: Vec<usize>, max_vertex: usize) -> Result<Self> {
        if vertices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!("face {vertices:?} is not strictly increasing")));
        }
        if vertices.iter().any(|&v| v == 0 || v > max_vertex) {
            return Err(Error::invalid(format!("face {vertices:?} outside [1, {max_vertex}]")));
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[usize] {
        &self.vertices
    }
}

/// Lexicographically ordered `size`-subsets of `[max]`.
pub fn subsets_lex(max: usize, size: usize) -> Vec<FaceIndex> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(size);
    fn rec(start: usize, max: usize, size: usize, cur: &mut Vec<usize>, out: &mut Vec<FaceIndex>) {
        if cur.len() == size {
            out.push(FaceIndex { vertices: cur.clone() });
            return;
        }
        for v in start..=max {
            if max - v + 1 < size - cur.len() {
                break;
            }
            cur.push(v);
            rec(v + 1, max, size, cur, out);
            cur.pop();
        }
    }
    rec(1, max, size, &mut cur, &mut out);
    out
}

/// `I_{n,r}` together with its row labels (r-subsets of `[n-1]`) and column
/// labels ((r+1)-subsets of `[n]`), both lexicographic.
#[derive(Clone, Debug)]
pub struct BoundaryMatrix {
    pub matrix: ExactMatrix,
    pub row_faces: Vec<FaceIndex>,
    pub col_faces: Vec<FaceIndex>,
}

pub fn build_boundary_matrix(n: usize, r: usize) -> Result<BoundaryMatrix> {
    if r < 1 || r + 2 > n {
        return Err(Error::invalid(format!("need 1 <= r <= n - 2, got n = {n}, r = {r}")));
    }
    let row_faces = subsets_lex(n - 1, r);
    let col_faces = subsets_lex(n, r + 1);
    let mut matrix = ExactMatrix::zeros(row_faces.len(), col_faces.len());
    for (ci, big) in col_faces.iter().enumerate() {
        // Dropping s_j from S' leaves an r-subset S with S' = S ∪ {s_j}.
        for j in 0..=r {
            let small: Vec<usize> = big
                .vertices
                .iter()
                .enumerate()
                .filter(|&(pos, _)| pos != j)
                .map(|(_, &v)| v)
                .collect();
            if small.last().is_some_and(|&v| v > n - 1) {
                continue;
            }
            let ri = row_faces
                .binary_search_by(|f| f.vertices.as_slice().cmp(small.as_slice()))
                .expect("r-subset of [n-1] is a row label");
            let sign = if j % 2 == 0 { BigInt::one() } else { -BigInt::one() };
            matrix.set(ri, ci, sign);
        }
    }
    Ok(BoundaryMatrix {
        matrix,
        row_faces,
        col_faces,
    })
}

/// Returns `(det(I_{n,r} I_{n,r}^T), n^{binom(n-2, r)})`.
pub fn kalai_check(n: usize, r: usize) -> Result<(BigInt, BigInt)> {
    let b = build_boundary_matrix(n, r)?;
    let lhs = b.matrix.transpose().gram().determinant();
    let e = binomial(n as u64 - 2, r as u64);
    let e: u64 = e.try_into().map_err(|_| Error::invalid("exponent overflow"))?;
    Ok((lhs, pow_u64(n as u64, e)))
}

/// Number of rows `binom(n-1, r)` of `I_{n,r}`, i.e. the face count of an
/// `r`-dimensional hypertree on `n` vertices.
pub fn hypertree_face_count(n: usize, r: usize) -> usize {
    let v: u64 = binomial(n as u64 - 1, r as u64).try_into().unwrap_or(u64::MAX);
    v as usize
}

/// Builds `B_n[Y]` from arbitrary tuple slices; convenience for tests and the CLI.
pub fn submatrix_from_tuples(tuples: &[Vec<usize>], n: usize, k: usize) -> Result<ExactMatrix> {
    let rows = tuples
        .iter()
        .map(|t| RowIndex::new(n, t.clone()))
        .collect::<Result<Vec<_>>>()?;
    submatrix(&rows, n, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::Zero;

    fn row(n: usize, e: &[usize]) -> RowIndex {
        RowIndex::new(n, e.to_vec()).unwrap()
    }

    #[test]
    fn build_row_counts() {
        let r = build_row(&row(3, &[1, 1, 2]));
        assert_eq!(r.multiplicities(), &BTreeMap::from([(1, 2), (2, 1)]));
        let r = build_row(&row(2, &[2, 2, 2]));
        assert_eq!(r.multiplicities(), &BTreeMap::from([(2, 3)]));
        let r = build_row(&row(4, &[1, 2, 3, 4, 1]));
        assert_eq!(r.multiplicities(), &BTreeMap::from([(1, 2), (2, 1), (3, 1), (4, 1)]));
        assert_eq!(r.weight(), 5);
    }

    #[test]
    fn row_index_rejects_out_of_range() {
        assert!(matches!(RowIndex::new(3, vec![1, 4, 2]), Err(Error::InvalidInput(_))));
        assert!(matches!(RowIndex::new(3, vec![0, 1, 2]), Err(Error::InvalidInput(_))));
        assert!(RowIndex::new(3, vec![1, 2]).is_err());
    }

    #[test]
    fn gram_closed_form_values() {
        let g = gram_closed_form(2, 3).unwrap();
        assert_eq!(g, ExactMatrix::from_i64(2, 2, &[24, 12, 12, 24]));
        let g = gram_closed_form(1, 3).unwrap();
        assert_eq!(g, ExactMatrix::from_i64(1, 1, &[9]));
        let (a, b) = gram_coefficients(3, 3);
        assert_eq!((a, b), (BigInt::from(18), BigInt::from(27)));
    }

    #[test]
    fn gram_det_values() {
        assert_eq!(gram_det(2, 3), BigInt::from(432));
        assert_eq!(gram_det(1, 5), BigInt::from(25));
        assert_eq!(gram_det(3, 3), BigInt::from(59049));
        assert_eq!(gram_det(0, 3), BigInt::from(3));
    }

    #[test]
    fn submatrix_examples() {
        let m = submatrix_from_tuples(&[vec![2, 2, 2], vec![1, 1, 1]], 2, 3).unwrap();
        assert_eq!(m, ExactMatrix::from_i64(2, 2, &[3, 0, 0, 3]));
        let m = submatrix_from_tuples(&[vec![1, 1, 2], vec![1, 2, 2]], 2, 3).unwrap();
        assert_eq!(m, ExactMatrix::from_i64(2, 2, &[2, 1, 1, 2]));
        let dup = submatrix_from_tuples(&[vec![1, 1, 1], vec![1, 1, 1], vec![2, 3, 3]], 3, 3);
        assert!(matches!(dup, Err(Error::InvalidInput(_))));
        let short = submatrix_from_tuples(&[vec![1, 1, 1]], 2, 3);
        assert!(short.is_err());
    }

    #[test]
    fn enumeration_is_lexicographic() {
        let rows: Vec<Vec<usize>> = all_row_indices(2, 3).map(|r| r.entries).collect();
        assert_eq!(rows.len(), 8);
        assert_eq!(rows[0], vec![1, 1, 1]);
        assert_eq!(rows[1], vec![1, 1, 2]);
        assert_eq!(rows[7], vec![2, 2, 2]);
        assert!(rows.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn boundary_matrix_n3_r1() {
        let b = build_boundary_matrix(3, 1).unwrap();
        // rows {1},{2}; columns {1,2},{1,3},{2,3}
        // ({1},{1,2}): S' = {1,2}, s_j = 2 at j = 1 → -1
        // ({2},{1,2}): s_j = 1 at j = 0 → +1
        // ({1},{1,3}): s_j = 3 at j = 1 → -1
        // ({2},{1,3}): 0
        // ({1},{2,3}): 0
        // ({2},{2,3}): s_j = 3 at j = 1 → -1
        assert_eq!(b.matrix, ExactMatrix::from_i64(2, 3, &[-1, -1, 0, 1, 0, -1]));
        let b = build_boundary_matrix(4, 2).unwrap();
        assert_eq!((b.matrix.rows(), b.matrix.cols()), (3, 4));
        assert!(build_boundary_matrix(4, 3).is_err());
        assert!(build_boundary_matrix(4, 0).is_err());
    }

    #[test]
    fn boundary_columns_are_sparse_signs() {
        for (n, r) in [(5, 1), (5, 2), (6, 2), (6, 3)] {
            let b = build_boundary_matrix(n, r).unwrap();
            for j in 0..b.matrix.cols() {
                let nz: Vec<_> = (0..b.matrix.rows())
                    .map(|i| b.matrix.get(i, j).clone())
                    .filter(|v| !v.is_zero())
                    .collect();
                assert!(nz.len() <= r + 1);
                assert!(nz.iter().all(|v| v == &BigInt::one() || v == &-BigInt::one()));
            }
        }
    }

    #[test]
    fn kalai_small() {
        assert_eq!(kalai_check(4, 1).unwrap(), (BigInt::from(16), BigInt::from(16)));
        assert_eq!(kalai_check(3, 1).unwrap(), (BigInt::from(3), BigInt::from(3)));
        assert_eq!(kalai_check(5, 2).unwrap(), (BigInt::from(125), BigInt::from(125)));
    }
}
