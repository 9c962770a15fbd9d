//! Dense exact matrices over `Z` and `Q` plus a few big-number helpers.

use std::fmt;

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer as _;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

pub type Integer = BigInt;
pub type Rational = BigRational;

/// Dense row-major matrix of arbitrary-precision integers.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct ExactMatrix {
    rows: usize,
    cols: usize,
    data: Vec<BigInt>,
}

impl ExactMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![BigInt::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, BigInt::one());
        }
        m
    }

    /// Builds a matrix from nested rows. Panics if rows are ragged.
    pub fn from_rows<T: Into<BigInt> + Clone>(rows: &[Vec<T>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend(row.iter().cloned().map(Into::into));
        }
        Self { rows: r, cols: c, data }
    }

    pub fn from_i64(rows: usize, cols: usize, values: &[i64]) -> Self {
        assert_eq!(values.len(), rows * cols);
        Self {
            rows,
            cols,
            data: values.iter().map(|&v| BigInt::from(v)).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> &BigInt {
        &self.data[i * self.cols + j]
    }

    #[inline]
    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut BigInt {
        &mut self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: BigInt) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[BigInt] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_i64_rows(&self) -> Option<Vec<Vec<i64>>> {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(ToPrimitive::to_i64).collect())
            .collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j).clone());
            }
        }
        t
    }

    pub fn mul(&self, other: &ExactMatrix) -> Self {
        assert_eq!(self.cols, other.rows, "dimension mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for l in 0..self.cols {
                let a = self.get(i, l);
                if a.is_zero() {
                    continue;
                }
                for j in 0..other.cols {
                    let b = other.get(l, j);
                    if !b.is_zero() {
                        *out.get_mut(i, j) += a * b;
                    }
                }
            }
        }
        out
    }

    /// `A^T A`.
    pub fn gram(&self) -> Self {
        self.transpose().mul(self)
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut out = Self::zeros(idx.len(), self.cols);
        for (r, &i) in idx.iter().enumerate() {
            for j in 0..self.cols {
                out.set(r, j, self.get(i, j).clone());
            }
        }
        out
    }

    pub fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for j in 0..self.cols {
            self.data.swap(a * self.cols + j, b * self.cols + j);
        }
    }

    pub fn swap_cols(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        for i in 0..self.rows {
            self.data.swap(i * self.cols + a, i * self.cols + b);
        }
    }

    /// Row sums (used for the `B_n[Y] 1 = k 1` invariant).
    pub fn row_sums(&self) -> Vec<BigInt> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    /// Determinant by fraction-free Bareiss elimination.
    pub fn determinant(&self) -> BigInt {
        assert!(self.is_square(), "determinant of a non-square matrix");
        let n = self.rows;
        if n == 0 {
            return BigInt::one();
        }
        let mut a = self.clone();
        let mut sign = 1i32;
        let mut prev = BigInt::one();
        for k in 0..n - 1 {
            if a.get(k, k).is_zero() {
                match (k + 1..n).find(|&i| !a.get(i, k).is_zero()) {
                    Some(i) => {
                        a.swap_rows(i, k);
                        sign = -sign;
                    }
                    None => return BigInt::zero(),
                }
            }
            let pivot = a.get(k, k).clone();
            for i in k + 1..n {
                let aik = a.get(i, k).clone();
                for j in k + 1..n {
                    let v = (&pivot * a.get(i, j) - &aik * a.get(k, j)) / &prev;
                    a.set(i, j, v);
                }
                a.set(i, k, BigInt::zero());
            }
            prev = pivot;
        }
        let d = a.get(n - 1, n - 1).clone();
        if sign < 0 {
            -d
        } else {
            d
        }
    }
}

impl fmt::Debug for ExactMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ExactMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            let row: Vec<String> = self.row(i).iter().map(ToString::to_string).collect();
            writeln!(f, "  [{}]", row.join(", "))?;
        }
        write!(f, "]")
    }
}

/// Small dense rational matrix; used where the arithmetic must stay exact
/// but entries are genuinely fractional (the `C` factor of `M`, Gram inverses).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RationalMatrix {
    n_rows: usize,
    n_cols: usize,
    data: Vec<BigRational>,
}

impl RationalMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            n_rows: rows,
            n_cols: cols,
            data: vec![BigRational::zero(); rows * cols],
        }
    }

    pub fn from_integer(m: &ExactMatrix) -> Self {
        let mut out = Self::zeros(m.rows(), m.cols());
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                out.set(i, j, BigRational::from_integer(m.get(i, j).clone()));
            }
        }
        out
    }

    pub fn rows(&self) -> usize {
        self.n_rows
    }

    pub fn cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> &BigRational {
        &self.data[i * self.n_cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: BigRational) {
        self.data[i * self.n_cols + j] = v;
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        for j in 0..self.n_cols {
            self.data.swap(a * self.n_cols + j, b * self.n_cols + j);
        }
    }

    /// Determinant by Gaussian elimination over `Q`.
    pub fn determinant(&self) -> BigRational {
        assert_eq!(self.n_rows, self.n_cols);
        let n = self.n_rows;
        let mut a = self.clone();
        let mut det = BigRational::one();
        for k in 0..n {
            let Some(p) = (k..n).find(|&i| !a.get(i, k).is_zero()) else {
                return BigRational::zero();
            };
            if p != k {
                a.swap_rows(p, k);
                det = -det;
            }
            let pivot = a.get(k, k).clone();
            det *= &pivot;
            for i in k + 1..n {
                if a.get(i, k).is_zero() {
                    continue;
                }
                let factor = a.get(i, k) / &pivot;
                for j in k..n {
                    let v = a.get(i, j) - &factor * a.get(k, j);
                    a.set(i, j, v);
                }
            }
        }
        det
    }

    /// Leading principal minors `det(A[..i, ..i])` for `i = 1..=n`.
    pub fn leading_principal_minors(&self) -> Vec<BigRational> {
        (1..=self.n_rows)
            .map(|s| {
                let mut sub = RationalMatrix::zeros(s, s);
                for i in 0..s {
                    for j in 0..s {
                        sub.set(i, j, self.get(i, j).clone());
                    }
                }
                sub.determinant()
            })
            .collect()
    }

    /// Inverse by Gauss–Jordan; `None` if singular.
    pub fn inverse(&self) -> Option<RationalMatrix> {
        assert_eq!(self.n_rows, self.n_cols);
        let n = self.n_rows;
        let mut a = self.clone();
        let mut inv = RationalMatrix::zeros(n, n);
        for i in 0..n {
            inv.set(i, i, BigRational::one());
        }
        for k in 0..n {
            let p = (k..n).find(|&i| !a.get(i, k).is_zero())?;
            if p != k {
                a.swap_rows(p, k);
                inv.swap_rows(p, k);
            }
            let pivot = a.get(k, k).clone();
            for j in 0..n {
                let v = a.get(k, j) / &pivot;
                a.set(k, j, v);
                let w = inv.get(k, j) / &pivot;
                inv.set(k, j, w);
            }
            for i in 0..n {
                if i == k || a.get(i, k).is_zero() {
                    continue;
                }
                let f = a.get(i, k).clone();
                for j in 0..n {
                    let v = a.get(i, j) - &f * a.get(k, j);
                    a.set(i, j, v);
                    let w = inv.get(i, j) - &f * inv.get(k, j);
                    inv.set(i, j, w);
                }
            }
        }
        Some(inv)
    }

    pub fn mul(&self, other: &RationalMatrix) -> RationalMatrix {
        assert_eq!(self.n_cols, other.n_rows);
        let mut out = RationalMatrix::zeros(self.n_rows, other.n_cols);
        for i in 0..self.n_rows {
            for j in 0..other.n_cols {
                let mut s = BigRational::zero();
                for l in 0..self.n_cols {
                    s += self.get(i, l) * other.get(l, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    pub fn to_f64(&self) -> Vec<Vec<f64>> {
        (0..self.n_rows)
            .map(|i| (0..self.n_cols).map(|j| rational_to_f64(self.get(i, j))).collect())
            .collect()
    }
}

pub fn binomial(n: u64, k: u64) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigInt::one();
    for i in 0..k {
        acc = acc * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    acc
}

/// Binomial coefficient as `f64`, saturating at infinity; used only for size guards.
pub fn binomial_f64(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc
}

pub fn factorial(n: u64) -> BigInt {
    (1..=n).fold(BigInt::one(), |acc, i| acc * BigInt::from(i))
}

/// `n! / prod(parts_i!)` with `n = sum(parts)`.
pub fn multinomial(parts: &[u64]) -> BigInt {
    let mut total = 0u64;
    let mut acc = BigInt::one();
    for &p in parts {
        for i in 1..=p {
            total += 1;
            acc = acc * BigInt::from(total) / BigInt::from(i);
        }
    }
    acc
}

/// `base^exp` with `0^0 = 1`.
pub fn pow_u64(base: u64, exp: u64) -> BigInt {
    num_traits::pow::pow(BigInt::from(base), exp as usize)
}

/// Natural logarithm of a positive big unsigned integer.
pub fn ln_biguint(x: &BigUint) -> f64 {
    let bits = x.bits();
    if bits <= 1000 {
        return x.to_f64().unwrap_or(f64::INFINITY).ln();
    }
    let shift = bits - 64;
    let top = (x >> shift).to_f64().expect("64-bit prefix fits f64");
    top.ln() + shift as f64 * std::f64::consts::LN_2
}

/// Natural logarithm of `|x|`; `-inf` for zero.
pub fn ln_abs(x: &BigInt) -> f64 {
    if x.is_zero() {
        return f64::NEG_INFINITY;
    }
    ln_biguint(x.magnitude())
}

/// Converts a rational to the nearest representable `f64`, robust to huge
/// numerators and denominators.
pub fn rational_to_f64(r: &BigRational) -> f64 {
    if r.is_zero() {
        return 0.0;
    }
    if let (Some(n), Some(d)) = (r.numer().to_f64(), r.denom().to_f64()) {
        if n.is_finite() && d.is_finite() && d != 0.0 {
            let v = n / d;
            if v.is_finite() && v != 0.0 {
                return v;
            }
        }
    }
    let sign = if r.numer().sign() == Sign::Minus { -1.0 } else { 1.0 };
    sign * (ln_abs(r.numer()) - ln_abs(r.denom())).exp()
}

/// `ln |r|` for a nonzero rational.
pub fn ln_rational(r: &BigRational) -> f64 {
    ln_abs(r.numer()) - ln_abs(r.denom())
}

/// Serializes a rational as `"num/den"` (denominator `1` kept explicit).
pub fn rational_to_string(r: &BigRational) -> String {
    format!("{}/{}", r.numer(), r.denom())
}

/// p-adic valuation of a nonzero integer.
pub fn valuation(x: &BigInt, p: u64) -> u32 {
    assert!(!x.is_zero(), "valuation of zero");
    let p = BigInt::from(p);
    let mut v = 0;
    let mut y = x.abs();
    loop {
        let (q, r) = y.div_rem(&p);
        if !r.is_zero() {
            return v;
        }
        y = q;
        v += 1;
    }
}

pub fn is_prime(p: u64) -> bool {
    if p < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= p {
        if p.is_multiple_of(d) {
            return false;
        }
        d += 1;
    }
    true
}

/// Prime factorization as `(prime, exponent)` pairs in increasing order.
pub fn factorize(mut n: u64) -> Vec<(u64, u32)> {
    let mut out = Vec::new();
    let mut d = 2;
    while d * d <= n {
        if n.is_multiple_of(d) {
            let mut e = 0;
            while n.is_multiple_of(d) {
                n /= d;
                e += 1;
            }
            out.push((d, e));
        }
        d += 1;
    }
    if n > 1 {
        out.push((n, 1));
    }
    out
}
