//! Smith normal form over `Z`, cokernels, p-Sylow types and ranks mod p.

use num_bigint::BigInt;
use num_integer::Integer as _;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{is_prime, valuation, ExactMatrix};

/// Invariant factors of `A` (ones dropped) and its rank.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SmithForm {
    /// `d_1 | d_2 | ... | d_s`, each `>= 2`.
    pub divisors: Vec<BigInt>,
    pub rank: usize,
    /// `cols - rank`, the nullity of `A`.
    pub free_rank: usize,
}

/// Smith normal form by minimum-absolute-value pivoting.
pub fn smith_normal_form(a: &ExactMatrix) -> SmithForm {
    let diag = snf_diagonal(a.clone());
    let rank = diag.len();
    let divisors = diag.into_iter().filter(|d| !d.is_one()).collect();
    SmithForm {
        divisors,
        rank,
        free_rank: a.cols() - rank,
    }
}

/// Nonzero diagonal of the Smith form, ones included, in divisibility order.
fn snf_diagonal(mut a: ExactMatrix) -> Vec<BigInt> {
    let (rows, cols) = (a.rows(), a.cols());
    let mut diag = Vec::new();
    let mut t = 0;
    while t < rows.min(cols) {
        // smallest nonzero entry of the trailing block
        let mut best: Option<(usize, usize)> = None;
        for i in t..rows {
            for j in t..cols {
                let v = a.get(i, j);
                if v.is_zero() {
                    continue;
                }
                if best.is_none_or(|(bi, bj)| v.magnitude() < a.get(bi, bj).magnitude()) {
                    best = Some((i, j));
                    if v.magnitude().is_one() {
                        break;
                    }
                }
            }
        }
        let Some((pi, pj)) = best else { break };
        a.swap_rows(t, pi);
        a.swap_cols(t, pj);
        loop {
            let pivot = a.get(t, t).clone();
            let mut dirty = false;
            for i in t + 1..rows {
                if a.get(i, t).is_zero() {
                    continue;
                }
                let q = a.get(i, t).div_floor(&pivot);
                row_axpy(&mut a, i, t, &q, t);
                if !a.get(i, t).is_zero() {
                    dirty = true;
                }
            }
            for j in t + 1..cols {
                if a.get(t, j).is_zero() {
                    continue;
                }
                let q = a.get(t, j).div_floor(&pivot);
                col_axpy(&mut a, j, t, &q, t);
                if !a.get(t, j).is_zero() {
                    dirty = true;
                }
            }
            if dirty {
                move_min_to_pivot(&mut a, t);
                continue;
            }
            // row and column cleared; enforce divisibility on the remaining block
            let pivot = a.get(t, t).clone();
            let bad = (t + 1..rows).find(|&i| (t + 1..cols).any(|j| !a.get(i, j).is_multiple_of(&pivot)));
            match bad {
                Some(i) => {
                    // add row i to row t and keep reducing
                    for j in t..cols {
                        let v = a.get(t, j) + a.get(i, j);
                        a.set(t, j, v);
                    }
                }
                None => break,
            }
        }
        diag.push(a.get(t, t).abs());
        t += 1;
    }
    diag
}

/// row_i -= q * row_t over columns `from..`.
fn row_axpy(a: &mut ExactMatrix, i: usize, t: usize, q: &BigInt, from: usize) {
    for j in from..a.cols() {
        let v = a.get(t, j);
        if v.is_zero() {
            continue;
        }
        let nv = a.get(i, j) - q * v;
        a.set(i, j, nv);
    }
}

/// col_j -= q * col_t over rows `from..`.
fn col_axpy(a: &mut ExactMatrix, j: usize, t: usize, q: &BigInt, from: usize) {
    for i in from..a.rows() {
        let v = a.get(i, t);
        if v.is_zero() {
            continue;
        }
        let nv = a.get(i, j) - q * v;
        a.set(i, j, nv);
    }
}

/// Moves the smallest nonzero entry of row `t` / column `t` onto the diagonal.
fn move_min_to_pivot(a: &mut ExactMatrix, t: usize) {
    let mut best = (t, t);
    for i in t..a.rows() {
        let v = a.get(i, t);
        if !v.is_zero() && (a.get(best.0, best.1).is_zero() || v.magnitude() < a.get(best.0, best.1).magnitude()) {
            best = (i, t);
        }
    }
    for j in t..a.cols() {
        let v = a.get(t, j);
        if !v.is_zero() && (a.get(best.0, best.1).is_zero() || v.magnitude() < a.get(best.0, best.1).magnitude()) {
            best = (t, j);
        }
    }
    if best.0 != t {
        a.swap_rows(t, best.0);
    }
    if best.1 != t {
        a.swap_cols(t, best.1);
    }
}

/// `Z^rows / A Z^cols`: free rank plus invariant factors.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CokernelClass {
    pub free_rank: usize,
    #[serde(with = "bigint_strings")]
    pub divisors: Vec<BigInt>,
}

impl CokernelClass {
    pub fn is_finite(&self) -> bool {
        self.free_rank == 0
    }

    pub fn is_trivial(&self) -> bool {
        self.free_rank == 0 && self.divisors.is_empty()
    }

    /// Order of the torsion part.
    pub fn torsion_order(&self) -> BigInt {
        self.divisors.iter().product()
    }
}

pub fn cokernel(a: &ExactMatrix) -> CokernelClass {
    let snf = smith_normal_form(a);
    CokernelClass {
        free_rank: a.rows() - snf.rank,
        divisors: snf.divisors,
    }
}

/// `⊕ Z/p^{λ_i}` with `λ` weakly decreasing.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PGroupType {
    pub p: u64,
    pub partition: Vec<u32>,
}

impl PGroupType {
    pub fn trivial(p: u64) -> Self {
        Self { p, partition: Vec::new() }
    }

    pub fn new(p: u64, mut partition: Vec<u32>) -> Self {
        partition.retain(|&x| x > 0);
        partition.sort_unstable_by(|a, b| b.cmp(a));
        Self { p, partition }
    }

    pub fn is_trivial(&self) -> bool {
        self.partition.is_empty()
    }

    /// `log_p |G|`.
    pub fn log_order(&self) -> u32 {
        self.partition.iter().sum()
    }

    pub fn rank(&self) -> usize {
        self.partition.len()
    }

    /// Invariant factors `p^{λ_i}` in increasing order.
    pub fn divisors(&self) -> Vec<u64> {
        self.partition.iter().rev().map(|&l| self.p.pow(l)).collect()
    }
}

/// p-Sylow part of a cokernel. An infinite cokernel is flagged, never truncated.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SylowResult {
    Finite(PGroupType),
    Infinite { free_rank: usize, torsion: PGroupType },
}

impl SylowResult {
    pub fn finite(&self) -> Option<&PGroupType> {
        match self {
            SylowResult::Finite(g) => Some(g),
            SylowResult::Infinite { .. } => None,
        }
    }
}

pub fn sylow(c: &CokernelClass, p: u64) -> Result<SylowResult> {
    if !is_prime(p) {
        return Err(Error::invalid(format!("{p} is not prime")));
    }
    let parts = c.divisors.iter().map(|d| valuation(d, p)).collect();
    let torsion = PGroupType::new(p, parts);
    Ok(if c.free_rank == 0 {
        SylowResult::Finite(torsion)
    } else {
        SylowResult::Infinite {
            free_rank: c.free_rank,
            torsion,
        }
    })
}

/// `(rank, cols - rank)` of `A` over `F_p`.
pub fn rank_mod_p(a: &ExactMatrix, p: u64) -> Result<(usize, usize)> {
    if !is_prime(p) {
        return Err(Error::invalid(format!("{p} is not prime")));
    }
    let pb = BigInt::from(p);
    let (rows, cols) = (a.rows(), a.cols());
    let mut m: Vec<Vec<u64>> = (0..rows)
        .map(|i| {
            (0..cols)
                .map(|j| a.get(i, j).mod_floor(&pb).to_u64().expect("residue fits u64"))
                .collect()
        })
        .collect();
    let mulmod = |x: u64, y: u64| ((x as u128 * y as u128) % p as u128) as u64;
    let mut rank = 0;
    for c in 0..cols {
        let Some(piv) = (rank..rows).find(|&i| m[i][c] != 0) else {
            continue;
        };
        m.swap(rank, piv);
        let inv = mod_inverse(m[rank][c], p);
        for v in m[rank].iter_mut() {
            *v = mulmod(*v, inv);
        }
        for i in 0..rows {
            if i == rank || m[i][c] == 0 {
                continue;
            }
            let f = m[i][c];
            for j in c..cols {
                let sub = mulmod(f, m[rank][j]);
                m[i][j] = (m[i][j] + p - sub) % p;
            }
        }
        rank += 1;
        if rank == rows {
            break;
        }
    }
    Ok((rank, cols - rank))
}

fn mod_inverse(a: u64, p: u64) -> u64 {
    // Fermat; p prime
    let mut result = 1u128;
    let mut base = a as u128 % p as u128;
    let mut e = p - 2;
    while e > 0 {
        if e & 1 == 1 {
            result = result * base % p as u128;
        }
        base = base * base % p as u128;
        e >>= 1;
    }
    result as u64
}

/// p-Sylow type of `cok(A)` for a nonsingular square `A` by elimination over
/// `Z/p^e`, `e = 1 + v_p(det A)`. Falls back to the integer Smith form when
/// `p^e` does not fit comfortably in 63 bits.
pub fn sylow_modular(a: &ExactMatrix, p: u64) -> Result<PGroupType> {
    if !is_prime(p) {
        return Err(Error::invalid(format!("{p} is not prime")));
    }
    if !a.is_square() {
        return Err(Error::invalid("modular Sylow path needs a square matrix"));
    }
    let det = a.determinant();
    if det.is_zero() {
        return Err(Error::invalid("modular Sylow path needs a nonsingular matrix"));
    }
    let e = valuation(&det, p) + 1;
    let modulus = (p as u128).checked_pow(e).filter(|&q| q < (1u128 << 62));
    let Some(q) = modulus else {
        return match sylow(&cokernel(a), p)? {
            SylowResult::Finite(g) => Ok(g),
            SylowResult::Infinite { .. } => unreachable!("nonsingular"),
        };
    };
    let q = q as i128;
    let n = a.rows();
    let qb = BigInt::from(q);
    let mut m: Vec<Vec<i128>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| a.get(i, j).mod_floor(&qb).to_i128().expect("residue fits"))
                .collect()
        })
        .collect();
    let vp = |x: i128| -> u32 {
        if x == 0 {
            return e;
        }
        let mut v = 0;
        let mut y = x;
        while y % p as i128 == 0 {
            y /= p as i128;
            v += 1;
        }
        v
    };
    let mut parts = Vec::new();
    for t in 0..n {
        // pivot of minimal valuation in the trailing block
        let mut best: Option<(usize, usize, u32)> = None;
        for (i, row) in m.iter().enumerate().skip(t) {
            for (j, &x) in row.iter().enumerate().skip(t) {
                let v = vp(x);
                if v < e && best.is_none_or(|b| v < b.2) {
                    best = Some((i, j, v));
                }
            }
        }
        let Some((bi, bj, v)) = best else {
            // remaining block vanishes mod p^e: impossible for e > v_p(det)
            unreachable!("block vanished modulo p^e");
        };
        m.swap(t, bi);
        for row in m.iter_mut() {
            row.swap(t, bj);
        }
        if v > 0 {
            parts.push(v);
        }
        // pivot = p^v * u with u a unit mod q
        let pv = (p as i128).pow(v);
        let unit = m[t][t] / pv;
        let uinv = inverse_mod_i128(unit.rem_euclid(q), q);
        for i in t + 1..n {
            if m[i][t] == 0 {
                continue;
            }
            // m[i][t] divisible by p^v by minimality
            let f = mulmod_i128(m[i][t] / pv, uinv, q);
            for j in t..n {
                m[i][j] = (m[i][j] - mulmod_i128(f, m[t][j], q)).rem_euclid(q);
            }
        }
        for j in t + 1..n {
            m[t][j] = 0;
        }
    }
    Ok(PGroupType::new(p, parts))
}

fn mulmod_i128(a: i128, b: i128, q: i128) -> i128 {
    // q < 2^62 so the product of reduced values fits in i128
    (a.rem_euclid(q) * b.rem_euclid(q)).rem_euclid(q)
}

fn inverse_mod_i128(a: i128, q: i128) -> i128 {
    let (mut old_r, mut r) = (a, q);
    let (mut old_s, mut s) = (1i128, 0i128);
    while r != 0 {
        let quot = old_r / r;
        (old_r, r) = (r, old_r - quot * r);
        (old_s, s) = (s, old_s - quot * s);
    }
    debug_assert_eq!(old_r, 1, "not a unit");
    old_s.rem_euclid(q)
}

mod bigint_strings {
    use num_bigint::BigInt;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[BigInt], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|d| d.to_string()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<BigInt>, D::Error> {
        let raw: Vec<String> = Vec::deserialize(d)?;
        raw.iter()
            .map(|s| s.parse().map_err(serde::de::Error::custom))
            .collect()
    }
}
