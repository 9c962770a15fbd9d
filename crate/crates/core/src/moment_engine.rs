//! Exact moments `E #Sur(cok A_n, G)` through type vectors.
//!
//! For `q ∈ G^n` with type `n̄ = (n_a)`, `P(A_n q = 0)` depends only on `n̄` and is
//! evaluated exactly from convolution powers `n(ℓ)_a` and the matrix `M`.

use std::collections::HashMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::Serialize;

use crate::abelian_groups::{FiniteAbelianGroup, Subgroup, SubgroupLattice};
use crate::error::{Error, Result};
use crate::exact::{binomial, ln_abs, multinomial, pow_u64, rational_to_f64, ExactMatrix, RationalMatrix};

/// Guard on the number of type vectors summed by [`moment_exact`].
pub const TYPE_COUNT_LIMIT: u64 = 10_000_000;
/// Guard on `|G|^n` for [`moment_bruteforce`].
pub const BRUTEFORCE_LIMIT: u64 = 10_000_000;

/// Counts `(n_a)_{a ∈ G}` indexed by element index, with the row weight `k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TypeVector {
    group: FiniteAbelianGroup,
    counts: Vec<u64>,
    k: usize,
}

impl TypeVector {
    pub fn new(group: &FiniteAbelianGroup, counts: Vec<u64>, k: usize) -> Result<Self> {
        if counts.len() as u64 != group.order() {
            return Err(Error::invalid(format!(
                "type vector has {} entries, group order is {}",
                counts.len(),
                group.order()
            )));
        }
        if k < 3 {
            return Err(Error::invalid(format!("k = {k} must be >= 3")));
        }
        Ok(Self {
            group: group.clone(),
            counts,
            k,
        })
    }

    /// Type of an explicit vector `q ∈ G^n` (entries are element indices).
    pub fn of_vector(group: &FiniteAbelianGroup, q: &[usize], k: usize) -> Result<Self> {
        let mut counts = vec![0u64; group.order() as usize];
        for &a in q {
            if a >= counts.len() {
                return Err(Error::invalid(format!("element index {a} outside group")));
            }
            counts[a] += 1;
        }
        Self::new(group, counts, k)
    }

    /// The type of `q = 0`.
    pub fn zero(group: &FiniteAbelianGroup, n: u64, k: usize) -> Self {
        let mut counts = vec![0u64; group.order() as usize];
        counts[0] = n;
        Self {
            group: group.clone(),
            counts,
            k,
        }
    }

    pub fn group(&self) -> &FiniteAbelianGroup {
        &self.group
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `G_+ = {a : n_a > 0}`.
    pub fn support(&self) -> Vec<usize> {
        (0..self.counts.len()).filter(|&a| self.counts[a] > 0).collect()
    }

    /// Whether `G_+` generates `G`, i.e. `n̄ ∈ D_n`.
    pub fn is_generating(&self) -> bool {
        self.group.generates(&self.support())
    }
}

/// `n(ℓ)_a = Σ_{b_1+…+b_ℓ = -a} ∏ n_{b_i}`, by `ℓ - 1` convolution steps.
pub fn convolution_powers(tv: &TypeVector, ell: usize) -> Result<Vec<BigInt>> {
    if ell < 1 || ell > tv.k - 1 {
        return Err(Error::invalid(format!("ℓ = {ell} outside [1, k-1 = {}]", tv.k - 1)));
    }
    Ok(convolution_powers_unchecked(tv, ell))
}

fn convolution_powers_unchecked(tv: &TypeVector, ell: usize) -> Vec<BigInt> {
    let g = &tv.group;
    let size = tv.counts.len();
    let mut cur: Vec<BigInt> = (0..size).map(|a| BigInt::from(tv.counts[g.neg(a)])).collect();
    for _ in 1..ell {
        let mut next = vec![BigInt::zero(); size];
        for (a, slot) in next.iter_mut().enumerate() {
            for b in 0..size {
                if tv.counts[b] > 0 {
                    *slot += &cur[g.add(a, b)] * tv.counts[b];
                }
            }
        }
        cur = next;
    }
    cur
}

/// `M` on `G_+`, stored via `M = D^{1/2} C D^{1/2}` with rational `C`.
///
/// `D C` is an integer matrix with `det(D C) = det M`, so `det M` is an integer.
#[derive(Clone, Debug)]
pub struct MMatrix {
    pub support: Vec<usize>,
    pub c: RationalMatrix,
    pub dc: ExactMatrix,
    pub det: BigInt,
}

impl MMatrix {
    /// `M(a, a) = (k-1) n_a n(k-2)_{2a} + n(k-1)_a`.
    pub fn diagonal(&self) -> Vec<BigInt> {
        (0..self.support.len()).map(|i| self.dc.get(i, i).clone()).collect()
    }

    pub fn det_rational(&self) -> BigRational {
        BigRational::from_integer(self.det.clone())
    }
}

pub fn m_matrix(tv: &TypeVector) -> Result<MMatrix> {
    if tv.n() == 0 {
        return Err(Error::invalid("empty type vector"));
    }
    let n_km1 = convolution_powers_unchecked(tv, tv.k - 1);
    let n_km2 = convolution_powers_unchecked(tv, tv.k - 2);
    Ok(build_m(tv, &n_km1, &n_km2))
}

fn build_m(tv: &TypeVector, n_km1: &[BigInt], n_km2: &[BigInt]) -> MMatrix {
    let g = &tv.group;
    let support = tv.support();
    let s = support.len();
    let km1 = BigInt::from(tv.k as u64 - 1);
    let mut dc = ExactMatrix::zeros(s, s);
    let mut c = RationalMatrix::zeros(s, s);
    for (i, &a) in support.iter().enumerate() {
        let na = BigInt::from(tv.counts[a]);
        for (j, &b) in support.iter().enumerate() {
            let off = &km1 * &n_km2[g.add(a, b)];
            let cij = if i == j {
                BigRational::from_integer(off.clone()) + BigRational::new(n_km1[a].clone(), na.clone())
            } else {
                BigRational::from_integer(off.clone())
            };
            let dcij = if i == j { &na * &off + &n_km1[a] } else { &na * &off };
            dc.set(i, j, dcij);
            c.set(i, j, cij);
        }
    }
    let det = dc.determinant();
    MMatrix { support, c, dc, det }
}

/// Numerator `det M · ∏_{a ∈ G_+} n(k-1)_a^{n_a - 1}` of `P(A_n q = 0)` over the
/// common denominator `k n^{(k-1)n}`; zero when some `n(k-1)_a` vanishes on `G_+`.
fn prob_numerator(tv: &TypeVector) -> BigInt {
    let n_km1 = convolution_powers_unchecked(tv, tv.k - 1);
    let support = tv.support();
    if support.iter().any(|&a| n_km1[a].is_zero()) {
        return BigInt::zero();
    }
    let n_km2 = convolution_powers_unchecked(tv, tv.k - 2);
    let m = build_m(tv, &n_km1, &n_km2);
    let mut acc = m.det;
    for &a in &support {
        acc *= num_traits::pow::pow(n_km1[a].clone(), (tv.counts[a] - 1) as usize);
    }
    acc
}

fn prob_denominator(n: u64, k: usize) -> BigInt {
    BigInt::from(k as u64) * pow_u64(n, (k as u64 - 1) * n)
}

/// `P(A_n q = 0)` for any `q` of type `n̄`:
/// `(1/k) n^{-(k-1)n} det M ∏_{a ∈ G_+} n(k-1)_a^{n_a - 1}`.
pub fn prob_aq_zero(tv: &TypeVector) -> Result<BigRational> {
    let n = tv.n();
    if n == 0 {
        return Err(Error::invalid("empty type vector"));
    }
    Ok(BigRational::new(prob_numerator(tv), prob_denominator(n, tv.k)))
}

/// `E(n̄) = n!/∏ n_a! · P(A_n q = 0)`.
pub fn e_exact(tv: &TypeVector) -> Result<BigRational> {
    let p = prob_aq_zero(tv)?;
    Ok(p * BigRational::from_integer(multinomial(&tv.counts)))
}

/// Number of type vectors for `(|G|, n)`.
pub fn type_count(order: u64, n: u64) -> BigInt {
    binomial(n + order - 1, order - 1)
}

/// All compositions of `n` into `parts` nonnegative parts, lexicographic.
pub fn compositions(n: u64, parts: usize) -> Vec<Vec<u64>> {
    fn rec(remaining: u64, slots: usize, cur: &mut Vec<u64>, out: &mut Vec<Vec<u64>>) {
        if slots == 1 {
            cur.push(remaining);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for v in 0..=remaining {
            cur.push(v);
            rec(remaining - v, slots - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if parts > 0 {
        rec(n, parts, &mut Vec::new(), &mut out);
    }
    out
}

fn check_moment_args(n: u64, k: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("n must be >= 1"));
    }
    if k < 3 {
        return Err(Error::invalid(format!("k = {k} must be >= 3")));
    }
    Ok(())
}

/// `E #Sur(cok A_n, G) = Σ_{n̄ ∈ D_n} E(n̄)`, exact.
pub fn moment_exact(group: &FiniteAbelianGroup, n: u64, k: usize) -> Result<BigRational> {
    check_moment_args(n, k)?;
    let count = type_count(group.order(), n);
    if count > BigInt::from(TYPE_COUNT_LIMIT) {
        return Err(Error::size_limit("type vectors", count, TYPE_COUNT_LIMIT));
    }
    let types = compositions(n, group.order() as usize);
    let mut gen_cache: HashMap<Vec<usize>, bool> = HashMap::new();
    let mut kept = Vec::new();
    for counts in types {
        let support: Vec<usize> = (0..counts.len()).filter(|&a| counts[a] > 0).collect();
        let generating = *gen_cache.entry(support.clone()).or_insert_with(|| group.generates(&support));
        if generating {
            kept.push(counts);
        }
    }
    let numer = kept
        .par_iter()
        .map(|counts| {
            let tv = TypeVector {
                group: group.clone(),
                counts: counts.clone(),
                k,
            };
            multinomial(counts) * prob_numerator(&tv)
        })
        .reduce(BigInt::zero, |a, b| a + b);
    Ok(BigRational::new(numer, prob_denominator(n, k)))
}

/// `Σ_{q ∈ G^n generating} P(A_n q = 0)`, by direct enumeration of `q`.
pub fn moment_bruteforce(group: &FiniteAbelianGroup, n: u64, k: usize) -> Result<BigRational> {
    check_moment_args(n, k)?;
    let order = group.order();
    let total = (order as f64).powi(n as i32);
    if total > BRUTEFORCE_LIMIT as f64 {
        return Err(Error::size_limit("|G|^n", format!("{order}^{n}"), BRUTEFORCE_LIMIT));
    }
    let size = order as usize;
    let mut cache: HashMap<Vec<u64>, BigInt> = HashMap::new();
    let mut gen_cache: HashMap<u64, bool> = HashMap::new();
    let mut acc = BigInt::zero();
    let mut q = vec![0usize; n as usize];
    loop {
        let mut counts = vec![0u64; size];
        let mut mask = 0u64;
        for &a in &q {
            counts[a] += 1;
            mask |= 1 << a;
        }
        let generating = *gen_cache.entry(mask).or_insert_with(|| {
            let support: Vec<usize> = (0..size).filter(|&a| mask >> a & 1 == 1).collect();
            group.generates(&support)
        });
        if generating {
            let term = cache
                .entry(counts.clone())
                .or_insert_with(|| {
                    prob_numerator(&TypeVector {
                        group: group.clone(),
                        counts,
                        k,
                    })
                })
                .clone();
            acc += term;
        }
        // mixed-radix increment
        let mut i = 0;
        loop {
            if i == q.len() {
                return Ok(BigRational::new(acc, prob_denominator(n, k)));
            }
            q[i] += 1;
            if q[i] < size {
                break;
            }
            q[i] = 0;
            i += 1;
        }
    }
}

/// Probability measure on `G`, exact.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupMeasure {
    pub values: Vec<BigRational>,
}

impl GroupMeasure {
    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(rational_to_f64).collect()
    }

    pub fn total(&self) -> BigRational {
        self.values.iter().fold(BigRational::zero(), |a, b| a + b)
    }
}

/// `ν(a) = n_a / n` and `μ(a) = n(k-1)_a / n^{k-1}`.
pub fn measures(tv: &TypeVector) -> Result<(GroupMeasure, GroupMeasure)> {
    let n = tv.n();
    if n == 0 {
        return Err(Error::invalid("empty type vector"));
    }
    let nu = tv
        .counts
        .iter()
        .map(|&c| BigRational::new(c.into(), n.into()))
        .collect();
    let denom = pow_u64(n, tv.k as u64 - 1);
    let mu = convolution_powers_unchecked(tv, tv.k - 1)
        .into_iter()
        .map(|c| BigRational::new(c, denom.clone()))
        .collect();
    Ok((GroupMeasure { values: nu }, GroupMeasure { values: mu }))
}

#[derive(Default)]
struct Kahan {
    sum: f64,
    c: f64,
}

impl Kahan {
    fn add(&mut self, x: f64) {
        let y = x - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }
}

/// `D_KL(ν ‖ μ)` with `0 log(0/·) = 0` and `+∞` on a support violation.
pub fn kl_divergence(nu: &GroupMeasure, mu: &GroupMeasure) -> Result<f64> {
    if nu.values.len() != mu.values.len() {
        return Err(Error::invalid("measures live on different groups"));
    }
    let mut acc = Kahan::default();
    for (x, y) in nu.values.iter().zip(&mu.values) {
        if x.is_zero() {
            continue;
        }
        if y.is_zero() {
            return Ok(f64::INFINITY);
        }
        let ratio = rational_to_f64(x) / rational_to_f64(y);
        let ln_ratio = if ratio.is_finite() && ratio > 0.0 {
            ratio.ln()
        } else {
            crate::exact::ln_rational(&(x / y))
        };
        acc.add(rational_to_f64(x) * ln_ratio);
    }
    Ok(acc.sum)
}

/// Float version of [`kl_divergence`] on raw probability vectors.
pub fn kl_divergence_f64(nu: &[f64], mu: &[f64]) -> f64 {
    let mut acc = Kahan::default();
    for (&x, &y) in nu.iter().zip(mu) {
        if x == 0.0 {
            continue;
        }
        if y == 0.0 {
            return f64::INFINITY;
        }
        acc.add(x * (x / y).ln());
    }
    acc.sum
}

/// `ln α(n̄)` with `α = n!/∏ n_a! · exp(n Σ_{a ∈ G_+} ν(a) log ν(a))`.
pub fn ln_alpha(tv: &TypeVector) -> f64 {
    let n = tv.n() as f64;
    let mut acc = Kahan::default();
    acc.add(ln_abs(&multinomial(&tv.counts)));
    for &c in tv.counts.iter().filter(|&&c| c > 0) {
        acc.add(c as f64 * (c as f64 / n).ln());
    }
    acc.sum
}

/// `E(n̄) = α det M / (k ∏ n(k-1)_a) · exp(-n D_KL(ν ‖ μ))`, in floating point.
pub fn e_via_kl(tv: &TypeVector) -> Result<f64> {
    let n_km1 = convolution_powers_unchecked(tv, tv.k - 1);
    let support = tv.support();
    if support.iter().any(|&a| n_km1[a].is_zero()) {
        return Err(Error::UndefinedForm(
            "n(k-1)_a = 0 for some a in the support".into(),
        ));
    }
    let ln_a = ln_alpha(tv);
    if ln_a > 1e-12 {
        return Err(Error::UndefinedForm(format!("alpha = exp({ln_a}) exceeds 1")));
    }
    let (nu, mu) = measures(tv)?;
    let d = kl_divergence(&nu, &mu)?;
    let m = m_matrix(tv)?;
    if m.det.is_zero() {
        return Ok(0.0);
    }
    let mut ln_v = Kahan::default();
    ln_v.add(ln_a);
    ln_v.add(ln_abs(&m.det));
    ln_v.add(-(tv.k as f64).ln());
    for &a in &support {
        ln_v.add(-ln_abs(&n_km1[a]));
    }
    ln_v.add(-(tv.n() as f64) * d);
    Ok(ln_v.sum.exp())
}

/// `k^{|G|} n^{(k-1)|G|} exp(-n D_KL)`, an upper bound for `E(n̄)`.
pub fn e_upper_bound(tv: &TypeVector) -> Result<f64> {
    let (nu, mu) = measures(tv)?;
    let d = kl_divergence(&nu, &mu)?;
    let g = tv.counts.len() as f64;
    let n = tv.n() as f64;
    let k = tv.k as f64;
    Ok((g * k.ln() + (k - 1.0) * g * n.ln() - n * d).exp())
}

/// Explicit constants `C_n = 2 m⁴ |G|² k⁴`, `t_n = (k-1) C_n √(|G| n log n)`,
/// `r_n = (k-1)² C_n |G| log n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BallConstants {
    pub c_n: f64,
    pub t_n: f64,
    pub r_n: f64,
}

impl BallConstants {
    pub fn new(group: &FiniteAbelianGroup, n: u64, k: usize) -> Self {
        let m = group.exponent() as f64;
        let g = group.order() as f64;
        let k = k as f64;
        let c_n = 2.0 * m.powi(4) * g * g * k.powi(4);
        let log_n = (n as f64).ln();
        Self {
            c_n,
            t_n: (k - 1.0) * c_n * (g * n as f64 * log_n).sqrt(),
            r_n: (k - 1.0).powi(2) * c_n * g * log_n,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SubLabel {
    B1,
    B2,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub enum BallKind {
    GBall,
    HBall {
        subgroup: FiniteAbelianGroup,
        order: u64,
        sub: SubLabel,
    },
    Outside,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BallLabel {
    pub kind: BallKind,
    pub constants: BallConstants,
}

/// Integer range of `n_a` allowed by `|n_a/n - ν_H(a)| <= t/n`, clipped to `[0, n]`.
fn coordinate_range(n: u64, in_h: bool, h_order: u64, t: f64) -> Option<(i128, i128)> {
    let centre = if in_h { n as f64 / h_order as f64 } else { 0.0 };
    let lo = ((centre - t) - 1e-9).ceil().max(0.0) as i128;
    let hi = ((centre + t) + 1e-9).floor().min(n as f64) as i128;
    (lo <= hi).then_some((lo, hi))
}

fn outside_cap(r: f64) -> i128 {
    (r + 1e-9).floor() as i128
}

/// Ball membership of `n̄` for `H` under explicit constants.
pub fn in_ball_with(tv: &TypeVector, h: &Subgroup, constants: &BallConstants) -> bool {
    let n = tv.n();
    let mut outside = 0i128;
    for (a, &c) in tv.counts.iter().enumerate() {
        let Some((lo, hi)) = coordinate_range(n, h.contains(a), h.order(), constants.t_n) else {
            return false;
        };
        if (c as i128) < lo || (c as i128) > hi {
            return false;
        }
        if !h.contains(a) {
            outside += c as i128;
        }
    }
    outside <= outside_cap(constants.r_n)
}

/// `B1` iff some `g ∉ H` has `2g ∈ H` and `(g + H) ∩ G_+ ≠ ∅`.
pub fn sub_label(tv: &TypeVector, h: &Subgroup) -> SubLabel {
    let g = &tv.group;
    for x in 0..tv.counts.len() {
        if h.contains(x) || !h.contains(g.add(x, x)) {
            continue;
        }
        if h.elements().iter().any(|&y| tv.counts[g.add(x, y)] > 0) {
            return SubLabel::B1;
        }
    }
    SubLabel::B2
}

pub fn classify_ball_with(tv: &TypeVector, h: &Subgroup, constants: &BallConstants) -> BallLabel {
    let kind = if !in_ball_with(tv, h, constants) {
        BallKind::Outside
    } else if h.order() == tv.group.order() {
        BallKind::GBall
    } else {
        BallKind::HBall {
            subgroup: h.isomorphism_type(&tv.group),
            order: h.order(),
            sub: sub_label(tv, h),
        }
    };
    BallLabel {
        kind,
        constants: *constants,
    }
}

/// Label of `n̄` relative to `H` with the explicit constants at `(n, k)`.
pub fn classify_ball(tv: &TypeVector, h: &Subgroup) -> BallLabel {
    let constants = BallConstants::new(&tv.group, tv.n(), tv.k);
    classify_ball_with(tv, h, &constants)
}

/// Whether some type vector of size `n` lies in both balls, decided exactly.
pub fn balls_overlap_with(
    group: &FiniteAbelianGroup,
    n: u64,
    h1: &Subgroup,
    h2: &Subgroup,
    constants: &BallConstants,
) -> bool {
    // class totals: 0 = in both, 1 = only H1, 2 = only H2, 3 = in neither
    let mut lo = [0i128; 4];
    let mut hi = [0i128; 4];
    for a in 0..group.order() as usize {
        let (in1, in2) = (h1.contains(a), h2.contains(a));
        let (Some(r1), Some(r2)) = (
            coordinate_range(n, in1, h1.order(), constants.t_n),
            coordinate_range(n, in2, h2.order(), constants.t_n),
        ) else {
            return false;
        };
        let (l, u) = (r1.0.max(r2.0), r1.1.min(r2.1));
        if l > u {
            return false;
        }
        let class = match (in1, in2) {
            (true, true) => 0,
            (true, false) => 1,
            (false, true) => 2,
            (false, false) => 3,
        };
        lo[class] += l;
        hi[class] += u;
    }
    let cap = outside_cap(constants.r_n);
    let n = n as i128;
    // T1 + T3 <= cap (outside H2), T2 + T3 <= cap (outside H1)
    let t_lo = lo[3];
    let t_hi = hi[3]
        .min(cap - lo[1])
        .min(cap - lo[2])
        .min(n - lo[0] - lo[1] - lo[2]);
    if t_lo > t_hi {
        return false;
    }
    let hsum = |t: i128| hi[0] + hi[1].min(cap - t) + hi[2].min(cap - t) + t;
    let mut candidates = vec![t_lo, t_hi];
    for b in [cap - hi[1], cap - hi[2]] {
        for x in [b - 1, b, b + 1] {
            if (t_lo..=t_hi).contains(&x) {
                candidates.push(x);
            }
        }
    }
    candidates.into_iter().any(|t| hsum(t) >= n)
}

/// Pairs of distinct subgroups whose balls share a type vector of size `n`.
pub fn overlapping_pairs(group: &FiniteAbelianGroup, lattice: &SubgroupLattice, n: u64, k: usize) -> Vec<(usize, usize)> {
    let constants = BallConstants::new(group, n, k);
    let subs = &lattice.subgroups;
    let mut out = Vec::new();
    for i in 0..subs.len() {
        for j in i + 1..subs.len() {
            if balls_overlap_with(group, n, &subs[i], &subs[j], &constants) {
                out.push((i, j));
            }
        }
    }
    out
}

/// Smallest `n` (doubling, then bisection) at which no two balls overlap.
///
/// Overlap is not proven monotone in `n`; the value is an observation, and
/// `None` means no disjoint `n` was found up to `max_n`.
pub fn disjointness_threshold(group: &FiniteAbelianGroup, lattice: &SubgroupLattice, k: usize, max_n: u64) -> Option<u64> {
    let disjoint = |n: u64| overlapping_pairs(group, lattice, n, k).is_empty();
    let mut hi = 2u64;
    while !disjoint(hi) {
        if hi >= max_n {
            return None;
        }
        hi = hi.saturating_mul(2).min(max_n);
    }
    let mut lo = hi / 2;
    if disjoint(lo.max(1)) {
        return Some(lo.max(1));
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if disjoint(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

/// `Q = |G| (E + I)` of size `|G| - 1`, `E` the all-ones matrix.
pub fn q_matrix(group: &FiniteAbelianGroup) -> ExactMatrix {
    let s = group.order() as usize - 1;
    let g = group.order() as i64;
    let mut q = ExactMatrix::zeros(s, s);
    for i in 0..s {
        for j in 0..s {
            q.set(i, j, BigInt::from(if i == j { 2 * g } else { g }));
        }
    }
    q
}

/// `√|G|^{|G|} / √(2πn)^{|G|-1} · exp(-½ yᵀ Q y)`, with
/// `y = ((n_a)_{a ≠ 0} - (n/|G|) 𝟙) / √n`.
pub fn gaussian_approx_e(tv: &TypeVector) -> f64 {
    let g = tv.counts.len() as f64;
    let n = tv.n() as f64;
    let y: Vec<f64> = tv.counts[1..].iter().map(|&c| (c as f64 - n / g) / n.sqrt()).collect();
    let sum: f64 = y.iter().sum();
    let sq: f64 = y.iter().map(|v| v * v).sum();
    let quad = g * (sum * sum + sq);
    let ln = 0.5 * g * g.ln() - 0.5 * (g - 1.0) * (2.0 * std::f64::consts::PI * n).ln() - 0.5 * quad;
    ln.exp()
}

/// Finite-difference derivatives of `f = D_KL(ν ‖ μ_ν)` at the uniform measure.
#[derive(Clone, Debug, Serialize)]
pub struct HessianCheck {
    pub value_at_uniform: f64,
    pub gradient_norm: f64,
    pub hessian_deviation: f64,
    pub warning: Option<String>,
}

/// `μ = ` (k-1)-fold convolution of the reflection of `ν`.
fn mu_of(group: &FiniteAbelianGroup, nu: &[f64], k: usize) -> Vec<f64> {
    let size = nu.len();
    let mut cur: Vec<f64> = (0..size).map(|a| nu[group.neg(a)]).collect();
    for _ in 1..k - 1 {
        let mut next = vec![0.0; size];
        for (a, slot) in next.iter_mut().enumerate() {
            for b in 0..size {
                *slot += nu[b] * cur[group.add(a, b)];
            }
        }
        cur = next;
    }
    cur
}

fn kl_at(group: &FiniteAbelianGroup, x: &[f64], k: usize) -> f64 {
    let mut nu = Vec::with_capacity(x.len() + 1);
    nu.push(1.0 - x.iter().sum::<f64>());
    nu.extend_from_slice(x);
    let mu = mu_of(group, &nu, k);
    kl_divergence_f64(&nu, &mu)
}

/// Central differences with step `h` for the gradient and Hessian of `f` in the
/// coordinates `(ν(a))_{a ≠ 0}`; the Hessian is compared against `Q`.
pub fn kl_hessian_check(group: &FiniteAbelianGroup, k: usize, h: f64) -> Result<HessianCheck> {
    if k < 3 {
        return Err(Error::invalid(format!("k = {k} must be >= 3")));
    }
    if group.order() < 2 {
        return Err(Error::invalid("group must be nontrivial"));
    }
    if !(h > 0.0 && h < 0.1) {
        return Err(Error::invalid(format!("step {h} outside (0, 0.1)")));
    }
    let s = group.order() as usize - 1;
    let u = 1.0 / group.order() as f64;
    let base = vec![u; s];
    let f = |dx: &[(usize, f64)]| {
        let mut x = base.clone();
        for &(i, d) in dx {
            x[i] += d;
        }
        kl_at(group, &x, k)
    };
    let mut grad_sq = 0.0;
    for i in 0..s {
        let g = (f(&[(i, h)]) - f(&[(i, -h)])) / (2.0 * h);
        grad_sq += g * g;
    }
    let q = q_matrix(group);
    let f0 = f(&[]);
    let mut dev: f64 = 0.0;
    for i in 0..s {
        for j in 0..s {
            let hij = if i == j {
                (f(&[(i, h)]) - 2.0 * f0 + f(&[(i, -h)])) / (h * h)
            } else {
                (f(&[(i, h), (j, h)]) - f(&[(i, h), (j, -h)]) - f(&[(i, -h), (j, h)]) + f(&[(i, -h), (j, -h)]))
                    / (4.0 * h * h)
            };
            let qij = q.get(i, j).to_f64().expect("small entry");
            dev = dev.max((hij - qij).abs());
        }
    }
    let warning = (h < 1e-5).then(|| format!("step {h} is small enough for cancellation to dominate"));
    Ok(HessianCheck {
        value_at_uniform: f0,
        gradient_norm: grad_sq.sqrt(),
        hessian_deviation: dev,
        warning,
    })
}

/// `n(k-1)_0 = (n^{k-1} + (n-2ℓ)^{k-1}) / 2` and `n(k-1)_1 = (n^{k-1} - (n-2ℓ)^{k-1}) / 2`
/// for `G = Z/2`, `n̄ = (n - ℓ, ℓ)`.
pub fn z2_closed_forms(n: u64, k: usize, ell: u64) -> Result<(BigInt, BigInt)> {
    if k < 3 || k.is_multiple_of(2) {
        return Err(Error::invalid(format!("k = {k} must be odd and >= 3")));
    }
    if ell > n {
        return Err(Error::invalid(format!("ℓ = {ell} exceeds n = {n}")));
    }
    let e = k - 1;
    let full = num_traits::pow::pow(BigInt::from(n), e);
    let signed = num_traits::pow::pow(BigInt::from(n as i64 - 2 * ell as i64), e);
    let two = BigInt::from(2);
    Ok(((&full + &signed) / &two, (&full - &signed) / &two))
}

/// `(k-1)² / (4^{k-1} k)`.
pub fn z2_moment_lower_envelope(k: usize) -> Result<f64> {
    Ok(rational_to_f64(&z2_moment_lower_envelope_exact(k)?))
}

pub fn z2_moment_lower_envelope_exact(k: usize) -> Result<BigRational> {
    if k < 3 || k.is_multiple_of(2) {
        return Err(Error::invalid(format!("k = {k} must be odd and >= 3")));
    }
    let k64 = k as u64;
    Ok(BigRational::new(
        BigInt::from((k64 - 1) * (k64 - 1)),
        pow_u64(4, k64 - 1) * BigInt::from(k64),
    ))
}

/// `|E - 1|` as an exact rational, for comparing moments against the CL value.
pub fn distance_from_one(m: &BigRational) -> BigRational {
    (m - BigRational::one()).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abelian_groups::subgroup_lattice;

    fn z(n: u64) -> FiniteAbelianGroup {
        FiniteAbelianGroup::cyclic(n)
    }

    fn tv(g: &FiniteAbelianGroup, counts: &[u64], k: usize) -> TypeVector {
        TypeVector::new(g, counts.to_vec(), k).unwrap()
    }

    fn q(a: i64, b: i64) -> BigRational {
        BigRational::new(a.into(), b.into())
    }

    #[test]
    fn convolution_examples() {
        let t = tv(&z(2), &[2, 1], 3);
        assert_eq!(convolution_powers(&t, 2).unwrap(), vec![BigInt::from(5), BigInt::from(4)]);
        let t3 = tv(&z(3), &[4, 1, 2], 4);
        // n(1)_a = n_{-a}
        assert_eq!(
            convolution_powers(&t3, 1).unwrap(),
            vec![BigInt::from(4), BigInt::from(2), BigInt::from(1)]
        );
        assert!(convolution_powers(&t3, 4).is_err());
        assert!(convolution_powers(&t3, 0).is_err());
        let uni = tv(&z(3), &[2, 2, 2], 4);
        for c in convolution_powers(&uni, 3).unwrap() {
            assert_eq!(c, BigInt::from(72));
        }
    }

    #[test]
    fn m_matrix_examples() {
        let t = TypeVector::zero(&z(3), 5, 4);
        let m = m_matrix(&t).unwrap();
        assert_eq!(m.det, BigInt::from(4 * 125));
        // uniform: det = k n^{(k-1)|G|} / |G|^{|G|}
        let uni = tv(&z(2), &[3, 3], 3);
        let m = m_matrix(&uni).unwrap();
        assert_eq!(m.det_rational(), q(3 * 6i64.pow(4), 4));
        let n_km1 = convolution_powers(&uni, 2).unwrap();
        for (d, nk) in m.diagonal().iter().zip(&n_km1) {
            assert!(*d <= BigInt::from(3) * nk);
        }
    }

    #[test]
    fn probability_examples() {
        assert_eq!(prob_aq_zero(&tv(&z(2), &[1, 1], 3)).unwrap(), q(1, 4));
        assert_eq!(prob_aq_zero(&tv(&z(3), &[0, 3, 0], 3)).unwrap(), q(1, 1));
        for n in 1..20 {
            assert_eq!(prob_aq_zero(&TypeVector::zero(&z(2), n, 5)).unwrap(), q(1, 1));
        }
        assert_eq!(e_exact(&tv(&z(2), &[1, 1], 3)).unwrap(), q(1, 2));
    }

    #[test]
    fn moments_small() {
        assert_eq!(moment_exact(&FiniteAbelianGroup::trivial(), 7, 3).unwrap(), q(1, 1));
        assert_eq!(moment_exact(&z(2), 1, 3).unwrap(), q(0, 1));
        assert_eq!(moment_exact(&z(2), 2, 3).unwrap(), q(1, 2));
        assert_eq!(moment_exact(&z(2), 3, 3).unwrap(), q(64, 81));
        for n in 1..=6 {
            assert_eq!(moment_exact(&z(2), n, 3).unwrap(), moment_bruteforce(&z(2), n, 3).unwrap());
        }
        assert_eq!(moment_exact(&z(3), 3, 4).unwrap(), moment_bruteforce(&z(3), 3, 4).unwrap());
    }

    #[test]
    fn measure_examples() {
        let (nu, mu) = measures(&tv(&z(2), &[2, 1], 3)).unwrap();
        assert_eq!(mu.values, vec![q(5, 9), q(4, 9)]);
        assert_eq!(nu.total(), q(1, 1));
        assert_eq!(mu.total(), q(1, 1));
        assert_eq!(kl_divergence(&nu, &nu).unwrap(), 0.0);
        let a = GroupMeasure { values: vec![q(1, 1), q(0, 1)] };
        let b = GroupMeasure { values: vec![q(0, 1), q(1, 1)] };
        assert_eq!(kl_divergence(&a, &b).unwrap(), f64::INFINITY);
    }

    #[test]
    fn kl_form_matches_exact() {
        for counts in [[3u64, 7], [10, 10], [1, 19], [25, 25], [40, 10]] {
            let t = tv(&z(2), &counts, 3);
            let exact = rational_to_f64(&e_exact(&t).unwrap());
            let via = e_via_kl(&t).unwrap();
            assert!(((via - exact) / exact).abs() < 1e-9, "{counts:?}: {via} vs {exact}");
            assert!(exact <= e_upper_bound(&t).unwrap());
        }
        assert!((e_via_kl(&TypeVector::zero(&z(2), 10, 3)).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ball_labels() {
        let g = z(2);
        let lattice = subgroup_lattice(&g).unwrap();
        let top = &lattice.subgroups[0];
        let bottom = &lattice.subgroups[1];
        let uni = tv(&g, &[500, 500], 3);
        assert_eq!(classify_ball(&uni, top).kind, BallKind::GBall);
        let near_zero = tv(&g, &[999, 1], 3);
        match classify_ball(&near_zero, bottom).kind {
            BallKind::HBall { sub, order, .. } => {
                assert_eq!(sub, SubLabel::B1);
                assert_eq!(order, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
        // index 3: 2g ∈ {0} forces g = 0, so B1 is impossible
        let g3 = z(3);
        let l3 = subgroup_lattice(&g3).unwrap();
        let t = tv(&g3, &[998, 1, 1], 3);
        assert_eq!(sub_label(&t, &l3.subgroups[1]), SubLabel::B2);
    }

    #[test]
    fn overlap_matches_enumeration() {
        let g = FiniteAbelianGroup::from_divisors(&[2, 2]).unwrap();
        let lattice = subgroup_lattice(&g).unwrap();
        for n in [6u64, 10, 17] {
            for (t, r) in [(0.5, 0.5), (1.5, 2.0), (2.5, 1.0), (3.0, 4.0), (1.0, 6.0)] {
                let c = BallConstants { c_n: 0.0, t_n: t, r_n: r };
                let types = compositions(n, 4);
                for i in 0..lattice.subgroups.len() {
                    for j in i + 1..lattice.subgroups.len() {
                        let (h1, h2) = (&lattice.subgroups[i], &lattice.subgroups[j]);
                        let brute = types.iter().any(|counts| {
                            let x = tv(&g, counts, 3);
                            in_ball_with(&x, h1, &c) && in_ball_with(&x, h2, &c)
                        });
                        assert_eq!(brute, balls_overlap_with(&g, n, h1, h2, &c), "n={n} t={t} r={r} ({i},{j})");
                    }
                }
            }
        }
    }

    #[test]
    fn q_matrix_det() {
        assert_eq!(q_matrix(&z(2)).determinant(), BigInt::from(4));
        assert_eq!(q_matrix(&z(3)).determinant(), BigInt::from(27));
        let v = FiniteAbelianGroup::from_divisors(&[2, 2]).unwrap();
        assert_eq!(q_matrix(&v).determinant(), BigInt::from(256));
        let uni = tv(&z(2), &[50, 50], 3);
        let expected = 2.0 / (2.0 * std::f64::consts::PI * 100.0).sqrt();
        assert!((gaussian_approx_e(&uni) - expected).abs() < 1e-15);
    }

    #[test]
    fn hessian_z2() {
        let h = kl_hessian_check(&z(2), 3, 1e-4).unwrap();
        assert!(h.value_at_uniform.abs() < 1e-15);
        assert!(h.gradient_norm <= 1e-6);
        assert!(kl_hessian_check(&z(2), 3, 1e-7).unwrap().warning.is_some());
    }

    #[test]
    fn z2_forms() {
        assert_eq!(z2_closed_forms(9, 5, 0).unwrap(), (BigInt::from(9u64.pow(4)), BigInt::zero()));
        assert_eq!(z2_closed_forms(4, 3, 1).unwrap(), (BigInt::from(10), BigInt::from(6)));
        for ell in 0..=7 {
            let t = tv(&z(2), &[7 - ell, ell], 5);
            let (a, b) = z2_closed_forms(7, 5, ell).unwrap();
            assert_eq!(convolution_powers(&t, 4).unwrap(), vec![a, b]);
        }
        assert!(z2_closed_forms(4, 4, 1).is_err());
        assert_eq!(z2_moment_lower_envelope_exact(3).unwrap(), q(1, 12));
        assert_eq!(z2_moment_lower_envelope_exact(5).unwrap(), q(1, 80));
    }
}
