//! Volume sampling: draw `m` rows `Y` of a full-column-rank host `H` with
//! probability `det(H[Y])^2 / det(H^T H)`.
//!
//! The sampler is the sequential conditional scheme for the projection
//! kernel `K = H (H^T H)^{-1} H^T`. Every row keeps its residual squared norm
//! `r_x` measured in the `G^{-1}` metric (`G = H^T H`), i.e. the squared norm
//! of the whitened row `W h_x` (`W^T W = G^{-1}`) orthogonal to the span of the
//! whitened rows already chosen. Step `j` draws `x` with probability
//! `r_x / (m - j)` and downdates every residual by the squared projection onto
//! the new orthonormal direction. Rows are sparse, so a downdate costs the
//! row's support size.
//!
//! Identical rows may be pooled into one item with a multiplicity `weight`;
//! `B_n` uses this to collapse the `n^k` tuples onto `binom(n+k-1, k)` multisets.

use num_bigint::{BigInt, RandBigInt};
use num_integer::Integer as _;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{binomial_f64, multinomial, rational_to_f64, ExactMatrix, RationalMatrix};
use crate::structured_matrix::{
    build_boundary_matrix, gram_closed_form, gram_coefficients, FaceIndex, RowIndex,
};

/// Largest item count for which the exact-rational path is allowed.
pub const EXACT_ITEM_LIMIT: usize = 100_000;
/// Guard on `binom(N, m)` for [`enumerate_distribution`].
pub const ENUMERATION_LIMIT: f64 = 1e6;
const MAX_DRAW_ATTEMPTS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PrecisionMode {
    #[default]
    Float64,
    ExactRational,
}

impl std::str::FromStr for PrecisionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "float64" | "float" | "f64" => Ok(PrecisionMode::Float64),
            "exact" | "exact-rational" | "rational" => Ok(PrecisionMode::ExactRational),
            other => Err(Error::invalid(format!("unknown precision mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub seed: u64,
    pub precision_mode: PrecisionMode,
    pub reorthogonalization_tolerance: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            precision_mode: PrecisionMode::Float64,
            reorthogonalization_tolerance: 1e-9,
        }
    }
}

impl SamplerConfig {
    pub fn new(seed: u64, precision_mode: PrecisionMode, tolerance: f64) -> Result<Self> {
        let cfg = Self {
            seed,
            precision_mode,
            reorthogonalization_tolerance: tolerance,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.reorthogonalization_tolerance;
        if !(t > 0.0 && t <= 1e-6) {
            return Err(Error::invalid(format!("tolerance {t} outside (0, 1e-6]")));
        }
        Ok(())
    }
}

/// A host matrix presented as a list of sparse integer rows ("items").
pub trait RowFamily: Sync {
    fn item_count(&self) -> usize;
    fn cols(&self) -> usize;
    /// Nonzero entries `(column, value)` of the item's row, columns 0-based.
    fn row(&self, item: usize) -> &[(usize, i64)];
    /// Number of identical host rows this item stands for.
    fn weight(&self, _item: usize) -> u64 {
        1
    }

    /// `G = H^T H` counting each item `weight` times.
    fn gram(&self) -> ExactMatrix {
        let m = self.cols();
        let mut g = ExactMatrix::zeros(m, m);
        for x in 0..self.item_count() {
            let w = BigInt::from(self.weight(x));
            let row = self.row(x);
            for &(i, a) in row {
                for &(j, b) in row {
                    *g.get_mut(i, j) += &w * BigInt::from(a * b);
                }
            }
        }
        g
    }
}

/// Flat storage for sparse rows.
#[derive(Clone, Debug, Default)]
struct SparseRows {
    offsets: Vec<usize>,
    entries: Vec<(usize, i64)>,
}

impl SparseRows {
    fn push(&mut self, row: impl IntoIterator<Item = (usize, i64)>) {
        if self.offsets.is_empty() {
            self.offsets.push(0);
        }
        self.entries.extend(row);
        self.offsets.push(self.entries.len());
    }

    fn len(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    fn get(&self, i: usize) -> &[(usize, i64)] {
        &self.entries[self.offsets[i]..self.offsets[i + 1]]
    }
}

/// `B_n` with tuples pooled by multiset.
#[derive(Clone, Debug)]
pub struct BnFamily {
    n: usize,
    k: usize,
    multisets: Vec<Vec<usize>>,
    weights: Vec<u64>,
    rows: SparseRows,
}

impl BnFamily {
    pub fn new(n: usize, k: usize) -> Result<Self> {
        if n == 0 || k < 3 {
            return Err(Error::invalid(format!("need n >= 1 and k >= 3, got n = {n}, k = {k}")));
        }
        let mut multisets = Vec::new();
        let mut weights = Vec::new();
        let mut rows = SparseRows::default();
        let mut cur = vec![1usize; k];
        loop {
            let mut counts: Vec<(usize, i64)> = Vec::new();
            for &b in &cur {
                match counts.last_mut() {
                    Some((c, m)) if *c == b - 1 => *m += 1,
                    _ => counts.push((b - 1, 1)),
                }
            }
            let parts: Vec<u64> = counts.iter().map(|&(_, m)| m as u64).collect();
            weights.push(multinomial(&parts).to_u64().expect("tuple count fits u64"));
            rows.push(counts);
            multisets.push(cur.clone());
            // next nondecreasing tuple
            let Some(pos) = (0..k).rev().find(|&p| cur[p] < n) else {
                break;
            };
            let v = cur[pos] + 1;
            for c in &mut cur[pos..] {
                *c = v;
            }
        }
        Ok(Self {
            n,
            k,
            multisets,
            weights,
            rows,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn multiset(&self, item: usize) -> &[usize] {
        &self.multisets[item]
    }

    /// A uniformly random tuple with the item's multiset of entries.
    pub fn expand<R: Rng + ?Sized>(&self, item: usize, rng: &mut R) -> RowIndex {
        let mut t = self.multisets[item].clone();
        t.shuffle(rng);
        RowIndex::new(self.n, t).expect("multiset entries lie in [n]")
    }

    /// Item index holding the multiset of `b`.
    pub fn item_of(&self, b: &RowIndex) -> Option<usize> {
        let mut key = b.entries().to_vec();
        key.sort_unstable();
        self.multisets.binary_search(&key).ok()
    }
}

impl RowFamily for BnFamily {
    fn item_count(&self) -> usize {
        self.multisets.len()
    }

    fn cols(&self) -> usize {
        self.n
    }

    fn row(&self, item: usize) -> &[(usize, i64)] {
        self.rows.get(item)
    }

    fn weight(&self, item: usize) -> u64 {
        self.weights[item]
    }

    fn gram(&self) -> ExactMatrix {
        gram_closed_form(self.n, self.k).expect("validated at construction")
    }
}

/// Rows of an explicit integer matrix, one item per row.
#[derive(Clone, Debug)]
pub struct MatrixFamily {
    cols: usize,
    rows: SparseRows,
}

impl MatrixFamily {
    pub fn new(m: &ExactMatrix) -> Result<Self> {
        let mut rows = SparseRows::default();
        for i in 0..m.rows() {
            let mut r = Vec::new();
            for j in 0..m.cols() {
                let v = m.get(i, j);
                if !v.is_zero() {
                    let v = v
                        .to_i64()
                        .ok_or_else(|| Error::invalid("host entries must fit in i64"))?;
                    r.push((j, v));
                }
            }
            rows.push(r);
        }
        if m.rows() == 0 {
            rows.offsets.push(0);
        }
        Ok(Self { cols: m.cols(), rows })
    }
}

impl RowFamily for MatrixFamily {
    fn item_count(&self) -> usize {
        self.rows.len()
    }

    fn cols(&self) -> usize {
        self.cols
    }

    fn row(&self, item: usize) -> &[(usize, i64)] {
        self.rows.get(item)
    }
}

/// A set of row identifiers of size `m` (sorted).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RowSubset<T> {
    items: Vec<T>,
}

impl<T: Ord> RowSubset<T> {
    pub fn new(mut items: Vec<T>) -> Self {
        items.sort();
        Self { items }
    }
}

impl<T> RowSubset<T> {
    pub fn items(&self) -> &[T] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn into_items(self) -> Vec<T> {
        self.items
    }
}

struct FloatKernel {
    /// `W` row-major (lower triangular), `W^T W = G^{-1}` up to a global scale.
    w: Vec<f64>,
    /// Initial residuals `h_x^T G^{-1} h_x` (leverages).
    leverage: Vec<f64>,
}

struct ExactKernel {
    ginv: RationalMatrix,
    leverage: Vec<BigRational>,
}

enum DrawOutcome {
    Done(Vec<usize>),
    Collapsed,
}

/// Reusable sampler bound to one host.
pub struct VolumeSampler<'a, F: RowFamily> {
    family: &'a F,
    config: SamplerConfig,
    float: Option<FloatKernel>,
    exact: Option<ExactKernel>,
}

impl<'a, F: RowFamily> VolumeSampler<'a, F> {
    pub fn new(family: &'a F, config: SamplerConfig) -> Result<Self> {
        config.validate()?;
        let m = family.cols();
        if m == 0 {
            return Err(Error::DegenerateHost("host has no columns".into()));
        }
        let gram = family.gram();
        let (float, exact) = match config.precision_mode {
            PrecisionMode::Float64 => (Some(float_kernel(family, &gram)?), None),
            PrecisionMode::ExactRational => {
                if family.item_count() > EXACT_ITEM_LIMIT {
                    return Err(Error::size_limit(
                        "item count for exact sampling",
                        family.item_count(),
                        EXACT_ITEM_LIMIT,
                    ));
                }
                (None, Some(exact_kernel(family, &gram)?))
            }
        };
        Ok(Self {
            family,
            config,
            float,
            exact,
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    /// Leverage `K(x,x)` of every item in float precision.
    pub fn leverages(&self) -> Vec<f64> {
        match (&self.float, &self.exact) {
            (Some(f), _) => f.leverage.clone(),
            (_, Some(e)) => e.leverage.iter().map(rational_to_f64).collect(),
            _ => unreachable!(),
        }
    }

    /// Draws one subset of `m` item indices.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<usize>> {
        for _ in 0..MAX_DRAW_ATTEMPTS {
            let outcome = match (&self.float, &self.exact) {
                (Some(k), _) => self.draw_float(k, rng),
                (_, Some(k)) => self.draw_exact(k, rng),
                _ => unreachable!(),
            };
            if let DrawOutcome::Done(mut items) = outcome {
                items.sort_unstable();
                return Ok(items);
            }
        }
        Err(Error::DegenerateHost(format!(
            "residual mass vanished before {} picks in {MAX_DRAW_ATTEMPTS} attempts",
            self.family.cols()
        )))
    }

    fn draw_float<R: Rng + ?Sized>(&self, kernel: &FloatKernel, rng: &mut R) -> DrawOutcome {
        let fam = self.family;
        let m = fam.cols();
        let tol = self.config.reorthogonalization_tolerance;
        let items = fam.item_count();
        let weights: Vec<f64> = (0..items).map(|x| fam.weight(x) as f64).collect();
        let mut resid = kernel.leverage.clone();
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut duals: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut chosen = Vec::with_capacity(m);

        let recompute = |resid: &mut [f64], duals: &[Vec<f64>], chosen: &[usize]| {
            for (x, r) in resid.iter_mut().enumerate() {
                let mut v = kernel.leverage[x];
                for f in duals {
                    let d = sparse_dot(fam.row(x), f);
                    v -= d * d;
                }
                *r = if v > tol { v } else { 0.0 };
            }
            for &c in chosen {
                resid[c] = 0.0;
            }
        };

        for step in 0..m {
            let expected = (m - step) as f64;
            let mut total = weighted_sum(&resid, &weights);
            if (total - expected).abs() > 1e-6 * expected || total < tol {
                recompute(&mut resid, &duals, &chosen);
                total = weighted_sum(&resid, &weights);
                if total < tol {
                    return DrawOutcome::Collapsed;
                }
            }
            let (pick, direction) = loop {
                let x = pick_weighted(&resid, &weights, total, rng);
                let mut v = whiten(&kernel.w, m, fam.row(x));
                // two Gram–Schmidt passes
                for _ in 0..2 {
                    for e in &basis {
                        let c = dot(&v, e);
                        for (vi, ei) in v.iter_mut().zip(e) {
                            *vi -= c * ei;
                        }
                    }
                }
                let rho = dot(&v, &v);
                if rho > tol {
                    let s = rho.sqrt();
                    v.iter_mut().for_each(|vi| *vi /= s);
                    break (x, v);
                }
                resid[x] = 0.0;
                total = weighted_sum(&resid, &weights);
                if total < tol {
                    return DrawOutcome::Collapsed;
                }
            };
            let dual = whiten_transpose(&kernel.w, m, &direction);
            for (x, r) in resid.iter_mut().enumerate() {
                if *r == 0.0 {
                    continue;
                }
                let d = sparse_dot(fam.row(x), &dual);
                let v = *r - d * d;
                *r = if v > tol { v } else { 0.0 };
            }
            resid[pick] = 0.0;
            basis.push(direction);
            duals.push(dual);
            chosen.push(pick);
        }
        DrawOutcome::Done(chosen)
    }

    fn draw_exact<R: Rng + ?Sized>(&self, kernel: &ExactKernel, rng: &mut R) -> DrawOutcome {
        let fam = self.family;
        let m = fam.cols();
        let items = fam.item_count();
        let mut resid = kernel.leverage.clone();
        let mut basis: Vec<(Vec<BigRational>, Vec<BigRational>, BigRational)> = Vec::new();
        let mut chosen = Vec::with_capacity(m);
        for _ in 0..m {
            // exact draw: scale all masses to a common denominator
            let masses: Vec<BigRational> = (0..items)
                .map(|x| &resid[x] * BigRational::from_integer(BigInt::from(fam.weight(x))))
                .collect();
            let lcm = masses
                .iter()
                .filter(|q| !q.is_zero())
                .fold(BigInt::one(), |acc, q| acc.lcm(q.denom()));
            let ints: Vec<BigInt> = masses
                .iter()
                .map(|q| (q * BigRational::from_integer(lcm.clone())).to_integer())
                .collect();
            let total: BigInt = ints.iter().sum();
            if !total.is_positive() {
                return DrawOutcome::Collapsed;
            }
            let u = rng.gen_bigint_range(&BigInt::zero(), &total);
            let mut acc = BigInt::zero();
            let mut pick = items;
            for (x, w) in ints.iter().enumerate() {
                acc += w;
                if u < acc {
                    pick = x;
                    break;
                }
            }
            let row_y = fam.row(pick);
            // u_new = h_y - Σ_i <h_y, u_i>/<u_i,u_i> u_i in the G^{-1} metric
            let mut u_new = vec![BigRational::zero(); m];
            for &(j, v) in row_y {
                u_new[j] = BigRational::from_integer(BigInt::from(v));
            }
            for (u_i, g_i, nu_i) in &basis {
                let c = sparse_dot_rational(row_y, g_i) / nu_i;
                for (a, b) in u_new.iter_mut().zip(u_i) {
                    *a -= &c * b;
                }
            }
            let g_new: Vec<BigRational> = (0..m)
                .map(|i| {
                    (0..m)
                        .map(|j| kernel.ginv.get(i, j) * &u_new[j])
                        .fold(BigRational::zero(), |a, b| a + b)
                })
                .collect();
            let nu: BigRational = u_new
                .iter()
                .zip(&g_new)
                .map(|(a, b)| a * b)
                .fold(BigRational::zero(), |a, b| a + b);
            if !nu.is_positive() {
                return DrawOutcome::Collapsed;
            }
            for (x, r) in resid.iter_mut().enumerate() {
                if r.is_zero() {
                    continue;
                }
                let c = sparse_dot_rational(fam.row(x), &g_new);
                *r -= &c * &c / &nu;
            }
            resid[pick] = BigRational::zero();
            basis.push((u_new, g_new, nu));
            chosen.push(pick);
        }
        DrawOutcome::Done(chosen)
    }
}

fn float_kernel<F: RowFamily>(family: &F, gram: &ExactMatrix) -> Result<FloatKernel> {
    let m = family.cols();
    let scale = (0..m)
        .map(|i| gram.get(i, i).clone())
        .max()
        .filter(|s| s.is_positive())
        .ok_or_else(|| Error::DegenerateHost("zero Gram diagonal".into()))?;
    let sf = BigRational::from_integer(scale.clone());
    let mut g = vec![0.0f64; m * m];
    for i in 0..m {
        for j in 0..m {
            g[i * m + j] = rational_to_f64(&(BigRational::from_integer(gram.get(i, j).clone()) / &sf));
        }
    }
    // Cholesky G/s = L L^T
    let mut l = vec![0.0f64; m * m];
    for j in 0..m {
        let mut d = g[j * m + j];
        for p in 0..j {
            d -= l[j * m + p] * l[j * m + p];
        }
        if d <= 1e-12 {
            return Err(Error::DegenerateHost("host Gram matrix is not positive definite".into()));
        }
        let d = d.sqrt();
        l[j * m + j] = d;
        for i in j + 1..m {
            let mut s = g[i * m + j];
            for p in 0..j {
                s -= l[i * m + p] * l[j * m + p];
            }
            l[i * m + j] = s / d;
        }
    }
    // W = s^{-1/2} L^{-1}
    let mut w = vec![0.0f64; m * m];
    for c in 0..m {
        for i in 0..m {
            let mut s = if i == c { 1.0 } else { 0.0 };
            for p in 0..i {
                s -= l[i * m + p] * w[p * m + c];
            }
            w[i * m + c] = s / l[i * m + i];
        }
    }
    let root = rational_to_f64(&sf).sqrt();
    w.iter_mut().for_each(|v| *v /= root);
    let leverage = (0..family.item_count())
        .map(|x| {
            let v = whiten(&w, m, family.row(x));
            dot(&v, &v)
        })
        .collect();
    Ok(FloatKernel { w, leverage })
}

fn exact_kernel<F: RowFamily>(family: &F, gram: &ExactMatrix) -> Result<ExactKernel> {
    let ginv = RationalMatrix::from_integer(gram)
        .inverse()
        .ok_or_else(|| Error::DegenerateHost("host Gram matrix is singular".into()))?;
    let leverage = (0..family.item_count())
        .map(|x| quadratic_form(&ginv, family.row(x)))
        .collect();
    Ok(ExactKernel { ginv, leverage })
}

fn quadratic_form(a: &RationalMatrix, row: &[(usize, i64)]) -> BigRational {
    let mut s = BigRational::zero();
    for &(i, u) in row {
        for &(j, v) in row {
            s += a.get(i, j) * BigRational::from_integer(BigInt::from(u * v));
        }
    }
    s
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn sparse_dot(row: &[(usize, i64)], v: &[f64]) -> f64 {
    row.iter().map(|&(j, a)| a as f64 * v[j]).sum()
}

fn sparse_dot_rational(row: &[(usize, i64)], v: &[BigRational]) -> BigRational {
    row.iter()
        .map(|&(j, a)| &v[j] * BigRational::from_integer(BigInt::from(a)))
        .fold(BigRational::zero(), |acc, x| acc + x)
}

/// `W h` for a sparse `h`.
fn whiten(w: &[f64], m: usize, row: &[(usize, i64)]) -> Vec<f64> {
    let mut out = vec![0.0; m];
    for (i, o) in out.iter_mut().enumerate() {
        *o = row.iter().map(|&(j, a)| w[i * m + j] * a as f64).sum();
    }
    out
}

/// `W^T e` for a dense `e`.
fn whiten_transpose(w: &[f64], m: usize, e: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m];
    for (i, &ei) in e.iter().enumerate() {
        if ei == 0.0 {
            continue;
        }
        for (j, o) in out.iter_mut().enumerate().take(i + 1) {
            *o += w[i * m + j] * ei;
        }
    }
    out
}

fn weighted_sum(resid: &[f64], weights: &[f64]) -> f64 {
    // Kahan-compensated; the total is compared against the exact trace m - j.
    let mut sum = 0.0;
    let mut comp = 0.0;
    for (r, w) in resid.iter().zip(weights) {
        let y = r * w - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum
}

fn pick_weighted<R: Rng + ?Sized>(resid: &[f64], weights: &[f64], total: f64, rng: &mut R) -> usize {
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (x, (r, w)) in resid.iter().zip(weights).enumerate() {
        if *r == 0.0 {
            continue;
        }
        acc += r * w;
        last = x;
        if u < acc {
            return x;
        }
    }
    last
}

/// One-shot draw of item indices from `family`.
pub fn sample_volume<F: RowFamily, R: Rng + ?Sized>(
    family: &F,
    config: &SamplerConfig,
    rng: &mut R,
) -> Result<RowSubset<usize>> {
    let sampler = VolumeSampler::new(family, config.clone())?;
    Ok(RowSubset::new(sampler.sample(rng)?))
}

/// A subset of host rows with its exact probability.
pub type WeightedSubset = (Vec<usize>, BigRational);

/// Every `m`-subset of the rows of `host` with nonzero probability
/// `det(host[Y])^2 / det(host^T host)`.
pub fn enumerate_distribution(host: &ExactMatrix, m: usize) -> Result<Vec<WeightedSubset>> {
    let rows = host.rows();
    if m != host.cols() {
        return Err(Error::invalid(format!("m = {m} differs from column count {}", host.cols())));
    }
    let count = binomial_f64(rows as u64, m as u64);
    if count > ENUMERATION_LIMIT {
        return Err(Error::size_limit("binom(N, m)", count, ENUMERATION_LIMIT));
    }
    let norm = host.gram().determinant();
    if norm.is_zero() {
        return Err(Error::DegenerateHost("host is rank deficient".into()));
    }
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..m).collect();
    loop {
        let d = host.select_rows(&idx).determinant();
        if !d.is_zero() {
            out.push((idx.clone(), BigRational::new(&d * &d, norm.clone())));
        }
        // next combination
        let Some(pos) = (0..m).rev().find(|&p| idx[p] < rows - m + p) else {
            break;
        };
        idx[pos] += 1;
        for p in pos + 1..m {
            idx[p] = idx[p - 1] + 1;
        }
        if m == 0 {
            break;
        }
    }
    Ok(out)
}

/// `K(x,x) = b_x^T (αJ + βI)^{-1} b_x = P(x ∈ X_n)` in closed form.
pub fn marginal_leverage(x: &RowIndex, n: usize, k: usize) -> Result<BigRational> {
    if x.n() != n || x.k() != k {
        return Err(Error::invalid("row does not belong to [n]^k"));
    }
    let (alpha, beta) = gram_coefficients(n, k);
    let b = crate::structured_matrix::build_row(x);
    let sq: i64 = b.multiplicities().values().map(|&m| i64::from(m) * i64::from(m)).sum();
    let sum = k as i64;
    // (1/β)(|b|^2 - α (1·b)^2 / (β + nα))
    let denom = &beta + BigInt::from(n as u64) * &alpha;
    let inner = BigRational::from_integer(BigInt::from(sq))
        - BigRational::new(alpha * BigInt::from(sum * sum), denom);
    Ok(inner / BigRational::from_integer(beta))
}

/// Cached sampler for `A_n = B_n[X_n]`.
pub struct BnSampler {
    family: BnFamily,
    config: SamplerConfig,
}

impl BnSampler {
    pub fn new(n: usize, k: usize, config: SamplerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            family: BnFamily::new(n, k)?,
            config,
        })
    }

    pub fn family(&self) -> &BnFamily {
        &self.family
    }

    /// Draws `X_n` and returns it with `A_n` (rows in lexicographic order of `X_n`).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(RowSubset<RowIndex>, ExactMatrix)> {
        let sampler = VolumeSampler::new(&self.family, self.config.clone())?;
        self.sample_with(&sampler, rng)
    }

    /// Repeated draws reuse one factorization of the Gram matrix.
    pub fn sampler(&self) -> Result<VolumeSampler<'_, BnFamily>> {
        VolumeSampler::new(&self.family, self.config.clone())
    }

    pub fn sample_with<R: Rng + ?Sized>(
        &self,
        sampler: &VolumeSampler<'_, BnFamily>,
        rng: &mut R,
    ) -> Result<(RowSubset<RowIndex>, ExactMatrix)> {
        let items = sampler.sample(rng)?;
        let tuples: Vec<RowIndex> = items.iter().map(|&x| self.family.expand(x, rng)).collect();
        let matrix = crate::structured_matrix::submatrix(&tuples, self.family.n(), self.family.k())?;
        Ok((RowSubset::new(tuples), matrix))
    }
}

/// Draws `A_n` with the default float sampler.
pub fn sample_a_n<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<ExactMatrix> {
    Ok(BnSampler::new(n, k, SamplerConfig::default())?.sample(rng)?.1)
}

/// Cached sampler for 2-dimensional hypertrees via the rows of `I_{n,2}^T`.
pub struct HypertreeSampler {
    n: usize,
    faces: Vec<FaceIndex>,
    host: ExactMatrix,
    family: MatrixFamily,
    config: SamplerConfig,
}

impl HypertreeSampler {
    pub fn new(n: usize, config: SamplerConfig) -> Result<Self> {
        if n < 4 {
            return Err(Error::invalid(format!("hypertree sampling needs n >= 4, got {n}")));
        }
        config.validate()?;
        let b = build_boundary_matrix(n, 2)?;
        let host = b.matrix.transpose();
        let family = MatrixFamily::new(&host)?;
        Ok(Self {
            n,
            faces: b.col_faces,
            host,
            family,
            config,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `I_{n,2}^T`, rows labelled by [`Self::faces`].
    pub fn host(&self) -> &ExactMatrix {
        &self.host
    }

    pub fn faces(&self) -> &[FaceIndex] {
        &self.faces
    }

    pub fn sampler(&self) -> Result<VolumeSampler<'_, MatrixFamily>> {
        VolumeSampler::new(&self.family, self.config.clone())
    }

    pub fn sample_with<R: Rng + ?Sized>(
        &self,
        sampler: &VolumeSampler<'_, MatrixFamily>,
        rng: &mut R,
    ) -> Result<(Vec<usize>, RowSubset<FaceIndex>, ExactMatrix)> {
        let items = sampler.sample(rng)?;
        let faces = items.iter().map(|&i| self.faces[i].clone()).collect();
        let matrix = self.host.select_rows(&items);
        Ok((items, RowSubset::new(faces), matrix))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(RowSubset<FaceIndex>, ExactMatrix)> {
        let sampler = self.sampler()?;
        let (_, faces, m) = self.sample_with(&sampler, rng)?;
        Ok((faces, m))
    }
}

/// Draws a random 2-hypertree `C` and returns its faces with `I_{n,2}^T[C]`.
pub fn sample_hypertree<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<(RowSubset<FaceIndex>, ExactMatrix)> {
    HypertreeSampler::new(n, SamplerConfig::default())?.sample(rng)
}

/// Per-trial generator: ChaCha8 keyed by `seed`, stream `trial_id`.
pub fn trial_rng(seed: u64, trial_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial_id);
    rng
}

/// Exact probability of a tuple subset under the `B_n` measure.
pub fn bn_subset_probability(y: &[RowIndex], n: usize, k: usize) -> Result<BigRational> {
    let d = crate::structured_matrix::submatrix(y, n, k)?.determinant();
    Ok(BigRational::new(&d * &d, crate::structured_matrix::gram_det(n, k)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn r(n: usize, e: &[usize]) -> RowIndex {
        RowIndex::new(n, e.to_vec()).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(SamplerConfig::new(1, PrecisionMode::Float64, 1e-9).is_ok());
        assert!(SamplerConfig::new(1, PrecisionMode::Float64, 1e-3).is_err());
        assert!(SamplerConfig::new(1, PrecisionMode::Float64, 0.0).is_err());
    }

    #[test]
    fn bn_family_pools_tuples() {
        let f = BnFamily::new(3, 3).unwrap();
        assert_eq!(f.item_count(), 10);
        let total: u64 = (0..f.item_count()).map(|x| f.weight(x)).sum();
        assert_eq!(total, 27);
        assert_eq!(f.gram(), MatrixFamilyLike::explicit_gram(3, 3));
    }

    struct MatrixFamilyLike;
    impl MatrixFamilyLike {
        fn explicit_gram(n: usize, k: usize) -> ExactMatrix {
            let rows: Vec<Vec<i64>> = crate::structured_matrix::all_row_indices(n, k)
                .map(|b| crate::structured_matrix::build_row(&b).to_dense())
                .collect();
            ExactMatrix::from_rows(&rows).gram()
        }
    }

    #[test]
    fn n1_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let m = sample_a_n(1, 3, &mut rng).unwrap();
            assert_eq!(m, ExactMatrix::from_i64(1, 1, &[3]));
        }
    }

    #[test]
    fn leverage_closed_form() {
        assert_eq!(
            marginal_leverage(&r(2, &[1, 1, 1]), 2, 3).unwrap(),
            BigRational::new(1.into(), 2.into())
        );
        assert_eq!(
            marginal_leverage(&r(2, &[1, 1, 2]), 2, 3).unwrap(),
            BigRational::new(1.into(), 6.into())
        );
        let total = crate::structured_matrix::all_row_indices(3, 4)
            .map(|b| marginal_leverage(&b, 3, 4).unwrap())
            .fold(BigRational::zero(), |a, b| a + b);
        assert_eq!(total, BigRational::from_integer(3.into()));
    }

    #[test]
    fn float_leverages_match_closed_form() {
        let f = BnFamily::new(4, 3).unwrap();
        let s = VolumeSampler::new(&f, SamplerConfig::default()).unwrap();
        let lev = s.leverages();
        for x in 0..f.item_count() {
            let b = RowIndex::new(4, f.multiset(x).to_vec()).unwrap();
            let exact = rational_to_f64(&marginal_leverage(&b, 4, 3).unwrap());
            assert!((lev[x] - exact).abs() < 1e-12, "{x}: {} vs {exact}", lev[x]);
        }
    }

    #[test]
    fn enumeration_n2() {
        let rows: Vec<Vec<i64>> = crate::structured_matrix::all_row_indices(2, 3)
            .map(|b| crate::structured_matrix::build_row(&b).to_dense())
            .collect();
        let host = ExactMatrix::from_rows(&rows);
        let dist = enumerate_distribution(&host, 2).unwrap();
        let total = dist.iter().fold(BigRational::zero(), |a, (_, p)| a + p);
        assert_eq!(total, BigRational::one());
        // rows 0 = (1,1,1) and 7 = (2,2,2)
        let p = dist.iter().find(|(s, _)| s == &vec![0, 7]).unwrap().1.clone();
        assert_eq!(p, BigRational::new(81.into(), 432.into()));
        // (1,1,2) and (1,2,1) share a multiplicity map
        assert!(!dist.iter().any(|(s, _)| s == &vec![1, 2]));
    }

    #[test]
    fn exact_mode_draws_are_valid() {
        let cfg = SamplerConfig::new(0, PrecisionMode::ExactRational, 1e-9).unwrap();
        let sampler = BnSampler::new(3, 3, cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (y, a) = sampler.sample(&mut rng).unwrap();
            assert_eq!(y.len(), 3);
            assert!(!a.determinant().is_zero());
        }
    }

    #[test]
    fn exact_mode_item_guard() {
        let f = BnFamily::new(60, 4).unwrap();
        let cfg = SamplerConfig::new(0, PrecisionMode::ExactRational, 1e-9).unwrap();
        assert!(matches!(VolumeSampler::new(&f, cfg), Err(Error::SizeLimit { .. })));
    }

    #[test]
    fn rank_deficient_host_is_rejected() {
        let host = ExactMatrix::from_i64(3, 2, &[1, 2, 2, 4, 3, 6]);
        let fam = MatrixFamily::new(&host).unwrap();
        assert!(matches!(
            VolumeSampler::new(&fam, SamplerConfig::default()),
            Err(Error::DegenerateHost(_))
        ));
        assert!(enumerate_distribution(&host, 2).is_err());
    }

    #[test]
    fn hypertree_n4_dimensions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (faces, m) = sample_hypertree(4, &mut rng).unwrap();
        assert_eq!(faces.len(), 3);
        assert_eq!((m.rows(), m.cols()), (3, 3));
        let rows = m.to_i64_rows().unwrap();
        assert!(rows.iter().flatten().all(|v| (-1..=1).contains(v)));
        assert!(!m.determinant().is_zero());
    }

    #[test]
    fn same_seed_same_samples() {
        let s = BnSampler::new(6, 3, SamplerConfig::default()).unwrap();
        let vs = s.sampler().unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..5).map(|_| s.sample_with(&vs, &mut rng).unwrap().0).collect::<Vec<_>>()
        };
        assert_eq!(draw(42), draw(42));
        assert_ne!(draw(42), draw(43));
    }
}
