//! The `F_2` kernel of `A_n` at fixed odd `k`: columns of the form `2 e_j^T`
//! force corank, which keeps the 2-part of `cok A_n` away from Cohen–Lenstra.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exact::{binomial, binomial_f64, factorial, pow_u64, ExactMatrix};
use crate::snf_cokernel::rank_mod_p;
use crate::structured_matrix::{all_row_indices, gram_det, submatrix, RowIndex};
use crate::volume_sampler::{trial_rng, BnSampler, SamplerConfig, ENUMERATION_LIMIT};

/// `K ∈ T_{n,i}`: exactly one tuple of `K` contains `i`, and it contains it twice.
pub fn in_t_ni(k_set: &[RowIndex], i: usize) -> bool {
    let mut hits = k_set.iter().filter(|b| b.multiplicity(i) > 0);
    matches!((hits.next(), hits.next()), (Some(b), None) if b.multiplicity(i) == 2)
}

fn check_defect_args(n: usize, k: usize, r: usize) -> Result<()> {
    if k < 3 {
        return Err(Error::invalid(format!("k = {k} must be >= 3")));
    }
    if r < 1 || r >= n {
        return Err(Error::invalid(format!("r = {r} outside [1, n-1] with n = {n}")));
    }
    Ok(())
}

/// `p(T_{n,i_1} ∩ ⋯ ∩ T_{n,i_r}) = (2k(k-1)(n-r)^{k-2})^r C_{n-r,k} / C_{n,k}`,
/// with `C_{m,k} = det(B_m^T B_m)` and `C_{0,k} = k`.
pub fn p_intersection_exact(n: usize, k: usize, r: usize) -> Result<BigRational> {
    check_defect_args(n, k, r)?;
    Ok(p_intersection_unchecked(n, k, r))
}

fn p_intersection_unchecked(n: usize, k: usize, r: usize) -> BigRational {
    let (n64, k64, r64) = (n as u64, k as u64, r as u64);
    let base = BigInt::from(2 * k64 * (k64 - 1)) * pow_u64(n64 - r64, k64 - 2);
    let lead = num_traits::pow::pow(base, r);
    BigRational::new(lead * gram_det(n - r, k), gram_det(n, k))
}

/// `|U_{n,k,r}| = (binom(k,2) (n-r)^{k-2})^r`.
pub fn u_count(n: usize, k: usize, r: usize) -> Result<BigInt> {
    if k < 3 || r > n {
        return Err(Error::invalid(format!("invalid (n, k, r) = ({n}, {k}, {r})")));
    }
    let base = binomial(k as u64, 2) * pow_u64((n - r) as u64, k as u64 - 2);
    Ok(num_traits::pow::pow(base, r))
}

/// `binom(n,r) p_r - r binom(n,r+1) p_{r+1}`, a lower bound on `P(dim ker Ā_n >= r)`.
pub fn bonferroni_lower(n: usize, k: usize, r: usize) -> Result<BigRational> {
    check_defect_args(n, k, r)?;
    let first = BigRational::from_integer(binomial(n as u64, r as u64)) * p_intersection_unchecked(n, k, r);
    // p_n = 0 since (n - n)^{k-2} = 0
    let second = if r + 1 < n {
        BigRational::from_integer(BigInt::from(r as u64) * binomial(n as u64, r as u64 + 1))
            * p_intersection_unchecked(n, k, r + 1)
    } else {
        BigRational::zero()
    };
    Ok(first - second)
}

/// `(1 / (4 r!)) (2(k-1) / e^{k-1})^r`.
pub fn asymptotic_lower_bound(k: usize, r: usize) -> Result<f64> {
    if k < 3 || k.is_multiple_of(2) || r < 1 {
        return Err(Error::invalid(format!("need odd k >= 3 and r >= 1, got k = {k}, r = {r}")));
    }
    let x = 2.0 * (k as f64 - 1.0) / (k as f64 - 1.0).exp();
    let fact = crate::exact::rational_to_f64(&BigRational::from_integer(factorial(r as u64)));
    Ok(x.powi(r as i32) / (4.0 * fact))
}

/// `dim_{F_2} ker` of a square integer matrix reduced mod 2.
pub fn f2_corank(a: &ExactMatrix) -> usize {
    rank_mod_p(a, 2).expect("2 is prime").1
}

/// Monte Carlo tail estimate with binomial standard error.
#[derive(Clone, Debug, Serialize)]
pub struct TailEstimate {
    pub estimate: f64,
    pub standard_error: f64,
    pub trials: usize,
    pub hits: usize,
}

/// Histogram of the `F_2` corank over `trials` draws of `A_n`.
pub fn mc_corank_histogram(n: usize, k: usize, trials: usize, seed: u64) -> Result<Vec<usize>> {
    let sampler = BnSampler::new(n, k, SamplerConfig::default())?;
    let vs = sampler.sampler()?;
    let coranks = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = trial_rng(seed, t);
            sampler.sample_with(&vs, &mut rng).map(|(_, a)| f2_corank(&a))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut hist = vec![0usize; n + 1];
    for c in coranks {
        hist[c] += 1;
    }
    Ok(hist)
}

/// Estimate of `P(dim_{F_2} ker Ā_n >= r)`.
pub fn mc_corank_tail(n: usize, k: usize, r: usize, trials: usize, seed: u64) -> Result<TailEstimate> {
    if trials < 100 {
        return Err(Error::invalid(format!("trials = {trials} < 100")));
    }
    let hist = mc_corank_histogram(n, k, trials, seed)?;
    let hits: usize = hist.iter().skip(r).sum();
    let p = hits as f64 / trials as f64;
    Ok(TailEstimate {
        estimate: p,
        standard_error: (p * (1.0 - p) / trials as f64).sqrt(),
        trials,
        hits,
    })
}

/// `p(S) = Σ_{K ∈ S} det(B_n[K])^2 / C_{n,k}` over all `n`-subsets of `[n]^k`.
pub fn brute_force_ps<P>(n: usize, k: usize, predicate: P) -> Result<BigRational>
where
    P: Fn(&[RowIndex], &ExactMatrix) -> bool,
{
    let tuples: Vec<RowIndex> = all_row_indices(n, k).collect();
    let count = binomial_f64(tuples.len() as u64, n as u64);
    if count > ENUMERATION_LIMIT {
        return Err(Error::size_limit("binom(n^k, n)", count, ENUMERATION_LIMIT));
    }
    let mut acc = BigInt::zero();
    let mut idx: Vec<usize> = (0..n).collect();
    let total = tuples.len();
    loop {
        let subset: Vec<RowIndex> = idx.iter().map(|&i| tuples[i].clone()).collect();
        let m = submatrix(&subset, n, k)?;
        let d = m.determinant();
        if !d.is_zero() && predicate(&subset, &m) {
            acc += &d * &d;
        }
        let Some(pos) = (0..n).rev().find(|&p| idx[p] < total - n + p) else {
            break;
        };
        idx[pos] += 1;
        for p in pos + 1..n {
            idx[p] = idx[p - 1] + 1;
        }
    }
    Ok(BigRational::new(acc, gram_det(n, k)))
}

/// `P(dim ker Ā_n >= r)` by full enumeration.
pub fn brute_force_corank_tail(n: usize, k: usize, r: usize) -> Result<BigRational> {
    brute_force_ps(n, k, |_, m| f2_corank(m) >= r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::One;

    fn row(n: usize, e: &[usize]) -> RowIndex {
        RowIndex::new(n, e.to_vec()).unwrap()
    }

    fn q(a: i64, b: i64) -> BigRational {
        BigRational::new(a.into(), b.into())
    }

    #[test]
    fn membership() {
        assert!(in_t_ni(&[row(2, &[1, 1, 2]), row(2, &[2, 2, 2])], 1));
        assert!(!in_t_ni(&[row(2, &[1, 1, 1]), row(2, &[2, 2, 2])], 1));
        assert!(!in_t_ni(&[row(2, &[1, 1, 2]), row(2, &[1, 2, 2])], 1));
        assert!(!in_t_ni(&[row(2, &[1, 2, 2]), row(2, &[2, 2, 2])], 1));
    }

    #[test]
    fn closed_forms() {
        assert_eq!(p_intersection_exact(3, 3, 1).unwrap(), q(128, 729));
        assert_eq!(p_intersection_exact(3, 3, 2).unwrap(), q(16, 729));
        assert_eq!(u_count(3, 3, 1).unwrap(), BigInt::from(6));
        assert_eq!(u_count(5, 3, 0).unwrap(), BigInt::one());
        assert_eq!(u_count(4, 3, 2).unwrap(), BigInt::from(36));
        assert_eq!(bonferroni_lower(3, 3, 1).unwrap(), q(112, 243));
        assert!(p_intersection_exact(3, 3, 3).is_err());
    }

    #[test]
    fn asymptotic_values() {
        assert!((asymptotic_lower_bound(3, 1).unwrap() - (-2f64).exp()).abs() < 1e-15);
        assert!((asymptotic_lower_bound(3, 2).unwrap() - 2.0 * (-4f64).exp()).abs() < 1e-15);
        assert!((asymptotic_lower_bound(5, 1).unwrap() - 2.0 * (-4f64).exp()).abs() < 1e-15);
        assert!(asymptotic_lower_bound(4, 1).is_err());
    }

    #[test]
    fn trivial_predicate_is_one() {
        assert_eq!(brute_force_ps(2, 3, |_, _| true).unwrap(), q(1, 1));
    }

    #[test]
    fn even_k_forces_corank() {
        let t = mc_corank_tail(8, 4, 1, 100, 5).unwrap();
        assert_eq!(t.estimate, 1.0);
        let t0 = mc_corank_tail(8, 3, 0, 100, 5).unwrap();
        assert_eq!(t0.estimate, 1.0);
    }
}
