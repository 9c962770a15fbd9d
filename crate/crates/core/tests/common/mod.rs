//! Brute-force oracles shared by the integration tests. Nothing here calls the
//! closed forms under test.
#![allow(dead_code)]

use num_bigint::BigInt;
use num_rational::BigRational;

/// All tuples of `[n]^k` (1-based), lexicographic.
pub fn tuples(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..k {
        out = out
            .into_iter()
            .flat_map(|t| {
                (1..=n).map(move |i| {
                    let mut t = t.clone();
                    t.push(i);
                    t
                })
            })
            .collect();
    }
    out
}

/// Row `e_{b_1} + … + e_{b_k}` as a dense vector.
pub fn row_vector(t: &[usize], n: usize) -> Vec<i128> {
    let mut v = vec![0i128; n];
    for &i in t {
        v[i - 1] += 1;
    }
    v
}

/// Laplace expansion; only for tiny matrices.
pub fn det_laplace(m: &[Vec<i128>]) -> i128 {
    match m.len() {
        0 => 1,
        1 => m[0][0],
        2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
        s => (0..s)
            .map(|j| {
                let minor: Vec<Vec<i128>> = m[1..]
                    .iter()
                    .map(|r| r.iter().enumerate().filter(|&(c, _)| c != j).map(|(_, &v)| v).collect())
                    .collect();
                let sign = if j % 2 == 0 { 1 } else { -1 };
                sign * m[0][j] * det_laplace(&minor)
            })
            .sum(),
    }
}

/// Every `size`-subset of `0..total` in lexicographic order.
pub fn combinations(total: usize, size: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, total: usize, size: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == size {
            out.push(cur.clone());
            return;
        }
        for i in start..total {
            if total - i < size - cur.len() {
                break;
            }
            cur.push(i);
            rec(i + 1, total, size, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, total, size, &mut Vec::new(), &mut out);
    out
}

/// `Σ_{K} det(B_n[K])^2` over `n`-subsets `K` of `rows` satisfying `keep`.
pub fn det_square_mass<F>(rows: &[Vec<usize>], n: usize, keep: F) -> BigInt
where
    F: Fn(&[&Vec<usize>]) -> bool,
{
    let mut acc = BigInt::from(0);
    for idx in combinations(rows.len(), n) {
        let chosen: Vec<&Vec<usize>> = idx.iter().map(|&i| &rows[i]).collect();
        if !keep(&chosen) {
            continue;
        }
        let m: Vec<Vec<i128>> = chosen.iter().map(|t| row_vector(t, n)).collect();
        let d = det_laplace(&m);
        acc += BigInt::from(d * d);
    }
    acc
}

/// `P(A_n q = 0)` for `q ∈ (Z/m)^n` by summing `det² / C` over `K ⊂ I_q`,
/// with `C` itself summed by Cauchy–Binet.
pub fn prob_aq_zero_cyclic(m: u64, q: &[u64], k: usize) -> BigRational {
    let n = q.len();
    let all = tuples(n, k);
    let total = det_square_mass(&all, n, |_| true);
    let kernel_rows: Vec<Vec<usize>> = all
        .into_iter()
        .filter(|t| t.iter().map(|&i| q[i - 1]).sum::<u64>() % m == 0)
        .collect();
    BigRational::new(det_square_mass(&kernel_rows, n, |_| true), total)
}

/// Mass of `T_{n,i_1} ∩ ⋯ ∩ T_{n,i_r}`: each index occurs in exactly one tuple, twice.
pub fn intersection_mass(n: usize, k: usize, indices: &[usize]) -> BigRational {
    let all = tuples(n, k);
    let total = det_square_mass(&all, n, |_| true);
    let hit = det_square_mass(&all, n, |ks| {
        indices.iter().all(|&i| {
            let owners: Vec<usize> = ks
                .iter()
                .map(|t| t.iter().filter(|&&x| x == i).count())
                .filter(|&c| c > 0)
                .collect();
            owners == [2]
        })
    });
    BigRational::new(hit, total)
}

/// Rank over `F_2` of a small dense matrix.
pub fn rank_mod2(m: &[Vec<i128>]) -> usize {
    let mut rows: Vec<Vec<u8>> = m.iter().map(|r| r.iter().map(|&v| v.rem_euclid(2) as u8).collect()).collect();
    let cols = rows.first().map_or(0, Vec::len);
    let mut rank = 0;
    for c in 0..cols {
        let Some(p) = (rank..rows.len()).find(|&i| rows[i][c] == 1) else {
            continue;
        };
        rows.swap(rank, p);
        for i in 0..rows.len() {
            if i != rank && rows[i][c] == 1 {
                let pivot = rows[rank].clone();
                for (x, y) in rows[i].iter_mut().zip(pivot) {
                    *x ^= y;
                }
            }
        }
        rank += 1;
    }
    rank
}

/// Total variation between two discrete laws given as aligned slices.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}
