//! Acceptance suite: one PASS/FAIL line per criterion, each under its time budget.
//! Runs without the libtest harness so the lines always print.

mod common;

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use cokernel::abelian_groups::FiniteAbelianGroup;
use cokernel::exact::{rational_to_f64, ExactMatrix};
use cokernel::experiment::{report_moment, run_campaign, summed_gram, ExperimentConfig, KSchedule};
use cokernel::kernel_defect::{bonferroni_lower, brute_force_ps, in_t_ni, mc_corank_tail, p_intersection_exact};
use cokernel::moment_engine::{
    distance_from_one, kl_hessian_check, moment_bruteforce, moment_exact, prob_aq_zero, TypeVector,
};
use cokernel::structured_matrix::{all_row_indices, build_row, gram_det, kalai_check, RowIndex};
use cokernel::volume_sampler::{enumerate_distribution, trial_rng, BnSampler, HypertreeSampler, SamplerConfig};
use num_rational::BigRational;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn q(a: i64, b: i64) -> BigRational {
    BigRational::new(a.into(), b.into())
}

fn z(n: u64) -> FiniteAbelianGroup {
    FiniteAbelianGroup::cyclic(n)
}

fn klein() -> FiniteAbelianGroup {
    FiniteAbelianGroup::from_cyclic_factors(&[2, 2])
}

fn c1_gram() -> Outcome {
    for k in [3, 4, 5, 7] {
        for n in 1..=8 {
            if gram_det(n, k) != summed_gram(n, k).determinant() {
                return outcome(false, format!("mismatch at n = {n}, k = {k}"));
            }
        }
    }
    outcome(true, "n <= 8, k in {3,4,5,7}")
}

fn c2_kalai() -> Outcome {
    for r in [1, 2] {
        for n in r + 2..=7 {
            let (lhs, rhs) = kalai_check(n, r).expect("valid (n, r)");
            if lhs != rhs {
                return outcome(false, format!("n = {n}, r = {r}: {lhs} != {rhs}"));
            }
        }
    }
    outcome(true, "n <= 7, r in {1,2}")
}

fn bn_host(n: usize, k: usize) -> ExactMatrix {
    let rows: Vec<Vec<i64>> = all_row_indices(n, k).map(|b| build_row(&b).to_dense()).collect();
    ExactMatrix::from_rows(&rows)
}

/// Empirical vs exact TV at subset level and at the level of the matrix `B_n[Y]`
/// (the multiset of row vectors).
fn bn_sampler_tv(n: usize, k: usize, draws: usize, seed: u64) -> (f64, f64) {
    let tuples: Vec<RowIndex> = all_row_indices(n, k).collect();
    let exact = enumerate_distribution(&bn_host(n, k), n).expect("small host");
    let sampler = BnSampler::new(n, k, SamplerConfig::default()).expect("valid sampler");
    let vs = sampler.sampler().expect("full rank");
    let mut subset_counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    for t in 0..draws as u64 {
        let mut rng = trial_rng(seed, t);
        let (y, _) = sampler.sample_with(&vs, &mut rng).expect("draw");
        let mut idx: Vec<usize> = y.items().iter().map(|b| tuples.binary_search(b).expect("in [n]^k")).collect();
        idx.sort_unstable();
        *subset_counts.entry(idx).or_default() += 1;
    }
    let class_of = |idx: &[usize]| -> Vec<Vec<usize>> {
        let mut rows: Vec<Vec<usize>> = idx
            .iter()
            .map(|&i| {
                let mut e = tuples[i].entries().to_vec();
                e.sort_unstable();
                e
            })
            .collect();
        rows.sort();
        rows
    };
    let mut tv_subset = 0.0;
    let mut exact_class: BTreeMap<Vec<Vec<usize>>, f64> = BTreeMap::new();
    let mut emp_class: BTreeMap<Vec<Vec<usize>>, f64> = BTreeMap::new();
    let mut seen = 0usize;
    for (idx, p) in &exact {
        let p = rational_to_f64(p);
        let c = subset_counts.get(idx).copied().unwrap_or(0);
        seen += c;
        let f = c as f64 / draws as f64;
        tv_subset += (f - p).abs();
        *exact_class.entry(class_of(idx)).or_default() += p;
        *emp_class.entry(class_of(idx)).or_default() += f;
    }
    // draws outside the support
    let stray = (draws - seen) as f64 / draws as f64;
    tv_subset += stray;
    let tv_class = exact_class
        .iter()
        .map(|(key, p)| (emp_class.get(key).copied().unwrap_or(0.0) - p).abs())
        .sum::<f64>()
        + stray;
    (0.5 * tv_subset, 0.5 * tv_class)
}

fn hypertree_tv(n: usize, draws: usize, seed: u64) -> f64 {
    let hs = HypertreeSampler::new(n, SamplerConfig::default()).expect("n >= 4");
    let exact = enumerate_distribution(hs.host(), hs.host().cols()).expect("small host");
    let vs = hs.sampler().expect("full rank");
    let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    for t in 0..draws as u64 {
        let mut rng = trial_rng(seed, t);
        let (mut items, _, _) = hs.sample_with(&vs, &mut rng).expect("draw");
        items.sort_unstable();
        *counts.entry(items).or_default() += 1;
    }
    let mut seen = 0;
    let mut tv = 0.0;
    for (idx, p) in &exact {
        let c = counts.get(idx).copied().unwrap_or(0);
        seen += c;
        tv += (c as f64 / draws as f64 - rational_to_f64(p)).abs();
    }
    0.5 * (tv + (draws - seen) as f64 / draws as f64)
}

fn c3_sampler() -> Outcome {
    let draws = 100_000;
    let (tv_bn, tv_bn_matrix) = bn_sampler_tv(3, 3, draws, 2024);
    let tv_ht = hypertree_tv(5, draws, 2025);
    let pass = tv_bn <= 0.02 && tv_ht <= 0.02;
    outcome(
        pass,
        format!(
            "B_3 (k=3) subset TV = {tv_bn:.4}, hypertree n=5 TV = {tv_ht:.4} (limit 0.02); \
             B_3 matrix-class TV = {tv_bn_matrix:.4}"
        ),
    )
}

fn c4_probability() -> Outcome {
    let mut checked = 0;
    for m in [2u64, 3] {
        let g = z(m);
        for n in 1..=3usize {
            let total = (m as usize).pow(n as u32);
            for code in 0..total {
                let mut qv = Vec::with_capacity(n);
                let mut c = code;
                for _ in 0..n {
                    qv.push((c % m as usize) as u64);
                    c /= m as usize;
                }
                let idx: Vec<usize> = qv.iter().map(|&v| v as usize).collect();
                let tv = TypeVector::of_vector(&g, &idx, 3).expect("valid type");
                let formula = prob_aq_zero(&tv).expect("n >= 1");
                let brute = common::prob_aq_zero_cyclic(m, &qv, 3);
                if formula != brute {
                    return outcome(false, format!("G = Z/{m}, q = {qv:?}: {formula} != {brute}"));
                }
                checked += 1;
            }
        }
    }
    outcome(true, format!("{checked} vectors q over Z/2 and Z/3, n <= 3, k = 3"))
}

fn c5_moments() -> Outcome {
    for g in [z(2), z(3), klein()] {
        for k in [3, 4, 5] {
            for n in 1..=8 {
                let a = moment_exact(&g, n, k).expect("within limits");
                let b = moment_bruteforce(&g, n, k).expect("within limits");
                if a != b {
                    return outcome(false, format!("G = {g}, n = {n}, k = {k}: {a} != {b}"));
                }
            }
        }
    }
    outcome(true, "G in {Z/2, Z/3, Z/2+Z/2}, n <= 8, k in {3,4,5}")
}

fn c6_intersections() -> Outcome {
    let r1 = p_intersection_exact(3, 3, 1).expect("valid");
    if r1 != q(128, 729) {
        return outcome(false, format!("r = 1 formula gives {r1}"));
    }
    for r in [1usize, 2] {
        let formula = p_intersection_exact(3, 3, r).expect("valid");
        for idx in common::combinations(3, r) {
            let indices: Vec<usize> = idx.iter().map(|&i| i + 1).collect();
            let lib = brute_force_ps(3, 3, |ks, _| indices.iter().all(|&i| in_t_ni(ks, i))).expect("small");
            let oracle = common::intersection_mass(3, 3, &indices);
            if formula != lib || formula != oracle {
                return outcome(false, format!("indices {indices:?}: {formula} vs {lib} vs {oracle}"));
            }
        }
    }
    outcome(true, "r = 1 gives 128/729; r in {1,2} match enumeration for every index set")
}

fn c7_floor() -> Outcome {
    let b = rational_to_f64(&bonferroni_lower(10_000, 3, 1).expect("valid"));
    let target = (-2f64).exp();
    let floor_ok = (b - target).abs() <= 0.01;
    let b30 = rational_to_f64(&bonferroni_lower(30, 3, 1).expect("valid"));
    let mc = mc_corank_tail(30, 3, 1, 1000, 7).expect("sampler");
    let mc_ok = mc.estimate >= b30 - 3.0 * mc.standard_error;
    outcome(
        floor_ok && mc_ok,
        format!(
            "bonferroni(1e4,3,1) = {b:.6} vs e^-2 = {target:.6} ({}); \
             MC(30,3,1) = {:.4} ± {:.4} vs bonferroni(30,3,1) = {b30:.4} ({})",
            if floor_ok { "ok" } else { "off by more than 0.01" },
            mc.estimate,
            mc.standard_error,
            if mc_ok { "ok" } else { "below" },
        ),
    )
}

fn c8_non_cl() -> Outcome {
    let m = moment_exact(&z(2), 500, 3).expect("501 types");
    let v = rational_to_f64(&m);
    outcome(m >= q(3, 2), format!("E #Sur(cok A_500, Z/2) at k = 3 is {v:.6}"))
}

fn c9_cl() -> Outcome {
    let mut cfg = ExperimentConfig::new(30, KSchedule::Constant { k: 3 }, 5000, 99);
    cfg.primes = vec![3];
    cfg.cap_log = 4;
    let out = run_campaign(&cfg).expect("campaign");
    let rep = &out.reports[0];
    let sur = report_moment(&out.records, &z(3)).expect("records");
    let pass = rep.total_variation <= 0.1 && (0.85..=1.15).contains(&sur.estimate);
    let trivial = rep.rows.iter().find(|r| r.partition.is_empty()).map_or(0.0, |r| r.frequency);
    outcome(
        pass,
        format!(
            "k=3: TV = {:.4} (limit 0.1), E #Sur(., Z/3) = {:.4} ± {:.4} (window [0.85, 1.15]), \
             P(trivial 3-part) = {trivial:.4}",
            rep.total_variation,
            sur.estimate,
            sur.standard_error.unwrap_or(f64::NAN)
        ),
    )
}

/// Same measurement with `k = 4`, where `3` does not divide the row sums.
fn c9_supplement() -> String {
    let mut cfg = ExperimentConfig::new(30, KSchedule::Constant { k: 4 }, 5000, 99);
    cfg.primes = vec![3];
    let out = run_campaign(&cfg).expect("campaign");
    let sur = report_moment(&out.records, &z(3)).expect("records");
    format!(
        "k=4, p=3, n=30: TV = {:.4}, E #Sur(., Z/3) = {:.4} ± {:.4}",
        out.reports[0].total_variation,
        sur.estimate,
        sur.standard_error.unwrap_or(f64::NAN)
    )
}

fn c10_k_growth() -> Outcome {
    let m3 = moment_exact(&z(2), 500, 3).expect("limits");
    let m13 = moment_exact(&z(2), 500, 13).expect("limits");
    let (d3, d13) = (distance_from_one(&m3), distance_from_one(&m13));
    outcome(
        d13 < d3,
        format!(
            "|E - 1| = {:.6} at k = 3, {:.3e} at k = 13",
            rational_to_f64(&d3),
            rational_to_f64(&d13)
        ),
    )
}

fn c11_hessian() -> Outcome {
    let mut worst_grad: f64 = 0.0;
    let mut worst_ratio: f64 = 0.0;
    for g in [z(2), z(3), klein()] {
        for k in [3, 5] {
            let grad = kl_hessian_check(&g, k, 1e-4).expect("valid");
            let hess = kl_hessian_check(&g, k, 1e-3).expect("valid");
            worst_grad = worst_grad.max(grad.gradient_norm);
            worst_ratio = worst_ratio.max(hess.hessian_deviation / (1e-3 * g.order() as f64));
        }
    }
    outcome(
        worst_grad <= 1e-6 && worst_ratio <= 1.0,
        format!("max gradient norm {worst_grad:.2e}; max deviation / (1e-3 |G|) = {worst_ratio:.3}"),
    )
}

fn c12_normalization() -> Outcome {
    for k in [3, 5] {
        for n in 1..=100 {
            let p = prob_aq_zero(&TypeVector::zero(&z(2), n, k)).expect("n >= 1");
            if p != q(1, 1) {
                return outcome(false, format!("n = {n}, k = {k}: {p}"));
            }
        }
    }
    outcome(true, "n <= 100, k in {3,5}")
}

fn main() {
    type Criterion = (&'static str, u64, fn() -> Outcome);
    let criteria: [Criterion; 12] = [
        ("gram determinant", 10, c1_gram),
        ("Kalai identity", 30, c2_kalai),
        ("sampler correctness", 300, c3_sampler),
        ("probability formula", 600, c4_probability),
        ("moment cross-method", 120, c5_moments),
        ("intersection exactness", 600, c6_intersections),
        ("fixed-k corank floor", 600, c7_floor),
        ("non-CL moment at fixed k", 60, c8_non_cl),
        ("CL convergence at p = 3", 1800, c9_cl),
        ("k-growth contrast", 60, c10_k_growth),
        ("KL Hessian", 60, c11_hessian),
        ("zero-vector normalization", 5, c12_normalization),
    ];
    let mut failures = 0;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(*budget);
        let pass = result.pass && in_time;
        if !pass {
            failures += 1;
        }
        println!(
            "{} criterion {:>2} {name}: {} [{:.2} s of {budget} s{}]",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            result.detail,
            elapsed.as_secs_f64(),
            if in_time { "" } else { ", over budget" },
        );
        if i == 8 {
            println!("INFO criterion  9 supplement: {}", c9_supplement());
        }
    }
    println!("acceptance: {} of 12 criteria passed", 12 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
