//! Finite abelian groups: element arithmetic, subgroup lattices, Hom/Sur/Aut
//! counts and Cohen–Lenstra weights.

use std::collections::{HashMap, HashSet};

use num_bigint::BigInt;
use num_integer::Integer as _;
use num_traits::One;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{factorize, is_prime};
use crate::snf_cokernel::PGroupType;

/// Largest group order for subgroup-lattice enumeration.
pub const LATTICE_ORDER_LIMIT: u64 = 10_000;
/// Default truncation depth of `∏ (1 - p^{-i})`.
pub const DEFAULT_CL_DEPTH: u32 = 64;

/// `Z/d_1 ⊕ ... ⊕ Z/d_s` in invariant-factor form `d_1 | ... | d_s`, `d_i >= 2`.
///
/// Elements are indexed `0..order` in mixed radix, component 0 least significant;
/// index 0 is the identity.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FiniteAbelianGroup {
    divisors: Vec<u64>,
}

impl FiniteAbelianGroup {
    pub fn trivial() -> Self {
        Self { divisors: Vec::new() }
    }

    pub fn cyclic(n: u64) -> Self {
        Self::from_cyclic_factors(&[n])
    }

    /// Validates an invariant-factor chain.
    pub fn from_divisors(divisors: &[u64]) -> Result<Self> {
        if divisors.iter().any(|&d| d < 2) {
            return Err(Error::invalid(format!("divisors {divisors:?} must all be >= 2")));
        }
        if divisors.windows(2).any(|w| w[1] % w[0] != 0) {
            return Err(Error::invalid(format!("{divisors:?} is not a divisibility chain")));
        }
        Ok(Self {
            divisors: divisors.to_vec(),
        })
    }

    /// Canonical form of an arbitrary direct sum of cyclic groups.
    pub fn from_cyclic_factors(factors: &[u64]) -> Self {
        let mut by_prime: HashMap<u64, Vec<u32>> = HashMap::new();
        for &f in factors {
            for (p, e) in factorize(f) {
                by_prime.entry(p).or_default().push(e);
            }
        }
        let width = by_prime.values().map(Vec::len).max().unwrap_or(0);
        let mut divisors = vec![1u64; width];
        for (p, mut exps) in by_prime {
            exps.sort_unstable();
            // largest exponents go to the last invariant factors
            for (slot, e) in divisors.iter_mut().rev().zip(exps.iter().rev()) {
                *slot *= p.pow(*e);
            }
        }
        divisors.retain(|&d| d > 1);
        Self { divisors }
    }

    pub fn from_p_group(g: &PGroupType) -> Self {
        Self {
            divisors: g.divisors(),
        }
    }

    pub fn divisors(&self) -> &[u64] {
        &self.divisors
    }

    pub fn order(&self) -> u64 {
        self.divisors.iter().product()
    }

    pub fn exponent(&self) -> u64 {
        self.divisors.last().copied().unwrap_or(1)
    }

    pub fn is_trivial(&self) -> bool {
        self.divisors.is_empty()
    }

    pub fn primes(&self) -> Vec<u64> {
        factorize(self.exponent()).into_iter().map(|(p, _)| p).collect()
    }

    /// Partition (decreasing) of `G_p`.
    pub fn sylow_partition(&self, p: u64) -> Vec<u32> {
        let mut parts: Vec<u32> = self
            .divisors
            .iter()
            .map(|&d| {
                let mut e = 0;
                let mut x = d;
                while x % p == 0 {
                    x /= p;
                    e += 1;
                }
                e
            })
            .filter(|&e| e > 0)
            .collect();
        parts.sort_unstable_by(|a, b| b.cmp(a));
        parts
    }

    pub fn sylow(&self, p: u64) -> PGroupType {
        PGroupType::new(p, self.sylow_partition(p))
    }

    /// `Some(p)` if the group is a nontrivial p-group.
    pub fn as_p_group(&self) -> Option<u64> {
        match factorize(self.order()).as_slice() {
            [(p, _)] => Some(*p),
            _ => None,
        }
    }

    pub fn element(&self, mut idx: usize) -> Vec<u64> {
        self.divisors
            .iter()
            .map(|&d| {
                let c = idx as u64 % d;
                idx /= d as usize;
                c
            })
            .collect()
    }

    pub fn index(&self, coords: &[u64]) -> usize {
        let mut idx = 0usize;
        for (&c, &d) in coords.iter().zip(&self.divisors).rev() {
            idx = idx * d as usize + (c % d) as usize;
        }
        idx
    }

    pub fn add(&self, a: usize, b: usize) -> usize {
        let (mut a, mut b) = (a, b);
        let mut idx = 0usize;
        let mut radix = 1usize;
        for &d in &self.divisors {
            let d = d as usize;
            let s = (a % d + b % d) % d;
            a /= d;
            b /= d;
            idx += s * radix;
            radix *= d;
        }
        idx
    }

    pub fn neg(&self, a: usize) -> usize {
        let mut a = a;
        let mut idx = 0usize;
        let mut radix = 1usize;
        for &d in &self.divisors {
            let d = d as usize;
            let c = a % d;
            a /= d;
            idx += ((d - c) % d) * radix;
            radix *= d;
        }
        idx
    }

    /// `c · a`.
    pub fn scale(&self, c: u64, a: usize) -> usize {
        let coords: Vec<u64> = self
            .element(a)
            .iter()
            .zip(&self.divisors)
            .map(|(&x, &d)| ((x as u128 * c as u128) % d as u128) as u64)
            .collect();
        self.index(&coords)
    }

    pub fn element_order(&self, a: usize) -> u64 {
        self.element(a)
            .iter()
            .zip(&self.divisors)
            .map(|(&x, &d)| d / x.gcd(&d))
            .fold(1, |acc, o| acc.lcm(&o))
    }

    /// Element indices of the subgroup generated by `gens`.
    pub fn generated(&self, gens: &[usize]) -> Subgroup {
        let mut mask = vec![false; self.order() as usize];
        mask[0] = true;
        let mut elems = vec![0usize];
        for &g in gens {
            if mask[g] {
                continue;
            }
            let mut multiples = Vec::new();
            let mut x = g;
            while x != 0 {
                multiples.push(x);
                x = self.add(x, g);
            }
            let current = elems.clone();
            for &h in &current {
                for &mg in &multiples {
                    let s = self.add(h, mg);
                    if !mask[s] {
                        mask[s] = true;
                        elems.push(s);
                    }
                }
            }
        }
        elems.sort_unstable();
        Subgroup { elements: elems, mask }
    }

    /// Whether the elements `support` generate the whole group.
    pub fn generates(&self, support: &[usize]) -> bool {
        self.generated(support).order() == self.order()
    }
}

impl std::fmt::Display for FiniteAbelianGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.divisors.is_empty() {
            return write!(f, "0");
        }
        let parts: Vec<String> = self.divisors.iter().map(|d| format!("Z/{d}")).collect();
        write!(f, "{}", parts.join(" + "))
    }
}

/// A subgroup as a sorted element list plus membership mask.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Subgroup {
    elements: Vec<usize>,
    mask: Vec<bool>,
}

impl Subgroup {
    pub fn elements(&self) -> &[usize] {
        &self.elements
    }

    pub fn contains(&self, a: usize) -> bool {
        self.mask[a]
    }

    pub fn order(&self) -> u64 {
        self.elements.len() as u64
    }

    pub fn is_subgroup_of(&self, other: &Subgroup) -> bool {
        self.elements.iter().all(|&a| other.mask[a])
    }

    /// `#{h ∈ H : d h = 0}` = `#Hom(Z/d, H)`.
    pub fn torsion_count(&self, group: &FiniteAbelianGroup, d: u64) -> u64 {
        self.elements.iter().filter(|&&h| group.scale(d, h) == 0).count() as u64
    }

    /// Isomorphism type, read off from `|H[p^j]|`.
    pub fn isomorphism_type(&self, group: &FiniteAbelianGroup) -> FiniteAbelianGroup {
        let mut cyclic = Vec::new();
        for (p, _) in factorize(self.order()) {
            // |H[p^j]| = p^{Σ_i min(λ_i, j)}; the increments give the conjugate partition
            let mut prev_log = 0u32;
            let mut conj = Vec::new();
            let mut j = 1u32;
            loop {
                let c = self.torsion_count(group, p.pow(j));
                let log = c.ilog(p);
                if log == prev_log {
                    break;
                }
                conj.push(log - prev_log);
                prev_log = log;
                j += 1;
            }
            // λ_i = #{j : conj_j >= i}
            let max = conj.first().copied().unwrap_or(0);
            for i in 1..=max {
                let lam = conj.iter().filter(|&&c| c >= i).count() as u32;
                cyclic.push(p.pow(lam));
            }
        }
        FiniteAbelianGroup::from_cyclic_factors(&cyclic)
    }
}

/// Subgroup lattice with Möbius values `μ(H, G)`.
#[derive(Clone, Debug)]
pub struct SubgroupLattice {
    pub subgroups: Vec<Subgroup>,
    pub mobius_to_top: Vec<i64>,
}

/// All subgroups, enumerated by BFS over `⟨H, g⟩`, sorted by decreasing order.
pub fn subgroup_lattice(group: &FiniteAbelianGroup) -> Result<SubgroupLattice> {
    let order = group.order();
    if order > LATTICE_ORDER_LIMIT {
        return Err(Error::size_limit("|G| for subgroup lattice", order, LATTICE_ORDER_LIMIT));
    }
    let trivial = group.generated(&[]);
    let mut seen: HashSet<Vec<usize>> = HashSet::from([trivial.elements.clone()]);
    let mut all = vec![trivial];
    let mut head = 0;
    while head < all.len() {
        let h = all[head].clone();
        head += 1;
        for g in 0..order as usize {
            if h.contains(g) {
                continue;
            }
            let bigger = extend(group, &h, g);
            if seen.insert(bigger.elements.clone()) {
                all.push(bigger);
            }
        }
    }
    all.sort_by(|a, b| b.order().cmp(&a.order()).then_with(|| a.elements.cmp(&b.elements)));
    // μ(G,G) = 1, μ(H,G) = -Σ_{H < K <= G} μ(K,G)
    let mut mobius = vec![0i64; all.len()];
    for i in 0..all.len() {
        if i == 0 {
            mobius[0] = 1;
            continue;
        }
        let mut s = 0i64;
        for j in 0..i {
            if all[j].order() > all[i].order() && all[i].is_subgroup_of(&all[j]) {
                s += mobius[j];
            }
        }
        mobius[i] = -s;
    }
    Ok(SubgroupLattice {
        subgroups: all,
        mobius_to_top: mobius,
    })
}

/// `⟨H, g⟩ = ∪_j (H + j g)`.
fn extend(group: &FiniteAbelianGroup, h: &Subgroup, g: usize) -> Subgroup {
    let mut mask = h.mask.clone();
    let mut elems = h.elements.clone();
    let mut shift = g;
    while !h.mask[shift] {
        for &x in &h.elements {
            let s = group.add(x, shift);
            if !mask[s] {
                mask[s] = true;
                elems.push(s);
            }
        }
        shift = group.add(shift, g);
    }
    elems.sort_unstable();
    Subgroup { elements: elems, mask }
}

/// `|Aut(G)| = ∏_p |Aut(G_p)|`.
pub fn aut_order(group: &FiniteAbelianGroup) -> BigInt {
    group
        .primes()
        .into_iter()
        .map(|p| aut_order_p_group(&group.sylow(p)))
        .product()
}

/// `|Aut(⊕ Z/p^{λ_i})| = p^{Σ λ'_j² - Σ_i m_i(m_i+1)/2} ∏_i ∏_{j=1}^{m_i} (p^j - 1)`,
/// `λ'` the conjugate partition and `m_i` the multiplicity of the part `i`.
pub fn aut_order_p_group(g: &PGroupType) -> BigInt {
    let p = BigInt::from(g.p);
    let max = g.partition.first().copied().unwrap_or(0);
    let conj_sq: u64 = (1..=max)
        .map(|j| g.partition.iter().filter(|&&l| l >= j).count() as u64)
        .map(|c| c * c)
        .sum();
    let mut mults: Vec<u64> = Vec::new();
    for part in 1..=max {
        let m = g.partition.iter().filter(|&&l| l == part).count() as u64;
        if m > 0 {
            mults.push(m);
        }
    }
    let shift: u64 = mults.iter().map(|m| m * (m + 1) / 2).sum();
    let mut acc = num_traits::pow::pow(p.clone(), (conj_sq - shift) as usize);
    for &m in &mults {
        for j in 1..=m {
            acc *= num_traits::pow::pow(p.clone(), j as usize) - BigInt::one();
        }
    }
    acc
}

/// `#Hom(A, B) = ∏_{i,j} gcd(a_i, b_j)`.
pub fn hom_count(a: &FiniteAbelianGroup, b: &FiniteAbelianGroup) -> BigInt {
    let mut acc = BigInt::one();
    for &x in a.divisors() {
        for &y in b.divisors() {
            acc *= BigInt::from(x.gcd(&y));
        }
    }
    acc
}

/// `#Sur(A, G) = Σ_{H <= G} μ(H, G) #Hom(A, H)`.
pub fn sur_count(a: &FiniteAbelianGroup, g: &FiniteAbelianGroup) -> Result<BigInt> {
    let lattice = subgroup_lattice(g)?;
    Ok(sur_count_with(a, g, &lattice))
}

/// [`sur_count`] against a precomputed lattice of `g`.
pub fn sur_count_with(a: &FiniteAbelianGroup, g: &FiniteAbelianGroup, lattice: &SubgroupLattice) -> BigInt {
    sur_count_cyclic(a.divisors(), g, lattice)
}

/// `#Sur(⊕ Z/c_i, G)` for cyclic factors `c_i`, where `c_i = 0` stands for `Z`.
/// Only `gcd(c_i, exp G)` matters, so huge factors may be reduced first.
pub fn sur_count_cyclic(factors: &[u64], g: &FiniteAbelianGroup, lattice: &SubgroupLattice) -> BigInt {
    let mut total = BigInt::from(0);
    for (h, &mu) in lattice.subgroups.iter().zip(&lattice.mobius_to_top) {
        if mu == 0 {
            continue;
        }
        let homs: BigInt = factors
            .iter()
            .map(|&d| BigInt::from(h.torsion_count(g, d)))
            .product();
        total += BigInt::from(mu) * homs;
    }
    total
}

/// `∏_{i=1}^{depth} (1 - p^{-i})`; the tail beyond `depth` changes it by less than `2 p^{-depth}`.
pub fn cl_product(p: u64, depth: u32) -> f64 {
    let inv = 1.0 / p as f64;
    let mut acc = 1.0;
    let mut pw = 1.0;
    for _ in 0..depth {
        pw *= inv;
        acc *= 1.0 - pw;
    }
    acc
}

/// Cohen–Lenstra weight `ν_{CL,p}(G) = |Aut G|^{-1} ∏ (1 - p^{-i})`.
pub fn cl_probability(g: &FiniteAbelianGroup, p: u64, depth: u32) -> Result<f64> {
    if !is_prime(p) {
        return Err(Error::invalid(format!("{p} is not prime")));
    }
    if depth < 32 {
        return Err(Error::invalid(format!("truncation depth {depth} < 32")));
    }
    if !g.is_trivial() && g.as_p_group() != Some(p) {
        return Err(Error::invalid(format!("{g} is not a {p}-group")));
    }
    Ok(cl_probability_p_group(&g.sylow(p), depth))
}

pub fn cl_probability_p_group(g: &PGroupType, depth: u32) -> f64 {
    let aut = crate::exact::rational_to_f64(&num_rational::BigRational::from_integer(aut_order_p_group(g)));
    cl_product(g.p, depth) / aut
}

/// Limiting Cohen–Lenstra law of `dim_{F_2} ker` at corank `r`:
/// `2^{-r²} ∏_{i=1}^r (1 - 2^{-i})^{-2} ∏_{i>=1} (1 - 2^{-i})`.
pub fn cl_corank_probability(r: u32, depth: u32) -> f64 {
    let mut acc = cl_product(2, depth) * 2f64.powi(-((r * r) as i32));
    for i in 1..=r {
        let f = 1.0 - 2f64.powi(-(i as i32));
        acc /= f * f;
    }
    acc
}

/// All partitions of every integer `0..=max_total`, each as a decreasing vector.
pub fn partitions_up_to(max_total: u32) -> Vec<Vec<u32>> {
    fn rec(remaining: u32, max_part: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        out.push(cur.clone());
        for part in (1..=max_part.min(remaining)).rev() {
            cur.push(part);
            rec(remaining - part, part, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(max_total, max_total, &mut Vec::new(), &mut out);
    out.sort_by(|a, b| a.iter().sum::<u32>().cmp(&b.iter().sum()).then_with(|| b.cmp(a)));
    out
}

/// Every abelian p-group of order at most `p^max_log`.
pub fn p_groups_up_to(p: u64, max_log: u32) -> Vec<PGroupType> {
    partitions_up_to(max_log)
        .into_iter()
        .map(|lam| PGroupType::new(p, lam))
        .collect()
}
