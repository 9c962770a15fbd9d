//! Seeded Monte Carlo campaigns, distribution reports and the identity ledger.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use num_bigint::BigInt;
use num_integer::Integer as _;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::abelian_groups::{
    cl_probability_p_group, p_groups_up_to, subgroup_lattice, sur_count_cyclic, FiniteAbelianGroup,
    DEFAULT_CL_DEPTH,
};
use crate::error::{Error, Result};
use crate::exact::{is_prime, rational_to_f64, rational_to_string};
use crate::kernel_defect::{brute_force_ps, f2_corank, in_t_ni, p_intersection_exact};
use crate::moment_engine::{kl_hessian_check, moment_bruteforce, moment_exact, prob_aq_zero, TypeVector};
use crate::snf_cokernel::{cokernel, sylow, PGroupType};
use crate::structured_matrix::{all_row_indices, gram_det, kalai_check, RowIndex};
use crate::volume_sampler::{
    enumerate_distribution, trial_rng, BnFamily, BnSampler, HypertreeSampler, MatrixFamily,
    PrecisionMode, SamplerConfig, VolumeSampler,
};

/// Environment variable holding the worker count for campaigns.
pub const WORKERS_ENV: &str = "COKERNEL_WORKERS";

/// How `k` depends on `n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KSchedule {
    Constant { k: usize },
    /// `ceil(c log log n)`
    LogLog { c: f64 },
    /// `ceil(n^ε)`
    Power { epsilon: f64 },
}

impl KSchedule {
    /// `k` at `n`, never below 3.
    pub fn k_for(&self, n: usize) -> usize {
        let raw = match *self {
            KSchedule::Constant { k } => return k,
            KSchedule::LogLog { c } => (c * (n as f64).ln().ln()).ceil(),
            KSchedule::Power { epsilon } => (n as f64).powf(epsilon).ceil(),
        };
        if raw.is_finite() && raw > 3.0 {
            raw as usize
        } else {
            3
        }
    }
}

impl FromStr for KSchedule {
    type Err = Error;

    /// `7`, `const:7`, `loglog:2.5` or `power:0.3`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("cannot parse k schedule {s:?}"));
        let (kind, value) = s.split_once(':').unwrap_or(("const", s));
        match kind {
            "const" | "constant" => Ok(KSchedule::Constant {
                k: value.parse().map_err(|_| bad())?,
            }),
            "loglog" => Ok(KSchedule::LogLog {
                c: value.parse().map_err(|_| bad())?,
            }),
            "power" => Ok(KSchedule::Power {
                epsilon: value.parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    BnMatrix,
    Hypertree,
}

impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bn_matrix" | "bn" => Ok(Model::BnMatrix),
            "hypertree" => Ok(Model::Hypertree),
            _ => Err(Error::invalid(format!("unknown model {s:?}"))),
        }
    }
}

/// Files written by a campaign; `None` skips the file.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct OutputPaths {
    pub trials_jsonl: Option<PathBuf>,
    pub report_csv: Option<PathBuf>,
    pub report_json: Option<PathBuf>,
}

impl OutputPaths {
    /// `trials.jsonl`, `report.csv` and `report.json` inside `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            trials_jsonl: Some(dir.join("trials.jsonl")),
            report_csv: Some(dir.join("report.csv")),
            report_json: Some(dir.join("report.json")),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: Model,
    pub n: usize,
    pub k_schedule: KSchedule,
    pub primes: Vec<u64>,
    pub trials: usize,
    pub seed: u64,
    pub precision_mode: PrecisionMode,
    /// Groups are tabulated individually up to `|G| <= p^cap_log`.
    pub cap_log: u32,
    /// Record per-trial wall time; off by default so trial files are reproducible.
    pub record_timing: bool,
    #[serde(skip)]
    pub output: OutputPaths,
}

impl ExperimentConfig {
    pub fn new(n: usize, k_schedule: KSchedule, trials: usize, seed: u64) -> Self {
        Self {
            model: Model::BnMatrix,
            n,
            k_schedule,
            primes: vec![2, 3],
            trials,
            seed,
            precision_mode: PrecisionMode::Float64,
            cap_log: 4,
            record_timing: false,
            output: OutputPaths::default(),
        }
    }

    pub fn k(&self) -> usize {
        match self.model {
            Model::BnMatrix => self.k_schedule.k_for(self.n),
            Model::Hypertree => 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k() < 3 {
            return Err(Error::invalid(format!("k = {} must be >= 3", self.k())));
        }
        if self.trials < 1 {
            return Err(Error::invalid("trials must be >= 1"));
        }
        if let Some(p) = self.primes.iter().find(|&&p| !is_prime(p)) {
            return Err(Error::invalid(format!("{p} is not prime")));
        }
        if self.n < 1 {
            return Err(Error::invalid("n must be >= 1"));
        }
        if self.model == Model::Hypertree && self.n < 4 {
            return Err(Error::invalid("hypertree model needs n >= 4"));
        }
        Ok(())
    }
}

/// One sampled matrix and its cokernel data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: u64,
    pub seed: u64,
    pub n: usize,
    pub k: usize,
    pub det_zero: bool,
    pub free_rank: usize,
    /// Nontrivial invariant factors, decimal strings.
    pub divisors: Vec<String>,
    /// p-part of the torsion, as a decreasing partition.
    pub sylow: BTreeMap<u64, Vec<u32>>,
    pub f2_corank: usize,
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<f64>,
}

impl TrialRecord {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }

    pub fn divisors_big(&self) -> Vec<BigInt> {
        self.divisors
            .iter()
            .map(|d| d.parse().expect("divisor strings are decimal"))
            .collect()
    }

    /// Cyclic factors of `cok A` with `0` for each free `Z`, each reduced to
    /// `gcd(d, m)`; enough to count maps into a group of exponent dividing `m`.
    pub fn cyclic_factors_mod(&self, m: u64) -> Vec<u64> {
        let mb = BigInt::from(m);
        let mut out: Vec<u64> = self
            .divisors_big()
            .iter()
            .map(|d| d.gcd(&mb).to_u64().expect("gcd fits"))
            .collect();
        out.extend(std::iter::repeat_n(0, self.free_rank));
        out
    }
}

/// A model sampler with its prepared kernel, shared by all trials.
enum Sampler<'a> {
    Bn(&'a BnSampler, VolumeSampler<'a, BnFamily>),
    Hypertree(&'a HypertreeSampler, VolumeSampler<'a, MatrixFamily>),
}

fn draw_matrix(sampler: &Sampler<'_>, rng: &mut rand_chacha::ChaCha8Rng) -> Result<crate::ExactMatrix> {
    match sampler {
        Sampler::Bn(s, vs) => s.sample_with(vs, rng).map(|(_, a)| a),
        Sampler::Hypertree(s, vs) => s.sample_with(vs, rng).map(|(_, _, a)| a),
    }
}

fn analyse(cfg: &ExperimentConfig, trial_id: u64, a: &crate::ExactMatrix, attempts: u32) -> Result<TrialRecord> {
    let cok = cokernel(a);
    let mut sylow_map = BTreeMap::new();
    for &p in &cfg.primes {
        let s = sylow(&cok, p)?;
        let part = match s {
            crate::snf_cokernel::SylowResult::Finite(g) => g.partition,
            crate::snf_cokernel::SylowResult::Infinite { torsion, .. } => torsion.partition,
        };
        sylow_map.insert(p, part);
    }
    Ok(TrialRecord {
        trial_id,
        seed: cfg.seed,
        n: cfg.n,
        k: cfg.k(),
        det_zero: !cok.is_finite(),
        free_rank: cok.free_rank,
        divisors: cok.divisors.iter().map(BigInt::to_string).collect(),
        sylow: sylow_map,
        f2_corank: f2_corank(a),
        attempts,
        error: None,
        wall_time_ms: None,
    })
}

/// Second attempts draw from a disjoint stream.
const RETRY_STREAM: u64 = 1 << 63;

fn run_trial(cfg: &ExperimentConfig, sampler: &Sampler<'_>, trial_id: u64) -> TrialRecord {
    let start = Instant::now();
    let mut last_err = String::new();
    for attempt in 0..2u32 {
        let stream = if attempt == 0 { trial_id } else { trial_id | RETRY_STREAM };
        let mut rng = trial_rng(cfg.seed, stream);
        match draw_matrix(sampler, &mut rng).and_then(|a| analyse(cfg, trial_id, &a, attempt + 1)) {
            Ok(mut rec) => {
                if cfg.record_timing {
                    rec.wall_time_ms = Some(start.elapsed().as_secs_f64() * 1e3);
                }
                return rec;
            }
            Err(e) => last_err = e.to_string(),
        }
    }
    TrialRecord {
        trial_id,
        seed: cfg.seed,
        n: cfg.n,
        k: cfg.k(),
        det_zero: false,
        free_rank: 0,
        divisors: Vec::new(),
        sylow: BTreeMap::new(),
        f2_corank: 0,
        attempts: 2,
        error: Some(last_err),
        wall_time_ms: cfg.record_timing.then(|| start.elapsed().as_secs_f64() * 1e3),
    }
}

/// Worker count from [`WORKERS_ENV`], when set to a positive integer.
pub fn workers_from_env() -> Option<usize> {
    std::env::var(WORKERS_ENV).ok()?.parse().ok().filter(|&w| w > 0)
}

/// Records plus one report per configured prime.
#[derive(Clone, Debug, Serialize)]
pub struct CampaignOutcome {
    pub records: Vec<TrialRecord>,
    pub reports: Vec<DistributionReport>,
}

/// Runs all trials (in parallel, deterministic per trial) and writes the outputs.
pub fn run_campaign(cfg: &ExperimentConfig) -> Result<CampaignOutcome> {
    cfg.validate()?;
    let sampler_cfg = SamplerConfig {
        seed: cfg.seed,
        precision_mode: cfg.precision_mode,
        ..SamplerConfig::default()
    };
    let (bn, ht);
    let sampler = match cfg.model {
        Model::BnMatrix => {
            bn = BnSampler::new(cfg.n, cfg.k(), sampler_cfg)?;
            Sampler::Bn(&bn, bn.sampler()?)
        }
        Model::Hypertree => {
            ht = HypertreeSampler::new(cfg.n, sampler_cfg)?;
            Sampler::Hypertree(&ht, ht.sampler()?)
        }
    };
    let work = || -> Vec<TrialRecord> {
        (0..cfg.trials as u64)
            .into_par_iter()
            .map(|t| run_trial(cfg, &sampler, t))
            .collect()
    };
    let records = match workers_from_env() {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };
    if let Some(path) = &cfg.output.trials_jsonl {
        write_trials(path, &records)?;
    }
    let reports = cfg
        .primes
        .iter()
        .map(|&p| report_tv(&records, p, cfg.cap_log))
        .collect::<Result<Vec<_>>>()?;
    if let Some(path) = &cfg.output.report_csv {
        write_report_csv(path, &reports)?;
    }
    if let Some(path) = &cfg.output.report_json {
        let header = ReportHeader::new(cfg);
        let file = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(file, &serde_json::json!({ "header": header, "reports": reports }))?;
    }
    Ok(CampaignOutcome { records, reports })
}

/// Provenance block written at the top of `report.json`.
#[derive(Clone, Debug, Serialize)]
pub struct ReportHeader {
    pub config: ExperimentConfig,
    pub k: usize,
    pub float_environment: String,
    pub rng: String,
}

impl ReportHeader {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            config: cfg.clone(),
            k: cfg.k(),
            float_environment: format!(
                "IEEE-754 binary64, round-to-nearest, {} {}",
                std::env::consts::ARCH,
                std::env::consts::OS
            ),
            rng: "ChaCha8 seeded from seed, stream = trial_id".into(),
        }
    }
}

pub fn write_trials(path: &Path, records: &[TrialRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trials(path: &Path) -> Result<Vec<TrialRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// 95% Wilson score interval.
pub fn wilson_interval(successes: usize, trials: usize) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054;
    let n = trials as f64;
    let p = successes as f64 / n;
    let denom = 1.0 + z * z / n;
    let centre = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[derive(Clone, Debug, Serialize)]
pub struct GroupRow {
    pub partition: Vec<u32>,
    pub order: u64,
    pub count: usize,
    /// Fraction of all successful trials.
    pub frequency: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
    pub cl_reference: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MomentEstimate {
    pub group: String,
    pub estimate: f64,
    /// `None` when fewer than two records are available.
    pub standard_error: Option<f64>,
    pub trials: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct DistributionReport {
    pub p: u64,
    pub cap_log: u32,
    pub trials: usize,
    pub failed: usize,
    pub rows: Vec<GroupRow>,
    pub other_count: usize,
    pub other_frequency: f64,
    pub infinite_count: usize,
    pub infinite_frequency: f64,
    /// TV between the p-part law of the finite cokernels and `ν_CL,p`, over the
    /// capped groups plus one "other" bucket.
    pub total_variation: f64,
    pub moments: Vec<MomentEstimate>,
}

/// Tabulates the empirical p-Sylow law against Cohen–Lenstra.
pub fn report_tv(records: &[TrialRecord], p: u64, cap_log: u32) -> Result<DistributionReport> {
    if records.is_empty() {
        return Err(Error::invalid("no records"));
    }
    if !is_prime(p) {
        return Err(Error::invalid(format!("{p} is not prime")));
    }
    let ok: Vec<&TrialRecord> = records.iter().filter(|r| !r.failed()).collect();
    let total = ok.len();
    let mut counts: BTreeMap<Vec<u32>, usize> = BTreeMap::new();
    let mut other = 0usize;
    let mut infinite = 0usize;
    for r in &ok {
        if r.det_zero {
            infinite += 1;
            continue;
        }
        let part = match r.sylow.get(&p) {
            Some(part) => part.clone(),
            None => sylow_from_divisors(r, p),
        };
        if part.iter().sum::<u32>() <= cap_log {
            *counts.entry(part).or_default() += 1;
        } else {
            other += 1;
        }
    }
    let finite = total - infinite;
    let frac = |c: usize, of: usize| if of == 0 { 0.0 } else { c as f64 / of as f64 };
    let mut rows = Vec::new();
    let mut tv = 0.0;
    let mut cl_mass = 0.0;
    for g in p_groups_up_to(p, cap_log) {
        let count = counts.get(&g.partition).copied().unwrap_or(0);
        let cl = cl_probability_p_group(&g, DEFAULT_CL_DEPTH);
        cl_mass += cl;
        tv += (frac(count, finite) - cl).abs();
        let (lo, hi) = wilson_interval(count, total);
        rows.push(GroupRow {
            order: p.pow(g.log_order()),
            partition: g.partition,
            count,
            frequency: frac(count, total),
            wilson_low: lo,
            wilson_high: hi,
            cl_reference: cl,
        });
    }
    tv += (frac(other, finite) - (1.0 - cl_mass).max(0.0)).abs();
    let mut moments = Vec::new();
    for g in [
        FiniteAbelianGroup::cyclic(p),
        FiniteAbelianGroup::cyclic(p * p),
        FiniteAbelianGroup::from_cyclic_factors(&[p, p]),
    ] {
        moments.push(report_moment(records, &g)?);
    }
    Ok(DistributionReport {
        p,
        cap_log,
        trials: total,
        failed: records.len() - total,
        rows,
        other_count: other,
        other_frequency: frac(other, total),
        infinite_count: infinite,
        infinite_frequency: frac(infinite, total),
        total_variation: 0.5 * tv,
        moments,
    })
}

fn sylow_from_divisors(r: &TrialRecord, p: u64) -> Vec<u32> {
    let parts = r
        .divisors_big()
        .iter()
        .map(|d| crate::exact::valuation(d, p))
        .collect();
    PGroupType::new(p, parts).partition
}

/// Mean of `#Sur(cok A, G)` over successful records, with its standard error.
pub fn report_moment(records: &[TrialRecord], g: &FiniteAbelianGroup) -> Result<MomentEstimate> {
    let ok: Vec<&TrialRecord> = records.iter().filter(|r| !r.failed()).collect();
    if ok.is_empty() {
        return Err(Error::invalid("no successful records"));
    }
    let lattice = subgroup_lattice(g)?;
    let m = g.exponent();
    let values: Vec<f64> = ok
        .iter()
        .map(|r| {
            sur_count_cyclic(&r.cyclic_factors_mod(m), g, &lattice)
                .to_f64()
                .unwrap_or(f64::INFINITY)
        })
        .collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let standard_error = (values.len() > 1).then(|| {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    });
    Ok(MomentEstimate {
        group: g.to_string(),
        estimate: mean,
        standard_error,
        trials: values.len(),
    })
}

pub fn write_report_csv(path: &Path, reports: &[DistributionReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "p",
        "group",
        "order",
        "count",
        "frequency",
        "wilson_low",
        "wilson_high",
        "cl_reference",
    ])?;
    for rep in reports {
        for row in &rep.rows {
            let name = if row.partition.is_empty() {
                "0".to_string()
            } else {
                format!("{:?}", row.partition)
            };
            w.write_record([
                rep.p.to_string(),
                name,
                row.order.to_string(),
                row.count.to_string(),
                format!("{:.6}", row.frequency),
                format!("{:.6}", row.wilson_low),
                format!("{:.6}", row.wilson_high),
                format!("{:.6}", row.cl_reference),
            ])?;
        }
        for (label, count, freq) in [
            ("other", rep.other_count, rep.other_frequency),
            ("infinite", rep.infinite_count, rep.infinite_frequency),
        ] {
            w.write_record([
                rep.p.to_string(),
                label.to_string(),
                String::new(),
                count.to_string(),
                format!("{freq:.6}"),
                String::new(),
                String::new(),
                String::new(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerifyLevel {
    Fast,
    Full,
}

impl FromStr for VerifyLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fast" => Ok(VerifyLevel::Fast),
            "full" => Ok(VerifyLevel::Full),
            _ => Err(Error::invalid(format!("unknown level {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Error,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub identity: String,
    pub status: Status,
    pub detail: String,
    pub elapsed_ms: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Ledger {
    pub level: VerifyLevel,
    pub entries: Vec<LedgerEntry>,
}

impl Ledger {
    pub fn all_passed(&self) -> bool {
        self.entries.iter().all(|e| e.status == Status::Pass)
    }
}

fn record(entries: &mut Vec<LedgerEntry>, identity: &str, check: impl FnOnce() -> Result<(bool, String)>) {
    let start = Instant::now();
    let (status, detail) = match check() {
        Ok((true, d)) => (Status::Pass, d),
        Ok((false, d)) => (Status::Fail, d),
        Err(e) => (Status::Error, e.to_string()),
    };
    entries.push(LedgerEntry {
        identity: identity.to_string(),
        status,
        detail,
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
    });
}

/// Explicitly summed `B_n^T B_n`.
pub fn summed_gram(n: usize, k: usize) -> crate::ExactMatrix {
    let mut g = crate::ExactMatrix::zeros(n, n);
    for b in all_row_indices(n, k) {
        let row = crate::structured_matrix::build_row(&b);
        for (&i, &mi) in row.multiplicities() {
            for (&j, &mj) in row.multiplicities() {
                *g.get_mut(i - 1, j - 1) += BigInt::from(mi * mj);
            }
        }
    }
    g
}

/// TV between `draws` sampler outputs and the exact law of `B_n[Y]` at small `n`.
pub fn sampler_tv_bn(n: usize, k: usize, draws: usize, seed: u64) -> Result<f64> {
    let family = BnFamily::new(n, k)?;
    let host = {
        let rows: Vec<Vec<i64>> = all_row_indices(n, k)
            .map(|b| crate::structured_matrix::build_row(&b).to_dense())
            .collect();
        crate::ExactMatrix::from_rows(&rows)
    };
    let exact = enumerate_distribution(&host, n)?;
    let tuples: Vec<RowIndex> = all_row_indices(n, k).collect();
    let index: BTreeMap<Vec<usize>, usize> = exact
        .iter()
        .enumerate()
        .map(|(i, (rows, _))| (rows.clone(), i))
        .collect();
    let sampler = VolumeSampler::new(&family, SamplerConfig::default())?;
    let mut counts = vec![0usize; exact.len()];
    for t in 0..draws as u64 {
        let mut rng = trial_rng(seed, t);
        let items = sampler.sample(&mut rng)?;
        let mut rows: Vec<usize> = items
            .iter()
            .map(|&x| {
                let b = family.expand(x, &mut rng);
                tuples.binary_search(&b).expect("tuple in [n]^k")
            })
            .collect();
        rows.sort_unstable();
        match index.get(&rows) {
            Some(&i) => counts[i] += 1,
            None => return Ok(1.0),
        }
    }
    let tv: f64 = exact
        .iter()
        .zip(&counts)
        .map(|((_, p), &c)| (c as f64 / draws as f64 - rational_to_f64(p)).abs())
        .sum();
    Ok(0.5 * tv)
}

/// Runs every exact identity at the chosen depth; failures are data.
pub fn verify_suite(level: VerifyLevel) -> Ledger {
    let full = level == VerifyLevel::Full;
    let mut entries = Vec::new();
    let max_n = if full { 8 } else { 6 };

    record(&mut entries, "gram_det", || {
        for k in [3, 4, 5, 7] {
            for n in 1..=max_n {
                if gram_det(n, k) != summed_gram(n, k).determinant() {
                    return Ok((false, format!("mismatch at n = {n}, k = {k}")));
                }
            }
        }
        Ok((true, format!("n <= {max_n}, k in {{3,4,5,7}}")))
    });

    let kalai_n = if full { 7 } else { 6 };
    record(&mut entries, "kalai", || {
        for r in [1, 2] {
            for n in r + 2..=kalai_n {
                let (lhs, rhs) = kalai_check(n, r)?;
                if lhs != rhs {
                    return Ok((false, format!("n = {n}, r = {r}: {lhs} != {rhs}")));
                }
            }
        }
        Ok((true, format!("n <= {kalai_n}, r in {{1,2}}")))
    });

    record(&mut entries, "oracle_vs_sampler", || {
        let (n, draws) = if full { (3, 100_000) } else { (2, 20_000) };
        let tv = sampler_tv_bn(n, 3, draws, 1)?;
        let limit = if full { 0.06 } else { 0.02 };
        Ok((tv <= limit, format!("n = {n}, k = 3, {draws} draws: TV = {tv:.4} (limit {limit})")))
    });

    record(&mut entries, "moment_cross_method", || {
        let groups: Vec<FiniteAbelianGroup> = if full {
            vec![
                FiniteAbelianGroup::cyclic(2),
                FiniteAbelianGroup::cyclic(3),
                FiniteAbelianGroup::from_cyclic_factors(&[2, 2]),
            ]
        } else {
            vec![FiniteAbelianGroup::cyclic(2), FiniteAbelianGroup::cyclic(3)]
        };
        let top = if full { 8 } else { 5 };
        for g in &groups {
            for k in [3, 4, 5] {
                for n in 1..=top {
                    if moment_exact(g, n, k)? != moment_bruteforce(g, n, k)? {
                        return Ok((false, format!("G = {g}, n = {n}, k = {k}")));
                    }
                }
            }
        }
        Ok((true, format!("{} groups, n <= {top}, k in {{3,4,5}}", groups.len())))
    });

    record(&mut entries, "intersection_formula", || {
        let n = if full { 3 } else { 2 };
        for r in 1..n {
            let formula = p_intersection_exact(n, 3, r)?;
            let brute = brute_force_ps(n, 3, |k_set, _| (1..=r).all(|i| in_t_ni(k_set, i)))?;
            if formula != brute {
                return Ok((false, format!("n = {n}, r = {r}: {formula} != {brute}")));
            }
        }
        Ok((true, format!("n = {n}, k = 3, all r < n")))
    });

    record(&mut entries, "zero_vector_normalization", || {
        let top = if full { 100 } else { 30 };
        let g = FiniteAbelianGroup::cyclic(2);
        for k in [3, 5] {
            for n in 1..=top {
                let p = prob_aq_zero(&TypeVector::zero(&g, n, k))?;
                if p != BigRational::from_integer(1.into()) {
                    return Ok((false, format!("n = {n}, k = {k}: {}", rational_to_string(&p))));
                }
            }
        }
        Ok((true, format!("n <= {top}, k in {{3,5}}")))
    });

    record(&mut entries, "kl_hessian", || {
        for g in [
            FiniteAbelianGroup::cyclic(2),
            FiniteAbelianGroup::cyclic(3),
            FiniteAbelianGroup::from_cyclic_factors(&[2, 2]),
        ] {
            for k in [3, 5] {
                let grad = kl_hessian_check(&g, k, 1e-4)?;
                let hess = kl_hessian_check(&g, k, 1e-3)?;
                let limit = 1e-3 * g.order() as f64;
                if grad.gradient_norm > 1e-6 || hess.hessian_deviation > limit {
                    return Ok((
                        false,
                        format!(
                            "G = {g}, k = {k}: gradient {:.2e}, deviation {:.2e}",
                            grad.gradient_norm, hess.hessian_deviation
                        ),
                    ));
                }
            }
        }
        Ok((true, "Z/2, Z/3, Z/2+Z/2; k in {3,5}".into()))
    });

    Ledger { level, entries }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedules() {
        assert_eq!(KSchedule::from_str("5").unwrap().k_for(100), 5);
        assert_eq!(KSchedule::from_str("loglog:3").unwrap().k_for(10), 3);
        assert_eq!(KSchedule::from_str("loglog:3").unwrap().k_for(1_000_000), 8);
        assert_eq!(KSchedule::from_str("power:0.5").unwrap().k_for(100), 10);
        assert!(KSchedule::from_str("fast:1").is_err());
    }

    #[test]
    fn n1_campaign_is_z3() {
        let cfg = ExperimentConfig::new(1, KSchedule::Constant { k: 3 }, 20, 9);
        let out = run_campaign(&cfg).unwrap();
        assert!(out.records.iter().all(|r| r.divisors == vec!["3".to_string()]));
        assert!(out.records.iter().all(|r| r.sylow[&3] == vec![1] && r.sylow[&2].is_empty()));
    }

    #[test]
    fn reproducible_records() {
        let cfg = ExperimentConfig::new(6, KSchedule::Constant { k: 3 }, 40, 77);
        let a = run_campaign(&cfg).unwrap().records;
        let b = run_campaign(&cfg).unwrap().records;
        assert_eq!(a, b);
    }

    #[test]
    fn wilson_bounds() {
        let (lo, hi) = wilson_interval(50, 100);
        assert!(lo < 0.5 && hi > 0.5 && lo > 0.39 && hi < 0.61);
        assert_eq!(wilson_interval(0, 10).0, 0.0);
    }

    #[test]
    fn report_edge_cases() {
        let rec = |divs: &[&str]| TrialRecord {
            trial_id: 0,
            seed: 0,
            n: 2,
            k: 3,
            det_zero: false,
            free_rank: 0,
            divisors: divs.iter().map(|s| s.to_string()).collect(),
            sylow: BTreeMap::new(),
            f2_corank: 0,
            attempts: 1,
            error: None,
            wall_time_ms: None,
        };
        let trivial = vec![rec(&[]), rec(&[])];
        let m = report_moment(&trivial, &FiniteAbelianGroup::cyclic(2)).unwrap();
        assert_eq!(m.estimate, 0.0);
        assert_eq!(report_moment(&trivial, &FiniteAbelianGroup::trivial()).unwrap().estimate, 1.0);
        let single = report_moment(&trivial[..1], &FiniteAbelianGroup::cyclic(2)).unwrap();
        assert!(single.standard_error.is_none());
        assert!(report_tv(&[], 2, 3).is_err());
        let rep = report_tv(&[rec(&["2"]), rec(&["12"]), rec(&["1024"])], 2, 3).unwrap();
        let total: f64 = rep.rows.iter().map(|r| r.frequency).sum::<f64>() + rep.other_frequency + rep.infinite_frequency;
        assert!((total - 1.0).abs() < 1e-12);
        assert!((0.0..=1.0).contains(&rep.total_variation));
    }
}
