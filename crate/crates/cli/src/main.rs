use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use cokernel::abelian_groups::{cl_corank_probability, cl_probability_p_group, p_groups_up_to, FiniteAbelianGroup, DEFAULT_CL_DEPTH};
use cokernel::exact::{rational_to_f64, rational_to_string};
use cokernel::experiment::{
    read_trials, report_tv, run_campaign, verify_suite, write_report_csv, ExperimentConfig, KSchedule, Model,
    OutputPaths, VerifyLevel,
};
use cokernel::kernel_defect::{asymptotic_lower_bound, bonferroni_lower, mc_corank_tail, p_intersection_exact, u_count};
use cokernel::moment_engine::{moment_bruteforce, moment_exact};
use cokernel::snf_cokernel::cokernel;
use cokernel::volume_sampler::{trial_rng, BnSampler, HypertreeSampler, PrecisionMode, SamplerConfig};

/// Cokernels of random sparse integer matrices.
#[derive(Parser)]
#[command(name = "cokernels", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw matrices and print them with their cokernels.
    Sample(SampleArgs),
    /// Run a seeded Monte Carlo campaign and write trials and reports.
    Campaign(CampaignArgs),
    /// Exact E #Sur(cok A_n, G).
    MomentExact(MomentArgs),
    /// Cohen–Lenstra probabilities of small p-groups.
    ClTable(ClArgs),
    /// F_2 kernel defect: intersection probabilities and corank bounds.
    Defect(DefectArgs),
    /// Run the exact-identity suite; exit status 1 if any identity fails.
    Verify(VerifyArgs),
    /// Rebuild distribution reports from a trials file.
    Report(ReportArgs),
}

#[derive(Args)]
struct KArgs {
    /// Constant row weight.
    #[arg(long, conflicts_with = "k_schedule")]
    k: Option<usize>,
    /// `const:K`, `loglog:C` (ceil(C log log n)) or `power:E` (ceil(n^E)).
    #[arg(long)]
    k_schedule: Option<String>,
}

impl KArgs {
    fn schedule(&self) -> Result<KSchedule> {
        Ok(match (&self.k, &self.k_schedule) {
            (Some(k), _) => KSchedule::Constant { k: *k },
            (None, Some(s)) => s.parse()?,
            (None, None) => KSchedule::Constant { k: 3 },
        })
    }
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long, default_value = "bn_matrix")]
    model: String,
    #[arg(long)]
    n: usize,
    #[command(flatten)]
    k: KArgs,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "float64")]
    precision: String,
}

#[derive(Args)]
struct CampaignArgs {
    #[arg(long, default_value = "bn_matrix")]
    model: String,
    #[arg(long)]
    n: usize,
    #[command(flatten)]
    k: KArgs,
    /// Prime to report on; repeatable.
    #[arg(long = "prime", default_values_t = [2u64, 3])]
    primes: Vec<u64>,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "float64")]
    precision: String,
    /// Individual groups up to |G| <= p^cap.
    #[arg(long, default_value_t = 4)]
    cap: u32,
    /// Output directory for trials.jsonl, report.csv and report.json.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record per-trial wall time (makes trial files non-reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct MomentArgs {
    /// Cyclic factors of G, e.g. `2` or `2,2`.
    #[arg(long, default_value = "2")]
    group: String,
    #[arg(long)]
    n: u64,
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Also evaluate by enumerating q in G^n.
    #[arg(long)]
    bruteforce: bool,
}

#[derive(Args)]
struct ClArgs {
    #[arg(long, default_value_t = 2)]
    prime: u64,
    #[arg(long, default_value_t = 4)]
    cap: u32,
    /// Also print the corank law at p = 2 up to this corank.
    #[arg(long)]
    corank: Option<u32>,
}

#[derive(Args)]
struct DefectArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 1)]
    r: usize,
    /// Monte Carlo trials for the corank tail; skipped when absent.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value = "fast")]
    level: String,
    /// Write the ledger as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// trials.jsonl written by `campaign`.
    #[arg(long)]
    trials_file: PathBuf,
    #[arg(long = "prime", default_values_t = [2u64, 3])]
    primes: Vec<u64>,
    #[arg(long, default_value_t = 4)]
    cap: u32,
    /// Write the CSV table here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_group(s: &str) -> Result<FiniteAbelianGroup> {
    let factors = s
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse::<u64>().with_context(|| format!("bad factor {t:?}")))
        .collect::<Result<Vec<_>>>()?;
    if factors.contains(&0) {
        bail!("group factors must be positive");
    }
    Ok(FiniteAbelianGroup::from_cyclic_factors(&factors))
}

fn print(v: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn sample(a: SampleArgs) -> Result<()> {
    let model: Model = a.model.parse()?;
    let precision: PrecisionMode = a.precision.parse()?;
    let config = SamplerConfig {
        seed: a.seed,
        precision_mode: precision,
        ..SamplerConfig::default()
    };
    let k = a.k.schedule()?.k_for(a.n);
    for t in 0..a.count as u64 {
        let mut rng = trial_rng(a.seed, t);
        let (rows, matrix) = match model {
            Model::BnMatrix => {
                let (y, m) = BnSampler::new(a.n, k, config.clone())?.sample(&mut rng)?;
                (serde_json::to_value(y.items().iter().map(|b| b.entries().to_vec()).collect::<Vec<_>>())?, m)
            }
            Model::Hypertree => {
                let (y, m) = HypertreeSampler::new(a.n, config.clone())?.sample(&mut rng)?;
                (serde_json::to_value(y.items().iter().map(|f| f.vertices().to_vec()).collect::<Vec<_>>())?, m)
            }
        };
        let cok = cokernel(&matrix);
        let line = json!({
            "trial_id": t,
            "rows": rows,
            "matrix": matrix.to_i64_rows(),
            "cokernel": cok,
        });
        println!("{}", serde_json::to_string(&line)?);
    }
    Ok(())
}

fn campaign(a: CampaignArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::new(a.n, a.k.schedule()?, a.trials, a.seed);
    cfg.model = a.model.parse()?;
    cfg.primes = a.primes;
    cfg.precision_mode = a.precision.parse()?;
    cfg.cap_log = a.cap;
    cfg.record_timing = a.timing;
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        cfg.output = OutputPaths::in_dir(dir);
    }
    let outcome = run_campaign(&cfg)?;
    let failed = outcome.records.iter().filter(|r| r.failed()).count();
    let summary: Vec<_> = outcome
        .reports
        .iter()
        .map(|r| {
            json!({
                "p": r.p,
                "total_variation": r.total_variation,
                "infinite": r.infinite_count,
                "other": r.other_count,
                "moments": r.moments,
            })
        })
        .collect();
    print(&json!({ "n": cfg.n, "k": cfg.k(), "trials": cfg.trials, "failed": failed, "reports": summary }))
}

fn moment(a: MomentArgs) -> Result<()> {
    let g = parse_group(&a.group)?;
    let m = moment_exact(&g, a.n, a.k)?;
    let mut out = json!({
        "group": g.to_string(),
        "n": a.n,
        "k": a.k,
        "moment": rational_to_string(&m),
        "moment_f64": rational_to_f64(&m),
    });
    if a.bruteforce {
        let b = moment_bruteforce(&g, a.n, a.k)?;
        out["bruteforce"] = json!(rational_to_string(&b));
        out["agree"] = json!(b == m);
    }
    print(&out)
}

fn cl_table(a: ClArgs) -> Result<()> {
    if !cokernel::exact::is_prime(a.prime) {
        bail!("{} is not prime", a.prime);
    }
    let groups: Vec<_> = p_groups_up_to(a.prime, a.cap)
        .into_iter()
        .map(|g| {
            json!({
                "partition": g.partition,
                "group": FiniteAbelianGroup::from_p_group(&g).to_string(),
                "probability": cl_probability_p_group(&g, DEFAULT_CL_DEPTH),
            })
        })
        .collect();
    let mut out = json!({ "p": a.prime, "cap": a.cap, "groups": groups });
    if let Some(max_r) = a.corank {
        out["corank_law"] = json!((0..=max_r)
            .map(|r| json!({ "corank": r, "probability": cl_corank_probability(r, DEFAULT_CL_DEPTH) }))
            .collect::<Vec<_>>());
    }
    print(&out)
}

fn defect(a: DefectArgs) -> Result<()> {
    let p = p_intersection_exact(a.n, a.k, a.r)?;
    let b = bonferroni_lower(a.n, a.k, a.r)?;
    let mut out = json!({
        "n": a.n,
        "k": a.k,
        "r": a.r,
        "u_count": u_count(a.n, a.k, a.r)?.to_string(),
        "p_intersection": rational_to_f64(&p),
        "bonferroni_lower": rational_to_f64(&b),
    });
    if a.n <= 50 {
        out["p_intersection_exact"] = json!(rational_to_string(&p));
        out["bonferroni_lower_exact"] = json!(rational_to_string(&b));
    }
    if let Ok(v) = asymptotic_lower_bound(a.k, a.r) {
        out["asymptotic_lower_bound"] = json!(v);
    }
    if let Some(trials) = a.trials {
        out["monte_carlo"] = serde_json::to_value(mc_corank_tail(a.n, a.k, a.r, trials, a.seed)?)?;
    }
    print(&out)
}

fn verify(a: VerifyArgs) -> Result<bool> {
    let level: VerifyLevel = a.level.parse()?;
    let ledger = verify_suite(level);
    for e in &ledger.entries {
        let tag = match e.status {
            cokernel::experiment::Status::Pass => "PASS",
            cokernel::experiment::Status::Fail => "FAIL",
            cokernel::experiment::Status::Error => "ERROR",
        };
        eprintln!("{tag:5} {:28} {:>10.1} ms  {}", e.identity, e.elapsed_ms, e.detail);
    }
    let text = serde_json::to_string_pretty(&ledger)?;
    match &a.out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?,
        None => println!("{text}"),
    }
    Ok(ledger.all_passed())
}

fn report(a: ReportArgs) -> Result<()> {
    let records = read_trials(&a.trials_file)?;
    let reports = a
        .primes
        .iter()
        .map(|&p| report_tv(&records, p, a.cap))
        .collect::<cokernel::Result<Vec<_>>>()?;
    if let Some(path) = &a.out {
        write_report_csv(path, &reports)?;
    }
    print(&serde_json::to_value(&reports)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sample(a) => sample(a),
        Command::Campaign(a) => campaign(a),
        Command::MomentExact(a) => moment(a),
        Command::ClTable(a) => cl_table(a),
        Command::Defect(a) => defect(a),
        Command::Report(a) => report(a),
        Command::Verify(a) => match verify(a) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(1),
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
