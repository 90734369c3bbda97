//! The five batch commands. Each writes into `<out>/seed-<s>/` per seed plus a
//! few top-level files, and returns the process exit code.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fl_ntk_core::dataset::{generate, partition_iid, partition_skewed, ClientPartition, Dataset};
use fl_ntk_core::kernel::{gram_pair, infinite_spectrum, ntk_infinity, spectrum, Spectrum};
use fl_ntk_core::model::{init, ModelParams};
use fl_ntk_core::numerics::{streams, RngStream};
use fl_ntk_core::theory::{
    audit_contraction, claim_reference, contraction_factor, decompose_round, generalization_bound, gram_drift_bounds,
    local_deviation_bounds, movement_bounds, movement_vs_rkhs, round_radius, rounds_to_eps, seed_majority,
    BoundContext, BoundReport, RoundDecomposition,
};
use fl_ntk_core::trainer::{train_from, RecordLevel, TrainConfig, TrainTrace};
use fl_ntk_core::Error as CoreError;
use serde::Serialize;

use crate::config::{EtaLocal, PartitionMode, RunConfig};
use crate::error::{exit, CliError, Result};
use crate::formats::{self, write_text};

/// A contraction audit passes when at least this fraction of rounds hold.
pub const CONTRACTION_PASS_FRACTION: f64 = 0.9;

pub const CONFIG_ECHO: &str = "config.txt";

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("summary types serialize");
    text.push('\n');
    write_text(path, &text)
}

fn echo_config(cfg: &RunConfig, out: &Path) -> Result<()> {
    write_text(&out.join(CONFIG_ECHO), &cfg.to_text())
}

/// Dataset and partition for one seed, loaded from files when configured.
fn load_data(cfg: &RunConfig, seed: u64, clients: usize) -> Result<(Dataset, ClientPartition)> {
    let dataset = match &cfg.dataset {
        Some(path) => formats::read_dataset(path)?,
        None => generate(&cfg.distribution_spec(), cfg.n, cfg.d, &RngStream::new(seed, streams::DATA))?,
    };
    let partition = match &cfg.partition_file {
        Some(path) => {
            let part = formats::read_partition(path)?;
            if part.num_clients() != clients || part.num_points() != dataset.len() {
                return Err(CliError::Config(format!(
                    "partition file {} has N={} over {} points, run needs N={clients} over {}",
                    path.display(),
                    part.num_clients(),
                    part.num_points(),
                    dataset.len()
                )));
            }
            part
        }
        None => partition_for(cfg, &dataset, seed, clients)?,
    };
    Ok((dataset, partition))
}

fn partition_for(cfg: &RunConfig, dataset: &Dataset, seed: u64, clients: usize) -> Result<ClientPartition> {
    let stream = RngStream::new(seed, streams::PARTITION);
    Ok(match cfg.partition {
        PartitionMode::Iid => partition_iid(dataset.len(), clients, &stream)?,
        PartitionMode::Skewed(alpha) => partition_skewed(dataset.labels(), clients, alpha, &stream)?,
    })
}

fn initial_params(cfg: &RunConfig, width: usize, dataset: &Dataset, seed: u64) -> Result<ModelParams> {
    Ok(init(width, dataset.dim(), cfg.sigma, &RngStream::new(seed, streams::INIT))?)
}

fn initial_spectrum(dataset: &Dataset, params: &ModelParams) -> Result<Spectrum> {
    Ok(spectrum(&gram_pair(dataset, params.weights(), params.weights())?)?)
}

/// Step sizes, contraction factor and round count for one run.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Schedule {
    pub eta_local: f64,
    pub eta_global: f64,
    pub contraction_factor: f64,
    pub in_regime: bool,
    pub rounds: usize,
}

fn rates(cfg: &RunConfig, s0: &Spectrum, n: usize) -> Result<(f64, f64)> {
    let k = cfg.local_steps;
    Ok(match cfg.eta_local {
        EtaLocal::Prescribed => {
            fl_ntk_core::trainer::prescribed_rates(s0.lambda_min, s0.condition_number, n, k, cfg.safety_c)?
        }
        EtaLocal::Practical => (1.0 / (k as f64 * s0.lambda_max), cfg.eta_global),
        EtaLocal::Fixed(v) => (v, cfg.eta_global),
    })
}

pub fn schedule(cfg: &RunConfig, s0: &Spectrum, n: usize, clients: usize) -> Result<Schedule> {
    let (eta_local, eta_global) = rates(cfg, s0, n)?;
    let c = contraction_factor(s0.lambda_min, eta_local, eta_global, cfg.local_steps, clients)?;
    let rounds = match cfg.rounds {
        Some(r) => r,
        None => {
            if !c.in_regime {
                return Err(CliError::Config(format!(
                    "contraction factor {} is outside (0, 1); set rounds explicitly",
                    c.factor
                )));
            }
            let t = rounds_to_eps(c.factor, cfg.eps)?;
            if t > cfg.max_rounds as u64 {
                return Err(CliError::Config(format!(
                    "reaching eps={} needs {t} rounds at factor {}, above max_rounds={}",
                    cfg.eps, c.factor, cfg.max_rounds
                )));
            }
            t as usize
        }
    };
    Ok(Schedule { eta_local, eta_global, contraction_factor: c.factor, in_regime: c.in_regime, rounds })
}

fn train_config(cfg: &RunConfig, sched: &Schedule, seed: u64, clients: usize, target_eps: Option<f64>) -> TrainConfig {
    TrainConfig {
        clients,
        local_steps: cfg.local_steps,
        rounds: sched.rounds,
        eta_local: sched.eta_local,
        eta_global: sched.eta_global,
        width: cfg.width,
        sigma: cfg.sigma,
        seed,
        record_level: cfg.record,
        target_eps,
    }
}

// gen-data

#[derive(Serialize)]
struct DataSummary {
    seed: u64,
    n: usize,
    d: usize,
    clients: usize,
    partition_sizes: Vec<usize>,
    lambda_min_infinite: f64,
    condition_number_initial: f64,
}

pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<i32> {
    echo_config(cfg, out)?;
    for &seed in &cfg.seeds {
        let dir = seed_dir(out, seed);
        let (ds, part) = load_data(cfg, seed, cfg.clients)?;
        write_text(&dir.join("dataset.csv"), &formats::dataset_to_string(&ds))?;
        write_text(&dir.join("partition.csv"), &formats::partition_to_string(&part))?;
        let inf = infinite_spectrum(&ds)?;
        let s0 = initial_spectrum(&ds, &initial_params(cfg, cfg.width, &ds, seed)?)?;
        println!(
            "seed {seed}: n={} d={} N={} sizes={:?} lambda_min(H_inf)={} kappa(H(0))={}",
            ds.len(),
            ds.dim(),
            part.num_clients(),
            part.sizes(),
            inf.lambda_min,
            s0.condition_number
        );
        write_json(
            &dir.join("summary.json"),
            &DataSummary {
                seed,
                n: ds.len(),
                d: ds.dim(),
                clients: part.num_clients(),
                partition_sizes: part.sizes(),
                lambda_min_infinite: inf.lambda_min,
                condition_number_initial: s0.condition_number,
            },
        )?;
    }
    Ok(exit::SUCCESS)
}

// kernel

#[derive(Serialize)]
struct SpectrumJson {
    lambda_min: f64,
    lambda_max: f64,
    condition_number: f64,
}

impl From<Spectrum> for SpectrumJson {
    fn from(s: Spectrum) -> Self {
        Self { lambda_min: s.lambda_min, lambda_max: s.lambda_max, condition_number: s.condition_number }
    }
}

#[derive(Serialize)]
struct GeneralizationJson {
    delta: f64,
    slack: f64,
    complexity: f64,
    leading: f64,
    concentration: f64,
    total: f64,
}

#[derive(Serialize)]
struct WidthGap {
    width: usize,
    frobenius_gap: f64,
}

#[derive(Serialize)]
struct KernelSummary {
    seed: u64,
    n: usize,
    width: usize,
    infinite: SpectrumJson,
    initial: SpectrumJson,
    frobenius_gap: f64,
    width_sweep: Vec<WidthGap>,
    generalization: Option<GeneralizationJson>,
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    if values.len() % 2 == 1 {
        values[mid]
    } else {
        0.5 * (values[mid - 1] + values[mid])
    }
}

pub fn kernel(cfg: &RunConfig, out: &Path) -> Result<i32> {
    echo_config(cfg, out)?;
    let mut sweep_rows: Vec<(usize, u64, f64)> = Vec::new();
    for &seed in &cfg.seeds {
        let dir = seed_dir(out, seed);
        let (ds, _) = load_data(cfg, seed, cfg.clients)?;
        let inf_spec = infinite_spectrum(&ds)?;
        let h_inf = ntk_infinity(&ds);
        let params = initial_params(cfg, cfg.width, &ds, seed)?;
        let h0 = gram_pair(&ds, params.weights(), params.weights())?;
        let s0 = spectrum(&h0)?;
        let gap = h0.matrix.sub(&h_inf.matrix)?.frobenius_norm();
        write_text(&dir.join("h_inf.csv"), &formats::gram_to_string(&h_inf))?;
        write_text(&dir.join("h0.csv"), &formats::gram_to_string(&h0))?;

        let mut width_sweep = Vec::new();
        for &w in &cfg.width_sweep {
            let p = initial_params(cfg, w, &ds, seed)?;
            let g = gram_pair(&ds, p.weights(), p.weights())?;
            let frobenius_gap = g.matrix.sub(&h_inf.matrix)?.frobenius_norm();
            sweep_rows.push((w, seed, frobenius_gap));
            width_sweep.push(WidthGap { width: w, frobenius_gap });
        }
        let generalization = if cfg.generalization {
            let g = generalization_bound(&h_inf, ds.labels(), cfg.delta, cfg.generalization_slack)?;
            println!(
                "seed {seed}: generalization bound {} (leading {}, concentration {})",
                g.total, g.leading, g.concentration
            );
            Some(GeneralizationJson {
                delta: cfg.delta,
                slack: cfg.generalization_slack,
                complexity: g.complexity,
                leading: g.leading,
                concentration: g.concentration,
                total: g.total,
            })
        } else {
            None
        };
        println!(
            "seed {seed}: H_inf lambda_min={} lambda_max={} kappa={}; H(0) lambda_min={} lambda_max={} kappa={}; |H(0)-H_inf|_F={gap}",
            inf_spec.lambda_min,
            inf_spec.lambda_max,
            inf_spec.condition_number,
            s0.lambda_min,
            s0.lambda_max,
            s0.condition_number
        );
        write_json(
            &dir.join("summary.json"),
            &KernelSummary {
                seed,
                n: ds.len(),
                width: cfg.width,
                infinite: inf_spec.into(),
                initial: s0.into(),
                frobenius_gap: gap,
                width_sweep,
                generalization,
            },
        )?;
    }
    if !cfg.width_sweep.is_empty() {
        let mut text = String::from("width,median_frobenius_gap\n");
        let mut detail = String::from("width,seed,frobenius_gap\n");
        for &w in &cfg.width_sweep {
            let mut gaps: Vec<f64> = sweep_rows.iter().filter(|r| r.0 == w).map(|r| r.2).collect();
            writeln!(text, "{w},{}", median(&mut gaps)).unwrap();
        }
        for (w, seed, g) in &sweep_rows {
            writeln!(detail, "{w},{seed},{g}").unwrap();
        }
        write_text(&out.join("width_sweep.csv"), &text)?;
        write_text(&out.join("width_sweep_seeds.csv"), &detail)?;
    }
    Ok(exit::SUCCESS)
}

// train and verify

#[derive(Clone, Debug, Serialize)]
pub struct AuditSummary {
    pub name: String,
    pub checked: usize,
    pub holding: usize,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct AuditOutcome {
    pub reports: Vec<BoundReport>,
    pub decompositions: Vec<(RoundDecomposition, f64)>,
    pub summaries: Vec<AuditSummary>,
}

impl AuditOutcome {
    pub fn passed(&self) -> bool {
        self.summaries.iter().all(|s| s.passed)
    }
}

fn summarize(name: &str, reports: &[BoundReport], passed: impl FnOnce(usize, usize) -> bool) -> AuditSummary {
    let relevant: Vec<&BoundReport> = reports.iter().filter(|r| r.name == name).collect();
    let holding = relevant.iter().filter(|r| r.holds).count();
    AuditSummary { name: name.into(), checked: relevant.len(), holding, passed: passed(relevant.len(), holding) }
}

/// Every audit the trace's record level supports.
pub fn run_audits(
    cfg: &RunConfig,
    ds: &Dataset,
    part: &ClientPartition,
    trace: &TrainTrace,
    s0: &Spectrum,
    factor: f64,
) -> Result<AuditOutcome> {
    let n = ds.len();
    let mut reports = Vec::new();
    let mut summaries = Vec::new();
    let mut decompositions = Vec::new();
    let all = |checked: usize, holding: usize| checked == holding;

    if trace.rounds.len() >= 2 {
        let audit = audit_contraction(trace, factor)?;
        reports.extend(audit.reports);
        summaries.push(summarize("contraction", &reports, |checked, holding| {
            checked == 0 || holding as f64 >= CONTRACTION_PASS_FRACTION * checked as f64
        }));
    }
    if trace.config.record_level >= RecordLevel::Bounds {
        reports.extend(movement_bounds(trace, n, s0.lambda_min)?);
        reports.extend(local_deviation_bounds(trace, n)?);
        for name in ["global_movement", "local_movement", "local_deviation"] {
            summaries.push(summarize(name, &reports, all));
        }
    }
    if trace.config.record_level == RecordLevel::FullStates {
        reports.extend(gram_drift_bounds(trace, ds, part)?);
        for t in 0..trace.completed_rounds() {
            let radius = round_radius(trace, t)?;
            let dec = decompose_round(trace, t, ds, part, radius)?;
            reports.push(BoundReport::new(
                "decomposition_dominance",
                -dec.c1,
                dec.c2.abs() + dec.c3.abs() + dec.c4.abs(),
                BoundContext::round(t),
                1.0,
            ));
            let reference = claim_reference(trace, s0.lambda_min, dec.residual_sq_before);
            decompositions.push((dec, reference));
        }
        for name in ["gram_drift", "gram_perp", "decomposition_dominance"] {
            summaries.push(summarize(name, &reports, all));
        }
    }
    if cfg.generalization {
        reports.push(movement_vs_rkhs(trace, &ntk_infinity(ds), ds.labels(), cfg.rkhs_slack)?);
        summaries.push(summarize("rkhs_movement", &reports, all));
    }
    Ok(AuditOutcome { reports, decompositions, summaries })
}

fn decompositions_to_string(rows: &[(RoundDecomposition, f64)]) -> String {
    let mut out = String::from(
        "round,radius,c1,c2,c3,c4,residual_sq_before,residual_sq_after,identity_error,dominance_holds,claim_reference\n",
    );
    for (d, reference) in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            d.round,
            d.radius,
            d.c1,
            d.c2,
            d.c3,
            d.c4,
            d.residual_sq_before,
            d.residual_sq_after,
            d.identity_error,
            d.dominance_holds(),
            reference
        )
        .unwrap();
    }
    out
}

#[derive(Serialize)]
struct TrainSummary {
    seed: u64,
    clients: usize,
    local_steps: usize,
    width: usize,
    lambda_min: f64,
    condition_number: f64,
    schedule: Schedule,
    rounds_completed: usize,
    initial_residual_sq: f64,
    final_residual_sq: f64,
    eps: f64,
    rounds_to_eps: Option<usize>,
    diverged: bool,
    audits: Vec<AuditSummary>,
    passed: bool,
}

#[derive(Serialize)]
struct RunSummary {
    command: &'static str,
    seeds: Vec<u64>,
    passed: Vec<bool>,
    diverged: Vec<bool>,
    majority_passed: bool,
}

/// Writes the trace files of a finished or diverged run.
fn write_trace(dir: &Path, trace: &TrainTrace) -> Result<()> {
    write_text(&dir.join("trace.csv"), &formats::trace_to_string(&trace.rounds))?;
    if trace.config.record_level >= RecordLevel::Bounds {
        write_text(&dir.join("local.csv"), &formats::local_to_string(&trace.local))?;
    }
    write_text(&dir.join("params_final.csv"), &formats::params_with_weights(&trace.initial, &trace.final_weights))
}

struct SeedResult {
    passed: bool,
    diverged: bool,
}

#[allow(clippy::too_many_arguments)]
fn finish_seed(
    cfg: &RunConfig,
    dir: &Path,
    seed: u64,
    ds: &Dataset,
    part: &ClientPartition,
    s0: &Spectrum,
    sched: Schedule,
    outcome: std::result::Result<TrainTrace, CoreError>,
    prefix: &str,
) -> Result<SeedResult> {
    let (trace, diverged) = match outcome {
        Ok(trace) => (trace, false),
        Err(CoreError::Diverged { trace, round, .. }) => {
            println!("seed {seed}: diverged at round {round}");
            (*trace, true)
        }
        Err(e) => return Err(e.into()),
    };
    if prefix.is_empty() {
        write_trace(dir, &trace)?;
    }
    let audits = if cfg.audits && !diverged {
        let outcome = run_audits(cfg, ds, part, &trace, s0, sched.contraction_factor)?;
        write_text(&dir.join(format!("{prefix}bounds.csv")), &formats::bounds_to_string(&outcome.reports))?;
        if !outcome.decompositions.is_empty() {
            write_text(
                &dir.join(format!("{prefix}decomposition.csv")),
                &decompositions_to_string(&outcome.decompositions),
            )?;
        }
        Some(outcome)
    } else {
        None
    };
    let summaries = audits.as_ref().map(|a| a.summaries.clone()).unwrap_or_default();
    let passed = !diverged && audits.as_ref().is_none_or(AuditOutcome::passed);
    let summary = TrainSummary {
        seed,
        clients: trace.config.clients,
        local_steps: trace.config.local_steps,
        width: trace.config.width,
        lambda_min: s0.lambda_min,
        condition_number: s0.condition_number,
        schedule: sched,
        rounds_completed: trace.completed_rounds(),
        initial_residual_sq: trace.initial_residual_sq(),
        final_residual_sq: trace.final_residual_sq(),
        eps: cfg.eps,
        rounds_to_eps: trace.rounds_to_reach(cfg.eps),
        diverged,
        audits: summaries.clone(),
        passed,
    };
    write_json(&dir.join(format!("{prefix}summary.json")), &summary)?;
    let audit_text: Vec<String> = summaries
        .iter()
        .map(|s| format!("{} {}/{}{}", s.name, s.holding, s.checked, if s.passed { "" } else { " FAIL" }))
        .collect();
    println!(
        "seed {seed}: rounds={} residual {} -> {} {}",
        trace.completed_rounds(),
        trace.initial_residual_sq(),
        trace.final_residual_sq(),
        audit_text.join(", ")
    );
    Ok(SeedResult { passed, diverged })
}

fn exit_for(cfg: &RunConfig, results: &[SeedResult]) -> i32 {
    if results.iter().any(|r| r.diverged) {
        exit::DIVERGED
    } else if cfg.audits && !seed_majority(&results.iter().map(|r| r.passed).collect::<Vec<_>>()) {
        exit::AUDIT_FAILED
    } else {
        exit::SUCCESS
    }
}

fn write_run_summary(path: &Path, command: &'static str, cfg: &RunConfig, results: &[SeedResult]) -> Result<()> {
    let passed: Vec<bool> = results.iter().map(|r| r.passed).collect();
    write_json(
        path,
        &RunSummary {
            command,
            seeds: cfg.seeds.clone(),
            majority_passed: seed_majority(&passed),
            passed,
            diverged: results.iter().map(|r| r.diverged).collect(),
        },
    )
}

pub fn train(cfg: &RunConfig, out: &Path) -> Result<i32> {
    echo_config(cfg, out)?;
    let mut results = Vec::new();
    for &seed in &cfg.seeds {
        let dir = seed_dir(out, seed);
        let (ds, part) = load_data(cfg, seed, cfg.clients)?;
        let initial = initial_params(cfg, cfg.width, &ds, seed)?;
        write_text(&dir.join("dataset.csv"), &formats::dataset_to_string(&ds))?;
        write_text(&dir.join("partition.csv"), &formats::partition_to_string(&part))?;
        write_text(&dir.join("params_init.csv"), &formats::params_to_string(&initial))?;
        let s0 = initial_spectrum(&ds, &initial)?;
        let sched = schedule(cfg, &s0, ds.len(), cfg.clients)?;
        let tcfg = train_config(cfg, &sched, seed, cfg.clients, None);
        let outcome = train_from(&tcfg, &ds, &part, initial);
        results.push(finish_seed(cfg, &dir, seed, &ds, &part, &s0, sched, outcome, "")?);
    }
    write_run_summary(&out.join("summary.json"), "train", cfg, &results)?;
    Ok(exit_for(cfg, &results))
}

/// Re-audits a `train` output directory: replays each seed from its recorded
/// data and initial weights, checks the replay reproduces the recorded trace
/// files byte for byte, and writes `verify_*` files next to them.
pub fn verify(dir: &Path) -> Result<i32> {
    let mut cfg = RunConfig::from_file(&dir.join(CONFIG_ECHO))?;
    cfg.dataset = None;
    cfg.partition_file = None;
    cfg.validate()?;
    let mut results = Vec::new();
    for &seed in &cfg.seeds {
        let sdir = seed_dir(dir, seed);
        let ds = formats::read_dataset(&sdir.join("dataset.csv"))?;
        let part = formats::read_partition(&sdir.join("partition.csv"))?;
        let initial = formats::read_params(&sdir.join("params_init.csv"))?;
        let recorded_trace = formats::read_text(&sdir.join("trace.csv"))?;
        formats::parse_trace(&recorded_trace, &sdir.join("trace.csv"))?;
        let recorded_local = if cfg.record >= RecordLevel::Bounds {
            let path = sdir.join("local.csv");
            let text = formats::read_text(&path)?;
            formats::parse_local(&text, &path)?;
            Some(text)
        } else {
            None
        };
        let s0 = initial_spectrum(&ds, &initial)?;
        let sched = schedule(&cfg, &s0, ds.len(), part.num_clients())?;
        let tcfg = train_config(&cfg, &sched, seed, part.num_clients(), None);
        let outcome = train_from(&tcfg, &ds, &part, initial);
        let replay = match &outcome {
            Ok(t) => Some(t),
            Err(CoreError::Diverged { trace, .. }) => Some(trace.as_ref()),
            Err(_) => None,
        };
        let matches = replay.is_some_and(|t| {
            formats::trace_to_string(&t.rounds) == recorded_trace
                && recorded_local.as_ref().is_none_or(|l| *l == formats::local_to_string(&t.local))
        });
        if !matches {
            println!("seed {seed}: replay does not reproduce the recorded trace");
        }
        let mut result = finish_seed(&cfg, &sdir, seed, &ds, &part, &s0, sched, outcome, "verify_")?;
        result.passed &= matches;
        results.push(result);
    }
    write_run_summary(&dir.join("verify_summary.json"), "verify", &cfg, &results)?;
    Ok(exit_for(&cfg, &results))
}

// sweep-clients

#[derive(Serialize)]
struct SweepRow {
    clients: usize,
    seed: u64,
    rounds_to_eps: Option<usize>,
}

#[derive(Serialize)]
struct SweepMedian {
    clients: usize,
    median_rounds_to_eps: f64,
}

#[derive(Serialize)]
struct SweepSummary {
    eps: f64,
    rows: Vec<SweepRow>,
    medians: Vec<SweepMedian>,
    non_decreasing: bool,
}

pub fn sweep_clients(cfg: &RunConfig, out: &Path) -> Result<i32> {
    echo_config(cfg, out)?;
    let mut rows = Vec::new();
    let mut diverged = false;
    for &seed in &cfg.seeds {
        let (ds, _) = load_data(cfg, seed, 1)?;
        let initial = initial_params(cfg, cfg.width, &ds, seed)?;
        let s0 = initial_spectrum(&ds, &initial)?;
        for &clients in &cfg.clients_list {
            if clients > ds.len() {
                return Err(CliError::Config(format!("{clients} clients for {} points", ds.len())));
            }
            let part = partition_for(cfg, &ds, seed, clients)?;
            let (eta_local, eta_global) = rates(cfg, &s0, ds.len())?;
            let c = contraction_factor(s0.lambda_min, eta_local, eta_global, cfg.local_steps, clients)?;
            let sched = Schedule {
                eta_local,
                eta_global,
                contraction_factor: c.factor,
                in_regime: c.in_regime,
                rounds: cfg.rounds.unwrap_or(cfg.max_rounds),
            };
            let tcfg = TrainConfig {
                record_level: RecordLevel::LossOnly,
                ..train_config(cfg, &sched, seed, clients, Some(cfg.eps))
            };
            let rounds_to_eps = match train_from(&tcfg, &ds, &part, initial.clone()) {
                Ok(trace) => trace.rounds_to_reach(cfg.eps),
                Err(CoreError::Diverged { round, .. }) => {
                    println!("seed {seed}, N={clients}: diverged at round {round}");
                    diverged = true;
                    None
                }
                Err(e) => return Err(e.into()),
            };
            println!(
                "seed {seed}, N={clients}: rounds to eps {}",
                rounds_to_eps.map_or("not reached".into(), |r| r.to_string())
            );
            rows.push(SweepRow { clients, seed, rounds_to_eps });
        }
    }
    let mut detail = String::from("clients,seed,rounds_to_eps\n");
    for r in &rows {
        writeln!(detail, "{},{},{}", r.clients, r.seed, r.rounds_to_eps.map_or("NA".into(), |v| v.to_string()))
            .unwrap();
    }
    let mut medians = Vec::new();
    let mut text = String::from("clients,median_rounds_to_eps\n");
    for &clients in &cfg.clients_list {
        let mut values: Vec<f64> = rows
            .iter()
            .filter(|r| r.clients == clients)
            .map(|r| r.rounds_to_eps.map_or(f64::INFINITY, |v| v as f64))
            .collect();
        let m = median(&mut values);
        writeln!(text, "{clients},{m}").unwrap();
        medians.push(SweepMedian { clients, median_rounds_to_eps: m });
    }
    let non_decreasing = medians.windows(2).all(|w| w[1].median_rounds_to_eps >= w[0].median_rounds_to_eps);
    write_text(&out.join("sweep.csv"), &detail)?;
    write_text(&out.join("sweep_summary.csv"), &text)?;
    write_json(&out.join("summary.json"), &SweepSummary { eps: cfg.eps, rows, medians, non_decreasing })?;
    Ok(if diverged { exit::DIVERGED } else { exit::SUCCESS })
}
