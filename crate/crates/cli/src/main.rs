//! Batch experiment runner: scenario configs in, covers / learning reports /
//! validator tables out.
//!
//! A scenario file holds one scenario object or a list of them. Every
//! output embeds the seed, a hash of the scenario config and the constants
//! in force, so runs are attributable; under a fixed seed the cover, learn
//! and verify outputs are byte-identical across runs (bench rows carry
//! wall-clock timings and are exempt).
//!
//! Exit codes: 0 success, 2 config error, 3 assumption-verifier failure,
//! 4 budget or grid overflow.

use clap::Parser;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use siirv_lab::approx::{self, GaussianParams};
use siirv_lab::catalog;
use siirv_lab::covers::{self, CoverError};
use siirv_lab::expfam::{self, ExpFamilySpec, ParamVector};
use siirv_lab::learning::{self, LearnConfig, LearnError};
use siirv_lab::pmf_core::{self, TableSampler};
use siirv_lab::rng::SplitRng;
use siirv_lab::Constants;

#[derive(Parser)]
#[command(name = "siirv-lab", about = "Cover and learning experiments for integer sums")]
struct Args {
    /// Scenario JSON file (single object or list).
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory for CSV/JSON artifacts.
    #[arg(long)]
    out: PathBuf,
    /// Scenario-level parallelism.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Replace every scenario's seed.
    #[arg(long)]
    seed_override: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Kind {
    Cover,
    Learn,
    Verify,
    Bench,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum FamilyDesc {
    Geometric { a_lo: f64, a_hi: f64 },
    Zeta { a_lo: f64, a_hi: f64 },
    DiscGaussian { half_width: f64, a2_lo: f64, a2_hi: f64 },
    Spec(Box<ExpFamilySpec>),
}

impl FamilyDesc {
    fn build(&self, constants: &Constants) -> ExpFamilySpec {
        let mut fam = match self {
            FamilyDesc::Geometric { a_lo, a_hi } => catalog::geometric_family(*a_lo, *a_hi),
            FamilyDesc::Zeta { a_lo, a_hi } => catalog::zeta_family(*a_lo, *a_hi),
            FamilyDesc::DiscGaussian { half_width, a2_lo, a2_hi } => {
                catalog::disc_gaussian_family(*half_width, *a2_lo, *a2_hi)
            }
            FamilyDesc::Spec(s) => (**s).clone(),
        };
        fam.constants = constants.clone();
        fam
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PnbdDesc {
    p_low: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SiiurvDesc {
    l_mode: f64,
    b_moment: f64,
    gamma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Scenario {
    kind: Kind,
    name: String,
    seed: u64,
    #[serde(default)]
    family: Option<FamilyDesc>,
    #[serde(default)]
    pnbd: Option<PnbdDesc>,
    #[serde(default)]
    siiurv: Option<SiiurvDesc>,
    #[serde(default)]
    n: Option<u64>,
    #[serde(default)]
    eps: Option<f64>,
    #[serde(default)]
    delta: Option<f64>,
    #[serde(default)]
    instances: Option<usize>,
    #[serde(default)]
    sample_budget_cap: Option<u64>,
}

#[derive(Debug)]
enum RunError {
    Config(String),
    Verifier(String),
    Overflow(String),
    Io(std::io::Error),
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e)
    }
}

impl From<CoverError> for RunError {
    fn from(e: CoverError) -> Self {
        match e {
            CoverError::GridOverflow { .. } => RunError::Overflow(e.to_string()),
            other => RunError::Config(other.to_string()),
        }
    }
}

impl From<LearnError> for RunError {
    fn from(e: LearnError) -> Self {
        match e {
            LearnError::BudgetExceeded { .. } => RunError::Overflow(e.to_string()),
            LearnError::Cover(c) => RunError::from(c),
            other => RunError::Config(other.to_string()),
        }
    }
}

impl From<expfam::ExpFamError> for RunError {
    fn from(e: expfam::ExpFamError) -> Self {
        match e {
            expfam::ExpFamError::WindowOverflow { .. } => RunError::Overflow(e.to_string()),
            other => RunError::Config(other.to_string()),
        }
    }
}

impl From<pmf_core::PmfError> for RunError {
    fn from(e: pmf_core::PmfError) -> Self {
        match e {
            pmf_core::PmfError::WindowOverflow { .. } => RunError::Overflow(e.to_string()),
            other => RunError::Config(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(RunError::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(2)
        }
        Err(RunError::Verifier(msg)) => {
            eprintln!("assumption verifier failed: {msg}");
            ExitCode::from(3)
        }
        Err(RunError::Overflow(msg)) => {
            eprintln!("budget/grid overflow: {msg}");
            ExitCode::from(4)
        }
        Err(RunError::Io(e)) => {
            eprintln!("io error: {e}");
            ExitCode::from(2)
        }
    }
}

fn load_constants() -> Result<Constants, RunError> {
    match std::env::var("SIIRV_LAB_CONSTANTS") {
        Ok(path) => {
            let raw = std::fs::read_to_string(&path)
                .map_err(|e| RunError::Config(format!("constants file {path}: {e}")))?;
            serde_json::from_str(&raw)
                .map_err(|e| RunError::Config(format!("constants file {path}: {e}")))
        }
        Err(_) => Ok(Constants::default()),
    }
}

fn run(args: &Args) -> Result<(), RunError> {
    let raw = std::fs::read_to_string(&args.scenario)
        .map_err(|e| RunError::Config(format!("scenario file: {e}")))?;
    let mut scenarios: Vec<Scenario> = if raw.trim_start().starts_with('[') {
        serde_json::from_str(&raw).map_err(|e| RunError::Config(e.to_string()))?
    } else {
        vec![serde_json::from_str(&raw).map_err(|e| RunError::Config(e.to_string()))?]
    };
    if let Some(seed) = args.seed_override {
        for s in scenarios.iter_mut() {
            s.seed = seed;
        }
    }
    let constants = load_constants()?;
    std::fs::create_dir_all(&args.out)?;

    let workers = args.workers.max(1).min(scenarios.len().max(1));
    if workers <= 1 {
        for s in &scenarios {
            run_scenario(s, &constants, &args.out)?;
        }
        return Ok(());
    }
    // Scenario-level parallelism; each scenario owns its seed and output
    // files, so scheduling order cannot affect the artifacts.
    let results: Vec<Result<(), RunError>> = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for chunk in scenarios.chunks(scenarios.len().div_ceil(workers)) {
            let constants = constants.clone();
            let out = args.out.clone();
            handles.push(scope.spawn(move || {
                for s in chunk {
                    run_scenario(s, &constants, &out)?;
                }
                Ok(())
            }));
        }
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    for r in results {
        r?;
    }
    Ok(())
}

fn config_hash(s: &Scenario, constants: &Constants) -> String {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(s).expect("scenario serializes"));
    hasher.update(serde_json::to_vec(constants).expect("constants serialize"));
    let digest = hasher.finalize();
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn header(s: &Scenario, constants: &Constants) -> String {
    format!(
        "# name={} seed={} config_hash={} constants={}\n",
        s.name,
        s.seed,
        config_hash(s, constants),
        serde_json::to_string(constants).unwrap()
    )
}

fn write_report(
    out_dir: &Path,
    name: &str,
    csv: &str,
    json: &serde_json::Value,
) -> Result<(), RunError> {
    let mut f = std::fs::File::create(out_dir.join(format!("{name}.csv")))?;
    f.write_all(csv.as_bytes())?;
    let mut f = std::fs::File::create(out_dir.join(format!("{name}.json")))?;
    f.write_all(serde_json::to_string_pretty(json).unwrap().as_bytes())?;
    f.write_all(b"\n")?;
    Ok(())
}

fn run_scenario(s: &Scenario, constants: &Constants, out_dir: &Path) -> Result<(), RunError> {
    match s.kind {
        Kind::Verify => run_verify(s, constants, out_dir),
        Kind::Cover => run_cover(s, constants, out_dir),
        Kind::Learn => run_learn(s, constants, out_dir),
        Kind::Bench => run_bench(s, constants, out_dir),
    }
}

fn require_eps(s: &Scenario) -> Result<f64, RunError> {
    let eps = s.eps.ok_or_else(|| RunError::Config("eps missing".into()))?;
    if !(eps > 0.0 && eps < 1.0) {
        return Err(RunError::Config(format!("eps {eps} outside (0,1)")));
    }
    Ok(eps)
}

// --- verify -----------------------------------------------------------------

fn run_verify(s: &Scenario, constants: &Constants, out_dir: &Path) -> Result<(), RunError> {
    let famdesc = s
        .family
        .as_ref()
        .ok_or_else(|| RunError::Config("verify needs a family".into()))?;
    let fam = famdesc.build(constants);
    let mut rng = SplitRng::seed_from_u64(s.seed);
    let count = s.instances.unwrap_or(16);
    let mut samples: Vec<ParamVector> = (0..count)
        .map(|_| ParamVector(fam.base_region.sample(&mut rng)))
        .collect();
    // A few rho-cone points beyond the base set.
    for _ in 0..4 {
        let mut p = fam.base_region.sample(&mut rng);
        let scale = (fam.rho * 2.0 / siirv_lab::geometry::norm(&p)).max(1.5);
        for v in p.iter_mut() {
            *v *= scale;
        }
        let pv = ParamVector(p);
        if fam.rho_cone_contains(&pv) {
            samples.push(pv);
        }
    }
    let report = expfam::verify_assumptions(&fam, &samples, (-2_000, 200_000))?;

    let mut csv = header(s, constants);
    csv.push_str("condition,passed,worst,threshold,marginal,witness\n");
    for c in &report.checks {
        csv.push_str(&format!(
            "{:?},{},{:.9},{:.9},{},{}\n",
            c.condition,
            c.passed,
            c.worst,
            c.threshold,
            c.marginal,
            c.witness.clone().unwrap_or_default().replace(',', ";")
        ));
    }

    // Bound validators: each closed-form bound against the oracle.
    let validators = run_bound_validators(&fam, s.seed)?;
    csv.push_str("validator,instances,violations,max_margin\n");
    for v in &validators {
        csv.push_str(&format!("{},{},{},{:.9}\n", v.0, v.1, v.2, v.3));
    }

    let json = serde_json::json!({
        "name": s.name,
        "seed": s.seed,
        "config_hash": config_hash(s, constants),
        "constants": constants,
        "report": report,
        "validators": validators.iter().map(|v| serde_json::json!({
            "name": v.0, "instances": v.1, "violations": v.2, "max_margin": v.3
        })).collect::<Vec<_>>(),
    });
    write_report(out_dir, &s.name, &csv, &json)?;

    if !report.all_pass() {
        return Err(RunError::Verifier(format!(
            "{} condition(s) failed",
            report.checks.iter().filter(|c| !c.passed).count()
        )));
    }
    if validators.iter().any(|v| v.2 > 0) {
        return Err(RunError::Verifier("bound validator violation".into()));
    }
    Ok(())
}

/// (name, instances, violations, worst margin) per closed-form bound.
fn run_bound_validators(
    fam: &ExpFamilySpec,
    seed: u64,
) -> Result<Vec<(String, usize, usize, f64)>, RunError> {
    let mut rng = SplitRng::seed_from_u64(seed ^ 0x9E3779B97F4A7C15);
    let cap = fam.constants.convolve_cap;
    let trim = fam.constants.trim_mass;
    let mut out = Vec::new();

    // Discretized Gaussian TV bound.
    let mut worst = f64::NEG_INFINITY;
    let mut violations = 0;
    let n_inst = 20;
    for _ in 0..n_inst {
        let mu1 = rng.uniform_in(-3.0, 3.0);
        let mu2 = mu1 + rng.uniform_in(-1.0, 1.0);
        let s1 = rng.uniform_in(1.0, 16.0);
        let s2 = s1 + rng.uniform_in(0.0, 4.0);
        let g1 = GaussianParams::new(mu1, s1);
        let g2 = GaussianParams::new(mu2, s2);
        let tv = pmf_core::tv_distance(
            &approx::disc_gauss_pmf(&g1, 1e-10),
            &approx::disc_gauss_pmf(&g2, 1e-10),
        );
        let margin = tv.lower() - approx::tv_gauss_bound(&g1, &g2);
        worst = worst.max(margin);
        if margin > 0.0 {
            violations += 1;
        }
    }
    out.push(("tv_gauss_bound".into(), n_inst, violations, worst));

    // Poisson TV bound.
    let mut worst = f64::NEG_INFINITY;
    let mut violations = 0;
    for _ in 0..n_inst {
        let l1 = rng.uniform_in(0.5, 10.0);
        let l2 = l1 + rng.uniform_in(-0.5, 0.5);
        let l2 = l2.max(0.05);
        let tv = pmf_core::tv_distance(
            &approx::poisson_table(l1, 1e-10),
            &approx::poisson_table(l2, 1e-10),
        );
        let margin = tv.lower() - approx::tv_poisson_bound(l1, l2);
        worst = worst.max(margin);
        if margin > 0.0 {
            violations += 1;
        }
    }
    out.push(("tv_poisson_bound".into(), n_inst, violations, worst));

    // Shift-distance bound on family sums.
    let mut worst = f64::NEG_INFINITY;
    let mut violations = 0;
    for _ in 0..8 {
        let k = rng.int_in(3, 10) as usize;
        let mut tables = Vec::new();
        let mut shifts = Vec::new();
        for _ in 0..k {
            let a = ParamVector(fam.base_region.sample(&mut rng));
            let t = expfam::pmf_member(fam, &a, 1e-10)?;
            shifts.push(pmf_core::tv_distance(&t, &pmf_core::shift(&t, 1)).value);
            tables.push(t);
        }
        let mut sum = tables[0].clone();
        for t in &tables[1..] {
            sum = pmf_core::convolve(&sum, t, cap, trim)?;
        }
        let tv = pmf_core::tv_distance(&sum, &pmf_core::shift(&sum, 1));
        let margin = tv.lower() - approx::shift_distance_bound(&shifts);
        worst = worst.max(margin);
        if margin > 0.0 {
            violations += 1;
        }
    }
    out.push(("shift_distance_bound".into(), 8, violations, worst));
    Ok(out)
}

// --- cover ------------------------------------------------------------------

fn run_cover(s: &Scenario, constants: &Constants, out_dir: &Path) -> Result<(), RunError> {
    let eps = require_eps(s)?;
    let n = s.n.ok_or_else(|| RunError::Config("cover needs n".into()))?;
    let instances = s.instances.unwrap_or(10);
    let mut csv = header(s, constants);
    let json;

    if let Some(pnbd) = &s.pnbd {
        let cover = covers::pnbd_cover(pnbd.p_low, n, eps, constants)?;
        csv.push_str("instance,m,b,tv,slack\n");
        let mut rng = SplitRng::seed_from_u64(s.seed);
        let mut rows = Vec::new();
        for i in 0..instances {
            let probs: Vec<f64> =
                (0..n).map(|_| rng.uniform_in(pnbd.p_low, 0.95)).collect();
            let mut x = approx::geometric_table_from_p(probs[0], 1e-12);
            for &p in &probs[1..] {
                x = pmf_core::convolve(
                    &x,
                    &approx::geometric_table_from_p(p, 1e-12),
                    constants.convolve_cap,
                    constants.trim_mass,
                )?;
            }
            let ((m, b), tv) = cover.nearest_dense(&x)?;
            csv.push_str(&format!(
                "{i},{m},{:.9},{:.9},{:.9}\n",
                b.0[0], tv.value, tv.slack
            ));
            rows.push(serde_json::json!({"instance": i, "m": m, "b": b.0[0],
                "tv": tv.value, "slack": tv.slack}));
        }
        json = serde_json::json!({
            "name": s.name, "seed": s.seed,
            "config_hash": config_hash(s, constants),
            "kappa": cover.kappa,
            "massage_overhead": cover.massage_overhead,
            "sparse_net": cover.sparse.param_cover.points.len(),
            "rows": rows,
        });
    } else {
        let famdesc = s
            .family
            .as_ref()
            .ok_or_else(|| RunError::Config("cover needs a family or pnbd".into()))?;
        let fam = famdesc.build(constants);
        let cover = covers::cover_siierv(&fam, n, eps)?;
        csv.push_str("instance,tv,slack,from_sparse,heuristic\n");
        let mut rng = SplitRng::seed_from_u64(s.seed);
        let mut rows = Vec::new();
        for i in 0..instances {
            let params: Vec<ParamVector> =
                (0..n).map(|_| ParamVector(fam.base_region.sample(&mut rng))).collect();
            let spec = pmf_core::SIIRVSpec::from_params(params, n as usize)
                .map_err(|e| RunError::Config(e.to_string()))?;
            let x = pmf_core::sum_pmf(
                &spec,
                Some(&fam),
                1e-10,
                constants.convolve_cap,
                constants.trim_mass,
            )?;
            let report = covers::nearest_in_cover(&x, &cover, &fam)?;
            csv.push_str(&format!(
                "{i},{:.9},{:.9},{},{}\n",
                report.tv.value, report.tv.slack, report.from_sparse, report.heuristic
            ));
            rows.push(serde_json::json!({"instance": i, "tv": report.tv.value,
                "slack": report.tv.slack, "from_sparse": report.from_sparse,
                "heuristic": report.heuristic}));
        }
        json = serde_json::json!({
            "name": s.name, "seed": s.seed,
            "config_hash": config_hash(s, constants),
            "sparse_net": cover.sparse.param_cover.points.len(),
            "n_crit": cover.sparse.n_crit,
            "dense_empty": cover.dense.is_empty(),
            "rows": rows,
        });
    }
    write_report(out_dir, &s.name, &csv, &json)
}

// --- learn ------------------------------------------------------------------

fn run_learn(s: &Scenario, constants: &Constants, out_dir: &Path) -> Result<(), RunError> {
    let eps = require_eps(s)?;
    let delta = s.delta.unwrap_or(0.1);
    let n = s.n.ok_or_else(|| RunError::Config("learn needs n".into()))?;
    let runs = s.instances.unwrap_or(1);
    let mut cfg = LearnConfig::new(eps, delta, s.seed).map_err(|e| RunError::Config(e.to_string()))?;
    if let Some(cap) = s.sample_budget_cap {
        cfg.sample_budget_cap = cap;
    }

    let mut csv = header(s, constants);
    csv.push_str("run,seed,eps,tv,slack,x_samples,winner\n");
    let mut rows = Vec::new();
    let mut rng = SplitRng::seed_from_u64(s.seed);

    if let Some(siiurv) = &s.siiurv {
        // Nonparametric target: a sum of n geometric-like tables with modes
        // at zero, generated from the scenario seed.
        for run in 0..runs {
            let mut terms = Vec::new();
            for _ in 0..n {
                let p = rng.uniform_in(0.35, 0.65);
                terms.push(approx::geometric_table_from_p(p, 1e-12));
            }
            let spec = pmf_core::SIIRVSpec::new(
                terms.into_iter().map(pmf_core::Term::Table).collect(),
                n as usize,
            )
            .map_err(|e| RunError::Config(e.to_string()))?;
            let truth =
                pmf_core::sum_pmf(&spec, None, 1e-12, constants.convolve_cap, constants.trim_mass)?;
            let run_seed = s.seed ^ (run as u64).wrapping_mul(0x9E3779B97F4A7C15);
            let mut run_cfg = cfg.clone();
            run_cfg.seed = run_seed;
            let mut sampler = TableSampler::new(&truth);
            let (out, report) = learning::learn_siiurv(
                &mut sampler,
                n as usize,
                siiurv.l_mode,
                siiurv.b_moment,
                siiurv.gamma,
                &run_cfg,
                constants,
            )?;
            let tv = pmf_core::tv_distance(&truth, &out);
            csv.push_str(&format!(
                "{run},{run_seed},{eps},{:.9},{:.9},{},{}\n",
                tv.value,
                tv.slack,
                report.x_samples,
                if report.winner_is_gaussian { "gaussian" } else { "sparse" }
            ));
            rows.push(serde_json::json!({"run": run, "seed": run_seed,
                "tv": tv.value, "slack": tv.slack, "report": report}));
        }
    } else {
        let famdesc = s
            .family
            .as_ref()
            .ok_or_else(|| RunError::Config("learn needs a family or siiurv".into()))?;
        let fam = famdesc.build(constants);
        for run in 0..runs {
            let params: Vec<ParamVector> =
                (0..n).map(|_| ParamVector(fam.base_region.sample(&mut rng))).collect();
            let spec = pmf_core::SIIRVSpec::from_params(params, n as usize)
                .map_err(|e| RunError::Config(e.to_string()))?;
            let truth = pmf_core::sum_pmf(
                &spec,
                Some(&fam),
                1e-10,
                constants.convolve_cap,
                constants.trim_mass,
            )?;
            let run_seed = s.seed ^ (run as u64).wrapping_mul(0x9E3779B97F4A7C15);
            let mut run_cfg = cfg.clone();
            run_cfg.seed = run_seed;
            let mut sampler = TableSampler::new(&truth);
            let (out, report) = learning::learn_siierv(&mut sampler, &fam, n, &run_cfg)?;
            let table = pmf_core::sum_pmf(
                &out,
                Some(&fam),
                1e-10,
                constants.convolve_cap,
                constants.trim_mass,
            )?;
            let tv = pmf_core::tv_distance(&truth, &table);
            let x_total =
                report.x_samples_sparse + report.x_samples_estimate + report.x_samples_final;
            csv.push_str(&format!(
                "{run},{run_seed},{eps},{:.9},{:.9},{x_total},{}\n",
                tv.value,
                tv.slack,
                if report.winner_is_dense { "dense" } else { "sparse" }
            ));
            rows.push(serde_json::json!({"run": run, "seed": run_seed,
                "tv": tv.value, "slack": tv.slack, "report": report}));
        }
    }
    let json = serde_json::json!({
        "name": s.name, "seed": s.seed,
        "config_hash": config_hash(s, constants),
        "constants": constants,
        "eps": eps, "delta": delta, "n": n,
        "rows": rows,
    });
    write_report(out_dir, &s.name, &csv, &json)
}

// --- bench ------------------------------------------------------------------

fn run_bench(s: &Scenario, constants: &Constants, out_dir: &Path) -> Result<(), RunError> {
    let famdesc = s
        .family
        .as_ref()
        .ok_or_else(|| RunError::Config("bench needs a family".into()))?;
    let fam = famdesc.build(constants);
    let mut rng = SplitRng::seed_from_u64(s.seed);
    let a = ParamVector(fam.base_region.sample(&mut rng));

    let mut csv = header(s, constants);
    csv.push_str("op,micros\n");
    let mut rows = Vec::new();
    let mut time_op = |name: &str, f: &mut dyn FnMut() -> Result<(), RunError>| -> Result<(), RunError> {
        let start = std::time::Instant::now();
        f()?;
        let micros = start.elapsed().as_micros();
        csv.push_str(&format!("{name},{micros}\n"));
        rows.push(serde_json::json!({"op": name, "micros": micros}));
        Ok(())
    };

    let table = expfam::pmf_member(&fam, &a, 1e-10)?;
    time_op("pmf_member", &mut || {
        expfam::pmf_member(&fam, &a, 1e-10)?;
        Ok(())
    })?;
    time_op("convolve", &mut || {
        pmf_core::convolve(&table, &table, constants.convolve_cap, constants.trim_mass)?;
        Ok(())
    })?;
    time_op("tv_distance", &mut || {
        pmf_core::tv_distance(&table, &table);
        Ok(())
    })?;
    time_op("sparsify_family", &mut || {
        covers::sparsify_family(&fam, 0.2)?;
        Ok(())
    })?;
    time_op("theta_for_cone", &mut || {
        siirv_lab::geometry::theta_for_cone(&fam.cone).map_err(|e| RunError::Config(e.to_string()))?;
        Ok(())
    })?;

    let json = serde_json::json!({
        "name": s.name, "seed": s.seed,
        "config_hash": config_hash(s, constants),
        "rows": rows,
    });
    write_report(out_dir, &s.name, &csv, &json)
}
