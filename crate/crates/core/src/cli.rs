//! Command-line front end: `compute`, `decompose`, `rate` and `selftest`.
//!
//! Exit codes: 0 success, 1 malformed input, 2 size cap exceeded, 3 selftest failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::GwError;
use crate::gw::{
    compute_gw, compute_gw_with, model, model_with, solve_brute_force, solve_frank_wolfe,
    ModelLimits, SolverConfig,
};
use crate::measure::{DiscreteMeasure, DistributionSpec};
use crate::numeric::Matrix;
use crate::ot::{solve_ot, Coupling};
use crate::poly::{
    expand_kernel, gw_objective_bruteforce, kernel_value_extended, marginal_value,
    coupling_value_direct,
};
use crate::rate::{
    empirical_lower_check, lower_bound_exact, marginal_rate_experiment, run_rate_experiment,
    RateExperiment, Reference,
};

/// Written into every JSON document the CLI emits.
pub const SCHEMA_VERSION: &str = "evengw/1";

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_CAP: i32 = 2;
pub const EXIT_SELFTEST: i32 = 3;

/// Wall-clock budget for `selftest`.
pub const SELFTEST_BUDGET: Duration = Duration::from_secs(60);

#[derive(Debug, Parser)]
#[command(name = "evengw", version, about = "Even-order Gromov-Wasserstein functionals")]
pub struct Cli {
    /// TOML or JSON config file; flags override it.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Worker threads for parallel sections (1 runs everything inline).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,

    /// Suppress progress messages on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve for the functional between two measure files.
    Compute(ComputeArgs),
    /// Dump the kernel expansion and the signed dual cost family.
    Decompose(DecomposeArgs),
    /// Run a convergence-rate experiment.
    Rate(RateArgs),
    /// Run the fast built-in checks.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args)]
pub struct OrderArgs {
    #[arg(long)]
    pub r: Option<u32>,
    #[arg(long)]
    pub k: Option<u32>,
}

#[derive(Debug, Args)]
pub struct ComputeArgs {
    /// Source measure (.json or .csv).
    #[arg(long, value_name = "PATH")]
    pub mu: PathBuf,
    /// Target measure (.json or .csv).
    #[arg(long, value_name = "PATH")]
    pub nu: PathBuf,
    #[command(flatten)]
    pub order: OrderArgs,
    /// Result JSON; stdout when absent.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    #[arg(long, value_name = "N")]
    pub restarts: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[command(flatten)]
    pub order: OrderArgs,
    #[arg(long = "d-x", value_name = "D")]
    pub d_x: usize,
    #[arg(long = "d-y", value_name = "D")]
    pub d_y: usize,
    /// Measure whose atoms form the X support for the parameter boxes.
    #[arg(long = "supp-x", value_name = "PATH", requires = "supp_y")]
    pub supp_x: Option<PathBuf>,
    #[arg(long = "supp-y", value_name = "PATH", requires = "supp_x")]
    pub supp_y: Option<PathBuf>,
    /// Output JSON; stdout when absent.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RateKind {
    /// Full functional against a reference value.
    Gw,
    /// Marginal part only, against population moments.
    Marginal,
    /// Two-point law against a point mass, with the closed-form value.
    LowerBound,
}

#[derive(Debug, Args)]
pub struct RateArgs {
    #[command(flatten)]
    pub order: OrderArgs,
    /// Sampling law for X, e.g. `cube:2:1`, `ball:3:1`, `two-point:1:1:0.25`, `point:1`.
    #[arg(long = "dist-x", value_name = "SPEC")]
    pub dist_x: Option<String>,
    #[arg(long = "dist-y", value_name = "SPEC")]
    pub dist_y: Option<String>,
    /// Comma-separated sample sizes.
    #[arg(long = "n-grid", value_name = "N,N,...", value_delimiter = ',')]
    pub n_grid: Option<Vec<usize>>,
    #[arg(long, value_name = "N")]
    pub trials: Option<usize>,
    /// closed-form, self-zero or high-n-estimate.
    #[arg(long, value_name = "MODE")]
    pub reference: Option<String>,
    #[arg(long, value_enum)]
    pub kind: Option<RateKind>,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
    #[arg(long, value_name = "N")]
    pub restarts: Option<usize>,
    /// Per-trial CSV (`n,trial,error`); the JSON summary goes next to it.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Summary JSON path; defaults to `--out` with a `.json` extension, else stdout.
    #[arg(long, value_name = "PATH")]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    /// Report JSON.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Corrupt one component before checking (for testing the checks).
    #[arg(long, value_enum, hide = true)]
    pub inject_fault: Option<Fault>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Fault {
    /// Perturb one coupling-term coefficient of the kernel expansion.
    Expansion,
    /// Swap the oracle objective for one that ignores the coupling.
    Oracle,
}

/// Contents of a `--config` file. Every field is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub r: Option<u32>,
    pub k: Option<u32>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub solver: Option<SolverConfig>,
    pub limits: Option<ModelLimits>,
    pub rate: Option<FileRate>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileRate {
    pub kind: Option<RateKind>,
    pub dist_x: Option<String>,
    pub dist_y: Option<String>,
    pub n_grid: Option<Vec<usize>>,
    pub trials: Option<usize>,
    pub reference: Option<String>,
    pub cross_check_every: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read config {}: {e}", path.display())))?;
        let is_json = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let parsed = if is_json {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| CliError::input(format!("config {}: {e}", path.display())))
    }
}

/// Fully resolved settings, echoed into every output document.
#[derive(Debug, Clone, Serialize)]
pub struct EffectiveConfig {
    pub r: u32,
    pub k: u32,
    pub seed: u64,
    pub threads: Option<usize>,
    pub config_file: Option<String>,
    pub solver: SolverConfig,
    pub limits: ModelLimits,
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    fn from_gw(context: &str, e: GwError) -> Self {
        let code = if e.is_cap() { EXIT_CAP } else { EXIT_INPUT };
        let message = if context.is_empty() {
            e.to_string()
        } else {
            format!("{context}: {e}")
        };
        Self { code, message }
    }
}

fn gw(e: GwError) -> CliError {
    CliError::from_gw("", e)
}

struct Ctx {
    file: FileConfig,
    config_path: Option<PathBuf>,
    threads: Option<usize>,
    quiet: bool,
}

impl Ctx {
    fn progress(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn threads(&self) -> Option<usize> {
        self.threads.or(self.file.threads)
    }

    fn effective(
        &self,
        order: &OrderArgs,
        seed: Option<u64>,
        restarts: Option<usize>,
    ) -> Result<EffectiveConfig, CliError> {
        let r = order.r.or(self.file.r).unwrap_or(1);
        let k = order.k.or(self.file.k).unwrap_or(1);
        if r == 0 {
            return Err(CliError::input("invalid parameter `r`: must be at least 1"));
        }
        if k == 0 {
            return Err(CliError::input("invalid parameter `k`: must be at least 1"));
        }
        let env_seed = match std::env::var("EVENGW_SEED") {
            Ok(s) => Some(s.trim().parse::<u64>().map_err(|_| {
                CliError::input(format!("invalid EVENGW_SEED `{s}`: expected an unsigned integer"))
            })?),
            Err(_) => None,
        };
        let seed = seed.or(self.file.seed).or(env_seed).unwrap_or(0);
        let mut solver = self.file.solver.clone().unwrap_or_default();
        solver.seed = seed;
        if let Some(n) = restarts {
            solver.restarts = n;
        }
        let threads = self.threads();
        if threads == Some(0) {
            return Err(CliError::input("invalid parameter `threads`: must be at least 1"));
        }
        solver.parallel = threads != Some(1);
        solver.validate().map_err(gw)?;
        Ok(EffectiveConfig {
            r,
            k,
            seed,
            threads,
            config_file: self.config_path.as_ref().map(|p| p.display().to_string()),
            solver,
            limits: self.file.limits.unwrap_or_default(),
        })
    }

    fn in_pool<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
        match self.threads() {
            Some(n) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build()
                    .map_err(|e| CliError::input(format!("invalid parameter `threads`: {e}")))?;
                Ok(pool.install(f))
            }
            None => Ok(f()),
        }
    }
}

fn load_measure(path: &Path) -> Result<DiscreteMeasure, CliError> {
    DiscreteMeasure::load(path).map_err(|e| match e {
        GwError::Io { .. } => gw(e),
        other => CliError::input(format!("{}: {other}", path.display())),
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))
}

fn to_pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json value serializes");
    s.push('\n');
    s
}

/// Writes `doc` to `out`, or to stdout when `out` is `None`. Returns whether a file was written.
fn emit(doc: &serde_json::Value, out: Option<&Path>) -> Result<bool, CliError> {
    match out {
        Some(p) => {
            write_text(p, &to_pretty(doc))?;
            Ok(true)
        }
        None => {
            print!("{}", to_pretty(doc));
            Ok(false)
        }
    }
}

fn run_compute(ctx: &Ctx, a: &ComputeArgs) -> Result<i32, CliError> {
    let cfg = ctx.effective(&a.order, a.seed, a.restarts)?;
    let mu = load_measure(&a.mu)?;
    let nu = load_measure(&a.nu)?;
    ctx.progress(format!(
        "computing (r={}, k={}) between {} atoms in R^{} and {} atoms in R^{}",
        cfg.r,
        cfg.k,
        mu.len(),
        mu.dim(),
        nu.len(),
        nu.dim()
    ));
    let res = ctx
        .in_pool(|| compute_gw_with(&mu, &nu, cfg.r, cfg.k, &cfg.solver, cfg.limits))?
        .map_err(gw)?;
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "kind": "compute",
        "config": cfg,
        "inputs": { "mu": a.mu.display().to_string(), "nu": a.nu.display().to_string() },
        "result": res,
    });
    if emit(&doc, a.out.as_deref())? {
        println!("value {:.17e}", res.value);
        println!("method {}", res.method);
    }
    Ok(EXIT_OK)
}

fn run_decompose(ctx: &Ctx, a: &DecomposeArgs) -> Result<i32, CliError> {
    let cfg = ctx.effective(&a.order, None, None)?;
    if a.d_x == 0 || a.d_y == 0 {
        return Err(CliError::input("invalid parameter `d-x`/`d-y`: must be at least 1"));
    }
    ctx.progress(format!(
        "expanding (r={}, k={}, d_x={}, d_y={})",
        cfg.r, cfg.k, a.d_x, a.d_y
    ));
    let m = model_with(cfg.r, cfg.k, a.d_x, a.d_y, cfg.limits).map_err(gw)?;
    ctx.progress(format!(
        "{} terms, basis size {}; eigendecomposing",
        m.exp.terms.len(),
        m.q.size()
    ));
    let mut fam = ctx.in_pool(|| m.family(cfg.solver.zero_tol))?.map_err(gw)?;
    let supports = match (&a.supp_x, &a.supp_y) {
        (Some(px), Some(py)) => {
            let sx = load_measure(px)?;
            let sy = load_measure(py)?;
            fam.attach_boxes(sx.atoms(), sy.atoms())
                .map_err(|e| CliError::from_gw("supports", e))?;
            Some(json!({ "x": px.display().to_string(), "y": py.display().to_string() }))
        }
        _ => None,
    };
    let boxes_note = if supports.is_none() {
        Some("boxes omitted: no supports given (pass --supp-x and --supp-y)")
    } else {
        None
    };
    let positive_max = fam.eigvals.iter().copied().filter(|v| *v > 0.0).fold(None, max_opt);
    let negative_min = fam.eigvals.iter().copied().filter(|v| *v < 0.0).fold(None, min_opt);
    let summary = json!({
        "term_count": m.exp.terms.len(),
        "marginal_term_count": m.exp.marginal_terms().count(),
        "coupling_term_count": m.exp.coupling_terms().count(),
        "basis_size": m.q.size(),
        "J": fam.len(),
        "ell": fam.ell,
        "negative_count": fam.negative_count(),
        "largest_eigenvalue": positive_max,
        "most_negative_eigenvalue": negative_min,
    });
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "kind": "decompose",
        "config": cfg,
        "d_x": a.d_x,
        "d_y": a.d_y,
        "supports": supports,
        "boxes_note": boxes_note,
        "summary": summary,
        "expansion": m.exp.to_json(),
        "family": fam.to_json(),
    });
    if let Some(note) = boxes_note {
        ctx.progress(note);
    }
    if emit(&doc, a.out.as_deref())? {
        println!(
            "terms {} (marginal {}), J {}, ell {}, negative {}",
            m.exp.terms.len(),
            m.exp.marginal_terms().count(),
            fam.len(),
            fam.ell,
            fam.negative_count()
        );
        println!(
            "eigenvalues: largest {}, most negative {}",
            fmt_opt(positive_max),
            fmt_opt(negative_min)
        );
    }
    Ok(EXIT_OK)
}

fn max_opt(acc: Option<f64>, v: f64) -> Option<f64> {
    Some(acc.map_or(v, |a| a.max(v)))
}

fn min_opt(acc: Option<f64>, v: f64) -> Option<f64> {
    Some(acc.map_or(v, |a| a.min(v)))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |x| format!("{x:e}"))
}

fn parse_dist(name: &'static str, s: &str) -> Result<DistributionSpec, CliError> {
    s.parse()
        .map_err(|e| CliError::input(format!("invalid parameter `{name}`: {e}")))
}

fn run_rate(ctx: &Ctx, a: &RateArgs) -> Result<i32, CliError> {
    let cfg = ctx.effective(&a.order, a.seed, a.restarts)?;
    let fr = ctx.file.rate.as_ref();
    let kind = a.kind.or(fr.and_then(|f| f.kind)).unwrap_or(RateKind::Gw);
    let dist_x = a
        .dist_x
        .clone()
        .or_else(|| fr.and_then(|f| f.dist_x.clone()))
        .ok_or_else(|| CliError::input("missing parameter `dist-x`"))?;
    let dist_x = parse_dist("dist-x", &dist_x)?;
    let dist_y = match a.dist_y.clone().or_else(|| fr.and_then(|f| f.dist_y.clone())) {
        Some(s) => parse_dist("dist-y", &s)?,
        None if kind == RateKind::LowerBound => DistributionSpec::PointMass { dim: dist_x.dim() },
        None => dist_x.clone(),
    };
    let n_grid = a
        .n_grid
        .clone()
        .or_else(|| fr.and_then(|f| f.n_grid.clone()))
        .unwrap_or_else(|| vec![16, 32, 64, 128]);
    let trials = a.trials.or(fr.and_then(|f| f.trials)).unwrap_or(20);
    let requested = match a.reference.clone().or_else(|| fr.and_then(|f| f.reference.clone())) {
        Some(s) => Some(
            s.parse::<Reference>()
                .map_err(|e| CliError::input(format!("invalid parameter `reference`: {e}")))?,
        ),
        None => None,
    };
    // Marginal and lower-bound experiments always compare against exact values.
    let reference = match (kind, requested) {
        (RateKind::Gw, Some(r)) => r,
        (RateKind::Gw, None) if dist_x == dist_y => Reference::SelfZero,
        (RateKind::Gw, None) => Reference::HighNEstimate,
        (_, None | Some(Reference::ClosedForm)) => Reference::ClosedForm,
        (_, Some(other)) => {
            return Err(CliError::input(format!(
                "invalid parameter `reference`: `{other}` is only available for --kind gw"
            )))
        }
    };
    let cross_check_every = fr.and_then(|f| f.cross_check_every).unwrap_or(100);
    let exp = RateExperiment {
        r: cfg.r,
        k: cfg.k,
        dist_x: dist_x.clone(),
        dist_y: dist_y.clone(),
        n_grid: n_grid.clone(),
        trials,
        seed: cfg.seed,
        reference,
        solver: SolverConfig {
            parallel: false,
            ..cfg.solver.clone()
        },
        parallel: cfg.solver.parallel,
    };
    ctx.progress(format!(
        "rate experiment ({kind:?}): {dist_x} vs {dist_y}, n in {n_grid:?}, {trials} trials"
    ));
    let res = ctx
        .in_pool(|| match kind {
            RateKind::Gw => exp.validate().and_then(|_| run_rate_experiment(&exp)),
            RateKind::Marginal => marginal_rate_experiment(
                cfg.r,
                cfg.k,
                &dist_x,
                &dist_y,
                &n_grid,
                trials,
                cfg.seed,
            ),
            RateKind::LowerBound => match (&dist_x, &dist_y) {
                (DistributionSpec::TwoPoint { r: radius, p, .. }, DistributionSpec::PointMass { .. }) => {
                    empirical_lower_check(
                        *p,
                        *radius,
                        cfg.r,
                        cfg.k,
                        &n_grid,
                        trials,
                        cfg.seed,
                        cross_check_every,
                    )
                }
                _ => Err(GwError::param(
                    "dist-x",
                    "lower-bound needs a two-point X law and a point-mass Y law",
                )),
            },
        })?
        .map_err(gw)?;
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "kind": "rate",
        "config": cfg,
        "experiment": {
            "kind": kind,
            "dist_x": dist_x.to_string(),
            "dist_y": dist_y.to_string(),
            "n_grid": n_grid,
            "trials": trials,
            "reference": reference,
            "cross_check_every": cross_check_every,
        },
        "result": res,
    });
    if let Some(csv) = &a.out {
        write_text(csv, &res.to_csv())?;
    }
    let summary_path = a
        .summary
        .clone()
        .or_else(|| a.out.as_ref().map(|p| p.with_extension("json")));
    if emit(&doc, summary_path.as_deref())? {
        println!(
            "slope {} (predicted {}), spearman {}",
            fmt_opt(res.fitted_slope),
            res.predicted_slope,
            fmt_opt(res.spearman)
        );
    }
    for note in &res.notes {
        ctx.progress(format!("note: {note}"));
    }
    Ok(EXIT_OK)
}

/// One named selftest check.
#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

fn check(name: &str, pass: bool, detail: String) -> CheckReport {
    CheckReport {
        name: name.to_string(),
        pass,
        detail,
    }
}

fn rel(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs() / s
    }
}

fn random_measure(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DiscreteMeasure {
    let atoms = (0..n)
        .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let w = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
    DiscreteMeasure::normalized(d, atoms, w).expect("valid random measure")
}

fn random_plan(rng: &mut ChaCha8Rng, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Coupling {
    let cost = Matrix::from_fn(mu.len(), nu.len(), |_, _| rng.gen::<f64>());
    let vertex = solve_ot(&cost, mu.weights(), nu.weights())
        .expect("random OT solves")
        .plan;
    Coupling::product(mu.weights(), nu.weights()).lerp(&vertex, rng.gen::<f64>())
}

/// Runs the fast checks. `fault` corrupts one component first.
pub fn selftest_checks(fault: Option<Fault>) -> Vec<CheckReport> {
    let start = Instant::now();
    let mut out = Vec::new();
    let cfg = SolverConfig {
        restarts: 4,
        ..SolverConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0x5E1F);

    let mut worst = 0.0f64;
    for p in [0.25, 0.5] {
        for radius in [1.0, 3.0] {
            for r in [1, 2] {
                for k in [1, 2] {
                    let mu = DiscreteMeasure::new(1, vec![vec![0.0], vec![radius]], vec![1.0 - p, p])
                        .expect("two-point measure");
                    let nu = DiscreteMeasure::dirac_origin(1).expect("point mass");
                    let expected = lower_bound_exact(p, radius, r, k).expect("valid parameters");
                    let v = compute_gw(&mu, &nu, r, k, &cfg).map(|x| x.value).unwrap_or(f64::NAN);
                    worst = worst.max(rel(v, expected));
                }
            }
        }
    }
    out.push(check(
        "closed-form two-point values",
        worst <= 1e-9,
        format!("16 cases, max rel err {worst:.2e}"),
    ));

    let mut worst_id = 0.0f64;
    let mut worst_dec = 0.0f64;
    for (r, k, dx, dy) in [(1, 1, 2, 2), (1, 2, 1, 2), (2, 1, 2, 1)] {
        let mut exp = expand_kernel(r, k, dx, dy).expect("small expansion");
        if fault == Some(Fault::Expansion) {
            if let Some(t) = exp.terms.iter_mut().find(|t| !t.marginal_only) {
                t.coeff += 1.0;
            }
        }
        for _ in 0..20 {
            let pts: Vec<Vec<f64>> = [dx, dx, dy, dy]
                .iter()
                .map(|&d| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let lhs = exp.eval_extended(&pts[0], &pts[1], &pts[2], &pts[3]);
            let rhs = kernel_value_extended(r, k, &pts[0], &pts[1], &pts[2], &pts[3]);
            worst_id = worst_id.max(rel(lhs, rhs));
        }
        let mu = random_measure(&mut rng, 3, dx);
        let nu = random_measure(&mut rng, 4, dy);
        let pi = random_plan(&mut rng, &mu, &nu);
        let split = marginal_value(&exp, &mu, &nu)
            .and_then(|m| coupling_value_direct(&exp, &mu, &nu, &pi).map(|q| m + q))
            .unwrap_or(f64::NAN);
        let direct = gw_objective_bruteforce(&mu, &nu, &pi, r, k).unwrap_or(f64::NAN);
        worst_dec = worst_dec.max(rel(split, direct));
    }
    out.push(check(
        "expansion identity",
        worst_id <= 1e-12,
        format!("60 point tuples, max rel err {worst_id:.2e}"),
    ));
    out.push(check(
        "marginal plus coupling decomposition",
        worst_dec <= 1e-9,
        format!("3 couplings, max rel err {worst_dec:.2e}"),
    ));

    let mut worst_t = 0.0f64;
    let mut worst_d = 0.0f64;
    for (r, k) in [(1, 1), (1, 2), (2, 1)] {
        let mu = random_measure(&mut rng, 3, 2);
        let nu = random_measure(&mut rng, 3, 1);
        let base = compute_gw(&mu, &nu, r, k, &cfg).map(|x| x.value).unwrap_or(f64::NAN);
        let moved = mu
            .translate(&[1.5, -0.5])
            .and_then(|m| nu.translate(&[2.0]).map(|n| (m, n)))
            .and_then(|(m, n)| compute_gw(&m, &n, r, k, &cfg))
            .map(|x| x.value)
            .unwrap_or(f64::NAN);
        worst_t = worst_t.max(rel(moved, base));
        let scaled = compute_gw(&mu.dilate(2.0), &nu.dilate(2.0), r, k, &cfg)
            .map(|x| x.value)
            .unwrap_or(f64::NAN);
        worst_d = worst_d.max(rel(scaled, 2f64.powi((4 * k * r) as i32) * base));
    }
    out.push(check(
        "translation invariance",
        worst_t <= 1e-9,
        format!("3 instances, max rel err {worst_t:.2e}"),
    ));
    out.push(check(
        "dilation homogeneity",
        worst_d <= 1e-8,
        format!("3 instances, max rel err {worst_d:.2e}"),
    ));

    let mut worst_o = 0.0f64;
    let mut frozen = f64::NAN;
    let m = model(1, 1, 1, 1).expect("small model");
    for idx in 0..6 {
        let (mu, nu) = if idx == 0 {
            let line = |a: f64, b: f64| {
                DiscreteMeasure::empirical(vec![vec![a], vec![b]]).expect("two atoms")
            };
            (line(0.0, 1.0), line(0.0, 2.0))
        } else {
            let pts = |rng: &mut ChaCha8Rng| {
                DiscreteMeasure::empirical((0..2).map(|_| vec![rng.gen_range(-1.0..1.0)]).collect())
                    .expect("two atoms")
            };
            (pts(&mut rng), pts(&mut rng))
        };
        let fw = solve_frank_wolfe(&m, &mu, &nu, &cfg).map(|x| x.value).unwrap_or(f64::NAN);
        let bf = solve_brute_force(&m, &mu, &nu, &cfg).map(|x| x.value).unwrap_or(f64::NAN);
        let bf = if fault == Some(Fault::Oracle) {
            let pi = Coupling::product(mu.weights(), nu.weights());
            gw_objective_bruteforce(&mu, &nu, &pi, 1, 1).unwrap_or(f64::NAN)
        } else {
            bf
        };
        if idx == 0 {
            frozen = bf;
        }
        let err = (fw - bf).abs();
        worst_o = if err.is_nan() { f64::INFINITY } else { worst_o.max(err) };
    }
    out.push(check(
        "2x2 oracle agreement",
        worst_o <= 1e-6 && (frozen - 4.5).abs() <= 1e-12,
        format!("6 instances, max |fw - oracle| {worst_o:.2e}, frozen value {frozen}"),
    ));

    let elapsed = start.elapsed();
    out.push(check(
        "runtime budget",
        elapsed < SELFTEST_BUDGET,
        format!("{elapsed:.2?} of {SELFTEST_BUDGET:?}"),
    ));
    out
}

fn run_selftest(ctx: &Ctx, a: &SelftestArgs) -> Result<i32, CliError> {
    ctx.progress("running selftest");
    let reports = ctx.in_pool(|| selftest_checks(a.inject_fault))?;
    for c in &reports {
        println!(
            "{} {} ({})",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    let failed: Vec<&str> = reports
        .iter()
        .filter(|c| !c.pass)
        .map(|c| c.name.as_str())
        .collect();
    if let Some(out) = &a.out {
        let doc = json!({
            "schema_version": SCHEMA_VERSION,
            "kind": "selftest",
            "config": { "threads": ctx.threads(), "inject_fault": a.inject_fault.map(|f| format!("{f:?}").to_lowercase()) },
            "checks": reports,
        });
        write_text(out, &to_pretty(&doc))?;
    }
    if failed.is_empty() {
        Ok(EXIT_OK)
    } else {
        eprintln!("selftest failed: {}", failed.join(", "));
        Ok(EXIT_SELFTEST)
    }
}

fn dispatch(cli: Cli) -> Result<i32, CliError> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let ctx = Ctx {
        file,
        config_path: cli.config.clone(),
        threads: cli.threads,
        quiet: cli.quiet,
    };
    match &cli.command {
        Command::Compute(a) => run_compute(&ctx, a),
        Command::Decompose(a) => run_decompose(&ctx, a),
        Command::Rate(a) => run_rate(&ctx, a),
        Command::Selftest(a) => run_selftest(&ctx, a),
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
