//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Run all: `cargo test -p evengw --test acceptance`
//! Run some: `cargo test -p evengw --test acceptance -- 2 5`

use std::time::{Duration, Instant};

use evengw::dual::DEFAULT_ZERO_TOL;
use evengw::gw::{
    compute_gw, family_for, model, solve_brute_force, solve_dual_alternating, solve_frank_wolfe,
    SolverConfig,
};
use evengw::measure::DiscreteMeasure;
use evengw::measure::DistributionSpec;
use evengw::numeric::Matrix;
use evengw::ot::{c_transform, solve_ot, Coupling};
use evengw::poly::{coupling_value_direct, marginal_value};
use evengw::polytope::vertex_minimum;
use evengw::rate::{
    empirical_lower_check, lower_bound_exact, marginal_rate_experiment, moment_rate_experiment,
    run_rate_experiment, RateExperiment, Reference,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

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

// ---------------------------------------------------------------------------
// Independent oracles

/// `sum pi_ij pi_i'j' (|x_i - x_i'|^{2k} - |y_j - y_j'|^{2k})^{2r}` in plain loops.
fn double_sum(mu: &DiscreteMeasure, nu: &DiscreteMeasure, pi: &Coupling, r: u32, k: u32) -> f64 {
    let d2 =
        |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum() };
    let mut total = 0.0;
    for i in 0..mu.len() {
        for j in 0..nu.len() {
            let w = pi.get(i, j);
            if w == 0.0 {
                continue;
            }
            for ip in 0..mu.len() {
                for jp in 0..nu.len() {
                    let a = d2(mu.atom(i), mu.atom(ip)).powi(k as i32);
                    let b = d2(nu.atom(j), nu.atom(jp)).powi(k as i32);
                    total += w * pi.get(ip, jp) * (a - b).powi(2 * r as i32);
                }
            }
        }
    }
    total
}

fn rel(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs() / s
    }
}

fn ball_point(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let p: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        if p.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
            return p;
        }
    }
}

fn random_measure(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DiscreteMeasure {
    let atoms = (0..n).map(|_| ball_point(rng, d)).collect();
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.2..1.0)).collect();
    DiscreteMeasure::normalized(d, atoms, w).unwrap()
}

/// Random coupling: the product coupling mixed with random vertices.
fn random_coupling(rng: &mut ChaCha8Rng, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Coupling {
    let mut plan = Coupling::product(mu.weights(), nu.weights());
    for _ in 0..rng.gen_range(1..4) {
        let cost = Matrix::from_fn(mu.len(), nu.len(), |_, _| rng.gen::<f64>());
        let v = solve_ot(&cost, mu.weights(), nu.weights()).unwrap().plan;
        plan = plan.lerp(&v, rng.gen::<f64>());
    }
    plan
}

struct Instance {
    r: u32,
    k: u32,
    mu: DiscreteMeasure,
    nu: DiscreteMeasure,
}

/// 100 instances covering every (r, k) in {1,2}^2 and (d_x, d_y) in {1,2,3}^2.
fn decomposition_instances() -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0002);
    let mut out = Vec::new();
    for idx in 0..100 {
        let rk = idx % 4;
        let (r, k) = (1 + (rk / 2) as u32, 1 + (rk % 2) as u32);
        let dims = (idx / 4) % 9;
        let (dx, dy) = (1 + dims / 3, 1 + dims % 3);
        let nx = rng.gen_range(1..=6);
        let ny = rng.gen_range(1..=6);
        out.push(Instance {
            r,
            k,
            mu: random_measure(&mut rng, nx, dx),
            nu: random_measure(&mut rng, ny, dy),
        });
    }
    out
}

// ---------------------------------------------------------------------------
// Criteria

fn c1_closed_form() -> Outcome {
    let cfg = SolverConfig::default();
    let mut worst = 0.0f64;
    let mut slowest = Duration::ZERO;
    for p in [0.25, 0.5] {
        for radius in [1.0, 3.0] {
            for r in [1, 2] {
                for k in [1, 2] {
                    let mu =
                        DiscreteMeasure::new(1, vec![vec![0.0], vec![radius]], vec![1.0 - p, p])
                            .unwrap();
                    let nu = DiscreteMeasure::dirac_origin(1).unwrap();
                    let expected = 2.0 * p * (1.0 - p) * f64::powi(radius, (4 * k * r) as i32);
                    // Warm the model cache so the timing covers the solve.
                    model(r, k, 1, 1).unwrap();
                    let t = Instant::now();
                    let v = compute_gw(&mu, &nu, r, k, &cfg).unwrap().value;
                    slowest = slowest.max(t.elapsed());
                    worst = worst.max(rel(v, expected));
                    assert_eq!(lower_bound_exact(p, radius, r, k).unwrap(), expected);
                }
            }
        }
    }
    outcome(
        worst <= 1e-9 && slowest < Duration::from_secs(1),
        format!("16 cases, max rel err {worst:.2e}, slowest {slowest:?}"),
    )
}

fn c2_c3_decomposition() -> (Outcome, Outcome) {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0_FFEE);
    let start = Instant::now();
    let mut worst2 = 0.0f64;
    let mut worst3 = 0.0f64;
    let mut checks = 0;
    for inst in decomposition_instances() {
        let m = model(inst.r, inst.k, inst.mu.dim(), inst.nu.dim()).unwrap();
        let marginal = marginal_value(&m.exp, &inst.mu, &inst.nu).unwrap();
        let fam = m.family(DEFAULT_ZERO_TOL).unwrap();
        for _ in 0..10 {
            let pi = random_coupling(&mut rng, &inst.mu, &inst.nu);
            let q = coupling_value_direct(&m.exp, &inst.mu, &inst.nu, &pi).unwrap();
            let oracle = double_sum(&inst.mu, &inst.nu, &pi, inst.r, inst.k);
            // One-atom pairs have oracle exactly 0; there the error is absolute.
            let err = if oracle == 0.0 {
                (marginal + q).abs()
            } else {
                rel(marginal + q, oracle)
            };
            worst2 = worst2.max(err);
            let signed = fam.signed_sum(&fam.integrals(&inst.mu, &inst.nu, &pi));
            worst3 = worst3.max(rel(signed, q));
            checks += 1;
        }
    }
    let elapsed = start.elapsed();
    (
        outcome(
            worst2 <= 1e-9 && elapsed < Duration::from_secs(120),
            format!("{checks} couplings, max err {worst2:.2e} (relative; absolute where the oracle is 0), {elapsed:?}"),
        ),
        outcome(worst3 <= 1e-8, format!("{checks} couplings, max rel err {worst3:.2e}")),
    )
}

fn c4_invariances() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0004);
    let cfg = SolverConfig::default();
    let mut worst_t = 0.0f64;
    let mut worst_d = 0.0f64;
    for idx in 0..20 {
        let (r, k) = (1 + (idx % 2) as u32, 1 + ((idx / 2) % 2) as u32);
        let (dx, dy) = (1 + idx % 3, 1 + (idx / 3) % 2);
        let (nx, ny) = (rng.gen_range(2..=5), rng.gen_range(2..=5));
        let mu = random_measure(&mut rng, nx, dx);
        let nu = random_measure(&mut rng, ny, dy);
        let base = compute_gw(&mu, &nu, r, k, &cfg).unwrap().value;
        let a: Vec<f64> = (0..dx).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let b: Vec<f64> = (0..dy).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let moved = compute_gw(
            &mu.translate(&a).unwrap(),
            &nu.translate(&b).unwrap(),
            r,
            k,
            &cfg,
        )
        .unwrap()
        .value;
        worst_t = worst_t.max(rel(moved, base));
        for lambda in [0.5, 2.0] {
            let v = compute_gw(&mu.dilate(lambda), &nu.dilate(lambda), r, k, &cfg)
                .unwrap()
                .value;
            worst_d = worst_d.max(rel(v, lambda.powi((4 * k * r) as i32) * base));
        }
    }
    outcome(
        worst_t <= 1e-9 && worst_d <= 1e-8,
        format!("20 instances, translation rel err {worst_t:.2e}, dilation rel err {worst_d:.2e}"),
    )
}

fn load_json(name: &str) -> Value {
    let path = format!("{}/tests/data/{name}", env!("CARGO_MANIFEST_DIR"));
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn points(v: &Value) -> Vec<Vec<f64>> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|p| {
            p.as_array()
                .unwrap()
                .iter()
                .map(|c| c.as_f64().unwrap())
                .collect()
        })
        .collect()
}

fn c5_oracle() -> Outcome {
    let start = Instant::now();
    let corpus = load_json("gw_corpus.json");
    let cfg = SolverConfig::default();
    let mut worst = 0.0f64;
    let mut count = 0;
    let mut frozen = None;
    for (idx, inst) in corpus.as_array().unwrap().iter().enumerate() {
        let r = inst["r"].as_u64().unwrap() as u32;
        let k = inst["k"].as_u64().unwrap() as u32;
        let mu = DiscreteMeasure::empirical(points(&inst["mu"])).unwrap();
        let nu = DiscreteMeasure::empirical(points(&inst["nu"])).unwrap();
        let m = model(r, k, mu.dim(), nu.dim()).unwrap();
        let bf = solve_brute_force(&m, &mu, &nu, &cfg).unwrap();
        let fw = solve_frank_wolfe(&m, &mu, &nu, &cfg).unwrap();
        let fam = family_for(&m, &mu, &nu, &cfg).unwrap();
        let da = solve_dual_alternating(&m, &fam, &mu, &nu, &cfg).unwrap();
        worst = worst
            .max((fw.value - bf.value).abs())
            .max((da.value - bf.value).abs());
        if idx == 0 {
            frozen = Some(bf.value);
        }
        count += 1;
    }
    // Hand-derived: value 4.5 + 32 t(1/2 - t) over t in [0, 1/2].
    let frozen = frozen.unwrap();
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-6 && (frozen - 4.5).abs() <= 1e-12 && count >= 30 && elapsed < Duration::from_secs(600),
        format!("{count} instances, max |method - oracle| {worst:.2e}, frozen 2x2 value {frozen}, {elapsed:?}"),
    )
}

fn frac(v: &Value) -> f64 {
    let a = v.as_array().unwrap();
    a[0].as_i64().unwrap() as f64 / a[1].as_i64().unwrap() as f64
}

fn c6_ot_exactness() -> Outcome {
    let corpus = load_json("ot_corpus.json");
    let mut worst_val = 0.0f64;
    let mut worst_feas = 0.0f64;
    let mut worst_slack = 0.0f64;
    let mut worst_gap = 0.0f64;
    let mut count = 0;
    for inst in corpus.as_array().unwrap() {
        let a: Vec<f64> = inst["mu"].as_array().unwrap().iter().map(frac).collect();
        let b: Vec<f64> = inst["nu"].as_array().unwrap().iter().map(frac).collect();
        let cost_rows: Vec<Vec<f64>> = inst["cost"]
            .as_array()
            .unwrap()
            .iter()
            .map(|row| row.as_array().unwrap().iter().map(frac).collect())
            .collect();
        let cost = Matrix::from_rows(&cost_rows);
        let exact = frac(&inst["value"]);
        let sol = solve_ot(&cost, &a, &b).unwrap();
        let enumerated = vertex_minimum(&cost, &a, &b).unwrap();
        worst_val = worst_val
            .max((sol.value - exact).abs())
            .max((sol.value - enumerated).abs());
        worst_feas = worst_feas.max(sol.feasibility_violation(&cost));
        worst_slack = worst_slack.max(sol.slackness_violation(&cost, 1e-12));
        worst_gap = worst_gap.max((sol.value - sol.dual_value(&a, &b)).abs());
        assert!(sol.plan.marginal_deviation(&a, &b).unwrap() <= 1e-10);
        count += 1;
    }
    outcome(
        worst_val <= 1e-10 && worst_feas <= 1e-9 && worst_slack <= 1e-8 && worst_gap <= 1e-8,
        format!(
            "{count} problems, value err {worst_val:.1e}, feasibility {worst_feas:.1e}, slackness {worst_slack:.1e}, duality gap {worst_gap:.1e}"
        ),
    )
}

fn c7_contraction_lipschitz() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0007);
    let mut violations = 0;
    let mut draws = 0;
    for draw in 0..200 {
        let (r, k) = (1 + (draw % 2) as u32, 1 + ((draw / 2) % 2) as u32);
        let (dx, dy) = (1 + draw % 2, 1 + (draw / 4) % 2);
        let m = model(r, k, dx, dy).unwrap();
        let xs: Vec<Vec<f64>> = (0..rng.gen_range(2..7))
            .map(|_| ball_point(&mut rng, dx))
            .collect();
        let ys: Vec<Vec<f64>> = (0..rng.gen_range(2..7))
            .map(|_| ball_point(&mut rng, dy))
            .collect();
        let mut fam = m.family(DEFAULT_ZERO_TOL).unwrap();
        fam.attach_boxes(&xs, &ys).unwrap();
        let boxes = fam.boxes.clone().unwrap();
        let table = fam.basis.table(&xs, &ys);
        let theta = |rng: &mut ChaCha8Rng| -> (Vec<f64>, Vec<f64>) {
            (
                boxes
                    .plus
                    .iter()
                    .map(|w| rng.gen_range(-1.0..=1.0) * w)
                    .collect(),
                boxes
                    .minus
                    .iter()
                    .map(|w| rng.gen_range(-1.0..=1.0) * w)
                    .collect(),
            )
        };
        let (u, v) = theta(&mut rng);
        let (u2, v2) = theta(&mut rng);
        let f1: Vec<f64> = xs.iter().map(|_| rng.gen_range(-2.0..2.0)).collect();
        let f2: Vec<f64> = xs.iter().map(|_| rng.gen_range(-2.0..2.0)).collect();

        let cost = fam.cost_matrix(&u, &v, &table, true).unwrap();
        let g1 = c_transform(&cost, &f1).unwrap();
        let g2 = c_transform(&cost, &f2).unwrap();
        let lhs = g1
            .iter()
            .zip(&g2)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let rhs = f1
            .iter()
            .zip(&f2)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        // 1e-12 slack relative to the operand scale: at |c| ~ 1e4 one ulp is ~2e-12.
        let scale = cost.max_abs().max(1.0);
        if lhs > rhs + 1e-12 * scale {
            violations += 1;
        }

        let cost2 = fam.cost_matrix(&u2, &v2, &table, true).unwrap();
        let sup = cost
            .data
            .iter()
            .zip(&cost2.data)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let dist = u
            .iter()
            .chain(&v)
            .zip(u2.iter().chain(&v2))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let scale = cost.max_abs().max(cost2.max_abs()).max(1.0);
        if sup > fam.l_par().unwrap() * dist + 1e-12 * scale {
            violations += 1;
        }
        draws += 1;
    }
    outcome(
        violations == 0,
        format!("{draws} draws, {violations} violations"),
    )
}

const RATE_GRID: [usize; 7] = [32, 64, 128, 256, 512, 1024, 2048];

fn c8_parametric_rate() -> Outcome {
    let start = Instant::now();
    let res = empirical_lower_check(0.25, 1.0, 1, 1, &RATE_GRID, 200, 0xACCE_0008, 100).unwrap();
    let slope = res.fitted_slope.unwrap_or(f64::NAN);
    let elapsed = start.elapsed();
    outcome(
        (-0.65..=-0.35).contains(&slope)
            && res.cross_check_max_rel <= 1e-9
            && res.cross_checks >= 14
            && elapsed < Duration::from_secs(300),
        format!(
            "slope {slope:.3} (predicted {:.2}, CI +-{:.3}), {} pipeline cross-checks, max rel {:.1e}, {elapsed:?}",
            res.predicted_slope,
            res.slope_ci_halfwidth.unwrap_or(f64::NAN),
            res.cross_checks,
            res.cross_check_max_rel
        ),
    )
}

fn c9_marginal_rate() -> Outcome {
    let start = Instant::now();
    let cube = DistributionSpec::UniformCube {
        dim: 2,
        half_width: 1.0,
    };
    let moment = moment_rate_experiment(&cube, &[2, 0], &RATE_GRID, 200, 0xACCE_0009).unwrap();
    let tp = DistributionSpec::TwoPoint {
        dim: 1,
        r: 1.0,
        p: 0.25,
    };
    let pm = DistributionSpec::PointMass { dim: 1 };
    let marginal = marginal_rate_experiment(1, 1, &tp, &pm, &RATE_GRID, 200, 0xACCE_0109).unwrap();
    let s1 = moment.fitted_slope.unwrap_or(f64::NAN);
    let s2 = marginal.fitted_slope.unwrap_or(f64::NAN);
    let elapsed = start.elapsed();
    outcome(
        (-0.65..=-0.35).contains(&s1)
            && (-0.65..=-0.35).contains(&s2)
            && elapsed < Duration::from_secs(120),
        format!("moment slope {s1:.3}, marginal-part slope {s2:.3}, {elapsed:?}"),
    )
}

fn c10_high_dimension() -> Outcome {
    let start = Instant::now();
    let cube = DistributionSpec::UniformCube {
        dim: 5,
        half_width: 1.0,
    };
    let exp = RateExperiment {
        r: 1,
        k: 1,
        dist_x: cube.clone(),
        dist_y: cube,
        n_grid: vec![16, 32, 64, 128],
        trials: 50,
        seed: 0xACCE_0010,
        reference: Reference::SelfZero,
        solver: SolverConfig {
            restarts: 3,
            ..SolverConfig::default()
        },
        parallel: true,
    };
    let res = run_rate_experiment(&exp).unwrap();
    let slope = res.fitted_slope.unwrap_or(f64::NAN);
    let rho = res.spearman.unwrap_or(f64::NAN);
    let elapsed = start.elapsed();
    outcome(
        rho <= -0.8 && slope <= -0.15 && elapsed < Duration::from_secs(1800),
        format!(
            "diagnostic: slope {slope:.3} (theory -0.4), Spearman {rho:.2}, means {:?}, {elapsed:?}",
            res.mean_errors.iter().map(|m| format!("{m:.3e}")).collect::<Vec<_>>()
        ),
    )
}

fn c11_self_distance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0011);
    let cfg = SolverConfig::default();
    let mut worst = 0.0f64;
    for idx in 0..20 {
        let (r, k) = (1 + (idx % 2) as u32, 1 + ((idx / 2) % 2) as u32);
        let d = 1 + (idx / 4) % 3;
        let n = rng.gen_range(1..=10);
        let mu = random_measure(&mut rng, n, d);
        let v = compute_gw(&mu, &mu, r, k, &cfg).unwrap().value;
        worst = worst.max(v);
    }
    outcome(worst <= 1e-8, format!("20 measures, max value {worst:.2e}"))
}

fn report(results: &mut Vec<(usize, Outcome)>, n: usize, name: &str, o: Outcome) {
    println!(
        "criterion {n:>2} {name}: {} ({})",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail
    );
    results.push((n, o));
}

fn main() {
    let wanted: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let run = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let mut results = Vec::new();
    let single: [(usize, &str, fn() -> Outcome); 9] = [
        (1, "closed-form two-point value", c1_closed_form),
        (4, "translation and dilation", c4_invariances),
        (5, "oracle optimality", c5_oracle),
        (6, "OT solver exactness", c6_ot_exactness),
        (7, "contraction and Lipschitz", c7_contraction_lipschitz),
        (8, "parametric rate", c8_parametric_rate),
        (9, "marginal estimator rate", c9_marginal_rate),
        (10, "higher-dimension diagnostic", c10_high_dimension),
        (11, "self-distance", c11_self_distance),
    ];
    for (n, name, f) in &single[..1] {
        if run(*n) {
            report(&mut results, *n, name, f());
        }
    }
    if run(2) || run(3) {
        let (o2, o3) = c2_c3_decomposition();
        if run(2) {
            report(&mut results, 2, "decomposition identity", o2);
        }
        if run(3) {
            report(&mut results, 3, "signed-eigen identity", o3);
        }
    }
    for (n, name, f) in &single[1..] {
        if run(*n) {
            report(&mut results, *n, name, f());
        }
    }
    let failed = results.iter().filter(|r| !r.1.pass).count();
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
