//! Desk-scale acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use robust_mv::closed_form::{solve, solve_compound_poisson};
use robust_mv::model::{CompoundPoisson, JumpBounds, JumpSizeLaw};
use robust_mv::pde_check::{residual_grid, saddle_check, DerivativeMode, GridConfig, SaddleConfig};
use robust_mv::report::ode_check;
use robust_mv::simulate::{
    estimate_j, perturb_equilibrium, perturb_worst_case, simulate_paths, PerturbConfig, SimConfig,
};
use robust_mv::worst_case::{pwz_inequality_check, solve_worst_case, worst_case_numeric, Method, NumericConfig};
use robust_mv::{
    CaseLabel, ClosedFormSolution, Criterion, CriterionKind, JumpSpec, OdeConfig, Scenario, UncertaintySet,
    WealthDynamics, WorstCaseResult,
};

type Outcome = Result<String, String>;

fn short_second() -> UncertaintySet {
    UncertaintySet::two_asset((0.10, 0.12), (0.02, 0.03), (0.15, 0.2), (0.2, 0.3), (0.4, 0.6)).unwrap()
}

fn long_both() -> UncertaintySet {
    UncertaintySet::two_asset((0.10, 0.12), (0.09, 0.10), (0.15, 0.2), (0.2, 0.25), (0.1, 0.3)).unwrap()
}

fn ignore_second() -> UncertaintySet {
    UncertaintySet::two_asset((0.10, 0.12), (0.02, 0.03), (0.15, 0.2), (0.2, 0.3), (0.2, 0.25)).unwrap()
}

/// Diagonal two-asset market with a two-point jump on the first asset.
fn compound_poisson_set() -> UncertaintySet {
    let rate = DVector::from_element(1, 0.5);
    let cp = CompoundPoisson::new(
        DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
        rate.clone(),
        vec![JumpSizeLaw::TwoPoint { low: 0.0, high: 0.2, p_high: 0.5 }],
    )
    .unwrap();
    let sc = Scenario::new(
        DVector::from_vec(vec![0.1, 0.05]),
        DMatrix::from_diagonal(&DVector::from_vec(vec![0.04, 0.0625])),
        None,
    )
    .unwrap();
    UncertaintySet::point(&sc)
        .unwrap()
        .with_jump_bounds(Some(JumpBounds {
            base: JumpSpec::CompoundPoisson(cp),
            rate_lo: rate.clone(),
            rate_hi: rate,
        }))
        .unwrap()
}

fn criterion(kind: CriterionKind, lambda: f64) -> Criterion {
    let x0 = if kind == CriterionKind::LogReturn { 0.0 } else { 1.0 };
    Criterion::new(kind, lambda, 1.0, 0.0, x0).unwrap()
}

struct Case {
    name: &'static str,
    set: UncertaintySet,
    sol: ClosedFormSolution,
}

fn solved_cases() -> Vec<Case> {
    let num = NumericConfig::default();
    let ode = OdeConfig::default();
    let tw = criterion(CriterionKind::TerminalWealth, 1.0);
    let lr = criterion(CriterionKind::LogReturn, 1.0);
    let cp = criterion(CriterionKind::TerminalWealth, 2.0);
    let cp_set = compound_poisson_set();
    vec![
        Case {
            name: "terminal wealth",
            sol: solve(&short_second(), &tw, Method::Closed, &num, &ode).unwrap(),
            set: short_second(),
        },
        Case {
            name: "log return",
            sol: solve(&short_second(), &lr, Method::Closed, &num, &ode).unwrap(),
            set: short_second(),
        },
        Case {
            name: "compound Poisson",
            sol: solve_compound_poisson(&cp_set, &cp, &num).unwrap(),
            set: cp_set,
        },
    ]
}

fn coords_gap(a: &Scenario, b: &Scenario) -> f64 {
    let (x, y) = (a.two_asset_coords().unwrap(), b.two_asset_coords().unwrap());
    x.iter().zip(&y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

fn scenario_gap(a: &Scenario, b: &Scenario) -> f64 {
    let d = (&a.drift - &b.drift).amax();
    let c = (&a.covariance - &b.covariance).amax();
    d.max(c)
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let tw = criterion(CriterionKind::TerminalWealth, 1.0);
    let cases = [
        (short_second(), CaseLabel::ShortSecond),
        (long_both(), CaseLabel::LongBoth),
        (ignore_second(), CaseLabel::IgnoreSecond),
    ];
    let mut parts = Vec::new();
    let mut ok = true;
    for (set, want) in cases {
        let closed = solve_worst_case(&set, &tw, Method::Closed, &NumericConfig::default()).map_err(|e| e.to_string())?;
        let numeric = worst_case_numeric(&set, &tw, &NumericConfig::default()).map_err(|e| e.to_string())?;
        let dp = (closed.risk_premium - numeric.risk_premium).abs();
        let label_ok = closed.case_label == want;
        let (coord_ok, dc) = if want == CaseLabel::IgnoreSecond {
            (true, f64::NAN)
        } else {
            let dc = coords_gap(&closed.theta_hat, &numeric.theta_hat);
            (dc <= 1e-4, dc)
        };
        let p_ok = if want == CaseLabel::IgnoreSecond {
            dp <= 1e-6 && (closed.risk_premium - 0.25).abs() <= 1e-12
        } else {
            dp <= 1e-6
        };
        ok &= label_ok && coord_ok && p_ok;
        parts.push(format!("{}: |dP| {dp:.1e}, max |dθ| {dc:.1e}", closed.case_label));
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs <= 30.0;
    check(ok, format!("{} ({secs:.1} s)", parts.join("; ")))
}

/// Every third draw has a weak second asset and strong correlation, which
/// lands in the short-second region far more often than uniform draws.
fn random_ordered_set(rng: &mut ChaCha8Rng, weak_second: bool) -> UncertaintySet {
    let b1_lo: f64 = rng.random_range(0.02..0.15);
    let b1_hi = b1_lo + rng.random_range(0.0..0.05);
    let b2_lo = if weak_second {
        rng.random_range(0.0..0.2 * b1_lo)
    } else {
        rng.random_range(0.0..b1_lo)
    };
    let b2_hi = if weak_second {
        b2_lo + rng.random_range(0.0..0.1) * b1_lo
    } else {
        b2_lo + rng.random_range(0.0..1.0) * (b1_hi - b2_lo)
    };
    let s1_lo: f64 = rng.random_range(0.1..0.3);
    let s1_hi = s1_lo + rng.random_range(0.0..0.1);
    let s2_lo: f64 = s1_lo + rng.random_range(0.0..0.1);
    let s2_hi = s2_lo.max(s1_hi) + rng.random_range(0.0..0.1);
    let rho_lo = if weak_second {
        rng.random_range(0.4..0.8)
    } else {
        rng.random_range(-0.3..0.8)
    };
    let rho_hi = rho_lo + rng.random_range(0.0..0.15);
    UncertaintySet::two_asset((b1_lo, b1_hi), (b2_lo, b2_hi), (s1_lo, s1_hi), (s2_lo, s2_hi), (rho_lo, rho_hi)).unwrap()
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let tw = criterion(CriterionKind::TerminalWealth, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let n = 60;
    let mut worst = 0.0f64;
    let mut sign_violations = 0;
    let mut counts = [0usize; 3];
    for i in 0..n {
        let set = random_ordered_set(&mut rng, i % 3 == 0);
        let closed = solve_worst_case(&set, &tw, Method::Closed, &NumericConfig::default()).map_err(|e| e.to_string())?;
        let numeric = worst_case_numeric(&set, &tw, &NumericConfig::default()).map_err(|e| e.to_string())?;
        worst = worst.max((closed.risk_premium - numeric.risk_premium).abs() / (1.0 + closed.risk_premium));
        let d = closed.direction();
        if !(d[0] > 0.0 && closed.sign_pattern_consistent()) {
            sign_violations += 1;
        }
        match closed.case_label {
            CaseLabel::ShortSecond => counts[0] += 1,
            CaseLabel::LongBoth => counts[1] += 1,
            _ => counts[2] += 1,
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-6 && sign_violations == 0 && secs <= 300.0,
        format!(
            "{n} sets ({} ShortSecond, {} LongBoth, {} IgnoreSecond), max |dP|/(1+P) {worst:.1e}, {sign_violations} sign violations ({secs:.1} s)",
            counts[0], counts[1], counts[2]
        ),
    )
}

fn worst_case_gap(a: &WorstCaseResult, b: &WorstCaseResult) -> f64 {
    if a.case_label != b.case_label || a.manifold != b.manifold {
        return f64::INFINITY;
    }
    scenario_gap(&a.theta_hat, &b.theta_hat).max((a.risk_premium - b.risk_premium).abs())
}

fn criterion_3() -> Outcome {
    let mut worst = 0.0f64;
    let mut runs = 0;
    let sets = [
        (short_second(), Method::Closed),
        (long_both(), Method::Closed),
        (ignore_second(), Method::Closed),
        (compound_poisson_set(), Method::Numeric),
    ];
    for (set, method) in &sets {
        let reference = solve_worst_case(set, &criterion(CriterionKind::TerminalWealth, 1.0), *method, &NumericConfig::default())
            .map_err(|e| e.to_string())?;
        let kinds: &[CriterionKind] = if set.jump_bounds.is_some() {
            &[CriterionKind::TerminalWealth]
        } else {
            &[CriterionKind::TerminalWealth, CriterionKind::LogReturn]
        };
        for &kind in kinds {
            for lambda in [0.5, 1.0, 2.0] {
                let r = solve_worst_case(set, &criterion(kind, lambda), *method, &NumericConfig::default())
                    .map_err(|e| e.to_string())?;
                worst = worst.max(worst_case_gap(&reference, &r));
                runs += 1;
            }
        }
    }
    check(worst <= 1e-10, format!("{runs} solves, max field difference {worst:.1e}"))
}

fn criterion_4(cases: &[Case]) -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for c in cases {
        let cfg = GridConfig {
            mode: DerivativeMode::Analytic,
            ..Default::default()
        };
        let table = residual_grid(&c.sol, &cfg).map_err(|e| e.to_string())?;
        let has_both = table.max_for("sys5_main").is_some() && table.max_for("sys7_main").is_some();
        let res = table.max_pde();
        let id = table.max_for("identity").unwrap_or(f64::INFINITY);
        let grid_ok = table.rows.iter().filter(|r| r.eq_id == "sys5_main").count() == 100;
        ok &= has_both && grid_ok && res <= 1e-8 && id <= 1e-12;
        parts.push(format!("{}: residual {res:.1e}, identity {id:.1e}", c.name));
    }
    check(ok, parts.join("; "))
}

fn criterion_5(cases: &[Case]) -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for c in cases {
        let mut worst_alpha = f64::NEG_INFINITY;
        let mut worst_theta = f64::INFINITY;
        let mut all = true;
        for seed in 0..5 {
            let r = saddle_check(&c.sol, &c.set, &SaddleConfig { samples: 1000, seed, ..Default::default() });
            all &= r.passed;
            worst_alpha = worst_alpha.max(r.max_f_alpha - r.f_saddle);
            worst_theta = worst_theta.min(r.min_f_theta - r.f_saddle);
        }
        let scaled = c.sol.clone().with_value_scale(1.01);
        let probe_v = saddle_check(&scaled, &c.set, &SaddleConfig { samples: 1000, ..Default::default() }).n_violations;
        ok &= all && probe_v > 0;
        parts.push(format!(
            "{}: 5 seeds {}, max F(a)-F* {worst_alpha:.1e}, min F(th)-F* {worst_theta:.1e}, scaled-V probe {probe_v} violations",
            c.name,
            if all { "pass" } else { "fail" }
        ));
    }
    let wrong_theta = Scenario::two_asset(0.12, 0.02, 0.15, 0.3, 0.6).unwrap();
    for c in cases.iter().filter(|c| !c.set.is_singleton()) {
        let wrong = c.sol.with_theta_hat(wrong_theta.clone(), &OdeConfig::default()).map_err(|e| e.to_string())?;
        let r = saddle_check(&wrong, &c.set, &SaddleConfig { samples: 1000, ..Default::default() });
        ok &= r.n_violations > 0;
        parts.push(format!("{}: non-minimizer probe {} violations", c.name, r.n_violations));
    }
    check(ok, parts.join("; "))
}

fn criterion_6(cases: &[Case]) -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    let extra = Case {
        name: "long both",
        sol: solve(&long_both(), &criterion(CriterionKind::TerminalWealth, 1.0), Method::Closed, &NumericConfig::default(), &OdeConfig::default())
            .unwrap(),
        set: long_both(),
    };
    for c in cases.iter().chain(std::iter::once(&extra)) {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let theta_hat = c.sol.theta_hat();
        let at_hat = pwz_inequality_check(theta_hat, theta_hat).map_err(|e| e.to_string())?;
        let mut max_slack = f64::NEG_INFINITY;
        let mut spurious_equalities = 0;
        for _ in 0..100 {
            let th = c.set.sample(&mut rng);
            let slack = pwz_inequality_check(theta_hat, &th).map_err(|e| e.to_string())?;
            max_slack = max_slack.max(slack);
            if slack >= 0.0 && scenario_gap(&th, theta_hat) > 1e-12 {
                spurious_equalities += 1;
            }
        }
        ok &= max_slack <= 1e-10 && at_hat.abs() <= 1e-14 && spurious_equalities == 0;
        parts.push(format!(
            "{}: max slack {max_slack:.1e}, at θ̂ {at_hat:.1e}, {spurious_equalities} equalities off θ̂",
            c.name
        ));
    }
    check(ok, parts.join("; "))
}

fn criterion_7() -> Outcome {
    let c = criterion(CriterionKind::WealthScaledLambda, 1.0);
    let sol = solve(&short_second(), &c, Method::Closed, &NumericConfig::default(), &OdeConfig::default())
        .map_err(|e| e.to_string())?;
    let o = ode_check(&sol).ok_or("no ODE grid")?;
    check(
        o.passed,
        format!(
            "fd residual {:.1e}, step-halving {:.1e}, terminal exact {}, min(A, B) {:.4}",
            o.fd_residual_max, o.richardson_estimate, o.terminal_exact, o.min_value
        ),
    )
}

fn criterion_8(cases: &[Case]) -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for (i, c) in cases.iter().enumerate() {
        let start = Instant::now();
        let crit = c.sol.criterion;
        let cfg = SimConfig::new(100_000, 1e-3 * crit.span(), 8_000 + i as u64);
        let batch = simulate_paths(WealthDynamics::new(crit.kind), &c.sol, c.sol.theta_hat(), &crit, &cfg)
            .map_err(|e| e.to_string())?;
        let est = estimate_j(&batch.terminal, &crit).map_err(|e| e.to_string())?;
        let zj = (est.j_hat - c.sol.value(crit.t0, crit.x0)).abs() / est.standard_error_j;
        let zm = (est.mean_hat - c.sol.g(crit.t0, crit.x0)).abs() / est.standard_error_mean;
        let secs = start.elapsed().as_secs_f64();
        ok &= zj <= 3.0 && zm <= 3.0 && secs <= 120.0;
        parts.push(format!("{}: |J-V|/SE {zj:.2}, |m-g|/SE {zm:.2} ({secs:.1} s)", c.name));
    }
    check(ok, parts.join("; "))
}

fn criterion_9(cases: &[Case]) -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for c in cases.iter().filter(|c| c.sol.criterion.kind != CriterionKind::TerminalWealth || c.set.jump_bounds.is_none()) {
        let start = Instant::now();
        let cfg = PerturbConfig {
            seed: 9_000,
            ..Default::default()
        };
        let eq = perturb_equilibrium(&c.sol, &c.set, &cfg).map_err(|e| e.to_string())?;
        let wc = perturb_worst_case(&c.sol, &c.set, &cfg).map_err(|e| e.to_string())?;
        let probe = perturb_equilibrium(&c.sol, &c.set, &PerturbConfig { base_scale: 2.0, ..cfg.clone() })
            .map_err(|e| e.to_string())?;
        let smallest = probe.levels.last().map_or(0, |l| l.n_violations);
        ok &= eq.passed && wc.passed && smallest > 0;
        let crn = eq.crn.as_ref().map_or(f64::NAN, |x| x.ratio);
        parts.push(format!(
            "{}: strategy {} violations, scenario {} violations, CRN gain x{crn:.1}, 2α̂ probe {smallest} violations at h = {} ({:.1} s)",
            c.name,
            eq.n_violations,
            wc.n_violations,
            cfg.h_list.last().unwrap(),
            start.elapsed().as_secs_f64()
        ));
    }
    check(ok, parts.join("; "))
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

fn criterion_10(cases: &[Case]) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for c in cases {
        let crit = c.sol.criterion;
        let mut cfg = SimConfig::new(4_000, 1e-2 * crit.span(), 10);
        cfg.antithetic = true;
        let run = || simulate_paths(WealthDynamics::new(crit.kind), &c.sol, c.sol.theta_hat(), &crit, &cfg).unwrap().terminal;
        let a = in_pool(1, run);
        let b = in_pool(4, run);
        let c2 = run();
        let same = a.iter().zip(&b).chain(a.iter().zip(&c2)).all(|(x, y)| x.to_bits() == y.to_bits());
        ok &= same && a.len() == b.len();
        parts.push(format!("{} simulate {}", c.name, if same { "identical" } else { "differs" }));
    }
    let c = &cases[0];
    let cfg = PerturbConfig {
        n_paths: 4_000,
        w_samples: 4,
        u_samples: 4,
        seed: 10,
        ..Default::default()
    };
    let p1 = in_pool(1, || perturb_equilibrium(&c.sol, &c.set, &cfg).unwrap());
    let p2 = in_pool(3, || perturb_equilibrium(&c.sol, &c.set, &cfg).unwrap());
    let q1 = perturb_worst_case(&c.sol, &c.set, &cfg).unwrap();
    let q2 = in_pool(2, || perturb_worst_case(&c.sol, &c.set, &cfg).unwrap());
    let sc = SaddleConfig { samples: 200, seed: 10, ..Default::default() };
    let s1 = saddle_check(&c.sol, &c.set, &sc);
    let s2 = saddle_check(&c.sol, &c.set, &sc);
    let perturb_same = p1 == p2 && q1 == q2;
    ok &= perturb_same && s1 == s2;
    parts.push(format!("perturb {}", if perturb_same { "identical" } else { "differs" }));
    parts.push(format!("saddle {}", if s1 == s2 { "identical" } else { "differs" }));
    check(ok, parts.join("; "))
}

fn main() -> ExitCode {
    let cases = solved_cases();
    let results: Vec<(&str, Outcome)> = vec![
        ("1 closed-form worst cases vs grid oracle", criterion_1()),
        ("2 randomized worst-case sweep", criterion_2()),
        ("3 invariance in lambda and criterion", criterion_3()),
        ("4 PDE residuals and identity", criterion_4(&cases)),
        ("5 saddle structure and probes", criterion_5(&cases)),
        ("6 quadratic inequality", criterion_6(&cases)),
        ("7 ODE coefficients", criterion_7()),
        ("8 Monte Carlo consistency", criterion_8(&cases)),
        ("9 perturbation tests", criterion_9(&cases)),
        ("10 determinism", criterion_10(&cases)),
    ];
    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
