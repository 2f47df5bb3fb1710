use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use robust_mv::pde_check::{residual_grid, saddle_check, GridConfig, SaddleConfig};
use robust_mv::simulate::{perturb_equilibrium, simulate_paths, PerturbConfig, SimConfig};
use robust_mv::worst_case::{solve_worst_case, worst_case_numeric, Method, NumericConfig};
use robust_mv::CriterionKind;
use robust_mv::WealthDynamics;
use robust_mv_bench::{compound_poisson_set, short_second, solved, three_asset_hull};

fn worst_case(c: &mut Criterion) {
    let set = short_second();
    let tw = solved(&set, CriterionKind::TerminalWealth, 1.0, Method::Closed).criterion;
    let mut g = c.benchmark_group("worst_case");
    g.sample_size(10);
    g.bench_function("closed_two_asset", |b| {
        b.iter(|| solve_worst_case(black_box(&set), &tw, Method::Closed, &NumericConfig::default()).unwrap())
    });
    g.bench_function("numeric_two_asset_r21", |b| {
        b.iter(|| worst_case_numeric(black_box(&set), &tw, &NumericConfig::default()).unwrap())
    });
    let hull = three_asset_hull();
    let coarse = NumericConfig {
        grid_resolution: 7,
        ..Default::default()
    };
    g.bench_function("numeric_three_asset_hull_r7", |b| {
        b.iter(|| worst_case_numeric(black_box(&hull), &tw, &coarse).unwrap())
    });
    g.finish();
}

fn checks(c: &mut Criterion) {
    let set = short_second();
    let tw = solved(&set, CriterionKind::TerminalWealth, 1.0, Method::Closed);
    let wsl = solved(&set, CriterionKind::WealthScaledLambda, 1.0, Method::Closed);
    let mut g = c.benchmark_group("checks");
    g.bench_function("residual_grid_terminal_wealth", |b| {
        b.iter(|| residual_grid(black_box(&tw), &GridConfig::default()).unwrap())
    });
    g.bench_function("residual_grid_wealth_scaled", |b| {
        b.iter(|| residual_grid(black_box(&wsl), &GridConfig::default()).unwrap())
    });
    g.bench_function("saddle_1000", |b| {
        b.iter(|| saddle_check(black_box(&tw), &set, &SaddleConfig::default()))
    });
    g.finish();
}

fn monte_carlo(c: &mut Criterion) {
    let set = short_second();
    let tw = solved(&set, CriterionKind::TerminalWealth, 1.0, Method::Closed);
    let cp_set = compound_poisson_set();
    let cp = solved(&cp_set, CriterionKind::TerminalWealth, 2.0, Method::Numeric);
    let cfg = SimConfig::new(10_000, 1e-3, 1);
    let mut g = c.benchmark_group("monte_carlo");
    g.sample_size(10);
    for (name, sol) in [("terminal_wealth_10k", &tw), ("compound_poisson_10k", &cp)] {
        let crit = sol.criterion;
        g.bench_function(name, |b| {
            b.iter(|| simulate_paths(WealthDynamics::new(crit.kind), sol, sol.theta_hat(), &crit, &cfg).unwrap())
        });
    }
    let pcfg = PerturbConfig {
        n_paths: 10_000,
        w_samples: 5,
        u_samples: 5,
        ..Default::default()
    };
    g.bench_function("perturb_equilibrium_10k", |b| {
        b.iter(|| perturb_equilibrium(black_box(&tw), &set, &pcfg).unwrap())
    });
    g.finish();
}

criterion_group!(benches, worst_case, checks, monte_carlo);
criterion_main!(benches);
