use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use serde::Serialize;

use robust_mv::closed_form::solve;
use robust_mv::config::ProblemFile;
use robust_mv::pde_check::residual_grid;
use robust_mv::report::{verify, PerturbReport, ScenarioReport, SimulateReport, StrategyReport, WorstCaseReport};
use robust_mv::simulate::{estimate_j, perturb_equilibrium, perturb_worst_case, simulate_paths, write_rmvp};
use robust_mv::worst_case::solve_worst_case;
use robust_mv::{Error, WealthDynamics};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Command {
    WorstCase,
    Strategy,
    Verify,
    Simulate,
    Perturb,
}

/// Robust mean-variance engine: worst-case scenarios, equilibrium
/// strategies, PDE checks and Monte Carlo tests.
#[derive(Parser, Debug)]
#[command(name = "robust-mv", version)]
struct Cli {
    command: Command,
    /// JSON problem file.
    file: PathBuf,
    /// Directory for CSV and JSON artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Suppress the human-readable table.
    #[arg(long)]
    quiet: bool,
    /// Print the JSON report on stdout instead of the table.
    #[arg(long)]
    json: bool,
}

/// Exit statuses.
const EXIT_FAIL: u8 = 1;
const EXIT_SCHEMA: u8 = 2;
const EXIT_ASSUMPTION: u8 = 3;
const EXIT_BUDGET: u8 = 4;

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::AssumptionViolated { .. } | Error::NonBankruptcyViolated(_) | Error::Unsupported(_) => EXIT_ASSUMPTION,
        Error::BudgetExceeded(_) | Error::OdeBlowup { .. } | Error::StepTooLarge { .. } | Error::DerivativeFailure { .. } => {
            EXIT_BUDGET
        }
        _ => EXIT_SCHEMA,
    }
}

struct Output {
    out: Option<PathBuf>,
    quiet: bool,
    json: bool,
}

impl Output {
    fn write(&self, name: &str, contents: &str) -> Result<(), Error> {
        if let Some(dir) = &self.out {
            fs::create_dir_all(dir)?;
            fs::write(dir.join(name), contents)?;
        }
        Ok(())
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), Error> {
        self.write(name, &to_json(value))
    }

    /// Prints the table, or the JSON report with `--json`.
    fn emit<T: Serialize>(&self, table: &str, value: &T) {
        if self.json {
            println!("{}", to_json(value));
        } else if !self.quiet {
            print!("{table}");
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("reports serialize")
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
    format!("[{}]", parts.join(", "))
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn scenario_lines(s: &mut String, r: &ScenarioReport) {
    let _ = writeln!(s, "  drift        {}", fmt_vec(&r.drift));
    let _ = writeln!(s, "  vols         {}", fmt_vec(&r.vols));
    for (i, row) in r.correlation.iter().enumerate() {
        let _ = writeln!(s, "  corr[{i}]      {}", fmt_vec(row));
    }
    if let Some(rates) = &r.jump_rates {
        let _ = writeln!(s, "  jump rates   {}", fmt_vec(rates));
        let _ = writeln!(s, "  b_F          {}", fmt_vec(&r.drift_adjusted));
        for (i, row) in r.covariance_adjusted.iter().enumerate() {
            let _ = writeln!(s, "  Sigma_F[{i}]   {}", fmt_vec(row));
        }
    }
}

fn worst_case_table(r: &WorstCaseReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "case          {}", r.case_label);
    let _ = writeln!(s, "risk premium  {:.12}", r.risk_premium);
    if r.theta_hat.vols.len() == 2 {
        let _ = writeln!(s, "rho_hat       {:.6}", r.theta_hat.correlation[0][1]);
    }
    let _ = writeln!(s, "theta_hat");
    scenario_lines(&mut s, &r.theta_hat);
    let _ = writeln!(s, "manifold      {}", r.manifold.as_deref().unwrap_or("no"));
    s
}

fn load(path: &Path) -> Result<ProblemFile, Error> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    ProblemFile::from_json(&text)
}

fn run(cli: &Cli) -> Result<bool, Error> {
    let problem = load(&cli.file)?;
    let set = problem.uncertainty_set()?;
    let crit = problem.criterion()?;
    let out = Output {
        out: cli.out.clone(),
        quiet: cli.quiet,
        json: cli.json,
    };
    let method = problem.method();
    let ncfg = problem.numeric_config();
    let ode_cfg = problem.ode_config();

    match cli.command {
        Command::WorstCase => {
            let wc = solve_worst_case(&set, &crit, method, &ncfg)?;
            let r = WorstCaseReport::from(&wc);
            out.write_json("worst_case.json", &r)?;
            out.emit(&worst_case_table(&r), &r);
            Ok(true)
        }
        Command::Strategy => {
            let sol = solve(&set, &crit, method, &ncfg, &ode_cfg)?;
            let r = StrategyReport::from(&sol);
            for flag in &r.non_bankruptcy {
                eprintln!(
                    "warning: non-bankruptcy condition fails for jump type {}: exposure {:.6} outside [0, 1]",
                    flag.jump_type, flag.exposure
                );
            }
            let mut s = worst_case_table(&r.worst_case);
            let _ = writeln!(s, "alpha_hat     {}", fmt_vec(&r.alpha_hat));
            let _ = writeln!(s, "V(t0, x0)     {:.12}", r.value);
            let _ = writeln!(s, "g(t0, x0)     {:.12}", r.g);
            let _ = writeln!(s, "f(t0, x0)     {:.12}", r.f);
            if let Some(table) = &r.ode_table {
                let _ = writeln!(s, "{:>10} {:>16} {:>16}", "t", "A", "B");
                for row in table {
                    let _ = writeln!(s, "{:>10.4} {:>16.12} {:>16.12}", row.t, row.a, row.b);
                }
            }
            if let Some(g) = &sol.ode {
                let mut csv = String::from("t,A,B\n");
                for i in 0..g.t.len() {
                    let _ = writeln!(csv, "{},{},{}", g.t[i], g.a[i], g.b[i]);
                }
                out.write("ode.csv", &csv)?;
            }
            out.write_json("strategy.json", &r)?;
            out.emit(&s, &r);
            Ok(true)
        }
        Command::Verify => {
            let (grid, saddle) = problem.verify_configs()?;
            let sol = solve(&set, &crit, method, &ncfg, &ode_cfg)?;
            let r = verify(&sol, &set, &grid, &saddle)?;
            out.write("residuals.csv", &residual_grid(&sol, &grid)?.to_csv())?;
            out.write_json("verify.json", &r)?;
            let mut s = String::new();
            let _ = writeln!(
                s,
                "max residual {:.1e} (tol {:.0e})   {}",
                r.max_residual,
                r.residual_tolerance,
                verdict(r.max_residual <= r.residual_tolerance)
            );
            for (eq, v) in &r.by_equation {
                let _ = writeln!(s, "  {eq:<12} {v:.1e}");
            }
            let _ = writeln!(
                s,
                "identity gap {:.1e} (tol {:.0e})   {}",
                r.max_identity_gap,
                r.identity_tolerance,
                verdict(r.max_identity_gap <= r.identity_tolerance)
            );
            let _ = writeln!(
                s,
                "saddle       {} samples, max F(a, th) {:.2e}, min F(ah, t) {:.2e}, eps {:.1e}   {}",
                r.saddle.samples,
                r.saddle.max_f_alpha,
                r.saddle.min_f_theta,
                r.saddle.epsilon,
                verdict(r.saddle.passed)
            );
            let _ = writeln!(
                s,
                "inequality   {} scenarios, max slack {:.2e}   {}",
                r.pwz.samples,
                r.pwz.max_slack,
                verdict(r.pwz.passed)
            );
            if let Some(o) = &r.ode {
                let _ = writeln!(
                    s,
                    "ode          fd residual {:.1e}, step-halving {:.1e}, min {:.4}   {}",
                    o.fd_residual_max,
                    o.richardson_estimate,
                    o.min_value,
                    verdict(o.passed)
                );
            }
            let _ = writeln!(s, "{}", verdict(r.passed));
            out.emit(&s, &r);
            Ok(r.passed)
        }
        Command::Simulate => {
            let cfg = problem.sim_config()?;
            let sol = solve(&set, &crit, method, &ncfg, &ode_cfg)?;
            let batch = simulate_paths(WealthDynamics::new(crit.kind), &sol, sol.theta_hat(), &crit, &cfg)?;
            let est = estimate_j(&batch.terminal, &crit)?;
            let r = SimulateReport::new(est, sol.value(crit.t0, crit.x0), sol.g(crit.t0, crit.x0), &batch);
            if batch.paths.is_some() {
                if let Some(dir) = &out.out {
                    fs::create_dir_all(dir)?;
                    write_rmvp(fs::File::create(dir.join("paths.rmvp"))?, &batch)?;
                }
            }
            let mut csv = String::from("path,x_T\n");
            for (i, x) in batch.terminal.iter().enumerate() {
                let _ = writeln!(csv, "{i},{x}");
            }
            out.write("terminal.csv", &csv)?;
            out.write_json("simulate.json", &r)?;
            let e = &r.estimate;
            let mut s = String::new();
            let _ = writeln!(s, "paths {}   steps {}   dt {:e}{}", e.n_paths, r.n_steps, r.dt, if r.dt_adjusted { " (adjusted)" } else { "" });
            let _ = writeln!(s, "J     {:.8} +- {:.2e}   V {:.8}   |J-V|/SE {:.2}", e.j_hat, e.standard_error_j, r.value, r.j_gap_se);
            let _ = writeln!(s, "mean  {:.8} +- {:.2e}   g {:.8}   |m-g|/SE {:.2}", e.mean_hat, e.standard_error_mean, r.g, r.mean_gap_se);
            let _ = writeln!(s, "var   {:.8}", e.var_hat);
            let _ = writeln!(s, "{}", verdict(r.passed));
            out.emit(&s, &r);
            Ok(r.passed)
        }
        Command::Perturb => {
            let cfg = problem.perturb_config()?;
            let sol = solve(&set, &crit, method, &ncfg, &ode_cfg)?;
            let eq = perturb_equilibrium(&sol, &set, &cfg)?;
            let wc = perturb_worst_case(&sol, &set, &cfg)?;
            out.write("perturb_equilibrium.csv", &eq.to_csv())?;
            out.write("perturb_worst_case.csv", &wc.to_csv())?;
            let r = PerturbReport {
                passed: eq.passed && wc.passed,
                equilibrium: eq,
                worst_case: wc,
            };
            out.write_json("perturb.json", &r)?;
            let mut s = String::new();
            for (name, rep, word) in [("strategy perturbation", &r.equilibrium, "min"), ("scenario perturbation", &r.worst_case, "max")] {
                let _ = writeln!(s, "{name} ({} paths, dt {:e}, base scale {})", rep.n_paths, rep.dt, rep.base_scale);
                for l in &rep.levels {
                    let _ = writeln!(
                        s,
                        "  h {:<8} {word} quotient {:>12.4e} +- {:.2e}   violations {}",
                        l.h, l.extreme_quotient, l.extreme_se, l.n_violations
                    );
                }
                for v in rep.violations() {
                    let _ = writeln!(
                        s,
                        "  violation: h {} w {} u {} ({}) quotient {:.4e} beyond {:.2e}",
                        v.h,
                        fmt_vec(&rep.w_set[v.w_index]),
                        v.u_index,
                        rep.u_labels[v.u_index],
                        v.quotient,
                        v.threshold
                    );
                }
                if let Some(c) = &rep.crn {
                    let _ = writeln!(s, "  CRN standard error {:.2e} vs independent {:.2e} (x{:.1})", c.se_crn, c.se_independent, c.ratio);
                }
                let _ = writeln!(s, "  {}", verdict(rep.passed));
            }
            let _ = writeln!(s, "{}", verdict(r.passed));
            out.emit(&s, &r);
            Ok(r.passed)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_FAIL),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
