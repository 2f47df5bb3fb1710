//! Local-in-time perturbation tests of the equilibrium strategy and of the
//! worst-case scenario, with common random numbers.
//!
//! A perturbation replaces the control by a constant `w` and the scenario
//! by `u` on `[t₀, t₀ + h)`. For constant controls the state increment over
//! the tail does not depend on the head, so one base run per path suffices:
//! the head increment is rebuilt from the stored sum of the head normals and
//! regenerated head jumps.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::engine::{
    channels, factor, simulate_paths, simulate_spliced, state_jump, Channel, ChannelSize, ConstantStrategy,
    PathContext, SimConfig, SplicedStrategy, Strategy,
};
use super::estimate::{estimate_values, influence, paired_se, JEstimate};
use super::rng::{poisson_inverse, PathRngs};
use crate::closed_form::ClosedFormSolution;
use crate::error::{Error, Result};
use crate::model::{Criterion, Scenario, UncertaintySet, WealthDynamics};
use crate::sampling::{ball_point, halton};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbConfig {
    pub h_list: Vec<f64>,
    pub w_samples: usize,
    pub u_samples: usize,
    pub n_paths: usize,
    /// Euler step; `None` means `1e-3·(T − t₀)`.
    pub dt: Option<f64>,
    pub seed: u64,
    pub antithetic: bool,
    /// The base control is `base_scale·α̂`; values other than 1 falsify.
    pub base_scale: f64,
    /// `w` is drawn from the ball of radius `w_radius·‖α̂‖` around `α̂`.
    pub w_radius: f64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            h_list: vec![0.1, 0.05, 0.025],
            w_samples: 20,
            u_samples: 20,
            n_paths: 100_000,
            dt: None,
            seed: 0,
            antithetic: false,
            base_scale: 1.0,
            w_radius: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbKind {
    /// Strategy perturbations under their own worst case.
    Equilibrium,
    /// Scenario perturbations for a fixed strategy.
    WorstCase,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuotientRow {
    pub h: f64,
    pub w_index: usize,
    pub u_index: usize,
    pub j: f64,
    pub quotient: f64,
    pub se: f64,
    /// Quotients beyond this bound (below its negative for the equilibrium
    /// test, above it for the worst-case test) are violations.
    pub threshold: f64,
    pub violation: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelSummary {
    pub h: f64,
    pub head_steps: usize,
    pub j_base: f64,
    pub se_base: f64,
    /// Smallest `J` over all sampled perturbations.
    pub inf_j: f64,
    /// Most adverse quotient: the minimum for the equilibrium test, the
    /// maximum for the worst-case test.
    pub extreme_quotient: f64,
    pub extreme_se: f64,
    pub extreme_w: usize,
    pub extreme_u: usize,
    pub n_violations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrnComparison {
    pub h: f64,
    pub w_index: usize,
    pub se_crn: f64,
    pub se_independent: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationReport {
    pub kind: PerturbKind,
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub base_scale: f64,
    pub alpha_hat: Vec<f64>,
    pub w_set: Vec<Vec<f64>>,
    pub u_labels: Vec<String>,
    pub levels: Vec<LevelSummary>,
    pub rows: Vec<QuotientRow>,
    pub crn: Option<CrnComparison>,
    pub n_violations: usize,
    pub passed: bool,
}

impl PerturbationReport {
    pub fn violations(&self) -> impl Iterator<Item = &QuotientRow> {
        self.rows.iter().filter(|r| r.violation)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("h,w_index,u_index,j,quotient,se,threshold,violation\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.h, r.w_index, r.u_index, r.j, r.quotient, r.se, r.threshold, r.violation
            ));
        }
        s
    }
}

/// `θ̂`, every corner of the set, then `n` Halton points of its interior.
pub fn u_set(set: &UncertaintySet, theta_hat: &Scenario, n: usize) -> Vec<(String, Scenario)> {
    let mut out = vec![("theta_hat".to_string(), theta_hat.clone())];
    for (i, c) in set.corners().into_iter().enumerate() {
        out.push((format!("corner_{i}"), c));
    }
    let d = set.unit_dim();
    for i in 0..n {
        let c = set.coords_from_unit(&halton(i as u64 + 1, d));
        let sc = set
            .scenario_from_coords(&c)
            .expect("interior points of a validated set are valid scenarios");
        out.push((format!("interior_{i}"), sc));
    }
    out
}

/// `α̂`, the base control when it differs, then `n` ball samples.
pub fn w_set(alpha_hat: &DVector<f64>, base: &DVector<f64>, n: usize, radius_factor: f64, seed: u64) -> Vec<DVector<f64>> {
    let mut out = vec![alpha_hat.clone()];
    if base != alpha_hat {
        out.push(base.clone());
    }
    let norm = alpha_hat.norm();
    let radius = if norm > 0.0 { radius_factor * norm } else { 1.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    out.extend((0..n).map(|_| ball_point(&mut rng, alpha_hat, radius)));
    out
}

struct ScaledStrategy<'a> {
    inner: &'a dyn Strategy,
    scale: f64,
}

impl Strategy for ScaledStrategy<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn alpha_into(&self, t: f64, x: f64, out: &mut DVector<f64>) {
        self.inner.alpha_into(t, x, out);
        *out *= self.scale;
    }
    fn constant(&self) -> Option<DVector<f64>> {
        self.inner.constant().map(|a| a * self.scale)
    }
}

/// State, stored per path, of one base run with checkpoints at each head length.
struct BaseRun {
    terminal: Vec<f64>,
    /// `n_paths × n_levels × (1 + n)`: state and normal sums at each checkpoint.
    probe: Vec<f64>,
    n_levels: usize,
    n: usize,
}

struct Head {
    eta: f64,
    v: DVector<f64>,
    w: DVector<f64>,
    channels: Vec<Channel>,
}

struct Splicer<'a> {
    dynamics: WealthDynamics,
    criterion: Criterion,
    base: BaseRun,
    head_steps: Vec<usize>,
    dt: f64,
    cfg: SimConfig,
    theta_hat: &'a Scenario,
}

impl<'a> Splicer<'a> {
    #[allow(clippy::too_many_arguments)]
    fn new(
        dynamics: WealthDynamics,
        criterion: Criterion,
        alpha_base: &DVector<f64>,
        theta_hat: &'a Scenario,
        head_steps: Vec<usize>,
        n_steps: usize,
        dt: f64,
        cfg: SimConfig,
    ) -> Result<Self> {
        let strategy = ConstantStrategy(alpha_base.clone());
        let ctx = PathContext::new(dynamics, &strategy, &[(n_steps, theta_hat)], &criterion, n_steps, dt, &cfg)?;
        let n = alpha_base.len();
        let mut cps = head_steps.clone();
        cps.sort_unstable();
        cps.dedup();
        let width = cps.len() * (1 + n);
        let mut sorted_probe = vec![0.0; cfg.n_paths * width];
        let terminal = sorted_probe
            .par_chunks_mut(width)
            .enumerate()
            .map(|(i, row)| ctx.run(i, &cps, row, None))
            .collect::<Result<Vec<f64>>>()?;
        // reorder checkpoints to follow `head_steps`
        let levels = head_steps.len();
        let mut probe = vec![0.0; cfg.n_paths * levels * (1 + n)];
        for p in 0..cfg.n_paths {
            for (lv, hs) in head_steps.iter().enumerate() {
                let c = cps.binary_search(hs).unwrap();
                let src = p * width + c * (1 + n);
                let dst = (p * levels + lv) * (1 + n);
                probe[dst..dst + 1 + n].copy_from_slice(&sorted_probe[src..src + 1 + n]);
            }
        }
        Ok(Self {
            dynamics,
            criterion,
            base: BaseRun {
                terminal,
                probe,
                n_levels: levels,
                n,
            },
            head_steps,
            dt,
            cfg,
            theta_hat,
        })
    }

    fn head(&self, w: &DVector<f64>, u: &Scenario) -> Head {
        let f = factor(&u.covariance);
        Head {
            eta: self.dynamics.drift(w, u),
            v: f.transpose() * w,
            w: w.clone(),
            channels: channels(u.jump.as_ref()),
        }
    }

    fn head_jumps(&self, path: usize, n_head: usize, head: &Head) -> Result<f64> {
        let k = head.channels.len();
        if k == 0 || n_head == 0 {
            return Ok(0.0);
        }
        let log = self.dynamics.is_log();
        let mut rngs = PathRngs::new(self.cfg.seed, path, self.cfg.antithetic);
        let mut total = 0.0;
        for step in 0..n_head {
            for (l, ch) in head.channels.iter().enumerate() {
                let u: f64 = rngs.uniforms.random();
                let count = poisson_inverse(ch.rate * self.dt, u);
                if count == 0 {
                    continue;
                }
                rngs.seek_sizes(step, k, l);
                for _ in 0..count {
                    let lin = match &ch.size {
                        ChannelSize::Fixed(z) => head.w.dot(z),
                        ChannelSize::Law { loading, law } => law.sample(&mut rngs.sizes) * head.w.dot(loading),
                    };
                    total += state_jump(log, lin).ok_or_else(|| {
                        Error::NonBankruptcyViolated(format!("path {path}, head step {step}: relative jump {lin}"))
                    })?;
                }
            }
        }
        Ok(total)
    }

    /// Terminal states with `head` in force for the first `head_steps[level]` steps.
    fn values(&self, level: usize, head: &Head, out: &mut Vec<f64>) -> Result<()> {
        let n = self.base.n;
        let n_head = self.head_steps[level];
        let hdt = n_head as f64 * self.dt;
        let sqrt_dt = self.dt.sqrt();
        let x0 = self.criterion.x0;
        out.clear();
        for p in 0..self.base.terminal.len() {
            let o = (p * self.base.n_levels + level) * (1 + n);
            let x_head = self.base.probe[o];
            let zsum = &self.base.probe[o + 1..o + 1 + n];
            let dif: f64 = head.v.iter().zip(zsum).map(|(a, b)| a * b).sum();
            let inc = head.eta * hdt + sqrt_dt * dif + self.head_jumps(p, n_head, head)?;
            out.push(self.base.terminal[p] - (x_head - x0) + inc);
        }
        Ok(())
    }

    fn estimate(&self, level: usize, head: &Head) -> Result<(JEstimate, Vec<f64>)> {
        let mut v = Vec::with_capacity(self.base.terminal.len());
        self.values(level, head, &mut v)?;
        let e = estimate_values(&v, self.criterion.lambda_at(self.criterion.x0))?;
        let mut inf = Vec::new();
        influence(&v, &e, &mut inf);
        Ok((e, inf))
    }
}

fn head_steps(h_list: &[f64], dt: f64, n_steps: usize) -> Result<Vec<usize>> {
    h_list
        .iter()
        .map(|h| {
            let s = (h / dt).round() as usize;
            if s == 0 || s >= n_steps {
                Err(Error::InvalidParameter(format!(
                    "perturbation length {h} must cover at least one step of {dt} and stay below the horizon"
                )))
            } else {
                Ok(s)
            }
        })
        .collect()
}

fn floor_tol(j: f64) -> f64 {
    1e-12 * (1.0 + j.abs())
}

fn sim_config(cfg: &PerturbConfig, span: f64) -> Result<(SimConfig, usize, f64)> {
    if cfg.h_list.is_empty() {
        return Err(Error::InvalidParameter("h_list is empty".into()));
    }
    let sc = SimConfig {
        n_paths: cfg.n_paths,
        dt: cfg.dt.unwrap_or(1e-3 * span),
        seed: cfg.seed,
        antithetic: cfg.antithetic,
        record_paths: false,
    };
    sc.validate()?;
    let (n_steps, dt) = super::engine::time_grid(span, sc.dt);
    Ok((sc, n_steps, dt))
}

/// Equilibrium test: for each `h` and sampled `w`, the quotient
/// `(J(α, θ̂) − min_u J(α_{h,w}, θ_{h,u}))/h` with `α = base_scale·α̂`. A
/// quotient below `−3·SE/h` is a violation.
pub fn perturb_equilibrium(
    sol: &ClosedFormSolution,
    set: &UncertaintySet,
    cfg: &PerturbConfig,
) -> Result<PerturbationReport> {
    let crit = sol.criterion;
    let (sim, n_steps, dt) = sim_config(cfg, crit.span())?;
    let hs = head_steps(&cfg.h_list, dt, n_steps)?;
    let theta_hat = sol.theta_hat();
    let us = u_set(set, theta_hat, cfg.u_samples);
    let alpha_hat = sol.alpha(crit.t0, crit.x0);
    let base_alpha = &alpha_hat * cfg.base_scale;
    let ws = w_set(&alpha_hat, &base_alpha, cfg.w_samples, cfg.w_radius, cfg.seed);

    let mut rows = Vec::new();
    let mut levels = Vec::new();
    let mut crn = None;
    match sol.constant_alpha() {
        Some(_) => {
            let sp = Splicer::new(
                WealthDynamics::new(sol.kind()),
                crit,
                &base_alpha,
                theta_hat,
                hs.clone(),
                n_steps,
                dt,
                sim.clone(),
            )?;
            for (lv, &steps) in hs.iter().enumerate() {
                let h = steps as f64 * dt;
                let (jb, ifb) = sp.estimate(lv, &sp.head(&base_alpha, sp.theta_hat))?;
                let combos: Vec<(usize, usize)> =
                    (0..ws.len()).flat_map(|w| (0..us.len()).map(move |u| (w, u))).collect();
                let js = combos
                    .par_iter()
                    .map(|&(w, u)| {
                        let mut v = Vec::with_capacity(sim.n_paths);
                        sp.values(lv, &sp.head(&ws[w], &us[u].1), &mut v)?;
                        Ok(estimate_values(&v, crit.lambda_at(crit.x0))?.j_hat)
                    })
                    .collect::<Result<Vec<f64>>>()?;
                let level_rows = (0..ws.len())
                    .into_par_iter()
                    .map(|w| {
                        let slice = &js[w * us.len()..(w + 1) * us.len()];
                        let u_min = argmin(slice);
                        let (e, ifw) = sp.estimate(lv, &sp.head(&ws[w], &us[u_min].1))?;
                        Ok(equilibrium_row(h, w, u_min, &jb, &e, paired_se(&ifb, &ifw)))
                    })
                    .collect::<Result<Vec<QuotientRow>>>()?;
                if lv + 1 == hs.len() {
                    // first ball sample, or α̂ when none were drawn
                    let wi = if cfg.w_samples > 0 { ws.len() - cfg.w_samples } else { 0 };
                    let (e, ifw) = sp.estimate(lv, &sp.head(&ws[wi], theta_hat))?;
                    let se_crn = paired_se(&ifb, &ifw);
                    let se_ind = (jb.standard_error_j.powi(2) + e.standard_error_j.powi(2)).sqrt();
                    crn = Some(CrnComparison {
                        h,
                        w_index: wi,
                        se_crn,
                        se_independent: se_ind,
                        ratio: se_ind / se_crn,
                    });
                }
                levels.push(summarize(h, steps, &jb, &level_rows, true));
                rows.extend(level_rows);
            }
        }
        None => {
            let dynamics = WealthDynamics::new(sol.kind());
            let scaled = ScaledStrategy {
                inner: sol,
                scale: cfg.base_scale,
            };
            let base = simulate_paths(dynamics, &scaled, theta_hat, &crit, &sim)?;
            let (jb, ifb) = est_with_if(&base.terminal, &crit)?;
            for &steps in &hs {
                let h = steps as f64 * dt;
                let mut level_rows = Vec::new();
                for (wi, w) in ws.iter().enumerate() {
                    let strat = SplicedStrategy {
                        head: w.clone(),
                        until: crit.t0 + h - 0.5 * dt,
                        tail: &scaled,
                    };
                    let mut best: Option<(usize, JEstimate, Vec<f64>)> = None;
                    for (ui, (_, u)) in us.iter().enumerate() {
                        let b = simulate_spliced(dynamics, &strat, u, h, theta_hat, &crit, &sim)?;
                        let (e, inf) = est_with_if(&b.terminal, &crit)?;
                        if best.as_ref().is_none_or(|(_, be, _)| e.j_hat < be.j_hat) {
                            best = Some((ui, e, inf));
                        }
                    }
                    let (ui, e, inf) = best.expect("u set contains theta_hat");
                    level_rows.push(equilibrium_row(h, wi, ui, &jb, &e, paired_se(&ifb, &inf)));
                }
                levels.push(summarize(h, steps, &jb, &level_rows, true));
                rows.extend(level_rows);
            }
        }
    }
    Ok(finish(PerturbKind::Equilibrium, cfg, dt, alpha_hat, ws, us, levels, rows, crn))
}

/// Worst-case test: for each `h` and sampled `u`, the quotient
/// `(J(α̂, θ̂) − J(α̂, θ_{h,u}))/h`. A quotient above `3·SE/h` is a violation.
pub fn perturb_worst_case(
    sol: &ClosedFormSolution,
    set: &UncertaintySet,
    cfg: &PerturbConfig,
) -> Result<PerturbationReport> {
    let crit = sol.criterion;
    let (sim, n_steps, dt) = sim_config(cfg, crit.span())?;
    let hs = head_steps(&cfg.h_list, dt, n_steps)?;
    let theta_hat = sol.theta_hat();
    let us = u_set(set, theta_hat, cfg.u_samples);
    let alpha_hat = sol.alpha(crit.t0, crit.x0);
    let mut rows = Vec::new();
    let mut levels = Vec::new();
    match sol.constant_alpha() {
        Some(_) => {
            let sp = Splicer::new(
                WealthDynamics::new(sol.kind()),
                crit,
                &alpha_hat,
                theta_hat,
                hs.clone(),
                n_steps,
                dt,
                sim.clone(),
            )?;
            for (lv, &steps) in hs.iter().enumerate() {
                let h = steps as f64 * dt;
                let (jb, ifb) = sp.estimate(lv, &sp.head(&alpha_hat, theta_hat))?;
                let level_rows = (0..us.len())
                    .into_par_iter()
                    .map(|u| {
                        let (e, ifu) = sp.estimate(lv, &sp.head(&alpha_hat, &us[u].1))?;
                        Ok(worst_case_row(h, u, &jb, &e, paired_se(&ifb, &ifu)))
                    })
                    .collect::<Result<Vec<QuotientRow>>>()?;
                levels.push(summarize(h, steps, &jb, &level_rows, false));
                rows.extend(level_rows);
            }
        }
        None => {
            let dynamics = WealthDynamics::new(sol.kind());
            let base = simulate_paths(dynamics, sol, theta_hat, &crit, &sim)?;
            let (jb, ifb) = est_with_if(&base.terminal, &crit)?;
            for &steps in &hs {
                let h = steps as f64 * dt;
                let mut level_rows = Vec::new();
                for (ui, (_, u)) in us.iter().enumerate() {
                    let b = simulate_spliced(dynamics, sol, u, h, theta_hat, &crit, &sim)?;
                    let (e, inf) = est_with_if(&b.terminal, &crit)?;
                    level_rows.push(worst_case_row(h, ui, &jb, &e, paired_se(&ifb, &inf)));
                }
                levels.push(summarize(h, steps, &jb, &level_rows, false));
                rows.extend(level_rows);
            }
        }
    }
    let ws = vec![alpha_hat.clone()];
    Ok(finish(PerturbKind::WorstCase, cfg, dt, alpha_hat, ws, us, levels, rows, None))
}

fn est_with_if(values: &[f64], crit: &Criterion) -> Result<(JEstimate, Vec<f64>)> {
    let e = estimate_values(values, crit.lambda_at(crit.x0))?;
    let mut inf = Vec::new();
    influence(values, &e, &mut inf);
    Ok((e, inf))
}

fn argmin(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x < xs[best] {
            best = i;
        }
    }
    best
}

fn equilibrium_row(h: f64, w: usize, u: usize, base: &JEstimate, e: &JEstimate, se: f64) -> QuotientRow {
    let quotient = (base.j_hat - e.j_hat) / h;
    let threshold = (3.0 * se + floor_tol(base.j_hat)) / h;
    QuotientRow {
        h,
        w_index: w,
        u_index: u,
        j: e.j_hat,
        quotient,
        se: se / h,
        threshold,
        violation: quotient < -threshold,
    }
}

fn worst_case_row(h: f64, u: usize, base: &JEstimate, e: &JEstimate, se: f64) -> QuotientRow {
    let quotient = (base.j_hat - e.j_hat) / h;
    let threshold = (3.0 * se + floor_tol(base.j_hat)) / h;
    QuotientRow {
        h,
        w_index: 0,
        u_index: u,
        j: e.j_hat,
        quotient,
        se: se / h,
        threshold,
        violation: quotient > threshold,
    }
}

fn summarize(h: f64, steps: usize, base: &JEstimate, rows: &[QuotientRow], minimize: bool) -> LevelSummary {
    let pick = rows
        .iter()
        .reduce(|a, b| {
            let better = if minimize { b.quotient < a.quotient } else { b.quotient > a.quotient };
            if better {
                b
            } else {
                a
            }
        })
        .expect("at least one perturbation");
    LevelSummary {
        h,
        head_steps: steps,
        j_base: base.j_hat,
        se_base: base.standard_error_j,
        inf_j: rows.iter().map(|r| r.j).fold(f64::INFINITY, f64::min),
        extreme_quotient: pick.quotient,
        extreme_se: pick.se,
        extreme_w: pick.w_index,
        extreme_u: pick.u_index,
        n_violations: rows.iter().filter(|r| r.violation).count(),
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    kind: PerturbKind,
    cfg: &PerturbConfig,
    dt: f64,
    alpha_hat: DVector<f64>,
    ws: Vec<DVector<f64>>,
    us: Vec<(String, Scenario)>,
    levels: Vec<LevelSummary>,
    rows: Vec<QuotientRow>,
    crn: Option<CrnComparison>,
) -> PerturbationReport {
    let n_violations = rows.iter().filter(|r| r.violation).count();
    PerturbationReport {
        kind,
        n_paths: cfg.n_paths,
        dt,
        seed: cfg.seed,
        base_scale: if kind == PerturbKind::Equilibrium { cfg.base_scale } else { 1.0 },
        alpha_hat: alpha_hat.iter().copied().collect(),
        w_set: ws.iter().map(|w| w.iter().copied().collect()).collect(),
        u_labels: us.into_iter().map(|(l, _)| l).collect(),
        levels,
        rows,
        crn,
        n_violations,
        passed: n_violations == 0,
    }
}
