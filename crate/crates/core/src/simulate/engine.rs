//! Euler paths of the wealth (or log-wealth) state.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rng::{poisson_inverse, PathRngs};
use crate::closed_form::ClosedFormSolution;
use crate::error::{dim_check, Error, Result};
use crate::model::{Criterion, CriterionKind, JumpSizeLaw, JumpSpec, Scenario, WealthDynamics};

/// A feedback control `α(t, x)`.
pub trait Strategy: Sync {
    fn dim(&self) -> usize;
    fn alpha_into(&self, t: f64, x: f64, out: &mut DVector<f64>);
    /// The control when it depends on neither time nor state.
    fn constant(&self) -> Option<DVector<f64>> {
        None
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstantStrategy(pub DVector<f64>);

impl Strategy for ConstantStrategy {
    fn dim(&self) -> usize {
        self.0.len()
    }
    fn alpha_into(&self, _t: f64, _x: f64, out: &mut DVector<f64>) {
        out.copy_from(&self.0);
    }
    fn constant(&self) -> Option<DVector<f64>> {
        Some(self.0.clone())
    }
}

/// `head` on `[t₀, until)`, then `tail`.
pub struct SplicedStrategy<'a> {
    pub head: DVector<f64>,
    pub until: f64,
    pub tail: &'a dyn Strategy,
}

impl Strategy for SplicedStrategy<'_> {
    fn dim(&self) -> usize {
        self.head.len()
    }
    fn alpha_into(&self, t: f64, x: f64, out: &mut DVector<f64>) {
        if t < self.until {
            out.copy_from(&self.head);
        } else {
            self.tail.alpha_into(t, x, out);
        }
    }
}

impl Strategy for ClosedFormSolution {
    fn dim(&self) -> usize {
        self.direction().len()
    }
    fn alpha_into(&self, t: f64, x: f64, out: &mut DVector<f64>) {
        out.copy_from(self.direction());
        *out *= self.alpha_scale(t, x);
    }
    fn constant(&self) -> Option<DVector<f64>> {
        self.constant_alpha()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    #[serde(default)]
    pub antithetic: bool,
    /// Keep every path, not only the terminal values.
    #[serde(default)]
    pub record_paths: bool,
}

impl SimConfig {
    pub fn new(n_paths: usize, dt: f64, seed: u64) -> Self {
        Self {
            n_paths,
            dt,
            seed,
            antithetic: false,
            record_paths: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 2 {
            return Err(Error::InvalidParameter(format!("n_paths must be at least 2, got {}", self.n_paths)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        Ok(())
    }
}

/// Number of steps and the effective step: `dt` is rounded down so that it
/// divides the horizon.
pub fn time_grid(span: f64, dt: f64) -> (usize, f64) {
    let ratio = span / dt;
    let n = if (ratio - ratio.round()).abs() <= 1e-9 * ratio.max(1.0) {
        ratio.round()
    } else {
        ratio.ceil()
    };
    let n = n.max(1.0) as usize;
    (n, span / n as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PathBatch {
    pub terminal: Vec<f64>,
    /// Row-major `n_paths × (n_steps + 1)` when recorded.
    pub paths: Option<Vec<f64>>,
    pub n_steps: usize,
    pub dt: f64,
    pub dt_requested: f64,
    pub seed: u64,
    pub antithetic: bool,
    pub t0: f64,
    pub horizon: f64,
    pub x0: f64,
}

impl PathBatch {
    pub fn n_paths(&self) -> usize {
        self.terminal.len()
    }

    pub fn dt_adjusted(&self) -> bool {
        self.dt != self.dt_requested
    }

    pub fn path(&self, i: usize) -> Option<&[f64]> {
        let w = self.n_steps + 1;
        self.paths.as_ref().map(|p| &p[i * w..(i + 1) * w])
    }
}

#[derive(Clone, Debug)]
pub(crate) enum ChannelSize {
    Fixed(DVector<f64>),
    Law { loading: DVector<f64>, law: JumpSizeLaw },
}

#[derive(Clone, Debug)]
pub(crate) struct Channel {
    pub rate: f64,
    pub size: ChannelSize,
}

pub(crate) fn channels(jump: Option<&JumpSpec>) -> Vec<Channel> {
    match jump {
        None => Vec::new(),
        Some(JumpSpec::CompoundPoisson(cp)) => (0..cp.n_types())
            .map(|l| Channel {
                rate: cp.intensities[l],
                size: ChannelSize::Law {
                    loading: cp.loadings.column(l).into_owned(),
                    law: cp.laws[l].clone(),
                },
            })
            .collect(),
        Some(JumpSpec::LevyDiscrete(ld)) => ld
            .atoms
            .iter()
            .map(|a| Channel {
                rate: a.weight,
                size: ChannelSize::Fixed(a.z.clone()),
            })
            .collect(),
    }
}

/// A factor `L` with `L Lᵀ = Σ`; falls back to the symmetric square root
/// when `Σ` is only semidefinite.
pub(crate) fn factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    match cov.clone().cholesky() {
        Some(c) => c.l(),
        None => {
            let e = cov.clone().symmetric_eigen();
            let d = DMatrix::from_diagonal(&e.eigenvalues.map(|v| v.max(0.0).sqrt()));
            &e.eigenvectors * d * e.eigenvectors.transpose()
        }
    }
}

/// Jump of the state caused by `αᵀz`; `None` when log wealth would not exist.
#[inline]
pub(crate) fn state_jump(log: bool, lin: f64) -> Option<f64> {
    if log {
        (1.0 + lin > 0.0).then(|| lin.ln_1p())
    } else {
        Some(lin)
    }
}

pub(crate) struct Segment {
    pub end_step: usize,
    pub drift: DVector<f64>,
    pub factor: DMatrix<f64>,
    pub channels: Vec<Channel>,
    /// Drift, `Lᵀα` and `α` for a constant control.
    pub fixed: Option<(f64, DVector<f64>, DVector<f64>)>,
}

pub(crate) struct PathContext<'a> {
    pub dynamics: WealthDynamics,
    pub strategy: &'a dyn Strategy,
    pub segments: Vec<Segment>,
    pub n: usize,
    pub n_steps: usize,
    pub dt: f64,
    pub t0: f64,
    pub x0: f64,
    pub seed: u64,
    pub antithetic: bool,
    pub positive: bool,
}

impl<'a> PathContext<'a> {
    /// `schedule` lists `(end_step, scenario)` in increasing order; the last
    /// entry must end at `n_steps`.
    pub fn new(
        dynamics: WealthDynamics,
        strategy: &'a dyn Strategy,
        schedule: &[(usize, &Scenario)],
        criterion: &Criterion,
        n_steps: usize,
        dt: f64,
        cfg: &SimConfig,
    ) -> Result<Self> {
        let n = strategy.dim();
        let constant = strategy.constant();
        let mut segments = Vec::with_capacity(schedule.len());
        for (end, sc) in schedule {
            dim_check("scenario", n, sc.dim())?;
            let factor = factor(&sc.covariance);
            let fixed = constant.as_ref().map(|a| {
                (dynamics.drift(a, sc), factor.transpose() * a, a.clone())
            });
            segments.push(Segment {
                end_step: *end,
                drift: sc.drift.clone(),
                factor,
                channels: channels(sc.jump.as_ref()),
                fixed,
            });
        }
        let k = segments[0].channels.len();
        if segments.iter().any(|s| s.channels.len() != k) {
            return Err(Error::InvalidParameter("spliced scenarios must share the jump structure".into()));
        }
        let positive = match dynamics.kind {
            CriterionKind::WealthScaledLambda => true,
            CriterionKind::TerminalWealth => k > 0,
            CriterionKind::LogReturn => false,
        };
        Ok(Self {
            dynamics,
            strategy,
            segments,
            n,
            n_steps,
            dt,
            t0: criterion.t0,
            x0: criterion.x0,
            seed: cfg.seed,
            antithetic: cfg.antithetic,
            positive,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.segments[0].channels.len()
    }

    /// Runs one path. After `checkpoints[c]` steps, writes the state and the
    /// running sum of the normals into `probe[c·(1+n)..]`.
    pub fn run(&self, path: usize, checkpoints: &[usize], probe: &mut [f64], mut record: Option<&mut [f64]>) -> Result<f64> {
        let n = self.n;
        let k = self.n_channels();
        let log = self.dynamics.is_log();
        let sqrt_dt = self.dt.sqrt();
        let mut rngs = PathRngs::new(self.seed, path, self.antithetic);
        let mut z = DVector::<f64>::zeros(n);
        let mut zsum = DVector::<f64>::zeros(n);
        let mut alpha = DVector::<f64>::zeros(n);
        let mut lz = DVector::<f64>::zeros(n);
        let track = !checkpoints.is_empty();
        let mut next_cp = 0;
        let mut seg_idx = 0;
        let mut x = self.x0;
        if let Some(r) = record.as_deref_mut() {
            r[0] = x;
        }
        for step in 0..self.n_steps {
            while step >= self.segments[seg_idx].end_step {
                seg_idx += 1;
            }
            let seg = &self.segments[seg_idx];
            let t = self.t0 + step as f64 * self.dt;
            for zi in z.iter_mut() {
                let g: f64 = StandardNormal.sample(&mut rngs.normals);
                *zi = rngs.sign * g;
            }
            if track {
                zsum += &z;
            }
            let mut dx = match &seg.fixed {
                Some((eta, v, a)) => {
                    if k > 0 {
                        alpha.copy_from(a);
                    }
                    eta * self.dt + sqrt_dt * v.dot(&z)
                }
                None => {
                    self.strategy.alpha_into(t, x, &mut alpha);
                    seg.factor.tr_mul_to(&alpha, &mut lz);
                    let lin = alpha.dot(&seg.drift);
                    let eta = if log { lin - 0.5 * lz.norm_squared() } else { lin };
                    eta * self.dt + sqrt_dt * lz.dot(&z)
                }
            };
            for (l, ch) in seg.channels.iter().enumerate() {
                let u: f64 = rngs.uniforms.random();
                let count = poisson_inverse(ch.rate * self.dt, u);
                if count == 0 {
                    continue;
                }
                rngs.seek_sizes(step, k, l);
                for _ in 0..count {
                    let lin = match &ch.size {
                        ChannelSize::Fixed(zv) => alpha.dot(zv),
                        ChannelSize::Law { loading, law } => law.sample(&mut rngs.sizes) * alpha.dot(loading),
                    };
                    dx += state_jump(log, lin).ok_or_else(|| {
                        Error::NonBankruptcyViolated(format!(
                            "path {path}, step {step}: relative jump {lin} leaves log wealth undefined"
                        ))
                    })?;
                }
            }
            x += dx;
            if self.positive && x <= 0.0 {
                return Err(Error::NonBankruptcyViolated(format!(
                    "path {path}, step {step} (t = {}): wealth {x} <= 0",
                    t + self.dt
                )));
            }
            if let Some(r) = record.as_deref_mut() {
                r[step + 1] = x;
            }
            while next_cp < checkpoints.len() && checkpoints[next_cp] == step + 1 {
                let o = next_cp * (1 + n);
                probe[o] = x;
                probe[o + 1..o + 1 + n].copy_from_slice(zsum.as_slice());
                next_cp += 1;
            }
        }
        Ok(x)
    }
}

fn run_batch(ctx: &PathContext, cfg: &SimConfig, criterion: &Criterion) -> Result<PathBatch> {
    let width = ctx.n_steps + 1;
    let (terminal, paths) = if cfg.record_paths {
        let mut buf = vec![0.0; cfg.n_paths * width];
        let terminal = buf
            .par_chunks_mut(width)
            .enumerate()
            .map(|(i, row)| ctx.run(i, &[], &mut [], Some(row)))
            .collect::<Result<Vec<f64>>>()?;
        (terminal, Some(buf))
    } else {
        let terminal = (0..cfg.n_paths)
            .into_par_iter()
            .map(|i| ctx.run(i, &[], &mut [], None))
            .collect::<Result<Vec<f64>>>()?;
        (terminal, None)
    };
    Ok(PathBatch {
        terminal,
        paths,
        n_steps: ctx.n_steps,
        dt: ctx.dt,
        dt_requested: cfg.dt,
        seed: cfg.seed,
        antithetic: cfg.antithetic,
        t0: criterion.t0,
        horizon: criterion.horizon,
        x0: criterion.x0,
    })
}

/// Simulates `cfg.n_paths` Euler paths on `[t₀, T]` from `x₀`.
pub fn simulate_paths(
    dynamics: WealthDynamics,
    strategy: &dyn Strategy,
    scenario: &Scenario,
    criterion: &Criterion,
    cfg: &SimConfig,
) -> Result<PathBatch> {
    cfg.validate()?;
    let (n_steps, dt) = time_grid(criterion.span(), cfg.dt);
    let ctx = PathContext::new(dynamics, strategy, &[(n_steps, scenario)], criterion, n_steps, dt, cfg)?;
    run_batch(&ctx, cfg, criterion)
}

/// As [`simulate_paths`] with `head` in force on `[t₀, t₀ + h)` and `tail`
/// afterwards. `h` is rounded to the step grid.
pub fn simulate_spliced(
    dynamics: WealthDynamics,
    strategy: &dyn Strategy,
    head: &Scenario,
    h: f64,
    tail: &Scenario,
    criterion: &Criterion,
    cfg: &SimConfig,
) -> Result<PathBatch> {
    cfg.validate()?;
    let (n_steps, dt) = time_grid(criterion.span(), cfg.dt);
    let n_head = ((h / dt).round() as usize).min(n_steps);
    let ctx = PathContext::new(
        dynamics,
        strategy,
        &[(n_head, head), (n_steps, tail)],
        criterion,
        n_steps,
        dt,
        cfg,
    )?;
    run_batch(&ctx, cfg, criterion)
}
