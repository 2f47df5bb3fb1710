//! Product uncertainty sets: a drift box, a marginal-volatility box, a
//! convex set of correlation matrices and optional jump-rate bounds.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{dim_check, Error, Result};
use crate::model::jump::JumpSpec;
use crate::model::linalg::{correlation_2x2, ensure_pd};
use crate::model::scenario::Scenario;

const MEMBERSHIP_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub enum CorrelationSet {
    /// Two-asset `ρ ∈ [lo, hi]`.
    Interval { lo: f64, hi: f64 },
    /// Convex hull of positive-definite correlation matrices.
    Hull(Vec<DMatrix<f64>>),
}

/// Ambiguity in jump rates: intensities for compound Poisson types or
/// weights of discrete Lévy atoms. Sizes and loadings come from `base`.
#[derive(Clone, Debug, PartialEq)]
pub struct JumpBounds {
    pub base: JumpSpec,
    pub rate_lo: DVector<f64>,
    pub rate_hi: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintySet {
    pub drift_lo: DVector<f64>,
    pub drift_hi: DVector<f64>,
    pub vol_lo: DVector<f64>,
    pub vol_hi: DVector<f64>,
    pub correlation: CorrelationSet,
    pub jump_bounds: Option<JumpBounds>,
    // per-rate first and second moment contributions, row-major
    jump_m1: Vec<Vec<f64>>,
    jump_m2: Vec<Vec<f64>>,
}

/// Euclidean projection onto the probability simplex.
fn simplex_projection(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut css = 0.0;
    let mut theta = 0.0;
    for (i, ui) in u.iter().enumerate() {
        css += ui;
        let t = (css - 1.0) / (i as f64 + 1.0);
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

impl UncertaintySet {
    pub fn new(
        drift_lo: DVector<f64>,
        drift_hi: DVector<f64>,
        vol_lo: DVector<f64>,
        vol_hi: DVector<f64>,
        correlation: CorrelationSet,
        jump_bounds: Option<JumpBounds>,
    ) -> Result<Self> {
        let n = drift_lo.len();
        if n == 0 {
            return Err(Error::InvalidBounds("uncertainty set needs at least one asset".into()));
        }
        dim_check("drift_hi", n, drift_hi.len())?;
        dim_check("vol_lo", n, vol_lo.len())?;
        dim_check("vol_hi", n, vol_hi.len())?;
        for i in 0..n {
            if !(drift_lo[i].is_finite() && drift_hi[i].is_finite() && drift_lo[i] <= drift_hi[i]) {
                return Err(Error::InvalidBounds(format!(
                    "drift bounds for asset {i}: need finite lo <= hi, got [{}, {}]",
                    drift_lo[i], drift_hi[i]
                )));
            }
            if !(vol_lo[i] > 0.0 && vol_hi[i].is_finite() && vol_lo[i] <= vol_hi[i]) {
                return Err(Error::InvalidBounds(format!(
                    "volatility bounds for asset {i}: need 0 < lo <= hi, got [{}, {}]",
                    vol_lo[i], vol_hi[i]
                )));
            }
        }
        match &correlation {
            CorrelationSet::Interval { lo, hi } => {
                if n != 2 {
                    return Err(Error::InvalidBounds(format!(
                        "a correlation interval needs exactly two assets, got {n}"
                    )));
                }
                if !(-1.0 < *lo && lo <= hi && *hi < 1.0) {
                    return Err(Error::InvalidBounds(format!(
                        "correlation interval must satisfy -1 < lo <= hi < 1, got [{lo}, {hi}]"
                    )));
                }
            }
            CorrelationSet::Hull(ms) => {
                if ms.is_empty() {
                    return Err(Error::InvalidBounds("correlation hull has no vertices".into()));
                }
                for (k, m) in ms.iter().enumerate() {
                    dim_check("correlation hull vertex", n, m.nrows())?;
                    for i in 0..n {
                        if (m[(i, i)] - 1.0).abs() > 1e-12 {
                            return Err(Error::InvalidBounds(format!(
                                "correlation hull vertex {k} has diagonal {} at {i}",
                                m[(i, i)]
                            )));
                        }
                    }
                    ensure_pd(m, &format!("correlation hull vertex {k}"))?;
                }
            }
        }
        let (mut jump_m1, mut jump_m2) = (Vec::new(), Vec::new());
        if let Some(jb) = &jump_bounds {
            jb.base.validate(n)?;
            let r = jb.base.rates().len();
            dim_check("jump rate_lo", r, jb.rate_lo.len())?;
            dim_check("jump rate_hi", r, jb.rate_hi.len())?;
            for l in 0..r {
                if !(jb.rate_lo[l] > 0.0 && jb.rate_lo[l] <= jb.rate_hi[l] && jb.rate_hi[l].is_finite()) {
                    return Err(Error::InvalidBounds(format!(
                        "jump rate bounds {l}: need 0 < lo <= hi, got [{}, {}]",
                        jb.rate_lo[l], jb.rate_hi[l]
                    )));
                }
                let mut unit = DVector::zeros(r);
                unit[l] = 1.0;
                let (m1, m2) = jb.base.with_rates(&unit)?.moments();
                jump_m1.push(m1.iter().copied().collect());
                jump_m2.push((0..n * n).map(|k| m2[(k / n, k % n)]).collect());
            }
        }
        Ok(Self {
            drift_lo,
            drift_hi,
            vol_lo,
            vol_hi,
            correlation,
            jump_bounds,
            jump_m1,
            jump_m2,
        })
    }

    /// Two-asset set from scalar bounds.
    #[allow(clippy::too_many_arguments)]
    pub fn two_asset(
        b1: (f64, f64),
        b2: (f64, f64),
        s1: (f64, f64),
        s2: (f64, f64),
        rho: (f64, f64),
    ) -> Result<Self> {
        Self::new(
            DVector::from_vec(vec![b1.0, b2.0]),
            DVector::from_vec(vec![b1.1, b2.1]),
            DVector::from_vec(vec![s1.0, s2.0]),
            DVector::from_vec(vec![s1.1, s2.1]),
            CorrelationSet::Interval { lo: rho.0, hi: rho.1 },
            None,
        )
    }

    /// The singleton `{θ}` for a jump-free scenario.
    pub fn point(scenario: &Scenario) -> Result<Self> {
        let v = scenario.vols();
        let corr = if scenario.dim() == 2 {
            let r = scenario.correlation()[(0, 1)];
            CorrelationSet::Interval { lo: r, hi: r }
        } else {
            CorrelationSet::Hull(vec![scenario.correlation()])
        };
        let jb = scenario.jump.as_ref().map(|j| JumpBounds {
            base: j.clone(),
            rate_lo: j.rates(),
            rate_hi: j.rates(),
        });
        Self::new(scenario.drift.clone(), scenario.drift.clone(), v.clone(), v, corr, jb)
    }

    pub fn with_jump_bounds(self, jb: Option<JumpBounds>) -> Result<Self> {
        Self::new(self.drift_lo, self.drift_hi, self.vol_lo, self.vol_hi, self.correlation, jb)
    }

    pub fn n(&self) -> usize {
        self.drift_lo.len()
    }

    fn n_corr_coords(&self) -> usize {
        match &self.correlation {
            CorrelationSet::Interval { .. } => 1,
            CorrelationSet::Hull(ms) => ms.len() - 1,
        }
    }

    fn n_rates(&self) -> usize {
        self.jump_m1.len()
    }

    /// Search coordinates: drifts, vols, correlation parameters (ρ, or hull
    /// weights of vertices `1..m`), jump rates.
    pub fn coordinate_bounds(&self) -> Vec<(f64, f64)> {
        let n = self.n();
        let mut out = Vec::with_capacity(2 * n + self.n_corr_coords() + self.n_rates());
        out.extend((0..n).map(|i| (self.drift_lo[i], self.drift_hi[i])));
        out.extend((0..n).map(|i| (self.vol_lo[i], self.vol_hi[i])));
        match &self.correlation {
            CorrelationSet::Interval { lo, hi } => out.push((*lo, *hi)),
            CorrelationSet::Hull(ms) => out.extend((1..ms.len()).map(|_| (0.0, 1.0))),
        }
        if let Some(jb) = &self.jump_bounds {
            out.extend((0..self.n_rates()).map(|l| (jb.rate_lo[l], jb.rate_hi[l])));
        }
        out
    }

    /// Range of the correlation coordinates within the coordinate vector.
    pub fn corr_coord_range(&self) -> std::ops::Range<usize> {
        let s = 2 * self.n();
        s..s + self.n_corr_coords()
    }

    /// Coordinates are feasible when hull weights sum to at most one.
    pub fn coords_feasible(&self, c: &[f64]) -> bool {
        match &self.correlation {
            CorrelationSet::Interval { .. } => true,
            CorrelationSet::Hull(_) => c[self.corr_coord_range()].iter().sum::<f64>() <= 1.0 + 1e-12,
        }
    }

    /// Jump-adjusted `(b_F, Σ_F)` written into row-major buffers without
    /// allocating. Returns `false` for infeasible hull weights.
    pub(crate) fn fill_adjusted(&self, c: &[f64], b: &mut [f64], sig: &mut [f64]) -> bool {
        let n = self.n();
        if !self.coords_feasible(c) {
            return false;
        }
        let vols = &c[n..2 * n];
        b.copy_from_slice(&c[..n]);
        match &self.correlation {
            CorrelationSet::Interval { .. } => {
                let rho = c[2 * n];
                sig[0] = vols[0] * vols[0];
                sig[3] = vols[1] * vols[1];
                sig[1] = vols[0] * vols[1] * rho;
                sig[2] = sig[1];
            }
            CorrelationSet::Hull(ms) => {
                let w = &c[self.corr_coord_range()];
                let w0 = 1.0 - w.iter().sum::<f64>();
                for i in 0..n {
                    for j in 0..n {
                        let mut r = w0 * ms[0][(i, j)];
                        for (k, wk) in w.iter().enumerate() {
                            r += wk * ms[k + 1][(i, j)];
                        }
                        sig[i * n + j] = vols[i] * vols[j] * r;
                    }
                }
            }
        }
        let off = 2 * n + self.n_corr_coords();
        for l in 0..self.n_rates() {
            let rate = c[off + l];
            for (bi, m) in b.iter_mut().zip(&self.jump_m1[l]) {
                *bi += rate * m;
            }
            for (s, m) in sig.iter_mut().zip(&self.jump_m2[l]) {
                *s += rate * m;
            }
        }
        true
    }

    pub fn scenario_from_coords(&self, c: &[f64]) -> Result<Scenario> {
        let n = self.n();
        let bounds = self.coordinate_bounds();
        dim_check("scenario coordinates", bounds.len(), c.len())?;
        if !self.coords_feasible(c) {
            return Err(Error::InvalidParameter("hull weights sum above one".into()));
        }
        let drift = DVector::from_column_slice(&c[..n]);
        let vols = DVector::from_column_slice(&c[n..2 * n]);
        let corr = match &self.correlation {
            CorrelationSet::Interval { .. } => correlation_2x2(c[2 * n]),
            CorrelationSet::Hull(ms) => {
                let w = &c[self.corr_coord_range()];
                let w0 = 1.0 - w.iter().sum::<f64>();
                let mut m = &ms[0] * w0;
                for (k, wk) in w.iter().enumerate() {
                    m += &ms[k + 1] * *wk;
                }
                // exact unit diagonal despite rounding in the weights
                for i in 0..n {
                    m[(i, i)] = 1.0;
                }
                m
            }
        };
        let jump = match &self.jump_bounds {
            None => None,
            Some(jb) => {
                let off = 2 * n + self.n_corr_coords();
                Some(jb.base.with_rates(&DVector::from_column_slice(&c[off..]))?)
            }
        };
        Scenario::from_vols(drift, &vols, &corr, jump)
    }

    /// Dimension of the unit cube used by [`Self::coords_from_unit`].
    pub fn unit_dim(&self) -> usize {
        let corr = match &self.correlation {
            CorrelationSet::Interval { .. } => 1,
            CorrelationSet::Hull(ms) if ms.len() > 1 => ms.len(),
            CorrelationSet::Hull(_) => 0,
        };
        2 * self.n() + corr + self.n_rates()
    }

    /// Maps a point of the unit cube onto the set: boxes linearly, hull
    /// weights uniformly on the simplex through exponential spacings.
    pub fn coords_from_unit(&self, u: &[f64]) -> Vec<f64> {
        let n = self.n();
        let lerp = |(lo, hi): (f64, f64), t: f64| lo + (hi - lo) * t;
        let bounds = self.coordinate_bounds();
        let mut c = Vec::with_capacity(bounds.len());
        for (k, b) in bounds.iter().take(2 * n).enumerate() {
            c.push(lerp(*b, u[k]));
        }
        let mut k = 2 * n;
        match &self.correlation {
            CorrelationSet::Interval { lo, hi } => {
                c.push(lerp((*lo, *hi), u[k]));
                k += 1;
            }
            CorrelationSet::Hull(ms) if ms.len() > 1 => {
                let e: Vec<f64> = u[k..k + ms.len()].iter().map(|v| -(1.0 - v).max(1e-300).ln()).collect();
                let s: f64 = e.iter().sum();
                c.extend(e[1..].iter().map(|v| if s > 0.0 { v / s } else { 0.0 }));
                k += ms.len();
            }
            CorrelationSet::Hull(_) => {}
        }
        let off = 2 * n + self.n_corr_coords();
        for l in 0..self.n_rates() {
            c.push(lerp(bounds[off + l], u[k + l]));
        }
        c
    }

    pub fn sample_coords<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: Vec<f64> = (0..self.unit_dim()).map(|_| rng.random::<f64>()).collect();
        self.coords_from_unit(&u)
    }

    /// Uniform draw over the boxes, uniform hull weights. Every draw is
    /// positive definite by construction.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Scenario {
        let c = self.sample_coords(rng);
        self.scenario_from_coords(&c)
            .expect("convex combinations of positive-definite correlations stay positive definite")
    }

    /// Corner coordinates: box corners times correlation extreme points.
    /// Degenerate coordinates (`lo == hi`) are not duplicated.
    pub fn corner_coords(&self) -> Vec<Vec<f64>> {
        let bounds = self.coordinate_bounds();
        let corr = self.corr_coord_range();
        let mut out = vec![Vec::with_capacity(bounds.len())];
        let mut k = 0;
        while k < bounds.len() {
            if k == corr.start && matches!(self.correlation, CorrelationSet::Hull(_)) {
                let m = corr.len() + 1;
                let mut next = Vec::with_capacity(out.len() * m);
                for c in &out {
                    for v in 0..m {
                        let mut c2 = c.clone();
                        c2.extend((1..m).map(|j| if j == v { 1.0 } else { 0.0 }));
                        next.push(c2);
                    }
                }
                out = next;
                k = corr.end;
                continue;
            }
            let (lo, hi) = bounds[k];
            let vals: &[f64] = if lo == hi { &[lo] } else { &[lo, hi] };
            let mut next = Vec::with_capacity(out.len() * vals.len());
            for c in &out {
                for v in vals {
                    let mut c2 = c.clone();
                    c2.push(*v);
                    next.push(c2);
                }
            }
            out = next;
            k += 1;
        }
        out
    }

    pub fn corners(&self) -> Vec<Scenario> {
        self.corner_coords()
            .iter()
            .map(|c| self.scenario_from_coords(c).expect("corner of a validated set"))
            .collect()
    }

    pub fn is_singleton(&self) -> bool {
        let bounds = self.coordinate_bounds();
        let corr_single = match &self.correlation {
            CorrelationSet::Interval { .. } => true,
            CorrelationSet::Hull(ms) => ms.len() == 1,
        };
        corr_single && bounds.iter().all(|(lo, hi)| lo == hi)
    }

    /// Box containment plus correlation containment, with a small tolerance.
    pub fn contains(&self, s: &Scenario) -> bool {
        let n = self.n();
        if s.dim() != n {
            return false;
        }
        let tol = MEMBERSHIP_TOL;
        let within = |v: f64, lo: f64, hi: f64| v >= lo - tol * (1.0 + lo.abs()) && v <= hi + tol * (1.0 + hi.abs());
        let vols = s.vols();
        for i in 0..n {
            if !within(s.drift[i], self.drift_lo[i], self.drift_hi[i]) || !within(vols[i], self.vol_lo[i], self.vol_hi[i]) {
                return false;
            }
        }
        let corr = s.correlation();
        let corr_ok = match &self.correlation {
            CorrelationSet::Interval { lo, hi } => within(corr[(0, 1)], *lo, *hi),
            CorrelationSet::Hull(ms) => hull_distance(ms, &corr) <= 1e-7,
        };
        if !corr_ok {
            return false;
        }
        match (&self.jump_bounds, &s.jump) {
            (None, None) => true,
            (Some(jb), Some(j)) => {
                let r = j.rates();
                let same_shape = jb.base.with_rates(&r).map(|x| &x == j).unwrap_or(false);
                same_shape && (0..r.len()).all(|l| within(r[l], jb.rate_lo[l], jb.rate_hi[l]))
            }
            _ => false,
        }
    }

    /// The two-asset solver's standing assumptions: nonnegative drift lower
    /// bounds and the asset ordering `b̄₂ ≤ b̄₁, b̲₂ ≤ b̲₁, σ̄₂ ≥ σ̄₁, σ̲₂ ≥ σ̲₁`.
    pub fn check_two_asset_ordering(&self) -> Result<()> {
        if self.n() != 2 || !matches!(self.correlation, CorrelationSet::Interval { .. }) {
            return Err(Error::Unsupported(
                "two-asset solver needs n = 2 with a correlation interval".into(),
            ));
        }
        let violated = |detail: String| {
            Err(Error::AssumptionViolated {
                assumption: "two-asset ordering".into(),
                detail,
            })
        };
        let (b_lo, b_hi, s_lo, s_hi) = (&self.drift_lo, &self.drift_hi, &self.vol_lo, &self.vol_hi);
        for i in 0..2 {
            if b_lo[i] < 0.0 {
                return violated(format!("drift_lo[{i}] >= 0 fails ({} < 0)", b_lo[i]));
            }
        }
        if b_hi[1] > b_hi[0] {
            return violated(format!("drift_hi[1] <= drift_hi[0] fails ({} > {})", b_hi[1], b_hi[0]));
        }
        if b_lo[1] > b_lo[0] {
            return violated(format!("drift_lo[1] <= drift_lo[0] fails ({} > {})", b_lo[1], b_lo[0]));
        }
        if s_hi[1] < s_hi[0] {
            return violated(format!("vol_hi[1] >= vol_hi[0] fails ({} < {})", s_hi[1], s_hi[0]));
        }
        if s_lo[1] < s_lo[0] {
            return violated(format!("vol_lo[1] >= vol_lo[0] fails ({} < {})", s_lo[1], s_lo[0]));
        }
        Ok(())
    }
}

/// Frobenius distance from `c` to the convex hull of `ms`, by projected
/// gradient over the simplex.
fn hull_distance(ms: &[DMatrix<f64>], c: &DMatrix<f64>) -> f64 {
    let m = ms.len();
    if m == 1 {
        return (&ms[0] - c).norm();
    }
    let gram = DMatrix::from_fn(m, m, |i, j| ms[i].dot(&ms[j]));
    let lin: Vec<f64> = ms.iter().map(|mi| mi.dot(c)).collect();
    let step = 1.0 / gram.norm().max(1e-12);
    let mut w = vec![1.0 / m as f64; m];
    for _ in 0..5000 {
        let grad: Vec<f64> = (0..m)
            .map(|i| (0..m).map(|j| gram[(i, j)] * w[j]).sum::<f64>() - lin[i])
            .collect();
        let next = simplex_projection(&w.iter().zip(&grad).map(|(wi, g)| wi - step * g).collect::<Vec<_>>());
        let moved: f64 = next.iter().zip(&w).map(|(a, b)| (a - b).abs()).sum();
        w = next;
        if moved < 1e-15 {
            break;
        }
    }
    let mut comb = &ms[0] * w[0];
    for k in 1..m {
        comb += &ms[k] * w[k];
    }
    (comb - c).norm()
}
