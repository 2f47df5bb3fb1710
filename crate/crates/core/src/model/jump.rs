//! Jump specifications: compound Poisson with typed size laws, and finite
//! (discretized) Lévy measures.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{dim_check, Error, Result};
use crate::model::linalg::rank;

/// Atoms within this distance of the unit sphere are flagged as ties for
/// the small-jump indicator.
pub const UNIT_SPHERE_TIE_TOL: f64 = 1e-9;

/// Law of a relative jump size `Y > -1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum JumpSizeLaw {
    /// `Y = high` with probability `p_high`, else `low`.
    TwoPoint { low: f64, high: f64, p_high: f64 },
    /// `Y ~ U(low, high)`.
    Uniform { low: f64, high: f64 },
    /// `Y = exp(Z) - 1` with `Z ~ N(mu, sigma²)`.
    ShiftedLognormal { mu: f64, sigma: f64 },
}

impl JumpSizeLaw {
    pub fn mean(&self) -> f64 {
        match *self {
            JumpSizeLaw::TwoPoint { low, high, p_high } => (1.0 - p_high) * low + p_high * high,
            JumpSizeLaw::Uniform { low, high } => 0.5 * (low + high),
            JumpSizeLaw::ShiftedLognormal { mu, sigma } => (mu + 0.5 * sigma * sigma).exp() - 1.0,
        }
    }

    pub fn second_moment(&self) -> f64 {
        match *self {
            JumpSizeLaw::TwoPoint { low, high, p_high } => {
                (1.0 - p_high) * low * low + p_high * high * high
            }
            JumpSizeLaw::Uniform { low, high } => (low * low + low * high + high * high) / 3.0,
            JumpSizeLaw::ShiftedLognormal { mu, sigma } => {
                let s2 = sigma * sigma;
                (2.0 * mu + 2.0 * s2).exp() - 2.0 * (mu + 0.5 * s2).exp() + 1.0
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        match *self {
            JumpSizeLaw::TwoPoint { low, high, p_high } => {
                if !(low > -1.0 && high > -1.0 && low.is_finite() && high.is_finite()) {
                    return bad(format!("two-point jump support must lie in (-1, inf), got {{{low}, {high}}}"));
                }
                if !(0.0..=1.0).contains(&p_high) {
                    return bad(format!("two-point probability must lie in [0, 1], got {p_high}"));
                }
            }
            JumpSizeLaw::Uniform { low, high } => {
                if !(low >= -1.0 && high > low && high.is_finite()) {
                    return bad(format!("uniform jump law needs -1 <= low < high, got ({low}, {high})"));
                }
            }
            JumpSizeLaw::ShiftedLognormal { mu, sigma } => {
                if !(mu.is_finite() && sigma.is_finite() && sigma >= 0.0) {
                    return bad(format!("shifted lognormal needs finite mu and sigma >= 0, got ({mu}, {sigma})"));
                }
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            JumpSizeLaw::TwoPoint { low, high, p_high } => {
                if rng.random::<f64>() < p_high {
                    high
                } else {
                    low
                }
            }
            JumpSizeLaw::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
            JumpSizeLaw::ShiftedLognormal { mu, sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                (mu + sigma * z).exp_m1()
            }
        }
    }

    /// Two equally weighted points carrying the same first and second
    /// moments (a single point when the variance vanishes).
    pub fn moment_matched_points(&self) -> Vec<(f64, f64)> {
        let m = self.mean();
        let var = (self.second_moment() - m * m).max(0.0);
        if var == 0.0 {
            vec![(m, 1.0)]
        } else {
            let s = var.sqrt();
            vec![(m - s, 0.5), (m + s, 0.5)]
        }
    }
}

/// Compound Poisson jumps in asset returns: type `l` fires with intensity
/// `intensities[l]` and moves asset `i` by `loadings[(i, l)] · Y_l`.
#[derive(Clone, Debug, PartialEq)]
pub struct CompoundPoisson {
    pub loadings: DMatrix<f64>,
    pub intensities: DVector<f64>,
    pub laws: Vec<JumpSizeLaw>,
}

/// A single atom `(z, f)` of a discretized Lévy measure.
#[derive(Clone, Debug, PartialEq)]
pub struct LevyAtom {
    pub z: DVector<f64>,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevyDiscrete {
    pub atoms: Vec<LevyAtom>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum JumpSpec {
    CompoundPoisson(CompoundPoisson),
    LevyDiscrete(LevyDiscrete),
}

/// One atom of the jump measure in return space, as seen by the generator.
#[derive(Clone, Debug, PartialEq)]
pub struct JumpAtom {
    pub z: DVector<f64>,
    pub weight: f64,
    /// Value of the indicator `1{‖z‖ < 1}`, fixed at construction.
    pub small: bool,
}

impl JumpAtom {
    pub fn new(z: DVector<f64>, weight: f64) -> Self {
        let small = z.norm() < 1.0;
        Self { z, weight, small }
    }

    pub fn near_unit_sphere(&self) -> bool {
        (self.z.norm() - 1.0).abs() <= UNIT_SPHERE_TIE_TOL
    }
}

impl CompoundPoisson {
    pub fn new(loadings: DMatrix<f64>, intensities: DVector<f64>, laws: Vec<JumpSizeLaw>) -> Result<Self> {
        let cp = Self {
            loadings,
            intensities,
            laws,
        };
        cp.validate()?;
        Ok(cp)
    }

    pub fn n_types(&self) -> usize {
        self.loadings.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.loadings.ncols();
        dim_check("jump intensities", k, self.intensities.len())?;
        dim_check("jump size laws", k, self.laws.len())?;
        if self.loadings.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParameter("jump loadings must lie in [0, 1]".into()));
        }
        if rank(&self.loadings, 1e-12) != k {
            return Err(Error::InvalidParameter(format!(
                "jump loading matrix must have full column rank {k}"
            )));
        }
        if self.intensities.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return Err(Error::InvalidParameter("jump intensities must be positive".into()));
        }
        for law in &self.laws {
            law.validate()?;
            let (m, m2) = (law.mean(), law.second_moment());
            if m2 < m * m - 1e-15 {
                return Err(Error::InvalidParameter(format!(
                    "jump moments inconsistent: E[Y^2]={m2} < E[Y]^2={}",
                    m * m
                )));
            }
        }
        Ok(())
    }

    /// Rejects parameters for which `Σ_l |μ_l E[Y_l] J_il| ≥ 1` for some asset.
    pub fn check_compensation_condition(&self) -> Result<()> {
        for i in 0..self.loadings.nrows() {
            let s: f64 = (0..self.n_types())
                .map(|l| (self.intensities[l] * self.laws[l].mean() * self.loadings[(i, l)]).abs())
                .sum();
            if s >= 1.0 {
                return Err(Error::AssumptionViolated {
                    assumption: "jump compensation".into(),
                    detail: format!("sum_l |mu_l E[Y_l] J_{i}l| = {s} >= 1 for asset {i}"),
                });
            }
        }
        Ok(())
    }
}

impl JumpSpec {
    pub fn dim(&self) -> usize {
        match self {
            JumpSpec::CompoundPoisson(cp) => cp.loadings.nrows(),
            JumpSpec::LevyDiscrete(l) => l.atoms.first().map_or(0, |a| a.z.len()),
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            JumpSpec::CompoundPoisson(cp) => {
                dim_check("jump loading rows", n, cp.loadings.nrows())?;
                cp.validate()
            }
            JumpSpec::LevyDiscrete(l) => {
                for (j, a) in l.atoms.iter().enumerate() {
                    dim_check("Levy atom dimension", n, a.z.len())?;
                    if !(a.weight.is_finite() && a.weight > 0.0) {
                        return Err(Error::InvalidParameter(format!(
                            "Levy atom {j} weight must be finite and positive, got {}",
                            a.weight
                        )));
                    }
                    if a.z.iter().any(|v| !v.is_finite()) {
                        return Err(Error::InvalidParameter(format!("Levy atom {j} is not finite")));
                    }
                }
                Ok(())
            }
        }
    }

    /// Rates that an uncertainty set may vary: intensities for compound
    /// Poisson, atom weights for a discrete Lévy measure.
    pub fn rates(&self) -> DVector<f64> {
        match self {
            JumpSpec::CompoundPoisson(cp) => cp.intensities.clone(),
            JumpSpec::LevyDiscrete(l) => DVector::from_iterator(l.atoms.len(), l.atoms.iter().map(|a| a.weight)),
        }
    }

    pub fn with_rates(&self, rates: &DVector<f64>) -> Result<JumpSpec> {
        dim_check("jump rates", self.rates().len(), rates.len())?;
        Ok(match self {
            JumpSpec::CompoundPoisson(cp) => JumpSpec::CompoundPoisson(CompoundPoisson {
                intensities: rates.clone(),
                ..cp.clone()
            }),
            JumpSpec::LevyDiscrete(l) => JumpSpec::LevyDiscrete(LevyDiscrete {
                atoms: l
                    .atoms
                    .iter()
                    .zip(rates.iter())
                    .map(|(a, w)| LevyAtom { z: a.z.clone(), weight: *w })
                    .collect(),
            }),
        })
    }

    /// First-moment vector `∫ z F(dz)` and second-moment matrix `∫ z zᵀ F(dz)`.
    pub fn moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.dim();
        let mut m1 = DVector::zeros(n);
        let mut m2 = DMatrix::zeros(n, n);
        match self {
            JumpSpec::CompoundPoisson(cp) => {
                for l in 0..cp.n_types() {
                    let col = cp.loadings.column(l);
                    let mu = cp.intensities[l];
                    m1 += col * (mu * cp.laws[l].mean());
                    m2 += col * col.transpose() * (mu * cp.laws[l].second_moment());
                }
            }
            JumpSpec::LevyDiscrete(l) => {
                for a in &l.atoms {
                    m1 += &a.z * a.weight;
                    m2 += &a.z * a.z.transpose() * a.weight;
                }
            }
        }
        (m1, m2)
    }

    /// Atom representation used by the jump generator. Compound Poisson
    /// types are replaced by moment-matched two-point laws.
    pub fn atoms(&self) -> Vec<JumpAtom> {
        match self {
            JumpSpec::CompoundPoisson(cp) => {
                let mut out = Vec::new();
                for l in 0..cp.n_types() {
                    let col: DVector<f64> = cp.loadings.column(l).into_owned();
                    for (y, p) in cp.laws[l].moment_matched_points() {
                        out.push(JumpAtom::new(&col * y, cp.intensities[l] * p));
                    }
                }
                out
            }
            JumpSpec::LevyDiscrete(l) => l.atoms.iter().map(|a| JumpAtom::new(a.z.clone(), a.weight)).collect(),
        }
    }
}
