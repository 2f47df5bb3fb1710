//! Strict JSON problem files.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::closed_form::OdeConfig;
use crate::error::{Error, Result};
use crate::model::{
    CompoundPoisson, CorrelationSet, Criterion, CriterionKind, JumpBounds, JumpSizeLaw, JumpSpec, LevyAtom,
    LevyDiscrete, UncertaintySet,
};
use crate::pde_check::{DerivativeMode, GridConfig, SaddleConfig};
use crate::simulate::{PerturbConfig, SimConfig};
use crate::worst_case::{Method, NumericConfig};

pub const SCHEMA_VERSION: &str = "1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub version: String,
    pub assets: usize,
    pub uncertainty: UncertaintyBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jumps: Option<JumpBlock>,
    pub criterion: CriterionBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub worst_case: Option<WorstCaseBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturb: Option<PerturbBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ode: Option<OdeConfig>,
}

/// Box bounds. Two assets take `rho_lo`/`rho_hi`; otherwise `corr_hull`
/// lists the vertex correlation matrices. A single asset needs neither.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncertaintyBlock {
    pub drift_lo: Vec<f64>,
    pub drift_hi: Vec<f64>,
    pub vol_lo: Vec<f64>,
    pub vol_hi: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_hi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corr_hull: Option<Vec<Vec<Vec<f64>>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum JumpBlock {
    /// `loadings[i][l]` is the exposure of asset `i` to jump type `l`.
    CompoundPoisson {
        loadings: Vec<Vec<f64>>,
        laws: Vec<JumpSizeLaw>,
        rate_lo: Vec<f64>,
        rate_hi: Vec<f64>,
    },
    /// Atoms `z` of a discrete Lévy measure with weights in `[rate_lo, rate_hi]`.
    LevyDiscrete {
        atoms: Vec<Vec<f64>>,
        rate_lo: Vec<f64>,
        rate_hi: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CriterionBlock {
    pub kind: CriterionKind,
    pub lambda: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub t0: f64,
    pub x0: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorstCaseBlock {
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_resolution: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refinements: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_evals: Option<u64>,
}

fn default_method() -> Method {
    Method::Auto
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyBlock {
    /// Nodes per axis of the `(t, x)` residual grid.
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
    pub seed: u64,
    #[serde(default = "default_derivatives")]
    pub derivatives: DerivativeMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_range: Option<(f64, f64)>,
}

fn default_grid() -> usize {
    10
}
fn default_samples() -> usize {
    1000
}
fn default_derivatives() -> DerivativeMode {
    DerivativeMode::Analytic
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateBlock {
    pub n_paths: usize,
    /// Euler step; defaults to `1e-3·(T − t₀)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub seed: u64,
    #[serde(default)]
    pub antithetic: bool,
    /// Also writes every path to `paths.rmvp`.
    #[serde(default)]
    pub record_paths: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbBlock {
    #[serde(default = "default_h_list")]
    pub h_list: Vec<f64>,
    #[serde(default = "default_twenty")]
    pub w_samples: usize,
    #[serde(default = "default_twenty")]
    pub u_samples: usize,
    pub n_paths: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub seed: u64,
    #[serde(default)]
    pub antithetic: bool,
    #[serde(default = "default_one")]
    pub base_scale: f64,
    #[serde(default = "default_one")]
    pub w_radius: f64,
}

fn default_h_list() -> Vec<f64> {
    vec![0.1, 0.05, 0.025]
}
fn default_twenty() -> usize {
    20
}
fn default_one() -> f64 {
    1.0
}

fn vector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

fn square(rows: &[Vec<f64>], n: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Config(format!("{what} must be a {n}x{n} matrix")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl ProblemFile {
    /// Parses and checks the version tag. Unknown keys are errors.
    pub fn from_json(text: &str) -> Result<Self> {
        let p: ProblemFile = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if p.version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported version {:?}, expected {SCHEMA_VERSION:?}",
                p.version
            )));
        }
        if p.assets == 0 {
            return Err(Error::Config("assets must be positive".into()));
        }
        Ok(p)
    }

    pub fn criterion(&self) -> Result<Criterion> {
        let c = &self.criterion;
        Criterion::new(c.kind, c.lambda, c.horizon, c.t0, c.x0)
    }

    pub fn uncertainty_set(&self) -> Result<UncertaintySet> {
        let n = self.assets;
        let u = &self.uncertainty;
        for (name, v) in [
            ("drift_lo", &u.drift_lo),
            ("drift_hi", &u.drift_hi),
            ("vol_lo", &u.vol_lo),
            ("vol_hi", &u.vol_hi),
        ] {
            if v.len() != n {
                return Err(Error::Config(format!("uncertainty.{name} has {} entries, expected {n}", v.len())));
            }
        }
        let correlation = match (u.rho_lo, u.rho_hi, &u.corr_hull) {
            (Some(lo), Some(hi), None) => CorrelationSet::Interval { lo, hi },
            (None, None, Some(h)) => CorrelationSet::Hull(
                h.iter()
                    .enumerate()
                    .map(|(k, m)| square(m, n, &format!("corr_hull[{k}]")))
                    .collect::<Result<_>>()?,
            ),
            (None, None, None) if n == 1 => CorrelationSet::Hull(vec![DMatrix::identity(1, 1)]),
            _ => {
                return Err(Error::Config(
                    "give either rho_lo and rho_hi (two assets) or corr_hull".into(),
                ))
            }
        };
        let jump_bounds = match &self.jumps {
            None => None,
            Some(JumpBlock::CompoundPoisson {
                loadings,
                laws,
                rate_lo,
                rate_hi,
            }) => {
                let k = laws.len();
                if loadings.len() != n || loadings.iter().any(|r| r.len() != k) {
                    return Err(Error::Config(format!("jumps.loadings must be {n}x{k}")));
                }
                let l = DMatrix::from_fn(n, k, |i, j| loadings[i][j]);
                let cp = CompoundPoisson::new(l, vector(rate_lo), laws.clone())?;
                Some(JumpBounds {
                    base: JumpSpec::CompoundPoisson(cp),
                    rate_lo: vector(rate_lo),
                    rate_hi: vector(rate_hi),
                })
            }
            Some(JumpBlock::LevyDiscrete { atoms, rate_lo, rate_hi }) => {
                if rate_lo.len() != atoms.len() {
                    return Err(Error::Config("jumps.rate_lo needs one rate per atom".into()));
                }
                let atoms = atoms
                    .iter()
                    .zip(rate_lo)
                    .map(|(z, w)| LevyAtom {
                        z: vector(z),
                        weight: *w,
                    })
                    .collect();
                Some(JumpBounds {
                    base: JumpSpec::LevyDiscrete(LevyDiscrete { atoms }),
                    rate_lo: vector(rate_lo),
                    rate_hi: vector(rate_hi),
                })
            }
        };
        UncertaintySet::new(
            vector(&u.drift_lo),
            vector(&u.drift_hi),
            vector(&u.vol_lo),
            vector(&u.vol_hi),
            correlation,
            jump_bounds,
        )
    }

    pub fn method(&self) -> Method {
        self.worst_case.as_ref().map_or(Method::Auto, |w| w.method)
    }

    pub fn numeric_config(&self) -> NumericConfig {
        let mut cfg = NumericConfig::default();
        if let Some(w) = &self.worst_case {
            if let Some(r) = w.grid_resolution {
                cfg.grid_resolution = r;
            }
            if let Some(r) = w.refinements {
                cfg.refinements = r;
            }
            if let Some(m) = w.max_evals {
                cfg.max_evals = m;
            }
        }
        cfg
    }

    pub fn ode_config(&self) -> OdeConfig {
        self.ode.clone().unwrap_or_default()
    }

    fn require<'a, T>(block: &'a Option<T>, name: &str) -> Result<&'a T> {
        block
            .as_ref()
            .ok_or_else(|| Error::Config(format!("this command needs a \"{name}\" block")))
    }

    pub fn verify_configs(&self) -> Result<(GridConfig, SaddleConfig)> {
        let v = Self::require(&self.verify, "verify")?;
        Ok((
            GridConfig {
                n_t: v.grid,
                n_x: v.grid,
                x_range: v.x_range,
                mode: v.derivatives,
            },
            SaddleConfig {
                samples: v.samples,
                seed: v.seed,
                ..Default::default()
            },
        ))
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        let s = Self::require(&self.simulate, "simulate")?;
        let span = self.criterion.horizon - self.criterion.t0;
        Ok(SimConfig {
            n_paths: s.n_paths,
            dt: s.dt.unwrap_or(1e-3 * span),
            seed: s.seed,
            antithetic: s.antithetic,
            record_paths: s.record_paths,
        })
    }

    pub fn perturb_config(&self) -> Result<PerturbConfig> {
        let p = Self::require(&self.perturb, "perturb")?;
        Ok(PerturbConfig {
            h_list: p.h_list.clone(),
            w_samples: p.w_samples,
            u_samples: p.u_samples,
            n_paths: p.n_paths,
            dt: p.dt,
            seed: p.seed,
            antithetic: p.antithetic,
            base_scale: p.base_scale,
            w_radius: p.w_radius,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SHORT_SECOND: &str = r#"{
        "version": "1",
        "assets": 2,
        "uncertainty": {
            "drift_lo": [0.10, 0.02], "drift_hi": [0.12, 0.03],
            "vol_lo": [0.15, 0.2], "vol_hi": [0.2, 0.3],
            "rho_lo": 0.4, "rho_hi": 0.6
        },
        "criterion": {"kind": "terminal_wealth", "lambda": 1.0, "T": 1.0, "t0": 0.0, "x0": 1.0},
        "simulate": {"n_paths": 1000, "seed": 7}
    }"#;

    #[test]
    fn parses_and_builds() {
        let p = ProblemFile::from_json(SHORT_SECOND).unwrap();
        let set = p.uncertainty_set().unwrap();
        assert_eq!(set.n(), 2);
        assert_eq!(p.criterion().unwrap().kind, CriterionKind::TerminalWealth);
        assert_eq!(p.sim_config().unwrap().dt, 1e-3);
        assert_eq!(p.method(), Method::Auto);
        assert!(p.perturb_config().is_err());
    }

    #[test]
    fn rejects_unknown_keys_and_versions() {
        let extra = SHORT_SECOND.replacen("\"assets\"", "\"colour\": 1, \"assets\"", 1);
        assert!(matches!(ProblemFile::from_json(&extra), Err(Error::Config(_))));
        let nested = SHORT_SECOND.replacen("\"rho_lo\"", "\"rho_mid\": 0.5, \"rho_lo\"", 1);
        assert!(ProblemFile::from_json(&nested).is_err());
        let v2 = SHORT_SECOND.replacen("\"1\"", "\"2\"", 1);
        assert!(ProblemFile::from_json(&v2).is_err());
        let no_seed = SHORT_SECOND.replacen(", \"seed\": 7", "", 1);
        assert!(ProblemFile::from_json(&no_seed).is_err());
    }

    #[test]
    fn round_trips() {
        let p = ProblemFile::from_json(SHORT_SECOND).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(ProblemFile::from_json(&s).unwrap(), p);
    }

    #[test]
    fn jump_blocks() {
        let cp = SHORT_SECOND.replacen(
            "\"criterion\"",
            r#""jumps": {"kind": "compound_poisson", "loadings": [[1.0], [0.5]],
                "laws": [{"law": "uniform", "low": -0.2, "high": 0.4}],
                "rate_lo": [0.5], "rate_hi": [1.0]},
            "criterion""#,
            1,
        );
        let set = ProblemFile::from_json(&cp).unwrap().uncertainty_set().unwrap();
        assert!(set.jump_bounds.is_some());
        let bad = cp.replacen("[[1.0], [0.5]]", "[[1.0]]", 1);
        assert!(ProblemFile::from_json(&bad).unwrap().uncertainty_set().is_err());
    }
}
