//! TOML experiment configuration.
//!
//! ```toml
//! [market]
//! n = 1
//! d = 1
//! y0 = [0.0]
//! drift_r = [0.05]                                   # literal, or
//! # drift_r = { family = "affine_drift", intercept = [0.0], slope = [[1.0]] }
//! cov_r = [[0.04]]                                   # literal, or
//! # cov_r = { family = "constant_cov", value = [[0.04]] }
//! jumps = [{ u = [1.0], v = [0.5], rate = 1.0 }]
//!
//! [constraint]
//! type = "box"
//! lo = [-10.0]
//! hi = [10.0]
//!
//! [power]
//! p = 0.5
//! d0 = 0.0
//! ```

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::error::{FippError, Result};
use crate::fipp::{tilt_from_sigma_tilde, FippSolution};
use crate::geometry::{ConstraintSet, Halfspace};
use crate::market::{FactorMarketSpec, JumpAtom, JumpMeasure};
use crate::objective::{PowerParams, TiltParams};

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub market: MarketConfig,
    pub constraint: Option<ConstraintConfig>,
    pub power: PowerConfig,
    #[serde(default)]
    pub tilt: TiltConfig,
    #[serde(default)]
    pub fipp: FippConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub strategy: StrategyConfig,
    #[serde(default)]
    pub hjb: HjbConfig,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    pub n: usize,
    pub d: usize,
    pub y0: Option<Vec<f64>>,
    pub drift_r: Option<VectorSpec>,
    pub cov_r: Option<MatrixSpec>,
    pub cov_ry: Option<MatrixSpec>,
    pub drift_y: Option<VectorSpec>,
    pub cov_y: Option<MatrixSpec>,
    #[serde(default)]
    pub jumps: Vec<AtomConfig>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum VectorSpec {
    Literal(Vec<f64>),
    Family(VectorFamily),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum VectorFamily {
    Constant { value: Vec<f64> },
    /// `b(t, y) = intercept + slope y`
    AffineDrift { intercept: Vec<f64>, slope: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Literal(Vec<Vec<f64>>),
    Family(MatrixFamily),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum MatrixFamily {
    ConstantCov { value: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomConfig {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub rate: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintConfig {
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    Halfspaces {
        rows: Vec<HalfspaceConfig>,
        #[serde(default)]
        allow_unbounded: bool,
    },
    SingletonOrigin,
    Simplex {
        scale: f64,
    },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HalfspaceConfig {
    pub a: Vec<f64>,
    pub b: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerConfig {
    pub p: f64,
    #[serde(default)]
    pub d0: f64,
}

/// Either the factor tilt `sigma` or the market-price tilt `sigma_tilde`.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TiltConfig {
    pub sigma: Option<Vec<f64>>,
    pub sigma_tilde: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FippKind {
    #[default]
    Tilted,
    TimeMonotone,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FippConfig {
    #[serde(default)]
    pub kind: FippKind,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub horizon: f64,
    pub dt: f64,
    pub paths: usize,
    pub seed: u64,
    pub x0: f64,
    pub antithetic: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            horizon: 1.0,
            dt: 0.01,
            paths: 1000,
            seed: 0,
            x0: 1.0,
            antithetic: false,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum StrategyConfig {
    #[default]
    Optimal,
    Constant {
        pi: Vec<f64>,
    },
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HjbConfig {
    /// added to `g` before evaluating the residual (sensitivity check)
    pub g_shift: f64,
}

fn cfg_err(path: &str, msg: impl Into<String>) -> FippError {
    FippError::Config {
        path: path.into(),
        msg: msg.into(),
    }
}

fn check_len(path: &str, v: &[f64], len: usize) -> Result<()> {
    if v.len() != len {
        return Err(cfg_err(path, format!("expected {len} entries, got {}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(cfg_err(path, "entries must be finite"));
    }
    Ok(())
}

fn to_matrix(path: &str, rows: &[Vec<f64>], r: usize, c: usize) -> Result<DMatrix<f64>> {
    if rows.len() != r {
        return Err(cfg_err(path, format!("expected {r} rows, got {}", rows.len())));
    }
    for (i, row) in rows.iter().enumerate() {
        check_len(&format!("{path}[{i}]"), row, c)?;
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn to_vector(path: &str, v: &[f64], len: usize) -> Result<DVector<f64>> {
    check_len(path, v, len)?;
    Ok(DVector::from_row_slice(v))
}

impl Config {
    /// Parse TOML; errors carry the path of the offending field.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(s).map_err(|e| cfg_err("", e.to_string().trim_end().to_string()))?;
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            cfg_err(&path, e.into_inner().message().to_string())
        })
    }

    pub fn market_spec(&self) -> Result<FactorMarketSpec> {
        let m = &self.market;
        let (n, d) = (m.n, m.d);
        if n == 0 {
            return Err(cfg_err("market.n", "need at least one asset"));
        }
        let mut b = FactorMarketSpec::builder(n, d);
        if let Some(y0) = &m.y0 {
            b = b.y0(to_vector("market.y0", y0, d)?);
        }
        let vector = |path: &str, spec: &VectorSpec, len: usize| -> Result<VectorCoef> {
            match spec {
                VectorSpec::Literal(v) | VectorSpec::Family(VectorFamily::Constant { value: v }) => {
                    Ok(VectorCoef::Const(to_vector(path, v, len)?))
                }
                VectorSpec::Family(VectorFamily::AffineDrift { intercept, slope }) => Ok(VectorCoef::Affine(
                    to_vector(&format!("{path}.intercept"), intercept, len)?,
                    to_matrix(&format!("{path}.slope"), slope, len, d)?,
                )),
            }
        };
        let matrix = |path: &str, spec: &MatrixSpec, r: usize, c: usize| -> Result<DMatrix<f64>> {
            match spec {
                MatrixSpec::Literal(rows) | MatrixSpec::Family(MatrixFamily::ConstantCov { value: rows }) => {
                    to_matrix(path, rows, r, c)
                }
            }
        };
        if let Some(s) = &m.drift_r {
            b = match vector("market.drift_r", s, n)? {
                VectorCoef::Const(v) => b.drift_r_const(v),
                VectorCoef::Affine(a, s) => b.drift_r(Arc::new(move |_, y| &a + &s * y)),
            };
        }
        if let Some(s) = &m.drift_y {
            b = match vector("market.drift_y", s, d)? {
                VectorCoef::Const(v) => b.drift_y_const(v),
                VectorCoef::Affine(a, s) => b.drift_y(Arc::new(move |_, y| &a + &s * y)),
            };
        }
        if let Some(s) = &m.cov_r {
            b = b.cov_r_const(matrix("market.cov_r", s, n, n)?);
        }
        if let Some(s) = &m.cov_ry {
            b = b.cov_ry_const(matrix("market.cov_ry", s, n, d)?);
        }
        if let Some(s) = &m.cov_y {
            b = b.cov_y_const(matrix("market.cov_y", s, d, d)?);
        }
        let atoms = m
            .jumps
            .iter()
            .enumerate()
            .map(|(k, a)| {
                Ok(JumpAtom::new(
                    to_vector(&format!("market.jumps[{k}].u"), &a.u, n)?,
                    to_vector(&format!("market.jumps[{k}].v"), &a.v, d)?,
                    a.rate,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let jumps = JumpMeasure::new(atoms).map_err(|e| cfg_err("market.jumps", e.to_string()))?;
        b.jumps(jumps).build().map_err(|e| cfg_err("market", e.to_string()))
    }

    pub fn constraint_set(&self) -> Result<ConstraintSet> {
        let n = self.market.n;
        let c = self
            .constraint
            .as_ref()
            .ok_or_else(|| cfg_err("constraint", "missing [constraint] section"))?;
        let wrap = |e: FippError| cfg_err("constraint", e.to_string());
        match c {
            ConstraintConfig::Box { lo, hi } => {
                ConstraintSet::new_box(to_vector("constraint.lo", lo, n)?, to_vector("constraint.hi", hi, n)?)
                    .map_err(wrap)
            }
            ConstraintConfig::Ball { center, radius } => {
                ConstraintSet::ball(to_vector("constraint.center", center, n)?, *radius).map_err(wrap)
            }
            ConstraintConfig::Halfspaces { rows, allow_unbounded } => {
                let hs = rows
                    .iter()
                    .enumerate()
                    .map(|(i, r)| Ok(Halfspace::new(to_vector(&format!("constraint.rows[{i}].a"), &r.a, n)?, r.b)))
                    .collect::<Result<Vec<_>>>()?;
                ConstraintSet::halfspaces(n, hs, *allow_unbounded).map_err(wrap)
            }
            ConstraintConfig::SingletonOrigin => Ok(ConstraintSet::singleton_origin(n)),
            ConstraintConfig::Simplex { scale } => ConstraintSet::simplex(n, *scale).map_err(wrap),
        }
    }

    pub fn power_params(&self) -> Result<PowerParams> {
        PowerParams::new(self.power.p, self.power.d0).map_err(|e| cfg_err("power.p", e.to_string()))
    }

    /// Factor tilt; `sigma_tilde` is converted through the factor volatility at `(0, Y0)`.
    pub fn tilt(&self, spec: &FactorMarketSpec) -> Result<TiltParams> {
        let d = spec.d();
        match (&self.tilt.sigma, &self.tilt.sigma_tilde) {
            (Some(_), Some(_)) => Err(cfg_err("tilt", "give either sigma or sigma_tilde, not both")),
            (Some(s), None) => TiltParams::new(to_vector("tilt.sigma", s, d)?),
            (None, Some(s)) => tilt_from_sigma_tilde(spec, 0.0, spec.y0(), &to_vector("tilt.sigma_tilde", s, spec.n())?)
                .map_err(|e| cfg_err("tilt.sigma_tilde", e.to_string())),
            (None, None) => Ok(TiltParams::zero(d)),
        }
    }

    pub fn sigma_tilde(&self) -> Option<DVector<f64>> {
        self.tilt.sigma_tilde.as_ref().map(|s| DVector::from_row_slice(s))
    }

    /// Explicit solution selected by `[fipp] kind`.
    pub fn solution(&self, spec: &FactorMarketSpec) -> Result<FippSolution> {
        let params = self.power_params()?;
        let c = self.constraint_set()?;
        match self.fipp.kind {
            FippKind::Tilted => FippSolution::new(spec, params, self.tilt(spec)?, c),
            FippKind::TimeMonotone => FippSolution::time_monotone(spec, params, c),
        }
    }

    pub fn constant_strategy(&self) -> Result<Option<DVector<f64>>> {
        match &self.strategy {
            StrategyConfig::Optimal => Ok(None),
            StrategyConfig::Constant { pi } => Ok(Some(to_vector("strategy.pi", pi, self.market.n)?)),
        }
    }
}

enum VectorCoef {
    Const(DVector<f64>),
    Affine(DVector<f64>, DMatrix<f64>),
}

/// Config field path of a covariance block named in a PSD failure.
pub fn field_for_block(what: &str) -> &'static str {
    match what {
        "cov_r" => "market.cov_r",
        "cov_y" => "market.cov_y",
        _ => "market.cov_ry",
    }
}
