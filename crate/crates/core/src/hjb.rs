//! Residual of the forward HJB equation for a candidate pair `(Pi, g)`:
//!
//! ```text
//! d_t Pi + A^Y Pi + g d_z Pi + f(t, y, D_y Pi, Pi(t, y + ., z) - Pi(t, y, z)) = 0
//! A^Y Pi = D_y Pi'b^Y + 1/2 tr(D_yy Pi c^Y) + sum_k rate_k (Pi(y + v_k) - Pi(y) - D_y Pi'v_k 1{|v_k| <= 1})
//! ```
//!
//! and of its exponential form in `Gamma = e^Pi`. This is a verifier, not a solver.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{FippError, Result};
use crate::fipp::FippSolution;
use crate::geometry::ConstraintSet;
use crate::linalg;
use crate::market::{is_small, FactorMarketSpec, LocalMarket};
use crate::objective::{maximize, Objective, OptimizerOptions, PowerParams};
use crate::simulate::fmt_f64;

/// A candidate log-level `Pi(t, y, z)`. Derivatives default to finite
/// differences; override them when they are known exactly.
pub trait PerformanceField: Sync {
    fn value(&self, t: f64, y: &DVector<f64>, z: f64) -> f64;

    fn d_t(&self, _t: f64, _y: &DVector<f64>, _z: f64) -> Option<f64> {
        None
    }

    fn d_z(&self, _t: f64, _y: &DVector<f64>, _z: f64) -> Option<f64> {
        None
    }

    fn d_y(&self, _t: f64, _y: &DVector<f64>, _z: f64) -> Option<DVector<f64>> {
        None
    }

    fn d_yy(&self, _t: f64, _y: &DVector<f64>, _z: f64) -> Option<DMatrix<f64>> {
        None
    }
}

/// `Pi(t, y, z) = a + sigma'y + z` with exact derivatives.
#[derive(Clone, Debug)]
pub struct AffineField {
    pub a: f64,
    pub sigma: DVector<f64>,
}

impl AffineField {
    pub fn from_solution(sol: &FippSolution) -> Self {
        AffineField {
            a: sol.params().d0() - sol.tilt().sigma.dot(sol.y0()),
            sigma: sol.tilt().sigma.clone(),
        }
    }
}

impl PerformanceField for AffineField {
    fn value(&self, _t: f64, y: &DVector<f64>, z: f64) -> f64 {
        self.a + self.sigma.dot(y) + z
    }

    fn d_t(&self, _t: f64, _y: &DVector<f64>, _z: f64) -> Option<f64> {
        Some(0.0)
    }

    fn d_z(&self, _t: f64, _y: &DVector<f64>, _z: f64) -> Option<f64> {
        Some(1.0)
    }

    fn d_y(&self, _t: f64, _y: &DVector<f64>, _z: f64) -> Option<DVector<f64>> {
        Some(self.sigma.clone())
    }

    fn d_yy(&self, _t: f64, _y: &DVector<f64>, _z: f64) -> Option<DMatrix<f64>> {
        let d = self.sigma.len();
        Some(DMatrix::zeros(d, d))
    }
}

/// Any closure, differentiated numerically.
pub struct FnField<F>(pub F);

impl<F: Fn(f64, &DVector<f64>, f64) -> f64 + Sync> PerformanceField for FnField<F> {
    fn value(&self, t: f64, y: &DVector<f64>, z: f64) -> f64 {
        (self.0)(t, y, z)
    }
}

/// Value and derivatives of a field at one point.
#[derive(Clone, Debug)]
pub struct Jet {
    pub value: f64,
    pub d_t: f64,
    pub d_z: f64,
    pub d_y: DVector<f64>,
    pub d_yy: DMatrix<f64>,
}

fn unit(d: usize, i: usize, h: f64) -> DVector<f64> {
    let mut e = DVector::zeros(d);
    e[i] = h;
    e
}

/// Analytic derivatives where available, central differences with
/// `h_y = 1e-4 (1 + |y|)` otherwise.
pub fn jet(field: &dyn PerformanceField, t: f64, y: &DVector<f64>, z: f64) -> Jet {
    let d = y.len();
    let v = |t: f64, y: &DVector<f64>, z: f64| field.value(t, y, z);
    let value = v(t, y, z);
    let ht = 1e-4 * (1.0 + t.abs());
    let hz = 1e-4 * (1.0 + z.abs());
    let hy = 1e-4 * (1.0 + y.norm());
    let d_t = field
        .d_t(t, y, z)
        .unwrap_or_else(|| (v(t + ht, y, z) - v(t - ht, y, z)) / (2.0 * ht));
    let d_z = field
        .d_z(t, y, z)
        .unwrap_or_else(|| (v(t, y, z + hz) - v(t, y, z - hz)) / (2.0 * hz));
    let d_y = field.d_y(t, y, z).unwrap_or_else(|| {
        DVector::from_fn(d, |i, _| {
            let e = unit(d, i, hy);
            (v(t, &(y + &e), z) - v(t, &(y - &e), z)) / (2.0 * hy)
        })
    });
    let d_yy = field.d_yy(t, y, z).unwrap_or_else(|| {
        DMatrix::from_fn(d, d, |i, j| {
            if i == j {
                let e = unit(d, i, hy);
                (v(t, &(y + &e), z) - 2.0 * value + v(t, &(y - &e), z)) / (hy * hy)
            } else {
                let ei = unit(d, i, hy);
                let ej = unit(d, j, hy);
                (v(t, &(y + &ei + &ej), z) - v(t, &(y + &ei - &ej), z) - v(t, &(y - &ei + &ej), z)
                    + v(t, &(y - &ei - &ej), z))
                    / (4.0 * hy * hy)
            }
        })
    });
    Jet {
        value,
        d_t,
        d_z,
        d_y,
        d_yy,
    }
}

fn operator_from_jet(local: &LocalMarket, field: &dyn PerformanceField, j: &Jet, z: f64) -> f64 {
    let c = &local.coef;
    let mut a = j.d_y.dot(&c.b_y) + 0.5 * (&j.d_yy * &c.c_y).trace();
    for atom in &local.atoms {
        if atom.v.iter().all(|&x| x == 0.0) {
            continue;
        }
        let shifted = field.value(local.t, &(&local.y + &atom.v), z);
        let h = if is_small(&atom.v) { j.d_y.dot(&atom.v) } else { 0.0 };
        a += atom.rate * (shifted - j.value - h);
    }
    a
}

/// The factor generator `A^Y` applied to `Pi(t, ., z)` at `y`.
pub fn operator_ay(spec: &FactorMarketSpec, field: &dyn PerformanceField, t: f64, y: &DVector<f64>, z: f64) -> f64 {
    let local = spec.local(t, y);
    operator_from_jet(&local, field, &jet(field, t, y, z), z)
}

#[derive(Clone, Debug, Serialize)]
pub struct PointResidual {
    pub t: f64,
    pub y: Vec<f64>,
    pub z: f64,
    /// residual of the equation for `Pi`
    pub residual: f64,
    /// residual of the equation for `Gamma = e^Pi`
    pub gamma_residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ResidualField {
    pub points: Vec<PointResidual>,
    pub max_abs: f64,
    pub rms: f64,
    /// `max |R_Pi - e^{-Pi} R_Gamma|`
    pub cole_hopf_gap: f64,
}

impl ResidualField {
    /// CSV with header `t, y_1..y_d, z, residual`.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = self.points.first().map_or(0, |p| p.y.len());
        let mut header = vec!["t".to_string()];
        header.extend((1..=d).map(|i| format!("y_{i}")));
        header.push("z".into());
        header.push("residual".into());
        w.write_record(&header)?;
        for p in &self.points {
            let mut row = vec![fmt_f64(p.t)];
            row.extend(p.y.iter().map(|&v| fmt_f64(v)));
            row.push(fmt_f64(p.z));
            row.push(fmt_f64(p.residual));
            w.write_record(&row)?;
        }
        w.flush()
    }
}

/// Grid point `(t, y, z)`.
pub type GridPoint = (f64, DVector<f64>, f64);

/// `t in {0, 0.5, 1}`, `z in {-1, 0, 1}`, 21 points per factor axis on a box
/// of half-width `3 sqrt(tr c^Y(0, Y0))` around `Y0` (1 when that trace is 0);
/// tensor grid for `d <= 2`, axis cross otherwise.
pub fn default_grid(spec: &FactorMarketSpec) -> Vec<GridPoint> {
    let y0 = spec.y0();
    let d = spec.d();
    let tr = spec.coefficients(0.0, y0).c_y.trace();
    let half = if tr > 0.0 { 3.0 * tr.sqrt() } else { 1.0 };
    let offsets: Vec<f64> = (0..21).map(|i| -half + half * i as f64 / 10.0).collect();
    let ys: Vec<DVector<f64>> = match d {
        0 => vec![y0.clone()],
        1 => offsets.iter().map(|&o| y0.add_scalar(o)).collect(),
        2 => offsets
            .iter()
            .flat_map(|&a| offsets.iter().map(move |&b| (a, b)))
            .map(|(a, b)| y0 + DVector::from_row_slice(&[a, b]))
            .collect(),
        _ => {
            let mut v = vec![y0.clone()];
            for i in 0..d {
                for &o in offsets.iter().filter(|&&o| o != 0.0) {
                    v.push(y0 + unit(d, i, o));
                }
            }
            v
        }
    };
    let mut grid = Vec::with_capacity(9 * ys.len());
    for t in [0.0, 0.5, 1.0] {
        for y in &ys {
            for z in [-1.0, 0.0, 1.0] {
                grid.push((t, y.clone(), z));
            }
        }
    }
    grid
}

fn point_residual(
    spec: &FactorMarketSpec,
    params: &PowerParams,
    field: &dyn PerformanceField,
    g: &(dyn Fn(f64, &DVector<f64>) -> Result<f64> + Sync),
    c: &ConstraintSet,
    (t, y, z): &GridPoint,
) -> Result<PointResidual> {
    let (t, z) = (*t, *z);
    let local = spec.local(t, y);
    let p = params.p();
    let j = jet(field, t, y, z);
    let gv = g(t, y)?;

    // Pi form: Z = D_y Pi, W(v) = Pi(y + v) - Pi(y)
    let w = |v: &DVector<f64>| field.value(t, &(y + v), z) - j.value;
    let obj = Objective::new(&local, p, &j.d_y, &w);
    let opt = maximize(&obj, c, &OptimizerOptions::default()).map_err(|e| match e {
        FippError::NotAttained { .. } => e,
        other => FippError::Numerical {
            t,
            y: linalg::to_vec(y),
            msg: other.to_string(),
        },
    })?;
    let pi_star = opt.pi_vec();
    let jump_comp: f64 = local
        .atoms
        .iter()
        .filter(|a| a.v.iter().any(|&x| x != 0.0))
        .map(|a| {
            let wv = w(&a.v);
            a.rate * (wv.exp_m1() - wv)
        })
        .sum();
    let driver = 0.5 * j.d_y.dot(&(&local.coef.c_y * &j.d_y)) + p * opt.value + jump_comp;
    let residual = j.d_t + operator_from_jet(&local, field, &j, z) + gv * j.d_z + driver;

    // Gamma form at the same pi*
    let gamma = j.value.exp();
    let dg = &j.d_y * gamma;
    let dgg = (&j.d_yy + &j.d_y * j.d_y.transpose()) * gamma;
    let gamma_at = |v: &DVector<f64>| field.value(t, &(y + v), z).exp();
    let mut a_gamma = dg.dot(&local.coef.b_y) + 0.5 * (&dgg * &local.coef.c_y).trace();
    for atom in local.atoms.iter().filter(|a| a.v.iter().any(|&x| x != 0.0)) {
        let h = if is_small(&atom.v) { dg.dot(&atom.v) } else { 0.0 };
        a_gamma += atom.rate * (gamma_at(&atom.v) - gamma - h);
    }
    let z_gamma = &dg / gamma;
    let w_gamma = |v: &DVector<f64>| (gamma_at(v) / gamma).ln();
    let phi_gamma = Objective::new(&local, p, &z_gamma, &w_gamma).value(&pi_star)?;
    let gamma_residual = j.d_t * gamma + a_gamma + gv * j.d_z * gamma + p * gamma * phi_gamma;

    Ok(PointResidual {
        t,
        y: linalg::to_vec(y),
        z,
        residual,
        gamma_residual,
    })
}

pub fn hjb_residual(
    spec: &FactorMarketSpec,
    params: &PowerParams,
    field: &dyn PerformanceField,
    g: &(dyn Fn(f64, &DVector<f64>) -> Result<f64> + Sync),
    c: &ConstraintSet,
    grid: &[GridPoint],
) -> Result<ResidualField> {
    if grid.is_empty() {
        return Err(FippError::InvalidParameter("empty residual grid".into()));
    }
    if let Some((_, y, _)) = grid.iter().find(|(_, y, _)| y.len() != spec.d()) {
        return Err(FippError::GridMismatch(format!(
            "grid point has {} factor coordinates, market has {}",
            y.len(),
            spec.d()
        )));
    }
    let points = grid
        .par_iter()
        .map(|pt| point_residual(spec, params, field, g, c, pt))
        .collect::<Result<Vec<_>>>()?;
    let max_abs = points.iter().fold(0.0f64, |m, p| m.max(p.residual.abs()));
    let squares: Vec<f64> = points.iter().map(|p| p.residual * p.residual).collect();
    let rms = (linalg::pairwise_sum(&squares) / squares.len() as f64).sqrt();
    let cole_hopf_gap = points
        .iter()
        .zip(grid)
        .map(|(p, (t, y, z))| (p.residual - (-field.value(*t, y, *z)).exp() * p.gamma_residual).abs())
        .fold(0.0, f64::max);
    Ok(ResidualField {
        points,
        max_abs,
        rms,
        cole_hopf_gap,
    })
}

/// Residual of the explicit solution on a grid.
pub fn solution_residual(sol: &FippSolution, grid: &[GridPoint], g_shift: f64) -> Result<ResidualField> {
    let field = AffineField::from_solution(sol);
    let g = |t: f64, y: &DVector<f64>| sol.g(t, y).map(|v| v + g_shift);
    hjb_residual(sol.spec(), sol.params(), &field, &g, sol.constraint(), grid)
}
