use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::polyhedral;
use super::ConstraintSet;
use crate::error::{FippError, Result};
use crate::linalg;
use crate::market::{is_small, JumpMeasure};

/// Market data entering the convex function `psi = -Phi` at one point: the
/// tilt-adjusted drift `b^{M,R}`, the covariance `c^R` and the tilted
/// `R`-jump atoms `(u_k, rate_k)`.
#[derive(Clone, Debug)]
pub struct RecessionData {
    pub b: DVector<f64>,
    pub c: DMatrix<f64>,
    pub atoms: Vec<(DVector<f64>, f64)>,
}

impl RecessionData {
    pub fn n(&self) -> usize {
        self.b.len()
    }

    /// `h * F - b`, the linear coefficient of the recession function.
    fn slope(&self) -> DVector<f64> {
        let mut s = -&self.b;
        for (u, rate) in &self.atoms {
            if is_small(u) {
                s += u * *rate;
            }
        }
        s
    }

    fn kills_diffusion(&self, pi: &DVector<f64>) -> bool {
        let cp = &self.c * pi;
        let scale = self.c.amax() * pi.amax();
        cp.amax() <= 1e-12 * scale.max(1e-300)
    }

    /// Some atom with positive mass has `pi'u < 0`.
    fn charges_lambda_minus(&self, pi: &DVector<f64>) -> bool {
        self.atoms.iter().any(|(u, rate)| *rate > 0.0 && pi.dot(u) < 0.0)
    }
}

/// `pi` lies in the budget set: `1 + pi'u_k >= 0` for every atom of the
/// `R`-marginal. Boundary ties count as feasible.
pub fn budget_feasible(r_jumps: &JumpMeasure, pi: &DVector<f64>) -> bool {
    r_jumps
        .atoms()
        .iter()
        .all(|a| a.rate <= 0.0 || pi.dot(&a.u) + 1.0 >= 0.0)
}

/// Recession function `psi0+(pi)`; `+inf` encodes the infinite branch.
pub fn recession_function(data: &RecessionData, pi: &DVector<f64>) -> f64 {
    if data.charges_lambda_minus(pi) || !data.kills_diffusion(pi) {
        return f64::INFINITY;
    }
    pi.dot(&data.slope())
}

pub fn recession_cone_member(data: &RecessionData, pi: &DVector<f64>) -> bool {
    let val = recession_function(data, pi);
    val <= 1e-14 * (1.0 + pi.amax() * data.slope().amax())
}

/// Null-investment set: no diffusion exposure, no jump exposure, no drift.
pub fn null_investment_member(data: &RecessionData, pi: &DVector<f64>) -> bool {
    let tol = 1e-12 * pi.amax().max(1e-300);
    data.kills_diffusion(pi)
        && data
            .atoms
            .iter()
            .all(|(u, rate)| *rate <= 0.0 || pi.dot(u).abs() <= tol * u.amax().max(1.0))
        && pi.dot(&data.b).abs() <= tol * data.b.amax().max(1.0)
}

/// Outcome of the attainment test for `sup Phi` over `C`.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Attainment {
    /// `C` compact, or the recession cone of `psi` meets `0+C` only at 0.
    Attained,
    /// `C` polyhedral and every common recession direction is a null investment.
    AttainedPolyhedral,
    /// A common recession direction outside the null-investment space exists
    /// (an immediate arbitrage candidate).
    Inconclusive { witness: Vec<f64> },
}

/// Rows `G` with `recession cone of psi = {pi : G pi <= 0}`.
fn psi_recession_rows(data: &RecessionData) -> Vec<DVector<f64>> {
    let n = data.n();
    let mut rows = Vec::new();
    for i in 0..n {
        let r = data.c.row(i).transpose();
        if r.amax() > 0.0 {
            rows.push(r.clone());
            rows.push(-r);
        }
    }
    for (u, rate) in &data.atoms {
        if *rate > 0.0 {
            rows.push(-u);
        }
    }
    let s = data.slope();
    if s.amax() > 0.0 {
        rows.push(s);
    }
    rows
}

/// Decide whether `psi` attains its infimum over `C` from the recession
/// geometry of both.
///
/// For unbounded polyhedral `C` the common recession cone
/// `{pi : G pi <= 0, A pi <= 0}` is enumerated by double description; its
/// generators (extreme rays plus lineality both ways) are then checked
/// against the null-investment space.
pub fn attainment_check(data: &RecessionData, c: &ConstraintSet) -> Result<Attainment> {
    if c.is_compact() {
        return Ok(Attainment::Attained);
    }
    let Some((a, _)) = c.as_polyhedron() else {
        return Err(FippError::UnsupportedVariant(
            "unbounded non-polyhedral constraint set".into(),
        ));
    };
    let n = data.n();
    if c.dim() != n {
        return Err(FippError::Dimension(format!(
            "constraint has dimension {}, market has {n} assets",
            c.dim()
        )));
    }
    let mut rows = psi_recession_rows(data);
    for i in 0..a.nrows() {
        rows.push(a.row(i).transpose());
    }
    let g = if rows.is_empty() {
        DMatrix::zeros(0, n)
    } else {
        DMatrix::from_columns(&rows).transpose()
    };
    let gens = polyhedral::cone_generators(&g, n);
    if gens.is_trivial() {
        return Ok(Attainment::Attained);
    }
    for dir in gens.all_directions() {
        if !null_investment_member(data, &dir) {
            let scale = dir.amax();
            let w = dir.map(|x| {
                let v = x / scale;
                if v.abs() < 1e-14 {
                    0.0
                } else {
                    v
                }
            });
            return Ok(Attainment::Inconclusive {
                witness: linalg::to_vec(&w),
            });
        }
    }
    Ok(Attainment::AttainedPolyhedral)
}
