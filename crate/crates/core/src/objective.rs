//! The concave power objective `Phi_p` and its constrained maximization.
//!
//! For a local market at `(t, y)`, a drift shift `Z` and jump weights `W(v)`:
//!
//! ```text
//! Phi(pi) = pi'(b^R + c^RY Z) + (p-1)/2 pi'c^R pi
//!         + sum_k rate_k [ (1+pi'u_k)^p/p - 1/p - pi'u_k 1{|u_k|<=1} ]
//!         + sum_k rate_k [ (1+pi'u_k)^p/p - 1/p ] (e^{W(v_k)} - 1)
//! ```
//!
//! The sigma-tilt is the special case `Z = sigma`, `W(v) = sigma'v`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{FippError, Result};
use crate::geometry::{self, polyhedral, Attainment, ConstraintSet, RecessionData};
use crate::linalg;
use crate::market::{is_small, FactorMarketSpec, LocalMarket};

/// Risk-aversion exponent `p` and initial log-level `D0` of `U_t(x) = e^{D_t} x^p / p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PowerParams {
    p: f64,
    d0: f64,
}

impl PowerParams {
    pub fn new(p: f64, d0: f64) -> Result<Self> {
        if !p.is_finite() || p == 0.0 || p >= 1.0 {
            return Err(FippError::InvalidParameter(format!(
                "power exponent p = {p} must lie in (-inf, 0) or (0, 1)"
            )));
        }
        if !d0.is_finite() {
            return Err(FippError::InvalidParameter(format!("D0 = {d0} must be finite")));
        }
        Ok(PowerParams { p, d0 })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn d0(&self) -> f64 {
        self.d0
    }

    /// `U_0(x) = e^{D0} x^p / p`.
    pub fn initial_utility(&self, x: f64) -> f64 {
        x.powf(self.p) / self.p * self.d0.exp()
    }
}

/// Tilt vector `sigma` of the factor martingale `M = sigma'Y^c + (e^{sigma'v} - 1) * (mu^Y - nu^Y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TiltParams {
    pub sigma: DVector<f64>,
}

impl TiltParams {
    pub fn new(sigma: DVector<f64>) -> Result<Self> {
        if sigma.iter().any(|x| !x.is_finite()) {
            return Err(FippError::InvalidParameter("tilt must be finite".into()));
        }
        Ok(TiltParams { sigma })
    }

    pub fn zero(d: usize) -> Self {
        TiltParams {
            sigma: DVector::zeros(d),
        }
    }

    /// `W(v) = sigma'v`.
    pub fn weight(&self, v: &DVector<f64>) -> f64 {
        self.sigma.dot(v)
    }
}

/// Iterates stay in `lambda C0` with `lambda = 1 - 1e-9`, i.e. `1 + pi'u >= 1e-9`.
pub const BUDGET_MARGIN: f64 = 1e-9;

#[derive(Clone, Debug)]
struct ObjAtom {
    u: DVector<f64>,
    rate: f64,
    /// `e^{W(v)} - 1`
    tilt: f64,
    small: bool,
}

/// `Phi` frozen at one point.
#[derive(Clone, Debug)]
pub struct Objective {
    p: f64,
    drift: DVector<f64>,
    c_r: DMatrix<f64>,
    atoms: Vec<ObjAtom>,
}

impl Objective {
    /// General `(Z, W)` objective. `W` is only evaluated on atoms that move `Y`;
    /// atoms with `v = 0` get weight 0.
    pub fn new(local: &LocalMarket, p: f64, z: &DVector<f64>, w: &dyn Fn(&DVector<f64>) -> f64) -> Self {
        let drift = &local.coef.b_r + &local.coef.c_ry * z;
        let atoms = local
            .atoms
            .iter()
            .filter(|a| a.u.iter().any(|&x| x != 0.0))
            .map(|a| {
                let wv = if a.v.iter().all(|&x| x == 0.0) { 0.0 } else { w(&a.v) };
                ObjAtom {
                    u: a.u.clone(),
                    rate: a.rate,
                    tilt: wv.exp_m1(),
                    small: is_small(&a.u),
                }
            })
            .collect();
        Objective {
            p,
            drift,
            c_r: local.coef.c_r.clone(),
            atoms,
        }
    }

    pub fn tilted(local: &LocalMarket, p: f64, tilt: &TiltParams) -> Self {
        Self::new(local, p, &tilt.sigma, &|v| tilt.weight(v))
    }

    pub fn n(&self) -> usize {
        self.drift.len()
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    fn check_budget(&self, pi: &DVector<f64>) -> Result<()> {
        for (k, a) in self.atoms.iter().enumerate() {
            if 1.0 + pi.dot(&a.u) < 0.0 {
                return Err(FippError::NotInBudget { atom: k });
            }
        }
        Ok(())
    }

    /// `Phi(pi)`. `Err(NotInBudget)` outside the budget set; `-inf` on its
    /// boundary when `p < 0`.
    pub fn value(&self, pi: &DVector<f64>) -> Result<f64> {
        self.check_budget(pi)?;
        let p = self.p;
        let mut v = pi.dot(&self.drift) + 0.5 * (p - 1.0) * pi.dot(&(&self.c_r * pi));
        let mut compensator = 0.0;
        let mut tilted = 0.0;
        for a in &self.atoms {
            let x = pi.dot(&a.u);
            let q = ((1.0 + x).powf(p) - 1.0) / p;
            let h = if a.small { x } else { 0.0 };
            compensator += a.rate * (q - h);
            if a.tilt != 0.0 {
                tilted += a.rate * q * a.tilt;
            }
        }
        v += compensator + tilted;
        Ok(if v.is_nan() { f64::NEG_INFINITY } else { v })
    }

    /// Analytic gradient; requires `1 + pi'u_k > 0` for every atom.
    pub fn gradient(&self, pi: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_budget(pi)?;
        let p = self.p;
        let mut g = &self.drift + (&self.c_r * pi) * (p - 1.0);
        for (k, a) in self.atoms.iter().enumerate() {
            let base = 1.0 + pi.dot(&a.u);
            if base <= 0.0 {
                return Err(FippError::BoundaryGradient { atom: k });
            }
            let m = base.powf(p - 1.0);
            let h = if a.small { 1.0 } else { 0.0 };
            g += &a.u * (a.rate * (m * (1.0 + a.tilt) - h));
        }
        Ok(g)
    }

    pub fn hessian(&self, pi: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_budget(pi)?;
        let p = self.p;
        let mut h = &self.c_r * (p - 1.0);
        for (k, a) in self.atoms.iter().enumerate() {
            let base = 1.0 + pi.dot(&a.u);
            if base <= 0.0 {
                return Err(FippError::BoundaryGradient { atom: k });
            }
            let w = a.rate * (1.0 + a.tilt) * (p - 1.0) * base.powf(p - 2.0);
            h += &a.u * a.u.transpose() * w;
        }
        Ok(h)
    }

    /// Tilted jump integrals `(I1, I2)` over `|u| <= 1` and `|u| > 1`, taken
    /// against `F^{M,R} = e^{W} F^R`, so that
    /// `Phi(pi) = pi'b^{M,R} + (p-1)/2 pi'c^R pi + I1 + I2`.
    pub fn jump_integrals(&self, pi: &DVector<f64>) -> Result<(f64, f64)> {
        self.check_budget(pi)?;
        let p = self.p;
        let (mut i1, mut i2) = (0.0, 0.0);
        for a in &self.atoms {
            let x = pi.dot(&a.u);
            let q = ((1.0 + x).powf(p) - 1.0) / p;
            let mass = a.rate * (1.0 + a.tilt);
            if a.small {
                i1 += mass * (q - x);
            } else {
                i2 += mass * q;
            }
        }
        Ok((i1, i2))
    }

    /// `b^{M,R} = b^R + c^RY Z + sum_{|u_k|<=1} rate_k u_k (e^{W_k} - 1)`.
    pub fn tilted_drift(&self) -> DVector<f64> {
        let mut b = self.drift.clone();
        for a in &self.atoms {
            if a.small {
                b += &a.u * (a.rate * a.tilt);
            }
        }
        b
    }

    pub fn recession_data(&self) -> RecessionData {
        RecessionData {
            b: self.tilted_drift(),
            c: self.c_r.clone(),
            atoms: self
                .atoms
                .iter()
                .map(|a| (a.u.clone(), a.rate * (1.0 + a.tilt)))
                .collect(),
        }
    }

    /// Orthonormal basis of the null-investment space.
    pub fn null_basis(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut rows: Vec<DVector<f64>> = (0..n).map(|i| self.c_r.row(i).transpose()).collect();
        rows.extend(self.atoms.iter().map(|a| a.u.clone()));
        rows.push(self.tilted_drift());
        let m = DMatrix::from_columns(&rows).transpose();
        linalg::null_space(&m, n)
    }

    /// Budget polyhedron `{pi : -u_k'pi <= 1 - margin}`.
    fn budget_polyhedron(&self, margin: f64) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.n();
        let m = self.atoms.len();
        let a = DMatrix::from_fn(m, n, |i, j| -self.atoms[i].u[j]);
        (a, DVector::from_element(m, 1.0 - margin))
    }

    /// Largest step along `from -> to` keeping `1 + pi'u_k >= margin`.
    fn pull_into_budget(&self, from: &DVector<f64>, to: &DVector<f64>, margin: f64) -> DVector<f64> {
        let mut t: f64 = 1.0;
        for a in &self.atoms {
            let end = 1.0 + to.dot(&a.u);
            if end < margin {
                let start = 1.0 + from.dot(&a.u);
                let denom = start - end;
                if denom > 0.0 {
                    t = t.min(((start - margin) / denom).max(0.0));
                }
            }
        }
        if t >= 1.0 {
            to.clone()
        } else {
            from + (to - from) * t
        }
    }

    /// Curvature estimate at the origin used for the initial step `1 / L`.
    fn curvature_at_origin(&self) -> f64 {
        let p = self.p;
        let mut l = (1.0 - p) * linalg::max_eigenvalue(&self.c_r).max(0.0);
        for a in &self.atoms {
            l += (1.0 - p) * a.rate * (1.0 + a.tilt) * a.u.norm_squared();
        }
        l
    }
}

/// Dykstra's alternating projections onto an intersection of convex sets.
fn dykstra(projectors: &[&dyn Fn(&DVector<f64>) -> DVector<f64>], x: &DVector<f64>) -> DVector<f64> {
    let k = projectors.len();
    let mut y = x.clone();
    let mut incr: Vec<DVector<f64>> = vec![DVector::zeros(x.len()); k];
    let scale = 1.0 + x.amax();
    for _ in 0..20_000 {
        let prev = y.clone();
        for (j, proj) in projectors.iter().enumerate() {
            let z = proj(&(&y + &incr[j]));
            incr[j] = &y + &incr[j] - &z;
            y = z;
        }
        if (&y - &prev).norm() <= 1e-15 * scale {
            break;
        }
    }
    y
}

/// Projection onto `C` intersected with the budget set (shrunk by `margin`).
fn project_feasible(obj: &Objective, c: &ConstraintSet, x: &DVector<f64>, margin: f64) -> DVector<f64> {
    let pc = c.project(x);
    if obj.atoms.iter().all(|a| 1.0 + pc.dot(&a.u) >= margin) {
        return pc;
    }
    let (a, b) = obj.budget_polyhedron(margin);
    let pc_fn = |v: &DVector<f64>| c.project(v);
    let pb_fn = |v: &DVector<f64>| polyhedral::project_polyhedron(&a, &b, v);
    dykstra(&[&pc_fn, &pb_fn], x)
}

#[derive(Clone, Copy, Debug)]
pub struct OptimizerOptions {
    pub gap_tol: f64,
    pub max_iter: usize,
    pub armijo: f64,
    pub shrink: f64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions {
            gap_tol: 1e-11,
            max_iter: 100_000,
            armijo: 1e-4,
            shrink: 0.5,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OptimResult {
    pub pi: Vec<f64>,
    pub value: f64,
    /// `|pi - Proj_{C cap C0}(pi + gamma grad)|` at the returned point.
    pub gap: f64,
    pub step: f64,
    pub iterations: usize,
    pub attainment: Attainment,
}

impl OptimResult {
    pub fn pi_vec(&self) -> DVector<f64> {
        DVector::from_vec(self.pi.clone())
    }
}

/// Maximize the objective over `C` intersected with the budget set by projected
/// gradient ascent with Armijo backtracking. Among optimizers differing by a
/// null-investment direction the minimum-norm one is returned.
pub fn maximize(obj: &Objective, c: &ConstraintSet, opts: &OptimizerOptions) -> Result<OptimResult> {
    let n = obj.n();
    if c.dim() != n {
        return Err(FippError::Dimension(format!(
            "constraint has dimension {}, objective has {n}",
            c.dim()
        )));
    }
    let attainment = if c.is_compact() {
        Attainment::Attained
    } else {
        match geometry::attainment_check(&obj.recession_data(), c)? {
            Attainment::Inconclusive { witness } => return Err(FippError::NotAttained { witness }),
            a => a,
        }
    };

    let l_hat = obj.curvature_at_origin();
    let gamma0 = if l_hat > 1e-14 { 1.0 / l_hat } else { 1.0 };
    let mut pi = DVector::zeros(n);
    let mut val = obj.value(&pi)?;
    let mut iterations = 0;
    let gap_at = |pi: &DVector<f64>, g: &DVector<f64>| -> f64 {
        (pi - project_feasible(obj, c, &(pi + g * gamma0), 0.0)).norm()
    };

    let (pi, gap) = loop {
        let g = obj.gradient(&pi)?;
        let gap = gap_at(&pi, &g);
        if gap <= opts.gap_tol * (1.0 + pi.amax()) {
            break (pi, gap);
        }
        if iterations >= opts.max_iter {
            return Err(FippError::MaxIterations {
                best: linalg::to_vec(&pi),
                value: val,
                gap,
                iterations,
            });
        }
        iterations += 1;
        let mut gamma = gamma0;
        let mut moved = false;
        // +1 while a flat step is too short, -1 once anything overshoots
        let mut grow = 0i8;
        while gamma >= gamma0 * 1e-30 && gamma <= gamma0 * 1e12 {
            let trial = c.project(&(&pi + &g * gamma));
            let trial = obj.pull_into_budget(&pi, &trial, BUDGET_MARGIN);
            let mut shorter = true;
            if let Ok(v) = obj.value(&trial) {
                let slope = g.dot(&(&trial - &pi));
                // near the optimum value differences drown in rounding; there the
                // directional derivative has to at least halve instead
                let noise = 4.0 * f64::EPSILON * (1.0 + val.abs());
                let armijo = v - val > noise && v >= val + opts.armijo * slope;
                let mut flat = false;
                if !armijo && v >= val - noise && v.is_finite() && slope > 0.0 {
                    if let Ok(gt) = obj.gradient(&trial) {
                        let s = gt.dot(&(&trial - &pi));
                        // on curved boundaries the chord picks up the normal gradient,
                        // so a shrinking optimality gap also counts as progress
                        flat = s.abs() <= 0.5 * slope || gap_at(&trial, &gt) <= 0.999 * gap;
                        // still climbing and the projection did not stop us: step further
                        shorter = !(s > 0.5 * slope && grow >= 0 && trial != pi);
                    }
                }
                if v.is_finite() && (armijo || flat) {
                    moved = trial != pi;
                    pi = trial;
                    val = v;
                    break;
                }
            }
            if shorter {
                grow = -1;
                gamma *= opts.shrink;
            } else {
                grow = 1;
                gamma /= opts.shrink;
            }
        }
        if !moved {
            // no representable ascent step left
            if gap <= 1e-8 * (1.0 + pi.amax()) {
                break (pi, gap);
            }
            return Err(FippError::MaxIterations {
                best: linalg::to_vec(&pi),
                value: val,
                gap,
                iterations,
            });
        }
    };

    let pi = min_norm_representative(obj, c, &pi);
    let value = obj.value(&pi)?;
    Ok(OptimResult {
        pi: linalg::to_vec(&pi),
        value,
        gap,
        step: gamma0,
        iterations,
        attainment,
    })
}

/// Minimum-norm point of `(pi + N) cap C cap C0`.
fn min_norm_representative(obj: &Objective, c: &ConstraintSet, pi: &DVector<f64>) -> DVector<f64> {
    let basis = obj.null_basis();
    if basis.ncols() == 0 {
        return pi.clone();
    }
    let proj_n = &basis * basis.transpose();
    let feasible = |v: &DVector<f64>| c.contains(v) && obj.atoms.iter().all(|a| 1.0 + v.dot(&a.u) >= BUDGET_MARGIN);
    let direct = pi - &proj_n * pi;
    let cand = if feasible(&direct) {
        direct
    } else {
        let (a, b) = obj.budget_polyhedron(BUDGET_MARGIN);
        let affine = |v: &DVector<f64>| pi + &proj_n * (v - pi);
        let pc = |v: &DVector<f64>| c.project(v);
        let pb = |v: &DVector<f64>| polyhedral::project_polyhedron(&a, &b, v);
        let y = dykstra(&[&affine, &pc, &pb], &DVector::zeros(pi.len()));
        // snap back onto the affine slice
        pi + &proj_n * (y - pi)
    };
    if feasible(&cand) && cand.norm() <= pi.norm() {
        cand
    } else {
        pi.clone()
    }
}

pub fn phi_value(
    spec: &FactorMarketSpec,
    params: &PowerParams,
    tilt: &TiltParams,
    t: f64,
    y: &DVector<f64>,
    pi: &DVector<f64>,
) -> Result<f64> {
    Objective::tilted(&spec.local(t, y), params.p(), tilt).value(pi)
}

pub fn phi_gradient(
    spec: &FactorMarketSpec,
    params: &PowerParams,
    tilt: &TiltParams,
    t: f64,
    y: &DVector<f64>,
    pi: &DVector<f64>,
) -> Result<DVector<f64>> {
    Objective::tilted(&spec.local(t, y), params.p(), tilt).gradient(pi)
}

pub fn jump_integrals(
    spec: &FactorMarketSpec,
    params: &PowerParams,
    tilt: &TiltParams,
    t: f64,
    y: &DVector<f64>,
    pi: &DVector<f64>,
) -> Result<(f64, f64)> {
    Objective::tilted(&spec.local(t, y), params.p(), tilt).jump_integrals(pi)
}

pub fn maximize_phi(
    spec: &FactorMarketSpec,
    params: &PowerParams,
    tilt: &TiltParams,
    t: f64,
    y: &DVector<f64>,
    c: &ConstraintSet,
) -> Result<OptimResult> {
    let obj = Objective::tilted(&spec.local(t, y), params.p(), tilt);
    maximize(&obj, c, &OptimizerOptions::default()).map_err(|e| match e {
        FippError::NotInBudget { .. } | FippError::BoundaryGradient { .. } => FippError::Numerical {
            t,
            y: linalg::to_vec(y),
            msg: e.to_string(),
        },
        other => other,
    })
}
