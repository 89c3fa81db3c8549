//! Explicit construction of power forward performance processes.
//!
//! The tilted family has log-level `Pi_t = D0 + int_0^t Psi(s, Y_s) ds + sigma'(Y_t - Y0)`
//! with
//!
//! ```text
//! Psi(t, y) = -p phi(t, y) - 1/2 sigma'c^Y sigma - sigma'b^Y_sp - sum_k rate_k (e^{sigma'v_k} - 1 - sigma'v_k)
//! ```
//!
//! where `phi` is the maximal tilted objective and `b^Y_sp` the special drift of `Y`.
//! The performance field is `U_t(x) = x^p / p * e^{Pi_t}`.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{FippError, Result};
use crate::geometry::{polyhedral, ConstraintKind, ConstraintSet};
use crate::linalg;
use crate::market::{FactorMarketSpec, LocalMarket};
use crate::objective::{maximize, Objective, OptimResult, OptimizerOptions, PowerParams, TiltParams};
use crate::simulate::{PathBundle, SimPath, TimeGrid};

fn wrap_point_error(t: f64, y: &DVector<f64>, e: FippError) -> FippError {
    match e {
        FippError::NotAttained { .. } | FippError::Dimension(_) | FippError::Numerical { .. } => e,
        other => FippError::Numerical {
            t,
            y: linalg::to_vec(y),
            msg: other.to_string(),
        },
    }
}

/// `sum_k rate_k (e^{W_k} - 1 - W_k)` over atoms that move `Y`.
fn jump_exponential_compensator(local: &LocalMarket, w: &dyn Fn(&DVector<f64>) -> f64) -> f64 {
    local
        .atoms
        .iter()
        .filter(|a| a.v.iter().any(|&x| x != 0.0))
        .map(|a| {
            let wv = w(&a.v);
            a.rate * (wv.exp_m1() - wv)
        })
        .sum()
}

fn optimize_local(local: &LocalMarket, obj: &Objective, c: &ConstraintSet) -> Result<OptimResult> {
    maximize(obj, c, &OptimizerOptions::default()).map_err(|e| wrap_point_error(local.t, &local.y, e))
}

/// `Psi^sigma` given the already maximized objective value `phi`.
fn psi_from_phi(local: &LocalMarket, p: f64, tilt: &TiltParams, phi: f64) -> f64 {
    let s = &tilt.sigma;
    -p * phi
        - 0.5 * s.dot(&(&local.coef.c_y * s))
        - s.dot(&local.special_drift_y())
        - jump_exponential_compensator(local, &|v| tilt.weight(v))
}

/// Driver `f(Z, W)` given the maximized `(Z, W)` objective value `phi`.
fn driver_from_phi(local: &LocalMarket, p: f64, z: &DVector<f64>, w: &dyn Fn(&DVector<f64>) -> f64, phi: f64) -> f64 {
    0.5 * z.dot(&(&local.coef.c_y * z)) + p * phi + jump_exponential_compensator(local, w)
}

pub fn psi_sigma(
    spec: &FactorMarketSpec,
    params: &PowerParams,
    tilt: &TiltParams,
    t: f64,
    y: &DVector<f64>,
    c: &ConstraintSet,
) -> Result<f64> {
    let local = spec.local(t, y);
    let obj = Objective::tilted(&local, params.p(), tilt);
    let phi = optimize_local(&local, &obj, c)?.value;
    Ok(psi_from_phi(&local, params.p(), tilt, phi))
}

/// BSDE driver `1/2 Z'c^Y Z + p sup Phi(.; Z, W) + sum rate (e^W - 1 - W)`.
pub fn driver_f(
    spec: &FactorMarketSpec,
    params: &PowerParams,
    t: f64,
    y: &DVector<f64>,
    z: &DVector<f64>,
    w: &dyn Fn(&DVector<f64>) -> f64,
    c: &ConstraintSet,
) -> Result<f64> {
    if z.len() != spec.d() {
        return Err(FippError::Dimension(format!("Z has length {}, factor has {}", z.len(), spec.d())));
    }
    let local = spec.local(t, y);
    let obj = Objective::new(&local, params.p(), z, w);
    let phi = optimize_local(&local, &obj, c)?.value;
    Ok(driver_from_phi(&local, params.p(), z, w, phi))
}

fn require_finite_variation_factor(local: &LocalMarket) -> Result<()> {
    let diffusive = local.coef.c_y.iter().any(|&x| x != 0.0);
    let jumping = local.atoms.iter().any(|a| a.v.iter().any(|&x| x != 0.0));
    if diffusive || jumping {
        let why = if diffusive { "factor covariance is nonzero" } else { "factor jumps present" };
        return Err(FippError::NotFiniteVariationFactor(why.into()));
    }
    Ok(())
}

/// `f(y) = p sup Phi` of the untilted objective; `sign(p) f >= 0`.
pub fn time_monotone_f(
    spec: &FactorMarketSpec,
    params: &PowerParams,
    t: f64,
    y: &DVector<f64>,
    c: &ConstraintSet,
) -> Result<f64> {
    let local = spec.local(t, y);
    require_finite_variation_factor(&local)?;
    let obj = Objective::tilted(&local, params.p(), &TiltParams::zero(spec.d()));
    Ok(params.p() * optimize_local(&local, &obj, c)?.value)
}

/// `G(x, tau) = x^p / p * exp(p tau / (2 (p - 1)))`, the separable solution of
/// `G_tau = G_x^2 / (2 G_xx)` with `G(x, 0) = x^p / p`.
pub fn g_function(params: &PowerParams, x: f64, tau: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(FippError::InvalidParameter(format!("wealth x = {x} must be positive")));
    }
    let p = params.p();
    Ok(x.powf(p) / p * (p * tau / (2.0 * (p - 1.0))).exp())
}

/// `G_tau - G_x^2 / (2 G_xx)` by central differences.
pub fn g_pde_residual(params: &PowerParams, x: f64, tau: f64) -> Result<f64> {
    let hx = 1e-4 * x;
    let ht = 1e-4 * (1.0 + tau.abs());
    let g = |x, t| g_function(params, x, t);
    let gt = (g(x, tau + ht)? - g(x, tau - ht)?) / (2.0 * ht);
    let gx = (g(x + hx, tau)? - g(x - hx, tau)?) / (2.0 * hx);
    let gxx = (g(x + hx, tau)? - 2.0 * g(x, tau)? + g(x - hx, tau)?) / (hx * hx);
    Ok(gt - gx * gx / (2.0 * gxx))
}

/// Trapezoid integral of `values` on a uniform grid, starting from `start`.
pub fn cumulative_trapezoid(values: &[f64], dt: f64, start: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = start;
    out.push(acc);
    for w in values.windows(2) {
        acc += 0.5 * (w[0] + w[1]) * dt;
        out.push(acc);
    }
    out
}

/// `V_t = V0 - p int_0^t sup Phi ds` by the trapezoid rule.
pub fn finite_variation_drift(params: &PowerParams, phi_path: &[f64], dt: f64, v0: f64) -> Vec<f64> {
    let scaled: Vec<f64> = phi_path.iter().map(|v| -params.p() * v).collect();
    cumulative_trapezoid(&scaled, dt, v0)
}

/// Time-monotone process along one factor path.
#[derive(Clone, Debug, Serialize)]
pub struct TimeMonotonePath {
    pub times: Vec<f64>,
    pub f: Vec<f64>,
    /// `Pi^0_t = D0 - int_0^t f(Y_s) ds`
    pub pi0: Vec<f64>,
    pub wealth: Vec<f64>,
    /// `U_t(x)` for each time (outer) and wealth level (inner)
    pub u: Vec<Vec<f64>>,
}

pub fn construct_time_monotone(
    spec: &FactorMarketSpec,
    params: &PowerParams,
    c: &ConstraintSet,
    grid: &TimeGrid,
    y_path: &[DVector<f64>],
    wealth: &[f64],
) -> Result<TimeMonotonePath> {
    if y_path.len() != grid.steps + 1 {
        return Err(FippError::GridMismatch(format!(
            "factor path has {} points, grid has {}",
            y_path.len(),
            grid.steps + 1
        )));
    }
    let cache = spec.has_constant_coefficients().then(OnceLock::new);
    let f = y_path
        .iter()
        .enumerate()
        .map(|(k, y)| match &cache {
            Some(cell) => cell.get_or_init(|| time_monotone_f(spec, params, 0.0, y, c)).clone(),
            None => time_monotone_f(spec, params, grid.time(k), y, c),
        })
        .collect::<Result<Vec<f64>>>()?;
    let neg: Vec<f64> = f.iter().map(|v| -v).collect();
    let pi0 = cumulative_trapezoid(&neg, grid.dt, params.d0());
    let p = params.p();
    let u = pi0
        .iter()
        .map(|&level| {
            wealth
                .iter()
                .map(|&x| g_function(params, x, -(2.0 * (1.0 - p) / p) * level))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TimeMonotonePath {
        times: grid.times(),
        f,
        pi0,
        wealth: wealth.to_vec(),
        u,
    })
}

/// Everything the solution needs at one `(t, y)`.
#[derive(Clone, Debug)]
pub struct PointEval {
    pub phi: f64,
    pub strategy: DVector<f64>,
    /// `g = Psi^sigma`
    pub psi: f64,
    /// driver at `Z = sigma`, `W = sigma'v`
    pub driver: f64,
    /// `sum_k rate_k sigma'v_k`, the compensator of the jump martingale term
    pub jump_drift: f64,
}

/// Explicit solution `(Pi, g, pi*)` of the forward equation for a tilt `sigma`.
#[derive(Clone, Debug)]
pub struct FippSolution {
    spec: FactorMarketSpec,
    params: PowerParams,
    tilt: TiltParams,
    constraint: ConstraintSet,
    y0: DVector<f64>,
    cache: Option<OnceLock<std::result::Result<PointEval, FippError>>>,
}

impl FippSolution {
    pub fn new(spec: &FactorMarketSpec, params: PowerParams, tilt: TiltParams, constraint: ConstraintSet) -> Result<Self> {
        if tilt.sigma.len() != spec.d() {
            return Err(FippError::Dimension(format!(
                "tilt has length {}, factor has {}",
                tilt.sigma.len(),
                spec.d()
            )));
        }
        if constraint.dim() != spec.n() {
            return Err(FippError::Dimension(format!(
                "constraint has dimension {}, market has {} assets",
                constraint.dim(),
                spec.n()
            )));
        }
        Ok(FippSolution {
            y0: spec.y0().clone(),
            cache: spec.has_constant_coefficients().then(OnceLock::new),
            spec: spec.clone(),
            params,
            tilt,
            constraint,
        })
    }

    /// Time-monotone solution: zero tilt on a finite-variation factor.
    pub fn time_monotone(spec: &FactorMarketSpec, params: PowerParams, constraint: ConstraintSet) -> Result<Self> {
        require_finite_variation_factor(&spec.local(0.0, spec.y0()))?;
        Self::new(spec, params, TiltParams::zero(spec.d()), constraint)
    }

    pub fn spec(&self) -> &FactorMarketSpec {
        &self.spec
    }

    pub fn params(&self) -> &PowerParams {
        &self.params
    }

    pub fn tilt(&self) -> &TiltParams {
        &self.tilt
    }

    pub fn constraint(&self) -> &ConstraintSet {
        &self.constraint
    }

    pub fn y0(&self) -> &DVector<f64> {
        &self.y0
    }

    /// `Pi(t, y, z) = D0 + sigma'(y - Y0) + z`
    pub fn pi_value(&self, _t: f64, y: &DVector<f64>, z: f64) -> f64 {
        self.params.d0() + self.tilt.sigma.dot(&(y - &self.y0)) + z
    }

    fn compute(&self, t: f64, y: &DVector<f64>) -> Result<PointEval> {
        let local = self.spec.local(t, y);
        let p = self.params.p();
        let obj = Objective::tilted(&local, p, &self.tilt);
        let opt = optimize_local(&local, &obj, &self.constraint)?;
        let w = |v: &DVector<f64>| self.tilt.weight(v);
        let jump_drift = local.atoms.iter().map(|a| a.rate * self.tilt.weight(&a.v)).sum();
        Ok(PointEval {
            phi: opt.value,
            psi: psi_from_phi(&local, p, &self.tilt, opt.value),
            driver: driver_from_phi(&local, p, &self.tilt.sigma, &w, opt.value),
            strategy: opt.pi_vec(),
            jump_drift,
        })
    }

    pub fn eval(&self, t: f64, y: &DVector<f64>) -> Result<PointEval> {
        match &self.cache {
            Some(cell) => cell.get_or_init(|| self.compute(t, y)).clone(),
            None => self.compute(t, y),
        }
    }

    pub fn g(&self, t: f64, y: &DVector<f64>) -> Result<f64> {
        Ok(self.eval(t, y)?.psi)
    }

    pub fn strategy(&self, t: f64, y: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.eval(t, y)?.strategy)
    }

    fn check_bundle(&self, grid_n: usize, grid_d: usize) -> Result<()> {
        if grid_n != self.spec.n() || grid_d != self.spec.d() {
            return Err(FippError::GridMismatch(format!(
                "paths have (n, d) = ({grid_n}, {grid_d}), market has ({}, {})",
                self.spec.n(),
                self.spec.d()
            )));
        }
        Ok(())
    }

    /// `(Pi_{t_k}, Psi(t_k, Y_k))` along one path.
    pub fn pi_path(&self, path: &SimPath, grid: &TimeGrid) -> Result<(Vec<f64>, Vec<PointEval>)> {
        let d = self.spec.d();
        let evals = (0..=grid.steps)
            .map(|k| self.eval(grid.time(k), &path.y_at(k, d)))
            .collect::<Result<Vec<_>>>()?;
        let psi: Vec<f64> = evals.iter().map(|e| e.psi).collect();
        let integral = cumulative_trapezoid(&psi, grid.dt, 0.0);
        let pi = (0..=grid.steps)
            .map(|k| self.pi_value(grid.time(k), &path.y_at(k, d), integral[k]))
            .collect();
        Ok((pi, evals))
    }
}

/// `Pi^sigma` along every path of the bundle, plus the solution object.
pub fn construct_tilted_fipp(
    spec: &FactorMarketSpec,
    params: &PowerParams,
    tilt: &TiltParams,
    c: &ConstraintSet,
    bundle: &PathBundle,
) -> Result<(Vec<Vec<f64>>, FippSolution)> {
    let sol = FippSolution::new(spec, *params, tilt.clone(), c.clone())?;
    sol.check_bundle(bundle.n, bundle.d)?;
    let paths = bundle
        .paths
        .par_iter()
        .map(|p| sol.pi_path(p, &bundle.grid).map(|(pi, _)| pi))
        .collect::<Result<Vec<_>>>()?;
    Ok((paths, sol))
}

#[derive(Clone, Debug, Serialize)]
pub struct ResidualStats {
    pub rms: f64,
    pub max: f64,
    /// per-path RMS over steps
    pub per_path: Vec<f64>,
}

/// Per-step residual of the BSDE
/// `r_k = Pi_{k+1} - Pi_k + f(t_k, Y_k) dt - sigma'dY^c_k - sum_jumps sigma'v + dt sum_k rate_k sigma'v_k`.
pub fn bsde_residual(sol: &FippSolution, bundle: &PathBundle) -> Result<ResidualStats> {
    sol.check_bundle(bundle.n, bundle.d)?;
    let grid = bundle.grid;
    let d = bundle.d;
    let sigma = &sol.tilt.sigma;
    let per_step = bundle
        .paths
        .par_iter()
        .map(|path| {
            let (pi, evals) = sol.pi_path(path, &grid)?;
            let r: Vec<f64> = (0..grid.steps)
                .map(|k| {
                    let jumps: f64 = path.marks_in(k).iter().map(|m| sigma.dot(&path.atom(m).v)).sum();
                    pi[k + 1] - pi[k] + evals[k].driver * grid.dt - sigma.dot(&path.dy_c_at(k, d)) - jumps
                        + grid.dt * evals[k].jump_drift
                })
                .collect();
            Ok(r)
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let mut max: f64 = 0.0;
    let mut squares = Vec::new();
    let per_path = per_step
        .iter()
        .map(|r| {
            let sq: Vec<f64> = r.iter().map(|x| x * x).collect();
            max = r.iter().fold(max, |m, x| m.max(x.abs()));
            let ms = linalg::pairwise_sum(&sq) / sq.len().max(1) as f64;
            squares.extend(sq);
            ms.sqrt()
        })
        .collect();
    let rms = (linalg::pairwise_sum(&squares) / squares.len().max(1) as f64).sqrt();
    Ok(ResidualStats { rms, max, per_path })
}

/// `(sigma^R, sigma^Y)` with `c^Y = sigma^Y sigma^Y'`, `c^RY = sigma^R sigma^Y'`,
/// `c^R = sigma^R sigma^R'`; requires `n = d` and invertible factors.
pub fn bs_factors(local: &LocalMarket) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (n, d) = (local.n(), local.d());
    if n != d {
        return Err(FippError::NotBsFactor(format!("needs as many factors as assets, got n = {n}, d = {d}")));
    }
    let sigma_y = local.coef.c_y.clone().cholesky().map(|ch| ch.l()).ok_or_else(|| {
        FippError::NotBsFactor("factor covariance is not positive definite".into())
    })?;
    let inv_t = sigma_y
        .transpose()
        .try_inverse()
        .ok_or_else(|| FippError::NotBsFactor("factor volatility is singular".into()))?;
    let sigma_r = &local.coef.c_ry * inv_t;
    let scale = local.coef.c_r.amax().max(1e-300);
    if (&sigma_r * sigma_r.transpose() - &local.coef.c_r).amax() > 1e-10 * scale {
        return Err(FippError::NotBsFactor(
            "asset covariance is not spanned by the factor noise".into(),
        ));
    }
    if linalg::rank(&sigma_r) < n {
        return Err(FippError::NotBsFactor("asset volatility is rank deficient".into()));
    }
    Ok((sigma_r, sigma_y))
}

/// Factor tilt `sigma = (sigma^Y)^{-T} sigma_tilde` matching a market-price tilt.
pub fn tilt_from_sigma_tilde(spec: &FactorMarketSpec, t: f64, y: &DVector<f64>, sigma_tilde: &DVector<f64>) -> Result<TiltParams> {
    let (_, sigma_y) = bs_factors(&spec.local(t, y))?;
    let inv_t = sigma_y
        .transpose()
        .try_inverse()
        .ok_or_else(|| FippError::NotBsFactor("factor volatility is singular".into()))?;
    TiltParams::new(inv_t * sigma_tilde)
}

/// Closest point to `x` in `{w : |M w - c| <= r}`.
fn project_ellipsoid(m: &DMatrix<f64>, center: &DVector<f64>, r: f64, x: &DVector<f64>) -> DVector<f64> {
    if (m * x - center).norm() <= r {
        return x.clone();
    }
    let mtm = m.transpose() * m;
    let mtc = m.transpose() * center;
    let n = x.len();
    let w_of = |mu: f64| -> DVector<f64> {
        let a = DMatrix::<f64>::identity(n, n) + &mtm * mu;
        a.lu().solve(&(x + &mtc * mu)).unwrap_or_else(|| x.clone())
    };
    let excess = |mu: f64| (m * w_of(mu) - center).norm() - r;
    let (mut lo, mut hi) = (0.0, 1.0);
    while excess(hi) > 0.0 && hi < 1e300 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if excess(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-16 * hi {
            break;
        }
    }
    w_of(hi)
}

/// Optimal strategy from the projection formula
/// `sigma^R'pi* = Proj_{sigma^R' C}((lambda + sigma_tilde) / (1 - p))`, `lambda = (sigma^R)^{-1} b^R`.
pub fn optimal_strategy_projection(
    spec: &FactorMarketSpec,
    params: &PowerParams,
    sigma_tilde: &DVector<f64>,
    t: f64,
    y: &DVector<f64>,
    c: &ConstraintSet,
) -> Result<DVector<f64>> {
    let local = spec.local(t, y);
    if !local.atoms.is_empty() {
        return Err(FippError::UnsupportedVariant("projection formula needs a market without jumps".into()));
    }
    let (sigma_r, _) = bs_factors(&local)?;
    if sigma_tilde.len() != local.n() {
        return Err(FippError::Dimension(format!(
            "sigma_tilde has length {}, expected {}",
            sigma_tilde.len(),
            local.n()
        )));
    }
    let inv = sigma_r
        .clone()
        .try_inverse()
        .ok_or_else(|| FippError::NotBsFactor("asset volatility is singular".into()))?;
    let lambda = &inv * &local.coef.b_r;
    let target = (lambda + sigma_tilde) / (1.0 - params.p());
    // pi = M w with w = sigma^R' pi
    let m = inv.transpose();
    let w = match c.kind() {
        ConstraintKind::SingletonOrigin => DVector::zeros(local.n()),
        ConstraintKind::Ball { center, radius } => project_ellipsoid(&m, center, *radius, &target),
        _ => {
            let (a, b) = c
                .as_polyhedron()
                .ok_or_else(|| FippError::UnsupportedVariant("constraint has no polyhedral form".into()))?;
            polyhedral::project_polyhedron(&(a * &m), &b, &target)
        }
    };
    Ok(m * w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{JumpAtom, JumpMeasure};
    use approx::assert_abs_diff_eq;

    fn dv(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    fn m1(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    fn bs() -> FactorMarketSpec {
        FactorMarketSpec::builder(1, 1)
            .drift_r_const(dv(&[0.05]))
            .cov_r_const(m1(0.04))
            .cov_ry_const(m1(0.06))
            .cov_y_const(m1(0.09))
            .build()
            .unwrap()
    }

    fn wide() -> ConstraintSet {
        ConstraintSet::new_box(dv(&[-10.0]), dv(&[10.0])).unwrap()
    }

    fn half() -> PowerParams {
        PowerParams::new(0.5, 0.0).unwrap()
    }

    #[test]
    fn psi_zero_market() {
        let spec = FactorMarketSpec::builder(1, 1).build().unwrap();
        let c = ConstraintSet::singleton_origin(1);
        let v = psi_sigma(&spec, &half(), &TiltParams::zero(1), 0.0, &dv(&[0.0]), &c).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn psi_bs_example() {
        let tilt = TiltParams::new(dv(&[1.0 / 3.0])).unwrap();
        let v = psi_sigma(&bs(), &half(), &tilt, 0.0, &dv(&[0.0]), &wide()).unwrap();
        assert_abs_diff_eq!(v, -0.06625, epsilon = 1e-12);
    }

    #[test]
    fn psi_single_factor_jump() {
        let spec = FactorMarketSpec::builder(1, 1)
            .jumps(JumpMeasure::new(vec![JumpAtom::new(dv(&[0.0]), dv(&[1.0]), 1.0)]).unwrap())
            .build()
            .unwrap();
        let c = ConstraintSet::singleton_origin(1);
        let v = psi_sigma(&spec, &half(), &TiltParams::new(dv(&[1.0])).unwrap(), 0.0, &dv(&[0.0]), &c).unwrap();
        assert_abs_diff_eq!(v, -(std::f64::consts::E - 2.0), epsilon = 1e-15);
    }

    #[test]
    fn driver_examples() {
        let c0 = ConstraintSet::singleton_origin(1);
        let zero = |_: &DVector<f64>| 0.0;
        let spec = FactorMarketSpec::builder(1, 1).cov_y_const(m1(0.5)).build().unwrap();
        let y = dv(&[0.0]);
        assert_eq!(driver_f(&spec, &half(), 0.0, &y, &dv(&[0.0]), &zero, &c0).unwrap(), 0.0);
        assert_abs_diff_eq!(driver_f(&spec, &half(), 0.0, &y, &dv(&[2.0]), &zero, &c0).unwrap(), 1.0, epsilon = 1e-15);
        let f = driver_f(&bs(), &half(), 0.0, &y, &dv(&[1.0 / 3.0]), &zero, &wide()).unwrap();
        assert_abs_diff_eq!(f, 0.06625, epsilon = 1e-12);
    }

    #[test]
    fn driver_psi_identity_with_large_factor_jumps() {
        let spec = FactorMarketSpec::builder(1, 1)
            .drift_r_const(dv(&[0.04]))
            .cov_r_const(m1(0.05))
            .cov_ry_const(m1(0.01))
            .drift_y_const(dv(&[0.2]))
            .cov_y_const(m1(0.3))
            .jumps(
                JumpMeasure::new(vec![
                    JumpAtom::new(dv(&[0.2]), dv(&[1.7]), 0.4),
                    JumpAtom::new(dv(&[-0.1]), dv(&[0.3]), 1.1),
                ])
                .unwrap(),
            )
            .build()
            .unwrap();
        let tilt = TiltParams::new(dv(&[0.4])).unwrap();
        let y = dv(&[0.0]);
        let local = spec.local(0.0, &y);
        let psi = psi_sigma(&spec, &half(), &tilt, 0.0, &y, &wide()).unwrap();
        let f = driver_f(&spec, &half(), 0.0, &y, &tilt.sigma, &|v| tilt.weight(v), &wide()).unwrap();
        assert_abs_diff_eq!(psi + f + tilt.sigma.dot(&local.special_drift_y()), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn time_monotone_f_examples() {
        let spec = FactorMarketSpec::builder(1, 1)
            .drift_r(std::sync::Arc::new(|_, y: &DVector<f64>| y.clone()))
            .cov_r_const(m1(0.04))
            .build()
            .unwrap();
        let y = dv(&[0.05]);
        let c0 = ConstraintSet::singleton_origin(1);
        assert_eq!(time_monotone_f(&spec, &half(), 0.0, &y, &c0).unwrap(), 0.0);
        assert_abs_diff_eq!(time_monotone_f(&spec, &half(), 0.0, &y, &wide()).unwrap(), 0.03125, epsilon = 1e-12);
        let neg = PowerParams::new(-1.0, 0.0).unwrap();
        assert_abs_diff_eq!(time_monotone_f(&spec, &neg, 0.0, &y, &wide()).unwrap(), -0.015625, epsilon = 1e-12);
        let err = time_monotone_f(&bs(), &half(), 0.0, &y, &wide()).unwrap_err();
        assert!(err.to_string().contains("time-monotone mode requires finite-variation factor"));
    }

    #[test]
    fn g_function_examples() {
        let p = half();
        assert_abs_diff_eq!(g_function(&p, 1.0, 0.0).unwrap(), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g_function(&p, 2.0, 0.0).unwrap(), 2.0 * 2f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(g_function(&p, 1.0, 1.0).unwrap(), 1.2130613, epsilon = 1e-7);
        assert!(g_pde_residual(&p, 1.0, 1.0).unwrap().abs() < 1e-6);
        assert!(g_function(&p, 0.0, 1.0).is_err());
    }

    #[test]
    fn time_monotone_constant_market() {
        let spec = FactorMarketSpec::builder(1, 1)
            .drift_r(std::sync::Arc::new(|_, y: &DVector<f64>| y.clone()))
            .cov_r_const(m1(0.04))
            .y0(dv(&[0.05]))
            .build()
            .unwrap();
        let grid = TimeGrid::new(1.0, 0.1).unwrap();
        let path = vec![dv(&[0.05]); 11];
        let out = construct_time_monotone(&spec, &half(), &wide(), &grid, &path, &[1.0]).unwrap();
        assert_abs_diff_eq!(*out.pi0.last().unwrap(), -0.03125, epsilon = 1e-12);
        assert_abs_diff_eq!(out.u[10][0], 2.0 * (-0.03125f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(out.u[10][0], 1.9384665, epsilon = 1e-7);
    }

    #[test]
    fn projection_formula_examples() {
        let st = dv(&[0.1]);
        let y = dv(&[0.0]);
        let pi = optimal_strategy_projection(&bs(), &half(), &st, 0.0, &y, &wide()).unwrap();
        assert_abs_diff_eq!(pi[0], 3.5, epsilon = 1e-12);
        let unit = ConstraintSet::new_box(dv(&[0.0]), dv(&[1.0])).unwrap();
        let pi = optimal_strategy_projection(&bs(), &half(), &st, 0.0, &y, &unit).unwrap();
        assert_abs_diff_eq!(pi[0], 1.0, epsilon = 1e-12);
        let pi = optimal_strategy_projection(&bs(), &half(), &dv(&[-0.25]), 0.0, &y, &unit).unwrap();
        assert_abs_diff_eq!(pi[0], 0.0, epsilon = 1e-12);
        let tilt = tilt_from_sigma_tilde(&bs(), 0.0, &y, &st).unwrap();
        assert_abs_diff_eq!(tilt.sigma[0], 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn fv_drift_examples() {
        let p = half();
        assert_eq!(finite_variation_drift(&p, &[0.0; 5], 0.25, 1.0), vec![1.0; 5]);
        let v = finite_variation_drift(&p, &[0.0625; 11], 0.1, 0.0);
        assert_abs_diff_eq!(v[10], -0.03125, epsilon = 1e-15);
    }
}
