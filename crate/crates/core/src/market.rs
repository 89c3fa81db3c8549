//! Jump-diffusion factor market `(R, Y)` with continuous clock `dA = dt`.
//!
//! Coefficients are functions of `(t, y)`; jumps are a finite set of joint
//! atoms `(u, v)` with intensities per unit time. All drifts are characteristic
//! drifts with respect to the truncation `h(x) = x 1{|x| <= 1}`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{FippError, Result};
use crate::geometry::ConstraintSet;
use crate::linalg;
use crate::objective::PowerParams;

/// Radius of the truncation function `h(x) = x 1{|x| <= r}`.
pub const TRUNCATION_RADIUS: f64 = 1.0;

pub type VectorFn = Arc<dyn Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(f64, &DVector<f64>) -> f64 + Send + Sync>;

/// `h(x) = x 1{|x| <= 1}` indicator part.
#[inline]
pub fn is_small(x: &DVector<f64>) -> bool {
    x.norm() <= TRUNCATION_RADIUS
}

#[derive(Clone, Debug, PartialEq)]
pub struct JumpAtom {
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub rate: f64,
}

impl JumpAtom {
    pub fn new(u: DVector<f64>, v: DVector<f64>, rate: f64) -> Self {
        JumpAtom { u, v, rate }
    }
}

/// Finite-activity atomic jump measure `F(du, dv) = sum_k rate_k delta_(u_k, v_k)`.
///
/// The optional intensity hook multiplies every rate by a state-dependent
/// factor `s(t, y) >= 0`; by default rates are constant.
#[derive(Clone, Default)]
pub struct JumpMeasure {
    atoms: Vec<JumpAtom>,
    intensity: Option<ScalarFn>,
}

impl fmt::Debug for JumpMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("JumpMeasure")
            .field("atoms", &self.atoms)
            .field("state_dependent", &self.intensity.is_some())
            .finish()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Marginal {
    R,
    Y,
}

impl JumpMeasure {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn new(atoms: Vec<JumpAtom>) -> Result<Self> {
        for (k, a) in atoms.iter().enumerate() {
            if !(a.rate.is_finite() && a.rate > 0.0) {
                return Err(FippError::InvalidParameter(format!(
                    "jump atom {k}: rate must be positive and finite, got {}",
                    a.rate
                )));
            }
            if a.u.iter().chain(a.v.iter()).any(|x| !x.is_finite()) {
                return Err(FippError::InvalidParameter(format!(
                    "jump atom {k}: non-finite mark"
                )));
            }
            if a.u.iter().all(|&x| x == 0.0) && a.v.iter().all(|&x| x == 0.0) {
                return Err(FippError::InvalidParameter(format!(
                    "jump atom {k} sits at the origin"
                )));
            }
        }
        Ok(JumpMeasure {
            atoms,
            intensity: None,
        })
    }

    /// Attach a state-dependent intensity multiplier.
    pub fn with_intensity(mut self, f: ScalarFn) -> Self {
        self.intensity = Some(f);
        self
    }

    pub fn atoms(&self) -> &[JumpAtom] {
        &self.atoms
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn is_state_dependent(&self) -> bool {
        self.intensity.is_some()
    }

    pub fn intensity_scale(&self, t: f64, y: &DVector<f64>) -> f64 {
        self.intensity.as_ref().map_or(1.0, |f| f(t, y))
    }

    /// Total intensity of the constant part, `sum_k rate_k`.
    pub fn total_rate(&self) -> f64 {
        self.atoms.iter().map(|a| a.rate).sum()
    }

    /// Atoms with rates evaluated at `(t, y)`.
    pub fn atoms_at(&self, t: f64, y: &DVector<f64>) -> Vec<JumpAtom> {
        let s = self.intensity_scale(t, y);
        self.atoms
            .iter()
            .filter(|a| a.rate * s > 0.0)
            .map(|a| JumpAtom {
                u: a.u.clone(),
                v: a.v.clone(),
                rate: a.rate * s,
            })
            .collect()
    }

    /// Project the joint measure onto the `R` or `Y` coordinates.
    ///
    /// Atoms whose projection is zero are dropped; coincident projections are
    /// merged with their rates added. Order of first appearance is kept.
    pub fn marginal(&self, which: Marginal) -> JumpMeasure {
        let mut out: Vec<JumpAtom> = Vec::new();
        for a in &self.atoms {
            let mark = match which {
                Marginal::R => &a.u,
                Marginal::Y => &a.v,
            };
            if mark.iter().all(|&x| x == 0.0) {
                continue;
            }
            if let Some(existing) = out.iter_mut().find(|b| {
                let bm = match which {
                    Marginal::R => &b.u,
                    Marginal::Y => &b.v,
                };
                bm == mark
            }) {
                existing.rate += a.rate;
                continue;
            }
            let (u, v) = match which {
                Marginal::R => (a.u.clone(), DVector::zeros(0)),
                Marginal::Y => (DVector::zeros(0), a.v.clone()),
            };
            out.push(JumpAtom { u, v, rate: a.rate });
        }
        JumpMeasure {
            atoms: out,
            intensity: self.intensity.clone(),
        }
    }
}

/// Coefficients `(b^R, c^R, c^RY, b^Y, c^Y)` at one `(t, y)`.
#[derive(Clone, Debug)]
pub struct Coefficients {
    pub b_r: DVector<f64>,
    pub c_r: DMatrix<f64>,
    pub c_ry: DMatrix<f64>,
    pub b_y: DVector<f64>,
    pub c_y: DMatrix<f64>,
}

impl Coefficients {
    /// Block covariance `[[c^R, c^RY], [c^YR, c^Y]]`.
    pub fn joint_cov(&self) -> DMatrix<f64> {
        let n = self.b_r.len();
        let d = self.b_y.len();
        let mut m = DMatrix::zeros(n + d, n + d);
        m.view_mut((0, 0), (n, n)).copy_from(&self.c_r);
        m.view_mut((0, n), (n, d)).copy_from(&self.c_ry);
        m.view_mut((n, 0), (d, n)).copy_from(&self.c_ry.transpose());
        m.view_mut((n, n), (d, d)).copy_from(&self.c_y);
        m
    }
}

/// Market data frozen at one `(t, y)`: coefficients plus effective jump atoms.
#[derive(Clone, Debug)]
pub struct LocalMarket {
    pub t: f64,
    pub y: DVector<f64>,
    pub coef: Coefficients,
    pub atoms: Vec<JumpAtom>,
}

impl LocalMarket {
    pub fn n(&self) -> usize {
        self.coef.b_r.len()
    }

    pub fn d(&self) -> usize {
        self.coef.b_y.len()
    }

    /// Drift of `Y` in its special (compensated, untruncated) decomposition:
    /// `b^Y + sum_k rate_k v_k 1{|v_k| > 1}`.
    pub fn special_drift_y(&self) -> DVector<f64> {
        let mut b = self.coef.b_y.clone();
        for a in &self.atoms {
            if !is_small(&a.v) {
                b += &a.v * a.rate;
            }
        }
        b
    }

    /// Drift of the finite-variation part once all jumps are taken raw:
    /// `b^R - sum_k rate_k u_k 1{|u_k| <= 1}`.
    pub fn raw_drift_r(&self) -> DVector<f64> {
        let mut b = self.coef.b_r.clone();
        for a in &self.atoms {
            if is_small(&a.u) {
                b -= &a.u * a.rate;
            }
        }
        b
    }

    /// Same as [`raw_drift_r`](Self::raw_drift_r) for the factor.
    pub fn raw_drift_y(&self) -> DVector<f64> {
        let mut b = self.coef.b_y.clone();
        for a in &self.atoms {
            if is_small(&a.v) {
                b -= &a.v * a.rate;
            }
        }
        b
    }
}

/// The factor market `(R, Y)`.
#[derive(Clone)]
pub struct FactorMarketSpec {
    n: usize,
    d: usize,
    y0: DVector<f64>,
    drift_r: VectorFn,
    cov_r: MatrixFn,
    cov_ry: MatrixFn,
    drift_y: VectorFn,
    cov_y: MatrixFn,
    jumps: JumpMeasure,
    constant: bool,
}

impl fmt::Debug for FactorMarketSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FactorMarketSpec")
            .field("n", &self.n)
            .field("d", &self.d)
            .field("y0", &self.y0.as_slice())
            .field("constant", &self.constant)
            .field("jumps", &self.jumps)
            .finish()
    }
}

impl FactorMarketSpec {
    pub fn builder(n: usize, d: usize) -> MarketBuilder {
        MarketBuilder::new(n, d)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn y0(&self) -> &DVector<f64> {
        &self.y0
    }

    pub fn jumps(&self) -> &JumpMeasure {
        &self.jumps
    }

    /// True when every coefficient and the jump intensity are constant in `(t, y)`.
    pub fn has_constant_coefficients(&self) -> bool {
        self.constant && !self.jumps.is_state_dependent()
    }

    pub fn coefficients(&self, t: f64, y: &DVector<f64>) -> Coefficients {
        Coefficients {
            b_r: (self.drift_r)(t, y),
            c_r: (self.cov_r)(t, y),
            c_ry: (self.cov_ry)(t, y),
            b_y: (self.drift_y)(t, y),
            c_y: (self.cov_y)(t, y),
        }
    }

    pub fn local(&self, t: f64, y: &DVector<f64>) -> LocalMarket {
        LocalMarket {
            t,
            y: y.clone(),
            coef: self.coefficients(t, y),
            atoms: self.jumps.atoms_at(t, y),
        }
    }

    /// Return a copy with a different initial factor value.
    pub fn with_y0(&self, y0: DVector<f64>) -> Result<Self> {
        if y0.len() != self.d {
            return Err(FippError::Dimension(format!(
                "y0 has length {}, expected {}",
                y0.len(),
                self.d
            )));
        }
        let mut s = self.clone();
        s.y0 = y0;
        Ok(s)
    }

    fn check_dims(&self, t: f64, y: &DVector<f64>) -> Result<()> {
        let c = self.coefficients(t, y);
        let (n, d) = (self.n, self.d);
        let checks = [
            ("drift_r", c.b_r.len() == n),
            ("cov_r", c.c_r.shape() == (n, n)),
            ("cov_ry", c.c_ry.shape() == (n, d)),
            ("drift_y", c.b_y.len() == d),
            ("cov_y", c.c_y.shape() == (d, d)),
        ];
        for (name, ok) in checks {
            if !ok {
                return Err(FippError::Dimension(format!(
                    "{name} has the wrong shape for n={n}, d={d}"
                )));
            }
        }
        for (k, a) in self.jumps.atoms().iter().enumerate() {
            if a.u.len() != n || a.v.len() != d {
                return Err(FippError::Dimension(format!(
                    "jump atom {k}: u has length {}, v has length {} (expected {n}, {d})",
                    a.u.len(),
                    a.v.len()
                )));
            }
        }
        Ok(())
    }
}

/// Incremental construction of a [`FactorMarketSpec`]; unset coefficients are zero.
pub struct MarketBuilder {
    n: usize,
    d: usize,
    y0: DVector<f64>,
    drift_r: Option<VectorFn>,
    cov_r: Option<MatrixFn>,
    cov_ry: Option<MatrixFn>,
    drift_y: Option<VectorFn>,
    cov_y: Option<MatrixFn>,
    jumps: JumpMeasure,
    constant: bool,
}

fn const_vec(v: DVector<f64>) -> VectorFn {
    Arc::new(move |_, _| v.clone())
}

fn const_mat(m: DMatrix<f64>) -> MatrixFn {
    Arc::new(move |_, _| m.clone())
}

impl MarketBuilder {
    fn new(n: usize, d: usize) -> Self {
        MarketBuilder {
            n,
            d,
            y0: DVector::zeros(d),
            drift_r: None,
            cov_r: None,
            cov_ry: None,
            drift_y: None,
            cov_y: None,
            jumps: JumpMeasure::empty(),
            constant: true,
        }
    }

    pub fn y0(mut self, y0: DVector<f64>) -> Self {
        self.y0 = y0;
        self
    }

    pub fn drift_r_const(mut self, b: DVector<f64>) -> Self {
        self.drift_r = Some(const_vec(b));
        self
    }

    pub fn cov_r_const(mut self, c: DMatrix<f64>) -> Self {
        self.cov_r = Some(const_mat(c));
        self
    }

    pub fn cov_ry_const(mut self, c: DMatrix<f64>) -> Self {
        self.cov_ry = Some(const_mat(c));
        self
    }

    pub fn drift_y_const(mut self, b: DVector<f64>) -> Self {
        self.drift_y = Some(const_vec(b));
        self
    }

    pub fn cov_y_const(mut self, c: DMatrix<f64>) -> Self {
        self.cov_y = Some(const_mat(c));
        self
    }

    pub fn drift_r(mut self, f: VectorFn) -> Self {
        self.drift_r = Some(f);
        self.constant = false;
        self
    }

    pub fn cov_r(mut self, f: MatrixFn) -> Self {
        self.cov_r = Some(f);
        self.constant = false;
        self
    }

    pub fn cov_ry(mut self, f: MatrixFn) -> Self {
        self.cov_ry = Some(f);
        self.constant = false;
        self
    }

    pub fn drift_y(mut self, f: VectorFn) -> Self {
        self.drift_y = Some(f);
        self.constant = false;
        self
    }

    pub fn cov_y(mut self, f: MatrixFn) -> Self {
        self.cov_y = Some(f);
        self.constant = false;
        self
    }

    pub fn jumps(mut self, jumps: JumpMeasure) -> Self {
        self.jumps = jumps;
        self
    }

    pub fn build(self) -> Result<FactorMarketSpec> {
        let (n, d) = (self.n, self.d);
        if n == 0 {
            return Err(FippError::Dimension("market needs at least one asset".into()));
        }
        if self.y0.len() != d {
            return Err(FippError::Dimension(format!(
                "y0 has length {}, expected {d}",
                self.y0.len()
            )));
        }
        let spec = FactorMarketSpec {
            n,
            d,
            y0: self.y0,
            drift_r: self.drift_r.unwrap_or_else(|| const_vec(DVector::zeros(n))),
            cov_r: self.cov_r.unwrap_or_else(|| const_mat(DMatrix::zeros(n, n))),
            cov_ry: self.cov_ry.unwrap_or_else(|| const_mat(DMatrix::zeros(n, d))),
            drift_y: self.drift_y.unwrap_or_else(|| const_vec(DVector::zeros(d))),
            cov_y: self.cov_y.unwrap_or_else(|| const_mat(DMatrix::zeros(d, d))),
            jumps: self.jumps,
            constant: self.constant,
        };
        let y0 = spec.y0.clone();
        spec.check_dims(0.0, &y0)?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeReport {
    pub t: f64,
    pub y: Vec<f64>,
    pub psd: bool,
    pub min_eigenvalue: f64,
}

/// Atom `k` can drive wealth to zero or below for some admissible portfolio.
#[derive(Clone, Debug, Serialize)]
pub struct BudgetWarning {
    pub atom: usize,
    pub u: Vec<f64>,
    /// `min over C of 1 + pi'u` (negative infinity when C is unbounded in that direction).
    pub min_factor: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub pass: bool,
    pub points: Vec<ProbeReport>,
    /// `sum_{|u_k| > 1} rate_k |u_k|^p` for `p` in (0, 1); `None` for `p < 0`.
    pub af_integral: Option<f64>,
    pub budget_warnings: Vec<BudgetWarning>,
}

/// Check covariance PSD-ness at probe points, the large-jump moment condition
/// and report atoms that can hit the budget boundary.
pub fn validate_spec(
    spec: &FactorMarketSpec,
    params: &PowerParams,
    probe_points: &[(f64, DVector<f64>)],
    constraint: Option<&ConstraintSet>,
) -> Result<ValidationReport> {
    if probe_points.is_empty() {
        return Err(FippError::InvalidParameter("no probe points".into()));
    }
    let mut points = Vec::with_capacity(probe_points.len());
    for (t, y) in probe_points {
        spec.check_dims(*t, y)?;
        let c = spec.coefficients(*t, y);
        let blocks = [("cov_r", &c.c_r), ("cov_y", &c.c_y)];
        for (name, m) in blocks {
            if !linalg::is_psd(m) {
                return Err(FippError::NotPsd {
                    what: name.to_string(),
                    t: *t,
                    y: linalg::to_vec(y),
                    min_eig: linalg::min_eigenvalue(m),
                });
            }
        }
        let joint = c.joint_cov();
        let min_eig = linalg::min_eigenvalue(&joint);
        if !linalg::is_psd(&joint) {
            return Err(FippError::NotPsd {
                what: "joint covariance".into(),
                t: *t,
                y: linalg::to_vec(y),
                min_eig,
            });
        }
        points.push(ProbeReport {
            t: *t,
            y: linalg::to_vec(y),
            psd: true,
            min_eigenvalue: min_eig,
        });
    }

    let r_marginal = spec.jumps().marginal(Marginal::R);
    let af_integral = if params.p() > 0.0 {
        Some(
            r_marginal
                .atoms()
                .iter()
                .filter(|a| !is_small(&a.u))
                .fold(0.0, |acc, a| acc + a.rate * a.u.norm().powf(params.p())),
        )
    } else {
        None
    };

    let mut budget_warnings = Vec::new();
    for (k, a) in r_marginal.atoms().iter().enumerate() {
        // min over C of pi'u = -support(-u)
        let min_factor = match constraint {
            Some(c) => 1.0 - c.support(&(-&a.u)),
            None => f64::NEG_INFINITY,
        };
        if min_factor <= 0.0 {
            budget_warnings.push(BudgetWarning {
                atom: k,
                u: linalg::to_vec(&a.u),
                min_factor,
            });
        }
    }

    let pass = af_integral.is_none_or(|v: f64| v.is_finite());
    Ok(ValidationReport {
        pass,
        points,
        af_integral,
        budget_warnings,
    })
}
