use nalgebra::{DMatrix, DVector};

use super::polyhedral::{self, ConeGenerators};
use crate::error::{FippError, Result};

/// One inequality `a' pi <= b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Halfspace {
    pub a: DVector<f64>,
    pub b: f64,
}

impl Halfspace {
    pub fn new(a: DVector<f64>, b: f64) -> Self {
        Halfspace { a, b }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ConstraintKind {
    Box { lo: DVector<f64>, hi: DVector<f64> },
    Ball { center: DVector<f64>, radius: f64 },
    Halfspaces(Vec<Halfspace>),
    SingletonOrigin,
    /// `{pi >= 0, sum(pi) <= scale}`
    Simplex { scale: f64 },
}

/// Convex portfolio constraint containing the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintSet {
    dim: usize,
    kind: ConstraintKind,
    bounded: bool,
}

const MEMBER_TOL: f64 = 1e-12;

impl ConstraintSet {
    pub fn new_box(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(FippError::Dimension("box bounds differ in length".into()));
        }
        if lo.iter().chain(hi.iter()).any(|x| !x.is_finite()) {
            return Err(FippError::InvalidParameter("box bounds must be finite".into()));
        }
        if lo.iter().zip(hi.iter()).any(|(l, h)| *l > 0.0 || *h < 0.0) {
            return Err(FippError::OriginNotInSet(format!(
                "box [{:?}, {:?}]",
                lo.as_slice(),
                hi.as_slice()
            )));
        }
        Ok(ConstraintSet {
            dim: lo.len(),
            kind: ConstraintKind::Box { lo, hi },
            bounded: true,
        })
    }

    pub fn ball(center: DVector<f64>, radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius >= 0.0) {
            return Err(FippError::InvalidParameter(format!("ball radius {radius}")));
        }
        if center.norm() > radius {
            return Err(FippError::OriginNotInSet(format!(
                "ball centered at {:?} with radius {radius}",
                center.as_slice()
            )));
        }
        Ok(ConstraintSet {
            dim: center.len(),
            kind: ConstraintKind::Ball { center, radius },
            bounded: true,
        })
    }

    /// Polyhedron `{pi : a_j' pi <= b_j}`. Unbounded polyhedra are rejected
    /// unless `allow_unbounded` is set.
    pub fn halfspaces(dim: usize, rows: Vec<Halfspace>, allow_unbounded: bool) -> Result<Self> {
        for (j, h) in rows.iter().enumerate() {
            if h.a.len() != dim {
                return Err(FippError::Dimension(format!(
                    "halfspace {j} has normal of length {}, expected {dim}",
                    h.a.len()
                )));
            }
            if h.b < 0.0 {
                return Err(FippError::OriginNotInSet(format!("halfspace {j} has b = {} < 0", h.b)));
            }
        }
        let mut set = ConstraintSet {
            dim,
            kind: ConstraintKind::Halfspaces(rows),
            bounded: false,
        };
        set.bounded = set.recession_generators().is_trivial();
        if !set.bounded && !allow_unbounded {
            return Err(FippError::Unbounded);
        }
        Ok(set)
    }

    pub fn singleton_origin(dim: usize) -> Self {
        ConstraintSet {
            dim,
            kind: ConstraintKind::SingletonOrigin,
            bounded: true,
        }
    }

    pub fn simplex(dim: usize, scale: f64) -> Result<Self> {
        if !(scale.is_finite() && scale >= 0.0) {
            return Err(FippError::InvalidParameter(format!("simplex scale {scale}")));
        }
        Ok(ConstraintSet {
            dim,
            kind: ConstraintKind::Simplex { scale },
            bounded: true,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &ConstraintKind {
        &self.kind
    }

    pub fn is_compact(&self) -> bool {
        self.bounded
    }

    /// Inequality description `A pi <= b` for the polyhedral variants.
    pub fn as_polyhedron(&self) -> Option<(DMatrix<f64>, DVector<f64>)> {
        let n = self.dim;
        match &self.kind {
            ConstraintKind::Box { lo, hi } => {
                let mut a = DMatrix::zeros(2 * n, n);
                let mut b = DVector::zeros(2 * n);
                for i in 0..n {
                    a[(2 * i, i)] = 1.0;
                    b[2 * i] = hi[i];
                    a[(2 * i + 1, i)] = -1.0;
                    b[2 * i + 1] = -lo[i];
                }
                Some((a, b))
            }
            ConstraintKind::Halfspaces(rows) => {
                let a = DMatrix::from_fn(rows.len(), n, |i, j| rows[i].a[j]);
                let b = DVector::from_iterator(rows.len(), rows.iter().map(|h| h.b));
                Some((a, b))
            }
            ConstraintKind::SingletonOrigin => {
                let mut a = DMatrix::zeros(2 * n, n);
                for i in 0..n {
                    a[(2 * i, i)] = 1.0;
                    a[(2 * i + 1, i)] = -1.0;
                }
                Some((a, DVector::zeros(2 * n)))
            }
            ConstraintKind::Simplex { scale } => {
                let mut a = DMatrix::zeros(n + 1, n);
                let mut b = DVector::zeros(n + 1);
                for i in 0..n {
                    a[(i, i)] = -1.0;
                    a[(n, i)] = 1.0;
                }
                b[n] = *scale;
                Some((a, b))
            }
            ConstraintKind::Ball { .. } => None,
        }
    }

    /// Generators of the recession cone `0+C`.
    pub fn recession_generators(&self) -> ConeGenerators {
        match self.as_polyhedron() {
            Some((a, _)) if !self.bounded_by_kind() => polyhedral::cone_generators(&a, self.dim),
            _ => ConeGenerators::default(),
        }
    }

    fn bounded_by_kind(&self) -> bool {
        !matches!(self.kind, ConstraintKind::Halfspaces(_))
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        let scale = 1.0 + x.amax();
        match &self.kind {
            ConstraintKind::Ball { center, radius } => (x - center).norm() <= radius + MEMBER_TOL * scale,
            _ => {
                let (a, b) = self.as_polyhedron().expect("polyhedral variant");
                (a * x - b).iter().all(|&r| r <= MEMBER_TOL * scale)
            }
        }
    }

    /// Euclidean projection onto the set.
    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.kind {
            ConstraintKind::Box { lo, hi } => {
                DVector::from_iterator(self.dim, (0..self.dim).map(|i| x[i].clamp(lo[i], hi[i])))
            }
            ConstraintKind::Ball { center, radius } => {
                let diff = x - center;
                let dist = diff.norm();
                if dist <= *radius {
                    x.clone()
                } else {
                    center + diff * (*radius / dist)
                }
            }
            ConstraintKind::SingletonOrigin => DVector::zeros(self.dim),
            ConstraintKind::Simplex { scale } => project_capped_simplex(x, *scale),
            ConstraintKind::Halfspaces(_) => {
                let (a, b) = self.as_polyhedron().expect("polyhedral variant");
                polyhedral::project_polyhedron(&a, &b, x)
            }
        }
    }

    /// Support function `sup_{pi in C} dir' pi` (may be `+inf` for unbounded sets).
    pub fn support(&self, dir: &DVector<f64>) -> f64 {
        match &self.kind {
            ConstraintKind::Box { lo, hi } => (0..self.dim)
                .map(|i| if dir[i] >= 0.0 { dir[i] * hi[i] } else { dir[i] * lo[i] })
                .sum(),
            ConstraintKind::Ball { center, radius } => center.dot(dir) + radius * dir.norm(),
            ConstraintKind::SingletonOrigin => 0.0,
            ConstraintKind::Simplex { scale } => scale * dir.iter().cloned().fold(0.0, f64::max),
            ConstraintKind::Halfspaces(_) => {
                let (a, b) = self.as_polyhedron().expect("polyhedral variant");
                polyhedral::lp_max(&a, &b, dir)
            }
        }
    }
}

/// Projection onto `{x >= 0, sum(x) <= s}`.
fn project_capped_simplex(x: &DVector<f64>, s: f64) -> DVector<f64> {
    let clipped = x.map(|v| v.max(0.0));
    if clipped.sum() <= s {
        return clipped;
    }
    // projection onto {x >= 0, sum x = s}: sort-based threshold
    let mut sorted: Vec<f64> = x.iter().cloned().collect();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &v) in sorted.iter().enumerate() {
        cum += v;
        let t = (cum - s) / (k as f64 + 1.0);
        if v - t > 0.0 {
            theta = t;
        }
    }
    x.map(|v| (v - theta).max(0.0))
}
