//! Polyhedral primitives: Euclidean projection onto `{x : A x <= b}` and
//! generator enumeration for cones `{x : G x <= 0}` by double description.

use nalgebra::{DMatrix, DVector};

use crate::linalg;

const HILDRETH_SWEEPS: usize = 200_000;

/// Project `x` onto `{y : A y <= b}` (assumed nonempty).
///
/// Hildreth's dual coordinate ascent identifies the active set; the result is
/// then polished by solving the equality-constrained projection on that set
/// and accepting it when the KKT conditions hold.
pub fn project_polyhedron(a: &DMatrix<f64>, b: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
    let m = a.nrows();
    if m == 0 {
        return x.clone();
    }
    let viol = |y: &DVector<f64>| -> f64 {
        (a * y - b).iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    };
    let scale = 1.0 + x.amax() + b.amax();
    if viol(x) <= 0.0 {
        return x.clone();
    }

    let row_sq: Vec<f64> = (0..m).map(|i| a.row(i).norm_squared()).collect();
    let mut lambda = DVector::<f64>::zeros(m);
    let mut y = x.clone();
    for _ in 0..HILDRETH_SWEEPS {
        let mut max_change = 0.0_f64;
        for i in 0..m {
            if row_sq[i] == 0.0 {
                continue;
            }
            let r = a.row(i).dot(&y.transpose()) - b[i];
            let new_l = (lambda[i] + r / row_sq[i]).max(0.0);
            let delta = new_l - lambda[i];
            if delta != 0.0 {
                y -= a.row(i).transpose() * delta;
                lambda[i] = new_l;
                max_change = max_change.max(delta.abs() * row_sq[i].sqrt());
            }
        }
        if max_change <= 1e-15 * scale {
            break;
        }
    }

    if let Some(polished) = polish_active_set(a, b, x, &lambda, &y) {
        return polished;
    }
    y
}

fn polish_active_set(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
    y: &DVector<f64>,
) -> Option<DVector<f64>> {
    let scale = 1.0 + x.amax() + b.amax();
    let active: Vec<usize> = (0..a.nrows()).filter(|&i| lambda[i] > 1e-14 * scale).collect();
    if active.is_empty() {
        return None;
    }
    let a_s = DMatrix::from_rows(&active.iter().map(|&i| a.row(i).into_owned()).collect::<Vec<_>>());
    let b_s = DVector::from_iterator(active.len(), active.iter().map(|&i| b[i]));
    let gram = &a_s * a_s.transpose();
    let rhs = &a_s * x - &b_s;
    let svd = gram.svd(true, true);
    let lam_s = svd.solve(&rhs, 1e-12).ok()?;
    if lam_s.iter().any(|&l| l < -1e-10 * scale) {
        return None;
    }
    let cand = x - a_s.transpose() * lam_s;
    let worst = (a * &cand - b).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if worst > 1e-12 * scale {
        return None;
    }
    // keep whichever is closer to x; they agree up to Hildreth's tolerance
    if (&cand - x).norm() <= (y - x).norm() + 1e-9 * scale {
        Some(cand)
    } else {
        None
    }
}

/// Generators of a polyhedral cone: `cone = span(lineality) + cone(rays)`.
#[derive(Clone, Debug, Default)]
pub struct ConeGenerators {
    pub lineality: Vec<DVector<f64>>,
    pub rays: Vec<DVector<f64>>,
}

impl ConeGenerators {
    /// True when the cone is `{0}`.
    pub fn is_trivial(&self) -> bool {
        self.lineality.is_empty() && self.rays.is_empty()
    }

    /// Every direction needed to generate the cone, with lineality taken both ways.
    pub fn all_directions(&self) -> Vec<DVector<f64>> {
        let mut out: Vec<DVector<f64>> = self.rays.clone();
        for l in &self.lineality {
            out.push(l.clone());
            out.push(-l);
        }
        out
    }
}

const ZERO_TOL: f64 = 1e-10;

fn zero_set(g: &DMatrix<f64>, rows: &[usize], r: &DVector<f64>) -> Vec<usize> {
    rows.iter()
        .cloned()
        .filter(|&i| {
            let gi = g.row(i);
            (gi.dot(&r.transpose())).abs() <= ZERO_TOL * gi.norm().max(1e-300)
        })
        .collect()
}

fn is_subset(small: &[usize], big: &[usize]) -> bool {
    small.iter().all(|i| big.binary_search(i).is_ok())
}

fn intersect(a: &[usize], b: &[usize]) -> Vec<usize> {
    a.iter().cloned().filter(|i| b.binary_search(i).is_ok()).collect()
}

/// Enumerate generators of `{x in R^n : G x <= 0}` with the double-description
/// method (Fukuda–Prodon) using the combinatorial adjacency test.
pub fn cone_generators(g: &DMatrix<f64>, n: usize) -> ConeGenerators {
    let g = if g.nrows() == 0 {
        DMatrix::zeros(0, n)
    } else {
        g.clone()
    };
    let lin = linalg::null_space(&g, n);
    let lineality: Vec<DVector<f64>> = (0..lin.ncols()).map(|j| lin.column(j).into_owned()).collect();
    if lineality.len() == n {
        return ConeGenerators {
            lineality,
            rays: Vec::new(),
        };
    }

    // Restrict to the orthogonal complement of the lineality space: pointed cone.
    let mut rows: Vec<DVector<f64>> = (0..g.nrows()).map(|i| g.row(i).transpose()).collect();
    for l in &lineality {
        rows.push(l.clone());
        rows.push(-l);
    }
    let g = DMatrix::from_columns(&rows).transpose();

    // initial simplicial cone from n independent rows
    let mut basis: Vec<usize> = Vec::new();
    for i in 0..g.nrows() {
        let mut trial = basis.clone();
        trial.push(i);
        let sub = DMatrix::from_rows(&trial.iter().map(|&k| g.row(k).into_owned()).collect::<Vec<_>>());
        if linalg::rank(&sub) == trial.len() {
            basis = trial;
        }
        if basis.len() == n {
            break;
        }
    }
    debug_assert_eq!(basis.len(), n);
    let b_mat = DMatrix::from_rows(&basis.iter().map(|&k| g.row(k).into_owned()).collect::<Vec<_>>());
    let Some(b_inv) = b_mat.try_inverse() else {
        return ConeGenerators {
            lineality,
            rays: Vec::new(),
        };
    };
    let mut processed: Vec<usize> = basis.clone();
    processed.sort_unstable();
    let mut rays: Vec<DVector<f64>> = (0..n)
        .map(|j| {
            let r = -b_inv.column(j).into_owned();
            let nr = r.norm();
            r / nr
        })
        .collect();

    for i in 0..g.nrows() {
        if basis.contains(&i) {
            continue;
        }
        let gi = g.row(i).transpose();
        let gnorm = gi.norm();
        if gnorm == 0.0 {
            processed.push(i);
            processed.sort_unstable();
            continue;
        }
        let vals: Vec<f64> = rays.iter().map(|r| gi.dot(r)).collect();
        let tol = ZERO_TOL * gnorm;
        let pos: Vec<usize> = (0..rays.len()).filter(|&k| vals[k] > tol).collect();
        let neg: Vec<usize> = (0..rays.len()).filter(|&k| vals[k] < -tol).collect();
        if pos.is_empty() {
            processed.push(i);
            processed.sort_unstable();
            continue;
        }
        let zsets: Vec<Vec<usize>> = rays.iter().map(|r| zero_set(&g, &processed, r)).collect();
        let mut next: Vec<DVector<f64>> = (0..rays.len())
            .filter(|k| !pos.contains(k))
            .map(|k| rays[k].clone())
            .collect();
        for &p in &pos {
            for &q in &neg {
                let common = intersect(&zsets[p], &zsets[q]);
                if common.len() + 2 < n {
                    continue;
                }
                let adjacent = (0..rays.len())
                    .filter(|&k| k != p && k != q)
                    .all(|k| !is_subset(&common, &zsets[k]));
                if !adjacent {
                    continue;
                }
                let r = &rays[q] * vals[p] - &rays[p] * vals[q];
                let nr = r.norm();
                if nr > 0.0 {
                    next.push(r / nr);
                }
            }
        }
        rays = next;
        processed.push(i);
        processed.sort_unstable();
    }

    // drop numerical duplicates
    let mut uniq: Vec<DVector<f64>> = Vec::new();
    for r in rays {
        if !uniq.iter().any(|u| (u - &r).norm() < 1e-9) {
            uniq.push(r);
        }
    }
    ConeGenerators {
        lineality,
        rays: uniq,
    }
}

/// `max c'x` over `{x : A x <= b}` (nonempty). `+inf` when unbounded above.
///
/// Vertex enumeration over `n`-subsets of rows; intended for the small
/// dimensions used here.
pub fn lp_max(a: &DMatrix<f64>, b: &DVector<f64>, c: &DVector<f64>) -> f64 {
    let n = c.len();
    let cone = cone_generators(a, n);
    if cone.all_directions().iter().any(|r| c.dot(r) > 1e-12 * c.norm()) {
        return f64::INFINITY;
    }
    // pin the lineality directions so the remaining polyhedron is pointed
    let mut rows: Vec<DVector<f64>> = (0..a.nrows()).map(|i| a.row(i).transpose()).collect();
    let mut rhs: Vec<f64> = b.iter().cloned().collect();
    for l in &cone.lineality {
        rows.push(l.clone());
        rhs.push(0.0);
        rows.push(-l);
        rhs.push(0.0);
    }
    let m = rows.len();
    let full = DMatrix::from_columns(&rows).transpose();
    let rhs = DVector::from_vec(rhs);
    let mut best = f64::NEG_INFINITY;
    let mut idx: Vec<usize> = (0..n).collect();
    if m < n {
        return best;
    }
    loop {
        let sub = DMatrix::from_rows(&idx.iter().map(|&k| full.row(k).into_owned()).collect::<Vec<_>>());
        if let Some(inv) = sub.clone().try_inverse() {
            let sb = DVector::from_iterator(n, idx.iter().map(|&k| rhs[k]));
            let x = inv * sb;
            let worst = (&full * &x - &rhs).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if worst <= 1e-9 * (1.0 + rhs.amax()) {
                best = best.max(c.dot(&x));
            }
        }
        // next combination
        let mut i = n;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if idx[i] < m - n + i {
                idx[i] += 1;
                for j in (i + 1)..n {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}
