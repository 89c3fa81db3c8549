//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Scale-aware PSD test: eigenvalues may dip below zero by rounding only.
pub fn is_psd(m: &DMatrix<f64>) -> bool {
    let scale = m.iter().fold(1.0_f64, |a, x| a.max(x.abs()));
    min_eigenvalue(m) >= -1e-12 * scale
}

/// Orthonormal basis (columns) of the null space of `a`.
pub fn null_space(a: &DMatrix<f64>, ncols: usize) -> DMatrix<f64> {
    if a.nrows() == 0 {
        return DMatrix::identity(ncols, ncols);
    }
    // Identically zero columns give exact unit vectors; only the rest goes
    // through the eigen-decomposition, so dead assets carry no rounding noise.
    let (dead, live): (Vec<usize>, Vec<usize>) = (0..ncols).partition(|&j| a.column(j).iter().all(|&x| x == 0.0));
    let mut cols: Vec<DVector<f64>> = dead
        .iter()
        .map(|&j| {
            let mut e = DVector::zeros(ncols);
            e[j] = 1.0;
            e
        })
        .collect();
    if !live.is_empty() {
        let sub = a.select_columns(&live);
        // Eigen-decomposition of A'A is enough at these sizes and handles wide/tall alike.
        let ata = sub.transpose() * &sub;
        let scale = ata.iter().fold(0.0_f64, |s, x| s.max(x.abs()));
        let eig = SymmetricEigen::new(ata);
        let tol = 1e-12 * scale.max(1e-300);
        for i in (0..live.len()).filter(|&i| eig.eigenvalues[i].abs() <= tol) {
            let v = eig.eigenvectors.column(i);
            let mut e = DVector::zeros(ncols);
            for (k, &j) in live.iter().enumerate() {
                e[j] = v[k];
            }
            cols.push(e);
        }
    }
    if cols.is_empty() {
        DMatrix::zeros(ncols, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Numerical rank with a relative singular-value cutoff.
pub fn rank(a: &DMatrix<f64>) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let svd = a.clone().svd(false, false);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    svd.singular_values
        .iter()
        .filter(|&&s| s > 1e-10 * smax)
        .count()
}

/// Lower Cholesky factor of a PSD matrix. Semidefinite matrices are handled by
/// an LDL'-style pivot-free factorization that zeroes degenerate columns.
pub fn psd_cholesky(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = m.nrows();
    let scale = m.iter().fold(0.0_f64, |s, x| s.max(x.abs()));
    let tol = 1e-13 * scale.max(1e-300);
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < -tol * 1e3 {
            return None;
        }
        if d <= tol {
            // degenerate direction: the remaining column must vanish
            for i in (j + 1)..n {
                let mut s = m[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                if s.abs() > 1e-6 * scale.max(1e-300) {
                    return None;
                }
            }
            continue;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Some(l)
}

pub fn to_vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().cloned().collect()
}

/// Pairwise (cascade) summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if xs.len() <= BLOCK {
        let mut s = 0.0;
        for x in xs {
            s += x;
        }
        return s;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}
