//! Monte Carlo check of the supermartingale / martingale property of
//! `U_t(X_t) = X_t^p / p * e^{Pi_t}` along simulated wealth paths.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{FippError, Result};
use crate::fipp::FippSolution;
use crate::geometry::ConstraintSet;
use crate::linalg;
use crate::market::FactorMarketSpec;
use crate::objective::{maximize, Objective, OptimizerOptions, PowerParams, TiltParams};
use crate::simulate::{simulate_one, stream_for, SimPath, StreamNoise, TimeGrid};

/// Portfolio rule used along a path.
pub enum Strategy<'a> {
    Constant(DVector<f64>),
    Optimal(&'a FippSolution),
    Feedback(&'a (dyn Fn(f64, &DVector<f64>) -> Result<DVector<f64>> + Sync)),
}

impl Strategy<'_> {
    fn at(&self, t: f64, y: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            Strategy::Constant(pi) => Ok(pi.clone()),
            Strategy::Optimal(sol) => sol.strategy(t, y),
            Strategy::Feedback(f) => f(t, y),
        }
    }
}

/// Wealth `x0 E(pi . R)` on the path grid: log-Euler on the continuous part,
/// each jump multiplying wealth by `1 + pi'u`. A zero factor absorbs at 0.
pub fn wealth_path(
    spec: &FactorMarketSpec,
    path: &SimPath,
    path_index: usize,
    grid: &TimeGrid,
    strategy: &Strategy<'_>,
    x0: f64,
) -> Result<Vec<f64>> {
    if !(x0 > 0.0) {
        return Err(FippError::InvalidParameter(format!("initial wealth x0 = {x0} must be positive")));
    }
    let (n, d) = (spec.n(), spec.d());
    let cached = spec.has_constant_coefficients().then(|| spec.local(0.0, spec.y0()));
    let mut x = x0;
    let mut out = Vec::with_capacity(grid.steps + 1);
    out.push(x);
    for k in 0..grid.steps {
        if x == 0.0 {
            out.push(0.0);
            continue;
        }
        let t = grid.time(k);
        let y = path.y_at(k, d);
        let fresh;
        let local = match &cached {
            Some(l) => l,
            None => {
                fresh = spec.local(t, &y);
                &fresh
            }
        };
        let pi = strategy.at(t, &y)?;
        let cont = &local.raw_drift_r() * grid.dt + path.dr_c_at(k, n);
        let log_inc = pi.dot(&cont) - 0.5 * pi.dot(&(&local.coef.c_r * &pi)) * grid.dt;
        x *= log_inc.exp();
        for m in path.marks_in(k) {
            let factor = 1.0 + pi.dot(&path.atom(m).u);
            if factor < 0.0 {
                return Err(FippError::AdmissibilityViolation {
                    path: path_index,
                    step: k,
                    factor,
                });
            }
            x *= factor;
        }
        out.push(x);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Verdict {
    /// `|z| < 3`
    MartingaleConsistent,
    /// `z <= -3`: a strict supermartingale is detected
    SupermartingaleConsistent,
    /// `z >= 3`
    NotSupermartingale,
    /// the sample mean is not finite (absorbed wealth with `p < 0`)
    NonFinite,
}

#[derive(Clone, Debug, Serialize)]
pub struct TestReport {
    pub mean: f64,
    pub se: f64,
    pub z: f64,
    pub verdict: Verdict,
    pub u0: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub antithetic: bool,
    pub absorbed: usize,
    /// excess kurtosis of the per-path values
    pub kurtosis: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct McOptions {
    pub x0: f64,
    pub horizon: f64,
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub antithetic: bool,
    pub threshold: f64,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions {
            x0: 1.0,
            horizon: 1.0,
            dt: 0.02,
            n_paths: 100_000,
            seed: 0,
            antithetic: false,
            threshold: 3.0,
        }
    }
}

fn excess_kurtosis(xs: &[f64], mean: f64) -> f64 {
    let n = xs.len() as f64;
    let m2 = linalg::pairwise_sum(&xs.iter().map(|x| (x - mean).powi(2)).collect::<Vec<_>>()) / n;
    let m4 = linalg::pairwise_sum(&xs.iter().map(|x| (x - mean).powi(4)).collect::<Vec<_>>()) / n;
    if m2 > 0.0 {
        m4 / (m2 * m2) - 3.0
    } else {
        0.0
    }
}

/// Compare the sample mean of `U_T(X_T)` with `U_0(x0)`.
pub fn martingale_test(
    spec: &FactorMarketSpec,
    sol: &FippSolution,
    strategy: &Strategy<'_>,
    opts: &McOptions,
) -> Result<TestReport> {
    let grid = TimeGrid::new(opts.horizon, opts.dt)?;
    if opts.n_paths < 2 {
        return Err(FippError::InvalidParameter("need at least two paths".into()));
    }
    if opts.antithetic && opts.n_paths % 2 == 1 {
        return Err(FippError::InvalidParameter("antithetic sampling needs an even path count".into()));
    }
    let params = sol.params();
    let p = params.p();
    let values = (0..opts.n_paths)
        .into_par_iter()
        .map(|i| {
            let (stream, sign) = stream_for(i, opts.antithetic);
            let path = simulate_one(spec, &grid, &mut StreamNoise::new(opts.seed, stream, sign))?;
            let x = wealth_path(spec, &path, i, &grid, strategy, opts.x0)?;
            let (pi, _) = sol.pi_path(&path, &grid)?;
            let xt = *x.last().unwrap_or(&opts.x0);
            let level = *pi.last().unwrap_or(&params.d0());
            let u = if xt == 0.0 {
                if p > 0.0 {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            } else {
                xt.powf(p) / p * level.exp()
            };
            Ok((u, xt == 0.0))
        })
        .collect::<Result<Vec<(f64, bool)>>>()?;
    let absorbed = values.iter().filter(|v| v.1).count();
    let s: Vec<f64> = values.into_iter().map(|v| v.0).collect();
    let u0 = params.initial_utility(opts.x0);

    let samples: Vec<f64> = if opts.antithetic {
        s.chunks(2).map(|c| 0.5 * (c[0] + c[1])).collect()
    } else {
        s.clone()
    };
    // shift by the first sample so that identical samples give exactly zero spread
    let m = samples.len() as f64;
    let shift = samples[0];
    let dev: Vec<f64> = samples.iter().map(|x| x - shift).collect();
    let dev_mean = linalg::pairwise_sum(&dev) / m;
    let mean = if shift.is_finite() { shift + dev_mean } else { linalg::pairwise_sum(&samples) / m };
    let var = linalg::pairwise_sum(&dev.iter().map(|x| (x - dev_mean).powi(2)).collect::<Vec<_>>()) / (m - 1.0);
    let se = (var / m).sqrt();
    let diff = mean - u0;
    let z = if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    };
    let verdict = if !mean.is_finite() || z.is_nan() {
        Verdict::NonFinite
    } else if z.abs() < opts.threshold {
        Verdict::MartingaleConsistent
    } else if z < 0.0 {
        Verdict::SupermartingaleConsistent
    } else {
        Verdict::NotSupermartingale
    };
    let kurtosis = if mean.is_finite() {
        let raw_mean = linalg::pairwise_sum(&s) / s.len() as f64;
        excess_kurtosis(&s, raw_mean)
    } else {
        f64::NAN
    };
    Ok(TestReport {
        mean,
        se,
        z,
        verdict,
        u0,
        n_paths: opts.n_paths,
        seed: opts.seed,
        antithetic: opts.antithetic,
        absorbed,
        kurtosis,
    })
}

/// Objective shortfall `Phi(pi*) - Phi(pi* + eps dir)` for each `eps` and the
/// least-squares slope of `log gap` against `log eps`.
pub fn drift_gap_exponent(
    spec: &FactorMarketSpec,
    params: &PowerParams,
    tilt: &TiltParams,
    t: f64,
    y: &DVector<f64>,
    c: &ConstraintSet,
    direction: &DVector<f64>,
    eps: &[f64],
) -> Result<(f64, Vec<f64>)> {
    if eps.len() < 2 || eps.iter().any(|&e| !(e > 0.0)) {
        return Err(FippError::InvalidParameter("need at least two positive step sizes".into()));
    }
    let local = spec.local(t, y);
    let obj = Objective::tilted(&local, params.p(), tilt);
    let opt = maximize(&obj, c, &OptimizerOptions::default())?;
    let star = opt.pi_vec();
    let gaps = eps
        .iter()
        .map(|&e| Ok(opt.value - obj.value(&(&star + direction * e))?))
        .collect::<Result<Vec<f64>>>()?;
    if gaps.iter().any(|&g| !(g > 0.0)) {
        return Err(FippError::InvalidParameter(
            "direction does not decrease the objective (null direction?)".into(),
        ));
    }
    let lx: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let ly: Vec<f64> = gaps.iter().map(|g| g.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    Ok((sxy / sxx, gaps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{JumpAtom, JumpMeasure};
    use crate::simulate::simulate_paths;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    fn dv(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    #[test]
    fn zero_strategy_keeps_wealth() {
        let spec = FactorMarketSpec::builder(1, 1)
            .drift_r_const(dv(&[0.05]))
            .cov_r_const(DMatrix::from_element(1, 1, 0.04))
            .build()
            .unwrap();
        let b = simulate_paths(&spec, 1.0, 0.1, 2, 1).unwrap();
        let x = wealth_path(&spec, &b.paths[0], 0, &b.grid, &Strategy::Constant(dv(&[0.0])), 3.0).unwrap();
        assert!(x.iter().all(|&v| v == 3.0));
    }

    #[test]
    fn deterministic_growth() {
        let spec = FactorMarketSpec::builder(1, 1).drift_r_const(dv(&[0.05])).build().unwrap();
        let b = simulate_paths(&spec, 1.0, 0.1, 1, 1).unwrap();
        let x = wealth_path(&spec, &b.paths[0], 0, &b.grid, &Strategy::Constant(dv(&[1.0])), 1.0).unwrap();
        assert_abs_diff_eq!(*x.last().unwrap(), 0.05f64.exp(), epsilon = 1e-14);
    }

    #[test]
    fn total_loss_jump_absorbs() {
        let spec = FactorMarketSpec::builder(1, 1)
            .jumps(JumpMeasure::new(vec![JumpAtom::new(dv(&[-1.0]), dv(&[0.0]), 50.0)]).unwrap())
            .build()
            .unwrap();
        let b = simulate_paths(&spec, 1.0, 0.1, 1, 1).unwrap();
        let first = b.paths[0].marks[0].step;
        let x = wealth_path(&spec, &b.paths[0], 0, &b.grid, &Strategy::Constant(dv(&[1.0])), 1.0).unwrap();
        assert!(x[first] > 0.0);
        assert!(x[first + 1..].iter().all(|&v| v == 0.0));
        let err = wealth_path(&spec, &b.paths[0], 0, &b.grid, &Strategy::Constant(dv(&[2.0])), 1.0).unwrap_err();
        assert!(matches!(err, FippError::AdmissibilityViolation { path: 0, .. }));
    }

    #[test]
    fn zero_market_exact_martingale() {
        let spec = FactorMarketSpec::builder(1, 1).build().unwrap();
        let params = PowerParams::new(0.5, 0.3).unwrap();
        let c = ConstraintSet::new_box(dv(&[-1.0]), dv(&[1.0])).unwrap();
        let sol = FippSolution::time_monotone(&spec, params, c).unwrap();
        let opts = McOptions {
            n_paths: 16,
            ..Default::default()
        };
        let r = martingale_test(&spec, &sol, &Strategy::Constant(dv(&[0.0])), &opts).unwrap();
        assert_eq!(r.se, 0.0);
        assert_eq!(r.z, 0.0);
        assert_eq!(r.verdict, Verdict::MartingaleConsistent);
    }

    #[test]
    fn merton_gap_is_quadratic() {
        let spec = FactorMarketSpec::builder(1, 1)
            .drift_r_const(dv(&[0.05]))
            .cov_r_const(DMatrix::from_element(1, 1, 0.04))
            .build()
            .unwrap();
        let params = PowerParams::new(0.5, 0.0).unwrap();
        let c = ConstraintSet::new_box(dv(&[-10.0]), dv(&[10.0])).unwrap();
        let (slope, gaps) = drift_gap_exponent(
            &spec,
            &params,
            &TiltParams::zero(1),
            0.0,
            &dv(&[0.0]),
            &c,
            &dv(&[1.0]),
            &[0.1, 0.2, 0.4],
        )
        .unwrap();
        assert_abs_diff_eq!(slope, 2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(gaps[0], 0.01 * 0.01, epsilon = 1e-12);
    }
}
