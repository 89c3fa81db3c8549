//! Euler–Maruyama simulation of `(R, Y)` with compound-Poisson jumps.
//!
//! Per step, at the left point `(t_k, Y_k)`:
//! a joint Gaussian increment with covariance `[[c^R, c^RY], [c^YR, c^Y]] dt`,
//! the raw drift `b - sum rate u 1{|u|<=1}` times `dt`, then every jump in the
//! step applied at full size. Each path draws from its own ChaCha stream, so
//! results do not depend on scheduling.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::error::{FippError, Result};
use crate::linalg;
use crate::market::{FactorMarketSpec, JumpAtom, LocalMarket};

/// One jump: the step it falls in and the index of the atom that fired.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct JumpMark {
    pub step: usize,
    pub atom: usize,
}

/// Uniform time grid `t_k = k dt`, `k = 0..=steps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    pub dt: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(FippError::InvalidParameter(format!("dt = {dt} must be positive")));
        }
        if !(horizon >= dt) || !horizon.is_finite() {
            return Err(FippError::InvalidParameter(format!(
                "horizon T = {horizon} must be at least dt = {dt}"
            )));
        }
        let ratio = horizon / dt;
        let steps = ratio.round();
        if (ratio - steps).abs() > 1e-9 * ratio.max(1.0) {
            return Err(FippError::InvalidParameter(format!(
                "horizon T = {horizon} is not a whole number of steps dt = {dt}"
            )));
        }
        Ok(TimeGrid {
            dt,
            steps: steps as usize,
        })
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.time(self.steps)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }
}

/// One simulated path. Vectors are flattened step-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SimPath {
    /// `Y_{t_k}`, `(steps + 1) * d` values
    pub y: Vec<f64>,
    /// total `R` increment per step, `steps * n`
    pub dr: Vec<f64>,
    /// continuous martingale increment of `R`, `steps * n`
    pub dr_c: Vec<f64>,
    /// continuous martingale increment of `Y`, `steps * d`
    pub dy_c: Vec<f64>,
    /// jump marks in time order
    pub marks: Vec<JumpMark>,
    /// jump atoms in effect at each step (one copy when intensity is constant)
    atoms: AtomTable,
}

#[derive(Clone, Debug, PartialEq)]
enum AtomTable {
    Shared(Vec<JumpAtom>),
    PerStep(Vec<Vec<JumpAtom>>),
}

impl SimPath {
    pub fn y_at(&self, k: usize, d: usize) -> DVector<f64> {
        DVector::from_row_slice(&self.y[k * d..(k + 1) * d])
    }

    pub fn dr_at(&self, k: usize, n: usize) -> DVector<f64> {
        DVector::from_row_slice(&self.dr[k * n..(k + 1) * n])
    }

    pub fn dr_c_at(&self, k: usize, n: usize) -> DVector<f64> {
        DVector::from_row_slice(&self.dr_c[k * n..(k + 1) * n])
    }

    pub fn dy_c_at(&self, k: usize, d: usize) -> DVector<f64> {
        DVector::from_row_slice(&self.dy_c[k * d..(k + 1) * d])
    }

    /// The atom that produced a mark.
    pub fn atom(&self, mark: &JumpMark) -> &JumpAtom {
        match &self.atoms {
            AtomTable::Shared(a) => &a[mark.atom],
            AtomTable::PerStep(per) => &per[mark.step][mark.atom],
        }
    }

    /// Marks falling in step `k`.
    pub fn marks_in(&self, k: usize) -> &[JumpMark] {
        let lo = self.marks.partition_point(|m| m.step < k);
        let hi = self.marks.partition_point(|m| m.step <= k);
        &self.marks[lo..hi]
    }
}

/// Simulated paths with their grid and seed.
#[derive(Clone, Debug)]
pub struct PathBundle {
    pub grid: TimeGrid,
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub paths: Vec<SimPath>,
}

impl PathBundle {
    pub fn n_paths(&self) -> usize {
        self.paths.len()
    }

    pub fn times(&self) -> Vec<f64> {
        self.grid.times()
    }

    /// Rebuild every `Y` path from `Y_0`, the drift, the stored continuous
    /// increments and the stored jumps. Matches the stored values bit for bit.
    pub fn reconstruct_y(&self, spec: &FactorMarketSpec) -> Vec<Vec<f64>> {
        let d = self.d;
        self.paths
            .iter()
            .map(|path| {
                let mut y = path.y_at(0, d);
                let mut out = linalg::to_vec(&y);
                for k in 0..self.grid.steps {
                    let local = spec.local(self.grid.time(k), &y);
                    let jumps: Vec<&DVector<f64>> = path.marks_in(k).iter().map(|m| &path.atom(m).v).collect();
                    y = euler_y(&y, &local.raw_drift_y(), self.grid.dt, &path.dy_c_at(k, d), &jumps);
                    out.extend(y.iter());
                }
                out
            })
            .collect()
    }

    /// CSV with header `t, path_id, Y_1..Y_d, dR_1..dR_n, jump_flag`; row `k`
    /// carries the increment over `(t_{k-1}, t_k]` (zero at `k = 0`).
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string(), "path_id".to_string()];
        header.extend((1..=self.d).map(|i| format!("Y_{i}")));
        header.extend((1..=self.n).map(|i| format!("dR_{i}")));
        header.push("jump_flag".into());
        w.write_record(&header)?;
        for (id, path) in self.paths.iter().enumerate() {
            for k in 0..=self.grid.steps {
                let mut row = vec![fmt_f64(self.grid.time(k)), id.to_string()];
                row.extend(path.y[k * self.d..(k + 1) * self.d].iter().map(|&v| fmt_f64(v)));
                if k == 0 {
                    row.extend((0..self.n).map(|_| fmt_f64(0.0)));
                    row.push("0".into());
                } else {
                    row.extend(path.dr[(k - 1) * self.n..k * self.n].iter().map(|&v| fmt_f64(v)));
                    row.push(if path.marks_in(k - 1).is_empty() { "0" } else { "1" }.into());
                }
                w.write_record(&row)?;
            }
        }
        w.flush()
    }
}

/// Shortest representation that round-trips.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn euler_y(y: &DVector<f64>, drift: &DVector<f64>, dt: f64, dy_c: &DVector<f64>, jumps: &[&DVector<f64>]) -> DVector<f64> {
    let mut next = y + drift * dt + dy_c;
    for v in jumps {
        next += *v;
    }
    next
}

/// Local coefficients plus the joint Cholesky factor, cached for constant specs.
struct StepModel {
    local: LocalMarket,
    chol: DMatrix<f64>,
    total_rate: f64,
}

impl StepModel {
    fn at(spec: &FactorMarketSpec, t: f64, y: &DVector<f64>) -> Result<Self> {
        let local = spec.local(t, y);
        let joint = local.coef.joint_cov();
        let chol = linalg::psd_cholesky(&joint).ok_or_else(|| FippError::Cholesky {
            t,
            y: linalg::to_vec(y),
        })?;
        let total_rate = local.atoms.iter().map(|a| a.rate).sum();
        Ok(StepModel { local, chol, total_rate })
    }
}

/// Source of the per-step randomness: standard normals for the joint
/// Gaussian draw and the indices of atoms that fire in the step.
pub(crate) trait Noise {
    fn draw(&mut self, step: usize, dim: usize, atoms: &[JumpAtom], total_rate: f64, dt: f64) -> (DVector<f64>, Vec<usize>);
}

/// Fresh draws from a ChaCha stream; `sign = -1` gives the antithetic partner.
pub(crate) struct StreamNoise {
    rng: ChaCha8Rng,
    sign: f64,
    record: Option<Vec<(DVector<f64>, Vec<usize>)>>,
}

impl StreamNoise {
    pub(crate) fn new(seed: u64, stream: u64, sign: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        StreamNoise { rng, sign, record: None }
    }

    fn recording(mut self) -> Self {
        self.record = Some(Vec::new());
        self
    }
}

impl Noise for StreamNoise {
    fn draw(&mut self, _step: usize, dim: usize, atoms: &[JumpAtom], total_rate: f64, dt: f64) -> (DVector<f64>, Vec<usize>) {
        let xi = DVector::from_fn(dim, |_, _| {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            self.sign * z
        });
        let mut fired = Vec::new();
        let mean = total_rate * dt;
        if mean > 0.0 {
            let count = Poisson::new(mean).map(|p| p.sample(&mut self.rng)).unwrap_or(0.0) as usize;
            for _ in 0..count {
                let target = self.rng.random::<f64>() * total_rate;
                let mut acc = 0.0;
                let mut pick = atoms.len() - 1;
                for (i, a) in atoms.iter().enumerate() {
                    acc += a.rate;
                    if target < acc {
                        pick = i;
                        break;
                    }
                }
                fired.push(pick);
            }
        }
        if let Some(rec) = self.record.as_mut() {
            rec.push((xi.clone(), fired.clone()));
        }
        (xi, fired)
    }
}

/// Replays a recorded fine-grid sequence on a grid `m` times coarser.
struct CoarsenedNoise {
    fine: Vec<(DVector<f64>, Vec<usize>)>,
    m: usize,
}

impl Noise for CoarsenedNoise {
    fn draw(&mut self, step: usize, dim: usize, _atoms: &[JumpAtom], _rate: f64, _dt: f64) -> (DVector<f64>, Vec<usize>) {
        let mut xi = DVector::zeros(dim);
        let mut fired = Vec::new();
        for (z, f) in &self.fine[step * self.m..(step + 1) * self.m] {
            xi += z;
            fired.extend_from_slice(f);
        }
        (xi / (self.m as f64).sqrt(), fired)
    }
}

/// Simulate a single path with the given noise source.
pub(crate) fn simulate_one(spec: &FactorMarketSpec, grid: &TimeGrid, noise: &mut dyn Noise) -> Result<SimPath> {
    let (n, d) = (spec.n(), spec.d());
    let steps = grid.steps;
    let dt = grid.dt;
    let sqrt_dt = dt.sqrt();
    let constant = spec.has_constant_coefficients();
    let cached = if constant {
        Some(StepModel::at(spec, 0.0, spec.y0())?)
    } else {
        None
    };

    let mut y = spec.y0().clone();
    let mut path = SimPath {
        y: Vec::with_capacity((steps + 1) * d),
        dr: Vec::with_capacity(steps * n),
        dr_c: Vec::with_capacity(steps * n),
        dy_c: Vec::with_capacity(steps * d),
        marks: Vec::new(),
        atoms: AtomTable::Shared(Vec::new()),
    };
    path.y.extend(y.iter());
    let mut per_step_atoms = Vec::new();

    for k in 0..steps {
        let t = grid.time(k);
        let fresh;
        let model = match &cached {
            Some(m) => m,
            None => {
                fresh = StepModel::at(spec, t, &y)?;
                &fresh
            }
        };
        let (xi, fired) = noise.draw(k, n + d, &model.local.atoms, model.total_rate, dt);
        let inc = &model.chol * xi * sqrt_dt;
        let dr_c = inc.rows(0, n).into_owned();
        let dy_c = inc.rows(n, d).into_owned();

        let mut dr = model.local.raw_drift_r() * dt + &dr_c;
        for &i in &fired {
            dr += &model.local.atoms[i].u;
        }
        let jumps: Vec<&DVector<f64>> = fired.iter().map(|&i| &model.local.atoms[i].v).collect();
        y = euler_y(&y, &model.local.raw_drift_y(), dt, &dy_c, &jumps);

        path.y.extend(y.iter());
        path.dr.extend(dr.iter());
        path.dr_c.extend(dr_c.iter());
        path.dy_c.extend(dy_c.iter());
        path.marks.extend(fired.iter().map(|&atom| JumpMark { step: k, atom }));
        if !constant {
            per_step_atoms.push(model.local.atoms.clone());
        }
    }
    path.atoms = match cached {
        Some(m) => AtomTable::Shared(m.local.atoms),
        None => AtomTable::PerStep(per_step_atoms),
    };
    Ok(path)
}

/// Stream index and sign for path `i`: antithetic pairs share a stream.
pub(crate) fn stream_for(i: usize, antithetic: bool) -> (u64, f64) {
    if antithetic {
        ((i / 2) as u64, if i % 2 == 1 { -1.0 } else { 1.0 })
    } else {
        (i as u64, 1.0)
    }
}

pub fn simulate_paths(spec: &FactorMarketSpec, horizon: f64, dt: f64, n_paths: usize, seed: u64) -> Result<PathBundle> {
    simulate_paths_with(spec, horizon, dt, n_paths, seed, false)
}

/// As [`simulate_paths`], optionally pairing each path with its antithetic
/// partner (negated Gaussian draws, same jump stream).
pub fn simulate_paths_with(
    spec: &FactorMarketSpec,
    horizon: f64,
    dt: f64,
    n_paths: usize,
    seed: u64,
    antithetic: bool,
) -> Result<PathBundle> {
    let grid = TimeGrid::new(horizon, dt)?;
    let paths = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let (stream, sign) = stream_for(i, antithetic);
            simulate_one(spec, &grid, &mut StreamNoise::new(seed, stream, sign))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PathBundle {
        grid,
        seed,
        n: spec.n(),
        d: spec.d(),
        paths,
    })
}

/// Simulate on `dt / m` and on `dt` from the same draws: coarse Gaussian
/// increments are block sums of the fine ones, and every fine jump lands in
/// the enclosing coarse step. Returns `(coarse, fine)`.
pub fn simulate_coupled(
    spec: &FactorMarketSpec,
    horizon: f64,
    dt: f64,
    m: usize,
    n_paths: usize,
    seed: u64,
) -> Result<(PathBundle, PathBundle)> {
    if m == 0 {
        return Err(FippError::InvalidParameter("refinement factor must be positive".into()));
    }
    if spec.jumps().is_state_dependent() {
        return Err(FippError::UnsupportedVariant(
            "coupled simulation needs a state-independent jump intensity".into(),
        ));
    }
    let coarse_grid = TimeGrid::new(horizon, dt)?;
    let fine_grid = TimeGrid {
        dt: dt / m as f64,
        steps: coarse_grid.steps * m,
    };
    let pairs = (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut noise = StreamNoise::new(seed, i as u64, 1.0).recording();
            let fine = simulate_one(spec, &fine_grid, &mut noise)?;
            let mut replay = CoarsenedNoise {
                fine: noise.record.take().unwrap_or_default(),
                m,
            };
            let coarse = simulate_one(spec, &coarse_grid, &mut replay)?;
            Ok((coarse, fine))
        })
        .collect::<Result<Vec<_>>>()?;
    let (coarse, fine): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let bundle = |grid, paths| PathBundle {
        grid,
        seed,
        n: spec.n(),
        d: spec.d(),
        paths,
    };
    Ok((bundle(coarse_grid, coarse), bundle(fine_grid, fine)))
}
