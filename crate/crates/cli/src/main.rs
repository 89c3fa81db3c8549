use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use fipp_core::config::{field_for_block, Config, FippKind};
use fipp_core::fipp::{bsde_residual, construct_time_monotone, optimal_strategy_projection};
use fipp_core::geometry::attainment_check;
use fipp_core::hjb::{default_grid, solution_residual};
use fipp_core::market::validate_spec;
use fipp_core::mc::{martingale_test, McOptions, Strategy};
use fipp_core::objective::{maximize, Objective, OptimizerOptions};
use fipp_core::simulate::{simulate_paths_with, PathBundle};
use fipp_core::FippError;

#[derive(Parser)]
#[command(name = "fipp", version, about = "Power forward performance processes in jump-diffusion factor markets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check covariance blocks, the large-jump moment and budget reachability
    ValidateSpec(Common),
    /// Maximize the tilted objective at (0, Y0)
    Optimize(Common),
    /// Simulate factor paths and build the performance process along them
    Construct(Common),
    /// Simulate (R, Y) paths
    Simulate(Common),
    /// Monte Carlo martingale test of U_T(X_T) against U_0(x0)
    ValidateMc(Common),
    /// Forward HJB residual of the explicit solution on the default grid
    ValidateHjb(Common),
    /// Pathwise BSDE residual of the explicit solution
    BsdeResidual(Common),
    /// Recession-cone attainment check at (0, Y0)
    Attainment(Common),
}

#[derive(clap::Args, Clone)]
struct Common {
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(ValueEnum, Clone, Copy, PartialEq, Eq)]
enum Format {
    Json,
    Csv,
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::ValidateSpec(c)
            | Command::Optimize(c)
            | Command::Construct(c)
            | Command::Simulate(c)
            | Command::ValidateMc(c)
            | Command::ValidateHjb(c)
            | Command::BsdeResidual(c)
            | Command::Attainment(c) => c,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::ValidateSpec(_) => "validate-spec",
            Command::Optimize(_) => "optimize",
            Command::Construct(_) => "construct",
            Command::Simulate(_) => "simulate",
            Command::ValidateMc(_) => "validate-mc",
            Command::ValidateHjb(_) => "validate-hjb",
            Command::BsdeResidual(_) => "bsde-residual",
            Command::Attainment(_) => "attainment",
        }
    }
}

enum Failure {
    Usage(String),
    Numerical(String),
}

impl From<FippError> for Failure {
    fn from(e: FippError) -> Self {
        match &e {
            FippError::Config { path, msg } if path.is_empty() => Failure::Usage(msg.clone()),
            FippError::Config { path, msg } => Failure::Usage(format!("{path}: {msg}")),
            FippError::NotPsd { what, .. } => Failure::Usage(format!("{}: {e}", field_for_block(what))),
            FippError::Dimension(_)
            | FippError::InvalidParameter(_)
            | FippError::OriginNotInSet(_)
            | FippError::Unbounded
            | FippError::UnsupportedVariant(_)
            | FippError::NotFiniteVariationFactor(_)
            | FippError::NotBsFactor(_)
            | FippError::GridMismatch(_) => Failure::Usage(e.to_string()),
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Numerical(format!("i/o: {e}"))
    }
}

/// Everything a subcommand needs: parsed config, its hash and the overrides.
struct Run {
    cfg: Config,
    hash: String,
    seed: u64,
    paths: usize,
    dt: f64,
    format: Format,
}

impl Run {
    fn load(common: &Common) -> Result<Self, Failure> {
        let path = common
            .config
            .as_deref()
            .ok_or_else(|| Failure::Usage("--config is required".into()))?;
        let bytes = fs::read(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
        let hash = hex::encode(Sha256::digest(&bytes));
        let text = String::from_utf8(bytes).map_err(|_| Failure::Usage(format!("{} is not UTF-8", path.display())))?;
        let cfg = Config::from_toml_str(&text)?;
        Ok(Run {
            seed: common.seed.unwrap_or(cfg.simulation.seed),
            paths: common.paths.unwrap_or(cfg.simulation.paths),
            dt: common.dt.unwrap_or(cfg.simulation.dt),
            format: common.format,
            hash,
            cfg,
        })
    }

    fn envelope(&self, command: &str, payload: Value) -> Value {
        let mut m = Map::new();
        m.insert("schema".into(), json!(1));
        m.insert("command".into(), json!(command));
        m.insert("config_sha256".into(), json!(self.hash));
        m.insert("seed".into(), json!(self.seed));
        if let Value::Object(p) = payload {
            m.extend(p);
        }
        Value::Object(m)
    }

    fn simulate(&self) -> Result<PathBundle, Failure> {
        let spec = self.cfg.market_spec()?;
        let sim = &self.cfg.simulation;
        Ok(simulate_paths_with(&spec, sim.horizon, self.dt, self.paths, self.seed, sim.antithetic)?)
    }
}

fn to_json<T: serde::Serialize>(x: &T) -> Value {
    serde_json::to_value(x).unwrap_or(Value::Null)
}

fn f64_json(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!(format!("{x}"))
    }
}

enum Artifact {
    Json(Value),
    Csv(Vec<u8>),
}

fn emit(artifact: Artifact, name: &str, out: Option<&Path>) -> Result<(), Failure> {
    let (bytes, ext) = match artifact {
        Artifact::Json(v) => {
            let mut s = serde_json::to_string_pretty(&v).map_err(|e| Failure::Numerical(e.to_string()))?;
            s.push('\n');
            (s.into_bytes(), "json")
        }
        Artifact::Csv(b) => (b, "csv"),
    };
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let file = dir.join(format!("{name}.{ext}"));
            fs::write(file, bytes)?;
        }
        None => io::stdout().write_all(&bytes)?,
    }
    Ok(())
}

fn run(cmd: Command) -> Result<(), Failure> {
    let common = cmd.common().clone();
    let r = Run::load(&common)?;
    let name = cmd.name();
    let cfg = &r.cfg;
    let csv_wanted = r.format == Format::Csv;
    let artifact = match cmd {
        Command::ValidateSpec(_) => {
            let spec = cfg.market_spec()?;
            let params = cfg.power_params()?;
            let c = cfg.constraint.as_ref().map(|_| cfg.constraint_set()).transpose()?;
            let y0 = spec.y0().clone();
            let probes = vec![(0.0, y0.clone()), (cfg.simulation.horizon, y0)];
            let report = validate_spec(&spec, &params, &probes, c.as_ref())?;
            Artifact::Json(r.envelope(name, to_json(&report)))
        }
        Command::Optimize(_) => {
            let spec = cfg.market_spec()?;
            let params = cfg.power_params()?;
            let c = cfg.constraint_set()?;
            let tilt = cfg.tilt(&spec)?;
            let local = spec.local(0.0, spec.y0());
            let obj = Objective::tilted(&local, params.p(), &tilt);
            let opt = maximize(&obj, &c, &OptimizerOptions::default())?;
            let mut payload = json!({
                "pi_star": opt.pi,
                "value": f64_json(opt.value),
                "gap": f64_json(opt.gap),
                "iterations": opt.iterations,
                "attainment": to_json(&opt.attainment),
                "tilt": tilt.sigma.as_slice(),
            });
            if let Some(st) = cfg.sigma_tilde() {
                let pi = optimal_strategy_projection(&spec, &params, &st, 0.0, spec.y0(), &c)?;
                payload["pi_projection"] = json!(pi.as_slice());
            }
            Artifact::Json(r.envelope(name, payload))
        }
        Command::Construct(_) => {
            let spec = cfg.market_spec()?;
            let sol = cfg.solution(&spec)?;
            let bundle = r.simulate()?;
            let y0 = spec.y0().clone();
            let at0 = sol.eval(0.0, &y0)?;
            let mut payload = json!({
                "kind": match cfg.fipp.kind { FippKind::Tilted => "tilted", FippKind::TimeMonotone => "time_monotone" },
                "tilt": sol.tilt().sigma.as_slice(),
                "d0": sol.params().d0(),
                "g0": f64_json(at0.psi),
                "strategy0": at0.strategy.as_slice(),
                "dt": bundle.grid.dt,
                "times": bundle.times(),
            });
            let pis = bundle
                .paths
                .iter()
                .map(|p| sol.pi_path(p, &bundle.grid).map(|(pi, _)| pi))
                .collect::<Result<Vec<_>, _>>()?;
            if cfg.fipp.kind == FippKind::TimeMonotone {
                if let Some(first) = bundle.paths.first() {
                    let ys: Vec<DVector<f64>> = (0..=bundle.grid.steps).map(|k| first.y_at(k, bundle.d)).collect();
                    let tm = construct_time_monotone(&spec, sol.params(), sol.constraint(), &bundle.grid, &ys, &[
                        cfg.simulation.x0,
                    ])?;
                    payload["time_monotone"] = to_json(&tm);
                }
            }
            if csv_wanted {
                let mut w = csv::Writer::from_writer(Vec::new());
                w.write_record(["t", "path_id", "pi"]).map_err(csv_err)?;
                for (id, path) in pis.iter().enumerate() {
                    for (k, v) in path.iter().enumerate() {
                        w.write_record([fmt(bundle.grid.time(k)), id.to_string(), fmt(*v)]).map_err(csv_err)?;
                    }
                }
                Artifact::Csv(w.into_inner().map_err(|e| Failure::Numerical(e.to_string()))?)
            } else {
                payload["pi_paths"] = json!(pis);
                Artifact::Json(r.envelope(name, payload))
            }
        }
        Command::Simulate(_) => {
            let bundle = r.simulate()?;
            if csv_wanted {
                let mut buf = Vec::new();
                bundle.write_csv(&mut buf)?;
                Artifact::Csv(buf)
            } else {
                let paths: Vec<Value> = bundle
                    .paths
                    .iter()
                    .map(|p| {
                        json!({
                            "y": p.y,
                            "dr": p.dr,
                            "dr_c": p.dr_c,
                            "dy_c": p.dy_c,
                            "jumps": p.marks.iter().map(|m| json!({"step": m.step, "atom": m.atom})).collect::<Vec<_>>(),
                        })
                    })
                    .collect();
                let payload = json!({
                    "n": bundle.n,
                    "d": bundle.d,
                    "dt": bundle.grid.dt,
                    "times": bundle.times(),
                    "paths": paths,
                });
                Artifact::Json(r.envelope(name, payload))
            }
        }
        Command::ValidateMc(_) => {
            let spec = cfg.market_spec()?;
            let sol = cfg.solution(&spec)?;
            let strategy = match cfg.constant_strategy()? {
                Some(pi) => Strategy::Constant(pi),
                None => Strategy::Optimal(&sol),
            };
            let sim = &cfg.simulation;
            let opts = McOptions {
                x0: sim.x0,
                horizon: sim.horizon,
                dt: r.dt,
                n_paths: r.paths,
                seed: r.seed,
                antithetic: sim.antithetic,
                threshold: 3.0,
            };
            let report = martingale_test(&spec, &sol, &strategy, &opts)?;
            Artifact::Json(r.envelope(name, to_json(&report)))
        }
        Command::ValidateHjb(_) => {
            let spec = cfg.market_spec()?;
            let sol = cfg.solution(&spec)?;
            let field = solution_residual(&sol, &default_grid(&spec), cfg.hjb.g_shift)?;
            if csv_wanted {
                let mut buf = Vec::new();
                field.write_csv(&mut buf)?;
                Artifact::Csv(buf)
            } else {
                let payload = json!({
                    "max_abs": f64_json(field.max_abs),
                    "rms": f64_json(field.rms),
                    "cole_hopf_gap": f64_json(field.cole_hopf_gap),
                    "g_shift": cfg.hjb.g_shift,
                    "points": field.points.len(),
                });
                Artifact::Json(r.envelope(name, payload))
            }
        }
        Command::BsdeResidual(_) => {
            let spec = cfg.market_spec()?;
            let sol = cfg.solution(&spec)?;
            let bundle = r.simulate()?;
            let stats = bsde_residual(&sol, &bundle)?;
            Artifact::Json(r.envelope(name, to_json(&stats)))
        }
        Command::Attainment(_) => {
            let spec = cfg.market_spec()?;
            let params = cfg.power_params()?;
            let c = cfg.constraint_set()?;
            let tilt = cfg.tilt(&spec)?;
            let obj = Objective::tilted(&spec.local(0.0, spec.y0()), params.p(), &tilt);
            let verdict = attainment_check(&obj.recession_data(), &c)?;
            Artifact::Json(r.envelope(name, json!({ "compact": c.is_compact(), "attainment": to_json(&verdict) })))
        }
    };
    emit(artifact, name, common.out.as_deref())
}

fn fmt(v: f64) -> String {
    format!("{v:?}")
}

fn csv_err(e: csv::Error) -> Failure {
    Failure::Numerical(e.to_string())
}

fn main() -> ExitCode {
    if let Some(n) = std::env::var("FIPP_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
