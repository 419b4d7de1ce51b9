//! Command-line front end: configuration files, the `simulate`,
//! `predict`, `sweep`, `continue` and `compare` commands, and persistent
//! CSV/JSON outputs.
//!
//! Configuration is a line-oriented `key = value` file with dotted
//! section prefixes (`integrator.rel_tol = 1e-10`). Every output file
//! embeds a hash of the configuration and of the swimmer model so runs
//! can be traced back to their inputs.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::{DVector, Vector3, Vector4};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::analysis::{compare_curves, compare_period, fit_circle, magnetic_frame_curve};
use crate::asymptotics::{
    higha_predict, lowa_axis_from_phase, lowa_predict, lowa_reduced_flow, smallpsi_predict,
    LowAPrediction,
};
use crate::dynamics::{rhs_quaternion_slice, Parameters};
use crate::error::{MagswimError, Result};
use crate::integrator::{integrate, IntegratorConfig, Trajectory};
use crate::model::{build_model, compute_spectrum, load_drag_matrix, PSpectrum, SwimmerModel};
use crate::orbits::{
    continue_branch, default_transient, detect_recurrence, shoot_periodic, ContinuationOptions,
    ContinuationParameter, PeriodicOrbit,
};

#[derive(Debug, Parser)]
#[command(
    name = "magswim",
    about = "Orientation dynamics of a magnetic swimmer in a rotating field"
)]
pub struct Cli {
    /// Path to the run configuration file.
    #[arg(long, global = true, default_value = "run.cfg")]
    pub config: PathBuf,
    /// Output directory (overrides `run.outputs` from the config).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Random seed (overrides `run.seed` from the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate the quaternion system and classify the long-term
    /// behaviour (steady / periodic / undetermined).
    Simulate,
    /// Evaluate the closed-form asymptotic predictions for one regime.
    Predict {
        #[arg(long, value_enum)]
        regime: Regime,
        /// Expansion order for the small-psi regime (1 or 2).
        #[arg(long, default_value_t = 1)]
        order: u8,
    },
    /// Classify every grid point from many random initial orientations.
    Sweep,
    /// Continue a periodic orbit in one parameter.
    Continue {
        /// Orbit JSON file produced by `simulate`.
        #[arg(long)]
        orbit: PathBuf,
        /// Free parameter of the continuation.
        #[arg(long, value_enum)]
        param: ParamName,
        /// Parameter value at which to stop.
        #[arg(long)]
        target: f64,
        /// Initial arclength step (sign = initial direction).
        #[arg(long, default_value_t = 0.02)]
        step: f64,
        #[arg(long, default_value_t = 2000)]
        max_points: usize,
    },
    /// Run the matched numeric/analytic pipeline and report error
    /// metrics.
    Compare {
        #[arg(long, value_enum)]
        regime: Regime,
        /// Small-psi expansion order used for the curve distance.
        #[arg(long, default_value_t = 2)]
        order: u8,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Regime {
    Lowa,
    Higha,
    Smallpsi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ParamName {
    A,
    Psi,
}

impl ParamName {
    fn to_parameter(self) -> ContinuationParameter {
        match self {
            ParamName::A => ContinuationParameter::MasonNumber,
            ParamName::Psi => ContinuationParameter::ConicalAngle,
        }
    }
}

/// Parsed run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub drag_path: PathBuf,
    pub moment: Vector3<f64>,
    pub a: Vec<f64>,
    pub psi: Vec<f64>,
    pub integrator: IntegratorConfig,
    pub horizon: f64,
    /// Discard time before analysing curves; `None` selects a
    /// parameter-dependent default.
    pub transient: Option<f64>,
    pub outputs: PathBuf,
    pub seed: u64,
    pub n_random_ic: usize,
    /// Fixed initial quaternion for `simulate` (otherwise random).
    pub initial: Option<Vector4<f64>>,
    raw: String,
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .parse()
        .map_err(|_| MagswimError::Config(format!("{key}: cannot parse '{value}' as a number")))
}

/// A grid value: a single number, a comma-separated list, or a
/// `start:end:count` linear range (inclusive endpoints).
fn parse_grid(key: &str, value: &str) -> Result<Vec<f64>> {
    if value.contains(':') {
        let parts: Vec<&str> = value.split(':').collect();
        if parts.len() != 3 {
            return Err(MagswimError::Config(format!(
                "{key}: ranges use start:end:count, got '{value}'"
            )));
        }
        let lo = parse_f64(key, parts[0].trim())?;
        let hi = parse_f64(key, parts[1].trim())?;
        let n: usize = parts[2]
            .trim()
            .parse()
            .map_err(|_| MagswimError::Config(format!("{key}: bad count in '{value}'")))?;
        if n == 0 {
            return Err(MagswimError::Config(format!("{key}: empty range")));
        }
        if n == 1 {
            return Ok(vec![lo]);
        }
        return Ok((0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect());
    }
    let vals: Result<Vec<f64>> = value
        .split(',')
        .map(|v| parse_f64(key, v.trim()))
        .collect();
    let vals = vals?;
    if vals.is_empty() {
        return Err(MagswimError::Config(format!("{key}: empty grid")));
    }
    Ok(vals)
}

fn parse_vector(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|v| parse_f64(key, v))
        .collect()
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let raw = fs::read_to_string(path).map_err(|e| {
            MagswimError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));

        let mut drag_path: Option<PathBuf> = None;
        let mut moment: Option<Vector3<f64>> = None;
        let mut a: Option<Vec<f64>> = None;
        let mut psi: Option<Vec<f64>> = None;
        let mut integrator = IntegratorConfig::default();
        let mut horizon = 400.0;
        let mut transient: Option<f64> = None;
        let mut outputs = PathBuf::from("out");
        let mut seed = 0u64;
        let mut n_random_ic = 1usize;
        let mut initial: Option<Vector4<f64>> = None;

        for (lineno, line) in raw.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                MagswimError::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            match key {
                "swimmer.drag_matrix" => {
                    let p = PathBuf::from(value);
                    drag_path = Some(if p.is_absolute() { p } else { base.join(p) });
                }
                "swimmer.moment" => {
                    let v = parse_vector(key, value)?;
                    if v.len() != 3 {
                        return Err(MagswimError::Config(format!(
                            "{key}: expected 3 components, got {}",
                            v.len()
                        )));
                    }
                    moment = Some(Vector3::new(v[0], v[1], v[2]));
                }
                "params.a" => a = Some(parse_grid(key, value)?),
                "params.psi" => psi = Some(parse_grid(key, value)?),
                "integrator.rel_tol" => integrator.rel_tol = parse_f64(key, value)?,
                "integrator.abs_tol" => integrator.abs_tol = parse_f64(key, value)?,
                "integrator.max_step" => integrator.max_step = parse_f64(key, value)?,
                "integrator.initial_step" => {
                    integrator.initial_step = Some(parse_f64(key, value)?)
                }
                "integrator.max_steps" => {
                    integrator.max_steps = parse_f64(key, value)? as usize
                }
                "run.horizon" => horizon = parse_f64(key, value)?,
                "run.transient" => transient = Some(parse_f64(key, value)?),
                "run.outputs" => outputs = base.join(value),
                "run.seed" => {
                    seed = value.parse().map_err(|_| {
                        MagswimError::Config(format!("{key}: cannot parse '{value}'"))
                    })?
                }
                "run.n_random_ic" => {
                    n_random_ic = value.parse().map_err(|_| {
                        MagswimError::Config(format!("{key}: cannot parse '{value}'"))
                    })?
                }
                "simulate.initial" => {
                    let v = parse_vector(key, value)?;
                    if v.len() != 4 {
                        return Err(MagswimError::Config(format!(
                            "{key}: expected 4 components, got {}",
                            v.len()
                        )));
                    }
                    initial = Some(Vector4::new(v[0], v[1], v[2], v[3]));
                }
                other => {
                    return Err(MagswimError::Config(format!("unknown config key '{other}'")))
                }
            }
        }

        let cfg = RunConfig {
            drag_path: drag_path
                .ok_or_else(|| MagswimError::Config("missing swimmer.drag_matrix".into()))?,
            moment: moment.ok_or_else(|| MagswimError::Config("missing swimmer.moment".into()))?,
            a: a.ok_or_else(|| MagswimError::Config("missing params.a".into()))?,
            psi: psi.ok_or_else(|| MagswimError::Config("missing params.psi".into()))?,
            integrator,
            horizon,
            transient,
            outputs,
            seed,
            n_random_ic,
            initial,
            raw,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        self.integrator.validate()?;
        if self.a.is_empty() || self.psi.is_empty() {
            return Err(MagswimError::Config("parameter grids must be nonempty".into()));
        }
        if !self.horizon.is_finite() || self.horizon <= 0.0 {
            return Err(MagswimError::Config("run.horizon must be positive".into()));
        }
        if let Some(tr) = self.transient {
            if tr < 0.0 {
                return Err(MagswimError::Config("run.transient must be >= 0".into()));
            }
            if self.horizon <= tr {
                return Err(MagswimError::Config(
                    "run.horizon must exceed run.transient".into(),
                ));
            }
        }
        for &v in self.a.iter() {
            if !v.is_finite() || v <= 0.0 {
                return Err(MagswimError::Config("params.a values must be positive".into()));
            }
        }
        Ok(())
    }

    /// Scalar parameter pair; errors when a command needs scalars but the
    /// config carries a grid.
    fn scalar_params(&self) -> Result<Parameters> {
        if self.a.len() != 1 || self.psi.len() != 1 {
            return Err(MagswimError::Config(
                "this command needs scalar params.a and params.psi".into(),
            ));
        }
        Ok(Parameters::new(self.a[0], self.psi[0]))
    }

    fn transient_for(&self, params: &Parameters) -> f64 {
        self.transient
            .unwrap_or_else(|| default_transient(params))
            .min(0.9 * self.horizon)
    }
}

/// Everything a command needs: config, model, spectrum, hashes, output
/// directory.
pub struct RunContext {
    pub config: RunConfig,
    pub model: SwimmerModel,
    pub spec: PSpectrum,
    pub out_dir: PathBuf,
    pub config_hash: String,
    pub model_hash: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl RunContext {
    pub fn new(cli_config: &Path, out: Option<PathBuf>, seed: Option<u64>) -> Result<RunContext> {
        let mut config = RunConfig::load(cli_config)?;
        if let Some(s) = seed {
            config.seed = s;
        }
        let drag_text = fs::read_to_string(&config.drag_path).map_err(|e| {
            MagswimError::Config(format!(
                "cannot read drag matrix {}: {e}",
                config.drag_path.display()
            ))
        })?;
        let drag = load_drag_matrix(&drag_text)?;
        let model = build_model(&drag, config.moment)?;
        let spec = compute_spectrum(&model)?;

        let config_hash = sha256_hex(config.raw.as_bytes());
        let model_hash = sha256_hex(
            format!("{}\nmoment = {:?}", drag_text.trim(), config.moment.as_slice()).as_bytes(),
        );
        let out_dir = out.unwrap_or_else(|| config.outputs.clone());
        fs::create_dir_all(&out_dir)?;
        Ok(RunContext {
            config,
            model,
            spec,
            out_dir,
            config_hash,
            model_hash,
        })
    }

    fn csv_header(&self) -> String {
        format!(
            "# config_hash = {}\n# model_hash = {}\n",
            self.config_hash, self.model_hash
        )
    }

    fn write_csv(&self, name: &str, body: &str) -> Result<PathBuf> {
        let path = self.out_dir.join(name);
        fs::write(&path, format!("{}{}", self.csv_header(), body))?;
        Ok(path)
    }

    fn write_json<T: Serialize>(&self, name: &str, payload: &T) -> Result<PathBuf> {
        let mut value = serde_json::to_value(payload)?;
        if let Some(obj) = value.as_object_mut() {
            obj.insert("config_hash".into(), self.config_hash.clone().into());
            obj.insert("model_hash".into(), self.model_hash.clone().into());
        }
        let path = self.out_dir.join(name);
        fs::write(&path, serde_json::to_string_pretty(&value)?)?;
        Ok(path)
    }

    fn integrate_quaternion(
        &self,
        params: &Parameters,
        q0: &Vector4<f64>,
        t_end: f64,
    ) -> Result<Trajectory> {
        let model = &self.model;
        let rhs = |_t: f64, y: &DVector<f64>, dy: &mut DVector<f64>| {
            rhs_quaternion_slice(y.as_slice(), dy.as_mut_slice(), params, model);
        };
        let y0 = DVector::from_column_slice(q0.as_slice());
        let (traj, _) = integrate(rhs, &y0, (0.0, t_end), &self.config.integrator, &[])?;
        Ok(traj)
    }
}

/// Uniformly distributed unit quaternion from the run seed and a task
/// stream index (deterministic under parallel scheduling).
pub fn random_unit_quaternion(seed: u64, stream: u64) -> Vector4<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    loop {
        let q: Vector4<f64> = Vector4::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let n = q.norm();
        if n > 1e-6 {
            return q / n;
        }
    }
}

fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn run(cli: Cli) -> Result<()> {
    let ctx = RunContext::new(&cli.config, cli.out.clone(), cli.seed)?;
    match cli.command {
        Command::Simulate => cmd_simulate(&ctx),
        Command::Predict { regime, order } => cmd_predict(&ctx, regime, order),
        Command::Sweep => cmd_sweep(&ctx),
        Command::Continue {
            orbit,
            param,
            target,
            step,
            max_points,
        } => cmd_continue(&ctx, &orbit, param, target, step, max_points),
        Command::Compare { regime, order } => cmd_compare(&ctx, regime, order),
    }
}

#[derive(Debug, Serialize)]
struct IcClassification {
    ic_index: usize,
    initial: [f64; 4],
    classification: String,
    period: Option<f64>,
    symmetric: Option<bool>,
    orbit_file: Option<String>,
    detail: Option<String>,
}

#[derive(Debug, Serialize)]
struct SimulateReport {
    a: f64,
    psi: f64,
    horizon: f64,
    transient: f64,
    runs: Vec<IcClassification>,
}

fn initial_conditions(config: &RunConfig) -> Vec<Vector4<f64>> {
    if let Some(q) = config.initial {
        return vec![q / q.norm()];
    }
    if config.n_random_ic == 0 {
        return vec![Vector4::new(0.0, 0.0, 0.0, 1.0)];
    }
    (0..config.n_random_ic)
        .map(|i| random_unit_quaternion(config.seed, i as u64))
        .collect()
}

fn cmd_simulate(ctx: &RunContext) -> Result<()> {
    let params = ctx.config.scalar_params()?;
    let transient = ctx.config.transient_for(&params);
    let ics = initial_conditions(&ctx.config);
    let mut runs = Vec::new();

    for (i, q0) in ics.iter().enumerate() {
        let traj = ctx.integrate_quaternion(&params, q0, ctx.config.horizon)?;

        let mut csv = String::from("t,q1,q2,q3,q4\n");
        for (t, y) in traj.times.iter().zip(&traj.states) {
            csv.push_str(&format!(
                "{},{},{},{},{}\n",
                fmt17(*t),
                fmt17(y[0]),
                fmt17(y[1]),
                fmt17(y[2]),
                fmt17(y[3])
            ));
        }
        ctx.write_csv(&format!("trajectory_{i:03}.csv"), &csv)?;

        let curve = magnetic_frame_curve(&ctx.model, &traj, transient, 600)?;
        ctx.write_csv(&format!("curve_{i:03}.csv"), &curve.to_csv())?;

        let entry = match detect_recurrence(
            &ctx.model,
            &params,
            q0,
            ctx.config.horizon,
            &ctx.config.integrator,
        ) {
            Ok(rec) => {
                match shoot_periodic(
                    &ctx.model,
                    &params,
                    &rec.q0,
                    rec.period,
                    rec.symmetric,
                    &ctx.config.integrator,
                ) {
                    Ok(orbit) => {
                        let orbit_file = format!("orbit_{i:03}.json");
                        ctx.write_json(&orbit_file, &orbit)?;
                        IcClassification {
                            ic_index: i,
                            initial: [q0[0], q0[1], q0[2], q0[3]],
                            classification: "periodic".into(),
                            period: Some(orbit.period),
                            symmetric: Some(orbit.symmetric),
                            orbit_file: Some(orbit_file),
                            detail: None,
                        }
                    }
                    Err(e) => IcClassification {
                        ic_index: i,
                        initial: [q0[0], q0[1], q0[2], q0[3]],
                        classification: "periodic".into(),
                        period: Some(rec.period),
                        symmetric: Some(rec.symmetric),
                        orbit_file: None,
                        detail: Some(format!("shooting refinement failed: {e}")),
                    },
                }
            }
            Err(MagswimError::SteadyState) => IcClassification {
                ic_index: i,
                initial: [q0[0], q0[1], q0[2], q0[3]],
                classification: "steady".into(),
                period: None,
                symmetric: None,
                orbit_file: None,
                detail: None,
            },
            Err(MagswimError::NoRecurrence { .. }) => IcClassification {
                ic_index: i,
                initial: [q0[0], q0[1], q0[2], q0[3]],
                classification: "undetermined".into(),
                period: None,
                symmetric: None,
                orbit_file: None,
                detail: Some("no recurrence within horizon".into()),
            },
            Err(e) => return Err(e),
        };
        runs.push(entry);
    }

    let report = SimulateReport {
        a: params.a,
        psi: params.psi,
        horizon: ctx.config.horizon,
        transient,
        runs,
    };
    let path = ctx.write_json("classification.json", &report)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_predict(ctx: &RunContext, regime: Regime, order: u8) -> Result<()> {
    let params = ctx.config.scalar_params()?;
    match regime {
        Regime::Lowa => {
            let pred = lowa_predict(&ctx.spec, &params)?;
            ctx.write_json("predict_lowa.json", &pred)?;
            match &pred {
                LowAPrediction::Periodic { period_rescaled, .. } => {
                    let samples = lowa_reduced_flow(
                        &ctx.spec,
                        &params,
                        ctx.spec.zeta,
                        (0.0, *period_rescaled),
                        &ctx.config.integrator,
                    )?;
                    let mut csv = String::from("t,lambda,ex,ey,ez\n");
                    for (bigt, lambda) in samples {
                        let axis = lowa_axis_from_phase(&ctx.spec, &params, lambda);
                        csv.push_str(&format!(
                            "{},{},{},{},{}\n",
                            fmt17(bigt / params.a),
                            fmt17(lambda),
                            fmt17(axis.x),
                            fmt17(axis.y),
                            fmt17(axis.z)
                        ));
                    }
                    ctx.write_csv("predict_lowa_curve.csv", &csv)?;
                }
                LowAPrediction::Equilibrium {
                    lambda_stable,
                    lambda_unstable,
                } => {
                    let mut csv = String::from("kind,lambda,ex,ey,ez\n");
                    for (kind, lambda) in
                        [("stable", lambda_stable), ("unstable", lambda_unstable)]
                    {
                        let axis = lowa_axis_from_phase(&ctx.spec, &params, *lambda);
                        csv.push_str(&format!(
                            "{kind},{},{},{},{}\n",
                            fmt17(*lambda),
                            fmt17(axis.x),
                            fmt17(axis.y),
                            fmt17(axis.z)
                        ));
                    }
                    ctx.write_csv("predict_lowa_curve.csv", &csv)?;
                }
            }
            println!("wrote predict_lowa.json");
        }
        Regime::Higha => {
            let pred = higha_predict(&ctx.spec, &ctx.model, &params, 0.0)?;
            let payload = serde_json::json!({
                "aligned_axis": pred.aligned_axis.as_slice(),
                "tau_rate": pred.tau_rate,
                "x_offset": pred.x_offset.as_slice(),
                "tau0": pred.tau0,
                "epsilon": pred.epsilon,
            });
            ctx.write_json("predict_higha.json", &payload)?;
            // One full revolution of the slow drift closes the predicted
            // magnetic-frame curve.
            let t_end = if pred.tau_rate.abs() > 0.0 {
                std::f64::consts::TAU / pred.tau_rate.abs()
            } else {
                ctx.config.horizon
            };
            let n = 2000;
            let mut csv = String::from("t,mx,my,mz\n");
            for (k, p) in pred.sample_curve(t_end, n).iter().enumerate() {
                let t = t_end * k as f64 / n as f64;
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    fmt17(t),
                    fmt17(p.x),
                    fmt17(p.y),
                    fmt17(p.z)
                ));
            }
            ctx.write_csv("predict_higha_curve.csv", &csv)?;
            println!("wrote predict_higha.json (tau_rate = {:.6e})", pred.tau_rate);
        }
        Regime::Smallpsi => {
            if !(order == 1 || order == 2) {
                return Err(MagswimError::Config("smallpsi order must be 1 or 2".into()));
            }
            let pred = smallpsi_predict(&ctx.model, &ctx.spec, &params, order)?;
            let second = pred.second_order().map(|h| {
                serde_json::json!({
                    "w0": h.w0.as_slice(),
                    "wc": h.wc.as_slice(),
                    "ws": h.ws.as_slice(),
                })
            });
            let payload = serde_json::json!({
                "order": order,
                "epsilon": pred.epsilon,
                "varsigma": pred.varsigma,
                "a_matrix": pred.a_matrix.as_slice(),
                "tilde_tau1": pred.tilde_tau1,
                "tilde_tau2": pred.tilde_tau2,
                "center_m0": pred.center_m0.as_slice(),
                "radius_r": pred.radius_r,
                "c": pred.c,
                "outside_advertised_range": pred.outside_advertised_range,
                "second_order": second,
            });
            ctx.write_json("predict_smallpsi.json", &payload)?;
            let n = 720;
            let mut csv = String::from("theta,mx,my,mz\n");
            for (k, p) in pred.sample_curve(n).iter().enumerate() {
                let theta = std::f64::consts::TAU * k as f64 / n as f64;
                csv.push_str(&format!(
                    "{},{},{},{}\n",
                    fmt17(theta),
                    fmt17(p.x),
                    fmt17(p.y),
                    fmt17(p.z)
                ));
            }
            ctx.write_csv("predict_smallpsi_curve.csv", &csv)?;
            println!(
                "wrote predict_smallpsi.json (r = {:.6e}, center = ({:.6e}, {:.6e}, {:.6e}))",
                pred.radius_r, pred.center_m0.x, pred.center_m0.y, pred.center_m0.z
            );
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
enum SweepOutcome {
    Steady,
    Periodic { period: f64 },
    Undetermined,
    Failed { message: String },
}

fn cmd_sweep(ctx: &RunContext) -> Result<()> {
    let n_ic = ctx.config.n_random_ic;
    let mut csv = String::from(
        "a,psi,n_steady,n_periodic,n_undetermined,n_failed,n_distinct_periodic,periods,failures\n",
    );
    if n_ic == 0 {
        let path = ctx.write_csv("catalog.csv", &csv)?;
        println!("wrote {} (empty: n_random_ic = 0)", path.display());
        return Ok(());
    }

    let cells: Vec<(usize, f64, f64)> = ctx
        .config
        .a
        .iter()
        .flat_map(|&a| ctx.config.psi.iter().map(move |&psi| (a, psi)))
        .enumerate()
        .map(|(i, (a, psi))| (i, a, psi))
        .collect();

    let tasks: Vec<(usize, usize)> = cells
        .iter()
        .flat_map(|&(ci, _, _)| (0..n_ic).map(move |ic| (ci, ic)))
        .collect();

    let results: Vec<((usize, usize), SweepOutcome)> = tasks
        .par_iter()
        .map(|&(ci, ic)| {
            let (_, a, psi) = cells[ci];
            let params = Parameters::new(a, psi);
            let stream = (ci * n_ic + ic) as u64;
            let q0 = random_unit_quaternion(ctx.config.seed, stream);
            let outcome = match detect_recurrence(
                &ctx.model,
                &params,
                &q0,
                ctx.config.horizon,
                &ctx.config.integrator,
            ) {
                // Shooting refinement sharpens the period so that phase-
                // shifted settlements on the same orbit cluster together.
                Ok(rec) => {
                    let period = shoot_periodic(
                        &ctx.model,
                        &params,
                        &rec.q0,
                        rec.period,
                        rec.symmetric,
                        &ctx.config.integrator,
                    )
                    .map(|orbit| orbit.period)
                    .unwrap_or(rec.period);
                    SweepOutcome::Periodic { period }
                }
                Err(MagswimError::SteadyState) => SweepOutcome::Steady,
                Err(MagswimError::NoRecurrence { .. }) => SweepOutcome::Undetermined,
                Err(e) => SweepOutcome::Failed {
                    message: e.to_string(),
                },
            };
            ((ci, ic), outcome)
        })
        .collect();

    // Deterministic aggregation ordered by (cell, initial condition).
    let mut by_cell: Vec<Vec<&SweepOutcome>> = vec![Vec::new(); cells.len()];
    let mut sorted = results.iter().collect::<Vec<_>>();
    sorted.sort_by_key(|((ci, ic), _)| (*ci, *ic));
    for ((ci, _), outcome) in sorted {
        by_cell[*ci].push(outcome);
    }

    for &(ci, a, psi) in &cells {
        let outcomes = &by_cell[ci];
        let mut n_steady = 0;
        let mut n_periodic = 0;
        let mut n_und = 0;
        let mut n_failed = 0;
        let mut periods: Vec<f64> = Vec::new();
        let mut failures: Vec<String> = Vec::new();
        for o in outcomes {
            match o {
                SweepOutcome::Steady => n_steady += 1,
                SweepOutcome::Periodic { period } => {
                    n_periodic += 1;
                    // Attractors are distinguished by period (phase-shifted
                    // settlements on the same orbit share it).
                    if !periods.iter().any(|p| (p - period).abs() <= 1e-3 * p.abs()) {
                        periods.push(*period);
                    }
                }
                SweepOutcome::Undetermined => n_und += 1,
                SweepOutcome::Failed { message } => {
                    n_failed += 1;
                    failures.push(message.replace([',', '\n'], ";"));
                }
            }
        }
        periods.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let period_list = periods
            .iter()
            .map(|p| fmt17(*p))
            .collect::<Vec<_>>()
            .join(";");
        csv.push_str(&format!(
            "{},{},{n_steady},{n_periodic},{n_und},{n_failed},{},{period_list},{}\n",
            fmt17(a),
            fmt17(psi),
            periods.len(),
            failures.join("|")
        ));
    }
    let path = ctx.write_csv("catalog.csv", &csv)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn read_orbit_file(path: &Path) -> Result<PeriodicOrbit> {
    let text = fs::read_to_string(path)
        .map_err(|e| MagswimError::Config(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    // Accept both the bare orbit and a wrapper object with metadata.
    let orbit = serde_json::from_value(value.clone())
        .or_else(|_| serde_json::from_value(value["orbit"].clone()));
    orbit.map_err(|e| MagswimError::Config(format!("not an orbit file: {e}")))
}

fn cmd_continue(
    ctx: &RunContext,
    orbit_path: &Path,
    param: ParamName,
    target: f64,
    step: f64,
    max_points: usize,
) -> Result<()> {
    let seed_orbit = read_orbit_file(orbit_path)?;
    let parameter = param.to_parameter();
    let current = parameter.get(&Parameters::new(seed_orbit.a, seed_orbit.psi));
    let signed_step = if target >= current {
        step.abs()
    } else {
        -step.abs()
    };
    let options = ContinuationOptions {
        parameter,
        step: signed_step,
        target: Some(target),
        max_points,
        ..Default::default()
    };
    let branch = continue_branch(&ctx.model, &seed_orbit, &options, &ctx.config.integrator)?;
    ctx.write_csv("branch.csv", &branch.to_csv())?;

    let events: Vec<_> = branch
        .points
        .iter()
        .filter(|p| p.event.is_some())
        .collect();
    let payload = serde_json::json!({
        "parameter": parameter,
        "target": target,
        "n_points": branch.points.len(),
        "events": events,
    });
    let path = ctx.write_json("branch_events.json", &payload)?;
    println!(
        "wrote branch.csv ({} points, {} events), {}",
        branch.points.len(),
        events.len(),
        path.display()
    );
    Ok(())
}

/// Numeric SO(3) period at given parameters, refined by shooting.
fn numeric_period(ctx: &RunContext, params: &Parameters, q0: &Vector4<f64>) -> Result<f64> {
    let rec = detect_recurrence(
        &ctx.model,
        params,
        q0,
        ctx.config.horizon,
        &ctx.config.integrator,
    )?;
    let orbit = shoot_periodic(
        &ctx.model,
        params,
        &rec.q0,
        rec.period,
        rec.symmetric,
        &ctx.config.integrator,
    )?;
    Ok(orbit.period)
}

fn cmd_compare(ctx: &RunContext, regime: Regime, order: u8) -> Result<()> {
    match regime {
        Regime::Lowa => {
            if ctx.config.a.len() != 1 {
                return Err(MagswimError::Config(
                    "lowa comparison sweeps psi at a scalar params.a".into(),
                ));
            }
            let a = ctx.config.a[0];
            // Published error bound for the low Mason number period law.
            let bound = 7.6922e-5;
            let mut csv = String::from(
                "psi,regime,period_numeric,period_analytic,rel_error,within_bound\n",
            );
            println!(
                "{:>8} {:>12} {:>22} {:>22} {:>12} {:>6}",
                "psi", "regime", "T_num", "T_analytic", "rel_err", "bound"
            );
            for (j, &psi) in ctx.config.psi.iter().enumerate() {
                let params = Parameters::new(a, psi);
                match lowa_predict(&ctx.spec, &params)? {
                    LowAPrediction::Equilibrium { .. } => {
                        csv.push_str(&format!("{},equilibrium,,,,\n", fmt17(psi)));
                        println!(
                            "{psi:>8.4} {:>12} {:>22} {:>22} {:>12} {:>6}",
                            "equilibrium", "-", "-", "-", "-"
                        );
                    }
                    LowAPrediction::Periodic { period_physical, .. } => {
                        let q0 = random_unit_quaternion(ctx.config.seed, j as u64);
                        let t_num = numeric_period(ctx, &params, &q0)?;
                        let rel = compare_period(t_num, period_physical)?;
                        let within = rel < bound;
                        csv.push_str(&format!(
                            "{},periodic,{},{},{},{within}\n",
                            fmt17(psi),
                            fmt17(t_num),
                            fmt17(period_physical),
                            fmt17(rel)
                        ));
                        println!(
                            "{psi:>8.4} {:>12} {t_num:>22.15e} {period_physical:>22.15e} {rel:>12.3e} {within:>6}",
                            "periodic"
                        );
                    }
                }
            }
            let path = ctx.write_csv("compare_lowa.csv", &csv)?;
            println!("wrote {}", path.display());
        }
        Regime::Smallpsi => {
            if ctx.config.psi.len() != 1 {
                return Err(MagswimError::Config(
                    "smallpsi comparison sweeps a at a scalar params.psi".into(),
                ));
            }
            let psi = ctx.config.psi[0];
            let mut csv = String::from(
                "a,psi,center_error,radius_error,dist_order1,dist_order2\n",
            );
            println!(
                "{:>8} {:>12} {:>12} {:>12} {:>12}",
                "a", "center_err", "radius_err", "dist_ord1", "dist_ord2"
            );
            for &a in &ctx.config.a {
                let params = Parameters::new(a, psi);
                // The curve must be settled on the attractor; give the
                // transient half the horizon unless configured explicitly.
                let transient = ctx
                    .config
                    .transient
                    .unwrap_or(0.5 * ctx.config.horizon)
                    .max(ctx.config.transient_for(&params));
                let q0 = Vector4::new(0.0, 0.0, 0.0, 1.0);
                let traj = ctx.integrate_quaternion(&params, &q0, ctx.config.horizon)?;
                let curve = magnetic_frame_curve(&ctx.model, &traj, transient, 600)?;
                let fit = fit_circle(&curve.points)?;
                let p1 = smallpsi_predict(&ctx.model, &ctx.spec, &params, 1)?;
                let p2 = smallpsi_predict(&ctx.model, &ctx.spec, &params, order.max(2))?;
                let center_err = (fit.center - p1.center_m0).norm();
                let radius_err = (fit.radius - p1.radius_r).abs();
                let (d1, _) = compare_curves(&curve.points, &p1.sample_curve(720))?;
                let (d2, _) = compare_curves(&curve.points, &p2.sample_curve(720))?;
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    fmt17(a),
                    fmt17(psi),
                    fmt17(center_err),
                    fmt17(radius_err),
                    fmt17(d1),
                    fmt17(d2)
                ));
                println!(
                    "{a:>8.3} {center_err:>12.3e} {radius_err:>12.3e} {d1:>12.3e} {d2:>12.3e}"
                );
            }
            let path = ctx.write_csv("compare_smallpsi.csv", &csv)?;
            println!("wrote {}", path.display());
        }
        Regime::Higha => {
            if ctx.config.a.len() != 1 {
                return Err(MagswimError::Config(
                    "higha comparison sweeps psi at a scalar params.a".into(),
                ));
            }
            let a = ctx.config.a[0];
            let mut csv = String::from("a,psi,tau_rate,max_distance,mean_distance\n");
            println!("{:>8} {:>14} {:>12} {:>12}", "psi", "tau_rate", "max_dist", "mean_dist");
            for &psi in &ctx.config.psi {
                let params = Parameters::new(a, psi);
                let transient = ctx
                    .config
                    .transient
                    .unwrap_or(0.5 * ctx.config.horizon)
                    .max(ctx.config.transient_for(&params));
                let q0 = Vector4::new(0.0, 0.0, 0.0, 1.0);
                let traj = ctx.integrate_quaternion(&params, &q0, ctx.config.horizon)?;
                let curve = magnetic_frame_curve(&ctx.model, &traj, transient, 800)?;
                let pred = higha_predict(&ctx.spec, &ctx.model, &params, 0.0)?;
                let t_end = std::f64::consts::TAU / pred.tau_rate.abs().max(1e-12);
                let predicted = pred.sample_curve(t_end, 3000);
                let (dmax, dmean) = compare_curves(&curve.points, &predicted)?;
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    fmt17(a),
                    fmt17(psi),
                    fmt17(pred.tau_rate),
                    fmt17(dmax),
                    fmt17(dmean)
                ));
                println!(
                    "{psi:>8.4} {:>14.6e} {dmax:>12.3e} {dmean:>12.3e}",
                    pred.tau_rate
                );
            }
            let path = ctx.write_csv("compare_higha.csv", &csv)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

/// Stable machine-readable tag for an error, used in the failure JSON
/// printed by the binary.
pub fn error_kind(e: &MagswimError) -> &'static str {
    use MagswimError::*;
    match e {
        DragParse(_) => "drag_parse",
        SingularDrag => "singular_drag",
        MobilityNotPositiveDefinite { .. } => "mobility_not_positive_definite",
        DegenerateSpectrum { .. } => "degenerate_spectrum",
        ZeroMoment => "zero_moment",
        ZeroQuaternion => "zero_quaternion",
        StepUnderflow { .. } => "step_underflow",
        MaxStepsExceeded { .. } => "max_steps_exceeded",
        InvalidConfig(_) => "invalid_integrator_config",
        NoRecurrence { .. } => "no_recurrence",
        SteadyState => "steady_state",
        NewtonStagnation { .. } => "newton_stagnation",
        SingularShootingJacobian => "singular_shooting_jacobian",
        CorrectorFailure { .. } => "corrector_failure",
        RegimeViolation(_) => "regime_violation",
        Incomparable => "incomparable",
        InfinitePeriodBoundary => "infinite_period_boundary",
        Config(_) => "config",
        Io(_) => "io",
        Json(_) => "json",
    }
}
