//! Command dispatch. Each command produces check records and artifacts;
//! `run` writes them atomically into the output directory.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use lurelq_core::dissipative_system::{check_dissipativity, dissipation_factor, lure_residual};
use lurelq_core::io::{solution_to_json, write_atomic, SystemBundle};
use lurelq_core::lure_lq::{
    analyze, combined_lure_check, maximality_probe, optimal_feedback, value_functions, Analysis, CAUCHY_TOL,
};
use lurelq_core::matrix_core::{norm2, spectral_abscissa, try_spectrum, DEFAULT_CLAMP_TOL};
use lurelq_core::pde_models::integrate;
use lurelq_core::simulate::{auto_horizon, dissipation_balance, simulate_lti, BALANCE_TOL};
use lurelq_core::{Matrix, ModelBundle, ModelKind, Policy, StateSpaceSystem, SupplyRate, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use crate::config::{Command, ConfigError, PolicyChoice, Profile, RunConfig};
use crate::report::{CheckRecord, RunReport, Stamp};

/// LMI slack relative to `max(1, ‖W‖₂)`.
pub const LMI_TOL: f64 = 1e-9;
pub const LURE_TOL: f64 = 1e-7;
pub const IDENTITY_TOL: f64 = 1e-10;
/// Relative tolerance of computed values against closed forms.
pub const VALUE_TOL: f64 = 0.05;
pub const MAXIMALITY_TOL: f64 = 1e-6;
/// Horizon cap for the simulation inside `report`.
pub const REPORT_HORIZON: f64 = 2.0;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("numerical failure: {0}")]
    Numerical(#[from] lurelq_core::Error),
}

impl RunError {
    pub fn exit_code(&self) -> u8 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numerical(_) => 3,
        }
    }
}

struct Artifact {
    name: &'static str,
    bytes: Vec<u8>,
}

struct Problem {
    label: String,
    sys: StateSpaceSystem,
    sr: SupplyRate,
    p: Matrix,
    model: Option<ModelBundle>,
}

impl Problem {
    fn load(cfg: &RunConfig) -> Result<Self, RunError> {
        if let Some(kind) = cfg.model.kind() {
            let m = kind.build(cfg.n)?;
            return Ok(Self {
                label: kind.to_string(),
                sys: m.sys.clone(),
                sr: m.sr.clone(),
                p: m.p.clone(),
                model: Some(m),
            });
        }
        let path = cfg.input_bundle.as_deref().expect("validated");
        let text = fs::read_to_string(path).map_err(|e| ConfigError {
            key: "input_bundle".into(),
            message: format!("{}: {e}", path.display()),
        })?;
        let b = SystemBundle::from_json(&text).map_err(|e| ConfigError {
            key: "input_bundle".into(),
            message: e.to_string(),
        })?;
        Ok(Self {
            label: "file".into(),
            sys: b.sys,
            sr: b.sr,
            p: b.p,
            model: None,
        })
    }

    fn analyze(&self, cfg: &RunConfig) -> Result<Analysis, RunError> {
        Ok(analyze(&self.sys, &self.sr, &self.p, &cfg.eps_schedule)?)
    }

    /// Initial state from the configured profile. File bundles are sampled at
    /// uniform cell centres.
    fn initial_state(&self, cfg: &RunConfig) -> Vector {
        let f = profile_fn(cfg.x0, cfg.seed);
        match &self.model {
            Some(m) => m.sample(f),
            None => {
                let n = self.sys.n();
                Vector::from_fn(n, |i, _| f((i as f64 + 0.5) / n as f64))
            }
        }
    }

    /// Closed-form `(val_J, val_Jw)` for a scalar profile, where known.
    fn exact_values(&self, f: &dyn Fn(f64) -> f64) -> Option<(f64, f64)> {
        let sq = integrate(|s| f(s).powi(2));
        match self.model.as_ref()?.kind {
            ModelKind::Transport => Some((2.0 * sq, sq)),
            // the profile is x₁ with x₂ = 0
            ModelKind::Wave => Some((-0.5 * sq, 0.5 * sq)),
            ModelKind::Heat => None,
        }
    }
}

pub fn profile_fn(profile: Profile, seed: u64) -> Box<dyn Fn(f64) -> f64 + Send + Sync> {
    match profile {
        Profile::Sine => Box::new(|s| (PI * s).sin()),
        Profile::Indicator | Profile::Ones => Box::new(|_| 1.0),
        Profile::Exp => Box::new(|s: f64| (-s).exp()),
        Profile::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            Box::new(move |s| {
                c.iter()
                    .enumerate()
                    .map(|(k, ck)| ck * ((k + 1) as f64 * PI * s).sin() / (k + 1) as f64)
                    .sum()
            })
        }
    }
}

/// Run a validated configuration and write its artifacts and `report.json`.
pub fn run(cfg: &RunConfig) -> Result<RunReport, RunError> {
    let problem = Problem::load(cfg)?;
    let (checks, artifacts) = match cfg.command {
        Command::Check => (lmi_checks(&problem)?, Vec::new()),
        Command::Factorize => factorize(&problem)?,
        Command::Solve => solve(&problem, cfg)?,
        Command::Simulate => simulate(&problem, cfg, None)?,
        Command::Values => values(&problem, cfg)?,
        Command::Sweep => sweep(&problem, cfg)?,
        Command::Report => (report_checks(&problem, cfg)?, Vec::new()),
    };
    let mut report = RunReport::new(
        cfg.command.as_str(),
        &problem.label,
        problem.sys.n(),
        checks,
        Stamp::now(cfg.seed),
    );
    write_outputs(&cfg.out_dir, &mut report, artifacts)?;
    Ok(report)
}

fn write_outputs(dir: &Path, report: &mut RunReport, artifacts: Vec<Artifact>) -> Result<(), RunError> {
    for a in artifacts {
        write_atomic(&dir.join(a.name), &a.bytes)?;
        report.artifacts.push(a.name.to_string());
    }
    write_atomic(&dir.join("report.json"), report.to_json().as_bytes())?;
    Ok(())
}

/// Best-effort diagnostics for a failed run.
pub fn write_failure(dir: &Path, cfg_text: &str, err: &RunError, seed: u64) {
    let doc = json!({
        "error": err.to_string(),
        "exit_status": err.exit_code(),
        "config": cfg_text,
        "stamp": Stamp::now(seed),
    });
    let _ = write_atomic(
        &dir.join("error.json"),
        serde_json::to_string_pretty(&doc).unwrap_or_default().as_bytes(),
    );
}

fn lmi_checks(pb: &Problem) -> Result<Vec<CheckRecord>, RunError> {
    let w = lure_residual(&pb.sys, &pb.sr, &pb.p)?;
    let (_, min_eig) = check_dissipativity(&pb.sys, &pb.sr, &pb.p, DEFAULT_CLAMP_TOL)?;
    Ok(vec![CheckRecord::at_least(
        "lmi_min_eig",
        min_eig,
        -LMI_TOL * norm2(&w).max(1.0),
    )])
}

fn factorize(pb: &Problem) -> Result<(Vec<CheckRecord>, Vec<Artifact>), RunError> {
    let mut checks = lmi_checks(pb)?;
    let cert = dissipation_factor(&pb.sys, &pb.sr, &pb.p, DEFAULT_CLAMP_TOL)?;
    let w = lure_residual(&pb.sys, &pb.sr, &pb.p)?;
    let mut kl = Matrix::zeros(cert.rank_w, pb.sys.n() + pb.sys.m());
    kl.columns_mut(0, pb.sys.n()).copy_from(&cert.k);
    kl.columns_mut(pb.sys.n(), pb.sys.m()).copy_from(&cert.l);
    let err = (&w - kl.transpose() * &kl).norm() / (1.0 + w.norm());
    checks.push(CheckRecord::at_most("factor_residual", err, LMI_TOL));
    let bundle = SystemBundle {
        sys: pb.sys.clone(),
        sr: pb.sr.clone(),
        p: pb.p.clone(),
        factor: None,
    }
    .with_certificate(&cert);
    Ok((
        checks,
        vec![Artifact {
            name: "bundle.json",
            bytes: bundle.to_json()?.into_bytes(),
        }],
    ))
}

fn solve_checks(pb: &Problem, an: &Analysis) -> Result<(Vec<CheckRecord>, Matrix, bool), RunError> {
    let sol = &an.sol;
    let last = sol.increments.last().copied().unwrap_or(f64::INFINITY);
    let (fb, solvable) = optimal_feedback(&pb.sys, sol, 1e-6)?;
    let checks = vec![
        CheckRecord::at_most("cauchy_increment", last, CAUCHY_TOL * (1.0 + sol.p_w.norm())),
        CheckRecord::at_most(
            "lure_residual",
            combined_lure_check(&pb.sys, &pb.sr, &pb.p, sol)?,
            LURE_TOL,
        ),
        CheckRecord::below("closed_loop_abscissa", fb.abscissa(), 0.0),
    ];
    Ok((checks, fb.gain, solvable))
}

fn solve(pb: &Problem, cfg: &RunConfig) -> Result<(Vec<CheckRecord>, Vec<Artifact>), RunError> {
    let an = pb.analyze(cfg)?;
    let (checks, gain, solvable) = solve_checks(pb, &an)?;
    let rows: Vec<Vec<f64>> = gain.row_iter().map(|r| r.iter().copied().collect()).collect();
    let feedback = json!({ "gain": rows, "range_condition": solvable });
    let artifacts = vec![
        Artifact {
            name: "solution.json",
            bytes: solution_to_json(&an.sol)?.into_bytes(),
        },
        Artifact {
            name: "feedback.json",
            bytes: serde_json::to_string_pretty(&feedback).unwrap().into_bytes(),
        },
    ];
    Ok((checks, artifacts))
}

fn simulate(pb: &Problem, cfg: &RunConfig, cap: Option<f64>) -> Result<(Vec<CheckRecord>, Vec<Artifact>), RunError> {
    let an = pb.analyze(cfg)?;
    let (policy, abscissa) = match cfg.policy {
        PolicyChoice::Optimal => {
            let fb = optimal_feedback(&pb.sys, &an.sol, 1e-6)?.0;
            (Policy::Gain(fb.gain.clone()), fb.abscissa())
        }
        PolicyChoice::Zero => (
            Policy::Zero,
            try_spectrum(&pb.sys.a).map_or(0.0, |s| spectral_abscissa(&s)),
        ),
    };
    let mut t_final = cfg.t_final.unwrap_or_else(|| auto_horizon(abscissa));
    if let Some(cap) = cap {
        t_final = t_final.min(cap);
    }
    let x0 = pb.initial_state(cfg);
    let traj = simulate_lti(&an.ext, &x0, &policy, t_final.max(cfg.dt), cfg.dt)?;
    let bal = dissipation_balance(&traj, &pb.sr, &pb.p)?;
    let tol = BALANCE_TOL * (1.0 + bal.lhs.abs());
    let checks = vec![
        CheckRecord::near("balance", bal.lhs, bal.rhs, tol),
        CheckRecord::at_least("dissipation_inequality", bal.lhs, -tol),
    ];
    let mut csv = Vec::new();
    traj.write_csv(&mut csv).map_err(lurelq_core::Error::from)?;
    let script = plot_script(traj.outputs[0].len(), traj.w_outputs[0].len());
    Ok((
        checks,
        vec![
            Artifact {
                name: "trajectory.csv",
                bytes: csv,
            },
            Artifact {
                name: "plot.gp",
                bytes: script.into_bytes(),
            },
        ],
    ))
}

fn plot_script(p: usize, r: usize) -> String {
    let series: Vec<String> = (1..=p)
        .map(|i| format!("y_{i}"))
        .chain((1..=r).map(|i| format!("w_{i}")))
        .map(|c| format!("'trajectory.csv' using 't':'{c}' with lines title '{c}'"))
        .collect();
    format!(
        "# gnuplot plot.gp\n\
         set datafile separator ','\n\
         set terminal pngcairo size 900,600\n\
         set output 'trajectory.png'\n\
         set xlabel 't'\n\
         set grid\n\
         plot {}\n",
        series.join(", \\\n     ")
    )
}

fn values(pb: &Problem, cfg: &RunConfig) -> Result<(Vec<CheckRecord>, Vec<Artifact>), RunError> {
    let an = pb.analyze(cfg)?;
    let x0 = pb.initial_state(cfg);
    let v = value_functions(&pb.p, &an.sol, &x0);
    let mut checks = vec![CheckRecord::at_most(
        "identity_gap",
        v.identity_gap,
        IDENTITY_TOL * (1.0 + v.val_j.abs()),
    )];
    match pb.exact_values(&profile_fn(cfg.x0, cfg.seed)) {
        Some((j, jw)) => {
            checks.push(CheckRecord::near("val_J", v.val_j, j, VALUE_TOL * j.abs()));
            checks.push(CheckRecord::near("val_Jw", v.val_jw, jw, VALUE_TOL * jw.abs()));
        }
        None => {
            // P_w is PSD, so Val_Jw cannot be negative beyond the clamp.
            let scale = pb.sys.state_norm(&x0).powi(2);
            checks.push(CheckRecord::at_least("val_Jw", v.val_jw, -LMI_TOL * scale.max(1.0)));
        }
    }
    let doc = json!({
        "val_J": v.val_j,
        "val_Jw": v.val_jw,
        "storage_at_x0": v.storage_at_x0,
        "identity_gap": v.identity_gap,
        "converged": an.sol.converged,
    });
    Ok((
        checks,
        vec![Artifact {
            name: "values.json",
            bytes: serde_json::to_string_pretty(&doc).unwrap().into_bytes(),
        }],
    ))
}

/// Grid levels `n/8, n/4, n/2, n`, deduplicated and at least the model minimum.
fn sweep_levels(kind: ModelKind, n: usize) -> Vec<usize> {
    let min = if kind == ModelKind::Heat { 3 } else { 2 };
    let mut levels: Vec<usize> = [8, 4, 2, 1].iter().map(|d| (n / d).max(min)).collect();
    levels.dedup();
    levels
}

struct SweepRow {
    n: usize,
    val_j: f64,
    val_jw: f64,
    lure: f64,
}

fn sweep(pb: &Problem, cfg: &RunConfig) -> Result<(Vec<CheckRecord>, Vec<Artifact>), RunError> {
    let kind = pb.model.as_ref().expect("validated").kind;
    let rows = sweep_levels(kind, cfg.n)
        .into_par_iter()
        .map(|n| {
            let m = kind.build(n)?;
            let an = analyze(&m.sys, &m.sr, &m.p, &cfg.eps_schedule)?;
            let v = value_functions(&m.p, &an.sol, &m.sample(profile_fn(cfg.x0, cfg.seed)));
            let lure = combined_lure_check(&m.sys, &m.sr, &m.p, &an.sol)?;
            Ok(SweepRow {
                n,
                val_j: v.val_j,
                val_jw: v.val_jw,
                lure,
            })
        })
        .collect::<Result<Vec<_>, lurelq_core::Error>>()?;
    // Heat has no closed form; its errors are measured against the finest grid.
    let finest = rows.last().expect("at least one level");
    let exact = pb.exact_values(&profile_fn(cfg.x0, cfg.seed));
    let (ref_j, ref_jw) = exact.unwrap_or((finest.val_j, finest.val_jw));
    let mut csv = String::from("n,val_err_J,val_err_Jw,lure_residual\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{:.16e},{:.16e},{:.16e}\n",
            r.n,
            (r.val_j - ref_j).abs(),
            (r.val_jw - ref_jw).abs(),
            r.lure
        ));
    }
    let worst_lure = rows.iter().map(|r| r.lure).fold(0.0, f64::max);
    let mut checks = vec![CheckRecord::at_most("lure_residual_max", worst_lure, LURE_TOL)];
    if exact.is_some() {
        checks.push(CheckRecord::near(
            "val_J_finest",
            finest.val_j,
            ref_j,
            VALUE_TOL * ref_j.abs(),
        ));
        checks.push(CheckRecord::near(
            "val_Jw_finest",
            finest.val_jw,
            ref_jw,
            VALUE_TOL * ref_jw.abs(),
        ));
    }
    Ok((
        checks,
        vec![Artifact {
            name: "sweep.csv",
            bytes: csv.into_bytes(),
        }],
    ))
}

/// All checks for one problem: LMI, factor, solve, values, a simulation of
/// at most [`REPORT_HORIZON`] time units, maximality and ε-monotonicity.
fn report_checks(pb: &Problem, cfg: &RunConfig) -> Result<Vec<CheckRecord>, RunError> {
    let mut checks = factorize(pb)?.0;
    let an = pb.analyze(cfg)?;
    checks.extend(solve_checks(pb, &an)?.0);
    checks.extend(values(pb, cfg)?.0.into_iter().map(|mut c| {
        c.name = format!("values.{}", c.name);
        c
    }));
    checks.extend(simulate(pb, cfg, Some(REPORT_HORIZON))?.0.into_iter().map(|mut c| {
        c.name = format!("simulate.{}", c.name);
        c
    }));
    let probe = maximality_probe(&pb.sys, &pb.sr, &pb.p, &an.sol, 20, 50, cfg.seed)?;
    checks.push(CheckRecord::at_most(
        "maximality_violation",
        probe.max_violation,
        MAXIMALITY_TOL,
    ));
    checks.push(CheckRecord::at_most(
        "eps_monotonicity",
        eps_monotonicity(&an, cfg.seed),
        1e-8,
    ));
    Ok(checks)
}

/// Largest increase of `x₀ᵀP_w(ε)x₀` along the schedule over 20 random states.
fn eps_monotonicity(an: &Analysis, seed: u64) -> f64 {
    let n = an.sol.p_w.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..20 {
        let x = Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let vals: Vec<f64> = an.sol.p_w_per_eps.iter().map(|p| x.dot(&(p * &x))).collect();
        for w in vals.windows(2) {
            worst = worst.max(w[1] - w[0]);
        }
    }
    if worst.is_finite() {
        worst
    } else {
        0.0
    }
}
