//! Exact zero-order-hold simulation, trapezoid cost quadrature and the
//! trajectory-level dissipation balance.

use std::io::Write;

use crate::dissipative_system::{supply_eval, w_norm_supply, ExtendedSystem, SupplyRate};
use crate::error::{Error, Result};
use crate::lure_lq::feedback_cost_matrix;
use crate::matrix_core::{matexp, Matrix, Vector};

/// Input applied during a simulation.
#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    Zero,
    /// `u = F·x`, integrated exactly through the closed-loop exponential.
    Gain(Matrix),
    /// Open-loop samples held constant over each step; the last value is
    /// held past the end of the table.
    Table(Vec<Vector>),
}

impl Policy {
    fn name(&self) -> &'static str {
        match self {
            Policy::Zero => "zero",
            Policy::Gain(_) => "gain",
            Policy::Table(_) => "table",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    pub inputs: Vec<Vector>,
    pub outputs: Vec<Vector>,
    pub w_outputs: Vec<Vector>,
    pub dt: f64,
    pub integrator: String,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn t_final(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    /// CSV with header `t,x_1..x_n,u_1..u_m,y_1..y_p,w_1..w_r` and 17
    /// significant digits per value.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        let dims = |v: &[Vector]| v.first().map_or(0, |x| x.len());
        let mut header = vec!["t".to_string()];
        for (prefix, count) in [
            ("x", dims(&self.states)),
            ("u", dims(&self.inputs)),
            ("y", dims(&self.outputs)),
            ("w", dims(&self.w_outputs)),
        ] {
            header.extend((1..=count).map(|i| format!("{prefix}_{i}")));
        }
        writeln!(out, "{}", header.join(","))?;
        for k in 0..self.len() {
            let row = std::iter::once(self.times[k])
                .chain(self.states[k].iter().copied())
                .chain(self.inputs[k].iter().copied())
                .chain(self.outputs[k].iter().copied())
                .chain(self.w_outputs[k].iter().copied())
                .map(|v| format!("{v:.16e}"))
                .collect::<Vec<_>>();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn step_count(t_final: f64, dt: f64) -> Result<usize> {
    if !dt.is_finite() || dt <= 0.0 {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    if !t_final.is_finite() || t_final < dt {
        return Err(Error::InvalidArgument(format!(
            "horizon must be at least one step, got T={t_final}"
        )));
    }
    Ok((t_final / dt).round() as usize)
}

/// Simulate the extended system on `[0, T]` with step `dt`.
pub fn simulate_lti(ext: &ExtendedSystem, x0: &Vector, policy: &Policy, t_final: f64, dt: f64) -> Result<Trajectory> {
    let sys = &ext.base;
    let (n, m) = (sys.n(), sys.m());
    if x0.len() != n {
        return Err(Error::Shape(format!(
            "initial state has length {}, expected {n}",
            x0.len()
        )));
    }
    let steps = step_count(t_final, dt)?;
    let p = ext.y_rows();

    // x_{k+1} = Φ x_k + Γ u_k
    let (phi, gamma) = match policy {
        Policy::Zero => (matexp(&sys.a, dt)?, Matrix::zeros(n, m)),
        Policy::Gain(f) => {
            if f.shape() != (m, n) {
                return Err(Error::Shape(format!("gain must be {m}x{n}")));
            }
            (matexp(&(&sys.a + &sys.b * f), dt)?, Matrix::zeros(n, m))
        }
        Policy::Table(values) => {
            if values.is_empty() || values.iter().any(|u| u.len() != m) {
                return Err(Error::Shape(format!(
                    "input table must be non-empty with entries in R^{m}"
                )));
            }
            let mut aug = Matrix::zeros(n + m, n + m);
            aug.view_mut((0, 0), (n, n)).copy_from(&sys.a);
            aug.view_mut((0, n), (n, m)).copy_from(&sys.b);
            let e = matexp(&aug, dt)?;
            (e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, m)).into_owned())
        }
    };
    let input = |k: usize, x: &Vector| -> Vector {
        match policy {
            Policy::Zero => Vector::zeros(m),
            Policy::Gain(f) => f * x,
            Policy::Table(values) => values[k.min(values.len() - 1)].clone(),
        }
    };

    let mut traj = Trajectory {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        inputs: Vec::with_capacity(steps + 1),
        outputs: Vec::with_capacity(steps + 1),
        w_outputs: Vec::with_capacity(steps + 1),
        dt,
        integrator: format!("zoh-exact policy={} dt={dt:e} steps={steps}", policy.name()),
    };
    let mut x = x0.clone();
    for k in 0..=steps {
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Diverged { index: k });
        }
        let u = input(k, &x);
        let out = sys.output(&x, &u);
        traj.times.push(k as f64 * dt);
        traj.outputs.push(out.rows(0, p).into_owned());
        traj.w_outputs.push(out.rows(p, ext.w_rows).into_owned());
        traj.inputs.push(u.clone());
        let next = &phi * &x + &gamma * &u;
        traj.states.push(std::mem::replace(&mut x, next));
    }
    Ok(traj)
}

/// Neumaier-compensated trapezoid rule on a uniform grid.
fn trapezoid(values: impl ExactSizeIterator<Item = f64>, dt: f64) -> f64 {
    let len = values.len();
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for (k, v) in values.enumerate() {
        let term = if k == 0 || k + 1 == len { 0.5 * v } else { v };
        let t = sum + term;
        comp += if sum.abs() >= term.abs() {
            (sum - t) + term
        } else {
            (term - t) + sum
        };
        sum = t;
    }
    (sum + comp) * dt
}

/// Trapezoid approximation of `∫ s(y, u) dt`. The supply may act either on
/// `y` alone or on the stacked `(y, w)`.
pub fn cost_quadrature(traj: &Trajectory, sr: &SupplyRate) -> Result<f64> {
    if traj.is_empty() {
        return Err(Error::InvalidArgument("empty trajectory".into()));
    }
    let p = traj.outputs[0].len();
    let r = traj.w_outputs[0].len();
    let stacked = if sr.p() == p {
        false
    } else if sr.p() == p + r {
        true
    } else {
        return Err(Error::Shape(format!(
            "supply acts on R^{}, trajectory has {p} outputs and {r} w-rows",
            sr.p()
        )));
    };
    let samples = (0..traj.len())
        .map(|k| {
            let y = if stacked {
                Vector::from_iterator(p + r, traj.outputs[k].iter().chain(traj.w_outputs[k].iter()).copied())
            } else {
                traj.outputs[k].clone()
            };
            supply_eval(sr, &y, &traj.inputs[k])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(trapezoid(samples.into_iter(), traj.dt))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalanceReport {
    /// `S(x(T)) − S(x(0)) + ∫s`
    pub lhs: f64,
    /// `∫‖w‖²`
    pub rhs: f64,
    pub gap: f64,
    pub t_final: f64,
    /// Dissipation inequality `lhs ≥ −tol·(1 + |lhs|)`.
    pub lhs_ineq: bool,
}

/// Default relative tolerance on the balance gap for `dt = 1e-3`.
pub const BALANCE_TOL: f64 = 1e-4;

/// Dissipation equality over the trajectory for storage `xᵀPx`.
pub fn dissipation_balance(traj: &Trajectory, sr: &SupplyRate, p: &Matrix) -> Result<BalanceReport> {
    if traj.is_empty() {
        return Err(Error::InvalidArgument("empty trajectory".into()));
    }
    let storage = |x: &Vector| x.dot(&(p * x));
    let x0 = &traj.states[0];
    let xt = &traj.states[traj.len() - 1];
    if x0.len() != p.nrows() {
        return Err(Error::Shape("storage matrix does not match the state dimension".into()));
    }
    let lhs = storage(xt) - storage(x0) + cost_quadrature(traj, sr)?;
    let (py, r, m) = (traj.outputs[0].len(), traj.w_outputs[0].len(), traj.inputs[0].len());
    let rhs = cost_quadrature(traj, &w_norm_supply(py, r, m))?;
    Ok(BalanceReport {
        lhs,
        rhs,
        gap: (lhs - rhs).abs(),
        t_final: traj.t_final(),
        lhs_ineq: lhs >= -BALANCE_TOL * (1.0 + lhs.abs()),
    })
}

/// Exact transport solution by characteristics on the cell-centre grid.
///
/// `x(ξ, t) = x₀(ξ − t)` for `ξ ≥ t` and `u(t − ξ)` otherwise, with `x₀`
/// interpolated linearly between samples and `u` held constant over each
/// table step. The output is `y(t) = x(1, t)`; the dissipation output of
/// the continuous system equals `y`, so `w_outputs` repeats it.
pub fn transport_characteristics(x0: &Vector, u_table: &[f64], t_final: f64, dt: f64) -> Result<Trajectory> {
    let n = x0.len();
    if n < 2 {
        return Err(Error::InvalidArgument("need at least two samples".into()));
    }
    let steps = step_count(t_final, dt)?;
    let h = 1.0 / n as f64;
    let initial = |s: f64| -> f64 {
        let pos = (s / h - 0.5).clamp(0.0, (n - 1) as f64);
        let i = (pos.floor() as usize).min(n - 2);
        let frac = pos - i as f64;
        x0[i] * (1.0 - frac) + x0[i + 1] * frac
    };
    let input = |tau: f64| -> f64 {
        if u_table.is_empty() {
            return 0.0;
        }
        let k = (tau / dt + 1e-9).floor().max(0.0) as usize;
        u_table[k.min(u_table.len() - 1)]
    };
    let field = |s: f64, t: f64| if s >= t { initial(s - t) } else { input(t - s) };

    let mut traj = Trajectory {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        inputs: Vec::with_capacity(steps + 1),
        outputs: Vec::with_capacity(steps + 1),
        w_outputs: Vec::with_capacity(steps + 1),
        dt,
        integrator: format!("characteristics dt={dt:e} steps={steps}"),
    };
    for k in 0..=steps {
        let t = k as f64 * dt;
        traj.times.push(t);
        traj.states
            .push(Vector::from_fn(n, |i, _| field((i as f64 + 0.5) * h, t)));
        traj.inputs.push(Vector::from_element(1, input(t)));
        let y = Vector::from_element(1, field(1.0, t));
        traj.outputs.push(y.clone());
        traj.w_outputs.push(y);
    }
    Ok(traj)
}

/// `T = min(50, 8/|α|)` for closed-loop spectral abscissa `α < 0`.
pub fn auto_horizon(abscissa: f64) -> f64 {
    if abscissa < 0.0 {
        (8.0 / abscissa.abs()).min(50.0)
    } else {
        50.0
    }
}

#[derive(Debug, Clone)]
pub struct HorizonCost {
    pub trajectory: Trajectory,
    /// Trapezoid cost on `[0, T]`.
    pub cost: f64,
    /// Exact remaining cost `x(T)ᵀZx(T)` of the closed loop beyond `T`.
    pub tail: f64,
    /// Whether `‖x(T)‖_G ≤ 1e-4‖x₀‖_G` was reached.
    pub decayed: bool,
}

/// Cost of a stabilizing feedback on a horizon long enough for the state to
/// decay by four orders of magnitude (capped at `t_max`), plus the tail.
pub fn horizon_cost(
    ext: &ExtendedSystem,
    sr: &SupplyRate,
    x0: &Vector,
    gain: &Matrix,
    t_start: f64,
    t_max: f64,
    dt: f64,
) -> Result<HorizonCost> {
    let sys = ext.plain();
    let mut t = t_start.max(dt);
    loop {
        let traj = simulate_lti(ext, x0, &Policy::Gain(gain.clone()), t, dt)?;
        let xt = &traj.states[traj.len() - 1];
        let decayed = sys.state_norm(xt) <= 1e-4 * sys.state_norm(x0);
        if decayed || t >= t_max {
            let z = feedback_cost_matrix(&sys, sr, gain)?;
            let tail = xt.dot(&(&z * xt));
            let cost = cost_quadrature(&traj, sr)?;
            return Ok(HorizonCost {
                trajectory: traj,
                cost,
                tail,
                decayed,
            });
        }
        t = (2.0 * t).min(t_max);
    }
}
