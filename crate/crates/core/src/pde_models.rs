//! Semi-discretizations of three boundary-controlled PDEs on `(0, 1)`:
//! transport, a damped wave equation and the heat equation.
//!
//! Transport and wave use the box scheme on characteristic variables. A box
//! cell with value `z` and inflow face value `f` has outflow face value
//! `2z − f`; the cell update `ż = (f_in − f_out)/h` then satisfies
//! `d/dt (h z²) = f_in² − f_out²` exactly, so the discrete energy balance matches
//! the continuous one with no numerical dissipation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dissipative_system::{StateSpaceSystem, SupplyRate};
use crate::error::{Error, Result};
use crate::matrix_core::{Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Transport,
    Wave,
    Heat,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Transport, ModelKind::Wave, ModelKind::Heat];

    pub fn build(self, n: usize) -> Result<ModelBundle> {
        match self {
            ModelKind::Transport => build_transport(n),
            ModelKind::Wave => build_wave(n),
            ModelKind::Heat => build_heat(n),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Transport => "transport",
            ModelKind::Wave => "wave",
            ModelKind::Heat => "heat",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transport" => Ok(ModelKind::Transport),
            "wave" => Ok(ModelKind::Wave),
            "heat" => Ok(ModelKind::Heat),
            other => Err(Error::InvalidArgument(format!("unknown model '{other}'"))),
        }
    }
}

/// A discretized model together with its supply rate and storage matrix.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub kind: ModelKind,
    pub n: usize,
    pub h: f64,
    pub sys: StateSpaceSystem,
    pub sr: SupplyRate,
    /// Storage `S(x) = xᵀPx`.
    pub p: Matrix,
}

impl ModelBundle {
    /// Sample a scalar initial profile. For the wave model the profile is
    /// taken as the displacement-gradient component `x₁` with `x₂ = 0`.
    pub fn sample(&self, profile: impl Fn(f64) -> f64) -> Vector {
        match self.kind {
            ModelKind::Transport => Vector::from_iterator(self.n, cell_centres(self.n).map(profile)),
            ModelKind::Heat => Vector::from_iterator(self.n - 1, (1..self.n).map(|i| profile(i as f64 * self.h))),
            ModelKind::Wave => sample_wave(self.n, profile, |_| 0.0),
        }
    }

    /// Spatial coordinates of the state nodes (wave: cells of `a`, then faces of `b`).
    pub fn nodes(&self) -> Vec<f64> {
        match self.kind {
            ModelKind::Transport => cell_centres(self.n).collect(),
            ModelKind::Heat => (1..self.n).map(|i| i as f64 * self.h).collect(),
            ModelKind::Wave => cell_centres(self.n)
                .chain((1..=self.n).map(|j| j as f64 * self.h))
                .collect(),
        }
    }

    pub fn meta(&self) -> Vec<(&'static str, String)> {
        vec![
            ("model", self.kind.to_string()),
            ("n", self.n.to_string()),
            ("h", format!("{:e}", self.h)),
            ("states", self.sys.n().to_string()),
        ]
    }
}

fn cell_centres(n: usize) -> impl Iterator<Item = f64> {
    let h = 1.0 / n as f64;
    (0..n).map(move |i| (i as f64 + 0.5) * h)
}

/// Face values of a box-scheme channel in flow order.
///
/// Row `k` of `fz` (resp. entry `k` of `fin`) gives face `k` as a combination of
/// the cell values (resp. of the inflow value); face 0 is the inflow face and
/// face `n` the outflow face. Cell `k` lies between faces `k` and `k + 1`.
struct BoxChannel {
    fz: Matrix,
    fin: Vec<f64>,
}

impl BoxChannel {
    fn new(n: usize) -> Self {
        let mut fz = Matrix::zeros(n + 1, n);
        let mut fin = vec![0.0; n + 1];
        fin[0] = 1.0;
        for k in 0..n {
            let prev = fz.row(k).into_owned();
            fz.row_mut(k + 1).copy_from(&(-prev));
            fz[(k + 1, k)] += 2.0;
            fin[k + 1] = -fin[k];
        }
        Self { fz, fin }
    }
}

fn check_n(n: usize, min: usize, what: &str) -> Result<()> {
    if n < min {
        Err(Error::InvalidArgument(format!("{what} needs n >= {min}, got {n}")))
    } else {
        Ok(())
    }
}

/// `∂ₜx = −∂_ξx`, `u = x(0)`, `y = x(1)`, `s = 2|y|² − |u|²`, `S(x) = ‖x‖²`.
///
/// States are box-cell values at the cell centres; the output is the outflow
/// face value, which carries a feedthrough `D = (−1)ⁿ`.
pub fn build_transport(n: usize) -> Result<ModelBundle> {
    check_n(n, 2, "transport")?;
    let h = 1.0 / n as f64;
    let ch = BoxChannel::new(n);
    let mut a = Matrix::zeros(n, n);
    let mut b = Matrix::zeros(n, 1);
    for k in 0..n {
        a.row_mut(k).copy_from(&((ch.fz.row(k) - ch.fz.row(k + 1)) / h));
        b[(k, 0)] = (ch.fin[k] - ch.fin[k + 1]) / h;
    }
    let c = ch.fz.rows(n, 1).into_owned();
    let d = Matrix::from_element(1, 1, ch.fin[n]);
    let gram = Matrix::identity(n, n) * h;
    let sys = StateSpaceSystem::new(a, b, c, d, gram.clone())?;
    let sr = SupplyRate::euclidean(
        Matrix::from_element(1, 1, 2.0),
        Matrix::zeros(1, 1),
        Matrix::from_element(1, 1, -1.0),
    )?;
    Ok(ModelBundle {
        kind: ModelKind::Transport,
        n,
        h,
        sys,
        sr,
        p: gram,
    })
}

/// Wave system `∂ₜ(x₁, x₂) = [[0, 1], [1, 0]]∂_ξ(x₁, x₂)` with damper
/// `x₁(0) = x₂(0)`, input `u = x₂(1)`, output `y = x₁(1)`, supply `2uy` and
/// storage `−‖x‖²`.
///
/// Written in the characteristic variables `a = x₁ + x₂` (moving left, entering
/// at ξ = 1 with `a(1) = b(1) + 2u`) and `b = x₁ − x₂` (moving right, entering at
/// ξ = 0 with `b(0) = 0`). The state is `a` on the `n` cells followed by `b` on
/// the faces `ξ = h, …, 1`, so that `y = b(1) + u` reads a single node.
pub fn build_wave(n: usize) -> Result<ModelBundle> {
    check_n(n, 2, "wave")?;
    let (a, b, t) = wave_generator(n, false);
    let h = 1.0 / n as f64;
    let dim = 2 * n;
    let mut c = Matrix::zeros(1, dim);
    c[(0, dim - 1)] = 1.0;
    let d = Matrix::from_element(1, 1, 1.0);
    let mut gram = Matrix::zeros(dim, dim);
    gram.view_mut((0, 0), (n, n)).fill_with_identity();
    gram.view_mut((0, 0), (n, n)).scale_mut(h / 2.0);
    gram.view_mut((n, n), (n, n))
        .copy_from(&(t.transpose() * &t * (h / 2.0)));
    let sys = StateSpaceSystem::new(a, b, c, d, gram.clone())?;
    let sr = SupplyRate::euclidean(
        Matrix::zeros(1, 1),
        Matrix::from_element(1, 1, 1.0),
        Matrix::zeros(1, 1),
    )?;
    Ok(ModelBundle {
        kind: ModelKind::Wave,
        n,
        h,
        sys,
        sr,
        p: -gram,
    })
}

/// Generator and input map of the wave model. With `reflecting` the damper is
/// replaced by the lossless condition `b(0) = a(0)` (`x₂(0) = 0`); the face
/// formulation of `b` then conserves energy only to first order, since the
/// nonzero inflow value enters the first cell average. Also returns the
/// face-to-cell averaging matrix of the `b` channel.
pub(crate) fn wave_generator(n: usize, reflecting: bool) -> (Matrix, Matrix, Matrix) {
    let h = 1.0 / n as f64;
    let dim = 2 * n;
    // The a-channel flows from ξ = 1 to ξ = 0: flow-order cell k is spatial cell n-1-k.
    let ch = BoxChannel::new(n);
    let cell = |k: usize| n - 1 - k;
    let b_last = dim - 1;
    // a(face) as a row over the full state, with u as a separate coefficient.
    let a_face = |k: usize| -> (Vector, f64) {
        let mut row = Vector::zeros(dim);
        for j in 0..n {
            row[cell(j)] = ch.fz[(k, j)];
        }
        row[b_last] += ch.fin[k];
        (row, 2.0 * ch.fin[k])
    };
    let mut a = Matrix::zeros(dim, dim);
    let mut bm = Matrix::zeros(dim, 1);
    for k in 0..n {
        let (fin, uin) = a_face(k);
        let (fout, uout) = a_face(k + 1);
        a.row_mut(cell(k)).copy_from(&((fin - fout).transpose() / h));
        bm[(cell(k), 0)] = (uin - uout) / h;
    }

    // b-channel in face variables: cell averages T·f satisfy (T·f)' = (f_in − f_out)/h.
    let mut t = Matrix::zeros(n, n);
    let mut dm = Matrix::zeros(n, n);
    for i in 0..n {
        t[(i, i)] = 0.5;
        dm[(i, i)] = 1.0;
        if i > 0 {
            t[(i, i - 1)] = 0.5;
            dm[(i, i - 1)] = -1.0;
        }
    }
    let tinv = t
        .clone()
        .try_inverse()
        .expect("averaging matrix is triangular with nonzero diagonal");
    let blk = -(&tinv * &dm) / h;
    a.view_mut((n, n), (n, n)).copy_from(&blk);
    if reflecting {
        // Inflow b(0) = a(0) enters the first cell average with weight 1/h.
        let (aout, _) = a_face(n);
        let coupling = tinv.column(0) * aout.transpose() / h;
        let mut lower = a.rows_mut(n, n);
        lower += coupling;
    }
    (a, bm, t)
}

/// Sample wave data `x₁ = f1`, `x₂ = f2` into the characteristic state.
pub fn sample_wave(n: usize, f1: impl Fn(f64) -> f64, f2: impl Fn(f64) -> f64) -> Vector {
    let h = 1.0 / n as f64;
    let cells = cell_centres(n).map(|s| f1(s) + f2(s));
    let faces = (1..=n).map(|j| {
        let s = j as f64 * h;
        f1(s) - f2(s)
    });
    Vector::from_iterator(2 * n, cells.chain(faces))
}

/// `∂ₜx = ∂²_ξx` with Dirichlet input `u = (x(0), x(1))`, output the outward
/// normal derivatives, supply `2yᵀu` and storage `−‖x‖²`. States are the
/// `n − 1` interior nodes; boundary values enter through `B` and `D`.
pub fn build_heat(n: usize) -> Result<ModelBundle> {
    check_n(n, 3, "heat")?;
    let h = 1.0 / n as f64;
    let dim = n - 1;
    let h2 = h * h;
    let mut a = Matrix::zeros(dim, dim);
    for i in 0..dim {
        a[(i, i)] = -2.0 / h2;
        if i > 0 {
            a[(i, i - 1)] = 1.0 / h2;
        }
        if i + 1 < dim {
            a[(i, i + 1)] = 1.0 / h2;
        }
    }
    let mut b = Matrix::zeros(dim, 2);
    b[(0, 0)] = 1.0 / h2;
    b[(dim - 1, 1)] = 1.0 / h2;
    let mut c = Matrix::zeros(2, dim);
    c[(0, 0)] = -1.0 / h;
    c[(1, dim - 1)] = -1.0 / h;
    let d = Matrix::identity(2, 2) / h;
    let gram = Matrix::identity(dim, dim) * h;
    let sys = StateSpaceSystem::new(a, b, c, d, gram.clone())?;
    let sr = SupplyRate::euclidean(Matrix::zeros(2, 2), Matrix::identity(2, 2), Matrix::zeros(2, 2))?;
    Ok(ModelBundle {
        kind: ModelKind::Heat,
        n,
        h,
        sys,
        sr,
        p: -gram,
    })
}

/// Forward differences `(x_{i+1} − x_i)/h` over all `n` intervals, including the
/// two boundary intervals where the input supplies the end values. Rows act on
/// `(x, u)`.
pub fn heat_gradient(n: usize) -> Matrix {
    let h = 1.0 / n as f64;
    let dim = n - 1;
    let mut g = Matrix::zeros(n, dim + 2);
    for j in 0..n {
        // node j (left) and j+1 (right); node 0 is u₀, node n is u₁
        let col = |node: usize| match node {
            0 => dim,
            k if k == n => dim + 1,
            k => k - 1,
        };
        g[(j, col(j))] -= 1.0 / h;
        g[(j, col(j + 1))] += 1.0 / h;
    }
    g
}

/// Closed-form values for transport: `Val_Jw = ‖x₀‖²`, `Val_J = 2‖x₀‖²`.
/// Returns `(val_J, val_Jw)`.
pub fn transport_exact_value(x0: &Vector, h: f64) -> (f64, f64) {
    let jw = h * x0.norm_squared();
    (2.0 * jw, jw)
}

/// Closed-form values for the wave system: `Val_J = −½∫|x₁ − x₂|²`,
/// `Val_Jw = ½∫|x₁ + x₂|²`. Returns `(val_J, val_Jw)`.
pub fn wave_exact_value(x01: &Vector, x02: &Vector, h: f64) -> Result<(f64, f64)> {
    if x01.len() != x02.len() {
        return Err(Error::Shape(format!(
            "wave components have lengths {} and {}",
            x01.len(),
            x02.len()
        )));
    }
    let diff = (x01 - x02).norm_squared();
    let sum = (x01 + x02).norm_squared();
    Ok((-0.5 * h * diff, 0.5 * h * sum))
}

/// Composite Simpson rule on `[0, 1]` with 2¹⁴ intervals.
pub fn integrate(f: impl Fn(f64) -> f64) -> f64 {
    let m = 1 << 14;
    let h = 1.0 / m as f64;
    let mut sum = f(0.0) + f(1.0);
    for i in 1..m {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(i as f64 * h);
    }
    sum * h / 3.0
}

/// A scalar profile on `[0, 1]`.
pub type Field = fn(f64) -> f64;

/// Smooth non-periodic test fields `(x₁, x₂)` for the wave cost operator.
pub fn wave_test_fields() -> Vec<(Field, Field)> {
    vec![
        (|s| s.exp(), |_| 0.0),
        (|_| 0.0, |s| 1.0 + s * s),
        (|s| (2.0 * s).cos(), |s| (3.0 * s).sin()),
        (|s| s, |s| 1.0 - s),
        (|s| (1.0 + s).ln(), |s| -s.exp()),
    ]
}

/// Largest relative error of `x₀ᵀP_w x₀` against `½∫(x₁ + x₂)²` over
/// [`wave_test_fields`], relative to `∫(x₁² + x₂²)`.
pub fn wave_pw_form_error(n: usize, p_w: &Matrix) -> f64 {
    wave_test_fields()
        .into_iter()
        .map(|(f1, f2)| {
            let x = sample_wave(n, f1, f2);
            let numeric = x.dot(&(p_w * &x));
            let exact = 0.5 * integrate(|s| (f1(s) + f2(s)).powi(2));
            let norm = integrate(|s| f1(s).powi(2) + f2(s).powi(2));
            (numeric - exact).abs() / norm
        })
        .fold(0.0, f64::max)
}
