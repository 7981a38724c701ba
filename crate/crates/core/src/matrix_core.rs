//! Dense real kernels: symmetric eigensolver, PSD factorization, Lyapunov and
//! Riccati solvers, matrix exponential.
//!
//! Lyapunov and Riccati equations are both solved through the Newton iteration
//! for the matrix sign function with determinant scaling. It needs only LU
//! factorizations, which keeps it robust on the strongly non-normal generators
//! produced by the transport discretization (a single Jordan block).

use nalgebra::{Complex, DMatrix, DVector, Schur, SymmetricEigen};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Default relative clamp for eigenvalues treated as discretization noise.
pub const DEFAULT_CLAMP_TOL: f64 = 1e-9;

const SYM_TOL: f64 = 1e-12;
const SIGN_MAX_ITER: usize = 100;
const SIGN_TOL: f64 = 1e-13;

#[derive(Debug, Clone)]
pub struct SymEigResult {
    /// Ascending.
    pub eigenvalues: Vector,
    /// Orthonormal columns matching `eigenvalues`.
    pub eigenvectors: Matrix,
}

pub fn ensure_square(m: &Matrix, what: &str) -> Result<()> {
    if m.is_square() {
        Ok(())
    } else {
        Err(Error::Shape(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )))
    }
}

pub fn ensure_shape(m: &Matrix, rows: usize, cols: usize, what: &str) -> Result<()> {
    if m.shape() == (rows, cols) {
        Ok(())
    } else {
        Err(Error::Shape(format!(
            "{what} must be {rows}x{cols}, got {}x{}",
            m.nrows(),
            m.ncols()
        )))
    }
}

pub fn ensure_symmetric(m: &Matrix, what: &str) -> Result<()> {
    ensure_square(m, what)?;
    let scale = m.amax().max(1.0);
    let asym = (m - m.transpose()).amax();
    if asym > SYM_TOL * scale {
        return Err(Error::Shape(format!("{what} is not symmetric (asymmetry {asym:e})")));
    }
    Ok(())
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Largest singular value.
pub fn norm2(m: &Matrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues ascending.
///
/// Eigenvector signs are fixed so that the first non-negligible entry of each
/// column is positive, which makes the output reproducible.
pub fn sym_eig(m: &Matrix) -> Result<SymEigResult> {
    ensure_symmetric(m, "sym_eig input")?;
    let n = m.nrows();
    if n == 0 {
        return Ok(SymEigResult {
            eigenvalues: Vector::zeros(0),
            eigenvectors: Matrix::zeros(0, 0),
        });
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));

    let eigenvalues = Vector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut eigenvectors = Matrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        let cut = 1e-8 * v.amax();
        if let Some(first) = v.iter().find(|x| x.abs() > cut) {
            if *first < 0.0 {
                v.neg_mut();
            }
        }
        eigenvectors.set_column(k, &v);
    }
    Ok(SymEigResult {
        eigenvalues,
        eigenvectors,
    })
}

/// Factor a positive semidefinite matrix as `factorᵀ·factor`.
///
/// Eigenvalues at or below `clamp_tol·‖M‖₂` are dropped; anything below
/// `-clamp_tol·‖M‖₂` is reported as [`Error::NotPsd`]. Rows are ordered by
/// decreasing eigenvalue.
pub fn psd_factor(m: &Matrix, clamp_tol: f64) -> Result<(Matrix, usize)> {
    let eig = sym_eig(m)?;
    let n = m.nrows();
    if n == 0 {
        return Ok((Matrix::zeros(0, 0), 0));
    }
    let lo = eig.eigenvalues[0];
    let hi = eig.eigenvalues[n - 1];
    let threshold = clamp_tol * lo.abs().max(hi.abs());
    if lo < -threshold {
        return Err(Error::NotPsd { eigenvalue: lo });
    }
    let kept: Vec<usize> = (0..n).rev().filter(|&i| eig.eigenvalues[i] > threshold).collect();
    let mut factor = Matrix::zeros(kept.len(), n);
    for (row, &i) in kept.iter().enumerate() {
        let s = eig.eigenvalues[i].sqrt();
        for j in 0..n {
            factor[(row, j)] = s * eig.eigenvectors[(j, i)];
        }
    }
    Ok((factor, kept.len()))
}

/// Eigenvalues of a general real matrix. `None` if the QR iteration stalls.
pub fn try_spectrum(a: &Matrix) -> Option<Vec<Complex<f64>>> {
    let n = a.nrows();
    if n == 0 {
        return Some(Vec::new());
    }
    let schur = Schur::try_new(a.clone(), f64::EPSILON, 1000 * n.max(10))?;
    Some(schur.complex_eigenvalues().iter().copied().collect())
}

/// Largest real part over the spectrum, `f64::NEG_INFINITY` for empty input.
pub fn spectral_abscissa(spectrum: &[Complex<f64>]) -> f64 {
    spectrum.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

/// `exp(A·h)` by Padé scaling and squaring; exact identity at `h = 0`.
pub fn matexp(a: &Matrix, h: f64) -> Result<Matrix> {
    ensure_square(a, "matexp input")?;
    if h.is_nan() || h < 0.0 {
        return Err(Error::InvalidArgument(format!("matexp step must be >= 0, got {h}")));
    }
    if h == 0.0 || a.is_empty() {
        return Ok(Matrix::identity(a.nrows(), a.nrows()));
    }
    Ok((a * h).exp())
}

/// Scale factor `|det Z|^(-1/n)` for the Newton sign iteration, from the LU
/// diagonal so it cannot overflow.
fn det_scale(lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>, n: usize) -> f64 {
    let log_det: f64 = lu.u().diagonal().iter().map(|d| d.abs().ln()).sum();
    let c = (-log_det / n as f64).exp();
    if c.is_finite() && c > 0.0 {
        c
    } else {
        1.0
    }
}

/// Solve `AᵀZ + ZA + M = 0` for Hurwitz `A`.
///
/// Sign-function iteration on `[[A, 0], [M, -Aᵀ]]`, whose sign is
/// `[[-I, 0], [2Z, I]]`, followed by iterative refinement on the residual.
pub fn solve_lyapunov(a: &Matrix, m: &Matrix) -> Result<Matrix> {
    ensure_square(a, "Lyapunov A")?;
    let n = a.nrows();
    ensure_shape(m, n, n, "Lyapunov M")?;
    ensure_symmetric(m, "Lyapunov M")?;
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }

    let mut z = lyapunov_sign(a, &symmetrize(m))?;
    let scale = 1.0 + m.norm();
    let mut res = lyapunov_residual(a, &z, m);
    for _ in 0..2 {
        if res.norm() <= 1e-12 * scale {
            break;
        }
        let dz = lyapunov_sign(a, &symmetrize(&res))?;
        let candidate = symmetrize(&(&z + dz));
        let cres = lyapunov_residual(a, &candidate, m);
        if cres.norm() >= res.norm() {
            break;
        }
        z = candidate;
        res = cres;
    }
    Ok(z)
}

pub fn lyapunov_residual(a: &Matrix, z: &Matrix, m: &Matrix) -> Matrix {
    a.transpose() * z + z * a + m
}

fn lyapunov_sign(a: &Matrix, m: &Matrix) -> Result<Matrix> {
    let n = a.nrows();
    let mut ak = a.clone();
    let mut qk = m.clone();
    let not_stable = |a: &Matrix| Error::NotStable {
        abscissa: try_spectrum(a).map(|s| spectral_abscissa(&s)).unwrap_or(0.0),
    };
    let mut scaling = true;
    let mut finishing = false;
    for _ in 0..SIGN_MAX_ITER {
        let lu = ak.clone().lu();
        let c = if scaling { det_scale(&lu, n) } else { 1.0 };
        let inv = lu.try_inverse().ok_or_else(|| not_stable(a))?;
        let next_a = (&ak * c + &inv / c) * 0.5;
        let next_q = (&qk * c + inv.transpose() * &qk * &inv / c) * 0.5;
        let step = (&next_a - &ak).norm();
        let size = next_a.norm();
        ak = next_a;
        qk = symmetrize(&next_q);
        if !ak.iter().all(|x| x.is_finite()) {
            return Err(not_stable(a));
        }
        if finishing || step <= SIGN_TOL * size {
            break;
        }
        if step <= 1e-2 * size {
            scaling = false;
        }
        // Quadratic convergence: one more step lands at round-off.
        finishing = step <= SIGN_TOL.sqrt() * size;
    }
    // A stable A drives the iterate to -I; anything else has eigenvalues
    // on or to the right of the imaginary axis.
    if (&ak + Matrix::identity(n, n)).norm() > 1e-8 * (n as f64).sqrt() {
        return Err(not_stable(a));
    }
    Ok(qk * 0.5)
}

/// Residual of `AᵀP + PA + Qc − (PB+Sc)Rc⁻¹(BᵀP+Scᵀ)`.
pub fn care_residual(a: &Matrix, b: &Matrix, qc: &Matrix, sc: &Matrix, rc: &Matrix, p: &Matrix) -> Matrix {
    let pbs = p * b + sc;
    let gain = rc
        .clone()
        .lu()
        .solve(&pbs.transpose())
        .unwrap_or_else(|| Matrix::from_element(rc.nrows(), a.nrows(), f64::NAN));
    a.transpose() * p + p * a + qc - &pbs * gain
}

/// Stabilizing solution of the continuous algebraic Riccati equation
/// `AᵀP + PA + Qc − (PB+Sc)Rc⁻¹(BᵀP+Scᵀ) = 0`.
pub fn solve_care(a: &Matrix, b: &Matrix, qc: &Matrix, sc: &Matrix, rc: &Matrix) -> Result<Matrix> {
    ensure_square(a, "CARE A")?;
    let n = a.nrows();
    if b.nrows() != n {
        return Err(Error::Shape(format!("CARE B must have {n} rows, got {}", b.nrows())));
    }
    let m = b.ncols();
    ensure_shape(qc, n, n, "CARE Qc")?;
    ensure_shape(sc, n, m, "CARE Sc")?;
    ensure_shape(rc, m, m, "CARE Rc")?;
    ensure_symmetric(qc, "CARE Qc")?;
    ensure_symmetric(rc, "CARE Rc")?;
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }

    let rc = symmetrize(rc);
    if m > 0 {
        let min_eig = sym_eig(&rc)?.eigenvalues[0];
        if min_eig <= 1e-12 {
            return Err(Error::Conditioning(format!(
                "Rc must be positive definite, smallest eigenvalue {min_eig:e}"
            )));
        }
    }
    let chol = rc
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Conditioning("Rc Cholesky factorization failed".into()))?;

    // Remove the cross term: Ā = A − B Rc⁻¹ Scᵀ, Q̄ = Qc − Sc Rc⁻¹ Scᵀ.
    let rinv_sct = chol.solve(&sc.transpose());
    let rinv_bt = chol.solve(&b.transpose());
    let abar = a - b * &rinv_sct;
    let qbar = symmetrize(&(qc - sc * &rinv_sct));
    let g = symmetrize(&(b * &rinv_bt));

    let mut h = Matrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(&abar);
    h.view_mut((0, n), (n, n)).copy_from(&(-&g));
    h.view_mut((n, 0), (n, n)).copy_from(&(-&qbar));
    h.view_mut((n, n), (n, n)).copy_from(&(-abar.transpose()));

    let w = hamiltonian_sign(&h)?;

    // The stable invariant subspace [I; P] is the kernel of sign(H) + I.
    let mut lhs = Matrix::zeros(2 * n, n);
    lhs.view_mut((0, 0), (n, n)).copy_from(&w.view((0, n), (n, n)));
    lhs.view_mut((n, 0), (n, n))
        .copy_from(&(w.view((n, n), (n, n)) + Matrix::identity(n, n)));
    let mut rhs = Matrix::zeros(2 * n, n);
    rhs.view_mut((0, 0), (n, n))
        .copy_from(&(-(w.view((0, 0), (n, n)) + Matrix::identity(n, n))));
    rhs.view_mut((n, 0), (n, n)).copy_from(&(-w.view((n, 0), (n, n))));
    let qr = lhs.qr();
    let qt_rhs = qr.q().transpose() * rhs;
    let mut p = qr
        .r()
        .solve_upper_triangular(&qt_rhs)
        .ok_or_else(|| Error::Unsolvable("stable subspace is not a graph over the state space".into()))?;
    p = symmetrize(&p);
    if !p.iter().all(|x| x.is_finite()) {
        return Err(Error::Unsolvable("non-finite Riccati solution".into()));
    }

    // Newton–Kleinman polishing.
    let mut res = care_residual(a, b, qc, sc, &rc, &p).norm();
    for _ in 0..3 {
        if res <= 1e-13 * (1.0 + p.norm()) {
            break;
        }
        let f = -chol.solve(&(b.transpose() * &p + sc.transpose()));
        let acl = a + b * &f;
        let mcl = symmetrize(&(qc + sc * &f + f.transpose() * sc.transpose() + f.transpose() * &rc * &f));
        let Ok(candidate) = solve_lyapunov(&acl, &mcl) else {
            break;
        };
        let cres = care_residual(a, b, qc, sc, &rc, &candidate).norm();
        if cres.is_nan() || cres >= res {
            break;
        }
        p = candidate;
        res = cres;
    }

    let f = -chol.solve(&(b.transpose() * &p + sc.transpose()));
    let acl = a + b * f;
    if !is_hurwitz(&acl) {
        let abscissa = try_spectrum(&acl).map(|s| spectral_abscissa(&s)).unwrap_or(f64::NAN);
        return Err(Error::Unsolvable(format!(
            "closed loop is not Hurwitz (spectral abscissa {abscissa:e})"
        )));
    }
    Ok(p)
}

fn hamiltonian_sign(h: &Matrix) -> Result<Matrix> {
    let dim = h.nrows();
    let mut z = h.clone();
    let mut scaling = true;
    for _ in 0..SIGN_MAX_ITER {
        let lu = z.clone().lu();
        let c = if scaling { det_scale(&lu, dim) } else { 1.0 };
        let inv = lu
            .try_inverse()
            .ok_or_else(|| Error::Unsolvable("Hamiltonian has eigenvalues on the imaginary axis".into()))?;
        let next = (&z * c + inv / c) * 0.5;
        if !next.iter().all(|x| x.is_finite()) {
            return Err(Error::Unsolvable("sign iteration produced non-finite values".into()));
        }
        let step = (&next - &z).norm();
        let size = next.norm();
        z = next;
        if step <= 1e-2 * size {
            scaling = false;
        }
        if step <= SIGN_TOL * size {
            return Ok(z);
        }
        // Quadratic convergence: once the step is tiny the next one is at round-off.
        if step <= SIGN_TOL.sqrt() * size {
            let lu = z.clone().lu();
            let inv = lu
                .try_inverse()
                .ok_or_else(|| Error::Unsolvable("sign iteration lost rank".into()))?;
            return Ok((&z + inv) * 0.5);
        }
    }
    Err(Error::Unsolvable("matrix sign iteration did not converge".into()))
}

/// Hurwitz test. Uses the spectrum when the QR iteration converges, otherwise
/// the sign function (which tends to `-I` exactly for stable matrices).
pub fn is_hurwitz(a: &Matrix) -> bool {
    if a.is_empty() {
        return true;
    }
    if let Some(spec) = try_spectrum(a) {
        return spectral_abscissa(&spec) < 0.0;
    }
    let n = a.nrows();
    lyapunov_sign(a, &Matrix::zeros(n, n)).is_ok()
}
