//! Singular LQ on the dissipation output: maximal nonnegative solution `P_w`,
//! optimal factor `(E, F)`, optimal feedback, value functions and a maximality
//! probe.

use nalgebra::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::dissipative_system::{
    dissipation_factor, extend_system, extended_supply, lure_residual, ExtendedSystem, StateSpaceSystem,
    StorageCertificate, SupplyRate,
};
use crate::error::{Error, Result};
use crate::matrix_core::{
    ensure_shape, psd_factor, solve_care, solve_lyapunov, spectral_abscissa, symmetrize, try_spectrum, Matrix, Vector,
    DEFAULT_CLAMP_TOL,
};

/// Relative Cauchy tolerance on consecutive regularized solutions.
pub const CAUCHY_TOL: f64 = 1e-7;

/// Geometric schedule `1e-2, 1e-3, …, 1e-10`.
pub fn default_eps_schedule() -> Vec<f64> {
    (2..=10).map(|k| 10f64.powi(-k)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LureSolution {
    pub p_w: Matrix,
    pub e: Matrix,
    pub f: Matrix,
    pub eps_schedule: Vec<f64>,
    pub p_w_per_eps: Vec<Matrix>,
    /// `‖P_w(ε_k) − P_w(ε_{k−1})‖_F`, one entry per schedule step after the first.
    pub increments: Vec<f64>,
    pub converged: bool,
}

impl LureSolution {
    pub fn rank(&self) -> usize {
        self.e.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackGain {
    /// `u = gain·x`.
    pub gain: Matrix,
    pub closed_loop_spectrum: Vec<Complex<f64>>,
    pub stabilizing: bool,
}

impl FeedbackGain {
    pub fn new(sys: &StateSpaceSystem, gain: Matrix) -> Result<Self> {
        ensure_shape(&gain, sys.m(), sys.n(), "feedback gain")?;
        let acl = &sys.a + &sys.b * &gain;
        let closed_loop_spectrum = try_spectrum(&acl).unwrap_or_default();
        let stabilizing = if closed_loop_spectrum.len() == sys.n() {
            spectral_abscissa(&closed_loop_spectrum) < 0.0
        } else {
            crate::matrix_core::is_hurwitz(&acl)
        };
        Ok(Self {
            gain,
            closed_loop_spectrum,
            stabilizing,
        })
    }

    pub fn abscissa(&self) -> f64 {
        spectral_abscissa(&self.closed_loop_spectrum)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueReport {
    pub val_j: f64,
    pub val_jw: f64,
    pub storage_at_x0: f64,
    pub identity_gap: f64,
}

/// CARE-based stabilizing gain with unit weights (`Qc = gram`, `Rc = I`).
pub fn stabilizing_feedback(sys: &StateSpaceSystem) -> Result<FeedbackGain> {
    let (n, m) = (sys.n(), sys.m());
    let p = match solve_care(&sys.a, &sys.b, &sys.gram, &Matrix::zeros(n, m), &Matrix::identity(m, m)) {
        Ok(p) => p,
        Err(Error::Unsolvable(_)) => {
            let abscissa = try_spectrum(&sys.a).map(|s| spectral_abscissa(&s)).unwrap_or(f64::NAN);
            return Err(Error::Unstabilizable { abscissa });
        }
        Err(e) => return Err(e),
    };
    let fb = FeedbackGain::new(sys, -sys.b.transpose() * p)?;
    if !fb.stabilizing {
        return Err(Error::Unstabilizable {
            abscissa: fb.abscissa(),
        });
    }
    Ok(fb)
}

/// Output feedback `u = k·y` (with `y = Cx + Du`) written as a state feedback.
pub fn output_feedback(sys: &StateSpaceSystem, k: &Matrix) -> Result<FeedbackGain> {
    ensure_shape(k, sys.m(), sys.p(), "output feedback gain")?;
    let m = sys.m();
    let lhs = Matrix::identity(m, m) - k * &sys.d;
    let gain = lhs
        .lu()
        .solve(&(k * &sys.c))
        .ok_or_else(|| Error::Conditioning("output feedback loop is ill-posed (I − kD singular)".into()))?;
    FeedbackGain::new(sys, gain)
}

/// Regularized singular LQ for the cost `∫‖Kx + Lu‖²` of the dissipation output.
///
/// Each `ε` of the descending schedule gives the stabilizing CARE solution
/// with `Rc = LᵀL + εI`. The last iterate is the estimate of `P_w`; the factor
/// `(E, F)` comes from the residual of the extended supply at `P_w`.
pub fn solve_singular_lq(ext: &ExtendedSystem, eps_schedule: &[f64]) -> Result<LureSolution> {
    if eps_schedule.is_empty() {
        return Err(Error::InvalidArgument("empty regularization schedule".into()));
    }
    if eps_schedule.iter().any(|&e| e.is_nan() || e <= 0.0) || eps_schedule.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument(
            "regularization schedule must be positive and strictly decreasing".into(),
        ));
    }
    let sys = &ext.base;
    let (k, l) = (ext.k(), ext.l());
    let qc = symmetrize(&(k.transpose() * &k));
    let sc = k.transpose() * &l;
    let rc = symmetrize(&(l.transpose() * &l));
    let m = sys.m();

    let p_w_per_eps = eps_schedule
        .par_iter()
        .map(|&eps| {
            let r = &rc + Matrix::identity(m, m) * eps;
            solve_care(&sys.a, &sys.b, &qc, &sc, &r).map_err(|e| match e {
                Error::Unsolvable(_) => Error::Unstabilizable {
                    abscissa: try_spectrum(&sys.a).map(|s| spectral_abscissa(&s)).unwrap_or(f64::NAN),
                },
                e => e,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let increments: Vec<f64> = p_w_per_eps.windows(2).map(|w| (&w[1] - &w[0]).norm()).collect();
    let p_w = p_w_per_eps.last().cloned().expect("non-empty schedule");
    let converged = increments.last().is_some_and(|&d| d <= CAUCHY_TOL * (1.0 + p_w.norm()));

    let w_ext = lure_residual(sys, &extended_supply(ext), &p_w)?;
    let n = sys.n();
    let (factor, rank) = psd_factor(&w_ext, DEFAULT_CLAMP_TOL)?;
    let factor = if factor.ncols() == n + m {
        factor
    } else {
        Matrix::zeros(0, n + m)
    };
    let sol = LureSolution {
        e: factor.columns(0, n).into_owned(),
        f: factor.columns(n, m).into_owned(),
        p_w,
        eps_schedule: eps_schedule.to_vec(),
        p_w_per_eps,
        increments,
        converged,
    };
    debug_assert_eq!(sol.e.nrows(), rank);
    if !converged {
        let last_increment = sol.increments.last().copied().unwrap_or(f64::NAN);
        return Err(Error::NoConvergence {
            last_increment,
            solution: Box::new(sol),
        });
    }
    Ok(sol)
}

/// Certificate, extended system and singular LQ solution for one problem.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub cert: StorageCertificate,
    pub ext: ExtendedSystem,
    pub sol: LureSolution,
}

/// Factor the residual at `P`, extend the system and solve the singular LQ.
/// A schedule that ends before the Cauchy test passes still yields the last
/// estimate, with `sol.converged` cleared.
pub fn analyze(sys: &StateSpaceSystem, sr: &SupplyRate, p: &Matrix, eps_schedule: &[f64]) -> Result<Analysis> {
    let cert = dissipation_factor(sys, sr, p, DEFAULT_CLAMP_TOL)?;
    let ext = extend_system(sys, &cert)?;
    let sol = match solve_singular_lq(&ext, eps_schedule) {
        Err(Error::NoConvergence { solution, .. }) => *solution,
        other => other?,
    };
    Ok(Analysis { cert, ext, sol })
}

/// `‖W(P + P_w) − [E F]ᵀ[E F]‖_F / (1 + ‖W‖_F)`.
pub fn combined_lure_check(sys: &StateSpaceSystem, sr: &SupplyRate, p: &Matrix, sol: &LureSolution) -> Result<f64> {
    let w = lure_residual(sys, sr, &(p + &sol.p_w))?;
    let ef = stack_columns(&sol.e, &sol.f);
    Ok((&w - ef.transpose() * ef).norm() / (1.0 + w.norm()))
}

fn stack_columns(e: &Matrix, f: &Matrix) -> Matrix {
    let mut ef = Matrix::zeros(e.nrows(), e.ncols() + f.ncols());
    ef.columns_mut(0, e.ncols()).copy_from(e);
    ef.columns_mut(e.ncols(), f.ncols()).copy_from(f);
    ef
}

/// Least-squares solution of `F·u = −E·x`: `gain = −F⁺E`. The flag reports
/// whether `E` lies in the range of `F` to within `lsq_tol`.
pub fn optimal_feedback(sys: &StateSpaceSystem, sol: &LureSolution, lsq_tol: f64) -> Result<(FeedbackGain, bool)> {
    let (n, m) = (sys.n(), sys.m());
    ensure_shape(&sol.e, sol.rank(), n, "E")?;
    ensure_shape(&sol.f, sol.rank(), m, "F")?;
    if sol.rank() == 0 {
        return Ok((FeedbackGain::new(sys, Matrix::zeros(m, n))?, true));
    }
    let svd = sol.f.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cut = f64::EPSILON * sol.rank().max(m) as f64 * smax;
    let f_pinv = svd
        .pseudo_inverse(cut)
        .map_err(|e| Error::Conditioning(format!("pseudo-inverse of F failed: {e}")))?;
    let gain = -(&f_pinv * &sol.e);
    let projected = &sol.e - &sol.f * (&f_pinv * &sol.e);
    let enorm = sol.e.norm();
    let solvable = enorm == 0.0 || projected.norm() <= lsq_tol * enorm;
    Ok((FeedbackGain::new(sys, gain)?, solvable))
}

pub fn value_functions(p: &Matrix, sol: &LureSolution, x0: &Vector) -> ValueReport {
    let val_jw = x0.dot(&(&sol.p_w * x0));
    let storage_at_x0 = x0.dot(&(p * x0));
    let val_j = val_jw + storage_at_x0;
    ValueReport {
        val_j,
        val_jw,
        storage_at_x0,
        identity_gap: (val_j - val_jw - storage_at_x0).abs(),
    }
}

/// Matrix `Z` with `x₀ᵀZx₀ = ∫₀^∞ s(y, u)` along the closed loop `u = Fx`.
pub fn feedback_cost_matrix(sys: &StateSpaceSystem, sr: &SupplyRate, gain: &Matrix) -> Result<Matrix> {
    let (n, m) = (sys.n(), sys.m());
    let supply = lure_residual(sys, sr, &Matrix::zeros(n, n))?;
    let mut lift = Matrix::zeros(n + m, n);
    lift.rows_mut(0, n).fill_with_identity();
    lift.rows_mut(n, m).copy_from(gain);
    let cost = symmetrize(&(lift.transpose() * supply * &lift));
    solve_lyapunov(&(&sys.a + &sys.b * gain), &cost)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaximalityReport {
    /// `max (xᵀ(P + P_w)x − xᵀZ_i x)` over probe vectors with `‖x‖_G = 1`.
    pub max_violation: f64,
    pub per_feedback: Vec<f64>,
    /// Number of perturbations redrawn because they were not stabilizing.
    pub retries: usize,
}

/// Checks that `P + P_w` lies below the cost of random stabilizing feedbacks.
///
/// Gains are perturbations of the optimal feedback (falling back to the CARE
/// stabilizing gain when the optimum is not stabilizing). All random numbers
/// are drawn up front, so the result does not depend on thread scheduling.
pub fn maximality_probe(
    sys: &StateSpaceSystem,
    sr: &SupplyRate,
    p: &Matrix,
    sol: &LureSolution,
    n_feedbacks: usize,
    n_vectors: usize,
    seed: u64,
) -> Result<MaximalityReport> {
    const MAX_RETRIES: usize = 50;
    let (n, m) = (sys.n(), sys.m());
    let (opt, _) = optimal_feedback(sys, sol, 1e-6)?;
    let centre = if opt.stabilizing {
        opt
    } else {
        stabilizing_feedback(sys)?
    };
    let scale = 0.1 * centre.gain.amax().max(1.0);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gains = Vec::with_capacity(n_feedbacks);
    let mut retries = 0;
    for _ in 0..n_feedbacks {
        let mut sigma = scale;
        loop {
            let delta = Matrix::from_fn(m, n, |_, _| {
                sigma * Distribution::<f64>::sample(&StandardNormal, &mut rng)
            });
            let candidate = FeedbackGain::new(sys, &centre.gain + delta)?;
            if candidate.stabilizing {
                gains.push(candidate.gain);
                break;
            }
            retries += 1;
            sigma *= 0.5;
            if retries > MAX_RETRIES * n_feedbacks.max(1) {
                return Err(Error::Unstabilizable {
                    abscissa: candidate.abscissa(),
                });
            }
        }
    }
    let vectors: Vec<Vector> = (0..n_vectors)
        .map(|_| {
            let x = Vector::from_fn(n, |_, _| Distribution::<f64>::sample(&StandardNormal, &mut rng));
            let norm = sys.state_norm(&x);
            x / norm
        })
        .collect();

    let total = p + &sol.p_w;
    let per_feedback = gains
        .par_iter()
        .map(|g| {
            let z = feedback_cost_matrix(sys, sr, g)?;
            let diff = &total - z;
            Ok(vectors
                .iter()
                .map(|x| x.dot(&(&diff * x)))
                .fold(f64::NEG_INFINITY, f64::max))
        })
        .collect::<Result<Vec<f64>>>()?;
    let max_violation = per_feedback.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(MaximalityReport {
        max_violation,
        per_feedback,
        retries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar(x: f64) -> Matrix {
        Matrix::from_element(1, 1, x)
    }

    #[test]
    fn stabilizing_feedback_examples() {
        let sys = StateSpaceSystem::new(scalar(0.0), scalar(1.0), scalar(1.0), scalar(0.0), scalar(1.0)).unwrap();
        let fb = stabilizing_feedback(&sys).unwrap();
        assert_abs_diff_eq!(fb.gain[(0, 0)], -1.0, epsilon = 1e-12);
        assert!(fb.stabilizing);

        let sys = StateSpaceSystem::new(scalar(-1.0), scalar(0.0), scalar(1.0), scalar(0.0), scalar(1.0)).unwrap();
        let fb = stabilizing_feedback(&sys).unwrap();
        assert_eq!(fb.gain[(0, 0)], 0.0);

        let sys = StateSpaceSystem::new(scalar(1.0), scalar(0.0), scalar(1.0), scalar(0.0), scalar(1.0)).unwrap();
        assert!(matches!(stabilizing_feedback(&sys), Err(Error::Unstabilizable { .. })));
    }

    #[test]
    fn zero_cost_gives_zero_solution() {
        let sys = StateSpaceSystem::new(
            -Matrix::identity(2, 2),
            Matrix::from_element(2, 1, 1.0),
            Matrix::zeros(1, 2),
            Matrix::zeros(1, 1),
            Matrix::identity(2, 2),
        )
        .unwrap();
        let cert = StorageCertificate {
            p: Matrix::zeros(2, 2),
            k: Matrix::zeros(0, 2),
            l: Matrix::zeros(0, 1),
            rank_w: 0,
        };
        let ext = extend_system(&sys, &cert).unwrap();
        let sol = solve_singular_lq(&ext, &default_eps_schedule()).unwrap();
        assert!(sol.p_w.amax() < 1e-12);
        assert_eq!(sol.rank(), 0);
        let (fb, ok) = optimal_feedback(&sys, &sol, 1e-8).unwrap();
        assert!(ok);
        assert_eq!(fb.gain, Matrix::zeros(1, 2));
    }

    #[test]
    fn pseudo_inverse_feedback() {
        let sys = StateSpaceSystem::new(
            -Matrix::identity(2, 2),
            Matrix::identity(2, 2),
            Matrix::identity(2, 2),
            Matrix::zeros(2, 2),
            Matrix::identity(2, 2),
        )
        .unwrap();
        let sol = LureSolution {
            p_w: Matrix::zeros(2, 2),
            e: Matrix::zeros(2, 2),
            f: Matrix::identity(2, 2),
            eps_schedule: vec![],
            p_w_per_eps: vec![],
            increments: vec![],
            converged: true,
        };
        let (fb, ok) = optimal_feedback(&sys, &sol, 1e-8).unwrap();
        assert!(ok);
        assert_eq!(fb.gain, Matrix::zeros(2, 2));

        // E outside the range of F is flagged.
        let sol = LureSolution {
            e: Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            f: Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
            ..sol
        };
        let (fb, ok) = optimal_feedback(&sys, &sol, 1e-8).unwrap();
        assert!(!ok);
        assert_abs_diff_eq!(
            fb.gain,
            Matrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 0.0]),
            epsilon = 1e-14
        );
    }

    #[test]
    fn value_identity_and_zero_state() {
        let sol = LureSolution {
            p_w: Matrix::identity(2, 2),
            e: Matrix::zeros(0, 2),
            f: Matrix::zeros(0, 1),
            eps_schedule: vec![],
            p_w_per_eps: vec![],
            increments: vec![],
            converged: true,
        };
        let r = value_functions(
            &(-Matrix::identity(2, 2) * 3.0),
            &sol,
            &Vector::from_vec(vec![1.0, 2.0]),
        );
        assert_eq!(r.val_jw, 5.0);
        assert_eq!(r.storage_at_x0, -15.0);
        assert_eq!(r.val_j, -10.0);
        assert_eq!(r.identity_gap, 0.0);
        let r = value_functions(&Matrix::identity(2, 2), &sol, &Vector::zeros(2));
        assert_eq!((r.val_j, r.val_jw, r.storage_at_x0), (0.0, 0.0, 0.0));
    }

    #[test]
    fn schedule_validation() {
        let sys = StateSpaceSystem::new(scalar(-1.0), scalar(1.0), scalar(1.0), scalar(0.0), scalar(1.0)).unwrap();
        let sr = SupplyRate::euclidean(scalar(1.0), scalar(0.0), scalar(0.0)).unwrap();
        let cert = dissipation_factor(&sys, &sr, &scalar(0.0), DEFAULT_CLAMP_TOL).unwrap();
        let ext = extend_system(&sys, &cert).unwrap();
        assert!(solve_singular_lq(&ext, &[]).is_err());
        assert!(solve_singular_lq(&ext, &[1e-3, 1e-2]).is_err());
        assert!(solve_singular_lq(&ext, &[1e-2, -1.0]).is_err());
    }

    #[test]
    fn scalar_singular_problem_converges() {
        // ẋ = −x + u, cost ∫ x²: the cheap-control limit has P_w → 0 as ε → 0
        // only if the zero at infinity can be cancelled; here L = 0 and K = 1.
        // The regularized value is √ε-close to 0 and decreasing.
        let sys = StateSpaceSystem::new(scalar(-1.0), scalar(1.0), scalar(1.0), scalar(0.0), scalar(1.0)).unwrap();
        let sr = SupplyRate::euclidean(scalar(1.0), scalar(0.0), scalar(0.0)).unwrap();
        let cert = dissipation_factor(&sys, &sr, &scalar(0.0), DEFAULT_CLAMP_TOL).unwrap();
        let ext = extend_system(&sys, &cert).unwrap();
        match solve_singular_lq(&ext, &default_eps_schedule()) {
            Err(Error::NoConvergence { solution, .. }) => {
                let vals: Vec<f64> = solution.p_w_per_eps.iter().map(|p| p[(0, 0)]).collect();
                assert!(vals.windows(2).all(|w| w[1] <= w[0]));
                assert!(*vals.last().unwrap() < 1e-4);
                assert!(!solution.converged);
            }
            other => panic!("expected slow cheap-control convergence, got {other:?}"),
        }
    }

    #[test]
    fn output_feedback_with_feedthrough() {
        let sys = StateSpaceSystem::new(
            -Matrix::identity(2, 2),
            Matrix::from_element(2, 1, 1.0),
            Matrix::from_row_slice(1, 2, &[0.0, 1.0]),
            scalar(1.0),
            Matrix::identity(2, 2),
        )
        .unwrap();
        let fb = output_feedback(&sys, &scalar(-1.0)).unwrap();
        // u = −(x₂ + u)  ⇒  u = −x₂/2
        assert_abs_diff_eq!(fb.gain, Matrix::from_row_slice(1, 2, &[0.0, -0.5]), epsilon = 1e-15);
        assert!(output_feedback(&sys, &scalar(1.0)).is_err());
    }
}
