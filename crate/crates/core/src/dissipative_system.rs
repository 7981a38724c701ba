//! State-space systems, quadratic supply rates, the dissipation LMI and the
//! dissipation-output factorization.

use crate::error::{Error, Result};
use crate::matrix_core::{
    ensure_shape, ensure_square, ensure_symmetric, psd_factor, sym_eig, symmetrize, Matrix, Vector,
};

/// `ẋ = Ax + Bu`, `y = Cx + Du`, with the state inner product `⟨x, z⟩ = xᵀ·gram·z`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceSystem {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub d: Matrix,
    pub gram: Matrix,
}

impl StateSpaceSystem {
    pub fn new(a: Matrix, b: Matrix, c: Matrix, d: Matrix, gram: Matrix) -> Result<Self> {
        ensure_square(&a, "A")?;
        let n = a.nrows();
        if b.nrows() != n {
            return Err(Error::Shape(format!("B must have {n} rows, got {}", b.nrows())));
        }
        if c.ncols() != n {
            return Err(Error::Shape(format!("C must have {n} columns, got {}", c.ncols())));
        }
        ensure_shape(&d, c.nrows(), b.ncols(), "D")?;
        ensure_shape(&gram, n, n, "gram")?;
        ensure_symmetric(&gram, "gram")?;
        if n > 0 && sym_eig(&gram)?.eigenvalues[0] <= 0.0 {
            return Err(Error::Shape("gram must be positive definite".into()));
        }
        for (name, m) in [("A", &a), ("B", &b), ("C", &c), ("D", &d), ("gram", &gram)] {
            if !m.iter().all(|x| x.is_finite()) {
                return Err(Error::Shape(format!("{name} has non-finite entries")));
            }
        }
        Ok(Self { a, b, c, d, gram })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    pub fn output(&self, x: &Vector, u: &Vector) -> Vector {
        &self.c * x + &self.d * u
    }

    /// `‖x‖_G`.
    pub fn state_norm(&self, x: &Vector) -> f64 {
        x.dot(&(&self.gram * x)).max(0.0).sqrt()
    }
}

/// `s(y, u) = yᵀΩQy + 2yᵀΩSu + uᵀRu` with output Gram matrix `Ω`.
#[derive(Debug, Clone, PartialEq)]
pub struct SupplyRate {
    pub q: Matrix,
    pub s: Matrix,
    pub r: Matrix,
    pub out_gram: Matrix,
}

impl SupplyRate {
    pub fn new(q: Matrix, s: Matrix, r: Matrix, out_gram: Matrix) -> Result<Self> {
        ensure_symmetric(&q, "Q")?;
        ensure_symmetric(&r, "R")?;
        ensure_shape(&s, q.nrows(), r.nrows(), "S")?;
        ensure_shape(&out_gram, q.nrows(), q.nrows(), "out_gram")?;
        ensure_symmetric(&out_gram, "out_gram")?;
        Ok(Self { q, s, r, out_gram })
    }

    /// Supply rate with Euclidean output inner product.
    pub fn euclidean(q: Matrix, s: Matrix, r: Matrix) -> Result<Self> {
        let p = q.nrows();
        Self::new(q, s, r, Matrix::identity(p, p))
    }

    pub fn p(&self) -> usize {
        self.q.nrows()
    }

    pub fn m(&self) -> usize {
        self.r.nrows()
    }

    fn weighted_q(&self) -> Matrix {
        symmetrize(&(&self.out_gram * &self.q))
    }

    fn weighted_s(&self) -> Matrix {
        &self.out_gram * &self.s
    }
}

pub fn supply_eval(sr: &SupplyRate, y: &Vector, u: &Vector) -> Result<f64> {
    if y.len() != sr.p() || u.len() != sr.m() {
        return Err(Error::Shape(format!(
            "supply expects y in R^{} and u in R^{}, got {} and {}",
            sr.p(),
            sr.m(),
            y.len(),
            u.len()
        )));
    }
    let omega_y = &sr.out_gram * y;
    Ok(omega_y.dot(&(&sr.q * y)) + 2.0 * omega_y.dot(&(&sr.s * u)) + u.dot(&(&sr.r * u)))
}

fn check_compatible(sys: &StateSpaceSystem, sr: &SupplyRate, p: &Matrix) -> Result<()> {
    if sr.p() != sys.p() || sr.m() != sys.m() {
        return Err(Error::Shape(format!(
            "supply rate is {}x{} but system has p={} outputs and m={} inputs",
            sr.p(),
            sr.m(),
            sys.p(),
            sys.m()
        )));
    }
    ensure_shape(p, sys.n(), sys.n(), "storage P")?;
    ensure_symmetric(p, "storage P")
}

/// Matrix of the quadratic form `(x, u) ↦ 2xᵀP(Ax + Bu) + s(Cx + Du, u)`.
///
/// `P` is the matrix of the storage form itself, `S(x) = xᵀPx`; the state Gram
/// matrix is already folded into it (for the bundled models `P = ±gram`).
pub fn lure_residual(sys: &StateSpaceSystem, sr: &SupplyRate, p: &Matrix) -> Result<Matrix> {
    check_compatible(sys, sr, p)?;
    let (n, m) = (sys.n(), sys.m());
    let q = sr.weighted_q();
    let s = sr.weighted_s();
    let ct = sys.c.transpose();
    let dt = sys.d.transpose();

    let w11 = sys.a.transpose() * p + p * &sys.a + &ct * &q * &sys.c;
    let w12 = p * &sys.b + &ct * (&q * &sys.d + &s);
    let ds = &dt * &s;
    let w22 = &dt * &q * &sys.d + &ds + ds.transpose() + &sr.r;

    let mut w = Matrix::zeros(n + m, n + m);
    w.view_mut((0, 0), (n, n)).copy_from(&w11);
    w.view_mut((0, n), (n, m)).copy_from(&w12);
    w.view_mut((n, 0), (m, n)).copy_from(&w12.transpose());
    w.view_mut((n, n), (m, m)).copy_from(&w22);
    Ok(symmetrize(&w))
}

/// Returns `(dissipative, min_eig)` where dissipative means
/// `min_eig ≥ −tol·(1 + ‖W‖₂)`.
pub fn check_dissipativity(sys: &StateSpaceSystem, sr: &SupplyRate, p: &Matrix, tol: f64) -> Result<(bool, f64)> {
    let w = lure_residual(sys, sr, p)?;
    if w.is_empty() {
        return Ok((true, 0.0));
    }
    let eig = sym_eig(&w)?.eigenvalues;
    let min_eig = eig[0];
    let norm = eig[0].abs().max(eig[eig.len() - 1].abs());
    Ok((min_eig >= -tol * (1.0 + norm), min_eig))
}

/// Storage `xᵀPx` with the dissipation output `w = Kx + Lu`.
#[derive(Debug, Clone, PartialEq)]
pub struct StorageCertificate {
    pub p: Matrix,
    pub k: Matrix,
    pub l: Matrix,
    pub rank_w: usize,
}

/// Factor `W(P) = [K L]ᵀ[K L]`.
pub fn dissipation_factor(
    sys: &StateSpaceSystem,
    sr: &SupplyRate,
    p: &Matrix,
    clamp_tol: f64,
) -> Result<StorageCertificate> {
    let w = lure_residual(sys, sr, p)?;
    let n = sys.n();
    let (factor, rank_w) = psd_factor(&w, clamp_tol)?;
    let factor = if factor.ncols() == w.ncols() {
        factor
    } else {
        Matrix::zeros(0, w.ncols())
    };
    Ok(StorageCertificate {
        p: p.clone(),
        k: factor.columns(0, n).into_owned(),
        l: factor.columns(n, sys.m()).into_owned(),
        rank_w,
    })
}

/// A system whose output is stacked as `[y; w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedSystem {
    pub base: StateSpaceSystem,
    /// The last `w_rows` output rows are the dissipation output.
    pub w_rows: usize,
}

impl ExtendedSystem {
    pub fn y_rows(&self) -> usize {
        self.base.p() - self.w_rows
    }

    pub fn k(&self) -> Matrix {
        self.base.c.rows(self.y_rows(), self.w_rows).into_owned()
    }

    pub fn l(&self) -> Matrix {
        self.base.d.rows(self.y_rows(), self.w_rows).into_owned()
    }

    /// The original system, without the dissipation output rows.
    pub fn plain(&self) -> StateSpaceSystem {
        let p = self.y_rows();
        StateSpaceSystem {
            a: self.base.a.clone(),
            b: self.base.b.clone(),
            c: self.base.c.rows(0, p).into_owned(),
            d: self.base.d.rows(0, p).into_owned(),
            gram: self.base.gram.clone(),
        }
    }
}

pub fn extend_system(sys: &StateSpaceSystem, cert: &StorageCertificate) -> Result<ExtendedSystem> {
    ensure_shape(&cert.k, cert.rank_w, sys.n(), "K")?;
    ensure_shape(&cert.l, cert.rank_w, sys.m(), "L")?;
    let (p, r) = (sys.p(), cert.rank_w);
    let mut c = Matrix::zeros(p + r, sys.n());
    c.rows_mut(0, p).copy_from(&sys.c);
    c.rows_mut(p, r).copy_from(&cert.k);
    let mut d = Matrix::zeros(p + r, sys.m());
    d.rows_mut(0, p).copy_from(&sys.d);
    d.rows_mut(p, r).copy_from(&cert.l);
    Ok(ExtendedSystem {
        base: StateSpaceSystem { c, d, ..sys.clone() },
        w_rows: r,
    })
}

/// `s̃((y, w), u) = ‖w‖²`.
pub fn extended_supply(ext: &ExtendedSystem) -> SupplyRate {
    w_norm_supply(ext.y_rows(), ext.w_rows, ext.base.m())
}

/// `‖w‖²` on stacked outputs `(y, w) ∈ R^p × R^r` with `m` inputs.
pub fn w_norm_supply(p: usize, r: usize, m: usize) -> SupplyRate {
    let mut q = Matrix::zeros(p + r, p + r);
    q.view_mut((p, p), (r, r)).fill_with_identity();
    SupplyRate {
        q,
        s: Matrix::zeros(p + r, m),
        r: Matrix::zeros(m, m),
        out_gram: Matrix::identity(p + r, p + r),
    }
}
