//! JSON documents for system bundles and Lur'e solutions. Matrices are nested
//! row-major arrays; floats are written in shortest round-trip form, so a
//! write/read cycle is bit-exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dissipative_system::{StateSpaceSystem, StorageCertificate, SupplyRate};
use crate::error::{Error, Result};
use crate::lure_lq::LureSolution;
use crate::matrix_core::Matrix;
use crate::pde_models::ModelBundle;

type Rows = Vec<Vec<f64>>;

fn to_rows(m: &Matrix) -> Result<Rows> {
    if !m.iter().all(|x| x.is_finite()) {
        return Err(Error::Format("cannot serialize non-finite matrix entries".into()));
    }
    Ok(m.row_iter().map(|r| r.iter().copied().collect()).collect())
}

/// Rebuild a matrix; `cols` is used when there are no rows to infer it from.
fn from_rows(rows: &Rows, cols: usize, name: &str) -> Result<Matrix> {
    if rows.is_empty() {
        return Ok(Matrix::zeros(0, cols));
    }
    let c = rows[0].len();
    if rows.iter().any(|r| r.len() != c) {
        return Err(Error::Format(format!("field \"{name}\" has ragged rows")));
    }
    Ok(Matrix::from_row_iterator(rows.len(), c, rows.iter().flatten().copied()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BundleDoc {
    #[serde(rename = "A")]
    a: Rows,
    #[serde(rename = "B")]
    b: Rows,
    #[serde(rename = "C")]
    c: Rows,
    #[serde(rename = "D")]
    d: Rows,
    gram: Rows,
    #[serde(rename = "Q")]
    q: Rows,
    #[serde(rename = "S")]
    s: Rows,
    #[serde(rename = "R")]
    r: Rows,
    out_gram: Rows,
    #[serde(rename = "P")]
    p: Rows,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    k: Option<Rows>,
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    l: Option<Rows>,
}

/// A system, its supply rate and a storage matrix, optionally with the
/// dissipation-output factor.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemBundle {
    pub sys: StateSpaceSystem,
    pub sr: SupplyRate,
    pub p: Matrix,
    pub factor: Option<(Matrix, Matrix)>,
}

impl From<&ModelBundle> for SystemBundle {
    fn from(m: &ModelBundle) -> Self {
        Self {
            sys: m.sys.clone(),
            sr: m.sr.clone(),
            p: m.p.clone(),
            factor: None,
        }
    }
}

impl SystemBundle {
    pub fn with_certificate(mut self, cert: &StorageCertificate) -> Self {
        self.factor = Some((cert.k.clone(), cert.l.clone()));
        self
    }

    pub fn to_json(&self) -> Result<String> {
        let (k, l) = match &self.factor {
            Some((k, l)) => (Some(to_rows(k)?), Some(to_rows(l)?)),
            None => (None, None),
        };
        let doc = BundleDoc {
            a: to_rows(&self.sys.a)?,
            b: to_rows(&self.sys.b)?,
            c: to_rows(&self.sys.c)?,
            d: to_rows(&self.sys.d)?,
            gram: to_rows(&self.sys.gram)?,
            q: to_rows(&self.sr.q)?,
            s: to_rows(&self.sr.s)?,
            r: to_rows(&self.sr.r)?,
            out_gram: to_rows(&self.sr.out_gram)?,
            p: to_rows(&self.p)?,
            k,
            l,
        };
        serde_json::to_string_pretty(&doc).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: BundleDoc = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        let a = from_rows(&doc.a, 0, "A")?;
        let n = a.nrows();
        let b = from_rows(&doc.b, 0, "B")?;
        let m = b.ncols();
        let c = from_rows(&doc.c, n, "C")?;
        let sys = StateSpaceSystem::new(a, b, c, from_rows(&doc.d, m, "D")?, from_rows(&doc.gram, n, "gram")?)?;
        let p_out = sys.p();
        let sr = SupplyRate::new(
            from_rows(&doc.q, p_out, "Q")?,
            from_rows(&doc.s, m, "S")?,
            from_rows(&doc.r, m, "R")?,
            from_rows(&doc.out_gram, p_out, "out_gram")?,
        )?;
        let p = from_rows(&doc.p, n, "P")?;
        crate::matrix_core::ensure_shape(&p, n, n, "P")?;
        let factor = match (doc.k, doc.l) {
            (Some(k), Some(l)) => Some((from_rows(&k, n, "K")?, from_rows(&l, m, "L")?)),
            (None, None) => None,
            _ => return Err(Error::Format("fields \"K\" and \"L\" must appear together".into())),
        };
        Ok(Self { sys, sr, p, factor })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolutionDoc {
    #[serde(rename = "P_w")]
    p_w: Rows,
    #[serde(rename = "E")]
    e: Rows,
    #[serde(rename = "F")]
    f: Rows,
    eps_schedule: Vec<f64>,
    converged: bool,
    /// Input dimension, needed to shape an empty `F`.
    inputs: usize,
    #[serde(default)]
    increments: Vec<f64>,
}

pub fn solution_to_json(sol: &LureSolution) -> Result<String> {
    let doc = SolutionDoc {
        p_w: to_rows(&sol.p_w)?,
        e: to_rows(&sol.e)?,
        f: to_rows(&sol.f)?,
        eps_schedule: sol.eps_schedule.clone(),
        converged: sol.converged,
        inputs: sol.f.ncols(),
        increments: sol.increments.clone(),
    };
    serde_json::to_string_pretty(&doc).map_err(|e| Error::Format(e.to_string()))
}

/// Per-`ε` diagnostics are not part of the document and come back empty.
pub fn solution_from_json(text: &str) -> Result<LureSolution> {
    let doc: SolutionDoc = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
    let p_w = from_rows(&doc.p_w, 0, "P_w")?;
    let n = p_w.nrows();
    Ok(LureSolution {
        e: from_rows(&doc.e, n, "E")?,
        f: from_rows(&doc.f, doc.inputs, "F")?,
        p_w,
        eps_schedule: doc.eps_schedule,
        p_w_per_eps: Vec::new(),
        increments: doc.increments,
        converged: doc.converged,
    })
}

/// Write via a temporary file in the same directory and rename into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
