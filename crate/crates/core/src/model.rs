//! Dataset representation, validation, covariate partialling and the cached
//! projection quadratic forms every test statistic is built from.
//!
//! The instrument matrix is factorized once (`Z = QR`, thin). All projections
//! onto column spans of instrument subsets then live in the `L`-dimensional
//! coordinate system of `Q`: for a subset `B`, `P_Z - P_{Z_B}` acting on `y`
//! reduces to removing the span of `R_B` from `Q'y`. No `n x n` matrix is ever
//! formed.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Singular values below this fraction of the largest count as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Outcome, exposure, candidate instruments and optional exogenous covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct IvDataset {
    y: DVector<f64>,
    d: DVector<f64>,
    z: DMatrix<f64>,
    x: Option<DMatrix<f64>>,
    instrument_names: Vec<String>,
    absorbed: usize,
}

impl IvDataset {
    /// Assembles a dataset, checking only that the shapes agree. Use
    /// [`validate_dataset`] for rank and sample-size checks.
    pub fn new(
        y: DVector<f64>,
        d: DVector<f64>,
        z: DMatrix<f64>,
        x: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let n = y.len();
        if d.len() != n || z.nrows() != n {
            return Err(Error::Dimension(format!(
                "y has {n} rows, d has {}, z has {}",
                d.len(),
                z.nrows()
            )));
        }
        if let Some(x) = &x {
            if x.nrows() != n {
                return Err(Error::Dimension(format!(
                    "covariates have {} rows, expected {n}",
                    x.nrows()
                )));
            }
        }
        if z.ncols() == 0 {
            return Err(Error::Dimension(
                "at least one instrument is required".into(),
            ));
        }
        let instrument_names = (1..=z.ncols()).map(|j| format!("z{j}")).collect();
        Ok(Self {
            y,
            d,
            z,
            x,
            instrument_names,
            absorbed: 0,
        })
    }

    pub fn with_instrument_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.z.ncols() {
            return Err(Error::Dimension(format!(
                "{} instrument names for {} instruments",
                names.len(),
                self.z.ncols()
            )));
        }
        self.instrument_names = names;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of candidate instruments `L`.
    pub fn l(&self) -> usize {
        self.z.ncols()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn d(&self) -> &DVector<f64> {
        &self.d
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn x(&self) -> Option<&DMatrix<f64>> {
        self.x.as_ref()
    }

    pub fn instrument_names(&self) -> &[String] {
        &self.instrument_names
    }

    /// Covariate columns already partialled out of `y`, `d` and `z`.
    pub fn absorbed(&self) -> usize {
        self.absorbed
    }

    fn covariate_count(&self) -> usize {
        self.absorbed + self.x.as_ref().map_or(0, |x| x.ncols())
    }

    /// Denominator degrees of freedom of the Anderson-Rubin statistic,
    /// `n - p - L` with `p` covariates (`n - L` without covariates).
    pub fn residual_df(&self) -> usize {
        self.n().saturating_sub(self.covariate_count() + self.l())
    }
}

/// Checks sample size, finiteness and the rank conditions on `z`, `x`, `[x z]`.
pub fn validate_dataset(raw: IvDataset) -> Result<IvDataset> {
    let n = raw.n();
    let l = raw.l();
    let p = raw.covariate_count();
    if n <= l + p + 1 {
        return Err(Error::Dimension(format!(
            "need n > L + p + 1, got n = {n}, L = {l}, p = {p}"
        )));
    }
    let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
    if !finite(raw.y.as_slice()) {
        return Err(Error::Data("outcome contains non-finite values".into()));
    }
    if !finite(raw.d.as_slice()) {
        return Err(Error::Data("exposure contains non-finite values".into()));
    }
    if !finite(raw.z.as_slice()) {
        return Err(Error::Data("instruments contain non-finite values".into()));
    }
    if let Some(x) = &raw.x {
        if !finite(x.as_slice()) {
            return Err(Error::Data("covariates contain non-finite values".into()));
        }
    }

    let bad = rank_deficient_columns(&raw.z);
    if !bad.is_empty() {
        return Err(Error::Collinear {
            what: "instruments",
            columns: bad
                .iter()
                .map(|&j| raw.instrument_names[j].clone())
                .collect(),
        });
    }
    if let Some(x) = &raw.x {
        let bad = rank_deficient_columns(x);
        if !bad.is_empty() {
            return Err(Error::Collinear {
                what: "covariates",
                columns: bad.iter().map(|j| format!("x{}", j + 1)).collect(),
            });
        }
        let joint = hstack(x, &raw.z);
        let bad = rank_deficient_columns(&joint);
        if !bad.is_empty() {
            let p = x.ncols();
            return Err(Error::Collinear {
                what: "instruments given covariates",
                columns: bad
                    .iter()
                    .map(|&j| {
                        if j < p {
                            format!("x{}", j + 1)
                        } else {
                            raw.instrument_names[j - p].clone()
                        }
                    })
                    .collect(),
            });
        }
    }
    Ok(raw)
}

fn hstack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// Indices of columns that are (numerically) linear combinations of earlier
/// ones. Empty when the matrix has full column rank.
pub fn rank_deficient_columns(m: &DMatrix<f64>) -> Vec<usize> {
    let k = m.ncols();
    if k == 0 {
        return Vec::new();
    }
    if m.nrows() < k {
        return (m.nrows()..k).collect();
    }
    let r = m.clone().qr().r();
    let sv = r.clone().singular_values();
    let smax = sv.max();
    if smax == 0.0 {
        return (0..k).collect();
    }
    let tol = RANK_TOLERANCE * smax;
    if sv.min() > tol {
        return Vec::new();
    }
    // Greedy pass on the triangular factor to name the offenders.
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut bad = Vec::new();
    for j in 0..k {
        let mut v = r.column(j).into_owned();
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&v);
                v.axpy(-c, q, 1.0);
            }
        }
        let norm = v.norm();
        if norm <= tol.max(RANK_TOLERANCE * r.column(j).norm()) {
            bad.push(j);
        } else {
            basis.push(v / norm);
        }
    }
    if bad.is_empty() {
        bad.push(k - 1);
    }
    bad
}

/// Replaces `y`, `d` and each instrument by its residual from a least-squares
/// projection on the covariates, then drops the covariates.
pub fn residualize_covariates(data: IvDataset) -> Result<IvDataset> {
    let Some(x) = data.x.clone() else {
        return Err(Error::Config(
            "residualize_covariates needs covariates".into(),
        ));
    };
    let bad = rank_deficient_columns(&x);
    if !bad.is_empty() {
        return Err(Error::Collinear {
            what: "covariates",
            columns: bad.iter().map(|j| format!("x{}", j + 1)).collect(),
        });
    }
    let q = x.clone().qr().q();
    let residualize = |v: &DVector<f64>| -> DVector<f64> {
        let coef = q.tr_mul(v);
        v - &q * coef
    };
    let y = residualize(&data.y);
    let d = residualize(&data.d);
    let mut z = data.z.clone();
    for j in 0..z.ncols() {
        let col = residualize(&data.z.column(j).into_owned());
        z.set_column(j, &col);
    }
    Ok(IvDataset {
        y,
        d,
        z,
        x: None,
        instrument_names: data.instrument_names,
        absorbed: data.absorbed + x.ncols(),
    })
}

/// A candidate invalid-instrument set `B` (zero-based, sorted indices into
/// the `L` instruments).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SubsetSpec {
    indices: Vec<usize>,
    l: usize,
}

impl SubsetSpec {
    /// Builds `B` from zero-based indices in any order. At least one
    /// instrument must remain outside `B`.
    pub fn new(mut indices: Vec<usize>, l: usize) -> Result<Self> {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&bad) = indices.iter().find(|&&j| j >= l) {
            return Err(Error::Config(format!(
                "instrument index {} out of range 1..={l}",
                bad + 1
            )));
        }
        if indices.len() >= l {
            return Err(Error::Config(format!(
                "subset of size {} leaves no instrument outside B (L = {l})",
                indices.len()
            )));
        }
        Ok(Self { indices, l })
    }

    pub fn empty(l: usize) -> Self {
        Self {
            indices: Vec::new(),
            l,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// `c(B)`.
    pub fn size(&self) -> usize {
        self.indices.len()
    }

    pub fn l(&self) -> usize {
        self.l
    }

    /// Instruments treated as valid, `B^c`.
    pub fn complement(&self) -> Vec<usize> {
        (0..self.l)
            .filter(|j| self.indices.binary_search(j).is_err())
            .collect()
    }

    pub fn complement_size(&self) -> usize {
        self.l - self.indices.len()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.indices.binary_search(&j).is_ok()
    }

    pub fn is_superset_of(&self, other: &[usize]) -> bool {
        other.iter().all(|&j| self.contains(j))
    }
}

impl fmt::Display for SubsetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, j) in self.indices.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", j + 1)?;
        }
        write!(f, "}}")
    }
}

/// Quadratic form of a symmetric matrix `M` in `(y, d)`:
/// `yy = y'My`, `yd = y'Md`, `dd = d'Md`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadForms {
    pub yy: f64,
    pub yd: f64,
    pub dd: f64,
}

impl QuadForms {
    /// `(y - d b)' M (y - d b)`.
    pub fn at(&self, beta0: f64) -> f64 {
        (self.yy - 2.0 * beta0 * self.yd + beta0 * beta0 * self.dd).max(0.0)
    }

    fn add(&self, other: &QuadForms) -> QuadForms {
        QuadForms {
            yy: self.yy + other.yy,
            yd: self.yd + other.yd,
            dd: self.dd + other.dd,
        }
    }
}

/// Realized quadratic forms for one subset `B`: `middle` for
/// `P_Z - P_{Z_B}` and `residual` for `R_Z = I - P_Z`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionCache {
    pub middle: QuadForms,
    pub residual: QuadForms,
    /// `L - c(B)`.
    pub df_num: usize,
    /// `n - p - L`.
    pub df_den: usize,
    /// `c(B)`.
    pub subset_size: usize,
    /// Rows of the (covariate-free) data.
    pub n: usize,
    /// Covariate columns partialled out before factorization.
    pub absorbed: usize,
}

impl ProjectionCache {
    /// Forms of `I - P_{Z_B}`, the residual maker of the controls.
    pub fn controls_residual(&self) -> QuadForms {
        self.middle.add(&self.residual)
    }
}

/// Instrument factorization shared by every subset of one dataset.
#[derive(Debug, Clone)]
pub struct ProjectionBasis {
    r: DMatrix<f64>,
    qy: DVector<f64>,
    qd: DVector<f64>,
    residual: QuadForms,
    n: usize,
    l: usize,
    absorbed: usize,
    df_den: usize,
}

/// QR factor of a fixed instrument matrix, reusable across many `(y, d)`
/// draws on the same design.
#[derive(Debug, Clone)]
pub struct InstrumentFactor {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl InstrumentFactor {
    pub fn new(z: &DMatrix<f64>) -> Self {
        let qr = z.clone().qr();
        Self {
            q: qr.q(),
            r: qr.r(),
        }
    }

    /// Basis for responses observed on this design, with no covariates.
    pub fn basis(&self, y: &DVector<f64>, d: &DVector<f64>) -> Result<ProjectionBasis> {
        let (n, l) = self.q.shape();
        if y.len() != n || d.len() != n {
            return Err(Error::Dimension(format!(
                "design has {n} rows, y has {}, d has {}",
                y.len(),
                d.len()
            )));
        }
        if n <= l {
            return Err(Error::Dimension(format!(
                "no residual degrees of freedom (n = {n}, L = {l})"
            )));
        }
        Ok(self.responses(y, d, 0, n - l))
    }

    fn responses(
        &self,
        y: &DVector<f64>,
        d: &DVector<f64>,
        absorbed: usize,
        df_den: usize,
    ) -> ProjectionBasis {
        let q = &self.q;
        let qy = q.tr_mul(y);
        let qd = q.tr_mul(d);
        let ry = y - q * &qy;
        let rd = d - q * &qd;
        ProjectionBasis {
            r: self.r.clone(),
            qy,
            qd,
            residual: QuadForms {
                yy: ry.dot(&ry),
                yd: ry.dot(&rd),
                dd: rd.dot(&rd),
            },
            n: q.nrows(),
            l: q.ncols(),
            absorbed,
            df_den,
        }
    }
}

impl ProjectionBasis {
    /// Factorizes the instruments once. Covariates still attached to the
    /// dataset are partialled out first.
    pub fn new(data: &IvDataset) -> Result<Self> {
        let owned;
        let data = if data.x.is_some() {
            owned = residualize_covariates(data.clone())?;
            &owned
        } else {
            data
        };
        let df_den = data.residual_df();
        if df_den == 0 {
            return Err(Error::Dimension(format!(
                "no residual degrees of freedom (n = {}, L = {})",
                data.n(),
                data.l()
            )));
        }
        Ok(InstrumentFactor::new(&data.z).responses(&data.y, &data.d, data.absorbed, df_den))
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn df_den(&self) -> usize {
        self.df_den
    }

    /// Quadratic forms for subset `b`.
    pub fn cache(&self, b: &SubsetSpec) -> Result<ProjectionCache> {
        if b.l() != self.l {
            return Err(Error::Dimension(format!(
                "subset built for L = {}, data has L = {}",
                b.l(),
                self.l
            )));
        }
        let (u, v) = if b.size() == 0 {
            (self.qy.clone(), self.qd.clone())
        } else {
            let mut rb = DMatrix::zeros(self.l, b.size());
            for (c, &j) in b.indices().iter().enumerate() {
                rb.set_column(c, &self.r.column(j));
            }
            let qb = rb.qr().q();
            let strip = |w: &DVector<f64>| w - &qb * qb.tr_mul(w);
            (strip(&self.qy), strip(&self.qd))
        };
        Ok(ProjectionCache {
            middle: QuadForms {
                yy: u.dot(&u),
                yd: u.dot(&v),
                dd: v.dot(&v),
            },
            residual: self.residual,
            df_num: self.l - b.size(),
            df_den: self.df_den,
            subset_size: b.size(),
            n: self.n,
            absorbed: self.absorbed,
        })
    }
}

/// One-shot cache construction; prefer [`ProjectionBasis`] when visiting
/// many subsets of the same data.
pub fn build_projection_cache(data: &IvDataset, b: &SubsetSpec) -> Result<ProjectionCache> {
    ProjectionBasis::new(data)?.cache(b)
}
