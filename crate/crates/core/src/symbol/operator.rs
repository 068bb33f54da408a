use std::collections::BTreeMap;
use std::path::Path;

use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use super::PolySymbol;
use crate::error::{invalid, LabError, Result};
use crate::poly::{parse_rational, rat, rational_to_f64, rational_to_string, Poly, Rational};

/// Dense matrix of exact rationals, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RationalMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Rational>,
}

impl RationalMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Rational::zero(); rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<Rational>>) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(invalid("ragged coefficient matrix"));
        }
        Ok(Self {
            rows: r,
            cols: c,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> &Rational {
        &self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: Rational) {
        self.data[i * self.cols + j] = v;
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(Zero::is_zero)
    }

    pub fn to_f64(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(self.rows, self.cols, |i, j| rational_to_f64(self.get(i, j)))
    }
}

/// Homogeneous constant-coefficient differential operator
/// `sum_{|alpha| = order} A_alpha d^alpha` from `R^dim_from` to `R^dim_to` on `R^dim_n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DiffOperator {
    dim_n: usize,
    dim_from: usize,
    dim_to: usize,
    order: u32,
    coeffs: BTreeMap<Vec<u32>, RationalMatrix>,
    name: Option<String>,
}

impl DiffOperator {
    pub fn new(
        dim_n: usize,
        dim_from: usize,
        dim_to: usize,
        order: u32,
        coeffs: BTreeMap<Vec<u32>, RationalMatrix>,
    ) -> Result<Self> {
        if !(1..=3).contains(&dim_n) {
            return Err(invalid(format!("dim_n must be 1..=3, got {dim_n}")));
        }
        if dim_from == 0 || dim_to == 0 || order == 0 {
            return Err(invalid("fiber dimensions and order must be positive"));
        }
        for (alpha, m) in &coeffs {
            if alpha.len() != dim_n {
                return Err(invalid(format!("multi-index {alpha:?} has wrong length")));
            }
            if alpha.iter().sum::<u32>() != order {
                return Err(invalid(format!("multi-index {alpha:?} is not of order {order}")));
            }
            if m.rows() != dim_to || m.cols() != dim_from {
                return Err(invalid(format!(
                    "coefficient for {alpha:?} has shape {}x{}, expected {dim_to}x{dim_from}",
                    m.rows(),
                    m.cols()
                )));
            }
        }
        let coeffs: BTreeMap<_, _> = coeffs.into_iter().filter(|(_, m)| !m.is_zero()).collect();
        if coeffs.is_empty() {
            return Err(LabError::DegenerateOperator);
        }
        Ok(Self {
            dim_n,
            dim_from,
            dim_to,
            order,
            coeffs,
            name: None,
        })
    }

    fn named(mut self, name: &str) -> Self {
        self.name = Some(name.to_string());
        self
    }

    pub fn dim_n(&self) -> usize {
        self.dim_n
    }

    pub fn dim_from(&self) -> usize {
        self.dim_from
    }

    pub fn dim_to(&self) -> usize {
        self.dim_to
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn coeffs(&self) -> &BTreeMap<Vec<u32>, RationalMatrix> {
        &self.coeffs
    }

    /// Gradient of a scalar: `R -> R^n`.
    pub fn gradient(n: usize) -> Result<Self> {
        let mut coeffs = BTreeMap::new();
        for i in 0..n {
            let mut m = RationalMatrix::zeros(n, 1);
            m.set(i, 0, Rational::one());
            coeffs.insert(unit(n, i), m);
        }
        Ok(Self::new(n, 1, n, 1, coeffs)?.named("grad"))
    }

    /// Divergence `R^n -> R`.
    pub fn divergence(n: usize) -> Result<Self> {
        let mut coeffs = BTreeMap::new();
        for i in 0..n {
            let mut m = RationalMatrix::zeros(1, n);
            m.set(0, i, Rational::one());
            coeffs.insert(unit(n, i), m);
        }
        Ok(Self::new(n, n, 1, 1, coeffs)?.named("div"))
    }

    /// Curl: `R^3 -> R^3` for n = 3, the scalar rotation `d1 u2 - d2 u1` for n = 2.
    pub fn curl(n: usize) -> Result<Self> {
        let mut coeffs = BTreeMap::new();
        match n {
            3 => {
                // (curl u)_i = eps_ijk d_j u_k
                for j in 0..3 {
                    let mut m = RationalMatrix::zeros(3, 3);
                    for i in 0..3 {
                        for k in 0..3 {
                            let e = levi_civita(i, j, k);
                            if e != 0 {
                                m.set(i, k, rat(e, 1));
                            }
                        }
                    }
                    coeffs.insert(unit(3, j), m);
                }
                Ok(Self::new(3, 3, 3, 1, coeffs)?.named("curl"))
            }
            2 => {
                let mut m1 = RationalMatrix::zeros(1, 2);
                m1.set(0, 1, Rational::one());
                let mut m2 = RationalMatrix::zeros(1, 2);
                m2.set(0, 0, rat(-1, 1));
                coeffs.insert(unit(2, 0), m1);
                coeffs.insert(unit(2, 1), m2);
                Ok(Self::new(2, 2, 1, 1, coeffs)?.named("curl"))
            }
            _ => Err(invalid("curl is defined for n = 2 or 3")),
        }
    }

    /// Symmetric gradient `R^n -> R^{n x n}` (row-major flattening).
    pub fn sym_gradient(n: usize) -> Result<Self> {
        let mut coeffs = BTreeMap::new();
        let half = rat(1, 2);
        for j in 0..n {
            // (Eu)_{ab} = (d_b u_a + d_a u_b) / 2
            let mut m = RationalMatrix::zeros(n * n, n);
            for a in 0..n {
                for b in 0..n {
                    for c in 0..n {
                        let mut v = Rational::zero();
                        if a == c && b == j {
                            v += &half;
                        }
                        if b == c && a == j {
                            v += &half;
                        }
                        m.set(a * n + b, c, v);
                    }
                }
            }
            coeffs.insert(unit(n, j), m);
        }
        Ok(Self::new(n, n, n * n, 1, coeffs)?.named("sym_grad"))
    }

    /// Laplacian on scalars.
    pub fn laplacian(n: usize) -> Result<Self> {
        let mut coeffs = BTreeMap::new();
        for i in 0..n {
            let mut alpha = vec![0; n];
            alpha[i] = 2;
            let mut m = RationalMatrix::zeros(1, 1);
            m.set(0, 0, Rational::one());
            coeffs.insert(alpha, m);
        }
        Ok(Self::new(n, 1, 1, 2, coeffs)?.named("laplacian"))
    }

    pub fn builtin(name: &str, n: usize) -> Result<Self> {
        match name {
            "grad" | "gradient" => Self::gradient(n),
            "div" | "divergence" => Self::divergence(n),
            "curl" => Self::curl(n),
            "sym_grad" => Self::sym_gradient(n),
            "laplacian" => Self::laplacian(n),
            other => Err(LabError::Config(format!("unknown built-in operator '{other}'"))),
        }
    }

    /// Transcribes a homogeneous polynomial symbol back into an operator via
    /// `xi^alpha -> d^alpha`. Returns `None` for the zero symbol.
    pub fn from_symbol(symbol: &PolySymbol) -> Result<Option<Self>> {
        if symbol.is_zero() {
            return Ok(None);
        }
        let order = u32::try_from(symbol.degree())
            .ok()
            .filter(|&d| d > 0)
            .ok_or_else(|| invalid("only positive-degree symbols transcribe to operators"))?;
        let mut coeffs: BTreeMap<Vec<u32>, RationalMatrix> = BTreeMap::new();
        for i in 0..symbol.rows() {
            for j in 0..symbol.cols() {
                for (e, c) in symbol.entry(i, j).terms() {
                    coeffs
                        .entry(e.clone())
                        .or_insert_with(|| RationalMatrix::zeros(symbol.rows(), symbol.cols()))
                        .set(i, j, c.clone());
                }
            }
        }
        Ok(Some(Self::new(
            symbol.nvars(),
            symbol.cols(),
            symbol.rows(),
            order,
            coeffs,
        )?))
    }

    /// `A(xi) = sum_alpha A_alpha xi^alpha`.
    pub fn symbol(&self) -> PolySymbol {
        let mut entries = vec![Poly::zero(self.dim_n); self.dim_to * self.dim_from];
        for (alpha, m) in &self.coeffs {
            for i in 0..self.dim_to {
                for j in 0..self.dim_from {
                    let c = m.get(i, j);
                    if !c.is_zero() {
                        entries[i * self.dim_from + j] += &Poly::monomial(alpha.clone(), c.clone());
                    }
                }
            }
        }
        PolySymbol::from_entries(self.dim_n, self.dim_to, self.dim_from, entries, self.order as i32)
            .expect("operator symbol is homogeneous by construction")
    }

    pub fn to_file(&self) -> OperatorFile {
        OperatorFile {
            dim_n: self.dim_n,
            dim_from: self.dim_from,
            dim_to: self.dim_to,
            order: self.order,
            coeffs: self
                .coeffs
                .iter()
                .map(|(alpha, m)| CoeffEntry {
                    alpha: alpha.clone(),
                    matrix: (0..m.rows())
                        .map(|i| {
                            (0..m.cols())
                                .map(|j| RationalValue::Text(rational_to_string(m.get(i, j))))
                                .collect()
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn from_file(file: &OperatorFile) -> Result<Self> {
        let mut coeffs = BTreeMap::new();
        for entry in &file.coeffs {
            let rows = entry
                .matrix
                .iter()
                .map(|row| row.iter().map(RationalValue::to_rational).collect::<Result<Vec<_>>>())
                .collect::<Result<Vec<_>>>()?;
            let m = RationalMatrix::from_rows(rows)?;
            if coeffs.insert(entry.alpha.clone(), m).is_some() {
                return Err(LabError::Config(format!(
                    "duplicate multi-index {:?}",
                    entry.alpha
                )));
            }
        }
        Self::new(file.dim_n, file.dim_from, file.dim_to, file.order, coeffs)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: OperatorFile = serde_json::from_str(s)?;
        Self::from_file(&file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn unit(n: usize, i: usize) -> Vec<u32> {
    let mut a = vec![0; n];
    a[i] = 1;
    a
}

fn levi_civita(i: usize, j: usize, k: usize) -> i64 {
    match (i, j, k) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1,
        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1,
        _ => 0,
    }
}

/// On-disk operator description; rationals are `"p/q"` strings (integers also accepted).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct OperatorFile {
    pub dim_n: usize,
    pub dim_from: usize,
    pub dim_to: usize,
    pub order: u32,
    pub coeffs: Vec<CoeffEntry>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CoeffEntry {
    pub alpha: Vec<u32>,
    pub matrix: Vec<Vec<RationalValue>>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum RationalValue {
    Int(i64),
    Text(String),
}

impl RationalValue {
    fn to_rational(&self) -> Result<Rational> {
        match self {
            Self::Int(i) => Ok(rat(*i, 1)),
            Self::Text(s) => {
                parse_rational(s).ok_or_else(|| LabError::Config(format!("bad rational '{s}'")))
            }
        }
    }
}

/// How a run configuration names an operator.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum OperatorSpec {
    Name(String),
    Builtin {
        builtin: String,
        dim_n: Option<usize>,
    },
    File {
        file: String,
    },
    Explicit(OperatorFile),
}

impl OperatorSpec {
    /// Resolves the spec; `default_n` supplies the dimension for bare names.
    pub fn resolve(&self, default_n: usize, base_dir: Option<&Path>) -> Result<DiffOperator> {
        match self {
            Self::Name(name) => DiffOperator::builtin(name, default_n),
            Self::Builtin { builtin, dim_n } => {
                DiffOperator::builtin(builtin, dim_n.unwrap_or(default_n))
            }
            Self::File { file } => {
                let p = match base_dir {
                    Some(dir) => dir.join(file),
                    None => file.into(),
                };
                if !p.exists() {
                    return Err(LabError::Config(format!(
                        "operator file {} does not exist",
                        p.display()
                    )));
                }
                DiffOperator::load(&p)
            }
            Self::Explicit(f) => DiffOperator::from_file(f),
        }
    }
}
