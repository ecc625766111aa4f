//! Regression terms shared by the design-variable generator and the
//! selection / population models.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One column of a regression basis.
///
/// Text form: `1` (intercept), `x1`, `v2` (1-based covariate columns),
/// `y`, `y^2`, ... (powers of the outcome).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Term {
    Intercept,
    /// Zero-based column of the population-model covariates.
    X(usize),
    /// Zero-based column of the selection-model covariates.
    V(usize),
    /// Power of the outcome, at least 1.
    Y(u32),
}

impl Term {
    pub fn eval(&self, x: &[f64], v: &[f64], y: f64) -> f64 {
        match *self {
            Term::Intercept => 1.0,
            Term::X(j) => x[j],
            Term::V(j) => v[j],
            Term::Y(p) => y.powi(p as i32),
        }
    }

    fn check(&self, nx: usize, nv: usize) -> Result<()> {
        match *self {
            Term::X(j) if j >= nx => Err(Error::InvalidSpec(format!(
                "term {self} refers to missing x column ({nx} available)"
            ))),
            Term::V(j) if j >= nv => Err(Error::InvalidSpec(format!(
                "term {self} refers to missing v column ({nv} available)"
            ))),
            Term::Y(0) => Err(Error::InvalidSpec("y^0 duplicates the intercept".into())),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Term::Intercept => write!(f, "1"),
            Term::X(j) => write!(f, "x{}", j + 1),
            Term::V(j) => write!(f, "v{}", j + 1),
            Term::Y(1) => write!(f, "y"),
            Term::Y(p) => write!(f, "y^{p}"),
        }
    }
}

impl FromStr for Term {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::InvalidSpec(format!("unrecognised term `{s}`"));
        let column = |rest: &str| -> Result<usize> {
            let k: usize = if rest.is_empty() { 1 } else { rest.parse().map_err(|_| bad())? };
            if k == 0 {
                return Err(bad());
            }
            Ok(k - 1)
        };
        match s {
            "1" | "intercept" => Ok(Term::Intercept),
            "y" => Ok(Term::Y(1)),
            _ if s.starts_with("y^") => {
                let p: u32 = s[2..].parse().map_err(|_| bad())?;
                if p == 0 {
                    return Err(bad());
                }
                Ok(Term::Y(p))
            }
            _ if s.starts_with('x') => Ok(Term::X(column(&s[1..])?)),
            _ if s.starts_with('v') => Ok(Term::V(column(&s[1..])?)),
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for Term {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Term> for String {
    fn from(t: Term) -> String {
        t.to_string()
    }
}

/// Parse a comma-separated term list such as `1,v1,y^2`.
pub fn parse_terms(s: &str) -> Result<Vec<Term>> {
    s.split(',').filter(|t| !t.trim().is_empty()).map(str::parse).collect()
}

pub fn format_terms(terms: &[Term]) -> String {
    terms.iter().map(Term::to_string).collect::<Vec<_>>().join(",")
}

/// Reject empty lists and duplicates.
pub fn validate_terms(terms: &[Term]) -> Result<()> {
    if terms.is_empty() {
        return Err(Error::InvalidSpec("term list is empty".into()));
    }
    for (i, t) in terms.iter().enumerate() {
        if terms[..i].contains(t) {
            return Err(Error::InvalidSpec(format!("duplicate term {t}")));
        }
    }
    Ok(())
}

/// Evaluate `terms` row by row into an `n x terms.len()` matrix.
pub fn design_matrix(
    terms: &[Term],
    x: &DMatrix<f64>,
    v: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let n = y.len();
    if x.nrows() != n || v.nrows() != n {
        return Err(Error::Dimension(format!(
            "covariate rows ({}, {}) do not match outcome length {n}",
            x.nrows(),
            v.nrows()
        )));
    }
    for t in terms {
        t.check(x.ncols(), v.ncols())?;
    }
    let mut out = DMatrix::zeros(n, terms.len());
    let mut xr = vec![0.0; x.ncols()];
    let mut vr = vec![0.0; v.ncols()];
    for i in 0..n {
        xr.iter_mut().enumerate().for_each(|(c, slot)| *slot = x[(i, c)]);
        vr.iter_mut().enumerate().for_each(|(c, slot)| *slot = v[(i, c)]);
        for (j, t) in terms.iter().enumerate() {
            out[(i, j)] = t.eval(&xr, &vr, y[i]);
        }
    }
    Ok(out)
}
