//! Horvitz-Thompson score systems.
//!
//! A [`ScoreSystem`] holds a basis `B` (n x d), a response `r` and inclusion
//! probabilities `pi`. With residuals `e = r - B g` it provides
//!
//! - the HT objective `W(g) = sum e_i^2 / pi_i`,
//! - the HT score `J(g) = B' diag(1/pi) e = -grad W / 2`,
//! - the randomization covariance of `J`,
//!   `Sigma = sum_ij e_i e_j b_i b_j' (1/(pi_i pi_j) - 1/pi_ij)`.
//!
//! The selection model uses `r = pi`; the outcome model reuses the same
//! machinery with `r = y` and the regressors `[1, x, v]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{self, Term};
use crate::design::{self, SampleData};
use crate::error::{Error, Result};
use crate::linalg::{self, RANK_TOL};
use crate::synthpop::{population_terms, PopulationFrame};

/// Terms of a selection model `E(pi | v, y) = sum_k g_k term_k`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SelectionModelSpec {
    terms: Vec<Term>,
}

impl SelectionModelSpec {
    pub fn new(terms: Vec<Term>) -> Result<Self> {
        basis::validate_terms(&terms)?;
        Ok(Self { terms })
    }

    /// Intercept and the listed `v` columns, then the listed powers of `y`.
    pub fn from_parts(v_columns: &[usize], y_powers: &[u32]) -> Result<Self> {
        let terms = std::iter::once(Term::Intercept)
            .chain(v_columns.iter().map(|&j| Term::V(j)))
            .chain(y_powers.iter().map(|&p| Term::Y(p)))
            .collect();
        Self::new(terms)
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::new(basis::parse_terms(s)?)
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn dim(&self) -> usize {
        self.terms.len()
    }
}

impl std::fmt::Display for SelectionModelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&basis::format_terms(&self.terms))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSystem {
    terms: Vec<Term>,
    basis: DMatrix<f64>,
    response: DVector<f64>,
    pi: DVector<f64>,
    weights: DVector<f64>,
    population_size: f64,
}

impl ScoreSystem {
    pub fn from_parts(
        terms: Vec<Term>,
        basis: DMatrix<f64>,
        response: DVector<f64>,
        pi: DVector<f64>,
        population_size: f64,
    ) -> Result<Self> {
        let (n, d) = basis.shape();
        if terms.len() != d || response.len() != n || pi.len() != n {
            return Err(Error::Dimension(format!(
                "basis {n}x{d}, {} terms, response {}, pi {}",
                terms.len(),
                response.len(),
                pi.len()
            )));
        }
        if n < d {
            return Err(Error::InvalidSpec(format!("{n} rows cannot identify {d} coefficients")));
        }
        if pi.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
            return Err(Error::Data("inclusion probabilities must lie in (0, 1]".into()));
        }
        let weights = pi.map(|p| 1.0 / p);
        Ok(Self { terms, basis, response, pi, weights, population_size })
    }

    /// Selection model: regress `pi` on the spec's terms.
    pub fn selection(sample: &SampleData, spec: &SelectionModelSpec) -> Result<Self> {
        let b = basis::design_matrix(spec.terms(), &sample.x, &sample.v, &sample.y)?;
        let sys = Self::from_parts(spec.terms.clone(), b, sample.pi.clone(), sample.pi.clone(), sample.population_size)?;
        sys.check_rank()?;
        Ok(sys)
    }

    /// Outcome model: regress `y` on `[1, x, v]`.
    pub fn population(sample: &SampleData) -> Result<Self> {
        let terms = population_terms(sample.x.ncols(), sample.v.ncols());
        let b = basis::design_matrix(&terms, &sample.x, &sample.v, &sample.y)?;
        let sys = Self::from_parts(terms, b, sample.y.clone(), sample.pi.clone(), sample.population_size)?;
        sys.check_rank()?;
        Ok(sys)
    }

    fn check_rank(&self) -> Result<()> {
        ht_fit(self).map(|_| ())
    }

    pub fn n(&self) -> usize {
        self.basis.nrows()
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.response
    }

    pub fn pi(&self) -> &DVector<f64> {
        &self.pi
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn population_size(&self) -> f64 {
        self.population_size
    }

    /// `S_pi = (N / n) sum pi_i`.
    pub fn s_pi(&self) -> f64 {
        self.population_size / self.n() as f64 * self.pi.sum()
    }

    pub fn residuals(&self, gamma: &DVector<f64>) -> DVector<f64> {
        &self.response - &self.basis * gamma
    }

    /// `B' diag(1/pi) B`, the (constant) negative Jacobian of the score.
    pub fn weighted_gram(&self) -> DMatrix<f64> {
        let mut wb = self.basis.clone();
        for (mut row, w) in wb.row_iter_mut().zip(self.weights.iter()) {
            row *= *w;
        }
        self.basis.transpose() * wb
    }

    /// Sub-system on the listed basis columns.
    pub fn restrict(&self, columns: &[usize]) -> Result<Self> {
        if columns.iter().any(|&c| c >= self.dim()) {
            return Err(Error::Dimension("column index out of range".into()));
        }
        Self::from_parts(
            columns.iter().map(|&c| self.terms[c]).collect(),
            linalg::select_columns(&self.basis, columns),
            self.response.clone(),
            self.pi.clone(),
            self.population_size,
        )
    }

    /// Same system with the response multiplied by `c`; weights unchanged.
    pub fn scale_response(&self, c: f64) -> Self {
        Self { response: &self.response * c, ..self.clone() }
    }

    pub fn with_response(&self, response: DVector<f64>) -> Result<Self> {
        if response.len() != self.n() {
            return Err(Error::Dimension("response length".into()));
        }
        Ok(Self { response, ..self.clone() })
    }

    fn check_gamma(&self, gamma: &DVector<f64>) {
        assert_eq!(gamma.len(), self.dim(), "coefficient vector has wrong length");
    }
}

/// `sum_i e_i^2 / pi_i`
pub fn ht_objective(sys: &ScoreSystem, gamma: &DVector<f64>) -> f64 {
    sys.check_gamma(gamma);
    let e = sys.residuals(gamma);
    e.iter().zip(sys.pi.iter()).map(|(e, p)| e * e / p).sum()
}

/// Component `l` is `sum_i e_i b_il / pi_i`.
pub fn ht_score(sys: &ScoreSystem, gamma: &DVector<f64>) -> DVector<f64> {
    sys.check_gamma(gamma);
    let e = sys.residuals(gamma).component_mul(&sys.weights);
    sys.basis.transpose() * e
}

/// Solve `J(g) = 0`: weighted least squares with weights `1 / pi`.
pub fn ht_fit(sys: &ScoreSystem) -> Result<DVector<f64>> {
    linalg::weighted_least_squares(&sys.basis, &sys.response, &sys.weights)
}

/// How joint inclusion probabilities enter the covariance.
#[derive(Clone, Debug, PartialEq)]
pub enum JointInclusion {
    /// Proportional-to-size approximation built from
    /// [`design::joint_inclusion_factor`].
    ProportionalToSize,
    /// Caller-supplied `n x n` matrix of `pi_ij` (diagonal ignored).
    Exact(DMatrix<f64>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairwiseMode {
    ProportionalToSize,
    ExactPairwise,
}

/// The `n x n` matrix `C_ij = 1/(pi_i pi_j) - 1/pi_ij`, with `pi_ii = pi_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairWeights {
    matrix: DMatrix<f64>,
    mode: PairwiseMode,
}

impl PairWeights {
    pub fn new(sys: &ScoreSystem, joint: &JointInclusion) -> Result<Self> {
        let pi = &sys.pi;
        let n = sys.n();
        let mut c = DMatrix::zeros(n, n);
        let mode = match joint {
            JointInclusion::ProportionalToSize => {
                let s = sys.s_pi();
                for i in 0..n {
                    for j in 0..i {
                        let f = design::joint_inclusion_factor(pi[i], pi[j], s, n)?;
                        let v = (1.0 - 1.0 / f) / (pi[i] * pi[j]);
                        c[(i, j)] = v;
                        c[(j, i)] = v;
                    }
                }
                PairwiseMode::ProportionalToSize
            }
            JointInclusion::Exact(pij) => {
                if pij.shape() != (n, n) {
                    return Err(Error::Dimension(format!("pi_ij must be {n}x{n}")));
                }
                for i in 0..n {
                    for j in 0..i {
                        let (a, b) = (pij[(i, j)], pij[(j, i)]);
                        if !(a > 0.0) || a != b {
                            return Err(Error::InvalidSpec(format!(
                                "pi_ij for pair ({i}, {j}) must be positive and symmetric"
                            )));
                        }
                        let v = 1.0 / (pi[i] * pi[j]) - 1.0 / a;
                        c[(i, j)] = v;
                        c[(j, i)] = v;
                    }
                }
                PairwiseMode::ExactPairwise
            }
        };
        for i in 0..n {
            c[(i, i)] = 1.0 / (pi[i] * pi[i]) - 1.0 / pi[i];
        }
        Ok(Self { matrix: c, mode })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn mode(&self) -> PairwiseMode {
        self.mode
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceEstimate {
    pub matrix: DMatrix<f64>,
    pub mode: PairwiseMode,
}

/// `A = diag(e) B` for residuals at `gamma`.
pub(crate) fn scaled_basis(sys: &ScoreSystem, gamma: &DVector<f64>) -> DMatrix<f64> {
    let e = sys.residuals(gamma);
    let mut a = sys.basis.clone();
    for (mut row, ei) in a.row_iter_mut().zip(e.iter()) {
        row *= *ei;
    }
    a
}

/// Covariance estimate with precomputed pair weights; exactly symmetric.
pub fn covariance_with(sys: &ScoreSystem, pairs: &PairWeights, gamma: &DVector<f64>) -> DMatrix<f64> {
    sys.check_gamma(gamma);
    let a = scaled_basis(sys, gamma);
    let ca = &pairs.matrix * &a;
    linalg::symmetrize(&(a.transpose() * ca))
}

/// Randomization covariance of the HT score at `gamma`.
pub fn ht_covariance(
    sys: &ScoreSystem,
    gamma: &DVector<f64>,
    pairwise: Option<&DMatrix<f64>>,
) -> Result<CovarianceEstimate> {
    let joint = match pairwise {
        Some(m) => JointInclusion::Exact(m.clone()),
        None => JointInclusion::ProportionalToSize,
    };
    let pairs = PairWeights::new(sys, &joint)?;
    Ok(CovarianceEstimate { matrix: covariance_with(sys, &pairs, gamma), mode: pairs.mode })
}

/// Census solution of the population normal equations
/// `sum_{i in U} (pi_i - b_i g) b_i = 0`.
pub fn population_score_zero_check(
    frame: &PopulationFrame,
    pi: &[f64],
    spec: &SelectionModelSpec,
) -> Result<DVector<f64>> {
    if pi.len() != frame.n_units() {
        return Err(Error::Dimension("pi length differs from frame size".into()));
    }
    let b = basis::design_matrix(spec.terms(), &frame.x, &frame.v, &frame.y)?;
    linalg::svd_solve(&b, &DVector::from_column_slice(pi), RANK_TOL)
}

/// Serializable summary of one HT fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: String,
    pub terms: Vec<String>,
    pub coefficients: Vec<f64>,
    pub objective: f64,
    pub max_abs_score: f64,
    pub covariance: Vec<Vec<f64>>,
    pub covariance_mode: PairwiseMode,
    pub psd_repaired: bool,
    /// `W(beta_hat) / sum w_i`, reported for the outcome model only.
    pub sigma2: Option<f64>,
    pub n: usize,
    pub population_size: f64,
}

pub fn fit_report(sys: &ScoreSystem, joint: &JointInclusion, model: &str, with_sigma2: bool) -> Result<FitReport> {
    let gamma = ht_fit(sys)?;
    let pairs = PairWeights::new(sys, joint)?;
    let cov = covariance_with(sys, &pairs, &gamma);
    let (_, repaired) = linalg::psd_repair(&cov);
    let objective = ht_objective(sys, &gamma);
    Ok(FitReport {
        model: model.to_string(),
        terms: sys.terms.iter().map(Term::to_string).collect(),
        coefficients: gamma.iter().copied().collect(),
        objective,
        max_abs_score: ht_score(sys, &gamma).amax(),
        covariance: cov.row_iter().map(|r| r.iter().copied().collect()).collect(),
        covariance_mode: pairs.mode,
        psd_repaired: repaired,
        sigma2: with_sigma2.then(|| objective / sys.weights.sum()),
        n: sys.n(),
        population_size: sys.population_size,
    })
}
