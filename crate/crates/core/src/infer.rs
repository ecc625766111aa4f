//! Hypothesis tests on selection-model coefficients: the FBST evidence value,
//! its asymptotic calibration, a likelihood-ratio test on the Gaussian score
//! likelihood, and weight/residual correlation tests.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use crate::bayes::{self, Posterior, PosteriorDraws};
use crate::design::SampleData;
use crate::error::{Error, Result};
use crate::linalg::{self, SpdFactor, RANK_TOL};
use crate::optimize;
use crate::rng;
use crate::scorefit::SelectionModelSpec;

/// A nested pair of selection models; the null fixes the extra full-model
/// coefficients at zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSpec {
    pub name: String,
    pub full: SelectionModelSpec,
    pub null: SelectionModelSpec,
}

impl HypothesisSpec {
    pub fn new(name: impl Into<String>, full: SelectionModelSpec, null: SelectionModelSpec) -> Result<Self> {
        let h = Self { name: name.into(), full, null };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.null.terms().iter().find(|t| !self.full.terms().contains(t)) {
            return Err(Error::InvalidSpec(format!("{}: null term `{t}` is not in the full model", self.name)));
        }
        if self.constrained_indices().is_empty() {
            return Err(Error::InvalidSpec(format!("{}: null model must drop at least one term", self.name)));
        }
        Ok(())
    }

    /// Positions (in the full model) of the coefficients fixed at zero.
    pub fn constrained_indices(&self) -> Vec<usize> {
        let null = self.null.terms();
        (0..self.full.dim()).filter(|&i| !null.contains(&self.full.terms()[i])).collect()
    }

    /// Positions (in the full model) of the coefficients left free.
    pub fn free_indices(&self) -> Vec<usize> {
        let null = self.null.terms();
        (0..self.full.dim()).filter(|&i| null.contains(&self.full.terms()[i])).collect()
    }

    pub fn n_constraints(&self) -> usize {
        self.constrained_indices().len()
    }
}

/// Maximiser of the full-model log posterior with the constrained
/// coordinates held at zero, returned in full-model coordinates.
pub fn constrained_maximize(post: &Posterior, hyp: &HypothesisSpec) -> Result<DVector<f64>> {
    check_dims(post, hyp)?;
    bayes::maximize_on(post, &hyp.free_indices(), None)
}

fn check_dims(post: &Posterior, hyp: &HypothesisSpec) -> Result<()> {
    if post.system().terms() != hyp.full.terms() {
        return Err(Error::Dimension(format!(
            "{}: posterior terms do not match the full model of the hypothesis",
            hyp.name
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EvidenceMode {
    /// Both sides of the tangential-set comparison use the full posterior.
    #[default]
    Standard,
    /// Compare normalised full and null posteriors, with the normalising
    /// constants estimated by importance sampling.
    PaperRho { importance_draws: usize },
}

/// Largest accepted Monte Carlo standard error of `log rho`.
pub const LOG_RHO_SE_LIMIT: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvidenceResult {
    pub gamma0_hat: Vec<f64>,
    pub ev_bar: f64,
    pub ev_support: f64,
    pub rho: f64,
    pub log_rho_se: Option<f64>,
    pub threshold: f64,
    pub reject: bool,
    pub mode: EvidenceMode,
    pub alpha: f64,
}

impl EvidenceResult {
    /// Decision at another level, reusing the same evidence value.
    pub fn reject_at(&self, d_full: usize, n_constraints: usize, alpha: f64) -> Result<bool> {
        Ok(self.ev_bar > evidence_threshold(d_full, n_constraints, alpha)?)
    }
}

/// FBST evidence against `hyp` from full-model posterior draws.
pub fn fbst_evidence(
    draws: &PosteriorDraws,
    post: &Posterior,
    hyp: &HypothesisSpec,
    mode: EvidenceMode,
    alpha: f64,
    seed: u64,
) -> Result<EvidenceResult> {
    check_dims(post, hyp)?;
    if draws.is_empty() || draws.draws.ncols() != post.dim() {
        return Err(Error::Dimension("posterior draws do not match the full model".into()));
    }
    let threshold = evidence_threshold(post.dim(), hyp.n_constraints(), alpha)?;
    let k = draws.len() as f64;

    let (gamma0, ev_bar, rho, log_rho_se) = match mode {
        EvidenceMode::Standard => {
            let g0 = constrained_maximize(post, hyp)?;
            let lp0 = post.log_density(&g0)?;
            (g0, tangential_evidence(draws.log_density.as_slice(), lp0), 1.0, None)
        }
        EvidenceMode::PaperRho { importance_draws } => {
            if importance_draws < 2 {
                return Err(Error::InvalidSpec("importance_draws must be at least 2".into()));
            }
            let free = hyp.free_indices();
            let null_post = post.restricted(&free)?;
            let mut r_full = rng::stream(seed, 0, rng::Purpose::Importance, 0);
            let mut r_null = rng::stream(seed, 0, rng::Purpose::Importance, 1);
            let (lz_full, se_full) = log_evidence(post, &draws.mode, importance_draws, &mut r_full)?;
            let null_mode = null_post.mode_point()?;
            let (lz_null, se_null) = log_evidence(&null_post, &null_mode, importance_draws, &mut r_null)?;
            let log_rho = lz_full - lz_null;
            let se = (se_full.powi(2) + se_null.powi(2)).sqrt();
            if se > LOG_RHO_SE_LIMIT {
                return Err(Error::Precision { se, limit: LOG_RHO_SE_LIMIT });
            }
            // Stored draws carry the unnormalised density; shift by the
            // normalising constant measured at the mode.
            let shift = post.normalized_log_density(&draws.mode)? - post.log_density(&draws.mode)?;
            let lp0 = null_post.normalized_log_density(&null_mode)?;
            let count = draws.log_density.iter().filter(|&&lp| lp + shift > lp0 + log_rho).count();
            let mut g0 = DVector::zeros(post.dim());
            for (k, &i) in free.iter().enumerate() {
                g0[i] = null_mode[k];
            }
            (g0, count as f64 / k, log_rho.exp(), Some(se))
        }
    };
    Ok(EvidenceResult {
        gamma0_hat: gamma0.iter().copied().collect(),
        ev_bar,
        ev_support: 1.0 - ev_bar,
        rho,
        log_rho_se,
        threshold,
        reject: ev_bar > threshold,
        mode,
        alpha,
    })
}

/// Share of draws whose log density exceeds `lp0`, i.e. the posterior mass
/// of the tangential set of a point with that density.
pub fn tangential_evidence(log_density: &[f64], lp0: f64) -> f64 {
    if log_density.is_empty() {
        return 0.0;
    }
    log_density.iter().filter(|&&lp| lp > lp0).count() as f64 / log_density.len() as f64
}

/// Importance-sampling estimate of `log int exp(normalized_log_density)`
/// with a normal proposal at `mode` and Laplace covariance, plus its
/// delta-method standard error.
pub fn log_evidence<R: rand::Rng>(post: &Posterior, mode: &DVector<f64>, count: usize, rng: &mut R) -> Result<(f64, f64)> {
    let d = post.dim();
    let reference = post.gaussian_approximation()?.covariance;
    let steps = reference.diagonal().map(|v| 1e-4 * v.sqrt());
    let hess = optimize::numerical_hessian(|g| Ok(post.log_density_grad(g)?.1), mode, &steps)?;
    let cov = SpdFactor::new(&(-hess)).map(|f| f.inverse()).unwrap_or(reference);
    let factor = SpdFactor::new(&cov).ok_or(Error::Singular { rank: 0, dim: d })?;
    let l = factor.lower();
    let log_q_const = -0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * factor.log_det();

    let z = bayes::normal_matrix(rng, count, d);
    let log_w: Vec<f64> = (0..count)
        .map(|i| {
            let zi = z.row(i).transpose();
            let g = mode + &l * &zi;
            let lq = log_q_const - 0.5 * zi.norm_squared();
            post.normalized_log_density(&g).map_or(f64::NEG_INFINITY, |lp| lp - lq)
        })
        .collect();
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::SingularCovariance { gamma: mode.iter().copied().collect() });
    }
    let w: Vec<f64> = log_w.iter().map(|lw| (lw - max).exp()).collect();
    let n = count as f64;
    let mean = w.iter().sum::<f64>() / n;
    let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((max + mean.ln(), (var / n).sqrt() / mean))
}

/// Critical value for the evidence against a hypothesis with
/// `n_constraints` zero restrictions inside a `d_full`-dimensional model:
/// `F_d(F_h^{-1}(1 - alpha))` with `F_k` the chi-square CDF.
///
/// When every coordinate is constrained this reduces to `1 - alpha`.
pub fn evidence_threshold(d_full: usize, n_constraints: usize, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidSpec(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    if n_constraints == 0 || n_constraints > d_full {
        return Err(Error::InvalidSpec(format!(
            "need 1 <= constraints <= dimension, got {n_constraints} and {d_full}"
        )));
    }
    let quantile = chi2(n_constraints).inverse_cdf(1.0 - alpha);
    Ok(chi2(d_full).cdf(quantile))
}

fn chi2(df: usize) -> ChiSquared {
    ChiSquared::new(df as f64).expect("positive degrees of freedom")
}

/// Chi-square upper-tail probability.
pub fn chi2_sf(x: f64, df: usize) -> f64 {
    1.0 - chi2(df).cdf(x)
}

/// Tolerance below zero within which a likelihood-ratio statistic is
/// treated as rounding noise.
pub const LR_NEGATIVE_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrResult {
    pub statistic: f64,
    pub p_value: f64,
    pub df: usize,
    pub full_hat: Vec<f64>,
    pub null_hat: Vec<f64>,
}

/// Likelihood-ratio test of `hyp`. Any prior on `post` is dropped.
pub fn lr_test(post: &Posterior, hyp: &HypothesisSpec) -> Result<LrResult> {
    check_dims(post, hyp)?;
    let lik = post.likelihood();
    let full = lik.mode_point()?;
    let null = bayes::maximize_on(&lik, &hyp.free_indices(), None)?;
    let raw = 2.0 * (lik.log_density(&full)? - lik.log_density(&null)?);
    let statistic = if raw >= 0.0 {
        raw
    } else if raw > -LR_NEGATIVE_TOL {
        0.0
    } else {
        return Err(Error::InconsistentOptimum(raw));
    };
    let df = hyp.n_constraints();
    Ok(LrResult {
        statistic,
        p_value: chi2_sf(statistic, df),
        df,
        full_hat: full.iter().copied().collect(),
        null_hat: null.iter().copied().collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsResult {
    pub k: u32,
    pub correlation: f64,
    pub statistic: f64,
    pub p_value: f64,
    pub df: usize,
    pub degenerate: bool,
}

/// Correlation test between `u` and `w` after partialling out the columns
/// of `controls` (which should contain an intercept). With an
/// intercept-only control this is the ordinary Pearson t-test on `n - 2`
/// degrees of freedom; each further control column costs one more.
pub fn partial_correlation_test(u: &DVector<f64>, w: &DVector<f64>, controls: &DMatrix<f64>) -> Result<(f64, f64, f64, usize, bool)> {
    let n = u.len();
    if w.len() != n || controls.nrows() != n {
        return Err(Error::Dimension("correlation test inputs differ in length".into()));
    }
    let q = controls.ncols().saturating_sub(1);
    if n < q + 3 {
        return Err(Error::InvalidSpec(format!("need at least {} observations, got {n}", q + 3)));
    }
    let df = n - 2 - q;
    let resid = |x: &DVector<f64>| -> Result<DVector<f64>> {
        let coef = linalg::svd_solve(controls, x, RANK_TOL)?;
        Ok(x - controls * coef)
    };
    let (ru, rw) = (resid(u)?, resid(w)?);
    let (su, sw) = (ru.norm_squared(), rw.norm_squared());
    let tiny = |ss: f64, x: &DVector<f64>| ss <= 1e-24 * x.norm_squared().max(f64::MIN_POSITIVE);
    if tiny(su, u) || tiny(sw, w) {
        return Ok((0.0, 0.0, 1.0, df, true));
    }
    let r = (ru.dot(&rw) / (su * sw).sqrt()).clamp(-1.0, 1.0);
    if 1.0 - r * r <= 0.0 {
        return Ok((r, f64::INFINITY.copysign(r), 0.0, df, false));
    }
    let t = r * (df as f64 / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df as f64).expect("positive degrees of freedom");
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok((r, t, p, df, false))
}

/// PS(k): is the `k`-th power of the outcome-model residual correlated with
/// the sampling weight, given the outcome-model covariates?
pub fn ps_test(sample: &SampleData, beta_hat: &DVector<f64>, k: u32) -> Result<PsResult> {
    if !(1..=3).contains(&k) {
        return Err(Error::InvalidSpec(format!("PS power k = {k} must be 1, 2 or 3")));
    }
    let sys = crate::scorefit::ScoreSystem::population(sample)?;
    if beta_hat.len() != sys.dim() {
        return Err(Error::Dimension(format!("beta_hat must have length {}", sys.dim())));
    }
    let u = sys.residuals(beta_hat).map(|e| e.powi(k as i32));
    let w = sample.w.clone();
    let (correlation, statistic, p_value, df, degenerate) = partial_correlation_test(&u, &w, sys.basis())?;
    Ok(PsResult { k, correlation, statistic, p_value, df, degenerate })
}

/// Unweighted least-squares outcome-model fit used for PS residuals.
pub fn ols_outcome_fit(sample: &SampleData) -> Result<DVector<f64>> {
    let sys = crate::scorefit::ScoreSystem::population(sample)?;
    linalg::svd_solve(sys.basis(), sys.response(), RANK_TOL)
}

/// One test outcome in a uniform, serialisable shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestRecord {
    pub test: String,
    pub statistic_or_ev: f64,
    pub threshold_or_p: f64,
    pub decision: String,
    pub mode: String,
    pub diagnostics: serde_json::Value,
}

fn decision(reject: bool) -> String {
    if reject { "reject" } else { "accept" }.to_string()
}

impl TestRecord {
    pub fn fbst(r: &EvidenceResult, acceptance_rate: f64) -> Self {
        let mode = match r.mode {
            EvidenceMode::Standard => "standard",
            EvidenceMode::PaperRho { .. } => "paper_rho",
        };
        Self {
            test: "FBST".into(),
            statistic_or_ev: r.ev_bar,
            threshold_or_p: r.threshold,
            decision: decision(r.reject),
            mode: mode.into(),
            diagnostics: serde_json::json!({
                "alpha": r.alpha,
                "ev_support": r.ev_support,
                "gamma0_hat": r.gamma0_hat,
                "rho": r.rho,
                "log_rho_se": r.log_rho_se,
                "acceptance_rate": acceptance_rate,
            }),
        }
    }

    pub fn lr(r: &LrResult, alpha: f64) -> Self {
        Self {
            test: "LR".into(),
            statistic_or_ev: r.statistic,
            threshold_or_p: r.p_value,
            decision: decision(r.p_value < alpha),
            mode: "chi_square".into(),
            diagnostics: serde_json::json!({
                "alpha": alpha,
                "df": r.df,
                "full_hat": r.full_hat,
                "null_hat": r.null_hat,
            }),
        }
    }

    pub fn ps(r: &PsResult, alpha: f64) -> Self {
        Self {
            test: format!("PS{}", r.k),
            statistic_or_ev: r.statistic,
            threshold_or_p: r.p_value,
            decision: decision(r.p_value < alpha),
            mode: "asymptotic_t".into(),
            diagnostics: serde_json::json!({
                "alpha": alpha,
                "correlation": r.correlation,
                "df": r.df,
                "degenerate": r.degenerate,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn threshold_hand_values() {
        // F_3 evaluated at the 95% point of chi-square(1).
        let c = evidence_threshold(3, 1, 0.05).unwrap();
        let q = 3.841458820694124_f64;
        let f3 = statrs::function::gamma::gamma_lr(1.5, q / 2.0);
        assert_relative_eq!(c, f3, epsilon = 1e-9);
        assert_relative_eq!(evidence_threshold(2, 2, 0.1).unwrap(), 0.9, epsilon = 1e-9);
        assert!(evidence_threshold(3, 0, 0.05).is_err());
        assert!(evidence_threshold(3, 4, 0.05).is_err());
        assert!(evidence_threshold(3, 1, 1.0).is_err());
        assert!(evidence_threshold(3, 1, 1.0 - 1e-12).unwrap() < 1e-6);
    }

    #[test]
    fn threshold_decreases_in_alpha() {
        let levels = [0.01, 0.025, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9];
        let cs: Vec<f64> = levels.iter().map(|&a| evidence_threshold(4, 2, a).unwrap()).collect();
        assert!(cs.windows(2).all(|p| p[0] > p[1]));
        assert!(cs.iter().all(|&c| c > 0.0 && c < 1.0));
    }

    #[test]
    fn pearson_hand_oracle() {
        let u = DVector::from_vec(vec![-1.0, 0.0, 1.0, 2.0]);
        let w = DVector::from_vec(vec![1.0, 2.0, 3.0, 5.0]);
        let ones = DMatrix::from_element(4, 1, 1.0);
        // Hand: mean u 0.5, mean w 2.75; sxy = 6.5, sxx = 5, syy = 8.75.
        let r = 6.5 / (5.0_f64 * 8.75).sqrt();
        let (rc, t, p, df, degenerate) = partial_correlation_test(&u, &w, &ones).unwrap();
        assert!(!degenerate);
        assert_eq!(df, 2);
        assert_relative_eq!(rc, r, epsilon = 1e-12);
        assert_relative_eq!(t, r * (2.0 / (1.0 - r * r)).sqrt(), epsilon = 1e-10);
        assert!(p > 0.0 && p < 0.1);
    }

    #[test]
    fn constant_weights_are_degenerate() {
        let u = DVector::from_vec(vec![-1.0, 0.0, 1.0, 2.0, 0.5]);
        let w = DVector::from_element(5, 3.0);
        let ones = DMatrix::from_element(5, 1, 1.0);
        let (_, _, p, _, degenerate) = partial_correlation_test(&u, &w, &ones).unwrap();
        assert!(degenerate);
        assert_eq!(p, 1.0);
    }

    #[test]
    fn perfect_correlation_gives_zero_p() {
        let u = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let w = &u * 2.0 + DVector::from_element(4, 1.0);
        let ones = DMatrix::from_element(4, 1, 1.0);
        let (r, _, p, _, _) = partial_correlation_test(&u, &w, &ones).unwrap();
        assert_relative_eq!(r, 1.0, epsilon = 1e-12);
        assert!(p < 1e-12);
    }

    #[test]
    fn hypothesis_indices() {
        let full = SelectionModelSpec::parse("1,v1,y,y^2").unwrap();
        let null = SelectionModelSpec::parse("1,v1").unwrap();
        let h = HypothesisSpec::new("h", full.clone(), null).unwrap();
        assert_eq!(h.constrained_indices(), vec![2, 3]);
        assert_eq!(h.free_indices(), vec![0, 1]);
        assert!(HypothesisSpec::new("same", full.clone(), full.clone()).is_err());
        assert!(HypothesisSpec::new("bad", full, SelectionModelSpec::parse("1,x1").unwrap()).is_err());
    }
}
