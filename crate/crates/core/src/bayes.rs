//! Gaussian-approximate posterior over selection-model coefficients and a
//! random-walk Metropolis sampler for it.
//!
//! The likelihood treats the HT score `J(g)` as `N(0, Sigma)`. In
//! [`CovarianceMode::Full`] `Sigma` is re-estimated at every `g`; in
//! [`CovarianceMode::Plugin`] it is frozen at the weighted least-squares fit,
//! which makes the posterior exactly Gaussian.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, SpdFactor};
use crate::optimize::{self, BfgsOptions};
use crate::rng;
use crate::scorefit::{self, JointInclusion, PairWeights, ScoreSystem};

/// Mean-zero normal prior with a common, large variance per coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub variance_scale: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self { variance_scale: 1e6 }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.variance_scale > 0.0) || !self.variance_scale.is_finite() {
            return Err(Error::InvalidSpec("prior variance_scale must be positive".into()));
        }
        Ok(())
    }

    fn log_density(&self, gamma: &DVector<f64>) -> f64 {
        -gamma.norm_squared() / (2.0 * self.variance_scale)
    }

    fn log_normalizer(&self, d: usize) -> f64 {
        -0.5 * d as f64 * (2.0 * PI * self.variance_scale).ln()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceMode {
    Plugin,
    #[default]
    Full,
}

impl std::str::FromStr for CovarianceMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plugin" => Ok(Self::Plugin),
            "full" => Ok(Self::Full),
            other => Err(Error::InvalidSpec(format!("unknown covariance mode `{other}`"))),
        }
    }
}

/// Closed-form Gaussian posterior available in plugin mode.
#[derive(Clone, Debug)]
pub struct GaussianPosterior {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub precision: DMatrix<f64>,
}

/// Log posterior (or, without a prior, log likelihood) of one score system.
#[derive(Clone, Debug)]
pub struct Posterior {
    sys: ScoreSystem,
    prior: Option<PriorSpec>,
    mode: CovarianceMode,
    pairs: PairWeights,
    /// Score covariance at the WLS fit; the density's covariance in plugin
    /// mode and the proposal reference in both modes.
    plugin_sigma: DMatrix<f64>,
    plugin: SpdFactor,
    plugin_repaired: bool,
    gram: DMatrix<f64>,
    offset: f64,
}

impl Posterior {
    /// Posterior with the plugin covariance taken at the WLS fit.
    pub fn new(sys: ScoreSystem, prior: Option<PriorSpec>, mode: CovarianceMode, joint: &JointInclusion) -> Result<Self> {
        let pairs = PairWeights::new(&sys, joint)?;
        let fit = scorefit::ht_fit(&sys)?;
        let sigma = scorefit::covariance_with(&sys, &pairs, &fit);
        Self::assemble(sys, prior, mode, pairs, sigma, &fit)
    }

    /// Posterior with a caller-chosen covariance used as the plugin matrix.
    pub fn with_plugin_sigma(
        sys: ScoreSystem,
        prior: Option<PriorSpec>,
        mode: CovarianceMode,
        joint: &JointInclusion,
        sigma: DMatrix<f64>,
    ) -> Result<Self> {
        if sigma.shape() != (sys.dim(), sys.dim()) {
            return Err(Error::Dimension(format!("plugin covariance must be {0}x{0}", sys.dim())));
        }
        let pairs = PairWeights::new(&sys, joint)?;
        let fit = scorefit::ht_fit(&sys)?;
        Self::assemble(sys, prior, mode, pairs, sigma, &fit)
    }

    fn assemble(
        sys: ScoreSystem,
        prior: Option<PriorSpec>,
        mode: CovarianceMode,
        pairs: PairWeights,
        sigma: DMatrix<f64>,
        at: &DVector<f64>,
    ) -> Result<Self> {
        if let Some(p) = &prior {
            p.validate()?;
        }
        let (sigma, repaired) = linalg::psd_repair(&sigma);
        let plugin = SpdFactor::new(&sigma)
            .ok_or_else(|| Error::SingularCovariance { gamma: at.iter().copied().collect() })?;
        let gram = sys.weighted_gram();
        Ok(Self { sys, prior, mode, pairs, plugin_sigma: sigma, plugin, plugin_repaired: repaired, gram, offset: 0.0 })
    }

    /// Posterior of the sub-model on the listed basis columns, sharing the
    /// pair weights; the plugin covariance is re-taken at the sub-model fit.
    pub fn restricted(&self, columns: &[usize]) -> Result<Self> {
        let sys = self.sys.restrict(columns)?;
        let fit = scorefit::ht_fit(&sys)?;
        let sigma = scorefit::covariance_with(&sys, &self.pairs, &fit);
        let mut out = Self::assemble(sys, self.prior, self.mode, self.pairs.clone(), sigma, &fit)?;
        out.offset = self.offset;
        Ok(out)
    }

    /// Shift every log density by `c`.
    pub fn with_offset(mut self, c: f64) -> Self {
        self.offset = c;
        self
    }

    /// Same system and covariance treatment, without the prior term.
    pub fn likelihood(&self) -> Self {
        Self { prior: None, ..self.clone() }
    }

    pub fn system(&self) -> &ScoreSystem {
        &self.sys
    }

    pub fn dim(&self) -> usize {
        self.sys.dim()
    }

    pub fn mode(&self) -> CovarianceMode {
        self.mode
    }

    pub fn prior(&self) -> Option<&PriorSpec> {
        self.prior.as_ref()
    }

    pub fn pair_weights(&self) -> &PairWeights {
        &self.pairs
    }

    pub fn plugin_sigma(&self) -> &DMatrix<f64> {
        &self.plugin_sigma
    }

    pub fn plugin_repaired(&self) -> bool {
        self.plugin_repaired
    }

    fn covariance_factor(&self, gamma: &DVector<f64>) -> Result<SpdFactor> {
        let raw = scorefit::covariance_with(&self.sys, &self.pairs, gamma);
        let (repaired, _) = linalg::psd_repair(&raw);
        SpdFactor::new(&repaired).ok_or_else(|| Error::SingularCovariance { gamma: gamma.iter().copied().collect() })
    }

    fn prior_term(&self, gamma: &DVector<f64>) -> f64 {
        self.prior.as_ref().map_or(0.0, |p| p.log_density(gamma))
    }

    /// `-1/2 log det Sigma - 1/2 J' Sigma^{-1} J + log h(g)`, plus the offset.
    pub fn log_density(&self, gamma: &DVector<f64>) -> Result<f64> {
        let j = scorefit::ht_score(&self.sys, gamma);
        let core = match self.mode {
            CovarianceMode::Plugin => -0.5 * self.plugin.log_det() - 0.5 * self.plugin.quad_form(&j),
            CovarianceMode::Full => {
                let f = self.covariance_factor(gamma)?;
                -0.5 * f.log_det() - 0.5 * f.quad_form(&j)
            }
        };
        let v = core + self.prior_term(gamma) + self.offset;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::SingularCovariance { gamma: gamma.iter().copied().collect() })
        }
    }

    /// Log density including the Gaussian and prior normalising constants,
    /// so that it integrates to the model evidence.
    pub fn normalized_log_density(&self, gamma: &DVector<f64>) -> Result<f64> {
        let d = self.dim();
        let prior_norm = self.prior.as_ref().map_or(0.0, |p| p.log_normalizer(d));
        Ok(self.log_density(gamma)? - self.offset - 0.5 * d as f64 * (2.0 * PI).ln() + prior_norm)
    }

    /// Value and analytic gradient of [`Posterior::log_density`].
    pub fn log_density_grad(&self, gamma: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let j = scorefit::ht_score(&self.sys, gamma);
        let prior_grad = self
            .prior
            .as_ref()
            .map_or_else(|| DVector::zeros(self.dim()), |p| -gamma / p.variance_scale);
        match self.mode {
            CovarianceMode::Plugin => {
                let u = self.plugin.solve(&j);
                Ok((self.log_density(gamma)?, &self.gram * u + prior_grad))
            }
            CovarianceMode::Full => {
                let f = self.covariance_factor(gamma)?;
                let u = f.solve(&j);
                let value = -0.5 * f.log_det() - 0.5 * j.dot(&u) + self.prior_term(gamma) + self.offset;
                if !value.is_finite() {
                    return Err(Error::SingularCovariance { gamma: gamma.iter().copied().collect() });
                }
                // dSigma/dg_m = -(M_m + M_m') with M_m = D_m' C A, D_m = diag(B_m) B.
                let a = scorefit::scaled_basis(&self.sys, gamma);
                let ca = self.pairs.matrix() * &a;
                let sigma_inv = f.inverse();
                let basis = self.sys.basis();
                let mut grad = &self.gram * &u + prior_grad;
                for m in 0..self.dim() {
                    let mut dm = basis.clone();
                    for (mut row, b) in dm.row_iter_mut().zip(basis.column(m).iter()) {
                        row *= *b;
                    }
                    let mm = dm.transpose() * &ca;
                    grad[m] += sigma_inv.component_mul(&mm.transpose()).sum() - u.dot(&(&mm * &u));
                }
                Ok((value, grad))
            }
        }
    }

    /// Closed-form posterior under the plugin covariance, whatever the
    /// density's own mode.
    pub fn gaussian_approximation(&self) -> Result<GaussianPosterior> {
        let d = self.dim();
        let sih = self.plugin.solve_matrix(&self.gram);
        let mut precision = linalg::symmetrize(&(&self.gram * &sih));
        if let Some(p) = &self.prior {
            for k in 0..d {
                precision[(k, k)] += 1.0 / p.variance_scale;
            }
        }
        let c = scorefit::ht_score(&self.sys, &DVector::zeros(d));
        let rhs = sih.transpose() * c;
        let pf = SpdFactor::new(&precision).ok_or(Error::Singular { rank: 0, dim: d })?;
        Ok(GaussianPosterior { mean: pf.solve(&rhs), covariance: linalg::symmetrize(&pf.inverse()), precision })
    }

    /// Maximiser over all coordinates.
    pub fn mode_point(&self) -> Result<DVector<f64>> {
        let all: Vec<usize> = (0..self.dim()).collect();
        maximize_on(self, &all, None)
    }
}

/// Log posterior at `gamma` built from scratch; convenient for one-off use.
pub fn log_posterior(
    sys: &ScoreSystem,
    prior: &PriorSpec,
    gamma: &DVector<f64>,
    mode: CovarianceMode,
    plugin_sigma: Option<&DMatrix<f64>>,
) -> Result<f64> {
    let joint = JointInclusion::ProportionalToSize;
    let post = match (mode, plugin_sigma) {
        (CovarianceMode::Plugin, None) => {
            return Err(Error::InvalidSpec("plugin mode needs a plugin covariance".into()));
        }
        (_, Some(s)) => Posterior::with_plugin_sigma(sys.clone(), Some(*prior), mode, &joint, s.clone())?,
        (CovarianceMode::Full, None) => Posterior::new(sys.clone(), Some(*prior), mode, &joint)?,
    };
    post.log_density(gamma)
}

/// Maximise the log density over the `free` coordinates with the rest held
/// at zero. `start` defaults to the WLS fit of the restricted system.
///
/// The search runs in whitened coordinates `g_free = x0 + L u`, where
/// `L L'` is the inverse of the plugin Gaussian precision on the free block,
/// so gradient tolerances are in posterior standard-deviation units.
pub fn maximize_on(post: &Posterior, free: &[usize], start: Option<DVector<f64>>) -> Result<DVector<f64>> {
    let d = post.dim();
    if free.is_empty() {
        return Ok(DVector::zeros(d));
    }
    let x0 = match start {
        Some(s) => s,
        None => scorefit::ht_fit(&post.system().restrict(free)?)?,
    };
    let precision = post.gaussian_approximation()?.precision;
    let block = SpdFactor::new(&linalg::submatrix(&precision, free)).ok_or(Error::Singular { rank: 0, dim: free.len() })?;
    let l = SpdFactor::new(&block.inverse()).ok_or(Error::Singular { rank: 0, dim: free.len() })?.lower();
    let embed = |u: &DVector<f64>| {
        let xf = &x0 + &l * u;
        let mut g = DVector::zeros(d);
        for (k, &i) in free.iter().enumerate() {
            g[i] = xf[k];
        }
        g
    };
    let objective = |u: &DVector<f64>| -> Result<(f64, DVector<f64>)> {
        let (v, g) = post.log_density_grad(&embed(u))?;
        let gf = DVector::from_iterator(free.len(), free.iter().map(|&i| -g[i]));
        Ok((-v, l.transpose() * gf))
    };
    let m = optimize::minimize(objective, DVector::zeros(free.len()), &BfgsOptions::default())?;
    Ok(embed(&m.x))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub burn_in: usize,
    pub draws: usize,
    pub thin: usize,
    pub seed: u64,
    pub target_acceptance: f64,
    /// Post-burn-in acceptance rate below which the chain is declared stuck.
    #[serde(default = "default_min_acceptance")]
    pub min_acceptance: f64,
}

fn default_min_acceptance() -> f64 {
    0.1
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self { burn_in: 2000, draws: 5000, thin: 1, seed: 0, target_acceptance: 0.3, min_acceptance: default_min_acceptance() }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.draws == 0 || self.thin == 0 {
            return Err(Error::InvalidSpec("mcmc draws and thin must be positive".into()));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::InvalidSpec("target_acceptance must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub draws: DMatrix<f64>,
    pub log_density: DVector<f64>,
    pub acceptance_rate: f64,
    pub mode: DVector<f64>,
    pub mode_log_density: f64,
    pub covariance_mode: CovarianceMode,
    /// Frozen proposal covariance used for every retained step.
    pub proposal_covariance: DMatrix<f64>,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.draws.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.nrows() == 0
    }

    pub fn mean(&self) -> DVector<f64> {
        self.draws.row_mean().transpose()
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let k = self.len() as f64;
        let centered = DMatrix::from_fn(self.draws.nrows(), self.draws.ncols(), |i, j| {
            self.draws[(i, j)] - self.draws.column(j).mean()
        });
        centered.transpose() * centered / (k - 1.0)
    }

    /// `draw_index,coef_1..coef_d,log_density`
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["draw_index".to_string()];
        header.extend((1..=self.draws.ncols()).map(|k| format!("coef_{k}")));
        header.push("log_density".into());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![i.to_string()];
            rec.extend(self.draws.row(i).iter().map(|v| v.to_string()));
            rec.push(self.log_density[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Adaptive random-walk Metropolis started at the WLS fit.
///
/// The proposal is `N(0, lambda * V)`. During the first half of burn-in `V`
/// is the plugin Gaussian posterior covariance; from the midpoint on it is
/// the empirical covariance of the burn-in states seen so far, refreshed
/// every [`COVARIANCE_REFRESH`] steps, and `lambda` is reset to `2.38^2 / d`.
/// Throughout burn-in `log lambda` follows a Robbins-Monro recursion toward
/// the target acceptance rate. Both are frozen once burn-in ends, so the
/// retained draws come from a fixed Metropolis kernel.
pub fn run_mcmc(post: &Posterior, config: &McmcConfig) -> Result<PosteriorDraws> {
    config.validate()?;
    let d = post.dim();
    let mut rng = rng::seeded(config.seed);

    let start = scorefit::ht_fit(post.system())?;
    let mut current_lp = post
        .log_density(&start)
        .map_err(|_| Error::NonFiniteInit { gamma: start.iter().copied().collect() })?;
    let mut current = start;

    let plugin_cov = post.gaussian_approximation()?.covariance;
    let initial_log_scale = (2.38_f64.powi(2) / d as f64).ln();
    let local = SpdFactor::new(&plugin_cov).ok_or(Error::Singular { rank: 0, dim: d })?.lower();
    // Two symmetric kernels: a local one shaped by the plugin covariance and,
    // from midway through burn-in, a global one shaped by the chain's own
    // covariance. Each step picks one with equal odds once both exist.
    let mut kernels = [Kernel { chol: local, log_scale: initial_log_scale, steps: 0 }, Kernel {
        chol: DMatrix::zeros(d, d),
        log_scale: initial_log_scale,
        steps: 0,
    }];
    let mut global_ready = false;
    let mut base = plugin_cov.clone();

    let switch = config.burn_in / 2;
    let mut moments = RunningMoments::new(d);
    for t in 0..config.burn_in {
        let k = pick_kernel(global_ready, &mut rng);
        let cand = kernels[k].propose(&current, &mut rng);
        let (_, prob) = metropolis_step(post, &mut current, &mut current_lp, cand, &mut rng);
        moments.push(&current);
        kernels[k].adapt(prob, config.target_acceptance);
        if t + 1 >= switch && (t + 1 - switch).is_multiple_of(COVARIANCE_REFRESH) && moments.count > 2 * d {
            // Keep a sliver of the plugin covariance so the estimate stays
            // positive definite even if the chain has barely moved.
            let empirical = moments.covariance() + &plugin_cov * 1e-6;
            if let Some(f) = SpdFactor::new(&empirical) {
                base = empirical;
                kernels[1].chol = f.lower();
                global_ready = true;
            }
        }
    }

    let total = config.draws * config.thin;
    let mut draws = DMatrix::zeros(config.draws, d);
    let mut lps = DVector::zeros(config.draws);
    let mut accepted_count = 0usize;
    for t in 0..total {
        let k = pick_kernel(global_ready, &mut rng);
        let cand = kernels[k].propose(&current, &mut rng);
        if metropolis_step(post, &mut current, &mut current_lp, cand, &mut rng).0 {
            accepted_count += 1;
        }
        if (t + 1) % config.thin == 0 {
            let k = t / config.thin;
            draws.set_row(k, &current.transpose());
            lps[k] = current_lp;
        }
    }
    let acceptance_rate = accepted_count as f64 / total as f64;
    if acceptance_rate < config.min_acceptance {
        return Err(Error::MixingFailure { rate: acceptance_rate });
    }

    let mode = post.mode_point()?;
    let mode_log_density = post.log_density(&mode)?;
    Ok(PosteriorDraws {
        draws,
        log_density: lps,
        acceptance_rate,
        mode,
        mode_log_density,
        covariance_mode: post.mode(),
        proposal_covariance: base * kernels[usize::from(global_ready)].log_scale.exp(),
    })
}

/// Random-walk proposal `x + exp(s/2) L z` with its own Robbins-Monro scale.
struct Kernel {
    chol: DMatrix<f64>,
    log_scale: f64,
    steps: usize,
}

impl Kernel {
    fn propose<R: Rng>(&self, current: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_iterator(current.len(), (0..current.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        current + &self.chol * z * (0.5 * self.log_scale).exp()
    }

    fn adapt(&mut self, prob: f64, target: f64) {
        self.steps += 1;
        self.log_scale += (self.steps as f64).powf(-0.6) * (prob - target);
    }
}

fn pick_kernel<R: Rng>(global_ready: bool, rng: &mut R) -> usize {
    usize::from(global_ready && rng.random::<bool>())
}

/// Burn-in steps between refreshes of the empirical proposal covariance.
pub const COVARIANCE_REFRESH: usize = 100;

/// Welford accumulator for the mean and covariance of chain states.
struct RunningMoments {
    count: usize,
    mean: DVector<f64>,
    m2: DMatrix<f64>,
}

impl RunningMoments {
    fn new(d: usize) -> Self {
        Self { count: 0, mean: DVector::zeros(d), m2: DMatrix::zeros(d, d) }
    }

    fn push(&mut self, x: &DVector<f64>) {
        self.count += 1;
        let delta = x - &self.mean;
        self.mean += &delta / self.count as f64;
        let delta2 = x - &self.mean;
        self.m2 += &delta * delta2.transpose();
    }

    fn covariance(&self) -> DMatrix<f64> {
        linalg::symmetrize(&(&self.m2 / (self.count as f64 - 1.0)))
    }
}

/// One accept/reject decision; returns whether the move was taken and the
/// acceptance probability. Unevaluable candidates are rejected.
fn metropolis_step<R: Rng>(
    post: &Posterior,
    current: &mut DVector<f64>,
    current_lp: &mut f64,
    cand: DVector<f64>,
    rng: &mut R,
) -> (bool, f64) {
    let Ok(lp) = post.log_density(&cand) else {
        return (false, 0.0);
    };
    let prob = (lp - *current_lp).exp().min(1.0);
    let u: f64 = rng.random();
    if u < prob {
        *current = cand;
        *current_lp = lp;
        (true, prob)
    } else {
        (false, prob)
    }
}

/// Split-chain potential scale reduction per coordinate.
pub fn split_rhat(draws: &DMatrix<f64>) -> Vec<f64> {
    let half = draws.nrows() / 2;
    let n = half as f64;
    (0..draws.ncols())
        .map(|j| {
            let col = draws.column(j);
            let halves = [col.rows(0, half), col.rows(half, half)];
            let means: Vec<f64> = halves.iter().map(|h| h.mean()).collect();
            let vars: Vec<f64> = halves
                .iter()
                .zip(&means)
                .map(|(h, m)| h.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
                .collect();
            let w = (vars[0] + vars[1]) / 2.0;
            let grand = (means[0] + means[1]) / 2.0;
            let b = n * ((means[0] - grand).powi(2) + (means[1] - grand).powi(2));
            let var_plus = (n - 1.0) / n * w + b / n;
            (var_plus / w).sqrt()
        })
        .collect()
}

/// Batch-means Monte Carlo standard error of the mean of `x`, using
/// `floor(sqrt(len))` batches.
pub fn batch_means_se(x: &[f64]) -> f64 {
    let batches = (x.len() as f64).sqrt().floor() as usize;
    let size = x.len() / batches;
    let means: Vec<f64> = (0..batches).map(|b| x[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64).collect();
    let grand = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (batches as f64 - 1.0);
    (var / batches as f64).sqrt()
}

/// Standard normal draws reshaped as `count x d`, used by importance
/// samplers that need the same stream layout as the chain.
pub(crate) fn normal_matrix<R: Rng>(rng: &mut R, count: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(count, d, |_, _| rng.sample::<f64, _>(StandardNormal))
}
