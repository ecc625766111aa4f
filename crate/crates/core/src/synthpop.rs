//! Synthetic finite populations.
//!
//! A population is drawn in two stages: the normal linear outcome model
//! `y = [1, x, v] . beta + eps`, then a design variable `z` that is a linear
//! combination of basis terms in `(x, v, y)` plus normal noise. Units whose
//! `z` comes out non-positive are handled by [`PositivityPolicy`].

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson, Uniform};
use serde::{Deserialize, Serialize};

use crate::basis::Term;
use crate::error::{Error, Result};
use crate::rng;

/// Number of noise redraws allowed per unit before giving up.
pub const MAX_REDRAWS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum CovariateGenerator {
    /// Shape/rate parameterisation; mean `shape / rate`.
    Gamma { shape: f64, rate: f64 },
    Poisson { mean: f64 },
    Normal { mean: f64, sd: f64 },
    Uniform { low: f64, high: f64 },
}

impl CovariateGenerator {
    pub fn mean(&self) -> f64 {
        match *self {
            Self::Gamma { shape, rate } => shape / rate,
            Self::Poisson { mean } => mean,
            Self::Normal { mean, .. } => mean,
            Self::Uniform { low, high } => 0.5 * (low + high),
        }
    }

    pub fn sd(&self) -> f64 {
        match *self {
            Self::Gamma { shape, rate } => shape.sqrt() / rate,
            Self::Poisson { mean } => mean.sqrt(),
            Self::Normal { sd, .. } => sd,
            Self::Uniform { low, high } => (high - low) / 12f64.sqrt(),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Gamma { shape, rate } => shape > 0.0 && rate > 0.0,
            Self::Poisson { mean } => mean > 0.0 && mean.is_finite(),
            Self::Normal { mean, sd } => mean.is_finite() && sd >= 0.0 && sd.is_finite(),
            Self::Uniform { low, high } => low.is_finite() && high.is_finite() && low < high,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidSpec(format!("invalid covariate generator {self:?}")))
        }
    }

    fn sampler(&self) -> Sampler {
        match *self {
            Self::Gamma { shape, rate } => Sampler::Gamma(Gamma::new(shape, 1.0 / rate).expect("validated")),
            Self::Poisson { mean } => Sampler::Poisson(Poisson::new(mean).expect("validated")),
            Self::Normal { mean, sd } => Sampler::Normal(Normal::new(mean, sd).expect("validated")),
            Self::Uniform { low, high } => Sampler::Uniform(Uniform::new(low, high).expect("validated")),
        }
    }
}

enum Sampler {
    Gamma(Gamma<f64>),
    Poisson(Poisson<f64>),
    Normal(Normal<f64>),
    Uniform(Uniform<f64>),
}

impl Sampler {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Sampler::Gamma(d) => d.sample(rng),
            Sampler::Poisson(d) => d.sample(rng),
            Sampler::Normal(d) => d.sample(rng),
            Sampler::Uniform(d) => d.sample(rng),
        }
    }
}

/// Normal linear outcome model on the regressors `[1, x_1.., v_1..]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationModelSpec {
    pub beta: Vec<f64>,
    /// Error variance (not standard deviation).
    pub sigma2: f64,
    pub x_covariates: Vec<CovariateGenerator>,
    pub v_covariates: Vec<CovariateGenerator>,
}

impl PopulationModelSpec {
    /// `y = 3.5 + 0.8 x - 0.1 v + eps`, `eps ~ N(0, 1.5)`,
    /// `x ~ Gamma(1, 1)`, `v ~ Poisson(3)`.
    pub fn study() -> Self {
        Self {
            beta: vec![3.5, 0.8, -0.1],
            sigma2: 1.5,
            x_covariates: vec![CovariateGenerator::Gamma { shape: 1.0, rate: 1.0 }],
            v_covariates: vec![CovariateGenerator::Poisson { mean: 3.0 }],
        }
    }

    /// Regressor terms of the outcome model, in `beta` order.
    pub fn terms(&self) -> Vec<Term> {
        population_terms(self.x_covariates.len(), self.v_covariates.len())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 >= 0.0 && self.sigma2.is_finite()) {
            return Err(Error::InvalidSpec(format!("sigma2 must be non-negative, got {}", self.sigma2)));
        }
        let want = 1 + self.x_covariates.len() + self.v_covariates.len();
        if self.beta.len() != want {
            return Err(Error::InvalidSpec(format!(
                "beta has {} entries, expected {want} (intercept + covariates)",
                self.beta.len()
            )));
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidSpec("beta must be finite".into()));
        }
        self.x_covariates.iter().chain(&self.v_covariates).try_for_each(CovariateGenerator::validate)
    }
}

/// Regressors `[1, x_1..x_nx, v_1..v_nv]` of the outcome model.
pub fn population_terms(nx: usize, nv: usize) -> Vec<Term> {
    std::iter::once(Term::Intercept)
        .chain((0..nx).map(Term::X))
        .chain((0..nv).map(Term::V))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositivityPolicy {
    /// Redraw the unit's noise, up to [`MAX_REDRAWS`] times.
    #[default]
    Redraw,
    /// Fail as soon as any unit is non-positive.
    RejectPopulation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermCoefficient {
    pub term: Term,
    pub coefficient: f64,
}

/// `z = sum_k c_k term_k(x, v, y) + nu`, `nu ~ N(0, noise_variance)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignVariableSpec {
    pub coefficients: Vec<TermCoefficient>,
    pub noise_variance: f64,
    #[serde(default)]
    pub positivity_policy: PositivityPolicy,
}

impl DesignVariableSpec {
    pub fn new(coefficients: &[(Term, f64)], noise_variance: f64) -> Self {
        Self {
            coefficients: coefficients
                .iter()
                .map(|&(term, coefficient)| TermCoefficient { term, coefficient })
                .collect(),
            noise_variance,
            positivity_policy: PositivityPolicy::Redraw,
        }
    }

    /// `z = 4 + 2.5 v + 0.15 y^2 + nu`, `nu ~ N(0, 2.5)`.
    pub fn study() -> Self {
        Self::new(&[(Term::Intercept, 4.0), (Term::V(0), 2.5), (Term::Y(2), 0.15)], 2.5)
    }

    /// The study design with the outcome term removed: `z = 4 + 2.5 v + nu`.
    pub fn study_null() -> Self {
        Self::new(&[(Term::Intercept, 4.0), (Term::V(0), 2.5)], 2.5)
    }

    pub fn mean(&self, x: &[f64], v: &[f64], y: f64) -> f64 {
        self.coefficients.iter().map(|c| c.coefficient * c.term.eval(x, v, y)).sum()
    }

    pub fn validate(&self, nx: usize, nv: usize) -> Result<()> {
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "noise_variance must be non-negative, got {}",
                self.noise_variance
            )));
        }
        let terms: Vec<Term> = self.coefficients.iter().map(|c| c.term).collect();
        crate::basis::validate_terms(&terms)?;
        for c in &self.coefficients {
            let in_range = match c.term {
                Term::X(j) => j < nx,
                Term::V(j) => j < nv,
                Term::Y(p) => p > 0,
                Term::Intercept => true,
            };
            if !in_range || !c.coefficient.is_finite() {
                return Err(Error::InvalidSpec(format!("bad design-variable term {}", c.term)));
            }
        }
        Ok(())
    }
}

/// A full synthetic population, index-aligned across columns.
#[derive(Clone, Debug, PartialEq)]
pub struct PopulationFrame {
    pub y: DVector<f64>,
    /// Outcome-model covariates, `N x nx`.
    pub x: DMatrix<f64>,
    /// Selection-model covariates, `N x nv`.
    pub v: DMatrix<f64>,
    /// Design variable, strictly positive.
    pub z: DVector<f64>,
}

impl PopulationFrame {
    pub fn n_units(&self) -> usize {
        self.y.len()
    }

    /// CSV with header `unit_id,y,x1..,v1..,z`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["unit_id".to_string(), "y".to_string()];
        header.extend((1..=self.x.ncols()).map(|j| format!("x{j}")));
        header.extend((1..=self.v.ncols()).map(|j| format!("v{j}")));
        header.push("z".into());
        w.write_record(&header)?;
        for i in 0..self.n_units() {
            let mut row = vec![i.to_string(), self.y[i].to_string()];
            row.extend(self.x.row(i).iter().map(f64::to_string));
            row.extend(self.v.row(i).iter().map(f64::to_string));
            row.push(self.z[i].to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Draw a population of `n_units` from the outcome and design-variable models.
pub fn generate_population(
    spec: &PopulationModelSpec,
    dspec: &DesignVariableSpec,
    n_units: usize,
    seed: u64,
) -> Result<PopulationFrame> {
    spec.validate()?;
    let (nx, nv) = (spec.x_covariates.len(), spec.v_covariates.len());
    dspec.validate(nx, nv)?;
    if n_units < 2 {
        return Err(Error::InvalidSpec(format!("population needs at least 2 units, got {n_units}")));
    }

    let mut rng = rng::seeded(seed);
    let xs: Vec<Sampler> = spec.x_covariates.iter().map(CovariateGenerator::sampler).collect();
    let vs: Vec<Sampler> = spec.v_covariates.iter().map(CovariateGenerator::sampler).collect();
    let eps = Normal::new(0.0, spec.sigma2.sqrt()).expect("validated");
    let nu = Normal::new(0.0, dspec.noise_variance.sqrt()).expect("validated");

    let mut y = DVector::zeros(n_units);
    let mut x = DMatrix::zeros(n_units, nx);
    let mut v = DMatrix::zeros(n_units, nv);
    let mut z = DVector::zeros(n_units);
    let mut xr = vec![0.0; nx];
    let mut vr = vec![0.0; nv];

    for i in 0..n_units {
        for (slot, s) in xr.iter_mut().zip(&xs) {
            *slot = s.draw(&mut rng);
        }
        for (slot, s) in vr.iter_mut().zip(&vs) {
            *slot = s.draw(&mut rng);
        }
        let mean_y = spec.beta[0]
            + xr.iter().chain(&vr).zip(&spec.beta[1..]).map(|(c, b)| c * b).sum::<f64>();
        let yi = mean_y + eps.sample(&mut rng);
        let mean_z = dspec.mean(&xr, &vr, yi);

        let mut zi = mean_z + nu.sample(&mut rng);
        let mut attempts = 1;
        while zi <= 0.0 {
            if dspec.positivity_policy == PositivityPolicy::RejectPopulation || attempts > MAX_REDRAWS {
                return Err(Error::NonPositiveDesign { unit: i, attempts });
            }
            zi = mean_z + nu.sample(&mut rng);
            attempts += 1;
        }

        y[i] = yi;
        z[i] = zi;
        x.row_mut(i).iter_mut().zip(&xr).for_each(|(d, s)| *d = *s);
        v.row_mut(i).iter_mut().zip(&vr).for_each(|(d, s)| *d = *s);
    }
    Ok(PopulationFrame { y, x, v, z })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_spec() -> (PopulationModelSpec, DesignVariableSpec) {
        let mut spec = PopulationModelSpec::study();
        spec.sigma2 = 0.0;
        spec.x_covariates = vec![CovariateGenerator::Normal { mean: 1.0, sd: 0.0 }];
        spec.v_covariates = vec![CovariateGenerator::Normal { mean: 3.0, sd: 0.0 }];
        let mut dspec = DesignVariableSpec::study();
        dspec.noise_variance = 0.0;
        (spec, dspec)
    }

    #[test]
    fn zero_noise_outcome_is_linear_predictor() {
        let (spec, dspec) = constant_spec();
        let f = generate_population(&spec, &dspec, 3, 1).unwrap();
        for i in 0..3 {
            assert!((f.y[i] - 4.0).abs() < 1e-12);
            assert!((f.z[i] - (4.0 + 7.5 + 0.15 * 16.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_noise_design_variable_hand_value() {
        let dspec = DesignVariableSpec { noise_variance: 0.0, ..DesignVariableSpec::study() };
        assert!((dspec.mean(&[0.0], &[2.0], 2.0) - 9.6).abs() < 1e-12);
    }

    #[test]
    fn deterministic_when_noise_free() {
        let (spec, dspec) = constant_spec();
        let a = generate_population(&spec, &dspec, 10, 1).unwrap();
        let b = generate_population(&spec, &dspec, 10, 99).unwrap();
        assert_eq!(a.y, b.y);
        assert_eq!(a.z, b.z);
    }

    #[test]
    fn seeds_control_the_frame() {
        let spec = PopulationModelSpec::study();
        let dspec = DesignVariableSpec::study();
        let a = generate_population(&spec, &dspec, 50, 5).unwrap();
        let b = generate_population(&spec, &dspec, 50, 5).unwrap();
        let c = generate_population(&spec, &dspec, 50, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.z.iter().all(|&z| z > 0.0));
    }

    #[test]
    fn non_positive_design_variable_is_reported() {
        let spec = PopulationModelSpec::study();
        let mut dspec = DesignVariableSpec::new(&[(Term::Intercept, -5.0)], 1e-4);
        dspec.positivity_policy = PositivityPolicy::RejectPopulation;
        let err = generate_population(&spec, &dspec, 5, 1).unwrap_err();
        assert!(matches!(err, Error::NonPositiveDesign { unit: 0, attempts: 1 }));

        dspec.positivity_policy = PositivityPolicy::Redraw;
        let err = generate_population(&spec, &dspec, 5, 1).unwrap_err();
        assert!(matches!(err, Error::NonPositiveDesign { unit: 0, attempts } if attempts == MAX_REDRAWS + 1));
    }

    #[test]
    fn rejects_invalid_specs() {
        let mut spec = PopulationModelSpec::study();
        spec.beta.pop();
        assert!(generate_population(&spec, &DesignVariableSpec::study(), 10, 0).is_err());
        let mut spec = PopulationModelSpec::study();
        spec.sigma2 = -1.0;
        assert!(generate_population(&spec, &DesignVariableSpec::study(), 10, 0).is_err());
        assert!(generate_population(&PopulationModelSpec::study(), &DesignVariableSpec::study(), 1, 0).is_err());
        let bad = DesignVariableSpec::new(&[(Term::V(3), 1.0)], 1.0);
        assert!(generate_population(&PopulationModelSpec::study(), &bad, 10, 0).is_err());
    }

    #[test]
    fn csv_header_layout() {
        let f = generate_population(&PopulationModelSpec::study(), &DesignVariableSpec::study(), 3, 2).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "unit_id,y,x1,v1,z");
        assert_eq!(text.lines().count(), 4);
    }
}
