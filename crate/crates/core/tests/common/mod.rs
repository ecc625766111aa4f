#![allow(dead_code)]

use infosamp::design::{self, SampleData};
use infosamp::harness::ExperimentConfig;
use infosamp::rng::{self, Purpose};
use infosamp::scorefit::{JointInclusion, ScoreSystem, SelectionModelSpec};
use infosamp::bayes::{CovarianceMode, Posterior, PriorSpec};
use infosamp::synthpop;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Sample of replicate `r` under the default study configuration.
pub fn study_sample(r: u64) -> SampleData {
    let cfg = ExperimentConfig::default();
    let frame = synthpop::generate_population(
        &cfg.population,
        &cfg.design,
        cfg.population_size,
        rng::derive_seed(cfg.seed, r, Purpose::Population, 0),
    )
    .unwrap();
    design::draw_pps_sample(&frame, cfg.sample_size, rng::derive_seed(cfg.seed, r, Purpose::Sample, 0)).unwrap()
}

pub fn posterior(sample: &SampleData, model: &str, mode: CovarianceMode) -> Posterior {
    let sys = ScoreSystem::selection(sample, &SelectionModelSpec::parse(model).unwrap()).unwrap();
    Posterior::new(sys, Some(PriorSpec::default()), mode, &JointInclusion::ProportionalToSize).unwrap()
}

/// Every ordered permutation of `0..n`.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, left: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left.is_empty() {
            out.push(prefix.clone());
            return;
        }
        for k in 0..left.len() {
            let u = left.remove(k);
            prefix.push(u);
            rec(prefix, left, out);
            prefix.pop();
            left.insert(k, u);
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut (0..n).collect(), &mut out);
    out
}

/// Exact sampling distribution of the randomly ordered systematic PPS
/// design: each `(sorted sample, probability)` pair. The start point is
/// integrated exactly, since the selection is constant between the
/// fractional parts of the cumulative sums.
pub fn enumerate_design(pi: &[f64], n: usize) -> Vec<(Vec<usize>, f64)> {
    let perms = permutations(pi.len());
    let per_order = 1.0 / perms.len() as f64;
    let mut out: Vec<(Vec<usize>, f64)> = Vec::new();
    for order in &perms {
        let mut cuts = vec![0.0, 1.0];
        let mut cum = 0.0;
        for &u in order {
            cum += pi[u];
            cuts.push(cum.fract());
        }
        cuts.sort_by(f64::total_cmp);
        for w in cuts.windows(2) {
            let len = w[1] - w[0];
            if len <= 0.0 {
                continue;
            }
            let mut s = design::systematic_pps(pi, order, 0.5 * (w[0] + w[1]), n);
            s.sort_unstable();
            match out.iter_mut().find(|(t, _)| *t == s) {
                Some((_, p)) => *p += per_order * len,
                None => out.push((s, per_order * len)),
            }
        }
    }
    out
}

/// Random selection-type system: `n` units, `d` polynomial-in-`y` and `v`
/// columns, inclusion probabilities in `(0.02, 0.9)`.
pub fn random_system<R: Rng>(rng: &mut R, n: usize, d: usize) -> ScoreSystem {
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..6.0)).collect();
    let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..5.0)).collect();
    let basis = DMatrix::from_fn(n, d, |i, j| match j {
        0 => 1.0,
        1 => v[i],
        k => y[i].powi(k as i32 - 1),
    });
    let pi = DVector::from_fn(n, |_, _| rng.random_range(0.02..0.9));
    let terms = infosamp::basis::parse_terms(&["1", "v1", "y", "y^2", "y^3"][..d].join(",")).unwrap();
    ScoreSystem::from_parts(terms, basis, pi.clone(), pi, 10.0 * n as f64).unwrap()
}

/// Central-difference gradient.
pub fn fd_gradient(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(x.len(), |k, _| {
        let h = 1e-3 * (1.0 + x[k].abs());
        let mut up = x.clone();
        let mut dn = x.clone();
        up[k] += h;
        dn[k] -= h;
        (f(&up) - f(&dn)) / (2.0 * h)
    })
}
