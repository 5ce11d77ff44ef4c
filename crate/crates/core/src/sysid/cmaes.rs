//! (μ/μ_w, λ) CMA-ES with cumulative step-size adaptation and rank-one plus
//! rank-μ covariance updates.
//!
//! Box constraints are handled by evaluating the objective at the projected
//! point and adding a quadratic penalty on the distance to the box. Candidates
//! of a generation are evaluated in parallel and reduced in index order, so a
//! fixed seed reproduces the same run.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CmaesError {
    #[error("objective is not finite at the initial point ({0})")]
    NonFiniteStart(f64),
    #[error("invalid settings: {0}")]
    InvalidSettings(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CmaesSettings {
    /// Offspring per generation; `None` uses 4 + floor(3 ln n).
    pub population: Option<usize>,
    pub sigma0: f64,
    pub max_generations: usize,
    pub max_evaluations: usize,
    /// Stop as soon as the best cost falls to or below this value.
    pub target_cost: f64,
    /// Stop when the largest search standard deviation drops below this.
    pub tol_sigma: f64,
    /// Weight of the squared distance to the feasible box.
    pub penalty: f64,
    pub seed: u64,
}

impl Default for CmaesSettings {
    fn default() -> Self {
        Self {
            population: None,
            sigma0: 0.3,
            max_generations: 1000,
            max_evaluations: 100_000,
            target_cost: f64::NEG_INFINITY,
            tol_sigma: 1e-15,
            penalty: 1e3,
            seed: 0,
        }
    }
}

/// Axis-aligned feasible box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Self { lower, upper }
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&v, (&lo, &hi))| v.clamp(lo, hi))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TargetCost,
    MaxGenerations,
    MaxEvaluations,
    TolSigma,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    pub evaluations: usize,
    /// Best penalized cost of this generation.
    pub generation_best: f64,
    /// Best cost seen so far, never increasing.
    pub best_so_far: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmaesResult {
    /// Best feasible point found.
    pub x: Vec<f64>,
    pub cost: f64,
    pub evaluations: usize,
    pub stop: StopReason,
    pub history: Vec<GenerationRecord>,
}

/// Default offspring count for dimension `n`.
pub fn default_population(n: usize) -> usize {
    4 + (3.0 * (n as f64).ln()).floor() as usize
}

struct Strategy {
    n: usize,
    lambda: usize,
    mu: usize,
    weights: Vec<f64>,
    mueff: f64,
    cc: f64,
    cs: f64,
    c1: f64,
    cmu: f64,
    damps: f64,
    chi_n: f64,
}

impl Strategy {
    fn new(n: usize, lambda: usize) -> Self {
        let nf = n as f64;
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| (mu as f64 + 0.5).ln() - (i as f64).ln())
            .collect();
        let sum: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / sum).collect();
        let mueff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let cc = (4.0 + mueff / nf) / (nf + 4.0 + 2.0 * mueff / nf);
        let cs = (mueff + 2.0) / (nf + mueff + 5.0);
        let c1 = 2.0 / ((nf + 1.3).powi(2) + mueff);
        let cmu = (1.0 - c1).min(2.0 * (mueff - 2.0 + 1.0 / mueff) / ((nf + 2.0).powi(2) + mueff));
        let damps = 1.0 + 2.0 * (((mueff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + cs;
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        Self {
            n,
            lambda,
            mu,
            weights,
            mueff,
            cc,
            cs,
            c1,
            cmu,
            damps,
            chi_n,
        }
    }
}

fn penalized<F>(objective: &F, x: &[f64], bounds: Option<&Bounds>, penalty: f64) -> (f64, Vec<f64>)
where
    F: Fn(&[f64]) -> f64,
{
    match bounds {
        None => (objective(x), x.to_vec()),
        Some(b) => {
            let feasible = b.project(x);
            let dist2: f64 = x.iter().zip(&feasible).map(|(a, c)| (a - c).powi(2)).sum();
            let f = objective(&feasible);
            (f + penalty * dist2, feasible)
        }
    }
}

/// Minimizes `objective` starting from `x0`.
pub fn cmaes_minimize<F>(
    objective: F,
    x0: &[f64],
    settings: &CmaesSettings,
    bounds: Option<&Bounds>,
) -> Result<CmaesResult, CmaesError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let n = x0.len();
    if n == 0 {
        return Err(CmaesError::InvalidSettings("dimension must be at least 1".into()));
    }
    if !(settings.sigma0 > 0.0) {
        return Err(CmaesError::InvalidSettings("sigma0 must be positive".into()));
    }
    if let Some(b) = bounds {
        if b.lower.len() != n || b.upper.len() != n {
            return Err(CmaesError::InvalidSettings("bounds dimension mismatch".into()));
        }
        if b.lower.iter().zip(&b.upper).any(|(lo, hi)| !(lo <= hi)) {
            return Err(CmaesError::InvalidSettings("lower bound above upper bound".into()));
        }
    }
    let lambda = settings.population.unwrap_or_else(|| default_population(n));
    if lambda < 4 {
        return Err(CmaesError::InvalidSettings(format!("population {lambda} is below 4")));
    }

    let (f0, x0_feasible) = penalized(&objective, x0, bounds, settings.penalty);
    if !f0.is_finite() {
        return Err(CmaesError::NonFiniteStart(f0));
    }

    let s = Strategy::new(n, lambda);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut mean = DVector::from_column_slice(x0);
    let mut sigma = settings.sigma0;
    let mut cov = DMatrix::<f64>::identity(n, n);
    let mut basis = DMatrix::<f64>::identity(n, n);
    let mut scales = DVector::<f64>::from_element(n, 1.0);
    let mut pc = DVector::<f64>::zeros(n);
    let mut ps = DVector::<f64>::zeros(n);

    let mut best_x = x0_feasible;
    let mut best_cost = f0;
    let mut evaluations = 1;
    let mut history = Vec::new();

    let mut generation = 0;
    let stop = loop {
        if best_cost <= settings.target_cost {
            break StopReason::TargetCost;
        }
        if generation >= settings.max_generations {
            break StopReason::MaxGenerations;
        }
        if evaluations + s.lambda > settings.max_evaluations {
            break StopReason::MaxEvaluations;
        }
        if sigma * scales.max() < settings.tol_sigma {
            break StopReason::TolSigma;
        }

        let steps: Vec<DVector<f64>> = (0..s.lambda)
            .map(|_| {
                let z = DVector::<f64>::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
                &basis * z.component_mul(&scales)
            })
            .collect();
        let candidates: Vec<DVector<f64>> = steps.iter().map(|y| &mean + sigma * y).collect();
        let evaluated: Vec<(f64, Vec<f64>)> = candidates
            .par_iter()
            .map(|x| penalized(&objective, x.as_slice(), bounds, settings.penalty))
            .collect();
        evaluations += s.lambda;

        let mut order: Vec<usize> = (0..s.lambda).collect();
        order.sort_by(|&a, &b| {
            let (fa, fb) = (evaluated[a].0, evaluated[b].0);
            fa.total_cmp(&fb).then(a.cmp(&b))
        });
        let gen_best = order[0];
        let gen_best_cost = evaluated[gen_best].0;
        if gen_best_cost < best_cost {
            best_cost = gen_best_cost;
            best_x = evaluated[gen_best].1.clone();
        }

        let old_mean = mean.clone();
        let mut y_w = DVector::<f64>::zeros(n);
        for (w, &idx) in s.weights.iter().zip(&order) {
            y_w += *w * &steps[idx];
        }
        mean = &old_mean + sigma * &y_w;

        // C^{-1/2} y_w = B D^{-1} B^T y_w
        let inv_sqrt_y = &basis * (basis.transpose() * &y_w).component_div(&scales);
        ps = (1.0 - s.cs) * &ps + (s.cs * (2.0 - s.cs) * s.mueff).sqrt() * inv_sqrt_y;
        let decay = 1.0 - (1.0 - s.cs).powi(2 * (generation as i32 + 1));
        let h_sig = ps.norm() / decay.sqrt() / s.chi_n < 1.4 + 2.0 / (s.n as f64 + 1.0);
        let h = if h_sig { 1.0 } else { 0.0 };
        pc = (1.0 - s.cc) * &pc + h * (s.cc * (2.0 - s.cc) * s.mueff).sqrt() * &y_w;

        let mut rank_mu = DMatrix::<f64>::zeros(n, n);
        for (w, &idx) in s.weights.iter().zip(&order).take(s.mu) {
            let y = &steps[idx];
            rank_mu += *w * y * y.transpose();
        }
        let rank_one = &pc * pc.transpose() + (1.0 - h) * s.cc * (2.0 - s.cc) * &cov;
        cov = (1.0 - s.c1 - s.cmu) * &cov + s.c1 * rank_one + s.cmu * rank_mu;
        cov = 0.5 * (&cov + cov.transpose());

        sigma *= ((s.cs / s.damps) * (ps.norm() / s.chi_n - 1.0)).exp();

        let eig = SymmetricEigen::new(cov.clone());
        debug_assert!(
            eig.eigenvalues.iter().all(|&v| v > 0.0),
            "covariance lost positive definiteness"
        );
        let floor = 1e-300;
        basis = eig.eigenvectors;
        scales = eig.eigenvalues.map(|v| v.max(floor).sqrt());

        generation += 1;
        history.push(GenerationRecord {
            generation,
            evaluations,
            generation_best: gen_best_cost,
            best_so_far: best_cost,
            sigma,
        });
    };

    Ok(CmaesResult {
        x: best_x,
        cost: best_cost,
        evaluations,
        stop,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    #[test]
    fn default_population_formula() {
        assert_eq!(default_population(1), 4);
        assert_eq!(default_population(2), 6);
        assert_eq!(default_population(10), 10);
    }

    #[test]
    fn weights_sum_to_one_and_decrease() {
        let s = Strategy::new(5, 12);
        assert_eq!(s.mu, 6);
        assert!((s.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(s.weights.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn rejects_bad_start() {
        let err = cmaes_minimize(|_| f64::NAN, &[1.0], &CmaesSettings::default(), None);
        assert!(matches!(err, Err(CmaesError::NonFiniteStart(_))));
        let settings = CmaesSettings {
            population: Some(3),
            ..CmaesSettings::default()
        };
        assert!(cmaes_minimize(sphere, &[1.0], &settings, None).is_err());
    }

    #[test]
    fn bounded_optimum_sits_on_the_box() {
        let bounds = Bounds::new(vec![1.0, -5.0], vec![5.0, 5.0]);
        let settings = CmaesSettings {
            sigma0: 1.0,
            max_generations: 300,
            seed: 3,
            ..CmaesSettings::default()
        };
        let r = cmaes_minimize(sphere, &[3.0, 3.0], &settings, Some(&bounds)).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-6);
        assert!(r.x[1].abs() < 1e-6);
        assert!(r.x[0] >= 1.0);
    }

    #[test]
    fn history_is_monotone() {
        let settings = CmaesSettings {
            max_generations: 50,
            ..CmaesSettings::default()
        };
        let r = cmaes_minimize(sphere, &[1.0; 4], &settings, None).unwrap();
        assert!(r
            .history
            .windows(2)
            .all(|w| w[1].best_so_far <= w[0].best_so_far));
        assert_eq!(r.history.len(), 50);
    }
}
