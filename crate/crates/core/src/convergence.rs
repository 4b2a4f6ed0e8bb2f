//! Convergence diagnostics for federated multimodal training: the closed-form
//! bound on the average squared gradient norm, its per-modality form, the
//! gradient-diversity estimate, the step-size condition, and estimators for
//! the smoothness and noise constants.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConvergenceError {
    #[error("{0} must be finite and strictly positive")]
    Invalid(&'static str),
    #[error("need one initial gap per modality ({gaps} gaps for {modalities} modalities)")]
    GapCount { gaps: usize, modalities: usize },
    #[error("every gradient snapshot sums to zero")]
    DegenerateSnapshot,
}

/// Constants and hyperparameters entering the bound.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs {
    /// Smoothness constant L.
    pub smoothness: f64,
    /// Noise scale σ; the minibatch gradient variance is σ²/B.
    pub sigma: f64,
    /// Variance constant C1 of the step-size condition.
    pub c1: f64,
    pub batch: usize,
    /// UAVs per modality cluster.
    pub uavs: usize,
    pub local_iters: usize,
    pub rounds: usize,
    pub step: f64,
    pub modalities: usize,
    /// Initial optimality gap of each modality.
    pub gaps: Vec<f64>,
    /// Polyak-Lojasiewicz constant. Carried for reporting; no formula uses it.
    pub pl_constant: f64,
    /// Gradient diversity λ.
    pub lambda: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<(), ConvergenceError> {
        let reals = [
            ("smoothness", self.smoothness),
            ("sigma", self.sigma),
            ("c1", self.c1),
            ("step", self.step),
            ("pl_constant", self.pl_constant),
            ("lambda", self.lambda),
        ];
        for (name, v) in reals {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConvergenceError::Invalid(name));
            }
        }
        let counts =
            [("batch", self.batch), ("uavs", self.uavs), ("local_iters", self.local_iters), ("rounds", self.rounds), ("modalities", self.modalities)];
        for (name, v) in counts {
            if v == 0 {
                return Err(ConvergenceError::Invalid(name));
            }
        }
        if self.gaps.len() != self.modalities {
            return Err(ConvergenceError::GapCount { gaps: self.gaps.len(), modalities: self.modalities });
        }
        if self.gaps.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return Err(ConvergenceError::Invalid("gaps"));
        }
        Ok(())
    }

    /// The three terms of the bound: initial gap, minibatch noise and local
    /// drift.
    pub fn terms(&self) -> [f64; 3] {
        let (l, s2, eta) = (self.smoothness, self.sigma * self.sigma, self.step);
        let (b, u, j, k, m) = (self.batch as f64, self.uavs as f64, self.local_iters as f64, self.rounds as f64, self.modalities as f64);
        let gap: f64 = self.gaps.iter().sum();
        [
            2.0 * gap / (eta * k * j),
            m * l * eta * s2 / (u * b),
            2.0 * m * eta * eta * s2 * l * l * (j + 1.0) * (1.0 + 1.0 / u) / b,
        ]
    }
}

/// Upper bound on the average expected squared gradient norm after
/// `rounds` rounds, summed over modalities.
pub fn theorem1_bound(inputs: &BoundInputs) -> f64 {
    inputs.terms().iter().sum()
}

/// The bound of a single modality cluster with initial gap `gap`.
pub fn per_modality_bound(inputs: &BoundInputs, gap: f64) -> f64 {
    theorem1_bound(&BoundInputs { modalities: 1, gaps: vec![gap], ..inputs.clone() })
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Gradient diversity: the largest `Σ‖g_u‖² / ‖Σ g_u‖²` over snapshots whose
/// summed gradient is nonzero.
pub fn estimate_lambda(snapshots: &[Vec<Vec<f64>>]) -> Result<f64, ConvergenceError> {
    let mut best: Option<f64> = None;
    for grads in snapshots {
        let Some(first) = grads.first() else { continue };
        let mut sum = vec![0.0; first.len()];
        for g in grads {
            sum.iter_mut().zip(g).for_each(|(s, v)| *s += v);
        }
        let denom = sq_norm(&sum);
        if denom == 0.0 {
            continue;
        }
        let ratio = grads.iter().map(|g| sq_norm(g)).sum::<f64>() / denom;
        best = Some(best.map_or(ratio, |b| b.max(ratio)));
    }
    best.ok_or(ConvergenceError::DegenerateSnapshot)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepsizeCheck {
    pub satisfied: bool,
    pub lhs: f64,
}

fn stepsize_lhs(inputs: &BoundInputs, eta: f64) -> f64 {
    let (l, c1, lam) = (inputs.smoothness, inputs.c1, inputs.lambda);
    let (u, j) = (inputs.uavs as f64, inputs.local_iters as f64);
    -eta / 2.0 + lam * (u + 1.0) * l * l * eta.powi(3) * (2.0 * c1 + j * (j + 1.0)) / (2.0 * u) + lam * l * eta * eta / 2.0 * (c1 / u + 1.0)
}

/// Step-size condition under which the bound holds: `lhs ≤ 0`.
pub fn stepsize_condition(inputs: &BoundInputs) -> StepsizeCheck {
    let lhs = stepsize_lhs(inputs, inputs.step);
    StepsizeCheck { satisfied: lhs <= 0.0, lhs }
}

/// Largest step satisfying the condition, by bisection to `tol`. The left
/// side is `η·q(η)` with `q` increasing, so the condition holds exactly on
/// `(0, η*]`.
pub fn stepsize_boundary(inputs: &BoundInputs, tol: f64) -> f64 {
    let mut lo = 0.0;
    let mut hi = 1.0;
    while stepsize_lhs(inputs, hi) <= 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if stepsize_lhs(inputs, mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    pub empirical_mean_grad_sq: f64,
    pub bound: f64,
    /// The measured average exceeds the bound. With estimated constants this
    /// points at the estimates, not at the training run.
    pub violated: bool,
}

pub fn bound_vs_empirical(grad_sq: &[f64], bound: f64) -> BoundReport {
    let mean = if grad_sq.is_empty() { 0.0 } else { grad_sq.iter().sum::<f64>() / grad_sq.len() as f64 };
    BoundReport { empirical_mean_grad_sq: mean, bound, violated: mean > bound }
}

/// Largest `‖∇f(u) − ∇f(v)‖ / ‖u − v‖` over the given parameter pairs.
pub fn estimate_smoothness(pairs: &[(Vec<f64>, Vec<f64>)], grad: impl Fn(&[f64]) -> Vec<f64>) -> f64 {
    pairs
        .iter()
        .filter_map(|(u, v)| {
            let dist: f64 = u.iter().zip(v).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            if dist == 0.0 {
                return None;
            }
            let (gu, gv) = (grad(u), grad(v));
            Some(gu.iter().zip(&gv).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / dist)
        })
        .fold(0.0, f64::max)
}

/// σ² from minibatch gradients of size `batch` around the full gradient:
/// `B · mean ‖g_b − g‖²`.
pub fn estimate_noise_variance(full: &[f64], minibatch: &[Vec<f64>], batch: usize) -> f64 {
    if minibatch.is_empty() {
        return 0.0;
    }
    let mean: f64 = minibatch.iter().map(|g| g.iter().zip(full).map(|(a, b)| (a - b).powi(2)).sum::<f64>()).sum::<f64>()
        / minibatch.len() as f64;
    batch as f64 * mean
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> BoundInputs {
        BoundInputs {
            smoothness: 1.0,
            sigma: 1.0,
            c1: 1.0,
            batch: 32,
            uavs: 10,
            local_iters: 15,
            rounds: 100,
            step: 0.01,
            modalities: 2,
            gaps: vec![1.0, 1.0],
            pl_constant: 1.0,
            lambda: 1.0,
        }
    }

    #[test]
    fn pinned_value_and_terms() {
        let r = reference();
        assert!((theorem1_bound(&r) - 0.2669491666666667).abs() <= 1e-12 * 0.2669491666666667);
        let t = r.terms();
        assert!((t[0] - 0.26666666666666666).abs() <= 1e-15);
        assert!((t[1] - 6.25e-05).abs() <= 1e-18);
        assert!((t[2] - 0.00022).abs() <= 1e-17);
        assert!((per_modality_bound(&r, 1.0) - 0.13347458333333334).abs() <= 1e-12 * 0.1334);
    }

    #[test]
    fn zero_gap_and_noise_vanish() {
        let r = BoundInputs { sigma: 0.0, gaps: vec![0.0, 0.0], ..reference() };
        assert_eq!(theorem1_bound(&r), 0.0);
        assert!(r.validate().is_err());
    }

    #[test]
    fn doubling_rounds_halves_the_gap_term() {
        let r = reference();
        let d = BoundInputs { rounds: 200, ..reference() };
        assert_eq!(d.terms()[0], r.terms()[0] / 2.0);
        assert_eq!(d.terms()[1..], r.terms()[1..]);
    }

    #[test]
    fn per_modality_bounds_add_up() {
        let r = reference();
        assert!((2.0 * per_modality_bound(&r, 1.0) - theorem1_bound(&r)).abs() <= 1e-15);
        let many = BoundInputs { uavs: 1 << 40, ..reference() };
        let limit = 2.0 / (0.01 * 100.0 * 15.0) + 2.0 * 0.0001 * 16.0 / 32.0;
        assert!((per_modality_bound(&many, 1.0) - limit).abs() <= 1e-12);
    }

    #[test]
    fn lambda_examples() {
        assert_eq!(estimate_lambda(&[vec![vec![3.0, -1.0]]]).unwrap(), 1.0);
        assert_eq!(estimate_lambda(&[vec![vec![1.0, 0.0], vec![0.0, 1.0]]]).unwrap(), 1.0);
        assert_eq!(estimate_lambda(&[vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]]).unwrap(), 1.0);
        assert_eq!(estimate_lambda(&[vec![vec![1.0, 0.0], vec![1.0, 0.0]]]).unwrap(), 0.5);
        let opposite = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
        assert_eq!(estimate_lambda(&[opposite.clone()]), Err(ConvergenceError::DegenerateSnapshot));
        assert_eq!(estimate_lambda(&[opposite, vec![vec![1.0, 0.0], vec![1.0, 0.0]]]).unwrap(), 0.5);
    }

    #[test]
    fn stepsize_limits() {
        let tiny = BoundInputs { step: 1e-9, ..reference() };
        assert!(stepsize_condition(&tiny).satisfied);
        let huge = BoundInputs { step: 10.0, ..reference() };
        assert!(!stepsize_condition(&huge).satisfied);
    }

    #[test]
    fn bisection_finds_the_sign_change() {
        // Positive root of aη² + bη − 1/2 with this input set.
        let eta = stepsize_boundary(&reference(), 1e-13);
        assert!((eta - 0.059259595370478646).abs() <= 1e-10);
        assert!(stepsize_condition(&BoundInputs { step: eta - 1e-10, ..reference() }).satisfied);
        assert!(!stepsize_condition(&BoundInputs { step: eta + 1e-10, ..reference() }).satisfied);
    }

    #[test]
    fn empirical_report() {
        let huge = BoundInputs { sigma: 1e150, ..reference() };
        assert!(!bound_vs_empirical(&[1e10, 1e12], theorem1_bound(&huge)).violated);
        let r = bound_vs_empirical(&[0.0, 0.0], theorem1_bound(&reference()));
        assert_eq!(r.empirical_mean_grad_sq, 0.0);
        assert!(!r.violated);
        assert!(bound_vs_empirical(&[1.0], 0.5).violated);
    }

    #[test]
    fn estimators_on_a_quadratic() {
        // f(w) = 3/2‖w‖², gradient 3w.
        let grad = |w: &[f64]| w.iter().map(|v| 3.0 * v).collect::<Vec<_>>();
        let pairs = vec![(vec![1.0, 2.0], vec![0.0, -1.0]), (vec![0.5, 0.5], vec![0.5, 0.5])];
        assert!((estimate_smoothness(&pairs, grad) - 3.0).abs() <= 1e-15);
        let var = estimate_noise_variance(&[0.0, 0.0], &[vec![1.0, 0.0], vec![0.0, -1.0]], 4);
        assert_eq!(var, 4.0);
    }

    #[test]
    fn validation_names_the_field() {
        assert_eq!(BoundInputs { step: -0.1, ..reference() }.validate(), Err(ConvergenceError::Invalid("step")));
        assert_eq!(BoundInputs { batch: 0, ..reference() }.validate(), Err(ConvergenceError::Invalid("batch")));
        assert!(matches!(BoundInputs { gaps: vec![1.0], ..reference() }.validate(), Err(ConvergenceError::GapCount { .. })));
        assert!(reference().validate().is_ok());
    }
}
