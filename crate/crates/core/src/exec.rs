//! Risk-averse optimal acquisition under an exogenous, time-varying impact path.
//!
//! Prices follow
//! `p_hat(n) = alpha p_hat(n-1) + (1 - alpha) p(n-1) + eps(n)` and
//! `p(n) = p_hat(n) + lambda(n) (x(n) + u(n))`, and the trader minimises
//! `E[sum p(n) x(n) + phi sum Q(n)^2]` where `Q(n)` is the inventory still
//! to buy when step `n` starts. The optimum solves a scalar backward
//! recursion for the quadratic cost coefficient `mu(n)`.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecError {
    #[error("mu at step {0} is not positive; no unique optimal schedule")]
    NonPositiveMu(usize),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactPath {
    /// Impact per step, `n = 1..=N`.
    pub lambdas: Vec<f64>,
    /// Weight of the previous pre-trade price in the next one, in `[0, 1]`.
    pub alpha: f64,
    pub phi: f64,
    pub sigma_eps_sq: f64,
    pub sigma_u_sq: f64,
}

impl ImpactPath {
    pub fn new(lambdas: Vec<f64>, alpha: f64, phi: f64) -> Self {
        Self {
            lambdas,
            alpha,
            phi,
            sigma_eps_sq: 0.0,
            sigma_u_sq: 0.0,
        }
    }

    pub fn constant(lambda: f64, horizon: usize, alpha: f64, phi: f64) -> Self {
        Self::new(vec![lambda; horizon], alpha, phi)
    }

    pub fn horizon(&self) -> usize {
        self.lambdas.len()
    }

    /// `lambda(n)` with `lambda(0) = 0`.
    fn lambda(&self, n: usize) -> f64 {
        if n == 0 {
            0.0
        } else {
            self.lambdas[n - 1]
        }
    }

    fn check(&self, horizon: usize) -> Result<(), ExecError> {
        if horizon == 0 {
            return Err(ExecError::InvalidInput("horizon must be at least 1".into()));
        }
        if self.lambdas.len() != horizon {
            return Err(ExecError::InvalidInput(format!(
                "impact path has {} steps, horizon is {horizon}",
                self.lambdas.len()
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(ExecError::InvalidInput(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.lambdas.iter().chain([&self.phi]).any(|v| !v.is_finite()) {
            return Err(ExecError::InvalidInput("non-finite impact or risk aversion".into()));
        }
        Ok(())
    }
}

/// Quadratic cost coefficients `mu(1..=N)`.
pub fn solve_mu(path: &ImpactPath, horizon: usize) -> Result<Vec<f64>, ExecError> {
    path.check(horizon)?;
    let a = path.alpha;
    let mut mu = vec![0.0; horizon];
    for n in (1..=horizon).rev() {
        let base = a * path.lambda(n - 1) + path.lambda(n) + path.phi;
        let m = if n == horizon {
            base
        } else {
            let l = path.lambda(n);
            base - l * l * (1.0 + a).powi(2) / (4.0 * mu[n])
        };
        if !(m > 0.0) {
            return Err(ExecError::NonPositiveMu(n));
        }
        mu[n - 1] = m;
    }
    Ok(mu)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionSchedule {
    pub mu: Vec<f64>,
    /// Fraction of the remaining inventory bought at each step.
    pub theta: Vec<f64>,
    pub x: Vec<f64>,
    /// Inventory left after each step's order.
    pub q_path: Vec<f64>,
}

impl ExecutionSchedule {
    pub fn write_csv<W: Write>(&self, mut out: W, manifest_hash: &str) -> Result<(), csv::Error> {
        writeln!(out, "# manifest: {manifest_hash}")?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "mu", "theta", "x", "Q_remaining"])?;
        for i in 0..self.x.len() {
            w.write_record([
                (i + 1).to_string(),
                self.mu[i].to_string(),
                self.theta[i].to_string(),
                self.x[i].to_string(),
                self.q_path[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Optimal fractions `theta(n)` for `n = 1..=N`, independent of inventory.
pub fn optimal_thetas(path: &ImpactPath, horizon: usize) -> Result<(Vec<f64>, Vec<f64>), ExecError> {
    let mu = solve_mu(path, horizon)?;
    let theta = (1..=horizon)
        .map(|n| {
            if n == horizon {
                1.0
            } else {
                1.0 - path.lambda(n) * (1.0 + path.alpha) / (2.0 * mu[n])
            }
        })
        .collect();
    Ok((mu, theta))
}

pub fn optimal_schedule(path: &ImpactPath, q: f64, horizon: usize) -> Result<ExecutionSchedule, ExecError> {
    let (mu, theta) = optimal_thetas(path, horizon)?;
    let (x, q_path) = schedule_from_thetas(&theta, q);
    Ok(ExecutionSchedule { mu, theta, x, q_path })
}

/// Orders implied by fractions of the remaining inventory. The final step
/// buys whatever is left so the total is exactly `q`.
pub fn schedule_from_thetas(theta: &[f64], q: f64) -> (Vec<f64>, Vec<f64>) {
    let mut remaining = q;
    let mut x = Vec::with_capacity(theta.len());
    let mut q_path = Vec::with_capacity(theta.len());
    for (i, &t) in theta.iter().enumerate() {
        let order = if i + 1 == theta.len() { remaining } else { t * remaining };
        remaining -= order;
        x.push(order);
        q_path.push(remaining);
    }
    (x, q_path)
}

/// Minimal expected cost from the initial state, `p_tilde0 Q + mu(1) Q^2`.
pub fn expected_cost(path: &ImpactPath, q: f64, horizon: usize, p_tilde0: f64) -> Result<f64, ExecError> {
    let mu = solve_mu(path, horizon)?;
    Ok(p_tilde0 * q + mu[0] * q * q)
}

/// Cost of one realisation of a fixed order schedule, starting from
/// `p_hat(0) = p(0) = p0`. `u` and `eps` hold one draw per step.
pub fn realized_cost(path: &ImpactPath, p0: f64, x: &[f64], q: f64, u: &[f64], eps: &[f64]) -> f64 {
    let a = path.alpha;
    let (mut p_hat, mut p) = (p0, p0);
    let mut remaining = q;
    let mut cost = 0.0;
    for n in 0..x.len() {
        p_hat = a * p_hat + (1.0 - a) * p + eps[n];
        p = p_hat + path.lambdas[n] * (x[n] + u[n]);
        cost += p * x[n] + path.phi * remaining * remaining;
        remaining -= x[n];
    }
    cost
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn hand_evaluated_recursions() {
        let mu = solve_mu(&ImpactPath::constant(1.0, 1, 0.0, 0.0), 1).unwrap();
        assert_eq!(mu, vec![1.0]);
        let path = ImpactPath::constant(1.0, 2, 0.0, 0.0);
        assert_eq!(solve_mu(&path, 2).unwrap(), vec![0.75, 1.0]);
        let s = optimal_schedule(&path, 10.0, 2).unwrap();
        assert_eq!(s.theta, vec![0.5, 1.0]);
        assert_eq!(s.x, vec![5.0, 5.0]);
        assert_eq!(s.q_path, vec![5.0, 0.0]);
    }

    #[test]
    fn single_period_buys_everything() {
        let s = optimal_schedule(&ImpactPath::constant(0.3, 1, 0.4, 0.2), 42.0, 1).unwrap();
        assert_eq!(s.theta, vec![1.0]);
        assert_eq!(s.x, vec![42.0]);
    }

    #[test]
    fn cost_examples() {
        let path = ImpactPath::constant(1.0, 1, 0.0, 0.0);
        assert_eq!(expected_cost(&path, 2.0, 1, 10.0).unwrap(), 24.0);
        assert_eq!(expected_cost(&ImpactPath::constant(1.0, 4, 0.2, 0.1), 0.0, 4, 10.0).unwrap(), 0.0);
    }

    #[test]
    fn constant_impact_is_twap() {
        for n in 1..=50 {
            let (_, theta) = optimal_thetas(&ImpactPath::constant(0.7, n, 0.0, 0.0), n).unwrap();
            for (i, t) in theta.iter().enumerate() {
                let want = 1.0 / (n - i) as f64;
                assert!((t - want).abs() < 1e-12, "N={n} n={} {t} vs {want}", i + 1);
            }
        }
    }

    #[test]
    fn risk_aversion_front_loads() {
        let thetas: Vec<f64> = [0.0, 0.1, 1.0, 10.0]
            .iter()
            .map(|&phi| optimal_thetas(&ImpactPath::constant(1.0, 10, 0.0, phi), 10).unwrap().1[0])
            .collect();
        assert!(thetas.windows(2).all(|w| w[1] > w[0]), "{thetas:?}");
    }

    #[test]
    fn noise_levels_do_not_change_schedule() {
        let mut path = ImpactPath::new(vec![0.5, 1.2, 0.8, 2.0], 0.3, 0.05);
        let base = optimal_schedule(&path, 100.0, 4).unwrap();
        path.sigma_u_sq = 2500.0;
        path.sigma_eps_sq = 9.0;
        assert_eq!(optimal_schedule(&path, 100.0, 4).unwrap(), base);
    }

    #[test]
    fn non_positive_mu_is_an_error() {
        // Negative impact at the last step.
        let path = ImpactPath::new(vec![1.0, -2.0], 0.0, 0.0);
        assert_eq!(solve_mu(&path, 2), Err(ExecError::NonPositiveMu(2)));
        assert!(matches!(solve_mu(&path, 3), Err(ExecError::InvalidInput(_))));
    }

    #[test]
    fn zero_noise_cost_matches_closed_form() {
        let path = ImpactPath::new(vec![0.5, 1.5, 1.0], 0.6, 0.2);
        let s = optimal_schedule(&path, 30.0, 3).unwrap();
        let c = realized_cost(&path, 100.0, &s.x, 30.0, &[0.0; 3], &[0.0; 3]);
        let want = expected_cost(&path, 30.0, 3, 100.0).unwrap();
        assert!((c - want).abs() < 1e-9 * want, "{c} vs {want}");
    }

    fn mc_cost(path: &ImpactPath, x: &[f64], q: f64, draws: &[(Vec<f64>, Vec<f64>)]) -> (f64, Vec<f64>) {
        let costs: Vec<f64> = draws.iter().map(|(u, e)| realized_cost(path, 100.0, x, q, u, e)).collect();
        (costs.iter().sum::<f64>() / costs.len() as f64, costs)
    }

    #[test]
    fn perturbed_schedules_cost_more() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let n = rng.random_range(2..=5);
            let lambdas: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
            let mut path = ImpactPath::new(lambdas, rng.random_range(0.0..1.0), rng.random_range(0.0..0.5));
            path.sigma_u_sq = 4.0;
            path.sigma_eps_sq = 1.0;
            let Ok(opt) = optimal_schedule(&path, 10.0, n) else { continue };
            let draws: Vec<(Vec<f64>, Vec<f64>)> = (0..2000)
                .map(|_| {
                    let u = (0..n).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
                    let e = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                    (u, e)
                })
                .collect();
            let (base, base_costs) = mc_cost(&path, &opt.x, 10.0, &draws);
            for k in 0..n - 1 {
                for eps in [-0.05, 0.05] {
                    let mut theta = opt.theta.clone();
                    theta[k] = (theta[k] + eps).clamp(0.0, 1.0);
                    let (x, _) = schedule_from_thetas(&theta, 10.0);
                    let (alt, alt_costs) = mc_cost(&path, &x, 10.0, &draws);
                    let diffs: Vec<f64> = alt_costs.iter().zip(&base_costs).map(|(a, b)| a - b).collect();
                    let m = diffs.iter().sum::<f64>() / diffs.len() as f64;
                    let var = diffs.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64;
                    let se = (var / diffs.len() as f64).sqrt();
                    assert!(alt >= base - 3.0 * se, "perturbing step {k} by {eps}: {alt} < {base}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn schedules_conserve_inventory(
            lambdas in proptest::collection::vec(0.1f64..3.0, 1..30),
            alpha in 0.0f64..1.0,
            phi in 0.0f64..1.0,
            q in 0.0f64..1e4,
        ) {
            let n = lambdas.len();
            let path = ImpactPath::new(lambdas, alpha, phi);
            if let Ok(s) = optimal_schedule(&path, q, n) {
                prop_assert_eq!(s.theta[n - 1], 1.0);
                prop_assert_eq!(*s.q_path.last().unwrap(), 0.0);
                prop_assert!((s.x.iter().sum::<f64>() - q).abs() <= 1e-9 * q.max(1.0));
                prop_assert!(s.mu.iter().all(|&m| m > 0.0));
            }
        }

        #[test]
        fn deterministic_cost_equals_closed_form(
            lambdas in proptest::collection::vec(0.1f64..3.0, 1..12),
            alpha in 0.0f64..1.0,
            phi in 0.0f64..1.0,
            q in 1.0f64..100.0,
            p0 in 1.0f64..1000.0,
        ) {
            let n = lambdas.len();
            let path = ImpactPath::new(lambdas, alpha, phi);
            if let Ok(s) = optimal_schedule(&path, q, n) {
                let zeros = vec![0.0; n];
                let c = realized_cost(&path, p0, &s.x, q, &zeros, &zeros);
                let want = expected_cost(&path, q, n, p0).unwrap();
                prop_assert!((c - want).abs() <= 1e-9 * want.abs().max(1.0));
            }
        }
    }
}
