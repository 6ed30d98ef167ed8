//! Discrete-time Kyle recursive linear equilibrium.
//!
//! The system is a two-point boundary value problem: the value-function
//! coefficients are pinned at the horizon (`alpha_N = delta_N = 0`) while the
//! residual variance is pinned at the start. We shoot on the terminal
//! variance `Sigma_N`, run the backward recursion, and bisect until the
//! implied `Sigma_0` matches the input.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const MAX_SHOOTING_ITERATIONS: usize = 200;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KyleError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("shooting did not converge after {iterations} iterations (best residual {best_residual:e})")]
    NoConvergence { iterations: usize, best_residual: f64 },
    #[error("noise draws have length {got}, horizon is {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("step {n}: {count} admissible roots of the impact equation")]
    RootSelection { n: usize, count: usize },
}

/// Equilibrium constants. `beta` and `lambda` are indexed by step `n = 1..=N`
/// (position `n - 1`); `alpha_v`, `delta_v` and `sigma_sq` by `n = 0..=N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KyleEquilibrium {
    pub beta: Vec<f64>,
    pub lambda: Vec<f64>,
    pub alpha_v: Vec<f64>,
    pub delta_v: Vec<f64>,
    pub sigma_sq: Vec<f64>,
    pub sigma0_sq: f64,
    pub sigma_u_sq: f64,
    pub dt: f64,
    pub horizon: usize,
}

/// A backward pass from a guessed terminal variance.
struct Backward {
    beta: Vec<f64>,
    lambda: Vec<f64>,
    alpha: Vec<f64>,
    delta: Vec<f64>,
    sigma: Vec<f64>,
}

/// Real roots of `a x^3 + b x^2 + c x + d`, found by bisection between the
/// critical points. Handles a vanishing leading coefficient.
fn real_cubic_roots(a: f64, b: f64, c: f64, d: f64) -> Vec<f64> {
    let f = |x: f64| ((a * x + b) * x + c) * x + d;
    if a == 0.0 {
        if b == 0.0 {
            return if c == 0.0 { vec![] } else { vec![-d / c] };
        }
        let disc = c * c - 4.0 * b * d;
        if disc < 0.0 {
            return vec![];
        }
        // Numerically stable quadratic formula.
        let s = -0.5 * (c + c.signum() * disc.sqrt());
        let mut r = if s == 0.0 { vec![0.0] } else { vec![s / b, d / s] };
        r.sort_by(f64::total_cmp);
        return r;
    }
    // Cauchy bound on root magnitude.
    let bound = 1.0 + [b / a, c / a, d / a].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut knots = vec![-bound];
    // f'(x) = 3a x^2 + 2b x + c.
    let disc = b * b - 3.0 * a * c;
    if disc > 0.0 {
        let s = -(b + b.signum() * disc.sqrt());
        let mut crit = [s / (3.0 * a), c / s];
        if s == 0.0 {
            crit = [-(disc.sqrt()) / (3.0 * a), disc.sqrt() / (3.0 * a)];
        }
        crit.sort_by(f64::total_cmp);
        knots.extend(crit.iter().copied().filter(|x| x.abs() < bound));
    }
    knots.push(bound);
    let mut roots = Vec::new();
    for w in knots.windows(2) {
        let (mut lo, mut hi) = (w[0], w[1]);
        let (flo, fhi) = (f(lo), f(hi));
        if flo == 0.0 {
            roots.push(lo);
            continue;
        }
        if flo.signum() == fhi.signum() {
            continue;
        }
        loop {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let fm = f(mid);
            if fm == 0.0 {
                lo = mid;
                hi = mid;
                break;
            }
            if fm.signum() == flo.signum() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        roots.push(0.5 * (lo + hi));
    }
    if f(bound) == 0.0 {
        roots.push(bound);
    }
    roots.dedup();
    roots
}

/// Impact coefficient at a step given the continuation curvature `alpha`
/// and the posterior variance `sigma`. Eliminating beta from the trading
/// rule and the pricing rule leaves
/// `-2 k alpha lambda^3 + 2 k lambda^2 + 2 alpha lambda - 1 = 0`
/// with `k = sigma_u^2 dt / sigma`.
fn step_lambda(n: usize, alpha: f64, sigma: f64, sigma_u_sq: f64, dt: f64) -> Result<f64, KyleError> {
    let k = sigma_u_sq * dt / sigma;
    let roots = real_cubic_roots(-2.0 * k * alpha, 2.0 * k, 2.0 * alpha, -1.0);
    let admissible: Vec<f64> = roots
        .into_iter()
        .filter(|&l| l * (1.0 - alpha * l) > 0.0)
        .collect();
    match admissible.as_slice() {
        [l] => Ok(polish(*l, k, alpha)),
        _ => Err(KyleError::RootSelection { n, count: admissible.len() }),
    }
}

/// Two Newton steps to squeeze out the last ulps of bisection error.
fn polish(mut l: f64, k: f64, alpha: f64) -> f64 {
    for _ in 0..2 {
        let f = ((-2.0 * k * alpha * l + 2.0 * k) * l + 2.0 * alpha) * l - 1.0;
        let df = (-6.0 * k * alpha * l + 4.0 * k) * l + 2.0 * alpha;
        if df == 0.0 {
            break;
        }
        let next = l - f / df;
        if !next.is_finite() || next * (1.0 - alpha * next) <= 0.0 {
            break;
        }
        l = next;
    }
    l
}

fn backward(sigma_n: f64, sigma_u_sq: f64, dt: f64, horizon: usize) -> Result<Backward, KyleError> {
    let mut beta = vec![0.0; horizon];
    let mut lambda = vec![0.0; horizon];
    let mut alpha = vec![0.0; horizon + 1];
    let mut delta = vec![0.0; horizon + 1];
    let mut sigma = vec![0.0; horizon + 1];
    sigma[horizon] = sigma_n;
    for n in (1..=horizon).rev() {
        let a = alpha[n];
        let l = step_lambda(n, a, sigma[n], sigma_u_sq, dt)?;
        let b = (1.0 - 2.0 * a * l) / (2.0 * l * (1.0 - a * l)) / dt;
        beta[n - 1] = b;
        lambda[n - 1] = l;
        alpha[n - 1] = 1.0 / (4.0 * l * (1.0 - a * l));
        delta[n - 1] = delta[n] + a * l * l * sigma_u_sq * dt;
        sigma[n - 1] = sigma[n] / (1.0 - b * l * dt);
    }
    Ok(Backward { beta, lambda, alpha, delta, sigma })
}

/// Solves for the equilibrium constants given the prior variance of `v`.
pub fn solve_kyle(
    sigma0_sq: f64,
    sigma_u_sq: f64,
    dt: f64,
    horizon: usize,
    tol: f64,
) -> Result<KyleEquilibrium, KyleError> {
    for (name, v) in [("sigma0_sq", sigma0_sq), ("sigma_u_sq", sigma_u_sq), ("dt", dt), ("tol", tol)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(KyleError::InvalidInput(format!("{name} must be positive and finite, got {v}")));
        }
    }
    if horizon == 0 {
        return Err(KyleError::InvalidInput("horizon must be at least 1".into()));
    }

    // Each step at most halves the variance, so Sigma_N lies in [Sigma_0 / 2^N, Sigma_0).
    let mut lo = sigma0_sq.ln() - horizon as f64 * std::f64::consts::LN_2;
    let mut hi = sigma0_sq.ln();
    let mut best: Option<(f64, Backward)> = None;
    for _ in 0..MAX_SHOOTING_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        let pass = backward(mid.exp(), sigma_u_sq, dt, horizon)?;
        let implied = pass.sigma[0];
        let mismatch = (implied - sigma0_sq) / sigma0_sq;
        if implied > sigma0_sq {
            hi = mid;
        } else {
            lo = mid;
        }
        if best.as_ref().is_none_or(|(r, _)| mismatch.abs() < *r) {
            best = Some((mismatch.abs(), pass));
        }
        if mismatch.abs() < 0.01 * tol || hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
            break;
        }
    }
    let (mismatch, pass) = best.expect("at least one iteration");
    if mismatch >= tol {
        return Err(KyleError::NoConvergence {
            iterations: MAX_SHOOTING_ITERATIONS,
            best_residual: mismatch,
        });
    }
    let mut sigma = pass.sigma;
    sigma[0] = sigma0_sq;
    let eq = KyleEquilibrium {
        beta: pass.beta,
        lambda: pass.lambda,
        alpha_v: pass.alpha,
        delta_v: pass.delta,
        sigma_sq: sigma,
        sigma0_sq,
        sigma_u_sq,
        dt,
        horizon,
    };
    let r = eq.residuals().max();
    if r >= tol {
        return Err(KyleError::NoConvergence {
            iterations: MAX_SHOOTING_ITERATIONS,
            best_residual: r,
        });
    }
    Ok(eq)
}

/// Max-norm residual of each recursion equation, relative to `max(1, |lhs|)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KyleResiduals {
    pub alpha: f64,
    pub delta: f64,
    pub beta: f64,
    pub lambda: f64,
    pub sigma: f64,
}

impl KyleResiduals {
    pub fn max(&self) -> f64 {
        [self.alpha, self.delta, self.beta, self.lambda, self.sigma]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

fn rel(lhs: f64, rhs: f64) -> f64 {
    (lhs - rhs).abs() / lhs.abs().max(1.0)
}

/// A simulated equilibrium path: prices `p^(0..=N)` and insider orders.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumPath {
    pub prices: Vec<f64>,
    pub orders: Vec<f64>,
    pub flow: Vec<f64>,
}

impl KyleEquilibrium {
    pub fn residuals(&self) -> KyleResiduals {
        let mut r = KyleResiduals::default();
        let dt = self.dt;
        for n in 1..=self.horizon {
            let (b, l) = (self.beta[n - 1], self.lambda[n - 1]);
            let a = self.alpha_v[n];
            r.alpha = r.alpha.max(rel(self.alpha_v[n - 1], 1.0 / (4.0 * l * (1.0 - a * l))));
            r.delta = r.delta.max(rel(
                self.delta_v[n - 1],
                self.delta_v[n] + a * l * l * self.sigma_u_sq * dt,
            ));
            r.beta = r.beta.max(rel(b * dt, (1.0 - 2.0 * a * l) / (2.0 * l * (1.0 - a * l))));
            r.lambda = r.lambda.max(rel(l, b * self.sigma_sq[n] / self.sigma_u_sq));
            r.sigma = r.sigma.max(rel(
                self.sigma_sq[n],
                (1.0 - b * l * dt) * self.sigma_sq[n - 1],
            ));
        }
        r
    }

    /// `lambda (1 - alpha lambda) > 0` at every step.
    pub fn second_order_holds(&self) -> bool {
        (1..=self.horizon).all(|n| {
            let l = self.lambda[n - 1];
            l * (1.0 - self.alpha_v[n] * l) > 0.0
        })
    }

    /// Plays the equilibrium strategies against given noise orders.
    pub fn equilibrium_schedule(&self, v: f64, p0: f64, noise: &[f64]) -> Result<EquilibriumPath, KyleError> {
        if noise.len() != self.horizon {
            return Err(KyleError::LengthMismatch { expected: self.horizon, got: noise.len() });
        }
        let mut prices = Vec::with_capacity(self.horizon + 1);
        let mut orders = Vec::with_capacity(self.horizon);
        let mut flow = Vec::with_capacity(self.horizon);
        let mut p = p0;
        prices.push(p);
        for (n, &u) in noise.iter().enumerate() {
            let x = self.beta[n] * (v - p) * self.dt;
            let q = x + u;
            p += self.lambda[n] * q;
            orders.push(x);
            flow.push(q);
            prices.push(p);
        }
        Ok(EquilibriumPath { prices, orders, flow })
    }

    /// CSV with one row per `n = 0..=N`; `beta` and `lambda` are blank at `n = 0`.
    pub fn write_csv<W: Write>(&self, mut out: W, manifest_hash: &str) -> Result<(), csv::Error> {
        writeln!(out, "# manifest: {manifest_hash}")?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "beta", "lambda", "alpha", "delta", "sigma_sq"])?;
        for n in 0..=self.horizon {
            let (b, l) = if n == 0 {
                (String::new(), String::new())
            } else {
                (self.beta[n - 1].to_string(), self.lambda[n - 1].to_string())
            };
            w.write_record([
                n.to_string(),
                b,
                l,
                self.alpha_v[n].to_string(),
                self.delta_v[n].to_string(),
                self.sigma_sq[n].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn single_period_closed_form() {
        let (s0, su2) = (100.0f64.powi(2), 50.0f64.powi(2));
        let eq = solve_kyle(s0, su2, 1.0, 1, DEFAULT_TOL).unwrap();
        let lambda = s0.sqrt() / (2.0 * su2.sqrt());
        let beta = su2.sqrt() / s0.sqrt();
        assert!((eq.lambda[0] - lambda).abs() < 1e-10);
        assert!((eq.beta[0] - beta).abs() < 1e-10);
        assert!((eq.sigma_sq[1] - s0 / 2.0).abs() < 1e-10 * s0);
        assert_eq!(eq.alpha_v[1], 0.0);
        assert_eq!(eq.delta_v[1], 0.0);
        // Insider's expected profit coefficient 1/(4 lambda).
        assert!((eq.alpha_v[0] - 1.0 / (4.0 * lambda)).abs() < 1e-10);
    }

    #[test]
    fn multi_period_invariants() {
        for n in [1, 2, 5, 20, 60] {
            let eq = solve_kyle(1e4, 2500.0, 1.0, n, DEFAULT_TOL).unwrap();
            assert!(eq.residuals().max() < 1e-10, "N={n}: {:?}", eq.residuals());
            assert!(eq.second_order_holds());
            assert!(eq.sigma_sq.windows(2).all(|w| w[1] < w[0]));
            assert_eq!(eq.alpha_v[n], 0.0);
            assert_eq!(eq.delta_v[n], 0.0);
            for i in 1..=n {
                let ratio = eq.sigma_sq[i] / eq.sigma_sq[i - 1];
                assert!(ratio > 0.0 && ratio < 1.0);
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(solve_kyle(0.0, 1.0, 1.0, 3, 1e-10), Err(KyleError::InvalidInput(_))));
        assert!(matches!(solve_kyle(1.0, -1.0, 1.0, 3, 1e-10), Err(KyleError::InvalidInput(_))));
        assert!(matches!(solve_kyle(1.0, 1.0, 1.0, 0, 1e-10), Err(KyleError::InvalidInput(_))));
        assert!(matches!(solve_kyle(1.0, 1.0, f64::NAN, 3, 1e-10), Err(KyleError::InvalidInput(_))));
    }

    #[test]
    fn cubic_roots_match_factored_form() {
        // (x - 1)(x + 2)(x - 3) = x^3 - 2x^2 - 5x + 6.
        let r = real_cubic_roots(1.0, -2.0, -5.0, 6.0);
        let want = [-2.0, 1.0, 3.0];
        assert_eq!(r.len(), 3);
        for (a, b) in r.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(real_cubic_roots(0.0, 2.0, 0.0, -8.0), vec![-2.0, 2.0]);
        assert_eq!(real_cubic_roots(1.0, 0.0, 1.0, 0.0).len(), 1);
    }

    #[test]
    fn schedule_paths() {
        let eq = solve_kyle(1e4, 2500.0, 1.0, 5, DEFAULT_TOL).unwrap();
        let flat = eq.equilibrium_schedule(1000.0, 1000.0, &[0.0; 5]).unwrap();
        assert!(flat.prices.iter().all(|&p| p == 1000.0));

        let one = solve_kyle(1e4, 2500.0, 1.0, 1, DEFAULT_TOL).unwrap();
        let p = one.equilibrium_schedule(1100.0, 1000.0, &[0.0]).unwrap();
        assert!((p.prices[1] - 1050.0).abs() < 1e-9);

        let path = eq.equilibrium_schedule(1100.0, 1000.0, &[0.0; 5]).unwrap();
        for n in 1..=5 {
            let contraction = 1.0 - eq.lambda[n - 1] * eq.beta[n - 1];
            let e0 = 1100.0 - path.prices[n - 1];
            let e1 = 1100.0 - path.prices[n];
            assert!((e1 - contraction * e0).abs() < 1e-9);
        }
        assert_eq!(
            eq.equilibrium_schedule(0.0, 0.0, &[0.0; 4]).unwrap_err(),
            KyleError::LengthMismatch { expected: 5, got: 4 }
        );
    }

    #[test]
    fn terminal_price_is_a_martingale() {
        let (s0, su2, n) = (1e4, 2500.0, 10);
        let eq = solve_kyle(s0, su2, 1.0, n, DEFAULT_TOL).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let prior = Normal::new(1000.0, s0.sqrt()).unwrap();
        let noise = Normal::new(0.0, su2.sqrt()).unwrap();
        let paths = 10_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut resid = 0.0;
        for _ in 0..paths {
            let v = prior.sample(&mut rng);
            let u: Vec<f64> = (0..n).map(|_| noise.sample(&mut rng)).collect();
            let p = *eq.equilibrium_schedule(v, 1000.0, &u).unwrap().prices.last().unwrap();
            sum += p;
            sum_sq += p * p;
            resid += (v - p).powi(2);
        }
        let mean = sum / paths as f64;
        let se = ((sum_sq / paths as f64 - mean * mean) / paths as f64).sqrt();
        assert!((mean - 1000.0).abs() < 3.0 * se, "mean {mean}, se {se}");
        // The residual variance matches the filter's posterior variance.
        let post = resid / paths as f64;
        assert!((post / eq.sigma_sq[n] - 1.0).abs() < 0.05, "{post} vs {}", eq.sigma_sq[n]);
    }

    #[test]
    fn csv_layout() {
        let eq = solve_kyle(1e4, 2500.0, 1.0, 3, DEFAULT_TOL).unwrap();
        let mut buf = Vec::new();
        eq.write_csv(&mut buf, "x").unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# manifest: x");
        assert_eq!(lines[1], "n,beta,lambda,alpha,delta,sigma_sq");
        assert_eq!(lines.len(), 6);
        assert!(lines[2].starts_with("0,,,"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn lambda_is_scale_covariant(s0 in 1.0f64..1e6, su in 0.1f64..1e3, k in 0.1f64..10.0, n in 1usize..12) {
            let a = solve_kyle(s0, su * su, 1.0, n, DEFAULT_TOL).unwrap();
            let b = solve_kyle(k * k * s0, k * k * su * su, 1.0, n, DEFAULT_TOL).unwrap();
            for (x, y) in a.lambda.iter().zip(&b.lambda) {
                prop_assert!((x - y).abs() <= 1e-8 * x.abs().max(1.0));
            }
        }

        #[test]
        fn recursion_residuals_small(s0 in 1e-2f64..1e6, su2 in 1e-2f64..1e6, dt in 0.05f64..5.0, n in 1usize..40) {
            let eq = solve_kyle(s0, su2, dt, n, DEFAULT_TOL).unwrap();
            prop_assert!(eq.residuals().max() < DEFAULT_TOL);
            prop_assert!(eq.second_order_holds());
            prop_assert!(eq.sigma_sq.windows(2).all(|w| w[1] < w[0]));
        }
    }
}
