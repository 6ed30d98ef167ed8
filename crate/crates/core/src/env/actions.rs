//! Maps policy outputs onto concrete orders and quotes.
//!
//! Under the linear parameterisation the informed trader emits a trading
//! intensity `beta` and each maker an impact coefficient `lambda`; the orders
//! and quotes then follow the Kyle-form rules `x = beta (v - p_prev) tau` and
//! `p_i = p_prev + lambda_i q`. Under the nonlinear parameterisation the
//! outputs are the order size and the quote themselves.

use crate::config::PolicyParam;
use crate::market::{round_half_away, PriceBounds};

/// Informed order before integer rounding, capped at `+-cap`.
pub fn informed_order(
    param: PolicyParam,
    raw: f64,
    fundamental: f64,
    prior_vwap: f64,
    tau: f64,
    cap: f64,
) -> f64 {
    let x = match param {
        PolicyParam::Linear => raw * (fundamental - prior_vwap) * tau,
        PolicyParam::Nonlinear => raw,
    };
    x.clamp(-cap, cap)
}

/// Liquidity order `theta * Q_remaining` with `theta` clipped into `bounds`.
/// Returns `(theta, x)`.
pub fn liquidity_order(raw_theta: f64, remaining: f64, bounds: [f64; 2]) -> (f64, f64) {
    let theta = raw_theta.clamp(bounds[0], bounds[1]);
    (theta, theta * remaining)
}

/// Signed coefficient with magnitude in `[floor, max]`. Zero maps to `+floor`.
pub fn squash_lambda(raw: f64, floor: f64, max: f64) -> f64 {
    let sign = if raw < 0.0 { -1.0 } else { 1.0 };
    sign * raw.abs().clamp(floor, max)
}

/// A maker quote ready for clearing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MakerQuote {
    /// Quote price after clipping into the admissible range (not ticked).
    pub price: f64,
    /// Coefficient whose reciprocal magnitude is the quoted depth.
    pub lambda: f64,
    /// The depth coefficient had to be raised to the floor.
    pub floored: bool,
}

fn floor_coefficient(lambda: f64, fallback_sign: f64, floor: f64) -> (f64, bool) {
    if lambda.is_finite() && lambda.abs() >= floor {
        return (lambda, false);
    }
    let sign = if lambda.is_finite() && lambda != 0.0 {
        lambda.signum()
    } else {
        fallback_sign
    };
    (sign * floor, true)
}

/// Turns one maker's raw output into a clipped quote with a consistent depth.
///
/// When clipping moves a linear quote, the depth coefficient is recomputed as
/// `(p_clipped - p_prev) / q` so the book reflects the quote actually posted.
/// Nonlinear quotes always derive their depth that way.
pub fn maker_quote(
    param: PolicyParam,
    raw: f64,
    prior_vwap: f64,
    flow: f64,
    bounds: PriceBounds,
    lambda_floor: f64,
    lambda_max: f64,
) -> MakerQuote {
    match param {
        PolicyParam::Linear => {
            let lambda = squash_lambda(raw, lambda_floor, lambda_max);
            let unclipped = prior_vwap + lambda * flow;
            let price = bounds.clip(unclipped);
            if price == unclipped || flow == 0.0 {
                return MakerQuote { price, lambda, floored: false };
            }
            let (lambda, floored) =
                floor_coefficient((price - prior_vwap) / flow, lambda.signum(), lambda_floor);
            MakerQuote { price, lambda, floored }
        }
        PolicyParam::Nonlinear => {
            let price = bounds.clip(raw);
            let implied = if flow == 0.0 { f64::NAN } else { (price - prior_vwap) / flow };
            let (lambda, floored) = floor_coefficient(implied, 1.0, lambda_floor);
            MakerQuote { price, lambda, floored }
        }
    }
}

/// Rounds an order to whole units when the game trades integer quantities.
pub fn to_lot(x: f64, integer: bool) -> f64 {
    if integer {
        round_half_away(x)
    } else {
        x
    }
}

/// `beta_hat = x / ((v - p_prev) tau)`; `None` when the mispricing is zero.
pub fn implied_beta(order: f64, fundamental: f64, prior_vwap: f64, tau: f64) -> Option<f64> {
    let denom = (fundamental - prior_vwap) * tau;
    (denom != 0.0).then(|| order / denom)
}

/// `lambda_hat = (p_i - p_prev) / q`; `None` when there was no flow.
pub fn implied_lambda(quote: f64, prior_vwap: f64, flow: f64) -> Option<f64> {
    (flow != 0.0).then(|| (quote - prior_vwap) / flow)
}
