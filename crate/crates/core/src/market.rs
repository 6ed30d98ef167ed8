//! Market-clearing mechanics shared by every game variant.
//!
//! Net order flow is split between market makers in proportion to the depth
//! `1 / |lambda|` each one quotes. Because the split is proportional, every
//! trader clears at the same depth-weighted average price regardless of the
//! size of the flow, and maker profits measured against that price sum to
//! zero.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum MarketError {
    #[error("no quotes to clear against")]
    EmptyQuoteSet,
    #[error("impact coefficient of maker {maker_id} is zero or yields infinite depth")]
    ZeroLambda { maker_id: usize },
}

/// A single maker's quote at one step. `price` is in (unticked) cents and
/// `lambda` is the impact coefficient in cents per unit of flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quote {
    pub maker_id: usize,
    pub price: f64,
    pub lambda: f64,
}

impl Quote {
    pub fn new(maker_id: usize, price: f64, lambda: f64) -> Self {
        Self {
            maker_id,
            price,
            lambda,
        }
    }

    /// Depth `1 / |lambda|` in units of volume per cent.
    pub fn depth(&self) -> Result<f64, MarketError> {
        let depth = self.lambda.abs().recip();
        if self.lambda == 0.0 || !depth.is_finite() {
            return Err(MarketError::ZeroLambda {
                maker_id: self.maker_id,
            });
        }
        Ok(depth)
    }
}

/// Inclusive admissible price range in cents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceBounds {
    pub min: f64,
    pub max: f64,
}

impl PriceBounds {
    pub fn new(min: f64, max: f64) -> Self {
        debug_assert!(min < max, "empty price range [{min}, {max}]");
        Self { min, max }
    }

    /// Symmetric cap around the fundamental value, `[(1 - c) v, (1 + c) v]`,
    /// with both ends on the penny grid.
    pub fn around(fundamental: f64, cap_fraction: f64) -> Self {
        Self::new(
            round_half_away(fundamental * (1.0 - cap_fraction)),
            round_half_away(fundamental * (1.0 + cap_fraction)),
        )
    }

    pub fn clip(&self, price: f64) -> f64 {
        price.clamp(self.min, self.max)
    }

    pub fn contains(&self, price: f64) -> bool {
        (self.min..=self.max).contains(&price)
    }
}

/// Signed order flow arriving at the makers in one step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NetOrderFlow {
    pub informed: f64,
    pub liquidity: f64,
    pub noise: f64,
    pub total: f64,
}

impl NetOrderFlow {
    pub fn new(informed: f64, liquidity: f64, noise: f64) -> Self {
        Self {
            informed,
            liquidity,
            noise,
            total: informed + liquidity + noise,
        }
    }

    /// Gross traded volume, `|x_it| + |x_lt| + |u|`.
    pub fn gross_volume(&self) -> f64 {
        self.informed.abs() + self.liquidity.abs() + self.noise.abs()
    }
}

/// One row of the anonymised book.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LobRow {
    pub depth: f64,
    pub price: f64,
}

/// Depth/price pairs sorted by ascending price. Maker identities are dropped
/// on construction; equal prices keep maker order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LobSnapshot {
    rows: Vec<LobRow>,
    prior_vwap: f64,
}

impl LobSnapshot {
    pub fn from_quotes(quotes: &[Quote], prior_vwap: f64) -> Result<Self, MarketError> {
        if quotes.is_empty() {
            return Err(MarketError::EmptyQuoteSet);
        }
        let mut rows = quotes
            .iter()
            .map(|q| {
                Ok(LobRow {
                    depth: q.depth()?,
                    price: q.price,
                })
            })
            .collect::<Result<Vec<_>, MarketError>>()?;
        // `sort_by` is stable, so ties stay in maker order.
        rows.sort_by(|a, b| a.price.total_cmp(&b.price));
        Ok(Self { rows, prior_vwap })
    }

    pub fn rows(&self) -> &[LobRow] {
        &self.rows
    }

    pub fn prior_vwap(&self) -> f64 {
        self.prior_vwap
    }

    /// `[d_1, p_1, ..., d_M, p_M]` in ascending price order.
    pub fn flatten(&self) -> Vec<f64> {
        self.rows.iter().flat_map(|r| [r.depth, r.price]).collect()
    }
}

fn depths(quotes: &[Quote]) -> Result<Vec<f64>, MarketError> {
    if quotes.is_empty() {
        return Err(MarketError::EmptyQuoteSet);
    }
    quotes.iter().map(Quote::depth).collect()
}

fn total_depth(quotes: &[Quote], depths: &[f64]) -> Result<f64, MarketError> {
    let total: f64 = depths.iter().sum();
    if !total.is_finite() || total <= 0.0 {
        return Err(MarketError::ZeroLambda {
            maker_id: quotes[0].maker_id,
        });
    }
    Ok(total)
}

/// Splits `total_flow` between makers proportionally to quoted depth.
pub fn allocate_pro_rata(total_flow: f64, quotes: &[Quote]) -> Result<Vec<f64>, MarketError> {
    let depths = depths(quotes)?;
    let total = total_depth(quotes, &depths)?;
    Ok(depths.iter().map(|d| total_flow * d / total).collect())
}

/// Depth-weighted average of quoted prices. Takes no flow argument: the
/// clearing price does not depend on how much is traded.
pub fn vwap(quotes: &[Quote]) -> Result<f64, MarketError> {
    let depths = depths(quotes)?;
    let total = total_depth(quotes, &depths)?;
    let weighted: f64 = depths.iter().zip(quotes).map(|(d, q)| d * q.price).sum();
    let (lo, hi) = quotes.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), q| {
        (lo.min(q.price), hi.max(q.price))
    });
    // Rounding can push the ratio a hair outside the quote range.
    Ok((weighted / total).clamp(lo, hi))
}

/// `sum sign(lambda_i) / sum 1/|lambda_i|`, the slope of the clearing price in
/// total flow when every maker quotes `prior + lambda_i * q`.
pub fn effective_lambda(quotes: &[Quote]) -> Result<f64, MarketError> {
    let depths = depths(quotes)?;
    let total = total_depth(quotes, &depths)?;
    let signs: f64 = quotes.iter().map(|q| q.lambda.signum()).sum();
    Ok(signs / total)
}

/// Rounds half away from zero to an integer number of cents.
pub fn round_half_away(x: f64) -> f64 {
    x.round()
}

/// Rounds to the penny grid, then clips into the admissible range.
pub fn clamp_and_tick(raw_price: f64, bounds: PriceBounds) -> f64 {
    bounds.clip(round_half_away(raw_price))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn quotes(spec: &[(f64, f64)]) -> Vec<Quote> {
        spec.iter()
            .enumerate()
            .map(|(i, &(p, l))| Quote::new(i, p, l))
            .collect()
    }

    #[test]
    fn pro_rata_examples() {
        let q = quotes(&[(100.0, 1.0), (100.0, 1.0 / 3.0)]);
        let alloc = allocate_pro_rata(100.0, &q).unwrap();
        assert!((alloc[0] - 25.0).abs() < 1e-12);
        assert!((alloc[1] - 75.0).abs() < 1e-12);

        assert_eq!(allocate_pro_rata(0.0, &q).unwrap(), vec![0.0, 0.0]);

        let q = quotes(&[(1.0, 2.0), (2.0, 2.0), (3.0, 2.0)]);
        for a in allocate_pro_rata(60.0, &q).unwrap() {
            assert!((a - 20.0).abs() < 1e-12);
        }
    }

    #[test]
    fn vwap_examples() {
        assert_eq!(vwap(&quotes(&[(100.0, 1.0), (200.0, 1.0)])).unwrap(), 150.0);
        let v = vwap(&quotes(&[(100.0, 1.0), (200.0, 1.0 / 3.0)])).unwrap();
        assert!((v - 175.0).abs() < 1e-12);
        assert_eq!(vwap(&quotes(&[(123.0, 7.5)])).unwrap(), 123.0);
    }

    #[test]
    fn effective_lambda_examples() {
        assert_eq!(effective_lambda(&quotes(&[(0.0, 1.0), (0.0, 1.0)])).unwrap(), 1.0);
        let l = effective_lambda(&quotes(&[(0.0, 1.0), (0.0, 3.0)])).unwrap();
        assert!((l - 1.5).abs() < 1e-12);
        assert_eq!(effective_lambda(&quotes(&[(0.0, -0.7)])).unwrap(), -0.7);
    }

    #[test]
    fn tick_examples() {
        let b = PriceBounds::new(50.0, 150.0);
        assert_eq!(clamp_and_tick(149.4, b), 149.0);
        assert_eq!(clamp_and_tick(207.0, b), 150.0);
        assert_eq!(clamp_and_tick(50.0, b), 50.0);
        assert_eq!(clamp_and_tick(-0.5, PriceBounds::new(-10.0, 10.0)), -1.0);
        assert_eq!(clamp_and_tick(100.5, b), 101.0);
    }

    #[test]
    fn errors() {
        assert_eq!(allocate_pro_rata(1.0, &[]), Err(MarketError::EmptyQuoteSet));
        assert_eq!(vwap(&[]), Err(MarketError::EmptyQuoteSet));
        assert_eq!(
            effective_lambda(&quotes(&[(1.0, 1.0), (1.0, 0.0)])),
            Err(MarketError::ZeroLambda { maker_id: 1 })
        );
        // Depth overflows to infinity.
        assert!(matches!(
            allocate_pro_rata(1.0, &quotes(&[(1.0, 1e-320)])),
            Err(MarketError::ZeroLambda { .. })
        ));
    }

    #[test]
    fn snapshot_sorted_and_stable() {
        let q = quotes(&[(105.0, 1.0), (100.0, 0.5), (105.0, 0.25), (99.0, 2.0)]);
        let snap = LobSnapshot::from_quotes(&q, 101.0).unwrap();
        let prices: Vec<f64> = snap.rows().iter().map(|r| r.price).collect();
        assert_eq!(prices, vec![99.0, 100.0, 105.0, 105.0]);
        // Tie at 105 keeps maker 0 (depth 1) before maker 2 (depth 4).
        assert_eq!(snap.rows()[2].depth, 1.0);
        assert_eq!(snap.rows()[3].depth, 4.0);
        assert_eq!(snap.flatten().len(), 8);
        assert_eq!(snap.prior_vwap(), 101.0);
    }

    #[test]
    fn bounds_around_fundamental() {
        let b = PriceBounds::around(1000.0, 0.5);
        assert_eq!((b.min, b.max), (500.0, 1500.0));
        let b = PriceBounds::around(1033.3, 0.5);
        assert_eq!((b.min, b.max), (517.0, 1550.0));
    }

    fn lambda_strategy() -> impl Strategy<Value = f64> {
        prop_oneof![1e-3f64..10.0, -10.0f64..-1e-3]
    }

    proptest! {
        #[test]
        fn conservation(q in -1e4f64..1e4, lambdas in prop::collection::vec(lambda_strategy(), 1..25)) {
            let qs: Vec<Quote> = lambdas.iter().enumerate().map(|(i, &l)| Quote::new(i, 0.0, l)).collect();
            let sum: f64 = allocate_pro_rata(q, &qs).unwrap().iter().sum();
            prop_assert!((sum - q).abs() <= 1e-9 * q.abs() + 1e-9);
        }

        #[test]
        fn vwap_matches_linear_update(prior in 500.0f64..1500.0, q in -500.0f64..500.0,
                                      lambdas in prop::collection::vec(lambda_strategy(), 1..25)) {
            let qs: Vec<Quote> = lambdas.iter().enumerate()
                .map(|(i, &l)| Quote::new(i, prior + l * q, l)).collect();
            let lhs = vwap(&qs).unwrap();
            let rhs = prior + q * effective_lambda(&qs).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0));
        }

        #[test]
        fn vwap_within_quote_range(prices in prop::collection::vec((0.0f64..2000.0, lambda_strategy()), 1..25)) {
            let qs: Vec<Quote> = prices.iter().enumerate().map(|(i, &(p, l))| Quote::new(i, p, l)).collect();
            let v = vwap(&qs).unwrap();
            let lo = prices.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
            let hi = prices.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(v >= lo && v <= hi);
        }

        #[test]
        fn equal_coefficients_give_that_coefficient(l in lambda_strategy(), m in 1usize..30) {
            let qs: Vec<Quote> = (0..m).map(|i| Quote::new(i, 0.0, l)).collect();
            let eff = effective_lambda(&qs).unwrap();
            prop_assert!((eff - l).abs() <= 1e-12 * l.abs());
        }
    }
}
