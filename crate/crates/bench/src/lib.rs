//! Fixtures shared by the benchmarks.

use kyle_marl::{GameConfig, Quote, Variant};

/// `n` quotes spread around 1000 with impacts between 0.3 and 0.7.
pub fn quotes(n: usize) -> Vec<Quote> {
    (0..n)
        .map(|i| {
            let f = i as f64 / n.max(2) as f64;
            Quote::new(i, 990.0 + 20.0 * f, 0.3 + 0.4 * f)
        })
        .collect()
}

/// Default game with every trader type present.
pub fn full_game() -> GameConfig {
    GameConfig { variant: Variant::FullGame, execution_noise_scaling: true, ..GameConfig::default() }
}
