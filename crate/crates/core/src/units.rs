//! Exact integer units for money and time.
//!
//! Budgets and costs are integer micro-dollars, durations integer
//! milliseconds. Memoised dynamic programming keys on `(S, b, h)`, so these
//! must compare exactly.

/// Money in millionths of a US dollar.
pub type MicroUsd = i64;

/// Time in milliseconds.
pub type Millis = i64;

pub const MICROS_PER_USD: f64 = 1_000_000.0;
pub const MILLIS_PER_SECOND: f64 = 1_000.0;

pub fn usd_to_micro(usd: f64) -> MicroUsd {
    (usd * MICROS_PER_USD).round() as MicroUsd
}

pub fn micro_to_usd(amount: MicroUsd) -> f64 {
    amount as f64 / MICROS_PER_USD
}

pub fn secs_to_millis(secs: f64) -> Millis {
    (secs * MILLIS_PER_SECOND).round() as Millis
}

pub fn millis_to_secs(ms: Millis) -> f64 {
    ms as f64 / MILLIS_PER_SECOND
}

/// Cost in micro-dollars of `tokens` output tokens at `price_per_1k` USD per
/// thousand tokens.
pub fn token_cost(tokens: f64, price_per_1k: f64) -> MicroUsd {
    // tokens * price / 1000 USD, times 1e6 micro-dollars per USD
    (tokens * price_per_1k * 1_000.0).round() as MicroUsd
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversions_round_trip() {
        assert_eq!(usd_to_micro(0.05), 50_000);
        assert_eq!(usd_to_micro(20.0), 20_000_000);
        assert_eq!(secs_to_millis(16.4), 16_400);
        assert_eq!(micro_to_usd(1_500_000), 1.5);
        assert_eq!(millis_to_secs(2_500), 2.5);
    }

    #[test]
    fn token_cost_matches_price_per_thousand() {
        // 850 tokens at $0.002 / 1k = $0.0017
        assert_eq!(token_cost(850.0, 0.002), 1_700);
        assert_eq!(token_cost(0.0, 5.0), 0);
    }
}
