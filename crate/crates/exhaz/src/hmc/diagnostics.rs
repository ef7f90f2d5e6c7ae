//! Convergence diagnostics: split R-hat and effective sample size.
//!
//! Split R-hat halves each chain and compares between- to within-half-chain
//! variance.  ESS combines the split chains' autocorrelations with Geyer's
//! initial monotone positive sequence (paired sums truncated at the first
//! negative pair).

use super::ChainDraws;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Diagnostics {
    pub names: Vec<String>,
    /// Split R-hat per parameter; +inf when within-chain variance vanishes.
    pub rhat: Vec<f64>,
    pub ess: Vec<f64>,
    /// Post-warmup divergent transitions per chain.
    pub divergences: Vec<usize>,
    pub accept_rates: Vec<f64>,
}

impl Diagnostics {
    pub fn from_chains(chains: &[ChainDraws], names: Vec<String>) -> Self {
        let n_params = chains.first().map(|c| c.draws.first().map_or(0, |d| d.len())).unwrap_or(0);
        let mut rhat = Vec::with_capacity(n_params);
        let mut ess_v = Vec::with_capacity(n_params);
        for j in 0..n_params {
            let series: Vec<Vec<f64>> = chains
                .iter()
                .map(|c| c.draws.iter().map(|d| d[j]).collect())
                .collect();
            let refs: Vec<&[f64]> = series.iter().map(|s| s.as_slice()).collect();
            rhat.push(split_rhat(&refs));
            ess_v.push(ess(&refs));
        }
        Diagnostics {
            names,
            rhat,
            ess: ess_v,
            divergences: chains.iter().map(|c| c.divergences).collect(),
            accept_rates: chains.iter().map(|c| c.accept_rate).collect(),
        }
    }

    pub fn max_rhat(&self) -> f64 {
        self.rhat.iter().copied().fold(f64::NAN, f64::max)
    }
}

fn split_halves<'a>(chains: &[&'a [f64]]) -> Vec<&'a [f64]> {
    let mut halves = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        let n = c.len();
        let half = n / 2;
        // drop the middle element for odd lengths
        halves.push(&c[..half]);
        halves.push(&c[n - half..]);
    }
    halves
}

/// Split R-hat.  Returns +inf when the pooled within variance is zero
/// (identical constant chains) and NaN when there is not enough data.
pub fn split_rhat(chains: &[&[f64]]) -> f64 {
    if chains.is_empty() || chains.iter().any(|c| c.len() < 4) {
        return f64::NAN;
    }
    let halves = split_halves(chains);
    let m = halves.len() as f64;
    let n = halves[0].len() as f64;
    let means: Vec<f64> = halves.iter().map(|h| h.iter().sum::<f64>() / n).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b_over_n = means.iter().map(|mu| (mu - grand) * (mu - grand)).sum::<f64>() / (m - 1.0);
    let w = halves
        .iter()
        .zip(&means)
        .map(|(h, mu)| h.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    if w <= 0.0 {
        return if b_over_n > 0.0 { f64::INFINITY } else { f64::INFINITY };
    }
    let var_plus = (n - 1.0) / n * w + b_over_n;
    (var_plus / w).sqrt()
}

/// Effective sample size over split chains.
pub fn ess(chains: &[&[f64]]) -> f64 {
    if chains.is_empty() || chains.iter().any(|c| c.len() < 4) {
        return f64::NAN;
    }
    let halves = split_halves(chains);
    let m = halves.len();
    let n = halves[0].len();
    let means: Vec<f64> = halves
        .iter()
        .map(|h| h.iter().sum::<f64>() / n as f64)
        .collect();
    // biased autocovariances per half-chain
    let acov = |h: &[f64], mu: f64, lag: usize| -> f64 {
        let mut s = 0.0;
        for t in 0..(n - lag) {
            s += (h[t] - mu) * (h[t + lag] - mu);
        }
        s / n as f64
    };
    let grand = means.iter().sum::<f64>() / m as f64;
    let w: f64 = halves
        .iter()
        .zip(&means)
        .map(|(h, mu)| h.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (n as f64 - 1.0))
        .sum::<f64>()
        / m as f64;
    let b_over_n = if m > 1 {
        means.iter().map(|mu| (mu - grand) * (mu - grand)).sum::<f64>() / (m as f64 - 1.0)
    } else {
        0.0
    };
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b_over_n;
    if var_plus <= 0.0 {
        return 0.0;
    }
    let mean_acov_at = |lag: usize| -> f64 {
        halves
            .iter()
            .zip(&means)
            .map(|(h, mu)| acov(h, *mu, lag))
            .sum::<f64>()
            / m as f64
    };
    // rho_t = 1 - (W - mean autocovariance_t) / var_plus, paired Geyer sums
    let max_lag = n - 1;
    let mut tau = 1.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 1;
    while lag + 1 <= max_lag {
        let rho_a = 1.0 - (w - mean_acov_at(lag)) / var_plus;
        let rho_b = 1.0 - (w - mean_acov_at(lag + 1)) / var_plus;
        let mut pair = rho_a + rho_b;
        if pair < 0.0 {
            break;
        }
        // enforce monotone nonincreasing pair sums
        pair = pair.min(prev_pair);
        prev_pair = pair;
        tau += 2.0 * pair;
        lag += 2;
    }
    let total = (m * n) as f64;
    total / tau
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn constant_chains_give_infinite_rhat() {
        let a = vec![2.0; 50];
        let b = vec![2.0; 50];
        let r = split_rhat(&[&a, &b]);
        assert!(r.is_infinite());
    }

    #[test]
    fn independent_normal_draws_have_rhat_near_one() {
        let mut rng = ChaCha12Rng::seed_from_u64(123);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..2000).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect())
            .collect();
        let refs: Vec<&[f64]> = chains.iter().map(|c| c.as_slice()).collect();
        let r = split_rhat(&refs);
        assert!(r >= 1.0 - 1e-8 && r < 1.01, "rhat = {r}");
        let e = ess(&refs);
        // iid draws: ESS close to the sample count
        assert!(e > 4000.0, "ess = {e}");
    }

    #[test]
    fn ar1_chain_has_reduced_ess() {
        // AR(1) with phi = 0.9: true ESS factor is (1-phi)/(1+phi) ~ 0.0526.
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let phi = 0.9f64;
        let innov_sd = (1.0 - phi * phi).sqrt();
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| {
                let mut x = 0.0;
                (0..4000)
                    .map(|_| {
                        let e: f64 = rng.sample(rand_distr::StandardNormal);
                        x = phi * x + innov_sd * e;
                        x
                    })
                    .collect()
            })
            .collect();
        let refs: Vec<&[f64]> = chains.iter().map(|c| c.as_slice()).collect();
        let e = ess(&refs);
        let total = 16000.0;
        let expect = total * (1.0 - phi) / (1.0 + phi);
        assert!(e < 0.25 * total, "ESS must be far below draw count, got {e}");
        assert!(e > 0.2 * expect && e < 3.0 * expect, "ess {e} vs theory {expect}");
    }

    #[test]
    fn shifted_chains_inflate_rhat() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let a: Vec<f64> = (0..500).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..500).map(|_| 3.0 + rng.random_range(-1.0..1.0)).collect();
        let r = split_rhat(&[&a, &b]);
        assert!(r > 1.5, "rhat = {r}");
    }
}
