//! Pareto-smoothed importance sampling LOO cross validation.
//!
//! For each observation the raw importance ratios are exp(-loglik) up to a
//! shift; a generalized Pareto distribution is fitted to the top 20% of
//! ratios by the Zhang-Stephens quantile-matching estimator, the tail ratios
//! are replaced by expected order statistics of the fit, and all weights are
//! truncated at the raw maximum.  elpd_i = log( sum w exp(ll) / sum w ).

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Result of a PSIS-LOO evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LooResult {
    /// Total expected log pointwise predictive density.
    pub elpd: f64,
    /// Standard error: sd(pointwise) * sqrt(n).
    pub se: f64,
    /// Per-observation elpd contributions.
    pub pointwise: Vec<f64>,
    /// Per-observation Pareto shape diagnostics; -inf marks a degenerate
    /// (all-equal ratios) fit with unsmoothed weights.
    pub khat: Vec<f64>,
}

impl LooResult {
    /// Observations whose tail fit exceeds the conventional warning
    /// thresholds (0.5 ok-ish, 0.7 bad).
    pub fn k_above(&self, threshold: f64) -> usize {
        self.khat.iter().filter(|k| **k > threshold).count()
    }
}

/// Generalized Pareto fit to exceedances by the Zhang-Stephens
/// quantile-matching estimator.  Returns (khat, sigma); khat is the usual
/// tail-shape xi (positive = heavy tail).
pub fn gpd_fit(sorted_exceedances: &[f64]) -> Option<(f64, f64)> {
    let z = sorted_exceedances;
    let n = z.len();
    if n < 5 {
        return None;
    }
    let z_max = z[n - 1];
    if !(z_max > 0.0) {
        return None;
    }
    let quart = z[((n as f64 / 4.0 + 0.5).floor() as usize).clamp(1, n) - 1];
    if !(quart > 0.0) {
        return None;
    }
    let m = 30 + (n as f64).sqrt().floor() as usize;
    let mut thetas = Vec::with_capacity(m);
    let mut logliks = Vec::with_capacity(m);
    for j in 1..=m {
        let theta = 1.0 / z_max + (1.0 - (m as f64 / (j as f64 - 0.5)).sqrt()) / (3.0 * quart);
        // xi(theta) = mean log1p(-theta z); profile loglik per observation
        let xi = z.iter().map(|&zi| (-theta * zi).ln_1p()).sum::<f64>() / n as f64;
        let l = if theta == 0.0 || xi == 0.0 {
            f64::NEG_INFINITY
        } else {
            (-theta / xi).ln() - xi - 1.0
        };
        thetas.push(theta);
        logliks.push(n as f64 * l);
    }
    let max_l = logliks.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max_l.is_finite() {
        return None;
    }
    let mut wsum = 0.0;
    let mut theta_hat = 0.0;
    for (t, l) in thetas.iter().zip(&logliks) {
        let w = (l - max_l).exp();
        wsum += w;
        theta_hat += w * t;
    }
    theta_hat /= wsum;
    let khat = z.iter().map(|&zi| (-theta_hat * zi).ln_1p()).sum::<f64>() / n as f64;
    let sigma = -khat / theta_hat;
    if !khat.is_finite() || !sigma.is_finite() || sigma <= 0.0 {
        return None;
    }
    Some((khat, sigma))
}

/// GPD quantile with shape k (= xi) and scale sigma.
fn gpd_quantile(p: f64, k: f64, sigma: f64) -> f64 {
    if k.abs() < 1e-9 {
        -sigma * (-p).ln_1p()
    } else {
        sigma * ((-k * (-p).ln_1p()).exp_m1()) / k
    }
}

/// Smooth one observation's log-ratios in place.  Returns the Pareto k-hat
/// (or -inf for a degenerate tail).
pub fn psis_smooth(log_ratios: &mut [f64]) -> f64 {
    let s = log_ratios.len();
    let m = (0.2 * s as f64).floor() as usize;
    if m < 5 {
        return f64::NEG_INFINITY;
    }
    // order of the top-m ratios
    let mut idx: Vec<usize> = (0..s).collect();
    idx.sort_by(|&a, &b| log_ratios[a].total_cmp(&log_ratios[b]));
    let cutpos = s - m;
    let cutoff = log_ratios[idx[cutpos - 1]];
    let max_lr = log_ratios[idx[s - 1]];
    // exceedances on the ratio scale, relative to the cutoff
    let exceed: Vec<f64> = idx[cutpos..]
        .iter()
        .map(|&i| (log_ratios[i] - cutoff).exp_m1() * cutoff.exp().min(f64::MAX))
        .collect();
    // working on the shifted scale: z_i = exp(lr_i - cutoff) - 1 times e^cutoff
    // can overflow for extreme ratios; redo safely relative to the cutoff
    let u = cutoff;
    let z: Vec<f64> = idx[cutpos..]
        .iter()
        .map(|&i| (log_ratios[i] - u).exp() - 1.0)
        .collect();
    let _ = exceed;
    let mut zs = z.clone();
    zs.sort_by(|a, b| a.total_cmp(b));
    if zs[zs.len() - 1] <= 0.0 {
        // all tail ratios equal the cutoff: nothing to smooth
        return f64::NEG_INFINITY;
    }
    let Some((khat, sigma)) = gpd_fit(&zs) else {
        return f64::NEG_INFINITY;
    };
    // replace tail ratios with expected order statistics of the fit,
    // truncated at the raw maximum
    for (rank, &i) in idx[cutpos..].iter().enumerate() {
        let p = (rank as f64 + 0.5) / m as f64;
        let q = 1.0 + gpd_quantile(p, khat, sigma); // ratio / e^u
        let lw = u + q.max(1e-300).ln();
        log_ratios[i] = lw.min(max_lr);
    }
    khat
}

fn log_sum_exp(v: impl Iterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = v.collect();
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// PSIS-LOO from a draws x observations log-likelihood matrix.
pub fn psis_loo(loglik: &[Vec<f64>]) -> Result<LooResult> {
    let s = loglik.len();
    if s < 100 {
        return Err(Error::Invalid(format!(
            "PSIS-LOO needs at least 100 draws, got {s}"
        )));
    }
    let n = loglik[0].len();
    if n == 0 || loglik.iter().any(|row| row.len() != n) {
        return Err(Error::Dimension(
            "ragged or empty log-likelihood matrix".into(),
        ));
    }
    let mut pointwise = Vec::with_capacity(n);
    let mut khat = Vec::with_capacity(n);
    let mut col = vec![0.0; s];
    let mut lw = vec![0.0; s];
    for j in 0..n {
        for i in 0..s {
            col[i] = loglik[i][j];
            lw[i] = -loglik[i][j];
        }
        // shift for stability; the shift cancels in the weighted average
        let shift = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for w in lw.iter_mut() {
            *w -= shift;
        }
        let k = psis_smooth(&mut lw);
        khat.push(k);
        let num = log_sum_exp(lw.iter().zip(&col).map(|(w, l)| w + l));
        let den = log_sum_exp(lw.iter().copied());
        pointwise.push(num - den);
    }
    let elpd: f64 = pointwise.iter().sum();
    let mean = elpd / n as f64;
    let var = pointwise.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / (n as f64 - 1.0);
    let se = (var * n as f64).sqrt();
    Ok(LooResult {
        elpd,
        se,
        pointwise,
        khat,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonEntry {
    pub name: String,
    pub elpd: f64,
    pub se: f64,
    /// elpd difference to the best model (0 for the best).
    pub elpd_diff: f64,
    /// Standard error of the pairwise difference.
    pub diff_se: f64,
    /// Observations with Pareto k-hat above 0.7.
    pub k_above_07: usize,
    /// Observations with Pareto k-hat in (0.5, 0.7].
    pub k_above_05: usize,
}

/// Models sorted by elpd (best first) with pairwise differences to the best.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub entries: Vec<ComparisonEntry>,
}

pub fn compare_models(models: &[(String, LooResult)]) -> Result<ComparisonReport> {
    if models.is_empty() {
        return Err(Error::Invalid("no models to compare".into()));
    }
    let n = models[0].1.pointwise.len();
    if models.iter().any(|(_, l)| l.pointwise.len() != n) {
        return Err(Error::Dimension(
            "models were fitted to different numbers of observations".into(),
        ));
    }
    let mut order: Vec<usize> = (0..models.len()).collect();
    order.sort_by(|&a, &b| models[b].1.elpd.total_cmp(&models[a].1.elpd));
    let best = &models[order[0]].1;
    let mut entries = Vec::with_capacity(models.len());
    for &i in &order {
        let (name, loo) = &models[i];
        let diffs: Vec<f64> = best
            .pointwise
            .iter()
            .zip(&loo.pointwise)
            .map(|(b, o)| o - b)
            .collect();
        let dsum: f64 = diffs.iter().sum();
        let dmean = dsum / n as f64;
        let dvar = if n > 1 {
            diffs.iter().map(|d| (d - dmean) * (d - dmean)).sum::<f64>() / (n as f64 - 1.0)
        } else {
            0.0
        };
        entries.push(ComparisonEntry {
            name: name.clone(),
            elpd: loo.elpd,
            se: loo.se,
            elpd_diff: dsum,
            diff_se: (dvar * n as f64).sqrt(),
            k_above_07: loo.k_above(0.7),
            k_above_05: loo.k_above(0.5) - loo.k_above(0.7),
        });
    }
    Ok(ComparisonReport { entries })
}
