//! Posterior summaries: net-survival curves, relative exceedance
//! probabilities, curve-error metrics, pointwise log-likelihoods, and
//! PSIS-LOO model comparison.

pub mod psis;

pub use psis::{compare_models, psis_loo, ComparisonEntry, ComparisonReport, LooResult};

use crate::error::{Error, Result};
use crate::model::{cum_excess_hazard, ParamState, PatientRecord, Posterior};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// A net-survival curve over a time grid with per-draw values and
/// equal-tailed interval summaries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetSurvivalCurve {
    pub grid: Vec<f64>,
    /// draws x grid matrix of curve values.
    pub per_draw: Vec<Vec<f64>>,
    /// Posterior mean at each grid point.
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Interval mass (e.g. 0.95).
    pub level: f64,
}

/// Which random-effect level a summary refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EffectLevel {
    Time,
    Hazard,
}

impl EffectLevel {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "time" => Ok(EffectLevel::Time),
            "hazard" => Ok(EffectLevel::Hazard),
            other => Err(Error::Invalid(format!(
                "unknown effect level '{other}' (expected 'time' or 'hazard')"
            ))),
        }
    }
}

/// Evenly spaced grid of `steps + 1` points on [0, t_max].
pub fn default_grid(t_max: f64, steps: usize) -> Vec<f64> {
    (0..=steps).map(|i| t_max * i as f64 / steps as f64).collect()
}

/// Linear-interpolation quantile of a sorted slice.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < n {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[n - 1]
    }
}

fn summarize(grid: Vec<f64>, per_draw: Vec<Vec<f64>>, level: f64) -> NetSurvivalCurve {
    let s = per_draw.len();
    let g = grid.len();
    let mut mean = vec![0.0; g];
    let mut lower = vec![0.0; g];
    let mut upper = vec![0.0; g];
    let lo_q = 0.5 * (1.0 - level);
    let hi_q = 1.0 - lo_q;
    let mut col = vec![0.0; s];
    for j in 0..g {
        for (i, row) in per_draw.iter().enumerate() {
            col[i] = row[j];
        }
        mean[j] = col.iter().sum::<f64>() / s as f64;
        col.sort_by(|a, b| a.total_cmp(b));
        lower[j] = quantile_sorted(&col, lo_q);
        upper[j] = quantile_sorted(&col, hi_q);
    }
    NetSurvivalCurve {
        grid,
        per_draw,
        mean,
        lower,
        upper,
        level,
    }
}

/// Net survival for a single covariate profile: per draw, exp(-H_E(t)).
pub fn net_survival_individual(
    states: &[ParamState],
    rec: &PatientRecord,
    grid: &[f64],
    level: f64,
) -> Result<NetSurvivalCurve> {
    check_curve_inputs(states, grid)?;
    let per_draw: Vec<Vec<f64>> = states
        .par_iter()
        .map(|st| {
            grid.iter()
                .map(|&t| Ok((-cum_excess_hazard(st, rec, t)?).exp()))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok(summarize(grid.to_vec(), per_draw, level))
}

/// Region-specific net survival: per draw s, the average over the region's
/// records of S_N(t; x_ij | xi^s, u^s).  Credible bounds are percentiles of
/// those per-draw averages.
pub fn net_survival_region(
    states: &[ParamState],
    data: &[PatientRecord],
    region: usize,
    grid: &[f64],
    level: f64,
) -> Result<NetSurvivalCurve> {
    check_curve_inputs(states, grid)?;
    let members: Vec<&PatientRecord> = data.iter().filter(|r| r.region == region).collect();
    if members.is_empty() {
        return Err(Error::Invalid(format!(
            "region {} has no records",
            region + 1
        )));
    }
    let per_draw = average_curves(states, &members, grid)?;
    Ok(summarize(grid.to_vec(), per_draw, level))
}

/// Marginal (population-average) net survival over all records.
pub fn net_survival_marginal(
    states: &[ParamState],
    data: &[PatientRecord],
    grid: &[f64],
    level: f64,
) -> Result<NetSurvivalCurve> {
    check_curve_inputs(states, grid)?;
    if data.is_empty() {
        return Err(Error::Invalid("population is empty".into()));
    }
    let members: Vec<&PatientRecord> = data.iter().collect();
    let per_draw = average_curves(states, &members, grid)?;
    Ok(summarize(grid.to_vec(), per_draw, level))
}

fn average_curves(
    states: &[ParamState],
    members: &[&PatientRecord],
    grid: &[f64],
) -> Result<Vec<Vec<f64>>> {
    states
        .par_iter()
        .map(|st| {
            let mut acc = vec![0.0; grid.len()];
            for rec in members {
                let (lp_t, lp_h) = st.linear_predictors(rec);
                let a = lp_t.exp();
                let b = (lp_h - lp_t).exp();
                for (j, &t) in grid.iter().enumerate() {
                    let h0 = crate::baseline::cum_hazard(&st.baseline, t * a)?;
                    acc[j] += (-h0 * b).exp();
                }
            }
            let inv = 1.0 / members.len() as f64;
            for v in acc.iter_mut() {
                *v *= inv;
            }
            Ok(acc)
        })
        .collect()
}

fn check_curve_inputs(states: &[ParamState], grid: &[f64]) -> Result<()> {
    if states.is_empty() {
        return Err(Error::Invalid("no posterior draws supplied".into()));
    }
    if grid.is_empty() {
        return Err(Error::Invalid("time grid is empty".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) || grid[0] < 0.0 {
        return Err(Error::Invalid(
            "time grid must be nonnegative and strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Per-region posterior probability that the selected effect exceeds c.
pub fn exceedance_probability(
    states: &[ParamState],
    level: EffectLevel,
    n_regions: usize,
    c: f64,
) -> Result<Vec<f64>> {
    if states.is_empty() {
        return Err(Error::Invalid("no posterior draws supplied".into()));
    }
    let mut counts = vec![0usize; n_regions];
    for st in states {
        let eff = match level {
            EffectLevel::Time => &st.time,
            EffectLevel::Hazard => &st.hazard,
        };
        for (i, cnt) in counts.iter_mut().enumerate() {
            if eff.u_at(i) > c {
                *cnt += 1;
            }
        }
    }
    Ok(counts
        .into_iter()
        .map(|k| k as f64 / states.len() as f64)
        .collect())
}

/// Composite-trapezoid integral of |f - fhat| over the shared grid.
pub fn error_integral(grid: &[f64], f: &[f64], fhat: &[f64]) -> Result<f64> {
    if grid.len() != f.len() || grid.len() != fhat.len() {
        return Err(Error::Dimension(
            "curves must share the evaluation grid".into(),
        ));
    }
    if grid.len() < 2 {
        return Err(Error::Invalid("need at least two grid points".into()));
    }
    let mut acc = 0.0;
    for i in 0..grid.len() - 1 {
        let a = (f[i] - fhat[i]).abs();
        let b = (f[i + 1] - fhat[i + 1]).abs();
        acc += 0.5 * (a + b) * (grid[i + 1] - grid[i]);
    }
    Ok(acc)
}

/// draws x observations matrix of per-record log-likelihood factors.
pub fn pointwise_loglik(post: &Posterior<'_>, states: &[ParamState]) -> Result<Vec<Vec<f64>>> {
    states
        .par_iter()
        .map(|st| post.pointwise_log_lik(st))
        .collect()
}

/// Thin a draw list down to at most `max` evenly spaced states.
pub fn thin_states(states: &[ParamState], max: usize) -> Vec<ParamState> {
    if states.len() <= max || max == 0 {
        return states.to_vec();
    }
    let stride = states.len() as f64 / max as f64;
    (0..max)
        .map(|i| states[(i as f64 * stride) as usize].clone())
        .collect()
}
