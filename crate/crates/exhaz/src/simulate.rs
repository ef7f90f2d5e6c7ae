//! Synthetic dataset generation.
//!
//! Population times come from the life table's piecewise-constant hazard by
//! walking age/year cells with exponential increments; excess times invert
//! the net survival via the probability integral transform,
//!   t_E = Q0(1 - exp(log(1-z) exp(lp_time - lp_haz))) / exp(lp_time),
//! where Q0 is the baseline quantile function.  Observed time is the minimum
//! of the event times, the administrative horizon, and an exponential
//! dropout time.
//!
//! Every record draws from its own RNG stream derived from (seed, index), so
//! generation order (serial or parallel) cannot change the output.

use crate::baseline::{self, BaselineParams};
use crate::error::{Error, Result};
use crate::hmc::derive_rng;
use crate::lifetable::{next_cell_end, LifeTable, Stratum};
use crate::model::{EffectValues, ModelSpec, ParamState, PatientRecord};
use crate::spatial::RegionGraph;
use rand::prelude::*;
use rand_distr::Open01;
use serde::{Deserialize, Serialize};

/// Truth specification for one random-effect level.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TruthEffects {
    None,
    Fixed { values: Vec<f64> },
    Icar { tau: f64 },
    Iid { sigma: f64 },
}

/// Covariate generation scheme: standardized age, uniform deprivation 1-5,
/// exactly balanced sex, configurable region weights, plus optional extra
/// categorical blocks (indicator-coded against level 1).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CovariateGen {
    pub age_mean: f64,
    pub age_sd: f64,
    pub age_min: f64,
    pub age_max: f64,
    pub age_center: f64,
    pub age_scale: f64,
    pub year: u16,
    /// Region sampling weights; empty means uniform.
    pub region_weights: Vec<f64>,
    pub extra_categorical: Vec<CategoricalSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoricalSpec {
    pub name: String,
    pub levels: usize,
    /// Level probabilities (length `levels`); empty means uniform.
    #[serde(default)]
    pub probs: Vec<f64>,
}

impl Default for CovariateGen {
    fn default() -> Self {
        CovariateGen {
            age_mean: 71.0,
            age_sd: 10.0,
            age_min: 30.0,
            age_max: 90.0,
            age_center: 70.0,
            age_scale: 10.0,
            year: 2016,
            region_weights: Vec::new(),
            extra_categorical: Vec::new(),
        }
    }
}

impl CovariateGen {
    /// Names of the generated covariate columns, in order.
    pub fn column_names(&self) -> Vec<String> {
        let mut cols = vec![
            "age_std".to_string(),
            "dep2".to_string(),
            "dep3".to_string(),
            "dep4".to_string(),
            "dep5".to_string(),
            "sex_male".to_string(),
        ];
        for cat in &self.extra_categorical {
            for lvl in 2..=cat.levels {
                cols.push(format!("{}{}", cat.name, lvl));
            }
        }
        cols
    }
}

/// Full simulation configuration.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub n: usize,
    pub spec: ModelSpec,
    pub baseline: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub time_effects: TruthEffects,
    pub hazard_effects: TruthEffects,
    /// Administrative censoring horizon in years.
    pub admin_horizon: f64,
    /// Exponential dropout rate per year (0 disables dropout).
    pub dropout_rate: f64,
    pub seed: u64,
    pub covariates: CovariateGen,
}

/// Latent values retained for every simulated record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordTruth {
    /// Population event time; None encodes +infinity.
    pub t_pop: Option<f64>,
    /// Excess event time; None encodes +infinity.
    pub t_exc: Option<f64>,
    /// Uniform draw used in the PIT inversion.
    pub z: f64,
    /// Dropout censoring time; None encodes +infinity (rate 0).
    pub c_dropout: Option<f64>,
}

/// Everything needed to re-score a simulated dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimTruth {
    pub family: String,
    pub baseline: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub u_time: Vec<f64>,
    pub u_hazard: Vec<f64>,
    pub admin_horizon: f64,
    pub seed: u64,
    pub censoring_rate: f64,
    pub records: Vec<RecordTruth>,
}

impl SimTruth {
    /// Reconstruct the generating parameter state (likelihood-side only; the
    /// effect vectors are treated as fixed values).
    pub fn state(&self) -> Result<ParamState> {
        let family = crate::baseline::BaselineFamily::parse(&self.family)?;
        let baseline = BaselineParams::new(family, &self.baseline)?;
        Ok(ParamState {
            baseline,
            alpha: self.alpha.clone(),
            beta: self.beta.clone(),
            gamma: Vec::new(),
            gamma_scales: Vec::new(),
            time: fixed_effects(&self.u_time),
            hazard: fixed_effects(&self.u_hazard),
        })
    }
}

/// Wrap a fixed effect vector; the scale is a placeholder (only u enters the
/// likelihood-side formulas).
fn fixed_effects(u: &[f64]) -> EffectValues {
    if u.iter().all(|&x| x == 0.0) {
        EffectValues::None
    } else {
        EffectValues::Iid {
            u: u.to_vec(),
            sigma: 1.0,
        }
    }
}

fn exp_draw(rng: &mut impl Rng, rate: f64) -> f64 {
    let u: f64 = rng.sample(Open01);
    -u.ln() / rate
}

/// Draw a population survival time by walking life-table cells from the age
/// at diagnosis, one exponential increment per cell.  Beyond the grid the
/// last clamped rate applies as an open-ended tail; a zero tail rate yields
/// the +infinity sentinel (the record is then censored by construction).
pub fn simulate_population_time(
    table: &LifeTable,
    stratum: &Stratum,
    age: f64,
    rng: &mut impl Rng,
) -> Result<f64> {
    if table.is_zero() {
        return Ok(f64::INFINITY);
    }
    let year0 = stratum.year as f64;
    let mut s = 0.0f64;
    loop {
        let a = age + s;
        let y = year0 + s;
        if table.beyond_grid(a, y) {
            let rate = table.rate(stratum, a, y)?;
            if rate <= 0.0 {
                return Ok(f64::INFINITY);
            }
            return Ok(s + exp_draw(rng, rate));
        }
        let next = next_cell_end(a, s, y);
        let width = next - s;
        let rate = table.rate(stratum, a, y)?;
        if rate > 0.0 {
            let e = exp_draw(rng, rate);
            if e < width {
                return Ok(s + e);
            }
        }
        s = next;
    }
}

/// Invert the net survival at a uniform draw z:
/// S_N(t) = 1 - z  =>  t = Q0(1 - exp(log(1-z) e^{lp_t - lp_h})) / e^{lp_t}.
/// Returns +infinity when the transformed probability rounds to 1.
pub fn simulate_excess_time(
    params: &BaselineParams,
    lp_time: f64,
    lp_haz: f64,
    z: f64,
) -> Result<f64> {
    if !(z > 0.0 && z < 1.0) {
        return Err(Error::Domain(format!("z must lie in (0,1), got {z}")));
    }
    let k = (lp_time - lp_haz).exp();
    let arg = -((-z).ln_1p() * k).exp_m1();
    if arg >= 1.0 {
        return Ok(f64::INFINITY);
    }
    if arg <= 0.0 {
        // underflow of an astronomically early event probability
        return Ok(f64::MIN_POSITIVE);
    }
    match baseline::quantile(params, arg) {
        Ok(t_eff) => Ok(t_eff / lp_time.exp()),
        Err(_) => Ok(f64::INFINITY),
    }
}

fn sample_effects(
    truth: &TruthEffects,
    n_regions: usize,
    graph: Option<&RegionGraph>,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    match truth {
        TruthEffects::None => Ok(vec![0.0; n_regions]),
        TruthEffects::Fixed { values } => {
            if values.len() != n_regions {
                return Err(Error::Dimension(format!(
                    "fixed effect vector has length {}, need {n_regions}",
                    values.len()
                )));
            }
            Ok(values.clone())
        }
        TruthEffects::Iid { sigma } => {
            if *sigma <= 0.0 {
                return Err(Error::Invalid("IID truth sigma must be positive".into()));
            }
            Ok((0..n_regions)
                .map(|_| sigma * rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect())
        }
        TruthEffects::Icar { tau } => {
            if *tau <= 0.0 {
                return Err(Error::Invalid("ICAR truth tau must be positive".into()));
            }
            let g = graph.ok_or_else(|| {
                Error::Invalid("ICAR truth effects require an adjacency graph".into())
            })?;
            if g.n_regions() != n_regions {
                return Err(Error::Dimension("graph size mismatch".into()));
            }
            // draw from the intrinsic distribution restricted to the
            // sum-to-zero subspace via the Laplacian eigenbasis
            let eig = g.laplacian().symmetric_eigen();
            let tol = 1e-9 * n_regions as f64;
            let mut u = vec![0.0; n_regions];
            for (j, &lam) in eig.eigenvalues.iter().enumerate() {
                if lam.abs() <= tol {
                    continue;
                }
                let zj: f64 = rng.sample(rand_distr::StandardNormal);
                let scale = 1.0 / (tau * lam).sqrt();
                for i in 0..n_regions {
                    u[i] += eig.eigenvectors[(i, j)] * zj * scale;
                }
            }
            Ok(u)
        }
    }
}

/// Generate a dataset plus the truth record.  Column names of the covariate
/// blocks follow `CovariateGen::column_names`.
pub fn simulate_dataset(
    cfg: &SimConfig,
    table: &LifeTable,
    graph: Option<&RegionGraph>,
) -> Result<(Vec<PatientRecord>, SimTruth)> {
    if cfg.n == 0 {
        return Err(Error::Invalid("simulation needs n >= 1".into()));
    }
    if !(cfg.admin_horizon > 0.0) {
        return Err(Error::Invalid("admin_horizon must be positive".into()));
    }
    if cfg.dropout_rate < 0.0 {
        return Err(Error::Invalid("dropout_rate must be >= 0".into()));
    }
    let family = cfg.spec.family;
    let params = BaselineParams::new(family, &cfg.baseline)?;
    let cols = cfg.covariates.column_names();
    if cols.len() != cfg.beta.len() {
        return Err(Error::Dimension(format!(
            "covariate generator produces {} hazard columns {:?}, but beta has length {}",
            cols.len(),
            cols,
            cfg.beta.len()
        )));
    }
    if cfg.alpha.len() > cfg.beta.len() {
        return Err(Error::Dimension(
            "alpha cannot be longer than the generated covariate list".into(),
        ));
    }
    let cg = &cfg.covariates;
    if !cg.region_weights.is_empty() && cg.region_weights.len() != cfg.spec.n_regions {
        return Err(Error::Dimension(format!(
            "region_weights has length {}, need {}",
            cg.region_weights.len(),
            cfg.spec.n_regions
        )));
    }

    // effect vectors (shared submodels draw once)
    let mut rng_eff = derive_rng(cfg.seed, u64::MAX - 1);
    let u_time;
    let u_hazard;
    if cfg.spec.submodel.shared_effects() {
        let u = sample_effects(&cfg.hazard_effects, cfg.spec.n_regions, graph, &mut rng_eff)?;
        u_time = u.clone();
        u_hazard = u;
    } else {
        u_time = if cfg.spec.submodel.time_effects_zero() {
            vec![0.0; cfg.spec.n_regions]
        } else {
            sample_effects(&cfg.time_effects, cfg.spec.n_regions, graph, &mut rng_eff)?
        };
        u_hazard = sample_effects(&cfg.hazard_effects, cfg.spec.n_regions, graph, &mut rng_eff)?;
    }

    let region_cdf: Vec<f64> = if cg.region_weights.is_empty() {
        Vec::new()
    } else {
        let total: f64 = cg.region_weights.iter().sum();
        let mut acc = 0.0;
        cg.region_weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect()
    };

    let mut records = Vec::with_capacity(cfg.n);
    let mut truths = Vec::with_capacity(cfg.n);
    let mut n_events = 0usize;
    for i in 0..cfg.n {
        let mut rng = derive_rng(cfg.seed, i as u64);
        let region = if region_cdf.is_empty() {
            rng.random_range(0..cfg.spec.n_regions)
        } else {
            let u: f64 = rng.random();
            region_cdf.iter().position(|&c| u <= c).unwrap_or(cfg.spec.n_regions - 1)
        };
        let sex = (i % 2) as u8; // exactly balanced
        let dep = rng.random_range(1..=5u8);
        let age = loop {
            let a: f64 = cg.age_mean + cg.age_sd * rng.sample::<f64, _>(rand_distr::StandardNormal);
            if a >= cg.age_min && a <= cg.age_max {
                break a;
            }
        };
        let age_std = (age - cg.age_center) / cg.age_scale;
        let mut x = vec![
            age_std,
            f64::from(dep == 2),
            f64::from(dep == 3),
            f64::from(dep == 4),
            f64::from(dep == 5),
            f64::from(sex == 1),
        ];
        for cat in &cg.extra_categorical {
            let lvl = if cat.probs.is_empty() {
                rng.random_range(1..=cat.levels)
            } else {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let total: f64 = cat.probs.iter().sum();
                let mut chosen = cat.levels;
                for (l, p) in cat.probs.iter().enumerate() {
                    acc += p / total;
                    if u <= acc {
                        chosen = l + 1;
                        break;
                    }
                }
                chosen
            };
            for l in 2..=cat.levels {
                x.push(f64::from(lvl == l));
            }
        }
        let x_time: Vec<f64> = x[..cfg.alpha.len()].to_vec();

        let lp_time: f64 =
            x_time.iter().zip(&cfg.alpha).map(|(a, b)| a * b).sum::<f64>() + u_time[region];
        let lp_haz: f64 =
            x.iter().zip(&cfg.beta).map(|(a, b)| a * b).sum::<f64>() + u_hazard[region];

        let stratum = Stratum {
            sex,
            deprivation: dep,
            region: (region + 1) as u16,
            year: cg.year,
        };
        let z: f64 = rng.sample(Open01);
        let t_exc = simulate_excess_time(&params, lp_time, lp_haz, z)?;
        let t_pop = simulate_population_time(table, &stratum, age, &mut rng)?;
        let c_dropout = if cfg.dropout_rate > 0.0 {
            exp_draw(&mut rng, cfg.dropout_rate)
        } else {
            f64::INFINITY
        };
        let t_event = t_pop.min(t_exc);
        let t_cens = cfg.admin_horizon.min(c_dropout);
        let status = u8::from(t_event < t_cens);
        let time = t_event.min(t_cens);
        n_events += status as usize;

        records.push(PatientRecord {
            time,
            status,
            age,
            region,
            x,
            x_time,
            spline: Vec::new(),
            stratum,
        });
        truths.push(RecordTruth {
            t_pop: finite_or_none(t_pop),
            t_exc: finite_or_none(t_exc),
            z,
            c_dropout: finite_or_none(c_dropout),
        });
    }

    let truth = SimTruth {
        family: family.code().to_string(),
        baseline: cfg.baseline.clone(),
        alpha: cfg.alpha.clone(),
        beta: cfg.beta.clone(),
        u_time,
        u_hazard,
        admin_horizon: cfg.admin_horizon,
        seed: cfg.seed,
        censoring_rate: 1.0 - n_events as f64 / cfg.n as f64,
        records: truths,
    };
    Ok((records, truth))
}

fn finite_or_none(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseline::BaselineFamily;
    use crate::lifetable::LifeRow;
    use crate::model::{StructureKind, Submodel};
    use rand_chacha::ChaCha12Rng;

    fn flat_table(rate: f64) -> LifeTable {
        let mut rows = Vec::new();
        for age in 0..=120u16 {
            for sex in 0..2 {
                for dep in 1..=5 {
                    for region in 1..=9u16 {
                        rows.push(LifeRow {
                            age,
                            year: 2016,
                            sex,
                            deprivation: dep,
                            region,
                            rate,
                        });
                    }
                }
            }
        }
        LifeTable::from_rows(&rows).unwrap()
    }

    fn stratum() -> Stratum {
        Stratum {
            sex: 0,
            deprivation: 1,
            region: 1,
            year: 2016,
        }
    }

    fn ks_against_exponential(draws: &mut [f64], rate: f64) -> f64 {
        draws.sort_by(|a, b| a.total_cmp(b));
        let n = draws.len() as f64;
        let mut d = 0.0f64;
        for (i, &t) in draws.iter().enumerate() {
            let f = -(-rate * t).exp_m1();
            d = d.max((f - i as f64 / n).max((i as f64 + 1.0) / n - f));
        }
        d
    }

    #[test]
    fn constant_rate_population_times_are_exponential() {
        let table = flat_table(0.3);
        let s = stratum();
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        let mut draws: Vec<f64> = (0..10_000)
            .map(|_| simulate_population_time(&table, &s, 60.4, &mut rng).unwrap())
            .collect();
        let d = ks_against_exponential(&mut draws, 0.3);
        let crit = 1.6276 / (10_000f64).sqrt();
        assert!(d < crit, "KS D = {d} vs {crit}");
    }

    #[test]
    fn zero_rate_table_gives_infinite_sentinel() {
        let table = flat_table(0.0);
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let t = simulate_population_time(&table, &stratum(), 50.0, &mut rng).unwrap();
        assert!(t.is_infinite());
        let zt = LifeTable::zero();
        let t = simulate_population_time(&zt, &stratum(), 50.0, &mut rng).unwrap();
        assert!(t.is_infinite());
    }

    #[test]
    fn two_cell_boundary_survival_matches_closed_form() {
        // rate l1 on the first (partial) cell of width w1, then l2: the
        // probability of surviving past the boundary is exp(-l1 w1).
        let mut rows = Vec::new();
        for age in 60..=120u16 {
            rows.push(LifeRow {
                age,
                year: 2016,
                sex: 0,
                deprivation: 1,
                region: 1,
                rate: if age == 60 { 0.8 } else { 0.2 },
            });
        }
        let table = LifeTable::from_rows(&rows).unwrap();
        let s = stratum();
        let age = 60.25;
        let w1 = 0.75;
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let n = 40_000;
        let survived = (0..n)
            .filter(|_| simulate_population_time(&table, &s, age, &mut rng).unwrap() > w1)
            .count();
        let expect = (-0.8f64 * w1).exp();
        let got = survived as f64 / n as f64;
        assert!(
            (got - expect).abs() < 3.0 * (expect * (1.0 - expect) / n as f64).sqrt() + 0.005,
            "{got} vs {expect}"
        );
    }

    #[test]
    fn excess_time_with_zero_effects_is_plain_baseline_draw() {
        let p = BaselineParams::log_normal(0.65, 1.15).unwrap();
        for &z in &[0.1, 0.5, 0.93] {
            let t = simulate_excess_time(&p, 0.0, 0.0, z).unwrap();
            let direct = baseline::quantile(&p, z).unwrap();
            assert!((t - direct).abs() < 1e-12 * direct);
        }
    }

    #[test]
    fn ph_shift_gives_scaled_exponential() {
        // constant-hazard baseline (GAM eta, nu=1) with x'beta = log 2:
        // times are Exponential(2/eta).
        let eta = 1.6;
        let p = BaselineParams::gamma(eta, 1.0).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let mut draws: Vec<f64> = (0..10_000)
            .map(|_| {
                let z: f64 = rng.sample(Open01);
                simulate_excess_time(&p, 0.0, 2.0f64.ln(), z).unwrap()
            })
            .collect();
        let d = ks_against_exponential(&mut draws, 2.0 / eta);
        assert!(d < 1.6276 / (10_000f64).sqrt(), "KS D = {d}");
    }

    fn appendix_config(n: usize, horizon: f64, seed: u64) -> SimConfig {
        SimConfig {
            n,
            spec: ModelSpec {
                family: BaselineFamily::LogNormal,
                submodel: Submodel::Sgh,
                time_structure: StructureKind::Icar,
                hazard_structure: StructureKind::Icar,
                n_regions: 9,
                p_time: 1,
                p_hazard: 6,
                spline_blocks: vec![],
                overall_survival: false,
            },
            baseline: vec![0.65, 1.15],
            alpha: vec![1.0],
            beta: vec![1.0, -1.0, -1.0, -1.0, -1.0, 2.0],
            time_effects: TruthEffects::Icar { tau: 10.0 },
            hazard_effects: TruthEffects::Icar { tau: 10.0 },
            admin_horizon: horizon,
            dropout_rate: 0.01,
            seed,
            covariates: CovariateGen::default(),
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = appendix_config(200, 4.0, 11);
        let table = flat_table(0.02);
        let g = crate::io::england_gor_graph();
        let (a, ta) = simulate_dataset(&cfg, &table, Some(&g)).unwrap();
        let (b, tb) = simulate_dataset(&cfg, &table, Some(&g)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta.u_time, tb.u_time);
        let cfg2 = appendix_config(200, 4.0, 12);
        let (c, _) = simulate_dataset(&cfg2, &table, Some(&g)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn all_deaths_without_censoring_sources() {
        let mut cfg = appendix_config(300, 1e9, 21);
        cfg.dropout_rate = 0.0;
        let table = LifeTable::zero();
        let g = crate::io::england_gor_graph();
        let (records, truth) = simulate_dataset(&cfg, &table, Some(&g)).unwrap();
        assert!(records.iter().all(|r| r.status == 1));
        assert_eq!(truth.censoring_rate, 0.0);
        // population times all infinite under the zero table
        assert!(truth.records.iter().all(|t| t.t_pop.is_none()));
    }

    #[test]
    fn pit_round_trip_through_cumulative_excess_hazard() {
        let cfg = appendix_config(500, 4.0, 31);
        let table = flat_table(0.02);
        let g = crate::io::england_gor_graph();
        let (records, truth) = simulate_dataset(&cfg, &table, Some(&g)).unwrap();
        let state = truth.state().unwrap();
        for (rec, rt) in records.iter().zip(&truth.records) {
            let Some(t_exc) = rt.t_exc else { continue };
            let sn = crate::model::net_survival(&state, rec, t_exc).unwrap();
            assert!(
                (sn - (1.0 - rt.z)).abs() < 1e-8,
                "round trip: S_N = {sn}, 1-z = {}",
                1.0 - rt.z
            );
        }
    }

    #[test]
    fn truth_record_rescoring_is_finite() {
        let cfg = appendix_config(120, 4.0, 41);
        let table = flat_table(0.02);
        let g = crate::io::england_gor_graph();
        let (records, truth) = simulate_dataset(&cfg, &table, Some(&g)).unwrap();
        let state = truth.state().unwrap();
        let post = crate::model::Posterior::new(
            &cfg.spec,
            &records,
            &table,
            Some(&g),
            crate::model::HyperParams::default(),
        )
        .unwrap();
        let ll = post.log_likelihood(&state).unwrap();
        assert!(ll.is_finite());
    }

    #[test]
    fn beta_length_mismatch_is_an_error() {
        let mut cfg = appendix_config(10, 4.0, 1);
        cfg.beta = vec![1.0, 2.0];
        let table = flat_table(0.02);
        let g = crate::io::england_gor_graph();
        assert!(simulate_dataset(&cfg, &table, Some(&g)).is_err());
    }
}
