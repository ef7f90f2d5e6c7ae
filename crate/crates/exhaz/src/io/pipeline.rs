//! The simulate -> fit -> summarize -> compare pipeline behind the CLI.
//!
//! Each command validates its inputs fully before writing anything; output
//! files are written atomically.

use super::*;
use crate::hmc::{run_chains, Diagnostics};
use crate::model::Posterior;
use crate::postprocess::{
    self, compare_models, psis_loo, ComparisonReport, EffectLevel, LooResult, NetSurvivalCurve,
};
use crate::simulate::{simulate_dataset, SimConfig};
use std::path::{Path, PathBuf};

/// Everything a fitted run directory contains.
pub const DRAWS_PREFIX: &str = "draws_chain";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const CONFIG_SNAPSHOT: &str = "config_snapshot.toml";
pub const TRUTH_FILE: &str = "truth.json";
pub const PATIENTS_FILE: &str = "patients.csv";

pub struct LoadedInputs {
    pub table: LifeTable,
    pub graph: Option<RegionGraph>,
    pub n_regions: usize,
}

fn load_inputs(cfg: &RunConfig) -> Result<LoadedInputs> {
    let table = load_lifetable(&cfg.paths.life_table)?;
    let graph = match &cfg.paths.adjacency {
        Some(p) => Some(load_adjacency(p)?),
        None => None,
    };
    let n_regions = match (cfg.model.n_regions, &graph) {
        (Some(n), Some(g)) => {
            if n != g.n_regions() {
                return Err(Error::Config(format!(
                    "model.n_regions = {n} but the adjacency graph has {} regions",
                    g.n_regions()
                )));
            }
            n
        }
        (Some(n), None) => n,
        (None, Some(g)) => g.n_regions(),
        (None, None) => {
            return Err(Error::Config(
                "n_regions unknown: provide paths.adjacency or model.n_regions".into(),
            ))
        }
    };
    Ok(LoadedInputs {
        table,
        graph,
        n_regions,
    })
}

/// Build the model spec for a loaded dataset.
pub fn build_spec(cfg: &RunConfig, dataset: &Dataset, n_regions: usize) -> Result<ModelSpec> {
    let (ts, hs) = cfg.model.parse_structures()?;
    let spec = ModelSpec {
        family: cfg.model.parse_family()?,
        submodel: cfg.model.parse_submodel()?,
        time_structure: ts,
        hazard_structure: hs,
        n_regions,
        p_time: cfg.model.time_covariates.len(),
        p_hazard: cfg.model.hazard_covariates.len(),
        spline_blocks: dataset.spline_block_sizes.clone(),
        overall_survival: cfg.model.overall_survival,
    };
    spec.validate()?;
    Ok(spec)
}

pub struct SimulateOutcome {
    pub patients_path: PathBuf,
    pub truth_path: PathBuf,
    pub n: usize,
    pub censoring_rate: f64,
}

pub fn cmd_simulate(cfg: &RunConfig, out_dir: &Path) -> Result<SimulateOutcome> {
    cfg.validate_for_simulate()?;
    let sim = cfg.simulate.as_ref().expect("validated");
    let inputs = load_inputs(cfg)?;
    let (ts, hs) = cfg.model.parse_structures()?;
    let cols = sim.covariates.column_names();
    let spec = ModelSpec {
        family: cfg.model.parse_family()?,
        submodel: cfg.model.parse_submodel()?,
        time_structure: ts,
        hazard_structure: hs,
        n_regions: inputs.n_regions,
        p_time: sim.truth.alpha.len(),
        p_hazard: cols.len(),
        spline_blocks: vec![],
        overall_survival: cfg.model.overall_survival,
    };
    let sim_cfg = SimConfig {
        n: sim.n,
        spec,
        baseline: sim.truth.baseline.clone(),
        alpha: sim.truth.alpha.clone(),
        beta: sim.truth.beta.clone(),
        time_effects: sim.truth.time_effects.clone(),
        hazard_effects: sim.truth.hazard_effects.clone(),
        admin_horizon: sim.admin_horizon,
        dropout_rate: sim.dropout_rate,
        seed: cfg.seed,
        covariates: sim.covariates.clone(),
    };
    let (records, truth) =
        simulate_dataset(&sim_cfg, &inputs.table, inputs.graph.as_ref())?;
    std::fs::create_dir_all(out_dir)?;
    let patients_path = out_dir.join(PATIENTS_FILE);
    write_patients(&patients_path, &records, &cols)?;
    let truth_path = out_dir.join(TRUTH_FILE);
    write_json(&truth_path, &truth)?;
    Ok(SimulateOutcome {
        patients_path,
        truth_path,
        n: records.len(),
        censoring_rate: truth.censoring_rate,
    })
}

pub struct FitOutcome {
    pub run_dir: PathBuf,
    pub diagnostics: Diagnostics,
    pub names: Vec<String>,
}

pub fn cmd_fit(cfg: &RunConfig, config_text: &str, out_dir: &Path) -> Result<FitOutcome> {
    cfg.validate_for_fit()?;
    let inputs = load_inputs(cfg)?;
    let dataset = load_patients(&cfg.paths.patients, &cfg.model, inputs.n_regions)?;
    let spec = build_spec(cfg, &dataset, inputs.n_regions)?;
    let posterior = Posterior::new(
        &spec,
        &dataset.records,
        &inputs.table,
        inputs.graph.as_ref(),
        cfg.hyperparams.clone(),
    )?;
    let sampler_cfg = cfg.sampler_config();
    let (chains, diagnostics) = run_chains(&posterior, &sampler_cfg)?;

    std::fs::create_dir_all(out_dir)?;
    let names = posterior.layout.names.clone();
    for (c, chain) in chains.iter().enumerate() {
        write_draws(&out_dir.join(format!("{DRAWS_PREFIX}{}.csv", c + 1)), &names, chain)?;
    }
    let meta = FitMeta {
        diagnostics: diagnostics.clone(),
        step_sizes: chains.iter().map(|c| c.step_size).collect(),
        chains: sampler_cfg.chains,
        iterations: sampler_cfg.iterations,
        warmup: sampler_cfg.warmup,
        seed: sampler_cfg.seed,
        standardization: dataset.standardization.clone(),
        g_gamma: (posterior.g_gamma() > 0.0).then(|| posterior.g_gamma()),
    };
    write_json(&out_dir.join(DIAGNOSTICS_FILE), &meta)?;
    write_summary(&out_dir.join(SUMMARY_FILE), &names, &chains, &diagnostics)?;
    atomic_write(&out_dir.join(CONFIG_SNAPSHOT), config_text.as_bytes())?;
    Ok(FitOutcome {
        run_dir: out_dir.to_path_buf(),
        diagnostics,
        names,
    })
}

/// Posterior summary table: mean, sd, 2.5/50/97.5 percentiles, R-hat, ESS.
fn write_summary(
    path: &Path,
    names: &[String],
    chains: &[crate::hmc::ChainDraws],
    diag: &Diagnostics,
) -> Result<()> {
    let mut out = String::from("parameter,mean,sd,q2.5,q50,q97.5,rhat,ess\n");
    let total: usize = chains.iter().map(|c| c.draws.len()).sum();
    for (j, name) in names.iter().enumerate() {
        let mut vals: Vec<f64> = Vec::with_capacity(total);
        for c in chains {
            vals.extend(c.draws.iter().map(|d| d[j]));
        }
        let mean = vals.iter().sum::<f64>() / total as f64;
        let var =
            vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (total as f64 - 1.0);
        vals.sort_by(|a, b| a.total_cmp(b));
        let q = |p: f64| {
            let pos = p * (vals.len() - 1) as f64;
            let i = pos.floor() as usize;
            let f = pos - i as f64;
            if i + 1 < vals.len() {
                vals[i] * (1.0 - f) + vals[i + 1] * f
            } else {
                vals[i]
            }
        };
        out.push_str(&format!(
            "{name},{mean},{},{},{},{},{},{}\n",
            var.sqrt(),
            q(0.025),
            q(0.5),
            q(0.975),
            diag.rhat[j],
            diag.ess[j]
        ));
    }
    atomic_write(path, out.as_bytes())
}

/// Load a fitted run back into memory: states on the constrained scale.
pub struct LoadedRun {
    pub cfg: RunConfig,
    pub dataset: Dataset,
    pub table: LifeTable,
    pub graph: Option<RegionGraph>,
    pub spec: ModelSpec,
    pub layout: ParamLayout,
    pub states: Vec<ParamState>,
    pub names: Vec<String>,
}

pub fn load_run(run_dir: &Path) -> Result<LoadedRun> {
    let cfg = RunConfig::load(&run_dir.join(CONFIG_SNAPSHOT))?;
    load_run_with_config(run_dir, cfg)
}

pub fn load_run_with_config(run_dir: &Path, cfg: RunConfig) -> Result<LoadedRun> {
    cfg.validate_for_fit()?;
    let inputs = load_inputs(&cfg)?;
    let dataset = load_patients(&cfg.paths.patients, &cfg.model, inputs.n_regions)?;
    let spec = build_spec(&cfg, &dataset, inputs.n_regions)?;
    let layout = ParamLayout::build(&spec)?;
    let mut states = Vec::new();
    let mut names = Vec::new();
    for c in 1.. {
        let path = run_dir.join(format!("{DRAWS_PREFIX}{c}.csv"));
        if !path.exists() {
            break;
        }
        let (file_names, draws, _logp) = read_draws(&path)?;
        let chunk = states_from_draws(&layout, &spec, &file_names, &draws)?;
        states.extend(chunk);
        names = file_names;
    }
    if states.is_empty() {
        return Err(Error::Config(format!(
            "no draw files found under {}",
            run_dir.display()
        )));
    }
    Ok(LoadedRun {
        cfg,
        dataset,
        table: inputs.table,
        graph: inputs.graph,
        spec,
        layout,
        states,
        names,
    })
}

/// Net-survival level selector for the CLI.
#[derive(Debug, Clone)]
pub enum NetsurvLevel {
    Region,
    Marginal,
}

pub fn cmd_netsurv(
    run: &LoadedRun,
    level: &NetsurvLevel,
    t_points: Option<Vec<f64>>,
    stratify: Option<&str>,
    out_dir: &Path,
) -> Result<PathBuf> {
    let pp = &run.cfg.postprocess;
    let states = postprocess::thin_states(&run.states, pp.max_curve_draws);
    let grid = match t_points {
        Some(ts) => {
            if ts.is_empty() || ts.windows(2).any(|w| w[1] <= w[0]) || ts[0] < 0.0 {
                return Err(Error::Invalid(
                    "--t must be a strictly increasing nonnegative list".into(),
                ));
            }
            ts
        }
        None => postprocess::default_grid(run.dataset.max_time(), pp.grid_steps),
    };
    std::fs::create_dir_all(out_dir)?;
    let mut out = String::from("group,t,mean,lower,upper\n");
    let push_curve = |group: &str, c: &NetSurvivalCurve, out: &mut String| {
        for j in 0..c.grid.len() {
            out.push_str(&format!(
                "{group},{},{},{},{}\n",
                c.grid[j], c.mean[j], c.lower[j], c.upper[j]
            ));
        }
    };
    let file_name;
    match level {
        NetsurvLevel::Region => {
            file_name = match stratify {
                Some(col) => format!("netsurv_region_by_{col}.csv"),
                None => "netsurv_region.csv".to_string(),
            };
            for region in 0..run.spec.n_regions {
                if !run.dataset.records.iter().any(|r| r.region == region) {
                    continue;
                }
                match stratify {
                    None => {
                        let c = postprocess::net_survival_region(
                            &states,
                            &run.dataset.records,
                            region,
                            &grid,
                            pp.interval,
                        )?;
                        push_curve(&format!("region={}", region + 1), &c, &mut out);
                    }
                    Some(col) => {
                        for (label, members) in stratify_records(run, col, Some(region))? {
                            let c = postprocess::net_survival_marginal(
                                &states,
                                &members,
                                &grid,
                                pp.interval,
                            )?;
                            push_curve(
                                &format!("region={};{label}", region + 1),
                                &c,
                                &mut out,
                            );
                        }
                    }
                }
            }
        }
        NetsurvLevel::Marginal => {
            file_name = match stratify {
                Some(col) => format!("netsurv_marginal_by_{col}.csv"),
                None => "netsurv_marginal.csv".to_string(),
            };
            match stratify {
                None => {
                    let c = postprocess::net_survival_marginal(
                        &states,
                        &run.dataset.records,
                        &grid,
                        pp.interval,
                    )?;
                    push_curve("marginal", &c, &mut out);
                }
                Some(col) => {
                    for (label, members) in stratify_records(run, col, None)? {
                        let c = postprocess::net_survival_marginal(
                            &states,
                            &members,
                            &grid,
                            pp.interval,
                        )?;
                        push_curve(&label, &c, &mut out);
                    }
                }
            }
        }
    }
    let path = out_dir.join(file_name);
    atomic_write(&path, out.as_bytes())?;
    Ok(path)
}

/// Group records by the distinct values of a column.
fn stratify_records(
    run: &LoadedRun,
    column: &str,
    region: Option<usize>,
) -> Result<Vec<(String, Vec<PatientRecord>)>> {
    let vals = run.dataset.column(column)?;
    let mut groups: Vec<(f64, Vec<PatientRecord>)> = Vec::new();
    for (rec, &v) in run.dataset.records.iter().zip(&vals) {
        if let Some(r) = region {
            if rec.region != r {
                continue;
            }
        }
        match groups.iter_mut().find(|(g, _)| *g == v) {
            Some((_, members)) => members.push(rec.clone()),
            None => groups.push((v, vec![rec.clone()])),
        }
    }
    groups.sort_by(|a, b| a.0.total_cmp(&b.0));
    if groups.len() > 20 {
        return Err(Error::Invalid(format!(
            "column '{column}' has {} distinct values; stratification needs a categorical column",
            groups.len()
        )));
    }
    Ok(groups
        .into_iter()
        .map(|(v, members)| (format!("{column}={v}"), members))
        .collect())
}

pub fn cmd_exceed(run: &LoadedRun, threshold: f64, out_dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir)?;
    let mut out = String::from("level,region,threshold,probability\n");
    let mut any = false;
    for (level, tag, present) in [
        (
            EffectLevel::Time,
            "time",
            run.spec.resolved_time_structure() != StructureKind::None,
        ),
        (
            EffectLevel::Hazard,
            "hazard",
            run.spec.resolved_hazard_structure() != StructureKind::None,
        ),
    ] {
        if !present {
            continue;
        }
        any = true;
        let p = postprocess::exceedance_probability(
            &run.states,
            level,
            run.spec.n_regions,
            threshold,
        )?;
        for (i, prob) in p.iter().enumerate() {
            out.push_str(&format!("{tag},{},{threshold},{prob}\n", i + 1));
        }
    }
    if !any {
        return Err(Error::Invalid(
            "model has no random effects; nothing to report".into(),
        ));
    }
    let path = out_dir.join("exceedance.csv");
    atomic_write(&path, out.as_bytes())?;
    Ok(path)
}

/// Compute the PSIS-LOO result for one fitted run.
pub fn loo_for_run(run: &LoadedRun) -> Result<LooResult> {
    let states = postprocess::thin_states(&run.states, run.cfg.postprocess.max_loo_draws);
    let posterior = Posterior::new(
        &run.spec,
        &run.dataset.records,
        &run.table,
        run.graph.as_ref(),
        run.cfg.hyperparams.clone(),
    )?;
    let matrix = postprocess::pointwise_loglik(&posterior, &states)?;
    psis_loo(&matrix)
}

pub fn cmd_compare(run_dirs: &[PathBuf], out_path: &Path) -> Result<ComparisonReport> {
    if run_dirs.is_empty() {
        return Err(Error::Config("compare needs at least one run".into()));
    }
    let mut models = Vec::new();
    for dir in run_dirs {
        let run = load_run(dir)?;
        let loo = loo_for_run(&run)?;
        models.push((dir.display().to_string(), loo));
    }
    let report = compare_models(&models)?;
    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    write_json(out_path, &report)?;
    Ok(report)
}

pub struct DiagnoseOutcome {
    pub meta: FitMeta,
    pub ok: bool,
}

pub fn cmd_diagnose(run_dir: &Path, rhat_limit: f64) -> Result<DiagnoseOutcome> {
    let meta: FitMeta = read_json(&run_dir.join(DIAGNOSTICS_FILE))?;
    let ok = meta
        .diagnostics
        .rhat
        .iter()
        .all(|r| r.is_finite() && *r <= rhat_limit);
    Ok(DiagnoseOutcome { meta, ok })
}
