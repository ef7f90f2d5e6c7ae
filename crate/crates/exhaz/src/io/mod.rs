//! Input/output: run configuration, CSV loaders and writers, and the
//! command pipeline behind the CLI.
//!
//! File formats (all CSV is UTF-8 with a header row and '.' decimals):
//! - patients: time,status,age,region,sex,deprivation,year,<covariates...>
//!   with region 1-based and status in {0,1};
//! - life table: age,year,sex,deprivation,region,rate;
//! - adjacency: one "k l" edge per line, 1-based, '#' comments allowed;
//! - draws: one CSV per chain, constrained scale, header = parameter names;
//! - diagnostics/truth/comparison: JSON.

pub mod pipeline;

use crate::error::{Error, Result};
use crate::hmc::{ChainDraws, Diagnostics, SamplerConfig};
use crate::lifetable::{LifeRow, LifeTable, Stratum};
use crate::model::{
    HyperParams, ModelSpec, ParamLayout, ParamState, PatientRecord, StructureKind, Submodel,
};
use crate::simulate::{CovariateGen, TruthEffects};
use crate::spatial::RegionGraph;
use crate::spline::{spline_basis, SplineBasis};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

/// England's nine Government Office Regions (1 North East, 2 North West,
/// 3 Yorkshire and The Humber, 4 East Midlands, 5 West Midlands, 6 East of
/// England, 7 London, 8 South East, 9 South West), 0-based edge list.
pub const ENGLAND_GOR_EDGES: [(usize, usize); 15] = [
    (0, 1),
    (0, 2),
    (1, 2),
    (1, 3),
    (1, 4),
    (2, 3),
    (3, 4),
    (3, 5),
    (3, 7),
    (4, 7),
    (4, 8),
    (5, 6),
    (5, 7),
    (6, 7),
    (7, 8),
];

/// The England GOR adjacency as a ready-made graph fixture.
pub fn england_gor_graph() -> RegionGraph {
    RegionGraph::new(9, &ENGLAND_GOR_EDGES).expect("fixture graph is valid")
}

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub hyperparams: HyperParams,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub simulate: Option<SimulateSection>,
    #[serde(default)]
    pub postprocess: PostprocessSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub patients: PathBuf,
    pub life_table: PathBuf,
    #[serde(default)]
    pub adjacency: Option<PathBuf>,
    pub output: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// LN | LL | PGW | GAM | GG
    pub family: String,
    /// RS-SGH | RS-SGH-I | RS-SGH-II | RS-SPH | RS-SAFT | RS-GH | RS-PH | RS-AFT | RS-AH
    pub submodel: String,
    #[serde(default = "default_none")]
    pub time_structure: String,
    #[serde(default = "default_none")]
    pub hazard_structure: String,
    #[serde(default)]
    pub time_covariates: Vec<String>,
    #[serde(default)]
    pub hazard_covariates: Vec<String>,
    #[serde(default)]
    pub spline: Vec<SplineSection>,
    #[serde(default)]
    pub overall_survival: bool,
    /// Columns standardized (centered and scaled) at ingestion.
    #[serde(default)]
    pub standardize: Vec<String>,
    /// Region count; defaults to the adjacency graph's size.
    #[serde(default)]
    pub n_regions: Option<usize>,
}

fn default_none() -> String {
    "none".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplineSection {
    pub column: String,
    pub knots: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    pub chains: usize,
    pub iterations: usize,
    pub warmup: usize,
    pub target_accept: f64,
    pub max_leapfrog: usize,
}

impl Default for SamplerSection {
    fn default() -> Self {
        SamplerSection {
            chains: 4,
            iterations: 4000,
            warmup: 2000,
            target_accept: 0.8,
            max_leapfrog: 32,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub n: usize,
    pub admin_horizon: f64,
    #[serde(default = "default_dropout")]
    pub dropout_rate: f64,
    pub truth: TruthSection,
    #[serde(default)]
    pub covariates: CovariateGen,
}

fn default_dropout() -> f64 {
    0.01
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthSection {
    pub baseline: Vec<f64>,
    #[serde(default)]
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    #[serde(default = "default_effects")]
    pub time_effects: TruthEffects,
    #[serde(default = "default_effects")]
    pub hazard_effects: TruthEffects,
}

fn default_effects() -> TruthEffects {
    TruthEffects::None
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PostprocessSection {
    /// Net-survival grid: number of equal steps on [0, max observed t].
    pub grid_steps: usize,
    /// Credible-interval mass.
    pub interval: f64,
    /// Posterior draws used for curves (thinned evenly when more are stored).
    pub max_curve_draws: usize,
    /// Posterior draws used for PSIS-LOO.
    pub max_loo_draws: usize,
}

impl Default for PostprocessSection {
    fn default() -> Self {
        PostprocessSection {
            grid_steps: 200,
            interval: 0.95,
            max_curve_draws: 1000,
            max_loo_draws: 2000,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.model.parse_family()?;
        cfg.model.parse_submodel()?;
        cfg.model.parse_structures()?;
        cfg.hyperparams.validate()?;
        Ok(cfg)
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            chains: self.sampler.chains,
            iterations: self.sampler.iterations,
            warmup: self.sampler.warmup,
            target_accept: self.sampler.target_accept,
            max_leapfrog: self.sampler.max_leapfrog,
            seed: self.seed,
        }
    }

    fn require_path(p: &Path, what: &str) -> Result<()> {
        if !p.exists() {
            return Err(Error::Config(format!(
                "{what} path does not exist: {}",
                p.display()
            )));
        }
        Ok(())
    }

    pub fn validate_for_fit(&self) -> Result<()> {
        Self::require_path(&self.paths.patients, "patients")?;
        Self::require_path(&self.paths.life_table, "life table")?;
        if let Some(adj) = &self.paths.adjacency {
            Self::require_path(adj, "adjacency")?;
        }
        Ok(())
    }

    pub fn validate_for_simulate(&self) -> Result<()> {
        if self.simulate.is_none() {
            return Err(Error::Config("config has no [simulate] section".into()));
        }
        Self::require_path(&self.paths.life_table, "life table")?;
        if let Some(adj) = &self.paths.adjacency {
            Self::require_path(adj, "adjacency")?;
        }
        Ok(())
    }
}

impl ModelConfig {
    pub fn parse_family(&self) -> Result<crate::baseline::BaselineFamily> {
        crate::baseline::BaselineFamily::parse(&self.family)
    }

    pub fn parse_submodel(&self) -> Result<Submodel> {
        Submodel::parse(&self.submodel)
    }

    pub fn parse_structures(&self) -> Result<(StructureKind, StructureKind)> {
        Ok((
            StructureKind::parse(&self.time_structure)?,
            StructureKind::parse(&self.hazard_structure)?,
        ))
    }
}

// ---------------------------------------------------------------------------
// Dataset loading
// ---------------------------------------------------------------------------

/// Applied standardization of one column: value -> (value - mean) / sd.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Standardization {
    pub column: String,
    pub mean: f64,
    pub sd: f64,
}

/// Loaded patient data plus the covariate bookkeeping needed downstream.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<PatientRecord>,
    /// All numeric columns of the file, in file order (post-standardization).
    pub columns: Vec<String>,
    pub raw: Vec<Vec<f64>>,
    pub spline_bases: Vec<(String, SplineBasis)>,
    pub standardization: Vec<Standardization>,
    pub spline_block_sizes: Vec<usize>,
}

impl Dataset {
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let idx = self
            .columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Invalid(format!("no column named '{name}'")))?;
        Ok(self.raw.iter().map(|row| row[idx]).collect())
    }

    pub fn max_time(&self) -> f64 {
        self.records.iter().map(|r| r.time).fold(0.0, f64::max)
    }
}

const REQUIRED_COLS: [&str; 7] = ["time", "status", "age", "region", "sex", "deprivation", "year"];

/// Load a patient CSV against a model's covariate declaration.
pub fn load_patients(path: &Path, model: &ModelConfig, n_regions: usize) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
    let pathname = path.display().to_string();
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse {
            path: pathname.clone(),
            line: 1,
            message: e.to_string(),
        })?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let col_idx: HashMap<&str, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.as_str(), i))
        .collect();
    for req in REQUIRED_COLS {
        if !col_idx.contains_key(req) {
            return Err(Error::Parse {
                path: pathname,
                line: 1,
                message: format!("missing required column '{req}'"),
            });
        }
    }
    for name in model
        .hazard_covariates
        .iter()
        .chain(&model.time_covariates)
        .chain(model.spline.iter().map(|s| &s.column))
        .chain(&model.standardize)
    {
        if !col_idx.contains_key(name.as_str()) {
            return Err(Error::Parse {
                path: pathname,
                line: 1,
                message: format!("declared column '{name}' not present in file"),
            });
        }
    }
    for tc in &model.time_covariates {
        if !model.hazard_covariates.contains(tc) {
            return Err(Error::Config(format!(
                "time-level covariate '{tc}' must be a subset of the hazard-level covariates"
            )));
        }
    }

    let mut raw: Vec<Vec<f64>> = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Parse {
            path: pathname.clone(),
            line,
            message: e.to_string(),
        })?;
        if row.len() != headers.len() {
            return Err(Error::Parse {
                path: pathname,
                line,
                message: format!("expected {} fields, got {}", headers.len(), row.len()),
            });
        }
        let mut vals = Vec::with_capacity(row.len());
        for (j, field) in row.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                path: pathname.clone(),
                line,
                message: format!("column '{}': cannot parse '{field}' as a number", headers[j]),
            })?;
            vals.push(v);
        }
        raw.push(vals);
    }

    // standardization (recorded so results can be mapped back)
    let mut standardization = Vec::new();
    for name in &model.standardize {
        let j = col_idx[name.as_str()];
        let n = raw.len() as f64;
        let mean = raw.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = raw.iter().map(|r| (r[j] - mean) * (r[j] - mean)).sum::<f64>() / (n - 1.0);
        let sd = var.sqrt();
        if !(sd > 0.0) {
            return Err(Error::Invalid(format!(
                "cannot standardize constant column '{name}'"
            )));
        }
        for r in raw.iter_mut() {
            r[j] = (r[j] - mean) / sd;
        }
        standardization.push(Standardization {
            column: name.clone(),
            mean,
            sd,
        });
    }

    // spline expansion on the (possibly standardized) columns
    let mut spline_bases = Vec::new();
    let mut spline_rows: Vec<Vec<f64>> = vec![Vec::new(); raw.len()];
    let mut spline_block_sizes = Vec::new();
    for sp in &model.spline {
        let j = col_idx[sp.column.as_str()];
        let col: Vec<f64> = raw.iter().map(|r| r[j]).collect();
        let (basis, rows) = spline_basis(&col, sp.knots)?;
        spline_block_sizes.push(basis.n_cols);
        for (target, row) in spline_rows.iter_mut().zip(rows) {
            target.extend(row);
        }
        spline_bases.push((sp.column.clone(), basis));
    }

    let mut records = Vec::with_capacity(raw.len());
    for (i, row) in raw.iter().enumerate() {
        let line = i + 2;
        let fetch = |name: &str| row[col_idx[name]];
        let time = fetch("time");
        if !(time >= 0.0) || !time.is_finite() {
            return Err(Error::Parse {
                path: pathname.clone(),
                line,
                message: format!("negative or nonfinite time {time}"),
            });
        }
        let status_f = fetch("status");
        if status_f != 0.0 && status_f != 1.0 {
            return Err(Error::Parse {
                path: pathname.clone(),
                line,
                message: format!("status must be 0 or 1, got {status_f}"),
            });
        }
        let region_f = fetch("region");
        let region_1 = region_f as usize;
        if region_f.fract() != 0.0 || region_1 < 1 || region_1 > n_regions {
            return Err(Error::Parse {
                path: pathname.clone(),
                line,
                message: format!("region must be an integer in 1..={n_regions}, got {region_f}"),
            });
        }
        let x: Vec<f64> = model
            .hazard_covariates
            .iter()
            .map(|c| row[col_idx[c.as_str()]])
            .collect();
        let x_time: Vec<f64> = model
            .time_covariates
            .iter()
            .map(|c| row[col_idx[c.as_str()]])
            .collect();
        records.push(PatientRecord {
            time,
            status: status_f as u8,
            age: fetch("age"),
            region: region_1 - 1,
            x,
            x_time,
            spline: spline_rows[i].clone(),
            stratum: Stratum {
                sex: fetch("sex") as u8,
                deprivation: fetch("deprivation") as u8,
                region: region_1 as u16,
                year: fetch("year") as u16,
            },
        });
    }

    Ok(Dataset {
        records,
        columns: headers,
        raw,
        spline_bases,
        standardization,
        spline_block_sizes,
    })
}

/// Write a patient CSV (the simulator's output format).
pub fn write_patients(
    path: &Path,
    records: &[PatientRecord],
    covariate_names: &[String],
) -> Result<()> {
    let mut out = String::new();
    out.push_str("time,status,age,region,sex,deprivation,year");
    for c in covariate_names {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}",
            r.time,
            r.status,
            r.age,
            r.region + 1,
            r.stratum.sex,
            r.stratum.deprivation,
            r.stratum.year
        ));
        for v in &r.x {
            out.push(',');
            out.push_str(&format!("{v}"));
        }
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

/// Life-table CSV: age,year,sex,deprivation,region,rate.
pub fn load_lifetable(path: &Path) -> Result<LifeTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
    let pathname = path.display().to_string();
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::Parse {
            path: pathname.clone(),
            line,
            message: e.to_string(),
        })?;
        if rec.len() != 6 {
            return Err(Error::Parse {
                path: pathname,
                line,
                message: format!("expected 6 fields, got {}", rec.len()),
            });
        }
        let parse = |j: usize| -> Result<f64> {
            rec[j].trim().parse().map_err(|_| Error::Parse {
                path: pathname.clone(),
                line,
                message: format!("cannot parse '{}'", &rec[j]),
            })
        };
        rows.push(LifeRow {
            age: parse(0)? as u16,
            year: parse(1)? as u16,
            sex: parse(2)? as u8,
            deprivation: parse(3)? as u8,
            region: parse(4)? as u16,
            rate: parse(5)?,
        });
    }
    LifeTable::from_rows(&rows)
}

/// Adjacency file: one "k l" pair per line, 1-based region ids.
pub fn load_adjacency(path: &Path) -> Result<RegionGraph> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
    let pathname = path.display().to_string();
    let mut edges = Vec::new();
    let mut max_id = 0usize;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut parts = trimmed.split_whitespace();
        let (a, b) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => {
                return Err(Error::Parse {
                    path: pathname,
                    line: line_no,
                    message: "expected exactly two region ids".into(),
                })
            }
        };
        let pa: usize = a.parse().map_err(|_| Error::Parse {
            path: pathname.clone(),
            line: line_no,
            message: format!("bad region id '{a}'"),
        })?;
        let pb: usize = b.parse().map_err(|_| Error::Parse {
            path: pathname.clone(),
            line: line_no,
            message: format!("bad region id '{b}'"),
        })?;
        if pa == 0 || pb == 0 {
            return Err(Error::Parse {
                path: pathname,
                line: line_no,
                message: "region ids are 1-based".into(),
            });
        }
        max_id = max_id.max(pa).max(pb);
        edges.push((pa - 1, pb - 1));
    }
    if edges.is_empty() {
        return Err(Error::Config(format!("{pathname}: no edges")));
    }
    RegionGraph::new(max_id, &edges)
}

// ---------------------------------------------------------------------------
// Draws persistence
// ---------------------------------------------------------------------------

/// One CSV per chain: header = parameter names plus a trailing log_posterior
/// column, one kept draw per row, constrained scale.
pub fn write_draws(path: &Path, names: &[String], chain: &ChainDraws) -> Result<()> {
    let mut out = String::new();
    out.push_str(&names.join(","));
    out.push_str(",log_posterior\n");
    for (row, lp) in chain.draws.iter().zip(&chain.logp) {
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            out.push_str(&format!("{v}"));
            first = false;
        }
        out.push_str(&format!(",{lp}\n"));
    }
    atomic_write(path, out.as_bytes())
}

/// Reload a draws CSV; returns (names, draws, log_posterior).
pub fn read_draws(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>, Vec<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Config(format!("cannot open {}: {e}", path.display())))?;
    let pathname = path.display().to_string();
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Parse {
            path: pathname.clone(),
            line: 1,
            message: e.to_string(),
        })?
        .iter()
        .map(|s| s.to_string())
        .collect();
    if headers.last().map(String::as_str) != Some("log_posterior") {
        return Err(Error::Parse {
            path: pathname,
            line: 1,
            message: "draw file must end with a log_posterior column".into(),
        });
    }
    let names = headers[..headers.len() - 1].to_vec();
    let mut draws = Vec::new();
    let mut logp = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            path: pathname.clone(),
            line: i + 2,
            message: e.to_string(),
        })?;
        let mut row = Vec::with_capacity(names.len());
        for field in rec.iter().take(names.len()) {
            row.push(field.parse::<f64>().map_err(|_| Error::Parse {
                path: pathname.clone(),
                line: i + 2,
                message: format!("bad float '{field}'"),
            })?);
        }
        logp.push(rec[names.len()].parse::<f64>().map_err(|_| Error::Parse {
            path: pathname.clone(),
            line: i + 2,
            message: "bad log_posterior".into(),
        })?);
        draws.push(row);
    }
    Ok((names, draws, logp))
}

/// Rebuild parameter states from stored constrained draws.
pub fn states_from_draws(
    layout: &ParamLayout,
    spec: &ModelSpec,
    names: &[String],
    draws: &[Vec<f64>],
) -> Result<Vec<ParamState>> {
    if names != layout.names.as_slice() {
        return Err(Error::Invalid(format!(
            "draw file parameter names do not match the model layout \
             (expected {:?}, found {:?})",
            layout.names, names
        )));
    }
    draws
        .iter()
        .map(|row| layout.unpack(row, spec.n_regions))
        .collect()
}

// ---------------------------------------------------------------------------
// Small helpers
// ---------------------------------------------------------------------------

/// Write via a temp file + rename so a failure never leaves a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp~");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all().ok();
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Invalid(format!("JSON encoding failed: {e}")))?;
    atomic_write(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Per-chain sampler metadata stored alongside the diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitMeta {
    pub diagnostics: Diagnostics,
    pub step_sizes: Vec<f64>,
    pub chains: usize,
    pub iterations: usize,
    pub warmup: usize,
    pub seed: u64,
    pub standardization: Vec<Standardization>,
    pub g_gamma: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::icar_scaling_factor;

    #[test]
    fn england_gor_fixture_shape() {
        let g = england_gor_graph();
        assert_eq!(g.n_regions(), 9);
        assert_eq!(g.edges().len(), 15);
        assert_eq!(g.degrees(), vec![2, 4, 3, 5, 4, 3, 2, 5, 2]);
        assert!(icar_scaling_factor(&g).is_ok());
    }

    #[test]
    fn adjacency_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("adj.txt");
        std::fs::write(&p, "# two regions\n1 2\n").unwrap();
        let g = load_adjacency(&p).unwrap();
        assert_eq!(g.n_regions(), 2);
        assert_eq!(g.degrees(), vec![1, 1]);

        std::fs::write(&p, "1 1\n").unwrap();
        assert!(load_adjacency(&p).is_err());

        std::fs::write(&p, "1 2\n3 4\n").unwrap();
        let err = load_adjacency(&p).unwrap_err();
        assert!(err.to_string().contains("disconnected"));
    }

    #[test]
    fn patients_golden_fixture_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("patients.csv");
        std::fs::write(
            &p,
            "time,status,age,region,sex,deprivation,year,age_std,sex_male\n\
             1.5,1,72.0,1,1,3,2016,0.2,1\n\
             0.7,0,65.5,2,0,1,2016,-0.45,0\n\
             3.25,1,80.0,2,1,5,2016,1.0,1\n",
        )
        .unwrap();
        let model = ModelConfig {
            family: "LN".into(),
            submodel: "RS-SGH".into(),
            time_structure: "none".into(),
            hazard_structure: "none".into(),
            time_covariates: vec!["age_std".into()],
            hazard_covariates: vec!["age_std".into(), "sex_male".into()],
            spline: vec![],
            overall_survival: false,
            standardize: vec![],
            n_regions: None,
        };
        let ds = load_patients(&p, &model, 2).unwrap();
        assert_eq!(ds.records.len(), 3);
        assert_eq!(ds.records[0].region, 0);
        assert_eq!(ds.records[1].status, 0);
        assert_eq!(ds.records[2].x, vec![1.0, 1.0]);
        assert_eq!(ds.records[0].x_time, vec![0.2]);

        // write + reload equality
        let out = dir.path().join("copy.csv");
        write_patients(&out, &ds.records, &["age_std".into(), "sex_male".into()]).unwrap();
        let model2 = ModelConfig {
            hazard_covariates: vec!["age_std".into(), "sex_male".into()],
            ..model.clone()
        };
        let ds2 = load_patients(&out, &model2, 2).unwrap();
        assert_eq!(ds.records, ds2.records);
    }

    #[test]
    fn bad_status_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("patients.csv");
        std::fs::write(
            &p,
            "time,status,age,region,sex,deprivation,year\n1.0,2,70,1,0,1,2016\n",
        )
        .unwrap();
        let model = ModelConfig {
            family: "LN".into(),
            submodel: "RS-GH".into(),
            time_structure: "none".into(),
            hazard_structure: "none".into(),
            time_covariates: vec![],
            hazard_covariates: vec![],
            spline: vec![],
            overall_survival: false,
            standardize: vec![],
            n_regions: None,
        };
        let err = load_patients(&p, &model, 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("status"), "{msg}");
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.toml");
        std::fs::write(
            &p,
            "seed = 1\nnot_a_key = 5\n[paths]\npatients='a'\nlife_table='b'\noutput='c'\n\
             [model]\nfamily='LN'\nsubmodel='RS-GH'\n",
        )
        .unwrap();
        let err = RunConfig::load(&p).unwrap_err();
        assert!(err.to_string().contains("not_a_key"), "{err}");
    }
}
