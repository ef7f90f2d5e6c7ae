//! Model assembly: sub-model lattice, parameter layout, and the
//! excess-hazard / net-survival formulas shared by likelihood, simulator,
//! and postprocessing.
//!
//! The excess hazard is
//!   h_E(t) = h_0(t exp(lp_time) | theta) exp(lp_haz),
//! with lp_time = x_time'alpha + u_time[region] and
//! lp_haz = s'gamma + x'beta + u_haz[region].  Its cumulative form is closed:
//!   H_E(t) = H_0(t exp(lp_time)) exp(lp_haz - lp_time).
//! The spline block s'gamma is treated as part of the hazard-level linear
//! predictor throughout, so it multiplies H_0 exactly like x'beta.

mod posterior;

pub use posterior::{HyperParams, Posterior};

use crate::baseline::{self, BaselineFamily, BaselineParams};
use crate::error::{Error, Result};
use crate::lifetable::Stratum;
use serde::{Deserialize, Serialize};
use std::ops::Range;

/// One observation.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    /// Observed follow-up time in years.
    pub time: f64,
    /// Vital status: 1 = dead, 0 = censored.
    pub status: u8,
    /// Age at diagnosis in years.
    pub age: f64,
    /// Region index, 0-based.
    pub region: usize,
    /// Hazard-level covariates (length p).
    pub x: Vec<f64>,
    /// Time-level covariates (length p_tilde, a declared subset of x's columns).
    pub x_time: Vec<f64>,
    /// Spline-expanded block (length q, possibly empty).
    pub spline: Vec<f64>,
    /// Life-table stratum key.
    pub stratum: Stratum,
}

impl PatientRecord {
    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        if !(self.time >= 0.0) || !self.time.is_finite() {
            return Err(Error::Invalid(format!(
                "observed time must be finite and >= 0, got {}",
                self.time
            )));
        }
        if self.status > 1 {
            return Err(Error::Invalid(format!(
                "status must be 0 or 1, got {}",
                self.status
            )));
        }
        if self.region >= spec.n_regions {
            return Err(Error::Invalid(format!(
                "region {} out of range for {} regions",
                self.region + 1,
                spec.n_regions
            )));
        }
        if self.x.len() != spec.p_hazard
            || self.x_time.len() != spec.p_time
            || self.spline.len() != spec.q_total()
        {
            return Err(Error::Dimension(format!(
                "covariate lengths ({}, {}, {}) do not match spec ({}, {}, {})",
                self.x.len(),
                self.x_time.len(),
                self.spline.len(),
                spec.p_hazard,
                spec.p_time,
                spec.q_total()
            )));
        }
        Ok(())
    }
}

/// The nine hazard structures derivable from the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Submodel {
    /// Full model: both linear predictors, both effect vectors.
    Sgh,
    /// Time-level effects dropped (u_time = 0).
    SghI,
    /// Both levels share one effect vector (u_time = u_haz).
    SghII,
    /// Spatial proportional hazards: alpha = 0, u_time = 0.
    Sph,
    /// Spatial accelerated failure time: alpha = beta, u_time = u_haz.
    Saft,
    /// General hazard, no random effects.
    Gh,
    /// Proportional hazards: alpha = 0, no random effects.
    Ph,
    /// Accelerated failure time: alpha = beta, no random effects.
    Aft,
    /// Accelerated hazard: beta = 0, no random effects.
    Ah,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlphaMode {
    Free,
    Zero,
    TiedToBeta,
}

impl Submodel {
    pub const ALL: [Submodel; 9] = [
        Submodel::Sgh,
        Submodel::SghI,
        Submodel::SghII,
        Submodel::Sph,
        Submodel::Saft,
        Submodel::Gh,
        Submodel::Ph,
        Submodel::Aft,
        Submodel::Ah,
    ];

    pub fn code(&self) -> &'static str {
        match self {
            Submodel::Sgh => "RS-SGH",
            Submodel::SghI => "RS-SGH-I",
            Submodel::SghII => "RS-SGH-II",
            Submodel::Sph => "RS-SPH",
            Submodel::Saft => "RS-SAFT",
            Submodel::Gh => "RS-GH",
            Submodel::Ph => "RS-PH",
            Submodel::Aft => "RS-AFT",
            Submodel::Ah => "RS-AH",
        }
    }

    pub fn parse(code: &str) -> Result<Self> {
        Submodel::ALL
            .iter()
            .copied()
            .find(|m| m.code() == code)
            .ok_or_else(|| Error::Invalid(format!("unknown submodel '{code}'")))
    }

    /// Whether random effects are allowed at all.
    pub fn effects_allowed(&self) -> bool {
        matches!(
            self,
            Submodel::Sgh | Submodel::SghI | Submodel::SghII | Submodel::Sph | Submodel::Saft
        )
    }

    /// Time- and hazard-level effects collapse to a single shared vector.
    pub fn shared_effects(&self) -> bool {
        matches!(self, Submodel::SghII | Submodel::Saft)
    }

    /// Time-level effects are structurally zero.
    pub fn time_effects_zero(&self) -> bool {
        matches!(self, Submodel::SghI | Submodel::Sph) || !self.effects_allowed()
    }

    pub fn alpha_mode(&self) -> AlphaMode {
        match self {
            Submodel::Sph | Submodel::Ph => AlphaMode::Zero,
            Submodel::Saft | Submodel::Aft => AlphaMode::TiedToBeta,
            _ => AlphaMode::Free,
        }
    }

    pub fn beta_zero(&self) -> bool {
        matches!(self, Submodel::Ah)
    }
}

/// Random-effect structure selector (hyperparameters live in the state).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StructureKind {
    None,
    Iid,
    Icar,
    Bym2,
}

impl StructureKind {
    pub fn code(&self) -> &'static str {
        match self {
            StructureKind::None => "none",
            StructureKind::Iid => "IID",
            StructureKind::Icar => "ICAR",
            StructureKind::Bym2 => "BYM2",
        }
    }

    pub fn parse(code: &str) -> Result<Self> {
        match code {
            "none" | "None" | "NONE" | "---" => Ok(StructureKind::None),
            "IID" | "iid" => Ok(StructureKind::Iid),
            "ICAR" | "icar" => Ok(StructureKind::Icar),
            "BYM2" | "bym2" => Ok(StructureKind::Bym2),
            other => Err(Error::Invalid(format!(
                "unknown effect structure '{other}' (expected none, IID, ICAR, or BYM2)"
            ))),
        }
    }
}

/// Full model specification.  The sub-model constraints hold by construction:
/// resolved accessors apply them on top of the requested structures.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub family: BaselineFamily,
    pub submodel: Submodel,
    pub time_structure: StructureKind,
    pub hazard_structure: StructureKind,
    pub n_regions: usize,
    pub p_time: usize,
    pub p_hazard: usize,
    /// Sizes q_l of the spline blocks (empty when no spline covariates).
    pub spline_blocks: Vec<usize>,
    /// When set, the population hazard is forced to zero (overall survival).
    pub overall_survival: bool,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_regions == 0 {
            return Err(Error::Invalid("n_regions must be >= 1".into()));
        }
        if self.submodel.alpha_mode() == AlphaMode::TiedToBeta && self.p_time != self.p_hazard {
            return Err(Error::Invalid(format!(
                "{} ties alpha to beta, so time- and hazard-level covariates must coincide \
                 (got {} vs {})",
                self.submodel.code(),
                self.p_time,
                self.p_hazard
            )));
        }
        if self.submodel.shared_effects() && self.time_structure != self.hazard_structure {
            return Err(Error::Invalid(format!(
                "{} shares one effect vector; time and hazard structures must match",
                self.submodel.code()
            )));
        }
        if self.spline_blocks.iter().any(|&q| q == 0) {
            return Err(Error::Invalid("empty spline block".into()));
        }
        Ok(())
    }

    pub fn q_total(&self) -> usize {
        self.spline_blocks.iter().sum()
    }

    /// Structure of the time-level effects after sub-model constraints.
    pub fn resolved_time_structure(&self) -> StructureKind {
        if self.submodel.time_effects_zero() {
            StructureKind::None
        } else if self.submodel.shared_effects() {
            self.resolved_hazard_structure()
        } else {
            self.time_structure
        }
    }

    /// Structure of the hazard-level effects after sub-model constraints.
    pub fn resolved_hazard_structure(&self) -> StructureKind {
        if self.submodel.effects_allowed() {
            self.hazard_structure
        } else {
            StructureKind::None
        }
    }

    pub fn needs_graph(&self) -> bool {
        matches!(
            self.resolved_time_structure(),
            StructureKind::Icar | StructureKind::Bym2
        ) || matches!(
            self.resolved_hazard_structure(),
            StructureKind::Icar | StructureKind::Bym2
        )
    }
}

/// How one unconstrained coordinate maps to its constrained value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Identity,
    Log,
    Logit,
}

impl Transform {
    #[inline]
    pub fn constrain(&self, z: f64) -> f64 {
        match self {
            Transform::Identity => z,
            Transform::Log => z.exp(),
            Transform::Logit => crate::special::sigmoid(z),
        }
    }

    #[inline]
    pub fn unconstrain(&self, x: f64) -> f64 {
        match self {
            Transform::Identity => x,
            Transform::Log => x.ln(),
            Transform::Logit => (x / (1.0 - x)).ln(),
        }
    }

    /// d constrained / d unconstrained.
    #[inline]
    pub fn dconstrain(&self, x: f64) -> f64 {
        match self {
            Transform::Identity => 1.0,
            Transform::Log => x,
            Transform::Logit => x * (1.0 - x),
        }
    }

    /// log |d constrained / d unconstrained| expressed through the
    /// constrained value.
    #[inline]
    pub fn log_jacobian(&self, x: f64) -> f64 {
        match self {
            Transform::Identity => 0.0,
            Transform::Log => x.ln(),
            Transform::Logit => x.ln() + (-x).ln_1p(),
        }
    }

    /// d log-Jacobian / d unconstrained coordinate.
    #[inline]
    pub fn dlog_jacobian(&self, x: f64) -> f64 {
        match self {
            Transform::Identity => 0.0,
            Transform::Log => 1.0,
            Transform::Logit => 1.0 - 2.0 * x,
        }
    }
}

/// Coordinate ranges of one effect block within the parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EffectLayout {
    None,
    /// IID effects: u plus sigma (stored constrained, sampled on log scale).
    Iid { u: Range<usize>, scale: usize },
    /// ICAR effects: u plus tau.
    Icar { u: Range<usize>, scale: usize },
    /// BYM2 latent pair plus (sigma, rho).
    Bym2 {
        v: Range<usize>,
        s: Range<usize>,
        sigma: usize,
        rho: usize,
    },
}

/// Coordinate map from the flat parameter vector to model quantities.
///
/// The same layout describes both the unconstrained (sampling) vector and the
/// constrained (reporting) vector; `transforms` converts between them
/// elementwise.
#[derive(Debug, Clone)]
pub struct ParamLayout {
    pub family: BaselineFamily,
    pub baseline: Range<usize>,
    /// None when alpha is structurally zero or tied to beta.
    pub alpha: Option<Range<usize>>,
    pub tied_alpha: bool,
    /// None when beta is structurally zero.
    pub beta: Option<Range<usize>>,
    pub gamma: Range<usize>,
    pub gamma_scales: Range<usize>,
    pub time: EffectLayout,
    pub hazard: EffectLayout,
    pub shared_effects: bool,
    pub dim: usize,
    pub names: Vec<String>,
    pub transforms: Vec<Transform>,
}

impl ParamLayout {
    pub fn build(spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        let mut names = Vec::new();
        let mut transforms = Vec::new();
        let push = |name: String, tr: Transform, names: &mut Vec<String>, trs: &mut Vec<Transform>| {
            names.push(name);
            trs.push(tr);
        };

        let arity = spec.family.arity();
        let baseline = 0..arity;
        for (i, &pname) in spec.family.param_names().iter().enumerate() {
            let tr = if spec.family.param_positive()[i] {
                Transform::Log
            } else {
                Transform::Identity
            };
            push(pname.to_string(), tr, &mut names, &mut transforms);
        }

        let mut cursor = arity;
        let alpha_mode = spec.submodel.alpha_mode();
        let alpha = if alpha_mode == AlphaMode::Free && spec.p_time > 0 {
            let r = cursor..cursor + spec.p_time;
            for j in 0..spec.p_time {
                push(format!("alpha[{}]", j + 1), Transform::Identity, &mut names, &mut transforms);
            }
            cursor += spec.p_time;
            Some(r)
        } else {
            None
        };
        let beta = if !spec.submodel.beta_zero() && spec.p_hazard > 0 {
            let r = cursor..cursor + spec.p_hazard;
            for j in 0..spec.p_hazard {
                push(format!("beta[{}]", j + 1), Transform::Identity, &mut names, &mut transforms);
            }
            cursor += spec.p_hazard;
            Some(r)
        } else {
            None
        };
        let q = spec.q_total();
        let gamma = cursor..cursor + q;
        for j in 0..q {
            push(format!("gamma[{}]", j + 1), Transform::Identity, &mut names, &mut transforms);
        }
        cursor += q;
        let n_blocks = spec.spline_blocks.len();
        let gamma_scales = cursor..cursor + n_blocks;
        for k in 0..n_blocks {
            push(format!("sigma_gamma[{}]", k + 1), Transform::Log, &mut names, &mut transforms);
        }
        cursor += n_blocks;

        let shared = spec.submodel.shared_effects()
            && spec.resolved_hazard_structure() != StructureKind::None;
        let build_block = |kind: StructureKind,
                               suffix: &str,
                               cursor: &mut usize,
                               names: &mut Vec<String>,
                               trs: &mut Vec<Transform>| {
            let r = spec.n_regions;
            match kind {
                StructureKind::None => EffectLayout::None,
                StructureKind::Iid => {
                    let u = *cursor..*cursor + r;
                    for i in 0..r {
                        push(format!("u_{suffix}[{}]", i + 1), Transform::Identity, names, trs);
                    }
                    let scale = *cursor + r;
                    push(format!("sigma_{suffix}"), Transform::Log, names, trs);
                    *cursor += r + 1;
                    EffectLayout::Iid { u, scale }
                }
                StructureKind::Icar => {
                    let u = *cursor..*cursor + r;
                    for i in 0..r {
                        push(format!("u_{suffix}[{}]", i + 1), Transform::Identity, names, trs);
                    }
                    let scale = *cursor + r;
                    push(format!("tau_{suffix}"), Transform::Log, names, trs);
                    *cursor += r + 1;
                    EffectLayout::Icar { u, scale }
                }
                StructureKind::Bym2 => {
                    let v = *cursor..*cursor + r;
                    for i in 0..r {
                        push(format!("v_{suffix}[{}]", i + 1), Transform::Identity, names, trs);
                    }
                    let s = *cursor + r..*cursor + 2 * r;
                    for i in 0..r {
                        push(format!("s_{suffix}[{}]", i + 1), Transform::Identity, names, trs);
                    }
                    let sigma = *cursor + 2 * r;
                    push(format!("sigma_{suffix}"), Transform::Log, names, trs);
                    let rho = *cursor + 2 * r + 1;
                    push(format!("rho_{suffix}"), Transform::Logit, names, trs);
                    *cursor += 2 * r + 2;
                    EffectLayout::Bym2 { v, s, sigma, rho }
                }
            }
        };

        let (time, hazard) = if shared {
            let blk = build_block(
                spec.resolved_hazard_structure(),
                "shared",
                &mut cursor,
                &mut names,
                &mut transforms,
            );
            (blk.clone(), blk)
        } else {
            let t = build_block(
                spec.resolved_time_structure(),
                "time",
                &mut cursor,
                &mut names,
                &mut transforms,
            );
            let h = build_block(
                spec.resolved_hazard_structure(),
                "haz",
                &mut cursor,
                &mut names,
                &mut transforms,
            );
            (t, h)
        };

        Ok(ParamLayout {
            family: spec.family,
            baseline,
            alpha,
            tied_alpha: alpha_mode == AlphaMode::TiedToBeta,
            beta,
            gamma,
            gamma_scales,
            time,
            hazard,
            shared_effects: shared,
            dim: cursor,
            names,
            transforms,
        })
    }

    /// Slots receiving the time-level covariate gradient (beta's when tied).
    pub fn alpha_slots(&self) -> Option<Range<usize>> {
        if self.tied_alpha {
            self.beta.clone()
        } else {
            self.alpha.clone()
        }
    }

    pub fn to_constrained(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.transforms)
            .map(|(&zi, tr)| tr.constrain(zi))
            .collect()
    }

    pub fn to_unconstrained(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.transforms)
            .map(|(&xi, tr)| tr.unconstrain(xi))
            .collect()
    }

    /// Total log |dx/dz| evaluated at constrained values x.
    pub fn log_jacobian(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.transforms)
            .map(|(&xi, tr)| tr.log_jacobian(xi))
            .sum()
    }

    /// Unpack constrained values into a structured state.
    pub fn unpack(&self, x: &[f64], n_regions: usize) -> Result<ParamState> {
        if x.len() != self.dim {
            return Err(Error::Dimension(format!(
                "parameter vector has length {}, layout needs {}",
                x.len(),
                self.dim
            )));
        }
        let baseline = BaselineParams::new(self.family, &x[self.baseline.clone()])?;
        let beta = match &self.beta {
            Some(r) => x[r.clone()].to_vec(),
            None => vec![0.0; 0],
        };
        let alpha = if self.tied_alpha {
            beta.clone()
        } else {
            match &self.alpha {
                Some(r) => x[r.clone()].to_vec(),
                None => Vec::new(),
            }
        };
        let gamma = x[self.gamma.clone()].to_vec();
        let gamma_scales = x[self.gamma_scales.clone()].to_vec();
        let hazard = unpack_effects(&self.hazard, x, n_regions)?;
        let time = if self.shared_effects {
            hazard.clone()
        } else {
            unpack_effects(&self.time, x, n_regions)?
        };
        Ok(ParamState {
            baseline,
            alpha,
            beta,
            gamma,
            gamma_scales,
            time,
            hazard,
        })
    }
}

fn unpack_effects(layout: &EffectLayout, x: &[f64], n_regions: usize) -> Result<EffectValues> {
    Ok(match layout {
        EffectLayout::None => EffectValues::None,
        EffectLayout::Iid { u, scale } => EffectValues::Iid {
            u: x[u.clone()].to_vec(),
            sigma: x[*scale],
        },
        EffectLayout::Icar { u, scale } => EffectValues::Icar {
            u: x[u.clone()].to_vec(),
            tau: x[*scale],
        },
        EffectLayout::Bym2 { v, s, sigma, rho } => {
            let vv = x[v.clone()].to_vec();
            let ss = x[s.clone()].to_vec();
            let sg = x[*sigma];
            let rh = x[*rho];
            let u = crate::spatial::bym2_combine(&vv, &ss, sg, rh)?;
            debug_assert_eq!(u.len(), n_regions);
            EffectValues::Bym2 {
                v: vv,
                s: ss,
                sigma: sg,
                rho: rh,
                u,
            }
        }
    })
}

/// Random-effect values at one parameter point.
#[derive(Debug, Clone, PartialEq)]
pub enum EffectValues {
    None,
    Iid { u: Vec<f64>, sigma: f64 },
    Icar { u: Vec<f64>, tau: f64 },
    Bym2 {
        v: Vec<f64>,
        s: Vec<f64>,
        sigma: f64,
        rho: f64,
        u: Vec<f64>,
    },
}

impl EffectValues {
    #[inline]
    pub fn u_at(&self, region: usize) -> f64 {
        match self {
            EffectValues::None => 0.0,
            EffectValues::Iid { u, .. } | EffectValues::Icar { u, .. } => u[region],
            EffectValues::Bym2 { u, .. } => u[region],
        }
    }

    pub fn u_vector(&self, n_regions: usize) -> Vec<f64> {
        match self {
            EffectValues::None => vec![0.0; n_regions],
            EffectValues::Iid { u, .. } | EffectValues::Icar { u, .. } => u.clone(),
            EffectValues::Bym2 { u, .. } => u.clone(),
        }
    }
}

/// A full parameter point on the constrained scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamState {
    pub baseline: BaselineParams,
    /// Time-level coefficients; resolved (zeros or beta's copy where tied).
    pub alpha: Vec<f64>,
    /// Hazard-level coefficients; empty when structurally zero.
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub gamma_scales: Vec<f64>,
    pub time: EffectValues,
    pub hazard: EffectValues,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl ParamState {
    /// (time-level, hazard-level) linear predictors for one record.
    pub fn linear_predictors(&self, rec: &PatientRecord) -> (f64, f64) {
        let lp_time = if self.alpha.is_empty() {
            self.time.u_at(rec.region)
        } else {
            dot(&rec.x_time, &self.alpha) + self.time.u_at(rec.region)
        };
        let mut lp_haz = self.hazard.u_at(rec.region);
        if !self.beta.is_empty() {
            lp_haz += dot(&rec.x, &self.beta);
        }
        if !self.gamma.is_empty() {
            lp_haz += dot(&rec.spline, &self.gamma);
        }
        (lp_time, lp_haz)
    }
}

/// Excess hazard h_E(t) for a record at its observed time (or any t > 0).
pub fn excess_hazard(state: &ParamState, rec: &PatientRecord, t: f64) -> Result<f64> {
    let (lp_time, lp_haz) = state.linear_predictors(rec);
    let t_eff = t * lp_time.exp();
    let lh = baseline::log_hazard(&state.baseline, t_eff)?;
    Ok((lh + lp_haz).exp())
}

/// Cumulative excess hazard H_E(t) in closed form.
pub fn cum_excess_hazard(state: &ParamState, rec: &PatientRecord, t: f64) -> Result<f64> {
    if t == 0.0 {
        return Ok(0.0);
    }
    let (lp_time, lp_haz) = state.linear_predictors(rec);
    let t_eff = t * lp_time.exp();
    let h0 = baseline::cum_hazard(&state.baseline, t_eff)?;
    Ok(h0 * (lp_haz - lp_time).exp())
}

/// Net survival S_N(t) = exp(-H_E(t)) for one record.
pub fn net_survival(state: &ParamState, rec: &PatientRecord, t: f64) -> Result<f64> {
    Ok((-cum_excess_hazard(state, rec, t)?).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifetable::Stratum;

    fn spec(submodel: Submodel, ts: StructureKind, hs: StructureKind) -> ModelSpec {
        ModelSpec {
            family: BaselineFamily::LogNormal,
            submodel,
            time_structure: ts,
            hazard_structure: hs,
            n_regions: 3,
            p_time: 1,
            p_hazard: 2,
            spline_blocks: vec![],
            overall_survival: false,
        }
    }

    fn record() -> PatientRecord {
        PatientRecord {
            time: 1.4,
            status: 1,
            age: 70.0,
            region: 1,
            x: vec![0.5, 1.0],
            x_time: vec![0.5],
            spline: vec![],
            stratum: Stratum {
                sex: 0,
                deprivation: 1,
                region: 2,
                year: 2016,
            },
        }
    }

    #[test]
    fn layout_round_trips_constrained_unconstrained() {
        let sp = spec(Submodel::Sgh, StructureKind::Icar, StructureKind::Bym2);
        let layout = ParamLayout::build(&sp).unwrap();
        assert_eq!(layout.dim, layout.names.len());
        let z: Vec<f64> = (0..layout.dim).map(|i| 0.1 * i as f64 - 0.7).collect();
        let x = layout.to_constrained(&z);
        let z2 = layout.to_unconstrained(&x);
        for (a, b) in z.iter().zip(&z2) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn sph_exposes_zero_alpha_and_no_time_effects() {
        let sp = spec(Submodel::Sph, StructureKind::None, StructureKind::Icar);
        let layout = ParamLayout::build(&sp).unwrap();
        assert!(layout.alpha.is_none());
        assert_eq!(layout.time, EffectLayout::None);
        let z = vec![0.0; layout.dim];
        let state = layout.unpack(&layout.to_constrained(&z), 3).unwrap();
        assert!(state.alpha.is_empty());
        assert_eq!(state.time, EffectValues::None);
        // reading alpha yields the zero vector: lp_time is exactly u (= 0 here)
        let (lp_t, _) = state.linear_predictors(&record());
        assert_eq!(lp_t, 0.0);
    }

    #[test]
    fn sgh_ii_exposes_single_shared_vector() {
        let mut sp = spec(Submodel::SghII, StructureKind::Icar, StructureKind::Icar);
        sp.p_time = 2;
        let layout = ParamLayout::build(&sp).unwrap();
        assert!(layout.shared_effects);
        assert!(layout.names.iter().any(|n| n == "u_shared[1]"));
        assert_eq!(layout.time, layout.hazard);
        let mut z = vec![0.0; layout.dim];
        // set the shared u[1] slot
        if let EffectLayout::Icar { u, .. } = &layout.hazard {
            z[u.start + 1] = 0.77;
        }
        let state = layout.unpack(&layout.to_constrained(&z), 3).unwrap();
        assert_eq!(state.time.u_at(1), 0.77);
        assert_eq!(state.hazard.u_at(1), 0.77);
    }

    #[test]
    fn saft_ties_alpha_to_beta() {
        let mut sp = spec(Submodel::Saft, StructureKind::Iid, StructureKind::Iid);
        sp.p_time = 2;
        let layout = ParamLayout::build(&sp).unwrap();
        assert!(layout.alpha.is_none());
        assert!(layout.tied_alpha);
        let mut z = vec![0.0; layout.dim];
        let beta = layout.beta.clone().unwrap();
        z[beta.start] = 0.3;
        z[beta.start + 1] = -0.2;
        let state = layout.unpack(&layout.to_constrained(&z), 3).unwrap();
        assert_eq!(state.alpha, state.beta);
        assert_eq!(state.alpha, vec![0.3, -0.2]);
    }

    #[test]
    fn no_effect_submodels_force_structures_off() {
        for sm in [Submodel::Gh, Submodel::Ph, Submodel::Aft, Submodel::Ah] {
            let mut sp = spec(sm, StructureKind::Icar, StructureKind::Icar);
            if sm.alpha_mode() == AlphaMode::TiedToBeta {
                sp.p_time = 2;
            }
            assert_eq!(sp.resolved_time_structure(), StructureKind::None);
            assert_eq!(sp.resolved_hazard_structure(), StructureKind::None);
            let layout = ParamLayout::build(&sp).unwrap();
            assert_eq!(layout.time, EffectLayout::None);
            assert_eq!(layout.hazard, EffectLayout::None);
        }
    }

    #[test]
    fn saft_requires_matching_covariates() {
        let sp = spec(Submodel::Saft, StructureKind::Iid, StructureKind::Iid);
        assert!(sp.validate().is_err()); // p_time=1 != p_hazard=2
    }

    #[test]
    fn excess_hazard_reduces_to_baseline_when_effects_off() {
        let sp = spec(Submodel::Gh, StructureKind::None, StructureKind::None);
        let layout = ParamLayout::build(&sp).unwrap();
        let mut z = vec![0.0; layout.dim];
        z[0] = 0.65; // mu
        z[1] = 1.15f64.ln(); // log sigma
        let state = layout.unpack(&layout.to_constrained(&z), 3).unwrap();
        let rec = record();
        let h = excess_hazard(&state, &rec, rec.time).unwrap();
        let h0 = baseline::log_hazard(&state.baseline, rec.time).unwrap().exp();
        assert!((h - h0).abs() < 1e-13 * h0);
    }

    #[test]
    fn ph_scaling_of_constant_hazard() {
        // GAM(1,1) baseline with x'beta = log 2 gives hazard exactly 2.
        let sp = ModelSpec {
            family: BaselineFamily::Gamma,
            submodel: Submodel::Ph,
            time_structure: StructureKind::None,
            hazard_structure: StructureKind::None,
            n_regions: 3,
            p_time: 0,
            p_hazard: 1,
            spline_blocks: vec![],
            overall_survival: false,
        };
        let layout = ParamLayout::build(&sp).unwrap();
        let mut z = vec![0.0; layout.dim];
        z[0] = 0.0; // log eta = 0
        z[1] = 0.0; // log nu = 0
        let beta = layout.beta.clone().unwrap();
        z[beta.start] = 2.0f64.ln();
        let state = layout.unpack(&layout.to_constrained(&z), 3).unwrap();
        let mut rec = record();
        rec.x = vec![1.0];
        rec.x_time = vec![];
        for &t in &[0.3, 1.0, 2.5] {
            assert!((excess_hazard(&state, &rec, t).unwrap() - 2.0).abs() < 1e-12);
        }
        // PH factorization: h_E(t)/h_0(t) does not depend on t.
        let ratio1 = excess_hazard(&state, &rec, 0.7).unwrap()
            / baseline::log_hazard(&state.baseline, 0.7).unwrap().exp();
        let ratio2 = excess_hazard(&state, &rec, 3.4).unwrap()
            / baseline::log_hazard(&state.baseline, 3.4).unwrap().exp();
        assert!((ratio1 - ratio2).abs() < 1e-12);
    }

    #[test]
    fn appendix_fixed_record_matches_direct_formula() {
        // LN(0.65, 1.15) with nonzero effects: independent scalar recomputation.
        let sp = spec(Submodel::Sgh, StructureKind::Iid, StructureKind::Iid);
        let layout = ParamLayout::build(&sp).unwrap();
        let x = {
            let mut z = vec![0.0; layout.dim];
            z[0] = 0.65;
            z[1] = 1.15f64.ln();
            let a = layout.alpha.clone().unwrap();
            z[a.start] = 1.0;
            let b = layout.beta.clone().unwrap();
            z[b.start] = 1.0;
            z[b.start + 1] = -1.0;
            if let EffectLayout::Iid { u, .. } = &layout.time {
                z[u.start + 1] = 0.25;
            }
            if let EffectLayout::Iid { u, .. } = &layout.hazard {
                z[u.start + 1] = -0.4;
            }
            layout.to_constrained(&z)
        };
        let state = layout.unpack(&x, 3).unwrap();
        let rec = record();
        let t = 1.4;
        // direct formula with scalar arithmetic
        let lp_t = 0.5 * 1.0 + 0.25;
        let lp_h = 0.5 * 1.0 + 1.0 * (-1.0) - 0.4;
        let params = BaselineParams::log_normal(0.65, 1.15).unwrap();
        let expect =
            baseline::log_hazard(&params, t * lp_t.exp()).unwrap().exp() * lp_h.exp();
        let got = excess_hazard(&state, &rec, t).unwrap();
        assert!((got - expect).abs() < 1e-12 * expect);
        // cumulative closed form vs the same pieces
        let expect_cum = baseline::cum_hazard(&params, t * lp_t.exp()).unwrap()
            * (lp_h - lp_t).exp();
        let got_cum = cum_excess_hazard(&state, &rec, t).unwrap();
        assert!((got_cum - expect_cum).abs() < 1e-12 * expect_cum);
        assert_eq!(cum_excess_hazard(&state, &rec, 0.0).unwrap(), 0.0);
    }
}
