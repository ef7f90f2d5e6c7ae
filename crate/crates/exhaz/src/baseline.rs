//! Parametric baseline hazard families.
//!
//! Five distributions: Log-normal (LN), Log-logistic (LL), Power Generalized
//! Weibull (PGW), Gamma (GAM), and Generalized Gamma (GG).  Weibull is
//! deliberately not offered: with a Weibull baseline the general-hazard
//! structure is non-identifiable.
//!
//! All densities and hazards are computed and exposed in log space; the
//! linear-scale wrappers exponentiate at the boundary.  `eval` additionally
//! returns the partial derivatives with respect to the (constrained)
//! distribution parameters and log t, which is what the posterior gradient
//! consumes.
//!
//! Parameterisations (f / h / H / S all use the same one):
//! - LN(mu, sigma):   ln T ~ Normal(mu, sigma^2).  The survival and hazard
//!   are expressed through (ln t - mu)/sigma so that all four functions stay
//!   mutually consistent.
//! - LL(mu, sigma):   ln T ~ Logistic(mu, sigma).
//! - PGW(eta, nu, kappa): H(t) = -1 + (1 + (t/eta)^nu)^(1/kappa).
//! - GAM(eta, nu):    scale eta, shape nu.
//! - GG(eta, nu, kappa): f ~ t^(nu-1) exp(-(t/eta)^kappa); its CDF satisfies
//!   F(t | eta, nu, kappa) = P(nu/kappa, (t/eta)^kappa).

use crate::error::{Error, Result};
use crate::special::{
    norm_cdf, norm_hazard, norm_logcdf, norm_logpdf, norm_quantile, reg_gamma,
    reg_gamma_quantile, sigmoid, softplus,
};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

/// The five supported baseline families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BaselineFamily {
    LogNormal,
    LogLogistic,
    PowerGeneralizedWeibull,
    Gamma,
    GeneralizedGamma,
}

impl BaselineFamily {
    pub const ALL: [BaselineFamily; 5] = [
        BaselineFamily::LogNormal,
        BaselineFamily::LogLogistic,
        BaselineFamily::PowerGeneralizedWeibull,
        BaselineFamily::Gamma,
        BaselineFamily::GeneralizedGamma,
    ];

    /// Number of distribution parameters (2 or 3).
    pub fn arity(&self) -> usize {
        match self {
            BaselineFamily::LogNormal | BaselineFamily::LogLogistic | BaselineFamily::Gamma => 2,
            _ => 3,
        }
    }

    /// Short code used in configs and output headers.
    pub fn code(&self) -> &'static str {
        match self {
            BaselineFamily::LogNormal => "LN",
            BaselineFamily::LogLogistic => "LL",
            BaselineFamily::PowerGeneralizedWeibull => "PGW",
            BaselineFamily::Gamma => "GAM",
            BaselineFamily::GeneralizedGamma => "GG",
        }
    }

    pub fn parse(code: &str) -> Result<Self> {
        match code {
            "LN" => Ok(BaselineFamily::LogNormal),
            "LL" => Ok(BaselineFamily::LogLogistic),
            "PGW" => Ok(BaselineFamily::PowerGeneralizedWeibull),
            "GAM" => Ok(BaselineFamily::Gamma),
            "GG" => Ok(BaselineFamily::GeneralizedGamma),
            other => Err(Error::Invalid(format!(
                "unknown baseline family '{other}' (expected LN, LL, PGW, GAM, or GG)"
            ))),
        }
    }

    /// Constrained parameter names, in storage order.
    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            BaselineFamily::LogNormal | BaselineFamily::LogLogistic => &["mu", "sigma"],
            BaselineFamily::Gamma => &["eta", "nu"],
            _ => &["eta", "nu", "kappa"],
        }
    }

    /// Which parameters are positivity-constrained (true) vs unconstrained reals.
    pub fn param_positive(&self) -> &'static [bool] {
        match self {
            BaselineFamily::LogNormal | BaselineFamily::LogLogistic => &[false, true],
            BaselineFamily::Gamma => &[true, true],
            _ => &[true, true, true],
        }
    }
}

/// A validated parameter point for one family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineParams {
    family: BaselineFamily,
    vals: [f64; 3],
}

impl BaselineParams {
    pub fn new(family: BaselineFamily, vals: &[f64]) -> Result<Self> {
        if vals.len() != family.arity() {
            return Err(Error::Dimension(format!(
                "{} takes {} parameters, got {}",
                family.code(),
                family.arity(),
                vals.len()
            )));
        }
        for (i, (&v, &pos)) in vals.iter().zip(family.param_positive()).enumerate() {
            if !v.is_finite() {
                return Err(Error::Invalid(format!(
                    "{} parameter {} must be finite, got {v}",
                    family.code(),
                    family.param_names()[i]
                )));
            }
            if pos && v <= 0.0 {
                return Err(Error::Invalid(format!(
                    "{} parameter {} must be positive, got {v}",
                    family.code(),
                    family.param_names()[i]
                )));
            }
        }
        let mut a = [0.0; 3];
        a[..vals.len()].copy_from_slice(vals);
        Ok(BaselineParams { family, vals: a })
    }

    pub fn log_normal(mu: f64, sigma: f64) -> Result<Self> {
        Self::new(BaselineFamily::LogNormal, &[mu, sigma])
    }
    pub fn log_logistic(mu: f64, sigma: f64) -> Result<Self> {
        Self::new(BaselineFamily::LogLogistic, &[mu, sigma])
    }
    pub fn pgw(eta: f64, nu: f64, kappa: f64) -> Result<Self> {
        Self::new(BaselineFamily::PowerGeneralizedWeibull, &[eta, nu, kappa])
    }
    pub fn gamma(eta: f64, nu: f64) -> Result<Self> {
        Self::new(BaselineFamily::Gamma, &[eta, nu])
    }
    pub fn generalized_gamma(eta: f64, nu: f64, kappa: f64) -> Result<Self> {
        Self::new(BaselineFamily::GeneralizedGamma, &[eta, nu, kappa])
    }

    pub fn family(&self) -> BaselineFamily {
        self.family
    }
    pub fn values(&self) -> &[f64] {
        &self.vals[..self.family.arity()]
    }
}

/// log f, H, and their partials at one (params, t) point.
///
/// Derivative slots 0..arity-1 follow the family's parameter order on the
/// constrained scale; slot 3 is the partial with respect to ln t.
/// log h = log f + H, so its partials are the slot-wise sums.
#[derive(Debug, Clone, Copy)]
pub struct BaselineEval {
    pub log_f: f64,
    pub cum: f64,
    pub d_log_f: [f64; 4],
    pub d_cum: [f64; 4],
}

impl BaselineEval {
    #[inline]
    pub fn log_hazard(&self) -> f64 {
        self.log_f + self.cum
    }
    #[inline]
    pub fn d_log_hazard(&self, i: usize) -> f64 {
        self.d_log_f[i] + self.d_cum[i]
    }
}

fn check_time_pos(t: f64) -> Result<()> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("time must be positive, got {t}")));
    }
    Ok(())
}

fn check_time_nonneg(t: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("time must be nonnegative, got {t}")));
    }
    Ok(())
}

/// log f(t | params).
pub fn log_density(params: &BaselineParams, t: f64) -> Result<f64> {
    check_time_pos(t)?;
    Ok(eval(params, t)?.log_f)
}

/// Cumulative hazard H(t | params); H(0) = 0.
pub fn cum_hazard(params: &BaselineParams, t: f64) -> Result<f64> {
    check_time_nonneg(t)?;
    if t == 0.0 {
        return Ok(0.0);
    }
    Ok(eval(params, t)?.cum)
}

/// log h(t | params) = log f + H.
pub fn log_hazard(params: &BaselineParams, t: f64) -> Result<f64> {
    check_time_pos(t)?;
    Ok(eval(params, t)?.log_hazard())
}

/// S(t | params) = exp(-H(t)).
pub fn survival(params: &BaselineParams, t: f64) -> Result<f64> {
    Ok((-cum_hazard(params, t)?).exp())
}

/// log S(t | params) = -H(t).
pub fn log_survival(params: &BaselineParams, t: f64) -> Result<f64> {
    Ok(-cum_hazard(params, t)?)
}

/// Inverse CDF.  Closed form for LN/LL/PGW; GAM/GG reduce to the regularized
/// gamma quantile (GG through F(t) = P(nu/kappa, (t/eta)^kappa)).
pub fn quantile(params: &BaselineParams, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "quantile requires p in (0,1), got {p}"
        )));
    }
    let v = params.vals;
    let t = match params.family {
        BaselineFamily::LogNormal => (v[0] + v[1] * norm_quantile(p)).exp(),
        BaselineFamily::LogLogistic => (v[0] + v[1] * (p.ln() - (-p).ln_1p())).exp(),
        BaselineFamily::PowerGeneralizedWeibull => {
            let (eta, nu, kappa) = (v[0], v[1], v[2]);
            let u = -(-p).ln_1p(); // -log(1 - p)
            let w = (kappa * u.ln_1p()).exp_m1(); // (1+u)^kappa - 1
            eta * (w.ln() / nu).exp()
        }
        BaselineFamily::Gamma => v[0] * reg_gamma_quantile(v[1], p),
        BaselineFamily::GeneralizedGamma => {
            let (eta, nu, kappa) = (v[0], v[1], v[2]);
            eta * (reg_gamma_quantile(nu / kappa, p).ln() / kappa).exp()
        }
    };
    if !t.is_finite() || t <= 0.0 {
        return Err(Error::Domain(format!(
            "quantile({p}) not representable for {} {:?}",
            params.family.code(),
            params.values()
        )));
    }
    Ok(t)
}

/// Full evaluation with derivatives; requires t > 0.
pub fn eval(params: &BaselineParams, t: f64) -> Result<BaselineEval> {
    check_time_pos(t)?;
    let z = t.ln();
    let v = params.vals;
    let mut d_log_f = [0.0; 4];
    let mut d_cum = [0.0; 4];
    let (log_f, cum) = match params.family {
        BaselineFamily::LogNormal => {
            let (mu, sigma) = (v[0], v[1]);
            let y = (z - mu) / sigma;
            let log_f = norm_logpdf(y) - z - sigma.ln();
            let cum = -norm_logcdf(-y);
            let lam = norm_hazard(y); // phi(y)/Phi(-y)
            d_log_f[0] = y / sigma;
            d_log_f[1] = (y * y - 1.0) / sigma;
            d_log_f[3] = -y / sigma - 1.0;
            d_cum[0] = -lam / sigma;
            d_cum[1] = -y * lam / sigma;
            d_cum[3] = lam / sigma;
            (log_f, cum)
        }
        BaselineFamily::LogLogistic => {
            let (mu, sigma) = (v[0], v[1]);
            let y = (z - mu) / sigma;
            let g = sigmoid(y);
            let log_f = -y - 2.0 * softplus(-y) - z - sigma.ln();
            let cum = softplus(y);
            let s = 1.0 - 2.0 * g; // d log g / dy
            d_log_f[0] = -s / sigma;
            d_log_f[1] = (-y * s - 1.0) / sigma;
            d_log_f[3] = s / sigma - 1.0;
            d_cum[0] = -g / sigma;
            d_cum[1] = -y * g / sigma;
            d_cum[3] = g / sigma;
            (log_f, cum)
        }
        BaselineFamily::PowerGeneralizedWeibull => {
            let (eta, nu, kappa) = (v[0], v[1], v[2]);
            let s = nu * (z - eta.ln()); // ln w, w = (t/eta)^nu
            let lw = softplus(s); // ln(1 + w)
            let wb = sigmoid(s); // w / (1 + w)
            let cum = (lw / kappa).exp_m1();
            let bk = cum + 1.0; // (1+w)^(1/kappa)
            let log_h =
                nu.ln() - kappa.ln() - nu * eta.ln() + (nu - 1.0) * z + (1.0 / kappa - 1.0) * lw;
            let log_f = log_h - cum;
            let r = 1.0 / kappa - 1.0;
            // hazard partials first, then d log f = d log h - d cum
            let dh = [
                -(nu / eta) * (1.0 + r * wb),
                1.0 / nu - eta.ln() + z + r * (z - eta.ln()) * wb,
                -1.0 / kappa - lw / (kappa * kappa),
                (nu - 1.0) + r * nu * wb,
            ];
            d_cum[0] = -bk / kappa * nu * wb / eta;
            d_cum[1] = bk / kappa * (z - eta.ln()) * wb;
            d_cum[2] = -bk * lw / (kappa * kappa);
            d_cum[3] = bk / kappa * nu * wb;
            for i in 0..4 {
                d_log_f[i] = dh[i] - d_cum[i];
            }
            (log_f, cum)
        }
        BaselineFamily::Gamma => {
            let (eta, nu) = (v[0], v[1]);
            let x = (z - eta.ln()).exp().min(1e300);
            let rg = reg_gamma(nu, x);
            let log_f = (nu - 1.0) * z - x - ln_gamma(nu) - nu * eta.ln();
            let cum = -rg.log_q;
            // dH/dx = x^(nu-1) e^(-x) / (Gamma(nu) Q)
            let dh_dx = ((nu - 1.0) * x.ln() - x - ln_gamma(nu) - rg.log_q).exp();
            d_log_f[0] = (x - nu) / eta;
            d_log_f[1] = z - eta.ln() - digamma(nu);
            d_log_f[3] = (nu - 1.0) - x;
            d_cum[0] = -dh_dx * x / eta;
            d_cum[1] = -rg.dlogq_da;
            d_cum[3] = dh_dx * x;
            (log_f, cum)
        }
        BaselineFamily::GeneralizedGamma => {
            let (eta, nu, kappa) = (v[0], v[1], v[2]);
            let a = nu / kappa;
            let x = (kappa * (z - eta.ln())).exp().min(1e300);
            let rg = reg_gamma(a, x);
            let log_f = kappa.ln() - ln_gamma(a) - nu * eta.ln() + (nu - 1.0) * z - x;
            let cum = -rg.log_q;
            let dh_dx = ((a - 1.0) * x.ln() - x - ln_gamma(a) - rg.log_q).exp();
            let dh_da = -rg.dlogq_da;
            d_log_f[0] = (kappa * x - nu) / eta;
            d_log_f[1] = -digamma(a) / kappa - eta.ln() + z;
            d_log_f[2] = 1.0 / kappa + digamma(a) * nu / (kappa * kappa) - x * (z - eta.ln());
            d_log_f[3] = (nu - 1.0) - kappa * x;
            d_cum[0] = -dh_dx * kappa * x / eta;
            d_cum[1] = dh_da / kappa;
            d_cum[2] = dh_dx * x * (z - eta.ln()) - dh_da * nu / (kappa * kappa);
            d_cum[3] = dh_dx * kappa * x;
            (log_f, cum)
        }
    };
    Ok(BaselineEval {
        log_f,
        cum,
        d_log_f,
        d_cum,
    })
}

/// CDF, for simulation round trips and tests: F = 1 - exp(-H).
pub fn cdf(params: &BaselineParams, t: f64) -> Result<f64> {
    Ok(-(-cum_hazard(params, t)?).exp_m1())
}

/// S(t) via the linear-scale normal/logistic/gamma forms, bypassing the
/// cumulative hazard.  Used by tests as an algebraically independent route.
pub fn survival_direct(params: &BaselineParams, t: f64) -> Result<f64> {
    check_time_nonneg(t)?;
    if t == 0.0 {
        return Ok(1.0);
    }
    let v = params.vals;
    let z = t.ln();
    Ok(match params.family {
        BaselineFamily::LogNormal => norm_cdf(-(z - v[0]) / v[1]),
        BaselineFamily::LogLogistic => sigmoid(-(z - v[0]) / v[1]),
        BaselineFamily::PowerGeneralizedWeibull => {
            (1.0 - (1.0 + (t / v[0]).powf(v[1])).powf(1.0 / v[2])).exp()
        }
        BaselineFamily::Gamma => 1.0 - reg_gamma(v[1], t / v[0]).p,
        BaselineFamily::GeneralizedGamma => {
            1.0 - reg_gamma(v[1] / v[2], (t / v[0]).powf(v[2])).p
        }
    })
}
