//! Static-trajectory Hamiltonian Monte Carlo with jittered step counts.
//!
//! Each transition draws a momentum from the diagonal metric, integrates a
//! leapfrog trajectory of uniformly jittered length (1..=max_leapfrog), and
//! accepts or rejects on the energy error.  Warmup adapts the step size by
//! dual averaging throughout and estimates the diagonal mass matrix from a
//! middle window; everything is frozen when warmup ends.  Transitions whose
//! energy error exceeds 1000 (or go nonfinite) are divergences: rejected and
//! counted.
//!
//! Chains run concurrently; chain seeds derive from hash(seed, chain index),
//! so results do not depend on the degree of parallelism.

pub mod diagnostics;

pub use diagnostics::{ess, split_rhat, Diagnostics};

use crate::error::{Error, Result};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

const DIVERGENCE_ENERGY: f64 = 1000.0;

/// A differentiable unnormalized log-density on R^dim.
pub trait HmcModel: Sync {
    fn dim(&self) -> usize;

    /// Log-density and gradient at z; `None` for nonfinite/errored points
    /// (treated as a divergence by the sampler).
    fn logp_grad(&self, z: &[f64], grad: &mut [f64]) -> Option<f64>;

    /// Map a sampled point to the reporting scale kept in `ChainDraws`.
    fn report(&self, z: &[f64]) -> Vec<f64> {
        z.to_vec()
    }

    fn report_dim(&self) -> usize {
        self.dim()
    }

    fn report_names(&self) -> Vec<String> {
        (0..self.report_dim()).map(|i| format!("p{}", i + 1)).collect()
    }
}

impl HmcModel for crate::model::Posterior<'_> {
    fn dim(&self) -> usize {
        self.layout.dim
    }

    fn logp_grad(&self, z: &[f64], grad: &mut [f64]) -> Option<f64> {
        match self.value_and_grad(z) {
            Ok((v, g)) if v.is_finite() && g.iter().all(|x| x.is_finite()) => {
                grad.copy_from_slice(&g);
                Some(v)
            }
            _ => None,
        }
    }

    fn report(&self, z: &[f64]) -> Vec<f64> {
        self.layout.to_constrained(z)
    }

    fn report_names(&self) -> Vec<String> {
        self.layout.names.clone()
    }
}

/// Sampler configuration.
#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub chains: usize,
    /// Total iterations per chain, warmup included.
    pub iterations: usize,
    pub warmup: usize,
    pub target_accept: f64,
    pub max_leapfrog: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            chains: 4,
            iterations: 4000,
            warmup: 2000,
            target_accept: 0.8,
            max_leapfrog: 32,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 {
            return Err(Error::Config("chains must be >= 1".into()));
        }
        if self.iterations > 0 && self.warmup >= self.iterations {
            return Err(Error::Config(format!(
                "warmup ({}) must be smaller than iterations ({})",
                self.warmup, self.iterations
            )));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config("target_accept must lie in (0,1)".into()));
        }
        if self.max_leapfrog == 0 {
            return Err(Error::Config("max_leapfrog must be >= 1".into()));
        }
        Ok(())
    }
}

/// Kept draws of one chain, on the model's reporting scale.
#[derive(Debug, Clone)]
pub struct ChainDraws {
    pub draws: Vec<Vec<f64>>,
    pub logp: Vec<f64>,
    pub divergences: usize,
    pub accept_rate: f64,
    /// Step size frozen at the end of warmup.
    pub step_size: f64,
}

/// Deterministic per-stream RNG derivation: splitmix64 over (seed, stream).
pub fn derive_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut state = seed ^ 0x9E3779B97F4A7C15u64.wrapping_mul(stream.wrapping_add(1));
    let mut next = || {
        state = state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    };
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&next().to_le_bytes());
    }
    ChaCha12Rng::from_seed(key)
}

/// One leapfrog trajectory of `steps` steps; returns the end-point log
/// density, or None if anything went nonfinite.  `z`, `p`, and `grad` are
/// updated in place (grad holds the gradient at the returned position).
pub fn leapfrog<M: HmcModel + ?Sized>(
    model: &M,
    z: &mut [f64],
    p: &mut [f64],
    grad: &mut [f64],
    eps: f64,
    steps: usize,
    inv_mass: &[f64],
) -> Option<f64> {
    let dim = z.len();
    let mut logp = None;
    for step in 0..steps {
        for i in 0..dim {
            p[i] += 0.5 * eps * grad[i];
        }
        for i in 0..dim {
            z[i] += eps * inv_mass[i] * p[i];
            if !z[i].is_finite() {
                return None;
            }
        }
        logp = model.logp_grad(z, grad);
        logp?;
        for i in 0..dim {
            p[i] += 0.5 * eps * grad[i];
        }
        let _ = step;
    }
    logp
}

fn kinetic(p: &[f64], inv_mass: &[f64]) -> f64 {
    0.5 * p.iter().zip(inv_mass).map(|(pi, im)| pi * pi * im).sum::<f64>()
}

/// Dual-averaging step-size adaptation (Nesterov-style).
struct DualAverage {
    mu: f64,
    log_eps: f64,
    log_eps_bar: f64,
    h_bar: f64,
    m: f64,
    target: f64,
}

impl DualAverage {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(eps0: f64, target: f64) -> Self {
        DualAverage {
            mu: (10.0 * eps0).ln(),
            log_eps: eps0.ln(),
            log_eps_bar: 0.0,
            h_bar: 0.0,
            m: 0.0,
            target,
        }
    }

    fn update(&mut self, accept_stat: f64) -> f64 {
        self.m += 1.0;
        let eta = 1.0 / (self.m + Self::T0);
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept_stat);
        self.log_eps = self.mu - self.m.sqrt() / Self::GAMMA * self.h_bar;
        let w = self.m.powf(-Self::KAPPA);
        self.log_eps_bar = w * self.log_eps + (1.0 - w) * self.log_eps_bar;
        self.log_eps.exp()
    }

    fn averaged(&self) -> f64 {
        if self.m == 0.0 {
            self.log_eps.exp()
        } else {
            self.log_eps_bar.exp()
        }
    }
}

/// Streaming mean/variance accumulator for the metric window.
struct Welford {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Welford {
            n: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn push(&mut self, z: &[f64]) {
        self.n += 1.0;
        for i in 0..z.len() {
            let d = z[i] - self.mean[i];
            self.mean[i] += d / self.n;
            self.m2[i] += d * (z[i] - self.mean[i]);
        }
    }

    /// Regularized variance estimate (shrunk toward 1e-3 for small windows).
    fn inv_mass(&self) -> Option<Vec<f64>> {
        if self.n < 10.0 {
            return None;
        }
        let w = self.n / (self.n + 5.0);
        Some(
            self.m2
                .iter()
                .map(|m2| (w * (m2 / (self.n - 1.0)) + (1.0 - w) * 1e-3).max(1e-10))
                .collect(),
        )
    }
}

fn find_reasonable_eps<M: HmcModel + ?Sized>(
    model: &M,
    z: &[f64],
    logp: f64,
    grad: &[f64],
    inv_mass: &[f64],
    rng: &mut ChaCha12Rng,
) -> f64 {
    let dim = z.len();
    let mut eps = 1.0f64;
    let p0: Vec<f64> = (0..dim)
        .map(|i| {
            let n: f64 = rng.sample(StandardNormal);
            n / inv_mass[i].sqrt()
        })
        .collect();
    let h0 = -logp + kinetic(&p0, inv_mass);
    let ratio_at = |eps: f64| -> f64 {
        let mut zt = z.to_vec();
        let mut pt = p0.clone();
        let mut gt = grad.to_vec();
        match leapfrog(model, &mut zt, &mut pt, &mut gt, eps, 1, inv_mass) {
            Some(lp) => (h0 - (-lp + kinetic(&pt, inv_mass))).exp(),
            None => 0.0,
        }
    };
    let mut ratio = ratio_at(eps);
    while !ratio.is_finite() || ratio == 0.0 {
        eps *= 0.5;
        if eps < 1e-10 {
            return 1e-10;
        }
        ratio = ratio_at(eps);
    }
    let dir: f64 = if ratio > 0.5 { 1.0 } else { -1.0 };
    for _ in 0..50 {
        let cond = if dir > 0.0 { ratio > 0.5 } else { ratio < 0.5 };
        if !cond {
            break;
        }
        eps *= 2.0f64.powf(dir);
        if !(1e-10..=1e3).contains(&eps) {
            break;
        }
        ratio = ratio_at(eps);
        if !ratio.is_finite() {
            eps *= 0.5;
            break;
        }
    }
    eps.clamp(1e-10, 1e3)
}

/// Run a single chain.
pub fn run_chain<M: HmcModel + ?Sized>(
    model: &M,
    config: &SamplerConfig,
    chain_index: usize,
) -> Result<ChainDraws> {
    config.validate()?;
    if config.iterations == 0 {
        return Ok(ChainDraws {
            draws: Vec::new(),
            logp: Vec::new(),
            divergences: 0,
            accept_rate: 0.0,
            step_size: 0.0,
        });
    }
    let dim = model.dim();
    let mut rng = derive_rng(config.seed, chain_index as u64);

    // initial point: uniform(-1, 1) until the gradient is certified finite
    let mut z = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    let mut logp = f64::NAN;
    let mut ok = false;
    for _ in 0..100 {
        for zi in z.iter_mut() {
            *zi = rng.random_range(-1.0..1.0);
        }
        if let Some(lp) = model.logp_grad(&z, &mut grad) {
            logp = lp;
            ok = true;
            break;
        }
    }
    if !ok {
        return Err(Error::Sampler {
            chain: chain_index,
            message: "no initial point with finite log-density and gradient after 100 draws"
                .into(),
        });
    }

    let mut inv_mass = vec![1.0; dim];
    let mut eps = find_reasonable_eps(model, &z, logp, &grad, &inv_mass, &mut rng);
    let mut da = DualAverage::new(eps, config.target_accept);

    let warmup = config.warmup;
    // metric window: [w1, w2) when warmup is long enough for estimation
    let (w1, w2) = if warmup >= 40 {
        (warmup / 8, warmup - warmup / 10)
    } else {
        (warmup, warmup)
    };
    let mut welford = Welford::new(dim);

    let kept = config.iterations - warmup;
    let mut draws = Vec::with_capacity(kept);
    let mut logps = Vec::with_capacity(kept);
    let mut divergences = 0usize;
    let mut warmup_divergences = 0usize;
    let mut accepted = 0usize;

    let mut zt = vec![0.0; dim];
    let mut pt = vec![0.0; dim];
    let mut gt = vec![0.0; dim];

    for m in 0..config.iterations {
        let steps = rng.random_range(1..=config.max_leapfrog);
        let p0: Vec<f64> = (0..dim)
            .map(|i| {
                let n: f64 = rng.sample(StandardNormal);
                n / inv_mass[i].sqrt()
            })
            .collect();
        let h0 = -logp + kinetic(&p0, &inv_mass);

        zt.copy_from_slice(&z);
        pt.copy_from_slice(&p0);
        gt.copy_from_slice(&grad);
        let end = leapfrog(model, &mut zt, &mut pt, &mut gt, eps, steps, &inv_mass);

        let (divergent, accept_stat) = match end {
            Some(lp_end) => {
                let h1 = -lp_end + kinetic(&pt, &inv_mass);
                let de = h1 - h0;
                if !de.is_finite() || de > DIVERGENCE_ENERGY {
                    (true, 0.0)
                } else {
                    (false, (-de).exp().min(1.0))
                }
            }
            None => (true, 0.0),
        };

        if !divergent {
            let u: f64 = rng.random();
            if u < accept_stat {
                z.copy_from_slice(&zt);
                grad.copy_from_slice(&gt);
                logp = end.expect("accepted trajectory has a log-density");
                if m >= warmup {
                    accepted += 1;
                }
            }
        }

        if m < warmup {
            if divergent {
                warmup_divergences += 1;
                if m >= 100 && warmup_divergences * 2 > m {
                    return Err(Error::Sampler {
                        chain: chain_index,
                        message: format!(
                            "persistent divergence during warmup ({warmup_divergences}/{m} \
                             transitions); check model scaling"
                        ),
                    });
                }
            }
            eps = da.update(accept_stat);
            if m >= w1 && m < w2 {
                welford.push(&z);
            }
            if m + 1 == w2 {
                if let Some(im) = welford.inv_mass() {
                    inv_mass = im;
                    eps = find_reasonable_eps(model, &z, logp, &grad, &inv_mass, &mut rng);
                    da = DualAverage::new(eps, config.target_accept);
                }
            }
            if m + 1 == warmup {
                eps = da.averaged();
            }
        } else {
            if divergent {
                divergences += 1;
            }
            draws.push(model.report(&z));
            logps.push(logp);
        }
    }

    Ok(ChainDraws {
        draws,
        logp: logps,
        divergences,
        accept_rate: accepted as f64 / kept.max(1) as f64,
        step_size: eps,
    })
}

/// Run all chains (in parallel) and compute convergence diagnostics over the
/// reported draws.
pub fn run_chains<M: HmcModel + ?Sized>(
    model: &M,
    config: &SamplerConfig,
) -> Result<(Vec<ChainDraws>, Diagnostics)> {
    config.validate()?;
    let results: Vec<Result<ChainDraws>> = (0..config.chains)
        .into_par_iter()
        .map(|c| run_chain(model, config, c))
        .collect();
    let mut chains = Vec::with_capacity(config.chains);
    for (c, r) in results.into_iter().enumerate() {
        chains.push(r.map_err(|e| match e {
            Error::Sampler { message, .. } => Error::Sampler { chain: c, message },
            other => other,
        })?);
    }
    let diag = Diagnostics::from_chains(&chains, model.report_names());
    Ok((chains, diag))
}
