//! Gibbs sampler for one iSHM: data augmentation sweeps, hyperplane pruning,
//! and maximum-likelihood sample selection.
//!
//! The sweep alternates: latent counts m_i and their multinomial partition,
//! then per hyperplane the Polya-Gamma auxiliaries, the Gaussian coefficient
//! draw, and the gamma-conjugate updates, then the global shrinkage variables.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{log_likelihood_of_rate, sigmoid, softplus, Hyperplane, IshmHyperparams, IshmModel};
use crate::rng::RngStream;
use crate::samplers::{
    sample_crt, sample_gamma, sample_multinomial_partition, sample_mvn_from_precision,
    sample_polya_gamma, sample_truncated_poisson,
};

#[derive(Clone, Debug)]
pub struct GibbsConfig {
    pub iterations: usize,
    /// Fraction of iterations discarded before maximum-likelihood selection.
    pub burn_fraction: f64,
    pub prune_every: usize,
    pub k_max: usize,
    pub seed: u64,
    /// Emit one structured trace line per sweep on stderr.
    pub verbose: bool,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig {
            iterations: 5000,
            burn_fraction: 0.5,
            prune_every: 200,
            k_max: 20,
            seed: 0,
            verbose: false,
        }
    }
}

/// Latent state of one hyperplane's sampler.
#[derive(Clone, Debug)]
pub struct PlaneState {
    pub beta: DVector<f64>,
    pub r: f64,
    /// Per-coefficient normal-gamma precisions alpha_vk.
    pub alpha: DVector<f64>,
    pub b_beta: f64,
    /// Per-observation gamma rates theta_ik.
    pub theta: Vec<f64>,
    /// Polya-Gamma auxiliaries omega_ik.
    pub omega: Vec<f64>,
    /// Partitioned counts m_ik.
    pub m_k: Vec<u64>,
    /// CRT table counts l_ik.
    pub l: Vec<u64>,
    /// Cached inner products x_i' beta_k for the current beta.
    pub psi: Vec<f64>,
}

/// All latent variables of one iSHM's Gibbs sampler.
#[derive(Clone, Debug)]
pub struct GibbsState {
    /// Total counts m_i; zero exactly where y_i = 0.
    pub m: Vec<u64>,
    pub planes: Vec<PlaneState>,
    pub gamma0: f64,
    pub c0: f64,
}

#[derive(Serialize)]
struct TraceRecord {
    iteration: usize,
    k_active: usize,
    train_log_likelihood: f64,
}

/// Engine output: the selected model plus any warnings raised while training.
#[derive(Clone, Debug)]
pub struct TrainResult {
    pub model: IshmModel,
    pub warnings: Vec<String>,
}

// Conditional posterior (shape, scale) parameterizations, kept as free
// functions so the frozen-conditional moment tests exercise exactly what the
// sweep uses.

pub fn theta_conditional(r: f64, m_ik: u64, psi: f64) -> (f64, f64) {
    // sigmoid underflows to exactly 0 for psi below about -745; keep the
    // gamma scale in its domain
    (r + m_ik as f64, sigmoid(psi).max(f64::MIN_POSITIVE))
}

pub fn alpha_conditional(a_beta: f64, b_beta: f64, beta_v: f64) -> (f64, f64) {
    (a_beta + 0.5, 1.0 / (b_beta + 0.5 * beta_v * beta_v))
}

pub fn b_beta_conditional(hp: &IshmHyperparams, dim: usize, alpha_sum: f64) -> (f64, f64) {
    (hp.e0 + hp.a_beta * dim as f64, 1.0 / (hp.f0 + alpha_sum))
}

pub fn c0_conditional(hp: &IshmHyperparams, gamma0: f64, r_sum: f64) -> (f64, f64) {
    (hp.e0 + gamma0, 1.0 / (hp.f0 + r_sum))
}

pub fn r_conditional(gamma0: f64, k: usize, l_dot_k: u64, c0: f64, softplus_sum: f64) -> (f64, f64) {
    (gamma0 / k as f64 + l_dot_k as f64, 1.0 / (c0 + softplus_sum))
}

pub fn gamma0_conditional(
    hp: &IshmHyperparams,
    k: usize,
    l_tilde_sum: u64,
    log1m_p_tilde_sum: f64,
) -> (f64, f64) {
    (
        hp.a0 + l_tilde_sum as f64,
        1.0 / (hp.b0 - log1m_p_tilde_sum / k as f64),
    )
}

impl GibbsState {
    /// Algorithm initialization: beta = 0, K = k_max, r = 1 / k_max.
    pub fn init(data: &Dataset, hp: &IshmHyperparams) -> Self {
        let n = data.len();
        let d = data.dim();
        let r0 = 1.0 / hp.k_max as f64;
        let planes = (0..hp.k_max)
            .map(|_| PlaneState {
                beta: DVector::zeros(d),
                r: r0,
                alpha: DVector::from_element(d, 1.0),
                b_beta: hp.b_beta_init,
                theta: vec![r0; n],
                omega: vec![1.0; n],
                m_k: vec![0; n],
                l: vec![0; n],
                psi: vec![0.0; n],
            })
            .collect();
        GibbsState {
            m: vec![0; n],
            planes,
            gamma0: hp.gamma0,
            c0: hp.c0,
        }
    }

    pub fn num_planes(&self) -> usize {
        self.planes.len()
    }

    /// Training log-likelihood at the current (r, beta).
    pub fn log_likelihood(&self, data: &Dataset) -> f64 {
        (0..data.len())
            .map(|i| {
                let lambda: f64 = self
                    .planes
                    .iter()
                    .map(|p| p.r * softplus(p.psi[i]))
                    .sum();
                log_likelihood_of_rate(lambda.max(1e-300), data.label(i))
            })
            .sum()
    }

    /// Remove hyperplanes with zero total count; returns how many were pruned.
    pub fn prune(&mut self) -> usize {
        let before = self.planes.len();
        self.planes.retain(|p| p.m_k.iter().any(|&m| m > 0));
        before - self.planes.len()
    }
}

/// One full Gibbs sweep over all latent variables.
pub fn gibbs_step(
    state: &mut GibbsState,
    data: &Dataset,
    hp: &IshmHyperparams,
    rng: &mut RngStream,
) -> Result<()> {
    let n = data.len();
    let d = data.dim();
    let k = state.planes.len();
    if k == 0 {
        return Ok(());
    }

    // (1) total counts m_i ~ y_i * Pois_+(theta_i.), (2) multinomial partition
    let mut weights = vec![0.0; k];
    for i in 0..n {
        if data.label(i) == 0 {
            state.m[i] = 0;
            for plane in state.planes.iter_mut() {
                plane.m_k[i] = 0;
            }
            continue;
        }
        let mut theta_total = 0.0;
        for (w, plane) in weights.iter_mut().zip(&state.planes) {
            *w = plane.theta[i];
            theta_total += *w;
        }
        let m_i = if theta_total < 1e-12 {
            1
        } else {
            sample_truncated_poisson(theta_total, rng)?
        };
        state.m[i] = m_i;
        let parts = if theta_total > 0.0 {
            sample_multinomial_partition(m_i, &weights, rng)?
        } else {
            // all-zero theta: put the whole count on the first hyperplane
            let mut p = vec![0u64; k];
            p[0] = m_i;
            p
        };
        for (plane, part) in state.planes.iter_mut().zip(parts) {
            plane.m_k[i] = part;
        }
    }

    // (3) per-hyperplane updates
    let mut softplus_sums = vec![0.0; k];
    for (ki, plane) in state.planes.iter_mut().enumerate() {
        // omega_ik ~ PG(m_ik + r_k, psi_ik)
        for i in 0..n {
            plane.omega[i] =
                sample_polya_gamma(plane.m_k[i] as f64 + plane.r, plane.psi[i], rng)?;
        }
        // beta_k ~ MVN(precision = diag(alpha) + sum omega x x',
        //              shift = sum ((m_ik - r_k)/2) x_i)
        let mut precision = DMatrix::from_diagonal(&plane.alpha);
        let mut shift = DVector::zeros(d);
        for i in 0..n {
            let x = data.row(i);
            let w = plane.omega[i];
            for a in 0..d {
                for b in 0..d {
                    precision[(a, b)] += w * x[a] * x[b];
                }
                shift[a] += (plane.m_k[i] as f64 - plane.r) / 2.0 * x[a];
            }
        }
        plane.beta = sample_mvn_from_precision(&precision, &shift, rng).map_err(|e| match e {
            Error::NumericalStability { context } => Error::NumericalStability {
                context: format!("hyperplane {ki}: {context}"),
            },
            other => other,
        })?;
        // refresh psi and the conjugate draws
        let mut sp_sum = 0.0;
        for i in 0..n {
            let x = data.row(i);
            let psi: f64 = plane.beta.iter().zip(x).map(|(b, v)| b * v).sum();
            plane.psi[i] = psi;
            sp_sum += softplus(psi);
            let (shape, scale) = theta_conditional(plane.r, plane.m_k[i], psi);
            plane.theta[i] = sample_gamma(shape, scale, rng)?.max(1e-300);
            plane.l[i] = sample_crt(plane.m_k[i], plane.r, rng)?;
        }
        softplus_sums[ki] = sp_sum;
        let mut alpha_sum = 0.0;
        for v in 0..d {
            let (shape, scale) = alpha_conditional(hp.a_beta, plane.b_beta, plane.beta[v]);
            plane.alpha[v] = sample_gamma(shape, scale, rng)?.max(1e-300);
            alpha_sum += plane.alpha[v];
        }
        let (shape, scale) = b_beta_conditional(hp, d, alpha_sum);
        plane.b_beta = sample_gamma(shape, scale, rng)?.max(1e-300);
    }

    // (4) globals: l_tilde, gamma0, r, c0
    let mut l_tilde_sum = 0u64;
    let mut log1m_p_tilde_sum = 0.0;
    for (ki, plane) in state.planes.iter().enumerate() {
        let l_dot: u64 = plane.l.iter().sum();
        l_tilde_sum += sample_crt(l_dot, state.gamma0 / k as f64, rng)?;
        // ln(1 - p_tilde_k) = ln(c0) - ln(c0 + sum_i softplus(psi_ik))
        log1m_p_tilde_sum += state.c0.ln() - (state.c0 + softplus_sums[ki]).ln();
    }
    let (shape, scale) = gamma0_conditional(hp, k, l_tilde_sum, log1m_p_tilde_sum);
    // Gamma(0.01, .) draws can underflow to exactly 0; keep downstream shapes
    // in their domain
    state.gamma0 = sample_gamma(shape, scale, rng)?.max(1e-300);
    let mut r_sum = 0.0;
    for (ki, plane) in state.planes.iter_mut().enumerate() {
        let l_dot: u64 = plane.l.iter().sum();
        let (shape, scale) = r_conditional(state.gamma0, k, l_dot, state.c0, softplus_sums[ki]);
        plane.r = sample_gamma(shape, scale, rng)?.max(1e-300);
        r_sum += plane.r;
    }
    let (shape, scale) = c0_conditional(hp, state.gamma0, r_sum);
    state.c0 = sample_gamma(shape, scale, rng)?.max(1e-300);
    Ok(())
}

/// Run the full sampler and return the post-burn-in sample with the highest
/// training log-likelihood, hyperplanes ordered by descending weight.
pub fn run_gibbs(
    data: &Dataset,
    hp: &IshmHyperparams,
    cfg: &GibbsConfig,
    rng: &mut RngStream,
) -> Result<TrainResult> {
    if data.count_positive() == 0 {
        return Err(Error::DegenerateData("no positive examples"));
    }
    let mut state = GibbsState::init(data, hp);
    let burn = (cfg.iterations as f64 * cfg.burn_fraction) as usize;
    let mut best: Option<(f64, Vec<(f64, DVector<f64>)>)> = None;
    let mut warnings = Vec::new();
    for iter in 1..=cfg.iterations {
        gibbs_step(&mut state, data, hp, rng)?;
        if iter % cfg.prune_every == 0 {
            state.prune();
            if state.planes.is_empty() {
                warnings.push(format!("all hyperplanes pruned at iteration {iter}"));
                break;
            }
        }
        let ll = state.log_likelihood(data);
        if cfg.verbose {
            let record = TraceRecord {
                iteration: iter,
                k_active: state.planes.len(),
                train_log_likelihood: ll,
            };
            eprintln!("{}", serde_json::to_string(&record)?);
        }
        if iter > burn && best.as_ref().is_none_or(|(b, _)| ll > *b) {
            best = Some((
                ll,
                state
                    .planes
                    .iter()
                    .map(|p| (p.r, p.beta.clone()))
                    .collect(),
            ));
        }
    }
    let mut hyperplanes: Vec<Hyperplane> = best
        .map(|(_, planes)| {
            planes
                .into_iter()
                .map(|(r, beta)| Hyperplane {
                    beta: beta.iter().copied().collect(),
                    weight: r,
                })
                .collect()
        })
        .unwrap_or_default();
    if hyperplanes.is_empty() && warnings.is_empty() {
        warnings.push("no post-burn-in sample retained".to_string());
    }
    hyperplanes.sort_by(|a, b| b.weight.total_cmp(&a.weight));
    Ok(TrainResult {
        model: IshmModel::new(hyperplanes, data.dim(), hp.clone()),
        warnings,
    })
}
