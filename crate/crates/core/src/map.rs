//! Stochastic MAP inference for one iSHM: minibatch objective, analytic
//! gradients, an adaptive-moment optimizer, and Bernoulli-based pruning with
//! multinomial resurrection of uncovered positive examples.

use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{sigmoid, softplus, Hyperplane, IshmHyperparams, IshmModel};
use crate::rng::RngStream;
use crate::samplers::sample_multinomial_partition;

#[derive(Clone, Debug)]
pub struct MapConfig {
    pub minibatch_size: usize,
    pub num_batches: usize,
    pub base_lr: f64,
    /// Layer index T; the step size is base_lr / (4 + T).
    pub layer_index: usize,
    pub prune_every: usize,
    pub k_max: usize,
    pub seed: u64,
    pub moment_decay_1: f64,
    pub moment_decay_2: f64,
    pub lr_epsilon: f64,
    /// Extra L2 penalty on beta (used by the logistic-regression baseline).
    pub l2: f64,
    /// Keep r fixed at its initialization (logistic-regression baseline).
    pub freeze_r: bool,
    /// Standard deviation of the symmetry-breaking Gaussian perturbation
    /// applied to the zero beta initialization.
    pub init_scale: f64,
    pub verbose: bool,
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig {
            minibatch_size: 100,
            num_batches: 4000,
            base_lr: 0.05,
            layer_index: 1,
            prune_every: 500,
            k_max: 20,
            seed: 0,
            moment_decay_1: 0.9,
            moment_decay_2: 0.999,
            lr_epsilon: 1e-8,
            l2: 0.0,
            freeze_r: false,
            init_scale: 1.0,
            verbose: false,
        }
    }
}

/// Optimization variables: per-hyperplane coefficients and log weights.
#[derive(Clone, Debug)]
pub struct MapParams {
    /// beta[k] has length D.
    pub beta: Vec<Vec<f64>>,
    pub log_r: Vec<f64>,
}

impl MapParams {
    pub fn init(dim: usize, k: usize) -> Self {
        MapParams {
            beta: vec![vec![0.0; dim]; k],
            log_r: vec![-(k as f64).ln(); k],
        }
    }

    /// Zero-mean initialization with a small symmetry-breaking perturbation.
    ///
    /// With beta exactly 0 for every hyperplane, all hyperplanes receive
    /// identical gradients and identical optimizer moments, so the model stays
    /// rank-one for the entire run and cannot fit anything a single logistic
    /// unit cannot. (The Gibbs engine has no such problem: its per-hyperplane
    /// conditional draws are stochastic.)
    pub fn init_perturbed(dim: usize, k: usize, scale: f64, rng: &mut RngStream) -> Self {
        let mut params = Self::init(dim, k);
        for beta in &mut params.beta {
            for b in beta.iter_mut() {
                // Box-Muller
                let u1 = rng.uniform_open();
                let u2 = rng.uniform();
                *b = scale
                    * (-2.0 * u1.ln()).sqrt()
                    * (2.0 * std::f64::consts::PI * u2).cos();
            }
        }
        params
    }

    pub fn num_planes(&self) -> usize {
        self.log_r.len()
    }
}

const LAMBDA_FLOOR: f64 = 1e-12;

fn rate_at(params: &MapParams, x: &[f64]) -> f64 {
    params
        .beta
        .iter()
        .zip(&params.log_r)
        .map(|(beta, lr)| lr.exp() * softplus(beta.iter().zip(x).map(|(b, v)| b * v).sum()))
        .sum()
}

/// The stochastic MAP objective: gamma-process and normal-gamma priors plus
/// the N/M-scaled minibatch negative log-likelihood.
pub fn map_objective(
    params: &MapParams,
    data: &Dataset,
    batch: &[usize],
    n_total: usize,
    hp: &IshmHyperparams,
    l2: f64,
) -> f64 {
    assert!(!batch.is_empty(), "batch must be non-empty");
    let k = params.num_planes() as f64;
    let mut obj = 0.0;
    for (beta, lr) in params.beta.iter().zip(&params.log_r) {
        obj += -(hp.gamma0 / k) * lr + hp.c0 * lr.exp();
        for &b in beta {
            obj += (hp.a_beta + 0.5) * (b * b / (2.0 * hp.b_beta_init)).ln_1p();
            obj += 0.5 * l2 * b * b;
        }
    }
    let scale = n_total as f64 / batch.len() as f64;
    for &i in batch {
        let lambda = rate_at(params, data.row(i));
        obj += scale
            * if data.label(i) == 1 {
                -(-(-lambda.max(LAMBDA_FLOOR)).exp_m1()).ln()
            } else {
                lambda
            };
    }
    obj
}

/// Analytic gradient of `map_objective` with respect to (beta, log r).
pub fn map_gradient(
    params: &MapParams,
    data: &Dataset,
    batch: &[usize],
    n_total: usize,
    hp: &IshmHyperparams,
    l2: f64,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    assert!(!batch.is_empty(), "batch must be non-empty");
    let k = params.num_planes();
    let dim = params.beta.first().map_or(0, Vec::len);
    let mut d_beta = vec![vec![0.0; dim]; k];
    let mut d_log_r = vec![0.0; k];
    // prior terms
    for ki in 0..k {
        let r = params.log_r[ki].exp();
        d_log_r[ki] += -(hp.gamma0 / k as f64) + hp.c0 * r;
        for (g, &b) in d_beta[ki].iter_mut().zip(&params.beta[ki]) {
            *g += (hp.a_beta + 0.5) * (b / hp.b_beta_init) / (1.0 + b * b / (2.0 * hp.b_beta_init));
            *g += l2 * b;
        }
    }
    // data terms
    let scale = n_total as f64 / batch.len() as f64;
    for &i in batch {
        let x = data.row(i);
        let mut psis = Vec::with_capacity(k);
        let mut lambda = 0.0;
        for (beta, lr) in params.beta.iter().zip(&params.log_r) {
            let psi: f64 = beta.iter().zip(x).map(|(b, v)| b * v).sum();
            lambda += lr.exp() * softplus(psi);
            psis.push(psi);
        }
        let factor = scale
            * if data.label(i) == 1 {
                -1.0 / lambda.max(LAMBDA_FLOOR).exp_m1()
            } else {
                1.0
            };
        for ki in 0..k {
            let r = params.log_r[ki].exp();
            let sig = sigmoid(psis[ki]);
            for (g, &v) in d_beta[ki].iter_mut().zip(x) {
                *g += factor * r * sig * v;
            }
            d_log_r[ki] += factor * r * softplus(psis[ki]);
        }
    }
    (d_beta, d_log_r)
}

struct AdamState {
    m_beta: Vec<Vec<f64>>,
    v_beta: Vec<Vec<f64>>,
    m_log_r: Vec<f64>,
    v_log_r: Vec<f64>,
    step: u64,
}

impl AdamState {
    fn init(dim: usize, k: usize) -> Self {
        AdamState {
            m_beta: vec![vec![0.0; dim]; k],
            v_beta: vec![vec![0.0; dim]; k],
            m_log_r: vec![0.0; k],
            v_log_r: vec![0.0; k],
            step: 0,
        }
    }

    fn update(&mut self, cfg: &MapConfig, lr: f64, params: &mut MapParams, grad: (Vec<Vec<f64>>, Vec<f64>)) {
        let (g_beta, g_log_r) = grad;
        self.step += 1;
        let (b1, b2) = (cfg.moment_decay_1, cfg.moment_decay_2);
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        let apply = |m: &mut f64, v: &mut f64, p: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + cfg.lr_epsilon);
        };
        for ki in 0..params.num_planes() {
            for vi in 0..params.beta[ki].len() {
                apply(
                    &mut self.m_beta[ki][vi],
                    &mut self.v_beta[ki][vi],
                    &mut params.beta[ki][vi],
                    g_beta[ki][vi],
                );
            }
            if !cfg.freeze_r {
                apply(
                    &mut self.m_log_r[ki],
                    &mut self.v_log_r[ki],
                    &mut params.log_r[ki],
                    g_log_r[ki],
                );
            }
        }
    }

    fn retain(&mut self, keep: &[bool]) {
        let mut it = keep.iter();
        self.m_beta.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.v_beta.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.m_log_r.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.v_log_r.retain(|_| *it.next().unwrap());
    }
}

#[derive(Serialize)]
struct TraceRecord {
    iteration: usize,
    k_active: usize,
    train_log_likelihood: f64,
}

fn full_train_ll(params: &MapParams, data: &Dataset) -> f64 {
    (0..data.len())
        .map(|i| {
            let lambda = rate_at(params, data.row(i)).max(LAMBDA_FLOOR);
            crate::model::log_likelihood_of_rate(lambda, data.label(i))
        })
        .sum()
}

/// Bernoulli activation draw over a set of rows, with multinomial
/// resurrection for positive examples left uncovered. Returns per-plane keep
/// flags (some b_ik = 1).
///
/// Sampling b_ik on the current minibatch (rather than the full training set)
/// is what gives pruning teeth: a hyperplane whose weight has decayed to the
/// gamma-prior floor still fires somewhere in a large dataset with high
/// probability, but shows all-zero activations on 100 rows often enough to be
/// removed within a few checkpoints.
fn activation_flags(
    params: &MapParams,
    data: &Dataset,
    rows: &[usize],
    rng: &mut RngStream,
) -> Result<Vec<bool>> {
    let k = params.num_planes();
    let mut covered = vec![false; k];
    let mut p_row = vec![0.0; k];
    for &i in rows {
        let x = data.row(i);
        let mut any = false;
        for ki in 0..k {
            let psi: f64 = params.beta[ki].iter().zip(x).map(|(b, v)| b * v).sum();
            let p = -(-params.log_r[ki].exp() * softplus(psi)).exp_m1();
            p_row[ki] = p;
            if rng.uniform() < p {
                covered[ki] = true;
                any = true;
            }
        }
        if data.label(i) == 1 && !any {
            // resurrect one hyperplane in proportion to its activation
            let total: f64 = p_row.iter().sum();
            let pick = if total > 0.0 {
                sample_multinomial_partition(1, &p_row, rng)?
            } else {
                sample_multinomial_partition(1, &vec![1.0; k], rng)?
            };
            for (c, chosen) in covered.iter_mut().zip(pick) {
                if chosen > 0 {
                    *c = true;
                }
            }
        }
    }
    Ok(covered)
}

/// Adaptive-moment MAP training of one iSHM.
pub fn run_map(
    data: &Dataset,
    hp: &IshmHyperparams,
    cfg: &MapConfig,
    rng: &mut RngStream,
) -> Result<crate::gibbs::TrainResult> {
    if data.count_positive() == 0 {
        return Err(Error::DegenerateData("no positive examples"));
    }
    let n = data.len();
    let dim = data.dim();
    let lr = cfg.base_lr / (4.0 + cfg.layer_index as f64);
    let mut params = MapParams::init_perturbed(dim, cfg.k_max, cfg.init_scale, rng);
    let mut adam = AdamState::init(dim, cfg.k_max);
    let mut warnings = Vec::new();

    // minibatches cycle a reshuffled permutation each epoch
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n; // forces an initial shuffle
    let next_batch = |rng: &mut RngStream, order: &mut Vec<usize>, cursor: &mut usize| {
        let m = cfg.minibatch_size.min(n);
        let mut batch = Vec::with_capacity(m);
        for _ in 0..m {
            if *cursor >= n {
                // Fisher-Yates reshuffle
                for i in (1..n).rev() {
                    let j = (rng.uniform() * (i + 1) as f64) as usize;
                    order.swap(i, j.min(i));
                }
                *cursor = 0;
            }
            batch.push(order[*cursor]);
            *cursor += 1;
        }
        batch
    };

    for batch_idx in 1..=cfg.num_batches {
        let batch = next_batch(rng, &mut order, &mut cursor);
        let prune_now = batch_idx % cfg.prune_every == 0;
        let keep = if prune_now {
            Some(activation_flags(&params, data, &batch, rng)?)
        } else {
            None
        };
        let grad = map_gradient(&params, data, &batch, n, hp, cfg.l2);
        adam.update(cfg, lr, &mut params, grad);
        if let Some(keep) = keep {
            let mut it = keep.iter();
            params.beta.retain(|_| *it.next().unwrap());
            let mut it = keep.iter();
            params.log_r.retain(|_| *it.next().unwrap());
            adam.retain(&keep);
            if params.num_planes() == 0 {
                warnings.push(format!("all hyperplanes pruned at batch {batch_idx}"));
                break;
            }
        }
        if cfg.verbose {
            let record = TraceRecord {
                iteration: batch_idx,
                k_active: params.num_planes(),
                train_log_likelihood: full_train_ll(&params, data),
            };
            eprintln!("{}", serde_json::to_string(&record)?);
        }
    }

    let mut hyperplanes: Vec<Hyperplane> = params
        .beta
        .iter()
        .zip(&params.log_r)
        .map(|(beta, lr)| Hyperplane {
            beta: beta.clone(),
            weight: lr.exp(),
        })
        .collect();
    hyperplanes.sort_by(|a, b| b.weight.total_cmp(&a.weight));
    Ok(crate::gibbs::TrainResult {
        model: IshmModel::new(hyperplanes, dim, hp.clone()),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_two_spirals, standardize};

    #[test]
    fn objective_plug_in_example() {
        // beta = 0, log r = -ln K, one point with y = 0:
        // data term = (N/M) ln 2, prior terms = gamma0 ln K + c0
        let hp = IshmHyperparams::map_defaults(4);
        let data = Dataset::from_rows(&[vec![0.3, -0.4]], &[0]).unwrap();
        let params = MapParams::init(3, 4);
        let n = 10;
        let obj = map_objective(&params, &data, &[0], n, &hp, 0.0);
        let expect = hp.gamma0 * (4.0f64).ln() + hp.c0 + n as f64 * std::f64::consts::LN_2;
        assert!((obj - expect).abs() < 1e-12, "obj {obj} vs {expect}");
        // doubling N doubles the data term only
        let obj2 = map_objective(&params, &data, &[0], 2 * n, &hp, 0.0);
        let data_term = obj - (hp.gamma0 * (4.0f64).ln() + hp.c0);
        assert!((obj2 - obj - data_term).abs() < 1e-12);
    }

    #[test]
    fn gradient_stationary_points() {
        let hp = IshmHyperparams::map_defaults(4);
        let data = Dataset::from_rows(&[vec![0.5, 1.0]], &[0]).unwrap();
        // the r-prior gradient alone vanishes at r = gamma0 / (K c0); isolate it
        // by differencing the gradient at two scalings of the data term weight
        let mut params = MapParams::init(3, 4);
        for lr in params.log_r.iter_mut() {
            *lr = (hp.gamma0 / (4.0 * hp.c0)).ln();
        }
        let (_, g1) = map_gradient(&params, &data, &[0], 1, &hp, 0.0);
        let (_, g2) = map_gradient(&params, &data, &[0], 2, &hp, 0.0);
        for (a, b) in g1.iter().zip(&g2) {
            // prior part = 2*g1 - g2 (data term scales with N)
            let prior = 2.0 * a - b;
            assert!(prior.abs() < 1e-12, "prior grad {prior}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = RngStream::new(21);
        let raw = make_two_spirals(40, 0.02, 1.5, &mut rng);
        let data = standardize(&raw).unwrap();
        let hp = IshmHyperparams::map_defaults(3);
        let batch: Vec<usize> = (0..data.len()).step_by(3).collect();
        let n = data.len();
        for trial in 0..10 {
            let mut params = MapParams::init(3, 3);
            for beta in params.beta.iter_mut() {
                for b in beta.iter_mut() {
                    *b = rng.uniform() * 2.0 - 1.0;
                }
            }
            for lr in params.log_r.iter_mut() {
                *lr = rng.uniform() - 1.5;
            }
            let (g_beta, g_log_r) = map_gradient(&params, &data, &batch, n, &hp, 0.0);
            let h = 1e-5;
            let check = |params: &mut MapParams, ki: usize, vi: Option<usize>, g: f64| {
                let bump = |p: &mut MapParams, delta: f64| match vi {
                    Some(v) => p.beta[ki][v] += delta,
                    None => p.log_r[ki] += delta,
                };
                bump(params, h);
                let up = map_objective(params, &data, &batch, n, &hp, 0.0);
                bump(params, -2.0 * h);
                let down = map_objective(params, &data, &batch, n, &hp, 0.0);
                bump(params, h);
                let fd = (up - down) / (2.0 * h);
                let rel = (g - fd).abs() / fd.abs().max(1.0);
                assert!(rel < 1e-5, "trial {trial} k {ki} {vi:?}: grad {g} fd {fd}");
            };
            for ki in 0..3 {
                for vi in 0..3 {
                    check(&mut params, ki, Some(vi), g_beta[ki][vi]);
                }
                check(&mut params, ki, None, g_log_r[ki]);
            }
        }
    }

    #[test]
    fn beta_zero_gradient_direction() {
        // at beta = 0, sigma(0) = 1/2, so the data part of d beta_k is
        // factor * (r_k / 2) * x
        let hp = IshmHyperparams::map_defaults(2);
        let data = Dataset::from_rows(&[vec![2.0, -3.0]], &[0]).unwrap();
        let params = MapParams::init(3, 2);
        let (g_beta, _) = map_gradient(&params, &data, &[0], 1, &hp, 0.0);
        let r = 0.5;
        for (g, x) in g_beta[0].iter().zip(data.row(0)) {
            assert!((g - r / 2.0 * x).abs() < 1e-12);
        }
    }

    #[test]
    fn objective_trend_decreases() {
        let mut rng = RngStream::new(22);
        let raw = make_two_spirals(100, 0.02, 1.5, &mut rng);
        let data = standardize(&raw).unwrap();
        let hp = IshmHyperparams::map_defaults(8);
        let cfg = MapConfig {
            num_batches: 400,
            prune_every: 200,
            k_max: 8,
            ..MapConfig::default()
        };
        // re-run the optimizer manually to record the full-data objective
        let n = data.len();
        let all: Vec<usize> = (0..n).collect();
        let mut params = MapParams::init(3, 8);
        let mut adam = AdamState::init(3, 8);
        let lr = cfg.base_lr / 5.0;
        let mut objs = Vec::new();
        let mut order: Vec<usize> = (0..n).collect();
        for step in 0..cfg.num_batches {
            // simple rotation schedule is enough for a trend check
            let batch: Vec<usize> =
                (0..cfg.minibatch_size).map(|j| order[(step * 37 + j) % n]).collect();
            let grad = map_gradient(&params, &data, &batch, n, &hp, 0.0);
            adam.update(&cfg, lr, &mut params, grad);
            objs.push(map_objective(&params, &data, &all, n, &hp, 0.0));
            order.rotate_left(1);
        }
        let tenth = objs.len() / 10;
        let first: f64 = objs[..tenth].iter().sum::<f64>() / tenth as f64;
        let last: f64 = objs[objs.len() - tenth..].iter().sum::<f64>() / tenth as f64;
        assert!(last < first, "objective trend: first {first}, last {last}");
    }

    #[test]
    fn deterministic_under_seed() {
        let mut rng = RngStream::new(23);
        let data = standardize(&make_two_spirals(50, 0.02, 1.5, &mut rng)).unwrap();
        let hp = IshmHyperparams::map_defaults(5);
        let cfg = MapConfig {
            num_batches: 200,
            prune_every: 100,
            k_max: 5,
            ..MapConfig::default()
        };
        let a = run_map(&data, &hp, &cfg, &mut RngStream::new(31)).unwrap();
        let b = run_map(&data, &hp, &cfg, &mut RngStream::new(31)).unwrap();
        assert_eq!(a.model.num_active(), b.model.num_active());
        for (ha, hb) in a.model.hyperplanes.iter().zip(&b.model.hyperplanes) {
            assert_eq!(ha.weight, hb.weight);
            assert_eq!(ha.beta, hb.beta);
        }
    }

    #[test]
    fn r_stays_positive() {
        let mut rng = RngStream::new(24);
        let data = standardize(&make_two_spirals(50, 0.02, 1.5, &mut rng)).unwrap();
        let hp = IshmHyperparams::map_defaults(6);
        let cfg = MapConfig {
            num_batches: 300,
            prune_every: 150,
            k_max: 6,
            ..MapConfig::default()
        };
        let result = run_map(&data, &hp, &cfg, &mut RngStream::new(32)).unwrap();
        assert!(result.model.hyperplanes.iter().all(|h| h.weight > 0.0));
    }
}
