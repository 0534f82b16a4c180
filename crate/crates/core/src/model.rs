//! The infinite support hyperplane machine as a frozen classifier: likelihood,
//! prediction, polytope geometry, and subtype extraction. Inference lives in
//! the engine modules.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// One atom of the gamma process: coefficient vector plus positive weight.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Hyperplane {
    /// Coefficients, length D, with the bias coefficient at index 0.
    pub beta: Vec<f64>,
    /// Atom weight r > 0.
    pub weight: f64,
}

/// Hyperparameters of one iSHM.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IshmHyperparams {
    pub gamma0: f64,
    pub c0: f64,
    pub a0: f64,
    pub b0: f64,
    pub e0: f64,
    pub f0: f64,
    pub a_beta: f64,
    pub b_beta_init: f64,
    pub k_max: usize,
}

impl IshmHyperparams {
    /// Defaults for Gibbs sampling: a0 = b0 = 0.01, e0 = f0 = 1, a_beta = 1e-6.
    pub fn gibbs_defaults(k_max: usize) -> Self {
        IshmHyperparams {
            gamma0: 1.0,
            c0: 1.0,
            a0: 0.01,
            b0: 0.01,
            e0: 1.0,
            f0: 1.0,
            a_beta: 1e-6,
            b_beta_init: 1.0,
            k_max,
        }
    }

    /// Defaults for MAP inference: gamma0 = c0 = 1 and a_beta = b_beta = 1e-6,
    /// all held fixed by the optimizer.
    pub fn map_defaults(k_max: usize) -> Self {
        IshmHyperparams {
            b_beta_init: 1e-6,
            ..IshmHyperparams::gibbs_defaults(k_max)
        }
    }
}

/// A truncated iSHM: the active hyperplanes of one trained classifier.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IshmModel {
    pub hyperplanes: Vec<Hyperplane>,
    pub input_dim: usize,
    pub hyperparams: IshmHyperparams,
    /// Whether this model was trained on the flipped labels y* = 1 - y.
    pub label_flipped: bool,
}

/// A data subtype: the activation-weighted mean of the training covariates
/// for one hyperplane.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Subtype {
    /// Covariate prototype, length D - 1 (bias coordinate dropped).
    pub prototype: Vec<f64>,
    /// Total activation mass behind the prototype.
    pub mass: f64,
    pub hyperplane_index: usize,
}

/// Overflow-safe softplus ln(1 + e^z).
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Logistic sigmoid.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Rates above this are clamped before exponentiation; the resulting
/// probability is exactly 1 in floating point anyway.
const RATE_CLAMP: f64 = 1e3;

impl IshmModel {
    pub fn new(hyperplanes: Vec<Hyperplane>, input_dim: usize, hyperparams: IshmHyperparams) -> Self {
        IshmModel {
            hyperplanes,
            input_dim,
            hyperparams,
            label_flipped: false,
        }
    }

    pub fn num_active(&self) -> usize {
        self.hyperplanes.len()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// The Poisson rate lambda = sum_k r_k softplus(beta_k' x).
    pub fn rate(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self
            .hyperplanes
            .iter()
            .map(|h| h.weight * softplus(dot(&h.beta, x)))
            .sum())
    }

    /// P(y = 1 | x) = 1 - e^{-lambda} under the Bernoulli-Poisson link.
    pub fn prob_one(&self, x: &[f64]) -> Result<f64> {
        let lambda = self.rate(x)?.min(RATE_CLAMP);
        Ok(-(-lambda).exp_m1())
    }

    /// Log-likelihood of one labeled point. Returns -inf (never NaN) for
    /// y = 1 with a zero rate.
    pub fn log_likelihood(&self, x: &[f64], y: u8) -> Result<f64> {
        let lambda = self.rate(x)?;
        Ok(log_likelihood_of_rate(lambda, y))
    }

    /// Number of violated polytope inequalities beta_k' x <= ln[(1 - p0)^{-1/r_k} - 1].
    /// Zero means x lies inside the bounding convex polytope.
    pub fn polytope_margin(&self, x: &[f64], p0: f64) -> Result<usize> {
        if !(p0 > 0.0 && p0 < 1.0) {
            return Err(Error::ParameterDomain {
                name: "p0",
                value: p0,
            });
        }
        self.check_dim(x)?;
        let neg_log = -(1.0 - p0).ln(); // -ln(1 - p0) > 0
        Ok(self
            .hyperplanes
            .iter()
            .filter(|h| {
                let t = neg_log / h.weight;
                // threshold = ln(e^t - 1), computed stably
                let threshold = if t > 30.0 { t } else { t.exp_m1().ln() };
                dot(&h.beta, x) > threshold
            })
            .count())
    }

    /// Per-hyperplane activation-weighted covariate prototypes over a training
    /// set. Hyperplanes with negligible total activation are omitted, with a
    /// warning record of their indices.
    pub fn extract_subtypes(&self, data: &Dataset) -> Result<(Vec<Subtype>, Vec<usize>)> {
        if data.dim() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: data.dim(),
            });
        }
        let v = self.input_dim - 1;
        let mut subtypes = Vec::new();
        let mut omitted = Vec::new();
        for (k, h) in self.hyperplanes.iter().enumerate() {
            let mut mass = 0.0;
            let mut proto = vec![0.0; v];
            for i in 0..data.len() {
                let x = data.row(i);
                let p = -(-h.weight * softplus(dot(&h.beta, x))).exp_m1();
                mass += p;
                for (pv, xv) in proto.iter_mut().zip(&x[1..]) {
                    *pv += p * xv;
                }
            }
            if mass < 1e-12 {
                omitted.push(k);
                continue;
            }
            for pv in proto.iter_mut() {
                *pv /= mass;
            }
            subtypes.push(Subtype {
                prototype: proto,
                mass,
                hyperplane_index: k,
            });
        }
        Ok((subtypes, omitted))
    }
}

/// Log-likelihood of a rate/label pair: ln(1 - e^{-lambda}) for y = 1
/// (stable via expm1) and -lambda for y = 0.
pub fn log_likelihood_of_rate(lambda: f64, y: u8) -> f64 {
    if y == 1 {
        if lambda <= 0.0 {
            f64::NEG_INFINITY
        } else {
            (-(-lambda).exp_m1()).ln()
        }
    } else {
        -lambda
    }
}

/// Label-symmetric pair prediction: ((1 - e^{-lambda}) + e^{-lambda*}) / 2,
/// where lambda* comes from the model trained on flipped labels.
pub fn pair_prob_one(pos: &IshmModel, neg: &IshmModel, x: &[f64]) -> Result<f64> {
    if pos.input_dim != neg.input_dim {
        return Err(Error::DimensionMismatch {
            expected: pos.input_dim,
            got: neg.input_dim,
        });
    }
    let p_pos = pos.prob_one(x)?;
    let p_neg = neg.prob_one(x)?;
    Ok((p_pos + (1.0 - p_neg)) / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn hp() -> IshmHyperparams {
        IshmHyperparams::gibbs_defaults(20)
    }

    fn single(beta: Vec<f64>, weight: f64) -> IshmModel {
        let d = beta.len();
        IshmModel::new(vec![Hyperplane { beta, weight }], d, hp())
    }

    #[test]
    fn softplus_values() {
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(softplus(1000.0), 1000.0);
        assert_eq!(softplus(-1000.0), 0.0);
    }

    #[test]
    fn rate_examples() {
        let m = single(vec![0.0, 0.0], 1.0);
        assert!((m.rate(&[1.0, 0.0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let empty = IshmModel::new(vec![], 2, hp());
        assert_eq!(empty.rate(&[1.0, 0.0]).unwrap(), 0.0);
        let m2 = IshmModel::new(
            vec![
                Hyperplane { beta: vec![0.0, 0.0], weight: 1.0 },
                Hyperplane { beta: vec![0.0, 0.0], weight: 2.0 },
            ],
            2,
            hp(),
        );
        let expect = 3.0 * std::f64::consts::LN_2;
        assert!((m2.rate(&[1.0, 5.0]).unwrap() - expect).abs() < 1e-12);
        assert!(m2.rate(&[1.0]).is_err());
    }

    #[test]
    fn prob_one_logistic_identity() {
        // K = 1, r = 1: prob_one equals the logistic sigmoid exactly
        let mut rng = RngStream::new(11);
        for _ in 0..1000 {
            let beta: Vec<f64> = (0..4).map(|_| rng.uniform() * 8.0 - 4.0).collect();
            let mut x: Vec<f64> = (0..4).map(|_| rng.uniform() * 8.0 - 4.0).collect();
            x[0] = 1.0;
            let m = single(beta.clone(), 1.0);
            let z = beta.iter().zip(&x).map(|(b, v)| b * v).sum::<f64>();
            assert!((m.prob_one(&x).unwrap() - sigmoid(z)).abs() < 1e-12);
        }
    }

    #[test]
    fn prob_one_extremes() {
        let m = single(vec![0.0, 0.0], 1.0);
        assert!((m.prob_one(&[1.0, 0.0]).unwrap() - 0.5).abs() < 1e-15);
        let empty = IshmModel::new(vec![], 2, hp());
        assert_eq!(empty.prob_one(&[1.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn log_likelihood_values() {
        assert_eq!(log_likelihood_of_rate(2.0, 0), -2.0);
        let l1 = log_likelihood_of_rate(std::f64::consts::LN_2, 1);
        assert!((l1 - (0.5f64).ln()).abs() < 1e-12);
        let tiny = log_likelihood_of_rate(1e-8, 1);
        assert!(tiny.is_finite());
        // series: ln(1 - e^{-lambda}) ~ ln(lambda) for small lambda
        assert!((tiny - (1e-8f64).ln()).abs() < 1e-6);
        assert_eq!(log_likelihood_of_rate(0.0, 1), f64::NEG_INFINITY);
    }

    #[test]
    fn log_likelihood_never_nan() {
        for lambda in [1e-300, 1e-12, 0.5, 10.0, 1e6] {
            for y in [0, 1] {
                assert!(!log_likelihood_of_rate(lambda, y).is_nan());
            }
        }
    }

    #[test]
    fn pair_prob_one_symmetry() {
        let big = single(vec![1000.0, 0.0], 5.0);
        let zero = IshmModel::new(vec![], 2, hp());
        let x = [1.0, 0.0];
        // lambda = 0, lambda* = huge => 0
        assert!(pair_prob_one(&zero, &big, &x).unwrap() < 1e-12);
        // lambda = huge, lambda* = 0 => 1
        assert!((pair_prob_one(&big, &zero, &x).unwrap() - 1.0).abs() < 1e-12);
        // lambda = lambda* = ln 2 => 0.5
        let m = single(vec![0.0, 0.0], 1.0);
        assert!((pair_prob_one(&m, &m, &x).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn polytope_margin_half_threshold() {
        // p0 = 0.5, r = 1: threshold is ln(2 - 1) = 0, violation iff beta'x > 0
        let m = single(vec![0.0, 1.0], 1.0);
        assert_eq!(m.polytope_margin(&[1.0, 0.5], 0.5).unwrap(), 1);
        assert_eq!(m.polytope_margin(&[1.0, -0.5], 0.5).unwrap(), 0);
        let empty = IshmModel::new(vec![], 2, hp());
        assert_eq!(empty.polytope_margin(&[1.0, 0.0], 0.5).unwrap(), 0);
        assert!(m.polytope_margin(&[1.0, 0.0], 1.5).is_err());
    }

    #[test]
    fn polytope_bound_direction() {
        // prob_one <= p0 implies zero violated inequalities
        let mut rng = RngStream::new(12);
        for _ in 0..10_000 {
            let k = 1 + (rng.uniform() * 3.0) as usize;
            let hyperplanes: Vec<Hyperplane> = (0..k)
                .map(|_| Hyperplane {
                    beta: (0..3).map(|_| rng.uniform() * 4.0 - 2.0).collect(),
                    weight: rng.uniform() * 2.0 + 0.01,
                })
                .collect();
            let m = IshmModel::new(hyperplanes, 3, hp());
            let x = [1.0, rng.uniform() * 6.0 - 3.0, rng.uniform() * 6.0 - 3.0];
            for p0 in [0.3, 0.5, 0.8] {
                if m.prob_one(&x).unwrap() <= p0 {
                    assert_eq!(m.polytope_margin(&x, p0).unwrap(), 0);
                }
            }
        }
    }

    #[test]
    fn label_asymmetry() {
        // negating beta does not complement the probability
        let m = single(vec![0.3, 1.2, -0.7], 2.0);
        let neg = single(vec![-0.3, -1.2, 0.7], 2.0);
        let x = [1.0, 0.4, 0.9];
        let p = m.prob_one(&x).unwrap();
        let q = neg.prob_one(&x).unwrap();
        assert!((p - (1.0 - q)).abs() > 1e-3);
    }

    #[test]
    fn prob_monotone_in_weight() {
        let x = [1.0, 0.7];
        let mut prev = 0.0;
        for w in [0.1, 0.5, 1.0, 2.0, 10.0] {
            let p = single(vec![0.2, 0.3], w).prob_one(&x).unwrap();
            assert!(p >= prev && (0.0..=1.0).contains(&p));
            prev = p;
        }
    }

    #[test]
    fn subtypes_basic() {
        let data = Dataset::from_rows(&[vec![2.0, 3.0]], &[1]).unwrap();
        let m = single(vec![0.1, 0.2, 0.3], 1.0);
        let (subs, omitted) = m.extract_subtypes(&data).unwrap();
        assert!(omitted.is_empty());
        assert_eq!(subs[0].prototype, vec![2.0, 3.0]);

        // symmetric points with equal activation: prototype at the midpoint
        let data2 = Dataset::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]], &[1, 1]).unwrap();
        let m2 = single(vec![0.5, 0.0, 0.0], 1.0);
        let (subs2, _) = m2.extract_subtypes(&data2).unwrap();
        assert!(subs2[0].prototype[0].abs() < 1e-12);

        // vanishing weight: subtype omitted
        let m3 = single(vec![0.5, 0.0, 0.0], 1e-15);
        let (subs3, omitted3) = m3.extract_subtypes(&data2).unwrap();
        assert!(subs3.is_empty());
        assert_eq!(omitted3, vec![0]);
    }
}
