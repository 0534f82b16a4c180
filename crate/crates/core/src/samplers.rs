//! Distribution samplers used by the Gibbs engine.
//!
//! Every sampler is a pure function of its parameters and the stream state,
//! so results are reproducible given a seed.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Binomial, Distribution, Gamma, Normal, Poisson};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Draw from Gamma(shape, scale), mean `shape * scale`.
///
/// Shapes below one are handled with the boosting identity
/// Gamma(a) = Gamma(a+1) * U^{1/a}, which avoids rejection-rate blowup at the
/// 1e-6-scale shapes used by the weight priors.
pub fn sample_gamma(shape: f64, scale: f64, rng: &mut RngStream) -> Result<f64> {
    if !(shape > 0.0) {
        return Err(Error::ParameterDomain {
            name: "shape",
            value: shape,
        });
    }
    if !(scale > 0.0) {
        return Err(Error::ParameterDomain {
            name: "scale",
            value: scale,
        });
    }
    if shape < 1.0 {
        let g = Gamma::new(shape + 1.0, scale).expect("valid gamma params");
        let u = rng.uniform_open();
        Ok(g.sample(rng) * u.powf(1.0 / shape))
    } else {
        let g = Gamma::new(shape, scale).expect("valid gamma params");
        Ok(g.sample(rng))
    }
}

/// Draw from the zero-truncated Poisson distribution: Poisson(rate) given the
/// outcome is at least one. Rates below 1e-12 return 1, the limit distribution.
pub fn sample_truncated_poisson(rate: f64, rng: &mut RngStream) -> Result<u64> {
    if !(rate > 0.0) {
        return Err(Error::ParameterDomain {
            name: "rate",
            value: rate,
        });
    }
    if rate < 1e-12 {
        return Ok(1);
    }
    if rate <= 30.0 {
        // Sequential inversion: p(1) = rate / (e^rate - 1), p(k+1) = p(k) * rate / (k+1).
        let u = rng.uniform();
        let mut k = 1u64;
        let mut p = rate / rate.exp_m1();
        let mut cum = p;
        while u > cum && k < 1000 {
            k += 1;
            p *= rate / k as f64;
            cum += p;
        }
        Ok(k)
    } else {
        // Rejection from the untruncated Poisson; acceptance probability > 0.99.
        let pois = Poisson::new(rate).expect("valid poisson rate");
        loop {
            let m = pois.sample(rng) as u64;
            if m >= 1 {
                return Ok(m);
            }
        }
    }
}

/// Draw from the Chinese restaurant table distribution:
/// l = sum over n = 1..count of Bernoulli(concentration / (concentration + n - 1)).
pub fn sample_crt(count: u64, concentration: f64, rng: &mut RngStream) -> Result<u64> {
    if !(concentration > 0.0) {
        return Err(Error::ParameterDomain {
            name: "concentration",
            value: concentration,
        });
    }
    let mut l = 0u64;
    for n in 1..=count {
        if rng.uniform() * (concentration + (n - 1) as f64) < concentration {
            l += 1;
        }
    }
    Ok(l)
}

/// Analytic mean of PG(shape, tilt).
fn pg_mean(shape: f64, tilt: f64) -> f64 {
    let c = tilt.abs();
    if c < 1e-8 {
        shape / 4.0
    } else {
        shape / (2.0 * c) * (c / 2.0).tanh()
    }
}

/// Analytic variance of PG(shape, tilt).
fn pg_variance(shape: f64, tilt: f64) -> f64 {
    let c = tilt.abs();
    if c < 1e-4 {
        shape / 24.0
    } else {
        let sech2 = {
            let ch = (c / 2.0).cosh();
            1.0 / (ch * ch)
        };
        shape / (2.0 * c * c * c) * (c / 2.0).tanh() - shape / (4.0 * c * c) * sech2
    }
}

const PG_TRUNCATION: usize = 5;

/// Approximate draw from the Polya-Gamma distribution PG(shape, tilt).
///
/// Uses the infinite-sum-of-gammas representation
/// PG(b, c) = (1 / 2 pi^2) * sum_k g_k / ((k - 1/2)^2 + c^2 / (4 pi^2)),
/// g_k ~ Gamma(b, 1), truncated at five terms, with the discarded tail
/// replaced by a single gamma variate matching the tail's analytic mean and
/// variance.
pub fn sample_polya_gamma(shape: f64, tilt: f64, rng: &mut RngStream) -> Result<f64> {
    if !(shape > 0.0) {
        return Err(Error::ParameterDomain {
            name: "shape",
            value: shape,
        });
    }
    let pi2 = std::f64::consts::PI * std::f64::consts::PI;
    let c2 = tilt * tilt / (4.0 * pi2);
    let mut sum = 0.0;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for k in 1..=PG_TRUNCATION {
        let d = {
            let h = k as f64 - 0.5;
            h * h + c2
        };
        sum += sample_gamma(shape, 1.0, rng)? / d;
        s1 += 1.0 / d;
        s2 += 1.0 / (d * d);
    }
    sum /= 2.0 * pi2;
    let tail_mean = pg_mean(shape, tilt) - shape / (2.0 * pi2) * s1;
    let tail_var = pg_variance(shape, tilt) - shape / (4.0 * pi2 * pi2) * s2;
    if tail_mean > 1e-300 && tail_var > 1e-300 {
        // tail_mean^2 can underflow to 0 for tiny shapes even when the guard
        // above passes; skip the (negligible) tail correction in that case
        let tail_shape = tail_mean * tail_mean / tail_var;
        let tail_scale = tail_var / tail_mean;
        if tail_shape > 0.0 && tail_shape.is_finite() && tail_scale.is_finite() {
            sum += sample_gamma(tail_shape, tail_scale, rng)?;
        }
    }
    Ok(sum)
}

/// Partition `total` into a vector distributed Multinomial(total, weights / sum).
pub fn sample_multinomial_partition(
    total: u64,
    weights: &[f64],
    rng: &mut RngStream,
) -> Result<Vec<u64>> {
    assert!(!weights.is_empty(), "weights must be non-empty");
    let mut out = vec![0u64; weights.len()];
    if total == 0 {
        return Ok(out);
    }
    let mut rest: f64 = weights.iter().sum();
    if !(rest > 0.0) {
        return Err(Error::DegenerateWeights { total });
    }
    let mut remaining = total;
    let last = weights.len() - 1;
    for (j, &w) in weights.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if j == last {
            out[j] = remaining;
            break;
        }
        let p = if rest > w { (w / rest).clamp(0.0, 1.0) } else { 1.0 };
        let draw = Binomial::new(remaining, p)
            .expect("valid binomial params")
            .sample(rng);
        out[j] = draw;
        remaining -= draw;
        rest -= w;
    }
    Ok(out)
}

/// Draw from Normal(mean = precision^-1 * shift, covariance = precision^-1)
/// via a Cholesky factorization of the precision matrix; no explicit inverse.
///
/// A non-positive-definite factorization is retried once with diagonal jitter
/// 1e-8 * trace / D before failing.
pub fn sample_mvn_from_precision(
    precision: &DMatrix<f64>,
    shift: &DVector<f64>,
    rng: &mut RngStream,
) -> Result<DVector<f64>> {
    let d = precision.nrows();
    assert_eq!(precision.ncols(), d, "precision must be square");
    assert_eq!(shift.len(), d, "shift length must match precision");
    let chol = match precision.clone().cholesky() {
        Some(c) => c,
        None => {
            let jitter = 1e-8 * precision.trace() / d as f64;
            let mut jittered = precision.clone();
            for v in 0..d {
                jittered[(v, v)] += jitter;
            }
            jittered.cholesky().ok_or_else(|| Error::NumericalStability {
                context: format!("precision matrix ({d}x{d}) not positive definite after jitter"),
            })?
        }
    };
    let mean = chol.solve(shift);
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal params");
    let z = DVector::from_iterator(d, (0..d).map(|_| std_normal.sample(rng)));
    // L^T x = z  =>  x ~ N(0, precision^-1)
    let x = chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::NumericalStability {
            context: "singular Cholesky factor".to_string(),
        })?;
    Ok(mean + x)
}
