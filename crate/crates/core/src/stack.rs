//! Greedy layer-wise PBDN construction: iSHM pairs trained one layer at a
//! time, feature propagation, AIC-style depth selection, and prediction
//! through the selected stack.

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Standardization};
use crate::error::{Error, Result};
use crate::gibbs::{run_gibbs, GibbsConfig};
use crate::map::{run_map, MapConfig};
use crate::model::{pair_prob_one, softplus, IshmHyperparams, IshmModel};
use crate::rng::RngStream;

/// Two iSHMs trained under opposite labelings; one PBDN layer.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IshmPair {
    pub model_pos: IshmModel,
    pub model_neg: IshmModel,
    pub layer_index: usize,
}

impl IshmPair {
    /// Combined active width: hyperplanes of both models, model_pos first.
    pub fn width(&self) -> usize {
        self.model_pos.num_active() + self.model_neg.num_active()
    }

    pub fn input_dim(&self) -> usize {
        self.model_pos.input_dim
    }

    pub fn prob_one(&self, x: &[f64]) -> Result<f64> {
        pair_prob_one(&self.model_pos, &self.model_neg, x)
    }
}

/// How the next layer's input is assembled from the previous features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Concatenation {
    /// x^{(t+1)} = [1, hidden^{(t)}, hidden^{(t+1)}]
    #[default]
    Full,
    /// x^{(t+1)} = [1, hidden^{(t+1)}]
    HiddenOnly,
    /// x^{(t+1)} = [x^{(t)}, hidden^{(t+1)}]
    Cumulative,
}

/// Depth-selection criterion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Criterion {
    Aic,
    AicEps(f64),
}

/// Which inference engine trains each iSHM.
#[derive(Clone, Debug)]
pub enum EngineConfig {
    Gibbs(GibbsConfig),
    Map(MapConfig),
}

const STACK_FORMAT_VERSION: u32 = 1;

/// A greedily built stack of iSHM pairs with its width/depth bookkeeping.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PbdnStack {
    pub version: u32,
    pub hyperparams: IshmHyperparams,
    pub pairs: Vec<IshmPair>,
    /// K_1 = V, then the combined width of each trained pair.
    pub layer_widths: Vec<usize>,
    pub selected_depth: usize,
    pub criterion_trace: Vec<(usize, f64)>,
    pub concatenation: Concatenation,
    /// Standardization applied to the training covariates, replayed at
    /// prediction time by the CLI.
    pub standardization: Option<Standardization>,
}

/// Transform one input vector through a pair: the new hidden units are
/// softplus activations over the pair's combined hyperplanes (model_pos's
/// first), and the output is [1, previous hidden units, new hidden units].
pub fn propagate(pair: &IshmPair, x_prev: &[f64], x_tilde_prev: &[f64]) -> Result<Vec<f64>> {
    let (_, hidden) = propagate_with(pair, x_prev, x_tilde_prev, Concatenation::Full)?;
    let mut out = Vec::with_capacity(1 + x_tilde_prev.len() + hidden.len());
    out.push(1.0);
    out.extend_from_slice(x_tilde_prev);
    out.extend_from_slice(&hidden);
    Ok(out)
}

/// Mode-aware propagation; returns (next input vector, new hidden units).
fn propagate_with(
    pair: &IshmPair,
    x_prev: &[f64],
    x_tilde_prev: &[f64],
    mode: Concatenation,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if x_prev.len() != pair.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: pair.input_dim(),
            got: x_prev.len(),
        });
    }
    let hidden: Vec<f64> = pair
        .model_pos
        .hyperplanes
        .iter()
        .chain(&pair.model_neg.hyperplanes)
        .map(|h| softplus(h.beta.iter().zip(x_prev).map(|(b, v)| b * v).sum()))
        .collect();
    let next = match mode {
        Concatenation::Full => {
            let mut out = Vec::with_capacity(1 + x_tilde_prev.len() + hidden.len());
            out.push(1.0);
            out.extend_from_slice(x_tilde_prev);
            out.extend_from_slice(&hidden);
            out
        }
        Concatenation::HiddenOnly => {
            let mut out = Vec::with_capacity(1 + hidden.len());
            out.push(1.0);
            out.extend_from_slice(&hidden);
            out
        }
        Concatenation::Cumulative => {
            let mut out = Vec::with_capacity(x_prev.len() + hidden.len());
            out.extend_from_slice(x_prev);
            out.extend_from_slice(&hidden);
            out
        }
    };
    Ok((next, hidden))
}

impl PbdnStack {
    /// Original covariate dimension V.
    pub fn covariate_dim(&self) -> usize {
        self.layer_widths[0]
    }

    /// The input vector x^{(depth)} for one covariate row, propagated through
    /// pairs 1..depth-1.
    pub fn features_at_depth(&self, x: &[f64], depth: usize) -> Result<Vec<f64>> {
        if x.len() != self.covariate_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.covariate_dim(),
                got: x.len(),
            });
        }
        let mut current = Vec::with_capacity(x.len() + 1);
        current.push(1.0);
        current.extend_from_slice(x);
        let mut tilde = x.to_vec();
        for pair in &self.pairs[..depth - 1] {
            let (next, hidden) = propagate_with(pair, &current, &tilde, self.concatenation)?;
            current = next;
            tilde = hidden;
        }
        Ok(current)
    }

    /// Pair-averaged class-1 probability at the selected depth.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let depth = self.selected_depth.max(1);
        let features = self.features_at_depth(x, depth)?;
        self.pairs[depth - 1].prob_one(&features)
    }

    /// Hyperplane-equivalent prediction cost, normalized so logistic
    /// regression costs one.
    pub fn complexity(&self) -> f64 {
        let v = self.covariate_dim();
        let widths = &self.layer_widths; // widths[t-1] = K_t, K_0 = 0
        (1..=self.selected_depth)
            .map(|t| {
                let k_prev = if t >= 2 { widths[t - 2] } else { 0 };
                let k_t = widths[t - 1];
                let k_next = widths[t];
                ((k_prev + k_t + 1) * k_next) as f64 / (v + 1) as f64
            })
            .sum()
    }

    /// Criterion log-likelihood term: pair `depth`'s two models evaluated at
    /// the propagated features, rates floored at 1e-12 to keep the criterion
    /// finite.
    fn pair_log_likelihood(&self, data: &Dataset, depth: usize) -> Result<f64> {
        let pair = &self.pairs[depth - 1];
        let mut total = 0.0;
        for i in 0..data.len() {
            let x = self.features_at_depth(&data.row(i)[1..], depth)?;
            let y = data.label(i);
            let lambda_pos = pair.model_pos.rate(&x)?;
            let lambda_neg = pair.model_neg.rate(&x)?;
            total += clamped_ll(lambda_pos, y) + clamped_ll(lambda_neg, 1 - y);
        }
        Ok(total)
    }

    /// The forward model selection criterion at a given depth: per-layer
    /// parameter costs plus output weights minus twice the combined pair
    /// log-likelihood.
    pub fn aic(&self, data: &Dataset, depth: usize) -> Result<f64> {
        assert!(depth >= 1 && depth <= self.pairs.len());
        let widths = &self.layer_widths;
        let cost: usize = (1..=depth).map(|t| 2 * (widths[t - 1] + 1) * widths[t]).sum();
        Ok(cost as f64 + 2.0 * widths[depth] as f64 - 2.0 * self.pair_log_likelihood(data, depth)?)
    }

    /// Sparsity-aware criterion: per-layer parameter cost counts coefficient
    /// entries above epsilon times the matrix's maximum absolute entry.
    pub fn aic_eps(&self, data: &Dataset, depth: usize, epsilon: f64) -> Result<f64> {
        assert!(depth >= 1 && depth <= self.pairs.len());
        assert!(epsilon > 0.0 && epsilon <= 1.0, "need 0 < epsilon <= 1");
        let mut cost = 0usize;
        for pair in &self.pairs[..depth] {
            for model in [&pair.model_pos, &pair.model_neg] {
                cost += 2 * count_above_threshold(model, epsilon);
            }
        }
        Ok(cost as f64 + 2.0 * self.layer_widths[depth] as f64
            - 2.0 * self.pair_log_likelihood(data, depth)?)
    }

    pub fn criterion_value(&self, data: &Dataset, depth: usize, criterion: Criterion) -> Result<f64> {
        match criterion {
            Criterion::Aic => self.aic(data, depth),
            Criterion::AicEps(eps) => self.aic_eps(data, depth, eps),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let stack: PbdnStack = serde_json::from_str(text)?;
        if stack.version != STACK_FORMAT_VERSION {
            return Err(Error::Parse {
                line: 0,
                message: format!("unsupported stack format version {}", stack.version),
            });
        }
        Ok(stack)
    }
}

fn clamped_ll(lambda: f64, y: u8) -> f64 {
    if y == 1 {
        (-(-lambda.max(1e-12)).exp_m1()).ln()
    } else {
        -lambda
    }
}

fn count_above_threshold(model: &IshmModel, epsilon: f64) -> usize {
    let max_abs = model
        .hyperplanes
        .iter()
        .flat_map(|h| h.beta.iter())
        .fold(0.0f64, |acc, b| acc.max(b.abs()));
    if max_abs == 0.0 {
        return 0;
    }
    model
        .hyperplanes
        .iter()
        .flat_map(|h| h.beta.iter())
        .filter(|b| b.abs() > epsilon * max_abs)
        .count()
}

/// Options for greedy stack construction.
#[derive(Clone, Debug)]
pub struct GrowOptions {
    pub criterion: Criterion,
    pub max_layers: usize,
    pub concatenation: Concatenation,
}

/// Greedily train iSHM pairs, one layer at a time, until the selection
/// criterion rises or `max_layers` is reached.
pub fn grow(
    data: &Dataset,
    hp: &IshmHyperparams,
    engine: &EngineConfig,
    opts: &GrowOptions,
    rng: &mut RngStream,
) -> Result<(PbdnStack, Vec<String>)> {
    assert!(opts.max_layers >= 1);
    let v = data.covariate_dim();
    let mut stack = PbdnStack {
        version: STACK_FORMAT_VERSION,
        hyperparams: hp.clone(),
        pairs: Vec::new(),
        layer_widths: vec![v],
        selected_depth: 0,
        criterion_trace: Vec::new(),
        concatenation: opts.concatenation,
        standardization: data.standardization.clone(),
    };
    let mut warnings = Vec::new();

    // per-row current features and hidden units
    let mut current: Vec<Vec<f64>> = (0..data.len())
        .map(|i| {
            let mut row = Vec::with_capacity(v + 1);
            row.push(1.0);
            row.extend_from_slice(&data.row(i)[1..]);
            row
        })
        .collect();
    let mut tilde: Vec<Vec<f64>> = (0..data.len()).map(|i| data.row(i)[1..].to_vec()).collect();

    let mut prev_criterion = f64::INFINITY;
    for t in 1..=opts.max_layers {
        let layer_rows: Vec<Vec<f64>> = current.iter().map(|r| r[1..].to_vec()).collect();
        let layer_data = Dataset::from_rows(&layer_rows, data.labels())?;
        let flipped = layer_data.flipped_labels();

        let train = |ds: &Dataset, rng: &mut RngStream| -> Result<crate::gibbs::TrainResult> {
            match engine {
                EngineConfig::Gibbs(cfg) => run_gibbs(ds, hp, cfg, rng),
                EngineConfig::Map(cfg) => {
                    let layer_cfg = MapConfig {
                        layer_index: t,
                        ..cfg.clone()
                    };
                    run_map(ds, hp, &layer_cfg, rng)
                }
            }
        };
        let mut pos = train(&layer_data, &mut rng.split(2 * t as u64))?;
        let mut neg = train(&flipped, &mut rng.split(2 * t as u64 + 1))?;
        neg.model.label_flipped = true;
        warnings.append(&mut pos.warnings);
        warnings.append(&mut neg.warnings);

        let pair = IshmPair {
            model_pos: pos.model,
            model_neg: neg.model,
            layer_index: t,
        };
        if pair.width() == 0 {
            warnings.push(format!("layer {t} trained to zero hyperplanes; stopping"));
            stack.selected_depth = t - 1;
            break;
        }
        stack.layer_widths.push(pair.width());
        stack.pairs.push(pair);

        let criterion = stack.criterion_value(data, t, opts.criterion)?;
        stack.criterion_trace.push((t, criterion));
        if criterion < prev_criterion {
            stack.selected_depth = t;
            prev_criterion = criterion;
        } else {
            stack.selected_depth = t - 1;
            break;
        }

        // propagate features for the next layer
        if t < opts.max_layers {
            let pair = stack.pairs.last().unwrap();
            for i in 0..data.len() {
                let (next, hidden) =
                    propagate_with(pair, &current[i], &tilde[i], opts.concatenation)?;
                current[i] = next;
                tilde[i] = hidden;
            }
        }
    }
    Ok((stack, warnings))
}
