//! Adam training on the squared-error objective, best-validation model
//! selection with early stopping, and variance-based edge pruning.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{QuirkError, Result};
use crate::network::{Model, NetworkSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Minibatch size; values at or above the training-set size mean full batch.
    pub batch_size: usize,
    pub max_steps: usize,
    /// Seeds minibatch order (initialization uses the network seed).
    pub seed: u64,
    /// Stop after this many steps without a validation improvement.
    pub early_stop_patience: usize,
    /// Relative edge-score threshold τ used by [`prune`].
    pub prune_threshold: f64,
    /// Fine-tuning steps after pruning.
    pub finetune_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 128,
            max_steps: 2000,
            seed: 0,
            early_stop_patience: 500,
            prune_threshold: 0.05,
            finetune_steps: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(QuirkError::invalid("learning_rate must be positive"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(QuirkError::invalid(format!("{name} must lie in (0, 1)")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(QuirkError::invalid("epsilon must be positive"));
        }
        if self.batch_size == 0 {
            return Err(QuirkError::invalid("batch_size must be at least 1"));
        }
        if !(self.prune_threshold >= 0.0 && self.prune_threshold.is_finite()) {
            return Err(QuirkError::invalid("prune_threshold must be non-negative"));
        }
        Ok(())
    }
}

/// Root mean squared error.
pub fn rmse(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(QuirkError::Shape {
            what: "rmse targets",
            expected: predictions.len(),
            got: targets.len(),
        });
    }
    if predictions.is_empty() {
        return Err(QuirkError::invalid("rmse of an empty set"));
    }
    let sq: f64 = predictions.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sq / predictions.len() as f64).sqrt())
}

/// First and second moment estimates for Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// One bias-corrected Adam update; `step` counts from 1.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, config: &TrainConfig, step: usize) {
    assert_eq!(params.len(), grads.len(), "parameter/gradient length mismatch");
    assert_eq!(params.len(), state.m.len(), "parameter/moment length mismatch");
    let t = step.max(1) as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = config.beta1 * *m + (1.0 - config.beta1) * g;
        *v = config.beta2 * *v + (1.0 - config.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// RMSE of the minibatch used for this step, before the update.
    pub train_rmse: f64,
    /// Validation RMSE of the parameters this step started from.
    pub val_rmse: f64,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    pub best_step: usize,
    pub best_val_rmse: f64,
}

impl TrainHistory {
    /// `step,train_rmse,val_rmse,elapsed_ms`
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| QuirkError::parse(path, e.to_string()))?;
        let err = |e: csv::Error| QuirkError::parse(path, e.to_string());
        w.write_record(["step", "train_rmse", "val_rmse", "elapsed_ms"]).map_err(err)?;
        for r in &self.steps {
            w.write_record(&[
                r.step.to_string(),
                format!("{:?}", r.train_rmse),
                format!("{:?}", r.val_rmse),
                format!("{:.3}", r.elapsed_ms),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| QuirkError::io(path, e))
    }

    /// True when both RMSE columns match bit for bit (timings are ignored).
    pub fn same_trajectory(&self, other: &TrainHistory) -> bool {
        self.steps.len() == other.steps.len()
            && self.steps.iter().zip(&other.steps).all(|(a, b)| {
                a.step == b.step
                    && a.train_rmse.to_bits() == b.train_rmse.to_bits()
                    && a.val_rmse.to_bits() == b.val_rmse.to_bits()
            })
    }
}

/// Model outputs on the given rows.
pub fn predict(model: &Model, dataset: &Dataset, idx: &[usize]) -> Result<Vec<f64>> {
    dataset.rows_at(idx).map(|r| model.forward(r)).collect()
}

pub fn evaluate(model: &Model, dataset: &Dataset, idx: &[usize]) -> Result<f64> {
    let p = predict(model, dataset, idx)?;
    rmse(&p, &dataset.targets_at(idx))
}

/// Builds a model from `spec`, fits its input map on the training split, and
/// trains it. Returns the parameters with the best validation RMSE.
pub fn train(dataset: &Dataset, spec: NetworkSpec, config: &TrainConfig) -> Result<(Model, TrainHistory)> {
    if spec.input_dim != dataset.n_features() {
        return Err(QuirkError::Shape {
            what: "network input_dim",
            expected: dataset.n_features(),
            got: spec.input_dim,
        });
    }
    let mut model = Model::new(spec)?;
    model.fit_input_norm(dataset.rows_at(&dataset.split.train))?;
    fit(model, dataset, config)
}

/// Continues training an existing model (input map already fitted).
pub fn fit(mut model: Model, dataset: &Dataset, config: &TrainConfig) -> Result<(Model, TrainHistory)> {
    config.validate()?;
    if dataset.split.train.is_empty() {
        return Err(QuirkError::invalid("training split is empty"));
    }
    let train_idx = &dataset.split.train;
    let val_idx = dataset.val_indices();
    let norm = |idx: &[usize]| -> Result<Vec<Vec<f64>>> {
        dataset.rows_at(idx).map(|r| model.normalize_input(r)).collect()
    };
    let train_x = norm(train_idx)?;
    let train_y = dataset.targets_at(train_idx);
    let val_x = norm(val_idx)?;
    let val_y = dataset.targets_at(val_idx);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let batch = config.batch_size.min(train_x.len());
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    let mut cursor = order.len();

    let mut params = model.flat_params();
    let mut adam = AdamState::new(params.len());
    let mut history = TrainHistory {
        best_val_rmse: f64::INFINITY,
        ..Default::default()
    };
    let mut best = params.clone();
    let started = Instant::now();

    for step in 0..config.max_steps {
        if cursor + batch > order.len() {
            if batch < order.len() {
                order.shuffle(&mut rng);
            }
            cursor = 0;
        }
        let ids = &order[cursor..cursor + batch];
        cursor += batch;
        let xs: Vec<&[f64]> = ids.iter().map(|&i| train_x[i].as_slice()).collect();
        let ys: Vec<f64> = ids.iter().map(|&i| train_y[i]).collect();
        let (loss, grads) = model.loss_and_gradients(&xs, &ys)?;
        let val_pred: Vec<f64> = val_x.iter().map(|x| model.forward_normalized(x)).collect();
        let val_rmse = rmse(&val_pred, &val_y)?;
        if !loss.is_finite() || !val_rmse.is_finite() {
            return Err(QuirkError::Divergence {
                step,
                detail: format!("loss {loss}, validation rmse {val_rmse}"),
            });
        }
        history.steps.push(StepRecord {
            step,
            train_rmse: (2.0 * loss).sqrt(),
            val_rmse,
            elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
        });
        if val_rmse < history.best_val_rmse {
            history.best_val_rmse = val_rmse;
            history.best_step = step;
            best.copy_from_slice(&params);
        } else if step - history.best_step >= config.early_stop_patience {
            break;
        }

        let g = grads.flatten();
        if let Some(k) = g.iter().position(|v| !v.is_finite()) {
            return Err(QuirkError::Divergence {
                step,
                detail: format!("gradient component {k} is {}", g[k]),
            });
        }
        adam_step(&mut params, &g, &mut adam, config, step + 1);
        model.set_flat_params(&params).map_err(|e| QuirkError::Divergence {
            step,
            detail: e.to_string(),
        })?;
    }
    if !history.steps.is_empty() {
        model.set_flat_params(&best)?;
    }
    Ok((model, history))
}

/// Result of a pruning pass.
#[derive(Debug, Clone)]
pub struct PruneOutcome {
    pub model: Model,
    pub removed_edges: usize,
    pub removed_units: usize,
    /// Per-edge scores as `(layer, edge_index, score)` before removal.
    pub scores: Vec<(usize, usize, f64)>,
    pub history: Option<TrainHistory>,
    /// Set when pruning was refused.
    pub warning: Option<String>,
}

fn std_dev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Standard deviation of every active edge's output over the training inputs.
pub fn edge_scores(model: &Model, dataset: &Dataset) -> Result<Vec<(usize, usize, f64)>> {
    let traces = dataset
        .rows_at(&dataset.split.train)
        .map(|r| model.trace(r))
        .collect::<Result<Vec<_>>>()?;
    let mut scores = Vec::new();
    for (k, layer) in model.layers.iter().enumerate() {
        for i in 0..layer.spec.fan_in {
            for u in 0..layer.spec.units {
                let idx = layer.edge_index(i, u);
                let e = &layer.edges[idx];
                if !e.active {
                    continue;
                }
                let outs: Vec<f64> = traces
                    .iter()
                    .map(|t| crate::dr::forward_unchecked(t.layer_inputs[k][i], &e.params))
                    .collect();
                scores.push((k, idx, std_dev(&outs)));
            }
        }
    }
    Ok(scores)
}

/// Removes edges whose output spread is below `τ ×` the largest spread,
/// removes units left without inputs (and their outgoing edges) or without
/// consumers (and their incoming edges), then fine-tunes.
pub fn prune(model: &Model, dataset: &Dataset, config: &TrainConfig) -> Result<PruneOutcome> {
    config.validate()?;
    let scores = edge_scores(model, dataset)?;
    let max = scores.iter().map(|s| s.2).fold(0.0, f64::max);
    let cutoff = config.prune_threshold * max;

    let mut pruned = model.clone();
    let mut removed_edges = 0;
    for &(k, idx, s) in &scores {
        if s < cutoff {
            pruned.layers[k].edges[idx].active = false;
            removed_edges += 1;
        }
    }
    let removed_units = cascade_dead_units(&mut pruned);

    let last = pruned.layers.len() - 1;
    let connected = (0..pruned.layers[last].spec.units).any(|u| pruned.layers[last].unit_fan_in(u) > 0);
    if !connected {
        let msg = format!("pruning at threshold {} would disconnect the output; model left unchanged", config.prune_threshold);
        log::warn!("{msg}");
        return Ok(PruneOutcome {
            model: model.clone(),
            removed_edges: 0,
            removed_units: 0,
            scores,
            history: None,
            warning: Some(msg),
        });
    }
    if pruned.param_count() == model.param_count() {
        return Ok(PruneOutcome {
            model: pruned,
            removed_edges: 0,
            removed_units: 0,
            scores,
            history: None,
            warning: None,
        });
    }
    let (tuned, history) = if config.finetune_steps > 0 {
        let cfg = TrainConfig {
            max_steps: config.finetune_steps,
            ..config.clone()
        };
        let (m, h) = fit(pruned, dataset, &cfg)?;
        (m, Some(h))
    } else {
        (pruned, None)
    };
    let total_removed = model.active_edge_count() - tuned.active_edge_count();
    Ok(PruneOutcome {
        model: tuned,
        removed_edges: total_removed.max(removed_edges),
        removed_units,
        scores,
        history,
        warning: None,
    })
}

/// Deactivates edges attached to dead hidden units until nothing changes.
/// Returns the number of hidden units removed.
fn cascade_dead_units(model: &mut Model) -> usize {
    let n = model.layers.len();
    let mut dead = vec![Vec::new(); n];
    loop {
        let mut changed = false;
        for k in 0..n.saturating_sub(1) {
            for u in 0..model.layers[k].spec.units {
                let no_inputs = model.layers[k].unit_fan_in(u) == 0;
                let next = &model.layers[k + 1];
                let no_consumers = (0..next.spec.units).all(|v| !next.edge(u, v).active);
                if !(no_inputs || no_consumers) {
                    continue;
                }
                for i in 0..model.layers[k].spec.fan_in {
                    let idx = model.layers[k].edge_index(i, u);
                    if model.layers[k].edges[idx].active {
                        model.layers[k].edges[idx].active = false;
                        changed = true;
                    }
                }
                for v in 0..model.layers[k + 1].spec.units {
                    let idx = model.layers[k + 1].edge_index(u, v);
                    if model.layers[k + 1].edges[idx].active {
                        model.layers[k + 1].edges[idx].active = false;
                        changed = true;
                    }
                }
                if !dead[k].contains(&u) {
                    dead[k].push(u);
                }
            }
        }
        if !changed {
            break;
        }
    }
    dead.iter().map(Vec::len).sum()
}
