//! Training: window slicing, physically consistent augmentation, the joint
//! regression + classification loss, SGD steps through the autodiff tape, and
//! the epoch loop with validation-based model selection.

use serde::Serialize;

use super::model::{
    forward_on_tape, init_model, window_features, ModelParams, NormStats, Tensor,
};
use super::tape::{bce, scaled_mse, Tape};
use super::TrainConfig;
use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// One training window: raw aggregate features plus aligned per-appliance
/// ground truth and the aggregate residual (measurement noise) of the source
/// data, kept so augmentation can rebuild a physically consistent aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainWindow {
    /// seq_len x 3 raw (power, voltage, current).
    pub inputs: Vec<f64>,
    /// Per-appliance true power, `targets[a][t]`.
    pub targets: Vec<Vec<f64>>,
    /// `main_p[t] - sum_a targets[a][t]`.
    pub residual: Vec<f64>,
}

/// Cuts a grid-aligned dataset into overlapping windows.
pub fn slice_windows(dataset: &Dataset, seq_len: usize, stride: usize) -> Vec<TrainWindow> {
    let n = dataset.len();
    if n < seq_len || stride == 0 {
        return Vec::new();
    }
    let n_app = dataset.n_channels();
    let mut out = Vec::new();
    let mut start = 0;
    while start + seq_len <= n {
        let samples = &dataset.samples[start..start + seq_len];
        let inputs = window_features(samples);
        let targets: Vec<Vec<f64>> = (0..n_app)
            .map(|a| samples.iter().map(|s| s.lines[a].p).collect())
            .collect();
        let residual: Vec<f64> = samples
            .iter()
            .map(|s| s.main_p - s.lines.iter().map(|l| l.p).sum::<f64>())
            .collect();
        out.push(TrainWindow {
            inputs,
            targets,
            residual,
        });
        start += stride;
    }
    out
}

/// Standardization statistics from the training split only. Input sigmas are
/// floored at 1e-6 (a constant feature normalizes to zero) and per-appliance
/// power scales at 1 W.
pub fn compute_norm_stats(train: &Dataset) -> NormStats {
    let n = train.len().max(1) as f64;
    let mut mean = [0.0f64; 3];
    let mut sq = [0.0f64; 3];
    for s in &train.samples {
        for (k, v) in [s.main_p, s.main_v, s.main_i].into_iter().enumerate() {
            mean[k] += v;
            sq[k] += v * v;
        }
    }
    let input_mean: Vec<f64> = mean.iter().map(|m| m / n).collect();
    let input_sigma: Vec<f64> = sq
        .iter()
        .zip(&input_mean)
        .map(|(s, m)| ((s / n - m * m).max(0.0)).sqrt().max(1e-6))
        .collect();

    let n_app = train.n_channels();
    let mut power_scale = Vec::with_capacity(n_app);
    for a in 0..n_app {
        let mut m = 0.0;
        let mut s2 = 0.0;
        for s in &train.samples {
            let p = s.lines[a].p;
            m += p;
            s2 += p * p;
        }
        m /= n;
        power_scale.push(((s2 / n - m * m).max(0.0)).sqrt().max(1.0));
    }
    NormStats {
        input_mean,
        input_sigma,
        power_scale,
    }
}

/// Joint loss: mean squared error over power in per-appliance normalized
/// units plus `lambda_cls` times binary cross-entropy over ON labels derived
/// as `true_power > on_threshold`. Tensors are `[n_appliances, seq_len]`.
pub fn loss(
    pred_power: &Tensor,
    pred_prob: &Tensor,
    true_power: &Tensor,
    config: &TrainConfig,
    power_scale: &[f64],
) -> Result<f64> {
    if pred_power.shape != true_power.shape || pred_prob.shape != true_power.shape {
        return Err(Error::Shape(format!(
            "loss shapes disagree: power {:?}, prob {:?}, truth {:?}",
            pred_power.shape, pred_prob.shape, true_power.shape
        )));
    }
    let n_app = power_scale.len();
    if pred_power.shape.first() != Some(&n_app) {
        return Err(Error::Shape(format!(
            "power_scale covers {n_app} appliances but tensors are {:?}",
            pred_power.shape
        )));
    }
    let t_len = pred_power.data.len() / n_app;
    let labels: Vec<f64> = true_power
        .data
        .iter()
        .map(|&p| if p > config.on_threshold { 1.0 } else { 0.0 })
        .collect();
    let mse = scaled_mse(&pred_power.data, &true_power.data, |i| {
        power_scale[i / t_len]
    });
    Ok(mse + config.lambda_cls * bce(&pred_prob.data, &labels))
}

/// Recombination augmentation. Each selected window has every channel
/// replaced by the same channel from a randomly chosen window in the batch,
/// circularly time-shifted and amplitude-jittered; the aggregate input is
/// then recomputed as the exact sum of the new channels plus the original
/// window's measurement residual, so augmented samples stay physically
/// consistent.
pub fn augment(
    batch: &[TrainWindow],
    config: &super::AugmentationConfig,
    seed: u64,
) -> Vec<TrainWindow> {
    let mut rng = Rng::new(seed);
    augment_with_rng(batch, config, &mut rng)
}

pub(crate) fn augment_with_rng(
    batch: &[TrainWindow],
    config: &super::AugmentationConfig,
    rng: &mut Rng,
) -> Vec<TrainWindow> {
    if !config.enabled || batch.is_empty() {
        return batch.to_vec();
    }
    batch
        .iter()
        .map(|w| {
            if rng.uniform() >= config.recombination_prob {
                return w.clone();
            }
            let t_len = w.residual.len();
            let n_app = w.targets.len();
            let mut targets = Vec::with_capacity(n_app);
            for a in 0..n_app {
                let src = &batch[rng.below(batch.len())].targets[a];
                let shift = if config.time_shift_max > 0 {
                    rng.below(2 * config.time_shift_max + 1) as i64
                        - config.time_shift_max as i64
                } else {
                    0
                };
                let factor =
                    (1.0 + config.amplitude_jitter_sigma * rng.normal()).max(0.0);
                let channel: Vec<f64> = (0..t_len)
                    .map(|t| {
                        let idx =
                            (t as i64 - shift).rem_euclid(t_len as i64) as usize;
                        src[idx] * factor
                    })
                    .collect();
                targets.push(channel);
            }
            let mut inputs = w.inputs.clone();
            for t in 0..t_len {
                let new_p: f64 =
                    targets.iter().map(|ch| ch[t]).sum::<f64>() + w.residual[t];
                let old_p = w.inputs[t * 3];
                let old_i = w.inputs[t * 3 + 2];
                let v = w.inputs[t * 3 + 1];
                inputs[t * 3] = new_p;
                inputs[t * 3 + 2] = if old_p.abs() > 1e-9 && old_i > 0.0 {
                    // Keep the source sample's apparent power-factor profile.
                    old_i * (new_p / old_p)
                } else if v > 0.0 {
                    new_p.max(0.0) / (v * 0.9)
                } else {
                    0.0
                };
            }
            TrainWindow {
                inputs,
                targets,
                residual: w.residual.clone(),
            }
        })
        .collect()
}

/// Flattened gradients aligned with `ModelParams::param_list` order.
type FlatGrads = Vec<Vec<f64>>;

fn window_loss_on_tape(
    tape: &mut Tape,
    params: &ModelParams,
    window: &TrainWindow,
    config: &TrainConfig,
    dropout_rng: Option<&mut Rng>,
) -> (super::tape::NodeId, Vec<super::tape::NodeId>) {
    let t_len = window.residual.len();
    let n_app = window.targets.len();
    let nodes = forward_on_tape(tape, params, &window.inputs, dropout_rng);
    // Targets laid out T x A to match the graph output.
    let mut target = vec![0.0; t_len * n_app];
    for (a, channel) in window.targets.iter().enumerate() {
        for (t, &p) in channel.iter().enumerate() {
            target[t * n_app + a] = p;
        }
    }
    let labels: Vec<f64> = target
        .iter()
        .map(|&p| if p > config.on_threshold { 1.0 } else { 0.0 })
        .collect();
    let mse = tape.mse_scaled_vs(nodes.power, target, params.norm.power_scale.clone());
    let cls = tape.bce_vs(nodes.prob, labels);
    let cls_weighted = tape.scale(cls, config.lambda_cls);
    let total = tape.add(mse, cls_weighted);
    (total, nodes.params.flat)
}

/// Average loss over a batch without gradient bookkeeping.
fn batch_loss(params: &ModelParams, batch: &[TrainWindow], config: &TrainConfig) -> f64 {
    let mut sum = 0.0;
    let mut tape = Tape::new(false);
    for w in batch {
        tape.recycle();
        let (root, _) = window_loss_on_tape(&mut tape, params, w, config, None);
        sum += tape.value(root)[0];
    }
    sum / batch.len() as f64
}

/// Gradients of the batch-average loss, aligned with `param_list` order.
fn batch_gradients(
    params: &ModelParams,
    batch: &[TrainWindow],
    config: &TrainConfig,
    mut dropout_rng: Option<&mut Rng>,
) -> Result<(FlatGrads, f64)> {
    let shapes: Vec<usize> = params.param_list().iter().map(|(_, m)| m.numel()).collect();
    let mut acc: FlatGrads = shapes.iter().map(|&n| vec![0.0; n]).collect();
    let mut loss_sum = 0.0;
    let scale = 1.0 / batch.len() as f64;
    let mut tape = Tape::new(true);
    for (idx, w) in batch.iter().enumerate() {
        tape.recycle();
        let (root, leaves) =
            window_loss_on_tape(&mut tape, params, w, config, dropout_rng.as_deref_mut());
        let value = tape.value(root)[0];
        if !value.is_finite() {
            let norm: f64 = params
                .param_list()
                .iter()
                .flat_map(|(_, m)| m.data.iter())
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            return Err(Error::Train(format!(
                "non-finite loss ({value}) at batch index {idx}; parameter norm {norm:.6e}"
            )));
        }
        loss_sum += value;
        let mut grads = tape.backward(root);
        for ((leaf, buf), &numel) in leaves.into_iter().zip(acc.iter_mut()).zip(&shapes) {
            let g = grads.take(leaf, numel);
            for (a, gv) in buf.iter_mut().zip(&g) {
                *a += gv * scale;
            }
        }
    }
    Ok((acc, loss_sum * scale))
}

/// One SGD step on a batch: reverse-mode gradients through the full graph,
/// parameters updated in place with the configured learning rate, gradient
/// buffers discarded afterward. Returns the batch loss (before the step).
/// Dropout, when enabled, is driven deterministically by the config seed.
pub fn backward_and_step(
    params: &mut ModelParams,
    batch: &[TrainWindow],
    config: &TrainConfig,
) -> Result<f64> {
    let mut rng = Rng::new(config.seed);
    let dropout_rng = (config.dropout > 0.0).then_some(&mut rng);
    step_with_rng(params, batch, config, dropout_rng)
}

fn step_with_rng(
    params: &mut ModelParams,
    batch: &[TrainWindow],
    config: &TrainConfig,
    dropout_rng: Option<&mut Rng>,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Train("empty batch".to_string()));
    }
    let (grads, loss_value) = batch_gradients(params, batch, config, dropout_rng)?;
    let lr = config.learning_rate;
    for ((_, mat), g) in params.param_list_mut().into_iter().zip(&grads) {
        for (p, gv) in mat.data.iter_mut().zip(g) {
            *p -= lr * gv;
        }
    }
    Ok(loss_value)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mae: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    pub fn to_csv(&self, channel_names: &[String]) -> String {
        let mut out = String::from("epoch,train_loss");
        for name in channel_names {
            out.push_str(&format!(",val_mae_{name}"));
        }
        out.push('\n');
        for e in &self.epochs {
            out.push_str(&format!("{},{}", e.epoch, e.train_loss));
            for v in &e.val_mae {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

fn check_grid_aligned(ds: &Dataset, what: &str) -> Result<()> {
    if ds.len() >= 3 {
        let dt = ds.samples[1].timestamp - ds.samples[0].timestamp;
        let t0 = ds.samples[0].timestamp;
        for (k, s) in ds.samples.iter().enumerate() {
            let expect = t0 + k as f64 * dt;
            if (s.timestamp - expect).abs() > 1e-6 * dt.max(1.0) {
                return Err(Error::Validation(format!(
                    "{what} dataset is not grid-aligned at row {k} \
                     (expected {expect}, found {}); run grid alignment first",
                    s.timestamp
                )));
            }
        }
    }
    Ok(())
}

/// Per-appliance MAE of full-window predictions over validation windows.
fn validation_mae(params: &ModelParams, windows: &[TrainWindow]) -> Vec<f64> {
    let n_app = params.config.n_appliances;
    let mut abs_sum = vec![0.0; n_app];
    let mut count = 0usize;
    let mut tape = Tape::new(false);
    for w in windows {
        tape.recycle();
        let nodes = forward_on_tape(&mut tape, params, &w.inputs, None);
        let pred = tape.value(nodes.power);
        let t_len = w.residual.len();
        for t in 0..t_len {
            for a in 0..n_app {
                abs_sum[a] += (pred[t * n_app + a] - w.targets[a][t]).abs();
            }
        }
        count += t_len;
    }
    abs_sum.iter().map(|s| s / count.max(1) as f64).collect()
}

/// Trains on grid-aligned datasets: normalization statistics from the train
/// split only, windows with stride seq_len/2, seeded shuffling, augmentation,
/// and SGD. Returns the parameters from the epoch with the lowest mean
/// validation MAE, plus the per-epoch history.
pub fn train(
    train_ds: &Dataset,
    val_ds: &Dataset,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainHistory)> {
    config.validate()?;
    if train_ds.n_channels() != config.n_appliances {
        return Err(Error::Config(format!(
            "dataset has {} channels but config expects {} appliances",
            train_ds.n_channels(),
            config.n_appliances
        )));
    }
    check_grid_aligned(train_ds, "train")?;
    check_grid_aligned(val_ds, "validation")?;
    if train_ds.len() < config.seq_len {
        return Err(Error::Train(format!(
            "training dataset has {} samples, shorter than seq_len {}",
            train_ds.len(),
            config.seq_len
        )));
    }
    if val_ds.len() < config.seq_len {
        return Err(Error::Train(format!(
            "validation dataset has {} samples, shorter than seq_len {}; \
             use a smaller seq_len",
            val_ds.len(),
            config.seq_len
        )));
    }

    let mut params = init_model(config)?;
    params.norm = compute_norm_stats(train_ds);
    params.norm.validate(config.n_appliances)?;

    let stride = (config.seq_len / 2).max(1);
    let train_windows = slice_windows(train_ds, config.seq_len, stride);
    let val_windows = slice_windows(val_ds, config.seq_len, config.seq_len);
    if train_windows.is_empty() || val_windows.is_empty() {
        return Err(Error::Train("no full windows to train on".to_string()));
    }

    let mut rng = Rng::new(config.seed);
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, ModelParams)> = None;

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..train_windows.len()).collect();
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<TrainWindow> =
                chunk.iter().map(|&i| train_windows[i].clone()).collect();
            let batch = augment_with_rng(&batch, &config.augmentation, &mut rng);
            let dropout_rng = (config.dropout > 0.0).then_some(&mut rng);
            loss_sum += step_with_rng(&mut params, &batch, config, dropout_rng)?;
            n_batches += 1;
        }
        let val_mae = validation_mae(&params, &val_windows);
        let mean_val = val_mae.iter().sum::<f64>() / val_mae.len() as f64;
        history.epochs.push(EpochStats {
            epoch,
            train_loss: loss_sum / n_batches.max(1) as f64,
            val_mae,
        });
        if best.as_ref().map_or(true, |(b, _)| mean_val < *b) {
            best = Some((mean_val, params.clone()));
        }
    }

    let (_, best_params) = best.expect("at least one epoch");
    Ok((best_params, history))
}

/// Result of the finite-difference gradient verification.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Worst relative error per parameter group, `param_list` order.
    pub per_group: Vec<(String, f64)>,
}

/// Compares analytic gradients against central finite differences on a
/// synthetic batch. Dropout is forced off (it would randomize the two loss
/// evaluations). Relative error uses max(|analytic|, |numeric|, 1e-6) as the
/// denominator.
pub fn gradient_check(config: &TrainConfig, epsilon: f64) -> Result<GradCheckReport> {
    let mut cfg = config.clone();
    cfg.dropout = 0.0;
    let mut params = init_model(&cfg)?;
    let mut rng = Rng::new(cfg.seed.wrapping_add(99));
    let batch: Vec<TrainWindow> = (0..2)
        .map(|_| synthetic_window(&cfg, &mut rng))
        .collect();
    // Fit the normalization statistics to the synthetic batch so the check
    // runs in the same activation regime as real training.
    params.norm = norm_stats_from_windows(&batch);

    let (analytic, _) = batch_gradients(&params, &batch, &cfg, None)?;
    let names: Vec<String> = params.param_list().iter().map(|(n, _)| n.clone()).collect();

    let mut per_group = Vec::with_capacity(names.len());
    let mut max_rel: f64 = 0.0;
    let mut probe = params.clone();
    for (g, name) in names.iter().enumerate() {
        let numel = analytic[g].len();
        let mut group_max: f64 = 0.0;
        for idx in 0..numel {
            let original = probe.param_list_mut()[g].1.data[idx];
            probe.param_list_mut()[g].1.data[idx] = original + epsilon;
            let plus = batch_loss(&probe, &batch, &cfg);
            probe.param_list_mut()[g].1.data[idx] = original - epsilon;
            let minus = batch_loss(&probe, &batch, &cfg);
            probe.param_list_mut()[g].1.data[idx] = original;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic[g][idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            group_max = group_max.max(rel);
        }
        max_rel = max_rel.max(group_max);
        per_group.push((name.clone(), group_max));
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        per_group,
    })
}

/// Standardization statistics over a set of windows, same estimators as
/// [`compute_norm_stats`].
fn norm_stats_from_windows(windows: &[TrainWindow]) -> NormStats {
    let mut count = 0usize;
    let mut mean = [0.0f64; 3];
    let mut sq = [0.0f64; 3];
    for w in windows {
        for chunk in w.inputs.chunks_exact(3) {
            for k in 0..3 {
                mean[k] += chunk[k];
                sq[k] += chunk[k] * chunk[k];
            }
        }
        count += w.inputs.len() / 3;
    }
    let n = count.max(1) as f64;
    let input_mean: Vec<f64> = mean.iter().map(|m| m / n).collect();
    let input_sigma: Vec<f64> = sq
        .iter()
        .zip(&input_mean)
        .map(|(s, m)| ((s / n - m * m).max(0.0)).sqrt().max(1e-6))
        .collect();
    let n_app = windows[0].targets.len();
    let mut power_scale = Vec::with_capacity(n_app);
    for a in 0..n_app {
        let mut m = 0.0;
        let mut s2 = 0.0;
        let mut cnt = 0usize;
        for w in windows {
            for &p in &w.targets[a] {
                m += p;
                s2 += p * p;
                cnt += 1;
            }
        }
        let c = cnt.max(1) as f64;
        m /= c;
        power_scale.push(((s2 / c - m * m).max(0.0)).sqrt().max(1.0));
    }
    NormStats {
        input_mean,
        input_sigma,
        power_scale,
    }
}

/// Random but physically plausible window for gradient checking and smoke
/// tests: piecewise-constant appliance powers plus a small residual.
pub(crate) fn synthetic_window(config: &TrainConfig, rng: &mut Rng) -> TrainWindow {
    let t_len = config.seq_len;
    let n_app = config.n_appliances;
    let mut targets = vec![vec![0.0; t_len]; n_app];
    for channel in targets.iter_mut() {
        let rated = rng.range(5.0, 60.0);
        let mut on = rng.uniform() < 0.5;
        let mut t = 0;
        while t < t_len {
            let dwell = 1 + rng.below(t_len / 2);
            for v in channel.iter_mut().skip(t).take(dwell) {
                *v = if on { rated + rng.normal() * 0.3 } else { 0.0 };
            }
            on = !on;
            t += dwell;
        }
    }
    let residual: Vec<f64> = (0..t_len).map(|_| rng.normal() * 0.5).collect();
    let v_nom = 220.0;
    let mut inputs = Vec::with_capacity(t_len * 3);
    for t in 0..t_len {
        let p: f64 = targets.iter().map(|ch| ch[t]).sum::<f64>() + residual[t];
        inputs.push(p);
        inputs.push(v_nom + rng.normal());
        inputs.push(p.max(0.0) / (v_nom * 0.85));
    }
    TrainWindow {
        inputs,
        targets,
        residual,
    }
}
