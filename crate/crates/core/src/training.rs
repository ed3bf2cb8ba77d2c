//! Mean-squared-error training: exact backpropagation, a central-difference
//! gradient checker, and minibatch SGD with momentum and early stopping.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;

use crate::cnn::{conv_backward, dense_backward, pool_backward, relu_backward, ForwardCache, Layer, Network};
use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};
use crate::traffic_image::Sample;

/// Samples per parallel work unit. Fixed so the reduction order, and hence
/// every floating-point result, does not depend on the thread count.
const CHUNK: usize = 8;

pub fn mse(predicted: &Tensor, target: &Tensor) -> Result<f64> {
    if predicted.len() != target.len() || predicted.is_empty() {
        return Err(Error::ShapeMismatch {
            expected: target.shape().to_vec(),
            got: predicted.shape().to_vec(),
        });
    }
    let sq: f64 = predicted
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sq / predicted.len() as f64)
}

/// `d mse / d predicted`
fn mse_grad(predicted: &Tensor, target: &Tensor) -> Result<Tensor> {
    let scale = 2.0 / predicted.len() as f64;
    predicted.zip(target, |a, b| scale * (a - b))
}

/// One tensor per network parameter, aligned with [`Network::params`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            tensors: net
                .params()
                .iter()
                .map(|p| Tensor::zeros(p.shape()).expect("parameter shapes are valid"))
                .collect(),
        }
    }

    pub fn add(&mut self, other: &Gradients) -> Result<()> {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_scaled(b, 1.0)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.tensors.iter_mut().for_each(|t| t.scale(alpha));
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    fn pair_mut(&mut self, slot: usize) -> (&mut Tensor, &mut Tensor) {
        let (w, b) = self.tensors[slot..slot + 2].split_at_mut(1);
        (&mut w[0], &mut b[0])
    }
}

/// Exact gradients of the per-sample MSE for every weight and bias.
pub fn backward(net: &Network, cache: &ForwardCache, predicted: &Tensor, target: &Tensor) -> Result<Gradients> {
    let mut grads = Gradients::zeros_like(net);
    backward_into(net, cache, mse_grad(predicted, target)?, &mut grads)?;
    Ok(grads)
}

/// Accumulates the gradients for an output gradient `d_out` into `grads`.
pub fn backward_into(net: &Network, cache: &ForwardCache, d_out: Tensor, grads: &mut Gradients) -> Result<()> {
    net.check_cache(cache)?;
    if grads.tensors.len() != net.params().len() {
        return Err(Error::arg("gradient buffers do not match the network"));
    }
    let mut slots = Vec::with_capacity(net.layers().len());
    let mut next = 0;
    for layer in net.layers() {
        slots.push(next);
        if matches!(layer, Layer::Conv(_) | Layer::Dense(_)) {
            next += 2;
        }
    }

    let mut g = d_out;
    for (i, layer) in net.layers().iter().enumerate().rev() {
        let x = &cache.inputs[i];
        let need_dx = i > 0;
        let dx = match layer {
            Layer::Conv(c) => {
                let (dw, db) = grads.pair_mut(slots[i]);
                conv_backward(c, x, &g, dw, db, need_dx)?
            }
            Layer::Dense(d) => {
                let (dw, db) = grads.pair_mut(slots[i]);
                dense_backward(d, x, &g, dw, db, need_dx)?
            }
            Layer::Relu => Some(relu_backward(x, &g)?),
            Layer::Pool => {
                let winners = cache.argmax[i].as_ref().ok_or(Error::StaleCache)?;
                Some(pool_backward(x.shape(), winners, &g)?)
            }
            Layer::Flatten => Some(g.reshape(x.shape())?),
        };
        match dx {
            Some(dx) => g = dx,
            None => break,
        }
    }
    Ok(())
}

/// Loss and gradients of one sample.
pub fn sample_gradients(net: &Network, sample: &Sample) -> Result<(f64, Gradients)> {
    let (out, cache) = net.forward(&sample.input)?;
    let loss = mse(&out, &sample.target)?;
    Ok((loss, backward(net, &cache, &out, &sample.target)?))
}

/// Mean per-sample MSE over a set (normalized scale).
pub fn evaluate_mse(net: &Network, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::arg("cannot evaluate on an empty sample set"));
    }
    let losses = samples
        .par_iter()
        .map(|s| mse(&net.predict(&s.input)?, &s.target))
        .collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / samples.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamLocation {
    pub tensor: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Probes whose ±ε step flipped a ReLU or moved a pooling winner. The
    /// loss is not differentiable across such a step, so they are not scored.
    pub kinks: usize,
    pub max_rel_error: f64,
    /// Largest |analytic − numeric| over scored probes, floor or not.
    pub max_abs_error: f64,
    pub worst: Option<ParamLocation>,
    pub passed: bool,
}

/// Differences below this count as agreement regardless of magnitude.
pub const GRAD_CHECK_ABS_FLOOR: f64 = 1e-8;
/// Parameters beyond this count are subsampled at a fixed stride.
pub const GRAD_CHECK_MAX_PARAMS: usize = 2000;

pub fn grad_check(net: &Network, sample: &Sample, eps: f64, tolerance: f64) -> Result<GradCheckReport> {
    grad_check_with(net, sample, eps, tolerance, |n, s| Ok(sample_gradients(n, s)?.1))
}

/// Compares `analytic` against `(L(θ+ε) − L(θ−ε)) / 2ε`.
pub fn grad_check_with(
    net: &Network,
    sample: &Sample,
    eps: f64,
    tolerance: f64,
    analytic: impl Fn(&Network, &Sample) -> Result<Gradients>,
) -> Result<GradCheckReport> {
    if !(eps > 0.0) {
        return Err(Error::arg("eps must be positive"));
    }
    let grads = analytic(net, sample)?;
    let sizes: Vec<usize> = net.params().iter().map(|t| t.len()).collect();
    let total: usize = sizes.iter().sum();
    let picks: Vec<usize> = if total <= GRAD_CHECK_MAX_PARAMS {
        (0..total).collect()
    } else {
        (0..GRAD_CHECK_MAX_PARAMS)
            .map(|i| i * total / GRAD_CHECK_MAX_PARAMS)
            .collect()
    };

    let eval = |n: &Network| -> Result<(f64, Vec<u64>)> {
        let (out, cache) = n.forward(&sample.input)?;
        Ok((mse(&out, &sample.target)?, activation_pattern(n, &cache)))
    };
    let (_, pattern) = eval(net)?;
    let mut probe = net.clone();
    let mut report = GradCheckReport {
        checked: 0,
        kinks: 0,
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: None,
        passed: true,
    };
    for flat in picks {
        let (mut tensor, mut index) = (0, flat);
        while index >= sizes[tensor] {
            index -= sizes[tensor];
            tensor += 1;
        }
        let orig = probe.params()[tensor].data()[index];
        probe.params_mut()[tensor].data_mut()[index] = orig + eps;
        let (up, up_pattern) = eval(&probe)?;
        probe.params_mut()[tensor].data_mut()[index] = orig - eps;
        let (down, down_pattern) = eval(&probe)?;
        probe.params_mut()[tensor].data_mut()[index] = orig;
        if up_pattern != pattern || down_pattern != pattern {
            report.kinks += 1;
            continue;
        }

        let numeric = (up - down) / (2.0 * eps);
        let a = grads.tensors[tensor].data()[index];
        let diff = (a - numeric).abs();
        let rel = if diff < GRAD_CHECK_ABS_FLOOR {
            0.0
        } else {
            diff / a.abs().max(numeric.abs())
        };
        report.checked += 1;
        report.max_abs_error = report.max_abs_error.max(diff);
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            report.worst = Some(ParamLocation {
                tensor,
                index,
                analytic: a,
                numeric,
            });
        }
    }
    report.passed = report.max_rel_error < tolerance;
    Ok(report)
}

/// ReLU on/off bits and pooling winners of one forward pass, packed.
fn activation_pattern(net: &Network, cache: &ForwardCache) -> Vec<u64> {
    let mut out = Vec::new();
    for (i, layer) in net.layers().iter().enumerate() {
        match layer {
            Layer::Relu => {
                for chunk in cache.inputs[i].data().chunks(64) {
                    out.push(chunk.iter().enumerate().fold(0u64, |m, (b, &v)| m | (u64::from(v > 0.0) << b)));
                }
            }
            Layer::Pool => out.extend(cache.argmax[i].iter().flatten().map(|&w| w as u64)),
            _ => {}
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            momentum: 0.9,
            batch_size: 32,
            max_epochs: 100,
            patience: 5,
            min_delta: 0.0,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::arg("learning_rate must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::arg("momentum must lie in [0, 1)"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::arg("batch_size, max_epochs and patience must be >= 1"));
        }
        if !(self.min_delta >= 0.0) {
            return Err(Error::arg("min_delta must be >= 0"));
        }
        Ok(())
    }
}

/// Patience-based stopping on a validation loss trace.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Feeds the validation loss of `epoch` (1-based).
    pub fn update(&mut self, epoch: usize, val: f64) -> StopDecision {
        if val < self.best - self.min_delta {
            self.best = val;
            self.best_epoch = epoch;
            self.stale = 0;
            return StopDecision::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sample loss over the epoch's minibatches, before each update.
    pub train_mse: f64,
    pub val_mse: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    /// Train-set MSE of the returned (best-epoch) network.
    pub final_train_mse: f64,
    pub v_max: f64,
}

impl TrainReport {
    pub fn best_val_mse(&self) -> f64 {
        self.epochs
            .iter()
            .map(|e| e.val_mse)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn final_train_mse_kmh2(&self) -> f64 {
        self.final_train_mse * self.v_max * self.v_max
    }

    pub fn to_csv(&self) -> String {
        let v2 = self.v_max * self.v_max;
        let mut out = String::from("epoch,train_mse_norm,val_mse_norm,train_mse_kmh2,val_mse_kmh2,seconds\n");
        for e in &self.epochs {
            writeln!(
                out,
                "{},{},{},{},{},{:.3}",
                e.epoch,
                e.train_mse,
                e.val_mse,
                e.train_mse * v2,
                e.val_mse * v2,
                e.seconds
            )
            .unwrap();
        }
        out
    }
}

/// Trains `net` and returns it at its best validation epoch.
pub fn train(
    net: Network,
    train_set: &[Sample],
    validation: &[Sample],
    config: &TrainConfig,
    v_max: f64,
) -> Result<(Network, TrainReport)> {
    if validation.is_empty() {
        return Err(Error::arg("validation set is empty"));
    }
    train_with_validator(net, train_set, config, v_max, |n| evaluate_mse(n, validation))
}

/// As [`train`], with the per-epoch validation loss supplied by `validate`.
pub fn train_with_validator(
    mut net: Network,
    train_set: &[Sample],
    config: &TrainConfig,
    v_max: f64,
    mut validate: impl FnMut(&Network) -> Result<f64>,
) -> Result<(Network, TrainReport)> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::arg("training set is empty"));
    }
    for s in train_set {
        s.input.expect_shape(net.input_shape())?;
        s.target.expect_shape(&[net.output_dim()])?;
    }

    let mut rng = Rng::new(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut velocity = Gradients::zeros_like(&net);
    let mut losses = vec![0.0; train_set.len()];
    let mut stopper = EarlyStopping::new(config.patience, config.min_delta);
    let mut best = net.clone();
    let mut epochs = Vec::new();
    let mut stopped_epoch = config.max_epochs;

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        rng.shuffle(&mut order);
        for batch in order.chunks(config.batch_size) {
            let parts = batch
                .par_chunks(CHUNK)
                .map(|chunk| {
                    let mut acc = Gradients::zeros_like(&net);
                    let mut chunk_losses = Vec::with_capacity(chunk.len());
                    for &i in chunk {
                        let s = &train_set[i];
                        let (out, cache) = net.forward(&s.input)?;
                        chunk_losses.push((i, mse(&out, &s.target)?));
                        backward_into(&net, &cache, mse_grad(&out, &s.target)?, &mut acc)?;
                    }
                    Ok((acc, chunk_losses))
                })
                .collect::<Result<Vec<_>>>()?;

            let mut grad = Gradients::zeros_like(&net);
            for (acc, chunk_losses) in &parts {
                grad.add(acc)?;
                for &(i, l) in chunk_losses {
                    if !l.is_finite() {
                        return Err(Error::Diverged { epoch, value: l });
                    }
                    losses[i] = l;
                }
            }
            grad.scale(1.0 / batch.len() as f64);

            let lr = config.learning_rate;
            for ((p, v), g) in net
                .params_mut()
                .into_iter()
                .zip(velocity.tensors.iter_mut())
                .zip(&grad.tensors)
            {
                v.scale(config.momentum);
                v.add_scaled(g, -lr)?;
                p.add_scaled(v, 1.0)?;
            }
        }

        let train_mse = losses.iter().sum::<f64>() / losses.len() as f64;
        if !train_mse.is_finite() {
            return Err(Error::Diverged { epoch, value: train_mse });
        }
        let val_mse = validate(&net)?;
        epochs.push(EpochRecord {
            epoch,
            train_mse,
            val_mse,
            seconds: started.elapsed().as_secs_f64(),
        });
        match stopper.update(epoch, val_mse) {
            StopDecision::Improved => best = net.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stopped_epoch = epoch;
                break;
            }
        }
    }

    let final_train_mse = evaluate_mse(&best, train_set)?;
    Ok((
        best,
        TrainReport {
            epochs,
            best_epoch: stopper.best_epoch(),
            stopped_epoch,
            final_train_mse,
            v_max,
        },
    ))
}
