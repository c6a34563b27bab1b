//! End-to-end training: hierarchical composite loss, Adam over sliding
//! windows, curriculum learning, early stopping, and coherent forecasting.

mod adam;

pub use adam::Adam;

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{init_backbone, mgm_forward, BackboneKind, BackboneParams, MGMConfig};
use crate::data::{Scaler, ScalingKind, TimeSeriesPanel};
use crate::error::{Error, Result};
use crate::graph::{hierarchy_adjacency, AdjacencyMatrix, GraphMode};
use crate::hierarchy::{aggregate, summing_matrix, ForecastSet, Hierarchy, SummingMatrix};
use crate::tensor::{backward, no_grad, Gradients, Tensor};

/// Pointwise loss applied within each term of the hierarchical loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Mse,
    Mae,
}

impl LossKind {
    pub fn parse(s: &str) -> Result<LossKind> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "mae" => Ok(LossKind::Mae),
            other => Err(Error::Config(format!("unknown loss '{other}' (expected mse or mae)"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::Mae => "mae",
        }
    }

    fn term(&self, pred: &Tensor, truth: &Tensor) -> Tensor {
        let diff = pred.sub(truth);
        match self {
            LossKind::Mse => diff.mul(&diff).mean(),
            LossKind::Mae => diff.abs().mean(),
        }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Weight of the aggregate-level loss term.
    pub lambda: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_epochs: usize,
    /// Early-stopping patience in epochs.
    pub patience: usize,
    /// Windows per optimizer step.
    pub batch: usize,
    /// Grow the supervised horizon from 1 to H across epochs
    /// (mixhop_tcn only).
    pub curriculum: bool,
    pub loss_kind: LossKind,
    pub seed: u64,
    pub scaling: ScalingKind,
    /// Fraction of the provided panel used for training; the remainder is
    /// the validation segment.
    pub train_frac: f64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            lambda: 0.5,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_epochs: 50,
            patience: 4,
            batch: 8,
            curriculum: false,
            loss_kind: LossKind::Mse,
            seed: 0,
            scaling: ScalingKind::PerNodeZscore,
            train_frac: 0.8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 0.0 {
            return Err(Error::Config(format!("lambda {} must be >= 0", self.lambda)));
        }
        // lr = 0 is permitted so plateau behavior can be exercised
        if self.lr < 0.0 {
            return Err(Error::Config(format!("learning rate {} must be >= 0", self.lr)));
        }
        if self.patience < 1 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if self.max_epochs < 1 || self.batch < 1 {
            return Err(Error::Config("max_epochs and batch must be >= 1".into()));
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(Error::Config(format!(
                "train fraction {} outside (0, 1)",
                self.train_frac
            )));
        }
        Ok(())
    }
}

/// The composite loss: per-element-averaged bottom loss plus
/// `lambda` times the aggregate-level loss.
pub fn hierarchical_loss(
    b_true: &Tensor,
    b_pred: &Tensor,
    h_true: &Tensor,
    h_pred: &Tensor,
    lambda: f64,
    kind: LossKind,
) -> Result<Tensor> {
    if lambda < 0.0 {
        return Err(Error::Config(format!("lambda {lambda} must be >= 0")));
    }
    if b_true.shape() != b_pred.shape() {
        return Err(Error::ShapeMismatch {
            op: "hierarchical_loss",
            expected: format!("{:?} bottom predictions", b_true.shape()),
            actual: format!("{:?}", b_pred.shape()),
        });
    }
    if h_true.shape() != h_pred.shape() {
        return Err(Error::ShapeMismatch {
            op: "hierarchical_loss",
            expected: format!("{:?} aggregate predictions", h_true.shape()),
            actual: format!("{:?}", h_pred.shape()),
        });
    }
    let bottom = kind.term(b_pred, b_true);
    let agg = kind.term(h_pred, h_true);
    Ok(bottom.add(&agg.scale(lambda)))
}

/// Early-stopping state: stop once `patience` epochs pass without a strict
/// improvement of the best validation loss.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> EarlyStopping {
        EarlyStopping { patience, best: f64::INFINITY, best_epoch: 0 }
    }

    /// Record this epoch's validation loss. Returns `(improved, stop)`.
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> (bool, bool) {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = epoch;
            (true, false)
        } else {
            (false, epoch - self.best_epoch >= self.patience)
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Per-epoch training statistics.
#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Pooled validation WAPE per hierarchy level (level 0 first).
    pub val_wape_per_level: Vec<f64>,
    /// Pooled validation WAPE over all levels.
    pub val_wape_overall: f64,
}

/// Full training trace plus where it stopped.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
}

impl TrainReport {
    /// Comma-separated rendering: epoch, train/validation losses, and one
    /// validation WAPE column per level.
    pub fn to_csv(&self) -> String {
        let levels = self.epochs.first().map(|e| e.val_wape_per_level.len()).unwrap_or(0);
        let mut out = String::from("epoch,train_loss,val_loss");
        for level in 0..levels {
            out.push_str(&format!(",val_wape_level{level}"));
        }
        out.push('\n');
        for e in &self.epochs {
            out.push_str(&format!("{},{},{}", e.epoch, e.train_loss, e.val_loss));
            for w in &e.val_wape_per_level {
                out.push_str(&format!(",{w}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn best(&self) -> &EpochStats {
        &self.epochs[self.best_epoch]
    }
}

/// A trained backbone bundled with everything forecasting needs.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub cfg: MGMConfig,
    pub params: BackboneParams,
    pub scaler: Scaler,
}

/// One supervised sliding window, already scaled for the model but with
/// truths in original units.
#[derive(Clone)]
struct WindowSample {
    window: Tensor,
    /// Scaled per-graph-node targets for teacher forcing.
    teacher: Tensor,
    /// Bottom truths `[n, H]`, original units.
    b_true: Tensor,
    /// Aggregate truths `[a, H]`, original units.
    h_true: Tensor,
}

#[derive(Clone)]
struct TrainContext {
    mgm: MGMConfig,
    adjacency: AdjacencyMatrix,
    summing: SummingMatrix,
    scaler: Scaler,
    lambda: f64,
    loss_kind: LossKind,
    /// Aggregate row count of the hierarchy.
    a: usize,
    /// Graph rows start at this hierarchy position (0 in full mode, `a` in
    /// bottom-only mode).
    graph_row_offset: usize,
}

impl TrainContext {
    /// Forward + composite loss for one window. `horizon_sup` truncates the
    /// supervised horizon for curriculum learning.
    fn window_loss(
        &self,
        params: &BackboneParams,
        sample: &WindowSample,
        horizon_sup: usize,
        teacher_forcing: bool,
    ) -> Result<(Tensor, ForecastSet)> {
        let teacher = if teacher_forcing { Some(&sample.teacher) } else { None };
        let bottom_scaled = mgm_forward(
            self.mgm.kind,
            params,
            &sample.window,
            &self.adjacency,
            &self.mgm,
            teacher,
        )?;
        let bottom = self.scaler.inverse_transform(&bottom_scaled, self.a);
        let forecasts = aggregate(&self.summing, &bottom)?;
        let h_pred = forecasts.full().slice(0, 0, self.a);

        let (b_pred_sup, b_true_sup, h_pred_sup, h_true_sup) =
            if horizon_sup < self.mgm.horizon {
                (
                    forecasts.bottom().slice(1, 0, horizon_sup),
                    sample.b_true.slice(1, 0, horizon_sup),
                    h_pred.slice(1, 0, horizon_sup),
                    sample.h_true.slice(1, 0, horizon_sup),
                )
            } else {
                (
                    forecasts.bottom().clone(),
                    sample.b_true.clone(),
                    h_pred,
                    sample.h_true.clone(),
                )
            };
        let loss = hierarchical_loss(
            &b_true_sup,
            &b_pred_sup,
            &h_true_sup,
            &h_pred_sup,
            self.lambda,
            self.loss_kind,
        )?;
        Ok((loss, forecasts))
    }

    fn loss_and_grads(
        &self,
        params: &BackboneParams,
        sample: &WindowSample,
        horizon_sup: usize,
    ) -> Result<(f64, Gradients)> {
        let (loss, _) = self.window_loss(params, sample, horizon_sup, true)?;
        let value = loss.value();
        let grads = backward(&loss)?;
        Ok((value, grads))
    }
}

/// Worker-thread cap from HGNN_THREADS (default 1).
fn worker_threads() -> usize {
    std::env::var("HGNN_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|v| *v >= 1)
        .unwrap_or(1)
}

/// Evaluate a batch of windows, possibly across worker threads. Results are
/// reduced in window order, so the outcome is identical for any thread
/// count.
fn batch_losses_and_grads(
    ctx: &TrainContext,
    params: &BackboneParams,
    samples: &[&WindowSample],
    horizon_sup: usize,
    threads: usize,
) -> Result<Vec<(f64, Gradients)>> {
    if threads <= 1 || samples.len() <= 1 {
        return samples
            .iter()
            .map(|s| ctx.loss_and_grads(params, s, horizon_sup))
            .collect();
    }
    // tensors are Send but not Sync, so each worker owns clones (cheap: the
    // value buffers are shared)
    let chunk_len = samples.len().div_ceil(threads);
    let mut results: Vec<Option<Result<(f64, Gradients)>>> =
        (0..samples.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let mut slots: &mut [Option<Result<(f64, Gradients)>>] = &mut results;
        for chunk in samples.chunks(chunk_len) {
            let (head, tail) = slots.split_at_mut(chunk.len());
            slots = tail;
            let params = params.clone();
            let ctx = ctx.clone();
            let owned: Vec<WindowSample> = chunk.iter().map(|s| (*s).clone()).collect();
            scope.spawn(move || {
                for (slot, sample) in head.iter_mut().zip(&owned) {
                    *slot = Some(ctx.loss_and_grads(&params, sample, horizon_sup));
                }
            });
        }
    });
    results.into_iter().map(|r| r.expect("worker filled slot")).collect()
}

fn build_samples(
    ctx: &TrainContext,
    scaled: &Tensor,
    original: &Tensor,
    origins: &[usize],
) -> Vec<WindowSample> {
    let (w_in, horizon) = (ctx.mgm.input_window, ctx.mgm.horizon);
    let graph_rows = ctx.adjacency.node_count();
    origins
        .iter()
        .map(|&origin| {
            let input_start = origin + 1 - w_in;
            let window = scaled
                .slice(0, ctx.graph_row_offset, graph_rows)
                .slice(1, input_start, w_in)
                .reshape(&[graph_rows, 1, w_in]);
            let teacher = scaled
                .slice(0, ctx.graph_row_offset, graph_rows)
                .slice(1, origin + 1, horizon);
            let b_true = original.slice(0, ctx.a, original.shape()[0] - ctx.a).slice(
                1,
                origin + 1,
                horizon,
            );
            let h_true = original.slice(0, 0, ctx.a).slice(1, origin + 1, horizon);
            WindowSample { window, teacher, b_true, h_true }
        })
        .collect()
}

/// Train a backbone on a panel. The panel's trailing fraction (after
/// `train_frac`) is the validation segment; scaling statistics are fitted
/// on the training segment only, and the loss is computed in original units
/// so coherence holds where it matters.
pub fn train(
    cfg: &TrainConfig,
    mgm_cfg: &MGMConfig,
    panel: &TimeSeriesPanel,
    hierarchy: &Arc<Hierarchy>,
) -> Result<(TrainedModel, TrainReport)> {
    cfg.validate()?;
    mgm_cfg.validate()?;
    if panel.node_ids() != hierarchy.node_ids() {
        return Err(Error::Data("panel is not aligned to the hierarchy".into()));
    }
    if mgm_cfg.channels != 1 {
        return Err(Error::Config("training currently feeds one value channel".into()));
    }

    let t_len = panel.t_len();
    let (w_in, horizon) = (mgm_cfg.input_window, mgm_cfg.horizon);
    let train_len =
        ((t_len as f64 * cfg.train_frac).floor() as usize).clamp(1, t_len.saturating_sub(1));

    // sample origins: the last input step of each window
    let first_origin = w_in - 1;
    let train_origins: Vec<usize> = (first_origin..t_len)
        .filter(|o| o + horizon < train_len)
        .collect();
    let val_origins: Vec<usize> = (first_origin.max(train_len.saturating_sub(1))..t_len)
        .filter(|o| o + horizon < t_len)
        .collect();
    if train_origins.is_empty() {
        return Err(Error::Data(format!(
            "insufficient data: training segment of {train_len} cannot fit window {w_in} + \
             horizon {horizon}"
        )));
    }
    if val_origins.is_empty() {
        return Err(Error::Data(format!(
            "insufficient data: validation segment of {} cannot fit horizon {horizon}",
            t_len - train_len
        )));
    }

    let train_slice = panel.values().slice(1, 0, train_len);
    let scaler = Scaler::fit(&train_slice, cfg.scaling);
    let scaled = scaler.transform(panel.values());

    let adjacency = hierarchy_adjacency(hierarchy, mgm_cfg.graph_mode);
    let summing = summing_matrix(hierarchy);
    let ctx = TrainContext {
        mgm: mgm_cfg.clone(),
        adjacency,
        summing,
        scaler: scaler.clone(),
        lambda: cfg.lambda,
        loss_kind: cfg.loss_kind,
        a: hierarchy.a(),
        graph_row_offset: match mgm_cfg.graph_mode {
            GraphMode::FullHierarchy => 0,
            GraphMode::BottomOnly => hierarchy.a(),
        },
    };

    let train_samples = build_samples(&ctx, &scaled, panel.values(), &train_origins);
    let val_samples = build_samples(&ctx, &scaled, panel.values(), &val_origins);

    let mut params = init_backbone(mgm_cfg, cfg.seed)?;
    let mut adam = Adam::new(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_params = params.clone();
    let threads = worker_threads();

    let mut epochs = Vec::new();
    let mut stopped_epoch = cfg.max_epochs.saturating_sub(1);
    for epoch in 0..cfg.max_epochs {
        let horizon_sup = if cfg.curriculum && mgm_cfg.kind == BackboneKind::MixhopTcn {
            (epoch + 1).min(horizon)
        } else {
            horizon
        };

        let mut order: Vec<usize> = (0..train_samples.len()).collect();
        let mut rng =
            ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add((epoch as u64).wrapping_mul(0x9E3779B97F4A7C15)));
        order.shuffle(&mut rng);

        let mut epoch_loss_sum = 0.0;
        for batch in order.chunks(cfg.batch) {
            let batch_samples: Vec<&WindowSample> =
                batch.iter().map(|&i| &train_samples[i]).collect();
            let results = batch_losses_and_grads(&ctx, &params, &batch_samples, horizon_sup, threads)?;
            let mut total = Gradients::new();
            let mut batch_loss = 0.0;
            for (value, grads) in &results {
                batch_loss += value;
                total.add_assign(grads);
            }
            if !batch_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("non-finite training loss in a batch of {}", batch.len()),
                });
            }
            total.scale(1.0 / batch.len() as f64);
            epoch_loss_sum += batch_loss;
            adam.step(&mut params, &total);
        }
        let train_loss = epoch_loss_sum / train_samples.len() as f64;

        // validation: free-running decode, full horizon, original units
        let (val_loss, val_wape_per_level, val_wape_overall) = no_grad(|| -> Result<_> {
            let mut loss_sum = 0.0;
            let levels = hierarchy.level_count();
            let mut err_per_level = vec![0.0; levels];
            let mut mag_per_level = vec![0.0; levels];
            for sample in &val_samples {
                let (loss, forecasts) = ctx.window_loss(&params, sample, horizon, false)?;
                loss_sum += loss.value();
                let full_pred = forecasts.full();
                for pos in 0..hierarchy.m() {
                    let level = hierarchy.level_of(pos);
                    for step in 0..horizon {
                        let truth = if pos < ctx.a {
                            sample.h_true.at2(pos, step)
                        } else {
                            sample.b_true.at2(pos - ctx.a, step)
                        };
                        err_per_level[level] += (truth - full_pred.at2(pos, step)).abs();
                        mag_per_level[level] += truth.abs();
                    }
                }
            }
            let per_level: Vec<f64> = err_per_level
                .iter()
                .zip(&mag_per_level)
                .map(|(e, m)| if *m > 0.0 { e / m } else { 0.0 })
                .collect();
            let overall = {
                let e: f64 = err_per_level.iter().sum();
                let m: f64 = mag_per_level.iter().sum();
                if m > 0.0 {
                    e / m
                } else {
                    0.0
                }
            };
            Ok((loss_sum / val_samples.len() as f64, per_level, overall))
        })?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence { epoch, detail: "non-finite validation loss".into() });
        }

        epochs.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            val_wape_per_level,
            val_wape_overall,
        });

        let (improved, stop) = stopper.observe(epoch, val_loss);
        if improved {
            best_params = params.clone();
        }
        if stop {
            stopped_epoch = epoch;
            break;
        }
        stopped_epoch = epoch;
    }

    let report = TrainReport { epochs, best_epoch: stopper.best_epoch(), stopped_epoch };
    let model = TrainedModel { cfg: mgm_cfg.clone(), params: best_params, scaler };
    Ok((model, report))
}

/// Forecast `horizon` steps from the tail of a panel using a trained model.
/// The result is coherent by construction. `horizon` may be at most the
/// trained horizon; shorter requests slice the head of the forecast.
pub fn forecast(
    model: &TrainedModel,
    panel: &TimeSeriesPanel,
    hierarchy: &Arc<Hierarchy>,
    horizon: usize,
) -> Result<ForecastSet> {
    model.cfg.validate()?;
    if panel.node_ids() != hierarchy.node_ids() {
        return Err(Error::Data("panel is not aligned to the hierarchy".into()));
    }
    if horizon < 1 || horizon > model.cfg.horizon {
        return Err(Error::Config(format!(
            "requested horizon {horizon} outside 1..={}",
            model.cfg.horizon
        )));
    }
    let w_in = model.cfg.input_window;
    if panel.t_len() < w_in {
        return Err(Error::Data(format!(
            "panel tail of {} steps is shorter than the input window {w_in}",
            panel.t_len()
        )));
    }
    if model.scaler.rows() != hierarchy.m() {
        return Err(Error::Checkpoint(format!(
            "scaler covers {} nodes but the hierarchy has {}",
            model.scaler.rows(),
            hierarchy.m()
        )));
    }

    let adjacency = hierarchy_adjacency(hierarchy, model.cfg.graph_mode);
    let summing = summing_matrix(hierarchy);
    let graph_rows = adjacency.node_count();
    let row_offset = match model.cfg.graph_mode {
        GraphMode::FullHierarchy => 0,
        GraphMode::BottomOnly => hierarchy.a(),
    };

    no_grad(|| {
        let scaled = model.scaler.transform(panel.values());
        let window = scaled
            .slice(0, row_offset, graph_rows)
            .slice(1, panel.t_len() - w_in, w_in)
            .reshape(&[graph_rows, 1, w_in]);
        let bottom_scaled = mgm_forward(
            model.cfg.kind,
            &model.params,
            &window,
            &adjacency,
            &model.cfg,
            None,
        )?;
        let bottom = model
            .scaler
            .inverse_transform(&bottom_scaled, hierarchy.a())
            .slice(1, 0, horizon);
        aggregate(&summing, &bottom)
    })
}
