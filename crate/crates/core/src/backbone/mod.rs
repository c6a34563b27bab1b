//! Multivariate graph-model backbones.
//!
//! Every backbone maps an input window over the graph nodes to multi-step
//! bottom-level forecasts through one uniform interface. The concrete
//! architectures are assembled from the graph and temporal primitives.

mod checkpoint;
mod diffusion_rnn;
mod gcn_gru_attn;
mod gegenbauer_tgc;
mod mixhop_tcn;
mod spatial_ode;

pub use checkpoint::{
    checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, save_checkpoint, Checkpoint,
};

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{AdjacencyMatrix, GraphMode};
use crate::temporal::DilationSchedule;
use crate::tensor::Tensor;

/// The available backbone architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackboneKind {
    /// Encoder-decoder of GRU cells whose dense products run through
    /// diffusion convolutions; recursive multi-step decoding.
    DiffusionRnn,
    /// Alternating dilated-inception and mix-hop layers with skip
    /// connections and a one-shot multi-horizon head.
    MixhopTcn,
    /// Stacked blocks of Gegenbauer graph convolution and coarse/fine
    /// frequency filtering with residual connections.
    GegenbauerTgc,
    /// Per-step GCN into a GRU over time, pooled by temporal attention.
    GcnGruAttn,
    /// Mixhop-TCN skeleton with the spatial mixing replaced by a fixed-step
    /// graph-ODE integrator.
    SpatialOde,
}

impl BackboneKind {
    pub const ALL: [BackboneKind; 5] = [
        BackboneKind::DiffusionRnn,
        BackboneKind::MixhopTcn,
        BackboneKind::GegenbauerTgc,
        BackboneKind::GcnGruAttn,
        BackboneKind::SpatialOde,
    ];

    /// The kinds exercised by default (the spatial-ODE variant is an
    /// optional extra).
    pub const MANDATORY: [BackboneKind; 4] = [
        BackboneKind::DiffusionRnn,
        BackboneKind::MixhopTcn,
        BackboneKind::GegenbauerTgc,
        BackboneKind::GcnGruAttn,
    ];

    pub fn parse(s: &str) -> Result<BackboneKind> {
        match s {
            "diffusion_rnn" => Ok(BackboneKind::DiffusionRnn),
            "mixhop_tcn" => Ok(BackboneKind::MixhopTcn),
            "gegenbauer_tgc" => Ok(BackboneKind::GegenbauerTgc),
            "gcn_gru_attn" => Ok(BackboneKind::GcnGruAttn),
            "spatial_ode" => Ok(BackboneKind::SpatialOde),
            other => Err(Error::Config(format!(
                "unknown backbone '{other}' (expected diffusion_rnn, mixhop_tcn, \
                 gegenbauer_tgc, gcn_gru_attn, or spatial_ode)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            BackboneKind::DiffusionRnn => "diffusion_rnn",
            BackboneKind::MixhopTcn => "mixhop_tcn",
            BackboneKind::GegenbauerTgc => "gegenbauer_tgc",
            BackboneKind::GcnGruAttn => "gcn_gru_attn",
            BackboneKind::SpatialOde => "spatial_ode",
        }
    }

    pub(crate) fn tag(&self) -> u8 {
        match self {
            BackboneKind::DiffusionRnn => 0,
            BackboneKind::MixhopTcn => 1,
            BackboneKind::GegenbauerTgc => 2,
            BackboneKind::GcnGruAttn => 3,
            BackboneKind::SpatialOde => 4,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Result<BackboneKind> {
        Self::ALL
            .into_iter()
            .find(|k| k.tag() == tag)
            .ok_or_else(|| Error::Checkpoint(format!("unknown backbone tag {tag}")))
    }
}

/// Configuration of one backbone instance.
#[derive(Debug, Clone)]
pub struct MGMConfig {
    pub kind: BackboneKind,
    pub graph_mode: GraphMode,
    /// Length of the input window.
    pub input_window: usize,
    /// Forecast horizon.
    pub horizon: usize,
    /// Hidden feature width.
    pub hidden: usize,
    /// Number of stacked layers / blocks.
    pub layers: usize,
    /// Hop count (mix-hop), diffusion steps, or polynomial order.
    pub k: usize,
    /// Mix-hop root-retention ratio.
    pub beta: f64,
    /// Gegenbauer order.
    pub alpha_geg: f64,
    /// Dilation exponent of the temporal convolution schedule.
    pub dilation_q: usize,
    /// Input channels per node (value series plus covariates).
    pub channels: usize,
}

impl MGMConfig {
    /// A small default configuration for the given kind and graph mode.
    pub fn new(kind: BackboneKind, graph_mode: GraphMode) -> MGMConfig {
        MGMConfig {
            kind,
            graph_mode,
            input_window: 24,
            horizon: 7,
            hidden: 16,
            layers: 2,
            k: 2,
            beta: 0.05,
            alpha_geg: 1.0,
            dilation_q: 2,
            channels: 1,
        }
    }

    /// Whether this kind uses the dilated-convolution stack (and therefore
    /// has a meaningful receptive field to cover).
    pub fn uses_dilated_stack(&self) -> bool {
        matches!(self.kind, BackboneKind::MixhopTcn | BackboneKind::SpatialOde)
    }

    pub fn dilation_schedule(&self) -> Result<DilationSchedule> {
        DilationSchedule::new(self.dilation_q, self.layers)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_window < 1 || self.horizon < 1 {
            return Err(Error::Config("input_window and horizon must be >= 1".into()));
        }
        if self.hidden < 1 || self.layers < 1 || self.channels < 1 {
            return Err(Error::Config("hidden, layers, and channels must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta {} outside [0, 1]", self.beta)));
        }
        if self.alpha_geg <= 0.0 {
            return Err(Error::Config(format!("alpha_geg {} must be > 0", self.alpha_geg)));
        }
        if self.uses_dilated_stack() {
            let rf = self.dilation_schedule()?.receptive_field();
            if self.input_window < rf {
                return Err(Error::Config(format!(
                    "input_window {} is below the receptive field {} of {} layers with q={}",
                    self.input_window, rf, self.layers, self.dilation_q
                )));
            }
        }
        Ok(())
    }
}

/// The learnable parameter set of one backbone, keyed by layer path.
/// Iteration follows key order, which is deterministic.
#[derive(Debug, Clone, Default)]
pub struct BackboneParams {
    tensors: BTreeMap<String, Tensor>,
}

impl BackboneParams {
    pub fn get(&self, key: &str) -> &Tensor {
        self.tensors
            .get(key)
            .unwrap_or_else(|| panic!("missing parameter '{key}'"))
    }

    pub fn get_mut(&mut self, key: &str) -> &mut Tensor {
        self.tensors
            .get_mut(key)
            .unwrap_or_else(|| panic!("missing parameter '{key}'"))
    }

    pub fn insert(&mut self, key: String, tensor: Tensor) {
        self.tensors.insert(key, tensor);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Clone with one tensor substituted (used for finite differences).
    pub fn with_replaced(&self, key: &str, tensor: Tensor) -> BackboneParams {
        let mut out = self.clone();
        out.insert(key.to_string(), tensor);
        out
    }
}

/// Total scalar parameter count.
pub fn count_params(params: &BackboneParams) -> usize {
    params.iter().map(|(_, t)| t.len()).sum()
}

/// Sequential parameter initializer. Tensors are drawn in creation order
/// from a seeded stream, each uniform in `(-s, s)` with `s = sqrt(1/fan_in)`.
pub(crate) struct ParamBuilder {
    rng: ChaCha8Rng,
    params: BackboneParams,
}

impl ParamBuilder {
    fn new(seed: u64) -> ParamBuilder {
        ParamBuilder {
            rng: ChaCha8Rng::seed_from_u64(seed),
            params: BackboneParams::default(),
        }
    }

    pub(crate) fn tensor(&mut self, key: &str, shape: &[usize], fan_in: usize) -> Tensor {
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        let numel: usize = shape.iter().product();
        let data: Vec<f64> = (0..numel).map(|_| self.rng.gen_range(-bound..bound)).collect();
        let tensor = Tensor::param(shape, data);
        self.params.insert(key.to_string(), tensor.clone());
        tensor
    }
}

/// Initialize the parameters of a backbone. Identical `(cfg, seed)` pairs
/// produce bitwise-identical parameters.
pub fn init_backbone(cfg: &MGMConfig, seed: u64) -> Result<BackboneParams> {
    cfg.validate()?;
    let mut builder = ParamBuilder::new(seed);
    match cfg.kind {
        BackboneKind::DiffusionRnn => diffusion_rnn::build(cfg, &mut builder),
        BackboneKind::MixhopTcn => mixhop_tcn::build(cfg, &mut builder),
        BackboneKind::GegenbauerTgc => gegenbauer_tgc::build(cfg, &mut builder),
        BackboneKind::GcnGruAttn => gcn_gru_attn::build(cfg, &mut builder),
        BackboneKind::SpatialOde => spatial_ode::build(cfg, &mut builder),
    }
    Ok(builder.params)
}

fn validate_forward_inputs(
    cfg: &MGMConfig,
    window: &Tensor,
    adjacency: &AdjacencyMatrix,
) -> Result<()> {
    cfg.validate()?;
    if cfg.graph_mode != adjacency.mode() {
        return Err(Error::Config(format!(
            "graph mode mismatch: config {}, adjacency {}",
            cfg.graph_mode.as_str(),
            adjacency.mode().as_str()
        )));
    }
    let n_nodes = adjacency.node_count();
    if window.ndim() != 3
        || window.shape()[0] != n_nodes
        || window.shape()[1] != cfg.channels
        || window.shape()[2] != cfg.input_window
    {
        return Err(Error::ShapeMismatch {
            op: "mgm_forward",
            expected: format!("[{n_nodes}, {}, {}] window", cfg.channels, cfg.input_window),
            actual: format!("{:?}", window.shape()),
        });
    }
    if !window.is_finite() {
        return Err(Error::NonFinite { op: "mgm_forward window" });
    }
    Ok(())
}

/// Run one backbone forward pass: an input window over the graph nodes to
/// bottom-level forecasts of shape `[n, horizon]`.
///
/// In full-hierarchy mode the window covers every node (ancestors included)
/// and only the trailing bottom rows are emitted. `teacher` supplies
/// per-node target values for teacher-forced decoding at train time; it is
/// ignored by the one-shot backbones.
pub fn mgm_forward(
    kind: BackboneKind,
    params: &BackboneParams,
    window: &Tensor,
    adjacency: &AdjacencyMatrix,
    cfg: &MGMConfig,
    teacher: Option<&Tensor>,
) -> Result<Tensor> {
    if kind != cfg.kind {
        return Err(Error::Config(format!(
            "backbone kind mismatch: forward {} vs config {}",
            kind.as_str(),
            cfg.kind.as_str()
        )));
    }
    validate_forward_inputs(cfg, window, adjacency)?;
    if let Some(t) = teacher {
        if t.ndim() != 2 || t.shape()[0] != adjacency.node_count() || t.shape()[1] != cfg.horizon {
            return Err(Error::ShapeMismatch {
                op: "mgm_forward teacher",
                expected: format!("[{}, {}]", adjacency.node_count(), cfg.horizon),
                actual: format!("{:?}", t.shape()),
            });
        }
    }

    let all_nodes = match kind {
        BackboneKind::DiffusionRnn => diffusion_rnn::forward(cfg, params, window, adjacency, teacher)?,
        BackboneKind::MixhopTcn => mixhop_tcn::forward(cfg, params, window, adjacency)?,
        BackboneKind::GegenbauerTgc => gegenbauer_tgc::forward(cfg, params, window, adjacency)?,
        BackboneKind::GcnGruAttn => gcn_gru_attn::forward(cfg, params, window, adjacency)?,
        BackboneKind::SpatialOde => spatial_ode::forward(cfg, params, window, adjacency)?,
    };

    // emit only the bottom rows
    let offset = adjacency.bottom_offset();
    let bottom = if offset > 0 {
        all_nodes.slice(0, offset, adjacency.node_count() - offset)
    } else {
        all_nodes
    };
    if !bottom.is_finite() {
        return Err(Error::NonFinite { op: "mgm_forward output" });
    }
    Ok(bottom)
}

/// Shared output head: `[nodes, features] -> [nodes, horizon]`.
pub(crate) fn linear_head(features: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
    features.matmul(w).add(b)
}

/// Last time-step feature slice of a `[nodes, channels, time]` tensor.
pub(crate) fn last_step(x: &Tensor) -> Tensor {
    let (nodes, channels, t_len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    x.slice(2, t_len - 1, 1).reshape(&[nodes, channels])
}

/// Per-tensor result of a parameter gradient check.
#[derive(Debug)]
pub struct GradCheckReport {
    /// (parameter key, max relative error over the sampled coordinates)
    pub per_tensor: Vec<(String, f64)>,
    pub max_error: f64,
}

/// Compare analytic gradients of `loss_fn` against central finite
/// differences for every parameter tensor, sampling at most `max_coords`
/// coordinates per tensor (all of them when the tensor is small enough).
pub fn grad_check_params<F>(
    loss_fn: F,
    params: &BackboneParams,
    epsilon: f64,
    max_coords: usize,
    seed: u64,
) -> crate::error::Result<GradCheckReport>
where
    F: Fn(&BackboneParams) -> crate::error::Result<Tensor>,
{
    use crate::tensor::{backward, clear_tape, no_grad, relative_error};

    if !(epsilon > 0.0) {
        return Err(crate::error::Error::Config("epsilon must be > 0".into()));
    }
    clear_tape();
    let loss = loss_fn(params)?;
    if loss.len() != 1 {
        return Err(crate::error::Error::LossNotScalar(loss.shape().to_vec()));
    }
    let grads = backward(&loss)?;

    no_grad(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut per_tensor = Vec::new();
        let mut max_error = 0.0f64;
        for (key, tensor) in params.iter() {
            let analytic = grads.get_or_zeros(tensor);
            let coords: Vec<usize> = if tensor.len() <= max_coords {
                (0..tensor.len()).collect()
            } else {
                rand::seq::index::sample(&mut rng, tensor.len(), max_coords).into_vec()
            };
            let mut tensor_err = 0.0f64;
            for i in coords {
                let base = tensor.at(i);
                let plus = params.with_replaced(key, tensor.with_value_at(i, base + epsilon));
                let minus = params.with_replaced(key, tensor.with_value_at(i, base - epsilon));
                let f_plus = loss_fn(&plus)?.value();
                let f_minus = loss_fn(&minus)?.value();
                if !f_plus.is_finite() || !f_minus.is_finite() {
                    return Err(crate::error::Error::NonFinite { op: "grad_check_params" });
                }
                let numeric = (f_plus - f_minus) / (2.0 * epsilon);
                tensor_err = tensor_err.max(relative_error(analytic.at(i), numeric));
            }
            max_error = max_error.max(tensor_err);
            per_tensor.push((key.clone(), tensor_err));
        }
        Ok(GradCheckReport { per_tensor, max_error })
    })
}
