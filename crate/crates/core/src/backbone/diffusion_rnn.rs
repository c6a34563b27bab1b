//! Encoder-decoder of GRU cells whose dense products run through diffusion
//! convolutions over the graph; the decoder unrolls the horizon one step at
//! a time, optionally teacher-forced.

use crate::error::Result;
use crate::graph::{diffusion_conv, AdjacencyMatrix, DiffusionParams};
use crate::tensor::Tensor;

use super::{BackboneParams, MGMConfig, ParamBuilder};

fn diffusion_steps(cfg: &MGMConfig) -> usize {
    cfg.k.max(1)
}

fn build_cell(b: &mut ParamBuilder, prefix: &str, input_size: usize, hidden: usize, k: usize) {
    for gate in ["update", "reset", "cand"] {
        let f = input_size + hidden;
        b.tensor(&format!("{prefix}/{gate}/theta"), &[k, 2], 2 * k);
        b.tensor(&format!("{prefix}/{gate}/w"), &[f, hidden], f);
        b.tensor(&format!("{prefix}/{gate}/b"), &[hidden], f);
    }
}

pub(crate) fn build(cfg: &MGMConfig, b: &mut ParamBuilder) {
    let k = diffusion_steps(cfg);
    build_cell(b, "enc", cfg.channels, cfg.hidden, k);
    build_cell(b, "dec", 1, cfg.hidden, k);
    b.tensor("dec/head/w", &[cfg.hidden, 1], cfg.hidden);
    b.tensor("dec/head/b", &[1], cfg.hidden);
}

/// One gate pre-activation: diffusion-filter the concatenated input, then
/// apply the gate's dense weight and bias.
fn gate(
    params: &BackboneParams,
    prefix: &str,
    name: &str,
    xh: &Tensor,
    adjacency: &AdjacencyMatrix,
    k: usize,
) -> Result<Tensor> {
    let p = DiffusionParams {
        k,
        theta: params.get(&format!("{prefix}/{name}/theta")).clone(),
        alpha: 1.0,
    };
    let filtered = diffusion_conv(xh, adjacency, &p)?;
    Ok(filtered
        .matmul(params.get(&format!("{prefix}/{name}/w")))
        .add(params.get(&format!("{prefix}/{name}/b"))))
}

/// DCGRU cell step.
fn cell_step(
    params: &BackboneParams,
    prefix: &str,
    x_t: &Tensor,
    h_prev: &Tensor,
    adjacency: &AdjacencyMatrix,
    k: usize,
) -> Result<Tensor> {
    let xh = Tensor::concat(1, &[x_t, h_prev]);
    let update = gate(params, prefix, "update", &xh, adjacency, k)?.sigmoid();
    let reset = gate(params, prefix, "reset", &xh, adjacency, k)?.sigmoid();
    let x_rh = Tensor::concat(1, &[x_t, &reset.mul(h_prev)]);
    let candidate = gate(params, prefix, "cand", &x_rh, adjacency, k)?.tanh();
    Ok(update.mul(h_prev).add(&update.affine(-1.0, 1.0).mul(&candidate)))
}

pub(crate) fn forward(
    cfg: &MGMConfig,
    params: &BackboneParams,
    window: &Tensor,
    adjacency: &AdjacencyMatrix,
    teacher: Option<&Tensor>,
) -> Result<Tensor> {
    let nodes = window.shape()[0];
    let t_len = window.shape()[2];
    let k = diffusion_steps(cfg);

    let mut hidden = Tensor::zeros(&[nodes, cfg.hidden]);
    for t in 0..t_len {
        let x_t = window.slice(2, t, 1).reshape(&[nodes, cfg.channels]);
        hidden = cell_step(params, "enc", &x_t, &hidden, adjacency, k)?;
    }

    // decoder feeds back its own prediction (or the teacher value) of the
    // value channel
    let mut y_prev = window
        .slice(1, 0, 1)
        .slice(2, t_len - 1, 1)
        .reshape(&[nodes, 1]);
    let mut outputs = Vec::with_capacity(cfg.horizon);
    for step in 0..cfg.horizon {
        hidden = cell_step(params, "dec", &y_prev, &hidden, adjacency, k)?;
        let y = hidden
            .matmul(params.get("dec/head/w"))
            .add(params.get("dec/head/b"));
        y_prev = match teacher {
            Some(t) => t.slice(1, step, 1),
            None => y.clone(),
        };
        outputs.push(y);
    }
    let refs: Vec<&Tensor> = outputs.iter().collect();
    Ok(Tensor::concat(1, &refs))
}
