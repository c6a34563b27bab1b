//! Per-step graph convolution into a GRU over time, pooled through temporal
//! attention into a one-shot multi-horizon head.

use crate::error::Result;
use crate::graph::{gcn_layer, normalize, Activation, AdjacencyMatrix, NormScheme};
use crate::temporal::{gru_step, temporal_attention, AttentionParams, GruParams};
use crate::tensor::Tensor;

use super::{linear_head, BackboneParams, MGMConfig, ParamBuilder};

pub(crate) fn build(cfg: &MGMConfig, b: &mut ParamBuilder) {
    let h = cfg.hidden;
    b.tensor("gcn/theta", &[cfg.channels, h], cfg.channels);
    for gate in ["update", "reset", "cand"] {
        b.tensor(&format!("gru/w_{gate}"), &[2 * h, h], 2 * h);
        b.tensor(&format!("gru/b_{gate}"), &[h], 2 * h);
    }
    b.tensor("attn/w1", &[h, h], h);
    b.tensor("attn/b1", &[h], h);
    b.tensor("attn/w2", &[h, 1], h);
    b.tensor("attn/b2", &[1], h);
    b.tensor("head/w", &[h, cfg.horizon], h);
    b.tensor("head/b", &[cfg.horizon], h);
}

fn gru_params(params: &BackboneParams) -> GruParams {
    GruParams {
        w_update: params.get("gru/w_update").clone(),
        w_reset: params.get("gru/w_reset").clone(),
        w_candidate: params.get("gru/w_cand").clone(),
        b_update: params.get("gru/b_update").clone(),
        b_reset: params.get("gru/b_reset").clone(),
        b_candidate: params.get("gru/b_cand").clone(),
    }
}

pub(crate) fn forward(
    cfg: &MGMConfig,
    params: &BackboneParams,
    window: &Tensor,
    adjacency: &AdjacencyMatrix,
) -> Result<Tensor> {
    let sym = normalize(adjacency, NormScheme::SymSelfloop)?;
    let nodes = window.shape()[0];
    let t_len = window.shape()[2];
    let gru = gru_params(params);
    let attn = AttentionParams {
        w1: params.get("attn/w1").clone(),
        b1: params.get("attn/b1").clone(),
        w2: params.get("attn/w2").clone(),
        b2: params.get("attn/b2").clone(),
    };

    let mut hidden = Tensor::zeros(&[nodes, cfg.hidden]);
    let mut states = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let x_t = window.slice(2, t, 1).reshape(&[nodes, cfg.channels]);
        let spatial = gcn_layer(&x_t, &sym, params.get("gcn/theta"), Activation::Relu)?;
        hidden = gru_step(&spatial, &hidden, &gru)?;
        states.push(hidden.reshape(&[1, nodes, cfg.hidden]));
    }
    let refs: Vec<&Tensor> = states.iter().collect();
    let stacked = Tensor::concat(0, &refs);

    let mut contexts = Vec::with_capacity(nodes);
    for node in 0..nodes {
        let series = stacked.slice(1, node, 1).reshape(&[t_len, cfg.hidden]);
        let (context, _) = temporal_attention(&series, &attn)?;
        contexts.push(context.reshape(&[1, cfg.hidden]));
    }
    let refs: Vec<&Tensor> = contexts.iter().collect();
    let features = Tensor::concat(0, &refs);
    Ok(linear_head(&features, params.get("head/w"), params.get("head/b")))
}
