//! Stacked spectral blocks: Gegenbauer graph convolution, coarse
//! frequency-domain filtering, trend/detail gating, and a residual
//! connection, closed by a linear head.

use crate::error::Result;
use crate::graph::{gegenbauer_conv, normalize, AdjacencyMatrix, GegenbauerParams, NormScheme};
use crate::temporal::{coarse_frequency_filter, trend_detail_split, FrequencyMask};
use crate::tensor::Tensor;

use super::{last_step, linear_head, BackboneParams, MGMConfig, ParamBuilder};

/// Largest odd moving-average window up to 5 that fits the series.
fn fine_window(t_len: usize) -> usize {
    let w = t_len.min(5);
    if w % 2 == 0 {
        w - 1
    } else {
        w
    }
}

pub(crate) fn build(cfg: &MGMConfig, b: &mut ParamBuilder) {
    let bins = cfg.input_window / 2 + 1;
    b.tensor("input/w", &[cfg.hidden, cfg.channels, 1], cfg.channels);
    b.tensor("input/b", &[cfg.hidden], cfg.channels);
    for block in 0..cfg.layers {
        b.tensor(&format!("block{block}/theta"), &[cfg.k + 1], cfg.k + 1);
        b.tensor(&format!("block{block}/freq_gate"), &[bins], bins);
        b.tensor(&format!("block{block}/trend_gate"), &[1], 1);
        b.tensor(&format!("block{block}/detail_gate"), &[1], 1);
        b.tensor(&format!("block{block}/mix/w"), &[cfg.hidden, cfg.hidden, 1], cfg.hidden);
        b.tensor(&format!("block{block}/mix/b"), &[cfg.hidden], cfg.hidden);
    }
    b.tensor("head/w", &[cfg.hidden, cfg.horizon], cfg.hidden);
    b.tensor("head/b", &[cfg.horizon], cfg.hidden);
}

pub(crate) fn forward(
    cfg: &MGMConfig,
    params: &BackboneParams,
    window: &Tensor,
    adjacency: &AdjacencyMatrix,
) -> Result<Tensor> {
    let sym = normalize(adjacency, NormScheme::SymSelfloop)?;
    let t_len = window.shape()[2];
    let w_fine = fine_window(t_len);

    let mut x = window.conv1d_dilated(params.get("input/w"), Some(params.get("input/b")), 1);
    for block in 0..cfg.layers {
        let spectral = gegenbauer_conv(
            &x,
            &sym,
            &GegenbauerParams {
                k: cfg.k,
                alpha: cfg.alpha_geg,
                theta: params.get(&format!("block{block}/theta")).clone(),
            },
        )?;
        let mask = FrequencyMask::Gate(params.get(&format!("block{block}/freq_gate")).clone());
        let coarse = coarse_frequency_filter(&spectral, &mask)?;
        let (trend, detail) = trend_detail_split(&coarse, w_fine)?;
        let filtered = trend
            .mul(params.get(&format!("block{block}/trend_gate")))
            .add(&detail.mul(params.get(&format!("block{block}/detail_gate"))));
        let mixed = filtered.conv1d_dilated(
            params.get(&format!("block{block}/mix/w")),
            Some(params.get(&format!("block{block}/mix/b"))),
            1,
        );
        x = x.add(&mixed);
    }
    let features = last_step(&x);
    Ok(linear_head(&features, params.get("head/w"), params.get("head/b")))
}
