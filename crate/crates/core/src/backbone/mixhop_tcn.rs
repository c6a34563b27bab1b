//! Dilated-inception / mix-hop backbone with skip connections and a
//! one-shot multi-horizon head.

use crate::error::Result;
use crate::graph::{mix_hop, normalize, AdjacencyMatrix, MixHopParams, NormScheme};
use crate::temporal::{dilated_inception, InceptionKernels, INCEPTION_KERNEL_SIZES};
use crate::tensor::Tensor;

use super::{last_step, linear_head, BackboneParams, MGMConfig, ParamBuilder};

/// Output channels of each inception bank; the concatenation of the four
/// banks is what the mix-hop selection maps back to `hidden`.
pub(crate) fn bank_channels(hidden: usize) -> usize {
    (hidden / 4).max(1)
}

pub(crate) fn build(cfg: &MGMConfig, b: &mut ParamBuilder) {
    let bank = bank_channels(cfg.hidden);
    let concat_ch = 4 * bank;
    b.tensor("input/w", &[cfg.hidden, cfg.channels, 1], cfg.channels);
    b.tensor("input/b", &[cfg.hidden], cfg.channels);
    for layer in 0..cfg.layers {
        for &k in &INCEPTION_KERNEL_SIZES {
            b.tensor(
                &format!("layer{layer}/inception/k{k}"),
                &[bank, cfg.hidden, k],
                cfg.hidden * k,
            );
        }
        for hop in 0..=cfg.k {
            b.tensor(
                &format!("layer{layer}/mixhop/w{hop}"),
                &[concat_ch, cfg.hidden],
                concat_ch,
            );
        }
        b.tensor(&format!("layer{layer}/skip/w"), &[cfg.hidden, cfg.hidden, 1], cfg.hidden);
    }
    b.tensor("head/w", &[cfg.hidden, cfg.horizon], cfg.hidden);
    b.tensor("head/b", &[cfg.horizon], cfg.hidden);
}

pub(crate) fn inception_kernels(params: &BackboneParams, layer: usize) -> InceptionKernels {
    InceptionKernels {
        banks: [
            params.get(&format!("layer{layer}/inception/k2")).clone(),
            params.get(&format!("layer{layer}/inception/k3")).clone(),
            params.get(&format!("layer{layer}/inception/k6")).clone(),
            params.get(&format!("layer{layer}/inception/k7")).clone(),
        ],
    }
}

pub(crate) fn forward(
    cfg: &MGMConfig,
    params: &BackboneParams,
    window: &Tensor,
    adjacency: &AdjacencyMatrix,
) -> Result<Tensor> {
    let row_norm = normalize(adjacency, NormScheme::RowSelfloop)?;
    let dilations = cfg.dilation_schedule()?;

    let mut x = window.conv1d_dilated(params.get("input/w"), Some(params.get("input/b")), 1);
    let mut skip = Tensor::zeros(x.shape());
    for layer in 0..cfg.layers {
        let kernels = inception_kernels(params, layer);
        let z = dilated_inception(&x, dilations.dilations()[layer], &kernels)?.tanh();
        let hop_weights: Vec<Tensor> = (0..=cfg.k)
            .map(|hop| params.get(&format!("layer{layer}/mixhop/w{hop}")).clone())
            .collect();
        let p = MixHopParams { beta: cfg.beta, k: cfg.k, weights: hop_weights };
        let mixed = mix_hop(&z, &row_norm, &p)?;
        let skip_w = params.get(&format!("layer{layer}/skip/w"));
        skip = skip.add(&mixed.conv1d_dilated(skip_w, None, 1));
        x = x.add(&mixed);
    }
    let features = last_step(&skip).relu();
    Ok(linear_head(&features, params.get("head/w"), params.get("head/b")))
}
