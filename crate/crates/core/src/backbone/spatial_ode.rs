//! Optional backbone: the mixhop-TCN skeleton with spatial mixing done by a
//! fixed-step integration of dH/dt = (A^ - I) H instead of mix-hop.

use crate::error::Result;
use crate::graph::{normalize, spatial_ode_step, AdjacencyMatrix, NormScheme};
use crate::temporal::{dilated_inception, INCEPTION_KERNEL_SIZES};
use crate::tensor::Tensor;

use super::mixhop_tcn::bank_channels;
use super::{last_step, linear_head, BackboneParams, MGMConfig, ParamBuilder};

const ODE_TIME: f64 = 1.0;
const ODE_STEPS: usize = 8;

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
        b.tensor(&format!("layer{layer}/mix/w"), &[cfg.hidden, concat_ch, 1], concat_ch);
        b.tensor(&format!("layer{layer}/mix/b"), &[cfg.hidden], concat_ch);
        b.tensor(&format!("layer{layer}/skip/w"), &[cfg.hidden, cfg.hidden, 1], cfg.hidden);
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
    let dilations = cfg.dilation_schedule()?;

    let mut x = window.conv1d_dilated(params.get("input/w"), Some(params.get("input/b")), 1);
    let mut skip = Tensor::zeros(x.shape());
    for layer in 0..cfg.layers {
        let kernels = super::mixhop_tcn::inception_kernels(params, layer);
        let z = dilated_inception(&x, dilations.dilations()[layer], &kernels)?.tanh();
        let propagated = spatial_ode_step(&z, &sym, ODE_TIME, ODE_STEPS)?;
        let mixed = propagated.conv1d_dilated(
            params.get(&format!("layer{layer}/mix/w")),
            Some(params.get(&format!("layer{layer}/mix/b"))),
            1,
        );
        let skip_w = params.get(&format!("layer{layer}/skip/w"));
        skip = skip.add(&mixed.conv1d_dilated(skip_w, None, 1));
        x = x.add(&mixed);
    }
    let features = last_step(&skip).relu();
    Ok(linear_head(&features, params.get("head/w"), params.get("head/b")))
}
