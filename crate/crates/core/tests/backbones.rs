//! Backbone-level behavior: output shapes, determinism, parameter counting,
//! checkpoint round trips, ancestor influence, and gradient flow.

use std::sync::Arc;

use hgnn_core::backbone::{
    checkpoint_from_bytes, checkpoint_to_bytes, count_params, grad_check_params, init_backbone,
    mgm_forward, BackboneKind, Checkpoint, MGMConfig,
};
use hgnn_core::data::{Scaler, ScalingKind};
use hgnn_core::graph::{hierarchy_adjacency, AdjacencyMatrix, GraphMode};
use hgnn_core::hierarchy::{build_hierarchy, Hierarchy};
use hgnn_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn edges(list: &[(&str, &str)]) -> Vec<(String, String)> {
    list.iter().map(|(c, p)| (c.to_string(), p.to_string())).collect()
}

/// Two-level tree: 4 leaves under 2 regions under one top (m = 7, n = 4).
fn seven_node() -> Arc<Hierarchy> {
    Arc::new(
        build_hierarchy(&edges(&[
            ("B1", "R1"),
            ("B2", "R1"),
            ("B3", "R2"),
            ("B4", "R2"),
            ("R1", "T"),
            ("R2", "T"),
        ]))
        .unwrap(),
    )
}

fn tiny_config(kind: BackboneKind, graph_mode: GraphMode) -> MGMConfig {
    MGMConfig {
        kind,
        graph_mode,
        input_window: 16,
        horizon: 3,
        hidden: 8,
        layers: 2,
        k: 2,
        beta: 0.1,
        alpha_geg: 1.0,
        dilation_q: 1,
        channels: 1,
    }
}

fn window_for(adjacency: &AdjacencyMatrix, cfg: &MGMConfig, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let numel = adjacency.node_count() * cfg.channels * cfg.input_window;
    Tensor::from_vec(
        &[adjacency.node_count(), cfg.channels, cfg.input_window],
        (0..numel).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
}

#[test]
fn output_shape_grid() {
    let h = seven_node();
    for kind in BackboneKind::ALL {
        for mode in [GraphMode::BottomOnly, GraphMode::FullHierarchy] {
            for (hidden, horizon) in [(4usize, 1usize), (8, 3)] {
                let mut cfg = tiny_config(kind, mode);
                cfg.hidden = hidden;
                cfg.horizon = horizon;
                let adj = hierarchy_adjacency(&h, mode);
                let params = init_backbone(&cfg, 1).unwrap();
                let window = window_for(&adj, &cfg, 5);
                let out = mgm_forward(kind, &params, &window, &adj, &cfg, None).unwrap();
                assert_eq!(
                    out.shape(),
                    &[h.n(), horizon],
                    "{} in {} mode",
                    kind.as_str(),
                    mode.as_str()
                );
                assert!(out.is_finite());
            }
        }
    }
}

#[test]
fn init_is_deterministic_per_seed() {
    for kind in BackboneKind::ALL {
        let cfg = tiny_config(kind, GraphMode::BottomOnly);
        let a = init_backbone(&cfg, 7).unwrap();
        let b = init_backbone(&cfg, 7).unwrap();
        assert_eq!(a.len(), b.len());
        for ((ka, ta), (kb, tb)) in a.iter().zip(b.iter()) {
            assert_eq!(ka, kb);
            assert_eq!(ta.data(), tb.data(), "{} differs for key {ka}", kind.as_str());
        }
        let c = init_backbone(&cfg, 8).unwrap();
        let any_diff = a.iter().zip(c.iter()).any(|((_, ta), (_, tc))| ta.data() != tc.data());
        assert!(any_diff, "{}: different seeds gave identical params", kind.as_str());
    }
}

#[test]
fn init_respects_fan_in_bound() {
    // input conv of the mixhop stack has fan_in = channels; with 4 channels
    // the bound is sqrt(1/4) = 0.5
    let mut cfg = tiny_config(BackboneKind::MixhopTcn, GraphMode::BottomOnly);
    cfg.channels = 4;
    let params = init_backbone(&cfg, 3).unwrap();
    let w = params.get("input/w");
    assert!(w.max_abs() <= 0.5, "|w| max {} exceeds 0.5", w.max_abs());
    assert!(w.max_abs() > 0.0);
}

#[test]
fn zero_window_is_finite_and_zero_head_gives_zeros() {
    let h = seven_node();
    for kind in BackboneKind::ALL {
        let cfg = tiny_config(kind, GraphMode::FullHierarchy);
        let adj = hierarchy_adjacency(&h, GraphMode::FullHierarchy);
        let mut params = init_backbone(&cfg, 2).unwrap();
        let window = Tensor::zeros(&[h.m(), 1, cfg.input_window]);
        let out = mgm_forward(kind, &params, &window, &adj, &cfg, None).unwrap();
        assert!(out.is_finite(), "{}", kind.as_str());

        // zero the output head entirely
        let (w_key, b_key) = match kind {
            BackboneKind::DiffusionRnn => ("dec/head/w", "dec/head/b"),
            _ => ("head/w", "head/b"),
        };
        let zeros_w = vec![0.0; params.get(w_key).len()];
        let zeros_b = vec![0.0; params.get(b_key).len()];
        params.get_mut(w_key).set_data(zeros_w);
        params.get_mut(b_key).set_data(zeros_b);
        let out = mgm_forward(kind, &params, &window, &adj, &cfg, None).unwrap();
        assert!(
            out.data().iter().all(|v| *v == 0.0),
            "{}: zero head should force zero outputs",
            kind.as_str()
        );
    }
}

#[test]
fn forward_is_pure() {
    let h = seven_node();
    for kind in BackboneKind::ALL {
        let cfg = tiny_config(kind, GraphMode::BottomOnly);
        let adj = hierarchy_adjacency(&h, GraphMode::BottomOnly);
        let params = init_backbone(&cfg, 11).unwrap();
        let window = window_for(&adj, &cfg, 13);
        let a = mgm_forward(kind, &params, &window, &adj, &cfg, None).unwrap();
        let b = mgm_forward(kind, &params, &window, &adj, &cfg, None).unwrap();
        assert_eq!(a.data(), b.data(), "{} is not pure", kind.as_str());
    }
}

#[test]
fn count_params_matches_shape_enumeration() {
    let cfg = MGMConfig {
        kind: BackboneKind::MixhopTcn,
        graph_mode: GraphMode::BottomOnly,
        input_window: 16,
        horizon: 3,
        hidden: 8,
        layers: 2,
        k: 1,
        beta: 0.1,
        alpha_geg: 1.0,
        dilation_q: 1,
        channels: 1,
    };
    let params = init_backbone(&cfg, 1).unwrap();

    // enumerate the architecture: input conv, two layers of four inception
    // banks + (k+1) mixhop weights + skip conv, and the head
    let bank = 8 / 4;
    let concat = 4 * bank;
    let mut expected = 8 * 1 * 1 + 8; // input/w + input/b
    for _layer in 0..2 {
        expected += bank * 8 * (2 + 3 + 6 + 7); // inception banks
        expected += 2 * (concat * 8); // mixhop w0, w1
        expected += 8 * 8; // skip conv
    }
    expected += 8 * 3 + 3; // head
    assert_eq!(count_params(&params), expected);

    assert_eq!(count_params(&Default::default()), 0);
}

#[test]
fn ancestor_information_reaches_leaves() {
    // full-hierarchy mixhop with K >= depth: zeroing the top node's input
    // row must change the bottom forecasts
    let h = seven_node();
    let mut cfg = tiny_config(BackboneKind::MixhopTcn, GraphMode::FullHierarchy);
    cfg.k = 3; // >= depth of the 3-level tree
    let adj = hierarchy_adjacency(&h, GraphMode::FullHierarchy);
    let params = init_backbone(&cfg, 4).unwrap();
    let window = window_for(&adj, &cfg, 17);
    let base = mgm_forward(cfg.kind, &params, &window, &adj, &cfg, None).unwrap();

    let top = h.position("T").unwrap();
    let mut zeroed = window.data().to_vec();
    let stride = cfg.channels * cfg.input_window;
    for v in zeroed[top * stride..(top + 1) * stride].iter_mut() {
        *v = 0.0;
    }
    let window_zeroed = Tensor::from_vec(window.shape(), zeroed);
    let changed = mgm_forward(cfg.kind, &params, &window_zeroed, &adj, &cfg, None).unwrap();

    let delta: f64 = base
        .data()
        .iter()
        .zip(changed.data())
        .map(|(a, b)| (a - b).abs())
        .sum();
    assert!(delta > 1e-9, "ancestor input had no effect on bottom forecasts");
}

#[test]
fn teacher_forcing_changes_decoding() {
    let h = seven_node();
    let cfg = tiny_config(BackboneKind::DiffusionRnn, GraphMode::BottomOnly);
    let adj = hierarchy_adjacency(&h, GraphMode::BottomOnly);
    let params = init_backbone(&cfg, 21).unwrap();
    let window = window_for(&adj, &cfg, 23);
    let free = mgm_forward(cfg.kind, &params, &window, &adj, &cfg, None).unwrap();
    let teacher = Tensor::full(&[h.n(), cfg.horizon], 5.0);
    let forced = mgm_forward(cfg.kind, &params, &window, &adj, &cfg, Some(&teacher)).unwrap();
    // the first step is identical, later steps see different feedback
    for i in 0..h.n() {
        assert_eq!(free.at2(i, 0), forced.at2(i, 0));
    }
    assert_ne!(free.data(), forced.data());
}

#[test]
fn multi_channel_windows_are_supported() {
    // covariates enter as extra input channels alongside the value series
    let h = seven_node();
    for kind in BackboneKind::ALL {
        let mut cfg = tiny_config(kind, GraphMode::BottomOnly);
        cfg.channels = 3;
        let adj = hierarchy_adjacency(&h, GraphMode::BottomOnly);
        let params = init_backbone(&cfg, 19).unwrap();
        let window = window_for(&adj, &cfg, 23);
        let out = mgm_forward(kind, &params, &window, &adj, &cfg, None).unwrap();
        assert_eq!(out.shape(), &[h.n(), cfg.horizon], "{}", kind.as_str());
        assert!(out.is_finite());
    }
}

#[test]
fn rejects_mismatched_window() {
    let h = seven_node();
    let cfg = tiny_config(BackboneKind::MixhopTcn, GraphMode::BottomOnly);
    let adj = hierarchy_adjacency(&h, GraphMode::BottomOnly);
    let params = init_backbone(&cfg, 1).unwrap();
    // wrong node count
    let bad = Tensor::zeros(&[h.m(), 1, cfg.input_window]);
    assert!(mgm_forward(cfg.kind, &params, &bad, &adj, &cfg, None).is_err());
    // wrong window length
    let bad = Tensor::zeros(&[h.n(), 1, cfg.input_window - 1]);
    assert!(mgm_forward(cfg.kind, &params, &bad, &adj, &cfg, None).is_err());
    // NaN input
    let bad = Tensor::full(&[h.n(), 1, cfg.input_window], f64::NAN);
    assert!(mgm_forward(cfg.kind, &params, &bad, &adj, &cfg, None).is_err());
}

#[test]
fn receptive_field_is_enforced() {
    let mut cfg = tiny_config(BackboneKind::MixhopTcn, GraphMode::BottomOnly);
    cfg.dilation_q = 2;
    cfg.layers = 3;
    cfg.input_window = 16; // receptive field is 1 + 6*(1+2+4) = 43
    assert!(cfg.validate().is_err());
    cfg.input_window = 43;
    assert!(cfg.validate().is_ok());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let cfg = tiny_config(BackboneKind::GegenbauerTgc, GraphMode::FullHierarchy);
    let params = init_backbone(&cfg, 31).unwrap();
    let scaler = Scaler::fit(
        &Tensor::from_vec(&[3, 4], vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.5, 2.5, 3.5, 0.1, 0.2, 0.3, 0.4]),
        ScalingKind::PerNodeZscore,
    );
    let cp = Checkpoint { cfg, params, scaler: Some(scaler) };

    let bytes = checkpoint_to_bytes(&cp);
    let loaded = checkpoint_from_bytes(&bytes).unwrap();
    let bytes2 = checkpoint_to_bytes(&loaded);
    assert_eq!(bytes, bytes2, "serialize -> load -> serialize is not bit-exact");

    // and the payloads agree
    assert_eq!(loaded.params.len(), cp.params.len());
    for ((ka, ta), (kb, tb)) in cp.params.iter().zip(loaded.params.iter()) {
        assert_eq!(ka, kb);
        assert_eq!(ta.shape(), tb.shape());
        assert_eq!(ta.data(), tb.data());
    }
    let (sa, sb) = (cp.scaler.as_ref().unwrap(), loaded.scaler.as_ref().unwrap());
    assert_eq!(sa.means(), sb.means());
    assert_eq!(sa.stds(), sb.stds());
}

#[test]
fn checkpoint_rejects_garbage() {
    assert!(checkpoint_from_bytes(b"not a checkpoint").is_err());
    let cfg = tiny_config(BackboneKind::MixhopTcn, GraphMode::BottomOnly);
    let cp = Checkpoint { cfg, params: init_backbone(&tiny_config(BackboneKind::MixhopTcn, GraphMode::BottomOnly), 1).unwrap(), scaler: None };
    let mut bytes = checkpoint_to_bytes(&cp);
    bytes.truncate(bytes.len() - 3);
    assert!(checkpoint_from_bytes(&bytes).is_err());
}

#[test]
fn every_kind_passes_a_gradient_smoke_check() {
    // one seed per kind here; the acceptance suite sweeps five seeds
    let h = seven_node();
    for kind in BackboneKind::ALL {
        let mut cfg = tiny_config(kind, GraphMode::BottomOnly);
        cfg.input_window = 13;
        cfg.horizon = 2;
        cfg.hidden = 4;
        cfg.layers = 1;
        let adj = hierarchy_adjacency(&h, GraphMode::BottomOnly);
        let params = init_backbone(&cfg, 5).unwrap();
        let window = window_for(&adj, &cfg, 7);
        let target = window_for(&adj, &cfg, 9).slice(2, 0, cfg.horizon).reshape(&[h.n(), cfg.horizon]);

        let report = grad_check_params(
            |p| {
                let out = mgm_forward(kind, p, &window, &adj, &cfg, None)?;
                Ok(out.sub(&target).mul(&out.sub(&target)).mean())
            },
            &params,
            1e-5,
            6,
            71,
        )
        .unwrap();
        assert!(
            report.max_error <= 1e-4,
            "{}: gradient error {} (worst {:?})",
            kind.as_str(),
            report.max_error,
            report
                .per_tensor
                .iter()
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap()
        );
    }
}
