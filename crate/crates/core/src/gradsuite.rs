//! The gradient verification suite: every primitive op checked against
//! central finite differences at random points, and every backbone kind
//! checked end to end through a scalarized loss.
//!
//! Shared by the CLI `gradcheck` command and the acceptance tests.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::{
    grad_check_params, init_backbone, mgm_forward, BackboneKind, MGMConfig,
};
use crate::error::Result;
use crate::graph::{hierarchy_adjacency, GraphMode};
use crate::hierarchy::{build_hierarchy, Hierarchy};
use crate::tensor::{grad_check, Tensor};

/// One named check and the worst relative error it observed.
#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub name: String,
    pub max_error: f64,
}

const EPSILON: f64 = 1e-5;
const POINTS_PER_OP: usize = 10;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// Random values bounded away from zero (for kinked ops).
fn rand_tensor_offset(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::from_vec(
        shape,
        (0..n)
            .map(|_| {
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                sign * rng.gen_range(0.1..1.5)
            })
            .collect(),
    )
}

/// Run `check` at `POINTS_PER_OP` seeded points and keep the worst error.
fn run_points(
    name: &str,
    seed: u64,
    entries: &mut Vec<SuiteEntry>,
    mut check: impl FnMut(&mut ChaCha8Rng) -> Result<f64>,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..POINTS_PER_OP {
        worst = worst.max(check(&mut rng)?);
    }
    entries.push(SuiteEntry { name: name.to_string(), max_error: worst });
    Ok(())
}

/// Gradient-check every primitive op at random points. Returns one entry
/// per (op, argument) pair.
pub fn op_gradient_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut entries = Vec::new();
    let mut salt = seed;
    let mut next_seed = || {
        salt = salt.wrapping_add(0x9E3779B97F4A7C15);
        salt
    };

    run_points("matmul/lhs", next_seed(), &mut entries, |rng| {
        let rhs = rand_tensor(rng, &[3, 2]);
        let weight = rand_tensor(rng, &[4, 2]);
        let point = rand_tensor(rng, &[4, 3]);
        grad_check(|a| a.matmul(&rhs).mul(&weight).sum(), &point, EPSILON)
    })?;
    run_points("matmul/rhs", next_seed(), &mut entries, |rng| {
        let lhs = rand_tensor(rng, &[4, 3]);
        let weight = rand_tensor(rng, &[4, 2]);
        let point = rand_tensor(rng, &[3, 2]);
        grad_check(|b| lhs.matmul(b).mul(&weight).sum(), &point, EPSILON)
    })?;
    run_points("add/lhs", next_seed(), &mut entries, |rng| {
        let rhs = rand_tensor(rng, &[2, 3]);
        let weight = rand_tensor(rng, &[2, 3]);
        let point = rand_tensor(rng, &[2, 3]);
        grad_check(|a| a.add(&rhs).mul(&weight).sum(), &point, EPSILON)
    })?;
    run_points("add/rhs_broadcast", next_seed(), &mut entries, |rng| {
        let lhs = rand_tensor(rng, &[2, 3]);
        let weight = rand_tensor(rng, &[2, 3]);
        let point = rand_tensor(rng, &[3]);
        grad_check(|b| lhs.add(b).mul(&weight).sum(), &point, EPSILON)
    })?;
    run_points("mul/lhs", next_seed(), &mut entries, |rng| {
        let rhs = rand_tensor_offset(rng, &[2, 3]);
        let weight = rand_tensor(rng, &[2, 3]);
        let point = rand_tensor(rng, &[2, 3]);
        grad_check(|a| a.mul(&rhs).mul(&weight).sum(), &point, EPSILON)
    })?;
    run_points("mul/rhs_broadcast", next_seed(), &mut entries, |rng| {
        let lhs = rand_tensor_offset(rng, &[2, 3]);
        let weight = rand_tensor(rng, &[2, 3]);
        let point = rand_tensor(rng, &[3]);
        grad_check(|b| lhs.mul(b).mul(&weight).sum(), &point, EPSILON)
    })?;
    run_points("sigmoid", next_seed(), &mut entries, |rng| {
        let weight = rand_tensor(rng, &[6]);
        let point = rand_tensor(rng, &[6]).scale(2.0);
        grad_check(|x| x.sigmoid().mul(&weight).sum(), &point, EPSILON)
    })?;
    run_points("tanh", next_seed(), &mut entries, |rng| {
        let weight = rand_tensor(rng, &[6]);
        let point = rand_tensor(rng, &[6]).scale(2.0);
        grad_check(|x| x.tanh().mul(&weight).sum(), &point, EPSILON)
    })?;
    run_points("relu", next_seed(), &mut entries, |rng| {
        let weight = rand_tensor(rng, &[6]);
        let point = rand_tensor_offset(rng, &[6]);
        grad_check(|x| x.relu().mul(&weight).sum(), &point, EPSILON)
    })?;
    run_points("softmax_lastdim", next_seed(), &mut entries, |rng| {
        let weight = rand_tensor(rng, &[2, 4]);
        let point = rand_tensor(rng, &[2, 4]).scale(3.0);
        grad_check(|x| x.softmax_lastdim().mul(&weight).sum(), &point, EPSILON)
    })?;
    run_points("concat", next_seed(), &mut entries, |rng| {
        let other = rand_tensor(rng, &[2, 2]);
        let weight = rand_tensor(rng, &[2, 5]);
        let point = rand_tensor(rng, &[2, 3]);
        grad_check(
            |x| Tensor::concat(1, &[x, &other]).mul(&weight).sum(),
            &point,
            EPSILON,
        )
    })?;
    run_points("slice", next_seed(), &mut entries, |rng| {
        let weight = rand_tensor(rng, &[2, 2]);
        let point = rand_tensor(rng, &[2, 5]);
        grad_check(|x| x.slice(1, 1, 2).mul(&weight).sum(), &point, EPSILON)
    })?;
    run_points("transpose", next_seed(), &mut entries, |rng| {
        let weight = rand_tensor(rng, &[3, 2]);
        let point = rand_tensor(rng, &[2, 3]);
        grad_check(|x| x.transpose().mul(&weight).sum(), &point, EPSILON)
    })?;
    run_points("sum", next_seed(), &mut entries, |rng| {
        let point = rand_tensor(rng, &[7]);
        grad_check(|x| x.sum(), &point, EPSILON)
    })?;
    run_points("mean", next_seed(), &mut entries, |rng| {
        let point = rand_tensor(rng, &[7]);
        grad_check(|x| x.mean(), &point, EPSILON)
    })?;
    run_points("conv1d_dilated/input", next_seed(), &mut entries, |rng| {
        let weight = rand_tensor(rng, &[2, 2, 3]);
        let bias = rand_tensor(rng, &[2]);
        let readout = rand_tensor(rng, &[1, 2, 8]);
        let point = rand_tensor(rng, &[1, 2, 8]);
        grad_check(
            |x| x.conv1d_dilated(&weight, Some(&bias), 2).mul(&readout).sum(),
            &point,
            EPSILON,
        )
    })?;
    run_points("conv1d_dilated/weight", next_seed(), &mut entries, |rng| {
        let input = rand_tensor(rng, &[1, 2, 8]);
        let readout = rand_tensor(rng, &[1, 2, 8]);
        let point = rand_tensor(rng, &[2, 2, 3]);
        grad_check(
            |w| input.conv1d_dilated(w, None, 2).mul(&readout).sum(),
            &point,
            EPSILON,
        )
    })?;
    run_points("conv1d_dilated/bias", next_seed(), &mut entries, |rng| {
        let input = rand_tensor(rng, &[1, 2, 8]);
        let weight = rand_tensor(rng, &[2, 2, 3]);
        let readout = rand_tensor(rng, &[1, 2, 8]);
        let point = rand_tensor(rng, &[2]);
        grad_check(
            |b| input.conv1d_dilated(&weight, Some(b), 1).mul(&readout).sum(),
            &point,
            EPSILON,
        )
    })?;
    run_points("dft_real", next_seed(), &mut entries, |rng| {
        let readout = rand_tensor(rng, &[2, 6]);
        let point = rand_tensor(rng, &[10]);
        grad_check(|x| x.dft_real().mul(&readout).sum(), &point, EPSILON)
    })?;
    run_points("idft_real", next_seed(), &mut entries, |rng| {
        let readout = rand_tensor(rng, &[9]);
        let point = rand_tensor(rng, &[2, 5]);
        grad_check(|s| s.idft_real(9).mul(&readout).sum(), &point, EPSILON)
    })?;
    run_points("moving_avg_centered", next_seed(), &mut entries, |rng| {
        let readout = rand_tensor(rng, &[12]);
        let point = rand_tensor(rng, &[12]);
        grad_check(|x| x.moving_avg_centered(5).mul(&readout).sum(), &point, EPSILON)
    })?;
    Ok(entries)
}

fn tiny_hierarchy() -> Arc<Hierarchy> {
    let edges: Vec<(String, String)> = [("B1", "T"), ("B2", "T"), ("B3", "T")]
        .iter()
        .map(|(c, p)| (c.to_string(), p.to_string()))
        .collect();
    Arc::new(build_hierarchy(&edges).expect("tiny hierarchy"))
}

/// End-to-end gradient check of one backbone kind at a tiny configuration.
pub fn backbone_gradient_check(kind: BackboneKind, seed: u64, max_coords: usize) -> Result<f64> {
    let hierarchy = tiny_hierarchy();
    let cfg = MGMConfig {
        kind,
        graph_mode: GraphMode::FullHierarchy,
        input_window: 13,
        horizon: 2,
        hidden: 4,
        layers: 2,
        k: 2,
        beta: 0.2,
        alpha_geg: 1.0,
        dilation_q: 1,
        channels: 1,
    };
    let adjacency = hierarchy_adjacency(&hierarchy, GraphMode::FullHierarchy);
    let params = init_backbone(&cfg, seed)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(101));
    let nodes = adjacency.node_count();
    let window = rand_tensor(&mut rng, &[nodes, 1, cfg.input_window]);
    let target = rand_tensor(&mut rng, &[hierarchy.n(), cfg.horizon]);

    let report = grad_check_params(
        |p| {
            let out = mgm_forward(kind, p, &window, &adjacency, &cfg, None)?;
            let diff = out.sub(&target);
            Ok(diff.mul(&diff).mean())
        },
        &params,
        EPSILON,
        max_coords,
        seed.wrapping_add(7),
    )?;
    Ok(report.max_error)
}

/// Gradient-check every backbone kind end to end across the given seeds.
pub fn backbone_gradient_suite(seeds: &[u64], max_coords: usize) -> Result<Vec<SuiteEntry>> {
    let mut entries = Vec::new();
    for kind in BackboneKind::ALL {
        let mut worst = 0.0f64;
        for &seed in seeds {
            worst = worst.max(backbone_gradient_check(kind, seed, max_coords)?);
        }
        entries.push(SuiteEntry { name: format!("backbone/{}", kind.as_str()), max_error: worst });
    }
    Ok(entries)
}
