//! Graph construction and graph-convolution primitives.
//!
//! The adjacency always comes from the series hierarchy here: either the
//! full hierarchy graph (parent-child edges over all m nodes) or the
//! bottom-level sibling graph. On top of it sit the propagation operators
//! used by the backbones: mix-hop propagation, diffusion convolution,
//! Gegenbauer spectral convolution, a symmetric-normalized GCN layer, and a
//! fixed-step integrator for the spatial ODE formulation.

use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;
use crate::tensor::Tensor;

/// Which graph the backbone sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphMode {
    /// n-by-n graph over the bottom series; leaves sharing a parent are
    /// connected.
    BottomOnly,
    /// m-by-m symmetric graph with one edge per parent-child pair.
    FullHierarchy,
}

impl GraphMode {
    pub fn parse(s: &str) -> Result<GraphMode> {
        match s {
            "bottom_only" => Ok(GraphMode::BottomOnly),
            "full_hierarchy" => Ok(GraphMode::FullHierarchy),
            other => Err(Error::Config(format!(
                "unknown graph mode '{other}' (expected bottom_only or full_hierarchy)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            GraphMode::BottomOnly => "bottom_only",
            GraphMode::FullHierarchy => "full_hierarchy",
        }
    }
}

/// Nonnegative square adjacency matrix over the backbone's graph nodes.
#[derive(Debug, Clone)]
pub struct AdjacencyMatrix {
    entries: Tensor,
    mode: GraphMode,
    /// Leading rows that are aggregate nodes; the forecast outputs are the
    /// remaining (bottom) rows. Zero in bottom_only mode.
    bottom_offset: usize,
}

impl AdjacencyMatrix {
    /// Wrap a square nonnegative matrix.
    pub fn new(entries: Tensor, mode: GraphMode) -> Result<AdjacencyMatrix> {
        if entries.ndim() != 2 || entries.shape()[0] != entries.shape()[1] {
            return Err(Error::ShapeMismatch {
                op: "adjacency",
                expected: "square matrix".into(),
                actual: format!("{:?}", entries.shape()),
            });
        }
        if entries.data().iter().any(|v| *v < 0.0) {
            return Err(Error::Config("adjacency entries must be nonnegative".into()));
        }
        Ok(AdjacencyMatrix { entries, mode, bottom_offset: 0 })
    }

    pub fn node_count(&self) -> usize {
        self.entries.shape()[0]
    }

    pub fn mode(&self) -> GraphMode {
        self.mode
    }

    /// Number of leading aggregate rows (zero for bottom-only graphs).
    pub fn bottom_offset(&self) -> usize {
        self.bottom_offset
    }

    pub fn tensor(&self) -> &Tensor {
        &self.entries
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries.at2(i, j)
    }
}

/// Build the backbone graph from the hierarchy.
pub fn hierarchy_adjacency(hierarchy: &Hierarchy, mode: GraphMode) -> AdjacencyMatrix {
    let (entries, bottom_offset) = match mode {
        GraphMode::FullHierarchy => {
            let m = hierarchy.m();
            let mut data = vec![0.0; m * m];
            for &(child, parent) in hierarchy.parent_edges() {
                data[child * m + parent] = 1.0;
                data[parent * m + child] = 1.0;
            }
            (Tensor::from_vec(&[m, m], data), hierarchy.a())
        }
        GraphMode::BottomOnly => {
            let n = hierarchy.n();
            let a = hierarchy.a();
            let mut data = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    if i != j && hierarchy.parent_of(a + i) == hierarchy.parent_of(a + j) {
                        data[i * n + j] = 1.0;
                    }
                }
            }
            (Tensor::from_vec(&[n, n], data), 0)
        }
    };
    AdjacencyMatrix { entries, mode, bottom_offset }
}

/// Normalization schemes for an adjacency matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormScheme {
    /// Row-stochastic with self-loops: `D~^-1 (A + I)`.
    RowSelfloop,
    /// Symmetric with self-loops: `D~^-1/2 (A + I) D~^-1/2`.
    SymSelfloop,
    /// Random-walk transition matrix `D^-1 A`; zero-out-degree rows stay zero.
    RandomWalk,
}

/// A normalized adjacency matrix tagged with its scheme.
#[derive(Debug, Clone)]
pub struct NormalizedAdjacency {
    entries: Tensor,
    scheme: NormScheme,
}

impl NormalizedAdjacency {
    pub fn scheme(&self) -> NormScheme {
        self.scheme
    }

    pub fn tensor(&self) -> &Tensor {
        &self.entries
    }

    pub fn node_count(&self) -> usize {
        self.entries.shape()[0]
    }
}

/// Normalize an adjacency matrix under the given scheme.
pub fn normalize(adjacency: &AdjacencyMatrix, scheme: NormScheme) -> Result<NormalizedAdjacency> {
    let n = adjacency.node_count();
    let a = adjacency.tensor().data();
    let mut out = vec![0.0; n * n];
    match scheme {
        NormScheme::RowSelfloop => {
            for i in 0..n {
                let degree = 1.0 + a[i * n..(i + 1) * n].iter().sum::<f64>();
                for j in 0..n {
                    let with_loop = a[i * n + j] + if i == j { 1.0 } else { 0.0 };
                    out[i * n + j] = with_loop / degree;
                }
            }
        }
        NormScheme::SymSelfloop => {
            let inv_sqrt: Vec<f64> = (0..n)
                .map(|i| {
                    let degree = 1.0 + a[i * n..(i + 1) * n].iter().sum::<f64>();
                    1.0 / degree.sqrt()
                })
                .collect();
            for i in 0..n {
                for j in 0..n {
                    let with_loop = a[i * n + j] + if i == j { 1.0 } else { 0.0 };
                    out[i * n + j] = inv_sqrt[i] * with_loop * inv_sqrt[j];
                }
            }
        }
        NormScheme::RandomWalk => {
            for i in 0..n {
                let degree: f64 = a[i * n..(i + 1) * n].iter().sum();
                if degree > 0.0 {
                    for j in 0..n {
                        out[i * n + j] = a[i * n + j] / degree;
                    }
                }
            }
        }
    }
    Ok(NormalizedAdjacency {
        entries: Tensor::from_vec(&[n, n], out),
        scheme,
    })
}

/// Parameters of one mix-hop propagation layer.
#[derive(Debug, Clone)]
pub struct MixHopParams {
    /// Ratio of the root state retained at every hop, in [0, 1].
    pub beta: f64,
    /// Hop count; `weights` has `k + 1` entries.
    pub k: usize,
    /// Per-hop selection weights, each `[features_in, features_out]`.
    pub weights: Vec<Tensor>,
}

impl MixHopParams {
    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!("mix-hop beta {} outside [0, 1]", self.beta)));
        }
        if self.weights.len() != self.k + 1 {
            return Err(Error::Config(format!(
                "mix-hop expects {} weight matrices, got {}",
                self.k + 1,
                self.weights.len()
            )));
        }
        for w in &self.weights {
            if w.shape() != self.weights[0].shape() || w.ndim() != 2 {
                return Err(Error::Config("mix-hop weight shapes must be identical 2-D".into()));
            }
        }
        Ok(())
    }
}

/// Contract the feature axis (axis 1) of `x` with a `[f_in, f_out]` weight.
/// Works for `[n, f]` and `[n, f, t]` inputs.
fn feature_map(x: &Tensor, w: &Tensor) -> Tensor {
    match x.ndim() {
        2 => x.matmul(w),
        3 => {
            // out[n, o, t] = sum_f x[n, f, t] * w[f, o], via a 1x1 convolution
            let (f_in, f_out) = (w.shape()[0], w.shape()[1]);
            let kernel = w.transpose().reshape(&[f_out, f_in, 1]);
            x.conv1d_dilated(&kernel, None, 1)
        }
        rank => panic!("feature_map supports rank 2 or 3, got {rank}"),
    }
}

fn check_node_dim(op: &'static str, x: &Tensor, nodes: usize) -> Result<()> {
    if x.ndim() < 2 || x.shape()[0] != nodes {
        return Err(Error::ShapeMismatch {
            op,
            expected: format!("[{nodes}, ...] node-major tensor"),
            actual: format!("{:?}", x.shape()),
        });
    }
    Ok(())
}

/// Mix-hop propagation: `H(0) = H_in`, `H(k) = beta*H_in + (1-beta)*A~*H(k-1)`,
/// returning `sum_k H(k) W(k)`.
pub fn mix_hop(h_in: &Tensor, a_norm: &NormalizedAdjacency, p: &MixHopParams) -> Result<Tensor> {
    if a_norm.scheme() != NormScheme::RowSelfloop {
        return Err(Error::Config("mix_hop requires row_selfloop normalization".into()));
    }
    p.validate()?;
    check_node_dim("mix_hop", h_in, a_norm.node_count())?;
    if h_in.shape()[1] != p.weights[0].shape()[0] {
        return Err(Error::ShapeMismatch {
            op: "mix_hop",
            expected: format!("feature dim {}", p.weights[0].shape()[0]),
            actual: format!("{:?}", h_in.shape()),
        });
    }

    let mut out = feature_map(h_in, &p.weights[0]);
    let mut state = h_in.clone();
    for k in 1..=p.k {
        let propagated = a_norm.tensor().matmul(&state);
        state = h_in.scale(p.beta).add(&propagated.scale(1.0 - p.beta));
        out = out.add(&feature_map(&state, &p.weights[k]));
    }
    Ok(out)
}

/// Parameters of a diffusion convolution filter.
#[derive(Debug, Clone)]
pub struct DiffusionParams {
    /// Number of diffusion steps (propagation powers 0..k-1).
    pub k: usize,
    /// Filter coefficients, shape `[k, 2]`: column 0 weights the forward
    /// walk, column 1 the reverse walk.
    pub theta: Tensor,
    /// Restart probability of the underlying random walk, in (0, 1].
    pub alpha: f64,
}

impl DiffusionParams {
    fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Config("diffusion needs k >= 1".into()));
        }
        if self.theta.shape() != [self.k, 2] {
            return Err(Error::ShapeMismatch {
                op: "diffusion_conv",
                expected: format!("theta [{}, 2]", self.k),
                actual: format!("{:?}", self.theta.shape()),
            });
        }
        if !self.theta.is_finite() {
            return Err(Error::NonFinite { op: "diffusion theta" });
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("restart probability {} outside (0, 1]", self.alpha)));
        }
        Ok(())
    }
}

/// Scalar coefficient `theta[k, col]` as a taped `[1]` tensor.
fn theta_at(theta: &Tensor, k: usize, col: usize) -> Tensor {
    theta.slice(0, k, 1).slice(1, col, 1).reshape(&[1])
}

/// Diffusion convolution: weighted sum over powers of the random-walk
/// transition matrix and of its reverse-direction counterpart.
pub fn diffusion_conv(x: &Tensor, adjacency: &AdjacencyMatrix, p: &DiffusionParams) -> Result<Tensor> {
    p.validate()?;
    check_node_dim("diffusion_conv", x, adjacency.node_count())?;

    let forward = normalize(adjacency, NormScheme::RandomWalk)?;
    let reverse_adj = AdjacencyMatrix::new(adjacency.tensor().transpose(), adjacency.mode())?;
    let reverse = normalize(&reverse_adj, NormScheme::RandomWalk)?;

    let mut out = Tensor::zeros(x.shape());
    let mut z_fwd = x.clone();
    let mut z_rev = x.clone();
    for k in 0..p.k {
        if k > 0 {
            z_fwd = forward.tensor().matmul(&z_fwd);
            z_rev = reverse.tensor().matmul(&z_rev);
        }
        out = out
            .add(&z_fwd.mul(&theta_at(&p.theta, k, 0)))
            .add(&z_rev.mul(&theta_at(&p.theta, k, 1)));
    }
    Ok(out)
}

/// Truncated stationary distribution of the random walk with restart:
/// `P = sum_{k=0}^{k_trunc-1} alpha (1-alpha)^k (D^-1 A)^k`, together with
/// the residual tail mass `(1-alpha)^k_trunc` dropped by the truncation.
pub fn stationary_diffusion(
    adjacency: &AdjacencyMatrix,
    alpha: f64,
    k_trunc: usize,
) -> Result<(Tensor, f64)> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Config(format!("restart probability {alpha} outside (0, 1]")));
    }
    if k_trunc < 1 {
        return Err(Error::Config("truncation order must be >= 1".into()));
    }
    let n = adjacency.node_count();
    let walk = normalize(adjacency, NormScheme::RandomWalk)?;
    let mut acc = Tensor::zeros(&[n, n]);
    let mut power = Tensor::eye(n);
    let mut weight = alpha;
    for k in 0..k_trunc {
        if k > 0 {
            power = walk.tensor().matmul(&power);
            weight *= 1.0 - alpha;
        }
        acc = acc.add(&power.scale(weight));
    }
    Ok((acc, (1.0 - alpha).powi(k_trunc as i32)))
}

/// Value of the Gegenbauer polynomial `P_k^alpha` at `x` via the three-term
/// recursion (`P_0 = 1`, `P_1 = 2 alpha x`).
pub fn gegenbauer_poly(k: usize, alpha: f64, x: f64) -> f64 {
    match k {
        0 => 1.0,
        1 => 2.0 * alpha * x,
        _ => {
            let mut prev2 = 1.0;
            let mut prev1 = 2.0 * alpha * x;
            for i in 2..=k {
                let current = (2.0 * x * (i as f64 + alpha - 1.0) * prev1
                    - (i as f64 + 2.0 * alpha - 2.0) * prev2)
                    / i as f64;
                prev2 = prev1;
                prev1 = current;
            }
            prev1
        }
    }
}

/// Parameters of a Gegenbauer spectral filter.
#[derive(Debug, Clone)]
pub struct GegenbauerParams {
    /// Polynomial order; `theta` has `k + 1` coefficients.
    pub k: usize,
    /// Gegenbauer order, > 0. `alpha = 1` recovers Chebyshev polynomials of
    /// the second kind.
    pub alpha: f64,
    /// Filter coefficients, shape `[k + 1]`.
    pub theta: Tensor,
}

impl GegenbauerParams {
    fn validate(&self) -> Result<()> {
        if self.alpha <= 0.0 {
            return Err(Error::Config(format!("gegenbauer alpha {} must be > 0", self.alpha)));
        }
        if self.theta.len() != self.k + 1 {
            return Err(Error::ShapeMismatch {
                op: "gegenbauer_conv",
                expected: format!("theta of length {}", self.k + 1),
                actual: format!("{:?}", self.theta.shape()),
            });
        }
        Ok(())
    }
}

/// Operator the Gegenbauer recursion runs on: the sym_selfloop-normalized
/// adjacency, rescaled by its max absolute row sum whenever that bound
/// exceeds 1 so the spectral radius stays within [-1, 1].
pub fn gegenbauer_operator(a_hat: &NormalizedAdjacency) -> Result<Tensor> {
    if a_hat.scheme() != NormScheme::SymSelfloop {
        return Err(Error::Config("gegenbauer_conv requires sym_selfloop normalization".into()));
    }
    let n = a_hat.node_count();
    let data = a_hat.tensor().data();
    let mut bound = 0.0f64;
    for i in 0..n {
        let row_sum: f64 = data[i * n..(i + 1) * n].iter().map(|v| v.abs()).sum();
        bound = bound.max(row_sum);
    }
    if bound > 1.0 {
        Ok(a_hat.tensor().scale(1.0 / bound))
    } else {
        Ok(a_hat.tensor().clone())
    }
}

/// Spectral graph convolution over the Gegenbauer basis:
/// `sum_k theta_k P_k^alpha(A^) X`, evaluated by the matrix recursion
/// (never by eigendecomposition).
pub fn gegenbauer_conv(
    x: &Tensor,
    a_hat: &NormalizedAdjacency,
    p: &GegenbauerParams,
) -> Result<Tensor> {
    p.validate()?;
    check_node_dim("gegenbauer_conv", x, a_hat.node_count())?;
    let operator = gegenbauer_operator(a_hat)?;

    let theta = |k: usize| p.theta.slice(0, k, 1);
    let mut out = x.mul(&theta(0));
    if p.k == 0 {
        return Ok(out);
    }
    let mut prev2 = x.clone();
    let mut prev1 = operator.matmul(x).scale(2.0 * p.alpha);
    out = out.add(&prev1.mul(&theta(1)));
    for k in 2..=p.k {
        let kf = k as f64;
        let current = operator
            .matmul(&prev1)
            .scale(2.0 * (kf + p.alpha - 1.0) / kf)
            .sub(&prev2.scale((kf + 2.0 * p.alpha - 2.0) / kf));
        out = out.add(&current.mul(&theta(k)));
        prev2 = prev1;
        prev1 = current;
    }
    Ok(out)
}

/// Pointwise activations available to the GCN layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(&self, x: &Tensor) -> Tensor {
        match self {
            Activation::Identity => x.clone(),
            Activation::Sigmoid => x.sigmoid(),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.relu(),
        }
    }
}

/// Symmetric-normalized graph convolution layer:
/// `activation(A_sym H Theta)`.
pub fn gcn_layer(
    h: &Tensor,
    a_sym: &NormalizedAdjacency,
    theta: &Tensor,
    activation: Activation,
) -> Result<Tensor> {
    if a_sym.scheme() != NormScheme::SymSelfloop {
        return Err(Error::Config("gcn_layer requires sym_selfloop normalization".into()));
    }
    check_node_dim("gcn_layer", h, a_sym.node_count())?;
    if h.ndim() != 2 || theta.ndim() != 2 || h.shape()[1] != theta.shape()[0] {
        return Err(Error::ShapeMismatch {
            op: "gcn_layer",
            expected: "[n, f] features with [f, f'] weights".into(),
            actual: format!("{:?} x {:?}", h.shape(), theta.shape()),
        });
    }
    Ok(activation.apply(&a_sym.tensor().matmul(h).matmul(theta)))
}

/// Explicit fixed-step Euler integration of `dH/dt = (A^ - I) H` from `H0`
/// to `t_end`.
pub fn spatial_ode_step(
    h0: &Tensor,
    a_hat: &NormalizedAdjacency,
    t_end: f64,
    steps: usize,
) -> Result<Tensor> {
    if steps < 1 {
        return Err(Error::Config("spatial ODE needs steps >= 1".into()));
    }
    if !(t_end > 0.0) {
        return Err(Error::Config(format!("spatial ODE t_end {t_end} must be > 0")));
    }
    check_node_dim("spatial_ode_step", h0, a_hat.node_count())?;

    let n = a_hat.node_count();
    let mut drift = a_hat.tensor().data().to_vec();
    for i in 0..n {
        drift[i * n + i] -= 1.0;
    }
    let drift = Tensor::from_vec(&[n, n], drift);

    let dt = t_end / steps as f64;
    let mut state = h0.clone();
    for _ in 0..steps {
        state = state.add(&drift.matmul(&state).scale(dt));
    }
    if !state.is_finite() {
        return Err(Error::NonFinite { op: "spatial_ode_step" });
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::{build_hierarchy, summing_matrix};
    use crate::tensor::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn assert_close(actual: &[f64], expected: &[f64], tol: f64) {
        assert_eq!(actual.len(), expected.len());
        for (i, (a, e)) in actual.iter().zip(expected).enumerate() {
            assert!(
                (a - e).abs() <= tol,
                "index {i}: actual {a} expected {e} (diff {})",
                (a - e).abs()
            );
        }
    }

    fn edges(list: &[(&str, &str)]) -> Vec<(String, String)> {
        list.iter().map(|(c, p)| (c.to_string(), p.to_string())).collect()
    }

    fn two_leaf() -> Arc<Hierarchy> {
        Arc::new(build_hierarchy(&edges(&[("B1", "T"), ("B2", "T")])).unwrap())
    }

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

    fn adjacency_from(data: Vec<f64>, n: usize) -> AdjacencyMatrix {
        AdjacencyMatrix::new(Tensor::from_vec(&[n, n], data), GraphMode::BottomOnly).unwrap()
    }

    #[test]
    fn full_hierarchy_adjacency_two_leaf() {
        let adj = hierarchy_adjacency(&two_leaf(), GraphMode::FullHierarchy);
        // order (T, B1, B2): edges T-B1, T-B2, zero diagonal
        assert_eq!(
            adj.tensor().data(),
            &[0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0]
        );
    }

    #[test]
    fn bottom_only_adjacency_connects_siblings() {
        let adj = hierarchy_adjacency(&two_leaf(), GraphMode::BottomOnly);
        assert_eq!(adj.tensor().data(), &[0.0, 1.0, 1.0, 0.0]);

        let adj = hierarchy_adjacency(&seven_node(), GraphMode::BottomOnly);
        // bottoms ordered B1..B4: B1-B2 share R1, B1-B3 do not
        assert_eq!(adj.entry(0, 1), 1.0);
        assert_eq!(adj.entry(0, 2), 0.0);
        assert_eq!(adj.entry(2, 3), 1.0);
    }

    #[test]
    fn row_selfloop_of_empty_graph_is_identity() {
        let adj = adjacency_from(vec![0.0; 4], 2);
        let norm = normalize(&adj, NormScheme::RowSelfloop).unwrap();
        assert_eq!(norm.tensor().data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn row_selfloop_two_node() {
        let adj = adjacency_from(vec![0.0, 1.0, 1.0, 0.0], 2);
        let norm = normalize(&adj, NormScheme::RowSelfloop).unwrap();
        assert_eq!(norm.tensor().data(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn random_walk_keeps_zero_rows() {
        let adj = adjacency_from(vec![0.0, 1.0, 0.0, 0.0], 2);
        let norm = normalize(&adj, NormScheme::RandomWalk).unwrap();
        assert_eq!(norm.tensor().data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn row_selfloop_rows_sum_to_one_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let n = rng.gen_range(1..=12);
            let data: Vec<f64> = (0..n * n)
                .map(|_| if rng.gen_bool(0.4) { rng.gen_range(0.0..3.0) } else { 0.0 })
                .collect();
            let norm = normalize(&adjacency_from(data, n), NormScheme::RowSelfloop).unwrap();
            for i in 0..n {
                let row_sum: f64 = (0..n).map(|j| norm.tensor().at2(i, j)).sum();
                assert!((row_sum - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn sym_selfloop_is_symmetric() {
        let adj = adjacency_from(vec![0.0, 2.0, 0.0, 2.0, 0.0, 1.0, 0.0, 1.0, 0.0], 3);
        let norm = normalize(&adj, NormScheme::SymSelfloop).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((norm.tensor().at2(i, j) - norm.tensor().at2(j, i)).abs() < 1e-15);
            }
        }
    }

    fn mixhop_params(weights: Vec<Tensor>, beta: f64) -> MixHopParams {
        MixHopParams { beta, k: weights.len() - 1, weights }
    }

    #[test]
    fn mix_hop_beta_one_freezes_root_state() {
        // beta = 1 keeps H(k) = H_in; with W = [I, 0, 0] the output is H_in.
        let h_in = Tensor::from_vec(&[2, 2], vec![1.0, -2.0, 0.5, 3.0]);
        let a = normalize(&adjacency_from(vec![0.0, 1.0, 1.0, 0.0], 2), NormScheme::RowSelfloop)
            .unwrap();
        let p = mixhop_params(vec![Tensor::eye(2), Tensor::zeros(&[2, 2]), Tensor::zeros(&[2, 2])], 1.0);
        let out = mix_hop(&h_in, &a, &p).unwrap();
        assert_eq!(out.data(), h_in.data());
    }

    #[test]
    fn mix_hop_beta_one_ignores_adjacency() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h_in = Tensor::from_vec(&[3, 2], (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let weights: Vec<Tensor> = (0..3)
            .map(|_| Tensor::from_vec(&[2, 2], (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()))
            .collect();
        let p = mixhop_params(weights, 1.0);

        let mut outputs = Vec::new();
        for _ in 0..2 {
            let data: Vec<f64> =
                (0..9).map(|_| if rng.gen_bool(0.5) { rng.gen_range(0.0..2.0) } else { 0.0 }).collect();
            let a = normalize(&adjacency_from(data, 3), NormScheme::RowSelfloop).unwrap();
            outputs.push(mix_hop(&h_in, &a, &p).unwrap());
        }
        assert_close(outputs[0].data(), outputs[1].data(), 1e-15);
    }

    #[test]
    fn mix_hop_on_self_graph_doubles_input() {
        // A~ = I, W = [I, I], K = 1: out = H + (beta*H + (1-beta)*H) = 2H
        let h_in = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let a = normalize(&adjacency_from(vec![0.0; 4], 2), NormScheme::RowSelfloop).unwrap();
        let p = mixhop_params(vec![Tensor::eye(2), Tensor::eye(2)], 0.3);
        let out = mix_hop(&h_in, &a, &p).unwrap();
        assert_close(out.data(), &h_in.scale(2.0).data(), 1e-15);
    }

    /// Dense oracle: evaluate the propagation/selection recursion with
    /// plain loops, no tensor machinery.
    fn mix_hop_oracle(
        h_in: &[f64],
        n: usize,
        f: usize,
        o: usize,
        a_norm: &[f64],
        beta: f64,
        weights: &[Vec<f64>],
    ) -> Vec<f64> {
        let mut out = vec![0.0; n * o];
        let mut state = h_in.to_vec();
        for (k, w) in weights.iter().enumerate() {
            if k > 0 {
                let mut prop = vec![0.0; n * f];
                for i in 0..n {
                    for l in 0..n {
                        for c in 0..f {
                            prop[i * f + c] += a_norm[i * n + l] * state[l * f + c];
                        }
                    }
                }
                for i in 0..n * f {
                    state[i] = beta * h_in[i] + (1.0 - beta) * prop[i];
                }
            }
            for i in 0..n {
                for c in 0..f {
                    for j in 0..o {
                        out[i * o + j] += state[i * f + c] * w[c * o + j];
                    }
                }
            }
        }
        out
    }

    #[test]
    fn mix_hop_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (n, f, o) = (2, 3, 2);
        let h_in = Tensor::from_vec(&[n, f], (0..n * f).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let adj = adjacency_from(vec![0.0, 1.0, 1.0, 0.0], n);
        let a = normalize(&adj, NormScheme::RowSelfloop).unwrap();
        let weights: Vec<Tensor> = (0..2)
            .map(|_| Tensor::from_vec(&[f, o], (0..f * o).map(|_| rng.gen_range(-1.0..1.0)).collect()))
            .collect();
        let p = MixHopParams { beta: 0.5, k: 1, weights: weights.clone() };
        let out = mix_hop(&h_in, &a, &p).unwrap();
        let expect = mix_hop_oracle(
            h_in.data(),
            n,
            f,
            o,
            a.tensor().data(),
            0.5,
            &weights.iter().map(|w| w.data().to_vec()).collect::<Vec<_>>(),
        );
        assert_close(out.data(), &expect, 1e-10);
    }

    #[test]
    fn mix_hop_rejects_bad_beta() {
        let h_in = Tensor::zeros(&[2, 2]);
        let a = normalize(&adjacency_from(vec![0.0; 4], 2), NormScheme::RowSelfloop).unwrap();
        let p = mixhop_params(vec![Tensor::eye(2)], 1.5);
        assert!(mix_hop(&h_in, &a, &p).is_err());
    }

    #[test]
    fn diffusion_k1_scales_input() {
        let x = Tensor::from_vec(&[3, 2], (0..6).map(|v| v as f64).collect());
        let adj = adjacency_from(vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0], 3);
        let p = DiffusionParams {
            k: 1,
            theta: Tensor::from_vec(&[1, 2], vec![0.7, -0.2]),
            alpha: 0.5,
        };
        let out = diffusion_conv(&x, &adj, &p).unwrap();
        assert_close(out.data(), &x.scale(0.5).data(), 1e-14);
    }

    #[test]
    fn diffusion_zero_theta_gives_zeros() {
        let x = Tensor::from_vec(&[2, 1], vec![1.0, 2.0]);
        let adj = adjacency_from(vec![0.0, 1.0, 1.0, 0.0], 2);
        let p = DiffusionParams { k: 2, theta: Tensor::zeros(&[2, 2]), alpha: 0.5 };
        let out = diffusion_conv(&x, &adj, &p).unwrap();
        assert!(out.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn diffusion_matches_matrix_power_oracle() {
        // 3-node chain 0-1-2, K = 2, random theta
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 3;
        let a = vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let adj = adjacency_from(a.clone(), n);
        let x: Vec<f64> = (0..n * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let theta: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = DiffusionParams {
            k: 2,
            theta: Tensor::from_vec(&[2, 2], theta.clone()),
            alpha: 0.5,
        };
        let out = diffusion_conv(&Tensor::from_vec(&[n, 2], x.clone()), &adj, &p).unwrap();

        // oracle: explicit row-normalized powers (graph symmetric, so the
        // reverse walk coincides)
        let mut walk = vec![0.0; n * n];
        for i in 0..n {
            let degree: f64 = a[i * n..(i + 1) * n].iter().sum();
            for j in 0..n {
                if degree > 0.0 {
                    walk[i * n + j] = a[i * n + j] / degree;
                }
            }
        }
        let apply_mat = |m: &[f64], v: &[f64]| {
            let mut out = vec![0.0; v.len()];
            for i in 0..n {
                for l in 0..n {
                    for c in 0..2 {
                        out[i * 2 + c] += m[i * n + l] * v[l * 2 + c];
                    }
                }
            }
            out
        };
        let p1 = apply_mat(&walk, &x);
        let mut expect = vec![0.0; n * 2];
        for i in 0..n * 2 {
            expect[i] = (theta[0] + theta[1]) * x[i] + (theta[2] + theta[3]) * p1[i];
        }
        assert_close(out.data(), &expect, 1e-12);
    }

    #[test]
    fn stationary_alpha_one_is_identity() {
        let adj = adjacency_from(vec![0.0, 1.0, 1.0, 0.0], 2);
        let (p, residual) = stationary_diffusion(&adj, 1.0, 5).unwrap();
        assert_close(p.data(), Tensor::eye(2).data(), 1e-15);
        assert_eq!(residual, 0.0);
    }

    #[test]
    fn stationary_matches_geometric_series() {
        // symmetric 2-node graph: walk matrix is the swap; closed form via
        // eigenvalues +-1: P = sum alpha (1-alpha)^k M^k
        let adj = adjacency_from(vec![0.0, 1.0, 1.0, 0.0], 2);
        let alpha = 0.5;
        let (p, residual) = stationary_diffusion(&adj, alpha, 20).unwrap();
        assert!(residual < 2e-6);

        // geometric sums: even powers are I, odd powers are the swap
        let even: f64 = (0..20).step_by(2).map(|k| alpha * (1.0 - alpha).powi(k)).sum();
        let odd: f64 = (1..20).step_by(2).map(|k| alpha * (1.0 - alpha).powi(k)).sum();
        assert_close(p.data(), &[even, odd, odd, even], 1e-6);
    }

    #[test]
    fn gegenbauer_base_cases() {
        assert_eq!(gegenbauer_poly(0, 2.0, 0.7), 1.0);
        assert!((gegenbauer_poly(1, 2.0, 0.3) - 1.2).abs() < 1e-15);
        assert_eq!(gegenbauer_poly(0, 0.5, -3.0), 1.0);
    }

    #[test]
    fn gegenbauer_alpha_one_is_chebyshev_second_kind() {
        // U_2(x) = 4x^2 - 1 vanishes at x = 0.5
        assert!(gegenbauer_poly(2, 1.0, 0.5).abs() < 1e-15);
        for &x in &[-0.9, -0.3, 0.1, 0.8] {
            let theta = (x as f64).acos();
            let u3 = (4.0 * theta).sin() / theta.sin();
            assert!((gegenbauer_poly(3, 1.0, x) - u3).abs() < 1e-12);
        }
    }

    #[test]
    fn gegenbauer_conv_k0_scales_by_theta0() {
        let x = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let a = normalize(&adjacency_from(vec![0.0, 1.0, 1.0, 0.0], 2), NormScheme::SymSelfloop)
            .unwrap();
        let p = GegenbauerParams { k: 0, alpha: 0.75, theta: Tensor::from_vec(&[1], vec![1.5]) };
        let out = gegenbauer_conv(&x, &a, &p).unwrap();
        assert_close(out.data(), &x.scale(1.5).data(), 1e-15);
    }

    #[test]
    fn gegenbauer_conv_linear_term() {
        // theta = [0, 1], alpha = 0.5: out = 2*alpha*A^*X = A^*X
        let x = Tensor::from_vec(&[2, 2], vec![1.0, -1.0, 2.0, 0.5]);
        let a = normalize(&adjacency_from(vec![0.0, 1.0, 1.0, 0.0], 2), NormScheme::SymSelfloop)
            .unwrap();
        let p = GegenbauerParams {
            k: 1,
            alpha: 0.5,
            theta: Tensor::from_vec(&[2], vec![0.0, 1.0]),
        };
        let out = gegenbauer_conv(&x, &a, &p).unwrap();
        let expect = a.tensor().matmul(&x);
        assert_close(out.data(), expect.data(), 1e-14);
    }

    /// Jacobi eigendecomposition of a small symmetric matrix (test oracle).
    fn jacobi_eigen(mat: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
        let mut a = mat.to_vec();
        let mut v = vec![0.0; n * n];
        for i in 0..n {
            v[i * n + i] = 1.0;
        }
        for _ in 0..100 {
            // largest off-diagonal element
            let (mut p, mut q, mut max) = (0, 1, 0.0f64);
            for i in 0..n {
                for j in i + 1..n {
                    if a[i * n + j].abs() > max {
                        max = a[i * n + j].abs();
                        p = i;
                        q = j;
                    }
                }
            }
            if max < 1e-14 {
                break;
            }
            let theta = 0.5 * (a[q * n + q] - a[p * n + p]) / a[p * n + q];
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            for k in 0..n {
                let (akp, akq) = (a[k * n + p], a[k * n + q]);
                a[k * n + p] = c * akp - s * akq;
                a[k * n + q] = s * akp + c * akq;
            }
            for k in 0..n {
                let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                a[p * n + k] = c * apk - s * aqk;
                a[q * n + k] = s * apk + c * aqk;
            }
            for k in 0..n {
                let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                v[k * n + p] = c * vkp - s * vkq;
                v[k * n + q] = s * vkp + c * vkq;
            }
        }
        let eigvals: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
        (eigvals, v)
    }

    #[test]
    fn gegenbauer_conv_matches_eigen_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for &alpha in &[1.0, 0.5, 2.0] {
            let n = 3;
            let adj = adjacency_from(vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0], n);
            let a_hat = normalize(&adj, NormScheme::SymSelfloop).unwrap();
            let operator = gegenbauer_operator(&a_hat).unwrap();
            let theta: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let p = GegenbauerParams {
                k: 3,
                alpha,
                theta: Tensor::from_vec(&[4], theta.clone()),
            };
            let x: Vec<f64> = (0..n * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let out = gegenbauer_conv(&Tensor::from_vec(&[n, 2], x.clone()), &a_hat, &p).unwrap();

            // oracle: Q diag(sum_k theta_k P_k(lambda)) Q^T X using the
            // scalar recursion on eigenvalues
            let (eigvals, q) = jacobi_eigen(operator.data(), n);
            let filtered: Vec<f64> = eigvals
                .iter()
                .map(|&l| (0..=3).map(|k| theta[k] * gegenbauer_poly(k, alpha, l)).sum())
                .collect();
            let mut expect = vec![0.0; n * 2];
            for col in 0..2 {
                // y = Q diag Q^T x
                let mut qtx = vec![0.0; n];
                for e in 0..n {
                    for i in 0..n {
                        qtx[e] += q[i * n + e] * x[i * 2 + col];
                    }
                }
                for e in 0..n {
                    qtx[e] *= filtered[e];
                }
                for i in 0..n {
                    let mut acc = 0.0;
                    for e in 0..n {
                        acc += q[i * n + e] * qtx[e];
                    }
                    expect[i * 2 + col] = acc;
                }
            }
            assert_close(out.data(), &expect, 1e-10);
        }
    }

    #[test]
    fn gcn_layer_identity_cases() {
        // empty graph: A_sym = I, Theta = I, identity activation -> H
        let h = Tensor::from_vec(&[2, 2], vec![0.1, 0.2, 0.3, 0.4]);
        let a = normalize(&adjacency_from(vec![0.0; 4], 2), NormScheme::SymSelfloop).unwrap();
        let out = gcn_layer(&h, &a, &Tensor::eye(2), Activation::Identity).unwrap();
        assert_close(out.data(), h.data(), 1e-15);

        // zero features: activation(0)
        let zero = Tensor::zeros(&[2, 2]);
        let out = gcn_layer(&zero, &a, &Tensor::eye(2), Activation::Sigmoid).unwrap();
        assert!(out.data().iter().all(|v| (*v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn gcn_layer_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 2;
        let adj = adjacency_from(vec![0.0, 1.0, 1.0, 0.0], n);
        let a_sym = normalize(&adj, NormScheme::SymSelfloop).unwrap();
        let h: Vec<f64> = (0..n * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let theta: Vec<f64> = (0..3 * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let out = gcn_layer(
            &Tensor::from_vec(&[n, 3], h.clone()),
            &a_sym,
            &Tensor::from_vec(&[3, 2], theta.clone()),
            Activation::Sigmoid,
        )
        .unwrap();

        let a = a_sym.tensor().data();
        let mut ah = vec![0.0; n * 3];
        for i in 0..n {
            for l in 0..n {
                for c in 0..3 {
                    ah[i * 3 + c] += a[i * n + l] * h[l * 3 + c];
                }
            }
        }
        let mut expect = vec![0.0; n * 2];
        for i in 0..n {
            for j in 0..2 {
                let mut acc = 0.0;
                for c in 0..3 {
                    acc += ah[i * 3 + c] * theta[c * 2 + j];
                }
                expect[i * 2 + j] = 1.0 / (1.0 + (-acc).exp());
            }
        }
        assert_close(out.data(), &expect, 1e-12);
    }

    #[test]
    fn spatial_ode_identity_operator_is_constant() {
        let h0 = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let a = normalize(&adjacency_from(vec![0.0; 4], 2), NormScheme::SymSelfloop).unwrap();
        let out = spatial_ode_step(&h0, &a, 1.0, 50).unwrap();
        assert_close(out.data(), h0.data(), 1e-15);
    }

    #[test]
    fn spatial_ode_single_euler_step() {
        let h0 = Tensor::from_vec(&[2, 1], vec![1.0, 3.0]);
        let a = normalize(&adjacency_from(vec![0.0, 1.0, 1.0, 0.0], 2), NormScheme::SymSelfloop)
            .unwrap();
        let out = spatial_ode_step(&h0, &a, 1.0, 1).unwrap();
        let expect = a.tensor().matmul(&h0);
        assert_close(out.data(), expect.data(), 1e-14);
    }

    /// Taylor-series matrix exponential (test oracle).
    fn expm(mat: &[f64], n: usize, terms: usize) -> Vec<f64> {
        let mut result = vec![0.0; n * n];
        for i in 0..n {
            result[i * n + i] = 1.0;
        }
        let mut term = result.clone();
        for k in 1..=terms {
            let mut next = vec![0.0; n * n];
            for i in 0..n {
                for l in 0..n {
                    for j in 0..n {
                        next[i * n + j] += term[i * n + l] * mat[l * n + j];
                    }
                }
            }
            for v in next.iter_mut() {
                *v /= k as f64;
            }
            for i in 0..n * n {
                result[i] += next[i];
            }
            term = next;
        }
        result
    }

    #[test]
    fn spatial_ode_matches_matrix_exponential() {
        let n = 2;
        let adj = adjacency_from(vec![0.0, 1.0, 1.0, 0.0], n);
        let a_hat = normalize(&adj, NormScheme::SymSelfloop).unwrap();
        let h0 = Tensor::from_vec(&[n, 1], vec![1.0, -0.5]);
        let out = spatial_ode_step(&h0, &a_hat, 1.0, 1000).unwrap();

        let mut drift = a_hat.tensor().data().to_vec();
        for i in 0..n {
            drift[i * n + i] -= 1.0;
        }
        let exp = expm(&drift, n, 30);
        let mut expect = vec![0.0; n];
        for i in 0..n {
            for l in 0..n {
                expect[i] += exp[i * n + l] * h0.data()[l];
            }
        }
        assert_close(out.data(), &expect, 1e-3);
    }

    #[test]
    fn graph_ops_pass_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let n = 3;
        let adj = adjacency_from(vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0], n);
        let row = normalize(&adj, NormScheme::RowSelfloop).unwrap();
        let sym = normalize(&adj, NormScheme::SymSelfloop).unwrap();
        let h_in = Tensor::from_vec(&[n, 2], (0..n * 2).map(|_| rng.gen_range(-1.0..1.0)).collect());

        // mix_hop with respect to a selection weight
        let w_fixed = Tensor::from_vec(&[2, 2], (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let point = Tensor::from_vec(&[2, 2], (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let err = grad_check(
            |w| {
                let p = MixHopParams { beta: 0.4, k: 1, weights: vec![w_fixed.clone(), w.clone()] };
                mix_hop(&h_in, &row, &p).unwrap().mul(&h_in).mean()
            },
            &point,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "mix_hop grad error {err}");

        // diffusion_conv with respect to theta
        let theta0 = Tensor::from_vec(&[2, 2], (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let err = grad_check(
            |theta| {
                let p = DiffusionParams { k: 2, theta: theta.clone(), alpha: 0.5 };
                diffusion_conv(&h_in, &adj, &p).unwrap().mul(&h_in).mean()
            },
            &theta0,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "diffusion grad error {err}");

        // gegenbauer_conv with respect to theta
        let theta0 = Tensor::from_vec(&[3], (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let err = grad_check(
            |theta| {
                let p = GegenbauerParams { k: 2, alpha: 1.25, theta: theta.clone() };
                gegenbauer_conv(&h_in, &sym, &p).unwrap().mul(&h_in).mean()
            },
            &theta0,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "gegenbauer grad error {err}");

        // gcn_layer with respect to Theta
        let theta0 = Tensor::from_vec(&[2, 2], (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let err = grad_check(
            |theta| {
                gcn_layer(&h_in, &sym, theta, Activation::Tanh).unwrap().mul(&h_in).mean()
            },
            &theta0,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "gcn grad error {err}");

        // spatial_ode_step with respect to the state
        let err = grad_check(
            |h0| spatial_ode_step(h0, &sym, 1.0, 8).unwrap().mul(&h_in).mean(),
            &h_in,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "spatial ODE grad error {err}");
    }
}
