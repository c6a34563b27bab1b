//! Panel ingestion, chronological splitting, per-node scaling, and the
//! seeded synthetic hierarchical-data generator.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::hierarchy::{build_hierarchy, summing_matrix, Hierarchy};
use crate::tensor::Tensor;

/// Observed values for every node of a hierarchy over time, plus optional
/// per-node covariate channels.
#[derive(Debug, Clone)]
pub struct TimeSeriesPanel {
    node_ids: Vec<String>,
    /// `[m, T]` in hierarchy order.
    values: Tensor,
    /// Optional per-node `[channels, T]` blocks, aligned to `node_ids`.
    covariates: Option<Vec<Tensor>>,
    /// Integer time step of every column.
    time_index: Vec<usize>,
}

impl TimeSeriesPanel {
    pub fn new(node_ids: Vec<String>, values: Tensor, time_index: Vec<usize>) -> Result<Self> {
        if values.ndim() != 2 || values.shape()[0] != node_ids.len() {
            return Err(Error::ShapeMismatch {
                op: "panel",
                expected: format!("[{}, T] values", node_ids.len()),
                actual: format!("{:?}", values.shape()),
            });
        }
        if values.shape()[1] != time_index.len() {
            return Err(Error::Data("time index length does not match values".into()));
        }
        if values.shape()[1] < 2 {
            return Err(Error::Data("panel needs at least 2 time steps".into()));
        }
        if !values.is_finite() {
            return Err(Error::Data("panel contains non-finite values".into()));
        }
        Ok(TimeSeriesPanel { node_ids, values, covariates: None, time_index })
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn node_count(&self) -> usize {
        self.node_ids.len()
    }

    pub fn t_len(&self) -> usize {
        self.values.shape()[1]
    }

    /// `[m, T]` value matrix in hierarchy order.
    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn time_index(&self) -> &[usize] {
        &self.time_index
    }

    pub fn covariates(&self) -> Option<&[Tensor]> {
        self.covariates.as_deref()
    }

    pub fn set_covariates(&mut self, covariates: Option<Vec<Tensor>>) {
        self.covariates = covariates;
    }

    /// Copy of the columns `[start, start+len)`.
    pub fn time_slice(&self, start: usize, len: usize) -> TimeSeriesPanel {
        assert!(start + len <= self.t_len(), "time_slice out of range");
        TimeSeriesPanel {
            node_ids: self.node_ids.clone(),
            values: self.values.slice(1, start, len),
            covariates: self
                .covariates
                .as_ref()
                .map(|cov| cov.iter().map(|c| c.slice(1, start, len)).collect()),
            time_index: self.time_index[start..start + len].to_vec(),
        }
    }
}

/// How panel values are standardized before entering the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalingKind {
    PerNodeZscore,
    None,
}

impl ScalingKind {
    pub fn parse(s: &str) -> Result<ScalingKind> {
        match s {
            "per_node_zscore" => Ok(ScalingKind::PerNodeZscore),
            "none" => Ok(ScalingKind::None),
            other => Err(Error::Config(format!(
                "unknown scaling '{other}' (expected per_node_zscore or none)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ScalingKind::PerNodeZscore => "per_node_zscore",
            ScalingKind::None => "none",
        }
    }
}

/// Per-node affine standardization fitted on training data only.
#[derive(Debug, Clone)]
pub struct Scaler {
    kind: ScalingKind,
    means: Vec<f64>,
    stds: Vec<f64>,
}

impl Scaler {
    /// Fit per-node mean and standard deviation on `[rows, T]` values.
    /// Constant rows get unit scale so the transform stays invertible.
    pub fn fit(values: &Tensor, kind: ScalingKind) -> Scaler {
        let rows = values.shape()[0];
        let t_len = values.shape()[1];
        match kind {
            ScalingKind::None => Scaler::identity(rows),
            ScalingKind::PerNodeZscore => {
                let mut means = vec![0.0; rows];
                let mut stds = vec![1.0; rows];
                for r in 0..rows {
                    let row = &values.data()[r * t_len..(r + 1) * t_len];
                    let mean = row.iter().sum::<f64>() / t_len as f64;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                        / t_len as f64;
                    means[r] = mean;
                    stds[r] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
                }
                Scaler { kind, means, stds }
            }
        }
    }

    pub fn identity(rows: usize) -> Scaler {
        Scaler {
            kind: ScalingKind::None,
            means: vec![0.0; rows],
            stds: vec![1.0; rows],
        }
    }

    pub fn kind(&self) -> ScalingKind {
        self.kind
    }

    pub fn rows(&self) -> usize {
        self.means.len()
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn stds(&self) -> &[f64] {
        &self.stds
    }

    pub(crate) fn from_parts(kind: ScalingKind, means: Vec<f64>, stds: Vec<f64>) -> Scaler {
        Scaler { kind, means, stds }
    }

    /// Standardize `[rows, ...]` values (plain, not taped).
    pub fn transform(&self, values: &Tensor) -> Tensor {
        assert_eq!(values.shape()[0], self.rows(), "scaler row mismatch");
        let inner = values.len() / self.rows().max(1);
        let mut data = vec![0.0; values.len()];
        for r in 0..self.rows() {
            for j in 0..inner {
                data[r * inner + j] = (values.at(r * inner + j) - self.means[r]) / self.stds[r];
            }
        }
        Tensor::from_vec(values.shape(), data)
    }

    /// Map model outputs back to original units. `row_offset` selects which
    /// node rows the tensor covers (e.g. the bottom block). The result stays
    /// on the tape so losses in original units backpropagate.
    pub fn inverse_transform(&self, x: &Tensor, row_offset: usize) -> Tensor {
        let rows = x.shape()[0];
        assert!(row_offset + rows <= self.rows(), "scaler row range");
        x.rows_affine(
            &self.stds[row_offset..row_offset + rows],
            &self.means[row_offset..row_offset + rows],
        )
    }
}

/// Chronological splitting policy: the last `test_horizon` steps are the
/// test window and the remaining prefix is split `train_frac` / rest in
/// time order.
#[derive(Debug, Clone)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub test_horizon: usize,
}

impl SplitSpec {
    pub fn new(test_horizon: usize) -> SplitSpec {
        SplitSpec { train_frac: 0.8, test_horizon }
    }

    fn validate(&self) -> Result<()> {
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(Error::Config(format!(
                "train fraction {} outside (0, 1)",
                self.train_frac
            )));
        }
        if self.test_horizon < 1 {
            return Err(Error::Config("test horizon must be >= 1".into()));
        }
        Ok(())
    }
}

/// Split a panel into (train, validation, test) segments: test is the last
/// window, and the prefix is divided in time order with no overlap.
pub fn chrono_split(
    panel: &TimeSeriesPanel,
    spec: &SplitSpec,
) -> Result<(TimeSeriesPanel, TimeSeriesPanel, TimeSeriesPanel)> {
    spec.validate()?;
    let t_len = panel.t_len();
    if t_len < spec.test_horizon + 2 {
        return Err(Error::Data(format!(
            "panel length {t_len} cannot fit a test window of {} plus train/validation",
            spec.test_horizon
        )));
    }
    let prefix = t_len - spec.test_horizon;
    let train_len = ((prefix as f64 * spec.train_frac).floor() as usize).clamp(1, prefix - 1);
    let val_len = prefix - train_len;
    Ok((
        panel.time_slice(0, train_len),
        panel.time_slice(train_len, val_len),
        panel.time_slice(prefix, spec.test_horizon),
    ))
}

// ---------------------------------------------------------------------------
// Wide CSV panel format
// ---------------------------------------------------------------------------

/// Render a node/value matrix in the wide panel format
/// (`node_id,t0,t1,...`). Values use the shortest round-trip float
/// representation, so save -> load is value-exact.
pub fn panel_to_csv(node_ids: &[String], values: &Tensor, time_index: &[usize]) -> String {
    let t_len = values.shape()[1];
    let mut out = String::from("node_id");
    for t in time_index {
        out.push_str(&format!(",t{t}"));
    }
    out.push('\n');
    for (r, id) in node_ids.iter().enumerate() {
        out.push_str(id);
        for c in 0..t_len {
            out.push_str(&format!(",{}", values.at2(r, c)));
        }
        out.push('\n');
    }
    out
}

/// Write a panel to disk (temp file then rename, so failures leave no
/// partial output).
pub fn save_panel(path: &Path, panel: &TimeSeriesPanel) -> Result<()> {
    let text = panel_to_csv(panel.node_ids(), panel.values(), panel.time_index());
    crate::write_atomic(path, text.as_bytes())
}

/// Read raw wide-format rows without hierarchy alignment or coherence
/// validation (used for externally produced forecast files).
pub fn read_wide_rows(path: &Path) -> Result<Vec<(String, Vec<f64>)>> {
    let text = std::fs::read_to_string(path)?;
    parse_wide_csv(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Parse the wide panel format into rows of (node id, values).
fn parse_wide_csv(text: &str) -> Result<Vec<(String, Vec<f64>)>> {
    let mut rows = Vec::new();
    let mut saw_header = false;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_header {
            if !line.starts_with("node_id") {
                return Err(Error::Data(format!(
                    "line {}: expected header starting with 'node_id'",
                    lineno + 1
                )));
            }
            saw_header = true;
            continue;
        }
        let mut parts = line.split(',');
        let id = parts
            .next()
            .ok_or_else(|| Error::Data(format!("line {}: empty row", lineno + 1)))?
            .trim()
            .to_string();
        let mut values = Vec::new();
        for (col, cell) in parts.enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::Data(format!(
                    "line {}: non-numeric cell '{}' in column {}",
                    lineno + 1,
                    cell.trim(),
                    col + 2
                ))
            })?;
            values.push(v);
        }
        rows.push((id, values));
    }
    if !saw_header {
        return Err(Error::Data("missing 'node_id' header".into()));
    }
    Ok(rows)
}

/// Load a panel for a hierarchy from the wide CSV format. Bottom rows are
/// mandatory. Aggregate rows are optional: absent ones are recomputed
/// through the summing matrix, present ones are validated for coherence
/// (within 1e-6 relative) and rejected otherwise.
pub fn load_panel(path: &Path, hierarchy: &Arc<Hierarchy>) -> Result<TimeSeriesPanel> {
    let text = std::fs::read_to_string(path)?;
    load_panel_from_str(&text, hierarchy)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn load_panel_from_str(text: &str, hierarchy: &Arc<Hierarchy>) -> Result<TimeSeriesPanel> {
    let rows = parse_wide_csv(text)?;
    let mut by_node: Vec<Option<Vec<f64>>> = vec![None; hierarchy.m()];
    let mut t_len = None;
    for (id, values) in rows {
        let pos = hierarchy
            .position(&id)
            .ok_or_else(|| Error::Data(format!("unknown node id '{id}'")))?;
        if by_node[pos].is_some() {
            return Err(Error::Data(format!("duplicate row for node '{id}'")));
        }
        match t_len {
            None => t_len = Some(values.len()),
            Some(t) if t != values.len() => {
                return Err(Error::Data(format!(
                    "row '{id}' has {} values, expected {t}",
                    values.len()
                )))
            }
            _ => {}
        }
        by_node[pos] = Some(values);
    }
    let t_len = t_len.ok_or_else(|| Error::Data("panel has no data rows".into()))?;
    if t_len < 2 {
        return Err(Error::Data("panel needs at least 2 time steps".into()));
    }

    let (a, n) = (hierarchy.a(), hierarchy.n());
    for j in 0..n {
        if by_node[a + j].is_none() {
            return Err(Error::Data(format!(
                "missing bottom row '{}'",
                hierarchy.node_id(a + j)
            )));
        }
    }

    // recompute aggregates from the bottom block
    let mut bottom = vec![0.0; n * t_len];
    for j in 0..n {
        bottom[j * t_len..(j + 1) * t_len].copy_from_slice(by_node[a + j].as_ref().unwrap());
    }
    let s = summing_matrix(hierarchy);
    let full = s.tensor().matmul(&Tensor::from_vec(&[n, t_len], bottom));

    // validate provided aggregates, fill in absent ones
    let mut data = vec![0.0; hierarchy.m() * t_len];
    for pos in 0..hierarchy.m() {
        match &by_node[pos] {
            Some(values) if pos < a => {
                for (c, v) in values.iter().enumerate() {
                    let computed = full.at2(pos, c);
                    if (v - computed).abs() > 1e-6 * computed.abs().max(1.0) {
                        return Err(Error::Data(format!(
                            "incoherent aggregate row '{}' at step {}: provided {}, \
                             sum of descendants {}",
                            hierarchy.node_id(pos),
                            c,
                            v,
                            computed
                        )));
                    }
                    data[pos * t_len + c] = *v;
                }
            }
            Some(values) => {
                data[pos * t_len..(pos + 1) * t_len].copy_from_slice(values);
            }
            None => {
                for c in 0..t_len {
                    data[pos * t_len + c] = full.at2(pos, c);
                }
            }
        }
    }
    TimeSeriesPanel::new(
        hierarchy.node_ids().to_vec(),
        Tensor::from_vec(&[hierarchy.m(), t_len], data),
        (0..t_len).collect(),
    )
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

/// Configuration of the synthetic hierarchical-data generator.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub n_bottom: usize,
    /// Number of levels including top and bottom.
    pub depth: usize,
    pub t_len: usize,
    /// Number of shared latent factors.
    pub latent_factors: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.n_bottom < 2 {
            return Err(Error::Config("synth needs n_bottom >= 2".into()));
        }
        if self.depth < 2 {
            return Err(Error::Config("synth needs depth >= 2".into()));
        }
        if self.latent_factors < 1 {
            return Err(Error::Config("synth needs at least one latent factor".into()));
        }
        if self.t_len < 2 {
            return Err(Error::Config("synth needs t_len >= 2".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Config("noise sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// Build a balanced tree with the requested leaf count and depth.
fn balanced_tree(n_bottom: usize, depth: usize) -> Result<Arc<Hierarchy>> {
    let levels = depth;
    let branching = (n_bottom as f64).powf(1.0 / (levels as f64 - 1.0)).ceil().max(2.0) as usize;
    let mut sizes = vec![0usize; levels];
    sizes[levels - 1] = n_bottom;
    for l in (0..levels - 1).rev() {
        sizes[l] = sizes[l + 1].div_ceil(branching).max(1);
    }
    sizes[0] = 1;

    let name = |level: usize, idx: usize| -> String {
        if level == 0 {
            "root".to_string()
        } else {
            format!("l{level}n{idx:04}")
        }
    };
    let mut edges = Vec::new();
    for l in 1..levels {
        for j in 0..sizes[l] {
            let parent = (j * sizes[l - 1]) / sizes[l];
            edges.push((name(l, j), name(l - 1, parent)));
        }
    }
    Ok(Arc::new(build_hierarchy(&edges)?))
}

/// Generate a balanced hierarchy and a panel whose bottom series are
/// nonnegative mixtures of shared sinusoidal/AR(1) latent factors with
/// per-leaf loadings plus Gaussian noise. Deterministic per seed, and the
/// signal draws are independent of the noise draws so two runs that differ
/// only in `noise_sigma` share the same underlying signal.
pub fn synth_generate(cfg: &SynthConfig) -> Result<(Arc<Hierarchy>, TimeSeriesPanel)> {
    cfg.validate()?;
    let hierarchy = balanced_tree(cfg.n_bottom, cfg.depth)?;
    let (n, t_len, k) = (hierarchy.n(), cfg.t_len, cfg.latent_factors);

    let mut signal_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    signal_rng.set_stream(1);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    noise_rng.set_stream(2);
    let unit_normal = Normal::new(0.0, 1.0).expect("unit normal");

    // shared latent factors: alternating sinusoids and AR(1) walks
    let mut factors = vec![vec![0.0; t_len]; k];
    for (j, factor) in factors.iter_mut().enumerate() {
        if j % 2 == 0 {
            let period = signal_rng.gen_range(t_len as f64 / 8.0..t_len as f64 / 2.0);
            let phase = signal_rng.gen_range(0.0..std::f64::consts::TAU);
            for (t, v) in factor.iter_mut().enumerate() {
                *v = (std::f64::consts::TAU * t as f64 / period + phase).sin();
            }
        } else {
            let mut state = 0.0;
            for v in factor.iter_mut() {
                state = 0.8 * state + 0.6 * unit_normal.sample(&mut signal_rng);
                *v = state;
            }
        }
    }

    let loadings: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..k).map(|_| signal_rng.gen_range(0.5..1.5)).collect())
        .collect();
    let bases: Vec<f64> = (0..n).map(|_| signal_rng.gen_range(3.0..6.0)).collect();

    let mut bottom = vec![0.0; n * t_len];
    for i in 0..n {
        for t in 0..t_len {
            let mut v = bases[i];
            for j in 0..k {
                v += loadings[i][j] * factors[j][t];
            }
            v += cfg.noise_sigma * unit_normal.sample(&mut noise_rng);
            bottom[i * t_len + t] = v.max(0.0);
        }
    }

    let s = summing_matrix(&hierarchy);
    let full = s.tensor().matmul(&Tensor::from_vec(&[n, t_len], bottom));
    let panel = TimeSeriesPanel::new(
        hierarchy.node_ids().to_vec(),
        full,
        (0..t_len).collect(),
    )?;
    Ok((hierarchy, panel))
}
