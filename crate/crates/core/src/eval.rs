//! Forecast accuracy metrics (WAPE, MASE), per-level evaluation tables, and
//! model mean-rank computation.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::hierarchy::{ForecastSet, Hierarchy};
use crate::tensor::Tensor;

/// Which WAPE numerator to use.
///
/// `Standard` is the usual sum|err| / sum|y|. `AsPrinted` additionally
/// weights each error by |y| in the numerator; it is kept for fidelity with
/// reports that define the metric that way.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WapeVariant {
    Standard,
    AsPrinted,
}

impl WapeVariant {
    pub fn parse(s: &str) -> Result<WapeVariant> {
        match s {
            "standard" => Ok(WapeVariant::Standard),
            "as_printed" => Ok(WapeVariant::AsPrinted),
            other => Err(Error::Config(format!(
                "unknown WAPE variant '{other}' (expected standard or as_printed)"
            ))),
        }
    }
}

fn check_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            expected: format!("{:?}", a.shape()),
            actual: format!("{:?}", b.shape()),
        });
    }
    Ok(())
}

/// Weighted absolute percentage error, pooled over all entries.
pub fn wape(actual: &Tensor, pred: &Tensor, variant: WapeVariant) -> Result<f64> {
    check_same_shape("wape", actual, pred)?;
    let denom: f64 = actual.data().iter().map(|y| y.abs()).sum();
    if denom <= 0.0 {
        return Err(Error::Metric("WAPE undefined: actuals are all zero".into()));
    }
    let numer: f64 = actual
        .data()
        .iter()
        .zip(pred.data())
        .map(|(y, f)| match variant {
            WapeVariant::Standard => (y - f).abs(),
            WapeVariant::AsPrinted => (y - f).abs() * y.abs(),
        })
        .sum();
    Ok(numer / denom)
}

/// Mean absolute scaled error: mean absolute test error divided by the mean
/// in-sample naive error at lag `m`. Inputs are `[nodes, time]` matrices
/// pooled jointly.
pub fn mase(
    actual_test: &Tensor,
    pred_test: &Tensor,
    actual_train: &Tensor,
    m: usize,
) -> Result<f64> {
    check_same_shape("mase", actual_test, pred_test)?;
    if m < 1 {
        return Err(Error::Config("naive lag must be >= 1".into()));
    }
    if actual_train.ndim() != 2 || actual_test.ndim() != 2 {
        return Err(Error::ShapeMismatch {
            op: "mase",
            expected: "[nodes, time] matrices".into(),
            actual: format!("{:?} / {:?}", actual_test.shape(), actual_train.shape()),
        });
    }
    if actual_train.shape()[0] != actual_test.shape()[0] {
        return Err(Error::ShapeMismatch {
            op: "mase",
            expected: format!("{} train rows", actual_test.shape()[0]),
            actual: format!("{:?}", actual_train.shape()),
        });
    }
    let t_train = actual_train.shape()[1];
    if t_train <= m {
        return Err(Error::Metric(format!(
            "MASE needs training length > lag (got {t_train} <= {m})"
        )));
    }

    let rows = actual_train.shape()[0];
    let mut naive_sum = 0.0;
    let mut naive_count = 0usize;
    for r in 0..rows {
        for t in m..t_train {
            naive_sum += (actual_train.at2(r, t) - actual_train.at2(r, t - m)).abs();
            naive_count += 1;
        }
    }
    let scale = naive_sum / naive_count as f64;
    if scale <= 0.0 {
        return Err(Error::Metric(
            "MASE undefined: training series are constant (zero naive error)".into(),
        ));
    }

    let err_mean: f64 = actual_test
        .data()
        .iter()
        .zip(pred_test.data())
        .map(|(y, f)| (y - f).abs())
        .sum::<f64>()
        / actual_test.len() as f64;
    Ok(err_mean / scale)
}

/// One labeled row of the evaluation table.
#[derive(Debug, Clone)]
pub struct EvalRow {
    pub label: String,
    pub wape: f64,
    pub mase: f64,
}

/// Per-level and overall metrics plus per-node detail rows.
#[derive(Debug, Clone)]
pub struct EvalTable {
    pub levels: Vec<EvalRow>,
    pub overall: EvalRow,
    pub per_node: Vec<EvalRow>,
}

impl EvalTable {
    /// Comma-separated rendering: `scope,label,wape,mase`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scope,label,wape,mase\n");
        for row in &self.levels {
            out.push_str(&format!("level,{},{},{}\n", row.label, row.wape, row.mase));
        }
        out.push_str(&format!(
            "overall,{},{},{}\n",
            self.overall.label, self.overall.wape, self.overall.mase
        ));
        for row in &self.per_node {
            out.push_str(&format!("node,{},{},{}\n", row.label, row.wape, row.mase));
        }
        out
    }

    /// Aligned console rendering of the level and overall rows.
    pub fn format_console(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<14} {:>12} {:>12}\n", "series", "WAPE", "MASE"));
        for row in &self.levels {
            out.push_str(&format!("{:<14} {:>12.6} {:>12.6}\n", row.label, row.wape, row.mase));
        }
        out.push_str(&format!(
            "{:<14} {:>12.6} {:>12.6}\n",
            "overall", self.overall.wape, self.overall.mase
        ));
        out
    }
}

/// Rows of a matrix restricted to the given node positions.
fn select_rows(values: &Tensor, rows: &[usize]) -> Tensor {
    let cols = values.shape()[1];
    let mut data = Vec::with_capacity(rows.len() * cols);
    for &r in rows {
        data.extend_from_slice(&values.data()[r * cols..(r + 1) * cols]);
    }
    Tensor::from_vec(&[rows.len(), cols], data)
}

/// Evaluate a coherent forecast set against the test actuals, pooling
/// metrics per level and overall. `train_values` supplies the in-sample
/// history for the MASE scale (naive lag 1).
pub fn evaluate(
    forecasts: &ForecastSet,
    actuals_full: &Tensor,
    train_values: &Tensor,
    hierarchy: &Hierarchy,
    variant: WapeVariant,
) -> Result<EvalTable> {
    let m = hierarchy.m();
    if actuals_full.ndim() != 2 || actuals_full.shape()[0] != m {
        return Err(Error::ShapeMismatch {
            op: "evaluate",
            expected: format!("[{m}, H] actuals"),
            actual: format!("{:?}", actuals_full.shape()),
        });
    }
    check_same_shape("evaluate", actuals_full, forecasts.full())?;
    if train_values.ndim() != 2 || train_values.shape()[0] != m {
        return Err(Error::ShapeMismatch {
            op: "evaluate",
            expected: format!("[{m}, T] training values"),
            actual: format!("{:?}", train_values.shape()),
        });
    }

    let metrics = |rows: &[usize]| -> Result<(f64, f64)> {
        let actual = select_rows(actuals_full, rows);
        let pred = select_rows(forecasts.full(), rows);
        let train = select_rows(train_values, rows);
        Ok((wape(&actual, &pred, variant)?, mase(&actual, &pred, &train, 1)?))
    };

    let mut levels = Vec::new();
    for level in 0..hierarchy.level_count() {
        let rows = hierarchy.nodes_at_level(level);
        if rows.is_empty() {
            continue;
        }
        let (w, s) = metrics(&rows)?;
        levels.push(EvalRow { label: format!("level{level}"), wape: w, mase: s });
    }
    let all: Vec<usize> = (0..m).collect();
    let (w, s) = metrics(&all)?;
    let overall = EvalRow { label: "overall".into(), wape: w, mase: s };

    let mut per_node = Vec::new();
    for pos in 0..m {
        let (w, s) = metrics(&[pos])?;
        per_node.push(EvalRow { label: hierarchy.node_id(pos).to_string(), wape: w, mase: s });
    }
    Ok(EvalTable { levels, overall, per_node })
}

/// Average rank of each model across datasets: rank 1 is the best (lowest)
/// metric, ties receive the average of the tied positions.
pub fn mean_rank(
    scores: &BTreeMap<String, BTreeMap<String, f64>>,
) -> Result<BTreeMap<String, f64>> {
    if scores.len() < 2 {
        return Err(Error::Config("mean_rank needs at least two models".into()));
    }
    let datasets: Vec<String> = scores
        .values()
        .next()
        .map(|m| m.keys().cloned().collect())
        .unwrap_or_default();
    if datasets.is_empty() {
        return Err(Error::Config("mean_rank needs at least one dataset".into()));
    }
    for (model, per_dataset) in scores {
        for ds in &datasets {
            if !per_dataset.contains_key(ds) {
                return Err(Error::Data(format!("model '{model}' is missing dataset '{ds}'")));
            }
        }
        if per_dataset.len() != datasets.len() {
            return Err(Error::Data(format!("model '{model}' has extra dataset entries")));
        }
    }

    let mut totals: BTreeMap<String, f64> =
        scores.keys().map(|k| (k.clone(), 0.0)).collect();
    for ds in &datasets {
        let mut entries: Vec<(&String, f64)> =
            scores.iter().map(|(model, m)| (model, m[ds])).collect();
        entries.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
        let mut i = 0;
        while i < entries.len() {
            let mut j = i;
            while j + 1 < entries.len() && entries[j + 1].1 == entries[i].1 {
                j += 1;
            }
            // 1-based positions i+1 ..= j+1 share the average rank
            let rank = (i + 1 + j + 1) as f64 / 2.0;
            for entry in &entries[i..=j] {
                *totals.get_mut(entry.0).unwrap() += rank;
            }
            i = j + 1;
        }
    }
    Ok(totals
        .into_iter()
        .map(|(model, total)| (model, total / datasets.len() as f64))
        .collect())
}
