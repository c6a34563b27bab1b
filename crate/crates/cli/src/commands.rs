//! Implementations of the CLI subcommands.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use hgnn_core::backbone::{
    load_checkpoint, save_checkpoint, BackboneKind, Checkpoint, MGMConfig,
};
use hgnn_core::data::{
    load_panel, read_wide_rows, save_panel, synth_generate, ScalingKind, SynthConfig,
    TimeSeriesPanel,
};
use hgnn_core::eval::{evaluate, EvalTable, WapeVariant};
use hgnn_core::gradsuite::{backbone_gradient_suite, op_gradient_suite};
use hgnn_core::graph::GraphMode;
use hgnn_core::hierarchy::{
    check_coherence, hierarchy_to_csv, load_hierarchy, reconcile_bottom_up, reconcile_top_down,
    summing_matrix, ForecastSet, Hierarchy, SummingMatrix,
};
use hgnn_core::training::{forecast, train, LossKind, TrainConfig, TrainedModel};
use hgnn_core::{write_atomic, Error, Result, Tensor};

use crate::config::{resolve, KvFile};
use crate::{
    EvaluateArgs, ForecastArgs, GradcheckArgs, ReconcileArgs, SynthArgs, TrainArgs,
};

fn load_inputs(hierarchy: &Path, panel: &Path) -> Result<(Arc<Hierarchy>, TimeSeriesPanel)> {
    let h = Arc::new(load_hierarchy(hierarchy)?);
    let p = load_panel(panel, &h)?;
    Ok((h, p))
}

pub fn run_synth(args: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_bottom: args.bottom,
        depth: args.depth,
        t_len: args.len,
        latent_factors: args.factors,
        noise_sigma: args.noise,
        seed: args.seed,
    };
    let (hierarchy, panel) = synth_generate(&cfg)?;
    write_atomic(&args.out_hierarchy, hierarchy_to_csv(&hierarchy).as_bytes())?;
    save_panel(&args.out_panel, &panel)?;
    println!(
        "synth: {} nodes ({} bottom, {} levels), {} steps -> {} + {}",
        hierarchy.m(),
        hierarchy.n(),
        hierarchy.level_count(),
        panel.t_len(),
        args.out_hierarchy.display(),
        args.out_panel.display()
    );
    Ok(())
}

/// Assemble the model and training configuration from flags over an
/// optional `key = value` file.
fn build_configs(args: &TrainArgs) -> Result<(MGMConfig, TrainConfig)> {
    let file = match &args.config {
        Some(path) => KvFile::load(path)?,
        None => KvFile::empty(),
    };

    let backbone_name = match (&args.backbone, file.get_str("backbone")) {
        (Some(b), _) => b.clone(),
        (None, Some(b)) => b.to_string(),
        (None, None) => return Err(Error::Config("missing --backbone (or 'backbone' in --config)".into())),
    };
    let graph_mode_name = match (&args.graph_mode, file.get_str("graph-mode")) {
        (Some(g), _) => g.clone(),
        (None, Some(g)) => g.to_string(),
        (None, None) => "full_hierarchy".to_string(),
    };
    let loss_name = match (&args.loss, file.get_str("loss")) {
        (Some(l), _) => l.clone(),
        (None, Some(l)) => l.to_string(),
        (None, None) => "mse".to_string(),
    };
    let scaling_name = match (&args.scaling, file.get_str("scaling")) {
        (Some(s), _) => s.clone(),
        (None, Some(s)) => s.to_string(),
        (None, None) => "per_node_zscore".to_string(),
    };

    let mgm = MGMConfig {
        kind: BackboneKind::parse(&backbone_name)?,
        graph_mode: GraphMode::parse(&graph_mode_name)?,
        input_window: resolve(&args.window, &file, "window", 24)?,
        horizon: resolve(&args.horizon, &file, "horizon", 7)?,
        hidden: resolve(&args.hidden, &file, "hidden", 16)?,
        layers: resolve(&args.layers, &file, "layers", 2)?,
        k: resolve(&args.khops, &file, "khops", 2)?,
        beta: resolve(&args.beta, &file, "beta", 0.05)?,
        alpha_geg: resolve(&args.alpha_geg, &file, "alpha-geg", 1.0)?,
        dilation_q: resolve(&args.dilation_q, &file, "dilation-q", 2)?,
        channels: 1,
    };
    let train_cfg = TrainConfig {
        lambda: resolve(&args.lambda, &file, "lambda", 0.5)?,
        lr: resolve(&args.lr, &file, "lr", 1e-3)?,
        beta1: resolve(&args.beta1, &file, "beta1", 0.9)?,
        beta2: resolve(&args.beta2, &file, "beta2", 0.999)?,
        eps: resolve(&args.eps, &file, "eps", 1e-8)?,
        max_epochs: resolve(&args.epochs, &file, "epochs", 50)?,
        patience: resolve(&args.patience, &file, "patience", 4)?,
        batch: resolve(&args.batch, &file, "batch", 8)?,
        curriculum: args.curriculum || file.get::<bool>("curriculum")?.unwrap_or(false),
        loss_kind: LossKind::parse(&loss_name)?,
        seed: resolve(&args.seed, &file, "seed", 0)?,
        scaling: ScalingKind::parse(&scaling_name)?,
        train_frac: resolve(&args.train_frac, &file, "train-frac", 0.8)?,
    };
    mgm.validate()?;
    train_cfg.validate()?;
    Ok((mgm, train_cfg))
}

pub fn run_train(args: &TrainArgs) -> Result<()> {
    let (mgm, train_cfg) = build_configs(args)?;
    let (hierarchy, panel) = load_inputs(&args.hierarchy, &args.panel)?;

    // hold out the last window for testing; train on the prefix
    if panel.t_len() <= mgm.horizon + mgm.input_window {
        return Err(Error::Data(format!(
            "panel of {} steps cannot hold out a test window of {} plus training data",
            panel.t_len(),
            mgm.horizon
        )));
    }
    let prefix = panel.time_slice(0, panel.t_len() - mgm.horizon);

    let (model, report) = train(&train_cfg, &mgm, &prefix, &hierarchy)?;

    let cp = Checkpoint {
        cfg: model.cfg.clone(),
        params: model.params.clone(),
        scaler: Some(model.scaler.clone()),
    };
    save_checkpoint(&args.out_checkpoint, &cp)?;
    if let Some(report_path) = &args.out_report {
        write_atomic(report_path, report.to_csv().as_bytes())?;
    }

    let best = report.best();
    println!(
        "trained {} for {} epochs (best epoch {}, stopped at {})",
        mgm.kind.as_str(),
        report.epochs.len(),
        report.best_epoch,
        report.stopped_epoch
    );
    print!("best validation WAPE: overall {:.6}", best.val_wape_overall);
    for (level, w) in best.val_wape_per_level.iter().enumerate() {
        print!(", level{level} {w:.6}");
    }
    println!();
    println!("checkpoint: {}", args.out_checkpoint.display());
    Ok(())
}

fn model_from_checkpoint(path: &Path) -> Result<TrainedModel> {
    let cp = load_checkpoint(path)?;
    let scaler = cp.scaler.ok_or_else(|| {
        Error::Checkpoint(format!("{}: checkpoint has no scaler; cannot forecast", path.display()))
    })?;
    Ok(TrainedModel { cfg: cp.cfg, params: cp.params, scaler })
}

/// Forecast output rows continue the panel's time index.
fn write_forecasts(path: &Path, fs: &ForecastSet, panel: &TimeSeriesPanel) -> Result<()> {
    let start = panel.time_index().last().map(|t| t + 1).unwrap_or(0);
    let labels: Vec<usize> = (0..fs.horizon()).map(|i| start + i).collect();
    let text = hgnn_core::data::panel_to_csv(
        fs.hierarchy().node_ids(),
        &fs.full().detach(),
        &labels,
    );
    write_atomic(path, text.as_bytes())
}

pub fn run_forecast(args: &ForecastArgs) -> Result<()> {
    let model = model_from_checkpoint(&args.checkpoint)?;
    let (hierarchy, panel) = load_inputs(&args.hierarchy, &args.panel)?;
    let horizon = args.horizon.unwrap_or(model.cfg.horizon);
    let fs = forecast(&model, &panel, &hierarchy, horizon)?;
    write_forecasts(&args.out, &fs, &panel)?;
    println!(
        "forecast: {} series x {} steps -> {}",
        fs.full().shape()[0],
        horizon,
        args.out.display()
    );
    Ok(())
}

/// Load an externally produced forecast file: all m rows required, in any
/// order, coherence not assumed.
fn load_forecast_matrix(path: &Path, hierarchy: &Arc<Hierarchy>) -> Result<Tensor> {
    let rows = read_wide_rows(path)?;
    let mut by_node: Vec<Option<Vec<f64>>> = vec![None; hierarchy.m()];
    let mut width = None;
    for (id, values) in rows {
        let pos = hierarchy
            .position(&id)
            .ok_or_else(|| Error::Data(format!("{}: unknown node id '{id}'", path.display())))?;
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(Error::Data(format!("{}: ragged rows", path.display())))
            }
            _ => {}
        }
        by_node[pos] = Some(values);
    }
    let width = width.ok_or_else(|| Error::Data(format!("{}: no rows", path.display())))?;
    let mut data = Vec::with_capacity(hierarchy.m() * width);
    for (pos, row) in by_node.into_iter().enumerate() {
        let row = row.ok_or_else(|| {
            Error::Data(format!("{}: missing row '{}'", path.display(), hierarchy.node_id(pos)))
        })?;
        data.extend_from_slice(&row);
    }
    Ok(Tensor::from_vec(&[hierarchy.m(), width], data))
}

fn print_eval(table: &EvalTable, out: &Option<PathBuf>) -> Result<()> {
    print!("{}", table.format_console());
    if let Some(path) = out {
        write_atomic(path, table.to_csv().as_bytes())?;
        println!("written: {}", path.display());
    }
    Ok(())
}

pub fn run_evaluate(args: &EvaluateArgs) -> Result<()> {
    let variant = WapeVariant::parse(&args.metric_variant)?;
    let (hierarchy, panel) = load_inputs(&args.hierarchy, &args.panel)?;
    let summing = summing_matrix(&hierarchy);

    let (forecasts, horizon) = match (&args.checkpoint, &args.forecasts) {
        (Some(cp_path), None) => {
            let model = model_from_checkpoint(cp_path)?;
            let horizon = args.horizon.unwrap_or(model.cfg.horizon);
            if panel.t_len() <= horizon {
                return Err(Error::Data("panel shorter than the evaluation horizon".into()));
            }
            let prefix = panel.time_slice(0, panel.t_len() - horizon);
            (forecast(&model, &prefix, &hierarchy, horizon)?, horizon)
        }
        (None, Some(fc_path)) => {
            let matrix = load_forecast_matrix(fc_path, &hierarchy)?;
            let horizon = matrix.shape()[1];
            if panel.t_len() <= horizon {
                return Err(Error::Data("panel shorter than the forecast horizon".into()));
            }
            let tol = 1e-6 * (1.0 + matrix.max_abs());
            let (coherent, violation) = check_coherence(&matrix, &summing, tol)?;
            let fs = if coherent {
                reconcile_bottom_up(&summing, &matrix)?
            } else if args.reconcile {
                println!("reconciling incoherent forecasts bottom-up (violation {violation:.6})");
                reconcile_bottom_up(&summing, &matrix)?
            } else {
                return Err(Error::Data(format!(
                    "forecast file is incoherent (max violation {violation}); \
                     pass --reconcile to aggregate from its bottom rows"
                )));
            };
            (fs, horizon)
        }
        _ => {
            return Err(Error::Config(
                "exactly one of --checkpoint or --forecasts is required".into(),
            ))
        }
    };

    let test = panel.time_slice(panel.t_len() - horizon, horizon);
    let train_part = panel.time_slice(0, panel.t_len() - horizon);
    let table = evaluate(&forecasts, test.values(), train_part.values(), &hierarchy, variant)?;
    print_eval(&table, &args.out)
}

fn historical_shares(panel: &TimeSeriesPanel, hierarchy: &Hierarchy) -> Result<Vec<f64>> {
    let (a, n) = (hierarchy.a(), hierarchy.n());
    let t_len = panel.t_len();
    let mut sums = vec![0.0; n];
    for j in 0..n {
        for t in 0..t_len {
            sums[j] += panel.values().at2(a + j, t);
        }
    }
    if let Some(bad) = sums.iter().find(|s| **s < 0.0) {
        return Err(Error::Data(format!(
            "top-down shares need nonnegative bottom histories, found sum {bad}"
        )));
    }
    let total: f64 = sums.iter().sum();
    if total <= 0.0 {
        return Err(Error::Data("top-down shares undefined: bottom history sums to zero".into()));
    }
    Ok(sums.into_iter().map(|s| s / total).collect())
}

fn bottom_matrix_from_rows(
    path: &Path,
    hierarchy: &Arc<Hierarchy>,
) -> Result<(Tensor, usize)> {
    let rows = read_wide_rows(path)?;
    let (a, n) = (hierarchy.a(), hierarchy.n());
    let mut by_node: Vec<Option<Vec<f64>>> = vec![None; hierarchy.m()];
    let mut width = None;
    for (id, values) in rows {
        let pos = hierarchy
            .position(&id)
            .ok_or_else(|| Error::Data(format!("{}: unknown node id '{id}'", path.display())))?;
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(Error::Data(format!("{}: ragged rows", path.display())))
            }
            _ => {}
        }
        by_node[pos] = Some(values);
    }
    let width = width.ok_or_else(|| Error::Data(format!("{}: no rows", path.display())))?;
    let mut data = Vec::with_capacity(n * width);
    for j in 0..n {
        let row = by_node[a + j].take().ok_or_else(|| {
            Error::Data(format!(
                "{}: missing bottom row '{}'",
                path.display(),
                hierarchy.node_id(a + j)
            ))
        })?;
        data.extend_from_slice(&row);
    }
    Ok((Tensor::from_vec(&[n, width], data), width))
}

fn top_row_from_rows(path: &Path, hierarchy: &Arc<Hierarchy>) -> Result<Tensor> {
    let rows = read_wide_rows(path)?;
    let top_id = hierarchy.node_id(0).to_string();
    for (id, values) in rows {
        if hierarchy.position(&id).is_none() {
            return Err(Error::Data(format!("{}: unknown node id '{id}'", path.display())));
        }
        if id == top_id {
            let w = values.len();
            return Ok(Tensor::from_vec(&[1, w], values));
        }
    }
    Err(Error::Data(format!("{}: missing top row '{top_id}'", path.display())))
}

pub fn run_reconcile(args: &ReconcileArgs) -> Result<()> {
    let hierarchy = Arc::new(load_hierarchy(&args.hierarchy)?);
    let summing: SummingMatrix = summing_matrix(&hierarchy);

    let fs = match args.method.as_str() {
        "bu" => {
            let (bottom, _) = bottom_matrix_from_rows(&args.base, &hierarchy)?;
            hgnn_core::hierarchy::aggregate(&summing, &bottom)?
        }
        "td" => {
            let panel_path = args.panel.as_ref().ok_or_else(|| {
                Error::Config("top-down reconciliation needs --panel for historical shares".into())
            })?;
            let panel = load_panel(panel_path, &hierarchy)?;
            let shares = historical_shares(&panel, &hierarchy)?;
            let top = top_row_from_rows(&args.base, &hierarchy)?;
            reconcile_top_down(&summing, &top, &shares)?
        }
        other => {
            return Err(Error::Config(format!("unknown method '{other}' (expected bu or td)")))
        }
    };

    let labels: Vec<usize> = (0..fs.horizon()).collect();
    let text = hgnn_core::data::panel_to_csv(hierarchy.node_ids(), &fs.full().detach(), &labels);
    write_atomic(&args.out, text.as_bytes())?;
    println!(
        "reconciled ({}) {} series x {} steps -> {}",
        args.method,
        fs.full().shape()[0],
        fs.horizon(),
        args.out.display()
    );
    Ok(())
}

/// Returns whether every check stayed within the threshold.
pub fn run_gradcheck(args: &GradcheckArgs) -> Result<bool> {
    let threshold = args.threshold;
    let mut all_pass = true;

    println!("primitive ops ({} random points each, epsilon 1e-5):", 10);
    for entry in op_gradient_suite(args.seed)? {
        let pass = entry.max_error <= threshold;
        all_pass &= pass;
        println!(
            "  {:<24} max_rel_err {:>12.3e}  {}",
            entry.name,
            entry.max_error,
            if pass { "PASS" } else { "FAIL" }
        );
    }

    let seeds: Vec<u64> = (0..args.seeds).map(|i| args.seed.wrapping_add(i)).collect();
    println!("backbones ({} seeds, tiny configs):", seeds.len());
    for entry in backbone_gradient_suite(&seeds, args.max_coords)? {
        let pass = entry.max_error <= threshold;
        all_pass &= pass;
        println!(
            "  {:<24} max_rel_err {:>12.3e}  {}",
            entry.name,
            entry.max_error,
            if pass { "PASS" } else { "FAIL" }
        );
    }

    if all_pass {
        println!("gradcheck: all checks within {threshold:.0e}");
    } else {
        println!("gradcheck: threshold {threshold:.0e} exceeded");
    }
    Ok(all_pass)
}
