use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use cnl_core::ingest::{generate_synthetic, load_bundle, parse_musae, write_bundle, MusaeOptions, SyntheticSpec};
use cnl_core::train::{
    cross_validate, domain_shift_eval, evaluate, holdout, run_ablations, sensitivity_sweep, train,
    Ablation, CvReport, DomainResult, MetricReport, PipelineCounters,
};
use cnl_core::{GraphBundle, ModelParams, Rng, RunConfig};
use serde::Serialize;

use crate::error::CliError;
use crate::output::{write_edge_scores, epochs_csv, shift_csv, sweep_csv, OutDir};
use crate::svg::{Chart, Series};
use crate::{BundleArg, Command, Common};

/// Defaults, then `--config`, then each `--set`, then `--seed`/`--threads`.
pub fn effective_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        cfg.apply_file_text(&text)?;
    }
    for item in &common.overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{item}`")))?;
        cfg.set(key.trim(), value.trim())?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = common.threads {
        cfg.threads = threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load(input: &BundleArg) -> Result<GraphBundle, CliError> {
    let bundle = if input.musae {
        parse_musae(&input.bundle, &MusaeOptions::default())?
    } else {
        load_bundle(&input.bundle)?
    };
    log::info!(
        "loaded {}: {} nodes, {} edges, {} features, {} classes",
        input.bundle.display(),
        bundle.num_nodes(),
        bundle.num_edges(),
        bundle.feature_dim(),
        bundle.class_count()
    );
    Ok(bundle)
}

fn prepare(common: &Common) -> Result<(RunConfig, OutDir), CliError> {
    let cfg = effective_config(common)?;
    let out = OutDir::create(&common.out)?;
    out.write("config_effective.json", &(cfg.to_json() + "\n"))?;
    Ok((cfg, out))
}

fn print_folds(cv: &CvReport) {
    for f in &cv.folds {
        println!("fold={} f1={:.4}", f.fold + 1, f.report.macro_f1);
    }
}

pub fn run(command: Command, common: &Common) -> Result<(), CliError> {
    let started = Instant::now();
    let result = match command {
        Command::Validate { input } => validate(&input),
        Command::Synth {
            nodes,
            groups,
            spurious_train_corr,
            spurious_test_corr,
        } => {
            let defaults = SyntheticSpec::default();
            let spec = SyntheticSpec {
                num_nodes: nodes,
                num_groups: groups,
                spurious_train_corr,
                spurious_test_corr,
                seed: common.seed.unwrap_or(defaults.seed),
                ..defaults
            };
            synth(&spec, common)
        }
        Command::Train { input, dump_edge_scores } => train_cmd(&input, dump_edge_scores, common),
        Command::Cv { input } => cv(&input, common),
        Command::Ablate { input, variants } => ablate(&input, &variants, common),
        Command::Sweep { input, taus } => sweep(&input, &taus, common),
        Command::Shift { input, domains } => shift(&input, &domains, common),
        Command::DumpScores { input, checkpoint } => dump_scores(&input, &checkpoint, common),
    };
    log::info!("finished in {:.2}s", started.elapsed().as_secs_f64());
    result
}

fn validate(input: &BundleArg) -> Result<(), CliError> {
    let b = load(input)?;
    println!(
        "nodes={} edges={} features={} classes={} weighted={}",
        b.num_nodes(),
        b.num_edges(),
        b.feature_dim(),
        b.class_count(),
        b.edge_weights().is_some()
    );
    Ok(())
}

fn synth(spec: &SyntheticSpec, common: &Common) -> Result<(), CliError> {
    let out = OutDir::create(&common.out)?;
    let data = generate_synthetic(spec)?;
    write_bundle(&data.train, &out.path("train"), "synthetic")?;
    write_bundle(&data.test, &out.path("test"), "synthetic")?;
    out.write_json("synthetic_spec.json", spec)?;
    println!(
        "train={} test={} nodes={} edges_train={} edges_test={}",
        out.path("train").display(),
        out.path("test").display(),
        data.train.num_nodes(),
        data.train.num_edges(),
        data.test.num_edges()
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainMetrics<'a> {
    train_size: usize,
    val_size: usize,
    best_epoch: usize,
    epochs_run: usize,
    stopped_early: bool,
    training: MetricReport,
    validation: Option<MetricReport>,
    counters: &'a PipelineCounters,
}

fn train_cmd(input: &BundleArg, dump_edge_scores: bool, common: &Common) -> Result<(), CliError> {
    let (cfg, out) = prepare(common)?;
    let bundle = load(input)?;
    let all: Vec<usize> = (0..bundle.num_nodes()).collect();
    let (train_nodes, val_nodes) = holdout(&all, cfg.val_fraction, &mut Rng::new(cfg.seed).split_named("holdout"));
    let outcome = train(&bundle, &train_nodes, &val_nodes, &cfg)?;
    let training = evaluate(&outcome.params, &bundle, &train_nodes, &cfg)?;
    let validation = if val_nodes.is_empty() {
        None
    } else {
        Some(evaluate(&outcome.params, &bundle, &val_nodes, &cfg)?)
    };
    let ckpt = out.path("model.ckpt");
    outcome.params.save(&ckpt)?;
    out.write("epochs.csv", &epochs_csv(&[(None, &outcome.log)]))?;
    out.write_json(
        "metrics.json",
        &TrainMetrics {
            train_size: train_nodes.len(),
            val_size: val_nodes.len(),
            best_epoch: outcome.best_epoch,
            epochs_run: outcome.log.len(),
            stopped_early: outcome.stopped_early,
            training,
            validation: validation.clone(),
            counters: &outcome.counters,
        },
    )?;
    if dump_edge_scores {
        write_edge_scores(&out, &bundle, &outcome.params, &cfg)?;
    }
    println!(
        "epochs={} best_epoch={} val_f1={}",
        outcome.log.len(),
        outcome.best_epoch,
        validation.map_or("n/a".to_string(), |r| format!("{:.4}", r.macro_f1))
    );
    Ok(())
}

fn cv(input: &BundleArg, common: &Common) -> Result<(), CliError> {
    let (cfg, out) = prepare(common)?;
    let bundle = load(input)?;
    let report = cross_validate(&bundle, &cfg)?;
    print_folds(&report);
    let logs: Vec<(Option<usize>, &[_])> = report.folds.iter().map(|f| (Some(f.fold + 1), f.log.as_slice())).collect();
    out.write("epochs.csv", &epochs_csv(&logs))?;
    out.write_json("metrics.json", &report)?;
    println!("f1_mean={:.4} f1_std={:.4}", report.f1_mean, report.f1_std);
    Ok(())
}

fn ablate(input: &BundleArg, variants: &[String], common: &Common) -> Result<(), CliError> {
    let (cfg, out) = prepare(common)?;
    let parsed = variants
        .iter()
        .map(|v| v.parse::<Ablation>().map_err(|e| CliError::Usage(format!("--variants: {e}"))))
        .collect::<Result<Vec<_>, _>>()?;
    let bundle = load(input)?;
    let reports = run_ablations(&bundle, &cfg, &parsed, true)?;
    let mut table = String::from("variant,f1_mean,f1_std\n");
    for r in &reports {
        println!("variant={}", r.variant);
        print_folds(&r.cv);
        println!("variant={} f1_mean={:.4} f1_std={:.4}", r.variant, r.cv.f1_mean, r.cv.f1_std);
        table.push_str(&format!("{},{},{}\n", r.variant, r.cv.f1_mean, r.cv.f1_std));
    }
    out.write("ablation.csv", &table)?;
    out.write_json("metrics.json", &reports)?;
    Ok(())
}

fn sweep(input: &BundleArg, taus: &[f64], common: &Common) -> Result<(), CliError> {
    let (cfg, out) = prepare(common)?;
    if let Some(bad) = taus.iter().find(|t| !(0.0..1.0).contains(*t)) {
        return Err(CliError::Usage(format!("--taus: {bad} is outside [0, 1)")));
    }
    let bundle = load(input)?;
    let report = sensitivity_sweep(&bundle, &cfg, taus)?;
    for (row, cv) in report.rows.iter().zip(&report.reports) {
        println!("tau={}", row.tau);
        print_folds(cv);
        println!(
            "tau={} f1_mean={:.4} f1_std={:.4} delta={:+.4}",
            row.tau, row.f1_mean, row.f1_std, row.delta
        );
    }
    out.write("sweep.csv", &sweep_csv(&report.rows))?;
    let chart = Chart {
        title: "Sensitivity to the edge drop rate",
        x_label: "edge drop rate",
        y_label: "F1",
        x_ticks: report.rows.iter().map(|r| (r.tau, r.tau.to_string())).collect(),
        series: vec![Series {
            name: "F1 mean".into(),
            points: report.rows.iter().map(|r| (r.tau, r.f1_mean)).collect(),
            errors: Some(report.rows.iter().map(|r| r.f1_std).collect()),
        }],
    };
    out.write("sweep.svg", &chart.render())?;
    out.write_json("metrics.json", &report)?;
    println!("max_abs_delta={:.4}", report.max_abs_delta());
    Ok(())
}

#[derive(Serialize)]
struct ShiftMetrics<'a> {
    domains: &'a [DomainResult],
    best_epoch: usize,
    epochs_run: usize,
    counters: &'a PipelineCounters,
}

fn parse_domain(item: &str) -> Result<(String, PathBuf), CliError> {
    match item.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        _ => Err(CliError::Usage(format!("--domain expects NAME=PATH, got `{item}`"))),
    }
}

fn shift(input: &BundleArg, domains: &[String], common: &Common) -> Result<(), CliError> {
    let (cfg, out) = prepare(common)?;
    let specs = domains.iter().map(|d| parse_domain(d)).collect::<Result<Vec<_>, _>>()?;
    let source = load(input)?;
    let mut bundles = Vec::with_capacity(specs.len());
    for (name, path) in specs {
        let arg = BundleArg {
            bundle: path,
            musae: input.musae,
        };
        bundles.push((name, load(&arg)?));
    }
    let mut tests: Vec<(String, &GraphBundle)> = vec![("source".to_string(), &source)];
    tests.extend(bundles.iter().map(|(n, b)| (n.clone(), b)));
    let report = domain_shift_eval(&source, &tests, &cfg)?;
    for d in &report.domains {
        println!(
            "domain={} precision={:.4} recall={:.4} f1={:.4}",
            d.domain, d.report.macro_precision, d.report.macro_recall, d.report.macro_f1
        );
    }
    out.write("shift.csv", &shift_csv(&report.domains))?;
    out.write("epochs.csv", &epochs_csv(&[(None, &report.training.log)]))?;
    let xs: Vec<f64> = (0..report.domains.len()).map(|i| i as f64).collect();
    let series = |name: &str, get: fn(&MetricReport) -> f64| Series {
        name: name.into(),
        points: xs.iter().zip(&report.domains).map(|(&x, d)| (x, get(&d.report))).collect(),
        errors: None,
    };
    let chart = Chart {
        title: "Performance under domain shift",
        x_label: "domain",
        y_label: "macro score",
        x_ticks: xs.iter().zip(&report.domains).map(|(&x, d)| (x, d.domain.clone())).collect(),
        series: vec![
            series("precision", |r| r.macro_precision),
            series("recall", |r| r.macro_recall),
            series("F1", |r| r.macro_f1),
        ],
    };
    out.write("shift.svg", &chart.render())?;
    out.write_json(
        "metrics.json",
        &ShiftMetrics {
            domains: &report.domains,
            best_epoch: report.training.best_epoch,
            epochs_run: report.training.log.len(),
            counters: &report.training.counters,
        },
    )?;
    Ok(())
}

fn dump_scores(input: &BundleArg, checkpoint: &Path, common: &Common) -> Result<(), CliError> {
    let (cfg, out) = prepare(common)?;
    let bundle = load(input)?;
    let params = ModelParams::load(checkpoint)?;
    let path = write_edge_scores(&out, &bundle, &params, &cfg)?;
    println!("edges={} scores={}", bundle.num_edges(), path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn domain_arguments_need_a_name_and_a_path() {
        assert_eq!(parse_domain("test=a/b").unwrap(), ("test".to_string(), PathBuf::from("a/b")));
        assert!(parse_domain("a/b").is_err());
        assert!(parse_domain("=a/b").is_err());
    }
}
