use std::path::Path;

use layerwise_uq::evaluation::{scored, CurveReport};
use layerwise_uq::experiment::{
    final_scored, format_final_table, format_sweep_table, sweep_scored, test_scores, FinalReport,
    ScoredQuerySet, SweepConfig, SweepReport,
};
use layerwise_uq::export::{write_features_csv, write_pbat_jsonl};
use layerwise_uq::format::{load_dataset, save_dataset};
use layerwise_uq::synthetic::{error_rate, generate_synthetic, SyntheticSpec};
use layerwise_uq::{Dataset, DatasetKind, TrainingActivationRepository};
use serde::Serialize;

use crate::args::{
    BuildTarArgs, EvaluateArgs, ExperimentArgs, MetricsArgs, ReportArgs, ScoreArgs, SweepArgs,
    SynthArgs,
};
use crate::config;
use crate::error::{CliError, CliResult};
use crate::manifest::ManifestBuilder;
use crate::output::{
    create, ensure_dir, stem, write_json, write_pr_csv, write_roc_csv, write_text,
};

pub const SWEEP_JSON: &str = "sweep.json";
pub const FINAL_JSON: &str = "final.json";
pub const SPLITS_JSON: &str = "splits.json";

fn load_tar(path: &Path) -> CliResult<TrainingActivationRepository> {
    Ok(TrainingActivationRepository::load(path)?)
}

fn load_queries(path: &Path) -> CliResult<Dataset> {
    let ds = load_dataset(path)?;
    ds.expect_kind(DatasetKind::Queryset)?;
    Ok(ds)
}

pub fn build_tar(args: &BuildTarArgs) -> CliResult<()> {
    let ds = load_dataset(&args.input)?;
    let tar = TrainingActivationRepository::from_dataset(&ds)?;
    tar.save(&args.output)?;
    let dims = tar.header().dims();
    println!(
        "N={} L={} C={} dims=[{}]",
        tar.len(),
        tar.num_layers(),
        tar.num_classes(),
        dims.iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(",")
    );
    Ok(())
}

pub fn score(args: &ScoreArgs) -> CliResult<()> {
    let manifest = ManifestBuilder::start("score", &[&args.tar, &args.queries]);
    let tar = load_tar(&args.tar)?;
    let queries = load_queries(&args.queries)?;
    let set = ScoredQuerySet::compute(&tar, &queries, args.k, args.distance)?;
    ensure_dir(&args.out)?;
    let pbat_path = args.out.join("pbat.jsonl");
    write_pbat_jsonl(create(&pbat_path)?, &set.pbats(args.k)?)?;
    let features = set.features(args.k, args.k)?;
    write_features_csv(create(&args.out.join("features.csv"))?, &features)?;
    #[derive(Serialize)]
    struct ScoreConfig {
        k: usize,
        distance: layerwise_uq::DistanceKind,
    }
    manifest
        .config(&ScoreConfig {
            k: args.k,
            distance: args.distance,
        })?
        .finish(&args.out, &["pbat.jsonl", "features.csv"])?;
    let wrong = features.iter().filter(|f| !f.correct).count();
    println!(
        "scored {} queries against {} training samples (k={}, {}); {} mispredicted",
        features.len(),
        tar.len(),
        args.k,
        args.distance,
        wrong
    );
    Ok(())
}

/// Raw single-feature detector: `sign * value` is read as a correctness score.
struct RawFeature {
    name: String,
    higher_is_correct: bool,
    values: Vec<f64>,
}

#[derive(Serialize)]
struct FeatureMetrics {
    feature: String,
    orientation: &'static str,
    auroc: f64,
    aupr_pos: f64,
    aupr_neg: f64,
    n_pos: usize,
    n_neg: usize,
}

fn read_features_csv(path: &Path) -> CliResult<(Vec<RawFeature>, Vec<bool>)> {
    let bad = |message: String| CliError::Input {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.len() < 4 || headers[..3] != ["query_id", "correct", "sm"] {
        return Err(bad(
            "expected a features.csv header starting query_id,correct,sm".into(),
        ));
    }
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); headers.len() - 2];
    let mut correct = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let field = |i: usize| -> CliResult<f64> {
            record[i].parse::<f64>().map_err(|_| {
                bad(format!(
                    "row {}: column {} is not a number",
                    line + 2,
                    headers[i]
                ))
            })
        };
        correct.push(match &record[1] {
            "1" => true,
            "0" => false,
            other => {
                return Err(bad(format!(
                    "row {}: correct must be 0 or 1, got {other:?}",
                    line + 2
                )))
            }
        });
        for (c, col) in columns.iter_mut().enumerate() {
            col.push(field(c + 2)?);
        }
    }
    let mut features: Vec<RawFeature> = headers[2..]
        .iter()
        .zip(columns)
        .map(|(name, values)| RawFeature {
            higher_is_correct: name == "sm",
            name: name.clone(),
            values,
        })
        .collect();
    let sum_of = |prefix: &str| -> Vec<f64> {
        let cols: Vec<&RawFeature> = features
            .iter()
            .filter(|f| f.name.starts_with(prefix))
            .collect();
        (0..correct.len())
            .map(|i| cols.iter().map(|f| f.values[i]).sum())
            .collect()
    };
    let dc_count = sum_of("dc_");
    let lu_sum = sum_of("lu_");
    if features.iter().any(|f| f.name.starts_with("dc_")) {
        features.push(RawFeature {
            name: "dc_count".into(),
            higher_is_correct: false,
            values: dc_count,
        });
    }
    features.push(RawFeature {
        name: "lu_sum".into(),
        higher_is_correct: false,
        values: lu_sum,
    });
    Ok((features, correct))
}

pub fn metrics(args: &MetricsArgs) -> CliResult<()> {
    let manifest = ManifestBuilder::start("metrics", &[&args.features]);
    let (features, correct) = read_features_csv(&args.features)?;
    ensure_dir(&args.out)?;
    let mut rows = Vec::new();
    let mut outputs = vec!["metrics.json".to_string()];
    for f in &features {
        let scores: Vec<f64> = f
            .values
            .iter()
            .map(|&v| if f.higher_is_correct { v } else { -v })
            .collect();
        let report = CurveReport::evaluate_with_curves(&scored(&scores, &correct))?;
        if matches!(f.name.as_str(), "sm" | "dc_count" | "lu_sum") {
            let roc = format!("{}_roc.csv", f.name);
            let pr = format!("{}_pr.csv", f.name);
            write_roc_csv(&args.out.join(&roc), &report.roc)?;
            write_pr_csv(&args.out.join(&pr), &report.pr_pos)?;
            outputs.extend([roc, pr]);
        }
        rows.push(FeatureMetrics {
            feature: f.name.clone(),
            orientation: if f.higher_is_correct {
                "higher_is_correct"
            } else {
                "lower_is_correct"
            },
            auroc: report.auroc,
            aupr_pos: report.aupr_pos,
            aupr_neg: report.aupr_neg,
            n_pos: report.n_pos,
            n_neg: report.n_neg,
        });
    }
    write_json(&args.out.join("metrics.json"), &rows)?;
    let names: Vec<&str> = outputs.iter().map(String::as_str).collect();
    manifest.finish(&args.out, &names)?;
    println!(
        "{:<10}{:>9}{:>9}{:>9}",
        "Feature", "AUROC", "AUPR+", "AUPR-"
    );
    for r in &rows {
        println!(
            "{:<10}{:>9.2}{:>9.2}{:>9.2}",
            r.feature,
            100.0 * r.auroc,
            100.0 * r.aupr_pos,
            100.0 * r.aupr_neg
        );
    }
    Ok(())
}

fn resolve_config(args: &ExperimentArgs) -> CliResult<SweepConfig> {
    let mut cfg: SweepConfig = match &args.config {
        Some(path) => config::load(path)?,
        None => SweepConfig::default(),
    };
    if let Some(k) = &args.k_values {
        cfg.k_values = k.clone();
    }
    if let Some(d) = args.distance {
        cfg.distance = d;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(m) = args.selection_metric {
        cfg.selection_metric = m.into();
    }
    Ok(cfg)
}

fn write_sweep(dir: &Path, report: &SweepReport) -> CliResult<()> {
    write_json(&dir.join(SWEEP_JSON), report)?;
    write_text(&dir.join("sweep.txt"), &format_sweep_table(report))?;
    write_json(&dir.join(SPLITS_JSON), &report.split)
}

pub fn sweep(args: &SweepArgs) -> CliResult<()> {
    let a = &args.common;
    let cfg = resolve_config(a)?;
    let manifest = ManifestBuilder::start("sweep", &inputs(a))
        .seed(cfg.seed)
        .config(&cfg)?;
    let tar = load_tar(&a.tar)?;
    cfg.validate(tar.len())?;
    let queries = load_queries(&a.queries)?;
    let k_max = cfg.k_values.iter().copied().max().unwrap_or(1);
    let set = ScoredQuerySet::compute(&tar, &queries, k_max, cfg.distance)?;
    let report = sweep_scored(&set, &cfg)?;
    ensure_dir(&a.out)?;
    write_sweep(&a.out, &report)?;
    manifest.finish(&a.out, &[SWEEP_JSON, "sweep.txt", SPLITS_JSON])?;
    print!("{}", format_sweep_table(&report));
    Ok(())
}

fn inputs(a: &ExperimentArgs) -> Vec<&Path> {
    let mut v: Vec<&Path> = vec![&a.tar, &a.queries];
    if let Some(c) = &a.config {
        v.push(c);
    }
    v
}

pub fn evaluate(args: &EvaluateArgs) -> CliResult<()> {
    let a = &args.common;
    let cfg = resolve_config(a)?;
    let mut input_paths = inputs(a);
    if let Some(s) = &args.sweep {
        input_paths.push(s);
    }
    let manifest = ManifestBuilder::start("evaluate", &input_paths)
        .seed(cfg.seed)
        .config(&cfg)?;
    let tar = load_tar(&a.tar)?;
    let queries = load_queries(&a.queries)?;
    ensure_dir(&a.out)?;
    let mut outputs: Vec<String> = Vec::new();

    let (k_dc, k_lu, set) = match (args.k_dc, args.k_lu, &args.sweep) {
        (Some(k_dc), Some(k_lu), _) => {
            let set = ScoredQuerySet::compute(&tar, &queries, k_dc.max(k_lu), cfg.distance)?;
            (k_dc, k_lu, set)
        }
        (_, _, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let prior: SweepReport = serde_json::from_str(&text).map_err(|e| CliError::Config {
                path: path.clone(),
                message: e.to_string(),
            })?;
            if prior.distance != cfg.distance || prior.seed != cfg.seed {
                return Err(CliError::Usage(format!(
                    "{} was produced with distance {} and seed {}, but this run uses {} and {}",
                    path.display(),
                    prior.distance,
                    prior.seed,
                    cfg.distance,
                    cfg.seed
                )));
            }
            let set = ScoredQuerySet::compute(
                &tar,
                &queries,
                prior.best_k.dc.max(prior.best_k.lu),
                cfg.distance,
            )?;
            (prior.best_k.dc, prior.best_k.lu, set)
        }
        _ => {
            cfg.validate(tar.len())?;
            let k_max = cfg.k_values.iter().copied().max().unwrap_or(1);
            let set = ScoredQuerySet::compute(&tar, &queries, k_max, cfg.distance)?;
            let report = sweep_scored(&set, &cfg)?;
            write_sweep(&a.out, &report)?;
            outputs.extend([SWEEP_JSON.into(), "sweep.txt".into()]);
            print!("{}", format_sweep_table(&report));
            (report.best_k.dc, report.best_k.lu, set)
        }
    };

    let report = final_scored(&set, k_dc, k_lu, &cfg)?;
    write_final(&a.out, &report, &set, &cfg, &mut outputs)?;
    let names: Vec<&str> = outputs.iter().map(String::as_str).collect();
    manifest.finish(&a.out, &names)?;
    print!("{}", format_final_table(&report));
    Ok(())
}

fn write_final(
    dir: &Path,
    report: &FinalReport,
    set: &ScoredQuerySet,
    cfg: &SweepConfig,
    outputs: &mut Vec<String>,
) -> CliResult<()> {
    write_json(&dir.join(FINAL_JSON), report)?;
    write_text(&dir.join("final.txt"), &format_final_table(report))?;
    write_json(&dir.join(SPLITS_JSON), &report.split)?;
    outputs.extend([FINAL_JSON.into(), "final.txt".into(), SPLITS_JSON.into()]);
    for m in &report.models {
        let Some(model) = &m.model else { continue };
        let (scores, targets) = test_scores(set, report.k_dc, report.k_lu, cfg, model)?;
        let curves = CurveReport::evaluate_with_curves(&scored(&scores, &targets))?;
        let roc = format!("{}_roc.csv", stem(&m.name));
        let pr = format!("{}_pr.csv", stem(&m.name));
        write_roc_csv(&dir.join(&roc), &curves.roc)?;
        write_pr_csv(&dir.join(&pr), &curves.pr_pos)?;
        outputs.extend([roc, pr]);
    }
    Ok(())
}

pub fn synth(args: &SynthArgs) -> CliResult<()> {
    let mut spec: SyntheticSpec = match &args.config {
        Some(path) => config::load(path)?,
        None => SyntheticSpec::benchmark(5000, 2500, 0),
    };
    if let Some(n) = args.n_train {
        spec.n_train = n;
    }
    if let Some(n) = args.n_query {
        spec.n_query = n;
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    let input_paths: Vec<&Path> = args.config.iter().map(|p| p.as_path()).collect();
    let manifest = ManifestBuilder::start("synth", &input_paths)
        .seed(spec.seed)
        .config(&spec)?;
    let (repo, queries) = generate_synthetic(&spec)?;
    ensure_dir(&args.out)?;
    save_dataset(args.out.join("repository.tard"), &repo)?;
    save_dataset(args.out.join("queryset.tard"), &queries)?;
    manifest.finish(&args.out, &["repository.tard", "queryset.tard"])?;
    println!(
        "repository N={} queryset N={} L={} C={}; {:.2}% of simulated predictions wrong",
        repo.len(),
        queries.len(),
        spec.num_layers(),
        spec.num_classes,
        100.0 * error_rate(&queries)
    );
    Ok(())
}

pub fn report(args: &ReportArgs) -> CliResult<()> {
    let mut found = false;
    let sweep_path = args.run.join(SWEEP_JSON);
    if sweep_path.exists() {
        let r: SweepReport = read_json(&sweep_path)?;
        print!("{}", format_sweep_table(&r));
        found = true;
    }
    let final_path = args.run.join(FINAL_JSON);
    if final_path.exists() {
        let r: FinalReport = read_json(&final_path)?;
        if found {
            println!();
        }
        print!("{}", format_final_table(&r));
        println!(
            "mean decision changes per test query: {:.3} (of {} transitions)",
            r.mean_dc_count_test, r.dc_features
        );
        found = true;
    }
    if !found {
        return Err(CliError::Input {
            path: args.run.clone(),
            message: format!("no {SWEEP_JSON} or {FINAL_JSON} in run directory"),
        });
    }
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
