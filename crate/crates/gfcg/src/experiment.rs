//! End-to-end experiment execution: sample chains, score them, and write the
//! CSV/SVG artifacts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DVector;

use crate::classifier::ClassifierModel;
use crate::config::{apply_axis, ExperimentSpec};
use crate::error::{Error, Result};
use crate::guidance::{BaseMethod, Method};
use crate::metrics::{
    fit_gaussian, frechet_gaussian, per_class_precision, precision, recall_proxy, MetricsReport,
};
use crate::report::{
    render_line_chart, write_diagnostics_csv, write_report_csv, write_samples_csv, write_svg,
    ReportRow, Series,
};
use crate::rng::stream_rng;
use crate::sampler::{run_batch, ChainResult};
use crate::world::{sample_data, MixtureWorld};

/// RNG stream index reserved for evaluation draws so they never collide with
/// sampling chains (chain i uses stream i).
const EVAL_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: Option<PathBuf>,
    pub force: bool,
    pub parallel: bool,
}

fn base_name(base: BaseMethod) -> &'static str {
    match base {
        BaseMethod::Ng => "ng",
        BaseMethod::Cfg => "cfg",
        BaseMethod::Atg => "atg",
        BaseMethod::Cg => "cg",
    }
}

pub fn method_name(method: Method) -> String {
    match method {
        Method::Ng => "ng".into(),
        Method::Cfg => "cfg".into(),
        Method::Atg => "atg".into(),
        Method::Cg => "cg".into(),
        Method::Gfcg => "gfcg".into(),
        Method::GfcgMixed(b) => format!("gfcg_mixed({})", base_name(b)),
        Method::GfcgAdditive(b) => format!("gfcg_additive({})", base_name(b)),
    }
}

fn refuse_overwrite(dir: &Path, files: &[&str], force: bool) -> Result<()> {
    if force {
        return Ok(());
    }
    for f in files {
        let path = dir.join(f);
        if path.exists() {
            return Err(Error::argument(format!(
                "refusing to overwrite {}; pass --force to replace it",
                path.display()
            )));
        }
    }
    Ok(())
}

/// Sample one batch of chains for a validated spec.
pub fn run_chains(spec: &ExperimentSpec, parallel: bool) -> Result<Vec<ChainResult>> {
    spec.validate()?;
    let models = spec.build_models()?;
    let classifier = spec.build_classifier()?;
    let schedule = spec.build_schedule()?;
    run_batch(
        &models,
        classifier.as_ref(),
        &schedule,
        &spec.guidance,
        &spec.chain_settings(),
        spec.class_policy,
        spec.chains,
        spec.base_seed,
        parallel,
    )
}

/// Score a batch against the true world: Precision via the exact Bayes
/// classifier, the Recall proxy via Gaussian fits, and the pooled Fréchet
/// distance against an equal-size fresh real sample.
pub fn evaluate(
    world: &MixtureWorld,
    results: &[ChainResult],
    base_seed: u64,
) -> Result<MetricsReport> {
    if results.is_empty() {
        return Err(Error::argument("no chains to evaluate"));
    }
    let judge = ClassifierModel::new(world, 1.0, 0.0)?;
    let labeled: Vec<(DVector<f64>, usize)> = results
        .iter()
        .map(|r| (r.final_sample.clone(), r.c_des))
        .collect();
    let pooled_precision = precision(&labeled, &judge)?;
    let per_class = per_class_precision(&labeled, &judge)?;
    let nfe_mean =
        results.iter().map(|r| r.nfe_total as f64).sum::<f64>() / results.len() as f64;

    let mut by_class: BTreeMap<usize, Vec<DVector<f64>>> = BTreeMap::new();
    for r in results {
        by_class
            .entry(r.c_des)
            .or_default()
            .push(r.final_sample.clone());
    }

    let mut eval_rng = stream_rng(base_seed, EVAL_STREAM);
    let dim = world.dim();

    // Recall needs a covariance fit per class; skip it when chains are scarce.
    let every_class_covered = by_class.len() == world.class_count()
        && by_class.values().all(|pts| pts.len() >= dim + 2);
    let recall = if every_class_covered {
        let generated: Vec<Vec<DVector<f64>>> =
            (0..world.class_count()).map(|c| by_class[&c].clone()).collect();
        let real: Vec<Vec<DVector<f64>>> = (0..world.class_count())
            .map(|c| sample_data(world, c, generated[c].len(), &mut eval_rng))
            .collect::<Result<_>>()?;
        Some(recall_proxy(&real, &generated)?)
    } else {
        None
    };

    // Pooled Fréchet: class-matched fresh real draws of equal size.
    let mut real_pool = Vec::with_capacity(results.len());
    for (&c, pts) in &by_class {
        real_pool.extend(sample_data(world, c, pts.len(), &mut eval_rng)?);
    }
    let generated_pool: Vec<DVector<f64>> =
        results.iter().map(|r| r.final_sample.clone()).collect();
    let (gm, gc) = fit_gaussian(&generated_pool)?;
    let (rm, rc) = fit_gaussian(&real_pool)?;
    let frechet = frechet_gaussian(&gm, &gc, &rm, &rc)?;

    Ok(MetricsReport {
        precision: pooled_precision,
        recall,
        frechet,
        per_class,
        nfe_mean,
    })
}

fn report_row(spec: &ExperimentSpec, metrics: &MetricsReport, axis_value: Option<f64>) -> ReportRow {
    ReportRow {
        method: method_name(spec.guidance.method),
        axis_value,
        precision: metrics.precision,
        recall: metrics.recall,
        frechet: metrics.frechet,
        nfe_mean: metrics.nfe_mean,
        chains: spec.chains,
        seed: spec.base_seed,
    }
}

fn omega_trace(results: &[ChainResult]) -> Vec<(f64, f64)> {
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for r in results {
        for d in &r.diagnostics {
            let e = sums.entry(d.t).or_insert((0.0, 0));
            e.0 += d.omega;
            e.1 += 1;
        }
    }
    sums.into_iter()
        .map(|(t, (sum, n))| (t as f64, sum / n as f64))
        .collect()
}

/// Run one experiment and, when an output directory is given, write
/// samples.csv, diagnostics.csv, report.csv, and the summary SVGs.
pub fn run_experiment(
    spec: &ExperimentSpec,
    opts: &RunOptions,
) -> Result<(MetricsReport, Vec<ChainResult>)> {
    if let Some(dir) = &opts.out_dir {
        refuse_overwrite(
            dir,
            &["samples.csv", "diagnostics.csv", "report.csv"],
            opts.force,
        )?;
    }
    let results = run_chains(spec, opts.parallel)?;
    let world = spec.build_world()?;
    let metrics = evaluate(&world, &results, spec.base_seed)?;

    if let Some(dir) = &opts.out_dir {
        write_samples_csv(&dir.join("samples.csv"), &results)?;
        write_diagnostics_csv(&dir.join("diagnostics.csv"), &results)?;
        write_report_csv(&dir.join("report.csv"), &[report_row(spec, &metrics, None)])?;

        let class_points: Vec<(f64, f64)> = metrics
            .per_class
            .iter()
            .map(|s| (s.class as f64, s.precision))
            .collect();
        write_svg(
            &dir.join("precision_by_class.svg"),
            &render_line_chart(
                "Precision by desired class",
                "class",
                "precision",
                &[Series {
                    label: "precision".into(),
                    points: class_points,
                }],
            ),
        )?;
        write_svg(
            &dir.join("omega_trace.svg"),
            &render_line_chart(
                "Mean guidance scale per step",
                "t",
                "mean omega",
                &[Series {
                    label: "omega".into(),
                    points: omega_trace(&results),
                }],
            ),
        )?;
    }
    Ok((metrics, results))
}

/// Sweep one numeric axis: one report row per value plus a combined
/// Precision/Fréchet curve.
pub fn run_sweep(
    spec: &ExperimentSpec,
    axis: &str,
    values: &[f64],
    opts: &RunOptions,
) -> Result<Vec<ReportRow>> {
    if values.is_empty() {
        return Err(Error::argument("sweep requires at least one axis value"));
    }
    if let Some(dir) = &opts.out_dir {
        refuse_overwrite(dir, &["report.csv", "sweep.svg"], opts.force)?;
    }
    let mut rows = Vec::with_capacity(values.len());
    for &v in values {
        let mut point = spec.clone();
        apply_axis(&mut point, axis, v)?;
        let results = run_chains(&point, opts.parallel)?;
        let world = point.build_world()?;
        let metrics = evaluate(&world, &results, point.base_seed)?;
        rows.push(report_row(&point, &metrics, Some(v)));
    }
    if let Some(dir) = &opts.out_dir {
        write_report_csv(&dir.join("report.csv"), &rows)?;
        let precision_pts: Vec<(f64, f64)> = rows
            .iter()
            .map(|r| (r.axis_value.unwrap(), r.precision))
            .collect();
        let frechet_pts: Vec<(f64, f64)> = rows
            .iter()
            .map(|r| (r.axis_value.unwrap(), r.frechet))
            .collect();
        write_svg(
            &dir.join("sweep.svg"),
            &render_line_chart(
                &format!("Sweep over {axis}"),
                axis,
                "metric",
                &[
                    Series {
                        label: "precision".into(),
                        points: precision_pts,
                    },
                    Series {
                        label: "frechet".into(),
                        points: frechet_pts,
                    },
                ],
            ),
        )?;
    }
    Ok(rows)
}

/// Recompute the report for an existing samples.csv (the `metrics`
/// subcommand); diagnostics are not needed.
pub fn metrics_from_samples_csv(spec: &ExperimentSpec, samples_csv: &str) -> Result<MetricsReport> {
    let world = spec.build_world()?;
    let mut lines = samples_csv.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::argument("samples.csv is empty"))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"chain") || cols.last() != Some(&"nfe") || cols.len() < 4 {
        return Err(Error::argument(
            "samples.csv header must be chain,c_des,x_1..x_d,nfe",
        ));
    }
    let dim = cols.len() - 3;
    let mut results = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::argument(format!(
                "samples.csv row {} has {} fields, expected {}",
                i + 2,
                fields.len(),
                cols.len()
            )));
        }
        let parse_err = |what: &str| {
            Error::argument(format!("samples.csv row {}: invalid {what}", i + 2))
        };
        let c_des: usize = fields[1].parse().map_err(|_| parse_err("c_des"))?;
        let mut x = DVector::zeros(dim);
        for d in 0..dim {
            x[d] = fields[2 + d].parse().map_err(|_| parse_err("coordinate"))?;
        }
        let nfe: usize = fields[dim + 2].parse().map_err(|_| parse_err("nfe"))?;
        results.push(ChainResult {
            final_sample: x,
            trajectory: None,
            diagnostics: Vec::new(),
            nfe_total: nfe,
            seed: 0,
            c_des,
        });
    }
    evaluate(&world, &results, spec.base_seed)
}
