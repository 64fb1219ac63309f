use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ExperimentKind};
use crate::error::{invalid, Error, Result};
use crate::estimators::{fit, BundleInfo, FittedModel, Method, NetShape, Truth};
use crate::metrics::{
    empirical_risk_onestep, empirical_risk_twostep, grid_errors_on, quantile_grid, ErrorReport, GridSpec,
};
use crate::sample::MarkedPointSample;
use crate::sim::{simulate, GroundTruthModel};

/// Largest tolerated fraction of failed fits before a study errors out.
pub const MAX_FAILURE_FRACTION: f64 = 0.2;

/// The three error measures of one fitted model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub eps_l2: f64,
    pub eps_linf: f64,
    pub risk: f64,
}

/// Grid errors against the truth and held-out empirical risk on `fresh`.
pub fn evaluate_fit(
    model: &FittedModel,
    truth: &GroundTruthModel,
    fresh: &MarkedPointSample,
    grid: &GridSpec,
) -> Result<Evaluation> {
    let oracle = Truth(truth);
    let (eps_l2, eps_linf) = grid_errors_on(model, &oracle, grid)?;
    let risk = match model {
        FittedModel::OneStep(m) => empirical_risk_onestep(m, &oracle, fresh)?,
        FittedModel::TwoStep(m) => empirical_risk_twostep(m, &oracle, fresh)?.total(),
    };
    Ok(Evaluation { eps_l2, eps_linf, risk })
}

/// Evaluation sample and grid for one replication.
pub fn evaluation_setup(config: &ExperimentConfig, horizon: f64, replication: usize) -> Result<(MarkedPointSample, GridSpec)> {
    let fresh = simulate(&config.model.build(), horizon, config.eval_seed(replication))?;
    let grid = quantile_grid(&fresh.covariate_draws(), config.grid_intervals)?;
    Ok((fresh, grid))
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Task {
    method: Method,
    horizon: f64,
    replication: usize,
    shape: NetShape,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub method: Method,
    pub horizon: f64,
    pub seed: u64,
    pub shape: NetShape,
    pub error: String,
}

/// Mean errors over the replications of one (method, horizon, shape) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: Method,
    pub horizon: f64,
    pub shape: NetShape,
    pub count: usize,
    pub eps_l2: f64,
    pub eps_linf: f64,
    pub risk: f64,
}

impl AggregateRow {
    pub const CSV_HEADER: &'static str = "method,T,nL,nN,n,eps_l2,eps_linf,risk";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.method.id(),
            self.horizon,
            self.shape.n_layers,
            self.shape.width,
            self.count,
            self.eps_l2,
            self.eps_linf,
            self.risk
        )
    }

    pub fn measure(&self, measure: Measure) -> f64 {
        match measure {
            Measure::L2 => self.eps_l2,
            Measure::Linf => self.eps_linf,
            Measure::Risk => self.risk,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Measure {
    L2,
    Linf,
    Risk,
}

impl Measure {
    pub const ALL: [Measure; 3] = [Measure::L2, Measure::Linf, Measure::Risk];

    pub fn name(self) -> &'static str {
        match self {
            Measure::L2 => "eps_l2",
            Measure::Linf => "eps_linf",
            Measure::Risk => "risk",
        }
    }
}

/// Ordinary least squares line through `(x, y)` with the slope's standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// `None` with fewer than three points.
    pub std_error: Option<f64>,
}

pub fn ols(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(invalid("line fit needs at least two paired points"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(invalid("line fit needs distinct abscissae"));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let std_error = (x.len() > 2).then(|| {
        let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
        (sse / (n - 2.0) / sxx).sqrt()
    });
    Ok(LineFit { slope, intercept, std_error })
}

/// Log-log slope of one measure's means against the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub method: Method,
    pub measure: Measure,
    pub shape: NetShape,
    /// `None` when a mean is not positive or fewer than two horizons remain.
    pub fit: Option<LineFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub rows: Vec<ErrorReport>,
    pub aggregates: Vec<AggregateRow>,
    pub slopes: Vec<SlopeFit>,
    pub failures: Vec<FailureRecord>,
    pub config_hash: String,
}

impl StudyResult {
    pub fn aggregate(&self, method: Method, horizon: f64, shape: NetShape) -> Option<&AggregateRow> {
        self.aggregates.iter().find(|a| a.method == method && a.horizon == horizon && a.shape == shape)
    }

    pub fn slope(&self, method: Method, measure: Measure) -> Option<&SlopeFit> {
        self.slopes.iter().find(|s| s.method == method && s.measure == measure)
    }
}

fn run_task(config: &ExperimentConfig, task: Task, out_dir: &Path) -> Result<ErrorReport> {
    let start = Instant::now();
    let truth = config.model.build();
    let seed = config.train_seed(task.replication);
    let sample = simulate(&truth, task.horizon, seed)?;
    let train = crate::estimators::TrainConfig { seed, ..config.train };
    let model = fit(&sample, task.method, task.shape, &train)?;
    let (fresh, grid) = evaluation_setup(config, task.horizon, task.replication)?;
    let eval = evaluate_fit(&model, &truth, &fresh, &grid)?;
    if config.save_models {
        let dir = out_dir.join("fits").join(format!(
            "{}_T{}_seed{}_L{}_N{}",
            task.method.name(),
            task.horizon,
            seed,
            task.shape.n_layers,
            task.shape.width
        ));
        model.write_bundle(
            &dir,
            BundleInfo { shape: task.shape, train, sample_seed: seed, horizon: task.horizon, model_id: sample.model_id.clone() },
        )?;
    }
    let report = ErrorReport {
        method: task.method,
        horizon: task.horizon,
        seed,
        shape: task.shape,
        eps_l2: eval.eps_l2,
        eps_linf: eval.eps_linf,
        risk: eval.risk,
        wall_s: start.elapsed().as_secs_f64(),
    };
    info!(
        "{} T={} seed={} shape=({}, {}): l2={:.4} linf={:.4} risk={:.5} ({:.1}s)",
        task.method.name(),
        task.horizon,
        seed,
        task.shape.n_layers,
        task.shape.width,
        report.eps_l2,
        report.eps_linf,
        report.risk,
        report.wall_s
    );
    Ok(report)
}

fn sort_key(r: &ErrorReport) -> (Method, u64, u64, NetShape) {
    (r.method, r.horizon.to_bits(), r.seed, r.shape)
}

/// Means per (method, horizon, shape), in sorted key order.
pub fn aggregate_rows(rows: &[ErrorReport]) -> Vec<AggregateRow> {
    let mut cells: BTreeMap<(Method, u64, NetShape), Vec<&ErrorReport>> = BTreeMap::new();
    for r in rows {
        cells.entry((r.method, r.horizon.to_bits(), r.shape)).or_default().push(r);
    }
    cells
        .into_iter()
        .map(|((method, bits, shape), members)| {
            let n = members.len() as f64;
            let mean = |f: fn(&ErrorReport) -> f64| members.iter().map(|r| f(r)).sum::<f64>() / n;
            AggregateRow {
                method,
                horizon: f64::from_bits(bits),
                shape,
                count: members.len(),
                eps_l2: mean(|r| r.eps_l2),
                eps_linf: mean(|r| r.eps_linf),
                risk: mean(|r| r.risk),
            }
        })
        .collect()
}

/// Log-log slopes of every measure against the horizon, per method and shape.
pub fn fit_slopes(aggregates: &[AggregateRow]) -> Vec<SlopeFit> {
    let mut groups: BTreeMap<(Method, NetShape), Vec<&AggregateRow>> = BTreeMap::new();
    for a in aggregates {
        groups.entry((a.method, a.shape)).or_default().push(a);
    }
    let mut out = Vec::new();
    for ((method, shape), members) in groups {
        for measure in Measure::ALL {
            let values: Vec<(f64, f64)> = members.iter().map(|a| (a.horizon, a.measure(measure))).collect();
            let fit = if values.iter().all(|&(_, v)| v > 0.0) {
                let (x, y): (Vec<f64>, Vec<f64>) = values.iter().map(|&(t, v)| (t.ln(), v.ln())).unzip();
                ols(&x, &y).ok()
            } else {
                warn!("{} {}: nonpositive mean, slope undefined", method.name(), measure.name());
                None
            };
            out.push(SlopeFit { method, measure, shape, fit });
        }
    }
    out
}

/// Rows `n_layers`, columns widths, one file per method and measure.
fn write_heatmaps(config: &ExperimentConfig, aggregates: &[AggregateRow], out_dir: &Path) -> Result<()> {
    let horizon = config.horizons[0];
    for &method in &config.methods {
        for measure in Measure::ALL {
            let path = out_dir.join(format!("heatmap_{}_{}.csv", measure.name(), method.name()));
            let mut out = BufWriter::new(File::create(path)?);
            let header: Vec<String> = config.widths.iter().map(|w| w.to_string()).collect();
            writeln!(out, "nL,{}", header.join(","))?;
            for &n_layers in &config.n_layers {
                let cells: Vec<String> = config
                    .widths
                    .iter()
                    .map(|&width| {
                        aggregates
                            .iter()
                            .find(|a| a.method == method && a.horizon == horizon && a.shape == NetShape { n_layers, width })
                            .map_or_else(|| "NA".to_string(), |a| a.measure(measure).to_string())
                    })
                    .collect();
                writeln!(out, "{n_layers},{}", cells.join(","))?;
            }
            out.flush()?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct RunRecord<'a> {
    config_hash: &'a str,
    config: &'a ExperimentConfig,
    tasks: usize,
    completed: usize,
    failures: &'a [FailureRecord],
}

fn write_outputs(config: &ExperimentConfig, result: &StudyResult, tasks: usize, out_dir: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(out_dir.join("results.csv"))?);
    writeln!(out, "{}", ErrorReport::CSV_HEADER)?;
    for r in &result.rows {
        writeln!(out, "{}", r.csv_row())?;
    }
    out.flush()?;

    let mut out = BufWriter::new(File::create(out_dir.join("aggregate.csv"))?);
    writeln!(out, "{}", AggregateRow::CSV_HEADER)?;
    for a in &result.aggregates {
        writeln!(out, "{}", a.csv_row())?;
    }
    out.flush()?;

    if !result.slopes.is_empty() {
        serde_json::to_writer_pretty(File::create(out_dir.join("slopes.json"))?, &result.slopes)?;
    }
    if config.kind == ExperimentKind::Robustness {
        write_heatmaps(config, &result.aggregates, out_dir)?;
    }
    let record = RunRecord {
        config_hash: &result.config_hash,
        config,
        tasks,
        completed: result.rows.len(),
        failures: &result.failures,
    };
    serde_json::to_writer_pretty(File::create(out_dir.join("run.json"))?, &record)?;
    Ok(())
}

/// Builds a pool with `workers` threads (0 = one per core).
pub fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| invalid(format!("cannot start worker pool: {e}")))
}

/// Every (horizon, shape, replication, method) fit of `config`, evaluated
/// and written to `config.out_dir`. Failed fits are recorded and skipped.
pub fn run_study(config: &ExperimentConfig) -> Result<StudyResult> {
    config.validate()?;
    let out_dir = config.out_dir.clone();
    fs::create_dir_all(&out_dir)?;
    let tasks: Vec<Task> = config
        .horizons
        .iter()
        .flat_map(|&horizon| {
            config.shapes().into_iter().flat_map(move |shape| {
                (0..config.replications).flat_map(move |replication| {
                    config.methods.iter().map(move |&method| Task { method, horizon, replication, shape })
                })
            })
        })
        .collect();
    info!("running {} fits with config {}", tasks.len(), config.hash());

    let outcomes: Vec<(Task, Result<ErrorReport>)> = thread_pool(config.workers)?
        .install(|| tasks.par_iter().map(|&task| (task, run_task(config, task, &out_dir))).collect());

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (task, outcome) in outcomes {
        match outcome {
            Ok(row) => rows.push(row),
            Err(e) => {
                warn!("fit failed: {} T={} rep={}: {e}", task.method.name(), task.horizon, task.replication);
                failures.push(FailureRecord {
                    method: task.method,
                    horizon: task.horizon,
                    seed: config.train_seed(task.replication),
                    shape: task.shape,
                    error: e.to_string(),
                });
            }
        }
    }
    rows.sort_by_key(sort_key);
    let aggregates = aggregate_rows(&rows);
    let slopes = if config.kind == ExperimentKind::Convergence && config.horizons.len() >= 2 {
        fit_slopes(&aggregates)
    } else {
        Vec::new()
    };
    let result = StudyResult { rows, aggregates, slopes, failures, config_hash: config.hash() };
    write_outputs(config, &result, tasks.len(), &out_dir)?;

    if result.failures.len() as f64 > MAX_FAILURE_FRACTION * tasks.len() as f64 {
        return Err(Error::StudyFailed { failed: result.failures.len(), total: tasks.len() });
    }
    Ok(result)
}

/// Convergence study across horizons; needs at least three horizons.
pub fn run_convergence_study(config: &ExperimentConfig) -> Result<StudyResult> {
    if config.horizons.len() < 3 {
        return Err(invalid("a convergence study needs at least three horizons"));
    }
    run_study(&ExperimentConfig { kind: ExperimentKind::Convergence, ..config.clone() })
}

/// Shape grid at the first configured horizon.
pub fn run_robustness_grid(config: &ExperimentConfig) -> Result<StudyResult> {
    run_study(&ExperimentConfig {
        kind: ExperimentKind::Robustness,
        horizons: vec![config.horizons[0]],
        ..config.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(method: Method, horizon: f64, seed: u64, l2: f64) -> ErrorReport {
        ErrorReport {
            method,
            horizon,
            seed,
            shape: NetShape::default(),
            eps_l2: l2,
            eps_linf: 2.0 * l2,
            risk: l2 * l2,
            wall_s: 0.0,
        }
    }

    #[test]
    fn ols_recovers_exact_power_law() {
        let t = [1000.0f64, 2000.0, 4000.0, 8000.0, 16000.0];
        let x: Vec<f64> = t.iter().map(|v| v.ln()).collect();
        let y: Vec<f64> = t.iter().map(|v| (3.0 * v.powf(-1.0 / 3.0)).ln()).collect();
        let fit = ols(&x, &y).unwrap();
        assert!((fit.slope + 1.0 / 3.0).abs() < 1e-12);
        assert!(fit.std_error.unwrap() < 1e-12);
        assert!(ols(&x[..1], &y[..1]).is_err());
    }

    #[test]
    fn aggregates_are_means() {
        let rows = vec![
            report(Method::OneStep, 100.0, 0, 0.1),
            report(Method::OneStep, 100.0, 1, 0.3),
            report(Method::TwoStep, 100.0, 0, 0.2),
        ];
        let agg = aggregate_rows(&rows);
        assert_eq!(agg.len(), 2);
        assert_eq!(agg[0].count, 2);
        assert!((agg[0].eps_l2 - 0.2).abs() < 1e-12);
        assert!((agg[0].risk - 0.05).abs() < 1e-12);
        assert_eq!(agg[1].method, Method::TwoStep);
    }

    #[test]
    fn slopes_skip_nonpositive_means() {
        let rows: Vec<ErrorReport> = [100.0, 200.0, 400.0]
            .iter()
            .map(|&t| ErrorReport { risk: -1.0, ..report(Method::OneStep, t, 0, t.powf(-0.5)) })
            .collect();
        let slopes = fit_slopes(&aggregate_rows(&rows));
        let l2 = slopes.iter().find(|s| s.measure == Measure::L2).unwrap();
        assert!((l2.fit.unwrap().slope + 0.5).abs() < 1e-12);
        assert!(slopes.iter().find(|s| s.measure == Measure::Risk).unwrap().fit.is_none());
    }
}
