use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use log::info;
use ndarray::{s, Array2};

use super::config::ExperimentConfig;
use super::study::{evaluate_fit, evaluation_setup};
use crate::error::{invalid, Result};
use crate::estimators::{fit, BundleInfo, FittedModel, JointPredictor, NetShape, OneStepPredictor, TrainConfig, Truth, TwoStepPredictor};
use crate::metrics::{quantile, ErrorReport};
use crate::sample::MarkedPointSample;
use crate::sim::{simulate, GroundTruthModel};

/// Quantile levels of the two conditioning covariates, one panel per pair.
pub const PANEL_LEVELS: [f64; 4] = [0.2, 0.4, 0.6, 0.8];
/// Points per panel curve.
pub const CURVE_POINTS: usize = 101;

#[derive(Debug, Clone)]
pub struct SingleFit {
    pub models: Vec<FittedModel>,
    pub reports: Vec<ErrorReport>,
}

/// Panel inputs: `x0` sweeps its 1%-99% quantile range while `x1` and `y`
/// sit at their `alpha` and `beta` quantiles. Rows are
/// `(alpha, beta, x0, x1, y)`, panels in row-major `(alpha, beta)` order.
pub fn panel_points(sample: &MarkedPointSample) -> Result<Array2<f64>> {
    let draws = sample.covariate_draws();
    if draws.len() != 3 || draws[0].is_empty() {
        return Err(invalid("panel curves need covariates (x0, x1, y)"));
    }
    let lo = quantile(&draws[0], 0.01);
    let hi = quantile(&draws[0], 0.99);
    let mut out = Array2::zeros((PANEL_LEVELS.len().pow(2) * CURVE_POINTS, 5));
    let mut r = 0;
    for alpha in PANEL_LEVELS {
        let x1 = quantile(&draws[1], alpha);
        for beta in PANEL_LEVELS {
            let y = quantile(&draws[2], beta);
            for g in 0..CURVE_POINTS {
                let x0 = lo + g as f64 * (hi - lo) / (CURVE_POINTS - 1) as f64;
                out.row_mut(r).assign(&ndarray::arr1(&[alpha, beta, x0, x1, y]));
                r += 1;
            }
        }
    }
    Ok(out)
}

fn write_table(path: &Path, header: &[String], points: &Array2<f64>, columns: &[Array2<f64>]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "alpha,beta,x0,x1,y,{}", header.join(","))?;
    for r in 0..points.nrows() {
        let mut fields: Vec<String> = points.row(r).iter().map(|v| v.to_string()).collect();
        for block in columns {
            fields.extend(block.row(r).iter().map(|v| v.to_string()));
        }
        writeln!(out, "{}", fields.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Learned and true log-ratio functions and class probabilities on the
/// 4 x 4 panel layout.
pub fn write_function_curves(model: &FittedModel, truth: &GroundTruthModel, points: &Array2<f64>, dir: &Path) -> Result<()> {
    let features = points.slice(s![.., 2..]).to_owned();
    let oracle = Truth(truth);
    let name = model.method().name();
    let (header, blocks) = match model {
        FittedModel::OneStep(m) => {
            let hat = m.logits(features.view());
            let exact = oracle.logits(features.view());
            let header = (1..hat.ncols() + 1)
                .flat_map(|c| [format!("hat_l{c}"), format!("true_l{c}")])
                .collect::<Vec<_>>();
            (header, interleave(&hat, &exact))
        }
        FittedModel::TwoStep(m) => {
            let x = features.slice(s![.., 0..2]);
            let y = features.slice(s![.., 2..3]);
            let mut header = Vec::new();
            let hat_t = m.type_logits(x);
            let exact_t = oracle.type_logits(x);
            header.extend((1..hat_t.ncols() + 1).flat_map(|i| [format!("hat_type{i}"), format!("true_type{i}")]));
            let mut blocks = interleave(&hat_t, &exact_t);
            for i in 0..m.n_types() {
                header.extend([format!("hat_mark{i}"), format!("true_mark{i}")]);
                blocks.extend(interleave(&m.mark_logits(i, y), &oracle.mark_logits(i, y)));
            }
            (header, blocks)
        }
    };
    write_table(&dir.join(format!("functions_{name}.csv")), &header, points, &blocks)?;

    let hat = model.joint_probs(features.view());
    let exact = oracle.joint_probs(features.view());
    let header: Vec<String> = (0..hat.ncols()).flat_map(|c| [format!("hat_p{c}"), format!("true_p{c}")]).collect();
    write_table(&dir.join(format!("probabilities_{name}.csv")), &header, points, &interleave(&hat, &exact))
}

/// Column blocks `hat_0, true_0, hat_1, true_1, ...`.
fn interleave(hat: &Array2<f64>, exact: &Array2<f64>) -> Vec<Array2<f64>> {
    (0..hat.ncols())
        .flat_map(|c| [hat.slice(s![.., c..c + 1]).to_owned(), exact.slice(s![.., c..c + 1]).to_owned()])
        .collect()
}

/// One sample at the first horizon and `base_seed`, every configured method
/// fitted with the first shape, evaluated, and written out with curves.
pub fn run_single_fit(config: &ExperimentConfig) -> Result<SingleFit> {
    config.validate()?;
    let horizon = config.horizons[0];
    let shape = config.shapes()[0];
    let seed = config.train_seed(0);
    let truth = config.model.build();
    let out_dir = &config.out_dir;
    fs::create_dir_all(out_dir)?;

    let sample = simulate(&truth, horizon, seed)?;
    sample.write_dir(&out_dir.join("sample"))?;
    let (fresh, grid) = evaluation_setup(config, horizon, 0)?;
    let points = panel_points(&sample)?;
    let train = TrainConfig { seed, ..config.train };

    let mut models = Vec::new();
    let mut reports = Vec::new();
    for &method in &config.methods {
        let start = Instant::now();
        let model = fit(&sample, method, shape, &train)?;
        let wall_s = start.elapsed().as_secs_f64();
        let eval = evaluate_fit(&model, &truth, &fresh, &grid)?;
        info!("{}: l2={:.4} linf={:.4} risk={:.5}", method.name(), eval.eps_l2, eval.eps_linf, eval.risk);
        model.write_bundle(
            &out_dir.join(format!("fit_{}", method.name())),
            bundle_info(shape, train, seed, horizon, &sample),
        )?;
        write_function_curves(&model, &truth, &points, out_dir)?;
        reports.push(ErrorReport {
            method,
            horizon,
            seed,
            shape,
            eps_l2: eval.eps_l2,
            eps_linf: eval.eps_linf,
            risk: eval.risk,
            wall_s,
        });
        models.push(model);
    }
    let mut out = BufWriter::new(File::create(out_dir.join("results.csv"))?);
    writeln!(out, "{}", ErrorReport::CSV_HEADER)?;
    for r in &reports {
        writeln!(out, "{}", r.csv_row())?;
    }
    out.flush()?;
    Ok(SingleFit { models, reports })
}

fn bundle_info(shape: NetShape, train: TrainConfig, seed: u64, horizon: f64, sample: &MarkedPointSample) -> BundleInfo {
    BundleInfo { shape, train, sample_seed: seed, horizon, model_id: sample.model_id.clone() }
}
