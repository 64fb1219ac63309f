use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use log::info;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::estimators::{fit, BundleInfo, FittedModel, JointPredictor, Method, NetShape, TrainConfig};
use crate::lob::{
    compute_covariates, read_lob_csv, synthesize_lob_stream, to_marked_sample, training_sample, synthetic_table_points,
    write_lob_csv, SyntheticLobLaw,
};
use crate::metrics::empirical_binned_probs;
use crate::sample::MarkedPointSample;

/// Points per probability curve over imbalance in `[-1, 1]`.
pub const LOB_CURVE_POINTS: usize = 101;
pub const LOB_EMPIRICAL_BINS: usize = 20;

/// `(last sign, spread)` cells in output order.
pub const LOB_CELLS: [(f64, f64); 6] = [(-1.0, 1.0), (-1.0, 2.0), (-1.0, 3.0), (1.0, 1.0), (1.0, 2.0), (1.0, 3.0)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LobSource {
    /// One CSV per session.
    Files { paths: Vec<PathBuf>, tick_size: f64 },
    /// A synthetic session with a known law, lasting `horizon` seconds.
    Synthetic { horizon: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LobFitConfig {
    pub source: LobSource,
    pub methods: Vec<Method>,
    pub shape: NetShape,
    pub train: TrainConfig,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone)]
pub struct LobFit {
    pub sample: MarkedPointSample,
    pub models: Vec<FittedModel>,
    pub rejected: usize,
    /// Maximum class-probability error against the known law, synthetic
    /// source only.
    pub table_errors: Vec<(Method, f64)>,
}

/// Rows `(imbalance, sign, spread)`: `imbalance` sweeps `[lo, hi]` within
/// each cell of [`LOB_CELLS`].
pub fn lob_curve_points(lo: f64, hi: f64, n: usize) -> Array2<f64> {
    let mut out = Array2::zeros((LOB_CELLS.len() * n, 3));
    for (c, &(sign, spread)) in LOB_CELLS.iter().enumerate() {
        for g in 0..n {
            let imb = if n == 1 { lo } else { lo + g as f64 * (hi - lo) / (n - 1) as f64 };
            let r = c * n + g;
            out[[r, 0]] = imb;
            out[[r, 1]] = sign;
            out[[r, 2]] = spread;
        }
    }
    out
}

/// Largest absolute class-probability error against `law` over every
/// covariate combination the synthetic book can produce.
pub fn lob_table_error<P: JointPredictor + ?Sized>(model: &P, law: &SyntheticLobLaw) -> f64 {
    let points = synthetic_table_points();
    let hat = model.joint_probs(points.view());
    let exact = law.joint_probs(points.view());
    hat.iter().zip(exact.iter()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
}

fn load_sessions(source: &LobSource, out_dir: &std::path::Path) -> Result<(Vec<MarkedPointSample>, usize)> {
    let mut sessions = Vec::new();
    let mut rejected = 0;
    match source {
        LobSource::Files { paths, tick_size } => {
            if paths.is_empty() {
                return Err(invalid("no order-book files given"));
            }
            for path in paths {
                let events = read_lob_csv(path)?;
                let cov = compute_covariates(&events, *tick_size)?;
                rejected += cov.rejected;
                sessions.push(to_marked_sample(&events, &cov));
            }
        }
        LobSource::Synthetic { horizon, seed } => {
            let events = synthesize_lob_stream(*horizon, *seed)?;
            write_lob_csv(&out_dir.join("lob_synthetic.csv"), &events)?;
            let cov = compute_covariates(&events, 1.0)?;
            rejected += cov.rejected;
            sessions.push(to_marked_sample(&events, &cov));
        }
    }
    Ok((sessions, rejected))
}

fn write_empirical(sample: &MarkedPointSample, path: &std::path::Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "sign,spread,imbalance,count,f0,f1,f2,f3")?;
    for &(sign, spread) in &LOB_CELLS {
        let binned = empirical_binned_probs(sample, 0, LOB_EMPIRICAL_BINS, Some((-1.0, 1.0)), &[(1, sign), (2, spread)])?;
        for ((center, count), freqs) in binned.centers().iter().zip(&binned.counts).zip(&binned.freqs) {
            let f = match freqs {
                Some(f) => f.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","),
                None => "NA,NA,NA,NA".to_string(),
            };
            writeln!(out, "{sign},{spread},{center},{count},{f}")?;
        }
    }
    out.flush()?;
    Ok(())
}

fn write_curves(model: &FittedModel, law: Option<&SyntheticLobLaw>, path: &std::path::Path) -> Result<()> {
    let points = lob_curve_points(-1.0, 1.0, LOB_CURVE_POINTS);
    let hat = model.joint_probs(points.view());
    let exact = law.map(|l| l.joint_probs(points.view()));
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "sign,spread,imbalance,p0,p1,p2,p3")?;
    if exact.is_some() {
        write!(out, ",true_p0,true_p1,true_p2,true_p3")?;
    }
    writeln!(out)?;
    for r in 0..points.nrows() {
        let mut fields = vec![points[[r, 1]].to_string(), points[[r, 2]].to_string(), points[[r, 0]].to_string()];
        fields.extend(hat.row(r).iter().map(|v| v.to_string()));
        if let Some(t) = &exact {
            fields.extend(t.row(r).iter().map(|v| v.to_string()));
        }
        writeln!(out, "{}", fields.join(","))?;
    }
    out.flush()?;
    Ok(())
}

/// Loads or synthesizes order-book sessions, fits each method on the
/// pooled sample and writes probability curves with empirical overlays.
pub fn run_lob_fit(config: &LobFitConfig) -> Result<LobFit> {
    if config.methods.is_empty() {
        return Err(invalid("at least one method is required"));
    }
    fs::create_dir_all(&config.out_dir)?;
    let (sessions, rejected) = load_sessions(&config.source, &config.out_dir)?;
    let sample = training_sample(&sessions)?;
    info!("{} order-book events, {} rejected", sample.len(), rejected);
    write_empirical(&sample, &config.out_dir.join("lob_empirical.csv"))?;

    let law = matches!(config.source, LobSource::Synthetic { .. }).then(SyntheticLobLaw::default);
    let mut models = Vec::new();
    let mut table_errors = Vec::new();
    for &method in &config.methods {
        let model = fit(&sample, method, config.shape, &config.train)?;
        write_curves(&model, law.as_ref(), &config.out_dir.join(format!("lob_curves_{}.csv", method.name())))?;
        model.write_bundle(
            &config.out_dir.join(format!("fit_{}", method.name())),
            BundleInfo {
                shape: config.shape,
                train: config.train,
                sample_seed: config.train.seed,
                horizon: sample.horizon,
                model_id: sample.model_id.clone(),
            },
        )?;
        if let Some(law) = &law {
            let err = lob_table_error(&model, law);
            info!("{}: max class-probability error {err:.4}", method.name());
            table_errors.push((method, err));
        }
        models.push(model);
    }
    if !table_errors.is_empty() {
        let summary: Vec<_> = table_errors.iter().map(|(m, e)| serde_json::json!({"method": m, "linf": e})).collect();
        serde_json::to_writer_pretty(File::create(config.out_dir.join("lob_errors.json"))?, &summary)?;
    }
    Ok(LobFit { sample, models, rejected, table_errors })
}
