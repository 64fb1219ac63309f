//! Marked event streams with covariates, shared by the simulator and the
//! order-book ingester.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flattens `(type, mark)` into a class index `n_marks * type + mark`.
pub fn encode(type_i: usize, mark_k: usize, n_marks: usize) -> usize {
    n_marks * type_i + mark_k
}

pub fn decode(class: usize, n_marks: usize) -> (usize, usize) {
    (class / n_marks, class % n_marks)
}

/// How event covariates feed the networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureLayout {
    /// Type networks see `x`, mark networks see `y`, the joint network sees `(x, y)`.
    Split,
    /// All networks see `x`; `y` is empty.
    Shared,
}

/// One event together with the covariates just before it.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub time: f64,
    pub type_i: usize,
    pub mark_k: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Regular-time snapshot of the covariate path, one row per grid time with
/// columns `(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateGrid {
    pub step: f64,
    pub values: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarkedPointSample {
    pub model_id: String,
    pub horizon: f64,
    pub seed: u64,
    pub n_types: usize,
    pub n_marks: usize,
    pub x_dim: usize,
    pub y_dim: usize,
    pub layout: FeatureLayout,
    pub events: Vec<EventRecord>,
    pub covariate_grid: Option<CovariateGrid>,
}

impl MarkedPointSample {
    pub fn n_classes(&self) -> usize {
        self.n_types * self.n_marks
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn class_of(&self, ev: &EventRecord) -> usize {
        encode(ev.type_i, ev.mark_k, self.n_marks)
    }

    pub fn joint_dim(&self) -> usize {
        match self.layout {
            FeatureLayout::Split => self.x_dim + self.y_dim,
            FeatureLayout::Shared => self.x_dim,
        }
    }

    pub fn mark_dim(&self) -> usize {
        match self.layout {
            FeatureLayout::Split => self.y_dim,
            FeatureLayout::Shared => self.x_dim,
        }
    }

    /// Features of the joint (one-step) network for one event.
    pub fn joint_features(&self, ev: &EventRecord) -> Vec<f64> {
        match self.layout {
            FeatureLayout::Split => ev.x.iter().chain(&ev.y).copied().collect(),
            FeatureLayout::Shared => ev.x.clone(),
        }
    }

    pub fn mark_features<'a>(&self, ev: &'a EventRecord) -> &'a [f64] {
        match self.layout {
            FeatureLayout::Split => &ev.y,
            FeatureLayout::Shared => &ev.x,
        }
    }

    /// Event counts indexed by class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for ev in &self.events {
            counts[self.class_of(ev)] += 1;
        }
        counts
    }

    pub fn type_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_types];
        for ev in &self.events {
            counts[ev.type_i] += 1;
        }
        counts
    }

    /// Covariate draws per axis in joint-feature order, taken from the
    /// regular grid snapshot when present and from the events otherwise.
    pub fn covariate_draws(&self) -> Vec<Vec<f64>> {
        let dim = self.joint_dim();
        match &self.covariate_grid {
            Some(grid) if grid.values.ncols() == dim => {
                (0..dim).map(|j| grid.values.column(j).to_vec()).collect()
            }
            _ => {
                let mut axes = vec![Vec::with_capacity(self.len()); dim];
                for ev in &self.events {
                    for (axis, v) in axes.iter_mut().zip(self.joint_features(ev)) {
                        axis.push(v);
                    }
                }
                axes
            }
        }
    }

    fn column_names(&self) -> Vec<String> {
        let mut names = vec!["time".to_string(), "type".into(), "mark".into()];
        names.extend(axis_names("x", self.x_dim));
        names.extend(axis_names("y", self.y_dim));
        names
    }

    /// Writes `events.csv`, `sample.json` and, when present,
    /// `covariate_grid.csv` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut out = BufWriter::new(File::create(dir.join("events.csv"))?);
        writeln!(out, "{}", self.column_names().join(","))?;
        for ev in &self.events {
            write!(out, "{},{},{}", fmt17(ev.time), ev.type_i, ev.mark_k)?;
            for v in ev.x.iter().chain(&ev.y) {
                write!(out, ",{}", fmt17(*v))?;
            }
            writeln!(out)?;
        }
        out.flush()?;

        if let Some(grid) = &self.covariate_grid {
            let mut out = BufWriter::new(File::create(dir.join("covariate_grid.csv"))?);
            let mut header = vec!["t".to_string()];
            header.extend(axis_names("x", self.x_dim));
            header.extend(axis_names("y", self.y_dim));
            writeln!(out, "{}", header.join(","))?;
            for (g, row) in grid.values.rows().into_iter().enumerate() {
                write!(out, "{}", fmt17(g as f64 * grid.step))?;
                for v in row {
                    write!(out, ",{}", fmt17(*v))?;
                }
                writeln!(out)?;
            }
            out.flush()?;
        }

        let meta = SampleMeta {
            model_id: self.model_id.clone(),
            horizon: self.horizon,
            seed: self.seed,
            n_types: self.n_types,
            n_marks: self.n_marks,
            x_dim: self.x_dim,
            y_dim: self.y_dim,
            layout: self.layout,
            grid_step: self.covariate_grid.as_ref().map(|g| g.step),
            counts: self.class_counts(),
        };
        let file = File::create(dir.join("sample.json"))?;
        serde_json::to_writer_pretty(file, &meta)?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let meta: SampleMeta = serde_json::from_reader(File::open(dir.join("sample.json"))?)?;
        let width = 3 + meta.x_dim + meta.y_dim;
        let mut reader = csv::Reader::from_path(dir.join("events.csv"))?;
        let mut events = Vec::new();
        for record in reader.records() {
            let record = record?;
            if record.len() != width {
                return Err(Error::Parse(format!(
                    "events.csv row has {} fields, expected {width}",
                    record.len()
                )));
            }
            let num = |j: usize| -> Result<f64> {
                record[j]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("field {j}: {e}")))
            };
            let idx = |j: usize| -> Result<usize> {
                record[j]
                    .trim()
                    .parse::<usize>()
                    .map_err(|e| Error::Parse(format!("field {j}: {e}")))
            };
            let x = (0..meta.x_dim).map(|j| num(3 + j)).collect::<Result<Vec<_>>>()?;
            let y = (0..meta.y_dim)
                .map(|j| num(3 + meta.x_dim + j))
                .collect::<Result<Vec<_>>>()?;
            events.push(EventRecord { time: num(0)?, type_i: idx(1)?, mark_k: idx(2)?, x, y });
        }

        let covariate_grid = match meta.grid_step {
            Some(step) => {
                let dim = meta.x_dim + meta.y_dim;
                let mut reader = csv::Reader::from_path(dir.join("covariate_grid.csv"))?;
                let mut flat = Vec::new();
                let mut rows = 0;
                for record in reader.records() {
                    let record = record?;
                    for j in 0..dim {
                        flat.push(
                            record[1 + j]
                                .trim()
                                .parse::<f64>()
                                .map_err(|e| Error::Parse(e.to_string()))?,
                        );
                    }
                    rows += 1;
                }
                let values = Array2::from_shape_vec((rows, dim), flat)
                    .map_err(|e| Error::Shape(e.to_string()))?;
                Some(CovariateGrid { step, values })
            }
            None => None,
        };

        Ok(Self {
            model_id: meta.model_id,
            horizon: meta.horizon,
            seed: meta.seed,
            n_types: meta.n_types,
            n_marks: meta.n_marks,
            x_dim: meta.x_dim,
            y_dim: meta.y_dim,
            layout: meta.layout,
            events,
            covariate_grid,
        })
    }
}

/// Sidecar metadata written next to `events.csv`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleMeta {
    pub model_id: String,
    pub horizon: f64,
    pub seed: u64,
    pub n_types: usize,
    pub n_marks: usize,
    pub x_dim: usize,
    pub y_dim: usize,
    pub layout: FeatureLayout,
    pub grid_step: Option<f64>,
    /// Event counts per class `n_marks * type + mark`.
    pub counts: Vec<usize>,
}

fn axis_names(prefix: &str, dim: usize) -> Vec<String> {
    if prefix == "y" && dim == 1 {
        return vec!["y".into()];
    }
    (0..dim).map(|j| format!("{prefix}{j}")).collect()
}

/// Formats with 17 significant digits, enough to round-trip any f64.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode_round_trip() {
        for i in 0..4 {
            for k in 0..2 {
                let c = encode(i, k, 2);
                assert!(c < 8);
                assert_eq!(decode(c, 2), (i, k));
            }
        }
        let all: Vec<_> = (0..4).flat_map(|i| (0..2).map(move |k| encode(i, k, 2))).collect();
        assert_eq!(all, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn fmt17_round_trips() {
        for v in [0.1, -1.0 / 3.0, 1e-300, 6.02214076e23, std::f64::consts::PI] {
            assert_eq!(fmt17(v).parse::<f64>().unwrap(), v);
        }
    }
}
