//! Near-boundary point selection and normalized latent gradients.
//!
//! The sigmoid output is flat wherever the classifier is certain, so only
//! points with `F(x)` in `[delta, 1-delta]` carry usable gradient signal.
//! For the kept points the latent gradient `∇f(x)` is normalized to unit
//! length (exact zero gradients stay zero) and stored together with the
//! points as the training set of the symbolic search.

use std::fmt::Write as _;
use std::path::Path;

use rand_distr::{Distribution, Normal};

use crate::dataset::{Dataset, DatasetMeta};
use crate::nn::{model_hash, MLPModel};
use crate::parallel::map_ordered;
use crate::rng::stream;
use crate::vecmath::normalize;
use crate::{Error, Result};

/// Optional augmentation of the extraction inputs with unlabeled points.
#[derive(Debug, Clone, PartialEq)]
pub enum Augment {
    None,
    /// Adds `count` Gaussian-jittered copies of training rows (labels unused).
    Perturb { scale: f64, count: usize, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct ExtractionConfig {
    /// Selection threshold: keep rows with `F(x)` in `[delta, 1-delta]`.
    pub delta: f64,
    pub augment: Augment,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            delta: 1e-4,
            augment: Augment::None,
        }
    }
}

/// Retained points paired with unit-normalized latent gradients.
#[derive(Debug, Clone)]
pub struct GradientSet {
    pub points: Vec<Vec<f64>>,
    pub gradients: Vec<Vec<f64>>,
    pub delta: f64,
    pub model_hash: String,
    pub source: Option<DatasetMeta>,
}

impl GradientSet {
    /// From raw (unnormalized) gradient rows; rows are normalized to unit
    /// length, exact zero rows stay zero.
    pub fn from_raw_gradients(points: Vec<Vec<f64>>, raw: Vec<Vec<f64>>) -> Result<GradientSet> {
        if points.len() != raw.len() {
            return Err(Error::Usage("point/gradient row count mismatch".into()));
        }
        let mut gradients = raw;
        for g in gradients.iter_mut() {
            normalize(g);
        }
        let gs = GradientSet {
            points,
            gradients,
            delta: 0.0,
            model_hash: String::new(),
            source: None,
        };
        gs.validate()?;
        Ok(gs)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, |r| r.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() != self.gradients.len() {
            return Err(Error::Data("point/gradient row count mismatch".into()));
        }
        for (i, g) in self.gradients.iter().enumerate() {
            let n = crate::vecmath::norm(g);
            if n != 0.0 && (n - 1.0).abs() > 1e-12 {
                return Err(Error::Data(format!(
                    "gradient row {} has norm {} (neither unit nor zero)",
                    i, n
                )));
            }
        }
        Ok(())
    }
}

/// Keeps exactly the rows with `F(x)` in `[delta, 1-delta]`, preserving order.
pub fn filter_confident(
    model: &MLPModel,
    rows: &[Vec<f64>],
    delta: f64,
) -> Result<Vec<Vec<f64>>> {
    if !(delta > 0.0 && delta < 0.5) {
        return Err(Error::Usage(format!(
            "delta must be in (0, 0.5), got {}",
            delta
        )));
    }
    let outputs: Vec<Result<f64>> = map_ordered(rows, |row| model.forward(row).map(|(f, _)| f));
    let mut kept = Vec::new();
    for (row, out) in rows.iter().zip(outputs) {
        let f = out?;
        if f >= delta && f <= 1.0 - delta {
            kept.push(row.clone());
        }
    }
    if kept.is_empty() {
        return Err(Error::Extraction(format!(
            "no points with F(x) in [{0}, 1-{0}]; the model is saturated everywhere - \
             increase delta or supply more data near the boundary",
            delta
        )));
    }
    Ok(kept)
}

/// Runs the full extraction: optional augmentation, confidence filtering,
/// per-row latent gradients, unit normalization.
pub fn extract(model: &MLPModel, ds: &Dataset, cfg: &ExtractionConfig) -> Result<GradientSet> {
    if ds.n_features() != model.input_dim {
        return Err(Error::Usage(format!(
            "model expects {} features, dataset has {}",
            model.input_dim,
            ds.n_features()
        )));
    }
    let mut rows = ds.x.clone();
    if let Augment::Perturb { scale, count, seed } = &cfg.augment {
        let normal = Normal::new(0.0, *scale)
            .map_err(|_| Error::Usage("perturbation scale must be finite".into()))?;
        let mut rng = stream(*seed, 0xA06);
        for i in 0..*count {
            let mut row = ds.x[i % ds.x.len()].clone();
            for v in row.iter_mut() {
                *v += normal.sample(&mut rng);
            }
            rows.push(row);
        }
    }
    let kept = filter_confident(model, &rows, cfg.delta)?;
    let raw: Vec<Result<Vec<f64>>> = map_ordered(&kept, |row| model.input_gradient(row));
    let mut gradients = Vec::with_capacity(kept.len());
    for g in raw {
        gradients.push(g?);
    }
    for g in gradients.iter_mut() {
        normalize(g);
    }
    let gs = GradientSet {
        points: kept,
        gradients,
        delta: cfg.delta,
        model_hash: model_hash(model),
        source: Some(ds.meta.clone()),
    };
    gs.validate()?;
    Ok(gs)
}

fn fmt_f64(v: f64) -> String {
    format!("{:.16e}", v)
}

impl GradientSet {
    /// Writes `<path>` as CSV (`x1..xn,g1..gn`) plus a `<stem>.meta` sidecar.
    pub fn save(&self, csv_path: &Path) -> Result<()> {
        self.validate()?;
        let n = self.dim();
        let mut out = String::new();
        for i in 1..=n {
            let _ = write!(out, "x{},", i);
        }
        for i in 1..=n {
            let _ = write!(out, "g{}", i);
            out.push(if i == n { '\n' } else { ',' });
        }
        for (p, g) in self.points.iter().zip(&self.gradients) {
            let fields: Vec<String> = p.iter().chain(g).map(|v| fmt_f64(*v)).collect();
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        std::fs::write(csv_path, out)?;

        let mut meta = format!(
            "delta={}\nmodel_hash={}\nn_rows={}\n",
            self.delta,
            self.model_hash,
            self.len()
        );
        if let Some(src) = &self.source {
            let _ = write!(
                meta,
                "source_id={}\nsource_seed={}\nsource_noise={}\nsource_n={}\n",
                src.experiment.get(),
                src.seed,
                src.noise,
                src.n_samples
            );
        }
        std::fs::write(csv_path.with_extension("meta"), meta)?;
        Ok(())
    }

    /// Loads a gradient set written by [`GradientSet::save`]. The source
    /// dataset meta is not reconstructed; the hash and delta are.
    pub fn load(csv_path: &Path) -> Result<GradientSet> {
        let meta_text = std::fs::read_to_string(csv_path.with_extension("meta"))?;
        let mut delta = None;
        let mut hash = None;
        for line in meta_text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                match k {
                    "delta" => {
                        delta = Some(v.parse::<f64>().map_err(|_| {
                            Error::Data(format!("bad delta '{}' in sidecar", v))
                        })?)
                    }
                    "model_hash" => hash = Some(v.to_string()),
                    _ => {}
                }
            }
        }
        let text = std::fs::read_to_string(csv_path)?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Data(format!("{}: empty file", csv_path.display())))?;
        let cols = header.split(',').count();
        if cols % 2 != 0 {
            return Err(Error::Data(format!(
                "{}: expected paired x/g columns",
                csv_path.display()
            )));
        }
        let n = cols / 2;
        let mut points = Vec::new();
        let mut gradients = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut values = Vec::with_capacity(cols);
            for field in line.split(',') {
                values.push(field.parse::<f64>().map_err(|_| {
                    Error::Data(format!(
                        "{}:{}: bad float '{}'",
                        csv_path.display(),
                        lineno + 2,
                        field
                    ))
                })?);
            }
            if values.len() != cols {
                return Err(Error::Data(format!(
                    "{}:{}: expected {} fields",
                    csv_path.display(),
                    lineno + 2,
                    cols
                )));
            }
            gradients.push(values.split_off(n));
            points.push(values);
        }
        let gs = GradientSet {
            points,
            gradients,
            delta: delta
                .ok_or_else(|| Error::Data("sidecar missing delta".into()))?,
            model_hash: hash.ok_or_else(|| Error::Data("sidecar missing model_hash".into()))?,
            source: None,
        };
        gs.validate()?;
        Ok(gs)
    }
}
