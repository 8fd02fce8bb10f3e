//! Synthetic two-class benchmark datasets.
//!
//! Seven experiments, each defined by a closed-form decision formula `g` and a
//! sampling box that straddles the boundary `g(x) = threshold`. Points are
//! sampled uniformly, labeled on the clean coordinates, then perturbed with
//! multiplicative Gaussian noise, so the target function stays well defined.
//!
//! Experiment 7 is special: its two classes are the pure regions
//! `x1*x2 > 1 AND x3*x4 > 1` versus `x1*x2 < 1 AND x3*x4 < 1`; mixed points
//! are rejected during sampling. Its scalar surrogate formula (used for
//! verification reports) is `x1*x2 + x3*x4` with threshold 2, which labels the
//! kept points identically.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::expr::{parse, Expr};
use crate::rng::stream;
use crate::{Error, Result};

/// Identifier of one of the seven experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ExperimentId(u8);

impl ExperimentId {
    pub fn new(id: u8) -> Result<ExperimentId> {
        if (1..=7).contains(&id) {
            Ok(ExperimentId(id))
        } else {
            Err(Error::Usage(format!(
                "experiment id must be in 1..=7, got {}",
                id
            )))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = ExperimentId> {
        (1..=7).map(ExperimentId)
    }
}

/// Closed-form decision function `g` with the threshold of its class boundary.
#[derive(Debug, Clone)]
pub struct DecisionFormula {
    pub id: ExperimentId,
    pub arity: usize,
    pub threshold: f64,
    pub form: Expr,
}

impl DecisionFormula {
    /// The decision formula of an experiment.
    pub fn for_experiment(id: ExperimentId) -> DecisionFormula {
        let (arity, threshold, text) = match id.get() {
            1 => (2, 1.0, "x1*x1 + 2*x2*x2"),
            2 => (2, 5.0, "x1*x1 + 3*x1*x2 + 2*x2*x2"),
            3 => (3, 1.0, "x1*x1 + sin(x2 + x3)"),
            4 => (3, 1.0, "exp(x1 - x2) - 3.141592653589793*x3"),
            5 => (3, 0.2, "x1*exp(-0.5*(x2*x2 + x3*x3))"),
            6 => (6, 1.0, "x1*x2/((x3 - x4)*(x3 - x4) + (x5 - x6)*(x5 - x6))"),
            7 => (4, 2.0, "x1*x2 + x3*x4"),
            _ => unreachable!(),
        };
        DecisionFormula {
            id,
            arity,
            threshold,
            form: parse(text).expect("built-in formula parses"),
        }
    }
}

/// Evaluates the scalar left-hand side `g(x)` of a decision formula.
pub fn eval_decision(formula: &DecisionFormula, x: &[f64]) -> Result<f64> {
    if x.len() != formula.arity {
        return Err(Error::Usage(format!(
            "experiment {} expects {} inputs, got {}",
            formula.id.get(),
            formula.arity,
            x.len()
        )));
    }
    formula.form.eval(x).ok_or_else(|| {
        Error::Numeric(format!(
            "decision formula {} is non-finite at {:?}",
            formula.id.get(),
            x
        ))
    })
}

/// Per-variable closed sampling intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingDomain {
    pub bounds: Vec<(f64, f64)>,
}

impl SamplingDomain {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<SamplingDomain> {
        for (lo, hi) in &bounds {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::Usage(format!(
                    "invalid interval [{}, {}] in sampling domain",
                    lo, hi
                )));
            }
        }
        Ok(SamplingDomain { bounds })
    }

    /// The default box for an experiment; straddles the class boundary and
    /// keeps formula evaluation away from singularities.
    pub fn default_for(id: ExperimentId) -> SamplingDomain {
        use std::f64::consts::PI;
        let bounds = match id.get() {
            1 => vec![(-1.5, 1.5); 2],
            2 => vec![(-3.0, 3.0); 2],
            3 => vec![(-1.5, 1.5), (-PI, PI), (-PI, PI)],
            4 => vec![(-2.0, 2.0); 3],
            5 => vec![(-1.5, 1.5); 3],
            6 => {
                let mut b = vec![(0.5, 2.0); 2];
                b.extend(vec![(-1.0, 1.0); 4]);
                b
            }
            7 => vec![(0.25, 2.0); 4],
            _ => unreachable!(),
        };
        SamplingDomain { bounds }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    fn sample_into(&self, rng: &mut impl Rng, out: &mut Vec<f64>) {
        out.clear();
        for (lo, hi) in &self.bounds {
            let u: f64 = rng.random();
            out.push(lo + u * (hi - lo));
        }
    }

    fn format(&self) -> String {
        let mut s = String::new();
        for (i, (lo, hi)) in self.bounds.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            let _ = write!(s, "{}:{}", lo, hi);
        }
        s
    }

    fn parse_str(s: &str) -> Result<SamplingDomain> {
        let mut bounds = Vec::new();
        for part in s.split(',') {
            let (lo, hi) = part.split_once(':').ok_or_else(|| {
                Error::Data(format!("bad domain segment '{}' (expected lo:hi)", part))
            })?;
            let lo: f64 = lo
                .parse()
                .map_err(|_| Error::Data(format!("bad domain bound '{}'", lo)))?;
            let hi: f64 = hi
                .parse()
                .map_err(|_| Error::Data(format!("bad domain bound '{}'", hi)))?;
            bounds.push((lo, hi));
        }
        SamplingDomain::new(bounds)
    }
}

/// Generation metadata carried next to the feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub experiment: ExperimentId,
    pub seed: u64,
    pub noise: f64,
    pub n_samples: usize,
    pub domain: SamplingDomain,
}

/// Feature matrix with binary labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<u8>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn n_samples(&self) -> usize {
        self.x.len()
    }

    pub fn n_features(&self) -> usize {
        self.x.first().map_or(0, |row| row.len())
    }

    pub fn has_both_classes(&self) -> bool {
        self.y.iter().any(|&l| l == 0) && self.y.iter().any(|&l| l == 1)
    }

    fn validate(&self) -> Result<()> {
        if self.x.len() != self.y.len() || self.x.len() != self.meta.n_samples {
            return Err(Error::Data(format!(
                "dataset length mismatch: {} rows, {} labels, meta says {}",
                self.x.len(),
                self.y.len(),
                self.meta.n_samples
            )));
        }
        for (i, row) in self.x.iter().enumerate() {
            if row.len() != self.meta.domain.dim() {
                return Err(Error::Data(format!("row {} has wrong width", i)));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("row {} contains non-finite value", i)));
            }
        }
        if self.y.iter().any(|&l| l > 1) {
            return Err(Error::Data("labels must be 0 or 1".into()));
        }
        Ok(())
    }
}

/// Extra acceptance rules applied while drawing clean points.
fn point_accepted(id: ExperimentId, x: &[f64]) -> bool {
    match id.get() {
        // Keep the denominator bounded away from its singularity.
        6 => {
            let den = (x[2] - x[3]).powi(2) + (x[4] - x[5]).powi(2);
            den >= 1e-3
        }
        // Only the two pure regions; mixed points are rejected.
        7 => {
            let p = x[0] * x[1];
            let q = x[2] * x[3];
            (p > 1.0 && q > 1.0) || (p < 1.0 && q < 1.0)
        }
        _ => true,
    }
}

fn label_clean(formula: &DecisionFormula, x: &[f64]) -> Result<u8> {
    if formula.id.get() == 7 {
        let p = x[0] * x[1];
        let q = x[2] * x[3];
        return Ok(u8::from(p > 1.0 && q > 1.0));
    }
    Ok(u8::from(eval_decision(formula, x)? > formula.threshold))
}

/// Draws `n` clean points from an experiment's sampling rules (no noise, no
/// labels). Useful as probe sets for gradient comparisons.
pub fn sample_clean_points(id: ExperimentId, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let domain = SamplingDomain::default_for(id);
    sample_clean_points_in(id, &domain, n, seed)
}

pub fn sample_clean_points_in(
    id: ExperimentId,
    domain: &SamplingDomain,
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let mut rng = stream(seed, 0x5A3D);
    let mut out = Vec::with_capacity(n);
    let mut candidate = Vec::with_capacity(domain.dim());
    let budget = n.saturating_mul(1000);
    let mut draws = 0usize;
    while out.len() < n {
        if draws >= budget {
            return Err(Error::Generation(format!(
                "rejection sampling for experiment {} exhausted {} draws with {}/{} points",
                id.get(),
                budget,
                out.len(),
                n
            )));
        }
        draws += 1;
        domain.sample_into(&mut rng, &mut candidate);
        if point_accepted(id, &candidate) {
            out.push(candidate.clone());
        }
    }
    Ok(out)
}

/// Generates a labeled dataset for an experiment with its default domain.
pub fn generate_experiment(id: ExperimentId, n: usize, seed: u64, noise: f64) -> Result<Dataset> {
    let domain = SamplingDomain::default_for(id);
    generate_in_domain(id, &domain, n, seed, noise)
}

/// As [`generate_experiment`] with an explicit sampling domain.
pub fn generate_in_domain(
    id: ExperimentId,
    domain: &SamplingDomain,
    n: usize,
    seed: u64,
    noise: f64,
) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::Usage("need at least 2 samples".into()));
    }
    let formula = DecisionFormula::for_experiment(id);
    if domain.dim() != formula.arity {
        return Err(Error::Usage(format!(
            "experiment {} needs a {}-dimensional domain, got {}",
            id.get(),
            formula.arity,
            domain.dim()
        )));
    }
    if noise < 0.0 {
        return Err(Error::Usage("noise level must be nonnegative".into()));
    }

    let mut rng = stream(seed, u64::from(id.get()));
    let normal = if noise > 0.0 {
        Some(Normal::new(0.0, noise).expect("finite noise std"))
    } else {
        None
    };

    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut candidate = Vec::with_capacity(domain.dim());
    let budget = n.saturating_mul(1000);
    let mut draws = 0usize;

    while x.len() < n {
        if draws >= budget {
            return Err(Error::Generation(format!(
                "rejection sampling for experiment {} exhausted {} draws with {}/{} points",
                id.get(),
                budget,
                x.len(),
                n
            )));
        }
        draws += 1;
        domain.sample_into(&mut rng, &mut candidate);
        if !point_accepted(id, &candidate) {
            continue;
        }
        let label = label_clean(&formula, &candidate)?;
        let mut row = candidate.clone();
        if let Some(dist) = &normal {
            for v in row.iter_mut() {
                let eps: f64 = dist.sample(&mut rng);
                *v *= 1.0 + eps;
            }
        }
        x.push(row);
        y.push(label);
    }

    let ds = Dataset {
        x,
        y,
        meta: DatasetMeta {
            experiment: id,
            seed,
            noise,
            n_samples: n,
            domain: domain.clone(),
        },
    };
    ds.validate()?;
    if !ds.has_both_classes() {
        return Err(Error::Generation(format!(
            "experiment {} produced a single-class sample (n={}, seed={})",
            id.get(),
            n,
            seed
        )));
    }
    Ok(ds)
}

/// Disjoint shuffled partition into (train, validation).
pub fn split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Usage(format!(
            "train fraction must be in (0, 1), got {}",
            train_fraction
        )));
    }
    let n = ds.n_samples();
    let k = (n as f64 * train_fraction).round() as usize;
    if k == 0 || k == n {
        return Err(Error::Usage(format!(
            "train fraction {} leaves an empty side for {} rows",
            train_fraction, n
        )));
    }

    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = stream(seed, 0x51FF);
    // Fisher-Yates.
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        indices.swap(i, j);
    }

    let take = |idx: &[usize]| -> Dataset {
        Dataset {
            x: idx.iter().map(|&i| ds.x[i].clone()).collect(),
            y: idx.iter().map(|&i| ds.y[i]).collect(),
            meta: DatasetMeta {
                n_samples: idx.len(),
                ..ds.meta.clone()
            },
        }
    };
    Ok((take(&indices[..k]), take(&indices[k..])))
}

fn fmt_f64(v: f64) -> String {
    // 17 significant digits; round-trips f64 exactly.
    format!("{:.16e}", v)
}

impl Dataset {
    /// Writes `<path>` as CSV (`x1,...,xn,label`) and a `<stem>.meta` sidecar.
    pub fn save(&self, csv_path: &Path) -> Result<()> {
        self.validate()?;
        let mut out = String::new();
        for i in 1..=self.n_features() {
            let _ = write!(out, "x{},", i);
        }
        out.push_str("label\n");
        for (row, label) in self.x.iter().zip(&self.y) {
            for v in row {
                out.push_str(&fmt_f64(*v));
                out.push(',');
            }
            let _ = writeln!(out, "{}", label);
        }
        std::fs::write(csv_path, out)?;
        std::fs::write(sidecar_path(csv_path), self.meta_text())?;
        Ok(())
    }

    fn meta_text(&self) -> String {
        format!(
            "id={}\nseed={}\nnoise={}\nn={}\ndomain={}\n",
            self.meta.experiment.get(),
            self.meta.seed,
            self.meta.noise,
            self.meta.n_samples,
            self.meta.domain.format()
        )
    }

    /// Loads a dataset written by [`Dataset::save`].
    pub fn load(csv_path: &Path) -> Result<Dataset> {
        let meta = read_meta(&sidecar_path(csv_path))?;
        let text = std::fs::read_to_string(csv_path)?;
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Data(format!("{}: empty file", csv_path.display())))?;
        let n_cols = header.split(',').count();
        if n_cols != meta.domain.dim() + 1 {
            return Err(Error::Data(format!(
                "{}: header has {} columns, sidecar domain says {} features",
                csv_path.display(),
                n_cols,
                meta.domain.dim()
            )));
        }
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != n_cols {
                return Err(Error::Data(format!(
                    "{}:{}: expected {} fields, found {}",
                    csv_path.display(),
                    lineno + 2,
                    n_cols,
                    fields.len()
                )));
            }
            let mut row = Vec::with_capacity(n_cols - 1);
            for f in &fields[..n_cols - 1] {
                row.push(f.parse::<f64>().map_err(|_| {
                    Error::Data(format!(
                        "{}:{}: bad float '{}'",
                        csv_path.display(),
                        lineno + 2,
                        f
                    ))
                })?);
            }
            let label: u8 = fields[n_cols - 1].parse().map_err(|_| {
                Error::Data(format!(
                    "{}:{}: bad label '{}'",
                    csv_path.display(),
                    lineno + 2,
                    fields[n_cols - 1]
                ))
            })?;
            x.push(row);
            y.push(label);
        }
        let ds = Dataset {
            x,
            y,
            meta: DatasetMeta {
                n_samples: meta.n_samples,
                ..meta
            },
        };
        ds.validate()?;
        Ok(ds)
    }
}

fn sidecar_path(csv_path: &Path) -> std::path::PathBuf {
    csv_path.with_extension("meta")
}

fn read_meta(path: &Path) -> Result<DatasetMeta> {
    let text = std::fs::read_to_string(path)?;
    let mut id = None;
    let mut seed = None;
    let mut noise = None;
    let mut n = None;
    let mut domain = None;
    for line in text.lines() {
        let Some((key, value)) = line.split_once('=') else {
            continue;
        };
        match key {
            "id" => id = Some(value.parse::<u8>().map_err(|_| bad_meta(path, key, value))?),
            "seed" => seed = Some(value.parse().map_err(|_| bad_meta(path, key, value))?),
            "noise" => noise = Some(value.parse().map_err(|_| bad_meta(path, key, value))?),
            "n" => n = Some(value.parse().map_err(|_| bad_meta(path, key, value))?),
            "domain" => domain = Some(SamplingDomain::parse_str(value)?),
            _ => {}
        }
    }
    Ok(DatasetMeta {
        experiment: ExperimentId::new(
            id.ok_or_else(|| Error::Data(format!("{}: missing id", path.display())))?,
        )?,
        seed: seed.ok_or_else(|| Error::Data(format!("{}: missing seed", path.display())))?,
        noise: noise.ok_or_else(|| Error::Data(format!("{}: missing noise", path.display())))?,
        n_samples: n.ok_or_else(|| Error::Data(format!("{}: missing n", path.display())))?,
        domain: domain.ok_or_else(|| Error::Data(format!("{}: missing domain", path.display())))?,
    })
}

fn bad_meta(path: &Path, key: &str, value: &str) -> Error {
    Error::Data(format!("{}: bad {} '{}'", path.display(), key, value))
}
