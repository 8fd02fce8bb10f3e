//! Do two scalar functions encode the same concept?
//!
//! Two C¹ functions belong to the same equivalence class when their
//! unit-normalized input gradients agree everywhere, which holds exactly when
//! one is a monotone reparameterization of the other. This module certifies
//! both views empirically: [`gradient_alignment`] compares normalized
//! gradients per probe, and [`link_report`] reconstructs the monotone link by
//! sorting paired function values and checking rank correlation.

use std::fmt::Write as _;
use std::path::Path;

use crate::dataset::DecisionFormula;
use crate::expr::{Compiled, Expr, Workspace};
use crate::nn::MLPModel;
use crate::parallel::map_ordered;
use crate::vecmath::{cosine, normalize};
use crate::{Error, Result};

/// An evaluable, differentiable scalar function of `dim` variables.
pub trait ScalarField: Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> Result<f64>;
    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>>;
}

impl ScalarField for MLPModel {
    fn dim(&self) -> usize {
        self.input_dim
    }

    /// The latent (pre-sigmoid) output.
    fn value(&self, x: &[f64]) -> Result<f64> {
        self.latent(x)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.input_gradient(x)
    }
}

/// An expression tree with a declared arity.
pub struct ExprField {
    expr: Expr,
    program: Compiled,
    dim: usize,
}

impl ExprField {
    pub fn new(expr: Expr, dim: usize) -> Result<ExprField> {
        expr.check_arity(dim)?;
        let program = Compiled::new(&expr);
        Ok(ExprField { expr, program, dim })
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }
}

impl ScalarField for ExprField {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        let mut ws = Workspace::default();
        self.program
            .eval(x, &mut ws)
            .ok_or_else(|| Error::Numeric(format!("expression invalid at {:?}", x)))
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut ws = Workspace::default();
        let mut g = vec![0.0; self.dim];
        self.program
            .eval_grad(x, &mut ws, &mut g)
            .ok_or_else(|| Error::Numeric(format!("expression gradient invalid at {:?}", x)))?;
        Ok(g)
    }
}

impl ScalarField for DecisionFormula {
    fn dim(&self) -> usize {
        self.arity
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        crate::dataset::eval_decision(self, x)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.form
            .grad(x)
            .ok_or_else(|| Error::Numeric(format!("formula gradient invalid at {:?}", x)))
    }
}

/// `map(inner)`: a scalar reparameterization of another field, with the chain
/// rule applied through `dmap`.
pub struct MappedField<'a, M, D> {
    pub inner: &'a dyn ScalarField,
    pub map: M,
    pub dmap: D,
}

impl<M, D> ScalarField for MappedField<'_, M, D>
where
    M: Fn(f64) -> f64 + Sync,
    D: Fn(f64) -> f64 + Sync,
{
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok((self.map)(self.inner.value(x)?))
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let v = self.inner.value(x)?;
        let scale = (self.dmap)(v);
        let mut g = self.inner.gradient(x)?;
        for gi in g.iter_mut() {
            *gi *= scale;
        }
        Ok(g)
    }
}

/// Per-probe cosine statistics between two fields' normalized gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentStats {
    pub mean_cosine: f64,
    pub min_cosine: f64,
    /// Fraction of probes with cosine above `threshold`.
    pub frac_above: f64,
    pub threshold: f64,
    pub n_probes: usize,
}

impl AlignmentStats {
    pub fn summary(&self) -> String {
        format!(
            "n_probes={}\nmean_cosine={:.16e}\nmin_cosine={:.16e}\nfrac_above={:.16e}\nthreshold={}\n",
            self.n_probes, self.mean_cosine, self.min_cosine, self.frac_above, self.threshold
        )
    }
}

/// Compares unit-normalized gradients of two fields on a probe set.
/// Zero-vs-zero gradients count as aligned (cosine 1), zero-vs-nonzero as 0.
pub fn gradient_alignment(
    a: &dyn ScalarField,
    b: &dyn ScalarField,
    probes: &[Vec<f64>],
    threshold: f64,
) -> Result<AlignmentStats> {
    if probes.is_empty() {
        return Err(Error::Usage("probe set is empty".into()));
    }
    let results: Vec<Result<f64>> = map_ordered(probes, |x| {
        let mut ga = a.gradient(x)?;
        let mut gb = b.gradient(x)?;
        normalize(&mut ga);
        normalize(&mut gb);
        Ok(cosine(&ga, &gb))
    });
    let mut cosines = Vec::with_capacity(probes.len());
    let mut bad = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(c) => cosines.push(c),
            Err(_) => bad.push(i),
        }
    }
    if !bad.is_empty() {
        let shown: Vec<String> = bad.iter().take(5).map(|i| i.to_string()).collect();
        return Err(Error::Numeric(format!(
            "non-finite gradients on {} probes (indices {}{})",
            bad.len(),
            shown.join(", "),
            if bad.len() > 5 { ", ..." } else { "" }
        )));
    }
    let n = cosines.len() as f64;
    Ok(AlignmentStats {
        mean_cosine: cosines.iter().sum::<f64>() / n,
        min_cosine: cosines.iter().copied().fold(f64::INFINITY, f64::min),
        frac_above: cosines.iter().filter(|&&c| c > threshold).count() as f64 / n,
        threshold,
        n_probes: cosines.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkDirection {
    Increasing,
    Decreasing,
    Indeterminate,
}

impl LinkDirection {
    fn as_str(self) -> &'static str {
        match self {
            LinkDirection::Increasing => "increasing",
            LinkDirection::Decreasing => "decreasing",
            LinkDirection::Indeterminate => "indeterminate",
        }
    }
}

/// Empirical reconstruction of the monotone link between two fields.
#[derive(Debug, Clone)]
pub struct MonotoneMapReport {
    /// (g value, f value) pairs sorted by g value.
    pub pairs: Vec<(f64, f64)>,
    pub spearman: f64,
    /// Adjacent f-value inversions against the detected trend after sorting
    /// by g.
    pub violations: usize,
    pub direction: LinkDirection,
}

/// Evaluates both fields on the probes, sorts by `g`, and reports the Spearman
/// rank correlation of `f` against `g` together with the monotonicity
/// violation count. Needs at least 10 probes and a non-constant `g`.
pub fn link_report(
    f: &dyn ScalarField,
    g: &dyn ScalarField,
    probes: &[Vec<f64>],
) -> Result<MonotoneMapReport> {
    if probes.len() < 10 {
        return Err(Error::Usage(format!(
            "need at least 10 probes for a link report, got {}",
            probes.len()
        )));
    }
    let mut pairs = Vec::with_capacity(probes.len());
    for x in probes {
        pairs.push((g.value(x)?, f.value(x)?));
    }
    let g0 = pairs[0].0;
    if pairs.iter().all(|(gv, _)| *gv == g0) {
        return Err(Error::Data(
            "g is constant over the probes; the link is degenerate".into(),
        ));
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    let gs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let fs: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let rho = spearman(&gs, &fs);
    let increasing = rho >= 0.0;
    let violations = fs
        .windows(2)
        .filter(|w| if increasing { w[1] < w[0] } else { w[1] > w[0] })
        .count();
    let direction = if rho >= 0.9 {
        LinkDirection::Increasing
    } else if rho <= -0.9 {
        LinkDirection::Decreasing
    } else {
        LinkDirection::Indeterminate
    };
    Ok(MonotoneMapReport {
        pairs,
        spearman: rho,
        violations,
        direction,
    })
}

impl MonotoneMapReport {
    /// Writes the (g, f) pairs as CSV plus a `<stem>.meta` summary block.
    pub fn save(&self, csv_path: &Path) -> Result<()> {
        let mut out = String::from("g,f\n");
        for (g, f) in &self.pairs {
            let _ = writeln!(out, "{:.16e},{:.16e}", g, f);
        }
        std::fs::write(csv_path, out)?;
        std::fs::write(csv_path.with_extension("meta"), self.summary())?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        format!(
            "n_pairs={}\nspearman={:.16e}\nviolations={}\ndirection={}\n",
            self.pairs.len(),
            self.spearman,
            self.violations,
            self.direction.as_str()
        )
    }
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let ra = ranks(a);
    let rb = ranks(b);
    pearson(&ra, &rb)
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Average rank over the tie group, 1-based.
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            out[idx] = rank;
        }
        i = j + 1;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{sample_clean_points, DecisionFormula, ExperimentId};
    use crate::expr::parse;
    use crate::rng::stream;
    use rand::Rng;

    fn exp1_formula() -> DecisionFormula {
        DecisionFormula::for_experiment(ExperimentId::new(1).unwrap())
    }

    fn probes(n: usize, seed: u64) -> Vec<Vec<f64>> {
        sample_clean_points(ExperimentId::new(1).unwrap(), n, seed).unwrap()
    }

    #[test]
    fn alignment_of_monotone_reparameterization() {
        let g = exp1_formula();
        let mapped = MappedField {
            inner: &g,
            map: |u: f64| u + u * u * u,
            dmap: |u: f64| 1.0 + 3.0 * u * u,
        };
        let stats = gradient_alignment(&g, &mapped, &probes(200, 1), 0.95).unwrap();
        assert!(stats.min_cosine > 1.0 - 1e-10, "min {}", stats.min_cosine);
        assert_eq!(stats.frac_above, 1.0);
    }

    #[test]
    fn alignment_of_negation_is_antiparallel() {
        let g = exp1_formula();
        let neg = MappedField {
            inner: &g,
            map: |u: f64| -u,
            dmap: |_| -1.0,
        };
        let stats = gradient_alignment(&g, &neg, &probes(100, 2), 0.0).unwrap();
        assert!((stats.mean_cosine + 1.0).abs() < 1e-12);
    }

    #[test]
    fn alignment_is_symmetric() {
        let g = exp1_formula();
        let other = ExprField::new(parse("x1 + 0.5*x2").unwrap(), 2).unwrap();
        let p = probes(50, 3);
        let ab = gradient_alignment(&g, &other, &p, 0.5).unwrap();
        let ba = gradient_alignment(&other, &g, &p, 0.5).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn link_exp_of_g_is_perfectly_increasing() {
        let g = exp1_formula();
        let f = MappedField {
            inner: &g,
            map: |u: f64| u.exp(),
            dmap: |u: f64| u.exp(),
        };
        let report = link_report(&f, &g, &probes(300, 4)).unwrap();
        assert!((report.spearman - 1.0).abs() < 1e-12);
        assert_eq!(report.violations, 0);
        assert_eq!(report.direction, LinkDirection::Increasing);
    }

    #[test]
    fn link_noise_is_uncorrelated() {
        // Permutation-style null: f is random noise independent of g.
        struct Noise;
        impl ScalarField for Noise {
            fn dim(&self) -> usize {
                2
            }
            fn value(&self, x: &[f64]) -> Result<f64> {
                // Deterministic pseudo-noise keyed on the point.
                let bits = x[0].to_bits() ^ x[1].to_bits().rotate_left(17);
                let mut rng = stream(bits, 0);
                Ok(rng.random::<f64>())
            }
            fn gradient(&self, _: &[f64]) -> Result<Vec<f64>> {
                Ok(vec![0.0, 0.0])
            }
        }
        let g = exp1_formula();
        let report = link_report(&Noise, &g, &probes(1000, 5)).unwrap();
        assert!(report.spearman.abs() < 0.2, "rho = {}", report.spearman);
        assert_eq!(report.direction, LinkDirection::Indeterminate);
    }

    #[test]
    fn link_rejects_degenerate_inputs() {
        let g = exp1_formula();
        let constant = ExprField::new(parse("3.5").unwrap(), 2).unwrap();
        assert!(matches!(
            link_report(&g, &constant, &probes(100, 6)),
            Err(Error::Data(_))
        ));
        assert!(matches!(
            link_report(&g, &g, &probes(5, 7)),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn transitivity_of_alignment() {
        // a ~ b and b ~ c within eps implies a ~ c within 4*eps.
        let g = exp1_formula();
        let b = MappedField {
            inner: &g,
            map: |u: f64| 5.0 * u + 2.0,
            dmap: |_| 5.0,
        };
        let c = MappedField {
            inner: &g,
            map: |u: f64| u + u * u * u,
            dmap: |u: f64| 1.0 + 3.0 * u * u,
        };
        let p = probes(200, 8);
        let eps = 1e-10;
        let ab = gradient_alignment(&g, &b, &p, 0.0).unwrap();
        let bc = gradient_alignment(&b, &c, &p, 0.0).unwrap();
        let ac = gradient_alignment(&g, &c, &p, 0.0).unwrap();
        assert!(ab.min_cosine > 1.0 - eps);
        assert!(bc.min_cosine > 1.0 - eps);
        assert!(ac.min_cosine > 1.0 - 4.0 * eps);
    }

    #[test]
    fn spearman_handles_ties() {
        let a = [1.0, 2.0, 2.0, 3.0];
        let b = [10.0, 20.0, 20.0, 30.0];
        assert!((spearman(&a, &b) - 1.0).abs() < 1e-12);
        let c = [30.0, 20.0, 20.0, 10.0];
        assert!((spearman(&a, &c) + 1.0).abs() < 1e-12);
    }
}
