//! Symbolic classification by hinge loss.
//!
//! Instead of matching latent gradients, this baseline evolves expressions
//! that classify the labels directly: the loss is `mean(max(0, 1 - y*T(x)))`
//! with labels in {-1, +1}. It shares the whole evolutionary engine with
//! [`crate::search`]; only the objective differs. Unlike gradient matching,
//! hinge fitness is scale-sensitive and must recover the decision threshold
//! numerically, which is why the classification config profile optimizes
//! constants every generation.

use crate::dataset::Dataset;
use crate::expr::{Compiled, Expr};
use crate::search::{search_objective, SearchConfig, SearchReport};
use crate::search::{EvalScratch, HingeObjective, Objective};
use crate::{Error, Result};

/// Features with labels in {-1, +1}.
#[derive(Debug, Clone)]
pub struct HingeDataset {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

impl HingeDataset {
    /// Maps a {0,1}-labeled dataset to {-1,+1}.
    pub fn from_dataset(ds: &Dataset) -> HingeDataset {
        HingeDataset {
            x: ds.x.clone(),
            y: ds.y.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.first().map_or(0, |r| r.len())
    }

    pub fn has_both_classes(&self) -> bool {
        self.y.iter().any(|&y| y > 0.0) && self.y.iter().any(|&y| y < 0.0)
    }
}

/// Mean hinge loss of `tree` over the batch rows; invalid evaluations make
/// the loss `+inf`.
///
/// Panics if the tree uses more variables than the dataset has features.
pub fn hinge_loss(tree: &Expr, hd: &HingeDataset, batch: &[usize]) -> f64 {
    tree.check_arity(hd.dim()).expect("tree arity within dataset");
    let obj = HingeObjective { x: &hd.x, y: &hd.y };
    let program = Compiled::new(tree);
    let mut scratch = EvalScratch::new(hd.dim());
    obj.loss(&program, program.constants(), batch, &mut scratch)
}

/// [`hinge_loss`] over the whole dataset.
pub fn hinge_loss_full(tree: &Expr, hd: &HingeDataset) -> f64 {
    let all: Vec<usize> = (0..hd.len()).collect();
    hinge_loss(tree, hd, &all)
}

/// Runs the evolutionary search with the hinge objective. The front has the
/// same invariants as the gradient search's front.
pub fn search_classifier(hd: &HingeDataset, cfg: &SearchConfig) -> Result<SearchReport> {
    if hd.is_empty() {
        return Err(Error::Usage("dataset is empty".into()));
    }
    if !hd.has_both_classes() {
        return Err(Error::Usage(
            "hinge classification needs both classes present".into(),
        ));
    }
    let obj = HingeObjective { x: &hd.x, y: &hd.y };
    search_objective(&obj, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn single_point(y: f64) -> HingeDataset {
        HingeDataset {
            x: vec![vec![1.0]],
            y: vec![y],
        }
    }

    #[test]
    fn hinge_values() {
        // y=+1, T(x)=2 -> margin satisfied, loss 0.
        let t2 = parse("2").unwrap();
        assert_eq!(hinge_loss(&t2, &single_point(1.0), &[0]), 0.0);

        // y=-1, T(x)=0.5 -> loss 1.5.
        let half = parse("0.5").unwrap();
        assert!((hinge_loss(&half, &single_point(-1.0), &[0]) - 1.5).abs() < 1e-15);

        // y=+1, T(x)=1 -> hinge boundary, loss 0.
        let one = parse("1").unwrap();
        assert_eq!(hinge_loss(&one, &single_point(1.0), &[0]), 0.0);
    }

    #[test]
    fn hinge_invalid_is_infinite() {
        let t = parse("1/(x1 - 1)").unwrap();
        assert!(hinge_loss(&t, &single_point(1.0), &[0]).is_infinite());
    }

    #[test]
    fn loss_zero_iff_all_margins_met() {
        let hd = HingeDataset {
            x: vec![vec![2.0], vec![-3.0], vec![1.0]],
            y: vec![1.0, -1.0, 1.0],
        };
        let t = parse("x1").unwrap();
        let batch = [0usize, 1, 2];
        assert_eq!(hinge_loss(&t, &hd, &batch), 0.0);

        let weak = parse("0.5*x1").unwrap();
        assert!(hinge_loss(&weak, &hd, &batch) > 0.0);
    }

    #[test]
    fn label_symmetry() {
        let hd = HingeDataset {
            x: vec![vec![0.3], vec![-1.2], vec![2.0], vec![0.9]],
            y: vec![1.0, -1.0, 1.0, -1.0],
        };
        let flipped = HingeDataset {
            x: hd.x.clone(),
            y: hd.y.iter().map(|y| -y).collect(),
        };
        let t = parse("2*x1 - 0.5").unwrap();
        let neg_t = parse("0 - (2*x1 - 0.5)").unwrap();
        let batch = [0usize, 1, 2, 3];
        let a = hinge_loss(&t, &hd, &batch);
        let b = hinge_loss(&neg_t, &flipped, &batch);
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn separable_data_reaches_zero_loss() {
        // y = sign(x1) with |x1| >= 1, so margin 1 is achievable by T = x1.
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 1..=30 {
            let v = 1.0 + (i as f64) * 0.1;
            x.push(vec![v]);
            y.push(1.0);
            x.push(vec![-v]);
            y.push(-1.0);
        }
        let hd = HingeDataset { x, y };
        let cfg = SearchConfig {
            populations: 2,
            population_size: 20,
            iterations: 20,
            seed: 7,
            ..SearchConfig::for_classification()
        };
        let report = search_classifier(&hd, &cfg).unwrap();
        let best = report
            .front
            .entries()
            .iter()
            .map(|e| e.loss)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(best, 0.0, "front: {:?}", report.front.entries().len());
    }

    #[test]
    fn single_class_is_usage_error() {
        let hd = HingeDataset {
            x: vec![vec![1.0], vec![2.0]],
            y: vec![1.0, 1.0],
        };
        assert!(matches!(
            search_classifier(&hd, &SearchConfig::for_classification()),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn shared_machinery_parity() {
        // Same seed and config: gradient search and hinge search evaluate the
        // same number of candidates per iteration.
        let mut points = Vec::new();
        let mut raw = Vec::new();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..40 {
            let a = (i as f64) * 0.1 - 2.0;
            let b = (i as f64) * 0.07 - 1.4;
            points.push(vec![a, b]);
            raw.push(vec![2.0 * a, 4.0 * b]);
            x.push(vec![a, b]);
            y.push(if a + b > 0.0 { 1.0 } else { -1.0 });
        }
        let gs = crate::gradients::GradientSet::from_raw_gradients(points, raw).unwrap();
        let hd = HingeDataset { x, y };
        let cfg = SearchConfig {
            populations: 2,
            population_size: 10,
            iterations: 8,
            early_stop_patience: 100,
            seed: 13,
            ..SearchConfig::default()
        };
        let a = crate::search::search(&gs, &cfg).unwrap();
        let b = search_classifier(&hd, &cfg).unwrap();
        assert_eq!(a.log.len(), b.log.len());
        for (la, lb) in a.log.iter().zip(&b.log) {
            assert_eq!(la.candidate_evaluations, lb.candidate_evaluations);
        }
    }
}
