//! Derivative-free simplex minimization (Nelder-Mead).
//!
//! Used to fit the scalar constants of candidate expressions. The objective
//! may return `+inf` for invalid parameter vectors; the best evaluated point
//! is tracked throughout, so the result is never worse than the start.

/// Options for [`minimize`].
#[derive(Debug, Clone)]
pub struct SimplexOptions {
    /// Evaluation budget (counts every objective call).
    pub max_evals: usize,
    /// Stop when the simplex value spread falls below this (absolute).
    pub tolerance: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            max_evals: 100,
            tolerance: 1e-10,
        }
    }
}

/// Outcome of a [`minimize`] run: best point seen and its value.
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

const ALPHA: f64 = 1.0; // reflection
const GAMMA: f64 = 2.0; // expansion
const RHO: f64 = 0.5; // contraction
const SIGMA: f64 = 0.5; // shrink

fn clean(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Minimizes `f` starting from `x0`. The initial simplex steps each coordinate
/// by `0.1*|x| + 0.1`.
pub fn minimize(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    opts: &SimplexOptions,
) -> SimplexResult {
    let dim = x0.len();
    let mut evals = 0usize;
    let mut best_x = x0.to_vec();
    let mut best_v = f64::INFINITY;

    let mut eval = |x: &[f64], evals: &mut usize, best_x: &mut Vec<f64>, best_v: &mut f64| {
        *evals += 1;
        let v = clean(f(x));
        if v < *best_v {
            *best_v = v;
            best_x.clone_from_slice(x);
        }
        v
    };

    if dim == 0 {
        return SimplexResult {
            x: best_x,
            value: f64::INFINITY,
            evaluations: 0,
        };
    }

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let v0 = eval(x0, &mut evals, &mut best_x, &mut best_v);
    simplex.push((x0.to_vec(), v0));
    for i in 0..dim {
        if evals >= opts.max_evals {
            break;
        }
        let mut p = x0.to_vec();
        p[i] += 0.1 * p[i].abs() + 0.1;
        let v = eval(&p, &mut evals, &mut best_x, &mut best_v);
        simplex.push((p, v));
    }

    while evals < opts.max_evals && simplex.len() == dim + 1 {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[dim].1 - simplex[0].1;
        if spread.is_finite() && spread <= opts.tolerance {
            break;
        }
        if !simplex[0].1.is_finite() {
            // Every vertex is invalid; nothing to steer by.
            break;
        }

        // Centroid of all but the worst.
        let mut centroid = vec![0.0; dim];
        for (p, _) in &simplex[..dim] {
            for (c, x) in centroid.iter_mut().zip(p) {
                *c += x / dim as f64;
            }
        }
        let worst = simplex[dim].clone();

        let reflected: Vec<f64> = centroid
            .iter()
            .zip(&worst.0)
            .map(|(c, w)| c + ALPHA * (c - w))
            .collect();
        let vr = eval(&reflected, &mut evals, &mut best_x, &mut best_v);

        if vr < simplex[0].1 {
            // Try expanding further in the same direction.
            if evals < opts.max_evals {
                let expanded: Vec<f64> = centroid
                    .iter()
                    .zip(&reflected)
                    .map(|(c, r)| c + GAMMA * (r - c))
                    .collect();
                let ve = eval(&expanded, &mut evals, &mut best_x, &mut best_v);
                simplex[dim] = if ve < vr { (expanded, ve) } else { (reflected, vr) };
            } else {
                simplex[dim] = (reflected, vr);
            }
        } else if vr < simplex[dim - 1].1 {
            simplex[dim] = (reflected, vr);
        } else {
            // Contract toward the better of worst/reflected.
            if evals >= opts.max_evals {
                break;
            }
            let toward = if vr < worst.1 { &reflected } else { &worst.0 };
            let contracted: Vec<f64> = centroid
                .iter()
                .zip(toward)
                .map(|(c, t)| c + RHO * (t - c))
                .collect();
            let vc = eval(&contracted, &mut evals, &mut best_x, &mut best_v);
            if vc < worst.1.min(vr) {
                simplex[dim] = (contracted, vc);
            } else {
                // Shrink everything toward the best vertex.
                let anchor = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    if evals >= opts.max_evals {
                        break;
                    }
                    for (x, a) in entry.0.iter_mut().zip(&anchor) {
                        *x = a + SIGMA * (*x - a);
                    }
                    entry.1 = eval(&entry.0.clone(), &mut evals, &mut best_x, &mut best_v);
                }
            }
        }
    }

    SimplexResult {
        x: best_x,
        value: best_v,
        evaluations: evals,
    }
}
