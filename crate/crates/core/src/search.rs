//! Multi-population genetic search over expression trees.
//!
//! The search minimizes the mean squared difference between the target's
//! unit-normalized gradient rows and those of a candidate tree (for unit rows
//! this equals `2 - 2*cos`, so matching gradients and maximizing cosine
//! similarity are the same objective). Populations evolve independently with
//! per-population RNG streams and migrate on a ring; a hall of fame keeps the
//! best expression per complexity, evaluated on the full point set, and the
//! non-dominated (complexity, loss) entries form the reported Pareto front.
//!
//! The same engine also runs hinge-loss symbolic classification (see
//! [`crate::hinge`]); only the objective differs.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::expr::{BinaryOp, Compiled, Expr, UnaryOp, Workspace};
use crate::gradients::GradientSet;
use crate::optim::{minimize, SimplexOptions};
use crate::parallel::map_ordered;
use crate::rng::stream;
use crate::vecmath::{cosine, normalize, sq_dist};
use crate::{Error, Result};

/// Hyperparameters of the genetic search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchConfig {
    pub populations: usize,
    pub population_size: usize,
    /// Iteration budget. Migration, front maintenance, and logging happen
    /// once per iteration.
    pub iterations: usize,
    /// Generations each population evolves within one iteration.
    pub cycles_per_iteration: usize,
    /// Points per fitness batch; a fresh batch is drawn every generation.
    pub batch_size: usize,
    pub max_tree_size: usize,
    pub crossover_prob: f64,
    pub mutation_prob: f64,
    /// Complexity penalty added to the loss during selection only.
    pub parsimony: f64,
    pub tournament_size: usize,
    pub migration_every: usize,
    pub migration_count: usize,
    /// Cadence (in generations) of simplify + constant optimization.
    pub const_opt_every: usize,
    /// Evaluation budget of one simplex run.
    pub const_opt_evals: usize,
    /// Stop after this many iterations without a hall-of-fame improvement.
    pub early_stop_patience: usize,
    /// Score gradients up to sign (loss `2 - 2|cos|`). Off by default: the
    /// decision-boundary orientation fixes the sign in practice.
    pub sign_insensitive: bool,
    pub seed: u64,
    pub unary_ops: Vec<UnaryOp>,
    pub binary_ops: Vec<BinaryOp>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            populations: 8,
            population_size: 50,
            iterations: 200,
            cycles_per_iteration: 4,
            batch_size: 25,
            max_tree_size: 30,
            crossover_prob: 0.3,
            mutation_prob: 0.7,
            parsimony: 1e-4,
            tournament_size: 5,
            migration_every: 10,
            migration_count: 2,
            const_opt_every: 5,
            const_opt_evals: 100,
            early_stop_patience: 50,
            sign_insensitive: false,
            seed: 0,
            unary_ops: vec![UnaryOp::Sin, UnaryOp::Exp],
            binary_ops: vec![
                BinaryOp::Add,
                BinaryOp::Sub,
                BinaryOp::Mul,
                BinaryOp::Div,
            ],
        }
    }
}

impl SearchConfig {
    /// Profile for hinge-loss classification: the threshold must be fitted
    /// numerically, so constants are optimized every generation.
    pub fn for_classification() -> Self {
        SearchConfig {
            const_opt_every: 1,
            ..SearchConfig::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.populations == 0 || self.population_size == 0 {
            return Err(Error::Usage("need at least one population and member".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Usage("batch size must be at least 1".into()));
        }
        if self.max_tree_size == 0 {
            return Err(Error::Usage("max tree size must be at least 1".into()));
        }
        for p in [self.crossover_prob, self.mutation_prob] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Usage("probabilities must be in [0, 1]".into()));
            }
        }
        if self.crossover_prob + self.mutation_prob > 1.0 + 1e-12 {
            return Err(Error::Usage(
                "crossover and mutation probabilities must sum to at most 1".into(),
            ));
        }
        if self.unary_ops.is_empty() && self.binary_ops.is_empty() {
            return Err(Error::Usage("operator set must not be empty".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Objectives

pub(crate) struct EvalScratch {
    ws: Workspace,
    grad: Vec<f64>,
}

impl EvalScratch {
    pub(crate) fn new(arity: usize) -> Self {
        EvalScratch {
            ws: Workspace::default(),
            grad: vec![0.0; arity],
        }
    }
}

/// What the engine minimizes. Implementations must be pure per point.
pub(crate) trait Objective: Sync {
    fn arity(&self) -> usize;
    fn n_points(&self) -> usize;
    /// Mean loss of the candidate over `batch` (indices into the point set);
    /// `+inf` marks an invalid candidate.
    fn loss(
        &self,
        program: &Compiled,
        consts: &[f64],
        batch: &[usize],
        scratch: &mut EvalScratch,
    ) -> f64;
}

pub(crate) struct GradientObjective<'a> {
    pub gs: &'a GradientSet,
    pub sign_insensitive: bool,
}

impl Objective for GradientObjective<'_> {
    fn arity(&self) -> usize {
        self.gs.dim()
    }

    fn n_points(&self) -> usize {
        self.gs.len()
    }

    fn loss(
        &self,
        program: &Compiled,
        consts: &[f64],
        batch: &[usize],
        scratch: &mut EvalScratch,
    ) -> f64 {
        let mut total = 0.0;
        for &i in batch {
            let point = &self.gs.points[i];
            if program
                .eval_grad_with(point, consts, &mut scratch.ws, &mut scratch.grad)
                .is_none()
            {
                return f64::INFINITY;
            }
            normalize(&mut scratch.grad);
            let target = &self.gs.gradients[i];
            let direct = sq_dist(target, &scratch.grad);
            total += if self.sign_insensitive {
                let flipped: f64 = target
                    .iter()
                    .zip(&scratch.grad)
                    .map(|(t, g)| (t + g) * (t + g))
                    .sum();
                direct.min(flipped)
            } else {
                direct
            };
        }
        total / batch.len() as f64
    }
}

pub(crate) struct HingeObjective<'a> {
    pub x: &'a [Vec<f64>],
    pub y: &'a [f64],
}

impl Objective for HingeObjective<'_> {
    fn arity(&self) -> usize {
        self.x.first().map_or(0, |r| r.len())
    }

    fn n_points(&self) -> usize {
        self.x.len()
    }

    fn loss(
        &self,
        program: &Compiled,
        consts: &[f64],
        batch: &[usize],
        scratch: &mut EvalScratch,
    ) -> f64 {
        let mut total = 0.0;
        for &i in batch {
            match program.eval_with(&self.x[i], consts, &mut scratch.ws) {
                Some(v) => total += (1.0 - self.y[i] * v).max(0.0),
                None => return f64::INFINITY,
            }
        }
        total / batch.len() as f64
    }
}

// ---------------------------------------------------------------------------
// Public fitness surface

/// Squared Euclidean distance between two gradient rows (the per-point term
/// of the search loss).
pub fn gradient_row_mse(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b)
}

/// Cosine similarity between two gradient rows; zero-vs-zero counts as
/// aligned, zero-vs-nonzero as 0.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    cosine(a, b)
}

/// Mean squared normalized-gradient mismatch of `tree` over the batch rows of
/// `gs`. The tree's gradient rows are unit-normalized with exact zeros kept;
/// any invalid gradient makes the fitness `+inf`.
///
/// Panics if the tree uses more variables than the gradient set has features.
pub fn fitness(tree: &Expr, gs: &GradientSet, batch: &[usize]) -> f64 {
    tree.check_arity(gs.dim()).expect("tree arity within gradient set");
    let obj = GradientObjective {
        gs,
        sign_insensitive: false,
    };
    let program = Compiled::new(tree);
    let mut scratch = EvalScratch::new(gs.dim());
    obj.loss(&program, program.constants(), batch, &mut scratch)
}

/// [`fitness`] over every row of the gradient set.
pub fn fitness_full(tree: &Expr, gs: &GradientSet) -> f64 {
    let all: Vec<usize> = (0..gs.len()).collect();
    fitness(tree, gs, &all)
}

/// Simplex descent over the constant nodes of `tree`, minimizing [`fitness`]
/// on `batch`. Returns a tree whose batch fitness is never worse than the
/// input's; a constant-free tree is returned unchanged.
pub fn optimize_constants(
    tree: &Expr,
    gs: &GradientSet,
    batch: &[usize],
    opts: &SimplexOptions,
) -> Expr {
    let obj = GradientObjective {
        gs,
        sign_insensitive: false,
    };
    optimize_constants_obj(tree, &obj, batch, opts).0
}

fn optimize_constants_obj(
    tree: &Expr,
    obj: &dyn Objective,
    batch: &[usize],
    opts: &SimplexOptions,
) -> (Expr, usize) {
    let consts = tree.constants();
    if consts.is_empty() {
        return (tree.clone(), 0);
    }
    let program = Compiled::new(tree);
    let mut scratch = EvalScratch::new(obj.arity());
    let result = minimize(
        |c: &[f64]| obj.loss(&program, c, batch, &mut scratch),
        &consts,
        opts,
    );
    if result.value.is_finite() && result.x.iter().all(|v| v.is_finite()) {
        let mut out = tree.clone();
        out.set_constants(&result.x);
        (out, result.evaluations)
    } else {
        (tree.clone(), result.evaluations)
    }
}

// ---------------------------------------------------------------------------
// Pareto front

/// One non-dominated candidate.
#[derive(Debug, Clone)]
pub struct FrontEntry {
    pub complexity: usize,
    pub loss: f64,
    pub expr: Expr,
}

/// Non-dominated (complexity, loss) candidates: complexity strictly
/// increasing, loss strictly decreasing.
#[derive(Debug, Clone, Default)]
pub struct ParetoFront {
    entries: Vec<FrontEntry>,
}

impl ParetoFront {
    /// Keeps the non-dominated subset of arbitrary candidates.
    pub fn from_candidates(candidates: Vec<FrontEntry>) -> ParetoFront {
        let mut best: Vec<Option<FrontEntry>> = Vec::new();
        for cand in candidates {
            if !cand.loss.is_finite() {
                continue;
            }
            if best.len() <= cand.complexity {
                best.resize_with(cand.complexity + 1, || None);
            }
            let slot = &mut best[cand.complexity];
            if slot.as_ref().map_or(true, |e| cand.loss < e.loss) {
                *slot = Some(cand);
            }
        }
        let mut entries = Vec::new();
        let mut best_loss = f64::INFINITY;
        for entry in best.into_iter().flatten() {
            if entry.loss < best_loss {
                best_loss = entry.loss;
                entries.push(entry);
            }
        }
        ParetoFront { entries }
    }

    pub fn entries(&self) -> &[FrontEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Writes `complexity,loss,expression` rows.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::from("complexity,loss,expression\n");
        for e in &self.entries {
            let _ = writeln!(out, "{},{:.16e},{}", e.complexity, e.loss, e.expr.to_text());
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ParetoFront> {
        let text = std::fs::read_to_string(path)?;
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate().skip(1) {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.splitn(3, ',');
            let (c, l, e) = (parts.next(), parts.next(), parts.next());
            let (Some(c), Some(l), Some(e)) = (c, l, e) else {
                return Err(Error::Data(format!(
                    "{}:{}: expected complexity,loss,expression",
                    path.display(),
                    lineno + 1
                )));
            };
            entries.push(FrontEntry {
                complexity: c.parse().map_err(|_| {
                    Error::Data(format!("{}:{}: bad complexity", path.display(), lineno + 1))
                })?,
                loss: l.parse().map_err(|_| {
                    Error::Data(format!("{}:{}: bad loss", path.display(), lineno + 1))
                })?,
                expr: crate::expr::parse(e)?,
            });
        }
        Ok(ParetoFront { entries })
    }
}

/// The Pareto entry selected as the likely true model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KneePick {
    /// Index into [`ParetoFront::entries`].
    pub index: usize,
    /// Set when the front had fewer than two entries to compare.
    pub singleton: bool,
}

/// Picks the entry following the largest drop of log10(loss) per unit of
/// complexity; ties break toward lower complexity.
pub fn knee(front: &ParetoFront) -> Result<KneePick> {
    let entries = front.entries();
    if entries.is_empty() {
        return Err(Error::Usage("cannot pick a knee of an empty front".into()));
    }
    if entries.len() == 1 {
        return Ok(KneePick {
            index: 0,
            singleton: true,
        });
    }
    let log = |l: f64| l.max(1e-300).log10();
    let mut best_index = 0;
    let mut best_score = 0.0;
    for i in 1..entries.len() {
        let drop = log(entries[i - 1].loss) - log(entries[i].loss);
        let run = (entries[i].complexity - entries[i - 1].complexity) as f64;
        let score = drop / run;
        if score > best_score {
            best_score = score;
            best_index = i;
        }
    }
    Ok(KneePick {
        index: best_index,
        singleton: false,
    })
}

// ---------------------------------------------------------------------------
// Random trees and genetic operators

fn random_constant(rng: &mut ChaCha8Rng) -> f64 {
    let normal = Normal::new(0.0, 2.0).expect("valid");
    normal.sample(rng)
}

fn random_leaf(rng: &mut ChaCha8Rng, arity: usize) -> Expr {
    if rng.random::<f64>() < 0.5 {
        Expr::var(rng.random_range(0..arity))
    } else {
        Expr::constant(random_constant(rng))
    }
}

fn random_tree(rng: &mut ChaCha8Rng, arity: usize, cfg: &SearchConfig, depth: usize) -> Expr {
    if depth == 0 || rng.random::<f64>() < 0.3 {
        return random_leaf(rng, arity);
    }
    let take_unary = !cfg.unary_ops.is_empty()
        && (cfg.binary_ops.is_empty() || rng.random::<f64>() < 0.15);
    if take_unary {
        let op = cfg.unary_ops[rng.random_range(0..cfg.unary_ops.len())];
        Expr::unary(op, random_tree(rng, arity, cfg, depth - 1))
    } else {
        let op = cfg.binary_ops[rng.random_range(0..cfg.binary_ops.len())];
        Expr::binary(
            op,
            random_tree(rng, arity, cfg, depth - 1),
            random_tree(rng, arity, cfg, depth - 1),
        )
    }
}

fn random_tree_sized(rng: &mut ChaCha8Rng, arity: usize, cfg: &SearchConfig) -> Expr {
    for depth in [3, 2, 1] {
        let t = random_tree(rng, arity, cfg, depth);
        if t.complexity() <= cfg.max_tree_size {
            return t;
        }
    }
    random_leaf(rng, arity)
}

fn node_indices_where(expr: &Expr, pred: impl Fn(&Expr) -> bool) -> Vec<usize> {
    let mut out = Vec::new();
    for i in 0..expr.complexity() {
        if pred(expr.subtree(i).expect("index in range")) {
            out.push(i);
        }
    }
    out
}

fn mutate(rng: &mut ChaCha8Rng, parent: &Expr, arity: usize, cfg: &SearchConfig) -> Expr {
    let mut child = parent.clone();
    match rng.random_range(0..5u8) {
        // Replace an operator with one of the same arity.
        0 => {
            let ops = node_indices_where(&child, |n| {
                matches!(n, Expr::Unary(..) | Expr::Binary(..))
            });
            if let Some(&i) = pick(rng, &ops) {
                let node = child.subtree_mut(i).expect("index in range");
                match node {
                    Expr::Unary(op, _) => {
                        *op = cfg.unary_ops[rng.random_range(0..cfg.unary_ops.len())]
                    }
                    Expr::Binary(op, _, _) => {
                        *op = cfg.binary_ops[rng.random_range(0..cfg.binary_ops.len())]
                    }
                    _ => unreachable!(),
                }
            }
        }
        // Perturb one constant.
        1 => {
            let consts = node_indices_where(&child, |n| matches!(n, Expr::Const(_)));
            if let Some(&i) = pick(rng, &consts) {
                if let Some(Expr::Const(c)) = child.subtree_mut(i) {
                    let normal = Normal::new(0.0, 0.2 * (c.abs() + 0.2)).expect("valid");
                    let perturbed = *c + normal.sample(rng);
                    if perturbed.is_finite() {
                        *c = perturbed;
                    }
                }
            }
        }
        // Insert a node above a random subtree.
        2 => {
            let i = rng.random_range(0..child.complexity());
            let node = child.subtree_mut(i).expect("index in range");
            let old = std::mem::replace(node, Expr::Const(0.0));
            let wrap_unary = !cfg.unary_ops.is_empty() && rng.random::<f64>() < 0.2;
            *node = if wrap_unary {
                let op = cfg.unary_ops[rng.random_range(0..cfg.unary_ops.len())];
                Expr::unary(op, old)
            } else {
                let op = cfg.binary_ops[rng.random_range(0..cfg.binary_ops.len())];
                let leaf = random_leaf(rng, arity);
                if rng.random::<f64>() < 0.5 {
                    Expr::binary(op, old, leaf)
                } else {
                    Expr::binary(op, leaf, old)
                }
            };
        }
        // Delete: collapse a random subtree to a leaf.
        3 => {
            let i = rng.random_range(0..child.complexity());
            let leaf = random_leaf(rng, arity);
            *child.subtree_mut(i).expect("index in range") = leaf;
        }
        // Replace a random subtree with fresh material.
        _ => {
            let i = rng.random_range(0..child.complexity());
            let fresh = random_tree(rng, arity, cfg, 2);
            *child.subtree_mut(i).expect("index in range") = fresh;
        }
    }
    child
}

fn crossover(rng: &mut ChaCha8Rng, a: &Expr, b: &Expr) -> Expr {
    let mut child = a.clone();
    let i = rng.random_range(0..child.complexity());
    let j = rng.random_range(0..b.complexity());
    let donor = b.subtree(j).expect("index in range").clone();
    *child.subtree_mut(i).expect("index in range") = donor;
    child
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, items: &'a [T]) -> Option<&'a T> {
    if items.is_empty() {
        None
    } else {
        Some(&items[rng.random_range(0..items.len())])
    }
}

// ---------------------------------------------------------------------------
// Populations

struct Member {
    expr: Expr,
    program: Compiled,
    loss: f64,
}

impl Member {
    fn new(expr: Expr) -> Member {
        let program = Compiled::new(&expr);
        Member {
            expr,
            program,
            loss: f64::INFINITY,
        }
    }

    fn with_loss(expr: Expr, loss: f64) -> Member {
        let program = Compiled::new(&expr);
        Member { expr, program, loss }
    }
}

impl Clone for Member {
    fn clone(&self) -> Self {
        Member {
            expr: self.expr.clone(),
            program: Compiled::new(&self.expr),
            loss: self.loss,
        }
    }
}

/// One subpopulation with its own RNG stream and generation counter.
#[derive(Clone)]
pub struct Population {
    members: Vec<Member>,
    rng: ChaCha8Rng,
    generation: usize,
}

impl Population {
    /// A fresh random population. `stream` separates the RNG streams of the
    /// subpopulations derived from one seed.
    pub fn random(arity: usize, cfg: &SearchConfig, stream_id: u64) -> Population {
        let mut rng = stream(cfg.seed, 0xB0_0000 + stream_id);
        let members = (0..cfg.population_size)
            .map(|_| Member::new(random_tree_sized(&mut rng, arity, cfg)))
            .collect();
        Population {
            members,
            rng,
            generation: 0,
        }
    }

    pub fn exprs(&self) -> impl Iterator<Item = &Expr> {
        self.members.iter().map(|m| &m.expr)
    }

    /// Batch losses from the most recent evaluation (`+inf` before the first).
    pub fn losses(&self) -> Vec<f64> {
        self.members.iter().map(|m| m.loss).collect()
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }
}

struct EvolveOutcome {
    pop: Population,
    /// (batch loss, expression) of every member evaluated this generation.
    evaluated: Vec<(f64, Expr)>,
    /// Fitness evaluations of population candidates this generation.
    candidate_evaluations: u64,
    /// All other objective evaluations (constant optimizer).
    extra_evaluations: u64,
}

fn sample_batch(rng: &mut ChaCha8Rng, n_points: usize, batch_size: usize) -> Vec<usize> {
    if n_points >= batch_size {
        // Partial Fisher-Yates: first `batch_size` entries of a shuffle.
        let mut idx: Vec<usize> = (0..n_points).collect();
        for i in 0..batch_size {
            let j = rng.random_range(i..n_points);
            idx.swap(i, j);
        }
        idx.truncate(batch_size);
        idx
    } else {
        (0..batch_size)
            .map(|_| rng.random_range(0..n_points))
            .collect()
    }
}

fn tournament(rng: &mut ChaCha8Rng, members: &[Member], cfg: &SearchConfig) -> usize {
    let mut best = rng.random_range(0..members.len());
    let score = |m: &Member| m.loss + cfg.parsimony * m.expr.complexity() as f64;
    let mut best_score = score(&members[best]);
    for _ in 1..cfg.tournament_size {
        let i = rng.random_range(0..members.len());
        let s = score(&members[i]);
        if s < best_score {
            best = i;
            best_score = s;
        }
    }
    best
}

/// One generation: evaluate on a fresh batch, breed by tournament selection
/// with subtree crossover and five mutation kinds, reject oversized offspring
/// in favor of their parent, and on the configured cadence simplify and
/// constant-optimize newly created offspring.
pub fn evolve(pop: Population, gs: &GradientSet, cfg: &SearchConfig) -> Population {
    let obj = GradientObjective {
        gs,
        sign_insensitive: cfg.sign_insensitive,
    };
    evolve_objective(pop, &obj, cfg).pop
}

fn evolve_objective(mut pop: Population, obj: &dyn Objective, cfg: &SearchConfig) -> EvolveOutcome {
    let arity = obj.arity();
    pop.generation += 1;
    let batch = sample_batch(&mut pop.rng, obj.n_points(), cfg.batch_size);

    // Evaluate all members on this generation's batch, in input order.
    let losses: Vec<f64> = map_ordered(&pop.members, |m| {
        let mut scratch = EvalScratch::new(arity);
        obj.loss(&m.program, m.program.constants(), &batch, &mut scratch)
    });
    for (m, &l) in pop.members.iter_mut().zip(&losses) {
        m.loss = l;
    }
    let candidate_evaluations = pop.members.len() as u64;
    let evaluated: Vec<(f64, Expr)> = pop
        .members
        .iter()
        .map(|m| (m.loss, m.expr.clone()))
        .collect();

    // Breed. `fresh` marks offspring built from new genetic material.
    let mut offspring: Vec<(Expr, f64, bool)> = Vec::with_capacity(pop.members.len());
    for slot in 0..pop.members.len() {
        let r: f64 = pop.rng.random();
        if r < cfg.crossover_prob {
            let a = tournament(&mut pop.rng, &pop.members, cfg);
            let b = tournament(&mut pop.rng, &pop.members, cfg);
            let child = crossover(&mut pop.rng, &pop.members[a].expr, &pop.members[b].expr);
            if child.complexity() <= cfg.max_tree_size {
                offspring.push((child, f64::INFINITY, true));
            } else {
                let parent = &pop.members[a];
                offspring.push((parent.expr.clone(), parent.loss, false));
            }
        } else if r < cfg.crossover_prob + cfg.mutation_prob {
            let p = tournament(&mut pop.rng, &pop.members, cfg);
            let child = mutate(&mut pop.rng, &pop.members[p].expr, arity, cfg);
            if child.complexity() <= cfg.max_tree_size {
                offspring.push((child, f64::INFINITY, true));
            } else {
                let parent = &pop.members[p];
                offspring.push((parent.expr.clone(), parent.loss, false));
            }
        } else {
            // Identity reproduction keeps the member in place.
            let m = &pop.members[slot];
            offspring.push((m.expr.clone(), m.loss, false));
        }
    }

    // Cleanup cadence: simplify the new material and fit constants on a
    // random subset (small budget here; the full-set refit of the front does
    // the precise fitting).
    let mut extra_evaluations = 0;
    if cfg.const_opt_every > 0 && pop.generation % cfg.const_opt_every == 0 {
        let opts = SimplexOptions {
            max_evals: (cfg.const_opt_evals / 2).max(10),
            tolerance: 1e-10,
        };
        // Gates are drawn serially so the RNG stream stays schedule-independent.
        let jobs: Vec<(Expr, bool, bool)> = offspring
            .iter()
            .map(|(expr, _, fresh)| {
                let gate = *fresh && pop.rng.random::<f64>() < 0.35;
                (expr.clone(), *fresh, gate)
            })
            .collect();
        let tuned: Vec<Option<(Expr, usize)>> = map_ordered(&jobs, |(expr, fresh, optimize)| {
            if !*fresh {
                return None;
            }
            let simplified = expr.simplify();
            Some(if *optimize {
                optimize_constants_obj(&simplified, obj, &batch, &opts)
            } else {
                (simplified, 0)
            })
        });
        for (slot, t) in tuned.into_iter().enumerate() {
            if let Some((expr, evals)) = t {
                offspring[slot].0 = expr;
                extra_evaluations += evals as u64;
            }
        }
    }

    pop.members = offspring
        .into_iter()
        .map(|(expr, loss, _)| Member::with_loss(expr, loss))
        .collect();

    EvolveOutcome {
        pop,
        evaluated,
        candidate_evaluations,
        extra_evaluations,
    }
}

// ---------------------------------------------------------------------------
// Search engine

/// Per-iteration search record.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationLog {
    pub iteration: usize,
    /// Fitness evaluations of evolved candidates this iteration.
    pub candidate_evaluations: u64,
    /// Constant-optimizer and full-set evaluations this iteration.
    pub extra_evaluations: u64,
    pub best_loss: f64,
    pub front_size: usize,
}

/// Search output: the Pareto front plus the per-iteration log.
#[derive(Debug, Clone)]
pub struct SearchReport {
    pub front: ParetoFront,
    pub log: Vec<IterationLog>,
}

/// Writes the run log as key-value lines, one per iteration.
pub fn save_log(log: &[IterationLog], path: &Path) -> Result<()> {
    let mut out = String::new();
    for row in log {
        let _ = writeln!(
            out,
            "iteration={} candidate_evaluations={} extra_evaluations={} best_loss={:.16e} front_size={}",
            row.iteration, row.candidate_evaluations, row.extra_evaluations, row.best_loss, row.front_size
        );
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[derive(Clone)]
struct HofEntry {
    expr: Expr,
    loss: f64,
}

/// Runs the multi-population search against a gradient set, minimizing the
/// normalized-gradient MSE, and returns the Pareto front with losses
/// evaluated on the full gradient set.
pub fn search(gs: &GradientSet, cfg: &SearchConfig) -> Result<SearchReport> {
    if gs.is_empty() {
        return Err(Error::Usage("gradient set is empty".into()));
    }
    let obj = GradientObjective {
        gs,
        sign_insensitive: cfg.sign_insensitive,
    };
    search_objective(&obj, cfg)
}

pub(crate) fn search_objective(obj: &dyn Objective, cfg: &SearchConfig) -> Result<SearchReport> {
    cfg.validate()?;
    if obj.n_points() == 0 {
        return Err(Error::Usage("no data points to search against".into()));
    }
    let arity = obj.arity();
    let full_batch: Vec<usize> = (0..obj.n_points()).collect();
    let opts = SimplexOptions {
        max_evals: cfg.const_opt_evals,
        tolerance: 1e-10,
    };

    let mut populations: Vec<Population> = (0..cfg.populations)
        .map(|i| Population::random(arity, cfg, i as u64))
        .collect();
    let mut hof: Vec<Option<HofEntry>> = vec![None; cfg.max_tree_size + 1];
    let mut log = Vec::with_capacity(cfg.iterations);
    let mut last_improvement = 0usize;

    let cycles = cfg.cycles_per_iteration.max(1);
    for iteration in 1..=cfg.iterations {
        let outcomes: Vec<EvolveOutcome> = map_ordered(&populations, |p| {
            let mut outcome = evolve_objective(p.clone(), obj, cfg);
            for _ in 1..cycles {
                let mut next = evolve_objective(outcome.pop, obj, cfg);
                next.evaluated.splice(0..0, outcome.evaluated);
                next.candidate_evaluations += outcome.candidate_evaluations;
                next.extra_evaluations += outcome.extra_evaluations;
                outcome = next;
            }
            outcome
        });

        let mut candidate_evaluations = 0;
        let mut extra_evaluations = 0;
        let mut improved = false;
        let mut next_populations = Vec::with_capacity(outcomes.len());
        for outcome in outcomes {
            candidate_evaluations += outcome.candidate_evaluations;
            extra_evaluations += outcome.extra_evaluations;
            for (batch_loss, expr) in &outcome.evaluated {
                if !batch_loss.is_finite() {
                    continue;
                }
                let c = expr.complexity();
                if c > cfg.max_tree_size {
                    continue;
                }
                let current = hof[c].as_ref();
                // Screen with the batch loss before paying for a full pass.
                if let Some(entry) = current {
                    if *batch_loss >= entry.loss || *expr == entry.expr {
                        continue;
                    }
                }
                let mut scratch = EvalScratch::new(arity);
                let program = Compiled::new(expr);
                let full =
                    obj.loss(&program, program.constants(), &full_batch, &mut scratch);
                extra_evaluations += 1;
                if full.is_finite() && hof[c].as_ref().map_or(true, |e| full < e.loss) {
                    hof[c] = Some(HofEntry {
                        expr: expr.clone(),
                        loss: full,
                    });
                    improved = true;
                }
            }
            next_populations.push(outcome.pop);
        }
        populations = next_populations;

        // Refit the constants of the hall of fame on the full set.
        if cfg.const_opt_every > 0 && iteration % cfg.const_opt_every == 0 {
            let entries: Vec<Expr> = hof
                .iter()
                .flatten()
                .map(|e| e.expr.clone())
                .collect();
            let tuned: Vec<(Expr, f64, usize)> = map_ordered(&entries, |expr| {
                let simplified = expr.simplify();
                let (out, evals) = optimize_constants_obj(&simplified, obj, &full_batch, &opts);
                let program = Compiled::new(&out);
                let mut scratch = EvalScratch::new(arity);
                let loss = obj.loss(&program, program.constants(), &full_batch, &mut scratch);
                (out, loss, evals + 1)
            });
            for (expr, loss, evals) in tuned {
                extra_evaluations += evals as u64;
                let c = expr.complexity();
                if c > cfg.max_tree_size || !loss.is_finite() {
                    continue;
                }
                if hof[c].as_ref().map_or(true, |e| loss < e.loss) {
                    hof[c] = Some(HofEntry { expr, loss });
                    improved = true;
                }
            }
        }

        // Ring migration between neighbor populations, plus hall-of-fame
        // migrants and random immigrants to keep the islands diverse.
        if cfg.migration_every > 0
            && iteration % cfg.migration_every == 0
            && populations.len() > 1
        {
            migrate(&mut populations, &hof, arity, cfg);
        }

        let best_loss = hof
            .iter()
            .flatten()
            .map(|e| e.loss)
            .fold(f64::INFINITY, f64::min);
        log.push(IterationLog {
            iteration,
            candidate_evaluations,
            extra_evaluations,
            best_loss,
            front_size: hof.iter().flatten().count(),
        });

        if improved {
            last_improvement = iteration;
        } else if iteration - last_improvement >= cfg.early_stop_patience {
            break;
        }
    }

    let candidates: Vec<FrontEntry> = hof
        .iter()
        .enumerate()
        .filter_map(|(c, e)| {
            e.as_ref().map(|e| FrontEntry {
                complexity: c,
                loss: e.loss,
                expr: e.expr.clone(),
            })
        })
        .collect();
    Ok(SearchReport {
        front: ParetoFront::from_candidates(candidates),
        log,
    })
}

fn migrate(
    populations: &mut [Population],
    hof: &[Option<HofEntry>],
    arity: usize,
    cfg: &SearchConfig,
) {
    let k = cfg.migration_count.min(cfg.population_size);
    // Snapshot each population's best members before any replacement.
    let tops: Vec<Vec<Member>> = populations
        .iter()
        .map(|p| {
            let mut order: Vec<usize> = (0..p.members.len()).collect();
            order.sort_by(|&a, &b| p.members[a].loss.total_cmp(&p.members[b].loss));
            order[..k].iter().map(|&i| p.members[i].clone()).collect()
        })
        .collect();
    let hof_entries: Vec<&HofEntry> = hof.iter().flatten().collect();

    let n = populations.len();
    for (i, tops_i) in tops.into_iter().enumerate() {
        let receiver = &mut populations[(i + 1) % n];
        let mut order: Vec<usize> = (0..receiver.members.len()).collect();
        order.sort_by(|&a, &b| receiver.members[b].loss.total_cmp(&receiver.members[a].loss));
        let mut worst = order.into_iter();
        for migrant in tops_i {
            if let Some(slot) = worst.next() {
                receiver.members[slot] = migrant;
            }
        }
        // One front member per population; each receiver draws its own, so
        // different islands pull different building blocks.
        if !hof_entries.is_empty() {
            if let Some(slot) = worst.next() {
                let pick = hof_entries[receiver.rng.random_range(0..hof_entries.len())];
                receiver.members[slot] = Member::with_loss(pick.expr.clone(), pick.loss);
            }
        }
        // Random immigrants keep exploring after the islands converge.
        for _ in 0..(cfg.population_size / 10).max(1) {
            if let Some(slot) = worst.next() {
                let fresh = random_tree_sized(&mut receiver.rng, arity, cfg);
                receiver.members[slot] = Member::new(fresh);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn exp1_gradient_set(n: usize, seed: u64) -> GradientSet {
        // Analytic gradients of x1^2 + 2*x2^2 on random points off the origin.
        let mut rng = stream(seed, 77);
        let mut points = Vec::new();
        let mut raw = Vec::new();
        while points.len() < n {
            let x = rng.random::<f64>() * 3.0 - 1.5;
            let y = rng.random::<f64>() * 3.0 - 1.5;
            if x.abs() + y.abs() < 0.1 {
                continue;
            }
            points.push(vec![x, y]);
            raw.push(vec![2.0 * x, 4.0 * y]);
        }
        GradientSet::from_raw_gradients(points, raw).unwrap()
    }

    #[test]
    fn fitness_of_true_formula_is_zero() {
        let gs = exp1_gradient_set(50, 1);
        let tree = parse("x1*x1 + 2*x2*x2").unwrap();
        let batch: Vec<usize> = (0..gs.len()).collect();
        assert!(fitness(&tree, &gs, &batch) < 1e-28);
    }

    #[test]
    fn fitness_orthogonal_and_antiparallel() {
        let gs = GradientSet::from_raw_gradients(
            vec![vec![1.0, 1.0]],
            vec![vec![1.0, 0.0]],
        )
        .unwrap();
        // grad(x2) = (0,1): orthogonal to target (1,0) -> MSE 2, CSL 0.
        let t_orth = parse("x2").unwrap();
        let mse = fitness(&t_orth, &gs, &[0]);
        assert!((mse - 2.0).abs() < 1e-15);
        let csl = cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]);
        assert!((mse - (2.0 - 2.0 * csl)).abs() < 1e-15);

        // grad(0 - x1) = (-1,0): antiparallel -> MSE 4.
        let t_anti = parse("0 - x1").unwrap();
        assert!((fitness(&t_anti, &gs, &[0]) - 4.0).abs() < 1e-15);
    }

    #[test]
    fn fitness_invalid_gradient_is_infinite() {
        let gs = exp1_gradient_set(10, 2);
        let tree = parse("1/(x1 - x1)").unwrap();
        let batch: Vec<usize> = (0..gs.len()).collect();
        assert!(fitness(&tree, &gs, &batch).is_infinite());
    }

    #[test]
    fn fitness_affine_target_invariance() {
        // a*t + b (a > 0) has the same fitness as t.
        let gs = exp1_gradient_set(40, 3);
        let batch: Vec<usize> = (0..gs.len()).collect();
        let t = parse("x1*x1 + 1.3*x2*x2").unwrap();
        let scaled = parse("2.7*(x1*x1 + 1.3*x2*x2) + 0.4").unwrap();
        let a = fitness(&t, &gs, &batch);
        let b = fitness(&scaled, &gs, &batch);
        assert!((a - b).abs() < 1e-10, "{} vs {}", a, b);
    }

    #[test]
    fn optimize_constants_recovers_coefficient() {
        let gs = exp1_gradient_set(60, 4);
        let batch: Vec<usize> = (0..gs.len()).collect();

        // Independent 1-D scan oracle: the loss over c has its minimum at 2.
        let loss_at = |c: f64| {
            let mut t = parse("x1*x1 + 1.0*x2*x2").unwrap();
            t.set_constants(&[c]);
            fitness(&t, &gs, &batch)
        };
        let mut best_c = 0.0;
        let mut best = f64::INFINITY;
        for i in 0..=80 {
            let c = 0.5 + i as f64 * (3.5 - 0.5) / 80.0;
            let l = loss_at(c);
            if l < best {
                best = l;
                best_c = c;
            }
        }
        assert!((best_c - 2.0).abs() < 0.1, "scan minimum at {}", best_c);

        let tree = parse("x1*x1 + 1.0*x2*x2").unwrap();
        let tuned = optimize_constants(&tree, &gs, &batch, &SimplexOptions::default());
        let c = tuned.constants()[0];
        assert!((c - 2.0).abs() / 2.0 < 0.05, "optimized c = {}", c);
        assert!(fitness(&tuned, &gs, &batch) <= fitness(&tree, &gs, &batch));
    }

    #[test]
    fn optimize_constants_no_constants_is_identity() {
        let gs = exp1_gradient_set(10, 5);
        let tree = parse("x1*x2").unwrap();
        let out = optimize_constants(&tree, &gs, &[0, 1, 2], &SimplexOptions::default());
        assert_eq!(out, tree);
    }

    #[test]
    fn optimize_constants_never_worse_even_when_invalid() {
        let gs = exp1_gradient_set(10, 6);
        let batch: Vec<usize> = (0..gs.len()).collect();
        let tree = parse("x1/(x2 - 1000.0)").unwrap();
        let before = fitness(&tree, &gs, &batch);
        let out = optimize_constants(&tree, &gs, &batch, &SimplexOptions::default());
        assert!(fitness(&out, &gs, &batch) <= before);
    }

    #[test]
    fn evolve_zero_probabilities_keeps_population() {
        let gs = exp1_gradient_set(30, 7);
        let cfg = SearchConfig {
            crossover_prob: 0.0,
            mutation_prob: 0.0,
            population_size: 12,
            ..SearchConfig::default()
        };
        let pop = Population::random(2, &cfg, 0);
        let before: Vec<Expr> = pop.exprs().cloned().collect();
        let after = evolve(pop, &gs, &cfg);
        let after_exprs: Vec<Expr> = after.exprs().cloned().collect();
        assert_eq!(before, after_exprs);
        // Losses were refreshed.
        assert!(after.losses().iter().all(|l| l.is_finite()));
    }

    #[test]
    fn evolve_max_size_one_keeps_leaves() {
        let gs = exp1_gradient_set(30, 8);
        let cfg = SearchConfig {
            max_tree_size: 1,
            population_size: 20,
            ..SearchConfig::default()
        };
        let mut pop = Population::random(2, &cfg, 0);
        for _ in 0..5 {
            pop = evolve(pop, &gs, &cfg);
        }
        for e in pop.exprs() {
            assert_eq!(e.complexity(), 1);
        }
    }

    #[test]
    fn search_linear_target() {
        // Gradient set of f = 3*x1 + x2: constant direction (3,1)/sqrt(10).
        let mut rng = stream(11, 3);
        let points: Vec<Vec<f64>> = (0..60)
            .map(|_| vec![rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0])
            .collect();
        let raw = vec![vec![3.0, 1.0]; points.len()];
        let gs = GradientSet::from_raw_gradients(points, raw).unwrap();
        let cfg = SearchConfig {
            populations: 4,
            population_size: 30,
            iterations: 30,
            seed: 5,
            ..SearchConfig::default()
        };
        let report = search(&gs, &cfg).unwrap();
        let best = report
            .front
            .entries()
            .iter()
            .map(|e| e.loss)
            .fold(f64::INFINITY, f64::min);
        assert!(best < 1e-3, "best loss {}", best);
    }

    #[test]
    fn search_is_deterministic() {
        let gs = exp1_gradient_set(40, 9);
        let cfg = SearchConfig {
            populations: 2,
            population_size: 15,
            iterations: 10,
            seed: 3,
            ..SearchConfig::default()
        };
        let a = search(&gs, &cfg).unwrap();
        let b = search(&gs, &cfg).unwrap();
        assert_eq!(a.front.len(), b.front.len());
        for (x, y) in a.front.entries().iter().zip(b.front.entries()) {
            assert_eq!(x.complexity, y.complexity);
            assert_eq!(x.loss.to_bits(), y.loss.to_bits());
            assert_eq!(x.expr, y.expr);
        }
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn search_empty_set_is_usage_error() {
        let gs = GradientSet::from_raw_gradients(vec![], vec![]).unwrap();
        assert!(matches!(
            search(&gs, &SearchConfig::default()),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn front_invariants_hold() {
        let front = ParetoFront::from_candidates(vec![
            FrontEntry {
                complexity: 5,
                loss: 0.5,
                expr: parse("x1").unwrap(),
            },
            FrontEntry {
                complexity: 1,
                loss: 1.0,
                expr: parse("x1").unwrap(),
            },
            FrontEntry {
                complexity: 7,
                loss: 0.6, // dominated by the complexity-5 entry
                expr: parse("x2").unwrap(),
            },
            FrontEntry {
                complexity: 9,
                loss: 0.01,
                expr: parse("x2").unwrap(),
            },
        ]);
        let c: Vec<usize> = front.entries().iter().map(|e| e.complexity).collect();
        let l: Vec<f64> = front.entries().iter().map(|e| e.loss).collect();
        assert_eq!(c, vec![1, 5, 9]);
        assert!(l.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn knee_picks_steepest_log_drop() {
        let mk = |c: usize, l: f64| FrontEntry {
            complexity: c,
            loss: l,
            expr: parse("x1").unwrap(),
        };
        let front = ParetoFront::from_candidates(vec![
            mk(1, 1.0),
            mk(9, 1e-4),
            mk(15, 9e-5),
        ]);
        let pick = knee(&front).unwrap();
        assert_eq!(front.entries()[pick.index].complexity, 9);
        assert!(!pick.singleton);
    }

    #[test]
    fn knee_two_entries_and_singleton() {
        let mk = |c: usize, l: f64| FrontEntry {
            complexity: c,
            loss: l,
            expr: parse("x1").unwrap(),
        };
        let front = ParetoFront::from_candidates(vec![mk(1, 1.0), mk(3, 0.1)]);
        assert_eq!(knee(&front).unwrap().index, 1);

        let single = ParetoFront::from_candidates(vec![mk(1, 1.0)]);
        let pick = knee(&single).unwrap();
        assert_eq!(pick.index, 0);
        assert!(pick.singleton);
    }

    #[test]
    fn front_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("front.csv");
        let front = ParetoFront::from_candidates(vec![
            FrontEntry {
                complexity: 1,
                loss: 1.5,
                expr: parse("x1").unwrap(),
            },
            FrontEntry {
                complexity: 9,
                loss: 0.25,
                expr: parse("x1*x1 + 2.0625*(x2*x2)").unwrap(),
            },
        ]);
        front.save(&path).unwrap();
        let back = ParetoFront::load(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.entries()[1].expr, front.entries()[1].expr);

        // Saving the loaded front reproduces the bytes.
        let bytes = std::fs::read(&path).unwrap();
        back.save(&path).unwrap();
        assert_eq!(bytes, std::fs::read(&path).unwrap());
    }
}
