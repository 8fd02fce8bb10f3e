// Scratch pilot for desk-scale timing and recovery checks.
use std::time::Instant;

use symgrad::dataset::{generate_experiment, split, ExperimentId};
use symgrad::gradients::{extract, ExtractionConfig};
use symgrad::nn::{train_new, TrainConfig};
use symgrad::search::{fitness_full, knee, search, SearchConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let exp: u8 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1);
    let seed: u64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1);
    let n: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(2000);

    let id = ExperimentId::new(exp).unwrap();
    let t0 = Instant::now();
    let ds = generate_experiment(id, n, seed, 0.01).unwrap();
    let (tr, va) = split(&ds, 0.8, seed).unwrap();
    println!("gen: {:?} ({} rows)", t0.elapsed(), ds.n_samples());

    let t1 = Instant::now();
    let cfg = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let (model, history) = train_new(ds.n_features(), &tr, &va, &cfg).unwrap();
    let last = history.last().unwrap();
    let best_acc = history.iter().map(|h| h.val_acc).fold(0.0, f64::max);
    println!(
        "train: {:?} ({} epochs, best val acc {:.4}, last val loss {:.4})",
        t1.elapsed(),
        history.len(),
        best_acc,
        last.val_loss
    );

    let t2 = Instant::now();
    let gs = extract(&model, &ds, &ExtractionConfig::default()).unwrap();
    println!("extract: {:?} ({} rows kept of {})", t2.elapsed(), gs.len(), ds.n_samples());

    let t3 = Instant::now();
    let scfg = SearchConfig {
        seed,
        ..SearchConfig::default()
    };
    let report = search(&gs, &scfg).unwrap();
    println!(
        "search: {:?} ({} iterations run)",
        t3.elapsed(),
        report.log.len()
    );
    println!("front:");
    for e in report.front.entries() {
        println!("  {:2}  {:.6e}  {}", e.complexity, e.loss, e.expr);
    }
    let pick = knee(&report.front).unwrap();
    let kneed = &report.front.entries()[pick.index];
    println!("knee: complexity {} loss {:.6e}  {}", kneed.complexity, kneed.loss, kneed.expr);
    println!("knee full fitness: {:.6e}", fitness_full(&kneed.expr, &gs));

    let formula = symgrad::dataset::DecisionFormula::for_experiment(id);
    println!(
        "true formula fitness on this gradient set: {:.6e} (complexity {})",
        fitness_full(&formula.form, &gs),
        formula.form.complexity()
    );
}
