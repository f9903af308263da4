//! Cubic-ridge walkthrough: generate data, train an emulator, fit ECA
//! repeatedly, and report how often the first component finds the ridge.
//!
//! `cargo run --release --example rudimentary -- <d> <trials> [vector]`

use std::sync::Arc;
use std::time::Instant;

use eca::data_io::{gen_rudimentary, split};
use eca::emulator::{r2_score, train_mlp, Architecture, TrainOptions};
use eca::{linalg, EcaModel, FitOptions, InverseOptions};

fn main() -> eca::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let d: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let trials: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(5);
    let vector = args.get(3).is_some_and(|s| s == "vector");

    let data = gen_rudimentary(d, 20_000, 1, vector)?;
    let (train, test) = split(&data.dataset, 0.8, 2)?;

    let t0 = Instant::now();
    let trained = train_mlp(&train.x, &train.y, &Architecture::default(), &TrainOptions { seed: 3, ..TrainOptions::default() })?;
    let r2 = r2_score(&trained.emulator.forward(&test.x)?, &test.y)?;
    println!(
        "d={d} emulator: test R2 {r2:.4}, {} epochs (best {}), {:.1}s",
        trained.report.epochs_run,
        trained.report.best_epoch,
        t0.elapsed().as_secs_f64()
    );

    let emulator = Arc::new(trained.emulator);
    for seed in 0..trials {
        let mut model = EcaModel::new(emulator.clone());
        let t = Instant::now();
        let opts = FitOptions { seed: Some(seed), ..FitOptions::default() };
        let report = model.fit(&test.x, &test.y, 1, &opts, 0)?;
        let align = linalg::dot(&model.basis()[0], &data.truth)?.abs();
        println!(
            "  seed {seed}: |v.v1| {align:.4}  rho {:.4}  epochs {}  {:.2}s",
            model.y_var()[0],
            report.components[0].epochs,
            t.elapsed().as_secs_f64()
        );
        if vector && seed == 0 {
            let t = Instant::now();
            let projected = model.transform(&test.x, 1)?;
            let (scores, _) = model.inverse(&test.y, 1, &InverseOptions::default())?;
            let r2 = r2_score(&scores, &projected)?;
            println!("  inverse R2 {r2:.4} in {:.2}s", t.elapsed().as_secs_f64());
        }
    }
    Ok(())
}
