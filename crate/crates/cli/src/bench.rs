use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use eca::data_io::{gen_rudimentary, split};
use eca::emulator::{r2_score, train_mlp, Architecture, TrainOptions};
use eca::{linalg, EcaError, EcaModel, FitOptions, Matrix, MlpEmulator, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::args::BenchArgs;
use crate::run::{Context, Outcome, Timer};

/// Alignment above which a fit counts as having found the ridge.
pub const SUCCESS_ALIGNMENT: f64 = 0.95;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trial {
    pub seed: u64,
    pub alignment: f64,
    pub rho: f64,
    pub epochs: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchRow {
    pub d: usize,
    pub emulator_r2: f64,
    pub train_seconds: f64,
    pub median_fit_seconds: f64,
    pub success_rate: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    pub trials: Vec<Trial>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub n: usize,
    pub seed: u64,
    pub fit: FitOptions,
    pub rows: Vec<BenchRow>,
}

/// Worker threads for the trials: `ECA_NUM_THREADS` if set, else the
/// available parallelism, never more than the trial count.
fn worker_count(trials: usize) -> Result<usize> {
    let cap = match std::env::var("ECA_NUM_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| EcaError::config(format!("ECA_NUM_THREADS must be a positive integer, got '{v}'")))?,
        Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    Ok(cap.min(trials).max(1))
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn run_trial(
    emulator: &Arc<MlpEmulator>,
    x: &Matrix,
    y: &Matrix,
    truth: &[f64],
    opts: &FitOptions,
) -> Result<Trial> {
    let mut model = EcaModel::new(emulator.clone());
    let start = Instant::now();
    let report = model.fit(x, y, 1, opts, 0)?;
    let seconds = start.elapsed().as_secs_f64();
    Ok(Trial {
        seed: report.seed,
        alignment: linalg::dot(&model.basis()[0], truth)?.abs(),
        rho: model.y_var()[0],
        epochs: report.components[0].epochs,
        seconds,
    })
}

fn load_or_train(
    a: &BenchArgs,
    d: usize,
    x: &Matrix,
    y: &Matrix,
    seed: u64,
) -> Result<(MlpEmulator, f64)> {
    let cached = a.emulator_dir.as_ref().map(|dir| dir.join(format!("emulator_d{d}.json")));
    if let Some(path) = cached.as_ref().filter(|p| p.exists()) {
        log::info!("d = {d}: loading {}", path.display());
        return Ok((MlpEmulator::load(path)?, 0.0));
    }
    let start = Instant::now();
    let opts = TrainOptions { seed, ..TrainOptions::default() };
    let trained = train_mlp(x, y, &Architecture::default(), &opts)?;
    let seconds = start.elapsed().as_secs_f64();
    if let Some(path) = cached {
        std::fs::create_dir_all(path.parent().unwrap()).map_err(|e| EcaError::io(&path, e))?;
        trained.emulator.save(&path)?;
    }
    Ok((trained.emulator, seconds))
}

pub fn bench(a: &mut BenchArgs, ctx: &Context) -> Result<Outcome> {
    if a.trials == 0 {
        return Err(EcaError::config("trials must be at least 1"));
    }
    if a.d.is_empty() {
        return Err(EcaError::config("no dimensions to benchmark"));
    }
    let seed = ctx.seed(a.flags.seed, None, "bench")?;
    a.flags.seed = Some(seed);
    let base = a.flags.resolve();
    let workers = worker_count(a.trials)?;
    let mut timer = Timer::default();
    let mut rows = Vec::new();
    let mut outputs: Vec<PathBuf> = vec![a.out.clone()];

    println!("d     emulator_r2  median_fit_s  success  rho_min   rho_max");
    for &d in &a.d.clone() {
        // per-dimension streams: data, split and emulator seeds are derived
        // from the base seed so every d is reproducible on its own
        let data_seed = seed.wrapping_add(d as u64 * 1_000_003);
        let data = gen_rudimentary(d, a.n, data_seed, false)?;
        let (train, test) = split(&data.dataset, 0.8, data_seed.wrapping_add(1))?;
        let (emulator, train_seconds) =
            timer.time(&format!("train d={d}"), || load_or_train(a, d, &train.x, &train.y, data_seed.wrapping_add(2)))?;
        if let Some(dir) = &a.emulator_dir {
            outputs.push(dir.join(format!("emulator_d{d}.json")));
        }
        let emulator_r2 = r2_score(&emulator.forward(&test.x)?, &test.y)?;
        let emulator = Arc::new(emulator);

        let trials = timer.time(&format!("fit d={d}"), || {
            let mut slots: Vec<Option<Result<Trial>>> = (0..a.trials).map(|_| None).collect();
            std::thread::scope(|s| {
                let handles: Vec<_> = (0..workers)
                    .map(|w| {
                        let (emulator, test, truth, base) = (&emulator, &test, &data.truth, &base);
                        let trials = a.trials;
                        s.spawn(move || {
                            (w..trials)
                                .step_by(workers)
                                .map(|i| {
                                    let opts = FitOptions { seed: Some(seed.wrapping_add(i as u64)), ..base.clone() };
                                    (i, run_trial(emulator, &test.x, &test.y, truth, &opts))
                                })
                                .collect::<Vec<_>>()
                        })
                    })
                    .collect();
                for h in handles {
                    for (i, r) in h.join().expect("bench worker panicked") {
                        slots[i] = Some(r);
                    }
                }
            });
            slots.into_iter().map(|s| s.expect("every trial ran")).collect::<Result<Vec<_>>>()
        })?;

        let mut times: Vec<f64> = trials.iter().map(|t| t.seconds).collect();
        let successes = trials.iter().filter(|t| t.alignment > SUCCESS_ALIGNMENT).count();
        let rho_min = trials.iter().map(|t| t.rho).fold(f64::INFINITY, f64::min);
        let rho_max = trials.iter().map(|t| t.rho).fold(f64::NEG_INFINITY, f64::max);
        let row = BenchRow {
            d,
            emulator_r2,
            train_seconds,
            median_fit_seconds: median(&mut times),
            success_rate: successes as f64 / trials.len() as f64,
            rho_min,
            rho_max,
            trials,
        };
        println!(
            "{:<5} {:<12.4} {:<13.3} {:<8} {:<9.5} {:.5}",
            d,
            row.emulator_r2,
            row.median_fit_seconds,
            format!("{successes}/{}", a.trials),
            row.rho_min,
            row.rho_max
        );
        rows.push(row);
    }

    let report = BenchReport { n: a.n, seed, fit: base.clone(), rows };
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    std::fs::write(&a.out, text).map_err(|e| EcaError::io(&a.out, e))?;
    Ok(Outcome {
        options: json!({ "fit": base, "d": a.d, "trials": a.trials, "n": a.n, "workers": workers }),
        inputs: vec![],
        outputs,
        seed: Some(seed),
        timings: timer.into_phases(),
        manifest_path: a.out.with_extension("run.json"),
    })
}
