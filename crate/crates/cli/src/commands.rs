use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use eca::data_io::{
    self, gen_rudimentary, split, DatasetManifest, GeneratorRecord, Part, PartFiles,
};
use eca::emulator::{r2_score, train_mlp, Architecture, TrainOptions};
use eca::{Activation, EcaError, EcaModel, EcaModelDocument, Matrix, MlpEmulator, Result};
use serde_json::json;

use crate::args::{
    Command, DataSource, FitArgs, GenArgs, InverseArgs, MapArgs, TestArgs, TrainArgs,
};
use crate::run::{Context, Outcome, Timer};

pub fn dispatch(command: &mut Command, ctx: &Context) -> Result<Outcome> {
    match command {
        Command::Gen(a) => gen(a, ctx),
        Command::Train(a) => train(a, ctx),
        Command::Fit(a) => fit(a, ctx),
        Command::Transform(a) => map(a, false),
        Command::Project(a) => map(a, true),
        Command::Inverse(a) => inverse(a, false),
        Command::Reconstruct(a) => inverse(a, true),
        Command::Bench(a) => crate::bench::bench(a, ctx),
        Command::Test(a) => test(a),
        Command::Replay(_) => Err(EcaError::config("nested replay")),
    }
}

struct Loaded {
    x: Option<Matrix>,
    y: Option<Matrix>,
    inputs: Vec<PathBuf>,
}

fn base_dir(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new("."))
}

/// Reads X and/or Y. X from a manifest is standardized with the manifest's
/// standardizer when one is recorded.
fn load_source(src: &DataSource, need_x: bool, need_y: bool) -> Result<Loaded> {
    if let Some(path) = &src.data {
        let manifest = DatasetManifest::load(path)?;
        let part = Part::from_str(&src.part)?;
        let ds = manifest.load_part(base_dir(path), part)?;
        let x = match &manifest.x_standardizer {
            Some(s) => s.standardize(&ds.x)?,
            None => ds.x,
        };
        return Ok(Loaded {
            x: Some(x),
            y: Some(ds.y),
            inputs: vec![path.clone()],
        });
    }
    let mut inputs = Vec::new();
    let mut read = |p: &Option<PathBuf>, need: bool, flag: &str| -> Result<Option<Matrix>> {
        match p {
            Some(p) => {
                inputs.push(p.clone());
                data_io::load_matrix(p).map(Some)
            }
            None if need => Err(EcaError::config(format!("--data or --{flag} is required"))),
            None => Ok(None),
        }
    };
    let x = read(&src.x, need_x, "x")?;
    let y = read(&src.y, need_y, "y")?;
    Ok(Loaded { x, y, inputs })
}

fn save(path: &Path, m: &Matrix) -> Result<()> {
    data_io::save_matrix(path, m)
}

/// Path of the emulator as stored in a model document: relative to the
/// model's directory when the emulator lives below it, absolute otherwise.
fn emulator_reference(emulator: &Path, model_out: &Path) -> Result<PathBuf> {
    let emu = emulator.canonicalize().map_err(|e| EcaError::io(emulator, e))?;
    let dir = match model_out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let dir = dir.canonicalize().map_err(|e| EcaError::io(dir, e))?;
    Ok(emu.strip_prefix(&dir).map(Path::to_path_buf).unwrap_or(emu))
}

fn gen(a: &mut GenArgs, ctx: &Context) -> Result<Outcome> {
    let seed = ctx.seed(a.seed, None, "gen")?;
    let split_seed = a.split_seed.unwrap_or(seed.wrapping_add(1));
    a.seed = Some(seed);
    a.split_seed = Some(split_seed);
    let mut timer = Timer::default();

    let data = timer.time("generate", || gen_rudimentary(a.d, a.n, seed, a.vector))?;
    let (train, test) = split(&data.dataset, a.split, split_seed)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| EcaError::io(&a.out_dir, e))?;
    let names = ["train_x.csv", "train_y.csv", "test_x.csv", "test_y.csv"];
    let outputs: Vec<PathBuf> = names.iter().map(|n| a.out_dir.join(n)).collect();
    timer.time("write", || {
        save(&outputs[0], &train.x)?;
        save(&outputs[1], &train.y)?;
        save(&outputs[2], &test.x)?;
        save(&outputs[3], &test.y)
    })?;
    let manifest = DatasetManifest {
        train: PartFiles { x: names[0].into(), y: names[1].into(), rows: train.len() },
        test: PartFiles { x: names[2].into(), y: names[3].into(), rows: test.len() },
        x_standardizer: None,
        y_standardizer: Some(data.y_standardizer.clone()),
        ground_truth: Some(data.truth.clone()),
        generator: Some(GeneratorRecord {
            d: a.d,
            n: a.n,
            seed,
            vector_valued: a.vector,
            split_fraction: a.split,
            split_seed,
        }),
        feature_names: data.dataset.feature_names.clone(),
        target_names: data.dataset.target_names.clone(),
    };
    let manifest_path = a.out_dir.join("dataset.json");
    manifest.save(&manifest_path)?;
    println!(
        "wrote {} train and {} test rows (d = {}) to {}",
        train.len(),
        test.len(),
        a.d,
        a.out_dir.display()
    );
    let mut all = outputs;
    all.push(manifest_path);
    Ok(Outcome {
        options: json!({ "d": a.d, "n": a.n, "vector_valued": a.vector, "split": a.split, "split_seed": split_seed }),
        inputs: vec![],
        outputs: all,
        seed: Some(seed),
        timings: timer.into_phases(),
        manifest_path: a.out_dir.join("gen.run.json"),
    })
}

fn train(a: &mut TrainArgs, ctx: &Context) -> Result<Outcome> {
    let seed = ctx.seed(a.seed, None, "train")?;
    a.seed = Some(seed);
    let arch = Architecture {
        hidden: a.hidden.clone(),
        activation: Activation::from_str(&a.activation)?,
        output_activation: Activation::from_str(&a.output_activation)?,
    };
    let opts = TrainOptions {
        lr: a.lr,
        betas: a.betas,
        weight_decay: a.weight_decay,
        batch_size: a.batch_size,
        max_epochs: a.epochs,
        patience: a.patience,
        train_fraction: a.train_fraction,
        seed,
    };
    let mut timer = Timer::default();
    // with a manifest the test part is held out for the reported score
    let (train_x, train_y, eval, inputs, eval_name) = match &a.source.data {
        Some(path) => {
            let manifest = DatasetManifest::load(path)?;
            let tr = manifest.load_part(base_dir(path), Part::Train)?;
            let te = manifest.load_part(base_dir(path), Part::Test)?;
            let std = |m: Matrix| match &manifest.x_standardizer {
                Some(s) => s.standardize(&m),
                None => Ok(m),
            };
            (std(tr.x)?, tr.y, Some((std(te.x)?, te.y)), vec![path.clone()], "test")
        }
        None => {
            let l = load_source(&a.source, true, true)?;
            (l.x.unwrap(), l.y.unwrap(), None, l.inputs, "training")
        }
    };
    let trained = timer.time("train", || train_mlp(&train_x, &train_y, &arch, &opts))?;
    let (ex, ey) = eval.unwrap_or((train_x, train_y));
    let r2 = r2_score(&trained.emulator.forward(&ex)?, &ey)?;
    trained.emulator.save(&a.out)?;
    println!(
        "{eval_name} R2 {r2:.4} after {} epochs (best {}, validation MSE {:.3e})",
        trained.report.epochs_run, trained.report.best_epoch, trained.report.best_validation_mse
    );
    Ok(Outcome {
        options: json!({ "architecture": arch, "train": opts, "r2": r2, "report": trained.report }),
        inputs,
        outputs: vec![a.out.clone()],
        seed: Some(seed),
        timings: timer.into_phases(),
        manifest_path: a.out.with_extension("run.json"),
    })
}

fn fit(a: &mut FitArgs, ctx: &Context) -> Result<Outcome> {
    let mut timer = Timer::default();
    let loaded = load_source(&a.source, true, true)?;
    let (x, y) = (loaded.x.unwrap(), loaded.y.unwrap());
    let emulator = Arc::new(MlpEmulator::load(&a.emulator)?);
    let mut inputs = loaded.inputs;
    inputs.push(a.emulator.clone());
    let mut model = match &a.model {
        Some(p) => {
            inputs.push(p.clone());
            EcaModel::from_document(EcaModelDocument::load(p)?, emulator)?
        }
        None if a.keep != 0 => {
            return Err(EcaError::config("--keep needs an existing --model"));
        }
        None => EcaModel::new(emulator),
    };
    let seed = ctx.seed(a.flags.seed, model.seed(), "fit")?;
    a.flags.seed = Some(seed);
    let opts = a.flags.resolve();
    let report = timer.time("fit", || model.fit(&x, &y, a.n_comp, &opts, a.keep))?;
    let reference = emulator_reference(&a.emulator, &a.out)?;
    model.save(&a.out, reference)?;

    println!("rank  y_var     x_var     epochs  converged");
    for k in 0..model.n_components() {
        let comp = report.components.iter().find(|c| c.rank == k + 1);
        let (epochs, conv) = match comp {
            Some(c) => (c.epochs.to_string(), if c.converged { "yes" } else { "no" }),
            None => ("kept".to_string(), "-"),
        };
        println!(
            "{:<5} {:<9.6} {:<9.6} {:<7} {}",
            k + 1,
            model.y_var()[k],
            model.x_var()[k],
            epochs,
            conv
        );
    }
    Ok(Outcome {
        options: json!({ "fit": opts, "n_comp": a.n_comp, "keep": a.keep, "report": report }),
        inputs,
        outputs: vec![a.out.clone()],
        seed: Some(seed),
        timings: timer.into_phases(),
        manifest_path: a.out.with_extension("run.json"),
    })
}

fn resolve_rank(model: &EcaModel, n_comp: Option<usize>) -> usize {
    n_comp.unwrap_or(model.n_components())
}

fn map(a: &mut MapArgs, project: bool) -> Result<Outcome> {
    let mut timer = Timer::default();
    let model = EcaModel::load(&a.model)?;
    let loaded = load_source(&a.source, true, false)?;
    let x = loaded.x.unwrap();
    let k = resolve_rank(&model, a.n_comp);
    let out = timer.time(if project { "project" } else { "transform" }, || {
        if project {
            model.project(&x, k)
        } else {
            model.transform(&x, k)
        }
    })?;
    save(&a.out, &out)?;
    let mut inputs = loaded.inputs;
    inputs.push(a.model.clone());
    Ok(Outcome {
        options: json!({ "n_comp": k }),
        inputs,
        outputs: vec![a.out.clone()],
        seed: model.seed(),
        timings: timer.into_phases(),
        manifest_path: a.out.with_extension("run.json"),
    })
}

fn inverse(a: &mut InverseArgs, reconstruct: bool) -> Result<Outcome> {
    let mut timer = Timer::default();
    let model = EcaModel::load(&a.model)?;
    let loaded = load_source(&a.source, false, true)?;
    let y = loaded.y.unwrap();
    let k = resolve_rank(&model, a.n_comp);
    let opts = a.flags.resolve();
    let (out, err) = timer.time(if reconstruct { "reconstruct" } else { "inverse" }, || {
        if reconstruct {
            model.reconstruct(&y, k, &opts)
        } else {
            model.inverse(&y, k, &opts)
        }
    })?;
    let errors = a
        .errors
        .clone()
        .unwrap_or_else(|| a.out.with_extension("mse.csv"));
    save(&a.out, &out)?;
    save(&errors, &Matrix::new(err.len(), 1, err.clone())?)?;

    let mean = err.iter().sum::<f64>() / err.len().max(1) as f64;
    println!("{} rows, mean per-row MSE {mean:.3e}", y.rows());
    let mut r2 = None;
    if let Some(x) = &loaded.x {
        let reference = if reconstruct { model.project(x, k)? } else { model.transform(x, k)? };
        let score = r2_score(&out, &reference)?;
        println!(
            "R2 against {} {score:.4}",
            if reconstruct { "projected x" } else { "projected t" }
        );
        r2 = Some(score);
    }
    let mut inputs = loaded.inputs;
    inputs.push(a.model.clone());
    Ok(Outcome {
        options: json!({ "inverse": opts, "n_comp": k, "r2": r2 }),
        inputs,
        outputs: vec![a.out.clone(), errors],
        seed: opts.seed,
        timings: timer.into_phases(),
        manifest_path: a.out.with_extension("run.json"),
    })
}

fn test(a: &mut TestArgs) -> Result<Outcome> {
    let mut timer = Timer::default();
    let model = EcaModel::load(&a.model)?;
    let loaded = load_source(&a.source, true, true)?;
    let (x, y) = (loaded.x.unwrap(), loaded.y.unwrap());
    let k = resolve_rank(&model, a.n_comp);
    if k > model.n_components() {
        return Err(EcaError::config(format!(
            "model has {} components, asked for {k}",
            model.n_components()
        )));
    }
    let rows = timer.time("test", || {
        (1..=k)
            .map(|r| Ok((model.covered_variance(&x, &y, r)?, model.x_covered_variance(&x, r)?)))
            .collect::<Result<Vec<_>>>()
    })?;
    println!("rank  y_var     x_var");
    for (i, (yv, xv)) in rows.iter().enumerate() {
        println!("{:<5} {yv:<9.6} {xv:<9.6}", i + 1);
    }
    let mut inputs = loaded.inputs;
    inputs.push(a.model.clone());
    Ok(Outcome {
        options: json!({
            "n_comp": k,
            "y_var": rows.iter().map(|r| r.0).collect::<Vec<_>>(),
            "x_var": rows.iter().map(|r| r.1).collect::<Vec<_>>(),
        }),
        inputs,
        outputs: vec![],
        seed: model.seed(),
        timings: timer.into_phases(),
        manifest_path: a.model.with_extension("test.run.json"),
    })
}
