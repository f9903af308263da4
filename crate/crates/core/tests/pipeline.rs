use std::sync::Arc;

use eca::data_io::{self, gen_rudimentary, split};
use eca::emulator::{r2_score, train_mlp, Architecture, TrainOptions};
use eca::{linalg, EcaModel, FitOptions, InverseOptions, MlpEmulator};

#[test]
fn rudimentary_pipeline_recovers_ridge_and_inverts() {
    let data = gen_rudimentary(2, 5000, 10, true).unwrap();
    let (train, test) = split(&data.dataset, 0.8, 11).unwrap();
    assert_eq!((train.len(), test.len()), (4000, 1000));

    let trained = train_mlp(
        &train.x,
        &train.y,
        &Architecture::default(),
        &TrainOptions { seed: 12, ..TrainOptions::default() },
    )
    .unwrap();
    let r2 = r2_score(&trained.emulator.forward(&test.x).unwrap(), &test.y).unwrap();
    assert!(r2 >= 0.98, "emulator R2 {r2}");

    let mut model = EcaModel::new(Arc::new(trained.emulator));
    let opts = FitOptions { seed: Some(13), ..FitOptions::default() };
    model.fit(&test.x, &test.y, 2, &opts, 0).unwrap();
    let align = linalg::dot(&model.basis()[0], &data.truth).unwrap().abs();
    assert!(align > 0.95, "|v.v1| = {align}");
    assert!(model.y_var()[0] >= 0.9);
    assert!(model.y_var()[1] >= model.y_var()[0]);

    let projected = model.transform(&test.x, 1).unwrap();
    let (scores, err) = model.inverse(&test.y, 1, &InverseOptions::default()).unwrap();
    assert_eq!(err.len(), test.len());
    assert!(r2_score(&scores, &projected).unwrap() >= 0.98);
}

#[test]
fn files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_rudimentary(3, 200, 4, false).unwrap();
    let xp = dir.path().join("x.csv");
    data_io::save_matrix(&xp, &data.dataset.x).unwrap();
    assert_eq!(data_io::load_matrix(&xp).unwrap(), data.dataset.x);

    let emu = MlpEmulator::identity(3).unwrap();
    let ep = dir.path().join("emu.json");
    emu.save(&ep).unwrap();
    let mut model = EcaModel::new(Arc::new(MlpEmulator::load(&ep).unwrap()));
    let y = data.dataset.x.clone();
    model
        .fit(&data.dataset.x, &y, 1, &FitOptions { seed: Some(1), ..FitOptions::default() }, 0)
        .unwrap();
    let mp = dir.path().join("model.json");
    model.save(&mp, "emu.json").unwrap();
    let back = EcaModel::load(&mp).unwrap();
    assert_eq!(back.basis(), model.basis());
    assert_eq!(
        back.transform(&data.dataset.x, 1).unwrap(),
        model.transform(&data.dataset.x, 1).unwrap()
    );
}
