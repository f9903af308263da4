use std::sync::Arc;

use eca::rng::SeededRng;
use eca::{linalg, r2loss, EcaModel, Matrix, MlpEmulator};
use proptest::prelude::*;

fn orthonormal(rng: &mut SeededRng, d: usize, k: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    while basis.len() < k {
        let g = linalg::complement_project(&rng.normal_vec(d), &basis).unwrap();
        if let Ok(v) = linalg::normalize(&g) {
            // a second pass keeps the set orthonormal to working precision
            let v = linalg::normalize(&linalg::complement_project(&v, &basis).unwrap()).unwrap();
            basis.push(v);
        }
    }
    basis
}

fn model(seed: u64, d: usize, k: usize) -> (EcaModel, Matrix) {
    let mut rng = SeededRng::new(seed);
    let basis = orthonormal(&mut rng, d, k);
    let x = Matrix::new(20, d, rng.normal_vec(20 * d)).unwrap();
    let emu = Arc::new(MlpEmulator::identity(d).unwrap());
    (EcaModel::with_basis(emu, basis).unwrap(), x)
}

proptest! {
    #[test]
    fn project_is_idempotent_and_composes(seed in any::<u64>(), d in 1usize..8, frac in 0.0f64..1.0) {
        let k = ((d as f64 * frac) as usize).min(d);
        let (m, x) = model(seed, d, k);
        let t = m.transform(&x, k).unwrap();
        let p = m.project(&x, k).unwrap();
        prop_assert_eq!(&p, &m.expand(&t).unwrap());
        let pp = m.project(&p, k).unwrap();
        for (a, b) in p.as_slice().iter().zip(pp.as_slice()) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn sign_flip_keeps_coverage(seed in any::<u64>(), d in 2usize..8) {
        let (m, x) = model(seed, d, d - 1);
        let y = x.clone();
        let rho = m.covered_variance(&x, &y, d - 1).unwrap();
        for i in 0..d - 1 {
            let mut f = m.clone();
            f.flip_component(i);
            prop_assert!((f.covered_variance(&x, &y, d - 1).unwrap() - rho).abs() < 1e-12);
        }
    }

    #[test]
    fn r2loss_is_a_trace_ratio(seed in any::<u64>(), n in 1usize..10, k in 1usize..5) {
        let mut rng = SeededRng::new(seed);
        let a = Matrix::new(n, k, rng.normal_vec(n * k)).unwrap();
        let b = Matrix::new(n, k, rng.normal_vec(n * k)).unwrap();
        let l = r2loss(&a, &b).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert_eq!(r2loss(&b, &b).unwrap(), 0.0);
    }
}
