//! Datasets, z-standardization, splitting, matrix files, and the synthetic
//! cubic-ridge generator.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{EcaError, Result};
use crate::linalg::Matrix;
use crate::rng::SeededRng;

/// Per-column mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Matrix) -> Result<Self> {
        let (n, d) = x.shape();
        if n < 2 {
            return Err(EcaError::DegenerateData(
                "standardizer needs at least two rows".into(),
            ));
        }
        let mut means = vec![0.0; d];
        for r in x.row_iter() {
            for (m, v) in means.iter_mut().zip(r) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n as f64);
        let mut vars = vec![0.0; d];
        for r in x.row_iter() {
            for ((s, v), m) in vars.iter_mut().zip(r).zip(&means) {
                *s += (v - m).powi(2);
            }
        }
        let stds: Vec<f64> = vars.iter().map(|s| (s / n as f64).sqrt()).collect();
        if let Some(j) = stds.iter().position(|&s| s.is_nan() || s <= 0.0) {
            return Err(EcaError::DegenerateData(format!("column {j} is constant")));
        }
        Ok(Self { means, stds })
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    fn check(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.dim() {
            return Err(EcaError::dim(format!(
                "standardizer has {} columns, matrix has {}",
                self.dim(),
                x.cols()
            )));
        }
        Ok(())
    }

    /// `(x − mean) / std` per column.
    pub fn standardize(&self, x: &Matrix) -> Result<Matrix> {
        self.check(x)?;
        let mut out = x.clone();
        for i in 0..out.rows() {
            for ((v, m), s) in out.row_mut(i).iter_mut().zip(&self.means).zip(&self.stds) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }

    /// `x̃ · std + mean` per column.
    pub fn inverse_standardize(&self, x: &Matrix) -> Result<Matrix> {
        self.check(x)?;
        let mut out = x.clone();
        for i in 0..out.rows() {
            for ((v, m), s) in out.row_mut(i).iter_mut().zip(&self.means).zip(&self.stds) {
                *v = *v * s + m;
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Matrix,
    pub feature_names: Option<Vec<String>>,
    pub target_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(x: Matrix, y: Matrix) -> Result<Self> {
        if x.rows() != y.rows() {
            return Err(EcaError::dim(format!(
                "x has {} rows but y has {}",
                x.rows(),
                y.rows()
            )));
        }
        Ok(Self {
            x,
            y,
            feature_names: None,
            target_names: None,
        })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }

    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(rows),
            y: self.y.select_rows(rows),
            feature_names: self.feature_names.clone(),
            target_names: self.target_names.clone(),
        }
    }
}

/// Seeded shuffle, then the first `round(n · fraction)` rows go left.
pub fn split(ds: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(EcaError::config(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let n = ds.len();
    let n_left = (n as f64 * fraction).round() as usize;
    if n_left == 0 || n_left == n {
        return Err(EcaError::config(format!(
            "splitting {n} rows at {fraction} leaves one side empty"
        )));
    }
    let order = SeededRng::new(seed).permutation(n);
    Ok((ds.select(&order[..n_left]), ds.select(&order[n_left..])))
}

/// Output of [`gen_rudimentary`].
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    /// Standard-normal inputs and z-standardized responses.
    pub dataset: Dataset,
    /// Responses before standardization.
    pub raw_y: Matrix,
    pub y_standardizer: Standardizer,
    /// `(1/√d) Σ êᵢ`, the only direction the responses depend on.
    pub truth: Vec<f64>,
}

/// Unit vector `(1/√d)(1, …, 1)`.
pub fn ridge_direction(d: usize) -> Vec<f64> {
    vec![1.0 / (d as f64).sqrt(); d]
}

/// Raw responses for one projection `t = v·x`: `t³` in scalar mode, or
/// `(t³, sin 0.2t, cos 0.2t, tanh 0.2t)` in vector mode.
pub fn ridge_response(t: f64, vector_valued: bool) -> Vec<f64> {
    if vector_valued {
        let s = 0.2 * t;
        vec![t.powi(3), s.sin(), s.cos(), s.tanh()]
    } else {
        vec![t.powi(3)]
    }
}

/// Draws `n` standard-normal points in `d` dimensions and evaluates the
/// cubic ridge along [`ridge_direction`]. Responses are z-standardized over
/// all `n` rows.
pub fn gen_rudimentary(d: usize, n: usize, seed: u64, vector_valued: bool) -> Result<SyntheticDataset> {
    if d == 0 || n == 0 {
        return Err(EcaError::config(format!(
            "need d >= 1 and n >= 1, got d = {d}, n = {n}"
        )));
    }
    let truth = ridge_direction(d);
    let mut rng = SeededRng::new(seed);
    let m = if vector_valued { 4 } else { 1 };
    let mut xs = Vec::with_capacity(n * d);
    let mut ys = Vec::with_capacity(n * m);
    for _ in 0..n {
        let row = rng.normal_vec(d);
        let t = crate::linalg::dot_unchecked(&truth, &row);
        ys.extend(ridge_response(t, vector_valued));
        xs.extend(row);
    }
    let x = Matrix::new(n, d, xs)?;
    let raw_y = Matrix::new(n, m, ys)?;
    let y_standardizer = Standardizer::fit(&raw_y)?;
    let y = y_standardizer.standardize(&raw_y)?;
    let mut dataset = Dataset::new(x, y)?;
    dataset.feature_names = Some((1..=d).map(|i| format!("x{i}")).collect());
    dataset.target_names = Some(if vector_valued {
        ["cube", "sin", "cos", "tanh"].iter().map(|s| s.to_string()).collect()
    } else {
        vec!["cube".into()]
    });
    Ok(SyntheticDataset {
        dataset,
        raw_y,
        y_standardizer,
        truth,
    })
}

/// Parses comma-separated rows. Blank lines are skipped.
pub fn parse_matrix(text: &str) -> Result<Matrix> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut count = 0;
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| {
                EcaError::Format(format!("line {}: cannot parse '{}'", lineno + 1, field.trim()))
            })?;
            data.push(v);
            count += 1;
        }
        match cols {
            None => cols = Some(count),
            Some(c) if c != count => {
                return Err(EcaError::Format(format!(
                    "line {}: {count} columns, expected {c}",
                    lineno + 1
                )))
            }
            _ => {}
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| EcaError::Format("matrix file has no rows".into()))?;
    Matrix::new(rows, cols, data).map_err(|e| match e {
        EcaError::Numerics(m) => EcaError::Format(m),
        other => other,
    })
}

/// One row per line, 17 significant digits per entry.
pub fn format_matrix(m: &Matrix) -> String {
    let mut out = String::with_capacity(m.rows() * m.cols() * 24);
    for r in m.row_iter() {
        for (j, v) in r.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{v:.16e}").expect("writing to a String");
        }
        out.push('\n');
    }
    out
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| EcaError::io(path, e))?;
    parse_matrix(&text).map_err(|e| match e {
        EcaError::Format(m) => EcaError::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn save_matrix(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_matrix(m)).map_err(|e| EcaError::io(path, e))
}

/// File pair holding one slice of a dataset; paths are relative to the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartFiles {
    pub x: PathBuf,
    pub y: PathBuf,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorRecord {
    pub d: usize,
    pub n: usize,
    pub seed: u64,
    pub vector_valued: bool,
    pub split_fraction: f64,
    pub split_seed: u64,
}

/// Structured description of a dataset on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub train: PartFiles,
    pub test: PartFiles,
    /// Applied to X before fitting when present.
    pub x_standardizer: Option<Standardizer>,
    /// Maps standardized Y back to physical units.
    pub y_standardizer: Option<Standardizer>,
    pub ground_truth: Option<Vec<f64>>,
    pub generator: Option<GeneratorRecord>,
    pub feature_names: Option<Vec<String>>,
    pub target_names: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Train,
    Test,
}

impl std::str::FromStr for Part {
    type Err = EcaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Part::Train),
            "test" => Ok(Part::Test),
            other => Err(EcaError::config(format!("unknown dataset part '{other}'"))),
        }
    }
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| EcaError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| EcaError::Format(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text).map_err(|e| EcaError::io(path, e))
    }

    pub fn part(&self, part: Part) -> &PartFiles {
        match part {
            Part::Train => &self.train,
            Part::Test => &self.test,
        }
    }

    /// Loads one part, resolving paths against `base_dir`. X is returned as
    /// stored; apply [`Self::x_standardizer`] separately.
    pub fn load_part(&self, base_dir: &Path, part: Part) -> Result<Dataset> {
        let files = self.part(part);
        let x = load_matrix(base_dir.join(&files.x))?;
        let y = load_matrix(base_dir.join(&files.y))?;
        let mut ds = Dataset::new(x, y)?;
        ds.feature_names = self.feature_names.clone();
        ds.target_names = self.target_names.clone();
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn standardizer_examples() {
        let x = Matrix::from_rows(&[[0.0], [2.0]]).unwrap();
        let s = Standardizer::fit(&x).unwrap();
        assert_eq!(s.means, vec![1.0]);
        assert_eq!(s.stds, vec![1.0]);
        let z = s.standardize(&Matrix::from_rows(&[[2.0]]).unwrap()).unwrap();
        assert_eq!(z.as_slice(), &[1.0]);

        let s = Standardizer {
            means: vec![0.0],
            stds: vec![2.0],
        };
        let back = s.inverse_standardize(&Matrix::from_rows(&[[1.0]]).unwrap()).unwrap();
        assert_eq!(back.as_slice(), &[2.0]);

        let c = Matrix::from_rows(&[[3.0, 1.0], [3.0, 2.0]]).unwrap();
        assert!(matches!(Standardizer::fit(&c), Err(EcaError::DegenerateData(_))));
        assert!(s.standardize(&Matrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn already_standard_column() {
        let x = Matrix::from_rows(&[[-1.0], [1.0], [-1.0], [1.0]]).unwrap();
        let s = Standardizer::fit(&x).unwrap();
        assert!(s.means[0].abs() < 1e-15 && (s.stds[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rudimentary_examples() {
        let g = gen_rudimentary(1, 50, 3, false).unwrap();
        assert_eq!(g.truth, vec![1.0]);
        for i in 0..50 {
            let x = g.dataset.x.get(i, 0);
            assert_eq!(g.raw_y.get(i, 0), x.powi(3));
        }

        let v = ridge_direction(4);
        let t = crate::linalg::dot(&v, &[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!((t - 2.0).abs() < 1e-15);
        assert!((ridge_response(t, false)[0] - 8.0).abs() < 1e-12);

        assert_eq!(ridge_response(0.0, true), vec![0.0, 0.0, 1.0, 0.0]);
        assert!(gen_rudimentary(0, 10, 1, false).is_err());
    }

    #[test]
    fn rudimentary_is_deterministic_and_standardized() {
        let a = gen_rudimentary(3, 500, 9, true).unwrap();
        let b = gen_rudimentary(3, 500, 9, true).unwrap();
        assert_eq!(a.dataset, b.dataset);
        let s = Standardizer::fit(&a.dataset.y).unwrap();
        for (m, sd) in s.means.iter().zip(&s.stds) {
            assert!(m.abs() < 1e-10 && (sd - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn response_depends_only_on_ridge_coordinate() {
        let d = 5;
        let g = gen_rudimentary(d, 20, 2, true).unwrap();
        let v = &g.truth;
        let mut rng = SeededRng::new(77);
        for i in 0..20 {
            let x = g.dataset.x.row(i);
            let mut p = rng.normal_vec(d);
            let c = crate::linalg::dot(&p, v).unwrap();
            for (pi, vi) in p.iter_mut().zip(v) {
                *pi -= c * vi;
            }
            let moved: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + b).collect();
            let t0 = crate::linalg::dot(v, x).unwrap();
            let t1 = crate::linalg::dot(v, &moved).unwrap();
            let (y0, y1) = (ridge_response(t0, true), ridge_response(t1, true));
            for (a, b) in y0.iter().zip(&y1) {
                assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn split_examples() {
        let g = gen_rudimentary(2, 20_000, 1, false).unwrap();
        let (a, b) = split(&g.dataset, 0.8, 5).unwrap();
        assert_eq!((a.len(), b.len()), (16_000, 4_000));
        let (a2, _) = split(&g.dataset, 0.8, 5).unwrap();
        assert_eq!(a, a2);
        assert!(matches!(split(&g.dataset, 1.0, 5), Err(EcaError::Config(_))));
        let tiny = g.dataset.select(&[0]);
        assert!(split(&tiny, 0.5, 1).is_err());
    }

    #[test]
    fn split_is_disjoint_and_exhaustive() {
        let x = Matrix::new(37, 1, (0..37).map(f64::from).collect()).unwrap();
        let ds = Dataset::new(x.clone(), x).unwrap();
        let (a, b) = split(&ds, 0.3, 11).unwrap();
        let mut seen: Vec<f64> = a.x.as_slice().iter().chain(b.x.as_slice()).copied().collect();
        seen.sort_by(f64::total_cmp);
        assert_eq!(seen, (0..37).map(f64::from).collect::<Vec<_>>());
    }

    #[test]
    fn matrix_text_format() {
        let m = parse_matrix("1,2\n3,4").unwrap();
        assert_eq!(m.shape(), (2, 2));
        assert_eq!(m.as_slice(), &[1.0, 2.0, 3.0, 4.0]);
        assert!(matches!(parse_matrix("1,2\n3"), Err(EcaError::Format(_))));
        assert!(matches!(parse_matrix("1,x"), Err(EcaError::Format(_))));
        assert!(matches!(parse_matrix(""), Err(EcaError::Format(_))));
        assert!(matches!(parse_matrix("1,NaN"), Err(EcaError::Format(_))));
    }

    #[test]
    fn matrix_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let mut rng = SeededRng::new(4);
        let m = Matrix::new(13, 5, (0..65).map(|_| rng.normal() * 1e3).collect()).unwrap();
        save_matrix(&path, &m).unwrap();
        let back = load_matrix(&path).unwrap();
        assert_eq!(back, m);
        assert!(matches!(
            load_matrix(dir.path().join("missing.csv")),
            Err(EcaError::Io { .. })
        ));
    }

    proptest! {
        #[test]
        fn standardize_round_trip(data in prop::collection::vec(-1e4f64..1e4, 12..40)) {
            let rows = data.len() / 3;
            let m = Matrix::new(rows, 3, data[..rows * 3].to_vec()).unwrap();
            if let Ok(s) = Standardizer::fit(&m) {
                let z = s.standardize(&m).unwrap();
                let back = s.inverse_standardize(&z).unwrap();
                for (a, b) in back.as_slice().iter().zip(m.as_slice()) {
                    prop_assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0));
                }
                let zs = Standardizer::fit(&z).unwrap();
                for (mu, sd) in zs.means.iter().zip(&zs.stds) {
                    prop_assert!(mu.abs() < 1e-10);
                    prop_assert!((sd - 1.0).abs() < 1e-10);
                }
            }
        }

        #[test]
        fn csv_round_trip_bit_exact(data in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..30)) {
            let m = Matrix::new(data.len(), 1, data).unwrap();
            let back = parse_matrix(&format_matrix(&m)).unwrap();
            for (a, b) in back.as_slice().iter().zip(m.as_slice()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
