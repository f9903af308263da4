//! Emulator-based component analysis (ECA).
//!
//! Given paired data `(X, Y)` and a feed-forward emulator `y_emu(x) ≈ y(x)`
//! of the forward map, ECA finds an orthonormal basis in input space whose
//! projections let the emulator cover as much response variance as
//! possible, then uses that basis to approximately invert the map.
//!
//! ```no_run
//! use std::sync::Arc;
//! use eca::{data_io, EcaModel, FitOptions, InverseOptions, MlpEmulator};
//!
//! # fn main() -> eca::Result<()> {
//! let emulator = Arc::new(MlpEmulator::load("emulator.json")?);
//! let x = data_io::load_matrix("x.csv")?;
//! let y = data_io::load_matrix("y.csv")?;
//!
//! let mut model = EcaModel::new(emulator);
//! let opts = FitOptions { seed: Some(123), ..FitOptions::default() };
//! model.fit(&x, &y, 3, &opts, 0)?;
//! println!("covered variance per rank: {:?}", model.y_var());
//!
//! // redo the last component with another seed
//! model.set_seed(42);
//! model.fit(&x, &y, 3, &FitOptions::default(), -1)?;
//!
//! let scores = model.transform(&x, 3)?;
//! let (t_prime, err) = model.inverse(&y, 3, &InverseOptions::default())?;
//! # let _ = (scores, t_prime, err);
//! # Ok(())
//! # }
//! ```

pub mod data_io;
pub mod eca;
pub mod emulator;
mod error;
pub mod linalg;
pub mod optimizer;
pub mod rng;

pub use crate::eca::{
    r2loss, ComponentObjective, EcaModel, EcaModelDocument, FitOptions, FitReport, InverseOptions,
};
pub use crate::emulator::{Activation, DenseLayer, MlpEmulator};
pub use crate::error::{EcaError, Result};
pub use crate::linalg::Matrix;
