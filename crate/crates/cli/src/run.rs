use std::path::{Path, PathBuf};
use std::time::Instant;

use eca::rng::SeededRng;
use eca::{EcaError, Result};
use serde::{Deserialize, Serialize};

use crate::args::Command;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub name: String,
    pub seconds: f64,
}

/// Record of one invocation. `args` holds the command with every seed
/// resolved, so replaying it reproduces the outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub command: String,
    pub args: Command,
    pub options: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub timings: Vec<Phase>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EcaError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| EcaError::Format(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text).map_err(|e| EcaError::io(path, e))
    }
}

pub struct Context {
    pub strict: bool,
}

impl Context {
    /// Picks the explicit seed, else a recorded one, else a fresh one unless
    /// running strict.
    pub fn seed(&self, explicit: Option<u64>, recorded: Option<u64>, command: &str) -> Result<u64> {
        match explicit.or(recorded) {
            Some(s) => Ok(s),
            None if self.strict => Err(EcaError::config(format!(
                "{command} is randomized and --strict requires --seed"
            ))),
            None => {
                let s = SeededRng::entropy_seed();
                log::info!("{command}: no seed given, drew {s}");
                Ok(s)
            }
        }
    }
}

/// What a command reports back for its manifest.
pub struct Outcome {
    pub options: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub timings: Vec<Phase>,
    pub manifest_path: PathBuf,
}

#[derive(Default)]
pub struct Timer {
    phases: Vec<Phase>,
}

impl Timer {
    pub fn time<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = Instant::now();
        let out = f()?;
        self.phases.push(Phase {
            name: name.to_string(),
            seconds: start.elapsed().as_secs_f64(),
        });
        Ok(out)
    }

    pub fn into_phases(self) -> Vec<Phase> {
        self.phases
    }
}

pub fn execute(command: Command, ctx: &Context, manifest_override: Option<PathBuf>) -> Result<()> {
    let mut command = match command {
        Command::Replay(r) => {
            let recorded = RunManifest::load(&r.run)?;
            if matches!(recorded.args, Command::Replay(_)) {
                return Err(EcaError::config("a replay manifest cannot be replayed"));
            }
            log::info!("replaying {} from {}", recorded.command, r.run.display());
            recorded.args
        }
        other => other,
    };
    let start = Instant::now();
    let outcome = crate::commands::dispatch(&mut command, ctx)?;
    let mut timings = outcome.timings;
    timings.push(Phase {
        name: "total".into(),
        seconds: start.elapsed().as_secs_f64(),
    });
    let manifest = RunManifest {
        tool: format!("eca {}", env!("CARGO_PKG_VERSION")),
        command: command.name().into(),
        args: command,
        options: outcome.options,
        inputs: outcome.inputs,
        outputs: outcome.outputs,
        seed: outcome.seed,
        timings,
    };
    let path = manifest_override.unwrap_or(outcome.manifest_path);
    manifest.save(&path)?;
    log::info!("run manifest written to {}", path.display());
    Ok(())
}
