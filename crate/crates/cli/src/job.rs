//! Per-invocation state: the resolved scenario, the locked output
//! directory and the provenance stamped on every artifact.

use std::fs::{self, OpenOptions};
use std::io;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use chipwave::combiner::{cached_field_libraries, FieldLibrary};
use chipwave::fdtd::RunOptions;
use chipwave::scenario::{load_scenario, serialize_scenario, Scenario};
use chipwave::{presets, Error};

use crate::Failure;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
const LOCK_NAME: &str = ".chipwave.lock";

/// Scenario from a file path, falling back to the bundled presets.
pub fn resolve_scenario(spec: &str) -> Result<Scenario, Failure> {
    let path = Path::new(spec);
    if path.is_file() {
        return Ok(load_scenario(&fs::read_to_string(path)?)?);
    }
    match presets::scenario_text(spec) {
        Some(_) => Ok(presets::scenario(spec)?),
        None => Err(Failure::Usage(format!(
            "'{spec}' is neither a scenario file nor a preset (presets: {})",
            presets::scenario_names().join(", ")
        ))),
    }
}

pub fn scenario_hash(s: &Scenario) -> String {
    let d = Sha256::digest(serialize_scenario(s).as_bytes());
    d.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

struct Lock(PathBuf);

impl Lock {
    fn acquire(dir: &Path) -> Result<Lock, Failure> {
        let path = dir.join(LOCK_NAME);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Lock(path)),
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(Failure::Usage(format!(
                "{} is in use by another job (delete {} if it is stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

pub struct Job {
    pub scenario: Scenario,
    pub hash: String,
    pub seed: u64,
    pub out: PathBuf,
    pub cache: PathBuf,
    pub strict: bool,
    _lock: Lock,
}

impl Job {
    /// Create (and lock) the output directory. Call only after every input
    /// has been validated.
    pub fn open(
        scenario: Scenario,
        seed: u64,
        out: PathBuf,
        cache: Option<PathBuf>,
        strict: bool,
    ) -> Result<Job, Failure> {
        fs::create_dir_all(&out)?;
        let lock = Lock::acquire(&out)?;
        Ok(Job {
            hash: scenario_hash(&scenario),
            cache: cache.unwrap_or_else(|| out.join("cache")),
            scenario,
            seed,
            out,
            strict,
            _lock: lock,
        })
    }

    pub fn provenance(&self) -> String {
        format!(
            "# chipwave {VERSION} scenario {} {} seed {}\n",
            self.scenario.name, self.hash, self.seed
        )
    }

    /// Text artifact with the provenance header on top.
    pub fn write_text(&self, name: &str, body: &str) -> Result<PathBuf, Failure> {
        let path = self.out.join(name);
        fs::write(&path, format!("{}{body}", self.provenance()))?;
        Ok(path)
    }

    pub fn write_bytes(&self, name: &str, body: &[u8]) -> Result<PathBuf, Failure> {
        let path = self.out.join(name);
        fs::write(&path, body)?;
        Ok(path)
    }

    /// Warn about runs that stopped at the step limit; fatal under `--strict`.
    pub fn check_converged(&self, what: &str, ports: &[u32]) -> Result<(), Failure> {
        if ports.is_empty() {
            return Ok(());
        }
        let msg = format!("{what}: runs driving ports {ports:?} stopped before the energy floor");
        if self.strict {
            return Err(Failure::Unconverged(msg));
        }
        log::warn!("{msg}");
        eprintln!("warning: {msg}");
        Ok(())
    }

    /// Field library for `ports` at the scenario frequency, through the
    /// on-disk cache.
    pub fn library(&self, ports: &[u32]) -> Result<FieldLibrary, Failure> {
        let f = self.scenario.frequency_ghz;
        let mut libs = cached_field_libraries(&self.scenario, ports, &[f], &RunOptions::default(), &self.cache)?;
        let lib = libs.pop().ok_or_else(|| Error::Resource("empty library set".into()))?;
        self.check_converged("field library", &lib.unconverged)?;
        Ok(lib)
    }
}
