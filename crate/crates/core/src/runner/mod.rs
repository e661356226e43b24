//! Experiment runner behind the `ocp` binary.
//!
//! A run resolves a [`Config`] against the keys its subcommand declares,
//! writes `manifest.cfg` with every resolved value, then computes and writes
//! its artifacts. The manifest is itself a valid config, so re-running it
//! reproduces the run. CSV files start with a `# manifest <hash>` line.

pub mod config;
pub mod svg;

mod commands;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

pub use config::{Config, Resolver};

use crate::error::{invalid, Error, Result};

pub const SUBCOMMANDS: [&str; 10] =
    ["simulate", "f-decay", "duality", "zeta-check", "moments", "ratio", "walks", "functional", "critscan", "report"];

pub const MANIFEST: &str = "manifest.cfg";

/// Fully resolved settings of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub subcommand: String,
    /// Every key with its resolved value, `seed` and `jobs` included.
    pub values: BTreeMap<String, String>,
}

impl Manifest {
    /// Hex SHA-256 over the crate version and every value except `jobs`,
    /// which cannot change any output.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("{} {}\n", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")));
        h.update(format!("subcommand = {}\n", self.subcommand));
        for (k, v) in self.values.iter().filter(|(k, _)| k.as_str() != "jobs") {
            h.update(format!("{k} = {v}\n"));
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "# {} {} run manifest\n# hash {}\nsubcommand = {}\n",
            env!("CARGO_PKG_NAME"),
            env!("CARGO_PKG_VERSION"),
            self.hash(),
            self.subcommand
        );
        for (k, v) in &self.values {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }
}

/// Collects artifacts in memory so that all file writes happen on one
/// thread once the computation has finished.
pub struct Artifacts {
    hash: String,
    files: Vec<(String, Vec<u8>)>,
}

pub(crate) fn fmt_f(x: f64) -> String {
    format!("{x}")
}

impl Artifacts {
    fn new(hash: String) -> Self {
        Artifacts { hash, files: Vec::new() }
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) {
        let mut s = format!("# manifest {}\n{}\n", self.hash, header.join(","));
        for r in rows {
            debug_assert_eq!(r.len(), header.len());
            s.push_str(&r.join(","));
            s.push('\n');
        }
        self.files.push((name.to_string(), s.into_bytes()));
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.files.push((name.to_string(), bytes));
        Ok(())
    }

    pub fn raw(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    fn write(self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut out = Vec::new();
        for (name, bytes) in self.files {
            let p = dir.join(name);
            fs::write(&p, bytes)?;
            out.push(p);
        }
        Ok(out)
    }
}

/// What a finished run wrote.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub manifest: Manifest,
    pub files: Vec<PathBuf>,
}

/// Resolves `cfg` for subcommand `name` without running anything.
fn resolve(name: &str, cfg: &Config) -> Result<(Manifest, commands::Plan)> {
    if !SUBCOMMANDS.contains(&name) {
        return invalid(format!("unknown subcommand {name:?}"));
    }
    let mut r = Resolver::new(cfg);
    let declared: String = r.value("subcommand", name.to_string())?;
    if declared != name {
        return invalid(format!("config is for subcommand {declared:?}, not {name:?}"));
    }
    let plan = commands::Plan::resolve(name, &mut r)?;
    let mut values = r.finish()?;
    values.remove("subcommand");
    Ok((Manifest { subcommand: name.to_string(), values }, plan))
}

/// Resolves, writes the manifest into `out`, runs on a pool of `jobs`
/// threads (0 means one per core) and writes the artifacts.
pub fn run_subcommand(name: &str, cfg: &Config, out: &Path) -> Result<RunOutcome> {
    let (manifest, plan) = resolve(name, cfg)?;
    let jobs: usize = manifest.values["jobs"].parse().map_err(|_| Error::Invalid("jobs".into()))?;
    fs::create_dir_all(out)?;
    fs::write(out.join(MANIFEST), manifest.render())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Resource(format!("thread pool: {e}")))?;
    let mut artifacts = Artifacts::new(manifest.hash());
    pool.install(|| plan.execute(&mut artifacts))?;
    let mut files = vec![out.join(MANIFEST)];
    files.extend(artifacts.write(out)?);
    Ok(RunOutcome { manifest, files })
}

/// Process exit status for an error: 2 for invalid input, 3 for resource
/// limits and failed bracketing, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Invalid(_) => 2,
        Error::Resource(_) | Error::Bracket { .. } => 3,
        _ => 1,
    }
}
