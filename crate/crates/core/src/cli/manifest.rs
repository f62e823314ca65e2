//! Per-run provenance record.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::rng::fnv1a64;

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunManifest {
    pub command: String,
    /// Full argument list, program name excluded.
    pub args: Vec<String>,
    pub seed: Option<u64>,
    /// Resolved configuration as `key = value` lines.
    pub config: Option<String>,
    pub inputs: Vec<(PathBuf, u64)>,
    /// Output file names, relative to the run directory.
    pub outputs: Vec<String>,
    pub version: String,
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>) -> Self {
        Self {
            command: command.to_owned(),
            args,
            version: env!("CARGO_PKG_VERSION").to_owned(),
            ..Self::default()
        }
    }

    /// Records an input file with its FNV-1a digest.
    pub fn input(&mut self, path: &Path) -> std::io::Result<()> {
        let bytes = std::fs::read(path)?;
        self.inputs.push((path.to_owned(), fnv1a64(&bytes)));
        Ok(())
    }

    pub fn output(&mut self, name: impl Into<String>) {
        self.outputs.push(name.into());
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "command = {}", self.command);
        let _ = writeln!(s, "version = {}", self.version);
        let _ = writeln!(s, "args = {}", self.args.join(" "));
        if let Some(seed) = self.seed {
            let _ = writeln!(s, "seed = {seed}");
        }
        if let Some(c) = &self.config {
            let _ = writeln!(s, "\n[config]\n{}", c.trim_end());
        }
        let _ = writeln!(s, "\n[inputs]");
        for (p, h) in &self.inputs {
            let _ = writeln!(s, "{} = fnv1a64:{h:016x}", p.display());
        }
        let _ = writeln!(s, "\n[outputs]");
        for o in &self.outputs {
            let _ = writeln!(s, "{o}");
        }
        s
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::write(dir.join(MANIFEST_FILE), self.render())
    }
}
