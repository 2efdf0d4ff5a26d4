//! Report envelope shared by every subcommand: provenance metadata, input
//! digests and deterministic file output.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Meta {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub inputs: Vec<InputDigest>,
}

impl Meta {
    pub fn new(command: &'static str, seed: u64) -> Self {
        Self { tool: "limforge", version: env!("CARGO_PKG_VERSION"), command, seed, inputs: Vec::new() }
    }

    /// Record the SHA-256 of an input file. Paths are kept as given so the
    /// report does not depend on the working directory layout beyond that.
    pub fn digest(&mut self, path: &Path) -> Result<(), CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        self.inputs.push(InputDigest { path: path.display().to_string(), sha256: hex::encode(Sha256::digest(&bytes)) });
        Ok(())
    }
}

#[derive(Serialize)]
pub struct Envelope<'a, T: Serialize> {
    pub meta: &'a Meta,
    #[serde(flatten)]
    pub body: &'a T,
}

/// Derive a named sub-seed from the master seed so each consumer of
/// randomness gets an independent, reproducible stream.
pub fn sub_seed(master: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(name.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

pub struct OutDir(pub PathBuf);

impl OutDir {
    pub fn create(path: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(path)
            .map_err(|e| CliError::input(format!("cannot create output directory {}: {e}", path.display())))?;
        Ok(Self(path.to_path_buf()))
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
        let p = self.path(name);
        fs::write(&p, contents).map_err(|e| CliError::internal(format!("writing {}: {e}", p.display())))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, meta: &Meta, body: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(&Envelope { meta, body })
            .map_err(|e| CliError::internal(format!("serializing {name}: {e}")))?;
        text.push('\n');
        self.write(name, text)
    }
}
