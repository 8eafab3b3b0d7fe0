//! Output directory handling and provenance stamps.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use perr_core::simulation::OutputMeta;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Hex characters of the SHA-256 digest kept as the config hash.
const HASH_LEN: usize = 16;

/// Seed, config hash and tool version, stamped onto every artifact.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
    pub tool_version: String,
}

impl Provenance {
    /// Hashes the serialized run configuration together with any input digests.
    pub fn new<C: Serialize>(seed: u64, command: &str, config: &C, inputs: &[String]) -> Self {
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update([0]);
        h.update(serde_json::to_vec(config).expect("run configs serialize"));
        for digest in inputs {
            h.update([0]);
            h.update(digest.as_bytes());
        }
        Provenance { seed, config_hash: short_hex(&h.finalize()), tool_version: TOOL_VERSION.to_string() }
    }

    pub fn meta(&self) -> OutputMeta {
        OutputMeta { config_hash: self.config_hash.clone(), tool_version: self.tool_version.clone() }
    }

    /// Comment lines for CSV files whose columns are fixed.
    pub fn preamble(&self) -> Vec<String> {
        vec![format!(
            "seed={} config_hash={} tool_version={}",
            self.seed, self.config_hash, self.tool_version
        )]
    }

    pub fn write_preamble<W: Write>(&self, mut w: W) -> std::io::Result<W> {
        for line in self.preamble() {
            writeln!(w, "# {line}")?;
        }
        Ok(w)
    }
}

fn short_hex(bytes: &[u8]) -> String {
    let mut s = hex::encode(bytes);
    s.truncate(HASH_LEN);
    s
}

/// Full SHA-256 of a file's bytes.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// The only place files are created; names never contain separators.
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating output directory {}", root.display()))?;
        Ok(OutDir { root: root.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        debug_assert!(!name.contains(['/', '\\']) && name != "..");
        self.root.join(name)
    }

    /// A subdirectory, itself an output directory.
    pub fn subdir(&self, name: &str) -> Result<OutDir> {
        OutDir::create(&self.path(name))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn file(&self, name: &str) -> Result<BufWriter<File>> {
        let path = self.path(name);
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok(BufWriter::new(f))
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut w = self.file(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }
}
