use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use behaveformer::pipeline::sha256_hex;
use serde::Serialize;

#[derive(Serialize)]
struct Artifact {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    command: &'a str,
    seed: u64,
    config_digest: String,
    config: &'a C,
    artifacts: &'a [Artifact],
}

/// Output directory of one command plus the hashes of what it wrote.
pub struct Run {
    dir: PathBuf,
    command: &'static str,
    artifacts: Vec<Artifact>,
}

impl Run {
    pub fn new(dir: &Path, command: &'static str) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command,
            artifacts: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(name);
        std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.record(name)
    }

    /// Records a file something else already wrote under the output directory.
    pub fn record(&mut self, name: &str) -> Result<()> {
        let path = self.path(name);
        let bytes = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        self.artifacts.push(Artifact {
            path: name.to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    /// Writes `run.json` with the seed, a digest of `config` and every artifact hash.
    pub fn finish<C: Serialize>(self, seed: u64, config: &C) -> Result<()> {
        let config_digest = config_digest(config);
        let m = Manifest {
            command: self.command,
            seed,
            config_digest,
            config,
            artifacts: &self.artifacts,
        };
        let text = serde_json::to_string_pretty(&m)?;
        std::fs::write(self.dir.join("run.json"), text + "\n")?;
        eprintln!(
            "{}: wrote {} artifacts to {}",
            self.command,
            self.artifacts.len(),
            self.dir.display()
        );
        Ok(())
    }
}

pub fn config_digest<C: Serialize>(config: &C) -> String {
    sha256_hex(&serde_json::to_vec(config).expect("serializable config"))
}
