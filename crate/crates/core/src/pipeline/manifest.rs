use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use super::io::{check_schema, read_json, write_json, SCHEMA_VERSION};
use crate::error::{Error, Result};

pub fn sha256_file(path: &Path) -> Result<String> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let mut reader = BufReader::new(file);
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = reader.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    /// Path relative to the run's base directory.
    pub path: String,
    pub sha256: String,
}

/// Provenance record of one stage: what it read, what it wrote and under
/// which configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub stage: String,
    pub schema_version: u32,
    pub seed: u64,
    pub config_sha256: String,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
}

fn relative(base: &Path, path: &Path) -> String {
    path.strip_prefix(base).unwrap_or(path).to_string_lossy().replace('\\', "/")
}

impl Manifest {
    pub fn new(stage: &str, cfg: &RunConfig) -> Result<Self> {
        Ok(Manifest {
            stage: stage.to_string(),
            schema_version: SCHEMA_VERSION,
            seed: cfg.seed,
            config_sha256: sha256_bytes(serde_json::to_string(cfg)?.as_bytes()),
            inputs: Vec::new(),
            outputs: Vec::new(),
        })
    }

    pub fn input(&mut self, base: &Path, path: &Path) -> Result<()> {
        self.inputs.push(FileHash {
            path: relative(base, path),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn output(&mut self, base: &Path, path: &Path) -> Result<()> {
        self.outputs.push(FileHash {
            path: relative(base, path),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let m: Manifest = read_json(path)?;
        check_schema(m.schema_version, &format!("manifest {}", path.display()))?;
        Ok(m)
    }

    /// Fail unless `path` still has the hash this manifest recorded for it.
    pub fn verify_output(&self, base: &Path, path: &Path) -> Result<()> {
        let rel = relative(base, path);
        let recorded = self
            .outputs
            .iter()
            .find(|f| f.path == rel)
            .ok_or_else(|| Error::Provenance(format!("stage `{}` did not produce {rel}", self.stage)))?;
        let actual = sha256_file(path)?;
        if actual != recorded.sha256 {
            return Err(Error::Provenance(format!(
                "{rel} changed after stage `{}` wrote it",
                self.stage
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_bytes(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn tampering_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path();
        let file = base.join("out.txt");
        std::fs::write(&file, "one").unwrap();
        let cfg = RunConfig::from_toml("seed = 1\n").unwrap();
        let mut m = Manifest::new("demo", &cfg).unwrap();
        m.output(base, &file).unwrap();
        assert_eq!(m.outputs[0].path, "out.txt");
        m.verify_output(base, &file).unwrap();
        std::fs::write(&file, "two").unwrap();
        assert!(matches!(m.verify_output(base, &file), Err(Error::Provenance(_))));
    }
}
