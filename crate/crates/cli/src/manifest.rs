use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputEntry {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_digest: String,
    pub seed: u64,
    pub artifact_version: String,
    pub outputs: Vec<OutputEntry>,
}

impl RunManifest {
    pub fn new<C: Serialize>(command: &str, config: &C, seed: u64) -> Self {
        let canonical = serde_json::to_vec(config).expect("config serializes");
        RunManifest {
            command: command.to_string(),
            config_digest: sha256_hex(&canonical),
            seed,
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            outputs: Vec::new(),
        }
    }
}

/// Collects output files, writes them when an output directory is set,
/// and records their digests.
pub struct OutputSink {
    dir: Option<PathBuf>,
    pub manifest: RunManifest,
}

impl OutputSink {
    pub fn new(dir: Option<PathBuf>, manifest: RunManifest) -> std::io::Result<Self> {
        if let Some(d) = &dir {
            fs::create_dir_all(d)?;
        }
        Ok(OutputSink { dir, manifest })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> std::io::Result<()> {
        if let Some(d) = &self.dir {
            fs::write(d.join(name), bytes)?;
        }
        self.manifest.outputs.push(OutputEntry {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    /// Write `manifest.json` (or return it for printing when there is no
    /// output directory).
    pub fn finish(self) -> std::io::Result<String> {
        let mut js = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        js.push('\n');
        if let Some(d) = &self.dir {
            fs::write(d.join("manifest.json"), &js)?;
        }
        Ok(js)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_is_stable() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let a = RunManifest::new("x", &serde_json::json!({"k": 1}), 0);
        let b = RunManifest::new("x", &serde_json::json!({"k": 1}), 0);
        assert_eq!(a, b);
        assert_ne!(
            a.config_digest,
            RunManifest::new("x", &serde_json::json!({"k": 2}), 0).config_digest
        );
    }

    #[test]
    fn sink_writes_files_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut s =
            OutputSink::new(Some(dir.path().join("o")), RunManifest::new("t", &1, 3)).unwrap();
        s.write("a.txt", b"hi").unwrap();
        s.finish().unwrap();
        let m: RunManifest =
            serde_json::from_str(&fs::read_to_string(dir.path().join("o/manifest.json")).unwrap())
                .unwrap();
        assert_eq!(m.outputs[0].path, "a.txt");
        assert_eq!(fs::read(dir.path().join("o/a.txt")).unwrap(), b"hi");
    }
}
