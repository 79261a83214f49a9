//! Run manifests: every artifact-producing command writes a JSON sidecar
//! recording the command, its effective configuration, input digests, the
//! seed, the tool version, and wall time, so a run can be audited and
//! replayed.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Snapshot of the effective configuration (file plus flag overrides).
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub seed: u64,
    pub tool_version: String,
    pub wall_time_s: f64,
    pub created_utc: String,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value, seed: u64) -> RunManifest {
        RunManifest {
            command: command.to_string(),
            config,
            inputs: Vec::new(),
            seed,
            tool_version: crate::VERSION.to_string(),
            wall_time_s: 0.0,
            created_utc: Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
        }
    }

    /// Digests a consumed file and records it.
    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    /// Writes the sidecar next to an artifact: `<artifact>.manifest.json`.
    /// Returns the sidecar's path.
    pub fn write_beside(&self, artifact: &Path) -> Result<PathBuf> {
        let mut name = artifact.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        let path = artifact.with_file_name(name);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| crate::error::Error::Format {
        offset: 0,
        message: format!("{}: {e}", path.display()),
    })
}

/// Streaming SHA-256 of a file, as lowercase hex.
pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_matches_the_known_empty_and_abc_vectors() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty");
        fs::write(&empty, b"").unwrap();
        assert_eq!(
            sha256_file(&empty).unwrap(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        let abc = dir.path().join("abc");
        fs::write(&abc, b"abc").unwrap();
        assert_eq!(
            sha256_file(&abc).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn digest_is_streamed_consistently_over_large_files() {
        let dir = tempfile::tempdir().unwrap();
        let big = dir.path().join("big");
        let payload: Vec<u8> = (0..200_000u32).map(|i| (i % 251) as u8).collect();
        fs::write(&big, &payload).unwrap();
        let mut hasher = Sha256::new();
        hasher.update(&payload);
        assert_eq!(sha256_file(&big).unwrap(), hex::encode(hasher.finalize()));
    }

    #[test]
    fn manifest_round_trips_beside_the_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("input.csv");
        fs::write(&input, "a,b\n1,2\n").unwrap();
        let artifact = dir.path().join("model.qien");
        fs::write(&artifact, "x").unwrap();

        let mut m = RunManifest::new("train", serde_json::json!({"variant": "Conv6"}), 7);
        m.add_input(&input).unwrap();
        m.wall_time_s = 1.25;
        let sidecar = m.write_beside(&artifact).unwrap();
        assert_eq!(sidecar, dir.path().join("model.qien.manifest.json"));

        let back = read_manifest(&sidecar).unwrap();
        assert_eq!(back.command, "train");
        assert_eq!(back.seed, 7);
        assert_eq!(back.config["variant"], "Conv6");
        assert_eq!(back.inputs.len(), 1);
        assert_eq!(back.inputs[0].sha256, sha256_file(&input).unwrap());
        assert_eq!(back.tool_version, crate::VERSION);
        assert_eq!(back.wall_time_s, 1.25);
    }

    #[test]
    fn missing_input_is_an_io_error() {
        let mut m = RunManifest::new("qc", serde_json::json!({}), 0);
        assert!(m.add_input(Path::new("/nonexistent/file")).is_err());
    }
}
