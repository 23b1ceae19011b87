//! Run manifests: a small JSON record of what a command did, written
//! atomically next to the command's output. Directory outputs get a
//! `run_manifest.json` inside; file outputs get a sibling
//! `<name>.manifest.json`. The manifest carries wall-clock duration and
//! is therefore *not* part of the byte-reproducible artifact set.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::{CliError, CliResult};

pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<String>,
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub artifact_version: u32,
    pub duration_seconds: f64,
}

impl RunManifest {
    pub fn new(command: &str, started: Instant) -> Self {
        Self {
            command: command.to_string(),
            config: None,
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            artifact_version: ARTIFACT_VERSION,
            duration_seconds: started.elapsed().as_secs_f64(),
        }
    }

    /// Manifest location for a primary output path.
    pub fn path_for(out: &Path, out_is_dir: bool) -> PathBuf {
        if out_is_dir {
            out.join("run_manifest.json")
        } else {
            let name = out.file_name().map_or_else(
                || "out".to_string(),
                |n| n.to_string_lossy().into_owned(),
            );
            out.with_file_name(format!("{name}.manifest.json"))
        }
    }

    pub fn write(&self, out: &Path, out_is_dir: bool) -> CliResult<()> {
        let path = Self::path_for(out, out_is_dir);
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        pix2map::fsutil::write_atomic(&path, text.as_bytes())
            .map_err(|e| CliError::Domain(format!("cannot write {}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_paths() {
        assert_eq!(
            RunManifest::path_for(Path::new("/tmp/lib"), true),
            PathBuf::from("/tmp/lib/run_manifest.json")
        );
        assert_eq!(
            RunManifest::path_for(Path::new("/tmp/params.bin"), false),
            PathBuf::from("/tmp/params.bin.manifest.json")
        );
    }

    #[test]
    fn writes_json_with_version() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::new("train", Instant::now());
        m.seed = Some(7);
        m.outputs.push("params.bin".into());
        m.write(dir.path(), true).unwrap();
        let text = std::fs::read_to_string(dir.path().join("run_manifest.json")).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["command"], "train");
        assert_eq!(v["artifact_version"], 1);
        assert_eq!(v["seed"], 7);
    }
}
