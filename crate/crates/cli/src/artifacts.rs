use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST: &str = "manifest.json";

/// The output directory of a run. All artifact names are relative to it.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub artifacts: Vec<ManifestEntry>,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(io(root))?;
        Ok(RunDir { root: root.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Absolute path of an artifact; parent directories are created.
    pub fn path(&self, name: &str) -> PathBuf {
        let p = self.root.join(name);
        if let Some(parent) = p.parent() {
            let _ = fs::create_dir_all(parent);
        }
        p
    }

    /// The path of an artifact produced by `stage`, or MissingCache.
    pub fn require(&self, name: &str, stage: &'static str) -> Result<PathBuf, CliError> {
        let p = self.root.join(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(CliError::MissingCache { path: p, stage })
        }
    }

    pub fn exists(&self, name: &str) -> bool {
        self.root.join(name).is_file()
    }

    /// Pretty JSON with a trailing newline. Field order follows the types,
    /// floats use the shortest round-trip representation.
    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::stage("artifacts", e))?;
        text.push('\n');
        self.write_text(name, &text)
    }

    pub fn read_json<T: DeserializeOwned>(&self, name: &str, stage: &'static str) -> Result<T, CliError> {
        let p = self.require(name, stage)?;
        let text = fs::read_to_string(&p).map_err(io(&p))?;
        serde_json::from_str(&text).map_err(|e| CliError::stage(stage, format!("{}: {e}", p.display())))
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<(), CliError> {
        let p = self.path(name);
        fs::write(&p, text).map_err(io(&p))
    }

    /// Every file under the run directory except the manifest, by relative
    /// path in byte order.
    pub fn artifacts(&self) -> Result<Vec<String>, CliError> {
        let mut out = Vec::new();
        let mut stack = vec![self.root.clone()];
        while let Some(dir) = stack.pop() {
            for entry in fs::read_dir(&dir).map_err(io(&dir))? {
                let entry = entry.map_err(io(&dir))?;
                let p = entry.path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    let rel = p.strip_prefix(&self.root).expect("under root").to_string_lossy().replace('\\', "/");
                    if rel != MANIFEST {
                        out.push(rel);
                    }
                }
            }
        }
        out.sort();
        Ok(out)
    }

    /// Rewrites manifest.json with the size and SHA-256 of every artifact.
    pub fn write_manifest(&self) -> Result<Manifest, CliError> {
        let mut artifacts = Vec::new();
        for rel in self.artifacts()? {
            let p = self.root.join(&rel);
            let bytes = fs::read(&p).map_err(io(&p))?;
            artifacts.push(ManifestEntry { path: rel, bytes: bytes.len() as u64, sha256: hex::encode(Sha256::digest(&bytes)) });
        }
        let manifest = Manifest { artifacts };
        self.write_json(MANIFEST, &manifest)?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_lists_sorted_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::create(dir.path()).unwrap();
        run.write_text("b.txt", "beta").unwrap();
        run.write_text("a/z.txt", "").unwrap();
        let m = run.write_manifest().unwrap();
        let paths: Vec<&str> = m.artifacts.iter().map(|e| e.path.as_str()).collect();
        assert_eq!(paths, vec!["a/z.txt", "b.txt"]);
        // SHA-256 of the empty string.
        assert_eq!(m.artifacts[0].sha256, "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
        assert_eq!(m.artifacts[1].bytes, 4);
        // The manifest never lists itself.
        assert_eq!(run.write_manifest().unwrap(), m);
    }

    #[test]
    fn missing_cache_names_path_and_stage() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::create(dir.path()).unwrap();
        match run.read_json::<Manifest>("strings.json", "strings") {
            Err(CliError::MissingCache { path, stage }) => {
                assert!(path.ends_with("strings.json"));
                assert_eq!(stage, "strings");
            }
            other => panic!("{other:?}"),
        }
    }
}
