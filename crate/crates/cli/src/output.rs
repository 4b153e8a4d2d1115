//! Output bundles are staged in a sibling temporary directory and renamed
//! into place only when complete.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use sha2::{Digest, Sha256};
use tempfile::TempDir;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub struct Staging {
    dir: TempDir,
    target: PathBuf,
    files: Vec<String>,
}

impl Staging {
    pub fn new(target: &Path) -> anyhow::Result<Self> {
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).with_context(|| format!("creating {}", parent.display()))?;
        let name = target.file_name().map_or("out".into(), |n| n.to_string_lossy().into_owned());
        let dir = tempfile::Builder::new()
            .prefix(&format!(".{name}.partial-"))
            .tempdir_in(&parent)
            .with_context(|| format!("creating a staging directory in {}", parent.display()))?;
        Ok(Self { dir, target: target.to_path_buf(), files: Vec::new() })
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    /// Write a file relative to the staging root, creating subdirectories.
    pub fn write(&mut self, rel: &str, contents: &[u8]) -> anyhow::Result<()> {
        let path = self.dir.path().join(rel);
        if let Some(p) = path.parent() {
            fs::create_dir_all(p)?;
        }
        fs::write(&path, contents).with_context(|| format!("writing {rel}"))?;
        self.files.push(rel.to_string());
        Ok(())
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    /// Move the staged tree to the target, replacing an earlier bundle.
    pub fn commit(self) -> anyhow::Result<PathBuf> {
        let staged = self.dir.keep();
        let target = self.target;
        if target.exists() {
            let old = staged.with_extension("old");
            fs::rename(&target, &old).with_context(|| format!("moving aside {}", target.display()))?;
            if let Err(e) = fs::rename(&staged, &target) {
                let _ = fs::rename(&old, &target);
                let _ = fs::remove_dir_all(&staged);
                return Err(e).with_context(|| format!("replacing {}", target.display()));
            }
            fs::remove_dir_all(&old).with_context(|| format!("removing {}", old.display()))?;
        } else if let Err(e) = fs::rename(&staged, &target) {
            let _ = fs::remove_dir_all(&staged);
            return Err(e).with_context(|| format!("creating {}", target.display()));
        }
        Ok(target)
    }
}

/// Replace a single file atomically.
pub fn write_file_atomic(path: &Path, contents: &[u8]) -> anyhow::Result<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(parent)?;
    let mut tmp = tempfile::NamedTempFile::new_in(parent)?;
    tmp.write_all(contents)?;
    tmp.persist(path).map_err(|e| e.error).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dropped_staging_leaves_nothing() {
        let root = tempfile::tempdir().unwrap();
        let target = root.path().join("run");
        {
            let mut s = Staging::new(&target).unwrap();
            s.write("a/b.csv", b"x").unwrap();
        }
        assert!(!target.exists());
        assert_eq!(fs::read_dir(root.path()).unwrap().count(), 0);
    }

    #[test]
    fn commit_replaces_previous_bundle() {
        let root = tempfile::tempdir().unwrap();
        let target = root.path().join("run");
        fs::create_dir(&target).unwrap();
        fs::write(target.join("stale.csv"), "old").unwrap();
        let mut s = Staging::new(&target).unwrap();
        s.write("fresh.csv", b"new").unwrap();
        assert_eq!(s.files(), ["fresh.csv"]);
        s.commit().unwrap();
        assert!(!target.join("stale.csv").exists());
        assert_eq!(fs::read_to_string(target.join("fresh.csv")).unwrap(), "new");
        assert_eq!(fs::read_dir(root.path()).unwrap().count(), 1);
    }

    #[test]
    fn digest_is_hex_sha256() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
