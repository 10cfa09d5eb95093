//! Output files with content digests and a run manifest.
//!
//! Files written through [`Outputs`] are removed again unless
//! [`Outputs::finish`] runs, so a failed command leaves nothing behind.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

struct HashingWriter<W> {
    inner: W,
    hasher: Sha256,
    bytes: u64,
}

impl<W: Write> Write for HashingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hasher.update(&buf[..n]);
        self.bytes += n as u64;
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileDigest {
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a, C: Serialize> {
    pub command: &'a str,
    pub args: Vec<String>,
    pub version: &'static str,
    pub seed: Option<u64>,
    pub config: &'a C,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub outputs: Vec<FileDigest>,
}

pub fn unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

pub struct Outputs {
    dir: PathBuf,
    written: Vec<PathBuf>,
    digests: Vec<FileDigest>,
    committed: bool,
}

impl Outputs {
    pub fn create(dir: &Path) -> io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            written: Vec::new(),
            digests: Vec::new(),
            committed: false,
        })
    }

    /// Writes `name` through `fill` and records its digest.
    pub fn write<E>(
        &mut self,
        name: &str,
        fill: impl FnOnce(&mut dyn Write) -> Result<(), E>,
    ) -> Result<(), E>
    where
        E: From<io::Error>,
    {
        let path = self.dir.join(name);
        let file = File::create(&path)?;
        self.written.push(path);
        let mut w = HashingWriter {
            inner: BufWriter::new(file),
            hasher: Sha256::new(),
            bytes: 0,
        };
        fill(&mut w)?;
        w.flush()?;
        self.digests.push(FileDigest {
            file: name.to_string(),
            bytes: w.bytes,
            sha256: hex::encode(w.hasher.finalize()),
        });
        Ok(())
    }

    pub fn digests(&self) -> &[FileDigest] {
        &self.digests
    }

    /// Writes `manifest.json` and keeps every file.
    pub fn finish<C: Serialize>(mut self, manifest: &Manifest<'_, C>) -> io::Result<()> {
        let mut text = serde_json::to_string_pretty(manifest)?;
        text.push('\n');
        std::fs::write(self.dir.join("manifest.json"), text)?;
        self.committed = true;
        Ok(())
    }
}

impl Drop for Outputs {
    fn drop(&mut self) {
        if !self.committed {
            for path in &self.written {
                let _ = std::fs::remove_file(path);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_matches_content() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = Outputs::create(dir.path()).unwrap();
        out.write::<io::Error>("a.txt", |w| w.write_all(b"abc"))
            .unwrap();
        assert_eq!(
            out.digests()[0].sha256,
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        assert_eq!(out.digests()[0].bytes, 3);
    }

    #[test]
    fn dropped_outputs_are_removed() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut out = Outputs::create(dir.path()).unwrap();
            out.write::<io::Error>("a.txt", |w| w.write_all(b"x"))
                .unwrap();
            assert!(dir.path().join("a.txt").exists());
        }
        assert!(!dir.path().join("a.txt").exists());
    }
}
