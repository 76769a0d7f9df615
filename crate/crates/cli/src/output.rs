use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;

/// Files written into an output directory by one command. If the command
/// fails, everything written so far is removed again.
pub struct OutputSet {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl OutputSet {
    pub fn create(dir: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> anyhow::Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn discard(self) {
        for p in self.written {
            let _ = fs::remove_file(p);
        }
    }
}

/// Runs `body` against a fresh output set, removing its files on failure.
pub fn with_outputs<T, E>(
    dir: &Path,
    body: impl FnOnce(&mut OutputSet) -> Result<T, E>,
) -> Result<T, E>
where
    E: From<anyhow::Error>,
{
    let mut out = OutputSet::create(dir)?;
    match body(&mut out) {
        Ok(v) => Ok(v),
        Err(e) => {
            out.discard();
            Err(e)
        }
    }
}

/// Serializes rows to CSV, writing the header even when there are no rows.
pub fn csv_bytes<T: serde::Serialize>(
    header: &[&str],
    rows: impl IntoIterator<Item = T>,
) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().context("flushing csv")
}
