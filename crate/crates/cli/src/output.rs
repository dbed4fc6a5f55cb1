//! CSV files carrying a config-hash comment line and a header row.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

pub struct CsvOut {
    path: PathBuf,
    w: BufWriter<File>,
    width: usize,
}

impl CsvOut {
    pub fn create(dir: &Path, name: &str, hash: &str, header: &[&str]) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(name);
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = BufWriter::new(file);
        writeln!(w, "# config-hash: sha256:{hash}")?;
        writeln!(w, "{}", header.join(","))?;
        Ok(Self {
            path,
            w,
            width: header.len(),
        })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        debug_assert_eq!(fields.len(), self.width);
        writeln!(self.w, "{}", fields.join(","))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.w
            .flush()
            .with_context(|| format!("writing {}", self.path.display()))?;
        Ok(self.path)
    }
}

/// Row fields from `Display` values (floats use shortest round-trip form).
#[macro_export]
macro_rules! fields {
    ($($x:expr),* $(,)?) => { [$($x.to_string()),*] };
}
