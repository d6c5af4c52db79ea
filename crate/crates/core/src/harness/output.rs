//! Output directory with JSON summaries and CSV tables; files are removed again unless the
//! run commits.

use super::{HarnessError, WeightedSample};
use serde::Serialize;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub struct OutputDir {
    dir: PathBuf,
    created_dir: bool,
    files: Vec<PathBuf>,
    committed: bool,
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self, HarnessError> {
        let created_dir = !dir.exists();
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            created_dir,
            files: Vec::new(),
            committed: false,
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    fn open(&mut self, name: &str) -> Result<BufWriter<File>, HarnessError> {
        let path = self.dir.join(name);
        let file = File::create(&path)?;
        self.files.push(path);
        Ok(BufWriter::new(file))
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), HarnessError> {
        let mut w = self.open(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    /// Writes `name` through `body`, which receives a buffered writer.
    pub fn write_with<F>(&mut self, name: &str, body: F) -> Result<(), HarnessError>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<(), HarnessError>,
    {
        let mut w = self.open(name)?;
        body(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Keeps the written files.
    pub fn commit(mut self) -> Vec<PathBuf> {
        self.committed = true;
        std::mem::take(&mut self.files)
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        if self.committed {
            return;
        }
        for f in &self.files {
            let _ = std::fs::remove_file(f);
        }
        if self.created_dir {
            let _ = std::fs::remove_dir(&self.dir);
        }
    }
}

pub fn write_samples_csv<W: Write>(samples: &[WeightedSample], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let n = samples.first().map_or(1, |s| s.phi0.len());
    let mut header = vec!["index".to_string(), "seed".into()];
    header.extend((0..n).map(|k| format!("phi0_{k}")));
    header.extend(
        [
            "log_upsilon",
            "boundary",
            "converged",
            "residual",
            "iterations",
            "solution_count",
            "cluster",
        ]
        .map(String::from),
    );
    out.write_record(&header)?;
    for s in samples {
        let mut row = vec![s.index.to_string(), s.seed.to_string()];
        row.extend(s.phi0.iter().map(|v| format!("{v:.17e}")));
        row.extend([
            format!("{:.17e}", s.log_upsilon),
            format!("{:.17e}", s.boundary),
            s.converged.to_string(),
            format!("{:.3e}", s.residual),
            s.iterations.to_string(),
            s.solution_count.map(|c| c.to_string()).unwrap_or_default(),
            s.cluster.map(|c| c.to_string()).unwrap_or_default(),
        ]);
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_estimates_csv<W: Write>(
    estimates: &[super::ObservableEstimate],
    w: W,
) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["h", "estimate", "se", "target", "target_error", "z"])?;
    for e in estimates {
        out.write_record([
            e.tag.clone(),
            format!("{:.12e}", e.estimate),
            format!("{:.3e}", e.se),
            format!("{:.12e}", e.target),
            format!("{:.3e}", e.target_error),
            format!("{:.4}", e.z),
        ])?;
    }
    out.flush()?;
    Ok(())
}
