use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use super::config::RunConfig;
use crate::error::Result;
use crate::VERSION;

/// `17` significant digits, enough to reproduce every `f64` exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Provenance embedded in every output file. The output location is left
/// out so that reruns into different directories produce identical files.
pub struct Metadata {
    pub config: RunConfig,
}

impl Metadata {
    pub fn new(config: &RunConfig) -> Self {
        Self {
            config: RunConfig {
                output_dir: None,
                ..config.clone()
            },
        }
    }

    /// `#` comment lines heading each CSV.
    pub fn csv_header(&self) -> String {
        format!(
            "# {VERSION}\n# seed: {}\n# grid: horizon={} n_steps={}\n# config: {}\n",
            self.config.seed,
            fmt_f64(self.config.horizon),
            self.config.n_steps,
            self.config.to_json()
        )
    }

    pub fn json(&self) -> Value {
        json!({
            "version": VERSION,
            "seed": self.config.seed,
            "grid": {"horizon": self.config.horizon, "n_steps": self.config.n_steps},
            "config": &self.config,
        })
    }
}

/// Writes `header` comment lines followed by the CSV rows.
pub fn write_csv<R, I>(path: &Path, header: &str, columns: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(columns)?;
    for row in rows {
        w.write_record(row)?;
    }
    let body = w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?;
    let mut out = header.as_bytes().to_vec();
    out.extend(body);
    fs::write(path, out)?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}
