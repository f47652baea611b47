use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

/// Provenance block embedded in every output file. Contains nothing
/// time-dependent, so reruns are byte-identical.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub config_digest: Option<String>,
    pub seed: Option<u64>,
    pub outputs: Vec<String>,
    /// Version of the CSV/JSON layout, see `docs/output-schemas.md`.
    pub schema: u32,
}

pub const SCHEMA_VERSION: u32 = 1;

impl RunManifest {
    pub fn new(subcommand: &str) -> Self {
        Self {
            tool: "qkd",
            version: env!("CARGO_PKG_VERSION"),
            subcommand: subcommand.to_string(),
            config_digest: None,
            seed: None,
            outputs: Vec::new(),
            schema: SCHEMA_VERSION,
        }
    }

    pub fn digest(mut self, hex: String) -> Self {
        self.config_digest = Some(hex);
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn output(mut self, path: &Path) -> Self {
        self.outputs.push(path.display().to_string());
        self
    }
}

/// Writes through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path.file_name().ok_or_else(|| io::Error::other("output path has no file name"))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

pub fn json_document<T: Serialize>(manifest: &RunManifest, result: &T) -> anyhow::Result<String> {
    let doc = serde_json::json!({ "manifest": manifest, "result": result });
    let mut s = serde_json::to_string_pretty(&doc)?;
    s.push('\n');
    Ok(s)
}

/// CSV with the manifest as a leading `#` comment line.
pub fn csv_document<T: Serialize>(manifest: &RunManifest, rows: &[T]) -> anyhow::Result<Vec<u8>> {
    let mut out = format!("# manifest: {}\n", serde_json::to_string(manifest)?).into_bytes();
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    out.extend(w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?);
    Ok(out)
}

/// Writes to `path`, or stdout when absent.
pub fn emit(path: Option<&Path>, bytes: &[u8]) -> io::Result<()> {
    match path {
        Some(p) => write_atomic(p, bytes),
        None => {
            use io::Write;
            let mut out = io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()
        }
    }
}
