//! Output plumbing: significant-digit formatting, CSV assembly, run
//! manifests and the stdout/file sink.
//!
//! Formatting contract: numbers print in scientific notation with a fixed
//! significant-digit count (17 for standard precision, the configured digit
//! count for extended), '.' decimal separator, ',' delimiter, LF line
//! endings, header row first. Re-parsing and re-serializing a CSV yields
//! identical bytes.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use serde::Serialize;
use sha2::{Digest, Sha256};

use drlab::real::{Precision, Real};

/// Echo of one run: command, full parameter set, seed, precision, tool
/// version and a checksum of the payload it accompanies.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub params: Vec<(String, String)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub precision: Precision,
    pub version: &'static str,
    pub output_sha256: String,
}

impl RunManifest {
    pub fn new(command: &str, precision: Precision) -> Self {
        RunManifest {
            command: command.to_string(),
            params: Vec::new(),
            seed: None,
            precision,
            version: env!("CARGO_PKG_VERSION"),
            output_sha256: String::new(),
        }
    }

    pub fn param(mut self, key: &str, value: impl ToString) -> Self {
        self.params.push((key.to_string(), value.to_string()));
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn seal(mut self, payload: &[u8]) -> Self {
        let mut h = Sha256::new();
        h.update(payload);
        self.output_sha256 = hex::encode(h.finalize());
        self
    }
}

/// Where the payload goes; the manifest accompanies it (sibling file for
/// --out, stderr for stdout so the payload stream stays clean).
pub enum Sink {
    Stdout,
    File(PathBuf),
}

impl Sink {
    pub fn from_out(out: &Option<PathBuf>) -> Self {
        match out {
            Some(p) => Sink::File(p.clone()),
            None => Sink::Stdout,
        }
    }

    pub fn write(&self, payload: &[u8], manifest: &RunManifest) -> std::io::Result<()> {
        let manifest_json = serde_json::to_string(manifest).expect("manifest serializes");
        match self {
            Sink::Stdout => {
                std::io::stdout().write_all(payload)?;
                eprintln!("{manifest_json}");
            }
            Sink::File(path) => {
                fs::write(path, payload)?;
                let mut mpath = path.clone();
                let ext = match mpath.extension() {
                    Some(e) => format!("{}.manifest.json", e.to_string_lossy()),
                    None => "manifest.json".to_string(),
                };
                mpath.set_extension(ext);
                fs::write(mpath, manifest_json.as_bytes())?;
            }
        }
        Ok(())
    }
}

/// Significant digits used for a precision mode.
pub fn sig_digits(precision: Precision) -> usize {
    match precision {
        Precision::Standard => 17,
        Precision::Extended { digits } => digits as usize,
    }
}

/// Format one scalar at the active digit count.
pub fn fmt<R: Real>(x: &R, digits: usize) -> String {
    x.format_sig(digits)
}

/// CSV builder with the pinned dialect.
pub struct Csv {
    buf: String,
    cols: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut buf = String::new();
        buf.push_str(&header.join(","));
        buf.push('\n');
        Csv {
            buf,
            cols: header.len(),
        }
    }

    pub fn row(&mut self, fields: &[String]) {
        assert_eq!(fields.len(), self.cols, "csv row arity");
        self.buf.push_str(&fields.join(","));
        self.buf.push('\n');
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf.into_bytes()
    }
}

/// JSON payload with an embedded manifest: {"manifest": ..., "report": ...}.
/// The manifest checksum covers the compact serialization of the report.
pub fn json_with_manifest<T: Serialize>(report: &T, manifest: RunManifest) -> Vec<u8> {
    let report_bytes = serde_json::to_vec(report).expect("report serializes");
    let manifest = manifest.seal(&report_bytes);
    let combined = serde_json::json!({
        "manifest": serde_json::to_value(&manifest).unwrap(),
        "report": serde_json::from_slice::<serde_json::Value>(&report_bytes).unwrap(),
    });
    let mut out = serde_json::to_vec_pretty(&combined).expect("combined serializes");
    out.push(b'\n');
    out
}
