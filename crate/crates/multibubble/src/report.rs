//! Result envelopes and output plumbing for the command-line front
//! end. Every command wraps its payload in the same envelope so runs
//! are comparable: payload bytes are deterministic for a given config
//! and tool version, and only the timestamp varies.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct ResultEnvelope {
    pub command: String,
    pub config_hash: String,
    pub timestamp: String,
    pub version: String,
    pub payload: serde_json::Value,
}

impl ResultEnvelope {
    pub fn new(command: &str, config_hash: String, payload: serde_json::Value) -> Self {
        let secs = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        ResultEnvelope {
            command: command.to_string(),
            config_hash,
            timestamp: utc_timestamp(secs),
            version: env!("CARGO_PKG_VERSION").to_string(),
            payload,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("envelope serializes")
    }
}

/// Seconds since the Unix epoch to `YYYY-MM-DDThh:mm:ssZ`. Days are
/// converted with the standard civil-from-days calculation over
/// 400-year eras; see Hinnant, "chrono-Compatible Low-Level Date
/// Algorithms".
pub fn utc_timestamp(secs: u64) -> String {
    let days = (secs / 86_400) as i64;
    let rem = secs % 86_400;
    let (hh, mm, ss) = (rem / 3600, (rem % 3600) / 60, rem % 60);

    let z = days + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z.rem_euclid(146_097);
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = doy - (153 * mp + 2) / 5 + 1;
    let m = if mp < 10 { mp + 3 } else { mp - 9 };
    let y = yoe + era * 400 + i64::from(m <= 2);

    format!("{y:04}-{m:02}-{d:02}T{hh:02}:{mm:02}:{ss:02}Z")
}

/// A named side file produced by a command, e.g. a CSV table.
#[derive(Debug)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

impl Artifact {
    pub fn new(name: &str, contents: String) -> Self {
        Artifact { name: name.to_string(), contents }
    }
}

/// Writes the envelope and artifacts under `out_dir`, or prints the
/// envelope to stdout when no directory was given (artifacts are
/// dropped in that mode; the payload carries the same numbers).
pub fn emit(out_dir: Option<&Path>, envelope: &ResultEnvelope, artifacts: &[Artifact]) -> Result<()> {
    match out_dir {
        None => {
            println!("{}", envelope.to_json());
            Ok(())
        }
        Some(dir) => {
            std::fs::create_dir_all(dir)
                .map_err(|e| Error::config(format!("cannot create {}: {e}", dir.display())))?;
            let main = dir.join(format!("{}.json", envelope.command));
            std::fs::write(&main, envelope.to_json())
                .map_err(|e| Error::config(format!("cannot write {}: {e}", main.display())))?;
            println!("wrote {}", main.display());
            for a in artifacts {
                let path = dir.join(&a.name);
                std::fs::write(&path, &a.contents)
                    .map_err(|e| Error::config(format!("cannot write {}: {e}", path.display())))?;
                println!("wrote {}", path.display());
            }
            Ok(())
        }
    }
}
