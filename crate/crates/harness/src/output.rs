// SPDX-License-Identifier: Apache-2.0

//! CSV tables with an optional non-private marker line.

use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

/// First line of every table that carries non-private debug columns.
pub const DEBUG_MARKER: &str = "# NONPRIVATE_DEBUG=1";

/// Hex prefix of the SHA-256 of `key=value;` pairs in the given order.
pub fn config_hash(pairs: &[(&str, String)]) -> String {
    let mut h = Sha256::new();
    for (k, v) in pairs {
        h.update(k.as_bytes());
        h.update(b"=");
        h.update(v.as_bytes());
        h.update(b";");
    }
    hex::encode(&h.finalize()[..8])
}

/// Formats an optional float; `None` becomes an empty cell.
pub fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub nonprivate: bool,
}

impl Table {
    pub fn new(header: &[&str], nonprivate: bool) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
            nonprivate,
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn to_bytes(&self) -> csv::Result<Vec<u8>> {
        let mut buf = Vec::new();
        if self.nonprivate {
            buf.extend_from_slice(DEBUG_MARKER.as_bytes());
            buf.push(b'\n');
        }
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.into_inner().map_err(|e| e.into_error().into())
    }

    /// Writes to `path`, or stdout when `None`.
    pub fn write(&self, path: Option<&Path>) -> anyhow::Result<()> {
        let bytes = self.to_bytes()?;
        match path {
            Some(p) => std::fs::write(p, bytes).map_err(|e| anyhow::anyhow!("writing {}: {e}", p.display())),
            None => {
                std::io::stdout().write_all(&bytes)?;
                Ok(())
            }
        }
    }
}
