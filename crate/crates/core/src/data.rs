// SPDX-License-Identifier: Apache-2.0

//! Datasets with a public/private split.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// One example: an opaque public payload plus a private value in `[0, k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    #[serde(rename = "pub")]
    public: Vec<f64>,
    #[serde(rename = "priv")]
    private: usize,
}

impl Example {
    pub fn new(public: Vec<f64>, private: usize) -> Self {
        Self { public, private }
    }

    pub fn public(&self) -> &[f64] {
        &self.public
    }

    pub fn private(&self) -> usize {
        self.private
    }
}

/// An immutable list of examples over a private domain of size `k`.
///
/// Neighbouring datasets differ in the private value of exactly one example;
/// public payloads never change.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
    k: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    n: usize,
    k: usize,
}

impl Dataset {
    pub fn new(examples: Vec<Example>, k: usize) -> Result<Self> {
        if examples.is_empty() {
            return Err(invalid("examples", "a dataset needs at least one example"));
        }
        if k < 2 {
            return Err(invalid("k", format!("private domain size must be >= 2, got {k}")));
        }
        for (index, ex) in examples.iter().enumerate() {
            if ex.private >= k {
                return Err(Error::PrivateValueOutOfRange {
                    index,
                    value: ex.private,
                    k,
                });
            }
        }
        Ok(Self { examples, k })
    }

    /// Dataset whose public payload is just the example index.
    pub fn indexed(private_values: &[usize], k: usize) -> Result<Self> {
        let examples = private_values
            .iter()
            .enumerate()
            .map(|(i, &y)| Example::new(vec![i as f64], y))
            .collect();
        Self::new(examples, k)
    }

    pub fn n(&self) -> usize {
        self.examples.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn example(&self, i: usize) -> &Example {
        &self.examples[i]
    }

    /// A neighbouring dataset: example `index` gets private value `value`.
    pub fn with_private_value(&self, index: usize, value: usize) -> Result<Self> {
        if index >= self.n() {
            return Err(invalid("index", format!("{index} >= n = {}", self.n())));
        }
        if value >= self.k {
            return Err(Error::PrivateValueOutOfRange {
                index,
                value,
                k: self.k,
            });
        }
        let mut examples = self.examples.clone();
        examples[index].private = value;
        Ok(Self {
            examples,
            k: self.k,
        })
    }

    /// Each example repeated `r` times in place: `AB` becomes `AAABBB` for r = 3.
    pub fn replicate(&self, r: usize) -> Result<Self> {
        if r == 0 {
            return Err(invalid("r", "replication factor must be >= 1"));
        }
        let examples = self
            .examples
            .iter()
            .flat_map(|ex| std::iter::repeat(ex.clone()).take(r))
            .collect();
        Ok(Self {
            examples,
            k: self.k,
        })
    }

    /// Reads the JSON-lines format: an optional `{"n": .., "k": ..}` header
    /// followed by one `{"pub": [..], "priv": ..}` object per line.
    ///
    /// Without a header line, `k` must come from `k_override` (a sidecar
    /// config). When both are present the override wins.
    pub fn read_jsonl<R: BufRead>(reader: R, k_override: Option<usize>) -> Result<Self> {
        let mut header: Option<Header> = None;
        let mut examples = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let value: serde_json::Value =
                serde_json::from_str(trimmed).map_err(|e| Error::Parse {
                    line: lineno,
                    reason: e.to_string(),
                })?;
            if value.get("pub").is_none() && value.get("k").is_some() {
                if header.is_some() || !examples.is_empty() {
                    return Err(Error::Parse {
                        line: lineno,
                        reason: "header must be the first line".into(),
                    });
                }
                header = Some(serde_json::from_value(value).map_err(|e| Error::Parse {
                    line: lineno,
                    reason: e.to_string(),
                })?);
                continue;
            }
            let ex: Example = serde_json::from_value(value).map_err(|e| Error::Parse {
                line: lineno,
                reason: e.to_string(),
            })?;
            examples.push(ex);
        }
        let k = match (k_override, &header) {
            (Some(k), _) => k,
            (None, Some(h)) => h.k,
            (None, None) => {
                return Err(invalid(
                    "k",
                    "no header line and no k given by the caller",
                ))
            }
        };
        if let Some(h) = &header {
            if h.n != examples.len() {
                return Err(Error::Parse {
                    line: 1,
                    reason: format!("header declares n = {} but {} examples follow", h.n, examples.len()),
                });
            }
        }
        Self::new(examples, k)
    }

    /// Writes the JSON-lines format with a header line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        let header = Header {
            n: self.n(),
            k: self.k,
        };
        writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes"))?;
        for ex in &self.examples {
            writeln!(out, "{}", serde_json::to_string(ex).expect("example serializes"))?;
        }
        Ok(())
    }
}
