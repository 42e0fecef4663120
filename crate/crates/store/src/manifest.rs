//! The version manifest: one newline-terminated text record per version.
//!
//! ```text
//! <version> <root digest hex> <leaf_count> <parent version | -> <file length>
//! ```
//!
//! A trailing fragment without a newline is a torn write.

use std::fmt;

use emf_core::{Digest, NodeId, VersionRoot};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ManifestRecord {
    pub version: usize,
    pub root: Digest,
    pub leaf_count: usize,
    pub parent_version: Option<usize>,
    /// Plaintext length of the file in this version.
    pub file_length: u64,
}

impl ManifestRecord {
    pub fn from_root(root: &VersionRoot, file_length: u64) -> Self {
        ManifestRecord {
            version: root.version,
            root: root.root.0,
            leaf_count: root.leaf_count,
            parent_version: root.parent_version,
            file_length,
        }
    }

    pub fn version_root(&self) -> VersionRoot {
        VersionRoot {
            version: self.version,
            root: NodeId(self.root),
            leaf_count: self.leaf_count,
            parent_version: self.parent_version,
        }
    }

    pub fn to_line(&self) -> String {
        format!("{self}\n")
    }

    pub fn parse(line: &str) -> Option<Self> {
        let mut fields = line.split(' ');
        let version = fields.next()?.parse().ok()?;
        let root = Digest::from_hex(fields.next()?).ok()?;
        let leaf_count = fields.next()?.parse().ok()?;
        let parent_version = match fields.next()? {
            "-" => None,
            p => Some(p.parse().ok()?),
        };
        let file_length = fields.next()?.parse().ok()?;
        if fields.next().is_some() {
            return None;
        }
        Some(ManifestRecord {
            version,
            root,
            leaf_count,
            parent_version,
            file_length,
        })
    }
}

impl fmt::Display for ManifestRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} ", self.version, self.root, self.leaf_count)?;
        match self.parent_version {
            Some(p) => write!(f, "{p}")?,
            None => f.write_str("-")?,
        }
        write!(f, " {}", self.file_length)
    }
}

/// An incomplete final record left by an interrupted append.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TornTail {
    /// Byte offset where the torn record starts.
    pub offset: u64,
    pub bytes: Vec<u8>,
}

#[derive(Debug, PartialEq, Eq)]
pub(crate) struct ParsedManifest {
    pub records: Vec<ManifestRecord>,
    pub torn_tail: Option<TornTail>,
}

#[derive(Debug, PartialEq, Eq)]
pub(crate) enum ManifestError {
    Malformed { line: usize },
    OutOfOrder { line: usize, version: usize },
}

impl fmt::Display for ManifestError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ManifestError::Malformed { line } => write!(f, "manifest line {line} is malformed"),
            ManifestError::OutOfOrder { line, version } => {
                write!(f, "manifest line {line} holds version {version}")
            }
        }
    }
}

pub(crate) fn parse(bytes: &[u8]) -> Result<ParsedManifest, ManifestError> {
    let complete_len = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let (complete, tail) = bytes.split_at(complete_len);
    let mut records = Vec::new();
    let lines = complete.strip_suffix(b"\n").map(|body| body.split(|&b| b == b'\n'));
    for (i, line) in lines.into_iter().flatten().enumerate() {
        let record = std::str::from_utf8(line)
            .ok()
            .and_then(ManifestRecord::parse)
            .ok_or(ManifestError::Malformed { line: i + 1 })?;
        if record.version != i {
            return Err(ManifestError::OutOfOrder {
                line: i + 1,
                version: record.version,
            });
        }
        records.push(record);
    }
    Ok(ParsedManifest {
        records,
        torn_tail: (!tail.is_empty()).then(|| TornTail {
            offset: complete_len as u64,
            bytes: tail.to_vec(),
        }),
    })
}
