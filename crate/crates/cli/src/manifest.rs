//! Run manifest: every artifact with its sha256. The creation time sits in
//! the header and nowhere else, so artifacts from two runs of the same config
//! and seed compare byte for byte.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FORMAT: &str = "pcap.manifest";

/// `manifest_<command>.json`, so runs of different commands can share an
/// output directory.
pub fn manifest_file(command: &str) -> String {
    format!("manifest_{}.json", command.replace(' ', "_"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub header: Header,
    pub artifacts: Vec<ArtifactEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    /// Seconds since the Unix epoch.
    pub created_unix: u64,
    pub tool_version: String,
    pub command: String,
    pub seed: u64,
    pub config_sha256: String,
    pub exit_code: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtifactEntry {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
    pub description: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl ArtifactEntry {
    pub fn new(path: &str, contents: &[u8], description: &str) -> Self {
        ArtifactEntry {
            path: path.to_string(),
            sha256: sha256_hex(contents),
            bytes: contents.len(),
            description: description.to_string(),
        }
    }
}
