//! Provenance stamped into every produced artifact.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub config_hash: String,
    pub git_describe: String,
}

impl ArtifactMeta {
    pub fn new(config_hash: impl Into<String>, git_describe: impl Into<String>) -> Self {
        Self { config_hash: config_hash.into(), git_describe: git_describe.into() }
    }
}

/// Hex SHA-256 of a canonical byte string (first 16 hex digits).
pub fn short_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}
