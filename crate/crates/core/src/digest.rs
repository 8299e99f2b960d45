//! Content digests used for provenance and run manifests.

use sha2::{Digest, Sha256};

/// Hex-encoded SHA-256 of `bytes`.
pub fn sha256_hex(bytes: impl AsRef<[u8]>) -> String {
    hex::encode(Sha256::digest(bytes.as_ref()))
}

/// Incremental digest over several length-prefixed parts, so that
/// `["ab", "c"]` and `["a", "bc"]` hash differently.
#[derive(Default)]
pub struct PartsDigest(Sha256);

impl PartsDigest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn part(&mut self, bytes: impl AsRef<[u8]>) -> &mut Self {
        let bytes = bytes.as_ref();
        self.0.update((bytes.len() as u64).to_le_bytes());
        self.0.update(bytes);
        self
    }

    pub fn finish(self) -> String {
        hex::encode(self.0.finalize())
    }
}
