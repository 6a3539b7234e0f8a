//! Short stable content hashes used to tag output files.

use sha2::{Digest, Sha256};

/// Hex-encoded SHA-256, truncated to 16 characters for readability.
pub fn short_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(16);
    for b in &digest[..8] {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Hash of a file's contents.
pub fn file_hash(path: &std::path::Path) -> std::io::Result<String> {
    Ok(short_hash(&std::fs::read(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_and_content_sensitive() {
        assert_eq!(short_hash(b"abc"), short_hash(b"abc"));
        assert_ne!(short_hash(b"abc"), short_hash(b"abd"));
        assert_eq!(short_hash(b"x").len(), 16);
    }
}
