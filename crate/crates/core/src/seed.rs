//! Stable seed derivation shared by the distributed engine and the oracle.

use sha2::{Digest, Sha256};

/// Derives a 64-bit seed from a global seed and a list of labels.
///
/// The result depends only on its inputs, never on where in the hierarchy
/// the caller sits, so independent executions can replay the same draws.
pub fn derive_seed(global: u64, parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(global.to_le_bytes());
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}
