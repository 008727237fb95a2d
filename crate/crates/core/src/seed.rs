//! Labelled sub-seeds derived from one root seed.

use sha2::{Digest, Sha256};

/// First eight bytes (LE) of `sha256(root_le || label)`.
///
/// Stages draw their randomness from `sub_seed(root, "train")`,
/// `sub_seed(root, "synth")` and so on, so changing what one stage consumes
/// never shifts another stage's stream.
pub fn sub_seed(root: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 is 32 bytes"))
}
