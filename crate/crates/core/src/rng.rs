//! Named random substreams derived from a single root seed.
//!
//! Every random decision in a run (split assignment, fault choice, parent
//! sampling, nucleus seeds) draws from its own stream keyed by a name and a
//! list of scope labels, so work items can be processed in any order or
//! resumed without shifting anyone else's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub const SPLIT: &str = "split";
pub const FAULT_CHOICE: &str = "fault-choice";
pub const PARENT_SAMPLING: &str = "parent-sampling";
pub const NUCLEUS: &str = "nucleus";
pub const ANNOTATION_SAMPLE: &str = "annotation-sample";

fn digest(root: u64, stream: &str, scope: &[&str]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(stream.as_bytes());
    for part in scope {
        h.update([0x1f]);
        h.update(part.as_bytes());
    }
    h.finalize().into()
}

/// RNG for the named stream at the given scope.
pub fn substream(root: u64, stream: &str, scope: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(digest(root, stream, scope))
}

/// A 64-bit seed for the named stream, for APIs that take a plain seed.
pub fn subseed(root: u64, stream: &str, scope: &[&str]) -> u64 {
    let d = digest(root, stream, scope);
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}
