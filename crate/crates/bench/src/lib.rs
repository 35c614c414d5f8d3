//! Helpers for the criterion benchmarks in `benches/`.

use std::path::{Path, PathBuf};

/// Path of a file under the workspace `fixtures/` directory.
pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(rel)
}
