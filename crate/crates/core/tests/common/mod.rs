#![allow(dead_code)]

pub mod bandit;
pub mod envcheck;
pub mod gradcheck;
pub mod oracles;
pub mod runs;

use std::path::PathBuf;

pub fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn preset_path() -> PathBuf {
    workspace_root().join("configs/synthetic.conf")
}
