#![allow(dead_code)]

use std::path::{Path, PathBuf};

use turnpoint::config::{Loaded, RunConfig};

pub fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

pub fn example(n: u32) -> Loaded {
    RunConfig::load(data(&format!("example{n}.config.json"))).expect("example configuration loads")
}
