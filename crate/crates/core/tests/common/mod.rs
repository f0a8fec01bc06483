#![allow(dead_code)]

use std::path::{Path, PathBuf};

/// Directory holding the four MNIST IDX files, if present.
pub fn mnist_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("SWAE_MNIST_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    let all = [
        "train-images-idx3-ubyte",
        "train-labels-idx1-ubyte",
        "t10k-images-idx3-ubyte",
        "t10k-labels-idx1-ubyte",
    ]
    .iter()
    .all(|f| dir.join(f).is_file());
    all.then_some(dir)
}

pub fn mnist_config(dir: &Path, extra: &str) -> String {
    format!(
        "dataset = idx\n\
         idx_train_images = {0}/train-images-idx3-ubyte\n\
         idx_train_labels = {0}/train-labels-idx1-ubyte\n\
         idx_test_images = {0}/t10k-images-idx3-ubyte\n\
         idx_test_labels = {0}/t10k-labels-idx1-ubyte\n\
         {extra}",
        dir.display()
    )
}

pub fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

/// Runs the CLI in-process and returns its exit code.
pub fn run(args: &[&str]) -> i32 {
    let mut all = vec!["swae"];
    all.extend_from_slice(args);
    swae::cli::run(all)
}

/// A small GMM config that trains in well under a second. Two epochs unless
/// `extra` sets its own.
pub fn tiny_gmm_config(out: &Path, extra: &str) -> String {
    let epochs = if extra.contains("epochs") {
        ""
    } else {
        "epochs = 2\n"
    };
    format!(
        "gmm_modes = 3\ngmm_dim = 4\ngmm_n = 60\ngmm_test_n = 20\n\
         dim_z = 2\nk_pseudo = 5\nhidden = 8\nbatch = 20\nseed = 3\n\
         output_dir = {}\n{epochs}{extra}",
        out.display()
    )
}
