#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use milc::data::{write_idx_images, write_idx_labels, RawImages};

pub fn milc() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_milc"));
    cmd.env_remove("MILC_SEED")
        .env_remove("MILC_MNIST_DIR")
        .env("RUST_LOG", "warn");
    cmd
}

pub fn run(args: &[&str]) -> Output {
    milc().args(args).output().expect("failed to launch milc")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("terminated by signal")
}

/// Write a tiny MNIST-shaped directory (4x4 images, 10 classes) whose class
/// is encoded by which pixel is bright.
pub fn synthetic_mnist(dir: &Path, train: usize, test: usize) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    for (prefix, count, salt) in [("train", train, 0usize), ("t10k", test, 7)] {
        let mut pixels = Vec::with_capacity(count * 16);
        let mut labels = Vec::with_capacity(count);
        for i in 0..count {
            let y = (i * 3 + salt) % 10;
            for p in 0..16 {
                let noise = ((i * 31 + p * 17 + salt) % 23) as u8;
                pixels.push(if p == y { 230 - noise } else { noise });
            }
            labels.push(y as u8);
        }
        let images = RawImages {
            count,
            rows: 4,
            cols: 4,
            pixels,
        };
        write_idx_images(&dir.join(format!("{prefix}-images-idx3-ubyte")), &images).unwrap();
        write_idx_labels(&dir.join(format!("{prefix}-labels-idx1-ubyte")), &labels).unwrap();
    }
    dir.to_path_buf()
}
