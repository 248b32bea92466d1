//! Train the 784-64-64-10 MLP on MNIST with one objective and print the
//! per-epoch test accuracy.
//!
//! ```text
//! cargo run --release -p milc --example mnist -- data/mnist mil 7
//! ```

use std::path::Path;

use milc::data::Dataset;
use milc::train::{self, Split, TrainConfig};

fn main() -> milc::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let dir = Path::new(args.get(1).map(String::as_str).unwrap_or("data/mnist"));
    let mut config = TrainConfig::default();
    if let Some(kind) = args.get(2) {
        config.loss_kind = kind.parse()?;
    }
    if let Some(seed) = args.get(3) {
        config.seed = seed.parse().expect("seed must be an integer");
    }
    let train_set = Dataset::from_idx(
        &dir.join("train-images-idx3-ubyte"),
        &dir.join("train-labels-idx1-ubyte"),
        10,
    )?;
    let test_set = Dataset::from_idx(
        &dir.join("t10k-images-idx3-ubyte"),
        &dir.join("t10k-labels-idx1-ubyte"),
        10,
    )?;
    let report = train::train(&config, &train_set, &test_set, |log| {
        let m = log.iter().rev().find(|m| m.split == Split::Test).unwrap();
        println!(
            "epoch {:3}  test acc {:.4}  mi {:.4} bits  h_y|x {:.4} bits",
            m.epoch,
            1.0 - m.error_rate,
            m.mi_bits,
            m.h_y_given_x_bits
        );
    })?;
    if let Some((acc, epoch)) = report.best_test_accuracy() {
        println!("best test accuracy {acc:.4} at epoch {epoch}");
    }
    Ok(())
}
