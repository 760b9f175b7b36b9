//! Read MNIST from IDX files, or round-trip a small synthetic set through the
//! IDX encoder when no directory is given.
//!
//! `cargo run --release --example idx_round_trip -- [mnist_dir]`

use std::path::PathBuf;

use fedms::data::{encode_idx, load_idx, synth_blobs};

fn main() -> fedms::Result<()> {
    let data = match std::env::args().nth(1).map(PathBuf::from) {
        Some(dir) => load_idx(dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte"))?,
        None => {
            let blobs = synth_blobs(10, 3, 16, 0.1, 0)?;
            // pixels are bytes, so squash features into [0, 1] first
            let squashed: Vec<f64> = blobs.features().iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect();
            let blobs = fedms::data::LabeledDataset::new(squashed, blobs.labels().to_vec(), 16, 10)?;
            let (images, labels) = encode_idx(&blobs, 4, 4)?;
            let dir = std::env::temp_dir().join("fedms-idx-demo");
            std::fs::create_dir_all(&dir).expect("temp dir");
            std::fs::write(dir.join("images"), &images).expect("write images");
            std::fs::write(dir.join("labels"), &labels).expect("write labels");
            println!("wrote {} + {} bytes to {}", images.len(), labels.len(), dir.display());
            load_idx(dir.join("images"), dir.join("labels"))?
        }
    };
    println!("{} samples, {} features, class counts {:?}", data.len(), data.dim(), data.class_counts());
    Ok(())
}
