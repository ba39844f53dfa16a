#![allow(dead_code)]

use std::path::{Path, PathBuf};

use freqrobust::dataio::{write_records, LabeledDataset, PixelEncoding};
use freqrobust::imgfreq::ImageTensor;
use freqrobust_cli::{DataConfig, ExperimentConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];

/// Noisy images whose mean colour and stripe frequency depend on the
/// label, so a small network can separate them.
pub fn synthetic_image(label: usize, rng: &mut impl Rng) -> ImageTensor {
    let period = 2 + label % 5;
    let tint = label as f64 / 10.0;
    ImageTensor::from_fn(32, 32, 3, |c, y, x| {
        let stripe = if ((x + y * (label / 5)) / period).is_multiple_of(2) {
            0.2
        } else {
            -0.2
        };
        let base = if c == label % 3 {
            tint
        } else {
            0.5 - tint / 2.0
        };
        (base + stripe + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0)
    })
}

pub fn synthetic_dataset(n: usize, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items = (0..n)
        .map(|i| (synthetic_image(i % 10, &mut rng), i % 10))
        .collect();
    LabeledDataset::new("synthetic", 10, items).unwrap()
}

/// Writes a directory in the CIFAR-10 binary layout with `per_file`
/// records in each training batch and `test` records in the test batch.
pub fn fake_cifar(dir: &Path, per_file: usize, test: usize) -> PathBuf {
    std::fs::create_dir_all(dir).unwrap();
    for (i, f) in TRAIN_FILES.iter().enumerate() {
        let ds = synthetic_dataset(per_file, i as u64 + 1);
        write_records(&dir.join(f), &ds, PixelEncoding::Unsigned).unwrap();
    }
    write_records(
        &dir.join("test_batch.bin"),
        &synthetic_dataset(test, 99),
        PixelEncoding::Unsigned,
    )
    .unwrap();
    dir.to_path_buf()
}

pub fn small_config(cifar_dir: &Path, out_dir: &Path) -> ExperimentConfig {
    let text = r#"
out_dir = "out"
[data]
cifar_dir = "data"
train_limit = 24
test_limit = 10
[train]
epochs = 2
batch_size = 8
lr_milestones = [1]
initial_lr = 0.01
"#;
    let mut cfg = ExperimentConfig::parse(text, Path::new("/")).unwrap();
    cfg.out_dir = out_dir.to_path_buf();
    cfg.data = DataConfig {
        cifar_dir: cifar_dir.to_path_buf(),
        ..cfg.data
    };
    cfg
}
