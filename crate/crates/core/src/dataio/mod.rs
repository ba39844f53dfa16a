//! Dataset ingestion, filtered test-grid generation and augmentation.
//!
//! Images are held as `[0, 1]` pixels; filtering happens on raw pixels and
//! normalization is the last step before the network.

mod augment;
mod cifar;
mod dataset;
mod grid;

pub use self::augment::{
    denormalize, draw_crop, draw_filter, normalize, standard_augment, standard_augment_with,
    stochastic_augment, write_provenance, AugmentPolicy, NormStats, Provenance, CROP_PAD,
};
pub use self::cifar::{
    decode_pixel, encode_pixel, load_cifar10, load_cifar10_prefix, read_records, write_records,
    PixelEncoding, Split, CIFAR_CLASSES, CIFAR_SIDE, RECORD_LEN,
};
pub use self::dataset::LabeledDataset;
pub use self::grid::{
    encoding_for, filter_dataset, generate_test_grid, CellKind, GridSpec, Manifest, ManifestEntry,
    MANIFEST_FILE,
};
