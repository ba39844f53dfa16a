//! The CIFAR-10 binary record layout: one label byte followed by three
//! 32x32 channel planes (red, green, blue), each row-major.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgfreq::ImageTensor;

use super::dataset::LabeledDataset;

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_CLASSES: usize = 10;
const PIXELS: usize = CIFAR_SIDE * CIFAR_SIDE * 3;
pub const RECORD_LEN: usize = PIXELS + 1;

const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
const TEST_FILE: &str = "test_batch.bin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// How floating-point pixels map to stored bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PixelEncoding {
    /// `[0, 1] -> [0, 255]`
    Unsigned,
    /// `[-1, 1] -> [0, 255]`, zero at 128
    Signed,
}

impl PixelEncoding {
    pub fn as_str(self) -> &'static str {
        match self {
            PixelEncoding::Unsigned => "unsigned",
            PixelEncoding::Signed => "signed",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "unsigned" => Ok(PixelEncoding::Unsigned),
            "signed" => Ok(PixelEncoding::Signed),
            other => Err(Error::invalid(format!("unknown pixel encoding `{other}`"))),
        }
    }
}

#[inline]
pub fn encode_pixel(v: f64, encoding: PixelEncoding) -> u8 {
    crate::imgfreq::export::quantize(v, encoding == PixelEncoding::Signed)
}

#[inline]
pub fn decode_pixel(b: u8, encoding: PixelEncoding) -> f64 {
    let unit = f64::from(b) / 255.0;
    match encoding {
        PixelEncoding::Unsigned => unit,
        PixelEncoding::Signed => unit * 2.0 - 1.0,
    }
}

/// Loads a CIFAR-10 split from the directory holding the binary batches.
/// The train split concatenates `data_batch_1..5.bin` in order.
pub fn load_cifar10(dir: &Path, split: Split) -> Result<LabeledDataset> {
    load_cifar10_prefix(dir, split, None)
}

/// Like [`load_cifar10`] but keeps only the first `limit` records, reading
/// no more batch files than needed.
pub fn load_cifar10_prefix(
    dir: &Path,
    split: Split,
    limit: Option<usize>,
) -> Result<LabeledDataset> {
    let files: Vec<&str> = match split {
        Split::Train => TRAIN_FILES.to_vec(),
        Split::Test => vec![TEST_FILE],
    };
    let limit = limit.unwrap_or(usize::MAX);
    let mut items = Vec::new();
    for f in files {
        if items.len() >= limit {
            break;
        }
        let ds = read_records(&dir.join(f), CIFAR_CLASSES, PixelEncoding::Unsigned)?;
        items.extend(ds.into_items());
    }
    items.truncate(limit);
    let name = match split {
        Split::Train => "cifar10-train",
        Split::Test => "cifar10-test",
    };
    LabeledDataset::new(name, CIFAR_CLASSES, items)
}

/// Reads a file of 3073-byte records.
pub fn read_records(
    path: &Path,
    num_classes: usize,
    encoding: PixelEncoding,
) -> Result<LabeledDataset> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::NotFound(path.to_path_buf()))
        }
        Err(e) => return Err(e.into()),
    };
    if bytes.is_empty() {
        return Err(Error::format(path, "file holds no records"));
    }
    if bytes.len() % RECORD_LEN != 0 {
        return Err(Error::format(
            path,
            format!("length {} is not a multiple of {RECORD_LEN}", bytes.len()),
        ));
    }
    let mut items = Vec::with_capacity(bytes.len() / RECORD_LEN);
    for (i, rec) in bytes.chunks_exact(RECORD_LEN).enumerate() {
        let label = rec[0] as usize;
        if label >= num_classes {
            return Err(Error::format(
                path,
                format!("record {i}: label byte {label} >= {num_classes}"),
            ));
        }
        let data = rec[1..]
            .iter()
            .map(|&b| decode_pixel(b, encoding))
            .collect();
        let img = ImageTensor::new(CIFAR_SIDE, CIFAR_SIDE, 3, data)?;
        items.push((img, label));
    }
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("records")
        .to_string();
    LabeledDataset::new(name, num_classes, items)
}

/// Writes `dataset` as 3073-byte records, quantizing each pixel to 8 bits.
pub fn write_records(path: &Path, dataset: &LabeledDataset, encoding: PixelEncoding) -> Result<()> {
    if let Some(dims) = dataset.image_dims() {
        if dims != (CIFAR_SIDE, CIFAR_SIDE, 3) {
            return Err(Error::shape(format!(
                "record format needs 32x32x3 images, got {dims:?}"
            )));
        }
    }
    if dataset.num_classes() > 256 {
        return Err(Error::invalid("labels must fit in one byte"));
    }
    let mut out = BufWriter::new(fs::File::create(path)?);
    let mut rec = [0u8; RECORD_LEN];
    for (img, label) in dataset.items() {
        rec[0] = *label as u8;
        for (dst, &v) in rec[1..].iter_mut().zip(img.data()) {
            *dst = encode_pixel(v, encoding);
        }
        out.write_all(&rec)?;
    }
    out.flush()?;
    Ok(())
}
