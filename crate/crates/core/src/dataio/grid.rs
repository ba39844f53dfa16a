use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgfreq::{apply_filter, FilterKind, FilterSpec};

use super::cifar::{read_records, write_records, PixelEncoding};
use super::dataset::LabeledDataset;

pub const MANIFEST_FILE: &str = "manifest.txt";

/// The cross product of filter kinds, sigmas and widths to evaluate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub kinds: Vec<FilterKind>,
    pub sigmas: Vec<f64>,
    pub widths: Vec<usize>,
}

impl Default for GridSpec {
    /// 2 kinds x 3 sigmas x 6 widths = 36 cells.
    fn default() -> Self {
        Self {
            kinds: vec![FilterKind::HighPass, FilterKind::LowPass],
            sigmas: vec![0.5, 1.0, 1.5],
            widths: vec![2, 3, 4, 5, 6, 7],
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.kinds.is_empty() || self.sigmas.is_empty() || self.widths.is_empty() {
            return Err(Error::invalid(
                "grid needs at least one kind, sigma and width",
            ));
        }
        for cell in self.cells() {
            cell.validate()?;
        }
        Ok(())
    }

    /// Cells in kind-major, then sigma, then width order.
    pub fn cells(&self) -> Vec<FilterSpec> {
        let mut out = Vec::with_capacity(self.len());
        for &kind in &self.kinds {
            for &sigma in &self.sigmas {
                for &width in &self.widths {
                    out.push(FilterSpec { kind, sigma, width });
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.kinds.len() * self.sigmas.len() * self.widths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Filters every image of `ds` with `spec`. Deterministic and independent
/// of the rayon worker count.
pub fn filter_dataset(ds: &LabeledDataset, spec: &FilterSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    ds.map_images(cell_name(spec), |img| apply_filter(img, spec))
}

fn cell_name(spec: &FilterSpec) -> String {
    format!(
        "{}_s{}_w{}",
        spec.kind.as_str().to_ascii_lowercase(),
        spec.sigma,
        spec.width
    )
}

pub fn encoding_for(kind: FilterKind) -> PixelEncoding {
    match kind {
        FilterKind::HighPass => PixelEncoding::Signed,
        FilterKind::LowPass => PixelEncoding::Unsigned,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Clean,
    Filtered(FilterKind),
}

impl CellKind {
    fn as_str(self) -> &'static str {
        match self {
            CellKind::Clean => "Clean",
            CellKind::Filtered(k) => k.as_str(),
        }
    }
}

/// One dataset listed in a manifest. The clean entry uses `sigma=0`,
/// `width=0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub kind: CellKind,
    pub sigma: f64,
    pub width: usize,
    pub count: usize,
    pub path: PathBuf,
    pub encoding: PixelEncoding,
}

impl ManifestEntry {
    pub fn filter_spec(&self) -> Option<FilterSpec> {
        match self.kind {
            CellKind::Clean => None,
            CellKind::Filtered(kind) => Some(FilterSpec {
                kind,
                sigma: self.sigma,
                width: self.width,
            }),
        }
    }
}

/// Index of the generated test sets. Paths are relative to `root`.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn clean(&self) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.kind == CellKind::Clean)
    }

    pub fn cells(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| e.kind != CellKind::Clean)
    }

    pub fn find(&self, spec: &FilterSpec) -> Option<&ManifestEntry> {
        self.cells().find(|e| {
            e.kind == CellKind::Filtered(spec.kind)
                && e.sigma == spec.sigma
                && e.width == spec.width
        })
    }

    pub fn load_entry(&self, entry: &ManifestEntry, num_classes: usize) -> Result<LabeledDataset> {
        let ds = read_records(&self.root.join(&entry.path), num_classes, entry.encoding)?;
        if ds.len() != entry.count {
            return Err(Error::format(
                &entry.path,
                format!(
                    "manifest lists {} records, file has {}",
                    entry.count,
                    ds.len()
                ),
            ));
        }
        Ok(ds)
    }

    /// Text form: blank-line separated groups of `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# test-grid manifest\n");
        for e in &self.entries {
            let _ = write!(
                s,
                "\nkind={}\nsigma={}\nwidth={}\ncount={}\npath={}\nencoding={}\n",
                e.kind.as_str(),
                e.sigma,
                e.width,
                e.count,
                e.path.display(),
                e.encoding.as_str()
            );
        }
        s
    }

    pub fn parse(text: &str, root: &Path) -> Result<Self> {
        let src = root.join(MANIFEST_FILE);
        let bad = |reason: String| Error::format(&src, reason);
        let mut entries = Vec::new();
        let mut group: Vec<(String, String)> = Vec::new();
        let flush = |group: &mut Vec<(String, String)>,
                     entries: &mut Vec<ManifestEntry>|
         -> Result<()> {
            if group.is_empty() {
                return Ok(());
            }
            let get = |key: &str| -> Result<&str> {
                group
                    .iter()
                    .find(|(k, _)| k == key)
                    .map(|(_, v)| v.as_str())
                    .ok_or_else(|| bad(format!("group missing `{key}`")))
            };
            for (k, _) in group.iter() {
                if !["kind", "sigma", "width", "count", "path", "encoding"].contains(&k.as_str()) {
                    return Err(bad(format!("unknown field `{k}`")));
                }
            }
            let kind = match get("kind")? {
                "Clean" => CellKind::Clean,
                k => CellKind::Filtered(k.parse()?),
            };
            let num = |key: &str| -> Result<f64> {
                get(key)?
                    .parse::<f64>()
                    .map_err(|e| bad(format!("field `{key}`: {e}")))
            };
            let int = |key: &str| -> Result<usize> {
                get(key)?
                    .parse::<usize>()
                    .map_err(|e| bad(format!("field `{key}`: {e}")))
            };
            entries.push(ManifestEntry {
                kind,
                sigma: num("sigma")?,
                width: int("width")?,
                count: int("count")?,
                path: PathBuf::from(get("path")?),
                encoding: PixelEncoding::parse(get("encoding")?)?,
            });
            group.clear();
            Ok(())
        };
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.starts_with('#') {
                continue;
            }
            if line.is_empty() {
                flush(&mut group, &mut entries)?;
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("line {}: expected key=value", lineno + 1)))?;
            group.push((k.trim().to_string(), v.trim().to_string()));
        }
        flush(&mut group, &mut entries)?;
        Ok(Self {
            root: root.to_path_buf(),
            entries,
        })
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Err(Error::NotFound(path));
        }
        Self::parse(&fs::read_to_string(&path)?, dir)
    }

    pub fn write(&self) -> Result<()> {
        fs::write(self.root.join(MANIFEST_FILE), self.to_text())?;
        Ok(())
    }
}

/// Writes the clean test set and one filtered copy per grid cell into
/// `out`, plus the manifest. High-pass cells are stored with the signed
/// pixel encoding.
pub fn generate_test_grid(test: &LabeledDataset, grid: &GridSpec, out: &Path) -> Result<Manifest> {
    grid.validate()?;
    fs::create_dir_all(out)?;
    let mut entries = Vec::with_capacity(grid.len() + 1);

    let clean_path = PathBuf::from("clean.bin");
    write_records(&out.join(&clean_path), test, PixelEncoding::Unsigned)?;
    entries.push(ManifestEntry {
        kind: CellKind::Clean,
        sigma: 0.0,
        width: 0,
        count: test.len(),
        path: clean_path,
        encoding: PixelEncoding::Unsigned,
    });

    for spec in grid.cells() {
        let filtered = filter_dataset(test, &spec)?;
        let encoding = encoding_for(spec.kind);
        let path = PathBuf::from(format!("{}.bin", cell_name(&spec)));
        write_records(&out.join(&path), &filtered, encoding)?;
        entries.push(ManifestEntry {
            kind: CellKind::Filtered(spec.kind),
            sigma: spec.sigma,
            width: spec.width,
            count: filtered.len(),
            path,
            encoding,
        });
    }
    let manifest = Manifest {
        root: out.to_path_buf(),
        entries,
    };
    manifest.write()?;
    Ok(manifest)
}
