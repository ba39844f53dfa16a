use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;

use crate::dataio::{GridSpec, Manifest};
use crate::error::{Error, Result};
use crate::imgfreq::{FilterKind, FilterSpec};
use crate::nnet::{evaluate_checkpoint, Checkpoint};

/// Grid coordinate; sigma is kept in thousandths so keys order and
/// compare exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub kind: FilterKind,
    sigma_milli: u32,
    pub width: usize,
}

impl CellKey {
    pub fn new(kind: FilterKind, sigma: f64, width: usize) -> Self {
        Self {
            kind,
            sigma_milli: (sigma * 1000.0).round() as u32,
            width,
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma_milli as f64 / 1000.0
    }
}

impl From<&FilterSpec> for CellKey {
    fn from(s: &FilterSpec) -> Self {
        Self::new(s.kind, s.sigma, s.width)
    }
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} sigma={} width={}",
            self.kind,
            self.sigma(),
            self.width
        )
    }
}

/// Clean accuracy plus one accuracy per filtered test set, all in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyGrid {
    pub model_id: String,
    pub dataset_id: String,
    clean: f64,
    cells: BTreeMap<CellKey, f64>,
}

fn check_accuracy(v: f64, what: &dyn fmt::Display) -> Result<f64> {
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(Error::invalid(format!(
            "accuracy {v} for {what} is outside [0, 1]"
        )))
    }
}

impl AccuracyGrid {
    pub fn new(
        model_id: impl Into<String>,
        dataset_id: impl Into<String>,
        clean: f64,
    ) -> Result<Self> {
        check_accuracy(clean, &"clean set")?;
        Ok(Self {
            model_id: model_id.into(),
            dataset_id: dataset_id.into(),
            clean,
            cells: BTreeMap::new(),
        })
    }

    pub fn insert(&mut self, key: CellKey, accuracy: f64) -> Result<()> {
        self.cells.insert(key, check_accuracy(accuracy, &key)?);
        Ok(())
    }

    pub fn clean(&self) -> f64 {
        self.clean
    }

    pub fn get(&self, kind: FilterKind, sigma: f64, width: usize) -> Option<f64> {
        self.cells.get(&CellKey::new(kind, sigma, width)).copied()
    }

    pub fn cells(&self) -> impl Iterator<Item = (&CellKey, f64)> {
        self.cells.iter().map(|(k, &v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn kinds(&self) -> Vec<FilterKind> {
        let mut k: Vec<_> = self.cells.keys().map(|c| c.kind).collect();
        k.dedup();
        k
    }

    pub fn sigmas(&self, kind: FilterKind) -> Vec<f64> {
        let mut s: Vec<u32> = self
            .cells
            .keys()
            .filter(|c| c.kind == kind)
            .map(|c| c.sigma_milli)
            .collect();
        s.dedup();
        s.into_iter().map(|m| m as f64 / 1000.0).collect()
    }

    pub fn widths(&self, kind: FilterKind) -> Vec<usize> {
        let mut w: Vec<usize> = self
            .cells
            .keys()
            .filter(|c| c.kind == kind)
            .map(|c| c.width)
            .collect();
        w.sort_unstable();
        w.dedup();
        w
    }

    /// Fails unless every kind present has the full sigma x width product.
    pub fn check_rectangular(&self) -> Result<()> {
        if self.cells.is_empty() {
            return Err(Error::invalid("accuracy grid has no cells"));
        }
        for kind in self.kinds() {
            for sigma in self.sigmas(kind) {
                for width in self.widths(kind) {
                    if self.get(kind, sigma, width).is_none() {
                        return Err(Error::invalid(format!(
                            "accuracy grid lacks {}",
                            CellKey::new(kind, sigma, width)
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Fails unless every cell of `spec` is present.
    pub fn check_covers(&self, spec: &GridSpec) -> Result<()> {
        match spec
            .cells()
            .iter()
            .map(CellKey::from)
            .find(|k| !self.cells.contains_key(k))
        {
            Some(k) => Err(Error::invalid(format!("accuracy grid lacks {k}"))),
            None => Ok(()),
        }
    }

    /// Mean accuracy over the cells of `kind`, or over all cells.
    pub fn mean(&self, kind: Option<FilterKind>) -> Option<f64> {
        let vals: Vec<f64> = self
            .cells
            .iter()
            .filter(|(k, _)| kind.is_none_or(|kind| k.kind == kind))
            .map(|(_, &v)| v)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Evaluates `checkpoint` on the clean set and every cell of `spec` listed
/// in `manifest`. Cells are evaluated in parallel; each loads its own data.
pub fn run_grid(
    checkpoint: &Checkpoint,
    manifest: &Manifest,
    spec: &GridSpec,
) -> Result<AccuracyGrid> {
    spec.validate()?;
    let clean_entry = manifest
        .clean()
        .ok_or_else(|| Error::invalid("manifest has no clean test set"))?;
    let cells = spec.cells();
    let entries = cells
        .iter()
        .map(|cell| {
            manifest.find(cell).ok_or_else(|| Error::MissingCell {
                kind: cell.kind.to_string(),
                sigma: cell.sigma,
                width: cell.width,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let num_classes = checkpoint.num_classes;
    let clean = evaluate_checkpoint(checkpoint, &manifest.load_entry(clean_entry, num_classes)?)?;
    let accuracies = entries
        .par_iter()
        .map(|e| evaluate_checkpoint(checkpoint, &manifest.load_entry(e, num_classes)?))
        .collect::<Result<Vec<_>>>()?;
    let dataset_id = manifest
        .root
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "test".into());
    let model_id = format!(
        "{}-seed{}-epoch{}",
        checkpoint.descriptor, checkpoint.seed, checkpoint.epoch
    );
    let mut grid = AccuracyGrid::new(model_id, dataset_id, clean)?;
    for (cell, acc) in cells.iter().zip(accuracies) {
        grid.insert(CellKey::from(cell), acc)?;
    }
    Ok(grid)
}
