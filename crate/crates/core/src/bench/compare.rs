use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::imgfreq::FilterKind;

use super::grid::{AccuracyGrid, CellKey};

/// Per-cell `treated - baseline` accuracy deltas.
#[derive(Debug, Clone, PartialEq)]
pub struct GridComparison {
    pub baseline: AccuracyGrid,
    pub treated: AccuracyGrid,
    deltas: BTreeMap<CellKey, f64>,
}

pub fn compare(baseline: &AccuracyGrid, treated: &AccuracyGrid) -> Result<GridComparison> {
    let keys = |g: &AccuracyGrid| g.cells().map(|(k, _)| *k).collect::<Vec<_>>();
    if keys(baseline) != keys(treated) {
        return Err(Error::invalid("compared grids have different cell keys"));
    }
    let deltas = baseline
        .cells()
        .zip(treated.cells())
        .map(|((k, b), (_, t))| (*k, t - b))
        .collect();
    Ok(GridComparison {
        baseline: baseline.clone(),
        treated: treated.clone(),
        deltas,
    })
}

impl GridComparison {
    pub fn deltas(&self) -> impl Iterator<Item = (&CellKey, f64)> {
        self.deltas.iter().map(|(k, &v)| (k, v))
    }

    pub fn delta(&self, kind: FilterKind, sigma: f64, width: usize) -> Option<f64> {
        self.deltas.get(&CellKey::new(kind, sigma, width)).copied()
    }

    pub fn clean_delta(&self) -> f64 {
        self.treated.clean() - self.baseline.clean()
    }

    /// Mean delta over the cells of `kind`, or over all cells.
    pub fn mean_delta(&self, kind: Option<FilterKind>) -> Option<f64> {
        let vals: Vec<f64> = self
            .deltas
            .iter()
            .filter(|(k, _)| kind.is_none_or(|kind| k.kind == kind))
            .map(|(_, &v)| v)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Cell with the smallest (most negative) delta.
    pub fn worst_cell(&self) -> Option<(CellKey, f64)> {
        self.deltas
            .iter()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, &v)| (*k, v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::ReferenceTable;
    use proptest::prelude::*;

    #[test]
    fn identical_grids_have_zero_deltas() {
        let g = ReferenceTable::Cifar10Standard.grid();
        let c = compare(&g, &g).unwrap();
        assert!(c.deltas().all(|(_, d)| d == 0.0));
        assert_eq!(c.clean_delta(), 0.0);
    }

    #[test]
    fn published_tables_delta() {
        let c = compare(
            &ReferenceTable::Cifar10Standard.grid(),
            &ReferenceTable::Cifar10Stochastic.grid(),
        )
        .unwrap();
        let d = c.delta(FilterKind::HighPass, 1.0, 7).unwrap();
        assert_eq!(format!("{:+.2}", 100.0 * d), "+70.83");
        assert_eq!(format!("{:+.2}", 100.0 * c.clean_delta()), "-1.01");
        let (worst, wd) = c.worst_cell().unwrap();
        // the only cell that got worse
        assert_eq!(worst, CellKey::new(FilterKind::LowPass, 0.5, 2));
        assert!(wd < 0.0);
        assert!(
            c.mean_delta(Some(FilterKind::HighPass)).unwrap()
                > c.mean_delta(Some(FilterKind::LowPass)).unwrap()
        );
    }

    #[test]
    fn key_mismatch_is_rejected() {
        let a = ReferenceTable::Cifar10Standard.grid();
        let mut b = AccuracyGrid::new("m", "d", 0.5).unwrap();
        b.insert(CellKey::new(FilterKind::HighPass, 0.5, 2), 0.5)
            .unwrap();
        assert!(matches!(compare(&a, &b), Err(Error::InvalidArgument(_))));
    }

    fn grid_from(vals: &[f64], clean: f64) -> AccuracyGrid {
        let mut g = AccuracyGrid::new("m", "d", clean).unwrap();
        for (cell, &v) in crate::dataio::GridSpec::default().cells().iter().zip(vals) {
            g.insert(CellKey::from(cell), v).unwrap();
        }
        g
    }

    proptest! {
        #[test]
        fn deltas_are_antisymmetric(
            a in proptest::collection::vec(0.0f64..=1.0, 36),
            b in proptest::collection::vec(0.0f64..=1.0, 36),
            ca in 0.0f64..=1.0, cb in 0.0f64..=1.0,
        ) {
            let (ga, gb) = (grid_from(&a, ca), grid_from(&b, cb));
            let ab = compare(&ga, &gb).unwrap();
            let ba = compare(&gb, &ga).unwrap();
            for ((k1, d1), (k2, d2)) in ab.deltas().zip(ba.deltas()) {
                prop_assert_eq!(k1, k2);
                prop_assert_eq!(d1, -d2);
            }
            prop_assert_eq!(ab.clean_delta(), -ba.clean_delta());
        }
    }
}
