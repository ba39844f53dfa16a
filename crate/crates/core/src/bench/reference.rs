//! Published accuracy tables shipped as reference data. They exercise the
//! report layout and comparison arithmetic only; they are never targets
//! for models trained by this crate.

use super::grid::AccuracyGrid;
use super::report::parse_grid_csv;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceTable {
    Cifar10Standard,
    TinyImageNetStandard,
    Cifar10Stochastic,
    TinyImageNetStochastic,
}

impl ReferenceTable {
    pub const ALL: [ReferenceTable; 4] = [
        ReferenceTable::Cifar10Standard,
        ReferenceTable::TinyImageNetStandard,
        ReferenceTable::Cifar10Stochastic,
        ReferenceTable::TinyImageNetStochastic,
    ];

    pub fn csv(self) -> &'static str {
        match self {
            ReferenceTable::Cifar10Standard => {
                include_str!("../../reference/cifar10_resnet50_standard.csv")
            }
            ReferenceTable::TinyImageNetStandard => {
                include_str!("../../reference/tinyimagenet_resnet101_standard.csv")
            }
            ReferenceTable::Cifar10Stochastic => {
                include_str!("../../reference/cifar10_resnet50_stochastic.csv")
            }
            ReferenceTable::TinyImageNetStochastic => {
                include_str!("../../reference/tinyimagenet_resnet101_stochastic.csv")
            }
        }
    }

    pub fn grid(self) -> AccuracyGrid {
        parse_grid_csv(self.csv()).expect("bundled reference csv is well formed")
    }
}
