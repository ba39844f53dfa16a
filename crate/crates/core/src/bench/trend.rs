use crate::dataio::GridSpec;
use crate::error::Result;
use crate::imgfreq::FilterKind::{HighPass, LowPass};

use super::grid::AccuracyGrid;

/// Slack in accuracy points admitted by each trend predicate.
pub const DEFAULT_SLACK: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TrendCheck {
    pub name: &'static str,
    pub passed: bool,
    /// Violations, or a short summary when the check passed.
    pub details: String,
}

/// The four monotone-trend predicates over the default grid, in points:
///
/// * (a) high-pass, per sigma: width 7 <= width 2 + slack
/// * (b) high-pass, per width >= 3: sigma 0.5 <= sigma 1.5 + slack
/// * (c) low-pass, per width: sigma 1.5 <= sigma 0.5 + slack
/// * (d) clean >= every high-pass cell at width >= 3, minus slack
pub fn trend_checks(grid: &AccuracyGrid, slack: f64) -> Result<Vec<TrendCheck>> {
    let spec = GridSpec::default();
    grid.check_covers(&spec)?;
    let pt = |kind, sigma, width| 100.0 * grid.get(kind, sigma, width).expect("grid covers spec");
    let clean = 100.0 * grid.clean();

    let mut checks = Vec::new();
    let mut run = |name, items: Vec<(String, f64, f64)>| {
        // each item: (label, lhs, rhs) for the predicate lhs <= rhs + slack
        let bad: Vec<String> = items
            .iter()
            .filter(|(_, l, r)| *l > r + slack)
            .map(|(label, l, r)| format!("{label}: {l:.2} > {r:.2} + {slack}"))
            .collect();
        checks.push(TrendCheck {
            name,
            passed: bad.is_empty(),
            details: if bad.is_empty() {
                format!("{} comparisons within slack {slack}", items.len())
            } else {
                bad.join("; ")
            },
        });
    };

    run(
        "highpass_width",
        spec.sigmas
            .iter()
            .map(|&s| {
                (
                    format!("HighPass sigma={s} w7 vs w2"),
                    pt(HighPass, s, 7),
                    pt(HighPass, s, 2),
                )
            })
            .collect(),
    );
    run(
        "highpass_sigma",
        (3..=7)
            .map(|w| {
                (
                    format!("HighPass w={w} sigma 0.5 vs 1.5"),
                    pt(HighPass, 0.5, w),
                    pt(HighPass, 1.5, w),
                )
            })
            .collect(),
    );
    run(
        "lowpass_sigma",
        spec.widths
            .iter()
            .map(|&w| {
                (
                    format!("LowPass w={w} sigma 1.5 vs 0.5"),
                    pt(LowPass, 1.5, w),
                    pt(LowPass, 0.5, w),
                )
            })
            .collect(),
    );
    run(
        "clean_dominates_highpass",
        spec.sigmas
            .iter()
            .flat_map(|&s| (3..=7).map(move |w| (s, w)))
            .map(|(s, w)| {
                (
                    format!("HighPass sigma={s} w={w} vs clean"),
                    pt(HighPass, s, w),
                    clean,
                )
            })
            .collect(),
    );
    Ok(checks)
}
