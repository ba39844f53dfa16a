use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use freqrobust::bench::{
    compare, emit_report, parse_grid_csv, run_grid, trend_checks, AccuracyGrid, Report, TrendCheck,
};
use freqrobust::dataio::{
    encoding_for, generate_test_grid, load_cifar10_prefix, normalize, stochastic_augment,
    write_provenance, write_records, LabeledDataset, Manifest, NormStats, Provenance, Split,
};
use freqrobust::imgfreq::{
    apply_filter, load_image, save_display, to_display_u8, FilterKind, FilterSpec,
};
use freqrobust::nnet::{train, write_metrics, Checkpoint, EpochMetrics, TrainOutcome};

use crate::config::ExperimentConfig;

pub const CONFIG_FILE: &str = "config.toml";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const GRID_CSV: &str = "grid.csv";
pub const TRENDS_FILE: &str = "trends.txt";
pub const PROVENANCE_FILE: &str = "provenance.csv";
pub const RUN_NAMES: [&str; 2] = ["baseline", "stochastic"];

fn write_resolved_config(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(CONFIG_FILE);
    fs::write(&path, cfg.to_toml()).with_context(|| format!("writing {}", path.display()))
}

/// Filters one image file. High-pass output uses the signed display
/// mapping (zero is mid-grey).
pub fn cmd_filter(input: &Path, output: &Path, spec: &FilterSpec) -> Result<()> {
    let img = load_image(input).with_context(|| format!("reading {}", input.display()))?;
    let filtered = apply_filter(&img, spec)?;
    let display = to_display_u8(&filtered, spec.kind == FilterKind::HighPass);
    save_display(output, &display).with_context(|| format!("writing {}", output.display()))
}

fn load_split(cfg: &ExperimentConfig, split: Split) -> Result<LabeledDataset> {
    let limit = match split {
        Split::Train => cfg.data.train_limit,
        Split::Test => cfg.data.test_limit,
    };
    load_cifar10_prefix(&cfg.data.cifar_dir, split, limit)
        .with_context(|| format!("loading CIFAR-10 from {}", cfg.data.cifar_dir.display()))
}

/// Writes the clean test subset, one filtered copy per grid cell, and the
/// manifest under `<out>/testsets`.
pub fn cmd_gen_testsets(cfg: &ExperimentConfig) -> Result<Manifest> {
    let test = load_split(cfg, Split::Test)?;
    let dir = cfg.testsets_dir();
    write_resolved_config(&dir, cfg)?;
    Ok(generate_test_grid(&test, &cfg.grid, &dir)?)
}

/// Writes the stochastically filtered copies of the training subset,
/// split by filter kind (each file keeps provenance order), plus the
/// provenance table under `<out>/augment`.
pub fn cmd_augment(cfg: &ExperimentConfig) -> Result<Vec<Provenance>> {
    let train_set = load_split(cfg, Split::Train)?;
    let (augmented, provenance) = stochastic_augment(&train_set, &cfg.augment)?;
    let dir = cfg.augment_dir();
    write_resolved_config(&dir, cfg)?;
    let copies = &augmented.items()[train_set.len()..];
    for kind in FilterKind::ALL {
        let items: Vec<_> = copies
            .iter()
            .zip(&provenance)
            .filter(|(_, p)| p.spec.kind == kind)
            .map(|(item, _)| item.clone())
            .collect();
        let path = dir.join(format!("{}.bin", kind.as_str().to_ascii_lowercase()));
        if items.is_empty() {
            // keep reruns byte-identical even when a kind was never drawn
            let _ = fs::remove_file(&path);
            continue;
        }
        let ds = LabeledDataset::new(kind.as_str(), train_set.num_classes(), items)?;
        write_records(&path, &ds, encoding_for(kind))?;
    }
    write_provenance(&dir.join(PROVENANCE_FILE), &provenance)?;
    Ok(provenance)
}

/// Trains the run selected by `train.stochastic_augment` and writes the
/// checkpoint, metrics log and resolved config under `<out>/runs/<run>`.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    let train_set = load_split(cfg, Split::Train)?;
    let val_set = load_split(cfg, Split::Test)?;
    let norm = match &cfg.norm {
        Some(n) => n.clone(),
        None => NormStats::from_dataset(&train_set)?,
    };
    let train_set = if cfg.train.stochastic_augment {
        stochastic_augment(&train_set, &cfg.augment)?.0
    } else {
        train_set
    };
    let train_n = train_set.map_images(train_set.name(), |img| normalize(img, &norm))?;
    let val_n = val_set.map_images(val_set.name(), |img| normalize(img, &norm))?;
    drop(train_set);
    let dir = cfg.run_dir();
    write_resolved_config(&dir, cfg)?;
    let outcome = train(&cfg.train, &train_n, &val_n, &norm, |m| on_epoch(m))?;
    outcome.checkpoint.save(&dir.join(CHECKPOINT_FILE))?;
    write_metrics(&dir.join(METRICS_FILE), &outcome.metrics)?;
    Ok(outcome)
}

fn render_trends(checks: &[TrendCheck]) -> String {
    checks
        .iter()
        .map(|c| {
            format!(
                "{} {}: {}\n",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.details
            )
        })
        .collect()
}

fn existing_runs(cfg: &ExperimentConfig, file: &str) -> Vec<&'static str> {
    RUN_NAMES
        .into_iter()
        .filter(|r| cfg.runs_dir().join(r).join(file).is_file())
        .collect()
}

/// Evaluates every trained run (or only `run`) on the generated test sets,
/// writing `grid.csv`, `grid.md` and `trends.txt` beside each checkpoint.
pub fn cmd_eval(cfg: &ExperimentConfig, run: Option<&str>) -> Result<Vec<(String, AccuracyGrid)>> {
    let runs: Vec<&str> = match run {
        Some(r) => vec![r],
        None => existing_runs(cfg, CHECKPOINT_FILE),
    };
    if runs.is_empty() {
        bail!("no trained runs under {}", cfg.runs_dir().display());
    }
    let manifest = Manifest::read(&cfg.testsets_dir()).with_context(|| {
        format!(
            "reading test sets in {} (run gen-testsets first)",
            cfg.testsets_dir().display()
        )
    })?;
    let mut grids = Vec::new();
    for run in runs {
        let dir = cfg.runs_dir().join(run);
        let ckpt = Checkpoint::load(&dir.join(CHECKPOINT_FILE))?;
        let mut grid = run_grid(&ckpt, &manifest, &cfg.grid)?;
        grid.model_id = format!("{run}-{}", grid.model_id);
        for &format in &cfg.report.formats {
            let text = emit_report(Report::Grid(&grid), format)?;
            fs::write(dir.join(format!("grid.{}", format.extension())), text)?;
        }
        if cfg.report.formats.iter().all(|f| f.extension() != "csv") {
            // report reads grids back from csv
            fs::write(
                dir.join(GRID_CSV),
                emit_report(Report::Grid(&grid), freqrobust::bench::ReportFormat::Csv)?,
            )?;
        }
        let trends = match trend_checks(&grid, cfg.report.slack) {
            Ok(checks) => render_trends(&checks),
            Err(e) => format!("trend checks skipped: {e}\n"),
        };
        fs::write(dir.join(TRENDS_FILE), trends)?;
        grids.push((run.to_string(), grid));
    }
    Ok(grids)
}

/// Emits the baseline-vs-stochastic comparison when both grids exist,
/// otherwise a report per available grid, under `<out>/report`.
pub fn cmd_report(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let runs = existing_runs(cfg, GRID_CSV);
    if runs.is_empty() {
        bail!(
            "no evaluated runs under {} (run eval first)",
            cfg.runs_dir().display()
        );
    }
    let mut grids = Vec::new();
    for run in &runs {
        let path = cfg.runs_dir().join(run).join(GRID_CSV);
        let text =
            fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        grids.push(parse_grid_csv(&text).with_context(|| format!("parsing {}", path.display()))?);
    }
    let dir = cfg.report_dir();
    write_resolved_config(&dir, cfg)?;
    let mut written = Vec::new();
    let mut emit = |name: &str, report: Report<'_>| -> Result<()> {
        for &format in &cfg.report.formats {
            let path = dir.join(format!("{name}.{}", format.extension()));
            fs::write(&path, emit_report(report, format)?)?;
            written.push(path);
        }
        Ok(())
    };
    if grids.len() == 2 {
        let cmp = compare(&grids[0], &grids[1])?;
        emit("comparison", Report::Comparison(&cmp))?;
    } else {
        for (run, grid) in runs.iter().zip(&grids) {
            emit(run, Report::Grid(grid))?;
        }
    }
    Ok(written)
}
