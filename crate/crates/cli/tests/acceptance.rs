//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Criteria that need the real CIFAR-10
//! batches read them from `FREQROBUST_CIFAR10_DIR` (default
//! `data/cifar-10-batches-bin` under the workspace root).

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use freqrobust::bench::{
    compare, emit_report, trend_checks, AccuracyGrid, ReferenceTable, Report, ReportFormat,
};
use freqrobust::dataio::{load_cifar10_prefix, normalize, GridSpec, NormStats, Split};
use freqrobust::imgfreq::{apply_filter, gaussian_kernel, FilterKind, ImageTensor};
use freqrobust::nnet::gradcheck::{check_all, TOLERANCE};
use freqrobust::nnet::{evaluate, train, TrainConfig};
use freqrobust_cli::commands;
use freqrobust_cli::{DataConfig, ExperimentConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

const SEEDS: [u64; 3] = [0, 1, 2];

fn within_budget(elapsed: Duration, budget: Duration) -> Result<(), String> {
    if elapsed <= budget {
        Ok(())
    } else {
        Err(format!(
            "took {:.1}s, budget {:.0}s",
            elapsed.as_secs_f64(),
            budget.as_secs_f64()
        ))
    }
}

// Independent oracle: taps straight from the Gaussian formula, then a
// direct 2D sum over the replicate-padded neighbourhood.
fn oracle_taps(sigma: f64, width: usize) -> Vec<f64> {
    let c = (width as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..width)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

fn brute_force_lowpass(img: &ImageTensor, sigma: f64, width: usize) -> Vec<f64> {
    let (h, w, ch) = img.dims();
    let k = oracle_taps(sigma, width);
    let before = (width as isize - 1) / 2;
    let mut out = Vec::with_capacity(h * w * ch);
    for c in 0..ch {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (i, ki) in k.iter().enumerate() {
                    let sy = (y as isize - before + i as isize).clamp(0, h as isize - 1) as usize;
                    for (j, kj) in k.iter().enumerate() {
                        let sx =
                            (x as isize - before + j as isize).clamp(0, w as isize - 1) as usize;
                        acc += ki * kj * img.get(c, sy, sx);
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

fn filtering_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let specs = GridSpec::default().cells();
    if specs.len() != 36 {
        return Err(format!("default grid has {} cells", specs.len()));
    }
    let (mut worst_filter, mut worst_recon) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let img = ImageTensor::from_fn(16, 16, 3, |_, _, _| rng.random_range(0.0..1.0));
        for spec in &specs {
            let lp = brute_force_lowpass(&img, spec.sigma, spec.width);
            let got = apply_filter(&img, spec).map_err(|e| e.to_string())?;
            for ((g, l), x) in got.data().iter().zip(&lp).zip(img.data()) {
                let expect = match spec.kind {
                    FilterKind::LowPass => *l,
                    FilterKind::HighPass => x - l,
                };
                worst_filter = worst_filter.max((g - expect).abs());
            }
            if spec.kind == FilterKind::HighPass {
                let mut low = *spec;
                low.kind = FilterKind::LowPass;
                let lo = apply_filter(&img, &low).map_err(|e| e.to_string())?;
                for ((h, l), x) in got.data().iter().zip(lo.data()).zip(img.data()) {
                    worst_recon = worst_recon.max((h + l - x).abs());
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let detail = format!(
        "max |separable - brute force| {worst_filter:.2e}, max |lp + hp - img| {worst_recon:.2e}, {:.2}s",
        elapsed.as_secs_f64()
    );
    if worst_filter > 1e-10 || worst_recon > 1e-10 {
        return Err(detail);
    }
    within_budget(elapsed, Duration::from_secs(10))?;
    Ok(detail)
}

fn kernel_suite() -> Outcome {
    let start = Instant::now();
    let mut worst_sum = 0.0f64;
    for &sigma in &[0.1, 0.25, 0.5, 1.0, 1.5, 1.75, 3.0, 10.0] {
        for width in 1..=15 {
            let k = gaussian_kernel(sigma, width)
                .map_err(|e| format!("sigma={sigma} width={width}: {e}"))?;
            let t = k.taps();
            worst_sum = worst_sum.max((t.iter().sum::<f64>() - 1.0).abs());
            for i in 0..width {
                if t[i] != t[width - 1 - i] {
                    return Err(format!(
                        "sigma={sigma} width={width}: asymmetric at tap {i}"
                    ));
                }
            }
        }
        if gaussian_kernel(sigma, 1).unwrap().taps() != [1.0] {
            return Err(format!("width 1 is not the identity for sigma={sigma}"));
        }
    }
    if worst_sum > 1e-12 {
        return Err(format!("tap sum off by {worst_sum:.2e}"));
    }
    let expected = [0.10650698, 0.78698604, 0.10650698];
    let got = gaussian_kernel(0.5, 3).unwrap();
    for (g, e) in got.taps().iter().zip(expected) {
        if (g - e).abs() > 1e-8 {
            return Err(format!("sigma=0.5 width=3 taps {:?}", got.taps()));
        }
    }
    let elapsed = start.elapsed();
    within_budget(elapsed, Duration::from_secs(1))?;
    Ok(format!(
        "max |sum - 1| {worst_sum:.1e}, (0.5, 3) taps {:?}",
        got.taps()
    ))
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0f64, String::new());
    let mut checks = 0;
    for seed in 0..10 {
        for r in check_all(seed).map_err(|e| format!("seed {seed}: {e}"))? {
            if !r.passed() {
                return Err(format!(
                    "seed {seed} {}: max rel error {:.2e} ({} checked, {} skipped at kinks)",
                    r.name, r.max_rel_error, r.checked, r.skipped
                ));
            }
            if r.max_rel_error > worst.0 {
                worst = (r.max_rel_error, format!("{} seed {seed}", r.name));
            }
            checks += 1;
        }
    }
    let elapsed = start.elapsed();
    within_budget(elapsed, Duration::from_secs(60))?;
    Ok(format!(
        "{checks} checks over 10 seeds, worst {:.2e} ({}) < {TOLERANCE:.0e}, {:.1}s",
        worst.0,
        worst.1,
        elapsed.as_secs_f64()
    ))
}

fn cifar_dir() -> Result<PathBuf, String> {
    let dir = std::env::var_os("FREQROBUST_CIFAR10_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/cifar-10-batches-bin")
        });
    if dir.join("data_batch_1.bin").is_file() && dir.join("test_batch.bin").is_file() {
        Ok(dir)
    } else {
        Err(format!(
            "CIFAR-10 binary batches not found at {} (set FREQROBUST_CIFAR10_DIR)",
            dir.display()
        ))
    }
}

fn overfit_sanity() -> Outcome {
    let dir = cifar_dir()?;
    let start = Instant::now();
    let raw = load_cifar10_prefix(&dir, Split::Train, Some(64)).map_err(|e| e.to_string())?;
    let norm = NormStats::from_dataset(&raw).map_err(|e| e.to_string())?;
    let ds = raw
        .map_images("overfit", |img| normalize(img, &norm))
        .map_err(|e| e.to_string())?;
    let config = TrainConfig {
        epochs: 200,
        standard_augment: false,
        ..TrainConfig::default()
    };
    let mut out = train(&config, &ds, &ds, &norm, |_| {}).map_err(|e| e.to_string())?;
    let acc = evaluate(&mut out.model, &ds, 64).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let detail = format!(
        "train accuracy {:.2}% after 200 epochs, {:.0}s",
        100.0 * acc,
        elapsed.as_secs_f64()
    );
    if acc < 0.99 {
        return Err(detail);
    }
    within_budget(elapsed, Duration::from_secs(5 * 60))?;
    Ok(detail)
}

struct SeedRuns {
    baseline: AccuracyGrid,
    baseline_time: Duration,
    stochastic: Option<(AccuracyGrid, Duration)>,
}

fn desk_config(dir: &Path, out: &Path, seed: u64) -> ExperimentConfig {
    let text = "out_dir = \"out\"\n[data]\ncifar_dir = \"data\"\n";
    let mut cfg = ExperimentConfig::parse(text, Path::new("/")).unwrap();
    cfg.out_dir = out.to_path_buf();
    cfg.data = DataConfig {
        cifar_dir: dir.to_path_buf(),
        train_limit: Some(5000),
        test_limit: Some(1000),
    };
    cfg.train.epochs = 30;
    cfg.train.lr_milestones = vec![15, 25];
    cfg.train.seed = seed;
    cfg.augment.seed = seed;
    cfg
}

fn train_and_grid(cfg: &ExperimentConfig) -> Result<(AccuracyGrid, Duration), String> {
    let start = Instant::now();
    commands::cmd_train(cfg, |m| {
        eprintln!(
            "  [{} seed {}] epoch {} loss {:.4} val {:.4}",
            cfg.run_name(),
            cfg.train.seed,
            m.epoch,
            m.train_loss,
            m.val_acc
        )
    })
    .map_err(|e| format!("{e:#}"))?;
    let grid = commands::cmd_eval(cfg, Some(cfg.run_name()))
        .map_err(|e| format!("{e:#}"))?
        .pop()
        .ok_or("no grid")?
        .1;
    Ok((grid, start.elapsed()))
}

fn desk_runs(work: &Path, with_stochastic: bool) -> Result<BTreeMap<u64, SeedRuns>, String> {
    let dir = cifar_dir()?;
    let mut runs = BTreeMap::new();
    for seed in SEEDS {
        let mut cfg = desk_config(&dir, &work.join(format!("seed{seed}")), seed);
        commands::cmd_gen_testsets(&cfg).map_err(|e| format!("{e:#}"))?;
        let (baseline, baseline_time) = train_and_grid(&cfg)?;
        let stochastic = if with_stochastic {
            cfg.train.stochastic_augment = true;
            Some(train_and_grid(&cfg)?)
        } else {
            None
        };
        runs.insert(
            seed,
            SeedRuns {
                baseline,
                baseline_time,
                stochastic,
            },
        );
    }
    Ok(runs)
}

fn desk_trend(runs: &Result<BTreeMap<u64, SeedRuns>, String>) -> Outcome {
    let runs = runs.as_ref().map_err(Clone::clone)?;
    let mut good = 0;
    let mut notes = Vec::new();
    for (seed, r) in runs {
        let g = &r.baseline;
        let clean = 100.0 * g.clean();
        let drops_ok = (3..=7).all(|w| {
            g.get(FilterKind::HighPass, 0.5, w)
                .is_some_and(|a| clean - 100.0 * a >= 20.0)
        });
        let trends = trend_checks(g, 2.0).map_err(|e| e.to_string())?;
        let failed: Vec<_> = trends
            .iter()
            .filter(|t| !t.passed)
            .map(|t| t.name)
            .collect();
        let in_budget = r.baseline_time <= Duration::from_secs(30 * 60);
        let ok = clean >= 45.0 && drops_ok && failed.is_empty() && in_budget;
        good += usize::from(ok);
        notes.push(format!(
            "seed {seed}: clean {clean:.2}%, hp0.5 drop>=20 {drops_ok}, failed trends {failed:?}, {:.0}s",
            r.baseline_time.as_secs_f64()
        ));
    }
    let detail = format!("{good}/3 seeds hold; {}", notes.join("; "));
    if good >= 2 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn augmentation_recovery(runs: &Result<BTreeMap<u64, SeedRuns>, String>) -> Outcome {
    let runs = runs.as_ref().map_err(Clone::clone)?;
    let mut good = 0;
    let mut notes = Vec::new();
    for (seed, r) in runs {
        let (treated, time) = r.stochastic.as_ref().ok_or("stochastic run missing")?;
        let cmp = compare(&r.baseline, treated).map_err(|e| e.to_string())?;
        let gain = 100.0 * cmp.mean_delta(None).unwrap_or(f64::NAN);
        let clean = 100.0 * cmp.clean_delta();
        let ok = gain >= 10.0 && clean >= -5.0 && *time <= Duration::from_secs(60 * 60);
        good += usize::from(ok);
        notes.push(format!(
            "seed {seed}: mean cell delta {gain:+.2}, clean delta {clean:+.2}, {:.0}s",
            time.as_secs_f64()
        ));
    }
    let detail = format!("{good}/3 seeds hold; {}", notes.join("; "));
    if good >= 2 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(&p, root, out);
            } else {
                out.insert(
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                );
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

// Wall-clock time is the only nondeterministic metrics field.
fn strip_wall_seconds(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes)
        .lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n")
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = common::fake_cifar(&tmp.path().join("data"), 16, 20);
    let config = tmp.path().join("exp.toml");
    fs::write(
        &config,
        format!(
            "out_dir = \"out\"\n[data]\ncifar_dir = {:?}\ntrain_limit = 40\ntest_limit = 12\n\
             [train]\nepochs = 3\nbatch_size = 8\ninitial_lr = 0.01\nlr_milestones = [2]\nstochastic_augment = true\n",
            data
        ),
    )
    .map_err(|e| e.to_string())?;
    let out = tmp.path().join("out");
    let run_all = || -> Result<BTreeMap<PathBuf, Vec<u8>>, String> {
        for cmd in ["gen-testsets", "augment", "train"] {
            let status = Command::new(env!("CARGO_BIN_EXE_freqrobust"))
                .args(["--threads", "1", cmd, "--config", config.to_str().unwrap()])
                .output()
                .map_err(|e| e.to_string())?;
            if !status.status.success() {
                return Err(format!(
                    "{cmd} failed: {}",
                    String::from_utf8_lossy(&status.stderr)
                ));
            }
        }
        Ok(snapshot(&out))
    };
    let first = run_all()?;
    let second = run_all()?;
    if first.keys().ne(second.keys()) {
        return Err("the two runs wrote different file sets".into());
    }
    let metrics = Path::new("runs/stochastic/metrics.csv");
    for (path, a) in &first {
        let b = &second[path];
        let same = if path == metrics {
            strip_wall_seconds(a) == strip_wall_seconds(b)
        } else {
            a == b
        };
        if !same {
            return Err(format!("{} differs between runs", path.display()));
        }
    }
    if !first.contains_key(metrics) || !first.contains_key(Path::new("augment/provenance.csv")) {
        return Err("expected outputs missing".into());
    }
    Ok(format!(
        "{} files byte-identical across reruns (metrics compared without the wall_seconds column)",
        first.len()
    ))
}

// Rows typed in from the published tables; the bundled CSVs are the input.
const TABLE1_HIGHPASS_05: &str = "| 0.5 | 58.13 | 17.59 | 17.77 | 17.94 | 17.94 | 17.94 |";
const TABLE1_LOWPASS_1: &str = "| 1 | 63.42 | 40.79 | 33.22 | 25.85 | 25.99 | 25.95 |";
const TABLE3_HIGHPASS_1: &str = "| 1 | 92.98 | 89.90 | 87.98 | 86.28 | 85.76 | 84.87 |";
const TABLE3_LOWPASS_15: &str = "| 1.5 | 91.56 | 90.25 | 89.02 | 85.35 | 84.44 | 82.91 |";

fn report_fidelity() -> Outcome {
    let standard = ReferenceTable::Cifar10Standard.grid();
    let stochastic = ReferenceTable::Cifar10Stochastic.grid();
    let header = "| Sigma \\ Width | 2 | 3 | 4 | 5 | 6 | 7 |";
    for (grid, clean, rows) in [
        (&standard, "94.95", [TABLE1_HIGHPASS_05, TABLE1_LOWPASS_1]),
        (&stochastic, "93.94", [TABLE3_HIGHPASS_1, TABLE3_LOWPASS_15]),
    ] {
        let md =
            emit_report(Report::Grid(grid), ReportFormat::Markdown).map_err(|e| e.to_string())?;
        let hp = md.find("### HighPass").ok_or("missing HighPass section")?;
        let lp = md.find("### LowPass").ok_or("missing LowPass section")?;
        if hp > lp || md.matches(header).count() != 2 {
            return Err("sections or width header out of layout".into());
        }
        if !md.contains(&format!("Clean accuracy: {clean}")) {
            return Err(format!("clean accuracy {clean} not reported"));
        }
        for row in rows {
            if !md.contains(row) {
                return Err(format!("row `{row}` not found"));
            }
        }
        // sigma rows ascend within each kind
        for section in [&md[hp..lp], &md[lp..]] {
            let sigmas: Vec<&str> = section
                .lines()
                .filter_map(|l| l.strip_prefix("| "))
                .filter_map(|l| l.split(" |").next())
                .filter(|s| s.parse::<f64>().is_ok())
                .collect();
            if sigmas != ["0.5", "1", "1.5"] {
                return Err(format!("sigma rows {sigmas:?}"));
            }
        }
    }
    let cmp = compare(&standard, &stochastic).map_err(|e| e.to_string())?;
    let d = cmp
        .delta(FilterKind::HighPass, 1.0, 7)
        .ok_or("missing cell")?;
    let (cell, clean) = (
        format!("{:+.2}", 100.0 * d),
        format!("{:+.2}", 100.0 * cmp.clean_delta()),
    );
    if cell != "+70.83" || clean != "-1.01" {
        return Err(format!(
            "HighPass sigma=1 width=7 delta {cell}, clean delta {clean}"
        ));
    }
    let md =
        emit_report(Report::Comparison(&cmp), ReportFormat::Markdown).map_err(|e| e.to_string())?;
    if !md.contains("84.87 (+70.83)") {
        return Err("comparison markdown lacks the +70.83 cell".into());
    }
    Ok(format!(
        "table layouts match; HighPass sigma=1 width=7 delta {cell}, clean delta {clean}"
    ))
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = vec![
        ("filtering oracle", filtering_oracle()),
        ("kernel suite", kernel_suite()),
        ("gradient suite", gradient_suite()),
        ("overfit sanity", overfit_sanity()),
    ];
    let work = tempfile::tempdir().expect("tempdir");
    let runs = desk_runs(work.path(), true);
    results.push(("desk-scale trend", desk_trend(&runs)));
    results.push(("augmentation recovery", augmentation_recovery(&runs)));
    results.push(("determinism", determinism()));
    results.push(("report fidelity", report_fidelity()));

    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        results.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
