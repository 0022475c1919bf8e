//! Sweep runners: enumerate cells, reuse finished ones, emit CSV + manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::bounds::{conv_bounds, lower_bound, min_width, upper_bound};
use crate::error::{Error, Result};
use crate::experiments::config::{ExperimentConfig, ExperimentKind};
use crate::experiments::persist::{
    atomic_write, fmt_opt_real, fmt_real, load_json, save_json, save_manifest, unix_now,
    CellManifest, Manifest,
};
use crate::montecarlo::{
    estimate_alive_prob, estimate_conv_alive_prob, living_fraction_stats, variance_report,
    InitKind,
};
use crate::seed::SeedSpec;
use crate::stats::Estimate;

/// One grid cell: estimate plus closed-form bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub n: u32,
    pub k: u32,
    pub trials: u64,
    pub alive: u64,
    pub phat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Layer entry of a path cell's variance table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathVarianceRow {
    pub layer: u32,
    pub alive_trials: u64,
    pub mean_sq_sigma: f64,
    pub mean_sq_lambda: f64,
    pub normalized: Option<f64>,
    pub partial_sum: f64,
    pub pre_relu_variance: f64,
}

/// One cell along the constant-lower-bound path `n(k) = min_width(p, k)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathRow {
    pub k: u32,
    pub n: u32,
    pub trials: u64,
    pub alive: u64,
    pub phat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub lower: f64,
    pub variance: Vec<PathVarianceRow>,
}

/// One cell comparing plain, sign-flipped, and batch-centered living
/// fractions on paired samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitComparisonRow {
    pub n: u32,
    pub k: u32,
    pub trials: u64,
    pub points: u64,
    pub lower: f64,
    pub iid_mean: f64,
    pub iid_alive_rate: f64,
    pub signflip_mean: f64,
    pub signflip_min: f64,
    pub signflip_alive_rate: f64,
    pub signflip_degenerate: u64,
    pub centered_mean: f64,
    pub centered_alive_rate: f64,
}

/// One conv-grid cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvRow {
    pub channels: u32,
    pub kernel: u32,
    pub d: u32,
    pub k: u32,
    pub trials: u64,
    pub alive: u64,
    pub phat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Typed rows of a finished sweep, in CSV order.
#[derive(Clone, Debug)]
pub enum ExperimentRows {
    Grid(Vec<GridRow>),
    Path(Vec<PathRow>),
    InitComparison(Vec<InitComparisonRow>),
    Conv(Vec<ConvRow>),
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub rows: ExperimentRows,
    pub manifest: Manifest,
    pub csv_paths: Vec<PathBuf>,
}

fn sorted_unique(values: &[u32]) -> Vec<u32> {
    let mut v = values.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

struct CellStore {
    dir: PathBuf,
    base_seed: u64,
    cells: Vec<CellManifest>,
}

impl CellStore {
    fn open(output_dir: &Path) -> Result<CellStore> {
        let dir = output_dir.join("cells");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(CellStore {
            dir,
            base_seed: 0,
            cells: Vec::new(),
        })
    }

    fn with_base_seed(mut self, base_seed: u64) -> CellStore {
        self.base_seed = base_seed;
        self
    }

    fn into_cells(self) -> Vec<CellManifest> {
        self.cells
    }

    /// Returns the stored row for `id` or computes, persists, and returns a
    /// fresh one. `fresh` must be deterministic in the cell's stream label.
    fn fetch<T, F>(&mut self, id: &str, stream_label: &str, fresh: F) -> Result<(T, bool)>
    where
        T: Serialize + DeserializeOwned,
        F: FnOnce(SeedSpec) -> Result<T>,
    {
        let path = self.dir.join(format!("{id}.json"));
        let (row, reused) = match load_json::<T>(&path)? {
            Some(row) => (row, true),
            None => {
                let row = fresh(SeedSpec::new(self.base_seed, stream_label))?;
                save_json(&path, &row)?;
                (row, false)
            }
        };
        self.cells.push(CellManifest {
            id: id.to_owned(),
            stream_label: stream_label.to_owned(),
            completed_at_unix: unix_now(),
        });
        Ok((row, reused))
    }
}

fn finish(
    config: &ExperimentConfig,
    created_at: u64,
    cells: Vec<CellManifest>,
    csv: Vec<(&'static str, String)>,
    rows: ExperimentRows,
) -> Result<ExperimentResult> {
    let mut csv_paths = Vec::new();
    let mut csv_files = Vec::new();
    for (name, contents) in csv {
        let path = config.output_dir.join(name);
        atomic_write(&path, contents.as_bytes())?;
        csv_files.push(name.to_owned());
        csv_paths.push(path);
    }
    let manifest = Manifest {
        artifact_version: env!("CARGO_PKG_VERSION").to_owned(),
        config: config.clone(),
        cells,
        csv_files,
        created_at_unix: created_at,
        completed_at_unix: unix_now(),
    };
    save_manifest(&config.output_dir, &manifest)?;
    Ok(ExperimentResult {
        rows,
        manifest,
        csv_paths,
    })
}

/// Runs the sweep described by `config`, calling `progress` with one summary
/// line per cell (reused cells included).
pub fn run_experiment_with_progress(
    config: &ExperimentConfig,
    progress: &mut dyn FnMut(&str),
) -> Result<ExperimentResult> {
    config.validate()?;
    fs::create_dir_all(&config.output_dir).map_err(|e| Error::io(&config.output_dir, e))?;
    match config.kind {
        ExperimentKind::Grid => grid(config, progress),
        ExperimentKind::ConstantLbPath => constant_lb_path(config, progress),
        ExperimentKind::InitComparison => init_comparison(config, progress),
        ExperimentKind::ConvGrid => conv_grid(config, progress),
    }
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    run_experiment_with_progress(config, &mut |_| {})
}

pub fn run_grid(config: &ExperimentConfig) -> Result<ExperimentResult> {
    expect_kind(config, ExperimentKind::Grid)?;
    run_experiment(config)
}

pub fn run_constant_lb_path(config: &ExperimentConfig) -> Result<ExperimentResult> {
    expect_kind(config, ExperimentKind::ConstantLbPath)?;
    run_experiment(config)
}

pub fn run_init_comparison(config: &ExperimentConfig) -> Result<ExperimentResult> {
    expect_kind(config, ExperimentKind::InitComparison)?;
    run_experiment(config)
}

pub fn run_conv_grid(config: &ExperimentConfig) -> Result<ExperimentResult> {
    expect_kind(config, ExperimentKind::ConvGrid)?;
    run_experiment(config)
}

fn expect_kind(config: &ExperimentConfig, kind: ExperimentKind) -> Result<()> {
    if config.kind != kind {
        return Err(Error::invalid(format!(
            "config kind is '{}', expected '{kind}'",
            config.kind
        )));
    }
    Ok(())
}

fn grid(config: &ExperimentConfig, progress: &mut dyn FnMut(&str)) -> Result<ExperimentResult> {
    let created_at = unix_now();
    let mut store = CellStore::open(&config.output_dir)?.with_base_seed(config.base_seed);
    let mut rows = Vec::new();
    for &n in &sorted_unique(&config.n_values) {
        for &k in &sorted_unique(&config.k_values) {
            let id = format!("n{n}_k{k}");
            let label = format!("grid/n{n}/k{k}");
            let (row, reused) = store.fetch(&id, &label, |seed| {
                let est = estimate_alive_prob(
                    n as usize,
                    k as usize,
                    config.scheme,
                    config.bias_mode,
                    config.points_per_trial,
                    config.trials,
                    &seed,
                )?;
                Ok(grid_row(n, k, &est, config))
            })?;
            // stale artifacts from an edited config must not leak through
            check_cell(&id, row.n == n && row.k == k && row.trials == config.trials)?;
            progress(&format!(
                "grid n={n} k={k}: phat={} in [{}, {}]{}",
                fmt_real(row.phat),
                fmt_real(row.ci_lo),
                fmt_real(row.ci_hi),
                if reused { " (reused)" } else { "" }
            ));
            rows.push(row);
        }
    }

    let mut csv = String::from("n,k,trials,alive,phat,ci_lo,ci_hi,lower,upper\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.n,
            r.k,
            r.trials,
            r.alive,
            fmt_real(r.phat),
            fmt_real(r.ci_lo),
            fmt_real(r.ci_hi),
            fmt_real(r.lower),
            fmt_real(r.upper)
        ));
    }
    let cells = store.into_cells();
    finish(
        config,
        created_at,
        cells,
        vec![("grid.csv", csv)],
        ExperimentRows::Grid(rows),
    )
}

fn grid_row(n: u32, k: u32, est: &Estimate, config: &ExperimentConfig) -> GridRow {
    GridRow {
        n,
        k,
        trials: est.trials,
        alive: est.successes,
        phat: est.p_hat,
        ci_lo: est.ci_low,
        ci_hi: est.ci_high,
        lower: lower_bound(n, k),
        upper: upper_bound(n, k, config.bias_mode),
    }
}

fn check_cell(id: &str, matches: bool) -> Result<()> {
    if matches {
        Ok(())
    } else {
        Err(Error::malformed(
            "cell artifact",
            format!("{id}.json does not match the current config; delete it or use a fresh output directory"),
        ))
    }
}

fn constant_lb_path(
    config: &ExperimentConfig,
    progress: &mut dyn FnMut(&str),
) -> Result<ExperimentResult> {
    let created_at = unix_now();
    let mut store = CellStore::open(&config.output_dir)?.with_base_seed(config.base_seed);
    let p = config.target_lower_bound;
    let ks: Vec<u32> = sorted_unique(&config.k_values)
        .into_iter()
        .filter(|&k| k <= config.max_depth)
        .collect();
    if ks.is_empty() {
        return Err(Error::invalid("no k values at or below k_max"));
    }

    let mut rows: Vec<PathRow> = Vec::new();
    for &k in &ks {
        let n = min_width(p, k)?;
        let id = format!("k{k}");
        let label = format!("path/k{k}");
        let (row, reused) = store.fetch(&id, &label, |seed| {
            // one sampled population yields both the survival estimate and
            // the layerwise variance table
            let report = variance_report(
                n as usize,
                k as usize,
                config.scheme,
                config.bias_mode,
                config.points_per_trial,
                config.trials,
                &seed,
            )?;
            let alive = report.layers[k as usize - 1].alive_trials;
            let est = Estimate::from_counts(alive, config.trials, 0.95)?;
            Ok(PathRow {
                k,
                n,
                trials: config.trials,
                alive,
                phat: est.p_hat,
                ci_lo: est.ci_low,
                ci_hi: est.ci_high,
                lower: lower_bound(n, k),
                variance: report
                    .layers
                    .iter()
                    .map(|l| PathVarianceRow {
                        layer: l.layer as u32,
                        alive_trials: l.alive_trials,
                        mean_sq_sigma: l.mean_sq_sigma,
                        mean_sq_lambda: l.mean_sq_lambda,
                        normalized: l.normalized,
                        partial_sum: l.partial_sum,
                        pre_relu_variance: l.mean_pre_relu_variance,
                    })
                    .collect(),
            })
        })?;
        check_cell(&id, row.k == k && row.n == n && row.trials == config.trials)?;
        progress(&format!(
            "path k={k} n={n}: phat={} (lower {}){}",
            fmt_real(row.phat),
            fmt_real(row.lower),
            if reused { " (reused)" } else { "" }
        ));
        rows.push(row);
    }

    let mut summary = String::from("k,n,trials,alive,phat,ci_lo,ci_hi,lower\n");
    let mut variance = String::from(
        "k,n,layer,alive_trials,mean_sq_sigma,mean_sq_lambda,normalized,partial_sum,pre_relu_variance\n",
    );
    for r in &rows {
        summary.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.k,
            r.n,
            r.trials,
            r.alive,
            fmt_real(r.phat),
            fmt_real(r.ci_lo),
            fmt_real(r.ci_hi),
            fmt_real(r.lower)
        ));
        for v in &r.variance {
            variance.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.k,
                r.n,
                v.layer,
                v.alive_trials,
                fmt_real(v.mean_sq_sigma),
                fmt_real(v.mean_sq_lambda),
                fmt_opt_real(v.normalized),
                fmt_real(v.partial_sum),
                fmt_real(v.pre_relu_variance)
            ));
        }
    }
    let cells = store.into_cells();
    finish(
        config,
        created_at,
        cells,
        vec![("path.csv", summary), ("path_variance.csv", variance)],
        ExperimentRows::Path(rows),
    )
}

fn init_comparison(
    config: &ExperimentConfig,
    progress: &mut dyn FnMut(&str),
) -> Result<ExperimentResult> {
    let created_at = unix_now();
    let mut store = CellStore::open(&config.output_dir)?.with_base_seed(config.base_seed);
    let m = config.points_per_trial;
    let trials = config.trials;
    let mut rows = Vec::new();
    for &n in &sorted_unique(&config.n_values) {
        for &k in &sorted_unique(&config.k_values) {
            let id = format!("n{n}_k{k}");
            let label = format!("init/n{n}/k{k}");
            let (row, reused) = store.fetch(&id, &label, |seed| {
                let run = |kind: InitKind| {
                    living_fraction_stats(
                        n as usize,
                        k as usize,
                        config.scheme,
                        config.bias_mode,
                        kind,
                        m,
                        trials,
                        &seed,
                    )
                };
                let iid = run(InitKind::Iid)?;
                let flipped = run(InitKind::SignFlipped)?;
                let centered = run(InitKind::BatchCentered)?;
                let rate = |alive: u64| alive as f64 / trials as f64;
                Ok(InitComparisonRow {
                    n,
                    k,
                    trials,
                    points: m as u64,
                    lower: lower_bound(n, k),
                    iid_mean: iid.mean_fraction,
                    iid_alive_rate: rate(iid.alive_networks),
                    signflip_mean: flipped.mean_fraction,
                    signflip_min: flipped.min_fraction,
                    signflip_alive_rate: rate(flipped.alive_networks),
                    signflip_degenerate: flipped.degenerate_trials,
                    centered_mean: centered.mean_fraction,
                    centered_alive_rate: rate(centered.alive_networks),
                })
            })?;
            check_cell(&id, row.n == n && row.k == k && row.trials == trials)?;
            progress(&format!(
                "init-comparison n={n} k={k}: iid={} signflip={} centered={}{}",
                fmt_real(row.iid_mean),
                fmt_real(row.signflip_mean),
                fmt_real(row.centered_mean),
                if reused { " (reused)" } else { "" }
            ));
            rows.push(row);
        }
    }

    let mut csv = String::from(
        "n,k,trials,M,lower,iid_mean,iid_alive_rate,signflip_mean,signflip_min,signflip_alive_rate,signflip_degenerate,centered_mean,centered_alive_rate\n",
    );
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.n,
            r.k,
            r.trials,
            r.points,
            fmt_real(r.lower),
            fmt_real(r.iid_mean),
            fmt_real(r.iid_alive_rate),
            fmt_real(r.signflip_mean),
            fmt_real(r.signflip_min),
            fmt_real(r.signflip_alive_rate),
            r.signflip_degenerate,
            fmt_real(r.centered_mean),
            fmt_real(r.centered_alive_rate)
        ));
    }
    let cells = store.into_cells();
    finish(
        config,
        created_at,
        cells,
        vec![("init_comparison.csv", csv)],
        ExperimentRows::InitComparison(rows),
    )
}

fn conv_grid(
    config: &ExperimentConfig,
    progress: &mut dyn FnMut(&str),
) -> Result<ExperimentResult> {
    let created_at = unix_now();
    let mut store = CellStore::open(&config.output_dir)?.with_base_seed(config.base_seed);
    let d = config.spatial_side;
    let mut rows = Vec::new();
    for &c in &sorted_unique(&config.channels) {
        for &ks in &sorted_unique(&config.kernel_sides) {
            for &k in &sorted_unique(&config.k_values) {
                let id = format!("c{c}_m{ks}_k{k}");
                let label = format!("conv/c{c}/m{ks}/k{k}");
                let (row, reused) = store.fetch(&id, &label, |seed| {
                    let est = estimate_conv_alive_prob(
                        c as usize,
                        ks as usize,
                        d as usize,
                        k as usize,
                        config.scheme,
                        config.bias_mode,
                        config.points_per_trial,
                        config.trials,
                        &seed,
                    )?;
                    let bounds = conv_bounds(c, ks, k);
                    Ok(ConvRow {
                        channels: c,
                        kernel: ks,
                        d,
                        k,
                        trials: est.trials,
                        alive: est.successes,
                        phat: est.p_hat,
                        ci_lo: est.ci_low,
                        ci_hi: est.ci_high,
                        lower: bounds.lower,
                        upper: bounds.upper,
                    })
                })?;
                check_cell(
                    &id,
                    row.channels == c && row.kernel == ks && row.d == d && row.k == k
                        && row.trials == config.trials,
                )?;
                progress(&format!(
                    "conv-grid C={c} m={ks} k={k}: phat={}{}",
                    fmt_real(row.phat),
                    if reused { " (reused)" } else { "" }
                ));
                rows.push(row);
            }
        }
    }

    let mut csv = String::from("channels,kernel,d,k,trials,alive,phat,ci_lo,ci_hi,lower,upper\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.channels,
            r.kernel,
            r.d,
            r.k,
            r.trials,
            r.alive,
            fmt_real(r.phat),
            fmt_real(r.ci_lo),
            fmt_real(r.ci_hi),
            fmt_real(r.lower),
            fmt_real(r.upper)
        ));
    }
    let cells = store.into_cells();
    finish(
        config,
        created_at,
        cells,
        vec![("conv_grid.csv", csv)],
        ExperimentRows::Conv(rows),
    )
}
