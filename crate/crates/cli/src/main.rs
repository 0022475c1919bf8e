//! `deadnets`: bounds, width planning, one-off estimates, full sweeps, and
//! SVG plots for survival of randomly initialized ReLU networks.
//!
//! Every subcommand is a thin shell over the library; no numeric logic lives
//! here. Exit codes: 0 success, 2 usage error, 1 runtime error.

mod plot;

use std::fmt;
use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use deadnets_core::experiments::{
    load_manifest, run_experiment_with_progress, ExperimentConfig, ExperimentKind,
};
use deadnets_core::{
    conv_bounds, estimate_alive_prob, estimate_neuron_death_prob, estimate_point_alive_prob,
    lower_bound, min_width, upper_bound, BiasMode, Estimate, InitScheme, SeedSpec,
};

/// Operator input that clap cannot catch on its own; reported with exit 2.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage<T: fmt::Display>(msg: T) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.to_string()))
}

#[derive(Parser)]
#[command(name = "deadnets", version, about = "Survival of ReLU networks at random initialization")]
struct Cli {
    /// Worker threads for Monte Carlo sweeps (default: all cores; never
    /// changes results, only wall-clock time).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form lower/upper bounds on network survival.
    Bounds(BoundsArgs),
    /// Smallest width whose survival lower bound reaches p at depth k.
    Width(WidthArgs),
    /// One Monte Carlo estimate (network, single point, or single neuron).
    Simulate(SimulateArgs),
    /// Survival estimates plus bounds over an n x k grid.
    Grid(SweepArgs),
    /// Follow the width that pins the lower bound at p as depth grows.
    Path(SweepArgs),
    /// Compare plain, sign-flipped, and batch-centered initialization.
    CompareInit(SweepArgs),
    /// Survival estimates for convolutional stacks.
    ConvGrid(SweepArgs),
    /// Render a CSV produced by a sweep as a deterministic SVG chart.
    Plot(PlotArgs),
}

#[derive(Args)]
struct BoundsArgs {
    /// Layer width (dense networks).
    #[arg(long)]
    n: Option<u32>,
    /// Depth in layers.
    #[arg(long)]
    k: u32,
    /// All biases fixed at zero (default).
    #[arg(long, conflicts_with = "free_bias")]
    zero_bias: bool,
    /// Biases drawn like weights.
    #[arg(long)]
    free_bias: bool,
    /// Bound a convolutional stack instead of a dense network.
    #[arg(long, requires = "channels", requires = "kernel")]
    conv: bool,
    /// Channel count per conv layer.
    #[arg(long)]
    channels: Option<u32>,
    /// Odd kernel side length.
    #[arg(long)]
    kernel: Option<u32>,
}

#[derive(Args)]
struct WidthArgs {
    /// Target lower bound, strictly between 0 and 1.
    #[arg(long)]
    p: f64,
    /// Depth in layers.
    #[arg(long)]
    k: u32,
}

#[derive(Args)]
struct SimulateArgs {
    /// Layer width (defaults to the probe length when --x is given).
    #[arg(long)]
    n: Option<u32>,
    /// Depth in layers (not used by --neuron).
    #[arg(long)]
    k: Option<u32>,
    /// Estimate single-point survival instead of whole-network survival.
    #[arg(long, conflicts_with = "neuron")]
    point: bool,
    /// Estimate the probability that one random neuron kills the probe.
    #[arg(long)]
    neuron: bool,
    /// Probe point as comma-separated reals (default: all ones).
    #[arg(long, value_name = "V1,V2,...")]
    x: Option<String>,
    #[arg(long, default_value_t = 10_000)]
    trials: u64,
    /// Data points per trial (network estimates only).
    #[arg(long = "M", default_value_t = 1024)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// he, xavier, normal:VARIANCE, or uniform:HALFWIDTH.
    #[arg(long, default_value = "he")]
    scheme: String,
    #[arg(long, conflicts_with = "free_bias")]
    zero_bias: bool,
    #[arg(long)]
    free_bias: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// key = value config file; later flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Rerun the exact configuration recorded in a manifest.json.
    #[arg(long, value_name = "MANIFEST")]
    from_manifest: Option<PathBuf>,
    /// Output directory for cells, CSVs, and the manifest.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<u64>,
    /// Data points per trial.
    #[arg(long = "M")]
    m: Option<usize>,
    /// Widths, e.g. "1-8" or "1,2,4,8".
    #[arg(long, value_name = "LIST")]
    n_values: Option<String>,
    /// Depths, e.g. "1,2,4,8,16".
    #[arg(long, value_name = "LIST")]
    k_values: Option<String>,
    /// Lower-bound level tracked by the path sweep.
    #[arg(long)]
    p: Option<f64>,
    /// Replace the depth list with doublings 1,2,4,... up to this cap.
    #[arg(long)]
    k_max: Option<u32>,
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long, conflicts_with = "free_bias")]
    zero_bias: bool,
    #[arg(long)]
    free_bias: bool,
    /// Conv channel counts, e.g. "1-4".
    #[arg(long, value_name = "LIST")]
    channels: Option<String>,
    /// Conv kernel sides (odd), e.g. "1,3".
    #[arg(long, value_name = "LIST")]
    kernel_sides: Option<String>,
    /// Conv image side length.
    #[arg(long)]
    d: Option<u32>,
}

#[derive(Args)]
struct PlotArgs {
    /// CSV file produced by a sweep.
    #[arg(long)]
    input: PathBuf,
    /// Column for the horizontal axis.
    #[arg(long)]
    x: String,
    /// Columns plotted as curves.
    #[arg(long, value_delimiter = ',', required = true)]
    series: Vec<String>,
    /// Output SVG path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    title: Option<String>,
    #[arg(long)]
    log_x: bool,
    #[arg(long)]
    log_y: bool,
    /// Series to draw dashed (default: any series named lower or upper).
    #[arg(long, value_delimiter = ',')]
    dashed: Option<Vec<String>>,
    /// Keep only rows where a column equals a value, e.g. --where n=4.
    #[arg(long = "where", value_name = "COL=VALUE")]
    filter: Vec<String>,
}

fn main() {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        // only affects wall-clock time; estimator reductions are ordered
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: could not configure {threads} threads: {e}");
            std::process::exit(1);
        }
    }
    let result = match cli.command {
        Command::Bounds(args) => cmd_bounds(args),
        Command::Width(args) => cmd_width(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Grid(args) => cmd_sweep(ExperimentKind::Grid, args),
        Command::Path(args) => cmd_sweep(ExperimentKind::ConstantLbPath, args),
        Command::CompareInit(args) => cmd_sweep(ExperimentKind::InitComparison, args),
        Command::ConvGrid(args) => cmd_sweep(ExperimentKind::ConvGrid, args),
        Command::Plot(args) => cmd_plot(args),
    };
    match result {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = if e.downcast_ref::<UsageError>().is_some() {
                2
            } else {
                1
            };
            std::process::exit(code);
        }
    }
}

fn bias_mode(zero: bool, free: bool) -> BiasMode {
    debug_assert!(!(zero && free));
    if free {
        BiasMode::FreeBias
    } else {
        BiasMode::ZeroBias
    }
}

fn cmd_bounds(args: BoundsArgs) -> anyhow::Result<()> {
    if args.k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    let (lower, upper) = if args.conv {
        let channels = args.channels.expect("clap enforces --channels");
        let kernel = args.kernel.expect("clap enforces --kernel");
        if channels == 0 || kernel == 0 || kernel % 2 == 0 {
            return Err(usage("--channels must be positive and --kernel a positive odd number"));
        }
        let b = conv_bounds(channels, kernel, args.k);
        (b.lower, b.upper)
    } else {
        let n = args
            .n
            .ok_or_else(|| usage("--n is required unless --conv is given"))?;
        if n == 0 {
            return Err(usage("--n must be at least 1"));
        }
        let mode = bias_mode(args.zero_bias, args.free_bias);
        (lower_bound(n, args.k), upper_bound(n, args.k, mode))
    };
    println!("lower {lower:?}");
    println!("upper {upper:?}");
    Ok(())
}

fn cmd_width(args: WidthArgs) -> anyhow::Result<()> {
    if args.k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    let n = min_width(args.p, args.k).map_err(usage)?;
    println!("{n}");
    Ok(())
}

fn parse_probe(args: &SimulateArgs) -> anyhow::Result<Vec<f64>> {
    let x = match &args.x {
        Some(text) => {
            let x: Vec<f64> = text
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| usage(format!("--x: {e}")))?;
            if let Some(n) = args.n {
                if n as usize != x.len() {
                    return Err(usage(format!(
                        "--n {n} disagrees with --x of length {}",
                        x.len()
                    )));
                }
            }
            x
        }
        None => {
            let n = args
                .n
                .ok_or_else(|| usage("give --n or an explicit probe --x"))?;
            vec![1.0; n as usize]
        }
    };
    Ok(x)
}

fn cmd_simulate(args: SimulateArgs) -> anyhow::Result<()> {
    let scheme: InitScheme = args.scheme.parse().map_err(usage)?;
    let mode = bias_mode(args.zero_bias, args.free_bias);
    let mode_name = if args.free_bias { "free" } else { "zero" };

    let (header, est): (String, Estimate) = if args.neuron {
        let x = parse_probe(&args)?;
        let seed = SeedSpec::new(args.seed, "simulate/neuron");
        let est = estimate_neuron_death_prob(scheme, mode, &x, args.trials, &seed)?;
        (
            format!(
                "target neuron-death n={} scheme={} bias={mode_name} trials={}",
                x.len(),
                args.scheme,
                args.trials
            ),
            est,
        )
    } else if args.point {
        let x = parse_probe(&args)?;
        let k = args.k.ok_or_else(|| usage("--k is required"))?;
        if k == 0 {
            return Err(usage("--k must be at least 1"));
        }
        let seed = SeedSpec::new(args.seed, "simulate/point");
        let est =
            estimate_point_alive_prob(k as usize, scheme, mode, &x, args.trials, &seed)?;
        let header = format!(
            "target point-alive n={} k={k} scheme={} bias={mode_name} trials={}",
            x.len(),
            args.scheme,
            args.trials
        );
        println!("{header}");
        print_estimate(&est);
        println!("lower {:?}", lower_bound(x.len() as u32, k));
        return Ok(());
    } else {
        let n = args.n.ok_or_else(|| usage("--n is required"))?;
        let k = args.k.ok_or_else(|| usage("--k is required"))?;
        if n == 0 || k == 0 {
            return Err(usage("--n and --k must be at least 1"));
        }
        let seed = SeedSpec::new(args.seed, "simulate/alive");
        let est = estimate_alive_prob(
            n as usize,
            k as usize,
            scheme,
            mode,
            args.m,
            args.trials,
            &seed,
        )?;
        println!(
            "target network-alive n={n} k={k} scheme={} bias={mode_name} M={} trials={}",
            args.scheme, args.m, args.trials
        );
        print_estimate(&est);
        println!("lower {:?}", lower_bound(n, k));
        println!("upper {:?}", upper_bound(n, k, mode));
        return Ok(());
    };
    println!("{header}");
    print_estimate(&est);
    Ok(())
}

fn print_estimate(est: &Estimate) {
    println!("estimate {:?}", est.p_hat);
    println!("ci95 {:?} {:?}", est.ci_low, est.ci_high);
    println!("successes {} of {}", est.successes, est.trials);
}

fn cmd_sweep(kind: ExperimentKind, args: SweepArgs) -> anyhow::Result<()> {
    let mut config = match &args.from_manifest {
        Some(path) => {
            let manifest = load_manifest(path)
                .with_context(|| format!("reading manifest {}", path.display()))?;
            if manifest.config.kind != kind {
                return Err(usage(format!(
                    "manifest records a '{}' run, not '{kind}'",
                    manifest.config.kind
                )));
            }
            manifest.config
        }
        None => ExperimentConfig::default_for(kind),
    };
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        config.apply_config_text(&text).map_err(usage)?;
    }

    // --k-max regenerates the depth list, so an explicit --k-values wins
    let mut overrides: Vec<(&str, String)> = Vec::new();
    if let Some(v) = args.k_max {
        overrides.push(("k_max", v.to_string()));
    }
    if let Some(v) = &args.n_values {
        overrides.push(("n_values", v.clone()));
    }
    if let Some(v) = &args.k_values {
        overrides.push(("k_values", v.clone()));
    }
    if let Some(v) = args.p {
        overrides.push(("p", v.to_string()));
    }
    if let Some(v) = &args.scheme {
        overrides.push(("scheme", v.clone()));
    }
    if args.zero_bias {
        overrides.push(("bias_mode", "zero".to_owned()));
    }
    if args.free_bias {
        overrides.push(("bias_mode", "free".to_owned()));
    }
    if let Some(v) = args.m {
        overrides.push(("M", v.to_string()));
    }
    if let Some(v) = args.trials {
        overrides.push(("trials", v.to_string()));
    }
    if let Some(v) = args.seed {
        overrides.push(("seed", v.to_string()));
    }
    if let Some(v) = &args.channels {
        overrides.push(("channels", v.clone()));
    }
    if let Some(v) = &args.kernel_sides {
        overrides.push(("kernel_sides", v.clone()));
    }
    if let Some(v) = args.d {
        overrides.push(("d", v.to_string()));
    }
    if let Some(v) = &args.out {
        overrides.push(("out", v.display().to_string()));
    }
    for (key, value) in &overrides {
        config.apply_key_value(key, value).map_err(usage)?;
    }
    config.validate().map_err(usage)?;

    let result = run_experiment_with_progress(&config, &mut |line| println!("{line}"))?;
    for path in &result.csv_paths {
        println!("wrote {}", path.display());
    }
    println!(
        "wrote {}",
        config.output_dir.join("manifest.json").display()
    );
    Ok(())
}

fn cmd_plot(args: PlotArgs) -> anyhow::Result<()> {
    let mut filters = Vec::new();
    for f in &args.filter {
        let (col, value) = f
            .split_once('=')
            .ok_or_else(|| usage(format!("--where '{f}' is not of the form COL=VALUE")))?;
        filters.push((col.to_owned(), value.to_owned()));
    }
    let dashed = args.dashed.unwrap_or_else(|| {
        args.series
            .iter()
            .filter(|s| s.as_str() == "lower" || s.as_str() == "upper")
            .cloned()
            .collect()
    });
    let spec = plot::PlotSpec {
        input: args.input,
        x: args.x,
        series: args.series,
        out: args.out,
        title: args.title,
        log_x: args.log_x,
        log_y: args.log_y,
        dashed,
        filters,
    };
    plot::render(&spec)
}
