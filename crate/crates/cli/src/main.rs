use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{error::ErrorKind, Args, Parser, Subcommand};

use ristile::ao::{write_ao_trace, AoOptions};
use ristile::channel::{read_channels, realize_instance, write_channels, ChannelSet};
use ristile::experiments::{
    emit_plot_data, format_bench, format_cell_summary, run_complexity_bench, run_experiment, run_instance_on, write_metadata,
    BenchCell, BenchSpec, ExperimentSpec, MIN_TIMED_ITERS,
};
use ristile::linalg::watts_to_dbm;
use ristile::{resolve_scenario, Scenario};

const OUT_ENV: &str = "RISTILE_OUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "ristile", version, about = "Tiled-RIS downlink power minimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the AO loop on one channel instance and write its trace.
    Run(RunArgs),
    /// Monte-Carlo sweep over tile counts and SINR targets.
    Sweep(SweepArgs),
    /// Time one TO2 dual iteration over a grid of problem sizes.
    Bench(BenchArgs),
    /// Print derived quantities and check a scenario.
    Validate(ValidateArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Preset name (FF, NF) or path to a TOML scenario.
    #[arg(long, default_value = "FF")]
    scenario: String,
    /// Experiment seed; a random one is chosen and printed when omitted.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: $RISTILE_OUT_DIR or ./ristile-out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Keep the unprojected element responses between iterations.
    #[arg(long)]
    no_projection: bool,
    /// AO iteration limit.
    #[arg(long)]
    max_iters: Option<usize>,
    /// Comma-separated SINR targets in dB.
    #[arg(long, value_delimiter = ',')]
    targets_db: Vec<f64>,
    /// Comma-separated total tile counts (0 = no RIS).
    #[arg(long, value_delimiter = ',')]
    k_tiles: Vec<usize>,
    /// Worker threads for instance-level parallelism.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Index of the channel instance under the seed.
    #[arg(long, default_value_t = 0)]
    instance: u64,
    /// Write the channel realization to this file.
    #[arg(long)]
    dump_channels: Option<PathBuf>,
    /// Read the channel realization from this file instead of drawing it.
    #[arg(long, conflicts_with = "dump_channels")]
    replay_channels: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, default_value_t = 50)]
    instances: usize,
    /// Override the scenario's user count.
    #[arg(long)]
    users: Option<usize>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "4,8")]
    k_tiles: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "16")]
    users: Vec<usize>,
    /// Total RIS elements, held fixed across the grid.
    #[arg(long, default_value_t = 4800)]
    elements: usize,
    #[arg(long, default_value_t = 16)]
    antennas: usize,
    #[arg(long, default_value_t = 30)]
    iters: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(long, default_value = "FF")]
    scenario: String,
    #[arg(long)]
    k_tiles: Option<usize>,
}

/// Failure classes mapped onto exit codes.
enum Failure {
    Usage(String),
    Run(String),
}

impl Failure {
    fn usage(e: impl ToString) -> Self {
        Failure::Usage(e.to_string())
    }

    fn run(e: impl ToString) -> Self {
        Failure::Run(e.to_string())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let outcome = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Validate(a) => cmd_validate(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Run(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn out_dir(flag: &Option<PathBuf>) -> Result<PathBuf, Failure> {
    let dir = flag
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("ristile-out"));
    fs::create_dir_all(&dir).map_err(|e| Failure::run(format!("cli: cannot create --out {}: {e}", dir.display())))?;
    Ok(dir)
}

fn pick_seed(flag: Option<u64>) -> u64 {
    flag.unwrap_or_else(|| {
        let s: u64 = rand::random();
        eprintln!("seed: {s}");
        s
    })
}

fn set_jobs(jobs: Option<usize>) -> Result<(), Failure> {
    if let Some(n) = jobs {
        if n == 0 {
            return Err(Failure::usage("cli: --jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::run(format!("cli: --jobs: {e}")))?;
    }
    Ok(())
}

fn load(spec: &str) -> Result<Scenario, Failure> {
    resolve_scenario(spec).map_err(|e| Failure::usage(format!("{e} (--scenario {spec})")))
}

/// Applies the single-valued overrides shared by `run`.
fn configure_single(common: &Common) -> Result<Scenario, Failure> {
    let mut sc = load(&common.scenario)?;
    match common.k_tiles.as_slice() {
        [] => {}
        [k] => {
            sc = sc
                .with_total_tiles(*k)
                .map_err(|e| Failure::usage(format!("{e} (--k-tiles)")))?
        }
        _ => return Err(Failure::usage("cli: run takes a single --k-tiles value")),
    }
    match common.targets_db.as_slice() {
        [] => {}
        [t] => sc = sc.with_uniform_target_db(*t).map_err(Failure::usage)?,
        ts => {
            let ts = ts.to_vec();
            sc = sc
                .with_config(|c| c.solver.sinr_targets_db = ts)
                .map_err(|e| Failure::usage(format!("{e} (--targets-db)")))?;
        }
    }
    if let Some(n) = common.max_iters {
        sc = sc
            .with_max_ao_iters(n)
            .map_err(|e| Failure::usage(format!("{e} (--max-iters)")))?;
    }
    Ok(sc)
}

fn check_replay(channels: &ChannelSet, sc: &Scenario) -> Result<(), Failure> {
    let expected = (
        sc.n_users(),
        sc.n_antennas(),
        sc.tiling().total_tiles,
        sc.tiling().elements_per_tile,
    );
    let got = (
        channels.n_users(),
        channels.n_antennas(),
        channels.n_tiles(),
        channels.elements_per_tile(),
    );
    if expected != got {
        return Err(Failure::usage(format!(
            "channel: --replay-channels dimensions (N_u, M, K, P) = {got:?} do not match the scenario's {expected:?}"
        )));
    }
    Ok(())
}

fn cmd_run(a: RunArgs) -> Result<(), Failure> {
    let sc = configure_single(&a.common)?;
    set_jobs(a.common.jobs)?;
    let dir = out_dir(&a.common.out)?;
    let seed = pick_seed(a.common.seed);

    let channels = match &a.replay_channels {
        Some(path) => {
            let f =
                File::open(path).map_err(|e| Failure::usage(format!("channel: --replay-channels {}: {e}", path.display())))?;
            let ch = read_channels(&mut BufReader::new(f)).map_err(|e| Failure::usage(format!("{e} (--replay-channels)")))?;
            check_replay(&ch, &sc)?;
            ch
        }
        None => realize_instance(&sc, seed, a.instance).map_err(Failure::run)?,
    };
    if let Some(path) = &a.dump_channels {
        let f = File::create(path).map_err(|e| Failure::run(format!("channel: --dump-channels {}: {e}", path.display())))?;
        let mut w = BufWriter::new(f);
        write_channels(&channels, &mut w).map_err(Failure::run)?;
        w.flush().map_err(Failure::run)?;
    }

    let mut options = AoOptions::from_scenario(&sc);
    options.projection = !a.common.no_projection;
    log::info!(
        "run: {} K={} P={} N_u={} seed={seed} instance={}",
        sc.name(),
        sc.tiling().total_tiles,
        sc.tiling().elements_per_tile,
        sc.n_users(),
        a.instance
    );
    let result = run_instance_on(&sc, &channels, seed, a.instance, &options).map_err(Failure::run)?;

    let trace_path = dir.join("trace.tsv");
    let mut w = BufWriter::new(File::create(&trace_path).map_err(|e| Failure::run(format!("cli: --out: {e}")))?);
    write_ao_trace(&result.trace, &mut w)
        .and_then(|_| w.flush())
        .map_err(Failure::run)?;
    write_metadata(
        &dir.join("metadata.tsv"),
        &sc,
        seed,
        &[
            ("command", "run".into()),
            ("instance", a.instance.to_string()),
            ("projection", options.projection.to_string()),
            ("replayed_channels", a.replay_channels.is_some().to_string()),
        ],
    )
    .map_err(Failure::run)?;
    println!(
        "final_power_dbm\t{:.6}\niterations\t{}\nconverged\t{}",
        watts_to_dbm(result.precoder.total_power),
        result.trace.records.len(),
        result.converged
    );
    log::info!("run: trace written to {}", trace_path.display());
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<(), Failure> {
    let c = &a.common;
    let base = load(&c.scenario)?;
    let mut spec = ExperimentSpec::new(base);
    if !c.k_tiles.is_empty() {
        spec.k_values = c.k_tiles.clone();
    }
    if !c.targets_db.is_empty() {
        spec.targets_db = c.targets_db.clone();
    }
    spec.n_users = a.users;
    spec.instances = a.instances;
    spec.projection = !c.no_projection;
    spec.max_ao_iters = c.max_iters;
    // validate every cell before any instance runs
    spec.cells()
        .map_err(|e| Failure::usage(format!("{e} (--k-tiles/--targets-db/--instances/--users)")))?;
    set_jobs(c.jobs)?;
    let dir = out_dir(&c.out)?;
    spec.seed = pick_seed(c.seed);

    let table = run_experiment(&spec).map_err(Failure::run)?;
    if table.rows.is_empty() {
        return Err(Failure::run("experiments: every instance failed"));
    }
    emit_plot_data(&table, &dir.join("results.tsv")).map_err(Failure::run)?;
    fs::write(dir.join("cells.tsv"), format_cell_summary(&table)).map_err(Failure::run)?;
    write_metadata(
        &dir.join("metadata.tsv"),
        &spec.scenario,
        spec.seed,
        &[
            ("command", "sweep".into()),
            ("k_tiles", join(&spec.k_values)),
            ("targets_db", join(&spec.targets_db)),
            ("instances", spec.instances.to_string()),
            ("projection", spec.projection.to_string()),
        ],
    )
    .map_err(Failure::run)?;
    print!("{}", format_cell_summary(&table));
    let failures = table.failures();
    if failures > 0 {
        log::warn!("sweep: {failures} instance(s) failed and were excluded");
    }
    if table.cells.iter().any(|c| c.succeeded == 0) {
        return Err(Failure::run("experiments: a cell has no successful instance"));
    }
    Ok(())
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn cmd_bench(a: BenchArgs) -> Result<(), Failure> {
    if a.iters < MIN_TIMED_ITERS {
        return Err(Failure::usage(format!(
            "experiments: --iters must be at least {MIN_TIMED_ITERS}, got {}",
            a.iters
        )));
    }
    let mut cells = Vec::new();
    for &k in &a.k_tiles {
        if k == 0 || !a.elements.is_multiple_of(k) {
            return Err(Failure::usage(format!(
                "experiments: --k-tiles {k} does not divide --elements {}",
                a.elements
            )));
        }
        for &n_users in &a.users {
            if n_users == 0 {
                return Err(Failure::usage("experiments: --users must be positive"));
            }
            cells.push(BenchCell {
                k,
                n_users,
                p: a.elements / k,
            });
        }
    }
    let dir = out_dir(&a.out)?;
    let spec = BenchSpec {
        cells,
        n_antennas: a.antennas,
        timed_iters: a.iters,
        warmup_iters: 10,
        seed: a.seed,
    };
    let report = run_complexity_bench(&spec).map_err(Failure::run)?;
    let text = format_bench(&report);
    fs::write(dir.join("bench.tsv"), &text).map_err(Failure::run)?;
    print!("{text}");
    Ok(())
}

fn cmd_validate(a: ValidateArgs) -> Result<(), Failure> {
    let sc = match resolve_scenario(&a.scenario) {
        Ok(sc) => sc,
        Err(e) => {
            println!("FAIL\t{e}");
            return Err(Failure::usage(format!("scenario `{}` failed validation", a.scenario)));
        }
    };
    let sc = match a.k_tiles {
        Some(k) => match sc.with_total_tiles(k) {
            Ok(s) => s,
            Err(e) => {
                println!("FAIL\t{e}");
                return Err(Failure::usage(format!("--k-tiles {k} is invalid for `{}`", a.scenario)));
            }
        },
        None => sc,
    };
    let (report, ok) = validation_report(&sc);
    print!("{report}");
    if ok {
        Ok(())
    } else {
        Err(Failure::usage(format!("scenario `{}` failed validation", a.scenario)))
    }
}

fn validation_report(sc: &Scenario) -> (String, bool) {
    let t = sc.tiling();
    let nu = sc.n_users();
    let mut out = String::new();
    let mut line = |k: &str, v: String| out.push_str(&format!("{k}\t{v}\n"));
    line("scenario", sc.name().to_string());
    line("M", sc.n_antennas().to_string());
    line("Q", sc.n_surfaces().to_string());
    line("N_r", sc.n_elements().to_string());
    line("N_u", nu.to_string());
    line("K", t.total_tiles.to_string());
    line("P", t.elements_per_tile.to_string());
    line("Z", format!("{:.4}", t.elements_per_tile as f64 / nu as f64));
    line("wavelength_m", format!("{:.6e}", sc.wavelength()));
    for (i, &s) in sc.noise_power().iter().enumerate() {
        line(&format!("noise_dbm_{i}"), format!("{:.2}", watts_to_dbm(s)));
    }
    let checks = [
        (
            "elements_sum",
            sc.ris_elements().iter().map(Vec::len).sum::<usize>() == sc.n_elements(),
        ),
        (
            "tiles_partition_elements",
            t.total_tiles == 0 || t.total_tiles * t.elements_per_tile == sc.n_elements(),
        ),
        (
            "tile_members",
            sc.tile_members().iter().all(|m| m.len() == t.elements_per_tile),
        ),
        (
            "targets_positive",
            sc.sinr_targets().iter().all(|&x| x > 0.0) && sc.sinr_targets().len() == nu,
        ),
        ("noise_positive", sc.noise_power().iter().all(|&x| x > 0.0)),
    ];
    for (name, ok) in checks {
        line(&format!("check_{name}"), if ok { "ok".into() } else { "FAIL".into() });
    }
    (out, checks.iter().all(|c| c.1))
}
