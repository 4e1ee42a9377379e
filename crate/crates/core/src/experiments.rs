//! Monte-Carlo sweeps over tilings and SINR targets, the TO2 timing bench,
//! and the columnar files both produce.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::ao::{initial_alpha, run_ao_from, AoOptions, AoResult, TileModel};
use crate::channel::{instance_rng, realize_instance, ChannelSet};
use crate::error::{AoError, ExperimentError};
use crate::linalg::{cis, dbm_to_watts, watts_to_dbm, CMatrix, CVector, C64};
use crate::precoder::{solve_po, PoSettings};
use crate::ris_model::{build_gc_quadratics, TileBasis};
use crate::rng::{rng_for, stream, SimRng};
use crate::scenario::Scenario;
use crate::to2::{evaluate_dual, mse_targets, optimal_receivers, To2Workspace};

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub scenario: Scenario,
    /// Total tile counts; 0 is the no-RIS baseline.
    pub k_values: Vec<usize>,
    pub targets_db: Vec<f64>,
    /// Overrides the scenario's user count.
    pub n_users: Option<usize>,
    pub instances: usize,
    pub seed: u64,
    pub projection: bool,
    /// Overrides the scenario's AO iteration limit.
    pub max_ao_iters: Option<usize>,
}

impl ExperimentSpec {
    pub fn new(scenario: Scenario) -> Self {
        ExperimentSpec {
            k_values: vec![scenario.tiling().total_tiles],
            targets_db: scenario.solver().sinr_targets_db.first().copied().into_iter().collect(),
            scenario,
            n_users: None,
            instances: 50,
            seed: 0,
            projection: true,
            max_ao_iters: None,
        }
    }

    /// Every cell's scenario, in `(K, target)` row-major order.
    pub fn cells(&self) -> Result<Vec<Cell>, ExperimentError> {
        if self.instances == 0 {
            return Err(ExperimentError::Spec("instance count must be at least 1".into()));
        }
        if self.k_values.is_empty() || self.targets_db.is_empty() {
            return Err(ExperimentError::Spec("empty K or target list".into()));
        }
        let mut base = self.scenario.clone();
        if let Some(n) = self.n_users {
            base = base.with_users(n)?;
        }
        if let Some(t) = self.max_ao_iters {
            base = base.with_max_ao_iters(t)?;
        }
        let mut cells = Vec::new();
        for &k in &self.k_values {
            let sk = base.with_total_tiles(k)?;
            for &t in &self.targets_db {
                cells.push(Cell {
                    config_id: format!("K{k}_T{t}dB"),
                    k,
                    target_db: t,
                    scenario: sk.with_uniform_target_db(t)?,
                });
            }
        }
        Ok(cells)
    }
}

#[derive(Debug, Clone)]
pub struct Cell {
    pub config_id: String,
    pub k: usize,
    pub target_db: f64,
    pub scenario: Scenario,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub config_id: String,
    pub iteration: usize,
    pub mean_power_dbm: f64,
    pub std_dbm: f64,
    pub n_instances: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub config_id: String,
    pub k: usize,
    pub target_db: f64,
    pub succeeded: usize,
    pub failed: usize,
    /// Final power of every instance in watts, `None` where the run failed.
    pub final_power_w: Vec<Option<f64>>,
    /// Instances whose trace stopped before the iteration limit; their last
    /// value is carried forward in the aggregates.
    pub padded: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
    pub cells: Vec<CellSummary>,
}

impl ResultTable {
    pub fn rows_for<'a>(&'a self, config_id: &'a str) -> impl Iterator<Item = &'a ResultRow> + 'a {
        self.rows.iter().filter(move |r| r.config_id == config_id)
    }

    pub fn final_mean_dbm(&self, config_id: &str) -> Option<f64> {
        self.rows_for(config_id).last().map(|r| r.mean_power_dbm)
    }

    pub fn failures(&self) -> usize {
        self.cells.iter().map(|c| c.failed).sum()
    }
}

/// The random GC-tight start for one instance. Keyed by `K` so that every
/// tiling of one instance starts independently.
pub fn instance_initial_alpha(scenario: &Scenario, model: &TileModel, seed: u64, instance: u64) -> CVector {
    let mut rng = instance_rng(seed, instance, stream::INITIAL_ALPHA);
    let mut rng = rng_for(rng.random(), &[scenario.tiling().total_tiles as u64]);
    initial_alpha(
        &mut rng,
        &model.gc,
        scenario.n_users(),
        scenario.tiling().elements_per_tile as f64,
    )
}

/// Runs the AO loop on given channels with the instance's seeded start.
pub fn run_instance_on(
    scenario: &Scenario,
    channels: &ChannelSet,
    seed: u64,
    instance: u64,
    options: &AoOptions,
) -> Result<AoResult, AoError> {
    let model = TileModel::new(channels);
    let alpha = instance_initial_alpha(scenario, &model, seed, instance);
    run_ao_from(scenario, channels, &model, alpha, options)
}

/// One instance of one cell: its per-iteration power in watts.
fn run_instance(cell: &Cell, seed: u64, instance: u64, options: &AoOptions) -> Result<Vec<f64>, String> {
    let channels = realize_instance(&cell.scenario, seed, instance).map_err(|e| e.to_string())?;
    let result = run_instance_on(&cell.scenario, &channels, seed, instance, options).map_err(|e| e.to_string())?;
    Ok(result.trace.powers_w())
}

/// Runs every `(K, target)` cell over the same channel instances.
///
/// Instances run in parallel; the per-instance traces are collected in
/// instance order and reduced sequentially, so the aggregates do not depend
/// on scheduling or thread count.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ResultTable, ExperimentError> {
    let cells = spec.cells()?;
    let mut table = ResultTable::default();
    for cell in &cells {
        let mut options = AoOptions::from_scenario(&cell.scenario);
        options.projection = spec.projection;
        let horizon = options.max_iters.max(1);
        let outcomes: Vec<Result<Vec<f64>, String>> = (0..spec.instances as u64)
            .into_par_iter()
            .map(|inst| run_instance(cell, spec.seed, inst, &options))
            .collect();

        let mut traces = Vec::new();
        let mut final_power_w = Vec::with_capacity(outcomes.len());
        let mut padded = 0;
        for (inst, outcome) in outcomes.into_iter().enumerate() {
            match outcome {
                Ok(mut p) if !p.is_empty() => {
                    if p.len() < horizon {
                        padded += 1;
                        let last = p[p.len() - 1];
                        p.resize(horizon, last);
                    }
                    final_power_w.push(Some(p[p.len() - 1]));
                    traces.push(p);
                }
                Ok(_) => final_power_w.push(None),
                Err(e) => {
                    log::warn!("experiments: {} instance {inst} failed: {e}", cell.config_id);
                    final_power_w.push(None);
                }
            }
        }
        let failed = final_power_w.iter().filter(|p| p.is_none()).count();
        if !traces.is_empty() {
            for t in 0..horizon {
                let watts: Vec<f64> = traces.iter().map(|p| p[t]).collect();
                table.rows.push(ResultRow {
                    config_id: cell.config_id.clone(),
                    iteration: t + 1,
                    mean_power_dbm: watts_to_dbm(mean(&watts)),
                    std_dbm: sample_std(&watts.iter().map(|&w| watts_to_dbm(w)).collect::<Vec<_>>()),
                    n_instances: traces.len(),
                });
            }
        }
        log::info!(
            "experiments: {} done, {} ok, {failed} failed, final {:.3} dBm",
            cell.config_id,
            traces.len(),
            table.final_mean_dbm(&cell.config_id).unwrap_or(f64::NAN)
        );
        table.cells.push(CellSummary {
            config_id: cell.config_id.clone(),
            k: cell.k,
            target_db: cell.target_db,
            succeeded: traces.len(),
            failed,
            final_power_w,
            padded,
        });
    }
    Ok(table)
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_std(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

/// Linear-domain average of per-instance powers given in dBm.
pub fn average_dbm(values_dbm: &[f64]) -> f64 {
    watts_to_dbm(mean(&values_dbm.iter().map(|&d| dbm_to_watts(d)).collect::<Vec<_>>()))
}

/// Writes the table as tab-separated columns, one block of rows per config.
pub fn emit_plot_data(table: &ResultTable, path: &Path) -> Result<(), ExperimentError> {
    if table.rows.is_empty() {
        return Err(ExperimentError::EmptyTable);
    }
    fs::write(path, format_plot_data(table))?;
    Ok(())
}

pub fn format_plot_data(table: &ResultTable) -> String {
    let mut out = String::from("config_id\titeration\tmean_power_dbm\tstd_dbm\tn_instances\n");
    for r in &table.rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{:.6}\t{:.6}\t{}",
            r.config_id, r.iteration, r.mean_power_dbm, r.std_dbm, r.n_instances
        );
    }
    out
}

/// Per-cell success and failure counts.
pub fn format_cell_summary(table: &ResultTable) -> String {
    let mut out = String::from("config_id\tK\ttarget_db\tsucceeded\tfailed\tpadded\tfinal_mean_dbm\n");
    for c in &table.cells {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{:.6}",
            c.config_id,
            c.k,
            c.target_db,
            c.succeeded,
            c.failed,
            c.padded,
            table.final_mean_dbm(&c.config_id).unwrap_or(f64::NAN)
        );
    }
    out
}

/// Provenance of a run: no timestamps, so reruns compare equal.
pub fn metadata(scenario: &Scenario, seed: u64, extra: &[(&str, String)]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "tool_version\t{}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(out, "git_revision\t{}", git_revision());
    let _ = writeln!(out, "scenario_hash\t{}", scenario.content_hash());
    let _ = writeln!(out, "seed\t{seed}");
    for (k, v) in extra {
        let _ = writeln!(out, "{k}\t{v}");
    }
    out
}

pub fn write_metadata(path: &Path, scenario: &Scenario, seed: u64, extra: &[(&str, String)]) -> Result<(), ExperimentError> {
    fs::write(path, metadata(scenario, seed, extra))?;
    Ok(())
}

fn git_revision() -> String {
    if let Some(rev) = option_env!("RISTILE_GIT_REVISION") {
        return rev.to_string();
    }
    std::process::Command::new("git")
        .args(["rev-parse", "--short=12", "HEAD"])
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchCell {
    pub k: usize,
    pub n_users: usize,
    pub p: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSpec {
    pub cells: Vec<BenchCell>,
    pub n_antennas: usize,
    pub timed_iters: usize,
    pub warmup_iters: usize,
    pub seed: u64,
}

pub const MIN_TIMED_ITERS: usize = 20;

impl BenchSpec {
    /// `K ∈ {4, 8}` at fixed `N_r`, the pair whose time ratio is checked.
    pub fn doubling(n_users: usize, n_r: usize) -> Self {
        BenchSpec {
            cells: [4, 8].iter().map(|&k| BenchCell { k, n_users, p: n_r / k }).collect(),
            n_antennas: 16,
            timed_iters: 30,
            warmup_iters: 10,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub cell: BenchCell,
    /// Median seconds per GAM iteration.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Least-squares slope of `log t` against `log(K N_u)`.
    pub fitted_exponent: f64,
}

fn gaussian_matrix(rng: &mut SimRng, r: usize, c: usize) -> CMatrix {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    CMatrix::from_fn(r, c, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C64::new(re * s, im * s)
    })
}

/// A TO2 problem of the given size on synthetic Rayleigh channels.
pub fn synthetic_workspace(cell: BenchCell, n_antennas: usize, seed: u64) -> Result<To2Workspace, ExperimentError> {
    let mut rng = rng_for(seed, &[cell.k as u64, cell.n_users as u64, cell.p as u64]);
    let BenchCell { k, n_users: nu, p } = cell;
    let vectors = (0..k)
        .map(|_| {
            (0..nu)
                .map(|_| CVector::from_fn(p, |_, _| cis(rng.random::<f64>() * std::f64::consts::TAU)))
                .collect()
        })
        .collect();
    let basis = TileBasis::from_vectors(vectors).map_err(|e| ExperimentError::Spec(e.to_string()))?;
    let cascaded: Vec<CMatrix> = (0..nu).map(|_| gaussian_matrix(&mut rng, k * nu, n_antennas)).collect();
    let direct: Vec<CVector> = (0..nu)
        .map(|_| gaussian_matrix(&mut rng, n_antennas, 1).column(0).into_owned())
        .collect();
    let noise = vec![1.0; nu];
    let targets = vec![1.0; nu];
    let (pre, _) = solve_po(&direct, &targets, &noise, &PoSettings::default())
        .map_err(|e| ExperimentError::Spec(format!("bench cell {cell:?}: {e}")))?;
    let g = optimal_receivers(&direct, &pre.v, &noise);
    Ok(To2Workspace::new(
        &cascaded,
        &direct,
        &pre.v,
        &g,
        &noise,
        mse_targets(&targets),
        build_gc_quadratics(&basis),
        p as f64,
        1e-10,
    ))
}

/// Median time of one GAM iteration's work (factor, solve, both gradient
/// blocks and curvatures) for each cell.
pub fn run_complexity_bench(spec: &BenchSpec) -> Result<BenchReport, ExperimentError> {
    if spec.timed_iters < MIN_TIMED_ITERS {
        return Err(ExperimentError::Spec(format!(
            "bench needs at least {MIN_TIMED_ITERS} timed iterations, got {}",
            spec.timed_iters
        )));
    }
    if spec.cells.iter().any(|c| c.k == 0 || c.n_users == 0 || c.p == 0) {
        return Err(ExperimentError::Spec("bench cells need K, N_u, P ≥ 1".into()));
    }
    let workspaces = spec
        .cells
        .iter()
        .map(|&cell| synthetic_workspace(cell, spec.n_antennas, spec.seed))
        .collect::<Result<Vec<_>, _>>()?;
    let mut times = vec![Vec::with_capacity(spec.timed_iters); spec.cells.len()];
    // cells take turns so that slow drifts in machine load hit all of them alike
    for it in 0..spec.warmup_iters + spec.timed_iters {
        for ((cell, ws), samples) in spec.cells.iter().zip(&workspaces).zip(&mut times) {
            // walk the multipliers so no call repeats the previous one
            let s = 1.0 + it as f64 * 0.01;
            let lambda = vec![0.1 * s; cell.n_users];
            let mu = vec![1e-3 * s; cell.k];
            let start = Instant::now();
            let eval = evaluate_dual(&lambda, &mu, ws).map_err(|e| ExperimentError::Spec(format!("bench cell {cell:?}: {e}")))?;
            let elapsed = start.elapsed().as_secs_f64();
            std::hint::black_box(&eval);
            if it >= spec.warmup_iters {
                samples.push(elapsed);
            }
        }
    }
    let mut rows = Vec::new();
    for (&cell, mut samples) in spec.cells.iter().zip(times) {
        samples.sort_by(f64::total_cmp);
        let n = samples.len();
        let median = if n % 2 == 1 {
            samples[n / 2]
        } else {
            0.5 * (samples[n / 2 - 1] + samples[n / 2])
        };
        log::info!(
            "experiments: bench K={} N_u={} P={}: {:.3e} s",
            cell.k,
            cell.n_users,
            cell.p,
            median
        );
        rows.push(BenchRow { cell, seconds: median });
    }
    let fitted_exponent = fit_exponent(&rows);
    Ok(BenchReport { rows, fitted_exponent })
}

fn fit_exponent(rows: &[BenchRow]) -> f64 {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (((r.cell.k * r.cell.n_users) as f64).ln(), r.seconds.ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx > 0.0 {
        sxy / sxx
    } else {
        f64::NAN
    }
}

pub fn format_bench(report: &BenchReport) -> String {
    let mut out = String::from("K\tN_u\tP\tseconds_per_iter\n");
    for r in &report.rows {
        let _ = writeln!(out, "{}\t{}\t{}\t{:.6e}", r.cell.k, r.cell.n_users, r.cell.p, r.seconds);
    }
    let _ = writeln!(out, "# fitted exponent in K*N_u: {:.3}", report.fitted_exponent);
    out
}
