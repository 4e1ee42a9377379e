//! Alternating optimization of precoder and tile coefficients.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::channel::ChannelSet;
use crate::error::AoError;
use crate::linalg::{watts_to_dbm, CMatrix, CVector, C64};
use crate::precoder::{compute_sinr, solve_po, PoSettings, Precoder};
use crate::ris_model::{
    build_gc_quadratics, design_basis, project_unit_circle, stack_cascaded, GcQuadratics, TileBasis, TileState,
};
use crate::scenario::Scenario;
use crate::to2::{achieved_mse, mse_targets, optimal_receivers, solve_to2, DualState, GamRecord, GamSettings, To2Workspace};

/// Random coefficients with every tile exactly on its GC bound.
pub fn initial_alpha<R: Rng + ?Sized>(rng: &mut R, gc: &GcQuadratics, n_users: usize, tile_size: f64) -> CVector {
    let n = gc.n_tiles() * n_users;
    let mut alpha = CVector::from_fn(n, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C64::new(re, im)
    });
    for k in 0..gc.n_tiles() {
        let q = gc.value(k, &alpha);
        if q > 0.0 {
            let s = (tile_size / q).sqrt();
            for m in 0..n_users {
                alpha[k * n_users + m] *= s;
            }
        }
    }
    alpha
}

#[derive(Debug, Clone, PartialEq)]
pub struct AoOptions {
    pub projection: bool,
    pub max_iters: usize,
    pub epsilon: f64,
    pub po: PoSettings,
    pub gam: GamSettings,
    /// Relative SINR residual above which the PO solution is treated as
    /// non-binding and the measured MSEs become the TO2 caps.
    pub binding_tolerance: f64,
    pub keep_gam_traces: bool,
}

impl AoOptions {
    pub fn from_scenario(scenario: &Scenario) -> Self {
        let s = scenario.solver();
        AoOptions {
            projection: true,
            max_iters: s.max_ao_iters,
            epsilon: s.ao_epsilon,
            po: PoSettings::from(s),
            gam: GamSettings::from(s),
            binding_tolerance: 1e-6,
            keep_gam_traces: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AoRecord {
    pub t: usize,
    pub total_power_w: f64,
    pub total_power_dbm: f64,
    pub per_user_sinr: Vec<f64>,
    /// Relative duality gap of the TO2 solve that followed this PO; NaN when
    /// no TO2 ran.
    pub duality_gap: f64,
    pub po_iters: usize,
    pub gam_iters: usize,
    pub gam_converged: bool,
    /// TO2 output had to be pulled back into the feasible set.
    pub to2_pulled: bool,
    /// The PO ran on projected element responses.
    pub projected: bool,
    /// PO power on the unprojected coefficients, when projection is active.
    pub unprojected_power_w: Option<f64>,
    /// `min_i SINR_i(α_{t+1}, V_t) / Σ_i`, NaN when no TO2 ran.
    pub post_to2_sinr_ratio: f64,
    /// TO2 caps came from measured MSEs instead of the SINR targets.
    pub measured_caps: bool,
    pub gam_trace: Vec<GamRecord>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AoTrace {
    pub records: Vec<AoRecord>,
}

impl AoTrace {
    pub fn powers_dbm(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.total_power_dbm).collect()
    }

    pub fn powers_w(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.total_power_w).collect()
    }

    pub fn final_power_dbm(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.total_power_dbm)
    }
}

/// Tab-separated per-iteration trace, one row per AO iteration.
pub fn write_ao_trace(trace: &AoTrace, w: &mut impl Write) -> std::io::Result<()> {
    let n = trace.records.first().map_or(0, |r| r.per_user_sinr.len());
    write!(w, "t\ttotal_power_w\ttotal_power_dbm\tduality_gap\tpo_iters\tgam_iters\tgam_converged\tpost_to2_sinr_ratio\tmeasured_caps\tunprojected_power_dbm")?;
    for i in 0..n {
        write!(w, "\tsinr_db_{i}")?;
    }
    writeln!(w)?;
    for r in &trace.records {
        write!(
            w,
            "{}\t{:.9e}\t{:.6}\t{:.3e}\t{}\t{}\t{}\t{:.9}\t{}\t{:.6}",
            r.t,
            r.total_power_w,
            r.total_power_dbm,
            r.duality_gap,
            r.po_iters,
            r.gam_iters,
            u8::from(r.gam_converged),
            r.post_to2_sinr_ratio,
            u8::from(r.measured_caps),
            r.unprojected_power_w.map_or(f64::NAN, watts_to_dbm)
        )?;
        for s in &r.per_user_sinr {
            write!(w, "\t{:.6}", 10.0 * s.log10())?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct AoResult {
    pub precoder: Precoder,
    pub state: TileState,
    pub trace: AoTrace,
    pub converged: bool,
}

/// Channel-derived data that stays fixed across AO iterations.
#[derive(Debug, Clone)]
pub struct TileModel {
    pub basis: TileBasis,
    pub cascaded: Vec<CMatrix>,
    pub gc: GcQuadratics,
}

impl TileModel {
    pub fn new(channels: &ChannelSet) -> Self {
        let basis = design_basis(channels);
        let cascaded = stack_cascaded(channels, &basis);
        let gc = build_gc_quadratics(&basis);
        TileModel { basis, cascaded, gc }
    }
}

fn column_change(v: &CMatrix, prev: &CMatrix) -> f64 {
    (0..v.ncols())
        .map(|i| (v.column(i) - prev.column(i)).norm() / prev.column(i).norm())
        .sum::<f64>()
        .abs()
}

/// Runs the alternating loop from `initial` coefficients.
pub fn run_ao_from(
    scenario: &Scenario,
    channels: &ChannelSet,
    model: &TileModel,
    initial: CVector,
    options: &AoOptions,
) -> Result<AoResult, AoError> {
    let targets = scenario.sinr_targets();
    let noise = scenario.noise_power().to_vec();
    let tile_size = scenario.tiling().elements_per_tile as f64;
    let with_ris = channels.n_tiles() > 0;
    let mut state = TileState::new(initial);
    let mut duals: Option<DualState> = None;
    let mut prev_v: Option<CMatrix> = None;
    let mut trace = AoTrace::default();
    let mut converged = false;
    let mut last_precoder = None;

    for t in 1..=options.max_iters.max(1) {
        let eff = state.effective_channels(channels, &model.cascaded)?;
        let (precoder, diag) =
            solve_po(&eff, &targets, &noise, &options.po).map_err(|source| AoError::Po { iteration: t, source })?;
        let unprojected_power_w = if state.use_projected {
            let raw = TileState::new(state.coefficients.clone()).effective_channels(channels, &model.cascaded)?;
            solve_po(&raw, &targets, &noise, &options.po).ok().map(|(p, _)| p.total_power)
        } else {
            None
        };
        let delta = prev_v.as_ref().map_or(1.0, |p| column_change(&precoder.v, p));
        let mut record = AoRecord {
            t,
            total_power_w: precoder.total_power,
            total_power_dbm: watts_to_dbm(precoder.total_power),
            per_user_sinr: compute_sinr(&precoder.v, &eff, &noise),
            duality_gap: f64::NAN,
            po_iters: diag.fixed_point_iters,
            gam_iters: 0,
            gam_converged: true,
            to2_pulled: false,
            projected: state.use_projected,
            unprojected_power_w,
            post_to2_sinr_ratio: f64::NAN,
            measured_caps: false,
            gam_trace: Vec::new(),
        };
        log::debug!("ao_driver: t={t} power={:.4} dBm delta={delta:.3e}", record.total_power_dbm);

        let stop = !with_ris || delta <= options.epsilon;
        if stop || t == options.max_iters {
            converged = stop;
            trace.records.push(record);
            last_precoder = Some(precoder);
            break;
        }

        let g = optimal_receivers(&eff, &precoder.v, &noise);
        let eps = if diag.max_residual() > options.binding_tolerance {
            record.measured_caps = true;
            achieved_mse(&precoder, &eff, &noise)
        } else {
            mse_targets(&targets)
        };
        let ws = To2Workspace::new(
            &model.cascaded,
            &channels.direct,
            &precoder.v,
            &g,
            &noise,
            eps,
            model.gc.clone(),
            tile_size,
            options.gam.ridge_factor,
        );
        let warm = state.coefficients.clone();
        let sol =
            solve_to2(&ws, Some(&warm), duals.as_ref(), &options.gam).map_err(|source| AoError::To2 { iteration: t, source })?;
        if !sol.converged {
            log::debug!(
                "ao_driver: t={t} TO2 stopped after {} iterations without converging",
                sol.iterations
            );
        }
        record.duality_gap = sol.duals.gap;
        record.gam_iters = sol.iterations;
        record.gam_converged = sol.converged;
        record.to2_pulled = sol.pulled_to_feasible;
        if options.keep_gam_traces {
            record.gam_trace = sol.trace.clone();
        }
        let next = TileState::new(sol.alpha);
        let next_eff = next.effective_channels(channels, &model.cascaded)?;
        record.post_to2_sinr_ratio = compute_sinr(&precoder.v, &next_eff, &noise)
            .iter()
            .zip(&targets)
            .map(|(s, t)| s / t)
            .fold(f64::INFINITY, f64::min);
        trace.records.push(record);

        duals = Some(sol.duals);
        state = if options.projection {
            project_unit_circle(&next, &model.basis)
        } else {
            next
        };
        prev_v = Some(precoder.v);
    }

    Ok(AoResult {
        precoder: last_precoder.expect("at least one iteration runs"),
        state,
        trace,
        converged,
    })
}

/// Runs the loop from a random GC-tight start drawn from `rng`.
pub fn run_ao<R: Rng + ?Sized>(
    scenario: &Scenario,
    channels: &ChannelSet,
    options: &AoOptions,
    rng: &mut R,
) -> Result<AoResult, AoError> {
    let model = TileModel::new(channels);
    let tile_size = scenario.tiling().elements_per_tile as f64;
    let alpha = initial_alpha(rng, &model.gc, channels.n_users(), tile_size);
    run_ao_from(scenario, channels, &model, alpha, options)
}
