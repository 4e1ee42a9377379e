//! SINR-constrained downlink power minimization for fixed channels.
//!
//! Solved through uplink-downlink duality: the virtual uplink powers are the
//! fixed point of a standard interference function, the MMSE uplink
//! receivers give the downlink beam directions, and the downlink powers
//! follow from a linear system that makes every SINR constraint tight.

use nalgebra::DVector;

use crate::error::SolverError;
use crate::linalg::{dot, hermitian_inverse, norm_sqr, row_quad, CMatrix, CVector, C64};
use crate::scenario::SolverSettings;

#[derive(Debug, Clone, PartialEq)]
pub struct Precoder {
    /// `M × N_u`, column `i` is `v_i`.
    pub v: CMatrix,
    /// Watts.
    pub total_power: f64,
}

impl Precoder {
    pub fn from_columns(v: CMatrix) -> Self {
        let total_power = v.iter().map(|z| z.norm_sqr()).sum();
        Precoder { v, total_power }
    }

    pub fn column(&self, i: usize) -> CVector {
        self.v.column(i).into_owned()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoDiagnostics {
    pub fixed_point_iters: usize,
    /// `|SINR_i / Σ_i - 1|`.
    pub sinr_residuals: Vec<f64>,
    pub feasible: bool,
}

impl PoDiagnostics {
    pub fn max_residual(&self) -> f64 {
        self.sinr_residuals.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoSettings {
    /// Stop when the largest relative change of an uplink power is below this.
    pub tolerance: f64,
    pub max_iters: usize,
    /// Uplink powers beyond this mean the targets cannot be met.
    pub power_cap: f64,
}

impl Default for PoSettings {
    fn default() -> Self {
        PoSettings {
            tolerance: 1e-10,
            max_iters: 10_000,
            power_cap: 1e12,
        }
    }
}

impl From<&SolverSettings> for PoSettings {
    fn from(s: &SolverSettings) -> Self {
        PoSettings {
            tolerance: s.po_tolerance,
            ..PoSettings::default()
        }
    }
}

/// `|h_i v_i|² / (Σ_{j≠i} |h_i v_j|² + σ_i²)` for every user.
pub fn compute_sinr(v: &CMatrix, channels: &[CVector], noise: &[f64]) -> Vec<f64> {
    channels
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let gains: Vec<f64> = (0..v.ncols()).map(|j| dot(h, &v.column(j).into_owned()).norm_sqr()).collect();
            let interference: f64 = gains.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, g)| g).sum();
            gains[i] / (interference + noise[i])
        })
        .collect()
}

fn numerical(reason: impl Into<String>) -> SolverError {
    SolverError::NumericalFailure {
        module: "precoder_po",
        reason: reason.into(),
    }
}

/// `I + Σ_j q_j g_jᴴ g_j`.
fn uplink_covariance(g: &[CVector], q: &[f64]) -> CMatrix {
    let m = g[0].len();
    let mut x = CMatrix::identity(m, m);
    for (gj, &qj) in g.iter().zip(q) {
        let gc = gj.map(|z| z.conj());
        x.ger(C64::new(qj, 0.0), &gc, gj, C64::new(1.0, 0.0));
    }
    x
}

/// Minimum-power precoder meeting `SINR_i ≥ targets[i]` with equality.
pub fn solve_po(
    channels: &[CVector],
    targets: &[f64],
    noise: &[f64],
    settings: &PoSettings,
) -> Result<(Precoder, PoDiagnostics), SolverError> {
    let nu = channels.len();
    if nu == 0 || targets.len() != nu || noise.len() != nu {
        return Err(numerical(format!(
            "{} channels, {} targets, {} noise powers",
            nu,
            targets.len(),
            noise.len()
        )));
    }
    if targets.iter().any(|&t| !(t > 0.0)) || noise.iter().any(|&s| !(s > 0.0)) {
        return Err(numerical("targets and noise powers must be positive"));
    }
    let g: Vec<CVector> = channels.iter().zip(noise).map(|(h, &s)| h.unscale(s.sqrt())).collect();
    if g.iter().any(|gi| !(norm_sqr(gi) > 0.0) || !norm_sqr(gi).is_finite()) {
        return Err(numerical("zero or non-finite channel"));
    }

    let mut q: Vec<f64> = g.iter().zip(targets).map(|(gi, &t)| t / norm_sqr(gi)).collect();
    let mut iters = 0;
    let xinv = loop {
        iters += 1;
        let xinv = hermitian_inverse(&uplink_covariance(&g, &q)).ok_or_else(|| numerical("singular uplink covariance"))?;
        let next: Vec<f64> = g
            .iter()
            .zip(targets)
            .map(|(gi, &t)| t / ((1.0 + t) * row_quad(gi, &xinv)))
            .collect();
        if next.iter().any(|&x| !x.is_finite() || x > settings.power_cap) {
            return Err(SolverError::Infeasible(format!(
                "uplink power exceeded {:e} after {iters} iterations",
                settings.power_cap
            )));
        }
        let change = next
            .iter()
            .zip(&q)
            .map(|(a, b)| (a - b).abs() / b.abs().max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max);
        q = next;
        if change <= settings.tolerance {
            break hermitian_inverse(&uplink_covariance(&g, &q)).ok_or_else(|| numerical("singular uplink covariance"))?;
        }
        if iters >= settings.max_iters {
            return Err(SolverError::Infeasible(format!(
                "fixed point not reached in {iters} iterations"
            )));
        }
    };

    let u: Vec<CVector> = g
        .iter()
        .map(|gi| {
            let d = &xinv * gi.map(|z| z.conj());
            d.unscale(d.norm())
        })
        .collect();

    let d = CMatrix::from_fn(nu, nu, |i, j| {
        let c = dot(&g[i], &u[j]).norm_sqr();
        C64::new(if i == j { c / targets[i] } else { -c }, 0.0)
    });
    let p = d
        .lu()
        .solve(&CVector::from_element(nu, C64::new(1.0, 0.0)))
        .ok_or_else(|| numerical("singular downlink power system"))?;
    let p: Vec<f64> = p.iter().map(|z| z.re).collect();
    if let Some(bad) = p.iter().position(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(SolverError::Infeasible(format!("downlink power p_{bad} = {:e}", p[bad])));
    }

    let v = CMatrix::from_fn(u[0].len(), nu, |r, c| u[c][r] * p[c].sqrt());
    let precoder = Precoder::from_columns(v);
    let sinr = compute_sinr(&precoder.v, channels, noise);
    let sinr_residuals: Vec<f64> = sinr.iter().zip(targets).map(|(s, t)| (s / t - 1.0).abs()).collect();
    Ok((
        precoder,
        PoDiagnostics {
            fixed_point_iters: iters,
            sinr_residuals,
            feasible: true,
        },
    ))
}

/// Whether each user's SINR sits on its target within relative `tol`.
pub fn check_binding(precoder: &Precoder, channels: &[CVector], targets: &[f64], noise: &[f64], tol: f64) -> Vec<bool> {
    compute_sinr(&precoder.v, channels, noise)
        .iter()
        .zip(targets)
        .map(|(s, t)| ((s - t) / t).abs() <= tol)
        .collect()
}

/// Convenience for callers holding per-user powers as a vector.
pub fn column_powers(v: &CMatrix) -> DVector<f64> {
    DVector::from_fn(v.ncols(), |j, _| v.column(j).norm_squared())
}
