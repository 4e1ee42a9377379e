//! Tile bookkeeping: basis design, cascaded-channel stacking, the per-tile
//! GC quadratic forms and the projection back onto unit-modulus elements.
//!
//! Coefficients and stacked rows share one ordering: row `r = k·N_u + m`
//! belongs to tile `k` and basis vector `m` (both zero-based).

use crate::channel::ChannelSet;
use crate::error::ModelError;
use crate::linalg::{cis, row_times, CMatrix, CVector, C64, ZERO};

/// Coefficient vector `α`, length `N_u·K`.
pub type TileCoefficients = CVector;

#[inline]
pub fn encode(k: usize, m: usize, n_users: usize) -> usize {
    k * n_users + m
}

#[inline]
pub fn decode(r: usize, n_users: usize) -> (usize, usize) {
    (r / n_users, r % n_users)
}

/// Basis vectors `b_k^(m)`, indexed `[k][m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TileBasis {
    vectors: Vec<Vec<CVector>>,
}

impl TileBasis {
    pub fn from_vectors(vectors: Vec<Vec<CVector>>) -> Result<Self, ModelError> {
        let nu = vectors.first().map_or(0, |v| v.len());
        let p = vectors.first().and_then(|v| v.first()).map_or(0, |b| b.len());
        if vectors.iter().any(|v| v.len() != nu || v.iter().any(|b| b.len() != p)) {
            return Err(ModelError::Dimension("ragged basis".into()));
        }
        Ok(TileBasis { vectors })
    }

    pub fn n_tiles(&self) -> usize {
        self.vectors.len()
    }

    pub fn n_users(&self) -> usize {
        self.vectors.first().map_or(0, |v| v.len())
    }

    pub fn elements_per_tile(&self) -> usize {
        self.vectors.first().and_then(|v| v.first()).map_or(0, |b| b.len())
    }

    pub fn dim(&self) -> usize {
        self.n_tiles() * self.n_users()
    }

    pub fn get(&self, k: usize, m: usize) -> &CVector {
        &self.vectors[k][m]
    }

    /// Element responses of tile `k` for coefficients `α`: `Σ_m α_{m,k} b_k^(m)`.
    pub fn composite(&self, alpha: &CVector, k: usize) -> CVector {
        let nu = self.n_users();
        let mut out = CVector::from_element(self.elements_per_tile(), ZERO);
        for m in 0..nu {
            out.axpy(alpha[encode(k, m, nu)], &self.vectors[k][m], C64::new(1.0, 0.0));
        }
        out
    }
}

/// Phase-conjugate basis: `b^(m)_{k,p} = exp(-j(∠t_{m,k}(p) + ∠K_{k,p}))`.
pub fn design_basis(channels: &ChannelSet) -> TileBasis {
    let nu = channels.n_users();
    let vectors = (0..channels.n_tiles())
        .map(|k| {
            let kk = &channels.los_to_bs_center[k];
            (0..nu)
                .map(|m| {
                    let t = &channels.tile_to_ue[m][k];
                    CVector::from_fn(t.len(), |p, _| cis(-(t[p].arg() + kk[p].arg())))
                })
                .collect()
        })
        .collect();
    TileBasis { vectors }
}

/// `H̃_i` for every user: `(N_u·K) × M`, row `(k, m)` = `t_{i,k} diag(b_k^(m)) S_k`.
pub fn stack_cascaded(channels: &ChannelSet, basis: &TileBasis) -> Vec<CMatrix> {
    let nu = basis.n_users();
    let n = basis.dim();
    let m_ant = channels.n_antennas();
    (0..channels.n_users())
        .map(|i| {
            let mut h = CMatrix::zeros(n, m_ant);
            for k in 0..basis.n_tiles() {
                let s = &channels.bs_to_tile[k];
                let t = &channels.tile_to_ue[i][k];
                for m in 0..nu {
                    let w = t.component_mul(basis.get(k, m));
                    let row = s.tr_mul(&w);
                    h.row_mut(encode(k, m, nu)).copy_from(&row.transpose());
                }
            }
            h
        })
        .collect()
}

/// Per-tile GC forms. Only the `k`-th diagonal `N_u × N_u` block of `Q̃_k`
/// is nonzero, so just that block is kept.
#[derive(Debug, Clone, PartialEq)]
pub struct GcQuadratics {
    blocks: Vec<CMatrix>,
}

pub fn build_gc_quadratics(basis: &TileBasis) -> GcQuadratics {
    let nu = basis.n_users();
    // entry (a, b) = Σ_p b^(a)_p · conj(b^(b)_p)
    let blocks = (0..basis.n_tiles())
        .map(|k| CMatrix::from_fn(nu, nu, |a, b| basis.get(k, b).dotc(basis.get(k, a))))
        .collect();
    GcQuadratics { blocks }
}

impl GcQuadratics {
    pub fn n_tiles(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, k: usize) -> &CMatrix {
        &self.blocks[k]
    }

    /// Dense `Q̃_k`.
    pub fn full(&self, k: usize) -> CMatrix {
        let nu = self.blocks[k].nrows();
        let n = nu * self.blocks.len();
        let mut q = CMatrix::zeros(n, n);
        q.view_mut((k * nu, k * nu), (nu, nu)).copy_from(&self.blocks[k]);
        q
    }

    /// `α Q̃_k αᴴ`.
    pub fn value(&self, k: usize, alpha: &CVector) -> f64 {
        let b = &self.blocks[k];
        let nu = b.nrows();
        let a = alpha.rows(k * nu, nu);
        let mut acc = ZERO;
        for r in 0..nu {
            for s in 0..nu {
                acc += a[r] * b[(r, s)] * a[s].conj();
            }
        }
        acc.re
    }

    /// Entries of `α Q̃_k` (nonzero only on tile `k`'s slots).
    pub fn row_product(&self, k: usize, alpha: &CVector) -> CVector {
        let b = &self.blocks[k];
        let nu = b.nrows();
        let mut out = CVector::zeros(alpha.len());
        let seg = b.tr_mul(&alpha.rows(k * nu, nu).into_owned());
        out.rows_mut(k * nu, nu).copy_from(&seg);
        out
    }
}

/// `h_i(α) = h̄_i + α H̃_i`.
pub fn effective_channel(i: usize, alpha: &CVector, channels: &ChannelSet, cascaded: &[CMatrix]) -> CVector {
    if alpha.is_empty() {
        return channels.direct[i].clone();
    }
    &channels.direct[i] + row_times(alpha, &cascaded[i])
}

/// Coefficients plus the unit-modulus element responses obtained by projection.
#[derive(Debug, Clone, PartialEq)]
pub struct TileState {
    pub coefficients: TileCoefficients,
    pub projected_b: Vec<CVector>,
    pub use_projected: bool,
    /// Composite entries that were exactly zero and got phase 0.
    pub zero_phase_count: usize,
}

impl TileState {
    pub fn new(coefficients: TileCoefficients) -> Self {
        TileState {
            coefficients,
            projected_b: Vec::new(),
            use_projected: false,
            zero_phase_count: 0,
        }
    }

    /// Effective channels of all users under whichever configuration is active.
    pub fn effective_channels(&self, channels: &ChannelSet, cascaded: &[CMatrix]) -> Result<Vec<CVector>, ModelError> {
        (0..channels.n_users())
            .map(|i| {
                if self.use_projected {
                    effective_channel_projected(i, self, channels)
                } else {
                    Ok(effective_channel(i, &self.coefficients, channels, cascaded))
                }
            })
            .collect()
    }
}

/// Projects every tile's composite response onto the unit circle. The
/// coefficients are carried over untouched.
pub fn project_unit_circle(state: &TileState, basis: &TileBasis) -> TileState {
    let mut zeros = 0;
    let projected_b = (0..basis.n_tiles())
        .map(|k| {
            basis.composite(&state.coefficients, k).map(|z| {
                if z == ZERO {
                    zeros += 1;
                    C64::new(1.0, 0.0)
                } else {
                    cis(z.arg())
                }
            })
        })
        .collect();
    if zeros > 0 {
        log::warn!("ris_model: {zeros} zero composite entries projected to phase 0");
    }
    TileState {
        coefficients: state.coefficients.clone(),
        projected_b,
        use_projected: true,
        zero_phase_count: state.zero_phase_count + zeros,
    }
}

/// `h̄_i + Σ_k t_{i,k} diag(b_k) S_k` with the projected responses.
pub fn effective_channel_projected(i: usize, state: &TileState, channels: &ChannelSet) -> Result<CVector, ModelError> {
    if !state.use_projected {
        return Err(ModelError::NotProjected);
    }
    if state.projected_b.len() != channels.n_tiles() {
        return Err(ModelError::Dimension(format!(
            "{} projected tiles for {} channel tiles",
            state.projected_b.len(),
            channels.n_tiles()
        )));
    }
    let mut h = channels.direct[i].clone();
    for (k, b) in state.projected_b.iter().enumerate() {
        let w = channels.tile_to_ue[i][k].component_mul(b);
        h += channels.bs_to_tile[k].tr_mul(&w);
    }
    Ok(h)
}
