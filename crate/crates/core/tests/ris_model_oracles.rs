// the oracles are deliberately written as plain index loops
#![allow(clippy::needless_range_loop)]

mod common;

use common::{cvec, random_channels, rng, unit_vec};
use proptest::prelude::*;
use rand::Rng;
use ristile::linalg::{cis, CVector, C64};
use ristile::ris_model::{
    build_gc_quadratics, decode, design_basis, effective_channel, effective_channel_projected, encode, project_unit_circle,
    stack_cascaded, TileBasis, TileState,
};

fn focus_gain(t: &CVector, b: &CVector, los: &CVector) -> f64 {
    (0..t.len()).map(|p| t[p] * b[p] * los[p]).sum::<C64>().norm_sqr()
}

#[test]
fn basis_beats_random_search() {
    let mut r = rng(11);
    let ch = random_channels(&mut r, 2, 2, 3, 4);
    let basis = design_basis(&ch);
    for k in 0..3 {
        for m in 0..2 {
            let t = &ch.tile_to_ue[m][k];
            let los = &ch.los_to_bs_center[k];
            let designed = focus_gain(t, basis.get(k, m), los);
            let coherent: f64 = t.iter().map(|z| z.norm()).sum();
            assert!((designed - coherent * coherent).abs() < 1e-12 * designed);
            let best = (0..10_000)
                .map(|_| focus_gain(t, &unit_vec(&mut r, 4), los))
                .fold(0.0, f64::max);
            assert!(best <= designed * (1.0 + 1e-12));
        }
    }
}

#[test]
fn single_phase_perturbation_never_helps() {
    let mut r = rng(12);
    let ch = random_channels(&mut r, 3, 2, 2, 6);
    let basis = design_basis(&ch);
    for k in 0..2 {
        for m in 0..3 {
            let b = basis.get(k, m);
            let t = &ch.tile_to_ue[m][k];
            let los = &ch.los_to_bs_center[k];
            let base = focus_gain(t, b, los);
            for p in 0..6 {
                let mut pert = b.clone();
                pert[p] *= cis(r.random_range(-3.0..3.0));
                assert!(focus_gain(t, &pert, los) <= base * (1.0 + 1e-12));
            }
        }
    }
}

#[test]
fn stacked_rows_match_naive_loop() {
    let mut r = rng(13);
    let (nu, m_ant, k, p) = (3, 4, 2, 5);
    let ch = random_channels(&mut r, nu, m_ant, k, p);
    let basis = design_basis(&ch);
    let stacked = stack_cascaded(&ch, &basis);
    for i in 0..nu {
        for kk in 0..k {
            for m in 0..nu {
                let row = encode(kk, m, nu);
                for a in 0..m_ant {
                    let mut expect = C64::new(0.0, 0.0);
                    for q in 0..p {
                        expect += ch.tile_to_ue[i][kk][q] * basis.get(kk, m)[q] * ch.bs_to_tile[kk][(q, a)];
                    }
                    assert!((stacked[i][(row, a)] - expect).norm() < 1e-14 * (1.0 + expect.norm()));
                }
            }
        }
    }
}

#[test]
fn effective_channel_matches_triple_sum() {
    let mut r = rng(14);
    let (nu, m_ant, k, p) = (2, 3, 3, 4);
    let ch = random_channels(&mut r, nu, m_ant, k, p);
    let basis = design_basis(&ch);
    let stacked = stack_cascaded(&ch, &basis);
    let alpha = cvec(&mut r, nu * k);
    for i in 0..nu {
        let h = effective_channel(i, &alpha, &ch, &stacked);
        for a in 0..m_ant {
            let mut expect = ch.direct[i][a];
            for kk in 0..k {
                for m in 0..nu {
                    for q in 0..p {
                        expect +=
                            alpha[encode(kk, m, nu)] * ch.tile_to_ue[i][kk][q] * basis.get(kk, m)[q] * ch.bs_to_tile[kk][(q, a)];
                    }
                }
            }
            assert!((h[a] - expect).norm() < 1e-13 * (1.0 + expect.norm()));
        }
    }
}

#[test]
fn projected_channel_matches_element_loop() {
    let mut r = rng(15);
    let (nu, m_ant, k, p) = (2, 2, 2, 3);
    let ch = random_channels(&mut r, nu, m_ant, k, p);
    let basis = design_basis(&ch);
    let state = project_unit_circle(&TileState::new(cvec(&mut r, nu * k)), &basis);
    for b in &state.projected_b {
        assert!(b.iter().all(|z| z.norm_sqr() == 1.0 || (z.norm_sqr() - 1.0).abs() < 1e-15));
    }
    for i in 0..nu {
        let h = effective_channel_projected(i, &state, &ch).unwrap();
        for a in 0..m_ant {
            let mut expect = ch.direct[i][a];
            for kk in 0..k {
                for q in 0..p {
                    expect += ch.tile_to_ue[i][kk][q] * state.projected_b[kk][q] * ch.bs_to_tile[kk][(q, a)];
                }
            }
            assert!((h[a] - expect).norm() < 1e-13 * (1.0 + expect.norm()));
        }
    }
}

#[test]
fn unit_modulus_composite_projects_to_itself() {
    let mut r = rng(16);
    let ch = random_channels(&mut r, 2, 2, 2, 3);
    let basis = design_basis(&ch);
    let stacked = stack_cascaded(&ch, &basis);
    // one-hot coefficients select a unit-modulus basis vector
    let mut alpha = CVector::zeros(4);
    alpha[encode(0, 1, 2)] = C64::new(1.0, 0.0);
    alpha[encode(1, 0, 2)] = C64::new(1.0, 0.0);
    let state = project_unit_circle(&TileState::new(alpha.clone()), &basis);
    for i in 0..2 {
        let a = effective_channel_projected(i, &state, &ch).unwrap();
        let b = effective_channel(i, &alpha, &ch, &stacked);
        assert!((a - b).norm() < 1e-13);
    }
    let twice = project_unit_circle(&state, &basis);
    assert_eq!(twice.projected_b, state.projected_b);
}

fn arb_basis() -> impl Strategy<Value = (TileBasis, CVector)> {
    (1usize..4, 1usize..4, 1usize..6, any::<u64>()).prop_map(|(k, nu, p, seed)| {
        let mut r = rng(seed);
        let vectors = (0..k).map(|_| (0..nu).map(|_| unit_vec(&mut r, p)).collect()).collect();
        let alpha = cvec(&mut r, k * nu);
        (TileBasis::from_vectors(vectors).unwrap(), alpha)
    })
}

proptest! {
    #[test]
    fn gc_form_equals_composite_norm((basis, alpha) in arb_basis()) {
        let gc = build_gc_quadratics(&basis);
        for k in 0..basis.n_tiles() {
            let direct = basis.composite(&alpha, k).norm_squared();
            prop_assert!((gc.value(k, &alpha) - direct).abs() <= 1e-12 * (1.0 + direct));
        }
    }

    #[test]
    fn ordering_is_a_bijection(k in 0usize..50, nu in 1usize..20) {
        let m = k % nu;
        prop_assert_eq!(decode(encode(k, m, nu), nu), (k, m));
    }

    #[test]
    fn projection_lands_on_unit_circle((basis, alpha) in arb_basis()) {
        let s = project_unit_circle(&TileState::new(alpha), &basis);
        for b in &s.projected_b {
            for z in b.iter() {
                prop_assert!((z.norm_sqr() - 1.0).abs() < 1e-14);
            }
        }
    }
}
