use ristile::ao::{run_ao, run_ao_from, AoOptions, TileModel};
use ristile::channel::realize_instance;
use ristile::experiments::{instance_initial_alpha, run_instance_on};
use ristile::rng::rng_for;
use ristile::{builtin_preset, Scenario};

/// FF geometry shrunk to 8 elements per surface, one tile each.
fn ff_small() -> Scenario {
    builtin_preset("FF")
        .unwrap()
        .with_surface_size(2, 4)
        .unwrap()
        .with_total_tiles(6)
        .unwrap()
}

#[test]
fn power_never_increases_without_projection() {
    let sc = ff_small();
    let mut options = AoOptions::from_scenario(&sc);
    options.projection = false;
    options.epsilon = 0.0;
    for inst in 0..20 {
        let ch = realize_instance(&sc, 3, inst).unwrap();
        let res = run_ao(&sc, &ch, &options, &mut rng_for(3, &[inst])).unwrap();
        let p = res.trace.powers_w();
        assert!(p.len() >= 2 && p.len() <= sc.solver().max_ao_iters);
        for w in p.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "instance {inst}: {w:?}");
        }
        for r in &res.trace.records[..p.len() - 1] {
            assert!(
                r.post_to2_sinr_ratio >= 1.0 - 1e-6,
                "instance {inst}: ratio {}",
                r.post_to2_sinr_ratio
            );
        }
    }
}

#[test]
fn no_tiles_is_a_single_po_solve() {
    let sc = builtin_preset("FF").unwrap().with_total_tiles(0).unwrap();
    let ch = realize_instance(&sc, 5, 0).unwrap();
    let res = run_ao(&sc, &ch, &AoOptions::from_scenario(&sc), &mut rng_for(5, &[0])).unwrap();
    assert_eq!(res.trace.records.len(), 1);
    assert!(res.converged);
}

#[test]
fn tiling_does_not_change_the_direct_links() {
    let base = builtin_preset("FF").unwrap();
    let a = realize_instance(&base.with_total_tiles(6).unwrap(), 9, 4).unwrap();
    let b = realize_instance(&base.with_total_tiles(24).unwrap(), 9, 4).unwrap();
    assert_eq!(a.direct, b.direct);
    assert_eq!(a.ue_positions, b.ue_positions);
}

#[test]
fn reruns_are_bit_identical() {
    let sc = ff_small();
    let ch = realize_instance(&sc, 8, 1).unwrap();
    let opts = AoOptions::from_scenario(&sc);
    let a = run_instance_on(&sc, &ch, 8, 1, &opts).unwrap();
    let b = run_instance_on(&sc, &ch, 8, 1, &opts).unwrap();
    // NaN fields defeat PartialEq; Debug prints round-trippable floats instead
    assert_eq!(format!("{:?}", a.trace), format!("{:?}", b.trace));
    assert_eq!(a.state, b.state);
}

#[test]
fn projection_is_applied_after_the_first_iteration() {
    let sc = ff_small();
    let ch = realize_instance(&sc, 2, 0).unwrap();
    let model = TileModel::new(&ch);
    let alpha = instance_initial_alpha(&sc, &model, 2, 0);
    let mut opts = AoOptions::from_scenario(&sc);
    opts.max_iters = 3;
    let res = run_ao_from(&sc, &ch, &model, alpha, &opts).unwrap();
    let recs = &res.trace.records;
    assert!(!recs[0].projected && recs[0].unprojected_power_w.is_none());
    for r in &recs[1..] {
        assert!(r.projected);
        assert!(r.unprojected_power_w.is_some());
    }
    for b in &res.state.projected_b {
        assert!(b.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
    }
}

#[test]
fn infeasible_targets_surface_as_po_errors() {
    // eight users with a 30 dB target on sixteen antennas and no surfaces
    let sc = builtin_preset("FF")
        .unwrap()
        .with_total_tiles(0)
        .unwrap()
        .with_users(20)
        .unwrap()
        .with_uniform_target_db(30.0)
        .unwrap();
    let ch = realize_instance(&sc, 1, 0).unwrap();
    let err = run_ao(&sc, &ch, &AoOptions::from_scenario(&sc), &mut rng_for(1, &[0])).unwrap_err();
    assert!(err.to_string().contains("PO"), "{err}");
}
