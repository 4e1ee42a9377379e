#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ristile::ao::{initial_alpha, TileModel};
use ristile::channel::ChannelSet;
use ristile::linalg::{cis, CMatrix, CVector, C64};
use ristile::ris_model::effective_channel;
use ristile::ris_model::{build_gc_quadratics, TileBasis};
use ristile::to2::{optimal_receivers, ReceiverGains, To2Workspace};

pub type TestRng = ChaCha8Rng;

pub fn rng(seed: u64) -> TestRng {
    TestRng::seed_from_u64(seed)
}

pub fn cn(rng: &mut TestRng) -> C64 {
    // Box-Muller keeps the tests independent of rand_distr
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    let r = (-u1.ln()).sqrt();
    C64::new(r * (std::f64::consts::TAU * u2).cos(), r * (std::f64::consts::TAU * u2).sin())
}

pub fn cvec(rng: &mut TestRng, n: usize) -> CVector {
    CVector::from_fn(n, |_, _| cn(rng))
}

pub fn cmat(rng: &mut TestRng, r: usize, c: usize) -> CMatrix {
    CMatrix::from_fn(r, c, |_, _| cn(rng))
}

pub fn unit_vec(rng: &mut TestRng, n: usize) -> CVector {
    CVector::from_fn(n, |_, _| cis(rng.random::<f64>() * std::f64::consts::TAU))
}

/// Random TO2 problem whose caps are met by a GC-tight point, returned too.
pub fn random_problem(r: &mut TestRng, m: usize, nu: usize, k: usize, p: usize, slack: f64) -> (To2Workspace, CVector) {
    let ch = random_channels(r, nu, m, k, p);
    let model = TileModel::new(&ch);
    let alpha0 = initial_alpha(r, &model.gc, nu, p as f64);
    let v = cmat(r, m, nu);
    let noise: Vec<f64> = (0..nu).map(|_| r.random_range(0.1..1.0)).collect();
    let eff: Vec<CVector> = (0..nu).map(|i| effective_channel(i, &alpha0, &ch, &model.cascaded)).collect();
    let g = optimal_receivers(&eff, &v, &noise);
    let probe = To2Workspace::new(
        &model.cascaded,
        &ch.direct,
        &v,
        &g,
        &noise,
        vec![0.0; nu],
        model.gc.clone(),
        p as f64,
        1e-10,
    );
    let eps = (0..nu).map(|i| probe.mse_expanded(i, &alpha0) + slack).collect();
    let ws = To2Workspace::new(&model.cascaded, &ch.direct, &v, &g, &noise, eps, model.gc, p as f64, 1e-10);
    (ws, alpha0)
}

/// Unstructured channels: Gaussian links, unit-modulus LOS vectors.
pub fn random_channels(rng: &mut TestRng, nu: usize, m: usize, k: usize, p: usize) -> ChannelSet {
    ChannelSet {
        direct: (0..nu).map(|_| cvec(rng, m)).collect(),
        bs_to_tile: (0..k).map(|_| cmat(rng, p, m)).collect(),
        tile_to_ue: (0..nu).map(|_| (0..k).map(|_| cvec(rng, p)).collect()).collect(),
        los_to_bs_center: (0..k).map(|_| unit_vec(rng, p)).collect(),
        ue_positions: vec![[0.0, 0.0, 1.0]; nu],
        direct_models: vec![0; nu],
    }
}

pub fn fixture(name: &str) -> serde_json::Value {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name);
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap()
}

fn floats(v: &serde_json::Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

pub fn reals(v: &serde_json::Value) -> Vec<f64> {
    floats(v)
}

/// `{re, im, shape}` with row-major data.
pub fn complex_flat(v: &serde_json::Value) -> (Vec<C64>, Vec<usize>) {
    let re = floats(&v["re"]);
    let im = floats(&v["im"]);
    let shape = v["shape"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_u64().unwrap() as usize)
        .collect();
    (re.into_iter().zip(im).map(|(a, b)| C64::new(a, b)).collect(), shape)
}

pub fn complex_vec(v: &serde_json::Value) -> CVector {
    CVector::from_vec(complex_flat(v).0)
}

pub fn complex_mat(v: &serde_json::Value) -> CMatrix {
    let (data, shape) = complex_flat(v);
    CMatrix::from_row_slice(shape[0], shape[1], &data)
}

/// One instance of the conic TO2 fixture.
pub struct To2Case {
    pub ws: To2Workspace,
    pub warm: CVector,
    pub alpha: CVector,
    pub objective: f64,
}

pub fn to2_cases() -> Vec<To2Case> {
    let data = fixture("to2_oracle.json");
    data["instances"]
        .as_array()
        .unwrap()
        .iter()
        .map(|inst| {
            let basis = TileBasis::from_vectors(
                inst["basis"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .map(|row| row.as_array().unwrap().iter().map(complex_vec).collect())
                    .collect(),
            )
            .unwrap();
            let cascaded: Vec<_> = inst["cascaded"].as_array().unwrap().iter().map(complex_mat).collect();
            let direct: Vec<_> = inst["direct"].as_array().unwrap().iter().map(complex_vec).collect();
            let g = ReceiverGains {
                g: complex_vec(&inst["g"]).iter().copied().collect(),
            };
            let ws = To2Workspace::new(
                &cascaded,
                &direct,
                &complex_mat(&inst["v"]),
                &g,
                &reals(&inst["noise"]),
                reals(&inst["eps"]),
                build_gc_quadratics(&basis),
                inst["tile_size"].as_f64().unwrap(),
                1e-10,
            );
            To2Case {
                ws,
                warm: complex_vec(&inst["warm_alpha"]),
                alpha: complex_vec(&inst["alpha"]),
                objective: inst["objective"].as_f64().unwrap(),
            }
        })
        .collect()
}

/// One instance of the conic PO fixture; `power` is `None` when infeasible.
pub struct PoCase {
    pub h: Vec<CVector>,
    pub targets: Vec<f64>,
    pub noise: Vec<f64>,
    pub power: Option<f64>,
}

pub fn po_cases() -> Vec<PoCase> {
    fixture("po_oracle.json")["instances"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| {
            let re = c["h_re"].as_array().unwrap();
            let im = c["h_im"].as_array().unwrap();
            let h = re
                .iter()
                .zip(im)
                .map(|(a, b)| CVector::from_vec(reals(a).into_iter().zip(reals(b)).map(|(x, y)| C64::new(x, y)).collect()))
                .collect();
            PoCase {
                h,
                targets: reals(&c["targets"]),
                noise: reals(&c["noise"]),
                power: c["power"].as_f64(),
            }
        })
        .collect()
}
