//! One realization of every propagation link.
//!
//! Direct base-station→user links follow an alpha-beta-gamma NLOS path loss
//! with Rayleigh fading. Surface links are Rician: an exact spherical-wave
//! line-of-sight term (element to element, no plane-wave approximation) plus
//! a circularly-symmetric Gaussian multipath term. Each segment (the part of
//! a tile lying on one surface) carries a free-space amplitude computed from
//! its centroid.

use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::ChannelError;
use crate::linalg::{cis, db_to_linear, CMatrix, CVector, C64};
use crate::rng::{derive_seed, rng_for, stream, SimRng};
use crate::scenario::{distance, AbgParams, Point, Scenario};

/// All links of one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    /// h̄_i, length M each.
    pub direct: Vec<CVector>,
    /// S_k, P × M each.
    pub bs_to_tile: Vec<CMatrix>,
    /// t_{i,k}, indexed `[user][tile]`, length P each.
    pub tile_to_ue: Vec<Vec<CVector>>,
    /// K_k, unit-modulus, length P each.
    pub los_to_bs_center: Vec<CVector>,
    pub ue_positions: Vec<Point>,
    /// Index into the scenario's direct-model mix drawn for each user.
    pub direct_models: Vec<usize>,
}

impl ChannelSet {
    pub fn n_users(&self) -> usize {
        self.direct.len()
    }

    pub fn n_antennas(&self) -> usize {
        self.direct.first().map_or(0, |h| h.len())
    }

    pub fn n_tiles(&self) -> usize {
        self.bs_to_tile.len()
    }

    pub fn elements_per_tile(&self) -> usize {
        self.bs_to_tile.first().map_or(0, |s| s.nrows())
    }

    pub fn is_finite(&self) -> bool {
        let fin = |z: &C64| z.re.is_finite() && z.im.is_finite();
        self.direct.iter().all(|v| v.iter().all(fin))
            && self.bs_to_tile.iter().all(|m| m.iter().all(fin))
            && self.tile_to_ue.iter().flatten().all(|v| v.iter().all(fin))
            && self.los_to_bs_center.iter().all(|v| v.iter().all(fin))
    }

    /// The same instance with the surfaces removed.
    pub fn without_surfaces(&self) -> ChannelSet {
        ChannelSet {
            direct: self.direct.clone(),
            bs_to_tile: Vec::new(),
            tile_to_ue: vec![Vec::new(); self.n_users()],
            los_to_bs_center: Vec::new(),
            ue_positions: self.ue_positions.clone(),
            direct_models: self.direct_models.clone(),
        }
    }
}

/// Propagation phase `-2π d / λ` reduced to `[0, 2π)`.
pub fn spherical_phase(src: Point, dst: Point, wavelength: f64) -> Result<f64, ChannelError> {
    let d = distance(src, dst);
    if d == 0.0 {
        return Err(ChannelError::CoincidentPoints);
    }
    // fract() first keeps precision when d spans thousands of wavelengths
    Ok((-2.0 * PI * (d / wavelength).fract()).rem_euclid(2.0 * PI))
}

fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// `amp · (√(κ/(1+κ))·los + √(1/(1+κ))·W)` with `W` i.i.d. CN(0, 1).
pub fn rician_link<R: Rng + ?Sized>(los: &CMatrix, kappa: f64, pathloss_amp: f64, rng: &mut R) -> Result<CMatrix, ChannelError> {
    if kappa.is_nan() || kappa < 0.0 {
        return Err(ChannelError::NegativeKappa(kappa));
    }
    if kappa.is_infinite() {
        return Ok(los * C64::new(pathloss_amp, 0.0));
    }
    let los_w = (kappa / (1.0 + kappa)).sqrt();
    let nlos_w = (1.0 / (1.0 + kappa)).sqrt();
    Ok(los.map(|l| pathloss_amp * (los_w * l + nlos_w * complex_gaussian(rng))))
}

/// ABG path loss in dB: `10·α·log10(d) + β + 10·γ·log10(f_GHz)`.
pub fn abg_pathloss_db(distance_m: f64, f_ghz: f64, params: &AbgParams) -> Result<f64, ChannelError> {
    if !(distance_m > 0.0) {
        return Err(ChannelError::NonPositiveDistance(distance_m));
    }
    Ok(10.0 * params.alpha * distance_m.log10() + params.beta_db + 10.0 * params.gamma * f_ghz.log10())
}

/// Free-space amplitude `λ / (4π d)`.
pub fn free_space_amplitude(distance_m: f64, wavelength: f64) -> f64 {
    wavelength / (4.0 * PI * distance_m)
}

fn centroid(points: &[Point]) -> Point {
    let n = points.len() as f64;
    let mut c = [0.0; 3];
    for p in points {
        for a in 0..3 {
            c[a] += p[a] / n;
        }
    }
    c
}

fn draw_model<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> usize {
    let mix = &scenario.config().channel.direct_mix;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (idx, m) in mix.iter().enumerate() {
        acc += m.probability;
        if u < acc {
            return idx;
        }
    }
    mix.len() - 1
}

/// Draws user positions, uniform over the configured rectangle.
pub fn place_users<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Vec<Point> {
    let u = &scenario.config().users;
    match &u.positions_m {
        Some(p) => p.clone(),
        None => (0..u.count)
            .map(|_| {
                let x = u.region_x_m[0] + (u.region_x_m[1] - u.region_x_m[0]) * rng.random::<f64>();
                let y = u.region_y_m[0] + (u.region_y_m[1] - u.region_y_m[0]) * rng.random::<f64>();
                [x, y, u.height_m]
            })
            .collect(),
    }
}

/// Generates one channel realization. Sub-streams for placement, direct
/// links and the two surface hops are split from a single draw of `rng`.
pub fn realize_channels<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Result<ChannelSet, ChannelError> {
    let seed: u64 = rng.random();
    realize_channels_seeded(scenario, seed)
}

pub fn realize_channels_seeded(scenario: &Scenario, seed: u64) -> Result<ChannelSet, ChannelError> {
    let cfg = scenario.config();
    let lambda = scenario.wavelength();
    let gt = db_to_linear(cfg.rf.tx_antenna_gain_dbi);
    let gr = db_to_linear(cfg.rf.rx_antenna_gain_dbi);
    let f_ghz = cfg.rf.carrier_frequency_hz / 1e9;
    let m_ant = scenario.n_antennas();
    let bs_center = scenario.bs_center();

    let ue_positions = place_users(scenario, &mut rng_for(seed, &[stream::UE_PLACEMENT]));

    let mut model_rng = rng_for(seed, &[stream::MODEL_DRAW]);
    let mut direct_rng = rng_for(seed, &[stream::DIRECT]);
    let mut direct = Vec::with_capacity(ue_positions.len());
    let mut direct_models = Vec::with_capacity(ue_positions.len());
    for ue in &ue_positions {
        let model_idx = draw_model(scenario, &mut model_rng);
        let name = &cfg.channel.direct_mix[model_idx].model;
        let params = cfg
            .channel
            .abg
            .get(name)
            .ok_or_else(|| ChannelError::UnknownModel(name.clone()))?;
        let pl_db = abg_pathloss_db(distance(bs_center, *ue), f_ghz, params)?;
        let amp = (gt * gr / db_to_linear(pl_db)).sqrt();
        direct.push(CVector::from_fn(m_ant, |_, _| amp * complex_gaussian(&mut direct_rng)));
        direct_models.push(model_idx);
    }

    let ris_el = scenario.ris_elements();
    let bs_el = scenario.bs_elements();
    let kappa_s = cfg.channel.rician_kappa_bs_ris;
    let kappa_t = cfg.channel.rician_kappa_ris_ue;
    let n_tiles = scenario.tiling().total_tiles;
    let p = scenario.tiling().elements_per_tile;

    let mut bs_to_tile = Vec::with_capacity(n_tiles);
    let mut los_to_bs_center = Vec::with_capacity(n_tiles);
    let mut tile_to_ue: Vec<Vec<CVector>> = vec![Vec::with_capacity(n_tiles); ue_positions.len()];
    if n_tiles == 0 {
        return Ok(ChannelSet {
            direct,
            bs_to_tile,
            tile_to_ue,
            los_to_bs_center,
            ue_positions,
            direct_models,
        });
    }

    // Unit-amplitude links per surface, drawn independently of the tiling so
    // that different tile counts see the same small-scale fading.
    let mut unit_bs = Vec::with_capacity(ris_el.len());
    let mut unit_ue: Vec<Vec<CMatrix>> = Vec::with_capacity(ris_el.len());
    for (q, elements) in ris_el.iter().enumerate() {
        let mut los = CMatrix::zeros(elements.len(), m_ant);
        for (r, el) in elements.iter().enumerate() {
            for (c, ant) in bs_el.iter().enumerate() {
                los[(r, c)] = cis(spherical_phase(*ant, *el, lambda)?);
            }
        }
        let mut rng = rng_for(seed, &[stream::BS_RIS, q as u64]);
        unit_bs.push(rician_link(&los, kappa_s, 1.0, &mut rng)?);
        let mut per_user = Vec::with_capacity(ue_positions.len());
        for (i, ue) in ue_positions.iter().enumerate() {
            let mut los = CMatrix::zeros(1, elements.len());
            for (c, el) in elements.iter().enumerate() {
                los[(0, c)] = cis(spherical_phase(*el, *ue, lambda)?);
            }
            let mut rng = rng_for(seed, &[stream::RIS_UE, q as u64, i as u64]);
            per_user.push(rician_link(&los, kappa_t, 1.0, &mut rng)?);
        }
        unit_ue.push(per_user);
    }

    for members in scenario.tile_members() {
        let positions: Vec<Point> = members.iter().map(|&(s, e)| ris_el[s][e]).collect();
        let mut s_k = CMatrix::zeros(p, m_ant);
        let mut t_k: Vec<CVector> = vec![CVector::zeros(p); ue_positions.len()];

        // segments: maximal runs of members on the same surface
        let mut start = 0;
        while start < members.len() {
            let surface = members[start].0;
            let end = members[start..]
                .iter()
                .position(|&(s, _)| s != surface)
                .map_or(members.len(), |off| start + off);
            let seg_center = centroid(&positions[start..end]);
            let amp_bs = gt.sqrt() * free_space_amplitude(distance(bs_center, seg_center), lambda);
            let amps_ue: Vec<f64> = ue_positions
                .iter()
                .map(|ue| gr.sqrt() * free_space_amplitude(distance(seg_center, *ue), lambda))
                .collect();
            for r in start..end {
                let e = members[r].1;
                s_k.row_mut(r).copy_from(&(unit_bs[surface].row(e) * C64::new(amp_bs, 0.0)));
                for (i, t) in t_k.iter_mut().enumerate() {
                    t[r] = unit_ue[surface][i][(0, e)] * amps_ue[i];
                }
            }
            start = end;
        }

        let k_vec = positions
            .iter()
            .map(|el| spherical_phase(bs_center, *el, lambda).map(cis))
            .collect::<Result<Vec<_>, _>>()?;
        bs_to_tile.push(s_k);
        los_to_bs_center.push(CVector::from_vec(k_vec));
        for (i, t) in t_k.into_iter().enumerate() {
            tile_to_ue[i].push(t);
        }
    }

    Ok(ChannelSet {
        direct,
        bs_to_tile,
        tile_to_ue,
        los_to_bs_center,
        ue_positions,
        direct_models,
    })
}

/// Channel realization for Monte-Carlo instance `instance` under `seed`.
pub fn realize_instance(scenario: &Scenario, seed: u64, instance: u64) -> Result<ChannelSet, ChannelError> {
    realize_channels_seeded(scenario, derive_seed(seed, &[instance]))
}

pub fn instance_rng(seed: u64, instance: u64, label: u64) -> SimRng {
    rng_for(derive_seed(seed, &[instance]), &[label])
}

// Binary dump: magic, four u64 dimensions, then complex entries as
// little-endian (re, im) f64 pairs, user positions and model indices.
const MAGIC: &[u8; 8] = b"RISCHAN1";

fn put_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_c64(w: &mut impl Write, z: C64) -> std::io::Result<()> {
    w.write_all(&z.re.to_le_bytes())?;
    w.write_all(&z.im.to_le_bytes())
}

fn get_u64(r: &mut impl Read) -> Result<u64, ChannelError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_f64(r: &mut impl Read) -> Result<f64, ChannelError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn get_c64(r: &mut impl Read) -> Result<C64, ChannelError> {
    Ok(C64::new(get_f64(r)?, get_f64(r)?))
}

pub fn write_channels(set: &ChannelSet, w: &mut impl Write) -> Result<(), ChannelError> {
    w.write_all(MAGIC)?;
    let (nu, m, k, p) = (set.n_users(), set.n_antennas(), set.n_tiles(), set.elements_per_tile());
    for d in [nu, m, k, p] {
        put_u64(w, d as u64)?;
    }
    for h in &set.direct {
        for z in h.iter() {
            put_c64(w, *z)?;
        }
    }
    for s in &set.bs_to_tile {
        for r in 0..p {
            for c in 0..m {
                put_c64(w, s[(r, c)])?;
            }
        }
    }
    for per_user in &set.tile_to_ue {
        for t in per_user {
            for z in t.iter() {
                put_c64(w, *z)?;
            }
        }
    }
    for kv in &set.los_to_bs_center {
        for z in kv.iter() {
            put_c64(w, *z)?;
        }
    }
    for pos in &set.ue_positions {
        for c in pos {
            w.write_all(&c.to_le_bytes())?;
        }
    }
    for &idx in &set.direct_models {
        put_u64(w, idx as u64)?;
    }
    Ok(())
}

pub fn read_channels(r: &mut impl Read) -> Result<ChannelSet, ChannelError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ChannelError::Format("bad magic".into()));
    }
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = get_u64(r)? as usize;
        if *d > 1 << 24 {
            return Err(ChannelError::Format(format!("implausible dimension {d}")));
        }
    }
    let [nu, m, k, p] = dims;
    fn read_vec(r: &mut impl Read, n: usize) -> Result<CVector, ChannelError> {
        let mut v = CVector::zeros(n);
        for z in v.iter_mut() {
            *z = get_c64(r)?;
        }
        Ok(v)
    }
    let direct = (0..nu).map(|_| read_vec(r, m)).collect::<Result<Vec<_>, _>>()?;
    let mut bs_to_tile = Vec::with_capacity(k);
    for _ in 0..k {
        let mut s = CMatrix::zeros(p, m);
        for row in 0..p {
            for col in 0..m {
                s[(row, col)] = get_c64(r)?;
            }
        }
        bs_to_tile.push(s);
    }
    let tile_to_ue = (0..nu)
        .map(|_| (0..k).map(|_| read_vec(r, p)).collect::<Result<Vec<_>, _>>())
        .collect::<Result<Vec<_>, _>>()?;
    let los_to_bs_center = (0..k).map(|_| read_vec(r, p)).collect::<Result<Vec<_>, _>>()?;
    let mut ue_positions = Vec::with_capacity(nu);
    for _ in 0..nu {
        ue_positions.push([get_f64(r)?, get_f64(r)?, get_f64(r)?]);
    }
    let direct_models = (0..nu)
        .map(|_| get_u64(r).map(|v| v as usize))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ChannelSet {
        direct,
        bs_to_tile,
        tile_to_ue,
        los_to_bs_center,
        ue_positions,
        direct_models,
    })
}
