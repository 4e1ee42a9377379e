//! Scenario description: geometry, RF constants, channel-model parameters and
//! solver settings, loaded from a TOML document with explicit units in the
//! field names.
//!
//! A [`ScenarioConfig`] is the serialized form. [`Scenario`] wraps a validated
//! config together with the derived quantities every other module needs
//! (wavelength, noise power, element positions, the tile partition).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ScenarioError;
use crate::linalg::{db_to_linear, dbm_to_watts};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub type Point = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    Xz,
    Yz,
}

impl Plane {
    /// Unit vector of the horizontal in-plane axis.
    pub fn horizontal_axis(self) -> Point {
        match self {
            Plane::Xz => [1.0, 0.0, 0.0],
            Plane::Yz => [0.0, 1.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RfConstants {
    pub carrier_frequency_hz: f64,
    pub bandwidth_hz: f64,
    pub noise_psd_dbm_per_hz: f64,
    pub noise_figure_db: f64,
    pub tx_antenna_gain_dbi: f64,
    pub rx_antenna_gain_dbi: f64,
    /// Optional per-user noise power override.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_user_noise_dbm: Option<Vec<f64>>,
}

impl RfConstants {
    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency_hz
    }

    /// Thermal noise power over the signal bandwidth including the noise figure.
    pub fn noise_power_dbm(&self) -> f64 {
        self.noise_psd_dbm_per_hz + 10.0 * self.bandwidth_hz.log10() + self.noise_figure_db
    }

    pub fn noise_power_w(&self) -> f64 {
        dbm_to_watts(self.noise_power_dbm())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BsArray {
    pub position_m: Point,
    pub plane: Plane,
    pub elements_per_row: usize,
    pub rows: usize,
    /// Horizontal spacing; λ/2 when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element_spacing_m: Option<f64>,
    /// Vertical spacing between the linear sub-arrays; λ/2 when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row_spacing_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RisDescriptor {
    pub center_m: Point,
    pub plane: Plane,
    pub rows: usize,
    pub cols: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element_spacing_m: Option<f64>,
}

impl RisDescriptor {
    pub fn elements(&self) -> usize {
        self.rows * self.cols
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TilingConfig {
    /// K. Zero disables the surfaces entirely (direct links only).
    pub total_tiles: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserPlacement {
    pub count: usize,
    pub region_x_m: [f64; 2],
    pub region_y_m: [f64; 2],
    pub height_m: f64,
    /// Fixed positions; when present the region is ignored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions_m: Option<Vec<Point>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixEntry {
    pub model: String,
    pub probability: f64,
}

/// Alpha-beta-gamma path-loss parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbgParams {
    pub alpha: f64,
    pub beta_db: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelParams {
    /// κ_s, linear. `inf` gives a pure line-of-sight link.
    pub rician_kappa_bs_ris: f64,
    /// κ_t, linear.
    pub rician_kappa_ris_ue: f64,
    pub direct_mix: Vec<MixEntry>,
    pub abg: BTreeMap<String, AbgParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSettings {
    /// Per-user SINR targets in dB, one per user.
    pub sinr_targets_db: Vec<f64>,
    pub ao_epsilon: f64,
    pub gam_step: f64,
    pub gam_epsilon: f64,
    pub max_ao_iters: usize,
    pub max_gam_iters: usize,
    /// Relative ridge factor; the absolute ridge is this times the mean
    /// diagonal of the summed MSE quadratic forms.
    pub ridge: f64,
    pub po_tolerance: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            sinr_targets_db: vec![0.0],
            ao_epsilon: 1e-3,
            gam_step: 1e-2,
            gam_epsilon: 1e-9,
            max_ao_iters: 20,
            max_gam_iters: 200,
            ridge: 1e-10,
            po_tolerance: 1e-6,
        }
    }
}

impl SolverSettings {
    pub fn sinr_targets(&self) -> Vec<f64> {
        self.sinr_targets_db.iter().map(|&db| db_to_linear(db)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub rf: RfConstants,
    pub bs: BsArray,
    #[serde(default)]
    pub ris: Vec<RisDescriptor>,
    pub tiling: TilingConfig,
    pub users: UserPlacement,
    pub channel: ChannelParams,
    pub solver: SolverSettings,
}

/// Tile partition of all surface elements.
/// `(surface, element)` pairs making up one tile.
pub type TileMembers = Vec<(usize, usize)>;

#[derive(Debug, Clone, PartialEq)]
pub struct TilingSpec {
    /// C; `None` when a tile spans several whole surfaces (K < Q).
    pub tiles_per_ris: Option<usize>,
    pub elements_per_tile: usize,
    pub total_tiles: usize,
}

/// A validated scenario plus derived geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    config: ScenarioConfig,
    wavelength: f64,
    noise_power: Vec<f64>,
    bs_elements: Vec<Point>,
    ris_elements: Vec<Vec<Point>>,
    tiling: TilingSpec,
    /// For each tile, `(surface, element)` pairs in tile order.
    tile_members: Vec<TileMembers>,
}

pub fn load_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let config: ScenarioConfig = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    Scenario::from_config(config)
}

pub fn builtin_preset(name: &str) -> Result<Scenario, ScenarioError> {
    match name {
        "FF" | "ff" => load_scenario(FF_PRESET),
        "NF" | "nf" => load_scenario(NF_PRESET),
        other => Err(ScenarioError::UnknownPreset(other.to_string())),
    }
}

/// Accepts a preset name or a path to a TOML document.
pub fn resolve_scenario(spec: &str) -> Result<Scenario, ScenarioError> {
    match spec {
        "FF" | "ff" | "NF" | "nf" => builtin_preset(spec),
        path => {
            let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Parse(format!("{path}: {e}")))?;
            load_scenario(&text)
        }
    }
}

fn add(a: Point, b: Point) -> Point {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scale(a: Point, s: f64) -> Point {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn distance(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Element positions of a planar grid, column-major (column outer, row inner).
fn grid_positions(center: Point, plane: Plane, rows: usize, cols: usize, h_spacing: f64, v_spacing: f64) -> Vec<Point> {
    let h = plane.horizontal_axis();
    let v = [0.0, 0.0, 1.0];
    let mut out = Vec::with_capacity(rows * cols);
    for c in 0..cols {
        let dc = (c as f64 - (cols as f64 - 1.0) / 2.0) * h_spacing;
        for r in 0..rows {
            let dr = (r as f64 - (rows as f64 - 1.0) / 2.0) * v_spacing;
            out.push(add(center, add(scale(h, dc), scale(v, dr))));
        }
    }
    out
}

fn check(cond: bool, field: &str, reason: &str) -> Result<(), ScenarioError> {
    if cond {
        Ok(())
    } else {
        Err(ScenarioError::invalid(field, reason))
    }
}

impl Scenario {
    pub fn from_config(config: ScenarioConfig) -> Result<Self, ScenarioError> {
        let rf = &config.rf;
        check(
            rf.carrier_frequency_hz.is_finite() && rf.carrier_frequency_hz > 0.0,
            "rf.carrier_frequency_hz",
            "must be > 0",
        )?;
        check(
            rf.bandwidth_hz.is_finite() && rf.bandwidth_hz > 0.0,
            "rf.bandwidth_hz",
            "must be > 0",
        )?;
        let n_users = config.users.count;
        check(n_users >= 1, "users.count", "at least one user required")?;
        let noise_power: Vec<f64> = match &rf.per_user_noise_dbm {
            Some(v) => {
                check(v.len() == n_users, "rf.per_user_noise_dbm", "length must equal users.count")?;
                v.iter().map(|&d| dbm_to_watts(d)).collect()
            }
            None => vec![rf.noise_power_w(); n_users],
        };
        check(
            noise_power.iter().all(|p| p.is_finite() && *p > 0.0),
            "rf.noise_power",
            "derived noise power must be strictly positive",
        )?;
        let wavelength = rf.wavelength_m();

        let bs = &config.bs;
        check(
            bs.rows >= 1 && bs.elements_per_row >= 1,
            "bs",
            "array must have at least one element",
        )?;
        let bs_h = bs.element_spacing_m.unwrap_or(wavelength / 2.0);
        let bs_v = bs.row_spacing_m.unwrap_or(wavelength / 2.0);
        check(bs_h > 0.0 && bs_v > 0.0, "bs.element_spacing_m", "must be > 0")?;
        let bs_elements = grid_positions(bs.position_m, bs.plane, bs.rows, bs.elements_per_row, bs_h, bs_v);

        let mut ris_elements = Vec::with_capacity(config.ris.len());
        for (q, ris) in config.ris.iter().enumerate() {
            let field = format!("ris[{q}]");
            check(ris.rows >= 1 && ris.cols >= 1, &field, "rows and cols must be >= 1")?;
            let s = ris.element_spacing_m.unwrap_or(wavelength / 2.0);
            check(s > 0.0, &format!("{field}.element_spacing_m"), "must be > 0")?;
            ris_elements.push(grid_positions(ris.center_m, ris.plane, ris.rows, ris.cols, s, s));
        }

        let (tiling, tile_members) = partition_tiles(&config.ris, config.tiling.total_tiles)?;

        let users = &config.users;
        match &users.positions_m {
            Some(p) => check(p.len() == n_users, "users.positions_m", "length must equal users.count")?,
            None => {
                check(
                    users.region_x_m[0] <= users.region_x_m[1] && users.region_y_m[0] <= users.region_y_m[1],
                    "users.region",
                    "empty rectangle",
                )?;
            }
        }

        let ch = &config.channel;
        check(
            ch.rician_kappa_bs_ris >= 0.0 && ch.rician_kappa_ris_ue >= 0.0,
            "channel.rician_kappa",
            "Rician factors must be >= 0",
        )?;
        check(!ch.direct_mix.is_empty(), "channel.direct_mix", "at least one model required")?;
        let total: f64 = ch.direct_mix.iter().map(|m| m.probability).sum();
        check(
            ch.direct_mix.iter().all(|m| m.probability >= 0.0),
            "channel.direct_mix",
            "probabilities must be >= 0",
        )?;
        check((total - 1.0).abs() <= 1e-9, "channel.direct_mix", "mix must sum to 1")?;
        for m in &ch.direct_mix {
            check(
                ch.abg.contains_key(&m.model),
                "channel.abg",
                &format!("missing ABG parameters for model `{}`", m.model),
            )?;
        }

        let s = &config.solver;
        check(
            s.sinr_targets_db.len() == n_users,
            "solver.sinr_targets_db",
            "length must equal users.count",
        )?;
        check(
            s.sinr_targets_db.iter().all(|x| x.is_finite()),
            "solver.sinr_targets_db",
            "targets must be finite",
        )?;
        for (name, v) in [
            ("solver.ao_epsilon", s.ao_epsilon),
            ("solver.gam_step", s.gam_step),
            ("solver.gam_epsilon", s.gam_epsilon),
            ("solver.ridge", s.ridge),
            ("solver.po_tolerance", s.po_tolerance),
        ] {
            check(v.is_finite() && v > 0.0, name, "must be > 0")?;
        }
        check(s.max_ao_iters >= 1, "solver.max_ao_iters", "must be >= 1")?;
        check(s.max_gam_iters >= 1, "solver.max_gam_iters", "must be >= 1")?;

        Ok(Scenario {
            config,
            wavelength,
            noise_power,
            bs_elements,
            ris_elements,
            tiling,
            tile_members,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn name(&self) -> &str {
        &self.config.name
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    /// σ_i² in watts.
    pub fn noise_power(&self) -> &[f64] {
        &self.noise_power
    }

    pub fn n_users(&self) -> usize {
        self.config.users.count
    }

    /// M.
    pub fn n_antennas(&self) -> usize {
        self.bs_elements.len()
    }

    /// Q.
    pub fn n_surfaces(&self) -> usize {
        self.config.ris.len()
    }

    /// N_r.
    pub fn n_elements(&self) -> usize {
        self.ris_elements.iter().map(Vec::len).sum()
    }

    pub fn tiling(&self) -> &TilingSpec {
        &self.tiling
    }

    pub fn tile_members(&self) -> &[TileMembers] {
        &self.tile_members
    }

    pub fn bs_elements(&self) -> &[Point] {
        &self.bs_elements
    }

    pub fn bs_center(&self) -> Point {
        self.config.bs.position_m
    }

    pub fn ris_elements(&self) -> &[Vec<Point>] {
        &self.ris_elements
    }

    pub fn solver(&self) -> &SolverSettings {
        &self.config.solver
    }

    pub fn sinr_targets(&self) -> Vec<f64> {
        self.config.solver.sinr_targets()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.config).expect("scenario config always serializes")
    }

    /// Hex SHA-256 of the canonical serialized form.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn modified(&self, f: impl FnOnce(&mut ScenarioConfig)) -> Result<Scenario, ScenarioError> {
        let mut cfg = self.config.clone();
        f(&mut cfg);
        Scenario::from_config(cfg)
    }

    pub fn with_total_tiles(&self, k: usize) -> Result<Scenario, ScenarioError> {
        self.modified(|c| c.tiling.total_tiles = k)
    }

    pub fn with_uniform_target_db(&self, db: f64) -> Result<Scenario, ScenarioError> {
        self.modified(|c| c.solver.sinr_targets_db = vec![db; c.users.count])
    }

    /// Changes the user count, broadcasting the first SINR target.
    pub fn with_users(&self, n: usize) -> Result<Scenario, ScenarioError> {
        self.modified(|c| {
            let t = c.solver.sinr_targets_db.first().copied().unwrap_or(0.0);
            c.users.count = n;
            c.users.positions_m = None;
            c.solver.sinr_targets_db = vec![t; n];
            c.rf.per_user_noise_dbm = None;
        })
    }

    /// Resizes every surface to `rows × cols` elements (desk-scale runs).
    pub fn with_surface_size(&self, rows: usize, cols: usize) -> Result<Scenario, ScenarioError> {
        self.modified(|c| {
            for r in &mut c.ris {
                r.rows = rows;
                r.cols = cols;
            }
        })
    }

    pub fn with_max_ao_iters(&self, n: usize) -> Result<Scenario, ScenarioError> {
        self.modified(|c| c.solver.max_ao_iters = n)
    }

    pub fn with_config(&self, f: impl FnOnce(&mut ScenarioConfig)) -> Result<Scenario, ScenarioError> {
        self.modified(f)
    }
}

fn partition_tiles(ris: &[RisDescriptor], k: usize) -> Result<(TilingSpec, Vec<TileMembers>), ScenarioError> {
    let q = ris.len();
    if k == 0 {
        return Ok((
            TilingSpec {
                tiles_per_ris: None,
                elements_per_tile: 0,
                total_tiles: 0,
            },
            Vec::new(),
        ));
    }
    check(q >= 1, "tiling.total_tiles", "tiles requested but no surface is defined")?;
    let mut members = Vec::with_capacity(k);
    if k.is_multiple_of(q) {
        let c = k / q;
        let p = ris[0].elements() / c;
        for (s, r) in ris.iter().enumerate() {
            check(
                r.elements() % c == 0 && r.elements() / c == p,
                "tiling.total_tiles",
                "C·P must equal rows·cols on every surface with a common P",
            )?;
            for t in 0..c {
                members.push((t * p..(t + 1) * p).map(|e| (s, e)).collect());
            }
        }
        check(p >= 1, "tiling.total_tiles", "P must be >= 1")?;
        Ok((
            TilingSpec {
                tiles_per_ris: Some(c),
                elements_per_tile: p,
                total_tiles: k,
            },
            members,
        ))
    } else if q.is_multiple_of(k) {
        let group = q / k;
        let p: usize = ris[..group].iter().map(RisDescriptor::elements).sum();
        for t in 0..k {
            let surfaces = t * group..(t + 1) * group;
            let size: usize = ris[surfaces.clone()].iter().map(RisDescriptor::elements).sum();
            check(size == p, "tiling.total_tiles", "grouped surfaces must give a common P")?;
            members.push(surfaces.flat_map(|s| (0..ris[s].elements()).map(move |e| (s, e))).collect());
        }
        Ok((
            TilingSpec {
                tiles_per_ris: None,
                elements_per_tile: p,
                total_tiles: k,
            },
            members,
        ))
    } else {
        Err(ScenarioError::invalid(
            "tiling.total_tiles",
            format!("K={k} must be a multiple or a divisor of the surface count Q={q}"),
        ))
    }
}

/// Far-field style scenario: six 40×20 surfaces on the room walls.
pub const FF_PRESET: &str = r#"
name = "FF"

[rf]
carrier_frequency_hz = 28e9
bandwidth_hz = 30e3
noise_psd_dbm_per_hz = -174.0
noise_figure_db = 8.0
tx_antenna_gain_dbi = 3.0
rx_antenna_gain_dbi = 3.0

[bs]
position_m = [30.0, 15.0, 2.0]
plane = "yz"
elements_per_row = 8
rows = 2

[[ris]]
center_m = [0.0, 20.0, 3.0]
plane = "yz"
rows = 20
cols = 40

[[ris]]
center_m = [0.0, 10.0, 3.0]
plane = "yz"
rows = 20
cols = 40

[[ris]]
center_m = [3.0, 0.0, 3.0]
plane = "xz"
rows = 20
cols = 40

[[ris]]
center_m = [13.0, 0.0, 3.0]
plane = "xz"
rows = 20
cols = 40

[[ris]]
center_m = [8.0, 30.0, 3.0]
plane = "xz"
rows = 20
cols = 40

[[ris]]
center_m = [18.0, 30.0, 3.0]
plane = "xz"
rows = 20
cols = 40

[tiling]
total_tiles = 6

[users]
count = 6
region_x_m = [0.0, 30.0]
region_y_m = [0.0, 20.0]
height_m = 1.0

[channel]
rician_kappa_bs_ris = 50.0
rician_kappa_ris_ue = 50.0
direct_mix = [
    { model = "IO", probability = 0.7 },
    { model = "SM", probability = 0.3 },
]

# NLOS alpha-beta-gamma fits of the 5GCM (2016) white paper:
# indoor office (IO) and shopping mall (SM).
[channel.abg.IO]
alpha = 3.83
beta_db = 17.30
gamma = 2.49

[channel.abg.SM]
alpha = 3.21
beta_db = 18.09
gamma = 2.24

[solver]
sinr_targets_db = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0]
ao_epsilon = 1e-3
gam_step = 1e-2
gam_epsilon = 1e-9
max_ao_iters = 20
max_gam_iters = 200
ridge = 1e-10
po_tolerance = 1e-6
"#;

/// Near-field scenario: one 20×240 surface with the base station close by.
pub const NF_PRESET: &str = r#"
name = "NF"

[rf]
carrier_frequency_hz = 28e9
bandwidth_hz = 30e3
noise_psd_dbm_per_hz = -174.0
noise_figure_db = 8.0
tx_antenna_gain_dbi = 3.0
rx_antenna_gain_dbi = 3.0

[bs]
position_m = [16.0, 4.0, 2.0]
plane = "yz"
elements_per_row = 8
rows = 2

[[ris]]
center_m = [15.0, 0.0, 3.0]
plane = "xz"
rows = 20
cols = 240

[tiling]
total_tiles = 3

[users]
count = 3
region_x_m = [0.0, 30.0]
region_y_m = [0.0, 20.0]
height_m = 1.0

[channel]
rician_kappa_bs_ris = 50.0
rician_kappa_ris_ue = 50.0
direct_mix = [{ model = "IO", probability = 1.0 }]

[channel.abg.IO]
alpha = 3.83
beta_db = 17.30
gamma = 2.49

[channel.abg.SM]
alpha = 3.21
beta_db = 18.09
gamma = 2.24

[solver]
sinr_targets_db = [0.0, 0.0, 0.0]
ao_epsilon = 1e-3
gam_step = 1e-2
gam_epsilon = 1e-9
max_ao_iters = 20
max_gam_iters = 200
ridge = 1e-10
po_tolerance = 1e-6
"#;
