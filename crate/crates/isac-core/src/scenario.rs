//! Physical scenario: OFDM grid, arrays, targets, users, eavesdroppers, and
//! the steering vectors / channels / grid bins derived from them.
//!
//! Geometry convention: positions are `(x, y)` in meters with the base
//! station at the origin, array boresight along `+x`, and angles measured
//! from boresight as `atan2(y, x)`. All angles are radians internally;
//! scenario files carry degrees.

use crate::{CMatrix, CVector, Complex64, SPEED_OF_LIGHT};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid OFDM grid: {0}")]
    InvalidGrid(String),
    #[error("invalid array config: {0}")]
    InvalidArray(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("delay bin {bin} exceeds unambiguous range (N_c = {n_subcarriers}): delay aliases")]
    DelayAliased { bin: i64, n_subcarriers: usize },
    #[error("config parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// OFDM time-frequency grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OfdmGrid {
    pub n_subcarriers: usize,
    pub n_symbols: usize,
    pub subcarrier_spacing: f64,
    pub symbol_duration: f64,
    pub cp_duration: f64,
    pub carrier_freq: f64,
}

impl OfdmGrid {
    pub fn new(
        n_subcarriers: usize,
        n_symbols: usize,
        subcarrier_spacing: f64,
        symbol_duration: f64,
        cp_duration: f64,
        carrier_freq: f64,
    ) -> Result<Self, ScenarioError> {
        let grid = OfdmGrid {
            n_subcarriers,
            n_symbols,
            subcarrier_spacing,
            symbol_duration,
            cp_duration,
            carrier_freq,
        };
        grid.validate()?;
        Ok(grid)
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        if self.n_subcarriers < 2 || self.n_symbols < 2 {
            return Err(ScenarioError::InvalidGrid(format!(
                "need N_c >= 2 and N_s >= 2, got ({}, {})",
                self.n_subcarriers, self.n_symbols
            )));
        }
        let prod = self.subcarrier_spacing * self.symbol_duration;
        if (prod - 1.0).abs() > 1e-12 {
            return Err(ScenarioError::InvalidGrid(format!(
                "subcarrier_spacing * symbol_duration must be 1, got {prod}"
            )));
        }
        if self.total_symbol_duration() <= 0.0 || self.carrier_freq <= 0.0 {
            return Err(ScenarioError::InvalidGrid(
                "durations and carrier frequency must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn total_symbol_duration(&self) -> f64 {
        self.symbol_duration + self.cp_duration
    }

    /// Number of resource blocks `N_c * N_s`.
    pub fn n_blocks(&self) -> usize {
        self.n_subcarriers * self.n_symbols
    }

    /// Delay of one grid bin: `1 / (N_c * delta_f)`.
    pub fn delay_resolution(&self) -> f64 {
        1.0 / (self.n_subcarriers as f64 * self.subcarrier_spacing)
    }

    /// Doppler of one grid bin: `1 / (N_s * T_tot)`.
    pub fn doppler_resolution(&self) -> f64 {
        1.0 / (self.n_symbols as f64 * self.total_symbol_duration())
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_freq
    }
}

/// Uniform linear array configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayConfig {
    pub n_tx: usize,
    pub n_rx: usize,
    /// Element spacing in wavelengths.
    pub element_spacing: f64,
}

impl ArrayConfig {
    pub fn new(n_tx: usize, n_rx: usize, element_spacing: f64) -> Result<Self, ScenarioError> {
        if n_tx < 1 || n_rx < 1 {
            return Err(ScenarioError::InvalidArray("need N_t >= 1 and N_r >= 1".into()));
        }
        if element_spacing <= 0.0 {
            return Err(ScenarioError::InvalidArray("element spacing must be positive".into()));
        }
        Ok(ArrayConfig { n_tx, n_rx, element_spacing })
    }

    pub fn half_wavelength(n_tx: usize, n_rx: usize) -> Self {
        ArrayConfig { n_tx, n_rx, element_spacing: 0.5 }
    }
}

/// A point target on the delay-Doppler grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetSpec {
    /// Position (x, y) in meters.
    pub position: [f64; 2],
    /// Radial velocity along the BS-target direction (m/s, positive = receding).
    pub radial_velocity: f64,
    /// Full velocity vector (m/s). Defaults to `radial_velocity` along the
    /// BS-target direction; presets set it so bistatic receivers also land
    /// exactly on the grid.
    pub velocity: [f64; 2],
    /// Dimensionless path-gain amplitude absorbing the radar cross section.
    pub rcs_amplitude: f64,
    /// Angle of departure from the BS (radians).
    pub aod: f64,
    /// Delay bin at the BS, in `0..N_c`.
    pub delay_bin: usize,
    /// Doppler bin at the BS, in `0..N_s`.
    pub doppler_bin: usize,
}

impl TargetSpec {
    /// Target with purely radial motion with respect to the BS.
    pub fn radial(
        position: [f64; 2],
        radial_velocity: f64,
        rcs_amplitude: f64,
        aod: f64,
        delay_bin: usize,
        doppler_bin: usize,
    ) -> Self {
        let r = (position[0].powi(2) + position[1].powi(2)).sqrt();
        let u = if r > 0.0 { [position[0] / r, position[1] / r] } else { [1.0, 0.0] };
        TargetSpec {
            position,
            radial_velocity,
            velocity: [radial_velocity * u[0], radial_velocity * u[1]],
            rcs_amplitude,
            aod,
            delay_bin,
            doppler_bin,
        }
    }
}

/// An artificial-ghost profile: delay/Doppler offsets plus a fake angle.
#[derive(Debug, Clone, PartialEq)]
pub struct GhostSpec {
    pub delta_delay_bin: usize,
    pub delta_doppler_bin: usize,
    /// Ghost angle (radians).
    pub angle: f64,
}

/// A communication user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserSpec {
    pub position: [f64; 2],
    pub n_antennas: usize,
}

impl UserSpec {
    pub fn angle(&self) -> f64 {
        angle_of(self.position)
    }

    pub fn distance(&self) -> f64 {
        (self.position[0].powi(2) + self.position[1].powi(2)).sqrt()
    }
}

/// A passive sensing eavesdropper (bistatic receiver).
#[derive(Debug, Clone, PartialEq)]
pub struct SensingEveSpec {
    /// Angular location seen from the BS (radians).
    pub angle: f64,
    pub n_antennas: usize,
    /// Position, used by the echo-synthesis experiments.
    pub position: [f64; 2],
}

/// A passive communication eavesdropper.
#[derive(Debug, Clone, PartialEq)]
pub struct CommEveSpec {
    /// Angular location seen from the BS (radians).
    pub angle: f64,
    pub n_antennas: usize,
    /// Position, used only for map-rendering experiments.
    pub position: [f64; 2],
}

/// Complete scenario description.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub grid: OfdmGrid,
    pub array: ArrayConfig,
    pub targets: Vec<TargetSpec>,
    pub ghosts: Vec<GhostSpec>,
    pub users: Vec<UserSpec>,
    pub sensing_eves: Vec<SensingEveSpec>,
    pub comm_eves: Vec<CommEveSpec>,
    /// Communication noise power (watts).
    pub noise_power_comm: f64,
    /// Radar noise power (watts).
    pub noise_power_radar: f64,
    /// Transmit power budget (watts).
    pub power_budget: f64,
}

/// Angle of a position seen from the BS at the origin.
pub fn angle_of(position: [f64; 2]) -> f64 {
    position[1].atan2(position[0])
}

const ANGLE_DISTINCT_TOL: f64 = 1e-9;

impl Scenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.grid.validate()?;
        if self.noise_power_comm <= 0.0 || self.noise_power_radar <= 0.0 || self.power_budget <= 0.0
        {
            return Err(ScenarioError::Invalid("powers must be positive".into()));
        }
        for (i, t) in self.targets.iter().enumerate() {
            if t.delay_bin >= self.grid.n_subcarriers || t.doppler_bin >= self.grid.n_symbols {
                return Err(ScenarioError::Invalid(format!(
                    "target {i} bins ({}, {}) outside grid",
                    t.delay_bin, t.doppler_bin
                )));
            }
            if !(-PI / 2.0..=PI / 2.0).contains(&t.aod) {
                return Err(ScenarioError::Invalid(format!("target {i} aod outside [-pi/2, pi/2]")));
            }
            if t.rcs_amplitude < 0.0 {
                return Err(ScenarioError::Invalid(format!("target {i} rcs amplitude negative")));
            }
        }
        for (g, ghost) in self.ghosts.iter().enumerate() {
            for (i, t) in self.targets.iter().enumerate() {
                let zero_offsets = ghost.delta_delay_bin % self.grid.n_subcarriers == 0
                    && ghost.delta_doppler_bin % self.grid.n_symbols == 0;
                if zero_offsets && (ghost.angle - t.aod).abs() < ANGLE_DISTINCT_TOL {
                    return Err(ScenarioError::Invalid(format!(
                        "ghost {g} coincides with target {i} mainlobe"
                    )));
                }
                if (ghost.angle - t.aod).abs() < ANGLE_DISTINCT_TOL {
                    return Err(ScenarioError::Invalid(format!(
                        "ghost {g} angle equals target {i} aod"
                    )));
                }
            }
            for (k, u) in self.users.iter().enumerate() {
                if (ghost.angle - u.angle()).abs() < ANGLE_DISTINCT_TOL {
                    return Err(ScenarioError::Invalid(format!(
                        "ghost {g} angle equals user {k} angle"
                    )));
                }
            }
        }
        for (m, e) in self.sensing_eves.iter().enumerate() {
            for (k, u) in self.users.iter().enumerate() {
                if (e.angle - u.angle()).abs() < ANGLE_DISTINCT_TOL {
                    return Err(ScenarioError::Invalid(format!(
                        "sensing eve {m} angle equals user {k} angle"
                    )));
                }
            }
        }
        for (m, e) in self.comm_eves.iter().enumerate() {
            for (k, u) in self.users.iter().enumerate() {
                if (e.angle - u.angle()).abs() < ANGLE_DISTINCT_TOL {
                    return Err(ScenarioError::Invalid(format!(
                        "comm eve {m} angle equals user {k} angle"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Unit-norm ULA steering vector: element `m` carries phase
/// `exp(-j 2 pi spacing sin(angle) m)`, scaled by `1/sqrt(n)`.
pub fn steering_vector(angle: f64, n_elements: usize, spacing: f64) -> CVector {
    let scale = 1.0 / (n_elements as f64).sqrt();
    let phi = -2.0 * PI * spacing * angle.sin();
    CVector::from_fn(n_elements, |m, _| {
        Complex64::from_polar(scale, phi * m as f64)
    })
}

/// A receiver in the bistatic geometry: the monostatic BS or a sensing eve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Receiver {
    /// Colocated with the transmitter at the origin.
    Bs,
    /// Sensing eavesdropper by index.
    SensingEve(usize),
}

/// Bistatic path parameters for one target and one receiver.
#[derive(Debug, Clone, Copy)]
pub struct BistaticPath {
    /// Complex two-way path gain including the carrier-phase term
    /// `exp(-j 2 pi f_c tau)`.
    pub path_gain: Complex64,
    /// Two-way propagation delay (seconds).
    pub delay: f64,
    /// Doppler shift (Hz), positive when closing.
    pub doppler: f64,
    /// Angle of arrival at the receiver (radians).
    pub aoa: f64,
}

/// Two-way geometry for a target observed by a (possibly moving) receiver.
///
/// `tau = (d1 + d2)/c`, `mu = (v1 + v2) f_c / c` with `v1`, `v2` the closing
/// speeds along the two legs, and the gain amplitude is
/// `rcs * lambda / ((4 pi)^{3/2} d1 d2)`.
pub fn bistatic_geometry(
    scenario: &Scenario,
    target: &TargetSpec,
    receiver_position: [f64; 2],
    receiver_velocity: [f64; 2],
) -> Result<BistaticPath, ScenarioError> {
    let d1 = (target.position[0].powi(2) + target.position[1].powi(2)).sqrt();
    let dx = target.position[0] - receiver_position[0];
    let dy = target.position[1] - receiver_position[1];
    let d2 = (dx * dx + dy * dy).sqrt();
    if d1 <= 0.0 || d2 <= 0.0 {
        return Err(ScenarioError::DegenerateGeometry(
            "receiver or transmitter colocated with target".into(),
        ));
    }
    let delay = (d1 + d2) / SPEED_OF_LIGHT;
    // Closing speeds: v1 along BS->target, v2 along receiver->target.
    let u1 = [target.position[0] / d1, target.position[1] / d1];
    let u2 = [dx / d2, dy / d2];
    let v1 = -(target.velocity[0] * u1[0] + target.velocity[1] * u1[1]);
    let v2 = -((target.velocity[0] - receiver_velocity[0]) * u2[0]
        + (target.velocity[1] - receiver_velocity[1]) * u2[1]);
    let doppler = (v1 + v2) * scenario.grid.carrier_freq / SPEED_OF_LIGHT;
    let lambda = scenario.grid.wavelength();
    let amplitude = target.rcs_amplitude * lambda / ((4.0 * PI).powf(1.5) * d1 * d2);
    let path_gain = Complex64::from_polar(
        amplitude,
        -2.0 * PI * scenario.grid.carrier_freq * delay,
    );
    let aoa = (-dy).atan2(-dx); // direction target -> receiver, seen at the receiver
    Ok(BistaticPath { path_gain, delay, doppler, aoa })
}

/// Grid bins for a (delay, Doppler) pair, with off-grid residuals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridBins {
    pub delay_bin: usize,
    pub doppler_bin: usize,
    /// `tau * N_c * delta_f - delay_bin` before wrapping.
    pub delay_residual: f64,
    pub doppler_residual: f64,
    /// Set when either residual exceeds 1e-6 bins.
    pub off_grid: bool,
}

const OFF_GRID_TOL: f64 = 1e-6;

/// Map physical delay/Doppler to nearest grid bins.
///
/// Delay beyond the unambiguous range `N_c` bins is an error (aliasing);
/// Doppler wraps modulo `N_s` since the per-symbol phase ramp is periodic.
pub fn to_grid_bins(tau: f64, mu: f64, grid: &OfdmGrid) -> Result<GridBins, ScenarioError> {
    assert!(tau >= 0.0, "delay must be non-negative");
    let ell_f = tau * grid.n_subcarriers as f64 * grid.subcarrier_spacing;
    let ell = ell_f.round() as i64;
    if ell >= grid.n_subcarriers as i64 {
        return Err(ScenarioError::DelayAliased { bin: ell, n_subcarriers: grid.n_subcarriers });
    }
    let nu_f = mu * grid.n_symbols as f64 * grid.total_symbol_duration();
    let nu = nu_f.round() as i64;
    let delay_residual = ell_f - ell as f64;
    let doppler_residual = nu_f - nu as f64;
    let ns = grid.n_symbols as i64;
    let nu_wrapped = nu.rem_euclid(ns) as usize;
    Ok(GridBins {
        delay_bin: ell.max(0) as usize,
        doppler_bin: nu_wrapped,
        delay_residual,
        doppler_residual,
        off_grid: delay_residual.abs() > OFF_GRID_TOL || doppler_residual.abs() > OFF_GRID_TOL,
    })
}

/// Downlink channel of user `k` on resource block `(n_c, n_s)`.
///
/// Rank-one line-of-sight model: `a_r(theta_k) a_t^H(theta_k)` times the
/// free-space gain `lambda/(4 pi d)` and the subcarrier-dependent delay
/// phase `exp(-j 2 pi n_c delta_f tau_k)`.
pub fn comm_channel(scenario: &Scenario, user: &UserSpec, n_c: usize, _n_s: usize) -> CMatrix {
    let theta = user.angle();
    let d = user.distance();
    let lambda = scenario.grid.wavelength();
    let gain = lambda / (4.0 * PI * d);
    let tau = d / SPEED_OF_LIGHT;
    let phase = -2.0 * PI * n_c as f64 * scenario.grid.subcarrier_spacing * tau;
    let a_r = steering_vector(theta, user.n_antennas, scenario.array.element_spacing);
    let a_t = steering_vector(theta, scenario.array.n_tx, scenario.array.element_spacing);
    (&a_r * a_t.adjoint()).scale(gain) * Complex64::from_polar(1.0, phase)
}

/// Reference channel of a hypothetical eavesdropper at `angle`: the
/// distance-free outer product `a_r(angle) a_t^H(angle)`.
pub fn eve_reference_channel(
    angle: f64,
    n_eve_antennas: usize,
    n_tx: usize,
    spacing: f64,
) -> CMatrix {
    let a_r = steering_vector(angle, n_eve_antennas, spacing);
    let a_t = steering_vector(angle, n_tx, spacing);
    &a_r * a_t.adjoint()
}

// ---------------------------------------------------------------------------
// Scenario file format: flat `key = value` lines, `#` comments, angles in
// degrees, powers in watts. Keys mirror the field names.
// ---------------------------------------------------------------------------

fn fmt_f64(x: f64) -> String {
    format!("{x:.17e}")
}

impl Scenario {
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let g = &self.grid;
        s.push_str("# scenario configuration (angles in degrees, powers in watts)\n");
        s.push_str(&format!("grid.n_subcarriers = {}\n", g.n_subcarriers));
        s.push_str(&format!("grid.n_symbols = {}\n", g.n_symbols));
        s.push_str(&format!("grid.subcarrier_spacing = {}\n", fmt_f64(g.subcarrier_spacing)));
        s.push_str(&format!("grid.symbol_duration = {}\n", fmt_f64(g.symbol_duration)));
        s.push_str(&format!("grid.cp_duration = {}\n", fmt_f64(g.cp_duration)));
        s.push_str(&format!("grid.carrier_freq = {}\n", fmt_f64(g.carrier_freq)));
        s.push_str(&format!("array.n_tx = {}\n", self.array.n_tx));
        s.push_str(&format!("array.n_rx = {}\n", self.array.n_rx));
        s.push_str(&format!("array.element_spacing = {}\n", fmt_f64(self.array.element_spacing)));
        s.push_str(&format!("noise_power_comm = {}\n", fmt_f64(self.noise_power_comm)));
        s.push_str(&format!("noise_power_radar = {}\n", fmt_f64(self.noise_power_radar)));
        s.push_str(&format!("power_budget = {}\n", fmt_f64(self.power_budget)));
        for (i, t) in self.targets.iter().enumerate() {
            s.push_str(&format!(
                "targets.{i}.position = {} {}\n",
                fmt_f64(t.position[0]),
                fmt_f64(t.position[1])
            ));
            s.push_str(&format!("targets.{i}.radial_velocity = {}\n", fmt_f64(t.radial_velocity)));
            s.push_str(&format!(
                "targets.{i}.velocity = {} {}\n",
                fmt_f64(t.velocity[0]),
                fmt_f64(t.velocity[1])
            ));
            s.push_str(&format!("targets.{i}.rcs_amplitude = {}\n", fmt_f64(t.rcs_amplitude)));
            s.push_str(&format!("targets.{i}.aod = {}\n", fmt_f64(t.aod.to_degrees())));
            s.push_str(&format!("targets.{i}.delay_bin = {}\n", t.delay_bin));
            s.push_str(&format!("targets.{i}.doppler_bin = {}\n", t.doppler_bin));
        }
        for (i, gh) in self.ghosts.iter().enumerate() {
            s.push_str(&format!("ghosts.{i}.delta_delay_bin = {}\n", gh.delta_delay_bin));
            s.push_str(&format!("ghosts.{i}.delta_doppler_bin = {}\n", gh.delta_doppler_bin));
            s.push_str(&format!("ghosts.{i}.angle = {}\n", fmt_f64(gh.angle.to_degrees())));
        }
        for (i, u) in self.users.iter().enumerate() {
            s.push_str(&format!(
                "users.{i}.position = {} {}\n",
                fmt_f64(u.position[0]),
                fmt_f64(u.position[1])
            ));
            s.push_str(&format!("users.{i}.n_antennas = {}\n", u.n_antennas));
        }
        for (i, e) in self.sensing_eves.iter().enumerate() {
            s.push_str(&format!("sensing_eves.{i}.angle = {}\n", fmt_f64(e.angle.to_degrees())));
            s.push_str(&format!("sensing_eves.{i}.n_antennas = {}\n", e.n_antennas));
            s.push_str(&format!(
                "sensing_eves.{i}.position = {} {}\n",
                fmt_f64(e.position[0]),
                fmt_f64(e.position[1])
            ));
        }
        for (i, e) in self.comm_eves.iter().enumerate() {
            s.push_str(&format!("comm_eves.{i}.angle = {}\n", fmt_f64(e.angle.to_degrees())));
            s.push_str(&format!("comm_eves.{i}.n_antennas = {}\n", e.n_antennas));
            s.push_str(&format!(
                "comm_eves.{i}.position = {} {}\n",
                fmt_f64(e.position[0]),
                fmt_f64(e.position[1])
            ));
        }
        s
    }

    pub fn from_config_string(text: &str) -> Result<Self, ScenarioError> {
        let mut kv: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ScenarioError::Parse {
                line: idx + 1,
                msg: "expected `key = value`".into(),
            })?;
            kv.insert(key.trim().to_string(), (idx + 1, value.trim().to_string()));
        }
        let get = |k: &str| -> Result<String, ScenarioError> {
            kv.get(k)
                .map(|(_, v)| v.clone())
                .ok_or_else(|| ScenarioError::Parse { line: 0, msg: format!("missing key `{k}`") })
        };
        let parse_f64 = |k: &str| -> Result<f64, ScenarioError> {
            let v = get(k)?;
            v.parse().map_err(|_| ScenarioError::Parse {
                line: kv[k].0,
                msg: format!("`{k}`: expected number, got `{v}`"),
            })
        };
        let parse_usize = |k: &str| -> Result<usize, ScenarioError> {
            let v = get(k)?;
            v.parse().map_err(|_| ScenarioError::Parse {
                line: kv[k].0,
                msg: format!("`{k}`: expected integer, got `{v}`"),
            })
        };
        let parse_pair = |k: &str| -> Result<[f64; 2], ScenarioError> {
            let v = get(k)?;
            let parts: Vec<&str> = v.split_whitespace().collect();
            if parts.len() != 2 {
                return Err(ScenarioError::Parse {
                    line: kv[k].0,
                    msg: format!("`{k}`: expected two numbers"),
                });
            }
            let x = parts[0].parse().map_err(|_| ScenarioError::Parse {
                line: kv[k].0,
                msg: format!("`{k}`: bad number"),
            })?;
            let y = parts[1].parse().map_err(|_| ScenarioError::Parse {
                line: kv[k].0,
                msg: format!("`{k}`: bad number"),
            })?;
            Ok([x, y])
        };
        let has = |k: &str| kv.contains_key(k);

        let dfreq = parse_f64("grid.subcarrier_spacing")?;
        let symbol_duration = if has("grid.symbol_duration") {
            parse_f64("grid.symbol_duration")?
        } else {
            1.0 / dfreq
        };
        let grid = OfdmGrid::new(
            parse_usize("grid.n_subcarriers")?,
            parse_usize("grid.n_symbols")?,
            dfreq,
            symbol_duration,
            parse_f64("grid.cp_duration")?,
            parse_f64("grid.carrier_freq")?,
        )?;
        let array = ArrayConfig::new(
            parse_usize("array.n_tx")?,
            parse_usize("array.n_rx")?,
            if has("array.element_spacing") { parse_f64("array.element_spacing")? } else { 0.5 },
        )?;

        let mut targets = Vec::new();
        let mut i = 0;
        while has(&format!("targets.{i}.position")) {
            let p = format!("targets.{i}");
            let position = parse_pair(&format!("{p}.position"))?;
            let radial_velocity = parse_f64(&format!("{p}.radial_velocity"))?;
            let mut t = TargetSpec::radial(
                position,
                radial_velocity,
                parse_f64(&format!("{p}.rcs_amplitude"))?,
                parse_f64(&format!("{p}.aod"))?.to_radians(),
                parse_usize(&format!("{p}.delay_bin"))?,
                parse_usize(&format!("{p}.doppler_bin"))?,
            );
            if has(&format!("{p}.velocity")) {
                t.velocity = parse_pair(&format!("{p}.velocity"))?;
            }
            targets.push(t);
            i += 1;
        }
        let mut ghosts = Vec::new();
        let mut i = 0;
        while has(&format!("ghosts.{i}.angle")) {
            let p = format!("ghosts.{i}");
            ghosts.push(GhostSpec {
                delta_delay_bin: parse_usize(&format!("{p}.delta_delay_bin"))?,
                delta_doppler_bin: parse_usize(&format!("{p}.delta_doppler_bin"))?,
                angle: parse_f64(&format!("{p}.angle"))?.to_radians(),
            });
            i += 1;
        }
        let mut users = Vec::new();
        let mut i = 0;
        while has(&format!("users.{i}.position")) {
            let p = format!("users.{i}");
            users.push(UserSpec {
                position: parse_pair(&format!("{p}.position"))?,
                n_antennas: parse_usize(&format!("{p}.n_antennas"))?,
            });
            i += 1;
        }
        let mut sensing_eves = Vec::new();
        let mut i = 0;
        while has(&format!("sensing_eves.{i}.angle")) {
            let p = format!("sensing_eves.{i}");
            sensing_eves.push(SensingEveSpec {
                angle: parse_f64(&format!("{p}.angle"))?.to_radians(),
                n_antennas: parse_usize(&format!("{p}.n_antennas"))?,
                position: if has(&format!("{p}.position")) {
                    parse_pair(&format!("{p}.position"))?
                } else {
                    [0.0, 0.0]
                },
            });
            i += 1;
        }
        let mut comm_eves = Vec::new();
        let mut i = 0;
        while has(&format!("comm_eves.{i}.angle")) {
            let p = format!("comm_eves.{i}");
            comm_eves.push(CommEveSpec {
                angle: parse_f64(&format!("{p}.angle"))?.to_radians(),
                n_antennas: parse_usize(&format!("{p}.n_antennas"))?,
                position: if has(&format!("{p}.position")) {
                    parse_pair(&format!("{p}.position"))?
                } else {
                    [0.0, 0.0]
                },
            });
            i += 1;
        }

        let scenario = Scenario {
            grid,
            array,
            targets,
            ghosts,
            users,
            sensing_eves,
            comm_eves,
            noise_power_comm: parse_f64("noise_power_comm")?,
            noise_power_radar: parse_f64("noise_power_radar")?,
            power_budget: parse_f64("power_budget")?,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ScenarioError> {
        Self::from_config_string(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), ScenarioError> {
        std::fs::write(path, self.to_config_string())?;
        Ok(())
    }
}

pub mod presets {
    //! Built-in scenarios: the fast desk-scale default used by the test and
    //! acceptance suites, and the full Table-style paper-scale settings.

    use super::*;

    /// Place a target exactly on the BS grid at `(delay_bin, doppler_bin)`
    /// along `aod`, and solve its velocity vector so a bistatic receiver at
    /// `eve_doppler_bin` is also exactly on grid.
    fn solve_target(
        grid: &OfdmGrid,
        aod: f64,
        delay_bin: usize,
        doppler_bin: usize,
        rcs_amplitude: f64,
        eve_position: [f64; 2],
        eve_doppler_bin: i64,
    ) -> TargetSpec {
        let bin_range = SPEED_OF_LIGHT * grid.delay_resolution();
        let d1 = delay_bin as f64 * bin_range / 2.0;
        let position = [d1 * aod.cos(), d1 * aod.sin()];
        let u1 = [aod.cos(), aod.sin()];
        let dx = position[0] - eve_position[0];
        let dy = position[1] - eve_position[1];
        let d2 = (dx * dx + dy * dy).sqrt();
        let u2 = [dx / d2, dy / d2];
        // Closing-speed targets for the two receivers:
        //   BS:  -2 v.u1 = nu_b * dv * c / f_c
        //   eve: -(v.u1 + v.u2) = nu_e * dv * c / f_c
        let dv = grid.doppler_resolution();
        let s = SPEED_OF_LIGHT / grid.carrier_freq;
        let p1 = -(doppler_bin as f64) * dv * s / 2.0; // v.u1
        let p2 = -(eve_doppler_bin as f64) * dv * s - p1; // v.u2
        let det = u1[0] * u2[1] - u1[1] * u2[0];
        assert!(det.abs() > 1e-6, "eve must be off the BS-target ray");
        let vx = (p1 * u2[1] - p2 * u1[1]) / det;
        let vy = (u1[0] * p2 - u2[0] * p1) / det;
        TargetSpec {
            position,
            radial_velocity: vx * u1[0] + vy * u1[1],
            velocity: [vx, vy],
            rcs_amplitude,
            aod,
            delay_bin,
            doppler_bin,
        }
    }

    /// Place an eve at `angle` from the BS so that the bistatic delay of
    /// `target_pos` lands exactly on `delay_bin`.
    fn solve_eve_position(grid: &OfdmGrid, target_pos: [f64; 2], angle: f64, delay_bin: usize) -> [f64; 2] {
        let bin_range = SPEED_OF_LIGHT * grid.delay_resolution();
        let d1 = (target_pos[0].powi(2) + target_pos[1].powi(2)).sqrt();
        let d2 = delay_bin as f64 * bin_range - d1;
        assert!(d2 > 0.0, "eve delay bin too small for this target");
        // Intersect |r u - p_t| = d2 with the ray r >= 0 at `angle`.
        let u = [angle.cos(), angle.sin()];
        let b = u[0] * target_pos[0] + u[1] * target_pos[1];
        let c = d1 * d1 - d2 * d2;
        let disc = b * b - c;
        assert!(disc >= 0.0, "no intersection: widen the delay bin");
        let r = b + disc.sqrt();
        assert!(r > 0.0);
        [r * u[0], r * u[1]]
    }


    /// Desk-scale scenario: 4x4 arrays, an 8x4 grid, one grid-aligned target
    /// at bin (2, 1), one ghost at offsets (3, 2) and 40 deg, one sensing eve
    /// and one comm eve. Small enough that a full design sweep runs in
    /// minutes.
    pub fn desk_scenario() -> Scenario {
        desk_scenario_with(8, 4, GhostSpec {
            delta_delay_bin: 3,
            delta_doppler_bin: 2,
            angle: 40f64.to_radians(),
        })
    }

    /// Desk-scale scenario with a custom grid size and ghost profile.
    pub fn desk_scenario_with(n_subcarriers: usize, n_symbols: usize, ghost: GhostSpec) -> Scenario {
        let grid = OfdmGrid::new(
            n_subcarriers,
            n_symbols,
            1.2e5,
            1.0 / 1.2e5,
            0.59e-6,
            24e9,
        )
        .unwrap();
        let aod = 10f64.to_radians();
        let eve_angle = (-35f64).to_radians();
        // Provisional target position for eve placement (bin 2 along aod).
        let bin_range = SPEED_OF_LIGHT * grid.delay_resolution();
        let target_pos = [bin_range * aod.cos(), bin_range * aod.sin()];
        let eve_pos = solve_eve_position(&grid, target_pos, eve_angle, 3);
        // rcs amplitude sized so the two-way gain is ~1e-4 at desk distances.
        let target = solve_target(&grid, aod, 2, 1 % n_symbols, 3.3e4, eve_pos, 0);
        let scenario = Scenario {
            grid,
            array: ArrayConfig::half_wavelength(4, 4),
            targets: vec![target],
            ghosts: vec![ghost],
            users: vec![UserSpec { position: [15.0, -1.0], n_antennas: 2 }],
            sensing_eves: vec![SensingEveSpec {
                angle: eve_angle,
                n_antennas: 8,
                position: eve_pos,
            }],
            comm_eves: vec![CommEveSpec {
                angle: angle_of([2.0, -8.0]),
                n_antennas: 2,
                position: [2.0, -8.0],
            }],
            noise_power_comm: crate::dbm_to_watts(-70.0),
            noise_power_radar: crate::dbm_to_watts(-70.0),
            power_budget: crate::dbm_to_watts(50.0),
        };
        scenario.validate().expect("desk preset is valid");
        scenario
    }

    /// Paper-scale settings: 16x16 arrays, a 12x8 grid, 24-antenna sensing
    /// eve, three ghost profiles, two users. Entity positions follow the
    /// published scene; the target is regridded so both receivers land on
    /// exact bins.
    pub fn paper_scenario() -> Scenario {
        let grid = OfdmGrid::new(12, 8, 1.2e5, 1.0 / 1.2e5, 0.59e-6, 24e9).unwrap();
        let aod = angle_of([12.0, 11.0]);
        let eve_angle = angle_of([3.0, 1.0]);
        let bin_range = SPEED_OF_LIGHT * grid.delay_resolution();
        let target_pos = [bin_range * aod.cos(), bin_range * aod.sin()];
        let eve_pos = solve_eve_position(&grid, target_pos, eve_angle, 3);
        let target = solve_target(&grid, aod, 2, 1, 2.0e4, eve_pos, 1);
        let scenario = Scenario {
            grid,
            array: ArrayConfig::half_wavelength(16, 16),
            targets: vec![target],
            ghosts: vec![
                GhostSpec { delta_delay_bin: 0, delta_doppler_bin: 5, angle: 62f64.to_radians() },
                GhostSpec { delta_delay_bin: 0, delta_doppler_bin: 2, angle: 35f64.to_radians() },
                GhostSpec { delta_delay_bin: 3, delta_doppler_bin: 4, angle: 40f64.to_radians() },
            ],
            users: vec![
                UserSpec { position: [15.0, -1.0], n_antennas: 2 },
                UserSpec { position: [9.0, -4.0], n_antennas: 2 },
            ],
            sensing_eves: vec![SensingEveSpec {
                angle: eve_angle,
                n_antennas: 24,
                position: eve_pos,
            }],
            comm_eves: vec![CommEveSpec {
                angle: angle_of([2.0, -8.0]),
                n_antennas: 2,
                position: [2.0, -8.0],
            }],
            noise_power_comm: crate::dbm_to_watts(-70.0),
            noise_power_radar: crate::dbm_to_watts(-70.0),
            power_budget: crate::dbm_to_watts(50.0),
        };
        scenario.validate().expect("paper preset is valid");
        scenario
    }

}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmat::fro_norm;
    use proptest::prelude::*;

    #[test]
    fn steering_at_broadside_is_constant() {
        let a = steering_vector(0.0, 4, 0.5);
        for m in 0..4 {
            assert!((a[m] - Complex64::new(0.5, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn steering_at_endfire_alternates_sign() {
        let a = steering_vector(PI / 2.0, 2, 0.5);
        let s = 1.0 / 2f64.sqrt();
        assert!((a[0] - Complex64::new(s, 0.0)).norm() < 1e-12);
        assert!((a[1] - Complex64::new(-s, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn steering_matches_elementwise_phase_formula() {
        let angle = 0.37;
        let n = 8;
        let a = steering_vector(angle, n, 0.5);
        for m in 0..n {
            let expected = Complex64::from_polar(
                1.0 / (n as f64).sqrt(),
                -2.0 * PI * 0.5 * angle.sin() * m as f64,
            );
            assert!((a[m] - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn steering_periodic_in_electrical_angle() {
        // With 2-wavelength spacing, sin(theta) and sin(theta)+0.5 give the
        // same electrical angle modulo 2 pi.
        let t1 = 0.1f64.asin();
        let t2 = 0.6f64.asin();
        let a1 = steering_vector(t1, 4, 2.0);
        let a2 = steering_vector(t2, 4, 2.0);
        assert!((&a1 - &a2).norm() < 1e-12);
    }

    proptest! {
        #[test]
        fn steering_is_unit_norm(angle in -1.5f64..1.5, n in 1usize..16) {
            let a = steering_vector(angle, n, 0.5);
            prop_assert!((a.norm() - 1.0).abs() < 1e-12);
        }
    }

    fn toy_scenario() -> Scenario {
        presets::desk_scenario()
    }

    #[test]
    fn monostatic_round_trip_delay() {
        let sc = toy_scenario();
        let t = TargetSpec::radial([30.0, 40.0], 0.0, 1.0, 0.0, 0, 0);
        let p = bistatic_geometry(&sc, &t, [0.0, 0.0], [0.0, 0.0]).unwrap();
        assert!((p.delay - 2.0 * 50.0 / SPEED_OF_LIGHT).abs() < 1e-18);
        assert!(p.doppler.abs() < 1e-12);
    }

    #[test]
    fn published_scene_delay_matches_hand_geometry() {
        let sc = toy_scenario();
        let t = TargetSpec::radial([12.0, 11.0], 0.0, 1.0, 0.0, 0, 0);
        let p = bistatic_geometry(&sc, &t, [0.0, 0.0], [0.0, 0.0]).unwrap();
        let expected = 2.0 * (144f64 + 121.0).sqrt() / SPEED_OF_LIGHT;
        assert!((p.delay - expected).abs() / expected < 1e-14);
    }

    #[test]
    fn degenerate_geometry_rejected() {
        let sc = toy_scenario();
        let t = TargetSpec::radial([10.0, 0.0], 0.0, 1.0, 0.0, 0, 0);
        assert!(bistatic_geometry(&sc, &t, [10.0, 0.0], [0.0, 0.0]).is_err());
    }

    #[test]
    fn grid_bins_origin() {
        let grid = toy_scenario().grid;
        let b = to_grid_bins(0.0, 0.0, &grid).unwrap();
        assert_eq!((b.delay_bin, b.doppler_bin), (0, 0));
        assert!(!b.off_grid);
    }

    #[test]
    fn grid_bins_exact_inverse() {
        let grid = toy_scenario().grid;
        let tau = 3.0 * grid.delay_resolution();
        let b = to_grid_bins(tau, 0.0, &grid).unwrap();
        assert_eq!(b.delay_bin, 3);
        assert!(b.delay_residual.abs() < 1e-9);
    }

    #[test]
    fn grid_bins_table_values() {
        // 12 subcarriers at 120 kHz: tau = 2.083 us lands near bin 3.
        let grid = OfdmGrid::new(12, 8, 1.2e5, 1.0 / 1.2e5, 0.59e-6, 24e9).unwrap();
        let b = to_grid_bins(2.083e-6, 0.0, &grid).unwrap();
        assert_eq!(b.delay_bin, 3);
        assert!(b.off_grid); // 2.083us is not exactly 3 bins
    }

    #[test]
    fn grid_bins_delay_alias_is_error() {
        let grid = toy_scenario().grid;
        let tau = 9.2 * grid.delay_resolution();
        match to_grid_bins(tau, 0.0, &grid) {
            Err(ScenarioError::DelayAliased { .. }) => {}
            other => panic!("expected aliasing error, got {other:?}"),
        }
    }

    #[test]
    fn grid_bins_doppler_wraps() {
        let grid = toy_scenario().grid;
        let mu = -1.0 * grid.doppler_resolution();
        let b = to_grid_bins(0.0, mu, &grid).unwrap();
        assert_eq!(b.doppler_bin, grid.n_symbols - 1);
    }

    #[test]
    fn bin_round_trip_identity_on_grid() {
        let grid = toy_scenario().grid;
        for ell in 0..grid.n_subcarriers {
            for nu in 0..grid.n_symbols {
                let tau = ell as f64 * grid.delay_resolution();
                let mu = nu as f64 * grid.doppler_resolution();
                let b = to_grid_bins(tau, mu, &grid).unwrap();
                assert_eq!((b.delay_bin, b.doppler_bin), (ell, nu));
                assert!(!b.off_grid);
            }
        }
    }

    #[test]
    fn comm_channel_is_rank_one_with_free_space_gain() {
        let sc = toy_scenario();
        let user = UserSpec { position: [15.0, -1.0], n_antennas: 2 };
        let h = comm_channel(&sc, &user, 3, 1);
        let svd = nalgebra::SVD::new(h.clone(), false, false);
        let s = &svd.singular_values;
        assert!(s[1] < 1e-12 * s[0], "rank one");
        let d = 226f64.sqrt();
        let gain = sc.grid.wavelength() / (4.0 * PI * d);
        assert!((fro_norm(&h) - gain).abs() / gain < 1e-12);
    }

    #[test]
    fn comm_channel_broadside_all_equal_entries() {
        let sc = toy_scenario();
        let user = UserSpec { position: [20.0, 0.0], n_antennas: 2 };
        let h = comm_channel(&sc, &user, 0, 0);
        let first = h[(0, 0)];
        for v in h.iter() {
            assert!((v - first).norm() < 1e-14);
        }
    }

    #[test]
    fn eve_reference_channel_unit_top_singular_value() {
        for &angle in &[0.0, 0.5, -1.1] {
            let h = eve_reference_channel(angle, 6, 4, 0.5);
            let svd = nalgebra::SVD::new(h.clone(), false, false);
            assert!((svd.singular_values[0] - 1.0).abs() < 1e-12);
            assert!(svd.singular_values[1] < 1e-12);
        }
    }

    #[test]
    fn eve_reference_channel_matches_outer_product() {
        let h = eve_reference_channel(0.5, 6, 4, 0.5);
        let a_r = steering_vector(0.5, 6, 0.5);
        let a_t = steering_vector(0.5, 4, 0.5);
        let direct = &a_r * a_t.adjoint();
        assert!(fro_norm(&(&h - &direct)) < 1e-14);
    }

    #[test]
    fn config_round_trip() {
        let sc = toy_scenario();
        let text = sc.to_config_string();
        let back = Scenario::from_config_string(&text).unwrap();
        assert_eq!(back.grid, sc.grid);
        assert_eq!(back.array, sc.array);
        assert_eq!(back.users, sc.users);
        assert_eq!(back.ghosts.len(), sc.ghosts.len());
        assert!((back.targets[0].velocity[0] - sc.targets[0].velocity[0]).abs() < 1e-9);
        assert!((back.sensing_eves[0].angle - sc.sensing_eves[0].angle).abs() < 1e-12);
    }

    #[test]
    fn config_rejects_garbage() {
        assert!(Scenario::from_config_string("grid.n_subcarriers").is_err());
        assert!(Scenario::from_config_string("grid.n_subcarriers = banana").is_err());
    }

    #[test]
    fn ghost_at_target_angle_rejected() {
        let mut sc = toy_scenario();
        sc.ghosts[0].angle = sc.targets[0].aod;
        assert!(sc.validate().is_err());
    }
}
