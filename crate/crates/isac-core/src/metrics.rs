//! Closed-form performance and security metrics of a beamformer design:
//! per-block sensing SNR, peak/integrated sidelobe levels, eavesdropper
//! reference rate, user rates, comm-eve rates and secrecy rates.
//!
//! All rates are base-2 logarithms (bits/s/Hz); steering vectors are
//! unit-norm, so array-gain constants are absorbed relative to formulations
//! written with unnormalized steering.

use crate::cmat::logdet_pd;
use crate::radar::expected_af;
use crate::scenario::{comm_channel, eve_reference_channel, steering_vector, GhostSpec, Scenario};
use crate::waveform::{resolve_path, BeamformerDesign};
use crate::{CMatrix, Complex64};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("degenerate design: zero mainlobe power")]
    ZeroMainlobe,
    #[error(transparent)]
    Waveform(#[from] crate::waveform::WaveformError),
}

const LN2: f64 = std::f64::consts::LN_2;

/// Per-block post-matched-filter sensing SNR at the BS for one target:
/// `|beta|^2 ||a_r||^2 a_t^H (sum_k W_k) a_t / sigma_r^2` with unit-norm
/// steering (`||a_r||^2 = 1`).
pub fn bs_sensing_snr_block(
    w_sum: &CMatrix,
    path_gain_sq: f64,
    aod: f64,
    sigma_r2: f64,
    spacing: f64,
) -> f64 {
    let a_t = steering_vector(aod, w_sum.nrows(), spacing);
    let beam = (a_t.adjoint() * w_sum * &a_t)[(0, 0)].re.max(0.0);
    path_gain_sq * beam / sigma_r2
}

/// Per-block sensing SNR over all blocks for target `l`.
pub fn bs_sensing_snr(
    design: &BeamformerDesign,
    scenario: &Scenario,
    target_idx: usize,
) -> Result<Vec<f64>, MetricsError> {
    let resolved = resolve_path(scenario, target_idx, crate::scenario::Receiver::Bs)?;
    let g2 = resolved.path_gain.norm_sqr();
    let aod = scenario.targets[target_idx].aod;
    Ok((0..design.n_blocks())
        .map(|b| {
            bs_sensing_snr_block(
                &design.w_sum(b),
                g2,
                aod,
                scenario.noise_power_radar,
                scenario.array.element_spacing,
            )
        })
        .collect())
}

/// Peak sidelobe level of ghost `g` for target `l`:
/// `|chi(dl_g, dn_g, theta_l, theta_g)|^2 / |chi(0,0,theta_l,theta_l)|^2`.
pub fn psl(
    w_bar: &[CMatrix],
    q_bar: &[CMatrix],
    n_subcarriers: usize,
    n_symbols: usize,
    spacing: f64,
    target_aod: f64,
    ghost: &GhostSpec,
) -> Result<f64, MetricsError> {
    let mainlobe = expected_af(
        w_bar, q_bar, n_subcarriers, n_symbols, spacing, 0, 0, target_aod, target_aod,
    )
    .norm_sqr();
    if mainlobe <= 0.0 {
        return Err(MetricsError::ZeroMainlobe);
    }
    let ghost_power = expected_af(
        w_bar,
        q_bar,
        n_subcarriers,
        n_symbols,
        spacing,
        ghost.delta_delay_bin as i64,
        ghost.delta_doppler_bin as i64,
        target_aod,
        ghost.angle,
    )
    .norm_sqr();
    Ok(ghost_power / mainlobe)
}

/// Integrated sidelobe level for target `l`: total `|chi|^2` over every
/// `(delta_ell, delta_nu, theta_hat)` cell except the joint mainlobe
/// `(0, 0, theta_l)`, divided by the mainlobe power.
///
/// Uses Parseval over the offset grid: the sum of `|chi|^2` over all offsets
/// at one angle equals `N_c N_s sum_b |a^H C_b a_hat|^2`.
pub fn isl(
    w_bar: &[CMatrix],
    q_bar: &[CMatrix],
    n_subcarriers: usize,
    n_symbols: usize,
    spacing: f64,
    target_aod: f64,
    angle_grid: &[f64],
) -> Result<f64, MetricsError> {
    let n_tx = w_bar[0].nrows();
    let a = steering_vector(target_aod, n_tx, spacing);
    let mainlobe = expected_af(
        w_bar, q_bar, n_subcarriers, n_symbols, spacing, 0, 0, target_aod, target_aod,
    );
    let mainlobe_p = mainlobe.norm_sqr();
    if mainlobe_p <= 0.0 {
        return Err(MetricsError::ZeroMainlobe);
    }
    let n_blocks = (n_subcarriers * n_symbols) as f64;
    let mut acc = 0.0;
    for &theta_hat in angle_grid {
        let a_hat = steering_vector(theta_hat, n_tx, spacing);
        let mut block_energy = 0.0;
        let mut zero_offset = Complex64::new(0.0, 0.0);
        for b in 0..w_bar.len() {
            let c = &w_bar[b] + &q_bar[b];
            let quad = (a.adjoint() * c * &a_hat)[(0, 0)];
            block_energy += quad.norm_sqr();
            zero_offset += quad;
        }
        acc += n_blocks * block_energy;
        if (theta_hat - target_aod).abs() < 1e-9 {
            acc -= zero_offset.norm_sqr();
        }
    }
    Ok(acc / mainlobe_p)
}

/// Average reference-signal rate of a hypothetical sensing eve at `angle`:
/// `(1/(N_c N_s)) sum_b log2 det(I + H W_b H^H (H Q_b H^H + sigma^2 I)^{-1})`
/// with the distance-free channel `H = a_r(angle) a_t^H(angle)`.
#[allow(clippy::too_many_arguments)]
pub fn eve_reference_rate(
    w_bar: &[CMatrix],
    q_bar: &[CMatrix],
    angle: f64,
    n_eve_antennas: usize,
    n_tx: usize,
    spacing: f64,
    sigma_c2: f64,
) -> f64 {
    let h = eve_reference_channel(angle, n_eve_antennas, n_tx, spacing);
    rate_sum(&h, w_bar, q_bar, sigma_c2) / (w_bar.len() as f64)
}

/// `sum_b [ln det(H (W_b + Q_b) H^H + s I) - ln det(H Q_b H^H + s I)] / ln 2`.
fn rate_sum(h: &CMatrix, w_bar: &[CMatrix], q_bar: &[CMatrix], sigma2: f64) -> f64 {
    let m = h.nrows();
    let eye = CMatrix::identity(m, m).scale(sigma2);
    let mut acc = 0.0;
    for b in 0..w_bar.len() {
        let signal = h * (&w_bar[b] + &q_bar[b]) * h.adjoint() + &eye;
        let noise = h * &q_bar[b] * h.adjoint() + &eye;
        let num = logdet_pd(&crate::cmat::hermitize(&signal)).expect("PD by sigma^2 I");
        let den = logdet_pd(&crate::cmat::hermitize(&noise)).expect("PD by sigma^2 I");
        acc += num - den;
    }
    acc / LN2
}

/// Average user rate with explicit per-block channels:
/// `(1/B) sum_b [ln det(H(sum W + Q)H^H + s I) - ln det(H(sum_{k' != k} W + Q)H^H + s I)] / ln 2`.
pub fn rate_with_channels(
    h_blocks: &[CMatrix],
    design: &BeamformerDesign,
    user_k: usize,
    sigma2: f64,
) -> f64 {
    let n_blocks = design.n_blocks();
    assert_eq!(h_blocks.len(), n_blocks);
    let m = h_blocks[0].nrows();
    let eye = CMatrix::identity(m, m).scale(sigma2);
    let mut acc = 0.0;
    for b in 0..n_blocks {
        let h = &h_blocks[b];
        let mut interf = design.q(b).clone();
        for k in 0..design.n_users {
            if k != user_k {
                interf += design.w(b, k);
            }
        }
        let total = &interf + design.w(b, user_k);
        let num = h * total * h.adjoint() + &eye;
        let den = h * interf * h.adjoint() + &eye;
        acc += logdet_pd(&crate::cmat::hermitize(&num)).expect("PD by sigma^2 I")
            - logdet_pd(&crate::cmat::hermitize(&den)).expect("PD by sigma^2 I");
    }
    acc / (n_blocks as f64 * LN2)
}

/// Average data rate of user `k` under the scenario's LoS channels.
pub fn user_rate(design: &BeamformerDesign, scenario: &Scenario, user_k: usize) -> f64 {
    let user = &scenario.users[user_k];
    let h_blocks: Vec<CMatrix> = (0..scenario.grid.n_subcarriers)
        .flat_map(|n_c| {
            (0..scenario.grid.n_symbols).map(move |n_s| (n_c, n_s))
        })
        .map(|(n_c, n_s)| comm_channel(scenario, user, n_c, n_s))
        .collect();
    rate_with_channels(&h_blocks, design, user_k, scenario.noise_power_comm)
}

/// Rate at which comm eve `m_c` intercepts user `k`'s stream, using the
/// distance-free angular channel.
pub fn comm_eve_rate(
    design: &BeamformerDesign,
    scenario: &Scenario,
    user_k: usize,
    eve_m: usize,
) -> f64 {
    let eve = &scenario.comm_eves[eve_m];
    let h = eve_reference_channel(eve.angle, eve.n_antennas, scenario.array.n_tx, scenario.array.element_spacing);
    let h_blocks = vec![h; design.n_blocks()];
    rate_with_channels(&h_blocks, design, user_k, scenario.noise_power_comm)
}

/// Worst-case secrecy rate of user `k`: `min_mc [C_k - C_{k,mc}]^+`.
/// With no comm eves configured this degenerates to `C_k`.
pub fn secrecy_rate(design: &BeamformerDesign, scenario: &Scenario, user_k: usize) -> f64 {
    let c_k = user_rate(design, scenario, user_k);
    if scenario.comm_eves.is_empty() {
        return c_k;
    }
    (0..scenario.comm_eves.len())
        .map(|m| (c_k - comm_eve_rate(design, scenario, user_k, m)).max(0.0))
        .fold(f64::INFINITY, f64::min)
}

/// All metrics of one design in one pass.
#[derive(Debug, Clone)]
pub struct MetricReport {
    /// `[target][block]` sensing SNR (linear).
    pub sensing_snr: Vec<Vec<f64>>,
    /// Minimum over targets and blocks: the achieved SNR floor (linear).
    pub min_snr: f64,
    /// `[target][ghost]` PSL (linear).
    pub psl: Vec<Vec<f64>>,
    /// Per-target ISL (linear).
    pub isl: Vec<f64>,
    /// Per sensing eve (bits/s/Hz).
    pub eve_ref_rates: Vec<f64>,
    /// Per user (bits/s/Hz).
    pub user_rates: Vec<f64>,
    /// `[user][comm eve]` (bits/s/Hz).
    pub comm_eve_rates: Vec<Vec<f64>>,
    /// Per user (bits/s/Hz).
    pub secrecy_rates: Vec<f64>,
    pub total_power: f64,
}

impl MetricReport {
    pub fn csv_header() -> String {
        "min_snr,min_snr_db,max_psl,min_psl,min_isl,max_eve_ref_rate,min_user_rate,min_secrecy_rate,total_power\n".into()
    }

    /// Flat CSV row for sweep tabulation.
    pub fn to_csv_row(&self) -> String {
        let max_psl = self.psl.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min_psl = self.psl.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
        let min_isl = self.isl.iter().cloned().fold(f64::INFINITY, f64::min);
        let max_eve = self.eve_ref_rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min_user = self.user_rates.iter().cloned().fold(f64::INFINITY, f64::min);
        let min_secrecy = self.secrecy_rates.iter().cloned().fold(f64::INFINITY, f64::min);
        format!(
            "{:.9e},{:.4},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}\n",
            self.min_snr,
            crate::lin_to_db(self.min_snr.max(1e-300)),
            max_psl,
            min_psl,
            min_isl,
            max_eve,
            min_user,
            min_secrecy,
            self.total_power
        )
    }
}

/// Evaluate every metric of `design` under `scenario`; `isl_angle_grid` is
/// the angle set the ISL is summed over.
pub fn full_report(
    design: &BeamformerDesign,
    scenario: &Scenario,
    isl_angle_grid: &[f64],
) -> Result<MetricReport, MetricsError> {
    let spacing = scenario.array.element_spacing;
    let (n_c, n_s) = (scenario.grid.n_subcarriers, scenario.grid.n_symbols);
    let w_bar: Vec<CMatrix> = (0..design.n_blocks()).map(|b| design.w_sum(b)).collect();
    let q_bar: Vec<CMatrix> = (0..design.n_blocks()).map(|b| design.q(b).clone()).collect();

    let mut sensing_snr = Vec::new();
    let mut psl_all = Vec::new();
    let mut isl_all = Vec::new();
    for (l, target) in scenario.targets.iter().enumerate() {
        sensing_snr.push(bs_sensing_snr(design, scenario, l)?);
        let mut per_ghost = Vec::new();
        for ghost in &scenario.ghosts {
            per_ghost.push(psl(&w_bar, &q_bar, n_c, n_s, spacing, target.aod, ghost)?);
        }
        psl_all.push(per_ghost);
        isl_all.push(isl(&w_bar, &q_bar, n_c, n_s, spacing, target.aod, isl_angle_grid)?);
    }
    let min_snr = sensing_snr
        .iter()
        .flatten()
        .cloned()
        .fold(f64::INFINITY, f64::min);

    let eve_ref_rates = scenario
        .sensing_eves
        .iter()
        .map(|e| {
            eve_reference_rate(
                &w_bar,
                &q_bar,
                e.angle,
                e.n_antennas,
                scenario.array.n_tx,
                spacing,
                scenario.noise_power_comm,
            )
        })
        .collect();

    let user_rates: Vec<f64> =
        (0..scenario.users.len()).map(|k| user_rate(design, scenario, k)).collect();
    let comm_eve_rates: Vec<Vec<f64>> = (0..scenario.users.len())
        .map(|k| {
            (0..scenario.comm_eves.len())
                .map(|m| comm_eve_rate(design, scenario, k, m))
                .collect()
        })
        .collect();
    let secrecy_rates: Vec<f64> =
        (0..scenario.users.len()).map(|k| secrecy_rate(design, scenario, k)).collect();

    Ok(MetricReport {
        sensing_snr,
        min_snr,
        psl: psl_all,
        isl: isl_all,
        eve_ref_rates,
        user_rates,
        comm_eve_rates,
        secrecy_rates,
        total_power: design.total_power(),
    })
}
