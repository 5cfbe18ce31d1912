//! Radar signal processing: three-dimensional matched filtering across
//! angle/delay/Doppler, expected ambiguity-function evaluation, map
//! rendering, and CA-CFAR detection.
//!
//! Conventions (consistent with the echo model): a target on bins
//! `(ell, nu)` observed at processing bins `(ell_hat, nu_hat)` contributes
//! the ambiguity value at offsets `delta_ell = ell - ell_hat`,
//! `delta_nu = nu - nu_hat`, both modulo the grid.

use crate::scenario::steering_vector;
use crate::waveform::{EchoFrame, TransmitCube};
use crate::{CMatrix, Complex64};
use nalgebra::DMatrix;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RadarError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("map {rows}x{cols} smaller than CFAR window {wr}x{wc}")]
    WindowTooLarge { rows: usize, cols: usize, wr: usize, wc: usize },
    #[error("degenerate design: zero mainlobe power")]
    ZeroMainlobe,
}

/// Complex matched-filter output over (angle, delay bin, Doppler bin).
#[derive(Debug, Clone)]
pub struct AngleDelayDopplerCube {
    pub angle_grid: Vec<f64>,
    pub n_subcarriers: usize,
    pub n_symbols: usize,
    /// One `N_c x N_s` slice per angle-grid index.
    pub slices: Vec<CMatrix>,
}

impl AngleDelayDopplerCube {
    /// `|chi|^2` slice at one angle index.
    pub fn power_slice(&self, angle_idx: usize) -> DMatrix<f64> {
        self.slices[angle_idx].map(|z| z.norm_sqr())
    }

    /// Per-cell maximum of `|chi|^2` over all angles.
    pub fn max_power_map(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_subcarriers, self.n_symbols);
        for s in &self.slices {
            for i in 0..self.n_subcarriers {
                for j in 0..self.n_symbols {
                    let p = s[(i, j)].norm_sqr();
                    if p > m[(i, j)] {
                        m[(i, j)] = p;
                    }
                }
            }
        }
        m
    }

    /// Index of the strongest cell: `(angle_idx, delay_bin, doppler_bin)`.
    pub fn argmax(&self) -> (usize, usize, usize) {
        let mut best = (0, 0, 0);
        let mut best_v = f64::NEG_INFINITY;
        for (a, s) in self.slices.iter().enumerate() {
            for i in 0..self.n_subcarriers {
                for j in 0..self.n_symbols {
                    let v = s[(i, j)].norm_sqr();
                    if v > best_v {
                        best_v = v;
                        best = (a, i, j);
                    }
                }
            }
        }
        best
    }
}

/// Default 1-degree angle grid over [-90, 90] degrees.
pub fn default_angle_grid() -> Vec<f64> {
    (-90..=90).map(|d| (d as f64).to_radians()).collect()
}

fn dft_matrix(n: usize) -> CMatrix {
    CMatrix::from_fn(n, n, |m, k| {
        Complex64::from_polar(1.0, -2.0 * PI * (m * k) as f64 / n as f64)
    })
}

/// Three-dimensional matched filter in DFT-matrix form:
/// `chi_theta = F_Nc^H (Y (.) conj(R_theta)) F_Ns` with per-block reference
/// `R_theta[n_c, n_s] = a_t(theta)^H x_hat_{n_c,n_s}`.
pub fn matched_filter(
    echo: &EchoFrame,
    reference: &TransmitCube,
    angle_grid: &[f64],
    spacing: f64,
) -> Result<AngleDelayDopplerCube, RadarError> {
    let n_c = echo.values.nrows();
    let n_s = echo.values.ncols();
    if reference.n_subcarriers != n_c || reference.n_symbols != n_s {
        return Err(RadarError::Shape(format!(
            "echo {}x{} vs reference {}x{}",
            n_c, n_s, reference.n_subcarriers, reference.n_symbols
        )));
    }
    let f_c = dft_matrix(n_c);
    let f_s = dft_matrix(n_s);
    let f_c_h = f_c.adjoint();
    let slices = angle_grid
        .iter()
        .map(|&theta| {
            let a = steering_vector(theta, reference.n_tx, spacing);
            let mut z = CMatrix::zeros(n_c, n_s);
            for i in 0..n_c {
                for j in 0..n_s {
                    let r = a.dotc(reference.block(i, j)); // a^H x
                    z[(i, j)] = echo.values[(i, j)] * r.conj();
                }
            }
            &f_c_h * z * &f_s
        })
        .collect();
    Ok(AngleDelayDopplerCube {
        angle_grid: angle_grid.to_vec(),
        n_subcarriers: n_c,
        n_symbols: n_s,
        slices,
    })
}

/// Expected ambiguity function of a design at delay/Doppler offsets
/// `(delta_ell, delta_nu)` and angle pair `(theta, theta_hat)`:
///
/// `chi = sum_b exp(-j 2 pi n_c d_ell / N_c) exp(j 2 pi n_s d_nu / N_s)
///        a_t(theta)^H (W_b + Q_b) a_t(theta_hat)`.
#[allow(clippy::too_many_arguments)]
pub fn expected_af(
    w_bar: &[CMatrix],
    q_bar: &[CMatrix],
    n_subcarriers: usize,
    n_symbols: usize,
    spacing: f64,
    delta_ell: i64,
    delta_nu: i64,
    theta: f64,
    theta_hat: f64,
) -> Complex64 {
    assert_eq!(w_bar.len(), n_subcarriers * n_symbols);
    assert_eq!(q_bar.len(), w_bar.len());
    let n_tx = w_bar[0].nrows();
    let a = steering_vector(theta, n_tx, spacing);
    let a_hat = steering_vector(theta_hat, n_tx, spacing);
    let mut acc = Complex64::new(0.0, 0.0);
    for n_c in 0..n_subcarriers {
        let ph_c = Complex64::from_polar(
            1.0,
            -2.0 * PI * delta_ell as f64 * n_c as f64 / n_subcarriers as f64,
        );
        for n_s in 0..n_symbols {
            let b = n_c * n_symbols + n_s;
            let ph_s = Complex64::from_polar(
                1.0,
                2.0 * PI * delta_nu as f64 * n_s as f64 / n_symbols as f64,
            );
            let c = &w_bar[b] + &q_bar[b];
            let quad = (a.adjoint() * &c * &a_hat)[(0, 0)];
            acc += ph_c * ph_s * quad;
        }
    }
    acc
}

/// Stacked-trace evaluation of the expected AF:
/// `Tr((I (x) a(theta_hat)) (D_ell (x) D_nu) (I (x) a(theta))^H C_stack)`
/// with `C_stack = blkdiag(W_b + Q_b)`. Agrees with [`expected_af`]; kept as
/// an alternative route for cross-checks.
#[allow(clippy::too_many_arguments)]
pub fn expected_af_stacked(
    w_bar: &[CMatrix],
    q_bar: &[CMatrix],
    n_subcarriers: usize,
    n_symbols: usize,
    spacing: f64,
    delta_ell: i64,
    delta_nu: i64,
    theta: f64,
    theta_hat: f64,
) -> Complex64 {
    let n_blocks = n_subcarriers * n_symbols;
    let n_tx = w_bar[0].nrows();
    let dim = n_blocks * n_tx;
    let a = steering_vector(theta, n_tx, spacing);
    let a_hat = steering_vector(theta_hat, n_tx, spacing);
    let mut m = CMatrix::zeros(dim, dim);
    let mut c_stack = CMatrix::zeros(dim, dim);
    for n_c in 0..n_subcarriers {
        for n_s in 0..n_symbols {
            let b = n_c * n_symbols + n_s;
            let ph = Complex64::from_polar(
                1.0,
                -2.0 * PI * delta_ell as f64 * n_c as f64 / n_subcarriers as f64
                    + 2.0 * PI * delta_nu as f64 * n_s as f64 / n_symbols as f64,
            );
            let outer = (&a_hat * a.adjoint()).scale(1.0) * ph;
            let c = &w_bar[b] + &q_bar[b];
            for i in 0..n_tx {
                for j in 0..n_tx {
                    m[(b * n_tx + i, b * n_tx + j)] = outer[(i, j)];
                    c_stack[(b * n_tx + i, b * n_tx + j)] = c[(i, j)];
                }
            }
        }
    }
    crate::cmat::trace_prod(&m, &c_stack)
}

/// Delay-Doppler map: `|chi(d_ell, d_nu, theta, theta)|^2` over all offsets,
/// normalized by the mainlobe cell `(0, 0)`.
pub fn dd_map(
    w_bar: &[CMatrix],
    q_bar: &[CMatrix],
    n_subcarriers: usize,
    n_symbols: usize,
    spacing: f64,
    theta: f64,
) -> Result<DMatrix<f64>, RadarError> {
    let n_tx = w_bar[0].nrows();
    let a = steering_vector(theta, n_tx, spacing);
    // chi(d_ell, d_nu) is the 2-D DFT of the per-block quadratic forms.
    let mut c = CMatrix::zeros(n_subcarriers, n_symbols);
    for n_c in 0..n_subcarriers {
        for n_s in 0..n_symbols {
            let b = n_c * n_symbols + n_s;
            let cov = &w_bar[b] + &q_bar[b];
            c[(n_c, n_s)] = (a.adjoint() * cov * &a)[(0, 0)];
        }
    }
    let mut map = DMatrix::zeros(n_subcarriers, n_symbols);
    for d_ell in 0..n_subcarriers {
        for d_nu in 0..n_symbols {
            let mut acc = Complex64::new(0.0, 0.0);
            for n_c in 0..n_subcarriers {
                for n_s in 0..n_symbols {
                    let ph = Complex64::from_polar(
                        1.0,
                        -2.0 * PI * (d_ell * n_c) as f64 / n_subcarriers as f64
                            + 2.0 * PI * (d_nu * n_s) as f64 / n_symbols as f64,
                    );
                    acc += ph * c[(n_c, n_s)];
                }
            }
            map[(d_ell, d_nu)] = acc.norm_sqr();
        }
    }
    let mainlobe = map[(0, 0)];
    if mainlobe <= 0.0 {
        return Err(RadarError::ZeroMainlobe);
    }
    Ok(map.map(|v| v / mainlobe))
}

/// Delay-angle map: `|chi(d_ell, d_nu_fixed, theta, theta_hat)|^2` over
/// `(d_ell, theta_hat in angle_grid)`, normalized by the mainlobe
/// `chi(0, 0, theta, theta)`.
#[allow(clippy::too_many_arguments)]
pub fn da_map(
    w_bar: &[CMatrix],
    q_bar: &[CMatrix],
    n_subcarriers: usize,
    n_symbols: usize,
    spacing: f64,
    theta: f64,
    delta_nu_fixed: i64,
    angle_grid: &[f64],
) -> Result<DMatrix<f64>, RadarError> {
    let mainlobe = expected_af(
        w_bar,
        q_bar,
        n_subcarriers,
        n_symbols,
        spacing,
        0,
        0,
        theta,
        theta,
    )
    .norm_sqr();
    if mainlobe <= 0.0 {
        return Err(RadarError::ZeroMainlobe);
    }
    let mut map = DMatrix::zeros(n_subcarriers, angle_grid.len());
    for d_ell in 0..n_subcarriers {
        for (ai, &theta_hat) in angle_grid.iter().enumerate() {
            let v = expected_af(
                w_bar,
                q_bar,
                n_subcarriers,
                n_symbols,
                spacing,
                d_ell as i64,
                delta_nu_fixed,
                theta,
                theta_hat,
            )
            .norm_sqr();
            map[(d_ell, ai)] = v / mainlobe;
        }
    }
    Ok(map)
}

/// CA-CFAR configuration; training and guard counts are per dimension
/// (delay, Doppler).
#[derive(Debug, Clone, Copy)]
pub struct CfarConfig {
    pub p_fa: f64,
    pub training: [usize; 2],
    pub guard: [usize; 2],
}

impl Default for CfarConfig {
    fn default() -> Self {
        CfarConfig { p_fa: 1e-5, training: [4, 4], guard: [2, 2] }
    }
}

impl CfarConfig {
    /// Number of training cells in the hollow-rectangle window.
    pub fn n_training_cells(&self) -> usize {
        let outer = (2 * (self.guard[0] + self.training[0]) + 1)
            * (2 * (self.guard[1] + self.training[1]) + 1);
        let inner = (2 * self.guard[0] + 1) * (2 * self.guard[1] + 1);
        outer - inner
    }

    /// Cell-averaging threshold factor `alpha = T (p_fa^{-1/T} - 1)`.
    pub fn threshold_factor(&self) -> f64 {
        let t = self.n_training_cells() as f64;
        t * (self.p_fa.powf(-1.0 / t) - 1.0)
    }

    fn validate(&self, rows: usize, cols: usize) -> Result<(), RadarError> {
        assert!(self.p_fa > 0.0 && self.p_fa < 1.0);
        assert!(self.training[0] >= 1 || self.training[1] >= 1);
        let wr = 2 * (self.guard[0] + self.training[0]) + 1;
        let wc = 2 * (self.guard[1] + self.training[1]) + 1;
        if wr > rows || wc > cols {
            return Err(RadarError::WindowTooLarge { rows, cols, wr, wc });
        }
        Ok(())
    }
}

/// One CFAR detection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub delay_bin: usize,
    pub doppler_bin: usize,
    pub magnitude: f64,
}

/// Output of the CFAR detector.
#[derive(Debug, Clone, Default)]
pub struct DetectionReport {
    pub detections: Vec<Detection>,
}

impl DetectionReport {
    pub fn total(&self) -> usize {
        self.detections.len()
    }

    pub fn contains_bin(&self, delay_bin: usize, doppler_bin: usize) -> bool {
        self.detections
            .iter()
            .any(|d| d.delay_bin == delay_bin && d.doppler_bin == doppler_bin)
    }
}

/// Cell-averaging CFAR on a non-negative power map with circular
/// (wrap-around) training windows.
pub fn ca_cfar_2d(map: &DMatrix<f64>, config: &CfarConfig) -> Result<DetectionReport, RadarError> {
    let rows = map.nrows();
    let cols = map.ncols();
    config.validate(rows, cols)?;
    debug_assert!(map.iter().all(|v| *v >= 0.0), "CFAR input must be non-negative");
    let alpha = config.threshold_factor();
    let span = [
        (config.guard[0] + config.training[0]) as i64,
        (config.guard[1] + config.training[1]) as i64,
    ];
    let guard = [config.guard[0] as i64, config.guard[1] as i64];
    let mut detections = Vec::new();
    for i in 0..rows as i64 {
        for j in 0..cols as i64 {
            let mut acc = 0.0;
            let mut n = 0usize;
            for di in -span[0]..=span[0] {
                for dj in -span[1]..=span[1] {
                    if di.abs() <= guard[0] && dj.abs() <= guard[1] {
                        continue;
                    }
                    let r = (i + di).rem_euclid(rows as i64) as usize;
                    let c = (j + dj).rem_euclid(cols as i64) as usize;
                    acc += map[(r, c)];
                    n += 1;
                }
            }
            debug_assert_eq!(n, config.n_training_cells());
            let threshold = alpha * acc / n as f64;
            let v = map[(i as usize, j as usize)];
            if v > threshold {
                detections.push(Detection {
                    delay_bin: i as usize,
                    doppler_bin: j as usize,
                    magnitude: v,
                });
            }
        }
    }
    Ok(DetectionReport { detections })
}

/// Correct-detection probability: detected true targets over total
/// detections (true, ghost and false alarms alike).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdProbability {
    pub probability: f64,
    /// No detections at all: the ratio is undefined and reported as 0.
    pub undefined: bool,
    pub true_hits: usize,
    pub ghost_hits: usize,
    pub total: usize,
}

pub fn correct_detection_probability(
    report: &DetectionReport,
    true_bins: &[(usize, usize)],
    ghost_bins: &[(usize, usize)],
) -> CdProbability {
    let total = report.total();
    if total == 0 {
        return CdProbability { probability: 0.0, undefined: true, true_hits: 0, ghost_hits: 0, total: 0 };
    }
    let mut true_hits = 0;
    let mut ghost_hits = 0;
    for d in &report.detections {
        let cell = (d.delay_bin, d.doppler_bin);
        if true_bins.contains(&cell) {
            true_hits += 1;
        } else if ghost_bins.contains(&cell) {
            ghost_hits += 1;
        }
    }
    CdProbability {
        probability: true_hits as f64 / total as f64,
        undefined: false,
        true_hits,
        ghost_hits,
        total,
    }
}

/// Render a map as CSV, row-major with a header row of Doppler bins.
pub fn map_to_csv(map: &DMatrix<f64>) -> String {
    let mut s = String::from("delay_bin");
    for j in 0..map.ncols() {
        s.push_str(&format!(",col{j}"));
    }
    s.push('\n');
    for i in 0..map.nrows() {
        s.push_str(&i.to_string());
        for j in 0..map.ncols() {
            s.push_str(&format!(",{:.17e}", map[(i, j)]));
        }
        s.push('\n');
    }
    s
}

/// Render a map as a 16-bit binary portable graymap (P5), dB-scaled with a
/// floor (default -40 dB) relative to the map maximum.
pub fn map_to_pgm(map: &DMatrix<f64>, floor_db: f64) -> Vec<u8> {
    let rows = map.nrows();
    let cols = map.ncols();
    let peak = map.iter().cloned().fold(0.0f64, f64::max).max(1e-300);
    let mut out = format!("P5\n{cols} {rows}\n65535\n").into_bytes();
    for i in 0..rows {
        for j in 0..cols {
            let db = 10.0 * (map[(i, j)] / peak).max(1e-300).log10();
            let clamped = db.clamp(floor_db, 0.0);
            let v = ((clamped - floor_db) / (-floor_db) * 65535.0).round() as u16;
            out.extend_from_slice(&v.to_be_bytes());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmat::{hermitize, outer};
    use crate::rng::SeedRng;
    use crate::scenario::presets::desk_scenario;
    use crate::scenario::Receiver;
    use crate::waveform::{complex_gaussian_vector, synthesize_echo, EchoOptions};
    use rand::Rng;

    fn random_psd_blocks(n_blocks: usize, d: usize, seed: u64) -> Vec<CMatrix> {
        let mut rng = SeedRng::seed(seed).rng();
        (0..n_blocks)
            .map(|_| {
                let m = CMatrix::from_fn(d, d, |_, _| {
                    Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                });
                &m * m.adjoint()
            })
            .collect()
    }

    fn random_cube(n_c: usize, n_s: usize, n_t: usize, seed: u64) -> TransmitCube {
        let mut rng = SeedRng::seed(seed).rng();
        let blocks = (0..n_c * n_s)
            .map(|_| complex_gaussian_vector(n_t, 1.0, &mut rng))
            .collect();
        TransmitCube::from_blocks(n_c, n_s, blocks)
    }

    #[test]
    fn zero_echo_gives_zero_cube() {
        let echo = EchoFrame { values: CMatrix::zeros(4, 2), noise_power: 0.0 };
        let reference = random_cube(4, 2, 2, 1);
        let cube = matched_filter(&echo, &reference, &[0.0, 0.3], 0.5).unwrap();
        for s in &cube.slices {
            assert!(crate::cmat::fro_norm(s) < 1e-15);
        }
    }

    #[test]
    fn dft_form_equals_triple_sum_small() {
        let echo = EchoFrame {
            values: CMatrix::from_fn(4, 2, |i, j| {
                Complex64::new((i as f64) - 0.5 * j as f64, 0.2 * (i + j) as f64)
            }),
            noise_power: 0.0,
        };
        let reference = random_cube(4, 2, 2, 2);
        let angles = [0.15, -0.4];
        let cube = matched_filter(&echo, &reference, &angles, 0.5).unwrap();
        for (ai, &theta) in angles.iter().enumerate() {
            for ell in 0..4 {
                for nu in 0..2 {
                    let direct = crate::reference::mf_triple_sum(
                        &echo.values,
                        &reference,
                        theta,
                        0.5,
                        ell,
                        nu,
                    );
                    let got = cube.slices[ai][(ell, nu)];
                    assert!(
                        (got - direct).norm() <= 1e-9 * (1.0 + direct.norm()),
                        "({ai},{ell},{nu}): {got} vs {direct}"
                    );
                }
            }
        }
    }

    #[test]
    fn single_target_peak_at_true_cell() {
        let sc = desk_scenario();
        let cube_tx = random_cube(sc.grid.n_subcarriers, sc.grid.n_symbols, sc.array.n_tx, 3);
        let echo = synthesize_echo(
            &sc,
            &cube_tx,
            Receiver::Bs,
            SeedRng::seed(0),
            EchoOptions { noiseless: true, allow_off_grid: false },
        )
        .unwrap();
        let grid = default_angle_grid();
        let mf = matched_filter(&echo, &cube_tx, &grid, sc.array.element_spacing).unwrap();
        let (ai, ell, nu) = mf.argmax();
        assert_eq!((ell, nu), (2, 1));
        let best_angle = grid[ai];
        assert!((best_angle - sc.targets[0].aod).abs() < 2f64.to_radians());
    }

    #[test]
    fn expected_af_zero_design_is_zero() {
        let w = vec![CMatrix::zeros(2, 2); 8];
        let q = vec![CMatrix::zeros(2, 2); 8];
        let v = expected_af(&w, &q, 4, 2, 0.5, 1, 1, 0.2, 0.5);
        assert!(v.norm() < 1e-15);
    }

    #[test]
    fn expected_af_mainlobe_real_nonnegative() {
        let w = random_psd_blocks(8, 3, 4);
        let q = random_psd_blocks(8, 3, 5);
        let v = expected_af(&w, &q, 4, 2, 0.5, 0, 0, 0.3, 0.3);
        assert!(v.im.abs() < 1e-10 * v.re.abs());
        assert!(v.re >= 0.0);
    }

    #[test]
    fn expected_af_per_block_equals_stacked() {
        let w = random_psd_blocks(8, 2, 6);
        let q = random_psd_blocks(8, 2, 7);
        for &(dl, dn, t, th) in &[(0i64, 0i64, 0.3, 0.3), (1, 1, 0.3, -0.2), (3, 1, -0.7, 0.5)] {
            let a = expected_af(&w, &q, 4, 2, 0.5, dl, dn, t, th);
            let b = expected_af_stacked(&w, &q, 4, 2, 0.5, dl, dn, t, th);
            assert!((a - b).norm() <= 1e-10 * (1.0 + a.norm()), "{a} vs {b}");
        }
    }

    #[test]
    fn expected_af_conjugate_symmetry() {
        let w = random_psd_blocks(8, 3, 8);
        let q = random_psd_blocks(8, 3, 9);
        let (t, th) = (0.4, -0.3);
        let a = expected_af(&w, &q, 4, 2, 0.5, 2, 1, t, th);
        let b = expected_af(&w, &q, 4, 2, 0.5, -2, -1, th, t);
        assert!((b - a.conj()).norm() < 1e-10 * (1.0 + a.norm()));
    }

    #[test]
    fn expected_af_scales_linearly() {
        let w = random_psd_blocks(8, 3, 10);
        let q = random_psd_blocks(8, 3, 11);
        let a = expected_af(&w, &q, 4, 2, 0.5, 1, 1, 0.1, 0.6);
        let w2: Vec<CMatrix> = w.iter().map(|m| m.scale(2.5)).collect();
        let q2: Vec<CMatrix> = q.iter().map(|m| m.scale(2.5)).collect();
        let b = expected_af(&w2, &q2, 4, 2, 0.5, 1, 1, 0.1, 0.6);
        assert!((b - a * 2.5).norm() < 1e-10 * (1.0 + b.norm()));
    }

    #[test]
    fn dd_map_mainlobe_cell_is_one_and_isotropic_design_is_clean() {
        let n_blocks = 8;
        let w: Vec<CMatrix> = (0..n_blocks).map(|_| CMatrix::identity(3, 3).scale(0.7)).collect();
        let q = vec![CMatrix::zeros(3, 3); n_blocks];
        let map = dd_map(&w, &q, 4, 2, 0.5, 0.3).unwrap();
        assert!((map[(0, 0)] - 1.0).abs() < 1e-12);
        for i in 0..4 {
            for j in 0..2 {
                if (i, j) != (0, 0) {
                    assert!(map[(i, j)] < 1e-20, "sidelobe ({i},{j}) = {}", map[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn dd_map_normalization_scale_invariant() {
        let w = random_psd_blocks(8, 3, 12);
        let q = random_psd_blocks(8, 3, 13);
        let m1 = dd_map(&w, &q, 4, 2, 0.5, 0.2).unwrap();
        let w2: Vec<CMatrix> = w.iter().map(|m| m.scale(3.3)).collect();
        let q2: Vec<CMatrix> = q.iter().map(|m| m.scale(3.3)).collect();
        let m2 = dd_map(&w2, &q2, 4, 2, 0.5, 0.2).unwrap();
        assert!((&m1 - &m2).abs().max() < 1e-10);
    }

    #[test]
    fn dd_map_zero_design_errors() {
        let w = vec![CMatrix::zeros(2, 2); 8];
        let q = vec![CMatrix::zeros(2, 2); 8];
        assert!(matches!(dd_map(&w, &q, 4, 2, 0.5, 0.1), Err(RadarError::ZeroMainlobe)));
    }

    #[test]
    fn da_map_matches_pointwise_expected_af() {
        let w = random_psd_blocks(8, 2, 14);
        let q = random_psd_blocks(8, 2, 15);
        let angles = [0.0, 0.3, -0.5];
        let map = da_map(&w, &q, 4, 2, 0.5, 0.3, 1, &angles).unwrap();
        let mainlobe = expected_af(&w, &q, 4, 2, 0.5, 0, 0, 0.3, 0.3).norm_sqr();
        for (ai, &th) in angles.iter().enumerate() {
            for d_ell in 0..4 {
                let v = expected_af(&w, &q, 4, 2, 0.5, d_ell as i64, 1, 0.3, th).norm_sqr();
                assert!((map[(d_ell, ai)] - v / mainlobe).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cfar_constant_map_no_detections() {
        let map = DMatrix::from_element(16, 16, 3.0);
        let cfg = CfarConfig { p_fa: 1e-5, training: [4, 4], guard: [2, 2] };
        let report = ca_cfar_2d(&map, &cfg).unwrap();
        assert_eq!(report.total(), 0);
    }

    #[test]
    fn cfar_detects_isolated_peak() {
        let mut rng = SeedRng::seed(77).rng();
        let mut hits = 0;
        let trials = 200;
        let cfg = CfarConfig { p_fa: 1e-5, training: [4, 4], guard: [2, 2] };
        for _ in 0..trials {
            let mut map = DMatrix::from_fn(16, 16, |_, _| {
                // unit-mean exponential noise (square-law detector)
                -(1.0 - rng.random::<f64>()).ln()
            });
            map[(8, 8)] = 100.0;
            let report = ca_cfar_2d(&map, &cfg).unwrap();
            if report.contains_bin(8, 8) {
                hits += 1;
            }
        }
        assert!(hits as f64 / trials as f64 >= 0.99, "hit rate {}", hits as f64 / trials as f64);
    }

    #[test]
    fn cfar_window_too_large_errors() {
        let map = DMatrix::from_element(8, 4, 1.0);
        let cfg = CfarConfig { p_fa: 1e-5, training: [4, 4], guard: [2, 2] };
        assert!(matches!(ca_cfar_2d(&map, &cfg), Err(RadarError::WindowTooLarge { .. })));
    }

    #[test]
    fn cd_probability_arithmetic() {
        let report = DetectionReport {
            detections: vec![
                Detection { delay_bin: 2, doppler_bin: 1, magnitude: 1.0 },
                Detection { delay_bin: 5, doppler_bin: 3, magnitude: 0.5 },
                Detection { delay_bin: 6, doppler_bin: 0, magnitude: 0.4 },
                Detection { delay_bin: 7, doppler_bin: 2, magnitude: 0.3 },
            ],
        };
        let p = correct_detection_probability(&report, &[(2, 1)], &[(5, 3), (6, 0), (7, 2)]);
        assert!((p.probability - 0.25).abs() < 1e-15);
        assert_eq!(p.true_hits, 1);
        assert_eq!(p.ghost_hits, 3);

        let only_true = DetectionReport {
            detections: vec![Detection { delay_bin: 2, doppler_bin: 1, magnitude: 1.0 }],
        };
        let p = correct_detection_probability(&only_true, &[(2, 1)], &[]);
        assert!((p.probability - 1.0).abs() < 1e-15);

        let ghosts_only = DetectionReport {
            detections: vec![Detection { delay_bin: 5, doppler_bin: 3, magnitude: 1.0 }],
        };
        let p = correct_detection_probability(&ghosts_only, &[(2, 1)], &[(5, 3)]);
        assert!(p.probability == 0.0 && !p.undefined);

        let empty = DetectionReport::default();
        let p = correct_detection_probability(&empty, &[(2, 1)], &[]);
        assert!(p.probability == 0.0 && p.undefined);
    }

    #[test]
    fn pgm_has_valid_header_and_size() {
        let map = DMatrix::from_fn(4, 3, |i, j| (i + j) as f64);
        let pgm = map_to_pgm(&map, -40.0);
        let header_end = pgm.windows(6).position(|w| w == b"65535\n").unwrap() + 6;
        assert!(pgm.starts_with(b"P5\n3 4\n"));
        assert_eq!(pgm.len() - header_end, 4 * 3 * 2);
    }

    #[test]
    fn csv_round_trips_dimensions() {
        let map = DMatrix::from_fn(3, 2, |i, j| i as f64 + 10.0 * j as f64);
        let csv = map_to_csv(&map);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("delay_bin,"));
    }

    #[test]
    fn mc_mean_of_mf_approaches_trace_form() {
        // Small Monte-Carlo version of the expectation-consistency check.
        let n_c = 4;
        let n_s = 2;
        let n_t = 2;
        let n_blocks = n_c * n_s;
        let mut rng = SeedRng::seed(99).rng();
        // Rank-one W per block plus isotropic AN.
        let w_vecs: Vec<crate::CVector> =
            (0..n_blocks).map(|_| complex_gaussian_vector(n_t, 1.0, &mut rng)).collect();
        let w_bar: Vec<CMatrix> = w_vecs.iter().map(outer2).collect();
        let q_bar: Vec<CMatrix> = (0..n_blocks)
            .map(|_| hermitize(&CMatrix::identity(n_t, n_t).scale(0.3)))
            .collect();
        let theta = 0.25;
        let theta_hat = -0.15;
        let (d_ell, d_nu) = (1i64, 1i64);
        let expected = expected_af(&w_bar, &q_bar, n_c, n_s, 0.5, d_ell, d_nu, theta, theta_hat);
        let m = 20_000;
        let mc = crate::reference::mc_expected_af(
            &w_vecs, &q_bar, n_c, n_s, 0.5, d_ell, d_nu, theta, theta_hat, m,
            SeedRng::seed(123),
        );
        let err = (mc.mean - expected).norm();
        assert!(
            err <= 4.0 * mc.std_error,
            "MC mean {} vs trace form {} (err {err}, se {})",
            mc.mean,
            expected,
            mc.std_error
        );
    }

    fn outer2(v: &crate::CVector) -> CMatrix {
        outer(v, v)
    }
}
