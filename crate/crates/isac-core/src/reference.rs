//! Independent reference implementations used as oracles by the validation
//! command and the test suites.
//!
//! Everything here is written as plain scalar loops, deliberately sharing no
//! code with the production paths it cross-checks.

use crate::rng::SeedRng;
use crate::waveform::TransmitCube;
use crate::{CMatrix, CVector, Complex64};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::PI;

/// Matched-filter output at one (angle, delay, Doppler) hypothesis as the
/// explicit triple sum over transmit antennas, subcarriers and symbols.
pub fn mf_triple_sum(
    echo: &CMatrix,
    reference: &TransmitCube,
    theta_hat: f64,
    spacing: f64,
    ell_hat: usize,
    nu_hat: usize,
) -> Complex64 {
    let n_c = echo.nrows();
    let n_s = echo.ncols();
    let n_t = reference.n_tx;
    let scale = 1.0 / (n_t as f64).sqrt();
    let mut acc = Complex64::new(0.0, 0.0);
    for nt in 0..n_t {
        // conj of the steering element: exp(-j 2 pi s sin(theta) n) stays as-is
        // because the reference is conjugated entrywise below.
        let steer = Complex64::from_polar(scale, -2.0 * PI * spacing * theta_hat.sin() * nt as f64);
        for nc in 0..n_c {
            let ph_c = Complex64::from_polar(1.0, 2.0 * PI * ell_hat as f64 * nc as f64 / n_c as f64);
            for ns in 0..n_s {
                let ph_s =
                    Complex64::from_polar(1.0, -2.0 * PI * nu_hat as f64 * ns as f64 / n_s as f64);
                let x = reference.block(nc, ns)[nt];
                acc += echo[(nc, ns)] * x.conj() * steer * ph_c * ph_s;
            }
        }
    }
    acc
}

/// Expected ambiguity function evaluated as a fully scalar loop (no matrix
/// products): `sum_b ph_b * a(theta)^H (W_b + Q_b) a(theta_hat)`.
#[allow(clippy::too_many_arguments)]
pub fn af_scalar_loop(
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
    let n_t = w_bar[0].nrows();
    let scale = 1.0 / n_t as f64; // 1/sqrt(n) twice
    let mut acc = Complex64::new(0.0, 0.0);
    for nc in 0..n_subcarriers {
        for ns in 0..n_symbols {
            let b = nc * n_symbols + ns;
            let ph = Complex64::from_polar(
                1.0,
                -2.0 * PI * delta_ell as f64 * nc as f64 / n_subcarriers as f64
                    + 2.0 * PI * delta_nu as f64 * ns as f64 / n_symbols as f64,
            );
            let mut quad = Complex64::new(0.0, 0.0);
            for p in 0..n_t {
                let ap = Complex64::from_polar(1.0, -2.0 * PI * spacing * theta.sin() * p as f64);
                for q in 0..n_t {
                    let aq =
                        Complex64::from_polar(1.0, -2.0 * PI * spacing * theta_hat.sin() * q as f64);
                    let c = w_bar[b][(p, q)] + q_bar[b][(p, q)];
                    quad += ap.conj() * c * aq;
                }
            }
            acc += ph * quad * scale;
        }
    }
    acc
}

/// Integrated sidelobe sum as a brute-force double loop over all offsets and
/// grid angles, excluding the joint mainlobe cell.
#[allow(clippy::too_many_arguments)]
pub fn isl_double_loop(
    w_bar: &[CMatrix],
    q_bar: &[CMatrix],
    n_subcarriers: usize,
    n_symbols: usize,
    spacing: f64,
    theta: f64,
    angle_grid: &[f64],
) -> f64 {
    let mainlobe = af_scalar_loop(
        w_bar, q_bar, n_subcarriers, n_symbols, spacing, 0, 0, theta, theta,
    )
    .norm_sqr();
    let mut acc = 0.0;
    for &theta_hat in angle_grid {
        for d_ell in 0..n_subcarriers {
            for d_nu in 0..n_symbols {
                if d_ell == 0 && d_nu == 0 && (theta_hat - theta).abs() < 1e-9 {
                    continue;
                }
                acc += af_scalar_loop(
                    w_bar,
                    q_bar,
                    n_subcarriers,
                    n_symbols,
                    spacing,
                    d_ell as i64,
                    d_nu as i64,
                    theta,
                    theta_hat,
                )
                .norm_sqr();
            }
        }
    }
    acc / mainlobe
}

/// Monte-Carlo estimate of the expected matched-filter output.
pub struct McEstimate {
    pub mean: Complex64,
    /// Standard error of the complex mean: `sqrt(E|chi - mean|^2 / M)`.
    pub std_error: f64,
    pub n_draws: usize,
}

/// Draw QPSK symbols and artificial noise, synthesize a unit-gain noiseless
/// echo from a target on bins (0, 0), run the single-point matched filter
/// at offsets `(delta_ell, delta_nu)`, and average.
///
/// `w_vecs[b]` holds the per-user beamforming vectors of block `b`.
#[allow(clippy::too_many_arguments)]
pub fn mc_expected_af_multi(
    w_vecs: &[Vec<CVector>],
    q_bar: &[CMatrix],
    n_subcarriers: usize,
    n_symbols: usize,
    spacing: f64,
    delta_ell: i64,
    delta_nu: i64,
    theta: f64,
    theta_hat: f64,
    n_draws: usize,
    seed: SeedRng,
) -> McEstimate {
    let n_t = q_bar[0].nrows();
    let sqrts: Vec<CMatrix> = q_bar.iter().map(crate::cmat::psd_sqrt).collect();
    let mut rng = seed.rng();
    let s2 = 1.0 / 2f64.sqrt();
    // Processing bins equivalent to offsets (delta_ell, delta_nu) for a
    // target at (0, 0); the phase ramps are periodic in the grid.
    let ell_hat = (-delta_ell).rem_euclid(n_subcarriers as i64) as usize;
    let nu_hat = (-delta_nu).rem_euclid(n_symbols as i64) as usize;
    let mut sum = Complex64::new(0.0, 0.0);
    let mut sum_sq = 0.0;
    let mut values = Vec::with_capacity(n_draws);
    for _ in 0..n_draws {
        let mut chi = Complex64::new(0.0, 0.0);
        for nc in 0..n_subcarriers {
            for ns in 0..n_symbols {
                let b = nc * n_symbols + ns;
                // x = sum_k w_k s_k + q
                let mut x = CVector::zeros(n_t);
                for w in &w_vecs[b] {
                    let s = Complex64::new(
                        if rng.random::<bool>() { -s2 } else { s2 },
                        if rng.random::<bool>() { -s2 } else { s2 },
                    );
                    x += w * s;
                }
                let g = CVector::from_fn(n_t, |_, _| {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    Complex64::new(re / 2f64.sqrt(), im / 2f64.sqrt())
                });
                x += &sqrts[b] * g;
                // Echo scalar with unit gain at bins (0, 0).
                let mut y = Complex64::new(0.0, 0.0);
                let mut r = Complex64::new(0.0, 0.0);
                for nt in 0..n_t {
                    let a_l = Complex64::from_polar(
                        1.0 / (n_t as f64).sqrt(),
                        -2.0 * PI * spacing * theta.sin() * nt as f64,
                    );
                    let a_h = Complex64::from_polar(
                        1.0 / (n_t as f64).sqrt(),
                        -2.0 * PI * spacing * theta_hat.sin() * nt as f64,
                    );
                    y += a_l.conj() * x[nt]; // a(theta)^H x
                    r += a_h.conj() * x[nt]; // a(theta_hat)^H x
                }
                let ph = Complex64::from_polar(
                    1.0,
                    2.0 * PI * ell_hat as f64 * nc as f64 / n_subcarriers as f64
                        - 2.0 * PI * nu_hat as f64 * ns as f64 / n_symbols as f64,
                );
                chi += y * r.conj() * ph;
            }
        }
        values.push(chi);
        sum += chi;
    }
    let mean = sum / Complex64::new(n_draws as f64, 0.0);
    for v in &values {
        sum_sq += (v - mean).norm_sqr();
    }
    let variance = sum_sq / (n_draws as f64 - 1.0);
    McEstimate { mean, std_error: (variance / n_draws as f64).sqrt(), n_draws }
}

/// Single-user convenience wrapper around [`mc_expected_af_multi`].
#[allow(clippy::too_many_arguments)]
pub fn mc_expected_af(
    w_vecs: &[CVector],
    q_bar: &[CMatrix],
    n_subcarriers: usize,
    n_symbols: usize,
    spacing: f64,
    delta_ell: i64,
    delta_nu: i64,
    theta: f64,
    theta_hat: f64,
    n_draws: usize,
    seed: SeedRng,
) -> McEstimate {
    let wrapped: Vec<Vec<CVector>> = w_vecs.iter().map(|w| vec![w.clone()]).collect();
    mc_expected_af_multi(
        &wrapped,
        q_bar,
        n_subcarriers,
        n_symbols,
        spacing,
        delta_ell,
        delta_nu,
        theta,
        theta_hat,
        n_draws,
        seed,
    )
}

/// Maximize `c^T x` over `{A x <= b}` by enumerating basic feasible points
/// (vertex enumeration). Only for tiny LPs; returns `None` when unbounded or
/// infeasible over the enumerated vertices.
pub fn lp_vertex_enumeration(
    a: &nalgebra::DMatrix<f64>,
    b: &nalgebra::DVector<f64>,
    c: &nalgebra::DVector<f64>,
) -> Option<(nalgebra::DVector<f64>, f64)> {
    let m = a.nrows();
    let n = a.ncols();
    assert!(n <= 4, "vertex enumeration only for dimension <= 4");
    let mut best: Option<(nalgebra::DVector<f64>, f64)> = None;
    let mut idx = vec![0usize; n];
    fn combos(m: usize, k: usize, start: usize, idx: &mut Vec<usize>, pos: usize, out: &mut Vec<Vec<usize>>) {
        if pos == k {
            out.push(idx.clone());
            return;
        }
        for i in start..m {
            idx[pos] = i;
            combos(m, k, i + 1, idx, pos + 1, out);
        }
    }
    let mut sets = Vec::new();
    combos(m, n, 0, &mut idx, 0, &mut sets);
    for set in sets {
        let mut a_sub = nalgebra::DMatrix::zeros(n, n);
        let mut b_sub = nalgebra::DVector::zeros(n);
        for (r, &i) in set.iter().enumerate() {
            for j in 0..n {
                a_sub[(r, j)] = a[(i, j)];
            }
            b_sub[r] = b[i];
        }
        let lu = a_sub.lu();
        let Some(x) = lu.solve(&b_sub) else { continue };
        // Feasibility with a tolerance relative to the data scale.
        let ax = a * &x;
        let feasible = (0..m).all(|i| ax[i] <= b[i] + 1e-9 * (1.0 + b[i].abs()));
        if feasible {
            let val = c.dot(&x);
            if best.as_ref().map(|(_, v)| val > *v).unwrap_or(true) {
                best = Some((x, val));
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn vertex_enumeration_box() {
        // max x + y over the unit box.
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]);
        let b = DVector::from_vec(vec![1.0, 0.0, 1.0, 0.0]);
        let c = DVector::from_vec(vec![1.0, 1.0]);
        let (x, v) = lp_vertex_enumeration(&a, &b, &c).unwrap();
        assert!((v - 2.0).abs() < 1e-9);
        assert!((x[0] - 1.0).abs() < 1e-9 && (x[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn vertex_enumeration_simplex() {
        // max 2x + 3y st x,y >= 0, x + y <= 1.
        let a = DMatrix::from_row_slice(3, 2, &[-1.0, 0.0, 0.0, -1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        let c = DVector::from_vec(vec![2.0, 3.0]);
        let (_, v) = lp_vertex_enumeration(&a, &b, &c).unwrap();
        assert!((v - 3.0).abs() < 1e-9);
    }
}
