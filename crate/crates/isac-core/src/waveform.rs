//! Symbol and artificial-noise generation, transmit-block assembly, and
//! frequency-domain reception models for the BS, sensing eves and
//! communication users.
//!
//! Resource blocks are indexed `b = n_c * N_s + n_s` throughout.

use crate::cmat::{hermitize, psd_sqrt, pseudo_inverse};
use crate::rng::SeedRng;
use crate::scenario::{
    bistatic_geometry, steering_vector, to_grid_bins, Receiver, Scenario, ScenarioError,
};
use crate::{CMatrix, CVector, Complex64};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WaveformError {
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("target {target} is off-grid for this receiver (residuals {delay_residual:.3e}, {doppler_residual:.3e} bins); pass allow_off_grid to snap")]
    OffGrid { target: usize, delay_residual: f64, doppler_residual: f64 },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}

/// Per-user beamforming covariances and per-block AN covariances — the full
/// design the optimizer produces and every metric consumes.
#[derive(Debug, Clone)]
pub struct BeamformerDesign {
    pub n_subcarriers: usize,
    pub n_symbols: usize,
    pub n_users: usize,
    pub n_tx: usize,
    /// `W_{n_c,n_s,k}`, indexed `block * n_users + k`.
    w: Vec<CMatrix>,
    /// `Q_{n_c,n_s}`, indexed by block.
    q: Vec<CMatrix>,
    /// Rank-one beamforming vectors recovered by Gaussian randomization,
    /// indexed like `w`.
    pub w_vectors: Option<Vec<CVector>>,
}

impl BeamformerDesign {
    pub fn new(
        n_subcarriers: usize,
        n_symbols: usize,
        n_users: usize,
        n_tx: usize,
        w: Vec<CMatrix>,
        q: Vec<CMatrix>,
    ) -> Self {
        let n_blocks = n_subcarriers * n_symbols;
        assert_eq!(w.len(), n_blocks * n_users);
        assert_eq!(q.len(), n_blocks);
        BeamformerDesign { n_subcarriers, n_symbols, n_users, n_tx, w, q, w_vectors: None }
    }

    pub fn zeros(n_subcarriers: usize, n_symbols: usize, n_users: usize, n_tx: usize) -> Self {
        let n_blocks = n_subcarriers * n_symbols;
        BeamformerDesign {
            n_subcarriers,
            n_symbols,
            n_users,
            n_tx,
            w: vec![CMatrix::zeros(n_tx, n_tx); n_blocks * n_users],
            q: vec![CMatrix::zeros(n_tx, n_tx); n_blocks],
            w_vectors: None,
        }
    }

    pub fn n_blocks(&self) -> usize {
        self.n_subcarriers * self.n_symbols
    }

    pub fn block_index(&self, n_c: usize, n_s: usize) -> usize {
        debug_assert!(n_c < self.n_subcarriers && n_s < self.n_symbols);
        n_c * self.n_symbols + n_s
    }

    pub fn w(&self, block: usize, user: usize) -> &CMatrix {
        &self.w[block * self.n_users + user]
    }

    pub fn w_mut(&mut self, block: usize, user: usize) -> &mut CMatrix {
        &mut self.w[block * self.n_users + user]
    }

    pub fn q(&self, block: usize) -> &CMatrix {
        &self.q[block]
    }

    pub fn q_mut(&mut self, block: usize) -> &mut CMatrix {
        &mut self.q[block]
    }

    /// Sum of the per-user beamforming covariances on one block.
    pub fn w_sum(&self, block: usize) -> CMatrix {
        let mut acc = CMatrix::zeros(self.n_tx, self.n_tx);
        for k in 0..self.n_users {
            acc += self.w(block, k);
        }
        acc
    }

    /// `W_sum + Q` on one block: the covariance of the transmitted vector.
    pub fn total_covariance(&self, block: usize) -> CMatrix {
        self.w_sum(block) + self.q(block)
    }

    pub fn total_power(&self) -> f64 {
        let mut p = 0.0;
        for b in 0..self.n_blocks() {
            for k in 0..self.n_users {
                p += self.w(b, k).diagonal().iter().map(|z| z.re).sum::<f64>();
            }
            p += self.q(b).diagonal().iter().map(|z| z.re).sum::<f64>();
        }
        p
    }

    /// Largest relative PSD violation over all stored covariances:
    /// `max(-lambda_min / max(trace, eps))`.
    pub fn psd_violation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        let mut check = |m: &CMatrix| {
            let tr: f64 = m.diagonal().iter().map(|z| z.re).sum();
            let min = crate::cmat::min_eigenvalue(m);
            worst = worst.max(-min / tr.max(1e-300));
        };
        for m in &self.w {
            check(m);
        }
        for m in &self.q {
            check(m);
        }
        worst
    }

    pub fn scale(&mut self, factor: f64) {
        for m in &mut self.w {
            *m *= Complex64::new(factor, 0.0);
        }
        for m in &mut self.q {
            *m *= Complex64::new(factor, 0.0);
        }
        if let Some(vs) = &mut self.w_vectors {
            for v in vs {
                *v *= Complex64::new(factor.sqrt(), 0.0);
            }
        }
    }

    pub fn hermitize_in_place(&mut self) {
        for m in &mut self.w {
            *m = hermitize(m);
        }
        for m in &mut self.q {
            *m = hermitize(m);
        }
    }
}

/// One QPSK symbol drawn from the Gray-mapped unit-energy constellation.
fn qpsk(rng: &mut impl Rng) -> Complex64 {
    let b0 = rng.random::<bool>();
    let b1 = rng.random::<bool>();
    let s = 1.0 / 2f64.sqrt();
    Complex64::new(if b0 { -s } else { s }, if b1 { -s } else { s })
}

/// Draw per-block QPSK symbol vectors for `k_users` users; one `K`-vector per
/// resource block, indexed `n_c * N_s + n_s`.
pub fn draw_symbol_blocks(
    k_users: usize,
    n_subcarriers: usize,
    n_symbols: usize,
    seed: SeedRng,
) -> Vec<CVector> {
    assert!(k_users >= 1);
    let mut rng = seed.rng();
    (0..n_subcarriers * n_symbols)
        .map(|_| CVector::from_fn(k_users, |_, _| qpsk(&mut rng)))
        .collect()
}

/// Zero-mean circular complex Gaussian vector with covariance `Q`, via the
/// Hermitian PSD square root.
pub fn draw_artificial_noise(q: &CMatrix, seed: SeedRng) -> CVector {
    AnSampler::new(std::slice::from_ref(q)).draw(0, &mut seed.rng())
}

/// Reusable AN sampler: precomputes the PSD square roots of a set of
/// covariances so Monte-Carlo loops avoid per-draw eigendecompositions.
pub struct AnSampler {
    sqrts: Vec<CMatrix>,
}

impl AnSampler {
    pub fn new(covariances: &[CMatrix]) -> Self {
        AnSampler { sqrts: covariances.iter().map(psd_sqrt).collect() }
    }

    pub fn for_design(design: &BeamformerDesign) -> Self {
        let covs: Vec<CMatrix> = (0..design.n_blocks()).map(|b| design.q(b).clone()).collect();
        Self::new(&covs)
    }

    pub fn draw(&self, block: usize, rng: &mut impl Rng) -> CVector {
        let s = &self.sqrts[block];
        let g = complex_gaussian_vector(s.ncols(), 1.0, rng);
        s * g
    }
}

/// Complex Gaussian vector with per-entry variance `variance`, split equally
/// between real and imaginary parts.
pub fn complex_gaussian_vector(n: usize, variance: f64, rng: &mut impl Rng) -> CVector {
    let s = (variance / 2.0).sqrt();
    CVector::from_fn(n, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        Complex64::new(s * re, s * im)
    })
}

/// Assemble one transmit vector `x = sum_k w_k s_k + q`.
pub fn transmit_block(w_vectors: &[CVector], symbols: &CVector, an: &CVector) -> CVector {
    assert_eq!(w_vectors.len(), symbols.len());
    let mut x = an.clone();
    for (k, w) in w_vectors.iter().enumerate() {
        x += w * symbols[k];
    }
    x
}

/// The transmitted frame: one `N_t` vector per resource block.
#[derive(Debug, Clone)]
pub struct TransmitCube {
    pub n_subcarriers: usize,
    pub n_symbols: usize,
    pub n_tx: usize,
    blocks: Vec<CVector>,
}

impl TransmitCube {
    pub fn zeros(n_subcarriers: usize, n_symbols: usize, n_tx: usize) -> Self {
        TransmitCube {
            n_subcarriers,
            n_symbols,
            n_tx,
            blocks: vec![CVector::zeros(n_tx); n_subcarriers * n_symbols],
        }
    }

    pub fn block(&self, n_c: usize, n_s: usize) -> &CVector {
        &self.blocks[n_c * self.n_symbols + n_s]
    }

    pub fn block_mut(&mut self, n_c: usize, n_s: usize) -> &mut CVector {
        &mut self.blocks[n_c * self.n_symbols + n_s]
    }

    pub fn from_blocks(n_subcarriers: usize, n_symbols: usize, blocks: Vec<CVector>) -> Self {
        assert_eq!(blocks.len(), n_subcarriers * n_symbols);
        let n_tx = blocks[0].len();
        TransmitCube { n_subcarriers, n_symbols, n_tx, blocks }
    }

    /// Frobenius norm over all blocks.
    pub fn norm(&self) -> f64 {
        self.blocks.iter().map(|b| b.norm_squared()).sum::<f64>().sqrt()
    }
}

/// Sample one transmitted frame from a design that carries rank-one vectors:
/// per block, `x = sum_k w_k s_k + q` with fresh symbols and AN.
pub fn sample_transmit_cube(
    design: &BeamformerDesign,
    an: &AnSampler,
    seed: SeedRng,
) -> (TransmitCube, Vec<CVector>) {
    let w_vecs = design
        .w_vectors
        .as_ref()
        .expect("sample_transmit_cube needs rank-one vectors");
    let symbols = draw_symbol_blocks(design.n_users, design.n_subcarriers, design.n_symbols, seed.derive(&[1]));
    let mut cube = TransmitCube::zeros(design.n_subcarriers, design.n_symbols, design.n_tx);
    for n_c in 0..design.n_subcarriers {
        for n_s in 0..design.n_symbols {
            let b = design.block_index(n_c, n_s);
            let mut rng = seed.derive(&[2, b as u64]).rng();
            let q = an.draw(b, &mut rng);
            let ws: Vec<CVector> =
                (0..design.n_users).map(|k| w_vecs[b * design.n_users + k].clone()).collect();
            *cube.block_mut(n_c, n_s) = transmit_block(&ws, &symbols[b], &q);
        }
    }
    (cube, symbols)
}

/// Frequency-domain echo at one receiver.
#[derive(Debug, Clone)]
pub struct EchoFrame {
    /// `Y[n_c, n_s]` after receive combining.
    pub values: CMatrix,
    pub noise_power: f64,
}

impl EchoFrame {
    pub fn export_csv(&self) -> String {
        let mut s = String::from("n_c,n_s,re,im\n");
        for n_c in 0..self.values.nrows() {
            for n_s in 0..self.values.ncols() {
                let v = self.values[(n_c, n_s)];
                s.push_str(&format!("{n_c},{n_s},{:.17e},{:.17e}\n", v.re, v.im));
            }
        }
        s
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EchoOptions {
    pub noiseless: bool,
    /// Snap off-grid bistatic bins to the nearest cell instead of failing.
    pub allow_off_grid: bool,
}

impl Default for EchoOptions {
    fn default() -> Self {
        EchoOptions { noiseless: false, allow_off_grid: false }
    }
}

/// Per-receiver view of one target: complex gain and grid bins.
#[derive(Debug, Clone, Copy)]
pub struct ResolvedPath {
    pub path_gain: Complex64,
    pub delay_bin: usize,
    pub doppler_bin: usize,
    pub off_grid: bool,
}

/// Resolve a target's bistatic gain and grid bins for a receiver.
pub fn resolve_path(
    scenario: &Scenario,
    target_idx: usize,
    receiver: Receiver,
) -> Result<ResolvedPath, WaveformError> {
    let target = &scenario.targets[target_idx];
    let (pos, vel) = match receiver {
        Receiver::Bs => ([0.0, 0.0], [0.0, 0.0]),
        Receiver::SensingEve(i) => (scenario.sensing_eves[i].position, [0.0, 0.0]),
    };
    let path = bistatic_geometry(scenario, target, pos, vel)?;
    let bins = to_grid_bins(path.delay, path.doppler, &scenario.grid)?;
    Ok(ResolvedPath {
        path_gain: path.path_gain,
        delay_bin: bins.delay_bin,
        doppler_bin: bins.doppler_bin,
        off_grid: bins.off_grid,
    })
}

/// Synthesize the frequency-domain echo `Y = sum_l beta_l D_l X_l D_nu + N`
/// seen by `receiver` after spatial filtering, from the transmitted cube.
pub fn synthesize_echo(
    scenario: &Scenario,
    cube: &TransmitCube,
    receiver: Receiver,
    seed: SeedRng,
    opts: EchoOptions,
) -> Result<EchoFrame, WaveformError> {
    let grid = &scenario.grid;
    if cube.n_subcarriers != grid.n_subcarriers || cube.n_symbols != grid.n_symbols {
        return Err(WaveformError::Shape(format!(
            "cube is {}x{}, grid is {}x{}",
            cube.n_subcarriers, cube.n_symbols, grid.n_subcarriers, grid.n_symbols
        )));
    }
    let n_c_total = grid.n_subcarriers;
    let n_s_total = grid.n_symbols;
    let mut y = CMatrix::zeros(n_c_total, n_s_total);
    for (t_idx, target) in scenario.targets.iter().enumerate() {
        let resolved = resolve_path(scenario, t_idx, receiver)?;
        if resolved.off_grid && !opts.allow_off_grid {
            let (pos, vel) = match receiver {
                Receiver::Bs => ([0.0, 0.0], [0.0, 0.0]),
                Receiver::SensingEve(i) => (scenario.sensing_eves[i].position, [0.0, 0.0]),
            };
            let path = bistatic_geometry(scenario, target, pos, vel)?;
            let bins = to_grid_bins(path.delay, path.doppler, grid)?;
            return Err(WaveformError::OffGrid {
                target: t_idx,
                delay_residual: bins.delay_residual,
                doppler_residual: bins.doppler_residual,
            });
        }
        let a_t = steering_vector(target.aod, scenario.array.n_tx, scenario.array.element_spacing);
        for n_c in 0..n_c_total {
            let d_ell = Complex64::from_polar(
                1.0,
                -2.0 * PI * resolved.delay_bin as f64 * n_c as f64 / n_c_total as f64,
            );
            for n_s in 0..n_s_total {
                let d_nu = Complex64::from_polar(
                    1.0,
                    2.0 * PI * resolved.doppler_bin as f64 * n_s as f64 / n_s_total as f64,
                );
                let filtered = a_t.dotc(cube.block(n_c, n_s)); // a_t^H x
                y[(n_c, n_s)] += resolved.path_gain * d_ell * filtered * d_nu;
            }
        }
    }
    if !opts.noiseless {
        let mut rng = seed.derive(&[0xec50]).rng();
        let sigma = scenario.noise_power_radar;
        for v in y.iter_mut() {
            let s = (sigma / 2.0).sqrt();
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *v += Complex64::new(s * re, s * im);
        }
    }
    Ok(EchoFrame { values: y, noise_power: scenario.noise_power_radar })
}

/// Minimum-variance-unbiased recovery of the transmit vector from a
/// reference observation `y = H x + n`.
///
/// Full column rank: `(H^H H)^{-1} H^H y`. Rank deficient (the rank-one
/// line-of-sight reference channel): pseudo-inverse fallback, flagged.
pub fn mvu_reference_recovery(y_ref: &CVector, h_ref: &CMatrix) -> (CVector, bool) {
    let gram = h_ref.adjoint() * h_ref;
    let svd = nalgebra::SVD::new(h_ref.clone(), false, false);
    let smax = svd.singular_values.max();
    let rank_ok = svd
        .singular_values
        .iter()
        .all(|s| *s > 1e-10 * smax.max(1e-300));
    if rank_ok && h_ref.nrows() >= h_ref.ncols() {
        if let Some(l) = crate::cmat::cholesky_pd(&gram) {
            return (crate::cmat::chol_solve_vec(&l, &(h_ref.adjoint() * y_ref)), false);
        }
    }
    (pseudo_inverse(h_ref, 1e-10) * y_ref, true)
}

/// Received signal at a user or comm eve, decomposed into labeled parts.
#[derive(Debug, Clone)]
pub struct ReceivedComponents {
    pub desired: CVector,
    pub multi_user_interference: CVector,
    pub artificial_noise: CVector,
    pub awgn: CVector,
}

impl ReceivedComponents {
    pub fn total(&self) -> CVector {
        &self.desired + &self.multi_user_interference + &self.artificial_noise + &self.awgn
    }
}

/// Receive `y = H (W s + q) + n` for user `k`, keeping the desired /
/// interference / AN / noise parts separate. Their sum is the exact
/// received vector.
pub fn comm_receive(
    h: &CMatrix,
    w_vectors: &[CVector],
    user_k: usize,
    symbols: &CVector,
    an: &CVector,
    noise_power: f64,
    seed: SeedRng,
) -> ReceivedComponents {
    assert_eq!(w_vectors.len(), symbols.len());
    let desired = h * (&w_vectors[user_k] * symbols[user_k]);
    let mut interference = CVector::zeros(h.nrows());
    for (k, w) in w_vectors.iter().enumerate() {
        if k != user_k {
            interference += h * (w * symbols[k]);
        }
    }
    let artificial_noise = h * an;
    let mut rng = seed.rng();
    let awgn = if noise_power > 0.0 {
        complex_gaussian_vector(h.nrows(), noise_power, &mut rng)
    } else {
        CVector::zeros(h.nrows())
    };
    ReceivedComponents { desired, multi_user_interference: interference, artificial_noise, awgn }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmat::{fro_norm, outer};
    use crate::scenario::presets::desk_scenario;

    #[test]
    fn qpsk_symbols_unit_modulus_and_deterministic() {
        let a = draw_symbol_blocks(1, 4, 2, SeedRng::seed(3));
        let b = draw_symbol_blocks(1, 4, 2, SeedRng::seed(3));
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x[0], y[0]);
            assert!((x[0].norm() - 1.0).abs() < 1e-12);
        }
        let c = draw_symbol_blocks(1, 4, 2, SeedRng::seed(4));
        assert!(a.iter().zip(&c).any(|(x, y)| x[0] != y[0]));
    }

    #[test]
    fn qpsk_sample_covariance_near_identity() {
        let k = 2;
        let n = 100_000;
        let blocks = draw_symbol_blocks(k, n, 2, SeedRng::seed(5));
        let mut acc = CMatrix::zeros(k, k);
        for s in blocks.iter().take(n) {
            acc += outer(s, s);
        }
        acc /= Complex64::new(n as f64, 0.0);
        let err = fro_norm(&(&acc - CMatrix::identity(k, k)));
        assert!(err <= 0.02, "covariance error {err}");
    }

    #[test]
    fn an_zero_covariance_gives_zero() {
        let q = CMatrix::zeros(3, 3);
        let v = draw_artificial_noise(&q, SeedRng::seed(1));
        assert!(v.norm() < 1e-15);
    }

    #[test]
    fn an_isotropic_sample_covariance() {
        let sigma2 = 0.7;
        let q = CMatrix::identity(3, 3).scale(sigma2);
        let sampler = AnSampler::new(std::slice::from_ref(&q));
        let mut rng = SeedRng::seed(11).rng();
        let n = 100_000;
        let mut acc = CMatrix::zeros(3, 3);
        for _ in 0..n {
            let v = sampler.draw(0, &mut rng);
            acc += outer(&v, &v);
        }
        acc /= Complex64::new(n as f64, 0.0);
        let err = fro_norm(&(&acc - &q)) / fro_norm(&q);
        assert!(err < 0.03, "relative covariance error {err}");
    }

    #[test]
    fn an_rank_one_draws_stay_in_range() {
        let u = CVector::from_vec(vec![
            Complex64::new(0.6, 0.0),
            Complex64::new(0.0, 0.8),
        ]);
        let q = outer(&u, &u);
        let sampler = AnSampler::new(std::slice::from_ref(&q));
        let mut rng = SeedRng::seed(12).rng();
        let u_hat = u.normalize();
        for _ in 0..50 {
            let v = sampler.draw(0, &mut rng);
            let residual = &v - &u_hat * u_hat.dotc(&v);
            assert!(residual.norm() <= 1e-10);
        }
    }

    #[test]
    fn transmit_block_trivials() {
        let e1 = CVector::from_vec(vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]);
        let s = CVector::from_vec(vec![Complex64::new(1.0, 0.0)]);
        let q = CVector::zeros(2);
        let x = transmit_block(std::slice::from_ref(&e1), &s, &q);
        assert!((&x - &e1).norm() < 1e-15);

        let s0 = CVector::from_vec(vec![Complex64::new(0.0, 0.0)]);
        let qv = CVector::from_vec(vec![Complex64::new(0.3, -0.2), Complex64::new(0.0, 1.0)]);
        let x = transmit_block(std::slice::from_ref(&e1), &s0, &qv);
        assert!((&x - &qv).norm() < 1e-15);
    }

    #[test]
    fn transmit_block_matches_scalar_loop() {
        let mut rng = SeedRng::seed(21).rng();
        let n_t = 4;
        let k = 3;
        let ws: Vec<CVector> = (0..k)
            .map(|_| complex_gaussian_vector(n_t, 1.0, &mut rng))
            .collect();
        let s = complex_gaussian_vector(k, 1.0, &mut rng);
        let q = complex_gaussian_vector(n_t, 1.0, &mut rng);
        let x = transmit_block(&ws, &s, &q);
        for i in 0..n_t {
            let mut expect = q[i];
            for (kk, w) in ws.iter().enumerate() {
                expect += w[i] * s[kk];
            }
            assert!((x[i] - expect).norm() < 1e-12);
        }
    }

    fn random_cube(scenario: &Scenario, seed: u64) -> TransmitCube {
        let grid = &scenario.grid;
        let mut rng = SeedRng::seed(seed).rng();
        let blocks = (0..grid.n_blocks())
            .map(|_| complex_gaussian_vector(scenario.array.n_tx, 1.0, &mut rng))
            .collect();
        TransmitCube::from_blocks(grid.n_subcarriers, grid.n_symbols, blocks)
    }

    #[test]
    fn echo_without_targets_is_zero() {
        let mut sc = desk_scenario();
        sc.targets.clear();
        let cube = random_cube(&sc, 31);
        let y = synthesize_echo(
            &sc,
            &cube,
            Receiver::Bs,
            SeedRng::seed(0),
            EchoOptions { noiseless: true, allow_off_grid: false },
        )
        .unwrap();
        assert!(fro_norm(&y.values) < 1e-15);
    }

    #[test]
    fn echo_zero_bins_is_scaled_filtered_cube() {
        let mut sc = desk_scenario();
        // Move the target onto bins (0, 0): zero distance is degenerate, so
        // keep the position but zero the stored/derived bins via a target at
        // delay bin 0 is impossible; instead verify against the direct
        // formula on the actual bins.
        let cube = random_cube(&sc, 32);
        sc.targets[0].velocity = [0.0, 0.0];
        sc.targets[0].radial_velocity = 0.0;
        sc.targets[0].doppler_bin = 0;
        let y = synthesize_echo(
            &sc,
            &cube,
            Receiver::Bs,
            SeedRng::seed(0),
            EchoOptions { noiseless: true, allow_off_grid: false },
        )
        .unwrap();
        let resolved = resolve_path(&sc, 0, Receiver::Bs).unwrap();
        assert_eq!(resolved.doppler_bin, 0);
        let a_t = steering_vector(sc.targets[0].aod, sc.array.n_tx, sc.array.element_spacing);
        for n_c in 0..sc.grid.n_subcarriers {
            for n_s in 0..sc.grid.n_symbols {
                let ramp = Complex64::from_polar(
                    1.0,
                    -2.0 * PI * resolved.delay_bin as f64 * n_c as f64
                        / sc.grid.n_subcarriers as f64,
                );
                let expect = resolved.path_gain * ramp * a_t.dotc(cube.block(n_c, n_s));
                assert!((y.values[(n_c, n_s)] - expect).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn echo_superposition_over_targets() {
        let sc2 = {
            let mut sc = desk_scenario();
            let mut second = sc.targets[0].clone();
            second.aod = (-20f64).to_radians();
            let d = 2.0 * SPEED_OF_LIGHT_LOCAL * sc.grid.delay_resolution();
            second.position = [d * second.aod.cos(), d * second.aod.sin()];
            second.delay_bin = 4;
            second.velocity = [0.0, 0.0];
            second.radial_velocity = 0.0;
            second.doppler_bin = 0;
            sc.targets.push(second);
            sc
        };
        let cube = random_cube(&sc2, 33);
        let opts = EchoOptions { noiseless: true, allow_off_grid: false };
        let both = synthesize_echo(&sc2, &cube, Receiver::Bs, SeedRng::seed(0), opts).unwrap();
        let mut only_first = sc2.clone();
        only_first.targets.truncate(1);
        let y1 = synthesize_echo(&only_first, &cube, Receiver::Bs, SeedRng::seed(0), opts).unwrap();
        let mut only_second = sc2.clone();
        only_second.targets.remove(0);
        let y2 = synthesize_echo(&only_second, &cube, Receiver::Bs, SeedRng::seed(0), opts).unwrap();
        let err = fro_norm(&(&both.values - &y1.values - &y2.values));
        assert!(err < 1e-12, "superposition error {err}");
    }

    const SPEED_OF_LIGHT_LOCAL: f64 = crate::SPEED_OF_LIGHT;

    #[test]
    fn echo_energy_preserved_by_unitary_ramps() {
        let sc = desk_scenario();
        let cube = random_cube(&sc, 34);
        let y = synthesize_echo(
            &sc,
            &cube,
            Receiver::Bs,
            SeedRng::seed(0),
            EchoOptions { noiseless: true, allow_off_grid: false },
        )
        .unwrap();
        let a_t = steering_vector(sc.targets[0].aod, sc.array.n_tx, sc.array.element_spacing);
        let resolved = resolve_path(&sc, 0, Receiver::Bs).unwrap();
        let mut filtered_norm2 = 0.0;
        for n_c in 0..sc.grid.n_subcarriers {
            for n_s in 0..sc.grid.n_symbols {
                filtered_norm2 += a_t.dotc(cube.block(n_c, n_s)).norm_sqr();
            }
        }
        let expect = resolved.path_gain.norm() * filtered_norm2.sqrt();
        assert!((fro_norm(&y.values) - expect).abs() / expect < 1e-12);
    }

    #[test]
    fn echo_off_grid_rejected_without_override() {
        let mut sc = desk_scenario();
        sc.targets[0].velocity[0] *= 1.37; // knock the eve doppler off grid
        let cube = random_cube(&sc, 35);
        let r = synthesize_echo(
            &sc,
            &cube,
            Receiver::SensingEve(0),
            SeedRng::seed(0),
            EchoOptions { noiseless: true, allow_off_grid: false },
        );
        assert!(matches!(r, Err(WaveformError::OffGrid { .. })));
        let r2 = synthesize_echo(
            &sc,
            &cube,
            Receiver::SensingEve(0),
            SeedRng::seed(0),
            EchoOptions { noiseless: true, allow_off_grid: true },
        );
        assert!(r2.is_ok());
    }

    #[test]
    fn mvu_identity_channel_returns_input() {
        let y = CVector::from_vec(vec![Complex64::new(1.0, 2.0), Complex64::new(-0.5, 0.1)]);
        let h = CMatrix::identity(2, 2);
        let (x, degraded) = mvu_reference_recovery(&y, &h);
        assert!(!degraded);
        assert!((&x - &y).norm() < 1e-12);
    }

    #[test]
    fn mvu_full_rank_noiseless_recovery() {
        let mut rng = SeedRng::seed(41).rng();
        let h = CMatrix::from_fn(6, 3, |_, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let x = complex_gaussian_vector(3, 1.0, &mut rng);
        let y = &h * &x;
        let (x_hat, degraded) = mvu_reference_recovery(&y, &h);
        assert!(!degraded);
        assert!((&x_hat - &x).norm() <= 1e-10);
    }

    #[test]
    fn mvu_rank_one_projects_onto_row_space() {
        let a = steering_vector(0.3, 6, 0.5);
        let b = steering_vector(0.3, 4, 0.5);
        let h = outer(&a, &b);
        let mut rng = SeedRng::seed(42).rng();
        let x = complex_gaussian_vector(4, 1.0, &mut rng);
        let y = &h * &x;
        let (x_hat, degraded) = mvu_reference_recovery(&y, &h);
        assert!(degraded);
        // Least-squares oracle: projection of x onto span(b).
        let proj = &b * b.dotc(&x);
        assert!((&x_hat - &proj).norm() < 1e-9);
    }

    #[test]
    fn comm_receive_components_recompose() {
        let mut rng = SeedRng::seed(51).rng();
        let h = CMatrix::from_fn(2, 4, |_, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let ws: Vec<CVector> = (0..2).map(|_| complex_gaussian_vector(4, 1.0, &mut rng)).collect();
        let s = complex_gaussian_vector(2, 1.0, &mut rng);
        let q = complex_gaussian_vector(4, 0.5, &mut rng);
        let rc = comm_receive(&h, &ws, 0, &s, &q, 0.01, SeedRng::seed(7));
        let direct = {
            let x = transmit_block(&ws, &s, &q);
            &h * x + &rc.awgn
        };
        assert!((rc.total() - direct).norm() < 1e-12);
    }

    #[test]
    fn comm_receive_single_user_noiseless_is_desired_only() {
        let h = CMatrix::identity(2, 2);
        let w = vec![CVector::from_vec(vec![
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 0.0),
        ])];
        let s = CVector::from_vec(vec![Complex64::new(0.7, 0.7)]);
        let q = CVector::zeros(2);
        let rc = comm_receive(&h, &w, 0, &s, &q, 0.0, SeedRng::seed(1));
        assert!(rc.multi_user_interference.norm() < 1e-15);
        assert!(rc.artificial_noise.norm() < 1e-15);
        assert!(rc.awgn.norm() < 1e-15);
        assert!((rc.total() - rc.desired).norm() < 1e-15);
    }

    #[test]
    fn comm_receive_orthogonal_interference_vanishes() {
        // Row of H aligned with user 0's beam; user 1's beam orthogonal.
        let h = CMatrix::from_fn(1, 2, |_, j| {
            if j == 0 { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) }
        });
        let ws = vec![
            CVector::from_vec(vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)]),
            CVector::from_vec(vec![Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)]),
        ];
        let s = CVector::from_vec(vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)]);
        let q = CVector::zeros(2);
        let rc = comm_receive(&h, &ws, 0, &s, &q, 0.0, SeedRng::seed(1));
        assert!(rc.multi_user_interference.norm() < 1e-15);
    }

    #[test]
    fn design_power_and_psd_checks() {
        let mut d = BeamformerDesign::zeros(2, 2, 1, 2);
        for b in 0..4 {
            *d.w_mut(b, 0) = CMatrix::identity(2, 2).scale(0.5);
            *d.q_mut(b) = CMatrix::identity(2, 2).scale(0.25);
        }
        assert!((d.total_power() - 4.0 * (1.0 + 0.5)).abs() < 1e-12);
        assert!(d.psd_violation() < 1e-15);
        d.scale(0.5);
        assert!((d.total_power() - 3.0).abs() < 1e-12);
    }
}
