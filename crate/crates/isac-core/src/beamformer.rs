//! Secure beamformer design by successive convex approximation: at each
//! iterate the non-convex rate/sidelobe constraints are replaced by convex
//! surrogates (log-det linearizations and squared-modulus linearizations),
//! the resulting conic program is solved, and the loop repeats until the
//! design stops moving. Rank-one beamformers are recovered afterwards by
//! Gaussian randomization.
//!
//! The solver sees a power-normalized problem: covariances are divided by
//! the power budget and channels absorb `sqrt(P_t)/sigma_c`, so every
//! matrix entry is O(1) regardless of the physical scales.

use crate::cmat::{hermitize, inverse_pd, logdet_pd, outer};
use crate::metrics;
use crate::radar::expected_af;
use crate::rng::SeedRng;
use crate::scenario::{comm_channel, eve_reference_channel, steering_vector, Scenario};
use crate::solver::{
    self, AffineHermitianMap, ConicProgram, Constraint, LinearExpr, LogDetTerm, Objective,
    PrimalPoint, SolverConfig, SolverStatus,
};
use crate::waveform::{complex_gaussian_vector, resolve_path, BeamformerDesign};
use crate::{CMatrix, Complex64};
use std::f64::consts::LN_2;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BeamformerError {
    #[error("surrogate program infeasible; binding constraints: {binding:?}")]
    Infeasible { binding: Vec<String> },
    #[error("solver failure: {0}")]
    Solver(#[from] solver::SolverError),
    #[error(transparent)]
    Metrics(#[from] metrics::MetricsError),
    #[error(transparent)]
    Waveform(#[from] crate::waveform::WaveformError),
}

/// Design thresholds and loop controls.
#[derive(Debug, Clone)]
pub struct DesignThresholds {
    /// Sensing-eve reference rate cap (bits/s/Hz).
    pub eta_eve: f64,
    /// Peak sidelobe floor (linear ratio).
    pub eta_psl: f64,
    /// Integrated sidelobe floor (linear ratio).
    pub eta_isl: f64,
    /// Secrecy rate floor (bits/s/Hz).
    pub eta_secrecy: f64,
    /// Convergence tolerance on the per-block covariance change (watts).
    pub epsilon: f64,
    pub max_iterations: usize,
    /// Angle grid the ISL constraint and metric are summed over (radians).
    pub isl_angles: Vec<f64>,
    /// Ghost/sidelobe constraints active.
    pub enable_sidelobe_constraints: bool,
    /// Sensing-eve rate cap active.
    pub enable_eve_rate_constraint: bool,
    /// Secrecy constraints active.
    pub enable_secrecy_constraints: bool,
    /// Artificial-noise covariances present in the design.
    pub enable_artificial_noise: bool,
}

impl Default for DesignThresholds {
    fn default() -> Self {
        DesignThresholds {
            eta_eve: 3.0,
            eta_psl: crate::db_to_lin(-15.0),
            eta_isl: crate::db_to_lin(-4.0),
            eta_secrecy: 1.0,
            epsilon: 5e-2,
            max_iterations: 40,
            isl_angles: [-60.0f64, -30.0, 0.0, 30.0, 60.0]
                .iter()
                .map(|d| d.to_radians())
                .collect(),
            enable_sidelobe_constraints: true,
            enable_eve_rate_constraint: true,
            enable_secrecy_constraints: true,
            enable_artificial_noise: true,
        }
    }
}

impl DesignThresholds {
    /// Baseline without sensing security: no ghosts, no AN, no eve-rate cap.
    pub fn no_security(mut self) -> Self {
        self.enable_sidelobe_constraints = false;
        self.enable_eve_rate_constraint = false;
        self.enable_artificial_noise = false;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
    Infeasible,
}

/// One SCA iterate.
#[derive(Debug, Clone)]
pub struct IteratePoint {
    pub design: BeamformerDesign,
    /// Achieved SNR floor (linear).
    pub eta_b: f64,
}

#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iteration: usize,
    pub eta_b: f64,
    pub power: f64,
    /// Worst relative violation of the exact (non-surrogate) constraints.
    pub max_violation: f64,
    pub solver_newton_steps: usize,
}

#[derive(Debug, Clone)]
pub struct ScaTrajectory {
    pub records: Vec<IterationRecord>,
    pub termination: Termination,
    pub final_point: Option<IteratePoint>,
    /// Binding constraints when the program was infeasible.
    pub binding: Vec<String>,
}

impl ScaTrajectory {
    pub fn log_csv(&self) -> String {
        let mut s = String::from("iteration,eta_b,power,max_violation\n");
        for r in &self.records {
            s.push_str(&format!(
                "{},{:.9e},{:.9e},{:.9e}\n",
                r.iteration, r.eta_b, r.power, r.max_violation
            ));
        }
        s
    }

    pub fn eta_b_history(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.eta_b).collect()
    }
}

/// Random initialization: rank-one beams aimed near the user directions with
/// a random per-block perturbation (a block-constant design would have an
/// identically zero off-grid ambiguity function, which degenerates the
/// sidelobe linearizations), plus a small identity floor so the
/// interior-point warm start is strictly positive definite, and isotropic
/// AN; everything jointly scaled to 0.9 of the power budget.
pub fn initialize(
    scenario: &Scenario,
    thresholds: &DesignThresholds,
    seed: SeedRng,
) -> BeamformerDesign {
    let grid = &scenario.grid;
    let n_tx = scenario.array.n_tx;
    let spacing = scenario.array.element_spacing;
    let k_users = scenario.users.len().max(1);
    let mut design = BeamformerDesign::zeros(grid.n_subcarriers, grid.n_symbols, k_users, n_tx);
    let n_blocks = design.n_blocks();
    let budget = 0.9 * scenario.power_budget;
    let (w_share, q_share) = if thresholds.enable_artificial_noise {
        (2.0 / 3.0, 1.0 / 3.0)
    } else {
        (1.0, 0.0)
    };
    let p_w = budget * w_share / (n_blocks * k_users) as f64;
    let p_q = budget * q_share / n_blocks as f64;
    let mut rng = seed.rng();
    for b in 0..n_blocks {
        for k in 0..k_users {
            let aim = scenario
                .users
                .get(k)
                .map(|u| steering_vector(u.angle(), n_tx, spacing))
                .unwrap_or_else(|| steering_vector(0.0, n_tx, spacing));
            let v = (aim + complex_gaussian_vector(n_tx, 1.0, &mut rng).scale(0.4)).normalize();
            let w = outer(&v, &v).scale(p_w * (1.0 - 1e-3))
                + CMatrix::identity(n_tx, n_tx).scale(p_w * 1e-3 / n_tx as f64);
            *design.w_mut(b, k) = w;
        }
        if p_q > 0.0 {
            *design.q_mut(b) = CMatrix::identity(n_tx, n_tx).scale(p_q / n_tx as f64);
        }
    }
    design
}

fn w_bar_blocks(design: &BeamformerDesign) -> Vec<CMatrix> {
    (0..design.n_blocks()).map(|b| design.w_sum(b)).collect()
}

fn q_blocks(design: &BeamformerDesign) -> Vec<CMatrix> {
    (0..design.n_blocks()).map(|b| design.q(b).clone()).collect()
}

/// Everything derived from one expansion point that the surrogates need.
/// Also exposes standalone surrogate evaluations for the tightness and
/// bound-direction checks.
pub struct SurrogateSet<'a> {
    scenario: &'a Scenario,
    /// Expansion covariances (physical units).
    w_exp: Vec<Vec<CMatrix>>, // [block][user]
    q_exp: Vec<CMatrix>,
    /// Per sensing eve, per block: inverse of `H (W + Q) H^H + sigma^2 I`.
    eve_m_inv: Vec<Vec<CMatrix>>,
    /// Per user, per block: inverse of the user's interference covariance.
    xi_user_inv: Vec<Vec<CMatrix>>,
    /// Per comm eve, per block: inverse of the eve's total covariance.
    xi_eve_inv: Vec<Vec<CMatrix>>,
    /// Per-block user channels.
    h_users: Vec<Vec<CMatrix>>, // [user][block]
    h_comm_eves: Vec<CMatrix>,
    h_sensing_eves: Vec<CMatrix>,
}

fn block_coords(scenario: &Scenario) -> Vec<(usize, usize)> {
    let n_s = scenario.grid.n_symbols;
    (0..scenario.grid.n_subcarriers)
        .flat_map(|n_c| (0..n_s).map(move |s| (n_c, s)))
        .collect()
}

impl<'a> SurrogateSet<'a> {
    pub fn new(scenario: &'a Scenario, expansion: &BeamformerDesign) -> Self {
        let sigma2 = scenario.noise_power_comm;
        let n_blocks = expansion.n_blocks();
        let k_users = expansion.n_users;
        let spacing = scenario.array.element_spacing;
        let w_exp: Vec<Vec<CMatrix>> = (0..n_blocks)
            .map(|b| (0..k_users).map(|k| expansion.w(b, k).clone()).collect())
            .collect();
        let q_exp = q_blocks(expansion);

        let h_users: Vec<Vec<CMatrix>> = scenario
            .users
            .iter()
            .map(|u| {
                block_coords(scenario)
                    .into_iter()
                    .map(|(n_c, n_s)| comm_channel(scenario, u, n_c, n_s))
                    .collect()
            })
            .collect();
        let h_comm_eves: Vec<CMatrix> = scenario
            .comm_eves
            .iter()
            .map(|e| eve_reference_channel(e.angle, e.n_antennas, scenario.array.n_tx, spacing))
            .collect();
        let h_sensing_eves: Vec<CMatrix> = scenario
            .sensing_eves
            .iter()
            .map(|e| eve_reference_channel(e.angle, e.n_antennas, scenario.array.n_tx, spacing))
            .collect();

        let total_exp = |b: usize| -> CMatrix {
            w_exp[b].iter().fold(q_exp[b].clone(), |acc, w| acc + w)
        };
        let eve_m_inv = h_sensing_eves
            .iter()
            .map(|h| {
                (0..n_blocks)
                    .map(|b| {
                        let m = h * total_exp(b) * h.adjoint()
                            + CMatrix::identity(h.nrows(), h.nrows()).scale(sigma2);
                        inverse_pd(&hermitize(&m)).expect("PD by sigma^2 I")
                    })
                    .collect()
            })
            .collect();
        let xi_user_inv: Vec<Vec<CMatrix>> = (0..k_users)
            .map(|k| {
                (0..n_blocks)
                    .map(|b| {
                        let h = &h_users[k][b];
                        let mut interf = q_exp[b].clone();
                        for (kk, w) in w_exp[b].iter().enumerate() {
                            if kk != k {
                                interf += w;
                            }
                        }
                        let xi = h * interf * h.adjoint()
                            + CMatrix::identity(h.nrows(), h.nrows()).scale(sigma2);
                        inverse_pd(&hermitize(&xi)).expect("PD by sigma^2 I")
                    })
                    .collect()
            })
            .collect();
        let xi_eve_inv: Vec<Vec<CMatrix>> = h_comm_eves
            .iter()
            .map(|h| {
                (0..n_blocks)
                    .map(|b| {
                        let xi = h * total_exp(b) * h.adjoint()
                            + CMatrix::identity(h.nrows(), h.nrows()).scale(sigma2);
                        inverse_pd(&hermitize(&xi)).expect("PD by sigma^2 I")
                    })
                    .collect()
            })
            .collect();

        SurrogateSet {
            scenario,
            w_exp,
            q_exp,
            eve_m_inv,
            xi_user_inv,
            xi_eve_inv,
            h_users,
            h_comm_eves,
            h_sensing_eves,
        }
    }

    fn n_blocks(&self) -> usize {
        self.q_exp.len()
    }

    fn k_users(&self) -> usize {
        self.w_exp[0].len()
    }

    fn w_exp_sum(&self, b: usize) -> CMatrix {
        self.w_exp[b]
            .iter()
            .fold(CMatrix::zeros(self.q_exp[b].nrows(), self.q_exp[b].ncols()), |a, w| a + w)
    }

    /// Convex upper bound on the sensing eve's reference rate (bits/s/Hz):
    /// the first log-det linearized at the expansion point.
    pub fn eve_rate_surrogate(&self, eve: usize, candidate: &BeamformerDesign) -> f64 {
        let sigma2 = self.scenario.noise_power_comm;
        let h = &self.h_sensing_eves[eve];
        let m = h.nrows();
        let eye = CMatrix::identity(m, m).scale(sigma2);
        let mut acc = 0.0;
        for b in 0..self.n_blocks() {
            let total_e = self.w_exp_sum(b) + &self.q_exp[b];
            let m_e = hermitize(&(h * total_e.clone() * h.adjoint() + &eye));
            let total_c = candidate.w_sum(b) + candidate.q(b);
            let delta = h * (total_c - total_e) * h.adjoint();
            let g = hermitize(&(h * candidate.q(b) * h.adjoint() + &eye));
            acc += logdet_pd(&m_e).expect("PD")
                + crate::cmat::re_trace_prod(&self.eve_m_inv[eve][b], &delta)
                - logdet_pd(&g).expect("PD");
        }
        acc / (self.n_blocks() as f64 * LN_2)
    }

    /// Conservative (lower-bound) surrogate of `C_k - C_{k,mc}` (bits/s/Hz).
    pub fn secrecy_surrogate(&self, user: usize, eve: usize, candidate: &BeamformerDesign) -> f64 {
        let sigma2 = self.scenario.noise_power_comm;
        let h_m = &self.h_comm_eves[eve];
        let mm = h_m.nrows();
        let eye_m = CMatrix::identity(mm, mm).scale(sigma2);
        let mut acc = 0.0;
        for b in 0..self.n_blocks() {
            let h = &self.h_users[user][b];
            let mk = h.nrows();
            let eye_k = CMatrix::identity(mk, mk).scale(sigma2);
            let total = candidate.w_sum(b) + candidate.q(b);
            let mut interf = candidate.q(b).clone();
            for kk in 0..self.k_users() {
                if kk != user {
                    interf += candidate.w(b, kk);
                }
            }
            // Exact concave parts.
            let g1 = hermitize(&(h * &total * h.adjoint() + &eye_k));
            let g2 = hermitize(&(h_m * &interf * h_m.adjoint() + &eye_m));
            acc += logdet_pd(&g1).expect("PD") + logdet_pd(&g2).expect("PD");
            // Linearized convex parts:
            // -ln det X >= -ln det Xi - Tr(Xi^{-1} (X - Xi)).
            let xi_k_inv = &self.xi_user_inv[user][b];
            let x_k = hermitize(&(h * &interf * h.adjoint() + &eye_k));
            let xi_k = inverse_pd(xi_k_inv).expect("PD");
            acc -= logdet_pd(&xi_k).expect("PD")
                + crate::cmat::re_trace_prod(xi_k_inv, &(x_k - &xi_k));
            let xi_m_inv = &self.xi_eve_inv[eve][b];
            let x_m = hermitize(&(h_m * &total * h_m.adjoint() + &eye_m));
            let xi_m = inverse_pd(xi_m_inv).expect("PD");
            acc -= logdet_pd(&xi_m).expect("PD")
                + crate::cmat::re_trace_prod(xi_m_inv, &(x_m - &xi_m));
        }
        acc / (self.n_blocks() as f64 * LN_2)
    }

    fn af_of(&self, w_bar: &[CMatrix], q_bar: &[CMatrix], d_ell: i64, d_nu: i64, theta: f64, theta_hat: f64) -> Complex64 {
        expected_af(
            w_bar,
            q_bar,
            self.scenario.grid.n_subcarriers,
            self.scenario.grid.n_symbols,
            self.scenario.array.element_spacing,
            d_ell,
            d_nu,
            theta,
            theta_hat,
        )
    }

    fn expansion_af(&self, d_ell: i64, d_nu: i64, theta: f64, theta_hat: f64) -> Complex64 {
        let w_bar: Vec<CMatrix> = (0..self.n_blocks()).map(|b| self.w_exp_sum(b)).collect();
        self.af_of(&w_bar, &self.q_exp, d_ell, d_nu, theta, theta_hat)
    }

    /// Linearized squared AF modulus at one sidelobe cell:
    /// `|f_e|^2 + 2 Re{ conj(f_e) (f(x) - f_e) }`, a global under-estimate
    /// of `|f(x)|^2`.
    pub fn linearized_sidelobe_power(
        &self,
        candidate: &BeamformerDesign,
        d_ell: i64,
        d_nu: i64,
        theta: f64,
        theta_hat: f64,
    ) -> f64 {
        let f_e = self.expansion_af(d_ell, d_nu, theta, theta_hat);
        let w_bar = w_bar_blocks(candidate);
        let q_bar = q_blocks(candidate);
        let f_c = self.af_of(&w_bar, &q_bar, d_ell, d_nu, theta, theta_hat);
        f_e.norm_sqr() + 2.0 * (f_e.conj() * (f_c - f_e)).re
    }
}

/// Index set of the ISL sum: every `(theta_hat, d_ell, d_nu)` over the grid
/// and the angle list, excluding only the joint mainlobe cell.
pub fn isl_terms(
    n_subcarriers: usize,
    n_symbols: usize,
    target_aod: f64,
    angles: &[f64],
) -> Vec<(f64, i64, i64)> {
    let mut out = Vec::new();
    for &theta_hat in angles {
        for d_ell in 0..n_subcarriers as i64 {
            for d_nu in 0..n_symbols as i64 {
                if d_ell == 0 && d_nu == 0 && (theta_hat - target_aod).abs() < 1e-9 {
                    continue;
                }
                out.push((theta_hat, d_ell, d_nu));
            }
        }
    }
    out
}

/// Identifies solver variables of one surrogate program.
pub struct VarMap {
    pub n_subcarriers: usize,
    pub n_symbols: usize,
    pub k_users: usize,
    pub n_tx: usize,
    pub include_an: bool,
    pub eta_scalar: usize,
    /// Mainlobe-square epigraph scalar per target (sidelobe mode only).
    pub s_scalars: Vec<usize>,
    /// Physical covariance = `power * solver block`.
    pub power: f64,
    /// Physical SNR floor = `eta_b_scale * solver eta variable`.
    pub eta_b_scale: f64,
}

impl VarMap {
    fn vars_per_block(&self) -> usize {
        self.k_users + usize::from(self.include_an)
    }

    pub fn n_blocks(&self) -> usize {
        self.n_subcarriers * self.n_symbols
    }

    fn w_block(&self, b: usize, k: usize) -> usize {
        b * self.vars_per_block() + k
    }

    fn q_block(&self, b: usize) -> usize {
        debug_assert!(self.include_an);
        b * self.vars_per_block() + self.k_users
    }

    pub fn extract_design(&self, point: &PrimalPoint) -> BeamformerDesign {
        let mut w = Vec::with_capacity(self.n_blocks() * self.k_users);
        let mut q = Vec::with_capacity(self.n_blocks());
        for b in 0..self.n_blocks() {
            for k in 0..self.k_users {
                w.push(hermitize(&point.blocks[self.w_block(b, k)].scale(self.power)));
            }
            if self.include_an {
                q.push(hermitize(&point.blocks[self.q_block(b)].scale(self.power)));
            } else {
                q.push(CMatrix::zeros(self.n_tx, self.n_tx));
            }
        }
        BeamformerDesign::new(self.n_subcarriers, self.n_symbols, self.k_users, self.n_tx, w, q)
    }

    fn warm_point(&self, expansion: &BeamformerDesign, eta0: f64, s0: &[f64]) -> PrimalPoint {
        let mut blocks = Vec::new();
        for b in 0..self.n_blocks() {
            for k in 0..self.k_users {
                blocks.push(expansion.w(b, k).scale(1.0 / self.power));
            }
            if self.include_an {
                blocks.push(expansion.q(b).scale(1.0 / self.power));
            }
        }
        let mut scalars = vec![0.0; 1 + self.s_scalars.len()];
        scalars[self.eta_scalar] = eta0;
        for (i, idx) in self.s_scalars.iter().enumerate() {
            scalars[*idx] = s0[i];
        }
        PrimalPoint { blocks, scalars }
    }
}

/// Build the convex surrogate program at the expansion point.
pub fn build_program(
    scenario: &Scenario,
    thresholds: &DesignThresholds,
    expansion: &BeamformerDesign,
) -> Result<(ConicProgram, VarMap), BeamformerError> {
    let grid = &scenario.grid;
    let n_tx = scenario.array.n_tx;
    let spacing = scenario.array.element_spacing;
    let k_users = expansion.n_users;
    let n_blocks = expansion.n_blocks();
    let include_an = thresholds.enable_artificial_noise;
    let power = scenario.power_budget;
    let sigma_c2 = scenario.noise_power_comm;
    let chan_scale = (power / sigma_c2).sqrt();

    // Largest per-target SNR scale normalizes the objective variable.
    let mut kappa = Vec::with_capacity(scenario.targets.len());
    for l in 0..scenario.targets.len() {
        let path = resolve_path(scenario, l, crate::scenario::Receiver::Bs)?;
        kappa.push(path.path_gain.norm_sqr() * power / scenario.noise_power_radar);
    }
    let kappa_max = kappa.iter().cloned().fold(1.0f64, f64::max);

    let vars_per_block = k_users + usize::from(include_an);
    let psd_blocks = vec![n_tx; n_blocks * vars_per_block];
    let sidelobes = thresholds.enable_sidelobe_constraints;
    let n_targets = scenario.targets.len();
    let s_scalars: Vec<usize> = if sidelobes { (1..=n_targets).collect() } else { Vec::new() };
    let n_scalars = 1 + s_scalars.len();
    let eta_scalar = 0usize;

    let map = VarMap {
        n_subcarriers: grid.n_subcarriers,
        n_symbols: grid.n_symbols,
        k_users,
        n_tx,
        include_an,
        eta_scalar,
        s_scalars: s_scalars.clone(),
        power,
        eta_b_scale: kappa_max,
    };

    let mut prog = ConicProgram::new(
        psd_blocks,
        n_scalars,
        LinearExpr::scalar(eta_scalar, 1.0),
        Objective::Maximize,
    );

    // Per-block per-target SNR floor: a^H (sum_k W) a >= eta * kappa_max/kappa_l.
    for (l, target) in scenario.targets.iter().enumerate() {
        let a = steering_vector(target.aod, n_tx, spacing);
        let coef = hermitize(&outer(&a, &a));
        for b in 0..n_blocks {
            let mut expr = LinearExpr::scalar(eta_scalar, -kappa_max / kappa[l]);
            for k in 0..k_users {
                expr = expr.with_block(map.w_block(b, k), coef.clone());
            }
            prog.add(Constraint::ge(format!("snr t{l} b{b}"), expr, vec![], 0.0));
        }
    }

    // Power budget: sum Tr <= 1 in normalized units.
    {
        let mut expr = LinearExpr::zero();
        let eye = CMatrix::identity(n_tx, n_tx);
        for b in 0..n_blocks {
            for k in 0..k_users {
                expr = expr.with_block(map.w_block(b, k), eye.clone());
            }
            if include_an {
                expr = expr.with_block(map.q_block(b), eye.clone());
            }
        }
        prog.add(Constraint::le("power budget", expr, vec![], 1.0));
    }

    let sur = SurrogateSet::new(scenario, expansion);

    // Sensing-eve reference-rate surrogate.
    if thresholds.enable_eve_rate_constraint {
        for (m_r, eve) in scenario.sensing_eves.iter().enumerate() {
            let h = eve_reference_channel(eve.angle, eve.n_antennas, n_tx, spacing)
                .scale(chan_scale);
            let m_dim = h.nrows();
            let mut expr = LinearExpr::zero();
            let mut rhs = thresholds.eta_eve * LN_2 * n_blocks as f64;
            let mut logdets = Vec::new();
            for b in 0..n_blocks {
                // In normalized units M = H~ X~ H~^H + I.
                let total_e = (sur.w_exp_sum(b) + &sur.q_exp[b]).scale(1.0 / power);
                let m_e = hermitize(&(&h * total_e.clone() * h.adjoint() + CMatrix::identity(m_dim, m_dim)));
                let m_e_inv = inverse_pd(&m_e).expect("PD");
                let s_b = hermitize(&(h.adjoint() * &m_e_inv * &h));
                for k in 0..k_users {
                    expr = expr.with_block(map.w_block(b, k), s_b.clone());
                }
                if include_an {
                    expr = expr.with_block(map.q_block(b), s_b.clone());
                }
                rhs -= logdet_pd(&m_e).expect("PD");
                rhs += crate::cmat::re_trace_prod(&s_b, &total_e);
                let g_map = if include_an {
                    AffineHermitianMap::constant_only(CMatrix::identity(m_dim, m_dim))
                        .with_congruence(map.q_block(b), h.clone(), 1.0)
                } else {
                    AffineHermitianMap::constant_only(CMatrix::identity(m_dim, m_dim))
                };
                logdets.push(LogDetTerm { weight: -1.0, map: g_map });
            }
            prog.add(Constraint::le(format!("eve rate m{m_r}"), expr, logdets, rhs));
        }
    }

    // Secrecy surrogates per (user, comm eve); with no comm eves the user
    // rate itself is floored. All four log-det terms of each row live in
    // normalized units, so the noise-scaling Jacobians cancel pairwise.
    if thresholds.enable_secrecy_constraints && thresholds.eta_secrecy > 0.0 {
        let eve_list: Vec<Option<usize>> = if scenario.comm_eves.is_empty() {
            vec![None]
        } else {
            (0..scenario.comm_eves.len()).map(Some).collect()
        };
        for user in 0..k_users.min(scenario.users.len()) {
            for &eve in &eve_list {
                let mut expr = LinearExpr::zero();
                let rhs = thresholds.eta_secrecy * LN_2 * n_blocks as f64;
                let mut logdets = Vec::new();
                for b in 0..n_blocks {
                    let h_k = sur.h_users[user][b].scale(chan_scale);
                    let nk = h_k.nrows();
                    let eye_k = CMatrix::identity(nk, nk);
                    // Exact concave term: ln det(I + H~_k (sum W~ + Q~) H~_k^H).
                    let mut g1 = AffineHermitianMap::constant_only(eye_k.clone());
                    for k in 0..k_users {
                        g1 = g1.with_congruence(map.w_block(b, k), h_k.clone(), 1.0);
                    }
                    if include_an {
                        g1 = g1.with_congruence(map.q_block(b), h_k.clone(), 1.0);
                    }
                    logdets.push(LogDetTerm { weight: 1.0, map: g1 });
                    // Linearized convex term around the normalized expansion
                    // interference Xi~ = I + H~ (sum_{k' != k} W~ + Q~)^e H~^H:
                    // -ln det X >= -ln det Xi - Tr(Xi^{-1} (X - Xi)).
                    let mut interf_e = sur.q_exp[b].clone();
                    for (kk, w) in sur.w_exp[b].iter().enumerate() {
                        if kk != user {
                            interf_e += w;
                        }
                    }
                    let xi_k = hermitize(
                        &(&h_k * interf_e.scale(1.0 / power) * h_k.adjoint() + &eye_k),
                    );
                    let xi_k_inv = inverse_pd(&xi_k).expect("PD");
                    let t1 = hermitize(&(h_k.adjoint() * &xi_k_inv * &h_k));
                    for k in 0..k_users {
                        if k != user {
                            expr = expr.with_block(map.w_block(b, k), t1.map(|z| -z));
                        }
                    }
                    if include_an {
                        expr = expr.with_block(map.q_block(b), t1.map(|z| -z));
                    }
                    expr.constant += -logdet_pd(&xi_k).expect("PD") + nk as f64
                        - crate::cmat::re_trace_prod(&xi_k_inv, &eye_k);

                    if let Some(m_c) = eve {
                        let h_m = sur.h_comm_eves[m_c].scale(chan_scale);
                        let nm = h_m.nrows();
                        let eye_m = CMatrix::identity(nm, nm);
                        // Exact concave term: the eve's interference.
                        let mut g2 = AffineHermitianMap::constant_only(eye_m.clone());
                        for k in 0..k_users {
                            if k != user {
                                g2 = g2.with_congruence(map.w_block(b, k), h_m.clone(), 1.0);
                            }
                        }
                        if include_an {
                            g2 = g2.with_congruence(map.q_block(b), h_m.clone(), 1.0);
                        }
                        logdets.push(LogDetTerm { weight: 1.0, map: g2 });
                        // Linearized convex term: the eve's total covariance.
                        let total_e = sur.w_exp_sum(b) + &sur.q_exp[b];
                        let xi_m = hermitize(
                            &(&h_m * total_e.scale(1.0 / power) * h_m.adjoint() + &eye_m),
                        );
                        let xi_m_inv = inverse_pd(&xi_m).expect("PD");
                        let t2 = hermitize(&(h_m.adjoint() * &xi_m_inv * &h_m));
                        for k in 0..k_users {
                            expr = expr.with_block(map.w_block(b, k), t2.map(|z| -z));
                        }
                        if include_an {
                            expr = expr.with_block(map.q_block(b), t2.map(|z| -z));
                        }
                        expr.constant += -logdet_pd(&xi_m).expect("PD") + nm as f64
                            - crate::cmat::re_trace_prod(&xi_m_inv, &eye_m);
                    }
                }
                let name = match eve {
                    Some(m_c) => format!("secrecy u{user} e{m_c}"),
                    None => format!("user rate u{user}"),
                };
                prog.add(Constraint::ge(name, expr, logdets, rhs));
            }
        }
    }

    // Sidelobe shaping: shared mainlobe-square epigraph per target, then one
    // PSL row per ghost and one ISL row per target.
    if sidelobes {
        for (l, target) in scenario.targets.iter().enumerate() {
            let a = steering_vector(target.aod, n_tx, spacing);
            let main_coef = hermitize(&outer(&a, &a));
            // m_l(x) = sum_b a^H (W + Q) a in normalized units.
            let mut m_expr = LinearExpr::zero();
            for b in 0..n_blocks {
                for k in 0..k_users {
                    m_expr = m_expr.with_block(map.w_block(b, k), main_coef.clone());
                }
                if include_an {
                    m_expr = m_expr.with_block(map.q_block(b), main_coef.clone());
                }
            }
            // Schur complement: [[1, m],[m, s]] >= 0 encodes s >= m^2.
            let e01 = CMatrix::from_fn(2, 2, |i, j| {
                if (i, j) == (0, 1) || (i, j) == (1, 0) {
                    Complex64::new(1.0, 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            });
            let e11 = CMatrix::from_fn(2, 2, |i, j| {
                if (i, j) == (1, 1) { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) }
            });
            let e00 = CMatrix::from_fn(2, 2, |i, j| {
                if (i, j) == (0, 0) { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) }
            });
            prog.add(Constraint::psd(
                format!("mainlobe square t{l}"),
                AffineHermitianMap::constant_only(e00)
                    .with_functional(m_expr.clone(), e01)
                    .with_functional(LinearExpr::scalar(s_scalars[l], 1.0), e11),
            ));

            // One linearized row per ghost (PSL) and the summed row (ISL).
            let add_sidelobe_row = |prog: &mut ConicProgram,
                                    name: String,
                                    eta: f64,
                                    cells: &[(f64, i64, i64)]| {
                // eta * s_l - sum_t [ |f_e|^2 + 2 Re{f_e^* (f - f_e)} ] <= 0
                let mut expr = LinearExpr::scalar(s_scalars[l], eta);
                let mut coef_w: Vec<CMatrix> = vec![CMatrix::zeros(n_tx, n_tx); n_blocks];
                let mut constant = 0.0;
                for &(theta_hat, d_ell, d_nu) in cells {
                    let f_e = sur.expansion_af(d_ell, d_nu, target.aod, theta_hat).scale(1.0 / power);
                    constant += f_e.norm_sqr();
                    let a_hat = steering_vector(theta_hat, n_tx, spacing);
                    for b in 0..n_blocks {
                        let n_c = b / grid.n_symbols;
                        let n_s = b % grid.n_symbols;
                        let ph = Complex64::from_polar(
                            1.0,
                            -2.0 * std::f64::consts::PI * d_ell as f64 * n_c as f64
                                / grid.n_subcarriers as f64
                                + 2.0 * std::f64::consts::PI * d_nu as f64 * n_s as f64
                                    / grid.n_symbols as f64,
                        );
                        // f contribution: Tr(ph a_hat a^H X); real part pairs
                        // with conj(f_e).
                        let n_mat = (&a_hat * a.adjoint()).scale(1.0) * (ph * f_e.conj());
                        coef_w[b] += hermitize(&n_mat);
                    }
                }
                for b in 0..n_blocks {
                    let c = coef_w[b].map(|z| z * -2.0);
                    for k in 0..k_users {
                        expr = expr.with_block(map.w_block(b, k), c.clone());
                    }
                    if include_an {
                        expr = expr.with_block(map.q_block(b), c.clone());
                    }
                }
                expr.constant += constant;
                prog.add(Constraint::le(name, expr, vec![], 0.0));
            };

            for (g, ghost) in scenario.ghosts.iter().enumerate() {
                add_sidelobe_row(
                    &mut prog,
                    format!("psl t{l} g{g}"),
                    thresholds.eta_psl,
                    &[(
                        ghost.angle,
                        ghost.delta_delay_bin as i64,
                        ghost.delta_doppler_bin as i64,
                    )],
                );
            }
            let cells = isl_terms(
                grid.n_subcarriers,
                grid.n_symbols,
                target.aod,
                &thresholds.isl_angles,
            );
            add_sidelobe_row(&mut prog, format!("isl t{l}"), thresholds.eta_isl, &cells);
        }
    }

    Ok((prog, map))
}

/// Maximal relative violation of the exact design constraints; used for the
/// trajectory log and the acceptance checks.
pub fn exact_violation(
    scenario: &Scenario,
    thresholds: &DesignThresholds,
    design: &BeamformerDesign,
) -> Result<f64, BeamformerError> {
    let report = metrics::full_report(design, scenario, &thresholds.isl_angles)?;
    let mut v: f64 = 0.0;
    if thresholds.enable_eve_rate_constraint {
        for r in &report.eve_ref_rates {
            v = v.max((r - thresholds.eta_eve) / thresholds.eta_eve.max(1e-9));
        }
    }
    if thresholds.enable_secrecy_constraints && thresholds.eta_secrecy > 0.0 {
        for s in &report.secrecy_rates {
            v = v.max((thresholds.eta_secrecy - s) / thresholds.eta_secrecy.max(1e-9));
        }
    }
    if thresholds.enable_sidelobe_constraints {
        for per_target in &report.psl {
            for p in per_target {
                v = v.max((thresholds.eta_psl - p) / thresholds.eta_psl.max(1e-12));
            }
        }
        for i in &report.isl {
            v = v.max((thresholds.eta_isl - i) / thresholds.eta_isl.max(1e-12));
        }
    }
    v = v.max((report.total_power - scenario.power_budget) / scenario.power_budget);
    Ok(v.max(0.0))
}

/// Solve one SCA subproblem around `expansion`.
pub fn solve_iteration(
    scenario: &Scenario,
    thresholds: &DesignThresholds,
    expansion: &BeamformerDesign,
) -> Result<(IteratePoint, usize), BeamformerError> {
    let (prog, map) = build_program(scenario, thresholds, expansion)?;

    // Warm start: the expansion design with feasible auxiliary scalars.
    let spacing = scenario.array.element_spacing;
    let mut eta0 = f64::INFINITY;
    for (l, target) in scenario.targets.iter().enumerate() {
        let a = steering_vector(target.aod, scenario.array.n_tx, spacing);
        for b in 0..expansion.n_blocks() {
            let beam = (a.adjoint() * expansion.w_sum(b) * &a)[(0, 0)].re / map.power;
            let path = resolve_path(scenario, l, crate::scenario::Receiver::Bs)?;
            let kappa_l = path.path_gain.norm_sqr() * map.power / scenario.noise_power_radar;
            eta0 = eta0.min(beam * kappa_l / map.eta_b_scale);
        }
    }
    let eta0 = (eta0 * 0.999).max(0.0) - 1e-12;
    let mut s0 = Vec::new();
    if !map.s_scalars.is_empty() {
        for target in &scenario.targets {
            let a = steering_vector(target.aod, scenario.array.n_tx, spacing);
            let mut m_val = 0.0;
            for b in 0..expansion.n_blocks() {
                m_val += (a.adjoint() * (expansion.w_sum(b) + expansion.q(b)) * &a)[(0, 0)].re;
            }
            m_val /= map.power;
            s0.push(m_val * m_val * 1.001 + 1e-9);
        }
    }
    let warm = map.warm_point(expansion, eta0, &s0);

    let config = SolverConfig { initial_point: Some(warm), ..Default::default() };
    let result = solver::solve(&prog, &config)?;
    match result.status {
        SolverStatus::Optimal | SolverStatus::MaxIterations => {}
        SolverStatus::Infeasible { binding } => {
            return Err(BeamformerError::Infeasible { binding });
        }
    }
    let mut design = map.extract_design(&result.point);
    design.hermitize_in_place();
    let eta_b = result.point.scalars[map.eta_scalar] * map.eta_b_scale;
    Ok((IteratePoint { design, eta_b }, result.newton_iterations))
}

/// Run the SCA loop from a seeded random initialization.
pub fn run_sca(
    scenario: &Scenario,
    thresholds: &DesignThresholds,
    seed: SeedRng,
) -> Result<ScaTrajectory, BeamformerError> {
    let mut expansion = initialize(scenario, thresholds, seed);
    let mut records = Vec::new();
    let mut last: Option<IteratePoint> = None;
    let mut restarted = false;
    let mut iteration = 0usize;
    while iteration < thresholds.max_iterations {
        iteration += 1;
        let solved = solve_iteration(scenario, thresholds, &expansion);
        let (point, steps) = match solved {
            Ok(v) => v,
            Err(BeamformerError::Infeasible { binding }) => {
                if iteration > 1 && !restarted {
                    // One restart from a fresh initialization.
                    restarted = true;
                    expansion = initialize(scenario, thresholds, seed.derive(&[0xfe5a]));
                    continue;
                }
                return Ok(ScaTrajectory {
                    records,
                    termination: Termination::Infeasible,
                    final_point: None,
                    binding,
                });
            }
            Err(e) => return Err(e),
        };
        let violation = exact_violation(scenario, thresholds, &point.design)?;
        records.push(IterationRecord {
            iteration,
            eta_b: point.eta_b,
            power: point.design.total_power(),
            max_violation: violation,
            solver_newton_steps: steps,
        });
        // Stopping rule: neither the beamforming nor the AN covariances
        // moved more than epsilon on any block.
        let mut max_delta: f64 = 0.0;
        if let Some(prev) = &last {
            for b in 0..point.design.n_blocks() {
                let dw = crate::cmat::fro_norm(&(point.design.w_sum(b) - prev.design.w_sum(b)));
                let dq = crate::cmat::fro_norm(&(point.design.q(b) - prev.design.q(b)));
                max_delta = max_delta.max(dw).max(dq);
            }
        } else {
            max_delta = f64::INFINITY;
        }
        expansion = point.design.clone();
        last = Some(point);
        if max_delta <= thresholds.epsilon {
            return Ok(ScaTrajectory {
                records,
                termination: Termination::Converged,
                final_point: last,
                binding: Vec::new(),
            });
        }
    }
    Ok(ScaTrajectory {
        records,
        termination: Termination::MaxIterations,
        final_point: last,
        binding: Vec::new(),
    })
}

/// Result of the rank-one recovery.
#[derive(Debug, Clone)]
pub struct RandomizationOutcome {
    /// Design with rank-one `w_vectors` set and covariances replaced by the
    /// recovered outer products (AN covariances jointly rescaled).
    pub design: BeamformerDesign,
    /// Relative objective loss versus the relaxed optimum.
    pub degradation: f64,
    /// No candidate met every constraint within the slack.
    pub failed: bool,
    pub candidates_tried: usize,
}

/// Gaussian randomization: draw rank-one candidates from the relaxed
/// covariances, rescale each candidate set to the relaxed total power, and
/// keep the best one satisfying the original constraints within a relative
/// slack. The principal eigenvector is always candidate zero, so an already
/// rank-one solution is recovered exactly.
pub fn gaussian_randomization(
    scenario: &Scenario,
    thresholds: &DesignThresholds,
    relaxed: &IteratePoint,
    n_draws: usize,
    slack: f64,
    seed: SeedRng,
) -> Result<RandomizationOutcome, BeamformerError> {
    let design = &relaxed.design;
    let n_blocks = design.n_blocks();
    let k_users = design.n_users;
    let total_power = design.total_power();
    let sqrts: Vec<CMatrix> = (0..n_blocks)
        .flat_map(|b| (0..k_users).map(move |k| (b, k)))
        .map(|(b, k)| crate::cmat::psd_sqrt(design.w(b, k)))
        .collect();

    let mut best: Option<(f64, BeamformerDesign)> = None;
    let mut best_violation: Option<(f64, BeamformerDesign)> = None;
    let draws = n_draws.max(1);
    for cand in 0..draws {
        let mut vectors = Vec::with_capacity(n_blocks * k_users);
        if cand == 0 {
            for b in 0..n_blocks {
                for k in 0..k_users {
                    let (vals, vecs) = crate::cmat::herm_eigen(design.w(b, k));
                    let (mut arg, mut max) = (0usize, f64::NEG_INFINITY);
                    for (i, v) in vals.iter().enumerate() {
                        if *v > max {
                            max = *v;
                            arg = i;
                        }
                    }
                    let v = crate::CVector::from_iterator(
                        design.n_tx,
                        vecs.column(arg).iter().cloned(),
                    );
                    vectors.push(v * Complex64::new(max.max(0.0).sqrt(), 0.0));
                }
            }
        } else {
            let mut rng = seed.derive(&[cand as u64]).rng();
            for idx in 0..n_blocks * k_users {
                let g = complex_gaussian_vector(design.n_tx, 1.0, &mut rng);
                vectors.push(&sqrts[idx] * g);
            }
        }
        // Candidate design with jointly rescaled power.
        let mut cand_design = design.clone();
        for b in 0..n_blocks {
            for k in 0..k_users {
                *cand_design.w_mut(b, k) = outer(&vectors[b * k_users + k], &vectors[b * k_users + k]);
            }
        }
        let p = cand_design.total_power();
        if p <= 0.0 {
            continue;
        }
        let rho = total_power / p;
        cand_design.scale(rho);
        let scaled_vectors: Vec<crate::CVector> =
            vectors.iter().map(|v| v * Complex64::new(rho.sqrt(), 0.0)).collect();
        cand_design.w_vectors = Some(scaled_vectors);

        // Exact constraints within the relative slack.
        let relaxed_thresholds = DesignThresholds {
            eta_eve: thresholds.eta_eve * (1.0 + slack),
            eta_psl: thresholds.eta_psl * (1.0 - slack),
            eta_isl: thresholds.eta_isl * (1.0 - slack),
            eta_secrecy: thresholds.eta_secrecy * (1.0 - slack),
            ..thresholds.clone()
        };
        let violation = exact_violation(scenario, &relaxed_thresholds, &cand_design)?;
        let report = metrics::full_report(&cand_design, scenario, &thresholds.isl_angles)?;
        let objective = report.min_snr;
        if violation <= 0.0 {
            if best.as_ref().map(|(o, _)| objective > *o).unwrap_or(true) {
                best = Some((objective, cand_design));
            }
        } else if best_violation.as_ref().map(|(v, _)| violation < *v).unwrap_or(true) {
            best_violation = Some((violation, cand_design));
        }
    }

    match best {
        Some((objective, design)) => Ok(RandomizationOutcome {
            degradation: ((relaxed.eta_b - objective) / relaxed.eta_b.max(1e-300)).max(0.0),
            design,
            failed: false,
            candidates_tried: draws,
        }),
        None => {
            let (_, design) = best_violation.expect("at least one candidate");
            Ok(RandomizationOutcome {
                degradation: 1.0,
                design,
                failed: true,
                candidates_tried: draws,
            })
        }
    }
}
