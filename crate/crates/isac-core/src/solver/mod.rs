//! Self-contained interior-point solver for small conic programs with
//! Hermitian PSD block variables, free scalars, trace-affine constraints and
//! log-det terms.
//!
//! Canonical problem:
//!
//! ```text
//! max/min  <C_b, X_b> + c^T z
//! s.t.     lin_j(X, z) + sum_t w_t ln det G_t(X, z)  {<=,>=,=}  rhs_j
//!          G_m(X, z)  >= 0                (affine PSD membership)
//!          X_b >= 0                       (Hermitian PSD blocks)
//! ```
//!
//! where every `G` is an affine Hermitian-matrix-valued map of the
//! variables. Convexity requires `w_t <= 0` in `<=` constraints and
//! `w_t >= 0` in `>=` constraints; equalities admit no log-det terms. An
//! affine map may use either signed congruences `+/- H X_b H^H` or
//! entry functionals `lin(X, z) * K`, not both (the two shapes cover the
//! emitted programs and keep the Hessian assembly structured).
//!
//! The algorithm is a primal path-following barrier method: log-det
//! barriers on the PSD cones and membership maps, log barriers on
//! inequality slacks, Newton steps on the equality-constrained centering
//! problem, with an adaptive centering-parameter schedule and step-halving
//! line search. Infeasible starts are handled by an elastic phase-I that
//! relaxes scalar inequalities only (cone interiority is maintained by
//! construction). A solver instance is single-use and single-threaded.

mod barrier;
mod dump;
mod eval;
mod kkt;
mod newton;

pub use dump::{dump_program, parse_program};
pub use kkt::{check_kkt, KktResiduals};

use crate::CMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid program: {0}")]
    InvalidProgram(String),
    #[error("no interior starting point found: {0}")]
    NoInterior(String),
    #[error("numerical breakdown: {0}")]
    Numerical(String),
    #[error("dump parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Linear functional of the variables:
/// `sum_b Re Tr(S_b X_b) + sum_i c_i z_i + constant`.
#[derive(Debug, Clone, Default)]
pub struct LinearExpr {
    pub block_coeffs: Vec<(usize, CMatrix)>,
    pub scalar_coeffs: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinearExpr {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn scalar(idx: usize, coeff: f64) -> Self {
        LinearExpr { scalar_coeffs: vec![(idx, coeff)], ..Default::default() }
    }

    pub fn block(idx: usize, coeff: CMatrix) -> Self {
        LinearExpr { block_coeffs: vec![(idx, coeff)], ..Default::default() }
    }

    pub fn with_block(mut self, idx: usize, coeff: CMatrix) -> Self {
        self.block_coeffs.push((idx, coeff));
        self
    }

    pub fn with_scalar(mut self, idx: usize, coeff: f64) -> Self {
        self.scalar_coeffs.push((idx, coeff));
        self
    }

    pub fn with_constant(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    fn negated(&self) -> LinearExpr {
        LinearExpr {
            block_coeffs: self
                .block_coeffs
                .iter()
                .map(|(b, m)| (*b, m.map(|z| -z)))
                .collect(),
            scalar_coeffs: self.scalar_coeffs.iter().map(|(i, c)| (*i, -c)).collect(),
            constant: -self.constant,
        }
    }
}

/// Affine Hermitian-matrix-valued map of the variables.
#[derive(Debug, Clone)]
pub struct AffineHermitianMap {
    pub dim: usize,
    /// Constant Hermitian term.
    pub constant: CMatrix,
    /// Signed congruences: `sign * H X_b H^H` with `H` of shape `dim x d_b`.
    pub congruences: Vec<(usize, CMatrix, f64)>,
    /// Entry functionals: `lin(X, z) * K` with Hermitian `K`.
    pub functionals: Vec<(LinearExpr, CMatrix)>,
}

impl AffineHermitianMap {
    pub fn constant_only(constant: CMatrix) -> Self {
        let dim = constant.nrows();
        AffineHermitianMap { dim, constant, congruences: Vec::new(), functionals: Vec::new() }
    }

    pub fn with_congruence(mut self, block: usize, h: CMatrix, sign: f64) -> Self {
        self.congruences.push((block, h, sign));
        self
    }

    pub fn with_functional(mut self, lin: LinearExpr, k: CMatrix) -> Self {
        self.functionals.push((lin, k));
        self
    }
}

/// `weight * ln det(G(X, z))` inside a constraint expression.
#[derive(Debug, Clone)]
pub struct LogDetTerm {
    pub weight: f64,
    pub map: AffineHermitianMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IneqSense {
    Le,
    Ge,
}

#[derive(Debug, Clone)]
pub enum ConstraintKind {
    /// `expr + sum_t w_t ln det G_t  sense  rhs`
    Ineq { expr: LinearExpr, logdets: Vec<LogDetTerm>, sense: IneqSense, rhs: f64 },
    /// `expr = rhs`
    Eq { expr: LinearExpr, rhs: f64 },
    /// `G(X, z) >= 0`
    PsdMembership { map: AffineHermitianMap },
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub name: String,
    pub kind: ConstraintKind,
}

impl Constraint {
    pub fn le(name: impl Into<String>, expr: LinearExpr, logdets: Vec<LogDetTerm>, rhs: f64) -> Self {
        Constraint {
            name: name.into(),
            kind: ConstraintKind::Ineq { expr, logdets, sense: IneqSense::Le, rhs },
        }
    }

    pub fn ge(name: impl Into<String>, expr: LinearExpr, logdets: Vec<LogDetTerm>, rhs: f64) -> Self {
        Constraint {
            name: name.into(),
            kind: ConstraintKind::Ineq { expr, logdets, sense: IneqSense::Ge, rhs },
        }
    }

    pub fn eq(name: impl Into<String>, expr: LinearExpr, rhs: f64) -> Self {
        Constraint { name: name.into(), kind: ConstraintKind::Eq { expr, rhs } }
    }

    pub fn psd(name: impl Into<String>, map: AffineHermitianMap) -> Self {
        Constraint { name: name.into(), kind: ConstraintKind::PsdMembership { map } }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Maximize,
    Minimize,
}

/// Canonical conic program over Hermitian PSD blocks and free scalars.
#[derive(Debug, Clone)]
pub struct ConicProgram {
    /// Dimensions of the PSD block variables.
    pub psd_blocks: Vec<usize>,
    pub n_scalars: usize,
    pub objective: LinearExpr,
    pub sense: Objective,
    pub constraints: Vec<Constraint>,
}

impl ConicProgram {
    pub fn new(psd_blocks: Vec<usize>, n_scalars: usize, objective: LinearExpr, sense: Objective) -> Self {
        ConicProgram { psd_blocks, n_scalars, objective, sense, constraints: Vec::new() }
    }

    pub fn add(&mut self, c: Constraint) {
        self.constraints.push(c);
    }

    /// Structural validation: indices in range, Hermitian coefficients,
    /// convex log-det weights, no congruence/functional mixing.
    pub fn validate(&self) -> Result<(), SolverError> {
        let check_expr = |e: &LinearExpr, what: &str| -> Result<(), SolverError> {
            for (b, m) in &e.block_coeffs {
                if *b >= self.psd_blocks.len() {
                    return Err(SolverError::InvalidProgram(format!("{what}: block {b} out of range")));
                }
                if m.nrows() != self.psd_blocks[*b] || m.ncols() != self.psd_blocks[*b] {
                    return Err(SolverError::InvalidProgram(format!("{what}: coefficient shape")));
                }
                if crate::cmat::fro_norm(&(m - m.adjoint())) > 1e-10 * (1.0 + crate::cmat::fro_norm(m)) {
                    return Err(SolverError::InvalidProgram(format!("{what}: non-Hermitian coefficient")));
                }
            }
            for (i, _) in &e.scalar_coeffs {
                if *i >= self.n_scalars {
                    return Err(SolverError::InvalidProgram(format!("{what}: scalar {i} out of range")));
                }
            }
            Ok(())
        };
        let check_map = |m: &AffineHermitianMap, what: &str| -> Result<(), SolverError> {
            if m.constant.nrows() != m.dim || m.constant.ncols() != m.dim {
                return Err(SolverError::InvalidProgram(format!("{what}: constant shape")));
            }
            if !m.congruences.is_empty() && !m.functionals.is_empty() {
                return Err(SolverError::InvalidProgram(format!(
                    "{what}: affine maps use either congruences or functionals, not both"
                )));
            }
            for (b, h, _) in &m.congruences {
                if *b >= self.psd_blocks.len() || h.nrows() != m.dim || h.ncols() != self.psd_blocks[*b] {
                    return Err(SolverError::InvalidProgram(format!("{what}: congruence shape")));
                }
            }
            for (lin, k) in &m.functionals {
                check_expr(lin, what)?;
                if k.nrows() != m.dim || k.ncols() != m.dim {
                    return Err(SolverError::InvalidProgram(format!("{what}: functional shape")));
                }
            }
            Ok(())
        };
        check_expr(&self.objective, "objective")?;
        for c in &self.constraints {
            match &c.kind {
                ConstraintKind::Ineq { expr, logdets, sense, .. } => {
                    check_expr(expr, &c.name)?;
                    for t in logdets {
                        check_map(&t.map, &c.name)?;
                        let ok = match sense {
                            IneqSense::Le => t.weight <= 0.0,
                            IneqSense::Ge => t.weight >= 0.0,
                        };
                        if !ok {
                            return Err(SolverError::InvalidProgram(format!(
                                "{}: log-det weight {} breaks convexity for this sense",
                                c.name, t.weight
                            )));
                        }
                    }
                }
                ConstraintKind::Eq { expr, .. } => check_expr(expr, &c.name)?,
                ConstraintKind::PsdMembership { map } => check_map(map, &c.name)?,
            }
        }
        Ok(())
    }
}

/// A primal point: one Hermitian matrix per PSD block plus the scalars.
#[derive(Debug, Clone)]
pub struct PrimalPoint {
    pub blocks: Vec<CMatrix>,
    pub scalars: Vec<f64>,
}

impl PrimalPoint {
    pub fn identity_scaled(program: &ConicProgram, scale: f64) -> Self {
        PrimalPoint {
            blocks: program
                .psd_blocks
                .iter()
                .map(|&d| CMatrix::identity(d, d).scale(scale))
                .collect(),
            scalars: vec![0.0; program.n_scalars],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolverStatus {
    Optimal,
    /// Phase-I ended with positive violation; the listed constraints bind.
    Infeasible { binding: Vec<String> },
    MaxIterations,
}

/// Dual variables in the canonical pairing.
#[derive(Debug, Clone, Default)]
pub struct Duals {
    /// One multiplier per inequality (order of appearance), `>= 0`.
    pub ineq: Vec<f64>,
    /// One multiplier per equality.
    pub eq: Vec<f64>,
    /// PSD dual per block variable.
    pub blocks: Vec<CMatrix>,
    /// PSD dual per membership constraint.
    pub memberships: Vec<CMatrix>,
}

#[derive(Debug, Clone)]
pub struct SolverResult {
    pub status: SolverStatus,
    pub point: PrimalPoint,
    /// Objective in the program's own sense.
    pub objective: f64,
    pub duals: Duals,
    pub kkt: KktResiduals,
    pub newton_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub feas_tol: f64,
    pub opt_tol: f64,
    pub max_newton_iters: usize,
    /// Initial centering parameter.
    pub t_init: f64,
    /// Multiplicative centering update (adapted online).
    pub mu: f64,
    /// Optional strictly feasible warm start.
    pub initial_point: Option<PrimalPoint>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            feas_tol: 1e-7,
            opt_tol: 1e-6,
            max_newton_iters: 4000,
            t_init: 1.0,
            mu: 30.0,
            initial_point: None,
        }
    }
}

/// Solve the program with the path-following barrier method.
pub fn solve(program: &ConicProgram, config: &SolverConfig) -> Result<SolverResult, SolverError> {
    program.validate()?;
    barrier::solve_impl(program, config)
}

/// Whether `point` is strictly interior to every cone and inequality.
pub fn is_strictly_feasible(program: &ConicProgram, point: &PrimalPoint) -> bool {
    barrier::is_strictly_feasible(program, point)
}

/// Finite-difference consistency report for the barrier gradient and the
/// Newton step at a strictly interior point; returns max relative errors.
/// Diagnostic aid for the derivative assembly, used by tests.
pub fn debug_fd_check(program: &ConicProgram, point: &PrimalPoint, t: f64) -> String {
    barrier::debug_fd_check(program, point, t)
}

#[cfg(test)]
mod tests;
