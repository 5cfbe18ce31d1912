//! Variable layout, canonicalization to `<=` form, and point evaluation
//! (values, slacks, cone factorizations, gradients).

use super::{
    AffineHermitianMap, ConicProgram, ConstraintKind, IneqSense, LinearExpr,
    LogDetTerm, Objective, PrimalPoint, SolverError,
};
use crate::cmat::{cholesky_pd, chol_solve_mat, herm_grad_coords, herm_to_vec, hermitize, vec_to_herm};
use crate::CMatrix;
use nalgebra::DVector;

/// Real coordinate layout: block svec coordinates first, scalars last.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub block_dims: Vec<usize>,
    pub block_offsets: Vec<usize>,
    pub scalar_offset: usize,
    pub n_scalars: usize,
    pub n: usize,
}

impl Layout {
    pub fn new(program: &ConicProgram) -> Self {
        let mut offsets = Vec::with_capacity(program.psd_blocks.len());
        let mut off = 0usize;
        for &d in &program.psd_blocks {
            offsets.push(off);
            off += d * d;
        }
        Layout {
            block_dims: program.psd_blocks.clone(),
            block_offsets: offsets,
            scalar_offset: off,
            n_scalars: program.n_scalars,
            n: off + program.n_scalars,
        }
    }

    pub fn block_of(&self, x: &DVector<f64>, b: usize) -> CMatrix {
        let d = self.block_dims[b];
        let o = self.block_offsets[b];
        vec_to_herm(&x.as_slice()[o..o + d * d], d)
    }

    pub fn scalar_of(&self, x: &DVector<f64>, i: usize) -> f64 {
        x[self.scalar_offset + i]
    }

    pub fn to_vec(&self, p: &PrimalPoint) -> DVector<f64> {
        let mut x = DVector::zeros(self.n);
        for (b, m) in p.blocks.iter().enumerate() {
            let v = herm_to_vec(&hermitize(m));
            let o = self.block_offsets[b];
            x.rows_mut(o, v.len()).copy_from(&v);
        }
        for (i, s) in p.scalars.iter().enumerate() {
            x[self.scalar_offset + i] = *s;
        }
        x
    }

    pub fn to_point(&self, x: &DVector<f64>) -> PrimalPoint {
        PrimalPoint {
            blocks: (0..self.block_dims.len()).map(|b| self.block_of(x, b)).collect(),
            scalars: (0..self.n_scalars).map(|i| self.scalar_of(x, i)).collect(),
        }
    }

    /// Scatter-accumulate `factor * expr` into a gradient vector.
    pub fn add_expr_gradient(&self, expr: &LinearExpr, factor: f64, out: &mut DVector<f64>) {
        for (b, s) in &expr.block_coeffs {
            let g = herm_grad_coords(s);
            let o = self.block_offsets[*b];
            for (k, v) in g.iter().enumerate() {
                out[o + k] += factor * v;
            }
        }
        for (i, c) in &expr.scalar_coeffs {
            out[self.scalar_offset + i] += factor * c;
        }
    }

    pub fn expr_value(&self, expr: &LinearExpr, x: &DVector<f64>) -> f64 {
        let mut acc = expr.constant;
        for (b, s) in &expr.block_coeffs {
            let xb = self.block_of(x, *b);
            acc += crate::cmat::re_trace_prod(s, &xb);
        }
        for (i, c) in &expr.scalar_coeffs {
            acc += c * x[self.scalar_offset + i];
        }
        acc
    }

    pub fn map_value(&self, map: &AffineHermitianMap, x: &DVector<f64>) -> CMatrix {
        let mut g = map.constant.clone();
        for (b, h, sign) in &map.congruences {
            let xb = self.block_of(x, *b);
            g += (h * xb * h.adjoint()).map(|z| z * *sign);
        }
        for (lin, k) in &map.functionals {
            let v = self.expr_value(lin, x);
            g += k.map(|z| z * v);
        }
        hermitize(&g)
    }
}

/// Blocks co-appearing in any log-det congruence share a group; the Newton
/// system stays block-diagonal per group plus a global border.
#[derive(Debug, Clone)]
pub(crate) struct Grouping {
    pub group_of_block: Vec<usize>,
    /// Blocks per group.
    pub groups: Vec<Vec<usize>>,
    /// Coordinate offset of each block within its group.
    pub offset_in_group: Vec<usize>,
    pub group_sizes: Vec<usize>,
}

impl Grouping {
    fn new(n_blocks: usize, couplings: &[Vec<usize>], dims: &[usize]) -> Self {
        let mut parent: Vec<usize> = (0..n_blocks).collect();
        fn find(parent: &mut Vec<usize>, i: usize) -> usize {
            if parent[i] != i {
                let r = find(parent, parent[i]);
                parent[i] = r;
            }
            parent[i]
        }
        for set in couplings {
            for w in set.windows(2) {
                let a = find(&mut parent, w[0]);
                let b = find(&mut parent, w[1]);
                if a != b {
                    parent[a] = b;
                }
            }
        }
        let mut root_to_group = std::collections::HashMap::new();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        let mut group_of_block = vec![0usize; n_blocks];
        for b in 0..n_blocks {
            let r = find(&mut parent, b);
            let g = *root_to_group.entry(r).or_insert_with(|| {
                groups.push(Vec::new());
                groups.len() - 1
            });
            group_of_block[b] = g;
            groups[g].push(b);
        }
        let mut offset_in_group = vec![0usize; n_blocks];
        let mut group_sizes = vec![0usize; groups.len()];
        for (g, blocks) in groups.iter().enumerate() {
            let mut off = 0;
            for &b in blocks {
                offset_in_group[b] = off;
                off += dims[b] * dims[b];
            }
            group_sizes[g] = off;
        }
        Grouping { group_of_block, groups, offset_in_group, group_sizes }
    }
}

pub(crate) struct CanonIneq {
    pub name: String,
    pub expr: LinearExpr,
    pub logdets: Vec<LogDetTerm>,
    pub rhs: f64,
    /// `Some(group)` when every touched block lives in one group (the
    /// gradient outer product then folds into the bordered pattern).
    pub single_group: Option<usize>,
    /// Gradient of the affine part (constant across iterates).
    pub const_grad: DVector<f64>,
}

pub(crate) struct CanonEq {
    pub expr: LinearExpr,
    pub rhs: f64,
}

pub(crate) struct CanonMembership {
    pub map: AffineHermitianMap,
    /// Gradients of the functional coefficients (constant across iterates).
    pub func_grads: Vec<DVector<f64>>,
}

/// Program canonicalized to minimize / `<=` form with structure analysis.
pub(crate) struct CanonProgram {
    pub layout: Layout,
    pub grouping: Grouping,
    /// Objective gradient (minimize form) and constant.
    pub c: DVector<f64>,
    pub c_const: f64,
    /// Maps a minimized value back to the declared sense.
    pub obj_sign: f64,
    pub ineqs: Vec<CanonIneq>,
    pub eqs: Vec<CanonEq>,
    pub memberships: Vec<CanonMembership>,
    /// Total barrier parameter (cone dims plus inequality count).
    pub nu_total: f64,
}

fn expr_blocks(expr: &LinearExpr) -> Vec<usize> {
    expr.block_coeffs.iter().map(|(b, _)| *b).collect()
}

fn map_blocks(map: &AffineHermitianMap) -> Vec<usize> {
    let mut v: Vec<usize> = map.congruences.iter().map(|(b, _, _)| *b).collect();
    for (lin, _) in &map.functionals {
        v.extend(expr_blocks(lin));
    }
    v
}

fn expr_touches_scalars(expr: &LinearExpr) -> bool {
    !expr.scalar_coeffs.is_empty()
}

fn map_touches_scalars(map: &AffineHermitianMap) -> bool {
    map.functionals.iter().any(|(lin, _)| expr_touches_scalars(lin))
}

pub(crate) fn canonicalize(program: &ConicProgram) -> Result<CanonProgram, SolverError> {
    let layout = Layout::new(program);

    // Group blocks by congruence co-occurrence across all log-det maps.
    let mut couplings: Vec<Vec<usize>> = Vec::new();
    for c in &program.constraints {
        match &c.kind {
            ConstraintKind::Ineq { logdets, .. } => {
                for t in logdets {
                    couplings.push(map_blocks(&t.map));
                }
            }
            ConstraintKind::PsdMembership { map } => {
                // Only congruence blocks force grouping; functional blocks
                // enter through low-rank factors.
                couplings.push(map.congruences.iter().map(|(b, _, _)| *b).collect());
            }
            ConstraintKind::Eq { .. } => {}
        }
    }
    // Inequality log-det congruence blocks couple in the dense sub-Hessian;
    // functional-only maps stay low-rank. Memberships handled above.
    let mut couplings2: Vec<Vec<usize>> = Vec::new();
    for set in couplings {
        couplings2.push(set);
    }
    let grouping = Grouping::new(program.psd_blocks.len(), &couplings2, &program.psd_blocks);

    // Objective in minimize form.
    let obj_sign = match program.sense {
        Objective::Maximize => -1.0,
        Objective::Minimize => 1.0,
    };
    let mut c = DVector::zeros(layout.n);
    layout.add_expr_gradient(&program.objective, obj_sign, &mut c);
    let c_const = obj_sign * program.objective.constant;

    let mut ineqs = Vec::new();
    let mut eqs = Vec::new();
    let mut memberships = Vec::new();
    let mut nu_total = 0.0;
    for &d in &program.psd_blocks {
        nu_total += d as f64;
    }
    for cst in &program.constraints {
        match &cst.kind {
            ConstraintKind::Ineq { expr, logdets, sense, rhs } => {
                let (expr, logdets, rhs) = match sense {
                    IneqSense::Le => (expr.clone(), logdets.clone(), *rhs),
                    IneqSense::Ge => (
                        expr.negated(),
                        logdets
                            .iter()
                            .map(|t| LogDetTerm { weight: -t.weight, map: t.map.clone() })
                            .collect(),
                        -*rhs,
                    ),
                };
                // Support analysis.
                let mut blocks = expr_blocks(&expr);
                let mut scalars = expr_touches_scalars(&expr);
                for t in &logdets {
                    blocks.extend(map_blocks(&t.map));
                    scalars |= map_touches_scalars(&t.map);
                }
                let groups: std::collections::BTreeSet<usize> =
                    blocks.iter().map(|&b| grouping.group_of_block[b]).collect();
                let single_group = if groups.len() == 1 {
                    Some(*groups.iter().next().unwrap())
                } else if groups.is_empty() {
                    // Scalar-only constraint folds into the border alone.
                    Some(usize::MAX)
                } else {
                    None
                };
                let _ = scalars;
                let mut const_grad = DVector::zeros(layout.n);
                layout.add_expr_gradient(&expr, 1.0, &mut const_grad);
                ineqs.push(CanonIneq {
                    name: cst.name.clone(),
                    expr,
                    logdets,
                    rhs,
                    single_group,
                    const_grad,
                });
                nu_total += 1.0;
            }
            ConstraintKind::Eq { expr, rhs } => {
                eqs.push(CanonEq { expr: expr.clone(), rhs: *rhs });
            }
            ConstraintKind::PsdMembership { map } => {
                nu_total += map.dim as f64;
                let func_grads = map
                    .functionals
                    .iter()
                    .map(|(lin, _)| {
                        let mut v = DVector::zeros(layout.n);
                        layout.add_expr_gradient(lin, 1.0, &mut v);
                        v
                    })
                    .collect();
                memberships.push(CanonMembership { map: map.clone(), func_grads });
            }
        }
    }

    Ok(CanonProgram {
        layout,
        grouping,
        c,
        c_const,
        obj_sign,
        ineqs,
        eqs,
        memberships,
        nu_total,
    })
}

/// Everything the barrier loop needs at one cone-interior point. The point
/// may still violate scalar inequalities (phase I); `interior` and
/// `barrier = +inf` flag that case.
pub(crate) struct PointEval {
    /// Minimize-form objective value `c.x + c_const`.
    pub f0: f64,
    /// Sum of all barrier terms (without the `t * f0` part); infinite when
    /// some inequality slack is non-positive.
    pub barrier: f64,
    /// All inequality slacks strictly positive.
    pub interior: bool,
    /// Per-inequality `g_j(x)` and slack `rhs - g`.
    pub g_values: Vec<f64>,
    pub slacks: Vec<f64>,
    /// Per inequality, per log-det term: `(G, G^{-1})`.
    pub ineq_logdets: Vec<Vec<(CMatrix, CMatrix)>>,
    /// Per membership: `(G, G^{-1})`.
    pub member_inv: Vec<(CMatrix, CMatrix)>,
    /// Per block: `X_b^{-1}`.
    pub block_inv: Vec<CMatrix>,
}

pub(crate) struct Evaluator<'a> {
    pub prog: &'a CanonProgram,
}

impl<'a> Evaluator<'a> {
    pub fn new(prog: &'a CanonProgram) -> Self {
        Evaluator { prog }
    }

    /// Evaluate at `x`; `None` when `x` is not strictly interior.
    pub fn eval(&self, x: &DVector<f64>) -> Option<PointEval> {
        let lay = &self.prog.layout;
        let mut barrier = 0.0;

        let mut block_inv = Vec::with_capacity(lay.block_dims.len());
        for b in 0..lay.block_dims.len() {
            let xb = lay.block_of(x, b);
            let l = cholesky_pd(&xb)?;
            let mut ld = 0.0;
            for i in 0..l.nrows() {
                ld += l[(i, i)].re.ln();
            }
            barrier -= 2.0 * ld;
            let inv = chol_solve_mat(&l, &CMatrix::identity(xb.nrows(), xb.nrows()));
            block_inv.push(hermitize(&inv));
        }

        let mut member_inv = Vec::with_capacity(self.prog.memberships.len());
        for m in &self.prog.memberships {
            let g = lay.map_value(&m.map, x);
            let l = cholesky_pd(&g)?;
            let mut ld = 0.0;
            for i in 0..l.nrows() {
                ld += l[(i, i)].re.ln();
            }
            barrier -= 2.0 * ld;
            let inv = chol_solve_mat(&l, &CMatrix::identity(g.nrows(), g.nrows()));
            member_inv.push((g, hermitize(&inv)));
        }

        let mut g_values = Vec::with_capacity(self.prog.ineqs.len());
        let mut slacks = Vec::with_capacity(self.prog.ineqs.len());
        let mut ineq_logdets = Vec::with_capacity(self.prog.ineqs.len());
        let mut interior = true;
        for iq in &self.prog.ineqs {
            let mut g = lay.expr_value(&iq.expr, x);
            let mut lds = Vec::with_capacity(iq.logdets.len());
            for t in &iq.logdets {
                let gm = lay.map_value(&t.map, x);
                let l = cholesky_pd(&gm)?;
                let mut ld = 0.0;
                for i in 0..l.nrows() {
                    ld += l[(i, i)].re.ln();
                }
                g += t.weight * 2.0 * ld;
                let inv = chol_solve_mat(&l, &CMatrix::identity(gm.nrows(), gm.nrows()));
                lds.push((gm, hermitize(&inv)));
            }
            if !g.is_finite() {
                return None;
            }
            let slack = iq.rhs - g;
            if slack > 0.0 {
                barrier -= slack.ln();
            } else {
                interior = false;
                barrier = f64::INFINITY;
            }
            g_values.push(g);
            slacks.push(slack);
            ineq_logdets.push(lds);
        }

        let f0 = self.prog.c.dot(x) + self.prog.c_const;
        Some(PointEval {
            f0,
            barrier,
            interior,
            g_values,
            slacks,
            ineq_logdets,
            member_inv,
            block_inv,
        })
    }

    /// Gradient of one inequality's `g_j` (canonical `<=` form).
    pub fn ineq_gradient(&self, iq: &CanonIneq, lds: &[(CMatrix, CMatrix)], x: &DVector<f64>) -> DVector<f64> {
        let lay = &self.prog.layout;
        let mut g = iq.const_grad.clone();
        for (t, (_, ginv)) in iq.logdets.iter().zip(lds) {
            add_logdet_gradient(lay, &t.map, ginv, t.weight, &mut g, x);
        }
        g
    }

    /// All inequality gradients at one evaluated point.
    pub fn ineq_gradients(&self, x: &DVector<f64>, ev: &PointEval) -> Vec<DVector<f64>> {
        self.prog
            .ineqs
            .iter()
            .enumerate()
            .map(|(j, iq)| self.ineq_gradient(iq, &ev.ineq_logdets[j], x))
            .collect()
    }

    /// Gradient of `phi_t = t * f0 + barriers` at an evaluated point, given
    /// the inequality gradients from [`Self::ineq_gradients`].
    pub fn phi_gradient(
        &self,
        x: &DVector<f64>,
        ev: &PointEval,
        t: f64,
        ineq_grads: &[DVector<f64>],
    ) -> DVector<f64> {
        let lay = &self.prog.layout;
        let mut grad = &self.prog.c * t;
        // Block cone barriers: -ln det X_b.
        for (b, inv) in ev.block_inv.iter().enumerate() {
            let gvec = herm_grad_coords(inv);
            let o = lay.block_offsets[b];
            for (k, v) in gvec.iter().enumerate() {
                grad[o + k] -= v;
            }
        }
        // Membership barriers: -ln det G_m(x).
        for (m, (_, ginv)) in self.prog.memberships.iter().zip(&ev.member_inv) {
            add_logdet_gradient(lay, &m.map, ginv, -1.0, &mut grad, x);
        }
        // Inequality barriers: -ln(rhs - g) -> (1/slack) * grad g.
        for (j, gj) in ineq_grads.iter().enumerate() {
            grad.axpy(1.0 / ev.slacks[j], gj, 1.0);
        }
        grad
    }
}

/// Accumulate `factor * grad ln det G(x)` into `out`.
pub(crate) fn add_logdet_gradient(
    lay: &Layout,
    map: &AffineHermitianMap,
    ginv: &CMatrix,
    factor: f64,
    out: &mut DVector<f64>,
    _x: &DVector<f64>,
) {
    for (b, h, sign) in &map.congruences {
        let m = (h.adjoint() * ginv * h).map(|z| z * *sign);
        let gvec = herm_grad_coords(&m);
        let o = lay.block_offsets[*b];
        for (k, v) in gvec.iter().enumerate() {
            out[o + k] += factor * v;
        }
    }
    for (lin, k) in &map.functionals {
        let coeff = crate::cmat::re_trace_prod(ginv, k);
        lay.add_expr_gradient(lin, factor * coeff, out);
    }
}
