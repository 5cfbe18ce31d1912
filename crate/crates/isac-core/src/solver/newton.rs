//! Structured Newton system for the barrier subproblems.
//!
//! The Hessian of the centering objective decomposes into dense per-group
//! diagonal parts (cone barriers, log-det congruence terms, foldable
//! gradient outer products) plus a thin global border. The border carries
//! the scalar variables, the equality rows, and the dense low-rank factors
//! (cross-group constraint gradients, functional-map Hessians) embedded in
//! KKT form: a rank factor `sigma v v^T` becomes a border column `v` with
//! diagonal entry `-1/sigma`. One Schur complement onto the border solves
//! the whole system.

use super::eval::{CanonProgram, PointEval};
use crate::cmat::{re_trace_prod, sym_kron};
use nalgebra::{DMatrix, DVector};

pub(crate) struct NewtonWorkspace {
    /// Dense per-group sub-Hessians.
    d: Vec<DMatrix<f64>>,
    /// Per-group border coupling (group coords x border columns).
    e: Vec<DMatrix<f64>>,
    /// Border block: scalars, equality multipliers, low-rank columns.
    s: DMatrix<f64>,
    /// Low-rank factors `(sigma, v)` gathered during assembly.
    lowrank: Vec<(f64, DVector<f64>)>,
    /// Constant equality gradient pieces, precomputed.
    eq_group: Vec<Vec<DVector<f64>>>, // [eq][group]
    eq_scalar: Vec<DVector<f64>>,     // [eq]
    n_scalars: usize,
    n_eq: usize,
}

pub(crate) struct NewtonSolution {
    pub dx: DVector<f64>,
    /// Newton decrement squared `-grad . dx`.
    pub decrement_sq: f64,
}

impl NewtonWorkspace {
    pub fn new(prog: &CanonProgram) -> Self {
        let n_groups = prog.grouping.groups.len();
        let n_scalars = prog.layout.n_scalars;
        let n_eq = prog.eqs.len();
        let d = prog
            .grouping
            .group_sizes
            .iter()
            .map(|&s| DMatrix::zeros(s, s))
            .collect();
        let mut eq_group = Vec::with_capacity(n_eq);
        let mut eq_scalar = Vec::with_capacity(n_eq);
        for eq in &prog.eqs {
            let mut full = DVector::zeros(prog.layout.n);
            prog.layout.add_expr_gradient(&eq.expr, 1.0, &mut full);
            let mut per_group = Vec::with_capacity(n_groups);
            for g in 0..n_groups {
                per_group.push(gather_group(prog, &full, g));
            }
            eq_group.push(per_group);
            eq_scalar.push(DVector::from_fn(n_scalars, |i, _| full[prog.layout.scalar_offset + i]));
        }
        NewtonWorkspace {
            d,
            e: Vec::new(),
            s: DMatrix::zeros(0, 0),
            lowrank: Vec::new(),
            eq_group,
            eq_scalar,
            n_scalars,
            n_eq,
        }
    }

    fn glob_width(&self) -> usize {
        self.n_scalars + self.n_eq + self.lowrank.len()
    }

    /// Scatter a dense symmetric piece between two blocks into a group matrix.
    fn scatter_block_pair(
        prog: &CanonProgram,
        d: &mut DMatrix<f64>,
        b_row: usize,
        b_col: usize,
        piece: &DMatrix<f64>,
    ) {
        let ro = prog.grouping.offset_in_group[b_row];
        let co = prog.grouping.offset_in_group[b_col];
        for i in 0..piece.nrows() {
            for j in 0..piece.ncols() {
                d[(ro + i, co + j)] += piece[(i, j)];
            }
        }
    }

    /// Assemble the Hessian of `phi_t` at the evaluated point, given the
    /// inequality gradients from `Evaluator::ineq_gradients`.
    pub fn assemble(
        &mut self,
        prog: &CanonProgram,
        ev: &PointEval,
        ineq_grads: &[DVector<f64>],
    ) {
        let grouping = &prog.grouping;
        for m in &mut self.d {
            m.fill(0.0);
        }
        self.lowrank.clear();
        // Folded gradient outer products wait until the border width is known.
        let mut folds: Vec<(usize, f64, DVector<f64>)> = Vec::new();

        // Block cone barriers.
        for (b, inv) in ev.block_inv.iter().enumerate() {
            let k = sym_kron(inv);
            let g = grouping.group_of_block[b];
            Self::scatter_block_pair(prog, &mut self.d[g], b, b, &k);
        }
        // Membership barriers.
        for (m, (_, ginv)) in prog.memberships.iter().zip(&ev.member_inv) {
            self.add_logdet_hessian(prog, &m.map, &m.func_grads, ginv, 1.0);
        }
        // Inequality barriers.
        for (j, iq) in prog.ineqs.iter().enumerate() {
            let slack = ev.slacks[j];
            for (t, (_, ginv)) in iq.logdets.iter().zip(&ev.ineq_logdets[j]) {
                self.add_logdet_hessian(prog, &t.map, &[], ginv, (-t.weight) / slack);
            }
            let grad = ineq_grads[j].clone();
            let sigma = 1.0 / (slack * slack);
            match iq.single_group {
                Some(g) => folds.push((g, sigma, grad)),
                None => self.lowrank.push((sigma, grad)),
            }
        }

        let width = self.glob_width();
        self.e = grouping
            .group_sizes
            .iter()
            .map(|&s| DMatrix::zeros(s, width))
            .collect();
        self.s = DMatrix::zeros(width, width);

        for (g, sigma, grad) in &folds {
            self.fold_outer(prog, *g, *sigma, grad);
        }
        // Equality borders.
        for (r, per_group) in self.eq_group.iter().enumerate() {
            let col = self.n_scalars + r;
            for (g, cg) in per_group.iter().enumerate() {
                for i in 0..cg.len() {
                    self.e[g][(i, col)] += cg[i];
                }
            }
            for i in 0..self.n_scalars {
                self.s[(i, col)] += self.eq_scalar[r][i];
                self.s[(col, i)] += self.eq_scalar[r][i];
            }
        }
        // Low-rank factors as border columns with -1/sigma diagonal.
        for (k, (sigma, v)) in self.lowrank.iter().enumerate() {
            let col = self.n_scalars + self.n_eq + k;
            for g in 0..grouping.groups.len() {
                let vg = gather_group(prog, v, g);
                for i in 0..vg.len() {
                    self.e[g][(i, col)] += vg[i];
                }
            }
            for i in 0..self.n_scalars {
                let vs = v[prog.layout.scalar_offset + i];
                self.s[(i, col)] += vs;
                self.s[(col, i)] += vs;
            }
            self.s[(col, col)] = -1.0 / sigma;
        }
        // Ridges keep the factorizations alive when curvature degenerates.
        for g in 0..self.d.len() {
            let ridge = 1e-12 * (1.0 + self.d[g].diagonal().amax());
            for i in 0..self.d[g].nrows() {
                self.d[g][(i, i)] += ridge;
            }
        }
        for i in 0..self.n_scalars {
            self.s[(i, i)] += 1e-12 * (1.0 + self.s[(i, i)].abs());
        }
    }

    /// Fold `sigma * v v^T` into the bordered pattern when the block support
    /// of `v` lies in group `g` (or is empty: `g == usize::MAX`).
    fn fold_outer(&mut self, prog: &CanonProgram, g: usize, sigma: f64, v: &DVector<f64>) {
        let scalar_off = prog.layout.scalar_offset;
        let vs: Vec<f64> = (0..self.n_scalars).map(|i| v[scalar_off + i]).collect();
        if g != usize::MAX {
            let vg = gather_group(prog, v, g);
            let size = vg.len();
            for i in 0..size {
                if vg[i] == 0.0 {
                    continue;
                }
                for j in 0..size {
                    self.d[g][(i, j)] += sigma * vg[i] * vg[j];
                }
                for (sj, vsj) in vs.iter().enumerate() {
                    self.e[g][(i, sj)] += sigma * vg[i] * vsj;
                }
            }
        }
        for (si, vsi) in vs.iter().enumerate() {
            for (sj, vsj) in vs.iter().enumerate() {
                self.s[(si, sj)] += sigma * vsi * vsj;
            }
        }
    }

    /// Add `factor * Hess(-ln det G)` for one affine map; `cached_grads`
    /// supplies precomputed functional gradients when available.
    fn add_logdet_hessian(
        &mut self,
        prog: &CanonProgram,
        map: &super::AffineHermitianMap,
        cached_grads: &[DVector<f64>],
        ginv: &crate::CMatrix,
        factor: f64,
    ) {
        if factor == 0.0 {
            return;
        }
        for (bi, hi, si) in &map.congruences {
            for (bj, hj, sj) in &map.congruences {
                let s_ij = hi.adjoint() * ginv * hj;
                let k = sym_kron(&s_ij) * (factor * si * sj);
                let g = prog.grouping.group_of_block[*bi];
                debug_assert_eq!(g, prog.grouping.group_of_block[*bj]);
                Self::scatter_block_pair(prog, &mut self.d[g], *bi, *bj, &k);
            }
        }
        // Functional maps: J^T M J with M[p,q] = Re Tr(G^{-1} K_p G^{-1} K_q),
        // added as low-rank factors from the eigendecomposition of M (PSD:
        // it is the Gram matrix of G^{-1/2} K_p G^{-1/2}).
        if !map.functionals.is_empty() {
            let p = map.functionals.len();
            let mut m = DMatrix::zeros(p, p);
            for a in 0..p {
                let ga = ginv * &map.functionals[a].1;
                for b in a..p {
                    let gb = ginv * &map.functionals[b].1;
                    let val = re_trace_prod(&ga, &gb);
                    m[(a, b)] = val;
                    m[(b, a)] = val;
                }
            }
            let jrows: Vec<DVector<f64>> = if cached_grads.len() == p {
                cached_grads.to_vec()
            } else {
                map.functionals
                    .iter()
                    .map(|(lin, _)| {
                        let mut v = DVector::zeros(prog.layout.n);
                        prog.layout.add_expr_gradient(lin, 1.0, &mut v);
                        v
                    })
                    .collect()
            };
            let se = nalgebra::SymmetricEigen::new(m);
            for idx in 0..p {
                let lambda = se.eigenvalues[idx].max(0.0);
                if lambda < 1e-14 {
                    continue;
                }
                let mut v = DVector::zeros(prog.layout.n);
                for (row, jr) in jrows.iter().enumerate() {
                    v.axpy(se.eigenvectors[(row, idx)], jr, 1.0);
                }
                self.lowrank.push((factor * lambda, v));
            }
        }
    }

    /// Apply the assembled Hessian (without equality rows) to a vector;
    /// diagnostic aid for finite-difference checks.
    pub fn apply_hessian(&self, prog: &CanonProgram, v: &DVector<f64>) -> DVector<f64> {
        let lay = &prog.layout;
        let mut out = DVector::zeros(lay.n);
        let vs = DVector::from_fn(self.n_scalars, |i, _| v[lay.scalar_offset + i]);
        let mut out_s = &self.s.view((0, 0), (self.n_scalars, self.n_scalars)) * &vs;
        for (g, blocks) in prog.grouping.groups.iter().enumerate() {
            let size = prog.grouping.group_sizes[g];
            let vg = gather_group(prog, v, g);
            let e_s = self.e[g].view((0, 0), (size, self.n_scalars));
            let og = &self.d[g] * &vg + &e_s * &vs;
            out_s += e_s.transpose() * &vg;
            for &b in blocks {
                let nb = lay.block_dims[b] * lay.block_dims[b];
                for k in 0..nb {
                    out[lay.block_offsets[b] + k] = og[prog.grouping.offset_in_group[b] + k];
                }
            }
        }
        for i in 0..self.n_scalars {
            out[lay.scalar_offset + i] = out_s[i];
        }
        for (sigma, u) in &self.lowrank {
            let c = sigma * u.dot(v);
            out.axpy(c, u, 1.0);
        }
        out
    }

    /// Solve `[H A^T; A 0] [dx; nu] = [-grad; -eq_residual]` through the
    /// bordered Schur complement.
    pub fn solve(
        &self,
        prog: &CanonProgram,
        grad: &DVector<f64>,
        eq_residual: &DVector<f64>,
    ) -> Option<NewtonSolution> {
        let lay = &prog.layout;
        let n_groups = self.d.len();
        let width = self.glob_width();

        let mut chols = Vec::with_capacity(n_groups);
        for g in 0..n_groups {
            match nalgebra::Cholesky::new(self.d[g].clone()) {
                Some(c) => chols.push(c),
                None => {
                    let mut m = self.d[g].clone();
                    let ridge = 1e-8 * (1.0 + m.diagonal().amax());
                    for i in 0..m.nrows() {
                        m[(i, i)] += ridge;
                    }
                    chols.push(nalgebra::Cholesky::new(m)?);
                }
            }
        }

        let dinv_e: Vec<DMatrix<f64>> = (0..n_groups).map(|g| chols[g].solve(&self.e[g])).collect();
        let mut s_tilde = self.s.clone();
        for g in 0..n_groups {
            s_tilde -= self.e[g].transpose() * &dinv_e[g];
        }
        let s_lu = s_tilde.lu();

        // Right-hand side: [-grad over blocks/scalars; -eq_residual; 0].
        let rx = -grad;
        let mut r_glob = DVector::zeros(width);
        for i in 0..self.n_scalars {
            r_glob[i] = rx[lay.scalar_offset + i];
        }
        for r in 0..self.n_eq {
            r_glob[self.n_scalars + r] = -eq_residual[r];
        }

        let mut u_groups = Vec::with_capacity(n_groups);
        let mut rhs_glob = r_glob.clone();
        for g in 0..n_groups {
            let rg = gather_group(prog, &rx, g);
            let ug = chols[g].solve(&rg);
            rhs_glob -= self.e[g].transpose() * &ug;
            u_groups.push(ug);
        }
        let w = if width == 0 { rhs_glob } else { s_lu.solve(&rhs_glob)? };

        let mut dx = DVector::zeros(lay.n);
        for g in 0..n_groups {
            let zg = &u_groups[g] - &dinv_e[g] * &w;
            for &b in &prog.grouping.groups[g] {
                let nb = lay.block_dims[b] * lay.block_dims[b];
                let src = prog.grouping.offset_in_group[b];
                let dst = lay.block_offsets[b];
                for k in 0..nb {
                    dx[dst + k] = zg[src + k];
                }
            }
        }
        for i in 0..self.n_scalars {
            dx[lay.scalar_offset + i] = w[i];
        }

        let decrement_sq = (-grad).dot(&dx).max(0.0);
        Some(NewtonSolution { dx, decrement_sq })
    }
}

fn gather_group(prog: &CanonProgram, v: &DVector<f64>, g: usize) -> DVector<f64> {
    let lay = &prog.layout;
    let mut out = DVector::zeros(prog.grouping.group_sizes[g]);
    for &b in &prog.grouping.groups[g] {
        let nb = lay.block_dims[b] * lay.block_dims[b];
        let src = lay.block_offsets[b];
        let dst = prog.grouping.offset_in_group[b];
        for k in 0..nb {
            out[dst + k] = v[src + k];
        }
    }
    out
}
