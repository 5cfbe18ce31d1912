//! KKT residuals for a candidate primal/dual pair, computed directly from
//! the stationarity, feasibility and complementarity expressions.

use super::eval::{canonicalize, Evaluator};
use super::{ConicProgram, ConstraintKind, Duals, PrimalPoint};
use crate::cmat::{herm_grad_coords, min_eigenvalue, re_trace_prod};
use nalgebra::DVector;

/// Normalized residual triple plus the absolute duality gap.
#[derive(Debug, Clone, Copy)]
pub struct KktResiduals {
    /// Worst constraint violation (relative).
    pub primal: f64,
    /// Stationarity residual including dual cone violations (relative).
    pub dual: f64,
    /// Worst complementary-slackness product (relative).
    pub complementarity: f64,
    /// `sum lambda_j s_j + sum Tr(Z_b X_b) + sum <Lam_m, G_m>` (absolute).
    pub gap: f64,
}

/// Evaluate the KKT residuals of `(point, duals)` for `program`.
pub fn check_kkt(program: &ConicProgram, point: &PrimalPoint, duals: &Duals) -> KktResiduals {
    let canon = match canonicalize(program) {
        Ok(c) => c,
        Err(_) => {
            return KktResiduals {
                primal: f64::INFINITY,
                dual: f64::INFINITY,
                complementarity: f64::INFINITY,
                gap: f64::INFINITY,
            }
        }
    };
    let lay = &canon.layout;
    let x = lay.to_vec(point);
    let evaluator = Evaluator::new(&canon);

    let mut primal: f64 = 0.0;

    // Cone feasibility of the blocks.
    for (b, m) in point.blocks.iter().enumerate() {
        let tr: f64 = m.diagonal().iter().map(|z| z.re).sum();
        let lmin = min_eigenvalue(m);
        primal = primal.max((-lmin).max(0.0) / (1.0 + tr.abs()));
        let _ = b;
    }
    // Membership feasibility.
    for mb in &canon.memberships {
        let g = lay.map_value(&mb.map, &x);
        let lmin = min_eigenvalue(&g);
        primal = primal.max((-lmin).max(0.0) / (1.0 + crate::cmat::fro_norm(&g)));
    }
    // Equalities.
    for eq in &canon.eqs {
        let v = lay.expr_value(&eq.expr, &x);
        primal = primal.max((v - eq.rhs).abs() / (1.0 + eq.rhs.abs()));
    }

    // Inequality values require PD log-det arguments.
    let ev = evaluator.eval(&x);
    let (g_values, slacks, ineq_logdets) = match &ev {
        Some(e) => (e.g_values.clone(), e.slacks.clone(), Some(e)),
        None => {
            // Some cone argument is not PD; fold its defect into the primal
            // residual and give up on the smooth parts.
            for iq in &canon.ineqs {
                for t in &iq.logdets {
                    let g = lay.map_value(&t.map, &x);
                    let lmin = min_eigenvalue(&g);
                    primal = primal.max((-lmin).max(0.0) / (1.0 + crate::cmat::fro_norm(&g)));
                }
            }
            return KktResiduals {
                primal,
                dual: f64::INFINITY,
                complementarity: f64::INFINITY,
                gap: f64::INFINITY,
            };
        }
    };
    for (j, iq) in canon.ineqs.iter().enumerate() {
        primal = primal.max((g_values[j] - iq.rhs).max(0.0) / (1.0 + iq.rhs.abs()));
    }
    let ev = ineq_logdets.expect("checked above");

    // Stationarity: c + sum lam_j grad g_j + A^T nu - Z - adj(Lam) = 0.
    let mut r = canon.c.clone();
    let mut lam_iter = duals.ineq.iter();
    let mut mem_iter = duals.memberships.iter();
    let mut lam_canon = Vec::with_capacity(canon.ineqs.len());
    for c in &program.constraints {
        match &c.kind {
            ConstraintKind::Ineq { .. } => lam_canon.push(*lam_iter.next().unwrap_or(&0.0)),
            ConstraintKind::PsdMembership { .. } | ConstraintKind::Eq { .. } => {}
        }
    }
    let mut dual_cone: f64 = 0.0;
    for (j, iq) in canon.ineqs.iter().enumerate() {
        let lam = lam_canon[j];
        dual_cone = dual_cone.max((-lam).max(0.0));
        let g = evaluator.ineq_gradient(iq, &ev.ineq_logdets[j], &x);
        r.axpy(lam, &g, 1.0);
    }
    for (b, z) in duals.blocks.iter().enumerate() {
        dual_cone = dual_cone.max((-min_eigenvalue(z)).max(0.0));
        let gvec = herm_grad_coords(z);
        let o = lay.block_offsets[b];
        for (k, v) in gvec.iter().enumerate() {
            r[o + k] -= v;
        }
    }
    for (mb, z) in canon.memberships.iter().zip(mem_iter.by_ref()) {
        dual_cone = dual_cone.max((-min_eigenvalue(z)).max(0.0));
        super::eval::add_logdet_gradient(lay, &mb.map, z, -1.0, &mut r, &x);
    }
    if !canon.eqs.is_empty() {
        let mut a_tn = DVector::zeros(lay.n);
        for (r_idx, eq) in canon.eqs.iter().enumerate() {
            let nu = duals.eq.get(r_idx).copied().unwrap_or(0.0);
            lay.add_expr_gradient(&eq.expr, nu, &mut a_tn);
        }
        r += a_tn;
    }
    let c_scale = 1.0 + canon.c.amax();
    let dual = (r.amax() / c_scale).max(dual_cone / c_scale);

    // Complementarity and gap.
    let f0_scale = 1.0 + (canon.c.dot(&x) + canon.c_const).abs();
    let mut compl: f64 = 0.0;
    let mut gap = 0.0;
    for (j, _) in canon.ineqs.iter().enumerate() {
        let prod = lam_canon[j] * slacks[j];
        compl = compl.max(prod.abs() / f0_scale);
        gap += prod;
    }
    for (b, z) in duals.blocks.iter().enumerate() {
        let prod = re_trace_prod(z, &point.blocks[b]);
        compl = compl.max(prod.abs() / f0_scale);
        gap += prod;
    }
    for (mb, z) in canon.memberships.iter().zip(&duals.memberships) {
        let g = lay.map_value(&mb.map, &x);
        let prod = re_trace_prod(z, &g);
        compl = compl.max(prod.abs() / f0_scale);
        gap += prod;
    }

    KktResiduals { primal, dual, complementarity: compl, gap }
}
