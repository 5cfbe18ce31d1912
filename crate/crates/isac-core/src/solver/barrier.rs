//! Path-following barrier loop with an elastic phase I.

use super::eval::{canonicalize, CanonProgram, Evaluator, PointEval};
use super::newton::NewtonWorkspace;
use super::{
    ConicProgram, ConstraintKind, Duals, IneqSense, LinearExpr, Objective,
    PrimalPoint, SolverConfig, SolverError, SolverResult, SolverStatus,
};
use nalgebra::{DMatrix, DVector};

struct PathOutcome {
    x: DVector<f64>,
    t: f64,
    newton_steps: usize,
    converged: bool,
}

/// Equality jacobian and right-hand side.
fn eq_system(canon: &CanonProgram) -> (DMatrix<f64>, DVector<f64>) {
    let ne = canon.eqs.len();
    let mut a = DMatrix::zeros(ne, canon.layout.n);
    let mut b = DVector::zeros(ne);
    for (r, eq) in canon.eqs.iter().enumerate() {
        let mut g = DVector::zeros(canon.layout.n);
        canon.layout.add_expr_gradient(&eq.expr, 1.0, &mut g);
        a.row_mut(r).copy_from(&g.transpose());
        b[r] = eq.rhs - eq.expr.constant;
    }
    (a, b)
}

fn project_equalities(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    x: &mut DVector<f64>,
) -> Result<(), SolverError> {
    if a.nrows() == 0 {
        return Ok(());
    }
    let r = b - a * &*x;
    if r.amax() < 1e-12 * (1.0 + b.amax()) {
        return Ok(());
    }
    let aat = a * a.transpose();
    let sol = aat
        .lu()
        .solve(&r)
        .ok_or_else(|| SolverError::InvalidProgram("degenerate equality rows".into()))?;
    *x += a.transpose() * sol;
    Ok(())
}

/// Center along the path; `early_exit` may stop the run (phase I).
fn path_follow(
    canon: &CanonProgram,
    mut x: DVector<f64>,
    config: &SolverConfig,
    early_exit: Option<&dyn Fn(&DVector<f64>, &PointEval) -> bool>,
    budget: usize,
) -> Result<PathOutcome, SolverError> {
    let evaluator = Evaluator::new(canon);
    let mut ws = NewtonWorkspace::new(canon);
    let (a_eq, b_eq) = eq_system(canon);
    let mut ev = evaluator
        .eval(&x)
        .filter(|e| e.interior)
        .ok_or_else(|| SolverError::NoInterior("path started outside the interior".into()))?;

    let trace_level: u8 = std::env::var("ISAC_SOLVER_TRACE")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(0);
    let trace = trace_level >= 1;
    let mut t = config.t_init.max(1e-6);
    let mut mu = config.mu;
    let mut steps = 0usize;

    loop {
        let gap_target = 0.5 * config.opt_tol * (1.0 + ev.f0.abs());
        let is_final = canon.nu_total / t <= gap_target;
        let stage_tol = if is_final { 1e-13 } else { 1e-9 };

        // Newton centering at this t.
        let mut stage_steps = 0usize;
        loop {
            if steps >= budget {
                return Ok(PathOutcome { x, t, newton_steps: steps, converged: false });
            }
            let ineq_grads = evaluator.ineq_gradients(&x, &ev);
            let grad = evaluator.phi_gradient(&x, &ev, t, &ineq_grads);
            let eq_res = if a_eq.nrows() > 0 { &a_eq * &x - &b_eq } else { DVector::zeros(0) };
            ws.assemble(canon, &ev, &ineq_grads);
            let Some(sol) = ws.solve(canon, &grad, &eq_res) else {
                return Err(SolverError::Numerical("Newton system solve failed".into()));
            };
            if sol.decrement_sq * 0.5 < stage_tol {
                break;
            }
            // Step-halving line search with an Armijo test; the test is
            // skipped once predicted decrease drops below the resolution of
            // phi itself.
            let phi0 = t * ev.f0 + ev.barrier;
            let slope = grad.dot(&sol.dx);
            let resolution = 1e-13 * (1.0 + phi0.abs());
            let mut alpha = 1.0f64;
            let mut accepted = None;
            for _ in 0..60 {
                let x_try = &x + &sol.dx * alpha;
                if let Some(ev_try) = evaluator.eval(&x_try) {
                    if ev_try.interior {
                        let phi_try = t * ev_try.f0 + ev_try.barrier;
                        let armijo = phi_try <= phi0 + 1e-4 * alpha * slope + resolution;
                        if armijo {
                            accepted = Some((x_try, ev_try));
                            break;
                        }
                    }
                }
                alpha *= 0.5;
            }
            let Some((x_new, ev_new)) = accepted else {
                // No productive step at this centering accuracy.
                break;
            };
            if trace_level >= 2 {
                let min_slack = ev_new.slacks.iter().cloned().fold(f64::INFINITY, f64::min);
                eprintln!(
                    "  step a={alpha:.3e} dec2={:.3e} f0={:.6e} min_slack={min_slack:.3e}",
                    sol.decrement_sq, ev_new.f0
                );
            }
            x = x_new;
            ev = ev_new;
            steps += 1;
            stage_steps += 1;
            if !ev.f0.is_finite() || ev.f0 < -1e15 {
                return Err(SolverError::Numerical("objective appears unbounded".into()));
            }
            if let Some(f) = early_exit {
                if f(&x, &ev) {
                    return Ok(PathOutcome { x, t, newton_steps: steps, converged: true });
                }
            }
        }

        if trace {
            eprintln!(
                "stage t={t:.3e} f0={:.6e} steps={stage_steps} total={steps} mu={mu:.1}",
                ev.f0
            );
        }
        if is_final {
            return Ok(PathOutcome { x, t, newton_steps: steps, converged: true });
        }
        // Adaptive centering schedule.
        if stage_steps <= 4 {
            mu = (mu * 1.6).min(120.0);
        } else if stage_steps > 20 {
            mu = (mu / 1.6).max(5.0);
        }
        t *= mu;
    }
}

/// Default starting point: scaled-identity blocks, zero scalars, with a
/// geometric scale search until every cone and log-det argument is interior.
fn default_start(
    canon: &CanonProgram,
    config: &SolverConfig,
) -> Result<DVector<f64>, SolverError> {
    let evaluator = Evaluator::new(canon);
    if let Some(p) = &config.initial_point {
        let x = canon.layout.to_vec(p);
        if evaluator.eval(&x).is_some() {
            return Ok(x);
        }
        return Err(SolverError::NoInterior(
            "supplied initial point is not cone-interior".into(),
        ));
    }
    let mut scale = 1.0f64;
    for _ in 0..24 {
        let p = PrimalPoint {
            blocks: canon
                .layout
                .block_dims
                .iter()
                .map(|&d| crate::CMatrix::identity(d, d).scale(scale))
                .collect(),
            scalars: vec![0.0; canon.layout.n_scalars],
        };
        let x = canon.layout.to_vec(&p);
        if evaluator.eval(&x).is_some() {
            return Ok(x);
        }
        scale *= 0.5;
    }
    Err(SolverError::NoInterior(
        "no cone-interior default start; supply SolverConfig::initial_point".into(),
    ))
}

/// Append the elastic scalar to every inequality and minimize it.
///
/// The feasibility objective does not control variables the original
/// objective would, so the barrier center can drift along unbounded
/// directions; generous box and trace caps around the starting point keep
/// the phase-I set compact.
fn phase1_program(program: &ConicProgram, start: &PrimalPoint) -> (ConicProgram, usize) {
    let s_idx = program.n_scalars;
    let mut p1 = program.clone();
    p1.n_scalars += 1;
    p1.objective = LinearExpr::scalar(s_idx, 1.0);
    p1.sense = Objective::Minimize;
    for (i, z0) in start.scalars.iter().enumerate() {
        let r = 1e4 * (1.0 + z0.abs());
        p1.add(super::Constraint::le(
            format!("phase1 box+ z{i}"),
            LinearExpr::scalar(i, 1.0),
            vec![],
            r,
        ));
        p1.add(super::Constraint::ge(
            format!("phase1 box- z{i}"),
            LinearExpr::scalar(i, 1.0),
            vec![],
            -r,
        ));
    }
    for (b, x0) in start.blocks.iter().enumerate() {
        let tr0: f64 = x0.diagonal().iter().map(|z| z.re).sum();
        let d = x0.nrows();
        p1.add(super::Constraint::le(
            format!("phase1 trace cap block{b}"),
            LinearExpr::block(b, crate::CMatrix::identity(d, d)),
            vec![],
            1e4 * (1.0 + tr0.abs()),
        ));
    }
    for c in &mut p1.constraints {
        if let ConstraintKind::Ineq { expr, sense, .. } = &mut c.kind {
            let coeff = match sense {
                IneqSense::Le => -1.0,
                IneqSense::Ge => 1.0,
            };
            expr.scalar_coeffs.push((s_idx, coeff));
        }
    }
    (p1, s_idx)
}

pub(crate) fn solve_impl(
    program: &ConicProgram,
    config: &SolverConfig,
) -> Result<SolverResult, SolverError> {
    let canon = canonicalize(program)?;
    let evaluator = Evaluator::new(&canon);
    let (a_eq, b_eq) = eq_system(&canon);

    let mut x = default_start(&canon, config)?;
    project_equalities(&a_eq, &b_eq, &mut x)?;
    let ev0 = evaluator.eval(&x).ok_or_else(|| {
        SolverError::NoInterior("equality projection left the cone interior".into())
    })?;

    let mut total_steps = 0usize;
    let feas_margin = 1e-9;

    if !ev0.interior || ev0.slacks.iter().any(|s| *s <= feas_margin) {
        // Elastic phase I on the scalar inequalities.
        let start_point = canon.layout.to_point(&x);
        let (p1, s_idx) = phase1_program(program, &start_point);
        let canon1 = canonicalize(&p1)?;
        let max_viol = ev0
            .slacks
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, |m, s| m.max(-s));
        let s0 = max_viol.max(0.0) * 1.1 + 1.0;
        let mut x1 = DVector::zeros(canon1.layout.n);
        x1.rows_mut(0, canon.layout.n).copy_from(&x);
        // Phase-1 layout appends the elastic scalar after the original ones.
        x1[canon1.layout.scalar_offset + s_idx] = s0;

        // Leave a real interiority margin for phase II; if the feasible
        // region is thinner than this, the path runs to convergence and any
        // strictly negative optimum still counts as feasible.
        let exit_margin = 1e-4 * (1.0 + s0.abs());
        let s_slot = canon1.layout.scalar_offset + s_idx;
        let early = move |xv: &DVector<f64>, _ev: &PointEval| xv[s_slot] < -exit_margin;
        let out = path_follow(&canon1, x1, config, Some(&early), config.max_newton_iters)?;
        total_steps += out.newton_steps;
        let s_final = out.x[s_slot];
        if !out.converged && s_final >= 0.0 {
            return Err(SolverError::Numerical(format!(
                "phase I exhausted the Newton budget at violation {s_final:.3e}"
            )));
        }
        if s_final >= -1e-12 * (1.0 + s0.abs()) {
            // Infeasible: report the constraints at (or near) the optimal
            // violation level.
            let ev1 = Evaluator::new(&canon1).eval(&out.x);
            let mut binding = Vec::new();
            if let Some(ev1) = ev1 {
                for (j, iq) in canon1.ineqs.iter().enumerate() {
                    if iq.name.starts_with("phase1 ") {
                        continue;
                    }
                    // slack_phase = rhs - g_orig + s, so the original
                    // violation is s - slack_phase.
                    let viol = s_final - ev1.slacks[j];
                    if viol >= 0.5 * s_final.max(0.0) - 1e-9 && viol > -1e-9 {
                        binding.push(iq.name.clone());
                    }
                }
            }
            let point = canon.layout.to_point(&out.x.rows(0, canon.layout.n).into_owned());
            return Ok(SolverResult {
                status: SolverStatus::Infeasible { binding },
                objective: f64::NAN,
                point,
                duals: Duals::default(),
                kkt: super::kkt::KktResiduals {
                    primal: s_final.max(0.0),
                    dual: f64::NAN,
                    complementarity: f64::NAN,
                    gap: f64::NAN,
                },
                newton_iterations: total_steps,
            });
        }
        x = out.x.rows(0, canon.layout.n).into_owned();
    }

    // Phase II.
    let budget = config.max_newton_iters.saturating_sub(total_steps);
    let out = path_follow(&canon, x, config, None, budget)?;
    total_steps += out.newton_steps;
    let ev = evaluator
        .eval(&out.x)
        .filter(|e| e.interior)
        .ok_or_else(|| SolverError::Numerical("final point not interior".into()))?;

    // Central-path duals at the final t.
    let t = out.t;
    let lam: Vec<f64> = ev.slacks.iter().map(|s| 1.0 / (t * s)).collect();
    let z_blocks: Vec<crate::CMatrix> =
        ev.block_inv.iter().map(|m| m.scale(1.0 / t)).collect();
    let z_members: Vec<crate::CMatrix> =
        ev.member_inv.iter().map(|(_, inv)| inv.scale(1.0 / t)).collect();

    // Equality multipliers from least squares on the stationarity residual.
    let mut r_d = canon.c.clone();
    for (j, iq) in canon.ineqs.iter().enumerate() {
        let g = evaluator.ineq_gradient(iq, &ev.ineq_logdets[j], &out.x);
        r_d.axpy(lam[j], &g, 1.0);
    }
    for (b, z) in z_blocks.iter().enumerate() {
        let gvec = crate::cmat::herm_grad_coords(z);
        let o = canon.layout.block_offsets[b];
        for (k, v) in gvec.iter().enumerate() {
            r_d[o + k] -= v;
        }
    }
    for (m, z) in canon.memberships.iter().zip(&z_members) {
        super::eval::add_logdet_gradient(&canon.layout, &m.map, z, -1.0, &mut r_d, &out.x);
    }
    let nu = if a_eq.nrows() > 0 {
        let aat = &a_eq * a_eq.transpose();
        aat.lu().solve(&(-(&a_eq * &r_d))).unwrap_or_else(|| DVector::zeros(a_eq.nrows()))
    } else {
        DVector::zeros(0)
    };

    // Map canonical inequality multipliers back to declared order/sense: a
    // Ge constraint was negated, its multiplier is unchanged (dual of
    // -g <= -rhs equals dual of g >= rhs in the standard pairing).
    let mut ineq_duals = Vec::new();
    let mut member_duals = Vec::new();
    {
        let mut iq_iter = lam.iter();
        let mut mb_iter = z_members.iter();
        for c in &program.constraints {
            match &c.kind {
                ConstraintKind::Ineq { .. } => ineq_duals.push(*iq_iter.next().unwrap()),
                ConstraintKind::PsdMembership { .. } => {
                    member_duals.push(mb_iter.next().unwrap().clone())
                }
                ConstraintKind::Eq { .. } => {}
            }
        }
    }

    let point = canon.layout.to_point(&out.x);
    let duals = Duals {
        ineq: ineq_duals,
        eq: nu.iter().cloned().collect(),
        blocks: z_blocks,
        memberships: member_duals,
    };
    let kkt = super::kkt::check_kkt(program, &point, &duals);
    let objective = canon.obj_sign * ev.f0;
    let status = if out.converged { SolverStatus::Optimal } else { SolverStatus::MaxIterations };
    Ok(SolverResult { status, point, objective, duals, kkt, newton_iterations: total_steps })
}

/// Used by integration tests to reach a strictly feasible start.
pub(crate) fn is_strictly_feasible(program: &ConicProgram, point: &PrimalPoint) -> bool {
    let Ok(canon) = canonicalize(program) else { return false };
    let x = canon.layout.to_vec(point);
    match Evaluator::new(&canon).eval(&x) {
        Some(ev) => ev.interior,
        None => false,
    }
}

/// Finite-difference check of `phi_gradient` and of the assembled Hessian
/// (via the residual of the Newton system applied to random directions).
pub(crate) fn debug_fd_check(program: &ConicProgram, point: &PrimalPoint, t: f64) -> String {
    use rand::Rng;
    let canon = canonicalize(program).expect("valid program");
    let evaluator = Evaluator::new(&canon);
    let x = canon.layout.to_vec(point);
    let ev = evaluator.eval(&x).expect("interior point");
    assert!(ev.interior, "need a strictly interior point");
    let n = canon.layout.n;
    let phi = |xv: &DVector<f64>| -> f64 {
        let e = Evaluator::new(&canon).eval(xv).expect("interior");
        t * e.f0 + e.barrier
    };
    let grad_at = |xv: &DVector<f64>| -> DVector<f64> {
        let e = Evaluator::new(&canon).eval(xv).expect("interior");
        let gs = Evaluator::new(&canon).ineq_gradients(xv, &e);
        Evaluator::new(&canon).phi_gradient(xv, &e, t, &gs)
    };
    let grads0 = evaluator.ineq_gradients(&x, &ev);
    let grad = evaluator.phi_gradient(&x, &ev, t, &grads0);
    // Gradient vs central differences.
    let h = 1e-6;
    let mut grad_err: f64 = 0.0;
    for k in 0..n {
        let mut xp = x.clone();
        xp[k] += h;
        let mut xm = x.clone();
        xm[k] -= h;
        let fd = (phi(&xp) - phi(&xm)) / (2.0 * h);
        grad_err = grad_err.max((fd - grad[k]).abs() / (1.0 + grad[k].abs()));
    }
    // Hessian-vector products vs directional differences of the gradient.
    let mut ws = super::newton::NewtonWorkspace::new(&canon);
    ws.assemble(&canon, &ev, &grads0);
    let mut rng = crate::rng::SeedRng::seed(4242).rng();
    let mut hess_err: f64 = 0.0;
    for _ in 0..4 {
        let dir = DVector::from_fn(n, |_, _| rng.random_range(-1.0f64..1.0));
        let dir = &dir / dir.norm();
        let hv = ws.apply_hessian(&canon, &dir);
        let xp = &x + &dir * h;
        let xm = &x - &dir * h;
        let gp = grad_at(&xp);
        let gm = grad_at(&xm);
        let fd = (gp - gm) / (2.0 * h);
        let err = (&fd - &hv).amax() / (1.0 + hv.amax());
        hess_err = hess_err.max(err);
    }
    format!("grad_rel_err {grad_err:.3e} hess_rel_err {hess_err:.3e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::Constraint;

    #[test]
    fn phase1_program_shape() {
        let mut p = ConicProgram::new(vec![2], 0, LinearExpr::zero(), Objective::Minimize);
        p.add(Constraint::ge("tr", LinearExpr::block(0, crate::CMatrix::identity(2, 2)), vec![], 1.0));
        let start = PrimalPoint::identity_scaled(&p, 1.0);
        let (p1, s) = phase1_program(&p, &start);
        assert_eq!(p1.n_scalars, 1);
        assert_eq!(s, 0);
        match &p1.constraints[0].kind {
            ConstraintKind::Ineq { expr, .. } => {
                assert_eq!(expr.scalar_coeffs, vec![(0, 1.0)]);
            }
            _ => panic!(),
        }
        // One elastic plus box rows and a trace cap were appended.
        assert_eq!(p1.constraints.len(), 1 + 1);
    }
}
