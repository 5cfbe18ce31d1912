use super::*;
use crate::cmat::{fro_norm, hermitize, min_eigenvalue};
use crate::rng::SeedRng;
use crate::{CMatrix, Complex64};
use rand::Rng;

fn id(d: usize) -> CMatrix {
    CMatrix::identity(d, d)
}

/// min Tr(X), X >= 0 (2x2), Tr(X) >= 1: optimum 1 (any PSD X with unit trace).
fn min_trace_program() -> ConicProgram {
    let mut p = ConicProgram::new(vec![2], 0, LinearExpr::block(0, id(2)), Objective::Minimize);
    p.add(Constraint::ge("trace floor", LinearExpr::block(0, id(2)), vec![], 1.0));
    p
}

#[test]
fn canonical_min_trace() {
    let p = min_trace_program();
    let r = solve(&p, &SolverConfig::default()).unwrap();
    assert_eq!(r.status, SolverStatus::Optimal);
    assert!((r.objective - 1.0).abs() < 1e-6, "objective {}", r.objective);
    assert!(r.kkt.primal <= 1e-6, "primal {}", r.kkt.primal);
    assert!(r.kkt.dual <= 1e-6, "dual {}", r.kkt.dual);
    assert!(r.kkt.complementarity <= 1e-6);
    assert!(r.kkt.gap <= 1e-6 * (1.0 + r.objective.abs()), "gap {}", r.kkt.gap);
}

/// max ln det X s.t. X <= I (3x3): optimum X = I, objective 0.
/// Encoded with an epigraph scalar: max t, t - ln det X <= 0, I - X >= 0.
fn logdet_box_program() -> ConicProgram {
    let mut p = ConicProgram::new(vec![3], 1, LinearExpr::scalar(0, 1.0), Objective::Maximize);
    p.add(Constraint::le(
        "epigraph",
        LinearExpr::scalar(0, 1.0),
        vec![LogDetTerm {
            weight: -1.0,
            map: AffineHermitianMap::constant_only(CMatrix::zeros(3, 3))
                .with_congruence(0, id(3), 1.0),
        }],
        0.0,
    ));
    p.add(Constraint::psd(
        "X below identity",
        AffineHermitianMap::constant_only(id(3)).with_congruence(0, id(3), -1.0),
    ));
    p
}

#[test]
fn canonical_logdet_box() {
    let p = logdet_box_program();
    let r = solve(&p, &SolverConfig::default()).unwrap();
    assert_eq!(r.status, SolverStatus::Optimal);
    assert!(r.objective.abs() < 1e-5, "objective {}", r.objective);
    let x = &r.point.blocks[0];
    assert!(fro_norm(&(x - id(3))) < 1e-3, "X distance to I: {}", fro_norm(&(x - id(3))));
    assert!(r.kkt.dual <= 1e-6, "dual {}", r.kkt.dual);
    assert!(r.kkt.gap <= 1e-6 * (1.0 + r.objective.abs()));
}

/// Random LP embedded in the diagonal of a PSD block, checked against the
/// vertex-enumeration oracle.
#[test]
fn random_lp_as_diagonal_sdp_matches_vertex_oracle() {
    let mut rng = SeedRng::seed(2024).rng();
    for trial in 0..6 {
        let n = 2 + (trial % 3); // dimension 2..4
        let m = n + 3;
        // Random rows normalized, rhs chosen so x = 0 is strictly feasible.
        let mut a = nalgebra::DMatrix::zeros(m, n);
        let mut b = nalgebra::DVector::zeros(m);
        for i in 0..m {
            for j in 0..n {
                a[(i, j)] = rng.random_range(-1.0..1.0);
            }
            b[i] = rng.random_range(0.3..1.5);
        }
        // Keep the feasible set bounded: add +/- box rows.
        let mut rows = vec![];
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            rows.push((e.clone(), 3.0));
            e[j] = -1.0;
            rows.push((e, 3.0));
        }
        let total = m + rows.len();
        let mut a_full = nalgebra::DMatrix::zeros(total, n);
        let mut b_full = nalgebra::DVector::zeros(total);
        for i in 0..m {
            for j in 0..n {
                a_full[(i, j)] = a[(i, j)];
            }
            b_full[i] = b[i];
        }
        for (k, (row, rhs)) in rows.iter().enumerate() {
            for j in 0..n {
                a_full[(m + k, j)] = row[j];
            }
            b_full[m + k] = *rhs;
        }
        let c = nalgebra::DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));

        let (_, oracle_val) =
            crate::reference::lp_vertex_enumeration(&a_full, &b_full, &c).expect("bounded LP");

        // Diagonal embedding: x_j = X[j,j] - 3 (shift so X can stay PSD).
        // Instead keep it direct: X diagonal entries are the decision
        // variables, constrained by the box |x_j| <= 3, so use x_j = X_jj - 3
        // with X_jj in [0, 6].
        let shift = 3.0;
        let mut prog = ConicProgram::new(
            vec![n],
            0,
            LinearExpr::block(0, CMatrix::from_fn(n, n, |i, j| {
                if i == j { Complex64::new(c[i], 0.0) } else { Complex64::new(0.0, 0.0) }
            })),
            Objective::Maximize,
        );
        let shift_term: f64 = -shift * c.iter().sum::<f64>();
        prog.objective.constant = shift_term;
        for i in 0..total {
            let coef = CMatrix::from_fn(n, n, |p, q| {
                if p == q { Complex64::new(a_full[(i, p)], 0.0) } else { Complex64::new(0.0, 0.0) }
            });
            let row_shift: f64 = (0..n).map(|j| a_full[(i, j)]).sum::<f64>() * shift;
            prog.add(Constraint::le(
                format!("row {i}"),
                LinearExpr::block(0, coef),
                vec![],
                b_full[i] + row_shift,
            ));
        }
        let r = solve(&prog, &SolverConfig::default()).unwrap();
        assert_eq!(r.status, SolverStatus::Optimal, "trial {trial}");
        assert!(
            (r.objective - oracle_val).abs() <= 1e-6 * (1.0 + oracle_val.abs()),
            "trial {trial}: solver {} vs oracle {}",
            r.objective,
            oracle_val
        );
        assert!(r.kkt.dual <= 1e-6, "trial {trial} dual {}", r.kkt.dual);
    }
}

#[test]
fn analytic_kkt_point_of_min_trace() {
    // X* = diag(1/2, 1/2), lambda = 1, Z = 0 satisfies KKT exactly.
    let p = min_trace_program();
    let point = PrimalPoint { blocks: vec![id(2).scale(0.5)], scalars: vec![] };
    let duals = Duals {
        ineq: vec![1.0],
        eq: vec![],
        blocks: vec![CMatrix::zeros(2, 2)],
        memberships: vec![],
    };
    let k = check_kkt(&p, &point, &duals);
    assert!(k.primal <= 1e-10, "primal {}", k.primal);
    assert!(k.dual <= 1e-10, "dual {}", k.dual);
    assert!(k.complementarity <= 1e-10);
}

#[test]
fn deliberately_infeasible_point_has_primal_residual() {
    let p = min_trace_program();
    let point = PrimalPoint { blocks: vec![id(2).scale(0.1)], scalars: vec![] }; // Tr = 0.2 < 1
    let duals = Duals {
        ineq: vec![0.0],
        eq: vec![],
        blocks: vec![CMatrix::zeros(2, 2)],
        memberships: vec![],
    };
    let k = check_kkt(&p, &point, &duals);
    assert!(k.primal > 1e-7, "primal {}", k.primal);
}

#[test]
fn infeasible_program_reports_binding_constraints() {
    // Tr(X) >= 5 and Tr(X) <= 1 cannot both hold.
    let mut p = ConicProgram::new(vec![2], 0, LinearExpr::block(0, id(2)), Objective::Minimize);
    p.add(Constraint::ge("floor", LinearExpr::block(0, id(2)), vec![], 5.0));
    p.add(Constraint::le("cap", LinearExpr::block(0, id(2)), vec![], 1.0));
    let r = solve(&p, &SolverConfig::default()).unwrap();
    match r.status {
        SolverStatus::Infeasible { binding } => {
            assert!(!binding.is_empty());
        }
        other => panic!("expected infeasible, got {other:?}"),
    }
}

#[test]
fn scale_invariance_of_argmax() {
    // Scaling the objective leaves the optimizer unchanged.
    let mut p1 = ConicProgram::new(vec![2], 0, LinearExpr::block(0, id(2)), Objective::Minimize);
    p1.add(Constraint::ge("floor", LinearExpr::block(0, id(2)), vec![], 1.0));
    let mut p2 = p1.clone();
    p2.objective = LinearExpr::block(0, id(2).scale(7.0));
    let r1 = solve(&p1, &SolverConfig::default()).unwrap();
    let r2 = solve(&p2, &SolverConfig::default()).unwrap();
    assert!(fro_norm(&(&r1.point.blocks[0] - &r2.point.blocks[0])) < 1e-5);
    assert!((r2.objective - 7.0 * r1.objective).abs() < 1e-5);
}

#[test]
fn returned_blocks_are_hermitian_psd() {
    let p = logdet_box_program();
    let r = solve(&p, &SolverConfig::default()).unwrap();
    for b in &r.point.blocks {
        assert!(fro_norm(&(b - b.adjoint())) < 1e-10);
        let tr: f64 = b.diagonal().iter().map(|z| z.re).sum();
        assert!(min_eigenvalue(b) >= -1e-7 * tr.max(1.0));
    }
}

#[test]
fn equality_constraint_scalar_program() {
    // min z0^2-free: min z0 + z1 st z0 + z1 = 1, z0 >= 0, z1 >= 0 has value 1.
    let mut p = ConicProgram::new(
        vec![],
        2,
        LinearExpr::scalar(0, 1.0).with_scalar(1, 1.0),
        Objective::Minimize,
    );
    p.add(Constraint::eq("sum", LinearExpr::scalar(0, 1.0).with_scalar(1, 1.0), 1.0));
    p.add(Constraint::ge("z0", LinearExpr::scalar(0, 1.0), vec![], 0.0));
    p.add(Constraint::ge("z1", LinearExpr::scalar(1, 1.0), vec![], 0.0));
    let r = solve(&p, &SolverConfig::default()).unwrap();
    assert_eq!(r.status, SolverStatus::Optimal);
    assert!((r.objective - 1.0).abs() < 1e-6);
    assert!(r.kkt.primal < 1e-8);
}

/// Random feasible block-SDPs with log-det terms: solve and verify KKT.
#[test]
fn random_block_sdps_with_logdet_terms_pass_kkt() {
    for trial in 0..8u64 {
        let mut rng = SeedRng::seed(900 + trial).rng();
        let d1 = 2 + (trial % 3) as usize; // 2..4
        let d2 = 2 + ((trial + 1) % 2) as usize; // 2..3
        let mut prog = ConicProgram::new(
            vec![d1, d2],
            1,
            LinearExpr::scalar(0, 1.0),
            Objective::Maximize,
        );
        // t <= ln det(H X1 H^H + I) (concave epigraph through a Ge form):
        // t - ln det(...) <= 0.
        let h = CMatrix::from_fn(d2, d1, |_, _| {
            Complex64::new(rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8))
        });
        prog.add(Constraint::le(
            "epigraph",
            LinearExpr::scalar(0, 1.0),
            vec![LogDetTerm {
                weight: -1.0,
                map: AffineHermitianMap::constant_only(id(d2)).with_congruence(0, h, 1.0),
            }],
            0.0,
        ));
        // Power caps keep it bounded.
        prog.add(Constraint::le("cap1", LinearExpr::block(0, id(d1)), vec![], 2.0 + trial as f64 * 0.3));
        prog.add(Constraint::le("cap2", LinearExpr::block(1, id(d2)), vec![], 1.5));
        // A random trace inequality links the blocks.
        let s1 = {
            let m = CMatrix::from_fn(d1, d1, |_, _| {
                Complex64::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5))
            });
            hermitize(&m)
        };
        let s2 = {
            let m = CMatrix::from_fn(d2, d2, |_, _| {
                Complex64::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5))
            });
            hermitize(&m)
        };
        prog.add(Constraint::le(
            "mix",
            LinearExpr::block(0, s1).with_block(1, s2),
            vec![],
            3.0,
        ));
        let r = solve(&prog, &SolverConfig::default()).unwrap();
        assert_eq!(r.status, SolverStatus::Optimal, "trial {trial}");
        assert!(r.kkt.primal <= 1e-6, "trial {trial}: primal {}", r.kkt.primal);
        assert!(r.kkt.dual <= 1e-6, "trial {trial}: dual {}", r.kkt.dual);
        assert!(r.kkt.complementarity <= 1e-6, "trial {trial}: compl {}", r.kkt.complementarity);
        assert!(
            r.kkt.gap <= 1e-6 * (1.0 + r.objective.abs()),
            "trial {trial}: gap {}",
            r.kkt.gap
        );
    }
}

#[test]
fn functional_map_quadratic_epigraph() {
    // Schur encoding of s >= m(X)^2 with m(X) = Tr(X)/2 on a 2x2 block:
    // G = [[1, m],[m, s]] >= 0. Minimize s subject to Tr(X) >= 2 (so m >= 1):
    // optimum s = 1.
    let mut p = ConicProgram::new(vec![2], 1, LinearExpr::scalar(0, 1.0), Objective::Minimize);
    let m_expr = LinearExpr::block(0, id(2).scale(0.5));
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
    p.add(Constraint::psd(
        "schur",
        AffineHermitianMap::constant_only(e00)
            .with_functional(m_expr, e01)
            .with_functional(LinearExpr::scalar(0, 1.0), e11),
    ));
    p.add(Constraint::ge("trace floor", LinearExpr::block(0, id(2)), vec![], 2.0));
    // The default identity start leaves the Schur map indefinite; supply a
    // strictly interior point.
    let config = SolverConfig {
        initial_point: Some(PrimalPoint { blocks: vec![id(2).scale(1.5)], scalars: vec![9.0] }),
        ..Default::default()
    };
    let r = solve(&p, &config).unwrap();
    assert_eq!(r.status, SolverStatus::Optimal);
    assert!((r.objective - 1.0).abs() < 1e-5, "objective {}", r.objective);
}

#[test]
fn dump_round_trip() {
    let p = logdet_box_program();
    let text = dump_program(&p);
    let back = parse_program(&text).unwrap();
    assert_eq!(back.psd_blocks, p.psd_blocks);
    assert_eq!(back.n_scalars, p.n_scalars);
    assert_eq!(back.constraints.len(), p.constraints.len());
    // Solving the round-tripped program gives the same optimum.
    let r1 = solve(&p, &SolverConfig::default()).unwrap();
    let r2 = solve(&back, &SolverConfig::default()).unwrap();
    assert!((r1.objective - r2.objective).abs() < 1e-8);
}

#[test]
fn dump_round_trip_functional_map() {
    let mut p = ConicProgram::new(vec![2], 1, LinearExpr::scalar(0, 1.0), Objective::Minimize);
    let e01 = CMatrix::from_fn(2, 2, |i, j| {
        if (i, j) == (0, 1) || (i, j) == (1, 0) {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    p.add(Constraint::psd(
        "schur",
        AffineHermitianMap::constant_only(id(2))
            .with_functional(LinearExpr::scalar(0, 0.7).with_constant(0.1), e01),
    ));
    let text = dump_program(&p);
    let back = parse_program(&text).unwrap();
    let text2 = dump_program(&back);
    assert_eq!(text, text2);
}

#[test]
fn validate_rejects_wrong_weight_sign() {
    let mut p = ConicProgram::new(vec![2], 0, LinearExpr::zero(), Objective::Minimize);
    p.add(Constraint::le(
        "bad",
        LinearExpr::zero(),
        vec![LogDetTerm {
            weight: 1.0, // concave term on the <= side
            map: AffineHermitianMap::constant_only(id(2)).with_congruence(0, id(2), 1.0),
        }],
        0.0,
    ));
    assert!(p.validate().is_err());
}

#[test]
fn validate_rejects_mixed_map() {
    let mut p = ConicProgram::new(vec![2], 1, LinearExpr::zero(), Objective::Minimize);
    p.add(Constraint::psd(
        "mixed",
        AffineHermitianMap::constant_only(id(2))
            .with_congruence(0, id(2), 1.0)
            .with_functional(LinearExpr::scalar(0, 1.0), id(2)),
    ));
    assert!(p.validate().is_err());
}
