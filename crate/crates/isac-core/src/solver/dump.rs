//! Plain-text dump and reload of a conic program, for external
//! cross-validation. One token-separated statement per line:
//!
//! ```text
//! conic-program
//! block <dim>                       # one per PSD block, in order
//! scalars <n>
//! objective <maximize|minimize>
//! obj.const <v>
//! obj.block <b> <i> <j> <re> <im>   # coefficient triplets
//! obj.scalar <i> <v>
//! constraint <le|ge|eq|psd> <rhs|-> <name...>
//! expr.const <v>
//! expr.block <b> <i> <j> <re> <im>
//! expr.scalar <i> <v>
//! logdet <weight> <dim>             # opens a log-det term
//! ld.const <i> <j> <re> <im>
//! ld.cong <block> <sign> <rows> <cols>
//! ld.cong.entry <i> <j> <re> <im>
//! ld.func <dim>                     # opens a functional: K then its expr
//! ld.func.k <i> <j> <re> <im>
//! ld.func.const <v>
//! ld.func.block <b> <i> <j> <re> <im>
//! ld.func.scalar <i> <v>
//! end                               # closes the current constraint
//! ```
//!
//! `psd` constraints carry exactly one log-det statement group describing
//! the membership map (its weight is ignored).

use super::{
    AffineHermitianMap, ConicProgram, Constraint, ConstraintKind, IneqSense, LinearExpr,
    LogDetTerm, Objective, SolverError,
};
use crate::{CMatrix, Complex64};

fn dump_expr(out: &mut String, prefix: &str, e: &LinearExpr) {
    if e.constant != 0.0 {
        out.push_str(&format!("{prefix}.const {:.17e}\n", e.constant));
    }
    for (b, m) in &e.block_coeffs {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let v = m[(i, j)];
                if v.re != 0.0 || v.im != 0.0 {
                    out.push_str(&format!(
                        "{prefix}.block {b} {i} {j} {:.17e} {:.17e}\n",
                        v.re, v.im
                    ));
                }
            }
        }
    }
    for (i, c) in &e.scalar_coeffs {
        out.push_str(&format!("{prefix}.scalar {i} {:.17e}\n", c));
    }
}

fn dump_map(out: &mut String, map: &AffineHermitianMap, weight: f64) {
    out.push_str(&format!("logdet {:.17e} {}\n", weight, map.dim));
    for i in 0..map.dim {
        for j in 0..map.dim {
            let v = map.constant[(i, j)];
            if v.re != 0.0 || v.im != 0.0 {
                out.push_str(&format!("ld.const {i} {j} {:.17e} {:.17e}\n", v.re, v.im));
            }
        }
    }
    for (b, h, sign) in &map.congruences {
        out.push_str(&format!("ld.cong {b} {:.17e} {} {}\n", sign, h.nrows(), h.ncols()));
        for i in 0..h.nrows() {
            for j in 0..h.ncols() {
                let v = h[(i, j)];
                out.push_str(&format!("ld.cong.entry {i} {j} {:.17e} {:.17e}\n", v.re, v.im));
            }
        }
    }
    for (lin, k) in &map.functionals {
        out.push_str(&format!("ld.func {}\n", k.nrows()));
        for i in 0..k.nrows() {
            for j in 0..k.ncols() {
                let v = k[(i, j)];
                if v.re != 0.0 || v.im != 0.0 {
                    out.push_str(&format!("ld.func.k {i} {j} {:.17e} {:.17e}\n", v.re, v.im));
                }
            }
        }
        dump_expr(out, "ld.func", lin);
    }
}

/// Serialize a program.
pub fn dump_program(p: &ConicProgram) -> String {
    let mut out = String::from("conic-program\n");
    for d in &p.psd_blocks {
        out.push_str(&format!("block {d}\n"));
    }
    out.push_str(&format!("scalars {}\n", p.n_scalars));
    out.push_str(&format!(
        "objective {}\n",
        match p.sense {
            Objective::Maximize => "maximize",
            Objective::Minimize => "minimize",
        }
    ));
    dump_expr(&mut out, "obj", &p.objective);
    for c in &p.constraints {
        match &c.kind {
            ConstraintKind::Ineq { expr, logdets, sense, rhs } => {
                let s = match sense {
                    IneqSense::Le => "le",
                    IneqSense::Ge => "ge",
                };
                out.push_str(&format!("constraint {s} {:.17e} {}\n", rhs, c.name));
                dump_expr(&mut out, "expr", expr);
                for t in logdets {
                    dump_map(&mut out, &t.map, t.weight);
                }
                out.push_str("end\n");
            }
            ConstraintKind::Eq { expr, rhs } => {
                out.push_str(&format!("constraint eq {:.17e} {}\n", rhs, c.name));
                dump_expr(&mut out, "expr", expr);
                out.push_str("end\n");
            }
            ConstraintKind::PsdMembership { map } => {
                out.push_str(&format!("constraint psd - {}\n", c.name));
                dump_map(&mut out, map, 0.0);
                out.push_str("end\n");
            }
        }
    }
    out
}

struct Parser<'a> {
    lines: Vec<(usize, Vec<&'a str>)>,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, line: usize, msg: impl Into<String>) -> Result<T, SolverError> {
        Err(SolverError::Parse { line, msg: msg.into() })
    }

    fn peek(&self) -> Option<&(usize, Vec<&'a str>)> {
        self.lines.get(self.pos)
    }

    fn next(&mut self) -> Option<(usize, Vec<&'a str>)> {
        let r = self.lines.get(self.pos).cloned();
        if r.is_some() {
            self.pos += 1;
        }
        r
    }
}

fn parse_f64(tok: &str, line: usize) -> Result<f64, SolverError> {
    tok.parse().map_err(|_| SolverError::Parse { line, msg: format!("bad number `{tok}`") })
}

fn parse_usize(tok: &str, line: usize) -> Result<usize, SolverError> {
    tok.parse().map_err(|_| SolverError::Parse { line, msg: format!("bad integer `{tok}`") })
}

/// Parse a program produced by [`dump_program`].
pub fn parse_program(text: &str) -> Result<ConicProgram, SolverError> {
    let lines: Vec<(usize, Vec<&str>)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split_whitespace().collect::<Vec<_>>()))
        .filter(|(_, t)| !t.is_empty() && !t[0].starts_with('#'))
        .collect();
    let mut p = Parser { lines, pos: 0 };

    let (l0, head) = p.next().ok_or(SolverError::Parse { line: 0, msg: "empty".into() })?;
    if head[0] != "conic-program" {
        return p.err(l0, "expected `conic-program` header");
    }
    let mut blocks = Vec::new();
    let mut n_scalars = 0usize;
    let mut sense = Objective::Minimize;
    let mut objective = LinearExpr::zero();
    let mut constraints: Vec<Constraint> = Vec::new();

    // Current constraint under construction.
    struct Open {
        kind: String,
        rhs: f64,
        name: String,
        expr: LinearExpr,
        logdets: Vec<LogDetTerm>,
    }
    let mut open: Option<Open> = None;
    let mut open_map: Option<(f64, AffineHermitianMap)> = None;
    let mut open_cong: Option<(usize, f64, usize, usize, CMatrix)> = None;
    let mut open_func: Option<(LinearExpr, CMatrix)> = None;

    fn block_dim(blocks: &[usize], b: usize, line: usize) -> Result<usize, SolverError> {
        blocks
            .get(b)
            .copied()
            .ok_or(SolverError::Parse { line, msg: format!("block {b} undeclared") })
    }

    let close_func =
        |open_map: &mut Option<(f64, AffineHermitianMap)>, open_func: &mut Option<(LinearExpr, CMatrix)>| {
            if let (Some((_, m)), Some((lin, k))) = (open_map.as_mut(), open_func.take()) {
                m.functionals.push((lin, k));
            }
        };
    let close_cong = |open_map: &mut Option<(f64, AffineHermitianMap)>,
                      open_cong: &mut Option<(usize, f64, usize, usize, CMatrix)>| {
        if let (Some((_, m)), Some((b, sign, _, _, h))) = (open_map.as_mut(), open_cong.take()) {
            m.congruences.push((b, h, sign));
        }
    };
    let close_map = |open: &mut Option<Open>,
                     open_map: &mut Option<(f64, AffineHermitianMap)>,
                     open_cong: &mut Option<(usize, f64, usize, usize, CMatrix)>,
                     open_func: &mut Option<(LinearExpr, CMatrix)>| {
        close_cong(open_map, open_cong);
        close_func(open_map, open_func);
        if let (Some(o), Some((w, m))) = (open.as_mut(), open_map.take()) {
            o.logdets.push(LogDetTerm { weight: w, map: m });
        }
    };

    while let Some((line, toks)) = p.next() {
        match toks[0] {
            "block" => blocks.push(parse_usize(toks[1], line)?),
            "scalars" => n_scalars = parse_usize(toks[1], line)?,
            "objective" => {
                sense = match toks[1] {
                    "maximize" => Objective::Maximize,
                    "minimize" => Objective::Minimize,
                    other => return p.err(line, format!("bad sense `{other}`")),
                }
            }
            "obj.const" => objective.constant = parse_f64(toks[1], line)?,
            "obj.block" => {
                let b = parse_usize(toks[1], line)?;
                let d = block_dim(&blocks, b, line)?;
                let (i, j) = (parse_usize(toks[2], line)?, parse_usize(toks[3], line)?);
                let v = Complex64::new(parse_f64(toks[4], line)?, parse_f64(toks[5], line)?);
                if objective.block_coeffs.iter().all(|(bb, _)| *bb != b) {
                    objective.block_coeffs.push((b, CMatrix::zeros(d, d)));
                }
                let m = objective
                    .block_coeffs
                    .iter_mut()
                    .find(|(bb, _)| *bb == b)
                    .map(|(_, m)| m)
                    .unwrap();
                m[(i, j)] = v;
            }
            "obj.scalar" => objective
                .scalar_coeffs
                .push((parse_usize(toks[1], line)?, parse_f64(toks[2], line)?)),
            "constraint" => {
                if open.is_some() {
                    return p.err(line, "previous constraint not closed with `end`");
                }
                let kind = toks[1].to_string();
                let rhs = if toks[2] == "-" { 0.0 } else { parse_f64(toks[2], line)? };
                let name = toks[3..].join(" ");
                open = Some(Open { kind, rhs, name, expr: LinearExpr::zero(), logdets: Vec::new() });
            }
            "expr.const" => {
                let o = open.as_mut().ok_or(SolverError::Parse { line, msg: "no open constraint".into() })?;
                o.expr.constant = parse_f64(toks[1], line)?;
            }
            "expr.block" => {
                let o = open.as_mut().ok_or(SolverError::Parse { line, msg: "no open constraint".into() })?;
                let b = parse_usize(toks[1], line)?;
                let d = block_dim(&blocks, b, line)?;
                let (i, j) = (parse_usize(toks[2], line)?, parse_usize(toks[3], line)?);
                let v = Complex64::new(parse_f64(toks[4], line)?, parse_f64(toks[5], line)?);
                if o.expr.block_coeffs.iter().all(|(bb, _)| *bb != b) {
                    o.expr.block_coeffs.push((b, CMatrix::zeros(d, d)));
                }
                let m = o
                    .expr
                    .block_coeffs
                    .iter_mut()
                    .find(|(bb, _)| *bb == b)
                    .map(|(_, m)| m)
                    .unwrap();
                m[(i, j)] = v;
            }
            "expr.scalar" => {
                let o = open.as_mut().ok_or(SolverError::Parse { line, msg: "no open constraint".into() })?;
                o.expr.scalar_coeffs.push((parse_usize(toks[1], line)?, parse_f64(toks[2], line)?));
            }
            "logdet" => {
                close_map(&mut open, &mut open_map, &mut open_cong, &mut open_func);
                let w = parse_f64(toks[1], line)?;
                let dim = parse_usize(toks[2], line)?;
                open_map = Some((w, AffineHermitianMap::constant_only(CMatrix::zeros(dim, dim))));
            }
            "ld.const" => {
                let (_, m) = open_map.as_mut().ok_or(SolverError::Parse { line, msg: "no open log-det".into() })?;
                let (i, j) = (parse_usize(toks[1], line)?, parse_usize(toks[2], line)?);
                m.constant[(i, j)] =
                    Complex64::new(parse_f64(toks[3], line)?, parse_f64(toks[4], line)?);
            }
            "ld.cong" => {
                close_cong(&mut open_map, &mut open_cong);
                let b = parse_usize(toks[1], line)?;
                let sign = parse_f64(toks[2], line)?;
                let rows = parse_usize(toks[3], line)?;
                let cols = parse_usize(toks[4], line)?;
                open_cong = Some((b, sign, rows, cols, CMatrix::zeros(rows, cols)));
            }
            "ld.cong.entry" => {
                let (_, _, _, _, h) = open_cong.as_mut().ok_or(SolverError::Parse { line, msg: "no open congruence".into() })?;
                let (i, j) = (parse_usize(toks[1], line)?, parse_usize(toks[2], line)?);
                h[(i, j)] = Complex64::new(parse_f64(toks[3], line)?, parse_f64(toks[4], line)?);
            }
            "ld.func" => {
                close_cong(&mut open_map, &mut open_cong);
                close_func(&mut open_map, &mut open_func);
                let d = parse_usize(toks[1], line)?;
                open_func = Some((LinearExpr::zero(), CMatrix::zeros(d, d)));
            }
            "ld.func.k" => {
                let (_, k) = open_func.as_mut().ok_or(SolverError::Parse { line, msg: "no open functional".into() })?;
                let (i, j) = (parse_usize(toks[1], line)?, parse_usize(toks[2], line)?);
                k[(i, j)] = Complex64::new(parse_f64(toks[3], line)?, parse_f64(toks[4], line)?);
            }
            "ld.func.const" => {
                let (lin, _) = open_func.as_mut().ok_or(SolverError::Parse { line, msg: "no open functional".into() })?;
                lin.constant = parse_f64(toks[1], line)?;
            }
            "ld.func.block" => {
                let (lin, _) = open_func.as_mut().ok_or(SolverError::Parse { line, msg: "no open functional".into() })?;
                let b = parse_usize(toks[1], line)?;
                let d = block_dim(&blocks, b, line)?;
                let (i, j) = (parse_usize(toks[2], line)?, parse_usize(toks[3], line)?);
                let v = Complex64::new(parse_f64(toks[4], line)?, parse_f64(toks[5], line)?);
                if lin.block_coeffs.iter().all(|(bb, _)| *bb != b) {
                    lin.block_coeffs.push((b, CMatrix::zeros(d, d)));
                }
                let m = lin.block_coeffs.iter_mut().find(|(bb, _)| *bb == b).map(|(_, m)| m).unwrap();
                m[(i, j)] = v;
            }
            "ld.func.scalar" => {
                let (lin, _) = open_func.as_mut().ok_or(SolverError::Parse { line, msg: "no open functional".into() })?;
                lin.scalar_coeffs.push((parse_usize(toks[1], line)?, parse_f64(toks[2], line)?));
            }
            "end" => {
                close_map(&mut open, &mut open_map, &mut open_cong, &mut open_func);
                let o = open.take().ok_or(SolverError::Parse { line, msg: "stray end".into() })?;
                let c = match o.kind.as_str() {
                    "le" => Constraint::le(o.name, o.expr, o.logdets, o.rhs),
                    "ge" => Constraint::ge(o.name, o.expr, o.logdets, o.rhs),
                    "eq" => Constraint::eq(o.name, o.expr, o.rhs),
                    "psd" => {
                        let map = o
                            .logdets
                            .into_iter()
                            .next()
                            .ok_or(SolverError::Parse { line, msg: "psd without map".into() })?
                            .map;
                        Constraint::psd(o.name, map)
                    }
                    other => return p.err(line, format!("bad constraint kind `{other}`")),
                };
                constraints.push(c);
            }
            other => return p.err(line, format!("unknown statement `{other}`")),
        }
    }
    if open.is_some() {
        return Err(SolverError::Parse { line: 0, msg: "unclosed constraint at end of input".into() });
    }
    let _ = p.peek();

    let mut program = ConicProgram::new(blocks, n_scalars, objective, sense);
    program.constraints = constraints;
    program.validate()?;
    Ok(program)
}
