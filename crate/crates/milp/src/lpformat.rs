//! CPLEX-style LP text: `Minimize`, `Subject To`, `Bounds`, `Binaries`, `End`.
//!
//! The writer emits numbers with Rust's shortest round-trip formatting, so
//! `parse_lp(&write_lp(m))` reproduces every coefficient bit for bit.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::model::{Model, Row, Sense, Var, VarId};
use crate::MilpError;

pub fn write_lp(model: &Model) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "\\ {}", model.name);
    out.push_str("Minimize\n obj:");
    // Every variable is listed (zero coefficients included) so that the
    // parser recreates them in index order.
    let dense = model.dense_objective();
    let mut first = true;
    for (v, c) in model.vars.iter().zip(&dense) {
        push_term(&mut out, *c, &v.name, first);
        first = false;
    }
    if model.obj_constant != 0.0 || first {
        push_constant(&mut out, model.obj_constant, first);
    }
    out.push_str("\nSubject To\n");
    for r in &model.rows {
        let _ = write!(out, " {}:", r.name);
        if r.coefs.is_empty() {
            out.push_str(" 0 ");
            let _ = write!(out, "{}", model.vars.first().map(|v| v.name.as_str()).unwrap_or("_"));
        }
        let mut first = true;
        for &(v, c) in &r.coefs {
            push_term(&mut out, c, &model.vars[v.0].name, first);
            first = false;
        }
        let _ = writeln!(out, " {} {}", r.sense.symbol(), num(r.rhs));
    }
    out.push_str("Bounds\n");
    for v in &model.vars {
        if v.binary && v.lb == 0.0 && v.ub == 1.0 {
            continue;
        }
        match (v.lb.is_finite(), v.ub.is_finite()) {
            (false, false) => {
                let _ = writeln!(out, " {} free", v.name);
            }
            (true, true) if v.lb == v.ub => {
                let _ = writeln!(out, " {} = {}", v.name, num(v.lb));
            }
            (true, true) => {
                let _ = writeln!(out, " {} <= {} <= {}", num(v.lb), v.name, num(v.ub));
            }
            (true, false) => {
                if v.lb != 0.0 {
                    let _ = writeln!(out, " {} >= {}", v.name, num(v.lb));
                }
            }
            (false, true) => {
                let _ = writeln!(out, " -inf <= {} <= {}", v.name, num(v.ub));
            }
        }
    }
    let bins: Vec<&Var> = model.vars.iter().filter(|v| v.binary).collect();
    if !bins.is_empty() {
        out.push_str("Binaries\n");
        for v in bins {
            let _ = writeln!(out, " {}", v.name);
        }
    }
    out.push_str("End\n");
    out
}

fn num(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:?}")
    }
}

fn push_term(out: &mut String, c: f64, name: &str, first: bool) {
    if c < 0.0 || (c == 0.0 && c.is_sign_negative()) {
        let _ = write!(out, " - {} {}", num(-c), name);
    } else if first {
        let _ = write!(out, " {} {}", num(c), name);
    } else {
        let _ = write!(out, " + {} {}", num(c), name);
    }
}

fn push_constant(out: &mut String, c: f64, first: bool) {
    if c < 0.0 {
        let _ = write!(out, " - {}", num(-c));
    } else if first {
        let _ = write!(out, " {}", num(c));
    } else {
        let _ = write!(out, " + {}", num(c));
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Num(f64),
    Sign(f64),
    Colon,
    Cmp(Sense),
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Objective,
    Constraints,
    Bounds,
    Binaries,
    Generals,
    End,
}

fn section_of(line: &str) -> Option<(Section, bool)> {
    let l = line.trim().to_ascii_lowercase();
    let l = l.split_whitespace().collect::<Vec<_>>().join(" ");
    match l.as_str() {
        "minimize" | "minimise" | "minimum" | "min" => Some((Section::Objective, false)),
        "maximize" | "maximise" | "maximum" | "max" => Some((Section::Objective, true)),
        "subject to" | "such that" | "st" | "s.t." => Some((Section::Constraints, false)),
        "bounds" | "bound" => Some((Section::Bounds, false)),
        "binaries" | "binary" | "bin" => Some((Section::Binaries, false)),
        "generals" | "general" | "gen" | "integers" => Some((Section::Generals, false)),
        "end" => Some((Section::End, false)),
        _ => None,
    }
}

fn tokenize(s: &str, line: usize) -> Result<Vec<Tok>, MilpError> {
    let mut toks = Vec::new();
    let b: Vec<char> = s.chars().collect();
    let mut i = 0;
    while i < b.len() {
        let c = b[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == ':' {
            toks.push(Tok::Colon);
            i += 1;
        } else if c == '+' || c == '-' {
            toks.push(Tok::Sign(if c == '+' { 1.0 } else { -1.0 }));
            i += 1;
        } else if c == '<' || c == '>' || c == '=' {
            let mut j = i + 1;
            while j < b.len() && (b[j] == '=' || b[j] == '<' || b[j] == '>') {
                j += 1;
            }
            let op: String = b[i..j].iter().collect();
            let sense = match op.as_str() {
                "<" | "<=" | "=<" => Sense::Le,
                ">" | ">=" | "=>" => Sense::Ge,
                "=" | "==" => Sense::Eq,
                _ => return Err(MilpError::Parse { line, msg: format!("bad operator {op}") }),
            };
            toks.push(Tok::Cmp(sense));
            i = j;
        } else if c.is_ascii_digit() || c == '.' {
            let mut j = i;
            while j < b.len() {
                let ch = b[j];
                let exp_sign = (ch == '+' || ch == '-') && j > i && (b[j - 1] == 'e' || b[j - 1] == 'E');
                if ch.is_ascii_digit() || ch == '.' || ch == 'e' || ch == 'E' || exp_sign {
                    j += 1;
                } else {
                    break;
                }
            }
            let text: String = b[i..j].iter().collect();
            let v: f64 = text
                .parse()
                .map_err(|_| MilpError::Parse { line, msg: format!("bad number {text}") })?;
            toks.push(Tok::Num(v));
            i = j;
        } else {
            let mut j = i;
            while j < b.len() && !b[j].is_whitespace() && !":+-<>=".contains(b[j]) {
                j += 1;
            }
            let w: String = b[i..j].iter().collect();
            let lw = w.to_ascii_lowercase();
            if lw == "inf" || lw == "infinity" {
                toks.push(Tok::Num(f64::INFINITY));
            } else {
                toks.push(Tok::Word(w));
            }
            i = j;
        }
    }
    Ok(toks)
}

struct Builder {
    model: Model,
    index: HashMap<String, VarId>,
}

impl Builder {
    fn var(&mut self, name: &str) -> VarId {
        if let Some(&v) = self.index.get(name) {
            return v;
        }
        let v = self.model.add_var(name, 0.0, f64::INFINITY);
        self.index.insert(name.to_string(), v);
        v
    }
}

/// Parses a linear expression; returns terms, constant and the remaining tokens.
fn parse_expr(
    b: &mut Builder,
    toks: &[Tok],
    line: usize,
) -> Result<(Vec<(VarId, f64)>, f64, usize), MilpError> {
    let mut terms = Vec::new();
    let mut constant = 0.0;
    let mut i = 0;
    let mut sign = 1.0;
    let mut coef: Option<f64> = None;
    while i < toks.len() {
        match &toks[i] {
            Tok::Sign(s) => {
                if let Some(c) = coef.take() {
                    constant += sign * c;
                    sign = 1.0;
                }
                sign *= s;
            }
            Tok::Num(v) => {
                if let Some(c) = coef.take() {
                    constant += sign * c;
                    sign = 1.0;
                }
                coef = Some(*v);
            }
            Tok::Word(w) => {
                let v = b.var(w);
                terms.push((v, sign * coef.take().unwrap_or(1.0)));
                sign = 1.0;
            }
            Tok::Cmp(_) => break,
            Tok::Colon => {
                return Err(MilpError::Parse { line, msg: "unexpected ':'".into() });
            }
        }
        i += 1;
    }
    if let Some(c) = coef {
        constant += sign * c;
    }
    Ok((terms, constant, i))
}

pub fn parse_lp(text: &str) -> Result<Model, MilpError> {
    let mut b = Builder { model: Model::new(""), index: HashMap::new() };
    let mut section = Section::None;
    let mut maximize = false;
    // Statements can span lines; buffer until the next one starts.
    let mut stmt: Vec<Tok> = Vec::new();
    let mut stmt_line = 0usize;
    let mut stmts: Vec<(Section, usize, Vec<Tok>)> = Vec::new();
    let mut row_count = 0usize;

    for (ln, raw) in text.lines().enumerate() {
        let line_no = ln + 1;
        let (body, comment) = match raw.find('\\') {
            Some(p) => (&raw[..p], Some(&raw[p + 1..])),
            None => (raw, None),
        };
        if ln == 0 {
            if let Some(c) = comment {
                b.model.name = c.trim().to_string();
            }
        }
        if body.trim().is_empty() {
            continue;
        }
        if let Some((s, maxi)) = section_of(body) {
            if !stmt.is_empty() {
                stmts.push((section, stmt_line, std::mem::take(&mut stmt)));
            }
            if s == Section::Objective {
                maximize = maxi;
            }
            section = s;
            continue;
        }
        let toks = tokenize(body, line_no)?;
        let starts_new = match section {
            Section::Constraints => {
                let labelled = matches!(toks.as_slice(), [Tok::Word(_), Tok::Colon, ..]);
                labelled || stmt.iter().any(|t| matches!(t, Tok::Cmp(_))) && stmt_complete(&stmt)
            }
            Section::Bounds | Section::Binaries | Section::Generals => true,
            _ => false,
        };
        if starts_new && !stmt.is_empty() {
            stmts.push((section, stmt_line, std::mem::take(&mut stmt)));
        }
        if stmt.is_empty() {
            stmt_line = line_no;
        }
        stmt.extend(toks);
    }
    if !stmt.is_empty() {
        stmts.push((section, stmt_line, stmt));
    }

    for (sec, line, toks) in stmts {
        match sec {
            Section::Objective => {
                let body = strip_label(&toks).1;
                let (terms, c, used) = parse_expr(&mut b, body, line)?;
                if used != body.len() {
                    return Err(MilpError::Parse { line, msg: "comparison in objective".into() });
                }
                let s = if maximize { -1.0 } else { 1.0 };
                for (v, a) in terms {
                    if a != 0.0 {
                        b.model.objective.push((v, s * a));
                    }
                }
                b.model.obj_constant += s * c;
            }
            Section::Constraints => {
                let (label, body) = strip_label(&toks);
                let (terms, c, used) = parse_expr(&mut b, body, line)?;
                let Some(Tok::Cmp(sense)) = body.get(used) else {
                    return Err(MilpError::Parse { line, msg: "row without comparison".into() });
                };
                let (rterms, rc, rused) = parse_expr(&mut b, &body[used + 1..], line)?;
                if rused != body.len() - used - 1 || !rterms.is_empty() {
                    return Err(MilpError::Parse { line, msg: "right-hand side must be a constant".into() });
                }
                row_count += 1;
                let name = label.unwrap_or_else(|| format!("R{row_count}"));
                let rhs = rc - c;
                let coefs = merge(terms);
                b.model.rows.push(Row { name, coefs, sense: *sense, rhs });
            }
            Section::Bounds => parse_bound(&mut b, &toks, line)?,
            Section::Binaries => {
                for t in &toks {
                    let Tok::Word(w) = t else {
                        return Err(MilpError::Parse { line, msg: "expected a variable name".into() });
                    };
                    let v = b.var(w);
                    let var = &mut b.model.vars[v.0];
                    var.binary = true;
                    var.lb = var.lb.max(0.0);
                    var.ub = var.ub.min(1.0);
                }
            }
            Section::Generals => {
                return Err(MilpError::Parse { line, msg: "general integers are not supported".into() });
            }
            Section::None | Section::End => {
                return Err(MilpError::Parse { line, msg: "content outside a section".into() });
            }
        }
    }
    b.model.normalize_objective();
    b.model.validate()?;
    Ok(b.model)
}

fn stmt_complete(stmt: &[Tok]) -> bool {
    // A row is complete once a constant follows its comparison.
    match stmt.iter().position(|t| matches!(t, Tok::Cmp(_))) {
        Some(p) => stmt[p + 1..].iter().any(|t| matches!(t, Tok::Num(_))),
        None => false,
    }
}

fn strip_label(toks: &[Tok]) -> (Option<String>, &[Tok]) {
    match toks {
        [Tok::Word(w), Tok::Colon, rest @ ..] => (Some(w.clone()), rest),
        _ => (None, toks),
    }
}

fn merge(terms: Vec<(VarId, f64)>) -> Vec<(VarId, f64)> {
    let mut out: Vec<(VarId, f64)> = Vec::new();
    for (v, a) in terms {
        match out.iter_mut().find(|t| t.0 == v) {
            Some(t) => t.1 += a,
            None => out.push((v, a)),
        }
    }
    out.retain(|t| t.1 != 0.0);
    out
}

fn signed_num(toks: &[Tok], i: &mut usize, line: usize) -> Result<f64, MilpError> {
    let mut s = 1.0;
    while let Some(Tok::Sign(x)) = toks.get(*i) {
        s *= x;
        *i += 1;
    }
    match toks.get(*i) {
        Some(Tok::Num(v)) => {
            *i += 1;
            Ok(s * v)
        }
        _ => Err(MilpError::Parse { line, msg: "expected a number in bound".into() }),
    }
}

fn parse_bound(b: &mut Builder, toks: &[Tok], line: usize) -> Result<(), MilpError> {
    let err = |msg: &str| MilpError::Parse { line, msg: msg.into() };
    if let [Tok::Word(w), Tok::Word(f)] = toks {
        if f.eq_ignore_ascii_case("free") {
            let v = b.var(w);
            b.model.vars[v.0].lb = f64::NEG_INFINITY;
            b.model.vars[v.0].ub = f64::INFINITY;
            return Ok(());
        }
    }
    let mut i = 0;
    if let Some(Tok::Word(w)) = toks.first() {
        // x op value
        let v = b.var(w);
        let Some(Tok::Cmp(op)) = toks.get(1) else {
            return Err(err("expected comparison after variable"));
        };
        i = 2;
        let val = signed_num(toks, &mut i, line)?;
        if i != toks.len() {
            return Err(err("trailing tokens in bound"));
        }
        let var = &mut b.model.vars[v.0];
        match op {
            Sense::Le => var.ub = val,
            Sense::Ge => var.lb = val,
            Sense::Eq => {
                var.lb = val;
                var.ub = val;
            }
        }
        return Ok(());
    }
    // value op x [op value]
    let lo = signed_num(toks, &mut i, line)?;
    let Some(Tok::Cmp(op1)) = toks.get(i) else {
        return Err(err("expected comparison in bound"));
    };
    i += 1;
    let Some(Tok::Word(w)) = toks.get(i) else {
        return Err(err("expected variable in bound"));
    };
    i += 1;
    let v = b.var(w);
    apply_rev(&mut b.model.vars[v.0], lo, *op1);
    if i < toks.len() {
        let Some(Tok::Cmp(op2)) = toks.get(i) else {
            return Err(err("expected comparison in bound"));
        };
        i += 1;
        let hi = signed_num(toks, &mut i, line)?;
        if i != toks.len() {
            return Err(err("trailing tokens in bound"));
        }
        let var = &mut b.model.vars[v.0];
        match op2 {
            Sense::Le => var.ub = hi,
            Sense::Ge => var.lb = hi,
            Sense::Eq => {
                var.lb = hi;
                var.ub = hi;
            }
        }
    }
    Ok(())
}

/// `value op x`
fn apply_rev(var: &mut Var, val: f64, op: Sense) {
    match op {
        Sense::Le => var.lb = val,
        Sense::Ge => var.ub = val,
        Sense::Eq => {
            var.lb = val;
            var.ub = val;
        }
    }
}
