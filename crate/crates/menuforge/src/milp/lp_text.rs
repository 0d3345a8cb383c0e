//! CPLEX-LP-format text export and a matching reader.
//!
//! The emitted dialect uses the standard section keywords (`Minimize` /
//! `Maximize`, `Subject To`, `Bounds`, `Binaries`, `End`), one row per line,
//! explicit coefficients on every term, and a bounds line for every variable
//! in declaration order (including binaries, so a round-trip reconstructs the
//! exact variable ordering). Mainstream solvers read this dialect directly;
//! the reader here accepts it back plus minor spacing/sign variations.

use std::collections::HashMap;
use std::fmt::Write as _;

use super::{
    Constraint, ConstraintSense, MilpError, MilpInstance, Objective, ObjectiveSense, VarId,
    Variable,
};

/// Renders the instance as CPLEX-LP-format text with deterministic variable
/// ordering (declaration order throughout).
pub fn export_lp_text(inst: &MilpInstance) -> String {
    let mut out = String::new();
    out.push_str(match inst.objective.sense {
        ObjectiveSense::Minimize => "Minimize\n",
        ObjectiveSense::Maximize => "Maximize\n",
    });
    out.push_str(" obj:");
    push_terms(&mut out, &inst.objective.coefficients, &inst.variables);
    out.push('\n');
    out.push_str("Subject To\n");
    for (i, c) in inst.constraints.iter().enumerate() {
        let _ = write!(out, " c{i}:");
        push_terms(&mut out, &c.coefficients, &inst.variables);
        let _ = writeln!(out, " {} {}", c.sense, fmt_num(c.rhs));
    }
    out.push_str("Bounds\n");
    for v in &inst.variables {
        let _ = writeln!(out, " {} <= {} <= {}", fmt_num(v.lower), v.name, fmt_num(v.upper));
    }
    if inst.variables.iter().any(|v| v.is_binary) {
        out.push_str("Binaries\n");
        for v in &inst.variables {
            if v.is_binary {
                let _ = writeln!(out, " {}", v.name);
            }
        }
    }
    out.push_str("End\n");
    out
}

fn push_terms(out: &mut String, coeffs: &[(VarId, f64)], vars: &[Variable]) {
    for (k, &(id, c)) in coeffs.iter().enumerate() {
        if k == 0 {
            out.push_str(if c < 0.0 { " - " } else { " " });
        } else {
            out.push_str(if c < 0.0 { " - " } else { " + " });
        }
        let _ = write!(out, "{} {}", fmt_num(c.abs()), vars[id].name);
    }
}

fn fmt_num(v: f64) -> String {
    if v == f64::INFINITY {
        "+infinity".into()
    } else if v == f64::NEG_INFINITY {
        "-infinity".into()
    } else {
        format!("{v}")
    }
}

/// Parses text produced by [`export_lp_text`] (tolerating case differences,
/// extra whitespace, comment lines, and common keyword abbreviations) back
/// into an instance. Every variable must appear in the `Bounds` section; the
/// bounds order defines the variable ids.
pub fn parse_lp_text(text: &str) -> Result<MilpInstance, MilpError> {
    #[derive(PartialEq, Clone, Copy)]
    enum Section {
        Objective,
        Constraints,
        Bounds,
        Binaries,
        Done,
    }

    let malformed = |msg: String| MilpError::Malformed(format!("lp text: {msg}"));

    let mut sense = None;
    let mut section = None;
    let mut obj_lines: Vec<&str> = Vec::new();
    let mut con_lines: Vec<&str> = Vec::new();
    let mut bound_lines: Vec<&str> = Vec::new();
    let mut bin_lines: Vec<&str> = Vec::new();

    for raw in text.lines() {
        let line = match raw.find('\\') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let low = line.to_ascii_lowercase();
        match low.as_str() {
            "minimize" | "min" => {
                sense = Some(ObjectiveSense::Minimize);
                section = Some(Section::Objective);
                continue;
            }
            "maximize" | "max" => {
                sense = Some(ObjectiveSense::Maximize);
                section = Some(Section::Objective);
                continue;
            }
            "subject to" | "st" | "s.t." | "such that" => {
                section = Some(Section::Constraints);
                continue;
            }
            "bounds" => {
                section = Some(Section::Bounds);
                continue;
            }
            "binaries" | "binary" | "bin" => {
                section = Some(Section::Binaries);
                continue;
            }
            "end" => {
                section = Some(Section::Done);
                continue;
            }
            "generals" | "general" | "integers" => {
                return Err(malformed("general integer variables unsupported".into()));
            }
            _ => {}
        }
        match section {
            Some(Section::Objective) => obj_lines.push(line),
            Some(Section::Constraints) => con_lines.push(line),
            Some(Section::Bounds) => bound_lines.push(line),
            Some(Section::Binaries) => bin_lines.push(line),
            Some(Section::Done) => return Err(malformed(format!("content after End: {line:?}"))),
            None => return Err(malformed(format!("content before objective sense: {line:?}"))),
        }
    }
    let sense = sense.ok_or_else(|| malformed("missing Minimize/Maximize".into()))?;

    // Bounds define the variables and their order.
    let mut variables: Vec<Variable> = Vec::new();
    let mut ids: HashMap<String, VarId> = HashMap::new();
    for line in bound_lines {
        let toks = tokenize(line);
        let (name, lower, upper) = parse_bound_line(&toks)
            .ok_or_else(|| malformed(format!("unreadable bounds line {line:?}")))?;
        if ids.contains_key(&name) {
            return Err(malformed(format!("duplicate bounds for {name:?}")));
        }
        ids.insert(name.clone(), variables.len());
        variables.push(Variable {
            name,
            lower,
            upper,
            is_binary: false,
        });
    }
    for line in bin_lines {
        for tok in line.split_whitespace() {
            match ids.get(tok) {
                Some(&id) => {
                    variables[id].is_binary = true;
                    variables[id].lower = 0.0;
                    variables[id].upper = 1.0;
                }
                None => {
                    ids.insert(tok.to_string(), variables.len());
                    variables.push(Variable {
                        name: tok.to_string(),
                        lower: 0.0,
                        upper: 1.0,
                        is_binary: true,
                    });
                }
            }
        }
    }

    let resolve = |name: &str| -> Result<VarId, MilpError> {
        ids.get(name)
            .copied()
            .ok_or_else(|| malformed(format!("variable {name:?} missing from Bounds")))
    };

    let obj_joined = obj_lines.join(" ");
    let obj_body = strip_label(&obj_joined);
    let obj_terms = parse_terms(&tokenize(obj_body), &resolve)
        .map_err(|e| malformed(format!("objective: {e}")))?;

    let mut constraints = Vec::new();
    for line in con_lines {
        let body = strip_label(line);
        let toks = tokenize(body);
        let sense_pos = toks
            .iter()
            .position(|t| matches!(t.as_str(), "<=" | ">=" | "=" | "<" | ">"))
            .ok_or_else(|| malformed(format!("constraint missing comparison: {line:?}")))?;
        let csense = match toks[sense_pos].as_str() {
            "<=" | "<" => ConstraintSense::Le,
            ">=" | ">" => ConstraintSense::Ge,
            _ => ConstraintSense::Eq,
        };
        let rhs_toks = &toks[sense_pos + 1..];
        let rhs = parse_signed_number(rhs_toks)
            .ok_or_else(|| malformed(format!("constraint rhs unreadable: {line:?}")))?;
        let coefficients = parse_terms(&toks[..sense_pos], &resolve)
            .map_err(|e| malformed(format!("constraint {line:?}: {e}")))?;
        constraints.push(Constraint {
            coefficients,
            sense: csense,
            rhs,
        });
    }

    Ok(MilpInstance {
        variables,
        constraints,
        objective: Objective {
            sense,
            coefficients: obj_terms,
        },
    })
}

/// Drops an optional leading `name:` row label.
fn strip_label(line: &str) -> &str {
    match line.find(':') {
        Some(i) => &line[i + 1..],
        None => line,
    }
}

/// Splits on whitespace while making comparison operators and sign characters
/// their own tokens.
fn tokenize(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            ' ' | '\t' => {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
            }
            '<' | '>' => {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                let mut op = c.to_string();
                if chars.peek() == Some(&'=') {
                    chars.next();
                    op.push('=');
                }
                out.push(op);
            }
            '=' => {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push("=".into());
            }
            '+' | '-' => {
                // Sign tokens; keep exponent signs ("1e-7") attached.
                let in_exponent = cur
                    .chars()
                    .last()
                    .map(|l| (l == 'e' || l == 'E') && cur.chars().next().is_some_and(|f| f.is_ascii_digit() || f == '.'))
                    .unwrap_or(false);
                if in_exponent {
                    cur.push(c);
                } else {
                    if !cur.is_empty() {
                        out.push(std::mem::take(&mut cur));
                    }
                    out.push(c.to_string());
                }
            }
            _ => cur.push(c),
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn parse_number(tok: &str) -> Option<f64> {
    match tok.to_ascii_lowercase().as_str() {
        "inf" | "infinity" => return Some(f64::INFINITY),
        _ => {}
    }
    // Identifiers must not be mistaken for numbers; f64::from_str accepts
    // only numeric forms, which valid names never take.
    tok.parse::<f64>().ok().filter(|v| !v.is_nan())
}

/// Parses `[sign]* number` from a token slice that must contain nothing else.
fn parse_signed_number(toks: &[String]) -> Option<f64> {
    let mut sign = 1.0;
    let mut idx = 0;
    while idx < toks.len() && (toks[idx] == "+" || toks[idx] == "-") {
        if toks[idx] == "-" {
            sign = -sign;
        }
        idx += 1;
    }
    if idx + 1 != toks.len() {
        return None;
    }
    parse_number(&toks[idx]).map(|v| sign * v)
}

/// Parses a `[sign] [coefficient] name` term sequence.
fn parse_terms(
    toks: &[String],
    resolve: &dyn Fn(&str) -> Result<VarId, MilpError>,
) -> Result<Vec<(VarId, f64)>, String> {
    let mut out: Vec<(VarId, f64)> = Vec::new();
    let mut i = 0;
    while i < toks.len() {
        let mut sign = 1.0;
        while i < toks.len() && (toks[i] == "+" || toks[i] == "-") {
            if toks[i] == "-" {
                sign = -sign;
            }
            i += 1;
        }
        if i >= toks.len() {
            return Err("dangling sign".into());
        }
        let coeff = match parse_number(&toks[i]) {
            Some(v) => {
                i += 1;
                v
            }
            None => 1.0,
        };
        if i >= toks.len() {
            return Err(format!("coefficient {coeff} without a variable"));
        }
        let name = &toks[i];
        i += 1;
        let id = resolve(name).map_err(|e| e.to_string())?;
        out.push((id, sign * coeff));
    }
    Ok(out)
}

/// Accepts `l <= name <= u`, `name = v`, `name free`, `name <= u`,
/// `name >= l`, and `l <= name`.
fn parse_bound_line(toks: &[String]) -> Option<(String, f64, f64)> {
    let is_name = |t: &String| parse_number(t).is_none() && t != "free";
    match toks.len() {
        2 if is_name(&toks[0]) && toks[1] == "free" => {
            Some((toks[0].clone(), f64::NEG_INFINITY, f64::INFINITY))
        }
        3 if is_name(&toks[0]) && toks[1] == "=" => {
            let v = parse_number(&toks[2])?;
            Some((toks[0].clone(), v, v))
        }
        3 if is_name(&toks[0]) && toks[1] == "<=" => {
            let u = parse_number(&toks[2])?;
            Some((toks[0].clone(), 0.0, u))
        }
        3 if is_name(&toks[0]) && toks[1] == ">=" => {
            let l = parse_number(&toks[2])?;
            Some((toks[0].clone(), l, f64::INFINITY))
        }
        3 if toks[1] == "<=" && is_name(&toks[2]) => {
            let l = parse_number(&toks[0])?;
            Some((toks[2].clone(), l, f64::INFINITY))
        }
        n if n >= 4 => {
            // Signed two-sided variant: [-,] l <= name <= [-,] u.
            let mut i = 0;
            let mut lsign = 1.0;
            while i < toks.len() && (toks[i] == "+" || toks[i] == "-") {
                if toks[i] == "-" {
                    lsign = -lsign;
                }
                i += 1;
            }
            let l = lsign * parse_number(toks.get(i)?)?;
            if toks.get(i + 1)? != "<=" || !is_name(toks.get(i + 2)?) || toks.get(i + 3)? != "<="
            {
                return None;
            }
            let name = toks[i + 2].clone();
            let mut j = i + 4;
            let mut usign = 1.0;
            while j < toks.len() && (toks[j] == "+" || toks[j] == "-") {
                if toks[j] == "-" {
                    usign = -usign;
                }
                j += 1;
            }
            if j + 1 != toks.len() {
                return None;
            }
            let u = usign * parse_number(&toks[j])?;
            Some((name, l, u))
        }
        _ => None,
    }
}
