//! Declarative polynomial problem files.
//!
//! ```text
//! # comment
//! problem duopoly
//! players 2
//! dims 1 1
//! shared
//! x0 origin 0 0
//! player 1
//! objective 1 (2,0) - 2 (1,0) + 1 (0,0)
//! g 1 (1,0) + 1 (0,1) - 1 (0,0)
//! player 2
//! objective 1 (0,2) - 1 (0,1) + 0.25 (0,0)
//! g 1 (1,0) + 1 (0,1) - 1 (0,0)
//! ```
//!
//! A term is `coefficient (e1,...,en)` and stands for `c · x1^e1 ⋯ xn^en`.
//! Players are numbered from 1 in the file, in order. `h` lines declare
//! retained constraints.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{ConstraintFn, FnConstraints, FnObjective, GnepProblem, PlayerSpec, Point};

/// A polynomial in `n` variables, kept with merged and sorted terms.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    n: usize,
    terms: Vec<(f64, Vec<u32>)>,
}

impl Polynomial {
    pub fn new(n: usize, terms: Vec<(f64, Vec<u32>)>) -> Self {
        let mut sorted = terms;
        sorted.sort_by(|a, b| a.1.cmp(&b.1));
        let mut merged: Vec<(f64, Vec<u32>)> = Vec::new();
        for (c, e) in sorted {
            match merged.last_mut() {
                Some(last) if last.1 == e => last.0 += c,
                _ => merged.push((c, e)),
            }
        }
        merged.retain(|(c, _)| *c != 0.0);
        Self { n, terms: merged }
    }

    pub fn nvars(&self) -> usize {
        self.n
    }

    pub fn terms(&self) -> &[(f64, Vec<u32>)] {
        &self.terms
    }

    fn monomial(x: &Point, e: &[u32], skip: &[(usize, u32)]) -> f64 {
        let mut p = 1.0;
        for (j, &ej) in e.iter().enumerate() {
            let drop: u32 = skip.iter().filter(|(k, _)| *k == j).map(|(_, d)| d).sum();
            p *= x[j].powi((ej - drop) as i32);
        }
        p
    }

    pub fn value(&self, x: &Point) -> f64 {
        self.terms.iter().map(|(c, e)| c * Self::monomial(x, e, &[])).sum()
    }

    pub fn gradient(&self, x: &Point) -> DVector<f64> {
        let mut g = DVector::zeros(self.n);
        for (c, e) in &self.terms {
            for j in 0..self.n {
                if e[j] > 0 {
                    g[j] += c * e[j] as f64 * Self::monomial(x, e, &[(j, 1)]);
                }
            }
        }
        g
    }

    pub fn hessian(&self, x: &Point) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.n, self.n);
        for (c, e) in &self.terms {
            for i in 0..self.n {
                for j in 0..self.n {
                    let factor = if i == j {
                        (e[i] as f64) * (e[i] as f64 - 1.0)
                    } else {
                        e[i] as f64 * e[j] as f64
                    };
                    if factor != 0.0 {
                        h[(i, j)] += c * factor * Self::monomial(x, e, &[(i, 1), (j, 1)]);
                    }
                }
            }
        }
        h
    }
}

fn objective_from(poly: Polynomial, off: usize, dim: usize) -> FnObjective {
    let (pv, pg, ph) = (poly.clone(), poly.clone(), poly);
    FnObjective::new(
        move |x: &Point| pv.value(x),
        move |x: &Point| pg.gradient(x).rows(off, dim).into_owned(),
    )
    .with_hessian_rows(move |x: &Point| ph.hessian(x).rows(off, dim).into_owned())
}

fn constraints_from(polys: Vec<Polynomial>, n: usize) -> Arc<dyn ConstraintFn> {
    let polys = Arc::new(polys);
    let (pv, pg, ph) = (polys.clone(), polys.clone(), polys.clone());
    Arc::new(
        FnConstraints::new(
            polys.len(),
            move |x: &Point| DVector::from_iterator(pv.len(), pv.iter().map(|p| p.value(x))),
            move |x: &Point| {
                let mut m = DMatrix::zeros(n, pg.len());
                for (i, p) in pg.iter().enumerate() {
                    m.set_column(i, &p.gradient(x));
                }
                m
            },
        )
        .with_hessians(move |x: &Point| ph.iter().map(|p| p.hessian(x)).collect()),
    )
}

/// A parsed problem file together with its named starting points.
#[derive(Debug)]
pub struct Plugin {
    pub problem: GnepProblem,
    pub presets: Vec<(String, Vec<f64>)>,
}

impl Plugin {
    pub fn preset(&self, label: &str) -> Option<&[f64]> {
        self.presets
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, v)| v.as_slice())
    }
}

#[derive(Default)]
struct PlayerDraft {
    objective: Option<Polynomial>,
    g: Vec<Polynomial>,
    h: Vec<Polynomial>,
}

struct Parser<'a> {
    file: &'a str,
    line: usize,
}

impl Parser<'_> {
    fn err(&self, column: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            file: self.file.to_string(),
            line: self.line,
            column,
            message: message.into(),
        }
    }

    fn int(&self, tok: &str, col: usize) -> Result<usize> {
        tok.parse()
            .map_err(|_| self.err(col, format!("expected a nonnegative integer, found `{tok}`")))
    }

    fn float(&self, tok: &str, col: usize) -> Result<f64> {
        tok.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| self.err(col, format!("expected a finite number, found `{tok}`")))
    }

    /// Parses `text`, which starts at 1-based column `col0` of the line.
    fn polynomial(&self, text: &str, col0: usize, n: usize) -> Result<Polynomial> {
        let chars: Vec<char> = text.chars().collect();
        let mut pos = 0;
        let col = |p: usize| col0 + p;
        let skip_ws = |pos: &mut usize| {
            while *pos < chars.len() && chars[*pos].is_whitespace() {
                *pos += 1;
            }
        };
        let mut terms = Vec::new();
        loop {
            skip_ws(&mut pos);
            let mut sign = 1.0;
            if terms.is_empty() {
                if pos < chars.len() && (chars[pos] == '+' || chars[pos] == '-') {
                    if chars[pos] == '-' {
                        sign = -1.0;
                    }
                    pos += 1;
                }
            } else {
                if pos >= chars.len() {
                    break;
                }
                match chars[pos] {
                    '+' => {}
                    '-' => sign = -1.0,
                    c => return Err(self.err(col(pos), format!("expected `+` or `-`, found `{c}`"))),
                }
                pos += 1;
            }
            skip_ws(&mut pos);
            let start = pos;
            while pos < chars.len() {
                let c = chars[pos];
                let exp_sign = (c == '+' || c == '-')
                    && pos > start
                    && matches!(chars[pos - 1], 'e' | 'E');
                if c.is_ascii_digit() || c == '.' || c == 'e' || c == 'E' || exp_sign {
                    pos += 1;
                } else {
                    break;
                }
            }
            if start == pos {
                return Err(self.err(col(pos), "expected a coefficient"));
            }
            let coef: String = chars[start..pos].iter().collect();
            let coef = sign * self.float(&coef, col(start))?;
            skip_ws(&mut pos);
            if pos >= chars.len() || chars[pos] != '(' {
                return Err(self.err(col(pos), "expected `(` opening an exponent tuple"));
            }
            let open = pos;
            pos += 1;
            let close = chars[pos..]
                .iter()
                .position(|&c| c == ')')
                .map(|p| pos + p)
                .ok_or_else(|| self.err(col(open), "unterminated exponent tuple"))?;
            let mut exps = Vec::with_capacity(n);
            let mut field_start = pos;
            for (i, part) in chars[pos..close].split(|&c| c == ',').enumerate() {
                let s: String = part.iter().collect();
                let lead = s.len() - s.trim_start().len();
                let e = s
                    .trim()
                    .parse::<u32>()
                    .map_err(|_| self.err(col(field_start + lead), format!("invalid exponent `{}`", s.trim())))?;
                if i >= n {
                    return Err(self.err(col(field_start), format!("exponent tuple has more than {n} entries")));
                }
                exps.push(e);
                field_start += part.len() + 1;
            }
            if exps.len() != n {
                return Err(self.err(
                    col(open),
                    format!("exponent tuple has {} entries, expected {n}", exps.len()),
                ));
            }
            pos = close + 1;
            terms.push((coef, exps));
        }
        if terms.is_empty() {
            return Err(self.err(col0, "empty polynomial"));
        }
        Ok(Polynomial::new(n, terms))
    }
}

/// Parses problem-file text; `file` is used only in error messages.
pub fn parse_plugin(text: &str, file: &str) -> Result<Plugin> {
    let mut p = Parser { file, line: 0 };
    let mut name: Option<String> = None;
    let mut players: Option<usize> = None;
    let mut dims: Option<Vec<usize>> = None;
    let mut shared = false;
    let mut presets: Vec<(String, Vec<f64>)> = Vec::new();
    let mut drafts: Vec<PlayerDraft> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        p.line = i + 1;
        let content = raw.split('#').next().unwrap_or("");
        let trimmed = content.trim_start();
        if trimmed.trim().is_empty() {
            continue;
        }
        let indent = content.len() - trimmed.len();
        let kw_len = trimmed.find(char::is_whitespace).unwrap_or(trimmed.len());
        let keyword = &trimmed[..kw_len];
        let rest = &trimmed[kw_len..];
        let rest_col = indent + kw_len + 1;
        let tokens: Vec<(usize, &str)> = {
            let mut out = Vec::new();
            let mut off = 0;
            for tok in rest.split_whitespace() {
                let at = rest[off..].find(tok).expect("token comes from the same string") + off;
                out.push((rest_col + at, tok));
                off = at + tok.len();
            }
            out
        };
        let n = dims.as_ref().map(|d| d.iter().sum::<usize>());
        match keyword {
            "problem" => {
                let [(_, tok)] = tokens[..] else {
                    return Err(p.err(rest_col, "`problem` takes exactly one name"));
                };
                name = Some(tok.to_string());
            }
            "players" => {
                let [(c, tok)] = tokens[..] else {
                    return Err(p.err(rest_col, "`players` takes exactly one count"));
                };
                let count = p.int(tok, c)?;
                if count == 0 {
                    return Err(p.err(c, "at least one player is required"));
                }
                players = Some(count);
            }
            "dims" => {
                let count = players.ok_or_else(|| p.err(1 + indent, "`dims` must follow `players`"))?;
                if tokens.len() != count {
                    return Err(p.err(rest_col, format!("expected {count} dimensions, found {}", tokens.len())));
                }
                let d = tokens
                    .iter()
                    .map(|&(c, t)| p.int(t, c))
                    .collect::<Result<Vec<_>>>()?;
                dims = Some(d);
            }
            "shared" => {
                if let Some(&(c, _)) = tokens.first() {
                    return Err(p.err(c, "`shared` takes no arguments"));
                }
                shared = true;
            }
            "x0" => {
                let n = n.ok_or_else(|| p.err(1 + indent, "`x0` must follow `dims`"))?;
                let Some(&(_, label)) = tokens.first() else {
                    return Err(p.err(rest_col, "`x0` needs a label"));
                };
                let values = tokens[1..]
                    .iter()
                    .map(|&(c, t)| p.float(t, c))
                    .collect::<Result<Vec<_>>>()?;
                if values.len() != n {
                    return Err(p.err(rest_col, format!("x0 `{label}` has {} values, expected {n}", values.len())));
                }
                presets.push((label.to_string(), values));
            }
            "player" => {
                let count = players.ok_or_else(|| p.err(1 + indent, "`player` must follow `players`"))?;
                if dims.is_none() {
                    return Err(p.err(1 + indent, "`player` must follow `dims`"));
                }
                let [(c, tok)] = tokens[..] else {
                    return Err(p.err(rest_col, "`player` takes exactly one index"));
                };
                let idx = p.int(tok, c)?;
                if idx != drafts.len() + 1 || idx > count {
                    return Err(p.err(c, format!("expected player {}", drafts.len() + 1)));
                }
                drafts.push(PlayerDraft::default());
            }
            "objective" | "g" | "h" => {
                let n = n.ok_or_else(|| p.err(1 + indent, format!("`{keyword}` must follow `dims`")))?;
                let Some(draft) = drafts.last_mut() else {
                    return Err(p.err(1 + indent, format!("`{keyword}` must follow `player`")));
                };
                let poly = p.polynomial(rest, rest_col, n)?;
                match keyword {
                    "objective" if draft.objective.is_some() => {
                        return Err(p.err(1 + indent, "player already has an objective"));
                    }
                    "objective" => draft.objective = Some(poly),
                    "g" => draft.g.push(poly),
                    _ => draft.h.push(poly),
                }
            }
            other => return Err(p.err(1 + indent, format!("unknown keyword `{other}`"))),
        }
    }

    p.line = text.lines().count().max(1);
    let name = name.ok_or_else(|| p.err(1, "missing `problem` line"))?;
    let count = players.ok_or_else(|| p.err(1, "missing `players` line"))?;
    let dims = dims.ok_or_else(|| p.err(1, "missing `dims` line"))?;
    if drafts.len() != count {
        return Err(p.err(1, format!("declared {count} players, found {}", drafts.len())));
    }
    let n: usize = dims.iter().sum();

    if shared {
        if let Some(v) = drafts.iter().position(|d| d.g != drafts[0].g) {
            return Err(Error::Problem(format!(
                "`shared` is set but the g list of player {} differs from player 1",
                v + 1
            )));
        }
    }
    let shared_g = if shared && !drafts[0].g.is_empty() {
        Some(constraints_from(drafts[0].g.clone(), n))
    } else {
        None
    };

    let mut specs = Vec::with_capacity(count);
    let mut off = 0;
    for (v, draft) in drafts.into_iter().enumerate() {
        let objective = draft
            .objective
            .ok_or_else(|| Error::Problem(format!("player {} has no objective", v + 1)))?;
        let mut spec = PlayerSpec::new(dims[v], objective_from(objective, off, dims[v]));
        if let Some(g) = &shared_g {
            spec = spec.with_g(g.clone());
        } else if !draft.g.is_empty() {
            spec = spec.with_g(constraints_from(draft.g, n));
        }
        if !draft.h.is_empty() {
            spec = spec.with_h(constraints_from(draft.h, n));
        }
        specs.push(spec);
        off += dims[v];
    }
    Ok(Plugin {
        problem: GnepProblem::new(name, specs, shared)?,
        presets,
    })
}

pub fn load_plugin(path: &Path) -> Result<Plugin> {
    let text = std::fs::read_to_string(path)?;
    parse_plugin(&text, &path.display().to_string())
}

pub fn load_problem_plugin(path: &Path) -> Result<GnepProblem> {
    Ok(load_plugin(path)?.problem)
}

#[cfg(test)]
mod tests {
    use super::*;

    const DUOPOLY: &str = "\
problem duopoly
players 2
dims 1 1
shared
x0 origin 0 0
player 1
objective 1 (2,0) - 2 (1,0) + 1 (0,0)
g 1 (1,0) + 1 (0,1) - 1 (0,0)
player 2
objective 1 (0,2) - 1 (0,1) + 0.25 (0,0)
g 1 (1,0) + 1 (0,1) - 1 (0,0)
";

    fn parse_err(text: &str) -> (usize, usize, String) {
        match parse_plugin(text, "t") {
            Err(Error::Parse { line, column, message, .. }) => (line, column, message),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn polynomial_derivatives() {
        // x1^2 x2 + 3 x2^3
        let p = Polynomial::new(2, vec![(1.0, vec![2, 1]), (3.0, vec![0, 3])]);
        let x = DVector::from_vec(vec![2.0, -1.0]);
        assert_eq!(p.value(&x), -4.0 - 3.0);
        assert_eq!(p.gradient(&x).as_slice(), &[-4.0, 4.0 + 9.0]);
        assert_eq!(p.hessian(&x), DMatrix::from_row_slice(2, 2, &[-2.0, 4.0, 4.0, -18.0]));
    }

    #[test]
    fn terms_merge_and_cancel() {
        let p = Polynomial::new(1, vec![(1.0, vec![1]), (2.0, vec![0]), (-1.0, vec![1])]);
        assert_eq!(p.terms(), &[(2.0, vec![0])]);
    }

    #[test]
    fn parses_duopoly() {
        let plugin = parse_plugin(DUOPOLY, "t").unwrap();
        let p = &plugin.problem;
        assert!(p.shared_constraints());
        assert_eq!(p.dim(), 2);
        assert_eq!(plugin.preset("origin"), Some(&[0.0, 0.0][..]));
        let x = DVector::from_vec(vec![0.75, 0.25]);
        assert_eq!(p.theta(0, &x).unwrap(), 0.0625);
        assert_eq!(p.g(1, &x).unwrap()[0], 0.0);
    }

    #[test]
    fn malformed_exponent_tuple_reports_location() {
        let text = DUOPOLY.replace("objective 1 (2,0) -", "objective 1 (2,x) -");
        let (line, column, message) = parse_err(&text);
        assert_eq!((line, column), (7, 16));
        assert!(message.contains("exponent"), "{message}");
    }

    #[test]
    fn short_exponent_tuple_rejected() {
        let text = DUOPOLY.replace("g 1 (1,0) + 1 (0,1) - 1 (0,0)\nplayer 2", "g 1 (1) + 1 (0,1) - 1 (0,0)\nplayer 2");
        let (line, column, _) = parse_err(&text);
        assert_eq!((line, column), (8, 5));
    }

    #[test]
    fn non_polynomial_syntax_rejected() {
        let text = DUOPOLY.replace("objective 1 (0,2)", "objective sin(x2)");
        let (line, column, message) = parse_err(&text);
        assert_eq!((line, column), (10, 11));
        assert!(message.contains("coefficient"));
    }

    #[test]
    fn shared_with_mismatched_g_rejected() {
        let text = DUOPOLY.replacen("g 1 (1,0) + 1 (0,1) - 1 (0,0)", "g 1 (1,0) - 1 (0,0)", 1);
        assert!(matches!(parse_plugin(&text, "t"), Err(Error::Problem(_))));
    }

    #[test]
    fn unknown_keyword_rejected() {
        let (line, column, _) = parse_err("problem p\n  bogus 1\n");
        assert_eq!((line, column), (2, 3));
    }
}
