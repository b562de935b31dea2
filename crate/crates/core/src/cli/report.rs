//! Human-readable result table and line-delimited trace.

use std::fmt::Write as _;

use crate::diagnostics::DiagnosticsVerdict;
use crate::model::GnepProblem;
use crate::outer::{IterationRecord, Status, TerminationReport};

/// Formats `v` like C's `%.{sig}g`, e.g. `1.5e-10`, `8e-09`, `100`.
pub fn format_g(v: f64, sig: usize) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let sig = sig.max(1);
    let sci = format!("{:.*e}", sig - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= sig as i32 {
        let mantissa = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (sig as i32 - 1 - exp).max(0) as usize;
        strip_zeros(&format!("{:.*}", decimals, v)).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

const HEADER: [&str; 10] = ["name", "N", "n", "x0", "k", "i_total", "R_f", "R_o", "R_c", "rho_max"];

fn row(cells: &[String; 10]) -> String {
    format!(
        "{:<20} {:>3} {:>5} {:<12} {:>5} {:>8} {:>9} {:>9} {:>9} {:>9}",
        cells[0], cells[1], cells[2], cells[3], cells[4], cells[5], cells[6], cells[7], cells[8], cells[9]
    )
}

pub fn table_header() -> String {
    row(&HEADER.map(String::from))
}

/// Table row for a finished run; every numeric column comes from `last`.
pub fn table_row(problem: &GnepProblem, x0_label: &str, status: Status, last: &IterationRecord) -> String {
    let numeric = if status == Status::SolvedKKT {
        let rho_max = last.rho.iter().copied().fold(0.0, f64::max);
        [
            last.k.to_string(),
            last.i_total.to_string(),
            format_g(last.residuals.r_f, 2),
            format_g(last.residuals.r_o, 2),
            format_g(last.residuals.r_c, 2),
            format_g(rho_max, 4),
        ]
    } else {
        std::array::from_fn(|_| "F".to_string())
    };
    let [k, i, rf, ro, rc, rho] = numeric;
    row(&[
        problem.name().to_string(),
        problem.num_players().to_string(),
        problem.dim().to_string(),
        x0_label.to_string(),
        k,
        i,
        rf,
        ro,
        rc,
        rho,
    ])
}

/// Full report text: table, status, final point and diagnostics.
pub fn render(
    problem: &GnepProblem,
    x0_label: &str,
    result: &TerminationReport,
    diagnostics: Option<&DiagnosticsVerdict>,
) -> String {
    let mut out = String::new();
    let last = result.last();
    writeln!(out, "{}", table_header()).unwrap();
    writeln!(out, "{}", table_row(problem, x0_label, result.status, last)).unwrap();
    writeln!(out, "status {:?}", result.status).unwrap();
    writeln!(out, "mode {:?}", result.mode).unwrap();
    let xs: Vec<String> = last.x.iter().map(|v| format!("{v:?}")).collect();
    writeln!(out, "x {}", xs.join(" ")).unwrap();
    if let Some(d) = diagnostics {
        writeln!(out, "diagnostics {}", serde_json::to_string(d).expect("serializable")).unwrap();
    }
    out
}

/// One JSON object per line, one line per outer iteration.
pub fn trace_lines(trace: &[IterationRecord]) -> String {
    let mut out = String::new();
    for rec in trace {
        out.push_str(&serde_json::to_string(rec).expect("serializable"));
        out.push('\n');
    }
    out
}
