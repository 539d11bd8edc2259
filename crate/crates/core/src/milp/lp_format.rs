//! Writer for the CPLEX LP text format.

use std::fmt::Write;

use super::model::LinearProgram;

const LINE_WIDTH: usize = 78;

struct Wrapped {
    out: String,
    line_len: usize,
}

impl Wrapped {
    fn start(&mut self, head: &str) {
        self.out.push_str(head);
        self.line_len = head.len();
    }

    fn token(&mut self, token: &str) {
        if self.line_len + 1 + token.len() > LINE_WIDTH {
            self.out.push_str("\n   ");
            self.line_len = 3;
        }
        self.out.push(' ');
        self.out.push_str(token);
        self.line_len += 1 + token.len();
    }

    fn end(&mut self) {
        self.out.push('\n');
        self.line_len = 0;
    }
}

fn number(v: f64) -> String {
    if v == f64::INFINITY {
        "+inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else if v == 0.0 {
        "0".into()
    } else {
        format!("{v}")
    }
}

fn linear_terms(w: &mut Wrapped, lp: &LinearProgram, terms: &[(usize, f64)]) {
    let mut first = true;
    for &(j, a) in terms {
        if a == 0.0 {
            continue;
        }
        let name = &lp.variables[j].name;
        let sign = if a < 0.0 { "-" } else { "+" };
        let text = if a.abs() == 1.0 {
            name.clone()
        } else {
            format!("{} {name}", number(a.abs()))
        };
        if first && a > 0.0 {
            w.token(&text);
        } else {
            w.token(&format!("{sign} {text}"));
        }
        first = false;
    }
    if first {
        // Empty expression: keep the row syntactically valid.
        let name = lp.variables.first().map_or("x", |v| v.name.as_str());
        w.token(&format!("0 {name}"));
    }
}

/// Serializes `lp` in CPLEX LP format. Ranged rows are split into a `_lo`
/// and a `_hi` row. The output depends only on the model, so it is stable
/// across runs.
pub fn write_lp(lp: &LinearProgram) -> String {
    let mut w = Wrapped {
        out: String::new(),
        line_len: 0,
    };
    w.out.push_str("Minimize\n");
    w.start(" obj:");
    let objective: Vec<(usize, f64)> = lp
        .variables
        .iter()
        .enumerate()
        .map(|(j, v)| (j, v.cost))
        .collect();
    linear_terms(&mut w, lp, &objective);
    w.end();

    w.out.push_str("Subject To\n");
    for c in &lp.constraints {
        let mut row = |suffix: &str, sense: &str, rhs: f64| {
            w.start(&format!(" {}{suffix}:", c.name));
            linear_terms(&mut w, lp, &c.terms);
            w.token(&format!("{sense} {}", number(rhs)));
            w.end();
        };
        let (lo, hi) = (c.lower, c.upper);
        if lo == hi {
            row("", "=", lo);
        } else if lo.is_finite() && hi.is_finite() {
            row("_lo", ">=", lo);
            row("_hi", "<=", hi);
        } else if lo.is_finite() {
            row("", ">=", lo);
        } else if hi.is_finite() {
            row("", "<=", hi);
        }
    }

    w.out.push_str("Bounds\n");
    for v in &lp.variables {
        let binary = v.integer && v.lower == 0.0 && v.upper == 1.0;
        if binary {
            continue;
        }
        let name = &v.name;
        let line = if v.lower == v.upper {
            format!(" {name} = {}", number(v.lower))
        } else if v.lower == f64::NEG_INFINITY && v.upper == f64::INFINITY {
            format!(" {name} free")
        } else if v.upper == f64::INFINITY {
            format!(" {name} >= {}", number(v.lower))
        } else {
            format!(" {} <= {name} <= {}", number(v.lower), number(v.upper))
        };
        writeln!(w.out, "{line}").expect("writing to a String");
    }

    let binaries: Vec<&str> = lp
        .variables
        .iter()
        .filter(|v| v.integer && v.lower == 0.0 && v.upper == 1.0)
        .map(|v| v.name.as_str())
        .collect();
    let generals: Vec<&str> = lp
        .variables
        .iter()
        .filter(|v| v.integer && !(v.lower == 0.0 && v.upper == 1.0))
        .map(|v| v.name.as_str())
        .collect();
    for (title, names) in [("Binaries", binaries), ("Generals", generals)] {
        if names.is_empty() {
            continue;
        }
        w.out.push_str(title);
        w.out.push('\n');
        w.start("");
        for name in names {
            w.token(name);
        }
        w.end();
    }
    w.out.push_str("End\n");
    w.out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_model() {
        let mut lp = LinearProgram::new();
        let x = lp.add_variable("x", 0.0, 4.0, 1.5, false);
        let y = lp.add_variable("y", f64::NEG_INFINITY, f64::INFINITY, -1.0, false);
        let b = lp.add_variable("b", 0.0, 1.0, 2.0, true);
        lp.add_constraint("c1", vec![(x, 1.0), (y, -2.0)], 1.0, 1.0);
        lp.add_constraint("c2", vec![(x, 3.0), (b, 1.0)], -1.0, 5.0);
        lp.add_constraint("c3", vec![(y, 1.0)], f64::NEG_INFINITY, 0.25);
        let text = write_lp(&lp);
        let expected = "\
Minimize
 obj: 1.5 x - y + 2 b
Subject To
 c1: x - 2 y = 1
 c2_lo: 3 x + b >= -1
 c2_hi: 3 x + b <= 5
 c3: y <= 0.25
Bounds
 0 <= x <= 4
 y free
Binaries
 b
End
";
        assert_eq!(text, expected);
    }

    #[test]
    fn long_rows_wrap() {
        let mut lp = LinearProgram::new();
        let terms: Vec<(usize, f64)> = (0..40)
            .map(|j| (lp.add_variable(format!("v_{j}"), 0.0, 1.0, 0.0, false), 1.0))
            .collect();
        lp.add_constraint("long", terms, f64::NEG_INFINITY, 1.0);
        let text = write_lp(&lp);
        assert!(text.lines().all(|l| l.len() <= LINE_WIDTH));
        assert_eq!(text, write_lp(&lp));
    }
}
