//! Line-oriented text serialization for problems and solutions.
//!
//! Values are written exactly: rationals as `p/q` (or a bare integer),
//! floats in hexadecimal significand form so deserialization is bit-exact.

use std::fmt::Write as _;

use rug::Rational;

use super::{LinearEq, Objective, SdpError, SdpProblem, SdpSolution, Sense};

pub fn problem_to_text(p: &SdpProblem) -> String {
    let mut out = String::new();
    out.push_str("sdp-problem v1\n");
    let dims: Vec<String> = p.blocks.iter().map(|d| d.to_string()).collect();
    let _ = writeln!(out, "blocks {}", dims.join(" "));
    let _ = writeln!(out, "free {}", p.free_vars);
    let sense = match p.objective.sense {
        Sense::Minimize => "min",
        Sense::Maximize => "max",
    };
    let _ = writeln!(out, "objective {sense}");
    for (b, i, j, c) in &p.objective.block_terms {
        let _ = writeln!(out, "obj-bt {b} {i} {j} {c}");
    }
    for (k, c) in &p.objective.free_terms {
        let _ = writeln!(out, "obj-ft {k} {c}");
    }
    for eq in &p.equalities {
        let _ = writeln!(out, "eq {}", eq.rhs);
        for (b, i, j, c) in &eq.block_terms {
            let _ = writeln!(out, "bt {b} {i} {j} {c}");
        }
        for (k, c) in &eq.free_terms {
            let _ = writeln!(out, "ft {k} {c}");
        }
    }
    out.push_str("end\n");
    out
}

pub fn problem_from_text(text: &str) -> Result<SdpProblem, SdpError> {
    let mut blocks = Vec::new();
    let mut free_vars = 0usize;
    let mut objective = Objective::feasibility();
    let mut equalities: Vec<LinearEq> = Vec::new();
    let parse_rat = |s: &str, line: usize| -> Result<Rational, SdpError> {
        s.parse::<Rational>().map_err(|e| SdpError::Parse {
            line,
            msg: format!("bad rational `{s}`: {e}"),
        })
    };
    let parse_usize = |s: &str, line: usize| -> Result<usize, SdpError> {
        s.parse::<usize>().map_err(|e| SdpError::Parse {
            line,
            msg: format!("bad index `{s}`: {e}"),
        })
    };
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let words: Vec<&str> = raw.split_whitespace().collect();
        if words.is_empty() {
            continue;
        }
        match words[0] {
            "sdp-problem" | "end" => {}
            "blocks" => {
                for w in &words[1..] {
                    blocks.push(parse_usize(w, line)?);
                }
            }
            "free" => free_vars = parse_usize(words[1], line)?,
            "objective" => {
                objective.sense = match words.get(1) {
                    Some(&"min") => Sense::Minimize,
                    Some(&"max") => Sense::Maximize,
                    other => {
                        return Err(SdpError::Parse {
                            line,
                            msg: format!("bad sense {other:?}"),
                        })
                    }
                };
            }
            "obj-bt" => objective.block_terms.push((
                parse_usize(words[1], line)?,
                parse_usize(words[2], line)?,
                parse_usize(words[3], line)?,
                parse_rat(words[4], line)?,
            )),
            "obj-ft" => objective
                .free_terms
                .push((parse_usize(words[1], line)?, parse_rat(words[2], line)?)),
            "eq" => equalities.push(LinearEq {
                rhs: parse_rat(words[1], line)?,
                ..Default::default()
            }),
            "bt" => {
                let eq = equalities.last_mut().ok_or(SdpError::Parse {
                    line,
                    msg: "block term before any `eq`".into(),
                })?;
                eq.block_terms.push((
                    parse_usize(words[1], line)?,
                    parse_usize(words[2], line)?,
                    parse_usize(words[3], line)?,
                    parse_rat(words[4], line)?,
                ));
            }
            "ft" => {
                let eq = equalities.last_mut().ok_or(SdpError::Parse {
                    line,
                    msg: "free term before any `eq`".into(),
                })?;
                eq.free_terms
                    .push((parse_usize(words[1], line)?, parse_rat(words[2], line)?));
            }
            other => {
                return Err(SdpError::Parse {
                    line,
                    msg: format!("unknown directive `{other}`"),
                })
            }
        }
    }
    Ok(SdpProblem {
        blocks,
        free_vars,
        equalities,
        objective,
    })
}

pub fn solution_to_text(s: &SdpSolution) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "sdp-solution v1");
    let _ = writeln!(out, "status {:?}", s.status);
    let _ = writeln!(out, "iterations {}", s.iterations);
    let _ = writeln!(out, "objective {}", s.objective.to_string_radix(10, None));
    let _ = writeln!(
        out,
        "dual-objective {}",
        s.dual_objective.to_string_radix(10, None)
    );
    let _ = writeln!(
        out,
        "residuals {} {} {}",
        s.primal_residual.to_string_radix(10, Some(6)),
        s.dual_residual.to_string_radix(10, Some(6)),
        s.gap.to_string_radix(10, Some(6))
    );
    for (bi, b) in s.blocks.iter().enumerate() {
        let _ = writeln!(out, "block {bi} {}", b.rows());
        for i in 0..b.rows() {
            let row: Vec<String> = (0..=i)
                .map(|j| b.at(i, j).to_string_radix(10, None))
                .collect();
            let _ = writeln!(out, "  {}", row.join(" "));
        }
    }
    for (k, v) in s.free_values.iter().enumerate() {
        let _ = writeln!(out, "freeval {k} {}", v.to_string_radix(10, None));
    }
    for w in &s.warnings {
        let _ = writeln!(out, "warning {w}");
    }
    out.push_str("end\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn problem_round_trip() {
        let p = SdpProblem {
            blocks: vec![2, 3],
            free_vars: 2,
            equalities: vec![
                LinearEq {
                    block_terms: vec![(0, 1, 0, Rational::from((1, 3)))],
                    free_terms: vec![(1, Rational::from(-2))],
                    rhs: Rational::from(5),
                },
                LinearEq {
                    block_terms: vec![(1, 2, 2, Rational::from(7))],
                    free_terms: vec![],
                    rhs: Rational::from((-3, 4)),
                },
            ],
            objective: Objective::single_free(Sense::Maximize, 0),
        };
        let text = problem_to_text(&p);
        let back = problem_from_text(&text).unwrap();
        assert_eq!(p, back);
    }
}
