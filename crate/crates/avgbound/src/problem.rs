//! Problem-file ingestion.
//!
//! Sectioned text format, one directive per line, `#` comments:
//!
//! ```text
//! vars x y
//! param mu 1.0
//! f x = y
//! f y = mu*(1 - x^2)*y - x
//! phi = x^2 + y^2
//! sigma = 0; 1          # n x m matrix, rows ';'-separated
//! domain g = x^2 + y^2 - 1
//! zeta = x^2 - x*y + y^2
//! ```
//!
//! Every polynomial on the right-hand side is read by the expression
//! parser with the declared variables and parameters in scope.

use std::collections::BTreeMap;
use std::path::Path;

use rug::Rational;
use thiserror::Error;

use crate::bounds::{zeta_matrix, ProblemSpec};
use crate::poly::{parse_with_params, DiffusionMatrix, PolyError, RatPoly};
use crate::scalar::parse_rational;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: {source}")]
    Expr { line: usize, source: PolyError },
    #[error("validation failed for `{field}`: {msg}")]
    Validation { field: String, msg: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

pub fn load_problem(path: &Path) -> Result<ProblemSpec, ProblemError> {
    let text = std::fs::read_to_string(path).map_err(|e| ProblemError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_problem(&text)
}

pub fn parse_problem(text: &str) -> Result<ProblemSpec, ProblemError> {
    let mut vars: Vec<String> = Vec::new();
    let mut params: BTreeMap<String, Rational> = BTreeMap::new();
    let mut f_map: BTreeMap<String, (usize, RatPoly)> = BTreeMap::new();
    let mut phi: Option<RatPoly> = None;
    let mut sigma_rows: Option<Vec<Vec<Rational>>> = None;
    let mut domain: Option<RatPoly> = None;
    let mut zeta: Option<RatPoly> = None;

    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut words = content.split_whitespace();
        let key = words.next().unwrap();
        let rest = content[key.len()..].trim();
        let syntax = |msg: String| ProblemError::Syntax { line, msg };
        let parse_expr = |expr: &str, vars: &[String], params: &BTreeMap<String, Rational>| {
            parse_with_params(expr, vars, params)
                .map_err(|e| ProblemError::Expr { line, source: e })
        };
        match key {
            "vars" => {
                vars = rest.split_whitespace().map(String::from).collect();
                if vars.is_empty() {
                    return Err(syntax("`vars` needs at least one name".into()));
                }
            }
            "param" => {
                let mut it = rest.split_whitespace();
                let name = it
                    .next()
                    .ok_or_else(|| syntax("`param` needs a name and a value".into()))?;
                let value = it
                    .next()
                    .ok_or_else(|| syntax(format!("`param {name}` is missing a value")))?;
                let v = parse_rational(value)
                    .ok_or_else(|| syntax(format!("bad numeric value `{value}`")))?;
                params.insert(name.to_string(), v);
            }
            "f" => {
                let (target, expr) = rest
                    .split_once('=')
                    .ok_or_else(|| syntax("`f <var> = <expr>` expected".into()))?;
                let target = target.trim().to_string();
                if vars.is_empty() {
                    return Err(syntax("`vars` must come before `f`".into()));
                }
                if !vars.contains(&target) {
                    return Err(syntax(format!("`{target}` is not a declared variable")));
                }
                let idx = vars.iter().position(|v| *v == target).unwrap();
                let p = parse_expr(expr.trim(), &vars, &params)?;
                f_map.insert(target, (idx, p));
            }
            "phi" => {
                let expr = rest
                    .strip_prefix('=')
                    .ok_or_else(|| syntax("`phi = <expr>` expected".into()))?;
                phi = Some(parse_expr(expr.trim(), &vars, &params)?);
            }
            "sigma" => {
                let expr = rest
                    .strip_prefix('=')
                    .ok_or_else(|| syntax("`sigma = <rows>` expected".into()))?;
                let mut rows = Vec::new();
                for row in expr.split(';') {
                    let mut entries = Vec::new();
                    for tok in row.split_whitespace() {
                        // Entries may reference parameters; read through the
                        // expression parser and require a constant.
                        let p = parse_expr(tok, &vars, &params)?;
                        if p.degree().unwrap_or(0) > 0 {
                            return Err(syntax(format!(
                                "sigma entry `{tok}` is not a constant"
                            )));
                        }
                        entries.push(p.constant_term());
                    }
                    if !entries.is_empty() {
                        rows.push(entries);
                    }
                }
                if rows.is_empty() {
                    return Err(syntax("sigma has no entries".into()));
                }
                sigma_rows = Some(rows);
            }
            "domain" => {
                let rest2 = rest.strip_prefix('g').map(str::trim).unwrap_or(rest);
                let expr = rest2
                    .strip_prefix('=')
                    .ok_or_else(|| syntax("`domain g = <expr>` expected".into()))?;
                domain = Some(parse_expr(expr.trim(), &vars, &params)?);
            }
            "zeta" => {
                let expr = rest
                    .strip_prefix('=')
                    .ok_or_else(|| syntax("`zeta = <expr>` expected".into()))?;
                zeta = Some(parse_expr(expr.trim(), &vars, &params)?);
            }
            other => {
                return Err(syntax(format!("unknown directive `{other}`")));
            }
        }
    }

    if vars.is_empty() {
        return Err(ProblemError::Validation {
            field: "vars".into(),
            msg: "no variables declared".into(),
        });
    }
    let mut f = Vec::with_capacity(vars.len());
    for v in &vars {
        match f_map.get(v) {
            Some((_, p)) => f.push(p.clone()),
            None => {
                return Err(ProblemError::Validation {
                    field: format!("f {v}"),
                    msg: "missing dynamics component".into(),
                })
            }
        }
    }
    let phi = phi.ok_or_else(|| ProblemError::Validation {
        field: "phi".into(),
        msg: "missing observable".into(),
    })?;
    let sigma = match sigma_rows {
        Some(rows) => {
            if rows.len() != vars.len() {
                return Err(ProblemError::Validation {
                    field: "sigma".into(),
                    msg: format!("{} rows for {} state variables", rows.len(), vars.len()),
                });
            }
            Some(
                DiffusionMatrix::from_sigma(rows).map_err(|e| ProblemError::Validation {
                    field: "sigma".into(),
                    msg: e.to_string(),
                })?,
            )
        }
        None => None,
    };
    if let Some(z) = &zeta {
        if zeta_matrix(z).is_none() {
            return Err(ProblemError::Validation {
                field: "zeta".into(),
                msg: "Z not positive definite".into(),
            });
        }
    }
    let spec = ProblemSpec {
        var_names: vars,
        f,
        phi,
        sigma,
        eps: None,
        domain,
        zeta,
        params,
    };
    spec.validate().map_err(|e| ProblemError::Validation {
        field: "problem".into(),
        msg: e.to_string(),
    })?;
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    const VDP: &str = "\
# van der Pol with physical forcing on the velocity only
vars x y
param mu 1.0
f x = y
f y = mu*(1 - x^2)*y - x
phi = x^2 + y^2
sigma = 0; 1
domain g = x^2 + y^2 - 1
zeta = x^2 - x*y + y^2
";

    #[test]
    fn parses_bundled_problem() {
        let spec = parse_problem(VDP).unwrap();
        assert_eq!(spec.var_names, vec!["x", "y"]);
        assert_eq!(spec.dim(), 2);
        let vars = spec.var_names.clone();
        let expected_f2 = crate::poly::parse("(1 - x^2)*y - x", &vars).unwrap();
        assert_eq!(spec.f[1], expected_f2);
        assert!(spec.sigma.is_some());
        let d = spec.sigma.as_ref().unwrap();
        assert_eq!(*d.entry(0, 0), Rational::from(0));
        assert_eq!(*d.entry(1, 1), Rational::from(1));
        assert!(spec.domain.is_some());
        assert!(spec.zeta.is_some());
    }

    #[test]
    fn rejects_rank_deficient_zeta() {
        let text = VDP.replace("zeta = x^2 - x*y + y^2", "zeta = x^2");
        match parse_problem(&text) {
            Err(ProblemError::Validation { field, msg }) => {
                assert_eq!(field, "zeta");
                assert!(msg.contains("not positive definite"));
            }
            other => panic!("expected zeta validation error, got {other:?}"),
        }
    }

    #[test]
    fn deterministic_spec_omits_noise() {
        let text: String = VDP
            .lines()
            .filter(|l| !l.starts_with("sigma"))
            .collect::<Vec<_>>()
            .join("\n");
        let spec = parse_problem(&text).unwrap();
        assert!(spec.sigma.is_none());
        // Stochastic programs refuse it.
        let err = crate::bounds::stoch_bound(
            &spec.with_eps(Rational::from((1, 10))),
            crate::bounds::Direction::Lower,
            &crate::bounds::BoundOptions::degree(4),
        );
        assert!(matches!(err, Err(crate::bounds::BoundsError::MissingNoise)));
    }

    #[test]
    fn error_lines_are_reported() {
        let text = "vars x y\nf x = y\nf y = qq*x\nphi = x^2\n";
        match parse_problem(text) {
            Err(ProblemError::Expr { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected expression error, got {other:?}"),
        }
        let text = "vars x y\nbogus = 1\n";
        match parse_problem(text) {
            Err(ProblemError::Syntax { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn missing_component_is_named() {
        let text = "vars x y\nf x = y\nphi = x^2\n";
        match parse_problem(text) {
            Err(ProblemError::Validation { field, .. }) => assert_eq!(field, "f y"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }
}
