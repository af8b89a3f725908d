//! Recursive-descent parser for polynomial expressions.
//!
//! Grammar (whitespace insignificant):
//!
//! ```text
//! expr   := ['-'] term (('+'|'-') term)*
//! term   := factor ('*' factor)*
//! factor := base ('^' uint)?
//! base   := ident | number | '(' expr ')'
//! ```
//!
//! Numbers are decimal literals (`0.25`, `1e-3`) or explicit rationals
//! (`3/4`). Identifiers are either declared variables or named constants
//! supplied by the caller.

use std::collections::BTreeMap;

use rug::Rational;

use super::{PolyError, RatPoly};
use crate::scalar::parse_rational;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(Rational),
    Plus,
    Minus,
    Star,
    Caret,
    LParen,
    RParen,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    /// Returns the next token with its starting position.
    fn next(&mut self) -> Result<Option<(usize, Tok)>, PolyError> {
        self.skip_ws();
        if self.pos >= self.src.len() {
            return Ok(None);
        }
        let start = self.pos;
        let c = self.src[self.pos];
        let tok = match c {
            b'+' => {
                self.pos += 1;
                Tok::Plus
            }
            b'-' => {
                self.pos += 1;
                Tok::Minus
            }
            b'*' => {
                self.pos += 1;
                Tok::Star
            }
            b'^' => {
                self.pos += 1;
                Tok::Caret
            }
            b'(' => {
                self.pos += 1;
                Tok::LParen
            }
            b')' => {
                self.pos += 1;
                Tok::RParen
            }
            c if c.is_ascii_digit() || c == b'.' => {
                let lit = self.lex_number(start)?;
                Tok::Number(lit)
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while self.pos < self.src.len()
                    && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                Tok::Ident(String::from_utf8_lossy(&self.src[start..self.pos]).into_owned())
            }
            other => {
                return Err(PolyError::Parse {
                    pos: start,
                    msg: format!("unexpected character `{}`", other as char),
                })
            }
        };
        Ok(Some((start, tok)))
    }

    /// Lexes a decimal literal, optionally followed directly by `/digits`
    /// forming an exact rational.
    fn lex_number(&mut self, start: usize) -> Result<Rational, PolyError> {
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_digit() || self.src[self.pos] == b'.')
        {
            self.pos += 1;
        }
        // Exponent part: e or E followed by optional sign and digits.
        if self.pos < self.src.len() && (self.src[self.pos] == b'e' || self.src[self.pos] == b'E') {
            let mut look = self.pos + 1;
            if look < self.src.len() && (self.src[look] == b'+' || self.src[look] == b'-') {
                look += 1;
            }
            if look < self.src.len() && self.src[look].is_ascii_digit() {
                self.pos = look;
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            }
        }
        // `a/b` rational: the slash must directly follow the digits.
        if self.pos < self.src.len()
            && self.src[self.pos] == b'/'
            && self.pos + 1 < self.src.len()
            && self.src[self.pos + 1].is_ascii_digit()
        {
            self.pos += 1;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii slice");
        parse_rational(text).ok_or_else(|| PolyError::Parse {
            pos: start,
            msg: format!("invalid number literal `{text}`"),
        })
    }
}

struct Parser<'a> {
    toks: Vec<(usize, Tok)>,
    idx: usize,
    vars: &'a [String],
    params: &'a BTreeMap<String, Rational>,
    end: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&(usize, Tok)> {
        self.toks.get(self.idx)
    }

    fn advance(&mut self) -> Option<(usize, Tok)> {
        let t = self.toks.get(self.idx).cloned();
        if t.is_some() {
            self.idx += 1;
        }
        t
    }

    fn here(&self) -> usize {
        self.peek().map(|(p, _)| *p).unwrap_or(self.end)
    }

    fn dim(&self) -> usize {
        self.vars.len()
    }

    fn expr(&mut self) -> Result<RatPoly, PolyError> {
        let mut negate_first = false;
        if let Some((_, Tok::Minus)) = self.peek() {
            self.advance();
            negate_first = true;
        }
        let mut acc = self.term()?;
        if negate_first {
            acc = acc.neg();
        }
        while let Some((_, tok)) = self.peek() {
            match tok {
                Tok::Plus => {
                    self.advance();
                    let rhs = self.term()?;
                    acc = acc.add(&rhs);
                }
                Tok::Minus => {
                    self.advance();
                    let rhs = self.term()?;
                    acc = acc.sub(&rhs);
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn term(&mut self) -> Result<RatPoly, PolyError> {
        let mut acc = self.factor()?;
        while let Some((_, Tok::Star)) = self.peek() {
            self.advance();
            let rhs = self.factor()?;
            acc = acc.mul(&rhs);
        }
        Ok(acc)
    }

    fn factor(&mut self) -> Result<RatPoly, PolyError> {
        let base = self.base()?;
        if let Some((_, Tok::Caret)) = self.peek() {
            self.advance();
            let pos = self.here();
            match self.advance() {
                Some((_, Tok::Number(r))) => {
                    if r.denom() != &1u32 || r < 0 {
                        return Err(PolyError::BadExponent { pos });
                    }
                    let e = r.numer().to_u32().ok_or(PolyError::BadExponent { pos })?;
                    Ok(base.pow(e))
                }
                Some((_, Tok::Minus)) => Err(PolyError::BadExponent { pos }),
                _ => Err(PolyError::Parse {
                    pos,
                    msg: "expected integer exponent after `^`".into(),
                }),
            }
        } else {
            Ok(base)
        }
    }

    fn base(&mut self) -> Result<RatPoly, PolyError> {
        let pos = self.here();
        match self.advance() {
            Some((_, Tok::Number(r))) => Ok(RatPoly::constant(self.dim(), r)),
            Some((p, Tok::Ident(name))) => {
                if let Some(i) = self.vars.iter().position(|v| *v == name) {
                    Ok(RatPoly::var(self.dim(), i))
                } else if let Some(val) = self.params.get(&name) {
                    Ok(RatPoly::constant(self.dim(), val.clone()))
                } else {
                    Err(PolyError::UnknownIdentifier { name, pos: p })
                }
            }
            Some((_, Tok::LParen)) => {
                let inner = self.expr()?;
                match self.advance() {
                    Some((_, Tok::RParen)) => Ok(inner),
                    other => Err(PolyError::Parse {
                        pos: other.map(|(p, _)| p).unwrap_or(self.end),
                        msg: "expected `)`".into(),
                    }),
                }
            }
            Some((p, tok)) => Err(PolyError::Parse {
                pos: p,
                msg: format!("unexpected token `{tok:?}`"),
            }),
            None => Err(PolyError::Parse {
                pos,
                msg: "unexpected end of expression".into(),
            }),
        }
    }
}

/// Parses `text` over the ordered variable list `vars`.
pub fn parse(text: &str, vars: &[String]) -> Result<RatPoly, PolyError> {
    parse_with_params(text, vars, &BTreeMap::new())
}

/// Parses `text`, resolving identifiers against `vars` first and then the
/// named constants in `params`.
pub fn parse_with_params(
    text: &str,
    vars: &[String],
    params: &BTreeMap<String, Rational>,
) -> Result<RatPoly, PolyError> {
    if vars.is_empty() {
        return Err(PolyError::ZeroDimension);
    }
    let mut lexer = Lexer::new(text);
    let mut toks = Vec::new();
    while let Some(t) = lexer.next()? {
        toks.push(t);
    }
    let mut parser = Parser {
        toks,
        idx: 0,
        vars,
        params,
        end: text.len(),
    };
    let poly = parser.expr()?;
    if let Some((p, tok)) = parser.peek() {
        return Err(PolyError::Parse {
            pos: *p,
            msg: format!("trailing input starting with `{tok:?}`"),
        });
    }
    Ok(poly)
}
