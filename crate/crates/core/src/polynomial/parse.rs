//! Recursive-descent parser for the polynomial text grammar.
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary ('*' unary)*
//! unary  := ('+' | '-') unary | power
//! power  := atom ('^' integer)?
//! atom   := number | identifier | '(' expr ')'
//! ```

use std::sync::Arc;

use super::{PolyError, Polynomial, Result, VariableRegistry};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Caret,
    LParen,
    RParen,
}

fn err(position: usize, message: impl Into<String>) -> PolyError {
    PolyError::Parse { position, message: message.into() }
}

fn tokenize(text: &str) -> Result<Vec<(usize, Tok)>> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let tok = match c {
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'*' => Tok::Star,
            b'^' => Tok::Caret,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let lit = &text[start..i];
                let v: f64 = lit.parse().map_err(|_| err(start, format!("invalid number {lit:?}")))?;
                out.push((start, Tok::Num(v)));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((start, Tok::Ident(text[start..i].to_string())));
                continue;
            }
            _ => {
                let ch = text[start..].chars().next().unwrap_or('?');
                return Err(err(start, format!("unexpected character {ch:?}")));
            }
        };
        out.push((start, tok));
        i += 1;
    }
    Ok(out)
}

struct Parser<'a> {
    reg: &'a Arc<VariableRegistry>,
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn here(&self) -> usize {
        self.toks.get(self.pos).map(|(p, _)| *p).unwrap_or(self.end)
    }

    fn expr(&mut self) -> Result<Polynomial> {
        let mut acc = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.pos += 1;
                    acc = &acc + &self.term()?;
                }
                Some(Tok::Minus) => {
                    self.pos += 1;
                    acc = &acc - &self.term()?;
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<Polynomial> {
        let mut acc = self.unary()?;
        while let Some(Tok::Star) = self.peek() {
            self.pos += 1;
            acc = &acc * &self.unary()?;
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<Polynomial> {
        match self.peek() {
            Some(Tok::Minus) => {
                self.pos += 1;
                Ok(-&self.unary()?)
            }
            Some(Tok::Plus) => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Polynomial> {
        let base = self.atom()?;
        if let Some(Tok::Caret) = self.peek() {
            self.pos += 1;
            let at = self.here();
            match self.peek().cloned() {
                Some(Tok::Num(v)) if v.fract() == 0.0 && (0.0..=1000.0).contains(&v) => {
                    self.pos += 1;
                    Ok(base.pow(v as u32))
                }
                _ => Err(err(at, "exponent must be a non-negative integer literal")),
            }
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Polynomial> {
        let at = self.here();
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Polynomial::constant(self.reg, v))
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                let idx = self.reg.index_of(&name).ok_or_else(|| err(at, format!("unknown variable {name:?}")))?;
                Ok(Polynomial::var(self.reg, idx))
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let inner = self.expr()?;
                match self.peek() {
                    Some(Tok::RParen) => {
                        self.pos += 1;
                        Ok(inner)
                    }
                    _ => Err(err(self.here(), "expected ')'")),
                }
            }
            Some(t) => Err(err(at, format!("unexpected token {t:?}"))),
            None => Err(err(at, "unexpected end of input")),
        }
    }
}

/// Parses `text` into a polynomial over `reg`.
pub fn parse(reg: &Arc<VariableRegistry>, text: &str) -> Result<Polynomial> {
    let toks = tokenize(text)?;
    let mut p = Parser { reg, toks, pos: 0, end: text.len() };
    let out = p.expr()?;
    if p.pos != p.toks.len() {
        return Err(err(p.here(), "unexpected trailing input"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_and_unary_minus() {
        let r = VariableRegistry::standard(2, 1);
        let a = parse(&r, "-x1^2 + 2*(x2 - 1)*p1").unwrap();
        let b = parse(&r, "2*p1*x2 - 2*p1 - x1^2").unwrap();
        assert_eq!(a, b);
        assert_eq!(parse(&r, "3 - -x1").unwrap(), parse(&r, "x1 + 3").unwrap());
        assert_eq!(parse(&r, "(x1 + x2)^0").unwrap(), parse(&r, "1").unwrap());
    }

    #[test]
    fn literals() {
        let r = VariableRegistry::standard(1, 0);
        assert_eq!(parse(&r, "1e-3*x1").unwrap().coefficient(&crate::polynomial::Monomial::var(1, 0)), 1e-3);
        assert_eq!(parse(&r, ".5").unwrap().constant_term(), 0.5);
    }

    #[test]
    fn errors_carry_positions() {
        let r = VariableRegistry::standard(2, 0);
        assert_eq!(
            parse(&r, "x1 + y").unwrap_err(),
            PolyError::Parse { position: 5, message: "unknown variable \"y\"".into() }
        );
        assert!(matches!(parse(&r, "x1 ^ 1.5"), Err(PolyError::Parse { position: 5, .. })));
        assert!(matches!(parse(&r, "(x1 + 1"), Err(PolyError::Parse { position: 7, .. })));
        assert!(matches!(parse(&r, "x1 x2"), Err(PolyError::Parse { position: 3, .. })));
        assert!(matches!(parse(&r, "x1 # 2"), Err(PolyError::Parse { position: 3, .. })));
        assert!(matches!(parse(&r, ""), Err(PolyError::Parse { position: 0, .. })));
    }
}
