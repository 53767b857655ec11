//! Expression parser.
//!
//! Grammar: identifiers `[A-Za-z_][A-Za-z0-9_]*`; integer, decimal and
//! rational (`p/q`) literals; operators `+ - * / ^` with `^` right
//! associative and binding tightest, then unary minus, then `* /`, then
//! `+ -`; functions `sin cos tan exp log sqrt`; parentheses. Exponents must
//! fold to rational constants. Decimal literals are read exactly
//! (`0.25 -> 1/4`), so no floating point enters the symbolic layer.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Pow, Zero};

use crate::error::{Error, Result};
use crate::expr::{Expr, Func};
use crate::symbol::Symbol;

/// Identifier scope for parsing: name -> symbol.
#[derive(Debug, Clone, Default)]
pub struct SymbolScope {
    map: BTreeMap<String, Symbol>,
}

impl SymbolScope {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_symbols<'a>(symbols: impl IntoIterator<Item = &'a Symbol>) -> Self {
        let mut scope = Self::new();
        for s in symbols {
            scope.map.insert(s.name().to_string(), s.clone());
        }
        scope
    }

    pub fn insert(&mut self, s: &Symbol) -> Result<()> {
        if self.map.contains_key(s.name()) {
            return Err(Error::DuplicateIdentifier(s.name().to_string()));
        }
        self.map.insert(s.name().to_string(), s.clone());
        Ok(())
    }

    pub fn lookup(&self, name: &str) -> Option<&Symbol> {
        self.map.get(name)
    }

    pub fn symbols(&self) -> impl Iterator<Item = &Symbol> {
        self.map.values()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(BigRational),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
    col: usize,
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
            line: 1,
            col: 1,
        }
    }

    fn error(&self, msg: impl Into<String>) -> Error {
        Error::Syntax {
            line: self.line,
            col: self.col,
            msg: msg.into(),
        }
    }

    fn bump(&mut self) -> Option<u8> {
        let c = self.src.get(self.pos).copied()?;
        self.pos += 1;
        if c == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn tokens(mut self) -> Result<Vec<Spanned>> {
        let mut out = Vec::new();
        while let Some(c) = self.peek() {
            if c.is_ascii_whitespace() {
                self.bump();
                continue;
            }
            let (line, col) = (self.line, self.col);
            let tok = match c {
                b'+' => {
                    self.bump();
                    Tok::Plus
                }
                b'-' => {
                    self.bump();
                    Tok::Minus
                }
                b'*' => {
                    self.bump();
                    Tok::Star
                }
                b'/' => {
                    self.bump();
                    Tok::Slash
                }
                b'^' => {
                    self.bump();
                    Tok::Caret
                }
                b'(' => {
                    self.bump();
                    Tok::LParen
                }
                b')' => {
                    self.bump();
                    Tok::RParen
                }
                b'0'..=b'9' | b'.' => self.number()?,
                c if c.is_ascii_alphabetic() || c == b'_' => self.ident(),
                other => return Err(self.error(format!("unexpected character `{}`", other as char))),
            };
            out.push(Spanned { tok, line, col });
        }
        Ok(out)
    }

    fn number(&mut self) -> Result<Tok> {
        let mut int_part = String::new();
        let mut frac_part = String::new();
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            int_part.push(self.bump().expect("peeked") as char);
        }
        if self.peek() == Some(b'.') {
            self.bump();
            while matches!(self.peek(), Some(b'0'..=b'9')) {
                frac_part.push(self.bump().expect("peeked") as char);
            }
            if int_part.is_empty() && frac_part.is_empty() {
                return Err(self.error("malformed number"));
            }
        }
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(self.error("malformed number"));
        }
        let int_val: BigInt = if int_part.is_empty() {
            BigInt::zero()
        } else {
            int_part.parse().expect("digits")
        };
        let mut value = BigRational::from_integer(int_val);
        if !frac_part.is_empty() {
            let numer: BigInt = frac_part.parse().expect("digits");
            let denom = BigInt::from(10u32).pow(frac_part.len() as u32);
            value += BigRational::new(numer, denom);
        }
        Ok(Tok::Number(value))
    }

    fn ident(&mut self) -> Tok {
        let mut s = String::new();
        while let Some(c) = self.peek() {
            if c.is_ascii_alphanumeric() || c == b'_' {
                s.push(self.bump().expect("peeked") as char);
            } else {
                break;
            }
        }
        Tok::Ident(s)
    }
}

struct Parser<'a> {
    toks: Vec<Spanned>,
    pos: usize,
    scope: &'a SymbolScope,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|s| &s.tok)
    }

    fn bump(&mut self) -> Option<Spanned> {
        let t = self.toks.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn error_at(&self, msg: impl Into<String>) -> Error {
        let (line, col) = self
            .toks
            .get(self.pos.min(self.toks.len().saturating_sub(1)))
            .map(|s| (s.line, s.col))
            .unwrap_or((1, 1));
        Error::Syntax {
            line,
            col,
            msg: msg.into(),
        }
    }

    /// sum := product (('+'|'-') product)*
    fn sum(&mut self) -> Result<Expr> {
        let mut terms = vec![self.product()?];
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.bump();
                    terms.push(self.product()?);
                }
                Some(Tok::Minus) => {
                    self.bump();
                    terms.push(Expr::neg(self.product()?));
                }
                _ => break,
            }
        }
        Ok(Expr::add(terms))
    }

    /// product := unary (('*'|'/') unary)*
    fn product(&mut self) -> Result<Expr> {
        let mut acc = self.unary()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.bump();
                    acc = Expr::mul2(acc, self.unary()?);
                }
                Some(Tok::Slash) => {
                    self.bump();
                    acc = Expr::div(acc, self.unary()?);
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    /// unary := '-' unary | power
    fn unary(&mut self) -> Result<Expr> {
        if self.peek() == Some(&Tok::Minus) {
            self.bump();
            return Ok(Expr::neg(self.unary()?));
        }
        self.power()
    }

    /// power := atom ('^' exponent)?   (right associative, binds tighter
    /// than unary minus; an exponent may carry its own sign)
    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.peek() == Some(&Tok::Caret) {
            self.bump();
            let exp_expr = self.exponent_operand()?;
            let exp = exp_expr
                .as_rational()
                .cloned()
                .ok_or_else(|| self.error_at("exponent must be a rational constant"))?;
            return Ok(Expr::pow(base, exp));
        }
        Ok(base)
    }

    fn exponent_operand(&mut self) -> Result<Expr> {
        if self.peek() == Some(&Tok::Minus) {
            self.bump();
            return Ok(Expr::neg(self.exponent_operand()?));
        }
        self.power()
    }

    fn atom(&mut self) -> Result<Expr> {
        let Some(spanned) = self.bump() else {
            return Err(self.error_at("unexpected end of input"));
        };
        match spanned.tok {
            Tok::Number(r) => Ok(Expr::Num(r)),
            Tok::Ident(name) => {
                if self.peek() == Some(&Tok::LParen) {
                    let func = match name.as_str() {
                        "sin" => Some(Func::Sin),
                        "cos" => Some(Func::Cos),
                        "tan" => Some(Func::Tan),
                        "exp" => Some(Func::Exp),
                        "log" => Some(Func::Log),
                        "sqrt" => None,
                        _ => {
                            return Err(Error::Syntax {
                                line: spanned.line,
                                col: spanned.col,
                                msg: format!("unknown function `{name}`"),
                            })
                        }
                    };
                    self.bump(); // (
                    let arg = self.sum()?;
                    if self.bump().map(|s| s.tok) != Some(Tok::RParen) {
                        return Err(self.error_at("expected `)`"));
                    }
                    return Ok(match func {
                        Some(f) => Expr::fun(f, arg),
                        None => Expr::sqrt(arg),
                    });
                }
                match self.scope.lookup(&name) {
                    Some(s) => Ok(Expr::sym(s)),
                    None => Err(Error::UnknownIdentifier(name)),
                }
            }
            Tok::LParen => {
                let inner = self.sum()?;
                if self.bump().map(|s| s.tok) != Some(Tok::RParen) {
                    return Err(self.error_at("expected `)`"));
                }
                Ok(inner)
            }
            other => Err(Error::Syntax {
                line: spanned.line,
                col: spanned.col,
                msg: format!("unexpected token {other:?}"),
            }),
        }
    }
}

/// Parse `text` into a canonical expression. All identifiers must resolve
/// in `scope`; parse-print-parse is a fixpoint.
pub fn parse_expr(text: &str, scope: &SymbolScope) -> Result<Expr> {
    let toks = Lexer::new(text).tokens()?;
    if toks.is_empty() {
        return Err(Error::Syntax {
            line: 1,
            col: 1,
            msg: "empty expression".to_string(),
        });
    }
    let mut p = Parser {
        toks,
        pos: 0,
        scope,
    };
    let e = p.sum()?;
    if p.pos != p.toks.len() {
        return Err(p.error_at("trailing input"));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbol::SymbolKind;

    fn scope(names: &[&str]) -> SymbolScope {
        let syms: Vec<Symbol> = names
            .iter()
            .map(|n| Symbol::new(*n, SymbolKind::State))
            .collect();
        SymbolScope::from_symbols(&syms)
    }

    #[test]
    fn parses_dynamics_terms() {
        let sc = scope(&["x3", "x4", "u1", "x6", "x7"]);
        let e = parse_expr("x3 + x4*u1", &sc).unwrap();
        // canonical factor order is alphabetical
        assert_eq!(format!("{e}"), "x3 + u1*x4");
        let e = parse_expr("x4*x7*u1 - x6", &sc).unwrap();
        assert_eq!(e.free_symbols().len(), 4);
    }

    #[test]
    fn zero_literal() {
        let sc = scope(&[]);
        assert!(parse_expr("0", &sc).unwrap().is_zero());
    }

    #[test]
    fn precedence_and_unary_minus() {
        let sc = scope(&["x", "y"]);
        // -x^2 == -(x^2)
        let e = parse_expr("-x^2", &sc).unwrap();
        assert_eq!(e, Expr::neg(Expr::powi(parse_expr("x", &sc).unwrap(), 2)));
        // 2^-2 allowed in exponent position
        let e = parse_expr("x^-2", &sc).unwrap();
        assert_eq!(e, Expr::powi(parse_expr("x", &sc).unwrap(), -2));
        // right associativity: x^2^3 = x^(2^3)
        let e = parse_expr("x^2^3", &sc).unwrap();
        assert_eq!(e, Expr::powi(parse_expr("x", &sc).unwrap(), 8));
    }

    #[test]
    fn decimals_are_exact() {
        let sc = scope(&[]);
        let e = parse_expr("0.25", &sc).unwrap();
        assert_eq!(e, Expr::rat(1, 4));
    }

    #[test]
    fn unknown_identifier_rejected() {
        let sc = scope(&["x"]);
        assert!(matches!(
            parse_expr("x + q", &sc),
            Err(Error::UnknownIdentifier(_))
        ));
    }

    #[test]
    fn syntax_error_has_position() {
        let sc = scope(&["x"]);
        match parse_expr("x + ", &sc) {
            Err(Error::Syntax { .. }) => {}
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn parse_print_parse_fixpoint() {
        let sc = scope(&["x1", "x2", "u1"]);
        for text in [
            "x1 + x2*u1",
            "(x1 + 1)/(x2 - 2)",
            "sin(x1)^2 + cos(x1)^2",
            "sqrt(x1 + u1)",
            "-x1/2 + 3/4*x2^3",
            "exp(x1)*log(x2)",
        ] {
            let e1 = parse_expr(text, &sc).unwrap();
            let printed = format!("{e1}");
            let e2 = parse_expr(&printed, &sc).unwrap();
            assert_eq!(e1, e2, "fixpoint failed for `{text}` -> `{printed}`");
        }
    }
}
