//! Recursive-descent parser for the expression grammar.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := '-' term | product
//! product := power (('*' | '/') power)*
//! power   := primary ('^' exponent)?
//! exponent:= integer | '-' integer | '(' ('-' | '+')? integer ')'
//! primary := number | variable | parameter | func '(' expr ')' | '(' expr ')' | '-' power
//! ```
//!
//! Variables are `x1..xn`; functions are `sin cos exp ln` plus any tabulated
//! functions registered in the context.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use thiserror::Error;

use super::{Expr, Num, NumFn};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseErrorKind {
    #[error("unknown identifier `{0}`")]
    UnknownIdentifier(String),
    #[error("variable `{0}` outside x1..x{1}")]
    VariableOutOfRange(String, usize),
    #[error("exponent must be an integer literal")]
    NonIntegerExponent,
    #[error("{0}")]
    Syntax(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("column {column}: {kind}")]
pub struct ParseError {
    /// One-based character column of the offending token.
    pub column: usize,
    pub kind: ParseErrorKind,
}

/// What identifiers mean while parsing.
#[derive(Debug, Clone, Default)]
pub struct ParseContext {
    pub n: usize,
    pub params: BTreeSet<String>,
    pub numfns: BTreeMap<String, Arc<NumFn>>,
}

impl ParseContext {
    pub fn new<S: AsRef<str>>(n: usize, params: &[S]) -> ParseContext {
        ParseContext {
            n,
            params: params.iter().map(|p| p.as_ref().to_string()).collect(),
            numfns: BTreeMap::new(),
        }
    }

    pub fn with_numfn(mut self, f: Arc<NumFn>) -> ParseContext {
        self.numfns.insert(f.name().to_string(), f);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(String),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    End,
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let simple = match c {
            '+' => Some(Tok::Plus),
            '-' => Some(Tok::Minus),
            '*' => Some(Tok::Star),
            '/' => Some(Tok::Slash),
            '^' => Some(Tok::Caret),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            _ => None,
        };
        if let Some(t) = simple {
            out.push((t, col));
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let s: String = chars[start..i].iter().collect();
            if s.matches('.').count() > 1 {
                return Err(ParseError {
                    column: col,
                    kind: ParseErrorKind::Syntax(format!("malformed number `{s}`")),
                });
            }
            out.push((Tok::Num(s), col));
            continue;
        }
        if c.is_ascii_alphabetic() {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push((Tok::Ident(chars[start..i].iter().collect()), col));
            continue;
        }
        return Err(ParseError {
            column: col,
            kind: ParseErrorKind::Syntax(format!("unexpected character `{c}`")),
        });
    }
    out.push((Tok::End, chars.len() + 1));
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    ctx: &'a ParseContext,
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn column(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, kind: ParseErrorKind) -> ParseError {
        ParseError { column: self.column(), kind }
    }

    fn syntax(&self, msg: &str) -> ParseError {
        let found = match self.peek() {
            Tok::End => "end of input".to_string(),
            t => format!("{t:?}"),
        };
        self.error(ParseErrorKind::Syntax(format!("{msg}, found {found}")))
    }

    fn expect(&mut self, tok: Tok, msg: &str) -> Result<(), ParseError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.syntax(msg))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut terms = vec![self.term()?];
        loop {
            match self.peek() {
                Tok::Plus => {
                    self.bump();
                    terms.push(self.term()?);
                }
                Tok::Minus => {
                    self.bump();
                    let t = self.term()?;
                    terms.push(Expr::neg(t));
                }
                _ => break,
            }
        }
        Ok(if terms.len() == 1 { terms.pop().unwrap() } else { Expr::wrap(super::Node::Add(terms)) })
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            let t = self.term()?;
            return Ok(Expr::wrap(super::Node::Neg(t)));
        }
        self.product()
    }

    fn product(&mut self) -> Result<Expr, ParseError> {
        let mut factors = vec![self.power()?];
        loop {
            match self.peek() {
                Tok::Star => {
                    self.bump();
                    factors.push(self.power()?);
                }
                Tok::Slash => {
                    self.bump();
                    let den = self.power()?;
                    let num = collapse(std::mem::take(&mut factors));
                    factors.push(Expr::wrap(super::Node::Div(num, den)));
                }
                _ => break,
            }
        }
        Ok(collapse(factors))
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if *self.peek() != Tok::Caret {
            return Ok(base);
        }
        self.bump();
        let k = self.exponent()?;
        if *self.peek() == Tok::Caret {
            return Err(self.syntax("chained exponent; parenthesize the base"));
        }
        Ok(Expr::wrap(super::Node::Pow(base, k)))
    }

    fn exponent(&mut self) -> Result<i32, ParseError> {
        let parenthesized = *self.peek() == Tok::LParen;
        if parenthesized {
            self.bump();
        }
        let mut sign = 1i64;
        match self.peek() {
            Tok::Minus => {
                self.bump();
                sign = -1;
            }
            Tok::Plus if parenthesized => {
                self.bump();
            }
            _ => {}
        }
        let k = match self.peek().clone() {
            Tok::Num(s) if s.bytes().all(|b| b.is_ascii_digit()) => {
                let v: i64 = s.parse().map_err(|_| self.error(ParseErrorKind::NonIntegerExponent))?;
                let v = sign * v;
                i32::try_from(v).map_err(|_| self.error(ParseErrorKind::NonIntegerExponent))?
            }
            _ => return Err(self.error(ParseErrorKind::NonIntegerExponent)),
        };
        self.bump();
        if parenthesized {
            self.expect(Tok::RParen, "expected `)` after exponent")?;
        }
        Ok(k)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let column = self.column();
        match self.bump() {
            Tok::Num(s) => Num::parse_decimal(&s).map(Expr::constant).ok_or(ParseError {
                column,
                kind: ParseErrorKind::Syntax(format!("malformed number `{s}`")),
            }),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "expected `)`")?;
                Ok(e)
            }
            Tok::Minus => {
                let p = self.power()?;
                Ok(Expr::wrap(super::Node::Neg(p)))
            }
            Tok::Ident(name) => self.identifier(name, column),
            Tok::End => Err(ParseError {
                column,
                kind: ParseErrorKind::Syntax("unexpected end of input".into()),
            }),
            t => Err(ParseError {
                column,
                kind: ParseErrorKind::Syntax(format!("unexpected token {t:?}")),
            }),
        }
    }

    fn identifier(&mut self, name: String, column: usize) -> Result<Expr, ParseError> {
        let builtin: Option<fn(Expr) -> Expr> = match name.as_str() {
            "sin" => Some(Expr::sin),
            "cos" => Some(Expr::cos),
            "exp" => Some(Expr::exp),
            "ln" => Some(Expr::ln),
            _ => None,
        };
        if let Some(ctor) = builtin {
            let arg = self.call_argument(&name)?;
            return Ok(ctor(arg));
        }
        if let Some(f) = self.ctx.numfns.get(&name).cloned() {
            let arg = self.call_argument(&name)?;
            return Ok(Expr::numfn(f, arg));
        }
        if let Some(digits) = name.strip_prefix('x') {
            if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
                return match digits.parse::<usize>() {
                    Ok(i) if (1..=self.ctx.n).contains(&i) => Ok(Expr::var(i - 1)),
                    _ => Err(ParseError {
                        column,
                        kind: ParseErrorKind::VariableOutOfRange(name, self.ctx.n),
                    }),
                };
            }
        }
        if self.ctx.params.contains(&name) {
            return Ok(Expr::param(&name));
        }
        Err(ParseError { column, kind: ParseErrorKind::UnknownIdentifier(name) })
    }

    fn call_argument(&mut self, name: &str) -> Result<Expr, ParseError> {
        self.expect(Tok::LParen, &format!("expected `(` after `{name}`"))?;
        let arg = self.expr()?;
        self.expect(Tok::RParen, &format!("expected `)` closing `{name}(`"))?;
        Ok(arg)
    }
}

fn collapse(mut factors: Vec<Expr>) -> Expr {
    if factors.len() == 1 {
        factors.pop().unwrap()
    } else {
        Expr::wrap(super::Node::Mul(factors))
    }
}

/// Parse `text` into an expression tree (unsimplified).
pub fn parse_expr(text: &str, ctx: &ParseContext) -> Result<Expr, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0, ctx };
    if *p.peek() == Tok::End {
        return Err(p.error(ParseErrorKind::Syntax("empty expression".into())));
    }
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return Err(p.syntax("unexpected trailing input"));
    }
    Ok(e)
}
