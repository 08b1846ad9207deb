//! Recursive-descent parser.
//!
//! ```text
//! expr   := term (('+'|'-') term)*
//! term   := factor (('*'|'/') factor)*
//! factor := '-' factor | base ('^' factor)?
//! base   := NUMBER | IDENT | IDENT '(' expr ')' | '(' expr ')'
//! ```
//!
//! Unary minus sits below `^`, so `-x^2` is `-(x^2)` while `x^-2` is `x^(-2)`.

use thiserror::Error;

use super::{BinaryOp, Expr, Func, Node};
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("syntax error at offset {offset}: expected {expected}")]
pub struct ParseError {
    /// 0-based character offset into the input.
    pub offset: usize,
    pub expected: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
    End,
}

struct Lexer {
    chars: Vec<char>,
    pos: usize,
}

impl Lexer {
    fn skip_ws(&mut self) {
        while self.pos < self.chars.len() && self.chars[self.pos].is_whitespace() {
            self.pos += 1;
        }
    }

    /// Returns the next token and its starting offset.
    fn next(&mut self) -> Result<(Tok, usize), ParseError> {
        self.skip_ws();
        let start = self.pos;
        let Some(&c) = self.chars.get(self.pos) else {
            return Ok((Tok::End, start));
        };
        if c.is_ascii_digit() || c == '.' {
            return self.number(start).map(|n| (Tok::Num(n), start));
        }
        if c.is_ascii_alphabetic() || c == '_' {
            while self
                .chars
                .get(self.pos)
                .is_some_and(|c| c.is_ascii_alphanumeric() || *c == '_')
            {
                self.pos += 1;
            }
            let ident: String = self.chars[start..self.pos].iter().collect();
            return Ok((Tok::Ident(ident), start));
        }
        if "+-*/^()".contains(c) {
            self.pos += 1;
            return Ok((Tok::Sym(c), start));
        }
        Err(ParseError {
            offset: start,
            expected: format!("number, identifier, operator or parenthesis, found `{c}`"),
        })
    }

    fn number(&mut self, start: usize) -> Result<f64, ParseError> {
        let digits = |lx: &mut Lexer| {
            let from = lx.pos;
            while lx.chars.get(lx.pos).is_some_and(|c| c.is_ascii_digit()) {
                lx.pos += 1;
            }
            lx.pos - from
        };
        let mut n = digits(self);
        if self.chars.get(self.pos) == Some(&'.') {
            self.pos += 1;
            n += digits(self);
        }
        if n == 0 {
            return Err(ParseError {
                offset: start,
                expected: "digits in number".into(),
            });
        }
        // exponent only when followed by digits, so `2e` stays an error downstream
        if matches!(self.chars.get(self.pos), Some('e' | 'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.chars.get(self.pos), Some('+' | '-')) {
                self.pos += 1;
            }
            if digits(self) == 0 {
                self.pos = save;
            }
        }
        let text: String = self.chars[start..self.pos].iter().collect();
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(ParseError {
                offset: start,
                expected: "finite number".into(),
            }),
        }
    }
}

struct Parser {
    lexer: Lexer,
    tok: Tok,
    at: usize,
}

impl Parser {
    fn bump(&mut self) -> Result<(), ParseError> {
        let (tok, at) = self.lexer.next()?;
        self.tok = tok;
        self.at = at;
        Ok(())
    }

    fn fail<T>(&self, expected: &str) -> Result<T, ParseError> {
        let found = match &self.tok {
            Tok::Num(n) => format!("number {n}"),
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Sym(c) => format!("`{c}`"),
            Tok::End => "end of input".to_string(),
        };
        Err(ParseError {
            offset: self.at,
            expected: format!("{expected}, found {found}"),
        })
    }

    fn expect_sym(&mut self, c: char) -> Result<(), ParseError> {
        if self.tok == Tok::Sym(c) {
            self.bump()
        } else {
            self.fail(&format!("`{c}`"))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.tok {
                Tok::Sym('+') => BinaryOp::Add,
                Tok::Sym('-') => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump()?;
            let rhs = self.term()?;
            lhs = raw_binary(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.tok {
                Tok::Sym('*') => BinaryOp::Mul,
                Tok::Sym('/') => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.bump()?;
            let rhs = self.factor()?;
            lhs = raw_binary(op, lhs, rhs);
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        if self.tok == Tok::Sym('-') {
            self.bump()?;
            let inner = self.factor()?;
            return Ok(Expr(Arc::new(Node::Neg(inner))));
        }
        let base = self.base()?;
        if self.tok == Tok::Sym('^') {
            self.bump()?;
            let exponent = self.factor()?;
            return Ok(raw_binary(BinaryOp::Pow, base, exponent));
        }
        Ok(base)
    }

    fn base(&mut self) -> Result<Expr, ParseError> {
        match self.tok.clone() {
            Tok::Num(n) => {
                self.bump()?;
                Ok(Expr::constant(n))
            }
            Tok::Ident(name) => {
                let name_at = self.at;
                self.bump()?;
                if self.tok == Tok::Sym('(') {
                    let Some(func) = Func::from_name(&name) else {
                        return Err(ParseError {
                            offset: name_at,
                            expected: format!("known function name, found `{name}`"),
                        });
                    };
                    self.bump()?;
                    let arg = self.expr()?;
                    self.expect_sym(')')?;
                    Ok(Expr(Arc::new(Node::Call(func, arg))))
                } else {
                    Ok(Expr::var(&name))
                }
            }
            Tok::Sym('(') => {
                self.bump()?;
                let inner = self.expr()?;
                self.expect_sym(')')?;
                Ok(inner)
            }
            _ => self.fail("number, identifier or `(`"),
        }
    }
}

// The parser keeps the literal tree: no folding, so printing and re-parsing
// reproduces the same structure.
fn raw_binary(op: BinaryOp, a: Expr, b: Expr) -> Expr {
    Expr(Arc::new(Node::Binary(op, a, b)))
}

/// Parses a formula. Whitespace is ignored.
pub fn parse(text: &str) -> Result<Expr, ParseError> {
    let mut p = Parser {
        lexer: Lexer {
            chars: text.chars().collect(),
            pos: 0,
        },
        tok: Tok::End,
        at: 0,
    };
    p.bump()?;
    let e = p.expr()?;
    if p.tok != Tok::End {
        return p.fail("operator or end of input");
    }
    Ok(e)
}
