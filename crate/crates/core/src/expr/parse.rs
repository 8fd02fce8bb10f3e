//! Infix parser for the textual expression format.
//!
//! Grammar (left-associative, `*` `/` bind tighter than `+` `-`):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := factor (('*' | '/') factor)*
//! factor  := '-' factor | primary
//! primary := number | 'x'<digits> | ('sin' | 'exp') '(' expr ')' | '(' expr ')'
//! ```
//!
//! Numbers are decimal with optional fraction and exponent (`2`, `0.5`,
//! `1.25e-3`). Variables are one-indexed (`x1`, `x2`, ...).

use super::{BinaryOp, Expr, UnaryOp};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Number(f64),
    Var(usize),
    Func(UnaryOp),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
    Eof,
}

struct Lexer<'a> {
    text: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(text: &'a str) -> Self {
        Lexer {
            text: text.as_bytes(),
            pos: 0,
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.text.len() && self.text[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn next(&mut self) -> Result<(Token, usize)> {
        self.skip_ws();
        let start = self.pos;
        if self.pos >= self.text.len() {
            return Ok((Token::Eof, start));
        }
        let c = self.text[self.pos];
        let single = match c {
            b'+' => Some(Token::Plus),
            b'-' => Some(Token::Minus),
            b'*' => Some(Token::Star),
            b'/' => Some(Token::Slash),
            b'(' => Some(Token::LParen),
            b')' => Some(Token::RParen),
            _ => None,
        };
        if let Some(tok) = single {
            self.pos += 1;
            return Ok((tok, start));
        }
        if c.is_ascii_digit() || c == b'.' {
            return self.lex_number(start);
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            return self.lex_ident(start);
        }
        Err(Error::Syntax {
            message: format!("unexpected character '{}'", c as char),
            offset: start,
        })
    }

    fn lex_number(&mut self, start: usize) -> Result<(Token, usize)> {
        while self.pos < self.text.len()
            && (self.text[self.pos].is_ascii_digit() || self.text[self.pos] == b'.')
        {
            self.pos += 1;
        }
        if self.pos < self.text.len() && matches!(self.text[self.pos], b'e' | b'E') {
            let mut probe = self.pos + 1;
            if probe < self.text.len() && matches!(self.text[probe], b'+' | b'-') {
                probe += 1;
            }
            if probe < self.text.len() && self.text[probe].is_ascii_digit() {
                self.pos = probe;
                while self.pos < self.text.len() && self.text[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            }
        }
        let slice = std::str::from_utf8(&self.text[start..self.pos]).expect("ascii");
        match slice.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok((Token::Number(v), start)),
            _ => Err(Error::Syntax {
                message: format!("invalid number '{}'", slice),
                offset: start,
            }),
        }
    }

    fn lex_ident(&mut self, start: usize) -> Result<(Token, usize)> {
        while self.pos < self.text.len()
            && (self.text[self.pos].is_ascii_alphanumeric() || self.text[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.text[start..self.pos]).expect("ascii");
        match name {
            "sin" => Ok((Token::Func(UnaryOp::Sin), start)),
            "exp" => Ok((Token::Func(UnaryOp::Exp), start)),
            _ => {
                if let Some(index) = name.strip_prefix('x').and_then(|s| s.parse::<usize>().ok()) {
                    if index >= 1 {
                        return Ok((Token::Var(index - 1), start));
                    }
                }
                Err(Error::Syntax {
                    message: format!("unknown identifier '{}' (expected x1.., sin, exp)", name),
                    offset: start,
                })
            }
        }
    }
}

struct Parser<'a> {
    lexer: Lexer<'a>,
    current: Token,
    offset: usize,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Result<Self> {
        let mut lexer = Lexer::new(text);
        let (current, offset) = lexer.next()?;
        Ok(Parser {
            lexer,
            current,
            offset,
        })
    }

    fn advance(&mut self) -> Result<()> {
        let (tok, off) = self.lexer.next()?;
        self.current = tok;
        self.offset = off;
        Ok(())
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.current {
                Token::Plus => BinaryOp::Add,
                Token::Minus => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.advance()?;
            let rhs = self.term()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.current {
                Token::Star => BinaryOp::Mul,
                Token::Slash => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.advance()?;
            let rhs = self.factor()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn factor(&mut self) -> Result<Expr> {
        if self.current == Token::Minus {
            self.advance()?;
            let inner = self.factor()?;
            // A negated literal stays a single constant node; anything else
            // desugars to 0 - e.
            return Ok(match inner {
                Expr::Const(c) => Expr::Const(-c),
                other => Expr::binary(BinaryOp::Sub, Expr::Const(0.0), other),
            });
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr> {
        match self.current.clone() {
            Token::Number(v) => {
                self.advance()?;
                Ok(Expr::Const(v))
            }
            Token::Var(i) => {
                self.advance()?;
                Ok(Expr::Var(i))
            }
            Token::Func(op) => {
                self.advance()?;
                self.expect(Token::LParen, "'(' after function name")?;
                let arg = self.expr()?;
                self.expect(Token::RParen, "')'")?;
                Ok(Expr::unary(op, arg))
            }
            Token::LParen => {
                self.advance()?;
                let inner = self.expr()?;
                self.expect(Token::RParen, "')'")?;
                Ok(inner)
            }
            other => Err(Error::Syntax {
                message: format!("expected an operand, found {:?}", other),
                offset: self.offset,
            }),
        }
    }

    fn expect(&mut self, tok: Token, what: &str) -> Result<()> {
        if self.current == tok {
            self.advance()
        } else {
            Err(Error::Syntax {
                message: format!("expected {}", what),
                offset: self.offset,
            })
        }
    }
}

/// Parses the textual expression format; see the module docs for the grammar.
pub fn parse(text: &str) -> Result<Expr> {
    let mut parser = Parser::new(text)?;
    let expr = parser.expr()?;
    if parser.current != Token::Eof {
        return Err(Error::Syntax {
            message: format!("unexpected trailing {:?}", parser.current),
            offset: parser.offset,
        });
    }
    Ok(expr)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_quadric() {
        let t = parse("x1*x1 + 2*x2*x2").unwrap();
        assert_eq!(t.complexity(), 9);
        assert_eq!(t.eval(&[1.0, 1.0]), Some(3.0));
    }

    #[test]
    fn round_trips() {
        for text in [
            "x1*x1 + 2*x2*x2",
            "sin(x2 + x3)",
            "exp(x1 - x2) - 3.125*x3",
            "x1*(x2 + x3)*(-0.5)",
            "x1 + (x2 - x3)",
            "x1 - (x2 - x3)",
            "x1/(x2*x3)",
            "1.25e-3 + x1",
        ] {
            let t = parse(text).unwrap();
            let printed = t.to_text();
            let back = parse(&printed).unwrap();
            assert_eq!(t, back, "{} -> {}", text, printed);
        }
    }

    #[test]
    fn incomplete_input_reports_offset() {
        let err = parse("x1 +").unwrap_err();
        match err {
            Error::Syntax { offset, .. } => assert_eq!(offset, 4),
            other => panic!("unexpected error {:?}", other),
        }
    }

    #[test]
    fn rejects_unknown_identifier() {
        assert!(parse("x0 + 1").is_err());
        assert!(parse("cos(x1)").is_err());
    }

    #[test]
    fn trailing_garbage_rejected() {
        assert!(parse("x1 x2").is_err());
        assert!(parse("(x1").is_err());
    }

    #[test]
    fn unary_minus() {
        assert_eq!(parse("-2.5").unwrap(), Expr::Const(-2.5));
        let t = parse("-x1").unwrap();
        assert_eq!(t.eval(&[3.0]), Some(-3.0));
    }
}
