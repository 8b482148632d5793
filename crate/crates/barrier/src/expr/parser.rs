//! Recursive-descent parser.
//!
//! expr  := term (('+'|'-') term)*
//! term  := unary (('*'|'/') unary)*
//! unary := '-' unary | power
//! power := atom ('^' unary)?          (right-associative)
//! atom  := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'

use super::lexer::{tokenize, Tok, Token};
use super::{BinOp, ExprError, Fun, Node};

pub fn parse(text: &str, variables: &[&str]) -> Result<Node, ExprError> {
    let tokens = tokenize(text)?;
    let mut p = Parser {
        tokens,
        pos: 0,
        end: text.len(),
        variables,
    };
    let node = p.expr()?;
    if p.pos < p.tokens.len() {
        return Err(ExprError::Syntax {
            offset: p.tokens[p.pos].offset,
            message: "unexpected trailing input".to_string(),
        });
    }
    Ok(node)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    end: usize,
    variables: &'a [&'a str],
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|t| &t.tok)
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map(|t| t.offset).unwrap_or(self.end)
    }

    fn bump(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ExprError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(ExprError::Syntax {
                offset: self.offset(),
                message: format!("expected {what}"),
            })
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut node = self.term()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.term()?;
            node = Node::Bin(op, Box::new(node), Box::new(rhs));
        }
        Ok(node)
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut node = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Star) => BinOp::Mul,
                Some(Tok::Slash) => BinOp::Div,
                _ => break,
            };
            self.pos += 1;
            let rhs = self.unary()?;
            node = Node::Bin(op, Box::new(node), Box::new(rhs));
        }
        Ok(node)
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if self.peek() == Some(&Tok::Minus) {
            self.pos += 1;
            let inner = self.unary()?;
            // fold literal negation so printing round-trips structurally
            return Ok(match inner {
                Node::Num(v) => Node::Num(-v),
                other => Node::Neg(Box::new(other)),
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if self.peek() == Some(&Tok::Caret) {
            self.pos += 1;
            let exponent = self.unary()?;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        let offset = self.offset();
        match self.bump().map(|t| t.tok) {
            Some(Tok::Num(v)) => Ok(Node::Num(v)),
            Some(Tok::LParen) => {
                let node = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(node)
            }
            Some(Tok::Ident(name)) => self.ident(name, offset),
            Some(other) => Err(ExprError::Syntax {
                offset,
                message: format!("unexpected token `{other:?}`"),
            }),
            None => Err(ExprError::Syntax {
                offset,
                message: "unexpected end of input".to_string(),
            }),
        }
    }

    fn ident(&mut self, name: String, offset: usize) -> Result<Node, ExprError> {
        if let Some(fun) = Fun::from_name(&name) {
            self.expect(Tok::LParen, "`(` after function name")?;
            let mut args = vec![self.expr()?];
            while self.peek() == Some(&Tok::Comma) {
                self.pos += 1;
                args.push(self.expr()?);
            }
            self.expect(Tok::RParen, "`)`")?;
            let arity_ok = match fun {
                Fun::Min | Fun::Max => args.len() == 2,
                Fun::Norm => !args.is_empty(),
                _ => args.len() == 1,
            };
            if !arity_ok {
                return Err(ExprError::Syntax {
                    offset,
                    message: format!("wrong number of arguments for {}", fun.name()),
                });
            }
            return Ok(Node::Fun(fun, args));
        }
        match name.as_str() {
            "pi" => Ok(Node::Num(std::f64::consts::PI)),
            "e" => Ok(Node::Num(std::f64::consts::E)),
            _ => match self.variables.iter().position(|v| *v == name) {
                Some(i) => Ok(Node::Var(i)),
                None => Err(ExprError::UnknownVariable { name, offset }),
            },
        }
    }
}
