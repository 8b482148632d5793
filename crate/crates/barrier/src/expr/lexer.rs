//! Tokenizer tracking byte offsets for error reporting.

use super::ExprError;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub offset: usize,
}

pub fn tokenize(text: &str) -> Result<Vec<Token>, ExprError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        let offset = i;
        match b {
            b' ' | b'\t' | b'\r' | b'\n' => {
                i += 1;
                continue;
            }
            b'+' => out.push(Token { tok: Tok::Plus, offset }),
            b'-' => out.push(Token { tok: Tok::Minus, offset }),
            b'*' => out.push(Token { tok: Tok::Star, offset }),
            b'/' => out.push(Token { tok: Tok::Slash, offset }),
            b'^' => out.push(Token { tok: Tok::Caret, offset }),
            b'(' => out.push(Token { tok: Tok::LParen, offset }),
            b')' => out.push(Token { tok: Tok::RParen, offset }),
            b',' => out.push(Token { tok: Tok::Comma, offset }),
            b'0'..=b'9' | b'.' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let s = &text[start..i];
                let v: f64 = s.parse().map_err(|_| ExprError::Syntax {
                    offset: start,
                    message: format!("invalid number `{s}`"),
                })?;
                out.push(Token { tok: Tok::Num(v), offset: start });
                continue;
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_')
                {
                    i += 1;
                }
                out.push(Token {
                    tok: Tok::Ident(text[start..i].to_string()),
                    offset: start,
                });
                continue;
            }
            _ => {
                return Err(ExprError::Syntax {
                    offset,
                    message: format!("unexpected character `{}`", &text[i..].chars().next().unwrap()),
                })
            }
        }
        i += 1;
    }
    Ok(out)
}
