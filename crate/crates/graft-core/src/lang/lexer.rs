//! Tokenizer for the mini language.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenKind {
    Identifier,
    IntLiteral,
    Operator,
    Keyword,
    Punct,
}

impl TokenKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TokenKind::Identifier => "Identifier",
            TokenKind::IntLiteral => "IntLiteral",
            TokenKind::Operator => "Operator",
            TokenKind::Keyword => "Keyword",
            TokenKind::Punct => "Punct",
        }
    }

    pub fn parse(s: &str) -> Option<TokenKind> {
        Some(match s {
            "Identifier" => TokenKind::Identifier,
            "IntLiteral" => TokenKind::IntLiteral,
            "Operator" => TokenKind::Operator,
            "Keyword" => TokenKind::Keyword,
            "Punct" => TokenKind::Punct,
            _ => return None,
        })
    }
}

/// One lexeme. `position` is the 0-based index in the token sequence, which
/// is also the token's row index in the fused graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub text: String,
    pub position: usize,
}

const KEYWORDS: [&str; 3] = ["if", "else", "while"];

/// Tokenizes `source`.
///
/// Maximal munch applies, so `==` lexes as one operator. Whitespace
/// separates tokens; `#` comments run to end of line. Any other character is
/// an [`Error::UnknownCharacter`] carrying its byte offset.
pub fn lex(source: &str) -> Result<Vec<Token>> {
    let mut tokens = Vec::new();
    let mut it = source.char_indices().peekable();
    while let Some((offset, ch)) = it.next() {
        if ch.is_whitespace() {
            continue;
        }
        if ch == '#' {
            while let Some(&(_, c)) = it.peek() {
                it.next();
                if c == '\n' {
                    break;
                }
            }
            continue;
        }
        let position = tokens.len();
        if ch.is_ascii_alphabetic() || ch == '_' {
            let mut text = String::from(ch);
            while let Some(&(_, c)) = it.peek() {
                if c.is_ascii_alphanumeric() || c == '_' {
                    text.push(c);
                    it.next();
                } else {
                    break;
                }
            }
            let kind = if KEYWORDS.contains(&text.as_str()) {
                TokenKind::Keyword
            } else {
                TokenKind::Identifier
            };
            tokens.push(Token { kind, text, position });
        } else if ch.is_ascii_digit() {
            let mut text = String::from(ch);
            while let Some(&(_, c)) = it.peek() {
                if c.is_ascii_digit() {
                    text.push(c);
                    it.next();
                } else {
                    break;
                }
            }
            tokens.push(Token {
                kind: TokenKind::IntLiteral,
                text,
                position,
            });
        } else if ch == '=' {
            let text = if matches!(it.peek(), Some(&(_, '='))) {
                it.next();
                "==".to_string()
            } else {
                "=".to_string()
            };
            tokens.push(Token {
                kind: TokenKind::Operator,
                text,
                position,
            });
        } else if matches!(ch, '+' | '-' | '*' | '/' | '<' | '>') {
            tokens.push(Token {
                kind: TokenKind::Operator,
                text: ch.to_string(),
                position,
            });
        } else if matches!(ch, '{' | '}' | '(' | ')') {
            tokens.push(Token {
                kind: TokenKind::Punct,
                text: ch.to_string(),
                position,
            });
        } else {
            return Err(Error::UnknownCharacter { ch, offset });
        }
    }
    Ok(tokens)
}
