//! Tokenizer for the rule language. Whitespace-insensitive, `#` comments.

use std::fmt;

use super::SyntaxError;
use crate::model::Decimal4;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tok {
    /// `[A-Za-z0-9_]+` that is not a plain number.
    Word(String),
    Str(String),
    Int(i64, String),
    Dec(Decimal4),
    LBrace,
    RBrace,
    LParen,
    RParen,
    Semi,
    Comma,
    Dot,
    Colon,
    Slash,
    Arrow,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Word(w) => write!(f, "`{w}`"),
            Tok::Str(s) => write!(f, "string {s:?}"),
            Tok::Int(_, text) => write!(f, "integer {text}"),
            Tok::Dec(d) => write!(f, "decimal {d}"),
            Tok::LBrace => f.write_str("`{`"),
            Tok::RBrace => f.write_str("`}`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::Semi => f.write_str("`;`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::Dot => f.write_str("`.`"),
            Tok::Colon => f.write_str("`:`"),
            Tok::Slash => f.write_str("`/`"),
            Tok::Arrow => f.write_str("`->`"),
            Tok::Eq => f.write_str("`=`"),
            Tok::Ne => f.write_str("`!=`"),
            Tok::Lt => f.write_str("`<`"),
            Tok::Le => f.write_str("`<=`"),
            Tok::Gt => f.write_str("`>`"),
            Tok::Ge => f.write_str("`>=`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

struct Cursor<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
    col: usize,
}

impl Cursor<'_> {
    fn peek(&mut self) -> Option<char> {
        self.chars.peek().copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }
}

fn is_word_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

pub fn tokenize(src: &str) -> Result<Vec<Token>, SyntaxError> {
    let mut cur = Cursor {
        chars: src.chars().peekable(),
        line: 1,
        col: 1,
    };
    let mut out = Vec::new();
    loop {
        while let Some(c) = cur.peek() {
            if c.is_whitespace() {
                cur.bump();
            } else if c == '#' {
                while cur.peek().is_some_and(|c| c != '\n') {
                    cur.bump();
                }
            } else {
                break;
            }
        }
        let (line, col) = (cur.line, cur.col);
        let err = |found: String, expected: &[&str]| SyntaxError {
            line,
            col,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found,
        };
        let Some(c) = cur.bump() else {
            out.push(Token {
                tok: Tok::Eof,
                line,
                col,
            });
            return Ok(out);
        };
        let tok = match c {
            '{' => Tok::LBrace,
            '}' => Tok::RBrace,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            ';' => Tok::Semi,
            ',' => Tok::Comma,
            '.' => Tok::Dot,
            ':' => Tok::Colon,
            '/' => Tok::Slash,
            '=' => Tok::Eq,
            '!' if cur.peek() == Some('=') => {
                cur.bump();
                Tok::Ne
            }
            '<' | '>' => {
                let with_eq = cur.peek() == Some('=');
                if with_eq {
                    cur.bump();
                }
                match (c, with_eq) {
                    ('<', false) => Tok::Lt,
                    ('<', true) => Tok::Le,
                    ('>', false) => Tok::Gt,
                    _ => Tok::Ge,
                }
            }
            '-' if cur.peek() == Some('>') => {
                cur.bump();
                Tok::Arrow
            }
            '-' if cur.peek().is_some_and(|c| c.is_ascii_digit()) => {
                lex_number(&mut cur, true).map_err(|f| err(f, &["number"]))?
            }
            '"' => {
                let mut s = String::new();
                loop {
                    match cur.bump() {
                        None => return Err(err("unterminated string".into(), &["`\"`"])),
                        Some('"') => break,
                        Some('\\') => match cur.bump() {
                            Some('"') => s.push('"'),
                            Some('\\') => s.push('\\'),
                            Some('n') => s.push('\n'),
                            Some('t') => s.push('\t'),
                            Some('r') => s.push('\r'),
                            other => {
                                return Err(err(
                                    format!("escape {other:?}"),
                                    &["\\\"", "\\\\", "\\n", "\\t", "\\r"],
                                ))
                            }
                        },
                        Some(ch) => s.push(ch),
                    }
                }
                Tok::Str(s)
            }
            c if c.is_ascii_digit() => {
                let mut text = String::from(c);
                while cur.peek().is_some_and(is_word_char) {
                    text.push(cur.bump().unwrap());
                }
                if text.bytes().all(|b| b.is_ascii_digit()) {
                    finish_number(&mut cur, text, false).map_err(|f| err(f, &["number"]))?
                } else {
                    Tok::Word(text)
                }
            }
            c if is_word_char(c) => {
                let mut text = String::from(c);
                while cur.peek().is_some_and(is_word_char) {
                    text.push(cur.bump().unwrap());
                }
                Tok::Word(text)
            }
            other => return Err(err(format!("character {other:?}"), &["token"])),
        };
        out.push(Token { tok, line, col });
    }
}

fn lex_number(cur: &mut Cursor<'_>, negative: bool) -> Result<Tok, String> {
    let mut text = String::new();
    while cur.peek().is_some_and(|c| c.is_ascii_digit()) {
        text.push(cur.bump().unwrap());
    }
    finish_number(cur, text, negative)
}

/// `digits` already consumed; picks up an optional `.digits` fraction.
fn finish_number(cur: &mut Cursor<'_>, digits: String, negative: bool) -> Result<Tok, String> {
    let sign = if negative { "-" } else { "" };
    if cur.peek() == Some('.') {
        // lookahead of two: `1.` followed by a digit is a decimal
        let mut probe = cur.chars.clone();
        probe.next();
        if probe.peek().is_some_and(|c| c.is_ascii_digit()) {
            cur.bump();
            let mut frac = String::new();
            while cur.peek().is_some_and(|c| c.is_ascii_digit()) {
                frac.push(cur.bump().unwrap());
            }
            let text = format!("{sign}{digits}.{frac}");
            return text
                .parse::<Decimal4>()
                .map(Tok::Dec)
                .map_err(|_| format!("decimal {text}"));
        }
    }
    let text = format!("{sign}{digits}");
    text.parse::<i64>()
        .map(|v| Tok::Int(v, text.clone()))
        .map_err(|_| format!("integer {text} out of range"))
}
