//! Tokenizer for the Python subset used in deep-learning module definitions.
//!
//! Comments are dropped here, so nothing downstream ever sees them.

use super::ParseError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenKind {
    Name(String),
    Number(String),
    /// Raw literal text including prefix and quotes.
    Str(String),
    Op(&'static str),
    Newline,
    Indent,
    Dedent,
    Eof,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokenKind,
    pub line: usize,
    pub col: usize,
}

// Longest operators first so that prefix matching picks the right one.
const OPERATORS: &[&str] = &[
    "**=", "//=", ">>=", "<<=", "...", "->", ":=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=",
    "@=", "**", "//", "<<", ">>", "<=", ">=", "==", "!=", "(", ")", "[", "]", "{", "}", ",", ":",
    ".", ";", "@", "=", "+", "-", "*", "/", "%", "&", "|", "^", "~", "<", ">",
];

pub fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    Lexer::new(src).run()
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
    line: usize,
    line_start: usize,
    depth: usize,
    indents: Vec<usize>,
    tokens: Vec<Token>,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            src,
            pos: 0,
            line: 1,
            line_start: 0,
            depth: 0,
            indents: vec![0],
            tokens: Vec::new(),
        }
    }

    fn err(&self, msg: impl Into<String>) -> ParseError {
        ParseError::new(self.line, self.pos - self.line_start + 1, msg)
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn peek_at(&self, offset: usize) -> Option<char> {
        self.src[self.pos..].chars().nth(offset)
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        if c == '\n' {
            self.line += 1;
            self.line_start = self.pos;
        }
        Some(c)
    }

    fn push(&mut self, kind: TokenKind, line: usize, col: usize) {
        self.tokens.push(Token { kind, line, col });
    }

    fn run(mut self) -> Result<Vec<Token>, ParseError> {
        let mut at_line_start = true;
        while self.pos < self.src.len() {
            if at_line_start && self.depth == 0 {
                if self.handle_indentation()? {
                    continue;
                }
                at_line_start = false;
            }
            let c = match self.peek() {
                Some(c) => c,
                None => break,
            };
            let (line, col) = (self.line, self.pos - self.line_start + 1);
            match c {
                ' ' | '\t' | '\x0c' | '\r' => {
                    self.bump();
                }
                '#' => {
                    while let Some(c) = self.peek() {
                        if c == '\n' {
                            break;
                        }
                        self.bump();
                    }
                }
                '\\' if self.peek_at(1) == Some('\n') => {
                    self.bump();
                    self.bump();
                }
                '\\' if self.peek_at(1) == Some('\r') && self.peek_at(2) == Some('\n') => {
                    self.bump();
                    self.bump();
                    self.bump();
                }
                '\n' => {
                    self.bump();
                    if self.depth == 0 {
                        self.push(TokenKind::Newline, line, col);
                        at_line_start = true;
                    }
                }
                c if c.is_ascii_digit()
                    || (c == '.' && self.peek_at(1).is_some_and(|d| d.is_ascii_digit())) =>
                {
                    let text = self.number()?;
                    self.push(TokenKind::Number(text), line, col);
                }
                c if is_ident_start(c) => {
                    if let Some(len) = self.string_prefix_len() {
                        let text = self.string(len)?;
                        self.push(TokenKind::Str(text), line, col);
                    } else {
                        let start = self.pos;
                        while self.peek().is_some_and(is_ident_continue) {
                            self.bump();
                        }
                        self.push(
                            TokenKind::Name(self.src[start..self.pos].to_string()),
                            line,
                            col,
                        );
                    }
                }
                '"' | '\'' => {
                    let text = self.string(0)?;
                    self.push(TokenKind::Str(text), line, col);
                }
                _ => {
                    let rest = &self.src[self.pos..];
                    let op = OPERATORS
                        .iter()
                        .find(|op| rest.starts_with(**op))
                        .ok_or_else(|| self.err(format!("unexpected character {c:?}")))?;
                    for _ in 0..op.len() {
                        self.bump();
                    }
                    match *op {
                        "(" | "[" | "{" => self.depth += 1,
                        ")" | "]" | "}" => {
                            self.depth = self
                                .depth
                                .checked_sub(1)
                                .ok_or_else(|| self.err("unbalanced bracket"))?;
                        }
                        _ => {}
                    }
                    self.push(TokenKind::Op(op), line, col);
                }
            }
        }
        if self.depth != 0 {
            return Err(self.err("unexpected end of input inside brackets"));
        }
        if !matches!(
            self.tokens.last().map(|t| &t.kind),
            None | Some(TokenKind::Newline)
        ) {
            self.push(
                TokenKind::Newline,
                self.line,
                self.pos - self.line_start + 1,
            );
        }
        while self.indents.len() > 1 {
            self.indents.pop();
            self.push(TokenKind::Dedent, self.line, 1);
        }
        self.push(TokenKind::Eof, self.line, 1);
        Ok(self.tokens)
    }

    /// Measures leading whitespace. Returns true when the line was blank or
    /// comment-only and has been consumed.
    fn handle_indentation(&mut self) -> Result<bool, ParseError> {
        let mut width = 0;
        let start = self.pos;
        while let Some(c) = self.peek() {
            match c {
                ' ' => width += 1,
                '\t' => width = (width / 8 + 1) * 8,
                '\x0c' => width = 0,
                _ => break,
            }
            self.bump();
        }
        match self.peek() {
            None => return Ok(true),
            Some('\n') => {
                self.bump();
                return Ok(true);
            }
            Some('\r') if self.peek_at(1) == Some('\n') => {
                self.bump();
                self.bump();
                return Ok(true);
            }
            Some('#') => {
                while self.peek().is_some_and(|c| c != '\n') {
                    self.bump();
                }
                if self.peek() == Some('\n') {
                    self.bump();
                }
                return Ok(true);
            }
            Some('\\') if self.peek_at(1) == Some('\n') => {
                return Ok(false);
            }
            _ => {}
        }
        let current = *self.indents.last().expect("indent stack never empty");
        let line = self.line;
        if width > current {
            self.indents.push(width);
            self.push(TokenKind::Indent, line, 1);
        } else {
            while width < *self.indents.last().expect("indent stack never empty") {
                self.indents.pop();
                self.push(TokenKind::Dedent, line, 1);
            }
            if width != *self.indents.last().expect("indent stack never empty") {
                self.pos = start;
                return Err(self.err("inconsistent dedent"));
            }
        }
        Ok(false)
    }

    fn string_prefix_len(&self) -> Option<usize> {
        let rest = &self.src[self.pos..];
        for len in [2, 1] {
            if rest.len() <= len {
                continue;
            }
            let prefix = &rest[..len];
            if !prefix.is_ascii() {
                continue;
            }
            let lower = prefix.to_ascii_lowercase();
            let valid = matches!(
                lower.as_str(),
                "r" | "b" | "u" | "f" | "rb" | "br" | "fr" | "rf"
            );
            if valid && matches!(rest[len..].chars().next(), Some('"') | Some('\'')) {
                return Some(len);
            }
        }
        None
    }

    fn string(&mut self, prefix_len: usize) -> Result<String, ParseError> {
        let start = self.pos;
        for _ in 0..prefix_len {
            self.bump();
        }
        let quote = self.bump().expect("caller checked quote");
        let triple = self.peek() == Some(quote) && self.peek_at(1) == Some(quote);
        if triple {
            self.bump();
            self.bump();
        }
        loop {
            let c = self
                .bump()
                .ok_or_else(|| self.err("unterminated string literal"))?;
            match c {
                '\\' => {
                    self.bump()
                        .ok_or_else(|| self.err("unterminated string literal"))?;
                }
                '\n' if !triple => return Err(self.err("newline in string literal")),
                c if c == quote => {
                    if !triple {
                        break;
                    }
                    if self.peek() == Some(quote) && self.peek_at(1) == Some(quote) {
                        self.bump();
                        self.bump();
                        break;
                    }
                }
                _ => {}
            }
        }
        Ok(self.src[start..self.pos].to_string())
    }

    fn number(&mut self) -> Result<String, ParseError> {
        let start = self.pos;
        if self.peek() == Some('0')
            && matches!(self.peek_at(1), Some('x' | 'X' | 'o' | 'O' | 'b' | 'B'))
        {
            self.bump();
            self.bump();
            while self
                .peek()
                .is_some_and(|c| c.is_ascii_hexdigit() || c == '_')
            {
                self.bump();
            }
            return Ok(self.src[start..self.pos].to_string());
        }
        let digits = |lx: &mut Self| {
            while lx.peek().is_some_and(|c| c.is_ascii_digit() || c == '_') {
                lx.bump();
            }
        };
        digits(self);
        if self.peek() == Some('.') {
            self.bump();
            digits(self);
        }
        if matches!(self.peek(), Some('e' | 'E')) {
            let sign = matches!(self.peek_at(1), Some('+' | '-'));
            let digit_at = if sign { 2 } else { 1 };
            if self.peek_at(digit_at).is_some_and(|c| c.is_ascii_digit()) {
                self.bump();
                if sign {
                    self.bump();
                }
                digits(self);
            }
        }
        if matches!(self.peek(), Some('j' | 'J')) {
            self.bump();
        }
        if self.peek().is_some_and(is_ident_start) {
            return Err(self.err("invalid numeric literal"));
        }
        Ok(self.src[start..self.pos].to_string())
    }
}

fn is_ident_start(c: char) -> bool {
    c == '_' || c.is_alphabetic()
}

fn is_ident_continue(c: char) -> bool {
    c == '_' || c.is_alphanumeric()
}
