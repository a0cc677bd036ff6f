//! Lexer and recursive-descent parser.
//!
//! ```text
//! query     := FIND [WHERE clause (AND clause)*] [ORDER BY score [DESC]] [LIMIT int]
//! clause    := [NOT] predicate | similar | intent | text
//! predicate := count(type) cmp int | count(type) BETWEEN int AND int | has(type)
//! cmp       := = | < | <= | > | >=
//! similar   := similar_to(string [, mode=ident] [, weight=number])
//! intent    := intent(string [, weight=number])
//! text      := text ~ string [(weight=number)]
//! type      := one of the 15 element types, or `any`
//! ```
//!
//! Keywords and type names are case-insensitive. Strings take single or
//! double quotes with backslash escapes.

use std::fmt;

use super::ast::{Clause, Mode, Query, Reference, DEFAULT_LIMIT};
use crate::graph::ElementType;
use crate::index::{CountOp, MetaPredicate, TypeSel};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ParseError {
    /// Byte offset into the query text.
    pub offset: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "at byte {}: {}", self.offset, self.message)
    }
}

fn err<T>(offset: usize, message: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError { offset, message: message.into() })
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Num(String),
    LParen,
    RParen,
    Comma,
    Eq,
    Lt,
    Le,
    Gt,
    Ge,
    Tilde,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Str(s) => format!("string {}", super::ast::quote(s)),
            Tok::Num(s) => format!("number {s}"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Eq => "`=`".into(),
            Tok::Lt => "`<`".into(),
            Tok::Le => "`<=`".into(),
            Tok::Gt => "`>`".into(),
            Tok::Ge => "`>=`".into(),
            Tok::Tilde => "`~`".into(),
            Tok::End => "end of query".into(),
        }
    }
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'(' => out.push((Tok::LParen, start)),
            b')' => out.push((Tok::RParen, start)),
            b',' => out.push((Tok::Comma, start)),
            b'=' => out.push((Tok::Eq, start)),
            b'~' => out.push((Tok::Tilde, start)),
            b'<' | b'>' => {
                let eq = bytes.get(i + 1) == Some(&b'=');
                let tok = match (c, eq) {
                    (b'<', false) => Tok::Lt,
                    (b'<', true) => Tok::Le,
                    (_, false) => Tok::Gt,
                    (_, true) => Tok::Ge,
                };
                out.push((tok, start));
                i += 1 + usize::from(eq);
                continue;
            }
            b'"' | b'\'' => {
                let (s, end) = lex_string(src, i)?;
                out.push((Tok::Str(s), start));
                i = end;
                continue;
            }
            b'0'..=b'9' | b'.' | b'-' | b'+' => {
                i += 1;
                while i < bytes.len() && matches!(bytes[i], b'0'..=b'9' | b'.' | b'e' | b'E') {
                    if matches!(bytes[i], b'e' | b'E') && matches!(bytes.get(i + 1), Some(b'-' | b'+')) {
                        i += 1;
                    }
                    i += 1;
                }
                out.push((Tok::Num(src[start..i].to_string()), start));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(src[start..i].to_string()), start));
                continue;
            }
            _ => {
                let ch = src[i..].chars().next().unwrap_or('?');
                return err(start, format!("unexpected character `{ch}`"));
            }
        }
        i += 1;
    }
    out.push((Tok::End, src.len()));
    Ok(out)
}

fn lex_string(src: &str, start: usize) -> Result<(String, usize), ParseError> {
    let quote = src.as_bytes()[start] as char;
    let mut out = String::new();
    let mut chars = src[start + 1..].char_indices();
    while let Some((off, c)) = chars.next() {
        let at = start + 1 + off;
        match c {
            c if c == quote => return Ok((out, at + 1)),
            '\\' => match chars.next() {
                Some((_, 'n')) => out.push('\n'),
                Some((_, 't')) => out.push('\t'),
                Some((_, 'r')) => out.push('\r'),
                Some((_, c @ ('"' | '\'' | '\\'))) => out.push(c),
                Some((_, c)) => return err(at, format!("unknown escape `\\{c}`")),
                None => break,
            },
            c => out.push(c),
        }
    }
    err(start, "unterminated string")
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn offset(&self) -> usize {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s.eq_ignore_ascii_case(kw))
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        let hit = self.is_kw(kw);
        if hit {
            self.bump();
        }
        hit
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            err(self.offset(), format!("expected `{kw}`, found {}", self.peek().describe()))
        }
    }

    fn expect(&mut self, tok: Tok) -> Result<(), ParseError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            err(self.offset(), format!("expected {}, found {}", tok.describe(), self.peek().describe()))
        }
    }

    fn string(&mut self) -> Result<String, ParseError> {
        match self.bump() {
            (Tok::Str(s), _) => Ok(s),
            (t, at) => err(at, format!("expected a quoted string, found {}", t.describe())),
        }
    }

    fn integer(&mut self) -> Result<u32, ParseError> {
        match self.bump() {
            (Tok::Num(s), at) => s.parse().or_else(|_| err(at, format!("expected a non-negative integer, found {s}"))),
            (t, at) => err(at, format!("expected an integer, found {}", t.describe())),
        }
    }

    fn weight(&mut self) -> Result<f64, ParseError> {
        match self.bump() {
            (Tok::Num(s), at) => match s.parse::<f64>() {
                Ok(w) if w > 0.0 && w <= 1.0 => Ok(w),
                Ok(_) => err(at, format!("weight {s} is outside (0, 1]")),
                Err(_) => err(at, format!("malformed number {s}")),
            },
            (t, at) => err(at, format!("expected a weight, found {}", t.describe())),
        }
    }

    fn element_type(&mut self) -> Result<TypeSel, ParseError> {
        match self.bump() {
            (Tok::Ident(s), _) if s.eq_ignore_ascii_case("any") => Ok(TypeSel::Any),
            (Tok::Ident(s), at) => s.parse::<ElementType>().map(TypeSel::Type).or_else(|_| {
                err(at, format!("unknown element type `{s}`; valid types are: {}", ElementType::valid_names()))
            }),
            (t, at) => err(at, format!("expected an element type, found {}", t.describe())),
        }
    }

    fn type_arg(&mut self) -> Result<TypeSel, ParseError> {
        self.expect(Tok::LParen)?;
        let t = self.element_type()?;
        self.expect(Tok::RParen)?;
        Ok(t)
    }

    fn predicate(&mut self) -> Result<MetaPredicate, ParseError> {
        let at = self.offset();
        if self.eat_kw("has") {
            return Ok(MetaPredicate::new(self.type_arg()?, CountOp::Has));
        }
        if !self.eat_kw("count") {
            return err(at, format!("expected `count` or `has`, found {}", self.peek().describe()));
        }
        let target = self.type_arg()?;
        if self.eat_kw("between") {
            let lo_at = self.offset();
            let lo = self.integer()?;
            self.expect_kw("and")?;
            let hi = self.integer()?;
            if lo > hi {
                return err(lo_at, format!("empty range: BETWEEN {lo} AND {hi}"));
            }
            return Ok(MetaPredicate::new(target, CountOp::Between(lo, hi)));
        }
        let (op, op_at) = self.bump();
        let v = self.integer()?;
        let op = match op {
            Tok::Eq => CountOp::Eq(v),
            Tok::Lt => CountOp::Lt(v),
            Tok::Le => CountOp::Le(v),
            Tok::Gt => CountOp::Gt(v),
            Tok::Ge => CountOp::Ge(v),
            t => return err(op_at, format!("expected a comparison or BETWEEN, found {}", t.describe())),
        };
        Ok(MetaPredicate::new(target, op))
    }

    /// `name=value` argument; returns the lowercased name and its offset.
    fn named_arg(&mut self) -> Result<(String, usize), ParseError> {
        match self.bump() {
            (Tok::Ident(s), at) => {
                self.expect(Tok::Eq)?;
                Ok((s.to_ascii_lowercase(), at))
            }
            (t, at) => err(at, format!("expected a named argument, found {}", t.describe())),
        }
    }

    fn similar(&mut self) -> Result<Clause, ParseError> {
        self.expect(Tok::LParen)?;
        let reference = Reference::from_literal(self.string()?);
        let (mut mode, mut weight) = (None, None);
        while *self.peek() == Tok::Comma {
            self.bump();
            let (name, at) = self.named_arg()?;
            match name.as_str() {
                "mode" if mode.is_none() => {
                    mode = Some(match self.bump() {
                        (Tok::Ident(m), _) if m.eq_ignore_ascii_case("structural") => Mode::Structural,
                        (Tok::Ident(m), _) if m.eq_ignore_ascii_case("visual") => Mode::Visual,
                        (Tok::Ident(m), _) if m.eq_ignore_ascii_case("semantic") => Mode::Semantic,
                        (t, at) => {
                            return err(at, format!("unknown mode {}; expected structural, visual or semantic", t.describe()))
                        }
                    })
                }
                "weight" if weight.is_none() => weight = Some(self.weight()?),
                "mode" | "weight" => return err(at, format!("`{name}` given twice")),
                _ => return err(at, format!("unknown argument `{name}` to similar_to")),
            }
        }
        self.expect(Tok::RParen)?;
        Ok(Clause::SimilarTo { reference, mode: mode.unwrap_or(Mode::Structural), weight })
    }

    fn intent(&mut self) -> Result<Clause, ParseError> {
        self.expect(Tok::LParen)?;
        let label = self.string()?;
        let mut weight = None;
        if *self.peek() == Tok::Comma {
            self.bump();
            let (name, at) = self.named_arg()?;
            if name != "weight" {
                return err(at, format!("unknown argument `{name}` to intent"));
            }
            weight = Some(self.weight()?);
        }
        self.expect(Tok::RParen)?;
        Ok(Clause::Intent { label, weight })
    }

    fn text(&mut self) -> Result<Clause, ParseError> {
        self.expect(Tok::Tilde)?;
        let text = self.string()?;
        let mut weight = None;
        if *self.peek() == Tok::LParen {
            self.bump();
            let (name, at) = self.named_arg()?;
            if name != "weight" {
                return err(at, format!("unknown argument `{name}` to text match"));
            }
            weight = Some(self.weight()?);
            self.expect(Tok::RParen)?;
        }
        Ok(Clause::Text { text, weight })
    }

    fn clause(&mut self) -> Result<Clause, ParseError> {
        if self.eat_kw("not") {
            let at = self.offset();
            if !(self.is_kw("count") || self.is_kw("has")) {
                return err(at, "NOT applies only to count(...) and has(...) predicates");
            }
            return Ok(Clause::Not(self.predicate()?));
        }
        if self.eat_kw("similar_to") {
            self.similar()
        } else if self.eat_kw("intent") {
            self.intent()
        } else if self.eat_kw("text") {
            self.text()
        } else if self.is_kw("count") || self.is_kw("has") {
            Ok(Clause::Meta(self.predicate()?))
        } else {
            err(self.offset(), format!("expected a clause, found {}", self.peek().describe()))
        }
    }

    fn query(&mut self) -> Result<Query, ParseError> {
        self.expect_kw("find")?;
        let mut clauses = Vec::new();
        let mut modalities: Vec<(&'static str, usize)> = Vec::new();
        if self.eat_kw("where") {
            loop {
                let at = self.offset();
                let clause = self.clause()?;
                let modality = match &clause {
                    Clause::SimilarTo { mode: Mode::Structural, .. } => Some("structural"),
                    Clause::SimilarTo { mode: Mode::Visual, .. } => Some("visual"),
                    Clause::SimilarTo { mode: Mode::Semantic, .. } | Clause::Text { .. } => Some("semantic"),
                    Clause::Intent { .. } => Some("intent"),
                    _ => None,
                };
                if let Some(m) = modality {
                    if let Some((_, first)) = modalities.iter().find(|(n, _)| *n == m) {
                        return err(at, format!("duplicate {m} clause (first at byte {first})"));
                    }
                    modalities.push((m, at));
                }
                clauses.push(clause);
                if !self.eat_kw("and") {
                    break;
                }
            }
        }
        if self.eat_kw("order") {
            self.expect_kw("by")?;
            self.expect_kw("score")?;
            let at = self.offset();
            if self.eat_kw("asc") {
                return err(at, "results are always ordered by descending score");
            }
            self.eat_kw("desc");
        }
        let mut limit = DEFAULT_LIMIT;
        if self.eat_kw("limit") {
            let at = self.offset();
            limit = self.integer()? as usize;
            if limit == 0 {
                return err(at, "LIMIT must be at least 1");
            }
        }
        match self.peek() {
            Tok::End => Ok(Query { clauses, limit }),
            t => err(self.offset(), format!("unexpected {} after query", t.describe())),
        }
    }
}

/// Parses query text into a [`Query`].
pub fn parse(src: &str) -> Result<Query, ParseError> {
    Parser { toks: lex(src)?, at: 0 }.query()
}
