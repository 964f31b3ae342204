use crate::error::{Error, Result};
use crate::kb::{Literal, LiteralKind};

use super::{LogicalForm, OrderLimit, SortDirection, Term, TriplePattern};

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Word(String),
    Var(String),
    Str { value: String, datatype: Option<String> },
    Number(String),
    Iri(String),
    LBrace,
    RBrace,
    LParen,
    RParen,
    Dot,
    Other(char),
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '_' | ':' | '-')
}

impl<'a> Lexer<'a> {
    fn peek_char(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn peek_second(&self) -> Option<char> {
        let mut it = self.src[self.pos..].chars();
        it.next();
        it.next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek_char()?;
        self.pos += c.len_utf8();
        Some(c)
    }

    fn err(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Syntax {
            offset,
            message: message.into(),
        }
    }

    fn tokens(mut self) -> Result<Vec<(usize, Tok)>> {
        let mut out = Vec::new();
        loop {
            while self.peek_char().is_some_and(char::is_whitespace) {
                self.bump();
            }
            let start = self.pos;
            let Some(c) = self.peek_char() else { break };
            let tok = match c {
                '{' => {
                    self.bump();
                    Tok::LBrace
                }
                '}' => {
                    self.bump();
                    Tok::RBrace
                }
                '(' => {
                    self.bump();
                    Tok::LParen
                }
                ')' => {
                    self.bump();
                    Tok::RParen
                }
                '.' => {
                    self.bump();
                    Tok::Dot
                }
                '?' | '$' => {
                    self.bump();
                    let name = self.take_while(|c| c.is_ascii_alphanumeric() || c == '_');
                    if name.is_empty() {
                        return Err(self.err(start, "empty variable name"));
                    }
                    Tok::Var(name)
                }
                '<' => {
                    self.bump();
                    let iri = self.take_while(|c| c != '>' && !c.is_whitespace());
                    if self.bump() != Some('>') {
                        return Err(self.err(start, "unterminated IRI"));
                    }
                    Tok::Iri(iri)
                }
                '"' => self.string(start)?,
                c if c.is_ascii_digit()
                    || (c == '-' && self.peek_second().is_some_and(|d| d.is_ascii_digit())) =>
                {
                    let mut s = String::new();
                    s.push(self.bump().unwrap());
                    loop {
                        match self.peek_char() {
                            Some(d) if d.is_ascii_digit() => s.push(self.bump().unwrap()),
                            Some('.')
                                if self.peek_second().is_some_and(|d| d.is_ascii_digit()) =>
                            {
                                s.push(self.bump().unwrap())
                            }
                            _ => break,
                        }
                    }
                    Tok::Number(s)
                }
                c if is_word_char(c) => {
                    let mut s = String::new();
                    loop {
                        match self.peek_char() {
                            Some(d) if is_word_char(d) => s.push(self.bump().unwrap()),
                            // A dot is part of a name only when another name char follows.
                            Some('.') if self.peek_second().is_some_and(is_word_char) => {
                                s.push(self.bump().unwrap())
                            }
                            _ => break,
                        }
                    }
                    Tok::Word(s)
                }
                other => {
                    self.bump();
                    Tok::Other(other)
                }
            };
            out.push((start, tok));
        }
        Ok(out)
    }

    fn take_while(&mut self, f: impl Fn(char) -> bool) -> String {
        let mut s = String::new();
        while let Some(c) = self.peek_char() {
            if !f(c) {
                break;
            }
            s.push(c);
            self.bump();
        }
        s
    }

    fn string(&mut self, start: usize) -> Result<Tok> {
        self.bump();
        let mut value = String::new();
        loop {
            match self.bump() {
                None => return Err(self.err(start, "unterminated string literal")),
                Some('"') => break,
                Some('\\') => match self.bump() {
                    Some(c) => value.push(c),
                    None => return Err(self.err(start, "unterminated string literal")),
                },
                Some(c) => value.push(c),
            }
        }
        let mut datatype = None;
        if self.src[self.pos..].starts_with("^^") {
            self.pos += 2;
            let dt = if self.peek_char() == Some('<') {
                self.bump();
                let iri = self.take_while(|c| c != '>');
                self.bump();
                iri
            } else {
                self.take_while(is_word_char)
            };
            datatype = Some(dt);
        } else if self.peek_char() == Some('@') {
            self.bump();
            self.take_while(|c| c.is_ascii_alphanumeric() || c == '-');
        }
        Ok(Tok::Str { value, datatype })
    }
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    idx: usize,
    end: usize,
}

fn keyword(tok: &Tok, kw: &str) -> bool {
    matches!(tok, Tok::Word(w) if w.eq_ignore_ascii_case(kw))
}

fn strip_ns(name: &str) -> String {
    if let Some(rest) = name.strip_prefix("ns:") {
        return rest.to_string();
    }
    if let Some(rest) = name.strip_prefix("http://rdf.freebase.com/ns/") {
        return rest.to_string();
    }
    name.to_string()
}

fn literal_kind(datatype: Option<&str>) -> LiteralKind {
    let Some(dt) = datatype else {
        return LiteralKind::Plain;
    };
    let local = dt.rsplit(['#', ':']).next().unwrap_or(dt).to_ascii_lowercase();
    match local.as_str() {
        "date" | "datetime" | "gyear" | "gyearmonth" => LiteralKind::Date,
        "integer" | "int" | "decimal" | "float" | "double" | "long" => LiteralKind::Number,
        _ => LiteralKind::Plain,
    }
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.idx).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.idx).map(|(o, _)| *o).unwrap_or(self.end)
    }

    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.idx).map(|(_, t)| t.clone());
        self.idx += 1;
        t
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Syntax {
            offset: self.offset(),
            message: message.into(),
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<()> {
        match self.peek() {
            Some(t) if keyword(t, kw) => {
                self.idx += 1;
                Ok(())
            }
            _ => Err(self.err(format!("expected {kw}"))),
        }
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<()> {
        if self.peek() == Some(&want) {
            self.idx += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected {what}")))
        }
    }

    fn var(&mut self) -> Result<String> {
        match self.peek() {
            Some(Tok::Var(v)) => {
                let v = v.clone();
                self.idx += 1;
                Ok(v)
            }
            _ => Err(self.err("expected variable")),
        }
    }

    fn query(&mut self) -> Result<LogicalForm> {
        while self.peek().is_some_and(|t| keyword(t, "PREFIX")) {
            self.idx += 1;
            match (self.next(), self.next()) {
                (Some(Tok::Word(_)), Some(Tok::Iri(_))) => {}
                _ => return Err(self.err("malformed PREFIX declaration")),
            }
        }
        self.expect_keyword("SELECT")?;
        if self.peek().is_some_and(|t| keyword(t, "DISTINCT")) {
            self.idx += 1;
        }
        let select = self.var()?;
        self.expect_keyword("WHERE")?;
        let body_start = self.offset();
        self.expect(Tok::LBrace, "'{'")?;
        let mut patterns = Vec::new();
        loop {
            match self.peek() {
                None => return Err(self.err("unterminated WHERE body")),
                Some(Tok::RBrace) => {
                    self.idx += 1;
                    break;
                }
                Some(Tok::Dot) => {
                    self.idx += 1;
                }
                Some(t) if keyword(t, "FILTER") => {
                    self.idx += 1;
                    self.skip_filter()?;
                }
                Some(_) => patterns.push(self.pattern()?),
            }
        }
        if patterns.is_empty() {
            return Err(Error::Syntax {
                offset: body_start,
                message: "empty WHERE body".into(),
            });
        }

        let mut order: Option<(String, SortDirection)> = None;
        if self.peek().is_some_and(|t| keyword(t, "ORDER")) {
            self.idx += 1;
            self.expect_keyword("BY")?;
            order = Some(self.order_key()?);
        }
        let mut limit = None;
        if self.peek().is_some_and(|t| keyword(t, "LIMIT")) {
            self.idx += 1;
            match self.next() {
                Some(Tok::Number(n)) => {
                    let n: usize = n
                        .parse()
                        .map_err(|_| self.err("LIMIT expects a positive integer"))?;
                    if n == 0 {
                        return Err(self.err("LIMIT expects a positive integer"));
                    }
                    limit = Some(n);
                }
                _ => {
                    self.idx -= 1;
                    return Err(self.err("LIMIT expects a positive integer"));
                }
            }
        }
        if self.peek().is_some() {
            return Err(self.err("unexpected trailing input"));
        }
        let order_limit = match (order, limit) {
            (Some((var, direction)), Some(limit)) => Some(OrderLimit {
                var,
                direction,
                limit,
            }),
            (None, None) => None,
            (Some(_), None) => {
                return Err(Error::Unsupported {
                    offset: self.end,
                    message: "ORDER BY without LIMIT".into(),
                })
            }
            (None, Some(_)) => {
                return Err(Error::Unsupported {
                    offset: self.end,
                    message: "LIMIT without ORDER BY".into(),
                })
            }
        };
        let lf = LogicalForm {
            select,
            patterns,
            order_limit,
        };
        lf.validate().map_err(|e| Error::Syntax {
            offset: body_start,
            message: e.to_string(),
        })?;
        Ok(lf)
    }

    fn order_key(&mut self) -> Result<(String, SortDirection)> {
        let mut direction = SortDirection::Asc;
        let mut depth = 0;
        let mut var = None;
        if let Some(Tok::Word(w)) = self.peek() {
            if w.eq_ignore_ascii_case("DESC") || w.eq_ignore_ascii_case("ASC") {
                if w.eq_ignore_ascii_case("DESC") {
                    direction = SortDirection::Desc;
                }
                self.idx += 1;
                self.expect(Tok::LParen, "'('")?;
                depth += 1;
            }
        }
        // Optional cast such as xsd:datetime(?v).
        if let Some(Tok::Word(_)) = self.peek() {
            self.idx += 1;
            self.expect(Tok::LParen, "'('")?;
            depth += 1;
        }
        if let Some(Tok::Var(_)) = self.peek() {
            var = Some(self.var()?);
        }
        for _ in 0..depth {
            self.expect(Tok::RParen, "')'")?;
        }
        match var {
            Some(v) => Ok((v, direction)),
            None => Err(self.err("ORDER BY expects a variable")),
        }
    }

    fn skip_filter(&mut self) -> Result<()> {
        // FILTER ( ... ) or FILTER NOT EXISTS { ... }; contents are discarded.
        let mut depth = 0i32;
        let mut started = false;
        loop {
            let Some(t) = self.next() else {
                return Err(self.err("unterminated FILTER"));
            };
            match t {
                Tok::LParen | Tok::LBrace => {
                    depth += 1;
                    started = true;
                }
                Tok::RParen | Tok::RBrace => {
                    depth -= 1;
                    if depth < 0 {
                        return Err(self.err("unbalanced FILTER"));
                    }
                }
                _ => {}
            }
            if started && depth == 0 {
                return Ok(());
            }
        }
    }

    fn term(&mut self, position: &str) -> Result<Term> {
        let offset = self.offset();
        match self.next() {
            Some(Tok::Var(v)) => Ok(Term::Var(v)),
            Some(Tok::Word(w)) => Ok(Term::Entity(strip_ns(&w))),
            Some(Tok::Iri(i)) => Ok(Term::Entity(strip_ns(&i))),
            Some(Tok::Str { value, datatype }) => Ok(Term::Literal(Literal::new(
                value,
                literal_kind(datatype.as_deref()),
            ))),
            Some(Tok::Number(n)) => Ok(Term::Literal(Literal::new(n, LiteralKind::Number))),
            _ => Err(Error::Syntax {
                offset,
                message: format!("expected {position} term"),
            }),
        }
    }

    fn pattern(&mut self) -> Result<TriplePattern> {
        let subject_offset = self.offset();
        let subject = self.term("subject")?;
        if matches!(subject, Term::Literal(_)) {
            return Err(Error::Syntax {
                offset: subject_offset,
                message: "literal in subject position".into(),
            });
        }
        let offset = self.offset();
        let relation = match self.next() {
            Some(Tok::Word(w)) => strip_ns(&w),
            Some(Tok::Iri(i)) => strip_ns(&i),
            Some(Tok::Var(_)) => {
                return Err(Error::Unsupported {
                    offset,
                    message: "relation variables are not supported".into(),
                })
            }
            _ => {
                return Err(Error::Syntax {
                    offset,
                    message: "expected relation".into(),
                })
            }
        };
        let object = self.term("object")?;
        Ok(TriplePattern {
            subject,
            relation,
            object,
        })
    }
}

/// Parses the supported SPARQL subset. Whitespace-insensitive; `ns:` prefixes are
/// stripped and FILTER clauses are discarded.
pub fn parse(text: &str) -> Result<LogicalForm> {
    let toks = Lexer { src: text, pos: 0 }.tokens()?;
    Parser {
        toks,
        idx: 0,
        end: text.len(),
    }
    .query()
}
