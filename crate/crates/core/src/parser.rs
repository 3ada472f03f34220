//! Concrete syntax: lexer and recursive-descent parser for `.ilysa` files.
//! The grammar is described in `docs/syntax.md`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::ast::*;

#[derive(Clone, Debug)]
pub struct SourceSpec {
    pub text: String,
    pub path: String,
}

impl SourceSpec {
    pub fn new(path: &str, text: &str) -> Self {
        SourceSpec { text: text.to_string(), path: path.to_string() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("{line}:{col}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

type PResult<T> = Result<T, ParseError>;

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Ident(String),
    Int(i64),
    Str(String),
    Sym(&'static str),
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Int(n) => write!(f, "`{n}`"),
            Tok::Str(s) => write!(f, "string {s:?}"),
            Tok::Sym(s) => write!(f, "`{s}`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

const SYMS: [&str; 25] = [
    ":=", ">=", "&&", "||", "->", "(|", "|)", "(", ")", "{", "}", "[", "]", ",", ";", ".", ":",
    "#", "_", "+", "-", "*", "=", "/", "|",
];

const KEYWORDS: [&str; 21] = [
    "system", "node", "store", "proc", "sensor", "actuator", "mu", "tau", "probe", "out", "in",
    "decrypt", "as", "if", "then", "else", "to", "act", "true", "false", "tuple_",
];

pub fn is_keyword(s: &str) -> bool {
    KEYWORDS.contains(&s)
}

fn lex(text: &str) -> PResult<Vec<Token>> {
    let chars: Vec<char> = text.chars().collect();
    let mut toks = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let err = |line, col, message: String| ParseError { line, col, message };
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
            continue;
        }
        let (l0, c0) = (line, col);
        if c.is_ascii_alphabetic() {
            let start = i;
            while i < chars.len()
                && (chars[i].is_ascii_alphanumeric() || chars[i] == '_' || chars[i] == '\'')
            {
                i += 1;
            }
            let s: String = chars[start..i].iter().collect();
            col += i - start;
            toks.push(Token { tok: Tok::Ident(s), line: l0, col: c0 });
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            let s: String = chars[start..i].iter().collect();
            col += i - start;
            let n = s.parse::<i64>().map_err(|_| err(l0, c0, format!("integer literal {s} out of range")))?;
            toks.push(Token { tok: Tok::Int(n), line: l0, col: c0 });
            continue;
        }
        if c == '"' {
            let mut s = String::new();
            i += 1;
            col += 1;
            loop {
                match chars.get(i) {
                    None => return Err(err(l0, c0, "unterminated string literal".into())),
                    Some('"') => {
                        i += 1;
                        col += 1;
                        break;
                    }
                    Some('\\') => {
                        let e = chars.get(i + 1).copied();
                        s.push(match e {
                            Some('n') => '\n',
                            Some('t') => '\t',
                            Some('r') => '\r',
                            Some('"') => '"',
                            Some('\\') => '\\',
                            _ => return Err(err(line, col, "invalid escape in string".into())),
                        });
                        i += 2;
                        col += 2;
                    }
                    Some('\n') => return Err(err(l0, c0, "newline in string literal".into())),
                    Some(&ch) => {
                        s.push(ch);
                        i += 1;
                        col += 1;
                    }
                }
            }
            toks.push(Token { tok: Tok::Str(s), line: l0, col: c0 });
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
        match SYMS.iter().find(|s| rest.starts_with(**s)) {
            Some(s) => {
                i += s.len();
                col += s.len();
                toks.push(Token { tok: Tok::Sym(s), line: l0, col: c0 });
            }
            None => return Err(err(l0, c0, format!("unexpected character {c:?}"))),
        }
    }
    toks.push(Token { tok: Tok::Eof, line, col });
    Ok(toks)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    atoms: BTreeSet<Name>,
}

enum Item<Pre, Body> {
    Pre(Pre),
    Tail(Body),
}

enum ProcPre {
    Out(Vec<Term>, BTreeSet<Label>),
    In(Vec<Term>, Vec<Name>),
    Assign(Name, Term),
    Act(ActuatorId, Name),
    Decrypt(Term, Vec<Term>, Vec<Name>, Name),
    Mu(Name),
}

enum SensorPre {
    Tau,
    Probe(SensorId),
    Mu(Name),
}

enum ActPre {
    Tau,
    Await(ActuatorId, BTreeSet<Name>),
    Triggered(Name),
    Mu(Name),
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }
    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.pos + k).min(self.toks.len() - 1)].tok
    }
    fn here(&self) -> (usize, usize) {
        let t = &self.toks[self.pos];
        (t.line, t.col)
    }
    fn error<T>(&self, message: String) -> PResult<T> {
        let (line, col) = self.here();
        Err(ParseError { line, col, message })
    }
    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].tok.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }
    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }
    fn is_kw(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Ident(x) if x == s)
    }
    fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.bump();
            true
        } else {
            false
        }
    }
    fn eat_kw(&mut self, s: &str) -> bool {
        if self.is_kw(s) {
            self.bump();
            true
        } else {
            false
        }
    }
    fn expect_sym(&mut self, s: &str) -> PResult<()> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            self.error(format!("expected `{s}`, found {}", self.peek()))
        }
    }
    fn expect_kw(&mut self, s: &str) -> PResult<()> {
        if self.eat_kw(s) {
            Ok(())
        } else {
            self.error(format!("expected `{s}`, found {}", self.peek()))
        }
    }
    fn ident(&mut self) -> PResult<Name> {
        match self.peek().clone() {
            Tok::Ident(s) if !is_keyword(&s) => {
                self.bump();
                Ok(name(&s))
            }
            t => self.error(format!("expected identifier, found {t}")),
        }
    }
    fn int(&mut self) -> PResult<i64> {
        match self.peek().clone() {
            Tok::Int(n) => {
                self.bump();
                Ok(n)
            }
            t => self.error(format!("expected integer, found {t}")),
        }
    }
    fn id32(&mut self) -> PResult<u32> {
        let n = self.int()?;
        u32::try_from(n).or_else(|_| self.error(format!("identifier {n} out of range")))
    }

    fn comma_list<T>(
        &mut self,
        close: &str,
        mut item: impl FnMut(&mut Self) -> PResult<T>,
    ) -> PResult<Vec<T>> {
        let mut out = Vec::new();
        if self.is_sym(close) {
            return Ok(out);
        }
        loop {
            out.push(item(self)?);
            if !self.eat_sym(",") {
                return Ok(out);
            }
        }
    }

    // ---- terms ----

    fn term(&mut self) -> PResult<Term> {
        let mut lhs = self.term_and()?;
        while self.eat_sym("||") {
            let rhs = self.term_and()?;
            lhs = Term::app("or", vec![lhs, rhs]);
        }
        Ok(lhs)
    }
    fn term_and(&mut self) -> PResult<Term> {
        let mut lhs = self.term_cmp()?;
        while self.eat_sym("&&") {
            let rhs = self.term_cmp()?;
            lhs = Term::app("and", vec![lhs, rhs]);
        }
        Ok(lhs)
    }
    fn term_cmp(&mut self) -> PResult<Term> {
        let lhs = self.term_add()?;
        if self.eat_sym("=") {
            let rhs = self.term_add()?;
            return Ok(Term::app("eq", vec![lhs, rhs]));
        }
        if self.eat_sym(">=") {
            let rhs = self.term_add()?;
            return Ok(Term::app("ge", vec![lhs, rhs]));
        }
        Ok(lhs)
    }
    fn term_add(&mut self) -> PResult<Term> {
        let mut lhs = self.term_mul()?;
        loop {
            if self.eat_sym("+") {
                let rhs = self.term_mul()?;
                lhs = Term::app("add", vec![lhs, rhs]);
            } else if self.eat_sym("-") {
                let rhs = self.term_mul()?;
                lhs = Term::app("sub", vec![lhs, rhs]);
            } else {
                return Ok(lhs);
            }
        }
    }
    fn term_mul(&mut self) -> PResult<Term> {
        let mut lhs = self.term_atom()?;
        while self.eat_sym("*") {
            let rhs = self.term_atom()?;
            lhs = Term::app("mul", vec![lhs, rhs]);
        }
        Ok(lhs)
    }
    fn term_atom(&mut self) -> PResult<Term> {
        match self.peek().clone() {
            Tok::Int(n) => {
                self.bump();
                Ok(Term::Value(Literal::Int(n)))
            }
            Tok::Sym("-") if matches!(self.peek_at(1), Tok::Int(_)) => {
                self.bump();
                let n = self.int()?;
                Ok(Term::Value(Literal::Int(-n)))
            }
            Tok::Str(s) => {
                self.bump();
                Ok(Term::Value(Literal::Str(s)))
            }
            Tok::Sym("#") => {
                self.bump();
                Ok(Term::SensorLoc(self.id32()?))
            }
            Tok::Sym("(") => {
                self.bump();
                let t = self.term()?;
                self.expect_sym(")")?;
                Ok(t)
            }
            Tok::Sym("{") => {
                self.bump();
                let args = self.comma_list("}", |p| p.term())?;
                self.expect_sym("}")?;
                self.expect_sym("_")?;
                let k = self.ident()?;
                Ok(Term::Enc(args, k))
            }
            Tok::Ident(s) if s == "true" || s == "false" => {
                self.bump();
                Ok(Term::Value(Literal::Bool(s == "true")))
            }
            Tok::Ident(_) => {
                let x = self.ident()?;
                if self.eat_sym("(") {
                    let args = self.comma_list(")", |p| p.term())?;
                    self.expect_sym(")")?;
                    Ok(Term::App(x, args))
                } else if self.atoms.contains(&x) {
                    Ok(Term::Value(Literal::Atom(x)))
                } else {
                    Ok(Term::Var(x))
                }
            }
            t => self.error(format!("expected a term, found {t}")),
        }
    }

    // ---- sequences ----

    fn at_seq_end(&self) -> bool {
        matches!(self.peek(), Tok::Eof | Tok::Sym(")") | Tok::Sym("}"))
            || ["else", "proc", "sensor", "actuator", "store", "node"].iter().any(|k| self.is_kw(k))
    }

    fn seq<Pre, Body>(
        &mut self,
        item: ItemFn<Pre, Body>,
    ) -> PResult<Vec<Item<Pre, Body>>> {
        let mut items = Vec::new();
        loop {
            if self.at_seq_end() {
                if items.is_empty() {
                    return self.error(format!("expected a process, found {}", self.peek()));
                }
                return Ok(items);
            }
            // `item` reports whether it already consumed its own separator.
            let chained = item(self, &mut items)?;
            if !chained && !self.eat_sym(".") {
                return Ok(items);
            }
        }
    }

    fn build<Pre, Body>(
        &self,
        items: Vec<Item<Pre, Body>>,
        nil: Body,
        wrap: impl Fn(Pre, Body) -> Body,
    ) -> PResult<Body> {
        let mut it = items.into_iter().rev();
        let mut acc = match it.next() {
            Some(Item::Tail(b)) => b,
            Some(Item::Pre(p)) => wrap(p, nil),
            None => nil,
        };
        for i in it {
            match i {
                Item::Pre(p) => acc = wrap(p, acc),
                Item::Tail(_) => {
                    return self.error("a terminal process cannot have a continuation".into())
                }
            }
        }
        Ok(acc)
    }

    fn process(&mut self) -> PResult<Process> {
        let items = self.seq(Self::proc_item)?;
        self.build(items, Process::Nil, wrap_proc)
    }

    fn proc_item(&mut self, items: &mut Vec<Item<ProcPre, Process>>) -> PResult<bool> {
        match self.peek().clone() {
            Tok::Int(0) => {
                self.bump();
                items.push(Item::Tail(Process::Nil));
            }
            Tok::Sym("(") => {
                self.bump();
                let inner = self.seq(Self::proc_item)?;
                self.expect_sym(")")?;
                items.extend(inner);
            }
            Tok::Ident(k) if k == "mu" => {
                self.bump();
                let h = self.ident()?;
                self.expect_sym(".")?;
                items.push(Item::Pre(ProcPre::Mu(h)));
                return Ok(true);
            }
            Tok::Ident(k) if k == "out" => {
                self.bump();
                self.expect_sym("(")?;
                let ts = self.comma_list(")", |p| p.term())?;
                self.expect_sym(")")?;
                self.expect_kw("to")?;
                self.expect_sym("{")?;
                let ls = self.comma_list("}", |p| p.ident().map(Label))?;
                self.expect_sym("}")?;
                items.push(Item::Pre(ProcPre::Out(ts, ls.into_iter().collect())));
            }
            Tok::Ident(k) if k == "in" => {
                self.bump();
                self.expect_sym("(")?;
                let (ms, xs) = self.pattern(")")?;
                self.expect_sym(")")?;
                items.push(Item::Pre(ProcPre::In(ms, xs)));
            }
            Tok::Ident(k) if k == "act" => {
                self.bump();
                self.expect_sym("(")?;
                let j = self.id32()?;
                self.expect_sym(",")?;
                let g = self.ident()?;
                self.expect_sym(")")?;
                items.push(Item::Pre(ProcPre::Act(j, g)));
            }
            Tok::Ident(k) if k == "decrypt" => {
                self.bump();
                let subject = self.term()?;
                self.expect_kw("as")?;
                self.expect_sym("{")?;
                let (ms, xs) = self.pattern("}")?;
                self.expect_sym("}")?;
                self.expect_sym("_")?;
                let key = self.ident()?;
                self.expect_kw("in")?;
                items.push(Item::Pre(ProcPre::Decrypt(subject, ms, xs, key)));
                return Ok(true);
            }
            Tok::Ident(k) if k == "if" => {
                self.bump();
                let guard = self.term()?;
                self.expect_kw("then")?;
                let then_p = self.process()?;
                self.expect_kw("else")?;
                let else_p = self.process()?;
                items.push(Item::Tail(Process::Cond {
                    guard,
                    then_p: Arc::new(then_p),
                    else_p: Arc::new(else_p),
                }));
            }
            Tok::Ident(_) => {
                let x = self.ident()?;
                if self.eat_sym(":=") {
                    let rhs = self.term()?;
                    items.push(Item::Pre(ProcPre::Assign(x, rhs)));
                } else {
                    items.push(Item::Tail(Process::IterVar(x)));
                }
            }
            t => return self.error(format!("expected a process, found {t}")),
        }
        Ok(false)
    }

    fn pattern(&mut self, close: &str) -> PResult<(Vec<Term>, Vec<Name>)> {
        let mut ms = Vec::new();
        if !self.is_sym(";") && !self.is_sym(close) {
            ms = self.comma_list(";", |p| p.term())?;
        }
        let mut xs = Vec::new();
        if self.eat_sym(";") {
            xs = self.comma_list(close, |p| p.ident())?;
        }
        Ok((ms, xs))
    }

    fn sensor(&mut self) -> PResult<SensorBody> {
        let items = self.seq(Self::sensor_item)?;
        self.build(items, SensorBody::Nil, |p, k| {
            let k = Arc::new(k);
            match p {
                SensorPre::Tau => SensorBody::Tau(k),
                SensorPre::Probe(i) => SensorBody::Probe(i, k),
                SensorPre::Mu(h) => SensorBody::Iter(h, k),
            }
        })
    }

    fn sensor_item(&mut self, items: &mut Vec<Item<SensorPre, SensorBody>>) -> PResult<bool> {
        match self.peek().clone() {
            Tok::Int(0) => {
                self.bump();
                items.push(Item::Tail(SensorBody::Nil));
            }
            Tok::Sym("(") => {
                self.bump();
                let inner = self.seq(Self::sensor_item)?;
                self.expect_sym(")")?;
                items.extend(inner);
            }
            Tok::Ident(k) if k == "mu" => {
                self.bump();
                let h = self.ident()?;
                self.expect_sym(".")?;
                items.push(Item::Pre(SensorPre::Mu(h)));
                return Ok(true);
            }
            Tok::Ident(k) if k == "tau" => {
                self.bump();
                items.push(Item::Pre(SensorPre::Tau));
            }
            Tok::Ident(k) if k == "probe" => {
                self.bump();
                self.expect_sym("(")?;
                self.eat_sym("#");
                let i = self.id32()?;
                self.expect_sym(")")?;
                items.push(Item::Pre(SensorPre::Probe(i)));
            }
            Tok::Ident(_) => {
                let h = self.ident()?;
                items.push(Item::Tail(SensorBody::IterVar(h)));
            }
            t => return self.error(format!("expected a sensor action, found {t}")),
        }
        Ok(false)
    }

    fn actuator(&mut self) -> PResult<ActuatorBody> {
        let items = self.seq(Self::actuator_item)?;
        self.build(items, ActuatorBody::Nil, |p, k| {
            let k = Arc::new(k);
            match p {
                ActPre::Tau => ActuatorBody::Tau(k),
                ActPre::Await(j, g) => ActuatorBody::Await(j, g, k),
                ActPre::Triggered(g) => ActuatorBody::Triggered(g, k),
                ActPre::Mu(h) => ActuatorBody::Iter(h, k),
            }
        })
    }

    fn actuator_item(&mut self, items: &mut Vec<Item<ActPre, ActuatorBody>>) -> PResult<bool> {
        match self.peek().clone() {
            Tok::Int(0) => {
                self.bump();
                items.push(Item::Tail(ActuatorBody::Nil));
            }
            Tok::Sym("(|") => {
                self.bump();
                let j = self.id32()?;
                self.expect_sym(",")?;
                self.expect_sym("{")?;
                let gs = self.comma_list("}", |p| p.ident())?;
                self.expect_sym("}")?;
                self.expect_sym("|)")?;
                items.push(Item::Pre(ActPre::Await(j, gs.into_iter().collect())));
            }
            Tok::Sym("(") => {
                self.bump();
                let inner = self.seq(Self::actuator_item)?;
                self.expect_sym(")")?;
                items.extend(inner);
            }
            Tok::Ident(k) if k == "mu" => {
                self.bump();
                let h = self.ident()?;
                self.expect_sym(".")?;
                items.push(Item::Pre(ActPre::Mu(h)));
                return Ok(true);
            }
            Tok::Ident(k) if k == "tau" => {
                self.bump();
                items.push(Item::Pre(ActPre::Tau));
            }
            Tok::Ident(_) => {
                let g = self.ident()?;
                if self.is_sym(".") {
                    items.push(Item::Pre(ActPre::Triggered(g)));
                } else {
                    items.push(Item::Tail(ActuatorBody::IterVar(g)));
                }
            }
            t => return self.error(format!("expected an actuator action, found {t}")),
        }
        Ok(false)
    }

    // ---- declarations and system ----

    fn sensor_ref(&mut self) -> PResult<(Label, SensorId)> {
        let l = Label(self.ident()?);
        self.expect_sym(".")?;
        Ok((l, self.id32()?))
    }

    fn literal(&mut self) -> PResult<Literal> {
        match self.term_atom()? {
            Term::Value(v) => Ok(v),
            Term::Var(x) => Ok(Literal::Atom(x)),
            _ => self.error("expected a literal".into()),
        }
    }

    fn edge(&mut self) -> PResult<(Label, Label)> {
        let a = Label(self.ident()?);
        self.expect_sym("->")?;
        Ok((a, Label(self.ident()?)))
    }

    fn component(&mut self) -> PResult<Option<Component>> {
        if self.eat_kw("store") {
            let mut vars = Vec::new();
            if self.eat_sym("{") {
                vars = self.comma_list("}", |p| p.ident())?;
                self.expect_sym("}")?;
            }
            return Ok(Some(Component::Store(StoreDecl { vars })));
        }
        if self.eat_kw("proc") {
            self.eat_sym(":");
            return Ok(Some(Component::Proc(self.process()?)));
        }
        if self.eat_kw("sensor") {
            let i = self.id32()?;
            self.expect_sym(":")?;
            return Ok(Some(Component::Sensor(self.sensor()?, i)));
        }
        if self.eat_kw("actuator") {
            let j = self.id32()?;
            self.expect_sym(":")?;
            return Ok(Some(Component::Actuator(self.actuator()?, j)));
        }
        Ok(None)
    }

    fn system(&mut self, spans: &mut BTreeMap<Label, (usize, usize)>) -> PResult<System> {
        self.expect_kw("system")?;
        self.expect_sym("{")?;
        let mut nodes = Vec::new();
        loop {
            self.eat_sym("|");
            if self.eat_sym("}") {
                break;
            }
            let at = self.here();
            self.expect_kw("node")?;
            let label = Label(self.ident()?);
            spans.entry(label.clone()).or_insert(at);
            self.expect_sym("{")?;
            let mut components = Vec::new();
            while !self.eat_sym("}") {
                match self.component()? {
                    Some(c) => components.push(c),
                    None => {
                        return self.error(format!("expected a node component, found {}", self.peek()))
                    }
                }
            }
            nodes.push(Node { label, components });
        }
        if !matches!(self.peek(), Tok::Eof) {
            return self.error(format!("unexpected {} after system", self.peek()));
        }
        Ok(System { nodes })
    }
}

type ItemFn<Pre, Body> = fn(&mut Parser, &mut Vec<Item<Pre, Body>>) -> PResult<bool>;

fn wrap_proc(p: ProcPre, k: Process) -> Process {
    let cont = Arc::new(k);
    match p {
        ProcPre::Out(terms, targets) => Process::MultiOut { terms, targets, cont },
        ProcPre::In(matches, binders) => Process::Input { matches, binders, cont },
        ProcPre::Assign(var, rhs) => Process::Assign { var, rhs, cont },
        ProcPre::Act(actuator, action) => Process::ActCmd { actuator, action, cont },
        ProcPre::Decrypt(subject, matches, binders, key) => {
            Process::Decrypt { subject, matches, binders, key, cont }
        }
        ProcPre::Mu(h) => Process::Iter(h, cont),
    }
}

/// Declarations are parsed first so that atoms are known when terms are read.
fn preamble(p: &mut Parser, prog: &mut Program) -> PResult<()> {
    loop {
        let kw = match p.peek() {
            Tok::Ident(s) if s != "system" => s.clone(),
            _ => return Ok(()),
        };
        p.bump();
        match kw.as_str() {
            "fun" => {
                let f = p.ident()?;
                p.expect_sym("/")?;
                let arity = usize::try_from(p.int()?).or_else(|_| p.error("negative arity".into()))?;
                let mut eval = EvalTag::Uninterpreted;
                if p.eat_sym("=") {
                    let tag = p.ident()?;
                    eval = match &*tag {
                        "uninterpreted" => EvalTag::Uninterpreted,
                        "is_a_car" => EvalTag::IsACar,
                        other => match Builtin::ALL.iter().find(|b| b.name() == other) {
                            Some(b) => EvalTag::Builtin(*b),
                            None => return p.error(format!("unknown evaluator {other}")),
                        },
                    };
                }
                prog.funs.declare(&f, arity, eval);
            }
            "key" => prog.keys.extend(p.comma_list(";", |p| p.ident())?),
            "atom" => {
                let xs = p.comma_list(";", |p| p.ident())?;
                p.atoms.extend(xs.iter().cloned());
                prog.atoms.extend(xs);
            }
            "comp" => {
                if p.eat_kw("all") {
                    let mut except = BTreeSet::new();
                    if p.eat_kw("except") {
                        p.expect_sym("{")?;
                        except = p.comma_list("}", |p| p.edge())?.into_iter().collect();
                        p.expect_sym("}")?;
                    }
                    prog.comp = CompRelation::All { except };
                } else {
                    p.expect_sym("{")?;
                    let es = p.comma_list("}", |p| p.edge())?;
                    p.expect_sym("}")?;
                    prog.comp = CompRelation::Only(es.into_iter().collect());
                }
            }
            "script" => {
                let r = p.sensor_ref()?;
                p.expect_sym("=")?;
                p.expect_sym("[")?;
                let values = p.comma_list("]", |p| p.literal())?;
                p.expect_sym("]")?;
                if values.is_empty() {
                    return p.error("sensor script must be nonempty".into());
                }
                let mode = if p.eat_kw("cycle") {
                    ScriptMode::Cycle
                } else if p.eat_kw("hold") {
                    ScriptMode::Hold
                } else if p.eat_kw("stuck") {
                    ScriptMode::Stuck
                } else {
                    ScriptMode::Cycle
                };
                prog.scripts.insert(r, Script { values, mode });
            }
            "camera" => {
                let r = p.comma_list(";", |p| p.sensor_ref())?;
                prog.cameras.extend(r);
            }
            "secret" => {
                let r = p.comma_list(";", |p| p.sensor_ref())?;
                prog.policy.secret.extend(r);
            }
            "confined" => {
                let r = p.comma_list(";", |p| p.sensor_ref())?;
                prog.policy.confined.extend(r);
            }
            "anonymiser" => {
                let fs = p.comma_list(";", |p| p.ident())?;
                prog.policy.anonymisers.extend(fs);
            }
            "level" => {
                let l = Label(p.ident()?);
                p.expect_sym("=")?;
                let neg = p.eat_sym("-");
                let n = p.int()?;
                prog.policy.levels.insert(l, if neg { -n } else { n });
            }
            "allowed" => {
                p.expect_sym("{")?;
                let ls = p.comma_list("}", |p| p.ident().map(Label))?;
                p.expect_sym("}")?;
                prog.policy.allowed.get_or_insert_with(BTreeSet::new).extend(ls);
            }
            "flow" => {
                let l = Label(p.ident()?);
                p.expect_sym("->")?;
                p.expect_sym("{")?;
                let ls = p.comma_list("}", |p| p.ident().map(Label))?;
                p.expect_sym("}")?;
                prog.policy
                    .flows
                    .get_or_insert_with(BTreeMap::new)
                    .entry(l)
                    .or_default()
                    .extend(ls);
            }
            other => {
                p.pos -= 1;
                return p.error(format!("unknown declaration `{other}`"));
            }
        }
        p.expect_sym(";")?;
    }
}

/// Parses a complete source file and validates it with [`well_formed`].
pub fn parse_system(src: &SourceSpec) -> Result<Program, Vec<ParseError>> {
    let toks = lex(&src.text).map_err(|e| vec![e])?;
    let mut p = Parser { toks, pos: 0, atoms: BTreeSet::new() };
    let mut prog = Program::default();
    let mut spans = BTreeMap::new();
    preamble(&mut p, &mut prog).map_err(|e| vec![e])?;
    prog.system = p.system(&mut spans).map_err(|e| vec![e])?;
    if let Err(ds) = well_formed(&prog) {
        return Err(ds
            .into_iter()
            .map(|d| {
                let (line, col) = d.node.as_ref().and_then(|l| spans.get(l).copied()).unwrap_or((1, 1));
                ParseError { line, col, message: d.to_string() }
            })
            .collect());
    }
    Ok(prog)
}

pub fn parse_program(text: &str) -> Result<Program, Vec<ParseError>> {
    parse_system(&SourceSpec::new("<input>", text))
}

/// Parses a standalone term. Bare identifiers are variables.
pub fn parse_term(text: &str) -> Result<Term, Vec<ParseError>> {
    let toks = lex(text).map_err(|e| vec![e])?;
    let mut p = Parser { toks, pos: 0, atoms: BTreeSet::new() };
    let t = p.term().map_err(|e| vec![e])?;
    if !matches!(p.peek(), Tok::Eof) {
        return Err(vec![p.error::<()>(format!("unexpected {}", p.peek())).unwrap_err()]);
    }
    Ok(t)
}
