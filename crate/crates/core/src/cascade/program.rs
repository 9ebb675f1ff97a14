//! Rule-program representation and its text format.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::classes::CellClass;

pub const TABLE1_RULES: &str = include_str!("../../rules/table1.rules");
pub const TABLE1_STEP10_GLOBAL_RULES: &str = include_str!("../../rules/table1_step10_global.rules");
pub const TABLE1_STEP13_LITERAL_RULES: &str = include_str!("../../rules/table1_step13_literal.rules");

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("line {line}: syntax error: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: reference to undefined group {name:?}")]
    UndefinedGroup { line: usize, name: String },
    #[error("line {line}: group {name:?} is used before it is defined")]
    GroupBeforeDefinition { line: usize, name: String },
    #[error("line {line}: group {name:?} is already defined")]
    DuplicateGroup { line: usize, name: String },
    #[error("line {line}: unknown class {name:?}")]
    UnknownClass { line: usize, name: String },
    #[error("line {line}: step number {number} does not follow step {previous}")]
    StepOrder {
        line: usize,
        number: u32,
        previous: u32,
    },
    #[error("line {line}: DROP needs a group scope, not `all`")]
    DropWithoutGroup { line: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AtomKind {
    Stain,
    Group,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Expr {
    Atom {
        kind: AtomKind,
        name: String,
        positive: bool,
    },
    Not(Box<Expr>),
    And(Vec<Expr>),
    Or(Vec<Expr>),
}

impl Expr {
    fn collect(&self, kind: AtomKind, out: &mut BTreeSet<String>) {
        match self {
            Expr::Atom { kind: k, name, .. } if *k == kind => {
                out.insert(name.clone());
            }
            Expr::Atom { .. } => {}
            Expr::Not(e) => e.collect(kind, out),
            Expr::And(es) | Expr::Or(es) => es.iter().for_each(|e| e.collect(kind, out)),
        }
    }

    pub fn stains(&self) -> BTreeSet<String> {
        let mut s = BTreeSet::new();
        self.collect(AtomKind::Stain, &mut s);
        s
    }

    pub fn groups(&self) -> BTreeSet<String> {
        let mut s = BTreeSet::new();
        self.collect(AtomKind::Group, &mut s);
        s
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, parent: u8) -> fmt::Result {
        // precedence: or = 1, and = 2, not/atom = 3
        match self {
            Expr::Atom { name, positive, .. } => {
                write!(f, "{name}{}", if *positive { '+' } else { '-' })
            }
            Expr::Not(e) => {
                f.write_str("not ")?;
                e.fmt_prec(f, 3)
            }
            Expr::And(es) | Expr::Or(es) => {
                let (prec, op) = if matches!(self, Expr::And(_)) { (2, " and ") } else { (1, " or ") };
                if prec < parent {
                    f.write_str("(")?;
                }
                for (i, e) in es.iter().enumerate() {
                    if i > 0 {
                        f.write_str(op)?;
                    }
                    e.fmt_prec(f, prec + 1)?;
                }
                if prec < parent {
                    f.write_str(")")?;
                }
                Ok(())
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Scope {
    All,
    Group(String),
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::All => f.write_str("all"),
            Scope::Group(g) => f.write_str(g),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExcludeMode {
    /// The instance is removed from the cascade and ends `excluded`.
    Kill,
    /// The instance only loses membership of the scope group.
    Drop,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Action {
    DefineGroup(String),
    Exclude { scope: Scope, mode: ExcludeMode },
    Annotate { class: CellClass, scope: Scope },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Step {
    /// Step number as written in the program; reported in traces.
    pub number: u32,
    pub action: Action,
    pub predicate: Expr,
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "STEP {} ", self.number)?;
        match &self.action {
            Action::DefineGroup(g) => write!(f, "DEFINE_GROUP {g}")?,
            Action::Exclude { scope, mode } => write!(
                f,
                "EXCLUDE {scope} {}",
                if *mode == ExcludeMode::Kill { "KILL" } else { "DROP" }
            )?,
            Action::Annotate { class, scope } => write!(f, "ANNOTATE {class} {scope}")?,
        }
        write!(f, " := {}", self.predicate)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RuleProgram {
    pub steps: Vec<Step>,
}

impl RuleProgram {
    /// The shipped 31-step labelling cascade.
    pub fn table1() -> Self {
        parse_rule_program(TABLE1_RULES).expect("shipped rule program parses")
    }

    pub fn parse(text: &str) -> Result<Self, ParseError> {
        parse_rule_program(text)
    }

    /// Stains referenced anywhere in the program, sorted.
    pub fn stains(&self) -> Vec<String> {
        let mut s = BTreeSet::new();
        for step in &self.steps {
            step.predicate.collect(AtomKind::Stain, &mut s);
        }
        s.into_iter().collect()
    }

    /// Group names in definition order.
    pub fn groups(&self) -> Vec<String> {
        self.steps
            .iter()
            .filter_map(|s| match &s.action {
                Action::DefineGroup(g) => Some(g.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

impl fmt::Display for RuleProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.steps {
            writeln!(f, "{s}")?;
        }
        Ok(())
    }
}

impl std::str::FromStr for RuleProgram {
    type Err = ParseError;
    fn from_str(s: &str) -> Result<Self, ParseError> {
        parse_rule_program(s)
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Word(String),
    Open,
    Close,
}

fn tokenize(line: usize, text: &str) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some(&(i, c)) = chars.peek() {
        match c {
            c if c.is_whitespace() => {
                chars.next();
            }
            '(' => {
                out.push(Token::Open);
                chars.next();
            }
            ')' => {
                out.push(Token::Close);
                chars.next();
            }
            c if c.is_ascii_alphanumeric() || c == '_' => {
                let mut end = i;
                while let Some(&(j, c)) = chars.peek() {
                    if c.is_ascii_alphanumeric() || c == '_' {
                        end = j + c.len_utf8();
                        chars.next();
                    } else {
                        break;
                    }
                }
                // a trailing sign belongs to the atom
                if let Some(&(j, s @ ('+' | '-'))) = chars.peek() {
                    end = j + s.len_utf8();
                    chars.next();
                }
                out.push(Token::Word(text[i..end].to_string()));
            }
            other => {
                return Err(ParseError::Syntax {
                    line,
                    message: format!("unexpected character {other:?}"),
                })
            }
        }
    }
    Ok(out)
}

struct ExprParser<'a> {
    tokens: &'a [Token],
    pos: usize,
    line: usize,
    groups: &'a BTreeSet<String>,
}

impl ExprParser<'_> {
    fn syntax(&self, message: impl Into<String>) -> ParseError {
        ParseError::Syntax {
            line: self.line,
            message: message.into(),
        }
    }

    fn peek_keyword(&self, kw: &str) -> bool {
        matches!(self.tokens.get(self.pos), Some(Token::Word(w)) if w.eq_ignore_ascii_case(kw))
    }

    fn parse_or(&mut self) -> Result<Expr, ParseError> {
        let mut terms = vec![self.parse_and()?];
        while self.peek_keyword("or") {
            self.pos += 1;
            terms.push(self.parse_and()?);
        }
        Ok(if terms.len() == 1 { terms.pop().unwrap() } else { Expr::Or(terms) })
    }

    fn parse_and(&mut self) -> Result<Expr, ParseError> {
        let mut terms = vec![self.parse_unary()?];
        while self.peek_keyword("and") {
            self.pos += 1;
            terms.push(self.parse_unary()?);
        }
        Ok(if terms.len() == 1 { terms.pop().unwrap() } else { Expr::And(terms) })
    }

    fn parse_unary(&mut self) -> Result<Expr, ParseError> {
        match self.tokens.get(self.pos) {
            None => Err(self.syntax("expression ends early")),
            Some(Token::Close) => Err(self.syntax("unexpected `)`")),
            Some(Token::Open) => {
                self.pos += 1;
                let e = self.parse_or()?;
                if self.tokens.get(self.pos) != Some(&Token::Close) {
                    return Err(self.syntax("missing `)`"));
                }
                self.pos += 1;
                Ok(e)
            }
            Some(Token::Word(w)) if w.eq_ignore_ascii_case("not") => {
                self.pos += 1;
                Ok(Expr::Not(Box::new(self.parse_unary()?)))
            }
            Some(Token::Word(w)) if ["and", "or"].iter().any(|k| w.eq_ignore_ascii_case(k)) => {
                Err(self.syntax(format!("unexpected operator `{w}`")))
            }
            Some(Token::Word(w)) => {
                self.pos += 1;
                self.atom(w)
            }
        }
    }

    fn atom(&self, word: &str) -> Result<Expr, ParseError> {
        let (name, sign) = match word.as_bytes().last() {
            Some(b'+') => (&word[..word.len() - 1], Some(true)),
            Some(b'-') => (&word[..word.len() - 1], Some(false)),
            _ => (word, None),
        };
        if self.groups.contains(name) {
            return Ok(Expr::Atom {
                kind: AtomKind::Group,
                name: name.to_string(),
                positive: sign.unwrap_or(true),
            });
        }
        match sign {
            Some(positive) => Ok(Expr::Atom {
                kind: AtomKind::Stain,
                name: name.to_string(),
                positive,
            }),
            // an unsigned name can only be a group
            None => Err(ParseError::UndefinedGroup {
                line: self.line,
                name: name.to_string(),
            }),
        }
    }
}

fn expect_word<'t>(line: usize, tokens: &'t [Token], pos: usize, what: &str) -> Result<&'t str, ParseError> {
    match tokens.get(pos) {
        Some(Token::Word(w)) => Ok(w),
        _ => Err(ParseError::Syntax {
            line,
            message: format!("expected {what}"),
        }),
    }
}

fn parse_scope(line: usize, word: &str, groups: &BTreeSet<String>) -> Result<Scope, ParseError> {
    if word.eq_ignore_ascii_case("all") {
        Ok(Scope::All)
    } else if groups.contains(word) {
        Ok(Scope::Group(word.to_string()))
    } else {
        Err(ParseError::UndefinedGroup {
            line,
            name: word.to_string(),
        })
    }
}

/// Parses rule-program text. Blank lines and `#` comments are ignored.
pub fn parse_rule_program(text: &str) -> Result<RuleProgram, ParseError> {
    let mut steps = Vec::new();
    let mut groups = BTreeSet::new();
    // (stain-atom name, line) for the forward-reference check
    let mut stain_uses: Vec<(String, usize)> = Vec::new();
    let mut previous = 0u32;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (head, body) = content.split_once(":=").ok_or(ParseError::Syntax {
            line,
            message: "missing `:=`".into(),
        })?;
        let head: Vec<&str> = head.split_whitespace().collect();
        if head.first().map(|w| w.eq_ignore_ascii_case("STEP")) != Some(true) {
            return Err(ParseError::Syntax {
                line,
                message: "line must start with STEP".into(),
            });
        }
        let number: u32 = head
            .get(1)
            .and_then(|n| n.parse().ok())
            .ok_or(ParseError::Syntax {
                line,
                message: "expected a step number after STEP".into(),
            })?;
        if number <= previous {
            return Err(ParseError::StepOrder {
                line,
                number,
                previous,
            });
        }
        previous = number;

        let head_tokens: Vec<Token> = head[2..].iter().map(|w| Token::Word(w.to_string())).collect();
        let verb = expect_word(line, &head_tokens, 0, "a verb")?.to_ascii_uppercase();
        let (action, arity) = match verb.as_str() {
            "DEFINE_GROUP" => {
                let name = expect_word(line, &head_tokens, 1, "a group name")?;
                if groups.contains(name) {
                    return Err(ParseError::DuplicateGroup {
                        line,
                        name: name.to_string(),
                    });
                }
                if !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                    return Err(ParseError::Syntax {
                        line,
                        message: format!("invalid group name {name:?}"),
                    });
                }
                (Action::DefineGroup(name.to_string()), 2)
            }
            "EXCLUDE" => {
                let scope = parse_scope(line, expect_word(line, &head_tokens, 1, "a scope")?, &groups)?;
                let (mode, arity) = match head_tokens.get(2) {
                    Some(Token::Word(m)) if m.eq_ignore_ascii_case("KILL") => (ExcludeMode::Kill, 3),
                    Some(Token::Word(m)) if m.eq_ignore_ascii_case("DROP") => (ExcludeMode::Drop, 3),
                    Some(Token::Word(m)) => {
                        return Err(ParseError::Syntax {
                            line,
                            message: format!("unknown exclude mode {m:?}"),
                        })
                    }
                    _ => (ExcludeMode::Kill, 2),
                };
                if mode == ExcludeMode::Drop && scope == Scope::All {
                    return Err(ParseError::DropWithoutGroup { line });
                }
                (Action::Exclude { scope, mode }, arity)
            }
            "ANNOTATE" => {
                let class_name = expect_word(line, &head_tokens, 1, "a class name")?;
                let class: CellClass = class_name.parse().map_err(|_| ParseError::UnknownClass {
                    line,
                    name: class_name.to_string(),
                })?;
                let scope = parse_scope(line, expect_word(line, &head_tokens, 2, "a scope")?, &groups)?;
                (Action::Annotate { class, scope }, 3)
            }
            other => {
                return Err(ParseError::Syntax {
                    line,
                    message: format!("unknown verb {other:?}"),
                })
            }
        };
        if head_tokens.len() != arity {
            return Err(ParseError::Syntax {
                line,
                message: format!("unexpected `{}` before `:=`", head[2 + arity]),
            });
        }

        let tokens = tokenize(line, body)?;
        let mut parser = ExprParser {
            tokens: &tokens,
            pos: 0,
            line,
            groups: &groups,
        };
        let predicate = parser.parse_or()?;
        if parser.pos != tokens.len() {
            return Err(ParseError::Syntax {
                line,
                message: "trailing tokens after expression".into(),
            });
        }
        stain_uses.extend(predicate.stains().into_iter().map(|s| (s, line)));
        if let Action::DefineGroup(name) = &action {
            if let Some((_, used_at)) = stain_uses.iter().find(|(s, _)| s == name) {
                return Err(ParseError::GroupBeforeDefinition {
                    line: *used_at,
                    name: name.clone(),
                });
            }
            groups.insert(name.clone());
        }
        steps.push(Step {
            number,
            action,
            predicate,
        });
    }
    Ok(RuleProgram { steps })
}
