//! Recursive-descent parser for the rule language.

use super::ast::*;
use super::lexer::{tokenize, Tok, Token};
use super::{RulesError, SyntaxError};
use crate::model::{RequestKind, SourceKind};

/// Nesting limit for parenthesized predicates; deeper input is a syntax error.
const MAX_DEPTH: usize = 64;

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    depth: usize,
}

type PResult<T> = Result<T, SyntaxError>;

impl Parser {
    fn new(src: &str) -> PResult<Self> {
        Ok(Parser {
            tokens: tokenize(src)?,
            pos: 0,
            depth: 0,
        })
    }

    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn advance(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if t.tok != Tok::Eof {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &[&str]) -> SyntaxError {
        let t = self.peek();
        SyntaxError {
            line: t.line,
            col: t.col,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: t.tok.to_string(),
        }
    }

    fn at_word(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Word(w) if w == kw)
    }

    fn eat_word(&mut self, kw: &str) -> bool {
        if self.at_word(kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_word(&mut self, kw: &str) -> PResult<()> {
        if self.eat_word(kw) {
            Ok(())
        } else {
            Err(self.error(&[&format!("`{kw}`")]))
        }
    }

    fn expect(&mut self, tok: Tok) -> PResult<()> {
        if self.peek().tok == tok {
            self.advance();
            Ok(())
        } else {
            Err(self.error(&[&tok.to_string()]))
        }
    }

    fn ident(&mut self, what: &str) -> PResult<String> {
        match &self.peek().tok {
            Tok::Word(w) if w.starts_with(|c: char| c.is_ascii_alphabetic() || c == '_') => {
                let w = w.clone();
                self.advance();
                Ok(w)
            }
            _ => Err(self.error(&[what])),
        }
    }

    fn int(&mut self) -> PResult<i64> {
        match self.peek().tok {
            Tok::Int(v, _) => {
                self.advance();
                Ok(v)
            }
            _ => Err(self.error(&["integer"])),
        }
    }

    fn ruleset(&mut self) -> PResult<Vec<(Workflow, usize)>> {
        let mut out = Vec::new();
        while self.peek().tok != Tok::Eof {
            let line = self.peek().line;
            if !self.at_word("workflow") {
                return Err(self.error(&["`workflow`", "end of input"]));
            }
            out.push((self.workflow()?, line));
        }
        Ok(out)
    }

    fn workflow(&mut self) -> PResult<Workflow> {
        self.expect_word("workflow")?;
        let name = match &self.peek().tok {
            Tok::Str(s) => {
                let s = s.clone();
                self.advance();
                s
            }
            _ => return Err(self.error(&["workflow name string"])),
        };
        self.expect_word("priority")?;
        let priority = self.int()?;
        self.expect_word("on")?;
        let selector = self.predicate()?;
        self.expect(Tok::LBrace)?;
        let mut body = Vec::new();
        loop {
            if self.at_word("step") {
                body.push(StepGroup::Sequential(self.step()?));
            } else if self.at_word("parallel") {
                body.push(self.parallel()?);
            } else if self.peek().tok == Tok::RBrace {
                self.advance();
                break;
            } else {
                return Err(self.error(&["`step`", "`parallel`", "`}`"]));
            }
        }
        Ok(Workflow {
            name,
            priority,
            selector,
            body,
        })
    }

    fn parallel(&mut self) -> PResult<StepGroup> {
        self.expect_word("parallel")?;
        self.expect(Tok::LBrace)?;
        let mut steps = Vec::new();
        while self.at_word("step") {
            steps.push(self.step()?);
        }
        if steps.len() < 2 {
            return Err(self.error(&["`step`"]));
        }
        self.expect(Tok::RBrace)?;
        Ok(StepGroup::Parallel(steps))
    }

    fn fpa_target(&mut self) -> PResult<FpaOperation> {
        self.expect_word("fpa")?;
        self.expect(Tok::Colon)?;
        let fpa = self.ident("adapter name")?;
        self.expect(Tok::Dot)?;
        let operation = self.ident("operation name")?;
        Ok(FpaOperation { fpa, operation })
    }

    fn step(&mut self) -> PResult<Step> {
        self.expect_word("step")?;
        let name = self.ident("step name")?;
        self.expect(Tok::Arrow)?;
        let FpaOperation { fpa, operation } = self.fpa_target()?;
        self.expect_word("mode")?;
        let mode = if self.eat_word("sync") {
            Mode::Sync
        } else if self.eat_word("async") {
            Mode::Async
        } else {
            return Err(self.error(&["`sync`", "`async`"]));
        };
        let guard = if self.eat_word("guard") {
            Some(self.predicate()?)
        } else {
            None
        };
        let mut on_error = OnError::Fail;
        let mut compensation = None;
        if self.eat_word("on_error") {
            if self.eat_word("fail") {
                on_error = OnError::Fail;
            } else if self.eat_word("skip") {
                on_error = OnError::Skip;
            } else if self.eat_word("retry") {
                self.expect(Tok::LParen)?;
                let n = self.int()?;
                if !(1..=MAX_RETRIES as i64).contains(&n) {
                    self.pos -= 1;
                    return Err(self.error(&["retry count 1..=10"]));
                }
                self.expect(Tok::RParen)?;
                on_error = OnError::Retry(n as u8);
            } else if self.eat_word("compensate") {
                on_error = OnError::Compensate;
                compensation = Some(self.fpa_target()?);
            } else {
                return Err(self.error(&["`fail`", "`skip`", "`retry`", "`compensate`"]));
            }
        }
        self.expect(Tok::Semi)?;
        Ok(Step {
            name,
            fpa,
            operation,
            mode,
            on_error,
            compensation,
            guard,
        })
    }

    fn predicate(&mut self) -> PResult<Predicate> {
        let mut left = self.conjunction()?;
        while self.eat_word("or") {
            let right = self.conjunction()?;
            left = Predicate::Or(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn conjunction(&mut self) -> PResult<Predicate> {
        let mut left = self.term()?;
        while self.eat_word("and") {
            let right = self.term()?;
            left = Predicate::And(Box::new(left), Box::new(right));
        }
        Ok(left)
    }

    fn term(&mut self) -> PResult<Predicate> {
        if self.eat_word("not") {
            let inner = self.atom()?;
            return Ok(Predicate::Not(Box::new(inner)));
        }
        self.atom()
    }

    fn atom(&mut self) -> PResult<Predicate> {
        if self.peek().tok == Tok::LParen {
            if self.depth >= MAX_DEPTH {
                return Err(self.error(&["shallower nesting"]));
            }
            self.advance();
            self.depth += 1;
            let inner = self.predicate()?;
            self.depth -= 1;
            self.expect(Tok::RParen)?;
            return Ok(inner);
        }
        if self.eat_word("kind") {
            self.expect(Tok::Eq)?;
            let kind = match &self.peek().tok {
                Tok::Word(w) => w.parse::<RequestKind>().ok(),
                _ => None,
            }
            .ok_or_else(|| self.error(&["ORDER", "EVENT", "PROCESS", "MESSAGE", "DATA"]))?;
            self.advance();
            return Ok(Predicate::Kind(kind));
        }
        if self.eat_word("source") {
            self.expect(Tok::Eq)?;
            let source = if self.eat_word("external") {
                SourceKind::External
            } else if self.eat_word("internal") {
                SourceKind::Internal
            } else {
                return Err(self.error(&["`external`", "`internal`"]));
            };
            return Ok(Predicate::Source(source));
        }
        if self.eat_word("attr") {
            let (entity, attribute) = self.entity_attribute()?;
            let cmp = match self.peek().tok {
                Tok::Eq => Comparison::Eq,
                Tok::Ne => Comparison::Ne,
                Tok::Lt => Comparison::Lt,
                Tok::Le => Comparison::Le,
                Tok::Gt => Comparison::Gt,
                Tok::Ge => Comparison::Ge,
                _ => return Err(self.error(&["`=`", "`!=`", "`<`", "`<=`", "`>`", "`>=`"])),
            };
            self.advance();
            let literal = self.literal()?;
            return Ok(Predicate::Compare {
                entity,
                attribute,
                cmp,
                literal,
            });
        }
        if self.eat_word("exists") {
            let (entity, attribute) = self.entity_attribute()?;
            return Ok(Predicate::Exists { entity, attribute });
        }
        Err(self.error(&["`(`", "`not`", "`kind`", "`source`", "`attr`", "`exists`"]))
    }

    /// `( seg/seg/... , IDENT )`
    fn entity_attribute(&mut self) -> PResult<(String, String)> {
        self.expect(Tok::LParen)?;
        let mut entity = self.entity_segment()?;
        while self.peek().tok == Tok::Slash {
            self.advance();
            entity.push('/');
            entity.push_str(&self.entity_segment()?);
        }
        self.expect(Tok::Comma)?;
        let attribute = self.ident("attribute name")?;
        self.expect(Tok::RParen)?;
        Ok((entity, attribute))
    }

    fn entity_segment(&mut self) -> PResult<String> {
        let seg = match &self.peek().tok {
            Tok::Word(w) => w.clone(),
            Tok::Int(v, text) if *v >= 0 => text.clone(),
            _ => return Err(self.error(&["entity segment"])),
        };
        self.advance();
        Ok(seg)
    }

    fn literal(&mut self) -> PResult<Literal> {
        let lit = match &self.peek().tok {
            Tok::Str(s) => Literal::Text(s.clone()),
            Tok::Int(v, _) => Literal::Integer(*v),
            Tok::Dec(d) => Literal::Decimal(*d),
            Tok::Word(w) if w == "true" => Literal::Boolean(true),
            Tok::Word(w) if w == "false" => Literal::Boolean(false),
            _ => return Err(self.error(&["string", "integer", "decimal", "`true`", "`false`"])),
        };
        self.advance();
        Ok(lit)
    }
}

/// Parses a full rule program and runs the semantic checks.
pub fn parse_rules(src: &str) -> Result<RuleSet, RulesError> {
    let mut p = Parser::new(src)?;
    let workflows = p.ruleset()?;
    let lines: Vec<usize> = workflows.iter().map(|(_, l)| *l).collect();
    let workflows: Vec<Workflow> = workflows.into_iter().map(|(w, _)| w).collect();
    RuleSet::new(workflows.clone()).map_err(|mut e| {
        if let Some(name) = e.workflow.as_deref() {
            // a duplicate name points at its second declaration
            let hits: Vec<usize> = workflows
                .iter()
                .zip(&lines)
                .filter(|(w, _)| w.name == name)
                .map(|(_, l)| *l)
                .collect();
            e.line = hits.get(1).or(hits.first()).copied();
        }
        RulesError::Semantic(e)
    })
}

/// Parses a standalone predicate, e.g. a mock script `match` expression.
pub fn parse_predicate(src: &str) -> Result<Predicate, SyntaxError> {
    let mut p = Parser::new(src)?;
    let pred = p.predicate()?;
    if p.peek().tok != Tok::Eof {
        return Err(p.error(&["`and`", "`or`", "end of input"]));
    }
    Ok(pred)
}

/// Parses a single `step ... ;` declaration, as carried by plan amendments.
pub fn parse_step(src: &str) -> Result<Step, RulesError> {
    let mut p = Parser::new(src)?;
    let step = p.step()?;
    if p.peek().tok != Tok::Eof {
        return Err(p.error(&["end of input"]).into());
    }
    step.validate()
        .map_err(|m| RulesError::Semantic(super::SemanticError::new(None, m)))?;
    Ok(step)
}
