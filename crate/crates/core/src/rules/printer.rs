//! Canonical pretty-printer. `parse_rules(print_rules(rs)) == rs` for every valid rule set.

use std::fmt::Write;

use super::ast::*;

pub fn print_rules(rules: &RuleSet) -> String {
    print_workflows(rules.workflows())
}

pub(crate) fn print_workflows(workflows: &[Workflow]) -> String {
    let mut out = String::new();
    for (i, wf) in workflows.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        print_workflow(&mut out, wf);
    }
    out
}

fn print_workflow(out: &mut String, wf: &Workflow) {
    let _ = writeln!(
        out,
        "workflow {} priority {} on {} {{",
        quote(&wf.name),
        wf.priority,
        print_predicate(&wf.selector)
    );
    for group in &wf.body {
        match group {
            StepGroup::Sequential(step) => {
                let _ = writeln!(out, "  {}", print_step(step));
            }
            StepGroup::Parallel(steps) => {
                out.push_str("  parallel {\n");
                for step in steps {
                    let _ = writeln!(out, "    {}", print_step(step));
                }
                out.push_str("  }\n");
            }
        }
    }
    out.push_str("}\n");
}

pub fn print_step(step: &Step) -> String {
    let mut s = format!(
        "step {} -> fpa:{}.{} mode {}",
        step.name,
        step.fpa,
        step.operation,
        match step.mode {
            Mode::Sync => "sync",
            Mode::Async => "async",
        }
    );
    if let Some(g) = &step.guard {
        let _ = write!(s, " guard {}", print_predicate(g));
    }
    match (step.on_error, &step.compensation) {
        (OnError::Fail, _) => s.push_str(" on_error fail"),
        (OnError::Skip, _) => s.push_str(" on_error skip"),
        (OnError::Retry(n), _) => {
            let _ = write!(s, " on_error retry({n})");
        }
        (OnError::Compensate, Some(c)) => {
            let _ = write!(s, " on_error compensate {c}");
        }
        // not produced by a validated AST
        (OnError::Compensate, None) => s.push_str(" on_error compensate"),
    }
    s.push(';');
    s
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn print_literal(lit: &Literal) -> String {
    match lit {
        Literal::Text(s) => quote(s),
        Literal::Integer(i) => i.to_string(),
        Literal::Decimal(d) => d.to_string(),
        Literal::Boolean(b) => b.to_string(),
    }
}

#[derive(PartialEq, PartialOrd, Clone, Copy)]
enum Prec {
    Or,
    And,
    Unary,
}

pub fn print_predicate(p: &Predicate) -> String {
    let mut out = String::new();
    write_pred(&mut out, p, Prec::Or);
    out
}

fn prec_of(p: &Predicate) -> Prec {
    match p {
        Predicate::Or(..) => Prec::Or,
        Predicate::And(..) => Prec::And,
        _ => Prec::Unary,
    }
}

/// Writes `p`, parenthesized when its precedence is below `min`.
fn write_pred(out: &mut String, p: &Predicate, min: Prec) {
    if prec_of(p) < min {
        out.push('(');
        write_pred(out, p, Prec::Or);
        out.push(')');
        return;
    }
    match p {
        Predicate::Kind(k) => {
            let _ = write!(out, "kind = {k}");
        }
        Predicate::Source(s) => {
            let _ = write!(out, "source = {}", s.as_str().to_ascii_lowercase());
        }
        Predicate::Compare {
            entity,
            attribute,
            cmp,
            literal,
        } => {
            let _ = write!(
                out,
                "attr({entity}, {attribute}) {} {}",
                cmp.symbol(),
                print_literal(literal)
            );
        }
        Predicate::Exists { entity, attribute } => {
            let _ = write!(out, "exists({entity}, {attribute})");
        }
        Predicate::Not(inner) => {
            out.push_str("not ");
            // `not` takes a single atom; anything else, including another `not`, needs parens
            if matches!(**inner, Predicate::Not(_)) {
                out.push('(');
                write_pred(out, inner, Prec::Or);
                out.push(')');
            } else {
                write_pred(out, inner, Prec::Unary);
            }
        }
        // left-associative: a same-precedence right operand needs parens
        Predicate::And(l, r) => {
            write_pred(out, l, Prec::And);
            out.push_str(" and ");
            write_pred(out, r, Prec::Unary);
        }
        Predicate::Or(l, r) => {
            write_pred(out, l, Prec::Or);
            out.push_str(" or ");
            write_pred(out, r, Prec::And);
        }
    }
}
