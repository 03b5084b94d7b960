//! Rule language: parsing, printing, predicate evaluation, routing and
//! compilation of a matched workflow into a step DAG.

mod ast;
mod eval;
mod lexer;
mod parser;
mod plan;
mod printer;
mod routing;

use std::fmt;

pub use ast::*;
pub use eval::{compare, evaluate_in, evaluate_predicate, EvalContext};
pub use parser::{parse_predicate, parse_rules, parse_step};
pub use plan::{compile_plan, OrchestrationPlan, PlanNode, PlanViolation};
pub use printer::{print_predicate, print_rules, print_step};
pub use routing::match_workflow;

use crate::model::RequestState;

/// 1-based position of the offending token and what would have been accepted there.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntaxError {
    pub line: usize,
    pub col: usize,
    pub expected: Vec<String>,
    pub found: String,
}

impl fmt::Display for SyntaxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "line {}, column {}: expected {}, found {}",
            self.line,
            self.col,
            self.expected.join(" or "),
            self.found
        )
    }
}

impl std::error::Error for SyntaxError {}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticError {
    pub workflow: Option<String>,
    pub line: Option<usize>,
    pub message: String,
}

impl SemanticError {
    pub fn new(workflow: Option<&str>, message: String) -> Self {
        SemanticError {
            workflow: workflow.map(str::to_string),
            line: None,
            message,
        }
    }
}

impl fmt::Display for SemanticError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(line) = self.line {
            write!(f, "line {line}: ")?;
        }
        if let Some(wf) = &self.workflow {
            write!(f, "workflow {wf:?}: ")?;
        }
        f.write_str(&self.message)
    }
}

impl std::error::Error for SemanticError {}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RulesError {
    #[error("syntax error at {0}")]
    Syntax(#[from] SyntaxError),
    #[error("semantic error: {0}")]
    Semantic(SemanticError),
    #[error("no workflow selector matches the request")]
    NoRoute,
    #[error("request in state {0} has no normalized record")]
    NotNormalized(RequestState),
    #[error("every step was guarded out")]
    EmptyPlan,
    #[error("invalid plan: {0}")]
    InvalidPlan(PlanViolation),
}

impl RulesError {
    pub fn code(&self) -> &'static str {
        match self {
            RulesError::Syntax(_) => "SYNTAX_ERROR",
            RulesError::Semantic(_) => "SEMANTIC_ERROR",
            RulesError::NoRoute => "NO_ROUTE",
            RulesError::NotNormalized(_) => "NOT_NORMALIZED",
            RulesError::EmptyPlan => "EMPTY_PLAN",
            RulesError::InvalidPlan(_) => "INVALID_PLAN",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RequestKind;

    pub(crate) const SAMPLE: &str = r#"workflow "adsl-activation" priority 10 on kind = ORDER and attr(order/R, product) = "ADSL" {
  step check -> fpa:crm.validate mode sync on_error fail;
  parallel {
    step dir  -> fpa:ldap.create_entry mode async on_error retry(3);
    step auth -> fpa:radius.add_user  mode async on_error retry(3);
  }
  step bill -> fpa:billing.open_account mode sync on_error compensate fpa:crm.rollback;
}
"#;

    #[test]
    fn sample_program_golden_ast() {
        let rs = parse_rules(SAMPLE).unwrap();
        let expected = Workflow {
            name: "adsl-activation".into(),
            priority: 10,
            selector: Predicate::Kind(RequestKind::Order).and(Predicate::attr(
                "order/R",
                "product",
                Comparison::Eq,
                Literal::Text("ADSL".into()),
            )),
            body: vec![
                StepGroup::Sequential(Step::new("check", "crm", "validate", Mode::Sync)),
                StepGroup::Parallel(vec![
                    Step::new("dir", "ldap", "create_entry", Mode::Async)
                        .on_error(OnError::Retry(3)),
                    Step::new("auth", "radius", "add_user", Mode::Async)
                        .on_error(OnError::Retry(3)),
                ]),
                StepGroup::Sequential(
                    Step::new("bill", "billing", "open_account", Mode::Sync)
                        .compensated_by("crm", "rollback"),
                ),
            ],
        };
        assert_eq!(rs.workflows(), [expected]);
        assert_eq!(rs.workflows()[0].body.len(), 3);
    }

    #[test]
    fn guards_survive_round_trip() {
        let src = r#"workflow "g" priority 1 on source = internal {
  step a -> fpa:msan.configure_port mode sync guard exists(customer/C1, line_id) or not attr(x/2, n) < 3 on_error compensate fpa:msan.release_port;
}"#;
        let rs = parse_rules(src).unwrap();
        assert_eq!(parse_rules(&print_rules(&rs)).unwrap(), rs);
    }

    #[test]
    fn print_parse_round_trip_on_sample() {
        let rs = parse_rules(SAMPLE).unwrap();
        let printed = print_rules(&rs);
        let again = parse_rules(&printed).unwrap();
        assert_eq!(again, rs);
        assert_eq!(print_rules(&again), printed);
    }

    #[test]
    fn version_tracks_content_not_layout() {
        let a = parse_rules(SAMPLE).unwrap();
        let b = parse_rules(&SAMPLE.replace("\n  ", "\n        ")).unwrap();
        let c = parse_rules(&SAMPLE.replace("priority 10", "priority 11")).unwrap();
        assert_eq!(a.version(), b.version());
        assert_ne!(a.version(), c.version());
    }

    #[test]
    fn unclosed_workflow_reports_line_one() {
        match parse_rules(r#"workflow "x" {"#) {
            Err(RulesError::Syntax(e)) => assert_eq!(e.line, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_error_position_and_expected() {
        let e = match parse_rules(
            "workflow \"x\" priority 1 on kind = ORDER {\n  step a -> fpa:crm mode sync;\n}",
        ) {
            Err(RulesError::Syntax(e)) => e,
            other => panic!("{other:?}"),
        };
        assert_eq!((e.line, e.col), (2, 21));
        assert_eq!(e.expected, ["`.`"]);
    }

    #[test]
    fn semantic_errors() {
        let dup = "workflow \"x\" priority 1 on kind = ORDER { step a -> fpa:c.o mode sync; }\n\
                   workflow \"x\" priority 2 on kind = ORDER { step a -> fpa:c.o mode sync; }";
        match parse_rules(dup) {
            Err(RulesError::Semantic(e)) => {
                assert_eq!(e.workflow.as_deref(), Some("x"));
                assert_eq!(e.line, Some(2));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_rules(r#"workflow "e" priority 1 on kind = ORDER { }"#),
            Err(RulesError::Semantic(_))
        ));
        let dup_step = r#"workflow "d" priority 1 on kind = ORDER { step a -> fpa:c.o mode sync; step a -> fpa:c.p mode sync; }"#;
        assert!(matches!(
            parse_rules(dup_step),
            Err(RulesError::Semantic(_))
        ));
        let same_target = r#"workflow "p" priority 1 on kind = ORDER { parallel { step a -> fpa:c.o mode sync; step b -> fpa:c.o mode sync; } }"#;
        assert!(matches!(
            parse_rules(same_target),
            Err(RulesError::Semantic(_))
        ));
    }

    #[test]
    fn retry_bounds() {
        let prog = |n: &str| {
            format!(
                r#"workflow "r" priority 1 on kind = ORDER {{ step a -> fpa:c.o mode sync on_error retry({n}); }}"#
            )
        };
        assert!(parse_rules(&prog("1")).is_ok());
        assert!(parse_rules(&prog("10")).is_ok());
        assert!(parse_rules(&prog("0")).is_err());
        assert!(parse_rules(&prog("11")).is_err());
    }

    #[test]
    fn deep_nesting_is_a_syntax_error_not_a_crash() {
        let src = format!("{}kind = ORDER{}", "(".repeat(10_000), ")".repeat(10_000));
        assert!(parse_predicate(&src).is_err());
        let ok = format!("{}kind = ORDER{}", "(".repeat(60), ")".repeat(60));
        assert!(parse_predicate(&ok).is_ok());
    }

    #[test]
    fn predicate_printing_keeps_structure() {
        for src in [
            "kind = ORDER or kind = EVENT and kind = DATA",
            "(kind = ORDER or kind = EVENT) and kind = DATA",
            "kind = ORDER and (kind = EVENT and kind = DATA)",
            "not (not kind = ORDER)",
            "not (kind = ORDER or source = internal)",
            "attr(a/1/b, x) >= -2.5 or exists(a, y)",
        ] {
            let p = parse_predicate(src).unwrap();
            assert_eq!(parse_predicate(&print_predicate(&p)).unwrap(), p, "{src}");
        }
    }

    #[test]
    fn parse_single_step() {
        let s = parse_step("step x -> fpa:erp.book mode async on_error retry(2);").unwrap();
        assert_eq!(
            s,
            Step::new("x", "erp", "book", Mode::Async).on_error(OnError::Retry(2))
        );
        assert!(parse_step("step x -> fpa:erp.book mode async; trailing").is_err());
    }
}
