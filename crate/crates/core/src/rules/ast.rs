use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::printer;
use super::SemanticError;
use crate::model::{Decimal4, RequestKind, SourceKind};

pub const MAX_RETRIES: u8 = 10;

/// A parsed rule program: workflows in declaration order.
///
/// `version` is derived from the canonical printed form, so two rule sets
/// with the same content always carry the same version.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleSet {
    version: String,
    workflows: Vec<Workflow>,
}

impl RuleSet {
    pub fn new(workflows: Vec<Workflow>) -> Result<Self, SemanticError> {
        let mut names = BTreeSet::new();
        for wf in &workflows {
            if !names.insert(wf.name.as_str()) {
                return Err(SemanticError::new(
                    Some(&wf.name),
                    format!("duplicate workflow name {:?}", wf.name),
                ));
            }
            wf.validate()?;
        }
        let printed = printer::print_workflows(&workflows);
        let digest = Sha256::digest(printed.as_bytes());
        let version = hex::encode(&digest[..8]);
        Ok(RuleSet { version, workflows })
    }

    pub fn empty() -> Self {
        RuleSet::new(Vec::new()).expect("empty rule set is valid")
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn workflows(&self) -> &[Workflow] {
        &self.workflows
    }

    pub fn workflow(&self, name: &str) -> Option<&Workflow> {
        self.workflows.iter().find(|w| w.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workflow {
    pub name: String,
    pub priority: i64,
    pub selector: Predicate,
    pub body: Vec<StepGroup>,
}

impl Workflow {
    pub fn steps(&self) -> impl Iterator<Item = &Step> {
        self.body.iter().flat_map(|g| g.steps())
    }

    pub fn validate(&self) -> Result<(), SemanticError> {
        let err = |msg: String| Err(SemanticError::new(Some(&self.name), msg));
        if self.body.is_empty() {
            return err("workflow body is empty".into());
        }
        let mut names = BTreeSet::new();
        for group in &self.body {
            if let StepGroup::Parallel(steps) = group {
                if steps.len() < 2 {
                    return err("parallel group needs at least two steps".into());
                }
                let mut targets = BTreeSet::new();
                for s in steps {
                    if !targets.insert((s.fpa.as_str(), s.operation.as_str())) {
                        return err(format!(
                            "parallel steps share target fpa:{}.{}",
                            s.fpa, s.operation
                        ));
                    }
                }
            }
            for step in group.steps() {
                if !names.insert(step.name.as_str()) {
                    return err(format!("duplicate step name {:?}", step.name));
                }
                step.validate()
                    .map_err(|m| SemanticError::new(Some(&self.name), m))?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepGroup {
    Sequential(Step),
    Parallel(Vec<Step>),
}

impl StepGroup {
    pub fn steps(&self) -> &[Step] {
        match self {
            StepGroup::Sequential(s) => std::slice::from_ref(s),
            StepGroup::Parallel(v) => v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FpaOperation {
    pub fpa: String,
    pub operation: String,
}

impl fmt::Display for FpaOperation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "fpa:{}.{}", self.fpa, self.operation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    Sync,
    Async,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OnError {
    Fail,
    Skip,
    Retry(u8),
    Compensate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub name: String,
    pub fpa: String,
    pub operation: String,
    pub mode: Mode,
    pub on_error: OnError,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compensation: Option<FpaOperation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guard: Option<Predicate>,
}

impl Step {
    pub fn new(name: &str, fpa: &str, operation: &str, mode: Mode) -> Self {
        Step {
            name: name.to_string(),
            fpa: fpa.to_string(),
            operation: operation.to_string(),
            mode,
            on_error: OnError::Fail,
            compensation: None,
            guard: None,
        }
    }

    pub fn on_error(mut self, policy: OnError) -> Self {
        self.on_error = policy;
        self
    }

    pub fn compensated_by(mut self, fpa: &str, operation: &str) -> Self {
        self.on_error = OnError::Compensate;
        self.compensation = Some(FpaOperation {
            fpa: fpa.to_string(),
            operation: operation.to_string(),
        });
        self
    }

    pub fn guarded(mut self, guard: Predicate) -> Self {
        self.guard = Some(guard);
        self
    }

    pub fn target(&self) -> FpaOperation {
        FpaOperation {
            fpa: self.fpa.clone(),
            operation: self.operation.clone(),
        }
    }

    pub fn retry_bound(&self) -> u32 {
        match self.on_error {
            OnError::Retry(n) => n as u32,
            _ => 0,
        }
    }

    pub(crate) fn validate(&self) -> Result<(), String> {
        if let OnError::Retry(n) = self.on_error {
            if !(1..=MAX_RETRIES).contains(&n) {
                return Err(format!(
                    "step {}: retry count {n} outside 1..={MAX_RETRIES}",
                    self.name
                ));
            }
        }
        match (self.on_error, &self.compensation) {
            (OnError::Compensate, None) => Err(format!(
                "step {}: on_error compensate without a compensation target",
                self.name
            )),
            (policy, Some(c)) if policy != OnError::Compensate => Err(format!(
                "step {}: dangling compensation {c} without on_error compensate",
                self.name
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Comparison {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl Comparison {
    pub const ALL: [Comparison; 6] = [
        Comparison::Eq,
        Comparison::Ne,
        Comparison::Lt,
        Comparison::Le,
        Comparison::Gt,
        Comparison::Ge,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            Comparison::Eq => "=",
            Comparison::Ne => "!=",
            Comparison::Lt => "<",
            Comparison::Le => "<=",
            Comparison::Gt => ">",
            Comparison::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Literal {
    Text(String),
    Integer(i64),
    Decimal(Decimal4),
    Boolean(bool),
}

/// Routing and guard conditions.
///
/// `and` binds tighter than `or`; both associate to the left.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Predicate {
    Kind(RequestKind),
    Source(SourceKind),
    Compare {
        entity: String,
        attribute: String,
        cmp: Comparison,
        literal: Literal,
    },
    Exists {
        entity: String,
        attribute: String,
    },
    Not(Box<Predicate>),
    And(Box<Predicate>, Box<Predicate>),
    Or(Box<Predicate>, Box<Predicate>),
}

impl Predicate {
    pub fn and(self, other: Predicate) -> Predicate {
        Predicate::And(Box::new(self), Box::new(other))
    }

    pub fn or(self, other: Predicate) -> Predicate {
        Predicate::Or(Box::new(self), Box::new(other))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(self) -> Predicate {
        Predicate::Not(Box::new(self))
    }

    pub fn attr(entity: &str, attribute: &str, cmp: Comparison, literal: Literal) -> Predicate {
        Predicate::Compare {
            entity: entity.into(),
            attribute: attribute.into(),
            cmp,
            literal,
        }
    }

    pub fn exists(entity: &str, attribute: &str) -> Predicate {
        Predicate::Exists {
            entity: entity.into(),
            attribute: attribute.into(),
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&printer::print_predicate(self))
    }
}

impl Serialize for Predicate {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Predicate {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        super::parse_predicate(&s).map_err(serde::de::Error::custom)
    }
}
