use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rules::{OrchestrationPlan, PlanNode, Step};

/// An adapter's request to extend the running plan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanAmendment {
    pub issued_by: String,
    pub insert_steps: Vec<Step>,
    pub after_node: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AmendmentError {
    #[error("amendment names unknown node {0:?}")]
    UnknownNode(String),
    #[error("node {0:?} has already dispatched its successors")]
    NodePassed(String),
    #[error("amendment depth {depth} would exceed the bound {max}")]
    DepthExceeded { depth: u32, max: u32 },
    #[error("amendment would make the plan cyclic or unreachable: {0}")]
    CycleDetected(String),
    #[error("amendment inserts no steps")]
    Empty,
    #[error("adapter {0} may not amend plans")]
    NotPermitted(String),
}

impl AmendmentError {
    pub fn code(&self) -> &'static str {
        match self {
            AmendmentError::UnknownNode(_) => "UNKNOWN_NODE",
            AmendmentError::NodePassed(_) => "NODE_PASSED",
            AmendmentError::DepthExceeded { .. } => "DEPTH_EXCEEDED",
            AmendmentError::CycleDetected(_) => "CYCLE_DETECTED",
            AmendmentError::Empty => "EMPTY_AMENDMENT",
            AmendmentError::NotPermitted(_) => "NOT_PERMITTED",
        }
    }
}

/// Splices `am.insert_steps`, as a chain, between `am.after_node` and its
/// current successors. Node ids are the step names, suffixed `#2`, `#3`, ...
/// when a name is already taken.
pub fn apply_amendment(
    plan: &OrchestrationPlan,
    am: &PlanAmendment,
    max_depth: u32,
) -> Result<OrchestrationPlan, AmendmentError> {
    if plan.node(&am.after_node).is_none() {
        return Err(AmendmentError::UnknownNode(am.after_node.clone()));
    }
    let depth = plan.amendment_depth() + 1;
    if depth > max_depth {
        return Err(AmendmentError::DepthExceeded {
            depth,
            max: max_depth,
        });
    }
    if am.insert_steps.is_empty() {
        return Err(AmendmentError::Empty);
    }
    let mut taken: BTreeSet<String> = plan.nodes().iter().map(|n| n.id.clone()).collect();
    let mut nodes = plan.nodes().to_vec();
    let mut chain = Vec::new();
    for step in &am.insert_steps {
        let mut id = step.name.clone();
        let mut n = 2;
        while taken.contains(&id) {
            id = format!("{}#{n}", step.name);
            n += 1;
        }
        taken.insert(id.clone());
        nodes.push(PlanNode {
            id: id.clone(),
            step: step.clone(),
        });
        chain.push(id);
    }
    let after = am.after_node.as_str();
    let successors: Vec<String> = plan.successors(after).map(str::to_string).collect();
    let mut edges = plan.edges().clone();
    for s in &successors {
        edges.remove(&(after.to_string(), s.clone()));
    }
    edges.insert((after.to_string(), chain[0].clone()));
    for w in chain.windows(2) {
        edges.insert((w[0].clone(), w[1].clone()));
    }
    let last = chain.last().expect("non-empty chain");
    for s in successors {
        edges.insert((last.clone(), s));
    }
    OrchestrationPlan::from_parts(
        plan.request_id().clone(),
        plan.workflow().to_string(),
        nodes,
        edges,
        plan.entry().to_vec(),
        depth,
    )
    .map_err(|v| AmendmentError::CycleDetected(v.to_string()))
}
