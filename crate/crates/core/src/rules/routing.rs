use super::ast::{RuleSet, Workflow};
use super::eval::evaluate_predicate;
use super::RulesError;
use crate::model::Request;

/// Picks the highest-priority workflow whose selector accepts the request.
/// Equal priorities go to the workflow declared first.
pub fn match_workflow<'r>(req: &Request, rules: &'r RuleSet) -> Result<&'r Workflow, RulesError> {
    let Some(record) = req.normalized.as_ref() else {
        return Err(RulesError::NotNormalized(req.state));
    };
    let mut best: Option<&Workflow> = None;
    for wf in rules.workflows() {
        if best.is_some_and(|b| b.priority >= wf.priority) {
            continue;
        }
        if evaluate_predicate(&wf.selector, req.kind, &req.source, record) {
            best = Some(wf);
        }
    }
    best.ok_or(RulesError::NoRoute)
}
