use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ast::{Step, Workflow};
use super::eval::evaluate_predicate;
use super::RulesError;
use crate::model::{Request, RequestId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanNode {
    pub id: String,
    pub step: Step,
}

/// Why a candidate plan was refused.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlanViolation {
    DuplicateNode(String),
    DanglingEdge(String, String),
    Cycle,
    Unreachable(String),
    BadEntry(String),
}

impl fmt::Display for PlanViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanViolation::DuplicateNode(id) => write!(f, "duplicate node {id:?}"),
            PlanViolation::DanglingEdge(a, b) => {
                write!(f, "edge {a:?} -> {b:?} names an unknown node")
            }
            PlanViolation::Cycle => f.write_str("edges form a cycle"),
            PlanViolation::Unreachable(id) => {
                write!(f, "node {id:?} is not reachable from the entry nodes")
            }
            PlanViolation::BadEntry(id) => {
                write!(f, "entry node {id:?} is missing or has predecessors")
            }
        }
    }
}

/// A compiled, immutable step DAG for one request.
///
/// Every constructor goes through [`OrchestrationPlan::from_parts`], which
/// rejects cycles and nodes not reachable from the entry set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OrchestrationPlan {
    request_id: RequestId,
    workflow: String,
    nodes: Vec<PlanNode>,
    edges: BTreeSet<(String, String)>,
    entry: Vec<String>,
    amendment_depth: u32,
}

impl OrchestrationPlan {
    pub fn from_parts(
        request_id: RequestId,
        workflow: String,
        nodes: Vec<PlanNode>,
        edges: BTreeSet<(String, String)>,
        entry: Vec<String>,
        amendment_depth: u32,
    ) -> Result<Self, PlanViolation> {
        let plan = OrchestrationPlan {
            request_id,
            workflow,
            nodes,
            edges,
            entry,
            amendment_depth,
        };
        plan.check()?;
        Ok(plan)
    }

    fn check(&self) -> Result<(), PlanViolation> {
        let mut ids = BTreeSet::new();
        for n in &self.nodes {
            if !ids.insert(n.id.as_str()) {
                return Err(PlanViolation::DuplicateNode(n.id.clone()));
            }
        }
        for (a, b) in &self.edges {
            if !ids.contains(a.as_str()) || !ids.contains(b.as_str()) {
                return Err(PlanViolation::DanglingEdge(a.clone(), b.clone()));
            }
        }
        for e in &self.entry {
            if !ids.contains(e.as_str()) || self.edges.iter().any(|(_, b)| b == e) {
                return Err(PlanViolation::BadEntry(e.clone()));
            }
        }
        if self.topo_order().len() != self.nodes.len() {
            return Err(PlanViolation::Cycle);
        }
        let mut seen: BTreeSet<&str> = self.entry.iter().map(String::as_str).collect();
        let mut queue: VecDeque<&str> = seen.iter().copied().collect();
        while let Some(id) = queue.pop_front() {
            for s in self.successors(id) {
                if seen.insert(s) {
                    queue.push_back(s);
                }
            }
        }
        match self.nodes.iter().find(|n| !seen.contains(n.id.as_str())) {
            Some(n) => Err(PlanViolation::Unreachable(n.id.clone())),
            None => Ok(()),
        }
    }

    pub fn request_id(&self) -> &RequestId {
        &self.request_id
    }

    pub fn workflow(&self) -> &str {
        &self.workflow
    }

    pub fn nodes(&self) -> &[PlanNode] {
        &self.nodes
    }

    pub fn node(&self, id: &str) -> Option<&PlanNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn edges(&self) -> &BTreeSet<(String, String)> {
        &self.edges
    }

    pub fn entry(&self) -> &[String] {
        &self.entry
    }

    pub fn amendment_depth(&self) -> u32 {
        self.amendment_depth
    }

    pub fn successors<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.edges
            .iter()
            .filter(move |(a, _)| a == id)
            .map(|(_, b)| b.as_str())
    }

    pub fn predecessors<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.edges
            .iter()
            .filter(move |(_, b)| b == id)
            .map(|(a, _)| a.as_str())
    }

    /// Kahn's algorithm; ties resolved by node declaration order. Shorter
    /// than `nodes()` exactly when the edges contain a cycle.
    pub fn topo_order(&self) -> Vec<&str> {
        let mut indeg: BTreeMap<&str, usize> =
            self.nodes.iter().map(|n| (n.id.as_str(), 0)).collect();
        for (_, b) in &self.edges {
            if let Some(d) = indeg.get_mut(b.as_str()) {
                *d += 1;
            }
        }
        let mut out = Vec::with_capacity(self.nodes.len());
        let mut done = BTreeSet::new();
        loop {
            let next = self
                .nodes
                .iter()
                .map(|n| n.id.as_str())
                .find(|id| !done.contains(id) && indeg[id] == 0);
            let Some(id) = next else { break };
            done.insert(id);
            out.push(id);
            for s in self.successors(id) {
                if let Some(d) = indeg.get_mut(s) {
                    *d -= 1;
                }
            }
        }
        out
    }
}

impl<'de> Deserialize<'de> for OrchestrationPlan {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            request_id: RequestId,
            workflow: String,
            nodes: Vec<PlanNode>,
            edges: BTreeSet<(String, String)>,
            entry: Vec<String>,
            amendment_depth: u32,
        }
        let r = Raw::deserialize(d)?;
        OrchestrationPlan::from_parts(
            r.request_id,
            r.workflow,
            r.nodes,
            r.edges,
            r.entry,
            r.amendment_depth,
        )
        .map_err(serde::de::Error::custom)
    }
}

/// Compiles a matched workflow. Guards are decided here, once, against the
/// request's normalized record; guarded-out steps are left out of the DAG.
pub fn compile_plan(wf: &Workflow, req: &Request) -> Result<OrchestrationPlan, RulesError> {
    let Some(record) = req.normalized.as_ref() else {
        return Err(RulesError::NotNormalized(req.state));
    };
    let mut nodes = Vec::new();
    let mut edges = BTreeSet::new();
    let mut entry: Option<Vec<String>> = None;
    let mut sinks: Vec<String> = Vec::new();
    for group in &wf.body {
        let kept: Vec<&Step> = group
            .steps()
            .iter()
            .filter(|s| {
                s.guard
                    .as_ref()
                    .is_none_or(|g| evaluate_predicate(g, req.kind, &req.source, record))
            })
            .collect();
        if kept.is_empty() {
            continue;
        }
        let ids: Vec<String> = kept.iter().map(|s| s.name.clone()).collect();
        for id in &ids {
            for prev in &sinks {
                edges.insert((prev.clone(), id.clone()));
            }
        }
        nodes.extend(kept.into_iter().map(|s| PlanNode {
            id: s.name.clone(),
            step: s.clone(),
        }));
        entry.get_or_insert_with(|| ids.clone());
        sinks = ids;
    }
    let Some(entry) = entry else {
        return Err(RulesError::EmptyPlan);
    };
    OrchestrationPlan::from_parts(req.id().clone(), wf.name.clone(), nodes, edges, entry, 0)
        .map_err(RulesError::InvalidPlan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AttributeValue, NormalizedRecord, RequestKind, RequestSource, Timestamp};
    use crate::rules::parse_rules;

    fn req() -> Request {
        let mut r = Request::new(
            RequestId::new("R1"),
            RequestKind::Order,
            RequestSource::external("web"),
            Timestamp(0),
            vec![],
        );
        r.normalized = Some(NormalizedRecord::new().with(
            "order/R",
            "product",
            AttributeValue::Text("ADSL".into()),
        ));
        r
    }

    fn wf(body: &str) -> Workflow {
        let rs = parse_rules(&format!(
            r#"workflow "w" priority 1 on kind = ORDER {{ {body} }}"#
        ))
        .unwrap();
        rs.workflows()[0].clone()
    }

    fn edge_set(p: &OrchestrationPlan) -> Vec<(&str, &str)> {
        p.edges()
            .iter()
            .map(|(a, b)| (a.as_str(), b.as_str()))
            .collect()
    }

    #[test]
    fn seq_par_seq_diamond() {
        let w = wf("step a -> fpa:crm.validate mode sync;
                    parallel { step b -> fpa:billing.open_account mode async; step c -> fpa:ldap.create_entry mode async; }
                    step d -> fpa:crm.notify mode sync;");
        let p = compile_plan(&w, &req()).unwrap();
        assert_eq!(
            edge_set(&p),
            vec![("a", "b"), ("a", "c"), ("b", "d"), ("c", "d")]
        );
        assert_eq!(p.entry(), ["a"]);
        assert_eq!(p.amendment_depth(), 0);
        assert_eq!(p.topo_order(), vec!["a", "b", "c", "d"]);
    }

    #[test]
    fn single_step_has_no_edges() {
        let p = compile_plan(&wf("step a -> fpa:crm.validate mode sync;"), &req()).unwrap();
        assert_eq!(p.nodes().len(), 1);
        assert!(p.edges().is_empty());
    }

    #[test]
    fn guards_prune_at_compile_time() {
        let w = wf(
            r#"step a -> fpa:crm.validate mode sync guard attr(order/R, product) = "FTTH";
                      step b -> fpa:crm.notify mode sync guard attr(order/R, product) = "ADSL";
                      step c -> fpa:erp.book mode sync;"#,
        );
        let p = compile_plan(&w, &req()).unwrap();
        assert_eq!(p.entry(), ["b"]);
        assert_eq!(edge_set(&p), vec![("b", "c")]);
    }

    #[test]
    fn all_guarded_out_is_empty_plan() {
        let w = wf("step a -> fpa:crm.validate mode sync guard kind = EVENT;");
        assert_eq!(compile_plan(&w, &req()), Err(RulesError::EmptyPlan));
    }

    #[test]
    fn from_parts_rejects_cycles_and_orphans() {
        let w = wf("step a -> fpa:crm.validate mode sync; step b -> fpa:crm.notify mode sync;");
        let nodes: Vec<PlanNode> = w
            .steps()
            .map(|s| PlanNode {
                id: s.name.clone(),
                step: s.clone(),
            })
            .collect();
        let id = RequestId::new("R1");
        let cyc: BTreeSet<_> = [
            ("a".to_string(), "b".to_string()),
            ("b".to_string(), "a".to_string()),
        ]
        .into();
        assert!(OrchestrationPlan::from_parts(
            id.clone(),
            "w".into(),
            nodes.clone(),
            cyc,
            vec![],
            0
        )
        .is_err());
        let orphan = OrchestrationPlan::from_parts(
            id,
            "w".into(),
            nodes,
            BTreeSet::new(),
            vec!["a".into()],
            0,
        );
        assert_eq!(orphan, Err(PlanViolation::Unreachable("b".into())));
    }

    #[test]
    fn serde_round_trip_rechecks() {
        let p = compile_plan(
            &wf("step a -> fpa:crm.validate mode sync; step b -> fpa:crm.notify mode sync;"),
            &req(),
        )
        .unwrap();
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<OrchestrationPlan>(&json).unwrap(), p);
        let broken = json.replace(r#"["a","b"]"#, r#"["b","a"]"#);
        assert!(serde_json::from_str::<OrchestrationPlan>(&broken).is_err());
    }
}
