//! Strategies and checks shared by the property tests and the
//! acceptance runner.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use frm::model::{
    merge_attributes, normalize, validate_record, AttrKey, AttributeValue, Decimal4, MappingEntry,
    MappingSpec, MergePolicy, NormalizedRecord, Request, RequestId, RequestKind, RequestSource,
    SourceKind, Timestamp, ValueType,
};
use frm::orchestrator::{apply_amendment, PlanAmendment};
use frm::rules::{
    compile_plan, match_workflow, parse_rules, print_rules, Comparison, Literal, Mode, OnError,
    OrchestrationPlan, Predicate, RuleSet, Step, StepGroup, Workflow,
};
use proptest::prelude::*;
use serde::de::{Deserializer, MapAccess, Visitor};
use serde_json::{json, Value};

pub const ENTITIES: [&str; 3] = ["a/1", "a/2", "b/x"];
pub const ATTRS: [&str; 3] = ["p", "q", "r"];

pub fn value() -> impl Strategy<Value = AttributeValue> {
    prop_oneof![
        prop::sample::select(vec!["x", "y", "z"]).prop_map(|s| AttributeValue::Text(s.into())),
        (-3i64..=3).prop_map(AttributeValue::Integer),
        (-30_000i64..=30_000)
            .prop_map(|u| AttributeValue::Decimal(Decimal4::from_scaled(u / 5_000 * 5_000))),
        any::<bool>().prop_map(AttributeValue::Boolean),
    ]
}

pub fn record() -> impl Strategy<Value = NormalizedRecord> {
    prop::collection::vec((0..3usize, 0..3usize, value()), 0..8).prop_map(|bindings| {
        let mut r = NormalizedRecord::new();
        for (e, a, v) in bindings {
            r.set(AttrKey::new(ENTITIES[e], ATTRS[a]), v);
        }
        r
    })
}

/// Every key of a JSON object in document order, duplicates kept.
pub fn raw_keys(json: &str) -> Vec<String> {
    struct Keys;
    impl<'de> Visitor<'de> for Keys {
        type Value = Vec<String>;
        fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
            f.write_str("an object")
        }
        fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Vec<String>, A::Error> {
            let mut keys = Vec::new();
            while let Some((k, _)) = map.next_entry::<String, serde::de::IgnoredAny>()? {
                keys.push(k);
            }
            Ok(keys)
        }
    }
    let mut de = serde_json::Deserializer::from_str(json);
    (&mut de).deserialize_map(Keys).unwrap()
}

pub fn assert_unique(r: &NormalizedRecord) -> Result<(), TestCaseError> {
    let json = serde_json::to_string(r).unwrap();
    let keys = raw_keys(&json);
    let distinct: BTreeSet<_> = keys.iter().collect();
    prop_assert_eq!(distinct.len(), keys.len(), "duplicate key in {}", json);
    prop_assert_eq!(keys.len(), r.len());
    prop_assert!(validate_record(r).is_empty());
    let back: NormalizedRecord = serde_json::from_str(&json).unwrap();
    prop_assert_eq!(&back, r);
    Ok(())
}

/// Payload leaves under `k1`..`k3`, some nested, plus mapping entries that
/// may route several paths onto the same key through templates.
pub fn payload_and_spec() -> impl Strategy<Value = (Value, MappingSpec)> {
    let leaf = prop_oneof![
        prop::sample::select(vec!["u", "v"]).prop_map(|s| json!(s)),
        (-2i64..=2).prop_map(|i| json!(i)),
        any::<bool>().prop_map(|b| json!(b)),
    ];
    let payload =
        prop::collection::btree_map(prop::sample::select(vec!["k1", "k2", "k3"]), leaf, 0..=3)
            .prop_map(|m| json!({"top": m, "k1": "u", "n": {"k2": "v"}}));
    let entry = (
        prop::sample::select(vec!["top.k1", "top.k2", "top.k3", "k1", "n.k2"]),
        prop::sample::select(vec!["e/1", "e/{k1}", "e/{top.k1}", "f/{req}", "e/u"]),
        prop::sample::select(vec!["p", "q"]),
        prop::sample::select(vec![
            ValueType::Text,
            ValueType::Integer,
            ValueType::Boolean,
        ]),
    )
        .prop_map(|(p, e, a, t)| MappingEntry::new(p, e, a, t).unwrap());
    let spec = prop::collection::vec(entry, 0..6)
        .prop_filter_map("static duplicate target", |entries| {
            MappingSpec::new(entries, false).ok()
        });
    (payload, spec)
}

pub type UniquenessCase = (Vec<(Value, MappingSpec)>, Vec<NormalizedRecord>, Vec<bool>);

pub fn uniqueness_case() -> impl Strategy<Value = UniquenessCase> {
    (
        prop::collection::vec(payload_and_spec(), 1..4),
        prop::collection::vec(record(), 0..4),
        prop::collection::vec(any::<bool>(), 8),
    )
}

/// Normalized and merged records never carry a key twice.
pub fn check_uniqueness((inputs, extra, policies): UniquenessCase) -> Result<(), TestCaseError> {
    let mut records = Vec::new();
    for (payload, spec) in &inputs {
        if let Ok(r) = normalize(payload.to_string().as_bytes(), spec, Some("R9")) {
            assert_unique(&r)?;
            records.push(r);
        }
    }
    records.extend(extra);
    let mut acc = NormalizedRecord::new();
    for (i, r) in records.iter().enumerate() {
        let policy = if policies[i % policies.len()] {
            MergePolicy::DeltaWins
        } else {
            MergePolicy::RejectConflict
        };
        match merge_attributes(&acc, r, policy) {
            Ok(merged) => {
                assert_unique(&merged)?;
                let union: BTreeSet<_> = acc.keys().chain(r.keys()).collect();
                prop_assert_eq!(union.len(), merged.len());
                if policy == MergePolicy::DeltaWins {
                    for (k, v) in r.iter() {
                        prop_assert_eq!(merged.get_key(k), Some(v));
                    }
                }
                acc = merged;
            }
            Err(_) => prop_assert_eq!(policy, MergePolicy::RejectConflict),
        }
    }
    Ok(())
}

pub fn literal() -> impl Strategy<Value = Literal> {
    prop_oneof![
        prop::sample::select(vec!["x", "y", "z"]).prop_map(|s| Literal::Text(s.into())),
        (-3i64..=3).prop_map(Literal::Integer),
        (-30_000i64..=30_000)
            .prop_map(|u| Literal::Decimal(Decimal4::from_scaled(u / 5_000 * 5_000))),
        any::<bool>().prop_map(Literal::Boolean),
    ]
}

pub fn kind() -> impl Strategy<Value = RequestKind> {
    prop::sample::select(vec![
        RequestKind::Order,
        RequestKind::Event,
        RequestKind::Process,
        RequestKind::Message,
        RequestKind::Data,
    ])
}

pub fn source_kind() -> impl Strategy<Value = SourceKind> {
    prop::sample::select(vec![SourceKind::External, SourceKind::Internal])
}

pub fn cmp() -> impl Strategy<Value = Comparison> {
    prop::sample::select(Comparison::ALL.to_vec())
}

pub fn predicate() -> impl Strategy<Value = Predicate> {
    let leaf = prop_oneof![
        kind().prop_map(Predicate::Kind),
        source_kind().prop_map(Predicate::Source),
        (0..3usize, 0..3usize, cmp(), literal()).prop_map(|(e, a, c, l)| Predicate::attr(
            ENTITIES[e],
            ATTRS[a],
            c,
            l
        )),
        (0..3usize, 0..3usize).prop_map(|(e, a)| Predicate::exists(ENTITIES[e], ATTRS[a])),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(Predicate::not),
            (inner.clone(), inner.clone()).prop_map(|(l, r)| l.and(r)),
            (inner.clone(), inner).prop_map(|(l, r)| l.or(r)),
        ]
    })
}

/// Independent reading of the predicate semantics: numbers compare as
/// scaled integers, mismatched types and missing attributes are false.
pub fn naive_eval(
    p: &Predicate,
    kind: RequestKind,
    source: SourceKind,
    rec: &NormalizedRecord,
) -> bool {
    fn num(v: &AttributeValue) -> Option<i128> {
        match v {
            AttributeValue::Integer(i) => Some(*i as i128 * 10_000),
            AttributeValue::Decimal(d) => Some(d.scaled() as i128),
            _ => None,
        }
    }
    fn lit_num(l: &Literal) -> Option<i128> {
        match l {
            Literal::Integer(i) => Some(*i as i128 * 10_000),
            Literal::Decimal(d) => Some(d.scaled() as i128),
            _ => None,
        }
    }
    match p {
        Predicate::Kind(k) => *k == kind,
        Predicate::Source(s) => *s == source,
        Predicate::Exists { entity, attribute } => rec
            .iter()
            .any(|(k, _)| k.joined() == format!("{entity}/{attribute}")),
        Predicate::Compare {
            entity,
            attribute,
            cmp,
            literal,
        } => {
            let Some((_, v)) = rec
                .iter()
                .find(|(k, _)| k.joined() == format!("{entity}/{attribute}"))
            else {
                return false;
            };
            let ord = match (v, literal) {
                (AttributeValue::Text(a), Literal::Text(b)) => a.cmp(b),
                (AttributeValue::Boolean(a), Literal::Boolean(b)) => a.cmp(b),
                _ => match (num(v), lit_num(literal)) {
                    (Some(a), Some(b)) => a.cmp(&b),
                    _ => return false,
                },
            };
            use std::cmp::Ordering::*;
            match cmp {
                Comparison::Eq => ord == Equal,
                Comparison::Ne => ord != Equal,
                Comparison::Lt => ord == Less,
                Comparison::Le => ord != Greater,
                Comparison::Gt => ord == Greater,
                Comparison::Ge => ord != Less,
            }
        }
        Predicate::Not(i) => !naive_eval(i, kind, source, rec),
        Predicate::And(l, r) => {
            naive_eval(l, kind, source, rec) && naive_eval(r, kind, source, rec)
        }
        Predicate::Or(l, r) => naive_eval(l, kind, source, rec) || naive_eval(r, kind, source, rec),
    }
}

pub fn one_step_workflow(name: String, priority: i64, selector: Predicate) -> Workflow {
    Workflow {
        name,
        priority,
        selector,
        body: vec![StepGroup::Sequential(Step::new(
            "s",
            "crm",
            "validate",
            Mode::Sync,
        ))],
    }
}

pub type RoutingCase = (
    Vec<(i64, Predicate)>,
    RequestKind,
    SourceKind,
    NormalizedRecord,
);

pub fn routing_case() -> impl Strategy<Value = RoutingCase> {
    (
        prop::collection::vec((0i64..3, predicate()), 1..7),
        kind(),
        source_kind(),
        record(),
    )
}

/// The router picks what evaluating every selector and taking the
/// highest priority, first declared on ties, would pick.
pub fn check_routing((selectors, kind, source, rec): RoutingCase) -> Result<(), TestCaseError> {
    let wfs: Vec<Workflow> = selectors
        .into_iter()
        .enumerate()
        .map(|(i, (p, sel))| one_step_workflow(format!("w{i}"), p, sel))
        .collect();
    let rules = RuleSet::new(wfs.clone()).unwrap();
    let mut req = Request::new(
        RequestId::new("R1"),
        kind,
        RequestSource::new(source, "o").unwrap(),
        Timestamp(0),
        vec![],
    );
    req.normalized = Some(rec.clone());
    let mut best: Option<(i64, usize)> = None;
    for (i, wf) in wfs.iter().enumerate() {
        if naive_eval(&wf.selector, kind, source, &rec) && best.is_none_or(|(p, _)| wf.priority > p)
        {
            best = Some((wf.priority, i));
        }
    }
    let got = match_workflow(&req, &rules).ok().map(|w| w.name.clone());
    prop_assert_eq!(got, best.map(|(_, i)| format!("w{i}")));
    Ok(())
}

pub fn workflow_body() -> impl Strategy<Value = Vec<StepGroup>> {
    prop::collection::vec(prop_oneof![Just(1usize), 2usize..=3], 1..5).prop_map(|sizes| {
        let mut n = 0;
        sizes
            .into_iter()
            .map(|size| {
                let steps: Vec<Step> = (0..size)
                    .map(|_| {
                        n += 1;
                        Step::new(&format!("s{n}"), "crm", &format!("op{n}"), Mode::Async)
                    })
                    .collect();
                if size == 1 {
                    StepGroup::Sequential(steps.into_iter().next().unwrap())
                } else {
                    StepGroup::Parallel(steps)
                }
            })
            .collect()
    })
}

/// Acyclic (Kahn) and every node reachable from the entry set.
pub fn well_formed(plan: &OrchestrationPlan) -> Result<(), String> {
    let ids: BTreeSet<&str> = plan.nodes().iter().map(|n| n.id.as_str()).collect();
    if ids.len() != plan.nodes().len() {
        return Err("duplicate node id".into());
    }
    let mut indegree: BTreeMap<&str, usize> = ids.iter().map(|i| (*i, 0)).collect();
    for (a, b) in plan.edges() {
        if !ids.contains(a.as_str()) || !ids.contains(b.as_str()) {
            return Err(format!("dangling edge {a}->{b}"));
        }
        *indegree.get_mut(b.as_str()).unwrap() += 1;
    }
    let mut queue: VecDeque<&str> = indegree
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(i, _)| *i)
        .collect();
    let mut seen = 0;
    while let Some(n) = queue.pop_front() {
        seen += 1;
        for (a, b) in plan.edges() {
            if a == n {
                let d = indegree.get_mut(b.as_str()).unwrap();
                *d -= 1;
                if *d == 0 {
                    queue.push_back(b);
                }
            }
        }
    }
    if seen != ids.len() {
        return Err("cycle".into());
    }
    let mut reach: BTreeSet<&str> = plan.entry().iter().map(String::as_str).collect();
    let mut frontier: Vec<&str> = reach.iter().copied().collect();
    while let Some(n) = frontier.pop() {
        for (a, b) in plan.edges() {
            if a == n && reach.insert(b) {
                frontier.push(b);
            }
        }
    }
    if reach.len() != ids.len() {
        return Err("unreachable node".into());
    }
    Ok(())
}

pub type AmendmentCase = (Vec<StepGroup>, Vec<(usize, Vec<&'static str>)>);

pub fn amendment_case() -> impl Strategy<Value = AmendmentCase> {
    (
        workflow_body(),
        prop::collection::vec(
            (
                0..20usize,
                prop::collection::vec(prop::sample::select(vec!["s1", "s2", "x", "y"]), 0..3),
            ),
            1..8,
        ),
    )
}

/// Accepted amendments keep the plan acyclic and fully reachable.
pub fn check_amendments((body, amendments): AmendmentCase) -> Result<(), TestCaseError> {
    let wf = Workflow {
        name: "w".into(),
        priority: 0,
        selector: Predicate::Kind(RequestKind::Order),
        body,
    };
    let mut req = Request::new(
        RequestId::new("R1"),
        RequestKind::Order,
        RequestSource::external("o"),
        Timestamp(0),
        vec![],
    );
    req.normalized = Some(NormalizedRecord::new());
    let mut plan = compile_plan(&wf, &req).unwrap();
    well_formed(&plan).map_err(TestCaseError::fail)?;
    for (at, names) in amendments {
        let after = plan.nodes()[at % plan.nodes().len()].id.clone();
        let old_successors: BTreeSet<String> =
            plan.successors(&after).map(str::to_string).collect();
        let am = PlanAmendment {
            issued_by: "crm".into(),
            insert_steps: names
                .iter()
                .map(|n| Step::new(n, "ldap", "create_entry", Mode::Sync))
                .collect(),
            after_node: after.clone(),
        };
        match apply_amendment(&plan, &am, 3) {
            Ok(next) => {
                well_formed(&next).map_err(TestCaseError::fail)?;
                prop_assert_eq!(next.amendment_depth(), plan.amendment_depth() + 1);
                prop_assert_eq!(next.nodes().len(), plan.nodes().len() + names.len());
                let old: BTreeSet<_> = plan.nodes().iter().map(|n| n.id.clone()).collect();
                let new: Vec<_> = next
                    .nodes()
                    .iter()
                    .filter(|n| !old.contains(&n.id))
                    .map(|n| n.id.clone())
                    .collect();
                // after_node -> chain -> old successors
                prop_assert_eq!(
                    next.successors(&after).collect::<Vec<_>>(),
                    vec![new[0].as_str()]
                );
                let last_succ: BTreeSet<String> = next
                    .successors(new.last().unwrap())
                    .map(str::to_string)
                    .collect();
                prop_assert_eq!(last_succ, old_successors);
                plan = next;
            }
            Err(e) => prop_assert!(
                ["EMPTY_AMENDMENT", "DEPTH_EXCEEDED"].contains(&e.code()),
                "{}",
                e
            ),
        }
    }
    Ok(())
}

pub fn step_strategy(n: usize) -> impl Strategy<Value = Step> {
    let policy = prop_oneof![
        Just((OnError::Fail, None)),
        Just((OnError::Skip, None)),
        (1u8..=10).prop_map(|r| (OnError::Retry(r), None)),
        Just((OnError::Compensate, Some(("crm", "rollback")))),
    ];
    (policy, any::<bool>(), prop::option::of(predicate())).prop_map(
        move |((on_error, comp), sync, guard)| {
            let mut s = Step::new(
                &format!("st{n}"),
                "ssw",
                &format!("op{n}"),
                if sync { Mode::Sync } else { Mode::Async },
            )
            .on_error(on_error);
            if let Some((f, o)) = comp {
                s = s.compensated_by(f, o);
            }
            if let Some(g) = guard {
                s = s.guarded(g);
            }
            s
        },
    )
}

pub fn workflow_strategy(i: usize) -> impl Strategy<Value = Workflow> {
    let name = prop::sample::select(vec![
        "plain",
        "with space",
        "quote\"d",
        "back\\slash",
        "tab\tnl\n",
    ])
    .prop_map(move |n| format!("{n}-{i}"));
    (
        name,
        -50i64..50,
        predicate(),
        step_strategy(1),
        step_strategy(2),
        step_strategy(3),
        any::<bool>(),
    )
        .prop_map(|(name, priority, selector, a, b, c, par)| {
            let body = if par {
                vec![StepGroup::Sequential(a), StepGroup::Parallel(vec![b, c])]
            } else {
                vec![
                    StepGroup::Sequential(a),
                    StepGroup::Sequential(b),
                    StepGroup::Sequential(c),
                ]
            };
            Workflow {
                name,
                priority,
                selector,
                body,
            }
        })
}

pub fn rules_case() -> impl Strategy<Value = RuleSet> {
    (
        workflow_strategy(0),
        workflow_strategy(1),
        workflow_strategy(2),
    )
        .prop_map(|(a, b, c)| RuleSet::new(vec![a, b, c]).unwrap())
}

pub fn check_round_trip(rules: RuleSet) -> Result<(), TestCaseError> {
    let printed = print_rules(&rules);
    let parsed =
        parse_rules(&printed).map_err(|e| TestCaseError::fail(format!("{e}\n{printed}")))?;
    prop_assert_eq!(&parsed, &rules);
    prop_assert_eq!(print_rules(&parsed), printed);
    prop_assert_eq!(parsed.version(), rules.version());
    Ok(())
}
