use std::collections::BTreeMap;
use std::sync::mpsc::{self, RecvTimeoutError};
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::amend::{apply_amendment, AmendmentError, PlanAmendment};
use super::schedule::{Runtime, Scheduler};
use super::{
    transition, transition_as, Core, CoreError, FulfillmentOutcome, StepExecution, StepOutcome,
};
use crate::adapters::{
    invoke_fpa, ActivationChange, FpaResult, FpaStatus, Invocation, ProposedAmendment, Registry,
};
use crate::model::{
    merge_attributes, MergePolicy, NormalizedRecord, Request, RequestState, Timestamp,
};
use crate::rules::{
    compile_plan, match_workflow, print_step, OnError, OrchestrationPlan, RuleSet, RulesError,
};
use crate::trace::{Actor, EventKind};

/// Routes a NORMALIZED request and compiles its plan, leaving it PLANNED.
pub fn plan_request(
    core: &Core,
    rules: &RuleSet,
    req: &Request,
) -> Result<(Request, OrchestrationPlan), CoreError> {
    let wf = match_workflow(req, rules)?;
    let at = core.clock.now();
    core.store.emit(
        req.id(),
        Actor::Core,
        EventKind::Routed,
        at,
        json!({"workflow": wf.name, "priority": wf.priority, "rules_version": rules.version()}),
    )?;
    let plan = compile_plan(wf, req)?;
    let edges: Vec<[&str; 2]> = plan
        .edges()
        .iter()
        .map(|(a, b)| [a.as_str(), b.as_str()])
        .collect();
    let nodes: Vec<&str> = plan.nodes().iter().map(|n| n.id.as_str()).collect();
    let planned = transition_as(
        &core.store,
        Actor::Core,
        req,
        RequestState::Planned,
        at,
        json!({"workflow": wf.name, "nodes": nodes, "edges": edges}),
    )?;
    Ok((planned, plan))
}

/// Route, plan and execute. Routing and planning failures fail the request
/// rather than the call. A request already in an outcome state gets its
/// stored outcome back, or a fresh empty one.
pub fn fulfill(
    core: &Core,
    rules: &RuleSet,
    req: &Request,
    runtime: Runtime<'_>,
) -> Result<FulfillmentOutcome, CoreError> {
    if req.state.is_outcome() {
        if let Some(o) = core.store.get_outcome(req.id()) {
            return Ok(o);
        }
        let o = FulfillmentOutcome {
            final_state: req.state,
            executions: Vec::new(),
            final_record: req.record().clone(),
        };
        core.store.put_outcome(req.id(), &o)?;
        return Ok(o);
    }
    match plan_request(core, rules, req) {
        Ok((planned, plan)) => execute(core, &plan, &planned, runtime),
        Err(CoreError::Rules(
            e @ (RulesError::NoRoute | RulesError::EmptyPlan | RulesError::InvalidPlan(_)),
        )) => {
            let current = core
                .store
                .get_request(req.id())
                .unwrap_or_else(|| req.clone());
            let at = core.clock.now();
            core.store.emit(
                req.id(),
                Actor::Core,
                EventKind::Error,
                at,
                json!({"step": null, "code": e.code(), "message": e.to_string()}),
            )?;
            let failed = transition(&core.store, &current, RequestState::Failed, at)?;
            let o = FulfillmentOutcome {
                final_state: failed.state,
                executions: Vec::new(),
                final_record: failed.record().clone(),
            };
            core.store.put_outcome(failed.id(), &o)?;
            Ok(o)
        }
        Err(e) => Err(e),
    }
}

/// Runs a PLANNED request's plan to an outcome.
///
/// A node becomes ready once all its predecessors are done. While a SYNC
/// step is in flight nothing new is dispatched; ASYNC steps let dispatch go
/// on and are joined by whichever nodes depend on them.
pub fn execute(
    core: &Core,
    plan: &OrchestrationPlan,
    req: &Request,
    runtime: Runtime<'_>,
) -> Result<FulfillmentOutcome, CoreError> {
    if req.state != RequestState::Planned {
        return Err(CoreError::NotPlanned(req.id().clone()));
    }
    let running = transition(&core.store, req, RequestState::InProgress, core.clock.now())?;
    let mut run = Run::new(core, running, plan.clone());
    match runtime {
        Runtime::Deterministic(s) => run.drive_virtual(s)?,
        Runtime::Concurrent => run.drive_threads()?,
    }
    run.finish()
}

/// Undoes the successful steps of an IN_PROGRESS request whose plan hit a
/// step with `on_error compensate`, newest completion first.
///
/// The request is moved to FAILED afterwards, then on to COMPENSATED if
/// every compensation succeeded. Compensation replies merge with
/// delta-wins, since they are meant to overwrite what the step wrote.
pub fn compensate(
    core: &Core,
    executions: Vec<StepExecution>,
    plan: &OrchestrationPlan,
    req: &Request,
) -> Result<FulfillmentOutcome, CoreError> {
    let mut record = req.record().clone();
    let mut all_ok = true;
    let succeeded: Vec<&StepExecution> = executions
        .iter()
        .rev()
        .filter(|e| e.outcome.is_success())
        .collect();
    for done in succeeded {
        let Some(comp) = plan
            .node(&done.node_id)
            .and_then(|n| n.step.compensation.clone())
        else {
            continue;
        };
        let at = core.clock.now();
        let inv = match core.registry.ensure_active(&comp.fpa) {
            Ok(change) => {
                trace_activation(core, req, change, at)?;
                call(
                    &core.registry,
                    &comp.fpa,
                    &comp.operation,
                    &record,
                    req.id().as_str(),
                )
            }
            Err(e) => refused(e.code(), e.to_string()),
        };
        core.clock
            .advance_to(Timestamp(at.millis() + inv.elapsed_ticks as i64));
        let at = core.clock.now();
        let mut detail = json!({
            "for_node": done.node_id,
            "fpa": comp.fpa,
            "operation": comp.operation,
            "status": if inv.result.status.is_success() { "SUCCESS" } else { "FAILED" },
        });
        match inv.result.status {
            FpaStatus::Success => {
                core.store.emit(
                    req.id(),
                    Actor::Fpa(comp.fpa.clone()),
                    EventKind::Compensation,
                    at,
                    detail,
                )?;
                record = merge_attributes(&record, &inv.result.delta, MergePolicy::DeltaWins)?;
            }
            FpaStatus::Failed { code, message } => {
                detail["code"] = json!(code);
                core.store.emit(
                    req.id(),
                    Actor::Fpa(comp.fpa.clone()),
                    EventKind::Compensation,
                    at,
                    detail,
                )?;
                core.store.emit(
                    req.id(),
                    Actor::Core,
                    EventKind::Error,
                    at,
                    json!({"step": done.node_id, "compensation": comp.to_string(), "code": code, "message": message}),
                )?;
                all_ok = false;
            }
        }
    }
    let mut current = req.clone();
    current.normalized = Some(record.clone());
    let at = core.clock.now();
    let mut done = transition(&core.store, &current, RequestState::Failed, at)?;
    if all_ok {
        done = transition(&core.store, &done, RequestState::Compensated, at)?;
    }
    let outcome = FulfillmentOutcome {
        final_state: done.state,
        executions,
        final_record: record,
    };
    core.store.put_outcome(done.id(), &outcome)?;
    Ok(outcome)
}

fn refused(code: &str, message: String) -> Invocation {
    Invocation {
        result: FpaResult::failed(code, message),
        elapsed_ticks: 0,
        rejected_amendment: None,
    }
}

fn call(
    registry: &Registry,
    fpa: &str,
    operation: &str,
    record: &NormalizedRecord,
    request_id: &str,
) -> Invocation {
    match invoke_fpa(registry, fpa, operation, record, Some(request_id)) {
        Ok(inv) => inv,
        Err(e) => refused(e.code(), e.to_string()),
    }
}

fn trace_activation(
    core: &Core,
    req: &Request,
    change: Option<ActivationChange>,
    at: Timestamp,
) -> Result<(), CoreError> {
    if let Some(c) = change {
        core.store.emit(
            req.id(),
            Actor::Fpa(c.fpa.clone()),
            EventKind::StateChange,
            at,
            json!({"adapter": c.fpa, "from": c.from, "to": c.to}),
        )?;
    }
    Ok(())
}

fn pick(s: &mut dyn Scheduler, n: usize) -> usize {
    if n > 1 {
        s.choose(n)
    } else {
        0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Halt {
    Fail,
    Compensate,
    Conflict,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NodeState {
    Pending,
    Running,
    Done,
}

struct Call {
    token: u64,
    node: String,
    fpa: String,
    operation: String,
    attempt: u32,
    sync: bool,
    started_at: Timestamp,
    record: NormalizedRecord,
    /// Set when the adapter could not be activated; no call is made.
    refused: Option<Invocation>,
}

struct Run<'c> {
    core: &'c Core,
    req: Request,
    plan: OrchestrationPlan,
    record: NormalizedRecord,
    nodes: BTreeMap<String, NodeState>,
    attempts: BTreeMap<String, u32>,
    executions: Vec<StepExecution>,
    halt: Option<Halt>,
    sync_running: usize,
    next_token: u64,
}

impl<'c> Run<'c> {
    fn new(core: &'c Core, req: Request, plan: OrchestrationPlan) -> Self {
        let nodes = plan
            .nodes()
            .iter()
            .map(|n| (n.id.clone(), NodeState::Pending))
            .collect();
        Run {
            core,
            record: req.record().clone(),
            req,
            plan,
            nodes,
            attempts: BTreeMap::new(),
            executions: Vec::new(),
            halt: None,
            sync_running: 0,
            next_token: 0,
        }
    }

    fn ready(&self) -> Vec<String> {
        if self.halt.is_some() || self.sync_running > 0 {
            return Vec::new();
        }
        self.plan
            .topo_order()
            .into_iter()
            .filter(|id| self.nodes[*id] == NodeState::Pending)
            .filter(|id| {
                self.plan
                    .predecessors(id)
                    .all(|p| self.nodes[p] == NodeState::Done)
            })
            .map(str::to_string)
            .collect()
    }

    fn emit(
        &self,
        actor: Actor,
        kind: EventKind,
        at: Timestamp,
        detail: Value,
    ) -> Result<(), CoreError> {
        self.core
            .store
            .emit(self.req.id(), actor, kind, at, detail)?;
        Ok(())
    }

    fn dispatch(&mut self, node: &str, at: Timestamp) -> Result<Call, CoreError> {
        let step = self
            .plan
            .node(node)
            .expect("ready node is in plan")
            .step
            .clone();
        let attempt = {
            let a = self.attempts.entry(node.to_string()).or_insert(0);
            *a += 1;
            *a
        };
        let refused = match self.core.registry.ensure_active(&step.fpa) {
            Ok(change) => {
                trace_activation(self.core, &self.req, change, at)?;
                None
            }
            Err(e) => Some(refused(e.code(), e.to_string())),
        };
        self.emit(
            Actor::Core,
            EventKind::Dispatch,
            at,
            json!({"node": node, "fpa": step.fpa, "operation": step.operation, "attempt": attempt}),
        )?;
        self.nodes.insert(node.to_string(), NodeState::Running);
        let sync = step.mode == crate::rules::Mode::Sync;
        if sync {
            self.sync_running += 1;
        }
        self.next_token += 1;
        Ok(Call {
            token: self.next_token,
            node: node.to_string(),
            fpa: step.fpa,
            operation: step.operation,
            attempt,
            sync,
            started_at: at,
            record: self.record.clone(),
            refused,
        })
    }

    fn invoke(&self, c: &Call) -> Invocation {
        match &c.refused {
            Some(inv) => inv.clone(),
            None => call(
                &self.core.registry,
                &c.fpa,
                &c.operation,
                &c.record,
                self.req.id().as_str(),
            ),
        }
    }

    fn complete(&mut self, c: Call, inv: Invocation, at: Timestamp) -> Result<(), CoreError> {
        if c.sync {
            self.sync_running -= 1;
        }
        let step = self
            .plan
            .node(&c.node)
            .expect("running node is in plan")
            .step
            .clone();
        let actor = Actor::Fpa(c.fpa.clone());
        let mut exec = StepExecution {
            node_id: c.node.clone(),
            fpa: c.fpa.clone(),
            operation: c.operation.clone(),
            attempt: c.attempt,
            started_at: c.started_at,
            ended_at: at,
            outcome: StepOutcome::Success,
            produced: NormalizedRecord::new(),
        };
        match inv.result.status {
            FpaStatus::Success => {
                exec.produced = inv.result.delta.clone();
                self.executions.push(exec);
                self.emit(
                    actor,
                    EventKind::Complete,
                    at,
                    json!({"node": c.node, "attempt": c.attempt, "status": "SUCCESS"}),
                )?;
                self.nodes.insert(c.node.clone(), NodeState::Done);
                match merge_attributes(&self.record, &inv.result.delta, MergePolicy::RejectConflict)
                {
                    Ok(r) => self.record = r,
                    Err(e) => {
                        self.emit(
                            Actor::Core,
                            EventKind::Error,
                            at,
                            json!({"step": c.node, "code": "CONFLICTING_DELTA", "message": e.to_string()}),
                        )?;
                        self.halt = Some(Halt::Conflict);
                    }
                }
                if let Some(p) = inv.rejected_amendment {
                    let err = AmendmentError::NotPermitted(c.fpa.clone());
                    self.trace_amendment(
                        &c.fpa,
                        p.after_node.as_deref().unwrap_or(&c.node),
                        &p,
                        Err(&err),
                        at,
                    )?;
                }
                if let Some(p) = inv.result.amendment {
                    self.amend(&c.node, &c.fpa, p, at)?;
                }
            }
            FpaStatus::Failed { code, message } => {
                let detail = |status: &str| json!({"node": c.node, "attempt": c.attempt, "status": status, "code": code, "message": message});
                if self.halt.is_none() && c.attempt <= step.retry_bound() {
                    exec.outcome = StepOutcome::Failed {
                        code: code.clone(),
                        message: message.clone(),
                    };
                    self.executions.push(exec);
                    self.emit(actor, EventKind::Complete, at, detail("FAILED"))?;
                    self.nodes.insert(c.node.clone(), NodeState::Pending);
                } else if step.on_error == OnError::Skip {
                    exec.outcome = StepOutcome::Skipped {
                        code: code.clone(),
                        message: message.clone(),
                    };
                    self.executions.push(exec);
                    self.emit(actor, EventKind::Complete, at, detail("SKIPPED"))?;
                    self.nodes.insert(c.node.clone(), NodeState::Done);
                } else {
                    exec.outcome = StepOutcome::Failed {
                        code: code.clone(),
                        message: message.clone(),
                    };
                    self.executions.push(exec);
                    self.emit(actor, EventKind::Complete, at, detail("FAILED"))?;
                    self.emit(
                        Actor::Core,
                        EventKind::Error,
                        at,
                        json!({"step": c.node, "attempt": c.attempt, "code": code, "message": message}),
                    )?;
                    self.nodes.insert(c.node.clone(), NodeState::Done);
                    if self.halt.is_none() {
                        self.halt = Some(if step.on_error == OnError::Compensate {
                            Halt::Compensate
                        } else {
                            Halt::Fail
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// An amendment may only land where nothing downstream has started.
    fn amend(
        &mut self,
        node: &str,
        fpa: &str,
        p: ProposedAmendment,
        at: Timestamp,
    ) -> Result<(), CoreError> {
        let after = p.after_node.clone().unwrap_or_else(|| node.to_string());
        let passed = self.plan.node(&after).is_some()
            && self
                .plan
                .successors(&after)
                .any(|s| self.nodes[s] != NodeState::Pending || self.attempts.contains_key(s));
        let am = PlanAmendment {
            issued_by: fpa.to_string(),
            insert_steps: p.steps.clone(),
            after_node: after.clone(),
        };
        let result = if passed {
            Err(AmendmentError::NodePassed(after.clone()))
        } else {
            apply_amendment(&self.plan, &am, self.core.max_amendment_depth)
        };
        match result {
            Ok(plan) => {
                for n in plan.nodes() {
                    self.nodes.entry(n.id.clone()).or_insert(NodeState::Pending);
                }
                self.plan = plan;
                self.trace_amendment(fpa, &after, &p, Ok(()), at)
            }
            Err(e) => self.trace_amendment(fpa, &after, &p, Err(&e), at),
        }
    }

    fn trace_amendment(
        &self,
        fpa: &str,
        after: &str,
        p: &ProposedAmendment,
        result: Result<(), &AmendmentError>,
        at: Timestamp,
    ) -> Result<(), CoreError> {
        let steps: Vec<String> = p.steps.iter().map(print_step).collect();
        let mut detail = json!({"issued_by": fpa, "after_node": after, "steps": steps, "accepted": result.is_ok()});
        match result {
            Ok(()) => detail["depth"] = json!(self.plan.amendment_depth()),
            Err(e) => {
                detail["reason"] = json!(e.code());
                detail["message"] = json!(e.to_string());
            }
        }
        self.emit(Actor::Core, EventKind::Amendment, at, detail)
    }

    /// Virtual time: every call returns at dispatch time plus its latency.
    /// Simultaneous dispatches and simultaneous completions are ordered by
    /// the scheduler.
    fn drive_virtual(&mut self, sched: &mut dyn Scheduler) -> Result<(), CoreError> {
        let clock = self.core.clock.clone();
        let mut inflight: Vec<(Timestamp, Call, Invocation)> = Vec::new();
        loop {
            loop {
                let ready = self.ready();
                if ready.is_empty() {
                    break;
                }
                let node = &ready[pick(sched, ready.len())];
                let now = clock.now();
                let c = self.dispatch(node, now)?;
                let inv = self.invoke(&c);
                inflight.push((Timestamp(now.millis() + inv.elapsed_ticks as i64), c, inv));
            }
            let Some(first) = inflight.iter().map(|f| f.0).min() else {
                break;
            };
            let tied: Vec<usize> = (0..inflight.len())
                .filter(|&i| inflight[i].0 == first)
                .collect();
            let (t, c, inv) = inflight.remove(tied[pick(sched, tied.len())]);
            clock.advance_to(t);
            self.complete(c, inv, clock.now())?;
        }
        Ok(())
    }

    /// Real threads, one per call, each held to the real deadline.
    fn drive_threads(&mut self) -> Result<(), CoreError> {
        let clock = self.core.clock.clone();
        let deadline = self.core.registry.deadlines().real;
        let (tx, rx) = mpsc::channel::<(u64, Invocation)>();
        let mut inflight: BTreeMap<u64, (Call, Instant)> = BTreeMap::new();
        loop {
            let mut immediate = Vec::new();
            loop {
                let ready = self.ready();
                let Some(node) = ready.first() else { break };
                let c = self.dispatch(node, clock.now())?;
                if let Some(inv) = c.refused.clone() {
                    immediate.push((c, inv));
                    continue;
                }
                let (registry, tx) = (self.core.registry.clone(), tx.clone());
                let (token, fpa, op, record, rid) = (
                    c.token,
                    c.fpa.clone(),
                    c.operation.clone(),
                    c.record.clone(),
                    self.req.id().to_string(),
                );
                std::thread::spawn(move || {
                    let inv = call(&registry, &fpa, &op, &record, &rid);
                    std::thread::sleep(Duration::from_millis(inv.elapsed_ticks));
                    let _ = tx.send((token, inv));
                });
                inflight.insert(c.token, (c, Instant::now() + deadline));
            }
            if !immediate.is_empty() {
                for (c, inv) in immediate {
                    self.complete(c, inv, clock.now())?;
                }
                continue;
            }
            let Some(next) = inflight.values().map(|(_, d)| *d).min() else {
                break;
            };
            match rx.recv_timeout(next.saturating_duration_since(Instant::now())) {
                Ok((token, inv)) => {
                    if let Some((c, _)) = inflight.remove(&token) {
                        self.complete(c, inv, clock.now())?;
                    }
                }
                Err(RecvTimeoutError::Timeout) => {
                    let now = Instant::now();
                    let expired: Vec<u64> = inflight
                        .iter()
                        .filter(|(_, (_, d))| *d <= now)
                        .map(|(t, _)| *t)
                        .collect();
                    for t in expired {
                        let (c, _) = inflight.remove(&t).expect("expired token present");
                        let msg = format!("{}.{} exceeded {:?}", c.fpa, c.operation, deadline);
                        self.complete(c, refused("TIMEOUT", msg), clock.now())?;
                    }
                }
                Err(RecvTimeoutError::Disconnected) => unreachable!("sender held by this loop"),
            }
        }
        Ok(())
    }

    fn finish(mut self) -> Result<FulfillmentOutcome, CoreError> {
        self.req.normalized = Some(self.record.clone());
        let at = self.core.clock.now();
        let store = &self.core.store;
        let done = match self.halt {
            Some(Halt::Compensate) => {
                return compensate(self.core, self.executions, &self.plan, &self.req)
            }
            Some(Halt::Fail | Halt::Conflict) => {
                transition(store, &self.req, RequestState::Failed, at)?
            }
            None => transition(store, &self.req, RequestState::Fulfilled, at)?,
        };
        let outcome = FulfillmentOutcome {
            final_state: done.state,
            executions: self.executions,
            final_record: self.record,
        };
        store.put_outcome(done.id(), &outcome)?;
        Ok(outcome)
    }
}
