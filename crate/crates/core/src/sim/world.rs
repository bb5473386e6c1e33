//! The deterministic deployment: every actor, a virtual clock, a message
//! queue and the fault plan.
//!
//! Persistence discipline: an actor's state is synced before any of the
//! messages it produced in a step leave the node. The `mutant` option
//! inverts that order, which the crash matrix must detect.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::faults::{Action, FaultPlan};
use super::scenario::{Command, Role, Scenario, Step, Verb};
use super::trace::Trace;
use crate::audit::{cross_witness, Attr, Knowledge};
use crate::crypto::{keygen, KeyPair};
use crate::ledger::{Books, Entry, Posting, Report};
use crate::proto::payg::{inspect_checkin, Gate};
use crate::proto::tickets::Pto;
use crate::proto::user::{pto_signer, Note, Outgoing, UserAgent, PSP, PTC};
use crate::proto::{flow, Dest, Directory, Env, GateMsg, Payload, ProtoError, Psp, Ptc};
use crate::registry::TokenKind;
use crate::session::{IssueMsg, Phase, RestartPolicy, SessionId};
use crate::tokens::{short, Cents, Service};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeId {
    Psp,
    Ptc,
    Pto(String),
    Gate(String),
    User(String),
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Psp => f.write_str("psp"),
            NodeId::Ptc => f.write_str("ptc"),
            NodeId::Pto(n) => write!(f, "pto:{n}"),
            NodeId::Gate(s) => write!(f, "gate:{s}"),
            NodeId::User(u) => write!(f, "user:{u}"),
        }
    }
}

#[derive(Clone, Debug)]
struct Envelope {
    from: NodeId,
    to: NodeId,
    payload: Payload,
    flow: &'static str,
    /// Gate relaying a device's message to the clearinghouse.
    via: Option<String>,
}

impl Envelope {
    fn describe(&self) -> String {
        let tag = match &self.payload {
            Payload::Issue(m) => format!("sid={}", hex::encode(&m.sid()[..4])),
            Payload::Gate(m) => match m {
                GateMsg::CheckinRequest { credit, .. } => format!("credit={}", short(&credit.seqno)),
                GateMsg::CheckinIssued(t) => format!("credit={}", short(&t.credit_seqno)),
                GateMsg::CheckinAck { seqno } => format!("credit={}", short(seqno)),
                GateMsg::CheckoutPresent { token, .. } => format!("credit={}", short(&token.credit_seqno)),
                GateMsg::CheckoutIssued(r) => format!("credit={}", short(&r.credit_seqno)),
                GateMsg::Refused { credit_seqno, .. } => format!("credit={}", short(credit_seqno)),
            },
        };
        let step = self.payload.step().map_or(String::new(), |s| format!("#{s}"));
        format!(
            "{} -> {} {} {}{} {tag}",
            self.from,
            self.to,
            self.flow,
            self.payload.name(),
            step
        )
    }
}

#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
enum Event {
    Deliver(Envelope),
    Restart(NodeId),
    SessionTimer { user: String, sid: SessionId, seen: u64, tries: u32 },
    GateTimer { user: String, seen: u64, tries: u32 },
}

/// Run parameters beyond the scenario itself.
#[derive(Clone, Debug)]
pub struct Options {
    pub seed: u64,
    pub faults: FaultPlan,
    /// Send before persisting, the bug the crash matrix must catch.
    pub mutant: bool,
    /// Users blind a fresh secret on every new attempt, even after
    /// completing, to expose double issuance.
    pub adversarial: bool,
    /// Upper bound on processed events.
    pub budget: usize,
}

impl Default for Options {
    fn default() -> Options {
        Options {
            seed: 1,
            faults: FaultPlan::none(),
            mutant: false,
            adversarial: false,
            budget: 500_000,
        }
    }
}

/// Everything a finished run produced.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub trace: Trace,
    pub books: Books,
    pub report: Report,
    pub knowledge: Knowledge,
    /// Final device credit per user.
    pub finals: BTreeMap<String, Cents>,
    pub violations: Vec<String>,
    /// Fault boundaries that never fired.
    pub unused_faults: Vec<String>,
}

impl Outcome {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn exit_code(&self) -> i32 {
        i32::from(!self.is_clean())
    }
}

pub struct World {
    pub env: Env,
    pub now: u64,
    rng: ChaCha20Rng,
    counter: u64,
    queue: BTreeMap<(u64, u64), Event>,
    pub psp: Psp,
    pub ptc: Ptc,
    pub ptos: BTreeMap<String, Pto>,
    pub gates: BTreeMap<String, Gate>,
    pub users: BTreeMap<String, UserAgent>,
    inspectors: BTreeMap<String, String>,
    /// Signing keys by the name users know the signer under.
    keys: BTreeMap<String, KeyPair>,
    down: BTreeSet<NodeId>,
    faults: FaultPlan,
    mutant: bool,
    /// Session id to (user, flow), learned when the user sends.
    routes: BTreeMap<SessionId, (String, &'static str)>,
    progress: BTreeMap<(String, SessionId), u64>,
    gate_progress: BTreeMap<String, u64>,
    /// Device observations waiting for the device to persist.
    notes: BTreeMap<String, Vec<(String, Option<String>)>>,
    pub know: Knowledge,
    known: usize,
    pub books: Books,
    pub trace: Trace,
    processed: usize,
    budget: usize,
    exhausted: bool,
}

/// Run a scenario to completion and check every invariant.
pub fn run(scenario: &Scenario, opts: Options) -> Outcome {
    let mut w = World::new(scenario, opts);
    w.play(&scenario.steps);
    w.finish();
    w.outcome()
}

type SignerViews = Vec<(SessionId, crate::pbs::SignerView, crate::pbs::PublicPart)>;

impl World {
    /// Execute script steps without the end-of-run resolution.
    pub fn play(&mut self, steps: &[Step]) {
        for step in steps {
            match &step.command {
                Command::Advance(n) => self.advance(*n),
                Command::Act { actor, verb } => self.act(step.line, actor, verb),
            }
            if self.exhausted {
                break;
            }
        }
    }

    pub fn new(scenario: &Scenario, opts: Options) -> World {
        let params = scenario.group.params();
        let mut rng = ChaCha20Rng::seed_from_u64(opts.seed);
        let psp_key = keygen(&params, &mut rng);
        let ptc_key = keygen(&params, &mut rng);
        let pto_keys: BTreeMap<String, KeyPair> = scenario
            .ptos()
            .map(|n| (n.to_string(), keygen(&params, &mut rng)))
            .collect();
        let dir = Directory {
            psp: psp_key.public().clone(),
            ptc: ptc_key.public().clone(),
            ptos: pto_keys.iter().map(|(n, k)| (n.clone(), k.public().clone())).collect(),
        };
        let env = Env {
            params: params.clone(),
            network: scenario.network.clone(),
            fares: scenario.fares,
            config: scenario.config.clone(),
            dir,
        };
        let mut keys = BTreeMap::new();
        keys.insert(PSP.to_string(), psp_key.clone());
        keys.insert(PTC.to_string(), ptc_key.clone());
        let mut gates = BTreeMap::new();
        for station in env.network.stations() {
            if let Some(op) = env.network.operator(station) {
                if let Some(k) = pto_keys.get(op) {
                    gates.insert(station.to_string(), Gate::new(station, op, k.clone()));
                }
            }
        }
        let mut ptos = BTreeMap::new();
        for (n, k) in &pto_keys {
            keys.insert(pto_signer(n), k.clone());
            ptos.insert(n.clone(), Pto::new(n, params.clone(), k.clone()));
        }
        let mut users = BTreeMap::new();
        for (name, addr) in scenario.users() {
            let mut u = UserAgent::new(name, addr, &env, &mut rng);
            if opts.adversarial {
                u.set_policy(RestartPolicy::FreshSecret);
            }
            u.sync();
            users.insert(name.to_string(), u);
        }
        let inspectors = scenario
            .actors
            .iter()
            .filter_map(|(n, r)| match r {
                Role::Inspector { pto } => Some((n.clone(), pto.clone())),
                _ => None,
            })
            .collect();
        World {
            psp: Psp::new(params.clone(), psp_key),
            ptc: Ptc::new(params, ptc_key),
            env,
            now: 0,
            rng,
            counter: 0,
            queue: BTreeMap::new(),
            ptos,
            gates,
            users,
            inspectors,
            keys,
            down: BTreeSet::new(),
            faults: opts.faults,
            mutant: opts.mutant,
            routes: BTreeMap::new(),
            progress: BTreeMap::new(),
            gate_progress: BTreeMap::new(),
            notes: BTreeMap::new(),
            know: Knowledge::default(),
            known: 0,
            books: Books::default(),
            trace: Trace::default(),
            processed: 0,
            budget: opts.budget,
            exhausted: false,
        }
    }

    fn log(&mut self, body: impl Into<String>) {
        self.trace.push(self.now, body);
    }

    fn schedule(&mut self, at: u64, ev: Event) {
        self.counter += 1;
        self.queue.insert((at, self.counter), ev);
    }

    fn is_down(&self, node: &NodeId) -> bool {
        self.down.contains(node)
    }

    /// Move the clock forward, delivering everything due on the way.
    pub fn advance(&mut self, ticks: u64) {
        let target = self.now + ticks;
        while let Some((&(t, c), _)) = self.queue.first_key_value() {
            if t > target || self.exhausted {
                break;
            }
            let ev = self.queue.remove(&(t, c)).expect("present");
            self.now = t;
            self.dispatch(ev);
        }
        self.now = target;
        self.flush_gates();
    }

    /// Process events until the queue is empty.
    pub fn quiesce(&mut self) {
        while let Some(((t, _), ev)) = self.queue.pop_first() {
            if self.exhausted {
                break;
            }
            self.now = self.now.max(t);
            self.dispatch(ev);
        }
    }

    fn dispatch(&mut self, ev: Event) {
        self.processed += 1;
        if self.processed > self.budget {
            self.exhausted = true;
            self.log("BUDGET exhausted");
            return;
        }
        match ev {
            Event::Deliver(e) => self.deliver(e),
            Event::Restart(n) => self.restart(n),
            Event::SessionTimer { user, sid, seen, tries } => self.session_timer(&user, sid, seen, tries),
            Event::GateTimer { user, seen, tries } => self.gate_timer(&user, seen, tries),
        }
        self.flush_know();
    }

    fn flush_know(&mut self) {
        while self.known < self.know.tuples.len() {
            let line = format!("KNOW {}", self.know.tuples[self.known]);
            self.known += 1;
            self.log(line);
        }
    }

    // ---- persistence and transmission ----

    fn sync_node(&mut self, node: &NodeId) {
        let postings = match node {
            NodeId::Psp => self.psp.sync(),
            NodeId::Ptc => {
                let p = self.ptc.sync();
                for ev in self.ptc.registry.drain_events() {
                    self.trace.push(self.now, format!("REG ptc {ev}"));
                }
                p
            }
            NodeId::Pto(n) => {
                let pto = self.ptos.get_mut(n).expect("known operator");
                let p = pto.sync();
                let events = pto.tickets.drain_events();
                for ev in events {
                    self.trace.push(self.now, format!("REG pto:{n} {ev}"));
                }
                p
            }
            NodeId::Gate(s) => self.gates.get_mut(s).expect("known gate").sync(),
            NodeId::User(u) => {
                self.users.get_mut(u).expect("known user").sync();
                for (line, trip) in self.notes.remove(u).unwrap_or_default() {
                    if let Some(t) = trip {
                        self.know.truth(u, &t);
                        self.trace.push(self.now, format!("GROUND user={u} trip={t}"));
                    }
                    self.trace.push(self.now, line);
                }
                Vec::new()
            }
        };
        self.flush_know();
        for p in postings {
            self.log(p.trace_line());
            self.books.push(p);
        }
    }

    fn crash(&mut self, node: &NodeId) {
        match node {
            NodeId::Psp => self.psp.crash(),
            NodeId::Ptc => {
                self.ptc.crash();
                self.ptc.registry.drain_events();
            }
            NodeId::Pto(n) => {
                let pto = self.ptos.get_mut(n).expect("known operator");
                pto.crash();
                pto.tickets.drain_events();
            }
            NodeId::Gate(s) => self.gates.get_mut(s).expect("known gate").crash(),
            NodeId::User(u) => {
                self.users.get_mut(u).expect("known user").crash();
                self.notes.remove(u);
            }
        }
        self.log(format!("CRASH {node}"));
        self.down.insert(node.clone());
        let at = self.now + self.env.config.restart_ticks;
        self.schedule(at, Event::Restart(node.clone()));
    }

    /// Persist `node`, then send `outs`, applying at most one fault per
    /// message boundary. `tries` is the retry count for timers armed on
    /// user messages.
    fn commit(&mut self, node: &NodeId, outs: Vec<Envelope>, tries: u32) {
        if let NodeId::User(u) = node {
            for e in &outs {
                self.arm_timer(u, e, tries);
            }
        }
        let mut plan = Vec::new();
        let mut crash = None;
        for e in outs {
            let action = e.payload.step().and_then(|s| self.faults.take(e.flow, s));
            if let Some(a @ (Action::CrashBeforeSend | Action::CrashAfterPersist)) = action {
                self.log(format!("FAULT {a} {}", e.describe()));
                crash = Some((a, e));
                break;
            }
            plan.push((e, action));
        }
        match crash {
            Some((Action::CrashBeforeSend, e)) => {
                if self.mutant {
                    for (e, a) in plan {
                        self.transmit(e, a);
                    }
                    self.transmit(e, None);
                }
                self.crash(node);
            }
            Some(_) => {
                self.sync_node(node);
                self.crash(node);
            }
            None => {
                self.sync_node(node);
                for (e, a) in plan {
                    self.transmit(e, a);
                }
            }
        }
    }

    fn transmit(&mut self, e: Envelope, action: Option<Action>) {
        match action {
            None | Some(Action::CrashBeforeSend | Action::CrashAfterPersist) => self.send(e, 0),
            Some(Action::Drop) => self.log(format!("DROP {}", e.describe())),
            Some(Action::Duplicate) => {
                self.log(format!("DUP {}", e.describe()));
                self.send(e.clone(), 0);
                self.send(e, 0);
            }
            Some(Action::Delay(k)) => {
                self.log(format!("DELAY({k}) {}", e.describe()));
                self.send(e, k);
            }
        }
    }

    fn send(&mut self, e: Envelope, delay: u64) {
        self.log(format!("SEND {}", e.describe()));
        let at = self.now + 1 + delay;
        self.schedule(at, Event::Deliver(e));
    }

    fn arm_timer(&mut self, user: &str, e: &Envelope, tries: u32) {
        let at = self.now + self.env.config.retry_ticks;
        match &e.payload {
            Payload::Issue(m) => {
                let sid = *m.sid();
                self.routes.insert(sid, (user.to_string(), e.flow));
                let seen = self.progress.get(&(user.to_string(), sid)).copied().unwrap_or(0);
                self.schedule(
                    at,
                    Event::SessionTimer {
                        user: user.to_string(),
                        sid,
                        seen,
                        tries,
                    },
                );
            }
            Payload::Gate(GateMsg::CheckinAck { .. }) => {}
            Payload::Gate(_) => {
                let seen = self.gate_progress.get(user).copied().unwrap_or(0);
                self.schedule(
                    at,
                    Event::GateTimer {
                        user: user.to_string(),
                        seen,
                        tries,
                    },
                );
            }
        }
    }

    fn envelope_from(&self, user: &str, out: Outgoing) -> Envelope {
        let (to, via) = match out.dest {
            Dest::Psp => (NodeId::Psp, None),
            Dest::Ptc { via } => (NodeId::Ptc, via),
            Dest::Pto(n) => (NodeId::Pto(n), None),
            Dest::Gate(s) => (NodeId::Gate(s), None),
        };
        Envelope {
            from: NodeId::User(user.to_string()),
            to,
            payload: out.payload,
            flow: out.flow,
            via,
        }
    }

    /// Address a signer's message to the user who owns the session.
    fn to_user(&self, from: NodeId, msg: IssueMsg) -> Option<Envelope> {
        let (user, flow) = self.routes.get(msg.sid())?.clone();
        Some(Envelope {
            from,
            to: NodeId::User(user),
            payload: Payload::Issue(msg),
            flow,
            via: None,
        })
    }

    // ---- delivery ----

    fn deliver(&mut self, e: Envelope) {
        if self.is_down(&e.to) {
            self.log(format!("LOST {}", e.describe()));
            return;
        }
        self.log(format!("RECV {}", e.describe()));
        let to = e.to.clone();
        match (&to, e.payload.clone()) {
            (NodeId::User(u), Payload::Issue(m)) => self.user_issue(u, &m),
            (NodeId::User(u), Payload::Gate(m)) => self.user_gate(u, &m),
            (NodeId::Gate(s), Payload::Gate(m)) => self.gate(s, &e, m),
            (_, Payload::Issue(m)) => self.signer(&to, &e, &m),
            (_, Payload::Gate(_)) => self.log(format!("MISROUTED {}", e.describe())),
        }
    }

    fn user_addr(&self, node: &NodeId) -> Option<String> {
        match node {
            NodeId::User(u) => self.users.get(u).map(|a| a.addr.clone()),
            _ => None,
        }
    }

    fn signer(&mut self, to: &NodeId, e: &Envelope, m: &IssueMsg) {
        let addr = self.user_addr(&e.from);
        let now = self.now;
        let result = match to {
            NodeId::Psp => self
                .psp
                .handle(&self.env, m, addr.as_deref(), now, &mut self.rng, &mut self.know),
            NodeId::Ptc => {
                let hidden = self.env.config.hide_address && [flow::LAZY_CREDIT, flow::DISPUTE_CREDIT].contains(&e.flow);
                let source = match (&e.via, hidden) {
                    (Some(station), _) => Some(Attr::Location(station.clone())),
                    (None, true) => None,
                    (None, false) => addr.map(Attr::Addr),
                };
                self.ptc.handle(&self.env, m, source, now, &mut self.rng, &mut self.know)
            }
            NodeId::Pto(n) => {
                let ptc_up = !self.down.contains(&NodeId::Ptc);
                let pto = self.ptos.get_mut(n).expect("known operator");
                let ptc = ptc_up.then_some(&mut self.ptc);
                let r = pto.handle(&self.env, ptc, m, addr.as_deref(), now, &mut self.rng, &mut self.know);
                if ptc_up {
                    self.sync_node(&NodeId::Ptc);
                }
                r
            }
            _ => unreachable!("signers only"),
        };
        let mut outs = Vec::new();
        match result {
            Ok((reply, outcome)) => {
                if let Some(o) = outcome {
                    self.log(format!("RESOLVE {to} sid={} {}", hex::encode(&m.sid()[..4]), o.name()));
                }
                if let Some(r) = reply {
                    outs.extend(self.to_user(to.clone(), r));
                }
            }
            Err(err) => self.log(format!("ERROR {to} {} {err}", m.name())),
        }
        self.commit(to, outs, 0);
    }

    fn gate(&mut self, station: &str, e: &Envelope, m: GateMsg) {
        let node = NodeId::Gate(station.to_string());
        let ptc_up = !self.down.contains(&NodeId::Ptc);
        let now = self.now;
        let gate = self.gates.get_mut(station).expect("known gate");
        let ptc = ptc_up.then_some(&mut self.ptc);
        let (seqno, result) = match &m {
            GateMsg::CheckinRequest { credit, head } => (
                credit.seqno,
                gate.checkin(&self.env, ptc, credit, *head, now, &mut self.rng, &mut self.know)
                    .map(GateMsg::CheckinIssued),
            ),
            GateMsg::CheckoutPresent {
                token,
                receipt,
                head,
                lazy,
            } => (
                token.credit_seqno,
                gate.checkout(&self.env, ptc, token, receipt.as_ref(), *head, *lazy, now, &mut self.rng, &mut self.know)
                    .map(GateMsg::CheckoutIssued),
            ),
            GateMsg::CheckinAck { seqno } => {
                let line = format!("ACK gate:{station} credit={}", short(seqno));
                self.log(line);
                return;
            }
            _ => {
                self.log(format!("MISROUTED {}", e.describe()));
                return;
            }
        };
        if ptc_up {
            self.sync_node(&NodeId::Ptc);
        }
        let reply = match result {
            Ok(r) => Some(r),
            Err(ProtoError::Unreachable(what)) => {
                self.log(format!("UNREACHABLE gate:{station} {what}"));
                None
            }
            Err(err) => {
                self.log(format!("REFUSED gate:{station} credit={} {err}", short(&seqno)));
                Some(GateMsg::Refused {
                    credit_seqno: seqno,
                    reason: err.to_string(),
                })
            }
        };
        let outs = reply
            .map(|r| Envelope {
                from: node.clone(),
                to: e.from.clone(),
                payload: Payload::Gate(r),
                flow: e.flow,
                via: None,
            })
            .into_iter()
            .collect();
        self.commit(&node, outs, 0);
    }

    fn user_issue(&mut self, u: &str, m: &IssueMsg) {
        *self.progress.entry((u.to_string(), *m.sid())).or_default() += 1;
        let now = self.now;
        let agent = self.users.get_mut(u).expect("known user");
        let result = agent.on_issue(m, now, &mut self.rng);
        self.after_user(u, result);
    }

    fn user_gate(&mut self, u: &str, m: &GateMsg) {
        *self.gate_progress.entry(u.to_string()).or_default() += 1;
        let now = self.now;
        let agent = self.users.get_mut(u).expect("known user");
        let result = agent.on_gate(&self.env, m, now, &mut self.rng);
        self.after_user(u, result);
    }

    fn after_user(&mut self, u: &str, result: Result<(Vec<Outgoing>, Vec<Note>), ProtoError>) {
        let node = NodeId::User(u.to_string());
        match result {
            Ok((outs, notes)) => {
                for n in notes {
                    self.note(u, n);
                }
                let envs = outs.into_iter().map(|o| self.envelope_from(u, o)).collect();
                self.commit(&node, envs, 0);
            }
            Err(err) => {
                self.log(format!("ERROR {node} {err}"));
                self.commit(&node, Vec::new(), 0);
            }
        }
    }

    /// Queue a device observation; it reaches the trace when the device
    /// persists, so a crash cannot count it twice.
    fn note(&mut self, u: &str, n: Note) {
        let mut trip = None;
        let line = match n {
            Note::Opened { value } => format!("CREDIT user={u} op=open value={value}"),
            Note::Trip { label, fare, topup } => {
                let line = format!("CREDIT user={u} op=trip fare={fare} topup={topup} trip={label}");
                trip = Some(label);
                line
            }
            Note::Adjusted { value } => format!("CREDIT user={u} op=adjust value={value}"),
            Note::Shortfall { credit_seqno, missing } => {
                format!("CREDIT user={u} op=shortfall missing={missing} credit={}", short(&credit_seqno))
            }
            Note::Ticket { trip: t } => {
                trip = Some(t.clone());
                format!("TICKET user={u} trip={t}")
            }
            Note::Refused { what, reason } => format!("REFUSED user={u} {what}: {reason}"),
        };
        self.notes.entry(u.to_string()).or_default().push((line, trip));
    }

    // ---- timers and restarts ----

    fn session_timer(&mut self, u: &str, sid: SessionId, seen: u64, tries: u32) {
        let node = NodeId::User(u.to_string());
        if self.is_down(&node) {
            return;
        }
        let now_seen = self.progress.get(&(u.to_string(), sid)).copied().unwrap_or(0);
        let agent = &self.users[u];
        if now_seen != seen || !agent.unfinished().contains(&sid) {
            return;
        }
        if tries >= self.env.config.max_retries {
            self.log(format!("GIVEUP {node} sid={}", hex::encode(&sid[..4])));
            return;
        }
        let resumed = agent.resume(&sid);
        self.log(format!("TIMER {node} sid={} try={}", hex::encode(&sid[..4]), tries + 1));
        match resumed {
            Ok(Some(o)) => {
                let e = self.envelope_from(u, o);
                self.commit(&node, vec![e], tries + 1);
            }
            Ok(None) => {}
            Err(err) => self.log(format!("ERROR {node} {err}")),
        }
    }

    fn gate_timer(&mut self, u: &str, seen: u64, tries: u32) {
        let node = NodeId::User(u.to_string());
        if self.is_down(&node) || self.gate_progress.get(u).copied().unwrap_or(0) != seen {
            return;
        }
        let agent = self.users.get_mut(u).expect("known user");
        if !agent.waiting_at_gate() {
            return;
        }
        if tries >= self.env.config.max_retries {
            agent.abandon_gate();
            self.log(format!("GIVEUP {node} gate"));
            self.commit(&node, Vec::new(), 0);
            return;
        }
        let retry = agent.gate_retry();
        self.log(format!("TIMER {node} gate try={}", tries + 1));
        if let Some(o) = retry {
            let e = self.envelope_from(u, o);
            self.commit(&node, vec![e], tries + 1);
        }
    }

    fn restart(&mut self, node: NodeId) {
        self.down.remove(&node);
        self.log(format!("RESTART {node}"));
        let now = self.now;
        let msgs = match &node {
            NodeId::Psp => self.psp.sessions.resume_all(now, &mut self.rng),
            NodeId::Ptc => self.ptc.sessions.resume_all(now, &mut self.rng),
            NodeId::Pto(n) => self
                .ptos
                .get_mut(n)
                .expect("known operator")
                .sessions
                .resume_all(now, &mut self.rng),
            NodeId::Gate(_) => Vec::new(),
            NodeId::User(u) => {
                let u = u.clone();
                self.restart_user(&u);
                return;
            }
        };
        let outs = msgs.into_iter().filter_map(|m| self.to_user(node.clone(), m)).collect();
        self.commit(&node, outs, 0);
    }

    fn restart_user(&mut self, u: &str) {
        let node = NodeId::User(u.to_string());
        let agent = self.users.get_mut(u).expect("known user");
        let mut outs = Vec::new();
        for sid in agent.unfinished() {
            match agent.resume(&sid) {
                Ok(Some(o)) => outs.push(o),
                Ok(None) => {}
                Err(err) => self.trace.push(self.now, format!("ERROR {node} {err}")),
            }
        }
        let agent = self.users.get_mut(u).expect("known user");
        outs.extend(agent.gate_retry());
        let envs = outs.into_iter().map(|o| self.envelope_from(u, o)).collect();
        self.commit(&node, envs, 0);
    }

    /// Optimistic check-ins reach the clearinghouse; refused tokens are
    /// blacklisted at every gate.
    fn flush_gates(&mut self) {
        if self.is_down(&NodeId::Ptc) || self.gates.values().all(|g| g.queued() == 0) {
            return;
        }
        let now = self.now;
        let mut refused = Vec::new();
        for g in self.gates.values_mut() {
            refused.extend(g.flush(&self.env, &mut self.ptc, now, &mut self.know));
        }
        for s in &refused {
            for g in self.gates.values_mut() {
                g.blacklist(s);
            }
            self.log(format!("BLACKLIST credit={}", short(s)));
        }
        self.sync_node(&NodeId::Ptc);
        let stations: Vec<String> = self.gates.keys().cloned().collect();
        for s in stations {
            self.sync_node(&NodeId::Gate(s));
        }
    }

    // ---- scripted actions ----

    pub fn act(&mut self, line: usize, actor: &str, verb: &Verb) {
        if let Err(err) = self.try_act(actor, verb) {
            self.log(format!("VERB line={line} {actor} {err}"));
        }
        self.flush_know();
    }

    fn node_of(&self, actor: &str) -> Option<NodeId> {
        match actor {
            "psp" => Some(NodeId::Psp),
            "ptc" => Some(NodeId::Ptc),
            a if self.users.contains_key(a) => Some(NodeId::User(a.to_string())),
            a if self.ptos.contains_key(a) => Some(NodeId::Pto(a.to_string())),
            _ => None,
        }
    }

    fn require_up(&self, node: &NodeId) -> Result<(), ProtoError> {
        if self.is_down(node) {
            return Err(ProtoError::Rejected(format!("{node} is down")));
        }
        Ok(())
    }

    fn user_send(&mut self, u: &str, out: Outgoing) {
        let e = self.envelope_from(u, out);
        self.commit(&NodeId::User(u.to_string()), vec![e], 0);
    }

    fn try_act(&mut self, actor: &str, verb: &Verb) -> Result<(), ProtoError> {
        let now = self.now;
        if let Verb::Inspect { user, leg, online } = verb {
            return self.inspect(actor, user, leg, *online);
        }
        let node = self
            .node_of(actor)
            .ok_or_else(|| ProtoError::Rejected(format!("unknown actor {actor}")))?;
        self.require_up(&node)?;
        match (verb, &node) {
            (Verb::Crash, _) => {
                self.crash(&node);
                return Ok(());
            }
            (Verb::Transfer, NodeId::Psp) => {
                if let Some(a) = self.psp.transfer() {
                    self.log(format!("TRANSFER amount={a}"));
                }
                self.sync_node(&node);
                return Ok(());
            }
            (Verb::Settle, NodeId::Pto(n)) => return self.settle(n),
            (_, NodeId::User(_)) => {}
            _ => return Err(ProtoError::Rejected(format!("{actor} cannot do that"))),
        }
        let u = actor;
        let agent = self.users.get_mut(u).expect("user node");
        let out = match verb {
            Verb::Buy(route) => {
                let r: Vec<&str> = route.iter().map(String::as_str).collect();
                Some(agent.buy(&self.env, &r, now, &mut self.rng)?)
            }
            Verb::BuyQuoted(route, fare) => {
                let r: Vec<&str> = route.iter().map(String::as_str).collect();
                Some(agent.buy_quoted(&self.env, &r, Some(*fare), now, &mut self.rng)?)
            }
            Verb::Pay(service, amount) => Some(agent.pay(*service, *amount, now, &mut self.rng)?),
            Verb::Open(amount) => Some(agent.open(*amount, now, &mut self.rng)?),
            Verb::Reissue(i, route) => {
                let r: Vec<&str> = route.iter().map(String::as_str).collect();
                Some(agent.reissue(&self.env, *i, &r, now, &mut self.rng)?)
            }
            Verb::Checkin(station) => Some(agent.checkin(station)?),
            Verb::Checkout { station, topup, lazy } => Some(agent.checkout(station, *topup, *lazy)?),
            Verb::Cancel => {
                self.cancel(u)?;
                None
            }
            Verb::Return(i) => {
                self.return_ticket(u, *i)?;
                None
            }
            Verb::CancelReturned(i) => {
                self.cancel_returned(u, *i)?;
                None
            }
            Verb::LazyFinalize => {
                let outs = agent.finalize_lazy(now, &mut self.rng)?;
                let envs = outs.into_iter().map(|o| self.envelope_from(u, o)).collect();
                self.commit(&node, envs, 0);
                None
            }
            Verb::Dispute => {
                let out = agent.dispute_fares(now, &mut self.rng)?;
                if out.is_none() {
                    self.log(format!("NOTHING user={u} no shortfall to dispute"));
                }
                out
            }
            Verb::Reinstall => {
                agent.crash();
                self.notes.remove(u);
                self.log(format!("REINSTALL {node}"));
                self.restart_user(u);
                None
            }
            _ => return Err(ProtoError::Rejected(format!("{actor} cannot do that"))),
        };
        match out {
            Some(o) => self.user_send(u, o),
            None => self.sync_node(&node),
        }
        Ok(())
    }

    fn cancel(&mut self, u: &str) -> Result<(), ProtoError> {
        self.require_up(&NodeId::Psp)?;
        self.require_up(&NodeId::Ptc)?;
        let agent = self.users.get_mut(u).expect("user");
        let receipt = agent
            .take_unused_receipt(Service::Pto)
            .or_else(|| agent.take_unused_receipt(Service::Ptc))
            .ok_or_else(|| ProtoError::Rejected("no unused receipt".into()))?;
        match self.psp.cancel(&self.env, &mut self.ptc, u, &receipt, false) {
            Ok(()) => {
                self.log(format!("CANCEL user={u} receipt={} amount={}", short(&receipt.seqno), receipt.fare));
                self.sync_node(&NodeId::Ptc);
                self.sync_node(&NodeId::Psp);
                Ok(())
            }
            Err(e) => {
                self.users.get_mut(u).expect("user").put_back_receipt(receipt);
                Err(e)
            }
        }
    }

    fn return_ticket(&mut self, u: &str, i: usize) -> Result<(), ProtoError> {
        let purchase = self.users[u]
            .wallet()
            .purchases
            .get(i)
            .cloned()
            .ok_or_else(|| ProtoError::Rejected(format!("no purchase {i}")))?;
        let op = self
            .env
            .network
            .operator(&purchase.ticket.trip.route[0])
            .ok_or_else(|| ProtoError::Rejected("route has no operator".into()))?
            .to_string();
        let node = NodeId::Pto(op.clone());
        self.require_up(&node)?;
        self.ptos
            .get_mut(&op)
            .expect("operator")
            .return_ticket(&self.env, &purchase.ticket)?;
        self.log(format!("RETURN user={u} ticket={}", short(&purchase.ticket.seqno)));
        self.sync_node(&node);
        self.users.get_mut(u).expect("user").mark_returned(i);
        Ok(())
    }

    fn cancel_returned(&mut self, u: &str, i: usize) -> Result<(), ProtoError> {
        let purchase = self.users[u]
            .wallet()
            .purchases
            .get(i)
            .cloned()
            .ok_or_else(|| ProtoError::Rejected(format!("no purchase {i}")))?;
        if !purchase.returned {
            return Err(ProtoError::Rejected("ticket not returned".into()));
        }
        let op = self
            .env
            .network
            .operator(&purchase.ticket.trip.route[0])
            .ok_or_else(|| ProtoError::Rejected("route has no operator".into()))?
            .to_string();
        let node = NodeId::Pto(op.clone());
        self.require_up(&node)?;
        self.require_up(&NodeId::Psp)?;
        self.require_up(&NodeId::Ptc)?;
        self.ptos
            .get_mut(&op)
            .expect("operator")
            .release_receipt(&self.env, &purchase.ticket, &purchase.receipt)?;
        self.sync_node(&node);
        self.psp.cancel(&self.env, &mut self.ptc, u, &purchase.receipt, true)?;
        self.log(format!(
            "CANCEL user={u} receipt={} amount={} returned",
            short(&purchase.receipt.seqno),
            purchase.receipt.fare
        ));
        self.sync_node(&NodeId::Ptc);
        self.sync_node(&NodeId::Psp);
        self.users.get_mut(u).expect("user").drop_purchase(i);
        Ok(())
    }

    fn settle(&mut self, pto: &str) -> Result<(), ProtoError> {
        self.require_up(&NodeId::Ptc)?;
        let p = self.ptos.get_mut(pto).expect("operator");
        let report = p.settle(&self.env, &mut self.ptc);
        for (s, why) in &report.flagged {
            self.trace.push(self.now, format!("FLAGGED pto:{pto} receipt={} {why}", short(s)));
        }
        self.log(format!(
            "SETTLE pto:{pto} paid={} amount={} flagged={}",
            report.paid.len(),
            report.total(),
            report.flagged.len()
        ));
        self.sync_node(&NodeId::Ptc);
        self.sync_node(&NodeId::Pto(pto.to_string()));
        Ok(())
    }

    fn inspect(&mut self, inspector: &str, user: &str, leg: &crate::tokens::Leg, online: bool) -> Result<(), ProtoError> {
        let pto_name = self
            .inspectors
            .get(inspector)
            .cloned()
            .ok_or_else(|| ProtoError::Rejected(format!("{inspector} is not an inspector")))?;
        let agent = self
            .users
            .get(user)
            .ok_or_else(|| ProtoError::Rejected(format!("unknown user {user}")))?;
        let now = self.now;
        let ptc_up = online && !self.is_down(&NodeId::Ptc);
        let pto_node = NodeId::Pto(pto_name.clone());
        let (what, reference, result) = if let Some(token) = agent.checkin_token().cloned() {
            let ptc = ptc_up.then_some(&mut self.ptc);
            let r = inspect_checkin(&self.env, &pto_name, ptc, &token, leg, now, &mut self.know);
            ("checkin", token.credit_seqno, r)
        } else if let Some(ticket) = agent.ticket_for(leg, now).cloned() {
            let issuer = self
                .env
                .network
                .operator(&ticket.trip.route[0])
                .unwrap_or(&pto_name)
                .to_string();
            let pto = self
                .ptos
                .get_mut(&issuer)
                .ok_or_else(|| ProtoError::Rejected("unknown ticket issuer".into()))?;
            let r = pto.inspect_ticket(&self.env, &ticket, leg, now, online, &mut self.know);
            self.sync_node(&NodeId::Pto(issuer));
            ("ticket", ticket.seqno, r)
        } else {
            (
                "none",
                [0; 16],
                Err(ProtoError::Rejected("no ticket or check-in token".into())),
            )
        };
        if ptc_up {
            self.sync_node(&NodeId::Ptc);
        }
        match result {
            Ok(()) => self.log(format!("INSPECT {inspector} user={user} leg={leg} {what} ok")),
            Err(ProtoError::Unreachable(w)) => {
                self.log(format!("INSPECT {inspector} user={user} leg={leg} {what} deferred: {w} unreachable"))
            }
            Err(err) => {
                let amount = self.env.fine();
                self.log(format!("INSPECT {inspector} user={user} leg={leg} {what} failed: {err}"));
                self.log(format!("FINE user={user} pto={pto_name} amount={amount}"));
                if !self.is_down(&pto_node) {
                    let pto = self.ptos.get_mut(&pto_name).expect("operator");
                    pto.outbox.push(Posting::Ledger(Entry::Fine {
                        pto: pto_name.clone(),
                        reference,
                        amount,
                    }));
                    self.sync_node(&pto_node);
                }
            }
        }
        Ok(())
    }

    // ---- end of run ----

    /// Drain the network, resolve every open session, claim lazy credit,
    /// dispute shortfalls, transfer and settle.
    pub fn finish(&mut self) {
        self.quiesce();
        let stale = self.env.config.stale_ticks;
        for _round in 0..3 {
            if self.exhausted || !self.anything_open() {
                break;
            }
            self.advance(stale + 1);
            self.abort_stale();
            let users: Vec<String> = self.users.keys().cloned().collect();
            for u in &users {
                self.settle_user_sessions(u);
            }
            self.quiesce();
        }
        let users: Vec<String> = self.users.keys().cloned().collect();
        for u in &users {
            let now = self.now;
            let agent = self.users.get_mut(u).expect("user");
            match agent.finalize_lazy(now, &mut self.rng) {
                Ok(outs) => {
                    let envs = outs.into_iter().map(|o| self.envelope_from(u, o)).collect();
                    self.commit(&NodeId::User(u.clone()), envs, 0);
                }
                Err(err) => self.log(format!("ERROR user:{u} {err}")),
            }
        }
        self.quiesce();
        for _ in 0..16 {
            let mut any = false;
            for u in &users {
                let now = self.now;
                let agent = self.users.get_mut(u).expect("user");
                match agent.dispute_fares(now, &mut self.rng) {
                    Ok(Some(o)) => {
                        any = true;
                        self.user_send(u, o);
                    }
                    Ok(None) => {}
                    Err(err) => self.log(format!("ERROR user:{u} {err}")),
                }
            }
            if !any {
                break;
            }
            self.quiesce();
        }
        self.flush_gates();
        self.quiesce();
        if let Some(a) = self.psp.transfer() {
            self.log(format!("TRANSFER amount={a}"));
        }
        self.sync_node(&NodeId::Psp);
        let ptos: Vec<String> = self.ptos.keys().cloned().collect();
        for p in ptos {
            if let Err(err) = self.settle(&p) {
                self.log(format!("ERROR pto:{p} {err}"));
            }
        }
        for u in &users {
            let v = self.device_credit(u);
            self.log(format!("FINAL user={u} credit={v}"));
        }
        self.blindness_line();
        self.flush_know();
    }

    fn anything_open(&self) -> bool {
        self.users.values().any(|u| !u.unfinished().is_empty() || u.waiting_at_gate())
    }

    fn abort_stale(&mut self) {
        let now = self.now;
        let stale = self.env.config.stale_ticks;
        let mut nodes = vec![NodeId::Psp, NodeId::Ptc];
        nodes.extend(self.ptos.keys().map(|n| NodeId::Pto(n.clone())));
        for node in nodes {
            let sids = match &node {
                NodeId::Psp => self.psp.sessions.abort_stale(now, stale),
                NodeId::Ptc => self.ptc.sessions.abort_stale(now, stale),
                NodeId::Pto(n) => self.ptos.get_mut(n).expect("operator").sessions.abort_stale(now, stale),
                _ => Vec::new(),
            };
            for s in sids {
                self.log(format!("ABORT {node} sid={}", hex::encode(&s[..4])));
            }
            self.sync_node(&node);
        }
    }

    /// Push each open session to a verdict: a fresh request if the signer
    /// never answered, a signature dispute otherwise.
    fn settle_user_sessions(&mut self, u: &str) {
        let node = NodeId::User(u.to_string());
        let agent = &self.users[u];
        let mut outs = Vec::new();
        for sid in agent.unfinished() {
            let phase = agent.sessions.record(&sid).map(|r| r.phase);
            let r = if phase == Some(Phase::Init) {
                agent.resume(&sid)
            } else {
                agent.dispute(&sid)
            };
            match r {
                Ok(o) => outs.extend(o),
                Err(err) => self.trace.push(self.now, format!("ERROR {node} {err}")),
            }
        }
        let agent = self.users.get_mut(u).expect("user");
        outs.extend(agent.gate_retry());
        let envs = outs.into_iter().map(|o| self.envelope_from(u, o)).collect();
        self.commit(&node, envs, 0);
    }

    /// Credit on the device: the idle token or the one checked in.
    pub fn device_credit(&self, u: &str) -> Cents {
        let agent = &self.users[u];
        agent.credit_value() + agent.wallet().ride.as_ref().map_or(0, |r| r.credit.value)
    }

    /// Cross-check a sample of completed sessions per signer and public
    /// part: every signer view must be consistent with every shown token.
    fn blindness_line(&mut self) {
        let mut pairs = 0;
        let mut ok = 0;
        let signers: Vec<(String, SignerViews)> = {
            let mut v = vec![(PSP.to_string(), collect_views(self.psp.sessions.records()))];
            v.push((PTC.to_string(), collect_views(self.ptc.sessions.records())));
            for (n, p) in &self.ptos {
                v.push((pto_signer(n), collect_views(p.sessions.records())));
            }
            v
        };
        for (signer, views) in signers {
            let Some(key) = self.keys.get(&signer) else { continue };
            let mut groups: BTreeMap<crate::pbs::PublicPart, Vec<(SessionId, crate::pbs::SignerView)>> = BTreeMap::new();
            for (sid, view, pp) in views {
                groups.entry(pp).or_default().push((sid, view));
            }
            for (pp, members) in groups {
                let members: Vec<_> = members.into_iter().take(4).collect();
                let mut shown = Vec::new();
                for (sid, _) in &members {
                    for agent in self.users.values() {
                        if let Some(r) = agent.sessions.record(sid) {
                            shown.extend(r.obtained.iter().map(|(m, _, s)| (m.clone(), s.clone())));
                        }
                    }
                }
                let views: Vec<_> = members.into_iter().map(|(_, v)| v).collect();
                let (p, k) = cross_witness(&self.env.params, key, &pp, &views, &shown);
                pairs += p;
                ok += k;
            }
        }
        self.log(format!("BLINDNESS pairs={pairs} witnessed={ok}"));
    }

    // ---- invariants ----

    /// Everything that must hold once the run has settled.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.exhausted {
            v.push("QUIESCENCE event budget exhausted".to_string());
        }
        for d in self.books.reconcile(true).discrepancies {
            v.push(format!("LEDGER {d}"));
        }
        let folds = credit_fold(&self.trace.text());
        for u in self.users.keys() {
            let fold = folds.get(u).copied().unwrap_or(0);
            let held = self.device_credit(u);
            if fold != held {
                v.push(format!("FOLD user={u} fold={fold} device={held}"));
            }
        }
        let mut signers: Vec<(String, Vec<(SessionId, bool)>)> = vec![
            ("psp".into(), admitted(self.psp.sessions.records())),
            ("ptc".into(), admitted(self.ptc.sessions.records())),
        ];
        for (n, p) in &self.ptos {
            signers.push((format!("pto:{n}"), admitted(p.sessions.records())));
        }
        for (signer, sessions) in signers {
            for (sid, _) in sessions {
                let obtained: Vec<usize> = self
                    .users
                    .values()
                    .filter_map(|a| a.sessions.record(&sid).map(|r| r.obtained.len()))
                    .collect();
                if obtained != [1] {
                    v.push(format!(
                        "SIGNATURES {signer} sid={} obtained={obtained:?}",
                        hex::encode(&sid[..4])
                    ));
                }
            }
        }
        for (u, agent) in &self.users {
            let w = agent.wallet();
            if w.duplicates > 0 {
                v.push(format!("WALLET user={u} duplicate signatures={}", w.duplicates));
            }
            for r in &w.receipts {
                if self.ptc.registry.get(TokenKind::Receipt, &r.seqno).is_some() {
                    v.push(format!("WALLET user={u} held receipt {} is already used", short(&r.seqno)));
                }
            }
            if let Some(c) = &w.credit {
                if let Some(rec) = self.ptc.registry.get(TokenKind::Credit, &c.seqno) {
                    v.push(format!(
                        "WALLET user={u} idle credit {} is {}",
                        short(&c.seqno),
                        rec.state.name()
                    ));
                }
            }
        }
        for s in self.ptc.unclaimed_credit() {
            v.push(format!("CREDIT_UNCLAIMED credit={}", short(&s)));
        }
        v
    }

    pub fn outcome(&self) -> Outcome {
        Outcome {
            trace: self.trace.clone(),
            books: self.books.clone(),
            report: self.books.reconcile(true),
            knowledge: self.know.clone(),
            finals: self.users.keys().map(|u| (u.clone(), self.device_credit(u))).collect(),
            violations: self.violations(),
            unused_faults: self.faults.unused().iter().map(|b| b.to_string()).collect(),
        }
    }
}

fn collect_views<'a>(
    records: impl Iterator<Item = &'a crate::session::SignerRecord>,
) -> Vec<(SessionId, crate::pbs::SignerView, crate::pbs::PublicPart)> {
    records
        .filter(|r| matches!(r.phase, Phase::Completed | Phase::IntermediateSent))
        .filter_map(|r| Some((r.sid, r.signer_view()?, r.public_part.clone()?)))
        .collect()
}

/// Sessions the signer admitted, i.e. paid for or otherwise authorised.
fn admitted<'a>(records: impl Iterator<Item = &'a crate::session::SignerRecord>) -> Vec<(SessionId, bool)> {
    records
        .filter(|r| r.public_part.is_some())
        .map(|r| (r.sid, r.phase == Phase::Completed))
        .collect()
}

/// Expected device credit per user from the trace alone: openings, trips
/// (top-up minus fare), shortfalls and adjustments.
pub fn credit_fold(trace: &str) -> BTreeMap<String, Cents> {
    use super::trace::{body, field};
    let mut m: BTreeMap<String, Cents> = BTreeMap::new();
    for line in trace.lines() {
        let b = body(line);
        let Some(rest) = b.strip_prefix("CREDIT ") else { continue };
        let (Some(user), Some(op)) = (field(rest, "user"), field(rest, "op")) else {
            continue;
        };
        let num = |k: &str| field(rest, k).and_then(|v| v.parse::<Cents>().ok()).unwrap_or(0);
        let delta = match op {
            "open" | "adjust" => num("value"),
            "trip" => num("topup") - num("fare"),
            "shortfall" => -num("missing"),
            _ => 0,
        };
        *m.entry(user.to_string()).or_default() += delta;
    }
    m
}
