use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    aggregate_proposals, argmin, overlay, tuner_parent, Assembled, AskVerb, EvalContext, FirstPass, MessageKind,
    MessageStats, Mode, Pass, PassEntry, Proposal, SubQueryOutcome, TaskResult, TieRule, TraceEvent, TuningLog,
};
use crate::hierarchy::{AgentId, AgentKind, Hierarchy, TunerOverlay, ALG_ROOT, DATA_ROOT, ROOT};
use crate::params::{set_covers, SimilarityConstants};
use crate::query::Query;
use crate::tuner::{integrate, suggest, Suggestion};

/// Delivery order of queued messages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delivery {
    /// One global FIFO queue.
    Fifo,
    /// A random sender/receiver pair is served each step; messages within a
    /// pair stay FIFO.
    Shuffled(u64),
}

#[derive(Debug, Clone)]
enum Payload {
    Subqueries(Vec<usize>),
    Proposals(BTreeMap<usize, Proposal>),
    Outcome(BTreeMap<usize, PassEntry>),
    DataSpec,
    DataMatch(bool),
    DataFound(Vec<AgentId>),
    SuggestRequest(BTreeSet<String>),
    Suggestions(BTreeMap<String, Suggestion>),
    Results {
        best: BTreeMap<usize, TaskResult>,
        table: BTreeMap<usize, Vec<TaskResult>>,
    },
}

impl Payload {
    fn describe(&self) -> String {
        match self {
            Payload::Subqueries(s) => format!("subqueries {s:?}"),
            Payload::Proposals(p) => {
                let parts: Vec<String> = p.iter().map(|(i, p)| format!("sq{i}={}", p.r)).collect();
                parts.join(" ")
            }
            Payload::Outcome(o) => {
                let parts: Vec<String> = o.iter().map(|(i, e)| format!("sq{i}: r={} b={:?}", e.r, e.b)).collect();
                parts.join("; ")
            }
            Payload::DataSpec => "locate dataset".into(),
            Payload::DataMatch(m) => format!("match={m}"),
            Payload::DataFound(f) => format!("found {f:?}"),
            Payload::SuggestRequest(h) => format!("H={h:?}"),
            Payload::Suggestions(s) => format!("{} families", s.len()),
            Payload::Results { best, table } => {
                let rows: usize = table.values().map(Vec::len).sum();
                let parts: Vec<String> = best
                    .iter()
                    .map(|(i, r)| format!("sq{i}: {} loss={}", r.family, r.loss))
                    .collect();
                format!("{rows} rows; {}", parts.join("; "))
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Message {
    pass: Pass,
    kind: MessageKind,
    from: AgentId,
    to: AgentId,
    /// Job of the sender (on Ask) or of the receiver (on Inform).
    job: u64,
    payload: Payload,
}

enum Mailbox {
    Fifo(VecDeque<Message>),
    Shuffled {
        queues: BTreeMap<(AgentId, AgentId), VecDeque<Message>>,
        rng: Box<ChaCha8Rng>,
    },
}

impl Mailbox {
    fn new(delivery: Delivery) -> Self {
        match delivery {
            Delivery::Fifo => Mailbox::Fifo(VecDeque::new()),
            Delivery::Shuffled(seed) => Mailbox::Shuffled {
                queues: BTreeMap::new(),
                rng: Box::new(ChaCha8Rng::seed_from_u64(seed)),
            },
        }
    }

    fn push(&mut self, m: Message) {
        match self {
            Mailbox::Fifo(q) => q.push_back(m),
            Mailbox::Shuffled { queues, .. } => queues.entry((m.from, m.to)).or_default().push_back(m),
        }
    }

    fn pop(&mut self) -> Option<Message> {
        match self {
            Mailbox::Fifo(q) => q.pop_front(),
            Mailbox::Shuffled { queues, rng } => {
                if queues.is_empty() {
                    return None;
                }
                let pick = rng.random_range(0..queues.len());
                let key = *queues.keys().nth(pick).expect("index in range");
                let queue = queues.get_mut(&key).expect("key exists");
                let m = queue.pop_front();
                if queue.is_empty() {
                    queues.remove(&key);
                }
                m
            }
        }
    }
}

struct Job {
    agent: AgentId,
    parent: AgentId,
    parent_job: u64,
    local: Vec<usize>,
    awaiting: usize,
    suggestions: BTreeMap<String, Vec<Suggestion>>,
    table: BTreeMap<usize, Vec<TaskResult>>,
}

pub(super) struct Engine<'a> {
    h: &'a Hierarchy,
    q: &'a Query,
    c: SimilarityConstants,
    rules: Vec<TieRule>,
    mailbox: Mailbox,
    stats: MessageStats,
    trace: Option<Vec<TraceEvent>>,
    steps: usize,

    data_awaiting: usize,
    data_matches: Vec<AgentId>,
    data_found: Option<Vec<AgentId>>,

    entries: Vec<BTreeMap<usize, PassEntry>>,
    awaiting: Vec<usize>,
    proposals: BTreeMap<usize, BTreeMap<AgentId, f64>>,
    outcome: Option<BTreeMap<usize, PassEntry>>,

    jobs: BTreeMap<u64, Job>,
    next_job: u64,
    root_awaiting: usize,
    results: Vec<TaskResult>,
    logs: Vec<TuningLog>,
    live: Vec<TunerOverlay>,
    spawned: Vec<String>,
}

impl<'a> Engine<'a> {
    pub(super) fn new(
        h: &'a Hierarchy,
        q: &'a Query,
        c: SimilarityConstants,
        mode: Mode,
        delivery: Delivery,
        trace: bool,
    ) -> Self {
        let size = h.alg_size();
        Self {
            h,
            q,
            c,
            rules: q.algorithms.iter().map(|sq| TieRule::new(mode, sq)).collect(),
            mailbox: Mailbox::new(delivery),
            stats: MessageStats {
                algorithm_size: size,
                bound: 4 * size,
                ..MessageStats::default()
            },
            trace: trace.then(Vec::new),
            steps: 0,
            data_awaiting: 0,
            data_matches: Vec::new(),
            data_found: None,
            entries: vec![BTreeMap::new(); h.len()],
            awaiting: vec![0; h.len()],
            proposals: BTreeMap::new(),
            outcome: None,
            jobs: BTreeMap::new(),
            next_job: 1,
            root_awaiting: 0,
            results: Vec::new(),
            logs: Vec::new(),
            live: Vec::new(),
            spawned: Vec::new(),
        }
    }

    fn send(&mut self, pass: Pass, kind: MessageKind, from: AgentId, to: AgentId, job: u64, payload: Payload) {
        self.mailbox.push(Message {
            pass,
            kind,
            from,
            to,
            job,
            payload,
        });
    }

    fn drain(&mut self, ctx: Option<&EvalContext>) {
        while let Some(m) = self.mailbox.pop() {
            self.stats.record(m.pass, m.kind);
            self.steps += 1;
            if let Some(trace) = &mut self.trace {
                trace.push(TraceEvent {
                    step: self.steps,
                    pass: m.pass,
                    kind: m.kind,
                    from: self.h.nodes()[m.from].label.clone(),
                    to: self.h.nodes()[m.to].label.clone(),
                    detail: m.payload.describe(),
                });
            }
            self.deliver(m, ctx);
        }
    }

    fn deliver(&mut self, m: Message, ctx: Option<&EvalContext>) {
        match (m.kind, m.payload) {
            (MessageKind::Cfp, Payload::DataSpec) => self.on_data_cfp(m.to),
            (MessageKind::Propose, Payload::DataMatch(hit)) => self.on_data_propose(m.to, m.from, hit),
            (MessageKind::Inform, Payload::DataFound(found)) => self.data_found = Some(found),
            (MessageKind::Cfp, Payload::Subqueries(s)) => self.on_cfp(m.to, &s),
            (MessageKind::Propose, Payload::Proposals(p)) => self.on_propose(m.to, m.from, &p),
            (MessageKind::Inform, Payload::Outcome(o)) => self.outcome = Some(o),
            (MessageKind::Ask(AskVerb::Suggest), Payload::SuggestRequest(h)) => self.on_suggest(m.to, m.from, m.job, &h),
            (MessageKind::Ask(verb), Payload::Subqueries(s)) => {
                let ctx = ctx.expect("second pass has an evaluation context");
                self.on_ask(m.to, m.from, m.job, verb, s, ctx);
            }
            (MessageKind::Inform, Payload::Suggestions(s)) => {
                for (family, sugg) in s {
                    if let Some(job) = self.jobs.get_mut(&m.job) {
                        job.suggestions.entry(family).or_default().push(sugg);
                    }
                }
                self.job_reply(m.job, ctx);
            }
            (MessageKind::Inform, Payload::Results { table, .. }) => {
                if m.to == ROOT {
                    self.results.extend(table.into_values().flatten());
                    self.root_awaiting -= 1;
                } else {
                    if let Some(job) = self.jobs.get_mut(&m.job) {
                        for (i, rows) in table {
                            job.table.entry(i).or_default().extend(rows);
                        }
                    }
                    self.job_reply(m.job, ctx);
                }
            }
            (kind, payload) => unreachable!("unexpected {kind:?} carrying {payload:?}"),
        }
    }

    // data location

    pub(super) fn run_data_pass(&mut self) -> Vec<AgentId> {
        self.send(Pass::Data, MessageKind::Cfp, ROOT, DATA_ROOT, 0, Payload::DataSpec);
        self.drain(None);
        self.data_found.clone().unwrap_or_default()
    }

    fn on_data_cfp(&mut self, agent: AgentId) {
        let node = &self.h.nodes()[agent];
        match &node.kind {
            AgentKind::DataRoot => {
                let children = node.children.clone();
                if children.is_empty() {
                    self.send(Pass::Data, MessageKind::Inform, agent, ROOT, 0, Payload::DataFound(Vec::new()));
                }
                self.data_awaiting = children.len();
                for c in children {
                    self.send(Pass::Data, MessageKind::Cfp, agent, c, 0, Payload::DataSpec);
                }
            }
            AgentKind::DataTerminal(d) => {
                let spec = &self.q.data;
                let hit = spec.name.admits(&d.name) && set_covers(&spec.params, &d.params);
                let parent = node.parent.expect("data terminal has a parent");
                self.send(Pass::Data, MessageKind::Propose, agent, parent, 0, Payload::DataMatch(hit));
            }
            _ => unreachable!("data CFP outside the DATA subtree"),
        }
    }

    fn on_data_propose(&mut self, agent: AgentId, from: AgentId, hit: bool) {
        if hit {
            self.data_matches.push(from);
        }
        self.data_awaiting -= 1;
        if self.data_awaiting == 0 {
            let mut found = std::mem::take(&mut self.data_matches);
            found.sort_unstable();
            self.send(Pass::Data, MessageKind::Inform, agent, ROOT, 0, Payload::DataFound(found));
        }
    }

    // first pass

    pub(super) fn run_first_pass(&mut self) {
        let all: Vec<usize> = (0..self.q.algorithms.len()).collect();
        self.send(Pass::First, MessageKind::Cfp, ROOT, ALG_ROOT, 0, Payload::Subqueries(all));
        self.drain(None);
    }

    fn on_cfp(&mut self, agent: AgentId, subqueries: &[usize]) {
        let node = &self.h.nodes()[agent];
        if let AgentKind::Terminal(res) = &node.kind {
            let mut props = BTreeMap::new();
            for &i in subqueries {
                let sq = &self.q.algorithms[i];
                if node.admits(sq) {
                    let r = sq.proposal(&res.params, &self.c);
                    let families = BTreeSet::from([res.family.clone()]);
                    self.entries[agent].insert(
                        i,
                        PassEntry {
                            b: BTreeSet::from([agent]),
                            r,
                            f: false,
                            families: families.clone(),
                        },
                    );
                    self.proposals.entry(i).or_default().insert(agent, r);
                    props.insert(i, Proposal { r, families });
                } else {
                    self.entries[agent].insert(i, PassEntry::default());
                    props.insert(i, Proposal::impossible());
                }
            }
            let parent = node.parent.expect("terminal has a parent");
            self.send(Pass::First, MessageKind::Propose, agent, parent, 0, Payload::Proposals(props));
            return;
        }
        let admitted: Vec<usize> = subqueries
            .iter()
            .copied()
            .filter(|&i| node.admits(&self.q.algorithms[i]))
            .collect();
        for &i in subqueries {
            self.entries[agent].insert(i, PassEntry::default());
        }
        let children = node.children.clone();
        if admitted.is_empty() || children.is_empty() {
            self.finish_first(agent);
            return;
        }
        self.awaiting[agent] = children.len();
        for c in children {
            self.send(Pass::First, MessageKind::Cfp, agent, c, 0, Payload::Subqueries(admitted.clone()));
        }
    }

    fn on_propose(&mut self, agent: AgentId, from: AgentId, props: &BTreeMap<usize, Proposal>) {
        for (&i, p) in props {
            let rule = self.rules[i];
            let entry = self.entries[agent].entry(i).or_default();
            aggregate_proposals(entry, agent, from, p, rule);
        }
        self.awaiting[agent] -= 1;
        if self.awaiting[agent] == 0 {
            self.finish_first(agent);
        }
    }

    fn finish_first(&mut self, agent: AgentId) {
        for entry in self.entries[agent].values_mut() {
            // nothing positive arrived: the sub-query fails here
            if entry.r <= 0.0 {
                *entry = PassEntry::default();
            }
        }
        if agent == ALG_ROOT {
            let outcome = self.entries[agent].clone();
            self.send(Pass::First, MessageKind::Inform, agent, ROOT, 0, Payload::Outcome(outcome));
        } else {
            let props = self.entries[agent].iter().map(|(&i, e)| (i, e.proposal())).collect();
            let parent = self.h.nodes()[agent].parent.expect("non-root agent has a parent");
            self.send(Pass::First, MessageKind::Propose, agent, parent, 0, Payload::Proposals(props));
        }
    }

    // second pass

    fn verb_for(&self, i: usize, child: AgentId) -> AskVerb {
        if self.rules[i].single {
            AskVerb::Tune
        } else if self.h.nodes()[child].is_terminal() {
            AskVerb::Validate
        } else {
            AskVerb::Select
        }
    }

    pub(super) fn run_second_pass(&mut self, ctx: &EvalContext) {
        let Some(outcome) = &self.outcome else { return };
        let mut groups: BTreeMap<AskVerb, Vec<usize>> = BTreeMap::new();
        for (&i, e) in outcome {
            if !e.b.is_empty() {
                groups.entry(self.verb_for(i, ALG_ROOT)).or_default().push(i);
            }
        }
        for (verb, list) in groups {
            self.root_awaiting += 1;
            self.send(Pass::Second, MessageKind::Ask(verb), ROOT, ALG_ROOT, 0, Payload::Subqueries(list));
        }
        self.drain(Some(ctx));
        debug_assert_eq!(self.root_awaiting, 0);
    }

    fn on_suggest(&mut self, agent: AgentId, from: AgentId, job: u64, open: &BTreeSet<String>) {
        let node = &self.h.nodes()[agent];
        let values = node
            .family_caps
            .iter()
            .map(|(f, cap)| (f.clone(), suggest(&node.label, cap, open)))
            .collect();
        self.send(Pass::Second, MessageKind::Inform, agent, from, job, Payload::Suggestions(values));
    }

    fn launch(&mut self, ctx: &EvalContext, agent: AgentId, i: usize, family: &str, seeds: &Suggestion) -> TaskResult {
        let sq = &self.q.algorithms[i];
        let label = self.h.nodes()[agent].label.clone();
        let merged = integrate(std::slice::from_ref(seeds));
        let tuner = EvalContext::tuner_label(&label, i, family);
        self.live.push(overlay(tuner.clone(), tuner_parent(self.h, agent)));
        self.spawned.push(tuner.clone());
        let (result, log) = ctx.tune(i, sq, family, &merged, &label);
        self.live.retain(|t| t.label != tuner);
        self.logs.push(log);
        result
    }

    fn on_ask(&mut self, agent: AgentId, from: AgentId, parent_job: u64, verb: AskVerb, s: Vec<usize>, ctx: &EvalContext) {
        let node = &self.h.nodes()[agent];
        if let AgentKind::Terminal(res) = &node.kind {
            let mut table: BTreeMap<usize, Vec<TaskResult>> = BTreeMap::new();
            for i in s {
                let row = if verb == AskVerb::Validate {
                    ctx.validate(i, &res.family, &res.params, &node.label)
                } else {
                    let open: BTreeSet<String> = self.q.algorithms[i].open_params().into_iter().collect();
                    let own = suggest(&node.label, &node.capability, &open);
                    let family = res.family.clone();
                    self.launch(ctx, agent, i, &family, &own)
                };
                table.entry(i).or_default().push(row);
            }
            let best = best_rows(&table);
            self.send(Pass::Second, MessageKind::Inform, agent, from, parent_job, Payload::Results { best, table });
            return;
        }

        let job_id = self.next_job;
        self.next_job += 1;
        let mut local = Vec::new();
        let mut forward: BTreeMap<(AgentId, AskVerb), Vec<usize>> = BTreeMap::new();
        for &i in &s {
            let entry = &self.entries[agent][&i];
            if entry.is_self(agent) {
                local.push(i);
            } else {
                for &c in &entry.b {
                    forward.entry((c, self.verb_for(i, c))).or_default().push(i);
                }
            }
        }
        let children = node.children.clone();
        let mut awaiting = 0;
        if !local.is_empty() {
            let open: BTreeSet<String> = local
                .iter()
                .flat_map(|&i| self.q.algorithms[i].open_params())
                .collect();
            for &c in &children {
                awaiting += 1;
                self.send(
                    Pass::Second,
                    MessageKind::Ask(AskVerb::Suggest),
                    agent,
                    c,
                    job_id,
                    Payload::SuggestRequest(open.clone()),
                );
            }
        }
        for &c in &children {
            for verb in [AskVerb::Tune, AskVerb::Select, AskVerb::Validate] {
                if let Some(list) = forward.remove(&(c, verb)) {
                    awaiting += 1;
                    self.send(Pass::Second, MessageKind::Ask(verb), agent, c, job_id, Payload::Subqueries(list));
                }
            }
        }
        self.jobs.insert(
            job_id,
            Job {
                agent,
                parent: from,
                parent_job,
                local,
                awaiting,
                suggestions: BTreeMap::new(),
                table: BTreeMap::new(),
            },
        );
        if awaiting == 0 {
            self.complete(job_id, ctx);
        }
    }

    fn job_reply(&mut self, job_id: u64, ctx: Option<&EvalContext>) {
        let Some(job) = self.jobs.get_mut(&job_id) else { return };
        job.awaiting -= 1;
        if job.awaiting == 0 {
            self.complete(job_id, ctx.expect("second pass has an evaluation context"));
        }
    }

    fn complete(&mut self, job_id: u64, ctx: &EvalContext) {
        let mut job = self.jobs.remove(&job_id).expect("job exists");
        let agent = job.agent;
        for &i in &job.local.clone() {
            let families = self.entries[agent][&i].families.clone();
            for family in families {
                let merged = integrate(job.suggestions.get(&family).map(Vec::as_slice).unwrap_or(&[]));
                let seeds = Suggestion {
                    source: self.h.nodes()[agent].label.clone(),
                    values: merged,
                };
                let row = self.launch(ctx, agent, i, &family, &seeds);
                job.table.entry(i).or_default().push(row);
            }
        }
        let best = best_rows(&job.table);
        self.send(
            Pass::Second,
            MessageKind::Inform,
            agent,
            job.parent,
            job.parent_job,
            Payload::Results { best, table: job.table },
        );
    }

    // results

    fn first_pass_view(&self) -> FirstPass {
        let outcome = self.outcome.clone().unwrap_or_default();
        FirstPass {
            entries: self.entries.clone(),
            outcome: (0..self.q.algorithms.len())
                .map(|i| outcome.get(&i).cloned().unwrap_or_default())
                .collect(),
            proposals: self.proposals.clone(),
            stats: self.stats.clone(),
        }
    }

    pub(super) fn into_first_pass(self) -> FirstPass {
        self.first_pass_view()
    }

    pub(super) fn into_parts(self) -> Assembled {
        let view = self.first_pass_view();
        let subqueries = self
            .q
            .algorithms
            .iter()
            .enumerate()
            .map(|(i, sq)| {
                let (z, l) = sq.classify();
                let e = &view.outcome[i];
                SubQueryOutcome {
                    index: i,
                    query: sq.to_json(),
                    z,
                    l,
                    matched: !e.b.is_empty(),
                    r: e.r,
                    families: e.families.clone(),
                    manager: view.manager(i).map(|a| self.h.nodes()[a].label.clone()),
                }
            })
            .collect();
        debug_assert!(self.live.is_empty());
        Assembled {
            results: self.results,
            tuning: self.logs,
            subqueries,
            tuners: self.spawned,
            messages: Some(self.stats),
            trace: self.trace,
        }
    }
}

fn best_rows(table: &BTreeMap<usize, Vec<TaskResult>>) -> BTreeMap<usize, TaskResult> {
    table
        .iter()
        .filter_map(|(&i, rows)| argmin(rows).map(|r| (i, r.clone())))
        .collect()
}
