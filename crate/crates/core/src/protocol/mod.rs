//! The two-pass query protocol over the agent tree.
//!
//! The first pass floods calls for proposals down the tree and aggregates
//! similarity scores on the way up, leaving every agent with a candidate set
//! per sub-query. The second pass follows those candidate sets down again to
//! validate fixed configurations or to launch tuners.

mod engine;

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

pub use engine::Delivery;

use crate::hierarchy::{AgentId, AgentKind, Hierarchy, TunerOverlay, ALG_ROOT};
use crate::ml::{cross_val_loss, Dataset, LearnerSpec, LossSpec};
use crate::params::{Concrete, ParamSet, SimilarityConstants};
use crate::query::{Direction, Measure, Query, QueryTask, Strategy, SubQuery};
use crate::seed::derive_seed;
use crate::tuner::{tune, Evaluation, TuneTask, DEFAULT_BUDGET};

pub const DEFAULT_FOLDS: usize = 5;
pub const REPORT_VERSION: u32 = 1;

/// Which candidacy rules the first pass applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Every sub-query ends with a single candidate.
    TuneOnly,
    /// Tuning sub-queries end with a single candidate, the rest may keep
    /// several.
    SelectHybrid,
}

impl Mode {
    pub fn of(q: &Query) -> Self {
        match q.output.task {
            QueryTask::Tune => Mode::TuneOnly,
            QueryTask::Select => Mode::SelectHybrid,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AskVerb {
    Suggest,
    Tune,
    Select,
    Validate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageKind {
    Cfp,
    Propose,
    Inform,
    Ask(AskVerb),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Pass {
    Data,
    First,
    Second,
}

/// A score with the families that reached it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Proposal {
    pub r: f64,
    pub families: BTreeSet<String>,
}

impl Proposal {
    pub fn impossible() -> Self {
        Self {
            r: -1.0,
            families: BTreeSet::new(),
        }
    }
}

/// First-pass bookkeeping of one agent for one sub-query.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PassEntry {
    /// Candidate set; contains the agent's own id when it is the candidate.
    pub b: BTreeSet<AgentId>,
    /// Best proposal, `-1` when nothing matched.
    pub r: f64,
    /// Tie flag.
    pub f: bool,
    /// Families of the terminals behind `r`.
    pub families: BTreeSet<String>,
}

impl Default for PassEntry {
    fn default() -> Self {
        Self {
            b: BTreeSet::new(),
            r: -1.0,
            f: false,
            families: BTreeSet::new(),
        }
    }
}

impl PassEntry {
    pub fn is_self(&self, me: AgentId) -> bool {
        self.b.len() == 1 && self.b.contains(&me)
    }

    pub fn proposal(&self) -> Proposal {
        Proposal {
            r: self.r,
            families: self.families.clone(),
        }
    }
}

/// How ties are broken for one sub-query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TieRule {
    /// The sub-query ends with one candidate (tuning, or any tune query).
    pub single: bool,
    /// The sub-query is generic (contains `*`).
    pub generic: bool,
}

impl TieRule {
    pub fn new(mode: Mode, sq: &SubQuery) -> Self {
        let (z, l) = sq.classify();
        Self {
            single: z || mode == Mode::TuneOnly,
            generic: l,
        }
    }
}

/// Folds one child's proposal into `entry`.
///
/// A strictly better score makes the child the only candidate and clears the
/// tie flag. An equal score from another child makes the agent itself the
/// candidate when the sub-query needs a single candidate (or the score is
/// zero on a non-generic sub-query), and joins the child to the set otherwise.
pub fn aggregate_proposals(entry: &mut PassEntry, me: AgentId, child: AgentId, p: &Proposal, rule: TieRule) {
    if p.r < 0.0 {
        return;
    }
    if p.r > entry.r {
        entry.r = p.r;
        entry.b = BTreeSet::from([child]);
        entry.f = false;
        entry.families = p.families.clone();
    } else if p.r == entry.r {
        entry.families.extend(p.families.iter().cloned());
        if rule.single || (p.r == 0.0 && !rule.generic) {
            if !entry.b.contains(&child) {
                entry.b = BTreeSet::from([me]);
                entry.f = true;
            }
        } else {
            entry.b.insert(child);
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PassCounts {
    pub cfp: usize,
    pub propose: usize,
    pub inform: usize,
    pub ask_suggest: usize,
    pub ask_tune: usize,
    pub ask_select: usize,
    pub ask_validate: usize,
    pub total: usize,
}

impl PassCounts {
    fn record(&mut self, kind: MessageKind) {
        let slot = match kind {
            MessageKind::Cfp => &mut self.cfp,
            MessageKind::Propose => &mut self.propose,
            MessageKind::Inform => &mut self.inform,
            MessageKind::Ask(AskVerb::Suggest) => &mut self.ask_suggest,
            MessageKind::Ask(AskVerb::Tune) => &mut self.ask_tune,
            MessageKind::Ask(AskVerb::Select) => &mut self.ask_select,
            MessageKind::Ask(AskVerb::Validate) => &mut self.ask_validate,
        };
        *slot += 1;
        self.total += 1;
    }
}

/// Message counts per pass. `algorithm_total` covers both algorithm passes
/// and is the figure compared against `bound = 4 * algorithm_size`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct MessageStats {
    pub data: PassCounts,
    pub first: PassCounts,
    pub second: PassCounts,
    pub algorithm_total: usize,
    pub algorithm_size: usize,
    pub bound: usize,
}

impl MessageStats {
    pub(crate) fn record(&mut self, pass: Pass, kind: MessageKind) {
        match pass {
            Pass::Data => self.data.record(kind),
            Pass::First => self.first.record(kind),
            Pass::Second => self.second.record(kind),
        }
        self.algorithm_total = self.first.total + self.second.total;
    }

    pub fn within_bound(&self) -> bool {
        self.first.total <= self.bound && self.second.total <= self.bound && self.algorithm_total <= self.bound
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEvent {
    pub step: usize,
    pub pass: Pass,
    pub kind: MessageKind,
    pub from: String,
    pub to: String,
    pub detail: String,
}

/// One evaluated configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskResult {
    pub subquery: usize,
    pub family: String,
    /// Configuration evaluated, as handed to the learner.
    pub params: ParamSet,
    /// Values picked by the tuner; empty for plain validation.
    pub tuned: ParamSet,
    /// Oriented loss; lower is better.
    pub loss: f64,
    pub metric: f64,
    pub provenance: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TaskResult {
    /// Total order used by every argmin: loss, family, canonical params,
    /// then sub-query and provenance.
    pub fn rank(&self, other: &TaskResult) -> std::cmp::Ordering {
        self.loss
            .total_cmp(&other.loss)
            .then_with(|| self.family.cmp(&other.family))
            .then_with(|| self.params.canonical().cmp(&other.params.canonical()))
            .then_with(|| self.subquery.cmp(&other.subquery))
            .then_with(|| self.provenance.cmp(&other.provenance))
    }
}

pub fn argmin(results: &[TaskResult]) -> Option<&TaskResult> {
    results.iter().min_by(|a, b| a.rank(b))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuningLog {
    pub subquery: usize,
    pub family: String,
    pub tuner: String,
    pub seed: u64,
    pub evaluations: Vec<Evaluation>,
    pub warnings: Vec<String>,
}

/// Everything needed to score a configuration on the located dataset.
#[derive(Debug, Clone)]
pub struct EvalContext<'a> {
    pub dataset: &'a Dataset,
    pub folds: usize,
    pub seed: u64,
    pub loss: LossSpec,
    pub budget: usize,
    pub strategy: Strategy,
}

impl EvalContext<'_> {
    pub fn loss_of(&self, family: &str, params: &ParamSet) -> Result<f64, String> {
        let spec = LearnerSpec::new(family, params.clone());
        cross_val_loss(&spec, self.dataset, self.folds, self.seed, self.loss).map_err(|e| e.to_string())
    }

    /// k-fold validation of a fixed configuration.
    pub fn validate(&self, subquery: usize, family: &str, params: &ParamSet, provenance: &str) -> TaskResult {
        let (loss, error) = match self.loss_of(family, params) {
            Ok(l) => (l, None),
            Err(e) => (f64::INFINITY, Some(e)),
        };
        TaskResult {
            subquery,
            family: family.to_string(),
            params: params.clone(),
            tuned: ParamSet::new(),
            loss,
            metric: self.loss.oriented(loss),
            provenance: provenance.to_string(),
            error,
        }
    }

    pub fn tuner_label(candidate: &str, subquery: usize, family: &str) -> String {
        format!("tuner:{candidate}:sq{subquery}:{family}")
    }

    /// Runs one tuner for `family` seeded with `suggestions`.
    pub fn tune(
        &self,
        subquery: usize,
        sq: &SubQuery,
        family: &str,
        suggestions: &BTreeMap<String, Vec<Concrete>>,
        candidate: &str,
    ) -> (TaskResult, TuningLog) {
        let seed = derive_seed(self.seed, &["tune", &sq.canonical(), family]);
        let task = TuneTask::for_subquery(sq, family, suggestions, self.budget, seed, self.strategy);
        let label = Self::tuner_label(candidate, subquery, family);
        let outcome = tune(&task, |cfg| self.loss_of(family, cfg));
        match outcome {
            Ok(out) => {
                let error = out.log.iter().all(|e| e.error.is_some()).then(|| {
                    out.log.first().and_then(|e| e.error.clone()).unwrap_or_else(|| "no evaluations".into())
                });
                let result = TaskResult {
                    subquery,
                    family: family.to_string(),
                    params: out.best.clone(),
                    tuned: out.tuned.clone(),
                    loss: out.loss,
                    metric: self.loss.oriented(out.loss),
                    provenance: label.clone(),
                    error,
                };
                let log = TuningLog {
                    subquery,
                    family: family.to_string(),
                    tuner: label,
                    seed,
                    evaluations: out.log,
                    warnings: out.warnings,
                };
                (result, log)
            }
            Err(e) => {
                let result = TaskResult {
                    subquery,
                    family: family.to_string(),
                    params: task.fixed.clone(),
                    tuned: ParamSet::new(),
                    loss: f64::INFINITY,
                    metric: self.loss.oriented(f64::INFINITY),
                    provenance: label.clone(),
                    error: Some(e.to_string()),
                };
                let log = TuningLog {
                    subquery,
                    family: family.to_string(),
                    tuner: label,
                    seed,
                    evaluations: Vec::new(),
                    warnings: vec![e.to_string()],
                };
                (result, log)
            }
        }
    }
}

/// Result of the first pass.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstPass {
    /// Per agent, per sub-query state.
    pub entries: Vec<BTreeMap<usize, PassEntry>>,
    /// Per sub-query outcome reported to the root.
    pub outcome: Vec<PassEntry>,
    /// Scores proposed by terminals that matched, per sub-query.
    pub proposals: BTreeMap<usize, BTreeMap<AgentId, f64>>,
    pub stats: MessageStats,
}

impl FirstPass {
    pub fn entry(&self, agent: AgentId, subquery: usize) -> Option<&PassEntry> {
        self.entries.get(agent).and_then(|m| m.get(&subquery))
    }

    /// Agents whose candidate set is exactly themselves.
    pub fn self_candidates(&self, subquery: usize) -> Vec<AgentId> {
        (0..self.entries.len())
            .filter(|&a| self.entry(a, subquery).is_some_and(|e| e.is_self(a)))
            .collect()
    }

    /// Follows single-child candidate sets from the ALG agent; stops at the
    /// first agent holding several candidates or itself.
    pub fn manager(&self, subquery: usize) -> Option<AgentId> {
        let mut at = ALG_ROOT;
        loop {
            let e = self.entry(at, subquery)?;
            if e.b.is_empty() {
                return None;
            }
            if e.b.len() >= 2 || e.b.contains(&at) {
                return Some(at);
            }
            at = *e.b.iter().next().expect("non-empty");
        }
    }

    /// Agents where the candidate sets bottom out: terminals, or agents
    /// that chose themselves.
    pub fn reached(&self, subquery: usize) -> BTreeSet<AgentId> {
        let mut out = BTreeSet::new();
        let mut stack = vec![ALG_ROOT];
        while let Some(at) = stack.pop() {
            let Some(e) = self.entry(at, subquery) else { continue };
            for &c in &e.b {
                if c == at {
                    out.insert(at);
                } else {
                    stack.push(c);
                }
            }
        }
        out
    }
}

/// Runs only the first pass.
pub fn first_pass(h: &Hierarchy, q: &Query, c: SimilarityConstants, mode: Mode) -> FirstPass {
    let mut e = engine::Engine::new(h, q, c, mode, Delivery::Fifo, false);
    e.run_first_pass();
    e.into_first_pass()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubQueryOutcome {
    pub index: usize,
    pub query: serde_json::Value,
    pub z: bool,
    pub l: bool,
    pub matched: bool,
    pub r: f64,
    pub families: BTreeSet<String>,
    /// Agent that runs the tuner or collects the validations.
    pub manager: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstantsReport {
    pub beta: f64,
    pub alpha: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryReport {
    pub version: u32,
    pub mode: String,
    pub task: QueryTask,
    pub measure: Measure,
    pub direction: Direction,
    pub seed: u64,
    pub folds: usize,
    pub budget: usize,
    pub constants: ConstantsReport,
    pub dataset: Option<String>,
    pub subqueries: Vec<SubQueryOutcome>,
    /// Every evaluated candidate, sorted.
    pub results: Vec<TaskResult>,
    /// Argmin per sub-query, `None` when unmatched.
    pub best: Vec<Option<TaskResult>>,
    /// Global argmin for selection queries.
    pub winner: Option<TaskResult>,
    pub tuning: Vec<TuningLog>,
    pub tuners: Vec<String>,
    pub messages: Option<MessageStats>,
    pub structure: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TraceEvent>>,
}

impl QueryReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    /// Same report without the trace, for comparisons across interleavings.
    pub fn without_trace(&self) -> QueryReport {
        QueryReport {
            trace: None,
            ..self.clone()
        }
    }
}

pub fn message_stats(report: &QueryReport) -> Option<&MessageStats> {
    report.messages.as_ref()
}

#[derive(Debug, thiserror::Error)]
pub enum QueryError {
    #[error("invalid query: {0}")]
    Invalid(String),
    #[error("no dataset matches {0}")]
    NoData(String),
    #[error("several datasets match: {}", .0.join(", "))]
    AmbiguousData(Vec<String>),
    #[error("cannot load dataset: {0}")]
    DataLoad(String),
    #[error("no algorithm matches any sub-query")]
    NoMatch(Box<QueryReport>),
    #[error("selection has no candidates")]
    EmptySelection(Box<QueryReport>),
}

impl QueryError {
    pub fn kind(&self) -> &'static str {
        match self {
            QueryError::Invalid(_) => "invalid_query",
            QueryError::NoData(_) => "no_data",
            QueryError::AmbiguousData(_) => "ambiguous_data",
            QueryError::DataLoad(_) => "data_load",
            QueryError::NoMatch(_) => "no_match",
            QueryError::EmptySelection(_) => "empty_selection",
        }
    }

    pub fn report(&self) -> Option<&QueryReport> {
        match self {
            QueryError::NoMatch(r) | QueryError::EmptySelection(r) => Some(r),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub constants: SimilarityConstants,
    pub seed: u64,
    /// Used when the query does not set `folds`.
    pub folds: usize,
    /// Used when the query does not set `budget`.
    pub budget: usize,
    pub delivery: Delivery,
    pub trace: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            constants: SimilarityConstants::default(),
            seed: 0,
            folds: DEFAULT_FOLDS,
            budget: DEFAULT_BUDGET,
            delivery: Delivery::Fifo,
            trace: false,
        }
    }
}

pub(crate) struct Resolved {
    pub dataset: Dataset,
    pub name: String,
    pub folds: usize,
    pub budget: usize,
    pub strategy: Strategy,
    pub loss: LossSpec,
}

/// Checks the query against run options and the dataset it resolved to.
pub(crate) fn resolve(
    q: &Query,
    opts: &RunOptions,
    h: &Hierarchy,
    found: &[AgentId],
) -> Result<Resolved, QueryError> {
    q.validate().map_err(|e| QueryError::Invalid(e.to_string()))?;
    let strategy = q.output.strategy.unwrap_or(Strategy::Random);
    if strategy == Strategy::Grid {
        for sq in &q.algorithms {
            if let Some((name, _)) = sq.domains.iter().find(|(_, d)| d.enumerate().is_none()) {
                return Err(QueryError::Invalid(format!("grid strategy needs a finite domain for `{name}`")));
            }
        }
    }
    let entry = match found {
        [] => return Err(QueryError::NoData(format!("{} {}", q.data.name, q.data.params))),
        [one] => match &h.nodes()[*one].kind {
            AgentKind::DataTerminal(d) => d.clone(),
            _ => unreachable!("data matches are data terminals"),
        },
        many => {
            return Err(QueryError::AmbiguousData(
                many.iter().map(|&id| h.nodes()[id].label.clone()).collect(),
            ))
        }
    };
    let dataset = entry.load().map_err(|e| QueryError::DataLoad(e.to_string()))?;
    let loss = LossSpec::new(q.output.measure, q.output.direction);
    if !dataset.supports(loss.measure) {
        return Err(QueryError::Invalid(format!(
            "measure `{}` does not apply to {} dataset `{}`",
            loss.measure.as_str(),
            dataset.task.as_str(),
            entry.name
        )));
    }
    let folds = q.output.folds.unwrap_or(opts.folds);
    if folds < 2 || dataset.len() < 2 * folds {
        return Err(QueryError::Invalid(format!(
            "{folds} folds need at least {} samples, dataset has {}",
            2 * folds,
            dataset.len()
        )));
    }
    Ok(Resolved {
        dataset,
        name: entry.name,
        folds,
        budget: q.output.budget.unwrap_or(opts.budget),
        strategy,
        loss,
    })
}

pub(crate) struct Assembled {
    pub results: Vec<TaskResult>,
    pub tuning: Vec<TuningLog>,
    pub subqueries: Vec<SubQueryOutcome>,
    pub tuners: Vec<String>,
    pub messages: Option<MessageStats>,
    pub trace: Option<Vec<TraceEvent>>,
}

/// Shared tail of the distributed and centralized runs.
pub(crate) fn assemble(
    mode_name: &str,
    h: &Hierarchy,
    q: &Query,
    opts: &RunOptions,
    resolved: &Resolved,
    mut parts: Assembled,
) -> Result<QueryReport, QueryError> {
    parts.results.sort_by(|a, b| {
        a.subquery
            .cmp(&b.subquery)
            .then_with(|| a.family.cmp(&b.family))
            .then_with(|| a.params.canonical().cmp(&b.params.canonical()))
            .then_with(|| a.provenance.cmp(&b.provenance))
    });
    parts.tuning.sort_by(|a, b| a.subquery.cmp(&b.subquery).then_with(|| a.family.cmp(&b.family)));
    parts.tuners.sort();
    let best: Vec<Option<TaskResult>> = (0..q.algorithms.len())
        .map(|i| {
            let rows: Vec<TaskResult> = parts.results.iter().filter(|r| r.subquery == i).cloned().collect();
            argmin(&rows).cloned()
        })
        .collect();
    let winner = match q.output.task {
        QueryTask::Select => argmin(&parts.results).cloned(),
        QueryTask::Tune => None,
    };
    let c = opts.constants;
    let report = QueryReport {
        version: REPORT_VERSION,
        mode: mode_name.to_string(),
        task: q.output.task,
        measure: q.output.measure,
        direction: q.output.direction,
        seed: opts.seed,
        folds: resolved.folds,
        budget: resolved.budget,
        constants: ConstantsReport {
            beta: c.beta(),
            alpha: c.alpha(),
            tau: c.tau(),
        },
        dataset: Some(resolved.name.clone()),
        subqueries: parts.subqueries,
        results: parts.results,
        best,
        winner,
        tuning: parts.tuning,
        tuners: parts.tuners,
        messages: parts.messages,
        structure: h.to_dot(),
        trace: parts.trace,
    };
    if report.subqueries.iter().all(|s| !s.matched) {
        return Err(match q.output.task {
            QueryTask::Tune => QueryError::NoMatch(Box::new(report)),
            QueryTask::Select => QueryError::EmptySelection(Box::new(report)),
        });
    }
    Ok(report)
}

/// Locates the dataset, runs both passes and assembles the report.
pub fn run_query(h: &Hierarchy, q: &Query, opts: &RunOptions) -> Result<QueryReport, QueryError> {
    q.validate().map_err(|e| QueryError::Invalid(e.to_string()))?;
    let mode = Mode::of(q);
    let mut e = engine::Engine::new(h, q, opts.constants, mode, opts.delivery, opts.trace);
    let found = e.run_data_pass();
    let resolved = resolve(q, opts, h, &found)?;
    e.run_first_pass();
    let ctx = EvalContext {
        dataset: &resolved.dataset,
        folds: resolved.folds,
        seed: opts.seed,
        loss: resolved.loss,
        budget: resolved.budget,
        strategy: resolved.strategy,
    };
    e.run_second_pass(&ctx);
    let parts = e.into_parts();
    assemble("distributed", h, q, opts, &resolved, parts)
}

/// Tuner agents are drawn under this parent: the candidate itself, or a
/// terminal candidate's parent.
pub(crate) fn tuner_parent(h: &Hierarchy, candidate: AgentId) -> AgentId {
    let node = &h.nodes()[candidate];
    if node.is_terminal() {
        node.parent.unwrap_or(candidate)
    } else {
        candidate
    }
}

pub(crate) fn overlay(label: String, parent: AgentId) -> TunerOverlay {
    TunerOverlay { label, parent }
}
