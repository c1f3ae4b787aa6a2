//! Centralized brute force over the same tree, used to check the protocol.

use std::collections::{BTreeMap, BTreeSet};

use crate::hierarchy::{AgentKind, Hierarchy};
use crate::params::Concrete;
use crate::protocol::{
    assemble, resolve, Assembled, EvalContext, Mode, QueryError, QueryReport, RunOptions, SubQueryOutcome, TieRule,
};
use crate::query::Query;

/// Scans every terminal directly: validation of each match for selection
/// sub-queries, one tuner per family at the matches' common ancestor
/// otherwise. Seeds are derived exactly as in the distributed run.
pub fn oracle_query(h: &Hierarchy, q: &Query, opts: &RunOptions) -> Result<QueryReport, QueryError> {
    q.validate().map_err(|e| QueryError::Invalid(e.to_string()))?;
    let found = h.matching_datasets(&q.data);
    let resolved = resolve(q, opts, h, &found)?;
    let ctx = EvalContext {
        dataset: &resolved.dataset,
        folds: resolved.folds,
        seed: opts.seed,
        loss: resolved.loss,
        budget: resolved.budget,
        strategy: resolved.strategy,
    };
    let mode = Mode::of(q);
    let mut results = Vec::new();
    let mut tuning = Vec::new();
    let mut tuners = Vec::new();
    let mut subqueries = Vec::new();
    for (i, sq) in q.algorithms.iter().enumerate() {
        let (z, l) = sq.classify();
        let matches = h.matching_terminals(sq);
        let families: BTreeSet<String> = matches
            .iter()
            .filter_map(|&t| h.nodes()[t].resource().map(|r| r.family.clone()))
            .collect();
        let r = matches
            .iter()
            .next()
            .and_then(|&t| h.nodes()[t].resource())
            .map_or(-1.0, |res| sq.proposal(&res.params, &opts.constants));
        let manager = if matches.is_empty() {
            None
        } else {
            Some(h.lowest_common_ancestor(&matches).expect("non-empty"))
        };
        subqueries.push(SubQueryOutcome {
            index: i,
            query: sq.to_json(),
            z,
            l,
            matched: manager.is_some(),
            r,
            families: families.clone(),
            manager: manager.map(|m| h.nodes()[m].label.clone()),
        });
        let Some(manager) = manager else { continue };

        if TieRule::new(mode, sq).single {
            let open: BTreeSet<String> = sq.open_params().into_iter().collect();
            let label = &h.nodes()[manager].label;
            for family in &families {
                let mut seeds: BTreeMap<String, BTreeSet<Concrete>> = BTreeMap::new();
                for id in h.subtree(manager) {
                    let AgentKind::Terminal(res) = &h.nodes()[id].kind else { continue };
                    if &res.family != family {
                        continue;
                    }
                    for (name, value) in res.params.iter() {
                        if let (true, Some(v)) = (open.contains(name), value.as_concrete()) {
                            seeds.entry(name.to_string()).or_default().insert(v.clone());
                        }
                    }
                }
                let seeds = seeds.into_iter().map(|(k, v)| (k, v.into_iter().collect())).collect();
                let (row, log) = ctx.tune(i, sq, family, &seeds, label);
                tuners.push(log.tuner.clone());
                results.push(row);
                tuning.push(log);
            }
        } else {
            for &t in &matches {
                let node = &h.nodes()[t];
                let res = node.resource().expect("terminal");
                results.push(ctx.validate(i, &res.family, &res.params, &node.label));
            }
        }
    }
    let parts = Assembled {
        results,
        tuning,
        subqueries,
        tuners,
        messages: None,
        trace: None,
    };
    assemble("oracle", h, q, opts, &resolved, parts)
}
