//! The agent tree: construction from a catalog, capabilities and tree queries.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::ml::{family_task, Dataset, GeneratorSpec, MlError, TaskKind};
use crate::params::{set_covers, Capability, ParamSet};
use crate::query::{DataSpec, SubQuery};

pub type AgentId = usize;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HierarchyError {
    #[error("duplicate resource {0}")]
    DuplicateResource(String),
    #[error("group `{label}` collides with a terminal under {parent}")]
    GroupCollision { label: String, parent: String },
    #[error("empty group label in {0}")]
    EmptyGroup(String),
    #[error("non-concrete capability value in {0}")]
    NonConcrete(String),
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("empty agent set")]
    EmptySet,
    #[error("catalog: {0}")]
    Catalog(String),
}

/// One algorithm configuration held by a terminal.
#[derive(Debug, Clone, PartialEq)]
pub struct Resource {
    pub family: String,
    pub params: ParamSet,
    pub task: Option<TaskKind>,
}

impl Resource {
    pub fn label(&self) -> String {
        format!("{}({})", self.family, self.params.canonical())
    }

    /// Family and task compatibility plus coverage of the parameters.
    pub fn matches(&self, sq: &SubQuery) -> bool {
        sq.name.admits(&self.family) && task_fits(sq.task, self.task) && set_covers(&sq.params, &self.params)
    }
}

fn task_fits(wanted: Option<TaskKind>, have: Option<TaskKind>) -> bool {
    match (wanted, have) {
        (Some(w), Some(h)) => w == h,
        _ => true,
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    Generate(GeneratorSpec),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEntry {
    pub name: String,
    #[serde(default)]
    pub params: ParamSet,
    pub source: DataSource,
}

impl DatasetEntry {
    pub fn load(&self) -> Result<Dataset, MlError> {
        match &self.source {
            DataSource::Generate(g) => g.generate(&self.name),
            DataSource::File(path) => Dataset::load(path),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmEntry {
    pub family: String,
    #[serde(default)]
    pub params: ParamSet,
    #[serde(default)]
    pub group: Vec<String>,
    /// Overrides the task known for the family.
    #[serde(default)]
    pub task: Option<TaskKind>,
}

impl AlgorithmEntry {
    pub fn new(family: &str, params: ParamSet) -> Self {
        Self {
            family: family.to_string(),
            params,
            group: Vec::new(),
            task: None,
        }
    }

    pub fn grouped(mut self, path: &[&str]) -> Self {
        self.group = path.iter().map(|s| s.to_string()).collect();
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Catalog {
    #[serde(default)]
    pub algorithms: Vec<AlgorithmEntry>,
    #[serde(default)]
    pub datasets: Vec<DatasetEntry>,
}

impl Catalog {
    /// Parses a catalog; relative dataset files resolve against `base`.
    pub fn from_json(text: &str, base: Option<&Path>) -> Result<Self, HierarchyError> {
        let mut cat: Catalog = serde_json::from_str(text).map_err(|e| HierarchyError::Catalog(e.to_string()))?;
        if let Some(base) = base {
            for d in &mut cat.datasets {
                if let DataSource::File(path) = &mut d.source {
                    if path.is_relative() {
                        *path = base.join(&*path);
                    }
                }
            }
        }
        Ok(cat)
    }

    pub fn load(path: &Path) -> Result<Self, HierarchyError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HierarchyError::Catalog(format!("{}: {e}", path.display())))?;
        Self::from_json(&text, path.parent())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AgentKind {
    Root,
    AlgRoot,
    DataRoot,
    NameAgent(String),
    Composite(String),
    Terminal(Resource),
    DataTerminal(DatasetEntry),
    EphemeralTuner,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentNode {
    pub id: AgentId,
    pub kind: AgentKind,
    /// Path-like name, stable across child reorderings.
    pub label: String,
    pub level: usize,
    pub parent: Option<AgentId>,
    pub children: Vec<AgentId>,
    /// Union of descendant terminal capabilities.
    pub capability: Capability,
    /// The same union split by family.
    pub family_caps: BTreeMap<String, Capability>,
    /// Tasks of descendant terminals; `None` marks an unknown task.
    pub tasks: BTreeSet<Option<TaskKind>>,
    /// Family the node belongs to, if it sits under a name agent.
    pub family: Option<String>,
}

impl AgentNode {
    pub fn is_terminal(&self) -> bool {
        matches!(self.kind, AgentKind::Terminal(_) | AgentKind::DataTerminal(_))
    }

    pub fn resource(&self) -> Option<&Resource> {
        match &self.kind {
            AgentKind::Terminal(r) => Some(r),
            _ => None,
        }
    }

    /// First-pass filter: AlgRoot admits everything, others check name,
    /// task and capability coverage.
    pub fn admits(&self, sq: &SubQuery) -> bool {
        if self.kind == AgentKind::AlgRoot {
            return true;
        }
        if let Some(r) = self.resource() {
            return r.matches(sq);
        }
        let named = self.family.as_deref().is_none_or(|f| sq.name.admits(f));
        let tasked = self.tasks.iter().any(|t| task_fits(sq.task, *t));
        named && tasked && self.capability.covers(&sq.params)
    }
}

/// A tuner attached during a second pass; only ever drawn, never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct TunerOverlay {
    pub label: String,
    pub parent: AgentId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hierarchy {
    nodes: Vec<AgentNode>,
}

pub const ROOT: AgentId = 0;
pub const ALG_ROOT: AgentId = 1;
pub const DATA_ROOT: AgentId = 2;

impl Default for Hierarchy {
    fn default() -> Self {
        Self::new()
    }
}

impl Hierarchy {
    /// Root with empty ALG and DATA subtrees.
    pub fn new() -> Self {
        let mut h = Hierarchy { nodes: Vec::new() };
        h.push(None, AgentKind::Root, "root".into(), None);
        h.push(Some(ROOT), AgentKind::AlgRoot, "alg".into(), None);
        h.push(Some(ROOT), AgentKind::DataRoot, "data".into(), None);
        h
    }

    fn push(&mut self, parent: Option<AgentId>, kind: AgentKind, label: String, family: Option<String>) -> AgentId {
        let id = self.nodes.len();
        let level = parent.map_or(0, |p| self.nodes[p].level + 1);
        self.nodes.push(AgentNode {
            id,
            kind,
            label,
            level,
            parent,
            children: Vec::new(),
            capability: Capability::new(),
            family_caps: BTreeMap::new(),
            tasks: BTreeSet::new(),
            family,
        });
        if let Some(p) = parent {
            self.nodes[p].children.push(id);
        }
        id
    }

    /// Adds a node below `parent`. Capabilities go stale until
    /// [`Hierarchy::refresh`] runs.
    pub fn add_child(&mut self, parent: AgentId, kind: AgentKind) -> Result<AgentId, HierarchyError> {
        let p = self.node(parent)?;
        if p.is_terminal() {
            return Err(HierarchyError::Catalog(format!("{} cannot have children", p.label)));
        }
        let family = match &kind {
            AgentKind::NameAgent(name) => Some(name.clone()),
            AgentKind::Terminal(r) => Some(r.family.clone()),
            _ => p.family.clone(),
        };
        let own = match &kind {
            AgentKind::NameAgent(n) | AgentKind::Composite(n) => n.clone(),
            AgentKind::Terminal(r) => r.label(),
            AgentKind::DataTerminal(d) => d.name.clone(),
            AgentKind::EphemeralTuner => "tuner".into(),
            AgentKind::Root | AgentKind::AlgRoot | AgentKind::DataRoot => {
                return Err(HierarchyError::Catalog("only one root of each kind".into()));
            }
        };
        let label = format!("{}/{own}", p.label);
        Ok(self.push(Some(parent), kind, label, family))
    }

    /// Recomputes every cached union bottom-up.
    pub fn refresh(&mut self) {
        for id in (0..self.nodes.len()).rev() {
            let (mut cap, mut fams, mut tasks) = (Capability::new(), BTreeMap::new(), BTreeSet::new());
            match &self.nodes[id].kind {
                AgentKind::Terminal(r) => {
                    cap.absorb_set(&r.params);
                    fams.insert(r.family.clone(), cap.clone());
                    tasks.insert(r.task);
                }
                AgentKind::DataTerminal(d) => cap.absorb_set(&d.params),
                _ => {
                    for &c in &self.nodes[id].children {
                        let child = &self.nodes[c];
                        cap.absorb(&child.capability);
                        for (f, fc) in &child.family_caps {
                            fams.entry(f.clone()).or_insert_with(Capability::new).absorb(fc);
                        }
                        tasks.extend(child.tasks.iter().copied());
                    }
                }
            }
            let node = &mut self.nodes[id];
            node.capability = cap;
            node.family_caps = fams;
            node.tasks = tasks;
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[AgentNode] {
        &self.nodes
    }

    pub fn node(&self, id: AgentId) -> Result<&AgentNode, HierarchyError> {
        self.nodes.get(id).ok_or(HierarchyError::UnknownAgent(id))
    }

    pub fn capability_of(&self, id: AgentId) -> Result<&Capability, HierarchyError> {
        self.node(id).map(|n| &n.capability)
    }

    /// Size of the algorithm structure: AlgRoot and its descendants.
    pub fn alg_size(&self) -> usize {
        self.subtree(ALG_ROOT).len()
    }

    /// `id` and all its descendants, preorder.
    pub fn subtree(&self, id: AgentId) -> Vec<AgentId> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            out.push(n);
            stack.extend(self.nodes[n].children.iter().rev());
        }
        out
    }

    pub fn terminals(&self) -> impl Iterator<Item = &AgentNode> {
        self.nodes.iter().filter(|n| matches!(n.kind, AgentKind::Terminal(_)))
    }

    pub fn is_ancestor_or_self(&self, anc: AgentId, mut id: AgentId) -> bool {
        loop {
            if id == anc {
                return true;
            }
            match self.nodes[id].parent {
                Some(p) => id = p,
                None => return false,
            }
        }
    }

    pub fn lowest_common_ancestor(&self, ids: &BTreeSet<AgentId>) -> Result<AgentId, HierarchyError> {
        let mut iter = ids.iter();
        let first = *iter.next().ok_or(HierarchyError::EmptySet)?;
        self.node(first)?;
        let mut acc = first;
        for &id in iter {
            self.node(id)?;
            let mut a = acc;
            let mut b = id;
            while self.nodes[a].level > self.nodes[b].level {
                a = self.nodes[a].parent.expect("deeper node has a parent");
            }
            while self.nodes[b].level > self.nodes[a].level {
                b = self.nodes[b].parent.expect("deeper node has a parent");
            }
            while a != b {
                a = self.nodes[a].parent.expect("distinct nodes below root");
                b = self.nodes[b].parent.expect("distinct nodes below root");
            }
            acc = a;
        }
        Ok(acc)
    }

    pub fn matching_terminals(&self, sq: &SubQuery) -> BTreeSet<AgentId> {
        self.terminals()
            .filter(|n| n.resource().is_some_and(|r| r.matches(sq)))
            .map(|n| n.id)
            .collect()
    }

    pub fn matching_datasets(&self, spec: &DataSpec) -> Vec<AgentId> {
        self.nodes[DATA_ROOT]
            .children
            .iter()
            .copied()
            .filter(|&id| match &self.nodes[id].kind {
                AgentKind::DataTerminal(d) => spec.name.admits(&d.name) && set_covers(&spec.params, &d.params),
                _ => false,
            })
            .collect()
    }

    /// Reorders every child list with `order`, which receives the parent id
    /// and must return a permutation of its input.
    pub fn permute_children<F>(&mut self, mut order: F)
    where
        F: FnMut(AgentId, &mut Vec<AgentId>),
    {
        for id in 0..self.nodes.len() {
            let mut children = std::mem::take(&mut self.nodes[id].children);
            order(id, &mut children);
            self.nodes[id].children = children;
        }
    }

    pub fn to_dot(&self) -> String {
        self.to_dot_with(&[])
    }

    /// DOT text with nodes sorted by id and edges by (parent, child), so the
    /// output does not depend on child order.
    pub fn to_dot_with(&self, tuners: &[TunerOverlay]) -> String {
        let mut out = String::from("digraph hierarchy {\n  node [shape=box, fontname=\"monospace\"];\n");
        for n in &self.nodes {
            let (label, shape) = match &n.kind {
                AgentKind::Root => ("ROOT".to_string(), "doubleoctagon"),
                AgentKind::AlgRoot => ("ALG".to_string(), "octagon"),
                AgentKind::DataRoot => ("DATA".to_string(), "octagon"),
                AgentKind::NameAgent(name) => (name.clone(), "box"),
                AgentKind::Composite(name) => (format!("{name}\\n{}", n.capability.canonical()), "box"),
                AgentKind::Terminal(r) => (format!("{}\\n{}", r.family, r.params.canonical()), "ellipse"),
                AgentKind::DataTerminal(d) => (format!("{}\\n{}", d.name, d.params.canonical()), "cylinder"),
                AgentKind::EphemeralTuner => ("tuner".to_string(), "diamond"),
            };
            let _ = writeln!(out, "  n{} [label=\"{}\", shape={shape}];", n.id, escape(&label));
        }
        for (i, t) in tuners.iter().enumerate() {
            let _ = writeln!(out, "  t{i} [label=\"{}\", shape=diamond, style=dashed];", escape(&t.label));
        }
        let mut edges: Vec<(AgentId, AgentId)> = self
            .nodes
            .iter()
            .flat_map(|n| n.children.iter().map(move |&c| (n.id, c)))
            .collect();
        edges.sort_unstable();
        for (p, c) in edges {
            let _ = writeln!(out, "  n{p} -> n{c};");
        }
        for (i, t) in tuners.iter().enumerate() {
            let _ = writeln!(out, "  n{} -> t{i} [style=dashed];", t.parent);
        }
        out.push_str("}\n");
        out
    }

    /// Checks single parents, level arithmetic and the union invariant.
    pub fn check_invariants(&self) -> Result<(), String> {
        for n in &self.nodes {
            match n.parent {
                None if n.id != ROOT => return Err(format!("{} has no parent", n.label)),
                Some(p) => {
                    if self.nodes[p].level + 1 != n.level {
                        return Err(format!("{} level mismatch", n.label));
                    }
                    if self.nodes[p].children.iter().filter(|&&c| c == n.id).count() != 1 {
                        return Err(format!("{} not listed exactly once by its parent", n.label));
                    }
                }
                None => {}
            }
            if !n.is_terminal() {
                let mut expect = Capability::new();
                for id in self.subtree(n.id) {
                    if let AgentKind::Terminal(r) = &self.nodes[id].kind {
                        expect.absorb_set(&r.params);
                    }
                    if let AgentKind::DataTerminal(d) = &self.nodes[id].kind {
                        expect.absorb_set(&d.params);
                    }
                }
                if expect != n.capability {
                    return Err(format!("{} capability is not the union of its terminals", n.label));
                }
            }
        }
        let root = &self.nodes[ROOT];
        if root.children != [ALG_ROOT, DATA_ROOT] && root.children != [DATA_ROOT, ALG_ROOT] {
            return Err("root must have exactly the ALG and DATA children".into());
        }
        Ok(())
    }
}

fn escape(text: &str) -> String {
    text.replace('"', "\\\"")
}

/// Builds the tree: ALG → one name agent per family (sorted) → composites
/// along each entry's group path → terminals in catalog order; DATA → one
/// terminal per dataset.
pub fn build_hierarchy(cat: &Catalog) -> Result<Hierarchy, HierarchyError> {
    let mut h = Hierarchy::new();
    let mut seen = BTreeSet::new();
    for e in &cat.algorithms {
        let res = Resource {
            family: e.family.clone(),
            params: e.params.clone(),
            task: e.task.or_else(|| family_task(&e.family)),
        };
        if !e.params.is_all_concrete() {
            return Err(HierarchyError::NonConcrete(res.label()));
        }
        if !seen.insert(res.label()) {
            return Err(HierarchyError::DuplicateResource(res.label()));
        }
    }
    let families: BTreeSet<&str> = cat.algorithms.iter().map(|e| e.family.as_str()).collect();
    for family in families {
        let name_agent = h.add_child(ALG_ROOT, AgentKind::NameAgent(family.to_string()))?;
        let mut groups: BTreeMap<(AgentId, String), AgentId> = BTreeMap::new();
        let mut terminal_labels: BTreeSet<(AgentId, String)> = BTreeSet::new();
        for e in cat.algorithms.iter().filter(|e| e.family == family) {
            let mut parent = name_agent;
            for label in &e.group {
                if label.is_empty() {
                    return Err(HierarchyError::EmptyGroup(e.family.clone()));
                }
                parent = match groups.get(&(parent, label.clone())) {
                    Some(&id) => id,
                    None => {
                        let id = h.add_child(parent, AgentKind::Composite(label.clone()))?;
                        groups.insert((parent, label.clone()), id);
                        id
                    }
                };
            }
            let res = Resource {
                family: e.family.clone(),
                params: e.params.clone(),
                task: e.task.or_else(|| family_task(&e.family)),
            };
            terminal_labels.insert((parent, res.label()));
            h.add_child(parent, AgentKind::Terminal(res))?;
        }
        for (parent, label) in groups.keys() {
            if terminal_labels.contains(&(*parent, label.clone())) {
                return Err(HierarchyError::GroupCollision {
                    label: label.clone(),
                    parent: h.nodes[*parent].label.clone(),
                });
            }
        }
    }
    let mut names = BTreeSet::new();
    for d in &cat.datasets {
        if !names.insert(d.name.clone()) {
            return Err(HierarchyError::DuplicateResource(d.name.clone()));
        }
        h.add_child(DATA_ROOT, AgentKind::DataTerminal(d.clone()))?;
    }
    h.refresh();
    Ok(h)
}

/// Worst-case chain with `size` agents in the algorithm structure: every
/// non-terminal has one terminal and one non-terminal child, the last has two
/// terminals. All terminals are `family` configurations of `param`.
pub fn worst_case_chain(size: usize, family: &str, param: &str) -> Result<Hierarchy, HierarchyError> {
    if size < 3 || size.is_multiple_of(2) {
        return Err(HierarchyError::Catalog(format!("chain size must be odd and >= 3, got {size}")));
    }
    let mut h = Hierarchy::new();
    let links = (size - 1) / 2;
    let mut counter = 0i64;
    let mut terminal = |h: &mut Hierarchy, parent: AgentId| -> Result<AgentId, HierarchyError> {
        counter += 1;
        let params = ParamSet::of(&[(param, &counter.to_string())]);
        h.add_child(
            parent,
            AgentKind::Terminal(Resource {
                family: family.to_string(),
                params,
                task: family_task(family),
            }),
        )
    };
    let mut current = ALG_ROOT;
    for i in 0..links {
        terminal(&mut h, current)?;
        if i + 1 < links {
            current = h.add_child(current, AgentKind::Composite(format!("c{}", i + 1)))?;
        } else {
            terminal(&mut h, current)?;
        }
    }
    h.refresh();
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamValue;
    use crate::query::NameSpec;

    fn svc_catalog() -> Catalog {
        Catalog {
            algorithms: vec![
                AlgorithmEntry::new("svc", ParamSet::of(&[("kernel", "rbf"), ("C", "1")])).grouped(&["rbf-group"]),
                AlgorithmEntry::new("svc", ParamSet::of(&[("kernel", "rbf"), ("C", "100")])).grouped(&["rbf-group"]),
                AlgorithmEntry::new("svc", ParamSet::of(&[("kernel", "linear"), ("C", "1")])),
                AlgorithmEntry::new("ridge", ParamSet::of(&[("alpha", "1")])),
                AlgorithmEntry::new("ridge", ParamSet::of(&[("alpha", "10")])),
            ],
            datasets: Vec::new(),
        }
    }

    fn find(h: &Hierarchy, label: &str) -> AgentId {
        h.nodes().iter().find(|n| n.label == label).map(|n| n.id).unwrap()
    }

    #[test]
    fn empty_catalog() {
        let h = build_hierarchy(&Catalog::default()).unwrap();
        assert_eq!(h.len(), 3);
        assert_eq!(h.alg_size(), 1);
        h.check_invariants().unwrap();
    }

    #[test]
    fn composite_union() {
        let h = build_hierarchy(&svc_catalog()).unwrap();
        h.check_invariants().unwrap();
        let g = find(&h, "alg/svc/rbf-group");
        assert_eq!(h.capability_of(g).unwrap().canonical(), "C={1|100},kernel=rbf");
        let svc = find(&h, "alg/svc");
        assert_eq!(h.node(svc).unwrap().children.len(), 2);
        assert_eq!(h.subtree(svc).len(), 5);
        assert!(h.capability_of(99).is_err());
    }

    #[test]
    fn lca_cases() {
        let h = build_hierarchy(&svc_catalog()).unwrap();
        let t1 = find(&h, "alg/svc/rbf-group/svc(C=1,kernel=rbf)");
        let t2 = find(&h, "alg/svc/rbf-group/svc(C=100,kernel=rbf)");
        let t3 = find(&h, "alg/svc/svc(C=1,kernel=linear)");
        let r1 = find(&h, "alg/ridge/ridge(alpha=1)");
        assert_eq!(h.lowest_common_ancestor(&BTreeSet::from([t1])).unwrap(), t1);
        assert_eq!(h.lowest_common_ancestor(&BTreeSet::from([t1, t2])).unwrap(), find(&h, "alg/svc/rbf-group"));
        assert_eq!(h.lowest_common_ancestor(&BTreeSet::from([t1, t3])).unwrap(), find(&h, "alg/svc"));
        assert_eq!(h.lowest_common_ancestor(&BTreeSet::from([t2, r1])).unwrap(), ALG_ROOT);
        assert_eq!(h.lowest_common_ancestor(&BTreeSet::new()), Err(HierarchyError::EmptySet));
    }

    #[test]
    fn matching() {
        let h = build_hierarchy(&svc_catalog()).unwrap();
        let rbf = SubQuery::new(NameSpec::Named("svc".into()), ParamSet::of(&[("kernel", "rbf")]));
        assert_eq!(h.matching_terminals(&rbf).len(), 2);
        assert_eq!(h.matching_terminals(&SubQuery::new(NameSpec::Any, ParamSet::new())).len(), 5);
        let none = SubQuery::new(NameSpec::Named("svc".into()), ParamSet::of(&[("nonexistent", "1")]));
        assert!(h.matching_terminals(&none).is_empty());
    }

    #[test]
    fn rejects_bad_catalogs() {
        let mut cat = svc_catalog();
        cat.algorithms.push(cat.algorithms[3].clone());
        assert!(matches!(build_hierarchy(&cat), Err(HierarchyError::DuplicateResource(_))));

        let mut cat = svc_catalog();
        cat.algorithms.push(AlgorithmEntry::new("svc", ParamSet::of(&[("C", "2")])).grouped(&["svc(C=1,kernel=linear)"]));
        assert!(matches!(build_hierarchy(&cat), Err(HierarchyError::GroupCollision { .. })));

        let mut cat = svc_catalog();
        let mut p = ParamSet::new();
        p.insert("C", ParamValue::Any);
        cat.algorithms.push(AlgorithmEntry::new("svc", p));
        assert!(matches!(build_hierarchy(&cat), Err(HierarchyError::NonConcrete(_))));
    }

    #[test]
    fn dot_counts_and_order() {
        let mut h = build_hierarchy(&svc_catalog()).unwrap();
        let dot = h.to_dot();
        assert_eq!(dot.matches(" -> ").count(), h.len() - 1);
        assert_eq!(dot.matches("[label=").count(), h.len());
        h.permute_children(|_, c| c.reverse());
        assert_eq!(h.to_dot(), dot);
        let with = h.to_dot_with(&[TunerOverlay { label: "tuner".into(), parent: ALG_ROOT }]);
        assert_ne!(with, dot);
    }

    #[test]
    fn chain_shape() {
        for size in [3, 5, 15, 31] {
            let h = worst_case_chain(size, "knn", "k").unwrap();
            assert_eq!(h.alg_size(), size);
            h.check_invariants().unwrap();
            let deepest = h.nodes().iter().map(|n| n.level).max().unwrap();
            // terminals sit one below the last chain link
            assert_eq!(deepest - 1, (size - 1) / 2);
            for n in h.subtree(ALG_ROOT) {
                let node = h.node(n).unwrap();
                assert!(node.is_terminal() || node.children.len() >= 2);
            }
        }
        assert!(worst_case_chain(4, "knn", "k").is_err());
    }

    #[test]
    fn catalog_json() {
        let text = r#"{
            "algorithms": [{"family": "knn", "params": {"k": 3}, "group": ["small"]}],
            "datasets": [
                {"name": "blobs", "params": {"type": "blobs"}, "source": {"generate": {"kind": "blobs", "n": 40, "seed": 1, "noise": 0.2}}},
                {"name": "saved", "source": {"file": "data/saved.json"}}
            ]
        }"#;
        let cat = Catalog::from_json(text, Some(Path::new("/tmp/cat"))).unwrap();
        assert_eq!(cat.datasets[1].source, DataSource::File(PathBuf::from("/tmp/cat/data/saved.json")));
        let h = build_hierarchy(&cat).unwrap();
        let spec = DataSpec { name: NameSpec::Named("blobs".into()), params: ParamSet::new() };
        let found = h.matching_datasets(&spec);
        assert_eq!(found.len(), 1);
        assert!(Catalog::from_json(r#"{"algos": []}"#, None).is_err());
    }
}
