//! Query model: algorithm sub-queries, dataset spec and output spec, plus the
//! JSON document format used to submit them.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::{self, MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::ml::TaskKind;
use crate::params::{self, Concrete, ParamSet, ParamValue, SimilarityConstants, ANY, TUNE};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("malformed query document: {0}")]
    Malformed(String),
    #[error("duplicate parameter `{name}` in {location}")]
    DuplicateParam { location: String, name: String },
    #[error("`?` is only allowed in algorithm parameters (found in {0})")]
    TuneOutsideAlgorithm(String),
    #[error("parameter `{param}` of algorithm #{subquery} is marked `?` but has no domain")]
    MissingDomain { subquery: usize, param: String },
    #[error("domain declared for `{param}` of algorithm #{subquery}, which is not `?` or `*`")]
    StrayDomain { subquery: usize, param: String },
    #[error("invalid domain for `{param}`: {reason}")]
    InvalidDomain { param: String, reason: String },
    #[error("unknown measure `{0}` (expected acc, mse or fms)")]
    UnknownMeasure(String),
    #[error("invalid value for `{field}`: {value}")]
    InvalidField { field: String, value: String },
    #[error("query has no algorithm entries")]
    EmptyAlgorithms,
    #[error("tuning query has no parameter marked `?`")]
    NoTuneParameter,
}

/// Algorithm or dataset name: either concrete or `*`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NameSpec {
    Any,
    Named(String),
}

impl NameSpec {
    /// Name coverage: the agent name lies within the scope of the query name.
    pub fn admits(&self, name: &str) -> bool {
        match self {
            NameSpec::Any => true,
            NameSpec::Named(n) => n == name,
        }
    }

    fn to_json(&self) -> Value {
        match self {
            NameSpec::Any => json!(ANY),
            NameSpec::Named(n) => json!(n),
        }
    }
}

impl fmt::Display for NameSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NameSpec::Any => f.write_str(ANY),
            NameSpec::Named(n) => f.write_str(n),
        }
    }
}

/// Search domain of a tunable parameter.
#[derive(Debug, Clone, PartialEq)]
pub enum TuneDomain {
    Uniform { low: f64, high: f64 },
    LogUniform { low: f64, high: f64 },
    Choice(Vec<Concrete>),
    /// Inclusive on both ends.
    IntRange { low: i64, high: i64 },
}

impl TuneDomain {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            TuneDomain::Uniform { low, high } => {
                if !(low.is_finite() && high.is_finite() && low < high) {
                    return Err(format!("uniform requires low < high (got {low}, {high})"));
                }
            }
            TuneDomain::LogUniform { low, high } => {
                if !(low.is_finite() && high.is_finite() && *low > 0.0 && low < high) {
                    return Err(format!("loguniform requires 0 < low < high (got {low}, {high})"));
                }
            }
            TuneDomain::Choice(values) => {
                if values.is_empty() {
                    return Err("choice requires at least one value".into());
                }
            }
            TuneDomain::IntRange { low, high } => {
                if low >= high {
                    return Err(format!("intrange requires low < high (got {low}, {high})"));
                }
            }
        }
        Ok(())
    }

    /// Whether a concrete value lies inside the domain.
    pub fn contains(&self, value: &Concrete) -> bool {
        match self {
            TuneDomain::Uniform { low, high } | TuneDomain::LogUniform { low, high } => {
                value.as_f64().is_some_and(|x| *low <= x && x <= *high)
            }
            TuneDomain::Choice(values) => values.contains(value),
            TuneDomain::IntRange { low, high } => value
                .as_f64()
                .is_some_and(|x| x.fract() == 0.0 && (*low as f64) <= x && x <= (*high as f64)),
        }
    }

    /// All values of a finite domain, in order.
    pub fn enumerate(&self) -> Option<Vec<Concrete>> {
        match self {
            TuneDomain::Choice(values) => Some(values.clone()),
            TuneDomain::IntRange { low, high } => Some((*low..=*high).map(Concrete::from_i64).collect()),
            _ => None,
        }
    }

    fn to_json(&self) -> Value {
        match self {
            TuneDomain::Uniform { low, high } => json!({"kind": "uniform", "low": low, "high": high}),
            TuneDomain::LogUniform { low, high } => {
                json!({"kind": "loguniform", "low": low, "high": high})
            }
            TuneDomain::Choice(values) => {
                let values: Vec<ParamValue> = values.iter().cloned().map(ParamValue::Concrete).collect();
                json!({"kind": "choice", "values": values})
            }
            TuneDomain::IntRange { low, high } => json!({"kind": "intrange", "low": low, "high": high}),
        }
    }
}

/// One algorithm entry `(a_i, P_{a_i})` of a query.
#[derive(Debug, Clone, PartialEq)]
pub struct SubQuery {
    pub name: NameSpec,
    pub params: ParamSet,
    /// Written `{*}`: every parameter with any value.
    pub all_params: bool,
    pub domains: BTreeMap<String, TuneDomain>,
    /// Task implied by the query's measure; `None` admits every task.
    pub task: Option<TaskKind>,
}

impl SubQuery {
    pub fn new(name: NameSpec, params: ParamSet) -> Self {
        Self {
            name,
            params,
            all_params: false,
            domains: BTreeMap::new(),
            task: None,
        }
    }

    pub fn with_domain(mut self, param: impl Into<String>, domain: TuneDomain) -> Self {
        self.domains.insert(param.into(), domain);
        self
    }

    pub fn with_task(mut self, task: TaskKind) -> Self {
        self.task = Some(task);
        self
    }

    /// `(z, l)`: whether the sub-query tunes anything and whether it is generic.
    pub fn classify(&self) -> (bool, bool) {
        classify_subquery(self)
    }

    pub fn is_tuning(&self) -> bool {
        self.classify().0
    }

    /// Names whose values are `*` or `?`.
    pub fn open_params(&self) -> Vec<String> {
        self.params
            .iter()
            .filter(|(_, v)| !v.is_concrete())
            .map(|(k, _)| k.to_string())
            .collect()
    }

    /// Proposal score of a terminal with concrete capability `cap`.
    ///
    /// An empty parameter list matches every configuration of the family and
    /// scores 1; the `{*}` form scores `alpha`, like a lone `*` pair.
    pub fn proposal(&self, cap: &ParamSet, c: &SimilarityConstants) -> f64 {
        if self.params.is_empty() {
            if self.all_params {
                c.alpha()
            } else {
                1.0
            }
        } else {
            params::set_similarity(&self.params, cap, c).expect("non-empty query set")
        }
    }

    pub fn to_json(&self) -> Value {
        let params = if self.all_params {
            json!(ANY)
        } else {
            serde_json::to_value(&self.params).expect("serializable")
        };
        let mut doc = json!({"name": self.name.to_json(), "params": params});
        if !self.domains.is_empty() {
            let domains: serde_json::Map<String, Value> =
                self.domains.iter().map(|(k, d)| (k.clone(), d.to_json())).collect();
            doc["domains"] = Value::Object(domains);
        }
        doc
    }

    /// Stable text form, independent of where the sub-query sits in a query.
    pub fn canonical(&self) -> String {
        let task = self.task.map(|t| t.as_str()).unwrap_or("any");
        format!("{}|{}", self.to_json(), task)
    }
}

/// `(z, l)` flags of a sub-query.
pub fn classify_subquery(sq: &SubQuery) -> (bool, bool) {
    let z = sq.params.iter().any(|(_, v)| matches!(v, ParamValue::Tune));
    let l = sq.all_params || sq.params.iter().any(|(_, v)| matches!(v, ParamValue::Any));
    (z, l)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    Acc,
    Mse,
    Fms,
}

impl Measure {
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        match text {
            "acc" => Ok(Measure::Acc),
            "mse" => Ok(Measure::Mse),
            "fms" => Ok(Measure::Fms),
            other => Err(ParseError::UnknownMeasure(other.to_string())),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Measure::Acc => "acc",
            Measure::Mse => "mse",
            Measure::Fms => "fms",
        }
    }

    /// The kind of learner that the measure evaluates.
    pub fn task(&self) -> TaskKind {
        match self {
            Measure::Acc => TaskKind::Classification,
            Measure::Mse => TaskKind::Regression,
            Measure::Fms => TaskKind::Clustering,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "max")]
    Maximize,
    #[serde(rename = "min")]
    Minimize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryTask {
    Tune,
    Select,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Random,
    Grid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSpec {
    pub task: QueryTask,
    pub measure: Measure,
    pub direction: Direction,
    /// Fold count; `None` defers to the runner's default.
    pub folds: Option<usize>,
    pub budget: Option<usize>,
    pub strategy: Option<Strategy>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSpec {
    pub name: NameSpec,
    pub params: ParamSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub algorithms: Vec<SubQuery>,
    pub data: DataSpec,
    pub output: OutputSpec,
}

impl Query {
    /// Validates invariants shared by parsed and hand-built queries.
    pub fn validate(&self) -> Result<(), ParseError> {
        if self.algorithms.is_empty() {
            return Err(ParseError::EmptyAlgorithms);
        }
        for (i, sq) in self.algorithms.iter().enumerate() {
            for (name, value) in sq.params.iter() {
                if matches!(value, ParamValue::Tune) && !sq.domains.contains_key(name) {
                    return Err(ParseError::MissingDomain {
                        subquery: i,
                        param: name.to_string(),
                    });
                }
            }
            for (name, domain) in &sq.domains {
                match sq.params.get(name) {
                    Some(ParamValue::Tune) | Some(ParamValue::Any) => {}
                    _ => {
                        return Err(ParseError::StrayDomain {
                            subquery: i,
                            param: name.clone(),
                        })
                    }
                }
                domain.validate().map_err(|reason| ParseError::InvalidDomain {
                    param: name.clone(),
                    reason,
                })?;
            }
        }
        if self.data.params.iter().any(|(_, v)| matches!(v, ParamValue::Tune)) {
            return Err(ParseError::TuneOutsideAlgorithm("data params".into()));
        }
        if self.output.task == QueryTask::Tune && !self.algorithms.iter().any(SubQuery::is_tuning) {
            return Err(ParseError::NoTuneParameter);
        }
        if self.output.folds == Some(0) || self.output.folds == Some(1) {
            return Err(ParseError::InvalidField {
                field: "output.folds".into(),
                value: format!("{}", self.output.folds.unwrap_or_default()),
            });
        }
        if self.output.budget == Some(0) {
            return Err(ParseError::InvalidField {
                field: "output.budget".into(),
                value: "0".into(),
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> Value {
        let mut output = json!({
            "task": self.output.task,
            "measure": self.output.measure,
            "direction": self.output.direction,
        });
        if let Some(k) = self.output.folds {
            output["folds"] = json!(k);
        }
        if let Some(b) = self.output.budget {
            output["budget"] = json!(b);
        }
        if let Some(s) = self.output.strategy {
            output["strategy"] = json!(s);
        }
        json!({
            "algorithms": self.algorithms.iter().map(SubQuery::to_json).collect::<Vec<_>>(),
            "data": {"name": self.data.name.to_json(), "params": self.data.params},
            "output": output,
        })
    }

    /// Pretty JSON document; `parse_query` reads it back to an equal query.
    pub fn to_document(&self) -> String {
        serde_json::to_string_pretty(&self.to_json()).expect("serializable")
    }
}

/// Ordered `(key, value)` entries of a JSON object, keeping duplicates so
/// they can be reported.
struct Entries<T>(Vec<(String, T)>);

impl<'de, T: Deserialize<'de>> Deserialize<'de> for Entries<T> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct EntriesVisitor<T>(std::marker::PhantomData<T>);

        impl<'de, T: Deserialize<'de>> Visitor<'de> for EntriesVisitor<T> {
            type Value = Entries<T>;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, T>()? {
                    out.push((k, v));
                }
                Ok(Entries(out))
            }
        }

        deserializer.deserialize_map(EntriesVisitor(std::marker::PhantomData))
    }
}

/// Parameter list: an object, or the string `"*"` for every parameter.
enum RawParams {
    All,
    Entries(Vec<(String, Value)>),
}

impl<'de> Deserialize<'de> for RawParams {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct ParamsVisitor;

        impl<'de> Visitor<'de> for ParamsVisitor {
            type Value = RawParams;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object of parameters or \"*\"")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Self::Value, E> {
                if v == ANY {
                    Ok(RawParams::All)
                } else {
                    Err(E::custom(format!("expected \"*\" or an object, found \"{v}\"")))
                }
            }

            fn visit_map<A: MapAccess<'de>>(self, map: A) -> Result<Self::Value, A::Error> {
                let entries = Entries::<Value>::deserialize(de::value::MapAccessDeserializer::new(map))?;
                Ok(RawParams::Entries(entries.0))
            }
        }

        deserializer.deserialize_any(ParamsVisitor)
    }
}

impl Default for RawParams {
    fn default() -> Self {
        RawParams::Entries(Vec::new())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDomain {
    kind: String,
    #[serde(default)]
    low: Option<f64>,
    #[serde(default)]
    high: Option<f64>,
    #[serde(default)]
    values: Option<Vec<Value>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSubQuery {
    name: String,
    #[serde(default)]
    params: RawParams,
    #[serde(default)]
    domains: Option<Entries<RawDomain>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawData {
    name: String,
    #[serde(default)]
    params: RawParams,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    task: String,
    measure: String,
    direction: String,
    #[serde(default)]
    folds: Option<usize>,
    #[serde(default)]
    budget: Option<usize>,
    #[serde(default)]
    strategy: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawQuery {
    algorithms: Vec<RawSubQuery>,
    data: RawData,
    output: RawOutput,
}

fn parse_name(raw: &str, location: &str) -> Result<NameSpec, ParseError> {
    match raw.trim() {
        ANY => Ok(NameSpec::Any),
        TUNE => Err(ParseError::TuneOutsideAlgorithm(location.to_string())),
        "" => Err(ParseError::InvalidField {
            field: location.to_string(),
            value: "empty name".into(),
        }),
        name => Ok(NameSpec::Named(name.to_string())),
    }
}

fn parse_param_entries(entries: Vec<(String, Value)>, location: &str) -> Result<ParamSet, ParseError> {
    let mut set = ParamSet::new();
    for (name, raw) in entries {
        let value = params::value_from_json(&raw).map_err(|e| ParseError::InvalidField {
            field: format!("{location}.{name}"),
            value: e,
        })?;
        if set.insert(name.clone(), value).is_some() {
            return Err(ParseError::DuplicateParam {
                location: location.to_string(),
                name,
            });
        }
    }
    Ok(set)
}

fn parse_domain(param: &str, raw: RawDomain) -> Result<TuneDomain, ParseError> {
    let invalid = |reason: String| ParseError::InvalidDomain {
        param: param.to_string(),
        reason,
    };
    let bounds = || match (raw.low, raw.high) {
        (Some(l), Some(h)) => Ok((l, h)),
        _ => Err(invalid(format!("`{}` requires low and high", raw.kind))),
    };
    let domain = match raw.kind.as_str() {
        "uniform" => {
            let (low, high) = bounds()?;
            TuneDomain::Uniform { low, high }
        }
        "loguniform" => {
            let (low, high) = bounds()?;
            TuneDomain::LogUniform { low, high }
        }
        "intrange" => {
            let (low, high) = bounds()?;
            if low.fract() != 0.0 || high.fract() != 0.0 {
                return Err(invalid("intrange bounds must be integers".into()));
            }
            TuneDomain::IntRange {
                low: low as i64,
                high: high as i64,
            }
        }
        "choice" => {
            let values = raw.values.as_ref().ok_or_else(|| invalid("choice requires values".into()))?;
            let mut out: Vec<Concrete> = Vec::with_capacity(values.len());
            for v in values {
                match params::value_from_json(v) {
                    Ok(ParamValue::Concrete(c)) => {
                        if !out.contains(&c) {
                            out.push(c);
                        }
                    }
                    Ok(other) => return Err(invalid(format!("reserved literal `{other}` in choice"))),
                    Err(e) => return Err(invalid(e)),
                }
            }
            TuneDomain::Choice(out)
        }
        other => return Err(invalid(format!("unknown kind `{other}`"))),
    };
    domain.validate().map_err(invalid)?;
    Ok(domain)
}

/// Parses and validates a JSON query document.
pub fn parse_query(text: &str) -> Result<Query, ParseError> {
    let raw: RawQuery = serde_json::from_str(text).map_err(|e| ParseError::Malformed(e.to_string()))?;

    let output = {
        let o = raw.output;
        let task = match o.task.as_str() {
            "tune" => QueryTask::Tune,
            "select" => QueryTask::Select,
            other => {
                return Err(ParseError::InvalidField {
                    field: "output.task".into(),
                    value: other.into(),
                })
            }
        };
        let direction = match o.direction.as_str() {
            "max" => Direction::Maximize,
            "min" => Direction::Minimize,
            other => {
                return Err(ParseError::InvalidField {
                    field: "output.direction".into(),
                    value: other.into(),
                })
            }
        };
        let strategy = match o.strategy.as_deref() {
            None => None,
            Some("random") => Some(Strategy::Random),
            Some("grid") => Some(Strategy::Grid),
            Some(other) => {
                return Err(ParseError::InvalidField {
                    field: "output.strategy".into(),
                    value: other.into(),
                })
            }
        };
        OutputSpec {
            task,
            measure: Measure::parse(&o.measure)?,
            direction,
            folds: o.folds,
            budget: o.budget,
            strategy,
        }
    };

    let data = {
        let name = parse_name(&raw.data.name, "data name")?;
        let params = match raw.data.params {
            RawParams::All => ParamSet::new(),
            RawParams::Entries(e) => parse_param_entries(e, "data params")?,
        };
        if params.iter().any(|(_, v)| matches!(v, ParamValue::Tune)) {
            return Err(ParseError::TuneOutsideAlgorithm("data params".into()));
        }
        DataSpec { name, params }
    };

    let task = output.measure.task();
    let mut algorithms = Vec::with_capacity(raw.algorithms.len());
    for (i, rsq) in raw.algorithms.into_iter().enumerate() {
        let location = format!("algorithm #{i}");
        let name = parse_name(&rsq.name, &format!("{location} name"))?;
        let (params, all_params) = match rsq.params {
            RawParams::All => (ParamSet::new(), true),
            RawParams::Entries(e) => (parse_param_entries(e, &format!("{location} params"))?, false),
        };
        let mut domains = BTreeMap::new();
        for (param, rd) in rsq.domains.map(|e| e.0).unwrap_or_default() {
            let domain = parse_domain(&param, rd)?;
            if domains.insert(param.clone(), domain).is_some() {
                return Err(ParseError::DuplicateParam {
                    location: format!("{location} domains"),
                    name: param,
                });
            }
        }
        algorithms.push(SubQuery {
            name,
            params,
            all_params,
            domains,
            task: Some(task),
        });
    }

    let query = Query {
        algorithms,
        data,
        output,
    };
    query.validate()?;
    Ok(query)
}
