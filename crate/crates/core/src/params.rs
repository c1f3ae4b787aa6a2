//! Parametric sets and the similarity / coverage operators over them.
//!
//! A parametric set maps parameter names to values. A value is either a
//! concrete setting, the wildcard `*` (any available value) or the tuning
//! marker `?` (value to be optimized). Two operators drive the protocol:
//!
//! * the parametric similarity ratio ([`set_similarity`]) scores how well a
//!   capability matches a query and becomes a terminal agent's proposal;
//! * coverage ([`set_covers`]) decides whether a capability can possibly serve
//!   a query and is used to prune sub-queries on the way down the hierarchy.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reserved literal for "any available value".
pub const ANY: &str = "*";
/// Reserved literal for "tune this parameter".
pub const TUNE: &str = "?";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("parameter name mismatch: `{left}` vs `{right}`")]
    NameMismatch { left: String, right: String },
    #[error("reserved literal `{0}` cannot be used as a concrete value")]
    ReservedLiteral(String),
    #[error("empty concrete value")]
    EmptyValue,
    #[error("non-finite numeric value")]
    NonFinite,
    #[error("similarity of an empty parametric set is undefined")]
    EmptySet,
    #[error("duplicate parameter `{0}`")]
    DuplicateName(String),
    #[error("similarity constants must satisfy 0 < beta < alpha < tau < 1 (got beta={beta}, alpha={alpha}, tau={tau})")]
    InvalidConstants { beta: f64, alpha: f64, tau: f64 },
}

/// A concrete parameter value in canonical text form.
///
/// Text that parses as a finite number is stored in Rust's shortest
/// round-trip rendering, so `"1e2"`, `100` and `"100.0"` are the same value.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Concrete(String);

impl Concrete {
    pub fn new(text: impl AsRef<str>) -> Result<Self, ParamError> {
        let text = text.as_ref().trim();
        if text.is_empty() {
            return Err(ParamError::EmptyValue);
        }
        if text == ANY || text == TUNE {
            return Err(ParamError::ReservedLiteral(text.to_string()));
        }
        match text.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(Self::from_f64_unchecked(x)),
            _ => Ok(Concrete(text.to_string())),
        }
    }

    pub fn from_f64(x: f64) -> Result<Self, ParamError> {
        if x.is_finite() {
            Ok(Self::from_f64_unchecked(x))
        } else {
            Err(ParamError::NonFinite)
        }
    }

    fn from_f64_unchecked(x: f64) -> Self {
        // -0 and 0 are one value
        let x = if x == 0.0 { 0.0 } else { x };
        Concrete(format!("{x}"))
    }

    pub fn from_i64(x: i64) -> Self {
        Concrete(x.to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Numeric interpretation, if the value is a number.
    pub fn as_f64(&self) -> Option<f64> {
        self.0.parse::<f64>().ok().filter(|x| x.is_finite())
    }

    pub fn is_numeric(&self) -> bool {
        self.as_f64().is_some()
    }
}

impl TryFrom<String> for Concrete {
    type Error = ParamError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Concrete::new(value)
    }
}

impl From<Concrete> for String {
    fn from(value: Concrete) -> Self {
        value.0
    }
}

impl fmt::Display for Concrete {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Ord for Concrete {
    /// Numbers sort numerically and before text; text sorts lexicographically.
    fn cmp(&self, other: &Self) -> Ordering {
        match (self.as_f64(), other.as_f64()) {
            (Some(a), Some(b)) => a.total_cmp(&b).then_with(|| self.0.cmp(&other.0)),
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (None, None) => self.0.cmp(&other.0),
        }
    }
}

impl PartialOrd for Concrete {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// A parameter value: concrete, `*` or `?`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamValue {
    Concrete(Concrete),
    Any,
    Tune,
}

impl ParamValue {
    /// Parses a textual value, mapping the reserved literals.
    pub fn parse(text: &str) -> Result<Self, ParamError> {
        match text.trim() {
            ANY => Ok(ParamValue::Any),
            TUNE => Ok(ParamValue::Tune),
            other => Concrete::new(other).map(ParamValue::Concrete),
        }
    }

    pub fn concrete(text: impl AsRef<str>) -> Result<Self, ParamError> {
        Concrete::new(text).map(ParamValue::Concrete)
    }

    pub fn as_concrete(&self) -> Option<&Concrete> {
        match self {
            ParamValue::Concrete(c) => Some(c),
            _ => None,
        }
    }

    pub fn is_concrete(&self) -> bool {
        matches!(self, ParamValue::Concrete(_))
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Concrete(c) => c.fmt(f),
            ParamValue::Any => f.write_str(ANY),
            ParamValue::Tune => f.write_str(TUNE),
        }
    }
}

impl Serialize for ParamValue {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            ParamValue::Concrete(c) => match c.as_f64() {
                Some(x) if x.fract() == 0.0 && x.abs() < 9.0e15 => serializer.serialize_i64(x as i64),
                Some(x) => serializer.serialize_f64(x),
                None => serializer.serialize_str(c.as_str()),
            },
            ParamValue::Any => serializer.serialize_str(ANY),
            ParamValue::Tune => serializer.serialize_str(TUNE),
        }
    }
}

impl<'de> Deserialize<'de> for ParamValue {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = serde_json::Value::deserialize(deserializer)?;
        value_from_json(&raw).map_err(serde::de::Error::custom)
    }
}

/// Converts a JSON scalar into a parameter value.
pub fn value_from_json(raw: &serde_json::Value) -> Result<ParamValue, String> {
    match raw {
        serde_json::Value::String(s) => ParamValue::parse(s).map_err(|e| e.to_string()),
        serde_json::Value::Number(n) => {
            let x = n.as_f64().ok_or_else(|| format!("unrepresentable number {n}"))?;
            Concrete::from_f64(x)
                .map(ParamValue::Concrete)
                .map_err(|e| e.to_string())
        }
        serde_json::Value::Bool(b) => Ok(ParamValue::Concrete(Concrete(b.to_string()))),
        other => Err(format!("expected a scalar parameter value, found {other}")),
    }
}

/// A set of `(name, value)` pairs with at most one entry per name, iterated
/// in name order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamSet(BTreeMap<String, ParamValue>);

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a set, rejecting duplicate names.
    pub fn from_pairs<I, K>(pairs: I) -> Result<Self, ParamError>
    where
        I: IntoIterator<Item = (K, ParamValue)>,
        K: Into<String>,
    {
        let mut set = ParamSet::new();
        for (name, value) in pairs {
            let name = name.into();
            if set.0.contains_key(&name) {
                return Err(ParamError::DuplicateName(name));
            }
            set.0.insert(name, value);
        }
        Ok(set)
    }

    /// Convenience constructor from textual values; panics on invalid input.
    /// Intended for fixtures and tests.
    pub fn of(pairs: &[(&str, &str)]) -> Self {
        Self::from_pairs(
            pairs
                .iter()
                .map(|(k, v)| (*k, ParamValue::parse(v).expect("valid parameter value"))),
        )
        .expect("unique parameter names")
    }

    pub fn insert(&mut self, name: impl Into<String>, value: ParamValue) -> Option<ParamValue> {
        self.0.insert(name.into(), value)
    }

    pub fn get(&self, name: &str) -> Option<&ParamValue> {
        self.0.get(name)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamValue)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn is_all_concrete(&self) -> bool {
        self.0.values().all(ParamValue::is_concrete)
    }

    /// `name=value` pairs joined by commas, in name order.
    pub fn canonical(&self) -> String {
        self.iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl fmt::Display for ParamSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.canonical())
    }
}

impl FromIterator<(String, ParamValue)> for ParamSet {
    /// Later entries replace earlier ones with the same name.
    fn from_iter<T: IntoIterator<Item = (String, ParamValue)>>(iter: T) -> Self {
        ParamSet(iter.into_iter().collect())
    }
}

/// Constants of the pairwise similarity, `0 < beta < alpha < tau < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConstants {
    beta: f64,
    alpha: f64,
    tau: f64,
}

impl SimilarityConstants {
    pub fn new(beta: f64, alpha: f64, tau: f64) -> Result<Self, ParamError> {
        if 0.0 < beta && beta < alpha && alpha < tau && tau < 1.0 {
            Ok(Self { beta, alpha, tau })
        } else {
            Err(ParamError::InvalidConstants { beta, alpha, tau })
        }
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }
}

impl Default for SimilarityConstants {
    fn default() -> Self {
        Self {
            beta: 0.1,
            alpha: 0.6,
            tau: 0.8,
        }
    }
}

fn check_names(left: &str, right: &str) -> Result<(), ParamError> {
    if left == right {
        Ok(())
    } else {
        Err(ParamError::NameMismatch {
            left: left.to_string(),
            right: right.to_string(),
        })
    }
}

fn value_similarity(v: &ParamValue, w: &ParamValue, c: &SimilarityConstants) -> f64 {
    use ParamValue::{Any, Tune};
    if v == w {
        1.0
    } else if matches!(v, Tune) || matches!(w, Tune) {
        c.tau
    } else if matches!(v, Any) != matches!(w, Any) {
        c.alpha
    } else {
        c.beta
    }
}

/// Similarity of two same-named pairs: `1`, `tau`, `alpha` or `beta`.
pub fn pair_similarity(
    left: (&str, &ParamValue),
    right: (&str, &ParamValue),
    c: &SimilarityConstants,
) -> Result<f64, ParamError> {
    check_names(left.0, right.0)?;
    Ok(value_similarity(left.1, right.1, c))
}

/// Parametric similarity ratio of query `p` against capability `cap`.
///
/// Equal pairs and pairs involving `?` are summed; the remaining mismatched
/// pairs are multiplied together, where an empty product counts as zero.
/// Query parameters missing from the capability are mismatches scoring
/// `beta`. The total is divided by `|p|`.
pub fn set_similarity(
    p: &ParamSet,
    cap: &ParamSet,
    c: &SimilarityConstants,
) -> Result<f64, ParamError> {
    if p.is_empty() {
        return Err(ParamError::EmptySet);
    }
    let mut sum = 0.0;
    let mut product = 1.0;
    let mut has_mismatch = false;
    for (name, v) in p.iter() {
        match cap.get(name) {
            Some(w) if v == w || matches!(v, ParamValue::Tune) || matches!(w, ParamValue::Tune) => {
                sum += value_similarity(v, w, c);
            }
            Some(w) => {
                product *= value_similarity(v, w, c);
                has_mismatch = true;
            }
            None => {
                product *= c.beta;
                has_mismatch = true;
            }
        }
    }
    let product = if has_mismatch { product } else { 0.0 };
    Ok((sum + product) / p.len() as f64)
}

fn value_covers(v: &ParamValue, w: &ParamValue) -> bool {
    v == w || !v.is_concrete() || !w.is_concrete()
}

/// `(p, v)` lies within the scope of `(p, v')`.
pub fn pair_covers(query: (&str, &ParamValue), cap: (&str, &ParamValue)) -> Result<bool, ParamError> {
    check_names(query.0, cap.0)?;
    Ok(value_covers(query.1, cap.1))
}

/// Every query pair has a same-named capability pair covering it.
pub fn set_covers(query: &ParamSet, cap: &ParamSet) -> bool {
    query
        .iter()
        .all(|(name, v)| cap.get(name).is_some_and(|w| value_covers(v, w)))
}

/// Multi-valued capability: each parameter name maps to every value seen
/// among the terminals it summarizes.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Capability(BTreeMap<String, BTreeSet<ParamValue>>);

impl Capability {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&BTreeSet<ParamValue>> {
        self.0.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &BTreeSet<ParamValue>)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn absorb_set(&mut self, set: &ParamSet) {
        for (name, value) in set.iter() {
            self.0.entry(name.to_string()).or_default().insert(value.clone());
        }
    }

    pub fn absorb(&mut self, other: &Capability) {
        for (name, values) in &other.0 {
            self.0
                .entry(name.clone())
                .or_default()
                .extend(values.iter().cloned());
        }
    }

    /// Coverage against a multi-valued capability: some recorded value must
    /// cover each query pair.
    pub fn covers(&self, query: &ParamSet) -> bool {
        query.iter().all(|(name, v)| {
            self.0
                .get(name)
                .is_some_and(|values| values.iter().any(|w| value_covers(v, w)))
        })
    }

    /// The single-valued set, if every name has exactly one value.
    pub fn as_single(&self) -> Option<ParamSet> {
        self.0
            .iter()
            .map(|(k, vs)| {
                if vs.len() == 1 {
                    vs.iter().next().map(|v| (k.clone(), v.clone()))
                } else {
                    None
                }
            })
            .collect::<Option<BTreeMap<_, _>>>()
            .map(ParamSet)
    }

    pub fn canonical(&self) -> String {
        self.0
            .iter()
            .map(|(k, vs)| {
                if vs.len() == 1 {
                    format!("{k}={}", vs.iter().next().expect("non-empty"))
                } else {
                    let joined = vs.iter().map(ToString::to_string).collect::<Vec<_>>().join("|");
                    format!("{k}={{{joined}}}")
                }
            })
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl From<&ParamSet> for Capability {
    fn from(set: &ParamSet) -> Self {
        let mut cap = Capability::new();
        cap.absorb_set(set);
        cap
    }
}
