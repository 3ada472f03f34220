//! Data-propagation policies and usage properties, checked on an estimate.
//!
//! Every check reads `κ` edge by edge; a failure is a may-flow, since the
//! estimate over-approximates what can happen at run time.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::ast::*;
use crate::cfa::{analyze, generate_constraints, solve_least, AnalysisOptions, Estimate, SolveError};
use crate::semantics::{Location, TraceEvent};
use crate::treegram::{apply_tagging, min_tree, tree_tag, AbstractValue, GrammarJson, Production, Symbol, Tag, TaggingScheme};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Witness {
    pub sender: Label,
    pub receiver: Label,
    /// `None` for edge-level policies
    pub position: Option<usize>,
    pub value: Option<AbstractValue>,
    pub tag: Option<Tag>,
}

impl Witness {
    pub fn to_json(&self) -> serde_json::Value {
        let mut v = json!({ "sender": self.sender, "receiver": self.receiver });
        if let Some(i) = self.position {
            v["position"] = json!(i);
        }
        if let Some(g) = &self.value {
            v["grammar"] = serde_json::to_value(GrammarJson::from(g)).unwrap_or_default();
            v["grammar_text"] = json!(g.to_string());
            v["example"] = json!(min_tree(g).map(|t| t.to_string()));
        }
        if let Some(t) = self.tag {
            v["tag"] = json!(t);
        }
        v
    }
}

impl fmt::Display for Witness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "may-flow {} -> {}", self.sender, self.receiver)?;
        if let Some(i) = self.position {
            write!(f, " at position {}", i + 1)?;
        }
        if let Some(t) = self.tag {
            write!(f, " tagged {}", serde_json::to_value(t).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default())?;
        }
        if let Some(g) = &self.value {
            write!(f, ": {g}")?;
            if let Some(t) = min_tree(g) {
                write!(f, " e.g. {t}")?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub policy: String,
    pub pass: bool,
    pub witnesses: Vec<Witness>,
    pub notes: Vec<String>,
}

impl Verdict {
    fn new(policy: &str, witnesses: Vec<Witness>) -> Self {
        Verdict { policy: policy.into(), pass: witnesses.is_empty(), witnesses, notes: Vec::new() }
    }

    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "policy": self.policy,
            "pass": self.pass,
            "witnesses": self.witnesses.iter().map(Witness::to_json).collect::<Vec<_>>(),
            "notes": self.notes,
        })
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{}: {}", self.policy, if self.pass { "PASS" } else { "FAIL" })?;
        for w in &self.witnesses {
            writeln!(f, "  {w}")?;
        }
        for n in &self.notes {
            writeln!(f, "  note: {n}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("no level assigned to node {0}")]
    MissingLevel(Label),
    #[error("unknown node {0} in policy")]
    UnknownLabel(Label),
    #[error("node {0} has no sensor {1}")]
    UnknownSensor(Label, SensorId),
    #[error("unknown function {0} in policy")]
    UnknownFunction(Name),
}

/// Rejects classifications that mention labels, sensors or functions the
/// program does not have.
pub fn validate(prog: &Program, cfg: &PolicyConfig) -> Result<(), PolicyError> {
    let node = |l: &Label| prog.system.node(l).ok_or_else(|| PolicyError::UnknownLabel(l.clone()));
    for (l, i) in cfg.secret.iter().chain(&cfg.confined) {
        if !node(l)?.sensors().any(|j| j == *i) {
            return Err(PolicyError::UnknownSensor(l.clone(), *i));
        }
    }
    for f in &cfg.anonymisers {
        if prog.funs.get(f).is_none() {
            return Err(PolicyError::UnknownFunction(f.clone()));
        }
    }
    let flows = cfg.flows.iter().flat_map(|m| m.iter().flat_map(|(l, ls)| std::iter::once(l).chain(ls)));
    for l in cfg.levels.keys().chain(cfg.allowed.iter().flatten()).chain(flows) {
        node(l)?;
    }
    Ok(())
}

/// Every value on every `κ` edge must satisfy `pred(tag, sender, receiver)`.
pub fn check_well_propagation(
    e: &Estimate,
    scheme: &TaggingScheme,
    name: &str,
    pred: impl Fn(Tag, &Label, &Label) -> bool,
) -> Verdict {
    let mut ws = Vec::new();
    for (to, entries) in &e.kappa {
        for ((from, _), pos) in entries {
            for (i, set) in pos.iter().enumerate() {
                for v in set {
                    let tag = apply_tagging(v, scheme);
                    if !pred(tag, from, to) {
                        ws.push(Witness {
                            sender: from.clone(),
                            receiver: to.clone(),
                            position: Some(i),
                            value: Some(v.clone()),
                            tag: Some(tag),
                        });
                    }
                }
            }
        }
    }
    Verdict::new(name, ws)
}

pub fn secrecy_scheme(cfg: &PolicyConfig) -> TaggingScheme {
    TaggingScheme::Secrecy { secret: cfg.secret.clone() }
}

pub fn confinement_scheme(cfg: &PolicyConfig) -> TaggingScheme {
    TaggingScheme::Confinement { confined: cfg.confined.clone(), anonymisers: cfg.anonymisers.clone(), enc_cuts: false }
}

/// No secret data leaves a node in clear.
pub fn check_confidentiality(e: &Estimate, cfg: &PolicyConfig) -> Verdict {
    check_well_propagation(e, &secrecy_scheme(cfg), "secrecy", |t, _, _| t == Tag::Public)
}

fn level_allows(levels: &BTreeMap<Label, i64>, from: &Label, to: &Label) -> Result<bool, PolicyError> {
    let lv = |l: &Label| levels.get(l).copied().ok_or_else(|| PolicyError::MissingLevel(l.clone()));
    Ok(lv(from)? <= lv(to)?)
}

/// Messages only flow upwards in the level order.
pub fn check_levels(e: &Estimate, cfg: &PolicyConfig) -> Result<Verdict, PolicyError> {
    let mut ws = Vec::new();
    for (to, entries) in &e.kappa {
        for (from, _) in entries.keys() {
            if !level_allows(&cfg.levels, from, to)? {
                ws.push(Witness { sender: from.clone(), receiver: to.clone(), position: None, value: None, tag: None });
            }
        }
    }
    ws.dedup();
    let mut v = Verdict::new("levels", ws);
    v.notes.push("a flow is allowed iff level(sender) <= level(receiver)".into());
    Ok(v)
}

fn in_subsystem(cfg: &PolicyConfig, l: &Label) -> bool {
    cfg.allowed.as_ref().is_none_or(|a| a.contains(l))
}

/// Confined data only travels between nodes of the allowed subsystem.
pub fn check_selective_propagation(e: &Estimate, cfg: &PolicyConfig) -> Verdict {
    check_well_propagation(e, &confinement_scheme(cfg), "selective-propagation", |t, from, to| {
        t == Tag::Open || (in_subsystem(cfg, from) && in_subsystem(cfg, to))
    })
}

/// Each sender may only reach the receivers listed for it.
pub fn check_generic_flows(e: &Estimate, cfg: &PolicyConfig) -> Verdict {
    let none = BTreeSet::new();
    let flows = cfg.flows.clone().unwrap_or_default();
    let mut ws = Vec::new();
    for (to, entries) in &e.kappa {
        for (from, _) in entries.keys() {
            if !flows.get(from).unwrap_or(&none).contains(to) {
                ws.push(Witness { sender: from.clone(), receiver: to.clone(), position: None, value: None, tag: None });
            }
        }
    }
    ws.dedup();
    Verdict::new("flows", ws)
}

/// Runs every policy the configuration enables.
pub fn check_all(e: &Estimate, cfg: &PolicyConfig) -> Result<Vec<Verdict>, PolicyError> {
    let mut out = Vec::new();
    if !cfg.secret.is_empty() {
        out.push(check_confidentiality(e, cfg));
    }
    if !cfg.confined.is_empty() || cfg.allowed.is_some() {
        out.push(check_selective_propagation(e, cfg));
    }
    if !cfg.levels.is_empty() {
        out.push(check_levels(e, cfg)?);
    }
    if cfg.flows.is_some() {
        out.push(check_generic_flows(e, cfg));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Dynamic counterparts, evaluated on delivered messages.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyKind {
    Secrecy,
    Selective,
    Levels,
    Flows,
}

/// Delivered messages violating the policy, judged on provenance trees:
/// `(event index, sender, receiver, position)`.
pub fn concrete_violations(
    kind: PolicyKind,
    cfg: &PolicyConfig,
    trace: &[TraceEvent],
) -> Vec<(usize, Label, Label, Option<usize>)> {
    let mut out = Vec::new();
    for (k, ev) in trace.iter().enumerate() {
        let TraceEvent::MsgDelivered { from, to, values, .. } = ev else { continue };
        match kind {
            PolicyKind::Secrecy | PolicyKind::Selective => {
                for (i, v) in values.iter().enumerate() {
                    let bad = if kind == PolicyKind::Secrecy {
                        tree_tag(&v.tree, &secrecy_scheme(cfg)) == Tag::Secret
                    } else {
                        tree_tag(&v.tree, &confinement_scheme(cfg)) == Tag::Confined
                            && !(in_subsystem(cfg, from) && in_subsystem(cfg, to))
                    };
                    if bad {
                        out.push((k, from.clone(), to.clone(), Some(i)));
                    }
                }
            }
            PolicyKind::Levels => {
                if level_allows(&cfg.levels, from, to) != Ok(true) {
                    out.push((k, from.clone(), to.clone(), None));
                }
            }
            PolicyKind::Flows => {
                let ok = cfg.flows.as_ref().and_then(|m| m.get(from)).is_some_and(|s| s.contains(to));
                if !ok {
                    out.push((k, from.clone(), to.clone(), None));
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Usage properties

fn derives_leaf(v: &AbstractValue, leaf: &Production) -> bool {
    // values carry only reachable productions
    v.prods.contains(leaf)
}

/// Some value handled at `target` derives the sensor leaf `i^l`.
pub fn check_ingredient(e: &Estimate, l: &Label, i: SensorId, target: &Label) -> Option<AbstractValue> {
    let leaf = Production::leaf(Symbol::sensor(i, l));
    e.theta_of(target).iter().find(|v| derives_leaf(v, &leaf)).cloned()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorUsage {
    NeverUsed,
    Used,
}

/// A sensor is used when its leaf shows up anywhere except its own store
/// location.
pub fn check_sensor_usage(e: &Estimate, l: &Label, i: SensorId) -> SensorUsage {
    let leaf = Production::leaf(Symbol::sensor(i, l));
    let hit = |s: &BTreeSet<AbstractValue>| s.iter().any(|v| derives_leaf(v, &leaf));
    let in_theta = e.theta.values().any(hit);
    let in_sigma = e
        .sigma
        .iter()
        .any(|(l2, m)| m.iter().any(|(loc, s)| !(l2 == l && *loc == Location::Sensor(i)) && hit(s)));
    let in_kappa = e.kappa.values().flat_map(|m| m.values()).flatten().any(hit);
    if in_theta || in_sigma || in_kappa {
        SensorUsage::Used
    } else {
        SensorUsage::NeverUsed
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActuatorUsage {
    NeverUsed,
    Fires(BTreeSet<Name>),
}

pub fn check_actuator_usage(e: &Estimate, l: &Label, j: ActuatorId) -> ActuatorUsage {
    let s = e.alpha_of(l, j);
    if s.is_empty() {
        ActuatorUsage::NeverUsed
    } else {
        ActuatorUsage::Fires(s)
    }
}

// ---------------------------------------------------------------------------
// What-if on the compatibility relation

/// One expanded `κ` message.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Message {
    pub receiver: Label,
    pub sender: Label,
    pub values: Vec<AbstractValue>,
}

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let vs: Vec<String> = self.values.iter().map(|v| v.to_string()).collect();
        write!(f, "kappa({}) ∋ ({}, <{}>)", self.receiver, self.sender, vs.join(", "))
    }
}

pub fn messages(e: &Estimate) -> BTreeSet<Message> {
    let mut out = BTreeSet::new();
    for (to, entries) in &e.kappa {
        for ((from, _), pos) in entries {
            let mut tuples: Vec<Vec<AbstractValue>> = vec![Vec::new()];
            for s in pos {
                tuples = tuples
                    .into_iter()
                    .flat_map(|t| {
                        s.iter().map(move |v| {
                            let mut t2 = t.clone();
                            t2.push(v.clone());
                            t2
                        })
                    })
                    .collect();
            }
            for values in tuples {
                out.insert(Message { receiver: to.clone(), sender: from.clone(), values });
            }
        }
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KappaDiff {
    /// present before, absent after
    pub lost: Vec<Message>,
    pub gained: Vec<Message>,
}

impl KappaDiff {
    pub fn is_empty(&self) -> bool {
        self.lost.is_empty() && self.gained.is_empty()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let m = |ms: &[Message]| {
            ms.iter()
                .map(|m| {
                    json!({
                        "receiver": m.receiver,
                        "sender": m.sender,
                        "values": m.values.iter().map(|v| v.to_string()).collect::<Vec<_>>(),
                    })
                })
                .collect::<Vec<_>>()
        };
        json!({ "lost": m(&self.lost), "gained": m(&self.gained) })
    }
}

/// Re-solves with the given edges removed from the compatibility relation.
pub fn what_if_comp(
    prog: &Program,
    removed: &BTreeSet<(Label, Label)>,
    opts: AnalysisOptions,
) -> Result<KappaDiff, SolveError> {
    let before = messages(&analyze(prog, opts)?);
    let comp = prog.comp.without(removed);
    let after = messages(&solve_least(&generate_constraints(&prog.system, &comp), opts)?);
    Ok(KappaDiff {
        lost: before.difference(&after).cloned().collect(),
        gained: after.difference(&before).cloned().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_program;

    fn setup(src: &str) -> (Program, Estimate) {
        let p = parse_program(src).unwrap();
        let e = analyze(&p, AnalysisOptions::default()).unwrap();
        (p, e)
    }

    const TWO: &str = "key k; secret a.1; system { node a { store sensor 1: 0 proc out(#1) to {b}. out({#1}_k) to {b}. 0 } node b { store proc 0 } }";

    #[test]
    fn constant_scheme_passes() {
        let (_, e) = setup(TWO);
        assert!(check_well_propagation(&e, &TaggingScheme::Constant(Tag::Public), "c", |_, _, _| true).pass);
    }

    #[test]
    fn secrecy_flags_clear_sensor_only() {
        let (p, e) = setup(TWO);
        let v = check_confidentiality(&e, &p.policy);
        assert!(!v.pass);
        assert_eq!(v.witnesses.len(), 1);
        assert!(matches!(v.witnesses[0].value.as_ref().unwrap().start, Symbol::Sensor { .. }));
    }

    #[test]
    fn levels() {
        let (p, e) = setup(TWO);
        let mut cfg = p.policy.clone();
        assert_eq!(check_levels(&e, &cfg), Err(PolicyError::MissingLevel(Label::new("a"))));
        cfg.levels.insert(Label::new("a"), 2);
        cfg.levels.insert(Label::new("b"), 1);
        assert!(!check_levels(&e, &cfg).unwrap().pass);
        cfg.levels.insert(Label::new("b"), 2);
        assert!(check_levels(&e, &cfg).unwrap().pass);
    }

    #[test]
    fn unused_actuator_and_sensor() {
        let (_, e) = setup("system { node a { store sensor 1: 0 actuator 2: 0 } }");
        let a = Label::new("a");
        assert_eq!(check_actuator_usage(&e, &a, 2), ActuatorUsage::NeverUsed);
        assert_eq!(check_sensor_usage(&e, &a, 1), SensorUsage::NeverUsed);
        assert!(check_ingredient(&e, &a, 1, &a).is_none());
    }

    #[test]
    fn unknown_policy_names() {
        let (p, _) = setup(TWO);
        let mut cfg = PolicyConfig::default();
        cfg.secret.insert((Label::new("a"), 9));
        assert_eq!(validate(&p, &cfg), Err(PolicyError::UnknownSensor(Label::new("a"), 9)));
    }
}
