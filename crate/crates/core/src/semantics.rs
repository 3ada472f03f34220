//! Reference interpreter: the two-level reduction relation with an
//! instrumented store that pairs every value with its provenance tree.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ast::*;
use crate::treegram::ProvTree;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum ConcreteValue {
    Int(i64),
    Bool(bool),
    Atom(Name),
    Str(String),
    Tuple(Vec<ConcreteValue>),
    Cipher { payload: Vec<ConcreteValue>, key: Name },
}

impl From<&Literal> for ConcreteValue {
    fn from(v: &Literal) -> Self {
        match v {
            Literal::Int(n) => ConcreteValue::Int(*n),
            Literal::Bool(b) => ConcreteValue::Bool(*b),
            Literal::Str(s) => ConcreteValue::Str(s.clone()),
            Literal::Atom(a) => ConcreteValue::Atom(a.clone()),
        }
    }
}

impl fmt::Display for ConcreteValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let list = |xs: &[ConcreteValue]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        match self {
            ConcreteValue::Int(n) => write!(f, "{n}"),
            ConcreteValue::Bool(b) => write!(f, "{b}"),
            ConcreteValue::Atom(a) => write!(f, "{a}"),
            ConcreteValue::Str(s) => write!(f, "{s:?}"),
            ConcreteValue::Tuple(xs) => write!(f, "<{}>", list(xs)),
            ConcreteValue::Cipher { payload, key } => write!(f, "{{{}}}_{key}", list(payload)),
        }
    }
}

impl ConcreteValue {
    fn has_cipher(&self) -> bool {
        matches!(self, ConcreteValue::Cipher { .. })
    }
}

/// An instrumented value: concrete part and provenance tree.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TV {
    pub value: ConcreteValue,
    pub tree: Arc<ProvTree>,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "name", rename_all = "lowercase")]
pub enum Location {
    Var(Name),
    Sensor(SensorId),
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Var(x) => write!(f, "{x}"),
            Location::Sensor(i) => write!(f, "#{i}"),
        }
    }
}

/// Fixed domain; `None` is the undefined value.
pub type InstrumentedStore = BTreeMap<Location, Option<TV>>;

pub fn empty_store(node: &Node) -> InstrumentedStore {
    let mut s = InstrumentedStore::new();
    for x in node.variables() {
        s.insert(Location::Var(x), None);
    }
    for i in node.sensors() {
        s.insert(Location::Sensor(i), None);
    }
    s
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("read of undefined location {0}")]
    Undefined(Location),
    #[error("unknown function {0}")]
    UnknownFunction(Name),
    #[error("evaluation of {0} failed: {1}")]
    Failure(Name, String),
}

/// What the evaluator needs besides the store.
pub struct EvalCtx<'a> {
    pub funs: &'a FunTable,
    pub cameras: &'a BTreeSet<(Label, SensorId)>,
}

fn opaque(f: &Name, args: Vec<ConcreteValue>) -> ConcreteValue {
    let mut xs = vec![ConcreteValue::Atom(f.clone())];
    xs.extend(args);
    ConcreteValue::Tuple(xs)
}

/// Applies `f` to concrete arguments. `trees` is only consulted by the
/// camera predicate.
fn apply_fun(
    ctx: &EvalCtx<'_>,
    f: &Name,
    args: Vec<ConcreteValue>,
    trees: &[Arc<ProvTree>],
) -> Result<ConcreteValue, EvalError> {
    use ConcreteValue as C;
    let sig = ctx.funs.get(f).ok_or_else(|| EvalError::UnknownFunction(f.clone()))?;
    if let Some(n) = sig.arity {
        if n != args.len() {
            return Err(EvalError::Failure(f.clone(), format!("expected {n} arguments")));
        }
    }
    let b = match sig.eval {
        EvalTag::Uninterpreted => return Ok(opaque(f, args)),
        EvalTag::IsACar => {
            let mut leaves = BTreeSet::new();
            trees.iter().for_each(|t| t.sensor_leaves(&mut leaves));
            return Ok(C::Bool(leaves.iter().any(|s| ctx.cameras.contains(s))));
        }
        EvalTag::Builtin(b) => b,
    };
    if b != Builtin::Tuple && b != Builtin::Id && args.iter().any(C::has_cipher) {
        return Ok(opaque(f, args));
    }
    let overflow = || EvalError::Failure(f.clone(), "integer overflow".into());
    Ok(match (b, args.as_slice()) {
        (Builtin::Add, [C::Int(a), C::Int(b)]) => C::Int(a.checked_add(*b).ok_or_else(overflow)?),
        (Builtin::Sub, [C::Int(a), C::Int(b)]) => C::Int(a.checked_sub(*b).ok_or_else(overflow)?),
        (Builtin::Mul, [C::Int(a), C::Int(b)]) => C::Int(a.checked_mul(*b).ok_or_else(overflow)?),
        (Builtin::Ge, [C::Int(a), C::Int(b)]) => C::Bool(a >= b),
        (Builtin::Eq, [a, b]) => C::Bool(a == b),
        (Builtin::And, [C::Bool(a), C::Bool(b)]) => C::Bool(*a && *b),
        (Builtin::Or, [C::Bool(a), C::Bool(b)]) => C::Bool(*a || *b),
        (Builtin::Tuple, _) => C::Tuple(args),
        (Builtin::Id, [a]) => a.clone(),
        _ => opaque(f, args),
    })
}

/// The instrumented denotational semantics of terms.
pub fn eval_term(e: &Term, store: &InstrumentedStore, l: &Label, ctx: &EvalCtx<'_>) -> Result<TV, EvalError> {
    match e {
        Term::Value(v) => Ok(TV {
            value: v.into(),
            tree: Arc::new(ProvTree::Value { value: v.clone(), label: l.clone() }),
        }),
        Term::SensorLoc(i) => read(store, Location::Sensor(*i)),
        Term::Var(x) => read(store, Location::Var(x.clone())),
        Term::App(f, args) => {
            let tvs = args.iter().map(|a| eval_term(a, store, l, ctx)).collect::<Result<Vec<_>, _>>()?;
            let trees: Vec<Arc<ProvTree>> = tvs.iter().map(|t| t.tree.clone()).collect();
            let value = apply_fun(ctx, f, tvs.into_iter().map(|t| t.value).collect(), &trees)?;
            Ok(TV { value, tree: Arc::new(ProvTree::Fun { name: f.clone(), label: l.clone(), children: trees }) })
        }
        Term::Enc(args, k) => {
            let tvs = args.iter().map(|a| eval_term(a, store, l, ctx)).collect::<Result<Vec<_>, _>>()?;
            let trees = tvs.iter().map(|t| t.tree.clone()).collect();
            Ok(TV {
                value: ConcreteValue::Cipher { payload: tvs.into_iter().map(|t| t.value).collect(), key: k.clone() },
                tree: Arc::new(ProvTree::Enc { label: l.clone(), children: trees, key: k.clone() }),
            })
        }
    }
}

fn read(store: &InstrumentedStore, loc: Location) -> Result<TV, EvalError> {
    match store.get(&loc) {
        Some(Some(tv)) => Ok(tv.clone()),
        _ => Err(EvalError::Undefined(loc)),
    }
}

/// Uninstrumented evaluator over plain stores. The camera predicate needs
/// provenance and is not supported here.
pub fn eval_plain(
    e: &Term,
    store: &BTreeMap<Location, Option<ConcreteValue>>,
    ctx: &EvalCtx<'_>,
) -> Result<ConcreteValue, EvalError> {
    let get = |loc: Location| match store.get(&loc) {
        Some(Some(v)) => Ok(v.clone()),
        _ => Err(EvalError::Undefined(loc)),
    };
    match e {
        Term::Value(v) => Ok(v.into()),
        Term::SensorLoc(i) => get(Location::Sensor(*i)),
        Term::Var(x) => get(Location::Var(x.clone())),
        Term::App(f, args) => {
            let vs = args.iter().map(|a| eval_plain(a, store, ctx)).collect::<Result<Vec<_>, _>>()?;
            apply_fun(ctx, f, vs, &[])
        }
        Term::Enc(args, k) => {
            let vs = args.iter().map(|a| eval_plain(a, store, ctx)).collect::<Result<Vec<_>, _>>()?;
            Ok(ConcreteValue::Cipher { payload: vs, key: k.clone() })
        }
    }
}

// ---------------------------------------------------------------------------
// Configurations

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum CompState {
    Store,
    Proc(P),
    Sensor(Arc<SensorBody>, SensorId),
    Actuator(Arc<ActuatorBody>, ActuatorId),
}

/// A spawned `<<v1..vr>> : L . 0`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PendingOut {
    pub values: Vec<TV>,
    pub targets: BTreeSet<Label>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct NodeState {
    pub label: Label,
    pub store: InstrumentedStore,
    pub comps: Vec<CompState>,
    /// kept sorted, so that parallel composition is order-insensitive
    pub pending: Vec<PendingOut>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Configuration {
    pub nodes: Vec<NodeState>,
    /// script position of every sensor
    pub cursors: BTreeMap<(Label, SensorId), usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent {
    Sensed { node: Label, sensor: SensorId, value: TV },
    Assigned { node: Label, var: Name, value: TV },
    Evaluated { node: Label, terms: Vec<(Term, TV)> },
    MsgSent { from: Label, values: Vec<TV>, targets: BTreeSet<Label> },
    MsgDelivered { from: Label, to: Label, values: Vec<TV>, bindings: Vec<(Name, TV)> },
    ActTriggered { node: Label, actuator: ActuatorId, action: Name },
    Actuated { node: Label, actuator: ActuatorId, action: Name },
    CondTaken { node: Label, branch: bool },
    Decrypted { node: Label, bindings: Vec<(Name, TV)> },
    Internal { node: Label, component: usize },
    Phys,
}

/// Evaluated terms and bindings of a decryption.
type Decryption = (Vec<(Term, TV)>, Vec<(Name, TV)>);

/// One enabled reduction. Ordered by node, then component, then rule.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Redex {
    Local { node: usize, comp: usize, rule: Rule },
    Com { node: usize, comp: usize, sender: usize, pending: usize },
    ACom { node: usize, comp: usize, actuator: usize },
    Phys,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Rule {
    Act,
    Asgm,
    Cond,
    Decrypt,
    EvOut,
    Int,
    Sense,
}

#[derive(Default)]
struct CompEnv {
    procs: BTreeMap<Name, P>,
    sensors: BTreeMap<Name, Arc<SensorBody>>,
    acts: BTreeMap<Name, Arc<ActuatorBody>>,
}

const DEFAULT_SCRIPT: [Literal; 1] = [Literal::Int(0)];

/// The static part of a run: the program, iteration bindings and options.
pub struct Machine {
    pub prog: Arc<Program>,
    envs: Vec<Vec<CompEnv>>,
    /// whether (Phys) is offered to the scheduler
    pub phys: bool,
}

impl Machine {
    pub fn new(prog: &Program) -> Self {
        let envs = prog
            .system
            .nodes
            .iter()
            .map(|n| {
                n.components
                    .iter()
                    .map(|c| {
                        let mut env = CompEnv::default();
                        match c {
                            Component::Proc(p) => process_bindings(&Arc::new(p.clone()), &mut env.procs),
                            Component::Sensor(s, _) => sensor_bindings(&Arc::new(s.clone()), &mut env.sensors),
                            Component::Actuator(a, _) => {
                                actuator_bindings(&Arc::new(a.clone()), &mut env.acts)
                            }
                            Component::Store(_) => {}
                        }
                        env
                    })
                    .collect()
            })
            .collect();
        Machine { prog: Arc::new(prog.clone()), envs, phys: false }
    }

    pub fn with_phys(mut self, on: bool) -> Self {
        self.phys = on;
        self
    }

    fn ctx(&self) -> EvalCtx<'_> {
        EvalCtx { funs: &self.prog.funs, cameras: &self.prog.cameras }
    }

    pub fn initial(&self) -> Configuration {
        let mut cursors = BTreeMap::new();
        let nodes = self
            .prog
            .system
            .nodes
            .iter()
            .enumerate()
            .map(|(ni, n)| {
                let comps = n
                    .components
                    .iter()
                    .enumerate()
                    .map(|(ci, c)| match c {
                        Component::Store(_) => CompState::Store,
                        Component::Proc(p) => CompState::Proc(self.norm_proc(ni, ci, Arc::new(p.clone()))),
                        Component::Sensor(s, i) => {
                            cursors.insert((n.label.clone(), *i), 0);
                            CompState::Sensor(self.norm_sensor(ni, ci, Arc::new(s.clone())), *i)
                        }
                        Component::Actuator(a, j) => {
                            CompState::Actuator(self.norm_act(ni, ci, Arc::new(a.clone())), *j)
                        }
                    })
                    .collect();
                NodeState { label: n.label.clone(), store: empty_store(n), comps, pending: Vec::new() }
            })
            .collect();
        Configuration { nodes, cursors }
    }

    // Lazy unfolding: iteration constructs are stripped until a prefix
    // shows up. A body that loops without a prefix behaves as 0.
    fn norm_proc(&self, n: usize, c: usize, mut p: P) -> P {
        for _ in 0..64 {
            match &*p {
                Process::Iter(_, b) => p = b.clone(),
                Process::IterVar(h) => match self.envs[n][c].procs.get(h) {
                    Some(b) => p = b.clone(),
                    None => break,
                },
                _ => return p,
            }
        }
        Arc::new(Process::Nil)
    }

    fn norm_sensor(&self, n: usize, c: usize, mut s: Arc<SensorBody>) -> Arc<SensorBody> {
        for _ in 0..64 {
            match &*s {
                SensorBody::Iter(_, b) => s = b.clone(),
                SensorBody::IterVar(h) => match self.envs[n][c].sensors.get(h) {
                    Some(b) => s = b.clone(),
                    None => break,
                },
                _ => return s,
            }
        }
        Arc::new(SensorBody::Nil)
    }

    fn norm_act(&self, n: usize, c: usize, mut a: Arc<ActuatorBody>) -> Arc<ActuatorBody> {
        for _ in 0..64 {
            match &*a {
                ActuatorBody::Iter(_, b) => a = b.clone(),
                ActuatorBody::IterVar(h) => match self.envs[n][c].acts.get(h) {
                    Some(b) => a = b.clone(),
                    None => break,
                },
                _ => return a,
            }
        }
        Arc::new(ActuatorBody::Nil)
    }

    fn script(&self, l: &Label, i: SensorId) -> (&[Literal], ScriptMode) {
        match self.prog.scripts.get(&(l.clone(), i)) {
            Some(s) => (&s.values, s.mode),
            None => (&DEFAULT_SCRIPT, ScriptMode::Cycle),
        }
    }

    /// The value measured at the cursor, and the cursor after the read.
    fn measure(&self, l: &Label, i: SensorId, cursor: usize) -> Option<(Literal, usize)> {
        let (vals, mode) = self.script(l, i);
        let pos = match mode {
            ScriptMode::Cycle => cursor % vals.len(),
            ScriptMode::Hold => cursor.min(vals.len() - 1),
            ScriptMode::Stuck if cursor < vals.len() => cursor,
            ScriptMode::Stuck => return None,
        };
        Some((vals[pos].clone(), self.advance(l, i, cursor)))
    }

    fn advance(&self, l: &Label, i: SensorId, cursor: usize) -> usize {
        let (vals, mode) = self.script(l, i);
        match mode {
            ScriptMode::Cycle => (cursor + 1) % vals.len(),
            ScriptMode::Hold => (cursor + 1).min(vals.len() - 1),
            ScriptMode::Stuck => (cursor + 1).min(vals.len()),
        }
    }

    fn phys_cursors(&self, c: &Configuration) -> BTreeMap<(Label, SensorId), usize> {
        c.cursors.iter().map(|((l, i), k)| ((l.clone(), *i), self.advance(l, *i, *k))).collect()
    }

    /// All enabled redexes in their stable order.
    pub fn enabled(&self, c: &Configuration) -> Vec<Redex> {
        let mut out = Vec::new();
        let ctx = self.ctx();
        for (ni, n) in c.nodes.iter().enumerate() {
            for (ci, comp) in n.comps.iter().enumerate() {
                match comp {
                    CompState::Store => {}
                    CompState::Sensor(s, i) => match &**s {
                        SensorBody::Tau(_) => out.push(Redex::Local { node: ni, comp: ci, rule: Rule::Int }),
                        SensorBody::Probe(_, _) => {
                            let cur = c.cursors.get(&(n.label.clone(), *i)).copied().unwrap_or(0);
                            if self.measure(&n.label, *i, cur).is_some() {
                                out.push(Redex::Local { node: ni, comp: ci, rule: Rule::Sense });
                            }
                        }
                        _ => {}
                    },
                    CompState::Actuator(a, _) => match &**a {
                        ActuatorBody::Tau(_) => out.push(Redex::Local { node: ni, comp: ci, rule: Rule::Int }),
                        ActuatorBody::Triggered(_, _) => {
                            out.push(Redex::Local { node: ni, comp: ci, rule: Rule::Act })
                        }
                        _ => {}
                    },
                    CompState::Proc(p) => self.proc_redexes(c, ni, ci, p, &ctx, &mut out),
                }
            }
        }
        if self.phys && self.phys_cursors(c) != c.cursors {
            out.push(Redex::Phys);
        }
        out
    }

    fn proc_redexes(&self, c: &Configuration, ni: usize, ci: usize, p: &P, ctx: &EvalCtx<'_>, out: &mut Vec<Redex>) {
        let n = &c.nodes[ni];
        let ok = |t: &Term| eval_term(t, &n.store, &n.label, ctx).is_ok();
        let local = |rule| Redex::Local { node: ni, comp: ci, rule };
        match &**p {
            Process::Assign { rhs, .. } if ok(rhs) => out.push(local(Rule::Asgm)),
            Process::MultiOut { terms, .. } if terms.iter().all(ok) => out.push(local(Rule::EvOut)),
            Process::Cond { guard, .. } => {
                if let Ok(TV { value: ConcreteValue::Bool(_), .. }) = eval_term(guard, &n.store, &n.label, ctx) {
                    out.push(local(Rule::Cond));
                }
            }
            Process::Decrypt { .. } => {
                if self.try_decrypt(n, p, ctx).is_some() {
                    out.push(local(Rule::Decrypt));
                }
            }
            Process::ActCmd { actuator, action, .. } => {
                for (ai, comp) in n.comps.iter().enumerate() {
                    if let CompState::Actuator(a, j) = comp {
                        if let ActuatorBody::Await(j2, gs, _) = &**a {
                            if j == actuator && j2 == actuator && gs.contains(action) {
                                out.push(Redex::ACom { node: ni, comp: ci, actuator: ai });
                            }
                        }
                    }
                }
            }
            Process::Input { matches, binders, .. } => {
                for (si, sender) in c.nodes.iter().enumerate() {
                    if si == ni || !self.prog.comp.allows(&sender.label, &n.label) {
                        continue;
                    }
                    for (pi, po) in sender.pending.iter().enumerate() {
                        if po.targets.contains(&n.label)
                            && po.values.len() == matches.len() + binders.len()
                            && self.matches_ok(n, matches, &po.values, ctx)
                        {
                            out.push(Redex::Com { node: ni, comp: ci, sender: si, pending: pi });
                        }
                    }
                }
            }
            _ => {}
        }
    }

    fn matches_ok(&self, n: &NodeState, ms: &[Term], vs: &[TV], ctx: &EvalCtx<'_>) -> bool {
        ms.iter().zip(vs).all(|(m, v)| match eval_term(m, &n.store, &n.label, ctx) {
            Ok(tv) => tv.value == v.value,
            Err(_) => false,
        })
    }

    /// Evaluated subject and matched terms, plus the bindings, if the
    /// decryption applies.
    fn try_decrypt(&self, n: &NodeState, p: &P, ctx: &EvalCtx<'_>) -> Option<Decryption> {
        let Process::Decrypt { subject, matches, binders, key, .. } = &**p else { return None };
        let s = eval_term(subject, &n.store, &n.label, ctx).ok()?;
        let ConcreteValue::Cipher { payload, key: k2 } = &s.value else { return None };
        let ProvTree::Enc { children, key: k3, .. } = &*s.tree else { return None };
        if k2 != key || k3 != key || payload.len() != matches.len() + binders.len() || children.len() != payload.len() {
            return None;
        }
        let mut evaluated = vec![(subject.clone(), s.clone())];
        for (m, v) in matches.iter().zip(payload) {
            let tv = eval_term(m, &n.store, &n.label, ctx).ok()?;
            if &tv.value != v {
                return None;
            }
            evaluated.push((m.clone(), tv));
        }
        let j = matches.len();
        let bindings = binders
            .iter()
            .enumerate()
            .map(|(i, x)| (x.clone(), TV { value: payload[j + i].clone(), tree: children[j + i].clone() }))
            .collect();
        Some((evaluated, bindings))
    }

    /// Applies one enabled redex. Returns `None` if it is not enabled.
    pub fn step(&self, c: &Configuration, r: &Redex) -> Option<(Configuration, Vec<TraceEvent>)> {
        let ctx = self.ctx();
        let mut c2 = c.clone();
        let mut ev = Vec::new();
        match r {
            Redex::Phys => {
                let cur = self.phys_cursors(c);
                if cur == c.cursors || !self.phys {
                    return None;
                }
                c2.cursors = cur;
                ev.push(TraceEvent::Phys);
            }
            Redex::Local { node, comp, rule } => {
                let n = &mut c2.nodes[*node];
                let label = n.label.clone();
                match (rule, n.comps[*comp].clone()) {
                    (Rule::Int, CompState::Sensor(s, i)) => {
                        let SensorBody::Tau(k) = &*s else { return None };
                        n.comps[*comp] = CompState::Sensor(self.norm_sensor(*node, *comp, k.clone()), i);
                        ev.push(TraceEvent::Internal { node: label, component: *comp });
                    }
                    (Rule::Int, CompState::Actuator(a, j)) => {
                        let ActuatorBody::Tau(k) = &*a else { return None };
                        n.comps[*comp] = CompState::Actuator(self.norm_act(*node, *comp, k.clone()), j);
                        ev.push(TraceEvent::Internal { node: label, component: *comp });
                    }
                    (Rule::Act, CompState::Actuator(a, j)) => {
                        let ActuatorBody::Triggered(g, k) = &*a else { return None };
                        n.comps[*comp] = CompState::Actuator(self.norm_act(*node, *comp, k.clone()), j);
                        ev.push(TraceEvent::Actuated { node: label, actuator: j, action: g.clone() });
                    }
                    (Rule::Sense, CompState::Sensor(s, i)) => {
                        let SensorBody::Probe(_, k) = &*s else { return None };
                        let key = (label.clone(), i);
                        let cur = c2.cursors.get(&key).copied().unwrap_or(0);
                        let (v, next) = self.measure(&label, i, cur)?;
                        c2.cursors.insert(key, next);
                        let n = &mut c2.nodes[*node];
                        let tv = TV { value: (&v).into(), tree: Arc::new(ProvTree::Sensor { id: i, label: label.clone() }) };
                        n.store.insert(Location::Sensor(i), Some(tv.clone()));
                        n.comps[*comp] = CompState::Sensor(self.norm_sensor(*node, *comp, k.clone()), i);
                        ev.push(TraceEvent::Sensed { node: label, sensor: i, value: tv });
                    }
                    (Rule::Asgm, CompState::Proc(p)) => {
                        let Process::Assign { var, rhs, cont } = &*p else { return None };
                        let tv = eval_term(rhs, &n.store, &label, &ctx).ok()?;
                        n.store.insert(Location::Var(var.clone()), Some(tv.clone()));
                        n.comps[*comp] = CompState::Proc(self.norm_proc(*node, *comp, cont.clone()));
                        ev.push(TraceEvent::Evaluated { node: label.clone(), terms: vec![(rhs.clone(), tv.clone())] });
                        ev.push(TraceEvent::Assigned { node: label, var: var.clone(), value: tv });
                    }
                    (Rule::EvOut, CompState::Proc(p)) => {
                        let Process::MultiOut { terms, targets, cont } = &*p else { return None };
                        let tvs = terms
                            .iter()
                            .map(|t| eval_term(t, &n.store, &label, &ctx))
                            .collect::<Result<Vec<_>, _>>()
                            .ok()?;
                        n.comps[*comp] = CompState::Proc(self.norm_proc(*node, *comp, cont.clone()));
                        if !targets.is_empty() {
                            n.pending.push(PendingOut { values: tvs.clone(), targets: targets.clone() });
                            n.pending.sort();
                        }
                        ev.push(TraceEvent::Evaluated {
                            node: label.clone(),
                            terms: terms.iter().cloned().zip(tvs.iter().cloned()).collect(),
                        });
                        ev.push(TraceEvent::MsgSent { from: label, values: tvs, targets: targets.clone() });
                    }
                    (Rule::Cond, CompState::Proc(p)) => {
                        let Process::Cond { guard, then_p, else_p } = &*p else { return None };
                        let tv = eval_term(guard, &n.store, &label, &ctx).ok()?;
                        let ConcreteValue::Bool(b) = tv.value else { return None };
                        let next = if b { then_p } else { else_p };
                        n.comps[*comp] = CompState::Proc(self.norm_proc(*node, *comp, next.clone()));
                        ev.push(TraceEvent::Evaluated { node: label.clone(), terms: vec![(guard.clone(), tv)] });
                        ev.push(TraceEvent::CondTaken { node: label, branch: b });
                    }
                    (Rule::Decrypt, CompState::Proc(p)) => {
                        let Process::Decrypt { cont, .. } = &*p else { return None };
                        let (evaluated, bindings) = self.try_decrypt(n, &p, &ctx)?;
                        for (x, tv) in &bindings {
                            n.store.insert(Location::Var(x.clone()), Some(tv.clone()));
                        }
                        n.comps[*comp] = CompState::Proc(self.norm_proc(*node, *comp, cont.clone()));
                        ev.push(TraceEvent::Evaluated { node: label.clone(), terms: evaluated });
                        ev.push(TraceEvent::Decrypted { node: label, bindings });
                    }
                    _ => return None,
                }
            }
            Redex::ACom { node, comp, actuator } => {
                let n = &mut c2.nodes[*node];
                let CompState::Proc(p) = n.comps[*comp].clone() else { return None };
                let Process::ActCmd { actuator: j, action, cont } = &*p else { return None };
                let CompState::Actuator(a, j2) = n.comps[*actuator].clone() else { return None };
                let ActuatorBody::Await(j3, gs, k) = &*a else { return None };
                if j2 != *j || j3 != j || !gs.contains(action) {
                    return None;
                }
                n.comps[*actuator] =
                    CompState::Actuator(Arc::new(ActuatorBody::Triggered(action.clone(), k.clone())), j2);
                n.comps[*comp] = CompState::Proc(self.norm_proc(*node, *comp, cont.clone()));
                ev.push(TraceEvent::ActTriggered { node: n.label.clone(), actuator: *j, action: action.clone() });
            }
            Redex::Com { node, comp, sender, pending } => {
                if node == sender {
                    return None;
                }
                let from = c.nodes[*sender].label.clone();
                let to = c.nodes[*node].label.clone();
                let po = c.nodes[*sender].pending.get(*pending)?.clone();
                if !po.targets.contains(&to) || !self.prog.comp.allows(&from, &to) {
                    return None;
                }
                let n = &mut c2.nodes[*node];
                let CompState::Proc(p) = n.comps[*comp].clone() else { return None };
                let Process::Input { matches, binders, cont } = &*p else { return None };
                if po.values.len() != matches.len() + binders.len() || !self.matches_ok(n, matches, &po.values, &ctx) {
                    return None;
                }
                if !matches.is_empty() {
                    let terms = matches
                        .iter()
                        .map(|m| eval_term(m, &n.store, &to, &ctx).map(|tv| (m.clone(), tv)))
                        .collect::<Result<Vec<_>, _>>()
                        .ok()?;
                    ev.push(TraceEvent::Evaluated { node: to.clone(), terms });
                }
                let j = matches.len();
                let bindings: Vec<(Name, TV)> =
                    binders.iter().enumerate().map(|(i, x)| (x.clone(), po.values[j + i].clone())).collect();
                for (x, tv) in &bindings {
                    n.store.insert(Location::Var(x.clone()), Some(tv.clone()));
                }
                n.comps[*comp] = CompState::Proc(self.norm_proc(*node, *comp, cont.clone()));
                let s = &mut c2.nodes[*sender];
                let mut po2 = po.clone();
                po2.targets.remove(&to);
                s.pending.remove(*pending);
                if !po2.targets.is_empty() {
                    s.pending.push(po2);
                    s.pending.sort();
                }
                ev.push(TraceEvent::MsgDelivered { from, to, values: po.values, bindings });
            }
        }
        Some((c2, ev))
    }
}

// ---------------------------------------------------------------------------
// Runs and exploration

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopReason {
    Budget,
    Stuck,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    /// events grouped by reduction step
    pub steps: Vec<Vec<TraceEvent>>,
    pub last: Configuration,
    pub reason: StopReason,
}

impl RunResult {
    pub fn trace(&self) -> Vec<TraceEvent> {
        self.steps.iter().flatten().cloned().collect()
    }
}

impl Redex {
    /// The node that performs the step; `None` for the global clock tick.
    pub fn node(&self) -> Option<usize> {
        match self {
            Redex::Local { node, .. } | Redex::Com { node, .. } | Redex::ACom { node, .. } => Some(*node),
            Redex::Phys => None,
        }
    }
}

/// Seeded scheduler: a uniform choice among the nodes that can move (the
/// clock counts as one more), then a uniform choice among that node's
/// redexes. Picking nodes first keeps sensor-heavy nodes from starving
/// the others.
pub fn run(m: &Machine, c0: &Configuration, seed: u64, max_steps: usize) -> RunResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = c0.clone();
    let mut steps = Vec::new();
    while steps.len() < max_steps {
        let rs = m.enabled(&c);
        if rs.is_empty() {
            return RunResult { steps, last: c, reason: StopReason::Stuck };
        }
        let groups: Vec<Option<usize>> = rs.iter().map(Redex::node).collect::<BTreeSet<_>>().into_iter().collect();
        let g = groups[rng.gen_range(0..groups.len())];
        let mine: Vec<&Redex> = rs.iter().filter(|r| r.node() == g).collect();
        let r = mine[rng.gen_range(0..mine.len())];
        let (c2, ev) = m.step(&c, r).expect("enabled redex must step");
        c = c2;
        steps.push(ev);
    }
    let reason = if m.enabled(&c).is_empty() { StopReason::Stuck } else { StopReason::Budget };
    RunResult { steps, last: c, reason }
}

pub const DEFAULT_STATE_CAP: usize = 100_000;

#[derive(Clone, Debug)]
pub struct Exploration {
    pub configs: Vec<Configuration>,
    /// (source, events, target) indices into `configs`
    pub transitions: Vec<(usize, Vec<TraceEvent>, usize)>,
    pub truncated: bool,
}

/// Breadth-first closure under `step` up to `depth` reductions.
pub fn explore(m: &Machine, c0: &Configuration, depth: usize, cap: usize) -> Exploration {
    let mut index: HashMap<Configuration, usize> = HashMap::new();
    let mut configs = vec![c0.clone()];
    index.insert(c0.clone(), 0);
    let mut transitions = Vec::new();
    let mut queue = VecDeque::from([(0usize, 0usize)]);
    let mut truncated = false;
    while let Some((i, d)) = queue.pop_front() {
        if d == depth {
            continue;
        }
        let c = configs[i].clone();
        for r in m.enabled(&c) {
            let Some((c2, ev)) = m.step(&c, &r) else { continue };
            let j = match index.get(&c2) {
                Some(j) => *j,
                None => {
                    if configs.len() >= cap {
                        truncated = true;
                        continue;
                    }
                    let j = configs.len();
                    index.insert(c2.clone(), j);
                    configs.push(c2);
                    queue.push_back((j, d + 1));
                    j
                }
            };
            transitions.push((i, ev, j));
        }
    }
    Exploration { configs, transitions, truncated }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_program;

    fn machine(src: &str) -> Machine {
        Machine::new(&parse_program(src).unwrap())
    }

    #[test]
    fn value_evaluation() {
        let prog = Program::default();
        let ctx = EvalCtx { funs: &prog.funs, cameras: &prog.cameras };
        let l = Label::new("n");
        let tv = eval_term(&Term::Value(Literal::Int(7)), &InstrumentedStore::new(), &l, &ctx).unwrap();
        assert_eq!(tv.value, ConcreteValue::Int(7));
        assert_eq!(*tv.tree, ProvTree::Value { value: Literal::Int(7), label: l });
    }

    #[test]
    fn nil_system_has_one_state() {
        let m = machine("system { }");
        let e = explore(&m, &m.initial(), 5, 100);
        assert_eq!(e.configs.len(), 1);
    }

    #[test]
    fn single_assignment() {
        let m = machine("system { node n { store proc x := 1. 0 } }");
        let e = explore(&m, &m.initial(), 5, 100);
        assert_eq!(e.configs.len(), 2);
        assert_eq!(run(&m, &m.initial(), 1, 0).steps.len(), 0);
    }

    #[test]
    fn overflow_is_not_enabled() {
        let m = machine("system { node n { store proc x := 9223372036854775807 + 1. 0 } }");
        assert!(m.enabled(&m.initial()).is_empty());
    }

    #[test]
    fn action_outside_gamma_not_enabled() {
        let m = machine("system { node n { store proc act(1, off). 0 actuator 1: (|1, {on}|). 0 } }");
        assert!(m.enabled(&m.initial()).is_empty());
        let m = machine("system { node n { store proc act(1, on). 0 actuator 1: (|1, {on}|). 0 } }");
        assert_eq!(m.enabled(&m.initial()).len(), 1);
    }

    #[test]
    fn cipher_is_opaque_to_functions() {
        let prog = Program::default();
        let ctx = EvalCtx { funs: &prog.funs, cameras: &prog.cameras };
        let c = ConcreteValue::Cipher { payload: vec![ConcreteValue::Int(1)], key: name("k") };
        let v = apply_fun(&ctx, &name("eq"), vec![c.clone(), c.clone()], &[]).unwrap();
        assert!(matches!(v, ConcreteValue::Tuple(_)));
    }
}
