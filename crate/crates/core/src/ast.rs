//! Abstract syntax of IoT-LySa systems.
//!
//! A [`Program`] bundles a [`System`] with the declarations that make a
//! source file self-contained: function signatures, keys, atoms, the
//! compatibility relation, sensor scripts and the policy configuration.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// Interned identifier.
pub type Name = Arc<str>;

pub fn name(s: &str) -> Name {
    Arc::from(s)
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label(pub Name);

impl Label {
    pub fn new(s: &str) -> Self {
        Label(name(s))
    }
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub type SensorId = u32;
pub type ActuatorId = u32;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum Literal {
    Int(i64),
    Bool(bool),
    Str(String),
    Atom(Name),
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Int(n) => write!(f, "{n}"),
            Literal::Bool(b) => write!(f, "{b}"),
            Literal::Str(s) => write!(f, "{s:?}"),
            Literal::Atom(a) => f.write_str(a),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Term {
    Value(Literal),
    SensorLoc(SensorId),
    Var(Name),
    App(Name, Vec<Term>),
    Enc(Vec<Term>, Name),
}

impl Term {
    pub fn var(s: &str) -> Term {
        Term::Var(name(s))
    }
    pub fn app(f: &str, args: Vec<Term>) -> Term {
        Term::App(name(f), args)
    }
    pub fn atom(s: &str) -> Term {
        Term::Value(Literal::Atom(name(s)))
    }

    /// Variables read by the term.
    pub fn vars(&self, out: &mut BTreeSet<Name>) {
        match self {
            Term::Var(x) => {
                out.insert(x.clone());
            }
            Term::App(_, args) | Term::Enc(args, _) => args.iter().for_each(|a| a.vars(out)),
            Term::Value(_) | Term::SensorLoc(_) => {}
        }
    }

    pub fn size(&self) -> usize {
        match self {
            Term::App(_, args) | Term::Enc(args, _) => 1 + args.iter().map(Term::size).sum::<usize>(),
            _ => 1,
        }
    }
}

pub type P = Arc<Process>;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Process {
    Nil,
    MultiOut { terms: Vec<Term>, targets: BTreeSet<Label>, cont: P },
    Input { matches: Vec<Term>, binders: Vec<Name>, cont: P },
    Cond { guard: Term, then_p: P, else_p: P },
    IterVar(Name),
    Iter(Name, P),
    Assign { var: Name, rhs: Term, cont: P },
    ActCmd { actuator: ActuatorId, action: Name, cont: P },
    Decrypt { subject: Term, matches: Vec<Term>, binders: Vec<Name>, key: Name, cont: P },
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SensorBody {
    Nil,
    Tau(Arc<SensorBody>),
    Probe(SensorId, Arc<SensorBody>),
    IterVar(Name),
    Iter(Name, Arc<SensorBody>),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActuatorBody {
    Nil,
    Tau(Arc<ActuatorBody>),
    Await(ActuatorId, BTreeSet<Name>, Arc<ActuatorBody>),
    Triggered(Name, Arc<ActuatorBody>),
    IterVar(Name),
    Iter(Name, Arc<ActuatorBody>),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StoreDecl {
    pub vars: Vec<Name>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Component {
    Store(StoreDecl),
    Proc(Process),
    Sensor(SensorBody, SensorId),
    Actuator(ActuatorBody, ActuatorId),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Node {
    pub label: Label,
    pub components: Vec<Component>,
}

impl Node {
    pub fn sensors(&self) -> impl Iterator<Item = SensorId> + '_ {
        self.components.iter().filter_map(|c| match c {
            Component::Sensor(_, i) => Some(*i),
            _ => None,
        })
    }
    pub fn actuators(&self) -> impl Iterator<Item = ActuatorId> + '_ {
        self.components.iter().filter_map(|c| match c {
            Component::Actuator(_, j) => Some(*j),
            _ => None,
        })
    }
    pub fn processes(&self) -> impl Iterator<Item = &Process> + '_ {
        self.components.iter().filter_map(|c| match c {
            Component::Proc(p) => Some(p),
            _ => None,
        })
    }

    /// The store domain X_l: declared variables plus every variable a
    /// process reads or binds.
    pub fn variables(&self) -> BTreeSet<Name> {
        let mut out = BTreeSet::new();
        for c in &self.components {
            match c {
                Component::Store(d) => out.extend(d.vars.iter().cloned()),
                Component::Proc(p) => collect_process_vars(p, &mut out),
                _ => {}
            }
        }
        out
    }
}

fn collect_process_vars(p: &Process, out: &mut BTreeSet<Name>) {
    match p {
        Process::Nil | Process::IterVar(_) => {}
        Process::MultiOut { terms, cont, .. } => {
            terms.iter().for_each(|t| t.vars(out));
            collect_process_vars(cont, out);
        }
        Process::Input { matches, binders, cont } => {
            matches.iter().for_each(|t| t.vars(out));
            out.extend(binders.iter().cloned());
            collect_process_vars(cont, out);
        }
        Process::Cond { guard, then_p, else_p } => {
            guard.vars(out);
            collect_process_vars(then_p, out);
            collect_process_vars(else_p, out);
        }
        Process::Iter(_, body) => collect_process_vars(body, out),
        Process::Assign { var, rhs, cont } => {
            out.insert(var.clone());
            rhs.vars(out);
            collect_process_vars(cont, out);
        }
        Process::ActCmd { cont, .. } => collect_process_vars(cont, out),
        Process::Decrypt { subject, matches, binders, cont, .. } => {
            subject.vars(out);
            matches.iter().for_each(|t| t.vars(out));
            out.extend(binders.iter().cloned());
            collect_process_vars(cont, out);
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct System {
    pub nodes: Vec<Node>,
}

impl System {
    pub fn node(&self, l: &Label) -> Option<&Node> {
        self.nodes.iter().find(|n| &n.label == l)
    }
    pub fn labels(&self) -> BTreeSet<Label> {
        self.nodes.iter().map(|n| n.label.clone()).collect()
    }
    /// Number of AST nodes (processes, terms and components).
    pub fn size(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| {
                1 + n
                    .components
                    .iter()
                    .map(|c| match c {
                        Component::Proc(p) => 1 + process_size(p),
                        _ => 1,
                    })
                    .sum::<usize>()
            })
            .sum()
    }
}

pub fn process_size(p: &Process) -> usize {
    match p {
        Process::Nil | Process::IterVar(_) => 1,
        Process::MultiOut { terms, cont, .. } => {
            1 + terms.iter().map(Term::size).sum::<usize>() + process_size(cont)
        }
        Process::Input { matches, cont, .. } => {
            1 + matches.iter().map(Term::size).sum::<usize>() + process_size(cont)
        }
        Process::Cond { guard, then_p, else_p } => {
            1 + guard.size() + process_size(then_p) + process_size(else_p)
        }
        Process::Iter(_, b) => 1 + process_size(b),
        Process::Assign { rhs, cont, .. } => 1 + rhs.size() + process_size(cont),
        Process::ActCmd { cont, .. } => 1 + process_size(cont),
        Process::Decrypt { subject, matches, cont, .. } => {
            1 + subject.size() + matches.iter().map(Term::size).sum::<usize>() + process_size(cont)
        }
    }
}

/// Number of process constructs (prefixes, conditionals, iterations).
pub fn process_constructs(p: &Process) -> usize {
    match p {
        Process::Nil | Process::IterVar(_) => 0,
        Process::MultiOut { cont, .. }
        | Process::Input { cont, .. }
        | Process::Assign { cont, .. }
        | Process::ActCmd { cont, .. }
        | Process::Decrypt { cont, .. }
        | Process::Iter(_, cont) => 1 + process_constructs(cont),
        Process::Cond { then_p, else_p, .. } => {
            1 + process_constructs(then_p) + process_constructs(else_p)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Builtin {
    Add,
    Sub,
    Mul,
    Eq,
    Ge,
    And,
    Or,
    Tuple,
    Id,
}

impl Builtin {
    pub const ALL: [Builtin; 9] = [
        Builtin::Add,
        Builtin::Sub,
        Builtin::Mul,
        Builtin::Eq,
        Builtin::Ge,
        Builtin::And,
        Builtin::Or,
        Builtin::Tuple,
        Builtin::Id,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Builtin::Add => "add",
            Builtin::Sub => "sub",
            Builtin::Mul => "mul",
            Builtin::Eq => "eq",
            Builtin::Ge => "ge",
            Builtin::And => "and",
            Builtin::Or => "or",
            Builtin::Tuple => "tuple",
            Builtin::Id => "id",
        }
    }

    /// `None` for variadic.
    pub fn arity(self) -> Option<usize> {
        match self {
            Builtin::Tuple => None,
            Builtin::Id => Some(1),
            _ => Some(2),
        }
    }

    pub fn infix(self) -> Option<&'static str> {
        match self {
            Builtin::Add => Some("+"),
            Builtin::Sub => Some("-"),
            Builtin::Mul => Some("*"),
            Builtin::Eq => Some("="),
            Builtin::Ge => Some(">="),
            Builtin::And => Some("&&"),
            Builtin::Or => Some("||"),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalTag {
    Builtin(Builtin),
    /// Builds a tagged record `(f, args...)`.
    Uninterpreted,
    /// Scenario knob: true iff the argument's provenance has a leaf from a
    /// declared camera sensor.
    IsACar,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FunSig {
    pub arity: Option<usize>,
    pub eval: EvalTag,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunTable {
    pub sigs: BTreeMap<Name, FunSig>,
}

impl Default for FunTable {
    fn default() -> Self {
        let sigs = Builtin::ALL
            .iter()
            .map(|b| (name(b.name()), FunSig { arity: b.arity(), eval: EvalTag::Builtin(*b) }))
            .collect();
        FunTable { sigs }
    }
}

impl FunTable {
    pub fn get(&self, f: &str) -> Option<&FunSig> {
        self.sigs.get(f)
    }
    pub fn declare(&mut self, f: &str, arity: usize, eval: EvalTag) {
        self.sigs.insert(name(f), FunSig { arity: Some(arity), eval });
    }
    pub fn is_builtin(&self, f: &str) -> bool {
        matches!(self.get(f), Some(FunSig { eval: EvalTag::Builtin(_), .. }))
            && Builtin::ALL.iter().any(|b| b.name() == f)
    }
}

/// Compatibility predicate over (sender, receiver).
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompRelation {
    All { except: BTreeSet<(Label, Label)> },
    Only(BTreeSet<(Label, Label)>),
}

impl Default for CompRelation {
    fn default() -> Self {
        CompRelation::All { except: BTreeSet::new() }
    }
}

impl CompRelation {
    pub fn allows(&self, from: &Label, to: &Label) -> bool {
        match self {
            CompRelation::All { except } => !except.contains(&(from.clone(), to.clone())),
            CompRelation::Only(s) => s.contains(&(from.clone(), to.clone())),
        }
    }

    pub fn without(&self, edges: &BTreeSet<(Label, Label)>) -> CompRelation {
        match self {
            CompRelation::All { except } => {
                CompRelation::All { except: except.union(edges).cloned().collect() }
            }
            CompRelation::Only(s) => CompRelation::Only(s.difference(edges).cloned().collect()),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScriptMode {
    #[default]
    Cycle,
    Hold,
    Stuck,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Script {
    pub values: Vec<Literal>,
    pub mode: ScriptMode,
}

/// Classification sets and node assignments used by the policy checks.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub secret: BTreeSet<(Label, SensorId)>,
    pub confined: BTreeSet<(Label, SensorId)>,
    pub anonymisers: BTreeSet<Name>,
    pub levels: BTreeMap<Label, i64>,
    pub allowed: Option<BTreeSet<Label>>,
    pub flows: Option<BTreeMap<Label, BTreeSet<Label>>>,
}

impl PolicyConfig {
    pub fn is_empty(&self) -> bool {
        self == &PolicyConfig::default()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Program {
    pub funs: FunTable,
    pub keys: BTreeSet<Name>,
    pub atoms: BTreeSet<Name>,
    pub comp: CompRelation,
    pub scripts: BTreeMap<(Label, SensorId), Script>,
    pub cameras: BTreeSet<(Label, SensorId)>,
    pub policy: PolicyConfig,
    pub system: System,
}

/// Variables read before being bound along some path of `p`.
pub fn free_variables(p: &Process) -> BTreeSet<Name> {
    let mut out = BTreeSet::new();
    fv(p, &BTreeSet::new(), &mut out);
    out
}

fn reads(t: &Term, bound: &BTreeSet<Name>, out: &mut BTreeSet<Name>) {
    let mut vs = BTreeSet::new();
    t.vars(&mut vs);
    out.extend(vs.into_iter().filter(|v| !bound.contains(v)));
}

fn fv(p: &Process, bound: &BTreeSet<Name>, out: &mut BTreeSet<Name>) {
    let with = |extra: &[Name]| {
        let mut b = bound.clone();
        b.extend(extra.iter().cloned());
        b
    };
    match p {
        Process::Nil | Process::IterVar(_) => {}
        Process::MultiOut { terms, cont, .. } => {
            terms.iter().for_each(|t| reads(t, bound, out));
            fv(cont, bound, out);
        }
        Process::Input { matches, binders, cont } => {
            matches.iter().for_each(|t| reads(t, bound, out));
            fv(cont, &with(binders), out);
        }
        Process::Cond { guard, then_p, else_p } => {
            reads(guard, bound, out);
            fv(then_p, bound, out);
            fv(else_p, bound, out);
        }
        Process::Iter(_, body) => fv(body, bound, out),
        Process::Assign { var, rhs, cont } => {
            reads(rhs, bound, out);
            fv(cont, &with(std::slice::from_ref(var)), out);
        }
        Process::ActCmd { cont, .. } => fv(cont, bound, out),
        Process::Decrypt { subject, matches, binders, cont, .. } => {
            reads(subject, bound, out);
            matches.iter().for_each(|t| reads(t, bound, out));
            fv(cont, &with(binders), out);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Diagnostic {
    pub node: Option<Label>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.node {
            Some(l) => write!(f, "node {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Checks the structural invariants of a program. Returns every violation.
pub fn well_formed(prog: &Program) -> Result<(), Vec<Diagnostic>> {
    let mut ds = Vec::new();
    let labels = prog.system.labels();
    let mut seen = BTreeSet::new();
    for n in &prog.system.nodes {
        if !seen.insert(n.label.clone()) {
            ds.push(diag(None, format!("duplicate node label {}", n.label)));
        }
    }
    for n in &prog.system.nodes {
        check_node(prog, n, &labels, &mut ds);
    }
    if ds.is_empty() {
        Ok(())
    } else {
        Err(ds)
    }
}

fn diag(node: Option<&Label>, message: String) -> Diagnostic {
    Diagnostic { node: node.cloned(), message }
}

fn check_node(prog: &Program, n: &Node, labels: &BTreeSet<Label>, ds: &mut Vec<Diagnostic>) {
    let l = Some(&n.label);
    let stores = n.components.iter().filter(|c| matches!(c, Component::Store(_))).count();
    if stores == 0 {
        ds.push(diag(l, "missing store".into()));
    } else if stores > 1 {
        ds.push(diag(l, "duplicate store".into()));
    }
    let mut sensors = BTreeSet::new();
    let mut actuators = BTreeSet::new();
    for c in &n.components {
        match c {
            Component::Sensor(_, i) if !sensors.insert(*i) => {
                ds.push(diag(l, format!("duplicate sensor id {i}")))
            }
            Component::Actuator(_, j) if !actuators.insert(*j) => {
                ds.push(diag(l, format!("duplicate actuator id {j}")))
            }
            _ => {}
        }
    }
    for c in &n.components {
        let mut ck = Checker { prog, node: n, sensors: &sensors, labels, ds, bound_once: BTreeSet::new() };
        match c {
            Component::Store(_) => {}
            Component::Proc(p) => ck.process(p, &mut Vec::new()),
            Component::Sensor(b, i) => ck.sensor(b, *i, &mut Vec::new()),
            Component::Actuator(b, j) => ck.actuator(b, *j, &mut Vec::new()),
        }
    }
}

struct Checker<'a> {
    prog: &'a Program,
    node: &'a Node,
    sensors: &'a BTreeSet<SensorId>,
    labels: &'a BTreeSet<Label>,
    ds: &'a mut Vec<Diagnostic>,
    bound_once: BTreeSet<Name>,
}

impl Checker<'_> {
    fn push(&mut self, m: String) {
        self.ds.push(diag(Some(&self.node.label), m));
    }

    fn bind(&mut self, h: &Name, scope: &mut Vec<Name>) {
        if !self.bound_once.insert(h.clone()) {
            self.push(format!("iteration variable {h} is bound more than once"));
        }
        scope.push(h.clone());
    }

    fn var(&mut self, h: &Name, scope: &[Name]) {
        if !scope.contains(h) {
            self.push(format!("unbound iteration variable {h}"));
        }
    }

    fn term(&mut self, t: &Term) {
        match t {
            Term::Value(_) | Term::Var(_) => {}
            Term::SensorLoc(i) => {
                if !self.sensors.contains(i) {
                    self.push(format!("unknown sensor location #{i}"));
                }
            }
            Term::App(f, args) => {
                match self.prog.funs.get(f) {
                    None => self.push(format!("undeclared function {f}")),
                    Some(sig) => {
                        if let Some(a) = sig.arity {
                            if a != args.len() {
                                self.push(format!(
                                    "arity mismatch for {f}: expected {a}, got {}",
                                    args.len()
                                ));
                            }
                        }
                    }
                }
                args.iter().for_each(|a| self.term(a));
            }
            Term::Enc(args, k) => {
                self.key(k);
                args.iter().for_each(|a| self.term(a));
            }
        }
    }

    fn key(&mut self, k: &Name) {
        if !self.prog.keys.contains(k) {
            self.push(format!("undeclared key {k}"));
        }
    }

    fn process(&mut self, p: &Process, scope: &mut Vec<Name>) {
        match p {
            Process::Nil => {}
            Process::IterVar(h) => self.var(h, scope),
            Process::Iter(h, body) => {
                let depth = scope.len();
                self.bind(h, scope);
                self.process(body, scope);
                scope.truncate(depth);
            }
            Process::MultiOut { terms, targets, cont } => {
                terms.iter().for_each(|t| self.term(t));
                for l in targets {
                    if !self.labels.contains(l) {
                        self.push(format!("unknown target label {l}"));
                    }
                }
                self.process(cont, scope);
            }
            Process::Input { matches, cont, .. } => {
                matches.iter().for_each(|t| self.term(t));
                self.process(cont, scope);
            }
            Process::Cond { guard, then_p, else_p } => {
                self.term(guard);
                self.process(then_p, scope);
                self.process(else_p, scope);
            }
            Process::Assign { rhs, cont, .. } => {
                self.term(rhs);
                self.process(cont, scope);
            }
            Process::ActCmd { cont, .. } => self.process(cont, scope),
            Process::Decrypt { subject, matches, key, cont, .. } => {
                self.term(subject);
                matches.iter().for_each(|t| self.term(t));
                self.key(key);
                self.process(cont, scope);
            }
        }
    }

    fn sensor(&mut self, b: &SensorBody, id: SensorId, scope: &mut Vec<Name>) {
        match b {
            SensorBody::Nil => {}
            SensorBody::Tau(k) => self.sensor(k, id, scope),
            SensorBody::Probe(i, k) => {
                if *i != id {
                    self.push(format!("sensor {id} probes location {i}"));
                }
                self.sensor(k, id, scope)
            }
            SensorBody::IterVar(h) => self.var(h, scope),
            SensorBody::Iter(h, k) => {
                let depth = scope.len();
                self.bind(h, scope);
                self.sensor(k, id, scope);
                scope.truncate(depth);
            }
        }
    }

    fn actuator(&mut self, b: &ActuatorBody, id: ActuatorId, scope: &mut Vec<Name>) {
        match b {
            ActuatorBody::Nil => {}
            ActuatorBody::Tau(k) | ActuatorBody::Triggered(_, k) => self.actuator(k, id, scope),
            ActuatorBody::Await(j, _, k) => {
                if *j != id {
                    self.push(format!("actuator {id} awaits commands for {j}"));
                }
                self.actuator(k, id, scope)
            }
            ActuatorBody::IterVar(h) => self.var(h, scope),
            ActuatorBody::Iter(h, k) => {
                let depth = scope.len();
                self.bind(h, scope);
                self.actuator(k, id, scope);
                scope.truncate(depth);
            }
        }
    }
}

/// Collects iteration bindings h -> body of one component body.
pub fn process_bindings(p: &P, out: &mut BTreeMap<Name, P>) {
    match &**p {
        Process::Iter(h, body) => {
            out.entry(h.clone()).or_insert_with(|| body.clone());
            process_bindings(body, out);
        }
        Process::MultiOut { cont, .. }
        | Process::Input { cont, .. }
        | Process::Assign { cont, .. }
        | Process::ActCmd { cont, .. }
        | Process::Decrypt { cont, .. } => process_bindings(cont, out),
        Process::Cond { then_p, else_p, .. } => {
            process_bindings(then_p, out);
            process_bindings(else_p, out);
        }
        Process::Nil | Process::IterVar(_) => {}
    }
}

pub fn sensor_bindings(b: &Arc<SensorBody>, out: &mut BTreeMap<Name, Arc<SensorBody>>) {
    match &**b {
        SensorBody::Iter(h, k) => {
            out.entry(h.clone()).or_insert_with(|| k.clone());
            sensor_bindings(k, out);
        }
        SensorBody::Tau(k) | SensorBody::Probe(_, k) => sensor_bindings(k, out),
        SensorBody::Nil | SensorBody::IterVar(_) => {}
    }
}

pub fn actuator_bindings(b: &Arc<ActuatorBody>, out: &mut BTreeMap<Name, Arc<ActuatorBody>>) {
    match &**b {
        ActuatorBody::Iter(h, k) => {
            out.entry(h.clone()).or_insert_with(|| k.clone());
            actuator_bindings(k, out);
        }
        ActuatorBody::Tau(k) | ActuatorBody::Await(_, _, k) | ActuatorBody::Triggered(_, k) => {
            actuator_bindings(k, out)
        }
        ActuatorBody::Nil | ActuatorBody::IterVar(_) => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn free_variables_basics() {
        assert!(free_variables(&Process::Nil).is_empty());
        let p = Process::Assign { var: name("x"), rhs: Term::var("y"), cont: Arc::new(Process::Nil) };
        assert_eq!(free_variables(&p), [name("y")].into_iter().collect());
    }

    #[test]
    fn empty_system_is_well_formed() {
        assert!(well_formed(&Program::default()).is_ok());
    }

    #[test]
    fn two_stores_rejected() {
        let mut prog = Program::default();
        prog.system.nodes.push(Node {
            label: Label::new("n"),
            components: vec![Component::Store(StoreDecl::default()), Component::Store(StoreDecl::default())],
        });
        let ds = well_formed(&prog).unwrap_err();
        assert!(ds.iter().any(|d| d.message == "duplicate store"));
    }

    #[test]
    fn comp_without_edges() {
        let c = CompRelation::default();
        let (a, b) = (Label::new("a"), Label::new("b"));
        assert!(c.allows(&a, &b));
        let c2 = c.without(&[(a.clone(), b.clone())].into_iter().collect());
        assert!(!c2.allows(&a, &b));
        assert!(c2.allows(&b, &a));
    }
}
