//! Control flow analysis over tree-grammar abstract values: constraint
//! generation, a worklist solver for the least estimate, an independent
//! validity checker, and a trace auditor.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ast::*;
use crate::semantics::{Location, NodeState, TraceEvent, TV};
use crate::treegram::{extract_decryption, lang_member, AbstractValue, Production, ProvTree, Symbol};

pub type AbstractSet = BTreeSet<AbstractValue>;

/// `(sender, arity)`, one set per message position.
pub type KappaEntries = BTreeMap<(Label, usize), Vec<AbstractSet>>;

/// `(Σ̂, κ, Θ, α)`. Maps are sparse: a missing key is the empty set.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Estimate {
    pub sigma: BTreeMap<Label, BTreeMap<Location, AbstractSet>>,
    /// receiver → entries
    pub kappa: BTreeMap<Label, KappaEntries>,
    pub theta: BTreeMap<Label, AbstractSet>,
    pub alpha: BTreeMap<(Label, ActuatorId), BTreeSet<Name>>,
}

fn empty() -> &'static AbstractSet {
    static E: std::sync::OnceLock<AbstractSet> = std::sync::OnceLock::new();
    E.get_or_init(BTreeSet::new)
}

impl Estimate {
    pub fn sigma_of(&self, l: &Label, loc: &Location) -> &AbstractSet {
        self.sigma.get(l).and_then(|m| m.get(loc)).unwrap_or_else(|| empty())
    }

    pub fn theta_of(&self, l: &Label) -> &AbstractSet {
        self.theta.get(l).unwrap_or_else(|| empty())
    }

    pub fn kappa_of(&self, l: &Label) -> impl Iterator<Item = (&(Label, usize), &Vec<AbstractSet>)> {
        self.kappa.get(l).into_iter().flatten()
    }

    pub fn alpha_of(&self, l: &Label, j: ActuatorId) -> BTreeSet<Name> {
        self.alpha.get(&(l.clone(), j)).cloned().unwrap_or_default()
    }

    /// Whether the single message `(sender, <vs>)` is in `κ(receiver)`.
    pub fn kappa_contains(&self, receiver: &Label, sender: &Label, vs: &[AbstractValue]) -> bool {
        self.kappa
            .get(receiver)
            .and_then(|m| m.get(&(sender.clone(), vs.len())))
            .is_some_and(|pos| pos.iter().zip(vs).all(|(s, v)| s.contains(v)))
    }

    /// Drops empty sets and entries with an empty position.
    pub fn normalize(&mut self) {
        for m in self.sigma.values_mut() {
            m.retain(|_, s| !s.is_empty());
        }
        self.sigma.retain(|_, m| !m.is_empty());
        for m in self.kappa.values_mut() {
            m.retain(|_, pos| pos.iter().all(|s| !s.is_empty()));
        }
        self.kappa.retain(|_, m| !m.is_empty());
        self.theta.retain(|_, s| !s.is_empty());
        self.alpha.retain(|_, s| !s.is_empty());
    }

    /// Pointwise inclusion.
    pub fn leq(&self, other: &Estimate) -> bool {
        let sigma = self.sigma.iter().all(|(l, m)| {
            m.iter().all(|(loc, s)| s.is_subset(other.sigma_of(l, loc)))
        });
        let kappa = self.kappa.iter().all(|(l, m)| {
            m.iter().all(|(k, pos)| {
                pos.iter().any(|s| s.is_empty())
                    || other.kappa.get(l).and_then(|o| o.get(k)).is_some_and(|opos| {
                        pos.iter().zip(opos).all(|(a, b)| a.is_subset(b))
                    })
            })
        });
        let theta = self.theta.iter().all(|(l, s)| s.is_subset(other.theta_of(l)));
        let alpha = self.alpha.iter().all(|(k, s)| other.alpha.get(k).is_some_and(|o| s.is_subset(o)));
        sigma && kappa && theta && alpha
    }

    pub fn join(&self, other: &Estimate) -> Estimate {
        let mut out = self.clone();
        for (l, m) in &other.sigma {
            for (loc, s) in m {
                out.sigma.entry(l.clone()).or_default().entry(loc.clone()).or_default().extend(s.iter().cloned());
            }
        }
        for (l, m) in &other.kappa {
            for (k, pos) in m {
                let e = out.kappa.entry(l.clone()).or_default().entry(k.clone()).or_insert_with(|| vec![BTreeSet::new(); k.1]);
                for (a, b) in e.iter_mut().zip(pos) {
                    a.extend(b.iter().cloned());
                }
            }
        }
        for (l, s) in &other.theta {
            out.theta.entry(l.clone()).or_default().extend(s.iter().cloned());
        }
        for (k, s) in &other.alpha {
            out.alpha.entry(k.clone()).or_default().extend(s.iter().cloned());
        }
        out.normalize();
        out
    }

    pub fn meet(&self, other: &Estimate) -> Estimate {
        let mut out = Estimate::default();
        for (l, m) in &self.sigma {
            for (loc, s) in m {
                let i: AbstractSet = s.intersection(other.sigma_of(l, loc)).cloned().collect();
                out.sigma.entry(l.clone()).or_default().insert(loc.clone(), i);
            }
        }
        for (l, m) in &self.kappa {
            for (k, pos) in m {
                if let Some(opos) = other.kappa.get(l).and_then(|o| o.get(k)) {
                    let i = pos.iter().zip(opos).map(|(a, b)| a.intersection(b).cloned().collect()).collect();
                    out.kappa.entry(l.clone()).or_default().insert(k.clone(), i);
                }
            }
        }
        for (l, s) in &self.theta {
            out.theta.insert(l.clone(), s.intersection(other.theta_of(l)).cloned().collect());
        }
        for (k, s) in &self.alpha {
            if let Some(o) = other.alpha.get(k) {
                out.alpha.insert(k.clone(), s.intersection(o).cloned().collect());
            }
        }
        out.normalize();
        out
    }

    pub fn summary(&self, prog: &Program) -> String {
        let mut out = String::new();
        for n in &prog.system.nodes {
            let l = &n.label;
            let sigma: usize = self.sigma.get(l).map(|m| m.values().map(|s| s.len()).sum()).unwrap_or(0);
            let kappa = self.kappa.get(l).map(|m| m.len()).unwrap_or(0);
            let alpha: usize =
                self.alpha.iter().filter(|((l2, _), _)| l2 == l).map(|(_, s)| s.len()).sum();
            out.push_str(&format!(
                "{l}: sigma {sigma} kappa {kappa} theta {} alpha {alpha}\n",
                self.theta_of(l).len()
            ));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Constraints

pub type TermId = usize;
pub type BlockId = usize;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BuildOp {
    Fun(Name),
    Enc(Name),
}

/// One clause group per syntactic occurrence. Every clause except the
/// sensor seed only applies while its block is active; a block becomes
/// active when its guard (input or decryption) can fire.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Constraint {
    /// the sensor location holds its leaf value
    SensorSeed { node: usize, sensor: SensorId },
    /// constant leaf into ϑ (sensor read or literal)
    Leaf { block: BlockId, node: usize, value: AbstractValue, into: TermId },
    /// `Σ̂(x) ⊆ ϑ`
    Var { block: BlockId, node: usize, loc: Location, into: TermId },
    Build { block: BlockId, node: usize, op: BuildOp, args: Vec<TermId>, into: TermId },
    Assign { block: BlockId, node: usize, from: TermId, var: Name },
    /// receivers already filtered by Comp
    Out { block: BlockId, node: usize, args: Vec<TermId>, targets: Vec<usize> },
    In { block: BlockId, node: usize, matches: usize, binders: Vec<Name>, cont: BlockId },
    Dec { block: BlockId, node: usize, subject: TermId, key: Name, matches: usize, binders: Vec<Name>, cont: BlockId },
    Act { block: BlockId, node: usize, actuator: ActuatorId, action: Name },
}

#[derive(Clone, Debug, Default)]
pub struct ConstraintSystem {
    pub labels: Vec<Label>,
    pub comp: CompRelation,
    pub constraints: Vec<Constraint>,
    /// per term slot, the owning node
    pub term_nodes: Vec<usize>,
    /// blocks active from the start
    pub roots: Vec<BlockId>,
    pub blocks: usize,
}

impl ConstraintSystem {
    pub fn len(&self) -> usize {
        self.constraints.len()
    }
    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }
}

struct Gen<'a> {
    cs: ConstraintSystem,
    index: &'a BTreeMap<Label, usize>,
}

impl Gen<'_> {
    fn block(&mut self) -> BlockId {
        self.cs.blocks += 1;
        self.cs.blocks - 1
    }

    fn term(&mut self, node: usize, block: BlockId, e: &Term) -> TermId {
        let into = self.cs.term_nodes.len();
        self.cs.term_nodes.push(node);
        let l = &self.cs.labels[node];
        let c = match e {
            Term::Value(v) => Constraint::Leaf { block, node, value: AbstractValue::leaf(Symbol::value(v, l)), into },
            Term::SensorLoc(i) => Constraint::Leaf { block, node, value: AbstractValue::leaf(Symbol::sensor(*i, l)), into },
            Term::Var(x) => Constraint::Var { block, node, loc: Location::Var(x.clone()), into },
            Term::App(f, args) => {
                let args = args.iter().map(|a| self.term(node, block, a)).collect();
                Constraint::Build { block, node, op: BuildOp::Fun(f.clone()), args, into }
            }
            Term::Enc(args, k) => {
                let args = args.iter().map(|a| self.term(node, block, a)).collect();
                Constraint::Build { block, node, op: BuildOp::Enc(k.clone()), args, into }
            }
        };
        self.cs.constraints.push(c);
        into
    }

    fn process(&mut self, node: usize, block: BlockId, p: &Process) {
        match p {
            Process::Nil | Process::IterVar(_) => {}
            Process::Iter(_, body) => self.process(node, block, body),
            Process::MultiOut { terms, targets, cont } => {
                let args = terms.iter().map(|t| self.term(node, block, t)).collect();
                let me = &self.cs.labels[node];
                let targets = targets
                    .iter()
                    .filter(|t| self.cs.comp.allows(me, t))
                    .filter_map(|t| self.index.get(t).copied())
                    .collect();
                self.cs.constraints.push(Constraint::Out { block, node, args, targets });
                self.process(node, block, cont);
            }
            Process::Input { matches, binders, cont } => {
                for m in matches {
                    self.term(node, block, m);
                }
                let b = self.block();
                self.cs.constraints.push(Constraint::In {
                    block,
                    node,
                    matches: matches.len(),
                    binders: binders.clone(),
                    cont: b,
                });
                self.process(node, b, cont);
            }
            Process::Decrypt { subject, matches, binders, key, cont } => {
                let subject = self.term(node, block, subject);
                for m in matches {
                    self.term(node, block, m);
                }
                let b = self.block();
                self.cs.constraints.push(Constraint::Dec {
                    block,
                    node,
                    subject,
                    key: key.clone(),
                    matches: matches.len(),
                    binders: binders.clone(),
                    cont: b,
                });
                self.process(node, b, cont);
            }
            Process::Assign { var, rhs, cont } => {
                let from = self.term(node, block, rhs);
                self.cs.constraints.push(Constraint::Assign { block, node, from, var: var.clone() });
                self.process(node, block, cont);
            }
            Process::Cond { guard, then_p, else_p } => {
                self.term(node, block, guard);
                self.process(node, block, then_p);
                self.process(node, block, else_p);
            }
            Process::ActCmd { actuator, action, cont } => {
                self.cs.constraints.push(Constraint::Act { block, node, actuator: *actuator, action: action.clone() });
                self.process(node, block, cont);
            }
        }
    }
}

pub fn generate_constraints(s: &System, comp: &CompRelation) -> ConstraintSystem {
    let labels: Vec<Label> = s.nodes.iter().map(|n| n.label.clone()).collect();
    let index: BTreeMap<Label, usize> = labels.iter().cloned().enumerate().map(|(i, l)| (l, i)).collect();
    let mut g = Gen { cs: ConstraintSystem { labels, comp: comp.clone(), ..Default::default() }, index: &index };
    for (ni, n) in s.nodes.iter().enumerate() {
        for i in n.sensors() {
            g.cs.constraints.push(Constraint::SensorSeed { node: ni, sensor: i });
        }
        for p in n.processes() {
            let b = g.block();
            g.cs.roots.push(b);
            g.process(ni, b, p);
        }
    }
    g.cs
}

// ---------------------------------------------------------------------------
// Solver

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AnalysisOptions {
    /// whether act commands feed α
    pub alpha: bool,
    /// bound on the number of distinct abstract values
    pub value_cap: usize,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions { alpha: true, value_cap: 100_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum SolveError {
    #[error("more than {0} abstract values; raise the cap or simplify the system")]
    CapExceeded(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum Dep {
    Term(TermId),
    Sigma(usize, Location),
    Kappa(usize),
    Block(BlockId),
}

type Id = u32;

/// `(sender index, arity)` to per-position value ids
type IdKappa = BTreeMap<(usize, usize), Vec<BTreeSet<Id>>>;

struct Solver<'a> {
    cs: &'a ConstraintSystem,
    opts: AnalysisOptions,
    vals: Vec<AbstractValue>,
    ids: HashMap<AbstractValue, Id>,
    terms: Vec<BTreeSet<Id>>,
    sigma: Vec<BTreeMap<Location, BTreeSet<Id>>>,
    kappa: Vec<IdKappa>,
    theta: Vec<BTreeSet<Id>>,
    alpha: BTreeMap<(usize, ActuatorId), BTreeSet<Name>>,
    active: Vec<bool>,
    built: Vec<HashSet<Vec<Id>>>,
    deps: HashMap<Dep, Vec<usize>>,
    by_block: Vec<Vec<usize>>,
    queue: VecDeque<usize>,
    queued: Vec<bool>,
}

impl<'a> Solver<'a> {
    fn new(cs: &'a ConstraintSystem, opts: AnalysisOptions) -> Self {
        let n = cs.labels.len();
        let mut deps: HashMap<Dep, Vec<usize>> = HashMap::new();
        let mut by_block = vec![Vec::new(); cs.blocks];
        for (ci, c) in cs.constraints.iter().enumerate() {
            let mut add = |d: Dep| deps.entry(d).or_default().push(ci);
            match c {
                Constraint::SensorSeed { .. } => {}
                Constraint::Leaf { block, .. } | Constraint::Act { block, .. } => by_block[*block].push(ci),
                Constraint::Var { block, node, loc, .. } => {
                    by_block[*block].push(ci);
                    add(Dep::Sigma(*node, loc.clone()));
                }
                Constraint::Build { block, args, .. } | Constraint::Out { block, args, .. } => {
                    by_block[*block].push(ci);
                    args.iter().for_each(|a| add(Dep::Term(*a)));
                }
                Constraint::Assign { block, from, .. } => {
                    by_block[*block].push(ci);
                    add(Dep::Term(*from));
                }
                Constraint::In { block, node, .. } => {
                    by_block[*block].push(ci);
                    add(Dep::Kappa(*node));
                }
                Constraint::Dec { block, subject, .. } => {
                    by_block[*block].push(ci);
                    add(Dep::Term(*subject));
                }
            }
        }
        Solver {
            cs,
            opts,
            vals: Vec::new(),
            ids: HashMap::new(),
            terms: vec![BTreeSet::new(); cs.term_nodes.len()],
            sigma: vec![BTreeMap::new(); n],
            kappa: vec![BTreeMap::new(); n],
            theta: vec![BTreeSet::new(); n],
            alpha: BTreeMap::new(),
            active: vec![false; cs.blocks],
            built: vec![HashSet::new(); cs.constraints.len()],
            deps,
            by_block,
            queue: VecDeque::new(),
            queued: vec![false; cs.constraints.len()],
        }
    }

    fn intern(&mut self, v: AbstractValue) -> Result<Id, SolveError> {
        if let Some(i) = self.ids.get(&v) {
            return Ok(*i);
        }
        if self.vals.len() >= self.opts.value_cap {
            return Err(SolveError::CapExceeded(self.opts.value_cap));
        }
        let i = self.vals.len() as Id;
        self.ids.insert(v.clone(), i);
        self.vals.push(v);
        Ok(i)
    }

    fn wake(&mut self, d: &Dep) {
        if let Some(cs) = self.deps.get(d) {
            for &c in cs {
                if !self.queued[c] {
                    self.queued[c] = true;
                    self.queue.push_back(c);
                }
            }
        }
    }

    fn add_term(&mut self, t: TermId, v: Id) {
        let node = self.cs.term_nodes[t];
        self.theta[node].insert(v);
        if self.terms[t].insert(v) {
            self.wake(&Dep::Term(t));
        }
    }

    fn add_sigma(&mut self, node: usize, loc: Location, vs: impl IntoIterator<Item = Id>) {
        let s = self.sigma[node].entry(loc.clone()).or_default();
        let before = s.len();
        s.extend(vs);
        if s.len() != before {
            self.wake(&Dep::Sigma(node, loc));
        }
    }

    fn activate(&mut self, b: BlockId) {
        if !self.active[b] {
            self.active[b] = true;
            for c in self.by_block[b].clone() {
                if !self.queued[c] {
                    self.queued[c] = true;
                    self.queue.push_back(c);
                }
            }
            self.wake(&Dep::Block(b));
        }
    }

    fn load(&mut self, e: &Estimate) -> Result<(), SolveError> {
        let index: HashMap<&Label, usize> = self.cs.labels.iter().enumerate().map(|(i, l)| (l, i)).collect();
        for (l, m) in &e.sigma {
            let Some(&n) = index.get(l) else { continue };
            for (loc, s) in m {
                let ids = s.iter().map(|v| self.intern(v.clone())).collect::<Result<Vec<_>, _>>()?;
                self.add_sigma(n, loc.clone(), ids);
            }
        }
        for (l, m) in &e.kappa {
            let Some(&n) = index.get(l) else { continue };
            for ((from, r), pos) in m {
                let Some(&f) = index.get(from) else { continue };
                let mut ids = Vec::new();
                for s in pos {
                    ids.push(s.iter().map(|v| self.intern(v.clone())).collect::<Result<BTreeSet<_>, _>>()?);
                }
                self.add_kappa(n, f, *r, ids);
            }
        }
        for (l, s) in &e.theta {
            let Some(&n) = index.get(l) else { continue };
            for v in s {
                let i = self.intern(v.clone())?;
                self.theta[n].insert(i);
            }
        }
        for ((l, j), s) in &e.alpha {
            let Some(&n) = index.get(l) else { continue };
            self.alpha.entry((n, *j)).or_default().extend(s.iter().cloned());
        }
        Ok(())
    }

    fn add_kappa(&mut self, to: usize, from: usize, r: usize, pos: Vec<BTreeSet<Id>>) {
        let e = self.kappa[to].entry((from, r));
        let mut changed = matches!(e, std::collections::btree_map::Entry::Vacant(_));
        let cur = e.or_insert_with(|| vec![BTreeSet::new(); r]);
        for (a, b) in cur.iter_mut().zip(pos) {
            let before = a.len();
            a.extend(b);
            changed |= a.len() != before;
        }
        if changed {
            self.wake(&Dep::Kappa(to));
        }
    }

    fn run(&mut self) -> Result<(), SolveError> {
        for ci in 0..self.cs.constraints.len() {
            if let Constraint::SensorSeed { node, sensor } = &self.cs.constraints[ci] {
                let v = self.intern(AbstractValue::leaf(Symbol::sensor(*sensor, &self.cs.labels[*node])))?;
                self.add_sigma(*node, Location::Sensor(*sensor), [v]);
            }
        }
        for b in self.cs.roots.clone() {
            self.activate(b);
        }
        while let Some(ci) = self.queue.pop_front() {
            self.queued[ci] = false;
            self.fire(ci)?;
        }
        Ok(())
    }

    fn fire(&mut self, ci: usize) -> Result<(), SolveError> {
        let c = &self.cs.constraints[ci];
        match c {
            Constraint::SensorSeed { .. } => {}
            Constraint::Leaf { block, value, into, .. } if self.active[*block] => {
                let v = self.intern(value.clone())?;
                self.add_term(*into, v);
            }
            Constraint::Var { block, node, loc, into } if self.active[*block] => {
                let vs: Vec<Id> = self.sigma[*node].get(loc).into_iter().flatten().copied().collect();
                vs.into_iter().for_each(|v| self.add_term(*into, v));
            }
            Constraint::Build { block, node, op, args, into } if self.active[*block] => {
                let sets: Vec<Vec<Id>> = args.iter().map(|a| self.terms[*a].iter().copied().collect()).collect();
                let label = self.cs.labels[*node].clone();
                for combo in combos(&sets) {
                    if !self.built[ci].insert(combo.clone()) {
                        continue;
                    }
                    let avs: Vec<&AbstractValue> = combo.iter().map(|i| &self.vals[*i as usize]).collect();
                    let v = match op {
                        BuildOp::Fun(f) => AbstractValue::apply(Symbol::fun(f, &label, avs.len()), &avs),
                        BuildOp::Enc(k) => AbstractValue::encrypt(&label, &avs, k),
                    };
                    let v = self.intern(v)?;
                    self.add_term(*into, v);
                }
            }
            Constraint::Assign { block, node, from, var } if self.active[*block] => {
                let vs: Vec<Id> = self.terms[*from].iter().copied().collect();
                self.add_sigma(*node, Location::Var(var.clone()), vs);
            }
            Constraint::Out { block, node, args, targets } if self.active[*block] => {
                if args.iter().all(|a| !self.terms[*a].is_empty()) {
                    let pos: Vec<BTreeSet<Id>> = args.iter().map(|a| self.terms[*a].clone()).collect();
                    for t in targets.clone() {
                        self.add_kappa(t, *node, args.len(), pos.clone());
                    }
                }
            }
            Constraint::In { block, node, matches, binders, cont } if self.active[*block] => {
                let r = matches + binders.len();
                let me = &self.cs.labels[*node];
                let entries: Vec<Vec<BTreeSet<Id>>> = self.kappa[*node]
                    .iter()
                    .filter(|((from, ar), pos)| {
                        *ar == r
                            && pos.iter().all(|s| !s.is_empty())
                            && self.cs.comp.allows(&self.cs.labels[*from], me)
                    })
                    .map(|(_, pos)| pos.clone())
                    .collect();
                if !entries.is_empty() {
                    self.activate(*cont);
                }
                for pos in entries {
                    for (i, x) in binders.iter().enumerate() {
                        self.add_sigma(*node, Location::Var(x.clone()), pos[matches + i].iter().copied());
                    }
                }
            }
            Constraint::Dec { block, node, subject, key, matches, binders, cont } if self.active[*block] => {
                let r = matches + binders.len();
                let subjects: Vec<Id> = self.terms[*subject].iter().copied().collect();
                for v in subjects {
                    for list in extract_decryption(&self.vals[v as usize].clone(), key) {
                        if list.len() != r {
                            continue;
                        }
                        self.activate(*cont);
                        for (i, x) in binders.iter().enumerate() {
                            let id = self.intern(list[matches + i].clone())?;
                            self.add_sigma(*node, Location::Var(x.clone()), [id]);
                        }
                    }
                }
            }
            Constraint::Act { block, node, actuator, action } if self.active[*block]
                && self.opts.alpha => {
                    self.alpha.entry((*node, *actuator)).or_default().insert(action.clone());
                }
            _ => {}
        }
        Ok(())
    }

    fn finish(self) -> Estimate {
        let v = |i: &Id| self.vals[*i as usize].clone();
        let labels = &self.cs.labels;
        let mut e = Estimate::default();
        for (n, m) in self.sigma.iter().enumerate() {
            for (loc, s) in m {
                e.sigma.entry(labels[n].clone()).or_default().insert(loc.clone(), s.iter().map(v).collect());
            }
        }
        for (n, m) in self.kappa.iter().enumerate() {
            for ((from, r), pos) in m {
                e.kappa
                    .entry(labels[n].clone())
                    .or_default()
                    .insert((labels[*from].clone(), *r), pos.iter().map(|s| s.iter().map(v).collect()).collect());
            }
        }
        for (n, s) in self.theta.iter().enumerate() {
            e.theta.insert(labels[n].clone(), s.iter().map(v).collect());
        }
        for ((n, j), s) in &self.alpha {
            e.alpha.insert((labels[*n].clone(), *j), s.clone());
        }
        e.normalize();
        e
    }
}

/// Cartesian product of index lists.
fn combos<T: Clone>(sets: &[Vec<T>]) -> Vec<Vec<T>> {
    let mut out = vec![Vec::new()];
    for s in sets {
        let mut next = Vec::with_capacity(out.len() * s.len());
        for prefix in &out {
            for x in s {
                let mut p = prefix.clone();
                p.push(x.clone());
                next.push(p);
            }
        }
        out = next;
    }
    out
}

pub fn solve_least(cs: &ConstraintSystem, opts: AnalysisOptions) -> Result<Estimate, SolveError> {
    solve_above(cs, &Estimate::default(), opts)
}

/// The least solution above `init`. Entries of `init` whose labels are not
/// in the system are ignored.
pub fn solve_above(cs: &ConstraintSystem, init: &Estimate, opts: AnalysisOptions) -> Result<Estimate, SolveError> {
    let mut s = Solver::new(cs, opts);
    s.load(init)?;
    s.run()?;
    Ok(s.finish())
}

/// Least estimate of a program under its own compatibility relation.
pub fn analyze(prog: &Program, opts: AnalysisOptions) -> Result<Estimate, SolveError> {
    solve_least(&generate_constraints(&prog.system, &prog.comp), opts)
}

// ---------------------------------------------------------------------------
// Checker

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub node: Label,
    pub rule: String,
    pub site: String,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at {}: {} ({})", self.rule, self.node, self.site, self.detail)
    }
}

struct Checker<'a> {
    e: &'a Estimate,
    comp: &'a CompRelation,
    labels: BTreeSet<Label>,
    alpha: bool,
    out: Vec<Violation>,
}

impl Checker<'_> {
    fn fail(&mut self, l: &Label, rule: &str, site: String, detail: String) {
        self.out.push(Violation { node: l.clone(), rule: rule.into(), site, detail });
    }

    /// The smallest ϑ allowed by the term rules, plus the Θ check.
    fn term(&mut self, l: &Label, e: &Term) -> AbstractSet {
        let theta: AbstractSet = match e {
            Term::Value(v) => [AbstractValue::leaf(Symbol::value(v, l))].into(),
            Term::SensorLoc(i) => [AbstractValue::leaf(Symbol::sensor(*i, l))].into(),
            Term::Var(x) => self.e.sigma_of(l, &Location::Var(x.clone())).clone(),
            Term::App(f, args) => {
                let sets: Vec<Vec<AbstractValue>> = args.iter().map(|a| self.term(l, a).into_iter().collect()).collect();
                combos(&sets)
                    .iter()
                    .map(|c| AbstractValue::apply(Symbol::fun(f, l, c.len()), &c.iter().collect::<Vec<_>>()))
                    .collect()
            }
            Term::Enc(args, k) => {
                let sets: Vec<Vec<AbstractValue>> = args.iter().map(|a| self.term(l, a).into_iter().collect()).collect();
                combos(&sets).iter().map(|c| AbstractValue::encrypt(l, &c.iter().collect::<Vec<_>>(), k)).collect()
            }
        };
        let missing: Vec<&AbstractValue> = theta.iter().filter(|v| !self.e.theta_of(l).contains(v)).collect();
        if let Some(v) = missing.first() {
            self.fail(l, "theta", crate::pretty::print_term(e), format!("{v} not in Theta"));
        }
        theta
    }

    fn bind(&mut self, l: &Label, rule: &str, site: &str, x: &Name, vs: &AbstractSet) {
        let have = self.e.sigma_of(l, &Location::Var(x.clone()));
        if let Some(v) = vs.iter().find(|v| !have.contains(v)) {
            self.fail(l, rule, site.to_string(), format!("{v} not in Sigma({x})"));
        }
    }

    fn process(&mut self, l: &Label, p: &Process) {
        let site = || {
            let s = crate::pretty::print_process(p);
            s.chars().take(60).collect::<String>()
        };
        match p {
            Process::Nil | Process::IterVar(_) => {}
            Process::Iter(_, b) => self.process(l, b),
            Process::MultiOut { terms, targets, cont } => {
                let sets: Vec<AbstractSet> = terms.iter().map(|t| self.term(l, t)).collect();
                if sets.iter().all(|s| !s.is_empty()) {
                    for t in targets {
                        if !self.comp.allows(l, t) || !self.labels.contains(t) {
                            continue;
                        }
                        let entry = self.e.kappa.get(t).and_then(|m| m.get(&(l.clone(), sets.len())));
                        let ok = entry.is_some_and(|pos| sets.iter().zip(pos).all(|(a, b)| a.is_subset(b)));
                        if !ok {
                            self.fail(l, "P-out", site(), format!("message to {t} not in kappa({t})"));
                        }
                    }
                }
                self.process(l, cont);
            }
            Process::Input { matches, binders, cont } => {
                for m in matches {
                    self.term(l, m);
                }
                let r = matches.len() + binders.len();
                let mut any = false;
                for ((from, ar), pos) in self.e.kappa_of(l) {
                    if *ar != r || !self.comp.allows(from, l) || pos.iter().any(|s| s.is_empty()) {
                        continue;
                    }
                    any = true;
                    for (i, x) in binders.iter().enumerate() {
                        self.bind(l, "P-in", &site(), x, &pos[matches.len() + i]);
                    }
                }
                if any {
                    self.process(l, cont);
                }
            }
            Process::Decrypt { subject, matches, binders, key, cont } => {
                let vs = self.term(l, subject);
                for m in matches {
                    self.term(l, m);
                }
                let r = matches.len() + binders.len();
                let mut any = false;
                for v in &vs {
                    for list in extract_decryption(v, key) {
                        if list.len() != r {
                            continue;
                        }
                        any = true;
                        for (i, x) in binders.iter().enumerate() {
                            self.bind(l, "P-dec", &site(), x, &[list[matches.len() + i].clone()].into());
                        }
                    }
                }
                if any {
                    self.process(l, cont);
                }
            }
            Process::Assign { var, rhs, cont } => {
                let vs = self.term(l, rhs);
                self.bind(l, "P-ass", &site(), var, &vs);
                self.process(l, cont);
            }
            Process::Cond { guard, then_p, else_p } => {
                self.term(l, guard);
                self.process(l, then_p);
                self.process(l, else_p);
            }
            Process::ActCmd { actuator, action, cont } => {
                if self.alpha && !self.e.alpha_of(l, *actuator).contains(action) {
                    self.fail(l, "P-act", site(), format!("{action} not in alpha({actuator})"));
                }
                self.process(l, cont);
            }
        }
    }
}

/// Validity of `e` for the system, re-derived clause by clause.
pub fn check_estimate(s: &System, e: &Estimate, comp: &CompRelation, opts: AnalysisOptions) -> Result<(), Vec<Violation>> {
    let mut ck = Checker { e, comp, labels: s.labels(), alpha: opts.alpha, out: Vec::new() };
    for n in &s.nodes {
        for i in n.sensors() {
            let iota = AbstractValue::leaf(Symbol::sensor(i, &n.label));
            if !e.sigma_of(&n.label, &Location::Sensor(i)).contains(&iota) {
                ck.fail(&n.label, "B-store", format!("#{i}"), format!("{iota} missing"));
            }
        }
        for p in n.processes() {
            ck.process(&n.label, p);
        }
    }
    if ck.out.is_empty() {
        Ok(())
    } else {
        Err(ck.out)
    }
}

// ---------------------------------------------------------------------------
// Audit against concrete runs

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counterexample {
    pub event: usize,
    pub missing: String,
}

impl fmt::Display for Counterexample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "event {}: {}", self.event, self.missing)
    }
}

fn covered(t: &ProvTree, vs: &AbstractSet) -> bool {
    vs.iter().any(|v| lang_member(t, v))
}

fn check_write(e: &Estimate, l: &Label, loc: Location, tv: &TV) -> Option<String> {
    if covered(&tv.tree, e.sigma_of(l, &loc)) {
        None
    } else {
        Some(format!("{} not covered by Sigma_{l}({loc})", tv.tree))
    }
}

/// Checks every event of a trace against the estimate. Store agreement is
/// checked on each write, which is enough since stores start undefined.
pub fn soundness_audit(e: &Estimate, trace: &[TraceEvent], opts: AnalysisOptions) -> Result<(), Vec<Counterexample>> {
    let mut out = Vec::new();
    for (i, ev) in trace.iter().enumerate() {
        let mut miss = |m: String| out.push(Counterexample { event: i, missing: m });
        match ev {
            TraceEvent::Evaluated { node, terms } => {
                for (t, tv) in terms {
                    if !covered(&tv.tree, e.theta_of(node)) {
                        miss(format!("{} (from {}) not covered by Theta({node})", tv.tree, crate::pretty::print_term(t)));
                    }
                }
            }
            TraceEvent::Sensed { node, sensor, value } => {
                if let Some(m) = check_write(e, node, Location::Sensor(*sensor), value) {
                    miss(m);
                }
            }
            TraceEvent::Assigned { node, var, value } => {
                if let Some(m) = check_write(e, node, Location::Var(var.clone()), value) {
                    miss(m);
                }
            }
            TraceEvent::Decrypted { node, bindings } => {
                for (x, tv) in bindings {
                    if let Some(m) = check_write(e, node, Location::Var(x.clone()), tv) {
                        miss(m);
                    }
                }
            }
            TraceEvent::MsgDelivered { from, to, values, bindings } => {
                let entry = e.kappa.get(to).and_then(|m| m.get(&(from.clone(), values.len())));
                let ok = entry.is_some_and(|pos| pos.iter().zip(values).all(|(s, tv)| covered(&tv.tree, s)));
                if !ok {
                    let vs: Vec<String> = values.iter().map(|v| v.tree.to_string()).collect();
                    miss(format!("({from}, <{}>) not covered by kappa({to})", vs.join(", ")));
                }
                for (x, tv) in bindings {
                    if let Some(m) = check_write(e, to, Location::Var(x.clone()), tv) {
                        miss(m);
                    }
                }
            }
            TraceEvent::ActTriggered { node, actuator, action }
                if opts.alpha && !e.alpha_of(node, *actuator).contains(action) => {
                    miss(format!("{action} not in alpha_{node}({actuator})"));
                }
            _ => {}
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

/// The agreement relation between an instrumented store and `Σ̂_ℓ`.
pub fn store_agrees(e: &Estimate, n: &NodeState) -> bool {
    n.store.iter().all(|(loc, v)| match v {
        None => true,
        Some(tv) => covered(&tv.tree, e.sigma_of(&n.label, loc)),
    })
}

// ---------------------------------------------------------------------------
// JSON form: a shared production table, values as lists of production ids.

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueJson {
    pub start: Symbol,
    pub productions: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SigmaJson {
    pub node: Label,
    pub location: Location,
    pub values: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KappaJson {
    pub receiver: Label,
    pub sender: Label,
    pub positions: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThetaJson {
    pub node: Label,
    pub values: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlphaJson {
    pub node: Label,
    pub actuator: ActuatorId,
    pub actions: Vec<Name>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimateJson {
    pub productions: Vec<Production>,
    pub values: Vec<ValueJson>,
    pub sigma: Vec<SigmaJson>,
    pub kappa: Vec<KappaJson>,
    pub theta: Vec<ThetaJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<Vec<AlphaJson>>,
}

impl EstimateJson {
    /// `with_alpha = false` leaves the α component out entirely.
    pub fn from_estimate(e: &Estimate, with_alpha: bool) -> Self {
        let mut all: BTreeSet<&AbstractValue> = BTreeSet::new();
        e.sigma.values().flat_map(|m| m.values()).flatten().for_each(|v| {
            all.insert(v);
        });
        e.kappa.values().flat_map(|m| m.values()).flatten().flatten().for_each(|v| {
            all.insert(v);
        });
        e.theta.values().flatten().for_each(|v| {
            all.insert(v);
        });
        let prods: BTreeSet<&Production> = all.iter().flat_map(|v| v.prods.iter()).collect();
        let pid: BTreeMap<&Production, usize> = prods.iter().enumerate().map(|(i, p)| (*p, i)).collect();
        let vid: BTreeMap<&AbstractValue, usize> = all.iter().enumerate().map(|(i, v)| (*v, i)).collect();
        let ids = |s: &AbstractSet| s.iter().map(|v| vid[v]).collect::<Vec<_>>();
        EstimateJson {
            productions: prods.iter().map(|p| (*p).clone()).collect(),
            values: all
                .iter()
                .map(|v| ValueJson { start: v.start.clone(), productions: v.prods.iter().map(|p| pid[p]).collect() })
                .collect(),
            sigma: e
                .sigma
                .iter()
                .flat_map(|(l, m)| {
                    m.iter().map(|(loc, s)| SigmaJson { node: l.clone(), location: loc.clone(), values: ids(s) })
                })
                .collect(),
            kappa: e
                .kappa
                .iter()
                .flat_map(|(l, m)| {
                    m.iter().map(|((from, _), pos)| KappaJson {
                        receiver: l.clone(),
                        sender: from.clone(),
                        positions: pos.iter().map(ids).collect(),
                    })
                })
                .collect(),
            theta: e.theta.iter().map(|(l, s)| ThetaJson { node: l.clone(), values: ids(s) }).collect(),
            alpha: with_alpha.then(|| {
                e.alpha
                    .iter()
                    .map(|((l, j), s)| AlphaJson { node: l.clone(), actuator: *j, actions: s.iter().cloned().collect() })
                    .collect()
            }),
        }
    }

    pub fn to_estimate(&self) -> Result<Estimate, String> {
        let mut vals = Vec::new();
        for v in &self.values {
            let mut set = BTreeSet::new();
            for &p in &v.productions {
                set.insert(self.productions.get(p).ok_or_else(|| format!("unknown production {p}"))?.clone());
            }
            let av = AbstractValue::new(v.start.clone(), &set);
            if av.prods.len() != set.len() {
                return Err(format!("value {} lists unreachable productions", v.start));
            }
            vals.push(av);
        }
        let get = |ids: &[usize]| -> Result<AbstractSet, String> {
            ids.iter().map(|i| vals.get(*i).cloned().ok_or_else(|| format!("unknown value {i}"))).collect()
        };
        let mut e = Estimate::default();
        for s in &self.sigma {
            e.sigma.entry(s.node.clone()).or_default().insert(s.location.clone(), get(&s.values)?);
        }
        for k in &self.kappa {
            let pos = k.positions.iter().map(|p| get(p)).collect::<Result<Vec<_>, _>>()?;
            e.kappa.entry(k.receiver.clone()).or_default().insert((k.sender.clone(), pos.len()), pos);
        }
        for t in &self.theta {
            e.theta.insert(t.node.clone(), get(&t.values)?);
        }
        for a in self.alpha.iter().flatten() {
            e.alpha.insert((a.node.clone(), a.actuator), a.actions.iter().cloned().collect());
        }
        e.normalize();
        Ok(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_program;

    fn least(src: &str) -> (Program, Estimate) {
        let p = parse_program(src).unwrap();
        let e = analyze(&p, AnalysisOptions::default()).unwrap();
        (p, e)
    }

    #[test]
    fn nil_system() {
        let p = parse_program("system { }").unwrap();
        let cs = generate_constraints(&p.system, &p.comp);
        assert!(cs.is_empty());
        assert_eq!(solve_least(&cs, AnalysisOptions::default()).unwrap(), Estimate::default());
    }

    #[test]
    fn act_feeds_alpha() {
        let (_, e) = least("system { node p { store proc act(5, turnon). 0 actuator 5: 0 } }");
        assert_eq!(e.alpha_of(&Label::new("p"), 5), [name("turnon")].into());
        let p = parse_program("system { node p { store proc act(5, turnon). 0 actuator 5: 0 } }").unwrap();
        let e = analyze(&p, AnalysisOptions { alpha: false, ..Default::default() }).unwrap();
        assert!(e.alpha.is_empty());
    }

    #[test]
    fn input_guards_continuation() {
        let (_, e) = least("system { node a { store proc in(; x). y := 1. 0 } node b { store proc 0 } }");
        assert!(e.sigma_of(&Label::new("a"), &Location::Var(name("y"))).is_empty());
        let (p, e) = least(
            "system { node a { store proc in(; x). y := 1. 0 } node b { store proc out(2) to {a}. 0 } }",
        );
        assert_eq!(e.sigma_of(&Label::new("a"), &Location::Var(name("y"))).len(), 1);
        assert!(check_estimate(&p.system, &e, &p.comp, AnalysisOptions::default()).is_ok());
    }

    #[test]
    fn loop_terminates() {
        let (p, e) = least("fun f/1; system { node a { store proc mu h. x := f(x). h } } ");
        assert!(e.sigma.is_empty());
        let (p2, e2) = least("fun f/1; system { node a { store proc x := 1. mu h. x := f(x). h } } ");
        assert_eq!(e2.sigma_of(&Label::new("a"), &Location::Var(name("x"))).len(), 3);
        assert!(check_estimate(&p.system, &e, &p.comp, AnalysisOptions::default()).is_ok());
        assert!(check_estimate(&p2.system, &e2, &p2.comp, AnalysisOptions::default()).is_ok());
    }

    #[test]
    fn removing_kappa_is_detected() {
        let (p, mut e) = least("system { node a { store proc in(; x). 0 } node b { store proc out(2) to {a}. 0 } }");
        e.kappa.clear();
        let v = check_estimate(&p.system, &e, &p.comp, AnalysisOptions::default()).unwrap_err();
        assert_eq!(v[0].rule, "P-out");
    }

    #[test]
    fn json_round_trip() {
        let (_, e) = least(
            "key k; system { node a { store proc in(; x). decrypt x as {; y}_k in 0 } node b { store sensor 1: 0 proc out({#1}_k) to {a}. 0 } }",
        );
        assert_eq!(e.sigma_of(&Label::new("a"), &Location::Var(name("y"))).len(), 1);
        let j = EstimateJson::from_estimate(&e, true);
        let back = serde_json::from_str::<EstimateJson>(&serde_json::to_string(&j).unwrap()).unwrap();
        assert_eq!(back.to_estimate().unwrap(), e);
    }
}
