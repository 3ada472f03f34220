//! Regular tree grammars over the provenance alphabet.
//!
//! Every nonterminal is the capital counterpart of exactly one terminal
//! symbol, so a production is fully described by its root symbol and the
//! nonterminals of its children. Abstract values carry their own
//! (reachable) production set.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ast::{Label, Literal, Name, SensorId};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Symbol {
    Sensor { id: SensorId, label: Label },
    Value { value: Literal, label: Label },
    Fun { name: Name, label: Label, arity: usize },
    Enc { arity: usize, label: Label },
    Key { key: Name },
}

impl Symbol {
    /// Number of children in a production rooted here. Encryptions carry
    /// the key as an extra last child.
    pub fn rank(&self) -> usize {
        match self {
            Symbol::Sensor { .. } | Symbol::Value { .. } | Symbol::Key { .. } => 0,
            Symbol::Fun { arity, .. } => *arity,
            Symbol::Enc { arity, .. } => arity + 1,
        }
    }
    pub fn sensor(id: SensorId, l: &Label) -> Symbol {
        Symbol::Sensor { id, label: l.clone() }
    }
    pub fn value(v: &Literal, l: &Label) -> Symbol {
        Symbol::Value { value: v.clone(), label: l.clone() }
    }
    pub fn fun(f: &Name, l: &Label, arity: usize) -> Symbol {
        Symbol::Fun { name: f.clone(), label: l.clone(), arity }
    }
    pub fn enc(arity: usize, l: &Label) -> Symbol {
        Symbol::Enc { arity, label: l.clone() }
    }
    pub fn key(k: &Name) -> Symbol {
        Symbol::Key { key: k.clone() }
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Symbol::Sensor { id, label } => write!(f, "{id}^{label}"),
            Symbol::Value { value, label } => write!(f, "{value}^{label}"),
            Symbol::Fun { name, label, .. } => write!(f, "{name}^{label}"),
            Symbol::Enc { arity, label } => write!(f, "enc_{arity}^{label}"),
            Symbol::Key { key } => write!(f, "{key}"),
        }
    }
}

/// Nonterminals are named by the terminal they produce.
pub type NonTerminal = Symbol;

pub fn nt_name(s: &Symbol) -> String {
    match s {
        Symbol::Sensor { id, label } => format!("I{id}^{label}"),
        Symbol::Value { value, label } => format!("V[{value}]^{label}"),
        Symbol::Fun { name, label, .. } => {
            let mut cs = name.chars();
            let head: String = cs.next().map(|c| c.to_uppercase().collect()).unwrap_or_default();
            format!("{head}{}^{label}", cs.as_str())
        }
        Symbol::Enc { arity, label } => format!("Enc_{arity}^{label}"),
        Symbol::Key { key } => format!("K[{key}]"),
    }
}

/// `head -> root(children...)` where `head` is the nonterminal of `root`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Production {
    pub root: Symbol,
    pub children: Vec<NonTerminal>,
}

impl Production {
    pub fn leaf(root: Symbol) -> Self {
        Production { root, children: Vec::new() }
    }
    pub fn head(&self) -> &NonTerminal {
        &self.root
    }
}

impl fmt::Display for Production {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> {}", nt_name(&self.root), self.root)?;
        if !self.children.is_empty() {
            let cs: Vec<String> = self.children.iter().map(nt_name).collect();
            write!(f, "({})", cs.join(", "))?;
        }
        Ok(())
    }
}

pub type Productions = Arc<BTreeSet<Production>>;

/// An abstract value `(Z, R)`. `R` is always closed under reachability
/// from `Z`, so equality of values is equality of the pair.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AbstractValue {
    pub start: NonTerminal,
    pub prods: Productions,
}

impl AbstractValue {
    /// Builds `(start, D*(start, prods))`.
    pub fn new(start: NonTerminal, prods: &BTreeSet<Production>) -> Self {
        let prods = Arc::new(reachable_productions(&start, prods));
        AbstractValue { start, prods }
    }

    /// `(Z, {Z -> z})` for a leaf symbol.
    pub fn leaf(sym: Symbol) -> Self {
        let mut set = BTreeSet::new();
        set.insert(Production::leaf(sym.clone()));
        AbstractValue { start: sym, prods: Arc::new(set) }
    }

    /// The (E-fun) construction: `(F, {F -> f(Z1..Zr)} ∪ R1 ∪ .. ∪ Rr)`.
    pub fn apply(root: Symbol, args: &[&AbstractValue]) -> Self {
        let mut set = BTreeSet::new();
        set.insert(Production { root: root.clone(), children: args.iter().map(|a| a.start.clone()).collect() });
        for a in args {
            set.extend(a.prods.iter().cloned());
        }
        AbstractValue { start: root, prods: Arc::new(set) }
    }

    /// The (E-enc) construction, key as last child.
    pub fn encrypt(label: &Label, args: &[&AbstractValue], k: &Name) -> Self {
        let root = Symbol::enc(args.len(), label);
        let key = Symbol::key(k);
        let mut set = BTreeSet::new();
        let mut children: Vec<NonTerminal> = args.iter().map(|a| a.start.clone()).collect();
        children.push(key.clone());
        set.insert(Production { root: root.clone(), children });
        set.insert(Production::leaf(key));
        for a in args {
            set.extend(a.prods.iter().cloned());
        }
        AbstractValue { start: root, prods: Arc::new(set) }
    }

    pub fn productions_of<'a>(&'a self, nt: &'a NonTerminal) -> impl Iterator<Item = &'a Production> + 'a {
        self.prods.iter().filter(move |p| p.head() == nt)
    }
}

impl fmt::Display for AbstractValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ps: Vec<String> = self.prods.iter().map(|p| p.to_string()).collect();
        write!(f, "({}, {{{}}})", nt_name(&self.start), ps.join(", "))
    }
}

/// D*: productions of `prods` used to derive trees from `z`.
pub fn reachable_productions(z: &NonTerminal, prods: &BTreeSet<Production>) -> BTreeSet<Production> {
    let mut by_head: BTreeMap<&NonTerminal, Vec<&Production>> = BTreeMap::new();
    for p in prods {
        by_head.entry(p.head()).or_default().push(p);
    }
    let mut seen: BTreeSet<&NonTerminal> = BTreeSet::new();
    let mut stack = vec![z];
    let mut out = BTreeSet::new();
    while let Some(nt) = stack.pop() {
        if !seen.insert(nt) {
            continue;
        }
        for p in by_head.get(nt).into_iter().flatten() {
            out.insert((*p).clone());
            stack.extend(p.children.iter());
        }
    }
    out
}

/// D: for each encryption production of the start symbol under key `k`,
/// the ordered list of component grammars.
pub fn extract_decryption(g: &AbstractValue, k: &Name) -> Vec<Vec<AbstractValue>> {
    let key = Symbol::key(k);
    if !g.prods.contains(&Production::leaf(key.clone())) {
        return Vec::new();
    }
    g.productions_of(&g.start)
        .filter(|p| matches!(p.root, Symbol::Enc { .. }) && p.children.last() == Some(&key))
        .map(|p| {
            let n = p.children.len() - 1;
            p.children[..n].iter().map(|z| AbstractValue::new(z.clone(), &g.prods)).collect()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Provenance trees

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProvTree {
    Sensor { id: SensorId, label: Label },
    Value { value: Literal, label: Label },
    Fun { name: Name, label: Label, children: Vec<Arc<ProvTree>> },
    Enc { label: Label, children: Vec<Arc<ProvTree>>, key: Name },
}

impl ProvTree {
    pub fn symbol(&self) -> Symbol {
        match self {
            ProvTree::Sensor { id, label } => Symbol::sensor(*id, label),
            ProvTree::Value { value, label } => Symbol::value(value, label),
            ProvTree::Fun { name, label, children } => Symbol::fun(name, label, children.len()),
            ProvTree::Enc { label, children, .. } => Symbol::enc(children.len(), label),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            ProvTree::Sensor { .. } | ProvTree::Value { .. } => 1,
            ProvTree::Fun { children, .. } => 1 + children.iter().map(|c| c.depth()).max().unwrap_or(0),
            // the key leaf counts as a child
            ProvTree::Enc { children, .. } => 1 + children.iter().map(|c| c.depth()).max().unwrap_or(0).max(1),
        }
    }

    /// Whether the tree has the leaf `i^l`.
    pub fn has_sensor_leaf(&self, i: SensorId, l: &Label) -> bool {
        match self {
            ProvTree::Sensor { id, label } => *id == i && label == l,
            ProvTree::Value { .. } => false,
            ProvTree::Fun { children, .. } | ProvTree::Enc { children, .. } => {
                children.iter().any(|c| c.has_sensor_leaf(i, l))
            }
        }
    }

    pub fn sensor_leaves(&self, out: &mut BTreeSet<(Label, SensorId)>) {
        match self {
            ProvTree::Sensor { id, label } => {
                out.insert((label.clone(), *id));
            }
            ProvTree::Value { .. } => {}
            ProvTree::Fun { children, .. } | ProvTree::Enc { children, .. } => {
                children.iter().for_each(|c| c.sensor_leaves(out))
            }
        }
    }
}

impl fmt::Display for ProvTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProvTree::Sensor { .. } | ProvTree::Value { .. } => write!(f, "{}", self.symbol()),
            ProvTree::Fun { children, .. } => {
                let cs: Vec<String> = children.iter().map(|c| c.to_string()).collect();
                write!(f, "{}({})", self.symbol(), cs.join(", "))
            }
            ProvTree::Enc { children, key, .. } => {
                let cs: Vec<String> = children.iter().map(|c| c.to_string()).collect();
                write!(f, "{}({}, {key})", self.symbol(), cs.join(", "))
            }
        }
    }
}

/// Exact membership of a finite tree, memoized on (subtree, nonterminal).
pub fn lang_member(t: &ProvTree, g: &AbstractValue) -> bool {
    let mut by_head: HashMap<&NonTerminal, Vec<&Production>> = HashMap::new();
    for p in g.prods.iter() {
        by_head.entry(p.head()).or_default().push(p);
    }
    let mut memo = HashMap::new();
    derives(&by_head, &g.start, t, &mut memo)
}

type Memo<'a> = HashMap<(*const ProvTree, &'a NonTerminal), bool>;

fn derives<'a>(
    by_head: &HashMap<&'a NonTerminal, Vec<&'a Production>>,
    nt: &'a NonTerminal,
    t: &ProvTree,
    memo: &mut Memo<'a>,
) -> bool {
    let key = (t as *const ProvTree, nt);
    if let Some(b) = memo.get(&key) {
        return *b;
    }
    let sym = t.symbol();
    let mut ok = false;
    for p in by_head.get(nt).into_iter().flatten() {
        if p.root != sym {
            continue;
        }
        ok = match t {
            ProvTree::Sensor { .. } | ProvTree::Value { .. } => true,
            ProvTree::Fun { children, .. } => {
                p.children.len() == children.len()
                    && p.children.iter().zip(children).all(|(z, c)| derives(by_head, z, c, memo))
            }
            ProvTree::Enc { children, key, .. } => {
                let n = children.len();
                p.children.len() == n + 1
                    && p.children[..n].iter().zip(children).all(|(z, c)| derives(by_head, z, c, memo))
                    && by_head
                        .get(&p.children[n])
                        .is_some_and(|ps| ps.iter().any(|kp| kp.root == Symbol::key(key)))
            }
        };
        if ok {
            break;
        }
    }
    memo.insert(key, ok);
    ok
}

/// Trees of `Lang(g)` with depth at most `max_depth` (key leaves included),
/// stopping after `limit` trees. Deterministic order.
pub fn enumerate_trees(g: &AbstractValue, max_depth: usize, limit: usize) -> Vec<ProvTree> {
    let mut by_head: BTreeMap<&NonTerminal, Vec<&Production>> = BTreeMap::new();
    for p in g.prods.iter() {
        by_head.entry(p.head()).or_default().push(p);
    }
    let mut cache = HashMap::new();
    trees_of(&by_head, &g.start, max_depth, limit, &mut cache)
        .into_iter()
        .filter_map(|p| match p {
            Piece::Tree(t) => Some((*t).clone()),
            Piece::Key(_) => None,
        })
        .collect()
}

/// A derived subtree, or a key leaf below an encryption.
#[derive(Clone)]
enum Piece {
    Tree(Arc<ProvTree>),
    Key(Name),
}

type TreeCache<'a> = HashMap<(&'a NonTerminal, usize), Vec<Piece>>;

fn trees_of<'a>(
    by_head: &BTreeMap<&'a NonTerminal, Vec<&'a Production>>,
    nt: &'a NonTerminal,
    depth: usize,
    limit: usize,
    cache: &mut TreeCache<'a>,
) -> Vec<Piece> {
    if depth == 0 {
        return Vec::new();
    }
    if let Some(v) = cache.get(&(nt, depth)) {
        return v.clone();
    }
    let mut out = Vec::new();
    for p in by_head.get(nt).into_iter().flatten() {
        if out.len() >= limit {
            break;
        }
        let kids: Vec<Vec<Piece>> =
            p.children.iter().map(|z| trees_of(by_head, z, depth - 1, limit, cache)).collect();
        if kids.iter().any(|k| k.is_empty()) {
            continue;
        }
        let mut idx = vec![0usize; kids.len()];
        loop {
            let picked: Vec<Piece> = idx.iter().zip(&kids).map(|(i, k)| k[*i].clone()).collect();
            if let Some(t) = assemble(&p.root, picked) {
                out.push(t);
            }
            if out.len() >= limit {
                break;
            }
            // odometer increment; done when it wraps around
            let mut pos = 0;
            while pos < idx.len() {
                idx[pos] += 1;
                if idx[pos] < kids[pos].len() {
                    break;
                }
                idx[pos] = 0;
                pos += 1;
            }
            if pos == idx.len() {
                break;
            }
        }
    }
    cache.insert((nt, depth), out.clone());
    out
}

fn assemble(root: &Symbol, mut kids: Vec<Piece>) -> Option<Piece> {
    let trees = |kids: Vec<Piece>| -> Option<Vec<Arc<ProvTree>>> {
        kids.into_iter()
            .map(|k| match k {
                Piece::Tree(t) => Some(t),
                Piece::Key(_) => None,
            })
            .collect()
    };
    let t = match root {
        Symbol::Sensor { id, label } => ProvTree::Sensor { id: *id, label: label.clone() },
        Symbol::Value { value, label } => ProvTree::Value { value: value.clone(), label: label.clone() },
        Symbol::Fun { name, label, .. } => {
            ProvTree::Fun { name: name.clone(), label: label.clone(), children: trees(kids)? }
        }
        Symbol::Enc { label, .. } => {
            let key = match kids.pop()? {
                Piece::Key(k) => k,
                Piece::Tree(_) => return None,
            };
            ProvTree::Enc { label: label.clone(), children: trees(kids)?, key }
        }
        Symbol::Key { key } => return Some(Piece::Key(key.clone())),
    };
    Some(Piece::Tree(Arc::new(t)))
}

/// A tree of minimal height in `Lang(g)`, if the language is nonempty.
pub fn min_tree(g: &AbstractValue) -> Option<ProvTree> {
    let mut best: BTreeMap<&NonTerminal, Piece> = BTreeMap::new();
    loop {
        let mut changed = false;
        for p in g.prods.iter() {
            if best.contains_key(p.head()) {
                continue;
            }
            let kids: Option<Vec<Piece>> = p.children.iter().map(|z| best.get(z).cloned()).collect();
            if let Some(t) = kids.and_then(|k| assemble(&p.root, k)) {
                best.insert(p.head(), t);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    match best.get(&g.start) {
        Some(Piece::Tree(t)) => Some((**t).clone()),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// Tagging

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tag {
    Secret,
    Public,
    Confined,
    Open,
    Unit,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TaggingScheme {
    /// secret/public; encryption hides its content
    Secrecy { secret: BTreeSet<(Label, SensorId)> },
    /// confined/open; anonymisers hide their arguments
    Confinement { confined: BTreeSet<(Label, SensorId)>, anonymisers: BTreeSet<Name>, enc_cuts: bool },
    Constant(Tag),
}

impl TaggingScheme {
    fn tags(&self) -> (Tag, Tag) {
        match self {
            TaggingScheme::Secrecy { .. } => (Tag::Secret, Tag::Public),
            TaggingScheme::Confinement { .. } => (Tag::Confined, Tag::Open),
            TaggingScheme::Constant(t) => (*t, *t),
        }
    }
    fn classified(&self, s: &Symbol) -> bool {
        match (self, s) {
            (TaggingScheme::Secrecy { secret }, Symbol::Sensor { id, label }) => {
                secret.contains(&(label.clone(), *id))
            }
            (TaggingScheme::Confinement { confined, .. }, Symbol::Sensor { id, label }) => {
                confined.contains(&(label.clone(), *id))
            }
            _ => false,
        }
    }
    fn cuts(&self, s: &Symbol) -> bool {
        match (self, s) {
            (TaggingScheme::Secrecy { .. }, Symbol::Enc { .. }) => true,
            (TaggingScheme::Confinement { enc_cuts, .. }, Symbol::Enc { .. }) => *enc_cuts,
            (TaggingScheme::Confinement { anonymisers, .. }, Symbol::Fun { name, .. }) => {
                anonymisers.contains(name)
            }
            _ => false,
        }
    }
}

/// Tree-level tagging (the drop semantics).
pub fn tree_tag(t: &ProvTree, scheme: &TaggingScheme) -> Tag {
    let (hi, lo) = scheme.tags();
    fn drop(t: &ProvTree, s: &TaggingScheme) -> bool {
        let sym = t.symbol();
        if s.cuts(&sym) {
            return false;
        }
        match t {
            ProvTree::Sensor { .. } => s.classified(&sym),
            ProvTree::Value { .. } => false,
            ProvTree::Fun { children, .. } | ProvTree::Enc { children, .. } => {
                children.iter().any(|c| drop(c, s))
            }
        }
    }
    if drop(t, scheme) {
        hi
    } else {
        lo
    }
}

/// Grammar-level tagging: the high tag iff a classified sensor leaf is
/// reachable from the start without crossing a cutting symbol.
pub fn apply_tagging(g: &AbstractValue, scheme: &TaggingScheme) -> Tag {
    let (hi, lo) = scheme.tags();
    let mut seen: BTreeSet<&NonTerminal> = BTreeSet::new();
    let mut stack = vec![&g.start];
    while let Some(nt) = stack.pop() {
        if !seen.insert(nt) {
            continue;
        }
        for p in g.productions_of(nt) {
            if scheme.cuts(&p.root) {
                continue;
            }
            if scheme.classified(&p.root) {
                return hi;
            }
            stack.extend(p.children.iter());
        }
    }
    lo
}

/// Checks `tree_tag(t) == grammar_tag` on every sample that belongs to
/// `Lang(g)`. Samples outside the language are rejected.
pub fn agreement_with(
    tree_tag: impl Fn(&ProvTree) -> Tag,
    grammar_tag: Tag,
    g: &AbstractValue,
    samples: &[ProvTree],
) -> bool {
    samples.iter().all(|t| lang_member(t, g) && tree_tag(t) == grammar_tag)
}

pub fn tagging_agreement_check(scheme: &TaggingScheme, g: &AbstractValue, samples: &[ProvTree]) -> bool {
    agreement_with(|t| tree_tag(t, scheme), apply_tagging(g, scheme), g, samples)
}

// ---------------------------------------------------------------------------
// JSON form

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductionJson {
    pub head: Symbol,
    pub root: Symbol,
    pub children: Vec<Symbol>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrammarJson {
    pub start: Symbol,
    pub productions: Vec<ProductionJson>,
}

impl From<&AbstractValue> for GrammarJson {
    fn from(g: &AbstractValue) -> Self {
        GrammarJson {
            start: g.start.clone(),
            productions: g
                .prods
                .iter()
                .map(|p| ProductionJson { head: p.head().clone(), root: p.root.clone(), children: p.children.clone() })
                .collect(),
        }
    }
}

impl GrammarJson {
    pub fn to_value(&self) -> Result<AbstractValue, String> {
        let mut set = BTreeSet::new();
        for p in &self.productions {
            if p.head != p.root {
                return Err(format!("production head {} does not match root {}", nt_name(&p.head), p.root));
            }
            if p.children.len() != p.root.rank() {
                return Err(format!("production for {} has {} children", p.root, p.children.len()));
            }
            set.insert(Production { root: p.root.clone(), children: p.children.clone() });
        }
        Ok(AbstractValue::new(self.start.clone(), &set))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::name;

    fn cp() -> Label {
        Label::new("cp")
    }
    fn iota() -> AbstractValue {
        AbstractValue::leaf(Symbol::sensor(1, &cp()))
    }
    fn nu() -> AbstractValue {
        AbstractValue::apply(Symbol::fun(&name("noiseRed"), &cp(), 1), &[&iota()])
    }
    fn leaf1() -> ProvTree {
        ProvTree::Sensor { id: 1, label: cp() }
    }
    fn noise_tree() -> ProvTree {
        ProvTree::Fun { name: name("noiseRed"), label: cp(), children: vec![Arc::new(leaf1())] }
    }

    #[test]
    fn iota_and_nu_membership() {
        assert!(lang_member(&leaf1(), &iota()));
        assert!(lang_member(&noise_tree(), &nu()));
        assert!(!lang_member(&leaf1(), &nu()));
        assert!(!lang_member(&noise_tree(), &iota()));
    }

    #[test]
    fn nu_has_two_productions() {
        let n = nu();
        assert_eq!(n.prods.len(), 2);
        assert_eq!(n.to_string(), "(NoiseRed^cp, {I1^cp -> 1^cp, NoiseRed^cp -> noiseRed^cp(I1^cp)})");
    }

    #[test]
    fn encryption_extracts_components() {
        let k = name("k");
        let eps = AbstractValue::encrypt(&cp(), &[&nu()], &k);
        assert_eq!(eps.prods.len(), 4);
        assert_eq!(extract_decryption(&eps, &k), vec![vec![nu()]]);
        assert!(extract_decryption(&eps, &name("k2")).is_empty());
        assert!(extract_decryption(&iota(), &k).is_empty());
    }

    #[test]
    fn tags_of_running_values() {
        let k = name("k");
        let sec = TaggingScheme::Secrecy { secret: [(cp(), 1)].into_iter().collect() };
        assert_eq!(apply_tagging(&nu(), &sec), Tag::Secret);
        assert_eq!(apply_tagging(&AbstractValue::encrypt(&cp(), &[&nu()], &k), &sec), Tag::Public);
        let conf = TaggingScheme::Confinement {
            confined: [(cp(), 1)].into_iter().collect(),
            anonymisers: [name("an")].into_iter().collect(),
            enc_cuts: false,
        };
        let y = AbstractValue::apply(Symbol::fun(&name("an"), &Label::new("a"), 1), &[&nu()]);
        assert_eq!(apply_tagging(&y, &conf), Tag::Open);
        assert_eq!(apply_tagging(&nu(), &conf), Tag::Confined);
    }

    #[test]
    fn min_tree_and_enumeration() {
        assert_eq!(min_tree(&nu()), Some(noise_tree()));
        let k = name("k");
        let eps = AbstractValue::encrypt(&cp(), &[&nu()], &k);
        let ts = enumerate_trees(&eps, 4, 100);
        assert_eq!(ts.len(), 1);
        assert!(lang_member(&ts[0], &eps));
        assert_eq!(ts[0].to_string(), "enc_1^cp(noiseRed^cp(1^cp), k)");
    }

    #[test]
    fn json_round_trip() {
        let g = AbstractValue::encrypt(&cp(), &[&nu()], &name("k"));
        let j = serde_json::to_string(&GrammarJson::from(&g)).unwrap();
        let back: GrammarJson = serde_json::from_str(&j).unwrap();
        assert_eq!(back.to_value().unwrap(), g);
    }
}
