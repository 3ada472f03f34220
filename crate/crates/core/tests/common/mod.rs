#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::Arc;

use ilysa::ast::{name, Label, Literal, Program};
use ilysa::cfa::{generate_constraints, solve_above, AnalysisOptions, Estimate};
use ilysa::semantics::Location;
use ilysa::parser::parse_program;
use ilysa::treegram::{AbstractValue, Production, ProvTree, Symbol};
use rand::seq::{IteratorRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn corpus_path(file: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("corpus").join(file)
}

pub fn corpus(file: &str) -> Program {
    let text = std::fs::read_to_string(corpus_path(file)).unwrap();
    parse_program(&text).unwrap_or_else(|e| panic!("{file}: {e:?}"))
}

pub const CORPUS: [&str; 4] =
    ["ping.ilysa", "street_light.ilysa", "street_light_amended.ilysa", "street_light_no_turnoff.ilysa"];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// Random small systems: at most 3 nodes and 12 process constructs.

const VARS: [&str; 3] = ["x", "y", "z"];

struct Gen<'a> {
    rng: &'a mut ChaCha8Rng,
    labels: Vec<String>,
    sensors: Vec<u32>,
    actuator: bool,
    budget: usize,
}

impl Gen<'_> {
    fn leaf(&mut self) -> String {
        match self.rng.gen_range(0..6) {
            0 => self.rng.gen_range(0..4).to_string(),
            1 => ["true", "false"].choose(self.rng).unwrap().to_string(),
            2 => ["a", "b"].choose(self.rng).unwrap().to_string(),
            3 if !self.sensors.is_empty() => format!("#{}", self.sensors.choose(self.rng).unwrap()),
            _ => VARS.choose(self.rng).unwrap().to_string(),
        }
    }

    fn term(&mut self, depth: usize) -> String {
        if depth == 0 || self.rng.gen_bool(0.5) {
            return self.leaf();
        }
        let d = depth - 1;
        match self.rng.gen_range(0..5) {
            0 => format!("f({})", self.term(d)),
            1 => format!("g({}, {})", self.term(d), self.term(d)),
            2 => format!("({} + {})", self.term(d), self.term(d)),
            3 => format!("({} = {})", self.term(d), self.term(d)),
            _ => format!("{{{}}}_k", self.term(d)),
        }
    }

    fn pattern(&mut self) -> String {
        let r = self.rng.gen_range(1..=2);
        let j = self.rng.gen_range(0..=r);
        let ms: Vec<String> = (0..j).map(|_| self.leaf()).collect();
        let xs: Vec<String> = (j..r).map(|_| VARS.choose(self.rng).unwrap().to_string()).collect();
        format!("{}; {}", ms.join(", "), xs.join(", "))
    }

    fn seq(&mut self, tail: &str, depth: usize) -> String {
        let mut out = String::new();
        loop {
            if self.budget == 0 || self.rng.gen_bool(0.15) {
                out.push_str(tail);
                return out;
            }
            self.budget -= 1;
            match self.rng.gen_range(0..7) {
                0 | 1 => {
                    let x = VARS.choose(self.rng).unwrap();
                    out += &format!("{x} := {}. ", self.term(2));
                }
                2 => {
                    let r = self.rng.gen_range(1..=2);
                    let ts: Vec<String> = (0..r).map(|_| self.term(2)).collect();
                    let mut ls = self.labels.clone();
                    ls.shuffle(self.rng);
                    ls.truncate(self.rng.gen_range(1..=self.labels.len()));
                    out += &format!("out({}) to {{{}}}. ", ts.join(", "), ls.join(", "));
                }
                3 => out += &format!("in({}). ", self.pattern()),
                4 if self.actuator => {
                    out += &format!("act(9, {}). ", ["on", "off"].choose(self.rng).unwrap());
                }
                5 => {
                    let subject = self.term(1);
                    out += &format!("decrypt {subject} as {{{}}}_k in ", self.pattern());
                }
                6 if depth < 2 => {
                    let guard = self.term(1);
                    let a = self.seq(tail, depth + 1);
                    let b = self.seq(tail, depth + 1);
                    out += &format!("if {guard} then ({a}) else ({b})");
                    return out;
                }
                _ => {
                    let x = VARS.choose(self.rng).unwrap();
                    out += &format!("{x} := {}. ", self.leaf());
                }
            }
        }
    }
}

/// Source text of a random well-formed system.
pub fn random_source(seed: u64) -> String {
    let mut rng = rng(seed);
    let n = rng.gen_range(1..=3);
    let labels: Vec<String> = (0..n).map(|i| format!("n{i}")).collect();
    let mut pre = String::from("fun f/1;\nfun g/2;\nkey k;\natom a, b;\n");
    if n > 1 && rng.gen_bool(0.3) {
        pre += "comp all except {n0 -> n1};\n";
    }
    let mut body = String::from("system {\n");
    let mut budget = 12;
    for (idx, l) in labels.iter().enumerate() {
        let sensors: Vec<u32> = (1..=rng.gen_range(0..=2)).collect();
        let actuator = rng.gen_bool(0.4);
        for i in &sensors {
            let vs: Vec<String> = (0..rng.gen_range(1..=3)).map(|_| rng.gen_range(0..4).to_string()).collect();
            pre += &format!("script {l}.{i} = [{}] cycle;\n", vs.join(", "));
        }
        body += &format!("  node {l} {{\n    store\n");
        for i in &sensors {
            let tau = if rng.gen_bool(0.5) { "tau. " } else { "" };
            body += &format!("    sensor {i}: mu h. probe(#{i}). {tau}h\n");
        }
        if actuator {
            body += "    actuator 9: mu h. (|9, {on, off}|). h\n";
        }
        let procs = rng.gen_range(1..=2);
        for p in 0..procs {
            // leave something for the nodes still to come
            let share = if idx + 1 == n && p + 1 == procs { budget } else { budget.min(rng.gen_range(1..=6)) };
            let rest = budget - share;
            let mut g = Gen { rng: &mut rng, labels: labels.clone(), sensors: sensors.clone(), actuator, budget: share };
            let text = if g.rng.gen_bool(0.7) { format!("mu h. {}", g.seq("h", 0)) } else { g.seq("0", 0) };
            budget = rest + g.budget;
            body += &format!("    proc {text}\n");
        }
        body += "  }\n";
    }
    body += "}\n";
    pre + &body
}

pub fn random_program(seed: u64) -> Program {
    let src = random_source(seed);
    parse_program(&src).unwrap_or_else(|e| panic!("generated source does not parse: {e:?}\n{src}"))
}

// ---------------------------------------------------------------------------
// Brute-force derivation enumeration, independent of the library's own.

fn build(p: &Production, kids: &[Arc<ProvTree>], key: Option<&str>) -> ProvTree {
    match &p.root {
        Symbol::Sensor { id, label } => ProvTree::Sensor { id: *id, label: label.clone() },
        Symbol::Value { value, label } => ProvTree::Value { value: value.clone(), label: label.clone() },
        Symbol::Fun { name, label, .. } => ProvTree::Fun { name: name.clone(), label: label.clone(), children: kids.to_vec() },
        Symbol::Enc { label, .. } => {
            ProvTree::Enc { label: label.clone(), children: kids.to_vec(), key: name(key.unwrap()) }
        }
        Symbol::Key { .. } => unreachable!("keys are not trees"),
    }
}

/// Every tree of depth at most `depth` derivable from `nt`, or `None` past
/// `cap` trees.
pub fn derivations(g: &AbstractValue, nt: &Symbol, depth: usize, cap: usize) -> Option<BTreeSet<ProvTree>> {
    let mut out = BTreeSet::new();
    if depth == 0 {
        return Some(out);
    }
    for p in g.prods.iter().filter(|p| &p.root == nt) {
        let (kids, key) = match &p.root {
            Symbol::Key { .. } => continue,
            Symbol::Enc { .. } => {
                // the key leaf sits one level down
                if depth < 2 {
                    continue;
                }
                let n = p.children.len() - 1;
                let Symbol::Key { key } = &p.children[n] else { continue };
                // the key leaf itself needs a production
                if !g.prods.contains(&Production::leaf(p.children[n].clone())) {
                    continue;
                }
                (&p.children[..n], Some(key.to_string()))
            }
            _ => (&p.children[..], None),
        };
        let mut combos: Vec<Vec<Arc<ProvTree>>> = vec![Vec::new()];
        for c in kids {
            let ts = derivations(g, c, depth - 1, cap)?;
            let mut next = Vec::new();
            for prefix in &combos {
                for t in &ts {
                    let mut v = prefix.clone();
                    v.push(Arc::new(t.clone()));
                    next.push(v);
                }
            }
            if next.len() > cap {
                return None;
            }
            combos = next;
        }
        for ks in combos {
            out.insert(build(p, &ks, key.as_deref()));
        }
        if out.len() > cap {
            return None;
        }
    }
    Some(out)
}

pub fn language(g: &AbstractValue, depth: usize, cap: usize) -> Option<BTreeSet<ProvTree>> {
    derivations(g, &g.start, depth, cap)
}

// ---------------------------------------------------------------------------
// Random grammars and trees over a small alphabet.

pub fn alphabet() -> Vec<Symbol> {
    let l0 = Label::new("l0");
    let l1 = Label::new("l1");
    vec![
        Symbol::sensor(1, &l0),
        Symbol::sensor(2, &l1),
        Symbol::value(&Literal::Int(0), &l0),
        Symbol::fun(&name("f"), &l0, 1),
        Symbol::fun(&name("g"), &l1, 2),
        Symbol::enc(1, &l1),
    ]
}

fn key() -> Symbol {
    Symbol::key(&name("k"))
}

pub fn random_grammar(rng: &mut ChaCha8Rng) -> AbstractValue {
    let syms = alphabet();
    let mut prods = BTreeSet::new();
    for s in &syms {
        if s.rank() == 0 {
            if rng.gen_bool(0.7) {
                prods.insert(Production::leaf(s.clone()));
            }
            continue;
        }
        for _ in 0..rng.gen_range(0..=2) {
            let mut children: Vec<Symbol> = (0..s.rank()).map(|_| syms.choose(rng).unwrap().clone()).collect();
            if let Symbol::Enc { .. } = s {
                *children.last_mut().unwrap() = key();
            }
            prods.insert(Production { root: s.clone(), children });
        }
    }
    if rng.gen_bool(0.8) {
        prods.insert(Production::leaf(key()));
    }
    let start = syms.choose(rng).unwrap().clone();
    AbstractValue::new(start, &prods)
}

pub fn random_tree(rng: &mut ChaCha8Rng, depth: usize) -> ProvTree {
    let syms = alphabet();
    let leaves: Vec<&Symbol> = syms.iter().filter(|s| s.rank() == 0).collect();
    let s = if depth <= 1 { (*leaves.choose(rng).unwrap()).clone() } else { syms.choose(rng).unwrap().clone() };
    let kids = |rng: &mut ChaCha8Rng, n: usize| (0..n).map(|_| Arc::new(random_tree(rng, depth - 1))).collect();
    match s {
        Symbol::Sensor { id, label } => ProvTree::Sensor { id, label },
        Symbol::Value { value, label } => ProvTree::Value { value, label },
        Symbol::Fun { name, label, arity } => ProvTree::Fun { name, label, children: kids(rng, arity) },
        Symbol::Enc { label, arity } => ProvTree::Enc { label, children: kids(rng, arity), key: name("k") },
        Symbol::Key { .. } => unreachable!(),
    }
}

// ---------------------------------------------------------------------------
// Estimates above the least one.

/// Every abstract value occurring anywhere in `e`.
pub fn universe(e: &Estimate) -> Vec<AbstractValue> {
    let mut out = BTreeSet::new();
    for m in e.sigma.values() {
        m.values().for_each(|s| out.extend(s.iter().cloned()));
    }
    for m in e.kappa.values() {
        m.values().flatten().for_each(|s| out.extend(s.iter().cloned()));
    }
    e.theta.values().for_each(|s| out.extend(s.iter().cloned()));
    out.into_iter().collect()
}

/// Sprinkles values of `pool` over random slots of `e`.
pub fn noise(p: &Program, e: &Estimate, pool: &[AbstractValue], seed: u64) -> Estimate {
    let mut rng = rng(seed);
    let mut out = e.clone();
    if pool.is_empty() {
        return out;
    }
    for _ in 0..rng.gen_range(1..6) {
        let n = p.system.nodes.choose(&mut rng).unwrap();
        let v = pool.choose(&mut rng).unwrap().clone();
        match rng.gen_range(0..3) {
            0 => {
                let loc = n
                    .variables()
                    .into_iter()
                    .map(Location::Var)
                    .chain(n.sensors().map(Location::Sensor))
                    .choose(&mut rng);
                if let Some(loc) = loc {
                    out.sigma.entry(n.label.clone()).or_default().entry(loc).or_default().insert(v);
                }
            }
            1 => {
                let from = p.system.nodes.choose(&mut rng).unwrap().label.clone();
                let r = rng.gen_range(1..=2);
                let e = out.kappa.entry(n.label.clone()).or_default().entry((from, r)).or_insert_with(|| vec![BTreeSet::new(); r]);
                for s in e.iter_mut() {
                    s.insert(pool.choose(&mut rng).unwrap().clone());
                }
            }
            _ => {
                out.theta.entry(n.label.clone()).or_default().insert(v);
            }
        }
    }
    out
}

/// A valid estimate above the least one. Noise can switch on recursive
/// clauses whose values grow exponentially; those give `None`.
pub fn candidate(p: &Program, base: &Estimate, seed: u64) -> Option<Estimate> {
    let cs = generate_constraints(&p.system, &p.comp);
    let small = AnalysisOptions { value_cap: 5_000, ..AnalysisOptions::default() };
    solve_above(&cs, &noise(p, base, &universe(base), seed), small).ok()
}
