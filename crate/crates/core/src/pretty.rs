//! Printer for the concrete syntax. `parse_program(&print_program(p))`
//! gives back `p` for well-formed programs whose atoms are declared.

use std::fmt::Write;

use crate::ast::*;

pub fn print_literal(v: &Literal) -> String {
    match v {
        Literal::Int(n) => n.to_string(),
        Literal::Bool(b) => b.to_string(),
        Literal::Atom(a) => a.to_string(),
        Literal::Str(s) => {
            let mut out = String::from("\"");
            for c in s.chars() {
                match c {
                    '"' => out.push_str("\\\""),
                    '\\' => out.push_str("\\\\"),
                    '\n' => out.push_str("\\n"),
                    '\t' => out.push_str("\\t"),
                    '\r' => out.push_str("\\r"),
                    c => out.push(c),
                }
            }
            out.push('"');
            out
        }
    }
}

fn infix(f: &str) -> Option<&'static str> {
    Builtin::ALL.iter().find(|b| b.name() == f).and_then(|b| b.infix())
}

fn join<T>(xs: &[T], f: impl Fn(&T) -> String) -> String {
    xs.iter().map(f).collect::<Vec<_>>().join(", ")
}

pub fn print_term(t: &Term) -> String {
    match t {
        Term::Value(v) => print_literal(v),
        Term::SensorLoc(i) => format!("#{i}"),
        Term::Var(x) => x.to_string(),
        Term::App(f, args) => match (infix(f), args.as_slice()) {
            (Some(op), [a, b]) => format!("({} {op} {})", print_term(a), print_term(b)),
            _ => format!("{f}({})", join(args, print_term)),
        },
        Term::Enc(args, k) => format!("{{{}}}_{k}", join(args, print_term)),
    }
}

fn pattern(ms: &[Term], xs: &[Name]) -> String {
    format!("{}; {}", join(ms, print_term), join(xs, |x| x.to_string()))
}

pub fn print_process(p: &Process) -> String {
    match p {
        Process::Nil => "0".into(),
        Process::MultiOut { terms, targets, cont } => {
            let ls: Vec<String> = targets.iter().map(|l| l.to_string()).collect();
            format!("out({}) to {{{}}}. {}", join(terms, print_term), ls.join(", "), print_process(cont))
        }
        Process::Input { matches, binders, cont } => {
            format!("in({}). {}", pattern(matches, binders), print_process(cont))
        }
        Process::Cond { guard, then_p, else_p } => format!(
            "if {} then ({}) else ({})",
            print_term(guard),
            print_process(then_p),
            print_process(else_p)
        ),
        Process::IterVar(h) => h.to_string(),
        Process::Iter(h, body) => format!("mu {h}. {}", print_process(body)),
        Process::Assign { var, rhs, cont } => {
            format!("{var} := {}. {}", print_term(rhs), print_process(cont))
        }
        Process::ActCmd { actuator, action, cont } => {
            format!("act({actuator}, {action}). {}", print_process(cont))
        }
        Process::Decrypt { subject, matches, binders, key, cont } => format!(
            "decrypt {} as {{{}}}_{key} in {}",
            print_term(subject),
            pattern(matches, binders),
            print_process(cont)
        ),
    }
}

pub fn print_sensor(s: &SensorBody) -> String {
    match s {
        SensorBody::Nil => "0".into(),
        SensorBody::Tau(k) => format!("tau. {}", print_sensor(k)),
        SensorBody::Probe(i, k) => format!("probe(#{i}). {}", print_sensor(k)),
        SensorBody::IterVar(h) => h.to_string(),
        SensorBody::Iter(h, k) => format!("mu {h}. {}", print_sensor(k)),
    }
}

pub fn print_actuator(a: &ActuatorBody) -> String {
    match a {
        ActuatorBody::Nil => "0".into(),
        ActuatorBody::Tau(k) => format!("tau. {}", print_actuator(k)),
        ActuatorBody::Await(j, gs, k) => {
            let gs: Vec<&str> = gs.iter().map(|g| &**g).collect();
            format!("(|{j}, {{{}}}|). {}", gs.join(", "), print_actuator(k))
        }
        ActuatorBody::Triggered(g, k) => format!("{g}. {}", print_actuator(k)),
        ActuatorBody::IterVar(h) => h.to_string(),
        ActuatorBody::Iter(h, k) => format!("mu {h}. {}", print_actuator(k)),
    }
}

fn refs(xs: &std::collections::BTreeSet<(Label, SensorId)>) -> String {
    join(&xs.iter().collect::<Vec<_>>(), |(l, i)| format!("{l}.{i}"))
}

fn preamble(prog: &Program, out: &mut String) {
    let defaults = FunTable::default();
    for (f, sig) in &prog.funs.sigs {
        if defaults.get(f) == Some(sig) {
            continue;
        }
        let tag = match sig.eval {
            EvalTag::Uninterpreted => "uninterpreted",
            EvalTag::IsACar => "is_a_car",
            EvalTag::Builtin(b) => b.name(),
        };
        let _ = writeln!(out, "fun {f}/{} = {tag};", sig.arity.unwrap_or(0));
    }
    if !prog.keys.is_empty() {
        let ks: Vec<&str> = prog.keys.iter().map(|k| &**k).collect();
        let _ = writeln!(out, "key {};", ks.join(", "));
    }
    if !prog.atoms.is_empty() {
        let xs: Vec<&str> = prog.atoms.iter().map(|k| &**k).collect();
        let _ = writeln!(out, "atom {};", xs.join(", "));
    }
    let edges = |es: &std::collections::BTreeSet<(Label, Label)>| {
        join(&es.iter().collect::<Vec<_>>(), |(a, b)| format!("{a} -> {b}"))
    };
    match &prog.comp {
        CompRelation::All { except } if except.is_empty() => {}
        CompRelation::All { except } => {
            let _ = writeln!(out, "comp all except {{{}}};", edges(except));
        }
        CompRelation::Only(es) => {
            let _ = writeln!(out, "comp {{{}}};", edges(es));
        }
    }
    for ((l, i), s) in &prog.scripts {
        let mode = match s.mode {
            ScriptMode::Cycle => "cycle",
            ScriptMode::Hold => "hold",
            ScriptMode::Stuck => "stuck",
        };
        let _ = writeln!(out, "script {l}.{i} = [{}] {mode};", join(&s.values, print_literal));
    }
    let pol = &prog.policy;
    for (kw, set) in [("camera", &prog.cameras), ("secret", &pol.secret), ("confined", &pol.confined)] {
        if !set.is_empty() {
            let _ = writeln!(out, "{kw} {};", refs(set));
        }
    }
    if !pol.anonymisers.is_empty() {
        let xs: Vec<&str> = pol.anonymisers.iter().map(|k| &**k).collect();
        let _ = writeln!(out, "anonymiser {};", xs.join(", "));
    }
    for (l, n) in &pol.levels {
        let _ = writeln!(out, "level {l} = {n};");
    }
    if let Some(a) = &pol.allowed {
        let ls: Vec<String> = a.iter().map(|l| l.to_string()).collect();
        let _ = writeln!(out, "allowed {{{}}};", ls.join(", "));
    }
    for (l, ts) in pol.flows.iter().flatten() {
        let ls: Vec<String> = ts.iter().map(|l| l.to_string()).collect();
        let _ = writeln!(out, "flow {l} -> {{{}}};", ls.join(", "));
    }
}

pub fn print_program(prog: &Program) -> String {
    let mut out = String::new();
    preamble(prog, &mut out);
    if !out.is_empty() {
        out.push('\n');
    }
    out.push_str("system {\n");
    for n in &prog.system.nodes {
        let _ = writeln!(out, "  node {} {{", n.label);
        for c in &n.components {
            let line = match c {
                Component::Store(s) if s.vars.is_empty() => "store".to_string(),
                Component::Store(s) => format!("store {{{}}}", join(&s.vars, |x| x.to_string())),
                Component::Proc(p) => format!("proc {}", print_process(p)),
                Component::Sensor(b, i) => format!("sensor {i}: {}", print_sensor(b)),
                Component::Actuator(b, j) => format!("actuator {j}: {}", print_actuator(b)),
            };
            let _ = writeln!(out, "    {line}");
        }
        out.push_str("  }\n");
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::{parse_program, parse_term};

    #[test]
    fn term_round_trip() {
        for s in ["(x + 1)", "{z', #1}_k", "f(a, (b >= -3))", "\"a\\\"b\"", "tuple()"] {
            assert_eq!(print_term(&parse_term(s).unwrap()), s);
        }
    }

    #[test]
    fn program_round_trip() {
        let src = "fun an/1 = uninterpreted;\nkey k;\natom car;\n\nsystem {\n  node a {\n    store {x}\n    proc mu h. in(; x). if (x = car) then (decrypt x as {car; y}_k in act(1, on). h) else (out(an(x)) to {a}. 0)\n    actuator 1: mu h. (|1, {off, on}|). on. h\n  }\n}\n";
        let p = parse_program(src).unwrap();
        assert_eq!(print_program(&p), src);
    }
}
