//! Brute-force reference for tiny generator bounds: a flat namespace,
//! every concrete operation sequence, every persistence placement, and
//! every starting state, with no pruning at all.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use crashcheck::fstarget::FsOpKind;
use crashcheck::generator::{Bounds, FileSet, Generator, Workload};

/// A workload as text: sorted prologue lines, then body lines.
pub type Toy = (Vec<String>, Vec<String>);

fn args(kind: FsOpKind, names: &[&str]) -> Vec<Vec<String>> {
    let one = || names.iter().map(|n| vec![n.to_string()]).collect();
    let two = || {
        let mut v = Vec::new();
        for a in names {
            for b in names {
                if a != b {
                    v.push(vec![a.to_string(), b.to_string()]);
                }
            }
        }
        v
    };
    match kind {
        FsOpKind::Creat | FsOpKind::Unlink => one(),
        FsOpKind::Link | FsOpKind::Rename => two(),
        other => panic!("the toy reference does not model {other:?}"),
    }
}

fn verb(kind: FsOpKind) -> &'static str {
    match kind {
        FsOpKind::Creat => "creat",
        FsOpKind::Unlink => "unlink",
        FsOpKind::Link => "link",
        FsOpKind::Rename => "rename",
        _ => unreachable!(),
    }
}

/// Runs `lines` on a namespace where `present` names exist as distinct
/// files. Renaming a name onto another name of the same file is treated as
/// invalid, like the generator does.
fn executes(present: &BTreeSet<&str>, lines: &[String]) -> bool {
    let mut ns: BTreeMap<String, usize> = present.iter().enumerate().map(|(i, n)| (n.to_string(), i)).collect();
    let mut next = ns.len();
    for l in lines {
        let w: Vec<&str> = l.split(' ').collect();
        let ok = match w[0] {
            "creat" => {
                let fresh = !ns.contains_key(w[1]);
                ns.insert(w[1].into(), next);
                next += 1;
                fresh
            }
            "unlink" => ns.remove(w[1]).is_some(),
            "link" => match (ns.get(w[1]).copied(), ns.contains_key(w[2])) {
                (Some(i), false) => {
                    ns.insert(w[2].into(), i);
                    true
                }
                _ => false,
            },
            "rename" => match (ns.get(w[1]).copied(), ns.get(w[2]).copied()) {
                (Some(i), dst) if dst != Some(i) => {
                    ns.remove(w[1]);
                    ns.insert(w[2].into(), i);
                    true
                }
                _ => false,
            },
            "fsync" | "fdatasync" => w[1] == "/" || ns.contains_key(w[1]),
            "sync" => true,
            other => panic!("{other}"),
        };
        if !ok {
            return false;
        }
    }
    true
}

/// Every accepted workload for `ops` over the names, with `seq` operations.
pub fn brute_force(ops: &[FsOpKind], names: &[&str], seq: usize) -> Vec<Toy> {
    let mut bodies: Vec<(Vec<String>, BTreeSet<String>)> = vec![(Vec::new(), BTreeSet::new())];
    for _ in 0..seq {
        let mut next = Vec::new();
        for (ops_so_far, touched) in &bodies {
            for &k in ops {
                for a in args(k, names) {
                    let mut o = ops_so_far.clone();
                    o.push(format!("{} {}", verb(k), a.join(" ")));
                    let mut t = touched.clone();
                    t.extend(a);
                    next.push((o, t));
                }
            }
        }
        bodies = next;
    }
    let mut out = Vec::new();
    for (core, touched) in bodies {
        let mut targets = vec!["/".to_string()];
        targets.extend(touched);
        let slot = |last: bool| {
            let mut v: Vec<Option<String>> = if last { vec![] } else { vec![None] };
            for k in ["fsync", "fdatasync"] {
                v.extend(targets.iter().map(|t| Some(format!("{k} {t}"))));
            }
            v.push(Some("sync".into()));
            v
        };
        let mut placed: Vec<Vec<String>> = vec![Vec::new()];
        for (i, op) in core.iter().enumerate() {
            let mut next = Vec::new();
            for p in &placed {
                for s in slot(i + 1 == core.len()) {
                    let mut v = p.clone();
                    v.push(op.clone());
                    v.extend(s);
                    next.push(v);
                }
            }
            placed = next;
        }
        for body in placed {
            let mut best: Option<BTreeSet<&str>> = None;
            let mut ties = 0;
            for mask in 0..1u32 << names.len() {
                let present: BTreeSet<&str> =
                    names.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, n)| *n).collect();
                if !executes(&present, &body) {
                    continue;
                }
                match &best {
                    Some(b) if b.len() < present.len() => {}
                    Some(b) if b.len() == present.len() => ties += 1,
                    _ => {
                        best = Some(present);
                        ties = 0;
                    }
                }
            }
            if let Some(b) = best {
                assert_eq!(ties, 0, "ambiguous setup for {body:?}");
                out.push((b.iter().map(|n| format!("creat {n}")).collect(), body));
            }
        }
    }
    out
}

/// Image of a toy workload under swapping two names.
pub fn swap(t: &Toy, a: &str, b: &str) -> Toy {
    let f = |l: &String| {
        l.split(' ')
            .map(|w| if w == a { b } else if w == b { a } else { w })
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut pro: Vec<String> = t.0.iter().map(f).collect();
    pro.sort();
    (pro, t.1.iter().map(f).collect())
}

pub fn canonical(t: &Toy, names: &[&str]) -> Toy {
    assert_eq!(names.len(), 2, "one transposition generates the whole group");
    t.clone().min(swap(t, names[0], names[1]))
}

pub fn to_toy(w: &Workload) -> Toy {
    let mut pro: Vec<String> = w.prologue.iter().map(crashcheck::generator::dsl::format_op).collect();
    pro.sort();
    let text = w.to_dsl();
    let body_text = text.split("---body---\n").last().unwrap_or("");
    let body = body_text
        .lines()
        .filter(|l| !l.is_empty() && *l != "---crash---")
        .map(str::to_string)
        .collect();
    (pro, body)
}

pub fn toy_bounds(ops: &[FsOpKind], names: &[&str], seq: usize) -> Bounds {
    Bounds {
        seq_length: seq,
        allowed_ops: ops.to_vec(),
        file_set: FileSet::flat(names),
        ..Bounds::default()
    }
}

/// Compares the generator with the brute force for one toy configuration.
/// Returns (generated, orbits) or a description of the first difference.
pub fn compare_with_generator(ops: &[FsOpKind], names: &[&str], seq: usize) -> Result<(usize, usize), String> {
    let g = Generator::new(toy_bounds(ops, names, seq)).map_err(|e| e.to_string())?;
    let generated: Vec<Toy> = g.iter().filter_map(|c| c.outcome.ok()).map(|w| to_toy(&w)).collect();
    let gen_orbits: BTreeSet<Toy> = generated.iter().map(|t| canonical(t, names)).collect();
    if gen_orbits.len() != generated.len() {
        return Err(format!(
            "{ops:?} seq-{seq}: {} workloads fall in only {} symmetry classes",
            generated.len(),
            gen_orbits.len()
        ));
    }
    let reference: BTreeSet<Toy> = brute_force(ops, names, seq).iter().map(|t| canonical(t, names)).collect();
    if let Some(t) = reference.difference(&gen_orbits).next() {
        return Err(format!("{ops:?} seq-{seq}: generator misses {t:?}"));
    }
    if let Some(t) = gen_orbits.difference(&reference).next() {
        return Err(format!("{ops:?} seq-{seq}: generator invents {t:?}"));
    }
    Ok((generated.len(), reference.len()))
}
