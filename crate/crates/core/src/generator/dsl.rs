//! Line-oriented workload text: one operation per line, `#` comments,
//! an optional `---body---` line separating setup from the tested
//! operations, and an optional trailing `---crash---` marker.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fstarget::{ByteRange, FallocFlag, FsOp, FsOpKind, PersistKind, PersistOp};

pub const BODY_MARKER: &str = "---body---";
pub const CRASH_MARKER: &str = "---crash---";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Step {
    Op(FsOp),
    Persist(PersistOp),
}

/// The ordered operation kinds of a workload body.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct Skeleton(pub Vec<FsOpKind>);

impl fmt::Display for Skeleton {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.0.iter().map(|k| k.name()).collect();
        f.write_str(&names.join(","))
    }
}

impl FromStr for Skeleton {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.is_empty() {
            return Ok(Skeleton(Vec::new()));
        }
        s.split(',').map(|k| k.trim().parse()).collect::<Result<_, _>>().map(Skeleton)
    }
}

impl From<Skeleton> for String {
    fn from(s: Skeleton) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for Skeleton {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// Setup operations (made durable before recording starts) and the body under test.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Workload {
    pub prologue: Vec<FsOp>,
    pub body: Vec<Step>,
}

impl Workload {
    pub fn skeleton(&self) -> Skeleton {
        Skeleton(
            self.body
                .iter()
                .filter_map(|s| match s {
                    Step::Op(op) => Some(op.kind()),
                    Step::Persist(_) => None,
                })
                .collect(),
        )
    }

    pub fn persistence_points(&self) -> usize {
        self.body.iter().filter(|s| matches!(s, Step::Persist(_))).count()
    }

    pub fn ends_with_persistence(&self) -> bool {
        matches!(self.body.last(), Some(Step::Persist(_)))
    }

    pub fn to_dsl(&self) -> String {
        let mut out = String::new();
        for op in &self.prologue {
            out.push_str(&format_op(op));
            out.push('\n');
        }
        if !self.prologue.is_empty() {
            out.push_str(BODY_MARKER);
            out.push('\n');
        }
        for step in &self.body {
            match step {
                Step::Op(op) => out.push_str(&format_op(op)),
                Step::Persist(p) => out.push_str(&p.to_string()),
            }
            out.push('\n');
        }
        out.push_str(CRASH_MARKER);
        out.push('\n');
        out
    }

    pub fn parse(text: &str) -> Result<Workload, ParseError> {
        let mut lines: Vec<(usize, &str)> = Vec::new();
        let mut crashed = false;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if crashed {
                return Err(ParseError {
                    line: i + 1,
                    message: format!("nothing may follow {CRASH_MARKER}"),
                });
            }
            if line.eq_ignore_ascii_case(CRASH_MARKER) {
                crashed = true;
                continue;
            }
            lines.push((i + 1, line));
        }
        let split = lines.iter().position(|(_, l)| l.eq_ignore_ascii_case(BODY_MARKER));
        let (pro, body) = match split {
            Some(at) => (&lines[..at], &lines[at + 1..]),
            None => (&lines[..0], &lines[..]),
        };
        let mut w = Workload::default();
        for &(n, line) in pro {
            match parse_step(line).map_err(|message| ParseError { line: n, message })? {
                Step::Op(op) => w.prologue.push(op),
                Step::Persist(_) => {
                    return Err(ParseError {
                        line: n,
                        message: "persistence calls are not allowed in the prologue".into(),
                    })
                }
            }
        }
        for &(n, line) in body {
            if line.eq_ignore_ascii_case(BODY_MARKER) {
                return Err(ParseError {
                    line: n,
                    message: format!("duplicate {BODY_MARKER}"),
                });
            }
            let step = parse_step(line).map_err(|message| ParseError { line: n, message })?;
            if matches!(step, Step::Persist(_)) && !w.body.iter().any(|s| matches!(s, Step::Op(_))) {
                return Err(ParseError {
                    line: n,
                    message: "persistence call before the first operation".into(),
                });
            }
            w.body.push(step);
        }
        Ok(w)
    }
}

impl fmt::Display for Workload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_dsl())
    }
}

fn size(n: u64) -> String {
    const M: u64 = 1024 * 1024;
    if n != 0 && n % M == 0 {
        format!("{}M", n / M)
    } else if n != 0 && n % 1024 == 0 {
        format!("{}K", n / 1024)
    } else {
        n.to_string()
    }
}

fn range(r: &ByteRange) -> String {
    format!("({}-{})", size(r.start), size(r.end))
}

fn falloc_flag(f: FallocFlag) -> &'static str {
    match f {
        FallocFlag::None => "",
        FallocFlag::KeepSize => "-k ",
        FallocFlag::ZeroRange => "-z ",
        FallocFlag::PunchHole => "-p ",
        FallocFlag::PunchHoleKeepSize => "-pk ",
    }
}

pub fn format_op(op: &FsOp) -> String {
    match op {
        FsOp::Creat { path } => format!("creat {path}"),
        FsOp::Mkdir { path } => format!("mkdir {path}"),
        FsOp::Falloc { path, flag, range: r } => format!("falloc {}{} {path}", falloc_flag(*flag), range(r)),
        FsOp::Write { path, range: r } => format!("write {} {path}", range(r)),
        FsOp::Dwrite { path, range: r } => format!("dwrite {} {path}", range(r)),
        FsOp::Mwrite { path, range: r } => format!("mwrite {} {path}", range(r)),
        FsOp::Link { src, dst } => format!("link {src} {dst}"),
        FsOp::Symlink { target, path } => format!("symlink {target} {path}"),
        FsOp::Rename { src, dst } => format!("rename {src} {dst}"),
        FsOp::Unlink { path } => format!("unlink {path}"),
        FsOp::Remove { path } => format!("remove {path}"),
        FsOp::Rmdir { path } => format!("rmdir {path}"),
        FsOp::Truncate { path, size: s } => format!("truncate {path} {}", size(*s)),
        FsOp::Setxattr { path, name, value } => format!("setxattr {path} {name} {value}"),
        FsOp::Removexattr { path, name } => format!("removexattr {path} {name}"),
    }
}

fn parse_size(s: &str) -> Result<u64, String> {
    let (digits, mult) = match s.as_bytes().last() {
        Some(b'K' | b'k') => (&s[..s.len() - 1], 1024),
        Some(b'M' | b'm') => (&s[..s.len() - 1], 1024 * 1024),
        _ => (s, 1),
    };
    digits
        .parse::<u64>()
        .ok()
        .and_then(|n| n.checked_mul(mult))
        .ok_or_else(|| format!("bad size {s:?}"))
}

fn parse_range(s: &str) -> Result<ByteRange, String> {
    let inner = s
        .strip_prefix('(')
        .and_then(|r| r.strip_suffix(')'))
        .ok_or_else(|| format!("expected (start-end), got {s:?}"))?;
    let (a, b) = inner.split_once('-').ok_or_else(|| format!("expected (start-end), got {s:?}"))?;
    let r = ByteRange::new(parse_size(a.trim())?, parse_size(b.trim())?);
    if r.is_empty() {
        return Err(format!("empty range {s}"));
    }
    Ok(r)
}

fn parse_step(line: &str) -> Result<Step, String> {
    let words: Vec<&str> = line.split_whitespace().collect();
    let (cmd, args) = words.split_first().ok_or("empty line")?;
    let want = |n: usize| {
        if args.len() == n {
            Ok(())
        } else {
            Err(format!("{cmd} takes {n} argument(s), got {}", args.len()))
        }
    };
    let p = |i: usize| args[i].to_string();
    let persist = |kind| -> Result<Step, String> {
        want(1)?;
        Ok(Step::Persist(PersistOp::on(kind, args[0])))
    };
    let op = match *cmd {
        "creat" => {
            want(1)?;
            FsOp::Creat { path: p(0) }
        }
        "mkdir" => {
            want(1)?;
            FsOp::Mkdir { path: p(0) }
        }
        "write" | "dwrite" | "mwrite" => {
            want(2)?;
            let (path, range) = (p(1), parse_range(args[0])?);
            match *cmd {
                "write" => FsOp::Write { path, range },
                "dwrite" => FsOp::Dwrite { path, range },
                _ => FsOp::Mwrite { path, range },
            }
        }
        "falloc" => {
            let (flag, rest) = match args.first().copied() {
                Some("-k") => (FallocFlag::KeepSize, &args[1..]),
                Some("-z") => (FallocFlag::ZeroRange, &args[1..]),
                Some("-p") => (FallocFlag::PunchHole, &args[1..]),
                Some("-pk") => (FallocFlag::PunchHoleKeepSize, &args[1..]),
                _ => (FallocFlag::None, args),
            };
            if rest.len() != 2 {
                return Err("falloc takes [flag] (start-end) path".into());
            }
            FsOp::Falloc {
                path: rest[1].to_string(),
                flag,
                range: parse_range(rest[0])?,
            }
        }
        "link" | "symlink" | "rename" => {
            want(2)?;
            match *cmd {
                "link" => FsOp::Link { src: p(0), dst: p(1) },
                "symlink" => FsOp::Symlink { target: p(0), path: p(1) },
                _ => FsOp::Rename { src: p(0), dst: p(1) },
            }
        }
        "unlink" => {
            want(1)?;
            FsOp::Unlink { path: p(0) }
        }
        "remove" => {
            want(1)?;
            FsOp::Remove { path: p(0) }
        }
        "rmdir" => {
            want(1)?;
            FsOp::Rmdir { path: p(0) }
        }
        "truncate" => {
            want(2)?;
            FsOp::Truncate {
                path: p(0),
                size: parse_size(args[1])?,
            }
        }
        "setxattr" => {
            want(3)?;
            FsOp::Setxattr {
                path: p(0),
                name: p(1),
                value: p(2),
            }
        }
        "removexattr" => {
            want(2)?;
            FsOp::Removexattr { path: p(0), name: p(1) }
        }
        "fsync" => return persist(PersistKind::Fsync),
        "fdatasync" => return persist(PersistKind::Fdatasync),
        "msync" => return persist(PersistKind::Msync),
        "sync" => {
            want(0)?;
            return Ok(Step::Persist(PersistOp::sync()));
        }
        other => return Err(format!("unknown operation {other:?}")),
    };
    Ok(Step::Op(op))
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIGURE: &str = "creat foo\nlink foo bar\nsync\nunlink bar\ncreat bar\nfsync bar\n---crash---\n";

    #[test]
    fn figure_workload_round_trips_verbatim() {
        let w = Workload::parse(FIGURE).unwrap();
        assert!(w.prologue.is_empty());
        assert_eq!(w.body.len(), 6);
        assert_eq!(w.to_dsl(), FIGURE);
        assert_eq!(w.skeleton().to_string(), "creat,link,unlink,creat");
    }

    #[test]
    fn every_line_form_round_trips() {
        let text = "mkdir A\ncreat A/foo\nwrite (0-16K) A/foo\nsetxattr A/foo user.a 1\n---body---\n\
                    falloc -k (16K-20K) A/foo\nfalloc (0-4K) A/foo\nfalloc -z (4K-8K) A/foo\n\
                    falloc -p (8000-12096) A/foo\nfalloc -pk (0-1M) A/foo\ndwrite (0-4K) A/foo\n\
                    mwrite (0-4K) A/foo\nmsync A/foo\nlink A/foo A/bar\nsymlink foo A/sym\n\
                    rename A/bar bar\nfdatasync bar\nunlink bar\nremove A/sym\ntruncate A/foo 6K\n\
                    removexattr A/foo user.a\nrmdir B\nfsync A\nsync\n---crash---\n";
        let w = Workload::parse(text).unwrap();
        assert_eq!(w.prologue.len(), 4);
        assert_eq!(w.to_dsl(), text);
        assert_eq!(Workload::parse(&w.to_dsl()).unwrap(), w);
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert_eq!(Workload::parse("frobnicate foo").unwrap_err().line, 1);
        let e = Workload::parse("# hi\ncreat foo\nwrite (4K-0) foo\n").unwrap_err();
        assert_eq!(e.line, 3);
        assert_eq!(Workload::parse("sync\ncreat foo\n").unwrap_err().line, 1);
        assert_eq!(Workload::parse("creat foo\nsync\n---body---\n").unwrap_err().line, 2);
        assert_eq!(Workload::parse("creat foo\n---crash---\ncreat bar\n").unwrap_err().line, 3);
        assert!(Workload::parse("link foo").is_err());
    }

    #[test]
    fn crash_marker_and_comments_are_optional() {
        let a = Workload::parse("# maps: x\ncreat foo   # make it\n\nfsync foo\n").unwrap();
        let b = Workload::parse("CREAT foo\n").map(|_| ()).unwrap_err();
        assert_eq!(b.line, 1);
        assert_eq!(a.body.len(), 2);
        assert!(a.ends_with_persistence());
    }

    #[test]
    fn skeleton_text_round_trips() {
        let s: Skeleton = "link,rename,xattr".parse().unwrap();
        assert_eq!(s.0, [FsOpKind::Link, FsOpKind::Rename, FsOpKind::Xattr]);
        assert_eq!(s.to_string().parse::<Skeleton>().unwrap(), s);
        assert!("link,nope".parse::<Skeleton>().is_err());
    }
}
