//! Plain-text checkpoints of a trained network and its frozen regime model.
//!
//! ```text
//! kelly-lab-policy v1
//! kind plain | context
//! obs_dim <n>
//! action_dim <n>
//! layout <widths>            (plain)
//! features|regime|shared <widths>, n_contexts <k>   (context)
//! params <count>
//! <one value per line>
//! hmm none | hmm present, followed by the HMM text format
//! ```
//! Values are written in shortest round-trip form, so a reload is exact.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use super::policy::{ActorCritic, AnyPolicy, ContextPolicyNet, PolicyNet};
use crate::error::{Error, Result};
use crate::hmm::GaussianHmmModel;
use crate::rng::{stream, Domain};

const HEADER: &str = "kelly-lab-policy v1";

struct Cursor<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Cursor<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        self.lines
            .next()
            .map(|(i, l)| (i + 1, l.trim()))
            .ok_or_else(|| Error::Parse(format!("checkpoint ends before {what}")))
    }

    fn field(&mut self, key: &str) -> Result<(usize, String)> {
        let (ln, l) = self.next(key)?;
        match l.strip_prefix(key).filter(|rest| rest.is_empty() || rest.starts_with(' ')) {
            Some(rest) => Ok((ln, rest.trim().to_string())),
            None => Err(Error::Parse(format!("line {ln}: expected '{key}', found '{l}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub net: AnyPolicy,
    pub hmm: Option<Arc<GaussianHmmModel>>,
}

fn widths(w: &[usize]) -> String {
    w.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

impl Checkpoint {
    pub fn new(net: AnyPolicy, hmm: Option<Arc<GaussianHmmModel>>) -> Self {
        Self { net, hmm }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let net = &self.net;
        writeln!(s, "{HEADER}").unwrap();
        match net {
            AnyPolicy::Plain(p) => {
                writeln!(s, "kind plain").unwrap();
                writeln!(s, "obs_dim {}\naction_dim {}", net.obs_dim(), net.action_dim()).unwrap();
                writeln!(s, "layout {}", widths(&p.layout())).unwrap();
            }
            AnyPolicy::Context(c) => {
                let [f, r, sh] = c.layout();
                writeln!(s, "kind context").unwrap();
                writeln!(s, "obs_dim {}\naction_dim {}", net.obs_dim(), net.action_dim()).unwrap();
                writeln!(s, "n_contexts {}", net.n_contexts()).unwrap();
                writeln!(s, "features {}\nregime {}\nshared {}", widths(&f), widths(&r), widths(&sh)).unwrap();
            }
        }
        writeln!(s, "params {}", net.n_params()).unwrap();
        for p in net.params() {
            writeln!(s, "{p:?}").unwrap();
        }
        match &self.hmm {
            None => writeln!(s, "hmm none").unwrap(),
            Some(m) => {
                writeln!(s, "hmm present").unwrap();
                s.push_str(&m.to_text());
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cur = Cursor { lines: text.lines().enumerate() };
        let (ln, header) = cur.next("the header")?;
        if header != HEADER {
            return Err(Error::Parse(format!("line {ln}: expected '{HEADER}', found '{header}'")));
        }
        let num = |ln: usize, v: &str| -> Result<usize> {
            v.parse().map_err(|_| Error::Parse(format!("line {ln}: '{v}' is not a count")))
        };
        let list = |ln: usize, v: &str| -> Result<Vec<usize>> { v.split_whitespace().map(|x| num(ln, x)).collect() };
        let (_, kind) = cur.field("kind")?;
        let (ln, v) = cur.field("obs_dim")?;
        let obs = num(ln, &v)?;
        let (ln, v) = cur.field("action_dim")?;
        let act = num(ln, &v)?;
        // Initial values are overwritten below.
        let mut rng = stream(0, Domain::Init, 0);
        let mut net = match kind.as_str() {
            "plain" => {
                let (ln, v) = cur.field("layout")?;
                AnyPolicy::Plain(PolicyNet::with_widths(obs, act, &list(ln, &v)?, 0.0, &mut rng))
            }
            "context" => {
                let (ln, v) = cur.field("n_contexts")?;
                let k = num(ln, &v)?;
                let (ln, f) = cur.field("features")?;
                let f = list(ln, &f)?;
                let (ln, r) = cur.field("regime")?;
                let r = list(ln, &r)?;
                let (ln, sh) = cur.field("shared")?;
                let sh = list(ln, &sh)?;
                if f.last() != r.last() || f.is_empty() {
                    return Err(Error::Parse(format!("line {ln}: feature and regime nets must end at the same width")));
                }
                AnyPolicy::Context(ContextPolicyNet::with_widths(obs, act, k, &f, &r, &sh, 0.0, &mut rng))
            }
            other => return Err(Error::Parse(format!("unknown network kind '{other}'"))),
        };
        let (ln, v) = cur.field("params")?;
        let n = num(ln, &v)?;
        if n != net.n_params() {
            return Err(Error::Parse(format!("line {ln}: {n} parameters but the layout needs {}", net.n_params())));
        }
        for k in 0..n {
            let (ln, l) = cur.next("the parameters")?;
            let x: f64 = l.parse().map_err(|_| Error::Parse(format!("line {ln}: '{l}' is not a number")))?;
            if !x.is_finite() {
                return Err(Error::Parse(format!("line {ln}: non-finite parameter")));
            }
            net.params_mut()[k] = x;
        }
        let (ln, h) = cur.field("hmm")?;
        let hmm = match h.as_str() {
            "none" => None,
            "present" => {
                let rest: Vec<&str> = text.lines().skip(ln).collect();
                Some(Arc::new(GaussianHmmModel::from_text(&rest.join("\n"))?))
            }
            other => return Err(Error::Parse(format!("line {ln}: expected 'none' or 'present', found '{other}'"))),
        };
        if let (Some(m), AnyPolicy::Context(_)) = (&hmm, &net) {
            if m.n_states() != net.n_contexts() {
                return Err(Error::Parse("embedded HMM and context network disagree on the number of states".into()));
            }
        }
        Ok(Self { net, hmm })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }
}
