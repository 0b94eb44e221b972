//! Line-oriented text format for trained ensembles.
//!
//! ```text
//! readmit-gbdt 1
//! [config]
//! max_depth 6
//! ...
//! [meta]
//! trained_at_unix 0
//! best_iteration 41
//! [registry] <fingerprint>
//! feature <name> <kind>
//! ...
//! [trees] <count>
//! tree <index> <node count>
//! split <feature> <threshold> <left|right> <left child> <right child> <gain> <cover>
//! leaf <weight> <cover>
//! ...
//! end
//! ```
//!
//! Nodes are listed in preorder. Floats use Rust's shortest round-trip
//! formatting, so writing a parsed model reproduces the file byte for byte.

use std::fmt::Write as _;
use std::str::FromStr;

use super::split::Direction;
use super::tree::{Tree, TreeNode};
use super::{Ensemble, TrainConfig};
use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureRegistry};

const MAGIC: &str = "readmit-gbdt 1";

pub(super) fn write(e: &Ensemble) -> String {
    let c = &e.config;
    let mut s = String::new();
    let _ = writeln!(s, "{MAGIC}");
    let _ = writeln!(s, "[config]");
    let _ = writeln!(s, "max_depth {}", c.max_depth);
    let _ = writeln!(s, "learning_rate {:?}", c.learning_rate);
    let _ = writeln!(s, "n_estimators {}", c.n_estimators);
    let _ = writeln!(s, "subsample {:?}", c.subsample);
    let _ = writeln!(s, "colsample_bytree {:?}", c.colsample_bytree);
    let _ = writeln!(s, "min_child_weight {:?}", c.min_child_weight);
    match c.scale_pos_weight {
        Some(w) => {
            let _ = writeln!(s, "scale_pos_weight {w:?}");
        }
        None => {
            let _ = writeln!(s, "scale_pos_weight auto");
        }
    }
    let _ = writeln!(s, "early_stopping_rounds {}", c.early_stopping_rounds);
    let _ = writeln!(s, "lambda {:?}", c.lambda);
    let _ = writeln!(s, "gamma {:?}", c.gamma);
    let _ = writeln!(s, "base_score {:?}", c.base_score);
    let _ = writeln!(s, "seed {}", c.seed);
    let _ = writeln!(s, "[meta]");
    let _ = writeln!(s, "trained_at_unix {}", e.trained_at_unix);
    let _ = writeln!(s, "best_iteration {}", e.best_iteration);
    let _ = writeln!(s, "[registry] {}", e.registry.fingerprint());
    for (n, k) in e.registry.names().iter().zip(e.registry.kinds()) {
        let _ = writeln!(s, "feature {n} {}", k.as_str());
    }
    let _ = writeln!(s, "[trees] {}", e.trees.len());
    for (i, t) in e.trees.iter().enumerate() {
        let _ = writeln!(s, "tree {i} {}", t.nodes().len());
        for n in t.nodes() {
            match n {
                TreeNode::Split {
                    feature,
                    threshold,
                    default_direction,
                    left,
                    right,
                    gain,
                    cover,
                } => {
                    let _ = writeln!(
                        s,
                        "split {feature} {threshold:?} {} {left} {right} {gain:?} {cover:?}",
                        default_direction.as_str()
                    );
                }
                TreeNode::Leaf { weight, cover } => {
                    let _ = writeln!(s, "leaf {weight:?} {cover:?}");
                }
            }
        }
    }
    let _ = writeln!(s, "end");
    s
}

struct Lines<'a> {
    it: std::iter::Enumerate<std::str::Lines<'a>>,
    line_no: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str> {
        match self.it.next() {
            Some((i, l)) => {
                self.line_no = i + 1;
                Ok(l)
            }
            None => Err(Error::Format("model file ends early".into())),
        }
    }

    fn err(&self, msg: impl std::fmt::Display) -> Error {
        Error::Format(format!("model line {}: {msg}", self.line_no))
    }

    fn expect(&mut self, want: &str) -> Result<()> {
        let l = self.next()?;
        if l == want {
            Ok(())
        } else {
            Err(self.err(format!("expected {want:?}, found {l:?}")))
        }
    }

    /// Reads `key value` and parses the value.
    fn kv<T: FromStr>(&mut self, key: &str) -> Result<T> {
        let l = self.next()?;
        let v = l
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| self.err(format!("expected key {key:?}")))?;
        v.parse().map_err(|_| self.err(format!("bad value for {key}: {v:?}")))
    }
}

fn field<T: FromStr>(parts: &[&str], i: usize, lines: &Lines<'_>) -> Result<T> {
    parts
        .get(i)
        .ok_or_else(|| lines.err("too few fields"))?
        .parse()
        .map_err(|_| lines.err(format!("bad field {}", i + 1)))
}

pub(super) fn read(text: &str) -> Result<Ensemble> {
    let mut lines = Lines {
        it: text.lines().enumerate(),
        line_no: 0,
    };
    lines.expect(MAGIC)?;
    lines.expect("[config]")?;
    let max_depth = lines.kv("max_depth")?;
    let learning_rate = lines.kv("learning_rate")?;
    let n_estimators = lines.kv("n_estimators")?;
    let subsample = lines.kv("subsample")?;
    let colsample_bytree = lines.kv("colsample_bytree")?;
    let min_child_weight = lines.kv("min_child_weight")?;
    let spw: String = lines.kv("scale_pos_weight")?;
    let scale_pos_weight = if spw == "auto" {
        None
    } else {
        Some(spw.parse().map_err(|_| lines.err("bad scale_pos_weight"))?)
    };
    let config = TrainConfig {
        max_depth,
        learning_rate,
        n_estimators,
        subsample,
        colsample_bytree,
        min_child_weight,
        scale_pos_weight,
        early_stopping_rounds: lines.kv("early_stopping_rounds")?,
        lambda: lines.kv("lambda")?,
        gamma: lines.kv("gamma")?,
        base_score: lines.kv("base_score")?,
        seed: lines.kv("seed")?,
    };
    config.validate()?;
    lines.expect("[meta]")?;
    let trained_at_unix = lines.kv("trained_at_unix")?;
    let best_iteration = lines.kv("best_iteration")?;

    let fingerprint: String = lines.kv("[registry]")?;
    let mut names = Vec::new();
    let mut kinds = Vec::new();
    let n_trees: usize = loop {
        let l = lines.next()?;
        if let Some(rest) = l.strip_prefix("feature ") {
            let (name, kind) = rest
                .rsplit_once(' ')
                .ok_or_else(|| lines.err("feature line needs a name and a kind"))?;
            names.push(name.to_string());
            kinds.push(FeatureKind::from_str(kind)?);
        } else if let Some(rest) = l.strip_prefix("[trees] ") {
            break rest.parse().map_err(|_| lines.err("bad tree count"))?;
        } else {
            return Err(lines.err(format!("unexpected {l:?}")));
        }
    };
    let registry = FeatureRegistry::from_parts(names, kinds)?;
    if registry.fingerprint() != fingerprint {
        return Err(Error::Format(format!(
            "registry fingerprint {fingerprint} does not match the listed features ({})",
            registry.fingerprint()
        )));
    }

    let mut trees = Vec::with_capacity(n_trees);
    for t in 0..n_trees {
        let header = lines.next()?;
        let parts: Vec<&str> = header.split(' ').collect();
        if parts.first() != Some(&"tree") || field::<usize>(&parts, 1, &lines)? != t {
            return Err(lines.err(format!("expected tree {t}")));
        }
        let n_nodes: usize = field(&parts, 2, &lines)?;
        let mut nodes = Vec::with_capacity(n_nodes);
        for i in 0..n_nodes {
            let l = lines.next()?;
            let p: Vec<&str> = l.split(' ').collect();
            let node = match p.first().copied() {
                Some("leaf") => TreeNode::Leaf {
                    weight: field(&p, 1, &lines)?,
                    cover: field(&p, 2, &lines)?,
                },
                Some("split") => {
                    let feature: usize = field(&p, 1, &lines)?;
                    let left: usize = field(&p, 4, &lines)?;
                    let right: usize = field(&p, 5, &lines)?;
                    if feature >= registry.len() {
                        return Err(lines.err(format!("feature index {feature} out of range")));
                    }
                    if left <= i || right <= i || left >= n_nodes || right >= n_nodes {
                        return Err(lines.err("child index is not a later node of this tree"));
                    }
                    let default_direction = match p.get(3).copied() {
                        Some("left") => Direction::Left,
                        Some("right") => Direction::Right,
                        _ => return Err(lines.err("default direction must be left or right")),
                    };
                    TreeNode::Split {
                        feature,
                        threshold: field(&p, 2, &lines)?,
                        default_direction,
                        left,
                        right,
                        gain: field(&p, 6, &lines)?,
                        cover: field(&p, 7, &lines)?,
                    }
                }
                _ => return Err(lines.err(format!("unexpected node line {l:?}"))),
            };
            nodes.push(node);
        }
        if nodes.is_empty() {
            return Err(lines.err("tree without nodes"));
        }
        trees.push(Tree::preordered(nodes));
    }
    lines.expect("end")?;
    Ok(Ensemble {
        config,
        registry,
        trees,
        best_iteration,
        trained_at_unix,
    })
}
