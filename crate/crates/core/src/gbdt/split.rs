//! Exact greedy split search on one feature of one node.

use serde::{Deserialize, Serialize};

/// Which child receives rows whose split feature is missing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Left,
    Right,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Left => "left",
            Direction::Right => "right",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GradPair {
    pub g: f64,
    pub h: f64,
}

impl GradPair {
    pub fn new(g: f64, h: f64) -> Self {
        GradPair { g, h }
    }

    pub fn add(&mut self, g: f64, h: f64) {
        self.g += g;
        self.h += h;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitParams {
    pub lambda: f64,
    pub gamma: f64,
    pub min_child_weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub threshold: f64,
    pub gain: f64,
    pub default_direction: Direction,
    /// Sums routed left and right, missing rows included on their side.
    pub left: GradPair,
    pub right: GradPair,
}

fn score(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

/// Regularized gain of sending `left` and `right` to separate children.
pub fn split_gain(left: GradPair, right: GradPair, total: GradPair, p: &SplitParams) -> f64 {
    0.5 * (score(left.g, left.h, p.lambda) + score(right.g, right.h, p.lambda) - score(total.g, total.h, p.lambda))
        - p.gamma
}

/// Threshold between two consecutive distinct values `a < b`. Values below
/// it go left. Falls back to `b` when `a` and `b` are adjacent floats.
pub fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) * 0.5;
    if m > a && m <= b {
        m
    } else {
        b
    }
}

/// Running left-to-right scan over a node's present values in ascending
/// order. `total` is the node sum including missing rows; `missing` is the
/// missing rows' share of it.
#[derive(Debug, Clone)]
pub(crate) struct Scan {
    acc: GradPair,
    last: f64,
    seen: bool,
    pub(crate) best: Option<SplitCandidate>,
}

impl Scan {
    pub(crate) fn new() -> Self {
        Scan {
            acc: GradPair::default(),
            last: f64::NAN,
            seen: false,
            best: None,
        }
    }

    #[inline]
    pub(crate) fn push(&mut self, value: f64, g: f64, h: f64, total: GradPair, missing: GradPair, p: &SplitParams) {
        if self.seen && value > self.last {
            self.evaluate(midpoint(self.last, value), total, missing, p);
        }
        self.acc.add(g, h);
        self.last = value;
        self.seen = true;
    }

    fn evaluate(&mut self, threshold: f64, total: GradPair, missing: GradPair, p: &SplitParams) {
        for dir in [Direction::Left, Direction::Right] {
            let left = match dir {
                Direction::Left => GradPair::new(self.acc.g + missing.g, self.acc.h + missing.h),
                Direction::Right => self.acc,
            };
            let right = GradPair::new(total.g - left.g, total.h - left.h);
            if left.h < p.min_child_weight || right.h < p.min_child_weight {
                continue;
            }
            let gain = split_gain(left, right, total, p);
            let better = match &self.best {
                None => gain > 0.0,
                Some(b) => gain > b.gain,
            };
            if better {
                self.best = Some(SplitCandidate {
                    threshold,
                    gain,
                    default_direction: dir,
                    left,
                    right,
                });
            }
        }
    }
}

/// Best split of one node on one feature.
///
/// `present` holds `(value, g, h)` for rows whose feature value is present,
/// sorted ascending by value; `missing` sums the rows where it is absent.
/// Candidates are midpoints between consecutive distinct values; missing
/// rows are tried on both sides. When gains tie, the lower threshold wins,
/// and for one threshold "missing left" wins over "missing right". Returns
/// `None` when no candidate has positive gain.
pub fn best_split(present: &[(f64, f64, f64)], missing: GradPair, params: &SplitParams) -> Option<SplitCandidate> {
    let mut total = GradPair::default();
    for &(_, g, h) in present {
        total.add(g, h);
    }
    total.add(missing.g, missing.h);
    let mut scan = Scan::new();
    for &(v, g, h) in present {
        scan.push(v, g, h, total, missing, params);
    }
    scan.best
}
