//! Ranking and threshold metrics for imbalanced binary classification,
//! plus the cohort breakdowns used for exploratory analysis.
//!
//! Tied scores are treated as one block everywhere: the ROC and PR curves
//! only have a point where the score changes, AUROC counts ties as half
//! a correct ordering, and average precision takes one precision value
//! per block.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ingest::Encounter;

fn check(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::Domain(format!("score {i} is NaN")));
    }
    let mut pos = 0;
    for (i, &l) in labels.iter().enumerate() {
        match l {
            0 => {}
            1 => pos += 1,
            other => return Err(Error::Data(format!("label {other} at {i} is not binary"))),
        }
    }
    Ok((pos, labels.len() - pos))
}

/// Score-descending blocks of equal scores as `(positives, negatives)`.
fn blocks_desc(scores: &[f64], labels: &[u8]) -> Vec<(f64, usize, usize)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out: Vec<(f64, usize, usize)> = Vec::new();
    for i in order {
        let s = scores[i];
        let (p, n) = (usize::from(labels[i] == 1), usize::from(labels[i] == 0));
        match out.last_mut() {
            Some(last) if last.0 == s => {
                last.1 += p;
                last.2 += n;
            }
            _ => out.push((s, p, n)),
        }
    }
    out
}

/// Probability that a random positive scores above a random negative,
/// ties counted as one half.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::Domain("AUROC needs both classes".into()));
    }
    // Positives in a block outrank every negative in lower blocks and tie
    // with the negatives of their own block.
    let mut neg_below = neg as f64;
    let mut wins = 0.0;
    for (_, p, n) in blocks_desc(scores, labels) {
        neg_below -= n as f64;
        wins += p as f64 * (neg_below + 0.5 * n as f64);
    }
    Ok(wins / (pos as f64 * neg as f64))
}

/// Average precision: Σ (Δrecall × precision) over descending score blocks.
pub fn auprc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, _) = check(scores, labels)?;
    if pos == 0 {
        return Err(Error::Domain("average precision needs at least one positive".into()));
    }
    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut ap = 0.0;
    for (_, p, n) in blocks_desc(scores, labels) {
        tp += p;
        seen += p + n;
        if p > 0 {
            ap += (p as f64 / pos as f64) * (tp as f64 / seen as f64);
        }
    }
    Ok(ap)
}

/// `(false positive rate, true positive rate)` from (0,0) to (1,1).
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<(f64, f64)>> {
    let (pos, neg) = check(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::Domain("ROC curve needs both classes".into()));
    }
    let mut pts = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for (_, p, n) in blocks_desc(scores, labels) {
        tp += p;
        fp += n;
        pts.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(pts)
}

/// `(recall, precision)` at each distinct score threshold, recall ascending.
pub fn pr_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<(f64, f64)>> {
    let (pos, _) = check(scores, labels)?;
    if pos == 0 {
        return Err(Error::Domain("PR curve needs at least one positive".into()));
    }
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut pts = Vec::new();
    for (_, p, n) in blocks_desc(scores, labels) {
        tp += p;
        seen += p + n;
        pts.push((tp as f64 / pos as f64, tp as f64 / seen as f64));
    }
    Ok(pts)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdMetrics {
    pub threshold: f64,
    pub confusion: Confusion,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub specificity: f64,
    pub balanced_accuracy: f64,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Predicts positive iff `score >= threshold`. Undefined ratios are 0.
pub fn confusion_at(scores: &[f64], labels: &[u8], threshold: f64) -> Result<ThresholdMetrics> {
    check(scores, labels)?;
    let mut c = Confusion::default();
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let specificity = ratio(c.tn, c.tn + c.fp);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(ThresholdMetrics {
        threshold,
        confusion: c,
        precision,
        recall,
        f1,
        specificity,
        balanced_accuracy: 0.5 * (recall + specificity),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub n: usize,
    pub prevalence: f64,
    pub auroc: f64,
    pub auprc: f64,
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub balanced_accuracy: f64,
    pub confusion: Confusion,
    #[serde(skip)]
    pub roc_points: Vec<(f64, f64)>,
    #[serde(skip)]
    pub pr_points: Vec<(f64, f64)>,
}

impl EvalReport {
    pub fn compute(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Self> {
        let (pos, _) = check(scores, labels)?;
        let t = confusion_at(scores, labels, threshold)?;
        Ok(EvalReport {
            n: labels.len(),
            prevalence: pos as f64 / labels.len() as f64,
            auroc: auroc(scores, labels)?,
            auprc: auprc(scores, labels)?,
            threshold,
            precision: t.precision,
            recall: t.recall,
            f1: t.f1,
            balanced_accuracy: t.balanced_accuracy,
            confusion: t.confusion,
            roc_points: roc_curve(scores, labels)?,
            pr_points: pr_curve(scores, labels)?,
        })
    }
}

/// Two-column CSV with a header row.
pub fn write_points<W: Write>(mut sink: W, header: (&str, &str), points: &[(f64, f64)]) -> std::io::Result<()> {
    writeln!(sink, "{},{}", header.0, header.1)?;
    for (x, y) in points {
        writeln!(sink, "{x},{y}")?;
    }
    sink.flush()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupRate {
    pub key: String,
    pub n: usize,
    pub positives: usize,
    pub rate: f64,
}

impl GroupRate {
    fn new(key: String, n: usize, positives: usize) -> Self {
        GroupRate {
            key,
            n,
            positives,
            rate: ratio(positives, n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LosMedians {
    pub readmitted: Option<f64>,
    pub not_readmitted: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdaReport {
    pub n: usize,
    pub prevalence: f64,
    /// Buckets `0`, `1`, `2`, `3+` of prior-year inpatient visits.
    pub readmit_rate_by_prior_inpatient: Vec<GroupRate>,
    pub los_median_by_outcome: LosMedians,
    /// One entry per discharge disposition code, ascending.
    pub readmit_rate_by_disposition: Vec<GroupRate>,
}

impl EdaReport {
    /// Rate of the `3+` bucket divided by the `0` bucket.
    pub fn heavy_vs_none_ratio(&self) -> Option<f64> {
        let none = self.readmit_rate_by_prior_inpatient[0].rate;
        let heavy = self.readmit_rate_by_prior_inpatient[3].rate;
        (none > 0.0).then(|| heavy / none)
    }

    /// Long-format CSV: `table,key,n,positives,value`.
    pub fn write_csv<W: Write>(&self, mut sink: W) -> std::io::Result<()> {
        writeln!(sink, "table,key,n,positives,value")?;
        for g in &self.readmit_rate_by_prior_inpatient {
            writeln!(sink, "prior_inpatient,{},{},{},{}", g.key, g.n, g.positives, g.rate)?;
        }
        let m = &self.los_median_by_outcome;
        for (key, v) in [("readmitted", m.readmitted), ("not_readmitted", m.not_readmitted)] {
            let v = v.map_or(String::new(), |v| v.to_string());
            writeln!(sink, "los_median,{key},,,{v}")?;
        }
        for g in &self.readmit_rate_by_disposition {
            writeln!(sink, "discharge_disposition,{},{},{},{}", g.key, g.n, g.positives, g.rate)?;
        }
        sink.flush()
    }
}

/// Median with the two middle values averaged for even counts.
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

pub fn eda_report(encounters: &[Encounter]) -> Result<EdaReport> {
    if encounters.is_empty() {
        return Err(Error::Domain("EDA of an empty cohort".into()));
    }
    let mut buckets = [(0usize, 0usize); 4];
    let mut los_pos = Vec::new();
    let mut los_neg = Vec::new();
    let mut by_disp: BTreeMap<u16, (usize, usize)> = BTreeMap::new();
    let mut positives = 0;
    for e in encounters {
        let y = usize::from(e.label());
        positives += y;
        let b = &mut buckets[(e.number_inpatient as usize).min(3)];
        b.0 += 1;
        b.1 += y;
        let d = by_disp.entry(e.discharge_disposition_id).or_default();
        d.0 += 1;
        d.1 += y;
        if y == 1 {
            los_pos.push(f64::from(e.time_in_hospital));
        } else {
            los_neg.push(f64::from(e.time_in_hospital));
        }
    }
    Ok(EdaReport {
        n: encounters.len(),
        prevalence: ratio(positives, encounters.len()),
        readmit_rate_by_prior_inpatient: ["0", "1", "2", "3+"]
            .iter()
            .zip(buckets)
            .map(|(k, (n, p))| GroupRate::new(k.to_string(), n, p))
            .collect(),
        los_median_by_outcome: LosMedians {
            readmitted: median(&mut los_pos),
            not_readmitted: median(&mut los_neg),
        },
        readmit_rate_by_disposition: by_disp
            .into_iter()
            .map(|(code, (n, p))| GroupRate::new(code.to_string(), n, p))
            .collect(),
    })
}
