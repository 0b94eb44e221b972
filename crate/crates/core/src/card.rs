//! PatientCard records: score, color-coded tier, top factors in plain
//! language, and a short care plan.
//!
//! The care plan lines are placeholders keyed on tier and factor names.
//! They are not clinical guidance.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::{path_contributions, top_k};
use crate::features::{FeatureEngineer, FeatureVector};
use crate::gbdt::Ensemble;
use crate::ingest::{Encounter, MedStatus, MEDICATIONS};

pub const SCHEMA_VERSION: u32 = 1;
pub const MAX_FACTORS: usize = 5;
/// Fewest validation scores accepted for quantile tiers.
pub const MIN_CALIBRATION_SCORES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TierColor {
    Green,
    Yellow,
    Red,
}

/// Ordered `Low < Medium < High`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "TierWire", try_from = "TierWire")]
pub enum RiskTier {
    Low,
    Medium,
    High,
}

impl RiskTier {
    pub const ALL: [RiskTier; 3] = [RiskTier::Low, RiskTier::Medium, RiskTier::High];

    pub fn color(self) -> TierColor {
        match self {
            RiskTier::Low => TierColor::Green,
            RiskTier::Medium => TierColor::Yellow,
            RiskTier::High => TierColor::Red,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RiskTier::Low => "low",
            RiskTier::Medium => "medium",
            RiskTier::High => "high",
        }
    }
}

impl fmt::Display for RiskTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RiskTier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RiskTier::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Format(format!("unknown risk tier {s:?}")))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TierWire {
    tier: String,
    color: TierColor,
}

impl From<RiskTier> for TierWire {
    fn from(t: RiskTier) -> Self {
        TierWire {
            tier: t.as_str().into(),
            color: t.color(),
        }
    }
}

impl TryFrom<TierWire> for RiskTier {
    type Error = Error;

    fn try_from(w: TierWire) -> Result<Self> {
        let t: RiskTier = w.tier.parse()?;
        if t.color() != w.color {
            return Err(Error::Format(format!("tier {t} cannot be {:?}", w.color)));
        }
        Ok(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutProvenance {
    QuantileBased,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TierThresholds {
    pub high_cut: f64,
    pub medium_cut: f64,
    pub provenance: CutProvenance,
}

impl TierThresholds {
    pub fn fixed(high_cut: f64, medium_cut: f64) -> Result<Self> {
        let t = TierThresholds {
            high_cut,
            medium_cut,
            provenance: CutProvenance::Fixed,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        let open = |x: f64| x > 0.0 && x < 1.0;
        if !(open(self.high_cut) && open(self.medium_cut) && self.high_cut > self.medium_cut) {
            return Err(Error::Config(format!(
                "tier cuts need 0 < medium ({}) < high ({}) < 1",
                self.medium_cut, self.high_cut
            )));
        }
        Ok(())
    }
}

/// Linear interpolation between order statistics at `q * (n - 1)`.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// High cut at the 90th and medium cut at the 70th percentile of `scores`.
pub fn calibrate_tiers(scores: &[f64]) -> Result<TierThresholds> {
    if scores.len() < MIN_CALIBRATION_SCORES {
        return Err(Error::Config(format!(
            "{} validation scores are too few for quantile tiers (need {MIN_CALIBRATION_SCORES}); use fixed thresholds",
            scores.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Domain("validation scores must be finite".into()));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let t = TierThresholds {
        high_cut: quantile(&sorted, 0.9),
        medium_cut: quantile(&sorted, 0.7),
        provenance: CutProvenance::QuantileBased,
    };
    t.validate().map_err(|e| {
        Error::Config(format!("degenerate validation quantiles ({e}); use fixed thresholds"))
    })?;
    Ok(t)
}

/// Inclusive lower boundaries.
pub fn tier(score: f64, t: &TierThresholds) -> RiskTier {
    if score >= t.high_cut {
        RiskTier::High
    } else if score >= t.medium_cut {
        RiskTier::Medium
    } else {
        RiskTier::Low
    }
}

/// Feature name to plain-language phrase.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PhraseTable {
    entries: BTreeMap<String, String>,
}

const BUNDLED_PHRASES: &str = include_str!("../data/phrases.tsv");

impl PhraseTable {
    pub fn bundled() -> Self {
        let mut t = PhraseTable::from_tsv(BUNDLED_PHRASES).expect("bundled phrase table parses");
        for med in MEDICATIONS {
            for s in MedStatus::ALL {
                let what = match s {
                    MedStatus::No => "not prescribed",
                    MedStatus::Steady => "steady dose",
                    MedStatus::Up => "dose increased",
                    MedStatus::Down => "dose decreased",
                };
                t.entries
                    .insert(format!("med_{med}_{}", s.as_str()), format!("{med}: {what}"));
            }
        }
        t
    }

    /// `feature<TAB>phrase` lines; `#` starts a comment line.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('\t')
                .filter(|(k, v)| !k.is_empty() && !v.trim().is_empty())
                .ok_or_else(|| Error::Format(format!("phrase table line {}: expected feature<TAB>phrase", i + 1)))?;
            entries.insert(k.to_string(), v.trim().to_string());
        }
        Ok(PhraseTable { entries })
    }

    pub fn get(&self, feature: &str) -> Option<&str> {
        self.entries.get(feature).map(String::as_str)
    }

    /// Known features get a direction suffix; unknown ones fall back to the
    /// raw name.
    pub fn phrase(&self, feature: &str, contribution: f64) -> String {
        match self.get(feature) {
            None => feature.to_string(),
            Some(p) if contribution > 0.0 => format!("{p} (raises risk)"),
            Some(p) if contribution < 0.0 => format!("{p} (lowers risk)"),
            Some(p) => p.to_string(),
        }
    }
}

struct PlanRule {
    tier: Option<RiskTier>,
    /// Fires when any of these is a risk-raising factor on the card.
    features: &'static [&'static str],
    line: &'static str,
}

const CARE_PLAN: &[PlanRule] = &[
    PlanRule {
        tier: Some(RiskTier::High),
        features: &[],
        line: "Schedule a follow-up visit within 7 days of discharge.",
    },
    PlanRule {
        tier: Some(RiskTier::High),
        features: &[],
        line: "Review the discharge medication list with the patient.",
    },
    PlanRule {
        tier: Some(RiskTier::Medium),
        features: &[],
        line: "Schedule a follow-up visit within 14 days of discharge.",
    },
    PlanRule {
        tier: Some(RiskTier::Low),
        features: &[],
        line: "Standard discharge instructions.",
    },
    PlanRule {
        tier: None,
        features: &["discharge_snf_rehab"],
        line: "Confirm follow-up scheduling with the receiving facility.",
    },
    PlanRule {
        tier: None,
        features: &["inpatient_ge_2", "number_inpatient", "prior_util_sum"],
        line: "Refer to transitional care for frequent recent admissions.",
    },
    PlanRule {
        tier: None,
        features: &["number_emergency"],
        line: "Confirm the patient has a primary care contact for urgent needs.",
    },
    PlanRule {
        tier: None,
        features: &["a1c_high"],
        line: "Arrange diabetes follow-up for the elevated A1c.",
    },
];

pub fn care_plan(t: RiskTier, factors: &[Factor]) -> Vec<String> {
    let raising = |f: &str| factors.iter().any(|x| x.feature == f && x.contribution > 0.0);
    CARE_PLAN
        .iter()
        .filter(|r| match r.tier {
            Some(rt) => rt == t,
            None => r.features.iter().any(|f| raising(f)),
        })
        .map(|r| r.line.to_string())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Factor {
    pub feature: String,
    pub contribution: f64,
    pub phrase: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    pub schema_version: u32,
    pub model_fingerprint: String,
    /// RFC 3339, UTC.
    pub trained_at: String,
    pub test_auroc: f64,
    pub test_auprc: f64,
    pub high_cut: f64,
    pub medium_cut: f64,
}

impl ModelMeta {
    pub fn new(model: &Ensemble, thresholds: &TierThresholds, test_auroc: f64, test_auprc: f64) -> Result<Self> {
        Ok(ModelMeta {
            schema_version: SCHEMA_VERSION,
            model_fingerprint: model.fingerprint(),
            trained_at: rfc3339(model.trained_at_unix)?,
            test_auroc,
            test_auprc,
            high_cut: thresholds.high_cut,
            medium_cut: thresholds.medium_cut,
        })
    }
}

pub fn rfc3339(unix: u64) -> Result<String> {
    let secs = i64::try_from(unix).map_err(|_| Error::Domain(format!("timestamp {unix} out of range")))?;
    let t = time::OffsetDateTime::from_unix_timestamp(secs).map_err(|e| Error::Domain(e.to_string()))?;
    t.format(&time::format_description::well_known::Rfc3339)
        .map_err(|e| Error::Domain(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatientCard {
    pub encounter_id: u64,
    pub risk_score: f64,
    pub tier: RiskTier,
    pub factors: Vec<Factor>,
    pub care_plan: Vec<String>,
    pub model_meta: ModelMeta,
}

/// Score, tier and factors for one feature vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scored {
    pub score: f64,
    pub tier: RiskTier,
    pub factors: Vec<Factor>,
}

/// Everything needed to turn encounters into cards.
#[derive(Debug, Clone)]
pub struct CardBuilder {
    model: Ensemble,
    engineer: FeatureEngineer,
    thresholds: TierThresholds,
    phrases: PhraseTable,
    meta: ModelMeta,
}

impl CardBuilder {
    pub fn new(model: Ensemble, thresholds: TierThresholds, phrases: PhraseTable, meta: ModelMeta) -> Result<Self> {
        thresholds.validate()?;
        let engineer = FeatureEngineer::for_registry(&model.registry)?;
        Ok(CardBuilder {
            model,
            engineer,
            thresholds,
            phrases,
            meta,
        })
    }

    pub fn model(&self) -> &Ensemble {
        &self.model
    }

    pub fn engineer(&self) -> &FeatureEngineer {
        &self.engineer
    }

    pub fn thresholds(&self) -> &TierThresholds {
        &self.thresholds
    }

    pub fn meta(&self) -> &ModelMeta {
        &self.meta
    }

    pub fn score(&self, x: &FeatureVector) -> Result<Scored> {
        let score = self.model.predict_proba(x.as_slice())?;
        let attr = path_contributions(&self.model, x.as_slice())?;
        let nonzero: Vec<_> = attr.contributions.into_iter().filter(|c| c.value != 0.0).collect();
        let factors = top_k(&nonzero, MAX_FACTORS)
            .into_iter()
            .map(|c| Factor {
                phrase: self.phrases.phrase(&c.feature, c.value),
                feature: c.feature,
                contribution: c.value,
            })
            .collect();
        Ok(Scored {
            score,
            tier: tier(score, &self.thresholds),
            factors,
        })
    }

    pub fn build(&self, e: &Encounter) -> Result<PatientCard> {
        let s = self.score(&self.engineer.engineer(e))?;
        Ok(PatientCard {
            encounter_id: e.encounter_id,
            risk_score: s.score,
            tier: s.tier,
            care_plan: care_plan(s.tier, &s.factors),
            factors: s.factors,
            model_meta: self.meta.clone(),
        })
    }

    /// One card per encounter, ordered by `encounter_id`.
    pub fn export(&self, encounters: &[Encounter]) -> Result<Vec<PatientCard>> {
        let mut cards = encounters
            .par_iter()
            .map(|e| self.build(e))
            .collect::<Result<Vec<_>>>()?;
        cards.sort_by_key(|c| c.encounter_id);
        Ok(cards)
    }
}

/// One JSON object per line.
pub fn write_ndjson<W: Write>(mut sink: W, cards: &[PatientCard]) -> Result<()> {
    for c in cards {
        let line = serde_json::to_string(c).map_err(|e| Error::Format(e.to_string()))?;
        writeln!(sink, "{line}").map_err(|e| Error::io("<cards>", e))?;
    }
    sink.flush().map_err(|e| Error::io("<cards>", e))
}

/// Parses NDJSON cards, keeping each source line verbatim.
pub fn read_ndjson(text: &str) -> Result<Vec<(PatientCard, String)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let c: PatientCard =
                serde_json::from_str(l).map_err(|e| Error::Format(format!("card line {}: {e}", i + 1)))?;
            Ok((c, l.to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cuts() -> TierThresholds {
        TierThresholds::fixed(0.6, 0.3).unwrap()
    }

    #[test]
    fn tier_boundaries_are_inclusive() {
        let t = cuts();
        assert_eq!(tier(0.6, &t), RiskTier::High);
        assert_eq!(tier(0.3, &t), RiskTier::Medium);
        assert_eq!(tier(0.0, &t), RiskTier::Low);
        assert_eq!(tier(1.0, &t), RiskTier::High);
    }

    #[test]
    fn colors_are_bijective() {
        let colors: std::collections::HashSet<_> = RiskTier::ALL.iter().map(|t| t.color()).collect();
        assert_eq!(colors.len(), 3);
        assert_eq!(RiskTier::Low.color(), TierColor::Green);
        assert_eq!(RiskTier::Medium.color(), TierColor::Yellow);
        assert_eq!(RiskTier::High.color(), TierColor::Red);
    }

    #[test]
    fn tier_wire_format() {
        assert_eq!(
            serde_json::to_string(&RiskTier::Medium).unwrap(),
            r#"{"tier":"medium","color":"yellow"}"#
        );
        let bad: std::result::Result<RiskTier, _> = serde_json::from_str(r#"{"tier":"high","color":"green"}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn uniform_scores_calibrate_near_deciles() {
        let scores: Vec<f64> = (0..=1000).map(|i| f64::from(i) / 1000.0).collect();
        let t = calibrate_tiers(&scores).unwrap();
        assert!((t.high_cut - 0.9).abs() < 1e-12);
        assert!((t.medium_cut - 0.7).abs() < 1e-12);
        assert_eq!(t.provenance, CutProvenance::QuantileBased);
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile(&[0.0, 1.0], 0.9), 0.9);
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.5), 2.5);
    }

    #[test]
    fn degenerate_calibration_is_an_error() {
        assert_eq!(calibrate_tiers(&[0.4; 500]).unwrap_err().class(), "config");
        assert_eq!(calibrate_tiers(&[0.4, 0.5]).unwrap_err().class(), "config");
        assert!(calibrate_tiers(&[0.4; 500]).unwrap_err().to_string().contains("fixed"));
    }

    #[test]
    fn phrases() {
        let p = PhraseTable::bundled();
        assert_eq!(
            p.phrase("inpatient_ge_2", 0.3),
            "Two or more hospital stays in the past year (raises risk)"
        );
        assert_eq!(p.phrase("discharge_home", -0.1), "Discharged to home (lowers risk)");
        assert_eq!(p.phrase("zzz", 1.0), "zzz");
        assert_eq!(p.phrase("med_insulin_Up", 1.0), "insulin: dose increased (raises risk)");
    }

    #[test]
    fn every_registry_feature_has_a_phrase() {
        let p = PhraseTable::bundled();
        let r = crate::features::FeatureRegistry::with_options(crate::features::FeatureOptions {
            include_medications: true,
            include_diag_groups: true,
        });
        for n in r.names() {
            assert!(p.get(n).is_some(), "{n}");
        }
    }

    #[test]
    fn care_plan_follows_tier_and_factors() {
        let f = |name: &str, v: f64| Factor {
            feature: name.into(),
            contribution: v,
            phrase: name.into(),
        };
        let plan = care_plan(RiskTier::High, &[f("discharge_snf_rehab", 0.2)]);
        assert!(plan.iter().any(|l| l.contains("receiving facility")));
        assert!(plan.iter().any(|l| l.contains("7 days")));
        let low = care_plan(RiskTier::Low, &[f("discharge_snf_rehab", -0.2)]);
        assert_eq!(low, vec!["Standard discharge instructions.".to_string()]);
    }

    #[test]
    fn rfc3339_stamp() {
        assert_eq!(rfc3339(0).unwrap(), "1970-01-01T00:00:00Z");
        assert_eq!(rfc3339(1_700_000_000).unwrap(), "2023-11-14T22:13:20Z");
    }

    #[test]
    fn bad_phrase_line() {
        assert!(PhraseTable::from_tsv("a\tok\nbroken\n").is_err());
    }
}
