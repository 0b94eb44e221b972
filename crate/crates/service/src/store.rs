//! Immutable data loaded at startup: the model, exported cards and the
//! stored encounters they were built from.

use std::collections::{BTreeMap, HashMap};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use readmit_core::artifacts::DataDir;
use readmit_core::card::{CardBuilder, PatientCard, PhraseTable, RiskTier, Scored, TierThresholds, CutProvenance};
use readmit_core::features::{apply_raw_override, RAW_OVERRIDABLE};
use readmit_core::gbdt::Ensemble;
use readmit_core::ingest::Encounter;
use readmit_core::Error;

use crate::config::ServiceConfig;

pub struct StoredCard {
    pub card: PatientCard,
    /// The exported line, served verbatim.
    pub raw: String,
}

pub struct Store {
    /// Ascending by encounter id.
    cards: Vec<StoredCard>,
    by_id: HashMap<u64, usize>,
    /// Card positions by descending score, ties by ascending id.
    by_score: Vec<usize>,
    encounters: HashMap<u64, Encounter>,
    /// `None` when there are no cards to take tier cuts from.
    builder: Option<CardBuilder>,
    metrics: Option<String>,
}

#[derive(Debug)]
pub enum WhatIfError {
    UnknownEncounter(u64),
    UnknownFeature(Vec<String>),
    BadValue(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WhatIfResult {
    pub encounter_id: u64,
    pub new_score: f64,
    pub new_tier: RiskTier,
    pub new_factors: Vec<readmit_core::card::Factor>,
    /// Raw fields that were overridden; dependent features were recomputed.
    pub recomputed: Vec<String>,
    /// Engineered features set directly, without recomputing anything.
    pub direct_overrides: Vec<String>,
}

impl Store {
    pub fn load(cfg: &ServiceConfig) -> Result<Self> {
        cfg.check_paths()?;
        let model = Ensemble::load(&cfg.model)?;
        let text = std::fs::read_to_string(&cfg.cards).with_context(|| format!("reading {}", cfg.cards.display()))?;
        let cards = readmit_core::card::read_ndjson(&text)?;
        let encounters = DataDir::new(&cfg.data).read_encounters()?;
        let metrics = match &cfg.metrics {
            Some(p) => Some(std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?),
            None => None,
        };
        Store::new(model, cards, encounters, metrics)
    }

    pub fn new(
        model: Ensemble,
        cards: Vec<(PatientCard, String)>,
        encounters: Vec<Encounter>,
        metrics: Option<String>,
    ) -> Result<Self> {
        let fp = model.fingerprint();
        let encounters: HashMap<u64, Encounter> = encounters.into_iter().map(|e| (e.encounter_id, e)).collect();
        let mut sorted: BTreeMap<u64, StoredCard> = BTreeMap::new();
        for (card, raw) in cards {
            if card.model_meta.model_fingerprint != fp {
                bail!(Error::Config(format!(
                    "card {} was built by model {}, not {fp}",
                    card.encounter_id, card.model_meta.model_fingerprint
                )));
            }
            if !encounters.contains_key(&card.encounter_id) {
                bail!(Error::Config(format!("card {} has no stored encounter", card.encounter_id)));
            }
            let id = card.encounter_id;
            if sorted.insert(id, StoredCard { card, raw }).is_some() {
                bail!(Error::Config(format!("duplicate card for encounter {id}")));
            }
        }
        let cards: Vec<StoredCard> = sorted.into_values().collect();
        let builder = match cards.first() {
            None => None,
            Some(c) => {
                let m = &c.card.model_meta;
                let cuts = TierThresholds {
                    high_cut: m.high_cut,
                    medium_cut: m.medium_cut,
                    provenance: CutProvenance::QuantileBased,
                };
                Some(CardBuilder::new(model, cuts, PhraseTable::bundled(), m.clone())?)
            }
        };
        let by_id = cards.iter().enumerate().map(|(i, c)| (c.card.encounter_id, i)).collect();
        let mut by_score: Vec<usize> = (0..cards.len()).collect();
        by_score.sort_by(|&a, &b| cards[b].card.risk_score.total_cmp(&cards[a].card.risk_score).then(a.cmp(&b)));
        Ok(Store {
            cards,
            by_id,
            by_score,
            encounters,
            builder,
            metrics,
        })
    }

    pub fn len(&self) -> usize {
        self.cards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cards.is_empty()
    }

    pub fn card(&self, id: u64) -> Option<&StoredCard> {
        self.by_id.get(&id).map(|&i| &self.cards[i])
    }

    pub fn by_id(&self) -> impl Iterator<Item = &StoredCard> {
        self.cards.iter()
    }

    pub fn by_score(&self) -> impl Iterator<Item = &StoredCard> {
        self.by_score.iter().map(|&i| &self.cards[i])
    }

    pub fn metrics(&self) -> Option<&str> {
        self.metrics.as_deref()
    }

    /// Rescores a stored encounter with overrides applied. Raw counts and
    /// codes are set on the encounter first so dependent features follow;
    /// any other registry feature is then set on the engineered vector.
    pub fn what_if(&self, id: u64, overrides: &BTreeMap<String, f64>) -> Result<WhatIfResult, WhatIfError> {
        let (Some(builder), Some(_)) = (&self.builder, self.by_id.get(&id)) else {
            return Err(WhatIfError::UnknownEncounter(id));
        };
        let mut e = self.encounters[&id].clone();
        let registry = &builder.model().registry;
        let unknown: Vec<String> = overrides
            .keys()
            .filter(|k| !RAW_OVERRIDABLE.contains(&k.as_str()) && !registry.contains(k))
            .cloned()
            .collect();
        if !unknown.is_empty() {
            return Err(WhatIfError::UnknownFeature(unknown));
        }
        let mut recomputed = Vec::new();
        let mut direct = Vec::new();
        for (name, &v) in overrides {
            match apply_raw_override(&mut e, name, v) {
                Ok(true) => recomputed.push(name.clone()),
                Ok(false) => direct.push(name.clone()),
                Err(err) => return Err(WhatIfError::BadValue(err.to_string())),
            }
        }
        let mut x = builder.engineer().engineer(&e);
        for name in &direct {
            let v = overrides[name];
            if !v.is_finite() {
                return Err(WhatIfError::BadValue(format!("{name} must be finite")));
            }
            let i = registry.index_of(name).expect("checked above");
            x.values[i] = v;
        }
        let Scored { score, tier, factors } = builder.score(&x).map_err(|e| WhatIfError::BadValue(e.to_string()))?;
        Ok(WhatIfResult {
            encounter_id: id,
            new_score: score,
            new_tier: tier,
            new_factors: factors,
            recomputed,
            direct_overrides: direct,
        })
    }
}
