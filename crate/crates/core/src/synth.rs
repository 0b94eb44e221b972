//! Synthetic cohorts in the public file's schema, for tests and demos when
//! the real extract is not at hand.
//!
//! The generating model is loosely shaped like the real data: readmission
//! rises with prior inpatient stays, emergency visits, facility discharge
//! and length of stay. Nothing here is calibrated to published figures.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ingest::{AgeBracket, Encounter, Gender, LabResult, MedStatus, Readmitted, EXPIRED_OR_HOSPICE};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub rows: usize,
    pub seed: u64,
    /// Shift of the outcome log-odds; lower means rarer readmission.
    pub intercept: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            rows: 2000,
            seed: 7,
            intercept: -2.9,
        }
    }
}

const DISPOSITIONS: [(u16, u32); 12] = [
    (1, 590),
    (3, 137),
    (6, 127),
    (18, 36),
    (2, 21),
    (22, 20),
    (11, 16),
    (5, 12),
    (25, 10),
    (4, 8),
    (7, 6),
    (23, 4),
];

const RACES: [(&str, u32); 6] = [
    ("Caucasian", 75),
    ("AfricanAmerican", 19),
    ("Hispanic", 2),
    ("Asian", 1),
    ("Other", 1),
    ("?", 2),
];

const DIAG_CODES: [&str; 10] = ["428", "414", "786", "486", "250.83", "599", "996", "715", "174", "V57"];

fn pick<T: Copy>(rng: &mut ChaCha8Rng, table: &[(T, u32)]) -> T {
    let w = WeightedIndex::new(table.iter().map(|t| t.1)).expect("non-empty weights");
    table[w.sample(rng)].0
}

/// Small counts with a long tail: P(k) proportional to `decay^k`.
fn count(rng: &mut ChaCha8Rng, p_zero: f64, decay: f64, max: u32) -> u32 {
    if rng.gen_bool(p_zero) {
        return 0;
    }
    let mut k = 1;
    while k < max && rng.gen_bool(decay) {
        k += 1;
    }
    k
}

pub fn cohort(cfg: &SynthConfig) -> Vec<Encounter> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.rows).map(|i| encounter(&mut rng, i as u64, cfg.intercept)).collect()
}

fn encounter(rng: &mut ChaCha8Rng, i: u64, intercept: f64) -> Encounter {
    let mut e = Encounter::template(2_000_000 + i * 7);
    e.patient_nbr = 100_000 + rng.gen_range(0..(i + 1) * 3);
    e.race = match pick(rng, &RACES) {
        "?" => None,
        r => Some(r.to_string()),
    };
    e.gender = if rng.gen_bool(0.46) { Gender::Male } else { Gender::Female };
    e.age = AgeBracket::new(10 * rng.gen_range(2..10u8));
    e.admission_type_id = pick(rng, &[(1, 53), (2, 18), (3, 19), (5, 5), (6, 5)]);
    e.admission_source_id = pick(rng, &[(7, 56), (1, 29), (17, 7), (4, 3), (6, 2), (2, 1)]);
    e.discharge_disposition_id = pick(rng, &DISPOSITIONS);
    e.time_in_hospital = 1 + count(rng, 0.14, 0.74, 13);
    e.num_lab_procedures = rng.gen_range(1..100);
    e.num_procedures = count(rng, 0.46, 0.5, 6);
    e.num_medications = rng.gen_range(1..40);
    e.number_outpatient = count(rng, 0.83, 0.45, 20);
    e.number_emergency = count(rng, 0.89, 0.4, 20);
    e.number_inpatient = count(rng, 0.66, 0.5, 15);
    e.diag_1 = Some(DIAG_CODES[rng.gen_range(0..DIAG_CODES.len())].to_string());
    e.diag_2 = Some(DIAG_CODES[rng.gen_range(0..DIAG_CODES.len())].to_string());
    e.diag_3 = rng.gen_bool(0.98).then(|| DIAG_CODES[rng.gen_range(0..DIAG_CODES.len())].to_string());
    e.number_diagnoses = rng.gen_range(3..=9);
    e.max_glu_serum = pick(rng, &[(LabResult::None, 95), (LabResult::Norm, 3), (LabResult::High, 1), (LabResult::VeryHigh, 1)]);
    e.a1c_result = pick(rng, &[(LabResult::None, 83), (LabResult::Norm, 5), (LabResult::High, 4), (LabResult::VeryHigh, 8)]);
    for m in e.medications.iter_mut() {
        *m = if rng.gen_bool(0.08) {
            pick(rng, &[(MedStatus::Steady, 7), (MedStatus::Up, 2), (MedStatus::Down, 1)])
        } else {
            MedStatus::No
        };
    }
    e.change = e.medications.iter().any(|m| matches!(m, MedStatus::Up | MedStatus::Down));
    e.diabetes_med = e.change || e.medications.iter().any(|m| *m != MedStatus::No) || rng.gen_bool(0.3);

    let facility = matches!(e.discharge_disposition_id, 3 | 5 | 22 | 23 | 4);
    let logit = intercept
        + 0.42 * f64::from(e.number_inpatient.min(6))
        + 0.12 * f64::from(e.number_emergency.min(5))
        + 0.03 * f64::from(e.number_outpatient.min(5))
        + if facility { 0.45 } else { 0.0 }
        + 0.05 * f64::from(e.time_in_hospital)
        + 0.03 * f64::from(e.number_diagnoses);
    let p = 1.0 / (1.0 + (-logit).exp());
    e.readmitted = if EXPIRED_OR_HOSPICE.contains(&e.discharge_disposition_id) {
        Readmitted::No
    } else if rng.gen_bool(p) {
        Readmitted::Within30
    } else if rng.gen_bool(0.38) {
        Readmitted::After30
    } else {
        Readmitted::No
    };
    e
}
