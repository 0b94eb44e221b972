//! Feature engineering from raw encounters.
//!
//! The default set covers prior utilization, discharge planning, glycemic
//! control and demographics. Utilization and discharge indicators are
//! reconstructions from their names: `inpatient_ge_2` is a threshold on
//! prior inpatient visits, `prior_util_sum` adds the three prior-year visit
//! counts, `discharge_snf_rehab` marks skilled-nursing, intermediate-care,
//! rehab and swing-bed dispositions.
//!
//! Absent inputs become [`MISSING`] (NaN); the tree learner routes them
//! along a learned default direction.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest::{Encounter, Gender, LabResult, MedStatus, MEDICATIONS};

/// Missing-value marker inside feature vectors.
pub const MISSING: f64 = f64::NAN;

/// Discharge dispositions grouped as skilled nursing / ICF / rehab / swing bed.
pub const SNF_REHAB_DISPOSITIONS: [u16; 7] = [3, 4, 5, 15, 22, 23, 24];

pub const RACE_LEVELS: [&str; 5] = ["Caucasian", "AfricanAmerican", "Hispanic", "Asian", "Other"];

/// Coarse ICD-9 chapters for the optional primary-diagnosis grouping.
pub const DIAG_GROUPS: [&str; 9] = [
    "circulatory",
    "respiratory",
    "digestive",
    "diabetes",
    "injury",
    "musculoskeletal",
    "genitourinary",
    "neoplasms",
    "other",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    Numeric,
    Binary,
    /// Integer code whose numeric order carries no meaning of its own.
    Ordinal,
}

impl FeatureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Numeric => "numeric",
            FeatureKind::Binary => "binary",
            FeatureKind::Ordinal => "ordinal",
        }
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "numeric" => Ok(FeatureKind::Numeric),
            "binary" => Ok(FeatureKind::Binary),
            "ordinal" => Ok(FeatureKind::Ordinal),
            _ => Err(Error::Format(format!("unknown feature kind {s:?}"))),
        }
    }
}

/// Optional feature groups outside the default set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FeatureOptions {
    /// One-hot of every medication column's status.
    pub include_medications: bool,
    /// Coarse ICD-9 chapter of `diag_1`.
    pub include_diag_groups: bool,
}

/// Ordered feature names and kinds. The order is what trained models index
/// into, so it never changes for a given [`FeatureOptions`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureRegistry {
    names: Vec<String>,
    kinds: Vec<FeatureKind>,
}

impl Default for FeatureRegistry {
    fn default() -> Self {
        registry()
    }
}

/// The default registry.
pub fn registry() -> FeatureRegistry {
    FeatureRegistry::with_options(FeatureOptions::default())
}

impl FeatureRegistry {
    pub fn with_options(opts: FeatureOptions) -> Self {
        use FeatureKind::*;
        let mut r = FeatureRegistry {
            names: Vec::new(),
            kinds: Vec::new(),
        };
        let mut add = |name: &str, kind| {
            r.names.push(name.to_string());
            r.kinds.push(kind);
        };
        add("inpatient_ge_2", Binary);
        add("number_inpatient", Numeric);
        add("number_outpatient", Numeric);
        add("number_emergency", Numeric);
        add("prior_util_sum", Numeric);
        add("discharge_disposition_id", Ordinal);
        add("admission_type_id", Ordinal);
        add("admission_source_id", Ordinal);
        add("discharge_home", Binary);
        add("discharge_snf_rehab", Binary);
        add("a1c_high", Binary);
        add("any_diabetes_med", Binary);
        add("age_mid", Numeric);
        add("gender_Male", Binary);
        add("time_in_hospital", Numeric);
        add("num_lab_procedures", Numeric);
        add("num_procedures", Numeric);
        add("num_medications", Numeric);
        add("number_diagnoses", Numeric);
        for level in RACE_LEVELS {
            add(&format!("race_{level}"), Binary);
        }
        for level in LabResult::ALL {
            add(&format!("max_glu_serum_{}", glu_level_name(level)), Binary);
        }
        add("change_Ch", Binary);
        add("change_No", Binary);
        if opts.include_medications {
            for med in MEDICATIONS {
                for status in MedStatus::ALL {
                    add(&format!("med_{med}_{}", status.as_str()), Binary);
                }
            }
        }
        if opts.include_diag_groups {
            for g in DIAG_GROUPS {
                add(&format!("diag_1_{g}"), Binary);
            }
        }
        r
    }

    /// Builds a registry from explicit names, rejecting duplicates.
    pub fn from_parts(names: Vec<String>, kinds: Vec<FeatureKind>) -> Result<Self> {
        if names.len() != kinds.len() {
            return Err(Error::Format("registry names and kinds differ in length".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for n in &names {
            if n.is_empty() || n.chars().any(char::is_whitespace) {
                return Err(Error::Format(format!("feature name {n:?} is empty or has whitespace")));
            }
            if !seen.insert(n.as_str()) {
                return Err(Error::Format(format!("duplicate feature name {n:?}")));
            }
        }
        Ok(FeatureRegistry { names, kinds })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn kinds(&self) -> &[FeatureKind] {
        &self.kinds
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index_of(name).is_some()
    }

    /// Hex SHA-256 prefix over the ordered `(name, kind)` pairs.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (n, k) in self.names.iter().zip(&self.kinds) {
            h.update(n.as_bytes());
            h.update(b":");
            h.update(k.as_str().as_bytes());
            h.update(b"\n");
        }
        h.finalize()[..16].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// One `name<TAB>kind` line per feature.
    pub fn to_text(&self) -> String {
        self.names
            .iter()
            .zip(&self.kinds)
            .map(|(n, k)| format!("{n}\t{}\n", k.as_str()))
            .collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut names = Vec::new();
        let mut kinds = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (n, k) = line
                .split_once('\t')
                .ok_or_else(|| Error::Format(format!("registry line {line:?} lacks a kind")))?;
            names.push(n.to_string());
            kinds.push(k.trim().parse()?);
        }
        FeatureRegistry::from_parts(names, kinds)
    }
}

fn glu_level_name(level: LabResult) -> &'static str {
    match level {
        LabResult::None => "None",
        LabResult::Norm => "Norm",
        LabResult::High => "gt200",
        LabResult::VeryHigh => "gt300",
    }
}

/// Engineered values for one encounter, aligned with a registry.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Bitwise equality, so NaN equals NaN.
    pub fn same_bits(&self, other: &FeatureVector) -> bool {
        self.values.len() == other.values.len()
            && self.values.iter().zip(&other.values).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Dense row-major matrix of feature values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Contract(format!(
                "matrix of {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(FeatureMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Contract("ragged rows".into()));
        }
        FeatureMatrix::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn column(&self, col: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.rows).map(move |r| self.get(r, col))
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    /// Numeric CSV with the registry names as header; missing as `NaN`.
    pub fn write_csv<W: Write>(&self, registry: &FeatureRegistry, sink: W) -> Result<()> {
        if registry.len() != self.cols {
            return Err(Error::Contract("registry length differs from matrix width".into()));
        }
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(registry.names())?;
        for r in 0..self.rows {
            w.write_record(self.row(r).iter().map(|v| v.to_string()))?;
        }
        w.flush().map_err(|e| Error::Format(format!("csv flush: {e}")))?;
        Ok(())
    }

    /// Reads a matrix written by [`FeatureMatrix::write_csv`] and returns its header.
    pub fn read_csv<R: BufRead>(source: R) -> Result<(FeatureMatrix, Vec<String>)> {
        let mut rdr = csv::Reader::from_reader(source);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut data = Vec::new();
        let mut rows = 0;
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            if rec.len() != header.len() {
                return Err(Error::Format(format!("matrix row {} has {} cells", i + 1, rec.len())));
            }
            for cell in rec.iter() {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| Error::Format(format!("matrix row {}: bad number {cell:?}", i + 1)))?;
                data.push(v);
            }
            rows += 1;
        }
        let cols = header.len();
        Ok((FeatureMatrix::new(rows, cols, data)?, header))
    }
}

/// Turns encounters into feature vectors for one registry layout.
#[derive(Debug, Clone)]
pub struct FeatureEngineer {
    opts: FeatureOptions,
    registry: FeatureRegistry,
}

impl Default for FeatureEngineer {
    fn default() -> Self {
        FeatureEngineer::new(FeatureOptions::default())
    }
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

/// ICD-9 chapter of a diagnosis code, following the usual grouping for
/// this dataset (250.xx is split out as diabetes).
pub fn diag_group(code: &str) -> &'static str {
    if code.starts_with('V') || code.starts_with('E') {
        return "other";
    }
    let Ok(v) = code.parse::<f64>() else {
        return "other";
    };
    let whole = v.floor() as i64;
    match whole {
        390..=459 | 785 => "circulatory",
        460..=519 | 786 => "respiratory",
        520..=579 | 787 => "digestive",
        250 => "diabetes",
        800..=999 => "injury",
        710..=739 => "musculoskeletal",
        580..=629 | 788 => "genitourinary",
        140..=239 => "neoplasms",
        _ => "other",
    }
}

impl FeatureEngineer {
    pub fn new(opts: FeatureOptions) -> Self {
        FeatureEngineer {
            opts,
            registry: FeatureRegistry::with_options(opts),
        }
    }

    /// The engineer whose output layout is `registry`.
    pub fn for_registry(registry: &FeatureRegistry) -> Result<Self> {
        for include_medications in [false, true] {
            for include_diag_groups in [false, true] {
                let fe = FeatureEngineer::new(FeatureOptions {
                    include_medications,
                    include_diag_groups,
                });
                if fe.registry == *registry {
                    return Ok(fe);
                }
            }
        }
        Err(Error::Contract(format!(
            "registry {} is not produced by any feature option set",
            registry.fingerprint()
        )))
    }

    pub fn options(&self) -> FeatureOptions {
        self.opts
    }

    pub fn registry(&self) -> &FeatureRegistry {
        &self.registry
    }

    pub fn engineer(&self, e: &Encounter) -> FeatureVector {
        let mut v = Vec::with_capacity(self.registry.len());
        let ip = f64::from(e.number_inpatient);
        let op = f64::from(e.number_outpatient);
        let er = f64::from(e.number_emergency);
        v.push(flag(e.number_inpatient >= 2));
        v.push(ip);
        v.push(op);
        v.push(er);
        v.push(op + er + ip);
        v.push(f64::from(e.discharge_disposition_id));
        v.push(f64::from(e.admission_type_id));
        v.push(f64::from(e.admission_source_id));
        v.push(flag(e.discharge_disposition_id == 1));
        v.push(flag(SNF_REHAB_DISPOSITIONS.contains(&e.discharge_disposition_id)));
        // Not ordering the test is informative, so it is 0 rather than missing.
        v.push(flag(matches!(e.a1c_result, LabResult::High | LabResult::VeryHigh)));
        v.push(flag(e.diabetes_med));
        v.push(e.age.map_or(MISSING, |a| a.midpoint()));
        v.push(flag(e.gender == Gender::Male));
        v.push(f64::from(e.time_in_hospital));
        v.push(f64::from(e.num_lab_procedures));
        v.push(f64::from(e.num_procedures));
        v.push(f64::from(e.num_medications));
        v.push(f64::from(e.number_diagnoses));
        match e.race.as_deref() {
            None => v.extend([MISSING; RACE_LEVELS.len()]),
            Some(race) => {
                let known = RACE_LEVELS.contains(&race);
                v.extend(
                    RACE_LEVELS
                        .iter()
                        .map(|l| flag(*l == race || (!known && *l == "Other"))),
                );
            }
        }
        v.extend(LabResult::ALL.iter().map(|l| flag(*l == e.max_glu_serum)));
        v.push(flag(e.change));
        v.push(flag(!e.change));
        if self.opts.include_medications {
            for m in &e.medications {
                v.extend(MedStatus::ALL.iter().map(|s| flag(s == m)));
            }
        }
        if self.opts.include_diag_groups {
            match e.diag_1.as_deref() {
                None => v.extend([MISSING; DIAG_GROUPS.len()]),
                Some(code) => {
                    let g = diag_group(code);
                    v.extend(DIAG_GROUPS.iter().map(|d| flag(*d == g)));
                }
            }
        }
        debug_assert_eq!(v.len(), self.registry.len());
        FeatureVector { values: v }
    }

    pub fn matrixize(&self, encounters: &[Encounter]) -> Result<FeatureMatrix> {
        if encounters.is_empty() {
            return Err(Error::Domain("cannot build a feature matrix from zero encounters".into()));
        }
        let cols = self.registry.len();
        let mut data = Vec::with_capacity(encounters.len() * cols);
        for e in encounters {
            data.extend(self.engineer(e).values);
        }
        FeatureMatrix::new(encounters.len(), cols, data)
    }
}

/// Default-registry feature vector for one encounter.
pub fn engineer(e: &Encounter) -> FeatureVector {
    FeatureEngineer::default().engineer(e)
}

/// Default-registry matrix; row `i` is encounter `i`.
pub fn matrixize(encounters: &[Encounter]) -> Result<(FeatureMatrix, FeatureRegistry)> {
    let fe = FeatureEngineer::default();
    let m = fe.matrixize(encounters)?;
    Ok((m, fe.registry))
}

/// Raw encounter fields that can be overridden directly. Engineered
/// features derived from them are recomputed by re-running the engineer.
pub const RAW_OVERRIDABLE: [&str; 11] = [
    "number_inpatient",
    "number_outpatient",
    "number_emergency",
    "time_in_hospital",
    "num_lab_procedures",
    "num_procedures",
    "num_medications",
    "number_diagnoses",
    "discharge_disposition_id",
    "admission_type_id",
    "admission_source_id",
];

#[derive(Debug, Clone, PartialEq)]
pub struct OverrideError(pub String);

impl fmt::Display for OverrideError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Sets a raw count or code on `e`. Returns `Ok(false)` when `name` is not
/// a raw field.
pub fn apply_raw_override(e: &mut Encounter, name: &str, value: f64) -> std::result::Result<bool, OverrideError> {
    if !RAW_OVERRIDABLE.contains(&name) {
        return Ok(false);
    }
    if !(value.is_finite() && value >= 0.0 && value.fract() == 0.0) {
        return Err(OverrideError(format!("{name} must be a non-negative integer, got {value}")));
    }
    let as_u32 = || u32::try_from(value as u64).map_err(|_| OverrideError(format!("{name} out of range")));
    let as_u16 = || u16::try_from(value as u64).map_err(|_| OverrideError(format!("{name} out of range")));
    match name {
        "number_inpatient" => e.number_inpatient = as_u32()?,
        "number_outpatient" => e.number_outpatient = as_u32()?,
        "number_emergency" => e.number_emergency = as_u32()?,
        "time_in_hospital" => e.time_in_hospital = as_u32()?,
        "num_lab_procedures" => e.num_lab_procedures = as_u32()?,
        "num_procedures" => e.num_procedures = as_u32()?,
        "num_medications" => e.num_medications = as_u32()?,
        "number_diagnoses" => e.number_diagnoses = as_u32()?,
        "discharge_disposition_id" => e.discharge_disposition_id = as_u16()?,
        "admission_type_id" => e.admission_type_id = as_u16()?,
        "admission_source_id" => e.admission_source_id = as_u16()?,
        _ => unreachable!(),
    }
    Ok(true)
}
