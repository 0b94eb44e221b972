//! Parsing of the Diabetes 130-US Hospitals encounter file.
//!
//! The file has one row per hospital admission with 50 columns. Absent
//! values are written as `?`. Parsing is tolerant at the row level: a row
//! with an unparseable or out-of-domain cell is skipped and reported, and
//! the remaining rows are still returned.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use log::warn;

use crate::error::{Error, Result};

/// Sentinel the public file uses for absent values.
pub const MISSING: &str = "?";

/// The 23 medication columns, in file order.
pub const MEDICATIONS: [&str; 23] = [
    "metformin",
    "repaglinide",
    "nateglinide",
    "chlorpropamide",
    "glimepiride",
    "acetohexamide",
    "glipizide",
    "glyburide",
    "tolbutamide",
    "pioglitazone",
    "rosiglitazone",
    "acarbose",
    "miglitol",
    "troglitazone",
    "tolazamide",
    "examide",
    "citoglipton",
    "insulin",
    "glyburide-metformin",
    "glipizide-metformin",
    "glimepiride-pioglitazone",
    "metformin-rosiglitazone",
    "metformin-pioglitazone",
];

/// Published column order of `diabetic_data.csv`.
pub const COLUMNS: [&str; 50] = [
    "encounter_id",
    "patient_nbr",
    "race",
    "gender",
    "age",
    "weight",
    "admission_type_id",
    "discharge_disposition_id",
    "admission_source_id",
    "time_in_hospital",
    "payer_code",
    "medical_specialty",
    "num_lab_procedures",
    "num_procedures",
    "num_medications",
    "number_outpatient",
    "number_emergency",
    "number_inpatient",
    "diag_1",
    "diag_2",
    "diag_3",
    "number_diagnoses",
    "max_glu_serum",
    "A1Cresult",
    "metformin",
    "repaglinide",
    "nateglinide",
    "chlorpropamide",
    "glimepiride",
    "acetohexamide",
    "glipizide",
    "glyburide",
    "tolbutamide",
    "pioglitazone",
    "rosiglitazone",
    "acarbose",
    "miglitol",
    "troglitazone",
    "tolazamide",
    "examide",
    "citoglipton",
    "insulin",
    "glyburide-metformin",
    "glipizide-metformin",
    "glimepiride-pioglitazone",
    "metformin-rosiglitazone",
    "metformin-pioglitazone",
    "change",
    "diabetesMed",
    "readmitted",
];

/// Discharge dispositions for patients who expired or went to hospice.
/// These cannot be readmitted in the usual sense; see [`exclude_dispositions`].
pub const EXPIRED_OR_HOSPICE: [u16; 6] = [11, 13, 14, 19, 20, 21];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Gender {
    Female,
    Male,
    /// The file's `Unknown/Invalid` value, and anything else unrecognised.
    Unknown,
}

impl Gender {
    fn parse(s: &str) -> Gender {
        match s {
            "Female" => Gender::Female,
            "Male" => Gender::Male,
            _ => Gender::Unknown,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Female => "Female",
            Gender::Male => "Male",
            Gender::Unknown => "Unknown/Invalid",
        }
    }
}

/// Ten-year age bracket `[lo-lo+10)`, stored by its lower bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AgeBracket(u8);

impl AgeBracket {
    pub fn new(lower: u8) -> Option<Self> {
        (lower % 10 == 0 && lower <= 90).then_some(AgeBracket(lower))
    }

    pub fn lower(self) -> u8 {
        self.0
    }

    pub fn midpoint(self) -> f64 {
        f64::from(self.0) + 5.0
    }
}

impl FromStr for AgeBracket {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let inner = s
            .strip_prefix('[')
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(|| format!("age bracket {s:?} is not of the form [lo-hi)"))?;
        let (lo, hi) = inner
            .split_once('-')
            .ok_or_else(|| format!("age bracket {s:?} has no '-'"))?;
        let lo: u8 = lo.parse().map_err(|_| format!("age bracket {s:?}"))?;
        let hi: u16 = hi.parse().map_err(|_| format!("age bracket {s:?}"))?;
        if u16::from(lo) + 10 != hi {
            return Err(format!("age bracket {s:?} is not ten years wide"));
        }
        AgeBracket::new(lo).ok_or_else(|| format!("age bracket {s:?} out of range"))
    }
}

impl fmt::Display for AgeBracket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}-{})", self.0, u16::from(self.0) + 10)
    }
}

/// Ordered lab result shared by `max_glu_serum` (>200, >300) and
/// `A1Cresult` (>7, >8).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LabResult {
    /// Test not taken.
    None,
    Norm,
    High,
    VeryHigh,
}

/// Which lab a [`LabResult`] belongs to; selects the textual cut points.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lab {
    GlucoseSerum,
    A1c,
}

impl LabResult {
    pub const ALL: [LabResult; 4] = [LabResult::None, LabResult::Norm, LabResult::High, LabResult::VeryHigh];

    fn parse(s: &str, lab: Lab) -> std::result::Result<Self, String> {
        // Later releases of the file leave the not-taken level blank.
        match (s, lab) {
            ("None" | "" | MISSING, _) => Ok(LabResult::None),
            ("Norm", _) => Ok(LabResult::Norm),
            (">200", Lab::GlucoseSerum) | (">7", Lab::A1c) => Ok(LabResult::High),
            (">300", Lab::GlucoseSerum) | (">8", Lab::A1c) => Ok(LabResult::VeryHigh),
            _ => Err(format!("unknown lab result {s:?}")),
        }
    }

    pub fn as_str(self, lab: Lab) -> &'static str {
        match (self, lab) {
            (LabResult::None, _) => "None",
            (LabResult::Norm, _) => "Norm",
            (LabResult::High, Lab::GlucoseSerum) => ">200",
            (LabResult::VeryHigh, Lab::GlucoseSerum) => ">300",
            (LabResult::High, Lab::A1c) => ">7",
            (LabResult::VeryHigh, Lab::A1c) => ">8",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MedStatus {
    No,
    Steady,
    Up,
    Down,
}

impl MedStatus {
    pub const ALL: [MedStatus; 4] = [MedStatus::No, MedStatus::Steady, MedStatus::Up, MedStatus::Down];

    pub fn as_str(self) -> &'static str {
        match self {
            MedStatus::No => "No",
            MedStatus::Steady => "Steady",
            MedStatus::Up => "Up",
            MedStatus::Down => "Down",
        }
    }
}

impl FromStr for MedStatus {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "No" => Ok(MedStatus::No),
            "Steady" => Ok(MedStatus::Steady),
            "Up" => Ok(MedStatus::Up),
            "Down" => Ok(MedStatus::Down),
            _ => Err(format!("unknown medication status {s:?}")),
        }
    }
}

/// Source value of the `readmitted` column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Readmitted {
    Within30,
    After30,
    No,
}

impl Readmitted {
    pub fn as_str(self) -> &'static str {
        match self {
            Readmitted::Within30 => "<30",
            Readmitted::After30 => ">30",
            Readmitted::No => "NO",
        }
    }

    pub fn label(self) -> u8 {
        u8::from(self == Readmitted::Within30)
    }
}

impl FromStr for Readmitted {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "<30" => Ok(Readmitted::Within30),
            ">30" => Ok(Readmitted::After30),
            "NO" => Ok(Readmitted::No),
            _ => Err(Error::Data(format!("unknown readmission value {s:?}"))),
        }
    }
}

/// One hospital admission.
#[derive(Debug, Clone, PartialEq)]
pub struct Encounter {
    pub encounter_id: u64,
    pub patient_nbr: u64,
    pub race: Option<String>,
    pub gender: Gender,
    pub age: Option<AgeBracket>,
    pub weight: Option<String>,
    pub admission_type_id: u16,
    pub discharge_disposition_id: u16,
    pub admission_source_id: u16,
    pub time_in_hospital: u32,
    pub payer_code: Option<String>,
    pub medical_specialty: Option<String>,
    pub num_lab_procedures: u32,
    pub num_procedures: u32,
    pub num_medications: u32,
    pub number_outpatient: u32,
    pub number_emergency: u32,
    pub number_inpatient: u32,
    pub diag_1: Option<String>,
    pub diag_2: Option<String>,
    pub diag_3: Option<String>,
    pub number_diagnoses: u32,
    pub max_glu_serum: LabResult,
    pub a1c_result: LabResult,
    /// Indexed like [`MEDICATIONS`].
    pub medications: [MedStatus; 23],
    /// `change == "Ch"`.
    pub change: bool,
    /// `diabetesMed == "Yes"`.
    pub diabetes_med: bool,
    pub readmitted: Readmitted,
}

impl Encounter {
    /// 1 iff readmitted within 30 days.
    pub fn label(&self) -> u8 {
        self.readmitted.label()
    }

    pub fn medication(&self, name: &str) -> Option<MedStatus> {
        MEDICATIONS.iter().position(|m| *m == name).map(|i| self.medications[i])
    }

    /// A plausible all-defaults admission: discharged home, no prior visits,
    /// no labs, no medication changes, not readmitted.
    pub fn template(encounter_id: u64) -> Self {
        Encounter {
            encounter_id,
            patient_nbr: encounter_id,
            race: None,
            gender: Gender::Female,
            age: AgeBracket::new(50),
            weight: None,
            admission_type_id: 1,
            discharge_disposition_id: 1,
            admission_source_id: 7,
            time_in_hospital: 1,
            payer_code: None,
            medical_specialty: None,
            num_lab_procedures: 0,
            num_procedures: 0,
            num_medications: 0,
            number_outpatient: 0,
            number_emergency: 0,
            number_inpatient: 0,
            diag_1: None,
            diag_2: None,
            diag_3: None,
            number_diagnoses: 1,
            max_glu_serum: LabResult::None,
            a1c_result: LabResult::None,
            medications: [MedStatus::No; 23],
            change: false,
            diabetes_med: false,
            readmitted: Readmitted::No,
        }
    }
}

/// An encounter paired with its binary target.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEncounter {
    pub encounter: Encounter,
    pub label: u8,
}

impl From<Encounter> for LabeledEncounter {
    fn from(encounter: Encounter) -> Self {
        let label = encounter.label();
        LabeledEncounter { encounter, label }
    }
}

/// A skipped data row.
#[derive(Debug, Clone, PartialEq)]
pub struct RowError {
    /// 1-based data row (the header is not counted).
    pub row: usize,
    pub column: Option<String>,
    pub message: String,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.column {
            Some(c) => write!(f, "row {}, column {c}: {}", self.row, self.message),
            None => write!(f, "row {}: {}", self.row, self.message),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParseOutcome {
    pub encounters: Vec<Encounter>,
    pub errors: Vec<RowError>,
    /// Data rows read, including skipped ones.
    pub rows_read: usize,
}

impl ParseOutcome {
    pub fn labels(&self) -> Vec<u8> {
        self.encounters.iter().map(Encounter::label).collect()
    }
}

/// Maps the published column names to their positions in a given header.
struct ColumnMap([usize; 50]);

impl ColumnMap {
    fn from_header(header: &csv::StringRecord) -> Result<Self> {
        let mut idx = [0usize; 50];
        let mut missing = Vec::new();
        for (slot, name) in idx.iter_mut().zip(COLUMNS.iter()) {
            match header.iter().position(|h| h.trim() == *name) {
                Some(p) => *slot = p,
                None => missing.push(*name),
            }
        }
        if !missing.is_empty() {
            return Err(Error::Schema(format!(
                "header is missing required column(s): {}",
                missing.join(", ")
            )));
        }
        Ok(ColumnMap(idx))
    }
}

struct Row<'a> {
    record: &'a csv::StringRecord,
    map: &'a ColumnMap,
    row: usize,
}

impl Row<'_> {
    fn cell(&self, col: usize) -> &str {
        self.record.get(self.map.0[col]).unwrap_or("").trim()
    }

    fn err(&self, col: usize, message: impl Into<String>) -> RowError {
        RowError {
            row: self.row,
            column: Some(COLUMNS[col].to_string()),
            message: message.into(),
        }
    }

    fn opt(&self, col: usize) -> Option<String> {
        let v = self.cell(col);
        (v != MISSING && !v.is_empty()).then(|| v.to_string())
    }

    fn num<T: FromStr>(&self, col: usize) -> std::result::Result<T, RowError> {
        let v = self.cell(col);
        if v == MISSING || v.is_empty() {
            return Err(self.err(col, "required value is missing"));
        }
        v.parse()
            .map_err(|_| self.err(col, format!("cannot parse {v:?} as a non-negative integer")))
    }
}

fn parse_row(row: &Row<'_>) -> std::result::Result<Encounter, RowError> {
    let age = match row.opt(4) {
        None => None,
        Some(s) => Some(s.parse::<AgeBracket>().map_err(|m| row.err(4, m))?),
    };
    let mut medications = [MedStatus::No; 23];
    for (i, slot) in medications.iter_mut().enumerate() {
        let col = 24 + i;
        *slot = row.cell(col).parse().map_err(|m: String| row.err(col, m))?;
    }
    let change = match row.cell(47) {
        "Ch" => true,
        "No" => false,
        other => return Err(row.err(47, format!("unknown change value {other:?}"))),
    };
    let diabetes_med = match row.cell(48) {
        "Yes" => true,
        "No" => false,
        other => return Err(row.err(48, format!("unknown diabetesMed value {other:?}"))),
    };
    let readmitted = row
        .cell(49)
        .parse::<Readmitted>()
        .map_err(|e| row.err(49, e.to_string()))?;

    Ok(Encounter {
        encounter_id: row.num(0)?,
        patient_nbr: row.num(1)?,
        race: row.opt(2),
        gender: Gender::parse(row.cell(3)),
        age,
        weight: row.opt(5),
        admission_type_id: row.num(6)?,
        discharge_disposition_id: row.num(7)?,
        admission_source_id: row.num(8)?,
        time_in_hospital: row.num(9)?,
        payer_code: row.opt(10),
        medical_specialty: row.opt(11),
        num_lab_procedures: row.num(12)?,
        num_procedures: row.num(13)?,
        num_medications: row.num(14)?,
        number_outpatient: row.num(15)?,
        number_emergency: row.num(16)?,
        number_inpatient: row.num(17)?,
        diag_1: row.opt(18),
        diag_2: row.opt(19),
        diag_3: row.opt(20),
        number_diagnoses: row.num(21)?,
        max_glu_serum: LabResult::parse(row.cell(22), Lab::GlucoseSerum).map_err(|m| row.err(22, m))?,
        a1c_result: LabResult::parse(row.cell(23), Lab::A1c).map_err(|m| row.err(23, m))?,
        medications,
        change,
        diabetes_med,
        readmitted,
    })
}

/// Parses the dataset CSV. Fails only on an unreadable stream or a header
/// that lacks a required column; bad rows are collected in
/// [`ParseOutcome::errors`].
pub fn parse_dataset<R: Read>(source: R) -> Result<ParseOutcome> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(source);
    let header = reader.headers()?.clone();
    let map = ColumnMap::from_header(&header)?;

    let mut out = ParseOutcome::default();
    let mut seen = HashSet::new();
    let mut record = csv::StringRecord::new();
    loop {
        let row = out.rows_read + 1;
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                out.rows_read += 1;
                out.errors.push(RowError {
                    row,
                    column: None,
                    message: e.to_string(),
                });
                continue;
            }
        }
        out.rows_read += 1;
        let r = Row {
            record: &record,
            map: &map,
            row,
        };
        match parse_row(&r) {
            Ok(e) if !seen.insert(e.encounter_id) => out.errors.push(RowError {
                row,
                column: Some("encounter_id".into()),
                message: format!("duplicate encounter_id {}", e.encounter_id),
            }),
            Ok(e) => out.encounters.push(e),
            Err(err) => out.errors.push(err),
        }
    }
    for e in out.errors.iter().take(20) {
        warn!("skipped {e}");
    }
    if out.errors.len() > 20 {
        warn!("... {} more skipped rows", out.errors.len() - 20);
    }
    Ok(out)
}

fn opt_str(v: &Option<String>) -> &str {
    v.as_deref().unwrap_or(MISSING)
}

/// Writes encounters in the published column order. Absent values are
/// written as `?`, so the output parses back to the same records.
pub fn write_dataset<W: Write>(sink: W, encounters: &[Encounter]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(COLUMNS)?;
    for e in encounters {
        let age = e.age.map_or_else(|| MISSING.to_string(), |a| a.to_string());
        let mut rec: Vec<String> = vec![
            e.encounter_id.to_string(),
            e.patient_nbr.to_string(),
            opt_str(&e.race).to_string(),
            e.gender.as_str().to_string(),
            age,
            opt_str(&e.weight).to_string(),
            e.admission_type_id.to_string(),
            e.discharge_disposition_id.to_string(),
            e.admission_source_id.to_string(),
            e.time_in_hospital.to_string(),
            opt_str(&e.payer_code).to_string(),
            opt_str(&e.medical_specialty).to_string(),
            e.num_lab_procedures.to_string(),
            e.num_procedures.to_string(),
            e.num_medications.to_string(),
            e.number_outpatient.to_string(),
            e.number_emergency.to_string(),
            e.number_inpatient.to_string(),
            opt_str(&e.diag_1).to_string(),
            opt_str(&e.diag_2).to_string(),
            opt_str(&e.diag_3).to_string(),
            e.number_diagnoses.to_string(),
            e.max_glu_serum.as_str(Lab::GlucoseSerum).to_string(),
            e.a1c_result.as_str(Lab::A1c).to_string(),
        ];
        rec.extend(e.medications.iter().map(|m| m.as_str().to_string()));
        rec.push(if e.change { "Ch" } else { "No" }.to_string());
        rec.push(if e.diabetes_med { "Yes" } else { "No" }.to_string());
        rec.push(e.readmitted.as_str().to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::Format(format!("csv flush: {e}")))?;
    Ok(())
}

/// Maps a raw `readmitted` string to the binary target.
pub fn binarize_target(raw: &str) -> Result<u8> {
    raw.parse::<Readmitted>().map(Readmitted::label)
}

/// Fraction of positive labels.
pub fn prevalence(labels: &[u8]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Domain("prevalence of an empty label list".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    Ok(pos as f64 / labels.len() as f64)
}

/// Drops encounters whose discharge disposition is in `codes`, e.g.
/// [`EXPIRED_OR_HOSPICE`].
pub fn exclude_dispositions(encounters: Vec<Encounter>, codes: &[u16]) -> Vec<Encounter> {
    encounters
        .into_iter()
        .filter(|e| !codes.contains(&e.discharge_disposition_id))
        .collect()
}
