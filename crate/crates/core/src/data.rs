//! Multi-study individual-level data: CSV ingestion, validation, filtering,
//! geneset aggregation and within-study splitting.
//!
//! The canonical input is long format, one row per (subject, arm/time), with
//! the primary endpoint in one column and each candidate marker in its own
//! column. Missing cells are empty or `NA`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SurrError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    /// Pre (arm 0) and post (arm 1) measurements on the same subjects.
    Paired,
    /// Independent treated (arm 1) and control (arm 0) subjects.
    TwoArm,
}

/// One row of the input: a subject at one arm/time point.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub arm: u8,
    pub y: Option<f64>,
    pub s: Vec<Option<f64>>,
}

impl SubjectRecord {
    fn missing(subject_id: &str, arm: u8, n_markers: usize) -> Self {
        SubjectRecord {
            subject_id: subject_id.to_string(),
            arm,
            y: None,
            s: vec![None; n_markers],
        }
    }
}

/// All records of a single study.
///
/// For paired studies `records` holds consecutive (arm 0, arm 1) pairs, one
/// pair per subject. For two-arm studies each subject has exactly one record.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyDataset {
    pub study_id: String,
    pub design: Design,
    pub marker_names: Vec<String>,
    records: Vec<SubjectRecord>,
}

/// Complete-case columns for one (study, marker) combination.
#[derive(Debug, Clone, PartialEq)]
pub enum MarkerData {
    Paired {
        y0: Vec<f64>,
        y1: Vec<f64>,
        s0: Vec<f64>,
        s1: Vec<f64>,
    },
    TwoArm {
        y_t: Vec<f64>,
        s_t: Vec<f64>,
        y_c: Vec<f64>,
        s_c: Vec<f64>,
    },
}

impl MarkerData {
    pub fn n(&self) -> usize {
        match self {
            MarkerData::Paired { y0, .. } => y0.len(),
            MarkerData::TwoArm { y_t, y_c, .. } => y_t.len() + y_c.len(),
        }
    }
}

impl StudyDataset {
    /// Builds a dataset from raw records, validating the design invariants.
    ///
    /// Paired studies may omit one of a subject's two rows; the absent row is
    /// stored fully masked so the subject drops out of every estimate.
    pub fn new(
        study_id: impl Into<String>,
        design: Design,
        marker_names: Vec<String>,
        records: Vec<SubjectRecord>,
    ) -> Result<Self> {
        let study_id = study_id.into();
        let j = marker_names.len();
        let mut order: Vec<String> = Vec::new();
        let mut by_subject: HashMap<String, [Option<SubjectRecord>; 2]> = HashMap::new();
        for rec in records {
            if rec.arm > 1 {
                return Err(SurrError::Integrity(format!(
                    "study `{study_id}`, subject `{}`: arm must be 0 or 1, got {}",
                    rec.subject_id, rec.arm
                )));
            }
            if rec.s.len() != j {
                return Err(SurrError::Integrity(format!(
                    "study `{study_id}`, subject `{}`: expected {j} marker values, got {}",
                    rec.subject_id,
                    rec.s.len()
                )));
            }
            let finite = rec.y.is_none_or(f64::is_finite)
                && rec.s.iter().all(|v| v.is_none_or(f64::is_finite));
            if !finite {
                return Err(SurrError::Integrity(format!(
                    "study `{study_id}`, subject `{}`: non-finite measurement",
                    rec.subject_id
                )));
            }
            let slot = by_subject.entry(rec.subject_id.clone()).or_insert_with(|| {
                order.push(rec.subject_id.clone());
                [None, None]
            });
            let arm = rec.arm as usize;
            if slot[arm].is_some() {
                return Err(SurrError::Integrity(format!(
                    "duplicate record for study `{study_id}`, subject `{}`, arm {}",
                    rec.subject_id, rec.arm
                )));
            }
            slot[arm] = Some(rec);
        }

        let mut out = Vec::with_capacity(order.len() * 2);
        match design {
            Design::Paired => {
                for id in &order {
                    let [pre, post] = by_subject.remove(id).expect("subject was registered");
                    out.push(pre.unwrap_or_else(|| SubjectRecord::missing(id, 0, j)));
                    out.push(post.unwrap_or_else(|| SubjectRecord::missing(id, 1, j)));
                }
            }
            Design::TwoArm => {
                let mut arm_counts = [0usize; 2];
                for id in &order {
                    match by_subject.remove(id).expect("subject was registered") {
                        [Some(_), Some(_)] => {
                            return Err(SurrError::Integrity(format!(
                                "study `{study_id}`, subject `{id}` appears in both arms of a two-arm study"
                            )))
                        }
                        [Some(r), None] | [None, Some(r)] => {
                            arm_counts[r.arm as usize] += 1;
                            out.push(r);
                        }
                        [None, None] => unreachable!(),
                    }
                }
                if arm_counts.contains(&0) {
                    return Err(SurrError::Integrity(format!(
                        "study `{study_id}`: two-arm design needs both arms nonempty (control {}, treated {})",
                        arm_counts[0], arm_counts[1]
                    )));
                }
            }
        }
        Ok(StudyDataset {
            study_id,
            design,
            marker_names,
            records: out,
        })
    }

    pub fn records(&self) -> &[SubjectRecord] {
        &self.records
    }

    pub fn n_markers(&self) -> usize {
        self.marker_names.len()
    }

    pub fn marker_index(&self, name: &str) -> Option<usize> {
        self.marker_names.iter().position(|m| m == name)
    }

    /// Number of subjects, regardless of missingness.
    pub fn n_subjects(&self) -> usize {
        match self.design {
            Design::Paired => self.records.len() / 2,
            Design::TwoArm => self.records.len(),
        }
    }

    /// Records grouped per subject, in stored order.
    pub fn subjects(&self) -> impl Iterator<Item = &[SubjectRecord]> {
        let width = match self.design {
            Design::Paired => 2,
            Design::TwoArm => 1,
        };
        self.records.chunks(width)
    }

    /// Subjects with a usable primary endpoint (both time points when paired).
    pub fn complete_case_n(&self) -> usize {
        self.subjects()
            .filter(|recs| recs.iter().all(|r| r.y.is_some()))
            .count()
    }

    /// Complete-case columns for the primary endpoint and marker `j`.
    /// Passing `None` keeps every subject with a usable endpoint and fills the
    /// marker columns with copies of `y`.
    pub fn marker_data(&self, j: Option<usize>) -> MarkerData {
        let value = |r: &SubjectRecord| -> Option<(f64, f64)> {
            let y = r.y?;
            let s = match j {
                Some(j) => r.s[j]?,
                None => y,
            };
            Some((y, s))
        };
        match self.design {
            Design::Paired => {
                let (mut y0, mut y1, mut s0, mut s1) = (vec![], vec![], vec![], vec![]);
                for pair in self.records.chunks(2) {
                    if let (Some((a, b)), Some((c, d))) = (value(&pair[0]), value(&pair[1])) {
                        y0.push(a);
                        s0.push(b);
                        y1.push(c);
                        s1.push(d);
                    }
                }
                MarkerData::Paired { y0, y1, s0, s1 }
            }
            Design::TwoArm => {
                let (mut y_t, mut s_t, mut y_c, mut s_c) = (vec![], vec![], vec![], vec![]);
                for r in &self.records {
                    if let Some((y, s)) = value(r) {
                        if r.arm == 1 {
                            y_t.push(y);
                            s_t.push(s);
                        } else {
                            y_c.push(y);
                            s_c.push(s);
                        }
                    }
                }
                MarkerData::TwoArm { y_t, s_t, y_c, s_c }
            }
        }
    }

    /// Marker values for arm `arm` (unmasked only).
    pub fn marker_values(&self, j: usize, arm: u8) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.arm == arm)
            .filter_map(|r| r.s[j])
            .collect()
    }

    /// Keeps only the given subjects (by position), preserving their order.
    pub fn select_subjects(&self, positions: &[usize]) -> StudyDataset {
        let subjects: Vec<&[SubjectRecord]> = self.subjects().collect();
        let records = positions
            .iter()
            .flat_map(|&p| subjects[p].iter().cloned())
            .collect();
        StudyDataset {
            study_id: self.study_id.clone(),
            design: self.design,
            marker_names: self.marker_names.clone(),
            records,
        }
    }

    /// Replaces the marker block; `values[r]` is the new marker vector of record `r`.
    pub fn with_markers(&self, marker_names: Vec<String>, values: Vec<Vec<Option<f64>>>) -> Self {
        assert_eq!(values.len(), self.records.len());
        let records = self
            .records
            .iter()
            .zip(values)
            .map(|(r, s)| {
                debug_assert_eq!(s.len(), marker_names.len());
                SubjectRecord { s, ..r.clone() }
            })
            .collect();
        StudyDataset {
            study_id: self.study_id.clone(),
            design: self.design,
            marker_names,
            records,
        }
    }

    /// Returns a copy with one more marker column appended.
    pub fn push_marker(&self, name: &str, values: Vec<Option<f64>>) -> Self {
        assert_eq!(values.len(), self.records.len());
        let mut out = self.clone();
        out.marker_names.push(name.to_string());
        for (r, v) in out.records.iter_mut().zip(values) {
            r.s.push(v);
        }
        out
    }

    /// Rewrites the primary endpoint of every record.
    pub fn with_y(&self, y: Vec<Option<f64>>) -> Self {
        assert_eq!(y.len(), self.records.len());
        let mut out = self.clone();
        for (r, v) in out.records.iter_mut().zip(y) {
            r.y = v;
        }
        out
    }
}

/// Column names for the long-format CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMapping {
    pub study: String,
    pub subject: String,
    pub arm: String,
    pub y: String,
    /// Marker columns; `None` takes every remaining column in header order.
    pub markers: Option<Vec<String>>,
    /// Forces a design; `None` infers it per study (paired when any subject has two rows).
    pub design: Option<Design>,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        ColumnMapping {
            study: "study".into(),
            subject: "subject".into(),
            arm: "arm".into(),
            y: "y".into(),
            markers: None,
            design: None,
        }
    }
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty() || cell == "NA"
}

fn parse_number(cell: &str, row: usize, column: &str) -> Result<Option<f64>> {
    if is_missing(cell) {
        return Ok(None);
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(SurrError::Parse {
            row,
            column: column.to_string(),
            value: cell.to_string(),
        }),
    }
}

pub fn parse_study_csv(path: impl AsRef<Path>, mapping: &ColumnMapping) -> Result<Vec<StudyDataset>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| SurrError::io(path, e))?;
    parse_study_reader(file, mapping)
}

/// Parses long-format study data. Rows are numbered from 1, excluding the header.
pub fn parse_study_reader<R: Read>(reader: R, mapping: &ColumnMapping) -> Result<Vec<StudyDataset>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| SurrError::MissingColumn(name.to_string()))
    };
    let (c_study, c_subject, c_arm, c_y) = (
        find(&mapping.study)?,
        find(&mapping.subject)?,
        find(&mapping.arm)?,
        find(&mapping.y)?,
    );
    let marker_cols: Vec<usize> = match &mapping.markers {
        Some(names) => names.iter().map(|n| find(n)).collect::<Result<_>>()?,
        None => (0..header.len())
            .filter(|c| ![c_study, c_subject, c_arm, c_y].contains(c))
            .collect(),
    };
    let marker_names: Vec<String> = marker_cols.iter().map(|&c| header[c].clone()).collect();

    let mut study_order: Vec<String> = Vec::new();
    let mut grouped: HashMap<String, Vec<SubjectRecord>> = HashMap::new();
    for (i, row) in rdr.records().enumerate() {
        let row_idx = i + 1;
        let row = row?;
        let study = row.get(c_study).unwrap_or("").to_string();
        let subject = row.get(c_subject).unwrap_or("").to_string();
        if study.is_empty() || subject.is_empty() {
            return Err(SurrError::Integrity(format!(
                "row {row_idx}: empty study or subject identifier"
            )));
        }
        let arm_cell = row.get(c_arm).unwrap_or("");
        let arm = match arm_cell {
            "0" => 0u8,
            "1" => 1u8,
            other => {
                return Err(SurrError::Parse {
                    row: row_idx,
                    column: mapping.arm.clone(),
                    value: other.to_string(),
                })
            }
        };
        let y = parse_number(row.get(c_y).unwrap_or(""), row_idx, &mapping.y)?;
        let s = marker_cols
            .iter()
            .zip(&marker_names)
            .map(|(&c, name)| parse_number(row.get(c).unwrap_or(""), row_idx, name))
            .collect::<Result<Vec<_>>>()?;
        grouped
            .entry(study.clone())
            .or_insert_with(|| {
                study_order.push(study.clone());
                Vec::new()
            })
            .push(SubjectRecord {
                subject_id: subject,
                arm,
                y,
                s,
            });
    }

    study_order
        .into_iter()
        .map(|id| {
            let records = grouped.remove(&id).expect("study was registered");
            let design = mapping.design.unwrap_or_else(|| infer_design(&records));
            StudyDataset::new(id, design, marker_names.clone(), records)
        })
        .collect()
}

fn infer_design(records: &[SubjectRecord]) -> Design {
    let mut seen: HashMap<&str, u8> = HashMap::new();
    for r in records {
        let arms = seen.entry(&r.subject_id).or_insert(0);
        *arms |= 1 << r.arm.min(1);
        if *arms == 0b11 {
            return Design::Paired;
        }
    }
    Design::TwoArm
}

/// Writes studies in the canonical long format. All studies must share one marker list.
pub fn write_study_csv<W: Write>(writer: W, data: &[StudyDataset]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    let markers = data.first().map(|d| d.marker_names.clone()).unwrap_or_default();
    if let Some(bad) = data.iter().find(|d| d.marker_names != markers) {
        return Err(SurrError::Integrity(format!(
            "study `{}` has a different marker list from the first study",
            bad.study_id
        )));
    }
    let mut header = vec!["study".to_string(), "subject".into(), "arm".into(), "y".into()];
    header.extend(markers.iter().cloned());
    wtr.write_record(&header)?;
    let fmt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x}"));
    for study in data {
        for r in &study.records {
            // fully masked placeholder rows of paired subjects are not real input rows
            if study.design == Design::Paired && r.y.is_none() && r.s.iter().all(Option::is_none) {
                continue;
            }
            let mut row = vec![
                study.study_id.clone(),
                r.subject_id.clone(),
                r.arm.to_string(),
                fmt(r.y),
            ];
            row.extend(r.s.iter().map(|&v| fmt(v)));
            wtr.write_record(&row)?;
        }
    }
    wtr.flush().map_err(|e| SurrError::io("<csv writer>", e))?;
    Ok(())
}

pub fn write_study_csv_file(path: impl AsRef<Path>, data: &[StudyDataset]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| SurrError::io(path, e))?;
    write_study_csv(std::io::BufWriter::new(file), data)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FilterReport {
    /// (study id, complete-case n) of every dropped study.
    pub dropped: Vec<(String, usize)>,
}

/// Keeps studies whose complete-case n reaches `min_n`.
pub fn filter_studies(data: Vec<StudyDataset>, min_n: usize) -> Result<(Vec<StudyDataset>, FilterReport)> {
    if min_n == 0 {
        return Err(SurrError::InvalidArgument("min_n must be at least 1".into()));
    }
    let mut report = FilterReport::default();
    let kept: Vec<StudyDataset> = data
        .into_iter()
        .filter(|d| {
            let n = d.complete_case_n();
            if n < min_n {
                log::warn!("dropping study `{}`: complete-case n = {n} < {min_n}", d.study_id);
                report.dropped.push((d.study_id.clone(), n));
                false
            } else {
                true
            }
        })
        .collect();
    if kept.is_empty() {
        return Err(SurrError::NoStudies);
    }
    Ok((kept, report))
}

/// Named groups of features, in catalog order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GenesetCatalog {
    pub sets: Vec<(String, Vec<String>)>,
}

impl GenesetCatalog {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| SurrError::io(path, e))?;
        Self::from_reader(file)
    }

    /// Reads a two-column `geneset,member` CSV.
    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let col = |n: &str| {
            header
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| SurrError::MissingColumn(n.to_string()))
        };
        let (c_set, c_member) = (col("geneset")?, col("member")?);
        let mut catalog = GenesetCatalog::default();
        let mut index: HashMap<String, usize> = HashMap::new();
        for row in rdr.records() {
            let row = row?;
            let set = row.get(c_set).unwrap_or("").to_string();
            let member = row.get(c_member).unwrap_or("").to_string();
            if set.is_empty() || member.is_empty() {
                continue;
            }
            let k = *index.entry(set.clone()).or_insert_with(|| {
                catalog.sets.push((set, Vec::new()));
                catalog.sets.len() - 1
            });
            catalog.sets[k].1.push(member);
        }
        Ok(catalog)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AggregationReport {
    /// Genesets with no member among the available features.
    pub dropped: Vec<String>,
    /// (geneset, number of members found) for every retained set.
    pub retained: Vec<(String, usize)>,
}

/// Replaces the marker columns with per-geneset means of their member features.
/// Masked members are left out of the mean; a record with every member masked
/// gets a masked aggregate.
pub fn aggregate_genesets(
    data: &StudyDataset,
    catalog: &GenesetCatalog,
) -> Result<(StudyDataset, AggregationReport)> {
    let mut report = AggregationReport::default();
    let mut sets: Vec<(String, Vec<usize>)> = Vec::new();
    for (name, members) in &catalog.sets {
        let mut idx: Vec<usize> = members.iter().filter_map(|m| data.marker_index(m)).collect();
        idx.sort_unstable();
        idx.dedup();
        if idx.is_empty() {
            report.dropped.push(name.clone());
        } else {
            report.retained.push((name.clone(), idx.len()));
            sets.push((name.clone(), idx));
        }
    }
    if sets.is_empty() {
        return Err(SurrError::Integrity(
            "no geneset shares any member with the available features".into(),
        ));
    }
    let values = data
        .records
        .iter()
        .map(|r| {
            sets.iter()
                .map(|(_, idx)| {
                    let (sum, count) = idx
                        .iter()
                        .filter_map(|&k| r.s[k])
                        .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
                    (count > 0).then(|| sum / count as f64)
                })
                .collect()
        })
        .collect();
    let names = sets.into_iter().map(|(n, _)| n).collect();
    Ok((data.with_markers(names, values), report))
}

fn stream_for(study_id: &str) -> u64 {
    // FNV-1a; stable across platforms and releases
    study_id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Seeded RNG for a (seed, study) combination, independent of study order.
pub fn study_rng(seed: u64, study_id: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_for(study_id));
    rng
}

/// Splits subjects into a screening part of `floor(fraction * n)` subjects and
/// an evaluation part with the remainder. Paired records travel together.
pub fn split_within_study(
    data: &StudyDataset,
    fraction: f64,
    seed: u64,
) -> Result<(StudyDataset, StudyDataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(SurrError::InvalidArgument(format!(
            "split fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let n = data.n_subjects();
    let k = (fraction * n as f64).floor() as usize;
    if k < 2 || n - k < 2 {
        return Err(SurrError::InvalidArgument(format!(
            "study `{}`: fraction {fraction} of {n} subjects gives parts of size {k} and {}; \
             each part needs at least 2 subjects, choose a different fraction",
            data.study_id,
            n - k
        )));
    }
    let mut rng = study_rng(seed, &data.study_id);
    let mut chosen = index::sample(&mut rng, n, k).into_vec();
    chosen.sort_unstable();
    let mut in_screen = vec![false; n];
    for &c in &chosen {
        in_screen[c] = true;
    }
    let rest: Vec<usize> = (0..n).filter(|&i| !in_screen[i]).collect();
    Ok((data.select_subjects(&chosen), data.select_subjects(&rest)))
}
