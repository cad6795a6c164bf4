//! Crowd annotation ingestion and aggregation.
//!
//! Each worker picks every verb they consider a correct description of a
//! video. Aggregation turns those picks into a per-video vector whose entry
//! `j` is the fraction of that video's workers who picked verb `j`. The
//! vector is not normalised: several verbs may each be close to 1.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Decimal places used when writing probabilities to tabular files.
pub const PROBABILITY_DECIMALS: usize = 6;

/// Ordered list of distinct verbs. Position in the list is the verb index
/// used by every vector and matrix in the crate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerbVocabulary {
    verbs: Vec<String>,
    index: HashMap<String, usize>,
}

impl VerbVocabulary {
    pub fn new<S: Into<String>>(verbs: impl IntoIterator<Item = S>) -> Result<Self> {
        let verbs: Vec<String> = verbs.into_iter().map(Into::into).collect();
        if verbs.len() < 2 {
            return Err(Error::InvalidVocabulary(format!(
                "need at least 2 verbs, got {}",
                verbs.len()
            )));
        }
        let mut index = HashMap::with_capacity(verbs.len());
        for (i, verb) in verbs.iter().enumerate() {
            if verb.trim().is_empty() {
                return Err(Error::InvalidVocabulary(format!("empty verb at position {i}")));
            }
            if index.insert(verb.clone(), i).is_some() {
                return Err(Error::InvalidVocabulary(format!("duplicate verb `{verb}`")));
            }
        }
        Ok(Self { verbs, index })
    }

    /// Reads one verb per line. Blank lines are skipped; surrounding
    /// whitespace is trimmed.
    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut verbs = Vec::new();
        for (n, line) in BufReader::new(reader).lines().enumerate() {
            let line = line.map_err(|e| Error::Parse {
                line: n + 1,
                message: e.to_string(),
            })?;
            let verb = line.trim();
            if !verb.is_empty() {
                verbs.push(verb.to_string());
            }
        }
        Self::new(verbs)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for verb in &self.verbs {
            out.push_str(verb);
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.verbs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.verbs.is_empty()
    }

    pub fn verbs(&self) -> &[String] {
        &self.verbs
    }

    pub fn verb(&self, index: usize) -> Option<&str> {
        self.verbs.get(index).map(String::as_str)
    }

    pub fn index_of(&self, verb: &str) -> Option<usize> {
        self.index.get(verb).copied()
    }

    /// SHA-256 over the newline-joined verb list, hex encoded. Two
    /// vocabularies with the same verbs in a different order hash differently.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for verb in &self.verbs {
            hasher.update(verb.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }
}

/// One worker's verb selections for one video.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationRecord {
    pub video_id: String,
    pub worker_id: String,
    pub class_label: String,
    pub dataset_tag: String,
    pub verbs_selected: BTreeSet<usize>,
}

impl AnnotationRecord {
    pub fn new(
        video_id: impl Into<String>,
        worker_id: impl Into<String>,
        verbs_selected: impl IntoIterator<Item = usize>,
    ) -> Self {
        Self {
            video_id: video_id.into(),
            worker_id: worker_id.into(),
            class_label: String::new(),
            dataset_tag: String::new(),
            verbs_selected: verbs_selected.into_iter().collect(),
        }
    }

    pub fn with_class(mut self, class_label: impl Into<String>) -> Self {
        self.class_label = class_label.into();
        self
    }

    pub fn with_tag(mut self, dataset_tag: impl Into<String>) -> Self {
        self.dataset_tag = dataset_tag.into();
        self
    }

    fn validate(&self, vocab_len: usize) -> Result<()> {
        if self.verbs_selected.is_empty() {
            return Err(Error::InvalidRecord(format!(
                "worker `{}` selected no verbs for video `{}`",
                self.worker_id, self.video_id
            )));
        }
        if let Some(&index) = self.verbs_selected.iter().next_back() {
            if index >= vocab_len {
                return Err(Error::IndexOutOfRange { index, len: vocab_len });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct RawRecord {
    video_id: String,
    worker_id: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    class_label: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    dataset_tag: String,
    verbs: Vec<String>,
}

/// Parses line-delimited JSON annotation records, resolving verb strings
/// against `vocab`. Blank lines are ignored.
pub fn read_records(reader: impl Read, vocab: &VerbVocabulary) -> Result<Vec<AnnotationRecord>> {
    let mut records = Vec::new();
    for (n, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if raw.verbs.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                message: "record has an empty verb list".into(),
            });
        }
        let mut verbs_selected = BTreeSet::new();
        for verb in &raw.verbs {
            let index = vocab.index_of(verb).ok_or_else(|| Error::UnknownVerb {
                verb: verb.clone(),
                line: line_no,
            })?;
            verbs_selected.insert(index);
        }
        records.push(AnnotationRecord {
            video_id: raw.video_id,
            worker_id: raw.worker_id,
            class_label: raw.class_label,
            dataset_tag: raw.dataset_tag,
            verbs_selected,
        });
    }
    Ok(records)
}

pub fn load_records(path: impl AsRef<Path>, vocab: &VerbVocabulary) -> Result<Vec<AnnotationRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_records(file, vocab).map_err(|e| e.context(path.display().to_string()))
}

pub fn write_records(
    mut writer: impl Write,
    records: &[AnnotationRecord],
    vocab: &VerbVocabulary,
) -> std::io::Result<()> {
    for record in records {
        let raw = RawRecord {
            video_id: record.video_id.clone(),
            worker_id: record.worker_id.clone(),
            class_label: record.class_label.clone(),
            dataset_tag: record.dataset_tag.clone(),
            verbs: record
                .verbs_selected
                .iter()
                .map(|&j| vocab.verbs()[j].clone())
                .collect(),
        };
        serde_json::to_writer(&mut writer, &raw)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Per-video vector of annotation probabilities, one entry per verb.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelDistribution(Vec<f64>);

impl LabelDistribution {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if let Some((index, &value)) = p.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidRecord(format!(
                "probability {value} at index {index} outside [0, 1]"
            )));
        }
        Ok(Self(p))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest entry; ties go to the lowest index.
    /// `None` when every entry is zero.
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (j, &p) in self.0.iter().enumerate() {
            if p > 0.0 && best.is_none_or(|(_, b)| p > b) {
                best = Some((j, p));
            }
        }
        best.map(|(j, _)| j)
    }
}

impl std::ops::Index<usize> for LabelDistribution {
    type Output = f64;

    fn index(&self, index: usize) -> &f64 {
        &self.0[index]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoAnnotation {
    pub video_id: String,
    pub class_label: String,
    pub dataset_tag: String,
    pub annotator_count: usize,
    pub distribution: LabelDistribution,
}

impl VideoAnnotation {
    pub fn majority_vote(&self) -> Result<usize> {
        majority_vote(self)
    }
}

#[derive(Default)]
struct VideoTally {
    workers: BTreeSet<String>,
    counts: Vec<u32>,
    class_label: String,
    dataset_tag: String,
}

fn merge_label(slot: &mut String, value: &str, what: &str, video_id: &str) -> Result<()> {
    if value.is_empty() {
        return Ok(());
    }
    if slot.is_empty() {
        *slot = value.to_string();
        Ok(())
    } else if slot == value {
        Ok(())
    } else {
        Err(Error::InvalidRecord(format!(
            "video `{video_id}` has conflicting {what}: `{slot}` and `{value}`"
        )))
    }
}

/// Aggregates worker selections into per-video annotation probabilities.
///
/// Output is ordered by video id, so the result does not depend on the
/// order of `records`. No verbs are filtered out, however rare.
pub fn aggregate(records: &[AnnotationRecord], vocab: &VerbVocabulary) -> Result<Vec<VideoAnnotation>> {
    if records.is_empty() {
        return Err(Error::NoAnnotations);
    }
    let n_verbs = vocab.len();
    let mut videos: BTreeMap<&str, VideoTally> = BTreeMap::new();
    for record in records {
        record.validate(n_verbs)?;
        let tally = videos.entry(record.video_id.as_str()).or_insert_with(|| VideoTally {
            counts: vec![0; n_verbs],
            ..Default::default()
        });
        if !tally.workers.insert(record.worker_id.clone()) {
            return Err(Error::DuplicateAnnotation {
                video_id: record.video_id.clone(),
                worker_id: record.worker_id.clone(),
            });
        }
        for &j in &record.verbs_selected {
            tally.counts[j] += 1;
        }
        merge_label(
            &mut tally.class_label,
            &record.class_label,
            "class labels",
            &record.video_id,
        )?;
        merge_label(
            &mut tally.dataset_tag,
            &record.dataset_tag,
            "dataset tags",
            &record.video_id,
        )?;
    }

    Ok(videos
        .into_iter()
        .map(|(video_id, tally)| {
            let n = tally.workers.len();
            let p = tally.counts.iter().map(|&c| c as f64 / n as f64).collect();
            VideoAnnotation {
                video_id: video_id.to_string(),
                class_label: tally.class_label,
                dataset_tag: tally.dataset_tag,
                annotator_count: n,
                distribution: LabelDistribution(p),
            }
        })
        .collect())
}

/// The verb picked by the most workers, lowest index on ties.
pub fn majority_vote(va: &VideoAnnotation) -> Result<usize> {
    va.distribution.argmax().ok_or(Error::NoAnnotatedVerbs)
}

pub fn to_one_hot(index: usize, vocab_len: usize) -> Result<LabelDistribution> {
    if index >= vocab_len {
        return Err(Error::IndexOutOfRange { index, len: vocab_len });
    }
    let mut p = vec![0.0; vocab_len];
    p[index] = 1.0;
    Ok(LabelDistribution(p))
}

/// Writes one row per video: id, class, tag, annotator count, then one
/// probability column per verb in vocabulary order.
pub fn write_distributions(writer: impl Write, videos: &[VideoAnnotation], vocab: &VerbVocabulary) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let mut header = vec!["video_id", "class_label", "dataset_tag", "annotator_count"];
    header.extend(vocab.verbs().iter().map(String::as_str));
    out.write_record(&header).map_err(csv_error)?;
    for va in videos {
        if va.distribution.len() != vocab.len() {
            return Err(Error::DimensionMismatch {
                expected: vocab.len(),
                found: va.distribution.len(),
            });
        }
        let mut row = vec![
            va.video_id.clone(),
            va.class_label.clone(),
            va.dataset_tag.clone(),
            va.annotator_count.to_string(),
        ];
        row.extend(
            va.distribution
                .as_slice()
                .iter()
                .map(|p| format!("{p:.PROBABILITY_DECIMALS$}")),
        );
        out.write_record(&row).map_err(csv_error)?;
    }
    out.flush().map_err(|e| Error::InvalidRecord(e.to_string()))
}

/// Reads a distributions table. The verb columns must match `vocab`
/// exactly. Values within rounding distance of `k / annotator_count` are
/// snapped back to that fraction.
pub fn read_distributions(reader: impl Read, vocab: &VerbVocabulary) -> Result<Vec<VideoAnnotation>> {
    let mut input = csv::Reader::from_reader(reader);
    let header = input.headers().map_err(csv_error)?.clone();
    let expected_len = 4 + vocab.len();
    if header.len() != expected_len || header.iter().skip(4).zip(vocab.verbs()).any(|(h, v)| h != v) {
        return Err(Error::Parse {
            line: 1,
            message: "verb columns do not match the vocabulary".into(),
        });
    }
    let tolerance = 0.5 * 10f64.powi(-(PROBABILITY_DECIMALS as i32));
    let mut videos = Vec::new();
    for (n, row) in input.records().enumerate() {
        let line = n + 2;
        let row = row.map_err(csv_error)?;
        let parse_err = |message: String| Error::Parse { line, message };
        if row.len() != expected_len {
            return Err(parse_err(format!(
                "expected {expected_len} fields, found {}",
                row.len()
            )));
        }
        let annotator_count: usize = row[3].parse().map_err(|e| parse_err(format!("annotator_count: {e}")))?;
        let mut p = Vec::with_capacity(vocab.len());
        for (j, field) in row.iter().skip(4).enumerate() {
            let value: f64 = field
                .parse()
                .map_err(|e| parse_err(format!("column `{}`: {e}", vocab.verbs()[j])))?;
            if !(0.0..=1.0).contains(&value) {
                return Err(parse_err(format!("probability {value} outside [0, 1]")));
            }
            p.push(snap_to_count(value, annotator_count, tolerance));
        }
        videos.push(VideoAnnotation {
            video_id: row[0].to_string(),
            class_label: row[1].to_string(),
            dataset_tag: row[2].to_string(),
            annotator_count,
            distribution: LabelDistribution(p),
        });
    }
    Ok(videos)
}

fn snap_to_count(value: f64, annotator_count: usize, tolerance: f64) -> f64 {
    if annotator_count == 0 {
        return value;
    }
    let n = annotator_count as f64;
    let k = (value * n).round();
    if (value - k / n).abs() <= tolerance {
        k / n
    } else {
        value
    }
}

pub fn load_distributions(path: impl AsRef<Path>, vocab: &VerbVocabulary) -> Result<Vec<VideoAnnotation>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_distributions(file, vocab).map_err(|e| e.context(path.display().to_string()))
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::Parse {
        line,
        message: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(n: usize) -> VerbVocabulary {
        VerbVocabulary::new((0..n).map(|i| format!("v{i}"))).unwrap()
    }

    #[test]
    fn vocabulary_rejects_duplicates_and_small_lists() {
        assert!(VerbVocabulary::new(["put"]).is_err());
        assert!(VerbVocabulary::new(["put", "put"]).is_err());
        assert!(VerbVocabulary::new(["put", " "]).is_err());
        let v = VerbVocabulary::new(["put", "place"]).unwrap();
        assert_eq!(v.index_of("place"), Some(1));
    }

    #[test]
    fn vocabulary_hash_depends_on_order() {
        let a = VerbVocabulary::new(["put", "place"]).unwrap();
        let b = VerbVocabulary::new(["place", "put"]).unwrap();
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash(), a.clone().hash());
    }

    #[test]
    fn fifteen_of_thirty_is_one_half() {
        let records: Vec<_> = (0..30)
            .map(|w| {
                let verbs = if w < 15 { vec![0, 1] } else { vec![1] };
                AnnotationRecord::new("vid", format!("w{w}"), verbs)
            })
            .collect();
        let out = aggregate(&records, &vocab(3)).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].annotator_count, 30);
        assert_eq!(out[0].distribution.as_slice(), &[0.5, 1.0, 0.0]);
    }

    #[test]
    fn single_worker_gives_indicator() {
        let out = aggregate(&[AnnotationRecord::new("v", "w", [2])], &vocab(4)).unwrap();
        assert_eq!(out[0].distribution.as_slice(), &[0.0, 0.0, 1.0, 0.0]);
        let j = majority_vote(&out[0]).unwrap();
        assert_eq!(j, 2);
        assert_eq!(to_one_hot(j, 4).unwrap()[2], 1.0);
    }

    #[test]
    fn forty_workers_against_tally() {
        // 19 of 40 pick verb a (0), 28 pick verb b (1); overlapping picks allowed.
        let records: Vec<_> = (0..40)
            .map(|w| {
                let mut verbs = vec![];
                if w < 19 {
                    verbs.push(0);
                }
                if w >= 12 {
                    verbs.push(1);
                }
                if verbs.is_empty() {
                    verbs.push(2);
                }
                AnnotationRecord::new("vid", format!("w{w}"), verbs)
            })
            .collect();
        // independent tally
        let mut tally = [0usize; 3];
        for r in &records {
            for &j in &r.verbs_selected {
                tally[j] += 1;
            }
        }
        let out = aggregate(&records, &vocab(3)).unwrap();
        let p = out[0].distribution.as_slice();
        assert_eq!(tally[0], 19);
        assert_eq!(tally[1], 28);
        assert_eq!(p[0], 0.475);
        assert_eq!(p[1], 0.7);
        assert_eq!(p[2], tally[2] as f64 / 40.0);
    }

    #[test]
    fn aggregate_errors() {
        assert!(matches!(aggregate(&[], &vocab(2)), Err(Error::NoAnnotations)));
        let dup = [
            AnnotationRecord::new("v", "w", [0]),
            AnnotationRecord::new("v", "w", [1]),
        ];
        match aggregate(&dup, &vocab(2)) {
            Err(Error::DuplicateAnnotation { video_id, worker_id }) => {
                assert_eq!((video_id.as_str(), worker_id.as_str()), ("v", "w"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let bad = [AnnotationRecord::new("v", "w", [5])];
        assert!(matches!(
            aggregate(&bad, &vocab(2)),
            Err(Error::IndexOutOfRange { index: 5, len: 2 })
        ));
        let empty = [AnnotationRecord::new("v", "w", [])];
        assert!(aggregate(&empty, &vocab(2)).is_err());
    }

    #[test]
    fn same_worker_on_different_videos_is_fine() {
        let records = [
            AnnotationRecord::new("a", "w", [0]),
            AnnotationRecord::new("b", "w", [1]),
        ];
        assert_eq!(aggregate(&records, &vocab(2)).unwrap().len(), 2);
    }

    #[test]
    fn majority_vote_ties_go_low() {
        let va = VideoAnnotation {
            video_id: "v".into(),
            class_label: String::new(),
            dataset_tag: String::new(),
            annotator_count: 10,
            distribution: LabelDistribution::new(vec![0.2, 0.9, 0.9, 0.1]).unwrap(),
        };
        assert_eq!(majority_vote(&va).unwrap(), 1);
        let zero = VideoAnnotation {
            distribution: LabelDistribution::zeros(4),
            ..va
        };
        assert!(matches!(majority_vote(&zero), Err(Error::NoAnnotatedVerbs)));
    }

    #[test]
    fn one_hot_bounds() {
        assert_eq!(to_one_hot(2, 4).unwrap().as_slice(), &[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(to_one_hot(0, 2).unwrap().as_slice(), &[1.0, 0.0]);
        assert!(to_one_hot(4, 4).is_err());
    }

    #[test]
    fn unknown_verb_names_line() {
        let v = VerbVocabulary::new(["put", "place"]).unwrap();
        let input = "{\"video_id\":\"a\",\"worker_id\":\"w\",\"verbs\":[\"put\"]}\n\n\
                     {\"video_id\":\"a\",\"worker_id\":\"x\",\"verbs\":[\"shove\"]}\n";
        match read_records(input.as_bytes(), &v) {
            Err(Error::UnknownVerb { verb, line }) => {
                assert_eq!(verb, "shove");
                assert_eq!(line, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn conflicting_class_labels_rejected() {
        let records = [
            AnnotationRecord::new("v", "a", [0]).with_class("Crack Egg"),
            AnnotationRecord::new("v", "b", [0]).with_class("Take Egg"),
        ];
        assert!(aggregate(&records, &vocab(2)).is_err());
    }

    #[test]
    fn distributions_table_round_trip() {
        let v = vocab(3);
        let records: Vec<_> = (0..7)
            .map(|w| AnnotationRecord::new("vid", format!("w{w}"), if w % 3 == 0 { vec![0, 2] } else { vec![1] }))
            .map(|r| r.with_class("Open Fridge").with_tag("cmu"))
            .collect();
        let videos = aggregate(&records, &v).unwrap();
        let mut buf = Vec::new();
        write_distributions(&mut buf, &videos, &v).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("video_id,class_label,dataset_tag,annotator_count,v0,v1,v2\n"));
        assert!(text.contains("0.428571"));
        let back = read_distributions(buf.as_slice(), &v).unwrap();
        assert_eq!(back, videos);
    }

    #[test]
    fn distributions_table_rejects_wrong_vocab() {
        let mut buf = Vec::new();
        let videos = aggregate(&[AnnotationRecord::new("a", "w", [0])], &vocab(2)).unwrap();
        write_distributions(&mut buf, &videos, &vocab(2)).unwrap();
        let other = VerbVocabulary::new(["x", "y"]).unwrap();
        assert!(read_distributions(buf.as_slice(), &other).is_err());
    }
}
