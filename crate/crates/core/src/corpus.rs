//! Image records, weighted sense tags and inter-annotator agreement.
//!
//! Each annotator rates a sense with a weight in `[0, 1]`; a sense's weight on
//! an image is the arithmetic mean over the annotators who rated it. Rating
//! the same synset again replaces that annotator's earlier weight.
//!
//! The corpus file is JSON Lines, one image per line:
//!
//! ```text
//! {"id":"7175","source_ref":"iaps/7175.jpg","iaps_keyword":"lamp",
//!  "emotion":{"val":4.87,"ar":1.72,"dom":6.24},
//!  "assignments":[{"annotator":"ann1","synset":"n-9","lemma":"lamp","weight":1.0}]}
//! ```
//!
//! Derived fields are never written. When an id appears on more than one
//! line the last line wins, which lets writers append updated records.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numfmt::serialize_sig12;
use crate::taxonomy::{Sense, SynsetId, Taxonomy, TaxonomyError};

/// Minimum distinct senses for a record to be publishable.
pub const MIN_PUBLISHABLE_SENSES: usize = 3;
/// Minimum distinct annotators for a record to be publishable.
pub const MIN_PUBLISHABLE_ANNOTATORS: usize = 2;
/// Kappa below this marks an image's weights as unreliable.
pub const KAPPA_WARNING_THRESHOLD: f64 = 0.4;
/// A tag whose most common bin holds less than this share of raters is flagged.
pub const FLAG_MODAL_SHARE: f64 = 0.5;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("image {0} already exists")]
    DuplicateImage(ImageId),
    #[error("unknown image {0}")]
    UnknownImage(String),
    #[error("unknown synset {0}")]
    UnknownSynset(String),
    #[error("lemma {lemma:?} is not a member of synset {synset}")]
    InvalidSense { lemma: String, synset: String },
    #[error("weight {0} is outside [0, 1]")]
    WeightOutOfRange(f64),
    #[error("{dimension} {value} is outside [1, 9]")]
    EmotionOutOfRange { dimension: AffectDimension, value: f64 },
    #[error("image {image} has {raters} annotator(s); agreement needs at least 2")]
    InsufficientRaters { image: String, raters: usize },
    #[error("corpus has no publishable images")]
    EmptyCorpus,
    #[error("invalid identifier {0:?}")]
    InvalidId(String),
    #[error("corpus line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl CorpusError {
    fn from_taxonomy(err: TaxonomyError) -> CorpusError {
        match err {
            TaxonomyError::InvalidSense { lemma, synset } => {
                CorpusError::InvalidSense { lemma, synset: synset.to_string() }
            }
            TaxonomyError::UnknownSynset(id) | TaxonomyError::InvalidSynsetId(id) => CorpusError::UnknownSynset(id),
            other => CorpusError::UnknownSynset(other.to_string()),
        }
    }
}

macro_rules! string_id {
    ($name:ident) => {
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub struct $name(String);

        impl $name {
            /// Any nonempty string without control characters or surrounding whitespace.
            pub fn new(value: impl Into<String>) -> Result<Self, CorpusError> {
                let value = value.into();
                if value.is_empty() || value.trim() != value || value.chars().any(char::is_control) {
                    return Err(CorpusError::InvalidId(value));
                }
                Ok($name(value))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl TryFrom<String> for $name {
            type Error = CorpusError;

            fn try_from(value: String) -> Result<Self, Self::Error> {
                $name::new(value)
            }
        }

        impl From<$name> for String {
            fn from(id: $name) -> String {
                id.0
            }
        }

        impl std::borrow::Borrow<str> for $name {
            fn borrow(&self) -> &str {
                &self.0
            }
        }
    };
}

string_id!(ImageId);
string_id!(AnnotatorId);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AffectDimension {
    Valence,
    Arousal,
    Dominance,
}

impl fmt::Display for AffectDimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AffectDimension::Valence => "valence",
            AffectDimension::Arousal => "arousal",
            AffectDimension::Dominance => "dominance",
        })
    }
}

/// Valence, arousal and dominance on the normative 1–9 scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EmotionFields", into = "EmotionFields")]
pub struct EmotionRating {
    valence: f64,
    arousal: f64,
    dominance: f64,
}

#[derive(Serialize, Deserialize)]
struct EmotionFields {
    val: f64,
    ar: f64,
    dom: f64,
}

impl TryFrom<EmotionFields> for EmotionRating {
    type Error = CorpusError;

    fn try_from(f: EmotionFields) -> Result<Self, Self::Error> {
        EmotionRating::new(f.val, f.ar, f.dom)
    }
}

impl From<EmotionRating> for EmotionFields {
    fn from(e: EmotionRating) -> Self {
        EmotionFields { val: e.valence, ar: e.arousal, dom: e.dominance }
    }
}

impl EmotionRating {
    pub const MIN: f64 = 1.0;
    pub const MAX: f64 = 9.0;

    /// Rejects (never clamps) values outside `[1, 9]`.
    pub fn new(valence: f64, arousal: f64, dominance: f64) -> Result<Self, CorpusError> {
        for (dimension, value) in [
            (AffectDimension::Valence, valence),
            (AffectDimension::Arousal, arousal),
            (AffectDimension::Dominance, dominance),
        ] {
            if !(Self::MIN..=Self::MAX).contains(&value) {
                return Err(CorpusError::EmotionOutOfRange { dimension, value });
            }
        }
        Ok(EmotionRating { valence, arousal, dominance })
    }

    pub fn valence(&self) -> f64 {
        self.valence
    }

    pub fn arousal(&self) -> f64 {
        self.arousal
    }

    pub fn dominance(&self) -> f64 {
        self.dominance
    }

    pub fn get(&self, dimension: AffectDimension) -> f64 {
        match dimension {
            AffectDimension::Valence => self.valence,
            AffectDimension::Arousal => self.arousal,
            AffectDimension::Dominance => self.dominance,
        }
    }
}

/// One annotator's rating of one sense on one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagAssignment {
    pub annotator: AnnotatorId,
    pub sense: Sense,
    pub weight: f64,
}

/// A sense with its weight averaged over annotators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedTag {
    pub sense: Sense,
    #[serde(serialize_with = "serialize_sig12")]
    pub mean_weight: f64,
    pub rater_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageRecord {
    id: ImageId,
    source_ref: String,
    iaps_keyword: String,
    emotion: EmotionRating,
    assignments: Vec<TagAssignment>,
    weighted_tags: Vec<WeightedTag>,
    publishable: bool,
}

impl ImageRecord {
    fn new(id: ImageId, source_ref: String, iaps_keyword: String, emotion: EmotionRating) -> Self {
        ImageRecord {
            id,
            source_ref,
            iaps_keyword,
            emotion,
            assignments: Vec::new(),
            weighted_tags: Vec::new(),
            publishable: false,
        }
    }

    pub fn id(&self) -> &ImageId {
        &self.id
    }

    pub fn source_ref(&self) -> &str {
        &self.source_ref
    }

    pub fn iaps_keyword(&self) -> &str {
        &self.iaps_keyword
    }

    pub fn emotion(&self) -> &EmotionRating {
        &self.emotion
    }

    pub fn assignments(&self) -> &[TagAssignment] {
        &self.assignments
    }

    /// Per-synset averages, sorted by synset id.
    pub fn weighted_tags(&self) -> &[WeightedTag] {
        &self.weighted_tags
    }

    pub fn annotators(&self) -> BTreeSet<&AnnotatorId> {
        self.assignments.iter().map(|a| &a.annotator).collect()
    }

    /// At least three distinct senses from at least two annotators.
    pub fn is_publishable(&self) -> bool {
        self.publishable
    }

    fn recompute(&mut self) {
        self.weighted_tags = average_weights(&self.assignments);
        self.publishable =
            self.weighted_tags.len() >= MIN_PUBLISHABLE_SENSES && self.annotators().len() >= MIN_PUBLISHABLE_ANNOTATORS;
    }

    /// Inserts or replaces the annotator's rating for the sense's synset.
    fn record(&mut self, assignment: TagAssignment) {
        match self
            .assignments
            .iter_mut()
            .find(|a| a.annotator == assignment.annotator && a.sense.synset == assignment.sense.synset)
        {
            Some(existing) => *existing = assignment,
            None => self.assignments.push(assignment),
        }
        self.recompute();
    }
}

/// Groups assignments by synset and averages their weights. The tag's lemma
/// is the one used by the first assignment of that synset.
pub fn average_weights(assignments: &[TagAssignment]) -> Vec<WeightedTag> {
    let mut groups: BTreeMap<&SynsetId, (&str, Vec<f64>)> = BTreeMap::new();
    for a in assignments {
        groups.entry(&a.sense.synset).or_insert_with(|| (a.sense.lemma.as_str(), Vec::new())).1.push(a.weight);
    }
    groups
        .into_iter()
        .map(|(synset, (lemma, weights))| WeightedTag {
            sense: Sense { synset: synset.clone(), lemma: lemma.to_owned() },
            mean_weight: exact_mean(&weights),
            rater_count: weights.len(),
        })
        .collect()
}

/// Arithmetic mean rounded once, to the nearest `f64`.
///
/// The sum is taken in exact rational arithmetic so the mean of equal
/// weights is that weight and the result never leaves `[min, max]`.
pub fn exact_mean(weights: &[f64]) -> f64 {
    match weights {
        [] => 0.0,
        [w] => *w,
        _ => {
            let sum: BigRational = weights.iter().map(|w| BigRational::from_float(*w).expect("finite weight")).sum();
            (sum / BigInt::from(weights.len())).to_f64().expect("mean of finite weights is finite")
        }
    }
}

/// Agreement bin of a weight; `None` means the annotator did not tag the synset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightBin {
    Absent,
    Low,
    Mid,
    High,
}

impl WeightBin {
    pub const ALL: [WeightBin; 4] = [WeightBin::Absent, WeightBin::Low, WeightBin::Mid, WeightBin::High];

    /// `[0, 1/3]` low, `(1/3, 2/3]` mid, `(2/3, 1]` high.
    pub fn of(weight: Option<f64>) -> WeightBin {
        match weight {
            None => WeightBin::Absent,
            Some(w) if w <= 1.0 / 3.0 => WeightBin::Low,
            Some(w) if w <= 2.0 / 3.0 => WeightBin::Mid,
            Some(_) => WeightBin::High,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TagAgreement {
    pub synset: SynsetId,
    /// Raters per bin, in [`WeightBin::ALL`] order.
    pub bin_counts: [usize; 4],
    #[serde(serialize_with = "serialize_sig12")]
    pub modal_share: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementReport {
    pub image_id: ImageId,
    #[serde(serialize_with = "serialize_sig12")]
    pub kappa: f64,
    pub raters: usize,
    pub subjects: usize,
    /// Kappa fell below [`KAPPA_WARNING_THRESHOLD`].
    pub low_agreement: bool,
    pub tags: Vec<TagAgreement>,
}

impl AgreementReport {
    pub fn flagged(&self) -> impl Iterator<Item = &TagAgreement> {
        self.tags.iter().filter(|t| t.flagged)
    }
}

/// Fleiss' kappa over a subjects × categories count matrix where every row
/// sums to the same rater count. Returns 1 when all ratings fall in one
/// category (chance agreement is then 1 and the ratio is undefined).
pub fn fleiss_kappa(counts: &[[usize; 4]]) -> f64 {
    let subjects = counts.len();
    let raters: usize = counts.first().map(|r| r.iter().sum()).unwrap_or(0);
    if subjects == 0 || raters < 2 {
        return 1.0;
    }
    let total = (subjects * raters) as f64;
    let squares: usize = counts.iter().flat_map(|r| r.iter()).map(|c| c * c).sum();
    let observed = (squares - subjects * raters) as f64 / (total * (raters - 1) as f64);
    let mut chance = 0.0;
    for j in 0..4 {
        let column: usize = counts.iter().map(|r| r[j]).sum();
        let p = column as f64 / total;
        chance += p * p;
    }
    if chance == 1.0 {
        return 1.0;
    }
    (observed - chance) / (1.0 - chance)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TagCountStats {
    pub images: usize,
    #[serde(serialize_with = "serialize_sig12")]
    pub median: f64,
    #[serde(serialize_with = "serialize_sig12")]
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator); 0 for a single image.
    #[serde(serialize_with = "serialize_sig12")]
    pub sd: f64,
    pub min: usize,
    pub max: usize,
}

impl TagCountStats {
    pub fn from_counts(counts: &[usize]) -> Option<TagCountStats> {
        if counts.is_empty() {
            return None;
        }
        let mut sorted = counts.to_vec();
        sorted.sort_unstable();
        let n = sorted.len();
        let median = if n % 2 == 1 { sorted[n / 2] as f64 } else { (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0 };
        let mean = sorted.iter().sum::<usize>() as f64 / n as f64;
        let sd = if n > 1 {
            let ss: f64 = sorted.iter().map(|&c| (c as f64 - mean).powi(2)).sum();
            (ss / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(TagCountStats { images: n, median, mean, sd, min: sorted[0], max: sorted[n - 1] })
    }
}

/// All image records plus the derived keyword vocabulary.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    images: BTreeMap<ImageId, ImageRecord>,
    keyword_vocabulary: BTreeSet<String>,
}

impl Corpus {
    pub fn new() -> Self {
        Corpus::default()
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ImageRecord> {
        self.images.get(id)
    }

    /// Records in id order.
    pub fn images(&self) -> impl Iterator<Item = &ImageRecord> {
        self.images.values()
    }

    /// Records eligible for retrieval: publishable ones, or all of them.
    pub fn searchable(&self, include_drafts: bool) -> impl Iterator<Item = &ImageRecord> {
        self.images.values().filter(move |r| include_drafts || r.is_publishable())
    }

    pub fn keyword_vocabulary(&self) -> &BTreeSet<String> {
        &self.keyword_vocabulary
    }

    pub fn add_image(
        &mut self,
        id: ImageId,
        source_ref: impl Into<String>,
        iaps_keyword: impl Into<String>,
        emotion: EmotionRating,
    ) -> Result<&ImageRecord, CorpusError> {
        if self.images.contains_key(&id) {
            return Err(CorpusError::DuplicateImage(id));
        }
        let record = ImageRecord::new(id.clone(), source_ref.into(), iaps_keyword.into(), emotion);
        self.keyword_vocabulary.insert(record.iaps_keyword.clone());
        Ok(self.images.entry(id).or_insert(record))
    }

    /// Records one rating and returns the image's recomputed weighted tags.
    pub fn annotate(
        &mut self,
        taxonomy: &Taxonomy,
        image_id: &str,
        assignment: TagAssignment,
    ) -> Result<&[WeightedTag], CorpusError> {
        let record = self.images.get_mut(image_id).ok_or_else(|| CorpusError::UnknownImage(image_id.to_owned()))?;
        taxonomy
            .sense(assignment.sense.synset.as_str(), &assignment.sense.lemma)
            .map_err(CorpusError::from_taxonomy)?;
        if !(0.0..=1.0).contains(&assignment.weight) {
            return Err(CorpusError::WeightOutOfRange(assignment.weight));
        }
        record.record(assignment);
        Ok(&record.weighted_tags)
    }

    /// Inserts or replaces a whole record, recomputing derived fields.
    pub fn upsert(&mut self, mut record: ImageRecord) {
        record.recompute();
        self.images.insert(record.id.clone(), record);
        self.rebuild_vocabulary();
    }

    pub fn remove(&mut self, id: &str) -> Option<ImageRecord> {
        let removed = self.images.remove(id);
        if removed.is_some() {
            self.rebuild_vocabulary();
        }
        removed
    }

    fn rebuild_vocabulary(&mut self) {
        self.keyword_vocabulary = self.images.values().map(|r| r.iaps_keyword.clone()).collect();
    }

    /// Fleiss' kappa over the image's tags, binned into absent/low/mid/high.
    pub fn agreement_kappa(&self, image_id: &str) -> Result<AgreementReport, CorpusError> {
        let record = self.images.get(image_id).ok_or_else(|| CorpusError::UnknownImage(image_id.to_owned()))?;
        let annotators = record.annotators();
        if annotators.len() < 2 {
            return Err(CorpusError::InsufficientRaters { image: image_id.to_owned(), raters: annotators.len() });
        }

        let mut ratings: BTreeMap<&SynsetId, BTreeMap<&AnnotatorId, f64>> = BTreeMap::new();
        for a in &record.assignments {
            ratings.entry(&a.sense.synset).or_default().insert(&a.annotator, a.weight);
        }

        let mut matrix = Vec::with_capacity(ratings.len());
        let mut tags = Vec::with_capacity(ratings.len());
        for (synset, by_annotator) in &ratings {
            let mut row = [0usize; 4];
            for annotator in &annotators {
                row[WeightBin::of(by_annotator.get(annotator).copied()).index()] += 1;
            }
            let modal = *row.iter().max().expect("four bins");
            let modal_share = modal as f64 / annotators.len() as f64;
            tags.push(TagAgreement {
                synset: (*synset).clone(),
                bin_counts: row,
                modal_share,
                flagged: modal_share < FLAG_MODAL_SHARE,
            });
            matrix.push(row);
        }

        let kappa = fleiss_kappa(&matrix);
        Ok(AgreementReport {
            image_id: record.id.clone(),
            kappa,
            raters: annotators.len(),
            subjects: matrix.len(),
            low_agreement: kappa < KAPPA_WARNING_THRESHOLD,
            tags,
        })
    }

    /// Distinct-tag-count statistics over publishable images.
    pub fn tag_count_stats(&self) -> Result<TagCountStats, CorpusError> {
        let counts: Vec<usize> = self.searchable(false).map(|r| r.weighted_tags.len()).collect();
        TagCountStats::from_counts(&counts).ok_or(CorpusError::EmptyCorpus)
    }

    pub fn read<R: Read>(reader: R, taxonomy: &Taxonomy) -> Result<Corpus, CorpusError> {
        let mut corpus = Corpus::new();
        for (n, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record =
                parse_record(&line, taxonomy).map_err(|message| CorpusError::Parse { line: n + 1, message })?;
            corpus.images.insert(record.id.clone(), record);
        }
        corpus.rebuild_vocabulary();
        Ok(corpus)
    }

    /// Loads a corpus file; a missing file yields an empty corpus.
    pub fn load(path: impl AsRef<Path>, taxonomy: &Taxonomy) -> Result<Corpus, CorpusError> {
        match File::open(path) {
            Ok(file) => Corpus::read(file, taxonomy),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Corpus::new()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn write<W: Write>(&self, writer: W) -> io::Result<()> {
        let mut out = BufWriter::new(writer);
        for record in self.images.values() {
            writeln!(out, "{}", record_line(record))?;
        }
        out.flush()
    }

    /// Rewrites the file through a temporary sibling and a rename.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        let path = path.as_ref();
        let tmp = path.with_extension("jsonl.tmp");
        {
            let file = File::create(&tmp)?;
            self.write(&file)?;
            file.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    id: ImageId,
    source_ref: String,
    iaps_keyword: String,
    emotion: EmotionRating,
    #[serde(default)]
    assignments: Vec<AssignmentLine>,
}

#[derive(Serialize, Deserialize)]
struct AssignmentLine {
    annotator: AnnotatorId,
    synset: String,
    lemma: String,
    weight: f64,
}

/// The persisted JSON form of one record, without a trailing newline.
pub fn record_line(record: &ImageRecord) -> String {
    let line = RecordLine {
        id: record.id.clone(),
        source_ref: record.source_ref.clone(),
        iaps_keyword: record.iaps_keyword.clone(),
        emotion: record.emotion,
        assignments: record
            .assignments
            .iter()
            .map(|a| AssignmentLine {
                annotator: a.annotator.clone(),
                synset: a.sense.synset.to_string(),
                lemma: a.sense.lemma.clone(),
                weight: a.weight,
            })
            .collect(),
    };
    serde_json::to_string(&line).expect("record serializes")
}

/// Appends one record line and syncs it to disk.
pub fn append_record(path: impl AsRef<Path>, record: &ImageRecord) -> io::Result<()> {
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(file, "{}", record_line(record))?;
    file.sync_all()
}

/// Parses records in Corpus File Format without touching any corpus, for imports.
pub fn parse_records<R: Read>(reader: R, taxonomy: &Taxonomy) -> Result<Vec<ImageRecord>, CorpusError> {
    let mut out = Vec::new();
    for (n, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_record(&line, taxonomy).map_err(|message| CorpusError::Parse { line: n + 1, message })?);
    }
    Ok(out)
}

fn parse_record(line: &str, taxonomy: &Taxonomy) -> Result<ImageRecord, String> {
    let parsed: RecordLine = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let mut record = ImageRecord::new(parsed.id, parsed.source_ref, parsed.iaps_keyword, parsed.emotion);
    let mut seen = BTreeSet::new();
    for a in parsed.assignments {
        let sense = taxonomy.sense(&a.synset, &a.lemma).map_err(|e| e.to_string())?;
        if !(0.0..=1.0).contains(&a.weight) {
            return Err(CorpusError::WeightOutOfRange(a.weight).to_string());
        }
        if !seen.insert((a.annotator.clone(), sense.synset.clone())) {
            return Err(format!("annotator {} rates synset {} twice", a.annotator, sense.synset));
        }
        record.assignments.push(TagAssignment { annotator: a.annotator, sense, weight: a.weight });
    }
    record.recompute();
    Ok(record)
}
