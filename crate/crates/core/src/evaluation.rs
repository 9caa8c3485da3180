//! Retrieval evaluation: precision at rank, true-positive counts, batch runs
//! over single-concept queries and a seeded synthetic corpus generator.
//!
//! Judgment files are CSV `query_id,image_id,relevant` with `relevant` 0 or 1.
//! Curve files are CSV `rank,avg_precision,avg_tp_normalized`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::{AnnotatorId, Corpus, CorpusError, EmotionRating, ImageId, TagAssignment};
use crate::numfmt::{format_sig12, serialize_sig12};
use crate::relatedness::SimilaritySource;
use crate::retrieval::{self, RetrievalError, SearchOptions};
use crate::taxonomy::{Pos, Relation, RelationType, Synset, SynsetId, Taxonomy, TaxonomyError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("only {available} candidate synsets, {requested} requested")]
    NotEnoughCandidates { requested: usize, available: usize },
    #[error("report has no ranked results to plot")]
    EmptyReport,
    #[error("judgment line {line}: {message}")]
    Judgment { line: usize, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EvalQuery {
    pub id: String,
    pub text: String,
}

/// Reads one query per line: `id<TAB>text`, or bare text used as its own id.
pub fn read_queries<R: Read>(reader: R) -> io::Result<Vec<EvalQuery>> {
    let mut out = Vec::new();
    for line in BufReader::new(reader).lines() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, text) = line.split_once('\t').unwrap_or((line, line));
        out.push(EvalQuery { id: id.trim().to_owned(), text: text.trim().to_owned() });
    }
    Ok(out)
}

pub fn write_queries<W: Write>(mut writer: W, queries: &[EvalQuery]) -> io::Result<()> {
    for q in queries {
        writeln!(writer, "{}\t{}", q.id, q.text)?;
    }
    Ok(())
}

/// Relevance judgments keyed by (query id, image id).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Judgments {
    map: BTreeMap<(String, String), bool>,
}

impl Judgments {
    pub fn new() -> Self {
        Judgments::default()
    }

    /// Adds a judgment; a second judgment for the same pair is rejected.
    pub fn insert(&mut self, query_id: &str, image_id: &str, relevant: bool) -> bool {
        use std::collections::btree_map::Entry;
        match self.map.entry((query_id.to_owned(), image_id.to_owned())) {
            Entry::Occupied(_) => false,
            Entry::Vacant(v) => {
                v.insert(relevant);
                true
            }
        }
    }

    pub fn get(&self, query_id: &str, image_id: &str) -> Option<bool> {
        self.map.get(&(query_id.to_owned(), image_id.to_owned())).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Judgments, EvalError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let mut out = Judgments::new();
        for (n, row) in rdr.records().enumerate() {
            let line = n + 2;
            let row = row?;
            if row.len() != 3 {
                return Err(EvalError::Judgment { line, message: format!("expected 3 columns, found {}", row.len()) });
            }
            let relevant = match row[2].trim() {
                "1" => true,
                "0" => false,
                other => {
                    return Err(EvalError::Judgment {
                        line,
                        message: format!("relevance must be 0 or 1, found {other:?}"),
                    })
                }
            };
            if !out.insert(row[0].trim(), row[1].trim(), relevant) {
                return Err(EvalError::Judgment {
                    line,
                    message: format!("duplicate judgment for ({}, {})", &row[0], &row[1]),
                });
            }
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Judgments, EvalError> {
        Judgments::read_csv(File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), EvalError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["query_id", "image_id", "relevant"])?;
        for ((q, i), rel) in &self.map {
            w.write_record([q.as_str(), i.as_str(), if *rel { "1" } else { "0" }])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrecisionTp {
    /// `precision_at_k[k - 1]` = relevant results in the top k, divided by k.
    pub precision_at_k: Vec<f64>,
    pub tp_count: usize,
    /// Returned ids with no judgment; counted as not relevant.
    pub missing_judgments: Vec<String>,
}

pub fn precision_tp<S: AsRef<str>>(results: &[S], query_id: &str, judgments: &Judgments) -> PrecisionTp {
    let mut hits = 0usize;
    let mut precision_at_k = Vec::with_capacity(results.len());
    let mut missing_judgments = Vec::new();
    for (k, id) in results.iter().enumerate() {
        match judgments.get(query_id, id.as_ref()) {
            Some(true) => hits += 1,
            Some(false) => {}
            None => missing_judgments.push(id.as_ref().to_owned()),
        }
        precision_at_k.push(hits as f64 / (k + 1) as f64);
    }
    PrecisionTp { precision_at_k, tp_count: hits, missing_judgments }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalParams {
    pub d_max: u32,
    pub limit: Option<usize>,
    pub include_drafts: bool,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams { d_max: retrieval::DEFAULT_D_MAX, limit: None, include_drafts: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryReport {
    pub query_id: String,
    pub query: String,
    pub results: Vec<String>,
    #[serde(serialize_with = "serialize_vec_sig12")]
    pub precision_at_k: Vec<f64>,
    pub tp_count: usize,
    /// `tp_count / results`, or 0 when nothing was returned.
    #[serde(serialize_with = "serialize_sig12")]
    pub precision: f64,
    pub missing_judgments: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryFailure {
    pub query_id: String,
    pub query: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub queries: usize,
    #[serde(serialize_with = "serialize_sig12")]
    pub avg_precision: f64,
    #[serde(serialize_with = "serialize_sig12")]
    pub avg_tp: f64,
    pub max_tp: usize,
    /// Mean precision@k over the queries that returned at least k results.
    #[serde(serialize_with = "serialize_vec_sig12")]
    pub precision_at_rank: Vec<f64>,
    /// Mean over all queries of (relevant in top k) / `max_tp`.
    #[serde(serialize_with = "serialize_vec_sig12")]
    pub tp_normalized_at_rank: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub per_query: Vec<QueryReport>,
    pub failures: Vec<QueryFailure>,
    pub aggregate: Aggregate,
}

fn serialize_vec_sig12<S: serde::Serializer>(values: &[f64], serializer: S) -> Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = serializer.serialize_seq(Some(values.len()))?;
    for v in values {
        seq.serialize_element(&crate::numfmt::round_sig12(*v))?;
    }
    seq.end()
}

/// Averages per-query metrics. Kept separate from the batch runner so the
/// aggregation can be checked on its own.
pub fn aggregate(per_query: &[QueryReport]) -> Aggregate {
    let n = per_query.len();
    if n == 0 {
        return Aggregate {
            queries: 0,
            avg_precision: 0.0,
            avg_tp: 0.0,
            max_tp: 0,
            precision_at_rank: Vec::new(),
            tp_normalized_at_rank: Vec::new(),
        };
    }
    let avg_precision = per_query.iter().map(|q| q.precision).sum::<f64>() / n as f64;
    let avg_tp = per_query.iter().map(|q| q.tp_count as f64).sum::<f64>() / n as f64;
    let max_tp = per_query.iter().map(|q| q.tp_count).max().unwrap_or(0);
    let ranks = per_query.iter().map(|q| q.results.len()).max().unwrap_or(0);

    let mut precision_at_rank = Vec::with_capacity(ranks);
    let mut tp_normalized_at_rank = Vec::with_capacity(ranks);
    for k in 1..=ranks {
        let reaching: Vec<f64> =
            per_query.iter().filter(|q| q.results.len() >= k).map(|q| q.precision_at_k[k - 1]).collect();
        precision_at_rank.push(reaching.iter().sum::<f64>() / reaching.len() as f64);

        let tp_norm = if max_tp == 0 {
            0.0
        } else {
            per_query.iter().map(|q| relevant_in_top(q, k) as f64 / max_tp as f64).sum::<f64>() / n as f64
        };
        tp_normalized_at_rank.push(tp_norm);
    }
    Aggregate { queries: n, avg_precision, avg_tp, max_tp, precision_at_rank, tp_normalized_at_rank }
}

/// Relevant results among the first `k` (or all, if fewer were returned).
fn relevant_in_top(q: &QueryReport, k: usize) -> usize {
    match q.results.len().min(k) {
        0 => 0,
        m => (q.precision_at_k[m - 1] * m as f64).round() as usize,
    }
}

/// Runs every query through search and scores the rankings. A query that
/// fails to parse or search is listed under `failures` and left out of the
/// aggregate.
pub fn run_batch(
    corpus: &Corpus,
    queries: &[EvalQuery],
    judgments: &Judgments,
    source: &dyn SimilaritySource,
    params: EvalParams,
) -> Result<EvalReport, EvalError> {
    if queries.is_empty() {
        return Err(EvalError::InvalidParams("no queries".into()));
    }
    let options = SearchOptions { limit: params.limit, include_drafts: params.include_drafts };
    let outcomes: Vec<Result<QueryReport, QueryFailure>> = queries
        .par_iter()
        .map(|q| {
            let run = || -> Result<Vec<String>, RetrievalError> {
                let parsed = retrieval::parse_query(source.taxonomy(), &q.text)?.with_d_max(params.d_max);
                let hits = retrieval::search(corpus, &parsed, source, options)?;
                Ok(hits.into_iter().map(|r| String::from(r.image_id)).collect())
            };
            match run() {
                Ok(results) => {
                    let m = precision_tp(&results, &q.id, judgments);
                    let precision = if results.is_empty() { 0.0 } else { m.tp_count as f64 / results.len() as f64 };
                    Ok(QueryReport {
                        query_id: q.id.clone(),
                        query: q.text.clone(),
                        results,
                        precision_at_k: m.precision_at_k,
                        tp_count: m.tp_count,
                        precision,
                        missing_judgments: m.missing_judgments,
                    })
                }
                Err(e) => Err(QueryFailure { query_id: q.id.clone(), query: q.text.clone(), error: e.to_string() }),
            }
        })
        .collect();

    let mut per_query = Vec::new();
    let mut failures = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(r) => per_query.push(r),
            Err(f) => failures.push(f),
        }
    }
    let aggregate = aggregate(&per_query);
    Ok(EvalReport { per_query, failures, aggregate })
}

/// Writes `rank,avg_precision,avg_tp_normalized` rows, one per rank.
pub fn emit_curves<W: Write>(report: &EvalReport, writer: W) -> Result<(), EvalError> {
    let agg = &report.aggregate;
    if report.per_query.is_empty() || agg.precision_at_rank.is_empty() {
        return Err(EvalError::EmptyReport);
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["rank", "avg_precision", "avg_tp_normalized"])?;
    for (k, (p, tp)) in agg.precision_at_rank.iter().zip(&agg.tp_normalized_at_rank).enumerate() {
        w.write_record([(k + 1).to_string(), format_sig12(*p), format_sig12(*tp)])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes curves to `path`; nothing is created when the report is empty.
pub fn write_curves(report: &EvalReport, path: impl AsRef<Path>) -> Result<(), EvalError> {
    let mut buf = Vec::new();
    emit_curves(report, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

/// Synsets reachable within `d` hops of any tag used in the corpus.
pub fn query_candidates(t: &Taxonomy, corpus: &Corpus, d: u32) -> Result<Vec<SynsetId>, EvalError> {
    let tags: BTreeSet<&SynsetId> =
        corpus.images().flat_map(|img| img.weighted_tags().iter().map(|w| &w.sense.synset)).collect();
    let mut candidates: Vec<SynsetId> = t.distances_from_set(tags, d)?.into_iter().map(|(id, _)| id.clone()).collect();
    candidates.sort();
    Ok(candidates)
}

/// Draws `n` distinct synsets within `d` hops of the nearest image tag and
/// returns each one's first lemma as query text (underscores become spaces).
pub fn select_query_terms(
    t: &Taxonomy,
    corpus: &Corpus,
    n: usize,
    d: u32,
    seed: u64,
) -> Result<Vec<String>, EvalError> {
    if n == 0 {
        return Err(EvalError::InvalidParams("query count must be positive".into()));
    }
    let candidates = query_candidates(t, corpus, d)?;
    if candidates.len() < n {
        return Err(EvalError::NotEnoughCandidates { requested: n, available: candidates.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(index::sample(&mut rng, candidates.len(), n)
        .into_iter()
        .map(|i| {
            let synset = t.get(candidates[i].as_str()).expect("candidate from taxonomy");
            synset.lemmas[0].replace('_', " ")
        })
        .collect())
}

/// Relevance by distance: an image is relevant to a query when some query
/// synset lies within `radius` hops of one of the image's tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RadiusRule {
    pub radius: u32,
}

impl RadiusRule {
    pub fn judge(&self, t: &Taxonomy, corpus: &Corpus, queries: &[EvalQuery]) -> Result<Judgments, EvalError> {
        let mut out = Judgments::new();
        for q in queries {
            let parsed = match retrieval::parse_query(t, &q.text) {
                Ok(p) => p,
                Err(RetrievalError::NoSenseFound { .. } | RetrievalError::EmptyQuery) => continue,
                Err(e) => return Err(e.into()),
            };
            let near: BTreeSet<&SynsetId> =
                t.distances_from_set(parsed.synsets(), self.radius)?.into_iter().map(|(id, _)| id).collect();
            for img in corpus.images() {
                let relevant = img.weighted_tags().iter().any(|w| near.contains(&w.sense.synset));
                out.insert(&q.id, img.id().as_str(), relevant);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticParams {
    pub n_synsets: usize,
    pub n_images: usize,
    pub tags_min: usize,
    pub tags_median: usize,
    pub tags_max: usize,
    pub tags_mean: f64,
    pub tags_sd: f64,
    /// Size of the annotator pool; each image gets 2–4 of them.
    pub annotators: usize,
    /// Hypernym parents are drawn from this many preceding synsets, which
    /// sets how deep the generated hierarchy grows.
    pub parent_window: usize,
    pub judgment_radius: u32,
    pub seed: u64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            n_synsets: 956,
            n_images: 100,
            tags_min: 13,
            tags_median: 20,
            tags_max: 28,
            tags_mean: 20.56,
            tags_sd: 2.77,
            annotators: 12,
            parent_window: 40,
            judgment_radius: 2,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub taxonomy: Taxonomy,
    pub corpus: Corpus,
    pub rule: RadiusRule,
}

const SYLLABLES: [&str; 16] =
    ["ba", "ko", "ri", "te", "mu", "sa", "lo", "ne", "vi", "da", "pe", "gu", "zo", "fi", "ha", "ju"];

/// A unique pronounceable word for `n`: base-16 digits spelled as syllables.
fn word(mut n: usize) -> String {
    let mut parts = Vec::new();
    loop {
        parts.push(SYLLABLES[n % SYLLABLES.len()]);
        n /= SYLLABLES.len();
        if n == 0 {
            break;
        }
    }
    while parts.len() < 3 {
        parts.push("x");
    }
    parts.reverse();
    parts.concat()
}

/// Tag counts per image with exactly the requested min, median and max.
fn tag_counts(params: &SyntheticParams, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = params.n_images;
    let mut counts: Vec<usize> = (0..n)
        .map(|_| {
            // Box-Muller.
            let u1: f64 = rng.random_range(f64::EPSILON..1.0);
            let u2: f64 = rng.random();
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            let c = (params.tags_mean + params.tags_sd * z).round();
            c.clamp(params.tags_min as f64, params.tags_max as f64) as usize
        })
        .collect();
    counts.sort_unstable();
    let med = params.tags_median;
    if n % 2 == 1 {
        counts[n / 2] = med;
    } else {
        counts[n / 2 - 1] = med;
        counts[n / 2] = med;
    }
    let lower = n.div_ceil(2);
    for (i, c) in counts.iter_mut().enumerate() {
        if i < lower {
            *c = (*c).min(med);
        } else {
            *c = (*c).max(med);
        }
    }
    if n >= 3 {
        counts[0] = params.tags_min;
        counts[n - 1] = params.tags_max;
    }
    // Shuffle onto images.
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        counts.swap(i, j);
    }
    counts
}

fn synthetic_taxonomy(params: &SyntheticParams, rng: &mut ChaCha8Rng) -> Result<Taxonomy, EvalError> {
    let n = params.n_synsets;
    let ids: Vec<SynsetId> = (1..=n).map(|i| SynsetId::new(format!("n-{i}"))).collect::<Result<_, _>>()?;
    let mut relations: Vec<Vec<Relation>> = vec![Vec::new(); n];
    let mut linked: BTreeSet<(usize, usize)> = BTreeSet::new();
    let link = |relations: &mut Vec<Vec<Relation>>, a: usize, b: usize, kind: RelationType| {
        relations[a].push(Relation { kind, target: ids[b].clone() });
        relations[b].push(Relation { kind: kind.inverse(), target: ids[a].clone() });
    };
    for i in 1..n {
        let lo = i.saturating_sub(params.parent_window);
        let parent = rng.random_range(lo..i);
        link(&mut relations, i, parent, RelationType::Hypernym);
        linked.insert((parent.min(i), parent.max(i)));
    }
    // Part-whole edges between nearby synsets, roughly one per ten.
    for i in 2..n {
        if rng.random_bool(0.1) {
            let lo = i.saturating_sub(params.parent_window);
            let whole = rng.random_range(lo..i);
            if linked.insert((whole.min(i), whole.max(i))) {
                link(&mut relations, i, whole, RelationType::Holonym);
            }
        }
    }

    let mut lemmas: Vec<Vec<String>> = (0..n).map(|i| vec![word(i)]).collect();
    let mut next_word = n;
    for i in 0..n {
        if rng.random_bool(0.2) {
            lemmas[i].push(word(next_word));
            next_word += 1;
        }
        // Occasional polysemy: reuse another synset's primary lemma.
        if i > 0 && rng.random_bool(0.03) {
            let other = rng.random_range(0..i);
            let shared = lemmas[other][0].clone();
            if !lemmas[i].contains(&shared) {
                lemmas[i].push(shared);
            }
        }
    }

    let synsets = ids
        .iter()
        .zip(relations)
        .zip(lemmas)
        .enumerate()
        .map(|(i, ((id, relations), lemmas))| Synset {
            id: id.clone(),
            pos: Pos::Noun,
            lemmas,
            relations,
            gloss: format!("synthetic concept {i}"),
        })
        .collect();
    Ok(Taxonomy::from_synsets(synsets)?)
}

/// Builds a seeded taxonomy and annotated corpus. Identical parameters give
/// identical output.
pub fn generate_synthetic(params: &SyntheticParams) -> Result<SyntheticDataset, EvalError> {
    let p = params;
    let invalid = |m: &str| Err(EvalError::InvalidParams(m.to_owned()));
    if p.n_synsets == 0 || p.n_images == 0 || p.annotators < 2 || p.parent_window == 0 {
        return invalid("synset, image, window and annotator counts must be positive (two or more annotators)");
    }
    if !(3 <= p.tags_min && p.tags_min <= p.tags_median && p.tags_median <= p.tags_max) {
        return invalid("tag counts need 3 <= min <= median <= max");
    }
    if p.tags_max > p.n_synsets {
        return invalid("more tags per image than synsets");
    }
    if !(p.tags_mean.is_finite() && p.tags_sd.is_finite() && p.tags_sd >= 0.0) {
        return invalid("tag count mean and sd must be finite, sd nonnegative");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let taxonomy = synthetic_taxonomy(p, &mut rng)?;
    let counts = tag_counts(p, &mut rng);
    let pool: Vec<AnnotatorId> =
        (1..=p.annotators).map(|i| AnnotatorId::new(format!("ann{i:02}"))).collect::<Result<_, _>>()?;

    let mut corpus = Corpus::new();
    for (i, &count) in counts.iter().enumerate() {
        let image_id = ImageId::new(format!("{}", 1000 + i))?;
        let topic = rng.random_range(0..taxonomy.len());
        let topic_id = taxonomy.ids()[topic].clone();

        let mut radius = 1;
        let area = loop {
            let area: Vec<SynsetId> =
                taxonomy.neighborhood(topic_id.as_str(), radius)?.into_iter().filter(|id| *id != topic_id).collect();
            if area.len() + 1 >= 2 * count || area.len() + 1 >= taxonomy.len() {
                break area;
            }
            radius += 1;
        };
        let mut tags = vec![topic_id.clone()];
        tags.extend(index::sample(&mut rng, area.len(), count - 1).into_iter().map(|j| area[j].clone()));

        let emotion = EmotionRating::new(
            (rng.random_range(100..=900) as f64) / 100.0,
            (rng.random_range(100..=900) as f64) / 100.0,
            (rng.random_range(100..=900) as f64) / 100.0,
        )?;
        let keyword = taxonomy.get(topic_id.as_str()).expect("topic exists").lemmas[0].clone();
        corpus.add_image(image_id.clone(), format!("synthetic/{image_id}.jpg"), keyword, emotion)?;

        let raters = rng.random_range(2..=4usize.min(p.annotators));
        let chosen: Vec<&AnnotatorId> =
            index::sample(&mut rng, pool.len(), raters).into_iter().map(|j| &pool[j]).collect();
        let importance: Vec<f64> = tags.iter().map(|_| rng.random::<f64>()).collect();
        for (r, annotator) in chosen.iter().enumerate() {
            for (t, synset) in tags.iter().enumerate() {
                // The first rater tags everything; the second at least the topic.
                let rates = r == 0 || (r == 1 && t == 0) || rng.random_bool(0.6);
                if !rates {
                    continue;
                }
                let noisy = (importance[t] + rng.random_range(-0.15..=0.15)).clamp(0.0, 1.0);
                let weight = (noisy * 20.0).round() / 20.0;
                let lemma = taxonomy.get(synset.as_str()).expect("tag exists").lemmas[0].clone();
                corpus.annotate(
                    &taxonomy,
                    image_id.as_str(),
                    TagAssignment {
                        annotator: (*annotator).clone(),
                        sense: taxonomy.sense(synset.as_str(), &lemma)?,
                        weight,
                    },
                )?;
            }
        }
    }

    Ok(SyntheticDataset { taxonomy, corpus, rule: RadiusRule { radius: p.judgment_radius } })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn judgments(rows: &[(&str, &str, bool)]) -> Judgments {
        let mut j = Judgments::new();
        for (q, i, r) in rows {
            assert!(j.insert(q, i, *r));
        }
        j
    }

    #[test]
    fn precision_examples() {
        let j = judgments(&[("q", "a", true), ("q", "b", true), ("q", "c", false)]);
        let m = precision_tp(&["a", "b", "c"], "q", &j);
        assert_eq!(m.precision_at_k, vec![1.0, 1.0, 2.0 / 3.0]);
        assert_eq!(m.tp_count, 2);
        let m = precision_tp(&["a", "b"], "q", &j);
        assert_eq!(m.precision_at_k, vec![1.0, 1.0]);
        assert_eq!(m.tp_count, 2);
        let m = precision_tp(&["z", "a"], "q", &j);
        assert_eq!(m.precision_at_k, vec![0.0, 0.5]);
        assert_eq!(m.missing_judgments, ["z"]);
    }

    #[test]
    fn judgment_csv() {
        let text = "query_id,image_id,relevant\ndog,7175,1\ndog,1000,0\n";
        let j = Judgments::read_csv(text.as_bytes()).unwrap();
        assert_eq!(j.get("dog", "7175"), Some(true));
        assert_eq!(j.get("dog", "1000"), Some(false));
        assert_eq!(j.get("cat", "1000"), None);
        let mut out = Vec::new();
        j.write_csv(&mut out).unwrap();
        assert_eq!(Judgments::read_csv(&out[..]).unwrap(), j);

        for bad in ["query_id,image_id,relevant\ndog,1,2\n", "query_id,image_id,relevant\ndog,1,1\ndog,1,0\n"] {
            assert!(matches!(Judgments::read_csv(bad.as_bytes()), Err(EvalError::Judgment { .. })));
        }
    }

    #[test]
    fn query_file() {
        let qs = read_queries("# comment\nq1\tattack dog\ncat\n\n".as_bytes()).unwrap();
        assert_eq!(
            qs,
            vec![
                EvalQuery { id: "q1".into(), text: "attack dog".into() },
                EvalQuery { id: "cat".into(), text: "cat".into() },
            ]
        );
    }

    fn report(query: &str, results: &[&str], j: &Judgments) -> QueryReport {
        let m = precision_tp(results, query, j);
        QueryReport {
            query_id: query.into(),
            query: query.into(),
            results: results.iter().map(|s| s.to_string()).collect(),
            precision: if results.is_empty() { 0.0 } else { m.tp_count as f64 / results.len() as f64 },
            precision_at_k: m.precision_at_k,
            tp_count: m.tp_count,
            missing_judgments: m.missing_judgments,
        }
    }

    #[test]
    fn aggregation() {
        let j =
            judgments(&[("a", "1", true), ("a", "2", false), ("a", "3", true), ("b", "1", false), ("b", "2", true)]);
        let per = vec![report("a", &["1", "2", "3"], &j), report("b", &["1"], &j)];
        let agg = aggregate(&per);
        assert_eq!(agg.queries, 2);
        assert_eq!(agg.avg_precision, (2.0 / 3.0 + 0.0) / 2.0);
        assert_eq!(agg.avg_tp, 1.0);
        assert_eq!(agg.max_tp, 2);
        assert_eq!(agg.precision_at_rank, vec![0.5, 0.5, 2.0 / 3.0]);
        assert_eq!(agg.tp_normalized_at_rank, vec![0.25, 0.25, 0.5]);

        let single = aggregate(&per[..1]);
        assert_eq!(single.avg_precision, per[0].precision);
        assert_eq!(single.precision_at_rank, per[0].precision_at_k);
    }

    #[test]
    fn curves_csv() {
        let j = judgments(&[("a", "1", true), ("a", "2", false), ("a", "3", true)]);
        let per = vec![report("a", &["1", "2", "3"], &j)];
        let r = EvalReport { aggregate: aggregate(&per), per_query: per, failures: vec![] };
        let mut out = Vec::new();
        emit_curves(&r, &mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "rank,avg_precision,avg_tp_normalized\n1,1,0.5\n2,0.5,0.5\n3,0.666666666667,1\n"
        );
        let empty = EvalReport { aggregate: aggregate(&[]), per_query: vec![], failures: vec![] };
        assert!(matches!(emit_curves(&empty, Vec::new()), Err(EvalError::EmptyReport)));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curves.csv");
        assert!(write_curves(&empty, &path).is_err());
        assert!(!path.exists());
    }

    #[test]
    fn words_are_unique_and_alphabetic() {
        let words: BTreeSet<String> = (0..5000).map(word).collect();
        assert_eq!(words.len(), 5000);
        assert!(words.iter().all(|w| w.chars().all(|c| c.is_ascii_lowercase())));
    }

    #[test]
    fn tag_count_envelope() {
        for (n, seed) in [(100, 1u64), (7, 2), (2, 3), (1, 4), (50, 5)] {
            let p = SyntheticParams { n_images: n, seed, ..Default::default() };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let counts = tag_counts(&p, &mut rng);
            let s = crate::corpus::TagCountStats::from_counts(&counts).unwrap();
            assert_eq!(s.median, 20.0, "n={n}");
            assert!(s.min >= 13 && s.max <= 28);
            if n >= 3 {
                assert_eq!((s.min, s.max), (13, 28));
            }
        }
    }

    #[test]
    fn rejects_bad_params() {
        for p in [
            SyntheticParams { n_images: 0, ..Default::default() },
            SyntheticParams { tags_min: 30, ..Default::default() },
            SyntheticParams { annotators: 1, ..Default::default() },
            SyntheticParams { n_synsets: 10, ..Default::default() },
        ] {
            assert!(matches!(generate_synthetic(&p), Err(EvalError::InvalidParams(_))));
        }
    }
}
