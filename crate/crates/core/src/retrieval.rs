//! Query parsing and ranked retrieval.
//!
//! A query is split into lowercase alphanumeric tokens. Contiguous runs of up
//! to four tokens are joined with underscores and looked up as lemmas,
//! longest runs first and leftmost first among equals, so `attack dog`
//! resolves to the single collocation `attack_dog` when the taxonomy has it.
//!
//! An image's raw score is the double sum over query synsets `q` and the
//! image's weighted tags `(w, s)` of `w * sim(q, s)`. Relevance divides that
//! by `|Q| * sum(w)`, which keeps it in `[0, 1]`.

use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::{AffectDimension, Corpus, EmotionRating, ImageId, ImageRecord, WeightedTag};
use crate::numfmt::{round_sig12, serialize_sig12};
use crate::relatedness::{Relatedness, RelatednessError, SimilaritySource};
use crate::taxonomy::{SynsetId, Taxonomy};

pub const DEFAULT_D_MAX: u32 = 10;
/// Longest collocation tried, in tokens.
pub const MAX_COLLOCATION_TOKENS: usize = 4;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("no query term matches a known sense (unmatched: {})", unmatched.join(", "))]
    NoSenseFound { unmatched: Vec<String> },
    #[error("invalid {dimension} range [{lo}, {hi}]")]
    InvalidRange { dimension: AffectDimension, lo: f64, hi: f64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Relatedness(#[from] RelatednessError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MatchedSpan {
    /// Token range, end exclusive.
    pub start: usize,
    pub end: usize,
    pub lemma: String,
    pub synsets: BTreeSet<SynsetId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Query {
    pub raw_text: String,
    pub tokens: Vec<String>,
    /// Non-overlapping, left to right.
    pub matched_spans: Vec<MatchedSpan>,
    pub unmatched_tokens: Vec<String>,
    pub d_max: u32,
}

impl Query {
    /// Union of all span synsets.
    pub fn synsets(&self) -> BTreeSet<&SynsetId> {
        self.matched_spans.iter().flat_map(|s| s.synsets.iter()).collect()
    }

    pub fn with_d_max(mut self, d_max: u32) -> Query {
        self.d_max = d_max;
        self
    }
}

/// Lowercased alphanumeric words in order.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(str::to_lowercase).collect()
}

pub fn parse_query(t: &Taxonomy, text: &str) -> Result<Query, RetrievalError> {
    if text.trim().is_empty() {
        return Err(RetrievalError::EmptyQuery);
    }
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(RetrievalError::EmptyQuery);
    }

    let mut taken = vec![false; tokens.len()];
    let mut spans = Vec::new();
    for len in (1..=MAX_COLLOCATION_TOKENS.min(tokens.len())).rev() {
        for start in 0..=tokens.len() - len {
            let end = start + len;
            if taken[start..end].iter().any(|&x| x) {
                continue;
            }
            let lemma = tokens[start..end].join("_");
            if t.has_lemma(&lemma) {
                taken[start..end].iter_mut().for_each(|x| *x = true);
                spans.push(MatchedSpan { start, end, synsets: t.lookup_lemma(&lemma), lemma });
            }
        }
    }
    spans.sort_by_key(|s| s.start);

    let unmatched_tokens: Vec<String> =
        tokens.iter().zip(&taken).filter(|(_, &used)| !used).map(|(tok, _)| tok.clone()).collect();
    if spans.is_empty() {
        return Err(RetrievalError::NoSenseFound { unmatched: unmatched_tokens });
    }
    Ok(Query { raw_text: text.to_owned(), tokens, matched_spans: spans, unmatched_tokens, d_max: DEFAULT_D_MAX })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Contribution {
    pub query_synset: SynsetId,
    pub image_synset: SynsetId,
    #[serde(serialize_with = "serialize_sig12")]
    pub mean_weight: f64,
    #[serde(serialize_with = "serialize_sig12")]
    pub sim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedResult {
    pub image_id: ImageId,
    #[serde(serialize_with = "serialize_sig12")]
    pub raw_score: f64,
    #[serde(serialize_with = "serialize_sig12")]
    pub relevance: f64,
    pub contributions: Vec<Contribution>,
}

/// Relatedness rows for each query synset, fetched once per search.
pub struct QueryRows<'q> {
    rows: Vec<(&'q SynsetId, HashMap<SynsetId, Relatedness>)>,
}

impl<'q> QueryRows<'q> {
    pub fn fetch(query: &'q Query, source: &dyn SimilaritySource) -> Result<Self, RetrievalError> {
        let rows = query
            .synsets()
            .into_iter()
            .map(|q| Ok((q, source.related(q.as_str(), query.d_max)?)))
            .collect::<Result<Vec<_>, RelatednessError>>()?;
        Ok(QueryRows { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Scores a tag list. Raw score is summed per query synset, then across
    /// query synsets, so a multi-synset score is the sum of single-synset ones.
    pub fn score(&self, image_id: &ImageId, tags: &[WeightedTag]) -> RankedResult {
        let mut raw = 0.0;
        let mut contributions = Vec::new();
        for (q, row) in &self.rows {
            let mut partial = 0.0;
            for tag in tags {
                if let Some(r) = row.get(&tag.sense.synset) {
                    partial += tag.mean_weight * r.get();
                    contributions.push(Contribution {
                        query_synset: (*q).clone(),
                        image_synset: tag.sense.synset.clone(),
                        mean_weight: tag.mean_weight,
                        sim: r.get(),
                    });
                }
            }
            raw += partial;
        }
        let mass: f64 = tags.iter().map(|t| t.mean_weight).sum();
        let denominator = self.rows.len() as f64 * mass;
        let relevance = if denominator > 0.0 { (raw / denominator).min(1.0) } else { 0.0 };
        RankedResult { image_id: image_id.clone(), raw_score: raw, relevance, contributions }
    }
}

pub fn score_image(
    query: &Query,
    image: &ImageRecord,
    source: &dyn SimilaritySource,
) -> Result<RankedResult, RetrievalError> {
    let rows = QueryRows::fetch(query, source)?;
    Ok(rows.score(image.id(), image.weighted_tags()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SearchOptions {
    /// `None` returns every scored image.
    pub limit: Option<usize>,
    pub include_drafts: bool,
}

/// Sorts by relevance (at wire precision) descending, then image id.
pub fn rank(results: &mut [RankedResult]) {
    results.sort_by(|a, b| {
        round_sig12(b.relevance).total_cmp(&round_sig12(a.relevance)).then_with(|| a.image_id.cmp(&b.image_id))
    });
}

/// Scores every searchable image and returns those with a positive raw score.
pub fn search(
    corpus: &Corpus,
    query: &Query,
    source: &dyn SimilaritySource,
    options: SearchOptions,
) -> Result<Vec<RankedResult>, RetrievalError> {
    if options.limit == Some(0) {
        return Err(RetrievalError::InvalidParams("limit must be positive".into()));
    }
    let rows = QueryRows::fetch(query, source)?;
    let images: Vec<&ImageRecord> = corpus.searchable(options.include_drafts).collect();
    let mut results: Vec<RankedResult> =
        images.par_iter().map(|img| rows.score(img.id(), img.weighted_tags())).filter(|r| r.raw_score > 0.0).collect();
    rank(&mut results);
    if let Some(limit) = options.limit {
        results.truncate(limit);
    }
    Ok(results)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdaptiveParams {
    pub d_start: u32,
    pub d_step: u32,
    pub min_results: usize,
    pub d_ceiling: u32,
}

impl Default for AdaptiveParams {
    fn default() -> Self {
        AdaptiveParams { d_start: 2, d_step: 2, min_results: 1, d_ceiling: DEFAULT_D_MAX }
    }
}

/// Widens the distance cutoff from `d_start` by `d_step` until at least
/// `min_results` images come back. The last step is clamped to `d_ceiling`
/// so the ceiling itself is always tried.
pub fn adaptive_search(
    corpus: &Corpus,
    query: &Query,
    source: &dyn SimilaritySource,
    params: AdaptiveParams,
    options: SearchOptions,
) -> Result<(Vec<RankedResult>, u32), RetrievalError> {
    if params.d_start > params.d_ceiling || params.d_step == 0 || params.min_results == 0 {
        return Err(RetrievalError::InvalidParams(format!("{params:?}")));
    }
    let mut d = params.d_start;
    loop {
        let widened = query.clone().with_d_max(d);
        let results = search(corpus, &widened, source, options)?;
        if results.len() >= params.min_results || d >= params.d_ceiling {
            return Ok((results, d));
        }
        d = d.saturating_add(params.d_step).min(params.d_ceiling);
    }
}

/// Closed interval on the 1–9 affect scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffectRange {
    pub lo: f64,
    pub hi: f64,
}

impl AffectRange {
    pub fn contains(&self, value: f64) -> bool {
        self.lo <= value && value <= self.hi
    }
}

/// Optional range per dimension; an absent range passes everything.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AffectFilter {
    pub valence: Option<AffectRange>,
    pub arousal: Option<AffectRange>,
    pub dominance: Option<AffectRange>,
}

impl AffectFilter {
    fn ranges(&self) -> [(AffectDimension, Option<AffectRange>); 3] {
        [
            (AffectDimension::Valence, self.valence),
            (AffectDimension::Arousal, self.arousal),
            (AffectDimension::Dominance, self.dominance),
        ]
    }

    pub fn validate(&self) -> Result<(), RetrievalError> {
        for (dimension, range) in self.ranges() {
            if let Some(AffectRange { lo, hi }) = range {
                let in_scale = |v: f64| (EmotionRating::MIN..=EmotionRating::MAX).contains(&v);
                if !(in_scale(lo) && in_scale(hi) && lo <= hi) {
                    return Err(RetrievalError::InvalidRange { dimension, lo, hi });
                }
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.ranges().iter().all(|(_, r)| r.is_none())
    }

    pub fn accepts(&self, emotion: &EmotionRating) -> bool {
        self.ranges().iter().all(|(dim, range)| range.is_none_or(|r| r.contains(emotion.get(*dim))))
    }
}

/// Keeps results whose image emotion lies inside every supplied range.
pub fn filter_affect(
    results: Vec<RankedResult>,
    corpus: &Corpus,
    filter: &AffectFilter,
) -> Result<Vec<RankedResult>, RetrievalError> {
    filter.validate()?;
    Ok(results
        .into_iter()
        .filter(|r| corpus.get(r.image_id.as_str()).is_some_and(|img| filter.accepts(img.emotion())))
        .collect())
}

/// Case-insensitive exact match on the legacy keyword, ids ascending.
pub fn search_by_keyword(corpus: &Corpus, keyword: &str) -> Vec<ImageId> {
    let wanted = keyword.to_lowercase();
    corpus.images().filter(|img| img.iaps_keyword().to_lowercase() == wanted).map(|img| img.id().clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AnnotatorId, TagAssignment};
    use crate::relatedness::OnTheFly;
    use crate::taxonomy::Sense;

    const FIXTURE: &str = include_str!("../tests/fixtures/taxonomy.tsv");

    fn taxonomy() -> Taxonomy {
        Taxonomy::parse(FIXTURE).unwrap()
    }

    fn id(s: &str) -> SynsetId {
        SynsetId::new(s).unwrap()
    }

    fn tag(synset: &str, lemma: &str, w: f64) -> WeightedTag {
        WeightedTag { sense: Sense { synset: id(synset), lemma: lemma.into() }, mean_weight: w, rater_count: 1 }
    }

    #[test]
    fn collocations_win() {
        let t = taxonomy();
        let q = parse_query(&t, "attack dog").unwrap();
        assert_eq!(q.matched_spans.len(), 1);
        assert_eq!(q.matched_spans[0].lemma, "attack_dog");
        assert_eq!((q.matched_spans[0].start, q.matched_spans[0].end), (0, 2));
        assert!(q.unmatched_tokens.is_empty());

        let q = parse_query(&t, "Dog").unwrap();
        assert_eq!(q.matched_spans[0].synsets, t.lookup_lemma("dog"));
        assert_eq!(q.d_max, DEFAULT_D_MAX);

        let q = parse_query(&t, "purple dog").unwrap();
        assert_eq!(q.matched_spans.iter().map(|s| s.lemma.as_str()).collect::<Vec<_>>(), ["dog"]);
        assert_eq!(q.unmatched_tokens, ["purple"]);
    }

    #[test]
    fn greedy_leftmost_and_ordered() {
        let t = taxonomy();
        let q = parse_query(&t, "cat, attack dog; physical object lamp").unwrap();
        let lemmas: Vec<&str> = q.matched_spans.iter().map(|s| s.lemma.as_str()).collect();
        assert_eq!(lemmas, ["cat", "attack_dog", "physical_object", "lamp"]);
        // "dog attack dog": leftmost of two equal-length candidates wins.
        let q = parse_query(&t, "dog attack dog").unwrap();
        let lemmas: Vec<&str> = q.matched_spans.iter().map(|s| s.lemma.as_str()).collect();
        assert_eq!(lemmas, ["dog", "attack_dog"]);
    }

    #[test]
    fn parse_errors() {
        let t = taxonomy();
        assert!(matches!(parse_query(&t, "   "), Err(RetrievalError::EmptyQuery)));
        assert!(matches!(parse_query(&t, "?!"), Err(RetrievalError::EmptyQuery)));
        match parse_query(&t, "purple unicorn") {
            Err(RetrievalError::NoSenseFound { unmatched }) => assert_eq!(unmatched, ["purple", "unicorn"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn scoring_examples() {
        let t = taxonomy();
        let fly = OnTheFly::new(&t);
        let img = ImageId::new("x").unwrap();

        let q = parse_query(&t, "dog").unwrap();
        let rows = QueryRows::fetch(&q, &fly).unwrap();
        let r = rows.score(&img, &[tag("n-3", "dog", 1.0)]);
        assert_eq!((r.raw_score, r.relevance), (1.0, 1.0));

        // cat-dog is 2 hops, cat-lamp 3: with d_max 2 only dog contributes.
        let q = parse_query(&t, "cat").unwrap().with_d_max(2);
        let rows = QueryRows::fetch(&q, &fly).unwrap();
        let r = rows.score(&img, &[tag("n-3", "dog", 0.9), tag("n-9", "lamp", 0.4)]);
        assert!((r.raw_score - 0.3).abs() < 1e-15);
        assert_eq!(r.contributions.len(), 1);

        let tags = [tag("n-3", "dog", 0.9), tag("n-9", "lamp", 0.4), tag("n-8", "car", 0.25)];
        let score = |text: &str| {
            let q = parse_query(&t, text).unwrap();
            let rows = QueryRows::fetch(&q, &fly).unwrap();
            rows.score(&img, &tags)
        };
        let (both, cat, lamp) = (score("cat lamp"), score("cat"), score("lamp"));
        assert_eq!(both.raw_score, cat.raw_score + lamp.raw_score);
        let summed: f64 = both.contributions.iter().map(|c| c.mean_weight * c.sim).sum();
        assert!((summed - both.raw_score).abs() < 1e-12);
        assert!(both.relevance <= 1.0);
    }

    #[test]
    fn empty_and_zero_weight_images() {
        let t = taxonomy();
        let fly = OnTheFly::new(&t);
        let q = parse_query(&t, "dog").unwrap();
        let rows = QueryRows::fetch(&q, &fly).unwrap();
        let img = ImageId::new("x").unwrap();
        let r = rows.score(&img, &[]);
        assert_eq!((r.raw_score, r.relevance), (0.0, 0.0));
        let r = rows.score(&img, &[tag("n-3", "dog", 0.0)]);
        assert_eq!((r.raw_score, r.relevance), (0.0, 0.0));
    }

    type ImageSpec = (&'static str, &'static str, (f64, f64, f64), &'static [(&'static str, &'static str, f64)]);

    fn small_corpus(t: &Taxonomy) -> Corpus {
        let mut c = Corpus::new();
        let specs: [ImageSpec; 3] = [
            ("1", "dog", (2.0, 5.0, 5.0), &[("n-3", "dog", 0.9), ("n-9", "lamp", 0.2), ("n-2", "object", 0.1)]),
            ("2", "lamp", (6.0, 3.0, 5.0), &[("n-9", "lamp", 1.0), ("n-2", "object", 0.5), ("n-7", "vehicle", 0.1)]),
            ("3", "Lamp", (8.0, 7.0, 4.0), &[("n-11", "attack", 1.0), ("n-9", "lamp", 0.3), ("n-20", "wheel", 0.3)]),
        ];
        for (img, kw, (v, a, d), tags) in specs {
            c.add_image(ImageId::new(img).unwrap(), format!("{img}.jpg"), kw, EmotionRating::new(v, a, d).unwrap())
                .unwrap();
            for who in ["a", "b"] {
                for (s, l, w) in tags {
                    c.annotate(
                        t,
                        img,
                        TagAssignment {
                            annotator: AnnotatorId::new(who).unwrap(),
                            sense: t.sense(s, l).unwrap(),
                            weight: *w,
                        },
                    )
                    .unwrap();
                }
            }
        }
        c
    }

    #[test]
    fn search_orders_and_limits() {
        let t = taxonomy();
        let c = small_corpus(&t);
        let fly = OnTheFly::new(&t);
        let q = parse_query(&t, "lamp").unwrap();
        let all = search(&c, &q, &fly, SearchOptions::default()).unwrap();
        assert!(all.windows(2).all(|w| round_sig12(w[0].relevance) >= round_sig12(w[1].relevance)));
        assert_eq!(all.len(), 3);
        let top = search(&c, &q, &fly, SearchOptions { limit: Some(1), ..Default::default() }).unwrap();
        assert_eq!(top[..], all[..1]);
        assert!(search(&c, &q, &fly, SearchOptions { limit: Some(0), ..Default::default() }).is_err());

        let q = parse_query(&t, "attack").unwrap().with_d_max(0);
        let hits = search(&c, &q, &fly, SearchOptions::default()).unwrap();
        assert_eq!(hits.iter().map(|r| r.image_id.as_str()).collect::<Vec<_>>(), ["3"]);
        let q = parse_query(&t, "snake").unwrap().with_d_max(0);
        assert!(search(&c, &q, &fly, SearchOptions::default()).unwrap().is_empty());
    }

    #[test]
    fn adaptive_widening() {
        let t = taxonomy();
        let c = small_corpus(&t);
        let fly = OnTheFly::new(&t);
        // snake: 2 hops from object (images 1, 2), 4 from vehicle/lamp.
        let q = parse_query(&t, "snake").unwrap();
        let params = AdaptiveParams { d_start: 1, d_step: 1, min_results: 2, d_ceiling: 10 };
        let (hits, d) = adaptive_search(&c, &q, &fly, params, SearchOptions::default()).unwrap();
        assert_eq!(d, 2);
        assert_eq!(hits, search(&c, &q.clone().with_d_max(2), &fly, SearchOptions::default()).unwrap());

        let q = parse_query(&t, "onslaught").unwrap();
        let params = AdaptiveParams { d_start: 0, d_step: 3, min_results: 5, d_ceiling: 10 };
        let (hits, d) = adaptive_search(&c, &q, &fly, params, SearchOptions::default()).unwrap();
        assert_eq!((hits.len(), d), (1, 10));

        let bad = AdaptiveParams { d_start: 5, d_step: 1, min_results: 1, d_ceiling: 4 };
        assert!(adaptive_search(&c, &q, &fly, bad, SearchOptions::default()).is_err());
    }

    #[test]
    fn affect_filtering() {
        let t = taxonomy();
        let c = small_corpus(&t);
        let fly = OnTheFly::new(&t);
        let results = search(&c, &parse_query(&t, "lamp").unwrap(), &fly, SearchOptions::default()).unwrap();
        let full = AffectRange { lo: 1.0, hi: 9.0 };
        let same =
            filter_affect(results.clone(), &c, &AffectFilter { valence: Some(full), ..Default::default() }).unwrap();
        assert_eq!(same, results);
        let low = filter_affect(
            results.clone(),
            &c,
            &AffectFilter { valence: Some(AffectRange { lo: 1.0, hi: 3.0 }), ..Default::default() },
        )
        .unwrap();
        assert_eq!(low.iter().map(|r| r.image_id.as_str()).collect::<Vec<_>>(), ["1"]);
        for bad in
            [AffectRange { lo: 4.0, hi: 3.0 }, AffectRange { lo: 0.0, hi: 3.0 }, AffectRange { lo: 2.0, hi: 9.5 }]
        {
            assert!(matches!(
                filter_affect(results.clone(), &c, &AffectFilter { arousal: Some(bad), ..Default::default() }),
                Err(RetrievalError::InvalidRange { dimension: AffectDimension::Arousal, .. })
            ));
        }
    }

    #[test]
    fn keyword_search() {
        let t = taxonomy();
        let c = small_corpus(&t);
        let ids = |v: Vec<ImageId>| v.into_iter().map(String::from).collect::<Vec<_>>();
        assert_eq!(ids(search_by_keyword(&c, "lamp")), ["2", "3"]);
        assert_eq!(ids(search_by_keyword(&c, "LAMP")), ["2", "3"]);
        assert!(search_by_keyword(&c, "unicorn").is_empty());
    }
}
