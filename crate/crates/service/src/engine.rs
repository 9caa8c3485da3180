//! The loaded engine: taxonomy, optional similarity table and the corpus
//! behind a single-writer lock.

use std::path::{Path, PathBuf};
use std::sync::RwLock;

use serde::Serialize;

use wntags_core::corpus::{
    append_record, AgreementReport, AnnotatorId, Corpus, CorpusError, EmotionRating, ImageId, ImageRecord,
    TagAssignment, TagCountStats, WeightedTag,
};
use wntags_core::numfmt::serialize_sig12;
use wntags_core::relatedness::{OnTheFly, SimilaritySource, SimilarityTable};
use wntags_core::retrieval::{self, AffectFilter, RankedResult, RetrievalError, SearchOptions};
use wntags_core::taxonomy::{Synset, Taxonomy};

use crate::config::EngineConfig;
use crate::error::ServiceError;

pub struct Engine {
    config: EngineConfig,
    taxonomy: Taxonomy,
    // Lock order: table before corpus.
    table: RwLock<Option<SimilarityTable>>,
    corpus: RwLock<Corpus>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SearchRequest {
    pub q: Option<String>,
    pub d_max: Option<u32>,
    pub limit: Option<usize>,
    pub filter: AffectFilter,
    pub keyword: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EmotionView {
    #[serde(serialize_with = "serialize_sig12")]
    pub val: f64,
    #[serde(serialize_with = "serialize_sig12")]
    pub ar: f64,
    #[serde(serialize_with = "serialize_sig12")]
    pub dom: f64,
}

impl From<&EmotionRating> for EmotionView {
    fn from(e: &EmotionRating) -> Self {
        EmotionView { val: e.valence(), ar: e.arousal(), dom: e.dominance() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AssignmentView {
    pub annotator: String,
    pub synset: String,
    pub lemma: String,
    #[serde(serialize_with = "serialize_sig12")]
    pub weight: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ImageView {
    pub id: String,
    pub source_ref: String,
    pub iaps_keyword: String,
    pub emotion: EmotionView,
    pub assignments: Vec<AssignmentView>,
    pub weighted_tags: Vec<WeightedTag>,
    pub annotators: usize,
    pub publishable: bool,
}

impl From<&ImageRecord> for ImageView {
    fn from(r: &ImageRecord) -> Self {
        ImageView {
            id: r.id().to_string(),
            source_ref: r.source_ref().to_owned(),
            iaps_keyword: r.iaps_keyword().to_owned(),
            emotion: r.emotion().into(),
            assignments: r
                .assignments()
                .iter()
                .map(|a| AssignmentView {
                    annotator: a.annotator.to_string(),
                    synset: a.sense.synset.to_string(),
                    lemma: a.sense.lemma.clone(),
                    weight: a.weight,
                })
                .collect(),
            weighted_tags: r.weighted_tags().to_vec(),
            annotators: r.annotators().len(),
            publishable: r.is_publishable(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RelationView {
    pub relation: &'static str,
    pub target: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SynsetView {
    pub id: String,
    pub pos: String,
    pub lemmas: Vec<String>,
    pub relations: Vec<RelationView>,
    pub gloss: String,
}

impl From<&Synset> for SynsetView {
    fn from(s: &Synset) -> Self {
        SynsetView {
            id: s.id.to_string(),
            pos: s.pos.letter().to_string(),
            lemmas: s.lemmas.clone(),
            relations: s
                .relations
                .iter()
                .map(|r| RelationView { relation: r.kind.code(), target: r.target.to_string() })
                .collect(),
            gloss: s.gloss.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LemmaCompletion {
    pub lemma: String,
    pub synsets: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TableSummary {
    pub d_max: u32,
    pub entries: usize,
    pub digest: String,
    pub saved_to: Option<PathBuf>,
}

impl Engine {
    /// Loads everything named in `config`. A table built for a different
    /// taxonomy is refused.
    pub fn open(config: EngineConfig) -> Result<Engine, ServiceError> {
        config.validate()?;
        let taxonomy = Taxonomy::load(&config.taxonomy_path)?;
        let table = match &config.table_path {
            Some(path) => {
                let table = SimilarityTable::load(path)?;
                table.attach(&taxonomy)?;
                Some(table)
            }
            None => None,
        };
        let corpus = Corpus::load(&config.corpus_path, &taxonomy)?;
        Ok(Engine::from_parts(config, taxonomy, table, corpus))
    }

    /// Assembles an engine from loaded parts; the table is not checked.
    pub fn from_parts(
        config: EngineConfig,
        taxonomy: Taxonomy,
        table: Option<SimilarityTable>,
        corpus: Corpus,
    ) -> Engine {
        Engine { config, taxonomy, table: RwLock::new(table), corpus: RwLock::new(corpus) }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    pub fn has_table(&self) -> bool {
        self.table.read().expect("table lock").is_some()
    }

    fn with_corpus<R>(
        &self,
        f: impl FnOnce(&dyn SimilaritySource, &Corpus) -> Result<R, ServiceError>,
    ) -> Result<R, ServiceError> {
        let table = self.table.read().expect("table lock");
        let corpus = self.corpus.read().expect("corpus lock");
        match table.as_ref() {
            Some(t) => f(&t.attach(&self.taxonomy)?, &corpus),
            None => f(&OnTheFly::new(&self.taxonomy), &corpus),
        }
    }

    pub fn lemmas(&self, prefix: &str, limit: usize) -> Vec<LemmaCompletion> {
        let prefix = prefix.trim().to_lowercase().replace(' ', "_");
        self.taxonomy
            .complete(&prefix, limit)
            .into_iter()
            .map(|(lemma, ids)| LemmaCompletion {
                lemma: lemma.to_owned(),
                synsets: ids.iter().map(|s| s.to_string()).collect(),
            })
            .collect()
    }

    pub fn synset(&self, id: &str) -> Result<SynsetView, ServiceError> {
        self.taxonomy
            .get(id)
            .map(SynsetView::from)
            .ok_or_else(|| wntags_core::TaxonomyError::UnknownSynset(id.to_owned()).into())
    }

    pub fn image(&self, id: &str) -> Result<ImageView, ServiceError> {
        let corpus = self.corpus.read().expect("corpus lock");
        corpus.get(id).map(ImageView::from).ok_or_else(|| CorpusError::UnknownImage(id.to_owned()).into())
    }

    /// Ranked search. Affect and keyword filters apply before `limit`. With
    /// no query text but a keyword, matching images come back in id order
    /// with zero scores.
    pub fn search(&self, req: &SearchRequest) -> Result<Vec<RankedResult>, ServiceError> {
        if req.limit == Some(0) {
            return Err(RetrievalError::InvalidParams("limit must be positive".into()).into());
        }
        req.filter.validate()?;
        let text = req.q.as_deref().map(str::trim).filter(|q| !q.is_empty());
        let keyword = req.keyword.as_deref().map(str::trim).filter(|k| !k.is_empty());
        let include_drafts = self.config.include_drafts;
        self.with_corpus(|source, corpus| {
            let mut results = match (text, keyword) {
                (None, None) => return Err(RetrievalError::EmptyQuery.into()),
                (None, Some(k)) => retrieval::search_by_keyword(corpus, k)
                    .into_iter()
                    .filter(|id| corpus.get(id.as_str()).is_some_and(|r| include_drafts || r.is_publishable()))
                    .map(|image_id| RankedResult {
                        image_id,
                        raw_score: 0.0,
                        relevance: 0.0,
                        contributions: Vec::new(),
                    })
                    .collect(),
                (Some(q), _) => {
                    let query = retrieval::parse_query(&self.taxonomy, q)?
                        .with_d_max(req.d_max.unwrap_or(self.config.default_d_max));
                    let options = SearchOptions { limit: None, include_drafts };
                    let mut hits = retrieval::search(corpus, &query, source, options)?;
                    if let Some(k) = keyword {
                        let k = k.to_lowercase();
                        hits.retain(|r| {
                            corpus.get(r.image_id.as_str()).is_some_and(|img| img.iaps_keyword().to_lowercase() == k)
                        });
                    }
                    hits
                }
            };
            if !req.filter.is_empty() {
                results = retrieval::filter_affect(results, corpus, &req.filter)?;
            }
            if let Some(limit) = req.limit {
                results.truncate(limit);
            }
            Ok(results)
        })
    }

    /// Adds an image and persists it before returning.
    pub fn add_image(
        &self,
        id: &str,
        source_ref: &str,
        iaps_keyword: &str,
        emotion: EmotionRating,
    ) -> Result<ImageView, ServiceError> {
        let id = ImageId::new(id)?;
        let mut corpus = self.corpus.write().expect("corpus lock");
        corpus.add_image(id.clone(), source_ref, iaps_keyword, emotion)?;
        let record = corpus.get(id.as_str()).expect("just added");
        if let Err(e) = append_record(&self.config.corpus_path, record) {
            corpus.remove(id.as_str());
            return Err(e.into());
        }
        Ok(ImageView::from(corpus.get(id.as_str()).expect("just added")))
    }

    /// Records one rating and persists the record before returning. A failed
    /// write leaves the in-memory corpus unchanged.
    pub fn annotate(
        &self,
        image_id: &str,
        annotator: &str,
        synset: &str,
        lemma: &str,
        weight: f64,
    ) -> Result<ImageView, ServiceError> {
        let annotator = AnnotatorId::new(annotator)?;
        let sense = self.taxonomy.sense(synset, &wntags_core::taxonomy::normalize_lemma(lemma))?;
        let mut corpus = self.corpus.write().expect("corpus lock");
        let previous = corpus.get(image_id).cloned().ok_or_else(|| CorpusError::UnknownImage(image_id.to_owned()))?;
        corpus.annotate(&self.taxonomy, image_id, TagAssignment { annotator, sense, weight })?;
        let record = corpus.get(image_id).expect("annotated");
        if let Err(e) = append_record(&self.config.corpus_path, record) {
            corpus.upsert(previous);
            return Err(e.into());
        }
        Ok(ImageView::from(corpus.get(image_id).expect("annotated")))
    }

    pub fn agreement(&self, image_id: &str) -> Result<AgreementReport, ServiceError> {
        Ok(self.corpus.read().expect("corpus lock").agreement_kappa(image_id)?)
    }

    pub fn tag_stats(&self) -> Result<TagCountStats, ServiceError> {
        Ok(self.corpus.read().expect("corpus lock").tag_count_stats()?)
    }

    /// Rebuilds the table at the current table's cutoff (or the default
    /// cutoff) and swaps it in; written to `table_path` when one is set.
    pub fn rebuild_sim(&self) -> Result<TableSummary, ServiceError> {
        let d_max = self.table.read().expect("table lock").as_ref().map_or(self.config.default_d_max, |t| t.d_max());
        let table = SimilarityTable::build(&self.taxonomy, d_max, &wntags_core::PathMetric)?;
        if let Some(path) = &self.config.table_path {
            save_atomically(&table, path)?;
        }
        let summary = TableSummary {
            d_max,
            entries: table.len(),
            digest: table.digest().to_owned(),
            saved_to: self.config.table_path.clone(),
        };
        *self.table.write().expect("table lock") = Some(table);
        Ok(summary)
    }

    /// Rewrites the corpus file with one line per image.
    pub fn compact(&self) -> Result<(), ServiceError> {
        let corpus = self.corpus.read().expect("corpus lock");
        corpus.save(&self.config.corpus_path)?;
        Ok(())
    }
}

fn save_atomically(table: &SimilarityTable, path: &Path) -> Result<(), ServiceError> {
    let tmp = path.with_extension("tmp");
    table.save(&tmp)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
