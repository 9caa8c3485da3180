//! Semantic annotation and retrieval of affect-annotated images.
//!
//! Images carry weighted senses from a lexical taxonomy together with a
//! valence/arousal/dominance rating. Queries are parsed into taxonomy senses
//! and every image is scored by summing, over all query/tag sense pairs, the
//! tag's mean weight times a node-distance relatedness value.
//!
//! Module map:
//!
//! - [`taxonomy`]: synset graph loading, lemma lookup, node distance.
//! - [`relatedness`]: the relatedness metric and the precomputed pair table.
//! - [`corpus`]: image records, weight averaging, inter-annotator agreement.
//! - [`retrieval`]: query parsing, scoring, ranked and adaptive search.
//! - [`evaluation`]: precision/TP metrics, batch runs, synthetic corpora.

pub mod corpus;
pub mod evaluation;
pub mod numfmt;
pub mod relatedness;
pub mod retrieval;
pub mod taxonomy;

pub use corpus::{
    AgreementReport, AnnotatorId, Corpus, CorpusError, EmotionRating, ImageId, ImageRecord, TagAssignment,
    TagCountStats, WeightedTag,
};
pub use relatedness::{
    AttachedTable, OnTheFly, PathMetric, Relatedness, RelatednessError, RelatednessMetric, SimilaritySource,
    SimilarityTable,
};
pub use retrieval::{
    parse_query, search, AdaptiveParams, AffectFilter, AffectRange, Query, RankedResult, RetrievalError, SearchOptions,
};
pub use taxonomy::{Pos, RelationType, Sense, Synset, SynsetId, Taxonomy, TaxonomyError};
