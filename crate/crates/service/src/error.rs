use std::io;

use serde_json::{json, Value};
use thiserror::Error;

use wntags_core::corpus::CorpusError;
use wntags_core::evaluation::EvalError;
use wntags_core::relatedness::RelatednessError;
use wntags_core::retrieval::RetrievalError;
use wntags_core::taxonomy::TaxonomyError;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0}")]
    BadRequest(String),
    #[error("missing X-Annotator-Id header")]
    MissingAnnotator,
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Relatedness(#[from] RelatednessError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl ServiceError {
    /// HTTP status and machine-readable code.
    pub fn status_code(&self) -> (u16, &'static str) {
        use CorpusError as C;
        use RetrievalError as R;
        use TaxonomyError as T;
        match self {
            ServiceError::BadRequest(_) => (400, "bad_request"),
            ServiceError::MissingAnnotator => (400, "missing_annotator"),
            ServiceError::Config(_) => (500, "config_error"),
            ServiceError::Taxonomy(e) => match e {
                T::UnknownSynset(_) => (404, "unknown_synset"),
                T::InvalidSynsetId(_) => (400, "invalid_id"),
                T::InvalidSense { .. } => (422, "invalid_sense"),
                T::Io(_) => (500, "io_error"),
                _ => (500, "taxonomy_error"),
            },
            ServiceError::Relatedness(e) => match e {
                RelatednessError::StaleTable { .. } => (503, "stale_table"),
                RelatednessError::Taxonomy(t) => ServiceError::taxonomy_code(t),
                RelatednessError::Io(_) => (500, "io_error"),
                _ => (500, "table_error"),
            },
            ServiceError::Corpus(e) => match e {
                C::DuplicateImage(_) => (409, "duplicate_image"),
                C::UnknownImage(_) => (404, "unknown_image"),
                C::UnknownSynset(_) => (404, "unknown_synset"),
                C::InvalidSense { .. } => (422, "invalid_sense"),
                C::WeightOutOfRange(_) => (422, "weight_out_of_range"),
                C::EmotionOutOfRange { .. } => (422, "emotion_out_of_range"),
                C::InsufficientRaters { .. } => (422, "insufficient_raters"),
                C::EmptyCorpus => (422, "empty_corpus"),
                C::InvalidId(_) => (400, "invalid_id"),
                C::Parse { .. } => (400, "bad_request"),
                C::Io(_) => (500, "io_error"),
            },
            ServiceError::Retrieval(e) => match e {
                R::EmptyQuery => (400, "empty_query"),
                R::NoSenseFound { .. } => (422, "no_sense_found"),
                R::InvalidRange { .. } => (400, "invalid_range"),
                R::InvalidParams(_) => (400, "invalid_params"),
                R::Relatedness(RelatednessError::StaleTable { .. }) => (503, "stale_table"),
                R::Relatedness(RelatednessError::Taxonomy(t)) => ServiceError::taxonomy_code(t),
                R::Relatedness(_) => (500, "table_error"),
            },
            ServiceError::Eval(_) => (500, "eval_error"),
            ServiceError::Io(_) => (500, "io_error"),
        }
    }

    fn taxonomy_code(e: &TaxonomyError) -> (u16, &'static str) {
        match e {
            TaxonomyError::UnknownSynset(_) => (404, "unknown_synset"),
            _ => (500, "taxonomy_error"),
        }
    }

    /// `{"error": {"code", "message", ...}}`; unmatched query tokens are
    /// included for `no_sense_found`.
    pub fn body(&self) -> Value {
        let (_, code) = self.status_code();
        let mut error = json!({ "code": code, "message": self.to_string() });
        if let ServiceError::Retrieval(RetrievalError::NoSenseFound { unmatched }) = self {
            error["unmatched"] = json!(unmatched);
        }
        json!({ "error": error })
    }
}
