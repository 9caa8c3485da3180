#![allow(dead_code)]

use std::path::PathBuf;

use tempfile::TempDir;
use wntags_core::corpus::{AnnotatorId, Corpus, EmotionRating, ImageId, TagAssignment};
use wntags_core::taxonomy::Taxonomy;

pub const FIXTURE: &str = include_str!("../../../core/tests/fixtures/taxonomy.tsv");

pub struct Workspace {
    pub dir: TempDir,
    pub taxonomy: PathBuf,
    pub corpus: PathBuf,
}

/// Id, keyword, emotion and (synset, lemma, ann1 weight, ann2 weight) per tag;
/// a negative weight means the annotator skipped the tag.
type ImageRow = (&'static str, &'static str, (f64, f64, f64), &'static [(&'static str, &'static str, f64, f64)]);

/// Five images over the fixture taxonomy, each with three senses from two
/// annotators, plus one draft image with a single rater.
pub fn sample_corpus(t: &Taxonomy) -> Corpus {
    let rows: [ImageRow; 6] = [
        (
            "1050",
            "snake",
            (3.46, 6.87, 3.0),
            &[("n-6", "snake", 1.0, 0.8), ("n-1", "animal", 0.5, 0.5), ("n-9", "lamp", 0.0, 0.2)],
        ),
        (
            "1300",
            "pitbull",
            (3.55, 6.79, 3.2),
            &[("n-3", "dog", 0.9, 0.7), ("n-10", "attack_dog", 0.6, 0.8), ("n-2", "object", 0.1, 0.1)],
        ),
        (
            "1710",
            "puppies",
            (8.34, 5.41, 7.0),
            &[("n-5", "poodle", 1.0, 1.0), ("n-3", "dog", 0.5, 0.7), ("n-4", "cat", 0.2, 0.2)],
        ),
        (
            "7175",
            "lamp",
            (4.87, 1.72, 6.0),
            &[("n-9", "lamp", 1.0, 1.0), ("n-2", "object", 0.4, 0.6), ("n-7", "vehicle", 0.1, 0.1)],
        ),
        (
            "9000",
            "car",
            (2.55, 4.06, 4.5),
            &[("n-8", "car", 0.8, 1.0), ("n-20", "wheel", 0.5, 0.3), ("n-11", "attack", 0.3, 0.5)],
        ),
        ("9999", "dog", (5.0, 5.0, 5.0), &[("n-3", "dog", 1.0, -1.0)]),
    ];
    let mut c = Corpus::new();
    for (id, keyword, (v, a, d), tags) in rows {
        c.add_image(ImageId::new(id).unwrap(), format!("iaps/{id}.jpg"), keyword, EmotionRating::new(v, a, d).unwrap())
            .unwrap();
        for (synset, lemma, w1, w2) in tags {
            for (who, w) in [("ann1", *w1), ("ann2", *w2)] {
                if w < 0.0 {
                    continue;
                }
                let sense = t.sense(synset, lemma).unwrap();
                c.annotate(t, id, TagAssignment { annotator: AnnotatorId::new(who).unwrap(), sense, weight: w })
                    .unwrap();
            }
        }
    }
    c
}

pub fn workspace() -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let taxonomy = dir.path().join("taxonomy.tsv");
    let corpus = dir.path().join("corpus.jsonl");
    std::fs::write(&taxonomy, FIXTURE).unwrap();
    let t = Taxonomy::parse(FIXTURE).unwrap();
    sample_corpus(&t).save(&corpus).unwrap();
    Workspace { dir, taxonomy, corpus }
}
