//! Independent oracles and seeded generators shared by integration tests.
//!
//! Nothing here calls the library's distance, scoring, averaging or kappa
//! code; only constructors and accessors are used.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use wntags_core::corpus::{AnnotatorId, Corpus, EmotionRating, ImageId, TagAssignment};
use wntags_core::taxonomy::{Pos, Relation, RelationType, Synset, SynsetId, Taxonomy};

pub const FIXTURE: &str = include_str!("../fixtures/taxonomy.tsv");

pub fn fixture() -> Taxonomy {
    Taxonomy::parse(FIXTURE).expect("fixture taxonomy")
}

/// A random taxonomy of `n` noun synsets. Roughly one synset in seven is left
/// unattached to its predecessors, so several components are common, and
/// about `n / 5` extra part-whole edges close cycles.
pub fn random_taxonomy(rng: &mut ChaCha8Rng, n: usize) -> Taxonomy {
    let ids: Vec<SynsetId> = (1..=n).map(|i| SynsetId::new(format!("n-{i}")).unwrap()).collect();
    let mut relations: Vec<Vec<Relation>> = vec![Vec::new(); n];
    let mut seen = BTreeSet::new();
    let mut link = |relations: &mut Vec<Vec<Relation>>, a: usize, b: usize, kind: RelationType| {
        if a == b || !seen.insert((a.min(b), a.max(b))) {
            return;
        }
        relations[a].push(Relation { kind, target: ids[b].clone() });
        relations[b].push(Relation { kind: kind.inverse(), target: ids[a].clone() });
    };
    for i in 1..n {
        if rng.random_bool(0.85) {
            let parent = rng.random_range(0..i);
            link(&mut relations, i, parent, RelationType::Hypernym);
        }
    }
    for _ in 0..n / 5 {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        link(&mut relations, a, b, RelationType::Holonym);
    }
    let synsets = ids
        .iter()
        .zip(relations)
        .enumerate()
        .map(|(i, (id, relations))| {
            let mut lemmas = vec![format!("w{i}")];
            if i % 4 == 0 {
                lemmas.push(format!("alt{i}"));
            }
            // A handful of polysemous lemmas.
            if i % 9 == 1 {
                lemmas.push("shared".to_owned());
            }
            Synset { id: id.clone(), pos: Pos::Noun, lemmas, relations, gloss: format!("node {i}") }
        })
        .collect();
    Taxonomy::from_synsets(synsets).expect("generated taxonomy is valid")
}

/// All-pairs hop counts by Floyd–Warshall over the raw relation lists.
pub struct Distances {
    pub ids: Vec<SynsetId>,
    pos: BTreeMap<SynsetId, usize>,
    d: Vec<Vec<Option<u32>>>,
}

impl Distances {
    pub fn of(t: &Taxonomy) -> Distances {
        let ids: Vec<SynsetId> = t.synsets().map(|s| s.id.clone()).collect();
        let pos: BTreeMap<SynsetId, usize> = ids.iter().cloned().enumerate().map(|(i, id)| (id, i)).collect();
        let n = ids.len();
        let mut d = vec![vec![None; n]; n];
        for (i, row) in d.iter_mut().enumerate() {
            row[i] = Some(0);
        }
        for s in t.synsets() {
            for r in &s.relations {
                let (a, b) = (pos[&s.id], pos[&r.target]);
                d[a][b] = Some(1);
                d[b][a] = Some(1);
            }
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if let (Some(x), Some(y)) = (d[i][k], d[k][j]) {
                        if d[i][j].is_none_or(|cur| x + y < cur) {
                            d[i][j] = Some(x + y);
                        }
                    }
                }
            }
        }
        Distances { ids, pos, d }
    }

    pub fn get(&self, a: &str, b: &str) -> Option<u32> {
        self.d[self.pos[a]][self.pos[b]]
    }

    pub fn within(&self, a: &str, b: &str, d_max: u32) -> Option<u32> {
        self.get(a, b).filter(|&d| d <= d_max)
    }
}

/// `1 / (1 + d)` within the cutoff, else 0.
pub fn oracle_sim(dist: &Distances, a: &str, b: &str, d_max: u32) -> f64 {
    match dist.within(a, b, d_max) {
        Some(d) => 1.0 / (1.0 + d as f64),
        None => 0.0,
    }
}

/// Per-synset mean weight from raw ratings, summed exactly.
pub fn oracle_means(assignments: &[TagAssignment]) -> BTreeMap<SynsetId, f64> {
    let mut groups: BTreeMap<SynsetId, Vec<f64>> = BTreeMap::new();
    for a in assignments {
        groups.entry(a.sense.synset.clone()).or_default().push(a.weight);
    }
    groups.into_iter().map(|(s, ws)| (s, rational_mean(&ws))).collect()
}

pub fn rational_mean(ws: &[f64]) -> f64 {
    let mut sum = BigRational::zero();
    for w in ws {
        sum += BigRational::from_float(*w).unwrap();
    }
    (sum / BigRational::from_integer(BigInt::from(ws.len()))).to_f64().unwrap()
}

#[derive(Debug, Clone)]
pub struct OracleHit {
    pub image: String,
    pub raw: f64,
    pub relevance: f64,
}

/// Brute-force goal function: for every (query synset, image synset) pair,
/// mean weight times relatedness; normalized by |Q| times total weight mass.
pub fn oracle_search(
    dist: &Distances,
    corpus: &Corpus,
    query_synsets: &BTreeSet<SynsetId>,
    d_max: u32,
) -> Vec<OracleHit> {
    let mut hits = Vec::new();
    for img in corpus.images().filter(|i| i.is_publishable()) {
        let means = oracle_means(img.assignments());
        let mut raw = 0.0;
        for q in query_synsets {
            for (s, w) in &means {
                raw += w * oracle_sim(dist, q.as_str(), s.as_str(), d_max);
            }
        }
        if raw > 0.0 {
            let mass: f64 = means.values().sum();
            let relevance = (raw / (query_synsets.len() as f64 * mass)).min(1.0);
            hits.push(OracleHit { image: img.id().to_string(), raw, relevance });
        }
    }
    hits.sort_by(|a, b| b.relevance.total_cmp(&a.relevance).then_with(|| a.image.cmp(&b.image)));
    hits
}

/// Fleiss' kappa straight from its definition, in exact rationals.
pub fn oracle_kappa(table: &[Vec<usize>]) -> f64 {
    let q = |n: usize| BigRational::from_integer(BigInt::from(n));
    let big_n = table.len();
    let n: usize = table[0].iter().sum();
    let k = table[0].len();
    let mut p_bar = BigRational::zero();
    for row in table {
        let agree: usize = row.iter().map(|&c| c * c.saturating_sub(1)).sum();
        p_bar += q(agree) / q(n * (n - 1));
    }
    p_bar /= q(big_n);
    let mut p_e = BigRational::zero();
    for j in 0..k {
        let col: usize = table.iter().map(|r| r[j]).sum();
        let p = q(col) / q(big_n * n);
        p_e += p.clone() * p;
    }
    if p_e == q(1) {
        return 1.0;
    }
    ((p_bar - p_e.clone()) / (q(1) - p_e)).to_f64().unwrap()
}

/// A seeded corpus over `t`. Most images are publishable; a few are drafts.
pub fn random_corpus(rng: &mut ChaCha8Rng, t: &Taxonomy, images: usize) -> Corpus {
    let ids = t.ids();
    let mut corpus = Corpus::new();
    for i in 0..images {
        let id = ImageId::new(format!("img{i:03}")).unwrap();
        let emotion =
            EmotionRating::new(rng.random_range(1.0..=9.0), rng.random_range(1.0..=9.0), rng.random_range(1.0..=9.0))
                .unwrap();
        corpus.add_image(id.clone(), format!("file:{i}"), format!("kw{}", i % 5), emotion).unwrap();
        let tags = rng.random_range(1..=ids.len().min(8));
        let chosen: Vec<&SynsetId> = index::sample(rng, ids.len(), tags).into_iter().map(|j| &ids[j]).collect();
        let raters = rng.random_range(1..=4);
        for r in 0..raters {
            let annotator = AnnotatorId::new(format!("a{r}")).unwrap();
            for s in &chosen {
                if r > 0 && rng.random_bool(0.3) {
                    continue;
                }
                let lemma = t.get(s.as_str()).unwrap().lemmas[0].clone();
                let weight = if rng.random_bool(0.1) { 0.0 } else { rng.random::<f64>() };
                corpus
                    .annotate(
                        t,
                        id.as_str(),
                        TagAssignment {
                            annotator: annotator.clone(),
                            sense: t.sense(s.as_str(), &lemma).unwrap(),
                            weight,
                        },
                    )
                    .unwrap();
            }
        }
    }
    corpus
}

/// Random query text of one to three lemmas drawn from the taxonomy.
pub fn random_query(rng: &mut ChaCha8Rng, t: &Taxonomy) -> String {
    let lemmas: Vec<&String> = t.synsets().flat_map(|s| s.lemmas.iter()).collect();
    let words = rng.random_range(1..=3);
    (0..words).map(|_| lemmas[rng.random_range(0..lemmas.len())].replace('_', " ")).collect::<Vec<_>>().join(" ")
}
