//! Lexical taxonomy: synsets, lemma index and node distance.
//!
//! The on-disk form is a tab-separated line format, one synset per line:
//!
//! ```text
//! <synset_id> TAB <pos n|v|a|r> TAB <lemma[|lemma...]> TAB <rel:target[;rel:target...]|-> TAB <gloss|->
//! ```
//!
//! `rel` is one of `hyp`, `hpo`, `hol`, `mer`. Lines starting with `#` are
//! comments. Every edge must be mirrored by its inverse on the target line.
//!
//! Distances are hop counts over relation edges taken in either direction.
//! Synonyms share a synset and therefore sit at distance 0 from each other.

use std::borrow::Borrow;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("syntax error on line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("edge {from} -> {to} points at an unknown synset")]
    DanglingEdge { from: SynsetId, to: SynsetId },
    #[error("edge {relation} {from} -> {to} has no inverse edge on {to}")]
    AsymmetricEdge { from: SynsetId, to: SynsetId, relation: RelationType },
    #[error("duplicate synset {0}")]
    DuplicateSynset(SynsetId),
    #[error("unknown synset {0}")]
    UnknownSynset(String),
    #[error("invalid synset id {0:?}")]
    InvalidSynsetId(String),
    #[error("lemma {lemma:?} is not a member of synset {synset}")]
    InvalidSense { lemma: String, synset: SynsetId },
    #[error("invalid synset {id}: {message}")]
    InvalidSynset { id: SynsetId, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Identifier of a synset: part-of-speech letter, dash, numeric offset.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SynsetId(String);

impl SynsetId {
    pub fn new(value: impl Into<String>) -> Result<Self, TaxonomyError> {
        let value = value.into();
        if is_valid_id(&value) {
            Ok(SynsetId(value))
        } else {
            Err(TaxonomyError::InvalidSynsetId(value))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn pos(&self) -> Pos {
        // Validated on construction.
        Pos::from_letter(self.0.as_bytes()[0] as char).expect("validated synset id")
    }
}

fn is_valid_id(value: &str) -> bool {
    let bytes = value.as_bytes();
    bytes.len() >= 3
        && matches!(bytes[0], b'n' | b'v' | b'a' | b'r')
        && bytes[1] == b'-'
        && bytes[2..].iter().all(u8::is_ascii_digit)
}

impl fmt::Display for SynsetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for SynsetId {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SynsetId::new(s)
    }
}

impl TryFrom<String> for SynsetId {
    type Error = TaxonomyError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        SynsetId::new(value)
    }
}

impl From<SynsetId> for String {
    fn from(id: SynsetId) -> String {
        id.0
    }
}

impl Borrow<str> for SynsetId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl AsRef<str> for SynsetId {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pos {
    Noun,
    Verb,
    Adjective,
    Adverb,
}

impl Pos {
    pub fn letter(self) -> char {
        match self {
            Pos::Noun => 'n',
            Pos::Verb => 'v',
            Pos::Adjective => 'a',
            Pos::Adverb => 'r',
        }
    }

    pub fn from_letter(letter: char) -> Option<Pos> {
        match letter {
            'n' => Some(Pos::Noun),
            'v' => Some(Pos::Verb),
            'a' => Some(Pos::Adjective),
            'r' => Some(Pos::Adverb),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelationType {
    Hypernym,
    Hyponym,
    Holonym,
    Meronym,
}

impl RelationType {
    pub const ALL: [RelationType; 4] =
        [RelationType::Hypernym, RelationType::Hyponym, RelationType::Holonym, RelationType::Meronym];

    /// Three-letter code used in the taxonomy file.
    pub fn code(self) -> &'static str {
        match self {
            RelationType::Hypernym => "hyp",
            RelationType::Hyponym => "hpo",
            RelationType::Holonym => "hol",
            RelationType::Meronym => "mer",
        }
    }

    pub fn from_code(code: &str) -> Option<RelationType> {
        RelationType::ALL.into_iter().find(|r| r.code() == code)
    }

    pub fn inverse(self) -> RelationType {
        match self {
            RelationType::Hypernym => RelationType::Hyponym,
            RelationType::Hyponym => RelationType::Hypernym,
            RelationType::Holonym => RelationType::Meronym,
            RelationType::Meronym => RelationType::Holonym,
        }
    }
}

impl fmt::Display for RelationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub kind: RelationType,
    pub target: SynsetId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Synset {
    pub id: SynsetId,
    pub pos: Pos,
    pub lemmas: Vec<String>,
    pub relations: Vec<Relation>,
    pub gloss: String,
}

/// One lemma's membership in one synset.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Sense {
    pub synset: SynsetId,
    pub lemma: String,
}

impl Sense {
    /// Two senses are synonyms iff they share a synset.
    pub fn is_synonym_of(&self, other: &Sense) -> bool {
        self.synset == other.synset
    }
}

/// Lowercases and joins whitespace-separated words with underscores.
pub fn normalize_lemma(text: &str) -> String {
    text.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join("_")
}

fn check_lemma(lemma: &str) -> Result<(), String> {
    if lemma.is_empty() {
        return Err("empty lemma".into());
    }
    if lemma.chars().any(|c| c.is_uppercase()) {
        return Err(format!("lemma {lemma:?} is not lowercase"));
    }
    if lemma.chars().any(|c| c.is_whitespace() || c == '|' || c == ';') {
        return Err(format!("lemma {lemma:?} contains a separator or whitespace"));
    }
    Ok(())
}

/// An immutable, validated synset graph.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    synsets: BTreeMap<SynsetId, Synset>,
    lemma_index: BTreeMap<String, BTreeSet<SynsetId>>,
    // Dense indices follow `synsets` key order.
    ids: Vec<SynsetId>,
    positions: HashMap<SynsetId, usize>,
    adjacency: Vec<Vec<usize>>,
    digest: String,
}

impl PartialEq for Taxonomy {
    fn eq(&self, other: &Self) -> bool {
        self.synsets == other.synsets
    }
}

impl Eq for Taxonomy {}

impl Default for Taxonomy {
    fn default() -> Self {
        Taxonomy::from_synsets(Vec::new()).expect("empty taxonomy is valid")
    }
}

impl Taxonomy {
    /// Validates and indexes a set of synsets.
    pub fn from_synsets(synsets: Vec<Synset>) -> Result<Self, TaxonomyError> {
        let mut by_id = BTreeMap::new();
        for synset in synsets {
            validate_synset(&synset)?;
            if by_id.contains_key(&synset.id) {
                return Err(TaxonomyError::DuplicateSynset(synset.id));
            }
            by_id.insert(synset.id.clone(), synset);
        }

        let mut edges = HashSet::new();
        for synset in by_id.values() {
            for rel in &synset.relations {
                if !by_id.contains_key(&rel.target) {
                    return Err(TaxonomyError::DanglingEdge { from: synset.id.clone(), to: rel.target.clone() });
                }
                edges.insert((&synset.id, rel.kind, &rel.target));
            }
        }
        for synset in by_id.values() {
            for rel in &synset.relations {
                if !edges.contains(&(&rel.target, rel.kind.inverse(), &synset.id)) {
                    return Err(TaxonomyError::AsymmetricEdge {
                        from: synset.id.clone(),
                        to: rel.target.clone(),
                        relation: rel.kind,
                    });
                }
            }
        }

        let ids: Vec<SynsetId> = by_id.keys().cloned().collect();
        let positions: HashMap<SynsetId, usize> = ids.iter().cloned().enumerate().map(|(i, id)| (id, i)).collect();
        let mut adjacency = vec![Vec::new(); ids.len()];
        for (i, synset) in by_id.values().enumerate() {
            for rel in &synset.relations {
                let j = positions[&rel.target];
                adjacency[i].push(j);
                adjacency[j].push(i);
            }
        }
        for row in &mut adjacency {
            row.sort_unstable();
            row.dedup();
        }

        let mut lemma_index: BTreeMap<String, BTreeSet<SynsetId>> = BTreeMap::new();
        for synset in by_id.values() {
            for lemma in &synset.lemmas {
                lemma_index.entry(lemma.clone()).or_default().insert(synset.id.clone());
            }
        }

        let mut taxonomy = Taxonomy { synsets: by_id, lemma_index, ids, positions, adjacency, digest: String::new() };
        taxonomy.digest = hex::encode(Sha256::digest(taxonomy.to_tsv().as_bytes()));
        Ok(taxonomy)
    }

    pub fn parse(text: &str) -> Result<Self, TaxonomyError> {
        let mut synsets = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            synsets.push(parse_line(line).map_err(|message| TaxonomyError::Syntax { line: n + 1, message })?);
        }
        Taxonomy::from_synsets(synsets)
    }

    pub fn read<R: Read>(mut reader: R) -> Result<Self, TaxonomyError> {
        let mut text = String::new();
        reader.read_to_string(&mut text)?;
        Taxonomy::parse(&text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TaxonomyError> {
        Taxonomy::parse(&fs::read_to_string(path)?)
    }

    /// Canonical file text: one line per synset in id order, no comments.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for synset in self.synsets.values() {
            let relations = if synset.relations.is_empty() {
                "-".to_owned()
            } else {
                synset.relations.iter().map(|r| format!("{}:{}", r.kind.code(), r.target)).collect::<Vec<_>>().join(";")
            };
            let gloss = if synset.gloss.is_empty() { "-" } else { &synset.gloss };
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                synset.id,
                synset.pos.letter(),
                synset.lemmas.join("|"),
                relations,
                gloss
            ));
        }
        out
    }

    pub fn write<W: Write>(&self, mut writer: W) -> io::Result<()> {
        writer.write_all(self.to_tsv().as_bytes())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> io::Result<()> {
        fs::write(path, self.to_tsv())
    }

    /// SHA-256 of the canonical file text, hex encoded.
    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn len(&self) -> usize {
        self.synsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.synsets.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn lemma_count(&self) -> usize {
        self.lemma_index.len()
    }

    pub fn get(&self, id: &str) -> Option<&Synset> {
        self.synsets.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.synsets.contains_key(id)
    }

    pub fn synsets(&self) -> impl Iterator<Item = &Synset> {
        self.synsets.values()
    }

    pub fn ids(&self) -> &[SynsetId] {
        &self.ids
    }

    pub fn lemma_index(&self) -> &BTreeMap<String, BTreeSet<SynsetId>> {
        &self.lemma_index
    }

    /// Synsets containing `lemma`; empty when the lemma is unknown.
    pub fn lookup_lemma(&self, lemma: &str) -> BTreeSet<SynsetId> {
        self.lemma_index.get(lemma).cloned().unwrap_or_default()
    }

    pub fn has_lemma(&self, lemma: &str) -> bool {
        self.lemma_index.contains_key(lemma)
    }

    /// Lemmas starting with `prefix`, in lexicographic order.
    pub fn complete(&self, prefix: &str, limit: usize) -> Vec<(&str, &BTreeSet<SynsetId>)> {
        self.lemma_index
            .range::<str, _>((std::ops::Bound::Included(prefix), std::ops::Bound::Unbounded))
            .take_while(|(lemma, _)| lemma.starts_with(prefix))
            .take(limit)
            .map(|(lemma, ids)| (lemma.as_str(), ids))
            .collect()
    }

    /// Builds a sense, checking that `lemma` belongs to `synset`.
    pub fn sense(&self, synset: &str, lemma: &str) -> Result<Sense, TaxonomyError> {
        let found = self.get(synset).ok_or_else(|| TaxonomyError::UnknownSynset(synset.to_owned()))?;
        if !found.lemmas.iter().any(|l| l == lemma) {
            return Err(TaxonomyError::InvalidSense { lemma: lemma.to_owned(), synset: found.id.clone() });
        }
        Ok(Sense { synset: found.id.clone(), lemma: lemma.to_owned() })
    }

    /// Shortest hop count between `a` and `b`, or `None` beyond `d_max`.
    pub fn node_distance(&self, a: &str, b: &str, d_max: u32) -> Result<Option<u32>, TaxonomyError> {
        let from = self.position(a)?;
        let to = self.position(b)?;
        if from == to {
            return Ok(Some(0));
        }
        let mut dist = vec![u32::MAX; self.ids.len()];
        let mut queue = VecDeque::from([from]);
        dist[from] = 0;
        while let Some(node) = queue.pop_front() {
            let next = dist[node] + 1;
            if next > d_max {
                break;
            }
            for &nb in &self.adjacency[node] {
                if dist[nb] == u32::MAX {
                    if nb == to {
                        return Ok(Some(next));
                    }
                    dist[nb] = next;
                    queue.push_back(nb);
                }
            }
        }
        Ok(None)
    }

    /// Every synset within `d` hops of `s`, `s` included.
    pub fn neighborhood(&self, s: &str, d: u32) -> Result<BTreeSet<SynsetId>, TaxonomyError> {
        let from = self.position(s)?;
        Ok(self.reachable_within(&[from], d).into_iter().map(|(i, _)| self.ids[i].clone()).collect())
    }

    /// Distances from `s` to every synset within `d_max` hops, in BFS order.
    pub fn distances_from(&self, s: &str, d_max: u32) -> Result<Vec<(&SynsetId, u32)>, TaxonomyError> {
        let from = self.position(s)?;
        Ok(self.reachable_within(&[from], d_max).into_iter().map(|(i, d)| (&self.ids[i], d)).collect())
    }

    /// Distance from the nearest of `sources` to every synset within `d_max`.
    pub fn distances_from_set<'a, I>(&self, sources: I, d_max: u32) -> Result<Vec<(&SynsetId, u32)>, TaxonomyError>
    where
        I: IntoIterator<Item = &'a SynsetId>,
    {
        let starts = sources.into_iter().map(|id| self.position(id.as_str())).collect::<Result<Vec<_>, _>>()?;
        Ok(self.reachable_within(&starts, d_max).into_iter().map(|(i, d)| (&self.ids[i], d)).collect())
    }

    pub(crate) fn position(&self, id: &str) -> Result<usize, TaxonomyError> {
        self.positions.get(id).copied().ok_or_else(|| TaxonomyError::UnknownSynset(id.to_owned()))
    }

    pub(crate) fn id_at(&self, index: usize) -> &SynsetId {
        &self.ids[index]
    }

    /// Multi-source BFS with cutoff. Returns (dense index, distance) pairs.
    pub(crate) fn reachable_within(&self, starts: &[usize], d_max: u32) -> Vec<(usize, u32)> {
        let mut dist = vec![u32::MAX; self.ids.len()];
        let mut queue = VecDeque::new();
        let mut out = Vec::new();
        for &s in starts {
            if dist[s] == u32::MAX {
                dist[s] = 0;
                queue.push_back(s);
                out.push((s, 0));
            }
        }
        while let Some(node) = queue.pop_front() {
            let next = dist[node] + 1;
            if next > d_max {
                break;
            }
            for &nb in &self.adjacency[node] {
                if dist[nb] == u32::MAX {
                    dist[nb] = next;
                    queue.push_back(nb);
                    out.push((nb, next));
                }
            }
        }
        out
    }
}

fn validate_synset(synset: &Synset) -> Result<(), TaxonomyError> {
    let invalid = |message: String| TaxonomyError::InvalidSynset { id: synset.id.clone(), message };
    if synset.id.pos() != synset.pos {
        return Err(invalid(format!("part of speech {:?} disagrees with id prefix", synset.pos)));
    }
    if synset.lemmas.is_empty() {
        return Err(invalid("no lemmas".into()));
    }
    let mut seen = HashSet::new();
    for lemma in &synset.lemmas {
        check_lemma(lemma).map_err(invalid)?;
        if !seen.insert(lemma.as_str()) {
            return Err(invalid(format!("duplicate lemma {lemma:?}")));
        }
    }
    let mut rels = HashSet::new();
    for rel in &synset.relations {
        if rel.target == synset.id {
            return Err(invalid("relation points at itself".into()));
        }
        if !rels.insert((rel.kind, &rel.target)) {
            return Err(invalid(format!("duplicate relation {}:{}", rel.kind, rel.target)));
        }
    }
    if synset.gloss.contains(['\t', '\n']) {
        return Err(invalid("gloss contains a tab or newline".into()));
    }
    Ok(())
}

fn parse_line(line: &str) -> Result<Synset, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 5 {
        return Err(format!("expected 5 tab-separated fields, found {}", fields.len()));
    }
    let id = SynsetId::new(fields[0]).map_err(|e| e.to_string())?;
    let pos = match fields[1].chars().collect::<Vec<_>>()[..] {
        [c] => Pos::from_letter(c),
        _ => None,
    }
    .ok_or_else(|| format!("unknown part of speech {:?}", fields[1]))?;
    if id.pos() != pos {
        return Err(format!("part of speech {} disagrees with id {id}", fields[1]));
    }

    let lemmas: Vec<String> = fields[2].split('|').map(str::to_owned).collect();
    let mut seen = HashSet::new();
    for lemma in &lemmas {
        check_lemma(lemma)?;
        if !seen.insert(lemma.as_str()) {
            return Err(format!("duplicate lemma {lemma:?}"));
        }
    }

    let mut relations = Vec::new();
    if fields[3] != "-" {
        for item in fields[3].split(';') {
            let (code, target) = item.split_once(':').ok_or_else(|| format!("malformed relation {item:?}"))?;
            let kind = RelationType::from_code(code).ok_or_else(|| format!("unknown relation type {code:?}"))?;
            let target = SynsetId::new(target).map_err(|e| e.to_string())?;
            if target == id {
                return Err(format!("relation {item} points at its own synset"));
            }
            relations.push(Relation { kind, target });
        }
    }

    let gloss = if fields[4] == "-" { String::new() } else { fields[4].to_owned() };
    Ok(Synset { id, pos, lemmas, relations, gloss })
}
