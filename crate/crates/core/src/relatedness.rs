//! Node-distance relatedness and the precomputed pair table.
//!
//! Relatedness is a function of node distance only: `1 / (1 + d)` for the
//! default [`PathMetric`], zero past the distance cutoff. The table stores
//! every nonzero pair once, keyed by the lexicographically ordered id pair.
//!
//! Table file layout:
//!
//! ```text
//! #wntags-sim v1 d_max=<int> digest=<hex>
//! <id1> TAB <id2> TAB <value>
//! ```
//!
//! with `id1 < id2`, rows sorted by `(id1, id2)`, values written with 12
//! significant digits.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numfmt::format_sig12;
use crate::taxonomy::{SynsetId, Taxonomy, TaxonomyError};

const TABLE_MAGIC: &str = "#wntags-sim v1";

#[derive(Debug, Error)]
pub enum RelatednessError {
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error("similarity table was built for taxonomy {table}, active taxonomy is {taxonomy}")]
    StaleTable { table: String, taxonomy: String },
    #[error("table format error on line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("table build failed: {0}")]
    BuildFailure(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A relatedness value in `[0, 1]`; 1 only for identical synsets.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Relatedness(f64);

impl Relatedness {
    pub const ZERO: Relatedness = Relatedness(0.0);
    pub const ONE: Relatedness = Relatedness(1.0);

    pub fn new(value: f64) -> Option<Relatedness> {
        (0.0..=1.0).contains(&value).then_some(Relatedness(value))
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl fmt::Display for Relatedness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_sig12(self.0))
    }
}

/// Maps a node distance to a relatedness value.
///
/// Implementations must return 1 at distance 0 and strictly decrease with
/// distance; table thresholding relies on it.
pub trait RelatednessMetric: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;
    fn relatedness(&self, distance: u32) -> f64;
}

/// `1 / (1 + d)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct PathMetric;

impl RelatednessMetric for PathMetric {
    fn name(&self) -> &'static str {
        "path"
    }

    fn relatedness(&self, distance: u32) -> f64 {
        1.0 / (1.0 + distance as f64)
    }
}

/// Relatedness of two synsets under the path metric.
pub fn sim(t: &Taxonomy, a: &str, b: &str, d_max: u32) -> Result<Relatedness, RelatednessError> {
    sim_with(&PathMetric, t, a, b, d_max)
}

pub fn sim_with(
    metric: &dyn RelatednessMetric,
    t: &Taxonomy,
    a: &str,
    b: &str,
    d_max: u32,
) -> Result<Relatedness, RelatednessError> {
    Ok(match t.node_distance(a, b, d_max)? {
        Some(d) => Relatedness(metric.relatedness(d)),
        None => Relatedness::ZERO,
    })
}

/// Where retrieval gets its relatedness values from.
pub trait SimilaritySource: Sync {
    fn taxonomy(&self) -> &Taxonomy;

    /// Every synset with nonzero relatedness to `query` under `d_max`,
    /// `query` itself included at 1.
    fn related(&self, query: &str, d_max: u32) -> Result<HashMap<SynsetId, Relatedness>, RelatednessError>;

    fn similarity(&self, a: &str, b: &str, d_max: u32) -> Result<Relatedness, RelatednessError>;
}

/// Computes relatedness by BFS on every request.
#[derive(Debug, Clone, Copy)]
pub struct OnTheFly<'a> {
    taxonomy: &'a Taxonomy,
    metric: &'a dyn RelatednessMetric,
}

impl<'a> OnTheFly<'a> {
    pub fn new(taxonomy: &'a Taxonomy) -> Self {
        OnTheFly { taxonomy, metric: &PathMetric }
    }

    pub fn with_metric(taxonomy: &'a Taxonomy, metric: &'a dyn RelatednessMetric) -> Self {
        OnTheFly { taxonomy, metric }
    }
}

fn related_by_bfs(
    t: &Taxonomy,
    metric: &dyn RelatednessMetric,
    query: &str,
    d_max: u32,
) -> Result<HashMap<SynsetId, Relatedness>, RelatednessError> {
    Ok(t.distances_from(query, d_max)?
        .into_iter()
        .map(|(id, d)| (id.clone(), Relatedness(metric.relatedness(d))))
        .collect())
}

impl SimilaritySource for OnTheFly<'_> {
    fn taxonomy(&self) -> &Taxonomy {
        self.taxonomy
    }

    fn related(&self, query: &str, d_max: u32) -> Result<HashMap<SynsetId, Relatedness>, RelatednessError> {
        related_by_bfs(self.taxonomy, self.metric, query, d_max)
    }

    fn similarity(&self, a: &str, b: &str, d_max: u32) -> Result<Relatedness, RelatednessError> {
        sim_with(self.metric, self.taxonomy, a, b, d_max)
    }
}

/// Sparse all-pairs relatedness, built once per taxonomy and cutoff.
#[derive(Debug, Clone)]
pub struct SimilarityTable {
    d_max: u32,
    digest: String,
    entries: BTreeMap<(SynsetId, SynsetId), Relatedness>,
    // Both directions, for row scans and O(1) lookups.
    rows: HashMap<SynsetId, HashMap<SynsetId, Relatedness>>,
}

impl PartialEq for SimilarityTable {
    fn eq(&self, other: &Self) -> bool {
        self.d_max == other.d_max && self.digest == other.digest && self.entries == other.entries
    }
}

/// Builds the table with the path metric.
pub fn build_table(t: &Taxonomy, d_max: u32) -> Result<SimilarityTable, RelatednessError> {
    SimilarityTable::build(t, d_max, &PathMetric)
}

impl SimilarityTable {
    pub fn build(t: &Taxonomy, d_max: u32, metric: &dyn RelatednessMetric) -> Result<Self, RelatednessError> {
        let per_source: Vec<Vec<(usize, usize, u32)>> = (0..t.len())
            .into_par_iter()
            .map(|i| {
                t.reachable_within(&[i], d_max)
                    .into_iter()
                    // Dense index order is id order, so j > i means id_j > id_i.
                    .filter(|&(j, _)| j > i)
                    .map(|(j, d)| (i, j, d))
                    .collect()
            })
            .collect();

        let mut entries = BTreeMap::new();
        for (i, j, d) in per_source.into_iter().flatten() {
            let value = metric.relatedness(d);
            if !(value > 0.0 && value <= 1.0) {
                return Err(RelatednessError::BuildFailure(format!(
                    "metric {} produced {value} at distance {d}",
                    metric.name()
                )));
            }
            entries.insert((t.id_at(i).clone(), t.id_at(j).clone()), Relatedness(value));
        }
        Ok(SimilarityTable::from_entries(d_max, t.digest().to_owned(), entries))
    }

    fn from_entries(d_max: u32, digest: String, entries: BTreeMap<(SynsetId, SynsetId), Relatedness>) -> Self {
        let mut rows: HashMap<SynsetId, HashMap<SynsetId, Relatedness>> = HashMap::new();
        for ((a, b), r) in &entries {
            rows.entry(a.clone()).or_default().insert(b.clone(), *r);
            rows.entry(b.clone()).or_default().insert(a.clone(), *r);
        }
        SimilarityTable { d_max, digest, entries, rows }
    }

    pub fn d_max(&self) -> u32 {
        self.d_max
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&SynsetId, &SynsetId, Relatedness)> {
        self.entries.iter().map(|((a, b), r)| (a, b, *r))
    }

    /// Stored value for the pair, 1 for identical ids, 0 when absent.
    /// Does not check the taxonomy digest; see [`SimilarityTable::attach`].
    pub fn lookup(&self, a: &str, b: &str) -> Relatedness {
        if a == b {
            return Relatedness::ONE;
        }
        self.rows.get(a).and_then(|row| row.get(b)).copied().unwrap_or(Relatedness::ZERO)
    }

    /// Binds the table to `taxonomy`, refusing a table built from another one.
    pub fn attach<'a>(&'a self, taxonomy: &'a Taxonomy) -> Result<AttachedTable<'a>, RelatednessError> {
        self.attach_with(taxonomy, &PathMetric)
    }

    pub fn attach_with<'a>(
        &'a self,
        taxonomy: &'a Taxonomy,
        metric: &'a dyn RelatednessMetric,
    ) -> Result<AttachedTable<'a>, RelatednessError> {
        if self.digest != taxonomy.digest() {
            return Err(RelatednessError::StaleTable {
                table: self.digest.clone(),
                taxonomy: taxonomy.digest().to_owned(),
            });
        }
        Ok(AttachedTable { table: self, taxonomy, metric })
    }

    pub fn write<W: Write>(&self, writer: W) -> io::Result<()> {
        let mut out = BufWriter::new(writer);
        writeln!(out, "{TABLE_MAGIC} d_max={} digest={}", self.d_max, self.digest)?;
        for ((a, b), r) in &self.entries {
            writeln!(out, "{a}\t{b}\t{}", format_sig12(r.0))?;
        }
        out.flush()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RelatednessError> {
        let file = File::create(path)?;
        self.write(&file)?;
        file.sync_all()?;
        Ok(())
    }

    /// Reads a table written with the path metric.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, RelatednessError> {
        SimilarityTable::read(File::open(path)?, &PathMetric)
    }

    /// Parses a table file. Each value must be the 12-digit rendering of
    /// `metric` at some distance in `1..=d_max`; it is restored to that exact
    /// value so loaded tables agree bit for bit with direct computation.
    pub fn read<R: Read>(reader: R, metric: &dyn RelatednessMetric) -> Result<Self, RelatednessError> {
        let format_err = |line: usize, message: String| RelatednessError::Format { line, message };
        let mut lines = BufReader::new(reader).lines();

        let header = lines.next().transpose()?.ok_or_else(|| format_err(1, "missing header".into()))?;
        let (d_max, digest) = parse_header(&header).ok_or_else(|| format_err(1, format!("bad header {header:?}")))?;

        let mut canonical: HashMap<String, f64> = HashMap::new();
        let mut entries = BTreeMap::new();
        let mut previous: Option<(SynsetId, SynsetId)> = None;
        for (n, line) in lines.enumerate() {
            let line_no = n + 2;
            let line = line?;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(format_err(line_no, format!("expected 3 fields, found {}", fields.len())));
            }
            let a = SynsetId::new(fields[0]).map_err(|e| format_err(line_no, e.to_string()))?;
            let b = SynsetId::new(fields[1]).map_err(|e| format_err(line_no, e.to_string()))?;
            if a >= b {
                return Err(format_err(line_no, format!("pair {a} {b} is not in canonical order")));
            }
            let key = (a, b);
            if previous.as_ref().is_some_and(|p| *p >= key) {
                return Err(format_err(line_no, "rows are not strictly sorted".into()));
            }
            let value = match canonical.get(fields[2]) {
                Some(v) => *v,
                None => {
                    let v = canonical_value(metric, d_max, fields[2]).ok_or_else(|| {
                        format_err(line_no, format!("value {:?} is not a metric value within d_max", fields[2]))
                    })?;
                    canonical.insert(fields[2].to_owned(), v);
                    v
                }
            };
            previous = Some(key.clone());
            entries.insert(key, Relatedness(value));
        }
        Ok(SimilarityTable::from_entries(d_max, digest, entries))
    }
}

fn parse_header(header: &str) -> Option<(u32, String)> {
    let rest = header.strip_prefix(TABLE_MAGIC)?.strip_prefix(' ')?;
    let (d_part, digest_part) = rest.split_once(' ')?;
    let d_max = d_part.strip_prefix("d_max=")?.parse().ok()?;
    let digest = digest_part.strip_prefix("digest=")?;
    if digest.is_empty() || !digest.bytes().all(|b| b.is_ascii_hexdigit()) {
        return None;
    }
    Some((d_max, digest.to_owned()))
}

/// Finds the distance whose metric value renders as `text` and returns the
/// exact value. Binary search over the strictly decreasing metric.
fn canonical_value(metric: &dyn RelatednessMetric, d_max: u32, text: &str) -> Option<f64> {
    let parsed: f64 = text.parse().ok()?;
    if d_max == 0 {
        return None;
    }
    let (mut lo, mut hi) = (1u32, d_max);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if metric.relatedness(mid) > parsed {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    // `lo` is the first distance whose value is <= parsed; the rendering may
    // round either way, so check both neighbours.
    [lo.saturating_sub(1).max(1), lo].into_iter().map(|d| metric.relatedness(d)).find(|v| format_sig12(*v) == text)
}

/// A table checked against the active taxonomy.
#[derive(Debug, Clone, Copy)]
pub struct AttachedTable<'a> {
    table: &'a SimilarityTable,
    taxonomy: &'a Taxonomy,
    metric: &'a dyn RelatednessMetric,
}

impl AttachedTable<'_> {
    pub fn table(&self) -> &SimilarityTable {
        self.table
    }

    pub fn lookup(&self, a: &str, b: &str) -> Relatedness {
        self.table.lookup(a, b)
    }
}

/// Digest-checked single lookup.
pub fn table_lookup(
    table: &SimilarityTable,
    taxonomy: &Taxonomy,
    a: &str,
    b: &str,
) -> Result<Relatedness, RelatednessError> {
    Ok(table.attach(taxonomy)?.lookup(a, b))
}

impl SimilaritySource for AttachedTable<'_> {
    fn taxonomy(&self) -> &Taxonomy {
        self.taxonomy
    }

    fn related(&self, query: &str, d_max: u32) -> Result<HashMap<SynsetId, Relatedness>, RelatednessError> {
        if d_max > self.table.d_max {
            return related_by_bfs(self.taxonomy, self.metric, query, d_max);
        }
        let id = self
            .taxonomy
            .get(query)
            .map(|s| s.id.clone())
            .ok_or_else(|| TaxonomyError::UnknownSynset(query.to_owned()))?;
        let floor = self.metric.relatedness(d_max);
        let mut out: HashMap<SynsetId, Relatedness> = self
            .table
            .rows
            .get(query)
            .map(|row| row.iter().filter(|(_, r)| r.0 >= floor).map(|(k, r)| (k.clone(), *r)).collect())
            .unwrap_or_default();
        out.insert(id, Relatedness::ONE);
        Ok(out)
    }

    fn similarity(&self, a: &str, b: &str, d_max: u32) -> Result<Relatedness, RelatednessError> {
        if d_max > self.table.d_max {
            return sim_with(self.metric, self.taxonomy, a, b, d_max);
        }
        for id in [a, b] {
            if !self.taxonomy.contains(id) {
                return Err(TaxonomyError::UnknownSynset(id.to_owned()).into());
            }
        }
        let r = self.lookup(a, b);
        Ok(if r.0 >= self.metric.relatedness(d_max) { r } else { Relatedness::ZERO })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = include_str!("../tests/fixtures/taxonomy.tsv");

    fn fixture() -> Taxonomy {
        Taxonomy::parse(FIXTURE).unwrap()
    }

    #[test]
    fn path_metric_values() {
        let t = fixture();
        assert_eq!(sim(&t, "n-3", "n-3", 0).unwrap().get(), 1.0);
        assert_eq!(sim(&t, "n-3", "n-4", 10).unwrap().get(), 1.0 / 3.0);
        assert_eq!(sim(&t, "n-3", "n-20", 4).unwrap().get(), 0.0);
        assert_eq!(sim(&t, "n-3", "n-20", 5).unwrap().get(), 1.0 / 6.0);
        assert!(matches!(sim(&t, "n-3", "n-404", 5), Err(RelatednessError::Taxonomy(TaxonomyError::UnknownSynset(_)))));
    }

    #[test]
    fn degenerate_tables() {
        let single = Taxonomy::parse("n-1\tn\tdog\t-\t-\n").unwrap();
        assert!(build_table(&single, 10).unwrap().is_empty());
        assert!(build_table(&fixture(), 0).unwrap().is_empty());
    }

    #[test]
    fn table_matches_direct_sim() {
        let t = fixture();
        let table = build_table(&t, 10).unwrap();
        let attached = table.attach(&t).unwrap();
        let n = t.len();
        assert!(table.len() <= n * (n - 1) / 2);
        for a in t.ids() {
            for b in t.ids() {
                let direct = sim(&t, a.as_str(), b.as_str(), 10).unwrap();
                assert_eq!(attached.lookup(a.as_str(), b.as_str()), direct, "{a} {b}");
                for d in [0, 1, 2, 3, 10, 12] {
                    assert_eq!(
                        attached.similarity(a.as_str(), b.as_str(), d).unwrap(),
                        sim(&t, a.as_str(), b.as_str(), d).unwrap()
                    );
                }
            }
        }
        assert_eq!(table.lookup("n-3", "n-11"), Relatedness::ZERO);
    }

    #[test]
    fn rows_agree_with_bfs_at_every_cutoff() {
        let t = fixture();
        let table = build_table(&t, 4).unwrap();
        let attached = table.attach(&t).unwrap();
        let fly = OnTheFly::new(&t);
        for id in t.ids() {
            for d in 0..=6 {
                assert_eq!(attached.related(id.as_str(), d).unwrap(), fly.related(id.as_str(), d).unwrap());
            }
        }
    }

    #[test]
    fn file_round_trip() {
        let t = fixture();
        let table = build_table(&t, 10).unwrap();
        let mut buf = Vec::new();
        table.write(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(&format!("#wntags-sim v1 d_max=10 digest={}\n", t.digest())));
        assert!(text.contains("n-3\tn-4\t0.333333333333\n"));
        let back = SimilarityTable::read(&buf[..], &PathMetric).unwrap();
        assert_eq!(back, table);
        for (a, b, r) in table.entries() {
            assert_eq!(back.lookup(a.as_str(), b.as_str()).get().to_bits(), r.get().to_bits());
        }
    }

    #[test]
    fn stale_table_rejected() {
        let t = fixture();
        let table = build_table(&t, 3).unwrap();
        let edited = Taxonomy::parse(&FIXTURE.replace("n-9\tn\tlamp", "n-9\tn\tlamp|light")).unwrap();
        assert!(matches!(table.attach(&edited), Err(RelatednessError::StaleTable { .. })));
        assert!(matches!(table_lookup(&table, &edited, "n-3", "n-4"), Err(RelatednessError::StaleTable { .. })));
        assert_eq!(table_lookup(&table, &t, "n-3", "n-4").unwrap().get(), 1.0 / 3.0);
    }

    #[test]
    fn malformed_tables() {
        let t = fixture();
        let mut buf = Vec::new();
        build_table(&t, 10).unwrap().write(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();

        let truncated = &text[..text.len() - 5];
        assert!(matches!(
            SimilarityTable::read(truncated.as_bytes(), &PathMetric),
            Err(RelatednessError::Format { .. })
        ));
        assert!(matches!(SimilarityTable::read(&b""[..], &PathMetric), Err(RelatednessError::Format { line: 1, .. })));
        let header = text.lines().next().unwrap();
        for body in [
            "n-4\tn-3\t0.333333333333",
            "n-3\tn-4\t0.3",
            "n-3\tn-4",
            "n-3\tn-4\t0.333333333333\nn-3\tn-4\t0.333333333333",
        ] {
            let bad = format!("{header}\n{body}\n");
            assert!(
                matches!(SimilarityTable::read(bad.as_bytes(), &PathMetric), Err(RelatednessError::Format { .. })),
                "{body:?} accepted"
            );
        }
        // 1/12 is distance 11, beyond d_max=10.
        let beyond = format!("{header}\nn-3\tn-4\t{}\n", format_sig12(1.0 / 12.0));
        assert!(SimilarityTable::read(beyond.as_bytes(), &PathMetric).is_err());
    }

    #[test]
    fn canonical_values_cover_long_distances() {
        for d in [1u32, 2, 9, 99, 12345, 999_999] {
            let v = PathMetric.relatedness(d);
            assert_eq!(canonical_value(&PathMetric, 1_000_000, &format_sig12(v)), Some(v));
        }
    }
}
