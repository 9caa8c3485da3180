use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use wntags::{Engine, EngineConfig, ServiceError};
use wntags_core::corpus::{append_record, parse_records, AnnotatorId, Corpus, TagAssignment};
use wntags_core::evaluation::{
    generate_synthetic, read_queries, run_batch, select_query_terms, write_curves, write_queries, EvalParams,
    EvalQuery, Judgments, SyntheticParams,
};
use wntags_core::numfmt::format_sig12;
use wntags_core::relatedness::{build_table, OnTheFly, SimilaritySource, SimilarityTable};
use wntags_core::retrieval::{self, AdaptiveParams, RankedResult, SearchOptions};
use wntags_core::taxonomy::{normalize_lemma, Taxonomy};

#[derive(Parser)]
#[command(name = "wntags", version, about = "Weighted-sense image annotation and retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a taxonomy file and print its size and digest.
    LoadTaxonomy {
        path: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Precompute the pairwise relatedness table.
    BuildSim {
        #[arg(long)]
        taxonomy: PathBuf,
        #[arg(long, default_value_t = 10)]
        d_max: u32,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Add records from a JSON-lines file to the corpus.
    Import {
        #[command(flatten)]
        data: DataArgs,
        records: PathBuf,
        /// Overwrite images that already exist instead of failing.
        #[arg(long)]
        replace: bool,
        #[arg(long)]
        json: bool,
    },
    /// Record one annotator's weight for one sense of an image.
    Annotate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        image: String,
        #[arg(long)]
        annotator: String,
        #[arg(long)]
        synset: String,
        #[arg(long)]
        lemma: String,
        #[arg(long)]
        weight: f64,
        #[arg(long)]
        json: bool,
    },
    /// Ranked search over the corpus.
    Search {
        #[command(flatten)]
        data: DataArgs,
        query: String,
        #[arg(long)]
        d_max: Option<u32>,
        #[arg(long)]
        limit: Option<usize>,
        /// Widen the distance cutoff until --min-results images are found.
        #[arg(long)]
        adaptive: bool,
        #[arg(long, default_value_t = 1)]
        min_results: usize,
        #[arg(long)]
        include_drafts: bool,
        #[arg(long)]
        json: bool,
    },
    /// Run a query batch against judgments and write precision curves.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        judgments: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        d_max: Option<u32>,
        #[arg(long)]
        limit: Option<usize>,
        /// Also write the full per-query report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Generate a seeded synthetic taxonomy, corpus, query list and judgments.
    GenSynthetic {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 956)]
        synsets: usize,
        #[arg(long, default_value_t = 100)]
        images: usize,
        #[arg(long, default_value_t = 40)]
        queries: usize,
        /// Queries are drawn within this many hops of some image tag.
        #[arg(long, default_value_t = 30)]
        query_distance: u32,
        /// Judgment radius: relevant when a tag is this close to the query.
        #[arg(long, default_value_t = 2)]
        radius: u32,
        #[arg(long)]
        json: bool,
    },
    /// Run the HTTP API.
    Serve {
        /// Config file; defaults to $WNTAGS_CONFIG.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// Data file locations, from flags or a config file (flags win).
#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    table: Option<PathBuf>,
}

struct Data {
    taxonomy: Taxonomy,
    corpus_path: PathBuf,
    table: Option<SimilarityTable>,
    default_d_max: u32,
}

impl DataArgs {
    fn resolve(&self) -> Result<EngineConfig, ServiceError> {
        let from_file = match &self.config {
            Some(path) => Some(EngineConfig::load(path)?),
            None if self.taxonomy.is_none() || self.corpus.is_none() => {
                std::env::var_os(wntags::CONFIG_ENV).map(|p| EngineConfig::load(PathBuf::from(p))).transpose()?
            }
            None => None,
        };
        let taxonomy = self
            .taxonomy
            .clone()
            .or_else(|| from_file.as_ref().map(|c| c.taxonomy_path.clone()))
            .ok_or_else(|| ServiceError::Config("no taxonomy given (use --taxonomy or --config)".into()))?;
        let corpus = self
            .corpus
            .clone()
            .or_else(|| from_file.as_ref().map(|c| c.corpus_path.clone()))
            .ok_or_else(|| ServiceError::Config("no corpus given (use --corpus or --config)".into()))?;
        let mut config = from_file.unwrap_or_else(|| EngineConfig::new(&taxonomy, &corpus));
        config.taxonomy_path = taxonomy;
        config.corpus_path = corpus;
        if self.table.is_some() {
            config.table_path = self.table.clone();
        }
        Ok(config)
    }

    fn load(&self) -> Result<Data, ServiceError> {
        let config = self.resolve()?;
        config.validate()?;
        let taxonomy = Taxonomy::load(&config.taxonomy_path)?;
        let table = config.table_path.as_ref().map(SimilarityTable::load).transpose()?;
        if let Some(t) = &table {
            t.attach(&taxonomy)?;
        }
        Ok(Data { taxonomy, corpus_path: config.corpus_path, table, default_d_max: config.default_d_max })
    }
}

impl Data {
    fn corpus(&self) -> Result<Corpus, ServiceError> {
        Ok(Corpus::load(&self.corpus_path, &self.taxonomy)?)
    }

    fn with_source<R>(
        &self,
        f: impl FnOnce(&dyn SimilaritySource) -> Result<R, ServiceError>,
    ) -> Result<R, ServiceError> {
        match &self.table {
            Some(t) => f(&t.attach(&self.taxonomy)?),
            None => f(&OnTheFly::new(&self.taxonomy)),
        }
    }
}

fn print_json(value: &impl serde::Serialize) -> Result<(), ServiceError> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value).map_err(io::Error::other)?;
    writeln!(out)?;
    Ok(())
}

fn print_ranked(results: &[RankedResult]) -> Result<(), ServiceError> {
    let mut out = io::stdout().lock();
    writeln!(out, "{:>4}  {:<12} {:>14} {:>14}", "rank", "image", "relevance", "raw_score")?;
    for (i, r) in results.iter().enumerate() {
        writeln!(
            out,
            "{:>4}  {:<12} {:>14} {:>14}",
            i + 1,
            r.image_id,
            format_sig12(r.relevance),
            format_sig12(r.raw_score)
        )?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), ServiceError> {
    match cli.command {
        Command::LoadTaxonomy { path, json } => {
            let t = Taxonomy::load(&path)?;
            let summary = json!({
                "synsets": t.len(), "edges": t.edge_count(), "lemmas": t.lemma_count(), "digest": t.digest()
            });
            if json {
                print_json(&summary)?;
            } else {
                println!(
                    "{} synsets, {} edges, {} lemmas, digest {}",
                    t.len(),
                    t.edge_count(),
                    t.lemma_count(),
                    t.digest()
                );
            }
        }
        Command::BuildSim { taxonomy, d_max, out, json } => {
            let t = Taxonomy::load(&taxonomy)?;
            let table = build_table(&t, d_max)?;
            table.save(&out)?;
            if json {
                print_json(&json!({ "d_max": d_max, "entries": table.len(), "digest": table.digest(), "path": out }))?;
            } else {
                println!("wrote {} pairs within {} hops to {}", table.len(), d_max, out.display());
            }
        }
        Command::Import { data, records, replace, json } => {
            let data = data.load()?;
            let mut corpus = data.corpus()?;
            let parsed = parse_records(File::open(&records)?, &data.taxonomy)?;
            let count = parsed.len();
            for record in parsed {
                if !replace && corpus.get(record.id().as_str()).is_some() {
                    return Err(wntags_core::CorpusError::DuplicateImage(record.id().clone()).into());
                }
                corpus.upsert(record);
            }
            corpus.save(&data.corpus_path)?;
            if json {
                print_json(&json!({ "imported": count, "images": corpus.len() }))?;
            } else {
                println!("imported {count} records; corpus has {} images", corpus.len());
            }
        }
        Command::Annotate { data, image, annotator, synset, lemma, weight, json } => {
            let data = data.load()?;
            let mut corpus = data.corpus()?;
            let sense = data.taxonomy.sense(&synset, &normalize_lemma(&lemma))?;
            let annotator = AnnotatorId::new(annotator)?;
            corpus.annotate(&data.taxonomy, &image, TagAssignment { annotator, sense, weight })?;
            let record = corpus.get(&image).expect("annotated image exists");
            append_record(&data.corpus_path, record)?;
            if json {
                print_json(&wntags::engine::ImageView::from(record))?;
            } else {
                for tag in record.weighted_tags() {
                    println!(
                        "{}\t{}\t{}\t{}",
                        tag.sense.synset,
                        tag.sense.lemma,
                        format_sig12(tag.mean_weight),
                        tag.rater_count
                    );
                }
            }
        }
        Command::Search { data, query, d_max, limit, adaptive, min_results, include_drafts, json } => {
            let data = data.load()?;
            let corpus = data.corpus()?;
            let q = retrieval::parse_query(&data.taxonomy, &query)?.with_d_max(d_max.unwrap_or(data.default_d_max));
            let options = SearchOptions { limit, include_drafts };
            let (results, used) = data.with_source(|source| {
                if adaptive {
                    let params = AdaptiveParams { min_results, d_ceiling: q.d_max, ..AdaptiveParams::default() };
                    let params = AdaptiveParams { d_start: params.d_start.min(params.d_ceiling), ..params };
                    Ok(retrieval::adaptive_search(&corpus, &q, source, params, options)?)
                } else {
                    Ok((retrieval::search(&corpus, &q, source, options)?, q.d_max))
                }
            })?;
            if !q.unmatched_tokens.is_empty() {
                eprintln!("warning: ignored unmatched tokens: {}", q.unmatched_tokens.join(" "));
            }
            if json {
                print_json(&json!({ "d_max": used, "results": results }))?;
            } else {
                print_ranked(&results)?;
            }
        }
        Command::Eval { data, queries, judgments, out, d_max, limit, report, json } => {
            let data = data.load()?;
            let corpus = data.corpus()?;
            let qs = read_queries(File::open(&queries)?)?;
            let j = Judgments::load(&judgments)?;
            let params = EvalParams { d_max: d_max.unwrap_or(data.default_d_max), limit, include_drafts: false };
            let result = data.with_source(|source| Ok(run_batch(&corpus, &qs, &j, source, params)?))?;
            write_curves(&result, &out)?;
            if let Some(path) = report {
                let file = File::create(path)?;
                serde_json::to_writer_pretty(file, &result).map_err(io::Error::other)?;
            }
            for f in &result.failures {
                eprintln!("warning: query {} ({:?}) failed: {}", f.query_id, f.query, f.error);
            }
            let agg = &result.aggregate;
            if json {
                print_json(agg)?;
            } else {
                println!(
                    "{} queries, avg precision {}, avg TP {}, precision@1 {}; curves written to {}",
                    agg.queries,
                    format_sig12(agg.avg_precision),
                    format_sig12(agg.avg_tp),
                    agg.precision_at_rank.first().map_or("-".to_owned(), |p| format_sig12(*p)),
                    out.display()
                );
            }
        }
        Command::GenSynthetic { out_dir, seed, synsets, images, queries, query_distance, radius, json } => {
            let params = SyntheticParams {
                n_synsets: synsets,
                n_images: images,
                judgment_radius: radius,
                seed,
                ..Default::default()
            };
            let ds = generate_synthetic(&params)?;
            let terms = select_query_terms(&ds.taxonomy, &ds.corpus, queries, query_distance, seed)?;
            let qs: Vec<EvalQuery> = terms
                .into_iter()
                .enumerate()
                .map(|(i, text)| EvalQuery { id: format!("q{:02}", i + 1), text })
                .collect();
            let j = ds.rule.judge(&ds.taxonomy, &ds.corpus, &qs)?;
            std::fs::create_dir_all(&out_dir)?;
            let path = |name: &str| out_dir.join(name);
            ds.taxonomy.save(path("taxonomy.tsv"))?;
            ds.corpus.save(path("corpus.jsonl"))?;
            write_queries(File::create(path("queries.txt"))?, &qs)?;
            j.write_csv(File::create(path("judgments.csv"))?)?;
            let stats = ds.corpus.tag_count_stats()?;
            if json {
                print_json(
                    &json!({ "dir": out_dir, "synsets": ds.taxonomy.len(), "images": ds.corpus.len(), "queries": qs.len(), "tag_counts": stats }),
                )?;
            } else {
                println!(
                    "{} synsets, {} images (tags per image: median {}, min {}, max {}), {} queries in {}",
                    ds.taxonomy.len(),
                    ds.corpus.len(),
                    format_sig12(stats.median),
                    stats.min,
                    stats.max,
                    qs.len(),
                    out_dir.display()
                );
            }
        }
        Command::Serve { config } => {
            let config = match config {
                Some(path) => EngineConfig::load(path)?,
                None => EngineConfig::from_env()?,
            };
            let engine = Arc::new(Engine::open(config)?);
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(wntags::serve(engine))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}
