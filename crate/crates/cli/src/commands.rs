use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use epiwatch_core::clustering::{
    match_matrix, parse_grid, partition, read_labeled_days, similarity_matrix, tune_rules, ThresholdRules,
};
use epiwatch_core::config::Config;
use epiwatch_core::ingestion::{AdapterKind, HttpFetcher, SourceAdapter};
use epiwatch_core::metrics::{align, clustering_scores, extraction_metrics, EventTuple, GoldArticle};
use epiwatch_core::pipeline::cluster_stored_day;
use epiwatch_core::store::{PageRequest, Store};
use epiwatch_core::MappedEvent;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::{settings, Cli, Command, Evaluate, Failure, IngestArgs, Synonyms};

type Outcome = Result<Option<Value>, Failure>;

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn store(config: &Config) -> Result<Arc<Store>, Failure> {
    config.open_store().map(Arc::new).map_err(|e| Failure::runtime("store", e))
}

fn rules(config: &Config, path: Option<&Path>) -> Result<ThresholdRules, Failure> {
    match path {
        Some(p) => ThresholdRules::load(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display()))),
        None => config.rules().map_err(config_err),
    }
}

pub fn run(cli: Cli) -> Outcome {
    let mut config = settings::load(&cli.config).map_err(Failure::Config)?;
    match cli.command {
        Command::Ingest(args) => ingest(&mut config, args),
        Command::Process { date, extractor } => {
            let kind = extractor.unwrap_or(config.pipeline.extractor);
            let pipeline = config.build_pipeline(store(&config)?, kind).map_err(config_err)?;
            let report = pipeline.process(date, kind).map_err(|e| Failure::runtime("pipeline", e))?;
            let pending = pipeline.mapper.table.pending();
            if !pending.is_empty() {
                write_atomic(&config.data.pending_synonyms, |w| pipeline.mapper.table.write_pending(w))?;
            }
            Ok(Some(json!({
                "date": date,
                "extractor": kind,
                "report": report,
                "pending_synonyms": pending.len(),
            })))
        }
        Command::Cluster { date, rules: path } => {
            let rules = rules(&config, path.as_deref())?;
            let store = store(&config)?;
            let report = cluster_stored_day(&store, date, config.embedder().as_ref(), &rules)
                .map_err(|e| Failure::runtime("pipeline", e))?;
            Ok(Some(json!({ "date": date, "report": report })))
        }
        Command::TuneRules { gold, grid, rules: path, out } => {
            let days = read_labeled_days(open(&gold)?).map_err(|e| Failure::Usage(format!("{}: {e}", gold.display())))?;
            let candidates = parse_grid(&read(&grid)?).map_err(|e| Failure::Usage(format!("{}: {e}", grid.display())))?;
            let base = rules(&config, path.as_deref())?;
            let result = tune_rules(&days, config.embedder().as_ref(), &base, &candidates)
                .map_err(|e| Failure::runtime("provider", e))?;
            if let Some(out) = &out {
                fs::write(out, result.rules.to_toml()).map_err(|e| Failure::runtime("io", format!("{}: {e}", out.display())))?;
            }
            Ok(Some(serde_json::to_value(&result).expect("serializable")))
        }
        Command::Evaluate(Evaluate::Clustering { gold, rules: path }) => evaluate_clustering(&config, &gold, path.as_deref()),
        Command::Evaluate(Evaluate::Extraction { gold, predicted }) => {
            evaluate_extraction(&config, &gold, predicted.as_deref())
        }
        Command::Synonyms(Synonyms::Pending) => {
            let table = config.synonym_table().map_err(config_err)?;
            Ok(Some(serde_json::to_value(table.pending()).expect("serializable")))
        }
        Command::Synonyms(Synonyms::Promote { surface }) => {
            let mut table = config.synonym_table().map_err(config_err)?;
            let canonical = table
                .promote(&surface)
                .ok_or_else(|| Failure::runtime("not_found", format!("{surface:?} is not a pending synonym")))?;
            write_atomic(&config.data.synonyms, |w| table.write_synonyms(w))?;
            write_atomic(&config.data.pending_synonyms, |w| table.write_pending(w))?;
            Ok(Some(json!({ "surface": surface, "canonical": canonical })))
        }
        Command::Serve => {
            let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::runtime("io", e))?;
            rt.block_on(epiwatch_server::serve(&config)).map_err(|e| match e {
                epiwatch_server::ServeError::MissingToken(_) | epiwatch_server::ServeError::Config(_) => config_err(e),
                other => Failure::runtime("serve", other),
            })?;
            Ok(None)
        }
    }
}

fn write_atomic<E: std::fmt::Display>(
    path: &Path,
    f: impl FnOnce(&mut Vec<u8>) -> Result<(), E>,
) -> Result<(), Failure> {
    let io = |e: std::io::Error| Failure::runtime("io", format!("{}: {e}", path.display()));
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| Failure::runtime("io", e))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let tmp = path.with_extension("tmp");
    File::create(&tmp).and_then(|mut f| f.write_all(&buf)).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

fn adapter(source: &str) -> Result<SourceAdapter, Failure> {
    if source.starts_with("http://") || source.starts_with("https://") {
        return Ok(SourceAdapter {
            name: source.to_string(),
            kind: AdapterKind::FeedPoll,
            config: BTreeMap::from([("url".to_string(), source.to_string())]),
        });
    }
    let path = Path::new(source);
    let bad = |e: String| Failure::Usage(format!("{source}: {e}"));
    match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(&read(path)?).map_err(|e| bad(e.to_string())),
        Some("json") => serde_json::from_str(&read(path)?).map_err(|e| bad(e.to_string())),
        _ => Ok(SourceAdapter::url_list_file(
            path.file_stem().and_then(|s| s.to_str()).unwrap_or("urls"),
            path,
        )),
    }
}

fn ingest(config: &mut Config, args: IngestArgs) -> Outcome {
    if let Some(b) = args.blocklist {
        config.data.blocklist = Some(b);
    }
    let adapter = adapter(&args.source)?;
    let ingestor = config.ingestor(Box::new(HttpFetcher::default())).map_err(config_err)?;
    let pipeline = config
        .build_pipeline(store(config)?, config.pipeline.extractor)
        .map_err(config_err)?;
    let summary = pipeline.ingest(&ingestor, &adapter).map_err(|e| Failure::runtime("ingest", e))?;
    Ok(Some(json!({ "source": adapter.name, "summary": summary })))
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn evaluate_clustering(config: &Config, gold: &Path, rules_path: Option<&Path>) -> Outcome {
    let days = read_labeled_days(open(gold)?).map_err(|e| Failure::Usage(format!("{}: {e}", gold.display())))?;
    let rules = rules(config, rules_path)?;
    let embedder = config.embedder();
    let mut out = Vec::new();
    let (mut aris, mut nmis, mut vs) = (Vec::new(), Vec::new(), Vec::new());
    for d in &days {
        let sim = similarity_matrix(&d.items, embedder.as_ref()).map_err(|e| Failure::runtime("provider", e))?;
        let events: Vec<&MappedEvent> = d.items.iter().map(|it| &it.event).collect();
        let matches = match_matrix(&sim, &events, &rules);
        let mut groups = partition(&events, &sim, &rules);
        for g in &mut groups {
            g.sort_unstable();
        }
        groups.sort();
        let mut predicted = vec![0usize; events.len()];
        for (k, g) in groups.iter().enumerate() {
            for &i in g {
                predicted[i] = k;
            }
        }
        // items are numbered from 1 in file order
        let numbered: Vec<Vec<usize>> = groups.iter().map(|g| g.iter().map(|i| i + 1).collect()).collect();
        let scores = clustering_scores(&d.labels, &predicted).ok();
        if let Some(s) = scores {
            aris.push(s.ari);
            nmis.push(s.nmi);
            vs.push(s.v_measure);
        }
        out.push(json!({
            "day": d.day,
            "events": events.len(),
            "clusters": numbered,
            "match_matrix": matches.rows(),
            "scores": scores,
        }));
    }
    Ok(Some(json!({
        "days": out,
        "mean": { "ari": mean(&aris), "nmi": mean(&nmis), "v_measure": mean(&vs) },
    })))
}

#[derive(Deserialize)]
struct Predicted {
    article_id: String,
    events: Vec<EventTuple>,
}

fn read_ndjson<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, Failure> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Failure::Usage(format!("{}: line {}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

fn evaluate_extraction(config: &Config, gold: &Path, predicted: Option<&Path>) -> Outcome {
    let gold: Vec<GoldArticle> = read_ndjson(gold)?;
    let mut by_article: HashMap<String, Vec<EventTuple>> = HashMap::new();
    match predicted {
        Some(p) => {
            for row in read_ndjson::<Predicted>(p)? {
                by_article.entry(row.article_id).or_default().extend(row.events);
            }
        }
        None => {
            let store = store(config)?;
            let all = PageRequest {
                page: 1,
                page_size: usize::MAX,
            };
            for e in store.list_raw_events(None, all).items {
                by_article
                    .entry(e.article_id.to_string())
                    .or_default()
                    .push(EventTuple::from_raw(&e));
            }
        }
    }
    let eval = align(&gold, &by_article);
    Ok(Some(json!({
        "articles": eval.len(),
        "metrics": extraction_metrics(&eval),
    })))
}
