//! Batch benchmark: sample held-out queries, build one index per projection
//! seed, sweep `(variant, k, c, p)`, score each answer against the exact
//! top-k and write CSV and JSON reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::index::{build_index, IndexConfig, DEFAULT_PAGE_SIZE};
use crate::ingest::{ingest, DataFormat};
use crate::metrics::{ratio_of, recall_of};
use crate::search::{brute_force_mip, search, Termination, Variant};
use crate::synthetic::{gaussian_mixture, MixtureSpec};
use crate::vector::{Dataset, PointId};
use crate::{Error, Scalar};

/// Column order of the per-query CSV.
pub const QUERY_CSV_HEADER: &str = "k,c,p,seed,query_id,overall_ratio,recall,pages,candidates,cpu_us,total_us";

/// Column order of the aggregate CSV.
pub const AGGREGATE_CSV_HEADER: &str =
    "variant,k,c,p,seed,queries,undefined_ratio,overall_ratio,recall,pages,candidates,cpu_us,total_us";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchConfig {
    /// Dataset file; `None` generates a Gaussian mixture.
    pub dataset: Option<PathBuf>,
    pub format: Option<String>,
    pub synthetic_n: usize,
    pub synthetic_d: usize,
    pub synthetic_clusters: usize,
    pub synthetic_seed: u64,
    pub queries: usize,
    pub query_seed: u64,
    pub ks: Vec<usize>,
    pub cs: Vec<f64>,
    pub ps: Vec<f64>,
    pub seeds: Vec<u64>,
    pub variants: Vec<Variant>,
    pub m: Option<usize>,
    pub kp: usize,
    pub n_key: usize,
    pub ksp: usize,
    pub epsilon: Option<f64>,
    pub page_size: usize,
    pub out_dir: Option<PathBuf>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        let mix = MixtureSpec::default();
        Self {
            dataset: None,
            format: None,
            synthetic_n: mix.n,
            synthetic_d: mix.d,
            synthetic_clusters: mix.clusters,
            synthetic_seed: 0,
            queries: 100,
            query_seed: 0,
            ks: vec![10],
            cs: vec![0.9],
            ps: vec![0.5],
            seeds: vec![0],
            variants: vec![Variant::II],
            m: None,
            kp: 5,
            n_key: 40,
            ksp: 10,
            epsilon: None,
            page_size: DEFAULT_PAGE_SIZE,
            out_dir: None,
        }
    }
}

fn parse_one<V: FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("{key}: cannot parse '{value}'")))
}

fn parse_list<V: FromStr>(key: &str, value: &str) -> Result<Vec<V>> {
    let items: Vec<V> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_one(key, s))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return invalid(format!("{key}: empty list"));
    }
    Ok(items)
}

fn parse_auto<V: FromStr>(key: &str, value: &str) -> Result<Option<V>> {
    if value.trim().eq_ignore_ascii_case("auto") {
        Ok(None)
    } else {
        parse_one(key, value).map(Some)
    }
}

impl BenchConfig {
    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let v = value.trim();
        match key.as_str() {
            "dataset" | "input" => self.dataset = (!v.is_empty()).then(|| PathBuf::from(v)),
            "format" => {
                v.parse::<DataFormat>()?;
                self.format = Some(v.to_string());
            }
            "synthetic_n" | "n" => self.synthetic_n = parse_one(&key, v)?,
            "synthetic_d" | "d" => self.synthetic_d = parse_one(&key, v)?,
            "synthetic_clusters" => self.synthetic_clusters = parse_one(&key, v)?,
            "synthetic_seed" => self.synthetic_seed = parse_one(&key, v)?,
            "queries" => self.queries = parse_one(&key, v)?,
            "query_seed" => self.query_seed = parse_one(&key, v)?,
            "k" | "ks" => self.ks = parse_list(&key, v)?,
            "c" | "cs" => self.cs = parse_list(&key, v)?,
            "p" | "ps" => self.ps = parse_list(&key, v)?,
            "seed" | "seeds" => self.seeds = parse_list(&key, v)?,
            "variant" | "variants" => self.variants = parse_list(&key, v)?,
            "m" => self.m = parse_auto(&key, v)?,
            "kp" => self.kp = parse_one(&key, v)?,
            "nkey" | "n_key" => self.n_key = parse_one(&key, v)?,
            "ksp" => self.ksp = parse_one(&key, v)?,
            "epsilon" => self.epsilon = parse_auto(&key, v)?,
            "page_size" => self.page_size = parse_one(&key, v)?,
            "out" | "out_dir" => self.out_dir = Some(PathBuf::from(v)),
            _ => return invalid(format!("unknown config key '{key}'")),
        }
        Ok(())
    }

    /// Parses `key=value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return invalid(format!("line {}: expected key=value", lineno + 1));
            };
            cfg.set(key, value)
                .map_err(|e| Error::InvalidArgument(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.queries == 0 {
            return invalid("queries must be at least 1");
        }
        if self.ks.contains(&0) {
            return invalid("every k must be at least 1");
        }
        if self.cs.iter().any(|c| !(*c > 0.0 && *c < 1.0)) {
            return invalid("every c must lie in (0, 1)");
        }
        if self.ps.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return invalid("every p must lie in (0, 1)");
        }
        if self.seeds.is_empty() || self.variants.is_empty() {
            return invalid("at least one seed and one variant are required");
        }
        Ok(())
    }

    pub fn index_config<T: Scalar>(&self, seed: u64) -> IndexConfig<T> {
        IndexConfig {
            m: self.m,
            kp: self.kp,
            n_key: self.n_key,
            ksp: self.ksp,
            epsilon: self.epsilon.map(T::lit),
            page_size: self.page_size,
            seed,
        }
    }

    pub fn load_dataset<T: Scalar>(&self) -> Result<Dataset<T>> {
        match &self.dataset {
            Some(path) => {
                let format = match &self.format {
                    Some(f) => f.parse()?,
                    None => DataFormat::from_path(path),
                };
                ingest(path, format)
            }
            None => gaussian_mixture(&MixtureSpec {
                n: self.synthetic_n,
                d: self.synthetic_d,
                clusters: self.synthetic_clusters,
                seed: self.synthetic_seed,
                ..MixtureSpec::default()
            }),
        }
    }
}

/// Held-out queries and the remaining indexed points.
pub struct QuerySplit<T: Scalar> {
    /// Dataset ids of the queries, in sampling order.
    pub query_ids: Vec<PointId>,
    pub queries: Dataset<T>,
    pub indexed: Dataset<T>,
}

/// Samples `count` distinct ids and removes them from the indexed set.
pub fn split_queries<T: Scalar>(dataset: &Dataset<T>, count: usize, seed: u64) -> Result<QuerySplit<T>> {
    if count == 0 || count >= dataset.len() {
        return invalid(format!(
            "query count {count} must be between 1 and n - 1 = {}",
            dataset.len().saturating_sub(1)
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let query_ids: Vec<PointId> = rand::seq::index::sample(&mut rng, dataset.len(), count)
        .into_iter()
        .map(|i| i as PointId)
        .collect();
    let mut is_query = vec![false; dataset.len()];
    for &id in &query_ids {
        is_query[id as usize] = true;
    }
    let rest: Vec<PointId> = (0..dataset.len() as PointId).filter(|i| !is_query[*i as usize]).collect();
    Ok(QuerySplit {
        queries: dataset.subset(&query_ids)?,
        indexed: dataset.subset(&rest)?,
        query_ids,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryRow {
    pub variant: Variant,
    pub k: usize,
    pub c: f64,
    pub p: f64,
    pub seed: u64,
    pub query_id: PointId,
    /// `None` when an exact inner product is non-positive.
    pub overall_ratio: Option<f64>,
    pub recall: f64,
    pub pages: usize,
    pub candidates: usize,
    pub cpu_us: f64,
    pub total_us: f64,
    pub termination: Termination,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub variant: Variant,
    pub k: usize,
    pub c: f64,
    pub p: f64,
    pub seed: u64,
    pub queries: usize,
    /// Queries left out of the ratio mean.
    pub undefined_ratio: usize,
    pub overall_ratio: Option<f64>,
    pub recall: f64,
    pub pages: f64,
    pub candidates: f64,
    pub cpu_us: f64,
    pub total_us: f64,
    pub terminations: BTreeMap<&'static str, usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct IndexSummary {
    pub seed: u64,
    pub n: usize,
    pub d: usize,
    pub m: usize,
    pub kp: usize,
    pub n_key: usize,
    pub ksp: usize,
    pub epsilon: f64,
    pub stride: u64,
    pub page_size: usize,
    pub projected_pages: usize,
    pub original_pages: usize,
    pub build_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub config: BenchConfig,
    pub indexes: Vec<IndexSummary>,
    pub aggregates: Vec<AggregateRow>,
    pub queries: Vec<QueryRow>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

pub fn aggregate(rows: &[QueryRow]) -> AggregateRow {
    let first = &rows[0];
    let mut terminations = BTreeMap::new();
    for r in rows {
        *terminations.entry(r.termination.as_str()).or_insert(0) += 1;
    }
    AggregateRow {
        variant: first.variant,
        k: first.k,
        c: first.c,
        p: first.p,
        seed: first.seed,
        queries: rows.len(),
        undefined_ratio: rows.iter().filter(|r| r.overall_ratio.is_none()).count(),
        overall_ratio: mean(rows.iter().filter_map(|r| r.overall_ratio)),
        recall: mean(rows.iter().map(|r| r.recall)).unwrap_or(0.0),
        pages: mean(rows.iter().map(|r| r.pages as f64)).unwrap_or(0.0),
        candidates: mean(rows.iter().map(|r| r.candidates as f64)).unwrap_or(0.0),
        cpu_us: mean(rows.iter().map(|r| r.cpu_us)).unwrap_or(0.0),
        total_us: mean(rows.iter().map(|r| r.total_us)).unwrap_or(0.0),
        terminations,
    }
}

pub fn run_bench<T: Scalar>(cfg: &BenchConfig) -> Result<MetricReport> {
    cfg.validate()?;
    let dataset: Dataset<T> = cfg.load_dataset()?;
    let split = split_queries(&dataset, cfg.queries, cfg.query_seed)?;
    let k_max = *cfg.ks.iter().max().expect("validated");

    let exact: Vec<_> = (0..split.queries.len() as PointId)
        .into_par_iter()
        .map(|i| brute_force_mip(&split.indexed, split.queries.point(i), k_max))
        .collect::<Result<_>>()?;

    let mut indexes = Vec::new();
    let mut queries = Vec::new();
    let mut aggregates = Vec::new();
    for &seed in &cfg.seeds {
        let started = std::time::Instant::now();
        let index = build_index(&split.indexed, &cfg.index_config::<T>(seed))?;
        let params = index.params();
        indexes.push(IndexSummary {
            seed,
            n: index.len(),
            d: index.dim(),
            m: index.projected_dim(),
            kp: params.kp,
            n_key: params.n_key,
            ksp: params.ksp,
            epsilon: params.epsilon.as_f64(),
            stride: params.stride,
            page_size: params.page_size,
            projected_pages: index.projected_store().page_count(),
            original_pages: index.original_store().page_count(),
            build_ms: started.elapsed().as_secs_f64() * 1e3,
        });
        for &variant in &cfg.variants {
            for &k in &cfg.ks {
                for &c in &cfg.cs {
                    for &p in &cfg.ps {
                        let rows: Vec<QueryRow> = (0..split.queries.len())
                            .into_par_iter()
                            .map(|i| {
                                let q = split.queries.point(i as PointId);
                                let r = search(&index, q, T::lit(c), T::lit(p), k, variant)?;
                                let truth = &exact[i];
                                let kk = k.min(truth.ids.len());
                                Ok(QueryRow {
                                    variant,
                                    k,
                                    c,
                                    p,
                                    seed,
                                    query_id: split.query_ids[i],
                                    overall_ratio: ratio_of(&r.ips, &truth.ips[..kk]),
                                    recall: recall_of(&r.ids, &truth.ids[..kk]),
                                    pages: r.pages(),
                                    candidates: r.candidates,
                                    cpu_us: r.cpu_us,
                                    total_us: r.total_us,
                                    termination: r.termination,
                                })
                            })
                            .collect::<Result<_>>()?;
                        aggregates.push(aggregate(&rows));
                        queries.extend(rows);
                    }
                }
            }
        }
    }
    Ok(MetricReport {
        config: cfg.clone(),
        indexes,
        aggregates,
        queries,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Per-query rows of one variant in [`QUERY_CSV_HEADER`] order.
pub fn query_csv(rows: &[QueryRow], variant: Variant) -> String {
    let mut out = String::from(QUERY_CSV_HEADER);
    out.push('\n');
    for r in rows.iter().filter(|r| r.variant == variant) {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{:.3},{:.3}",
            r.k,
            r.c,
            r.p,
            r.seed,
            r.query_id,
            opt(r.overall_ratio),
            r.recall,
            r.pages,
            r.candidates,
            r.cpu_us,
            r.total_us
        );
    }
    out
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from(AGGREGATE_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{:.3},{:.3}",
            r.variant.as_str(),
            r.k,
            r.c,
            r.p,
            r.seed,
            r.queries,
            r.undefined_ratio,
            opt(r.overall_ratio),
            r.recall,
            r.pages,
            r.candidates,
            r.cpu_us,
            r.total_us
        );
    }
    out
}

/// Writes `queries_<variant>.csv`, `aggregate.csv` and `report.json` into
/// `dir`; returns the paths written.
pub fn write_reports(report: &MetricReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for variant in &report.config.variants {
        let path = dir.join(format!("queries_{}.csv", variant.as_str()));
        fs::write(&path, query_csv(&report.queries, *variant))?;
        written.push(path);
    }
    let path = dir.join("aggregate.csv");
    fs::write(&path, aggregate_csv(&report.aggregates))?;
    written.push(path);
    let path = dir.join("report.json");
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Io(e.into()))?;
    fs::write(&path, json)?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BenchConfig {
        BenchConfig {
            synthetic_n: 1500,
            synthetic_d: 12,
            queries: 20,
            ..BenchConfig::default()
        }
    }

    #[test]
    fn config_parsing() {
        let text = "# sweep\nk = 10, 20\nc=0.7,0.9\nvariants=i,ii\nm=auto\nepsilon=0.02\npage-size=8192\n";
        let cfg = BenchConfig::parse(text).unwrap();
        assert_eq!(cfg.ks, vec![10, 20]);
        assert_eq!(cfg.cs, vec![0.7, 0.9]);
        assert_eq!(cfg.variants, vec![Variant::I, Variant::II]);
        assert_eq!(cfg.m, None);
        assert_eq!(cfg.epsilon, Some(0.02));
        assert_eq!(cfg.page_size, 8192);
        assert!(BenchConfig::parse("bogus=1").is_err());
        assert!(BenchConfig::parse("k=ten").is_err());
        assert!(BenchConfig::parse("no equals sign").is_err());
    }

    #[test]
    fn split_removes_queries() {
        let data: Dataset<f64> = gaussian_mixture(&MixtureSpec { n: 50, d: 3, ..MixtureSpec::default() }).unwrap();
        let s = split_queries(&data, 10, 1).unwrap();
        assert_eq!(s.indexed.len(), 40);
        let mut ids = s.query_ids.clone();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 10);
        for (i, id) in s.query_ids.iter().enumerate() {
            assert_eq!(s.queries.point(i as u32), data.point(*id));
        }
        assert!(split_queries(&data, 50, 1).is_err());
    }

    #[test]
    fn one_aggregate_row_per_k() {
        let cfg = BenchConfig {
            ks: vec![10, 20, 30],
            ..small()
        };
        let report = run_bench::<f64>(&cfg).unwrap();
        assert_eq!(report.aggregates.len(), 3);
        assert_eq!(report.queries.len(), 60);
        for a in &report.aggregates {
            let ratio = a.overall_ratio.unwrap();
            assert!((0.0..=1.0 + 1e-12).contains(&ratio));
            assert!((0.0..=1.0).contains(&a.recall));
        }
    }

    #[test]
    fn reports_are_deterministic_apart_from_time() {
        let strip = |r: &MetricReport| {
            r.queries
                .iter()
                .map(|q| (q.query_id, q.overall_ratio, q.recall, q.pages, q.candidates))
                .collect::<Vec<_>>()
        };
        let a = run_bench::<f64>(&small()).unwrap();
        let b = run_bench::<f64>(&small()).unwrap();
        assert_eq!(strip(&a), strip(&b));
    }

    #[test]
    fn too_many_queries_rejected() {
        let cfg = BenchConfig {
            queries: 1500,
            ..small()
        };
        assert!(matches!(run_bench::<f64>(&cfg), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn writes_reports() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = BenchConfig {
            variants: vec![Variant::I, Variant::II],
            ..small()
        };
        let report = run_bench::<f64>(&cfg).unwrap();
        let files = write_reports(&report, dir.path()).unwrap();
        assert_eq!(files.len(), 4);
        let csv = fs::read_to_string(dir.path().join("queries_ii.csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(QUERY_CSV_HEADER));
        assert_eq!(lines.count(), 20);
        let json: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(json["aggregates"].as_array().unwrap().len(), 2);
    }
}
