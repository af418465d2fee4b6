//! TREC-style relevance judgments, run files and the retrieval metrics used
//! to score them.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::time::Instant;

use serde::Serialize;

use crate::error::{IkeError, Result};
use crate::index::SearchResult;

/// `qid -> docid -> grade`. Grade 0 entries are judged non-relevant.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Qrels(pub BTreeMap<String, BTreeMap<String, u32>>);

impl Qrels {
    /// Parse `qid iteration docid grade` lines.
    pub fn parse<R: BufRead>(r: R) -> Result<Qrels> {
        let mut q = BTreeMap::<String, BTreeMap<String, u32>>::new();
        for (no, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 {
                return Err(IkeError::format(format!("qrels line {}: expected 4 fields, got {}", no + 1, f.len())));
            }
            let grade: i64 = f[3]
                .parse()
                .map_err(|_| IkeError::format(format!("qrels line {}: grade {:?} is not an integer", no + 1, f[3])))?;
            // Negative grades (used by some collections for spam) count as non-relevant.
            q.entry(f[0].to_string()).or_default().insert(f[2].to_string(), grade.max(0) as u32);
        }
        Ok(Qrels(q))
    }

    pub fn insert(&mut self, qid: &str, docid: &str, grade: u32) {
        self.0.entry(qid.to_string()).or_default().insert(docid.to_string(), grade);
    }
}

/// `qid -> ranked (docid, score)`, best first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunFile(pub BTreeMap<String, Vec<(String, f64)>>);

impl RunFile {
    /// Parse `qid Q0 docid rank score tag` lines. Lists are re-sorted by
    /// score descending, ties by docid ascending; the rank column is ignored.
    pub fn parse<R: BufRead>(r: R) -> Result<RunFile> {
        let mut run = BTreeMap::<String, Vec<(String, f64)>>::new();
        for (no, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 6 {
                return Err(IkeError::format(format!("run line {}: expected 6 fields, got {}", no + 1, f.len())));
            }
            let score: f64 = f[4]
                .parse()
                .ok()
                .filter(|s: &f64| s.is_finite())
                .ok_or_else(|| IkeError::format(format!("run line {}: bad score {:?}", no + 1, f[4])))?;
            run.entry(f[0].to_string()).or_default().push((f[2].to_string(), score));
        }
        let mut run = RunFile(run);
        run.sort();
        Ok(run)
    }

    pub fn sort(&mut self) {
        for list in self.0.values_mut() {
            list.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        }
    }

    /// Build from search results: query `i` is named `qids[i]`, point `p` is
    /// named `docids[p]` (or their decimal indices when not given).
    pub fn from_results(results: &[SearchResult], qids: Option<&[String]>, docids: Option<&[String]>) -> RunFile {
        let mut run = BTreeMap::new();
        for (q, res) in results.iter().enumerate() {
            let qid = qids.map_or_else(|| q.to_string(), |ids| ids[q].clone());
            let list = res
                .iter()
                .map(|nb| {
                    let doc = docids.map_or_else(|| nb.id.to_string(), |ids| ids[nb.id as usize].clone());
                    (doc, nb.matches as f64)
                })
                .collect();
            run.insert(qid, list);
        }
        RunFile(run)
    }

    pub fn write<W: Write>(&self, mut w: W, tag: &str) -> Result<()> {
        for (qid, list) in &self.0 {
            for (rank, (doc, score)) in list.iter().enumerate() {
                writeln!(w, "{qid} Q0 {doc} {} {score} {tag}", rank + 1)?;
            }
        }
        Ok(())
    }
}

/// A ranked list and its judgments.
type Judged<'a> = (&'a [(String, f64)], &'a BTreeMap<String, u32>);

/// Queries of `run` that have judgments; warns about the rest.
fn judged<'a>(run: &'a RunFile, qrels: &'a Qrels) -> Result<Vec<Judged<'a>>> {
    let mut out = Vec::new();
    let mut skipped = 0;
    for (qid, list) in &run.0 {
        match qrels.0.get(qid) {
            Some(j) => out.push((list.as_slice(), j)),
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} run queries have no judgments and were skipped");
    }
    if out.is_empty() {
        return Err(IkeError::Eval("no query appears in both the run and the qrels".into()));
    }
    Ok(out)
}

/// Mean reciprocal rank of the first document with grade `>= min_grade`
/// within the top `k`.
pub fn mrr_at_k(run: &RunFile, qrels: &Qrels, k: usize, min_grade: u32) -> Result<f64> {
    let queries = judged(run, qrels)?;
    let total: f64 = queries
        .iter()
        .map(|(list, j)| {
            list.iter()
                .take(k)
                .position(|(doc, _)| j.get(doc).is_some_and(|&g| g >= min_grade && g > 0))
                .map_or(0.0, |p| 1.0 / (p + 1) as f64)
        })
        .sum();
    Ok(total / queries.len() as f64)
}

fn dcg(grades: impl Iterator<Item = u32>) -> f64 {
    grades
        .enumerate()
        .map(|(i, g)| ((2f64).powi(g as i32) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

/// nDCG@k with gain `2^grade - 1` and discount `log2(rank + 1)`. Unjudged
/// documents have grade 0; a query without relevant judgments scores 0.
pub fn ndcg_at_k(run: &RunFile, qrels: &Qrels, k: usize) -> Result<f64> {
    let queries = judged(run, qrels)?;
    let total: f64 = queries
        .iter()
        .map(|(list, j)| {
            let mut ideal: Vec<u32> = j.values().copied().collect();
            ideal.sort_unstable_by(|a, b| b.cmp(a));
            let idcg = dcg(ideal.into_iter().take(k));
            if idcg == 0.0 {
                return 0.0;
            }
            dcg(list.iter().take(k).map(|(doc, _)| j.get(doc).copied().unwrap_or(0))) / idcg
        })
        .sum();
    Ok(total / queries.len() as f64)
}

/// Mean over queries of `|top-k(run) ∩ top-k(truth)| / k`.
pub fn recall_overlap(run: &RunFile, truth: &RunFile, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(IkeError::Eval("k must be at least 1".into()));
    }
    if run.0.len() != truth.0.len() || run.0.keys().zip(truth.0.keys()).any(|(a, b)| a != b) {
        return Err(IkeError::Eval("run and truth cover different queries".into()));
    }
    if run.0.is_empty() {
        return Err(IkeError::Eval("no queries to compare".into()));
    }
    let total: f64 = run
        .0
        .values()
        .zip(truth.0.values())
        .map(|(a, b)| {
            let want: Vec<&String> = b.iter().take(k).map(|x| &x.0).collect();
            a.iter().take(k).filter(|x| want.contains(&&x.0)).count() as f64 / k as f64
        })
        .sum();
    Ok(total / run.0.len() as f64)
}

/// Id-level overlap between two sets of ranked id lists, same semantics as
/// [`recall_overlap`].
pub fn id_overlap(run: &[Vec<u32>], truth: &[Vec<u32>], k: usize) -> f64 {
    assert_eq!(run.len(), truth.len());
    let total: f64 = run
        .iter()
        .zip(truth)
        .map(|(a, b)| {
            let want = &b[..k.min(b.len())];
            a.iter().take(k).filter(|id| want.contains(id)).count() as f64 / k as f64
        })
        .sum();
    total / run.len().max(1) as f64
}

/// The ids of each result list, in rank order.
pub fn result_ids(results: &[SearchResult]) -> Vec<Vec<u32>> {
    results.iter().map(|r| r.iter().map(|n| n.id).collect()).collect()
}

/// [`id_overlap`] on search results.
pub fn result_overlap(run: &[SearchResult], truth: &[SearchResult], k: usize) -> f64 {
    id_overlap(&result_ids(run), &result_ids(truth), k)
}

#[derive(Debug, Clone, Serialize)]
pub struct QpsReport {
    pub queries: usize,
    pub threads: usize,
    pub warmup_runs: usize,
    pub runs: usize,
    /// Mean over measured runs of queries / wall time.
    pub qps: f64,
    /// Standard deviation of per-run QPS.
    pub qps_std: f64,
    pub mean_latency_us: f64,
    pub p50_latency_us: f64,
    pub p99_latency_us: f64,
    /// Mean wall time of one pass over all queries.
    pub run_seconds: f64,
}

/// Time `search(i)` over all query indices on `threads` workers.
pub fn measure_qps<F>(search: F, queries: usize, warmup: usize, runs: usize, threads: usize) -> Result<QpsReport>
where
    F: Fn(usize) + Sync,
{
    use rayon::prelude::*;

    if queries == 0 || runs == 0 {
        return Err(IkeError::param("need at least one query and one measured run"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| IkeError::param(format!("cannot start {threads} worker threads: {e}")))?;
    let one_pass = || -> (f64, Vec<f64>) {
        let start = Instant::now();
        let lat: Vec<f64> = pool.install(|| {
            (0..queries)
                .into_par_iter()
                .map(|q| {
                    let s = Instant::now();
                    search(q);
                    s.elapsed().as_secs_f64() * 1e6
                })
                .collect()
        });
        (start.elapsed().as_secs_f64(), lat)
    };
    for _ in 0..warmup {
        one_pass();
    }
    let mut per_run = Vec::with_capacity(runs);
    let mut latencies = Vec::with_capacity(runs * queries);
    let mut secs = 0.0;
    for _ in 0..runs {
        let (wall, lat) = one_pass();
        secs += wall;
        per_run.push(queries as f64 / wall.max(1e-12));
        latencies.extend(lat);
    }
    let qps = per_run.iter().sum::<f64>() / runs as f64;
    let qps_std = (per_run.iter().map(|q| (q - qps).powi(2)).sum::<f64>() / runs as f64).sqrt();
    latencies.sort_by(f64::total_cmp);
    let pct = |p: f64| latencies[((latencies.len() - 1) as f64 * p).round() as usize];
    Ok(QpsReport {
        queries,
        threads: pool.current_num_threads(),
        warmup_runs: warmup,
        runs,
        qps,
        qps_std,
        mean_latency_us: latencies.iter().sum::<f64>() / latencies.len() as f64,
        p50_latency_us: pct(0.5),
        p99_latency_us: pct(0.99),
        run_seconds: secs / runs as f64,
    })
}
