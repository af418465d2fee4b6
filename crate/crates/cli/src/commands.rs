use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde_json::{json, Value};

use ike_core::eval::{measure_qps, mrr_at_k, ndcg_at_k, recall_overlap, Qrels, RunFile};
use ike_core::index::float::dot_topk;
use ike_core::index::{exhaustive_batch, exhaustive_topk, HnswIndex, IvfIndex, SearchResult};
use ike_core::io::{create_file, open_file, read_matrix, VectorReader};
use ike_core::properties::{self, check_bit_independence, check_entropy, estimate_rho, kernel_spread, random_pairs};
use ike_core::{CodeWriter, EmbeddingMatrix, IkeError, IkeModel, IkeParams, ModelKind, PackedCodes, Result};

use crate::report::{json_report, table, Summary};
use crate::{Check, Kind, Method, SearchArgs};

fn model_kind(kind: Kind) -> ModelKind {
    match kind {
        Kind::Iforest => ModelKind::IForest,
        Kind::Voronoi => ModelKind::Voronoi,
        Kind::Rplsh => ModelKind::Rplsh,
    }
}

fn kind_name(kind: ModelKind) -> &'static str {
    match kind {
        ModelKind::IForest => "iforest",
        ModelKind::Voronoi => "voronoi",
        ModelKind::Rplsh => "rplsh",
    }
}

fn load_model(path: &Path) -> Result<IkeModel> {
    IkeModel::read_from(BufReader::new(open_file(path)?))
}

fn load_codes(path: &Path) -> Result<PackedCodes> {
    PackedCodes::read_from(BufReader::new(open_file(path)?))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(create_file(path)?))
}

fn read_ids(path: &Path, expected: usize, what: &str) -> Result<Vec<String>> {
    let mut ids = Vec::with_capacity(expected);
    for line in BufReader::new(open_file(path)?).lines() {
        let line = line?;
        let id = line.trim();
        if !id.is_empty() {
            ids.push(id.to_string());
        }
    }
    if ids.len() != expected {
        return Err(IkeError::Param(format!("{what} file lists {} ids for {expected} vectors", ids.len())));
    }
    Ok(ids)
}

fn read_corpus(path: &Path, limit: Option<usize>) -> Result<EmbeddingMatrix> {
    let Some(limit) = limit else { return read_matrix(path) };
    let mut reader = VectorReader::open(path)?;
    let mut rows = Vec::new();
    while rows.len() / reader.d().max(1) < limit {
        let want = limit - rows.len() / reader.d().max(1);
        match reader.next_chunk(want.min(65536))? {
            Some(chunk) => rows.extend(chunk),
            None => break,
        }
    }
    if rows.is_empty() {
        return Err(IkeError::Param(format!("{} holds no vectors", path.display())));
    }
    EmbeddingMatrix::new(rows.len() / reader.d(), reader.d(), rows)
}

fn check_model_codes(model: &IkeModel, codes: &PackedCodes) -> Result<()> {
    if (model.t(), model.n_b()) != (codes.t(), codes.n_b()) {
        return Err(IkeError::Encoding(format!(
            "codes have t={}, n_b={} but the model produces t={}, n_b={}",
            codes.t(),
            codes.n_b(),
            model.t(),
            model.n_b()
        )));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn build(
    corpus: &Path,
    kind: Kind,
    t: Option<usize>,
    psi: usize,
    m: Option<usize>,
    seed: u64,
    sample_limit: Option<usize>,
    out: &Path,
) -> Result<()> {
    let data = read_corpus(corpus, sample_limit)?;
    let kind = model_kind(kind);
    let t = t.unwrap_or(data.d());
    let mut params = IkeParams::new(t, if kind == ModelKind::Rplsh { 2 } else { psi }, seed)?;
    if let Some(m) = m {
        params = params.with_subspace(m);
    }
    let start = Instant::now();
    let model = IkeModel::build(kind, &data, &params)?;
    let build_seconds = start.elapsed().as_secs_f64();
    let mut w = create(out)?;
    model.write_to(&mut w)?;
    w.flush()?;

    let p = model.params();
    let bytes = p.bytes_per_point();
    Summary::new("build")
        .set("kind", kind_name(kind))
        .set("n", data.n())
        .set("d", data.d())
        .set("t", p.t)
        .set("psi", p.psi)
        .set("n_b", p.n_b)
        .set("m", p.m)
        .set("seed", seed)
        .set("bytes_per_point", bytes)
        .set("compression_vs_f32", (data.d() * 4) as f64 / bytes as f64)
        .set("build_seconds", build_seconds)
        .set("out", out.display().to_string())
        .emit();
    Ok(())
}

pub fn encode(model: &Path, vectors: &Path, out: &Path, chunk: usize) -> Result<()> {
    if chunk == 0 {
        return Err(IkeError::Param("--chunk must be at least 1".into()));
    }
    let model = load_model(model)?;
    let mut reader = VectorReader::open(vectors)?;
    if reader.d() != 0 && reader.d() != model.d() {
        return Err(IkeError::Param(format!("vectors have d={}, model expects d={}", reader.d(), model.d())));
    }
    let start = Instant::now();
    let mut writer = CodeWriter::new(BufWriter::new(create_file(out)?), model.t(), model.n_b())?;
    while let Some(rows) = reader.next_chunk(chunk)? {
        writer.append(&model.encode(&rows)?)?;
    }
    let n = writer.finish()?;
    let seconds = start.elapsed().as_secs_f64();
    let bytes = model.params().bytes_per_point();
    Summary::new("encode")
        .set("n", n)
        .set("t", model.t())
        .set("n_b", model.n_b())
        .set("bytes_per_point", bytes)
        .set("code_bytes", n * bytes)
        .set("seconds", seconds)
        .set("vectors_per_second", if seconds > 0.0 { n as f64 / seconds } else { 0.0 })
        .set("out", out.display().to_string())
        .emit();
    Ok(())
}

enum Strategy {
    Exhaustive,
    Hnsw(HnswIndex, usize),
    Ivf(IvfIndex, usize),
}

impl Strategy {
    fn name(&self) -> String {
        match self {
            Strategy::Exhaustive => "exhaustive".into(),
            Strategy::Hnsw(_, ef) => format!("hnsw(ef_search={ef})"),
            Strategy::Ivf(_, np) => format!("ivf(nprobe={np})"),
        }
    }
}

/// Everything a search needs, loaded and cross-checked.
struct Searcher {
    model: IkeModel,
    codes: PackedCodes,
    queries: EmbeddingMatrix,
    strategy: Strategy,
    k: usize,
}

impl Searcher {
    fn open(args: &SearchArgs) -> Result<Searcher> {
        let model = load_model(&args.model)?;
        let codes = load_codes(&args.codes)?;
        check_model_codes(&model, &codes)?;
        let queries = read_matrix(&args.queries)?;
        if queries.d() != model.d() {
            return Err(IkeError::Param(format!("queries have d={}, model expects d={}", queries.d(), model.d())));
        }
        let s = &args.strategy;
        let strategy = if let Some(p) = &s.hnsw {
            let idx = HnswIndex::read_from(BufReader::new(open_file(p)?))?;
            if idx.n() != codes.n() {
                return Err(IkeError::Param(format!("HNSW index covers {} points, code file has {}", idx.n(), codes.n())));
            }
            if args.ef_search < args.k {
                return Err(IkeError::Param(format!("--ef-search {} must be at least k={}", args.ef_search, args.k)));
            }
            Strategy::Hnsw(idx, args.ef_search)
        } else if let Some(p) = &s.ivf {
            let idx = IvfIndex::read_from(BufReader::new(open_file(p)?))?;
            if idx.d() != model.d() {
                return Err(IkeError::Param(format!("IVF centroids have d={}, model expects d={}", idx.d(), model.d())));
            }
            Strategy::Ivf(idx, args.nprobe)
        } else {
            Strategy::Exhaustive
        };
        if args.k == 0 {
            return Err(IkeError::Param("k must be at least 1".into()));
        }
        Ok(Searcher { model, codes, queries, strategy, k: args.k })
    }

    fn query(&self, qcodes: &PackedCodes, q: usize) -> Result<SearchResult> {
        let code = qcodes.code(q);
        match &self.strategy {
            Strategy::Exhaustive => exhaustive_topk(&self.codes, code, self.k),
            Strategy::Hnsw(idx, ef) => idx.search(&self.codes, code, self.k, *ef),
            Strategy::Ivf(idx, np) => idx.search(&self.codes, self.queries.row(q), code, self.k, *np),
        }
    }

    fn search_all(&self, qcodes: &PackedCodes) -> Result<Vec<SearchResult>> {
        (0..qcodes.n()).into_par_iter().map(|q| self.query(qcodes, q)).collect()
    }
}

fn machine() -> Value {
    json!({
        "arch": std::env::consts::ARCH,
        "os": std::env::consts::OS,
        "cpus": std::thread::available_parallelism().map_or(1, |p| p.get()),
        "popcnt": popcnt(),
    })
}

fn popcnt() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::is_x86_feature_detected!("popcnt")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

pub fn search(
    args: &SearchArgs,
    out: &Path,
    qids: Option<&Path>,
    docids: Option<&Path>,
    tag: &str,
    timing: bool,
    threads: usize,
) -> Result<()> {
    let s = Searcher::open(args)?;
    let qids = qids.map(|p| read_ids(p, s.queries.n(), "query id")).transpose()?;
    let docids = docids.map(|p| read_ids(p, s.codes.n(), "document id")).transpose()?;
    let start = Instant::now();
    let qcodes = s.model.encode_matrix(&s.queries)?;
    let map_seconds = start.elapsed().as_secs_f64();
    let results = s.search_all(&qcodes)?;
    let seconds = start.elapsed().as_secs_f64();
    let run = RunFile::from_results(&results, qids.as_deref(), docids.as_deref());
    let mut w = create(out)?;
    run.write(&mut w, tag)?;
    w.flush()?;

    let mut summary = Summary::new("search");
    summary
        .set("strategy", s.strategy.name())
        .set("queries", s.queries.n())
        .set("k", s.k)
        .set("mapping_seconds", map_seconds)
        .set("seconds", seconds)
        .set("out", out.display().to_string());
    if timing {
        let rep = measure_qps(
            |q| {
                let _ = s.query(&qcodes, q);
            },
            qcodes.n(),
            1,
            1,
            threads,
        )?;
        summary
            .set("threads", rep.threads)
            .set("qps", rep.qps)
            .set("mean_latency_us", rep.mean_latency_us)
            .set("p50_latency_us", rep.p50_latency_us)
            .set("p99_latency_us", rep.p99_latency_us);
    }
    summary.emit();
    Ok(())
}

pub fn index_hnsw(codes: &Path, m: usize, ef_construction: usize, seed: u64, out: &Path) -> Result<()> {
    let codes = load_codes(codes)?;
    let start = Instant::now();
    let idx = HnswIndex::build(&codes, m, ef_construction, seed)?;
    let seconds = start.elapsed().as_secs_f64();
    let mut w = create(out)?;
    idx.write_to(&mut w)?;
    w.flush()?;
    Summary::new("index-hnsw")
        .set("n", idx.n())
        .set("m", m)
        .set("ef_construction", ef_construction)
        .set("max_level", idx.max_level())
        .set("build_seconds", seconds)
        .set("out", out.display().to_string())
        .emit();
    Ok(())
}

pub fn index_ivf(corpus: &Path, codes: &Path, nlist: Option<usize>, iters: usize, seed: u64, out: &Path) -> Result<()> {
    let data = read_matrix(corpus)?;
    let codes = load_codes(codes)?;
    if data.n() != codes.n() {
        return Err(IkeError::Param(format!("corpus has {} vectors but the code file has {}", data.n(), codes.n())));
    }
    let nlist = nlist.unwrap_or_else(|| ((data.n() as f64).sqrt().round() as usize).max(1));
    let start = Instant::now();
    let idx = IvfIndex::build(&data, &codes, nlist, iters, seed)?;
    let seconds = start.elapsed().as_secs_f64();
    let mut w = create(out)?;
    idx.write_to(&mut w)?;
    w.flush()?;
    let sizes: Vec<usize> = (0..nlist).map(|j| idx.list(j).len()).collect();
    Summary::new("index-ivf")
        .set("n", data.n())
        .set("nlist", nlist)
        .set("iters", iters)
        .set("largest_list", sizes.iter().copied().max().unwrap_or(0))
        .set("smallest_list", sizes.iter().copied().min().unwrap_or(0))
        .set("build_seconds", seconds)
        .set("out", out.display().to_string())
        .emit();
    Ok(())
}

pub struct TuneArgs {
    pub corpus: PathBuf,
    pub queries: PathBuf,
    pub qrels: PathBuf,
    pub lo: usize,
    pub hi: usize,
    pub kind: Kind,
    pub t: Option<usize>,
    pub m: Option<usize>,
    pub seed: u64,
    pub k: usize,
    pub qids: Option<PathBuf>,
    pub docids: Option<PathBuf>,
}

pub fn tune_psi(a: &TuneArgs) -> Result<()> {
    if a.lo > a.hi {
        return Err(IkeError::Param(format!("empty psi range {}..{}", a.lo, a.hi)));
    }
    if a.kind == Kind::Rplsh {
        return Err(IkeError::Param("rplsh has no psi to tune".into()));
    }
    let corpus = read_matrix(&a.corpus)?;
    let queries = read_matrix(&a.queries)?;
    if queries.d() != corpus.d() {
        return Err(IkeError::Param(format!("queries have d={}, corpus has d={}", queries.d(), corpus.d())));
    }
    let qrels = Qrels::parse(BufReader::new(open_file(&a.qrels)?))?;
    let qids = a.qids.as_deref().map(|p| read_ids(p, queries.n(), "query id")).transpose()?;
    let docids = a.docids.as_deref().map(|p| read_ids(p, corpus.n(), "document id")).transpose()?;
    let t = a.t.unwrap_or(corpus.d());
    let metric = format!("ndcg@{}", a.k);

    let mut rows = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    for psi in a.lo..=a.hi {
        let mut params = IkeParams::new(t, psi, a.seed)?;
        if let Some(m) = a.m {
            params = params.with_subspace(m);
        }
        let model = IkeModel::build(model_kind(a.kind), &corpus, &params)?;
        let results = exhaustive_batch(&model.encode_matrix(&corpus)?, &model.encode_matrix(&queries)?, a.k)?;
        let run = RunFile::from_results(&results, qids.as_deref(), docids.as_deref());
        let score = ndcg_at_k(&run, &qrels, a.k)?;
        // Strictly greater, so ties keep the smaller psi.
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((psi, score));
        }
        rows.push(vec![json!(psi), json!(params.n_b), json!(params.bytes_per_point()), json!(score)]);
    }
    table(&["psi", "n_b", "bytes_per_point", metric.as_str()], &rows);
    let (psi, score) = best.expect("range is non-empty");
    Summary::new("tune-psi")
        .set("candidates", rows.len())
        .set("best_psi", psi)
        .set(&metric, score)
        .set("t", t)
        .set("seed", a.seed)
        .emit();
    Ok(())
}

pub fn eval(run: &Path, qrels: &Path, k: usize, min_grade: u32, truth: Option<&Path>) -> Result<()> {
    let run = RunFile::parse(BufReader::new(open_file(run)?))?;
    let qrels = Qrels::parse(BufReader::new(open_file(qrels)?))?;
    let mut rows = vec![
        vec![json!(format!("mrr@{k}")), json!(mrr_at_k(&run, &qrels, k, min_grade)?)],
        vec![json!(format!("ndcg@{k}")), json!(ndcg_at_k(&run, &qrels, k)?)],
    ];
    if let Some(truth) = truth {
        let truth = RunFile::parse(BufReader::new(open_file(truth)?))?;
        rows.push(vec![json!(format!("recall_overlap@{k}")), json!(recall_overlap(&run, &truth, k)?)]);
    }
    table(&["metric", "value"], &rows);
    Ok(())
}

pub fn bench(args: &SearchArgs, runs: usize, warmup: usize, float_baseline: Option<&Path>, threads: usize) -> Result<()> {
    if runs == 0 {
        return Err(IkeError::Param("--runs must be at least 1".into()));
    }
    let s = Searcher::open(args)?;
    let nq = s.queries.n();

    for _ in 0..warmup {
        s.model.encode_matrix(&s.queries)?;
    }
    let mut map_total = 0.0;
    let mut qcodes = None;
    for _ in 0..runs {
        let start = Instant::now();
        qcodes = Some(s.model.encode_matrix(&s.queries)?);
        map_total += start.elapsed().as_secs_f64();
    }
    let qcodes = qcodes.expect("runs >= 1");
    let mapping_seconds = map_total / runs as f64;
    let search = measure_qps(
        |q| {
            let _ = std::hint::black_box(s.query(&qcodes, q));
        },
        nq,
        warmup,
        runs,
        threads,
    )?;
    let total = mapping_seconds + search.run_seconds;

    let mut summary = Summary::new("bench");
    summary
        .set("strategy", s.strategy.name())
        .set("queries", nq)
        .set("database", s.codes.n())
        .set("t", s.codes.t())
        .set("n_b", s.codes.n_b())
        .set("k", s.k)
        .set("threads", search.threads)
        .set("runs", runs)
        .set("warmup_runs", warmup)
        .set("mapping_seconds", mapping_seconds)
        .set("search_seconds", search.run_seconds)
        .set("total_seconds", total)
        .set("qps", nq as f64 / total)
        .set("search_qps", search.qps)
        .set("search_qps_std", search.qps_std)
        .set("mean_latency_us", search.mean_latency_us)
        .set("p50_latency_us", search.p50_latency_us)
        .set("p99_latency_us", search.p99_latency_us)
        .set("machine", machine());
    if let Some(path) = float_baseline {
        let corpus = read_matrix(path)?;
        if corpus.d() != s.queries.d() {
            return Err(IkeError::Param(format!("baseline corpus has d={}, queries have d={}", corpus.d(), s.queries.d())));
        }
        let base = measure_qps(
            |q| {
                let _ = std::hint::black_box(dot_topk(&corpus, s.queries.row(q), s.k));
            },
            nq,
            warmup,
            runs,
            threads,
        )?;
        summary
            .set("float_scan_seconds", base.run_seconds)
            .set("float_scan_qps", base.qps)
            .set("speedup_search_vs_float", base.run_seconds / search.run_seconds)
            .set("speedup_total_vs_float", base.run_seconds / total);
    }
    summary.emit();
    Ok(())
}

pub struct PropertyArgs {
    pub check: Check,
    pub method: Method,
    pub m: usize,
    pub d: usize,
    pub n: usize,
    pub psi: usize,
    pub trees: usize,
    pub pairs: usize,
    pub t: usize,
    pub groups: usize,
    pub seed: u64,
}

fn with_pass<T: serde::Serialize>(report: &T, pass: bool) -> Value {
    let mut v = serde_json::to_value(report).expect("reports serialize");
    if let Value::Object(m) = &mut v {
        m.insert("pass".into(), pass.into());
    }
    v
}

pub fn check_properties(a: &PropertyArgs) -> Result<()> {
    let method = match a.method {
        Method::Iforest => properties::Method::IForest,
        Method::Voronoi => properties::Method::Voronoi { m: a.m },
        Method::Vdeh => properties::Method::Voronoi { m: a.d },
    };
    let data = ike_core::synth::uniform(a.n, a.d, a.seed)?;
    let run = |c: Check| a.check == Check::All || a.check == c;

    if run(Check::Entropy) {
        let rep = check_entropy(method, &data, &data, a.psi, a.trees, a.seed.wrapping_add(1))?;
        json_report("entropy", &with_pass(&rep, rep.mean_entropy >= 0.95 * rep.max_entropy));
    }
    if run(Check::Bits) {
        let rep = check_bit_independence(method, &data, &data, a.trees.max(2), a.seed.wrapping_add(2))?;
        let pass = rep.within_mean_abs_corr.is_some_and(|c| c <= 0.05)
            && rep.between_pooled_corr.is_some_and(|c| c.abs() <= 0.05);
        json_report("bits", &with_pass(&rep, pass));
    }
    if run(Check::Rho) {
        let pairs = random_pairs(a.n, a.pairs, a.seed)?;
        let methods = [
            properties::Method::Voronoi { m: a.d },
            properties::Method::Voronoi { m: 1 },
            properties::Method::IForest,
        ];
        let ests = methods
            .iter()
            .map(|&m| estimate_rho(m, &data, &pairs, a.psi, a.t, a.groups, a.seed.wrapping_add(3)))
            .collect::<Result<Vec<_>>>()?;
        let gap = |i: usize| {
            (ests[i].rho - ests[i + 1].rho) / (ests[i].stderr.powi(2) + ests[i + 1].stderr.powi(2)).sqrt()
        };
        let (g1, g2) = (gap(0), gap(1));
        let ordered = g1 > 2.0 && g2 > 2.0 && ests[2].rho >= -3.0 * ests[2].stderr;
        json_report(
            "rho",
            &json!({
                "vdeh": ests[0],
                "voronoi_m1": ests[1],
                "iforest": ests[2],
                "gap_vdeh_vd1_se": g1,
                "gap_vd1_iforest_se": g2,
                "pass": ordered,
            }),
        );
    }
    if run(Check::Variance) {
        let small = kernel_spread(method, &data, 0, 1, a.psi, 200, 50, a.seed.wrapping_add(4))?;
        let large = kernel_spread(method, &data, 0, 1, a.psi, 2000, 50, a.seed.wrapping_add(4))?;
        let pass = large.variance < small.variance;
        json_report("variance", &json!({ "t200": small, "t2000": large, "pass": pass }));
    }
    Ok(())
}
