use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ike_core::io::write_fvecs;
use ike_core::synth::{uniform, Clusters};
use ike_core::{EmbeddingMatrix, IkeModel, PackedCodes};
use serde_json::Value;
use tempfile::TempDir;

fn ike_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ike"));
    cmd.args(args).env_remove("IKE_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn ike(args: &[&str]) -> Output {
    ike_env(args, &[])
}

fn ok(args: &[&str]) -> Vec<Value> {
    let out = ike(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    json_lines(&out)
}

fn json_lines(out: &Output) -> Vec<Value> {
    String::from_utf8(out.stdout.clone())
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).expect("stdout is JSON lines"))
        .collect()
}

struct Fixture {
    dir: TempDir,
    data: EmbeddingMatrix,
}

impl Fixture {
    fn new() -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        let shape = Clusters { n: 1500, d: 24, clusters: 15, latent: 4, spread: 1.0, noise: 0.05 };
        let (data, _) = shape.generate(5).unwrap();
        write_fvecs(&dir.path().join("corpus.fvecs"), data.d(), data.as_slice()).unwrap();
        let queries = data.select(&(0..40).collect::<Vec<_>>());
        write_fvecs(&dir.path().join("queries.fvecs"), queries.d(), queries.as_slice()).unwrap();
        Fixture { dir, data }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn p(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }

    fn build_and_encode(&self, psi: &str) {
        ok(&["build", "--corpus", &self.p("corpus.fvecs"), "--psi", psi, "--t", "128", "--seed", "3", "-o", &self.p("m.ike")]);
        ok(&["encode", "--model", &self.p("m.ike"), "--vectors", &self.p("corpus.fvecs"), "-o", &self.p("c.ikec")]);
    }
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

#[test]
fn build_reports_code_size() {
    let dir = tempfile::tempdir().unwrap();
    let wide = uniform(20, 4096, 1).unwrap();
    let corpus = dir.path().join("wide.fvecs");
    write_fvecs(&corpus, 4096, wide.as_slice()).unwrap();
    let c = corpus.to_str().unwrap();
    let m = dir.path().join("m.ike");
    let m = m.to_str().unwrap();

    let line = &ok(&["build", "--corpus", c, "--kind", "iforest", "--psi", "2", "--t", "4096", "-o", m])[0];
    assert_eq!(line["n_b"], 1);
    assert_eq!(line["bytes_per_point"], 512);

    // t defaults to d.
    let line = &ok(&["build", "--corpus", c, "--psi", "12", "-o", m])[0];
    assert_eq!(line["t"], 4096);
    assert_eq!(line["n_b"], 4);
    assert_eq!(line["compression_vs_f32"], 8.0);
}

#[test]
fn same_seed_same_model_bytes() {
    let f = Fixture::new();
    for (i, kind) in ["iforest", "voronoi", "rplsh"].iter().enumerate() {
        let a = f.p(&format!("a{i}.ike"));
        let b = f.p(&format!("b{i}.ike"));
        for out in [&a, &b] {
            ok(&["build", "--corpus", &f.p("corpus.fvecs"), "--kind", kind, "--psi", "8", "--m", "6", "--seed", "9", "-o", out]);
        }
        assert_eq!(read(Path::new(&a)), read(Path::new(&b)), "{kind}");
    }
}

#[test]
fn thread_count_does_not_change_artifacts() {
    let f = Fixture::new();
    let mut outputs = Vec::new();
    for (threads, env) in [("1", None), ("4", None), ("1", Some("3"))] {
        let (m, c) = (f.p(&format!("m{threads}{env:?}.ike")), f.p(&format!("c{threads}{env:?}.ikec")));
        let envs: Vec<(&str, &str)> = env.map(|v| vec![("IKE_THREADS", v)]).unwrap_or_default();
        for args in [
            vec!["--threads", threads, "build", "--corpus", &f.p("corpus.fvecs"), "--psi", "6", "--seed", "1", "-o", &m],
            vec!["--threads", threads, "encode", "--model", &m, "--vectors", &f.p("corpus.fvecs"), "--chunk", "100", "-o", &c],
        ] {
            assert!(ike_env(&args, &envs).status.success());
        }
        outputs.push((read(Path::new(&m)), read(Path::new(&c))));
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));

    let bad = ike_env(&["build", "--corpus", &f.p("corpus.fvecs"), "-o", &f.p("x.ike")], &[("IKE_THREADS", "zero")]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn encoded_codes_match_direct_mapping() {
    let f = Fixture::new();
    f.build_and_encode("5");
    let model = IkeModel::read_from(read(&f.path("m.ike")).as_slice()).unwrap();
    let codes = PackedCodes::read_from(read(&f.path("c.ikec")).as_slice()).unwrap();
    assert_eq!(codes.n(), f.data.n());
    for i in (0..f.data.n()).step_by(15) {
        assert_eq!(codes.unpack(i), model.map_point(f.data.row(i)).unwrap(), "row {i}");
    }
}

#[test]
fn empty_input_gives_empty_code_file() {
    let f = Fixture::new();
    f.build_and_encode("4");
    std::fs::write(f.path("empty.fvecs"), []).unwrap();
    let line = &ok(&["encode", "--model", &f.p("m.ike"), "--vectors", &f.p("empty.fvecs"), "-o", &f.p("e.ikec")])[0];
    assert_eq!(line["n"], 0);
    let codes = PackedCodes::read_from(read(&f.path("e.ikec")).as_slice()).unwrap();
    assert_eq!((codes.n(), codes.t(), codes.n_b()), (0, 128, 2));
}

#[test]
fn dimension_mismatch_names_both() {
    let f = Fixture::new();
    f.build_and_encode("4");
    let other = uniform(5, 7, 0).unwrap();
    write_fvecs(&f.path("d7.fvecs"), 7, other.as_slice()).unwrap();
    let out = ike(&["encode", "--model", &f.p("m.ike"), "--vectors", &f.p("d7.fvecs"), "-o", &f.p("x.ikec")]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("d=7") && err.contains("d=24"), "{err}");
}

fn run_lists(path: &Path) -> std::collections::BTreeMap<usize, Vec<String>> {
    let text = String::from_utf8(read(path)).unwrap();
    let mut lists = std::collections::BTreeMap::<usize, Vec<String>>::new();
    for line in text.lines() {
        let f: Vec<&str> = line.split_whitespace().collect();
        lists.entry(f[0].parse().unwrap()).or_default().push(f[2].to_string());
    }
    lists
}

#[test]
fn search_strategies() {
    let f = Fixture::new();
    f.build_and_encode("8");
    let base = ["search", "--model", &f.p("m.ike"), "--codes", &f.p("c.ikec"), "--queries", &f.p("queries.fvecs")];
    let with = |extra: &[&str]| base.iter().copied().chain(extra.iter().copied()).map(String::from).collect::<Vec<_>>();
    let run = |extra: &[&str]| {
        let args = with(extra);
        ok(&args.iter().map(String::as_str).collect::<Vec<_>>())
    };

    run(&["--exhaustive", "-o", &f.p("ex.run")]);
    let lists = run_lists(&f.path("ex.run"));
    assert_eq!(lists.len(), 40);
    // Queries are corpus rows 0..40; default k is 10.
    for (q, list) in &lists {
        assert_eq!(list.len(), 10);
        assert_eq!(list[0], q.to_string());
    }

    ok(&["index-ivf", "--corpus", &f.p("corpus.fvecs"), "--codes", &f.p("c.ikec"), "--nlist", "12", "-o", &f.p("v.idx")]);
    run(&["--ivf", &f.p("v.idx"), "--nprobe", "12", "-o", &f.p("ivf.run")]);
    assert_eq!(read(&f.path("ex.run")), read(&f.path("ivf.run")));

    ok(&["index-hnsw", "--codes", &f.p("c.ikec"), "--ef-construction", "64", "-o", &f.p("h.idx")]);
    let line = &run(&["--hnsw", &f.p("h.idx"), "--ef-search", "64", "-o", &f.p("h.run"), "--timing"])[0];
    assert_eq!(line["strategy"], "hnsw(ef_search=64)");
    assert!(line["qps"].as_f64().unwrap() > 0.0);

    // An IVF file handed to --hnsw is a format error.
    let args = with(&["--hnsw", &f.p("v.idx"), "-o", &f.p("x.run")]);
    let out = ike(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(out.status.code(), Some(4));
    // Both strategies at once is a usage error.
    let args = with(&["--hnsw", &f.p("h.idx"), "--ivf", &f.p("v.idx"), "-o", &f.p("x.run")]);
    assert_eq!(ike(&args.iter().map(String::as_str).collect::<Vec<_>>()).status.code(), Some(2));
}

fn write_qrels(f: &Fixture) {
    let mut s = String::new();
    for q in 0..40 {
        s.push_str(&format!("{q} 0 {q} 2\n"));
        // The next corpus point of the same cluster.
        s.push_str(&format!("{q} 0 {} 1\n", q + 15));
    }
    std::fs::write(f.path("qrels.txt"), s).unwrap();
}

#[test]
fn tune_psi_grid() {
    let f = Fixture::new();
    write_qrels(&f);
    let args = |lo: &str, hi: &str| {
        vec![
            "tune-psi".to_string(),
            "--corpus".into(),
            f.p("corpus.fvecs"),
            "--queries".into(),
            f.p("queries.fvecs"),
            "--qrels".into(),
            f.p("qrels.txt"),
            "--t".into(),
            "64".into(),
            "--lo".into(),
            lo.into(),
            "--hi".into(),
            hi.into(),
        ]
    };
    let call = |lo, hi| ok(&args(lo, hi).iter().map(String::as_str).collect::<Vec<_>>());

    let single = call("2", "2");
    let last = single.last().unwrap();
    assert_eq!(last["best_psi"], 2);
    assert_eq!(last["ndcg@10"], single[0]["ndcg@10"]);

    let full = call("2", "16");
    assert_eq!(full.last().unwrap()["candidates"], 15);
    let scores: Vec<(u64, f64)> =
        full[..15].iter().map(|r| (r["psi"].as_u64().unwrap(), r["ndcg@10"].as_f64().unwrap())).collect();
    let best = scores.iter().fold(scores[0], |b, &s| if s.1 > b.1 { s } else { b });
    assert_eq!(full.last().unwrap()["best_psi"], best.0);
    assert_eq!(call("2", "16"), full);

    let out = ike(&args("9", "3").iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(out.status.code(), Some(2));
}

fn metric(lines: &[Value], name: &str) -> f64 {
    lines.iter().find(|l| l["metric"] == name).unwrap()["value"].as_f64().unwrap()
}

#[test]
fn eval_fixtures() {
    let dir = tempfile::tempdir().unwrap();
    let qrels = dir.path().join("qrels");
    let run = dir.path().join("run");
    std::fs::write(&qrels, "q1 0 a 1\nq2 0 z 1\nq3 0 g1 3\nq3 0 g2 1\n").unwrap();
    let mut text = String::from("q1 Q0 x 1 9 t\nq1 Q0 a 2 8 t\nq3 Q0 g2 1 2 t\nq3 Q0 g1 2 1 t\n");
    for r in 0..7 {
        text.push_str(&format!("q2 Q0 n{r} {} {} t\n", r + 1, 20 - r));
    }
    text.push_str("q2 Q0 z 8 1 t\n");
    std::fs::write(&run, text).unwrap();
    let (r, q) = (run.to_str().unwrap(), qrels.to_str().unwrap());

    let at10 = ok(&["eval", "--run", r, "--qrels", q]);
    // Reciprocal ranks 1/2, 1/8, 1.
    let want = (0.5 + 0.125 + 1.0) / 3.0;
    assert!((metric(&at10, "mrr@10") - want).abs() < 1e-12);
    let at5 = ok(&["eval", "--run", r, "--qrels", q, "-k", "5"]);
    assert!((metric(&at5, "mrr@5") - 1.5 / 3.0).abs() < 1e-12);
    // q3 graded swap, q1 single relevant at rank 2, q2 at rank 8.
    let l3 = 3f64.log2();
    let ndcg = ((1.0 / l3) + (1.0 / 9f64.log2()) + (1.0 + 7.0 / l3) / (7.0 + 1.0 / l3)) / 3.0;
    assert!((metric(&at10, "ndcg@10") - ndcg).abs() < 1e-12);

    std::fs::write(&qrels, "q1 0 a 1\nq2 0 z\n").unwrap();
    let out = ike(&["eval", "--run", r, "--qrels", q]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn bench_reports_both_phases() {
    let f = Fixture::new();
    f.build_and_encode("2");
    let line = &ok(&[
        "--threads",
        "2",
        "bench",
        "--model",
        &f.p("m.ike"),
        "--codes",
        &f.p("c.ikec"),
        "--queries",
        &f.p("queries.fvecs"),
        "--runs",
        "3",
        "--float-baseline",
        &f.p("corpus.fvecs"),
    ])[0];
    assert_eq!(line["threads"], 2);
    assert_eq!(line["runs"], 3);
    let (map, search, total) = (
        line["mapping_seconds"].as_f64().unwrap(),
        line["search_seconds"].as_f64().unwrap(),
        line["total_seconds"].as_f64().unwrap(),
    );
    assert!((map + search - total).abs() < 1e-9);
    assert!(line["float_scan_seconds"].as_f64().unwrap() > 0.0);
    assert!(line["machine"]["cpus"].as_u64().unwrap() >= 1);
}

#[test]
fn check_properties_emits_reports() {
    let lines = ok(&["check-properties", "--n", "3000", "--trees", "40", "--t", "50", "--groups", "5", "--pairs", "30"]);
    let checks: Vec<&str> = lines.iter().map(|l| l["check"].as_str().unwrap()).collect();
    assert_eq!(checks, ["entropy", "bits", "rho", "variance"]);
    assert!(lines.iter().all(|l| l["pass"].is_boolean()));
    let rho = &lines[2];
    assert!(rho["vdeh"]["rho"].as_f64().unwrap() > rho["iforest"]["rho"].as_f64().unwrap());
}

#[test]
fn error_exit_codes() {
    let f = Fixture::new();
    let missing = ike(&["build", "--corpus", &f.p("missing.fvecs"), "-o", &f.p("m.ike")]);
    assert_eq!(missing.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("missing.fvecs"));

    std::fs::write(f.path("junk.ike"), b"not a model at all, really not").unwrap();
    let junk = ike(&["encode", "--model", &f.p("junk.ike"), "--vectors", &f.p("corpus.fvecs"), "-o", &f.p("c")]);
    assert_eq!(junk.status.code(), Some(4));

    let psi = ike(&["build", "--corpus", &f.p("corpus.fvecs"), "--psi", "1", "-o", &f.p("m.ike")]);
    assert_eq!(psi.status.code(), Some(2));
    let no_m = ike(&["build", "--corpus", &f.p("corpus.fvecs"), "--kind", "voronoi", "-o", &f.p("m.ike")]);
    assert_eq!(no_m.status.code(), Some(2));
}
