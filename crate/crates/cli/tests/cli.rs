use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fsr_cli::commands::{query_results, Pooling, QueryArgs};
use fsr_cli::evaluate::{evaluate, evaluate_online, EvalConfig, EvalVariant, LabelledData};
use fsr_cli::metrics::average_precision;
use fsr_cli::pipeline::{decompose, DecomposeParams, Graph, Method};
use fsr_cli::synth::{generate_synthetic, SyntheticManifoldSpec};
use fsr_core::graph::graph_builds_on_this_thread;
use fsr_core::rng::SeqRng;

fn fsr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fsr"))
        .args(args)
        .env("FSR_THREADS", "2")
        .output()
        .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Files {
    _dir: tempfile::TempDir,
    data: PathBuf,
    queries: PathBuf,
    graph: PathBuf,
    dec: PathBuf,
}

fn pipeline(method: &str) -> Files {
    let dir = tempfile::tempdir().unwrap();
    let f = Files {
        data: dir.path().join("data.fsrd"),
        queries: dir.path().join("queries.fsrd"),
        graph: dir.path().join("graph.fsrg"),
        dec: dir.path().join("dec.fsrx"),
        _dir: dir,
    };
    let out = fsr(&[
        "gen",
        "--points",
        "40",
        "--queries-per-manifold",
        "2",
        "--out",
        p(&f.data),
        "--queries-out",
        p(&f.queries),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out = fsr(&[
        "graph",
        "--descriptors",
        p(&f.data),
        "-k",
        "10",
        "--out",
        p(&f.graph),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out = fsr(&[
        "decompose",
        "--graph",
        p(&f.graph),
        "--method",
        method,
        "-r",
        "30",
        "--out",
        p(&f.dec),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    f
}

#[test]
fn end_to_end_query_output() {
    let f = pipeline("approx");
    let out = fsr(&[
        "query",
        "--decomposition",
        p(&f.dec),
        "--descriptors",
        p(&f.data),
        "--queries",
        p(&f.queries),
        "--obs-k",
        "10",
        "--top",
        "5",
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("query\trank\timage\tscore"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 10 * 5);
    assert!(rows.iter().all(|r| r.len() == 4));
    let scores: Vec<f64> = rows[..5].iter().map(|r| r[3].parse().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn query_reads_files_without_building_a_graph() {
    let f = pipeline("exact");
    let before = graph_builds_on_this_thread();
    let args = QueryArgs {
        decomposition: f.dec.clone(),
        descriptors: f.data.clone(),
        queries: f.queries.clone(),
        normalize: false,
        alpha: 0.99,
        gamma: 3.0,
        obs_k: 10,
        fsrw: false,
        copy_outside_giant: None,
        pooling: Pooling::Sum,
        top: 0,
        json: true,
    };
    let results = query_results(&args).unwrap();
    assert_eq!(graph_builds_on_this_thread(), before);
    assert_eq!(results.len(), 10);
    assert!(results.iter().all(|r| r.image_ids.len() == 200));

    let data = fsr_core::io::read_descriptors(&f.data, false).unwrap();
    Graph::build(&data, 10, 3.0).unwrap();
    assert_eq!(graph_builds_on_this_thread(), before + 1);
}

#[test]
fn solve_methods_agree() {
    let f = pipeline("exact");
    let run = |method: &str| -> fsr_core::baseline::SolverReport {
        let mut args = vec![
            "solve",
            "--graph",
            p(&f.graph),
            "--descriptors",
            p(&f.data),
            "--queries",
            p(&f.queries),
            "--obs-k",
            "10",
            "--alpha",
            "0.9",
            "--method",
            method,
            "--series-T",
            "400",
        ];
        if method == "spectral" {
            args.extend(["--decomposition", p(&f.dec)]);
        }
        let out = fsr(&args);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        serde_json::from_slice(&out.stdout).unwrap()
    };
    let cg = run("cg");
    assert!(cg.converged);
    for method in ["rwr", "series", "spectral"] {
        let other = run(method);
        let scale = cg.solution.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let diff = fsr_core::baseline::relative_inf_distance(&other.solution, &cg.solution);
        assert!(diff < 1e-4 * scale.max(1.0), "{method}: {diff}");
    }
}

#[test]
fn exit_codes() {
    let f = pipeline("approx");
    assert_eq!(fsr(&["query", "--bogus"]).status.code(), Some(1));
    assert_eq!(fsr(&[]).status.code(), Some(1));
    assert_eq!(fsr(&["--help"]).status.code(), Some(0));
    let missing = fsr(&[
        "query",
        "--decomposition",
        "/nonexistent/dec.fsrx",
        "--descriptors",
        p(&f.data),
        "--queries",
        p(&f.queries),
    ]);
    assert_eq!(missing.status.code(), Some(3));

    let mut bytes = std::fs::read(&f.dec).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    std::fs::write(&f.dec, &bytes).unwrap();
    let corrupt = fsr(&[
        "query",
        "--decomposition",
        p(&f.dec),
        "--descriptors",
        p(&f.data),
        "--queries",
        p(&f.queries),
    ]);
    assert_eq!(corrupt.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&corrupt.stderr).contains("checksum"));

    let bad_k = fsr(&[
        "graph",
        "--descriptors",
        p(&f.data),
        "-k",
        "0",
        "--out",
        p(&f.graph),
    ]);
    assert_eq!(bad_k.status.code(), Some(1));
    let threads = Command::new(env!("CARGO_BIN_EXE_fsr"))
        .args(["gen", "--out", p(&f.data)])
        .env("FSR_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(threads.status.code(), Some(1));
}

#[test]
fn evaluate_command_reads_config_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("eval.json");
    std::fs::write(
        &config,
        r#"{"version": 1, "synthetic": {"points_per_manifold": 40, "queries_per_manifold": 2},
            "rank": 40, "variants": ["exact", "euclidean"]}"#,
    )
    .unwrap();
    let out = fsr(&[
        "evaluate",
        "--config",
        p(&config),
        "--csv",
        "--alpha",
        "0.9",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("variant,map,"));
    assert_eq!(text.lines().count(), 3);

    std::fs::write(&config, r#"{"version": 2}"#).unwrap();
    assert_eq!(
        fsr(&["evaluate", "--config", p(&config)]).status.code(),
        Some(1)
    );
}

fn small_config() -> EvalConfig {
    EvalConfig {
        synthetic: SyntheticManifoldSpec {
            points_per_manifold: 60,
            queries_per_manifold: 4,
            ..SyntheticManifoldSpec::default()
        },
        rank: 300,
        rho: 300,
        ..EvalConfig::default()
    }
}

#[test]
fn evaluation_is_deterministic_and_consistent() {
    let config = small_config();
    let labelled = LabelledData::synthetic(&config.synthetic).unwrap();
    let a = evaluate(&labelled, &config).unwrap();
    let b = evaluate(&labelled, &config).unwrap();
    for (x, y) in a.variants.iter().zip(&b.variants) {
        assert_eq!(x.per_query_ap, y.per_query_ap, "{}", x.name);
        let m = x.per_query_ap.iter().sum::<f64>() / x.per_query_ap.len() as f64;
        assert_eq!(x.map, m);
        assert!((0.0..=1.0).contains(&x.map));
    }
    let exact = a.variant(EvalVariant::Exact).unwrap();
    let rank_n = a.variant(EvalVariant::RankR).unwrap();
    assert_eq!(rank_n.rank, Some(300));
    assert_eq!(exact.map, rank_n.map);

    let euclid = a.variant(EvalVariant::Euclidean).unwrap();
    let alpha0 = EvalConfig {
        alpha: 0.0,
        variants: vec![EvalVariant::Exact],
        ..config.clone()
    };
    let direct = evaluate(&labelled, &alpha0).unwrap();
    assert_eq!(direct.variants[0].map, euclid.map);
    assert!(exact.map > euclid.map);
}

#[test]
fn online_evaluation_needs_a_decomposition() {
    let config = EvalConfig {
        variants: vec![EvalVariant::Exact],
        ..small_config()
    };
    let labelled = LabelledData::synthetic(&config.synthetic).unwrap();
    assert!(evaluate_online(&labelled, None, &config).is_err());
    let graph = Graph::build(&labelled.data, config.k, config.gamma).unwrap();
    let dec = decompose(
        &graph,
        &DecomposeParams {
            method: Method::Exact,
            ..DecomposeParams::default()
        },
    )
    .unwrap();
    let online = evaluate_online(&labelled, Some(&dec), &config).unwrap();
    let full = evaluate(&labelled, &config).unwrap();
    assert_eq!(
        online.variants[0].per_query_ap,
        full.variants[0].per_query_ap
    );
}

#[test]
fn average_precision_matches_direct_formula() {
    let mut rng = SeqRng::new(5);
    for _ in 0..50 {
        let mut ids: Vec<u32> = (0..20).collect();
        for i in (1..20).rev() {
            ids.swap(i, rng.below(i + 1));
        }
        let positives: HashSet<u32> = ids.iter().copied().filter(|&i| i % 4 == 0).collect();
        assert_eq!(positives.len(), 5);
        let ranks: Vec<usize> = (0..20)
            .filter(|&r| positives.contains(&ids[r]))
            .map(|r| r + 1)
            .collect();
        let expected: f64 = ranks
            .iter()
            .enumerate()
            .map(|(j, &r)| (j + 1) as f64 / r as f64)
            .sum::<f64>()
            / 5.0;
        assert!((average_precision(&ids, &positives).unwrap() - expected).abs() < 1e-15);
    }
}

#[test]
fn noiseless_manifolds_have_same_label_nearest_neighbors() {
    let spec = SyntheticManifoldSpec {
        manifolds: 2,
        sigma: 0.0,
        ..SyntheticManifoldSpec::default()
    };
    let s = generate_synthetic(&spec).unwrap();
    for i in 0..s.data.len() {
        let v = s.data.vector(i);
        let sim = |j: usize| fsr_core::graph::similarity(v, s.data.vector(j), 1.0).unwrap();
        let nn = (0..s.data.len())
            .filter(|&j| j != i)
            .max_by(|&a, &b| sim(a).total_cmp(&sim(b)))
            .unwrap();
        assert_eq!(s.labels[nn], s.labels[i]);
    }
}

#[test]
fn synthetic_generation_is_deterministic() {
    let spec = SyntheticManifoldSpec::default();
    let a = generate_synthetic(&spec).unwrap();
    let b = generate_synthetic(&spec).unwrap();
    let bits = |d: &fsr_core::DescriptorSet| -> Vec<u64> {
        d.vectors()
            .flat_map(|v| v.iter().map(|x| x.to_bits()))
            .collect()
    };
    assert_eq!(bits(&a.data), bits(&b.data));
    assert_eq!(a.labels, b.labels);
    assert_eq!(a.queries, b.queries);
}

#[test]
fn default_synthetic_graph_separates_the_manifolds() {
    let s = generate_synthetic(&SyntheticManifoldSpec::default()).unwrap();
    let graph = Graph::build(&s.data, 10, 3.0).unwrap();
    let c = &graph.components;
    assert!(c.count() >= 5, "{} components", c.count());
    for i in 0..s.data.len() {
        for (j, _) in graph.adjacency.row(i) {
            assert_eq!(s.labels[i], s.labels[j]);
        }
    }
}
