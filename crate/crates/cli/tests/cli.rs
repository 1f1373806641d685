use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use layerwise_uq::format::save_dataset;
use layerwise_uq::synthetic::{generate_synthetic, SyntheticSpec};
use layerwise_uq::{ActivationTrace, Dataset, DatasetHeader, DatasetKind};
use sha2::{Digest, Sha256};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_layerwise-uq"));
    c.env_remove("UQ_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    /// Small synthetic repository/queryset pair written to a temp dir.
    fn new(spec: SyntheticSpec) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let (repo, qs) = generate_synthetic(&spec).unwrap();
        save_dataset(dir.path().join("repo.tard"), &repo).unwrap();
        save_dataset(dir.path().join("queries.tard"), &qs).unwrap();
        Self { dir }
    }

    fn standard() -> Self {
        Self::new(SyntheticSpec::benchmark(400, 300, 5))
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn repo(&self) -> PathBuf {
        self.path("repo.tard")
    }

    fn queries(&self) -> PathBuf {
        self.path("queries.tard")
    }
}

fn read_dir_bytes(dir: &Path, skip_manifest: bool) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|path| !(skip_manifest && path.file_name().unwrap() == "manifest.json"))
        .map(|path| {
            (
                path.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&path).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn build_tar_prints_summary() {
    let f = Fixture::standard();
    let o = run(&[
        "build-tar",
        "--input",
        p(&f.repo()),
        "--output",
        p(&f.path("r.tar")),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "N=400 L=4 C=10 dims=[64,64,64,64]");
}

#[test]
fn truncated_file_is_an_io_failure() {
    let f = Fixture::standard();
    let bytes = fs::read(f.repo()).unwrap();
    fs::write(f.path("cut.tard"), &bytes[..bytes.len() / 2]).unwrap();
    let o = run(&[
        "build-tar",
        "--input",
        p(&f.path("cut.tard")),
        "--output",
        p(&f.path("x.tar")),
    ]);
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("TruncatedFile"), "{}", stderr(&o));
}

#[test]
fn queryset_is_not_a_repository() {
    let f = Fixture::standard();
    let o = run(&[
        "build-tar",
        "--input",
        p(&f.queries()),
        "--output",
        p(&f.path("x.tar")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("kind mismatch"), "{}", stderr(&o));
}

#[test]
fn invalid_trace_names_sample_and_layer() {
    let dir = tempfile::tempdir().unwrap();
    let header = DatasetHeader::new(DatasetKind::Repository, 2, 2, &[2, 2]);
    let ds = Dataset {
        header,
        traces: vec![
            ActivationTrace::training(10, vec![vec![0.0, 1.0], vec![1.0, 1.0]], 0),
            ActivationTrace::training(11, vec![vec![0.0, 1.0], vec![f32::NAN, 1.0]], 1),
        ],
    };
    // the writer does not validate, so a corrupt file can be produced on purpose
    let raw = layerwise_uq::format::RawTard::from_dataset(&ds);
    layerwise_uq::format::save_raw(dir.path().join("bad.tard"), &raw).unwrap();
    let o = run(&[
        "build-tar",
        "--input",
        p(&dir.path().join("bad.tard")),
        "--output",
        p(&dir.path().join("x.tar")),
    ]);
    assert_eq!(code(&o), 2);
    let msg = stderr(&o);
    assert!(
        msg.contains("sample 11") && msg.contains("layer 1"),
        "{msg}"
    );
}

#[test]
fn oversized_k_reports_the_maximum() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticSpec::uniform(2, 3, vec![1.0, 2.0], 3, 6);
    let (repo, qs) = generate_synthetic(&spec).unwrap();
    save_dataset(dir.path().join("r.tard"), &repo).unwrap();
    save_dataset(dir.path().join("q.tard"), &qs).unwrap();
    let o = run(&[
        "score",
        "--tar",
        p(&dir.path().join("r.tard")),
        "--queries",
        p(&dir.path().join("q.tard")),
        "--k",
        "5",
        "--out",
        p(&dir.path().join("out")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(
        stderr(&o).contains("KTooLarge") && stderr(&o).contains("k must be ≤ 3"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn missing_flag_is_a_usage_error() {
    let f = Fixture::standard();
    let o = run(&[
        "score",
        "--queries",
        p(&f.queries()),
        "--k",
        "3",
        "--out",
        p(&f.path("o")),
    ]);
    assert_eq!(code(&o), 64);
    assert!(stderr(&o).contains("--tar"), "{}", stderr(&o));
    assert_eq!(code(&run(&["frobnicate"])), 64);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn score_is_deterministic_and_thread_invariant() {
    let f = Fixture::standard();
    let mut outs = Vec::new();
    for (i, threads) in ["1", "1", "4"].iter().enumerate() {
        let out = f.path(&format!("s{i}"));
        let o = run(&[
            "--threads",
            threads,
            "score",
            "--tar",
            p(&f.repo()),
            "--queries",
            p(&f.queries()),
            "--k",
            "7",
            "--out",
            p(&out),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        outs.push(read_dir_bytes(&out, true));
    }
    assert_eq!(outs[0], outs[1]);
    assert_eq!(outs[0], outs[2]);
    let names: Vec<&str> = outs[0].iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["features.csv", "pbat.jsonl"]);
}

#[test]
fn threads_fall_back_to_environment() {
    let f = Fixture::standard();
    let out = f.path("env");
    let o = bin()
        .env("UQ_THREADS", "3")
        .args([
            "score",
            "--tar",
            p(&f.repo()),
            "--queries",
            p(&f.queries()),
            "--k",
            "3",
            "--out",
            p(&out),
        ])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["threads"], 3);
}

#[test]
fn cosine_changes_values_not_shapes() {
    let f = Fixture::standard();
    let mut csvs = Vec::new();
    for d in ["braycurtis", "cosine"] {
        let out = f.path(d);
        let o = run(&[
            "score",
            "--tar",
            p(&f.repo()),
            "--queries",
            p(&f.queries()),
            "--k",
            "5",
            "--distance",
            d,
            "--out",
            p(&out),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        csvs.push(fs::read_to_string(out.join("features.csv")).unwrap());
    }
    let shape = |s: &str| s.lines().map(|l| l.split(',').count()).collect::<Vec<_>>();
    assert_eq!(shape(&csvs[0]), shape(&csvs[1]));
    assert_eq!(csvs[0].lines().next(), csvs[1].lines().next());
    assert_ne!(Sha256::digest(&csvs[0]), Sha256::digest(&csvs[1]));
}

#[test]
fn manifest_digests_match_inputs() {
    let f = Fixture::standard();
    let out = f.path("m");
    let o = run(&[
        "score",
        "--tar",
        p(&f.repo()),
        "--queries",
        p(&f.queries()),
        "--k",
        "3",
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "score");
    assert_eq!(m["config"]["k"], 3);
    let expect = |path: &Path| hex::encode(Sha256::digest(fs::read(path).unwrap()));
    assert_eq!(m["inputs"][0]["sha256"], expect(&f.repo()).as_str());
    assert_eq!(m["inputs"][1]["sha256"], expect(&f.queries()).as_str());
    assert_eq!(m["outputs"][1]["path"], "features.csv");
    assert_eq!(
        m["outputs"][1]["sha256"],
        expect(&out.join("features.csv")).as_str()
    );
}

#[test]
fn sweep_table_has_four_rows_per_measure() {
    let f = Fixture::standard();
    let out = f.path("sw");
    let o = run(&[
        "sweep",
        "--tar",
        p(&f.repo()),
        "--queries",
        p(&f.queries()),
        "--k",
        "3,5,10,20",
        "--seed",
        "2",
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().filter(|l| l.starts_with("DC ")).count(), 4);
    assert_eq!(text.lines().filter(|l| l.starts_with("LU ")).count(), 4);
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 8);
    let splits: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("splits.json")).unwrap()).unwrap();
    assert_eq!(splits["test"].as_array().unwrap().len(), 60);
}

#[test]
fn config_errors_point_at_the_line() {
    let f = Fixture::standard();
    fs::write(f.path("bad.toml"), "seed = 1\ndistance = \"manhattan\"\n").unwrap();
    let o = run(&[
        "sweep",
        "--tar",
        p(&f.repo()),
        "--queries",
        p(&f.queries()),
        "--config",
        p(&f.path("bad.toml")),
        "--out",
        p(&f.path("o")),
    ]);
    assert_eq!(code(&o), 2);
    let msg = stderr(&o);
    assert!(msg.contains("bad.toml") && msg.contains("line 2"), "{msg}");
}

#[test]
fn evaluate_prints_all_models_and_reuses_a_sweep() {
    let f = Fixture::standard();
    let sw = f.path("sw");
    let o = run(&[
        "sweep",
        "--tar",
        p(&f.repo()),
        "--queries",
        p(&f.queries()),
        "--out",
        p(&sw),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ev = f.path("ev");
    let o = run(&[
        "evaluate",
        "--tar",
        p(&f.repo()),
        "--queries",
        p(&f.queries()),
        "--sweep",
        p(&sw.join("sweep.json")),
        "--out",
        p(&ev),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    for name in ["None", "SM", "DC", "LU", "DC+LU", "SM+DC+LU"] {
        assert!(
            text.lines()
                .any(|l| l.split_whitespace().next() == Some(name)),
            "{name}\n{text}"
        );
    }
    assert!(text.contains("AUROC") && text.contains("AUPR+") && text.contains("AUPR-"));
    assert!(ev.join("sm_dc_lu_roc.csv").exists());
    let o = run(&["report", "--run", p(&ev)]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("SM+DC+LU"));
}

#[test]
fn none_row_matches_accuracy_on_well_separated_data() {
    let spec = SyntheticSpec {
        seed: 8,
        ..SyntheticSpec::uniform(3, 6, vec![2.0, 3.0, 3.2], 600, 1000)
    };
    let f = Fixture::new(spec.clone());
    let (_, qs) = generate_synthetic(&spec).unwrap();
    let accuracy = 1.0 - layerwise_uq::synthetic::error_rate(&qs);
    assert!(accuracy > 0.9);
    let ev = f.path("ev");
    let o = run(&[
        "evaluate",
        "--tar",
        p(&f.repo()),
        "--queries",
        p(&f.queries()),
        "--k-dc",
        "5",
        "--k-lu",
        "10",
        "--out",
        p(&ev),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: serde_json::Value =
        serde_json::from_slice(&fs::read(ev.join("final.json")).unwrap()).unwrap();
    let none = &r["models"][0];
    assert_eq!(none["name"], "None");
    let pos = none["aupr_pos"].as_f64().unwrap();
    assert!((pos - accuracy).abs() < 0.03, "{pos} vs {accuracy}");
    assert_eq!(none["auroc"], 0.5);
}

#[test]
fn metrics_reads_score_output() {
    let f = Fixture::standard();
    let sc = f.path("sc");
    assert_eq!(
        code(&run(&[
            "score",
            "--tar",
            p(&f.repo()),
            "--queries",
            p(&f.queries()),
            "--k",
            "5",
            "--out",
            p(&sc)
        ])),
        0
    );
    let out = f.path("met");
    let o = run(&[
        "metrics",
        "--features",
        p(&sc.join("features.csv")),
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("metrics.json")).unwrap()).unwrap();
    let names: Vec<&str> = rows
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["feature"].as_str().unwrap())
        .collect();
    assert_eq!(names.first(), Some(&"sm"));
    assert!(names.contains(&"lu_sum") && names.contains(&"dc_count"));
    assert!(out.join("lu_sum_roc.csv").exists());
    fs::write(f.path("junk.csv"), "a,b\n1,2\n").unwrap();
    let o = run(&[
        "metrics",
        "--features",
        p(&f.path("junk.csv")),
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn synth_writes_loadable_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("syn");
    let o = run(&[
        "synth",
        "--n-train",
        "200",
        "--n-query",
        "50",
        "--seed",
        "4",
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let repo = layerwise_uq::format::load_dataset(out.join("repository.tard")).unwrap();
    let qs = layerwise_uq::format::load_dataset(out.join("queryset.tard")).unwrap();
    assert_eq!((repo.len(), qs.len()), (200, 50));
    let again = dir.path().join("syn2");
    run(&[
        "synth",
        "--n-train",
        "200",
        "--n-query",
        "50",
        "--seed",
        "4",
        "--out",
        p(&again),
    ]);
    assert_eq!(read_dir_bytes(&out, true), read_dir_bytes(&again, true));
}
