use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use syngrpo_core::checkpoint::{Checkpoint, TrainingState};
use syngrpo_core::diversity::DiversityState;
use syngrpo_core::env::dataset::{sample_split, Split};
use syngrpo_core::env::features::match_fraction_index;
use syngrpo_core::env::EnvConfig;
use syngrpo_core::grpo::AdamWState;
use syngrpo_core::metrics::{DetectionSet, ImageDetections, ScoredBox};
use syngrpo_core::policy::PolicyParams;
use syngrpo_core::protocol::{GenerateRequest, JobStatus};
use syngrpo_core::{BBox, ClassId, LabeledBox};
use syngrpo_oracles as oracle;
use syngrpo_server::client::{Client, Submitted};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_syngrpo"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

struct Served {
    child: Child,
    url: String,
}

impl Drop for Served {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn serve(extra: &[&str]) -> Served {
    let mut child = bin().args(["serve", "--port", "0"]).args(extra).stdout(Stdio::piped()).spawn().unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let url = line.trim().strip_prefix("listening on ").expect("banner").to_string();
    Served { child, url }
}

#[test]
fn serve_answers_health_checks() {
    let s = serve(&["--workers", "4"]);
    let h = Client::new(&s.url, Duration::from_secs(2)).health().unwrap();
    assert_eq!(h.queue_depth, 0);
}

#[test]
fn serve_rejects_bad_settings_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["serve", "--port", "99999"],
        vec!["serve", "--port", "0", "--workers", "0"],
        vec!["serve", "--config", "missing.toml"],
    ] {
        assert_eq!(run(&args, dir.path()).status.code(), Some(2), "{args:?}");
    }
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = taken.local_addr().unwrap().port().to_string();
    assert_eq!(run(&["serve", "--port", &port], dir.path()).status.code(), Some(2));
}

#[test]
fn serve_latency_flag_is_honored() {
    let s = serve(&["--latency-ms", "300"]);
    let client = Client::new(&s.url, Duration::from_secs(5));
    let scene = sample_split(&EnvConfig::default(), Split::Train, 1, 1).unwrap().remove(0);
    let mut worst = Duration::ZERO;
    let mut best = Duration::MAX;
    for seed in 0..3 {
        let t0 = Instant::now();
        let req = GenerateRequest { sample_id: 0, scene: scene.clone(), description_tokens: vec![1, 2, 3, 4], seed };
        let Submitted::Accepted(id) = client.submit(&req).unwrap() else { panic!("rejected") };
        loop {
            match client.poll(&id).unwrap() {
                JobStatus::Completed { .. } => break,
                JobStatus::Pending => std::thread::sleep(Duration::from_millis(2)),
                other => panic!("{other:?}"),
            }
        }
        let dt = t0.elapsed();
        worst = worst.max(dt);
        best = best.min(dt);
    }
    assert!(best >= Duration::from_millis(270), "{best:?}");
    assert!(worst <= Duration::from_millis(330), "{worst:?}");
}

#[test]
fn smoke_training_is_fast_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = |d: &'static str| {
        vec!["train", "--run-dir", d, "--mode", "grpo", "--seed", "4", "--pool-size", "40", "--epochs", "1", "--lr", "0.05"]
    };
    let t0 = Instant::now();
    ok(&run(&args("a"), dir.path()));
    assert!(t0.elapsed() < Duration::from_secs(60));
    ok(&run(&args("b"), dir.path()));
    let a = std::fs::read(dir.path().join("a/metrics.jsonl")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b/metrics.jsonl")).unwrap());
    assert_eq!(a.iter().filter(|&&c| c == b'\n').count(), 2);
    for f in ["config.snapshot", "ledger.jsonl", "events.log", "checkpoints/step-000002.ckpt"] {
        assert!(dir.path().join("a").join(f).exists(), "{f}");
    }
}

#[test]
fn syn_training_needs_a_server_or_degraded_mode() {
    let dir = tempfile::tempdir().unwrap();
    let base = ["train", "--run-dir", "r", "--mode", "syn", "--pool-size", "40", "--epochs", "1"];
    let out = run(&base, dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("server"));
    let mut degraded = base.to_vec();
    degraded.push("--allow-degraded");
    ok(&run(&degraded, dir.path()));

    let s = serve(&[]);
    let mut remote = base.to_vec();
    remote.extend(["--server-url", &s.url, "--sync"]);
    let stdout = ok(&run(&remote, dir.path()));
    let v: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(v["replacements_submitted"], 40);
}

#[test]
fn train_config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.toml"), "epochz = 3\n").unwrap();
    for args in [
        vec!["train", "--run-dir", "r", "--config", "bad.toml"],
        vec!["train", "--run-dir", "r", "--set", "gamma=1.5"],
        vec!["train", "--run-dir", "r", "--set", "nonsense"],
        vec!["train", "--run-dir", "r", "--mode", "ppo"],
        vec!["train"],
    ] {
        assert_eq!(run(&args, dir.path()).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn config_file_and_overrides_compose() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "epochs = 1\npool_size = 60\nlr = 0.05\n[env]\nanchors = 6\n").unwrap();
    ok(&run(&["train", "--run-dir", "r", "--config", "c.toml", "--set", "batch_size=30", "--seed", "2"], dir.path()));
    let snap: toml::Table = std::fs::read_to_string(dir.path().join("r/config.snapshot")).unwrap().parse().unwrap();
    assert_eq!(snap["batch_size"].as_integer(), Some(30));
    assert_eq!(snap["seed"].as_integer(), Some(2));
    assert_eq!(snap["env"]["anchors"].as_integer(), Some(6));
    let lines = std::fs::read_to_string(dir.path().join("r/metrics.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 2);
}

fn perfect_checkpoint(path: &Path) {
    let env = EnvConfig::default();
    let mut params = PolicyParams::zeros(env.policy_shape());
    params.as_mut_slice()[match_fraction_index(env.attributes)] = 200.0;
    let n = params.as_slice().len();
    let state = TrainingState {
        reference: params.clone(),
        params,
        adam: AdamWState::new(n),
        diversity: DiversityState::new(0.7).unwrap(),
    };
    Checkpoint::new(0, state).save(path).unwrap();
}

#[test]
fn eval_of_a_perfect_policy_is_one_and_stable() {
    let dir = tempfile::tempdir().unwrap();
    ok(&run(&["dataset", "--out", "data", "--train", "0", "--eval", "50", "--hard", "50", "--seed", "3"], dir.path()));
    perfect_checkpoint(&dir.path().join("p.ckpt"));
    let args = ["eval", "--checkpoint", "p.ckpt", "--manifest", "data/manifest.json", "--split", "hard"];
    let first = ok(&run(&args, dir.path()));
    assert_eq!(first, ok(&run(&args, dir.path())));
    let v: serde_json::Value = serde_json::from_str(&first).unwrap();
    assert_eq!(v["policy"]["accuracy"], 1.0);
    assert_eq!(v["policy"]["scenes"], 50);
}

#[test]
fn eval_reports_version_mismatches() {
    let dir = tempfile::tempdir().unwrap();
    ok(&run(&["dataset", "--out", "data", "--train", "0", "--eval", "5", "--hard", "0"], dir.path()));
    let ck = dir.path().join("p.ckpt");
    perfect_checkpoint(&ck);
    let mut j: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&ck).unwrap()).unwrap();
    j["format_version"] = 9.into();
    std::fs::write(&ck, j.to_string()).unwrap();
    let out = run(&["eval", "--checkpoint", "p.ckpt", "--manifest", "data/manifest.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("version 9"));

    perfect_checkpoint(&ck);
    let m = dir.path().join("data/manifest.json");
    let text = std::fs::read_to_string(&m).unwrap().replace("\"format_version\": 1", "\"format_version\": 2");
    std::fs::write(&m, text).unwrap();
    let out = run(&["eval", "--checkpoint", "p.ckpt", "--manifest", "data/manifest.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("version 2"));
    assert_eq!(run(&["eval"], dir.path()).status.code(), Some(2));
}

#[test]
fn eval_detection_summary_matches_the_oracle() {
    let boxes = [
        [0.0, 0.0, 0.25, 0.25],
        [0.025, 0.025, 0.25, 0.275],
        [0.5, 0.5, 0.75, 0.7],
        [0.525, 0.475, 0.775, 0.725],
        [0.125, 0.125, 0.375, 0.375],
    ];
    let bx = |i: usize| BBox::new(boxes[i][0], boxes[i][1], boxes[i][2], boxes[i][3]).unwrap();
    let preds = [(1, 0, 0.9), (3, 1, 0.8), (4, 0, 0.7), (2, 0, 0.6)];
    let gts = [(0, 0), (2, 1), (4, 1)];
    let ds = DetectionSet::new(vec![ImageDetections {
        image_id: "a".into(),
        preds: preds.iter().map(|&(b, c, s)| ScoredBox { det: LabeledBox::new(bx(b), ClassId(c)), score: s }).collect(),
        gts: gts.iter().map(|&(b, c)| LabeledBox::new(bx(b), ClassId(c))).collect(),
    }])
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut buf = Vec::new();
    ds.write_jsonl(&mut buf).unwrap();
    std::fs::write(dir.path().join("d.jsonl"), buf).unwrap();
    let v: serde_json::Value = serde_json::from_str(&ok(&run(&["eval", "--detections", "d.jsonl"], dir.path()))).unwrap();

    let dets: Vec<oracle::Det> =
        preds.iter().map(|&(b, c, s)| oracle::Det { image: 0, bbox: boxes[b], label: c, score: s }).collect();
    let g: Vec<oracle::Gt> = gts.iter().map(|&(b, c)| oracle::Gt { image: 0, bbox: boxes[b], label: c }).collect();
    let coco: Vec<f64> = (0..10).map(|i| 0.5 + 0.05 * i as f64).collect();
    assert_eq!(v["detection"]["map_50"].as_f64().unwrap(), oracle::mean_ap(&dets, &g, &[0.5]));
    assert_eq!(v["detection"]["map_50_95"].as_f64().unwrap(), oracle::mean_ap(&dets, &g, &coco));
    // one-to-one matches at 0.5: pred 1 -> gt 0, pred 3 -> gt 2 (class 1)
    assert_eq!(v["detection"]["gp_50"].as_f64().unwrap(), 2.0 / 4.0);
    assert_eq!(v["detection"]["gr_50"].as_f64().unwrap(), 2.0 / 3.0);
}

const GOLDEN_HEADER: &str = "step,epoch,entropy,raw_diversity,diversity,smoothed_diversity,global_diversity,\
reward_accuracy,reward_format,reward_diversity,reward_total,loss,kl,replacements,batch_difficulty,\
pool_difficulty,eval_accuracy,eval_reward,hard_eval_accuracy";

#[test]
fn reports_are_complete_stable_and_tolerate_corrupt_lines() {
    let dir = tempfile::tempdir().unwrap();
    for (d, mode) in [("grpo-run", "grpo"), ("syn-run", "syn")] {
        ok(&run(
            &["train", "--run-dir", d, "--mode", mode, "--inline", "--sync", "--pool-size", "60", "--epochs", "2", "--eval-every", "2"],
            dir.path(),
        ));
    }
    ok(&run(&["report", "grpo-run", "--out", "one"], dir.path()));
    let one = dir.path().join("one/grpo-run");
    let csv = std::fs::read_to_string(one.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), GOLDEN_HEADER);
    assert_eq!(csv.lines().count(), 7);
    let svgs = std::fs::read_dir(&one).unwrap().filter(|e| e.as_ref().unwrap().path().extension().unwrap() == "svg").count();
    assert_eq!(svgs, 11);
    assert!(!dir.path().join("one/compare").exists());

    // corrupt line in the syn run
    let m = dir.path().join("syn-run/metrics.jsonl");
    let mut text = std::fs::read_to_string(&m).unwrap();
    text.insert_str(0, "{not json\n");
    std::fs::write(&m, text).unwrap();
    let out = ok(&run(&["report", "grpo-run", "syn-run", "--out", "two"], dir.path()));
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["skipped_lines"], 1);
    let overlay = std::fs::read_to_string(dir.path().join("two/compare/diversity.svg")).unwrap();
    assert!(overlay.contains("grpo-run (grpo)") && overlay.contains("syn-run (syn)"));
    assert_eq!(overlay.matches("<polyline").count(), 2);
    let summary = std::fs::read_to_string(dir.path().join("two/compare/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5);

    ok(&run(&["report", "grpo-run", "syn-run", "--out", "again"], dir.path()));
    for f in ["compare/diversity.svg", "compare/summary.csv", "syn-run/metrics.csv", "syn-run/eval_accuracy.svg"] {
        assert_eq!(std::fs::read(dir.path().join("two").join(f)).unwrap(), std::fs::read(dir.path().join("again").join(f)).unwrap());
    }
    assert_eq!(run(&["report"], dir.path()).status.code(), Some(2));
    assert_eq!(run(&["report", "nowhere"], dir.path()).status.code(), Some(1));
}
