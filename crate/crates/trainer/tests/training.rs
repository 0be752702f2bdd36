use std::fs;
use std::io::BufReader;
use std::net::TcpListener;
use std::path::Path;
use std::sync::Arc;

use syngrpo_core::checkpoint::Checkpoint;
use syngrpo_core::diversity::DiversityState;
use syngrpo_core::env::dataset::{sample_split, Split};
use syngrpo_core::env::features::match_fraction_index;
use syngrpo_core::policy::PolicyParams;
use syngrpo_oracles as oracle;
use syngrpo_trainer::evaluate::evaluate;
use syngrpo_trainer::ledger::{audit, read_events};
use syngrpo_trainer::replace::InlineService;
use syngrpo_trainer::run::{checkpoint_path, METRICS_FILE, LEDGER_FILE};
use syngrpo_trainer::step::{assemble_rewards, initial_state, process_batch, GroupRewards};
use syngrpo_trainer::{run_training, Mode, RunOptions, TrainConfig, TrainError};

fn small(mode: Mode, seed: u64) -> TrainConfig {
    TrainConfig {
        mode,
        seed,
        epochs: 1,
        pool_size: 40,
        eval_size: 20,
        hard_eval_size: 20,
        lr: 0.05,
        sync_replacements: true,
        ..TrainConfig::default()
    }
}

fn inline(cfg: &TrainConfig, dir: &Path) -> RunOptions {
    RunOptions {
        run_dir: dir.to_path_buf(),
        service: Some(Arc::new(InlineService::new(cfg.env.clone()))),
        ..RunOptions::default()
    }
}

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

#[test]
fn two_sample_batches_follow_the_hand_trace() {
    let batches = [
        vec![
            GroupRewards {
                accuracy: vec![1.0, 0.0, 0.5, 0.25],
                format: vec![1.0, 1.0, 0.0, 1.0],
                predicted: vec![Some(0.3), Some(1.0), None, Some(0.0)],
            },
            GroupRewards {
                accuracy: vec![0.2, 0.2, 0.2, 0.9],
                format: vec![1.0; 4],
                predicted: vec![Some(0.6), Some(0.5), Some(0.1), Some(0.5)],
            },
        ],
        vec![
            GroupRewards { accuracy: vec![0.0, 1.0, 0.0, 1.0], format: vec![1.0; 4], predicted: vec![Some(0.9); 4] },
            GroupRewards { accuracy: vec![0.4; 4], format: vec![1.0; 4], predicted: vec![Some(0.0), Some(0.2), Some(0.4), Some(0.7)] },
        ],
    ];
    let gamma = 0.7;
    let mut state = DiversityState::new(gamma).unwrap();
    let mut global = None::<f64>;
    for batch in &batches {
        let (traces, next) = assemble_rewards(Mode::Syn, batch, &state).unwrap();
        // scripted replay of the reward chain
        let norm: Vec<f64> = batch.iter().map(|g| (4.0 * oracle::pairwise_variance(&g.accuracy)).clamp(0.0, 1.0)).collect();
        let avg = oracle::mean(&norm);
        let g_new = match global {
            None => avg,
            Some(g) => gamma * g + (1.0 - gamma) * avg,
        };
        global = Some(g_new);
        assert!(close(next.global_avg, g_new));
        for (i, (g, t)) in batch.iter().zip(&traces).enumerate() {
            assert!(close(t.normalized_diversity, norm[i]));
            let smoothed = if avg < 1e-9 { norm[i] } else { (norm[i] * g_new / avg).clamp(0.0, 1.0) };
            assert!(close(t.smoothed_diversity, smoothed), "{} vs {smoothed}", t.smoothed_diversity);
            let div: Vec<f64> = g.predicted.iter().map(|p| p.map_or(0.0, |v| 1.0 - (v - smoothed).abs())).collect();
            let total: Vec<f64> = (0..4).map(|j| g.accuracy[j] + g.format[j] + div[j]).collect();
            for j in 0..4 {
                assert!(close(t.diversity[j], div[j]));
                assert!(close(t.total[j], total[j]));
            }
            for (a, b) in t.advantages.iter().zip(oracle::advantages(&total, 1e-8)) {
                assert!(close(*a, b), "{a} vs {b}");
            }
            let best = (0..4).fold(0, |b, j| if div[j] > div[b] { j } else { b });
            assert_eq!(t.selected, Some(best));
        }
        state = next;
    }
}

#[test]
fn one_epoch_of_forty_scenes_is_two_steps() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(Mode::Grpo, 1);
    let s = run_training(&cfg, &RunOptions { run_dir: dir.path().into(), ..RunOptions::default() }).unwrap();
    assert_eq!(s.steps, 2);
    assert_eq!(s.records.len(), 2);
    assert_eq!(s.records.iter().map(|r| r.step).collect::<Vec<_>>(), vec![0, 1]);
    assert!(s.final_checkpoint.exists());
    for f in ["config.snapshot", "metrics.jsonl", "timing.jsonl", "ledger.jsonl", "events.log"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn grpo_mode_never_contacts_the_server() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    listener.set_nonblocking(true).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(Mode::Grpo, 2);
    cfg.server_url = Some(format!("http://{}", listener.local_addr().unwrap()));
    cfg.sync_replacements = false;
    run_training(&cfg, &RunOptions { run_dir: dir.path().into(), ..RunOptions::default() }).unwrap();
    assert_eq!(listener.accept().unwrap_err().kind(), std::io::ErrorKind::WouldBlock);
}

#[test]
fn syn_mode_refuses_to_start_without_a_server() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(Mode::Syn, 2);
    let err = run_training(&cfg, &RunOptions { run_dir: dir.path().into(), ..RunOptions::default() }).unwrap_err();
    assert!(matches!(err, TrainError::Server(_)), "{err}");

    // nothing listens on a port we just released
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    cfg.server_url = Some(format!("http://127.0.0.1:{port}"));
    cfg.request_timeout_ms = 200;
    assert!(matches!(run_training(&cfg, &RunOptions { run_dir: dir.path().into(), ..RunOptions::default() }), Err(TrainError::Server(_))));
    cfg.allow_degraded = true;
    let s = run_training(&cfg, &RunOptions { run_dir: dir.path().into(), ..RunOptions::default() }).unwrap();
    assert_eq!(s.records.len(), 2);
    assert!(s.records.iter().all(|r| r.replacements == 0));
}

#[test]
fn same_seed_gives_byte_identical_metrics() {
    for mode in [Mode::Grpo, Mode::Syn] {
        let cfg = small(mode, 7);
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        run_training(&cfg, &inline(&cfg, a.path())).unwrap();
        run_training(&cfg, &inline(&cfg, b.path())).unwrap();
        let ma = fs::read(a.path().join(METRICS_FILE)).unwrap();
        assert!(!ma.is_empty());
        assert_eq!(ma, fs::read(b.path().join(METRICS_FILE)).unwrap(), "{mode}");
        assert_eq!(fs::read(a.path().join(LEDGER_FILE)).unwrap(), fs::read(b.path().join(LEDGER_FILE)).unwrap());
    }
}

#[test]
fn sequential_and_parallel_runs_agree() {
    let cfg = small(Mode::Syn, 8);
    let seq = TrainConfig { parallel: false, ..cfg.clone() };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_training(&cfg, &inline(&cfg, a.path())).unwrap();
    run_training(&seq, &inline(&seq, b.path())).unwrap();
    assert_eq!(fs::read(a.path().join(METRICS_FILE)).unwrap(), fs::read(b.path().join(METRICS_FILE)).unwrap());
}

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for e in fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        if e.file_type().unwrap().is_dir() {
            copy_dir(&e.path(), &to.join(e.file_name()));
        } else {
            fs::copy(e.path(), to.join(e.file_name())).unwrap();
        }
    }
}

#[test]
fn resume_mid_run_matches_the_uninterrupted_run() {
    for mode in [Mode::Grpo, Mode::Syn] {
        let cfg = TrainConfig { epochs: 2, pool_size: 80, checkpoint_every: 3, eval_every: 2, ..small(mode, 11) };
        let full = tempfile::tempdir().unwrap();
        let s = run_training(&cfg, &inline(&cfg, full.path())).unwrap();
        assert_eq!(s.steps, 8);

        let resumed = tempfile::tempdir().unwrap();
        copy_dir(full.path(), resumed.path());
        let ckpt = checkpoint_path(resumed.path(), 3);
        assert!(ckpt.exists());
        let opts = RunOptions { resume: Some(ckpt), ..inline(&cfg, resumed.path()) };
        let r = run_training(&cfg, &opts).unwrap();
        for f in [METRICS_FILE, LEDGER_FILE] {
            assert_eq!(fs::read(full.path().join(f)).unwrap(), fs::read(resumed.path().join(f)).unwrap(), "{mode} {f}");
        }
        let a = Checkpoint::load(&s.final_checkpoint).unwrap();
        let b = Checkpoint::load(&r.final_checkpoint).unwrap();
        assert_eq!(a.state, b.state);
    }
}

#[test]
fn replacements_over_a_hundred_steps_pass_the_ledger_audit() {
    let cfg = TrainConfig { epochs: 20, pool_size: 100, eval_every: 0, ..small(Mode::Syn, 5) };
    let dir = tempfile::tempdir().unwrap();
    let s = run_training(&cfg, &inline(&cfg, dir.path())).unwrap();
    assert_eq!(s.steps, 100);
    let events = read_events(BufReader::new(fs::File::open(dir.path().join(LEDGER_FILE)).unwrap())).unwrap();
    assert!(events.len() > 100, "{} replacements", events.len());
    let a = audit(&s.initial_pool, &events);
    assert!(a.clean(), "{a:?}");
    assert_eq!(s.records.iter().map(|r| r.replacements).sum::<usize>(), events.len());
}

#[test]
fn uniform_policy_scores_one_in_ten() {
    let cfg = TrainConfig::default();
    let scenes = sample_split(&cfg.env, Split::Eval, 3, 2000).unwrap();
    let r = evaluate(&PolicyParams::zeros(cfg.env.policy_shape()), &scenes).unwrap();
    // binomial sd at p = 0.1, n = 2000 is about 0.0067
    assert!((r.accuracy - 0.1).abs() < 0.03, "{}", r.accuracy);
}

fn peaked(cfg: &TrainConfig) -> PolicyParams {
    let mut p = PolicyParams::zeros(cfg.env.policy_shape());
    p.as_mut_slice()[match_fraction_index(cfg.env.attributes)] = 200.0;
    p
}

#[test]
fn matching_policy_is_perfect_and_evaluation_is_deterministic() {
    let cfg = TrainConfig::default();
    let scenes = sample_split(&cfg.env, Split::Eval, 4, 200).unwrap();
    let p = peaked(&cfg);
    let a = evaluate(&p, &scenes).unwrap();
    assert_eq!(a.accuracy, 1.0);
    assert_eq!(a, evaluate(&p, &scenes).unwrap());
}

#[test]
fn deterministic_policy_has_no_learning_signal() {
    let cfg = TrainConfig { batch_size: 4, ..TrainConfig::default() };
    let mut state = initial_state(&cfg).unwrap();
    state.params = peaked(&cfg);
    state.reference = state.params.clone();
    let before = state.params.clone();
    let pool = sample_split(&cfg.env, Split::Train, 9, 4).unwrap();
    let batch: Vec<_> = pool.iter().enumerate().collect();
    let out = process_batch(&mut state, &batch, &cfg, 0).unwrap();
    for g in &out.groups {
        assert_eq!(g.rewards.raw_diversity, 0.0);
        assert!(g.rewards.advantages.iter().all(|a| *a == 0.0));
    }
    assert_eq!(out.stats.loss, 0.0);
    assert_eq!(state.params, before);
    assert_eq!(state.diversity.k, 1);
}

#[test]
fn non_finite_updates_abort_with_a_dump() {
    let cfg = small(Mode::Grpo, 3);
    let dir = tempfile::tempdir().unwrap();
    let opts = RunOptions { run_dir: dir.path().into(), ..RunOptions::default() };
    let s = run_training(&cfg, &opts).unwrap();
    let mut ck = Checkpoint::load(&s.final_checkpoint).unwrap();
    ck.state.params.as_mut_slice().iter_mut().for_each(|w| *w = 1e308);
    ck.save(&s.final_checkpoint).unwrap();

    let cfg = TrainConfig { epochs: 2, ..cfg };
    let err = run_training(&cfg, &RunOptions { resume: Some(s.final_checkpoint), ..opts }).unwrap_err();
    assert!(matches!(err, TrainError::NonFinite { step: 2, .. }), "{err}");
    let dumps: Vec<_> = fs::read_dir(dir.path().join("diagnostics")).unwrap().collect();
    assert_eq!(dumps.len(), 1);
}

fn serve(latency_ms: u64) -> syngrpo_server::ServerHandle {
    let cfg = syngrpo_server::config::ServerConfig { port: 0, latency_ms, ..Default::default() };
    syngrpo_server::start(&cfg, TrainConfig::default().env).unwrap()
}

#[test]
fn async_runs_replay_byte_identically() {
    let server = serve(5);
    let cfg = TrainConfig {
        epochs: 4,
        pool_size: 60,
        sync_replacements: false,
        server_url: Some(server.url()),
        poll_interval_ms: 2,
        rollout_cost_ms: 5,
        ..small(Mode::Syn, 21)
    };
    let live = tempfile::tempdir().unwrap();
    let s = run_training(&cfg, &RunOptions { run_dir: live.path().into(), ..RunOptions::default() }).unwrap();
    let events = read_events(BufReader::new(fs::File::open(live.path().join(LEDGER_FILE)).unwrap())).unwrap();
    assert!(!events.is_empty());
    assert!(audit(&s.initial_pool, &events).clean());
    server.shutdown();

    // replay needs no server at all
    let replay = tempfile::tempdir().unwrap();
    let opts = RunOptions {
        run_dir: replay.path().into(),
        replay: Some(live.path().join(LEDGER_FILE)),
        ..RunOptions::default()
    };
    run_training(&cfg, &opts).unwrap();
    for f in [METRICS_FILE, LEDGER_FILE] {
        assert_eq!(fs::read(live.path().join(f)).unwrap(), fs::read(replay.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn sync_server_and_inline_generation_agree() {
    let server = serve(0);
    let base = TrainConfig { pool_size: 60, epochs: 2, ..small(Mode::Syn, 22) };
    let remote = TrainConfig { server_url: Some(server.url()), ..base.clone() };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_training(&remote, &RunOptions { run_dir: a.path().into(), ..RunOptions::default() }).unwrap();
    run_training(&base, &inline(&base, b.path())).unwrap();
    assert_eq!(fs::read(a.path().join(METRICS_FILE)).unwrap(), fs::read(b.path().join(METRICS_FILE)).unwrap());
}
