use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::Serialize;

use syngrpo_core::checkpoint::Checkpoint;
use syngrpo_core::env::dataset::{DatasetManifest, Split};
use syngrpo_core::metrics::{summarize, DetectionSet, DetectionSummary};
use syngrpo_trainer::evaluate::{evaluate, EVAL_IOU};

use crate::CliError;

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Eval,
    Hard,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Checkpoint to evaluate (needs --manifest).
    #[arg(long, requires = "manifest")]
    checkpoint: Option<PathBuf>,
    /// Dataset manifest listing the scene files.
    #[arg(long, requires = "checkpoint")]
    manifest: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "eval")]
    split: SplitArg,
    /// Detection records (JSONL, one image per line) to score with mAP/GP/GR.
    #[arg(long)]
    detections: Option<PathBuf>,
}

#[derive(Serialize)]
struct PolicyEval {
    checkpoint_step: u64,
    split: &'static str,
    iou_threshold: f64,
    scenes: usize,
    accuracy: f64,
    mean_reward: f64,
}

#[derive(Serialize)]
struct Output {
    #[serde(skip_serializing_if = "Option::is_none")]
    policy: Option<PolicyEval>,
    #[serde(skip_serializing_if = "Option::is_none")]
    detection: Option<DetectionSummary>,
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

pub fn run(a: EvalArgs) -> Result<(), CliError> {
    if a.checkpoint.is_none() && a.detections.is_none() {
        return Err(CliError::Usage("nothing to evaluate: pass --checkpoint/--manifest or --detections".into()));
    }
    let mut out = Output { policy: None, detection: None };
    if let (Some(ck), Some(man)) = (&a.checkpoint, &a.manifest) {
        let ck = Checkpoint::load(ck).map_err(|e| runtime(format!("{}: {e}", ck.display())))?;
        let manifest = DatasetManifest::load(man).map_err(|e| runtime(format!("{}: {e}", man.display())))?;
        if ck.state.params.shape() != &manifest.env.policy_shape() {
            return Err(runtime("checkpoint policy shape does not fit the manifest's scenes"));
        }
        let (split, name) = match a.split {
            SplitArg::Train => (Split::Train, "train"),
            SplitArg::Eval => (Split::Eval, "eval"),
            SplitArg::Hard => (Split::Hard, "hard"),
        };
        let base = man.parent().map(PathBuf::from).unwrap_or_default();
        let scenes = manifest.scenes(&base, split).map_err(runtime)?;
        let r = evaluate(&ck.state.params, &scenes).map_err(runtime)?;
        out.policy = Some(PolicyEval {
            checkpoint_step: ck.step,
            split: name,
            iou_threshold: EVAL_IOU,
            scenes: r.scenes,
            accuracy: r.accuracy,
            mean_reward: r.mean_reward,
        });
    }
    if let Some(path) = &a.detections {
        let file = File::open(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        let ds = DetectionSet::read_jsonl(BufReader::new(file)).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        out.detection = Some(summarize(&ds).map_err(runtime)?);
    }
    println!("{}", serde_json::to_string_pretty(&out).map_err(runtime)?);
    Ok(())
}
