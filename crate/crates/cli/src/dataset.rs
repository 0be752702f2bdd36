use std::path::PathBuf;

use clap::Args;

use syngrpo_core::env::dataset::{sample_split, save_scenes, DatasetManifest, ManifestEntry, Split};

use crate::serve::load_env;
use crate::CliError;

#[derive(Args)]
pub struct DatasetArgs {
    /// Directory for the scene files and manifest.json.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 400)]
    train: usize,
    #[arg(long, default_value_t = 200)]
    eval: usize,
    #[arg(long, default_value_t = 200)]
    hard: usize,
    /// TOML with scene settings (or a training config with an `env` table).
    #[arg(long)]
    env: Option<PathBuf>,
}

pub fn run(a: DatasetArgs) -> Result<(), CliError> {
    let env = load_env(a.env.as_ref())?;
    let rt = |e: syngrpo_core::CoreError| CliError::Runtime(e.to_string());
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::Runtime(format!("{}: {e}", a.out.display())))?;
    let mut manifest = DatasetManifest::new(env.clone());
    for (split, n, file) in [(Split::Train, a.train, "train.jsonl"), (Split::Eval, a.eval, "eval.jsonl"), (Split::Hard, a.hard, "hard.jsonl")] {
        if n == 0 {
            continue;
        }
        let scenes = sample_split(&env, split, a.seed, n).map_err(rt)?;
        save_scenes(&scenes, &a.out.join(file)).map_err(rt)?;
        manifest.files.push(ManifestEntry { split, path: file.into(), scenes: n });
    }
    let path = a.out.join("manifest.json");
    manifest.save(&path).map_err(rt)?;
    println!("{}", path.display());
    Ok(())
}
