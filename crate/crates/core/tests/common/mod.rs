#![allow(dead_code)]

use std::path::{Path, PathBuf};

use tempnorm::backend::{BackendConfig, BackendKind};
use tempnorm::pipeline::ExperimentConfig;
use tempnorm::selection::SelectionStrategy;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn micro_manifest() -> PathBuf {
    fixtures().join("micro/micro.json")
}

pub fn config(manifest: PathBuf, strategy: SelectionStrategy, kind: BackendKind, out: &Path) -> ExperimentConfig {
    ExperimentConfig {
        name: "micro".into(),
        manifests: vec![manifest],
        strategy,
        k: 3,
        backend: BackendConfig::with_kind(kind),
        output_dir: out.to_path_buf(),
        runs: 1,
        workers: 2,
        ..Default::default()
    }
}

pub fn micro(strategy: SelectionStrategy, kind: BackendKind, out: &Path) -> ExperimentConfig {
    config(micro_manifest(), strategy, kind, out)
}
