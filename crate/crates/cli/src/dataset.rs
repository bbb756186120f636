//! Train and eval splits on disk.

use std::path::{Path, PathBuf};

use scm_core::data::{
    generate_split, load_or_regenerate, read_manifest, write_dataset, write_manifest,
    DatasetManifest, DatasetRecord, MANIFEST_FILE,
};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult, Context};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
        }
    }
}

pub fn split_dir(cfg: &ExperimentConfig, split: Split) -> PathBuf {
    cfg.data.dir.join(split.name())
}

/// Scene indices of a split; eval scenes follow the training scenes.
pub fn split_manifest(cfg: &ExperimentConfig, split: Split) -> DatasetManifest {
    let (first_index, count) = match split {
        Split::Train => (0, cfg.data.train_count),
        Split::Eval => (cfg.data.train_count as u64, cfg.data.eval_count),
    };
    DatasetManifest {
        spec: cfg.scene(),
        first_index,
        count,
    }
}

/// Generate both splits and their manifests.
pub fn run_generate(cfg: &ExperimentConfig) -> CliResult<Vec<(PathBuf, usize)>> {
    cfg.scene().validate().context("data.scene")?;
    let mut written = Vec::new();
    for split in [Split::Train, Split::Eval] {
        let dir = split_dir(cfg, split);
        let m = split_manifest(cfg, split);
        let records = generate_split(&m.spec, m.first_index, m.count)?;
        write_dataset(&records, &dir).context(dir.display())?;
        write_manifest(&dir, &m).context(dir.display())?;
        written.push((dir, records.len()));
    }
    Ok(written)
}

/// Records of a split, generating it first when the directory holds nothing.
///
/// An existing split is used as is, provided it was generated with the
/// configured scene settings; its size may differ from the configured counts.
pub fn load_split(cfg: &ExperimentConfig, split: Split) -> CliResult<Vec<DatasetRecord>> {
    let dir = split_dir(cfg, split);
    let want = split_manifest(cfg, split);
    if dir.join(MANIFEST_FILE).exists() {
        let have = read_manifest(&dir).context(dir.display())?;
        if have.spec != want.spec {
            return Err(CliError::Mismatch(format!(
                "{}: dataset was generated with different scene settings; regenerate it or point data.dir elsewhere",
                dir.display()
            )));
        }
        return load_or_regenerate(&dir).context(dir.display());
    }
    let records = generate_split(&want.spec, want.first_index, want.count)?;
    write_dataset(&records, &dir).context(dir.display())?;
    write_manifest(&dir, &want).context(dir.display())?;
    Ok(records)
}

/// Records of an arbitrary dataset directory.
pub fn load_dir(dir: &Path) -> CliResult<Vec<DatasetRecord>> {
    load_or_regenerate(dir).context(dir.display())
}
