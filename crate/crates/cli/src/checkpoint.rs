//! Model checkpoints: network configuration and training state in the
//! metadata block, weights as named tensors.

use std::path::Path;

use scm_core::checkpoint::Container;
use scm_core::network::{Model, NetworkConfig};
use scm_core::objective::{Objective, SegMode};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult, Context};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub network: NetworkConfig,
    pub seed: u64,
    pub objective: Objective,
    pub seg_mode: SegMode,
    /// Last completed epoch, counted from zero.
    pub epoch: usize,
    pub loss: f64,
}

pub fn save_model(path: &Path, model: &Model<f64>, meta: &CheckpointMeta) -> CliResult<()> {
    let json = serde_json::to_value(meta).map_err(|e| CliError::Data(e.to_string()))?;
    let mut c = Container::new(serde_json::json!({ "kind": "model", "model": json }));
    for (name, t) in model.params.iter() {
        c.push(name, t);
    }
    c.save(path).context(path.display())
}

pub fn load_model(path: &Path) -> CliResult<(Model<f64>, CheckpointMeta)> {
    let c = Container::load(path).context(path.display())?;
    if c.meta.get("kind").and_then(|k| k.as_str()) != Some("model") {
        return Err(CliError::Data(format!(
            "{}: not a model checkpoint",
            path.display()
        )));
    }
    let meta: CheckpointMeta = serde_json::from_value(c.meta["model"].clone())
        .map_err(|e| CliError::Data(format!("{}: metadata: {e}", path.display())))?;
    let mut model = Model::build(meta.network.clone(), meta.seed).context(path.display())?;
    model
        .params
        .load_from(c.tensors_as())
        .context(path.display())?;
    Ok((model, meta))
}
