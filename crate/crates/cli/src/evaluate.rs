//! Checkpoint evaluation on a dataset split.

use std::fs;
use std::path::Path;

use scm_core::data::DatasetRecord;
use scm_core::instances::{combine_instances, CLASS_COUNT};
use scm_core::mask::BinaryMask;
use scm_core::metrics::{ImageInstances, MetricReport};
use scm_core::network::Model;
use scm_core::objective::record_tensor;

use crate::checkpoint::load_model;
use crate::config::EvalConfig;
use crate::dataset::load_dir;
use crate::error::{CliError, CliResult, Context};

pub const REPORT_TEXT: &str = "report.txt";
pub const REPORT_JSON: &str = "report.json";

/// Everything the metrics need, gathered from model outputs.
#[derive(Clone, Debug, Default)]
pub struct EvalInputs {
    pub instances: Vec<ImageInstances>,
    pub probs: Vec<Vec<f64>>,
    pub gts: Vec<BinaryMask>,
}

pub fn check_compatible(model: &Model<f64>, records: &[DatasetRecord]) -> CliResult<()> {
    let cfg = &model.net.cfg;
    if cfg.classes != CLASS_COUNT {
        return Err(CliError::Mismatch(format!(
            "checkpoint has {} classes, the dataset has {CLASS_COUNT}",
            cfg.classes
        )));
    }
    for r in records {
        if let Some(a) = r.annotations.iter().find(|a| a.class >= cfg.classes) {
            return Err(CliError::Mismatch(format!(
                "image {}: class {} outside the checkpoint's {} classes",
                r.id, a.class, cfg.classes
            )));
        }
        if (r.width(), r.height()) != (cfg.input_size, cfg.input_size) {
            return Err(CliError::Mismatch(format!(
                "image {} is {}x{}, the checkpoint expects {}x{}",
                r.id,
                r.width(),
                r.height(),
                cfg.input_size,
                cfg.input_size
            )));
        }
    }
    Ok(())
}

/// Run the model over `records` and split its binary mask into instances.
pub fn predict_records(
    model: &Model<f64>,
    records: &[DatasetRecord],
    eval: &EvalConfig,
) -> CliResult<EvalInputs> {
    check_compatible(model, records)?;
    let s = model.net.cfg.input_size;
    let mut out = EvalInputs::default();
    for r in records {
        let pred = model.predict(&record_tensor(r)?, &eval.inference)?;
        let mask = BinaryMask::threshold(s, s, &pred.probs, eval.inference.mask_threshold)?;
        out.instances.push(ImageInstances {
            predictions: combine_instances(&pred.detections, &mask, eval.combine_threshold),
            annotations: r.annotations.clone(),
        });
        out.probs.push(pred.probs);
        out.gts.push(r.binary_mask());
    }
    Ok(out)
}

pub fn evaluate_model(
    model: &Model<f64>,
    records: &[DatasetRecord],
    eval: &EvalConfig,
) -> CliResult<MetricReport> {
    let records = &records[..eval.max_images.unwrap_or(usize::MAX).min(records.len())];
    let inputs = predict_records(model, records, eval)?;
    Ok(MetricReport::compute(
        &inputs.instances,
        &inputs.probs,
        &inputs.gts,
        &eval.metrics,
    )?)
}

/// Evaluate a checkpoint on a dataset directory, writing text and JSON reports to `out`.
pub fn run_eval(
    checkpoint: &Path,
    data_dir: &Path,
    eval: &EvalConfig,
    out: &Path,
) -> CliResult<MetricReport> {
    let (model, _) = load_model(checkpoint)?;
    let records = load_dir(data_dir)?;
    let report = evaluate_model(&model, &records, eval)?;
    fs::create_dir_all(out).context(out.display())?;
    fs::write(out.join(REPORT_TEXT), report.to_text()).context(out.display())?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Data(e.to_string()))?;
    fs::write(out.join(REPORT_JSON), json + "\n").context(out.display())?;
    Ok(report)
}
