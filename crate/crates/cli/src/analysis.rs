//! Layer-similarity maps between two checkpoints.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use scm_core::cka::{cka_similarity_map, SimilarityMap};
use scm_core::data::DatasetRecord;
use scm_core::network::Model;
use scm_core::objective::record_tensor;
use scm_core::tensor::Tensor;

use crate::checkpoint::load_model;
use crate::config::CkaConfig;
use crate::dataset::load_dir;
use crate::error::{CliError, CliResult, Context};

pub const MAP_JSON: &str = "cka.json";
pub const MAP_PGM: &str = "cka.pgm";

/// Activations of the selected layers, one `[examples, features]` matrix per layer.
pub fn collect_activations(
    model: &Model<f64>,
    records: &[DatasetRecord],
    layers: &[String],
) -> CliResult<Vec<(String, Tensor<f64>)>> {
    let mut rows: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::new();
    for r in records {
        let (_, _, acts) = model.run(&record_tensor(r)?)?;
        let picked: Vec<_> = if layers.is_empty() {
            acts
        } else {
            layers
                .iter()
                .map(|l| {
                    acts.iter()
                        .find(|(n, _)| n == l)
                        .cloned()
                        .ok_or_else(|| CliError::Config(format!("cka.layers: unknown layer {l}")))
                })
                .collect::<CliResult<_>>()?
        };
        if rows.is_empty() {
            rows = picked
                .into_iter()
                .map(|(n, t)| (n, t.shape().to_vec(), t.into_data()))
                .collect();
        } else {
            for ((_, _, data), (_, t)) in rows.iter_mut().zip(picked) {
                data.extend_from_slice(t.data());
            }
        }
    }
    let n = records.len();
    rows.into_iter()
        .map(|(name, shape, data)| {
            let p = shape.iter().product::<usize>();
            Ok((name, Tensor::new(vec![n, p], data)?))
        })
        .collect()
}

fn layer_signature(
    model: &Model<f64>,
    record: &DatasetRecord,
) -> CliResult<Vec<(String, Vec<usize>)>> {
    let (_, _, acts) = model.run(&record_tensor(record)?)?;
    Ok(acts
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect())
}

/// Similarity map between two models over the first `cfg.examples` records.
pub fn compare_models(
    a: &Model<f64>,
    b: &Model<f64>,
    records: &[DatasetRecord],
    cfg: &CkaConfig,
) -> CliResult<SimilarityMap> {
    if !(2..=256).contains(&cfg.examples) {
        return Err(CliError::Config(
            "cka.examples: must lie in [2, 256]".into(),
        ));
    }
    if records.len() < cfg.examples {
        return Err(CliError::Data(format!(
            "need {} examples, the dataset has {}",
            cfg.examples,
            records.len()
        )));
    }
    let records = &records[..cfg.examples];
    if layer_signature(a, &records[0])? != layer_signature(b, &records[0])? {
        return Err(CliError::Mismatch(
            "the checkpoints have different layer topologies".into(),
        ));
    }
    let xa = collect_activations(a, records, &cfg.layers)?;
    let xb = collect_activations(b, records, &cfg.layers)?;
    Ok(cka_similarity_map(&xa, &xb)?)
}

/// Compare two checkpoints on a dataset directory, writing the map (and raster) to `out`.
pub fn run_cka(
    a: &Path,
    b: &Path,
    data_dir: &Path,
    cfg: &CkaConfig,
    out: &Path,
) -> CliResult<SimilarityMap> {
    let (ma, _) = load_model(a)?;
    let (mb, _) = load_model(b)?;
    let records = load_dir(data_dir)?;
    let map = compare_models(&ma, &mb, &records, cfg)?;
    fs::create_dir_all(out).context(out.display())?;
    let json = serde_json::json!({ "mean": map.mean(), "map": map });
    let text = serde_json::to_string_pretty(&json).map_err(|e| CliError::Data(e.to_string()))?;
    fs::write(out.join(MAP_JSON), text + "\n").context(out.display())?;
    if cfg.raster_cell > 0 {
        let path = out.join(MAP_PGM);
        let mut f = BufWriter::new(File::create(&path).context(path.display())?);
        map.write_pgm(&mut f, cfg.raster_cell)
            .context(path.display())?;
        f.flush().context(path.display())?;
    }
    Ok(map)
}
