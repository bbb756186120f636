//! Fixed-epoch SGD training.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scm_core::data::DatasetRecord;
use scm_core::network::Model;
use scm_core::objective::{batch_gradients, build_targets, record_tensor, LossParts};
use scm_core::tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{save_model, CheckpointMeta};
use crate::config::{lr_at_epoch, ExperimentConfig};
use crate::dataset::{load_split, Split};
use crate::error::{CliError, CliResult, Context};
use crate::evaluate::check_compatible;

pub const LOG_FILE: &str = "train_log.jsonl";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Image-weighted means over the epoch's batches.
    pub loss: f64,
    pub detection: f64,
    pub segmentation: f64,
    /// Mean L2 norm of the batch gradients before clipping.
    pub grad_norm: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    pub final_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
    pub best_epoch: usize,
}

/// Train a fresh model on `records`, calling `on_epoch` after every epoch.
pub fn train_on(
    cfg: &ExperimentConfig,
    records: &[DatasetRecord],
    mut on_epoch: impl FnMut(&EpochLog, &Model<f64>) -> CliResult<()>,
) -> CliResult<Model<f64>> {
    cfg.validate()?;
    let t = &cfg.train;
    let records = &records[..t.max_images.unwrap_or(usize::MAX).min(records.len())];
    if records.is_empty() {
        return Err(CliError::Data("no training images".into()));
    }
    let mut model = Model::<f64>::build(cfg.network(), cfg.seed)?;
    check_compatible(&model, records)?;
    let images = records
        .iter()
        .map(record_tensor::<f64>)
        .collect::<Result<Vec<_>, _>>()?;
    let mut velocity: Vec<Tensor<f64>> = model
        .params
        .iter()
        .map(|(_, p)| Tensor::zeros(p.shape()))
        .collect();
    let mut order: Vec<usize> = (0..records.len()).collect();

    for epoch in 0..t.epochs {
        let lr = lr_at_epoch(t, epoch)?;
        // Shuffling and anchor sampling draw from a per-epoch stream.
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);
        let mut sums = LossParts::default();
        let mut norm_sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(t.batch_size) {
            let targets = chunk
                .iter()
                .map(|&i| {
                    build_targets(
                        &model.net,
                        &records[i],
                        &t.loss,
                        &t.sampling,
                        t.seg_mode,
                        &mut rng,
                    )
                })
                .collect::<Result<Vec<_>, _>>()?;
            let batch: Vec<_> = chunk
                .iter()
                .zip(&targets)
                .map(|(&i, tg)| (&images[i], tg))
                .collect();
            let (parts, mut grads) = batch_gradients(&model, &batch, &t.loss, t.objective)?;
            if !parts.total.is_finite() {
                return Err(CliError::Numeric(format!(
                    "epoch {epoch}: loss is not finite"
                )));
            }
            let norm = grads
                .iter()
                .flat_map(|g| g.data())
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            if let Some(c) = t.clip_norm {
                if norm > c {
                    let s = c / norm;
                    grads
                        .iter_mut()
                        .for_each(|g| g.data_mut().iter_mut().for_each(|v| *v *= s));
                }
            }
            for ((p, v), g) in model
                .params
                .tensors_mut()
                .iter_mut()
                .zip(&mut velocity)
                .zip(&grads)
            {
                for ((w, m), d) in p.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                    *m = t.momentum * *m + d;
                    *w -= lr * *m;
                }
            }
            let k = chunk.len() as f64;
            sums.total += parts.total * k;
            sums.detection += parts.detection * k;
            sums.segmentation += parts.segmentation * k;
            norm_sum += norm;
            batches += 1;
        }
        let n = records.len() as f64;
        let entry = EpochLog {
            epoch,
            learning_rate: lr,
            loss: sums.total / n,
            detection: sums.detection / n,
            segmentation: sums.segmentation / n,
            grad_norm: norm_sum / batches as f64,
        };
        on_epoch(&entry, &model)?;
    }
    Ok(model)
}

/// Train on the configured split, writing the log and checkpoints under `cfg.out`.
pub fn run_train(cfg: &ExperimentConfig) -> CliResult<TrainOutcome> {
    cfg.validate()?;
    let records = load_split(cfg, Split::Train)?;
    fs::create_dir_all(&cfg.out).context(cfg.out.display())?;
    fs::write(cfg.out.join("config.toml"), cfg.to_toml()).context(cfg.out.display())?;
    let log_path = cfg.out.join(LOG_FILE);
    let mut log_file = BufWriter::new(File::create(&log_path).context(log_path.display())?);
    let best_checkpoint = cfg.out.join(BEST_CHECKPOINT);
    let final_checkpoint = cfg.out.join(FINAL_CHECKPOINT);
    let meta = |e: &EpochLog| CheckpointMeta {
        network: cfg.network(),
        seed: cfg.seed,
        objective: cfg.train.objective,
        seg_mode: cfg.train.seg_mode,
        epoch: e.epoch,
        loss: e.loss,
    };
    let mut log = Vec::new();
    let mut best = f64::INFINITY;
    let mut best_epoch = 0;
    let model = train_on(cfg, &records, |entry, model| {
        let line = serde_json::to_string(entry).map_err(|e| CliError::Data(e.to_string()))?;
        writeln!(log_file, "{line}").context(log_path.display())?;
        log_file.flush().context(log_path.display())?;
        if entry.loss < best {
            best = entry.loss;
            best_epoch = entry.epoch;
            save_model(&best_checkpoint, model, &meta(entry))?;
        }
        log.push(entry.clone());
        Ok(())
    })?;
    let last = log.last().expect("at least one epoch");
    save_model(&final_checkpoint, &model, &meta(last))?;
    Ok(TrainOutcome {
        log,
        final_checkpoint,
        best_checkpoint,
        best_epoch,
    })
}
