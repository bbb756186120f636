#![allow(dead_code)]

use std::path::Path;

use scm_cli::ExperimentConfig;

/// A network and dataset small enough for debug-build tests.
pub fn tiny_config(root: &Path, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml(
        r#"
        [data]
        train_count = 8
        eval_count = 4
        [data.scene]
        width = 32
        height = 32
        [model]
        input_size = 32
        stem_width = 4
        stage_widths = [6, 8]
        anchor_scales = [8.0, 16.0]
        mask_resolution = 7
        [model.attention]
        patch_size = 4
        heads = 2
        layers = 1
        model_dim = 8
        mlp_hidden = 8
        [train]
        epochs = 1
        batch_size = 4
        [train.sampling]
        anchors_per_image = 16
        rois_per_image = 4
        [cka]
        examples = 4
        raster_cell = 2
        "#,
    )
    .expect("tiny config parses");
    cfg.seed = seed;
    cfg.data.dir = root.join("data");
    cfg.out = root.join("run");
    cfg
}
