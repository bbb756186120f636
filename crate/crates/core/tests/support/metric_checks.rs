//! Library metrics against the brute-force oracles on one random instance.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scm_core::metrics::{
    aiu, average_precision, detection_prf, match_image, mean_ap, ods_ois, IouMode,
};

use super::{generators, oracles};

fn close(what: &str, a: f64, b: f64, tol: f64) -> Result<(), String> {
    if (a - b).abs() <= tol {
        Ok(())
    } else {
        Err(format!("{what}: {a} vs oracle {b}"))
    }
}

/// Compare AP, mAP, matching, P/R/F1, AIU, ODS and OIS on the instance drawn from `seed`.
pub fn check(seed: u64, tol: f64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=4);
    let (w, h) = (rng.random_range(2..=7), rng.random_range(2..=7));
    let data: Vec<_> = (0..n)
        .map(|_| generators::random_image(&mut rng, w, h, 3))
        .collect();
    let thr = [0.3, 0.5, 0.75][rng.random_range(0..3)];
    let confidence = [0.0, 0.5, 0.8][rng.random_range(0..3)];
    let ctx = |m: &str| format!("seed {seed}: {m}");

    let flags: Vec<bool> = (0..rng.random_range(0..10))
        .map(|_| rng.random_bool(0.5))
        .collect();
    let gt = flags.iter().filter(|&&f| f).count() + rng.random_range(0..3);
    match (
        average_precision(&flags, gt),
        oracles::average_precision(&flags, gt),
    ) {
        (Some(a), Some(b)) => close(&ctx("AP"), a, b, tol)?,
        (None, None) => {}
        other => return Err(ctx(&format!("AP presence {other:?}"))),
    }

    for (mode, use_mask) in [(IouMode::Box, false), (IouMode::Mask, true)] {
        for image in &data {
            if match_image(image, thr, mode).map_err(|e| e.to_string())?
                != oracles::match_image(image, thr, use_mask)
            {
                return Err(ctx(&format!("{mode:?} matching differs")));
            }
        }
        let got = mean_ap(&data, thr, mode).map_err(|e| e.to_string())?;
        let (per_class, mean) = oracles::mean_ap(&data, thr, use_mask);
        close(&ctx(&format!("{mode:?} mAP")), got.mean, mean, tol)?;
        for (k, (a, b)) in got.per_class.iter().zip(&per_class).enumerate() {
            if a.is_some() != b.is_some() {
                return Err(ctx(&format!("{mode:?} AP presence of class {k}")));
            }
            close(
                &ctx(&format!("{mode:?} AP class {k}")),
                a.unwrap_or(0.0),
                b.unwrap_or(0.0),
                tol,
            )?;
        }
        let (p, r, f) = detection_prf(&data, thr, confidence, mode).map_err(|e| e.to_string())?;
        let (op, or, of) = oracles::prf(&data, thr, confidence, use_mask);
        close(&ctx("precision"), p, op, tol)?;
        close(&ctx("recall"), r, or, tol)?;
        close(&ctx("F1"), f, of, tol)?;
    }

    let (probs, gts): (Vec<_>, Vec<_>) = (0..n)
        .map(|_| generators::random_prob_map(&mut rng, w, h))
        .unzip();
    close(
        &ctx("AIU"),
        aiu(&probs, &gts).map_err(|e| e.to_string())?,
        oracles::aiu(&probs, &gts),
        tol,
    )?;
    let (ods, ois) = ods_ois(&probs, &gts).map_err(|e| e.to_string())?;
    let (o_ods, o_ois) = oracles::ods_ois(&probs, &gts);
    close(&ctx("ODS"), ods, o_ods, tol)?;
    close(&ctx("OIS"), ois, o_ois, tol)?;
    Ok(())
}
