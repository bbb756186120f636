//! Synthetic road-surface scenes and the on-disk dataset format.
//!
//! A dataset directory holds `images/NNNN.pgm` (binary 8-bit graymaps),
//! `annotations.jsonl` with one JSON object per image, and optionally
//! `dataset.json` recording the generator settings.

use std::f64::consts::PI;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{GrayImage, ImageEncoder, ImageFormat, ImageReader};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::instances::{DefectClass, InstanceRecord, CLASS_COUNT};
use crate::mask::BinaryMask;

/// Instance shares of (pothole, manhole, longitudinal, transverse, joint, wheel)
/// in the surveyed road data. The published percentages are rounded and sum to
/// 100.1, so proportions are accepted within 0.5% of 1 and renormalized.
pub const DEFAULT_PROPORTIONS: [f64; CLASS_COUNT] = [0.222, 0.151, 0.160, 0.089, 0.161, 0.218];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub min_defects: usize,
    pub max_defects: usize,
    pub proportions: [f64; CLASS_COUNT],
    /// Standard deviation of per-pixel Gaussian noise, in gray levels.
    pub noise: f64,
    /// Amplitude of the low-frequency surface texture, in gray levels.
    pub texture: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            width: 64,
            height: 64,
            min_defects: 1,
            max_defects: 3,
            proportions: DEFAULT_PROPORTIONS,
            noise: 6.0,
            texture: 12.0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width < 16 || self.height < 16 {
            return Err(config_err!(
                "scene size {}x{} is below 16x16",
                self.width,
                self.height
            ));
        }
        if self.min_defects > self.max_defects {
            return Err(config_err!(
                "min_defects {} exceeds max_defects {}",
                self.min_defects,
                self.max_defects
            ));
        }
        if self.proportions.iter().any(|&p| !(p >= 0.0))
            || (self.proportions.iter().sum::<f64>() - 1.0).abs() > 5e-3
        {
            return Err(config_err!("proportions must be non-negative and sum to 1"));
        }
        if !(self.noise >= 0.0) || !(self.texture >= 0.0) {
            return Err(config_err!("noise and texture must be non-negative"));
        }
        Ok(())
    }

    /// Proportions scaled to sum to exactly 1.
    pub fn normalized_proportions(&self) -> [f64; CLASS_COUNT] {
        let total: f64 = self.proportions.iter().sum();
        self.proportions.map(|p| p / total)
    }

    /// Also require the image size to be a multiple of `stride`.
    pub fn validate_for_stride(&self, stride: usize) -> Result<()> {
        self.validate()?;
        if stride == 0 || !self.width.is_multiple_of(stride) || !self.height.is_multiple_of(stride)
        {
            return Err(config_err!(
                "scene size {}x{} is not divisible by stride {stride}",
                self.width,
                self.height
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetRecord {
    pub id: u64,
    pub image: GrayImage,
    pub annotations: Vec<InstanceRecord>,
}

impl DatasetRecord {
    pub fn width(&self) -> usize {
        self.image.width() as usize
    }

    pub fn height(&self) -> usize {
        self.image.height() as usize
    }

    /// Union of all annotation masks.
    pub fn binary_mask(&self) -> BinaryMask {
        self.class_mask(|_| true)
    }

    /// Union of the masks whose class passes `keep`.
    pub fn class_mask(&self, keep: impl Fn(usize) -> bool) -> BinaryMask {
        let mut m = BinaryMask::empty(self.width(), self.height());
        for a in self.annotations.iter().filter(|a| keep(a.class)) {
            m = m.union(&a.mask).expect("annotation masks match the image");
        }
        m
    }
}

fn scene_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Mask of one defect of `class`, placed uniformly; may touch nothing if the
/// shape falls outside the image.
fn draw_shape(class: DefectClass, w: usize, h: usize, rng: &mut ChaCha8Rng) -> BinaryMask {
    let s = w.min(h) as f64 / 64.0;
    let (wf, hf) = (w as f64, h as f64);
    match class {
        DefectClass::Pothole => {
            let r = rng.random_range(4.0..8.0) * s;
            let (cx, cy) = (rng.random_range(r..wf - r), rng.random_range(r..hf - r));
            let lobes: Vec<(f64, f64, f64)> = (0..3)
                .map(|k| {
                    (
                        rng.random_range(0.05..0.2),
                        (k + 2) as f64,
                        rng.random_range(0.0..2.0 * PI),
                    )
                })
                .collect();
            BinaryMask::from_fn(w, h, |x, y| {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let t = dy.atan2(dx);
                let rad = r
                    * (1.0
                        + lobes
                            .iter()
                            .map(|&(a, f, p)| a * (f * t + p).sin())
                            .sum::<f64>());
                dx * dx + dy * dy < rad * rad
            })
        }
        DefectClass::Manhole => {
            let r = rng.random_range(5.0..8.0) * s;
            let (cx, cy) = (rng.random_range(r..wf - r), rng.random_range(r..hf - r));
            BinaryMask::from_fn(w, h, |x, y| {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                dx * dx + dy * dy < r * r
            })
        }
        DefectClass::Longitudinal | DefectClass::Transverse => {
            let vertical = class == DefectClass::Longitudinal;
            let (along, across) = if vertical { (hf, wf) } else { (wf, hf) };
            let len = rng.random_range(0.4..0.8) * along;
            let start = rng.random_range(0.0..along - len);
            let base = rng.random_range(0.2 * across..0.8 * across);
            let (amp, freq, phase) = (
                rng.random_range(1.0..3.0) * s,
                rng.random_range(1.0..3.0),
                rng.random_range(0.0..2.0 * PI),
            );
            let half = rng.random_range(0.6..1.1) * s.max(1.0);
            BinaryMask::from_fn(w, h, |x, y| {
                let (a, c) = if vertical {
                    (y as f64 + 0.5, x as f64 + 0.5)
                } else {
                    (x as f64 + 0.5, y as f64 + 0.5)
                };
                let u = (a - start) / len;
                (0.0..=1.0).contains(&u)
                    && (c - (base + amp * (2.0 * PI * freq * u + phase).sin())).abs() < half
            })
        }
        DefectClass::Joint => {
            let vertical = rng.random_bool(0.5);
            let (along, across) = if vertical { (hf, wf) } else { (wf, hf) };
            let len = rng.random_range(0.5..0.9) * along;
            let start = rng.random_range(0.0..along - len);
            let pos = rng.random_range(0.15 * across..0.85 * across);
            let half = 1.5 * s.max(1.0);
            BinaryMask::from_fn(w, h, |x, y| {
                let (a, c) = if vertical {
                    (y as f64 + 0.5, x as f64 + 0.5)
                } else {
                    (x as f64 + 0.5, y as f64 + 0.5)
                };
                a >= start && a <= start + len && (c - pos).abs() < half
            })
        }
        DefectClass::Wheel => {
            let len = rng.random_range(0.4..0.7) * hf;
            let y0 = rng.random_range(0.0..hf - len);
            let gap = rng.random_range(8.0..14.0) * s;
            let band = rng.random_range(3.0..5.0) * s;
            let x0 = rng.random_range(0.0..wf - gap - 2.0 * band);
            BinaryMask::from_fn(w, h, |x, y| {
                let (xf, yf) = (x as f64 + 0.5, y as f64 + 0.5);
                let in_band = |b: f64| xf >= b && xf < b + band;
                yf >= y0 && yf < y0 + len && (in_band(x0) || in_band(x0 + band + gap))
            })
        }
    }
}

fn intensity(class: DefectClass) -> f64 {
    match class {
        DefectClass::Pothole => -70.0,
        DefectClass::Manhole => -45.0,
        DefectClass::Longitudinal | DefectClass::Transverse => -80.0,
        DefectClass::Joint => -40.0,
        DefectClass::Wheel => -30.0,
    }
}

const PLACEMENT_ATTEMPTS: usize = 50;

/// Scene `index` of the dataset described by `spec`; a pure function of both.
pub fn generate_scene(spec: &SceneSpec, index: u64) -> Result<DatasetRecord> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let mut rng = scene_rng(spec.seed, index);
    let classes =
        WeightedIndex::new(spec.proportions).map_err(|e| config_err!("proportions: {e}"))?;
    let count = rng.random_range(spec.min_defects..=spec.max_defects);
    let mut taken = BinaryMask::empty(w, h);
    let mut annotations = Vec::with_capacity(count);
    for _ in 0..count {
        let class = DefectClass::ALL[classes.sample(&mut rng)];
        for _ in 0..PLACEMENT_ATTEMPTS {
            let mask = draw_shape(class, w, h, &mut rng);
            if mask.is_empty() || mask.intersection_count(&taken)? > 0 {
                continue;
            }
            taken = taken.union(&mask)?;
            let bbox = mask.bbox().expect("mask is non-empty");
            annotations.push(InstanceRecord {
                class: class.index(),
                mask,
                bbox,
                confidence: 1.0,
            });
            break;
        }
    }
    let noise = Normal::new(0.0, spec.noise.max(1e-12)).map_err(|e| config_err!("noise: {e}"))?;
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let theta = rng.random_range(0.0..PI);
            let k = rng.random_range(1.0..4.0) * 2.0 * PI / w.max(h) as f64;
            (
                k * theta.cos(),
                k * theta.sin(),
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.3..1.0),
            )
        })
        .collect();
    let base = rng.random_range(130.0..170.0);
    let mut image = GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let tex: f64 = waves
                .iter()
                .map(|&(kx, ky, p, a)| a * (kx * x as f64 + ky * y as f64 + p).sin())
                .sum::<f64>()
                / 3.0;
            let mut v = base + spec.texture * tex + noise.sample(&mut rng);
            for a in &annotations {
                if a.mask.get(x, y) {
                    v += intensity(DefectClass::ALL[a.class]);
                }
            }
            image.put_pixel(
                x as u32,
                y as u32,
                image::Luma([v.round().clamp(0.0, 255.0) as u8]),
            );
        }
    }
    Ok(DatasetRecord {
        id: index,
        image,
        annotations,
    })
}

/// Scenes `start .. start + count`.
pub fn generate_split(spec: &SceneSpec, start: u64, count: usize) -> Result<Vec<DatasetRecord>> {
    (start..start + count as u64)
        .map(|i| generate_scene(spec, i))
        .collect()
}

/// Row-major run lengths alternating background and foreground, starting
/// with a (possibly zero) background run.
pub fn rle_encode(mask: &BinaryMask) -> Vec<u32> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0u32;
    for &b in mask.bits() {
        if b != current {
            runs.push(len);
            current = b;
            len = 0;
        }
        len += 1;
    }
    runs.push(len);
    runs
}

pub fn rle_decode(width: usize, height: usize, runs: &[u32]) -> Result<BinaryMask> {
    let total: u64 = runs.iter().map(|&r| r as u64).sum();
    if total != (width * height) as u64 {
        return Err(Error::Format(format!(
            "run lengths cover {total} pixels of a {width}x{height} mask"
        )));
    }
    let mut bits = Vec::with_capacity(width * height);
    for (i, &r) in runs.iter().enumerate() {
        bits.extend(std::iter::repeat_n(i % 2 == 1, r as usize));
    }
    BinaryMask::from_bits(width, height, bits)
}

#[derive(Serialize, Deserialize)]
struct AnnotationLine {
    id: u64,
    image: String,
    width: usize,
    height: usize,
    instances: Vec<AnnotationEntry>,
}

#[derive(Serialize, Deserialize)]
struct AnnotationEntry {
    class: DefectClass,
    bbox: [f64; 4],
    rle: Vec<u32>,
}

pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const MANIFEST_FILE: &str = "dataset.json";

pub fn write_pgm(path: &Path, image: &GrayImage) -> Result<()> {
    let out = BufWriter::new(File::create(path)?);
    PnmEncoder::new(out)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(
            image.as_raw(),
            image.width(),
            image.height(),
            image::ExtendedColorType::L8,
        )
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let mut reader = ImageReader::open(path)?;
    reader.set_format(ImageFormat::Pnm);
    let img = reader
        .decode()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    match img {
        image::DynamicImage::ImageLuma8(g) => Ok(g),
        _ => Err(Error::Format(format!(
            "{}: not an 8-bit graymap",
            path.display()
        ))),
    }
}

/// Write images and the annotation manifest under `dir`.
pub fn write_dataset(records: &[DatasetRecord], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("images"))?;
    let mut out = BufWriter::new(File::create(dir.join(ANNOTATIONS_FILE))?);
    for r in records {
        let image = format!("images/{:04}.pgm", r.id);
        write_pgm(&dir.join(&image), &r.image)?;
        let line = AnnotationLine {
            id: r.id,
            image,
            width: r.width(),
            height: r.height(),
            instances: r
                .annotations
                .iter()
                .map(|a| AnnotationEntry {
                    class: DefectClass::ALL[a.class],
                    bbox: [a.bbox.x0, a.bbox.y0, a.bbox.x1, a.bbox.y1],
                    rle: rle_encode(&a.mask),
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &line).map_err(|e| Error::Format(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Read a dataset written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<Vec<DatasetRecord>> {
    let file = BufReader::new(File::open(dir.join(ANNOTATIONS_FILE))?);
    let mut records = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse = |message: String| Error::Parse {
            line: lineno,
            message,
        };
        let entry: AnnotationLine =
            serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
        let image = read_pgm(&dir.join(&entry.image))?;
        if (image.width() as usize, image.height() as usize) != (entry.width, entry.height) {
            return Err(parse(format!(
                "{} is {}x{}, manifest says {}x{}",
                entry.image,
                image.width(),
                image.height(),
                entry.width,
                entry.height
            )));
        }
        let annotations = entry
            .instances
            .into_iter()
            .map(|a| {
                let mask = rle_decode(entry.width, entry.height, &a.rle)
                    .map_err(|e| parse(e.to_string()))?;
                let [x0, y0, x1, y1] = a.bbox;
                Ok(InstanceRecord {
                    class: a.class.index(),
                    mask,
                    bbox: crate::boxes::BBox::new(x0, y0, x1, y1),
                    confidence: 1.0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        records.push(DatasetRecord {
            id: entry.id,
            image,
            annotations,
        });
    }
    Ok(records)
}

/// Generator settings needed to rebuild a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub spec: SceneSpec,
    pub first_index: u64,
    pub count: usize,
}

pub fn write_manifest(dir: &Path, manifest: &DatasetManifest) -> Result<()> {
    fs::create_dir_all(dir)?;
    let text = serde_json::to_string_pretty(manifest).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(dir.join(MANIFEST_FILE), text + "\n")?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        message: e.to_string(),
    })
}

/// Read `dir`, or regenerate it from its manifest when the annotations are missing.
pub fn load_or_regenerate(dir: &Path) -> Result<Vec<DatasetRecord>> {
    if dir.join(ANNOTATIONS_FILE).exists() {
        return read_dataset(dir);
    }
    let m = read_manifest(dir)?;
    let records = generate_split(&m.spec, m.first_index, m.count)?;
    write_dataset(&records, dir)?;
    Ok(records)
}
