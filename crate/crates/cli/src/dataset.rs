//! JSON annotation and detection files, and PNG image I/O.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Component, Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use afpnkit_core::augment::{LabeledBox, Sample};
use afpnkit_core::boxes::BBox;
use afpnkit_core::metrics::{GroundTruth, ImageDetection};
use afpnkit_core::tensor::Tensor;

/// Output coordinates are rounded to this many decimals.
const COORD_DECIMALS: i32 = 6;

pub fn round_coord(v: f64) -> f64 {
    let s = 10f64.powi(COORD_DECIMALS);
    let r = (v * s).round() / s;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn is_one(w: &f64) -> bool {
    *w == 1.0
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub image_id: u64,
    /// Relative to the annotation file's directory.
    pub path: PathBuf,
    pub width: usize,
    pub height: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_weights: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GtRecord {
    pub image_id: u64,
    /// `[x_min, y_min, x_max, y_max]` in pixels.
    pub bbox: [f64; 4],
    pub class: String,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationSet {
    pub categories: Vec<String>,
    pub images: Vec<ImageRecord>,
    pub ground_truths: Vec<GtRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub image_id: u64,
    pub class: String,
    pub bbox: [f64; 4],
    pub score: f64,
}

fn corner_box(b: &[f64; 4]) -> Result<BBox> {
    let [x0, y0, x1, y1] = *b;
    ensure!(x0 < x1 && y0 < y1, "box {b:?} needs x_min < x_max and y_min < y_max");
    Ok(BBox::from_corners(x0, y0, x1, y1)?)
}

impl AnnotationSet {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading annotations {}", path.display()))?;
        let set: AnnotationSet =
            serde_json::from_slice(&bytes).with_context(|| format!("parsing annotations {}", path.display()))?;
        set.validate().with_context(|| format!("invalid annotations {}", path.display()))?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for c in &self.categories {
            ensure!(names.insert(c.as_str()), "duplicate category `{c}`");
        }
        let mut sizes = HashMap::new();
        for im in &self.images {
            ensure!(im.width > 0 && im.height > 0, "image {} has an empty size", im.image_id);
            ensure!(sizes.insert(im.image_id, (im.width, im.height)).is_none(), "duplicate image_id {}", im.image_id);
            if let Some(lw) = &im.label_weights {
                for (c, w) in lw {
                    ensure!(names.contains(c.as_str()), "image {} weights unknown class `{c}`", im.image_id);
                    ensure!(w.is_finite() && *w >= 0.0, "image {} has label weight {w} for `{c}`", im.image_id);
                }
            }
        }
        for (i, g) in self.ground_truths.iter().enumerate() {
            let ctx = || format!("ground truth #{i}");
            ensure!(names.contains(g.class.as_str()), "{}: class `{}` is not a declared category", ctx(), g.class);
            let Some(&(w, h)) = sizes.get(&g.image_id) else {
                bail!("{}: unknown image_id {}", ctx(), g.image_id);
            };
            let [x0, y0, x1, y1] = g.bbox;
            ensure!(g.bbox.iter().all(|v| v.is_finite()), "{}: non-finite box", ctx());
            ensure!(x0 < x1 && y0 < y1, "{}: box {:?} needs x_min < x_max and y_min < y_max", ctx(), g.bbox);
            ensure!(
                x0 >= 0.0 && y0 >= 0.0 && x1 <= w as f64 && y1 <= h as f64,
                "{}: box {:?} leaves the {w}x{h} image",
                ctx(),
                g.bbox
            );
            ensure!(g.weight.is_finite() && g.weight >= 0.0, "{}: weight {} must be >= 0", ctx(), g.weight);
        }
        Ok(())
    }

    pub fn class_id(&self, name: &str) -> Option<u32> {
        self.categories.iter().position(|c| c == name).map(|i| i as u32)
    }

    pub fn metric_ground_truths(&self) -> Vec<GroundTruth> {
        self.ground_truths
            .iter()
            .map(|g| GroundTruth {
                image_id: g.image_id,
                bbox: corner_box(&g.bbox).expect("validated"),
                class_id: self.class_id(&g.class).expect("validated"),
            })
            .collect()
    }

    /// Boxes and label weights of one image.
    pub fn boxes_of(&self, image: &ImageRecord) -> (Vec<LabeledBox>, Option<BTreeMap<u32, f64>>) {
        let boxes = self
            .ground_truths
            .iter()
            .filter(|g| g.image_id == image.image_id)
            .map(|g| LabeledBox {
                bbox: corner_box(&g.bbox).expect("validated"),
                class_id: self.class_id(&g.class).expect("validated"),
                weight: g.weight,
            })
            .collect();
        let weights = image.label_weights.as_ref().map(|lw| {
            lw.iter().map(|(c, &w)| (self.class_id(c).expect("validated"), w)).collect()
        });
        (boxes, weights)
    }
}

/// Reads detections and resolves classes and images against `set`.
pub fn load_detections(path: &Path, set: &AnnotationSet) -> Result<Vec<ImageDetection>> {
    let bytes = std::fs::read(path).with_context(|| format!("reading detections {}", path.display()))?;
    let records: Vec<DetectionRecord> =
        serde_json::from_slice(&bytes).with_context(|| format!("parsing detections {}", path.display()))?;
    let images: HashSet<u64> = set.images.iter().map(|i| i.image_id).collect();
    let mut unknown_classes = Vec::new();
    let mut out = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        ensure!(images.contains(&r.image_id), "detection #{i}: unknown image_id {}", r.image_id);
        ensure!(r.score.is_finite(), "detection #{i}: non-finite score");
        let Some(class_id) = set.class_id(&r.class) else {
            if !unknown_classes.contains(&r.class) {
                unknown_classes.push(r.class.clone());
            }
            continue;
        };
        let bbox = corner_box(&r.bbox).with_context(|| format!("detection #{i}"))?;
        out.push(ImageDetection { image_id: r.image_id, bbox, class_id, score: r.score });
    }
    ensure!(
        unknown_classes.is_empty(),
        "detections use classes missing from the annotation categories: {}",
        unknown_classes.join(", ")
    );
    Ok(out)
}

/// Rejects absolute paths and `..` so outputs stay under the output directory.
pub fn check_relative(p: &Path) -> Result<()> {
    ensure!(
        p.components().all(|c| matches!(c, Component::Normal(_) | Component::CurDir)),
        "image path {} must be relative without `..`",
        p.display()
    );
    Ok(())
}

/// RGB PNG to a `(1, 3, H, W)` tensor in `[0, 1]`.
pub fn read_image(path: &Path) -> Result<Tensor> {
    let img = image::open(path).with_context(|| format!("{}", path.display()))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    Ok(Tensor::from_fn([1, 3, h, w], |_, c, y, x| raw[(y * w + x) * 3 + c] as f32 / 255.0)?)
}

pub fn encode_png(t: &Tensor) -> Result<Vec<u8>> {
    let s = t.shape();
    ensure!(s.n == 1 && s.c == 3, "expected a (1, 3, H, W) image, got {s}");
    let mut buf = image::RgbImage::new(s.w as u32, s.h as u32);
    for (x, y, px) in buf.enumerate_pixels_mut() {
        let v = |c| (t.at(0, c, y as usize, x as usize).clamp(0.0, 1.0) * 255.0).round() as u8;
        *px = image::Rgb([v(0), v(1), v(2)]);
    }
    let mut out = std::io::Cursor::new(Vec::new());
    buf.write_to(&mut out, image::ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// Loads every image of `set` (paths relative to `root`). Fails listing every
/// unreadable or mis-sized image.
pub fn load_samples(set: &AnnotationSet, root: &Path) -> Result<Vec<Sample>> {
    let mut samples = Vec::with_capacity(set.images.len());
    let mut offenders = Vec::new();
    for im in &set.images {
        check_relative(&im.path)?;
        let path = root.join(&im.path);
        match read_image(&path) {
            Ok(t) if (t.shape().w, t.shape().h) == (im.width, im.height) => {
                let (boxes, label_weights) = set.boxes_of(im);
                let mut s = Sample::new(t, boxes)?;
                s.label_weights = label_weights;
                samples.push(s);
            }
            Ok(t) => offenders.push(format!(
                "{}: is {}x{}, annotations say {}x{}",
                path.display(),
                t.shape().w,
                t.shape().h,
                im.width,
                im.height
            )),
            Err(e) => offenders.push(format!("{}: {}", path.display(), e.root_cause())),
        }
    }
    if !offenders.is_empty() {
        bail!("{} unreadable image(s):\n  {}", offenders.len(), offenders.join("\n  "));
    }
    Ok(samples)
}
