use std::path::Path;

use anyhow::Result;

use afpnkit_core::metrics::evaluate;

use crate::config::RunConfig;
use crate::dataset::{load_detections, AnnotationSet};
use crate::output::emit;
use crate::Status;

pub fn eval(cfg: &RunConfig, detections: &Path, annotations: &Path, out: Option<&Path>) -> Result<Status> {
    let set = AnnotationSet::load(annotations)?;
    let dets = load_detections(detections, &set)?;
    let gts = set.metric_ground_truths();
    let report = evaluate(&dets, &gts, &set.categories, set.images.len().max(1), &cfg.eval())?;
    emit(&report, out)?;
    Ok(Status::Pass)
}
