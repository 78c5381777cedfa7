use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::ModelState;
use super::scene::Scene;
use crate::binarize::{BinaryMap, ConfidenceMap, ThresholdField};
use crate::error::{Error, Result};
use crate::evalx::{
    counting_errors, localization_scores, match_instances, GtPoint, MatchReport, MetricsReport,
};
use crate::instances::{extract_instances, label_components, LocalizationResult};
use crate::labels::Annotation;
use crate::numgrid::Grid;

/// Intermediate maps of one inference pass.
#[derive(Clone, Debug)]
pub struct Localized {
    pub result: LocalizationResult,
    pub confidence: ConfidenceMap,
    pub threshold: ThresholdField,
    pub binary: BinaryMap,
}

pub fn localize_detailed(image: &Grid, model: &ModelState, image_id: &str) -> Result<Localized> {
    let (confidence, features) = model.predict(image)?;
    let (binary, threshold) = model.binarize(&confidence, &features)?;
    let labels = label_components(&binary)?;
    let result = extract_instances(&labels, model.min_area, image_id);
    Ok(Localized {
        result,
        confidence,
        threshold,
        binary,
    })
}

/// Confidence, binarization, connected components, read-out.
pub fn localize_image(image: &Grid, model: &ModelState, image_id: &str) -> Result<LocalizationResult> {
    localize_detailed(image, model, image_id).map(|l| l.result)
}

/// Ground-truth centers and match radii. Matching needs head boxes.
pub fn gt_points(ann: &Annotation) -> Result<Vec<GtPoint>> {
    if ann.count() > 0 && !ann.has_boxes() {
        return Err(Error::Annotation {
            id: ann.id.clone(),
            reason: "evaluation needs head boxes to derive match radii".into(),
        });
    }
    Ok(ann
        .box_centers()
        .into_iter()
        .zip(ann.sigma_l())
        .map(|(center, sigma)| GtPoint { center, sigma })
        .collect())
}

/// Per-image line of an evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub pred_count: usize,
    pub gt_count: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub images: Vec<ImageRecord>,
    pub results: Vec<LocalizationResult>,
    pub matches: Vec<MatchReport>,
}

/// Scores given predictions for each annotation, in the same order.
pub fn evaluate_predictions(annotations: &[&Annotation], results: Vec<LocalizationResult>) -> Result<Evaluation> {
    if annotations.len() != results.len() {
        return Err(Error::InvalidArgument(format!(
            "{} annotations but {} results",
            annotations.len(),
            results.len()
        )));
    }
    let mut matches = Vec::with_capacity(results.len());
    let mut images = Vec::with_capacity(results.len());
    let mut counts = Vec::with_capacity(results.len());
    for (ann, res) in annotations.iter().zip(&results) {
        let m = match_instances(&res.centers(), &gt_points(ann)?);
        images.push(ImageRecord {
            id: ann.id.clone(),
            pred_count: res.count(),
            gt_count: ann.count(),
            tp: m.tp,
            fp: m.fp,
            fn_: m.fn_,
        });
        counts.push((res.count(), ann.count()));
        matches.push(m);
    }
    let report = MetricsReport::new(&localization_scores(&matches), &counting_errors(&counts), results.len());
    Ok(Evaluation {
        report,
        images,
        results,
        matches,
    })
}

pub fn evaluate_scenes(scenes: &[Scene], model: &ModelState) -> Result<Evaluation> {
    let results = scenes
        .iter()
        .map(|s| localize_image(&s.image, model, &s.annotation.id))
        .collect::<Result<Vec<_>>>()?;
    let anns: Vec<&Annotation> = scenes.iter().map(|s| &s.annotation).collect();
    evaluate_predictions(&anns, results)
}

/// Writes one result per image, as text records (one line each) or, when the
/// path ends in `.json`, as a JSON array.
pub fn write_results(path: &Path, results: &[LocalizationResult]) -> Result<()> {
    let text = if is_json(path) {
        serde_json::to_string_pretty(results).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?
    } else {
        results.iter().map(|r| r.to_record() + "\n").collect()
    };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a file written by [`write_results`]; the format follows the extension.
pub fn read_results(path: &Path) -> Result<Vec<LocalizationResult>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if is_json(path) {
        return serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        });
    }
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(LocalizationResult::from_record)
        .collect()
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "json")
}
