//! End-to-end scenario driver.

use std::fmt;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{evaluate_batches, scenario_table, EvalReport};
use crate::imaging::io::write_mask;
use crate::imaging::{add_border, crop_border, prepare_image, prepare_mask, Augmentation, BinaryMask, FloatRaster, GrayImage, RgbImage};
use crate::postprocess::postprocess;
use crate::preprocess::preprocess;
use crate::transforms::{build_input_stack, FeatureStack};
use crate::unet::{lesion_probability, predict, train, weights, TrainHistory, TrainSample, UNetParams};

use super::config::ScenarioConfig;
use super::dataset::{Dataset, Record};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Prepare,
    Preprocess,
    Transform,
    Augment,
    Train,
    Predict,
    Postprocess,
    Evaluate,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Prepare => "prepare",
            Stage::Preprocess => "preprocess",
            Stage::Transform => "transform",
            Stage::Augment => "augment",
            Stage::Train => "train",
            Stage::Predict => "predict",
            Stage::Postprocess => "postprocess",
            Stage::Evaluate => "evaluate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Stages a scenario executes, in order.
pub fn stage_plan(cfg: &ScenarioConfig) -> Vec<Stage> {
    let mut plan = vec![Stage::Prepare];
    if cfg.preprocess_enabled() {
        plan.push(Stage::Preprocess);
    }
    if cfg.lbp_enabled() || cfg.wavelet_levels() > 0 {
        plan.push(Stage::Transform);
    }
    plan.extend([Stage::Augment, Stage::Train, Stage::Predict]);
    if cfg.postprocess_enabled() {
        plan.push(Stage::Postprocess);
    }
    plan.push(Stage::Evaluate);
    plan
}

/// Prepared (and, when enabled, pre-processed) gray image with its border.
///
/// Pre-processing runs on the interior and the border is re-applied
/// afterwards, so mirrored content in the border does not feed the
/// contrast histogram or the vignette ring means.
pub fn prepare_input(cfg: &ScenarioConfig, image: &RgbImage) -> Result<GrayImage> {
    let prepared = prepare_image(image, cfg.image_size, cfg.border)?;
    if !cfg.preprocess_enabled() {
        return Ok(prepared);
    }
    let interior = crop_border(&prepared, cfg.border)?;
    let (clean, _) = preprocess(&interior, &cfg.preprocess)?;
    add_border(&clean, cfg.border)
}

/// Lesion probability (border removed) and the final mask for one input.
pub fn segment(cfg: &ScenarioConfig, params: &UNetParams<f32>, input: &FeatureStack) -> Result<(FloatRaster, BinaryMask)> {
    let probs = predict(params, input)?;
    let prob = lesion_probability(&probs, 0, cfg.border)?;
    let mask = postprocess(&prob, cfg.evaluation.tau, cfg.postprocess_enabled())?;
    Ok((prob, mask))
}

/// Input stack and border-free ground truth for one record.
fn featurize(cfg: &ScenarioConfig, r: &Record) -> Result<(FeatureStack, BinaryMask)> {
    if (r.image.width(), r.image.height()) != (r.mask.width(), r.mask.height()) {
        return Err(Error::stage(
            "prepare",
            r.id.clone(),
            Error::Data("image and mask sizes differ".into()),
        ));
    }
    let input = prepare_input(cfg, &r.image).map_err(|e| {
        let stage = if matches!(e, Error::InvalidInput(_)) && cfg.preprocess_enabled() { "preprocess" } else { "prepare" };
        Error::stage(stage, r.id.clone(), e)
    })?;
    let stack = build_input_stack(&input, cfg).map_err(|e| Error::stage("transform", r.id.clone(), e))?;
    Ok((stack, prepare_mask(&r.mask, cfg.image_size)))
}

/// Six augmented variants per record, ids suffixed with the variant tag.
pub fn augmented_samples(cfg: &ScenarioConfig, records: &[Record]) -> Result<Vec<TrainSample>> {
    let per_record: Vec<Vec<TrainSample>> = records
        .par_iter()
        .map(|r| {
            let (stack, mask) = featurize(cfg, r)?;
            Ok(Augmentation::ALL
                .iter()
                .map(|&a| TrainSample {
                    id: format!("{}_{}", r.id, a.tag()),
                    input: stack.augmented(a),
                    target: a.apply(&mask),
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_record.into_iter().flatten().collect())
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub report: EvalReport,
    pub history: TrainHistory,
    pub params: UNetParams<f32>,
    pub stages: Vec<Stage>,
}

#[derive(Serialize)]
struct Summary<'a> {
    scenario: &'a str,
    stages: &'a [Stage],
    train_samples: usize,
    test_samples: usize,
    train_jaccard: Option<f64>,
    test_mean: f64,
    test_std: f64,
}

/// Runs one scenario on an in-memory dataset. With `out_dir` set, writes
/// `config.toml`, `weights.lpwt`, `history.csv`, `report.csv`,
/// `summary.json` and `masks/<id>.png`.
pub fn run_scenario(cfg: &ScenarioConfig, data: &Dataset, out_dir: Option<&Path>) -> Result<RunOutcome> {
    cfg.validate()?;
    let stages = stage_plan(cfg);
    log::info!(
        "scenario {}: {}",
        cfg.scenario,
        stages.iter().map(|s| s.name()).collect::<Vec<_>>().join(" -> ")
    );
    let train_set = augmented_samples(cfg, &data.train)?;
    let test_set = augmented_samples(cfg, &data.test)?;
    log::info!("{} training and {} testing samples after augmentation", train_set.len(), test_set.len());

    let (params, history) = train(&train_set, cfg.unet_config(), &cfg.training, cfg.border)
        .map_err(|e| Error::stage("train", "-", e))?;

    let predictions: Vec<BinaryMask> = test_set
        .par_iter()
        .map(|s| {
            segment(cfg, &params, &s.input)
                .map(|(_, m)| m)
                .map_err(|e| Error::stage("predict", s.id.clone(), e))
        })
        .collect::<Result<_>>()?;
    let ids: Vec<String> = test_set.iter().map(|s| s.id.clone()).collect();
    let truths: Vec<BinaryMask> = test_set.iter().map(|s| s.target.clone()).collect();
    let mut report = evaluate_batches(
        &cfg.scenario.to_string(),
        &ids,
        &predictions,
        &truths,
        cfg.evaluation.batch_size,
        cfg.evaluation.batches,
        cfg.seed,
    )
    .map_err(|e| Error::stage("evaluate", "-", e))?;
    report.train_jaccard = Some(history.final_train_jaccard());

    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, text: &str| fs::write(dir.join(name), text).map_err(|e| Error::io(dir.join(name), e));
        write("config.toml", &cfg.to_toml_string())?;
        weights::save(&params, &dir.join("weights.lpwt"), true)?;
        write("history.csv", &history.to_csv())?;
        write("report.csv", &report.to_csv())?;
        let summary = Summary {
            scenario: &report.scenario,
            stages: &stages,
            train_samples: train_set.len(),
            test_samples: test_set.len(),
            train_jaccard: report.train_jaccard,
            test_mean: report.mean,
            test_std: report.std,
        };
        write("summary.json", &serde_json::to_string_pretty(&summary).expect("summary serialises"))?;
        ids.par_iter()
            .zip(&predictions)
            .try_for_each(|(id, m)| write_mask(&dir.join("masks").join(format!("{id}.png")), m))?;
    }
    log::info!(
        "scenario {}: train jaccard {:.4}, test {:.4} +- {:.4}",
        cfg.scenario,
        report.train_jaccard.unwrap_or(f64::NAN),
        report.mean,
        report.std
    );
    Ok(RunOutcome {
        report,
        history,
        params,
        stages,
    })
}

/// Runs every configuration on the same data and returns the reports with
/// the comparison table. Configurations must differ only in the scenario.
pub fn compare_scenarios(cfgs: &[ScenarioConfig], data: &Dataset, out_dir: Option<&Path>) -> Result<(Vec<EvalReport>, String)> {
    let first = cfgs
        .first()
        .ok_or_else(|| Error::Config("no scenarios to compare".into()))?;
    for c in cfgs {
        if c.seed != first.seed {
            return Err(Error::Config(format!(
                "scenario {} uses seed {} but {} uses {}",
                c.scenario, c.seed, first.scenario, first.seed
            )));
        }
        if c.paths.data != first.paths.data {
            return Err(Error::Config(format!(
                "scenario {} reads a different dataset than scenario {}",
                c.scenario, first.scenario
            )));
        }
        if (c.image_size, c.border) != (first.image_size, first.border) {
            return Err(Error::Config(format!(
                "scenario {} prepares images differently than scenario {}",
                c.scenario, first.scenario
            )));
        }
    }
    let mut reports = Vec::with_capacity(cfgs.len());
    for c in cfgs {
        let dir = out_dir.map(|d| d.join(format!("scenario_{}", c.scenario.to_string().to_lowercase())));
        reports.push(run_scenario(c, data, dir.as_deref())?.report);
    }
    let table = scenario_table(&reports);
    if let Some(dir) = out_dir {
        fs::write(dir.join("table.txt"), &table).map_err(|e| Error::io(dir.join("table.txt"), e))?;
    }
    Ok((reports, table))
}
