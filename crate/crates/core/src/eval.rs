//! Jaccard index and the batched evaluation protocol.

use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::BinaryMask;

/// `|A ∩ B| / |A ∪ B|`; two empty masks score 1.
pub fn jaccard(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::invalid(format!(
            "mask sizes differ: {}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        inter += (x & y) as usize;
        union += (x | y) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// One sampled image inside one evaluation batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchEntry {
    pub image_id: String,
    pub jaccard: f64,
    pub batch_id: usize,
}

/// Result of [`evaluate_batches`]. `std` is the population standard
/// deviation of the per-batch means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenario: String,
    /// Jaccard of every prediction/truth pair, in input order.
    pub per_image: Vec<f64>,
    pub entries: Vec<BatchEntry>,
    pub batch_means: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Training Jaccard of the last epoch, when the report comes from a run.
    #[serde(default)]
    pub train_jaccard: Option<f64>,
}

impl EvalReport {
    /// `image_id,jaccard,batch_id` rows followed by `mean` and `std` footers.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("image_id,jaccard,batch_id\n");
        for e in &self.entries {
            let _ = writeln!(s, "{},{},{}", e.image_id, e.jaccard, e.batch_id);
        }
        let _ = writeln!(s, "mean,{},", self.mean);
        let _ = writeln!(s, "std,{},", self.std);
        s
    }
}

/// Draws `n_batches` batches of `batch_size` distinct pairs with a seeded
/// RNG and summarises the per-batch mean Jaccard.
pub fn evaluate_batches(
    scenario: &str,
    ids: &[String],
    predictions: &[BinaryMask],
    truths: &[BinaryMask],
    batch_size: usize,
    n_batches: usize,
    seed: u64,
) -> Result<EvalReport> {
    if predictions.len() != truths.len() || ids.len() != truths.len() {
        return Err(Error::invalid(format!(
            "{} ids, {} predictions, {} truths",
            ids.len(),
            predictions.len(),
            truths.len()
        )));
    }
    if batch_size == 0 || n_batches == 0 {
        return Err(Error::invalid("batch size and batch count must be positive"));
    }
    if truths.len() < batch_size {
        return Err(Error::Data(format!(
            "{} pairs cannot fill a batch of {batch_size}",
            truths.len()
        )));
    }
    let per_image = predictions
        .iter()
        .zip(truths)
        .map(|(p, t)| jaccard(p, t))
        .collect::<Result<Vec<f64>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut entries = Vec::with_capacity(batch_size * n_batches);
    let mut batch_means = Vec::with_capacity(n_batches);
    for batch_id in 0..n_batches {
        let picks = sample(&mut rng, truths.len(), batch_size);
        let mut sum = 0.0;
        for i in picks.iter() {
            sum += per_image[i];
            entries.push(BatchEntry {
                image_id: ids[i].clone(),
                jaccard: per_image[i],
                batch_id,
            });
        }
        batch_means.push(sum / batch_size as f64);
    }
    let mean = batch_means.iter().sum::<f64>() / n_batches as f64;
    let var = batch_means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / n_batches as f64;
    Ok(EvalReport {
        scenario: scenario.to_string(),
        per_image,
        entries,
        batch_means,
        mean,
        std: var.sqrt(),
        train_jaccard: None,
    })
}

/// Ablation-style table: rows Training / Testing μ / Testing σ, one column
/// per report, values in percent with two decimals.
pub fn scenario_table(reports: &[EvalReport]) -> String {
    let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{:.2}", v * 100.0));
    let mut s = String::new();
    let _ = write!(s, "{:<12}", "");
    for r in reports {
        let _ = write!(s, "{:>8}", r.scenario);
    }
    s.push('\n');
    let rows: [(&str, Box<dyn Fn(&EvalReport) -> Option<f64>>); 3] = [
        ("Training", Box::new(|r| r.train_jaccard)),
        ("Testing μ", Box::new(|r| Some(r.mean))),
        ("Testing σ", Box::new(|r| Some(r.std))),
    ];
    for (name, f) in rows.iter() {
        let _ = write!(s, "{:<12}", name);
        for r in reports {
            let _ = write!(s, "{:>8}", cell(f(r)));
        }
        s.push('\n');
    }
    s
}
