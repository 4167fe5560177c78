use serde::{Deserialize, Serialize};

use super::{evaluate, train, TrainConfig};
use crate::error::{invalid, Result};
use crate::metrics::MetricReport;
use crate::net::Variant;
use crate::synthdata::{DataConfig, SequenceSample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSpec {
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    /// Per-run settings; `variant` and `seed` are overwritten per run.
    pub train: TrainConfig,
    /// Deltas are reported against this row.
    pub reference: Variant,
}

impl Default for AblationSpec {
    fn default() -> Self {
        Self {
            variants: Variant::ALL.to_vec(),
            seeds: vec![0, 1, 2],
            train: TrainConfig::default(),
            reference: Variant::CrossSSeq,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub report: MetricReport,
    pub final_loss: f64,
    /// Mean MPJPE at the blacked-out frame of the occluded test set.
    pub occluded_frame_mpjpe_mm: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub runs: Vec<SeedResult>,
    /// Seed averages.
    pub mpjpe_mm: f64,
    pub mpvpe_mm: f64,
    pub mrrpe_mm: f64,
    pub occluded_frame_mpjpe_mm: Option<f64>,
    /// This row minus the reference row.
    pub delta_mpjpe_mm: f64,
    pub delta_mpvpe_mm: f64,
    pub delta_mrrpe_mm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub reference: Variant,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, v: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == v)
    }

    /// Fixed-width text rendering.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:<16}{:>12}{:>12}{:>12}{:>12}{:>12}{:>12}\n",
            "variant", "MPJPE", "MPVPE", "MRRPE", "dMPJPE", "dMPVPE", "dMRRPE"
        );
        for r in &self.rows {
            s += &format!(
                "{:<16}{:>12.3}{:>12.3}{:>12.3}{:>+12.3}{:>+12.3}{:>+12.3}\n",
                r.variant.name(),
                r.mpjpe_mm,
                r.mpvpe_mm,
                r.mrrpe_mm,
                r.delta_mpjpe_mm,
                r.delta_mpvpe_mm,
                r.delta_mrrpe_mm
            );
        }
        s + &format!("deltas relative to {}; errors in mm\n", self.reference.name())
    }
}

/// A blacked-out test set and the frame that was blacked out.
pub struct OccludedSet<'a> {
    pub samples: &'a [SequenceSample],
    pub frame: usize,
}

/// Trains every variant under every seed and tabulates seed-averaged test
/// metrics. `progress` receives `(variant, seed)` before each run.
pub fn run_ablation(
    spec: &AblationSpec,
    data: &DataConfig,
    train_set: &[SequenceSample],
    test_set: &[SequenceSample],
    occluded: Option<OccludedSet<'_>>,
    mut progress: impl FnMut(Variant, u64),
) -> Result<AblationTable> {
    if spec.variants.is_empty() || spec.seeds.is_empty() {
        return Err(invalid("an ablation needs at least one variant and one seed"));
    }
    if !spec.variants.contains(&spec.reference) {
        return Err(invalid(format!("reference variant {} is not part of the sweep", spec.reference)));
    }
    let hands = data.hand_model()?;
    let mut rows = Vec::with_capacity(spec.variants.len());
    for &variant in &spec.variants {
        let mut runs = Vec::with_capacity(spec.seeds.len());
        for &seed in &spec.seeds {
            progress(variant, seed);
            let cfg = TrainConfig {
                variant,
                seed,
                ..spec.train.clone()
            };
            let (model, logs) = train(&cfg, data, train_set)?;
            let report = evaluate(&model, &hands, test_set)?.mean;
            let occluded_frame_mpjpe_mm = match &occluded {
                Some(o) => Some(evaluate(&model, &hands, o.samples)?.frame_mpjpe(o.frame)),
                None => None,
            };
            runs.push(SeedResult {
                seed,
                report,
                final_loss: logs.last().map_or(f64::NAN, |l| l.loss.total),
                occluded_frame_mpjpe_mm,
            });
        }
        let n = runs.len() as f64;
        let avg = |f: &dyn Fn(&SeedResult) -> f64| runs.iter().map(f).sum::<f64>() / n;
        let occ = runs
            .iter()
            .map(|r| r.occluded_frame_mpjpe_mm)
            .collect::<Option<Vec<f64>>>()
            .map(|v| v.iter().sum::<f64>() / n);
        rows.push(AblationRow {
            variant,
            mpjpe_mm: avg(&|r| r.report.mpjpe_mm),
            mpvpe_mm: avg(&|r| r.report.mpvpe_mm),
            mrrpe_mm: avg(&|r| r.report.mrrpe_mm),
            occluded_frame_mpjpe_mm: occ,
            runs,
            delta_mpjpe_mm: 0.0,
            delta_mpvpe_mm: 0.0,
            delta_mrrpe_mm: 0.0,
        });
    }
    let reference = rows.iter().find(|r| r.variant == spec.reference).cloned().expect("checked above");
    for r in &mut rows {
        r.delta_mpjpe_mm = r.mpjpe_mm - reference.mpjpe_mm;
        r.delta_mpvpe_mm = r.mpvpe_mm - reference.mpvpe_mm;
        r.delta_mrrpe_mm = r.mrrpe_mm - reference.mrrpe_mm;
    }
    Ok(AblationTable {
        reference: spec.reference,
        rows,
    })
}
