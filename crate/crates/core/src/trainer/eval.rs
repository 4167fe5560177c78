use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::handkin::{HandModel, HandOutput, HandParams, Side, BETA_BOUND};
use crate::metrics::{accel_e, auc, mpjpe_detailed, mpvpe, mrrpe, MetricReport, DEFAULT_AUC_MAX_MM};
use crate::net::{ForwardOptions, Model, Prediction};
use crate::synthdata::SequenceSample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceMetrics {
    pub seed: u64,
    pub report: MetricReport,
    /// Both hands' mean MPJPE at each frame.
    pub per_frame_mpjpe_mm: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Unweighted mean of the per-sequence reports.
    pub mean: MetricReport,
    pub sequences: Vec<SequenceMetrics>,
}

impl EvalReport {
    /// Mean over sequences of the MPJPE at frame `t`.
    pub fn frame_mpjpe(&self, t: usize) -> f64 {
        let n = self.sequences.len() as f64;
        self.sequences.iter().map(|s| s.per_frame_mpjpe_mm[t]).sum::<f64>() / n
    }
}

/// Shape coefficients beyond the model's bound are clamped so that an
/// untrained network can still be scored.
fn hand(hands: &HandModel, pred: &Prediction, side: Side) -> Result<HandOutput> {
    let mut p: HandParams = pred.params(side);
    p.beta.iter_mut().for_each(|b| *b = b.clamp(-BETA_BOUND, BETA_BOUND));
    hands.forward(&p)
}

fn centered(j: &Array2<f64>) -> Array2<f64> {
    j - &j.row(0)
}

fn root(j: &Array2<f64>) -> [f64; 3] {
    [j[[0, 0]], j[[0, 1]], j[[0, 2]]]
}

fn sequence_metrics(hands: &HandModel, sample: &SequenceSample, preds: &[Prediction]) -> Result<SequenceMetrics> {
    if preds.len() != sample.frames.len() {
        return Err(invalid(format!("{} predictions for {} frames", preds.len(), sample.frames.len())));
    }
    let mut per_frame = Vec::with_capacity(preds.len());
    let (mut mpvpe_sum, mut mrrpe_sum) = (0.0, 0.0);
    let mut joint_errors = Vec::new();
    let mut seqs: [(Vec<Array2<f64>>, Vec<Array2<f64>>); 2] = Default::default();
    for (pred, f) in preds.iter().zip(&sample.frames) {
        let mut frame_mpjpe = 0.0;
        for (k, (side, j_gt, v_gt)) in [(Side::Right, &f.j_r, &f.v_r), (Side::Left, &f.j_l, &f.v_l)].into_iter().enumerate() {
            let out = hand(hands, pred, side)?;
            let m = mpjpe_detailed(&out.joints, j_gt)?;
            frame_mpjpe += 0.5 * m.mm;
            mpvpe_sum += 0.5 * mpvpe(&out.vertices, v_gt, root(&out.joints), root(j_gt))?;
            let (pc, gc) = (centered(&out.joints) * m.scale, centered(j_gt));
            for (a, b) in pc.rows().into_iter().zip(gc.rows()) {
                joint_errors.push(1000.0 * (&a - &b).mapv(|x| x * x).sum().sqrt());
            }
            seqs[k].0.push(centered(&out.joints));
            seqs[k].1.push(centered(j_gt));
        }
        per_frame.push(frame_mpjpe);
        mrrpe_sum += mrrpe(pred.upsilon, f.upsilon());
    }
    let t = preds.len() as f64;
    let accel = 0.5 * (accel_e(&seqs[0].0, &seqs[0].1, sample.fps)? + accel_e(&seqs[1].0, &seqs[1].1, sample.fps)?);
    Ok(SequenceMetrics {
        seed: sample.seed,
        report: MetricReport {
            mpjpe_mm: per_frame.iter().sum::<f64>() / t,
            mpvpe_mm: mpvpe_sum / t,
            mrrpe_mm: mrrpe_sum / t,
            accel_e_mm_s2: accel,
            auc: auc(&joint_errors, DEFAULT_AUC_MAX_MM)?,
        },
        per_frame_mpjpe_mm: per_frame,
    })
}

/// Scores given predictions, one vector per sample.
pub fn evaluate_predictions(hands: &HandModel, samples: &[SequenceSample], preds: &[Vec<Prediction>]) -> Result<EvalReport> {
    if samples.is_empty() || samples.len() != preds.len() {
        return Err(invalid(format!("{} prediction sets for {} samples", preds.len(), samples.len())));
    }
    let sequences = samples
        .iter()
        .zip(preds)
        .map(|(s, p)| sequence_metrics(hands, s, p))
        .collect::<Result<Vec<_>>>()?;
    let n = sequences.len() as f64;
    let mean_of = |f: fn(&MetricReport) -> f64| sequences.iter().map(|s| f(&s.report)).sum::<f64>() / n;
    let mean = MetricReport {
        mpjpe_mm: mean_of(|r| r.mpjpe_mm),
        mpvpe_mm: mean_of(|r| r.mpvpe_mm),
        mrrpe_mm: mean_of(|r| r.mrrpe_mm),
        accel_e_mm_s2: mean_of(|r| r.accel_e_mm_s2),
        auc: mean_of(|r| r.auc),
    };
    Ok(EvalReport { mean, sequences })
}

/// Runs `model` over every sample and scores the predictions.
pub fn evaluate(model: &Model, hands: &HandModel, samples: &[SequenceSample]) -> Result<EvalReport> {
    let preds = samples
        .iter()
        .map(|s| model.predict_with(&s.inputs(), &ForwardOptions::default()))
        .collect::<Result<Vec<_>>>()?;
    evaluate_predictions(hands, samples, &preds)
}
