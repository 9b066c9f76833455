use crate::error::{input_err, Result};

/// Scores where higher means "more in-distribution", with ground-truth ID flags.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryDetection {
    scores: Vec<f64>,
    is_id: Vec<bool>,
}

impl BinaryDetection {
    pub fn new(scores: Vec<f64>, is_id: Vec<bool>) -> Result<Self> {
        if scores.len() != is_id.len() {
            return input_err(format!("{} scores for {} flags", scores.len(), is_id.len()));
        }
        if !is_id.iter().any(|&b| b) || is_id.iter().all(|&b| b) {
            return input_err("detection metrics need both in- and out-of-distribution samples");
        }
        if scores.iter().any(|s| s.is_nan()) {
            return input_err("detection scores contain NaN");
        }
        Ok(Self { scores, is_id })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn is_id(&self) -> &[bool] {
        &self.is_id
    }

    /// Cumulative `(true positives, false positives)` after each distinct threshold,
    /// sweeping from the highest score down. Tied scores enter together.
    fn sweep(&self, positive_is_id: bool) -> (Vec<(usize, usize)>, usize, usize) {
        let mut order: Vec<usize> = (0..self.scores.len()).collect();
        let sign = if positive_is_id { 1.0 } else { -1.0 };
        order.sort_by(|&a, &b| (sign * self.scores[b]).total_cmp(&(sign * self.scores[a])));
        let pos = self.is_id.iter().filter(|&&b| b == positive_is_id).count();
        let neg = self.scores.len() - pos;
        let mut points = Vec::new();
        let (mut tp, mut fp) = (0, 0);
        for (k, &i) in order.iter().enumerate() {
            if self.is_id[i] == positive_is_id {
                tp += 1;
            } else {
                fp += 1;
            }
            let last = k + 1 == order.len() || self.scores[order[k + 1]] != self.scores[i];
            if last {
                points.push((tp, fp));
            }
        }
        (points, pos, neg)
    }
}

/// Area under the ROC curve: the probability that a random ID sample outscores a
/// random OOD one, ties counting one half.
pub fn auroc(det: &BinaryDetection) -> Result<f64> {
    let (points, pos, neg) = det.sweep(true);
    let (mut area, mut prev_tp, mut prev_fp) = (0.0, 0usize, 0usize);
    for &(tp, fp) in &points {
        // trapezoid over one tie group
        area += (fp - prev_fp) as f64 * (tp + prev_tp) as f64 / 2.0;
        prev_tp = tp;
        prev_fp = fp;
    }
    Ok(area / (pos * neg) as f64)
}

/// Area under the precision–recall curve with ID as the positive class.
pub fn aupr(det: &BinaryDetection) -> Result<f64> {
    aupr_with(det, true)
}

/// Step-interpolated precision–recall area (average precision): `Σ (R_k − R_{k−1})·P_k`
/// over distinct thresholds. `positive_is_id = false` treats OOD as the positive class
/// and ranks by descending negated score.
pub fn aupr_with(det: &BinaryDetection, positive_is_id: bool) -> Result<f64> {
    let (points, pos, _) = det.sweep(positive_is_id);
    let (mut area, mut prev_tp) = (0.0, 0usize);
    for &(tp, fp) in &points {
        if tp > prev_tp {
            area += (tp - prev_tp) as f64 / pos as f64 * (tp as f64 / (tp + fp) as f64);
        }
        prev_tp = tp;
    }
    Ok(area)
}

/// Smallest false-positive rate among thresholds whose ID recall reaches 95%.
pub fn fpr_at_95_tpr(det: &BinaryDetection) -> Result<f64> {
    let (points, pos, neg) = det.sweep(true);
    let hit = points
        .iter()
        .find(|&&(tp, _)| 100 * tp >= 95 * pos)
        .expect("the last threshold accepts every sample");
    Ok(hit.1 as f64 / neg as f64)
}
