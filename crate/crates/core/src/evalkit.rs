//! Decoding and metrics.

use serde::{Deserialize, Serialize};

use crate::datakit::{polygon_area, DetSample, SHRINK_RATIO};
use crate::error::{Error, Result};
use crate::losses::{greedy_assign, SeqLabel};
use crate::tensor::{Element, Tensor};

pub const DEFAULT_BIN_THRESH: f64 = 0.3;
pub const DEFAULT_MIN_AREA: usize = 4;
pub const DEFAULT_IOU_THRESH: f64 = 0.5;

/// Argmax path for one `[T, C]` sequence, repeats merged and blanks removed.
/// Returns the class indices, possibly empty.
pub fn greedy_decode<F: Element>(logits: &Tensor<F>) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for k in greedy_assign(logits) {
        if Some(k) != prev && k != SeqLabel::BLANK {
            out.push(k);
        }
        prev = Some(k);
    }
    out
}

/// Decodes every sequence of a `[N, T, C]` batch.
pub fn greedy_decode_batch<F: Element>(logits: &Tensor<F>) -> Result<Vec<Vec<usize>>> {
    let &[n, t, c] = logits.shape() else {
        return Err(Error::invalid(format!("expected [N, T, C] logits, got {:?}", logits.shape())));
    };
    let data = logits.data();
    Ok((0..n)
        .map(|i| greedy_decode(&Tensor::from_parts(vec![t, c], data[i * t * c..(i + 1) * t * c].to_vec())))
        .collect())
}

/// Fraction of predictions equal to their ground truth.
pub fn sentence_accuracy(preds: &[Vec<usize>], gts: &[SeqLabel]) -> Result<f64> {
    if preds.len() != gts.len() {
        return Err(Error::invalid(format!("{} predictions for {} labels", preds.len(), gts.len())));
    }
    if gts.is_empty() {
        return Ok(0.0);
    }
    let hits = preds.iter().zip(gts).filter(|(p, g)| p.as_slice() == g.symbols()).count();
    Ok(hits as f64 / gts.len() as f64)
}

/// Axis-aligned box in pixel-edge coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub score: f64,
}

impl DetBox {
    pub fn area(&self) -> f64 {
        (self.x1 - self.x0).max(0.0) * (self.y1 - self.y0).max(0.0)
    }

    pub fn iou(&self, other: &DetBox) -> f64 {
        let w = (self.x1.min(other.x1) - self.x0.max(other.x0)).max(0.0);
        let h = (self.y1.min(other.y1) - self.y0.max(other.y0)).max(0.0);
        let inter = w * h;
        let union = self.area() + other.area() - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }

    /// Reverses the DB kernel shrink for a box: grows each side by the `D`
    /// that would have shrunk the grown box back to this one, i.e. the
    /// positive root of `4(1 + r²)·D² + 2r²(w + h)·D − (1 − r²)·w·h = 0`.
    pub fn unclip(&self, width: usize, height: usize) -> DetBox {
        let (w, h) = (self.x1 - self.x0, self.y1 - self.y0);
        let r2 = SHRINK_RATIO * SHRINK_RATIO;
        let (a, b, c) = (4.0 * (1.0 + r2), 2.0 * r2 * (w + h), -(1.0 - r2) * w * h);
        let d = (-b + (b * b - 4.0 * a * c).sqrt()) / (2.0 * a);
        DetBox {
            x0: (self.x0 - d).max(0.0),
            y0: (self.y0 - d).max(0.0),
            x1: (self.x1 + d).min(width as f64),
            y1: (self.y1 + d).min(height as f64),
            score: self.score,
        }
    }

    pub fn from_polygon(poly: &[[f64; 2]]) -> DetBox {
        let (x0, y0, x1, y1) = crate::datakit::aabb(poly);
        DetBox {
            x0,
            y0,
            x1,
            y1,
            score: 1.0,
        }
    }
}

/// Connected regions (4-neighbourhood) of `prob > bin_thresh` with at least
/// `min_area` pixels, as pixel-edge bounding boxes scored by mean
/// probability. `prob` is `[H, W]`.
pub fn boxes_from_probmap<F: Element>(prob: &Tensor<F>, bin_thresh: f64, min_area: usize) -> Result<Vec<DetBox>> {
    let &[h, w] = prob.shape() else {
        return Err(Error::invalid(format!("expected an [H, W] map, got {:?}", prob.shape())));
    };
    if !(bin_thresh > 0.0 && bin_thresh < 1.0) {
        return Err(Error::invalid(format!("bin_thresh {bin_thresh} outside (0, 1)")));
    }
    let p = prob.to_f64_vec();
    let on: Vec<bool> = p.iter().map(|&v| v > bin_thresh).collect();
    let mut seen = vec![false; h * w];
    let mut boxes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..h * w {
        if !on[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0, 0);
        let (mut count, mut sum) = (0usize, 0.0);
        while let Some(k) = stack.pop() {
            let (y, x) = (k / w, k % w);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x + 1);
            y1 = y1.max(y + 1);
            count += 1;
            sum += p[k];
            let mut visit = |nk: usize| {
                if on[nk] && !seen[nk] {
                    seen[nk] = true;
                    stack.push(nk);
                }
            };
            if x > 0 {
                visit(k - 1);
            }
            if x + 1 < w {
                visit(k + 1);
            }
            if y > 0 {
                visit(k - w);
            }
            if y + 1 < h {
                visit(k + w);
            }
        }
        if count >= min_area {
            boxes.push(DetBox {
                x0: x0 as f64,
                y0: y0 as f64,
                x1: x1 as f64,
                y1: y1 as f64,
                score: sum / count as f64,
            });
        }
    }
    Ok(boxes)
}

/// Counts and scores from either evaluation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recall: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hmean: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sentence_accuracy: Option<f64>,
    pub matched: usize,
    pub pred: usize,
    pub gt: usize,
}

impl EvalReport {
    pub fn detection(matched: usize, pred: usize, gt: usize) -> Self {
        let (p, r) = match (pred, gt) {
            (0, 0) => (1.0, 1.0),
            _ => (
                if pred == 0 { 0.0 } else { matched as f64 / pred as f64 },
                if gt == 0 { 0.0 } else { matched as f64 / gt as f64 },
            ),
        };
        let h = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        EvalReport {
            precision: Some(p),
            recall: Some(r),
            hmean: Some(h),
            sentence_accuracy: None,
            matched,
            pred,
            gt,
        }
    }

    pub fn recognition(matched: usize, total: usize) -> Self {
        EvalReport {
            sentence_accuracy: Some(if total == 0 { 0.0 } else { matched as f64 / total as f64 }),
            matched,
            pred: total,
            gt: total,
            ..EvalReport::default()
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Greedy one-to-one matching: predictions in descending score order each
/// take the unmatched ground truth of highest IoU, if that IoU reaches
/// `iou_thresh`. Returns the matched `(pred, gt)` index pairs.
pub fn match_boxes(pred: &[DetBox], gt: &[DetBox], iou_thresh: f64) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..pred.len()).collect();
    order.sort_by(|&a, &b| pred[b].score.total_cmp(&pred[a].score).then(a.cmp(&b)));
    let mut taken = vec![false; gt.len()];
    let mut pairs = Vec::new();
    for i in order {
        let best = (0..gt.len())
            .filter(|&j| !taken[j])
            .map(|j| (j, pred[i].iou(&gt[j])))
            .filter(|&(_, iou)| iou >= iou_thresh)
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        if let Some((j, _)) = best {
            taken[j] = true;
            pairs.push((i, j));
        }
    }
    pairs
}

pub fn det_hmean(pred: &[DetBox], gt: &[DetBox], iou_thresh: f64) -> Result<EvalReport> {
    if !(iou_thresh > 0.0 && iou_thresh <= 1.0) {
        return Err(Error::invalid(format!("iou_thresh {iou_thresh} outside (0, 1]")));
    }
    let matched = match_boxes(pred, gt, iou_thresh).len();
    Ok(EvalReport::detection(matched, pred.len(), gt.len()))
}

/// Post-processing settings for turning a probability map into boxes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetPostprocess {
    pub bin_thresh: f64,
    pub min_area: usize,
    pub iou_thresh: f64,
}

impl Default for DetPostprocess {
    fn default() -> Self {
        DetPostprocess {
            bin_thresh: DEFAULT_BIN_THRESH,
            min_area: DEFAULT_MIN_AREA,
            iou_thresh: DEFAULT_IOU_THRESH,
        }
    }
}

/// Boxes from one `[H, W]` probability map, grown back to text size.
pub fn predict_boxes<F: Element>(prob: &Tensor<F>, post: &DetPostprocess) -> Result<Vec<DetBox>> {
    let (h, w) = (prob.shape()[0], prob.shape()[1]);
    Ok(boxes_from_probmap(prob, post.bin_thresh, post.min_area)?
        .into_iter()
        .map(|b| b.unclip(w, h))
        .collect())
}

/// Dataset-level detection score: matches are counted per image and pooled.
pub fn evaluate_detection<F: Element>(
    probs: &[Tensor<F>],
    samples: &[DetSample],
    post: &DetPostprocess,
) -> Result<EvalReport> {
    if probs.len() != samples.len() {
        return Err(Error::invalid(format!("{} maps for {} samples", probs.len(), samples.len())));
    }
    let (mut matched, mut npred, mut ngt) = (0, 0, 0);
    for (prob, sample) in probs.iter().zip(samples) {
        let pred = predict_boxes(prob, post)?;
        let gt: Vec<DetBox> = sample
            .instances
            .iter()
            .filter(|i| polygon_area(&i.polygon) > 0.0)
            .map(|i| DetBox::from_polygon(&i.polygon))
            .collect();
        matched += match_boxes(&pred, &gt, post.iou_thresh).len();
        npred += pred.len();
        ngt += gt.len();
    }
    Ok(EvalReport::detection(matched, npred, ngt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::{gen_det_dataset, DetGenConfig};
    use proptest::prelude::*;

    fn one_hot(path: &[usize], c: usize, scale: f64) -> Tensor<f64> {
        Tensor::from_fn(vec![path.len(), c], |i| if path[i / c] == i % c { scale } else { 0.0 })
    }

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64, score: f64) -> DetBox {
        DetBox { x0, y0, x1, y1, score }
    }

    #[test]
    fn decode_examples() {
        assert_eq!(greedy_decode(&one_hot(&[0, 1, 1, 0, 2], 3, 1.0)), [1, 2]);
        assert!(greedy_decode(&one_hot(&[0, 0, 0], 3, 1.0)).is_empty());
        assert_eq!(greedy_decode(&one_hot(&[1, 0, 1], 3, 1.0)), [1, 1]);
    }

    proptest! {
        #[test]
        fn decode_ignores_magnitude(path in prop::collection::vec(0usize..4, 1..10), s in 0.01f64..100.0) {
            prop_assert_eq!(greedy_decode(&one_hot(&path, 4, 1.0)), greedy_decode(&one_hot(&path, 4, s)));
        }

        #[test]
        fn hmean_symmetric(
            a in prop::collection::vec((0.0f64..20.0, 0.0f64..20.0, 1.0f64..8.0, 1.0f64..8.0), 0..6),
            b in prop::collection::vec((0.0f64..20.0, 0.0f64..20.0, 1.0f64..8.0, 1.0f64..8.0), 0..6),
        ) {
            let mk = |v: &[(f64, f64, f64, f64)]| v.iter().map(|&(x, y, w, h)| bx(x, y, x + w, y + h, 1.0)).collect::<Vec<_>>();
            let (pa, pb) = (mk(&a), mk(&b));
            let r1 = det_hmean(&pa, &pb, 0.5).unwrap();
            let r2 = det_hmean(&pb, &pa, 0.5).unwrap();
            prop_assert_eq!(r1.precision, r2.recall);
            prop_assert_eq!(r1.recall, r2.precision);
            prop_assert!((r1.hmean.unwrap() - r2.hmean.unwrap()).abs() < 1e-12);
            let pairs = match_boxes(&pa, &pb, 0.5);
            let mut gts: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            gts.sort();
            gts.dedup();
            prop_assert_eq!(gts.len(), pairs.len());
        }
    }

    #[test]
    fn accuracy_examples() {
        let l = |s: &[usize]| SeqLabel::new(s.to_vec()).unwrap();
        let gts = vec![l(&[1]), l(&[2]), l(&[3]), l(&[4])];
        let preds: Vec<Vec<usize>> = gts.iter().map(|g| g.symbols().to_vec()).collect();
        assert_eq!(sentence_accuracy(&preds, &gts).unwrap(), 1.0);
        let wrong: Vec<Vec<usize>> = vec![vec![]; 4];
        assert_eq!(sentence_accuracy(&wrong, &gts).unwrap(), 0.0);
        let mut three = preds.clone();
        three[2] = vec![3, 3];
        assert_eq!(sentence_accuracy(&three, &gts).unwrap(), 0.75);
        assert!(sentence_accuracy(&three[..2], &gts).is_err());
    }

    #[test]
    fn component_boxes() {
        let zero = Tensor::<f64>::zeros(vec![6, 8]);
        assert!(boxes_from_probmap(&zero, 0.3, 1).unwrap().is_empty());
        let mut m = Tensor::<f64>::zeros(vec![6, 8]);
        for y in 1..4 {
            for x in 1..3 {
                m.data_mut()[y * 8 + x] = 1.0;
            }
            for x in 4..7 {
                m.data_mut()[y * 8 + x] = 0.75;
            }
        }
        let boxes = boxes_from_probmap(&m, 0.3, 1).unwrap();
        assert_eq!(boxes, [bx(1.0, 1.0, 3.0, 4.0, 1.0), bx(4.0, 1.0, 7.0, 4.0, 0.75)]);
        // survives any rescaling that keeps the same pixels above threshold
        let scaled = m.map(|v| v * 0.5);
        assert_eq!(boxes_from_probmap(&scaled, 0.3, 1).unwrap().len(), 2);
        assert_eq!(boxes_from_probmap(&m, 0.3, 7).unwrap().len(), 1);
    }

    #[test]
    fn hmean_examples() {
        let gt = vec![bx(0.0, 0.0, 10.0, 10.0, 1.0)];
        let r = det_hmean(&gt, &gt, 0.5).unwrap();
        assert_eq!((r.precision, r.recall, r.hmean), (Some(1.0), Some(1.0), Some(1.0)));
        let r = det_hmean(&[], &gt, 0.5).unwrap();
        assert_eq!((r.precision, r.recall, r.hmean), (Some(0.0), Some(0.0), Some(0.0)));
        let r = det_hmean(&[], &[], 0.5).unwrap();
        assert_eq!(r.hmean, Some(1.0));
        // IoU = 60 / 100
        let p = vec![bx(0.0, 0.0, 6.0, 10.0, 0.9)];
        assert!((p[0].iou(&gt[0]) - 0.6).abs() < 1e-12);
        assert_eq!(det_hmean(&p, &gt, 0.5).unwrap().hmean, Some(1.0));
        assert_eq!(det_hmean(&p, &gt, 1.0).unwrap().hmean, Some(0.0));
        let json = det_hmean(&p, &gt, 0.5).unwrap().to_json_line();
        assert!(!json.contains('\n') && json.contains("\"hmean\":1.0"));
    }

    #[test]
    fn perfect_targets_score_full_hmean() {
        let samples = gen_det_dataset(30, &DetGenConfig::default(), 9).unwrap();
        let probs: Vec<Tensor<f32>> = samples.iter().map(|s| s.targets.prob_gt.clone()).collect();
        let r = evaluate_detection(&probs, &samples, &DetPostprocess::default()).unwrap();
        assert_eq!(r.hmean, Some(1.0), "{r:?}");
    }

    #[test]
    fn unclip_inverts_shrink() {
        // rectangle 9×7 shrinks by D = 63·0.84/32 on every side
        let d = 63.0 * 0.84 / 32.0;
        let shrunk = bx(d, d, 9.0 - d, 7.0 - d, 1.0);
        let grown = shrunk.unclip(100, 100);
        assert!((grown.x0).abs() < 1e-9 && (grown.x1 - 9.0).abs() < 1e-9 && (grown.y1 - 7.0).abs() < 1e-9);
    }
}
