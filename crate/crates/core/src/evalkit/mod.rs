//! Detector scoring against labeled frames: greedy IoU matching, precision,
//! recall, 101-point interpolated AP and the mAP@50 / mAP@50-95 suite.
//!
//! Undefined metrics (empty denominators) are `None`, never zero.

use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

use crate::geometry::{iou, BBox};
use crate::ingest::{DetectionBox, FrameRecord, ObjectClass};

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum EvalError {
    #[error("metric is undefined: its denominator is zero")]
    UndefinedMetric,
}

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

/// Outcome of matching one frame's predictions of one class.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameMatch {
    /// `(confidence, is_true_positive)` in processing order (descending confidence).
    pub labels: Vec<(f64, bool)>,
    /// Ground-truth boxes left unmatched.
    pub false_negatives: usize,
}

impl FrameMatch {
    pub fn counts(&self) -> MatchCounts {
        let tp = self.labels.iter().filter(|l| l.1).count() as u64;
        MatchCounts {
            tp,
            fp: self.labels.len() as u64 - tp,
            fn_: self.false_negatives as u64,
            tn: 0,
        }
    }
}

/// Greedy matching: predictions in descending confidence each take the
/// highest-IoU ground truth still unmatched, if that IoU reaches `iou_t`.
pub fn match_frame(preds: &[DetectionBox], gts: &[BBox], class: ObjectClass, iou_t: f64) -> FrameMatch {
    let mut order: Vec<&DetectionBox> = preds.iter().filter(|p| p.class == class).collect();
    order.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let mut taken = vec![false; gts.len()];
    let mut labels = Vec::with_capacity(order.len());
    for p in order {
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in gts.iter().enumerate() {
            if taken[gi] {
                continue;
            }
            let o = iou(&p.bbox, g).unwrap_or(0.0);
            if o >= iou_t && best.is_none_or(|(_, b)| o > b) {
                best = Some((gi, o));
            }
        }
        if let Some((gi, _)) = best {
            taken[gi] = true;
        }
        labels.push((p.confidence, best.is_some()));
    }
    FrameMatch {
        labels,
        false_negatives: taken.iter().filter(|t| !**t).count(),
    }
}

/// Confusion counts at one confidence cut. `tn` is always 0 for detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct MatchCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl MatchCounts {
    pub fn add(&mut self, o: MatchCounts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

pub fn precision(c: &MatchCounts) -> Result<f64, EvalError> {
    if c.tp + c.fp == 0 {
        return Err(EvalError::UndefinedMetric);
    }
    Ok(c.tp as f64 / (c.tp + c.fp) as f64)
}

pub fn recall(c: &MatchCounts) -> Result<f64, EvalError> {
    if c.tp + c.fn_ == 0 {
        return Err(EvalError::UndefinedMetric);
    }
    Ok(c.tp as f64 / (c.tp + c.fn_) as f64)
}

/// Cumulative counts with every prediction at or above `confidence` kept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint {
    pub confidence: f64,
    pub tp: u64,
    pub fp: u64,
    pub precision: f64,
    pub recall: Option<f64>,
}

/// Precision-recall curve for one class at one IoU threshold.
///
/// One point per distinct confidence, in descending confidence order, so
/// recall never decreases along `points`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrCurve {
    pub class: ObjectClass,
    pub iou_threshold: f64,
    pub n_gt: u64,
    pub points: Vec<PrPoint>,
}

impl PrCurve {
    /// Builds the curve from labels pooled over a corpus.
    pub fn from_labels(class: ObjectClass, iou_threshold: f64, mut labels: Vec<(f64, bool)>, n_gt: u64) -> Self {
        labels.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut points: Vec<PrPoint> = Vec::new();
        let (mut tp, mut fp) = (0u64, 0u64);
        let mut i = 0;
        while i < labels.len() {
            let conf = labels[i].0;
            while i < labels.len() && labels[i].0 == conf {
                if labels[i].1 {
                    tp += 1;
                } else {
                    fp += 1;
                }
                i += 1;
            }
            points.push(PrPoint {
                confidence: conf,
                tp,
                fp,
                precision: tp as f64 / (tp + fp) as f64,
                recall: (n_gt > 0).then(|| tp as f64 / n_gt as f64),
            });
        }
        PrCurve {
            class,
            iou_threshold,
            n_gt,
            points,
        }
    }

    /// Operating point with the highest F1; the earliest (highest confidence) wins ties.
    pub fn max_f1_point(&self) -> Option<&PrPoint> {
        let f1 = |p: &PrPoint| {
            let r = p.tp as f64 / self.n_gt as f64;
            if p.precision + r > 0.0 {
                2.0 * p.precision * r / (p.precision + r)
            } else {
                0.0
            }
        };
        if self.n_gt == 0 {
            return self.points.last();
        }
        let mut best: Option<(&PrPoint, f64)> = None;
        for p in &self.points {
            let f = f1(p);
            if best.is_none_or(|(_, b)| f > b) {
                best = Some((p, f));
            }
        }
        best.map(|(p, _)| p)
    }
}

/// 101-point interpolated AP: mean over recall levels 0, 0.01, ..., 1 of the
/// best precision achieved at or beyond that recall.
pub fn average_precision(curve: &PrCurve) -> Result<f64, EvalError> {
    let n = curve.n_gt;
    if n == 0 {
        return Err(EvalError::UndefinedMetric);
    }
    let mut sum = 0.0;
    // Walk levels upward while the suffix maximum of precision shrinks from the back.
    let mut envelope = vec![0.0f64; curve.points.len() + 1];
    for (k, p) in curve.points.iter().enumerate().rev() {
        envelope[k] = envelope[k + 1].max(p.precision);
    }
    let mut k = 0;
    for level in 0..=100u64 {
        // Recall comparison in integers: tp / n >= level / 100.
        while k < curve.points.len() && curve.points[k].tp * 100 < level * n {
            k += 1;
        }
        sum += envelope[k];
    }
    Ok(sum / 101.0)
}

/// Per-class scores. `None` marks an undefined metric.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub class: ObjectClass,
    pub n_gt: u64,
    pub n_pred: u64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    /// Confidence cut behind `precision` and `recall`.
    pub conf_threshold: Option<f64>,
    pub ap50: Option<f64>,
    pub ap50_95: Option<f64>,
    /// Counts at `conf_threshold`.
    pub counts: MatchCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub classes: Vec<ClassMetrics>,
    /// Means over classes where the metric is defined.
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub map50: Option<f64>,
    pub map50_95: Option<f64>,
}

fn mean_defined(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Frames keyed by `(station, frame index)`.
fn index_frames(frames: &[FrameRecord]) -> BTreeMap<(&str, u64), &FrameRecord> {
    frames
        .iter()
        .map(|f| ((f.station_id.as_str(), f.frame_index), f))
        .collect()
}

/// Pooled curve for one class and threshold over paired prediction and ground-truth frames.
pub fn corpus_curve(preds: &[FrameRecord], gts: &[FrameRecord], class: ObjectClass, iou_t: f64) -> PrCurve {
    let p = index_frames(preds);
    let g = index_frames(gts);
    let mut keys: Vec<_> = p.keys().chain(g.keys()).copied().collect();
    keys.sort_unstable();
    keys.dedup();
    let mut labels = Vec::new();
    let mut n_gt = 0u64;
    for k in keys {
        let dets: &[DetectionBox] = p.get(&k).map_or(&[], |f| &f.detections);
        let gt_boxes: Vec<BBox> = g
            .get(&k)
            .map(|f| f.detections.iter().filter(|d| d.class == class).map(|d| d.bbox).collect())
            .unwrap_or_default();
        n_gt += gt_boxes.len() as u64;
        labels.extend(match_frame(dets, &gt_boxes, class, iou_t).labels);
    }
    PrCurve::from_labels(class, iou_t, labels, n_gt)
}

/// Full metric suite for both classes.
pub fn map_suite(preds: &[FrameRecord], gts: &[FrameRecord]) -> EvalSummary {
    let classes: Vec<ClassMetrics> = ObjectClass::ALL
        .iter()
        .map(|&class| {
            let curves: Vec<PrCurve> = coco_thresholds()
                .iter()
                .map(|&t| corpus_curve(preds, gts, class, t))
                .collect();
            let at50 = &curves[0];
            let aps: Vec<Option<f64>> = curves.iter().map(|c| average_precision(c).ok()).collect();
            let ap50_95 = if aps.iter().all(Option::is_some) {
                Some(aps.iter().flatten().sum::<f64>() / aps.len() as f64)
            } else {
                None
            };
            let op = at50.max_f1_point();
            let counts = op.map_or(
                MatchCounts { fn_: at50.n_gt, ..Default::default() },
                |p| MatchCounts { tp: p.tp, fp: p.fp, fn_: at50.n_gt - p.tp, tn: 0 },
            );
            ClassMetrics {
                class,
                n_gt: at50.n_gt,
                n_pred: at50.points.last().map_or(0, |p| p.tp + p.fp),
                precision: precision(&counts).ok(),
                recall: recall(&counts).ok(),
                conf_threshold: op.map(|p| p.confidence),
                ap50: aps[0],
                ap50_95,
                counts,
            }
        })
        .collect();
    EvalSummary {
        precision: mean_defined(classes.iter().map(|c| c.precision)),
        recall: mean_defined(classes.iter().map(|c| c.recall)),
        map50: mean_defined(classes.iter().map(|c| c.ap50)),
        map50_95: mean_defined(classes.iter().map(|c| c.ap50_95)),
        classes,
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.4}"))
}

/// `eval.csv` body: one row per class plus an `all` row. Undefined values are empty cells.
pub fn eval_csv(summary: &EvalSummary, model_tag: &str) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model_tag", "class", "P", "R", "mAP50", "mAP50_95"])?;
    for c in &summary.classes {
        w.write_record([
            model_tag.to_string(),
            c.class.to_string(),
            cell(c.precision),
            cell(c.recall),
            cell(c.ap50),
            cell(c.ap50_95),
        ])?;
    }
    w.write_record([
        model_tag.to_string(),
        "all".to_string(),
        cell(summary.precision),
        cell(summary.recall),
        cell(summary.map50),
        cell(summary.map50_95),
    ])?;
    w.into_inner().map_err(|e| csv::Error::from(e.into_error()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;
    use ObjectClass::*;

    fn pred(x: f64, conf: f64) -> DetectionBox {
        DetectionBox::new(Worker, BBox::new(x, 0.0, 100.0, 100.0), conf)
    }

    fn gt(x: f64) -> BBox {
        BBox::new(x, 0.0, 100.0, 100.0)
    }

    /// Shift giving IoU `o` against `gt(0)` for equal 100-px squares.
    fn shift_for(o: f64) -> f64 {
        100.0 * (1.0 - o) / (1.0 + o)
    }

    #[test]
    fn single_match() {
        let m = match_frame(&[pred(shift_for(0.9), 0.8)], &[gt(0.0)], Worker, 0.5);
        assert_eq!(m.counts(), MatchCounts { tp: 1, fp: 0, fn_: 0, tn: 0 });
    }

    #[test]
    fn duplicate_is_false_positive() {
        let m = match_frame(
            &[pred(shift_for(0.8), 0.7), pred(shift_for(0.9), 0.9)],
            &[gt(0.0)],
            Worker,
            0.5,
        );
        assert_eq!(m.labels, vec![(0.9, true), (0.7, false)]);
    }

    #[test]
    fn below_threshold() {
        let m = match_frame(&[pred(shift_for(0.4), 0.9)], &[gt(0.0)], Worker, 0.5);
        let c = m.counts();
        assert_eq!((c.tp, c.fp, c.fn_), (0, 1, 1));
    }

    #[test]
    fn other_class_ignored() {
        let chair = DetectionBox::new(Chair, BBox::new(0.0, 0.0, 100.0, 100.0), 0.9);
        let m = match_frame(&[chair], &[gt(0.0)], Worker, 0.5);
        assert!(m.labels.is_empty());
        assert_eq!(m.false_negatives, 1);
    }

    #[test]
    fn precision_recall_examples() {
        let c = |tp, fp, fn_| MatchCounts { tp, fp, fn_, tn: 0 };
        assert_eq!(precision(&c(9, 1, 0)), Ok(0.9));
        assert_eq!(precision(&c(3, 0, 0)), Ok(1.0));
        assert_eq!(precision(&c(0, 0, 4)), Err(EvalError::UndefinedMetric));
        assert_eq!(recall(&c(9, 0, 1)), Ok(0.9));
        assert_eq!(recall(&c(3, 0, 0)), Ok(1.0));
        assert_eq!(recall(&c(0, 5, 0)), Err(EvalError::UndefinedMetric));
    }

    #[test]
    fn ap_examples() {
        let perfect = PrCurve::from_labels(Worker, 0.5, vec![(0.9, true)], 1);
        assert_eq!(average_precision(&perfect), Ok(1.0));
        let empty = PrCurve::from_labels(Worker, 0.5, vec![], 1);
        assert_eq!(average_precision(&empty), Ok(0.0));
        let none = PrCurve::from_labels(Worker, 0.5, vec![(0.9, false)], 0);
        assert_eq!(average_precision(&none), Err(EvalError::UndefinedMetric));
        // TP, FP, TP on 2 gts: precision 1 up to recall 0.5, then 2/3 up to 1.
        let c = PrCurve::from_labels(Worker, 0.5, vec![(0.9, true), (0.8, false), (0.7, true)], 2);
        let expected = (51.0 * 1.0 + 50.0 * (2.0 / 3.0)) / 101.0;
        assert!((average_precision(&c).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn tied_confidences_form_one_cut() {
        let c = PrCurve::from_labels(Worker, 0.5, vec![(0.5, false), (0.5, true)], 1);
        assert_eq!(c.points.len(), 1);
        assert_eq!(average_precision(&c), Ok(0.5));
    }

    fn frame(i: u64, dets: Vec<DetectionBox>) -> FrameRecord {
        FrameRecord {
            station_id: "C".into(),
            timestamp: Utc.with_ymd_and_hms(2023, 7, 3, 11, 0, 0).unwrap() + chrono::Duration::seconds(i as i64),
            frame_index: i,
            detections: dets,
        }
    }

    #[test]
    fn perfect_predictions() {
        let gts: Vec<_> = (0..5)
            .map(|i| {
                frame(i, vec![
                    DetectionBox::new(Worker, BBox::new(10.0 * i as f64, 0.0, 80.0, 200.0), 1.0),
                    DetectionBox::new(Chair, BBox::new(500.0, 300.0, 150.0, 150.0), 1.0),
                ])
            })
            .collect();
        let s = map_suite(&gts, &gts);
        assert_eq!((s.precision, s.recall, s.map50, s.map50_95), (Some(1.0), Some(1.0), Some(1.0), Some(1.0)));
        let csv = String::from_utf8(eval_csv(&s, "m").unwrap()).unwrap();
        assert_eq!(csv.lines().nth(3).unwrap(), "m,all,1.0000,1.0000,1.0000,1.0000");
    }

    #[test]
    fn worker_only_predictions() {
        let w = DetectionBox::new(Worker, BBox::new(0.0, 0.0, 80.0, 200.0), 1.0);
        let c = DetectionBox::new(Chair, BBox::new(500.0, 300.0, 150.0, 150.0), 1.0);
        let gts = vec![frame(0, vec![w, c])];
        let preds = vec![frame(0, vec![w])];
        let s = map_suite(&preds, &gts);
        let chair = &s.classes[1];
        assert_eq!(chair.ap50, Some(0.0));
        assert_eq!(chair.precision, None);
        assert_eq!(chair.recall, Some(0.0));
        assert_eq!(s.map50, Some(0.5));
    }

    #[test]
    fn empty_predictions() {
        let gts = vec![frame(0, vec![DetectionBox::new(Worker, BBox::new(0.0, 0.0, 80.0, 200.0), 1.0)])];
        let s = map_suite(&[], &gts);
        assert_eq!(s.classes[0].recall, Some(0.0));
        assert_eq!(s.classes[0].precision, None);
        assert_eq!(s.classes[1].ap50, None);
        let csv = String::from_utf8(eval_csv(&s, "m").unwrap()).unwrap();
        assert_eq!(csv.lines().nth(2).unwrap(), "m,chair,,,,");
    }

    fn arb_labels() -> impl Strategy<Value = (Vec<(f64, bool)>, u64)> {
        prop::collection::vec((0u32..6, any::<bool>()), 0..25).prop_flat_map(|l| {
            let tps = l.iter().filter(|x| x.1).count() as u64;
            let labels: Vec<(f64, bool)> = l.iter().map(|&(c, t)| (c as f64 / 5.0 + 0.01, t)).collect();
            (Just(labels), tps.max(1)..tps + 5)
        })
    }

    proptest! {
        #[test]
        fn match_partition(
            xs in prop::collection::vec((0.0..300.0f64, 0.01..1.0f64), 0..8),
            gs in prop::collection::vec(0.0..300.0f64, 0..8),
            t in 0.05..1.0f64,
        ) {
            let preds: Vec<_> = xs.iter().map(|&(x, c)| pred(x, c)).collect();
            let gts: Vec<_> = gs.iter().map(|&x| gt(x)).collect();
            let c = match_frame(&preds, &gts, Worker, t).counts();
            prop_assert_eq!(c.tp + c.fp, preds.len() as u64);
            prop_assert_eq!(c.tp + c.fn_, gts.len() as u64);
        }

        #[test]
        fn recall_non_decreasing((labels, n) in arb_labels()) {
            let c = PrCurve::from_labels(Worker, 0.5, labels, n);
            for w in c.points.windows(2) {
                prop_assert!(w[1].tp >= w[0].tp);
                prop_assert!(w[0].confidence > w[1].confidence);
            }
        }

        #[test]
        fn improvements_do_not_hurt((labels, n) in arb_labels()) {
            let base = average_precision(&PrCurve::from_labels(Worker, 0.5, labels.clone(), n)).unwrap();
            let mut top = labels.clone();
            top.push((2.0, true));
            let with_tp = average_precision(&PrCurve::from_labels(Worker, 0.5, top, n + 1)).unwrap();
            prop_assert!(with_tp >= base - 1e-12);
            let mut bottom = labels;
            bottom.push((0.0, false));
            let with_fp = average_precision(&PrCurve::from_labels(Worker, 0.5, bottom, n)).unwrap();
            prop_assert!(with_fp <= base + 1e-12);
        }
    }
}
