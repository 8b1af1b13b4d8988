use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::geom::ObjectClass;
use crate::tensor::Matrix;

/// Speed (m/s) from which a point counts as dynamic.
pub const DYNAMIC_SPEED: f32 = 0.5;

fn epe(a: [f32; 3], b: [f32; 3]) -> f64 {
    (0..3)
        .map(|k| (a[k] as f64 - b[k] as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn mean(sum: f64, n: usize) -> Option<f64> {
    (n > 0).then(|| sum / n as f64)
}

pub fn matrix_rows3(m: &Matrix<f32>) -> Vec<[f32; 3]> {
    (0..m.rows())
        .map(|r| [m.get(r, 0), m.get(r, 1), m.get(r, 2)])
        .collect()
}

/// EPE sums and counts over dynamic (`speed >= 0.5`) and static points.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SplitEpe {
    pub dynamic: (f64, usize),
    pub static_: (f64, usize),
}

impl SplitEpe {
    pub fn mean_dynamic(&self) -> Option<f64> {
        mean(self.dynamic.0, self.dynamic.1)
    }

    pub fn mean_static(&self) -> Option<f64> {
        mean(self.static_.0, self.static_.1)
    }
}

pub fn split_epe(pred: &Matrix<f32>, gt: &Matrix<f32>, speed: &[f32]) -> SplitEpe {
    let mut out = SplitEpe::default();
    for (r, &s) in speed.iter().enumerate() {
        let e = epe(
            [pred.get(r, 0), pred.get(r, 1), pred.get(r, 2)],
            [gt.get(r, 0), gt.get(r, 1), gt.get(r, 2)],
        );
        let slot = if s >= DYNAMIC_SPEED {
            &mut out.dynamic
        } else {
            &mut out.static_
        };
        slot.0 += e;
        slot.1 += 1;
    }
    out
}

/// Mean EPE over foreground-dynamic, background-static and foreground-static
/// points; `None` marks an empty category, which is left out of `avg`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThreeWayResult {
    pub fd: Option<f64>,
    pub bs: Option<f64>,
    pub fs: Option<f64>,
    pub avg: Option<f64>,
    pub counts: [usize; 3],
}

pub fn three_way_epe(
    pred: &[[f32; 3]],
    gt: &[[f32; 3]],
    class_id: &[u8],
    speed: &[f32],
) -> ThreeWayResult {
    let mut acc = [(0.0, 0usize); 3];
    for i in 0..pred.len().min(gt.len()) {
        let fg = class_id[i] != 0;
        let dynamic = speed[i] >= DYNAMIC_SPEED;
        let slot = match (fg, dynamic) {
            (true, true) => 0,
            (false, _) => 1,
            (true, false) => 2,
        };
        acc[slot].0 += epe(pred[i], gt[i]);
        acc[slot].1 += 1;
    }
    let parts: Vec<Option<f64>> = acc.iter().map(|&(s, n)| mean(s, n)).collect();
    let present: Vec<f64> = parts.iter().flatten().copied().collect();
    ThreeWayResult {
        fd: parts[0],
        bs: parts[1],
        fs: parts[2],
        avg: mean(present.iter().sum(), present.len()),
        counts: [acc[0].1, acc[1].1, acc[2].1],
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketConfig {
    /// Points at or above this speed (m/s) are dynamic.
    pub dynamic_threshold: f32,
    /// Speed buckets are `[threshold + k·width, threshold + (k+1)·width)`.
    pub bucket_width: f32,
    pub sweep_interval: f32,
}

impl Default for BucketConfig {
    fn default() -> Self {
        Self {
            dynamic_threshold: 0.4,
            bucket_width: 0.4,
            sweep_interval: crate::SWEEP_INTERVAL,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketResult {
    /// Speed-normalized dynamic error per foreground class.
    pub per_class: BTreeMap<String, Option<f64>>,
    pub mean_dynamic: Option<f64>,
    /// Raw mean EPE over every point below the dynamic threshold.
    pub mean_static: Option<f64>,
}

/// Per class and speed bucket, mean EPE divided by the bucket's mean
/// displacement (`speed · Δt`); a class scores the mean over its non-empty buckets.
pub fn bucket_normalized_epe(
    pred: &[[f32; 3]],
    gt: &[[f32; 3]],
    class_id: &[u8],
    speed: &[f32],
    cfg: &BucketConfig,
) -> BucketResult {
    // (class, bucket) -> (epe sum, displacement sum, count)
    let mut buckets: BTreeMap<(u8, u64), (f64, f64, usize)> = BTreeMap::new();
    let mut stat = (0.0, 0usize);
    for i in 0..pred.len().min(gt.len()) {
        let e = epe(pred[i], gt[i]);
        let s = speed[i];
        if s < cfg.dynamic_threshold {
            stat.0 += e;
            stat.1 += 1;
            continue;
        }
        if class_id[i] == 0 {
            continue;
        }
        let b = ((s - cfg.dynamic_threshold) / cfg.bucket_width).floor() as u64;
        let slot = buckets.entry((class_id[i], b)).or_default();
        slot.0 += e;
        slot.1 += s as f64 * cfg.sweep_interval as f64;
        slot.2 += 1;
    }
    let mut per_class = BTreeMap::new();
    let mut scored = Vec::new();
    for class in ObjectClass::FOREGROUND {
        let ratios: Vec<f64> = buckets
            .range((class as u8, 0)..=(class as u8, u64::MAX))
            .map(|(_, &(e, d, n))| (e / n as f64) / (d / n as f64))
            .collect();
        let score = mean(ratios.iter().sum(), ratios.len());
        if let Some(v) = score {
            scored.push(v);
        }
        per_class.insert(class.name().to_string(), score);
    }
    BucketResult {
        per_class,
        mean_dynamic: mean(scored.iter().sum(), scored.len()),
        mean_static: mean(stat.0, stat.1),
    }
}

/// IoU of the dynamic sets, a point being dynamic when `‖flow‖ / Δt >= 0.5 m/s`.
/// Prediction and ground truth are classified independently; 1 when both are empty.
pub fn dynamic_iou(pred: &[[f32; 3]], gt: &[[f32; 3]], sweep_interval: f32) -> f64 {
    let dynamic = |v: [f32; 3]| epe(v, [0.0; 3]) / sweep_interval as f64 >= DYNAMIC_SPEED as f64;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.iter().zip(gt) {
        let (a, b) = (dynamic(p), dynamic(g));
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Everything the `eval` command reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub three_way: ThreeWayResult,
    pub bucketed: BucketResult,
    pub dynamic_iou: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flops: Option<u64>,
}

impl EvalReport {
    pub fn compute(
        pred: &[[f32; 3]],
        gt: &[[f32; 3]],
        class_id: &[u8],
        speed: &[f32],
        buckets: &BucketConfig,
    ) -> Self {
        Self {
            three_way: three_way_epe(pred, gt, class_id, speed),
            bucketed: bucket_normalized_epe(pred, gt, class_id, speed, buckets),
            dynamic_iou: dynamic_iou(pred, gt, buckets.sweep_interval),
            flops: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_way_examples() {
        let r = three_way_epe(&[[0.3, 0.0, 0.4]], &[[0.0; 3]], &[1], &[3.0]);
        assert!((r.fd.unwrap() - 0.5).abs() < 1e-7);
        assert_eq!((r.bs, r.fs), (None, None));
        assert!((r.avg.unwrap() - 0.5).abs() < 1e-7);

        let pred = vec![[0.1f32, 0.0, 0.0]; 4];
        let r = three_way_epe(&pred, &[[0.0; 3]; 4], &[0; 4], &[0.0; 4]);
        assert!((r.bs.unwrap() - 0.1).abs() < 1e-7);
        assert_eq!(r.fd, None);
        assert_eq!(r.counts, [0, 4, 0]);
    }

    #[test]
    fn bucket_car_example() {
        let n = 10;
        let gt = vec![[0.2f32, 0.0, 0.0]; n];
        let pred = vec![[0.22f32, 0.0, 0.0]; n];
        let r = bucket_normalized_epe(
            &pred,
            &gt,
            &vec![1; n],
            &vec![2.0; n],
            &BucketConfig::default(),
        );
        assert!((r.per_class["car"].unwrap() - 0.1).abs() < 1e-5);
        assert_eq!(r.per_class["pedestrian"], None);
        assert!((r.mean_dynamic.unwrap() - 0.1).abs() < 1e-5);
        assert_eq!(r.mean_static, None);
    }

    #[test]
    fn iou_examples() {
        let gt = [[0.2f32, 0.0, 0.0], [0.2, 0.0, 0.0], [0.0; 3]];
        assert_eq!(dynamic_iou(&gt, &gt, 0.1), 1.0);
        assert_eq!(dynamic_iou(&[[0.0; 3]; 3], &gt, 0.1), 0.0);
        let half = [[0.2f32, 0.0, 0.0], [0.0; 3], [0.0; 3]];
        assert_eq!(dynamic_iou(&half, &gt, 0.1), 0.5);
        assert_eq!(dynamic_iou(&[[0.0; 3]], &[[0.01, 0.0, 0.0]], 0.1), 1.0);
    }
}
