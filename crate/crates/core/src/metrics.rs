//! Standard depth benchmark metrics and scale-correction protocols.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{median_in_place, DepthMap};

/// Prediction clamp applied before taking logarithms, in meters.
pub const LOG_CLAMP: (f64, f64) = (1e-3, 200.0);

/// Ratio thresholds of the three delta accuracies.
pub const DELTA_THRESHOLDS: [f64; 3] = [1.25, 1.25 * 1.25, 1.25 * 1.25 * 1.25];

/// Column order of the CSV report.
pub const CSV_HEADER: [&str; 11] = [
    "image_id", "protocol", "scale", "n_valid", "abs_rel", "sq_rel", "rmse", "rmse_log", "d1", "d2", "d3",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ProtocolKind {
    /// Per-image ratio of ground-truth and prediction medians.
    #[serde(rename = "M")]
    Median,
    /// One fixed scale for every image.
    #[serde(rename = "F")]
    Fixed,
    /// Ratio of partial-depth and prediction medians on the partial mask.
    #[serde(rename = "P")]
    Partial,
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProtocolKind::Median => "M",
            ProtocolKind::Fixed => "F",
            ProtocolKind::Partial => "P",
        })
    }
}

impl FromStr for ProtocolKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "M" | "m" => Ok(ProtocolKind::Median),
            "F" | "f" => Ok(ProtocolKind::Fixed),
            "P" | "p" => Ok(ProtocolKind::Partial),
            other => Err(Error::Config(format!("unknown scale protocol {other:?}, expected M, F or P"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ScaleProtocol {
    Median,
    Fixed(f64),
    Partial,
}

impl ScaleProtocol {
    pub fn new(kind: ProtocolKind, fixed_scale: Option<f64>) -> Result<Self> {
        match kind {
            ProtocolKind::Median => Ok(ScaleProtocol::Median),
            ProtocolKind::Partial => Ok(ScaleProtocol::Partial),
            ProtocolKind::Fixed => {
                let s = fixed_scale.ok_or_else(|| Error::Config("protocol F needs a fixed scale".into()))?;
                if !(s.is_finite() && s > 0.0) {
                    return Err(Error::NonPositiveScale(s));
                }
                Ok(ScaleProtocol::Fixed(s))
            }
        }
    }

    pub fn kind(&self) -> ProtocolKind {
        match self {
            ScaleProtocol::Median => ProtocolKind::Median,
            ScaleProtocol::Fixed(_) => ProtocolKind::Fixed,
            ScaleProtocol::Partial => ProtocolKind::Partial,
        }
    }
}

/// Ground-truth depth range a pixel must fall in (both bounds exclusive).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RangeFilter {
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl RangeFilter {
    pub fn below(max: f64) -> Self {
        Self { min: None, max: Some(max) }
    }

    pub fn above(min: f64) -> Self {
        Self { min: Some(min), max: None }
    }

    #[inline]
    pub fn admits(&self, gt: f64) -> bool {
        self.min.is_none_or(|m| gt > m) && self.max.is_none_or(|m| gt < m)
    }
}

/// Median ratio `median(reference) / median(pred)` over the pixels valid in
/// both maps.
fn overlap_scale(pred: &DepthMap, reference: &DepthMap) -> Result<f64> {
    reference.ensure_dims(pred.dims())?;
    let (mut r, mut p): (Vec<f64>, Vec<f64>) = reference
        .values()
        .iter()
        .zip(pred.values())
        .filter(|(&r, &p)| r > 0.0 && p > 0.0)
        .map(|(&r, &p)| (r, p))
        .unzip();
    let num = median_in_place(&mut r).ok_or(Error::EmptyMask)?;
    let den = median_in_place(&mut p).ok_or(Error::EmptyMask)?;
    Ok(num / den)
}

/// Rescale `pred` under `proto`; returns the corrected map and the scale.
pub fn correct_scale(
    pred: &DepthMap,
    gt: Option<&DepthMap>,
    partial: Option<&DepthMap>,
    proto: ScaleProtocol,
) -> Result<(DepthMap, f64)> {
    let s = match proto {
        ScaleProtocol::Median => overlap_scale(pred, gt.ok_or(Error::MissingGroundTruth)?)?,
        ScaleProtocol::Partial => overlap_scale(pred, partial.ok_or(Error::MissingPartial)?)?,
        ScaleProtocol::Fixed(s) => s,
    };
    Ok((pred.scaled(s)?, s))
}

/// Mean of per-image M-protocol scales, used as the F-protocol scale.
pub fn calibrate_fixed_scale<'a>(pairs: impl IntoIterator<Item = (&'a DepthMap, &'a DepthMap)>) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (pred, gt) in pairs {
        sum += overlap_scale(pred, gt)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub n_valid: usize,
    pub scale_applied: f64,
    pub protocol: Option<ProtocolKind>,
    pub depth_range_filter: Option<RangeFilter>,
}

impl MetricReport {
    /// The seven metric values in CSV order.
    pub fn values(&self) -> [f64; 7] {
        [
            self.abs_rel,
            self.sq_rel,
            self.rmse,
            self.rmse_log,
            self.delta1,
            self.delta2,
            self.delta3,
        ]
    }

    /// CSV fields in [`CSV_HEADER`] order.
    pub fn csv_record(&self, image_id: &str) -> Vec<String> {
        let mut out = vec![
            image_id.to_string(),
            self.protocol.map_or_else(|| "-".to_string(), |p| p.to_string()),
            self.scale_applied.to_string(),
            self.n_valid.to_string(),
        ];
        out.extend(self.values().iter().map(|v| v.to_string()));
        out
    }
}

/// Metrics over the pixels where both maps are valid and the ground truth
/// passes `range`.
pub fn evaluate(pred: &DepthMap, gt: &DepthMap, range: Option<RangeFilter>) -> Result<MetricReport> {
    gt.ensure_dims(pred.dims())?;
    let filter = range.unwrap_or_default();
    let (mut abs_rel, mut sq_rel, mut sq, mut sq_log) = (0.0, 0.0, 0.0, 0.0);
    let mut hits = [0usize; 3];
    let mut n = 0usize;
    for (&p, &g) in pred.values().iter().zip(gt.values()) {
        if !(g > 0.0 && p > 0.0 && filter.admits(g)) {
            continue;
        }
        n += 1;
        let diff = p - g;
        abs_rel += diff.abs() / g;
        sq_rel += diff * diff / g;
        sq += diff * diff;
        let dl = p.clamp(LOG_CLAMP.0, LOG_CLAMP.1).ln() - g.ln();
        sq_log += dl * dl;
        let ratio = (p / g).max(g / p);
        for (hit, tau) in hits.iter_mut().zip(DELTA_THRESHOLDS) {
            if ratio < tau {
                *hit += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let nf = n as f64;
    Ok(MetricReport {
        abs_rel: abs_rel / nf,
        sq_rel: sq_rel / nf,
        rmse: (sq / nf).sqrt(),
        rmse_log: (sq_log / nf).sqrt(),
        delta1: hits[0] as f64 / nf,
        delta2: hits[1] as f64 / nf,
        delta3: hits[2] as f64 / nf,
        n_valid: n,
        scale_applied: 1.0,
        protocol: None,
        depth_range_filter: range,
    })
}

/// Scale-correct `pred` under `proto`, then evaluate it.
pub fn evaluate_with_protocol(
    pred: &DepthMap,
    gt: &DepthMap,
    partial: Option<&DepthMap>,
    proto: ScaleProtocol,
    range: Option<RangeFilter>,
) -> Result<MetricReport> {
    let (corrected, scale) = correct_scale(pred, Some(gt), partial, proto)?;
    let mut report = evaluate(&corrected, gt, range)?;
    report.scale_applied = scale;
    report.protocol = Some(proto.kind());
    Ok(report)
}

/// Unweighted mean of the per-image metrics.
pub fn mean_report(reports: &[MetricReport]) -> Option<[f64; 7]> {
    if reports.is_empty() {
        return None;
    }
    let mut acc = [0.0; 7];
    for r in reports {
        for (a, v) in acc.iter_mut().zip(r.values()) {
            *a += v;
        }
    }
    Some(acc.map(|a| a / reports.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn gt() -> DepthMap {
        DepthMap::from_fn(6, 5, |x, y| 2.0 + 3.0 * x as f64 + 7.0 * y as f64).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let g = gt();
        let r = evaluate(&g, &g, None).unwrap();
        assert_eq!(r.values(), [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(r.n_valid, 30);
    }

    #[test]
    fn uniform_ratio_closed_form() {
        let g = gt();
        let p = g.scaled(1.3).unwrap();
        let r = evaluate(&p, &g, None).unwrap();
        assert_relative_eq!(r.abs_rel, 0.3, max_relative = 1e-12);
        assert_relative_eq!(r.rmse_log, 1.3f64.ln(), max_relative = 1e-12);
        assert_eq!(r.delta1, 0.0);
        assert_eq!(r.delta2, 1.0);
        assert_eq!(r.delta3, 1.0);
    }

    #[test]
    fn range_filter_on_ground_truth() {
        let g = DepthMap::new(4, 1, vec![10.0, 79.0, 81.0, 120.0]).unwrap();
        let near = evaluate(&g, &g, Some(RangeFilter::below(80.0))).unwrap();
        assert_eq!(near.n_valid, 2);
        let far = evaluate(&g, &g, Some(RangeFilter::above(80.0))).unwrap();
        assert_eq!(far.n_valid, 2);
        assert!(matches!(
            evaluate(&g, &g, Some(RangeFilter::above(500.0))),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn log_clamp_only_touches_rmse_log() {
        let g = DepthMap::new(2, 1, vec![250.0, 250.0]).unwrap();
        let p = DepthMap::new(2, 1, vec![250.0, 250.0]).unwrap();
        let r = evaluate(&p, &g, None).unwrap();
        assert_eq!(r.abs_rel, 0.0);
        assert_relative_eq!(r.rmse_log, (250.0f64 / 200.0).ln(), max_relative = 1e-12);
    }

    #[test]
    fn protocol_examples() {
        let g = gt();
        let (c, s) = correct_scale(&g, Some(&g), None, ScaleProtocol::Median).unwrap();
        assert_eq!(s, 1.0);
        assert_eq!(c, g);

        let half = g.scaled(0.5).unwrap();
        let part = DepthMap::from_fn(6, 5, |x, y| if x < 2 && y < 3 { g.get(x, y) } else { 0.0 }).unwrap();
        let (c, s) = correct_scale(&half, None, Some(&part), ScaleProtocol::Partial).unwrap();
        assert_eq!(s, 2.0);
        assert_eq!(c, g);

        let (c, s) = correct_scale(&half, None, None, ScaleProtocol::Fixed(3.0)).unwrap();
        assert_eq!(s, 3.0);
        assert_eq!(c, half.scaled(3.0).unwrap());

        assert!(matches!(
            correct_scale(&half, Some(&g), None, ScaleProtocol::Partial),
            Err(Error::MissingPartial)
        ));
        assert!(matches!(
            correct_scale(&half, None, Some(&DepthMap::zeros(6, 5)), ScaleProtocol::Partial),
            Err(Error::EmptyMask)
        ));
        assert!(ScaleProtocol::new(ProtocolKind::Fixed, None).is_err());
        assert!(ScaleProtocol::new(ProtocolKind::Fixed, Some(-1.0)).is_err());
        assert_eq!("P".parse::<ProtocolKind>().unwrap(), ProtocolKind::Partial);
        assert!("Q".parse::<ProtocolKind>().is_err());
    }

    #[test]
    fn fixed_scale_is_mean_of_median_scales() {
        let g = gt();
        let a = g.scaled(0.5).unwrap();
        let b = g.scaled(0.25).unwrap();
        let s = calibrate_fixed_scale([(&a, &g), (&b, &g)]).unwrap();
        assert_relative_eq!(s, 3.0, max_relative = 1e-12);
    }

    #[test]
    fn csv_record_order() {
        let g = gt();
        let r = evaluate_with_protocol(&g, &g, None, ScaleProtocol::Median, None).unwrap();
        let rec = r.csv_record("0001");
        assert_eq!(rec.len(), CSV_HEADER.len());
        assert_eq!(&rec[..4], &["0001", "M", "1", "30"]);
    }

    proptest! {
        #[test]
        fn deltas_monotone_and_permutation_invariant(
            vals in prop::collection::vec((0.1f64..100.0, 0.1f64..100.0), 1..40),
            c in 0.05f64..20.0,
        ) {
            let n = vals.len();
            let p = DepthMap::new(n, 1, vals.iter().map(|v| v.0).collect()).unwrap();
            let g = DepthMap::new(n, 1, vals.iter().map(|v| v.1).collect()).unwrap();
            let r = evaluate(&p, &g, None).unwrap();
            prop_assert!(r.delta1 <= r.delta2 && r.delta2 <= r.delta3);
            prop_assert!((0.0..=1.0).contains(&r.delta1) && r.delta3 <= 1.0);

            let pr = DepthMap::new(n, 1, vals.iter().rev().map(|v| v.0).collect()).unwrap();
            let gr = DepthMap::new(n, 1, vals.iter().rev().map(|v| v.1).collect()).unwrap();
            let rr = evaluate(&pr, &gr, None).unwrap();
            for (a, b) in r.values().iter().zip(rr.values()) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }

            let m1 = evaluate_with_protocol(&p, &g, None, ScaleProtocol::Median, None).unwrap();
            let mc = evaluate_with_protocol(&p.scaled(c).unwrap(), &g, None, ScaleProtocol::Median, None).unwrap();
            for (a, b) in m1.values().iter().zip(mc.values()) {
                prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1e-3));
            }
        }
    }
}
