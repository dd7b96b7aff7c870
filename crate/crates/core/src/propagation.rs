//! Multi-stage field-of-view expansion.
//!
//! A stage takes the depth refined so far (padded to the stage crop) and the
//! coarse depth of the same crop, rescales the coarse depth by a median
//! ratio and fills everything the refined map does not cover.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{median_in_place, DepthMap, Rect};

/// Default number of expansion stages.
pub const DEFAULT_STAGE_COUNT: usize = 5;

/// Nested crop rects, from the partial-depth rect out to the full frame.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleRepr", into = "ScheduleRepr")]
pub struct StageSchedule {
    frame: (usize, usize),
    stages: Vec<Rect>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleRepr {
    frame: (usize, usize),
    stages: Vec<Rect>,
}

impl TryFrom<ScheduleRepr> for StageSchedule {
    type Error = Error;

    fn try_from(r: ScheduleRepr) -> Result<Self> {
        StageSchedule::from_rects(r.frame, r.stages)
    }
}

impl From<StageSchedule> for ScheduleRepr {
    fn from(s: StageSchedule) -> Self {
        ScheduleRepr {
            frame: s.frame,
            stages: s.stages,
        }
    }
}

impl StageSchedule {
    /// Validate an explicit list of rects: at least two, each inside the
    /// next, the last one covering the whole frame.
    pub fn from_rects(frame: (usize, usize), stages: Vec<Rect>) -> Result<Self> {
        if stages.len() < 2 {
            return Err(Error::DegenerateRect(
                "a schedule needs the partial rect plus at least one stage".into(),
            ));
        }
        let full = Rect::full(frame.0, frame.1)?;
        if *stages.last().unwrap() != full {
            return Err(Error::DegenerateRect(format!(
                "last stage must be the full frame {full}"
            )));
        }
        for pair in stages.windows(2) {
            if !pair[1].contains_rect(&pair[0]) {
                return Err(Error::DegenerateRect(format!(
                    "stage {} is not inside {}",
                    pair[0], pair[1]
                )));
            }
        }
        Ok(Self { frame, stages })
    }

    pub fn frame(&self) -> (usize, usize) {
        self.frame
    }

    /// All rects; index 0 is the partial-depth rect.
    pub fn stages(&self) -> &[Rect] {
        &self.stages
    }

    /// Number of expansion stages (rects after the partial one).
    pub fn count(&self) -> usize {
        self.stages.len() - 1
    }

    pub fn partial_rect(&self) -> Rect {
        self.stages[0]
    }
}

/// Grow `partial_rect` to the full frame in `count` steps, interpolating
/// each margin linearly and rounding to whole pixels.
pub fn build_schedule(full: (usize, usize), partial_rect: Rect, count: usize) -> Result<StageSchedule> {
    if count == 0 {
        return Err(Error::DegenerateRect("stage count must be at least 1".into()));
    }
    if !partial_rect.fits_in(full.0, full.1) {
        return Err(Error::DegenerateRect(format!(
            "partial rect {partial_rect} is outside the {}x{} frame",
            full.0, full.1
        )));
    }
    let left = partial_rect.x0 as f64;
    let top = partial_rect.y0 as f64;
    let right = (full.0 - partial_rect.x1()) as f64;
    let bottom = (full.1 - partial_rect.y1()) as f64;
    let mut stages = Vec::with_capacity(count + 1);
    stages.push(partial_rect);
    for k in 1..=count {
        let keep = 1.0 - k as f64 / count as f64;
        let l = (left * keep).round() as usize;
        let t = (top * keep).round() as usize;
        let r = (right * keep).round() as usize;
        let b = (bottom * keep).round() as usize;
        stages.push(Rect::new(l, t, full.0 - l - r, full.1 - t - b)?);
    }
    StageSchedule::from_rects(full, stages)
}

/// Inputs of one propagation stage, both at the stage crop size.
#[derive(Clone, Debug)]
pub struct StageState {
    refined: DepthMap,
    blur: DepthMap,
}

impl StageState {
    pub fn new(refined: DepthMap, blur: DepthMap) -> Result<Self> {
        refined.ensure_dims(blur.dims())?;
        if refined.valid_count() == 0 {
            return Err(Error::EmptyMask);
        }
        Ok(Self { refined, blur })
    }

    pub fn refined(&self) -> &DepthMap {
        &self.refined
    }

    pub fn blur(&self) -> &DepthMap {
        &self.blur
    }
}

/// Ratio `median(anchor) / median(blur)` taken over the pixels valid in
/// both maps.
pub fn median_ratio(blur: &DepthMap, anchor: &DepthMap) -> Result<f64> {
    anchor.ensure_dims(blur.dims())?;
    let (mut a, mut b): (Vec<f64>, Vec<f64>) = anchor
        .values()
        .iter()
        .zip(blur.values())
        .filter(|(&a, &b)| a > 0.0 && b > 0.0)
        .map(|(&a, &b)| (a, b))
        .unzip();
    let num = median_in_place(&mut a).ok_or(Error::EmptyMask)?;
    let den = median_in_place(&mut b).ok_or(Error::EmptyMask)?;
    if den <= 0.0 {
        return Err(Error::ZeroMedian);
    }
    Ok(num / den)
}

/// Rescale `blur` so its median agrees with `anchor` where both are valid.
pub fn scale_adjust(blur: &DepthMap, anchor: &DepthMap) -> Result<DepthMap> {
    let ratio = median_ratio(blur, anchor)?;
    blur.scaled(ratio)
}

/// Take `refined` wherever it is valid and `scaled` everywhere else.
pub fn mix(refined: &DepthMap, scaled: &DepthMap) -> Result<DepthMap> {
    refined.ensure_dims(scaled.dims())?;
    let values = refined
        .values()
        .iter()
        .zip(scaled.values())
        .map(|(&r, &s)| if r > 0.0 { r } else { s })
        .collect();
    DepthMap::new(refined.width(), refined.height(), values)
}

/// Scale-adjust the coarse depth to the refined anchor and mix them.
pub fn run_stage(state: &StageState) -> Result<DepthMap> {
    let scaled = scale_adjust(&state.blur, &state.refined)?;
    mix(&state.refined, &scaled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gt(w: usize, h: usize) -> DepthMap {
        DepthMap::from_fn(w, h, |x, y| 3.0 + 0.25 * x as f64 + 0.1 * (y * y) as f64).unwrap()
    }

    fn inner_only(d: &DepthMap, r: Rect) -> DepthMap {
        d.crop(r).unwrap().pad_into(d.dims(), r).unwrap()
    }

    #[test]
    fn schedule_single_stage() {
        let r = Rect::new(3, 2, 4, 4).unwrap();
        let s = build_schedule((10, 8), r, 1).unwrap();
        assert_eq!(s.stages(), &[r, Rect::full(10, 8).unwrap()]);
        assert_eq!(s.count(), 1);
    }

    #[test]
    fn schedule_degenerate_partial_is_full() {
        let full = Rect::full(12, 9).unwrap();
        let s = build_schedule((12, 9), full, 5).unwrap();
        assert!(s.stages().iter().all(|r| *r == full));
        assert_eq!(s.count(), 5);
    }

    #[test]
    fn schedule_margins_shrink_linearly() {
        let s = build_schedule((100, 100), Rect::new(40, 40, 20, 20).unwrap(), 4).unwrap();
        let margins: Vec<usize> = s.stages().iter().map(|r| r.x0).collect();
        assert_eq!(margins, vec![40, 30, 20, 10, 0]);
        for (i, r) in s.stages().iter().enumerate() {
            let m = 40 - 10 * i;
            assert_eq!(*r, Rect::new(m, m, 100 - 2 * m, 100 - 2 * m).unwrap());
        }
        // Nesting by exhaustive pixel scan.
        for pair in s.stages().windows(2) {
            for y in 0..100 {
                for x in 0..100 {
                    if pair[0].contains(x, y) {
                        assert!(pair[1].contains(x, y));
                    }
                }
            }
        }
    }

    #[test]
    fn schedule_errors() {
        let r = Rect::new(8, 0, 4, 4).unwrap();
        assert!(matches!(build_schedule((10, 8), r, 2), Err(Error::DegenerateRect(_))));
        let ok = Rect::new(2, 2, 4, 4).unwrap();
        assert!(build_schedule((10, 8), ok, 0).is_err());
        assert!(StageSchedule::from_rects((10, 8), vec![ok, ok]).is_err());
    }

    #[test]
    fn schedule_serde_validates() {
        let s = build_schedule((20, 10), Rect::new(5, 3, 6, 4).unwrap(), 3).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        let back: StageSchedule = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
        let bad = r#"{"frame":[20,10],"stages":[{"x0":0,"y0":0,"width":20,"height":10},{"x0":5,"y0":3,"width":6,"height":4}]}"#;
        assert!(serde_json::from_str::<StageSchedule>(bad).is_err());
    }

    #[test]
    fn scale_adjust_self_ratio() {
        let d = gt(6, 5);
        assert_eq!(scale_adjust(&d, &d).unwrap(), d);
    }

    #[test]
    fn scale_adjust_constant_factor() {
        let g = gt(12, 10);
        let blur = g.scaled(2.0).unwrap();
        let anchor = inner_only(&g, Rect::new(4, 3, 4, 4).unwrap());
        let out = scale_adjust(&blur, &anchor).unwrap();
        for (a, b) in out.values().iter().zip(g.values()) {
            assert!((a - b).abs() <= 1e-12 * b);
        }
    }

    #[test]
    fn scale_adjust_hand_example() {
        let anchor = DepthMap::new(2, 1, vec![10.0, 0.0]).unwrap();
        let blur = DepthMap::new(2, 1, vec![5.0, 5.0]).unwrap();
        assert_eq!(scale_adjust(&blur, &anchor).unwrap().values(), &[10.0, 10.0]);
    }

    #[test]
    fn scale_adjust_errors() {
        let empty = DepthMap::zeros(3, 3);
        let full = DepthMap::constant(3, 3, 1.0).unwrap();
        assert!(matches!(scale_adjust(&full, &empty), Err(Error::EmptyMask)));
        assert!(matches!(scale_adjust(&empty, &full), Err(Error::EmptyMask)));
        assert!(matches!(
            scale_adjust(&full, &DepthMap::constant(2, 3, 1.0).unwrap()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn mix_saturated_and_empty_masks() {
        let r = gt(5, 4);
        let s = DepthMap::constant(5, 4, 9.0).unwrap();
        assert_eq!(mix(&r, &s).unwrap(), r);
        assert_eq!(mix(&DepthMap::zeros(5, 4), &s).unwrap(), s);
    }

    #[test]
    fn mix_checkerboard_per_pixel() {
        let refined = DepthMap::from_fn(7, 6, |x, y| if (x + y) % 2 == 0 { 1.0 + x as f64 } else { 0.0 }).unwrap();
        let scaled = DepthMap::from_fn(7, 6, |_, y| 50.0 + y as f64).unwrap();
        let out = mix(&refined, &scaled).unwrap();
        for y in 0..6 {
            for x in 0..7 {
                let expect = if (x + y) % 2 == 0 { refined.get(x, y) } else { scaled.get(x, y) };
                assert_eq!(out.get(x, y), expect);
            }
        }
    }

    #[test]
    fn run_stage_consistent_inputs() {
        let g = gt(10, 8);
        let refined = inner_only(&g, Rect::new(3, 2, 4, 4).unwrap());
        let state = StageState::new(refined, g.clone()).unwrap();
        assert_eq!(run_stage(&state).unwrap(), g);
    }

    #[test]
    fn run_stage_keeps_wrong_anchor() {
        let g = gt(10, 8);
        let mut refined = inner_only(&g, Rect::new(3, 2, 4, 4).unwrap()).values().to_vec();
        refined[2 * 10 + 3] = 123.0;
        let refined = DepthMap::new(10, 8, refined).unwrap();
        let out = run_stage(&StageState::new(refined, g).unwrap()).unwrap();
        assert_eq!(out.get(3, 2), 123.0);
    }

    #[test]
    fn stage_state_requires_anchor() {
        assert!(matches!(
            StageState::new(DepthMap::zeros(3, 3), DepthMap::constant(3, 3, 1.0).unwrap()),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn coverage_is_monotone_across_stages() {
        let (w, h) = (30, 20);
        let g = gt(w, h);
        let s = build_schedule((w, h), Rect::new(12, 8, 6, 4).unwrap(), 4).unwrap();
        let mut refined = g.crop(s.stages()[0]).unwrap();
        let mut last = refined.valid_count();
        for i in 1..s.stages().len() {
            let at = s.stages()[i - 1].relative_to(&s.stages()[i]).unwrap();
            let padded = refined.pad_into(s.stages()[i].size(), at).unwrap();
            let blur = g.crop(s.stages()[i]).unwrap();
            refined = run_stage(&StageState::new(padded, blur).unwrap()).unwrap();
            assert!(refined.valid_count() >= last);
            last = refined.valid_count();
        }
        assert_eq!(last, w * h);
    }

    proptest! {
        #[test]
        fn run_stage_scale_equivariant(c in 0.01f64..100.0, seed in 0u64..1000) {
            let g = DepthMap::from_fn(9, 7, |x, y| 1.0 + ((x * 31 + y * 17 + seed as usize) % 13) as f64).unwrap();
            let refined = inner_only(&g, Rect::new(3, 2, 3, 3).unwrap());
            let blur = g.map(|v| v * 0.7 + 0.3).unwrap();
            let a = run_stage(&StageState::new(refined.clone(), blur.clone()).unwrap()).unwrap();
            let b = run_stage(&StageState::new(refined.clone(), blur.scaled(c).unwrap()).unwrap()).unwrap();
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!((x - y).abs() <= 1e-9 * x.abs());
            }
            // Anchor preservation.
            for (o, r) in a.values().iter().zip(refined.values()) {
                if *r > 0.0 {
                    prop_assert_eq!(o, r);
                }
            }
        }
    }
}
