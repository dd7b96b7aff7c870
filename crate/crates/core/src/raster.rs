//! Raster containers shared by the whole pipeline.
//!
//! Every map is stored row-major with the origin at the top-left corner and
//! `y` pointing down. Depth uses `0.0` as the only "no measurement" value, so
//! the validity mask of a [`DepthMap`] is always derived from its values.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned pixel rectangle, `[x0, x0 + width) x [y0, y0 + height)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn new(x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::DegenerateRect(format!(
                "{width}x{height} at ({x0}, {y0})"
            )));
        }
        Ok(Self {
            x0,
            y0,
            width,
            height,
        })
    }

    /// The rect covering a whole `width x height` frame.
    pub fn full(width: usize, height: usize) -> Result<Self> {
        Self::new(0, 0, width, height)
    }

    pub fn x1(&self) -> usize {
        self.x0 + self.width
    }

    pub fn y1(&self) -> usize {
        self.y0 + self.height
    }

    pub fn size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    /// True when the rect lies inside a frame of the given size.
    pub fn fits_in(&self, width: usize, height: usize) -> bool {
        self.width > 0 && self.height > 0 && self.x1() <= width && self.y1() <= height
    }

    /// True when `other` lies inside `self`.
    pub fn contains_rect(&self, other: &Rect) -> bool {
        other.x0 >= self.x0 && other.y0 >= self.y0 && other.x1() <= self.x1() && other.y1() <= self.y1()
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1() && y >= self.y0 && y < self.y1()
    }

    /// Express `self` in the coordinates of `outer`'s top-left corner.
    /// Fails when `self` is not inside `outer`.
    pub fn relative_to(&self, outer: &Rect) -> Result<Rect> {
        if !outer.contains_rect(self) {
            return Err(Error::OutOfBounds {
                rect: *self,
                width: outer.width,
                height: outer.height,
            });
        }
        Ok(Rect {
            x0: self.x0 - outer.x0,
            y0: self.y0 - outer.y0,
            width: self.width,
            height: self.height,
        })
    }

    /// Inverse of [`Rect::relative_to`]: shift a rect given in `outer`'s
    /// local coordinates back into the parent frame.
    pub fn offset_by(&self, outer: &Rect) -> Rect {
        Rect {
            x0: self.x0 + outer.x0,
            y0: self.y0 + outer.y0,
            width: self.width,
            height: self.height,
        }
    }
}

impl fmt::Display for Rect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}x{}+{}+{}",
            self.width, self.height, self.x0, self.y0
        )
    }
}

/// Plain row-major 2D buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Copy> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidValue(format!(
                "empty grid {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::InvalidValue(format!(
                "{width}x{height} grid needs {} samples, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: T) -> Self {
        assert!(width > 0 && height > 0, "empty grid");
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        assert!(width > 0 && height > 0, "empty grid");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U: Copy>(&self, f: impl FnMut(T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().copied().map(f).collect(),
        }
    }

    /// Copy out the sub-grid under `r`; no resampling.
    pub fn crop(&self, r: Rect) -> Result<Self> {
        if !r.fits_in(self.width, self.height) {
            return Err(Error::OutOfBounds {
                rect: r,
                width: self.width,
                height: self.height,
            });
        }
        let mut data = Vec::with_capacity(r.area());
        for y in r.y0..r.y1() {
            let row = y * self.width;
            data.extend_from_slice(&self.data[row + r.x0..row + r.x1()]);
        }
        Ok(Self {
            width: r.width,
            height: r.height,
            data,
        })
    }

    /// Place `self` at `at` inside an `outer`-sized grid filled with `fill`.
    pub fn pad_into(&self, outer: (usize, usize), at: Rect, fill: T) -> Result<Self> {
        if at.size() != self.dims() {
            return Err(Error::dims(self.dims(), at.size()));
        }
        if !at.fits_in(outer.0, outer.1) {
            return Err(Error::OutOfBounds {
                rect: at,
                width: outer.0,
                height: outer.1,
            });
        }
        let mut out = Grid::filled(outer.0, outer.1, fill);
        for y in 0..self.height {
            let dst = (at.y0 + y) * outer.0 + at.x0;
            let src = y * self.width;
            out.data[dst..dst + self.width].copy_from_slice(&self.data[src..src + self.width]);
        }
        Ok(out)
    }
}

/// Per-pixel validity, `true` where a depth measurement exists.
pub type BinaryMask = Grid<bool>;

impl BinaryMask {
    pub fn count(&self) -> usize {
        self.as_slice().iter().filter(|&&b| b).count()
    }
}

/// Dense metric depth in meters; `0.0` marks a missing measurement.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap(Grid<f64>);

fn check_depth(v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidValue(format!(
            "depth must be finite and >= 0, got {v}"
        )))
    }
}

impl DepthMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        values.iter().try_for_each(|&v| check_depth(v))?;
        Ok(Self(Grid::from_vec(width, height, values)?))
    }

    pub fn from_grid(grid: Grid<f64>) -> Result<Self> {
        grid.as_slice().iter().try_for_each(|&v| check_depth(v))?;
        Ok(Self(grid))
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self(Grid::filled(width, height, 0.0))
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        check_depth(value)?;
        Ok(Self(Grid::filled(width, height, value)))
    }

    pub fn from_fn(width: usize, height: usize, f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        Self::from_grid(Grid::from_fn(width, height, f))
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.0.get(x, y)
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.0.get(x, y) > 0.0
    }

    pub fn values(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn grid(&self) -> &Grid<f64> {
        &self.0
    }

    pub fn valid_count(&self) -> usize {
        self.values().iter().filter(|&&v| v > 0.0).count()
    }

    /// Valid depths in raster order.
    pub fn valid_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.values().iter().copied().filter(|&v| v > 0.0)
    }

    pub fn crop(&self, r: Rect) -> Result<Self> {
        Ok(Self(self.0.crop(r)?))
    }

    pub fn pad_into(&self, outer: (usize, usize), at: Rect) -> Result<Self> {
        Ok(Self(self.0.pad_into(outer, at, 0.0)?))
    }

    /// Multiply every value by `s`. Invalid pixels stay at zero.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::NonPositiveScale(s));
        }
        Ok(Self(self.0.map(|v| v * s)))
    }

    /// Apply `f` to every pixel value; the result is re-validated.
    pub fn map(&self, f: impl FnMut(f64) -> f64) -> Result<Self> {
        Self::from_grid(self.0.map(f))
    }

    pub fn ensure_dims(&self, dims: (usize, usize)) -> Result<()> {
        if self.dims() != dims {
            return Err(Error::dims(dims, self.dims()));
        }
        Ok(())
    }
}

/// Three-channel image with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageFrame(Grid<[f64; 3]>);

fn check_intensity(px: [f64; 3]) -> Result<()> {
    if px.iter().all(|c| (0.0..=1.0).contains(c)) {
        Ok(())
    } else {
        Err(Error::InvalidValue(format!(
            "intensity must lie in [0, 1], got {px:?}"
        )))
    }
}

impl ImageFrame {
    pub fn new(width: usize, height: usize, pixels: Vec<[f64; 3]>) -> Result<Self> {
        Self::from_grid(Grid::from_vec(width, height, pixels)?)
    }

    pub fn from_grid(grid: Grid<[f64; 3]>) -> Result<Self> {
        grid.as_slice().iter().try_for_each(|&p| check_intensity(p))?;
        Ok(Self(grid))
    }

    pub fn from_fn(width: usize, height: usize, f: impl FnMut(usize, usize) -> [f64; 3]) -> Result<Self> {
        Self::from_grid(Grid::from_fn(width, height, f))
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::from_grid(Grid::filled(width, height, [value; 3]))
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.0.get(x, y)
    }

    /// Channel-mean intensity.
    #[inline]
    pub fn gray(&self, x: usize, y: usize) -> f64 {
        let p = self.0.get(x, y);
        (p[0] + p[1] + p[2]) / 3.0
    }

    pub fn grid(&self) -> &Grid<[f64; 3]> {
        &self.0
    }

    /// One channel as a scalar grid.
    pub fn channel(&self, c: usize) -> Grid<f64> {
        self.0.map(|p| p[c])
    }

    pub fn crop(&self, r: Rect) -> Result<Self> {
        Ok(Self(self.0.crop(r)?))
    }

    pub fn ensure_dims(&self, dims: (usize, usize)) -> Result<()> {
        if self.dims() != dims {
            return Err(Error::dims(dims, self.dims()));
        }
        Ok(())
    }
}

/// Per-pixel standard deviation in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyMap(Grid<f64>);

impl UncertaintyMap {
    pub fn from_grid(grid: Grid<f64>) -> Result<Self> {
        if let Some(v) = grid.as_slice().iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidValue(format!(
                "uncertainty must be finite and >= 0, got {v}"
            )));
        }
        Ok(Self(grid))
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.0.get(x, y)
    }

    pub fn values(&self) -> &[f64] {
        self.0.as_slice()
    }
}

pub fn valid_mask(d: &DepthMap) -> BinaryMask {
    d.grid().map(|v| v > 0.0)
}

/// Median of a sample; the mean of the two central values for even counts.
/// `values` is reordered in place.
pub fn median_in_place(values: &mut [f64]) -> Option<f64> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mid = n / 2;
    let (lower, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        Some(upper)
    } else {
        let lower_max = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(0.5 * (lower_max + upper))
    }
}

/// Median over the valid pixels of `d`.
pub fn masked_median(d: &DepthMap) -> Result<f64> {
    let mut v: Vec<f64> = d.valid_values().collect();
    median_in_place(&mut v).ok_or(Error::EmptyMask)
}

/// Smallest rect holding every valid pixel of `d`.
pub fn valid_bounds(d: &DepthMap) -> Option<Rect> {
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for y in 0..d.height() {
        for x in 0..d.width() {
            if d.is_valid(x, y) {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    (x0 != usize::MAX).then(|| Rect {
        x0,
        y0,
        width: x1 - x0 + 1,
        height: y1 - y0 + 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn bounds_of_valid_pixels() {
        assert_eq!(valid_bounds(&DepthMap::zeros(5, 4)), None);
        let d = DepthMap::from_fn(9, 7, |x, y| if (x == 2 && y == 5) || (x == 6 && y == 1) { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(valid_bounds(&d), Some(Rect::new(2, 1, 5, 5).unwrap()));
    }

    fn row(values: &[f64]) -> DepthMap {
        DepthMap::new(values.len(), 1, values.to_vec()).unwrap()
    }

    #[test]
    fn mask_of_empty_and_full_maps() {
        assert_eq!(valid_mask(&DepthMap::zeros(4, 3)).count(), 0);
        assert_eq!(valid_mask(&DepthMap::constant(4, 3, 2.5).unwrap()).count(), 12);
    }

    #[test]
    fn mask_popcount_matches_scan() {
        let d = DepthMap::from_fn(7, 5, |x, y| if (x * 3 + y) % 4 == 0 { 1.5 } else { 0.0 }).unwrap();
        let mut expected = 0;
        for y in 0..5 {
            for x in 0..7 {
                if (x * 3 + y) % 4 == 0 {
                    expected += 1;
                }
            }
        }
        assert_eq!(valid_mask(&d).count(), expected);
    }

    #[test]
    fn median_examples() {
        assert_eq!(masked_median(&row(&[0.0, 0.0, 5.0])).unwrap(), 5.0);
        assert_eq!(masked_median(&row(&[1.0, 2.0, 3.0, 0.0])).unwrap(), 2.0);
        assert_eq!(masked_median(&row(&[1.0, 3.0, 0.0, 0.0, 5.0, 7.0])).unwrap(), 4.0);
        assert!(matches!(masked_median(&row(&[0.0, 0.0])), Err(Error::EmptyMask)));
    }

    #[test]
    fn rejects_bad_depth() {
        assert!(DepthMap::new(1, 1, vec![f64::NAN]).is_err());
        assert!(DepthMap::new(1, 1, vec![-1.0]).is_err());
        assert!(DepthMap::new(1, 1, vec![f64::INFINITY]).is_err());
        assert!(ImageFrame::constant(1, 1, 1.5).is_err());
    }

    #[test]
    fn crop_identity_and_single_pixel() {
        let d = DepthMap::from_fn(5, 4, |x, y| (x + 10 * y) as f64).unwrap();
        assert_eq!(d.crop(Rect::full(5, 4).unwrap()).unwrap(), d);
        let one = d.crop(Rect::new(3, 2, 1, 1).unwrap()).unwrap();
        assert_eq!(one.values(), &[23.0]);
        assert!(matches!(
            d.crop(Rect::new(3, 2, 3, 1).unwrap()),
            Err(Error::OutOfBounds { .. })
        ));
    }

    #[test]
    fn nested_crop_composes() {
        let d = DepthMap::from_fn(9, 8, |x, y| (x * 13 + y * 7) as f64).unwrap();
        let outer = Rect::new(2, 1, 6, 6).unwrap();
        let inner = Rect::new(1, 2, 3, 2).unwrap();
        let twice = d.crop(outer).unwrap().crop(inner).unwrap();
        assert_eq!(twice, d.crop(inner.offset_by(&outer)).unwrap());
        assert_eq!(inner.offset_by(&outer).relative_to(&outer).unwrap(), inner);
    }

    #[test]
    fn pad_examples() {
        let d = DepthMap::from_fn(4, 4, |x, y| 1.0 + (x + y) as f64).unwrap();
        assert_eq!(d.pad_into((4, 4), Rect::full(4, 4).unwrap()).unwrap(), d);

        let small = DepthMap::constant(2, 2, 3.0).unwrap();
        let padded = small.pad_into((4, 4), Rect::new(1, 1, 2, 2).unwrap()).unwrap();
        assert_eq!(padded.values().iter().filter(|&&v| v == 0.0).count(), 12);
        assert_eq!(padded.values().iter().filter(|&&v| v == 3.0).count(), 4);

        assert!(matches!(
            small.pad_into((4, 4), Rect::new(0, 0, 3, 2).unwrap()),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(small.pad_into((4, 4), Rect::new(3, 3, 2, 2).unwrap()).is_err());
    }

    fn depth_strategy() -> impl Strategy<Value = DepthMap> {
        (1usize..8, 1usize..8).prop_flat_map(|(w, h)| {
            prop::collection::vec(prop_oneof![Just(0.0), 0.01f64..100.0], w * h)
                .prop_map(move |v| DepthMap::new(w, h, v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn pad_then_crop_round_trips(d in depth_strategy(), ox in 0usize..5, oy in 0usize..5, ex in 0usize..5, ey in 0usize..5) {
            let outer = (d.width() + ox + ex, d.height() + oy + ey);
            let at = Rect::new(ox, oy, d.width(), d.height()).unwrap();
            let padded = d.pad_into(outer, at).unwrap();
            prop_assert_eq!(padded.crop(at).unwrap(), d.clone());
            prop_assert_eq!(valid_mask(&padded).count(), valid_mask(&d).count());
        }

        #[test]
        fn median_ignores_zeros(d in depth_strategy(), extra in 0usize..20) {
            prop_assume!(d.valid_count() > 0);
            let mut v = d.values().to_vec();
            v.extend(std::iter::repeat_n(0.0, extra));
            let n = v.len();
            let longer = DepthMap::new(n, 1, v).unwrap();
            prop_assert_eq!(masked_median(&longer).unwrap(), masked_median(&d).unwrap());
        }
    }
}
