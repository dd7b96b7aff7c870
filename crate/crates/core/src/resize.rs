//! Resampling of images and depth maps.
//!
//! Images are resampled by area averaging or bilinear interpolation. Depth
//! is never interpolated across holes: every output sample copies one valid
//! input sample or stays invalid.

use crate::error::{Error, Result};
use crate::geometry::sample_bilinear;
use crate::raster::{DepthMap, Grid, ImageFrame};

/// Halve both dimensions by 2x2 area averaging; an odd last row or column
/// is dropped.
pub fn downsample_image(img: &ImageFrame) -> Result<ImageFrame> {
    let (w, h) = img.dims();
    if w < 2 || h < 2 {
        return Err(Error::InvalidValue(format!("cannot halve a {w}x{h} image")));
    }
    let grid = Grid::from_fn(w / 2, h / 2, |x, y| {
        let mut out = [0.0; 3];
        for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            let p = img.get(2 * x + dx, 2 * y + dy);
            for c in 0..3 {
                out[c] += 0.25 * p[c];
            }
        }
        out.map(|c: f64| c.clamp(0.0, 1.0))
    });
    ImageFrame::from_grid(grid)
}

/// `levels + 1` images, each half the size of the previous one.
pub fn image_pyramid(img: &ImageFrame, levels: usize) -> Result<Vec<ImageFrame>> {
    let mut out = vec![img.clone()];
    for _ in 0..levels {
        let next = downsample_image(out.last().unwrap())?;
        out.push(next);
    }
    Ok(out)
}

/// Downsample by an integer `factor`: each output pixel takes the valid
/// input pixel of its `factor x factor` block closest to the block center
/// (first in raster order on ties), or stays invalid.
pub fn downsample_depth_nearest_valid(d: &DepthMap, factor: usize) -> Result<DepthMap> {
    if factor == 0 {
        return Err(Error::InvalidValue("downsampling factor must be >= 1".into()));
    }
    if factor == 1 {
        return Ok(d.clone());
    }
    let (w, h) = (d.width() / factor, d.height() / factor);
    if w == 0 || h == 0 {
        return Err(Error::InvalidValue(format!(
            "cannot downsample {}x{} by {factor}",
            d.width(),
            d.height()
        )));
    }
    let center = (factor as f64 - 1.0) / 2.0;
    DepthMap::from_fn(w, h, |x, y| {
        let mut best = (f64::INFINITY, 0.0);
        for by in 0..factor {
            for bx in 0..factor {
                let v = d.get(x * factor + bx, y * factor + by);
                if v <= 0.0 {
                    continue;
                }
                let dist = (bx as f64 - center).powi(2) + (by as f64 - center).powi(2);
                if dist < best.0 {
                    best = (dist, v);
                }
            }
        }
        best.1
    })
}

/// Source coordinate of output pixel `i` when resizing `n_in` to `n_out`.
#[inline]
fn source_coord(i: usize, n_in: usize, n_out: usize) -> f64 {
    let u = (i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5;
    u.clamp(0.0, (n_in - 1) as f64)
}

pub fn resize_image_bilinear(img: &ImageFrame, width: usize, height: usize) -> Result<ImageFrame> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidValue("resize target must be non-empty".into()));
    }
    let (w, h) = img.dims();
    let grid = Grid::from_fn(width, height, |x, y| {
        let u = source_coord(x, w, width);
        let v = source_coord(y, h, height);
        sample_bilinear(img, u, v)
            .expect("clamped coordinates lie inside the image")
            .map(|c| c.clamp(0.0, 1.0))
    });
    ImageFrame::from_grid(grid)
}

/// Nearest-neighbour resize that falls back to the nearest valid pixel of
/// the 2x2 neighbourhood around the source coordinate.
pub fn resize_depth_nearest_valid(d: &DepthMap, width: usize, height: usize) -> Result<DepthMap> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidValue("resize target must be non-empty".into()));
    }
    let (w, h) = d.dims();
    DepthMap::from_fn(width, height, |x, y| {
        let u = source_coord(x, w, width);
        let v = source_coord(y, h, height);
        let (nx, ny) = (u.round() as usize, v.round() as usize);
        let nearest = d.get(nx, ny);
        if nearest > 0.0 || (u.fract() == 0.0 && v.fract() == 0.0) {
            return nearest;
        }
        let (x0, y0) = (u.floor() as usize, v.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        let mut best = (f64::INFINITY, 0.0);
        for (xx, yy) in [(x0, y0), (x1, y0), (x0, y1), (x1, y1)] {
            let val = d.get(xx, yy);
            if val <= 0.0 {
                continue;
            }
            let dist = (xx as f64 - u).powi(2) + (yy as f64 - v).powi(2);
            if dist < best.0 {
                best = (dist, val);
            }
        }
        best.1
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn downsample_image_averages_blocks() {
        let img = ImageFrame::from_fn(5, 4, |x, y| [(x + 4 * y) as f64 / 20.0; 3]).unwrap();
        let half = downsample_image(&img).unwrap();
        assert_eq!(half.dims(), (2, 2));
        let expected = (0.0 + 1.0 + 4.0 + 5.0) / 4.0 / 20.0;
        assert!((half.get(0, 0)[0] - expected).abs() < 1e-15);
        assert_eq!(image_pyramid(&img, 1).unwrap().len(), 2);
        assert!(downsample_image(&ImageFrame::constant(1, 4, 0.0).unwrap()).is_err());
    }

    #[test]
    fn nearest_valid_block_sampling() {
        // 4x4 block, only a corner pixel is valid.
        let d = DepthMap::from_fn(4, 4, |x, y| if (x, y) == (3, 0) { 7.0 } else { 0.0 }).unwrap();
        assert_eq!(downsample_depth_nearest_valid(&d, 4).unwrap().values(), &[7.0]);
        let d = DepthMap::from_fn(4, 4, |x, y| if (x, y) == (3, 0) || (x, y) == (2, 2) { (x + y) as f64 } else { 0.0 }).unwrap();
        assert_eq!(downsample_depth_nearest_valid(&d, 4).unwrap().values(), &[4.0]);
        assert_eq!(downsample_depth_nearest_valid(&DepthMap::zeros(4, 4), 2).unwrap().valid_count(), 0);
    }

    #[test]
    fn resize_to_same_size_is_identity() {
        let img = ImageFrame::from_fn(7, 5, |x, y| [x as f64 / 7.0, y as f64 / 5.0, 0.5]).unwrap();
        assert_eq!(resize_image_bilinear(&img, 7, 5).unwrap(), img);
        let d = DepthMap::from_fn(7, 5, |x, y| if x % 2 == 0 { 1.0 + y as f64 } else { 0.0 }).unwrap();
        assert_eq!(resize_depth_nearest_valid(&d, 7, 5).unwrap(), d);
    }

    #[test]
    fn depth_resize_never_invents_values() {
        let d = DepthMap::from_fn(9, 6, |x, y| if (x + y) % 3 == 0 { 2.0 + x as f64 } else { 0.0 }).unwrap();
        let src: Vec<f64> = d.values().to_vec();
        for (w, h) in [(4, 3), (13, 11), (9, 2)] {
            let r = resize_depth_nearest_valid(&d, w, h).unwrap();
            assert!(r.values().iter().all(|v| *v == 0.0 || src.contains(v)));
        }
    }
}
