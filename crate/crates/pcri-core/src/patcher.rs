//! Deterministic partition of an image into the full view plus n x n
//! non-overlapping patch views.
//!
//! When a dimension is not divisible by n, the remainder pixels go one per
//! tile to the earliest rows/columns, so all tiles differ by at most 1 px per
//! axis and the grid tiles the image exactly.

use crate::types::{GridSpec, PixelRect, View};
use image::RgbImage;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PatchError {
    #[error("image {height}x{width} is too small for a {n}x{n} grid")]
    DimensionTooSmall { height: u32, width: u32, n: u32 },
    #[error("view bounds {bounds:?} exceed image {height}x{width}")]
    OutOfBounds { bounds: PixelRect, height: u32, width: u32 },
}

/// The n^2 patch views of one sample, in row-major order (index = row*n + col).
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPlan {
    pub sample_id: String,
    pub grid: GridSpec,
    pub views: Vec<View>,
}

/// Split `extent` pixels into `n` contiguous segments; the first
/// `extent % n` segments get one extra pixel. Returns (start, length) pairs.
fn segments(extent: u32, n: u32) -> Vec<(u32, u32)> {
    let base = extent / n;
    let rem = extent % n;
    (0..n)
        .map(|i| {
            let start = i * base + i.min(rem);
            let len = base + u32::from(i < rem);
            (start, len)
        })
        .collect()
}

/// Plan the patch grid for an image of `height` x `width` pixels.
pub fn plan_grid(
    sample_id: &str,
    height: u32,
    width: u32,
    grid: GridSpec,
) -> Result<PatchPlan, PatchError> {
    let n = grid.n();
    if height < n || width < n {
        return Err(PatchError::DimensionTooSmall { height, width, n });
    }
    let rows = segments(height, n);
    let cols = segments(width, n);
    let mut views = Vec::with_capacity((n * n) as usize);
    for (r, &(top, h)) in rows.iter().enumerate() {
        for (c, &(left, w)) in cols.iter().enumerate() {
            views.push(View::patch(
                sample_id,
                grid,
                r as u32,
                c as u32,
                PixelRect::new(top, left, h, w),
            ));
        }
    }
    Ok(PatchPlan { sample_id: sample_id.to_string(), grid, views })
}

/// Copy the view's pixels out of `image`, unmodified: no resizing, no padding.
pub fn crop(image: &RgbImage, view: &View) -> Result<RgbImage, PatchError> {
    let bounds = view.pixel_bounds();
    let (width, height) = image.dimensions();
    if bounds.right() > width || bounds.bottom() > height {
        return Err(PatchError::OutOfBounds { bounds, height, width });
    }
    let mut out = RgbImage::new(bounds.width, bounds.height);
    for y in 0..bounds.height {
        for x in 0..bounds.width {
            out.put_pixel(x, y, *image.get_pixel(bounds.left + x, bounds.top + y));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ViewKind;
    use image::Rgb;
    use proptest::prelude::*;

    fn grid(n: u32) -> GridSpec {
        GridSpec::new(n).unwrap()
    }

    fn bounds_of(plan: &PatchPlan) -> Vec<PixelRect> {
        plan.views.iter().map(|v| v.pixel_bounds()).collect()
    }

    #[test]
    fn plan_even_split() {
        let plan = plan_grid("s", 6, 6, grid(2)).unwrap();
        assert_eq!(
            bounds_of(&plan),
            vec![
                PixelRect::new(0, 0, 3, 3),
                PixelRect::new(0, 3, 3, 3),
                PixelRect::new(3, 0, 3, 3),
                PixelRect::new(3, 3, 3, 3),
            ]
        );
    }

    #[test]
    fn plan_remainder_goes_to_earliest_tiles() {
        let plan = plan_grid("s", 7, 7, grid(2)).unwrap();
        let b = bounds_of(&plan);
        assert_eq!(b[0], PixelRect::new(0, 0, 4, 4));
        assert_eq!(b[1], PixelRect::new(0, 4, 4, 3));
        assert_eq!(b[2], PixelRect::new(4, 0, 3, 4));
        assert_eq!(b[3], PixelRect::new(4, 4, 3, 3));
    }

    #[test]
    fn plan_degenerate_unit_tiles() {
        let plan = plan_grid("s", 5, 5, grid(5)).unwrap();
        assert_eq!(plan.views.len(), 25);
        assert!(plan.views.iter().all(|v| {
            let b = v.pixel_bounds();
            b.height == 1 && b.width == 1
        }));
    }

    #[test]
    fn plan_row_major_indexing() {
        let plan = plan_grid("s", 9, 9, grid(3)).unwrap();
        for (j, view) in plan.views.iter().enumerate() {
            match &view.kind {
                ViewKind::Patch { row, col, .. } => {
                    assert_eq!(*row * 3 + *col, j as u32);
                }
                _ => panic!("patch plan must contain only patch views"),
            }
        }
    }

    #[test]
    fn plan_rejects_too_small() {
        assert_eq!(
            plan_grid("s", 2, 8, grid(3)),
            Err(PatchError::DimensionTooSmall { height: 2, width: 8, n: 3 })
        );
    }

    fn checkerboard(h: u32, w: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| {
            if (x + y) % 2 == 0 {
                Rgb([255, 255, 255])
            } else {
                Rgb([0, 0, 0])
            }
        })
    }

    #[test]
    fn crop_full_view_is_identity() {
        let img = checkerboard(5, 7);
        let out = crop(&img, &View::full("s", 5, 7)).unwrap();
        assert_eq!(out.as_raw(), img.as_raw());
    }

    #[test]
    fn crop_top_right_quadrant() {
        let img = checkerboard(8, 8);
        let plan = plan_grid("s", 8, 8, grid(2)).unwrap();
        let out = crop(&img, &plan.views[1]).unwrap();
        assert_eq!(out.dimensions(), (4, 4));
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(out.get_pixel(x, y), img.get_pixel(x + 4, y));
            }
        }
    }

    #[test]
    fn crop_bottom_right_tile_of_7x7_grid3() {
        // Hand enumeration for H = W = 7, n = 3: segment heights (3, 2, 2)
        // starting at (0, 3, 5), so tile (2, 2) is the 2x2 block at (5, 5).
        let img = checkerboard(7, 7);
        let plan = plan_grid("s", 7, 7, grid(3)).unwrap();
        let view = &plan.views[8];
        assert_eq!(view.pixel_bounds(), PixelRect::new(5, 5, 2, 2));
        let out = crop(&img, view).unwrap();
        assert_eq!(out.dimensions(), (2, 2));
        assert_eq!(out.get_pixel(0, 0), img.get_pixel(5, 5));
    }

    #[test]
    fn crop_rejects_out_of_bounds() {
        let img = checkerboard(4, 4);
        let grid2 = grid(2);
        let view = View::patch("s", grid2, 1, 1, PixelRect::new(2, 2, 3, 3));
        assert!(matches!(crop(&img, &view), Err(PatchError::OutOfBounds { .. })));
    }

    proptest! {
        /// Tiles are pairwise disjoint, cover every pixel, and reassembling
        /// all crops reproduces the image byte-exactly.
        #[test]
        fn tiling_is_exact_and_crops_reassemble(
            n in 1u32..=5,
            extra_h in 0u32..60,
            extra_w in 0u32..60,
            seed in any::<u32>(),
        ) {
            let h = (n + extra_h).min(64);
            let w = (n + extra_w).min(64);
            let img = RgbImage::from_fn(w, h, |x, y| {
                let v = seed
                    .wrapping_mul(31)
                    .wrapping_add(x * 131 + y * 17);
                Rgb([(v & 0xff) as u8, ((v >> 8) & 0xff) as u8, ((v >> 16) & 0xff) as u8])
            });
            let plan = plan_grid("s", h, w, grid(n)).unwrap();

            let mut coverage = vec![0u8; (h * w) as usize];
            let mut area_sum = 0u64;
            for view in &plan.views {
                let b = view.pixel_bounds();
                prop_assert!(b.area() > 0);
                area_sum += b.area();
                for y in b.top..b.bottom() {
                    for x in b.left..b.right() {
                        coverage[(y * w + x) as usize] += 1;
                    }
                }
            }
            prop_assert_eq!(area_sum, u64::from(h) * u64::from(w));
            prop_assert!(coverage.iter().all(|&c| c == 1));

            let mut rebuilt = RgbImage::new(w, h);
            for view in &plan.views {
                let tile = crop(&img, view).unwrap();
                let b = view.pixel_bounds();
                for y in 0..b.height {
                    for x in 0..b.width {
                        rebuilt.put_pixel(b.left + x, b.top + y, *tile.get_pixel(x, y));
                    }
                }
            }
            prop_assert_eq!(rebuilt.as_raw(), img.as_raw());
        }

        /// Identical inputs yield identical plans.
        #[test]
        fn plan_is_pure(n in 1u32..=5, h in 5u32..64, w in 5u32..64) {
            prop_assume!(h >= n && w >= n);
            let a = plan_grid("s", h, w, grid(n)).unwrap();
            let b = plan_grid("s", h, w, grid(n)).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
