//! Supersampled rasterization of the phantom onto the pixel grid.

use ndarray::Array2;
use rayon::prelude::*;

use super::AcquisitionParams;
use crate::phantom::{PhantomScene, Point2, TubeGeometry};

/// Pixel lattice anchored at the field-of-view origin. Pixel `(row, col)`
/// covers `x in [col*p, (col+1)*p)` and `y in [row*p, (row+1)*p)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelGrid {
    pub rows: usize,
    pub cols: usize,
    pub pixel_size: f64,
}

impl PixelGrid {
    pub fn new(fov: (f64, f64), pixel_size: f64) -> Self {
        Self {
            rows: cells(fov.1, pixel_size),
            cols: cells(fov.0, pixel_size),
            pixel_size,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn pixel_center(&self, row: usize, col: usize) -> Point2 {
        Point2::new(
            (col as f64 + 0.5) * self.pixel_size,
            (row as f64 + 0.5) * self.pixel_size,
        )
    }

    /// Pixel containing `point`, if it lies on the grid.
    pub fn pixel_of(&self, point: &Point2) -> Option<(usize, usize)> {
        if point.x < 0.0 || point.y < 0.0 || !point.x.is_finite() || !point.y.is_finite() {
            return None;
        }
        let col = (point.x / self.pixel_size).floor() as usize;
        let row = (point.y / self.pixel_size).floor() as usize;
        (row < self.rows && col < self.cols).then_some((row, col))
    }

    pub fn pixel_area(&self) -> f64 {
        self.pixel_size * self.pixel_size
    }

    /// Inclusive index range of pixels touching the tube's bounding box.
    fn footprint(&self, tube: &TubeGeometry) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let r = tube.radius();
        let p = self.pixel_size;
        let clamp = |v: f64, n: usize| (v.max(0.0) as usize).min(n);
        let c0 = clamp(((tube.center.x - r) / p).floor(), self.cols);
        let c1 = clamp(((tube.center.x + r) / p).floor() + 1.0, self.cols);
        let r0 = clamp(((tube.center.y - r) / p).floor(), self.rows);
        let r1 = clamp(((tube.center.y + r) / p).floor() + 1.0, self.rows);
        (r0..r1, c0..c1)
    }
}

/// `ceil(extent / pixel)` tolerant of representation error (60 / 1.2 is 50, not 51).
fn cells(extent: f64, pixel: f64) -> usize {
    let n = extent / pixel;
    let rounded = n.round();
    if (n - rounded).abs() < 1e-9 * n.max(1.0) {
        rounded as usize
    } else {
        n.ceil() as usize
    }
}

/// Mean of `f` over `n x n` uniformly spaced subsample points in every pixel
/// touched by `tubes`; untouched pixels are zero.
fn supersample<'a, F>(
    grid: &PixelGrid,
    n: usize,
    tubes: impl Iterator<Item = &'a TubeGeometry>,
    f: F,
) -> Array2<f64>
where
    F: Fn(&Point2) -> f64 + Sync,
{
    let n = n.max(1);
    let p = grid.pixel_size;
    let offsets: Vec<f64> = (0..n).map(|k| (k as f64 + 0.5) / n as f64 * p).collect();
    let mut touched = Array2::from_elem(grid.dims(), false);
    for tube in tubes {
        let (rows, cols) = grid.footprint(tube);
        for r in rows {
            for c in cols.clone() {
                touched[[r, c]] = true;
            }
        }
    }
    let weight = 1.0 / (n * n) as f64;
    let mut out = Array2::zeros(grid.dims());
    out.axis_iter_mut(ndarray::Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(row, mut line)| {
            let y0 = row as f64 * p;
            for col in 0..grid.cols {
                if !touched[[row, col]] {
                    continue;
                }
                let x0 = col as f64 * p;
                let mut sum = 0.0;
                for &oy in &offsets {
                    for &ox in &offsets {
                        sum += f(&Point2::new(x0 + ox, y0 + oy));
                    }
                }
                line[col] = sum * weight;
            }
        });
    out
}

/// Partial-volume velocity map (mm/s): each pixel is the mean of the
/// phantom velocity over `supersampling²` subsample points.
pub fn rasterize_velocity(
    scene: &PhantomScene,
    q: f64,
    params: &AcquisitionParams,
    supersampling: usize,
) -> Array2<f64> {
    let grid = params.grid();
    supersample(&grid, supersampling, scene.tubes().iter(), |pt| {
        scene.velocity_at(q, pt)
    })
}

/// Fraction of each pixel covered by any tube lumen, static tube included.
pub fn coverage_map(
    scene: &PhantomScene,
    params: &AcquisitionParams,
    supersampling: usize,
) -> Array2<f64> {
    let grid = params.grid();
    supersample(&grid, supersampling, scene.all_tubes(), |pt| {
        if scene.is_fluid(pt) {
            1.0
        } else {
            0.0
        }
    })
}

/// Pixels at least half covered by fluid.
pub fn fluid_mask(
    scene: &PhantomScene,
    params: &AcquisitionParams,
    supersampling: usize,
) -> Array2<bool> {
    coverage_map(scene, params, supersampling).mapv(|c| c >= 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::default_scene;

    #[test]
    fn matrix_dims_are_ceiled() {
        assert_eq!(PixelGrid::new((100.0, 60.0), 1.2).dims(), (50, 84));
        assert_eq!(PixelGrid::new((100.0, 60.0), 0.8).dims(), (75, 125));
        assert_eq!(PixelGrid::new((100.0, 60.0), 4.4).dims(), (14, 23));
        assert_eq!(PixelGrid::new((100.0, 60.0), 2.8).dims(), (22, 36));
    }

    #[test]
    fn background_and_static_pixels_are_zero() {
        let scene = default_scene();
        let params = AcquisitionParams::epi_default();
        let v = rasterize_velocity(&scene, 1150.0, &params, 4);
        let grid = params.grid();
        let (r, c) = grid.pixel_of(&scene.static_tube().center).unwrap();
        assert_eq!(v[[r, c]], 0.0);
        assert_eq!(v[[0, 0]], 0.0);
        assert_eq!(v[[grid.rows - 1, grid.cols - 1]], 0.0);
    }

    #[test]
    fn centre_pixel_converges() {
        let scene = default_scene();
        let params = AcquisitionParams::epi_default();
        let grid = params.grid();
        let (r, c) = grid.pixel_of(&scene.tube1().center).unwrap();
        let coarse = rasterize_velocity(&scene, 1150.0, &params, 16)[[r, c]];
        let fine = rasterize_velocity(&scene, 1150.0, &params, 256)[[r, c]];
        assert!((coarse - fine).abs() / fine < 0.005, "{coarse} vs {fine}");
    }

    #[test]
    fn partial_pixels_are_fractional() {
        let scene = default_scene();
        let params = AcquisitionParams::epi_default();
        let cov = coverage_map(&scene, &params, 16);
        let partial = cov.iter().filter(|&&c| c > 0.0 && c < 1.0).count();
        assert!(partial > 0);
        assert!(cov.iter().all(|&c| (0.0..=1.0).contains(&c)));
    }
}
