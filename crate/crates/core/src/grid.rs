//! Dense row-major 2D grids used for images, masks and per-pixel fields.

use crate::error::{Error, Result};

pub type Rgb = [f64; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

/// Linear RGB image with channels in `[0, 1]`.
pub type Image = Grid<Rgb>;
pub type Mask = Grid<bool>;

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Grid {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "grid of {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Grid {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Grid {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut T {
        &mut self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.data.iter()
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn ensure_dims(&self, dims: (usize, usize)) -> Result<()> {
        if self.dims() != dims {
            return Err(Error::ShapeMismatch {
                expected: dims,
                actual: self.dims(),
            });
        }
        Ok(())
    }

    /// Iterates `(x, y, &value)` in row-major order.
    pub fn enumerate(&self) -> impl Iterator<Item = (usize, usize, &T)> {
        let w = self.width;
        self.data.iter().enumerate().map(move |(i, v)| (i % w, i / w, v))
    }
}

impl Mask {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn and(&self, other: &Mask) -> Result<Mask> {
        other.ensure_dims(self.dims())?;
        Ok(Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a && *b).collect(),
        })
    }
}

impl Image {
    /// Bilinear lookup at a continuous pixel position. Returns `None` when the
    /// position lies outside `[0, w-1] x [0, h-1]`.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<Rgb> {
        let taps = bilinear_taps(self.width, self.height, x, y)?;
        let mut out = [0.0; 3];
        for (ix, iy, w) in taps {
            let p = self.get(ix, iy);
            for c in 0..3 {
                out[c] += w * p[c];
            }
        }
        Some(out)
    }
}

impl Grid<f64> {
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f64> {
        let taps = bilinear_taps(self.width, self.height, x, y)?;
        Some(taps.iter().map(|&(ix, iy, w)| w * self.get(ix, iy)).sum())
    }
}

/// The four bilinear taps `(x, y, weight)` for a continuous position, or
/// `None` when it falls outside the pixel-centre hull. Taps at the far edge
/// carry zero weight and are clamped in-bounds.
pub fn bilinear_taps(width: usize, height: usize, x: f64, y: f64) -> Option<[(usize, usize, f64); 4]> {
    if width == 0 || height == 0 || !x.is_finite() || !y.is_finite() {
        return None;
    }
    let max_x = (width - 1) as f64;
    let max_y = (height - 1) as f64;
    // Round-off past the border still counts as inside.
    const SLACK: f64 = 1e-7;
    if x < -SLACK || y < -SLACK || x > max_x + SLACK || y > max_y + SLACK {
        return None;
    }
    let (x, y) = (x.clamp(0.0, max_x), y.clamp(0.0, max_y));
    let x0 = (x.floor() as usize).min(width - 1);
    let y0 = (y.floor() as usize).min(height - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    Some([
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x1, y0, fx * (1.0 - fy)),
        (x0, y1, (1.0 - fx) * fy),
        (x1, y1, fx * fy),
    ])
}

/// Peak signal-to-noise ratio of `a` against `b` on `[0, 1]` data, restricted
/// to `mask` when given. Identical inputs are capped at 99 dB.
pub fn psnr(a: &Image, b: &Image, mask: Option<&Mask>) -> Result<f64> {
    b.ensure_dims(a.dims())?;
    if let Some(m) = mask {
        m.ensure_dims(a.dims())?;
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..a.len() {
        if mask.is_some_and(|m| !m.as_slice()[i]) {
            continue;
        }
        let (pa, pb) = (a.as_slice()[i], b.as_slice()[i]);
        for c in 0..3 {
            let d = pa[c] - pb[c];
            sum += d * d;
        }
        n += 3;
    }
    if n == 0 {
        return Err(Error::invalid("psnr over an empty region"));
    }
    Ok(psnr_from_mse(sum / n as f64))
}

pub const PSNR_CAP_DB: f64 = 99.0;

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (-10.0 * mse.log10()).min(PSNR_CAP_DB)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_on_ramp_is_exact() {
        let img = Image::from_fn(5, 4, |x, _| [x as f64, 0.0, 0.0]);
        let v = img.sample_bilinear(2.25, 1.5).unwrap();
        assert!((v[0] - 2.25).abs() < 1e-12);
        assert!(img.sample_bilinear(4.0, 3.0).is_some());
        assert!(img.sample_bilinear(4.01, 0.0).is_none());
        assert!(img.sample_bilinear(-0.01, 0.0).is_none());
    }

    #[test]
    fn psnr_of_one_level_error() {
        let a = Image::filled(8, 8, [0.5; 3]);
        let b = Image::filled(8, 8, [0.5 + 1.0 / 255.0; 3]);
        let v = psnr(&a, &b, None).unwrap();
        assert!((v - 48.1308).abs() < 1e-3, "{v}");
        assert_eq!(psnr(&a, &a, None).unwrap(), PSNR_CAP_DB);
    }
}
