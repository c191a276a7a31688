//! Structural similarity with an analytic gradient.

use crate::error::Result;
use crate::grid::{Grid, Image};

pub const SSIM_RADIUS: usize = 5;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone, PartialEq)]
pub struct Ssim {
    /// Mean over pixels and channels.
    pub value: f64,
    pub grad_a: Image,
    pub grad_b: Image,
}

fn kernel() -> [f64; 2 * SSIM_RADIUS + 1] {
    std::array::from_fn(|i| {
        let d = i as f64 - SSIM_RADIUS as f64;
        (-0.5 * d * d / (SSIM_SIGMA * SSIM_SIGMA)).exp()
    })
}

/// Separable Gaussian window truncated at the image border and renormalized
/// over the taps that remain.
struct Window {
    k: [f64; 2 * SSIM_RADIUS + 1],
    norm_x: Vec<f64>,
    norm_y: Vec<f64>,
    w: usize,
    h: usize,
}

impl Window {
    fn new(w: usize, h: usize) -> Self {
        let k = kernel();
        let norms = |n: usize| {
            (0..n)
                .map(|p| {
                    (0..k.len())
                        .filter_map(|i| {
                            let q = p as isize + i as isize - SSIM_RADIUS as isize;
                            (q >= 0 && (q as usize) < n).then_some(k[i])
                        })
                        .sum::<f64>()
                })
                .collect::<Vec<_>>()
        };
        Window { k, norm_x: norms(w), norm_y: norms(h), w, h }
    }

    /// Unnormalized truncated filter along one axis. The kernel is
    /// symmetric, so this is its own transpose.
    fn filter(&self, src: &[f64], horizontal: bool) -> Vec<f64> {
        let (w, h) = (self.w, self.h);
        let r = SSIM_RADIUS;
        let mut out = vec![0.0; src.len()];
        if horizontal {
            for (row, dst) in src.chunks_exact(w).zip(out.chunks_exact_mut(w)) {
                for (x, o) in dst.iter_mut().enumerate() {
                    let (lo, hi) = (x.saturating_sub(r), (x + r).min(w - 1));
                    let taps = &self.k[lo + r - x..=hi + r - x];
                    *o = taps.iter().zip(&row[lo..=hi]).map(|(k, v)| k * v).sum();
                }
            }
        } else {
            for y in 0..h {
                let (lo, hi) = (y.saturating_sub(r), (y + r).min(h - 1));
                let dst = &mut out[y * w..(y + 1) * w];
                for q in lo..=hi {
                    let kv = self.k[q + r - y];
                    for (o, v) in dst.iter_mut().zip(&src[q * w..(q + 1) * w]) {
                        *o += kv * v;
                    }
                }
            }
        }
        out
    }

    fn normalize(&self, v: &mut [f64], horizontal: bool) {
        let w = self.w;
        for (i, x) in v.iter_mut().enumerate() {
            *x /= if horizontal { self.norm_x[i % w] } else { self.norm_y[i / w] };
        }
    }

    fn apply(&self, src: &[f64]) -> Vec<f64> {
        let mut t = self.filter(src, true);
        self.normalize(&mut t, true);
        let mut out = self.filter(&t, false);
        self.normalize(&mut out, false);
        out
    }

    fn apply_transpose(&self, src: &[f64]) -> Vec<f64> {
        let mut t = src.to_vec();
        self.normalize(&mut t, false);
        let mut t = self.filter(&t, false);
        self.normalize(&mut t, true);
        self.filter(&t, true)
    }
}

fn channel(img: &Image, c: usize) -> Vec<f64> {
    img.iter().map(|p| p[c]).collect()
}

/// Mean SSIM of `a` against `b` with gradients for both images.
pub fn ssim(a: &Image, b: &Image) -> Result<Ssim> {
    b.ensure_dims(a.dims())?;
    let (w, h) = a.dims();
    let n = (w * h * 3) as f64;
    let win = Window::new(w, h);
    let mut value = 0.0;
    let mut grad_a = Grid::filled(w, h, [0.0; 3]);
    let mut grad_b = Grid::filled(w, h, [0.0; 3]);
    for c in 0..3 {
        let (ca, cb) = (channel(a, c), channel(b, c));
        let sq = |v: &[f64]| v.iter().map(|x| x * x).collect::<Vec<_>>();
        let ab: Vec<f64> = ca.iter().zip(&cb).map(|(x, y)| x * y).collect();
        let (mu_a, mu_b) = (win.apply(&ca), win.apply(&cb));
        let (m_aa, m_bb, m_ab) = (win.apply(&sq(&ca)), win.apply(&sq(&cb)), win.apply(&ab));
        let len = ca.len();
        let (mut g_mu_a, mut g_mu_b) = (vec![0.0; len], vec![0.0; len]);
        let (mut g_aa, mut g_bb, mut g_ab) = (vec![0.0; len], vec![0.0; len], vec![0.0; len]);
        for p in 0..len {
            let (ma, mb) = (mu_a[p], mu_b[p]);
            let a1 = 2.0 * ma * mb + SSIM_C1;
            let a2 = 2.0 * (m_ab[p] - ma * mb) + SSIM_C2;
            let b1 = ma * ma + mb * mb + SSIM_C1;
            let b2 = (m_aa[p] - ma * ma) + (m_bb[p] - mb * mb) + SSIM_C2;
            let s = a1 * a2 / (b1 * b2);
            value += s;
            g_mu_a[p] = (2.0 * mb * a2 - 2.0 * mb * a1) / (b1 * b2) - s * (2.0 * ma / b1 - 2.0 * ma / b2);
            g_mu_b[p] = (2.0 * ma * a2 - 2.0 * ma * a1) / (b1 * b2) - s * (2.0 * mb / b1 - 2.0 * mb / b2);
            g_aa[p] = -s / b2;
            g_bb[p] = -s / b2;
            g_ab[p] = 2.0 * a1 / (b1 * b2);
        }
        let (t_mu_a, t_mu_b) = (win.apply_transpose(&g_mu_a), win.apply_transpose(&g_mu_b));
        let (t_aa, t_bb, t_ab) = (win.apply_transpose(&g_aa), win.apply_transpose(&g_bb), win.apply_transpose(&g_ab));
        for p in 0..len {
            grad_a.as_mut_slice()[p][c] = (t_mu_a[p] + 2.0 * ca[p] * t_aa[p] + cb[p] * t_ab[p]) / n;
            grad_b.as_mut_slice()[p][c] = (t_mu_b[p] + 2.0 * cb[p] * t_bb[p] + ca[p] * t_ab[p]) / n;
        }
    }
    Ok(Ssim { value: value / n, grad_a, grad_b })
}
