//! Corner-aligned bilinear resampling of `[N, C, H, W]` planes.

use alloc::vec;
use alloc::vec::Vec;

use crate::real::Real;

/// Per-output-coordinate source taps along one axis.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct AxisTaps {
    lo: Vec<usize>,
    hi: Vec<usize>,
    frac: Vec<f64>,
}

impl AxisTaps {
    /// Output sample `o` reads source coordinate `o * (src-1) / (dst-1)`,
    /// so both end points land exactly on the source end points.
    pub fn corner_aligned(src: usize, dst: usize) -> Self {
        let mut lo = Vec::with_capacity(dst);
        let mut hi = Vec::with_capacity(dst);
        let mut frac = Vec::with_capacity(dst);
        for o in 0..dst {
            let (i, f) = if dst == 1 || src == 1 {
                (0, 0.0)
            } else {
                let num = o * (src - 1);
                let den = dst - 1;
                (num / den, (num % den) as f64 / den as f64)
            };
            lo.push(i);
            hi.push((i + 1).min(src - 1));
            frac.push(f);
        }
        Self { lo, hi, frac }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct BilinearPlan {
    pub src_h: usize,
    pub src_w: usize,
    pub dst_h: usize,
    pub dst_w: usize,
    ys: AxisTaps,
    xs: AxisTaps,
}

impl BilinearPlan {
    pub fn new(src_h: usize, src_w: usize, dst_h: usize, dst_w: usize) -> Self {
        Self {
            src_h,
            src_w,
            dst_h,
            dst_w,
            ys: AxisTaps::corner_aligned(src_h, dst_h),
            xs: AxisTaps::corner_aligned(src_w, dst_w),
        }
    }

    /// Resamples `planes` consecutive planes.
    pub fn forward<T: Real>(&self, planes: usize, x: &[T]) -> Vec<T> {
        let (sh, sw, dh, dw) = (self.src_h, self.src_w, self.dst_h, self.dst_w);
        let mut out = vec![T::zero(); planes * dh * dw];
        for p in 0..planes {
            let src = &x[p * sh * sw..(p + 1) * sh * sw];
            let dst = &mut out[p * dh * dw..(p + 1) * dh * dw];
            for oy in 0..dh {
                let (y0, y1, fy) = (self.ys.lo[oy], self.ys.hi[oy], T::of(self.ys.frac[oy]));
                for ox in 0..dw {
                    let (x0, x1, fx) = (self.xs.lo[ox], self.xs.hi[ox], T::of(self.xs.frac[ox]));
                    let top = src[y0 * sw + x0] + (src[y0 * sw + x1] - src[y0 * sw + x0]) * fx;
                    let bot = src[y1 * sw + x0] + (src[y1 * sw + x1] - src[y1 * sw + x0]) * fx;
                    dst[oy * dw + ox] = top + (bot - top) * fy;
                }
            }
        }
        out
    }

    pub fn backward<T: Real>(&self, planes: usize, gout: &[T], dx: &mut [T]) {
        let (sh, sw, dh, dw) = (self.src_h, self.src_w, self.dst_h, self.dst_w);
        for p in 0..planes {
            let g = &gout[p * dh * dw..(p + 1) * dh * dw];
            let d = &mut dx[p * sh * sw..(p + 1) * sh * sw];
            for oy in 0..dh {
                let (y0, y1, fy) = (self.ys.lo[oy], self.ys.hi[oy], T::of(self.ys.frac[oy]));
                for ox in 0..dw {
                    let (x0, x1, fx) = (self.xs.lo[ox], self.xs.hi[ox], T::of(self.xs.frac[ox]));
                    let gv = g[oy * dw + ox];
                    let top = gv * (T::one() - fy);
                    let bot = gv * fy;
                    d[y0 * sw + x0] += top * (T::one() - fx);
                    d[y0 * sw + x1] += top * fx;
                    d[y1 * sw + x0] += bot * (T::one() - fx);
                    d[y1 * sw + x1] += bot * fx;
                }
            }
        }
    }
}

/// Bilinear resize of a single `h x w` plane.
pub fn bilinear_plane<T: Real>(src: &[T], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<T> {
    BilinearPlan::new(h, w, out_h, out_w).forward(1, src)
}
