//! Same-padded 2-D convolution over `[N, C, H, W]` data, lowered to
//! im2col + GEMM, with optional causal (raster-order) weight masks.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{arg_err, shape_err, Result};
use crate::real::{gemm, Layout, Real};
use crate::tensor::Tensor;

/// Causal mask flavour. `A` hides the current subchannel and everything
/// after it; `B` additionally lets a subchannel see itself.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskKind {
    A,
    B,
}

/// Convolution hyperparameters plus an optional multiplicative weight mask.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvSpec<T> {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    mask: Option<(MaskKind, Tensor<T>)>,
}

impl<T: Real> ConvSpec<T> {
    pub fn new(
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        in_channels: usize,
        out_channels: usize,
    ) -> Result<Self> {
        if stride == 0 {
            return Err(arg_err("conv_spec", "stride must be >= 1"));
        }
        if kernel_h == 0 || kernel_w == 0 || in_channels == 0 || out_channels == 0 {
            return Err(arg_err("conv_spec", "kernel extents and channel counts must be > 0"));
        }
        Ok(Self { kernel_h, kernel_w, stride, in_channels, out_channels, mask: None })
    }

    /// Square kernel shorthand.
    pub fn square(kernel: usize, stride: usize, cin: usize, cout: usize) -> Result<Self> {
        Self::new(kernel, kernel, stride, cin, cout)
    }

    /// Adds a raster-order mask where every channel belongs to one group.
    pub fn masked(self, kind: MaskKind) -> Result<Self> {
        let ig = vec![0; self.in_channels];
        let og = vec![0; self.out_channels];
        self.masked_grouped(kind, &ig, &og)
    }

    /// Adds a raster-order mask with subpixel groups: at the centre tap an
    /// output channel in group `g` sees input groups `< g` (type A) or
    /// `<= g` (type B). Taps at raster-later positions are always hidden.
    pub fn masked_grouped(
        mut self,
        kind: MaskKind,
        in_groups: &[usize],
        out_groups: &[usize],
    ) -> Result<Self> {
        if self.kernel_h % 2 == 0 || self.kernel_w % 2 == 0 {
            return Err(arg_err("conv_spec", "masked convolutions need odd kernel extents"));
        }
        if self.stride != 1 {
            return Err(arg_err("conv_spec", "masked convolutions must have stride 1"));
        }
        if in_groups.len() != self.in_channels || out_groups.len() != self.out_channels {
            return Err(shape_err("conv_spec", "group assignment length != channel count"));
        }
        let (kh, kw) = (self.kernel_h, self.kernel_w);
        let (cy, cx) = (kh / 2, kw / 2);
        let mut m = Tensor::zeros([self.out_channels, self.in_channels, kh, kw]);
        let d = m.data_mut();
        for (o, &og) in out_groups.iter().enumerate() {
            for (i, &ig) in in_groups.iter().enumerate() {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let visible = if ky < cy || (ky == cy && kx < cx) {
                            true
                        } else if ky == cy && kx == cx {
                            match kind {
                                MaskKind::A => ig < og,
                                MaskKind::B => ig <= og,
                            }
                        } else {
                            false
                        };
                        if visible {
                            d[((o * self.in_channels + i) * kh + ky) * kw + kx] = T::one();
                        }
                    }
                }
            }
        }
        self.mask = Some((kind, m));
        Ok(self)
    }

    pub fn mask_kind(&self) -> Option<MaskKind> {
        self.mask.as_ref().map(|(k, _)| *k)
    }

    pub fn mask(&self) -> Option<&Tensor<T>> {
        self.mask.as_ref().map(|(_, m)| m)
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel_h, self.kernel_w]
    }

    pub(crate) fn geometry(&self, input: [usize; 4]) -> Result<ConvGeom> {
        let [n, c, h, w] = input;
        if c != self.in_channels {
            return Err(shape_err(
                "conv2d",
                format!("input has {} channels, spec expects {}", c, self.in_channels),
            ));
        }
        if h == 0 || w == 0 {
            return Err(shape_err("conv2d", "empty spatial extent"));
        }
        let s = self.stride;
        let ho = h.div_ceil(s);
        let wo = w.div_ceil(s);
        let pad_h = ((ho - 1) * s + self.kernel_h).saturating_sub(h);
        let pad_w = ((wo - 1) * s + self.kernel_w).saturating_sub(w);
        Ok(ConvGeom {
            n,
            cin: c,
            h,
            w,
            cout: self.out_channels,
            kh: self.kernel_h,
            kw: self.kernel_w,
            stride: s,
            ho,
            wo,
            pad_t: pad_h / 2,
            pad_l: pad_w / 2,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub ho: usize,
    pub wo: usize,
    pub pad_t: usize,
    pub pad_l: usize,
}

impl ConvGeom {
    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }
    fn p(&self) -> usize {
        self.ho * self.wo
    }
    /// 1x1 stride-1 convolutions use the input directly as the column matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1
    }
    pub fn out_shape(&self) -> [usize; 4] {
        [self.n, self.cout, self.ho, self.wo]
    }

    /// Valid output column range `[lo, hi)` for kernel column `kx`.
    #[inline]
    fn ox_range(&self, kx: usize) -> (usize, usize) {
        axis_range(self.wo, self.w, self.stride, kx, self.pad_l)
    }

    #[inline]
    fn oy_range(&self, ky: usize) -> (usize, usize) {
        axis_range(self.ho, self.h, self.stride, ky, self.pad_t)
    }
}

/// Output indices `o` with `0 <= o*s + k - pad < len`.
#[inline]
fn axis_range(out_len: usize, len: usize, s: usize, k: usize, pad: usize) -> (usize, usize) {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(s).min(out_len) };
    // o*s + k - pad <= len - 1  =>  o <= (len - 1 + pad - k) / s
    let hi = if len + pad > k { ((len - 1 + pad - k) / s + 1).min(out_len) } else { 0 };
    (lo, hi.max(lo))
}

fn im2col<T: Real>(g: &ConvGeom, x: &[T], col: &mut [T]) {
    let p = g.p();
    col.iter_mut().for_each(|v| *v = T::zero());
    for ic in 0..g.cin {
        let plane = &x[ic * g.h * g.w..(ic + 1) * g.h * g.w];
        for ky in 0..g.kh {
            let (oy0, oy1) = g.oy_range(ky);
            for kx in 0..g.kw {
                let (ox0, ox1) = g.ox_range(kx);
                if ox0 == ox1 {
                    continue;
                }
                let row = &mut col[((ic * g.kh + ky) * g.kw + kx) * p..][..p];
                for oy in oy0..oy1 {
                    let iy = oy * g.stride + ky - g.pad_t;
                    let src = &plane[iy * g.w..(iy + 1) * g.w];
                    let dst = &mut row[oy * g.wo..(oy + 1) * g.wo];
                    if g.stride == 1 {
                        let ix0 = ox0 + kx - g.pad_l;
                        dst[ox0..ox1].copy_from_slice(&src[ix0..ix0 + (ox1 - ox0)]);
                    } else {
                        for ox in ox0..ox1 {
                            dst[ox] = src[ox * g.stride + kx - g.pad_l];
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(g: &ConvGeom, col: &[T], dx: &mut [T]) {
    let p = g.p();
    for ic in 0..g.cin {
        let plane = &mut dx[ic * g.h * g.w..(ic + 1) * g.h * g.w];
        for ky in 0..g.kh {
            let (oy0, oy1) = g.oy_range(ky);
            for kx in 0..g.kw {
                let (ox0, ox1) = g.ox_range(kx);
                if ox0 == ox1 {
                    continue;
                }
                let row = &col[((ic * g.kh + ky) * g.kw + kx) * p..][..p];
                for oy in oy0..oy1 {
                    let iy = oy * g.stride + ky - g.pad_t;
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    let src = &row[oy * g.wo..(oy + 1) * g.wo];
                    for ox in ox0..ox1 {
                        dst[ox * g.stride + kx - g.pad_l] += src[ox];
                    }
                }
            }
        }
    }
}

/// Forward pass. Returns the output and the cached column matrices
/// (empty for pointwise convolutions).
pub(crate) fn forward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    weight: &[T],
    bias: Option<&[T]>,
) -> (Vec<T>, Vec<T>) {
    let (k, p) = (g.k(), g.p());
    let mut out = vec![T::zero(); g.n * g.cout * p];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); g.n * k * p] };
    for b in 0..g.n {
        let xb = &x[b * g.cin * g.h * g.w..(b + 1) * g.cin * g.h * g.w];
        let ob = &mut out[b * g.cout * p..(b + 1) * g.cout * p];
        if let Some(bias) = bias {
            for (oc, row) in ob.chunks_mut(p).enumerate() {
                row.iter_mut().for_each(|v| *v = bias[oc]);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        if g.is_pointwise() {
            gemm(g.cout, k, p, weight, Layout::Normal, xb, Layout::Normal, beta, ob);
        } else {
            let cb = &mut cols[b * k * p..(b + 1) * k * p];
            im2col(g, xb, cb);
            gemm(g.cout, k, p, weight, Layout::Normal, cb, Layout::Normal, beta, ob);
        }
    }
    (out, cols)
}

/// Accumulates input, weight and bias gradients.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    cols: &[T],
    weight: &[T],
    gout: &[T],
    dx: Option<&mut [T]>,
    dw: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let (k, p) = (g.k(), g.p());
    let xlen = g.cin * g.h * g.w;
    if let Some(dw) = dw {
        for b in 0..g.n {
            let gb = &gout[b * g.cout * p..(b + 1) * g.cout * p];
            let cb = if g.is_pointwise() {
                &x[b * xlen..(b + 1) * xlen]
            } else {
                &cols[b * k * p..(b + 1) * k * p]
            };
            gemm(g.cout, p, k, gb, Layout::Normal, cb, Layout::Transposed, T::one(), dw);
        }
    }
    if let Some(db) = db {
        for b in 0..g.n {
            for oc in 0..g.cout {
                let row = &gout[(b * g.cout + oc) * p..][..p];
                db[oc] += row.iter().copied().sum::<T>();
            }
        }
    }
    if let Some(dx) = dx {
        let mut gcol = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * p] };
        for b in 0..g.n {
            let gb = &gout[b * g.cout * p..(b + 1) * g.cout * p];
            let dxb = &mut dx[b * xlen..(b + 1) * xlen];
            if g.is_pointwise() {
                gemm(k, g.cout, p, weight, Layout::Transposed, gb, Layout::Normal, T::one(), dxb);
            } else {
                gemm(k, g.cout, p, weight, Layout::Transposed, gb, Layout::Normal, T::zero(), &mut gcol);
                col2im(g, &gcol, dxb);
            }
        }
    }
}
