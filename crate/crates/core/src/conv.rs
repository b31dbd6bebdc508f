//! Dilated "same"-padded 2-D convolution with optional tap masks.
//!
//! All inner products accumulate in `f64`; results are stored as `f32`.
//! Masked taps are skipped in the forward pass and receive zero gradient.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Boolean tap map for a `kh x kw` kernel; `true` means the tap is active.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KernelMask {
    kh: usize,
    kw: usize,
    active: Vec<bool>,
}

impl KernelMask {
    pub fn all_active(kh: usize, kw: usize) -> Self {
        KernelMask {
            kh,
            kw,
            active: vec![true; kh * kw],
        }
    }

    /// Every tap active except the center one.
    pub fn blind_spot(kh: usize, kw: usize) -> Result<Self> {
        if kh.is_multiple_of(2) || kw.is_multiple_of(2) {
            return Err(Error::Parameter(format!(
                "blind-spot mask needs an odd kernel, got {kh}x{kw}"
            )));
        }
        let mut mask = Self::all_active(kh, kw);
        mask.active[(kh / 2) * kw + kw / 2] = false;
        Ok(mask)
    }

    pub fn from_fn(kh: usize, kw: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut active = Vec::with_capacity(kh * kw);
        for i in 0..kh {
            for j in 0..kw {
                active.push(f(i, j));
            }
        }
        KernelMask { kh, kw, active }
    }

    pub fn size(&self) -> (usize, usize) {
        (self.kh, self.kw)
    }

    pub fn is_active(&self, i: usize, j: usize) -> bool {
        self.active[i * self.kw + j]
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }
}

/// Geometry shared by forward and backward passes.
#[derive(Clone, Copy, Debug)]
struct Geometry {
    n: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    dilation: usize,
}

/// One active tap: its kernel position and its spatial offset.
#[derive(Clone, Copy, Debug)]
struct Tap {
    i: usize,
    j: usize,
    dy: isize,
    dx: isize,
}

impl Geometry {
    fn taps(&self, mask: Option<&KernelMask>) -> Vec<Tap> {
        let (ry, rx) = ((self.kh / 2) as isize, (self.kw / 2) as isize);
        let d = self.dilation as isize;
        let mut taps = Vec::with_capacity(self.kh * self.kw);
        for i in 0..self.kh {
            for j in 0..self.kw {
                if mask.is_some_and(|m| !m.is_active(i, j)) {
                    continue;
                }
                taps.push(Tap {
                    i,
                    j,
                    dy: d * (i as isize - ry),
                    dx: d * (j as isize - rx),
                });
            }
        }
        taps
    }

    /// Output index range along one axis for which `pos + offset` stays inside `[0, len)`.
    fn valid(len: usize, offset: isize) -> (usize, usize) {
        let lo = (-offset).max(0) as usize;
        let hi = (len as isize - offset).clamp(0, len as isize) as usize;
        (lo.min(hi), hi)
    }

    fn kernel_index(&self, co: usize, ci: usize, i: usize, j: usize) -> usize {
        ((co * self.cin + ci) * self.kh + i) * self.kw + j
    }
}

fn check(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    dilation: usize,
    mask: Option<&KernelMask>,
) -> Result<Geometry> {
    let [n, cin, h, w] = input.shape().0;
    let [cout, kcin, kh, kw] = kernel.shape().0;
    if dilation < 1 {
        return Err(Error::Parameter(format!(
            "dilation must be at least 1, got {dilation}"
        )));
    }
    if kcin != cin {
        return Err(Error::Dimension(format!(
            "kernel {} expects {kcin} input channels, input {} has {cin}",
            kernel.shape(),
            input.shape()
        )));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::Dimension(format!(
            "kernel spatial size must be odd, got {kh}x{kw}"
        )));
    }
    if bias.shape() != Shape::new(1, cout, 1, 1) {
        return Err(Error::Dimension(format!(
            "bias shape {} does not match 1x{cout}x1x1",
            bias.shape()
        )));
    }
    if let Some(m) = mask {
        if m.size() != (kh, kw) {
            return Err(Error::Dimension(format!(
                "mask {:?} does not match kernel {kh}x{kw}",
                m.size()
            )));
        }
    }
    Ok(Geometry {
        n,
        cin,
        cout,
        h,
        w,
        kh,
        kw,
        dilation,
    })
}

/// `out[n,co,y,x] = bias[co] + sum over active taps of kernel * input` at the
/// dilated offset, reading zero outside the image.
pub fn conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    dilation: usize,
    mask: Option<&KernelMask>,
) -> Result<Tensor> {
    let g = check(input, kernel, bias, dilation, mask)?;
    let taps = g.taps(mask);
    let plane = g.h * g.w;
    let mut out = Tensor::zeros(Shape::new(g.n, g.cout, g.h, g.w));
    let kdata = kernel.data();
    let mut acc = vec![0f64; plane];

    for n in 0..g.n {
        for co in 0..g.cout {
            acc.fill(bias.data()[co] as f64);
            for ci in 0..g.cin {
                let src = input.plane(n, ci);
                for t in &taps {
                    let wv = kdata[g.kernel_index(co, ci, t.i, t.j)] as f64;
                    let (y0, y1) = Geometry::valid(g.h, t.dy);
                    let (x0, x1) = Geometry::valid(g.w, t.dx);
                    if x0 >= x1 {
                        continue;
                    }
                    for y in y0..y1 {
                        let sy = (y as isize + t.dy) as usize;
                        let sx0 = (x0 as isize + t.dx) as usize;
                        let row_src = &src[sy * g.w + sx0..sy * g.w + sx0 + (x1 - x0)];
                        let row_acc = &mut acc[y * g.w + x0..y * g.w + x1];
                        for (a, &v) in row_acc.iter_mut().zip(row_src) {
                            *a += wv * v as f64;
                        }
                    }
                }
            }
            for (o, &a) in out.plane_mut(n, co).iter_mut().zip(&acc) {
                *o = a as f32;
            }
        }
    }
    Ok(out)
}

/// Gradients of a convolution with respect to its three inputs.
pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub kernel: Option<Tensor>,
    pub bias: Option<Tensor>,
}

/// Which of the convolution inputs need gradients.
#[derive(Clone, Copy, Debug)]
pub struct ConvWants {
    pub input: bool,
    pub kernel: bool,
    pub bias: bool,
}

pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    dilation: usize,
    mask: Option<&KernelMask>,
    grad_out: &Tensor,
    wants: ConvWants,
) -> Result<ConvGrads> {
    let g = check(input, kernel, bias, dilation, mask)?;
    if grad_out.shape() != Shape::new(g.n, g.cout, g.h, g.w) {
        return Err(Error::Dimension(format!(
            "output gradient {} does not match convolution output",
            grad_out.shape()
        )));
    }
    let taps = g.taps(mask);
    let plane = g.h * g.w;
    let kdata = kernel.data();

    let grad_input = wants.input.then(|| {
        let mut gi = Tensor::zeros(input.shape());
        let mut acc = vec![0f64; plane];
        for n in 0..g.n {
            for ci in 0..g.cin {
                acc.fill(0.0);
                for co in 0..g.cout {
                    let go = grad_out.plane(n, co);
                    for t in &taps {
                        let wv = kdata[g.kernel_index(co, ci, t.i, t.j)] as f64;
                        let (y0, y1) = Geometry::valid(g.h, t.dy);
                        let (x0, x1) = Geometry::valid(g.w, t.dx);
                        if x0 >= x1 {
                            continue;
                        }
                        for y in y0..y1 {
                            let sy = (y as isize + t.dy) as usize;
                            let sx0 = (x0 as isize + t.dx) as usize;
                            let row_go = &go[y * g.w + x0..y * g.w + x1];
                            let row_acc = &mut acc[sy * g.w + sx0..sy * g.w + sx0 + (x1 - x0)];
                            for (a, &v) in row_acc.iter_mut().zip(row_go) {
                                *a += wv * v as f64;
                            }
                        }
                    }
                }
                for (o, &a) in gi.plane_mut(n, ci).iter_mut().zip(&acc) {
                    *o = a as f32;
                }
            }
        }
        gi
    });

    let grad_kernel = wants.kernel.then(|| {
        let mut gk = Tensor::zeros(kernel.shape());
        for co in 0..g.cout {
            for ci in 0..g.cin {
                for t in &taps {
                    let (y0, y1) = Geometry::valid(g.h, t.dy);
                    let (x0, x1) = Geometry::valid(g.w, t.dx);
                    let mut sum = 0f64;
                    if x0 < x1 {
                        for n in 0..g.n {
                            let go = grad_out.plane(n, co);
                            let src = input.plane(n, ci);
                            for y in y0..y1 {
                                let sy = (y as isize + t.dy) as usize;
                                let sx0 = (x0 as isize + t.dx) as usize;
                                let row_go = &go[y * g.w + x0..y * g.w + x1];
                                let row_src = &src[sy * g.w + sx0..sy * g.w + sx0 + (x1 - x0)];
                                for (&a, &b) in row_go.iter().zip(row_src) {
                                    sum += a as f64 * b as f64;
                                }
                            }
                        }
                    }
                    gk.data_mut()[g.kernel_index(co, ci, t.i, t.j)] = sum as f32;
                }
            }
        }
        gk
    });

    let grad_bias = wants.bias.then(|| {
        let mut gb = Tensor::zeros(bias.shape());
        for co in 0..g.cout {
            let mut sum = 0f64;
            for n in 0..g.n {
                sum += grad_out.plane(n, co).iter().map(|&v| v as f64).sum::<f64>();
            }
            gb.data_mut()[co] = sum as f32;
        }
        gb
    });

    Ok(ConvGrads {
        input: grad_input,
        kernel: grad_kernel,
        bias: grad_bias,
    })
}
