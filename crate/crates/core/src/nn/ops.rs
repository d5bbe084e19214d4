//! Kernels behind the tape operations.

use serde::{Deserialize, Serialize};

use super::gemm;
use crate::error::{Error, Result};

/// Kernel size, stride and zero padding per spatial axis `(d, h, w)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeom {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvGeom {
    /// Cubic (or square, when `kd = 1`) kernel with "same" padding.
    pub fn same(kd: usize, k: usize, stride: [usize; 3]) -> Self {
        ConvGeom {
            kernel: [kd, k, k],
            stride,
            pad: [kd / 2, k / 2, k / 2],
        }
    }

    pub fn pointwise() -> Self {
        ConvGeom {
            kernel: [1, 1, 1],
            stride: [1, 1, 1],
            pad: [0, 0, 0],
        }
    }

    pub fn output_size(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let padded = input[a] + 2 * self.pad[a];
            if padded < self.kernel[a] || self.stride[a] == 0 {
                return Err(Error::Shape(format!(
                    "conv kernel {:?} does not fit input {input:?}",
                    self.kernel
                )));
            }
            out[a] = (padded - self.kernel[a]) / self.stride[a] + 1;
        }
        Ok(out)
    }

    fn is_identity_window(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1] && self.pad == [0, 0, 0]
    }
}

/// Unfold one sample `[C, D, H, W]` into `[C*kd*kh*kw, Do*Ho*Wo]`.
pub(crate) fn im2col(x: &[f32], c: usize, inp: [usize; 3], g: &ConvGeom, out: [usize; 3], cols: &mut [f32]) {
    let [d, h, w] = inp;
    let [kd, kh, kw] = g.kernel;
    let [od, oh, ow] = out;
    let p = od * oh * ow;
    let mut row = 0;
    for ci in 0..c {
        let xc = &x[ci * d * h * w..(ci + 1) * d * h * w];
        for kz in 0..kd {
            for ky in 0..kh {
                for kx in 0..kw {
                    let dst = &mut cols[row * p..(row + 1) * p];
                    let mut q = 0;
                    for oz in 0..od {
                        let iz = (oz * g.stride[0] + kz) as isize - g.pad[0] as isize;
                        for oy in 0..oh {
                            let iy = (oy * g.stride[1] + ky) as isize - g.pad[1] as isize;
                            let row_ok = iz >= 0 && (iz as usize) < d && iy >= 0 && (iy as usize) < h;
                            if !row_ok {
                                dst[q..q + ow].fill(0.0);
                                q += ow;
                                continue;
                            }
                            let base = (iz as usize * h + iy as usize) * w;
                            for ox in 0..ow {
                                let ix = (ox * g.stride[2] + kx) as isize - g.pad[2] as isize;
                                dst[q] = if ix >= 0 && (ix as usize) < w {
                                    xc[base + ix as usize]
                                } else {
                                    0.0
                                };
                                q += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulate column gradients back onto the input gradient.
pub(crate) fn col2im(cols: &[f32], c: usize, inp: [usize; 3], g: &ConvGeom, out: [usize; 3], dx: &mut [f32]) {
    let [d, h, w] = inp;
    let [kd, kh, kw] = g.kernel;
    let [od, oh, ow] = out;
    let p = od * oh * ow;
    let mut row = 0;
    for ci in 0..c {
        let dxc = &mut dx[ci * d * h * w..(ci + 1) * d * h * w];
        for kz in 0..kd {
            for ky in 0..kh {
                for kx in 0..kw {
                    let src = &cols[row * p..(row + 1) * p];
                    let mut q = 0;
                    for oz in 0..od {
                        let iz = (oz * g.stride[0] + kz) as isize - g.pad[0] as isize;
                        for oy in 0..oh {
                            let iy = (oy * g.stride[1] + ky) as isize - g.pad[1] as isize;
                            if !(iz >= 0 && (iz as usize) < d && iy >= 0 && (iy as usize) < h) {
                                q += ow;
                                continue;
                            }
                            let base = (iz as usize * h + iy as usize) * w;
                            for ox in 0..ow {
                                let ix = (ox * g.stride[2] + kx) as isize - g.pad[2] as isize;
                                if ix >= 0 && (ix as usize) < w {
                                    dxc[base + ix as usize] += src[q];
                                }
                                q += 1;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Forward convolution over `n` samples. Returns the output and the unfolded
/// inputs (empty for pointwise kernels, which read the input directly).
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_forward(
    x: &[f32],
    n: usize,
    cin: usize,
    inp: [usize; 3],
    w: &[f32],
    b: &[f32],
    cout: usize,
    g: &ConvGeom,
) -> Result<(Vec<f32>, [usize; 3], Vec<f32>)> {
    let out = g.output_size(inp)?;
    let k = cin * g.kernel.iter().product::<usize>();
    let p: usize = out.iter().product();
    let sin: usize = cin * inp.iter().product::<usize>();
    let mut y = vec![0.0f32; n * cout * p];
    let direct = g.is_identity_window();
    let mut cols = if direct { Vec::new() } else { vec![0.0f32; n * k * p] };
    for s in 0..n {
        let ys = &mut y[s * cout * p..(s + 1) * cout * p];
        for (co, chunk) in ys.chunks_mut(p).enumerate() {
            chunk.fill(b[co]);
        }
        let xs = &x[s * sin..(s + 1) * sin];
        if direct {
            gemm(cout, k, p, w, false, xs, false, ys, 1.0);
        } else {
            let cs = &mut cols[s * k * p..(s + 1) * k * p];
            im2col(xs, cin, inp, g, out, cs);
            gemm(cout, k, p, w, false, cs, false, ys, 1.0);
        }
    }
    Ok((y, out, cols))
}

/// Gradients of a convolution: `(dx, dw, db)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward(
    dy: &[f32],
    x: &[f32],
    cols: &[f32],
    n: usize,
    cin: usize,
    inp: [usize; 3],
    w: &[f32],
    cout: usize,
    g: &ConvGeom,
    out: [usize; 3],
    need_dx: bool,
) -> (Option<Vec<f32>>, Vec<f32>, Vec<f32>) {
    let k = cin * g.kernel.iter().product::<usize>();
    let p: usize = out.iter().product();
    let sin: usize = cin * inp.iter().product::<usize>();
    let direct = cols.is_empty();
    let mut dw = vec![0.0f32; cout * k];
    let mut db = vec![0.0f32; cout];
    let mut dx = need_dx.then(|| vec![0.0f32; n * sin]);
    let mut dcols = if need_dx && !direct {
        vec![0.0f32; k * p]
    } else {
        Vec::new()
    };
    for s in 0..n {
        let dys = &dy[s * cout * p..(s + 1) * cout * p];
        for (co, chunk) in dys.chunks(p).enumerate() {
            db[co] += chunk.iter().sum::<f32>();
        }
        let src = if direct {
            &x[s * sin..(s + 1) * sin]
        } else {
            &cols[s * k * p..(s + 1) * k * p]
        };
        // dW += dY · colsᵀ
        gemm(cout, p, k, dys, false, src, true, &mut dw, 1.0);
        if let Some(dx) = dx.as_mut() {
            let dxs = &mut dx[s * sin..(s + 1) * sin];
            if direct {
                gemm(k, cout, p, w, true, dys, false, dxs, 1.0);
            } else {
                gemm(k, cout, p, w, true, dys, false, &mut dcols, 0.0);
                col2im(&dcols, cin, inp, g, out, dxs);
            }
        }
    }
    (dx, dw, db)
}

pub(crate) fn upsample_nearest(x: &[f32], nc: usize, inp: [usize; 3], f: [usize; 3]) -> Vec<f32> {
    let [d, h, w] = inp;
    let (od, oh, ow) = (d * f[0], h * f[1], w * f[2]);
    let mut y = vec![0.0f32; nc * od * oh * ow];
    for c in 0..nc {
        let xc = &x[c * d * h * w..];
        let yc = &mut y[c * od * oh * ow..(c + 1) * od * oh * ow];
        for z in 0..od {
            for yy in 0..oh {
                let src = ((z / f[0]) * h + yy / f[1]) * w;
                let dst = (z * oh + yy) * ow;
                for xx in 0..ow {
                    yc[dst + xx] = xc[src + xx / f[2]];
                }
            }
        }
    }
    y
}

pub(crate) fn upsample_nearest_backward(dy: &[f32], nc: usize, inp: [usize; 3], f: [usize; 3]) -> Vec<f32> {
    let [d, h, w] = inp;
    let (od, oh, ow) = (d * f[0], h * f[1], w * f[2]);
    let mut dx = vec![0.0f32; nc * d * h * w];
    for c in 0..nc {
        let dyc = &dy[c * od * oh * ow..(c + 1) * od * oh * ow];
        let dxc = &mut dx[c * d * h * w..(c + 1) * d * h * w];
        for z in 0..od {
            for yy in 0..oh {
                let dst = ((z / f[0]) * h + yy / f[1]) * w;
                let src = (z * oh + yy) * ow;
                for xx in 0..ow {
                    dxc[dst + xx / f[2]] += dyc[src + xx];
                }
            }
        }
    }
    dx
}

/// Linear interpolation taps along one axis for continuous index `u`.
///
/// Samples farther than one cell outside the map contribute nothing.
fn axis_taps(u: f64, size: usize) -> Option<[(usize, f64); 2]> {
    if u < -1.0 || u > size as f64 {
        return None;
    }
    let u = u.max(0.0);
    let lo = u.floor() as usize;
    if lo + 1 >= size {
        return Some([(size - 1, 1.0), (size - 1, 0.0)]);
    }
    let frac = u - lo as f64;
    Some([(lo, 1.0 - frac), (lo + 1, frac)])
}

/// Sampling taps for RoIAlign on one feature map: for every output cell a list
/// of `(flat spatial index, weight)`, stored CSR-style.
#[derive(Debug, Clone, Default)]
pub(crate) struct RoiTaps {
    pub offsets: Vec<usize>,
    pub entries: Vec<(u32, f32)>,
}

/// Build taps for a box given in feature-map coordinates `[min, max)` per axis
/// `(x, y, z)`. Pixel centers sit at integer + 0.5 in these coordinates.
pub(crate) fn roi_taps(
    min: [f64; 3],
    max: [f64; 3],
    map: [usize; 3],
    pool: [usize; 3],
    sampling: usize,
) -> Result<RoiTaps> {
    let [md, mh, mw] = map;
    let [pd, ph, pw] = pool;
    let planar = md == 1 && pd == 1;
    let axes = if planar { 2 } else { 3 };
    for a in 0..axes {
        if max[a] - min[a] <= 0.0 || !(max[a] - min[a]).is_finite() {
            return Err(Error::InvalidArgument(format!(
                "degenerate RoI extent on axis {a}: [{}, {})",
                min[a], max[a]
            )));
        }
    }
    let s = sampling.max(1);
    let sz = if planar { 1 } else { s };
    let norm = 1.0 / (s * s * sz) as f64;
    let bw = (max[0] - min[0]) / pw as f64;
    let bh = (max[1] - min[1]) / ph as f64;
    let bd = (max[2] - min[2]) / pd as f64;
    let mut taps = RoiTaps {
        offsets: Vec::with_capacity(pd * ph * pw + 1),
        entries: Vec::new(),
    };
    taps.offsets.push(0);
    let mut acc: Vec<(u32, f64)> = Vec::new();
    for cz in 0..pd {
        for cy in 0..ph {
            for cx in 0..pw {
                acc.clear();
                for iz in 0..sz {
                    let ztaps = if planar {
                        Some([(0usize, 1.0), (0usize, 0.0)])
                    } else {
                        let v = min[2] + bd * (cz as f64 + (iz as f64 + 0.5) / sz as f64) - 0.5;
                        axis_taps(v, md)
                    };
                    let Some(zt) = ztaps else { continue };
                    for iy in 0..s {
                        let v = min[1] + bh * (cy as f64 + (iy as f64 + 0.5) / s as f64) - 0.5;
                        let Some(yt) = axis_taps(v, mh) else { continue };
                        for ix in 0..s {
                            let v = min[0] + bw * (cx as f64 + (ix as f64 + 0.5) / s as f64) - 0.5;
                            let Some(xt) = axis_taps(v, mw) else { continue };
                            for &(zi, wz) in &zt {
                                for &(yi, wy) in &yt {
                                    for &(xi, wx) in &xt {
                                        let wgt = wz * wy * wx * norm;
                                        if wgt != 0.0 {
                                            acc.push((((zi * mh + yi) * mw + xi) as u32, wgt));
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                acc.sort_by_key(|e| e.0);
                let mut last: Option<u32> = None;
                for &(i, wgt) in &acc {
                    if last == Some(i) {
                        taps.entries.last_mut().unwrap().1 += wgt as f32;
                    } else {
                        taps.entries.push((i, wgt as f32));
                        last = Some(i);
                    }
                }
                taps.offsets.push(taps.entries.len());
            }
        }
    }
    Ok(taps)
}
