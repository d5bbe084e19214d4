use super::ops::{self, ConvGeom, RoiTaps};
use super::params::{ParamId, ParamStore};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(ParamId),
    Conv {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
        out: [usize; 3],
        cols: Vec<f32>,
    },
    Relu(Var),
    Add(Var, Var),
    Upsample {
        x: Var,
        factor: [usize; 3],
    },
    RoiAlign {
        feats: Vec<Var>,
        plans: Vec<(usize, RoiTaps)>,
    },
    Flatten(Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// One RoI to pool: which feature level, and the box in that level's
/// feature coordinates (`min`/`max` per axis in `(x, y, z)` order).
#[derive(Debug, Clone, Copy)]
pub struct RoiSpec {
    pub level: usize,
    pub min: [f64; 3],
    pub max: [f64; 3],
}

/// Records a forward computation so it can be differentiated.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    track_inputs: bool,
}

/// Gradients for every node of a tape after [`Tape::backward`].
pub struct Grads {
    grads: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn of(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let t = Tensor::new(store.shape(id).to_vec(), store.value(id).to_vec());
        self.push(t, Op::Param(id))
    }

    pub fn conv(&mut self, x: Var, w: Var, b: Var, geom: ConvGeom) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if xs.len() != 5 || ws.len() != 5 || xs[1] != ws[1] || ws[2..] != geom.kernel[..] {
            return Err(Error::Shape(format!(
                "conv input {xs:?} incompatible with weight {ws:?} / kernel {:?}",
                geom.kernel
            )));
        }
        let (n, cin, cout) = (xs[0], xs[1], ws[0]);
        let inp = [xs[2], xs[3], xs[4]];
        let (y, out, cols) = ops::conv_forward(
            self.value(x).data(),
            n,
            cin,
            inp,
            self.value(w).data(),
            self.value(b).data(),
            cout,
            &geom,
        )?;
        let t = Tensor::new(vec![n, cout, out[0], out[1], out[2]], y);
        Ok(self.push(
            t,
            Op::Conv {
                x,
                w,
                b,
                geom,
                out,
                cols,
            },
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let data = v.data().iter().map(|&a| a.max(0.0)).collect();
        let t = Tensor::new(v.shape().to_vec(), data);
        self.push(t, Op::Relu(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Shape(format!(
                "cannot add {:?} and {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(va.shape().to_vec(), data);
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: [usize; 3]) -> Var {
        let v = self.value(x);
        let s = v.shape();
        let inp = [s[2], s[3], s[4]];
        let y = ops::upsample_nearest(v.data(), s[0] * s[1], inp, factor);
        let shape = vec![s[0], s[1], s[2] * factor[0], s[3] * factor[1], s[4] * factor[2]];
        self.push(Tensor::new(shape, y), Op::Upsample { x, factor })
    }

    /// Pool every RoI onto a `[pd, ph, pw]` grid. `feats` are single-sample
    /// maps `[1, C, D, H, W]` sharing `C`; output is `[R, C, pd, ph, pw]`.
    pub fn roi_align(&mut self, feats: &[Var], rois: &[RoiSpec], pool: [usize; 3], sampling: usize) -> Result<Var> {
        let c = self.value(feats[0]).shape()[1];
        let cells: usize = pool.iter().product();
        let mut plans = Vec::with_capacity(rois.len());
        for roi in rois {
            let f = self.value(
                *feats
                    .get(roi.level)
                    .ok_or_else(|| Error::InvalidArgument(format!("no feature level {}", roi.level)))?,
            );
            if f.shape()[0] != 1 || f.shape()[1] != c {
                return Err(Error::Shape(format!("feature map {:?} for RoIAlign", f.shape())));
            }
            let taps = ops::roi_taps(roi.min, roi.max, f.spatial(), pool, sampling)?;
            plans.push((roi.level, taps));
        }
        let mut y = vec![0.0f32; rois.len() * c * cells];
        for (r, (level, taps)) in plans.iter().enumerate() {
            let f = self.value(feats[*level]);
            let s: usize = f.spatial().iter().product();
            let fd = f.data();
            for ch in 0..c {
                let fc = &fd[ch * s..(ch + 1) * s];
                let yo = &mut y[(r * c + ch) * cells..(r * c + ch + 1) * cells];
                for (cell, out) in yo.iter_mut().enumerate() {
                    let e = &taps.entries[taps.offsets[cell]..taps.offsets[cell + 1]];
                    *out = e.iter().map(|&(i, w)| fc[i as usize] * w).sum();
                }
            }
        }
        let t = Tensor::new(vec![rois.len(), c, pool[0], pool[1], pool[2]], y);
        Ok(self.push(
            t,
            Op::RoiAlign {
                feats: feats.to_vec(),
                plans,
            },
        ))
    }

    /// Reshape `[N, ...]` to `[N, prod(...)]`.
    pub fn flatten(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let n = v.shape()[0];
        let rest = v.len() / n.max(1);
        let t = Tensor::new(vec![n, rest], v.data().to_vec());
        self.push(t, Op::Flatten(x))
    }

    /// `y = x·wᵀ + b` with `x: [N, in]`, `w: [out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (vx, vw) = (self.value(x), self.value(w));
        if vx.shape().len() != 2 || vw.shape().len() != 2 || vx.shape()[1] != vw.shape()[1] {
            return Err(Error::Shape(format!(
                "linear input {:?} incompatible with weight {:?}",
                vx.shape(),
                vw.shape()
            )));
        }
        let (n, k, m) = (vx.shape()[0], vx.shape()[1], vw.shape()[0]);
        let bias = self.value(b).data();
        let mut y = vec![0.0f32; n * m];
        for row in y.chunks_mut(m) {
            row.copy_from_slice(bias);
        }
        super::gemm(n, k, m, vx.data(), false, vw.data(), true, &mut y, 1.0);
        Ok(self.push(Tensor::new(vec![n, m], y), Op::Linear { x, w, b }))
    }

    /// Reverse pass from the given output gradients.
    pub fn backward(&self, seeds: Vec<(Var, Tensor)>) -> Grads {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            accumulate(&mut grads, v, g);
        }
        for idx in (0..self.nodes.len()).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf | Op::Param(_)) {
                continue;
            }
            // Intermediate gradients are dropped once propagated.
            let Some(gy) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf | Op::Param(_) => unreachable!(),
                Op::Conv {
                    x,
                    w,
                    b,
                    geom,
                    out,
                    cols,
                } => {
                    let xv = self.value(*x);
                    let wv = self.value(*w);
                    let xs = xv.shape();
                    let need_dx = self.requires_grad(*x);
                    let (dx, dw, db) = ops::conv_backward(
                        gy.data(),
                        xv.data(),
                        cols,
                        xs[0],
                        xs[1],
                        [xs[2], xs[3], xs[4]],
                        wv.data(),
                        wv.shape()[0],
                        geom,
                        *out,
                        need_dx,
                    );
                    if let Some(dx) = dx {
                        accumulate(&mut grads, *x, Tensor::new(xs.to_vec(), dx));
                    }
                    accumulate(&mut grads, *w, Tensor::new(wv.shape().to_vec(), dw));
                    accumulate(&mut grads, *b, Tensor::new(vec![db.len()], db));
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    let d = gy
                        .data()
                        .iter()
                        .zip(xv.data())
                        .map(|(&g, &a)| if a > 0.0 { g } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *x, Tensor::new(xv.shape().to_vec(), d));
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, gy.clone());
                    accumulate(&mut grads, *a, gy);
                }
                Op::Upsample { x, factor } => {
                    let xv = self.value(*x);
                    let s = xv.shape();
                    let d = ops::upsample_nearest_backward(gy.data(), s[0] * s[1], [s[2], s[3], s[4]], *factor);
                    accumulate(&mut grads, *x, Tensor::new(s.to_vec(), d));
                }
                Op::RoiAlign { feats, plans } => {
                    let c = self.value(feats[0]).shape()[1];
                    let cells = node.value.len() / (plans.len().max(1) * c);
                    let mut dfeats: Vec<Option<Vec<f32>>> = vec![None; feats.len()];
                    for (r, (level, taps)) in plans.iter().enumerate() {
                        let f = self.value(feats[*level]);
                        let s: usize = f.spatial().iter().product();
                        let df = dfeats[*level].get_or_insert_with(|| vec![0.0; f.len()]);
                        for ch in 0..c {
                            let dfc = &mut df[ch * s..(ch + 1) * s];
                            let go = &gy.data()[(r * c + ch) * cells..(r * c + ch + 1) * cells];
                            for (cell, &g) in go.iter().enumerate() {
                                if g == 0.0 {
                                    continue;
                                }
                                for &(i, w) in &taps.entries[taps.offsets[cell]..taps.offsets[cell + 1]] {
                                    dfc[i as usize] += g * w;
                                }
                            }
                        }
                    }
                    for (level, df) in dfeats.into_iter().enumerate() {
                        if let Some(df) = df {
                            let shape = self.value(feats[level]).shape().to_vec();
                            accumulate(&mut grads, feats[level], Tensor::new(shape, df));
                        }
                    }
                }
                Op::Flatten(x) => {
                    let shape = self.value(*x).shape().to_vec();
                    accumulate(&mut grads, *x, Tensor::new(shape, gy.into_data()));
                }
                Op::Linear { x, w, b } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let (n, k, m) = (xv.shape()[0], xv.shape()[1], wv.shape()[0]);
                    let mut db = vec![0.0f32; m];
                    for row in gy.data().chunks(m) {
                        for (d, g) in db.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                    let mut dw = vec![0.0f32; m * k];
                    super::gemm(m, n, k, gy.data(), true, xv.data(), false, &mut dw, 0.0);
                    if self.requires_grad(*x) {
                        let mut dx = vec![0.0f32; n * k];
                        super::gemm(n, m, k, gy.data(), false, wv.data(), false, &mut dx, 0.0);
                        accumulate(&mut grads, *x, Tensor::new(vec![n, k], dx));
                    }
                    accumulate(&mut grads, *w, Tensor::new(vec![m, k], dw));
                    accumulate(&mut grads, *b, Tensor::new(vec![m], db));
                }
            }
        }
        Grads { grads }
    }

    /// Request gradients for leaves recorded with [`Tape::input`].
    pub fn track_input_grads(&mut self, on: bool) {
        self.track_inputs = on;
    }

    fn requires_grad(&self, v: Var) -> bool {
        !matches!(self.nodes[v.0].op, Op::Leaf) || self.track_inputs
    }

    /// Add every parameter gradient into the store.
    pub fn accumulate_param_grads(&self, grads: &Grads, store: &mut ParamStore) {
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads.grads[i]) {
                store.add_grad(*id, g.data());
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
