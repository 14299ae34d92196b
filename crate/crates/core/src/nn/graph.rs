//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] borrows a [`ParamSet`] read-only and records every operation
//! applied to it. Calling [`Graph::backward`] on a scalar node returns the
//! gradient of that scalar with respect to every parameter that was touched.
//! Graphs are cheap and single-use; build one per sample or per batch.

use super::{Gradients, ParamId, ParamSet, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Convolution geometry. Rows are zero padded, columns wrap around
/// (the azimuth axis of a range image is periodic).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
}

impl ConvGeom {
    pub fn conv_out(&self, h: usize, w: usize) -> (usize, usize) {
        let ho = (h + 2 * self.ph - self.kh) / self.sh + 1;
        let wo = (w + 2 * self.pw - self.kw) / self.sw + 1;
        (ho, wo)
    }

    pub fn convt_out(&self, h: usize, w: usize) -> (usize, usize) {
        ((h - 1) * self.sh + self.kh - 2 * self.ph, w * self.sw)
    }
}

enum Op {
    Input,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Tensor),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    AddConst(Var),
    Sum(Var),
    Mean(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Sigmoid(Var),
    Tanh(Var),
    Elu(Var),
    Clamp(Var, f64, f64),
    Dot(Var, Var),
    Linear { w: Var, x: Var, b: Var },
    Conv2d { x: Var, w: Var, b: Var, g: ConvGeom },
    ConvT2d { x: Var, w: Var, b: Var, g: ConvGeom },
    Reshape(Var),
    Concat(Vec<Var>),
    ChannelMean(Var),
    ChannelScale { x: Var, g: Var },
}

struct Node {
    value: Option<Tensor>,
    op: Op,
}

pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

fn col_table(w_in: usize, w_out: usize, kw: usize, sw: usize, pw: usize) -> Vec<Vec<usize>> {
    (0..kw)
        .map(|kx| {
            (0..w_out)
                .map(|ox| (ox * sw + kx + w_in * kw - pw) % w_in)
                .collect()
        })
        .collect()
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self { params, nodes: Vec::new(), param_vars: vec![None; params.len()] }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value: Some(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (Op::Param(id), _) => self.params.get(*id),
            (_, Some(t)) => t,
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.value(v).shape().to_vec()
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        self.nodes.push(Node { value: None, op: Op::Param(id) });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.index()] = Some(v);
        v
    }

    fn zip(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "elementwise shape mismatch");
        Tensor::from_vec(
            ta.shape(),
            ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect(),
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let t = self.zip(a, b, |x, y| x + y);
        self.push(t, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let t = self.zip(a, b, |x, y| x - y);
        self.push(t, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let t = self.zip(a, b, |x, y| x * y);
        self.push(t, Op::Mul(a, b))
    }

    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Var {
        let ta = self.value(a);
        assert_eq!(ta.shape(), c.shape(), "mul_const shape mismatch");
        let t = Tensor::from_vec(
            ta.shape(),
            ta.data().iter().zip(c.data()).map(|(x, y)| x * y).collect(),
        );
        self.push(t, Op::MulConst(a, c))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a).map(|x| x * s);
        self.push(t, Op::Scale(a, s))
    }

    /// Multiplies every element of `a` by the scalar node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        let sv = self.value(s).item();
        let t = self.value(a).map(|x| x * sv);
        self.push(t, Op::ScaleBy(a, s))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let t = self.value(a).map(|x| x + c);
        self.push(t, Op::AddConst(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::exp);
        self.push(t, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::ln);
        self.push(t, Op::Log(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::sqrt);
        self.push(t, Op::Sqrt(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(sigmoid);
        self.push(t, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::tanh);
        self.push(t, Op::Tanh(a))
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(elu);
        self.push(t, Op::Elu(a))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let t = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(t, Op::Clamp(a, lo, hi))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.len(), tb.len(), "dot length mismatch");
        let s = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).sum();
        self.push(Tensor::scalar(s), Op::Dot(a, b))
    }

    /// `w · x + b` with `w` of shape `[out, in]`.
    pub fn linear(&mut self, w: Var, x: Var, b: Var) -> Var {
        let (tw, tx, tb) = (self.value(w), self.value(x), self.value(b));
        let (out, inp) = (tw.shape()[0], tw.shape()[1]);
        assert_eq!(tx.len(), inp, "linear input width mismatch");
        assert_eq!(tb.len(), out);
        let (wd, xd) = (tw.data(), tx.data());
        let y: Vec<f64> = (0..out)
            .map(|o| {
                let row = &wd[o * inp..(o + 1) * inp];
                tb.data()[o] + row.iter().zip(xd).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        self.push(Tensor::from_vec(&[out], y), Op::Linear { w, x, b })
    }

    /// 2-D convolution, `x: [C, H, W]`, `w: [O, C, kh, kw]`, `b: [O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, g: ConvGeom) -> Var {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let (c, h, wd) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        let o_ch = tw.shape()[0];
        assert_eq!(tw.shape(), &[o_ch, c, g.kh, g.kw], "conv2d weight shape");
        let (ho, wo) = g.conv_out(h, wd);
        let cols = col_table(wd, wo, g.kw, g.sw, g.pw);
        let mut out = vec![0.0; o_ch * ho * wo];
        let (xd, wdat) = (tx.data(), tw.data());
        for o in 0..o_ch {
            let ob = &mut out[o * ho * wo..(o + 1) * ho * wo];
            ob.iter_mut().for_each(|v| *v = tb.data()[o]);
            for ci in 0..c {
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let wv = wdat[((o * c + ci) * g.kh + ky) * g.kw + kx];
                        let ct = &cols[kx];
                        for oy in 0..ho {
                            let iy = (oy * g.sh + ky) as isize - g.ph as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let xrow = &xd[(ci * h + iy as usize) * wd..(ci * h + iy as usize + 1) * wd];
                            let orow = &mut ob[oy * wo..(oy + 1) * wo];
                            for (ov, &ix) in orow.iter_mut().zip(ct) {
                                *ov += wv * xrow[ix];
                            }
                        }
                    }
                }
            }
        }
        self.push(Tensor::from_vec(&[o_ch, ho, wo], out), Op::Conv2d { x, w, b, g })
    }

    /// Transposed convolution, `x: [C, H, W]`, `w: [C, O, kh, kw]`, `b: [O]`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Var, g: ConvGeom) -> Var {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let (c, h, wd) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        let o_ch = tw.shape()[1];
        assert_eq!(tw.shape(), &[c, o_ch, g.kh, g.kw], "conv_transpose2d weight shape");
        let (ho, wo) = g.convt_out(h, wd);
        // output column for (kx, ix)
        let cols: Vec<Vec<usize>> = (0..g.kw)
            .map(|kx| (0..wd).map(|ix| (ix * g.sw + kx + wo * g.kw - g.pw) % wo).collect())
            .collect();
        let mut out = vec![0.0; o_ch * ho * wo];
        for o in 0..o_ch {
            out[o * ho * wo..(o + 1) * ho * wo].iter_mut().for_each(|v| *v = tb.data()[o]);
        }
        let (xd, wdat) = (tx.data(), tw.data());
        for ci in 0..c {
            for o in 0..o_ch {
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let wv = wdat[((ci * o_ch + o) * g.kh + ky) * g.kw + kx];
                        let ct = &cols[kx];
                        for iy in 0..h {
                            let oy = (iy * g.sh + ky) as isize - g.ph as isize;
                            if oy < 0 || oy >= ho as isize {
                                continue;
                            }
                            let xrow = &xd[(ci * h + iy) * wd..(ci * h + iy + 1) * wd];
                            let obase = (o * ho + oy as usize) * wo;
                            for (&xv, &ox) in xrow.iter().zip(ct) {
                                out[obase + ox] += wv * xv;
                            }
                        }
                    }
                }
            }
        }
        self.push(Tensor::from_vec(&[o_ch, ho, wo], out), Op::ConvT2d { x, w, b, g })
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let t = self.value(a).clone().reshaped(shape);
        self.push(t, Op::Reshape(a))
    }

    /// Flattened concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let n = data.len();
        self.push(Tensor::from_vec(&[n], data), Op::Concat(parts.to_vec()))
    }

    /// Adaptive average pooling to 1x1: `[C, H, W] -> [C]`.
    pub fn channel_mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let c = t.shape()[0];
        let hw = t.len() / c;
        let m = (0..c)
            .map(|i| t.data()[i * hw..(i + 1) * hw].iter().sum::<f64>() / hw as f64)
            .collect();
        self.push(Tensor::from_vec(&[c], m), Op::ChannelMean(a))
    }

    /// Scales channel `c` of `x: [C, H, W]` by `g[c]`.
    pub fn channel_scale(&mut self, x: Var, g: Var) -> Var {
        let (tx, tg) = (self.value(x), self.value(g));
        let c = tx.shape()[0];
        assert_eq!(tg.len(), c, "channel_scale: gate width {} vs {} channels", tg.len(), c);
        let hw = tx.len() / c;
        let mut out = tx.data().to_vec();
        for ci in 0..c {
            let s = tg.data()[ci];
            out[ci * hw..(ci + 1) * hw].iter_mut().for_each(|v| *v *= s);
        }
        let shape = tx.shape().to_vec();
        self.push(Tensor::from_vec(&shape, out), Op::ChannelScale { x, g })
    }

    /// Reverse pass from the scalar node `root`.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).len(), 1, "backward from non-scalar node");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0).reshaped(self.value(root).shape()));
        let mut out = Gradients::zeros_like(self.params);

        for i in (0..=root.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let acc = |v: Var, g: Tensor, grads: &mut Vec<Option<Tensor>>| match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            };
            match &node.op {
                Op::Input => {}
                Op::Param(id) => out.get_mut(*id).add_assign(&gy),
                Op::Add(a, b) => {
                    acc(*a, gy.clone(), &mut grads);
                    acc(*b, gy, &mut grads);
                }
                Op::Sub(a, b) => {
                    acc(*b, gy.map(|v| -v), &mut grads);
                    acc(*a, gy, &mut grads);
                }
                Op::Mul(a, b) => {
                    let ga = elementwise(&gy, self.value(*b), |g, y| g * y);
                    let gb = elementwise(&gy, self.value(*a), |g, x| g * x);
                    acc(*a, ga, &mut grads);
                    acc(*b, gb, &mut grads);
                }
                Op::MulConst(a, c) => acc(*a, elementwise(&gy, c, |g, c| g * c), &mut grads),
                Op::Scale(a, s) => acc(*a, gy.map(|g| g * s), &mut grads),
                Op::ScaleBy(a, s) => {
                    let sv = self.value(*s).item();
                    let gs: f64 = gy.data().iter().zip(self.value(*a).data()).map(|(g, x)| g * x).sum();
                    acc(*a, gy.map(|g| g * sv), &mut grads);
                    acc(*s, Tensor::scalar(gs).reshaped(self.value(*s).shape()), &mut grads);
                }
                Op::AddConst(a) => acc(*a, gy, &mut grads),
                Op::Sum(a) => {
                    let g = gy.item();
                    acc(*a, Tensor::filled(self.value(*a).shape(), g), &mut grads);
                }
                Op::Mean(a) => {
                    let ta = self.value(*a);
                    let g = gy.item() / ta.len() as f64;
                    acc(*a, Tensor::filled(ta.shape(), g), &mut grads);
                }
                Op::Exp(a) => {
                    let y = node.value.as_ref().unwrap();
                    acc(*a, elementwise(&gy, y, |g, y| g * y), &mut grads);
                }
                Op::Log(a) => acc(*a, elementwise(&gy, self.value(*a), |g, x| g / x), &mut grads),
                Op::Sqrt(a) => {
                    let y = node.value.as_ref().unwrap();
                    acc(*a, elementwise(&gy, y, |g, y| g * 0.5 / y), &mut grads);
                }
                Op::Sigmoid(a) => {
                    let y = node.value.as_ref().unwrap();
                    acc(*a, elementwise(&gy, y, |g, y| g * y * (1.0 - y)), &mut grads);
                }
                Op::Tanh(a) => {
                    let y = node.value.as_ref().unwrap();
                    acc(*a, elementwise(&gy, y, |g, y| g * (1.0 - y * y)), &mut grads);
                }
                Op::Elu(a) => {
                    acc(*a, elementwise(&gy, self.value(*a), |g, x| if x > 0.0 { g } else { g * x.exp() }), &mut grads)
                }
                Op::Clamp(a, lo, hi) => acc(
                    *a,
                    elementwise(&gy, self.value(*a), |g, x| if x < *lo || x > *hi { 0.0 } else { g }),
                    &mut grads,
                ),
                Op::Dot(a, b) => {
                    let g = gy.item();
                    let ga = self.value(*b).map(|y| g * y);
                    let gb = self.value(*a).map(|x| g * x);
                    acc(*a, ga, &mut grads);
                    acc(*b, gb, &mut grads);
                }
                Op::Linear { w, x, b } => {
                    let (tw, tx) = (self.value(*w), self.value(*x));
                    let (o_n, i_n) = (tw.shape()[0], tw.shape()[1]);
                    let g = gy.data();
                    let mut gw = vec![0.0; o_n * i_n];
                    let mut gx = vec![0.0; i_n];
                    for o in 0..o_n {
                        let go = g[o];
                        if go == 0.0 {
                            continue;
                        }
                        let row = &tw.data()[o * i_n..(o + 1) * i_n];
                        let grow = &mut gw[o * i_n..(o + 1) * i_n];
                        for k in 0..i_n {
                            grow[k] += go * tx.data()[k];
                            gx[k] += go * row[k];
                        }
                    }
                    acc(*w, Tensor::from_vec(tw.shape(), gw), &mut grads);
                    acc(*x, Tensor::from_vec(tx.shape(), gx), &mut grads);
                    acc(*b, gy, &mut grads);
                }
                Op::Conv2d { x, w, b, g } => {
                    let (gx, gw, gb) = self.conv2d_backward(*x, *w, &gy, *g);
                    acc(*x, gx, &mut grads);
                    acc(*w, gw, &mut grads);
                    acc(*b, gb, &mut grads);
                }
                Op::ConvT2d { x, w, b, g } => {
                    let (gx, gw, gb) = self.convt2d_backward(*x, *w, &gy, *g);
                    acc(*x, gx, &mut grads);
                    acc(*w, gw, &mut grads);
                    acc(*b, gb, &mut grads);
                }
                Op::Reshape(a) => {
                    let shape = self.value(*a).shape().to_vec();
                    acc(*a, gy.reshaped(&shape), &mut grads);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let tp = self.value(p);
                        let n = tp.len();
                        let g = Tensor::from_vec(tp.shape(), gy.data()[off..off + n].to_vec());
                        off += n;
                        acc(p, g, &mut grads);
                    }
                }
                Op::ChannelMean(a) => {
                    let ta = self.value(*a);
                    let c = ta.shape()[0];
                    let hw = ta.len() / c;
                    let mut g = vec![0.0; ta.len()];
                    for ci in 0..c {
                        let v = gy.data()[ci] / hw as f64;
                        g[ci * hw..(ci + 1) * hw].iter_mut().for_each(|e| *e = v);
                    }
                    acc(*a, Tensor::from_vec(ta.shape(), g), &mut grads);
                }
                Op::ChannelScale { x, g } => {
                    let (tx, tg) = (self.value(*x), self.value(*g));
                    let c = tx.shape()[0];
                    let hw = tx.len() / c;
                    let mut gxv = gy.data().to_vec();
                    let mut ggv = vec![0.0; c];
                    for ci in 0..c {
                        let s = tg.data()[ci];
                        let range = ci * hw..(ci + 1) * hw;
                        ggv[ci] = gy.data()[range.clone()]
                            .iter()
                            .zip(&tx.data()[range.clone()])
                            .map(|(a, b)| a * b)
                            .sum();
                        gxv[range].iter_mut().for_each(|v| *v *= s);
                    }
                    acc(*x, Tensor::from_vec(tx.shape(), gxv), &mut grads);
                    acc(*g, Tensor::from_vec(tg.shape(), ggv), &mut grads);
                }
            }
        }
        out
    }

    fn conv2d_backward(&self, x: Var, w: Var, gy: &Tensor, g: ConvGeom) -> (Tensor, Tensor, Tensor) {
        let (tx, tw) = (self.value(x), self.value(w));
        let (c, h, wd) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        let o_ch = tw.shape()[0];
        let (ho, wo) = (gy.shape()[1], gy.shape()[2]);
        let cols = col_table(wd, wo, g.kw, g.sw, g.pw);
        let mut gx = vec![0.0; tx.len()];
        let mut gw = vec![0.0; tw.len()];
        let mut gb = vec![0.0; o_ch];
        let (xd, wdat, gd) = (tx.data(), tw.data(), gy.data());
        for o in 0..o_ch {
            let go = &gd[o * ho * wo..(o + 1) * ho * wo];
            gb[o] = go.iter().sum();
            for ci in 0..c {
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let widx = ((o * c + ci) * g.kh + ky) * g.kw + kx;
                        let wv = wdat[widx];
                        let ct = &cols[kx];
                        let mut acc_w = 0.0;
                        for oy in 0..ho {
                            let iy = (oy * g.sh + ky) as isize - g.ph as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let base = (ci * h + iy as usize) * wd;
                            let grow = &go[oy * wo..(oy + 1) * wo];
                            for (&gv, &ix) in grow.iter().zip(ct) {
                                acc_w += gv * xd[base + ix];
                                gx[base + ix] += gv * wv;
                            }
                        }
                        gw[widx] += acc_w;
                    }
                }
            }
        }
        (
            Tensor::from_vec(tx.shape(), gx),
            Tensor::from_vec(tw.shape(), gw),
            Tensor::from_vec(&[o_ch], gb),
        )
    }

    fn convt2d_backward(&self, x: Var, w: Var, gy: &Tensor, g: ConvGeom) -> (Tensor, Tensor, Tensor) {
        let (tx, tw) = (self.value(x), self.value(w));
        let (c, h, wd) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        let o_ch = tw.shape()[1];
        let (ho, wo) = (gy.shape()[1], gy.shape()[2]);
        let cols: Vec<Vec<usize>> = (0..g.kw)
            .map(|kx| (0..wd).map(|ix| (ix * g.sw + kx + wo * g.kw - g.pw) % wo).collect())
            .collect();
        let mut gx = vec![0.0; tx.len()];
        let mut gw = vec![0.0; tw.len()];
        let (xd, wdat, gd) = (tx.data(), tw.data(), gy.data());
        let gb: Vec<f64> = (0..o_ch).map(|o| gd[o * ho * wo..(o + 1) * ho * wo].iter().sum()).collect();
        for ci in 0..c {
            for o in 0..o_ch {
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let widx = ((ci * o_ch + o) * g.kh + ky) * g.kw + kx;
                        let wv = wdat[widx];
                        let ct = &cols[kx];
                        let mut acc_w = 0.0;
                        for iy in 0..h {
                            let oy = (iy * g.sh + ky) as isize - g.ph as isize;
                            if oy < 0 || oy >= ho as isize {
                                continue;
                            }
                            let xbase = (ci * h + iy) * wd;
                            let obase = (o * ho + oy as usize) * wo;
                            for (ix, &ox) in ct.iter().enumerate() {
                                let gv = gd[obase + ox];
                                acc_w += gv * xd[xbase + ix];
                                gx[xbase + ix] += gv * wv;
                            }
                        }
                        gw[widx] += acc_w;
                    }
                }
            }
        }
        (
            Tensor::from_vec(tx.shape(), gx),
            Tensor::from_vec(tw.shape(), gw),
            Tensor::from_vec(&[o_ch], gb),
        )
    }
}

fn elementwise(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor::from_vec(a.shape(), a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect())
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}
