use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::gradcheck::probe_gradients;
use super::*;

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(7)
}

fn rand_param(ps: &mut ParamSet, name: &str, shape: &[usize], r: &mut ChaCha8Rng) -> ParamId {
    let fan = shape.iter().skip(1).product::<usize>().max(1);
    ps.insert(name, init_normal(r, shape, fan))
}

fn assert_probes(ps: &ParamSet, f: impl Fn(&mut Graph) -> Var) {
    let mut r = rng();
    for p in probe_gradients(ps, f, 200, 1e-6, &mut r) {
        assert!(p.rel_error(1e-6) < 1e-4, "{p:?}");
    }
}

#[test]
fn elementwise_ops_gradients() {
    let mut r = rng();
    let mut ps = ParamSet::new();
    let a = rand_param(&mut ps, "a", &[3, 4], &mut r);
    let b = rand_param(&mut ps, "b", &[3, 4], &mut r);
    let c = Tensor::from_vec(&[3, 4], (0..12).map(|i| (i % 3) as f64).collect());
    assert_probes(&ps, |g| {
        let (va, vb) = (g.param(a), g.param(b));
        let s = g.add(va, vb);
        let d = g.sub(s, vb);
        let m = g.mul(d, vb);
        let e = g.elu(m);
        let t = g.tanh(e);
        let sg = g.sigmoid(t);
        let mc = g.mul_const(sg, c.clone());
        let ex = g.exp(mc);
        let ac = g.add_const(ex, 0.5);
        let l = g.log(ac);
        let sq = g.sqrt(ac);
        let z = g.add(l, sq);
        let sc = g.scale(z, 1.7);
        let mean = g.mean(sc);
        let by = g.scale_by(va, mean);
        g.sum(by)
    });
}

#[test]
fn linear_dot_concat_gradients() {
    let mut r = rng();
    let mut ps = ParamSet::new();
    let w = rand_param(&mut ps, "w", &[5, 6], &mut r);
    let b = rand_param(&mut ps, "b", &[5], &mut r);
    let x = rand_param(&mut ps, "x", &[2, 3], &mut r);
    let y = rand_param(&mut ps, "y", &[5], &mut r);
    assert_probes(&ps, |g| {
        let vx = g.param(x);
        let flat = g.reshape(vx, &[6]);
        let (vw, vb) = (g.param(w), g.param(b));
        let h = g.linear(vw, flat, vb);
        let vy = g.param(y);
        let cat = g.concat(&[h, vy]);
        let cat2 = g.concat(&[vy, h]);
        g.dot(cat, cat2)
    });
}

#[test]
fn clamp_blocks_gradient_outside_range() {
    let mut ps = ParamSet::new();
    let a = ps.insert("a", Tensor::from_vec(&[3], vec![-2.0, 0.5, 3.0]));
    let mut g = Graph::new(&ps);
    let va = g.param(a);
    let c = g.clamp(va, 0.0, 1.0);
    let s = g.sum(c);
    let grads = g.backward(s);
    assert_eq!(grads.get(a).data(), &[0.0, 1.0, 0.0]);
}

fn naive_conv(x: &Tensor, w: &Tensor, b: &Tensor, geo: ConvGeom) -> Tensor {
    let (c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let o_ch = w.shape()[0];
    let (ho, wo) = geo.conv_out(h, wd);
    let mut out = Tensor::zeros(&[o_ch, ho, wo]);
    for o in 0..o_ch {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = b.data()[o];
                for ci in 0..c {
                    for ky in 0..geo.kh {
                        for kx in 0..geo.kw {
                            let iy = (oy * geo.sh + ky) as i64 - geo.ph as i64;
                            let ix = ((ox * geo.sw + kx) as i64 - geo.pw as i64).rem_euclid(wd as i64);
                            if iy < 0 || iy >= h as i64 {
                                continue;
                            }
                            acc += w.data()[((o * c + ci) * geo.kh + ky) * geo.kw + kx]
                                * x.data()[(ci * h + iy as usize) * wd + ix as usize];
                        }
                    }
                }
                out.data_mut()[(o * ho + oy) * wo + ox] = acc;
            }
        }
    }
    out
}

#[test]
fn conv2d_matches_direct_formula() {
    let mut r = rng();
    let geo = ConvGeom { kh: 4, kw: 4, sh: 2, sw: 2, ph: 1, pw: 1 };
    let x = init_normal(&mut r, &[2, 6, 8], 1);
    let w = init_normal(&mut r, &[3, 2, 4, 4], 1);
    let b = init_normal(&mut r, &[3], 1);
    let mut ps = ParamSet::new();
    let (ix, iw, ib) = (ps.insert("x", x.clone()), ps.insert("w", w.clone()), ps.insert("b", b.clone()));
    let mut g = Graph::new(&ps);
    let (vx, vw, vb) = (g.param(ix), g.param(iw), g.param(ib));
    let y = g.conv2d(vx, vw, vb, geo);
    let expect = naive_conv(&x, &w, &b, geo);
    assert_eq!(g.value(y).shape(), &[3, 3, 4]);
    for (a, e) in g.value(y).data().iter().zip(expect.data()) {
        assert!((a - e).abs() < 1e-12);
    }
}

#[test]
fn conv_transpose_is_adjoint_of_conv() {
    // <conv(x), y> == <x, convT(y)> for shared weights and zero bias
    let mut r = rng();
    let geo = ConvGeom { kh: 4, kw: 4, sh: 2, sw: 2, ph: 1, pw: 1 };
    let x = init_normal(&mut r, &[2, 8, 16], 1);
    let y = init_normal(&mut r, &[3, 4, 8], 1);
    let w = init_normal(&mut r, &[3, 2, 4, 4], 1);
    let mut ps = ParamSet::new();
    let (ix, iy, iw) = (ps.insert("x", x), ps.insert("y", y), ps.insert("w", w));
    let b3 = ps.insert("b3", Tensor::zeros(&[3]));
    let b2 = ps.insert("b2", Tensor::zeros(&[2]));
    let mut g = Graph::new(&ps);
    let (vx, vy, vw) = (g.param(ix), g.param(iy), g.param(iw));
    let (vb3, vb2) = (g.param(b3), g.param(b2));
    let cx = g.conv2d(vx, vw, vb3, geo);
    let ty = g.conv_transpose2d(vy, vw, vb2, geo);
    assert_eq!(g.value(ty).shape(), &[2, 8, 16]);
    let lhs: f64 = g.value(cx).data().iter().zip(g.value(vy).data()).map(|(a, b)| a * b).sum();
    let rhs: f64 = g.value(vx).data().iter().zip(g.value(ty).data()).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
}

#[test]
fn conv_gradients() {
    let mut r = rng();
    let mut ps = ParamSet::new();
    let x = rand_param(&mut ps, "x", &[2, 4, 8], &mut r);
    let w1 = rand_param(&mut ps, "w1", &[3, 2, 4, 4], &mut r);
    let b1 = rand_param(&mut ps, "b1", &[3], &mut r);
    let w2 = rand_param(&mut ps, "w2", &[3, 2, 4, 4], &mut r);
    let b2 = rand_param(&mut ps, "b2", &[2], &mut r);
    let gate = rand_param(&mut ps, "gate", &[3], &mut r);
    let down = ConvGeom { kh: 4, kw: 4, sh: 2, sw: 2, ph: 1, pw: 1 };
    assert_probes(&ps, |g| {
        let vx = g.param(x);
        let (vw1, vb1) = (g.param(w1), g.param(b1));
        let h = g.conv2d(vx, vw1, vb1, down);
        let h = g.elu(h);
        let pooled = g.channel_mean(h);
        let vg = g.param(gate);
        let gsum = g.add(pooled, vg);
        let gs = g.sigmoid(gsum);
        let h = g.channel_scale(h, gs);
        let (vw2, vb2) = (g.param(w2), g.param(b2));
        let up = g.conv_transpose2d(h, vw2, vb2, down);
        let sq = g.mul(up, up);
        g.mean(sq)
    });
}

#[test]
fn adam_minimises_quadratic() {
    let mut ps = ParamSet::new();
    let a = ps.insert("a", Tensor::from_vec(&[2], vec![3.0, -2.0]));
    let mut opt = Adam::new(&ps, 0.1, 0.0);
    for _ in 0..500 {
        let grads = {
            let mut g = Graph::new(&ps);
            let va = g.param(a);
            let sq = g.mul(va, va);
            let s = g.sum(sq);
            g.backward(s)
        };
        opt.step(&mut ps, &grads);
    }
    assert!(ps.get(a).data().iter().all(|v| v.abs() < 1e-2));
}
