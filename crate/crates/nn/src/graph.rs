//! Tape-based reverse-mode autodiff over dense tensors.
//!
//! A `Graph` is built fresh for every forward pass; ops append value nodes and
//! backward closures. `backward` walks the tape in reverse creation order
//! (which is a topological order by construction) and accumulates gradients
//! for every node that leads to a parameter.

use crate::conv;
use crate::optim::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

type BackFn<S> = Box<dyn Fn(&[Tensor<S>], &Tensor<S>, &mut GradSink<S>)>;

pub struct Graph<S: Scalar> {
    values: Vec<Tensor<S>>,
    needs_grad: Vec<bool>,
    backs: Vec<Option<BackFn<S>>>,
    param_names: Vec<Option<String>>,
}

pub struct GradSink<'a, S: Scalar> {
    grads: &'a mut Vec<Option<Tensor<S>>>,
    needs: &'a [bool],
}

impl<S: Scalar> GradSink<'_, S> {
    #[inline]
    pub fn wants(&self, v: Var) -> bool {
        self.needs[v.0]
    }

    pub fn add(&mut self, v: Var, g: Tensor<S>) {
        if !self.needs[v.0] {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => acc.add_in_place(&g),
            slot @ None => *slot = Some(g),
        }
    }
}

/// Gradients produced by one backward pass.
pub struct Grads<S: Scalar> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Grads<S> {
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph {
            values: Vec::new(),
            needs_grad: Vec::new(),
            backs: Vec::new(),
            param_names: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor<S>, needs: bool, back: Option<BackFn<S>>) -> Var {
        self.values.push(value);
        self.needs_grad.push(needs);
        self.backs.push(back);
        self.param_names.push(None);
        Var(self.values.len() - 1)
    }

    /// Leaf with no gradient tracking (network inputs, frozen weights).
    pub fn input(&mut self, t: Tensor<S>) -> Var {
        self.push(t, false, None)
    }

    /// Named trainable leaf; value snapshot taken from the store.
    pub fn param(&mut self, store: &ParamStore<S>, name: &str) -> Var {
        let v = self.push(store.get(name).clone(), true, None);
        self.param_names[v.0] = Some(name.to_string());
        v
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.values[v.0]
    }

    #[inline]
    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        let t = self.value(v);
        assert_eq!(t.numel(), 1, "scalar_value on non-scalar {:?}", t.shape());
        t.data()[0].to_f64()
    }

    fn any_needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.needs_grad[v.0])
    }

    /// Reverse pass from a scalar root.
    pub fn backward(&self, root: Var) -> Grads<S> {
        assert_eq!(self.values[root.0].numel(), 1, "backward on non-scalar root");
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; self.values.len()];
        grads[root.0] = Some(Tensor::full(self.values[root.0].shape().to_vec(), S::ONE));
        for i in (0..=root.0).rev() {
            if !self.needs_grad[i] {
                continue;
            }
            let Some(gout) = grads[i].clone() else { continue };
            if let Some(back) = &self.backs[i] {
                let mut sink = GradSink {
                    grads: &mut grads,
                    needs: &self.needs_grad,
                };
                back(&self.values, &gout, &mut sink);
            }
        }
        Grads { grads }
    }

    /// Parameter-name/gradient pairs for the optimizer, in tape order.
    pub fn param_grads(&self, grads: &Grads<S>) -> Vec<(String, Tensor<S>)> {
        let mut out = Vec::new();
        for (i, name) in self.param_names.iter().enumerate() {
            if let (Some(name), Some(g)) = (name, grads.grads[i].as_ref()) {
                out.push((name.clone(), g.clone()));
            }
        }
        out
    }

    // ---- elementwise ----------------------------------------------------

    fn binary_same_shape(
        &mut self,
        a: Var,
        b: Var,
        f: impl Fn(S, S) -> S,
        back: impl Fn(S, S, S) -> (S, S) + 'static,
    ) -> Var {
        let (ta, tb) = (&self.values[a.0], &self.values[b.0]);
        assert_eq!(ta.shape(), tb.shape(), "elementwise shape mismatch");
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::from_vec(ta.shape().to_vec(), data);
        let needs = self.any_needs(&[a, b]);
        let backf: Option<BackFn<S>> = needs.then(|| {
            Box::new(move |vals: &[Tensor<S>], gout: &Tensor<S>, sink: &mut GradSink<S>| {
                let (ta, tb) = (&vals[a.0], &vals[b.0]);
                let n = gout.numel();
                let mut ga = sink.wants(a).then(|| vec![S::ZERO; n]);
                let mut gb = sink.wants(b).then(|| vec![S::ZERO; n]);
                for i in 0..n {
                    let (da, db) = back(ta.data()[i], tb.data()[i], gout.data()[i]);
                    if let Some(ga) = ga.as_mut() {
                        ga[i] = da;
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[i] = db;
                    }
                }
                if let Some(ga) = ga {
                    sink.add(a, Tensor::from_vec(ta.shape().to_vec(), ga));
                }
                if let Some(gb) = gb {
                    sink.add(b, Tensor::from_vec(tb.shape().to_vec(), gb));
                }
            }) as BackFn<S>
        });
        self.push(out, needs, backf)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, |x, y| x + y, |_, _, g| (g, g))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, |x, y| x - y, |_, _, g| (g, -g))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary_same_shape(a, b, |x, y| x * y, |x, y, g| (g * y, g * x))
    }

    fn unary(
        &mut self,
        a: Var,
        f: impl Fn(S) -> S,
        // (x, y, g) -> dx
        back: impl Fn(S, S, S) -> S + 'static,
    ) -> Var {
        let ta = &self.values[a.0];
        let data = ta.data().iter().map(|&x| f(x)).collect();
        let out = Tensor::from_vec(ta.shape().to_vec(), data);
        let needs = self.needs_grad[a.0];
        let out_idx = self.values.len();
        let backf: Option<BackFn<S>> = needs.then(|| {
            Box::new(move |vals: &[Tensor<S>], gout: &Tensor<S>, sink: &mut GradSink<S>| {
                let ta = &vals[a.0];
                let ty = &vals[out_idx];
                let data = (0..gout.numel())
                    .map(|i| back(ta.data()[i], ty.data()[i], gout.data()[i]))
                    .collect();
                sink.add(a, Tensor::from_vec(ta.shape().to_vec(), data));
            }) as BackFn<S>
        });
        self.push(out, needs, backf)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let cs = S::from_f64(c);
        self.unary(a, move |x| x * cs, move |_, _, g| g * cs)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let cs = S::from_f64(c);
        self.unary(a, move |x| x + cs, |_, _, g| g)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(
            a,
            |x| x.abs(),
            |x, _, g| if x >= S::ZERO { g } else { -g },
        )
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.exp(), |_, y, g| g * y)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(
            a,
            |x| x.maxs(S::ZERO),
            |x, _, g| if x > S::ZERO { g } else { S::ZERO },
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(
            a,
            |x| S::ONE / (S::ONE + (-x).exp()),
            |_, y, g| g * y * (S::ONE - y),
        )
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(
            a,
            |x| x / (S::ONE + (-x).exp()),
            |x, _, g| {
                let s = S::ONE / (S::ONE + (-x).exp());
                g * s * (S::ONE + x * (S::ONE - s))
            },
        )
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let (l, h) = (S::from_f64(lo), S::from_f64(hi));
        self.unary(
            a,
            move |x| x.maxs(l).mins(h),
            move |x, _, g| if x >= l && x <= h { g } else { S::ZERO },
        )
    }

    // ---- broadcast adds --------------------------------------------------

    /// x[..., F] + b[F]
    pub fn add_bias_row(&mut self, x: Var, b: Var) -> Var {
        let tx = &self.values[x.0];
        let f = *tx.shape().last().expect("add_bias_row on 0-d tensor");
        assert_eq!(self.values[b.0].shape(), &[f], "bias must be [F]");
        let rows = tx.numel() / f;
        let bias = self.values[b.0].clone();
        let mut data = tx.data().to_vec();
        for r in 0..rows {
            let row = &mut data[r * f..(r + 1) * f];
            for (v, bv) in row.iter_mut().zip(bias.data()) {
                *v += *bv;
            }
        }
        let out = Tensor::from_vec(tx.shape().to_vec(), data);
        let needs = self.any_needs(&[x, b]);
        let backf: Option<BackFn<S>> = needs.then(|| {
            Box::new(move |vals: &[Tensor<S>], gout: &Tensor<S>, sink: &mut GradSink<S>| {
                if sink.wants(x) {
                    sink.add(x, gout.clone());
                }
                if sink.wants(b) {
                    let mut gb = vec![S::ZERO; f];
                    for r in 0..rows {
                        for (i, g) in gout.data()[r * f..(r + 1) * f].iter().enumerate() {
                            gb[i] += *g;
                        }
                    }
                    sink.add(b, Tensor::from_vec(vec![f], gb));
                }
                let _ = vals;
            }) as BackFn<S>
        });
        self.push(out, needs, backf)
    }

    /// x[N, C, spatial...] + b[C]
    pub fn add_bias_channel(&mut self, x: Var, b: Var) -> Var {
        let tx = &self.values[x.0];
        assert!(tx.shape().len() >= 2);
        let (n, c) = (tx.shape()[0], tx.shape()[1]);
        let sp: usize = tx.shape()[2..].iter().product();
        assert_eq!(self.values[b.0].shape(), &[c]);
        let bias = self.values[b.0].clone();
        let mut data = tx.data().to_vec();
        for bi in 0..n {
            for ci in 0..c {
                let bv = bias.data()[ci];
                let base = (bi * c + ci) * sp;
                for v in &mut data[base..base + sp] {
                    *v += bv;
                }
            }
        }
        let out = Tensor::from_vec(tx.shape().to_vec(), data);
        let needs = self.any_needs(&[x, b]);
        let backf: Option<BackFn<S>> = needs.then(|| {
            Box::new(move |_: &[Tensor<S>], gout: &Tensor<S>, sink: &mut GradSink<S>| {
                if sink.wants(x) {
                    sink.add(x, gout.clone());
                }
                if sink.wants(b) {
                    let mut gb = vec![S::ZERO; c];
                    for bi in 0..n {
                        for ci in 0..c {
                            let base = (bi * c + ci) * sp;
                            let mut acc = S::ZERO;
                            for g in &gout.data()[base..base + sp] {
                                acc += *g;
                            }
                            gb[ci] += acc;
                        }
                    }
                    sink.add(b, Tensor::from_vec(vec![c], gb));
                }
            }) as BackFn<S>
        });
        self.push(out, needs, backf)
    }

    /// x[N, C, spatial...] + v[N, C] (per-sample channel shift, e.g. FiLM)
    pub fn add_channel_vec(&mut self, x: Var, v: Var) -> Var {
        let tx = &self.values[x.0];
        let (n, c) = (tx.shape()[0], tx.shape()[1]);
        let sp: usize = tx.shape()[2..].iter().product();
        assert_eq!(self.values[v.0].shape(), &[n, c]);
        let shift = self.values[v.0].clone();
        let mut data = tx.data().to_vec();
        for bi in 0..n {
            for ci in 0..c {
                let sv = shift.data()[bi * c + ci];
                let base = (bi * c + ci) * sp;
                for val in &mut data[base..base + sp] {
                    *val += sv;
                }
            }
        }
        let out = Tensor::from_vec(tx.shape().to_vec(), data);
        let needs = self.any_needs(&[x, v]);
        let backf: Option<BackFn<S>> = needs.then(|| {
            Box::new(move |_: &[Tensor<S>], gout: &Tensor<S>, sink: &mut GradSink<S>| {
                if sink.wants(x) {
                    sink.add(x, gout.clone());
                }
                if sink.wants(v) {
                    let mut gv = vec![S::ZERO; n * c];
                    for i in 0..n * c {
                        let base = i * sp;
                        let mut acc = S::ZERO;
                        for g in &gout.data()[base..base + sp] {
                            acc += *g;
                        }
                        gv[i] = acc;
                    }
                    sink.add(v, Tensor::from_vec(vec![n, c], gv));
                }
            }) as BackFn<S>
        });
        self.push(out, needs, backf)
    }

    // ---- shape ops --------------------------------------------------------

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Var {
        let shape = shape.into();
        let out = self.values[a.0].reshaped(shape);
        let needs = self.needs_grad[a.0];
        let in_shape = self.values[a.0].shape().to_vec();
        let backf: Option<BackFn<S>> = needs.then(|| {
            Box::new(move |_: &[Tensor<S>], gout: &Tensor<S>, sink: &mut GradSink<S>| {
                sink.add(a, gout.reshaped(in_shape.clone()));
            }) as BackFn<S>
        });
        self.push(out, needs, backf)
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Var {
        let out = permute_tensor(&self.values[a.0], perm);
        let needs = self.needs_grad[a.0];
        let mut inv = vec![0usize; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let backf: Option<BackFn<S>> = needs.then(|| {
            Box::new(move |_: &[Tensor<S>], gout: &Tensor<S>, sink: &mut GradSink<S>| {
                sink.add(a, permute_tensor(gout, &inv));
            }) as BackFn<S>
        });
        self.push(out, needs, backf)
    }

    pub fn concat(&mut self, axis: usize, a: Var, b: Var) -> Var {
        let (ta, tb) = (&self.values[a.0], &self.values[b.0]);
        let (sa, sb) = (ta.shape().to_vec(), tb.shape().to_vec());
        assert_eq!(sa.len(), sb.len());
        for (i, (x, y)) in sa.iter().zip(&sb).enumerate() {
            if i != axis {
                assert_eq!(x, y, "concat shapes differ off-axis");
            }
        }
        let outer: usize = sa[..axis].iter().product();
        let inner_a: usize = sa[axis..].iter().product();
        let inner_b: usize = sb[axis..].iter().product();
        let mut out_shape = sa.clone();
        out_shape[axis] = sa[axis] + sb[axis];
        let mut data = vec![S::ZERO; outer * (inner_a + inner_b)];
        for o in 0..outer {
            let dst = o * (inner_a + inner_b);
            data[dst..dst + inner_a].copy_from_slice(&ta.data()[o * inner_a..(o + 1) * inner_a]);
            data[dst + inner_a..dst + inner_a + inner_b]
                .copy_from_slice(&tb.data()[o * inner_b..(o + 1) * inner_b]);
        }
        let out = Tensor::from_vec(out_shape, data);
        let needs = self.any_needs(&[a, b]);
        let backf: Option<BackFn<S>> = needs.then(|| {
            Box::new(move |_: &[Tensor<S>], gout: &Tensor<S>, sink: &mut GradSink<S>| {
                if sink.wants(a) {
                    let mut ga = vec![S::ZERO; outer * inner_a];
                    for o in 0..outer {
                        let src = o * (inner_a + inner_b);
                        ga[o * inner_a..(o + 1) * inner_a]
                            .copy_from_slice(&gout.data()[src..src + inner_a]);
                    }
                    sink.add(a, Tensor::from_vec(sa.clone(), ga));
                }
                if sink.wants(b) {
                    let mut gb = vec![S::ZERO; outer * inner_b];
                    for o in 0..outer {
                        let src = o * (inner_a + inner_b) + inner_a;
                        gb[o * inner_b..(o + 1) * inner_b]
                            .copy_from_slice(&gout.data()[src..src + inner_b]);
                    }
                    sink.add(b, Tensor::from_vec(sb.clone(), gb));
                }
            }) as BackFn<S>
        });
        self.push(out, needs, backf)
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Var {
        let ta = &self.values[a.0];
        let shape = ta.shape().to_vec();
        assert!(start + len <= shape[axis]);
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let ax = shape[axis];
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let mut data = vec![S::ZERO; outer * len * inner];
        for o in 0..outer {
            let src = (o * ax + start) * inner;
            let dst = o * len * inner;
            data[dst..dst + len * inner].copy_from_slice(&ta.data()[src..src + len * inner]);
        }
        let out = Tensor::from_vec(out_shape, data);
        let needs = self.needs_grad[a.0];
        let backf: Option<BackFn<S>> = needs.then(|| {
            Box::new(move |_: &[Tensor<S>], gout: &Tensor<S>, sink: &mut GradSink<S>| {
                let mut ga = vec![S::ZERO; outer * ax * inner];
                for o in 0..outer {
                    let dst = (o * ax + start) * inner;
                    let src = o * len * inner;
                    ga[dst..dst + len * inner].copy_from_slice(&gout.data()[src..src + len * inner]);
                }
                sink.add(a, Tensor::from_vec(shape.clone(), ga));
            }) as BackFn<S>
        });
        self.push(out, needs, backf)
    }

    /// Cuts the tape: same value, no gradient flow.
    pub fn detach(&mut self, a: Var) -> Var {
        let t = self.values[a.0].clone();
        self.input(t)
    }

    // ---- matmul ------------------------------------------------------------

    /// [M, K] x [K, N] -> [M, N]
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (&self.values[a.0], &self.values[b.0]);
        assert_eq!(ta.shape().len(), 2);
        assert_eq!(tb.shape().len(), 2);
        let (m, k) = (ta.shape()[0], ta.shape()[1]);
        let n = tb.shape()[1];
        assert_eq!(tb.shape()[0], k, "matmul inner dims");
        let data = matmul_nn(ta.data(), tb.data(), m, k, n);
        let out = Tensor::from_vec(vec![m, n], data);
        let needs = self.any_needs(&[a, b]);
        let backf: Option<BackFn<S>> = needs.then(|| {
            Box::new(move |vals: &[Tensor<S>], gout: &Tensor<S>, sink: &mut GradSink<S>| {
                if sink.wants(a) {
                    // dA = dC . B^T
                    let da = matmul_nt(gout.data(), vals[b.0].data(), m, n, k);
                    sink.add(a, Tensor::from_vec(vec![m, k], da));
                }
                if sink.wants(b) {
                    // dB = A^T . dC
                    let db = matmul_tn(vals[a.0].data(), gout.data(), m, k, n);
                    sink.add(b, Tensor::from_vec(vec![k, n], db));
                }
            }) as BackFn<S>
        });
        self.push(out, needs, backf)
    }

    /// [B, M, K] x [B, K, N] -> [B, M, N]
    pub fn bmm(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (&self.values[a.0], &self.values[b.0]);
        assert_eq!(ta.shape().len(), 3);
        assert_eq!(tb.shape().len(), 3);
        let (bs, m, k) = (ta.shape()[0], ta.shape()[1], ta.shape()[2]);
        let n = tb.shape()[2];
        assert_eq!(tb.shape()[0], bs);
        assert_eq!(tb.shape()[1], k);
        let mut data = vec![S::ZERO; bs * m * n];
        for i in 0..bs {
            let c = matmul_nn(
                &ta.data()[i * m * k..(i + 1) * m * k],
                &tb.data()[i * k * n..(i + 1) * k * n],
                m,
                k,
                n,
            );
            data[i * m * n..(i + 1) * m * n].copy_from_slice(&c);
        }
        let out = Tensor::from_vec(vec![bs, m, n], data);
        let needs = self.any_needs(&[a, b]);
        let backf: Option<BackFn<S>> = needs.then(|| {
            Box::new(move |vals: &[Tensor<S>], gout: &Tensor<S>, sink: &mut GradSink<S>| {
                if sink.wants(a) {
                    let mut da = vec![S::ZERO; bs * m * k];
                    for i in 0..bs {
                        let d = matmul_nt(
                            &gout.data()[i * m * n..(i + 1) * m * n],
                            &vals[b.0].data()[i * k * n..(i + 1) * k * n],
                            m,
                            n,
                            k,
                        );
                        da[i * m * k..(i + 1) * m * k].copy_from_slice(&d);
                    }
                    sink.add(a, Tensor::from_vec(vec![bs, m, k], da));
                }
                if sink.wants(b) {
                    let mut db = vec![S::ZERO; bs * k * n];
                    for i in 0..bs {
                        let d = matmul_tn(
                            &vals[a.0].data()[i * m * k..(i + 1) * m * k],
                            &gout.data()[i * m * n..(i + 1) * m * n],
                            m,
                            k,
                            n,
                        );
                        db[i * k * n..(i + 1) * k * n].copy_from_slice(&d);
                    }
                    sink.add(b, Tensor::from_vec(vec![bs, k, n], db));
                }
            }) as BackFn<S>
        });
        self.push(out, needs, backf)
    }

    /// x[..., In] . w[In, Out] + b[Out], flattening leading dims.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xs = self.shape(x).to_vec();
        let (in_dim, out_dim) = {
            let ws = self.shape(w);
            (ws[0], ws[1])
        };
        assert_eq!(*xs.last().unwrap(), in_dim);
        let rows: usize = xs[..xs.len() - 1].iter().product();
        let flat = self.reshape(x, vec![rows, in_dim]);
        let mm = self.matmul(flat, w);
        let biased = self.add_bias_row(mm, b);
        let mut out_shape = xs;
        *out_shape.last_mut().unwrap() = out_dim;
        self.reshape(biased, out_shape)
    }

    // ---- convolutions -------------------------------------------------------

    pub fn conv3d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let (tx, tw) = (&self.values[x.0], &self.values[w.0]);
        let xs = tx.shape().to_vec();
        let ws = tw.shape().to_vec();
        assert_eq!(xs.len(), 5);
        assert_eq!(ws.len(), 5);
        assert_eq!(xs[1], ws[1], "conv3d channel mismatch");
        let out_shape = conv::conv3d_out_shape(&xs, &ws, stride, pad);
        let data = conv::conv3d_forward(
            tx.data(),
            &xs,
            tw.data(),
            &ws,
            Some(self.values[b.0].data()),
            stride,
            pad,
        );
        let out = Tensor::from_vec(out_shape.to_vec(), data);
        let needs = self.any_needs(&[x, w, b]);
        let backf: Option<BackFn<S>> = needs.then(|| {
            Box::new(move |vals: &[Tensor<S>], gout: &Tensor<S>, sink: &mut GradSink<S>| {
                let (dx, dw, db) = conv::conv3d_backward(
                    vals[x.0].data(),
                    &xs,
                    vals[w.0].data(),
                    &ws,
                    gout.data(),
                    stride,
                    pad,
                    sink.wants(x),
                    sink.wants(w),
                    sink.wants(b),
                );
                if let Some(dx) = dx {
                    sink.add(x, Tensor::from_vec(xs.clone(), dx));
                }
                if let Some(dw) = dw {
                    sink.add(w, Tensor::from_vec(ws.clone(), dw));
                }
                if let Some(db) = db {
                    sink.add(b, Tensor::from_vec(vec![ws[0]], db));
                }
            }) as BackFn<S>
        });
        self.push(out, needs, backf)
    }

    /// Weight layout [Cin, Cout, k, k, k].
    pub fn conv_transpose3d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let (tx, tw) = (&self.values[x.0], &self.values[w.0]);
        let xs = tx.shape().to_vec();
        let ws = tw.shape().to_vec();
        assert_eq!(xs[1], ws[0], "conv_transpose3d channel mismatch");
        let out_shape = conv::conv_transpose3d_out_shape(&xs, &ws, stride, pad);
        let data = conv::conv_transpose3d_forward(
            tx.data(),
            &xs,
            tw.data(),
            &ws,
            Some(self.values[b.0].data()),
            stride,
            pad,
        );
        let out = Tensor::from_vec(out_shape.to_vec(), data);
        let needs = self.any_needs(&[x, w, b]);
        let backf: Option<BackFn<S>> = needs.then(|| {
            Box::new(move |vals: &[Tensor<S>], gout: &Tensor<S>, sink: &mut GradSink<S>| {
                let (dx, dw, db) = conv::conv_transpose3d_backward(
                    vals[x.0].data(),
                    &xs,
                    vals[w.0].data(),
                    &ws,
                    gout.data(),
                    stride,
                    pad,
                    sink.wants(x),
                    sink.wants(w),
                    sink.wants(b),
                );
                if let Some(dx) = dx {
                    sink.add(x, Tensor::from_vec(xs.clone(), dx));
                }
                if let Some(dw) = dw {
                    sink.add(w, Tensor::from_vec(ws.clone(), dw));
                }
                if let Some(db) = db {
                    sink.add(b, Tensor::from_vec(vec![ws[1]], db));
                }
            }) as BackFn<S>
        });
        self.push(out, needs, backf)
    }

    // ---- normalization -------------------------------------------------------

    /// GroupNorm over [N, C, spatial...]; gamma/beta are [C].
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize, eps: f64) -> Var {
        let tx = &self.values[x.0];
        let shape = tx.shape().to_vec();
        let (n, c) = (shape[0], shape[1]);
        assert_eq!(c % groups, 0, "channels {c} not divisible by groups {groups}");
        let sp: usize = shape[2..].iter().product();
        let cg = c / groups;
        let m = cg * sp;
        let epss = S::from_f64(eps);

        let tg = self.values[gamma.0].clone();
        let tb = self.values[beta.0].clone();
        let xd = tx.data();
        let mut y = vec![S::ZERO; xd.len()];
        let mut mean = vec![S::ZERO; n * groups];
        let mut inv_std = vec![S::ZERO; n * groups];
        for bi in 0..n {
            for g in 0..groups {
                let base = (bi * c + g * cg) * sp;
                let mut acc = 0.0f64;
                for v in &xd[base..base + m] {
                    acc += v.to_f64();
                }
                let mu = acc / m as f64;
                let mut var = 0.0f64;
                for v in &xd[base..base + m] {
                    let d = v.to_f64() - mu;
                    var += d * d;
                }
                var /= m as f64;
                let mu_s = S::from_f64(mu);
                let istd = S::ONE / (S::from_f64(var) + epss).sqrt();
                mean[bi * groups + g] = mu_s;
                inv_std[bi * groups + g] = istd;
                for ci in 0..cg {
                    let ch = g * cg + ci;
                    let (gv, bv) = (tg.data()[ch], tb.data()[ch]);
                    let row = base + ci * sp;
                    for i in 0..sp {
                        y[row + i] = (xd[row + i] - mu_s) * istd * gv + bv;
                    }
                }
            }
        }
        let out = Tensor::from_vec(shape.clone(), y);
        let needs = self.any_needs(&[x, gamma, beta]);
        let backf: Option<BackFn<S>> = needs.then(|| {
            Box::new(move |vals: &[Tensor<S>], gout: &Tensor<S>, sink: &mut GradSink<S>| {
                let xd = vals[x.0].data();
                let gd = vals[gamma.0].data();
                let dy = gout.data();
                let mut dgamma = vec![S::ZERO; c];
                let mut dbeta = vec![S::ZERO; c];
                let mut dx = sink.wants(x).then(|| vec![S::ZERO; xd.len()]);
                for bi in 0..n {
                    for g in 0..groups {
                        let base = (bi * c + g * cg) * sp;
                        let mu = mean[bi * groups + g];
                        let istd = inv_std[bi * groups + g];
                        // accumulate group sums of dyh and dyh*xhat
                        let mut sum_dyh = S::ZERO;
                        let mut sum_dyh_xh = S::ZERO;
                        for ci in 0..cg {
                            let ch = g * cg + ci;
                            let row = base + ci * sp;
                            let gv = gd[ch];
                            let mut acc_dy = S::ZERO;
                            let mut acc_dyxh = S::ZERO;
                            for i in 0..sp {
                                let xh = (xd[row + i] - mu) * istd;
                                let dyv = dy[row + i];
                                acc_dy += dyv;
                                acc_dyxh += dyv * xh;
                            }
                            dbeta[ch] += acc_dy;
                            dgamma[ch] += acc_dyxh;
                            sum_dyh += gv * acc_dy;
                            sum_dyh_xh += gv * acc_dyxh;
                        }
                        if let Some(dx) = dx.as_mut() {
                            let inv_m = S::ONE / S::from_f64(m as f64);
                            for ci in 0..cg {
                                let ch = g * cg + ci;
                                let row = base + ci * sp;
                                let gv = gd[ch];
                                for i in 0..sp {
                                    let xh = (xd[row + i] - mu) * istd;
                                    let dyh = dy[row + i] * gv;
                                    dx[row + i] =
                                        istd * (dyh - (sum_dyh + xh * sum_dyh_xh) * inv_m);
                                }
                            }
                        }
                    }
                }
                if let Some(dx) = dx {
                    sink.add(x, Tensor::from_vec(shape.clone(), dx));
                }
                if sink.wants(gamma) {
                    sink.add(gamma, Tensor::from_vec(vec![c], dgamma));
                }
                if sink.wants(beta) {
                    sink.add(beta, Tensor::from_vec(vec![c], dbeta));
                }
            }) as BackFn<S>
        });
        self.push(out, needs, backf)
    }

    /// LayerNorm over the last dim; gamma/beta are [F].
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let tx = &self.values[x.0];
        let shape = tx.shape().to_vec();
        let f = *shape.last().unwrap();
        let rows = tx.numel() / f;
        let epss = S::from_f64(eps);
        let tg = self.values[gamma.0].clone();
        let tb = self.values[beta.0].clone();
        let xd = tx.data();
        let mut y = vec![S::ZERO; xd.len()];
        let mut mean = vec![S::ZERO; rows];
        let mut inv_std = vec![S::ZERO; rows];
        for r in 0..rows {
            let row = &xd[r * f..(r + 1) * f];
            let mut acc = 0.0f64;
            for v in row {
                acc += v.to_f64();
            }
            let mu = acc / f as f64;
            let mut var = 0.0f64;
            for v in row {
                let d = v.to_f64() - mu;
                var += d * d;
            }
            var /= f as f64;
            let mu_s = S::from_f64(mu);
            let istd = S::ONE / (S::from_f64(var) + epss).sqrt();
            mean[r] = mu_s;
            inv_std[r] = istd;
            for i in 0..f {
                y[r * f + i] = (row[i] - mu_s) * istd * tg.data()[i] + tb.data()[i];
            }
        }
        let out = Tensor::from_vec(shape.clone(), y);
        let needs = self.any_needs(&[x, gamma, beta]);
        let backf: Option<BackFn<S>> = needs.then(|| {
            Box::new(move |vals: &[Tensor<S>], gout: &Tensor<S>, sink: &mut GradSink<S>| {
                let xd = vals[x.0].data();
                let gd = vals[gamma.0].data();
                let dy = gout.data();
                let mut dgamma = vec![S::ZERO; f];
                let mut dbeta = vec![S::ZERO; f];
                let mut dx = sink.wants(x).then(|| vec![S::ZERO; xd.len()]);
                let inv_f = S::ONE / S::from_f64(f as f64);
                for r in 0..rows {
                    let mu = mean[r];
                    let istd = inv_std[r];
                    let mut sum_dyh = S::ZERO;
                    let mut sum_dyh_xh = S::ZERO;
                    for i in 0..f {
                        let xh = (xd[r * f + i] - mu) * istd;
                        let dyv = dy[r * f + i];
                        dbeta[i] += dyv;
                        dgamma[i] += dyv * xh;
                        let dyh = dyv * gd[i];
                        sum_dyh += dyh;
                        sum_dyh_xh += dyh * xh;
                    }
                    if let Some(dx) = dx.as_mut() {
                        for i in 0..f {
                            let xh = (xd[r * f + i] - mu) * istd;
                            let dyh = dy[r * f + i] * gd[i];
                            dx[r * f + i] = istd * (dyh - (sum_dyh + xh * sum_dyh_xh) * inv_f);
                        }
                    }
                }
                if let Some(dx) = dx {
                    sink.add(x, Tensor::from_vec(shape.clone(), dx));
                }
                if sink.wants(gamma) {
                    sink.add(gamma, Tensor::from_vec(vec![f], dgamma));
                }
                if sink.wants(beta) {
                    sink.add(beta, Tensor::from_vec(vec![f], dbeta));
                }
            }) as BackFn<S>
        });
        self.push(out, needs, backf)
    }

    // ---- softmax / losses -----------------------------------------------------

    pub fn softmax_last(&mut self, x: Var) -> Var {
        let tx = &self.values[x.0];
        let shape = tx.shape().to_vec();
        let f = *shape.last().unwrap();
        let rows = tx.numel() / f;
        let mut y = vec![S::ZERO; tx.numel()];
        for r in 0..rows {
            let row = &tx.data()[r * f..(r + 1) * f];
            let mut mx = row[0];
            for v in row {
                mx = mx.maxs(*v);
            }
            let mut denom = S::ZERO;
            for i in 0..f {
                let e = (row[i] - mx).exp();
                y[r * f + i] = e;
                denom += e;
            }
            for i in 0..f {
                y[r * f + i] = y[r * f + i] / denom;
            }
        }
        let out = Tensor::from_vec(shape.clone(), y);
        let needs = self.needs_grad[x.0];
        let out_idx = self.values.len();
        let backf: Option<BackFn<S>> = needs.then(|| {
            Box::new(move |vals: &[Tensor<S>], gout: &Tensor<S>, sink: &mut GradSink<S>| {
                let yd = vals[out_idx].data();
                let dy = gout.data();
                let mut dx = vec![S::ZERO; yd.len()];
                for r in 0..rows {
                    let mut dot = S::ZERO;
                    for i in 0..f {
                        dot += dy[r * f + i] * yd[r * f + i];
                    }
                    for i in 0..f {
                        dx[r * f + i] = yd[r * f + i] * (dy[r * f + i] - dot);
                    }
                }
                sink.add(x, Tensor::from_vec(shape.clone(), dx));
            }) as BackFn<S>
        });
        self.push(out, needs, backf)
    }

    /// Mean cross-entropy of logits [N, K] against integer targets.
    pub fn cross_entropy_logits(&mut self, logits: Var, targets: &[usize]) -> Var {
        let tl = &self.values[logits.0];
        assert_eq!(tl.shape().len(), 2);
        let (n, k) = (tl.shape()[0], tl.shape()[1]);
        assert_eq!(targets.len(), n);
        let targets = targets.to_vec();
        let mut probs = vec![S::ZERO; n * k];
        let mut loss = 0.0f64;
        for r in 0..n {
            let row = &tl.data()[r * k..(r + 1) * k];
            let mut mx = row[0];
            for v in row {
                mx = mx.maxs(*v);
            }
            let mut denom = 0.0f64;
            for i in 0..k {
                let e = (row[i] - mx).exp();
                probs[r * k + i] = e;
                denom += e.to_f64();
            }
            for i in 0..k {
                probs[r * k + i] = S::from_f64(probs[r * k + i].to_f64() / denom);
            }
            loss -= (row[targets[r]] - mx).to_f64() - denom.ln();
        }
        let out = Tensor::scalar(S::from_f64(loss / n as f64));
        let needs = self.needs_grad[logits.0];
        let backf: Option<BackFn<S>> = needs.then(|| {
            let probs = probs.clone();
            Box::new(move |_: &[Tensor<S>], gout: &Tensor<S>, sink: &mut GradSink<S>| {
                let g = gout.data()[0] / S::from_f64(n as f64);
                let mut dl = vec![S::ZERO; n * k];
                for r in 0..n {
                    for i in 0..k {
                        let onehot = if i == targets[r] { S::ONE } else { S::ZERO };
                        dl[r * k + i] = (probs[r * k + i] - onehot) * g;
                    }
                }
                sink.add(logits, Tensor::from_vec(vec![n, k], dl));
            }) as BackFn<S>
        });
        self.push(out, needs, backf)
    }

    // ---- reductions / pooling ---------------------------------------------------

    pub fn sum_all(&mut self, a: Var) -> Var {
        let ta = &self.values[a.0];
        let mut acc = 0.0f64;
        for v in ta.data() {
            acc += v.to_f64();
        }
        let shape = ta.shape().to_vec();
        let out = Tensor::scalar(S::from_f64(acc));
        let needs = self.needs_grad[a.0];
        let backf: Option<BackFn<S>> = needs.then(|| {
            Box::new(move |_: &[Tensor<S>], gout: &Tensor<S>, sink: &mut GradSink<S>| {
                sink.add(a, Tensor::full(shape.clone(), gout.data()[0]));
            }) as BackFn<S>
        });
        self.push(out, needs, backf)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.values[a.0].numel();
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// [N, C, spatial...] -> [N, C] spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let tx = &self.values[x.0];
        let (n, c) = (tx.shape()[0], tx.shape()[1]);
        let sp: usize = tx.shape()[2..].iter().product();
        let shape = tx.shape().to_vec();
        let mut y = vec![S::ZERO; n * c];
        for i in 0..n * c {
            let mut acc = 0.0f64;
            for v in &tx.data()[i * sp..(i + 1) * sp] {
                acc += v.to_f64();
            }
            y[i] = S::from_f64(acc / sp as f64);
        }
        let out = Tensor::from_vec(vec![n, c], y);
        let needs = self.needs_grad[x.0];
        let backf: Option<BackFn<S>> = needs.then(|| {
            Box::new(move |_: &[Tensor<S>], gout: &Tensor<S>, sink: &mut GradSink<S>| {
                let inv = S::ONE / S::from_f64(sp as f64);
                let mut dx = vec![S::ZERO; gout.numel() * sp];
                for i in 0..gout.numel() {
                    let g = gout.data()[i] * inv;
                    for v in &mut dx[i * sp..(i + 1) * sp] {
                        *v = g;
                    }
                }
                sink.add(x, Tensor::from_vec(shape.clone(), dx));
            }) as BackFn<S>
        });
        self.push(out, needs, backf)
    }

    // ---- embeddings ----------------------------------------------------------

    /// table[K, d] rows selected by idx -> [len(idx), d]
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Var {
        let tt = &self.values[table.0];
        assert_eq!(tt.shape().len(), 2);
        let (k, d) = (tt.shape()[0], tt.shape()[1]);
        let idx = idx.to_vec();
        let mut y = vec![S::ZERO; idx.len() * d];
        for (r, &i) in idx.iter().enumerate() {
            assert!(i < k, "gather index {i} out of range {k}");
            y[r * d..(r + 1) * d].copy_from_slice(&tt.data()[i * d..(i + 1) * d]);
        }
        let out = Tensor::from_vec(vec![idx.len(), d], y);
        let needs = self.needs_grad[table.0];
        let backf: Option<BackFn<S>> = needs.then(|| {
            Box::new(move |_: &[Tensor<S>], gout: &Tensor<S>, sink: &mut GradSink<S>| {
                let mut dt = vec![S::ZERO; k * d];
                for (r, &i) in idx.iter().enumerate() {
                    for j in 0..d {
                        dt[i * d + j] += gout.data()[r * d + j];
                    }
                }
                sink.add(table, Tensor::from_vec(vec![k, d], dt));
            }) as BackFn<S>
        });
        self.push(out, needs, backf)
    }

    /// out[b, f, :] = tokens[b, f] * w[f, :] + bias[f, :]
    pub fn numeric_embed(&mut self, tokens: Var, w: Var, bias: Var) -> Var {
        let tt = &self.values[tokens.0];
        let (bsz, nf) = (tt.shape()[0], tt.shape()[1]);
        let d = self.values[w.0].shape()[1];
        assert_eq!(self.values[w.0].shape(), &[nf, d]);
        assert_eq!(self.values[bias.0].shape(), &[nf, d]);
        let (tw, tb) = (self.values[w.0].clone(), self.values[bias.0].clone());
        let mut y = vec![S::ZERO; bsz * nf * d];
        for b in 0..bsz {
            for f in 0..nf {
                let t = tt.data()[b * nf + f];
                let dst = (b * nf + f) * d;
                for j in 0..d {
                    y[dst + j] = t * tw.data()[f * d + j] + tb.data()[f * d + j];
                }
            }
        }
        let out = Tensor::from_vec(vec![bsz, nf, d], y);
        let needs = self.any_needs(&[tokens, w, bias]);
        let backf: Option<BackFn<S>> = needs.then(|| {
            Box::new(move |vals: &[Tensor<S>], gout: &Tensor<S>, sink: &mut GradSink<S>| {
                let td = vals[tokens.0].data();
                let wd = vals[w.0].data();
                let dy = gout.data();
                if sink.wants(tokens) {
                    let mut dt = vec![S::ZERO; bsz * nf];
                    for b in 0..bsz {
                        for f in 0..nf {
                            let src = (b * nf + f) * d;
                            let mut acc = S::ZERO;
                            for j in 0..d {
                                acc += dy[src + j] * wd[f * d + j];
                            }
                            dt[b * nf + f] = acc;
                        }
                    }
                    sink.add(tokens, Tensor::from_vec(vec![bsz, nf], dt));
                }
                if sink.wants(w) {
                    let mut dw = vec![S::ZERO; nf * d];
                    for b in 0..bsz {
                        for f in 0..nf {
                            let t = td[b * nf + f];
                            let src = (b * nf + f) * d;
                            for j in 0..d {
                                dw[f * d + j] += t * dy[src + j];
                            }
                        }
                    }
                    sink.add(w, Tensor::from_vec(vec![nf, d], dw));
                }
                if sink.wants(bias) {
                    let mut db = vec![S::ZERO; nf * d];
                    for b in 0..bsz {
                        for f in 0..nf {
                            let src = (b * nf + f) * d;
                            for j in 0..d {
                                db[f * d + j] += dy[src + j];
                            }
                        }
                    }
                    sink.add(bias, Tensor::from_vec(vec![nf, d], db));
                }
            }) as BackFn<S>
        });
        self.push(out, needs, backf)
    }

    // ---- composite helpers -------------------------------------------------

    /// mean |a - b|
    pub fn l1_distance(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let ad = self.abs(d);
        self.mean_all(ad)
    }

    /// mean (a - b)^2
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let sq = self.mul(d, d);
        self.mean_all(sq)
    }
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

// ---- raw matmul helpers ---------------------------------------------------

/// c[m,n] = a[m,k] . b[k,n]
pub fn matmul_nn<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut c = vec![S::ZERO; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for l in 0..k {
            let av = a[i * k + l];
            let brow = &b[l * n..(l + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * *bv;
            }
        }
    }
    c
}

/// c[m,n] = a[m,k] . b[n,k]^T
pub fn matmul_nt<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut c = vec![S::ZERO; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = S::ZERO;
            for (av, bv) in arow.iter().zip(brow) {
                acc += *av * *bv;
            }
            c[i * n + j] = acc;
        }
    }
    c
}

/// c[k,n] = a[m,k]^T . b[m,n]
pub fn matmul_tn<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
    let mut c = vec![S::ZERO; k * n];
    for l in 0..m {
        let arow = &a[l * k..(l + 1) * k];
        let brow = &b[l * n..(l + 1) * n];
        for i in 0..k {
            let av = arow[i];
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * *bv;
            }
        }
    }
    c
}

fn permute_tensor<S: Scalar>(t: &Tensor<S>, perm: &[usize]) -> Tensor<S> {
    let shape = t.shape();
    assert_eq!(shape.len(), perm.len());
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let nd = shape.len();
    let mut in_strides = vec![1usize; nd];
    for i in (0..nd - 1).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let gather_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let numel = t.numel();
    let mut data = vec![S::ZERO; numel];
    let src = t.data();
    let mut counter = vec![0usize; nd];
    let mut src_idx = 0usize;
    for dst in data.iter_mut() {
        *dst = src[src_idx];
        // odometer increment over out_shape
        for d in (0..nd).rev() {
            counter[d] += 1;
            src_idx += gather_strides[d];
            if counter[d] < out_shape[d] {
                break;
            }
            src_idx -= gather_strides[d] * out_shape[d];
            counter[d] = 0;
        }
    }
    Tensor::from_vec(out_shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    /// Central finite differences against analytic gradients, in f64.
    /// `build` must construct a scalar objective from named params p0..p{k-1}.
    fn fd_check(
        shapes: &[&[usize]],
        build: impl Fn(&mut Graph<f64>, &[Var]) -> Var,
        tol: f64,
        seed: u64,
    ) {
        let mut rng = Rng::from_seed(seed);
        let mut store: ParamStore<f64> = ParamStore::new();
        for (i, sh) in shapes.iter().enumerate() {
            store.register(&format!("p{i}"), Tensor::randn(sh.to_vec(), 0.7, &mut rng));
        }
        let eval = |store: &ParamStore<f64>| -> f64 {
            let mut g = Graph::new();
            let vars: Vec<Var> = (0..shapes.len())
                .map(|i| g.param(store, &format!("p{i}")))
                .collect();
            let out = build(&mut g, &vars);
            g.scalar_value(out)
        };
        // analytic
        let mut g = Graph::new();
        let vars: Vec<Var> = (0..shapes.len())
            .map(|i| g.param(&store, &format!("p{i}")))
            .collect();
        let out = build(&mut g, &vars);
        let grads = g.backward(out);
        let analytic = g.param_grads(&grads);

        let h = 1e-5;
        for (name, grad) in &analytic {
            let total = grad.numel();
            let stride = (total / 7).max(1);
            for idx in (0..total).step_by(stride) {
                let base = store.get(name).clone();
                let mut plus = base.clone();
                plus.data_mut()[idx] += h;
                let mut minus = base.clone();
                minus.data_mut()[idx] -= h;
                let mut s2 = ParamStore::new();
                for (n2, v2) in store.iter_values() {
                    s2.register(n2, v2.clone());
                }
                s2.set(name, plus);
                let fp = eval(&s2);
                s2.set(name, minus);
                let fm = eval(&s2);
                let fd = (fp - fm) / (2.0 * h);
                let an = grad.data()[idx];
                let denom = an.abs().max(fd.abs()).max(1e-6);
                assert!(
                    (an - fd).abs() / denom < tol,
                    "{name}[{idx}]: analytic {an} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn elementwise_grads() {
        fd_check(
            &[&[3, 4], &[3, 4]],
            |g, p| {
                let a = g.add(p[0], p[1]);
                let m = g.mul(a, p[0]);
                let s = g.silu(m);
                let e = g.sigmoid(s);
                g.mean_all(e)
            },
            1e-5,
            1,
        );
    }

    #[test]
    fn abs_exp_clamp_grads() {
        fd_check(
            &[&[10]],
            |g, p| {
                let c = g.clamp(p[0], -0.4, 0.4);
                let e = g.exp(c);
                let a = g.abs(e);
                g.sum_all(a)
            },
            1e-4,
            2,
        );
    }

    #[test]
    fn matmul_grads() {
        fd_check(
            &[&[3, 4], &[4, 5], &[5]],
            |g, p| {
                let mm = g.matmul(p[0], p[1]);
                let b = g.add_bias_row(mm, p[2]);
                let s = g.silu(b);
                g.mean_all(s)
            },
            1e-5,
            3,
        );
    }

    #[test]
    fn bmm_permute_grads() {
        fd_check(
            &[&[2, 3, 4], &[2, 4, 3]],
            |g, p| {
                let c = g.bmm(p[0], p[1]);
                let t = g.permute(c, &[1, 0, 2]);
                let sm = g.softmax_last(t);
                g.mean_all(sm)
            },
            1e-5,
            4,
        );
    }

    #[test]
    fn conv_ops_grads() {
        fd_check(
            &[&[1, 2, 4, 4, 4], &[3, 2, 3, 3, 3], &[3]],
            |g, p| {
                let y = g.conv3d(p[0], p[1], p[2], 2, 1);
                let s = g.silu(y);
                g.mean_all(s)
            },
            1e-4,
            5,
        );
        fd_check(
            &[&[1, 2, 3, 3, 3], &[2, 3, 4, 4, 4], &[3]],
            |g, p| {
                let y = g.conv_transpose3d(p[0], p[1], p[2], 2, 1);
                let s = g.sigmoid(y);
                g.mean_all(s)
            },
            1e-4,
            6,
        );
    }

    #[test]
    fn norm_grads() {
        fd_check(
            &[&[2, 4, 3, 3, 3], &[4], &[4]],
            |g, p| {
                let y = g.group_norm(p[0], p[1], p[2], 2, 1e-5);
                let s = g.silu(y);
                g.mean_all(s)
            },
            1e-4,
            7,
        );
        fd_check(
            &[&[5, 6], &[6], &[6]],
            |g, p| {
                let y = g.layer_norm(p[0], p[1], p[2], 1e-5);
                let s = g.sigmoid(y);
                g.mean_all(s)
            },
            1e-4,
            8,
        );
    }

    #[test]
    fn concat_slice_pool_grads() {
        fd_check(
            &[&[2, 3, 2, 2, 2], &[2, 2, 2, 2, 2]],
            |g, p| {
                let c = g.concat(1, p[0], p[1]);
                let s = g.slice(c, 1, 1, 3);
                let pool = g.global_avg_pool(s);
                let sl = g.silu(pool);
                g.sum_all(sl)
            },
            1e-5,
            9,
        );
    }

    #[test]
    fn embed_grads() {
        fd_check(
            &[&[5, 8], &[2, 3], &[3, 8], &[3, 8]],
            |g, p| {
                let rows = g.gather_rows(p[0], &[1, 4, 2]);
                let ne = g.numeric_embed(p[1], p[2], p[3]);
                let flat = g.reshape(ne, vec![2 * 3, 8]);
                let cat = g.concat(0, rows, flat);
                let s = g.silu(cat);
                g.mean_all(s)
            },
            1e-5,
            10,
        );
    }

    #[test]
    fn ce_grads() {
        fd_check(
            &[&[4, 3]],
            |g, p| g.cross_entropy_logits(p[0], &[0, 2, 1, 2]),
            1e-5,
            11,
        );
    }

    #[test]
    fn bias_channel_grads() {
        fd_check(
            &[&[2, 4, 2, 2, 2], &[4], &[2, 4]],
            |g, p| {
                let y = g.add_bias_channel(p[0], p[1]);
                let z = g.add_channel_vec(y, p[2]);
                let s = g.silu(z);
                g.mean_all(s)
            },
            1e-5,
            12,
        );
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut store: ParamStore<f64> = ParamStore::new();
        let mut rng = Rng::from_seed(1);
        store.register("p0", Tensor::randn(vec![4], 1.0, &mut rng));
        let mut g = Graph::new();
        let p = g.param(&store, "p0");
        let d = g.detach(p);
        let m = g.mul(d, d);
        let out = g.sum_all(m);
        let grads = g.backward(out);
        assert!(g.param_grads(&grads).is_empty());
    }

    #[test]
    fn shared_node_accumulates() {
        // f(p) = sum(p*p) => df/dp = 2p
        let mut store: ParamStore<f64> = ParamStore::new();
        store.register("p0", Tensor::from_vec(vec![2], vec![3.0, -2.0]));
        let mut g = Graph::new();
        let p = g.param(&store, "p0");
        let m = g.mul(p, p);
        let out = g.sum_all(m);
        let grads = g.backward(out);
        let pg = g.param_grads(&grads);
        assert_eq!(pg[0].1.data(), &[6.0, -4.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g: Graph<f64> = Graph::new();
        let x = g.input(Tensor::from_vec(vec![2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0]));
        let y = g.softmax_last(x);
        let data = g.value(y).data();
        for r in 0..2 {
            let s: f64 = data[r * 3..(r + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_matches_manual() {
        let mut store: ParamStore<f64> = ParamStore::new();
        store.register("w", Tensor::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        store.register("b", Tensor::from_vec(vec![2], vec![0.5, -0.5]));
        let mut g = Graph::new();
        let x = g.input(Tensor::from_vec(vec![1, 3, 2], vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]));
        let w = g.param(&store, "w");
        let b = g.param(&store, "b");
        let y = g.linear(x, w, b);
        assert_eq!(g.shape(y), &[1, 3, 2]);
        let d = g.value(y).data();
        assert_eq!(&d[0..2], &[1.5, 1.5]); // [1,0].W + b
        assert_eq!(&d[2..4], &[3.5, 3.5]); // [0,1].W + b
        assert_eq!(&d[4..6], &[4.5, 5.5]); // [1,1].W + b
    }
}
