//! Differentiable operations on [`Var`]s.

use super::exec;
use super::kernels::{col2im, gemm, im2col, sum_in_order, Window};
use super::{Element, Tensor, Var};
use crate::error::{Error, Result};

/// Per-channel batch statistics observed by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchNormStats<E: Element> {
    pub mean: Vec<E>,
    /// Unbiased variance, the quantity tracked by running statistics.
    pub var: Vec<E>,
}

fn check_same<E: Element>(a: &Tensor<E>, b: &Tensor<E>, op: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn map<E: Element>(data: &[E], f: impl Fn(E) -> E) -> Vec<E> {
    data.iter().map(|&v| f(v)).collect()
}

fn zip_map<E: Element>(a: &[E], b: &[E], f: impl Fn(E, E) -> E) -> Vec<E> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

/// Overflow-safe `ln(1 + e^x)`.
pub(crate) fn softplus_scalar<E: Element>(x: E) -> E {
    if x > E::of(20.0) {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid<E: Element>(x: E) -> E {
    if x >= E::zero() {
        E::one() / (E::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (E::one() + e)
    }
}

/// Per-sample gradients of a layer input and its weight.
type GradPair<E> = (Option<Vec<E>>, Option<Vec<E>>);

// Fallible, tape-recording arithmetic; the operator traits do not fit.
#[allow(clippy::should_implement_trait)]
impl<'t, E: Element> Var<'t, E> {
    fn check_tape(&self, other: &Var<'t, E>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::usage("operands recorded on different tapes"))
        }
    }

    pub fn add(self, rhs: Var<'t, E>) -> Result<Var<'t, E>> {
        self.check_tape(&rhs)?;
        let (a, b) = (self.value(), rhs.value());
        check_same(&a, &b, "add")?;
        let out = Tensor::from_parts(a.shape().to_vec(), zip_map(a.data(), b.data(), |x, y| x + y));
        self.tape
            .push(out, &[self, rhs], |g, _| vec![Some(g.to_vec()), Some(g.to_vec())])
    }

    pub fn sub(self, rhs: Var<'t, E>) -> Result<Var<'t, E>> {
        self.check_tape(&rhs)?;
        let (a, b) = (self.value(), rhs.value());
        check_same(&a, &b, "sub")?;
        let out = Tensor::from_parts(a.shape().to_vec(), zip_map(a.data(), b.data(), |x, y| x - y));
        self.tape.push(out, &[self, rhs], |g, need| {
            vec![Some(g.to_vec()), need[1].then(|| map(g, |v| -v))]
        })
    }

    pub fn mul(self, rhs: Var<'t, E>) -> Result<Var<'t, E>> {
        self.check_tape(&rhs)?;
        let (a, b) = (self.value(), rhs.value());
        check_same(&a, &b, "mul")?;
        let out = Tensor::from_parts(a.shape().to_vec(), zip_map(a.data(), b.data(), |x, y| x * y));
        self.tape.push(out, &[self, rhs], move |g, need| {
            vec![
                need[0].then(|| zip_map(g, b.data(), |gv, bv| gv * bv)),
                need[1].then(|| zip_map(g, a.data(), |gv, av| gv * av)),
            ]
        })
    }

    pub fn div(self, rhs: Var<'t, E>) -> Result<Var<'t, E>> {
        self.check_tape(&rhs)?;
        let (a, b) = (self.value(), rhs.value());
        check_same(&a, &b, "div")?;
        let out = Tensor::from_parts(a.shape().to_vec(), zip_map(a.data(), b.data(), |x, y| x / y));
        self.tape.push(out, &[self, rhs], move |g, need| {
            vec![
                need[0].then(|| zip_map(g, b.data(), |gv, bv| gv / bv)),
                need[1].then(|| {
                    g.iter()
                        .zip(a.data())
                        .zip(b.data())
                        .map(|((&gv, &av), &bv)| -gv * av / (bv * bv))
                        .collect()
                }),
            ]
        })
    }

    pub fn add_scalar(self, s: E) -> Result<Var<'t, E>> {
        let a = self.value();
        let out = Tensor::from_parts(a.shape().to_vec(), map(a.data(), |x| x + s));
        self.tape.push(out, &[self], |g, _| vec![Some(g.to_vec())])
    }

    pub fn mul_scalar(self, s: E) -> Result<Var<'t, E>> {
        let a = self.value();
        let out = Tensor::from_parts(a.shape().to_vec(), map(a.data(), |x| x * s));
        self.tape.push(out, &[self], move |g, _| vec![Some(map(g, |v| v * s))])
    }

    pub fn square(self) -> Result<Var<'t, E>> {
        let a = self.value();
        let out = Tensor::from_parts(a.shape().to_vec(), map(a.data(), |x| x * x));
        self.tape.push(out, &[self], move |g, _| {
            vec![Some(zip_map(g, a.data(), |gv, av| E::of(2.0) * gv * av))]
        })
    }

    pub fn relu(self) -> Result<Var<'t, E>> {
        let a = self.value();
        let out = Tensor::from_parts(a.shape().to_vec(), map(a.data(), |x| x.max(E::zero())));
        self.tape.push(out, &[self], move |g, _| {
            vec![Some(zip_map(
                g,
                a.data(),
                |gv, av| {
                    if av > E::zero() {
                        gv
                    } else {
                        E::zero()
                    }
                },
            ))]
        })
    }

    /// `ln(1 + e^x)`, evaluated without overflow for large inputs.
    pub fn softplus(self) -> Result<Var<'t, E>> {
        let a = self.value();
        let out = Tensor::from_parts(a.shape().to_vec(), map(a.data(), softplus_scalar));
        self.tape.push(out, &[self], move |g, _| {
            vec![Some(zip_map(g, a.data(), |gv, av| gv * sigmoid(av)))]
        })
    }

    pub fn sum(self) -> Result<Var<'t, E>> {
        let a = self.value();
        let total = a.data().iter().fold(E::zero(), |acc, &v| acc + v);
        let n = a.len();
        self.tape
            .push(Tensor::scalar(total), &[self], move |g, _| vec![Some(vec![g[0]; n])])
    }

    pub fn mean(self) -> Result<Var<'t, E>> {
        let a = self.value();
        let n = a.len();
        if n == 0 {
            return Err(Error::dim("mean of an empty tensor"));
        }
        let inv = E::one() / E::of(n as f64);
        let total = a.data().iter().fold(E::zero(), |acc, &v| acc + v);
        self.tape.push(Tensor::scalar(total * inv), &[self], move |g, _| {
            vec![Some(vec![g[0] * inv; n])]
        })
    }

    /// Mean squared difference over every element.
    pub fn mse(self, target: Var<'t, E>) -> Result<Var<'t, E>> {
        self.sub(target)?.square()?.mean()
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, E>> {
        let a = self.value();
        let out = a.reshape(shape)?.with_requires_grad(false);
        self.tape.push(out, &[self], |g, _| vec![Some(g.to_vec())])
    }

    /// Channel average: N x C x H x W -> N x 1 x H x W.
    pub fn mean_channels(self) -> Result<Var<'t, E>> {
        let a = self.value();
        let [n, c, h, w] = a.dims4()?;
        let hw = h * w;
        let inv = E::one() / E::of(c as f64);
        let mut out = vec![E::zero(); n * hw];
        for i in 0..n {
            let dst = &mut out[i * hw..(i + 1) * hw];
            for ch in 0..c {
                let src = &a.data()[(i * c + ch) * hw..(i * c + ch + 1) * hw];
                dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
            }
            dst.iter_mut().for_each(|d| *d *= inv);
        }
        self.tape
            .push(Tensor::from_parts(vec![n, 1, h, w], out), &[self], move |g, _| {
                let mut dx = vec![E::zero(); n * c * hw];
                for i in 0..n {
                    let gi = &g[i * hw..(i + 1) * hw];
                    for ch in 0..c {
                        dx[(i * c + ch) * hw..(i * c + ch + 1) * hw]
                            .iter_mut()
                            .zip(gi)
                            .for_each(|(d, &gv)| *d = gv * inv);
                    }
                }
                vec![Some(dx)]
            })
    }

    /// Concatenates N x C_i x H x W tensors along the channel axis.
    pub fn concat_channels(parts: &[Var<'t, E>]) -> Result<Var<'t, E>> {
        let first = parts.first().ok_or_else(|| Error::usage("concat of zero tensors"))?;
        let values: Vec<Tensor<E>> = parts.iter().map(Var::value).collect();
        let [n, _, h, w] = values[0].dims4()?;
        let mut chans = Vec::with_capacity(parts.len());
        for (p, v) in parts.iter().zip(&values) {
            first.check_tape(p)?;
            let [pn, pc, ph, pw] = v.dims4()?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::dim(format!(
                    "concat: {:?} does not match batch/spatial extent of {:?}",
                    v.shape(),
                    values[0].shape()
                )));
            }
            chans.push(pc);
        }
        let hw = h * w;
        let total: usize = chans.iter().sum();
        let mut out = Vec::with_capacity(n * total * hw);
        for i in 0..n {
            for (v, &c) in values.iter().zip(&chans) {
                out.extend_from_slice(&v.data()[i * c * hw..(i + 1) * c * hw]);
            }
        }
        first
            .tape
            .push(Tensor::from_parts(vec![n, total, h, w], out), parts, move |g, need| {
                let mut offset = 0;
                chans
                    .iter()
                    .zip(need)
                    .map(|(&c, &nd)| {
                        let start = offset;
                        offset += c;
                        nd.then(|| {
                            let mut d = Vec::with_capacity(n * c * hw);
                            for i in 0..n {
                                let base = (i * total + start) * hw;
                                d.extend_from_slice(&g[base..base + c * hw]);
                            }
                            d
                        })
                    })
                    .collect()
            })
    }

    /// Stacks tensors along the leading (batch) axis.
    pub fn concat_batch(parts: &[Var<'t, E>]) -> Result<Var<'t, E>> {
        let first = parts.first().ok_or_else(|| Error::usage("concat of zero tensors"))?;
        let values: Vec<Tensor<E>> = parts.iter().map(Var::value).collect();
        let tail = values[0].shape()[1..].to_vec();
        let mut lens = Vec::with_capacity(parts.len());
        let mut batch = 0;
        for (p, v) in parts.iter().zip(&values) {
            first.check_tape(p)?;
            if v.rank() == 0 || v.shape()[1..] != tail[..] {
                return Err(Error::dim(format!(
                    "concat_batch: {:?} vs {:?}",
                    v.shape(),
                    values[0].shape()
                )));
            }
            batch += v.shape()[0];
            lens.push(v.len());
        }
        let mut shape = vec![batch];
        shape.extend_from_slice(&tail);
        let out: Vec<E> = values.iter().flat_map(|v| v.data().iter().copied()).collect();
        first.tape.push(Tensor::from_parts(shape, out), parts, move |g, need| {
            let mut offset = 0;
            lens.iter()
                .zip(need)
                .map(|(&len, &nd)| {
                    let s = offset;
                    offset += len;
                    nd.then(|| g[s..s + len].to_vec())
                })
                .collect()
        })
    }

    /// Rows `start..start+len` of the leading axis.
    pub fn narrow_batch(self, start: usize, len: usize) -> Result<Var<'t, E>> {
        let a = self.value();
        let shape = a.shape().to_vec();
        if shape.is_empty() || start + len > shape[0] {
            return Err(Error::dim(format!(
                "narrow {start}..{} out of range for {shape:?}",
                start + len
            )));
        }
        let row: usize = shape[1..].iter().product();
        let mut out_shape = shape.clone();
        out_shape[0] = len;
        let out = a.data()[start * row..(start + len) * row].to_vec();
        let total = a.len();
        self.tape
            .push(Tensor::from_parts(out_shape, out), &[self], move |g, _| {
                let mut d = vec![E::zero(); total];
                d[start * row..(start + len) * row].copy_from_slice(g);
                vec![Some(d)]
            })
    }

    /// 2-D cross-correlation with a square O x C x k x k kernel.
    pub fn conv2d(
        self,
        weight: Var<'t, E>,
        bias: Option<Var<'t, E>>,
        stride: usize,
        padding: usize,
    ) -> Result<Var<'t, E>> {
        self.check_tape(&weight)?;
        let x = self.value();
        let w = weight.value();
        if !x.all_finite() {
            return Err(Error::numeric("conv2d input contains NaN or infinity"));
        }
        let [n, c, h, wd] = x.dims4()?;
        let [o, wc, kh, kw] = w.dims4()?;
        if wc != c || kh != kw {
            return Err(Error::dim(format!(
                "conv2d: input {:?} incompatible with weight {:?}",
                x.shape(),
                w.shape()
            )));
        }
        let win = Window::new(c, h, wd, kh, stride, padding).ok_or_else(|| {
            Error::dim(format!(
                "conv2d: kernel {kh} stride {stride} padding {padding} does not fit {h}x{wd}"
            ))
        })?;
        let b = match bias {
            Some(bv) => {
                self.check_tape(&bv)?;
                let bt = bv.value();
                if bt.shape() != [o] {
                    return Err(Error::dim(format!("conv2d bias {:?}, expected [{o}]", bt.shape())));
                }
                Some(bt)
            }
            None => None,
        };
        let l = win.col_cols();
        let rows = win.col_rows();
        let img = c * h * wd;
        let mut out = vec![E::zero(); n * o * l];
        {
            let (xd, wdat) = (x.data(), w.data());
            let bd = b.as_ref().map(|t| t.data());
            exec::for_each_chunk_mut(&mut out, o * l, |i, y| {
                let src = &xd[i * img..(i + 1) * img];
                let owned;
                let cols: &[E] = if win.is_pointwise() {
                    src
                } else {
                    let mut v = vec![E::zero(); rows * l];
                    im2col(src, &win, &mut v);
                    owned = v;
                    &owned
                };
                gemm(false, false, o, l, rows, E::one(), wdat, cols, E::zero(), y);
                if let Some(bd) = bd {
                    for (row, &bv) in y.chunks_mut(l).zip(bd) {
                        row.iter_mut().for_each(|v| *v += bv);
                    }
                }
            });
        }
        let value = Tensor::from_parts(vec![n, o, win.out_h, win.out_w], out);
        let mut parents = vec![self, weight];
        parents.extend(bias);
        self.tape.push(value, &parents, move |g, need| {
            let (need_x, need_w) = (need[0], need[1]);
            let (xd, wdat) = (x.data(), w.data());
            let per_sample: Vec<GradPair<E>> = exec::map_indexed(n, |i| {
                let gi = &g[i * o * l..(i + 1) * o * l];
                let src = &xd[i * img..(i + 1) * img];
                let dx = need_x.then(|| {
                    let mut dcols = vec![E::zero(); rows * l];
                    gemm(true, false, rows, l, o, E::one(), wdat, gi, E::zero(), &mut dcols);
                    if win.is_pointwise() {
                        dcols
                    } else {
                        let mut d = vec![E::zero(); img];
                        col2im(&dcols, &win, &mut d);
                        d
                    }
                });
                let dw = need_w.then(|| {
                    let owned;
                    let cols: &[E] = if win.is_pointwise() {
                        src
                    } else {
                        let mut v = vec![E::zero(); rows * l];
                        im2col(src, &win, &mut v);
                        owned = v;
                        &owned
                    };
                    let mut d = vec![E::zero(); o * rows];
                    gemm(false, true, o, rows, l, E::one(), gi, cols, E::zero(), &mut d);
                    d
                });
                (dx, dw)
            });
            let (dxs, dws): (Vec<_>, Vec<_>) = per_sample.into_iter().unzip();
            let dx = need_x.then(|| dxs.into_iter().flatten().flatten().collect());
            let dw = need_w.then(|| sum_in_order(dws.into_iter().flatten().collect()));
            let mut grads = vec![dx, dw];
            if need.len() > 2 {
                grads.push(need[2].then(|| channel_sums(g, n, o, l)));
            }
            grads
        })
    }

    /// Fractionally-strided convolution with a C_in x C_out x k x k kernel.
    ///
    /// Output extent is `(H - 1) * stride - 2 * padding + k + output_padding`.
    pub fn conv_transpose2d(
        self,
        weight: Var<'t, E>,
        bias: Option<Var<'t, E>>,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Var<'t, E>> {
        self.check_tape(&weight)?;
        let x = self.value();
        let w = weight.value();
        if !x.all_finite() {
            return Err(Error::numeric("conv_transpose2d input contains NaN or infinity"));
        }
        let [n, cin, h, wd] = x.dims4()?;
        let [wcin, cout, kh, kw] = w.dims4()?;
        if wcin != cin || kh != kw {
            return Err(Error::dim(format!(
                "conv_transpose2d: input {:?} incompatible with weight {:?}",
                x.shape(),
                w.shape()
            )));
        }
        if stride == 0 || output_padding >= stride {
            return Err(Error::dim("conv_transpose2d: output_padding must be < stride"));
        }
        let full_h = (h - 1) * stride + kh + output_padding;
        let full_w = (wd - 1) * stride + kw + output_padding;
        if h == 0 || wd == 0 || full_h <= 2 * padding || full_w <= 2 * padding {
            return Err(Error::dim("conv_transpose2d: padding exceeds output extent"));
        }
        let (oh, ow) = (full_h - 2 * padding, full_w - 2 * padding);
        let win = Window::new(cout, oh, ow, kh, stride, padding)
            .filter(|win| win.out_h == h && win.out_w == wd)
            .ok_or_else(|| Error::dim("conv_transpose2d: inconsistent geometry"))?;
        let b = match bias {
            Some(bv) => {
                self.check_tape(&bv)?;
                let bt = bv.value();
                if bt.shape() != [cout] {
                    return Err(Error::dim(format!(
                        "conv_transpose2d bias {:?}, expected [{cout}]",
                        bt.shape()
                    )));
                }
                Some(bt)
            }
            None => None,
        };
        let l = h * wd;
        let rows = win.col_rows();
        let out_img = cout * oh * ow;
        let mut out = vec![E::zero(); n * out_img];
        {
            let (xd, wdat) = (x.data(), w.data());
            let bd = b.as_ref().map(|t| t.data());
            exec::for_each_chunk_mut(&mut out, out_img, |i, y| {
                let src = &xd[i * cin * l..(i + 1) * cin * l];
                let mut cols = vec![E::zero(); rows * l];
                gemm(true, false, rows, l, cin, E::one(), wdat, src, E::zero(), &mut cols);
                col2im(&cols, &win, y);
                if let Some(bd) = bd {
                    for (plane, &bv) in y.chunks_mut(oh * ow).zip(bd) {
                        plane.iter_mut().for_each(|v| *v += bv);
                    }
                }
            });
        }
        let value = Tensor::from_parts(vec![n, cout, oh, ow], out);
        let mut parents = vec![self, weight];
        parents.extend(bias);
        self.tape.push(value, &parents, move |g, need| {
            let (need_x, need_w) = (need[0], need[1]);
            let (xd, wdat) = (x.data(), w.data());
            let per_sample: Vec<GradPair<E>> = exec::map_indexed(n, |i| {
                let gi = &g[i * out_img..(i + 1) * out_img];
                let mut gcols = vec![E::zero(); rows * l];
                im2col(gi, &win, &mut gcols);
                let dx = need_x.then(|| {
                    let mut d = vec![E::zero(); cin * l];
                    gemm(false, false, cin, l, rows, E::one(), wdat, &gcols, E::zero(), &mut d);
                    d
                });
                let dw = need_w.then(|| {
                    let src = &xd[i * cin * l..(i + 1) * cin * l];
                    let mut d = vec![E::zero(); cin * rows];
                    gemm(false, true, cin, rows, l, E::one(), src, &gcols, E::zero(), &mut d);
                    d
                });
                (dx, dw)
            });
            let (dxs, dws): (Vec<_>, Vec<_>) = per_sample.into_iter().unzip();
            let dx = need_x.then(|| dxs.into_iter().flatten().flatten().collect());
            let dw = need_w.then(|| sum_in_order(dws.into_iter().flatten().collect()));
            let mut grads = vec![dx, dw];
            if need.len() > 2 {
                grads.push(need[2].then(|| channel_sums(g, n, cout, oh * ow)));
            }
            grads
        })
    }

    /// Max pooling with a square window; padded cells never win.
    pub fn max_pool2d(self, kernel: usize, stride: usize, padding: usize) -> Result<Var<'t, E>> {
        let x = self.value();
        let [n, c, h, w] = x.dims4()?;
        if padding * 2 > kernel {
            return Err(Error::dim("max_pool2d: padding larger than half the window"));
        }
        let win = Window::new(c, h, w, kernel, stride, padding)
            .ok_or_else(|| Error::dim("max_pool2d: window does not fit input"))?;
        let (oh, ow) = (win.out_h, win.out_w);
        let planes = n * c;
        let mut out = vec![E::zero(); planes * oh * ow];
        let mut arg = vec![0usize; planes * oh * ow];
        for p in 0..planes {
            let plane = &x.data()[p * h * w..(p + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = E::neg_infinity();
                    let mut best_idx = usize::MAX;
                    for ki in 0..kernel {
                        let iy = (oy * stride + ki) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kj in 0..kernel {
                            let ix = (ox * stride + kj) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = iy as usize * w + ix as usize;
                            if best_idx == usize::MAX || plane[idx] > best {
                                best = plane[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = (p * oh + oy) * ow + ox;
                    out[o] = best;
                    arg[o] = p * h * w + best_idx;
                }
            }
        }
        let total = x.len();
        self.tape
            .push(Tensor::from_parts(vec![n, c, oh, ow], out), &[self], move |g, _| {
                let mut d = vec![E::zero(); total];
                for (&gv, &idx) in g.iter().zip(&arg) {
                    d[idx] += gv;
                }
                vec![Some(d)]
            })
    }

    /// Spatial maximum per channel: N x C x H x W -> N x C.
    pub fn global_max_pool(self) -> Result<Var<'t, E>> {
        let x = self.value();
        let [n, c, h, w] = x.dims4()?;
        let hw = h * w;
        if hw == 0 {
            return Err(Error::dim("global_max_pool over empty spatial extent"));
        }
        let mut out = Vec::with_capacity(n * c);
        let mut arg = Vec::with_capacity(n * c);
        for (p, plane) in x.data().chunks(hw).enumerate() {
            let mut best = 0;
            for (i, &v) in plane.iter().enumerate() {
                if v > plane[best] {
                    best = i;
                }
            }
            out.push(plane[best]);
            arg.push(p * hw + best);
        }
        let total = x.len();
        self.tape
            .push(Tensor::from_parts(vec![n, c], out), &[self], move |g, _| {
                let mut d = vec![E::zero(); total];
                for (&gv, &idx) in g.iter().zip(&arg) {
                    d[idx] += gv;
                }
                vec![Some(d)]
            })
    }

    /// Fully connected layer: N x F times an O x F weight, plus bias O.
    pub fn linear(self, weight: Var<'t, E>, bias: Option<Var<'t, E>>) -> Result<Var<'t, E>> {
        self.check_tape(&weight)?;
        let x = self.value();
        let w = weight.value();
        let (n, f) = match x.shape() {
            &[n, f] => (n, f),
            s => return Err(Error::dim(format!("linear expects N x F input, got {s:?}"))),
        };
        let o = match w.shape() {
            &[o, wf] if wf == f => o,
            s => return Err(Error::dim(format!("linear weight {s:?} incompatible with F={f}"))),
        };
        let mut out = vec![E::zero(); n * o];
        gemm(false, true, n, o, f, E::one(), x.data(), w.data(), E::zero(), &mut out);
        if let Some(bv) = bias {
            self.check_tape(&bv)?;
            let bt = bv.value();
            if bt.shape() != [o] {
                return Err(Error::dim(format!("linear bias {:?}, expected [{o}]", bt.shape())));
            }
            for row in out.chunks_mut(o) {
                row.iter_mut().zip(bt.data()).for_each(|(v, &b)| *v += b);
            }
        }
        let mut parents = vec![self, weight];
        parents.extend(bias);
        self.tape
            .push(Tensor::from_parts(vec![n, o], out), &parents, move |g, need| {
                let dx = need[0].then(|| {
                    let mut d = vec![E::zero(); n * f];
                    gemm(false, false, n, f, o, E::one(), g, w.data(), E::zero(), &mut d);
                    d
                });
                let dw = need[1].then(|| {
                    let mut d = vec![E::zero(); o * f];
                    gemm(true, false, o, f, n, E::one(), g, x.data(), E::zero(), &mut d);
                    d
                });
                let mut grads = vec![dx, dw];
                if need.len() > 2 {
                    grads.push(need[2].then(|| {
                        let mut d = vec![E::zero(); o];
                        for row in g.chunks(o) {
                            d.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
                        }
                        d
                    }));
                }
                grads
            })
    }

    /// Bilinear resize to `out_h x out_w` (half-pixel centres, edge clamped).
    pub fn upsample_bilinear(self, out_h: usize, out_w: usize) -> Result<Var<'t, E>> {
        let x = self.value();
        let [n, c, h, w] = x.dims4()?;
        if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
            return Err(Error::dim("upsample_bilinear to or from an empty extent"));
        }
        let ys = bilinear_taps(h, out_h);
        let xs = bilinear_taps(w, out_w);
        let planes = n * c;
        let mut out = vec![E::zero(); planes * out_h * out_w];
        for p in 0..planes {
            let src = &x.data()[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * out_h * out_w..(p + 1) * out_h * out_w];
            for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                let fy = E::of(fy);
                for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                    let fx = E::of(fx);
                    let top = src[y0 * w + x0] * (E::one() - fx) + src[y0 * w + x1] * fx;
                    let bot = src[y1 * w + x0] * (E::one() - fx) + src[y1 * w + x1] * fx;
                    dst[oy * out_w + ox] = top * (E::one() - fy) + bot * fy;
                }
            }
        }
        self.tape.push(
            Tensor::from_parts(vec![n, c, out_h, out_w], out),
            &[self],
            move |g, _| {
                let mut d = vec![E::zero(); planes * h * w];
                for p in 0..planes {
                    let gp = &g[p * out_h * out_w..(p + 1) * out_h * out_w];
                    let dp = &mut d[p * h * w..(p + 1) * h * w];
                    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                        let fy = E::of(fy);
                        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                            let fx = E::of(fx);
                            let gv = gp[oy * out_w + ox];
                            dp[y0 * w + x0] += gv * (E::one() - fy) * (E::one() - fx);
                            dp[y0 * w + x1] += gv * (E::one() - fy) * fx;
                            dp[y1 * w + x0] += gv * fy * (E::one() - fx);
                            dp[y1 * w + x1] += gv * fy * fx;
                        }
                    }
                }
                vec![Some(d)]
            },
        )
    }

    /// Batch norm using statistics of the current batch.
    pub fn batch_norm_train(
        self,
        gamma: Var<'t, E>,
        beta: Var<'t, E>,
        eps: f64,
    ) -> Result<(Var<'t, E>, BatchNormStats<E>)> {
        self.check_tape(&gamma)?;
        self.check_tape(&beta)?;
        let x = self.value();
        let [n, c, h, w] = x.dims4()?;
        let (gt, bt) = (gamma.value(), beta.value());
        if gt.shape() != [c] || bt.shape() != [c] {
            return Err(Error::dim(format!("batch norm parameters must have shape [{c}]")));
        }
        let hw = h * w;
        let m = n * hw;
        if m == 0 {
            return Err(Error::dim("batch norm over an empty batch"));
        }
        let mf = E::of(m as f64);
        let eps = E::of(eps);
        let mut mean = vec![E::zero(); c];
        let mut var = vec![E::zero(); c];
        for ch in 0..c {
            let mut s = E::zero();
            for i in 0..n {
                for &v in &x.data()[(i * c + ch) * hw..(i * c + ch + 1) * hw] {
                    s += v;
                }
            }
            let mu = s / mf;
            let mut q = E::zero();
            for i in 0..n {
                for &v in &x.data()[(i * c + ch) * hw..(i * c + ch + 1) * hw] {
                    q += (v - mu) * (v - mu);
                }
            }
            mean[ch] = mu;
            var[ch] = q / mf;
        }
        let inv_std: Vec<E> = var.iter().map(|&v| E::one() / (v + eps).sqrt()).collect();
        let mut xhat = vec![E::zero(); x.len()];
        let mut out = vec![E::zero(); x.len()];
        for i in 0..n {
            for ch in 0..c {
                let r = (i * c + ch) * hw..(i * c + ch + 1) * hw;
                for ((xh, o), &v) in xhat[r.clone()].iter_mut().zip(&mut out[r.clone()]).zip(&x.data()[r]) {
                    *xh = (v - mean[ch]) * inv_std[ch];
                    *o = gt.data()[ch] * *xh + bt.data()[ch];
                }
            }
        }
        let unbiased = if m > 1 {
            let scale = mf / E::of((m - 1) as f64);
            var.iter().map(|&v| v * scale).collect()
        } else {
            var.clone()
        };
        let stats = BatchNormStats { mean, var: unbiased };
        let out = self.tape.push(
            Tensor::from_parts(x.shape().to_vec(), out),
            &[self, gamma, beta],
            move |g, need| {
                let mut sum_g = vec![E::zero(); c];
                let mut sum_gx = vec![E::zero(); c];
                for i in 0..n {
                    for ch in 0..c {
                        let r = (i * c + ch) * hw..(i * c + ch + 1) * hw;
                        for (&gv, &xh) in g[r.clone()].iter().zip(&xhat[r]) {
                            sum_g[ch] += gv;
                            sum_gx[ch] += gv * xh;
                        }
                    }
                }
                let dx = need[0].then(|| {
                    let mut d = vec![E::zero(); n * c * hw];
                    for i in 0..n {
                        for ch in 0..c {
                            let k = gt.data()[ch] * inv_std[ch] / mf;
                            let r = (i * c + ch) * hw..(i * c + ch + 1) * hw;
                            for ((dv, &gv), &xh) in d[r.clone()].iter_mut().zip(&g[r.clone()]).zip(&xhat[r]) {
                                *dv = k * (mf * gv - sum_g[ch] - xh * sum_gx[ch]);
                            }
                        }
                    }
                    d
                });
                vec![dx, need[1].then(|| sum_gx.clone()), need[2].then(|| sum_g.clone())]
            },
        )?;
        Ok((out, stats))
    }

    /// Batch norm as a fixed affine map from running statistics.
    pub fn batch_norm_eval(
        self,
        gamma: Var<'t, E>,
        beta: Var<'t, E>,
        running_mean: &[E],
        running_var: &[E],
        eps: f64,
    ) -> Result<Var<'t, E>> {
        self.check_tape(&gamma)?;
        self.check_tape(&beta)?;
        let x = self.value();
        let [n, c, h, w] = x.dims4()?;
        let (gt, bt) = (gamma.value(), beta.value());
        if gt.shape() != [c] || bt.shape() != [c] || running_mean.len() != c || running_var.len() != c {
            return Err(Error::dim(format!("batch norm parameters must have shape [{c}]")));
        }
        let hw = h * w;
        let eps = E::of(eps);
        let inv_std: Vec<E> = running_var.iter().map(|&v| E::one() / (v + eps).sqrt()).collect();
        let mean = running_mean.to_vec();
        let mut out = vec![E::zero(); x.len()];
        for i in 0..n {
            for ch in 0..c {
                let scale = gt.data()[ch] * inv_std[ch];
                let shift = bt.data()[ch] - mean[ch] * scale;
                let r = (i * c + ch) * hw..(i * c + ch + 1) * hw;
                for (o, &v) in out[r.clone()].iter_mut().zip(&x.data()[r]) {
                    *o = v * scale + shift;
                }
            }
        }
        self.tape.push(
            Tensor::from_parts(x.shape().to_vec(), out),
            &[self, gamma, beta],
            move |g, need| {
                let mut dgamma = vec![E::zero(); c];
                let mut dbeta = vec![E::zero(); c];
                let mut dx = vec![E::zero(); n * c * hw];
                for i in 0..n {
                    for ch in 0..c {
                        let r = (i * c + ch) * hw..(i * c + ch + 1) * hw;
                        let scale = gt.data()[ch] * inv_std[ch];
                        for ((d, &gv), &xv) in dx[r.clone()].iter_mut().zip(&g[r.clone()]).zip(&x.data()[r]) {
                            *d = gv * scale;
                            dgamma[ch] += gv * (xv - mean[ch]) * inv_std[ch];
                            dbeta[ch] += gv;
                        }
                    }
                }
                vec![
                    need[0].then_some(dx),
                    need[1].then_some(dgamma),
                    need[2].then_some(dbeta),
                ]
            },
        )
    }

    /// Generalized divisive normalization and its multiplicative inverse.
    ///
    /// With `n_i = beta_i + sum_j gamma_ij * x_j^2` per pixel, the forward map
    /// is `x_i / sqrt(n_i)`, or `x_i * sqrt(n_i)` when `inverse` is set.
    pub fn gdn(self, beta: Var<'t, E>, gamma: Var<'t, E>, inverse: bool) -> Result<Var<'t, E>> {
        self.check_tape(&beta)?;
        self.check_tape(&gamma)?;
        let x = self.value();
        let [n, c, h, w] = x.dims4()?;
        let (bt, gt) = (beta.value(), gamma.value());
        if bt.shape() != [c] || gt.shape() != [c, c] {
            return Err(Error::dim(format!(
                "gdn: beta {:?} / gamma {:?} do not match {c} channels",
                bt.shape(),
                gt.shape()
            )));
        }
        let hw = h * w;
        let img = c * hw;
        // Per sample: the pooled normalizer n (C x HW).
        let norms: Vec<Vec<E>> = exec::map_indexed(n, |i| {
            let xi = &x.data()[i * img..(i + 1) * img];
            let sq: Vec<E> = xi.iter().map(|&v| v * v).collect();
            let mut nrm = vec![E::zero(); img];
            gemm(false, false, c, hw, c, E::one(), gt.data(), &sq, E::zero(), &mut nrm);
            for (row, &b) in nrm.chunks_mut(hw).zip(bt.data()) {
                row.iter_mut().for_each(|v| *v += b);
            }
            nrm
        });
        if norms.iter().flatten().any(|&v| v <= E::zero()) {
            return Err(Error::numeric("gdn normalizer is not positive"));
        }
        let mut out = Vec::with_capacity(x.len());
        for (i, nrm) in norms.iter().enumerate() {
            let xi = &x.data()[i * img..(i + 1) * img];
            out.extend(
                xi.iter()
                    .zip(nrm)
                    .map(|(&v, &q)| if inverse { v * q.sqrt() } else { v / q.sqrt() }),
            );
        }
        self.tape.push(
            Tensor::from_parts(x.shape().to_vec(), out),
            &[self, beta, gamma],
            move |g, need| {
                let parts: Vec<(Vec<E>, Vec<E>, Vec<E>)> = exec::map_indexed(n, |i| {
                    let xi = &x.data()[i * img..(i + 1) * img];
                    let gi = &g[i * img..(i + 1) * img];
                    let nrm = &norms[i];
                    // dL/dn_i and the direct term through the numerator.
                    let mut gn = vec![E::zero(); img];
                    let mut dx = vec![E::zero(); img];
                    let half = E::of(0.5);
                    for k in 0..img {
                        let s = nrm[k].sqrt();
                        if inverse {
                            dx[k] = gi[k] * s;
                            gn[k] = gi[k] * xi[k] * half / s;
                        } else {
                            dx[k] = gi[k] / s;
                            gn[k] = -gi[k] * xi[k] * half / (nrm[k] * s);
                        }
                    }
                    let mut pooled = vec![E::zero(); img];
                    gemm(true, false, c, hw, c, E::one(), gt.data(), &gn, E::zero(), &mut pooled);
                    for k in 0..img {
                        dx[k] += E::of(2.0) * xi[k] * pooled[k];
                    }
                    let sq: Vec<E> = xi.iter().map(|&v| v * v).collect();
                    let mut dgamma = vec![E::zero(); c * c];
                    gemm(false, true, c, c, hw, E::one(), &gn, &sq, E::zero(), &mut dgamma);
                    let dbeta: Vec<E> = gn
                        .chunks(hw)
                        .map(|row| row.iter().fold(E::zero(), |a, &b| a + b))
                        .collect();
                    (dx, dbeta, dgamma)
                });
                let mut dx = Vec::with_capacity(n * img);
                let mut dbetas = Vec::with_capacity(n);
                let mut dgammas = Vec::with_capacity(n);
                for (a, b, c) in parts {
                    dx.extend(a);
                    dbetas.push(b);
                    dgammas.push(c);
                }
                vec![
                    need[0].then_some(dx),
                    need[1].then(|| sum_in_order(dbetas)),
                    need[2].then(|| sum_in_order(dgammas)),
                ]
            },
        )
    }
}

/// Sum of `g` over batch and spatial positions for each of `c` channels.
fn channel_sums<E: Element>(g: &[E], n: usize, c: usize, l: usize) -> Vec<E> {
    let mut d = vec![E::zero(); c];
    for i in 0..n {
        for (ch, dv) in d.iter_mut().enumerate() {
            for &v in &g[(i * c + ch) * l..(i * c + ch + 1) * l] {
                *dv += v;
            }
        }
    }
    d
}

/// Source indices and interpolation weight for each output coordinate.
fn bilinear_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}
