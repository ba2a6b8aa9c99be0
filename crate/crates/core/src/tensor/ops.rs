//! Differentiable operators recorded on a [`Graph`].

use std::fmt;
use std::str::FromStr;

use super::{lit, Element, Graph, Tensor, Var};
use crate::error::{Error, Result};

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::invalid(format!(
            "{op}: axis {axis} out of range for shape {shape:?}"
        )));
    }
    Ok(())
}

fn same_shape<F: Element>(g: &Graph<F>, op: &'static str, a: Var, b: Var) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::shape(op, g.shape(a), g.shape(b)));
    }
    Ok(())
}

fn zip_map<F: Element>(a: &[F], b: &[F], f: impl Fn(F, F) -> F) -> Vec<F> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

pub fn add<F: Element>(g: &mut Graph<F>, a: Var, b: Var) -> Result<Var> {
    same_shape(g, "add", a, b)?;
    let out = zip_map(g.value(a).data(), g.value(b).data(), |x, y| x + y);
    let shape = g.shape(a).to_vec();
    Ok(g.record(Tensor::from_parts(shape, out), &[a, b], |ctx| {
        vec![Some(ctx.grad.to_vec()), Some(ctx.grad.to_vec())]
    }))
}

pub fn sub<F: Element>(g: &mut Graph<F>, a: Var, b: Var) -> Result<Var> {
    same_shape(g, "sub", a, b)?;
    let out = zip_map(g.value(a).data(), g.value(b).data(), |x, y| x - y);
    let shape = g.shape(a).to_vec();
    Ok(g.record(Tensor::from_parts(shape, out), &[a, b], |ctx| {
        vec![
            Some(ctx.grad.to_vec()),
            Some(ctx.grad.iter().map(|&v| -v).collect()),
        ]
    }))
}

pub fn mul<F: Element>(g: &mut Graph<F>, a: Var, b: Var) -> Result<Var> {
    same_shape(g, "mul", a, b)?;
    let out = zip_map(g.value(a).data(), g.value(b).data(), |x, y| x * y);
    let shape = g.shape(a).to_vec();
    Ok(g.record(Tensor::from_parts(shape, out), &[a, b], |ctx| {
        let (x, y) = (ctx.inputs[0].data(), ctx.inputs[1].data());
        vec![
            ctx.needs[0].then(|| zip_map(ctx.grad, y, |g, y| g * y)),
            ctx.needs[1].then(|| zip_map(ctx.grad, x, |g, x| g * x)),
        ]
    }))
}

pub fn scale<F: Element>(g: &mut Graph<F>, a: Var, s: f64) -> Var {
    let s: F = lit(s);
    let out = g.value(a).map(|v| v * s);
    g.record(out, &[a], move |ctx| {
        vec![Some(ctx.grad.iter().map(|&v| v * s).collect())]
    })
}

pub fn add_scalar<F: Element>(g: &mut Graph<F>, a: Var, s: f64) -> Var {
    let s: F = lit(s);
    let out = g.value(a).map(|v| v + s);
    g.record(out, &[a], |ctx| vec![Some(ctx.grad.to_vec())])
}

/// Sum of all elements as a scalar.
pub fn sum<F: Element>(g: &mut Graph<F>, a: Var) -> Var {
    let s: F = g.value(a).data().iter().copied().sum();
    g.record(Tensor::scalar(s), &[a], |ctx| {
        vec![Some(vec![ctx.grad[0]; ctx.inputs[0].numel()])]
    })
}

/// Mean of all elements as a scalar.
pub fn mean<F: Element>(g: &mut Graph<F>, a: Var) -> Var {
    let n = g.value(a).numel().max(1);
    let s = sum(g, a);
    scale(g, s, 1.0 / n as f64)
}

/// Weighted sum of scalars.
pub fn weighted_sum<F: Element>(g: &mut Graph<F>, terms: &[(Var, f64)]) -> Result<Var> {
    for &(v, _) in terms {
        if g.value(v).numel() != 1 {
            return Err(Error::NonScalarLoss(g.shape(v).to_vec()));
        }
    }
    let weights: Vec<F> = terms.iter().map(|&(_, w)| lit(w)).collect();
    let total = terms
        .iter()
        .zip(&weights)
        .fold(F::zero(), |acc, (&(v, _), &w)| acc + w * g.value(v).item());
    let inputs: Vec<Var> = terms.iter().map(|&(v, _)| v).collect();
    Ok(g.record(Tensor::scalar(total), &inputs, move |ctx| {
        weights.iter().map(|&w| Some(vec![w * ctx.grad[0]])).collect()
    }))
}

// ---------------------------------------------------------------------------
// Shape manipulation

pub fn reshape<F: Element>(g: &mut Graph<F>, a: Var, shape: &[usize]) -> Result<Var> {
    let out = g.value(a).reshape(shape.to_vec())?;
    Ok(g.record(out, &[a], |ctx| vec![Some(ctx.grad.to_vec())]))
}

fn permute_data<F: Element>(data: &[F], shape: &[usize], perm: &[usize]) -> (Vec<F>, Vec<usize>) {
    let nd = shape.len();
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let mut in_strides = vec![1usize; nd];
    for i in (0..nd.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; nd];
    for _ in 0..data.len() {
        let off: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        out.push(data[off]);
        for d in (0..nd).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    (out, out_shape)
}

/// Reorders axes: output axis `i` is input axis `perm[i]`.
pub fn permute<F: Element>(g: &mut Graph<F>, a: Var, perm: &[usize]) -> Result<Var> {
    let shape = g.shape(a).to_vec();
    let mut seen = vec![false; shape.len()];
    if perm.len() != shape.len() || perm.iter().any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::invalid(format!("permute: {perm:?} is not a permutation of {} axes", shape.len())));
    }
    let (out, out_shape) = permute_data(g.value(a).data(), &shape, perm);
    let mut inverse = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inverse[p] = i;
    }
    Ok(g.record(Tensor::from_parts(out_shape.clone(), out), &[a], move |ctx| {
        vec![Some(permute_data(ctx.grad, &out_shape, &inverse).0)]
    }))
}

/// Slice `len` entries of `axis` starting at `start`.
pub fn narrow<F: Element>(g: &mut Graph<F>, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
    let shape = g.shape(a).to_vec();
    check_axis("narrow", &shape, axis)?;
    if start + len > shape[axis] {
        return Err(Error::invalid(format!(
            "narrow: range {start}..{} exceeds axis {axis} of {shape:?}",
            start + len
        )));
    }
    let (outer, dim, inner) = split_axis(&shape, axis);
    let src = g.value(a).data();
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = o * dim * inner + start * inner;
        out.extend_from_slice(&src[base..base + len * inner]);
    }
    let mut out_shape = shape.clone();
    out_shape[axis] = len;
    Ok(g.record(Tensor::from_parts(out_shape, out), &[a], move |ctx| {
        let mut gi = vec![F::zero(); outer * dim * inner];
        for o in 0..outer {
            let base = o * dim * inner + start * inner;
            gi[base..base + len * inner].copy_from_slice(&ctx.grad[o * len * inner..(o + 1) * len * inner]);
        }
        vec![Some(gi)]
    }))
}

/// Mean over `axis`, which is removed from the output shape.
pub fn mean_axis<F: Element>(g: &mut Graph<F>, a: Var, axis: usize) -> Result<Var> {
    let shape = g.shape(a).to_vec();
    check_axis("mean_axis", &shape, axis)?;
    let (outer, dim, inner) = split_axis(&shape, axis);
    let inv: F = lit(1.0 / dim as f64);
    let src = g.value(a).data();
    let mut out = vec![F::zero(); outer * inner];
    for o in 0..outer {
        for d in 0..dim {
            let row = &src[(o * dim + d) * inner..(o * dim + d + 1) * inner];
            for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                *acc += v;
            }
        }
    }
    out.iter_mut().for_each(|v| *v *= inv);
    let mut out_shape = shape.clone();
    out_shape.remove(axis);
    Ok(g.record(Tensor::from_parts(out_shape, out), &[a], move |ctx| {
        let mut gi = vec![F::zero(); outer * dim * inner];
        for o in 0..outer {
            for d in 0..dim {
                for i in 0..inner {
                    gi[(o * dim + d) * inner + i] = ctx.grad[o * inner + i] * inv;
                }
            }
        }
        vec![Some(gi)]
    }))
}

// ---------------------------------------------------------------------------
// Linear algebra

/// `a: M×K` times `b: K×N`.
pub fn matmul<F: Element>(g: &mut Graph<F>, a: Var, b: Var) -> Result<Var> {
    let (sa, sb) = (g.shape(a).to_vec(), g.shape(b).to_vec());
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
        return Err(Error::shape("matmul", &sa, &sb));
    }
    let (m, k, n) = (sa[0], sa[1], sb[1]);
    let mut out = vec![F::zero(); m * n];
    F::gemm(m, k, n, g.value(a).data(), false, g.value(b).data(), false, F::zero(), &mut out);
    Ok(g.record(Tensor::from_parts(vec![m, n], out), &[a, b], move |ctx| {
        let ga = ctx.needs[0].then(|| {
            let mut ga = vec![F::zero(); m * k];
            F::gemm(m, n, k, ctx.grad, false, ctx.inputs[1].data(), true, F::zero(), &mut ga);
            ga
        });
        let gb = ctx.needs[1].then(|| {
            let mut gb = vec![F::zero(); k * n];
            F::gemm(k, m, n, ctx.inputs[0].data(), true, ctx.grad, false, F::zero(), &mut gb);
            gb
        });
        vec![ga, gb]
    }))
}

/// Adds `bias` (length `shape[axis]`) broadcast along every other axis.
pub fn add_bias<F: Element>(g: &mut Graph<F>, x: Var, bias: Var, axis: usize) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    check_axis("add_bias", &shape, axis)?;
    if g.shape(bias) != [shape[axis]] {
        return Err(Error::shape("add_bias", &shape, g.shape(bias)));
    }
    let (outer, dim, inner) = split_axis(&shape, axis);
    let mut out = g.value(x).data().to_vec();
    let b = g.value(bias).data();
    for o in 0..outer {
        for d in 0..dim {
            let bv = b[d];
            out[(o * dim + d) * inner..(o * dim + d + 1) * inner]
                .iter_mut()
                .for_each(|v| *v += bv);
        }
    }
    Ok(g.record(Tensor::from_parts(shape, out), &[x, bias], move |ctx| {
        let gb = ctx.needs[1].then(|| {
            let mut gb = vec![F::zero(); dim];
            for o in 0..outer {
                for (d, acc) in gb.iter_mut().enumerate() {
                    *acc += ctx.grad[(o * dim + d) * inner..(o * dim + d + 1) * inner]
                        .iter()
                        .copied()
                        .sum::<F>();
                }
            }
            gb
        });
        vec![Some(ctx.grad.to_vec()), gb]
    }))
}

/// Fully connected layer over the last axis: `x[..., K] · w[K, N] + b[N]`.
pub fn linear<F: Element>(g: &mut Graph<F>, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let k = *shape.last().ok_or_else(|| Error::invalid("linear on a scalar"))?;
    let m = shape.iter().product::<usize>() / k.max(1);
    let flat = reshape(g, x, &[m, k])?;
    let mut y = matmul(g, flat, w)?;
    if let Some(b) = b {
        y = add_bias(g, y, b, 1)?;
    }
    let n = g.shape(y)[1];
    let mut out_shape = shape;
    *out_shape.last_mut().unwrap() = n;
    reshape(g, y, &out_shape)
}

// ---------------------------------------------------------------------------
// Convolution

/// 2-D convolution geometry for NCHW input and OIHW kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    pub groups: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(
        input: &[usize],
        kernel: &[usize],
        stride: (usize, usize),
        pad: (usize, usize),
        groups: usize,
    ) -> Result<Self> {
        let bad = || Error::shape("conv2d", input, kernel);
        if input.len() != 4 || kernel.len() != 4 || groups == 0 || stride.0 == 0 || stride.1 == 0 {
            return Err(bad());
        }
        let (n, c_in, h, w) = (input[0], input[1], input[2], input[3]);
        let (c_out, cg, kh, kw) = (kernel[0], kernel[1], kernel[2], kernel[3]);
        if c_in % groups != 0 || c_out % groups != 0 || cg != c_in / groups {
            return Err(bad());
        }
        if kh > h + 2 * pad.0 || kw > w + 2 * pad.1 || kh == 0 || kw == 0 {
            return Err(bad());
        }
        let ho = (h + 2 * pad.0 - kh) / stride.0 + 1;
        let wo = (w + 2 * pad.1 - kw) / stride.1 + 1;
        Ok(ConvGeom {
            n,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            stride,
            pad,
            groups,
            ho,
            wo,
        })
    }

    fn cin_g(&self) -> usize {
        self.c_in / self.groups
    }

    fn cout_g(&self) -> usize {
        self.c_out / self.groups
    }

    fn is_depthwise(&self) -> bool {
        self.cin_g() == 1 && self.cout_g() == 1
    }

    /// Input coordinate for output position `o` and kernel tap `k`.
    #[inline]
    fn src(&self, o: usize, k: usize, stride: usize, pad: usize, limit: usize) -> Option<usize> {
        let p = (o * stride + k) as isize - pad as isize;
        (p >= 0 && (p as usize) < limit).then_some(p as usize)
    }
}

fn im2col<F: Element>(geom: &ConvGeom, x: &[F], col: &mut [F]) {
    let cg = geom.cin_g();
    let p = geom.ho * geom.wo;
    for c in 0..cg {
        let plane = &x[c * geom.h * geom.w..(c + 1) * geom.h * geom.w];
        for i in 0..geom.kh {
            for j in 0..geom.kw {
                let row = &mut col[((c * geom.kh + i) * geom.kw + j) * p..][..p];
                for oy in 0..geom.ho {
                    let dst = &mut row[oy * geom.wo..(oy + 1) * geom.wo];
                    match geom.src(oy, i, geom.stride.0, geom.pad.0, geom.h) {
                        None => dst.iter_mut().for_each(|v| *v = F::zero()),
                        Some(y) => {
                            for (ox, d) in dst.iter_mut().enumerate() {
                                *d = match geom.src(ox, j, geom.stride.1, geom.pad.1, geom.w) {
                                    Some(xx) => plane[y * geom.w + xx],
                                    None => F::zero(),
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im<F: Element>(geom: &ConvGeom, col: &[F], gx: &mut [F]) {
    let cg = geom.cin_g();
    let p = geom.ho * geom.wo;
    for c in 0..cg {
        let plane = &mut gx[c * geom.h * geom.w..(c + 1) * geom.h * geom.w];
        for i in 0..geom.kh {
            for j in 0..geom.kw {
                let row = &col[((c * geom.kh + i) * geom.kw + j) * p..][..p];
                for oy in 0..geom.ho {
                    let Some(y) = geom.src(oy, i, geom.stride.0, geom.pad.0, geom.h) else {
                        continue;
                    };
                    for ox in 0..geom.wo {
                        if let Some(xx) = geom.src(ox, j, geom.stride.1, geom.pad.1, geom.w) {
                            plane[y * geom.w + xx] += row[oy * geom.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<F: Element>(geom: &ConvGeom, x: &[F], k: &[F]) -> Vec<F> {
    let p = geom.ho * geom.wo;
    let mut out = vec![F::zero(); geom.n * geom.c_out * p];
    if geom.is_depthwise() {
        let ksz = geom.kh * geom.kw;
        for n in 0..geom.n {
            for c in 0..geom.c_in {
                let plane = &x[(n * geom.c_in + c) * geom.h * geom.w..][..geom.h * geom.w];
                let ker = &k[c * ksz..(c + 1) * ksz];
                let dst = &mut out[(n * geom.c_out + c) * p..][..p];
                for oy in 0..geom.ho {
                    for i in 0..geom.kh {
                        let Some(y) = geom.src(oy, i, geom.stride.0, geom.pad.0, geom.h) else {
                            continue;
                        };
                        for j in 0..geom.kw {
                            let kv = ker[i * geom.kw + j];
                            for ox in 0..geom.wo {
                                if let Some(xx) = geom.src(ox, j, geom.stride.1, geom.pad.1, geom.w) {
                                    dst[oy * geom.wo + ox] += kv * plane[y * geom.w + xx];
                                }
                            }
                        }
                    }
                }
            }
        }
        return out;
    }
    let (cg, og) = (geom.cin_g(), geom.cout_g());
    let kdim = cg * geom.kh * geom.kw;
    let mut col = vec![F::zero(); kdim * p];
    for n in 0..geom.n {
        for grp in 0..geom.groups {
            let xs = &x[(n * geom.c_in + grp * cg) * geom.h * geom.w..][..cg * geom.h * geom.w];
            im2col(geom, xs, &mut col);
            let ks = &k[grp * og * kdim..(grp + 1) * og * kdim];
            let dst = &mut out[(n * geom.c_out + grp * og) * p..][..og * p];
            F::gemm(og, kdim, p, ks, false, &col, false, F::zero(), dst);
        }
    }
    out
}

/// Returns `(grad_input, grad_kernel)`, each only when requested.
pub(crate) fn conv2d_backward<F: Element>(
    geom: &ConvGeom,
    x: &[F],
    k: &[F],
    gout: &[F],
    need_x: bool,
    need_k: bool,
) -> (Option<Vec<F>>, Option<Vec<F>>) {
    let p = geom.ho * geom.wo;
    let mut gx = need_x.then(|| vec![F::zero(); x.len()]);
    let mut gk = need_k.then(|| vec![F::zero(); k.len()]);
    if geom.is_depthwise() {
        let ksz = geom.kh * geom.kw;
        for n in 0..geom.n {
            for c in 0..geom.c_in {
                let base = (n * geom.c_in + c) * geom.h * geom.w;
                let go = &gout[(n * geom.c_out + c) * p..][..p];
                for oy in 0..geom.ho {
                    for i in 0..geom.kh {
                        let Some(y) = geom.src(oy, i, geom.stride.0, geom.pad.0, geom.h) else {
                            continue;
                        };
                        for j in 0..geom.kw {
                            let kidx = c * ksz + i * geom.kw + j;
                            let kv = k[kidx];
                            let mut acc = F::zero();
                            for ox in 0..geom.wo {
                                if let Some(xx) = geom.src(ox, j, geom.stride.1, geom.pad.1, geom.w) {
                                    let gv = go[oy * geom.wo + ox];
                                    acc += gv * x[base + y * geom.w + xx];
                                    if let Some(gx) = gx.as_mut() {
                                        gx[base + y * geom.w + xx] += gv * kv;
                                    }
                                }
                            }
                            if let Some(gk) = gk.as_mut() {
                                gk[kidx] += acc;
                            }
                        }
                    }
                }
            }
        }
        return (gx, gk);
    }
    let (cg, og) = (geom.cin_g(), geom.cout_g());
    let kdim = cg * geom.kh * geom.kw;
    let mut col = vec![F::zero(); kdim * p];
    let mut gcol = vec![F::zero(); kdim * p];
    for n in 0..geom.n {
        for grp in 0..geom.groups {
            let xoff = (n * geom.c_in + grp * cg) * geom.h * geom.w;
            let go = &gout[(n * geom.c_out + grp * og) * p..][..og * p];
            let ks = &k[grp * og * kdim..(grp + 1) * og * kdim];
            if let Some(gk) = gk.as_mut() {
                im2col(geom, &x[xoff..xoff + cg * geom.h * geom.w], &mut col);
                let dst = &mut gk[grp * og * kdim..(grp + 1) * og * kdim];
                F::gemm(og, p, kdim, go, false, &col, true, F::one(), dst);
            }
            if let Some(gx) = gx.as_mut() {
                F::gemm(kdim, og, p, ks, true, go, false, F::zero(), &mut gcol);
                col2im(geom, &gcol, &mut gx[xoff..xoff + cg * geom.h * geom.w]);
            }
        }
    }
    (gx, gk)
}

/// 2-D convolution of an NCHW input with an OIHW kernel (no bias).
pub fn conv2d<F: Element>(
    g: &mut Graph<F>,
    x: Var,
    kernel: Var,
    stride: (usize, usize),
    pad: (usize, usize),
    groups: usize,
) -> Result<Var> {
    let geom = ConvGeom::new(g.shape(x), g.shape(kernel), stride, pad, groups)?;
    let out = conv2d_forward(&geom, g.value(x).data(), g.value(kernel).data());
    let shape = vec![geom.n, geom.c_out, geom.ho, geom.wo];
    Ok(g.record(Tensor::from_parts(shape, out), &[x, kernel], move |ctx| {
        let (gx, gk) = conv2d_backward(
            &geom,
            ctx.inputs[0].data(),
            ctx.inputs[1].data(),
            ctx.grad,
            ctx.needs[0],
            ctx.needs[1],
        );
        vec![gx, gk]
    }))
}

// ---------------------------------------------------------------------------
// Activations

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Relu6,
    Sigmoid,
    HardSwish,
    HardSigmoid,
}

impl Activation {
    pub const ALL: [Activation; 5] = [
        Activation::Relu,
        Activation::Relu6,
        Activation::Sigmoid,
        Activation::HardSwish,
        Activation::HardSigmoid,
    ];

    pub fn apply<F: Element>(self, x: F) -> F {
        let (zero, one, three, six) = (F::zero(), F::one(), lit::<F>(3.0), lit::<F>(6.0));
        let relu6 = |v: F| v.max(zero).min(six);
        match self {
            Activation::Relu => x.max(zero),
            Activation::Relu6 => relu6(x),
            Activation::Sigmoid => one / (one + (-x).exp()),
            Activation::HardSwish => x * relu6(x + three) / six,
            Activation::HardSigmoid => relu6(x + three) / six,
        }
    }

    /// Derivative at `x` given the forward output `y`. Kinks take 0 for the
    /// clamped piece.
    pub fn derivative<F: Element>(self, x: F, y: F) -> F {
        let (zero, one, three, six) = (F::zero(), F::one(), lit::<F>(3.0), lit::<F>(6.0));
        let inside = |v: F, lo: F, hi: F| if v > lo && v < hi { one } else { zero };
        match self {
            Activation::Relu => inside(x, zero, F::infinity()),
            Activation::Relu6 => inside(x, zero, six),
            Activation::Sigmoid => y * (one - y),
            Activation::HardSigmoid => inside(x, -three, three) / six,
            Activation::HardSwish => {
                (x + three).max(zero).min(six) / six + x * inside(x, -three, three) / six
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Relu6 => "relu6",
            Activation::Sigmoid => "sigmoid",
            Activation::HardSwish => "hswish",
            Activation::HardSigmoid => "hsigmoid",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Activation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown activation `{s}`")))
    }
}

pub fn activation<F: Element>(g: &mut Graph<F>, x: Var, kind: Activation) -> Var {
    let out = g.value(x).map(|v| kind.apply(v));
    g.record(out, &[x], move |ctx| {
        let gi = ctx
            .inputs[0]
            .data()
            .iter()
            .zip(ctx.output.data())
            .zip(ctx.grad)
            .map(|((&x, &y), &g)| g * kind.derivative(x, y))
            .collect();
        vec![Some(gi)]
    })
}

// ---------------------------------------------------------------------------
// Softmax family

fn softmax_rows<F: Element>(src: &[F], outer: usize, dim: usize, inner: usize, log: bool) -> Vec<F> {
    let mut out = vec![F::zero(); src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |d: usize| (o * dim + d) * inner + i;
            let m = (0..dim).map(|d| src[at(d)]).fold(F::neg_infinity(), F::max);
            let z: F = (0..dim).map(|d| (src[at(d)] - m).exp()).sum();
            let lz = z.ln();
            for d in 0..dim {
                out[at(d)] = if log {
                    src[at(d)] - m - lz
                } else {
                    (src[at(d)] - m).exp() / z
                };
            }
        }
    }
    out
}

pub fn softmax<F: Element>(g: &mut Graph<F>, x: Var, axis: usize) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    check_axis("softmax", &shape, axis)?;
    let (outer, dim, inner) = split_axis(&shape, axis);
    let out = softmax_rows(g.value(x).data(), outer, dim, inner, false);
    Ok(g.record(Tensor::from_parts(shape, out), &[x], move |ctx| {
        let y = ctx.output.data();
        let mut gi = vec![F::zero(); y.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |d: usize| (o * dim + d) * inner + i;
                let dot: F = (0..dim).map(|d| ctx.grad[at(d)] * y[at(d)]).sum();
                for d in 0..dim {
                    gi[at(d)] = y[at(d)] * (ctx.grad[at(d)] - dot);
                }
            }
        }
        vec![Some(gi)]
    }))
}

pub fn log_softmax<F: Element>(g: &mut Graph<F>, x: Var, axis: usize) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    check_axis("log_softmax", &shape, axis)?;
    let (outer, dim, inner) = split_axis(&shape, axis);
    let out = softmax_rows(g.value(x).data(), outer, dim, inner, true);
    Ok(g.record(Tensor::from_parts(shape, out), &[x], move |ctx| {
        let y = ctx.output.data();
        let mut gi = vec![F::zero(); y.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |d: usize| (o * dim + d) * inner + i;
                let total: F = (0..dim).map(|d| ctx.grad[at(d)]).sum();
                for d in 0..dim {
                    gi[at(d)] = ctx.grad[at(d)] - y[at(d)].exp() * total;
                }
            }
        }
        vec![Some(gi)]
    }))
}

/// Plain (non-recorded) softmax over the last axis.
pub fn softmax_last<F: Element>(t: &Tensor<F>) -> Tensor<F> {
    let dim = *t.shape().last().unwrap_or(&1);
    let outer = t.numel() / dim.max(1);
    Tensor::from_parts(t.shape().to_vec(), softmax_rows(t.data(), outer, dim, 1, false))
}

/// Plain (non-recorded) log-softmax over the last axis.
pub fn log_softmax_last<F: Element>(t: &Tensor<F>) -> Tensor<F> {
    let dim = *t.shape().last().unwrap_or(&1);
    let outer = t.numel() / dim.max(1);
    Tensor::from_parts(t.shape().to_vec(), softmax_rows(t.data(), outer, dim, 1, true))
}

// ---------------------------------------------------------------------------
// Pooling and spatial ops

/// NCHW → NC11 spatial mean.
pub fn global_avg_pool<F: Element>(g: &mut Graph<F>, x: Var) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 4 || shape[2] == 0 || shape[3] == 0 {
        return Err(Error::invalid(format!("global_avg_pool expects NCHW with H,W ≥ 1, got {shape:?}")));
    }
    let (n, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
    let inv: F = lit(1.0 / hw as f64);
    let out: Vec<F> = g
        .value(x)
        .data()
        .chunks(hw)
        .map(|p| p.iter().copied().sum::<F>() * inv)
        .collect();
    Ok(g.record(Tensor::from_parts(vec![n, c, 1, 1], out), &[x], move |ctx| {
        let gi = ctx.grad.iter().flat_map(|&gv| std::iter::repeat(gv * inv).take(hw)).collect();
        vec![Some(gi)]
    }))
}

/// `x[n,c,h,w] * s[n,c,0,0]` (channel reweighting).
pub fn mul_channel<F: Element>(g: &mut Graph<F>, x: Var, s: Var) -> Result<Var> {
    let (sx, ss) = (g.shape(x).to_vec(), g.shape(s).to_vec());
    if sx.len() != 4 || ss != [sx[0], sx[1], 1, 1] {
        return Err(Error::shape("mul_channel", &sx, &ss));
    }
    let hw = sx[2] * sx[3];
    let sv = g.value(s).data();
    let out: Vec<F> = g
        .value(x)
        .data()
        .chunks(hw)
        .zip(sv)
        .flat_map(|(p, &w)| p.iter().map(move |&v| v * w))
        .collect();
    Ok(g.record(Tensor::from_parts(sx, out), &[x, s], move |ctx| {
        let (xv, sv) = (ctx.inputs[0].data(), ctx.inputs[1].data());
        let gx = ctx.needs[0].then(|| {
            ctx.grad
                .chunks(hw)
                .zip(sv)
                .flat_map(|(p, &w)| p.iter().map(move |&v| v * w))
                .collect()
        });
        let gs = ctx.needs[1].then(|| {
            ctx.grad
                .chunks(hw)
                .zip(xv.chunks(hw))
                .map(|(gp, xp)| gp.iter().zip(xp).map(|(&a, &b)| a * b).sum())
                .collect()
        });
        vec![gx, gs]
    }))
}

/// Nearest-neighbour upsampling of an NCHW tensor by an integer factor.
pub fn upsample_nearest<F: Element>(g: &mut Graph<F>, x: Var, factor: usize) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 4 || factor == 0 {
        return Err(Error::invalid(format!("upsample_nearest: bad input {shape:?} / factor {factor}")));
    }
    let (planes, h, w) = (shape[0] * shape[1], shape[2], shape[3]);
    let (ho, wo) = (h * factor, w * factor);
    let src = g.value(x).data();
    let mut out = vec![F::zero(); planes * ho * wo];
    for p in 0..planes {
        for y in 0..ho {
            for xx in 0..wo {
                out[(p * ho + y) * wo + xx] = src[(p * h + y / factor) * w + xx / factor];
            }
        }
    }
    Ok(g.record(
        Tensor::from_parts(vec![shape[0], shape[1], ho, wo], out),
        &[x],
        move |ctx| {
            let mut gi = vec![F::zero(); planes * h * w];
            for p in 0..planes {
                for y in 0..ho {
                    for xx in 0..wo {
                        gi[(p * h + y / factor) * w + xx / factor] += ctx.grad[(p * ho + y) * wo + xx];
                    }
                }
            }
            vec![Some(gi)]
        },
    ))
}
