//! One-dimensional convolution, transposed convolution and average pooling
//! over `[B, C, T]` (or unbatched `[C, T]`) tensors.
//!
//! Convolutions lower to im2col + GEMM per batch item. Backward passes
//! recompute the column buffer instead of keeping it alive on the tape.

use crate::autodiff::tape::{Op, Var};
use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PadMode {
    #[default]
    Zero,
    Reflect,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub dilation: usize,
    pub pad: usize,
    pub pad_mode: PadMode,
    pub groups: usize,
}

impl Default for ConvGeom {
    fn default() -> Self {
        ConvGeom {
            stride: 1,
            dilation: 1,
            pad: 0,
            pad_mode: PadMode::Zero,
            groups: 1,
        }
    }
}

impl ConvGeom {
    pub fn new(stride: usize, dilation: usize, pad: usize, pad_mode: PadMode) -> Self {
        ConvGeom {
            stride,
            dilation,
            pad,
            pad_mode,
            groups: 1,
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    /// Output length for an input of `len` samples and kernel size `kernel`.
    pub fn output_len(&self, len: usize, kernel: usize) -> Result<usize> {
        if self.stride == 0 || self.dilation == 0 || kernel == 0 {
            return Err(Error::Contract(format!(
                "conv1d needs stride, dilation and kernel >= 1 (got {}, {}, {kernel})",
                self.stride, self.dilation
            )));
        }
        let padded = len + 2 * self.pad;
        let span = self.dilation * (kernel - 1) + 1;
        if padded < span {
            return Err(Error::Size(format!(
                "padded length {padded} shorter than effective kernel {span}"
            )));
        }
        Ok((padded - span) / self.stride + 1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TransposeGeom {
    pub stride: usize,
    pub pad: usize,
}

impl TransposeGeom {
    pub fn output_len(&self, len: usize, kernel: usize) -> Result<usize> {
        if self.stride == 0 || kernel == 0 || len == 0 {
            return Err(Error::Contract(format!(
                "conv_transpose1d needs stride, kernel and length >= 1 (got {}, {kernel}, {len})",
                self.stride
            )));
        }
        let full = (len - 1) * self.stride + kernel;
        if full <= 2 * self.pad {
            return Err(Error::Size(format!(
                "transposed output length {full} does not survive cropping {} per side",
                self.pad
            )));
        }
        Ok(full - 2 * self.pad)
    }
}

/// Source index in `[0, len)` for a padded position `i - pad` under mirror
/// reflection (edge sample not repeated). Reflection is repeated when the pad
/// exceeds the signal, and a single-sample signal maps everything to it.
#[inline]
pub(crate) fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    if m >= len as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

fn source_index(j: usize, pad: usize, len: usize, mode: PadMode) -> Option<usize> {
    let i = j as isize - pad as isize;
    if i >= 0 && (i as usize) < len {
        return Some(i as usize);
    }
    match mode {
        PadMode::Zero => None,
        PadMode::Reflect => Some(reflect_index(i, len)),
    }
}

/// `[C, T]` row-major slice -> `[C, T + 2 pad]`.
fn pad_rows<R: Real>(x: &[R], channels: usize, len: usize, pad: usize, mode: PadMode) -> Vec<R> {
    if pad == 0 {
        return x.to_vec();
    }
    let plen = len + 2 * pad;
    let mut out = vec![R::zero(); channels * plen];
    let map: Vec<Option<usize>> = (0..plen).map(|j| source_index(j, pad, len, mode)).collect();
    for c in 0..channels {
        let src = &x[c * len..(c + 1) * len];
        let dst = &mut out[c * plen..(c + 1) * plen];
        for (d, m) in dst.iter_mut().zip(&map) {
            if let Some(s) = m {
                *d = src[*s];
            }
        }
    }
    out
}

/// Adjoint of [`pad_rows`]: fold padded gradients back onto their sources.
fn unpad_rows<R: Real>(g: &[R], channels: usize, len: usize, pad: usize, mode: PadMode, out: &mut [R]) {
    let plen = len + 2 * pad;
    let map: Vec<Option<usize>> = (0..plen).map(|j| source_index(j, pad, len, mode)).collect();
    for c in 0..channels {
        let src = &g[c * plen..(c + 1) * plen];
        let dst = &mut out[c * len..(c + 1) * len];
        for (v, m) in src.iter().zip(&map) {
            if let Some(s) = m {
                dst[*s] = dst[*s] + *v;
            }
        }
    }
}

/// Column buffer `[C * K, T_out]` for strided/dilated access into `padded`.
fn im2col<R: Real>(
    padded: &[R],
    channels: usize,
    plen: usize,
    kernel: usize,
    stride: usize,
    dilation: usize,
    out_len: usize,
) -> Vec<R> {
    let mut col = vec![R::zero(); channels * kernel * out_len];
    for c in 0..channels {
        let row = &padded[c * plen..(c + 1) * plen];
        for k in 0..kernel {
            let dst = &mut col[(c * kernel + k) * out_len..(c * kernel + k + 1) * out_len];
            let off = k * dilation;
            if stride == 1 {
                dst.copy_from_slice(&row[off..off + out_len]);
            } else {
                for (t, d) in dst.iter_mut().enumerate() {
                    *d = row[off + t * stride];
                }
            }
        }
    }
    col
}

fn col2im<R: Real>(
    col: &[R],
    channels: usize,
    plen: usize,
    kernel: usize,
    stride: usize,
    dilation: usize,
    out_len: usize,
    padded: &mut [R],
) {
    for c in 0..channels {
        let row = &mut padded[c * plen..(c + 1) * plen];
        for k in 0..kernel {
            let src = &col[(c * kernel + k) * out_len..(c * kernel + k + 1) * out_len];
            let off = k * dilation;
            for (t, &v) in src.iter().enumerate() {
                let j = off + t * stride;
                row[j] = row[j] + v;
            }
        }
    }
}

/// Normalize `[C,T]` / `[B,C,T]` to `(batch, channels, len, batched)`.
fn batch_dims(shape: &[usize], what: &str) -> Result<(usize, usize, usize, bool)> {
    match *shape {
        [c, t] => Ok((1, c, t, false)),
        [b, c, t] => Ok((b, c, t, true)),
        _ => Err(Error::Dimension(format!(
            "{what} expects [C, T] or [B, C, T], got {shape:?}"
        ))),
    }
}

fn out_shape(batched: bool, b: usize, c: usize, t: usize) -> Vec<usize> {
    if batched {
        vec![b, c, t]
    } else {
        vec![c, t]
    }
}

struct ConvDims {
    batch: usize,
    c_in: usize,
    len: usize,
    c_out: usize,
    kernel: usize,
    out_len: usize,
    batched: bool,
}

fn conv_dims<R: Real>(x: &Tensor<R>, w: &Tensor<R>, bias: Option<&Tensor<R>>, geom: &ConvGeom) -> Result<ConvDims> {
    let (batch, c_in, len, batched) = batch_dims(x.shape(), "conv1d")?;
    let [c_out, cin_g, kernel] = *w.shape() else {
        return Err(Error::Dimension(format!(
            "conv1d weight must be [C_out, C_in/groups, K], got {:?}",
            w.shape()
        )));
    };
    let groups = geom.groups.max(1);
    if c_in % groups != 0 || c_out % groups != 0 || cin_g * groups != c_in {
        return Err(Error::Dimension(format!(
            "conv1d: input has {c_in} channels but weight expects {} ({} groups of {cin_g})",
            cin_g * groups,
            groups
        )));
    }
    if let Some(b) = bias {
        if b.len() != c_out {
            return Err(Error::Dimension(format!(
                "conv1d bias has {} entries for {c_out} output channels",
                b.len()
            )));
        }
    }
    if geom.pad_mode == PadMode::Reflect && len == 0 {
        return Err(Error::Size("cannot reflect-pad an empty signal".into()));
    }
    let out_len = geom.output_len(len, kernel)?;
    Ok(ConvDims {
        batch,
        c_in,
        len,
        c_out,
        kernel,
        out_len,
        batched,
    })
}

fn conv1d_forward<R: Real>(x: &Tensor<R>, w: &Tensor<R>, bias: Option<&Tensor<R>>, geom: &ConvGeom) -> Result<Tensor<R>> {
    let d = conv_dims(x, w, bias, geom)?;
    let groups = geom.groups.max(1);
    let cin_g = d.c_in / groups;
    let cout_g = d.c_out / groups;
    let plen = d.len + 2 * geom.pad;
    let rows = cin_g * d.kernel;
    let mut out = vec![R::zero(); d.batch * d.c_out * d.out_len];
    let direct = d.kernel == 1 && geom.stride == 1 && geom.pad == 0;
    for b in 0..d.batch {
        let xb = &x.data()[b * d.c_in * d.len..(b + 1) * d.c_in * d.len];
        let padded = if direct { Vec::new() } else { pad_rows(xb, d.c_in, d.len, geom.pad, geom.pad_mode) };
        let ob = &mut out[b * d.c_out * d.out_len..(b + 1) * d.c_out * d.out_len];
        for g in 0..groups {
            let wg = &w.data()[g * cout_g * rows..(g + 1) * cout_g * rows];
            let og = &mut ob[g * cout_g * d.out_len..(g + 1) * cout_g * d.out_len];
            if direct {
                let xg = &xb[g * cin_g * d.len..(g + 1) * cin_g * d.len];
                R::gemm(cout_g, rows, d.out_len, R::one(), wg, rows, 1, xg, d.out_len, 1, R::zero(), og, d.out_len, 1);
            } else {
                let pg = &padded[g * cin_g * plen..(g + 1) * cin_g * plen];
                let col = im2col(pg, cin_g, plen, d.kernel, geom.stride, geom.dilation, d.out_len);
                R::gemm(cout_g, rows, d.out_len, R::one(), wg, rows, 1, &col, d.out_len, 1, R::zero(), og, d.out_len, 1);
            }
        }
        if let Some(bias) = bias {
            for (row, &bv) in ob.chunks_mut(d.out_len).zip(bias.data()) {
                for v in row {
                    *v = *v + bv;
                }
            }
        }
    }
    Ok(Tensor::from_parts(out_shape(d.batched, d.batch, d.c_out, d.out_len), out))
}

#[allow(clippy::type_complexity)]
pub(crate) fn conv1d_backward<R: Real>(
    x: &Tensor<R>,
    w: &Tensor<R>,
    gout: &Tensor<R>,
    geom: &ConvGeom,
    need_x: bool,
    need_w: bool,
    need_b: bool,
) -> (Option<Tensor<R>>, Option<Tensor<R>>, Option<Tensor<R>>) {
    let d = conv_dims(x, w, None, geom).expect("validated in forward");
    let groups = geom.groups.max(1);
    let cin_g = d.c_in / groups;
    let cout_g = d.c_out / groups;
    let plen = d.len + 2 * geom.pad;
    let rows = cin_g * d.kernel;
    let direct = d.kernel == 1 && geom.stride == 1 && geom.pad == 0;

    let mut gx = need_x.then(|| vec![R::zero(); x.len()]);
    let mut gw = need_w.then(|| vec![R::zero(); w.len()]);
    let mut gb = need_b.then(|| vec![R::zero(); d.c_out]);

    for b in 0..d.batch {
        let xb = &x.data()[b * d.c_in * d.len..(b + 1) * d.c_in * d.len];
        let gob = &gout.data()[b * d.c_out * d.out_len..(b + 1) * d.c_out * d.out_len];
        if let Some(gb) = gb.as_mut() {
            for (acc, row) in gb.iter_mut().zip(gob.chunks(d.out_len)) {
                *acc = *acc + row.iter().copied().sum::<R>();
            }
        }
        let padded = if direct || !need_w {
            Vec::new()
        } else {
            pad_rows(xb, d.c_in, d.len, geom.pad, geom.pad_mode)
        };
        let mut gpad = if need_x && !direct { vec![R::zero(); d.c_in * plen] } else { Vec::new() };
        for g in 0..groups {
            let gog = &gob[g * cout_g * d.out_len..(g + 1) * cout_g * d.out_len];
            if let Some(gw) = gw.as_mut() {
                let gwg = &mut gw[g * cout_g * rows..(g + 1) * cout_g * rows];
                if direct {
                    let xg = &xb[g * cin_g * d.len..(g + 1) * cin_g * d.len];
                    R::gemm(cout_g, d.out_len, rows, R::one(), gog, d.out_len, 1, xg, 1, d.out_len, R::one(), gwg, rows, 1);
                } else {
                    let pg = &padded[g * cin_g * plen..(g + 1) * cin_g * plen];
                    let col = im2col(pg, cin_g, plen, d.kernel, geom.stride, geom.dilation, d.out_len);
                    R::gemm(cout_g, d.out_len, rows, R::one(), gog, d.out_len, 1, &col, 1, d.out_len, R::one(), gwg, rows, 1);
                }
            }
            if let Some(gx) = gx.as_mut() {
                let wg = &w.data()[g * cout_g * rows..(g + 1) * cout_g * rows];
                if direct {
                    let gxg = &mut gx[(b * d.c_in + g * cin_g) * d.len..(b * d.c_in + (g + 1) * cin_g) * d.len];
                    R::gemm(rows, cout_g, d.out_len, R::one(), wg, 1, rows, gog, d.out_len, 1, R::one(), gxg, d.out_len, 1);
                } else {
                    let mut gcol = vec![R::zero(); rows * d.out_len];
                    R::gemm(rows, cout_g, d.out_len, R::one(), wg, 1, rows, gog, d.out_len, 1, R::zero(), &mut gcol, d.out_len, 1);
                    let gp = &mut gpad[g * cin_g * plen..(g + 1) * cin_g * plen];
                    col2im(&gcol, cin_g, plen, d.kernel, geom.stride, geom.dilation, d.out_len, gp);
                }
            }
        }
        if let Some(gx) = gx.as_mut() {
            if !direct {
                let gxb = &mut gx[b * d.c_in * d.len..(b + 1) * d.c_in * d.len];
                unpad_rows(&gpad, d.c_in, d.len, geom.pad, geom.pad_mode, gxb);
            }
        }
    }
    (
        gx.map(|v| Tensor::from_parts(x.shape().to_vec(), v)),
        gw.map(|v| Tensor::from_parts(w.shape().to_vec(), v)),
        gb.map(|v| Tensor::from_parts(vec![d.c_out], v)),
    )
}

struct TransposeDims {
    batch: usize,
    c_in: usize,
    len: usize,
    c_out: usize,
    kernel: usize,
    out_len: usize,
    batched: bool,
}

fn transpose_dims<R: Real>(
    x: &Tensor<R>,
    w: &Tensor<R>,
    bias: Option<&Tensor<R>>,
    geom: &TransposeGeom,
) -> Result<TransposeDims> {
    let (batch, c_in, len, batched) = batch_dims(x.shape(), "conv_transpose1d")?;
    let [c_out, w_in, kernel] = *w.shape() else {
        return Err(Error::Dimension(format!(
            "conv_transpose1d weight must be [C_out, C_in, K], got {:?}",
            w.shape()
        )));
    };
    if w_in != c_in {
        return Err(Error::Dimension(format!(
            "conv_transpose1d: input has {c_in} channels, weight expects {w_in}"
        )));
    }
    if let Some(b) = bias {
        if b.len() != c_out {
            return Err(Error::Dimension(format!(
                "conv_transpose1d bias has {} entries for {c_out} output channels",
                b.len()
            )));
        }
    }
    let out_len = geom.output_len(len, kernel)?;
    Ok(TransposeDims {
        batch,
        c_in,
        len,
        c_out,
        kernel,
        out_len,
        batched,
    })
}

/// `[C_out, C_in, K]` -> `[(C_out, K), C_in]`
fn permute_weight<R: Real>(w: &[R], c_out: usize, c_in: usize, kernel: usize) -> Vec<R> {
    let mut p = vec![R::zero(); w.len()];
    for co in 0..c_out {
        for ci in 0..c_in {
            for k in 0..kernel {
                p[(co * kernel + k) * c_in + ci] = w[(co * c_in + ci) * kernel + k];
            }
        }
    }
    p
}

fn conv_transpose1d_forward<R: Real>(
    x: &Tensor<R>,
    w: &Tensor<R>,
    bias: Option<&Tensor<R>>,
    geom: &TransposeGeom,
) -> Result<Tensor<R>> {
    let d = transpose_dims(x, w, bias, geom)?;
    let wp = permute_weight(w.data(), d.c_out, d.c_in, d.kernel);
    let rows = d.c_out * d.kernel;
    let full_len = (d.len - 1) * geom.stride + d.kernel;
    let mut out = vec![R::zero(); d.batch * d.c_out * d.out_len];
    let mut col = vec![R::zero(); rows * d.len];
    let mut full = vec![R::zero(); d.c_out * full_len];
    for b in 0..d.batch {
        let xb = &x.data()[b * d.c_in * d.len..(b + 1) * d.c_in * d.len];
        R::gemm(rows, d.c_in, d.len, R::one(), &wp, d.c_in, 1, xb, d.len, 1, R::zero(), &mut col, d.len, 1);
        full.iter_mut().for_each(|v| *v = R::zero());
        col2im(&col, d.c_out, full_len, d.kernel, geom.stride, 1, d.len, &mut full);
        let ob = &mut out[b * d.c_out * d.out_len..(b + 1) * d.c_out * d.out_len];
        for co in 0..d.c_out {
            let bv = bias.map_or(R::zero(), |b| b.data()[co]);
            let src = &full[co * full_len + geom.pad..co * full_len + geom.pad + d.out_len];
            for (o, &s) in ob[co * d.out_len..(co + 1) * d.out_len].iter_mut().zip(src) {
                *o = s + bv;
            }
        }
    }
    Ok(Tensor::from_parts(out_shape(d.batched, d.batch, d.c_out, d.out_len), out))
}

#[allow(clippy::type_complexity)]
pub(crate) fn conv_transpose1d_backward<R: Real>(
    x: &Tensor<R>,
    w: &Tensor<R>,
    gout: &Tensor<R>,
    geom: &TransposeGeom,
    need_x: bool,
    need_w: bool,
    need_b: bool,
) -> (Option<Tensor<R>>, Option<Tensor<R>>, Option<Tensor<R>>) {
    let d = transpose_dims(x, w, None, geom).expect("validated in forward");
    let wp = permute_weight(w.data(), d.c_out, d.c_in, d.kernel);
    let rows = d.c_out * d.kernel;
    let full_len = (d.len - 1) * geom.stride + d.kernel;

    let mut gx = need_x.then(|| vec![R::zero(); x.len()]);
    let mut gwp = need_w.then(|| vec![R::zero(); wp.len()]);
    let mut gb = need_b.then(|| vec![R::zero(); d.c_out]);
    let mut gfull = vec![R::zero(); d.c_out * full_len];

    for b in 0..d.batch {
        let gob = &gout.data()[b * d.c_out * d.out_len..(b + 1) * d.c_out * d.out_len];
        if let Some(gb) = gb.as_mut() {
            for (acc, row) in gb.iter_mut().zip(gob.chunks(d.out_len)) {
                *acc = *acc + row.iter().copied().sum::<R>();
            }
        }
        if !need_x && !need_w {
            continue;
        }
        gfull.iter_mut().for_each(|v| *v = R::zero());
        for co in 0..d.c_out {
            gfull[co * full_len + geom.pad..co * full_len + geom.pad + d.out_len]
                .copy_from_slice(&gob[co * d.out_len..(co + 1) * d.out_len]);
        }
        let gcol = im2col(&gfull, d.c_out, full_len, d.kernel, geom.stride, 1, d.len);
        let xb = &x.data()[b * d.c_in * d.len..(b + 1) * d.c_in * d.len];
        if let Some(gx) = gx.as_mut() {
            let gxb = &mut gx[b * d.c_in * d.len..(b + 1) * d.c_in * d.len];
            R::gemm(d.c_in, rows, d.len, R::one(), &wp, 1, d.c_in, &gcol, d.len, 1, R::zero(), gxb, d.len, 1);
        }
        if let Some(gwp) = gwp.as_mut() {
            R::gemm(rows, d.len, d.c_in, R::one(), &gcol, d.len, 1, xb, 1, d.len, R::one(), gwp, d.c_in, 1);
        }
    }
    let gw = gwp.map(|gwp| {
        let mut gw = vec![R::zero(); w.len()];
        for co in 0..d.c_out {
            for ci in 0..d.c_in {
                for k in 0..d.kernel {
                    gw[(co * d.c_in + ci) * d.kernel + k] = gwp[(co * d.kernel + k) * d.c_in + ci];
                }
            }
        }
        Tensor::from_parts(w.shape().to_vec(), gw)
    });
    (
        gx.map(|v| Tensor::from_parts(x.shape().to_vec(), v)),
        gw,
        gb.map(|v| Tensor::from_parts(vec![d.c_out], v)),
    )
}

fn pool_len(len: usize, kernel: usize, stride: usize) -> Result<usize> {
    if kernel == 0 || stride == 0 {
        return Err(Error::Contract("avg_pool1d needs kernel and stride >= 1".into()));
    }
    if len < kernel {
        return Err(Error::Size(format!(
            "avg_pool1d: length {len} shorter than kernel {kernel}"
        )));
    }
    Ok((len - kernel) / stride + 1)
}

pub(crate) fn avg_pool1d_backward<R: Real>(g: &Tensor<R>, in_shape: &[usize], kernel: usize, stride: usize) -> Tensor<R> {
    let len = *in_shape.last().expect("rank >= 1");
    let rows = in_shape.iter().product::<usize>() / len;
    let out_len = (len - kernel) / stride + 1;
    let scale = R::one() / R::of(kernel as f64);
    let mut out = vec![R::zero(); rows * len];
    for r in 0..rows {
        let gr = &g.data()[r * out_len..(r + 1) * out_len];
        let orow = &mut out[r * len..(r + 1) * len];
        for (t, &gv) in gr.iter().enumerate() {
            let v = gv * scale;
            for o in &mut orow[t * stride..t * stride + kernel] {
                *o = *o + v;
            }
        }
    }
    Tensor::from_parts(in_shape.to_vec(), out)
}

/// Strided convolution `x [B,C_in,T] * w [C_out, C_in/groups, K] (+ bias)`.
pub fn conv1d<'t, R: Real>(
    x: &Var<'t, R>,
    w: &Var<'t, R>,
    bias: Option<&Var<'t, R>>,
    geom: &ConvGeom,
) -> Result<Var<'t, R>> {
    let out = conv1d_forward(&x.value, &w.value, bias.map(|b| &*b.value), geom)?;
    let needs = x.slot.is_some() || w.slot.is_some() || bias.is_some_and(|b| b.slot.is_some());
    Ok(x.tape.record(
        needs,
        || Op::Conv1d {
            x: x.slot,
            w: w.slot,
            b: bias.and_then(|b| b.slot),
            xv: x.value.clone(),
            wv: w.value.clone(),
            geom: *geom,
        },
        out,
    ))
}

/// Transposed convolution with weight `[C_out, C_in, K]`; output length
/// `(T - 1) * stride - 2 * pad + K`.
pub fn conv_transpose1d<'t, R: Real>(
    x: &Var<'t, R>,
    w: &Var<'t, R>,
    bias: Option<&Var<'t, R>>,
    geom: &TransposeGeom,
) -> Result<Var<'t, R>> {
    let out = conv_transpose1d_forward(&x.value, &w.value, bias.map(|b| &*b.value), geom)?;
    let needs = x.slot.is_some() || w.slot.is_some() || bias.is_some_and(|b| b.slot.is_some());
    Ok(x.tape.record(
        needs,
        || Op::ConvTranspose1d {
            x: x.slot,
            w: w.slot,
            b: bias.and_then(|b| b.slot),
            xv: x.value.clone(),
            wv: w.value.clone(),
            geom: *geom,
        },
        out,
    ))
}

/// Windowed mean over the last axis.
pub fn avg_pool1d<'t, R: Real>(x: &Var<'t, R>, kernel: usize, stride: usize) -> Result<Var<'t, R>> {
    let shape = x.shape().to_vec();
    let Some(&len) = shape.last() else {
        return Err(Error::Dimension("avg_pool1d on a scalar".into()));
    };
    let out_len = pool_len(len, kernel, stride)?;
    let rows = x.value.len() / len.max(1);
    let scale = R::one() / R::of(kernel as f64);
    let mut out = Vec::with_capacity(rows * out_len);
    for row in x.value.data().chunks(len) {
        for t in 0..out_len {
            let s: R = row[t * stride..t * stride + kernel].iter().copied().sum();
            out.push(s * scale);
        }
    }
    let mut oshape = shape.clone();
    *oshape.last_mut().expect("non-empty") = out_len;
    Ok(x.tape.record(
        x.slot.is_some(),
        || Op::AvgPool1d {
            a: x.slot,
            kernel,
            stride,
            in_shape: shape,
        },
        Tensor::from_parts(oshape, out),
    ))
}

/// Affine map `x [N] or [B,N]` with weight `[M, N]` and bias `[M]`.
pub fn dense<'t, R: Real>(x: &Var<'t, R>, w: &Var<'t, R>, bias: Option<&Var<'t, R>>) -> Result<Var<'t, R>> {
    let (batch, n, batched) = match *x.shape() {
        [n] => (1, n, false),
        [b, n] => (b, n, true),
        _ => {
            return Err(Error::Dimension(format!(
                "dense expects [N] or [B, N], got {:?}",
                x.shape()
            )))
        }
    };
    let [m, wn] = *w.shape() else {
        return Err(Error::Dimension(format!("dense weight must be [M, N], got {:?}", w.shape())));
    };
    if wn != n {
        return Err(Error::Dimension(format!(
            "dense: input size {n} does not match weight inner dimension {wn}"
        )));
    }
    let x3 = x.reshape(vec![batch, n, 1])?;
    let w3 = w.reshape(vec![m, n, 1])?;
    let y = conv1d(&x3, &w3, bias, &ConvGeom::default())?;
    if batched {
        y.reshape(vec![batch, m])
    } else {
        y.reshape(vec![m])
    }
}
