use std::sync::Arc;

use crate::autodiff::tape::{Op, UnaryBackward, Var};
use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};

/// Elementwise nonlinearities with a saved-value backward rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Neg,
    Tanh,
    Sigmoid,
    /// tanh approximation of GELU
    Gelu,
    LeakyRelu(f64),
    Exp,
    Abs,
    Square,
    /// `ln(1 + e^x)`, evaluated stably
    Softplus,
    /// `ln(max(x, floor))`
    LogFloor(f64),
}

/// Activation choices exposed on network layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Tanh,
    Sigmoid,
    /// negative slope 0.2
    LeakyRelu,
    /// channels split in halves `[a; b]`, output `tanh(a) * sigmoid(b)`
    GatedTanh,
}

pub const LEAKY_SLOPE: f64 = 0.2;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

#[inline]
fn sigmoid<R: Real>(x: R) -> R {
    if x >= R::zero() {
        R::one() / (R::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (R::one() + e)
    }
}

#[inline]
fn softplus<R: Real>(x: R) -> R {
    x.max(R::zero()) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn gelu<R: Real>(x: R) -> R {
    let c = R::of(GELU_C);
    let k = R::of(GELU_K);
    let half = R::of(0.5);
    half * x * (R::one() + (c * (x + k * x * x * x)).tanh())
}

#[inline]
fn gelu_grad<R: Real>(x: R) -> R {
    let c = R::of(GELU_C);
    let k = R::of(GELU_K);
    let half = R::of(0.5);
    let t = (c * (x + k * x * x * x)).tanh();
    half * (R::one() + t) + half * x * (R::one() - t * t) * c * (R::one() + R::of(3.0) * k * x * x)
}

fn unary_forward<R: Real>(kind: Unary, x: &Tensor<R>) -> Tensor<R> {
    match kind {
        Unary::Neg => x.map(|v| -v),
        Unary::Tanh => x.map(|v| v.tanh()),
        Unary::Sigmoid => x.map(sigmoid),
        Unary::Gelu => x.map(gelu),
        Unary::LeakyRelu(slope) => {
            let s = R::of(slope);
            x.map(|v| if v > R::zero() { v } else { v * s })
        }
        Unary::Exp => x.map(|v| v.exp()),
        Unary::Abs => x.map(|v| v.abs()),
        Unary::Square => x.map(|v| v * v),
        Unary::Softplus => x.map(softplus),
        Unary::LogFloor(floor) => {
            let f = R::of(floor);
            x.map(|v| v.max(f).ln())
        }
    }
}

pub(crate) fn unary_backward<R: Real>(kind: Unary, input: &Tensor<R>, output: &Tensor<R>, g: &Tensor<R>) -> Tensor<R> {
    let x = input.data();
    let y = output.data();
    let gd = g.data();
    let data: Vec<R> = match kind {
        Unary::Neg => gd.iter().map(|&v| -v).collect(),
        Unary::Tanh => gd.iter().zip(y).map(|(&g, &y)| g * (R::one() - y * y)).collect(),
        Unary::Sigmoid => gd.iter().zip(y).map(|(&g, &y)| g * y * (R::one() - y)).collect(),
        Unary::Gelu => gd.iter().zip(x).map(|(&g, &x)| g * gelu_grad(x)).collect(),
        Unary::LeakyRelu(slope) => {
            let s = R::of(slope);
            gd.iter()
                .zip(x)
                .map(|(&g, &x)| if x > R::zero() { g } else { g * s })
                .collect()
        }
        Unary::Exp => gd.iter().zip(y).map(|(&g, &y)| g * y).collect(),
        Unary::Abs => gd
            .iter()
            .zip(x)
            .map(|(&g, &x)| {
                if x > R::zero() {
                    g
                } else if x < R::zero() {
                    -g
                } else {
                    R::zero()
                }
            })
            .collect(),
        Unary::Square => gd.iter().zip(x).map(|(&g, &x)| g * (x + x)).collect(),
        Unary::Softplus => gd.iter().zip(x).map(|(&g, &x)| g * sigmoid(x)).collect(),
        Unary::LogFloor(floor) => {
            let f = R::of(floor);
            gd.iter()
                .zip(x)
                .map(|(&g, &x)| if x > f { g / x } else { R::zero() })
                .collect()
        }
    };
    Tensor::from_parts(g.shape().to_vec(), data)
}

pub(crate) fn mul_values<R: Real>(a: &Tensor<R>, b: &Tensor<R>) -> Tensor<R> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).collect();
    Tensor::from_parts(a.shape().to_vec(), data)
}

/// `[B,C,T] -> [B,C,1]` summing the last axis.
pub(crate) fn sum_over_time<R: Real>(g: &Tensor<R>, time: usize) -> Tensor<R> {
    let rows = g.len() / time;
    let mut shape = g.shape().to_vec();
    *shape.last_mut().expect("rank >= 1") = 1;
    let data = g.data().chunks(time).map(|c| c.iter().copied().sum()).collect::<Vec<R>>();
    debug_assert_eq!(data.len(), rows);
    Tensor::from_parts(shape, data)
}

fn split_channels(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::Shape(format!(
            "expected [.., C, T] tensor, got shape {shape:?}"
        )));
    }
    let t = shape[shape.len() - 1];
    let c = shape[shape.len() - 2];
    let outer = shape[..shape.len() - 2].iter().product();
    Ok((outer, c, t))
}

pub(crate) fn gated_tanh_backward<R: Real>(input: &Tensor<R>, g: &Tensor<R>) -> Tensor<R> {
    let (outer, c2, t) = split_channels(input.shape()).expect("validated in forward");
    let c = c2 / 2;
    let x = input.data();
    let gd = g.data();
    let mut out = vec![R::zero(); x.len()];
    for o in 0..outer {
        for ch in 0..c {
            let a_off = (o * c2 + ch) * t;
            let b_off = (o * c2 + ch + c) * t;
            let g_off = (o * c + ch) * t;
            for i in 0..t {
                let ta = x[a_off + i].tanh();
                let sb = sigmoid(x[b_off + i]);
                let gv = gd[g_off + i];
                out[a_off + i] = gv * sb * (R::one() - ta * ta);
                out[b_off + i] = gv * ta * sb * (R::one() - sb);
            }
        }
    }
    Tensor::from_parts(input.shape().to_vec(), out)
}

/// Per-output-channel norms of `v` (leading axis).
pub(crate) fn row_norms<R: Real>(v: &Tensor<R>) -> Vec<R> {
    let rows = v.shape()[0];
    let width = v.len() / rows.max(1);
    v.data()
        .chunks(width.max(1))
        .map(|r| r.iter().fold(R::zero(), |s, &x| s + x * x).sqrt())
        .take(rows)
        .collect()
}

pub(crate) fn weight_norm_forward<R: Real>(v: &Tensor<R>, g: &Tensor<R>) -> Result<Tensor<R>> {
    if v.rank() == 0 || g.len() != v.shape()[0] {
        return Err(Error::Dimension(format!(
            "weight norm: direction {:?} vs scale {:?}",
            v.shape(),
            g.shape()
        )));
    }
    let norms = row_norms(v);
    if let Some(bad) = norms.iter().position(|n| *n <= R::zero()) {
        return Err(Error::Contract(format!(
            "weight norm direction row {bad} has zero norm"
        )));
    }
    let width = v.len() / v.shape()[0];
    let mut out = Vec::with_capacity(v.len());
    for (o, row) in v.data().chunks(width).enumerate() {
        let s = g.data()[o] / norms[o];
        out.extend(row.iter().map(|&x| x * s));
    }
    Ok(Tensor::from_parts(v.shape().to_vec(), out))
}

pub(crate) fn weight_norm_backward<R: Real>(v: &Tensor<R>, g: &Tensor<R>, gw: &Tensor<R>) -> (Tensor<R>, Tensor<R>) {
    let norms = row_norms(v);
    let width = v.len() / v.shape()[0];
    let mut dv = Vec::with_capacity(v.len());
    let mut dg = Vec::with_capacity(g.len());
    for (o, (row, grow)) in v.data().chunks(width).zip(gw.data().chunks(width)).enumerate() {
        let n = norms[o];
        let proj = row.iter().zip(grow).fold(R::zero(), |s, (&x, &y)| s + x * y) / n;
        dg.push(proj);
        let scale = g.data()[o] / n;
        dv.extend(row.iter().zip(grow).map(|(&x, &y)| scale * (y - x / n * proj)));
    }
    (
        Tensor::from_parts(v.shape().to_vec(), dv),
        Tensor::from_parts(g.shape().to_vec(), dg),
    )
}

pub(crate) fn select_channel_backward<R: Real>(g: &Tensor<R>, index: &[usize], in_shape: &[usize]) -> Tensor<R> {
    let (b, c, t) = (in_shape[0], in_shape[1], in_shape[2]);
    let mut out = Tensor::zeros(in_shape.to_vec());
    let od = out.data_mut();
    for (bi, &ch) in index.iter().enumerate().take(b) {
        let src = &g.data()[bi * t..(bi + 1) * t];
        od[(bi * c + ch) * t..(bi * c + ch + 1) * t].copy_from_slice(src);
    }
    out
}

pub(crate) fn gather_batch_backward<R: Real>(g: &Tensor<R>, index: &[usize], in_shape: &[usize]) -> Tensor<R> {
    let item = in_shape[1..].iter().product::<usize>();
    let mut out = Tensor::zeros(in_shape.to_vec());
    let od = out.data_mut();
    for (i, &src) in index.iter().enumerate() {
        let gs = &g.data()[i * item..(i + 1) * item];
        for (o, &v) in od[src * item..(src + 1) * item].iter_mut().zip(gs) {
            *o = *o + v;
        }
    }
    out
}

pub(crate) fn normalize_columns_backward<R: Real>(
    input: &Tensor<R>,
    output: &Tensor<R>,
    eps: R,
    g: &Tensor<R>,
) -> Tensor<R> {
    let (outer, c, t) = split_channels(input.shape()).expect("validated in forward");
    let x = input.data();
    let y = output.data();
    let gd = g.data();
    let mut out = vec![R::zero(); x.len()];
    for o in 0..outer {
        let base = o * c * t;
        for ti in 0..t {
            let mut n2 = R::zero();
            let mut yg = R::zero();
            for ch in 0..c {
                let i = base + ch * t + ti;
                n2 = n2 + x[i] * x[i];
                yg = yg + y[i] * gd[i];
            }
            let n = n2.sqrt();
            for ch in 0..c {
                let i = base + ch * t + ti;
                out[i] = if n > eps { (gd[i] - y[i] * yg) / n } else { gd[i] / eps };
            }
        }
    }
    Tensor::from_parts(input.shape().to_vec(), out)
}

fn same_shape<R: Real>(op: &str, a: &Tensor<R>, b: &Tensor<R>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

impl<'t, R: Real> Var<'t, R> {
    fn unary(&self, kind: Unary) -> Var<'t, R> {
        let x = self.value.data().iter();
        match kind {
            Unary::LeakyRelu(_) | Unary::Abs => self.tape.note_kinks(x.map(|&v| v > R::zero())),
            Unary::LogFloor(f) => {
                let f = R::of(f);
                self.tape.note_kinks(x.map(|&v| v > f))
            }
            _ => {}
        }
        let out = unary_forward(kind, &self.value);
        let input = self.value.clone();
        if self.slot.is_none() {
            return self.tape.constant(out);
        }
        let out = Arc::new(out);
        let slot = self.tape.push(
            Op::Unary {
                a: self.slot,
                kind,
                input,
                output: out.clone(),
            },
            out.shape().to_vec(),
        );
        Var {
            tape: self.tape,
            slot,
            value: out,
        }
    }

    pub fn add(&self, other: &Var<'t, R>) -> Result<Var<'t, R>> {
        same_shape("add", &self.value, &other.value)?;
        let data = self.value.data().iter().zip(other.value.data()).map(|(&a, &b)| a + b).collect();
        let out = Tensor::from_parts(self.value.shape().to_vec(), data);
        Ok(self.tape.record(
            self.slot.is_some() || other.slot.is_some(),
            || Op::Add(self.slot, other.slot),
            out,
        ))
    }

    pub fn sub(&self, other: &Var<'t, R>) -> Result<Var<'t, R>> {
        same_shape("sub", &self.value, &other.value)?;
        let data = self.value.data().iter().zip(other.value.data()).map(|(&a, &b)| a - b).collect();
        let out = Tensor::from_parts(self.value.shape().to_vec(), data);
        Ok(self.tape.record(
            self.slot.is_some() || other.slot.is_some(),
            || Op::Sub(self.slot, other.slot),
            out,
        ))
    }

    pub fn mul(&self, other: &Var<'t, R>) -> Result<Var<'t, R>> {
        same_shape("mul", &self.value, &other.value)?;
        let out = mul_values(&self.value, &other.value);
        Ok(self.tape.record(
            self.slot.is_some() || other.slot.is_some(),
            || Op::Mul {
                a: self.slot,
                b: other.slot,
                av: self.value.clone(),
                bv: other.value.clone(),
            },
            out,
        ))
    }

    /// `self [B,C,T] + other [B,C,1]` broadcast over time.
    pub fn add_time_broadcast(&self, other: &Var<'t, R>) -> Result<Var<'t, R>> {
        let s = self.value.shape();
        let o = other.value.shape();
        if s.len() != 3 || o.len() != 3 || o[0] != s[0] || o[1] != s[1] || o[2] != 1 {
            return Err(Error::Dimension(format!(
                "time broadcast: {s:?} + {o:?} (expected [B,C,1])"
            )));
        }
        let time = s[2];
        let mut data = self.value.data().to_vec();
        for (row, &b) in data.chunks_mut(time).zip(other.value.data()) {
            for v in row {
                *v = *v + b;
            }
        }
        let out = Tensor::from_parts(s.to_vec(), data);
        Ok(self.tape.record(
            self.slot.is_some() || other.slot.is_some(),
            || Op::AddTimeBroadcast {
                a: self.slot,
                b: other.slot,
                time,
            },
            out,
        ))
    }

    pub fn scale(&self, factor: f64) -> Var<'t, R> {
        let f = R::of(factor);
        let out = self.value.map(|v| v * f);
        self.tape.record(self.slot.is_some(), || Op::Scale(self.slot, f), out)
    }

    pub fn neg(&self) -> Var<'t, R> {
        self.unary(Unary::Neg)
    }

    pub fn tanh(&self) -> Var<'t, R> {
        self.unary(Unary::Tanh)
    }

    pub fn sigmoid(&self) -> Var<'t, R> {
        self.unary(Unary::Sigmoid)
    }

    pub fn gelu(&self) -> Var<'t, R> {
        self.unary(Unary::Gelu)
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<'t, R> {
        self.unary(Unary::LeakyRelu(slope))
    }

    pub fn exp(&self) -> Var<'t, R> {
        self.unary(Unary::Exp)
    }

    pub fn abs(&self) -> Var<'t, R> {
        self.unary(Unary::Abs)
    }

    pub fn square(&self) -> Var<'t, R> {
        self.unary(Unary::Square)
    }

    pub fn softplus(&self) -> Var<'t, R> {
        self.unary(Unary::Softplus)
    }

    pub fn log_floor(&self, floor: f64) -> Var<'t, R> {
        self.unary(Unary::LogFloor(floor))
    }

    /// `tanh(a) * sigmoid(b)` for channel halves `[a; b]` of a `[.., 2C, T]` tensor.
    pub fn gated_tanh(&self) -> Result<Var<'t, R>> {
        let (outer, c2, t) = split_channels(self.value.shape())?;
        if c2 % 2 != 0 {
            return Err(Error::Shape(format!(
                "gated tanh needs an even channel count, got {c2}"
            )));
        }
        let c = c2 / 2;
        let x = self.value.data();
        let mut out = Vec::with_capacity(outer * c * t);
        for o in 0..outer {
            for ch in 0..c {
                let a = &x[(o * c2 + ch) * t..(o * c2 + ch + 1) * t];
                let b = &x[(o * c2 + ch + c) * t..(o * c2 + ch + c + 1) * t];
                out.extend(a.iter().zip(b).map(|(&a, &b)| a.tanh() * sigmoid(b)));
            }
        }
        let mut shape = self.value.shape().to_vec();
        let n = shape.len();
        shape[n - 2] = c;
        let out = Tensor::from_parts(shape, out);
        Ok(self.tape.record(
            self.slot.is_some(),
            || Op::GatedTanh {
                a: self.slot,
                input: self.value.clone(),
            },
            out,
        ))
    }

    pub fn activation(&self, kind: Activation) -> Result<Var<'t, R>> {
        Ok(match kind {
            Activation::Gelu => self.gelu(),
            Activation::Tanh => self.tanh(),
            Activation::Sigmoid => self.sigmoid(),
            Activation::LeakyRelu => self.leaky_relu(LEAKY_SLOPE),
            Activation::GatedTanh => return self.gated_tanh(),
        })
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&self) -> Var<'t, R> {
        let out = Tensor::scalar(self.value.sum());
        self.tape.record(
            self.slot.is_some(),
            || Op::Sum {
                a: self.slot,
                shape: self.value.shape().to_vec(),
            },
            out,
        )
    }

    /// Mean of all elements, as a scalar.
    pub fn mean(&self) -> Var<'t, R> {
        let n = self.value.len().max(1) as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Var<'t, R>> {
        let out = (*self.value).clone().reshape(shape)?;
        Ok(self.tape.record(
            self.slot.is_some(),
            || Op::Reshape {
                a: self.slot,
                shape: self.value.shape().to_vec(),
            },
            out,
        ))
    }

    /// Pick channel `index[b]` of every batch item: `[B,C,T] -> [B,1,T]`.
    pub fn select_channel(&self, index: &[usize]) -> Result<Var<'t, R>> {
        let s = self.value.shape();
        if s.len() != 3 || index.len() != s[0] {
            return Err(Error::Dimension(format!(
                "select_channel: shape {s:?} with {} indices",
                index.len()
            )));
        }
        let (b, c, t) = (s[0], s[1], s[2]);
        if let Some(&bad) = index.iter().find(|&&i| i >= c) {
            return Err(Error::Index(format!("branch {bad} out of range for {c} branches")));
        }
        let mut data = Vec::with_capacity(b * t);
        for (bi, &ch) in index.iter().enumerate() {
            data.extend_from_slice(&self.value.data()[(bi * c + ch) * t..(bi * c + ch + 1) * t]);
        }
        let out = Tensor::from_parts(vec![b, 1, t], data);
        Ok(self.tape.record(
            self.slot.is_some(),
            || Op::SelectChannel {
                a: self.slot,
                index: index.to_vec(),
                in_shape: s.to_vec(),
            },
            out,
        ))
    }

    /// Rows of the leading (batch) axis in the order of `index`.
    pub fn gather_batch(&self, index: &[usize]) -> Result<Var<'t, R>> {
        let s = self.value.shape();
        if s.is_empty() {
            return Err(Error::Dimension("gather_batch on a scalar".into()));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= s[0]) {
            return Err(Error::Index(format!("batch index {bad} out of range for {}", s[0])));
        }
        let item: usize = s[1..].iter().product();
        let mut data = Vec::with_capacity(index.len() * item);
        for &i in index {
            data.extend_from_slice(&self.value.data()[i * item..(i + 1) * item]);
        }
        let mut shape = s.to_vec();
        shape[0] = index.len();
        let out = Tensor::from_parts(shape, data);
        Ok(self.tape.record(
            self.slot.is_some(),
            || Op::GatherBatch {
                a: self.slot,
                index: index.to_vec(),
                in_shape: s.to_vec(),
            },
            out,
        ))
    }

    /// Divide every time column of a `[.., C, T]` tensor by `max(||column||, eps)`.
    pub fn normalize_columns(&self, eps: f64) -> Result<Var<'t, R>> {
        let (outer, c, t) = split_channels(self.value.shape())?;
        let e = R::of(eps);
        let x = self.value.data();
        let mut out = vec![R::zero(); x.len()];
        for o in 0..outer {
            let base = o * c * t;
            for ti in 0..t {
                let n = (0..c)
                    .map(|ch| x[base + ch * t + ti])
                    .fold(R::zero(), |s, v| s + v * v)
                    .sqrt()
                    .max(e);
                for ch in 0..c {
                    out[base + ch * t + ti] = x[base + ch * t + ti] / n;
                }
            }
        }
        let out = Arc::new(Tensor::from_parts(self.value.shape().to_vec(), out));
        if self.slot.is_none() {
            return Ok(self.tape.constant_arc(out));
        }
        let slot = self.tape.push(
            Op::NormalizeColumns {
                a: self.slot,
                input: self.value.clone(),
                output: out.clone(),
                eps: e,
            },
            out.shape().to_vec(),
        );
        Ok(Var {
            tape: self.tape,
            slot,
            value: out,
        })
    }

    /// Attach an externally computed value with its own backward rule.
    pub fn custom(&self, value: Tensor<R>, rule: impl UnaryBackward<R> + 'static) -> Var<'t, R> {
        self.tape.record(
            self.slot.is_some(),
            || Op::Custom {
                a: self.slot,
                rule: Box::new(rule),
            },
            value,
        )
    }
}

/// Effective weight `g * v / ||v||` per output channel (leading axis).
pub fn weight_norm<'t, R: Real>(v: &Var<'t, R>, g: &Var<'t, R>) -> Result<Var<'t, R>> {
    let out = weight_norm_forward(&v.value, &g.value)?;
    Ok(v.tape.record(
        v.slot.is_some() || g.slot.is_some(),
        || Op::WeightNorm {
            v: v.slot,
            g: g.slot,
            vv: v.value.clone(),
            gv: g.value.clone(),
        },
        out,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, Tape};

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn activation_values() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(t(&[1], &[0.0]));
        assert_eq!(x.tanh().item(), 0.0);
        assert_eq!(x.sigmoid().item(), 0.5);
        let m = tape.constant(t(&[1], &[-1.0]));
        assert!((m.activation(Activation::LeakyRelu).unwrap().item() + 0.2).abs() < 1e-15);
    }

    #[test]
    fn gated_tanh_matches_definition() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(t(&[1, 2, 2], &[0.3, -0.7, 1.1, -0.4]));
        let y = x.gated_tanh().unwrap();
        assert_eq!(y.shape(), &[1, 1, 2]);
        let expect = |a: f64, b: f64| a.tanh() / (1.0 + (-b).exp());
        assert!((y.value().data()[0] - expect(0.3, 1.1)).abs() < 1e-15);
        assert!((y.value().data()[1] - expect(-0.7, -0.4)).abs() < 1e-15);
    }

    #[test]
    fn gated_tanh_rejects_odd_channels() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(vec![1, 3, 4]));
        assert!(matches!(x.gated_tanh(), Err(Error::Shape(_))));
    }

    #[test]
    fn gated_tanh_gradient() {
        let point = Tensor::from_fn(vec![2, 4, 5], |i| ((i as f64) * 0.37).sin());
        let err = grad_check(|x| Ok(x.gated_tanh()?.square().sum()), &point, 1e-5).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn unary_gradients() {
        let point = Tensor::from_fn(vec![9], |i| (i as f64) * 0.41 - 1.7);
        for f in [
            Unary::Tanh,
            Unary::Sigmoid,
            Unary::Gelu,
            Unary::Exp,
            Unary::Softplus,
            Unary::Square,
        ] {
            let err = grad_check(|x| Ok(x.unary(f).square().sum()), &point, 1e-5).unwrap();
            assert!(err < 1e-6, "{f:?}: {err}");
        }
    }

    #[test]
    fn softplus_is_stable() {
        let tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::new(vec![3], vec![-200.0f32, 0.0, 200.0]).unwrap());
        let y = x.softplus();
        let d = y.value().data();
        assert_eq!(d[0], 0.0);
        assert!((d[1] - std::f32::consts::LN_2).abs() < 1e-7);
        assert_eq!(d[2], 200.0);
    }

    #[test]
    fn weight_norm_row_norms_equal_scale() {
        let v = Tensor::from_fn(vec![3, 2, 4], |i| ((i * 7 % 11) as f64) - 4.5);
        let g = t(&[3], &[0.5, -2.0, 3.0]);
        let w = weight_norm_forward(&v, &g).unwrap();
        for (n, gv) in row_norms(&w).iter().zip(g.data()) {
            assert!((n - gv.abs()).abs() <= 1e-5 * gv.abs());
        }
    }

    #[test]
    fn weight_norm_gradient() {
        let g0 = t(&[2], &[0.7, -1.3]);
        let point = Tensor::from_fn(vec![2, 3], |i| (i as f64 * 0.9).cos() + 0.1);
        let err = grad_check(
            |v| {
                let g = v.tape().constant(g0.clone());
                Ok(weight_norm(v, &g)?.square().scale(0.5).mul(&weight_norm(v, &g)?)?.sum())
            },
            &point,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn normalize_columns_gradient() {
        let point = Tensor::from_fn(vec![2, 3, 4], |i| ((i as f64) * 1.3).sin());
        let w = Tensor::from_fn(vec![2, 3, 4], |i| (i as f64) * 0.1 - 1.0);
        let err = grad_check(
            |x| {
                let w = x.tape().constant(w.clone());
                Ok(x.normalize_columns(1e-8)?.mul(&w)?.sum())
            },
            &point,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn select_and_gather() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(vec![2, 3, 2], |i| i as f64));
        let s = x.select_channel(&[2, 0]).unwrap();
        assert_eq!(s.value().data(), &[4.0, 5.0, 6.0, 7.0]);
        assert!(matches!(x.select_channel(&[3, 0]), Err(Error::Index(_))));
        let g = x.gather_batch(&[1, 1]).unwrap();
        let loss = s.sum().add(&g.sum()).unwrap();
        let grads = tape.backward(&loss).unwrap();
        let gx = grads.wrt(&x).unwrap();
        assert_eq!(gx.data(), &[0., 0., 0., 0., 1., 1., 3., 3., 2., 2., 2., 2.]);
    }
}
