//! Central finite-difference checks of reverse-mode gradients.

use std::collections::HashMap;

use crate::autodiff::param::{ParamId, ParamStore};
use crate::autodiff::tape::{Gradients, Tape, Var};
use crate::autodiff::{Real, Tensor};
use crate::error::Result;

/// `|a - n| / max(|a|, |n|, 1e-12)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12)
}

/// Max relative error between the analytic gradient of `f` at `point` and
/// central differences with the given `step`, over every coordinate.
pub fn grad_check<F>(f: F, point: &Tensor<f64>, step: f64) -> Result<f64>
where
    F: for<'t> Fn(&Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    let coords: Vec<usize> = (0..point.len()).collect();
    grad_check_at(f, point, step, &coords)
}

/// As [`grad_check`], restricted to the listed coordinates.
pub fn grad_check_at<F>(f: F, point: &Tensor<f64>, step: f64, coords: &[usize]) -> Result<f64>
where
    F: for<'t> Fn(&Var<'t, f64>) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let x = tape.leaf(point.clone());
    let loss = f(&x)?;
    let grads = tape.backward(&loss)?;
    let analytic = grads.wrt(&x).cloned().unwrap_or_else(|| Tensor::zeros(point.shape().to_vec()));

    let eval = |p: Tensor<f64>| -> Result<f64> {
        let tape = Tape::new();
        let x = tape.constant(p);
        Ok(f(&x)?.item())
    };
    let mut worst = 0.0f64;
    for &i in coords {
        let mut plus = point.clone();
        plus.data_mut()[i] += step;
        let mut minus = point.clone();
        minus.data_mut()[i] -= step;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * step);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}

/// A scalar objective of parameters that can be evaluated in any precision,
/// so analytic gradients in `f32` can be compared against an `f64` oracle.
pub trait Objective {
    fn eval<'t, R: Real>(&self, tape: &'t Tape<R>, params: &ParamStore<R>) -> Result<Var<'t, R>>;
}

/// Several scalar objectives computed by one forward pass.
pub trait MultiObjective {
    fn eval_terms<'t, R: Real>(&self, tape: &'t Tape<R>, params: &ParamStore<R>) -> Result<Vec<Var<'t, R>>>;
}

struct Single<'a, O>(&'a O);

impl<O: Objective> MultiObjective for Single<'_, O> {
    fn eval_terms<'t, R: Real>(&self, tape: &'t Tape<R>, params: &ParamStore<R>) -> Result<Vec<Var<'t, R>>> {
        Ok(vec![self.0.eval(tape, params)?])
    }
}

/// Per-tensor outcome of a parameter gradient check.
#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub name: String,
    /// coordinates compared
    pub coords: usize,
    /// candidates passed over because every trial step crossed a kink
    pub skipped: usize,
    pub max_rel_error: f64,
    /// analytic and numeric derivative at the worst coordinate
    pub worst: Option<(f64, f64)>,
}

/// Analytic parameter gradients of `obj` in precision `R`.
pub fn param_gradients<R: Real, O: Objective>(obj: &O, params: &ParamStore<R>) -> Result<Gradients<R>> {
    let tape = Tape::new();
    let loss = obj.eval(&tape, params)?;
    tape.backward(&loss)
}

/// Analytic gradients of every term of `obj`, one backward pass each.
pub fn term_gradients<R: Real, O: MultiObjective>(obj: &O, params: &ParamStore<R>) -> Result<Vec<Gradients<R>>> {
    let count = obj.eval_terms(&Tape::new(), params)?.len();
    (0..count)
        .map(|k| {
            let tape = Tape::new();
            let terms = obj.eval_terms(&tape, params)?;
            tape.backward(&terms[k])
        })
        .collect()
}

fn eval_with_kinks<O: MultiObjective>(obj: &O, params: &ParamStore<f64>) -> Result<(Vec<f64>, u64)> {
    let tape = Tape::new();
    let v = obj.eval_terms(&tape, params)?.iter().map(|t| t.item()).collect();
    Ok((v, tape.kink_signature()))
}

/// Derivative of every term along one coordinate.
///
/// Each level `h` combines central differences at `h` and `h/2` into the
/// Richardson estimate `(4 D(h/2) - D(h)) / 3`. Levels `h`, `h/10`, `h/100`
/// are tried in order and the first two whose probes all stay on the base
/// point's smooth piece are kept. Per term, the level whose extrapolation
/// moved its half-step estimate least is the more converged one: a large
/// step loses to curvature, a small one to rounding noise. `None` if every
/// level crosses a kink.
fn richardson_probe<O: MultiObjective>(
    obj: &O,
    work: &mut ParamStore<f64>,
    id: ParamId,
    i: usize,
    step: f64,
    base: u64,
) -> Result<Option<Vec<f64>>> {
    let orig = work.value(id).data()[i];
    // (estimate, correction) per term, per accepted level
    let mut levels: Vec<Vec<(f64, f64)>> = Vec::new();
    for h in [step, step / 10.0, step / 100.0] {
        if levels.len() == 2 {
            break;
        }
        let mut vals = Vec::with_capacity(4);
        for d in [h, -h, h / 2.0, -h / 2.0] {
            work.data_mut(id)[i] = orig + d;
            let (v, k) = eval_with_kinks(obj, work)?;
            work.data_mut(id)[i] = orig;
            if k != base {
                break;
            }
            vals.push(v);
        }
        if vals.len() < 4 {
            continue;
        }
        levels.push(
            (0..vals[0].len())
                .map(|t| {
                    let full = (vals[0][t] - vals[1][t]) / (2.0 * h);
                    let half = (vals[2][t] - vals[3][t]) / h;
                    let r = (4.0 * half - full) / 3.0;
                    (r, (r - half).abs())
                })
                .collect(),
        );
    }
    Ok(match levels.as_slice() {
        [] => None,
        [one] => Some(one.iter().map(|e| e.0).collect()),
        [a, b, ..] => Some(a.iter().zip(b).map(|(x, y)| if x.1 <= y.1 { x.0 } else { y.0 }).collect()),
    })
}

/// Analytic gradient of term `k` with respect to a parameter, in `f64`.
pub type GradientSource<'a> = &'a dyn Fn(usize, ParamId) -> Option<Tensor<f64>>;

/// Compare analytic gradients against central differences computed in `f64`
/// on the same weights. For each term and each tensor in `ids`, the
/// `per_tensor` coordinates of largest analytic magnitude under the first
/// source are probed. Each probe evaluates every term at once and is shared
/// by all terms and sources. Returns `report[source][term][tensor]`.
///
/// A difference quotient is only meaningful when every probe stays on the
/// same smooth piece as the base point, so probes that change the kink
/// signature are retried with smaller steps, and the coordinate is passed
/// over for the next-largest one if they all cross. See
/// [`richardson_probe`] for the step selection.
pub fn multi_param_grad_check<O: MultiObjective>(
    obj: &O,
    params: &ParamStore<f64>,
    sources: &[GradientSource<'_>],
    ids: &[ParamId],
    per_tensor: usize,
    step: f64,
) -> Result<Vec<Vec<Vec<TensorCheck>>>> {
    let mut work = params.clone();
    let (base_values, base) = eval_with_kinks(obj, params)?;
    let terms = base_values.len();
    let per_tensor = per_tensor.max(1);
    let mut report = vec![vec![Vec::with_capacity(ids.len()); terms]; sources.len()];
    for &id in ids {
        let shape = params.value(id).shape().to_vec();
        let mut probes: HashMap<usize, Option<Vec<f64>>> = HashMap::new();
        for term in 0..terms {
            let grads: Vec<Tensor<f64>> = sources
                .iter()
                .map(|s| s(term, id).unwrap_or_else(|| Tensor::zeros(shape.clone())))
                .collect();
            let lead = &grads[0];
            let mut order: Vec<usize> = (0..lead.len()).collect();
            order.sort_by(|&i, &j| lead.data()[j].abs().total_cmp(&lead.data()[i].abs()).then(i.cmp(&j)));
            order.truncate(4 * per_tensor);
            let mut worst = vec![(0.0f64, None); sources.len()];
            let (mut coords, mut skipped) = (0, 0);
            for &i in &order {
                if coords == per_tensor {
                    break;
                }
                if let std::collections::hash_map::Entry::Vacant(e) = probes.entry(i) {
                    let numeric = richardson_probe(obj, &mut work, id, i, step, base)?;
                    e.insert(numeric);
                }
                match &probes[&i] {
                    Some(n) => {
                        for (w, g) in worst.iter_mut().zip(&grads) {
                            let e = relative_error(g.data()[i], n[term]);
                            if e >= w.0 {
                                *w = (e, Some((g.data()[i], n[term])));
                            }
                        }
                        coords += 1;
                    }
                    None => skipped += 1,
                }
            }
            for (s, (e, pair)) in worst.into_iter().enumerate() {
                report[s][term].push(TensorCheck {
                    name: params.name(id).to_string(),
                    coords,
                    skipped,
                    max_rel_error: e,
                    worst: pair,
                });
            }
        }
    }
    Ok(report)
}

/// Single-objective, single-source form of [`multi_param_grad_check`].
pub fn param_grad_check<O: Objective>(
    obj: &O,
    params: &ParamStore<f64>,
    analytic: &dyn Fn(ParamId) -> Option<Tensor<f64>>,
    ids: &[ParamId],
    per_tensor: usize,
    step: f64,
) -> Result<Vec<TensorCheck>> {
    let source = |_: usize, id: ParamId| analytic(id);
    let mut r = multi_param_grad_check(&Single(obj), params, &[&source], ids, per_tensor, step)?;
    Ok(r.remove(0).remove(0))
}
