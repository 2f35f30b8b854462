//! Finite-difference gradient checking.

use super::{Element, Graph, Tensor, Var};
use crate::error::Result;

/// Compare recorded gradients of a scalar-valued tensor function against
/// central finite differences, returning the worst per-element relative
/// error across all inputs.
///
/// The relative error of analytic `a` vs numeric `n` is
/// `|a - n| / max(|a|, |n|, floor)` with `floor = 1e-4 * max(1, |grads|_inf)`.
/// The floor keeps the denominator meaningful where central differences
/// cannot resolve finer: an element far below the gradient's scale carries
/// difference-quotient rounding noise comparable to its own magnitude, so
/// it is held to a tight absolute bound (tolerance x floor) instead of a
/// meaningless relative one. Exactly-zero gradients compare cleanly.
pub fn grad_check<T, F>(f: F, inputs: &[Tensor<T>], eps: f64) -> Result<f64>
where
    T: Element,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    // Analytic gradients via one recorded forward + backward.
    let params: Vec<Tensor<T>> = inputs
        .iter()
        .map(|t| Tensor::param(t.shape().clone(), t.data().to_vec()))
        .collect::<Result<_>>()?;
    let mut graph = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| graph.leaf(p)).collect();
    let out = f(&mut graph, &vars)?;
    graph.backward(out)?;
    let analytic: Vec<Vec<T>> = params
        .iter()
        .map(|p| p.grad().expect("param has grad"))
        .collect();

    let eval = |tensors: &[Tensor<T>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = tensors.iter().map(|t| g.leaf(t)).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).scalar_value()?.as_f64())
    };

    // Central differences, one element at a time.
    let mut numeric: Vec<Vec<f64>> = inputs
        .iter()
        .map(|t| vec![0.0; t.elem_count()])
        .collect();
    let mut work: Vec<Tensor<T>> = inputs.to_vec();
    for k in 0..inputs.len() {
        for j in 0..inputs[k].elem_count() {
            let base = inputs[k].data()[j].as_f64();
            let mut plus = inputs[k].data().to_vec();
            plus[j] = T::from_f64(base + eps);
            work[k] = inputs[k].with_data(plus)?;
            let f_plus = eval(&work)?;
            let mut minus = inputs[k].data().to_vec();
            minus[j] = T::from_f64(base - eps);
            work[k] = inputs[k].with_data(minus)?;
            let f_minus = eval(&work)?;
            work[k] = inputs[k].clone();
            numeric[k][j] = (f_plus - f_minus) / (2.0 * eps);
        }
    }

    let analytic_f64: Vec<Vec<f64>> = analytic
        .iter()
        .map(|g| g.iter().map(|v| v.as_f64()).collect())
        .collect();
    let mut worst = 0.0f64;
    for (a, n) in analytic_f64.iter().zip(&numeric) {
        worst = worst.max(max_rel_err(a, n));
    }
    Ok(worst)
}

/// Worst per-element relative error between two gradient vectors, using the
/// floored denominator described on [`grad_check`].
pub fn max_rel_err(a: &[f64], n: &[f64]) -> f64 {
    let inf = a
        .iter()
        .chain(n)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-4 * inf.max(1.0);
    a.iter()
        .zip(n)
        .map(|(&ai, &ni)| (ai - ni).abs() / ai.abs().max(ni.abs()).max(floor))
        .fold(0.0, f64::max)
}
