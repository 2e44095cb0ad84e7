use super::graph::{Graph, NodeId};
use super::store::{GradBuffer, ParamStore};
use super::tensor::{real, Scalar};
use crate::error::{Error, Result};

/// Default central-difference step.
pub const GRAD_CHECK_EPS: f64 = 1e-5;

/// Compares backward-pass gradients against central finite differences
/// for every entry of every parameter in `store`.
///
/// `build` must construct a scalar-valued graph from the current store
/// contents; it is re-invoked for each perturbed evaluation, so any
/// randomness inside it must be seeded per call. Returns the maximum of
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn grad_check<F, B>(store: &mut ParamStore<F>, eps: F, build: B) -> Result<F>
where
    F: Scalar,
    B: Fn(&mut Graph<F>, &ParamStore<F>) -> Result<NodeId>,
{
    if eps <= F::zero() {
        return Err(Error::Contract("grad_check eps must be positive".into()));
    }
    let mut graph = Graph::new();
    let out = build(&mut graph, store)?;
    if graph.value(out).len() != 1 {
        return Err(Error::Contract(
            "grad_check requires a scalar-valued function".into(),
        ));
    }
    graph.backward(out)?;
    store.zero_grads();
    let mut buf = GradBuffer::new(store);
    graph.accumulate_grads(&mut buf);
    buf.apply_to(store);

    let analytic: Vec<Vec<F>> = store
        .ids()
        .map(|id| store.get(id).grad().unwrap().to_vec())
        .collect();

    let floor = real::<F>(1e-8);
    let two = real::<F>(2.0);
    let mut max_err = F::zero();
    for id in store.ids().collect::<Vec<_>>() {
        #[allow(clippy::needless_range_loop)] // indexes three aligned buffers
        for i in 0..store.get(id).len() {
            let original = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = original + eps;
            let plus = eval(store, &build)?;
            store.get_mut(id).data_mut()[i] = original - eps;
            let minus = eval(store, &build)?;
            store.get_mut(id).data_mut()[i] = original;

            let numeric = (plus - minus) / (two * eps);
            let a = analytic[id.index()][i];
            let denom = floor.max(a.abs() + numeric.abs());
            let err = (a - numeric).abs() / denom;
            if err > max_err {
                max_err = err;
            }
        }
    }
    Ok(max_err)
}

fn eval<F, B>(store: &ParamStore<F>, build: &B) -> Result<F>
where
    F: Scalar,
    B: Fn(&mut Graph<F>, &ParamStore<F>) -> Result<NodeId>,
{
    let mut graph = Graph::new();
    let out = build(&mut graph, store)?;
    Ok(graph.scalar(out))
}
