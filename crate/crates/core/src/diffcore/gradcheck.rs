use super::graph::{Graph, Var};
use super::params::ParamStore;
use crate::error::Result;

/// Worst relative error per parameter tensor.
#[derive(Debug, Clone, Default)]
pub struct GradReport {
    pub entries: Vec<(String, f64)>,
}

impl GradReport {
    pub fn max_error(&self) -> f64 {
        self.entries.iter().map(|(_, e)| *e).fold(0.0, f64::max)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn worst(&self) -> Option<&(String, f64)> {
        self.entries.iter().max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// Compares reverse-mode gradients of the scalar built by `loss` against
/// central differences with step `h`. The relative error of each element is
/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn check_gradients<F>(params: &ParamStore, h: f64, loss: F) -> Result<GradReport>
where
    F: for<'s> Fn(&mut Graph<'s>) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::with_params(params);
        let l = loss(&mut g)?;
        let grads = g.backward(l)?;
        let mut pg = params.zero_grads();
        grads.accumulate(&mut pg, 1.0);
        pg
    };
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::with_params(store);
        let l = loss(&mut g)?;
        Ok(g.value(l).item())
    };

    let mut report = GradReport::default();
    let mut work = params.clone();
    for pid in params.ids() {
        let n = params.value(pid).len();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let orig = params.value(pid).data()[i];
            work.value_mut(pid).data_mut()[i] = orig + h;
            let fp = eval(&work)?;
            work.value_mut(pid).data_mut()[i] = orig - h;
            let fm = eval(&work)?;
            work.value_mut(pid).data_mut()[i] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic.get(pid).data()[i];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
        report.entries.push((params.name(pid).to_string(), worst));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;

    #[test]
    fn quadratic_is_exact() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::row_vector(vec![0.3, -1.7, 2.2]));
        let report = check_gradients(&store, 1e-5, |g| {
            let p = g.param(w);
            let q = g.square(p);
            let s = g.scale(q, 1.5);
            Ok(g.sum_all(s))
        })
        .unwrap();
        assert!(report.max_error() < 1e-9, "{report:?}");
    }

    #[test]
    fn empty_store_gives_empty_report() {
        let store = ParamStore::new();
        let report = check_gradients(&store, 1e-5, |g| Ok(g.input(Tensor::scalar(1.0)))).unwrap();
        assert!(report.is_empty());
    }
}
