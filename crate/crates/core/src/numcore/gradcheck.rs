use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParamStore, Var};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Finite-difference step `h`.
    pub step: f64,
    /// Largest acceptable relative error.
    pub tolerance: f64,
    /// Elements checked per parameter; larger parameters are sampled.
    pub max_elements: usize,
    /// Denominator floor, so near-zero gradients are compared absolutely.
    pub abs_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-4,
            tolerance: 1e-4,
            max_elements: 24,
            abs_floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| !p.passed)
    }
}

/// Compares tape gradients of every parameter in `store` against central
/// differences `(f(θ+h) − f(θ−h)) / 2h` of the scalar built by `forward`.
///
/// Relative error is `|analytic − numeric| / max(|analytic|, |numeric|, abs_floor)`.
/// `forward` must be deterministic.
pub fn check_gradients<F>(
    store: &mut ParamStore,
    forward: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    store.zero_grad();
    let mut g = Graph::new();
    let loss = forward(&mut g, store)?;
    g.backward(loss, store)?;
    let analytic: Vec<Vec<f64>> = store
        .iter()
        .map(|p| p.tensor.grad().map(<[f64]>::to_vec).unwrap_or_default())
        .collect();

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let loss = forward(&mut g, store)?;
        Ok(g.scalar(loss))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport::default();
    let ids: Vec<_> = (0..store.len()).collect();
    for pi in ids {
        let id = super::ParamId(pi);
        let n = store.get(id).tensor.numel();
        let picks: Vec<usize> = if n <= opts.max_elements {
            (0..n).collect()
        } else {
            let mut v = index::sample(&mut rng, n, opts.max_elements).into_vec();
            v.sort_unstable();
            v
        };
        let mut max_abs: f64 = 0.0;
        let mut max_rel: f64 = 0.0;
        for &i in &picks {
            let orig = store.get(id).tensor.data()[i];
            store.get_mut(id).tensor.data_mut()[i] = orig + opts.step;
            let plus = eval(store)?;
            store.get_mut(id).tensor.data_mut()[i] = orig - opts.step;
            let minus = eval(store)?;
            store.get_mut(id).tensor.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic[pi][i];
            let err = (a - numeric).abs();
            let denom = a.abs().max(numeric.abs()).max(opts.abs_floor);
            max_abs = max_abs.max(err);
            max_rel = max_rel.max(err / denom);
        }
        report.params.push(ParamCheck {
            name: store.get(id).name.clone(),
            checked: picks.len(),
            max_abs_error: max_abs,
            max_rel_error: max_rel,
            passed: max_rel <= opts.tolerance,
        });
    }
    store.zero_grad();
    Ok(report)
}
