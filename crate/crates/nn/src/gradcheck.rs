//! Central finite-difference checks of analytic parameter gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{NnError, ParamGrads, ParamStore, Result};

/// Outcome of a finite-difference comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub checked: usize,
    pub skipped: usize,
    pub max_rel: f64,
}

/// Central differences with step `h` on `n` random scalar parameters.
///
/// `f` evaluates the objective and returns it with the branch pattern of
/// the evaluation (see [`crate::Graph::kink_signature`]). Probes whose `±h`
/// evaluations land on a different branch than the base point straddle a
/// kink, where the derivative is one-sided, and are redrawn. The relative
/// error is `|fd - an| / max(|fd|, |an|, 1e-8)`.
pub fn fd_check(
    store: &mut ParamStore,
    analytic: &ParamGrads,
    mut f: impl FnMut(&ParamStore) -> (f64, Vec<bool>),
    n: usize,
    h: f64,
    seed: u64,
) -> Result<FdReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, base_sig) = f(store);
    let ids: Vec<_> = store.ids().collect();
    if ids.is_empty() && n > 0 {
        return Err(NnError::GradCheck("no parameters to check".into()));
    }
    let mut report = FdReport {
        checked: 0,
        skipped: 0,
        max_rel: 0.0,
    };
    while report.checked < n {
        if report.skipped >= 10 * n {
            return Err(NnError::GradCheck(format!(
                "too many probes straddle a kink: {report:?}"
            )));
        }
        let id = ids[rng.gen_range(0..ids.len())];
        let k = rng.gen_range(0..store.get(id).len());
        let x = store.get(id).data()[k];
        store.get_mut(id).data_mut()[k] = x + h;
        let (fp, sp) = f(store);
        store.get_mut(id).data_mut()[k] = x - h;
        let (fm, sm) = f(store);
        store.get_mut(id).data_mut()[k] = x;
        if sp != base_sig || sm != base_sig {
            report.skipped += 1;
            continue;
        }
        let fd = (fp - fm) / (2.0 * h);
        let an = analytic.get(id).data()[k];
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
        report.max_rel = report.max_rel.max(rel);
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{Graph, Tensor};

    fn cubic(store: &ParamStore) -> (Graph, crate::Var) {
        let mut g = Graph::new();
        let w = g.param(store, store.ids().next().unwrap());
        let sq = g.square(w);
        let cube = g.mul(sq, w).unwrap();
        let root = g.sum(cube);
        (g, root)
    }

    #[test]
    fn accepts_exact_and_rejects_wrong_gradients() {
        let mut store = ParamStore::new(0);
        store.insert("w", Tensor::row(&[0.3, -1.2, 2.0])).unwrap();
        let (g, root) = cubic(&store);
        let grads = g.backward(root).unwrap().params(&store);
        let eval = |s: &ParamStore| {
            let (g, root) = cubic(s);
            (g.value(root).item(), g.kink_signature())
        };
        let mut probe = store.clone();
        let ok = fd_check(&mut probe, &grads, eval, 20, 1e-4, 1).unwrap();
        assert_eq!(ok.checked, 20);
        assert!(ok.max_rel < 1e-7, "{ok:?}");
        assert_eq!(probe.to_bytes(), store.to_bytes());

        let wrong = ParamGrads::zeros_like(&store);
        let bad = fd_check(&mut probe, &wrong, eval, 5, 1e-4, 1).unwrap();
        assert!(bad.max_rel > 0.5);
    }
}
