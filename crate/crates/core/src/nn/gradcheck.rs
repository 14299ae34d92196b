//! Central finite-difference probes against analytic gradients.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{Graph, ParamId, ParamSet, Var};

#[derive(Clone, Debug)]
pub struct Probe {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl Probe {
    /// Relative error with an absolute floor so that near-zero gradients
    /// are compared on an absolute scale.
    pub fn rel_error(&self, floor: f64) -> f64 {
        (self.analytic - self.numeric).abs() / self.analytic.abs().max(self.numeric.abs()).max(floor)
    }
}

/// Evaluates `objective` at the current parameters, then compares the
/// analytic gradient with `(f(p+h) - f(p-h)) / 2h` at `n_probes` randomly
/// chosen scalar coordinates.
pub fn probe_gradients<R, F>(params: &ParamSet, objective: F, n_probes: usize, h: f64, rng: &mut R) -> Vec<Probe>
where
    R: Rng,
    F: Fn(&mut Graph) -> Var,
{
    let grads = {
        let mut g = Graph::new(params);
        let root = objective(&mut g);
        g.backward(root)
    };
    let mut coords: Vec<(ParamId, usize)> = params
        .iter()
        .flat_map(|(id, _, t)| (0..t.len()).map(move |i| (id, i)))
        .collect();
    coords.shuffle(rng);
    coords.truncate(n_probes);

    let eval = |p: &ParamSet| {
        let mut g = Graph::new(p);
        let root = objective(&mut g);
        g.value(root).item()
    };
    let mut work = params.clone();
    coords
        .into_iter()
        .map(|(id, i)| {
            let orig = work.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + h;
            let fp = eval(&work);
            work.get_mut(id).data_mut()[i] = orig - h;
            let fm = eval(&work);
            work.get_mut(id).data_mut()[i] = orig;
            Probe {
                param: params.name(id).to_string(),
                index: i,
                analytic: grads.get(id).data()[i],
                numeric: (fp - fm) / (2.0 * h),
            }
        })
        .collect()
}
