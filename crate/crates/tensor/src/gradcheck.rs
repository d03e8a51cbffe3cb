//! Central finite-difference checking of tape gradients (double precision).

use rand::Rng;

use crate::{ParamId, ParamStore, ParamVars, Tape, Tensor, Var};

/// One scalar coordinate to probe.
#[derive(Clone, Copy, Debug)]
pub enum Probe {
    Param(ParamId, usize),
    Input(usize, usize),
}

#[derive(Clone, Debug)]
pub struct ProbeResult {
    pub probe: Probe,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub results: Vec<ProbeResult>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.results.iter().map(|r| r.rel_error).fold(0.0, f64::max)
    }
}

/// `|a - n| / max(|a|, |n|)`; pairs that are both below `1e-9` count as exact.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-9 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Compares tape gradients of the scalar `f` against central differences
/// with step `h` at the given probes.
pub fn check<F>(
    store: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    f: F,
    probes: &[Probe],
    h: f64,
) -> GradCheckReport
where
    F: Fn(&ParamVars<f64>, &[Var<f64>]) -> Var<f64>,
{
    let tape = Tape::new();
    let params = store.bind(&tape, |_| true);
    let in_vars: Vec<Var<f64>> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&params, &in_vars);
    let grads = tape.backward(&loss);

    let eval = |store: &ParamStore<f64>, inputs: &[Tensor<f64>]| -> f64 {
        let p = store.constants();
        let iv: Vec<Var<f64>> = inputs.iter().map(|t| Var::constant(t.clone())).collect();
        f(&p, &iv).item()
    };

    let results = probes
        .iter()
        .map(|&probe| {
            let analytic = match probe {
                Probe::Param(id, i) => grads.get(&params[id]).map_or(0.0, |g| g.data()[i]),
                Probe::Input(k, i) => grads.get(&in_vars[k]).map_or(0.0, |g| g.data()[i]),
            };
            let mut plus = (store.clone(), inputs.to_vec());
            let mut minus = (store.clone(), inputs.to_vec());
            match probe {
                Probe::Param(id, i) => {
                    plus.0.get_mut(id).data_mut()[i] += h;
                    minus.0.get_mut(id).data_mut()[i] -= h;
                }
                Probe::Input(k, i) => {
                    plus.1[k].data_mut()[i] += h;
                    minus.1[k].data_mut()[i] -= h;
                }
            }
            let numeric = (eval(&plus.0, &plus.1) - eval(&minus.0, &minus.1)) / (2.0 * h);
            ProbeResult {
                probe,
                analytic,
                numeric,
                rel_error: relative_error(analytic, numeric),
            }
        })
        .collect();
    GradCheckReport { results }
}

/// Random probes: `per_tensor` coordinates from every parameter tensor
/// accepted by `filter` and from every input.
pub fn random_probes<R: Rng>(
    store: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    per_tensor: usize,
    filter: impl Fn(&str) -> bool,
    rng: &mut R,
) -> Vec<Probe> {
    let mut probes = Vec::new();
    for (id, name, t) in store.iter() {
        if filter(name) {
            for _ in 0..per_tensor {
                probes.push(Probe::Param(id, rng.gen_range(0..t.len())));
            }
        }
    }
    for (k, t) in inputs.iter().enumerate() {
        for _ in 0..per_tensor {
            probes.push(Probe::Input(k, rng.gen_range(0..t.len())));
        }
    }
    probes
}
