//! Central finite-difference verification of tape gradients.

use super::{Graph, Rng, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub eps: f64,
    /// Coordinates to probe; every coordinate is probed when there are fewer.
    pub samples: usize,
    pub seed: u64,
    /// Denominator floor, as a fraction of the largest gradient magnitude
    /// among the probed coordinates. Coordinates whose gradient is orders of
    /// magnitude below the rest are then judged against the scale of the
    /// problem rather than against their own finite-difference noise.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-4,
            samples: 100,
            seed: 0,
            floor: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorstCoordinate {
    /// Index into the `params` slice.
    pub param: usize,
    /// Flat element index within that parameter.
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    pub worst: Option<WorstCoordinate>,
}

/// Compares tape gradients of the scalar `f(graph, params)` with central
/// differences `(f(θ+ε) − f(θ−ε)) / 2ε` on sampled coordinates. Evaluation
/// is in f64.
pub fn grad_check<F>(f: F, params: &[Tensor<f64>], cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&Graph<f64>, &[Var]) -> Result<Var>,
{
    let graph = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| graph.leaf(p.clone())).collect();
    let loss = f(&graph, &vars)?;
    let base = graph.value(loss).item();
    if !base.is_finite() {
        return Err(Error::NonFinite { op: "grad_check" });
    }
    let grads = graph.backward(loss)?;

    let sizes: Vec<usize> = params.iter().map(Tensor::numel).collect();
    let total: usize = sizes.iter().sum();
    let coords: Vec<usize> = if total <= cfg.samples {
        (0..total).collect()
    } else {
        let mut rng = Rng::new(cfg.seed);
        let mut all: Vec<usize> = (0..total).collect();
        rng.shuffle(&mut all);
        all.truncate(cfg.samples);
        all.sort_unstable();
        all
    };

    let eval = |ps: &[Tensor<f64>]| -> Result<f64> {
        let g = Graph::new();
        let vs: Vec<Var> = ps.iter().map(|p| g.constant(p.clone())).collect();
        let out = f(&g, &vs)?;
        let v = g.value(out).item();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite { op: "grad_check" })
        }
    };

    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut probes = Vec::with_capacity(coords.len());
    for flat in coords {
        let (param, index) = locate(&sizes, flat);
        let orig = work[param].data()[index];
        work[param].data_mut()[index] = orig + cfg.eps;
        let plus = eval(&work)?;
        work[param].data_mut()[index] = orig - cfg.eps;
        let minus = eval(&work)?;
        work[param].data_mut()[index] = orig;

        let numeric = (plus - minus) / (2.0 * cfg.eps);
        let analytic = grads
            .get(vars[param])
            .map_or(0.0, |g| g.data()[index]);
        probes.push(WorstCoordinate {
            param,
            index,
            analytic,
            numeric,
        });
    }

    let scale = probes
        .iter()
        .map(|p| p.analytic.abs().max(p.numeric.abs()))
        .fold(0.0, f64::max);
    let floor = (cfg.floor * scale).max(f64::MIN_POSITIVE);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: probes.len(),
        worst: None,
    };
    for p in probes {
        let denom = p.analytic.abs().max(p.numeric.abs()).max(floor);
        let rel = (p.analytic - p.numeric).abs() / denom;
        if rel > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = report.max_rel_err.max(rel);
            report.worst = Some(p);
        }
    }
    Ok(report)
}

fn locate(sizes: &[usize], mut flat: usize) -> (usize, usize) {
    for (i, &s) in sizes.iter().enumerate() {
        if flat < s {
            return (i, flat);
        }
        flat -= s;
    }
    unreachable!("coordinate beyond parameter extent")
}
