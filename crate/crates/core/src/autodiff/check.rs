use std::collections::HashMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Bindings, Graph, NodeId, Tensor};
use crate::{Error, Result};

const REL_EPS: f64 = 1e-12;
const MAX_COORDS: usize = 1000;
const SUBSET_SEED: u64 = 0x5eed_fd01;

/// Analytic vs central-difference comparison for one tensor.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TensorCheck {
    pub node: usize,
    pub name: Option<String>,
    pub shape: (usize, usize),
    /// Row-major analytic gradient.
    pub analytic: Vec<f64>,
    /// Central-difference estimate per coordinate; `None` when the
    /// coordinate was not sampled or the probe straddled a kink.
    pub numeric: Vec<Option<f64>>,
    pub kinked: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradientReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
    pub checked: usize,
    pub kinked: usize,
}

pub fn relative_error(a: f64, f: f64) -> f64 {
    (a - f).abs() / a.abs().max(f.abs()).max(REL_EPS)
}

/// Compares reverse-mode gradients of `output` against central differences
/// with step `h`. Works for leaves and for intermediate nodes (which are
/// perturbed by overriding their forward value). Tensors with more than 1000
/// coordinates are checked on a seeded random subset. Coordinates whose
/// ±h probes select different branches of a non-smooth op are reported as
/// kinked and left out of the maximum.
pub fn finite_diff_check(
    graph: &Graph,
    bindings: &Bindings,
    output: NodeId,
    wrt: &[NodeId],
    h: f64,
) -> Result<GradientReport> {
    if !(h > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {h}")));
    }
    let base = graph.evaluate(bindings)?;
    let analytic = graph.backward(&base, output, wrt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(SUBSET_SEED);

    let mut report = GradientReport { tensors: Vec::new(), max_rel_error: 0.0, checked: 0, kinked: 0 };
    for (&node, grad) in wrt.iter().zip(&analytic) {
        let value = base.get(node)?.clone();
        let shape = value.dim();
        let len = value.len();
        let coords: Vec<usize> = if len > MAX_COORDS {
            let mut v = sample(&mut rng, len, MAX_COORDS).into_vec();
            v.sort_unstable();
            v
        } else {
            (0..len).collect()
        };

        let mut check = TensorCheck {
            node: node.index(),
            name: graph.name(node).map(str::to_owned),
            shape,
            analytic: grad.iter().copied().collect(),
            numeric: vec![None; len],
            kinked: 0,
            max_rel_error: 0.0,
        };
        for flat in coords {
            let at = (flat / shape.1, flat % shape.1);
            let probe = |delta: f64| -> Result<(f64, Vec<i64>)> {
                let mut perturbed: Tensor = value.clone();
                perturbed[at] += delta;
                let overrides = HashMap::from([(node, perturbed)]);
                let vals = graph.evaluate_with_overrides(bindings, &overrides)?;
                Ok((vals.scalar(output)?, graph.kink_signature(&vals)))
            };
            let (plus, sig_plus) = probe(h)?;
            let (minus, sig_minus) = probe(-h)?;
            if sig_plus != sig_minus {
                check.kinked += 1;
                continue;
            }
            let fd = (plus - minus) / (2.0 * h);
            check.numeric[flat] = Some(fd);
            check.max_rel_error = check.max_rel_error.max(relative_error(check.analytic[flat], fd));
            report.checked += 1;
        }
        report.kinked += check.kinked;
        report.max_rel_error = report.max_rel_error.max(check.max_rel_error);
        report.tensors.push(check);
    }
    Ok(report)
}
