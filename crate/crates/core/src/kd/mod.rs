//! Distillation losses: importance-weighted saliency alignment, softened
//! logit matching, the persistence-diagram topology loss and the composed
//! objective with its gradient-norm clamp.

mod distill;
mod topo;

pub use distill::{distill_step, teacher_targets, DistillConfig, DistillStep, GradNorms, KldDirection, LossBreakdown, TeacherTargets};
pub use topo::{topo_loss, topo_loss_on, TopoLoss};

use ndarray::{Array1, Axis};

use crate::autodiff::Tensor;
use crate::{Error, Result};

/// w_k = (1/N) Σ_i |∂L/∂F_{i,k}| for one stage.
pub fn importance_weights(activation_grad: &Tensor) -> Result<Array1<f64>> {
    let (n, c) = activation_grad.dim();
    if n == 0 || c == 0 {
        return Err(Error::Shape(format!("empty stage gradient {n}x{c}")));
    }
    if activation_grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::Divergence("non-finite activation gradient".into()));
    }
    Ok(activation_grad.mapv(f64::abs).sum_axis(Axis(0)) / n as f64)
}

/// F̃_{i,k} = w_k · F_{i,k}.
pub fn scale_features(features: &Tensor, weights: &Array1<f64>) -> Result<Tensor> {
    if features.ncols() != weights.len() {
        return Err(Error::LengthMismatch(features.ncols(), weights.len()));
    }
    Ok(features * &weights.view().insert_axis(Axis(0)))
}

/// Min-max normalised channel sum of |F̃|. A constant pre-normalisation
/// vector maps to all zeros.
pub fn saliency_map(scaled: &Tensor) -> Result<Array1<f64>> {
    if scaled.nrows() == 0 {
        return Err(Error::Shape("saliency of an empty feature map".into()));
    }
    Ok(min_max_normalize(&scaled.mapv(f64::abs).sum_axis(Axis(1))))
}

pub fn min_max_normalize(x: &Array1<f64>) -> Array1<f64> {
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if range > 0.0 {
        x.mapv(|e| (e - lo) / range)
    } else {
        Array1::zeros(x.len())
    }
}

/// (1/N) Σ_l Σ_i |M^l_T,i − M^l_S,i| over already paired stages.
pub fn grad_align_loss(teacher: &[Array1<f64>], student: &[Array1<f64>]) -> Result<f64> {
    if teacher.len() != student.len() {
        return Err(Error::LengthMismatch(teacher.len(), student.len()));
    }
    let Some(n) = teacher.first().map(Array1::len) else {
        return Ok(0.0);
    };
    let mut total = 0.0;
    for (t, s) in teacher.iter().zip(student) {
        if t.len() != n || s.len() != n {
            return Err(Error::LengthMismatch(n, if t.len() != n { t.len() } else { s.len() }));
        }
        total += (t - s).mapv(f64::abs).sum();
    }
    Ok(total / n as f64)
}

fn log_softmax_row(z: ndarray::ArrayView1<f64>, t: f64) -> Array1<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max) / t;
    let lse = m + z.iter().map(|&v| (v / t - m).exp()).sum::<f64>().ln();
    z.mapv(|v| v / t - lse)
}

/// Mean over points of T²·KL(softmax(z_T/T) ‖ softmax(z_S/T)).
pub fn kld_loss(teacher_logits: &Tensor, student_logits: &Tensor, temperature: f64) -> Result<f64> {
    kld_loss_directed(teacher_logits, student_logits, temperature, KldDirection::TeacherStudent)
}

pub fn kld_loss_directed(
    teacher_logits: &Tensor,
    student_logits: &Tensor,
    temperature: f64,
    direction: KldDirection,
) -> Result<f64> {
    if teacher_logits.dim() != student_logits.dim() {
        return Err(Error::Shape(format!(
            "teacher logits {:?} vs student logits {:?}",
            teacher_logits.dim(),
            student_logits.dim()
        )));
    }
    if !(temperature > 0.0) {
        return Err(Error::Config(format!("temperature must be positive, got {temperature}")));
    }
    let n = teacher_logits.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    let (p_side, q_side) = match direction {
        KldDirection::TeacherStudent => (teacher_logits, student_logits),
        KldDirection::StudentTeacher => (student_logits, teacher_logits),
    };
    let mut total = 0.0;
    for (zp, zq) in p_side.rows().into_iter().zip(q_side.rows()) {
        let (lp, lq) = (log_softmax_row(zp, temperature), log_softmax_row(zq, temperature));
        total += lp.iter().zip(&lq).map(|(a, b)| if *a == f64::NEG_INFINITY { 0.0 } else { a.exp() * (a - b) }).sum::<f64>();
    }
    Ok(temperature * temperature * total / n as f64)
}

/// Rescales `g_topo` onto the ball of radius α‖g_feat‖ (Frobenius norms)
/// when it lies outside; otherwise returns it unchanged.
pub fn clamp_topo_gradient(g_topo: &Tensor, g_feat: &Tensor, alpha: f64) -> Result<Tensor> {
    if g_topo.dim() != g_feat.dim() {
        return Err(Error::Shape(format!("topo gradient {:?} vs feature gradient {:?}", g_topo.dim(), g_feat.dim())));
    }
    if !(alpha > 0.0) {
        return Err(Error::Config(format!("clamp ratio must be positive, got {alpha}")));
    }
    let bound = alpha * frobenius(g_feat);
    let norm = frobenius(g_topo);
    if norm <= bound {
        return Ok(g_topo.clone());
    }
    if bound == 0.0 {
        return Ok(Tensor::zeros(g_topo.dim()));
    }
    let mut factor = bound / norm;
    let mut out = g_topo * factor;
    // rounding can leave the result a few ulps above the bound
    while frobenius(&out) > bound {
        factor = factor.next_down();
        out = g_topo * factor;
    }
    Ok(out)
}

pub fn frobenius(t: &Tensor) -> f64 {
    t.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests;
