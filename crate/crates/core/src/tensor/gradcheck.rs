//! Central finite-difference verification of analytic gradients.

use serde::Serialize;

use super::{Graph, Tensor, TensorError, Var};

/// Gradient magnitude below which errors are judged in absolute terms.
/// Parameters whose exact gradient vanishes (attention key biases, for one)
/// otherwise turn finite-difference round-off into a relative error.
pub const GRAD_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckEntry {
    pub name: String,
    pub numel: usize,
    /// `‖analytic − numeric‖∞ / max(‖analytic‖∞, ‖numeric‖∞, GRAD_FLOOR)`.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub grad_scale: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.max_rel_err < self.tolerance)
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
    }

    pub fn failures(&self) -> impl Iterator<Item = &GradCheckEntry> {
        self.entries.iter().filter(|e| e.max_rel_err >= self.tolerance)
    }
}

/// Compares reverse-mode gradients of `loss` against central differences
/// with step `h` for every element of every named parameter.
///
/// `loss` must be deterministic; it receives one leaf per parameter in order.
/// Setting `fault` corrupts the analytic pass only.
pub fn grad_check<E, F>(
    params: &mut [(String, Tensor<f64>)],
    h: f64,
    tolerance: f64,
    fault: Option<super::Fault>,
    mut loss: F,
) -> Result<GradCheckReport, E>
where
    E: From<TensorError>,
    F: FnMut(&mut Graph<f64>, &[Var]) -> Result<Var, E>,
{
    let mut g = Graph::new();
    if let Some(f) = fault {
        g.inject_fault(f);
    }
    let vars: Vec<Var> = params.iter().map(|(_, t)| g.param(t.clone())).collect();
    let out = loss(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(params.iter())
        .map(|(v, (_, t))| g.grad(*v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
        .collect();
    drop(g);

    let mut eval = |params: &[(String, Tensor<f64>)]| -> Result<f64, E> {
        let mut g = Graph::new();
        let vars: Vec<Var> = params.iter().map(|(_, t)| g.constant(t.clone())).collect();
        let out = loss(&mut g, &vars)?;
        Ok(g.value(out).data()[0])
    };

    let mut entries = Vec::with_capacity(params.len());
    for p in 0..params.len() {
        let n = params[p].1.numel();
        let mut numeric = vec![0.0; n];
        for j in 0..n {
            let orig = params[p].1.data()[j];
            params[p].1.data_mut()[j] = orig + h;
            let plus = eval(params)?;
            params[p].1.data_mut()[j] = orig - h;
            let minus = eval(params)?;
            params[p].1.data_mut()[j] = orig;
            numeric[j] = (plus - minus) / (2.0 * h);
        }
        let a = &analytic[p];
        let scale = a
            .iter()
            .chain(&numeric)
            .fold(0.0f64, |m, v| m.max(v.abs()));
        let max_abs_err = a
            .iter()
            .zip(&numeric)
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        entries.push(GradCheckEntry {
            name: params[p].0.clone(),
            numel: n,
            max_rel_err: max_abs_err / scale.max(GRAD_FLOOR),
            max_abs_err,
            grad_scale: scale,
        });
    }
    Ok(GradCheckReport { tolerance, entries })
}
