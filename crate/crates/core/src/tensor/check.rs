//! Gradient verification against central finite differences.
//!
//! Always runs in 64-bit mode; the default ε of 1e-5 only makes sense there.

use super::{Tape, TensorError, TensorId};

pub const DEFAULT_EPS: f64 = 1e-5;

/// Shaped input for [`check_gradients`].
#[derive(Debug, Clone)]
pub struct CheckInput {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl CheckInput {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        CheckInput { shape, data }
    }
}

#[derive(Debug)]
pub struct GradMismatch {
    pub input: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

impl std::fmt::Display for GradMismatch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "input {} element {}: analytic {:.6e} vs numeric {:.6e} (rel err {:.3e})",
            self.input, self.element, self.analytic, self.numeric, self.rel_err
        )
    }
}

/// |a − b| relative to max(1, |a|, |b|).
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1.0_f64.max(a.abs()).max(b.abs())
}

/// Build the graph through `build` (which must be deterministic), compare
/// reverse-mode gradients of the scalar root against central finite
/// differences on every input element, and return the worst relative error.
pub fn check_gradients<F>(
    build: F,
    inputs: &[CheckInput],
    eps: f64,
    tol: f64,
) -> Result<f64, Box<GradMismatch>>
where
    F: Fn(&mut Tape<f64>, &[TensorId]) -> Result<TensorId, TensorError>,
{
    let run = |points: &[CheckInput]| -> (f64, Vec<Option<Vec<f64>>>) {
        let mut tape = Tape::new();
        let ids: Vec<TensorId> = points
            .iter()
            .map(|inp| tape.leaf(inp.shape.clone(), inp.data.clone(), true).expect("leaf"))
            .collect();
        let root = build(&mut tape, &ids).expect("graph construction");
        let loss = tape.scalar(root);
        let mut grads = tape.backward(root);
        let collected = ids.iter().map(|&id| grads.take(id)).collect();
        (loss, collected)
    };

    let (_, analytic) = run(inputs);
    let mut worst = 0.0f64;
    let mut points = inputs.to_vec();
    for (i, inp) in inputs.iter().enumerate() {
        for e in 0..inp.data.len() {
            let orig = inp.data[e];
            points[i].data[e] = orig + eps;
            let (f_plus, _) = run(&points);
            points[i].data[e] = orig - eps;
            let (f_minus, _) = run(&points);
            points[i].data[e] = orig;
            let numeric = (f_plus - f_minus) / (2.0 * eps);
            let a = analytic[i].as_ref().map(|g| g[e]).unwrap_or(0.0);
            let err = rel_err(a, numeric);
            if err > worst {
                worst = err;
            }
            if err > tol {
                return Err(Box::new(GradMismatch {
                    input: i,
                    element: e,
                    analytic: a,
                    numeric,
                    rel_err: err,
                }));
            }
        }
    }
    Ok(worst)
}
