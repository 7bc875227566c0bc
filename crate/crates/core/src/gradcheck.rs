//! Finite-difference verification of hand-written backward passes.
//!
//! An operation is anything implementing [`DifferentiableOp`]: a forward pass
//! that saves whatever context it needs, and a backward pass that turns an
//! upstream gradient into one gradient per input. [`grad_check`] compares the
//! analytic gradient of a scalar-valued op against central differences.

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

pub trait DifferentiableOp {
    fn forward(&mut self, inputs: &[Tensor]) -> Result<Tensor>;

    /// Gradients with respect to each input of the most recent `forward`.
    /// Calling this before any forward is an [`Error::InvalidState`].
    fn backward(&mut self, upstream: &Tensor) -> Result<Vec<Tensor>>;
}

#[derive(Clone, Debug)]
pub struct EntryCheck {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub entries: Vec<EntryCheck>,
    pub tolerance: f64,
    /// Set when the check could not be carried out numerically.
    pub diagnostic: Option<String>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.diagnostic.is_none() && self.entries.iter().all(|e| e.error <= self.tolerance)
    }

    pub fn max_error(&self) -> f64 {
        self.entries.iter().map(|e| e.error).fold(0.0, f64::max)
    }

    /// The entry with the largest relative error, if any entry was checked.
    pub fn worst(&self) -> Option<&EntryCheck> {
        self.entries
            .iter()
            .max_by(|a, b| a.error.total_cmp(&b.error))
    }

    fn failed(tolerance: f64, diagnostic: String) -> Self {
        GradCheckReport {
            entries: Vec::new(),
            tolerance,
            diagnostic: Some(diagnostic),
        }
    }
}

/// Relative error `|a - n| / max(1, |a|, |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn scalar_output(op: &mut dyn DifferentiableOp, inputs: &[Tensor]) -> std::result::Result<f64, String> {
    let out = op.forward(inputs).map_err(|e| e.to_string())?;
    if out.len() != 1 {
        return Err(format!(
            "op must be scalar-valued, got output shape {:?}",
            out.shape()
        ));
    }
    let v = out.data()[0];
    if !v.is_finite() {
        return Err(format!("forward produced non-finite value {v}"));
    }
    Ok(v)
}

/// Check every entry of every input of a scalar-valued op.
///
/// Returns an error only for an out-of-range `epsilon`; numeric trouble
/// during the check is reported as a failed report with a diagnostic.
pub fn grad_check(
    op: &mut dyn DifferentiableOp,
    inputs: &[Tensor],
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::invalid_argument(format!(
            "epsilon {epsilon} outside [1e-7, 1e-3]"
        )));
    }
    if let Err(msg) = scalar_output(op, inputs) {
        return Ok(GradCheckReport::failed(tolerance, msg));
    }
    let analytic = match op.backward(&Tensor::scalar(1.0)) {
        Ok(g) => g,
        Err(e) => return Ok(GradCheckReport::failed(tolerance, e.to_string())),
    };
    if analytic.len() != inputs.len() {
        return Ok(GradCheckReport::failed(
            tolerance,
            format!(
                "backward returned {} gradients for {} inputs",
                analytic.len(),
                inputs.len()
            ),
        ));
    }

    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut entries = Vec::new();
    for (t, grad) in analytic.iter().enumerate() {
        if grad.shape() != inputs[t].shape() {
            return Ok(GradCheckReport::failed(
                tolerance,
                format!(
                    "gradient {t} has shape {:?}, input has {:?}",
                    grad.shape(),
                    inputs[t].shape()
                ),
            ));
        }
        for i in 0..inputs[t].len() {
            let x = inputs[t].data()[i];
            work[t].data_mut()[i] = x + epsilon;
            let plus = scalar_output(op, &work);
            work[t].data_mut()[i] = x - epsilon;
            let minus = scalar_output(op, &work);
            work[t].data_mut()[i] = x;
            let (plus, minus) = match (plus, minus) {
                (Ok(p), Ok(m)) => (p, m),
                (Err(e), _) | (_, Err(e)) => {
                    return Ok(GradCheckReport {
                        entries,
                        tolerance,
                        diagnostic: Some(format!("input {t} entry {i}: {e}")),
                    })
                }
            };
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = grad.data()[i];
            if !a.is_finite() {
                return Ok(GradCheckReport {
                    entries,
                    tolerance,
                    diagnostic: Some(format!("input {t} entry {i}: non-finite analytic gradient")),
                });
            }
            entries.push(EntryCheck {
                input: t,
                index: i,
                analytic: a,
                numeric,
                error: relative_error(a, numeric),
            });
        }
    }
    Ok(GradCheckReport {
        entries,
        tolerance,
        diagnostic: None,
    })
}

fn no_forward() -> Error {
    Error::invalid_state("backward called before forward")
}

fn expect_inputs(inputs: &[Tensor], n: usize, name: &str) -> Result<()> {
    if inputs.len() != n {
        return Err(Error::invalid_argument(format!(
            "{name} takes {n} input(s), got {}",
            inputs.len()
        )));
    }
    Ok(())
}

fn single_upstream(upstream: &Tensor, len: usize) -> Result<&[f64]> {
    if upstream.len() != len {
        return Err(Error::invalid_argument(format!(
            "upstream gradient has {} entries, expected {len}",
            upstream.len()
        )));
    }
    Ok(upstream.data())
}

/// Elementwise logistic function.
#[derive(Default)]
pub struct Sigmoid {
    out: Option<Tensor>,
}

impl DifferentiableOp for Sigmoid {
    fn forward(&mut self, inputs: &[Tensor]) -> Result<Tensor> {
        expect_inputs(inputs, 1, "sigmoid")?;
        let mut out = inputs[0].clone();
        out.data_mut().iter_mut().for_each(|x| *x = tensor::sigmoid(*x));
        self.out = Some(out.clone());
        Ok(out)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Vec<Tensor>> {
        let out = self.out.as_ref().ok_or_else(no_forward)?;
        let up = single_upstream(upstream, out.len())?;
        let mut g = out.clone();
        for (gi, &u) in g.data_mut().iter_mut().zip(up) {
            *gi = u * *gi * (1.0 - *gi);
        }
        Ok(vec![g])
    }
}

/// Elementwise hyperbolic tangent.
#[derive(Default)]
pub struct Tanh {
    out: Option<Tensor>,
}

impl DifferentiableOp for Tanh {
    fn forward(&mut self, inputs: &[Tensor]) -> Result<Tensor> {
        expect_inputs(inputs, 1, "tanh")?;
        let mut out = inputs[0].clone();
        out.data_mut().iter_mut().for_each(|x| *x = x.tanh());
        self.out = Some(out.clone());
        Ok(out)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Vec<Tensor>> {
        let out = self.out.as_ref().ok_or_else(no_forward)?;
        let up = single_upstream(upstream, out.len())?;
        let mut g = out.clone();
        for (gi, &u) in g.data_mut().iter_mut().zip(up) {
            *gi = u * (1.0 - *gi * *gi);
        }
        Ok(vec![g])
    }
}

/// Elementwise rectifier. The derivative at exactly zero is taken as zero.
#[derive(Default)]
pub struct Relu {
    input: Option<Tensor>,
}

impl DifferentiableOp for Relu {
    fn forward(&mut self, inputs: &[Tensor]) -> Result<Tensor> {
        expect_inputs(inputs, 1, "relu")?;
        let mut out = inputs[0].clone();
        out.data_mut().iter_mut().for_each(|x| *x = tensor::relu(*x));
        self.input = Some(inputs[0].clone());
        Ok(out)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Vec<Tensor>> {
        let input = self.input.as_ref().ok_or_else(no_forward)?;
        let up = single_upstream(upstream, input.len())?;
        let mut g = input.clone();
        for (gi, &u) in g.data_mut().iter_mut().zip(up) {
            *gi = if *gi > 0.0 { u } else { 0.0 };
        }
        Ok(vec![g])
    }
}

/// Softmax over a rank-1 input.
#[derive(Default)]
pub struct Softmax {
    out: Option<Tensor>,
}

impl DifferentiableOp for Softmax {
    fn forward(&mut self, inputs: &[Tensor]) -> Result<Tensor> {
        expect_inputs(inputs, 1, "softmax")?;
        let out = Tensor::new(inputs[0].shape().to_vec(), tensor::softmax(inputs[0].data())?)?;
        self.out = Some(out.clone());
        Ok(out)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Vec<Tensor>> {
        let out = self.out.as_ref().ok_or_else(no_forward)?;
        let up = single_upstream(upstream, out.len())?;
        let inner = tensor::dot(up, out.data());
        let mut g = out.clone();
        for (gi, &u) in g.data_mut().iter_mut().zip(up) {
            *gi *= u - inner;
        }
        Ok(vec![g])
    }
}

/// Product of two matrices.
#[derive(Default)]
pub struct MatMul {
    inputs: Option<(Tensor, Tensor)>,
}

impl DifferentiableOp for MatMul {
    fn forward(&mut self, inputs: &[Tensor]) -> Result<Tensor> {
        expect_inputs(inputs, 2, "matmul")?;
        let out = inputs[0].matmul(&inputs[1])?;
        self.inputs = Some((inputs[0].clone(), inputs[1].clone()));
        Ok(out)
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Vec<Tensor>> {
        let (a, b) = self.inputs.as_ref().ok_or_else(no_forward)?;
        let up = Tensor::new(vec![a.rows(), b.cols()], upstream.data().to_vec())?;
        Ok(vec![up.matmul(&b.transpose())?, a.transpose().matmul(&up)?])
    }
}

/// Reduces any op to a scalar by a fixed weighted sum of its output, so
/// that [`grad_check`] can be applied. Random weights avoid the cancellations
/// a plain sum can hide (a softmax summed is constant).
pub struct Projected<O> {
    pub inner: O,
    pub weights: Vec<f64>,
}

impl<O: DifferentiableOp> DifferentiableOp for Projected<O> {
    fn forward(&mut self, inputs: &[Tensor]) -> Result<Tensor> {
        let out = self.inner.forward(inputs)?;
        if out.len() != self.weights.len() {
            return Err(Error::invalid_argument(format!(
                "projection of length {} applied to output of length {}",
                self.weights.len(),
                out.len()
            )));
        }
        Ok(Tensor::scalar(tensor::dot(out.data(), &self.weights)))
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Vec<Tensor>> {
        let scale = single_upstream(upstream, 1)?[0];
        let w: Vec<f64> = self.weights.iter().map(|w| w * scale).collect();
        // the inner op's output shape only matters through its length
        self.inner.backward(&Tensor::vector(w)?)
    }
}

/// Adapter for code that computes a scalar value and its input gradients in
/// one pass (a whole model loss, for example).
pub struct ScalarFn<F> {
    f: F,
    grads: Option<Vec<Tensor>>,
}

impl<F> ScalarFn<F>
where
    F: FnMut(&[Tensor]) -> Result<(f64, Vec<Tensor>)>,
{
    pub fn new(f: F) -> Self {
        ScalarFn { f, grads: None }
    }
}

impl<F> DifferentiableOp for ScalarFn<F>
where
    F: FnMut(&[Tensor]) -> Result<(f64, Vec<Tensor>)>,
{
    fn forward(&mut self, inputs: &[Tensor]) -> Result<Tensor> {
        let (value, grads) = (self.f)(inputs)?;
        self.grads = Some(grads);
        Ok(Tensor::scalar(value))
    }

    fn backward(&mut self, upstream: &Tensor) -> Result<Vec<Tensor>> {
        let scale = single_upstream(upstream, 1)?[0];
        let mut grads = self.grads.clone().ok_or_else(no_forward)?;
        grads.iter_mut().for_each(|g| g.scale(scale));
        Ok(grads)
    }
}
