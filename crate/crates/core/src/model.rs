//! A deliberately tiny zoo of differentiable models with hand-derived
//! analytic gradients.
//!
//! Three kinds are supported, all built from bias-free dense layers over a
//! flat parameter vector:
//!
//! * `linear-regression` — `z = W x`, squared-error loss;
//! * `logistic-regression` — `z = W x`, softmax cross-entropy loss;
//! * `mlp-1hidden` — `z = W2 tanh(W1 x)`, either loss.
//!
//! Layer weights are stored row-major (`w[o * in_dim + i]`), layers in
//! forward order. Losses are means over the batch:
//!
//! * squared error: `(1/n) Σ_s ½‖z_s − y_s‖²`
//! * cross-entropy: `−(1/n) Σ_s ln softmax(z_s)[y_s]`
//!
//! Besides the analytic path, the module carries two oracles used to check
//! it: a central-difference gradient (`finite_diff_gradient`) and a dense
//! Hessian (`exact_hessian`) — analytic for the convex kinds, loss-only
//! second differences for the MLP, so neither shares code with the analytic
//! gradient it validates.

use rand::Rng;

use crate::error::{Error, Result};
use crate::param::ParamVector;
use crate::rng;

// ── specification ───────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ModelKind {
    #[serde(rename = "linear-regression")]
    LinearRegression,
    #[serde(rename = "logistic-regression")]
    LogisticRegression,
    #[serde(rename = "mlp-1hidden")]
    MlpOneHidden,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum LossKind {
    #[serde(rename = "mse")]
    SquaredError,
    #[serde(rename = "cross-entropy")]
    CrossEntropy,
}

/// Immutable description of a model: kind, dimensions, loss.
///
/// Constructors enforce the legal kind/loss pairs: linear regression is
/// squared-error only, logistic regression is cross-entropy only, the MLP
/// accepts either.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub output_dim: usize,
    /// Hidden width; only meaningful for `MlpOneHidden`.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub hidden_dim: Option<usize>,
    pub loss: LossKind,
}

impl ModelSpec {
    pub fn linear_regression(input_dim: usize, output_dim: usize) -> Result<Self> {
        let spec = ModelSpec {
            kind: ModelKind::LinearRegression,
            input_dim,
            output_dim,
            hidden_dim: None,
            loss: LossKind::SquaredError,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn logistic_regression(input_dim: usize, class_count: usize) -> Result<Self> {
        let spec = ModelSpec {
            kind: ModelKind::LogisticRegression,
            input_dim,
            output_dim: class_count,
            hidden_dim: None,
            loss: LossKind::CrossEntropy,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn mlp(
        input_dim: usize,
        hidden_dim: usize,
        output_dim: usize,
        loss: LossKind,
    ) -> Result<Self> {
        let spec = ModelSpec {
            kind: ModelKind::MlpOneHidden,
            input_dim,
            output_dim,
            hidden_dim: Some(hidden_dim),
            loss,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks dimensions and the kind/loss pairing. Deserialized specs must
    /// be re-validated through here.
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::InvalidArgument(
                "model.input_dim and model.output_dim must be >= 1".into(),
            ));
        }
        match self.kind {
            ModelKind::LinearRegression => {
                if self.loss != LossKind::SquaredError {
                    return Err(Error::InvalidArgument(
                        "model.loss: linear-regression supports only mse".into(),
                    ));
                }
            }
            ModelKind::LogisticRegression => {
                if self.loss != LossKind::CrossEntropy {
                    return Err(Error::InvalidArgument(
                        "model.loss: logistic-regression supports only cross-entropy".into(),
                    ));
                }
            }
            ModelKind::MlpOneHidden => {
                if self.hidden_dim.is_none_or(|h| h == 0) {
                    return Err(Error::InvalidArgument(
                        "model.hidden_dim must be >= 1 for mlp-1hidden".into(),
                    ));
                }
            }
        }
        if self.kind != ModelKind::MlpOneHidden && self.hidden_dim.is_some() {
            return Err(Error::InvalidArgument(
                "model.hidden_dim only applies to mlp-1hidden".into(),
            ));
        }
        Ok(())
    }

    /// Number of scalar parameters, a pure function of the dimensions.
    pub fn param_count(&self) -> usize {
        match self.kind {
            ModelKind::LinearRegression | ModelKind::LogisticRegression => {
                self.input_dim * self.output_dim
            }
            ModelKind::MlpOneHidden => {
                let h = self.hidden_dim.unwrap_or(0);
                self.input_dim * h + h * self.output_dim
            }
        }
    }

    /// (fan_in, fan_out, weight count) per layer, in forward order.
    fn layers(&self) -> Vec<(usize, usize)> {
        match self.kind {
            ModelKind::LinearRegression | ModelKind::LogisticRegression => {
                vec![(self.input_dim, self.output_dim)]
            }
            ModelKind::MlpOneHidden => {
                let h = self.hidden_dim.unwrap_or(0);
                vec![(self.input_dim, h), (h, self.output_dim)]
            }
        }
    }
}

/// Draws initial weights layer by layer, uniform in `[-r, r]` with
/// `r = sqrt(6 / (fan_in + fan_out))`, from a ChaCha stream keyed by the
/// init seed. Identical seeds give identical vectors.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ParamVector> {
    spec.validate()?;
    let mut rng = rng::stream(&[seed, rng::STREAM_INIT]);
    let mut values = Vec::with_capacity(spec.param_count());
    for (fan_in, fan_out) in spec.layers() {
        let r = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for _ in 0..fan_in * fan_out {
            values.push(rng.gen_range(-r..=r));
        }
    }
    ParamVector::new(values)
}

// ── batches ─────────────────────────────────────────────────────────────

/// Training targets: class indices for cross-entropy, dense rows for
/// squared error.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    Values { data: Vec<f64>, dim: usize },
}

/// A mini-batch: `n` rows of `input_dim` features plus matching targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    inputs: Vec<f64>,
    input_dim: usize,
    n: usize,
    targets: Targets,
}

impl Batch {
    pub fn classification(inputs: Vec<f64>, input_dim: usize, classes: Vec<usize>) -> Result<Self> {
        let n = Self::check_inputs(&inputs, input_dim)?;
        if classes.len() != n {
            return Err(Error::LengthMismatch { left: n, right: classes.len() });
        }
        Ok(Batch { inputs, input_dim, n, targets: Targets::Classes(classes) })
    }

    pub fn regression(
        inputs: Vec<f64>,
        input_dim: usize,
        values: Vec<f64>,
        value_dim: usize,
    ) -> Result<Self> {
        let n = Self::check_inputs(&inputs, input_dim)?;
        if value_dim == 0 || values.len() != n * value_dim {
            return Err(Error::LengthMismatch { left: n * value_dim.max(1), right: values.len() });
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { context: "batch targets" });
        }
        Ok(Batch {
            inputs,
            input_dim,
            n,
            targets: Targets::Values { data: values, dim: value_dim },
        })
    }

    fn check_inputs(inputs: &[f64], input_dim: usize) -> Result<usize> {
        if input_dim == 0 {
            return Err(Error::InvalidArgument("batch input_dim must be >= 1".into()));
        }
        if inputs.is_empty() || !inputs.len().is_multiple_of(input_dim) {
            return Err(Error::InvalidArgument(format!(
                "batch inputs length {} is not a positive multiple of input_dim {}",
                inputs.len(),
                input_dim
            )));
        }
        if !inputs.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { context: "batch inputs" });
        }
        Ok(inputs.len() / input_dim)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    fn row(&self, s: usize) -> &[f64] {
        &self.inputs[s * self.input_dim..(s + 1) * self.input_dim]
    }

    /// Targets must match the loss: classes for cross-entropy (all indices
    /// below `output_dim`), rows of width `output_dim` for squared error.
    fn check_against(&self, spec: &ModelSpec) -> Result<()> {
        if self.input_dim != spec.input_dim {
            return Err(Error::LengthMismatch { left: spec.input_dim, right: self.input_dim });
        }
        match (&self.targets, spec.loss) {
            (Targets::Classes(cs), LossKind::CrossEntropy) => {
                if let Some(&bad) = cs.iter().find(|&&c| c >= spec.output_dim) {
                    return Err(Error::InvalidArgument(format!(
                        "batch class index {bad} out of range for {} outputs",
                        spec.output_dim
                    )));
                }
                Ok(())
            }
            (Targets::Values { dim, .. }, LossKind::SquaredError) => {
                if *dim != spec.output_dim {
                    return Err(Error::LengthMismatch { left: spec.output_dim, right: *dim });
                }
                Ok(())
            }
            (Targets::Classes(_), LossKind::SquaredError) => Err(Error::InvalidArgument(
                "mse loss requires value targets, got class targets".into(),
            )),
            (Targets::Values { .. }, LossKind::CrossEntropy) => Err(Error::InvalidArgument(
                "cross-entropy loss requires class targets, got value targets".into(),
            )),
        }
    }
}

// ── forward paths ───────────────────────────────────────────────────────

fn dense(w: &[f64], x: &[f64], in_dim: usize, out_dim: usize, out: &mut [f64]) {
    for o in 0..out_dim {
        let row = &w[o * in_dim..(o + 1) * in_dim];
        out[o] = row.iter().zip(x).map(|(wi, xi)| wi * xi).sum();
    }
}

/// Raw model outputs, one row of `output_dim` per sample.
pub fn logits(spec: &ModelSpec, w: &ParamVector, batch: &Batch) -> Result<Vec<f64>> {
    spec.validate()?;
    if w.len() != spec.param_count() {
        return Err(Error::LengthMismatch { left: spec.param_count(), right: w.len() });
    }
    if batch.input_dim != spec.input_dim {
        return Err(Error::LengthMismatch { left: spec.input_dim, right: batch.input_dim });
    }
    let ws = w.as_slice();
    let mut out = vec![0.0; batch.n * spec.output_dim];
    match spec.kind {
        ModelKind::LinearRegression | ModelKind::LogisticRegression => {
            for s in 0..batch.n {
                dense(
                    ws,
                    batch.row(s),
                    spec.input_dim,
                    spec.output_dim,
                    &mut out[s * spec.output_dim..(s + 1) * spec.output_dim],
                );
            }
        }
        ModelKind::MlpOneHidden => {
            let h = spec.hidden_dim.unwrap();
            let (w1, w2) = ws.split_at(spec.input_dim * h);
            let mut hidden = vec![0.0; h];
            for s in 0..batch.n {
                dense(w1, batch.row(s), spec.input_dim, h, &mut hidden);
                for v in hidden.iter_mut() {
                    *v = v.tanh();
                }
                dense(
                    w2,
                    &hidden,
                    h,
                    spec.output_dim,
                    &mut out[s * spec.output_dim..(s + 1) * spec.output_dim],
                );
            }
        }
    }
    Ok(out)
}

/// Softmax of one logit row, max-subtracted for stability.
fn softmax_row(z: &[f64], out: &mut [f64]) {
    let max = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut sum = 0.0;
    for (p, &v) in out.iter_mut().zip(z) {
        *p = (v - max).exp();
        sum += *p;
    }
    for p in out.iter_mut() {
        *p /= sum;
    }
}

/// Mean loss of the batch under the spec's loss kind.
pub fn loss(spec: &ModelSpec, w: &ParamVector, batch: &Batch) -> Result<f64> {
    batch.check_against(spec)?;
    let z = logits(spec, w, batch)?;
    let k = spec.output_dim;
    let n = batch.n as f64;
    let total = match &batch.targets {
        Targets::Values { data, .. } => {
            let mut acc = 0.0;
            for (zi, yi) in z.iter().zip(data.iter()) {
                let d = zi - yi;
                acc += 0.5 * d * d;
            }
            acc
        }
        Targets::Classes(cs) => {
            let mut acc = 0.0;
            for (s, &c) in cs.iter().enumerate() {
                let row = &z[s * k..(s + 1) * k];
                let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                let log_sum: f64 = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
                acc -= row[c] - max - log_sum;
            }
            acc
        }
    };
    let value = total / n;
    if !value.is_finite() {
        return Err(Error::NonFinite { context: "loss" });
    }
    Ok(value)
}

/// Per-sample `n · dL/dz` rows: `z − y` for squared error,
/// `softmax(z) − onehot(y)` for cross-entropy.
fn output_errors(spec: &ModelSpec, z: &[f64], batch: &Batch) -> Vec<f64> {
    let k = spec.output_dim;
    let mut err = vec![0.0; batch.n * k];
    match &batch.targets {
        Targets::Values { data, .. } => {
            for i in 0..err.len() {
                err[i] = z[i] - data[i];
            }
        }
        Targets::Classes(cs) => {
            for (s, &c) in cs.iter().enumerate() {
                let (zrow, erow) = (&z[s * k..(s + 1) * k], &mut err[s * k..(s + 1) * k]);
                softmax_row(zrow, erow);
                erow[c] -= 1.0;
            }
        }
    }
    err
}

/// Analytic gradient of [`loss`] with respect to every parameter.
pub fn gradient(spec: &ModelSpec, w: &ParamVector, batch: &Batch) -> Result<ParamVector> {
    batch.check_against(spec)?;
    let z = logits(spec, w, batch)?;
    let err = output_errors(spec, &z, batch);
    let k = spec.output_dim;
    let inv_n = 1.0 / batch.n as f64;
    let mut g = vec![0.0; spec.param_count()];
    match spec.kind {
        ModelKind::LinearRegression | ModelKind::LogisticRegression => {
            for s in 0..batch.n {
                let x = batch.row(s);
                let e = &err[s * k..(s + 1) * k];
                for o in 0..k {
                    let grow = &mut g[o * spec.input_dim..(o + 1) * spec.input_dim];
                    for (gi, &xi) in grow.iter_mut().zip(x) {
                        *gi += e[o] * xi;
                    }
                }
            }
        }
        ModelKind::MlpOneHidden => {
            let h = spec.hidden_dim.unwrap();
            let ws = w.as_slice();
            let (w1, w2) = ws.split_at(spec.input_dim * h);
            let (g1, g2) = g.split_at_mut(spec.input_dim * h);
            let mut hidden = vec![0.0; h];
            for s in 0..batch.n {
                let x = batch.row(s);
                let e = &err[s * k..(s + 1) * k];
                dense(w1, x, spec.input_dim, h, &mut hidden);
                for v in hidden.iter_mut() {
                    *v = v.tanh();
                }
                for o in 0..k {
                    let grow = &mut g2[o * h..(o + 1) * h];
                    for (gj, &hj) in grow.iter_mut().zip(&hidden) {
                        *gj += e[o] * hj;
                    }
                }
                for j in 0..h {
                    let mut dh = 0.0;
                    for o in 0..k {
                        dh += w2[o * h + j] * e[o];
                    }
                    let d1 = dh * (1.0 - hidden[j] * hidden[j]);
                    let grow = &mut g1[j * spec.input_dim..(j + 1) * spec.input_dim];
                    for (gi, &xi) in grow.iter_mut().zip(x) {
                        *gi += d1 * xi;
                    }
                }
            }
        }
    }
    for v in g.iter_mut() {
        *v *= inv_n;
    }
    ParamVector::new(g)
}

/// One plain SGD step `w − eta · gradient`. `eta` must be finite and
/// non-negative; zero leaves `w` unchanged.
pub fn local_sgd_step(
    spec: &ModelSpec,
    w: &ParamVector,
    batch: &Batch,
    eta: f64,
) -> Result<ParamVector> {
    if !eta.is_finite() || eta < 0.0 {
        return Err(Error::InvalidArgument(format!("eta must be finite and >= 0, got {eta}")));
    }
    let g = gradient(spec, w, batch)?;
    w.sub(&g.scale(eta)?)
}

/// Fraction of rows whose argmax logit equals the label.
pub fn accuracy(
    spec: &ModelSpec,
    w: &ParamVector,
    inputs: &[f64],
    labels: &[usize],
) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Empty("accuracy labels"));
    }
    // Targets are irrelevant for prediction; a dummy classification batch
    // routes the inputs through the standard validation.
    let batch = Batch::classification(inputs.to_vec(), spec.input_dim, vec![0; labels.len()])?;
    let z = logits(spec, w, &batch)?;
    let k = spec.output_dim;
    let mut hits = 0usize;
    for (s, &label) in labels.iter().enumerate() {
        let row = &z[s * k..(s + 1) * k];
        let mut best = 0usize;
        for (o, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = o;
            }
        }
        if best == label {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}

// ── oracles ─────────────────────────────────────────────────────────────

/// Central-difference gradient with per-coordinate step
/// `scale · (1 + |w_i|)`. Touches only [`loss`], never the analytic
/// gradient, so the two paths check each other.
pub fn finite_diff_gradient(
    spec: &ModelSpec,
    w: &ParamVector,
    batch: &Batch,
) -> Result<ParamVector> {
    finite_diff_gradient_scaled(spec, w, batch, 1e-6)
}

/// [`finite_diff_gradient`] with an explicit step scale; rejects
/// non-positive scales (a zero-length perturbation measures nothing).
pub fn finite_diff_gradient_scaled(
    spec: &ModelSpec,
    w: &ParamVector,
    batch: &Batch,
    scale: f64,
) -> Result<ParamVector> {
    if !scale.is_finite() || scale <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step scale must be finite and > 0, got {scale}"
        )));
    }
    let mut probe = w.as_slice().to_vec();
    let mut g = vec![0.0; probe.len()];
    for i in 0..probe.len() {
        let orig = probe[i];
        let h = scale * (1.0 + orig.abs());
        probe[i] = orig + h;
        let up = loss(spec, &ParamVector::new(probe.clone())?, batch)?;
        probe[i] = orig - h;
        let down = loss(spec, &ParamVector::new(probe.clone())?, batch)?;
        probe[i] = orig;
        g[i] = (up - down) / (2.0 * h);
    }
    ParamVector::new(g)
}

/// Dense symmetric `d × d` matrix of second derivatives.
#[derive(Debug, Clone)]
pub struct Hessian {
    dim: usize,
    data: Vec<f64>,
}

impl Hessian {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn mat_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.dim);
        (0..self.dim)
            .map(|i| {
                self.data[i * self.dim..(i + 1) * self.dim].iter().zip(v).map(|(h, x)| h * x).sum()
            })
            .collect()
    }

    /// Dominant eigenvalue magnitude by power iteration from a fixed start
    /// vector; deterministic, intended for step-size bounds like `1/L`.
    pub fn largest_eigenvalue(&self, iters: usize) -> f64 {
        let d = self.dim;
        let mut v = vec![1.0 / (d as f64).sqrt(); d];
        let mut lambda = 0.0;
        for _ in 0..iters {
            let hv = self.mat_vec(&v);
            let norm = hv.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            lambda = norm;
            for (vi, hvi) in v.iter_mut().zip(&hv) {
                *vi = hvi / norm;
            }
        }
        lambda
    }
}

/// Exact loss Hessian for micro models (`param_count <= 64`).
///
/// Linear and logistic kinds use closed forms; the MLP uses four-point
/// central second differences of the loss, which keeps the oracle
/// independent of the analytic gradient.
pub fn exact_hessian(spec: &ModelSpec, w: &ParamVector, batch: &Batch) -> Result<Hessian> {
    batch.check_against(spec)?;
    let d = spec.param_count();
    if d > 64 {
        return Err(Error::InvalidArgument(format!(
            "exact_hessian is limited to 64 parameters, got {d}"
        )));
    }
    if w.len() != d {
        return Err(Error::LengthMismatch { left: d, right: w.len() });
    }
    let k = spec.output_dim;
    let in_dim = spec.input_dim;
    let inv_n = 1.0 / batch.n as f64;
    let mut data = vec![0.0; d * d];
    match spec.kind {
        ModelKind::LinearRegression => {
            // d²L/dW_oi dW_o'i' = δ_oo' (1/n) Σ_s x_si x_si' — independent of w.
            for s in 0..batch.n {
                let x = batch.row(s);
                for o in 0..k {
                    for i in 0..in_dim {
                        for i2 in 0..in_dim {
                            data[(o * in_dim + i) * d + (o * in_dim + i2)] += inv_n * x[i] * x[i2];
                        }
                    }
                }
            }
        }
        ModelKind::LogisticRegression => {
            // d²L/dW_oi dW_o'i' = (1/n) Σ_s x_si x_si' (p_so δ_oo' − p_so p_so').
            let z = logits(spec, w, batch)?;
            let mut p = vec![0.0; k];
            for s in 0..batch.n {
                let x = batch.row(s);
                softmax_row(&z[s * k..(s + 1) * k], &mut p);
                for o in 0..k {
                    for o2 in 0..k {
                        let coeff =
                            inv_n * (if o == o2 { p[o] * (1.0 - p[o2]) } else { -p[o] * p[o2] });
                        for i in 0..in_dim {
                            for i2 in 0..in_dim {
                                data[(o * in_dim + i) * d + (o2 * in_dim + i2)] +=
                                    coeff * x[i] * x[i2];
                            }
                        }
                    }
                }
            }
        }
        ModelKind::MlpOneHidden => {
            let base = w.as_slice().to_vec();
            let mut probe = base.clone();
            let step = |v: f64| 1e-4 * (1.0 + v.abs());
            let eval =
                |probe: &mut Vec<f64>, i: usize, si: f64, j: usize, sj: f64| -> Result<f64> {
                    probe[i] += si;
                    probe[j] += sj;
                    let out = loss(spec, &ParamVector::new(probe.clone())?, batch);
                    probe[i] = base[i];
                    probe[j] = base[j];
                    out
                };
            for i in 0..d {
                let hi = step(base[i]);
                for j in i..d {
                    let hj = step(base[j]);
                    let pp = eval(&mut probe, i, hi, j, hj)?;
                    let pm = eval(&mut probe, i, hi, j, -hj)?;
                    let mp = eval(&mut probe, i, -hi, j, hj)?;
                    let mm = eval(&mut probe, i, -hi, j, -hj)?;
                    let v = (pp - pm - mp + mm) / (4.0 * hi * hj);
                    data[i * d + j] = v;
                    data[j * d + i] = v;
                }
            }
        }
    }
    if !data.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { context: "exact_hessian" });
    }
    Ok(Hessian { dim: d, data })
}
