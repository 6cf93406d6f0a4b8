//! Server-side aggregation.
//!
//! Two strategies share this module. The synchronous baseline averages
//! uploaded weights directly (`fedavg_aggregate`). The overlapped strategy
//! uploads weights that were trained against an older global model, so its
//! server pipeline (`phi`) runs four steps:
//!
//! 1. **restore** — recover each client's summed gradient from its uploaded
//!    weights: `g_k = (w_basis − w_received) / eta`, where `w_basis` is the
//!    global model the client trained from;
//! 2. **aggregate** — convex combination under the shard weights `p_k`,
//!    renormalized over the clients actually present;
//! 3. **compensate** — push the stale gradient one round forward with a
//!    curvature proxy, `g + lambda · g ⊙ g ⊙ (w_t − w_basis)`. The
//!    elementwise gradient outer product stands in for the Hessian
//!    diagonal; `lambda` damps it;
//! 4. **accelerate** — Nesterov-style momentum. Two published forms of the
//!    velocity update disagree on the correction coefficient, so both are
//!    implemented (see [`NagMode`]).
//!
//! Finally `w_{t+1} = w_t − eta · v'`. Information consumed by `phi` is
//! exactly one round stale in the overlapped schedule; the state tracks the
//! previous global model to restore against.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::model::{self, Batch, ModelSpec};
use crate::param::ParamVector;
use crate::rng;

/// Velocity update variant. With raw aggregate `g`, compensated gradient
/// `g~`, and momentum `beta`:
///
/// * `ScaledCorrection`: `v' = beta·v + g~ + beta·(g~ − g)`
/// * `FullCorrection`:   `v' = beta·v + g~ + (g~ − g)`
///
/// The two coincide whenever `lambda = 0` (then `g~ = g`) and differ only
/// in how hard the compensation delta is pushed into the velocity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum NagMode {
    #[serde(rename = "scaled")]
    ScaledCorrection,
    #[serde(rename = "full")]
    FullCorrection,
}

/// Where compensation is applied: once to the aggregated gradient, or to
/// each restored client gradient before aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum CompensationScope {
    #[serde(rename = "aggregate")]
    Aggregate,
    #[serde(rename = "per_client")]
    PerClient,
}

/// One client's upload. `staleness` is the age, in global rounds, of the
/// model the client trained from: 1 in the overlapped schedule, 0 in a
/// synchronous one.
#[derive(Debug, Clone)]
pub struct ClientUpdate {
    pub client_id: usize,
    pub w_received: ParamVector,
    pub p_k: f64,
    pub staleness: u8,
}

impl ClientUpdate {
    pub fn new(client_id: usize, w_received: ParamVector, p_k: f64, staleness: u8) -> Result<Self> {
        if !p_k.is_finite() || p_k <= 0.0 || p_k > 1.0 {
            return Err(Error::InvalidArgument(format!(
                "client {client_id}: p_k must lie in (0, 1], got {p_k}"
            )));
        }
        if staleness > 1 {
            return Err(Error::InvalidArgument(format!(
                "client {client_id}: staleness must be 0 or 1, got {staleness}"
            )));
        }
        Ok(ClientUpdate { client_id, w_received, p_k, staleness })
    }
}

/// Full server state of the overlapped strategy.
#[derive(Debug, Clone)]
pub struct ServerState {
    /// Current global model `w_t`.
    pub w_t: ParamVector,
    /// Global model of the preceding round; restoration basis for
    /// staleness-1 uploads. Equals `w_t` before the first update.
    pub w_prev: ParamVector,
    /// Momentum buffer, zero-initialized.
    pub v: ParamVector,
    /// Server step size applied in `w_{t+1} = w_t − eta · v'`.
    pub eta: f64,
    /// Learning rate assumed for gradient restoration — the rate clients
    /// applied locally. Usually equals `eta`, but the two are independent:
    /// a server that assumes 1.0 here can fold the true rate into `lambda`.
    pub eta_restore: f64,
    /// Compensation strength, `>= 0`. Zero disables compensation.
    pub lambda: f64,
    /// Momentum coefficient in `[0, 1)`. Zero disables acceleration.
    pub beta: f64,
    /// Completed global updates.
    pub round: u64,
    pub nag_mode: NagMode,
    pub compensation: CompensationScope,
}

impl ServerState {
    /// Fresh state around an initial model: `w_prev = w_t = w0`, zero
    /// momentum, restoration rate equal to the step rate.
    pub fn new(
        w0: ParamVector,
        eta: f64,
        lambda: f64,
        beta: f64,
        nag_mode: NagMode,
        compensation: CompensationScope,
    ) -> Result<Self> {
        let state = ServerState {
            w_prev: w0.clone(),
            v: ParamVector::zeros(w0.len())?,
            w_t: w0,
            eta,
            eta_restore: eta,
            lambda,
            beta,
            round: 0,
            nag_mode,
            compensation,
        };
        state.validate()?;
        Ok(state)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [("eta", self.eta), ("eta_restore", self.eta_restore)] {
            if !value.is_finite() || value <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "server {name} must be finite and > 0, got {value}"
                )));
            }
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if !self.beta.is_finite() || !(0.0..1.0).contains(&self.beta) {
            return Err(Error::InvalidArgument(format!(
                "beta must lie in [0, 1), got {}",
                self.beta
            )));
        }
        for (name, v) in [("w_prev", &self.w_prev), ("v", &self.v)] {
            if v.len() != self.w_t.len() {
                return Err(Error::InvalidArgument(format!(
                    "server state {name} length {} does not match w_t length {}",
                    v.len(),
                    self.w_t.len()
                )));
            }
        }
        Ok(())
    }
}

/// Uniform sample of `max(ceil(fraction · n), 1)` distinct client ids,
/// returned sorted. The whole population comes back for `fraction = 1`.
pub fn sample_clients(n_clients: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if n_clients == 0 {
        return Err(Error::InvalidArgument("n_clients must be >= 1".into()));
    }
    if !fraction.is_finite() || !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!(
            "client fraction must lie in [0, 1], got {fraction}"
        )));
    }
    let m = ((fraction * n_clients as f64).ceil() as usize).max(1).min(n_clients);
    let mut ids: Vec<usize> = (0..n_clients).collect();
    ids.shuffle(&mut rng::stream(&[seed, rng::STREAM_CLIENT_SAMPLING]));
    ids.truncate(m);
    ids.sort_unstable();
    Ok(ids)
}

/// Weighted average of uploaded weight vectors, `sum p'_k · w_k`, with the
/// weights renormalized over the updates present. This is the entire
/// synchronous server step.
pub fn fedavg_aggregate(updates: &[ClientUpdate]) -> Result<ParamVector> {
    let vectors: Vec<(f64, &ParamVector)> =
        updates.iter().map(|u| (u.p_k, &u.w_received)).collect();
    weighted_average(&vectors)
}

/// Convex combination with renormalized non-negative weights.
pub fn weighted_average(items: &[(f64, &ParamVector)]) -> Result<ParamVector> {
    if items.is_empty() {
        return Err(Error::Empty("weighted average"));
    }
    let total: f64 = items.iter().map(|(p, _)| p).sum();
    if !total.is_finite() || total <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "weights must sum to a positive value, got {total}"
        )));
    }
    let mut acc = ParamVector::zeros(items[0].1.len())?;
    for (p, v) in items {
        acc = acc.add(&v.scale(p / total)?)?;
    }
    Ok(acc)
}

/// Recovers the summed local gradient from an uploaded model:
/// `(w_basis − w_received) / eta_assumed`. The division undoes the step
/// size the client applied, so scaling `eta_assumed` by `c` scales the
/// result by `1/c`.
pub fn restore_gradient(
    w_basis: &ParamVector,
    w_received: &ParamVector,
    eta_assumed: f64,
) -> Result<ParamVector> {
    if !eta_assumed.is_finite() || eta_assumed <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "eta_assumed must be finite and > 0, got {eta_assumed}"
        )));
    }
    w_basis.sub(w_received)?.scale(1.0 / eta_assumed)
}

/// Pushes a stale gradient toward the current point:
/// `g + lambda · g ⊙ g ⊙ (w_t − w_basis)`.
///
/// `g ⊙ g` is the diagonal of the gradient outer product, a cheap proxy for
/// the loss curvature; `lambda` scales how much of the first-order
/// correction `H · (w_t − w_basis)` is trusted. Identity when
/// `lambda = 0` or the model has not moved.
pub fn compensate(
    grad: &ParamVector,
    w_t: &ParamVector,
    w_basis: &ParamVector,
    lambda: f64,
) -> Result<ParamVector> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "lambda must be finite and >= 0, got {lambda}"
        )));
    }
    let displacement = w_t.sub(w_basis)?;
    let correction = grad.hadamard(grad)?.hadamard(&displacement)?.scale(lambda)?;
    grad.add(&correction)
}

/// Velocity update; see [`NagMode`] for the two variants.
pub fn nag_update(
    v: &ParamVector,
    grad_compensated: &ParamVector,
    grad_raw: &ParamVector,
    beta: f64,
    mode: NagMode,
) -> Result<ParamVector> {
    if !beta.is_finite() || !(0.0..1.0).contains(&beta) {
        return Err(Error::InvalidArgument(format!("beta must lie in [0, 1), got {beta}")));
    }
    let correction = grad_compensated.sub(grad_raw)?;
    let coeff = match mode {
        NagMode::ScaledCorrection => beta,
        NagMode::FullCorrection => 1.0,
    };
    v.scale(beta)?.add(grad_compensated)?.add(&correction.scale(coeff)?)
}

/// One full server update: restore, aggregate, compensate, accelerate,
/// step. Returns the successor state with `round` advanced and `w_prev`
/// holding the old `w_t`.
///
/// All updates must share one staleness level; it selects the restoration
/// basis (`w_prev` for stale uploads, `w_t` for synchronous ones).
pub fn phi(state: &ServerState, updates: &[ClientUpdate]) -> Result<ServerState> {
    state.validate()?;
    if updates.is_empty() {
        return Err(Error::Empty("phi updates"));
    }
    let staleness = updates[0].staleness;
    for u in updates {
        if u.staleness != staleness {
            return Err(Error::InvalidArgument(format!(
                "mixed staleness in one round: client {} has {}, expected {staleness}",
                u.client_id, u.staleness
            )));
        }
        if u.w_received.len() != state.w_t.len() {
            return Err(Error::LengthMismatch { left: state.w_t.len(), right: u.w_received.len() });
        }
    }
    let basis = if staleness == 0 { &state.w_t } else { &state.w_prev };

    let restored: Vec<ParamVector> = updates
        .iter()
        .map(|u| restore_gradient(basis, &u.w_received, state.eta_restore))
        .collect::<Result<_>>()?;
    let weighted: Vec<(f64, &ParamVector)> =
        updates.iter().zip(&restored).map(|(u, g)| (u.p_k, g)).collect();
    let grad_raw = weighted_average(&weighted)?;

    let grad_compensated = match state.compensation {
        CompensationScope::Aggregate => compensate(&grad_raw, &state.w_t, basis, state.lambda)?,
        CompensationScope::PerClient => {
            let per_client: Vec<ParamVector> = restored
                .iter()
                .map(|g| compensate(g, &state.w_t, basis, state.lambda))
                .collect::<Result<_>>()?;
            let weighted: Vec<(f64, &ParamVector)> =
                updates.iter().zip(&per_client).map(|(u, g)| (u.p_k, g)).collect();
            weighted_average(&weighted)?
        }
    };

    let v_next = nag_update(&state.v, &grad_compensated, &grad_raw, state.beta, state.nag_mode)?;
    let w_next = state.w_t.sub(&v_next.scale(state.eta)?)?;

    Ok(ServerState {
        w_prev: state.w_t.clone(),
        w_t: w_next,
        v: v_next,
        round: state.round + 1,
        ..*state
    })
}

/// Norm of the compensation residual
/// `‖∇F(w_t) − compensate(∇F(w_basis), w_t, w_basis, lambda)‖₂` — how far
/// the curvature proxy is from the true current gradient. Shrinks with the
/// step that separates `w_basis` from `w_t`.
pub fn approximation_gap(
    spec: &ModelSpec,
    w_t: &ParamVector,
    w_basis: &ParamVector,
    batch: &Batch,
    lambda: f64,
) -> Result<f64> {
    let g_stale = model::gradient(spec, w_basis, batch)?;
    let g_true = model::gradient(spec, w_t, batch)?;
    let compensated = compensate(&g_stale, w_t, w_basis, lambda)?;
    g_true.sub(&compensated)?.l2_norm()
}
