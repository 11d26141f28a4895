//! The four-phase round scheduler for the edge-reweighting ruleset.
//!
//! Round 4l+k runs column k for layer l = (round/4) mod L:
//!   k=0  communication  A(i) += sigma_l(i,j) X(j)         (inference from state)
//!        computation    Xe, Xi reset
//!   k=1  communication  sigma_l(i,j) += Gs(i,j) Y(i) X(j) (Hebbian reweighting)
//!        computation    Y, Ye, Yi reset
//!   k=2  communication  Ye(i) += Gy^e(i,j) A(j), Yi(i) += Gy^i(i,j) A(j)
//!        computation    Y(i) = relu(Ye - Yi)(i) * X(i); A reset;
//!                        sigma_l(i,j) *= 1 - u(i,j)
//!   k=3  communication  Xe(i) += Gx^e(i,j) Y(j), Xi(i) += Gx^i(i,j) Y(j)
//!        computation    X(i) += relu(Xe - Xi)(i)
//!
//! Communication reads the pre-round snapshot; writes land on variables no
//! rule of the same phase reads, so in-place accumulation is committed
//! two-phase semantics. The sigma damping runs once per (token, layer), after
//! that token's Hebbian write, which makes an execution match the dense
//! state-space recurrence sigma_t = (sigma_{t-1} + increment) U exactly.

use super::{KernelError, KernelModel, KernelState};

/// Execute one round (the column selected by `state.round`), committing all
/// effects atomically at round end.
pub fn run_round(model: &KernelModel, state: &mut KernelState) {
    let layer = ((state.round / 4) as usize) % model.layers;
    let phase = state.round % 4;
    match phase {
        0 => {
            let sigma = &state.sigma[layer];
            for (e, &(i, j, _)) in model.gs.edges.iter().enumerate() {
                state.a[i] += sigma[e] * state.x[j];
            }
            state.xe.fill(0.0);
            state.xi.fill(0.0);
        }
        1 => {
            let sigma = &mut state.sigma[layer];
            for (e, &(i, j, w)) in model.gs.edges.iter().enumerate() {
                sigma[e] += w * state.y[i] * state.x[j];
            }
            state.y.fill(0.0);
            state.ye.fill(0.0);
            state.yi.fill(0.0);
        }
        2 => {
            for &(i, j, w) in &model.gy_e.edges {
                state.ye[i] += w * state.a[j];
            }
            for &(i, j, w) in &model.gy_i.edges {
                state.yi[i] += w * state.a[j];
            }
            for i in 0..model.n {
                state.y[i] = (state.ye[i] - state.yi[i]).max(0.0) * state.x[i];
            }
            state.a.fill(0.0);
            let sigma = &mut state.sigma[layer];
            for (e, &u) in model.u.iter().enumerate() {
                if u != 0.0 {
                    sigma[e] *= 1.0 - u;
                }
            }
        }
        3 => {
            for &(i, j, w) in &model.gx_e.edges {
                state.xe[i] += w * state.y[j];
            }
            for &(i, j, w) in &model.gx_i.edges {
                state.xi[i] += w * state.y[j];
            }
            for i in 0..model.n {
                state.x[i] += (state.xe[i] - state.xi[i]).max(0.0);
            }
        }
        _ => unreachable!(),
    }
    state.round += 1;
}

/// Ingest one token: load `x_in` into X, run 4L rounds, read the result out
/// of X. Synapse state and the Y carry persist across tokens.
pub fn step_token(
    model: &KernelModel,
    state: &mut KernelState,
    x_in: &[f64],
) -> Result<Vec<f64>, KernelError> {
    if x_in.len() != model.n {
        return Err(KernelError::Domain(format!(
            "input length {} != n = {}",
            x_in.len(),
            model.n
        )));
    }
    if let Some(bad) = x_in.iter().find(|&&v| !(v >= 0.0)) {
        return Err(KernelError::Domain(format!(
            "token input must be non-negative, got {bad}"
        )));
    }
    if state.round % (4 * model.layers as u64) != 0 {
        return Err(KernelError::Domain(
            "step_token must start at a token boundary".into(),
        ));
    }
    state.x.copy_from_slice(x_in);
    for _ in 0..4 * model.layers {
        run_round(model, state);
    }
    Ok(state.x.clone())
}
