//! Generalized advantage estimation over one environment lane.

use crate::{Error, Result};

/// Backward-recursive GAE. `values[t]` is V(s_t); `bootstrap` stands in
/// for V(s_T) when the lane was cut mid-episode (ignored after a
/// terminal step). Returns (advantages, returns) with R_t = A_t + V_t.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lam: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if rewards.len() != values.len() || rewards.len() != dones.len() {
        return Err(Error::Input(format!(
            "gae length mismatch: {} rewards, {} values, {} dones",
            rewards.len(),
            values.len(),
            dones.len()
        )));
    }
    let t_max = rewards.len();
    let mut adv = vec![0.0f64; t_max];
    let mut acc = 0.0f64;
    for t in (0..t_max).rev() {
        let cont = if dones[t] { 0.0 } else { 1.0 };
        let v_next = if t + 1 < t_max { values[t + 1] } else { bootstrap };
        let delta = rewards[t] + gamma * v_next * cont - values[t];
        acc = delta + gamma * lam * cont * acc;
        adv[t] = acc;
    }
    let returns = adv.iter().zip(values.iter()).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Direct double-loop evaluation of the same estimator: each advantage
/// is the explicit discounted sum of TD residuals up to the episode or
/// lane boundary. Quadratic in length; exists to cross-check the
/// recursive form.
pub fn compute_gae_direct(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lam: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if rewards.len() != values.len() || rewards.len() != dones.len() {
        return Err(Error::Input("gae length mismatch".into()));
    }
    let t_max = rewards.len();
    let delta = |t: usize| -> f64 {
        let cont = if dones[t] { 0.0 } else { 1.0 };
        let v_next = if t + 1 < t_max { values[t + 1] } else { bootstrap };
        rewards[t] + gamma * v_next * cont - values[t]
    };
    let mut adv = vec![0.0f64; t_max];
    for t in 0..t_max {
        let mut factor = 1.0f64;
        for idx in t..t_max {
            adv[t] += factor * delta(idx);
            if dones[idx] {
                break;
            }
            factor *= gamma * lam;
        }
    }
    let returns = adv.iter().zip(values.iter()).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}
