//! Generalized advantage estimation.

use super::PpoError;

/// Backward-recursion GAE with a zero bootstrap value after the terminal
/// token (a response is a finite episode):
///
/// ```text
/// delta_t = r_t + gamma * V_{t+1} - V_t        (V_{T+1} = 0)
/// A_t     = delta_t + gamma * lambda * A_{t+1}
/// ```
///
/// Returns `(advantages, returns)` with `returns = advantages + values`.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    gamma: f64,
    lam: f64,
) -> Result<(Vec<f64>, Vec<f64>), PpoError> {
    if rewards.len() != values.len() {
        return Err(PpoError::LengthMismatch {
            left: rewards.len(),
            right: values.len(),
        });
    }
    if rewards.is_empty() {
        return Err(PpoError::EmptyInput);
    }
    let len = rewards.len();
    let mut advantages = vec![0.0; len];
    let mut acc = 0.0;
    for t in (0..len).rev() {
        let next_value = if t + 1 < len { values[t + 1] } else { 0.0 };
        let delta = rewards[t] + gamma * next_value - values[t];
        acc = delta + gamma * lam * acc;
        advantages[t] = acc;
    }
    let returns = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((advantages, returns))
}
