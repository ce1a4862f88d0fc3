//! Adadelta, adaptive gradient clipping and multiplicative weight decay.

use super::{NumError, ParamId, ParamStore, Result, Tensor};

/// Geometric interpolation from `start` to `end` over `epochs` epochs:
/// `epsilon(0) = start`, `epsilon(epochs) = end`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub epochs: usize,
}

impl EpsilonSchedule {
    pub fn new(start: f64, end: f64, epochs: usize) -> Result<Self> {
        if !(start > 0.0 && end > 0.0 && end <= start) {
            return Err(NumError::InvalidArgument(format!(
                "epsilon schedule needs 0 < end <= start, got {start} -> {end}"
            )));
        }
        Ok(EpsilonSchedule { start, end, epochs })
    }

    pub fn at(&self, epoch: usize) -> f64 {
        if self.epochs == 0 {
            return self.start;
        }
        let t = (epoch.min(self.epochs)) as f64 / self.epochs as f64;
        // Exact endpoints regardless of rounding in powf.
        if epoch == 0 {
            self.start
        } else if epoch >= self.epochs {
            self.end
        } else {
            self.start * (self.end / self.start).powf(t)
        }
    }
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule {
            start: 1e-8,
            end: 1e-12,
            epochs: 1,
        }
    }
}

/// Running averages of squared gradients and squared updates.
#[derive(Clone, Debug)]
pub struct AdadeltaState {
    pub rho: f64,
    pub epsilon: f64,
    sq_grad: Vec<Option<Tensor>>,
    sq_update: Vec<Option<Tensor>>,
}

impl AdadeltaState {
    pub fn new(rho: f64, epsilon: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(NumError::InvalidArgument(format!("rho {rho} outside (0, 1)")));
        }
        if !(epsilon > 0.0) {
            return Err(NumError::InvalidArgument(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        Ok(AdadeltaState {
            rho,
            epsilon,
            sq_grad: Vec::new(),
            sq_update: Vec::new(),
        })
    }

    pub fn sq_grad(&self, id: ParamId) -> Option<&Tensor> {
        self.sq_grad.get(id.index()).and_then(Option::as_ref)
    }

    pub fn sq_update(&self, id: ParamId) -> Option<&Tensor> {
        self.sq_update.get(id.index()).and_then(Option::as_ref)
    }
}

/// Applies one Adadelta update to the selected parameters using their
/// current gradients:
///
/// ```text
/// E[g²]  ← ρ E[g²]  + (1-ρ) g²
/// Δ      = -sqrt(E[Δ²] + ε) / sqrt(E[g²] + ε) · g
/// E[Δ²]  ← ρ E[Δ²]  + (1-ρ) Δ²
/// θ      ← θ + Δ
/// ```
///
/// All gradients are checked before anything is modified; a non-finite
/// gradient aborts the whole step.
pub fn adadelta_step(
    store: &mut ParamStore,
    ids: &[ParamId],
    state: &mut AdadeltaState,
) -> Result<()> {
    for &id in ids {
        let p = store.get(id);
        if !p.grad.is_finite() {
            return Err(NumError::NonFinite(p.name().to_string()));
        }
    }
    let need = store.len();
    if state.sq_grad.len() < need {
        state.sq_grad.resize(need, None);
        state.sq_update.resize(need, None);
    }
    let (rho, eps) = (state.rho, state.epsilon);
    for &id in ids {
        let p = store.get_mut(id);
        let shape = p.value.shape().to_vec();
        let eg = state.sq_grad[id.index()].get_or_insert_with(|| Tensor::zeros(&shape));
        let ed = state.sq_update[id.index()].get_or_insert_with(|| Tensor::zeros(&shape));
        let values = p.value.data_mut();
        let grads = p.grad.data();
        for i in 0..values.len() {
            let g = grads[i];
            let acc_g = rho * eg.data()[i] + (1.0 - rho) * g * g;
            eg.data_mut()[i] = acc_g;
            let delta = -((ed.data()[i] + eps).sqrt() / (acc_g + eps).sqrt()) * g;
            ed.data_mut()[i] = rho * ed.data()[i] + (1.0 - rho) * delta * delta;
            values[i] += delta;
        }
    }
    Ok(())
}

/// Adaptive clipping: gradients whose global norm exceeds `multiplier`
/// times the running mean of recent norms are rescaled to that bound.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipState {
    pub decay: f64,
    pub multiplier: f64,
    mean: Option<f64>,
}

impl ClipState {
    pub fn new(decay: f64, multiplier: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&decay) || !(multiplier > 0.0) {
            return Err(NumError::InvalidArgument(format!(
                "clip decay {decay} must be in [0, 1) and multiplier {multiplier} positive"
            )));
        }
        Ok(ClipState {
            decay,
            multiplier,
            mean: None,
        })
    }

    /// Running mean, once the first nonzero norm has been seen.
    pub fn mean(&self) -> Option<f64> {
        self.mean
    }

    /// Seeds the running mean directly.
    pub fn with_mean(mut self, mean: f64) -> Self {
        self.mean = Some(mean);
        self
    }

    /// Given an observed norm, returns the scale to apply and updates the
    /// running mean with the post-clip norm.
    pub fn observe(&mut self, norm: f64) -> f64 {
        if !(norm > 0.0) || !norm.is_finite() {
            return 1.0;
        }
        match self.mean {
            None => {
                self.mean = Some(norm);
                1.0
            }
            Some(mean) => {
                let bound = self.multiplier * mean;
                let scale = if norm > bound { bound / norm } else { 1.0 };
                let clipped = norm * scale;
                self.mean = Some(self.decay * mean + (1.0 - self.decay) * clipped);
                scale
            }
        }
    }
}

impl Default for ClipState {
    fn default() -> Self {
        ClipState {
            decay: 0.99,
            multiplier: 2.0,
            mean: None,
        }
    }
}

/// Clips the gradients of the selected parameters; returns the applied scale.
pub fn clip_gradients(store: &mut ParamStore, ids: &[ParamId], state: &mut ClipState) -> f64 {
    let norm = store.grad_norm(ids);
    let scale = state.observe(norm);
    if scale != 1.0 {
        for &id in ids {
            store.get_mut(id).grad.scale_in_place(scale);
        }
    }
    scale
}

/// Multiplies every non-bias parameter by `factor`.
pub fn weight_decay(store: &mut ParamStore, factor: f64) -> Result<()> {
    if !(factor > 0.0 && factor <= 1.0) {
        return Err(NumError::InvalidArgument(format!(
            "weight decay factor {factor} outside (0, 1]"
        )));
    }
    if factor == 1.0 {
        return Ok(());
    }
    for (_, p) in store.iter_mut() {
        if p.decays() {
            p.value.scale_in_place(factor);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64, grad: f64) -> (ParamStore, ParamId) {
        let mut store = ParamStore::new();
        let id = store.add_weight("w", Tensor::scalar(value)).unwrap();
        store.get_mut(id).grad = Tensor::scalar(grad);
        (store, id)
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut store = ParamStore::new();
        let id = store
            .add_weight("w", Tensor::new(&[2, 2], vec![1.0, -2.0, 3.0, 0.5]).unwrap())
            .unwrap();
        let before = store.value(id).clone();
        let mut state = AdadeltaState::new(0.95, 1e-8).unwrap();
        for _ in 0..5 {
            adadelta_step(&mut store, &[id], &mut state).unwrap();
        }
        assert_eq!(store.value(id), &before);
    }

    #[test]
    fn scalar_recurrence_matches_hand_run() {
        // Hand-run of the recurrence with rho = 0.9, eps = 1e-6, g = 0.5.
        let (rho, eps, g) = (0.9_f64, 1e-6_f64, 0.5_f64);
        let mut eg = 0.0;
        let mut ed = 0.0;
        let mut x = 1.0;
        let mut expected = Vec::new();
        for _ in 0..4 {
            eg = rho * eg + (1.0 - rho) * g * g;
            let d = -((ed + eps) as f64).sqrt() / (eg + eps).sqrt() * g;
            ed = rho * ed + (1.0 - rho) * d * d;
            x += d;
            expected.push(x);
        }
        // First step by hand: eg = 0.025, d = -sqrt(1e-6)/sqrt(0.025001) * 0.5.
        let first = 1.0 - 1e-3 / 0.025001_f64.sqrt() * 0.5;
        assert!((expected[0] - first).abs() < 1e-15);

        let (mut store, id) = single(1.0, g);
        let mut state = AdadeltaState::new(rho, eps).unwrap();
        for want in expected {
            adadelta_step(&mut store, &[id], &mut state).unwrap();
            assert!((store.value(id).data()[0] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_gradient_aborts_without_touching_values() {
        let mut store = ParamStore::new();
        let a = store.add_weight("a", Tensor::scalar(1.0)).unwrap();
        let b = store.add_weight("layer.b", Tensor::scalar(2.0)).unwrap();
        store.get_mut(a).grad = Tensor::scalar(0.1);
        store.get_mut(b).grad = Tensor::scalar(f64::NAN);
        let mut state = AdadeltaState::new(0.95, 1e-8).unwrap();
        let err = adadelta_step(&mut store, &[a, b], &mut state).unwrap_err();
        assert!(matches!(err, NumError::NonFinite(ref name) if name == "layer.b"));
        assert_eq!(store.value(a).data()[0], 1.0);
    }

    #[test]
    fn epsilon_schedule_is_geometric_between_endpoints() {
        let s = EpsilonSchedule::new(1e-8, 1e-12, 4).unwrap();
        assert_eq!(s.at(0), 1e-8);
        assert_eq!(s.at(4), 1e-12);
        assert!((s.at(1) / 1e-9 - 1.0).abs() < 1e-12);
        assert!((s.at(2) / 1e-10 - 1.0).abs() < 1e-12);
        for e in 0..4 {
            assert!(s.at(e + 1) <= s.at(e));
        }
    }

    #[test]
    fn clipping_example_values() {
        let mut store = ParamStore::new();
        let id = store.add_weight("w", Tensor::row(vec![6.0, 8.0])).unwrap();
        store.get_mut(id).grad = Tensor::row(vec![6.0, 8.0]);
        let mut state = ClipState::new(0.99, 2.0).unwrap().with_mean(1.0);
        let scale = clip_gradients(&mut store, &[id], &mut state);
        assert!((scale - 0.2).abs() < 1e-15);
        assert!((store.grad_norm(&[id]) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn first_observation_initializes_without_clipping() {
        let mut state = ClipState::default();
        assert_eq!(state.observe(123.0), 1.0);
        assert_eq!(state.mean(), Some(123.0));
        assert_eq!(state.observe(10.0), 1.0);
    }

    #[test]
    fn weight_decay_skips_biases_and_composes() {
        let mut store = ParamStore::new();
        let w = store.add_weight("w", Tensor::scalar(1.0)).unwrap();
        let b = store.add_bias("b", Tensor::scalar(1.0)).unwrap();
        weight_decay(&mut store, 1.0).unwrap();
        assert_eq!(store.value(w).data()[0], 1.0);
        weight_decay(&mut store, 0.95).unwrap();
        assert_eq!(store.value(w).data()[0], 0.95);
        weight_decay(&mut store, 0.95).unwrap();
        assert!((store.value(w).data()[0] - 0.9025).abs() < 1e-15);
        assert_eq!(store.value(b).data()[0], 1.0);
        assert!(weight_decay(&mut store, 0.0).is_err());
        assert!(weight_decay(&mut store, 1.5).is_err());
    }
}
