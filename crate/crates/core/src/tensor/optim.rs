use super::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Adam moments, shape-congruent with the parameters of the store they were
/// created for.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
    pub lr: f64,
}

impl OptimizerState {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let m: Vec<Vec<f64>> = store.entries().iter().map(|e| vec![0.0; e.value.len()]).collect();
        Self { v: m.clone(), m, step: 0, lr }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl Adam {
    /// One bias-corrected Adam update over `params`, then clears their grads.
    pub fn step(&self, store: &mut ParamStore, state: &mut OptimizerState, params: &[ParamId]) -> Result<()> {
        if state.m.len() != store.len() {
            return Err(Error::Contract("optimizer state was built for a different parameter set".into()));
        }
        for &id in params {
            let e = store.entry(id);
            if !e.trainable {
                return Err(Error::Contract(format!("{} is a buffer, not a trainable parameter", e.name)));
            }
            if e.grad.is_none() {
                return Err(Error::Contract(format!("parameter {} has no gradient", e.name)));
            }
        }
        state.step += 1;
        let t = state.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let lr = state.lr;
        let entries = store.entries_mut();
        for &id in params {
            let e = &mut entries[id.0];
            let grad = e.grad.take().expect("checked above");
            let (m, v) = (&mut state.m[id.0], &mut state.v[id.0]);
            for (((p, g), m), v) in e.value.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn one_param(value: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add_param("p", Tensor::scalar(value));
        (s, id)
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut s, id) = one_param(1.0);
        let mut st = OptimizerState::new(&s, 0.002);
        s.accumulate_grad(id, &[1.0]).unwrap();
        Adam::default().step(&mut s, &mut st, &[id]).unwrap();
        // m_hat = 1, v_hat = 1, update = lr / (1 + 1e-8).
        let expected = 1.0 - 0.002 / (1.0 + 1e-8);
        assert!((s.value(id).data()[0] - expected).abs() < 1e-15);
        assert!((s.value(id).data()[0] - 0.998).abs() < 1e-10);
        assert_eq!(st.step, 1);
        assert!(s.grad(id).is_none());
    }

    #[test]
    fn zero_grad_leaves_param_and_decays_moments() {
        let (mut s, id) = one_param(0.5);
        let mut st = OptimizerState::new(&s, 0.002);
        st.m[0] = vec![0.4];
        st.v[0] = vec![0.2];
        s.accumulate_grad(id, &[0.0]).unwrap();
        Adam::default().step(&mut s, &mut st, &[id]).unwrap();
        assert!((st.m[0][0] - 0.36).abs() < 1e-15);
        assert!((st.v[0][0] - 0.2 * 0.999).abs() < 1e-15);
        // Nonzero carried momentum still moves the parameter; only a fresh
        // state with zero grad is a no-op.
        let (mut s2, id2) = one_param(0.5);
        let mut st2 = OptimizerState::new(&s2, 0.002);
        s2.accumulate_grad(id2, &[0.0]).unwrap();
        Adam::default().step(&mut s2, &mut st2, &[id2]).unwrap();
        assert_eq!(s2.value(id2).data()[0], 0.5);
    }

    #[test]
    fn missing_grad_is_a_contract_error() {
        let (mut s, id) = one_param(1.0);
        let mut st = OptimizerState::new(&s, 0.002);
        let err = Adam::default().step(&mut s, &mut st, &[id]).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
        assert_eq!(st.step, 0);
    }

    #[test]
    fn two_steps_decrease_a_quadratic() {
        // f(p) = (p - 3)^2
        let f = |p: f64| (p - 3.0) * (p - 3.0);
        let (mut s, id) = one_param(0.0);
        let mut st = OptimizerState::new(&s, 0.002);
        let mut losses = vec![f(0.0)];
        for _ in 0..2 {
            let p = s.value(id).data()[0];
            s.accumulate_grad(id, &[2.0 * (p - 3.0)]).unwrap();
            Adam::default().step(&mut s, &mut st, &[id]).unwrap();
            losses.push(f(s.value(id).data()[0]));
        }
        assert!(losses[1] < losses[0] && losses[2] < losses[1], "{losses:?}");
    }
}
