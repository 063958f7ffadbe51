use super::params::ParamStore;

/// Adam hyperparameters. The default learning rate is `5e-5`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AdamReport {
    pub updated: usize,
    /// Parameters without a gradient slot; left untouched.
    pub skipped: usize,
}

/// One bias-corrected Adam update over every parameter that has a gradient.
/// Moment estimates and the per-parameter step count live in the store.
pub fn adam_step(store: &mut ParamStore, cfg: &AdamConfig) -> AdamReport {
    let mut report = AdamReport::default();
    for e in store.entries_mut() {
        let Some(grad) = e.grad.as_ref() else {
            report.skipped += 1;
            continue;
        };
        e.adam_t += 1;
        let t = e.adam_t as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let w = e.value.data_mut();
        for (k, &g) in grad.iter().enumerate() {
            let m = cfg.beta1 * e.adam_m[k] + (1.0 - cfg.beta1) * g;
            let v = cfg.beta2 * e.adam_v[k] + (1.0 - cfg.beta2) * g * g;
            e.adam_m[k] = m;
            e.adam_v[k] = v;
            w[k] -= cfg.lr * (m / c1) / ((v / c2).sqrt() + cfg.eps);
        }
        report.updated += 1;
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut s = ParamStore::new(0);
        let id = s.glorot("w", 3, 3).unwrap();
        let before = s.value(id).clone();
        s.entries_mut()[0].grad = Some(vec![0.0; 9]);
        let r = adam_step(&mut s, &AdamConfig::default());
        assert_eq!(r.updated, 1);
        assert_eq!(s.value(id), &before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = ParamStore::new(0);
        let id = s.insert("x", Tensor::scalar(2.0)).unwrap();
        s.entries_mut()[0].grad = Some(vec![1.0]);
        let cfg = AdamConfig::default();
        adam_step(&mut s, &cfg);
        let delta = s.value(id).data()[0] - 2.0;
        // m̂ = v̂ = 1 after bias correction
        let want = -cfg.lr / (1.0 + cfg.eps);
        assert!((delta - want).abs() < 1e-15, "{delta} vs {want}");
        assert_eq!(cfg.lr, 5e-5);
    }

    #[test]
    fn missing_gradients_are_skipped_and_counted() {
        let mut s = ParamStore::new(0);
        s.zeros("a", &[2]).unwrap();
        s.zeros("b", &[2]).unwrap();
        s.entries_mut()[1].grad = Some(vec![1.0, 1.0]);
        let r = adam_step(&mut s, &AdamConfig::default());
        assert_eq!(r, AdamReport { updated: 1, skipped: 1 });
        assert_eq!(s.get("a").unwrap().value.data(), &[0.0, 0.0]);
    }
}
