use crate::nn::{Mat, ParamSet};

/// AdamW moment buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
    /// Number of applied updates.
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl From<&super::TrainConfig> for AdamHyper {
    fn from(c: &super::TrainConfig) -> Self {
        AdamHyper {
            beta1: c.betas.0,
            beta2: c.betas.1,
            eps: c.eps,
            weight_decay: c.weight_decay,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// Some gradient entry was NaN or infinite; nothing changed.
    SkippedNonFinite,
}

/// One AdamW update with bias correction; the decay `lr * wd * p` is applied
/// to the parameters directly.
pub fn optimizer_step(
    params: &mut ParamSet,
    grads: &[Mat],
    state: &mut AdamState,
    lr: f64,
    h: &AdamHyper,
) -> StepOutcome {
    assert_eq!(grads.len(), params.len(), "gradient count");
    if !grads.iter().all(Mat::is_finite) {
        return StepOutcome::SkippedNonFinite;
    }
    state.t += 1;
    let bc1 = 1.0 - h.beta1.powi(state.t as i32);
    let bc2 = 1.0 - h.beta2.powi(state.t as i32);
    for (i, p) in params.values_mut().iter_mut().enumerate() {
        let g = &grads[i];
        assert_eq!(p.shape(), g.shape(), "gradient shape");
        let m = &mut state.m[i].data;
        let v = &mut state.v[i].data;
        for j in 0..p.data.len() {
            m[j] = h.beta1 * m[j] + (1.0 - h.beta1) * g.data[j];
            v[j] = h.beta2 * v[j] + (1.0 - h.beta2) * g.data[j] * g.data[j];
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            p.data[j] -= lr * (h.weight_decay * p.data[j] + mhat / (vhat.sqrt() + h.eps));
        }
    }
    StepOutcome::Applied
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_set(v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.add("w", Mat::filled(1, 1, v));
        p
    }

    const H: AdamHyper = AdamHyper {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
        weight_decay: 0.0,
    };

    #[test]
    fn zero_gradient_cases() {
        let mut p = scalar_set(2.0);
        let mut s = AdamState::new(&p);
        optimizer_step(&mut p, &[Mat::zeros(1, 1)], &mut s, 0.1, &H);
        assert_eq!(p.values()[0].data[0], 2.0);

        let h = AdamHyper {
            weight_decay: 0.01,
            ..H
        };
        optimizer_step(&mut p, &[Mat::zeros(1, 1)], &mut s, 1.0, &h);
        assert!((p.values()[0].data[0] - 2.0 * 0.99).abs() < 1e-15);
    }

    #[test]
    fn two_step_scalar_trajectory() {
        let h = AdamHyper {
            weight_decay: 0.1,
            ..H
        };
        let mut p = scalar_set(1.0);
        let mut s = AdamState::new(&p);
        let (g1, g2, lr) = (0.5, -0.2, 0.01);
        optimizer_step(&mut p, &[Mat::filled(1, 1, g1)], &mut s, lr, &h);
        optimizer_step(&mut p, &[Mat::filled(1, 1, g2)], &mut s, lr, &h);

        // Closed form of the two recursions.
        let mut w: f64 = 1.0;
        let m1 = 0.1 * g1;
        let v1 = 0.001 * g1 * g1;
        w -= lr * (0.1 * w + (m1 / 0.1) / ((v1 / 0.001).sqrt() + 1e-8));
        let m2 = 0.9 * m1 + 0.1 * g2;
        let v2 = 0.999 * v1 + 0.001 * g2 * g2;
        let c1 = 1.0 - 0.9f64 * 0.9;
        let c2 = 1.0 - 0.999f64 * 0.999;
        w -= lr * (0.1 * w + (m2 / c1) / ((v2 / c2).sqrt() + 1e-8));
        assert!((p.values()[0].data[0] - w).abs() < 1e-15);
        assert_eq!(s.t, 2);
    }

    #[test]
    fn non_finite_gradient_skipped() {
        let mut p = scalar_set(1.0);
        let mut s = AdamState::new(&p);
        let out = optimizer_step(&mut p, &[Mat::filled(1, 1, f64::NAN)], &mut s, 0.1, &H);
        assert_eq!(out, StepOutcome::SkippedNonFinite);
        assert_eq!(p.values()[0].data[0], 1.0);
        assert_eq!(s.t, 0);
    }
}
