use super::param::ParamSet;

/// Rescales all gradients so their joint norm is at most `threshold`.
///
/// Returns the norm measured before clipping.
pub fn clip_global_norm(params: &mut ParamSet, threshold: f64) -> f64 {
    assert!(threshold > 0.0, "clip threshold must be positive");
    let norm = params.grad_norm();
    if norm > threshold {
        let scale = threshold / norm;
        for p in params.iter_mut() {
            p.grad_mut().data_mut().iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}

/// Centered RMSProp with momentum:
///
/// ```text
/// n <- d n + (1 - d) g^2
/// m <- d m + (1 - d) g
/// delta <- momentum delta - lr g / sqrt(n - m^2 + damping)
/// theta <- theta + delta
/// ```
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RmsProp {
    pub lr: f64,
    pub momentum: f64,
    pub decay: f64,
    pub damping: f64,
}

impl Default for RmsProp {
    fn default() -> Self {
        RmsProp {
            lr: 1e-4,
            momentum: 0.9,
            decay: 0.95,
            damping: 1e-4,
        }
    }
}

impl RmsProp {
    pub fn new(lr: f64, momentum: f64) -> Self {
        RmsProp {
            lr,
            momentum,
            ..RmsProp::default()
        }
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step(&self, params: &mut ParamSet) {
        let d = self.decay;
        for p in params.iter_mut() {
            let len = p.len();
            for i in 0..len {
                let g = p.grad().data()[i];
                let n = d * p.mean_square.data()[i] + (1.0 - d) * g * g;
                let m = d * p.mean.data()[i] + (1.0 - d) * g;
                let delta =
                    self.momentum * p.delta.data()[i] - self.lr * g / (n - m * m + self.damping).sqrt();
                p.mean_square.data_mut()[i] = n;
                p.mean.data_mut()[i] = m;
                p.delta.data_mut()[i] = delta;
                p.value_mut().data_mut()[i] += delta;
            }
            p.grad_mut().fill(0.0);
        }
    }
}
