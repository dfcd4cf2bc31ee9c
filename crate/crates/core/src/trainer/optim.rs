use crate::network::ModelParams;

use super::TrainConfig;

/// Learning rate at `step`: linear warm-up from 0 to the peak, cosine decay
/// to 0 at `total_steps`, and 0 afterwards.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> f64 {
    lr_at_time(step as f64, cfg)
}

/// [`lr_at`] on a continuous step axis.
pub fn lr_at_time(step: f64, cfg: &TrainConfig) -> f64 {
    let (w, total, peak) = (cfg.warmup_steps as f64, cfg.total_steps as f64, cfg.peak_lr);
    if step >= total || step <= 0.0 {
        return 0.0;
    }
    if step < w {
        return peak * step / w;
    }
    let progress = (step - w) / (total - w);
    peak * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Adam with bias correction.
pub struct Adam {
    m: ModelParams,
    v: ModelParams,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
}

impl Adam {
    pub fn new(params: &ModelParams, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam { m: params.zeros_like(), v: params.zeros_like(), beta1, beta2, eps, t: 0 }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, lr: f64) {
        self.t += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((_, mut p), (_, g)), ((_, mut m), (_, mut v))) in
            params.tensors_mut().into_iter().zip(grads.tensors()).zip(ms.into_iter().zip(vs))
        {
            ndarray::Zip::from(&mut p).and(&g).and(&mut m).and(&mut v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
    }
}

/// Global L2 norm over every gradient tensor.
pub fn grad_norm(grads: &ModelParams) -> f64 {
    grads.tensors().iter().map(|(_, t)| t.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::ModelConfig;

    #[test]
    fn schedule_shape() {
        let cfg = TrainConfig { warmup_steps: 300, total_steps: 12_000, peak_lr: 1e-4, ..Default::default() };
        assert_eq!(lr_at(0, &cfg), 0.0);
        assert!((lr_at(300, &cfg) - 1e-4).abs() < 1e-18);
        assert!((lr_at(150, &cfg) - 5e-5).abs() < 1e-18);
        assert!((lr_at(6150, &cfg) - 5e-5).abs() < 1e-15);
        assert_eq!(lr_at(12_000, &cfg), 0.0);
        assert_eq!(lr_at(20_000, &cfg), 0.0);
        for s in 0..12_000 {
            assert!(lr_at(s + 1, &cfg) >= 0.0);
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let cfg = ModelConfig { input_dim: 4, d_model: 4, n_layers: 1, n_heads: 1, ..Default::default() };
        let p0 = ModelParams::init(&cfg);
        let mut p = p0.clone();
        let mut g = p0.zeros_like();
        g.boundary_b[0] = 3.0;
        g.function_b[2] = -0.5;
        let mut opt = Adam::new(&p, 0.9, 0.999, 1e-8);
        opt.step(&mut p, &g, 0.01);
        assert!((p.boundary_b[0] - (p0.boundary_b[0] - 0.01)).abs() < 1e-9);
        assert!((p.function_b[2] - (p0.function_b[2] + 0.01)).abs() < 1e-9);
        assert_eq!(p.function_b[0], p0.function_b[0]);
    }
}
