use serde::{Deserialize, Serialize};

use super::layers::Param;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Optimizer hyperparameters. Weight decay is added to the gradient
/// (`g + wd·θ`) for both kinds, so for Adam it is L2-coupled, not decoupled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    SgdMomentum {
        lr: f64,
        momentum: f64,
        weight_decay: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
        weight_decay: f64,
    },
}

impl OptimizerConfig {
    pub fn sgd(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self::SgdMomentum {
            lr,
            momentum,
            weight_decay,
        }
    }

    pub fn adam(lr: f64) -> Self {
        Self::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            Self::SgdMomentum { lr, .. } | Self::Adam { lr, .. } => lr,
        }
    }

    fn validate(&self) -> Result<()> {
        let lr = self.lr();
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate must be > 0, got {lr}")));
        }
        Ok(())
    }
}

/// Optimizer state: config plus one set of moment buffers per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer<S> {
    config: OptimizerConfig,
    lr: f64,
    steps: u64,
    first: Vec<Vec<S>>,
    second: Vec<Vec<S>>,
}

impl<S: Scalar> Optimizer<S> {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            lr: config.lr(),
            config,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    /// Current learning rate, after any schedule decays.
    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate must be > 0, got {lr}")));
        }
        self.lr = lr;
        Ok(())
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update of every parameter. Buffers are sized on the first call and
    /// must match on every later one.
    pub fn step(&mut self, mut params: Vec<Param<'_, S>>) -> Result<()> {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![S::zero(); p.value.len()]).collect();
            if matches!(self.config, OptimizerConfig::Adam { .. }) {
                self.second = self.first.clone();
            }
        }
        if params.len() != self.first.len() {
            return Err(Error::ShapeMismatch {
                op: "optimizer step",
                expected: format!("{} parameter tensors", self.first.len()),
                found: params.len().to_string(),
            });
        }
        for (t, p) in params.iter().enumerate() {
            if p.value.len() != self.first[t].len() || p.grad.len() != p.value.len() {
                return Err(Error::ShapeMismatch {
                    op: "optimizer step",
                    expected: format!("tensor {t} with {} values", self.first[t].len()),
                    found: format!("{} values, {} grads", p.value.len(), p.grad.len()),
                });
            }
            if p.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of parameter tensor {t}")));
            }
        }
        self.steps += 1;
        let lr = S::of(self.lr);
        match self.config {
            OptimizerConfig::SgdMomentum {
                momentum,
                weight_decay,
                ..
            } => {
                let (mu, wd) = (S::of(momentum), S::of(weight_decay));
                for (p, v) in params.iter_mut().zip(&mut self.first) {
                    for ((theta, &g), vel) in p.value.iter_mut().zip(p.grad.iter()).zip(v) {
                        *vel = mu * *vel + (g + wd * *theta);
                        *theta -= lr * *vel;
                    }
                }
            }
            OptimizerConfig::Adam {
                beta1,
                beta2,
                epsilon,
                weight_decay,
                ..
            } => {
                let (b1, b2, eps, wd) = (S::of(beta1), S::of(beta2), S::of(epsilon), S::of(weight_decay));
                let t = self.steps as i32;
                let c1 = S::one() - S::of(beta1.powi(t));
                let c2 = S::one() - S::of(beta2.powi(t));
                for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
                    for (((theta, &g), m), v) in p.value.iter_mut().zip(p.grad.iter()).zip(m).zip(v) {
                        let g = g + wd * *theta;
                        *m = b1 * *m + (S::one() - b1) * g;
                        *v = b2 * *v + (S::one() - b2) * g * g;
                        let m_hat = *m / c1;
                        let v_hat = *v / c2;
                        *theta -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// What a plateau detector decided after one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlateauEvent {
    Improved,
    Waiting,
    /// Multiply the learning rate by the factor.
    Decay,
    /// Plateaued with no decays left; callers may stop early.
    Exhausted,
}

/// Step decay on a loss plateau: after `patience` consecutive epochs whose
/// loss improves on the best so far by less than `min_rel_improvement`,
/// decay the learning rate, at most `max_decays` times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauConfig {
    pub factor: f64,
    pub max_decays: usize,
    pub patience: usize,
    pub min_rel_improvement: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            factor: 0.1,
            max_decays: 2,
            patience: 5,
            min_rel_improvement: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlateauSchedule {
    config: PlateauConfig,
    best: Option<f64>,
    stale: usize,
    decays: usize,
}

impl PlateauSchedule {
    pub fn new(config: PlateauConfig) -> Self {
        Self {
            config,
            best: None,
            stale: 0,
            decays: 0,
        }
    }

    pub fn decays(&self) -> usize {
        self.decays
    }

    pub fn observe(&mut self, loss: f64) -> PlateauEvent {
        let Some(best) = self.best else {
            self.best = Some(loss);
            return PlateauEvent::Improved;
        };
        let improvement = (best - loss) / best.abs().max(f64::MIN_POSITIVE);
        self.best = Some(best.min(loss));
        if improvement >= self.config.min_rel_improvement {
            self.stale = 0;
            return PlateauEvent::Improved;
        }
        self.stale += 1;
        if self.stale < self.config.patience {
            return PlateauEvent::Waiting;
        }
        self.stale = 0;
        if self.decays < self.config.max_decays {
            self.decays += 1;
            PlateauEvent::Decay
        } else {
            PlateauEvent::Exhausted
        }
    }

    /// Observes `loss` and applies any decay to `optimizer`.
    pub fn step<S: Scalar>(&mut self, loss: f64, optimizer: &mut Optimizer<S>) -> Result<PlateauEvent> {
        let event = self.observe(loss);
        if event == PlateauEvent::Decay {
            optimizer.set_lr(optimizer.lr() * self.config.factor)?;
        }
        Ok(event)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bowl(t: &[f64]) -> f64 {
        0.5 * t.iter().map(|x| x * x).sum::<f64>()
    }

    fn step_bowl(opt: &mut Optimizer<f64>, theta: &mut [f64]) {
        // f = ½‖θ‖², ∇f = θ
        let mut grad = theta.to_vec();
        opt.step(vec![Param {
            value: theta,
            grad: &mut grad,
        }])
        .unwrap();
    }

    #[test]
    fn plain_sgd_step_is_exact() {
        let mut opt = Optimizer::new(OptimizerConfig::sgd(1.0, 0.0, 0.0)).unwrap();
        let mut theta = vec![0.5, -2.0, 3.25];
        let mut grad = vec![1.0; 3];
        opt.step(vec![Param {
            value: &mut theta,
            grad: &mut grad,
        }])
        .unwrap();
        assert_eq!(theta, vec![-0.5, -3.0, 2.25]);
    }

    #[test]
    fn sgd_weight_decay_is_added_to_gradient() {
        let mut opt = Optimizer::<f64>::new(OptimizerConfig::sgd(0.5, 0.0, 0.1)).unwrap();
        let mut theta = vec![2.0];
        let mut grad = vec![0.0];
        opt.step(vec![Param {
            value: &mut theta,
            grad: &mut grad,
        }])
        .unwrap();
        assert!((theta[0] - (2.0 - 0.5 * 0.2)).abs() < 1e-15);
    }

    #[test]
    fn plain_sgd_bowl_decreases_monotonically() {
        let mut opt = Optimizer::new(OptimizerConfig::sgd(0.1, 0.0, 0.0)).unwrap();
        let mut theta = vec![1.0, -2.0, 0.5];
        let mut last = bowl(&theta);
        for _ in 0..50 {
            step_bowl(&mut opt, &mut theta);
            let now = bowl(&theta);
            assert!(now < last, "{now} !< {last}");
            last = now;
        }
    }

    #[test]
    fn momentum_bowl_envelope_decays() {
        // heavy ball at μ=0.9, lr=0.1 on unit curvature is underdamped: the
        // iterates spiral in with modulus √0.9 per step, so f oscillates while
        // its peaks fall
        let mut opt = Optimizer::new(OptimizerConfig::sgd(0.1, 0.9, 0.0)).unwrap();
        let mut theta = vec![1.0, -2.0, 0.5];
        let start = bowl(&theta);
        let mut peaks = Vec::new();
        for _ in 0..5 {
            let mut peak = 0.0f64;
            for _ in 0..20 {
                step_bowl(&mut opt, &mut theta);
                peak = peak.max(bowl(&theta));
            }
            peaks.push(peak);
        }
        assert!(peaks[0] < start);
        assert!(peaks.windows(2).all(|w| w[1] < w[0]), "{peaks:?}");
        assert!(bowl(&theta) < 1e-3 * start);
    }

    #[test]
    fn adam_shrinks_bowl() {
        let mut opt = Optimizer::new(OptimizerConfig::adam(1e-3)).unwrap();
        let start = vec![0.3, -0.2, 0.1];
        let mut theta = start.clone();
        for _ in 0..1000 {
            step_bowl(&mut opt, &mut theta);
        }
        let n = |t: &[f64]| t.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(n(&theta) < 0.1 * n(&start), "{}", n(&theta));
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut opt = Optimizer::new(OptimizerConfig::sgd(0.1, 0.0, 0.0)).unwrap();
        let mut theta = vec![1.0];
        let mut grad = vec![f64::NAN];
        let err = opt
            .step(vec![Param {
                value: &mut theta,
                grad: &mut grad,
            }])
            .unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!(theta, vec![1.0]);
    }

    #[test]
    fn shape_change_rejected() {
        let mut opt = Optimizer::new(OptimizerConfig::adam(1e-3)).unwrap();
        let (mut a, mut g) = (vec![1.0; 2], vec![0.0; 2]);
        opt.step(vec![Param { value: &mut a, grad: &mut g }]).unwrap();
        let (mut a, mut g) = (vec![1.0; 3], vec![0.0; 3]);
        assert!(opt.step(vec![Param { value: &mut a, grad: &mut g }]).is_err());
    }

    #[test]
    fn non_positive_lr_rejected() {
        assert!(Optimizer::<f64>::new(OptimizerConfig::sgd(0.0, 0.9, 0.0)).is_err());
    }

    const PATIENT3: PlateauConfig = PlateauConfig {
        factor: 0.1,
        max_decays: 2,
        patience: 3,
        min_rel_improvement: 0.01,
    };

    #[test]
    fn plateau_decays_twice_then_exhausts() {
        let mut s = PlateauSchedule::new(PATIENT3);
        assert_eq!(s.observe(1.0), PlateauEvent::Improved);
        assert_eq!(s.observe(0.5), PlateauEvent::Improved);
        let mut events = Vec::new();
        for _ in 0..9 {
            events.push(s.observe(0.499));
        }
        use PlateauEvent::*;
        assert_eq!(
            events,
            vec![Waiting, Waiting, Decay, Waiting, Waiting, Decay, Waiting, Waiting, Exhausted]
        );
        assert_eq!(s.decays(), 2);
    }

    #[test]
    fn plateau_resets_on_improvement() {
        let mut s = PlateauSchedule::new(PATIENT3);
        s.observe(1.0);
        assert_eq!(s.observe(0.999), PlateauEvent::Waiting);
        assert_eq!(s.observe(0.998), PlateauEvent::Waiting);
        assert_eq!(s.observe(0.5), PlateauEvent::Improved);
        assert_eq!(s.observe(0.5), PlateauEvent::Waiting);
    }

    #[test]
    fn schedule_scales_optimizer_lr() {
        let mut opt = Optimizer::<f64>::new(OptimizerConfig::sgd(0.1, 0.9, 5e-4)).unwrap();
        let mut s = PlateauSchedule::new(PlateauConfig {
            patience: 1,
            ..PlateauConfig::default()
        });
        s.step(1.0, &mut opt).unwrap();
        assert_eq!(s.step(1.0, &mut opt).unwrap(), PlateauEvent::Decay);
        assert!((opt.lr() - 0.01).abs() < 1e-15);
    }
}
