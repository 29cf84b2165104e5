use serde::{Deserialize, Serialize};

/// Linear warmup from `start_lr` to `target_lr` over `warmup_steps`
/// optimizer steps, constant afterwards.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub start_lr: f64,
    pub target_lr: f64,
    pub warmup_steps: u64,
}

impl LrSchedule {
    pub fn lr_at(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 || step >= self.warmup_steps {
            return self.target_lr;
        }
        let frac = step as f64 / self.warmup_steps as f64;
        self.start_lr + (self.target_lr - self.start_lr) * frac
    }
}
