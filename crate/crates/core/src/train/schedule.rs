use crate::error::{Error, Result};

/// Polynomial decay from `l_init` to `l_end` over `decay_steps`, then flat.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub l_init: f64,
    pub l_end: f64,
    pub decay_steps: u64,
    pub power: f64,
}

impl LrSchedule {
    pub fn new(l_init: f64, l_end: f64, decay_steps: u64, power: f64) -> Result<Self> {
        let s = Self {
            l_init,
            l_end,
            decay_steps,
            power,
        };
        s.validate()?;
        Ok(s)
    }

    /// `l_init == l_end` (including both zero) is accepted so a constant or
    /// disabled rate can be expressed.
    pub fn validate(&self) -> Result<()> {
        if !(self.l_end >= 0.0 && self.l_init >= self.l_end && self.l_init.is_finite()) {
            return Err(Error::config(format!(
                "learning rates need l_init >= l_end >= 0, got {} and {}",
                self.l_init, self.l_end
            )));
        }
        if self.decay_steps == 0 {
            return Err(Error::config("decay_steps must be positive"));
        }
        if !(self.power > 0.0 && self.power.is_finite()) {
            return Err(Error::config(format!("power must be positive, got {}", self.power)));
        }
        Ok(())
    }

    pub fn at(&self, global_step: u64) -> f64 {
        let d = self.decay_steps as f64;
        let s = global_step.min(self.decay_steps) as f64;
        (self.l_init - self.l_end) * (1.0 - s / d).powf(self.power) + self.l_end
    }
}

pub fn poly_lr(schedule: &LrSchedule, global_step: u64) -> f64 {
    schedule.at(global_step)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints() {
        let s = LrSchedule::new(1e-4, 1e-6, 100, 1.0).unwrap();
        assert_eq!(s.at(0), 1e-4);
        assert_eq!(s.at(100), 1e-6);
        assert_eq!(s.at(10_000), 1e-6);
        assert!(LrSchedule::new(1e-6, 1e-4, 100, 1.0).is_err());
        assert!(LrSchedule::new(1e-4, 1e-6, 0, 1.0).is_err());
    }
}
