//! Cosine annealing with warm restarts.

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub lr_max: f64,
    pub lr_min: f64,
    /// Length of the first cycle in steps.
    pub period: usize,
    /// Each cycle is this many times longer than the previous one.
    pub period_mult: f64,
    /// `lr_max` is multiplied by this at every restart.
    pub decay: f64,
}

impl Schedule {
    pub fn constant(lr: f64) -> Self {
        Self {
            lr_max: lr,
            lr_min: lr,
            period: 1,
            period_mult: 1.0,
            decay: 1.0,
        }
    }

    /// Learning rate at `step`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let mut len = self.period.max(1) as f64;
        let mut start = 0.0;
        let mut peak = self.lr_max;
        let s = step as f64;
        while s >= start + len {
            start += len;
            len = (len * self.period_mult.max(1.0)).round().max(1.0);
            peak *= self.decay;
        }
        let progress = (s - start) / len;
        let hi = peak.max(self.lr_min);
        self.lr_min + (hi - self.lr_min) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched() -> Schedule {
        Schedule {
            lr_max: 0.1,
            lr_min: 0.001,
            period: 10,
            period_mult: 2.0,
            decay: 1.0,
        }
    }

    #[test]
    fn cycle_endpoints() {
        let s = sched();
        assert_eq!(s.lr_at(0), 0.1);
        assert!(s.lr_at(9) < 0.005 && s.lr_at(9) > 0.001);
        assert!((1..10).all(|k| s.lr_at(k) < s.lr_at(k - 1)));
        assert_eq!(s.lr_at(10), 0.1);
        assert_eq!(s.lr_at(30), 0.1);
        assert!(s.lr_at(29) < s.lr_at(20));
    }

    #[test]
    fn decay_lowers_restart_peaks() {
        let s = Schedule {
            decay: 0.5,
            ..sched()
        };
        assert!((s.lr_at(10) - 0.05).abs() < 1e-15);
        assert_eq!(Schedule::constant(0.3).lr_at(17), 0.3);
    }
}
