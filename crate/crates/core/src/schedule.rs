//! Piecewise-linear super-convergence schedule for learning rate and momentum.

use serde::{Deserialize, Serialize};

pub const LR_START: f64 = 4e-4;
pub const LR_BASE: f64 = 4e-3;
pub const LR_PEAK: f64 = 4e-2;
pub const LR_FINAL: f64 = 4e-6;
pub const MOMENTUM_HIGH: f64 = 0.95;
pub const MOMENTUM_LOW: f64 = 0.85;

/// Segment lengths in iterations.
///
/// | segment  | length   | learning rate   | momentum     |
/// |----------|----------|-----------------|--------------|
/// | pretrain | `pretrain` | 4e-4 → 4e-3   | 0.95         |
/// | ramp up  | `cycle`    | 4e-3 → 4e-2   | 0.95 → 0.85  |
/// | ramp down| `cycle`    | 4e-2 → 4e-3   | 0.85 → 0.95  |
/// | converge | `converge` | 4e-3 → 4e-6   | 0.95         |
/// | after    | -          | 4e-6          | 0.95         |
///
/// Every rate is multiplied by `lr_scale`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub pretrain: usize,
    pub cycle: usize,
    pub converge: usize,
    pub lr_scale: f64,
}

impl Schedule {
    pub fn total(&self) -> usize {
        self.pretrain + 2 * self.cycle + self.converge
    }

    /// `(learning_rate, momentum)` at iteration `iter`.
    pub fn at(&self, iter: usize) -> (f64, f64) {
        let segments = [
            (self.pretrain, (LR_START, LR_BASE), (MOMENTUM_HIGH, MOMENTUM_HIGH)),
            (self.cycle, (LR_BASE, LR_PEAK), (MOMENTUM_HIGH, MOMENTUM_LOW)),
            (self.cycle, (LR_PEAK, LR_BASE), (MOMENTUM_LOW, MOMENTUM_HIGH)),
            (self.converge, (LR_BASE, LR_FINAL), (MOMENTUM_HIGH, MOMENTUM_HIGH)),
        ];
        let mut start = 0;
        for (len, (lr0, lr1), (m0, m1)) in segments {
            if iter < start + len {
                let t = (iter - start) as f64 / len as f64;
                return (self.lr_scale * lerp(lr0, lr1, t), lerp(m0, m1, t));
            }
            start += len;
        }
        (self.lr_scale * LR_FINAL, MOMENTUM_HIGH)
    }
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched() -> Schedule {
        Schedule {
            pretrain: 10,
            cycle: 20,
            converge: 8,
            lr_scale: 1.0,
        }
    }

    #[test]
    fn segment_starts() {
        let s = sched();
        assert_eq!(s.at(0), (4e-4, 0.95));
        assert_eq!(s.at(10), (4e-3, 0.95));
        assert_eq!(s.at(30), (4e-2, 0.85));
        assert_eq!(s.at(50), (4e-3, 0.95));
        assert_eq!(s.at(58), (4e-6, 0.95));
        assert_eq!(s.at(10_000), (4e-6, 0.95));
    }

    #[test]
    fn midpoint_of_ramp_up() {
        let (lr, m) = sched().at(20);
        assert!((lr - 2.2e-2).abs() < 1e-15);
        assert!((m - 0.90).abs() < 1e-15);
    }

    #[test]
    fn zero_length_pretrain_starts_at_base() {
        let s = Schedule {
            pretrain: 0,
            ..sched()
        };
        assert_eq!(s.at(0), (4e-3, 0.95));
    }

    #[test]
    fn scale_applies_to_rates_only() {
        let s = Schedule {
            lr_scale: 10.0,
            ..sched()
        };
        assert_eq!(s.at(30), (4e-1, 0.85));
    }
}
