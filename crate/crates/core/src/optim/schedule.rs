/// Piecewise-constant linear decay: `max(init − ⌊t/interval⌋·decrement, floor)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearDecay {
    pub init: f64,
    pub decrement: f64,
    pub interval: u64,
    pub floor: f64,
}

impl LinearDecay {
    pub fn new(init: f64, decrement: f64, interval: u64, floor: f64) -> Self {
        LinearDecay {
            init,
            decrement,
            interval,
            floor,
        }
    }

    pub fn constant(value: f64) -> Self {
        LinearDecay {
            init: value,
            decrement: 0.0,
            interval: 1,
            floor: value,
        }
    }

    pub fn value(&self, t: u64) -> f64 {
        let steps = t / self.interval.max(1);
        (self.init - steps as f64 * self.decrement).max(self.floor)
    }
}

/// Schedules of the average scaling factor `k_t` and the gradient scaling factor `μ_t`,
/// both indexed by the iteration counter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleState {
    pub k: LinearDecay,
    pub mu: LinearDecay,
}

impl Default for ScheduleState {
    /// `k`: 0.1 → 0.01 by 0.02; `μ`: 5 → 1 by 0.1; every 5000 iterations.
    fn default() -> Self {
        ScheduleState {
            k: LinearDecay::new(0.1, 0.02, 5000, 0.01),
            mu: LinearDecay::new(5.0, 0.1, 5000, 1.0),
        }
    }
}

impl ScheduleState {
    pub fn schedule_k(&self, t: u64) -> f64 {
        self.k.value(t)
    }

    pub fn schedule_mu(&self, t: u64) -> f64 {
        self.mu.value(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_schedule_with_default_constants() {
        let s = ScheduleState::default();
        assert_eq!(s.schedule_k(0), 0.1);
        assert_eq!(s.schedule_k(4999), 0.1);
        assert!((s.schedule_k(5000) - 0.08).abs() < 1e-15);
        assert_eq!(s.schedule_k(1_000_000), 0.01);
    }

    #[test]
    fn mu_schedule_with_default_constants() {
        let s = ScheduleState::default();
        assert_eq!(s.schedule_mu(0), 5.0);
        assert!((s.schedule_mu(5000) - 4.9).abs() < 1e-15);
        assert_eq!(s.schedule_mu(1_000_000), 1.0);
    }

    #[test]
    fn schedules_are_non_increasing_and_bounded() {
        let s = ScheduleState::default();
        let mut prev = f64::INFINITY;
        for t in (0..400_000).step_by(777) {
            let k = s.schedule_k(t);
            assert!(k <= prev && (0.01..=0.1).contains(&k));
            prev = k;
        }
    }
}
