use crate::Micros;

pub const DEFAULT_TICK_US: Micros = 1_000;

/// Simulated time. The only time source in the primary component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VirtualClock {
    now: Micros,
    tick: Micros,
}

impl VirtualClock {
    pub fn new(tick: Micros) -> Self {
        assert!(tick > 0, "tick must be positive");
        Self { now: 0, tick }
    }

    pub fn now(&self) -> Micros {
        self.now
    }

    pub fn tick(&self) -> Micros {
        self.tick
    }

    pub fn advance(&mut self) -> Micros {
        self.now += self.tick;
        self.now
    }

    /// Jumps forward to the tick boundary `t`. Never moves backwards.
    pub fn jump_to(&mut self, t: Micros) {
        debug_assert_eq!(t % self.tick, 0);
        self.now = self.now.max(t);
    }

    /// First tick boundary at or after `t`.
    pub fn boundary_at_or_after(&self, t: Micros) -> Micros {
        t.div_ceil(self.tick) * self.tick
    }
}

impl Default for VirtualClock {
    fn default() -> Self {
        Self::new(DEFAULT_TICK_US)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monotone() {
        let mut c = VirtualClock::default();
        assert_eq!(c.advance(), 1_000);
        c.jump_to(5_000);
        c.jump_to(2_000);
        assert_eq!(c.now(), 5_000);
        assert_eq!(c.boundary_at_or_after(5_001), 6_000);
        assert_eq!(c.boundary_at_or_after(6_000), 6_000);
    }
}
