use crate::model::Timestamp;

/// Time source for the runtime. The simulator advances it once per tick.
pub trait Clock: Send {
    fn now(&self) -> Timestamp;

    fn advance(&mut self, seconds: f64);
}

/// Accelerated clock: time moves only when the simulator ticks.
#[derive(Debug, Clone)]
pub struct SimClock {
    origin: Timestamp,
    elapsed_ms: u64,
}

impl SimClock {
    pub fn starting_at(origin: Timestamp) -> Self {
        SimClock {
            origin,
            elapsed_ms: 0,
        }
    }

    pub fn elapsed_secs(&self) -> f64 {
        self.elapsed_ms as f64 / 1000.0
    }
}

impl Clock for SimClock {
    fn now(&self) -> Timestamp {
        Timestamp::from_unix(self.origin.unix() + (self.elapsed_ms / 1000) as i64)
    }

    fn advance(&mut self, seconds: f64) {
        self.elapsed_ms += (seconds * 1000.0).round() as u64;
    }
}

/// Wall-clock time; `advance` is a no-op.
#[derive(Debug, Clone, Copy, Default)]
pub struct WallClock;

impl Clock for WallClock {
    fn now(&self) -> Timestamp {
        Timestamp::now()
    }

    fn advance(&mut self, _seconds: f64) {}
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sim_clock_counts_whole_seconds() {
        let mut c = SimClock::starting_at(Timestamp::from_unix(1000));
        for _ in 0..9 {
            c.advance(0.1);
        }
        assert_eq!(c.now().unix(), 1000);
        c.advance(0.1);
        assert_eq!(c.now().unix(), 1001);
        assert!((c.elapsed_secs() - 1.0).abs() < 1e-12);
    }
}
