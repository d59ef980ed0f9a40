/// Tally of implicit-Euler linear-system applications.
///
/// `serial` is the total work; `parallel` counts a concurrent batch only
/// once, as the largest count among its workers. Sequential work adds to
/// both, so `parallel <= serial` always holds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpCounter {
    serial: u64,
    parallel: u64,
}

/// Which of the two tallies to read.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CountMode {
    SerialSum,
    ParallelMax,
}

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_solves(&mut self, n: u64) {
        self.serial += n;
        self.parallel += n;
    }

    pub fn serial(&self) -> u64 {
        self.serial
    }

    pub fn parallel(&self) -> u64 {
        self.parallel
    }

    pub fn get(&self, mode: CountMode) -> u64 {
        match mode {
            CountMode::SerialSum => self.serial,
            CountMode::ParallelMax => self.parallel,
        }
    }

    /// Appends work done sequentially after the current tally.
    pub fn absorb(&mut self, other: &OpCounter) {
        self.serial += other.serial;
        self.parallel += other.parallel;
    }

    /// Appends a batch of per-worker tallies that ran concurrently.
    pub fn absorb_concurrent<'a>(&mut self, workers: impl IntoIterator<Item = &'a OpCounter>) {
        let mut max_parallel = 0;
        for w in workers {
            self.serial += w.serial;
            max_parallel = max_parallel.max(w.parallel);
        }
        self.parallel += max_parallel;
    }
}
