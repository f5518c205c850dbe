use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

pub const DEFAULT_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WindowError {
    #[error("stamp {stamp} does not follow {last}")]
    NonIncreasing { stamp: f64, last: f64 },
    #[error("capacity must be positive")]
    ZeroCapacity,
    #[error("need at least two entries, have {0}")]
    Insufficient(usize),
}

/// Fixed-capacity (stamp, lateral error) history; oldest evicted first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RingWindow {
    capacity: usize,
    entries: VecDeque<(f64, f64)>,
}

impl Default for RingWindow {
    fn default() -> Self {
        Self {
            capacity: DEFAULT_WINDOW,
            entries: VecDeque::with_capacity(DEFAULT_WINDOW),
        }
    }
}

impl RingWindow {
    pub fn with_capacity(capacity: usize) -> Result<Self, WindowError> {
        if capacity == 0 {
            return Err(WindowError::ZeroCapacity);
        }
        Ok(Self {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        })
    }

    pub fn push(&mut self, stamp: f64, error: f64) -> Result<(), WindowError> {
        if let Some(&(last, _)) = self.entries.back() {
            if !(stamp > last) {
                return Err(WindowError::NonIncreasing { stamp, last });
            }
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((stamp, error));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() == self.capacity
    }

    pub fn entries(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.entries.iter().copied()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

/// Least-squares slope of error against stamp.
pub fn window_slope(window: &RingWindow) -> Result<f64, WindowError> {
    let n = window.len();
    if n < 2 {
        return Err(WindowError::Insufficient(n));
    }
    let nf = n as f64;
    let (mt, me) = window
        .entries()
        .fold((0.0, 0.0), |(a, b), (t, e)| (a + t / nf, b + e / nf));
    let (sxy, sxx) = window.entries().fold((0.0, 0.0), |(sxy, sxx), (t, e)| {
        (sxy + (t - mt) * (e - me), sxx + (t - mt) * (t - mt))
    });
    Ok(sxy / sxx)
}
