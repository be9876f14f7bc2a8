//! Request pacing.
//!
//! Each caller reserves the earliest slot that is at least `1 / rate` after
//! the previous reservation and more than one second (plus a small margin)
//! after the reservation `ceil(rate)` places back. Any one-second window
//! therefore holds at most `ceil(rate)` request starts.

use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Duration;

use tokio::time::Instant;

const WINDOW: Duration = Duration::from_secs(1);
const WINDOW_MARGIN: Duration = Duration::from_millis(25);

#[derive(Debug)]
pub struct RateLimiter {
    spacing: Duration,
    per_window: usize,
    reserved: Mutex<VecDeque<Instant>>,
}

impl RateLimiter {
    /// `rate` is requests per second and must be positive.
    pub fn new(rate: f64) -> Self {
        assert!(rate > 0.0 && rate.is_finite(), "rate must be positive");
        Self {
            spacing: Duration::from_secs_f64(1.0 / rate),
            per_window: rate.ceil() as usize,
            reserved: Mutex::new(VecDeque::new()),
        }
    }

    pub fn per_window(&self) -> usize {
        self.per_window
    }

    fn reserve(&self) -> Instant {
        let mut reserved = self.reserved.lock().expect("rate limiter lock");
        let now = Instant::now();
        let mut slot = now;
        if let Some(&last) = reserved.back() {
            slot = slot.max(last + self.spacing);
        }
        if reserved.len() >= self.per_window {
            let anchor = reserved[reserved.len() - self.per_window];
            slot = slot.max(anchor + WINDOW + WINDOW_MARGIN);
        }
        reserved.push_back(slot);
        while reserved.len() > self.per_window {
            reserved.pop_front();
        }
        slot
    }

    /// Waits until this caller may issue one request.
    pub async fn acquire(&self) {
        let slot = self.reserve();
        tokio::time::sleep_until(slot).await;
    }
}
