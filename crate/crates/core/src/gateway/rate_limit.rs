use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

/// Time source for throttling and backoff; swapped for a simulated clock
/// in tests.
pub trait Clock: Send + Sync {
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
}

#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Clock that only moves when someone sleeps on it.
#[derive(Debug, Default)]
pub struct SimClock {
    now: Mutex<Duration>,
}

impl SimClock {
    pub fn advance(&self, d: Duration) {
        *self.now.lock().unwrap() += d;
    }
}

impl Clock for SimClock {
    fn now(&self) -> Duration {
        *self.now.lock().unwrap()
    }

    fn sleep(&self, d: Duration) {
        self.advance(d);
    }
}

pub const RATE_WINDOW: Duration = Duration::from_secs(60);

/// Sliding-window limiter: at most `per_minute` admissions in any 60 s.
#[derive(Debug)]
pub struct RateLimiter {
    per_minute: usize,
    admitted: Mutex<VecDeque<Duration>>,
}

impl RateLimiter {
    pub fn new(per_minute: usize) -> Self {
        Self {
            per_minute: per_minute.max(1),
            admitted: Mutex::new(VecDeque::new()),
        }
    }

    /// Blocks on `clock` until a slot is free, then records the admission.
    /// Returns the admission time.
    pub fn acquire(&self, clock: &dyn Clock) -> Duration {
        loop {
            let wait = {
                let mut q = self.admitted.lock().unwrap();
                let now = clock.now();
                while q.front().is_some_and(|t| *t + RATE_WINDOW <= now) {
                    q.pop_front();
                }
                if q.len() < self.per_minute {
                    q.push_back(now);
                    return now;
                }
                *q.front().unwrap() + RATE_WINDOW - now
            };
            clock.sleep(wait);
        }
    }
}

/// Counting semaphore bounding in-flight backend calls.
#[derive(Debug)]
pub struct Semaphore {
    available: Mutex<usize>,
    cv: Condvar,
}

pub struct Permit<'a> {
    sem: &'a Semaphore,
}

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        Self {
            available: Mutex::new(permits.max(1)),
            cv: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().unwrap();
        while *n == 0 {
            n = self.cv.wait(n).unwrap();
        }
        *n -= 1;
        Permit { sem: self }
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.sem.available.lock().unwrap() += 1;
        self.sem.cv.notify_one();
    }
}
