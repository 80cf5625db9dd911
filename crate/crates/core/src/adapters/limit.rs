use std::sync::{Condvar, Mutex};

/// Counting semaphore bounding in-flight requests to one endpoint.
#[derive(Debug)]
pub struct Limiter {
    max: Option<usize>,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a> {
    limiter: &'a Limiter,
}

impl Limiter {
    pub fn new(max: Option<usize>) -> Self {
        Limiter {
            max,
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap();
        if let Some(max) = self.max {
            while *n >= max {
                n = self.freed.wait(n).unwrap();
            }
        }
        *n += 1;
        Permit { limiter: self }
    }

    pub fn in_flight(&self) -> usize {
        *self.in_flight.lock().unwrap()
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.limiter.in_flight.lock().unwrap() -= 1;
        self.limiter.freed.notify_one();
    }
}
