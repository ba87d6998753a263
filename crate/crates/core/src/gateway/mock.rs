use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;

use super::{AttemptError, ChatBackend, ChatReply, ChatRequestBody};

/// What the mock does for one call.
#[derive(Debug, Clone)]
pub struct MockOutcome {
    pub delay: Duration,
    pub result: Result<ChatReply, AttemptError>,
}

impl MockOutcome {
    pub fn reply(text: impl Into<String>) -> Self {
        Self {
            delay: Duration::ZERO,
            result: Ok(ChatReply::stop(text)),
        }
    }

    pub fn fail(err: AttemptError) -> Self {
        Self {
            delay: Duration::ZERO,
            result: Err(err),
        }
    }

    pub fn after(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }
}

type Responder = dyn Fn(&ChatRequestBody, u32) -> MockOutcome + Send + Sync;

/// Call counters observed by a [`MockBackend`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MockStats {
    pub calls: usize,
    pub peak_in_flight: usize,
}

/// In-process backend driven by a responder closure.
///
/// The responder gets the request body and the 1-based attempt number for
/// that exact body. Every body sent is kept for inspection.
#[derive(Clone)]
pub struct MockBackend {
    inner: Arc<Inner>,
}

struct Inner {
    responder: Box<Responder>,
    calls: AtomicUsize,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
    bodies: Mutex<Vec<ChatRequestBody>>,
    attempts: Mutex<HashMap<String, u32>>,
}

impl MockBackend {
    pub fn new(responder: impl Fn(&ChatRequestBody, u32) -> MockOutcome + Send + Sync + 'static) -> Self {
        Self {
            inner: Arc::new(Inner {
                responder: Box::new(responder),
                calls: AtomicUsize::new(0),
                in_flight: AtomicUsize::new(0),
                peak: AtomicUsize::new(0),
                bodies: Mutex::new(Vec::new()),
                attempts: Mutex::new(HashMap::new()),
            }),
        }
    }

    /// Always replies with `text`.
    pub fn fixed(text: impl Into<String>) -> Self {
        let text = text.into();
        Self::new(move |_, _| MockOutcome::reply(text.clone()))
    }

    /// Plays `outcomes` in call order, then repeats the last one.
    pub fn scripted(outcomes: Vec<MockOutcome>) -> Self {
        assert!(!outcomes.is_empty(), "script needs at least one outcome");
        let queue = Mutex::new(VecDeque::from(outcomes));
        Self::new(move |_, _| {
            let mut q = queue.lock().unwrap();
            if q.len() > 1 {
                q.pop_front().unwrap()
            } else {
                q.front().unwrap().clone()
            }
        })
    }

    pub fn stats(&self) -> MockStats {
        MockStats {
            calls: self.inner.calls.load(Ordering::SeqCst),
            peak_in_flight: self.inner.peak.load(Ordering::SeqCst),
        }
    }

    pub fn calls(&self) -> usize {
        self.inner.calls.load(Ordering::SeqCst)
    }

    pub fn bodies(&self) -> Vec<ChatRequestBody> {
        self.inner.bodies.lock().unwrap().clone()
    }
}

struct InFlight<'a>(&'a AtomicUsize);

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

#[async_trait]
impl ChatBackend for MockBackend {
    async fn send(&self, body: &ChatRequestBody) -> Result<ChatReply, AttemptError> {
        let inner = &self.inner;
        inner.calls.fetch_add(1, Ordering::SeqCst);
        let now = inner.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        inner.peak.fetch_max(now, Ordering::SeqCst);
        let _guard = InFlight(&inner.in_flight);

        inner.bodies.lock().unwrap().push(body.clone());
        let attempt = {
            let key = serde_json::to_string(body).expect("request body serializes");
            let mut map = inner.attempts.lock().unwrap();
            let n = map.entry(key).or_insert(0);
            *n += 1;
            *n
        };
        let outcome = (inner.responder)(body, attempt);
        if !outcome.delay.is_zero() {
            tokio::time::sleep(outcome.delay).await;
        }
        outcome.result
    }
}
