//! Outbound calls into node endpoints: publisher updates and liveness pings.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::mpsc::{self, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use rescue_core::{EndpointUri, GraphName, PublisherUpdate};

use crate::rpc;
use crate::xmlrpc::Value;

/// Caller id used by the master for its outbound calls.
pub const MASTER_CALLER_ID: &str = "/master";

pub const NOTIFY_TIMEOUT: Duration = Duration::from_millis(500);

/// Sends `publisherUpdate(/master, topic, publishers)` to one subscriber.
/// Returns false on any transport or protocol failure.
pub fn notify_publisher_update(
    subscriber_api: &EndpointUri,
    topic: &GraphName,
    publisher_uris: &[EndpointUri],
    timeout: Duration,
) -> bool {
    let params = [
        Value::from(MASTER_CALLER_ID),
        Value::from(topic.as_str()),
        Value::Array(publisher_uris.iter().map(|u| Value::from(u.as_str())).collect()),
    ];
    match rpc::call_ok(subscriber_api.as_str(), "publisherUpdate", &params, timeout) {
        Ok(_) => true,
        Err(e) => {
            log::debug!("publisherUpdate to {subscriber_api} for {topic} failed: {e}");
            false
        }
    }
}

/// One `getPid` round trip.
pub fn ping_node(api_uri: &EndpointUri, timeout: Duration) -> bool {
    rpc::call_ok(api_uri.as_str(), "getPid", &[Value::from(MASTER_CALLER_ID)], timeout).is_ok()
}

/// Runs `f` over `items` on at most `width` threads, preserving order.
pub fn fan_out<T: Sync, R: Send>(items: &[T], width: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    if items.len() <= 1 || width <= 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let results: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..width.min(items.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                *results[i].lock().unwrap() = Some(f(item));
            });
        }
    });
    results
        .into_iter()
        .map(|r| r.into_inner().unwrap().expect("every slot filled"))
        .collect()
}

struct Job {
    subscriber: EndpointUri,
    topic: GraphName,
    publishers: Vec<EndpointUri>,
}

#[derive(Debug, Default)]
pub struct NotifierCounters {
    pub delivered: AtomicU64,
    pub failed: AtomicU64,
}

/// Asynchronous publisher-update fan-out.
///
/// Jobs are sharded by subscriber URI so each subscriber sees its updates in
/// the order they were produced, while one slow subscriber only delays its
/// own shard.
pub struct Notifier {
    shards: Vec<Sender<Job>>,
    threads: Vec<JoinHandle<()>>,
    counters: Arc<NotifierCounters>,
}

impl Notifier {
    pub fn start(shards: usize, timeout: Duration) -> Self {
        let counters = Arc::new(NotifierCounters::default());
        let mut senders = Vec::new();
        let mut threads = Vec::new();
        for i in 0..shards.max(1) {
            let (tx, rx) = mpsc::channel::<Job>();
            let counters = Arc::clone(&counters);
            senders.push(tx);
            threads.push(
                std::thread::Builder::new()
                    .name(format!("notifier-{i}"))
                    .spawn(move || {
                        for job in rx {
                            let ok = notify_publisher_update(&job.subscriber, &job.topic, &job.publishers, timeout);
                            let counter = if ok { &counters.delivered } else { &counters.failed };
                            counter.fetch_add(1, Ordering::Relaxed);
                        }
                    })
                    .expect("spawn notifier"),
            );
        }
        Notifier {
            shards: senders,
            threads,
            counters,
        }
    }

    pub fn dispatch(&self, updates: Vec<PublisherUpdate>) {
        for update in updates {
            for subscriber in update.subscriber_apis {
                let mut h = DefaultHasher::new();
                subscriber.hash(&mut h);
                let shard = (h.finish() % self.shards.len() as u64) as usize;
                let _ = self.shards[shard].send(Job {
                    subscriber,
                    topic: update.topic.clone(),
                    publishers: update.publisher_apis.clone(),
                });
            }
        }
    }

    pub fn counters(&self) -> &NotifierCounters {
        &self.counters
    }

    /// Delivers everything already queued, then stops.
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.shards.clear();
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for Notifier {
    fn drop(&mut self) {
        self.stop();
    }
}
