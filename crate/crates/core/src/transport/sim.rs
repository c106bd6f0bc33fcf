//! Single-threaded discrete-event executor with a virtual clock.
//!
//! Tasks are ordinary futures. Time only moves when every task is blocked:
//! the executor then jumps to the earliest pending timer and wakes its
//! owner. Ready tasks are polled in FIFO order and timers fire in
//! `(deadline, registration order)`, so a run is fully determined by the
//! order in which tasks were spawned and the values they compute.

use std::collections::{BTreeMap, VecDeque};
use std::future::Future;
use std::pin::Pin;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::task::{Context, Poll, Wake, Waker};
use std::time::Duration;

use futures::future::BoxFuture;
use parking_lot::Mutex;
use thiserror::Error;

use super::clock::Clock;
use crate::time::Instant;

type Task = Pin<Box<dyn Future<Output = ()> + Send>>;

#[derive(Default)]
struct Scheduler {
    now: u64,
    next_seq: u64,
    timers: BTreeMap<(u64, u64), Waker>,
    ready: VecDeque<usize>,
}

type Slot = Option<(Task, Arc<TaskWaker>)>;

#[derive(Default)]
struct Core {
    sched: Mutex<Scheduler>,
    tasks: Mutex<Vec<Slot>>,
}

struct TaskWaker {
    id: usize,
    queued: AtomicBool,
    core: std::sync::Weak<Core>,
}

impl Wake for TaskWaker {
    fn wake(self: Arc<Self>) {
        self.wake_by_ref();
    }

    fn wake_by_ref(self: &Arc<Self>) {
        if self.queued.swap(true, Ordering::AcqRel) {
            return;
        }
        if let Some(core) = self.core.upgrade() {
            core.sched.lock().ready.push_back(self.id);
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("simulation stalled with {0} task(s) blocked and no pending timers")]
    Stalled(usize),
}

/// Deterministic executor owning the virtual timeline.
#[derive(Clone, Default)]
pub struct Simulation {
    core: Arc<Core>,
}

impl Simulation {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clock(&self) -> VirtualClock {
        VirtualClock {
            core: self.core.clone(),
        }
    }

    pub fn now(&self) -> Instant {
        Instant::from_nanos(self.core.sched.lock().now)
    }

    pub fn spawn<F>(&self, fut: F) -> JoinHandle<F::Output>
    where
        F: Future + Send + 'static,
        F::Output: Send + 'static,
    {
        let slot = Arc::new(Mutex::new(JoinSlot {
            value: None,
            waiter: None,
        }));
        let out = slot.clone();
        let task: Task = Box::pin(async move {
            let v = fut.await;
            let waiter = {
                let mut s = out.lock();
                s.value = Some(v);
                s.waiter.take()
            };
            if let Some(w) = waiter {
                w.wake();
            }
        });
        let mut tasks = self.core.tasks.lock();
        let id = tasks.len();
        let waker = Arc::new(TaskWaker {
            id,
            queued: AtomicBool::new(true),
            core: Arc::downgrade(&self.core),
        });
        tasks.push(Some((task, waker)));
        drop(tasks);
        self.core.sched.lock().ready.push_back(id);
        JoinHandle { slot }
    }

    /// Runs until no task is ready and no timer is pending.
    ///
    /// Returns the number of tasks left unfinished (blocked forever).
    pub fn run(&self) -> usize {
        loop {
            self.drain_ready();
            let next = self.core.sched.lock().timers.pop_first();
            match next {
                Some(((deadline, _), waker)) => {
                    {
                        let mut s = self.core.sched.lock();
                        debug_assert!(deadline >= s.now);
                        s.now = s.now.max(deadline);
                    }
                    waker.wake();
                }
                None => break,
            }
        }
        self.core.tasks.lock().iter().filter(|t| t.is_some()).count()
    }

    /// Spawns `fut`, runs the simulation to quiescence and returns its output.
    pub fn block_on<F>(&self, fut: F) -> Result<F::Output, SimError>
    where
        F: Future + Send + 'static,
        F::Output: Send + 'static,
    {
        let handle = self.spawn(fut);
        let unfinished = self.run();
        handle.try_take().ok_or(SimError::Stalled(unfinished))
    }

    fn drain_ready(&self) {
        loop {
            let Some(id) = self.core.sched.lock().ready.pop_front() else {
                return;
            };
            let Some((mut task, waker)) = self.core.tasks.lock()[id].take() else {
                continue;
            };
            waker.queued.store(false, Ordering::Release);
            let w = Waker::from(waker.clone());
            let mut cx = Context::from_waker(&w);
            if task.as_mut().poll(&mut cx).is_pending() {
                self.core.tasks.lock()[id] = Some((task, waker));
            }
        }
    }
}

struct JoinSlot<T> {
    value: Option<T>,
    waiter: Option<Waker>,
}

/// Output of a spawned task; awaitable from other tasks or taken after `run`.
pub struct JoinHandle<T> {
    slot: Arc<Mutex<JoinSlot<T>>>,
}

impl<T> JoinHandle<T> {
    pub fn try_take(&self) -> Option<T> {
        self.slot.lock().value.take()
    }
}

impl<T> Future for JoinHandle<T> {
    type Output = T;

    fn poll(self: Pin<&mut Self>, cx: &mut Context<'_>) -> Poll<T> {
        let mut s = self.slot.lock();
        match s.value.take() {
            Some(v) => Poll::Ready(v),
            None => {
                s.waiter = Some(cx.waker().clone());
                Poll::Pending
            }
        }
    }
}

/// Clock handle onto a [`Simulation`]'s timeline.
#[derive(Clone)]
pub struct VirtualClock {
    core: Arc<Core>,
}

impl VirtualClock {
    pub fn sleep_until_virtual(&self, deadline: Instant) -> Sleep {
        Sleep {
            core: self.core.clone(),
            deadline: deadline.as_nanos(),
            key: None,
        }
    }

    pub fn sleep(&self, d: Duration) -> Sleep {
        self.sleep_until_virtual(self.now().saturating_add(d))
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> Instant {
        Instant::from_nanos(self.core.sched.lock().now)
    }

    fn sleep_until(&self, deadline: Instant) -> BoxFuture<'static, ()> {
        Box::pin(self.sleep_until_virtual(deadline))
    }
}

pub struct Sleep {
    core: Arc<Core>,
    deadline: u64,
    key: Option<(u64, u64)>,
}

impl Future for Sleep {
    type Output = ();

    fn poll(mut self: Pin<&mut Self>, cx: &mut Context<'_>) -> Poll<()> {
        let this = &mut *self;
        let mut s = this.core.sched.lock();
        if s.now >= this.deadline {
            if let Some(key) = this.key.take() {
                s.timers.remove(&key);
            }
            return Poll::Ready(());
        }
        match this.key {
            Some(key) => {
                if let Some(w) = s.timers.get_mut(&key) {
                    w.clone_from(cx.waker());
                }
            }
            None => {
                let key = (this.deadline, s.next_seq);
                s.next_seq += 1;
                s.timers.insert(key, cx.waker().clone());
                this.key = Some(key);
            }
        }
        Poll::Pending
    }
}

impl Drop for Sleep {
    fn drop(&mut self) {
        if let Some(key) = self.key.take() {
            self.core.sched.lock().timers.remove(&key);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_jumps_to_deadlines() {
        let sim = Simulation::new();
        let clock = sim.clock();
        let out = sim
            .block_on(async move {
                clock.sleep(Duration::from_secs(1800)).await;
                clock.now()
            })
            .unwrap();
        assert_eq!(out, Instant::from_secs(1800));
    }

    #[test]
    fn interleaving_follows_deadlines() {
        let sim = Simulation::new();
        let log = Arc::new(Mutex::new(Vec::new()));
        for (name, step) in [("a", 3u64), ("b", 2u64)] {
            let clock = sim.clock();
            let log = log.clone();
            sim.spawn(async move {
                for _ in 0..3 {
                    clock.sleep(Duration::from_millis(step)).await;
                    log.lock().push((clock.now().as_nanos() / 1_000_000, name));
                }
            });
        }
        assert_eq!(sim.run(), 0);
        assert_eq!(
            *log.lock(),
            vec![(2, "b"), (3, "a"), (4, "b"), (6, "a"), (6, "b"), (9, "a")]
        );
    }

    #[test]
    fn join_handle_is_awaitable() {
        let sim = Simulation::new();
        let clock = sim.clock();
        let inner = sim.spawn({
            let clock = clock.clone();
            async move {
                clock.sleep(Duration::from_millis(5)).await;
                41
            }
        });
        let v = sim.block_on(async move { inner.await + 1 }).unwrap();
        assert_eq!(v, 42);
    }

    #[test]
    fn stalled_task_is_reported() {
        let sim = Simulation::new();
        let err = sim.block_on(futures::future::pending::<()>()).unwrap_err();
        assert_eq!(err, SimError::Stalled(1));
    }
}
