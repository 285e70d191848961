use std::collections::{BTreeSet, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use arc_swap::ArcSwap;

use crate::config::{ConfigError, Problem, ScheduleEntry};
use crate::mesh::DomainSpec;
use crate::optimizer::OptimizerParams;

use super::{Ack, MutationCommand, Phase, SessionCore, SessionError, Snapshot};

/// Called on every published snapshot, from the publishing thread.
pub type Observer = Arc<dyn Fn(&Arc<Snapshot>) + Send + Sync>;

struct Control {
    /// Owned here between runs; moved to the worker while running.
    core: Option<SessionCore>,
    phase: Phase,
    queue: VecDeque<MutationCommand>,
    next_sync: u32,
    breakpoints: BTreeSet<u32>,
    held_at: Option<u32>,
    recording: Vec<ScheduleEntry>,
    initial: Problem,
    worker: Option<JoinHandle<()>>,
}

struct Shared {
    control: Mutex<Control>,
    changed: Condvar,
    snapshot: ArcSwap<Snapshot>,
    seq: AtomicU64,
    observer: Option<Observer>,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, Control> {
        self.control.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Swaps in a new snapshot. Callers holding the control lock must invoke
    /// the returned observer notification after releasing it.
    fn store(&self, mut snap: Snapshot) -> Arc<Snapshot> {
        snap.seq = self.seq.fetch_add(1, Ordering::SeqCst) + 1;
        let snap = Arc::new(snap);
        self.snapshot.store(snap.clone());
        snap
    }

    fn notify(&self, snap: &Arc<Snapshot>) {
        if let Some(obs) = &self.observer {
            obs(snap);
        }
    }
}

/// A session whose optimization loop runs on a dedicated worker thread.
///
/// Commands submitted while running are queued and drained in FIFO order at
/// the start of the next iteration; every drained command is recorded with
/// the iteration it applied to, which is exactly the schedule format the
/// headless runner replays.
pub struct Session {
    shared: Arc<Shared>,
}

impl Session {
    pub fn new(problem: Problem) -> Result<Self, ConfigError> {
        Self::build(problem, None)
    }

    pub fn with_observer(problem: Problem, observer: Observer) -> Result<Self, ConfigError> {
        Self::build(problem, Some(observer))
    }

    fn build(problem: Problem, observer: Option<Observer>) -> Result<Self, ConfigError> {
        let core = SessionCore::new(problem.clone())?;
        let first = Arc::new(Snapshot { seq: 1, ..core.snapshot() });
        let control = Control {
            core: Some(core),
            phase: Phase::Configuring,
            queue: VecDeque::new(),
            next_sync: 1,
            breakpoints: BTreeSet::new(),
            held_at: None,
            recording: Vec::new(),
            initial: problem,
            worker: None,
        };
        let shared = Shared {
            control: Mutex::new(control),
            changed: Condvar::new(),
            snapshot: ArcSwap::new(first),
            seq: AtomicU64::new(1),
            observer,
        };
        Ok(Self { shared: Arc::new(shared) })
    }

    pub fn phase(&self) -> Phase {
        self.shared.lock().phase
    }

    /// Most recent snapshot; never blocks on the worker.
    pub fn latest_snapshot(&self) -> Arc<Snapshot> {
        self.shared.snapshot.load_full()
    }

    /// Commands drained by the worker, tagged with their sync point.
    pub fn recording(&self) -> Vec<ScheduleEntry> {
        self.shared.lock().recording.clone()
    }

    /// The problem as it stood when the current run was started. Replaying
    /// [`recording`](Self::recording) on it reproduces the run.
    pub fn initial_problem(&self) -> Problem {
        self.shared.lock().initial.clone()
    }

    /// Current problem definition (only while no run is in progress).
    pub fn problem(&self) -> Option<Problem> {
        self.shared.lock().core.as_ref().map(|c| c.problem())
    }

    pub fn submit(&self, cmd: MutationCommand) -> Result<Ack, SessionError> {
        self.submit_all(vec![cmd])
    }

    /// Accepts all commands or none.
    pub fn submit_all(&self, cmds: Vec<MutationCommand>) -> Result<Ack, SessionError> {
        for cmd in &cmds {
            cmd.validate().map_err(SessionError::BadValue)?;
        }
        let mut ctl = self.shared.lock();
        match ctl.phase {
            Phase::Running => {
                let applies_at = ctl.next_sync;
                ctl.queue.extend(cmds);
                Ok(Ack { applies_at })
            }
            _ => {
                self.with_core(ctl, |core| core.apply_now(&cmds))?;
                Ok(Ack { applies_at: 0 })
            }
        }
    }

    pub fn set_domain(&self, domain: DomainSpec, elem_size: f64) -> Result<Ack, SessionError> {
        let ctl = self.shared.lock();
        self.with_core(ctl, |core| core.set_domain(domain, elem_size))?;
        Ok(Ack { applies_at: 0 })
    }

    pub fn set_params(&self, params: OptimizerParams) -> Result<Ack, SessionError> {
        let ctl = self.shared.lock();
        self.with_core(ctl, |core| core.set_params(params))?;
        Ok(Ack { applies_at: 0 })
    }

    /// Runs `f` on the idle core and publishes the result.
    fn with_core(
        &self,
        mut ctl: MutexGuard<'_, Control>,
        f: impl FnOnce(&mut SessionCore) -> Result<(), SessionError>,
    ) -> Result<(), SessionError> {
        let Some(core) = ctl.core.as_mut() else {
            return Err(SessionError::BadPhase(format!("session is {}", ctl.phase)));
        };
        f(core)?;
        let snap = core.snapshot();
        ctl.phase = snap.phase;
        let snap = self.shared.store(snap);
        drop(ctl);
        self.shared.changed.notify_all();
        self.shared.notify(&snap);
        Ok(())
    }

    /// Spawns the worker after the solvability pre-checks.
    pub fn start(&self) -> Result<Ack, SessionError> {
        let mut ctl = self.shared.lock();
        if ctl.phase != Phase::Configuring {
            return Err(SessionError::BadPhase(format!("start requires phase configuring, session is {}", ctl.phase)));
        }
        if let Some(old) = ctl.worker.take() {
            let _ = old.join();
        }
        let core = ctl.core.as_mut().expect("idle session owns its core");
        core.start()?;
        let applies_at = core.iteration() + 1;
        let initial = core.problem();
        let snap = core.snapshot();
        let core = ctl.core.take().expect("checked above");
        ctl.initial = initial;
        ctl.recording.clear();
        ctl.queue.clear();
        ctl.phase = Phase::Running;
        ctl.next_sync = applies_at;
        let shared = self.shared.clone();
        let handle = std::thread::Builder::new()
            .name("topsteer-worker".into())
            .spawn(move || worker(shared, core))
            .map_err(|e| SessionError::BadPhase(format!("cannot spawn worker: {e}")))?;
        ctl.worker = Some(handle);
        let snap = self.shared.store(snap);
        drop(ctl);
        self.shared.notify(&snap);
        Ok(Ack { applies_at })
    }

    /// Requests a graceful halt at the next sync point.
    pub fn stop(&self) -> Result<Ack, SessionError> {
        let mut ctl = self.shared.lock();
        if ctl.phase != Phase::Running {
            return Err(SessionError::BadPhase(format!("stop requires phase running, session is {}", ctl.phase)));
        }
        ctl.queue.push_back(MutationCommand::Stop);
        Ok(Ack { applies_at: ctl.next_sync })
    }

    pub fn reset(&self) -> Result<Ack, SessionError> {
        self.submit(MutationCommand::Reset)
    }

    /// Makes the worker hold before draining sync point `k` (testing hook).
    pub fn pause_before(&self, k: u32) {
        self.shared.lock().breakpoints.insert(k);
    }

    /// Waits until the worker holds at a breakpoint and returns its sync point.
    pub fn wait_held(&self, timeout: Duration) -> Option<u32> {
        let deadline = Instant::now() + timeout;
        let mut ctl = self.shared.lock();
        loop {
            if let Some(k) = ctl.held_at {
                return Some(k);
            }
            let left = deadline.checked_duration_since(Instant::now())?;
            ctl = self.shared.changed.wait_timeout(ctl, left).unwrap_or_else(|p| p.into_inner()).0;
        }
    }

    /// Releases the breakpoint the worker is holding at, if any.
    pub fn resume(&self) {
        let mut ctl = self.shared.lock();
        if let Some(k) = ctl.held_at.take() {
            ctl.breakpoints.remove(&k);
        }
        drop(ctl);
        self.shared.changed.notify_all();
    }

    /// Blocks until no run is in progress; returns the phase reached.
    pub fn wait_idle(&self, timeout: Duration) -> Option<Phase> {
        let deadline = Instant::now() + timeout;
        let mut ctl = self.shared.lock();
        loop {
            if ctl.phase != Phase::Running {
                return Some(ctl.phase);
            }
            let left = deadline.checked_duration_since(Instant::now())?;
            ctl = self.shared.changed.wait_timeout(ctl, left).unwrap_or_else(|p| p.into_inner()).0;
        }
    }

    /// Blocks until the published iteration reaches `iter` or the run ends.
    pub fn wait_iteration(&self, iter: u32, timeout: Duration) -> Arc<Snapshot> {
        let deadline = Instant::now() + timeout;
        let mut ctl = self.shared.lock();
        loop {
            let snap = self.latest_snapshot();
            if snap.iter >= iter || ctl.phase != Phase::Running {
                return snap;
            }
            let Some(left) = deadline.checked_duration_since(Instant::now()) else { return snap };
            ctl = self.shared.changed.wait_timeout(ctl, left).unwrap_or_else(|p| p.into_inner()).0;
        }
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        let mut ctl = self.shared.lock();
        ctl.breakpoints.clear();
        if ctl.phase == Phase::Running {
            ctl.queue.push_back(MutationCommand::Stop);
        }
        let handle = ctl.worker.take();
        drop(ctl);
        self.shared.changed.notify_all();
        if let Some(h) = handle {
            let _ = h.join();
        }
    }
}

fn worker(shared: Arc<Shared>, mut core: SessionCore) {
    loop {
        let k = core.iteration() + 1;
        let cmds: Vec<MutationCommand> = {
            let mut ctl = shared.lock();
            while ctl.breakpoints.contains(&k) {
                ctl.held_at = Some(k);
                shared.changed.notify_all();
                ctl = shared.changed.wait(ctl).unwrap_or_else(|p| p.into_inner());
            }
            ctl.held_at = None;
            let cmds: Vec<_> = ctl.queue.drain(..).collect();
            for command in &cmds {
                ctl.recording.push(ScheduleEntry { applied_at_iteration: k, command: command.clone() });
            }
            ctl.next_sync = k + 1;
            cmds
        };
        core.sync_point(&cmds);
        if core.phase() != Phase::Running {
            break;
        }
        if let Err(e) = core.iterate() {
            log::error!("iteration {k} failed: {e}");
        }
        let snap = {
            let _ctl = shared.lock();
            shared.store(core.snapshot())
        };
        shared.changed.notify_all();
        shared.notify(&snap);
        if core.phase() != Phase::Running {
            finish(&shared, core, false);
            return;
        }
    }
    finish(&shared, core, true);
}

fn finish(shared: &Shared, core: SessionCore, publish: bool) {
    let mut ctl = shared.lock();
    if !ctl.queue.is_empty() {
        log::warn!("run ended with {} queued command(s); discarding them", ctl.queue.len());
        ctl.queue.clear();
    }
    ctl.phase = core.phase();
    let snap = publish.then(|| shared.store(core.snapshot()));
    ctl.core = Some(core);
    drop(ctl);
    shared.changed.notify_all();
    if let Some(snap) = snap {
        shared.notify(&snap);
    }
}
