//! Fixed-capacity FIFO experience store shared by the whole population.

use std::path::Path;

use parking_lot::RwLock;
use rand::Rng as _;

use crate::envs::{Environment, PersistenceWrapper, Transition};
use crate::error::{Error, Result};
use crate::nn::codec::{ByteReader, ByteWriter};
use crate::rng::Rng;

pub const DEFAULT_CAPACITY: usize = 2_000_000;
const SNAPSHOT_MAGIC: &[u8; 8] = b"AACRPLY\0";
const SNAPSHOT_VERSION: u32 = 1;

/// Shape of one stored record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    /// Observation length including the persistence slot.
    pub obs_dim: usize,
    pub action_dim: usize,
    pub k_max: usize,
}

impl Layout {
    fn stride(&self) -> usize {
        2 * self.obs_dim + self.action_dim + self.k_max + 2
    }
}

/// A sampled minibatch in row-major, structure-of-arrays form.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub layout: Layout,
    pub size: usize,
    pub states: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_states: Vec<f64>,
    pub dones: Vec<bool>,
    pub ks: Vec<usize>,
}

impl Batch {
    pub fn from_transitions(layout: Layout, rows: &[Transition]) -> Result<Self> {
        let mut b = Batch::with_capacity(layout, rows.len());
        for t in rows {
            t.validate(layout.obs_dim, layout.action_dim, layout.k_max)?;
            b.states.extend_from_slice(&t.state);
            b.actions.extend_from_slice(&t.action);
            b.rewards.extend_from_slice(&t.rewards);
            b.next_states.extend_from_slice(&t.next_state);
            b.dones.push(t.done);
            b.ks.push(t.k);
            b.size += 1;
        }
        Ok(b)
    }

    fn with_capacity(layout: Layout, n: usize) -> Self {
        Batch {
            layout,
            size: 0,
            states: Vec::with_capacity(n * layout.obs_dim),
            actions: Vec::with_capacity(n * layout.action_dim),
            rewards: Vec::with_capacity(n * layout.k_max),
            next_states: Vec::with_capacity(n * layout.obs_dim),
            dones: Vec::with_capacity(n),
            ks: Vec::with_capacity(n),
        }
    }

    pub fn row_rewards(&self, i: usize) -> &[f64] {
        &self.rewards[i * self.layout.k_max..(i + 1) * self.layout.k_max]
    }

    pub fn transition(&self, i: usize) -> Transition {
        let o = self.layout.obs_dim;
        let a = self.layout.action_dim;
        Transition {
            state: self.states[i * o..(i + 1) * o].to_vec(),
            action: self.actions[i * a..(i + 1) * a].to_vec(),
            rewards: self.row_rewards(i).to_vec(),
            next_state: self.next_states[i * o..(i + 1) * o].to_vec(),
            done: self.dones[i],
            k: self.ks[i],
        }
    }
}

/// Ring buffer over a preallocated flat record array.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    layout: Layout,
    capacity: usize,
    cursor: usize,
    len: usize,
    total_pushed: u64,
    data: Vec<f64>,
}

impl ReplayBuffer {
    pub fn new(layout: Layout, capacity: usize) -> Result<Self> {
        if capacity == 0 || layout.obs_dim < 2 || layout.action_dim == 0 || layout.k_max == 0 {
            return Err(Error::InvalidInput(format!(
                "invalid replay buffer layout {layout:?} / capacity {capacity}"
            )));
        }
        Ok(Self {
            layout,
            capacity,
            cursor: 0,
            len: 0,
            total_pushed: 0,
            data: vec![0.0; capacity * layout.stride()],
        })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn total_pushed(&self) -> u64 {
        self.total_pushed
    }

    pub fn push(&mut self, t: &Transition) -> Result<()> {
        let l = self.layout;
        t.validate(l.obs_dim, l.action_dim, l.k_max)?;
        let stride = l.stride();
        let row = &mut self.data[self.cursor * stride..(self.cursor + 1) * stride];
        let (s, rest) = row.split_at_mut(l.obs_dim);
        let (a, rest) = rest.split_at_mut(l.action_dim);
        let (r, rest) = rest.split_at_mut(l.k_max);
        let (ns, rest) = rest.split_at_mut(l.obs_dim);
        s.copy_from_slice(&t.state);
        a.copy_from_slice(&t.action);
        r.copy_from_slice(&t.rewards);
        ns.copy_from_slice(&t.next_state);
        rest[0] = if t.done { 1.0 } else { 0.0 };
        rest[1] = t.k as f64;
        self.cursor = (self.cursor + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
        self.total_pushed += 1;
        Ok(())
    }

    fn append_slot(&self, slot: usize, b: &mut Batch) {
        let l = self.layout;
        let stride = l.stride();
        let row = &self.data[slot * stride..(slot + 1) * stride];
        let mut at = 0;
        let mut take = |n: usize| {
            let s = &row[at..at + n];
            at += n;
            s
        };
        b.states.extend_from_slice(take(l.obs_dim));
        b.actions.extend_from_slice(take(l.action_dim));
        b.rewards.extend_from_slice(take(l.k_max));
        b.next_states.extend_from_slice(take(l.obs_dim));
        let tail = take(2);
        b.dones.push(tail[0] != 0.0);
        b.ks.push(tail[1] as usize);
        b.size += 1;
    }

    /// Uniform sample with replacement over the stored records.
    pub fn sample(&self, batch_size: usize, rng: &mut Rng) -> Result<Batch> {
        let slots = self.sample_slots(batch_size, rng)?;
        Ok(self.gather(&slots))
    }

    pub fn sample_slots(&self, batch_size: usize, rng: &mut Rng) -> Result<Vec<usize>> {
        if self.len == 0 {
            return Err(Error::State("cannot sample from an empty replay buffer".into()));
        }
        Ok((0..batch_size).map(|_| rng.random_range(0..self.len)).collect())
    }

    pub fn gather(&self, slots: &[usize]) -> Batch {
        let mut b = Batch::with_capacity(self.layout, slots.len());
        for &s in slots {
            assert!(s < self.len, "slot {s} is not populated");
            self.append_slot(s, &mut b);
        }
        b
    }

    /// Stored transitions from oldest to newest.
    pub fn ordered(&self) -> Vec<Transition> {
        let start = if self.len == self.capacity { self.cursor } else { 0 };
        let slots: Vec<usize> = (0..self.len).map(|i| (start + i) % self.capacity).collect();
        let b = self.gather(&slots);
        (0..b.size).map(|i| b.transition(i)).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::with_header(SNAPSHOT_MAGIC, SNAPSHOT_VERSION);
        w.u64(self.layout.obs_dim as u64);
        w.u64(self.layout.action_dim as u64);
        w.u64(self.layout.k_max as u64);
        w.u64(self.capacity as u64);
        w.u64(self.cursor as u64);
        w.u64(self.len as u64);
        w.u64(self.total_pushed);
        w.f64s(&self.data[..self.len * self.layout.stride()]);
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let version = r.header(SNAPSHOT_MAGIC)?;
        if version != SNAPSHOT_VERSION {
            return Err(Error::Format(format!("unsupported replay snapshot version {version}")));
        }
        let layout = Layout { obs_dim: r.usize()?, action_dim: r.usize()?, k_max: r.usize()? };
        let capacity = r.usize()?;
        let cursor = r.usize()?;
        let len = r.usize()?;
        let total_pushed = r.u64()?;
        let rows = r.f64s()?;
        r.finish()?;
        let mut buf = ReplayBuffer::new(layout, capacity).map_err(|e| Error::Format(e.to_string()))?;
        if len > capacity || cursor >= capacity || rows.len() != len * layout.stride() {
            return Err(Error::Format("replay snapshot header is inconsistent".into()));
        }
        buf.data[..rows.len()].copy_from_slice(&rows);
        buf.cursor = cursor;
        buf.len = len;
        buf.total_pushed = total_pushed;
        Ok(buf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Thread-safe handle: pushes take the write lock for one whole record, so
/// readers never observe a partially written transition.
#[derive(Debug)]
pub struct SharedReplay {
    inner: RwLock<ReplayBuffer>,
}

impl SharedReplay {
    pub fn new(buffer: ReplayBuffer) -> Self {
        Self { inner: RwLock::new(buffer) }
    }

    pub fn push(&self, t: &Transition) -> Result<()> {
        self.inner.write().push(t)
    }

    pub fn sample(&self, batch_size: usize, rng: &mut Rng) -> Result<Batch> {
        self.inner.read().sample(batch_size, rng)
    }

    pub fn len(&self) -> usize {
        self.inner.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn read(&self) -> parking_lot::RwLockReadGuard<'_, ReplayBuffer> {
        self.inner.read()
    }

    pub fn write(&self) -> parking_lot::RwLockWriteGuard<'_, ReplayBuffer> {
        self.inner.write()
    }

    pub fn into_inner(self) -> ReplayBuffer {
        self.inner.into_inner()
    }
}

/// Per-k bookkeeping from [`warmup`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WarmupStats {
    /// `(k, transitions collected)` for each k in range.
    pub per_k: Vec<(usize, usize)>,
    pub env_steps: u64,
}

/// Fills the buffer with `n` uniform-random-action transitions, split evenly
/// across every persistence in `k_min..=k_max` (the first `n % count` values
/// of k get one extra). `make_env(k)` supplies a fresh environment per k.
pub fn warmup<E: Environment>(
    buffer: &mut ReplayBuffer,
    mut make_env: impl FnMut(usize) -> E,
    k_min: usize,
    k_max: usize,
    n: usize,
    rng: &mut Rng,
) -> Result<WarmupStats> {
    if k_min == 0 || k_min > k_max || k_max > buffer.layout().k_max {
        return Err(Error::InvalidInput(format!(
            "warmup persistence range [{k_min}, {k_max}] invalid for buffer k_max {}",
            buffer.layout().k_max
        )));
    }
    let count = k_max - k_min + 1;
    let mut stats = WarmupStats::default();
    for (i, k) in (k_min..=k_max).enumerate() {
        let quota = n / count + usize::from(i < n % count);
        if quota == 0 {
            stats.per_k.push((k, 0));
            continue;
        }
        let mut env = PersistenceWrapper::new(make_env(k), buffer.layout().k_max, k)?;
        let a_dim = env.spec().action_dim;
        env.reset();
        for _ in 0..quota {
            let action: Vec<f64> = (0..a_dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let step = env.step(&action)?;
            stats.env_steps += step.executed as u64;
            buffer.push(&step.transition)?;
            if step.episode_over() {
                env.reset();
            }
        }
        stats.per_k.push((k, quota));
    }
    Ok(stats)
}
