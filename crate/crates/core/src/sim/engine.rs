//! Per-policy state machines driven by one shared event loop.

use std::collections::VecDeque;

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use super::JiqTiebreak;

pub(crate) struct RunOutput {
    pub level_time: Vec<f64>,
    pub level_departures: Vec<u64>,
    pub total_time: f64,
}

pub(crate) struct Context<'a> {
    pub n_servers: usize,
    pub edges: &'a [(usize, usize)],
    pub sampler: &'a WeightedIndex<f64>,
    pub arrival_rate: f64,
    pub mu: f64,
    pub n_events: u64,
    pub warmup_events: u64,
}

trait Dynamics {
    fn jobs(&self) -> usize;
    fn busy(&self) -> usize;
    fn arrive(&mut self, edge: (usize, usize), edge_index: usize, rng: &mut ChaCha8Rng, now: f64);
    fn depart(&mut self, rng: &mut ChaCha8Rng, now: f64);
    fn check_invariants(&self) {}
}

struct Recorder {
    warmup: u64,
    seen: u64,
    level_time: Vec<f64>,
    level_departures: Vec<u64>,
    total: f64,
}

impl Recorder {
    fn recording(&self) -> bool {
        self.seen >= self.warmup
    }

    fn grow(&mut self, q: usize) {
        if q >= self.level_time.len() {
            self.level_time.resize(q + 1, 0.0);
            self.level_departures.resize(q + 1, 0);
        }
    }

    fn hold(&mut self, q: usize, dt: f64) {
        if self.recording() {
            self.grow(q);
            self.level_time[q] += dt;
            self.total += dt;
        }
    }

    fn event(&mut self, departed_from: Option<usize>) {
        if let (true, Some(q)) = (self.recording(), departed_from) {
            self.grow(q);
            self.level_departures[q] += 1;
        }
        self.seen += 1;
    }
}

/// `k`-th index (0-based) with `pred` true.
fn nth_where(len: usize, k: usize, pred: impl Fn(usize) -> bool) -> usize {
    (0..len)
        .filter(|&s| pred(s))
        .nth(k)
        .expect("busy count out of sync")
}

fn run_loop<D: Dynamics>(mut state: D, ctx: &Context, rng: &mut ChaCha8Rng) -> RunOutput {
    let mut rec = Recorder {
        warmup: ctx.warmup_events,
        seen: 0,
        level_time: vec![0.0],
        level_departures: vec![0],
        total: 0.0,
    };
    let mut now = 0.0;
    for _ in 0..ctx.n_events {
        let rate = ctx.arrival_rate + ctx.mu * state.busy() as f64;
        let dt: f64 = Exp1.sample(rng);
        let dt = dt / rate;
        now += dt;
        let q = state.jobs();
        rec.hold(q, dt);
        if rng.random::<f64>() * rate < ctx.arrival_rate {
            let k = ctx.sampler.sample(rng);
            state.arrive(ctx.edges[k], k, rng, now);
            rec.event(None);
        } else {
            state.depart(rng, now);
            rec.event(Some(q));
        }
        if cfg!(debug_assertions) {
            state.check_invariants();
        }
    }
    RunOutput {
        level_time: rec.level_time,
        level_departures: rec.level_departures,
        total_time: rec.total,
    }
}

/// Cancel-on-completion: every job occupies both endpoints; the server's
/// head-of-line job is the oldest one containing it.
struct Coc<'a> {
    edges: &'a [(usize, usize)],
    queue: VecDeque<usize>,
    load: Vec<u32>,
    busy: usize,
}

impl Dynamics for Coc<'_> {
    fn jobs(&self) -> usize {
        self.queue.len()
    }

    fn busy(&self) -> usize {
        self.busy
    }

    fn arrive(&mut self, (a, b): (usize, usize), k: usize, _: &mut ChaCha8Rng, _: f64) {
        self.queue.push_back(k);
        for s in [a, b] {
            if self.load[s] == 0 {
                self.busy += 1;
            }
            self.load[s] += 1;
        }
    }

    fn depart(&mut self, rng: &mut ChaCha8Rng, _: f64) {
        let k = rng.random_range(0..self.busy);
        let s = nth_where(self.load.len(), k, |s| self.load[s] > 0);
        let pos = self
            .queue
            .iter()
            .position(|&e| self.edges[e].0 == s || self.edges[e].1 == s)
            .expect("busy server has a job");
        let (a, b) = self.edges[self.queue.remove(pos).unwrap()];
        for s in [a, b] {
            self.load[s] -= 1;
            if self.load[s] == 0 {
                self.busy -= 1;
            }
        }
    }

    fn check_invariants(&self) {
        let mut covered = vec![false; self.load.len()];
        for &e in &self.queue {
            covered[self.edges[e].0] = true;
            covered[self.edges[e].1] = true;
        }
        debug_assert_eq!(covered.iter().filter(|c| **c).count(), self.busy);
    }
}

/// Cancel-on-start with longest-idle assignment.
struct Cos<'a> {
    edges: &'a [(usize, usize)],
    waiting: VecDeque<usize>,
    busy_flags: Vec<bool>,
    /// Idle servers, longest idle first.
    idle: Vec<usize>,
    busy: usize,
}

impl Dynamics for Cos<'_> {
    fn jobs(&self) -> usize {
        self.waiting.len() + self.busy
    }

    fn busy(&self) -> usize {
        self.busy
    }

    fn arrive(&mut self, (a, b): (usize, usize), k: usize, _: &mut ChaCha8Rng, _: f64) {
        match self.idle.iter().position(|&s| s == a || s == b) {
            Some(pos) => {
                let s = self.idle.remove(pos);
                self.busy_flags[s] = true;
                self.busy += 1;
            }
            None => self.waiting.push_back(k),
        }
    }

    fn depart(&mut self, rng: &mut ChaCha8Rng, _: f64) {
        let k = rng.random_range(0..self.busy);
        let s = nth_where(self.busy_flags.len(), k, |s| self.busy_flags[s]);
        match self
            .waiting
            .iter()
            .position(|&e| self.edges[e].0 == s || self.edges[e].1 == s)
        {
            Some(pos) => {
                self.waiting.remove(pos);
            }
            None => {
                self.busy_flags[s] = false;
                self.busy -= 1;
                self.idle.push(s);
            }
        }
    }

    fn check_invariants(&self) {
        for &e in &self.waiting {
            let (a, b) = self.edges[e];
            debug_assert!(
                self.busy_flags[a] && self.busy_flags[b],
                "waiting job {{{a},{b}}} is compatible with an idle server"
            );
        }
        debug_assert_eq!(self.idle.len() + self.busy, self.busy_flags.len());
    }
}

/// Join-the-idle-queue without replication.
struct Jiq {
    len: Vec<u32>,
    idle_since: Vec<f64>,
    busy: usize,
    jobs: usize,
    tiebreak: JiqTiebreak,
}

impl Jiq {
    fn push(&mut self, s: usize) {
        if self.len[s] == 0 {
            self.busy += 1;
        }
        self.len[s] += 1;
        self.jobs += 1;
    }
}

impl Dynamics for Jiq {
    fn jobs(&self) -> usize {
        self.jobs
    }

    fn busy(&self) -> usize {
        self.busy
    }

    fn arrive(&mut self, (a, b): (usize, usize), _: usize, rng: &mut ChaCha8Rng, _: f64) {
        let target = match (self.len[a] == 0, self.len[b] == 0) {
            (true, false) => a,
            (false, true) => b,
            (true, true) if self.tiebreak == JiqTiebreak::LongestIdle => {
                if self.idle_since[b] < self.idle_since[a] {
                    b
                } else {
                    a
                }
            }
            _ => {
                if rng.random::<bool>() {
                    a
                } else {
                    b
                }
            }
        };
        self.push(target);
    }

    fn depart(&mut self, rng: &mut ChaCha8Rng, now: f64) {
        let k = rng.random_range(0..self.busy);
        let s = nth_where(self.len.len(), k, |s| self.len[s] > 0);
        self.len[s] -= 1;
        self.jobs -= 1;
        if self.len[s] == 0 {
            self.busy -= 1;
            self.idle_since[s] = now;
        }
    }

    fn check_invariants(&self) {
        debug_assert_eq!(
            self.len.iter().map(|&l| l as usize).sum::<usize>(),
            self.jobs
        );
    }
}

pub(crate) fn run_coc(ctx: &Context, rng: &mut ChaCha8Rng) -> RunOutput {
    let state = Coc {
        edges: ctx.edges,
        queue: VecDeque::new(),
        load: vec![0; ctx.n_servers],
        busy: 0,
    };
    run_loop(state, ctx, rng)
}

pub(crate) fn run_cos(ctx: &Context, rng: &mut ChaCha8Rng) -> RunOutput {
    let state = Cos {
        edges: ctx.edges,
        waiting: VecDeque::new(),
        busy_flags: vec![false; ctx.n_servers],
        idle: (0..ctx.n_servers).collect(),
        busy: 0,
    };
    run_loop(state, ctx, rng)
}

pub(crate) fn run_jiq(ctx: &Context, rng: &mut ChaCha8Rng, tiebreak: JiqTiebreak) -> RunOutput {
    let state = Jiq {
        len: vec![0; ctx.n_servers],
        idle_since: vec![0.0; ctx.n_servers],
        busy: 0,
        jobs: 0,
        tiebreak,
    };
    run_loop(state, ctx, rng)
}
