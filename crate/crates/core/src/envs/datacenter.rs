//! Server farm with join-the-shortest-queue routing, simulated exactly as a
//! discrete-event system. The outcome is each server's busy fraction over a
//! period; treatment speeds up service.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{OutcomePanel, TreatmentMatrix};
use crate::rng;

/// Samples `min(sample_size, |capable|)` capable servers uniformly without
/// replacement and returns one with the shortest queue, breaking ties
/// uniformly.
pub fn jsq_assign<R: Rng + ?Sized>(
    queue_lengths: &[usize],
    capable: &[usize],
    sample_size: usize,
    rng: &mut R,
) -> Result<usize> {
    if capable.is_empty() {
        return Err(Error::Routing("no capable server for task".into()));
    }
    let k = sample_size.clamp(1, capable.len());
    let mut best = usize::MAX;
    let mut chosen = capable[0];
    let mut ties = 0u32;
    for pos in index::sample(rng, capable.len(), k) {
        let s = capable[pos];
        let q = *queue_lengths.get(s).ok_or(Error::Index {
            what: "server",
            index: s,
            limit: queue_lengths.len(),
        })?;
        match q.cmp(&best) {
            Ordering::Less => {
                best = q;
                chosen = s;
                ties = 1;
            }
            Ordering::Equal => {
                // Reservoir step keeps each tied server with equal probability.
                ties += 1;
                if rng.random_range(0..ties) == 0 {
                    chosen = s;
                }
            }
            Ordering::Greater => {}
        }
    }
    Ok(chosen)
}

fn default_sample_size() -> usize {
    2
}

fn default_multiplier() -> f64 {
    1.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataCenterSpec {
    pub job_types: usize,
    /// Probability that a server can process a given job type.
    pub capability_prob: f64,
    /// Mean arrivals per server per unit time.
    pub load: f64,
    /// Relative amplitude of the daily cycle and its length in periods.
    pub amplitude: f64,
    pub day_length: f64,
    /// Log-sd of a per-period multiplicative rate shock.
    pub rate_noise: f64,
    pub service_rate: f64,
    /// Time units per period.
    pub interval: f64,
    pub treatment_multiplier: f64,
    pub sample_size: usize,
}

impl Default for DataCenterSpec {
    fn default() -> Self {
        DataCenterSpec {
            job_types: 4,
            capability_prob: 0.5,
            load: 0.7,
            amplitude: 0.4,
            day_length: 8.0,
            rate_noise: 0.05,
            service_rate: 1.0,
            interval: 10.0,
            treatment_multiplier: default_multiplier(),
            sample_size: default_sample_size(),
        }
    }
}

impl DataCenterSpec {
    pub fn validate(&self) -> Result<()> {
        if self.job_types == 0 || self.sample_size == 0 {
            return Err(Error::Config("job types and sample size must be positive".into()));
        }
        if !(self.capability_prob > 0.0 && self.capability_prob <= 1.0) {
            return Err(Error::Config("capability probability must lie in (0, 1]".into()));
        }
        if !(self.load > 0.0 && self.service_rate > 0.0 && self.interval > 0.0 && self.day_length > 0.0) {
            return Err(Error::Config("load, service rate, interval and day length must be positive".into()));
        }
        if !(self.treatment_multiplier > 0.0) {
            return Err(Error::Config("treatment multiplier must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.amplitude) || !(self.rate_noise >= 0.0) {
            return Err(Error::Config("amplitude must lie in [0, 1) and rate noise be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Task {
    time: f64,
    kind: usize,
    work: f64,
}

#[derive(Clone, Debug)]
pub struct DataCenterWorld {
    spec: DataCenterSpec,
    n: usize,
    horizon: usize,
    seed: u64,
    world: u64,
    /// Servers able to process each job type.
    capable: Vec<Vec<usize>>,
    tasks: Vec<Task>,
}

#[derive(PartialEq)]
struct Event {
    time: f64,
    server: usize,
    version: u64,
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on time; server id breaks ties deterministically.
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.server.cmp(&self.server))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Server {
    queue: VecDeque<f64>,
    last: f64,
    busy: f64,
    speed: f64,
    version: u64,
}

impl Server {
    /// Processes the head task up to `now`.
    fn advance(&mut self, now: f64) {
        if let Some(head) = self.queue.front_mut() {
            let dt = now - self.last;
            *head -= dt * self.speed;
            self.busy += dt;
        }
        self.last = now;
    }

    fn completion(&self) -> Option<f64> {
        self.queue.front().map(|w| self.last + w.max(0.0) / self.speed)
    }
}

impl DataCenterWorld {
    pub fn new(spec: &DataCenterSpec, n: usize, horizon: usize, seed: u64, world: u64) -> Result<Self> {
        spec.validate()?;
        let mut r = rng::stream(seed, rng::WORLD, &[world, 0]);
        let mut capable = vec![Vec::new(); spec.job_types];
        for s in 0..n {
            let mut any = false;
            for list in capable.iter_mut() {
                if r.random::<f64>() < spec.capability_prob {
                    list.push(s);
                    any = true;
                }
            }
            if !any {
                let k = r.random_range(0..spec.job_types);
                capable[k].push(s);
                capable[k].sort_unstable();
            }
        }
        for (k, list) in capable.iter_mut().enumerate() {
            if list.is_empty() {
                list.push(r.random_range(0..n));
                log::debug!("job type {k} had no capable server; assigned one at random");
            }
        }
        let mut r = rng::stream(seed, rng::WORLD, &[world, 1]);
        let mut tasks = Vec::new();
        for k in 0..=horizon {
            let phase = std::f64::consts::TAU * k as f64 / spec.day_length;
            let z: f64 = StandardNormal.sample(&mut r);
            let rate = n as f64 * spec.load * (1.0 + spec.amplitude * phase.sin()) * (spec.rate_noise * z).exp();
            let start = k as f64 * spec.interval;
            let end = start + spec.interval;
            let mut time = start;
            loop {
                let gap: f64 = Exp1.sample(&mut r);
                time += gap / rate;
                if time >= end {
                    break;
                }
                let work: f64 = Exp1.sample(&mut r);
                tasks.push(Task {
                    time,
                    kind: r.random_range(0..spec.job_types),
                    work,
                });
            }
        }
        Ok(DataCenterWorld {
            spec: spec.clone(),
            n,
            horizon,
            seed,
            world,
            capable,
            tasks,
        })
    }

    pub fn task_count(&self) -> usize {
        self.tasks.len()
    }

    pub fn run(&self, w: &TreatmentMatrix) -> Result<OutcomePanel> {
        super::check_shape(w, self.n, self.horizon)?;
        let s = &self.spec;
        let mut servers: Vec<Server> = (0..self.n)
            .map(|_| Server {
                queue: VecDeque::new(),
                last: 0.0,
                busy: 0.0,
                speed: s.service_rate,
                version: 0,
            })
            .collect();
        let mut heap = BinaryHeap::new();
        let mut lengths = vec![0usize; self.n];
        let mut next_task = 0;
        let mut cols = Vec::with_capacity(self.horizon + 1);
        for k in 0..=self.horizon {
            let start = k as f64 * s.interval;
            let end = start + s.interval;
            for (i, srv) in servers.iter_mut().enumerate() {
                srv.advance(start);
                srv.busy = 0.0;
                srv.speed = s.service_rate * if w.get(i, k) { s.treatment_multiplier } else { 1.0 };
                srv.version += 1;
                if let Some(time) = srv.completion() {
                    heap.push(Event { time, server: i, version: srv.version });
                }
            }
            loop {
                let arrival = self.tasks.get(next_task).filter(|t| t.time < end).map(|t| t.time);
                let completion = loop {
                    match heap.peek() {
                        Some(e) if e.version != servers[e.server].version => {
                            heap.pop();
                        }
                        Some(e) if e.time < end => break Some(e.time),
                        _ => break None,
                    }
                };
                match (arrival, completion) {
                    (None, None) => break,
                    (Some(a), c) if c.is_none_or(|c| a < c) => {
                        let task = self.tasks[next_task];
                        let mut r = rng::stream(self.seed, "routing", &[self.world, next_task as u64]);
                        next_task += 1;
                        let target = jsq_assign(&lengths, &self.capable[task.kind], s.sample_size, &mut r)?;
                        let srv = &mut servers[target];
                        srv.advance(a);
                        srv.queue.push_back(task.work);
                        lengths[target] += 1;
                        if srv.queue.len() == 1 {
                            srv.version += 1;
                            heap.push(Event {
                                time: srv.completion().expect("queue nonempty"),
                                server: target,
                                version: srv.version,
                            });
                        }
                    }
                    _ => {
                        let e = heap.pop().expect("peeked event");
                        let srv = &mut servers[e.server];
                        srv.advance(e.time);
                        srv.queue.pop_front();
                        lengths[e.server] -= 1;
                        srv.version += 1;
                        if let Some(time) = srv.completion() {
                            heap.push(Event { time, server: e.server, version: srv.version });
                        }
                    }
                }
            }
            let col: Vec<f64> = servers
                .iter_mut()
                .map(|srv| {
                    srv.advance(end);
                    (srv.busy / s.interval).clamp(0.0, 1.0)
                })
                .collect();
            cols.push(col);
        }
        OutcomePanel::from_columns(&cols)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsq_examples() {
        let mut r = rng::stream(1, "t", &[]);
        assert_eq!(jsq_assign(&[4, 2, 9], &[2], 2, &mut r).unwrap(), 2);
        for _ in 0..50 {
            assert_eq!(jsq_assign(&[0, 5], &[0, 1], 2, &mut r).unwrap(), 0);
        }
        assert!(matches!(jsq_assign(&[0], &[], 2, &mut r), Err(Error::Routing(_))));
    }

    #[test]
    fn ties_are_uniform() {
        let mut r = rng::stream(2, "t", &[]);
        let mut counts = [0usize; 3];
        let trials = 10_000;
        for _ in 0..trials {
            counts[jsq_assign(&[0, 0, 0], &[0, 1, 2], 3, &mut r).unwrap()] += 1;
        }
        for c in counts {
            let f = c as f64 / trials as f64;
            assert!((f - 1.0 / 3.0).abs() < 0.02, "{counts:?}");
        }
    }

    #[test]
    fn single_server_utilization_matches_queue_theory() {
        // M/M/1 with load 0.5: long-run busy fraction 0.5.
        let spec = DataCenterSpec {
            job_types: 1,
            capability_prob: 1.0,
            load: 0.5,
            amplitude: 0.0,
            rate_noise: 0.0,
            interval: 20_000.0,
            ..DataCenterSpec::default()
        };
        let world = DataCenterWorld::new(&spec, 1, 1, 4, 0).unwrap();
        let panel = world.run(&TreatmentMatrix::zeros(1, 1)).unwrap();
        assert!((panel.get(0, 1) - 0.5).abs() < 0.03, "{}", panel.get(0, 1));
    }

    #[test]
    fn treatment_lowers_treated_utilization() {
        let spec = DataCenterSpec::default();
        let world = DataCenterWorld::new(&spec, 100, 6, 5, 0).unwrap();
        let none = world.run(&TreatmentMatrix::zeros(100, 6)).unwrap();
        let all = world.run(&TreatmentMatrix::all_treated(100, 6)).unwrap();
        assert!(all.column_mean(6) < none.column_mean(6));
        assert_eq!(none.column(0), all.column(0));
    }
}
