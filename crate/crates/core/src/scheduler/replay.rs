//! Discrete-event replay of a plan, tracking which origins each stream
//! carries. Shares no logic with the algebraic participation derivation.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::paths::Direction;
use super::plan::{Forwarding, ParticipationMatrix, SchedulePlan};
use crate::channel::RoundTimings;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Arrival,
    Departure,
}

#[derive(Debug, Clone, PartialEq)]
struct Event {
    time: f64,
    kind: Kind,
    direction: Direction,
    from: usize,
    to: usize,
    /// Origins carried; filled in at departure.
    payload: Vec<bool>,
}

impl Eq for Event {}

impl Ord for Event {
    // min-heap on time; arrivals before departures at equal times
    fn cmp(&self, other: &Self) -> Ordering {
        let rank = |k: Kind| match k {
            Kind::Arrival => 0u8,
            Kind::Departure => 1,
        };
        other
            .time
            .total_cmp(&self.time)
            .then(rank(other.kind).cmp(&rank(self.kind)))
            .then(other.from.cmp(&self.from))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub participation: ParticipationMatrix,
    /// Latest accepted arrival or readiness per ES.
    pub t_agg: Vec<f64>,
}

pub fn replay_plan(plan: &SchedulePlan, timings: &RoundTimings) -> ReplayOutcome {
    let n = timings.num_cells();
    let mut heap = BinaryHeap::new();
    for l in 0..n.saturating_sub(1) {
        if let Some(t) = plan.start_right[l] {
            heap.push(departure(t, Direction::Rightward, l, l + 1));
        }
        if let Some(t) = plan.start_left[l] {
            heap.push(departure(t, Direction::Leftward, l + 1, l));
        }
    }
    // what each ES has received from each side
    let mut from_left = vec![vec![false; n]; n];
    let mut from_right = vec![vec![false; n]; n];
    let mut t_agg: Vec<f64> = (0..n).map(|l| timings.ready(l)).collect();
    while let Some(mut ev) = heap.pop() {
        match ev.kind {
            Kind::Departure => {
                let mut payload = vec![false; n];
                payload[ev.from] = true;
                if plan.forwarding == Forwarding::Aggregate {
                    let inbox = match ev.direction {
                        Direction::Rightward => &from_left[ev.from],
                        Direction::Leftward => &from_right[ev.from],
                    };
                    for (p, &b) in payload.iter_mut().zip(inbox) {
                        *p |= b;
                    }
                }
                let t_com = match ev.direction {
                    Direction::Rightward => timings.t_com_right[ev.from],
                    Direction::Leftward => timings.t_com_left[ev.to],
                };
                ev.time += t_com;
                ev.kind = Kind::Arrival;
                ev.payload = payload;
                heap.push(ev);
            }
            Kind::Arrival => {
                if ev.time > timings.t_max {
                    continue;
                }
                t_agg[ev.to] = t_agg[ev.to].max(ev.time);
                let inbox = match ev.direction {
                    Direction::Rightward => &mut from_left[ev.to],
                    Direction::Leftward => &mut from_right[ev.to],
                };
                for (b, &p) in inbox.iter_mut().zip(&ev.payload) {
                    *b |= p;
                }
            }
        }
    }
    let mut participation = ParticipationMatrix::identity(n);
    for l in 0..n {
        for j in 0..n {
            if from_left[l][j] || from_right[l][j] {
                participation.set(j, l, true);
            }
        }
    }
    ReplayOutcome { participation, t_agg }
}

fn departure(time: f64, direction: Direction, from: usize, to: usize) -> Event {
    Event { time, kind: Kind::Departure, direction, from, to, payload: Vec::new() }
}
