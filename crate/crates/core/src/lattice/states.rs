use std::collections::HashMap;

use crate::lattice::{BarrierSpec, Direction, StateKind, StepParams};
use crate::payoffs::{node_payoffs, Convention, NodePayoffs, PathSummary, PayoffFamily};
use crate::{Error, Result};

/// Successor of a recombining state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Child {
    /// Knocked out: every later payoff is zero.
    Dead,
    Index(usize),
}

/// Running-maximum bookkeeping for the Russian family: the maximum is
/// identified by the lattice coordinate `(step, level)` where it was attained.
/// With `r = 0` the price does not depend on the step, so `step` is pinned to 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct PeakState {
    level: i32,
    peak_step: u32,
    peak_level: i32,
    crossed: bool,
}

/// Recombining state machine of a Markov-reducible contract.
///
/// Knock-out contracts only carry alive states; leaving the interval maps to
/// [`Child::Dead`]. Knock-in contracts carry a crossed flag.
pub(crate) struct StateSpace {
    sp: StepParams,
    family: PayoffFamily,
    barrier: BarrierSpec,
    convention: Convention,
    layout: Layout,
}

enum Layout {
    /// Index `j` (number of up-moves), or `2j + crossed` for knock-in.
    Level,
    Peak {
        levels: Vec<Vec<PeakState>>,
        children: Vec<Vec<[Child; 2]>>,
    },
}

impl StateSpace {
    pub fn new(
        sp: &StepParams,
        family: &PayoffFamily,
        barrier: &BarrierSpec,
        convention: Convention,
    ) -> Result<Self> {
        let layout = match family.state_kind() {
            StateKind::Level => Layout::Level,
            StateKind::LevelMax => build_peak_layout(sp, barrier),
            StateKind::PathDependent => return Err(Error::NotReducible(family.name())),
        };
        Ok(StateSpace {
            sp: *sp,
            family: *family,
            barrier: *barrier,
            convention,
            layout,
        })
    }

    pub fn steps(&self) -> usize {
        self.sp.n
    }

    fn knock_in(&self) -> bool {
        self.barrier.direction == Direction::KnockIn
    }

    pub fn len(&self, k: usize) -> usize {
        match &self.layout {
            Layout::Level if self.knock_in() => 2 * (k + 1),
            Layout::Level => k + 1,
            Layout::Peak { levels, .. } => levels[k].len(),
        }
    }

    /// Root state, or `Dead` for a knock-out contract that starts outside.
    pub fn root(&self) -> Child {
        let inside = self.barrier.contains(self.sp.s0());
        match &self.layout {
            Layout::Level if self.knock_in() => Child::Index(usize::from(!inside)),
            Layout::Level if inside => Child::Index(0),
            Layout::Peak { levels, .. } if !levels[0].is_empty() => Child::Index(0),
            _ => Child::Dead,
        }
    }

    pub fn child(&self, k: usize, idx: usize, up: bool) -> Child {
        match &self.layout {
            Layout::Level => {
                let (j, crossed) = if self.knock_in() { (idx / 2, idx % 2 == 1) } else { (idx, false) };
                let j1 = j + usize::from(up);
                let level = 2 * j1 as i64 - (k + 1) as i64;
                let inside = self.barrier.contains(self.sp.price(k + 1, level));
                if self.knock_in() {
                    Child::Index(2 * j1 + usize::from(crossed || !inside))
                } else if inside {
                    Child::Index(j1)
                } else {
                    Child::Dead
                }
            }
            Layout::Peak { children, .. } => children[k][idx][usize::from(up)],
        }
    }

    /// Net move `Σξ` of a state.
    pub fn level(&self, k: usize, idx: usize) -> i64 {
        match &self.layout {
            Layout::Level => {
                let j = if self.knock_in() { idx / 2 } else { idx };
                2 * j as i64 - k as i64
            }
            Layout::Peak { levels, .. } => levels[k][idx].level as i64,
        }
    }

    fn summary(&self, k: usize, idx: usize) -> (PathSummary, bool) {
        let current = self.sp.price(k, self.level(k, idx));
        match &self.layout {
            Layout::Level => {
                let crossed = self.knock_in() && idx % 2 == 1;
                (
                    PathSummary {
                        current,
                        running_max: current,
                        integral: 0.0,
                    },
                    crossed,
                )
            }
            Layout::Peak { levels, .. } => {
                let st = levels[k][idx];
                let peak = self.sp.price(st.peak_step as usize, st.peak_level as i64);
                (
                    PathSummary {
                        current,
                        running_max: peak,
                        integral: 0.0,
                    },
                    st.crossed,
                )
            }
        }
    }

    pub fn payoffs(&self, k: usize, idx: usize) -> NodePayoffs {
        let (summary, crossed) = self.summary(k, idx);
        node_payoffs(
            &self.family,
            self.barrier.direction,
            self.convention,
            self.sp.discount(k),
            &summary,
            crossed,
        )
    }

    /// Marks the states reachable from the root, level by level, and hands
    /// each reachable `(k, idx)` to `visit`.
    pub fn for_each_reachable(&self, mut visit: impl FnMut(usize, usize)) {
        let Child::Index(root) = self.root() else {
            return;
        };
        let mut cur = vec![false; self.len(0)];
        cur[root] = true;
        for k in 0..=self.sp.n {
            let mut next = if k < self.sp.n { vec![false; self.len(k + 1)] } else { Vec::new() };
            for (idx, _) in cur.iter().enumerate().filter(|(_, &r)| r) {
                visit(k, idx);
                if k < self.sp.n {
                    for up in [false, true] {
                        if let Child::Index(c) = self.child(k, idx, up) {
                            next[c] = true;
                        }
                    }
                }
            }
            cur = next;
        }
    }

    /// Follows `signs` from the root.
    pub fn walk(&self, signs: &[i8]) -> Child {
        let mut state = self.root();
        for (k, &s) in signs.iter().enumerate() {
            match state {
                Child::Dead => return Child::Dead,
                Child::Index(idx) => state = self.child(k, idx, s > 0),
            }
        }
        state
    }
}

fn build_peak_layout(sp: &StepParams, barrier: &BarrierSpec) -> Layout {
    let knock_in = barrier.direction == Direction::KnockIn;
    let pinned = sp.rate() == 0.0;
    let inside0 = barrier.contains(sp.s0());
    let mut levels: Vec<Vec<PeakState>> = Vec::with_capacity(sp.n + 1);
    let mut children: Vec<Vec<[Child; 2]>> = Vec::with_capacity(sp.n);
    let root = PeakState {
        level: 0,
        peak_step: 0,
        peak_level: 0,
        crossed: !inside0,
    };
    levels.push(if inside0 || knock_in { vec![root] } else { Vec::new() });
    for k in 0..sp.n {
        let mut index: HashMap<PeakState, usize> = HashMap::new();
        let mut next: Vec<PeakState> = Vec::new();
        let mut links = Vec::with_capacity(levels[k].len());
        for st in &levels[k] {
            let mut pair = [Child::Dead; 2];
            for (slot, step) in [(0usize, -1i32), (1, 1)] {
                let level = st.level + step;
                let inside = barrier.contains(sp.price(k + 1, level as i64));
                if !knock_in && !inside {
                    continue;
                }
                let new_peak = sp.exponent(k + 1, level as i64)
                    > sp.exponent(st.peak_step as usize, st.peak_level as i64);
                let (peak_step, peak_level) = if new_peak {
                    (if pinned { 0 } else { (k + 1) as u32 }, level)
                } else {
                    (st.peak_step, st.peak_level)
                };
                let child = PeakState {
                    level,
                    peak_step,
                    peak_level,
                    crossed: st.crossed || !inside,
                };
                let id = *index.entry(child).or_insert_with(|| {
                    next.push(child);
                    next.len() - 1
                });
                pair[slot] = Child::Index(id);
            }
            links.push(pair);
        }
        children.push(links);
        levels.push(next);
    }
    Layout::Peak { levels, children }
}
