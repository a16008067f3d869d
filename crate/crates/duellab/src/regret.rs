//! Regret measures for duels and the per-run trace that accumulates them.

/// Average regret of a duel: the best arm's utility minus the mean utility
/// of the two arms actually played, (2 u* - u1 - u2) / 2.
pub fn average_regret(u_star: f64, u_first: f64, u_second: f64) -> f64 {
    (2.0 * u_star - u_first - u_second) / 2.0
}

/// Weak regret of a duel: u* minus the better of the two played utilities.
pub fn weak_regret(u_star: f64, u_first: f64, u_second: f64) -> f64 {
    u_star - u_first.max(u_second)
}

/// Per-round regret history of a single run.
///
/// `elapsed_ms` is wall-clock measurement metadata: it is carried along and
/// written to the output files, but it is not part of the deterministic
/// content of a run (two identical runs produce bit-identical regret fields,
/// not identical timings).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RegretTrace {
    pub r_avg: Vec<f64>,
    pub r_weak: Vec<f64>,
    pub cum_avg: Vec<f64>,
    pub cum_weak: Vec<f64>,
    pub elapsed_ms: Vec<f64>,
}

impl RegretTrace {
    pub fn with_capacity(rounds: usize) -> Self {
        RegretTrace {
            r_avg: Vec::with_capacity(rounds),
            r_weak: Vec::with_capacity(rounds),
            cum_avg: Vec::with_capacity(rounds),
            cum_weak: Vec::with_capacity(rounds),
            elapsed_ms: Vec::with_capacity(rounds),
        }
    }

    pub fn push(&mut self, r_avg: f64, r_weak: f64, elapsed_ms: f64) {
        let prev_avg = self.cum_avg.last().copied().unwrap_or(0.0);
        let prev_weak = self.cum_weak.last().copied().unwrap_or(0.0);
        self.r_avg.push(r_avg);
        self.r_weak.push(r_weak);
        self.cum_avg.push(prev_avg + r_avg);
        self.cum_weak.push(prev_weak + r_weak);
        self.elapsed_ms.push(elapsed_ms);
    }

    pub fn len(&self) -> usize {
        self.r_avg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r_avg.is_empty()
    }

    /// Bitwise equality of the deterministic (regret) fields, ignoring timing.
    pub fn same_regret(&self, other: &RegretTrace) -> bool {
        let eq = |a: &[f64], b: &[f64]| {
            a.len() == b.len()
                && a.iter()
                    .zip(b)
                    .all(|(x, y)| x.to_bits() == y.to_bits())
        };
        eq(&self.r_avg, &other.r_avg)
            && eq(&self.r_weak, &other.r_weak)
            && eq(&self.cum_avg, &other.cum_avg)
            && eq(&self.cum_weak, &other.cum_weak)
    }
}
