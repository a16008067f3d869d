//! Records of completed duels as the agent stores them.

use ndarray::Array1;

/// One completed duel, with the feature difference frozen at the parameters
/// that selected it. The frozen `dphi` is what enters the Gram matrix; the
/// training loss re-featurizes the raw contexts instead (see
/// [`HistoryEntry`]).
#[derive(Clone, Debug, PartialEq)]
pub struct DuelRecord {
    /// 1-based round index of the duel.
    pub round: u64,
    pub idx_first: usize,
    pub idx_second: usize,
    /// Feature difference of the two chosen arms at selection time.
    pub dphi: Array1<f64>,
    /// Variance clamp weight used for this observation; always > 0.
    pub zeta: f64,
    /// 1 if the first arm won, 0 otherwise.
    pub outcome: u8,
}

/// A duel record together with the raw context vectors of the two chosen
/// arms, so losses can be recomputed under whatever the current network
/// parameters are.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryEntry {
    pub record: DuelRecord,
    pub x_first: Array1<f64>,
    pub x_second: Array1<f64>,
}
