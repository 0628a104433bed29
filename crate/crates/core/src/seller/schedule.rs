use serde::{Deserialize, Serialize};

/// `⌈3 ln k / ln(1/γ)⌉`; zero for `k <= 1`.
pub fn buffer_length(k: usize, gamma: f64) -> usize {
    assert!(gamma > 0.0 && gamma < 1.0, "gamma must lie in (0, 1)");
    if k <= 1 {
        return 0;
    }
    let raw = 3.0 * (k as f64).ln() / (1.0 / gamma).ln();
    // guard against 19.9999999 becoming 20 through rounding noise
    (raw - 1e-9).ceil().max(0.0) as usize
}

/// Buffer periods: after a trigger at the end of episode `s`, episodes
/// `s+1..=e` run the stale policy and the update happens at the end of `e`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferSchedule {
    /// Completed updates `k̃`.
    pub k_tilde: usize,
    /// Start of the most recently scheduled buffer.
    pub start: usize,
    /// End of the most recently scheduled buffer.
    pub end: usize,
    /// A buffer is scheduled and its update has not yet run.
    pub pending: bool,
    /// End of the buffer behind the current policy, `buffer.e(k̃)`.
    pub last_update_end: usize,
    /// Every scheduled `(start, end)` pair in order.
    pub history: Vec<(usize, usize)>,
}

impl Default for BufferSchedule {
    fn default() -> Self {
        BufferSchedule {
            k_tilde: 0,
            start: 1,
            end: 1,
            pending: false,
            last_update_end: 1,
            history: Vec::new(),
        }
    }
}

impl BufferSchedule {
    pub fn in_buffer(&self, k: usize) -> bool {
        !self.history.is_empty() && self.start < k && k <= self.end
    }

    /// Schedules a buffer starting at `k`; returns its length.
    pub fn schedule(&mut self, k: usize, gamma: f64) -> usize {
        assert!(!self.pending, "buffers never overlap");
        let len = buffer_length(k, gamma);
        self.start = k;
        self.end = k + len;
        self.pending = true;
        self.history.push((k, k + len));
        len
    }

    pub fn update_due(&self, k: usize) -> bool {
        self.pending && k == self.end
    }

    pub fn complete(&mut self) {
        assert!(self.pending, "no buffer to complete");
        self.pending = false;
        self.k_tilde += 1;
        self.last_update_end = self.end;
    }

    /// Total episodes spent inside buffers up to and including `k`.
    pub fn buffered_episodes(&self, k: usize) -> usize {
        self.history
            .iter()
            .map(|&(s, e)| e.min(k).saturating_sub(s))
            .sum()
    }
}
