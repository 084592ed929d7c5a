use serde::{Deserialize, Serialize};

/// Tunables of the scheduling decision.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchedulerPolicy {
    /// How long a workunit whose inputs no client holds waits for a client
    /// to declare them before a get-input run is considered. Per workunit.
    pub wait_window_secs: u64,
    /// Whether the server asks clients about inputs during the window.
    pub poll_via_rpc: bool,
    /// Among clients that answer an inventory query, prefer one that already
    /// downloaded the workunit's environment.
    pub prefer_cached_env: bool,
    /// Backoff suggested in NO_WORK replies.
    pub no_work_backoff_secs: u64,
}

impl Default for SchedulerPolicy {
    fn default() -> Self {
        SchedulerPolicy {
            wait_window_secs: 120,
            poll_via_rpc: true,
            prefer_cached_env: false,
            no_work_backoff_secs: 10,
        }
    }
}

impl SchedulerPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if self.wait_window_secs == 0 {
            return Err("wait_window_secs must be positive".into());
        }
        Ok(())
    }
}
