//! Credit accounting: users and groups ranked by contributed computation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ids::{GroupId, UserId};
use crate::model::ClientRecord;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreditLedger {
    users: BTreeMap<UserId, f64>,
    groups: BTreeMap<GroupId, f64>,
    /// Credit each user earned while a member of each group.
    group_members: BTreeMap<GroupId, BTreeMap<UserId, f64>>,
}

impl CreditLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Grants `cpu_seconds * benchmark_gflops` to the client's user and group.
    pub fn grant(&mut self, client: &ClientRecord, cpu_seconds: f64) -> f64 {
        let amount = credit_for(cpu_seconds, client.hardware.benchmark_gflops);
        if amount <= 0.0 {
            return 0.0;
        }
        *self.users.entry(client.user_id.clone()).or_default() += amount;
        if let Some(group) = &client.group_id {
            *self.groups.entry(group.clone()).or_default() += amount;
            *self
                .group_members
                .entry(group.clone())
                .or_default()
                .entry(client.user_id.clone())
                .or_default() += amount;
        }
        amount
    }

    pub fn user(&self, user: &UserId) -> f64 {
        self.users.get(user).copied().unwrap_or(0.0)
    }

    pub fn group(&self, group: &GroupId) -> f64 {
        self.groups.get(group).copied().unwrap_or(0.0)
    }

    pub fn group_member_credit(&self, group: &GroupId) -> impl Iterator<Item = (&UserId, f64)> {
        self.group_members
            .get(group)
            .into_iter()
            .flat_map(|m| m.iter().map(|(u, c)| (u, *c)))
    }

    pub fn users(&self) -> impl Iterator<Item = (&UserId, f64)> {
        self.users.iter().map(|(u, c)| (u, *c))
    }

    pub fn groups(&self) -> impl Iterator<Item = (&GroupId, f64)> {
        self.groups.iter().map(|(g, c)| (g, *c))
    }

    /// Users sorted by credit, highest first; ties broken by id.
    pub fn leaderboard(&self) -> Vec<(UserId, f64)> {
        let mut rows: Vec<_> = self.users.iter().map(|(u, c)| (u.clone(), *c)).collect();
        rows.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        rows
    }
}

/// Negative, NaN or infinite inputs earn nothing.
pub fn credit_for(cpu_seconds: f64, benchmark_gflops: f64) -> f64 {
    let amount = cpu_seconds * benchmark_gflops;
    if amount.is_finite() && amount > 0.0 {
        amount
    } else {
        0.0
    }
}
