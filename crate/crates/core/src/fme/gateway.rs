//! GW-A function set selection under a resource budget.

use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum GwFunction {
    AttachHandling,
    SessionManagement,
    LocalSwitching,
    IntercellForwarding,
    ExternalGateway,
    D2dAuthorization,
}

impl GwFunction {
    pub const ALL: [GwFunction; 6] = [
        GwFunction::AttachHandling,
        GwFunction::SessionManagement,
        GwFunction::LocalSwitching,
        GwFunction::IntercellForwarding,
        GwFunction::ExternalGateway,
        GwFunction::D2dAuthorization,
    ];

    pub fn is_mandatory(self) -> bool {
        matches!(self, GwFunction::AttachHandling | GwFunction::SessionManagement)
    }

    /// Lower value = more important.
    pub fn default_priority(self) -> u32 {
        match self {
            GwFunction::AttachHandling => 0,
            GwFunction::SessionManagement => 1,
            GwFunction::LocalSwitching => 2,
            GwFunction::IntercellForwarding => 3,
            GwFunction::ExternalGateway => 4,
            GwFunction::D2dAuthorization => 5,
        }
    }

    pub fn default_cost(self) -> u32 {
        1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FunctionRequest {
    pub function: GwFunction,
    pub priority: u32,
    pub cost: u32,
}

impl FunctionRequest {
    pub fn default_for(function: GwFunction) -> Self {
        FunctionRequest { function, priority: function.default_priority(), cost: function.default_cost() }
    }
}

/// Mandatory functions are always active and charged first. The remaining
/// requests are taken greedily in (priority, function) order while they fit.
pub fn gw_a_prioritize(requested: &[FunctionRequest], budget: u32) -> Vec<GwFunction> {
    let mut sorted: Vec<FunctionRequest> = requested.to_vec();
    sorted.sort_by_key(|r| (!r.function.is_mandatory(), r.priority, r.function));
    sorted.dedup_by_key(|r| r.function);
    let mut left = budget;
    let mut active = Vec::new();
    for r in sorted {
        if r.function.is_mandatory() {
            left = left.saturating_sub(r.cost);
            active.push(r.function);
        } else if r.cost <= left {
            left -= r.cost;
            active.push(r.function);
        }
    }
    for f in [GwFunction::AttachHandling, GwFunction::SessionManagement] {
        if !active.contains(&f) {
            active.push(f);
        }
    }
    active.sort_unstable();
    active
}
