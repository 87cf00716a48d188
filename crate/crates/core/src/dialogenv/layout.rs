use crate::error::{ensure, Result};
use crate::ontology::Ontology;

/// User act vocabulary used in the state (`none` marks an unhelpful turn or
/// the start of a dialog).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum UserActKind {
    Inform,
    Request,
    Acknowledge,
    None,
}

impl UserActKind {
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        match self {
            UserActKind::Inform => 0,
            UserActKind::Request => 1,
            UserActKind::Acknowledge => 2,
            UserActKind::None => 3,
        }
    }
}

pub const TURN_BUCKETS: [usize; 5] = [1, 3, 5, 8, 12];

/// Bit offsets of the binary dialog state.
///
/// Per domain, in order: `focus, complete, constraint-informed[S],
/// constraint-missing[S], request-pending[S], request-satisfied[S],
/// recommended, booked`. Then `last-user-act[4]`, `last-system-act[A + 1]`
/// and the unary turn bucket. Bits past the layout width up to `state_dim`
/// are always zero.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StateLayout {
    n_domains: usize,
    n_slots: usize,
    n_acts: usize,
    domain_block: usize,
    state_dim: usize,
}

impl StateLayout {
    pub fn new(ontology: &Ontology) -> Result<Self> {
        let n_slots = ontology.slots.len();
        let layout = Self {
            n_domains: ontology.domains.len(),
            n_slots,
            n_acts: ontology.acts.len(),
            domain_block: 2 + 4 * n_slots + 2,
            state_dim: ontology.state_dim,
        };
        ensure!(
            layout.width() <= ontology.state_dim,
            Configuration,
            "state_dim {} is smaller than the dialog state layout ({} bits)",
            ontology.state_dim,
            layout.width()
        );
        Ok(layout)
    }

    /// Number of bits the layout actually uses.
    pub fn width(&self) -> usize {
        self.n_domains * self.domain_block
            + UserActKind::COUNT
            + self.n_acts
            + 1
            + TURN_BUCKETS.len()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn n_domains(&self) -> usize {
        self.n_domains
    }

    pub fn n_slots(&self) -> usize {
        self.n_slots
    }

    fn base(&self, domain: usize) -> usize {
        domain * self.domain_block
    }

    pub fn focus(&self, domain: usize) -> usize {
        self.base(domain)
    }

    pub fn complete(&self, domain: usize) -> usize {
        self.base(domain) + 1
    }

    pub fn constraint_informed(&self, domain: usize, slot: usize) -> usize {
        self.base(domain) + 2 + slot
    }

    pub fn constraint_missing(&self, domain: usize, slot: usize) -> usize {
        self.base(domain) + 2 + self.n_slots + slot
    }

    pub fn request_pending(&self, domain: usize, slot: usize) -> usize {
        self.base(domain) + 2 + 2 * self.n_slots + slot
    }

    pub fn request_satisfied(&self, domain: usize, slot: usize) -> usize {
        self.base(domain) + 2 + 3 * self.n_slots + slot
    }

    pub fn recommended(&self, domain: usize) -> usize {
        self.base(domain) + 2 + 4 * self.n_slots
    }

    pub fn booked(&self, domain: usize) -> usize {
        self.base(domain) + 3 + 4 * self.n_slots
    }

    fn globals(&self) -> usize {
        self.n_domains * self.domain_block
    }

    pub fn last_user_act(&self, act: UserActKind) -> usize {
        self.globals() + act.index()
    }

    /// `act = None` encodes "no system turn yet".
    pub fn last_system_act(&self, act: Option<usize>) -> usize {
        self.globals() + UserActKind::COUNT + act.unwrap_or(self.n_acts)
    }

    pub fn turn_bucket(&self, bucket: usize) -> usize {
        self.globals() + UserActKind::COUNT + self.n_acts + 1 + bucket
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_layout_fits_exactly() {
        let o = Ontology::desk_default();
        let l = StateLayout::new(&o).unwrap();
        assert_eq!(l.width(), 98);
        assert_eq!(l.turn_bucket(4), 97);
        assert_eq!(l.booked(2) + 1, l.last_user_act(UserActKind::Inform));
        let micro = Ontology::micro();
        assert_eq!(StateLayout::new(&micro).unwrap().width(), micro.state_dim);
    }

    #[test]
    fn too_small_state_dim_is_rejected() {
        let text = crate::ontology::MICRO_ONTOLOGY.replace("state_dim = 24", "state_dim = 10");
        let o = Ontology::from_toml_str(&text).unwrap();
        assert!(StateLayout::new(&o).is_err());
    }
}
