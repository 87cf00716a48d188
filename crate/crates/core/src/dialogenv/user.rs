use crate::dialogenv::goal::UserGoal;
use crate::dialogenv::layout::UserActKind;
use crate::ontology::RoleIndex;

/// One entry on the user's agenda.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AgendaItem {
    /// Bring up a domain: inform its first constraint and mention the rest.
    Open { domain: usize },
    /// Wait for the system to tell the user about a constraint-matching venue.
    AwaitRecommend { domain: usize },
    /// Ask for a slot value and wait for it.
    Request { domain: usize, slot: usize },
    /// Wait for the booking.
    AwaitBooking { domain: usize },
    /// Answer a system question about a constraint.
    InformConstraint { domain: usize, slot: usize },
}

impl AgendaItem {
    pub fn domain(&self) -> usize {
        match *self {
            AgendaItem::Open { domain }
            | AgendaItem::AwaitRecommend { domain }
            | AgendaItem::Request { domain, .. }
            | AgendaItem::AwaitBooking { domain }
            | AgendaItem::InformConstraint { domain, .. } => domain,
        }
    }
}

/// Per-domain dialog status as tracked by the (rule-based, exact) tracker.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DomainStatus {
    pub constraints: Vec<usize>,
    pub informed: Vec<usize>,
    pub missing: Vec<usize>,
    pub pending: Option<usize>,
    pub satisfied: Vec<usize>,
    pub recommended: bool,
    pub booked: bool,
    pub complete: bool,
}

/// Agenda-based simulated user. The agenda is a stack: the last element is
/// the top.
#[derive(Clone, Debug)]
pub struct AgendaUser {
    pub goal: UserGoal,
    agenda: Vec<AgendaItem>,
    pub patience: usize,
    max_patience: usize,
    pub status: Vec<DomainStatus>,
    pub last_act: UserActKind,
}

impl AgendaUser {
    pub fn new(goal: UserGoal, roles: &RoleIndex, n_domains: usize, patience: usize) -> Self {
        let mut items = Vec::new();
        for g in &goal.domains {
            let domain = g.domain;
            items.push(AgendaItem::Open { domain });
            if roles.recommend.is_some() {
                items.push(AgendaItem::AwaitRecommend { domain });
            }
            items.extend(
                g.requests
                    .iter()
                    .map(|&slot| AgendaItem::Request { domain, slot }),
            );
            if roles.book.is_some() {
                items.push(AgendaItem::AwaitBooking { domain });
            }
        }
        items.reverse();
        let mut status = vec![DomainStatus::default(); n_domains];
        for g in &goal.domains {
            status[g.domain].constraints = g.constraints.clone();
        }
        let mut user = Self {
            goal,
            agenda: items,
            patience,
            max_patience: patience,
            status,
            last_act: UserActKind::None,
        };
        user.last_act = user.advance(roles);
        user
    }

    pub fn top(&self) -> Option<&AgendaItem> {
        self.agenda.last()
    }

    pub fn agenda_len(&self) -> usize {
        self.agenda.len()
    }

    pub fn is_satisfied(&self) -> bool {
        self.agenda.is_empty()
    }

    /// Domain the user is currently talking about.
    pub fn focus(&self) -> Option<usize> {
        self.top().map(AgendaItem::domain)
    }

    /// Processes agenda items that need no system input (opening a domain,
    /// emitting the next request) and reports what the user said.
    fn advance(&mut self, roles: &RoleIndex) -> UserActKind {
        let mut said = UserActKind::Acknowledge;
        while let Some(&top) = self.agenda.last() {
            match top {
                AgendaItem::Open { domain } => {
                    self.agenda.pop();
                    let st = &mut self.status[domain];
                    if roles.request.is_some() {
                        st.informed = st.constraints[..1].to_vec();
                        st.missing = st.constraints[1..].to_vec();
                    } else {
                        st.informed = st.constraints.clone();
                    }
                    said = UserActKind::Inform;
                }
                AgendaItem::InformConstraint { domain, slot } => {
                    self.agenda.pop();
                    let st = &mut self.status[domain];
                    st.missing.retain(|&s| s != slot);
                    st.informed.push(slot);
                    st.informed.sort_unstable();
                    said = UserActKind::Inform;
                }
                AgendaItem::Request { domain, slot } => {
                    let st = &mut self.status[domain];
                    if st.pending != Some(slot) {
                        st.pending = Some(slot);
                        said = UserActKind::Request;
                    }
                    return said;
                }
                AgendaItem::AwaitRecommend { .. } | AgendaItem::AwaitBooking { .. } => return said,
            }
        }
        said
    }

    fn finish_if_done(&mut self, domain: usize) {
        if !self.agenda.iter().any(|i| i.domain() == domain) {
            self.status[domain].complete = true;
        }
    }

    /// Reacts to a system action `(domain, act, slot)`. Returns whether the
    /// action moved the dialog forward.
    pub fn respond(&mut self, roles: &RoleIndex, domain: usize, act: usize, slot: usize) -> bool {
        let Some(&top) = self.agenda.last() else {
            return false;
        };
        if top.domain() != domain {
            self.unhelpful();
            return false;
        }
        let helpful = {
            let st = &self.status[domain];
            if roles.request == Some(act) && st.missing.contains(&slot) {
                self.agenda
                    .push(AgendaItem::InformConstraint { domain, slot });
                true
            } else {
                match top {
                    AgendaItem::AwaitRecommend { .. }
                        if roles.recommend == Some((act, slot)) && st.missing.is_empty() =>
                    {
                        self.agenda.pop();
                        self.status[domain].recommended = true;
                        true
                    }
                    AgendaItem::Request { slot: wanted, .. }
                        if act == roles.inform && slot == wanted =>
                    {
                        self.agenda.pop();
                        let st = &mut self.status[domain];
                        st.pending = None;
                        st.satisfied.push(slot);
                        true
                    }
                    AgendaItem::AwaitBooking { .. } if roles.book == Some((act, slot)) => {
                        self.agenda.pop();
                        self.status[domain].booked = true;
                        true
                    }
                    _ => false,
                }
            }
        };
        if helpful {
            self.patience = self.max_patience;
            self.finish_if_done(domain);
            self.last_act = self.advance(roles);
        } else {
            self.unhelpful();
        }
        helpful
    }

    fn unhelpful(&mut self) {
        self.patience = self.patience.saturating_sub(1);
        self.last_act = UserActKind::None;
    }
}
