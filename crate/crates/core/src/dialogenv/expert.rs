use crate::dialogenv::env::DialogState;
use crate::dialogenv::layout::StateLayout;
use crate::error::Result;
use crate::ontology::{build_assignment_matrix, AssignmentMatrix, DialogAction, Ontology, Triple};

/// Scripted optimal policy. It reads the tracker's view of the user goal out
/// of the state bits (focus domain, unspecified constraints, pending request)
/// and picks the one action that moves the dialog forward:
/// ask for the lowest-index missing constraint, then recommend, then answer
/// the pending request, then book.
#[derive(Clone, Debug)]
pub struct ExpertPolicy {
    layout: StateLayout,
    matrix: AssignmentMatrix,
    ontology: Ontology,
}

impl ExpertPolicy {
    pub fn new(ontology: &Ontology) -> Result<Self> {
        Ok(Self {
            layout: StateLayout::new(ontology)?,
            matrix: build_assignment_matrix(ontology),
            ontology: ontology.clone(),
        })
    }

    pub fn act(&self, state: &DialogState) -> DialogAction {
        let l = &self.layout;
        let roles = self.ontology.role_index();
        let domain = (0..l.n_domains())
            .find(|&d| state.get(l.focus(d)))
            .unwrap_or(0);
        let triple = (|| {
            if let Some(request) = roles.request {
                if let Some(slot) =
                    (0..l.n_slots()).find(|&s| state.get(l.constraint_missing(domain, s)))
                {
                    return Triple::new(domain, request, slot);
                }
            }
            if let Some((act, slot)) = roles.recommend {
                if !state.get(l.recommended(domain)) {
                    return Triple::new(domain, act, slot);
                }
            }
            if let Some(slot) = (0..l.n_slots()).find(|&s| state.get(l.request_pending(domain, s)))
            {
                return Triple::new(domain, roles.inform, slot);
            }
            if let Some((act, slot)) = roles.book {
                return Triple::new(domain, act, slot);
            }
            Triple::new(domain, roles.inform, roles.request_slots[0])
        })();
        self.matrix
            .index_of(&triple)
            .expect("role validation guarantees every task action is valid")
    }
}

pub fn expert_policy(state: &DialogState, expert: &ExpertPolicy) -> DialogAction {
    expert.act(state)
}
