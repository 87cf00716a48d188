use std::io::Write;

use serde::Serialize;

use crate::dialogenv::env::Transition;
use crate::ontology::{AssignmentMatrix, Ontology};

/// One line of the episode trace log (JSON per line).
#[derive(Clone, Debug, Serialize)]
pub struct TraceLine {
    pub episode: usize,
    pub turn: usize,
    pub action: usize,
    pub action_name: String,
    pub r_ori: f64,
    pub r_shaped: f64,
    pub done: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub success: Option<bool>,
    pub state: String,
}

pub struct TraceWriter<W: Write> {
    out: W,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn write(
        &mut self,
        ontology: &Ontology,
        m: &AssignmentMatrix,
        episode: usize,
        turn: usize,
        t: &Transition,
    ) -> std::io::Result<()> {
        let action_name = m
            .triple(t.action)
            .map(|tr| ontology.triple_name(&tr))
            .unwrap_or_default();
        let line = TraceLine {
            episode,
            turn,
            action: t.action.0,
            action_name,
            r_ori: t.r_ori,
            r_shaped: t.r_shaped,
            done: t.done,
            success: t.success,
            state: t.state.to_bit_string(),
        };
        serde_json::to_writer(&mut self.out, &line)?;
        self.out.write_all(b"\n")
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
