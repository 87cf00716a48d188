//! Domain / act / slot ontology, action encodings and the rule-based action
//! decomposer.
//!
//! An action is a single index into the list of valid `(domain, act, slot)`
//! triples. The [`AssignmentMatrix`] maps every index to its triple, which is
//! all that is needed to split an action into its three one-hot sub-actions.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ensure, Error, Result};

/// One of the three levels of the action hierarchy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    Domain,
    Act,
    Slot,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::Domain, Level::Act, Level::Slot];

    pub fn index(self) -> usize {
        match self {
            Level::Domain => 0,
            Level::Act => 1,
            Level::Slot => 2,
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            Level::Domain => "d",
            Level::Act => "a",
            Level::Slot => "s",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Level::Domain => "domain",
            Level::Act => "act",
            Level::Slot => "slot",
        };
        f.write_str(name)
    }
}

/// Index triple `(domain, act, slot)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub domain: usize,
    pub act: usize,
    pub slot: usize,
}

impl Triple {
    pub fn new(domain: usize, act: usize, slot: usize) -> Self {
        Self { domain, act, slot }
    }

    pub fn get(&self, level: Level) -> usize {
        match level {
            Level::Domain => self.domain,
            Level::Act => self.act,
            Level::Slot => self.slot,
        }
    }
}

/// Which acts and slots drive the simulated dialog. Owned by the ontology
/// file so every stage sees the same task definition.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roles {
    /// System act that answers a pending user request.
    pub inform: String,
    /// System act that asks the user for an unspecified constraint. When
    /// absent the user volunteers all constraints up front.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recommend: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recommend_slot: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub book: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub book_slot: Option<String>,
    pub constraint_slots: Vec<String>,
    pub request_slots: Vec<String>,
}

/// On-disk form of an ontology (TOML). Everything is referenced by name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct OntologyFile {
    domains: Vec<String>,
    acts: Vec<String>,
    slots: Vec<String>,
    state_dim: usize,
    valid_triples: Vec<[String; 3]>,
    roles: Roles,
}

/// Resolved role indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoleIndex {
    pub inform: usize,
    pub request: Option<usize>,
    pub recommend: Option<(usize, usize)>,
    pub book: Option<(usize, usize)>,
    pub constraint_slots: Vec<usize>,
    pub request_slots: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ontology {
    pub domains: Vec<String>,
    pub acts: Vec<String>,
    pub slots: Vec<String>,
    pub state_dim: usize,
    valid_triples: BTreeSet<Triple>,
    roles: Roles,
    role_index: RoleIndex,
}

impl Ontology {
    pub fn new(
        domains: Vec<String>,
        acts: Vec<String>,
        slots: Vec<String>,
        valid_triples: impl IntoIterator<Item = Triple>,
        state_dim: usize,
        roles: Roles,
    ) -> Result<Self> {
        ensure!(
            !domains.is_empty(),
            Configuration,
            "ontology has no domains"
        );
        ensure!(!acts.is_empty(), Configuration, "ontology has no acts");
        ensure!(!slots.is_empty(), Configuration, "ontology has no slots");
        ensure!(state_dim > 0, Configuration, "state_dim must be positive");
        for (kind, names) in [("domain", &domains), ("act", &acts), ("slot", &slots)] {
            let unique: BTreeSet<&String> = names.iter().collect();
            ensure!(
                unique.len() == names.len(),
                Configuration,
                "duplicate {kind} name"
            );
        }
        let mut set = BTreeSet::new();
        for t in valid_triples {
            ensure!(
                t.domain < domains.len() && t.act < acts.len() && t.slot < slots.len(),
                Configuration,
                "triple {t:?} out of bounds"
            );
            ensure!(set.insert(t), Configuration, "duplicate triple {t:?}");
        }
        ensure!(
            !set.is_empty(),
            Configuration,
            "ontology has no valid triples"
        );
        let role_index = resolve_roles(&roles, &acts, &slots, &set)?;
        Ok(Self {
            domains,
            acts,
            slots,
            state_dim,
            valid_triples: set,
            roles,
            role_index,
        })
    }

    /// Desk-scale default: 3 domains, 4 acts, 6 slots, 48 valid triples.
    pub fn desk_default() -> Self {
        Self::from_toml_str(DESK_ONTOLOGY).expect("built-in ontology is valid")
    }

    /// 1 domain, 2 acts, 2 slots. Used for pipeline smoke runs.
    pub fn micro() -> Self {
        Self::from_toml_str(MICRO_ONTOLOGY).expect("built-in ontology is valid")
    }

    pub fn action_dim(&self) -> usize {
        self.valid_triples.len()
    }

    pub fn level_size(&self, level: Level) -> usize {
        match level {
            Level::Domain => self.domains.len(),
            Level::Act => self.acts.len(),
            Level::Slot => self.slots.len(),
        }
    }

    pub fn valid_triples(&self) -> impl Iterator<Item = &Triple> {
        self.valid_triples.iter()
    }

    pub fn is_valid(&self, t: &Triple) -> bool {
        self.valid_triples.contains(t)
    }

    pub fn roles(&self) -> &Roles {
        &self.roles
    }

    pub fn role_index(&self) -> &RoleIndex {
        &self.role_index
    }

    pub fn triple_name(&self, t: &Triple) -> String {
        format!(
            "{}-{}-{}",
            self.domains[t.domain], self.acts[t.act], self.slots[t.slot]
        )
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: OntologyFile =
            toml::from_str(text).map_err(|e| Error::Configuration(format!("ontology: {e}")))?;
        Self::from_file(file)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&self.to_file()).expect("ontology serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }

    /// Content hash over the canonical serialization; used to link artifacts
    /// to the ontology they were built for.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(&self.to_file()).expect("ontology serializes");
        hex::encode(Sha256::digest(canonical))
    }

    fn from_file(file: OntologyFile) -> Result<Self> {
        let lookup = |names: &[String], name: &str, kind: &str| {
            names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::Configuration(format!("unknown {kind} `{name}`")))
        };
        let mut triples = Vec::with_capacity(file.valid_triples.len());
        for [d, a, s] in &file.valid_triples {
            triples.push(Triple::new(
                lookup(&file.domains, d, "domain")?,
                lookup(&file.acts, a, "act")?,
                lookup(&file.slots, s, "slot")?,
            ));
        }
        Self::new(
            file.domains,
            file.acts,
            file.slots,
            triples,
            file.state_dim,
            file.roles,
        )
    }

    fn to_file(&self) -> OntologyFile {
        OntologyFile {
            domains: self.domains.clone(),
            acts: self.acts.clone(),
            slots: self.slots.clone(),
            state_dim: self.state_dim,
            valid_triples: self
                .valid_triples
                .iter()
                .map(|t| {
                    [
                        self.domains[t.domain].clone(),
                        self.acts[t.act].clone(),
                        self.slots[t.slot].clone(),
                    ]
                })
                .collect(),
            roles: self.roles.clone(),
        }
    }
}

fn resolve_roles(
    roles: &Roles,
    acts: &[String],
    slots: &[String],
    triples: &BTreeSet<Triple>,
) -> Result<RoleIndex> {
    let act = |name: &str| {
        acts.iter()
            .position(|a| a == name)
            .ok_or_else(|| Error::Configuration(format!("role refers to unknown act `{name}`")))
    };
    let slot = |name: &str| {
        slots
            .iter()
            .position(|s| s == name)
            .ok_or_else(|| Error::Configuration(format!("role refers to unknown slot `{name}`")))
    };
    let paired = |act_name: &Option<String>, slot_name: &Option<String>, what: &str| match (
        act_name, slot_name,
    ) {
        (None, None) => Ok(None),
        (Some(a), Some(s)) => Ok(Some((act(a)?, slot(s)?))),
        _ => Err(Error::Configuration(format!(
            "role `{what}` needs both an act and a slot"
        ))),
    };
    let index = RoleIndex {
        inform: act(&roles.inform)?,
        request: roles.request.as_deref().map(act).transpose()?,
        recommend: paired(&roles.recommend, &roles.recommend_slot, "recommend")?,
        book: paired(&roles.book, &roles.book_slot, "book")?,
        constraint_slots: roles
            .constraint_slots
            .iter()
            .map(|s| slot(s))
            .collect::<Result<_>>()?,
        request_slots: roles
            .request_slots
            .iter()
            .map(|s| slot(s))
            .collect::<Result<_>>()?,
    };
    ensure!(
        !index.constraint_slots.is_empty() && !index.request_slots.is_empty(),
        Configuration,
        "roles need at least one constraint slot and one request slot"
    );
    // Every action the task requires must be representable in every domain.
    let n_domains = triples.iter().map(|t| t.domain).max().unwrap_or(0) + 1;
    for d in 0..n_domains {
        let mut needed: Vec<(usize, usize)> = index
            .request_slots
            .iter()
            .map(|&s| (index.inform, s))
            .collect();
        if let Some(req) = index.request {
            needed.extend(index.constraint_slots.iter().map(|&s| (req, s)));
        }
        needed.extend(index.recommend);
        needed.extend(index.book);
        for (a, s) in needed {
            ensure!(
                triples.contains(&Triple::new(d, a, s)),
                Configuration,
                "task needs action ({d}, {a}, {s}) which is not a valid triple"
            );
        }
    }
    Ok(index)
}

/// A system action: one index into the valid-triple list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DialogAction(pub usize);

impl DialogAction {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One-hot vector stored by its active position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct OneHot {
    pub index: usize,
    pub len: usize,
}

impl OneHot {
    pub fn to_vec(self) -> Vec<f64> {
        let mut v = vec![0.0; self.len];
        v[self.index] = 1.0;
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SubActions {
    pub domain: OneHot,
    pub act: OneHot,
    pub slot: OneHot,
}

impl SubActions {
    pub fn get(&self, level: Level) -> OneHot {
        match level {
            Level::Domain => self.domain,
            Level::Act => self.act,
            Level::Slot => self.slot,
        }
    }

    pub fn triple(&self) -> Triple {
        Triple::new(self.domain.index, self.act.index, self.slot.index)
    }
}

/// Total map from action index to its triple, in lexicographic order.
#[derive(Clone, Debug, PartialEq)]
pub struct AssignmentMatrix {
    rows: Vec<Triple>,
    sizes: [usize; 3],
    lookup: HashMap<Triple, usize>,
}

pub fn build_assignment_matrix(ontology: &Ontology) -> AssignmentMatrix {
    // BTreeSet iteration is already lexicographic on (domain, act, slot).
    let rows: Vec<Triple> = ontology.valid_triples().copied().collect();
    let lookup = rows.iter().enumerate().map(|(i, t)| (*t, i)).collect();
    AssignmentMatrix {
        rows,
        sizes: [
            ontology.domains.len(),
            ontology.acts.len(),
            ontology.slots.len(),
        ],
        lookup,
    }
}

impl AssignmentMatrix {
    pub fn rows(&self) -> &[Triple] {
        &self.rows
    }

    pub fn action_dim(&self) -> usize {
        self.rows.len()
    }

    pub fn level_size(&self, level: Level) -> usize {
        self.sizes[level.index()]
    }

    pub fn triple(&self, action: DialogAction) -> Result<Triple> {
        self.rows.get(action.0).copied().ok_or_else(|| {
            Error::RejectedInput(format!(
                "action index {} outside [0, {})",
                action.0,
                self.rows.len()
            ))
        })
    }

    pub fn index_of(&self, t: &Triple) -> Option<DialogAction> {
        self.lookup.get(t).copied().map(DialogAction)
    }

    /// `action_dim × level_size` 0/1 matrix; `one_hot(action) · M` is the
    /// sub-action at `level`.
    pub fn level_matrix(&self, level: Level) -> Array2<f64> {
        let mut m = Array2::zeros((self.rows.len(), self.level_size(level)));
        for (i, t) in self.rows.iter().enumerate() {
            m[[i, t.get(level)]] = 1.0;
        }
        m
    }
}

pub fn decompose_action(action: DialogAction, m: &AssignmentMatrix) -> Result<SubActions> {
    let t = m.triple(action)?;
    Ok(SubActions {
        domain: OneHot {
            index: t.domain,
            len: m.sizes[0],
        },
        act: OneHot {
            index: t.act,
            len: m.sizes[1],
        },
        slot: OneHot {
            index: t.slot,
            len: m.sizes[2],
        },
    })
}

pub fn compose_action(sub: &SubActions, m: &AssignmentMatrix) -> Result<DialogAction> {
    let t = sub.triple();
    m.index_of(&t)
        .ok_or_else(|| Error::RejectedInput(format!("triple {t:?} is not a valid action")))
}

pub const DESK_ONTOLOGY: &str = include_str!("../configs/desk_ontology.toml");
pub const MICRO_ONTOLOGY: &str = include_str!("../configs/micro_ontology.toml");

#[cfg(test)]
mod tests {
    use super::*;

    fn roles(constraint: &str, request: &str) -> Roles {
        Roles {
            inform: "inform".into(),
            request: None,
            recommend: None,
            recommend_slot: None,
            book: None,
            book_slot: None,
            constraint_slots: vec![constraint.into()],
            request_slots: vec![request.into()],
        }
    }

    fn two_by_two() -> Ontology {
        let triples =
            [(0, 0, 0), (0, 1, 0), (1, 0, 0), (1, 1, 0)].map(|(d, a, s)| Triple::new(d, a, s));
        Ontology::new(
            vec!["x".into(), "y".into()],
            vec!["inform".into(), "request".into()],
            vec!["area".into()],
            triples,
            8,
            roles("area", "area"),
        )
        .unwrap()
    }

    #[test]
    fn lexicographic_rows() {
        let m = build_assignment_matrix(&two_by_two());
        let rows: Vec<_> = m.rows().iter().map(|t| (t.domain, t.act, t.slot)).collect();
        assert_eq!(rows, vec![(0, 0, 0), (0, 1, 0), (1, 0, 0), (1, 1, 0)]);
    }

    #[test]
    fn singleton_ontology() {
        let o = Ontology::new(
            vec!["x".into()],
            vec!["inform".into()],
            vec!["area".into()],
            [Triple::new(0, 0, 0)],
            4,
            roles("area", "area"),
        )
        .unwrap();
        let m = build_assignment_matrix(&o);
        assert_eq!(m.rows(), &[Triple::new(0, 0, 0)]);
    }

    #[test]
    fn decompose_reads_row() {
        let m = build_assignment_matrix(&two_by_two());
        let sub = decompose_action(DialogAction(3), &m).unwrap();
        assert_eq!(sub.domain.to_vec(), vec![0.0, 1.0]);
        assert_eq!(sub.act.to_vec(), vec![0.0, 1.0]);
        assert_eq!(sub.slot.to_vec(), vec![1.0]);
        assert_eq!(compose_action(&sub, &m).unwrap(), DialogAction(3));
        let first = decompose_action(DialogAction(0), &m).unwrap();
        assert_eq!(first.triple(), Triple::new(0, 0, 0));
        assert_eq!(compose_action(&first, &m).unwrap(), DialogAction(0));
    }

    #[test]
    fn out_of_range_and_invalid_are_rejected() {
        let o = Ontology::desk_default();
        let m = build_assignment_matrix(&o);
        assert!(matches!(
            decompose_action(DialogAction(48), &m),
            Err(Error::RejectedInput(_))
        ));
        // (restaurant, book, area) is not a valid triple in the desk ontology.
        let bad = SubActions {
            domain: OneHot { index: 0, len: 3 },
            act: OneHot { index: 3, len: 4 },
            slot: OneHot { index: 0, len: 6 },
        };
        assert!(matches!(
            compose_action(&bad, &m),
            Err(Error::RejectedInput(_))
        ));
    }

    #[test]
    fn desk_default_is_bijective() {
        let o = Ontology::desk_default();
        assert_eq!(
            (o.domains.len(), o.acts.len(), o.slots.len(), o.action_dim()),
            (3, 4, 6, 48)
        );
        let m = build_assignment_matrix(&o);
        // brute force over the full product space
        let mut seen = BTreeSet::new();
        for d in 0..3 {
            for a in 0..4 {
                for s in 0..6 {
                    let t = Triple::new(d, a, s);
                    if o.is_valid(&t) {
                        let idx = m.index_of(&t).unwrap();
                        assert_eq!(m.triple(idx).unwrap(), t);
                        seen.insert(idx);
                    } else {
                        assert!(m.index_of(&t).is_none());
                    }
                }
            }
        }
        assert_eq!(seen.len(), 48);
        for i in 0..48 {
            let sub = decompose_action(DialogAction(i), &m).unwrap();
            assert_eq!(compose_action(&sub, &m).unwrap(), DialogAction(i));
        }
    }

    #[test]
    fn toml_round_trip_preserves_matrix() {
        for o in [Ontology::desk_default(), Ontology::micro()] {
            let back = Ontology::from_toml_str(&o.to_toml_string()).unwrap();
            assert_eq!(back, o);
            assert_eq!(back.hash(), o.hash());
            assert_eq!(build_assignment_matrix(&back), build_assignment_matrix(&o));
        }
    }

    #[test]
    fn level_matrix_projects_one_hots() {
        let o = Ontology::desk_default();
        let m = build_assignment_matrix(&o);
        for level in Level::ALL {
            let lm = m.level_matrix(level);
            for i in 0..m.action_dim() {
                let sub = decompose_action(DialogAction(i), &m).unwrap();
                let row: Vec<f64> = lm.row(i).to_vec();
                assert_eq!(row, sub.get(level).to_vec());
            }
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let bad_bounds = Ontology::new(
            vec!["x".into()],
            vec!["inform".into()],
            vec!["area".into()],
            [Triple::new(0, 1, 0)],
            4,
            roles("area", "area"),
        );
        assert!(matches!(bad_bounds, Err(Error::Configuration(_))));
        let empty = Ontology::new(
            vec!["x".into()],
            vec!["inform".into()],
            vec!["area".into()],
            [],
            4,
            roles("area", "area"),
        );
        assert!(matches!(empty, Err(Error::Configuration(_))));
    }
}
