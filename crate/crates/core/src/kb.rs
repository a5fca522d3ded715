//! Affordance knowledge graph.
//!
//! Three relations carry the knowledge:
//!
//! * an **effect** binds an object to a property (`door` / `accessibility`) or
//!   to a verb outcome (`person holds cup`),
//! * an **affordance** binds an action chain to one or more effects, jointly or
//!   as alternatives, each with a probability,
//! * an **action** names a verb and the direct object it acts on, optionally
//!   with an indirect object and an acting agent.
//!
//! The graph is plain data: built once, then shared read-only.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::{DetectionError, LabelSet};

/// Slack on the total mass of alternative effects.
const MASS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntityKind {
    Object,
    Property,
    Agent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub name: String,
    pub kind: EntityKind,
}

impl Entity {
    pub fn new(id: impl Into<String>, name: impl Into<String>, kind: EntityKind) -> Self {
        Self {
            id: id.into(),
            name: name.into(),
            kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EffectRelation {
    pub id: String,
    pub object: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub property: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verb: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSpec {
    pub verb: String,
    pub direct_object: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indirect_object: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<String>,
}

impl ActionSpec {
    pub fn new(verb: impl Into<String>, direct_object: impl Into<String>) -> Self {
        Self {
            verb: verb.into(),
            direct_object: direct_object.into(),
            indirect_object: None,
            agent: None,
        }
    }
}

/// Ordered steps; a single-step chain is the same thing as a bare action.
///
/// Deserializes from either `{"steps": [...]}` or a bare action object.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "ChainRepr")]
pub struct ActionChain {
    pub steps: Vec<ActionSpec>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ChainRepr {
    Chain { steps: Vec<ActionSpec> },
    Single(ActionSpec),
}

impl From<ChainRepr> for ActionChain {
    fn from(r: ChainRepr) -> Self {
        match r {
            ChainRepr::Chain { steps } => Self { steps },
            ChainRepr::Single(step) => Self { steps: alloc::vec![step] },
        }
    }
}

impl From<ActionSpec> for ActionChain {
    fn from(step: ActionSpec) -> Self {
        Self { steps: alloc::vec![step] }
    }
}

impl ActionChain {
    pub fn new(steps: Vec<ActionSpec>) -> Self {
        Self { steps }
    }

    /// Direct object of the final step.
    pub fn target(&self) -> Option<&str> {
        self.steps.last().map(|s| s.direct_object.as_str())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectMode {
    /// All listed effects happen together.
    #[default]
    Joint,
    /// Exactly one of the listed effects happens.
    Alternative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectLink {
    pub effect: String,
    #[serde(default = "certain")]
    pub probability: f64,
}

fn certain() -> f64 {
    1.0
}

impl EffectLink {
    pub fn new(effect: impl Into<String>, probability: f64) -> Self {
        Self {
            effect: effect.into(),
            probability,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffordanceRelation {
    pub id: String,
    pub action: ActionChain,
    pub effects: Vec<EffectLink>,
    #[serde(default)]
    pub effect_mode: EffectMode,
}

/// An invariant broken somewhere in a graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "violation")]
pub enum Violation {
    EmptyName { entity: String },
    DanglingReference { owner: String, reference: String },
    WrongEntityKind { owner: String, reference: String, expected: EntityKind },
    MissingOutcome { effect: String },
    EmptyChain { affordance: String },
    EmptyVerb { affordance: String, step: usize },
    EmptyEffects { affordance: String },
    InvalidProbability { affordance: String, effect: String, probability: f64 },
    ProbabilityMassExceeded { affordance: String, total: f64 },
}

impl core::fmt::Display for Violation {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::EmptyName { entity } => write!(f, "entity {entity} has an empty name"),
            Self::DanglingReference { owner, reference } => write!(f, "{owner} references missing {reference}"),
            Self::WrongEntityKind { owner, reference, expected } => {
                write!(f, "{owner} references {reference}, which is not of kind {expected:?}")
            }
            Self::MissingOutcome { effect } => write!(f, "effect {effect} has neither property nor verb"),
            Self::EmptyChain { affordance } => write!(f, "affordance {affordance} has no action steps"),
            Self::EmptyVerb { affordance, step } => write!(f, "affordance {affordance} step {step} has an empty verb"),
            Self::EmptyEffects { affordance } => write!(f, "affordance {affordance} has no effects"),
            Self::InvalidProbability { affordance, effect, probability } => {
                write!(f, "affordance {affordance}: probability {probability} of {effect} outside [0, 1]")
            }
            Self::ProbabilityMassExceeded { affordance, total } => {
                write!(f, "affordance {affordance}: alternative effects sum to {total} > 1")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KbError {
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("{owner} references missing {reference}")]
    DanglingReference { owner: String, reference: String },
    #[error("{0}")]
    InvalidProbability(Violation),
    #[error("{0}")]
    Invalid(Violation),
    #[error("unknown entity {0}")]
    UnknownEntity(String),
    #[error("entity name cannot be used as a label: {0}")]
    Label(#[from] DetectionError),
}

impl From<Violation> for KbError {
    fn from(v: Violation) -> Self {
        match v {
            Violation::DanglingReference { owner, reference } => Self::DanglingReference { owner, reference },
            v @ (Violation::InvalidProbability { .. } | Violation::ProbabilityMassExceeded { .. }) => {
                Self::InvalidProbability(v)
            }
            other => Self::Invalid(other),
        }
    }
}

/// One way to achieve a queried effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionMatch {
    pub affordance_id: String,
    pub chain: ActionChain,
    /// Entity id the final step acts on.
    pub direct_object: String,
    pub probability: f64,
}

/// A goal: make `object` have property or verb outcome `outcome`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EffectQuery {
    pub object: String,
    pub outcome: String,
}

impl EffectQuery {
    pub fn new(object: impl Into<String>, outcome: impl Into<String>) -> Self {
        Self {
            object: object.into(),
            outcome: outcome.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GraphDocument", into = "GraphDocument")]
pub struct AffordanceGraph {
    entities: BTreeMap<String, Entity>,
    effects: BTreeMap<String, EffectRelation>,
    affordances: BTreeMap<String, AffordanceRelation>,
}

/// On-disk shape: three arrays.
#[derive(Serialize, Deserialize)]
struct GraphDocument {
    #[serde(default)]
    entities: Vec<Entity>,
    #[serde(default)]
    effects: Vec<EffectRelation>,
    #[serde(default)]
    affordances: Vec<AffordanceRelation>,
}

impl TryFrom<GraphDocument> for AffordanceGraph {
    type Error = KbError;

    /// Only rejects duplicate ids; integrity is left to [`AffordanceGraph::validate`].
    fn try_from(doc: GraphDocument) -> Result<Self, Self::Error> {
        let mut g = Self::default();
        for e in doc.entities {
            insert_unique(&mut g.entities, e.id.clone(), e)?;
        }
        for e in doc.effects {
            insert_unique(&mut g.effects, e.id.clone(), e)?;
        }
        for a in doc.affordances {
            insert_unique(&mut g.affordances, a.id.clone(), a)?;
        }
        Ok(g)
    }
}

impl From<AffordanceGraph> for GraphDocument {
    fn from(g: AffordanceGraph) -> Self {
        Self {
            entities: g.entities.into_values().collect(),
            effects: g.effects.into_values().collect(),
            affordances: g.affordances.into_values().collect(),
        }
    }
}

fn insert_unique<T>(map: &mut BTreeMap<String, T>, id: String, value: T) -> Result<(), KbError> {
    if map.contains_key(&id) {
        return Err(KbError::DuplicateId(id));
    }
    map.insert(id, value);
    Ok(())
}

impl AffordanceGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.entities.get(id)
    }

    pub fn effect(&self, id: &str) -> Option<&EffectRelation> {
        self.effects.get(id)
    }

    pub fn affordance(&self, id: &str) -> Option<&AffordanceRelation> {
        self.affordances.get(id)
    }

    pub fn entities(&self) -> impl Iterator<Item = &Entity> {
        self.entities.values()
    }

    pub fn effects(&self) -> impl Iterator<Item = &EffectRelation> {
        self.effects.values()
    }

    pub fn affordances(&self) -> impl Iterator<Item = &AffordanceRelation> {
        self.affordances.values()
    }

    fn id_taken(&self, id: &str) -> bool {
        self.entities.contains_key(id) || self.effects.contains_key(id) || self.affordances.contains_key(id)
    }

    pub fn add_entity(&mut self, entity: Entity) -> Result<(), KbError> {
        if self.id_taken(&entity.id) {
            return Err(KbError::DuplicateId(entity.id));
        }
        if entity.name.is_empty() {
            return Err(Violation::EmptyName { entity: entity.id }.into());
        }
        self.entities.insert(entity.id.clone(), entity);
        Ok(())
    }

    pub fn add_effect(&mut self, effect: EffectRelation) -> Result<(), KbError> {
        if self.id_taken(&effect.id) {
            return Err(KbError::DuplicateId(effect.id));
        }
        let mut found = Vec::new();
        self.check_effect(&effect, &mut found);
        if let Some(v) = found.into_iter().next() {
            return Err(v.into());
        }
        self.effects.insert(effect.id.clone(), effect);
        Ok(())
    }

    pub fn add_affordance(&mut self, affordance: AffordanceRelation) -> Result<(), KbError> {
        if self.id_taken(&affordance.id) {
            return Err(KbError::DuplicateId(affordance.id));
        }
        let mut found = Vec::new();
        self.check_affordance(&affordance, &mut found);
        if let Some(v) = found.into_iter().next() {
            return Err(v.into());
        }
        self.affordances.insert(affordance.id.clone(), affordance);
        Ok(())
    }

    fn check_ref(&self, owner: &str, reference: &str, expected: Option<EntityKind>, out: &mut Vec<Violation>) {
        match self.entities.get(reference) {
            None => out.push(Violation::DanglingReference {
                owner: owner.to_string(),
                reference: reference.to_string(),
            }),
            Some(e) => {
                if let Some(kind) = expected {
                    if e.kind != kind {
                        out.push(Violation::WrongEntityKind {
                            owner: owner.to_string(),
                            reference: reference.to_string(),
                            expected: kind,
                        });
                    }
                }
            }
        }
    }

    fn check_effect(&self, effect: &EffectRelation, out: &mut Vec<Violation>) {
        self.check_ref(&effect.id, &effect.object, Some(EntityKind::Object), out);
        if let Some(p) = &effect.property {
            self.check_ref(&effect.id, p, Some(EntityKind::Property), out);
        }
        if let Some(a) = &effect.agent {
            self.check_ref(&effect.id, a, Some(EntityKind::Agent), out);
        }
        let has_verb = effect.verb.as_deref().is_some_and(|v| !v.is_empty());
        if effect.property.is_none() && !has_verb {
            out.push(Violation::MissingOutcome {
                effect: effect.id.clone(),
            });
        }
    }

    fn check_affordance(&self, a: &AffordanceRelation, out: &mut Vec<Violation>) {
        if a.action.steps.is_empty() {
            out.push(Violation::EmptyChain {
                affordance: a.id.clone(),
            });
        }
        for (k, step) in a.action.steps.iter().enumerate() {
            if step.verb.trim().is_empty() {
                out.push(Violation::EmptyVerb {
                    affordance: a.id.clone(),
                    step: k,
                });
            }
            self.check_ref(&a.id, &step.direct_object, None, out);
            if let Some(io) = &step.indirect_object {
                self.check_ref(&a.id, io, None, out);
            }
            if let Some(agent) = &step.agent {
                self.check_ref(&a.id, agent, Some(EntityKind::Agent), out);
            }
        }
        if a.effects.is_empty() {
            out.push(Violation::EmptyEffects {
                affordance: a.id.clone(),
            });
        }
        for link in &a.effects {
            if !self.effects.contains_key(&link.effect) {
                out.push(Violation::DanglingReference {
                    owner: a.id.clone(),
                    reference: link.effect.clone(),
                });
            }
            if !(0.0..=1.0).contains(&link.probability) {
                out.push(Violation::InvalidProbability {
                    affordance: a.id.clone(),
                    effect: link.effect.clone(),
                    probability: link.probability,
                });
            }
        }
        if a.effect_mode == EffectMode::Alternative {
            let total: f64 = a.effects.iter().map(|l| l.probability).sum();
            if total > 1.0 + MASS_TOLERANCE {
                out.push(Violation::ProbabilityMassExceeded {
                    affordance: a.id.clone(),
                    total,
                });
            }
        }
    }

    /// Every broken invariant; empty means the graph is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for e in self.entities.values() {
            if e.name.is_empty() {
                out.push(Violation::EmptyName { entity: e.id.clone() });
            }
        }
        for e in self.effects.values() {
            self.check_effect(e, &mut out);
        }
        for a in self.affordances.values() {
            self.check_affordance(a, &mut out);
        }
        out
    }

    /// Resolves an entity by id, falling back to a case-insensitive name match.
    fn resolve(&self, key: &str) -> Result<&Entity, KbError> {
        if let Some(e) = self.entities.get(key) {
            return Ok(e);
        }
        self.entities
            .values()
            .find(|e| e.name.eq_ignore_ascii_case(key) || e.name.to_lowercase() == key.to_lowercase())
            .ok_or_else(|| KbError::UnknownEntity(key.to_string()))
    }

    fn effect_matches(&self, effect: &EffectRelation, object: &str, outcome: &str) -> bool {
        if effect.object != object {
            return false;
        }
        let same = |a: &str| a.to_lowercase() == outcome.to_lowercase();
        let by_property = effect.property.as_deref().is_some_and(|p| {
            same(p) || self.entities.get(p).is_some_and(|e| same(&e.name))
        });
        by_property || effect.verb.as_deref().is_some_and(same)
    }

    /// Affordances producing `outcome` (a property or verb) on `object`,
    /// most probable first, ties by affordance id. Any member of a joint or
    /// alternative effect list counts as a match.
    pub fn query_actions_for_effect(&self, object: &str, outcome: &str) -> Result<Vec<ActionMatch>, KbError> {
        let object = &self.resolve(object)?.id;
        let mut out: Vec<ActionMatch> = self
            .affordances
            .values()
            .filter_map(|a| {
                let probability = a
                    .effects
                    .iter()
                    .filter(|l| {
                        self.effects
                            .get(&l.effect)
                            .is_some_and(|e| self.effect_matches(e, object, outcome))
                    })
                    .map(|l| l.probability)
                    .fold(None, |m: Option<f64>, p| Some(m.map_or(p, |m| m.max(p))))?;
                Some(ActionMatch {
                    affordance_id: a.id.clone(),
                    chain: a.action.clone(),
                    direct_object: a.action.target()?.to_string(),
                    probability,
                })
            })
            .collect();
        out.sort_by(|a, b| {
            b.probability
                .total_cmp(&a.probability)
                .then_with(|| a.affordance_id.cmp(&b.affordance_id))
        });
        Ok(out)
    }

    /// Object names to prompt the detector with for a goal: the direct
    /// objects of every matching action chain plus the goal object, sorted.
    pub fn label_set_for_goal(&self, query: &EffectQuery) -> Result<LabelSet, KbError> {
        let goal = self.resolve(&query.object)?;
        let mut names = alloc::vec![goal.name.clone()];
        for m in self.query_actions_for_effect(&goal.id, &query.outcome)? {
            for step in &m.chain.steps {
                let e = self.resolve(&step.direct_object)?;
                names.push(e.name.clone());
            }
        }
        names.sort();
        Ok(LabelSet::deduplicated(names)?)
    }

    /// Affordances whose chain ends on an object with this name
    /// (case-insensitive), in affordance-id order.
    pub fn actions_on(&self, object_name: &str) -> Vec<ActionMatch> {
        let wanted = object_name.to_lowercase();
        self.affordances
            .values()
            .filter_map(|a| {
                let target = a.action.target()?;
                let entity = self.entities.get(target)?;
                (entity.name.to_lowercase() == wanted).then(|| ActionMatch {
                    affordance_id: a.id.clone(),
                    chain: a.action.clone(),
                    direct_object: target.to_string(),
                    probability: a.effects.iter().map(|l| l.probability).fold(0.0, f64::max),
                })
            })
            .collect()
    }
}

/// Hand-authored graphs used in tests, examples and the CLI demo.
pub mod fixtures {
    use super::*;
    use alloc::vec;

    fn door_base(g: &mut AffordanceGraph) {
        g.add_entity(Entity::new("door", "door", EntityKind::Object)).unwrap();
        g.add_entity(Entity::new("accessibility", "accessibility", EntityKind::Property)).unwrap();
        g.add_effect(EffectRelation {
            id: "door-accessible".into(),
            object: "door".into(),
            property: Some("accessibility".into()),
            verb: None,
            agent: None,
        })
        .unwrap();
    }

    /// Pushing down a handle makes a door accessible.
    pub fn push_down_handle() -> AffordanceGraph {
        let mut g = AffordanceGraph::new();
        door_base(&mut g);
        g.add_entity(Entity::new("handle", "handle", EntityKind::Object)).unwrap();
        g.add_affordance(AffordanceRelation {
            id: "push-down-handle".into(),
            action: ActionSpec::new("push down", "handle").into(),
            effects: vec![EffectLink::new("door-accessible", 1.0)],
            effect_mode: EffectMode::Joint,
        })
        .unwrap();
        g
    }

    /// The robot SPOT gives a cup to a person, who then holds it.
    pub fn give_cup() -> AffordanceGraph {
        let mut g = AffordanceGraph::new();
        g.add_entity(Entity::new("cup", "cup", EntityKind::Object)).unwrap();
        g.add_entity(Entity::new("person", "person", EntityKind::Agent)).unwrap();
        g.add_entity(Entity::new("spot", "SPOT", EntityKind::Agent)).unwrap();
        g.add_effect(EffectRelation {
            id: "person-holds-cup".into(),
            object: "cup".into(),
            property: None,
            verb: Some("holds".into()),
            agent: Some("person".into()),
        })
        .unwrap();
        g.add_affordance(AffordanceRelation {
            id: "give-cup".into(),
            action: ActionSpec {
                verb: "give".into(),
                direct_object: "cup".into(),
                indirect_object: Some("person".into()),
                agent: Some("spot".into()),
            }
            .into(),
            effects: vec![EffectLink::new("person-holds-cup", 1.0)],
            effect_mode: EffectMode::Joint,
        })
        .unwrap();
        g
    }

    /// Four ways to open a door: handle, knob, push bar, button.
    pub fn door_openers() -> AffordanceGraph {
        let mut g = AffordanceGraph::new();
        door_base(&mut g);
        for (id, name) in [("handle", "handle"), ("knob", "knob"), ("push-bar", "push bar"), ("button", "button")] {
            g.add_entity(Entity::new(id, name, EntityKind::Object)).unwrap();
        }
        let chain = |steps: &[(&str, &str)]| ActionChain::new(steps.iter().map(|(v, o)| ActionSpec::new(*v, *o)).collect());
        let openers = [
            ("open-by-handle", chain(&[("grasp", "handle"), ("push", "handle")]), 0.95),
            ("open-by-knob", chain(&[("grasp", "knob"), ("twist", "knob")]), 0.9),
            ("open-by-push-bar", chain(&[("push", "push-bar")]), 0.95),
            ("open-by-button", chain(&[("press", "button")]), 0.8),
        ];
        for (id, action, p) in openers {
            g.add_affordance(AffordanceRelation {
                id: id.into(),
                action,
                effects: vec![EffectLink::new("door-accessible", p)],
                effect_mode: EffectMode::Joint,
            })
            .unwrap();
        }
        g
    }
}
