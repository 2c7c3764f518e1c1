//! Seeded synthetic task-oriented dialogue generator.
//!
//! Dialogues are assembled from a [`TemplateBank`]. Each dialogue picks one
//! domain (two with `domain_switch_prob`), schedules inform / don't-care /
//! agent-offer / revision events over its user turns and accumulates the gold
//! state turn by turn. Non-categorical values are always copied verbatim into
//! a user utterance or the agent turn that offered them, so every gold span is
//! recoverable from the context.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BeliefState, Corpus, Dialogue, Split, Turn};
use crate::error::{DstError, Result};
use crate::rng::{self, StreamRng};
use crate::schema::{load_schema, Schema, SlotDecl, SlotId, SlotKind};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DomainTemplates {
    /// User sentences that open the domain.
    #[serde(default)]
    pub open: Vec<String>,
    /// Agent questions about the domain.
    #[serde(default)]
    pub request: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SlotTemplates {
    /// User sentences with a `{value}` placeholder.
    #[serde(default)]
    pub inform: Vec<String>,
    #[serde(default)]
    pub dontcare: Vec<String>,
    #[serde(default)]
    pub revise: Vec<String>,
    /// Agent sentences offering a `{value}` the user may accept.
    #[serde(default)]
    pub offer: Vec<String>,
    /// Value pool for non-categorical slots.
    #[serde(default)]
    pub values: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TemplateBank {
    #[serde(default)]
    pub domains: BTreeMap<String, DomainTemplates>,
    #[serde(default)]
    pub slots: BTreeMap<String, SlotTemplates>,
    #[serde(default)]
    pub user_chitchat: Vec<String>,
    #[serde(default)]
    pub agent_chitchat: Vec<String>,
    /// User acceptances of an agent offer.
    #[serde(default)]
    pub accept: Vec<String>,
    /// Agent sentences mentioning an unrelated `{value}`.
    #[serde(default)]
    pub agent_mention: Vec<String>,
}

impl TemplateBank {
    pub fn is_empty(&self) -> bool {
        self.slots.values().all(|s| s.inform.is_empty())
    }
}

fn default_splits() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}

/// Generator configuration; serialized as a JSON sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_dialogues: usize,
    pub min_user_turns: usize,
    pub max_user_turns: usize,
    pub domain_switch_prob: f64,
    pub chitchat_prob: f64,
    #[serde(default)]
    pub dontcare_prob: f64,
    #[serde(default)]
    pub revision_prob: f64,
    #[serde(default)]
    pub offer_prob: f64,
    #[serde(default = "default_max_slots")]
    pub max_slots_per_domain: usize,
    /// train/dev/test fractions used by [`split_corpus`].
    #[serde(default = "default_splits")]
    pub split_fractions: [f64; 3],
    /// Schema file; the built-in synthetic schema when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema_path: Option<PathBuf>,
    /// Template bank; the built-in bank when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub templates: Option<TemplateBank>,
}

fn default_max_slots() -> usize {
    3
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_dialogues: 2000,
            min_user_turns: 1,
            max_user_turns: 7,
            domain_switch_prob: 0.4,
            chitchat_prob: 0.3,
            dontcare_prob: 0.08,
            revision_prob: 0.1,
            offer_prob: 0.25,
            max_slots_per_domain: 3,
            split_fractions: default_splits(),
            schema_path: None,
            templates: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(DstError::Config(format!("{name} must be in [0,1], got {p}")))
            }
        };
        prob("domain_switch_prob", self.domain_switch_prob)?;
        prob("chitchat_prob", self.chitchat_prob)?;
        prob("dontcare_prob", self.dontcare_prob)?;
        prob("revision_prob", self.revision_prob)?;
        prob("offer_prob", self.offer_prob)?;
        if self.min_user_turns == 0 || self.min_user_turns > self.max_user_turns {
            return Err(DstError::Config(format!(
                "need 1 <= min_user_turns <= max_user_turns, got {}..{}",
                self.min_user_turns, self.max_user_turns
            )));
        }
        if self.max_slots_per_domain == 0 {
            return Err(DstError::Config("max_slots_per_domain must be >= 1".into()));
        }
        if self.split_fractions.iter().any(|f| *f < 0.0)
            || (self.split_fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(DstError::Config("split_fractions must be >= 0 and sum to 1".into()));
        }
        Ok(())
    }

    pub fn schema(&self) -> Result<Arc<Schema>> {
        match &self.schema_path {
            Some(p) => Ok(Arc::new(load_schema(p)?)),
            None => Ok(Arc::new(builtin_schema())),
        }
    }

    pub fn template_bank(&self) -> TemplateBank {
        self.templates.clone().unwrap_or_else(builtin_templates)
    }
}

#[derive(Clone, Debug)]
enum EventKind {
    Inform(String),
    Dontcare,
    Offer(String),
    Revise(String),
}

#[derive(Clone, Debug)]
struct Event {
    slot: SlotId,
    kind: EventKind,
    turn: usize,
}

struct Generator<'a> {
    schema: &'a Schema,
    bank: &'a TemplateBank,
    cfg: &'a SynthConfig,
    usable: Vec<Vec<SlotId>>,
    mentionable: Vec<SlotId>,
}

fn pick<'s>(rng: &mut StreamRng, items: &'s [String]) -> &'s str {
    items.choose(rng).map(String::as_str).unwrap_or("")
}

fn fill(template: &str, value: &str) -> String {
    template.replace("{value}", value)
}

impl<'a> Generator<'a> {
    fn new(schema: &'a Schema, bank: &'a TemplateBank, cfg: &'a SynthConfig) -> Result<Self> {
        if schema.num_slots() == 0 {
            return Err(DstError::Config("schema has no slots".into()));
        }
        if bank.is_empty() {
            return Err(DstError::Config("template bank is empty".into()));
        }
        let usable_slot = |id: SlotId| {
            let slot = schema.slot(id);
            match bank.slots.get(&slot.name) {
                Some(t) => {
                    !t.inform.is_empty() && (slot.is_categorical() || !t.values.is_empty())
                }
                None => false,
            }
        };
        let usable: Vec<Vec<SlotId>> = (0..schema.num_domains())
            .map(|d| {
                schema
                    .domain_slots(d)
                    .iter()
                    .copied()
                    .filter(|&s| usable_slot(s))
                    .collect()
            })
            .collect();
        if usable.iter().all(Vec::is_empty) {
            return Err(DstError::Config(
                "no schema slot has inform templates and values".into(),
            ));
        }
        let mentionable = schema
            .noncategorical_slots()
            .filter(|&s| usable_slot(s))
            .collect();
        Ok(Generator {
            schema,
            bank,
            cfg,
            usable,
            mentionable,
        })
    }

    fn templates(&self, slot: SlotId) -> &SlotTemplates {
        &self.bank.slots[&self.schema.slot(slot).name]
    }

    fn sample_value(&self, rng: &mut StreamRng, slot: SlotId, avoid: Option<&str>) -> String {
        let spec = self.schema.slot(slot);
        let pool = if spec.kind == SlotKind::Categorical {
            &spec.candidate_values
        } else {
            &self.templates(slot).values
        };
        let choices: Vec<&String> = pool.iter().filter(|v| Some(v.as_str()) != avoid).collect();
        match choices.choose(rng) {
            Some(v) => (*v).clone(),
            None => pool[0].clone(),
        }
    }

    fn plan_events(&self, rng: &mut StreamRng, n_user: usize) -> (Vec<usize>, Vec<Event>) {
        let candidates: Vec<usize> = (0..self.usable.len())
            .filter(|&d| !self.usable[d].is_empty())
            .collect();
        let first = *candidates.choose(rng).expect("a usable domain exists");
        let mut domains = vec![first];
        if candidates.len() > 1 && rng.gen_bool(self.cfg.domain_switch_prob) {
            let rest: Vec<usize> = candidates.iter().copied().filter(|&d| d != first).collect();
            domains.push(*rest.choose(rng).unwrap());
        }

        let mut events = Vec::new();
        for &d in &domains {
            let mut slots = self.usable[d].clone();
            slots.shuffle(rng);
            let k = rng.gen_range(1..=self.cfg.max_slots_per_domain.min(slots.len()));
            for &slot in &slots[..k] {
                let t = self.templates(slot);
                let kind = if !t.dontcare.is_empty() && rng.gen_bool(self.cfg.dontcare_prob) {
                    EventKind::Dontcare
                } else if !t.offer.is_empty() && rng.gen_bool(self.cfg.offer_prob) {
                    EventKind::Offer(self.sample_value(rng, slot, None))
                } else {
                    EventKind::Inform(self.sample_value(rng, slot, None))
                };
                events.push(Event { slot, kind, turn: 0 });
            }
        }

        // Spread events over user turns; the first always lands on turn 0.
        let mut turns: Vec<usize> = (0..events.len())
            .map(|i| if i == 0 { 0 } else { rng.gen_range(0..n_user) })
            .collect();
        turns.sort_unstable();
        let mut offer_turns = Vec::new();
        for (e, t) in events.iter_mut().zip(turns) {
            e.turn = t;
            if let EventKind::Offer(v) = &e.kind {
                if t == 0 || offer_turns.contains(&t) {
                    e.kind = EventKind::Inform(v.clone());
                } else {
                    offer_turns.push(t);
                }
            }
        }

        if n_user >= 2 && rng.gen_bool(self.cfg.revision_prob) {
            let revisable: Vec<&Event> = events
                .iter()
                .filter(|e| {
                    matches!(e.kind, EventKind::Inform(_) | EventKind::Offer(_))
                        && e.turn + 1 < n_user
                        && !self.templates(e.slot).revise.is_empty()
                })
                .collect();
            if let Some(src) = revisable.choose(rng) {
                let old = match &src.kind {
                    EventKind::Inform(v) | EventKind::Offer(v) => v.clone(),
                    _ => unreachable!(),
                };
                let new = self.sample_value(rng, src.slot, Some(&old));
                if new != old {
                    let turn = rng.gen_range(src.turn + 1..n_user);
                    let slot = src.slot;
                    events.push(Event {
                        slot,
                        kind: EventKind::Revise(new),
                        turn,
                    });
                }
            }
        }
        (domains, events)
    }

    fn dialogue(&self, rng: &mut StreamRng, id: String) -> Dialogue {
        let n_user = rng.gen_range(self.cfg.min_user_turns..=self.cfg.max_user_turns);
        let (domains, events) = self.plan_events(rng, n_user);
        let mut state = BeliefState::default();
        let mut opened = vec![false; self.schema.num_domains()];
        let mut turns = Vec::with_capacity(2 * n_user);
        let mut current_domain = domains[0];

        for u in 0..n_user {
            let mut clauses: Vec<String> = Vec::new();
            let here: Vec<&Event> = events.iter().filter(|e| e.turn == u).collect();
            for e in &here {
                let spec = self.schema.slot(e.slot);
                let t = self.templates(e.slot);
                current_domain = spec.domain;
                if !opened[spec.domain] {
                    opened[spec.domain] = true;
                    if let Some(dt) = self.bank.domains.get(&self.schema.domains()[spec.domain]) {
                        if !dt.open.is_empty() && rng.gen_bool(0.5) {
                            clauses.push(pick(rng, &dt.open).to_string());
                        }
                    }
                }
                match &e.kind {
                    EventKind::Inform(v) => {
                        clauses.push(fill(pick(rng, &t.inform), v));
                        state.set_active(&spec.name, v);
                    }
                    EventKind::Dontcare => {
                        clauses.push(pick(rng, &t.dontcare).to_string());
                        state.set_dontcare(&spec.name);
                    }
                    EventKind::Offer(v) => {
                        clauses.push(pick(rng, &self.bank.accept).to_string());
                        state.set_active(&spec.name, v);
                    }
                    EventKind::Revise(v) => {
                        clauses.push(fill(pick(rng, &t.revise), v));
                        state.set_active(&spec.name, v);
                    }
                }
            }
            if here.is_empty() {
                clauses.push(pick(rng, &self.bank.user_chitchat).to_string());
            } else if !self.bank.user_chitchat.is_empty() && rng.gen_bool(self.cfg.chitchat_prob) {
                let chat = pick(rng, &self.bank.user_chitchat).to_string();
                if rng.gen_bool(0.5) {
                    clauses.insert(0, chat);
                } else {
                    clauses.push(chat);
                }
            }
            clauses.retain(|c| !c.is_empty());
            turns.push(Turn::user(&clauses.join(" "), state.clone()));

            let offer = events
                .iter()
                .find(|e| e.turn == u + 1 && matches!(e.kind, EventKind::Offer(_)));
            let agent_text = match offer {
                Some(Event {
                    slot,
                    kind: EventKind::Offer(v),
                    ..
                }) => fill(pick(rng, &self.templates(*slot).offer), v),
                _ => self.agent_filler(rng, current_domain),
            };
            turns.push(Turn::agent(&agent_text));
        }
        Dialogue { id, turns }
    }

    fn agent_filler(&self, rng: &mut StreamRng, domain: usize) -> String {
        if !self.mentionable.is_empty()
            && !self.bank.agent_mention.is_empty()
            && rng.gen_bool(self.cfg.chitchat_prob)
        {
            let slot = *self.mentionable.choose(rng).unwrap();
            let value = self.sample_value(rng, slot, None);
            return fill(pick(rng, &self.bank.agent_mention), &value);
        }
        let requests = self
            .bank
            .domains
            .get(&self.schema.domains()[domain])
            .map(|d| d.request.as_slice())
            .unwrap_or(&[]);
        if !requests.is_empty() && rng.gen_bool(0.6) {
            return pick(rng, requests).to_string();
        }
        let chat = pick(rng, &self.bank.agent_chitchat);
        if chat.is_empty() {
            "okay .".to_string()
        } else {
            chat.to_string()
        }
    }
}

/// Generates `config.num_dialogues` dialogues; a deterministic function of
/// `(config, seed)`.
pub fn generate_synthetic(config: &SynthConfig, seed: u64) -> Result<Corpus> {
    config.validate()?;
    let schema = config.schema()?;
    let bank = config.template_bank();
    let generator = Generator::new(&schema, &bank, config)?;
    let mut rng = rng::stream(seed, "corpus");
    let dialogues = (0..config.num_dialogues)
        .map(|i| generator.dialogue(&mut rng, format!("syn{seed}-{i:05}")))
        .collect();
    Ok(Corpus::new(schema, dialogues, Split::Train))
}

/// Splits a corpus into contiguous train/dev/test ranges.
pub fn split_corpus(corpus: Corpus, fractions: [f64; 3]) -> [Corpus; 3] {
    let n = corpus.dialogues.len();
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_dev = ((fractions[1] * n as f64).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);
    let mut rest = corpus.dialogues;
    let test = rest.split_off((n_train + n_dev).min(rest.len()));
    let dev = rest.split_off(n_train);
    let schema = corpus.schema;
    [
        Corpus::new(schema.clone(), rest, Split::Train),
        Corpus::new(schema.clone(), dev, Split::Dev),
        Corpus::new(schema, test, Split::Test),
    ]
}

const DAYS: [&str; 7] = [
    "monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday",
];
const PRICES: [&str; 3] = ["cheap", "moderate", "expensive"];
const AREAS: [&str; 5] = ["centre", "north", "south", "east", "west"];

/// The four-domain schema matched by [`builtin_templates`].
pub fn builtin_schema() -> Schema {
    Schema::new(
        ["restaurant", "hotel", "train", "taxi"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        vec![
            SlotDecl::categorical("restaurant-pricerange", "restaurant", &PRICES),
            SlotDecl::categorical("restaurant-area", "restaurant", &AREAS),
            SlotDecl::categorical(
                "restaurant-food",
                "restaurant",
                &["chinese", "italian", "indian", "british", "thai", "french"],
            ),
            SlotDecl::noncategorical("restaurant-name", "restaurant"),
            SlotDecl::noncategorical("restaurant-booktime", "restaurant"),
            SlotDecl::categorical("hotel-pricerange", "hotel", &PRICES),
            SlotDecl::categorical("hotel-area", "hotel", &AREAS),
            SlotDecl::categorical("hotel-stars", "hotel", &["2", "3", "4", "5"]),
            SlotDecl::categorical("hotel-type", "hotel", &["guesthouse", "hotel"]),
            SlotDecl::noncategorical("hotel-name", "hotel"),
            SlotDecl::categorical("train-day", "train", &DAYS),
            SlotDecl::noncategorical("train-departure", "train"),
            SlotDecl::noncategorical("train-destination", "train"),
            SlotDecl::noncategorical("train-leaveat", "train"),
            SlotDecl::noncategorical("train-arriveby", "train"),
            SlotDecl::noncategorical("taxi-departure", "taxi"),
            SlotDecl::noncategorical("taxi-destination", "taxi"),
            SlotDecl::noncategorical("taxi-leaveat", "taxi"),
        ],
    )
    .expect("builtin schema is valid")
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn times() -> Vec<String> {
    let mut out = Vec::new();
    for h in 6..23 {
        for m in ["00", "15", "19", "30", "45"] {
            out.push(format!("{h:02}:{m}"));
        }
    }
    out
}

const RESTAURANTS: [&str; 12] = [
    "the golden curry",
    "pizza hut city centre",
    "curry garden",
    "the lucky star",
    "royal spice",
    "la margherita",
    "the nirala",
    "yippee noodle bar",
    "meghna",
    "saffron brasserie",
    "golden wok",
    "the cambridge chop house",
];
const HOTELS: [&str; 12] = [
    "a and b guest house",
    "acorn guest house",
    "the lensfield hotel",
    "alexander bed and breakfast",
    "huntingdon marriott hotel",
    "the gonville hotel",
    "allenbell",
    "autumn house",
    "arbury lodge guesthouse",
    "warkworth house",
    "the cambridge belfry",
    "leverton house",
];
const PLACES: [&str; 12] = [
    "cambridge",
    "london kings cross",
    "peterborough",
    "ely",
    "norwich",
    "stansted airport",
    "birmingham new street",
    "leicester",
    "bishops stortford",
    "stevenage",
    "kings lynn",
    "broxbourne",
];

/// Template bank for [`builtin_schema`].
pub fn builtin_templates() -> TemplateBank {
    let mut slots = BTreeMap::new();
    let mut slot = |name: &str, t: SlotTemplates| {
        slots.insert(name.to_string(), t);
    };
    let taxi_places: Vec<String> = PLACES
        .iter()
        .chain(RESTAURANTS.iter())
        .chain(HOTELS.iter())
        .map(|s| s.to_string())
        .collect();

    slot(
        "restaurant-pricerange",
        SlotTemplates {
            inform: strings(&[
                "i want a {value} restaurant .",
                "find me a {value} place to eat .",
                "the restaurant should be in the {value} price range .",
            ]),
            dontcare: strings(&[
                "i do not care about the price of the restaurant .",
                "any price is fine for the restaurant .",
            ]),
            revise: strings(&["actually , make the restaurant {value} instead ."]),
            ..Default::default()
        },
    );
    slot(
        "restaurant-area",
        SlotTemplates {
            inform: strings(&[
                "the restaurant should be in the {value} .",
                "i want to eat in the {value} part of town .",
            ]),
            dontcare: strings(&["the restaurant can be in any area ."]),
            revise: strings(&["sorry , i want to eat in the {value} instead ."]),
            ..Default::default()
        },
    );
    slot(
        "restaurant-food",
        SlotTemplates {
            inform: strings(&["i would like {value} food .", "i am craving {value} food tonight ."]),
            dontcare: strings(&["i do not mind what type of food ."]),
            revise: strings(&["actually , let us have {value} food instead ."]),
            ..Default::default()
        },
    );
    slot(
        "restaurant-name",
        SlotTemplates {
            inform: strings(&[
                "i am looking for a restaurant called {value} .",
                "do you have information on the restaurant {value} ?",
            ]),
            offer: strings(&[
                "{value} is a great restaurant in that area .",
                "how about {value} ? it is a popular restaurant .",
            ]),
            values: strings(&RESTAURANTS),
            ..Default::default()
        },
    );
    slot(
        "restaurant-booktime",
        SlotTemplates {
            inform: strings(&[
                "please book a table at {value} .",
                "we will arrive at the restaurant at {value} .",
            ]),
            revise: strings(&["can you move the table to {value} instead ?"]),
            values: times(),
            ..Default::default()
        },
    );
    slot(
        "hotel-pricerange",
        SlotTemplates {
            inform: strings(&[
                "i need a {value} hotel .",
                "the place to stay should be {value} .",
            ]),
            dontcare: strings(&["the price of the hotel does not matter ."]),
            revise: strings(&["actually , i want the hotel to be {value} ."]),
            ..Default::default()
        },
    );
    slot(
        "hotel-area",
        SlotTemplates {
            inform: strings(&[
                "i want to stay in the {value} .",
                "the hotel should be in the {value} of town .",
            ]),
            dontcare: strings(&["the hotel can be anywhere in town ."]),
            revise: strings(&["sorry , i would rather stay in the {value} ."]),
            ..Default::default()
        },
    );
    slot(
        "hotel-stars",
        SlotTemplates {
            inform: strings(&[
                "it should have a {value} star rating .",
                "i want a {value} star place to stay .",
            ]),
            dontcare: strings(&["the star rating does not matter ."]),
            ..Default::default()
        },
    );
    slot(
        "hotel-type",
        SlotTemplates {
            inform: strings(&["i would prefer a {value} .", "it should be a {value} to stay in ."]),
            ..Default::default()
        },
    );
    slot(
        "hotel-name",
        SlotTemplates {
            inform: strings(&[
                "i am looking for a hotel called {value} .",
                "can you tell me about the hotel {value} ?",
            ]),
            offer: strings(&[
                "there is {value} , it is a nice place to stay .",
                "i can recommend {value} for your stay .",
            ]),
            values: strings(&HOTELS),
            ..Default::default()
        },
    );
    slot(
        "train-day",
        SlotTemplates {
            inform: strings(&["i am leaving on {value} .", "i need to travel on {value} ."]),
            revise: strings(&["sorry , i need to travel on {value} instead ."]),
            ..Default::default()
        },
    );
    slot(
        "train-departure",
        SlotTemplates {
            inform: strings(&[
                "i am departing from {value} .",
                "the train should leave from {value} .",
            ]),
            values: strings(&PLACES),
            ..Default::default()
        },
    );
    slot(
        "train-destination",
        SlotTemplates {
            inform: strings(&["i am going to {value} .", "the train should go to {value} ."]),
            revise: strings(&["actually , i need to go to {value} instead ."]),
            values: strings(&PLACES),
            ..Default::default()
        },
    );
    slot(
        "train-leaveat",
        SlotTemplates {
            inform: strings(&["i want to leave after {value} .", "the train should depart at {value} ."]),
            dontcare: strings(&["i do not care when the train leaves ."]),
            offer: strings(&[
                "i have a train departing at {value} , would you like to book it ?",
                "there is a train that leaves at {value} .",
            ]),
            revise: strings(&["can i leave at {value} instead ?"]),
            values: times(),
        },
    );
    slot(
        "train-arriveby",
        SlotTemplates {
            inform: strings(&["i need to arrive by {value} .", "the train must get there by {value} ."]),
            values: times(),
            ..Default::default()
        },
    );
    slot(
        "taxi-departure",
        SlotTemplates {
            inform: strings(&["please pick me up from {value} .", "the taxi should come to {value} ."]),
            values: taxi_places.clone(),
            ..Default::default()
        },
    );
    slot(
        "taxi-destination",
        SlotTemplates {
            inform: strings(&["i want a taxi to {value} .", "the taxi should take me to {value} ."]),
            values: taxi_places,
            ..Default::default()
        },
    );
    slot(
        "taxi-leaveat",
        SlotTemplates {
            inform: strings(&["the taxi should leave at {value} .", "i want to be picked up at {value} ."]),
            values: times(),
            ..Default::default()
        },
    );

    let mut domains = BTreeMap::new();
    domains.insert(
        "restaurant".to_string(),
        DomainTemplates {
            open: strings(&["i am looking for a place to eat .", "i need a restaurant ."]),
            request: strings(&[
                "what type of food would you like ?",
                "do you have a price range in mind for the restaurant ?",
            ]),
        },
    );
    domains.insert(
        "hotel".to_string(),
        DomainTemplates {
            open: strings(&["i need a place to stay .", "i am looking for a hotel ."]),
            request: strings(&[
                "what area would you like to stay in ?",
                "how many stars should the hotel have ?",
            ]),
        },
    );
    domains.insert(
        "train".to_string(),
        DomainTemplates {
            open: strings(&["i need to book a train .", "i am looking for a train ."]),
            request: strings(&["what day would you like to travel ?", "where are you departing from ?"]),
        },
    );
    domains.insert(
        "taxi".to_string(),
        DomainTemplates {
            open: strings(&["i need a taxi .", "can you book a taxi for me ?"]),
            request: strings(&["where should the taxi pick you up ?", "when would you like to leave ?"]),
        },
    );

    TemplateBank {
        domains,
        slots,
        user_chitchat: strings(&[
            "thank you , that is all for now .",
            "that sounds good .",
            "can you tell me more about it ?",
            "let me think about it .",
            "hello , i am planning a trip .",
        ]),
        agent_chitchat: strings(&[
            "is there anything else i can help with ?",
            "sure , let me check that for you .",
            "okay , i have noted that .",
        ]),
        accept: strings(&[
            "that sounds good , please book it .",
            "yes , that one works for me .",
            "great , i will take it .",
        ]),
        agent_mention: strings(&[
            "we also have {value} available .",
            "another option is {value} .",
            "some people also like {value} .",
        ]),
    }
}
