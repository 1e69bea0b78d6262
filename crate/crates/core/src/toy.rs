//! Synthetic restaurant-search domain for tests and demos.
//!
//! Each dialog follows the same flow: greeting, a request naming some of
//! cuisine / area / price, questions for the missing slots, an API call,
//! then either an offer followed by attribute questions or a no-results
//! message, and a goodbye.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::augment::SegmentPool;
use crate::corpus::{Dialog, KbFact, Lexicon, Turn, SILENCE_MARKER};
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

/// Actions that every toy domain has besides the attribute answers.
pub const CORE_ACTIONS: usize = 8;

const CUISINES: [&str; 8] = ["italian", "indian", "chinese", "french", "thai", "korean", "spanish", "british"];
const AREAS: [&str; 5] = ["north", "south", "east", "west", "centre"];
const PRICES: [&str; 3] = ["cheap", "moderate", "expensive"];
const ATTRIBUTES: [&str; 16] = [
    "phone",
    "address",
    "postcode",
    "rating",
    "hours",
    "website",
    "email",
    "parking",
    "owner",
    "chef",
    "capacity",
    "menu",
    "dresscode",
    "wifi",
    "terrace",
    "delivery",
];

pub const GREETING: &str = "hello , welcome to the restaurant system . how may i help you ?";
pub const GOODBYE: &str = "you are welcome";

#[derive(Clone, Debug, PartialEq)]
pub struct ToyDomain {
    pub train: Vec<Dialog>,
    pub dev: Vec<Dialog>,
    pub test: Vec<Dialog>,
    pub lexicon: Lexicon,
    /// Foreign-domain dialogs whose first user turns form the OOD pool.
    pub foreign: Vec<Dialog>,
    pub segments: SegmentPool,
}

fn attribute_name(i: usize) -> String {
    match ATTRIBUTES.get(i) {
        Some(a) => (*a).to_owned(),
        None => format!("detail{i}"),
    }
}

struct Restaurant {
    name: String,
    cuisine: &'static str,
    area: &'static str,
    price: &'static str,
}

impl Restaurant {
    fn facts(&self, n_info: usize) -> Vec<KbFact> {
        let mut facts = vec![
            KbFact::new(format!("{} R_cuisine {}", self.name, self.cuisine)),
            KbFact::new(format!("{} R_location {}", self.name, self.area)),
            KbFact::new(format!("{} R_price {}", self.name, self.price)),
        ];
        for a in 0..n_info {
            let attr = attribute_name(a);
            facts.push(KbFact::new(format!("{0} R_{attr} {0}_{attr}", self.name)));
        }
        facts
    }
}

fn request(rng: &mut StreamRng, slots: [Option<&str>; 3]) -> String {
    let [cuisine, area, price] = slots;
    let mut parts =
        vec![(*["i want", "i am looking for", "can you find me", "i need"].choose(rng).unwrap()).to_owned()];
    parts.push(match price {
        Some(p) => format!("a {p} restaurant"),
        None => "a restaurant".to_owned(),
    });
    if let Some(a) = area {
        parts.push(format!("in the {a} part of town"));
    }
    if let Some(c) = cuisine {
        parts.push(format!("serving {c} food"));
    }
    parts.join(" ")
}

fn answer(rng: &mut StreamRng, slot: usize, value: &str) -> String {
    let forms: &[&str] = match slot {
        0 => &["{} food", "{}", "i would like {} food", "{} please"],
        1 => &["in the {}", "{}", "the {} of town", "{} please"],
        _ => &["{}", "{} price range", "something {}", "{} please"],
    };
    forms.choose(rng).unwrap().replace("{}", value)
}

const ASKS: [&str; 3] = [
    "what kind of food would you like ?",
    "what part of town do you have in mind ?",
    "what price range would you like ?",
];

fn attribute_question(rng: &mut StreamRng, attr: &str) -> String {
    let form = ["what is the {}", "may i have the {}", "can you tell me the {}", "{} please"].choose(rng).unwrap();
    form.replace("{}", attr)
}

fn toy_dialog(j: usize, id: usize, n_info: usize, rng: &mut StreamRng) -> Dialog {
    let cuisine = CUISINES[rng.random_range(0..CUISINES.len())];
    let area = AREAS[rng.random_range(0..AREAS.len())];
    let price = PRICES[rng.random_range(0..PRICES.len())];
    let values = [cuisine, area, price];
    // Which slots the opening request names, cycling through all subsets.
    let pattern = j % 8;
    let named = [pattern & 1 != 0, pattern & 2 != 0, pattern & 4 != 0];

    let mut turns = vec![Turn::new(SILENCE_MARKER, GREETING)];
    let opening = request(rng, [0, 1, 2].map(|s| named[s].then_some(values[s])));
    let mut pending = opening;
    for slot in 0..3 {
        if !named[slot] {
            turns.push(Turn::new(pending, ASKS[slot]));
            pending = answer(rng, slot, values[slot]);
        }
    }
    turns.push(Turn::new(pending, format!("api_call {cuisine} {area} {price}")));

    let no_results = j % 5 == 3;
    if no_results {
        turns.push(Turn::new(
            SILENCE_MARKER,
            format!("i am sorry but there is no {cuisine} restaurant in the {area} of town"),
        ));
    } else {
        let restaurants: Vec<Restaurant> = (0..rng.random_range(1..=3))
            .map(|k| Restaurant { name: format!("place_{id}_{k}"), cuisine, area, price })
            .collect();
        let mut offer = Turn::new(
            SILENCE_MARKER,
            format!("{} is a nice restaurant in the {area} of town serving {cuisine} food", restaurants[0].name),
        );
        offer.kb_facts = restaurants.iter().flat_map(|r| r.facts(n_info)).collect();
        turns.push(offer);
        let first = j % n_info;
        let mut asked = vec![first];
        if j % 2 == 1 && n_info > 1 {
            asked.push((first + 1 + j / n_info) % n_info);
        }
        asked.dedup();
        for a in asked {
            let attr = attribute_name(a);
            let name = &restaurants[0].name;
            turns.push(Turn::new(attribute_question(rng, &attr), format!("the {attr} of {name} is {name}_{attr}")));
        }
    }
    let thanks = ["thank you goodbye", "thanks bye", "thank you", "ok thank you good bye"].choose(rng).unwrap();
    turns.push(Turn::new(*thanks, GOODBYE));
    Dialog::new(id, turns)
}

const FOREIGN_FORMS: [&str; 12] = [
    "i need a flight from {a} to {b} on {d}",
    "book me a train ticket to {b} for {d}",
    "will it rain in {a} on {d}",
    "what is the weather forecast for {b}",
    "when does the next bus leave for {b}",
    "play some {m} music",
    "set an alarm for {d} morning",
    "how many miles is it from {a} to {b}",
    "is the museum in {a} open on {d}",
    "remind me to call my dentist on {d}",
    "find me a hotel room in {b} with a pool",
    "turn up the volume of the {m} playlist",
];
const CITIES: [&str; 10] =
    ["boston", "denver", "paris", "tokyo", "madrid", "chicago", "berlin", "seattle", "lisbon", "dublin"];
const DAYS: [&str; 7] = ["monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday"];
const GENRES: [&str; 6] = ["jazz", "rock", "classical", "reggae", "blues", "techno"];

pub const INTERJECTIONS: [&str; 8] = [
    "oh sorry",
    "my mistake",
    "sorry about that",
    "oops wrong window",
    "never mind that",
    "so sorry man",
    "my bad",
    "ignore what i said",
];

fn foreign_dialog(id: usize, rng: &mut StreamRng) -> Dialog {
    let form = FOREIGN_FORMS.choose(rng).unwrap();
    let text = form
        .replace("{a}", CITIES.choose(rng).unwrap())
        .replace("{b}", CITIES.choose(rng).unwrap())
        .replace("{d}", DAYS.choose(rng).unwrap())
        .replace("{m}", GENRES.choose(rng).unwrap());
    Dialog::new(id, vec![Turn::new(text, "ok"), Turn::new("thanks", "goodbye")])
}

/// Seeded toy corpus with splits 8/1/1. The action set of the generated
/// training split has `n_actions` actions plus the fallback.
pub fn generate_toy_domain(seed: u64, n_dialogs: usize, n_actions: usize) -> Result<ToyDomain> {
    if n_actions <= CORE_ACTIONS {
        return Err(Error::Config(format!("toy domain needs more than {CORE_ACTIONS} actions")));
    }
    if n_dialogs < 3 * n_actions {
        return Err(Error::Config(format!(
            "{n_dialogs} dialogs cannot cover {n_actions} actions (need at least {})",
            3 * n_actions
        )));
    }
    let n_info = n_actions - CORE_ACTIONS;
    let n_train = n_dialogs * 8 / 10;
    let n_dev = (n_dialogs - n_train) / 2;
    let dialogs: Vec<Dialog> =
        (0..n_dialogs).map(|j| toy_dialog(j, j, n_info, &mut rng::stream(seed, "toy_dialog", j as u64))).collect();
    let mut lexicon = Lexicon::from_kb_facts(&dialogs);
    for (slot, values) in [("R_cuisine", &CUISINES[..]), ("R_location", &AREAS[..]), ("R_price", &PRICES[..])] {
        for v in values {
            lexicon.insert(slot, v)?;
        }
    }
    let foreign = (0..(n_dialogs / 2).max(20))
        .map(|k| foreign_dialog(k, &mut rng::stream(seed, "toy_foreign", k as u64)))
        .collect();
    let mut it = dialogs.into_iter();
    let train: Vec<Dialog> = it.by_ref().take(n_train).collect();
    let dev: Vec<Dialog> = it.by_ref().take(n_dev).collect();
    let test: Vec<Dialog> = it.collect();
    // Ids restart at 0 in every split, as they do when a split is read back.
    let renumber = |split: Vec<Dialog>| -> Vec<Dialog> {
        split.into_iter().enumerate().map(|(i, d)| Dialog { id: i, ..d }).collect()
    };
    let (dev, test) = (renumber(dev), renumber(test));
    Ok(ToyDomain {
        train,
        dev,
        test,
        lexicon,
        foreign,
        segments: SegmentPool { interjections: INTERJECTIONS.iter().map(|s| (*s).to_owned()).collect() },
    })
}
