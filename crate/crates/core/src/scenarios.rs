//! The three rosters used throughout the experiments, shipped as JSON files.
//!
//! All share the book-recommendation query, three segments, one slot,
//! 500 trials and seed 7; bids double as values.
//!
//! | file | ads | bids |
//! |---|---|---|
//! | `scenario1.json` | Velora, BookHaven, MassMart, EspressoEdge | 3, 3, 2, 2 |
//! | `scenario2.json` | same four | 2, 1, 3, 3 |
//! | `scenario3.json` | eleven brands | all 1 |

use crate::types::Scenario;

pub const SCENARIO1_JSON: &str = include_str!("../scenarios/scenario1.json");
pub const SCENARIO2_JSON: &str = include_str!("../scenarios/scenario2.json");
pub const SCENARIO3_JSON: &str = include_str!("../scenarios/scenario3.json");

fn load(text: &str) -> Scenario {
    Scenario::from_json(text).expect("shipped scenario files are valid")
}

pub fn scenario1() -> Scenario {
    load(SCENARIO1_JSON)
}

pub fn scenario2() -> Scenario {
    load(SCENARIO2_JSON)
}

pub fn scenario3() -> Scenario {
    load(SCENARIO3_JSON)
}

/// `(name, scenario)` for all shipped rosters.
pub fn all() -> Vec<(&'static str, Scenario)> {
    vec![("scenario1", scenario1()), ("scenario2", scenario2()), ("scenario3", scenario3())]
}
