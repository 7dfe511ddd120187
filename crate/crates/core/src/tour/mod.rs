//! Location capture, tour editing, the persisted tour library and tour
//! execution.

mod executor;
mod store;

pub use executor::{
    plan_stops, EventKind, Execution, ExecutionState, Phase, PlannedStop, TourEvent,
    NAV_TIMEOUT_FACTOR,
};
pub use store::{
    atomic_write, LocationPatch, NewTour, SearchResults, TourPatch, TourStore, SCHEMA_VERSION,
};
