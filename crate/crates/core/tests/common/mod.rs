#![allow(dead_code)]

use serde_json::Value;
use tourguide::bridge::Router;
use tourguide::clock::SimClock;
use tourguide::model::{Pose2D, Timestamp};
use tourguide::runtime::Runtime;
use tourguide::services::{register_services, shared, SharedRuntime};
use tourguide::sim::SimConfig;
use tourguide::tour::{NewTour, TourStore};

pub const ORIGIN_UNIX: i64 = 1_790_000_000;

pub struct Fixture {
    pub rt: SharedRuntime,
    pub router: Router,
    pub tour_id: String,
    pub location_ids: Vec<String>,
}

/// Two locations and a two-stop "Zoo" tour, served over a fresh router.
pub fn fixture() -> Fixture {
    let now = Timestamp::from_unix(ORIGIN_UNIX);
    let mut store = TourStore::default();
    let a = store
        .save_location(
            "occulus",
            "VR headsets live here.",
            Pose2D::new(1.0, 0.0, 0.0).unwrap(),
            now,
        )
        .unwrap();
    let b = store
        .save_location("Robot pen", "", Pose2D::new(1.0, 1.0, 1.0).unwrap(), now)
        .unwrap();
    let tour = store
        .create_tour(
            NewTour {
                name: "Zoo".into(),
                tour_type: "lab".into(),
                stops: vec![a.id, b.id],
                expected_duration: 120,
            },
            now,
        )
        .unwrap();
    let runtime = Runtime::new(
        store,
        SimConfig::default(),
        Box::new(SimClock::starting_at(now)),
    );
    let rt = shared(runtime);
    let router = Router::new();
    register_services(&router, &rt).unwrap();
    Fixture {
        rt,
        router,
        tour_id: tour.id.to_string(),
        location_ids: vec![a.id.to_string(), b.id.to_string()],
    }
}

pub fn error_code(values: &Value) -> &str {
    values["code"].as_str().unwrap_or_default()
}
