//! Demo store for trying the system without a robot or an operator.

use chrono::{Datelike, Duration, Months, NaiveDate, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tourguide::model::{new_id, Id, Pose2D, RunOutcome, Stop, Timestamp, TourRun};
use tourguide::tour::{NewTour, TourPatch, TourStore};

pub const DEFAULT_SEED: u64 = 0x5eed;

/// Months of history written, counting the current one. One more than the
/// default analytics window so some runs always fall outside it.
pub const HISTORY_MONTHS: u32 = 7;
const RUNS_PER_MONTH: u32 = 5;

const LOCATIONS: [(&str, f64, f64, f64, &str); 5] = [
    (
        "Lobby",
        0.0,
        0.0,
        0.0,
        "Welcome to the robotics lab. Please stay behind me.",
    ),
    (
        "occulus",
        3.0,
        1.5,
        1.5,
        "This is the virtual reality corner with our headsets.",
    ),
    (
        "Robot pen",
        5.0,
        -1.0,
        3.0,
        "Our mobile robots are built and tested here.",
    ),
    (
        "Makerspace",
        2.0,
        -3.0,
        -1.5,
        "The makerspace has printers and a laser cutter.",
    ),
    ("Library", -2.0, 2.5, 0.8, ""),
];

struct TourSpec {
    name: &'static str,
    tour_type: &'static str,
    stops: &'static [&'static str],
    expected_duration: u32,
    weight: u32,
}

const TOURS: [TourSpec; 4] = [
    TourSpec {
        name: "Zoo",
        tour_type: "lab",
        stops: &["Lobby", "occulus", "Robot pen"],
        expected_duration: 15,
        weight: 5,
    },
    TourSpec {
        name: "Open Day",
        tour_type: "visitor",
        stops: &["Lobby", "Makerspace", "occulus", "Robot pen", "Library"],
        expected_duration: 30,
        weight: 3,
    },
    TourSpec {
        name: "Quick Look",
        tour_type: "visitor",
        stops: &["Lobby", "occulus"],
        expected_duration: 10,
        weight: 2,
    },
    TourSpec {
        name: "Makers",
        tour_type: "workshop",
        stops: &["Makerspace", "Robot pen"],
        expected_duration: 20,
        weight: 1,
    },
];

fn month_start(now: Timestamp, months_back: u32) -> Timestamp {
    let today = now.as_datetime().date_naive();
    let first = NaiveDate::from_ymd_opt(today.year(), today.month(), 1).expect("valid date")
        - Months::new(months_back);
    Timestamp::from_datetime(Utc.from_utc_datetime(&first.and_hms_opt(0, 0, 0).expect("midnight")))
}

/// Builds the demo store: five locations, four tours and
/// `HISTORY_MONTHS * 5` runs, one batch per calendar month ending with the
/// month containing `now`. Run times never exceed `now`.
pub fn demo_store(now: Timestamp, seed: u64) -> TourStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let created = month_start(now, HISTORY_MONTHS);
    let mut store = TourStore::default();

    for (name, x, y, theta, text) in LOCATIONS {
        let pose = Pose2D::new(x, y, theta).expect("finite pose");
        store
            .save_location(name, text, pose, created)
            .expect("demo locations are valid");
    }
    let location = |store: &TourStore, name: &str| -> Id {
        store.location_by_name(name).expect("demo location").id
    };

    let mut tour_ids = Vec::new();
    for spec in &TOURS {
        let stops = spec.stops.iter().map(|n| location(&store, n)).collect();
        let tour = store
            .create_tour(
                NewTour {
                    name: spec.name.into(),
                    tour_type: spec.tour_type.into(),
                    stops,
                    expected_duration: spec.expected_duration,
                },
                created,
            )
            .expect("demo tours are valid");
        tour_ids.push((tour.id, spec));
    }

    // A per-stop speech override, so the demo shows both speech sources.
    let zoo = tour_ids[0].0;
    let mut stops: Vec<Stop> = store.tour(zoo).expect("zoo").stops.clone();
    stops[2].speech_override = Some("Say hello to the robots in the pen.".into());
    store
        .edit_tour(
            zoo,
            TourPatch {
                stops: Some(stops),
                ..TourPatch::default()
            },
            created,
        )
        .expect("valid patch");

    let total_weight: u32 = TOURS.iter().map(|t| t.weight).sum();
    for back in 0..HISTORY_MONTHS {
        let start = month_start(now, back).unix();
        let end = if back == 0 {
            now.unix()
        } else {
            month_start(now, back - 1).unix()
        };
        for _ in 0..RUNS_PER_MONTH {
            let mut pick = rng.random_range(0..total_weight);
            let (tour_id, spec) = tour_ids
                .iter()
                .find(|(_, s)| {
                    if pick < s.weight {
                        true
                    } else {
                        pick -= s.weight;
                        false
                    }
                })
                .expect("weighted pick");
            let stop_count = spec.stops.len() as u32;
            let (outcome, stops_visited) = match rng.random_range(0..10) {
                0 => (RunOutcome::Aborted, rng.random_range(0..stop_count)),
                1 => (RunOutcome::Failed, rng.random_range(0..stop_count)),
                _ => (RunOutcome::Completed, stop_count),
            };
            let duration = 60 * i64::from(spec.expected_duration) * i64::from(stops_visited.max(1))
                / i64::from(stop_count)
                + rng.random_range(-120..120);
            let latest = (end - duration - 1).max(start);
            let started = rng.random_range(start..=latest);
            let started_at = Timestamp::from_unix(started);
            let ended_at =
                Timestamp::from_datetime(started_at.as_datetime() + Duration::seconds(duration));
            store.record_run(TourRun {
                run_id: new_id(),
                tour_id: *tour_id,
                started_at,
                ended_at,
                outcome,
                stops_visited,
            });
        }
    }
    store.runs.sort_by_key(|r| (r.started_at, r.run_id));
    store
}

#[cfg(test)]
mod tests {
    use super::*;
    use tourguide::analytics::{monthly_counts, DEFAULT_WINDOW_MONTHS};

    fn at(s: &str) -> Timestamp {
        Timestamp::from_datetime(s.parse().unwrap())
    }

    #[test]
    fn fixture_shape() {
        let now = at("2026-10-19T12:00:00Z");
        let store = demo_store(now, DEFAULT_SEED);
        store.validate().unwrap();
        assert!(store.locations.len() >= 4);
        assert!(store.location_by_name("occulus").is_some());
        assert!(store.tours.len() >= 3);
        assert!(store.tour_by_name("Zoo").is_some());
        assert!(store.runs.len() >= 30);
        assert!(store.runs.iter().all(|r| r.ended_at <= now));
    }

    #[test]
    fn some_runs_fall_outside_the_default_window() {
        for now in [
            "2026-10-19T12:00:00Z",
            "2026-03-01T00:30:00Z",
            "2027-01-31T23:59:59Z",
        ] {
            let now = at(now);
            let store = demo_store(now, DEFAULT_SEED);
            let stats = monthly_counts(&store.runs, now, DEFAULT_WINDOW_MONTHS).unwrap();
            let excluded = store.runs.len() as u64 - stats.total();
            assert_eq!(excluded, u64::from(RUNS_PER_MONTH), "{now}");
            assert!(stats
                .months
                .iter()
                .all(|m| m.run_count == u64::from(RUNS_PER_MONTH)));
        }
    }

    #[test]
    fn month_start_crosses_years() {
        let now = at("2026-02-10T08:00:00Z");
        assert_eq!(month_start(now, 0), at("2026-02-01T00:00:00Z"));
        assert_eq!(month_start(now, 2), at("2025-12-01T00:00:00Z"));
    }
}
