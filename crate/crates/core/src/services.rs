//! Bridge services over a shared [`Runtime`], plus the tick driver that
//! publishes pose and tour progress.

use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::task::JoinHandle;

use crate::analytics::{RecommendationParams, DEFAULT_TOP_K, DEFAULT_WINDOW_MONTHS};
use crate::bridge::{Router, ServiceError};
use crate::error::{Error, ErrorCode, Result};
use crate::model::{Id, Pose2D};
use crate::runtime::Runtime;
use crate::sim::TeleopDirection;
use crate::tour::{LocationPatch, NewTour, TourPatch};

pub type SharedRuntime = Arc<Mutex<Runtime>>;

pub fn shared(runtime: Runtime) -> SharedRuntime {
    Arc::new(Mutex::new(runtime))
}

/// Service and topic names.
pub mod names {
    pub const ROBOT_STATUS: &str = "/robot/status";
    pub const MOTION_GOTO: &str = "/motion/goto";
    pub const MOTION_TELEOP: &str = "/motion/teleop";
    pub const SPEECH_SAY: &str = "/speech/say";

    pub const TOUR_LIST: &str = "/tour/list";
    pub const TOUR_GET: &str = "/tour/get";
    pub const TOUR_CREATE: &str = "/tour/create";
    pub const TOUR_EDIT: &str = "/tour/edit";
    pub const TOUR_COPY: &str = "/tour/copy";
    pub const TOUR_DELETE: &str = "/tour/delete";
    pub const TOUR_EXECUTE: &str = "/tour/execute";
    pub const TOUR_ABORT: &str = "/tour/abort";
    pub const LOCATION_SAVE: &str = "/location/save";
    pub const LOCATION_LIST: &str = "/location/list";
    pub const LOCATION_GET: &str = "/location/get";
    pub const LOCATION_EDIT: &str = "/location/edit";
    pub const LOCATION_DELETE: &str = "/location/delete";
    pub const STORE_SEARCH: &str = "/store/search";

    pub const STATS_MONTHLY: &str = "/stats/monthly";
    pub const STATS_TYPES: &str = "/stats/types";
    pub const STATS_TOUR: &str = "/stats/tour";
    pub const RECOMMEND_POPULAR: &str = "/recommend/popular";
    pub const RECOMMEND_CUSTOM: &str = "/recommend/custom";

    pub const TOPIC_POSE: &str = "/robot/pose";
    pub const TOPIC_PROGRESS: &str = "/tour/progress";
}

#[derive(Deserialize)]
struct NoArgs {}

#[derive(Deserialize)]
struct IdArgs {
    id: Id,
}

#[derive(Deserialize)]
struct TeleopArgs {
    direction: TeleopDirection,
}

#[derive(Deserialize)]
struct SayArgs {
    text: String,
}

#[derive(Deserialize)]
struct SaveLocationArgs {
    name: String,
    #[serde(default)]
    description: String,
}

#[derive(Deserialize)]
struct EditLocationArgs {
    id: Id,
    patch: LocationPatch,
}

#[derive(Deserialize)]
struct EditTourArgs {
    id: Id,
    patch: TourPatch,
}

#[derive(Deserialize)]
struct CopyArgs {
    id: Id,
    #[serde(default)]
    name: Option<String>,
}

#[derive(Deserialize)]
struct SearchArgs {
    #[serde(default)]
    query: String,
}

#[derive(Deserialize)]
struct WindowArgs {
    #[serde(default)]
    months: Option<u32>,
}

#[derive(Deserialize)]
struct PopularArgs {
    #[serde(default)]
    k: Option<usize>,
    #[serde(default)]
    months: Option<u32>,
}

fn parse_args<A: DeserializeOwned>(args: Value) -> Result<A> {
    let args = if args.is_null() { json!({}) } else { args };
    serde_json::from_value(args).map_err(|e| Error::validation(format!("invalid arguments: {e}")))
}

fn lock(rt: &SharedRuntime) -> std::result::Result<MutexGuard<'_, Runtime>, ServiceError> {
    rt.lock()
        .map_err(|_| ServiceError::new(ErrorCode::Internal, "runtime lock poisoned"))
}

fn expose<A, R, F>(router: &Router, rt: &SharedRuntime, name: &str, f: F) -> Result<()>
where
    A: DeserializeOwned,
    R: Serialize,
    F: Fn(&mut Runtime, A) -> Result<R> + Send + Sync + 'static,
{
    let rt = Arc::clone(rt);
    router.advertise_fn(name, move |args| {
        let args: A = parse_args(args)?;
        let mut guard = lock(&rt)?;
        let out = f(&mut guard, args)?;
        serde_json::to_value(out).map_err(|e| ServiceError::new(ErrorCode::Internal, e.to_string()))
    })
}

/// Advertises every robot, tour, location and analytics service.
pub fn register_services(router: &Router, rt: &SharedRuntime) -> Result<()> {
    use names::*;

    expose(router, rt, ROBOT_STATUS, |rt, _: NoArgs| Ok(rt.status()))?;
    expose(router, rt, MOTION_GOTO, |rt, goal: Pose2D| {
        rt.goto(goal)?;
        Ok(json!({ "accepted": true, "goal": goal }))
    })?;
    expose(router, rt, MOTION_TELEOP, |rt, a: TeleopArgs| {
        rt.teleop(a.direction)
    })?;
    expose(router, rt, SPEECH_SAY, |rt, a: SayArgs| rt.say(&a.text))?;

    expose(router, rt, TOUR_LIST, |rt, _: NoArgs| {
        let mut tours = rt.store().tours.clone();
        tours.sort_by(|a, b| crate::model::cmp_names(&a.name, &b.name));
        Ok(tours)
    })?;
    expose(router, rt, TOUR_GET, |rt, a: IdArgs| {
        rt.store()
            .tour(a.id)
            .cloned()
            .ok_or_else(|| Error::not_found(format!("no tour with id {}", a.id)))
    })?;
    expose(router, rt, TOUR_CREATE, |rt, a: NewTour| rt.create_tour(a))?;
    expose(router, rt, TOUR_EDIT, |rt, a: EditTourArgs| {
        rt.edit_tour(a.id, a.patch)
    })?;
    expose(router, rt, TOUR_COPY, |rt, a: CopyArgs| {
        rt.copy_tour(a.id, a.name.as_deref())
    })?;
    expose(router, rt, TOUR_DELETE, |rt, a: IdArgs| {
        rt.delete_tour(a.id)
    })?;
    expose(router, rt, TOUR_EXECUTE, |rt, a: IdArgs| {
        let run_id = rt.execute_tour(a.id)?;
        Ok(json!({ "run_id": run_id, "tour_id": a.id }))
    })?;
    expose(router, rt, TOUR_ABORT, |rt, _: NoArgs| rt.abort_tour())?;

    expose(router, rt, LOCATION_SAVE, |rt, a: SaveLocationArgs| {
        rt.save_location(&a.name, &a.description)
    })?;
    expose(router, rt, LOCATION_LIST, |rt, _: NoArgs| {
        let mut locations = rt.store().locations.clone();
        locations.sort_by(|a, b| crate::model::cmp_names(&a.name, &b.name));
        Ok(locations)
    })?;
    expose(router, rt, LOCATION_GET, |rt, a: IdArgs| {
        rt.store()
            .location(a.id)
            .cloned()
            .ok_or_else(|| Error::not_found(format!("no location with id {}", a.id)))
    })?;
    expose(router, rt, LOCATION_EDIT, |rt, a: EditLocationArgs| {
        rt.edit_location(a.id, a.patch)
    })?;
    expose(router, rt, LOCATION_DELETE, |rt, a: IdArgs| {
        rt.delete_location(a.id)
    })?;
    expose(router, rt, STORE_SEARCH, |rt, a: SearchArgs| {
        Ok(rt.search(&a.query))
    })?;

    expose(router, rt, STATS_MONTHLY, |rt, a: WindowArgs| {
        rt.monthly_stats(a.months.unwrap_or(DEFAULT_WINDOW_MONTHS))
    })?;
    expose(router, rt, STATS_TYPES, |rt, a: WindowArgs| {
        rt.type_distribution(a.months.unwrap_or(DEFAULT_WINDOW_MONTHS))
    })?;
    expose(router, rt, STATS_TOUR, |rt, a: IdArgs| rt.tour_detail(a.id))?;
    expose(router, rt, RECOMMEND_POPULAR, |rt, a: PopularArgs| {
        rt.recommend(&RecommendationParams {
            top_k: a.k.unwrap_or(DEFAULT_TOP_K),
            window_months: a.months.unwrap_or(DEFAULT_WINDOW_MONTHS),
            ..RecommendationParams::default()
        })
    })?;
    expose(
        router,
        rt,
        RECOMMEND_CUSTOM,
        |rt, p: RecommendationParams| rt.recommend(&p),
    )?;
    Ok(())
}

/// Advances the runtime one tick and publishes the resulting pose and any
/// tour progress. Returns the number of frames delivered.
pub fn tick_once(rt: &SharedRuntime, router: &Router) -> usize {
    let (pose, events) = {
        let mut guard = match rt.lock() {
            Ok(g) => g,
            Err(poisoned) => poisoned.into_inner(),
        };
        let pose = guard.step();
        (pose, guard.drain_events())
    };
    let mut delivered = router.publish(names::TOPIC_POSE, json!(pose));
    for event in events {
        delivered += router.publish(names::TOPIC_PROGRESS, json!(event));
    }
    delivered
}

/// Ticks the runtime at its configured rate until the task is aborted.
pub fn spawn_tick_loop(rt: SharedRuntime, router: Router) -> JoinHandle<()> {
    let period = {
        let guard = rt.lock().expect("runtime lock");
        Duration::from_secs_f64(guard.sim_config().tick)
    };
    tokio::spawn(async move {
        let mut interval = tokio::time::interval(period);
        interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            interval.tick().await;
            tick_once(&rt, &router);
        }
    })
}
