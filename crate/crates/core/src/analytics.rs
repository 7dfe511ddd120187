//! Run-history statistics and popularity recommendations.
//!
//! All windows are calendar months in UTC: a window of `n` months ending at
//! `now` covers the month containing `now` and the `n - 1` months before it.
//! Popularity is the number of completed runs inside the window.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use chrono::Datelike;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::model::{cmp_names, name_key, Id, RunOutcome, Timestamp, Tour, TourRun};

/// Type bucket for runs whose tour no longer exists.
pub const DELETED_TYPE: &str = "(deleted)";

pub const DEFAULT_WINDOW_MONTHS: u32 = 6;
pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct YearMonth {
    pub year: i32,
    /// 1..=12
    pub month: u32,
}

impl YearMonth {
    pub fn of(ts: Timestamp) -> Self {
        let dt = ts.as_datetime();
        YearMonth {
            year: dt.year(),
            month: dt.month(),
        }
    }

    fn index(self) -> i64 {
        i64::from(self.year) * 12 + i64::from(self.month) - 1
    }

    fn from_index(index: i64) -> Self {
        YearMonth {
            year: index.div_euclid(12) as i32,
            month: index.rem_euclid(12) as u32 + 1,
        }
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl Serialize for YearMonth {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

/// Contiguous range of calendar months ending with the month of `now`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MonthWindow {
    oldest: i64,
    newest: i64,
}

impl MonthWindow {
    pub fn ending_at(now: Timestamp, months: u32) -> Result<Self> {
        if months == 0 {
            return Err(Error::validation("window must cover at least one month"));
        }
        let newest = YearMonth::of(now).index();
        Ok(MonthWindow {
            oldest: newest - i64::from(months) + 1,
            newest,
        })
    }

    pub fn contains(&self, ts: Timestamp) -> bool {
        (self.oldest..=self.newest).contains(&YearMonth::of(ts).index())
    }

    pub fn months(&self) -> impl Iterator<Item = YearMonth> {
        (self.oldest..=self.newest).map(YearMonth::from_index)
    }

    pub fn oldest(&self) -> YearMonth {
        YearMonth::from_index(self.oldest)
    }

    pub fn newest(&self) -> YearMonth {
        YearMonth::from_index(self.newest)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonthCount {
    pub month: YearMonth,
    pub run_count: u64,
}

/// Run counts per month, oldest first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonthlyStats {
    pub months: Vec<MonthCount>,
}

impl MonthlyStats {
    pub fn total(&self) -> u64 {
        self.months.iter().map(|m| m.run_count).sum()
    }
}

pub fn monthly_counts(
    runs: &[TourRun],
    now: Timestamp,
    window_months: u32,
) -> Result<MonthlyStats> {
    let window = MonthWindow::ending_at(now, window_months)?;
    let mut counts: BTreeMap<YearMonth, u64> = window.months().map(|m| (m, 0)).collect();
    for run in runs.iter().filter(|r| window.contains(r.started_at)) {
        *counts
            .get_mut(&YearMonth::of(run.started_at))
            .expect("month in window") += 1;
    }
    Ok(MonthlyStats {
        months: counts
            .into_iter()
            .map(|(month, run_count)| MonthCount { month, run_count })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TypeDistribution {
    pub counts: BTreeMap<String, u64>,
    pub total: u64,
}

/// Counts in-window runs by their tour's current type.
pub fn type_distribution(
    runs: &[TourRun],
    tours: &[Tour],
    now: Timestamp,
    window_months: u32,
) -> Result<TypeDistribution> {
    let window = MonthWindow::ending_at(now, window_months)?;
    let types: HashMap<Id, &str> = tours.iter().map(|t| (t.id, t.tour_type.as_str())).collect();
    let mut counts = BTreeMap::new();
    let mut total = 0;
    for run in runs.iter().filter(|r| window.contains(r.started_at)) {
        let ty = types.get(&run.tour_id).copied().unwrap_or(DELETED_TYPE);
        *counts.entry(ty.to_string()).or_insert(0) += 1;
        total += 1;
    }
    Ok(TypeDistribution { counts, total })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TourDetail {
    pub tour_id: Id,
    /// Absent when the tour has been deleted.
    pub name: Option<String>,
    pub total_runs: u64,
    pub completed: u64,
    pub aborted: u64,
    pub failed: u64,
    /// Mean over completed runs only; absent when there are none.
    pub mean_duration_secs: Option<f64>,
    pub last_run_at: Option<Timestamp>,
}

pub fn tour_detail(tour_id: Id, tour: Option<&Tour>, runs: &[TourRun]) -> Result<TourDetail> {
    let mine: Vec<&TourRun> = runs.iter().filter(|r| r.tour_id == tour_id).collect();
    if tour.is_none() && mine.is_empty() {
        return Err(Error::not_found(format!(
            "no tour or runs with id {tour_id}"
        )));
    }
    let count = |o: RunOutcome| mine.iter().filter(|r| r.outcome == o).count() as u64;
    let completed_durations: Vec<f64> = mine
        .iter()
        .filter(|r| r.outcome == RunOutcome::Completed)
        .map(|r| r.duration_secs() as f64)
        .collect();
    let mean_duration_secs = (!completed_durations.is_empty())
        .then(|| completed_durations.iter().sum::<f64>() / completed_durations.len() as f64);
    Ok(TourDetail {
        tour_id,
        name: tour.map(|t| t.name.clone()),
        total_runs: mine.len() as u64,
        completed: count(RunOutcome::Completed),
        aborted: count(RunOutcome::Aborted),
        failed: count(RunOutcome::Failed),
        mean_duration_secs,
        last_run_at: mine.iter().map(|r| r.started_at).max(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RecommendationParams {
    pub tour_type: Option<String>,
    /// minutes
    pub max_duration: Option<u32>,
    pub window_months: u32,
    pub top_k: usize,
}

impl Default for RecommendationParams {
    fn default() -> Self {
        RecommendationParams {
            tour_type: None,
            max_duration: None,
            window_months: DEFAULT_WINDOW_MONTHS,
            top_k: DEFAULT_TOP_K,
        }
    }
}

impl RecommendationParams {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::validation("top_k must be at least 1"));
        }
        if self.window_months == 0 {
            return Err(Error::validation("window_months must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Recommendation {
    pub tour: Tour,
    pub run_count: u64,
}

/// Filters tours by the params, then ranks by completed runs in the window
/// (descending) with ties broken by name.
pub fn recommend(
    tours: &[Tour],
    runs: &[TourRun],
    now: Timestamp,
    params: &RecommendationParams,
) -> Result<Vec<Recommendation>> {
    params.validate()?;
    let window = MonthWindow::ending_at(now, params.window_months)?;
    let mut popularity: HashMap<Id, u64> = HashMap::new();
    for run in runs
        .iter()
        .filter(|r| r.outcome == RunOutcome::Completed && window.contains(r.started_at))
    {
        *popularity.entry(run.tour_id).or_insert(0) += 1;
    }
    let wanted_type = params.tour_type.as_deref().map(|t| name_key(t.trim()));
    let mut ranked: Vec<Recommendation> = tours
        .iter()
        .filter(|t| {
            wanted_type
                .as_ref()
                .is_none_or(|w| name_key(&t.tour_type) == *w)
        })
        .filter(|t| {
            params
                .max_duration
                .is_none_or(|max| t.expected_duration <= max)
        })
        .map(|t| Recommendation {
            tour: t.clone(),
            run_count: popularity.get(&t.id).copied().unwrap_or(0),
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.run_count
            .cmp(&a.run_count)
            .then_with(|| cmp_names(&a.tour.name, &b.tour.name))
    });
    ranked.truncate(params.top_k);
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{new_id, Stop};
    use chrono::{TimeZone, Utc};

    fn ts(y: i32, m: u32, d: u32) -> Timestamp {
        Timestamp::from_datetime(Utc.with_ymd_and_hms(y, m, d, 12, 0, 0).unwrap())
    }

    fn tour(name: &str, ty: &str, minutes: u32) -> Tour {
        Tour {
            id: new_id(),
            name: name.into(),
            tour_type: ty.into(),
            stops: vec![Stop::at(new_id())],
            expected_duration: minutes,
            created_at: ts(2024, 1, 1),
            updated_at: ts(2024, 1, 1),
        }
    }

    fn run(tour: Id, start: Timestamp, secs: i64, outcome: RunOutcome) -> TourRun {
        TourRun {
            run_id: new_id(),
            tour_id: tour,
            started_at: start,
            ended_at: Timestamp::from_unix(start.unix() + secs),
            outcome,
            stops_visited: 1,
        }
    }

    #[test]
    fn empty_history_gives_zero_buckets() {
        let stats = monthly_counts(&[], ts(2026, 10, 19), 6).unwrap();
        let labels: Vec<String> = stats.months.iter().map(|m| m.month.to_string()).collect();
        assert_eq!(
            labels,
            ["2026-05", "2026-06", "2026-07", "2026-08", "2026-09", "2026-10"]
        );
        assert!(stats.months.iter().all(|m| m.run_count == 0));
    }

    #[test]
    fn old_runs_fall_out_of_the_window() {
        let t = new_id();
        let now = ts(2026, 10, 19);
        let runs = vec![
            run(t, ts(2026, 10, 1), 60, RunOutcome::Completed),
            run(t, ts(2026, 10, 2), 60, RunOutcome::Aborted),
            run(t, ts(2026, 10, 3), 60, RunOutcome::Failed),
            run(t, ts(2026, 3, 15), 60, RunOutcome::Completed),
        ];
        let stats = monthly_counts(&runs, now, 6).unwrap();
        assert_eq!(stats.months.last().unwrap().run_count, 3);
        assert_eq!(stats.total(), 3);
    }

    #[test]
    fn window_boundary_is_inclusive() {
        let t = new_id();
        let first_instant =
            Timestamp::from_datetime(Utc.with_ymd_and_hms(2026, 5, 1, 0, 0, 0).unwrap());
        let last_before = Timestamp::from_unix(first_instant.unix() - 1);
        let runs = vec![
            run(t, first_instant, 1, RunOutcome::Completed),
            run(t, last_before, 1, RunOutcome::Completed),
        ];
        let stats = monthly_counts(&runs, ts(2026, 10, 31), 6).unwrap();
        assert_eq!(stats.months[0].run_count, 1);
        assert_eq!(stats.total(), 1);
    }

    #[test]
    fn window_spans_year_boundary() {
        let stats = monthly_counts(&[], ts(2026, 2, 10), 4).unwrap();
        let labels: Vec<String> = stats.months.iter().map(|m| m.month.to_string()).collect();
        assert_eq!(labels, ["2025-11", "2025-12", "2026-01", "2026-02"]);
        assert!(monthly_counts(&[], ts(2026, 2, 10), 0).is_err());
    }

    #[test]
    fn distribution_by_type() {
        let lab = tour("Lab", "lab", 10);
        let expo = tour("Expo", "exhibition", 10);
        let now = ts(2026, 10, 19);
        let gone = new_id();
        let runs = vec![
            run(lab.id, ts(2026, 9, 1), 1, RunOutcome::Completed),
            run(lab.id, ts(2026, 9, 2), 1, RunOutcome::Aborted),
            run(expo.id, ts(2026, 8, 2), 1, RunOutcome::Completed),
            run(gone, ts(2026, 8, 3), 1, RunOutcome::Completed),
        ];
        let tours = vec![lab, expo];
        let d = type_distribution(&runs[..3], &tours, now, 6).unwrap();
        assert_eq!(
            d.counts,
            BTreeMap::from([("lab".into(), 2), ("exhibition".into(), 1)])
        );
        assert_eq!(d.total, 3);

        let d = type_distribution(&runs, &tours, now, 6).unwrap();
        assert_eq!(d.counts[DELETED_TYPE], 1);
        assert_eq!(d.total, 4);

        let d = type_distribution(&[], &tours, now, 6).unwrap();
        assert!(d.counts.is_empty());
        assert_eq!(d.total, 0);
    }

    #[test]
    fn detail_examples() {
        let zoo = tour("Zoo", "lab", 20);
        let runs = vec![
            run(zoo.id, ts(2026, 9, 1), 100, RunOutcome::Completed),
            run(zoo.id, ts(2026, 9, 5), 200, RunOutcome::Completed),
            run(zoo.id, ts(2026, 9, 3), 50, RunOutcome::Aborted),
        ];
        let d = tour_detail(zoo.id, Some(&zoo), &runs).unwrap();
        assert_eq!(d.total_runs, 3);
        assert_eq!((d.completed, d.aborted, d.failed), (2, 1, 0));
        assert_eq!(d.mean_duration_secs, Some(150.0));
        assert_eq!(d.last_run_at, Some(ts(2026, 9, 5)));

        let d = tour_detail(zoo.id, Some(&zoo), &[]).unwrap();
        assert_eq!(d.total_runs, 0);
        assert_eq!(d.mean_duration_secs, None);
        assert_eq!(d.last_run_at, None);

        assert!(tour_detail(new_id(), None, &runs).is_err());
        let d = tour_detail(zoo.id, None, &runs).unwrap();
        assert_eq!(d.name, None);
        assert_eq!(d.total_runs, 3);
    }

    #[test]
    fn recommendation_ranking() {
        let a = tour("A", "lab", 20);
        let b = tour("B", "lab", 20);
        let now = ts(2026, 10, 19);
        let mut runs = Vec::new();
        for _ in 0..3 {
            runs.push(run(a.id, ts(2026, 10, 1), 1, RunOutcome::Completed));
        }
        for _ in 0..5 {
            runs.push(run(b.id, ts(2026, 10, 1), 1, RunOutcome::Completed));
        }
        // aborted runs do not count toward popularity
        for _ in 0..9 {
            runs.push(run(a.id, ts(2026, 10, 1), 1, RunOutcome::Aborted));
        }
        let params = RecommendationParams {
            top_k: 2,
            ..RecommendationParams::default()
        };
        let tours = vec![a.clone(), b.clone()];
        let r = recommend(&tours, &runs, now, &params).unwrap();
        assert_eq!(
            r.iter().map(|x| x.tour.name.as_str()).collect::<Vec<_>>(),
            ["B", "A"]
        );
        assert_eq!(r[0].run_count, 5);

        let r = recommend(&[b.clone(), a.clone()], &[], now, &params).unwrap();
        assert_eq!(
            r.iter().map(|x| x.tour.name.as_str()).collect::<Vec<_>>(),
            ["A", "B"]
        );
    }

    #[test]
    fn recommendation_filters() {
        let short = tour("Short", "lab", 10);
        let long = tour("Long", "lab", 30);
        let expo = tour("Expo", "exhibition", 5);
        let now = ts(2026, 10, 19);
        let runs: Vec<TourRun> = (0..10)
            .map(|_| run(long.id, ts(2026, 10, 1), 1, RunOutcome::Completed))
            .collect();
        let tours = vec![short, long, expo];
        let params = RecommendationParams {
            max_duration: Some(10),
            ..RecommendationParams::default()
        };
        let r = recommend(&tours, &runs, now, &params).unwrap();
        assert_eq!(
            r.iter().map(|x| x.tour.name.as_str()).collect::<Vec<_>>(),
            ["Expo", "Short"]
        );

        let params = RecommendationParams {
            tour_type: Some("LAB".into()),
            ..RecommendationParams::default()
        };
        let r = recommend(&tours, &runs, now, &params).unwrap();
        assert_eq!(
            r.iter().map(|x| x.tour.name.as_str()).collect::<Vec<_>>(),
            ["Long", "Short"]
        );

        let bad = RecommendationParams {
            top_k: 0,
            ..RecommendationParams::default()
        };
        assert!(recommend(&tours, &runs, now, &bad).is_err());
    }
}
