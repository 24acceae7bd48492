//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration as StdDuration, Instant};

use chrono::{Datelike, Duration, NaiveDate, TimeZone, Timelike, Utc, Weekday};
use jitai_core::dispatch::MockProvider;
use jitai_core::personalize::{
    hourly_candidates, plan_day, predict_proba, train_forest, train_participant, FeatureVector, ForestParams,
    PersonalModel, TrainingConfig, TrainingRow,
};
use jitai_core::sim::{run_phase, summarize, write_run_dir, CohortSpec, Scenario};
use jitai_core::spatial::{bin, centroid, export_geojson, hex_center, project, read_geojson_cells, to_hex};
use jitai_core::store::{decode_csv, SeriesName, Series, StreamKey, Store};
use jitai_core::triggers::Engine;
use jitai_core::weather::{FixtureProvider, FixtureRow, WithOutages};
use jitai_core::{
    GeoPoint, Mechanism, MicroSurveyResponse, NoisePreference, NotificationRecord,
    ParticipantId, Phase, PhaseConfig, PreferenceKind, PreferenceLabel, Record, SensorKind, SensorSample,
    ThermalPreference, Timestamp, TriggerConfig, WeatherObservation,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SGT: chrono_tz::Tz = chrono_tz::Asia::Singapore;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn local(date: NaiveDate, h: u32, m: u32) -> Timestamp {
    SGT.from_local_datetime(&date.and_hms_opt(h, m, 0).unwrap())
        .unwrap()
        .with_timezone(&Utc)
}

fn pid(i: usize) -> ParticipantId {
    ParticipantId::new(format!("P{i:03}")).unwrap()
}

fn survey(p: &ParticipantId, t: Timestamp, thermal: ThermalPreference, noise: NoisePreference) -> MicroSurveyResponse {
    MicroSurveyResponse {
        participant: p.clone(),
        started_at: t,
        ended_at: t,
        lat: 1.2966,
        lon: 103.7764,
        location_acquired_at: t,
        thermal,
        noise,
        sound_source: None,
    }
}

fn sound(p: &ParticipantId, t: Timestamp, value: f64) -> Record {
    Record::Sensor(SensorSample {
        participant: p.clone(),
        kind: SensorKind::SoundLevel,
        value,
        observed_at: t,
    })
}

// 1. Budget law over 10,000 randomized participant-days.
fn budget_law() -> Outcome {
    let started = Instant::now();
    let store = Store::new();
    let phase = PhaseConfig {
        phase: Phase::Phase1,
        ..PhaseConfig::default()
    };
    let mut engine = Engine::new(&store, MockProvider::new(), TriggerConfig::default(), phase);
    let mut rng = ChaCha8Rng::seed_from_u64(20230306);
    let first = NaiveDate::from_ymd_opt(2023, 1, 2).unwrap();
    let (n_participants, n_days) = (50, 200);
    let mut log = Vec::new();
    for i in 0..n_participants {
        let p = pid(i);
        let fresh: BTreeSet<ParticipantId> = [p.clone()].into_iter().collect();
        for d in 0..n_days {
            let date = first + Duration::days(d);
            let mut minutes: Vec<u32> = (0..rng.gen_range(0..=12)).map(|_| rng.gen_range(0..1440)).collect();
            minutes.sort_unstable();
            for m in minutes {
                let t = local(date, m / 60, m % 60);
                store.append(
                    &StreamKey::new(p.clone(), Series::Weather),
                    Record::Weather(WeatherObservation {
                        station_id: "S1".into(),
                        station_lat: 1.3,
                        station_lon: 103.8,
                        air_temperature: rng.gen_range(28.0..34.0),
                        rainfall: None,
                        observed_at: t,
                    }),
                ).map_err(|e| e.to_string())?;
                if rng.gen_bool(0.5) {
                    store
                        .append(&StreamKey::new(p.clone(), Series::Sensor(SensorKind::SoundLevel)), sound(&p, t, rng.gen_range(60.0..80.0)))
                        .map_err(|e| e.to_string())?;
                }
                log.extend(engine.run_tick(t, std::slice::from_ref(&p), &fresh).map_err(|e| e.to_string())?);
            }
        }
    }
    let mut per_day: HashMap<(ParticipantId, NaiveDate), Vec<u32>> = HashMap::new();
    let mut sent = 0;
    for r in log.iter().filter(|r| r.delivery_status.is_sent()) {
        sent += 1;
        let lt = r.event.fired_at.with_timezone(&SGT);
        ensure!(!matches!(lt.weekday(), Weekday::Sat | Weekday::Sun), "sent on weekend at {lt}");
        ensure!((9..19).contains(&lt.hour()), "sent outside window at {lt}");
        per_day
            .entry((r.event.participant.clone(), lt.date_naive()))
            .or_default()
            .push(r.sequence_in_day.unwrap_or(0));
    }
    let max = per_day.values().map(Vec::len).max().unwrap_or(0);
    ensure!(max <= 4, "a participant-day has {max} sent records");
    for seqs in per_day.values() {
        ensure!(*seqs == (1..=seqs.len() as u32).collect::<Vec<_>>(), "non-consecutive sequence {seqs:?}");
    }
    ensure!(engine.provider().len() == sent, "outbox {} != sent {sent}", engine.provider().len());
    let elapsed = started.elapsed();
    ensure!(elapsed < StdDuration::from_secs(10), "took {elapsed:.2?}");
    Ok(format!(
        "{} participant-days, {} decisions, {sent} sent, max {max}/day, {elapsed:.2?}",
        n_participants * n_days as usize,
        log.len()
    ))
}

// 2. Threshold events equal a brute-force scan.
fn threshold_exactness() -> Outcome {
    let mut trials = 0;
    let mut total_events = 0;
    for seed in 0..25u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let days = [NaiveDate::from_ymd_opt(2023, 3, 6).unwrap(), NaiveDate::from_ymd_opt(2023, 3, 7).unwrap()];
        let ticks: Vec<Timestamp> = days
            .iter()
            .flat_map(|d| (0..=120).map(move |k| local(*d, 9, 0) + Duration::minutes(5 * k)))
            .collect();
        let temps: Vec<f64> = ticks.iter().map(|_| f64::from(rng.gen_range(56..=64)) / 2.0).collect();
        let rows: Vec<FixtureRow> = ticks
            .iter()
            .zip(&temps)
            .map(|(t, temp)| FixtureRow {
                station_id: "S1".into(),
                lat: 1.2966,
                lon: 103.7764,
                timestamp: *t,
                air_temperature_c: *temp,
            })
            .collect();
        let outages: BTreeSet<Timestamp> = ticks.iter().copied().filter(|_| rng.gen_bool(0.1)).collect();
        let provider = WithOutages {
            inner: FixtureProvider::from_rows(rows).map_err(|e| e.to_string())?,
            outages: outages.clone(),
        };
        let registry = provider.inner.registry().clone();

        let store = Store::new();
        let participants: Vec<ParticipantId> = (0..3).map(pid).collect();
        let mut oracle: BTreeSet<(ParticipantId, PreferenceKind, Timestamp, u64)> = BTreeSet::new();
        for p in &participants {
            store
                .append(
                    &StreamKey::new(p.clone(), Series::Surveys),
                    Record::Survey(survey(p, local(days[0], 8, 0), ThermalPreference::NoChange, NoisePreference::NoChange)),
                )
                .map_err(|e| e.to_string())?;
            for d in days {
                for half in 0..20 {
                    let t = local(d, 9, 0) + Duration::minutes(30 * half);
                    let v = f64::from(rng.gen_range(132..=148)) / 2.0;
                    store
                        .append(&StreamKey::new(p.clone(), Series::Sensor(SensorKind::SoundLevel)), sound(p, t, v))
                        .map_err(|e| e.to_string())?;
                    if v > 70.0 {
                        oracle.insert((p.clone(), PreferenceKind::Noise, t, v.to_bits()));
                    }
                }
            }
            for (t, temp) in ticks.iter().zip(&temps) {
                if !outages.contains(t) && *temp > 30.0 {
                    oracle.insert((p.clone(), PreferenceKind::Thermal, *t, temp.to_bits()));
                }
            }
        }

        let phase = PhaseConfig {
            phase: Phase::Phase1,
            ..PhaseConfig::default()
        };
        let mut engine = Engine::new(&store, MockProvider::new(), TriggerConfig::default(), phase);
        let mut got = BTreeSet::new();
        for t in &ticks {
            for r in engine.step(&provider, &registry, &participants, *t).map_err(|e| e.to_string())? {
                ensure!(r.event.mechanism == Mechanism::Threshold, "non-threshold record in phase 1");
                got.insert((r.event.participant.clone(), r.event.kind, r.event.fired_at, r.event.cause.value().to_bits()));
            }
        }
        ensure!(got == oracle, "seed {seed}: {} events vs {} in scan", got.len(), oracle.len());
        trials += 1;
        total_events += got.len();
    }
    Ok(format!("{trials} randomized series, {total_events} events, exact set equality"))
}

fn surveys_of(store: &Store, p: &ParticipantId) -> Vec<MicroSurveyResponse> {
    store
        .query_range(&StreamKey::new(p.clone(), Series::Surveys), Timestamp::MIN_UTC, Timestamp::MAX_UTC)
        .into_iter()
        .filter_map(|r| match r {
            Record::Survey(s) => Some(s),
            _ => None,
        })
        .collect()
}

// 3. Mechanism switch exactly at the 50th survey.
fn personalization_protocol() -> Outcome {
    let spec = CohortSpec::new(12, Phase::Phase2, 20, 3);
    let run = run_phase(&spec).map_err(|e| e.to_string())?;
    let mut switched = 0;
    let mut personalized = 0;
    for p in &run.participants {
        let surveys = surveys_of(&run.store, p);
        let mine: Vec<&NotificationRecord> = run.notifications.iter().filter(|r| &r.event.participant == p).collect();
        match surveys.get(49) {
            Some(fiftieth) => {
                let t50 = fiftieth.ended_at;
                ensure!(run.switched_at.get(p) == Some(&t50), "{p}: switch time mismatch");
                for r in &mine {
                    match r.event.mechanism {
                        Mechanism::Personalized => {
                            ensure!(r.event.fired_at > t50, "{p}: personalized at {} <= {t50}", r.event.fired_at)
                        }
                        Mechanism::Threshold => {
                            ensure!(r.event.fired_at < t50, "{p}: threshold at {} >= {t50}", r.event.fired_at)
                        }
                    }
                }
                switched += 1;
                personalized += mine.iter().filter(|r| r.event.mechanism == Mechanism::Personalized).count();
            }
            None => ensure!(
                mine.iter().all(|r| r.event.mechanism == Mechanism::Threshold),
                "{p}: personalized before 50 surveys"
            ),
        }
    }
    ensure!(switched > 0 && personalized > 0, "vacuous: {switched} switched, {personalized} personalized");

    let phase1 = run_phase(&CohortSpec { phase: Phase::Phase1, ..spec }).map_err(|e| e.to_string())?;
    let p1 = phase1.notifications.iter().filter(|r| r.event.mechanism == Mechanism::Personalized).count();
    ensure!(p1 == 0, "phase 1 has {p1} personalized records");
    Ok(format!(
        "phase 2: {switched}/12 switched, {personalized} personalized records after switch; phase 1: 0 personalized of {}",
        phase1.notifications.len()
    ))
}

fn single_tree() -> TrainingConfig {
    TrainingConfig {
        grid: vec![ForestParams {
            n_trees: 1,
            max_depth: None,
            min_leaf: 1,
            feature_subset_size: None,
            bootstrap: false,
        }],
        cv_folds: 3,
        seed: 0,
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

// 4. Random forest vs majority-per-hour oracle; the cooler-at-10:00 planning case.
fn rf_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let hours: Vec<u32> = (9..=19).collect();
    let p = pid(0);
    let fixtures = 200;
    for f in 0..fixtures {
        let kind = if f % 2 == 0 { PreferenceKind::Thermal } else { PreferenceKind::Noise };
        let label_of: BTreeMap<u32, usize> = hours.iter().map(|h| (*h, rng.gen_range(0..3))).collect();
        let dist = {
            let a: f64 = rng.gen_range(0.0..1.0);
            let b: f64 = rng.gen_range(0.0..(1.0 - a));
            [a, b, 1.0 - a - b]
        };
        let mut row_hours = hours.clone();
        row_hours.extend((0..9).map(|_| hours[rng.gen_range(0..hours.len())]));
        let rows: Vec<TrainingRow> = row_hours
            .iter()
            .map(|h| TrainingRow {
                features: FeatureVector {
                    class_cumulative: dist,
                    hour_of_day: *h,
                },
                label: PreferenceLabel::from_class(kind, label_of[h]).unwrap(),
            })
            .collect();
        let model = match train_forest(&p, kind, &rows, &single_tree()) {
            Ok(m) => m,
            Err(e) => return Err(e.to_string()),
        };
        for h in &hours {
            let mut votes = [0usize; 3];
            for (rh, row) in row_hours.iter().zip(&rows) {
                if rh == h {
                    votes[row.label.class_index()] += 1;
                }
            }
            let majority = (0..3).fold(0, |b, c| if votes[c] > votes[b] { c } else { b });
            let proba = predict_proba(&model, &FeatureVector { class_cumulative: dist, hour_of_day: *h });
            ensure!(argmax(&proba) == majority, "fixture {f} hour {h}: {proba:?} vs class {majority}");
        }
    }

    // Cooler is wanted at 10:00; every other hour is fine as is.
    let day0 = NaiveDate::from_ymd_opt(2023, 3, 6).unwrap();
    let history: Vec<MicroSurveyResponse> = (0..50)
        .map(|i| {
            // Every other survey is a 10:00 one; the rest cycle through the day.
            let h = if i % 2 == 0 { 10 } else { [9, 11, 12, 13, 14, 15, 16, 17, 18][(i as usize / 2) % 9] };
            let date = day0 + Duration::days(i64::from(i) / 5);
            let thermal = if h == 10 { ThermalPreference::PreferCooler } else { ThermalPreference::NoChange };
            survey(&p, local(date, h, 7 * (i as u32 % 8)), thermal, NoisePreference::NoChange)
        })
        .collect();
    let cfg = TriggerConfig::default();
    let (thermal, noise) = train_participant(&p, &history, &cfg, &TrainingConfig::default()).map_err(|e| e.to_string())?;
    let dist = jitai_core::personalize::history_distribution(&history, PreferenceKind::Thermal);
    let mut best: Option<(u32, f64)> = None;
    for h in 9..=19 {
        let proba = predict_proba(&thermal, &FeatureVector { class_cumulative: dist, hour_of_day: h });
        let top = argmax(&proba);
        if top != 1 && best.is_none_or(|(_, p)| proba[top] > p) {
            best = Some((h, proba[top]));
        }
    }
    let plan = plan_day(&thermal, &noise, &history, day0 + Duration::days(14), &cfg);
    let hourly: Vec<Vec<f64>> = (9..=19)
        .map(|h| predict_proba(&thermal, &FeatureVector { class_cumulative: dist, hour_of_day: h }))
        .collect();
    let (hour, prob) = best.ok_or_else(|| format!("no non-NoChange hour predicted: {hourly:.2?}"))?;
    ensure!(hour == 10, "oracle picked {hour}:00");
    ensure!(
        plan.entries.first().map(|e| (e.hour, e.target_label))
            == Some((10, PreferenceLabel::Thermal(ThermalPreference::PreferCooler))),
        "plan {:?}",
        plan.entries
    );
    Ok(format!(
        "{fixtures} fixtures x 11 hours exact; cooler-at-10 plan sends prefer_cooler at 10:00 (p = {prob:.2})"
    ))
}

fn random_history(rng: &mut ChaCha8Rng, p: &ParticipantId) -> Vec<MicroSurveyResponse> {
    let thermal = [ThermalPreference::PreferCooler, ThermalPreference::NoChange, ThermalPreference::PreferWarmer];
    let noise = [NoisePreference::PreferQuieter, NoisePreference::NoChange, NoisePreference::PreferLouder];
    let mixtures = |rng: &mut ChaCha8Rng| -> Vec<[f64; 3]> {
        (0..11)
            .map(|_| {
                let w: [f64; 3] = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..3.0), rng.gen_range(0.0..1.0)];
                let s: f64 = w.iter().sum();
                w.map(|x| x / s)
            })
            .collect()
    };
    let (mt, mn) = (mixtures(rng), mixtures(rng));
    let draw = |rng: &mut ChaCha8Rng, probs: [f64; 3]| {
        let u: f64 = rng.gen();
        if u < probs[0] {
            0
        } else if u < probs[0] + probs[1] {
            1
        } else {
            2
        }
    };
    let day0 = NaiveDate::from_ymd_opt(2023, 3, 6).unwrap();
    (0..50)
        .map(|i| {
            let h = rng.gen_range(9..19u32);
            let date = day0 + Duration::days(i / 5);
            let t = draw(rng, mt[(h - 9) as usize]);
            let n = draw(rng, mn[(h - 9) as usize]);
            survey(p, local(date, h, rng.gen_range(0..60)), thermal[t], noise[n])
        })
        .collect()
}

fn random_training(rng: &mut ChaCha8Rng) -> TrainingConfig {
    TrainingConfig {
        grid: vec![ForestParams {
            n_trees: rng.gen_range(1..=12),
            max_depth: [Some(1), Some(2), Some(4), None][rng.gen_range(0..4)],
            min_leaf: rng.gen_range(1..=3),
            feature_subset_size: [Some(1), Some(2), Some(3), None][rng.gen_range(0..4)],
            bootstrap: rng.gen_bool(0.7),
        }],
        cv_folds: 3,
        seed: rng.gen(),
    }
}

// 5. Plan shape across 1,000 random trained models.
fn plan_shape(models: &mut Vec<PersonalModel>) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = TriggerConfig::default();
    let date = NaiveDate::from_ymd_opt(2023, 4, 3).unwrap();
    let mut non_empty = 0;
    for i in 0..500 {
        let p = pid(i);
        let history = random_history(&mut rng, &p);
        let (t, n) = train_participant(&p, &history, &cfg, &random_training(&mut rng)).map_err(|e| e.to_string())?;
        for m in [&t, &n] {
            ensure!(hourly_candidates(m, &history, &cfg).len() <= 11, "more than 11 hourly candidates");
        }
        let plan = plan_day(&t, &n, &history, date, &cfg);
        ensure!(plan.entries.len() <= 4, "{p}: {} entries", plan.entries.len());
        for e in &plan.entries {
            ensure!((9..=19).contains(&e.hour), "{p}: hour {}", e.hour);
            ensure!(!e.target_label.is_no_change(), "{p}: no_change entry");
            ensure!(e.probability > 0.0 && e.probability <= 1.0, "{p}: probability {}", e.probability);
        }
        ensure!(
            plan.entries.windows(2).all(|w| w[0].probability >= w[1].probability),
            "{p}: plan not sorted"
        );
        if !plan.entries.is_empty() {
            non_empty += 1;
        }
        models.push(t);
        models.push(n);
    }
    let mut empty = 0;
    for i in 0..20 {
        let p = pid(1000 + i);
        let history: Vec<_> = random_history(&mut rng, &p)
            .into_iter()
            .map(|mut s| {
                s.thermal = ThermalPreference::NoChange;
                s.noise = NoisePreference::NoChange;
                s
            })
            .collect();
        let (t, n) = train_participant(&p, &history, &cfg, &random_training(&mut rng)).map_err(|e| e.to_string())?;
        ensure!(plan_day(&t, &n, &history, date, &cfg).entries.is_empty(), "{p}: all-NoChange history planned sends");
        empty += 1;
    }
    Ok(format!(
        "{} models, {non_empty}/500 plans non-empty, {empty}/20 all-NoChange histories gave empty plans",
        models.len()
    ))
}

// 6. predict_proba returns distributions.
fn probability_validity(models: &[PersonalModel]) -> Outcome {
    ensure!(!models.is_empty(), "no models to probe");
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let calls = 10_000;
    let mut worst: f64 = 0.0;
    for _ in 0..calls {
        let m = &models[rng.gen_range(0..models.len())];
        let w: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
        let s: f64 = w.iter().sum::<f64>().max(1e-12);
        let f = FeatureVector {
            class_cumulative: w.map(|x| x / s),
            hour_of_day: rng.gen_range(0..24),
        };
        let p = predict_proba(m, &f);
        ensure!(p.len() == 3, "length {}", p.len());
        ensure!(p.iter().all(|x| *x >= 0.0), "negative component {p:?}");
        worst = worst.max((p.iter().sum::<f64>() - 1.0).abs());
    }
    ensure!(worst <= 1e-9, "sum deviates by {worst:e}");
    Ok(format!("{calls} calls, max |sum - 1| = {worst:.1e}"))
}

fn nearest_centre(x: f64, y: f64, edge: f64) -> (i64, i64) {
    let r0 = (y / (1.5 * edge)).round() as i64;
    let q0 = (x / (3f64.sqrt() * edge) - r0 as f64 / 2.0).round() as i64;
    let mut best = ((q0, r0), f64::INFINITY);
    for q in q0 - 3..=q0 + 3 {
        for r in r0 - 3..=r0 + 3 {
            let (cx, cy) = hex_center(q, r, edge);
            let d = (cx - x).powi(2) + (cy - y).powi(2);
            if d < best.1 {
                best = ((q, r), d);
            }
        }
    }
    best.0
}

// 7. Hex binning conserves counts; to_hex matches the nearest centre.
fn spatial_conservation() -> Outcome {
    let run = run_phase(&CohortSpec::new(16, Phase::Phase2, 12, 7).with_scenario(Scenario::AlwaysHot))
        .map_err(|e| e.to_string())?;
    let located = run
        .notifications
        .iter()
        .filter(|r| r.delivery_status.is_sent() && r.event.location.is_some())
        .count() as u64;
    let origin = centroid(&run.notifications).ok_or("no located sends")?;
    let mut cells = 0;
    for edge in [100.0, 250.0, 1000.0] {
        let b = bin(&run.notifications, origin, edge);
        ensure!(b.total() == located, "edge {edge}: {} binned vs {located}", b.total());
        let mut buf = Vec::new();
        export_geojson(&b, &mut buf).map_err(|e| e.to_string())?;
        let back = read_geojson_cells(&buf[..]).map_err(|e| e.to_string())?;
        ensure!(back == b.cells, "geojson round trip differs");
        cells += b.cells.len();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let o = GeoPoint::new(1.3, 103.8);
    for i in 0..1000 {
        let p = GeoPoint::new(o.lat + rng.gen_range(-0.05..0.05), o.lon + rng.gen_range(-0.05..0.05));
        let edge = rng.gen_range(50.0..1000.0);
        let (x, y) = project(p, o);
        ensure!(to_hex(p.lat, p.lon, o, edge) == nearest_centre(x, y, edge), "point {i} disagrees");
    }
    Ok(format!("{located} located sends conserved over {cells} cells at 3 edge sizes; 1000/1000 points match"))
}

fn dir_bytes(dir: &std::path::Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        out.insert(path.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&path).unwrap());
    }
    out
}

// 8. Byte-identical reruns; CSV and JSONL round trips are fixed points.
fn determinism_and_io() -> Outcome {
    let spec = CohortSpec::new(6, Phase::Phase2, 14, 11);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_run_dir(&run_phase(&spec).map_err(|e| e.to_string())?, a.path()).map_err(|e| e.to_string())?;
    let run = run_phase(&spec).map_err(|e| e.to_string())?;
    write_run_dir(&run, b.path()).map_err(|e| e.to_string())?;
    let (fa, fb) = (dir_bytes(a.path()), dir_bytes(b.path()));
    ensure!(fa.keys().eq(fb.keys()), "file sets differ");
    for (name, bytes) in &fa {
        ensure!(fb[name] == *bytes, "{name} differs between runs");
    }

    let all = Timestamp::MIN_UTC;
    let end = Timestamp::MAX_UTC;
    let (c1, c2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run.store.export_csv(&SeriesName::ALL, None, all, end, c1.path()).map_err(|e| e.to_string())?;
    let reloaded = Store::new();
    for name in SeriesName::ALL {
        let file = std::fs::File::open(c1.path().join(format!("{}.csv", name.file_stem()))).unwrap();
        reloaded.extend(decode_csv(file).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    }
    reloaded.export_csv(&SeriesName::ALL, None, all, end, c2.path()).map_err(|e| e.to_string())?;
    ensure!(dir_bytes(c1.path()) == dir_bytes(c2.path()), "CSV round trip is not a fixed point");

    let (j1, j2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run.store.save_snapshot(j1.path()).map_err(|e| e.to_string())?;
    Store::load_snapshot(j1.path())
        .and_then(|s| s.save_snapshot(j2.path()))
        .map_err(|e| e.to_string())?;
    ensure!(dir_bytes(j1.path()) == dir_bytes(j2.path()), "JSONL round trip is not a fixed point");
    Ok(format!("{} run files identical; CSV and JSONL round trips fixed", fa.len()))
}

// 9. Full-size cohort (55 x 20 weekdays) within a minute.
fn scale() -> Outcome {
    let started = Instant::now();
    let run = run_phase(&CohortSpec::new(55, Phase::Phase2, 20, 2023)).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let rows = summarize(&run.participants, &run.notifications);
    let threshold = rows.iter().filter(|r| r.threshold_sent > 0).count();
    let personalized = rows.iter().filter(|r| r.personalized_sent > 0).count();
    ensure!(elapsed < StdDuration::from_secs(60), "took {elapsed:.2?}");
    ensure!(
        personalized < threshold,
        "{personalized} personalized recipients not fewer than {threshold} threshold recipients"
    );
    Ok(format!(
        "55 x 20 weekdays in {elapsed:.2?}; {} trained, {personalized}/55 got personalized, {threshold}/55 got threshold",
        run.switched_at.len()
    ))
}

fn main() {
    let mut models = Vec::new();
    let mut failed = 0;
    let mut report = |n: u32, name: &str, f: &mut dyn FnMut() -> Outcome| {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {n} ({name}): PASS - {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL - {detail}");
            }
        }
    };
    report(1, "budget law", &mut budget_law);
    report(2, "threshold exactness", &mut threshold_exactness);
    report(3, "personalization protocol", &mut personalization_protocol);
    report(4, "random forest oracle", &mut rf_oracle);
    report(5, "plan shape", &mut || plan_shape(&mut models));
    report(6, "probability validity", &mut || probability_validity(&models));
    report(7, "spatial conservation", &mut spatial_conservation);
    report(8, "determinism and I/O", &mut determinism_and_io);
    report(9, "scale", &mut scale);
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all 9 acceptance criteria passed");
}
