use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, TimeZone};
use chrono_tz::Tz;
use jitai_core::dispatch::{MockProvider, PushProvider, Templates};
use jitai_core::personalize::{self, PersonalModel, TrainingConfig};
use jitai_core::sim::{self, CohortSpec};
use jitai_core::spatial;
use jitai_core::store::{decode_csv, parse_ts, SeriesName, Store};
use jitai_core::triggers::Engine;
use jitai_core::weather::FixtureProvider;
use jitai_core::{
    Error, GeoPoint, Mechanism, NotificationRecord, ParticipantId, PhaseConfig, Record, Result, Timestamp,
    TriggerConfig, ValidationError,
};
use serde_json::json;

use crate::{BinArgs, Command, ExportArgs, IngestArgs, PlanArgs, ReplayArgs, SimulateArgs, SummarizeArgs, TrainArgs};

pub(crate) fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Ingest(a) => ingest(a),
        Command::Simulate(a) => simulate(a),
        Command::Train(a) => train(a),
        Command::Plan(a) => plan(a),
        Command::Replay(a) => replay(a),
        Command::Summarize(a) => summarize(a),
        Command::Bin(a) => bin(a),
        Command::Export(a) => export(a),
    }
}

/// Names the file in I/O errors, which otherwise only carry the OS message.
fn at_path<T>(path: &Path, result: Result<T>) -> Result<T> {
    result.map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    })
}

fn open(path: &Path) -> Result<BufReader<File>> {
    at_path(path, File::open(path).map(BufReader::new).map_err(Error::from))
}

fn invalid(field: &'static str, rule: impl Into<String>) -> Error {
    Error::Validation(vec![ValidationError::new(field, rule)])
}

/// Loads a JSONL snapshot when `dir` holds one, else the long-format CSV
/// files of a run directory.
pub(crate) fn load_store(dir: &Path) -> Result<Store> {
    let has = |ext: &str| {
        SeriesName::ALL
            .iter()
            .any(|s| dir.join(format!("{}.{ext}", s.file_stem())).is_file())
    };
    if has("jsonl") {
        return Store::load_snapshot(dir);
    }
    if !has("csv") {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no store files in {}", dir.display()),
        )));
    }
    let store = Store::new();
    for name in SeriesName::ALL {
        let path = dir.join(format!("{}.csv", name.file_stem()));
        if path.is_file() {
            store.extend(decode_csv(open(&path)?)?)?;
        }
    }
    Ok(store)
}

/// The resolved config a run directory was produced with, if any.
fn run_spec(dir: &Path) -> Result<Option<CohortSpec>> {
    let path = dir.join("config.toml");
    if path.is_file() {
        CohortSpec::load(&path).map(Some)
    } else {
        Ok(None)
    }
}

fn notification_log(store: &Store) -> Vec<NotificationRecord> {
    store
        .select(SeriesName::Notification, None, Timestamp::MIN_UTC, Timestamp::MAX_UTC)
        .into_iter()
        .filter_map(|(_, e)| match e.record {
            Record::Notification(n) => Some(n),
            _ => None,
        })
        .collect()
}

fn ingest(args: IngestArgs) -> Result<()> {
    let store = if args.store.is_dir() {
        Store::load_snapshot(&args.store)?
    } else {
        Store::new()
    };
    let report = if args.input == Path::new("-") {
        store.import_jsonl(std::io::stdin().lock())?
    } else {
        store.import_jsonl(open(&args.input)?)?
    };
    store.save_snapshot(&args.store)?;
    for err in &report.errors {
        eprintln!("line {}: {}", err.line, err.message);
    }
    log::info!(
        "appended {} record(s) to {}",
        report.appended(),
        args.store.display()
    );
    if report.errors.is_empty() {
        Ok(())
    } else {
        Err(invalid("input", format!("{} line(s) rejected", report.errors.len())))
    }
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut spec = at_path(&args.config, CohortSpec::load(&args.config))?;
    if let Some(seed) = args.seed {
        spec.rng_seed = seed;
    }
    if let Some(n) = args.participants {
        spec.n_participants = n;
    }
    if let Some(days) = args.weekdays {
        spec.duration_weekdays = days;
    }
    if let Some(phase) = args.phase {
        spec.phase = phase.into();
    }
    if let Some(scenario) = args.scenario {
        spec = spec.with_scenario(scenario.into());
    }
    let run = match &spec.weather.fixture {
        Some(path) => at_path(path, sim::run_phase(&spec))?,
        None => sim::run_phase(&spec)?,
    };
    sim::write_run_dir(&run, &args.out)?;
    let sent = run.notifications.iter().filter(|n| n.delivery_status.is_sent()).count();
    log::info!(
        "{} participants, {} decisions, {} sent, {} switched; wrote {}",
        run.participants.len(),
        run.notifications.len(),
        sent,
        run.switched_at.len(),
        args.out.display()
    );
    Ok(())
}

struct TrainingInputs {
    participant: ParticipantId,
    history: Vec<jitai_core::MicroSurveyResponse>,
    trigger: TriggerConfig,
    training: TrainingConfig,
}

fn training_inputs(participant: &str, data: &Path, seed: Option<u64>) -> Result<TrainingInputs> {
    let participant = ParticipantId::new(participant)?;
    let spec = run_spec(data)?;
    let store = load_store(data)?;
    let (trigger, switch_count, run_seed) = match &spec {
        Some(s) => (s.trigger.clone(), s.personalization_switch_count, Some(s.rng_seed)),
        None => (TriggerConfig::default(), PhaseConfig::default().personalization_switch_count, None),
    };
    let mut training = TrainingConfig::default();
    if let Some(seed) = seed.or(run_seed) {
        training.seed = seed;
    }
    let history = personalize::training_history(&store, &participant, switch_count, Timestamp::MAX_UTC)?;
    Ok(TrainingInputs {
        participant,
        history,
        trigger,
        training,
    })
}

fn train(args: TrainArgs) -> Result<()> {
    let inputs = training_inputs(&args.participant, &args.data, args.seed)?;
    let (thermal, noise) =
        personalize::train_participant(&inputs.participant, &inputs.history, &inputs.trigger, &inputs.training)?;
    let doc = json!({
        "participant": inputs.participant,
        "training_size": inputs.history.len(),
        "seed": inputs.training.seed,
        "thermal": thermal,
        "noise": noise,
    });
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    match &args.out {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    log::info!(
        "thermal cv {:?}, noise cv {:?}",
        thermal.cv_accuracy,
        noise.cv_accuracy
    );
    Ok(())
}

fn read_models(path: &Path, participant: &ParticipantId) -> Result<(PersonalModel, PersonalModel)> {
    let doc: serde_json::Value = serde_json::from_reader(open(path)?)?;
    let model = |key: &str| -> Result<PersonalModel> {
        let value = doc
            .get(key)
            .cloned()
            .ok_or_else(|| Error::Parse(format!("{}: missing `{key}` model", path.display())))?;
        Ok(serde_json::from_value(value)?)
    };
    let (thermal, noise) = (model("thermal")?, model("noise")?);
    if &thermal.participant != participant || &noise.participant != participant {
        return Err(invalid(
            "participant",
            format!("models in {} belong to another participant", path.display()),
        ));
    }
    Ok((thermal, noise))
}

fn plan(args: PlanArgs) -> Result<()> {
    let inputs = training_inputs(&args.participant, &args.data, args.seed)?;
    let (thermal, noise) = match &args.models {
        Some(path) => read_models(path, &inputs.participant)?,
        None => personalize::train_participant(&inputs.participant, &inputs.history, &inputs.trigger, &inputs.training)?,
    };
    let plan = personalize::plan_day(&thermal, &noise, &inputs.history, args.date, &inputs.trigger);
    let mut out = std::io::stdout().lock();
    writeln!(out, "id_participant,local_date,hour,kind,target_label,probability")?;
    for e in &plan.entries {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            plan.participant.as_str(),
            plan.local_date,
            e.hour,
            e.kind.as_str(),
            e.target_label.value_str(),
            e.probability
        )?;
    }
    Ok(())
}

fn window_bound(tz: Tz, day: NaiveDate, hour: u32) -> Result<Timestamp> {
    let local = day
        .and_hms_opt(hour, 0, 0)
        .ok_or_else(|| invalid("window", format!("hour {hour} out of range")))?;
    tz.from_local_datetime(&local)
        .earliest()
        .map(|t| t.with_timezone(&chrono::Utc))
        .ok_or_else(|| invalid("window", format!("{local} does not exist in {tz}")))
}

fn push_provider<'a>(mock: &'a MockProvider) -> Box<dyn PushProvider + 'a> {
    #[cfg(feature = "live")]
    if let Some(p) = jitai_core::dispatch::HttpPushProvider::from_env(crate::live::Transport::new()) {
        log::info!("delivering through the push API");
        return Box::new(p);
    }
    #[cfg(not(feature = "live"))]
    if std::env::var_os(jitai_core::dispatch::PUSH_API_URL_ENV).is_some() {
        log::warn!("push API configured but this build lacks the `live` feature; using the mock outbox");
    }
    Box::new(mock)
}

fn weather_provider(fixture: FixtureProvider) -> Box<dyn jitai_core::weather::WeatherProvider> {
    #[cfg(feature = "live")]
    if let Some(p) = jitai_core::weather::LiveProvider::from_env(crate::live::Transport::new()) {
        log::info!("polling the live weather API");
        return Box::new(p);
    }
    #[cfg(not(feature = "live"))]
    if std::env::var_os(jitai_core::weather::WEATHER_API_URL_ENV).is_some() {
        log::warn!("weather API configured but this build lacks the `live` feature; using the fixture");
    }
    Box::new(fixture)
}

fn replay(args: ReplayArgs) -> Result<()> {
    if args.to < args.from {
        return Err(invalid("to", "must not precede --from"));
    }
    let spec = run_spec(&args.data)?;
    let trigger = spec.as_ref().map(|s| s.trigger.clone()).unwrap_or_default();
    trigger.validate()?;
    let phase = PhaseConfig {
        phase: args.phase.into(),
        personalization_switch_count: spec
            .as_ref()
            .map_or(PhaseConfig::default().personalization_switch_count, |s| s.personalization_switch_count),
        ..PhaseConfig::default()
    };
    phase.validate()?;
    let templates = match &args.templates {
        Some(path) => at_path(path, Templates::load(path))?,
        None => Templates::default(),
    };

    // Inputs only: earlier decisions and weather are re-derived.
    let source = load_store(&args.data)?;
    let store = Store::new();
    for name in [SeriesName::Survey, SeriesName::Sensor] {
        let rows = source.select(name, None, Timestamp::MIN_UTC, Timestamp::MAX_UTC);
        store.extend(rows.into_iter().map(|(k, e)| (k, e.record)).collect())?;
    }
    let participants = store.participants();

    let fixture = FixtureProvider::read_csv(open(&args.weather)?)?;
    let registry = fixture.registry().clone();
    let weather = weather_provider(fixture);
    let mock = MockProvider::new();
    let mut engine = Engine::new(&store, push_provider(&mock), trigger.clone(), phase.clone())
        .with_templates(templates)
        .with_training(TrainingConfig {
            seed: args.seed,
            ..TrainingConfig::default()
        });

    let mut log = Vec::new();
    let mut day = args.from;
    while day <= args.to {
        let mut t = window_bound(trigger.timezone, day, trigger.window_start_hour)?;
        let close = window_bound(trigger.timezone, day, trigger.window_end_hour)?;
        while t <= close {
            log.extend(engine.step(weather.as_ref(), &registry, &participants, t)?);
            t += trigger.poll_interval();
        }
        day = day.succ_opt().expect("date in range");
    }
    drop(engine);

    std::fs::create_dir_all(&args.out)?;
    let config = json!({
        "data": args.data,
        "weather": args.weather,
        "from": args.from,
        "to": args.to,
        "seed": args.seed,
        "trigger": trigger,
        "phase": phase,
    });
    std::fs::write(args.out.join("config.json"), serde_json::to_string_pretty(&config)? + "\n")?;
    store.export_csv(
        &[SeriesName::Notification, SeriesName::Weather],
        None,
        Timestamp::MIN_UTC,
        Timestamp::MAX_UTC,
        &args.out,
    )?;
    sim::write_summary_csv(File::create(args.out.join("summary.csv"))?, &sim::summarize(&participants, &log))?;
    let mut outbox = BufWriter::new(File::create(args.out.join("outbox.jsonl"))?);
    mock.export_jsonl(&mut outbox)?;
    outbox.flush()?;
    log::info!("{} decisions over {} participants", log.len(), participants.len());
    Ok(())
}

fn summarize(args: SummarizeArgs) -> Result<()> {
    let store = load_store(&args.dir)?;
    let rows = sim::summarize(&store.participants(), &notification_log(&store));
    let mut buf = Vec::new();
    sim::write_summary_csv(&mut buf, &rows)?;
    std::fs::write(args.dir.join("summary.csv"), &buf)?;
    std::io::stdout().lock().write_all(&buf)?;
    Ok(())
}

fn parse_polygon(s: &str) -> Result<Vec<GeoPoint>> {
    let points = s
        .split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            crate::parse_point(p)
                .map(|(lat, lon)| GeoPoint::new(lat, lon))
                .map_err(|e| invalid("polygon", e))
        })
        .collect::<Result<Vec<_>>>()?;
    if points.len() < 3 {
        return Err(invalid("polygon", "needs at least three vertices"));
    }
    Ok(points)
}

fn bin(args: BinArgs) -> Result<()> {
    if !(args.hex_edge_m.is_finite() && args.hex_edge_m > 0.0) {
        return Err(invalid("hex_edge_m", "must be a positive length in metres"));
    }
    let polygon = args.polygon.as_deref().map(parse_polygon).transpose()?;
    let store = load_store(&args.dir)?;
    let mut log = notification_log(&store);
    if let Some(m) = args.mechanism {
        let m = Mechanism::from(m);
        log.retain(|n| n.event.mechanism == m);
    }
    let origin = match args.origin {
        Some((lat, lon)) => GeoPoint::new(lat, lon),
        None => spatial::centroid(&log).unwrap_or(GeoPoint::new(0.0, 0.0)),
    };
    let binning = spatial::bin(&log, origin, args.hex_edge_m);
    let out = args.out.unwrap_or_else(|| args.dir.join("hexbins.geojson"));
    let mut file = BufWriter::new(File::create(&out)?);
    spatial::export_geojson(&binning, &mut file)?;
    file.flush()?;
    log::info!(
        "{} cell(s), {} sent binned, {} without location; wrote {}",
        binning.cells.len(),
        binning.total(),
        binning.unlocated,
        out.display()
    );
    if let Some(polygon) = polygon {
        let share = spatial::polygon_share(&log, &polygon);
        let fraction = share.fraction().map(|f| f.to_string()).unwrap_or_default();
        let mut stdout = std::io::stdout().lock();
        writeln!(stdout, "inside,total,fraction")?;
        writeln!(stdout, "{},{},{}", share.inside, share.total, fraction)?;
    }
    Ok(())
}

fn export(args: ExportArgs) -> Result<()> {
    let store = load_store(&args.store)?;
    let series = if args.series.is_empty() {
        SeriesName::ALL.to_vec()
    } else {
        let mut seen = BTreeSet::new();
        args.series
            .iter()
            .map(|s| s.parse::<SeriesName>())
            .filter(|r| r.as_ref().map_or(true, |s| seen.insert(*s)))
            .collect::<Result<Vec<_>>>()?
    };
    let participants = args
        .participant
        .iter()
        .map(ParticipantId::new)
        .collect::<Result<Vec<_>>>()?;
    let filter = (!participants.is_empty()).then_some(participants.as_slice());
    let t0 = args.from.as_deref().map(parse_ts).transpose()?.unwrap_or(Timestamp::MIN_UTC);
    let t1 = args.to.as_deref().map(parse_ts).transpose()?.unwrap_or(Timestamp::MAX_UTC);
    let paths: Vec<PathBuf> = store.export_csv(&series, filter, t0, t1, &args.dir)?;
    for p in paths {
        log::info!("wrote {}", p.display());
    }
    Ok(())
}
