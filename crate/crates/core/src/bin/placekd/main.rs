//! `placekd`: synthetic data, teacher training, distillation, retrieval
//! evaluation and benchmarking from one binary.
//!
//! Every command prints one JSON object on stdout and a short summary on
//! stderr. Exit codes: 0 success, 2 configuration, 3 data, 4 numeric.

mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use config::{need, parse_name, resolve, RunConfig, RUN_CONFIG_VERSION};
use placekd::data::{generate_synthetic, load_dataset, save_dataset, Dataset, Split, SyntheticWorldConfig, TripletSpec};
use placekd::layers::Module;
use placekd::losses::{CrossTermMask, LossConfig, LossWeights, Metric};
use placekd::models::{Checkpoint, ModelConfig, StudentConfig, TeacherConfig};
use placekd::retrieval::{
    bench_matching, bench_threads, build_db, describe_queries, evaluate, random_unit_rows, synthetic_database,
    time_each, DbMeta, DescriptorDatabase, GroundTruth, MatchBench, TimingStats,
};
use placekd::training::{distill_student, train_teacher, write_jsonl, TrainConfig, TrainOutput};
use placekd::{Error, Result};

#[derive(Parser)]
#[command(name = "placekd", version, about = "Teacher-student place recognition toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic place dataset.
    GenData(GenData),
    /// Train a teacher with the triplet loss.
    TrainTeacher(TrainTeacher),
    /// Distil a student from a frozen teacher.
    DistillStudent(DistillStudent),
    /// Describe a dataset split into a descriptor database.
    BuildDb(BuildDb),
    /// Nearest database entries for one dataset sample.
    Query(QueryCmd),
    /// Recall@N, mAP@N and AP of a database against query samples.
    Eval(EvalCmd),
    /// Matching latency and throughput.
    Bench(BenchCmd),
    /// Parameter count of a checkpoint.
    Params(ParamsCmd),
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
struct GenData {
    /// Options file (TOML or JSON); flags win over its keys.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    places: Option<usize>,
    #[arg(long)]
    views: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    max_shift: Option<f64>,
    #[arg(long)]
    brightness: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    occlusion: Option<f64>,
}

macro_rules! train_args {
    ($name:ident { $($extra:tt)* }) => {
        #[derive(Args, Serialize, Deserialize, Default)]
        #[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
        struct $name {
            /// Options file (TOML or JSON); flags win over its keys.
            #[arg(long)]
            #[serde(skip)]
            config: Option<PathBuf>,
            /// Dataset directory.
            #[arg(long)]
            data: Option<PathBuf>,
            /// Output directory.
            #[arg(long)]
            out: Option<PathBuf>,
            /// Model configuration file (TOML or JSON); defaults otherwise.
            #[arg(long)]
            model: Option<PathBuf>,
            #[arg(long)]
            seed: Option<u64>,
            #[arg(long)]
            epochs: Option<usize>,
            #[arg(long)]
            batch_size: Option<usize>,
            #[arg(long)]
            learning_rate: Option<f64>,
            #[arg(long)]
            lr_decay_per_epoch: Option<f64>,
            #[arg(long)]
            weight_decay: Option<f64>,
            #[arg(long)]
            margin: Option<f64>,
            /// squared-euclidean or euclidean.
            #[arg(long)]
            metric: Option<String>,
            #[arg(long)]
            r_pos: Option<f64>,
            #[arg(long)]
            r_neg: Option<f64>,
            #[arg(long)]
            negatives: Option<usize>,
            $($extra)*
        }
    };
}

train_args!(TrainTeacher {});

train_args!(DistillStudent {
    /// Teacher checkpoint.
    #[arg(long)]
    teacher: Option<PathBuf>,
    /// Cross terms, `none` or a subset of `d1,d2,d3,d4`.
    #[arg(long)]
    cm_terms: Option<CrossTermMask>,
    #[arg(long)]
    hard_weight: Option<f64>,
    #[arg(long)]
    soft_weight: Option<f64>,
    #[arg(long)]
    cm_weight: Option<f64>,
});

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
struct BuildDb {
    /// Options file (TOML or JSON); flags win over its keys.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Split to index (default `database`).
    #[arg(long)]
    split: Option<String>,
    /// Database file to write.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
struct QueryCmd {
    /// Options file (TOML or JSON); flags win over its keys.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    db: Option<PathBuf>,
    /// Dataset holding the query image.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Sample id within the dataset.
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long)]
    top_n: Option<usize>,
    /// Overrides the checkpoint recorded in the database.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
struct EvalCmd {
    /// Options file (TOML or JSON); flags win over its keys.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    db: Option<PathBuf>,
    /// Dataset directory with the query images.
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Split used as queries (default `query`).
    #[arg(long)]
    split: Option<String>,
    /// Report file to write.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Overrides the checkpoint recorded in the database.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// same-place (default) or radius.
    #[arg(long)]
    ground_truth: Option<String>,
    /// Ground-truth radius in meters for `radius`.
    #[arg(long)]
    radius: Option<f64>,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
struct BenchCmd {
    /// Options file (TOML or JSON); flags win over its keys.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Database to search; a random one is built otherwise.
    #[arg(long)]
    db: Option<PathBuf>,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    queries: Option<usize>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    top_n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// With --data, also time descriptor generation.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Report file to write.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", deny_unknown_fields, default)]
struct ParamsCmd {
    /// Options file (TOML or JSON); flags win over its keys.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(out) => {
            let text = serde_json::to_string_pretty(&out).expect("output is plain JSON");
            // a closed pipe downstream is not a failure of the command
            let _ = writeln!(std::io::stdout().lock(), "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.category().exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<serde_json::Value> {
    match command {
        Command::GenData(a) => {
            let file = a.config.clone();
            gen_data(resolve(&a, file.as_ref(), "gen-data")?)
        }
        Command::TrainTeacher(a) => {
            let file = a.config.clone();
            train_teacher_cmd(resolve(&a, file.as_ref(), "train-teacher")?)
        }
        Command::DistillStudent(a) => {
            let file = a.config.clone();
            distill_cmd(resolve(&a, file.as_ref(), "distill-student")?)
        }
        Command::BuildDb(a) => {
            let file = a.config.clone();
            build_db_cmd(resolve(&a, file.as_ref(), "build-db")?)
        }
        Command::Query(a) => {
            let file = a.config.clone();
            query_cmd(resolve(&a, file.as_ref(), "query")?)
        }
        Command::Eval(a) => {
            let file = a.config.clone();
            eval_cmd(resolve(&a, file.as_ref(), "eval")?)
        }
        Command::Bench(a) => {
            let file = a.config.clone();
            bench_cmd(resolve(&a, file.as_ref(), "bench")?)
        }
        Command::Params(a) => {
            let file = a.config.clone();
            params_cmd(resolve(&a, file.as_ref(), "params")?)
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn must_exist(path: &Path, key: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!("--{key}: {} does not exist", path.display())))
    }
}

/// Creates `dir` and checks it is writable before any work starts.
fn prepare_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    if std::fs::metadata(dir).map_err(io_err(dir))?.permissions().readonly() {
        return Err(Error::Config(format!("{} is not writable", dir.display())));
    }
    Ok(())
}

fn prepare_file(path: &Path) -> Result<()> {
    if path.is_dir() {
        return Err(Error::Config(format!("{} is a directory", path.display())));
    }
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => prepare_dir(p),
        _ => Ok(()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

fn echo<T: Serialize>(path: &Path, command: &str, args: &T) -> Result<()> {
    write_json(
        path,
        &RunConfig {
            version: RUN_CONFIG_VERSION,
            command: command.to_string(),
            args,
        },
    )
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".run_config.json");
    PathBuf::from(s)
}

fn gen_data(mut a: GenData) -> Result<serde_json::Value> {
    let out = need(&a.out, "out")?;
    let d = SyntheticWorldConfig::default();
    let cfg = SyntheticWorldConfig {
        n_places: *a.places.get_or_insert(d.n_places),
        views_per_place: *a.views.get_or_insert(d.views_per_place),
        image_size: *a.image_size.get_or_insert(d.image_size),
        channels: *a.channels.get_or_insert(d.channels),
        max_shift: *a.max_shift.get_or_insert(d.max_shift),
        brightness: *a.brightness.get_or_insert(d.brightness),
        noise: *a.noise.get_or_insert(d.noise),
        occlusion: *a.occlusion.get_or_insert(d.occlusion),
        ..d
    };
    let seed = *a.seed.get_or_insert(0);
    cfg.validate()?;
    prepare_dir(&out)?;
    let ds = generate_synthetic(&cfg, seed)?;
    save_dataset(&ds, &out)?;
    echo(&out.join("run_config.json"), "gen-data", &a)?;
    let counts: serde_json::Map<String, serde_json::Value> = [Split::Train, Split::Val, Split::Database, Split::Query]
        .iter()
        .map(|&s| (split_name(s), json!(ds.split_ids(s).len())))
        .collect();
    eprintln!(
        "wrote {} samples of {} places to {}",
        ds.len(),
        cfg.n_places,
        out.display()
    );
    Ok(json!({ "dataset": out, "samples": ds.len(), "places": cfg.n_places, "splits": counts }))
}

fn split_name(s: Split) -> String {
    serde_json::to_value(s)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn read_model_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let r = if path.extension().and_then(|e| e.to_str()) == Some("toml") {
        toml::from_str(&text).map_err(|e| e.to_string())
    } else {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    };
    r.map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

macro_rules! train_config {
    ($a:ident) => {{
        let d = TrainConfig::default();
        let metric: Metric = parse_name($a.metric.get_or_insert_with(|| "squared_euclidean".into()), "metric")?;
        TrainConfig {
            batch_size: *$a.batch_size.get_or_insert(d.batch_size),
            learning_rate: *$a.learning_rate.get_or_insert(d.learning_rate),
            lr_decay_per_epoch: *$a.lr_decay_per_epoch.get_or_insert(d.lr_decay_per_epoch),
            weight_decay: *$a.weight_decay.get_or_insert(d.weight_decay),
            epochs: *$a.epochs.get_or_insert(d.epochs),
            seed: *$a.seed.get_or_insert(d.seed),
            loss: LossConfig {
                margin: *$a.margin.get_or_insert(d.loss.margin),
                metric,
                ..d.loss
            },
            mining: TripletSpec {
                r_pos: *$a.r_pos.get_or_insert(d.mining.r_pos),
                r_neg: *$a.r_neg.get_or_insert(d.mining.r_neg),
                negatives_per_anchor: *$a.negatives.get_or_insert(d.mining.negatives_per_anchor),
            },
        }
    }};
}

fn image_dims(ds: &Dataset) -> Result<(usize, usize)> {
    match ds.images.first().map(|t| t.shape().to_vec()).as_deref() {
        Some(&[c, h, w]) if h == w => Ok((c, h)),
        other => Err(Error::Config(format!("unsupported image shape {other:?}"))),
    }
}

fn finish_training(out: &Path, name: &str, result: TrainOutput) -> Result<serde_json::Value> {
    let ckpt_path = out.join(format!("{name}.ckpt"));
    let hash = result.checkpoint.save(&ckpt_path)?;
    write_jsonl(&out.join("train_log.jsonl"), &result.log)?;
    write_json(&out.join("epochs.json"), &result.epochs)?;
    let last = result.final_summary();
    eprintln!(
        "{name}: {} epochs, final val recall@1 {}",
        last.epoch,
        last.val_recall_at_1.map_or("n/a".into(), |r| format!("{r:.3}"))
    );
    Ok(json!({
        "checkpoint": ckpt_path,
        "sha256": hash,
        "params": result.checkpoint.params.numel(),
        "final": last,
    }))
}

fn train_teacher_cmd(mut a: TrainTeacher) -> Result<serde_json::Value> {
    let data = need(&a.data, "data")?;
    let out = need(&a.out, "out")?;
    must_exist(&data, "data")?;
    let mut model: TeacherConfig = match &a.model {
        Some(p) => {
            must_exist(p, "model")?;
            read_model_config(p)?
        }
        None => TeacherConfig::default(),
    };
    let cfg = train_config!(a);
    cfg.validate()?;
    prepare_dir(&out)?;
    let ds = load_dataset(&data)?;
    (model.in_channels, model.image_size) = image_dims(&ds)?;
    model.validate()?;
    echo(&out.join("run_config.json"), "train-teacher", &a)?;
    finish_training(&out, "teacher", train_teacher(&ds, &model, &cfg)?)
}

fn distill_cmd(mut a: DistillStudent) -> Result<serde_json::Value> {
    let data = need(&a.data, "data")?;
    let out = need(&a.out, "out")?;
    let teacher_path = need(&a.teacher, "teacher")?;
    must_exist(&data, "data")?;
    must_exist(&teacher_path, "teacher")?;
    let mut model: StudentConfig = match &a.model {
        Some(p) => {
            must_exist(p, "model")?;
            read_model_config(p)?
        }
        None => StudentConfig::default(),
    };
    let mut cfg = train_config!(a);
    let w = LossWeights::default();
    cfg.loss.mask = *a.cm_terms.get_or_insert(LossConfig::default().mask);
    cfg.loss.weights = LossWeights {
        hard: *a.hard_weight.get_or_insert(w.hard),
        soft: *a.soft_weight.get_or_insert(w.soft),
        cm: *a.cm_weight.get_or_insert(w.cm),
    };
    cfg.validate()?;
    prepare_dir(&out)?;
    let teacher = Checkpoint::load(&teacher_path)?;
    let ds = load_dataset(&data)?;
    (model.in_channels, model.image_size) = image_dims(&ds)?;
    model.validate()?;
    echo(&out.join("run_config.json"), "distill-student", &a)?;
    finish_training(&out, "student", distill_student(&ds, &teacher, &model, &cfg)?)
}

fn build_db_cmd(mut a: BuildDb) -> Result<serde_json::Value> {
    let ckpt_path = need(&a.checkpoint, "checkpoint")?;
    let data = need(&a.data, "data")?;
    let out = need(&a.out, "out")?;
    must_exist(&ckpt_path, "checkpoint")?;
    must_exist(&data, "data")?;
    let split: Split = parse_name(a.split.get_or_insert_with(|| "database".into()), "split")?;
    prepare_file(&out)?;
    let ckpt = Checkpoint::load(&ckpt_path)?;
    let ds = load_dataset(&data)?;
    let meta = DbMeta {
        checkpoint_hash: ckpt.hash(),
        checkpoint_path: Some(ckpt_path.display().to_string()),
        model_kind: Some(ckpt.config.kind().to_string()),
        dataset: Some(data.display().to_string()),
    };
    let t = Instant::now();
    let db = build_db(&ds, split, &ckpt.model()?, &ckpt.params, meta)?;
    db.save(&out)?;
    echo(&sidecar(&out), "build-db", &a)?;
    eprintln!(
        "indexed {} descriptors of width {} in {:.2}s",
        db.len(),
        db.width(),
        t.elapsed().as_secs_f64()
    );
    Ok(json!({ "db": out, "rows": db.len(), "width": db.width(), "checkpoint_sha256": db.meta().checkpoint_hash }))
}

/// The checkpoint that built `db`, or an explicit override with the same hash.
fn db_checkpoint(db: &DescriptorDatabase, explicit: Option<&PathBuf>) -> Result<Checkpoint> {
    let path = match explicit {
        Some(p) => p.clone(),
        None => PathBuf::from(db.meta().checkpoint_path.clone().ok_or_else(|| {
            Error::Config("database records no checkpoint; pass --checkpoint".into())
        })?),
    };
    must_exist(&path, "checkpoint")?;
    let ckpt = Checkpoint::load(&path)?;
    if ckpt.hash() != db.meta().checkpoint_hash {
        return Err(Error::Config(format!(
            "{} does not match the checkpoint the database was built with",
            path.display()
        )));
    }
    Ok(ckpt)
}

fn query_cmd(mut a: QueryCmd) -> Result<serde_json::Value> {
    let db_path = need(&a.db, "db")?;
    let data = need(&a.data, "data")?;
    let sample = need(&a.sample, "sample")?;
    let top_n = *a.top_n.get_or_insert(5);
    must_exist(&db_path, "db")?;
    must_exist(&data, "data")?;
    let db = DescriptorDatabase::load(&db_path)?;
    let ckpt = db_checkpoint(&db, a.checkpoint.as_ref())?;
    let ds = load_dataset(&data)?;
    let image = ds
        .images
        .get(sample)
        .ok_or_else(|| Error::Config(format!("sample {sample} not in dataset of {}", ds.len())))?;
    let model = ckpt.model()?;
    let t = Instant::now();
    let d = model.describe(&ckpt.params, image)?;
    let describe_ms = t.elapsed().as_secs_f64() * 1e3;
    let q: Vec<f32> = d.values().iter().map(|&v| v as f32).collect();
    let t = Instant::now();
    let hits = db.search(&q, top_n)?;
    let match_ms = t.elapsed().as_secs_f64() * 1e3;
    let place_of = |id: u64| db.entries().iter().find(|e| e.id == id).map(|e| e.place_id);
    let results: Vec<_> = hits
        .iter()
        .map(|h| json!({ "id": h.id, "distance": h.distance, "place_id": place_of(h.id) }))
        .collect();
    eprintln!("sample {sample}: top match {} at distance {:.4}", hits[0].id, hits[0].distance);
    Ok(json!({
        "query": sample,
        "place_id": ds.samples()[sample].place_id,
        "results": results,
        "describe_ms": describe_ms,
        "match_ms": match_ms,
        "run_config": RunConfig { version: RUN_CONFIG_VERSION, command: "query".into(), args: &a },
    }))
}

fn eval_cmd(mut a: EvalCmd) -> Result<serde_json::Value> {
    let db_path = need(&a.db, "db")?;
    let data = need(&a.queries, "queries")?;
    let report = need(&a.report, "report")?;
    must_exist(&db_path, "db")?;
    must_exist(&data, "queries")?;
    let split: Split = parse_name(a.split.get_or_insert_with(|| "query".into()), "split")?;
    let gt = match a.ground_truth.get_or_insert_with(|| "same-place".into()).as_str() {
        "same-place" | "same_place" => GroundTruth::SamePlace,
        "radius" => GroundTruth::Radius {
            radius: *a.radius.get_or_insert(25.0),
        },
        other => return Err(Error::Config(format!("invalid value `{other}` for --ground-truth"))),
    };
    prepare_file(&report)?;
    let db = DescriptorDatabase::load(&db_path)?;
    let ckpt = db_checkpoint(&db, a.checkpoint.as_ref())?;
    let ds = load_dataset(&data)?;
    let queries = describe_queries(&ds, split, &ckpt.model()?, &ckpt.params)?;
    let r = evaluate(&db, &queries, gt)?;
    write_json(&report, &r)?;
    echo(&sidecar(&report), "eval", &a)?;
    eprintln!(
        "{} queries vs {} entries: recall@1 {:.3}  @5 {:.3}  @10 {:.3}  AP {:.3}",
        r.n_queries, r.db_size, r.recall_at_1, r.recall_at_5, r.recall_at_10, r.ap
    );
    Ok(serde_json::to_value(&r)?)
}

#[derive(Serialize)]
struct BenchReport {
    version: u32,
    matching: MatchBench,
    describe: Option<TimingStats>,
}

fn bench_cmd(mut a: BenchCmd) -> Result<serde_json::Value> {
    if let Some(p) = &a.db {
        must_exist(p, "db")?;
    }
    let describe_inputs = match (&a.checkpoint, &a.data) {
        (Some(c), Some(d)) => {
            must_exist(c, "checkpoint")?;
            must_exist(d, "data")?;
            Some((c.clone(), d.clone()))
        }
        (None, None) => None,
        _ => return Err(Error::Config("--checkpoint and --data go together".into())),
    };
    let n_queries = *a.queries.get_or_insert(100);
    let reps = *a.repetitions.get_or_insert(5);
    let top_n = *a.top_n.get_or_insert(10);
    let seed = *a.seed.get_or_insert(0);
    if let Some(r) = &a.report {
        prepare_file(r)?;
    }
    let threads = bench_threads()?;
    let db = match &a.db {
        Some(p) => DescriptorDatabase::load(p)?,
        None => synthetic_database(*a.rows.get_or_insert(10_000), *a.width.get_or_insert(512), seed)?,
    };
    let queries = random_unit_rows(n_queries, db.width(), seed.wrapping_add(1));
    let matching = bench_matching(&db, &queries, reps, top_n.min(db.len()), threads)?;
    let describe = match describe_inputs {
        Some((c, d)) => {
            let ckpt = Checkpoint::load(&c)?;
            let ds = load_dataset(&d)?;
            let model = ckpt.model()?;
            let n = ds.len().min(n_queries);
            Some(time_each(n, reps, |i| {
                std::hint::black_box(model.describe(&ckpt.params, &ds.images[i])?);
                Ok(())
            })?)
        }
        None => None,
    };
    let report = BenchReport {
        version: 1,
        matching,
        describe,
    };
    if let Some(r) = &a.report {
        write_json(r, &report)?;
        echo(&sidecar(r), "bench", &a)?;
    }
    eprintln!(
        "matching {}x{}: median {:.3} ms, p95 {:.3} ms per query; {:.0} queries/s on {} threads",
        db.len(),
        db.width(),
        matching.per_query.median_ms,
        matching.per_query.p95_ms,
        matching.throughput_qps,
        threads
    );
    Ok(serde_json::to_value(&report)?)
}

fn params_cmd(a: ParamsCmd) -> Result<serde_json::Value> {
    let path = need(&a.checkpoint, "checkpoint")?;
    must_exist(&path, "checkpoint")?;
    let ckpt = Checkpoint::load(&path)?;
    let model = ckpt.model()?;
    let tensors: serde_json::Map<String, serde_json::Value> =
        ckpt.params.iter().map(|(k, v)| (k.clone(), json!(v.len()))).collect();
    let kind = match &ckpt.config {
        ModelConfig::Teacher(_) => "teacher",
        ModelConfig::Student(_) => "student",
    };
    eprintln!("{kind}: {} parameters", model.count_params());
    Ok(json!({
        "kind": kind,
        "params": model.count_params(),
        "descriptor_width": model.descriptor_width(),
        "tensors": tensors,
    }))
}
