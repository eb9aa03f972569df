use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use gpf_core::benchmark::{
    self, assemble, run_job, CompareSpec, DataSource, NamedShift, SHIFTED, SHIFT_TRANSLATION,
};
use gpf_core::checkpoint;
use gpf_core::data::{
    apply_shift, gen_classification, gen_retrieval_groups, parse_embeddings, write_embeddings,
    Dataset, DatasetKind, ShiftSpec, DEFAULT_NEGATIVES,
};
use gpf_core::linalg::derive_seed;
use gpf_core::metrics::DEFAULT_BINS;
use gpf_core::report::{comparison_table, evaluation_table, timing_table};
use gpf_core::trainer::{self, timing_benchmark, TrainConfig, TrainedModel, Variant};
use rayon::prelude::*;

use crate::error::CliError;
use crate::reports::{
    write_json, write_text, CompareDoc, EvaluateDoc, RunRecord, TimingDoc, REPORT_VERSION,
};
use crate::settings::{parse_list, Settings};
use crate::{BenchArgs, CompareArgs, EvaluateArgs, GenerateArgs, ShiftArgs, TrainArgs, TrainFlags};

const DEFAULT_OUT_DIR: &str = "gpf-out";
const DEFAULT_DATA_FILE: &str = "data.tsv";
const SHIFT_KEYS: [&str; 3] = ["shift_translation", "shift_rotation_seed", "shift_noise"];
const BENCH_TRAIN_GROUPS: usize = 50;
const BENCH_EVAL_GROUPS: usize = 200;
const BENCH_REPETITIONS: usize = 5;

pub struct Global {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub config: Option<PathBuf>,
}

impl Global {
    fn settings(&self) -> Result<Settings, CliError> {
        let mut s = Settings::from_file(self.config.as_deref())?;
        s.set_flag_display("seed", self.seed);
        s.set_flag("out", self.out.as_ref().map(|p| p.display().to_string()));
        Ok(s)
    }
}

fn add_train_flags(s: &mut Settings, flags: TrainFlags) {
    for (k, v) in flags.pairs() {
        s.set_flag(k, v);
    }
}

fn add_shift_flags(s: &mut Settings, a: ShiftArgs) {
    s.set_flag_display("shift_translation", a.shift_translation);
    s.set_flag_display("shift_rotation_seed", a.shift_rotation_seed);
    s.set_flag_display("shift_noise", a.shift_noise);
}

fn allowed<'a>(base: &[&'a str], extra: &[&'a str]) -> Vec<&'a str> {
    base.iter().chain(extra).copied().collect()
}

/// The shift described by the settings, or `None` when it is the identity.
fn shift_spec(
    s: &Settings,
    dim: usize,
    default_translation: f64,
) -> Result<Option<ShiftSpec>, CliError> {
    let spec = ShiftSpec {
        rotation_seed: s.get("shift_rotation_seed")?,
        noise_scale: s.get_or("shift_noise", 0.0)?,
        ..ShiftSpec::uniform_translation(dim, s.get_or("shift_translation", default_translation)?)
    };
    Ok((!spec.is_identity()).then_some(spec))
}

fn path_setting(s: &Settings, key: &str) -> Result<PathBuf, CliError> {
    s.raw(key)
        .map(PathBuf::from)
        .ok_or_else(|| CliError::Usage(format!("--{} is required", key.replace('_', "-"))))
}

fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_embeddings(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<TrainedModel, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    checkpoint::from_json(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn out_dir(s: &Settings) -> Result<PathBuf, CliError> {
    let dir = PathBuf::from(s.raw("out").unwrap_or(DEFAULT_OUT_DIR));
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    Ok(dir)
}

fn parse_variants(s: &Settings, default: &[Variant]) -> Result<Vec<Variant>, CliError> {
    match s.raw("variants") {
        Some(v) => {
            let list: Vec<Variant> = parse_list("variants", v)?;
            if list.is_empty() {
                return Err(CliError::Usage("--variants is empty".into()));
            }
            Ok(list)
        }
        None => Ok(default.to_vec()),
    }
}

pub fn generate(g: &Global, a: GenerateArgs) -> Result<(), CliError> {
    let mut s = g.settings()?;
    s.set_flag("kind", a.kind);
    s.set_flag_display("groups", a.groups);
    s.set_flag_display("n", a.n);
    s.set_flag_display("dim", a.dim);
    s.set_flag_display("k", a.k);
    s.set_flag_display("signal", a.signal);
    s.set_flag_display("separation", a.separation);
    add_shift_flags(&mut s, a.shift);
    s.check_keys(
        "generate",
        &allowed(
            &[
                "seed",
                "out",
                "kind",
                "groups",
                "n",
                "dim",
                "k",
                "signal",
                "separation",
            ],
            &SHIFT_KEYS,
        ),
    )?;
    s.reject_train_keys("generate")?;

    let seed = s.get_or("seed", 0u64)?;
    let dim = s.get_or("dim", benchmark::DIM)?;
    let kind: DatasetKind = s.get_or("kind", DatasetKind::Ranking)?;
    let mut data = match kind {
        DatasetKind::Ranking => {
            let groups = s.get_or("groups", benchmark::TRAIN_GROUPS)?;
            let k = s.get_or("k", DEFAULT_NEGATIVES)?;
            let signal = s.get_or("signal", benchmark::SIGNAL)?;
            Dataset::from_groups(&gen_retrieval_groups(groups, dim, k, signal, seed)?)?
        }
        DatasetKind::Classification => {
            let n = s.get_or("n", 1000usize)?;
            let separation = s.get_or("separation", 4.0)?;
            gen_classification(n, dim, separation, seed)?
        }
    };
    if let Some(spec) = shift_spec(&s, dim, 0.0)? {
        data = apply_shift(&data, &spec, derive_seed(seed, 0x5417))?;
    }

    let path = PathBuf::from(s.raw("out").unwrap_or(DEFAULT_DATA_FILE));
    write_text(&path, &write_embeddings(&data))?;
    let groups = match kind {
        DatasetKind::Ranking => format!(" in {} groups", data.group_indices()?.len()),
        DatasetKind::Classification => String::new(),
    };
    println!(
        "wrote {} {} examples{groups} (dim {dim}) to {}",
        data.len(),
        kind.as_str(),
        path.display()
    );
    Ok(())
}

pub fn train(g: &Global, a: TrainArgs) -> Result<(), CliError> {
    let mut s = g.settings()?;
    s.set_flag("data", a.data.map(|p| p.display().to_string()));
    add_train_flags(&mut s, a.train);
    s.check_keys("train", &["seed", "out", "data"])?;

    let data = load_dataset(&path_setting(&s, "data")?)?;
    let cfg = s.train_config(TrainConfig::default())?;
    let seed = s.get_or("seed", 0u64)?;
    let model = trainer::train(&cfg, &data, seed)?;

    let dir = out_dir(&s)?;
    let model_path = dir.join("model.json");
    write_text(&model_path, &checkpoint::to_json(&model)?)?;
    let mut log = String::from("member,epoch,loss\n");
    for (m, member) in model.members.iter().enumerate() {
        for (e, loss) in member.loss_curve.iter().enumerate() {
            let _ = writeln!(log, "{m},{},{loss}", e + 1);
        }
    }
    write_text(&dir.join("train_log.csv"), &log)?;

    let last: Vec<String> = model
        .members
        .iter()
        .filter_map(|m| m.loss_curve.last().map(|l| format!("{l:.5}")))
        .collect();
    println!(
        "trained {} on {} examples (seed {seed}); final epoch loss {}; wrote {}",
        cfg.variant,
        data.len(),
        last.join(", "),
        model_path.display()
    );
    Ok(())
}

pub fn evaluate(g: &Global, a: EvaluateArgs) -> Result<(), CliError> {
    let mut s = g.settings()?;
    s.set_flag("model", a.model.map(|p| p.display().to_string()));
    s.set_flag("data", a.data.map(|p| p.display().to_string()));
    s.set_flag_display("bins", a.bins);
    s.check_keys("evaluate", &["seed", "out", "model", "data", "bins"])?;
    s.reject_train_keys("evaluate")?;

    let model_path = path_setting(&s, "model")?;
    let data_path = path_setting(&s, "data")?;
    let model = load_model(&model_path)?;
    let data = load_dataset(&data_path)?;
    let bins = s.get_or("bins", DEFAULT_BINS)?;
    let result = trainer::evaluate(&model, &data, bins)?;

    let dir = out_dir(&s)?;
    let table = evaluation_table(model.variant.label(), &result);
    write_text(&dir.join("reliability.csv"), &result.reliability.to_csv())?;
    write_text(&dir.join("table.txt"), &table)?;
    write_json(
        &dir.join("report.json"),
        &EvaluateDoc {
            report: "evaluate".into(),
            version: REPORT_VERSION,
            variant: model.variant,
            model_seed: model.seed,
            model_path: model_path.display().to_string(),
            data_path: data_path.display().to_string(),
            bins,
            result,
        },
    )?;
    print!("{table}");
    Ok(())
}

fn compare_spec(s: &Settings) -> Result<(CompareSpec, String), CliError> {
    let (source, description) = match (s.raw("train_data"), s.raw("test_data")) {
        (Some(tr), Some(te)) => {
            let train = load_dataset(Path::new(tr))?;
            let test = load_dataset(Path::new(te))?;
            (
                DataSource::Fixed { train, test },
                format!("files: train {tr}, test {te}"),
            )
        }
        (None, None) => {
            let train_groups = s.get_or("train_groups", benchmark::TRAIN_GROUPS)?;
            let test_groups = s.get_or("test_groups", benchmark::TEST_GROUPS)?;
            let dim = s.get_or("dim", benchmark::DIM)?;
            let k_negatives = s.get_or("k", DEFAULT_NEGATIVES)?;
            let signal = s.get_or("signal", benchmark::SIGNAL)?;
            (
                DataSource::Retrieval {
                    train_groups,
                    test_groups,
                    dim,
                    k_negatives,
                    signal,
                },
                format!(
                    "generated retrieval groups per seed: {train_groups} train, {test_groups} test, \
                     dim {dim}, k {k_negatives}, signal {signal}"
                ),
            )
        }
        _ => {
            return Err(CliError::Usage(
                "--train-data and --test-data go together".into(),
            ))
        }
    };
    if s.contains("variant") {
        return Err(CliError::Usage(
            "compare takes --variants, not --variant".into(),
        ));
    }
    let seeds: Vec<u64> = match (s.raw("seeds"), s.get::<u64>("seed")?) {
        (Some(list), _) => parse_list("seeds", list)?,
        (None, Some(seed)) => vec![seed],
        (None, None) => benchmark::SEEDS.to_vec(),
    };
    let mut config = s.train_config(TrainConfig::default())?;
    config.seeds = seeds.clone();
    let shifts = shift_spec(s, source.dim(), SHIFT_TRANSLATION)?
        .map(|spec| NamedShift {
            name: SHIFTED.to_string(),
            spec,
        })
        .into_iter()
        .collect();
    let spec = CompareSpec {
        source,
        shifts,
        variants: parse_variants(s, &Variant::ALL)?,
        seeds,
        config,
        bins: s.get_or("bins", DEFAULT_BINS)?,
    };
    Ok((spec, description))
}

pub fn compare(g: &Global, a: CompareArgs) -> Result<(), CliError> {
    let mut s = g.settings()?;
    s.set_flag("train_data", a.train_data.map(|p| p.display().to_string()));
    s.set_flag("test_data", a.test_data.map(|p| p.display().to_string()));
    s.set_flag_display("train_groups", a.train_groups);
    s.set_flag_display("test_groups", a.test_groups);
    s.set_flag_display("dim", a.dim);
    s.set_flag_display("k", a.k);
    s.set_flag_display("signal", a.signal);
    s.set_flag("variants", a.variants);
    s.set_flag_display("bins", a.bins);
    s.set_flag_display("jobs", a.jobs);
    add_shift_flags(&mut s, a.shift);
    add_train_flags(&mut s, a.train);
    s.check_keys(
        "compare",
        &allowed(
            &[
                "seed",
                "out",
                "train_data",
                "test_data",
                "train_groups",
                "test_groups",
                "dim",
                "k",
                "signal",
                "variants",
                "bins",
                "jobs",
            ],
            &SHIFT_KEYS,
        ),
    )?;

    let (spec, data) = compare_spec(&s)?;
    spec.validate()?;
    if spec.seeds.len() < 2 {
        eprintln!("warning: fewer than 2 seeds; standard errors are omitted");
    }
    let jobs = match s.get::<usize>("jobs")? {
        Some(0) => return Err(CliError::Usage("--jobs must be >= 1".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    let job_list = spec.jobs();
    let results = pool.install(|| {
        job_list
            .par_iter()
            .map(|&(v, seed)| run_job(&spec, v, seed))
            .collect::<gpf_core::Result<Vec<_>>>()
    })?;

    let eval_sets = spec.eval_sets();
    let mut runs = Vec::new();
    for (&(variant, seed), reports) in job_list.iter().zip(&results) {
        for (name, r) in eval_sets.iter().zip(reports) {
            runs.push(RunRecord {
                variant,
                seed,
                eval_set: name.clone(),
                accuracy: r.accuracy,
                ece: r.ece,
                r10_at_1: r.r10_at_1(),
                map: r.map(),
            });
        }
    }
    let result = assemble(&spec, results)?;
    let table = comparison_table(&result);

    let dir = out_dir(&s)?;
    let mut csv = String::from("variant,seed,eval_set,accuracy,ece,r10_at_1,map\n");
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in &runs {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            r.variant,
            r.seed,
            r.eval_set,
            r.accuracy,
            r.ece,
            opt(r.r10_at_1),
            opt(r.map)
        );
    }
    write_text(&dir.join("compare_runs.csv"), &csv)?;
    write_text(&dir.join("compare.txt"), &table)?;
    write_json(
        &dir.join("compare.json"),
        &CompareDoc {
            report: "compare".into(),
            version: REPORT_VERSION,
            data,
            shifts: spec.shifts.clone(),
            config: spec.config.clone(),
            bins: spec.bins,
            result,
            runs,
        },
    )?;
    print!("{table}");
    Ok(())
}

pub fn bench_time(g: &Global, a: BenchArgs) -> Result<(), CliError> {
    let mut s = g.settings()?;
    s.set_flag("data", a.data.map(|p| p.display().to_string()));
    s.set_flag_display("train_groups", a.train_groups);
    s.set_flag_display("eval_groups", a.eval_groups);
    s.set_flag_display("dim", a.dim);
    s.set_flag("variants", a.variants);
    s.set_flag_display("repetitions", a.repetitions);
    add_train_flags(&mut s, a.train);
    s.check_keys(
        "bench-time",
        &[
            "seed",
            "out",
            "data",
            "train_groups",
            "eval_groups",
            "dim",
            "variants",
            "repetitions",
        ],
    )?;
    if s.contains("variant") {
        return Err(CliError::Usage(
            "bench-time takes --variants, not --variant".into(),
        ));
    }

    let repetitions = s.get_or("repetitions", BENCH_REPETITIONS)?;
    if repetitions < 3 {
        return Err(CliError::Usage("--repetitions must be at least 3".into()));
    }
    let seed = s.get_or("seed", 0u64)?;
    let eval = match s.raw("data") {
        Some(p) => load_dataset(Path::new(p))?,
        None => {
            let dim = s.get_or("dim", benchmark::DIM)?;
            let groups = s.get_or("eval_groups", BENCH_EVAL_GROUPS)?;
            Dataset::from_groups(&gen_retrieval_groups(
                groups,
                dim,
                DEFAULT_NEGATIVES,
                benchmark::SIGNAL,
                derive_seed(seed, 2),
            )?)?
        }
    };
    let train_groups = s.get_or("train_groups", BENCH_TRAIN_GROUPS)?;
    let train_data = Dataset::from_groups(&gen_retrieval_groups(
        train_groups,
        eval.dim,
        DEFAULT_NEGATIVES,
        benchmark::SIGNAL,
        derive_seed(seed, 1),
    )?)?;
    let base = TrainConfig {
        hidden_dim: benchmark::TIMING_HIDDEN,
        depth: benchmark::TIMING_DEPTH,
        ..TrainConfig::default()
    };
    let config = s.train_config(base)?;
    let variants = parse_variants(
        &s,
        &[
            Variant::Deterministic,
            Variant::McDropout,
            Variant::Ensemble,
            Variant::Sngp,
            Variant::Gpf,
        ],
    )?;
    let models = variants
        .iter()
        .map(|&variant| {
            let cfg = TrainConfig {
                variant,
                ..config.clone()
            };
            Ok((
                variant.label().to_string(),
                trainer::train(&cfg, &train_data, seed)?,
            ))
        })
        .collect::<gpf_core::Result<Vec<_>>>()?;
    let refs: Vec<(String, &TrainedModel)> = models.iter().map(|(l, m)| (l.clone(), m)).collect();
    let result = timing_benchmark(&refs, &eval, repetitions)?;
    let table = timing_table(&result);

    let dir = out_dir(&s)?;
    write_text(&dir.join("timing.txt"), &table)?;
    write_json(
        &dir.join("timing.json"),
        &TimingDoc {
            report: "bench-time".into(),
            version: REPORT_VERSION,
            config,
            result,
        },
    )?;
    print!("{table}");
    Ok(())
}
