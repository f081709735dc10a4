use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use proglab_core::baselines::{gpa_classify, gpa_followups_csv, gpa_label_eye_windows, gpa_label_windows, GpaConfig};
use proglab_core::baselines::{ols_fit, ols_progression, ols_score};
use proglab_core::eval::{compare_pair, evaluate_scheme, render_markdown, write_report, EvalReport};
use proglab_core::nnet::Head;
use proglab_core::sequences::{seqset_from_disk, seqset_to_disk};
use proglab_core::sequences::{build_windows, subject_split, SequenceObservation};
use proglab_core::simcohort::{cohort_from_disk, cohort_to_disk};
use proglab_core::simcohort::{generate_cohort, SimulatorConfig};
use proglab_core::textio::read_file;
use proglab_core::training::{checkpoint_load, checkpoint_save};
use proglab_core::training::{saliency, scheme_scores, Scheme, TrainConfig, Trainer};
use proglab_core::{Error, Result};

use crate::config::{self, hash, merge, parse_set, read_toml, typed, SIM_SCHEMA, TRAIN_SCHEMA};
use crate::manifest::Run;
use crate::{info, Global};

pub const COHORT_FILE: &str = "cohort.txt";
pub const CONFIG_ECHO: &str = "config.json";
pub const DATASET_FILE: &str = "dataset.json";
pub const RUN_FILE: &str = "run.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const SCORES_FILE: &str = "scores.csv";
const PARTS: [&str; 3] = ["train", "val", "test"];

fn seqset_name(part: &str) -> String {
    format!("{part}.seqset")
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("json") + "\n"
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = read_file(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.into(), line: e.line(), msg: e.to_string() })
}

fn layered(base: Value, file: Option<&Path>, schema: &str, sets: &[String]) -> Result<Value> {
    let mut v = base;
    if let Some(p) = file {
        merge(&mut v, read_toml(p, schema)?);
    }
    for s in sets {
        merge(&mut v, parse_set(s)?);
    }
    Ok(v)
}

fn source_name(file: Option<&Path>) -> String {
    file.map_or_else(|| "--set".to_string(), |p| p.display().to_string())
}

pub fn simulate(g: &Global, run: &mut Run, config_file: Option<&Path>, sets: &[String]) -> Result<()> {
    if let Some(p) = config_file {
        run.input(p)?;
    }
    let mut v = layered(config::to_value(&SimulatorConfig::default()), config_file, SIM_SCHEMA, sets)?;
    if let Some(seed) = g.seed {
        merge(&mut v, json!({ "seed": seed }));
    }
    let cfg: SimulatorConfig = typed(v, &source_name(config_file))?;
    cfg.validate(2)?;
    let echo = config::to_value(&cfg);
    run.seed = Some(cfg.seed);
    run.config_hash = Some(hash(&echo));
    run.write(CONFIG_ECHO, &pretty(&echo))?;

    let cohort = generate_cohort(&cfg)?;
    let path = run.path(COHORT_FILE);
    cohort_to_disk(&cohort, &path)?;
    run.record(path);
    info(g, &format!("simulated {} eyes", cohort.eyes.len()));
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub scheme: Scheme,
    pub tau: usize,
    pub split: [f64; 3],
    pub seed: u64,
    pub require_quality: bool,
    pub gpa: GpaConfig,
}

pub struct PrepareArgs<'a> {
    pub cohort: &'a Path,
    pub scheme: Scheme,
    pub tau: usize,
    pub split: Option<[f64; 3]>,
}

pub fn prepare(g: &Global, run: &mut Run, a: &PrepareArgs) -> Result<()> {
    run.input(a.cohort)?;
    let cohort = cohort_from_disk(a.cohort)?;
    cohort.config.validate(a.tau).map_err(|e| match e {
        Error::Config { field, reason } => Error::Config { field: format!("{}: {field}", a.cohort.display()), reason },
        other => other,
    })?;
    let cfg = DatasetConfig {
        scheme: a.scheme,
        tau: a.tau,
        split: a.split.unwrap_or(TrainConfig::for_scheme(a.scheme).split),
        seed: g.seed.unwrap_or(cohort.config.seed),
        require_quality: true,
        gpa: GpaConfig { test_retest_sd: cohort.config.noise_sd, ..GpaConfig::default() },
    };
    cfg.gpa.validate()?;
    let echo = config::to_value(&cfg);
    run.seed = Some(cfg.seed);
    run.config_hash = Some(hash(&echo));
    run.write(CONFIG_ECHO, &pretty(&echo))?;

    let mut windows = build_windows(&cohort, cfg.tau, cfg.require_quality);
    if windows.is_empty() {
        return Err(Error::Input(format!("{}: no eye has {} usable visits", a.cohort.display(), cfg.tau)));
    }
    let mut events = Vec::new();
    let mut start = 0;
    for eye in &cohort.eyes {
        let n = windows[start..]
            .iter()
            .take_while(|w| w.subject_id == eye.subject_id && w.eye_id == eye.eye_id)
            .count();
        if n == 0 {
            continue;
        }
        let result = gpa_label_eye_windows(eye, &mut windows[start..start + n], cfg.require_quality, &cfg.gpa)?;
        events.push(json!({ "subject_id": eye.subject_id, "eye_id": eye.eye_id, "event_times": result.event_times }));
        start += n;
    }

    let split = subject_split(&windows, cfg.split, cfg.seed)?;
    let (tr, va, te) = split.apply(&windows);
    for (part, set) in PARTS.iter().zip([&tr, &va, &te]) {
        if set.is_empty() {
            return Err(Error::Input(format!("{}: {part} partition is empty", a.cohort.display())));
        }
        let path = run.path(&seqset_name(part));
        seqset_to_disk(set, &path)?;
        run.record(path);
    }
    run.write("split.json", &pretty(&config::to_value(&split)))?;
    run.write("gpa_events.json", &pretty(&Value::Array(events)))?;
    run.write(
        DATASET_FILE,
        &pretty(&json!({
            "config": echo,
            "profile_len": cohort.config.profile_len,
            "windows": { "train": tr.len(), "val": va.len(), "test": te.len() },
            "subjects": { "train": split.count(proglab_core::sequences::Partition::Train),
                          "val": split.count(proglab_core::sequences::Partition::Validation),
                          "test": split.count(proglab_core::sequences::Partition::Test) },
        })),
    )?;
    info(g, &format!("windows train {} val {} test {}", tr.len(), va.len(), te.len()));
    Ok(())
}

fn load_part(run: &mut Run, data: &Path, part: &str) -> Result<Vec<SequenceObservation>> {
    let p = data.join(seqset_name(part));
    run.input(&p)?;
    let set = seqset_from_disk(&p)?;
    if set.is_empty() {
        return Err(Error::Input(format!("{}: no observations", p.display())));
    }
    Ok(set)
}

fn load_dataset(run: &mut Run, data: &Path) -> Result<DatasetConfig> {
    let p = data.join(DATASET_FILE);
    run.input(&p)?;
    let v: Value = read_json(&p)?;
    typed(v["config"].clone(), &p.display().to_string())
}

/// What evaluate needs to know about a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub kind: String,
    pub name: String,
    pub seed: u64,
    pub config_hash: String,
}

pub struct TrainArgs<'a> {
    pub data: &'a Path,
    pub config: Option<&'a Path>,
    pub sets: &'a [String],
    pub name: Option<&'a str>,
    pub resume: bool,
}

pub fn train(g: &Global, run: &mut Run, a: &TrainArgs) -> Result<()> {
    if let Some(p) = a.config {
        run.input(p)?;
    }
    let dataset = load_dataset(run, a.data)?;
    let tr = load_part(run, a.data, "train")?;
    let va = load_part(run, a.data, "val")?;

    let overlay = layered(json!({}), a.config, TRAIN_SCHEMA, a.sets)?;
    let scheme = match overlay.get("scheme") {
        Some(s) => typed::<Scheme>(s.clone(), &source_name(a.config))?,
        None => dataset.scheme,
    };
    let mut base = TrainConfig::for_scheme(scheme);
    base.model.tau = tr[0].tau;
    base.model.profile_len = tr[0].profile_len;
    base.split = dataset.split;
    let mut v = config::to_value(&base);
    merge(&mut v, overlay);
    if let Some(seed) = g.seed {
        merge(&mut v, json!({ "seed": seed }));
    }
    let cfg: TrainConfig = typed(v, &source_name(a.config))?;
    cfg.validate()?;
    let echo = config::to_value(&cfg);
    let config_hash = hash(&echo);
    run.seed = Some(cfg.seed);
    run.config_hash = Some(config_hash.clone());
    run.write(CONFIG_ECHO, &pretty(&echo))?;

    let ckpt = run.path(CHECKPOINT_FILE);
    let mut trainer = if a.resume && ckpt.is_file() {
        let mut state = checkpoint_load(&ckpt)?;
        state.config.epochs = cfg.epochs;
        if state.config != cfg {
            return Err(Error::Config {
                field: ckpt.display().to_string(),
                reason: "checkpoint was written with a different training config".into(),
            });
        }
        info(g, &format!("resuming at epoch {}", state.next_epoch));
        Trainer::resume(state, &tr, &va)?
    } else {
        Trainer::new(&cfg, &tr, &va)?
    };
    run.record(ckpt.clone());
    trainer.run_until(cfg.epochs, |state| {
        if let Some(r) = state.history.epochs.last() {
            info(
                g,
                &format!(
                    "epoch {:>3} lr {:.2e} train {:.5} val {:.5} sens+spec {:.3}{}",
                    r.epoch,
                    r.lr,
                    r.train_loss,
                    r.val_loss,
                    r.val_sensitivity + r.val_specificity,
                    if r.retained { " *" } else { "" }
                ),
            );
        }
        checkpoint_save(state, &ckpt)
    })?;
    let state = trainer.into_state();
    checkpoint_save(&state, &ckpt)?;
    run.write("history.csv", &state.history.to_csv())?;
    let info_v = RunInfo {
        kind: "model".into(),
        name: a.name.unwrap_or(cfg.scheme.as_str()).to_string(),
        seed: cfg.seed,
        config_hash,
    };
    let mut v = config::to_value(&info_v);
    merge(
        &mut v,
        json!({ "checkpoint": CHECKPOINT_FILE, "selected_epoch": state.history.selected }),
    );
    run.write(RUN_FILE, &pretty(&v))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    Ols,
    Gpa,
}

impl Baseline {
    pub fn as_str(self) -> &'static str {
        match self {
            Baseline::Ols => "ols",
            Baseline::Gpa => "gpa",
        }
    }
}

/// Eye-level visit series reassembled from consecutive windows.
fn eye_series(test: &[SequenceObservation]) -> BTreeMap<(u32, u8), Vec<&SequenceObservation>> {
    let mut eyes: BTreeMap<(u32, u8), Vec<&SequenceObservation>> = BTreeMap::new();
    for o in test {
        eyes.entry((o.subject_id, o.eye_id)).or_default().push(o);
    }
    for ws in eyes.values_mut() {
        ws.sort_by_key(|w| w.window_index);
    }
    eyes
}

pub fn baseline(g: &Global, run: &mut Run, data: &Path, which: Baseline, name: Option<&str>) -> Result<()> {
    let dataset = load_dataset(run, data)?;
    let test = load_part(run, data, "test")?;
    let echo = json!({ "baseline": which.as_str(), "dataset": config::to_value(&dataset) });
    let config_hash = hash(&echo);
    run.seed = Some(dataset.seed);
    run.config_hash = Some(config_hash.clone());
    run.write(CONFIG_ECHO, &pretty(&echo))?;

    let mut scores = vec![0.0; test.len()];
    let mut decisions = vec![false; test.len()];
    match which {
        Baseline::Ols => {
            for (i, o) in test.iter().enumerate() {
                let means = o.global_means();
                let fit = ols_fit(&o.times, &means)?;
                scores[i] = ols_score(&fit);
                decisions[i] = ols_progression(&o.times, &means)?;
            }
        }
        Baseline::Gpa => {
            let index: BTreeMap<String, usize> = test.iter().enumerate().map(|(i, o)| (o.key(), i)).collect();
            let mut followups = String::from("subject_id,eye_id,");
            let mut header = true;
            for ((sid, eid), ws) in eye_series(&test) {
                if ws.iter().enumerate().any(|(k, w)| w.window_index != k) {
                    return Err(Error::Input(format!("test windows of eye {sid}:{eid} are not consecutive")));
                }
                let mut times = ws[0].times.clone();
                let mut profiles: Vec<Vec<f64>> = (0..ws[0].tau).map(|r| ws[0].row(r).to_vec()).collect();
                for w in &ws[1..] {
                    times.push(w.times[w.tau - 1]);
                    profiles.push(w.row(w.tau - 1).to_vec());
                }
                let result = gpa_classify(&times, &profiles, &dataset.gpa)?;
                let owned: Vec<SequenceObservation> = ws.iter().map(|w| (*w).clone()).collect();
                for (w, y) in owned.iter().zip(gpa_label_windows(&result, &owned)) {
                    let i = index[&w.key()];
                    scores[i] = f64::from(y);
                    decisions[i] = y == 1;
                }
                let csv = gpa_followups_csv(&result);
                let mut lines = csv.lines();
                let head = lines.next().unwrap_or_default();
                if header {
                    followups.push_str(head);
                    followups.push('\n');
                    header = false;
                }
                for l in lines {
                    let _ = writeln!(followups, "{sid},{eid},{l}");
                }
            }
            run.write("gpa_followups.csv", &followups)?;
        }
    }
    let mut csv = String::from("key,score,native_decision\n");
    for ((o, s), d) in test.iter().zip(&scores).zip(&decisions) {
        let _ = writeln!(csv, "{},{s},{}", o.key(), u8::from(*d));
    }
    run.write(SCORES_FILE, &csv)?;
    let info_v = RunInfo {
        kind: "baseline".into(),
        name: name.unwrap_or(which.as_str()).to_string(),
        seed: dataset.seed,
        config_hash,
    };
    run.write(RUN_FILE, &pretty(&config::to_value(&info_v)))?;
    info(g, &format!("{} flagged {} of {}", which.as_str(), decisions.iter().filter(|&&d| d).count(), test.len()));
    Ok(())
}

fn read_baseline_scores(path: &Path, test: &[SequenceObservation]) -> Result<(Vec<f64>, Vec<bool>)> {
    let text = read_file(path)?;
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, l)| l) != Some("key,score,native_decision") {
        return Err(Error::Parse { path: path.into(), line: 1, msg: "expected header key,score,native_decision".into() });
    }
    let mut scores = Vec::with_capacity(test.len());
    let mut native = Vec::with_capacity(test.len());
    for (i, line) in lines {
        let bad = |msg: String| Error::Parse { path: path.into(), line: i + 1, msg };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(bad(format!("expected 3 fields, found {}", f.len())));
        }
        let o = test.get(scores.len()).ok_or_else(|| bad("more rows than test observations".into()))?;
        if f[0] != o.key() {
            return Err(bad(format!("key `{}` where `{}` was expected", f[0], o.key())));
        }
        scores.push(f[1].parse::<f64>().map_err(|e| bad(format!("score: {e}")))?);
        native.push(match f[2] {
            "0" => false,
            "1" => true,
            x => return Err(bad(format!("decision `{x}`"))),
        });
    }
    if scores.len() != test.len() {
        return Err(Error::Parse { path: path.into(), line: scores.len() + 1, msg: format!("{} rows for {} test observations", scores.len(), test.len()) });
    }
    Ok((scores, native))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Truth {
    Simulator,
    Gpa,
}

pub struct EvaluateArgs<'a> {
    pub data: &'a Path,
    pub runs: &'a [PathBuf],
    pub target_specificity: f64,
    pub level: f64,
    pub truth: Truth,
}

pub fn evaluate(g: &Global, run: &mut Run, a: &EvaluateArgs) -> Result<()> {
    for (field, v) in [("--target-specificity", a.target_specificity), ("--level", a.level)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::Config { field: field.into(), reason: format!("{v} is not in (0, 1)") });
        }
    }
    if a.runs.is_empty() {
        return Err(Error::Config { field: "--runs".into(), reason: "need at least one run directory".into() });
    }
    let test = load_part(run, a.data, "test")?;
    let truth: Vec<bool> = match a.truth {
        Truth::Simulator => test.iter().map(SequenceObservation::truth_progressing).collect(),
        Truth::Gpa => test
            .iter()
            .map(|o| {
                o.external_label
                    .map(|y| y == 1)
                    .ok_or_else(|| Error::Input(format!("observation {} has no GPA label", o.key())))
            })
            .collect::<Result<_>>()?,
    };
    let keys: Vec<String> = test.iter().map(SequenceObservation::key).collect();
    let slopes: Vec<f64> = test
        .iter()
        .map(|o| ols_fit(&o.times, &o.global_means()).map(|f| f.slope))
        .collect::<Result<_>>()?;

    let truth_name = match a.truth {
        Truth::Simulator => "simulator",
        Truth::Gpa => "gpa",
    };
    let mut report = EvalReport::new(truth_name, a.target_specificity, a.level);
    report.n_observations = test.len();
    report.n_progressing = truth.iter().filter(|&&t| t).count();
    let mut runs_echo = Vec::new();
    for dir in a.runs {
        let info_path = dir.join(RUN_FILE);
        run.input(&info_path)?;
        let ri: RunInfo = typed(read_json::<Value>(&info_path)?, &info_path.display().to_string())?;
        if report.scheme(&ri.name).is_some() {
            return Err(Error::Config { field: info_path.display().to_string(), reason: format!("duplicate run name `{}`", ri.name) });
        }
        let (scores, native) = match ri.kind.as_str() {
            "model" => {
                let ckpt = dir.join(CHECKPOINT_FILE);
                run.input(&ckpt)?;
                let state = checkpoint_load(&ckpt)?;
                let params = state.best.as_ref().unwrap_or(&state.params);
                (scheme_scores(params, &test, &state.config)?, None)
            }
            "baseline" => {
                let p = dir.join(SCORES_FILE);
                run.input(&p)?;
                let (s, n) = read_baseline_scores(&p, &test)?;
                (s, Some(n))
            }
            other => {
                return Err(Error::Config { field: format!("{}: kind", info_path.display()), reason: format!("unknown run kind `{other}`") })
            }
        };
        report.schemes.push(evaluate_scheme(
            &ri.name,
            &keys,
            &scores,
            &truth,
            a.target_specificity,
            a.level,
            Some(&slopes),
            native.as_deref(),
        )?);
        if !report.seeds.contains(&ri.seed) {
            report.seeds.push(ri.seed);
        }
        runs_echo.push(json!({ "name": ri.name, "kind": ri.kind, "config_hash": ri.config_hash }));
    }
    for i in 0..report.schemes.len() {
        for j in i + 1..report.schemes.len() {
            let c = compare_pair(&report.schemes[i], &report.schemes[j])?;
            report.comparisons.push(c);
        }
    }
    report.config = json!({
        "target_specificity": a.target_specificity,
        "level": a.level,
        "truth": truth_name,
        "runs": runs_echo,
    });
    report.config_hash = hash(&report.config);
    run.seed = report.seeds.first().copied();
    run.config_hash = Some(report.config_hash.clone());
    run.write(CONFIG_ECHO, &pretty(&report.config))?;
    for p in write_report(&report, &run.dir)? {
        run.record(p);
    }
    for s in &report.schemes {
        info(g, &format!("{:<16} auc {:.3} hit {:.3} spec {:.3}", s.name, s.auc.auc, s.hit_ratio.ratio, s.achieved_specificity));
    }
    Ok(())
}

pub fn parse_head(s: &str) -> Option<Head> {
    Head::ALL.into_iter().find(|h| h.as_str() == s)
}

pub struct SaliencyArgs<'a> {
    pub checkpoint: &'a Path,
    pub data: &'a Path,
    pub partition: &'a str,
    pub key: Option<&'a str>,
    pub head: Option<Head>,
}

pub fn saliency_cmd(g: &Global, run: &mut Run, a: &SaliencyArgs) -> Result<()> {
    if !PARTS.contains(&a.partition) {
        return Err(Error::Config { field: "--partition".into(), reason: format!("`{}` is not one of train, val, test", a.partition) });
    }
    run.input(a.checkpoint)?;
    let state = checkpoint_load(a.checkpoint)?;
    let set = load_part(run, a.data, a.partition)?;
    let obs = match a.key {
        Some(k) => set
            .iter()
            .find(|o| o.key() == k)
            .ok_or_else(|| Error::Config { field: "--key".into(), reason: format!("no observation `{k}` in the {} partition", a.partition) })?,
        None => &set[0],
    };
    let head = match a.head {
        Some(h) => h,
        None => state.config.score_heads()[0],
    };
    let params = state.best.as_ref().unwrap_or(&state.params);
    let map = saliency(params, obs, head)?;
    let echo = json!({ "key": obs.key(), "head": head.as_str(), "partition": a.partition, "checkpoint_config": config::to_value(&state.config) });
    run.seed = Some(state.config.seed);
    run.config_hash = Some(hash(&echo));
    run.write(CONFIG_ECHO, &pretty(&echo))?;

    let mut csv = String::from("visit,time");
    for p in 0..obs.profile_len {
        let _ = write!(csv, ",p{p}");
    }
    csv.push('\n');
    for r in 0..obs.tau {
        let _ = write!(csv, "{r},{}", obs.times[r]);
        for v in &map[r * obs.profile_len..(r + 1) * obs.profile_len] {
            let _ = write!(csv, ",{v}");
        }
        csv.push('\n');
    }
    run.write("saliency.csv", &csv)?;
    run.write("saliency.svg", &heat_strip(&map, obs.tau, obs.profile_len, &obs.key(), head))?;
    info(g, &format!("saliency of {} on head {}", obs.key(), head.as_str()));
    Ok(())
}

/// One row of cells per visit, darker for larger saliency.
fn heat_strip(map: &[f64], rows: usize, cols: usize, key: &str, head: Head) -> String {
    const CELL: usize = 8;
    const LEFT: usize = 48;
    const TOP: usize = 24;
    let w = LEFT + cols * CELL + 8;
    let h = TOP + rows * CELL + 8;
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"10\">\n"
    );
    let _ = writeln!(s, "<text x=\"4\" y=\"14\">{key} head {}</text>", head.as_str());
    for r in 0..rows {
        let _ = writeln!(s, "<text x=\"4\" y=\"{}\">visit {r}</text>", TOP + r * CELL + CELL - 1);
        for c in 0..cols {
            let v = map[r * cols + c].clamp(0.0, 1.0);
            let shade = (255.0 * (1.0 - v)).round() as u8;
            let _ = writeln!(
                s,
                "<rect x=\"{}\" y=\"{}\" width=\"{CELL}\" height=\"{CELL}\" fill=\"rgb(255,{shade},{shade})\"/>",
                LEFT + c * CELL,
                TOP + r * CELL
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

pub fn report(g: &Global, run: &mut Run, input: &Path) -> Result<()> {
    run.input(input)?;
    let r = EvalReport::from_json(&read_file(input)?).map_err(|e| match e {
        Error::Input(msg) => Error::Input(format!("{}: {msg}", input.display())),
        other => other,
    })?;
    run.seed = r.seeds.first().copied();
    run.config_hash = Some(r.config_hash.clone());
    run.write(CONFIG_ECHO, &pretty(&r.config))?;
    for p in write_report(&r, &run.dir)? {
        run.record(p);
    }
    if !g.quiet {
        print!("{}", render_markdown(&r));
    }
    Ok(())
}
