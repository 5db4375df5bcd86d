//! Drivers behind the CLI commands. Each takes a resolved [`GlobalConfig`].

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spcor_core::distill::{
    evaluate_mc4, train_loop, Example, Mc4Report, Model, Student, TeacherInputs, TrainLogRow,
};
use spcor_core::fusion::{fuse, RobotObservation};
use spcor_core::privileged::Privileged;
use spcor_core::rng::SeededRng;
use spcor_core::sampler::{run_sampler, SamplerConfig, Selection};
use spcor_core::stream::{FeatureStream, PoseLog, QueryEmbedding, StreamKind};
use spcor_core::synth::{generate_episode, PlantedEvent, SynthEpisode};
use spcor_core::{Real, Tensor2};

use crate::checkpoint::{load_checkpoint, read_header, save_checkpoint, Restore};
use crate::config::{GlobalConfig, Precision};
use crate::featstore::{
    write_manifest, write_pose_log, write_query, write_raw, write_stream, Episode, EpisodeLoader,
    LoadMode, ManifestFile, QueryEntry, RawTensor, RobotEntry,
};
use crate::selection::{read_selection, write_selection, SelectionFile};
use crate::{SpcorError, SpcorResult};

pub const MANIFEST_NAME: &str = "manifest.json";

/// Runs `f` over `items` on up to `jobs` scoped threads. Results come back
/// in input order whatever the thread count.
pub fn parallel_map<I, O, F>(items: &[I], jobs: usize, f: F) -> Vec<O>
where
    I: Sync,
    O: Send,
    F: Fn(&I) -> O + Sync,
{
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().map(&f).collect();
    }
    let mut slots: Vec<Option<O>> = (0..items.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..jobs)
            .map(|j| {
                let f = &f;
                s.spawn(move || {
                    (j..items.len())
                        .step_by(jobs)
                        .map(|i| (i, f(&items[i])))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (i, o) in h.join().expect("worker thread panicked") {
                slots[i] = Some(o);
            }
        }
    });
    slots.into_iter().map(|o| o.expect("every slot filled")).collect()
}

/// `dir/manifest.json` if present, else every `dir/*/manifest.json`, sorted.
pub fn discover_manifests(dir: &Path) -> SpcorResult<Vec<PathBuf>> {
    let direct = dir.join(MANIFEST_NAME);
    if direct.is_file() {
        return Ok(vec![direct]);
    }
    let entries = fs::read_dir(dir).map_err(|e| SpcorError::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| SpcorError::io(dir, e))?;
        let m = entry.path().join(MANIFEST_NAME);
        if m.is_file() {
            out.push(m);
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(SpcorError::manifest(dir, "no manifest.json found"));
    }
    Ok(out)
}

// ---------------------------------------------------------------- gen-synth

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventsFile {
    pub answer_index: usize,
    pub events: Vec<PlantedEvent>,
}

/// Writes one generated episode into `dir`; returns the manifest path.
pub fn write_synth_episode(ep: &SynthEpisode, dir: &Path) -> SpcorResult<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| SpcorError::io(dir, e))?;
    let mut robots = Vec::with_capacity(ep.robots.len());
    for r in &ep.robots {
        let id = r.robot_id;
        let entry = RobotEntry {
            robot_id: id,
            clip_path: format!("robot{id}_clip.spcr"),
            token_path: format!("robot{id}_tokens.spcr"),
            pose_path: Some(format!("robot{id}_pose.csv")),
            controls_path: Some(format!("robot{id}_controls.csv")),
        };
        write_stream(&r.clip, &dir.join(&entry.clip_path))?;
        write_stream(&r.tokens, &dir.join(&entry.token_path))?;
        write_pose_log(&r.ground_truth, &dir.join(entry.pose_path.as_deref().unwrap_or_default()))?;
        write_pose_log(&r.controls, &dir.join(entry.controls_path.as_deref().unwrap_or_default()))?;
        robots.push(entry);
    }
    write_query(&ep.query, &dir.join("query.spcr"))?;
    let manifest = ManifestFile {
        episode_id: format!("synth-{}", ep.config.seed),
        fps: ep.config.fps,
        n_frames: ep.config.n_frames,
        robots,
        queries: vec![QueryEntry {
            query_path: "query.spcr".into(),
            answer_index: Some(ep.answer_index),
            choices: Some(ep.choices.to_vec()),
        }],
    };
    let path = dir.join(MANIFEST_NAME);
    write_manifest(&manifest, &path)?;
    let events = EventsFile {
        answer_index: ep.answer_index,
        events: ep.events.clone(),
    };
    let events_path = dir.join("events.json");
    let text = serde_json::to_string_pretty(&events).expect("events serialize") + "\n";
    fs::write(&events_path, text).map_err(|e| SpcorError::io(&events_path, e))?;
    Ok(path)
}

/// Generator configs for a run. A single episode uses `seed` directly with
/// the answer robot drawn from it. Several episodes draw their seeds from a
/// generator seeded with `seed`, cycle through the team sizes, and cycle the
/// answer robot per team size so labels stay balanced.
pub fn synth_plan(cfg: &GlobalConfig) -> SpcorResult<Vec<spcor_core::synth::SynthConfig>> {
    let sizes = if cfg.team_sizes.is_empty() {
        vec![spcor_core::synth::SynthConfig::default().n_robots]
    } else {
        cfg.team_sizes.clone()
    };
    let n = cfg.synth.episodes;
    if n == 0 {
        return Err(SpcorError::Usage("--episodes must be positive".into()));
    }
    let plan: Vec<_> = if n == 1 {
        vec![cfg.synth.episode_config(cfg.seed, sizes[0], None)]
    } else {
        let mut rng = SeededRng::new(cfg.seed);
        let mut per_size: BTreeMap<usize, usize> = BTreeMap::new();
        (0..n)
            .map(|i| {
                let size = sizes[i % sizes.len()];
                let count = per_size.entry(size).or_default();
                let answer = *count % size.min(4);
                *count += 1;
                cfg.synth.episode_config(rng.next_u64(), size, Some(answer))
            })
            .collect()
    };
    for c in &plan {
        c.validate()?;
    }
    Ok(plan)
}

pub fn gen_synth(cfg: &GlobalConfig) -> SpcorResult<Vec<PathBuf>> {
    let out = cfg.require(&cfg.paths.out, "out")?;
    let plan = synth_plan(cfg)?;
    let single = plan.len() == 1;
    let dirs: Vec<(PathBuf, _)> = plan
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let d = if single {
                out.to_path_buf()
            } else {
                out.join(format!("ep-{i:05}"))
            };
            (d, c)
        })
        .collect();
    parallel_map(&dirs, cfg.jobs, |(dir, c)| {
        let ep = generate_episode(c)?;
        write_synth_episode(&ep, dir)
    })
    .into_iter()
    .collect()
}

// ------------------------------------------------------------------- sample

/// Runs the sampler at 64 bits on the stored (32-bit) clip streams.
pub fn sample_streams(
    clips: &[&FeatureStream<f32>],
    query: &QueryEmbedding<f32>,
    cfg: &SamplerConfig,
) -> SpcorResult<Selection> {
    let wide: Vec<FeatureStream<f64>> = clips.iter().map(|c| c.cast()).collect();
    let refs: Vec<&FeatureStream<f64>> = wide.iter().collect();
    Ok(run_sampler(&refs, &query.cast(), cfg)?)
}

pub fn sample_episode(ep: &Episode, query: &QueryEmbedding<f32>, cfg: &SamplerConfig) -> SpcorResult<Selection> {
    let clips: Vec<_> = ep.robots.iter().map(|r| &r.clip).collect();
    sample_streams(&clips, query, cfg)
}

pub fn sample(cfg: &GlobalConfig) -> SpcorResult<SelectionFile> {
    let manifest = cfg.require(&cfg.paths.manifest, "manifest")?;
    let out = cfg.require(&cfg.paths.out, "out")?;
    let ep = EpisodeLoader::new(LoadMode::Inference).load(manifest)?;
    let (query_path, query) = match &cfg.paths.query {
        Some(p) => (p.display().to_string(), crate::featstore::read_query(p)?),
        None => {
            let q = &ep.queries[0];
            (q.path.clone(), q.embedding.clone())
        }
    };
    if query.dim() != ep.robots[0].clip.dim() {
        return Err(SpcorError::format(
            &query_path,
            format!("query width {} differs from clip width {}", query.dim(), ep.robots[0].clip.dim()),
        ));
    }
    let selection = sample_episode(&ep, &query, &cfg.sampler)?;
    let file = SelectionFile {
        episode_id: ep.manifest.episode_id.clone(),
        query_path,
        per_robot: selection.per_robot,
        config: cfg.sampler,
    };
    write_selection(&file, out)?;
    Ok(file)
}

// ----------------------------------------------------------------- examples

/// Frames in timestep order, padded to `k` by repeating the last one when
/// the stream is shorter than the budget.
pub fn padded_frames(frames: &[usize], k: usize) -> Vec<usize> {
    let mut f = frames.to_vec();
    if let Some(&last) = f.last() {
        f.resize(k.max(f.len()), last);
    }
    f
}

fn gather_rows<T: Real>(stream: &FeatureStream<f32>, frames: &[usize]) -> Tensor2<T> {
    let data = frames
        .iter()
        .flat_map(|&t| stream.frame(t).iter().map(|&v| T::lit(v as f64)))
        .collect();
    Tensor2::new(frames.len(), stream.dim(), data).expect("row count matches")
}

fn cast_summary<T: Real>(s: [f64; 6]) -> [T; 6] {
    s.map(T::lit)
}

/// Team observations for one selection. Pose summaries come from the
/// commanded controls; ground truth is never touched here.
pub fn team_observations<T: Real>(
    ep: &Episode,
    selection: &Selection,
    k: usize,
) -> SpcorResult<Vec<RobotObservation<T>>> {
    ep.robots
        .iter()
        .map(|r| {
            let frames = selection
                .per_robot
                .iter()
                .find(|s| s.robot_id == r.robot_id)
                .map(|s| padded_frames(&s.frames, k))
                .ok_or_else(|| SpcorError::manifest(&ep.path, format!("selection has no robot {}", r.robot_id)))?;
            let controls = r.controls.as_ref().ok_or_else(|| {
                SpcorError::manifest(&ep.path, format!("robot {} has no controls log", r.robot_id))
            })?;
            Ok(RobotObservation {
                role: r.robot_id as usize,
                tokens: gather_rows(&r.tokens, &frames),
                pose_summary: cast_summary(controls.summarize(&frames)?),
            })
        })
        .collect()
}

/// Ground-truth summaries over the selected frames, kept behind the same
/// tracker as the loaded logs.
fn teacher_inputs<T: Real>(ep: &Episode, selection: &Selection, k: usize) -> SpcorResult<TeacherInputs<T>> {
    let mut tracker = None;
    let mut summaries = Vec::with_capacity(ep.robots.len());
    for (r, sel) in ep.robots.iter().zip(&selection.per_robot) {
        let gt: &Privileged<PoseLog> = r.ground_truth.as_ref().ok_or_else(|| {
            SpcorError::manifest(&ep.path, format!("robot {} has no ground-truth pose log", r.robot_id))
        })?;
        tracker.get_or_insert_with(|| gt.tracker().clone());
        let frames = padded_frames(&sel.frames, k);
        summaries.push(cast_summary(gt.reveal().summarize(&frames)?));
    }
    Ok(TeacherInputs {
        summaries: Privileged::new(summaries, tracker.unwrap_or_default()),
    })
}

/// Every (episode, query) pair of one manifest as an example.
pub fn episode_examples<T: Real>(
    ep: &Episode,
    sampler: &SamplerConfig,
    with_teacher: bool,
) -> SpcorResult<Vec<Example<T>>> {
    ep.queries
        .iter()
        .map(|q| {
            let answer = q.answer_index.ok_or_else(|| {
                SpcorError::manifest(&ep.path, format!("query {} has no answer_index", q.path))
            })?;
            let selection = sample_episode(ep, &q.embedding, sampler)?;
            let team = team_observations(ep, &selection, sampler.k)?;
            let teacher = if with_teacher {
                Some(teacher_inputs(ep, &selection, sampler.k)?)
            } else {
                None
            };
            Ok(Example {
                team,
                query: q.embedding.data().iter().map(|&v| T::lit(v as f64)).collect(),
                answer: Some(answer),
                teacher,
            })
        })
        .collect()
}

/// Loads every manifest under `dir` whose team size passes the filter and
/// turns it into examples. Episode order is the sorted manifest order.
pub fn load_examples<T: Real>(
    dir: &Path,
    loader: &EpisodeLoader,
    sampler: &SamplerConfig,
    team_sizes: &[usize],
    jobs: usize,
) -> SpcorResult<Vec<Example<T>>> {
    let manifests = discover_manifests(dir)?;
    let with_teacher = loader.mode() == LoadMode::Training;
    let per_episode = parallel_map(&manifests, jobs, |m| -> SpcorResult<Vec<Example<T>>> {
        let ep = loader.load(m)?;
        if !team_sizes.is_empty() && !team_sizes.contains(&ep.n_robots()) {
            return Ok(Vec::new());
        }
        episode_examples(&ep, sampler, with_teacher)
    });
    let mut out = Vec::new();
    for r in per_episode {
        out.extend(r?);
    }
    if out.is_empty() {
        return Err(SpcorError::manifest(dir, "no episodes left after the team-size filter"));
    }
    Ok(out)
}

fn example_widths<T: Real>(examples: &[Example<T>], dir: &Path) -> SpcorResult<(usize, usize)> {
    let d_token = examples[0].team[0].tokens.cols();
    let d_query = examples[0].query.len();
    if examples
        .iter()
        .any(|e| e.query.len() != d_query || e.team.iter().any(|r| r.tokens.cols() != d_token))
    {
        return Err(SpcorError::manifest(dir, "episodes disagree on token or query width"));
    }
    Ok((d_token, d_query))
}

// -------------------------------------------------------------------- train

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub log: Vec<TrainLogRow>,
    pub examples: usize,
    pub validation: Option<Mc4Report>,
}

pub fn train(cfg: &GlobalConfig) -> SpcorResult<TrainSummary> {
    match cfg.precision {
        Precision::F32 => train_as::<f32>(cfg),
        Precision::F64 => train_as::<f64>(cfg),
    }
}

fn default_log_path(out: &Path) -> PathBuf {
    let mut name = out.file_stem().unwrap_or_default().to_os_string();
    name.push(".log.csv");
    out.with_file_name(name)
}

fn train_as<T: Real>(cfg: &GlobalConfig) -> SpcorResult<TrainSummary> {
    let dir = cfg.require(&cfg.paths.train_dir, "train-dir")?;
    let out = cfg.require(&cfg.paths.out, "out")?;
    cfg.train.validate()?;
    let distills = cfg.train.weights.distills();
    let loader = EpisodeLoader::new(if distills { LoadMode::Training } else { LoadMode::Inference });
    let examples = load_examples::<T>(dir, &loader, &cfg.sampler, &cfg.team_sizes, cfg.jobs)?;
    let (d_token, d_query) = example_widths(&examples, dir)?;
    let model = Model::<T>::init(cfg.model_config(d_token, d_query))?;
    eprintln!(
        "train: {} examples, {} parameters",
        examples.len(),
        {
            let mut m = model.clone();
            spcor_core::numkit::Parameters::num_params(&mut m)
        }
    );

    let log_path = cfg.paths.log.clone().unwrap_or_else(|| default_log_path(out));
    let mut log_writer = csv::Writer::from_path(&log_path).map_err(|e| SpcorError::format(&log_path, e.to_string()))?;
    let mut write_err = None;
    let outcome = train_loop(model, &examples, &cfg.train, |row| {
        if write_err.is_none() {
            if let Err(e) = log_writer.serialize(row) {
                write_err = Some(e);
            }
        }
        if row.step % 100 == 0 || row.step == 1 {
            eprintln!(
                "step {:>6}  total {:.5}  lm {:.5}  distill {:.5}  |g| {:.4}",
                row.step, row.loss_total, row.loss_lm, row.loss_distill, row.grad_norm
            );
        }
    })?;
    if let Some(e) = write_err {
        return Err(SpcorError::format(&log_path, e.to_string()));
    }
    log_writer.flush().map_err(|e| SpcorError::io(&log_path, e))?;
    save_checkpoint(&outcome.model, Some(&cfg.train), &cfg.sampler, outcome.log.len(), out)?;

    let validation = match &cfg.paths.val_dir {
        Some(val) => {
            let val_examples = load_examples::<T>(
                val,
                &EpisodeLoader::new(LoadMode::Inference),
                &cfg.sampler,
                &cfg.team_sizes,
                cfg.jobs,
            )?;
            let report = evaluate_parallel(&outcome.model.student, &val_examples, cfg.jobs)?;
            eprintln!("validation MC4 accuracy {:.4} ({}/{})", report.accuracy(), report.correct, report.total);
            Some(report)
        }
        None => None,
    };
    Ok(TrainSummary {
        log: outcome.log,
        examples: examples.len(),
        validation,
    })
}

// --------------------------------------------------------------------- eval

pub fn evaluate_parallel<T: Real>(
    student: &Student<T>,
    examples: &[Example<T>],
    jobs: usize,
) -> SpcorResult<Mc4Report> {
    let chunk = examples.len().div_ceil(jobs.max(1)).max(1);
    let chunks: Vec<&[Example<T>]> = examples.chunks(chunk).collect();
    let mut total = Mc4Report::default();
    for r in parallel_map(&chunks, jobs, |c| evaluate_mc4(student, c)) {
        total.merge(&r?);
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub report: Mc4Report,
    pub table: String,
    /// Ground-truth pose files opened while evaluating; always 0.
    pub ground_truth_opens: usize,
    /// Reads of privileged values while evaluating; always 0.
    pub privileged_reads: usize,
}

/// `N=2  N=3  N=4  AVG` accuracy table in percent. AVG is accuracy over all
/// questions pooled.
pub fn format_table(report: &Mc4Report, by_team_size: bool) -> String {
    let mut s = String::new();
    if by_team_size {
        let mut head = format!("{:<6}", "");
        let mut row = format!("{:<6}", "MC4");
        for (&n, &(c, t)) in &report.by_team_size {
            head.push_str(&format!("{:>9}", format!("N={n}")));
            row.push_str(&format!("{:>9.2}", 100.0 * c as f64 / t as f64));
        }
        head.push_str(&format!("{:>9}", "AVG"));
        row.push_str(&format!("{:>9.2}", 100.0 * report.accuracy()));
        s.push_str(&head);
        s.push('\n');
        s.push_str(&row);
        s.push('\n');
    }
    s.push_str(&format!(
        "accuracy {:.4} ({}/{})\n",
        report.accuracy(),
        report.correct,
        report.total
    ));
    s
}

pub fn evaluate(cfg: &GlobalConfig) -> SpcorResult<EvalSummary> {
    match cfg.precision {
        Precision::F32 => evaluate_as::<f32>(cfg),
        Precision::F64 => evaluate_as::<f64>(cfg),
    }
}

fn evaluate_as<T: Real>(cfg: &GlobalConfig) -> SpcorResult<EvalSummary> {
    let dir = cfg.require(&cfg.paths.test_dir, "test-dir")?;
    let ckpt = cfg.require(&cfg.paths.checkpoint, "checkpoint")?;
    let (model, _) = load_checkpoint::<T>(ckpt, Restore::Inference)?;
    let loader = EpisodeLoader::new(LoadMode::Inference);
    let examples = load_examples::<T>(dir, &loader, &cfg.sampler, &cfg.team_sizes, cfg.jobs)?;
    let report = evaluate_parallel(&model.student, &examples, cfg.jobs)?;
    let table = format_table(&report, cfg.by_team_size);
    if let Some(out) = &cfg.paths.out {
        fs::write(out, &table).map_err(|e| SpcorError::io(out, e))?;
    }
    Ok(EvalSummary {
        report,
        table,
        ground_truth_opens: loader.ground_truth_opens(),
        privileged_reads: loader.privileged_tracker().reads(),
    })
}

/// Sampler settings stored in a checkpoint.
pub fn checkpoint_sampler(path: &Path) -> SpcorResult<SamplerConfig> {
    Ok(read_header(path)?.sampler)
}

// --------------------------------------------------------------------- fuse

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefSidecar {
    pub episode_id: String,
    pub robot_ids: Vec<u32>,
    pub weights: Vec<f64>,
    pub sigma_norms: Vec<f64>,
    pub d_belief: usize,
}

pub fn sidecar_path(out: &Path) -> PathBuf {
    out.with_extension("json")
}

pub fn fuse_episode(cfg: &GlobalConfig) -> SpcorResult<BeliefSidecar> {
    match cfg.precision {
        Precision::F32 => fuse_as::<f32>(cfg),
        Precision::F64 => fuse_as::<f64>(cfg),
    }
}

fn fuse_as<T: Real>(cfg: &GlobalConfig) -> SpcorResult<BeliefSidecar> {
    let manifest = cfg.require(&cfg.paths.manifest, "manifest")?;
    let sel_path = cfg.require(&cfg.paths.selection, "selection")?;
    let ckpt = cfg.require(&cfg.paths.checkpoint, "checkpoint")?;
    let out = cfg.require(&cfg.paths.out, "out")?;
    let ep = EpisodeLoader::new(LoadMode::Inference).load(manifest)?;
    let sel = read_selection(sel_path)?;
    if sel.episode_id != ep.manifest.episode_id {
        return Err(SpcorError::format(
            sel_path,
            format!("selection is for episode {}, manifest is {}", sel.episode_id, ep.manifest.episode_id),
        ));
    }
    let (model, _) = load_checkpoint::<T>(ckpt, Restore::Inference)?;
    let k = model.config.fusion.k;
    let team = team_observations::<T>(&ep, &sel.selection(), k)?;
    let (belief, cache) = fuse(&model.student.fusion, &team)?;
    write_raw(
        &RawTensor {
            kind: StreamKind::Token,
            n_frames: 1,
            dim: belief.data.len(),
            data: belief.data.iter().map(|v| v.as_f64() as f32).collect(),
        },
        out,
    )?;
    let sidecar = BeliefSidecar {
        episode_id: ep.manifest.episode_id.clone(),
        robot_ids: ep.robots.iter().map(|r| r.robot_id).collect(),
        weights: belief.weights.iter().map(|w| w.as_f64()).collect(),
        sigma_norms: cache
            .states()
            .iter()
            .map(|s| s.sigma.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt())
            .collect(),
        d_belief: belief.data.len(),
    };
    let side = sidecar_path(out);
    let mut f = fs::File::create(&side).map_err(|e| SpcorError::io(&side, e))?;
    writeln!(f, "{}", serde_json::to_string_pretty(&sidecar).expect("sidecar serializes"))
        .map_err(|e| SpcorError::io(&side, e))?;
    Ok(sidecar)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padding_repeats_last_frame() {
        assert_eq!(padded_frames(&[0], 4), vec![0, 0, 0, 0]);
        assert_eq!(padded_frames(&[1, 5], 3), vec![1, 5, 5]);
        assert_eq!(padded_frames(&[1, 2, 3], 3), vec![1, 2, 3]);
    }

    #[test]
    fn parallel_map_keeps_order() {
        let items: Vec<u32> = (0..17).collect();
        for jobs in [1, 2, 5, 40] {
            assert_eq!(parallel_map(&items, jobs, |x| x * 3), items.iter().map(|x| x * 3).collect::<Vec<_>>());
        }
    }

    #[test]
    fn table_layout() {
        let mut r = Mc4Report::default();
        r.by_team_size.insert(2, (3, 4));
        r.by_team_size.insert(4, (1, 4));
        r.correct = 4;
        r.total = 8;
        let t = format_table(&r, true);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0].split_whitespace().collect::<Vec<_>>(), ["N=2", "N=4", "AVG"]);
        assert_eq!(lines[1].split_whitespace().collect::<Vec<_>>(), ["MC4", "75.00", "25.00", "50.00"]);
    }
}
