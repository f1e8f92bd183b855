use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use vmr_core::analysis::{answer_question, AnalysisContext};
use vmr_core::captioning::{run_captioning, CaptionContext};
use vmr_core::config::Config;
use vmr_core::diagnostics::Diagnostics;
use vmr_core::gateway::transcript::{jsonl_files, read_jsonl, replay_ledger, TranscriptLog, TranscriptRecord};
use vmr_core::gateway::Gateway;
use vmr_core::harness::{evaluate, load_benchmark, run_baseline, Prediction, Report};
use vmr_core::store::{self, CaptionStore, Phase};
use vmr_core::structured_io::Templates;
use vmr_core::types::Question;
use vmr_core::video::{find_video, open_video, FrameSource};

/// Call logs live here, under the store root.
const CALLS_DIR: &str = "calls";

#[derive(Parser)]
#[command(
    name = "vmr",
    version,
    about = "Question answering over long videos via scene captions"
)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Caption store root (overrides the config).
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    /// Directory searched for videos by id (overrides the config).
    #[arg(long = "videos", global = true, value_name = "DIR")]
    videos_dir: Option<PathBuf>,
    /// Replay model replies from call logs under DIR instead of calling an API.
    #[arg(long, global = true, value_name = "DIR")]
    scripted: Option<PathBuf>,
    /// Concurrency for model calls and worker pools.
    #[arg(long, global = true, value_name = "N")]
    parallel: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build (or resume) the caption store for each video.
    Caption {
        /// Video files, synthetic manifests or ids found in the videos directory.
        #[arg(required = true)]
        videos: Vec<String>,
        /// Stop after this phase: split, characters, describe or reduce.
        #[arg(long)]
        stop_after: Option<Phase>,
    },
    /// Answer one question about a captioned video.
    Ask {
        video_id: String,
        question: String,
        /// An answer option; repeat for each option in order.
        #[arg(long = "option", required = true)]
        options: Vec<String>,
        /// Write the full answer trace as JSON.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Answer every question of a benchmark file and report accuracy.
    Eval {
        benchmark: PathBuf,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Write one answer trace per line.
        #[arg(long)]
        traces: Option<PathBuf>,
    },
    /// Score the uniform-frame baseline on a benchmark file.
    Baseline {
        benchmark: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Show what a caption store holds.
    Inspect {
        video_id: String,
        /// Print every scene caption.
        #[arg(long)]
        scenes: bool,
    },
    /// Rebuild usage and cost totals from call logs.
    Cost {
        /// Log file or directory; defaults to the store's call logs.
        logs: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let cfg = load_config(&cli)?;
    let out = match &cli.command {
        Command::Caption { videos, stop_after } => caption(&cfg, videos, *stop_after)?,
        Command::Ask {
            video_id,
            question,
            options,
            trace,
        } => ask(&cfg, video_id, question, options, trace.as_deref())?,
        Command::Eval {
            benchmark,
            json,
            traces,
        } => eval(&cfg, benchmark, json.as_deref(), traces.as_deref())?,
        Command::Baseline { benchmark, json } => baseline(&cfg, benchmark, json.as_deref())?,
        Command::Inspect { video_id, scenes } => inspect(&cfg, video_id, *scenes)?,
        Command::Cost { logs } => cost(&cfg, logs.as_deref())?,
    };
    let mut stdout = std::io::stdout().lock();
    stdout.write_all(out.as_bytes())?;
    stdout.flush()?;
    Ok(())
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => Config::default(),
    };
    if let Some(s) = &cli.store {
        cfg.store_root = s.clone();
    }
    if let Some(v) = &cli.videos_dir {
        cfg.videos_dir = Some(v.clone());
    }
    if let Some(d) = &cli.scripted {
        cfg.use_scripted(d);
    }
    if let Some(n) = cli.parallel {
        cfg.set_parallelism(n);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn templates(cfg: &Config) -> Result<Templates> {
    Ok(match &cfg.templates_dir {
        Some(d) => Templates::with_overrides(d)?,
        None => Templates::builtin(),
    })
}

fn gateway(cfg: &Config, log_name: &str) -> Result<Gateway> {
    let mut gw = cfg.build_gateway()?;
    let path = cfg.store_root.join(CALLS_DIR).join(format!("{log_name}.jsonl"));
    gw.set_log(Some(TranscriptLog::open(&path)?));
    Ok(gw)
}

fn resolve_video(cfg: &Config, arg: &str) -> Result<Box<dyn FrameSource>> {
    let direct = Path::new(arg);
    let path = if direct.is_file() {
        direct.to_path_buf()
    } else {
        let dir = cfg
            .videos_dir
            .as_ref()
            .with_context(|| format!("{arg} is not a file and no videos directory is configured"))?;
        find_video(dir, arg)?
    };
    Ok(open_video(&path, &cfg.decoder)?)
}

fn warnings_line(d: &Diagnostics) -> String {
    format!("warnings: {}\n", d.len())
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn caption(cfg: &Config, videos: &[String], stop_after: Option<Phase>) -> Result<String> {
    let templates = templates(cfg)?;
    let mut out = String::new();
    for arg in videos {
        let video = resolve_video(cfg, arg)?;
        let log_name = format!("caption-{}", video.video_id());
        let gw = gateway(cfg, &log_name)?;
        let diagnostics = Diagnostics::default();
        let ctx = CaptionContext {
            gateway: &gw,
            templates: &templates,
            video: video.as_ref(),
            sampling: &cfg.sampling,
            cfg: &cfg.captioning,
            diagnostics: &diagnostics,
        };
        let outcome = run_captioning(&ctx, &cfg.store_root, stop_after)
            .with_context(|| format!("captioning {}", video.video_id()))?;
        match outcome.stopped_after {
            Some(p) => out.push_str(&format!("{}: stopped after {}\n", video.video_id(), p.as_str())),
            None => out.push_str(&format!(
                "{}: {} scenes, {} merges, {} characters\n",
                video.video_id(),
                outcome.store.scenes.len(),
                outcome.merges,
                outcome.store.registry.records.len()
            )),
        }
        out.push_str(&warnings_line(&diagnostics));
    }
    Ok(out)
}

type LoadedVideo = (CaptionStore, Box<dyn FrameSource>);

/// Loaded stores and frame sources for every video a benchmark mentions.
struct Corpus {
    videos: BTreeMap<String, Result<LoadedVideo, String>>,
}

impl Corpus {
    fn load(cfg: &Config, questions: &[Question], need_store: bool) -> Corpus {
        let mut videos = BTreeMap::new();
        for q in questions {
            videos.entry(q.video_id.clone()).or_insert_with(|| {
                let video = resolve_video(cfg, &q.video_id).map_err(|e| format!("{e:#}"))?;
                let store = if need_store {
                    let s = store::load(&q.video_id, &cfg.store_root).map_err(|e| e.to_string())?;
                    if s.needs_resume() {
                        return Err(format!(
                            "caption store for {} is incomplete; run caption first",
                            q.video_id
                        ));
                    }
                    s
                } else {
                    CaptionStore {
                        video_id: q.video_id.clone(),
                        duration: video.duration(),
                        scenes: vec![],
                        registry: Default::default(),
                        phases: Default::default(),
                    }
                };
                Ok((store, video))
            });
        }
        Corpus { videos }
    }

    fn get(&self, video_id: &str) -> Result<&LoadedVideo, String> {
        match self.videos.get(video_id) {
            Some(Ok(v)) => Ok(v),
            Some(Err(e)) => Err(e.clone()),
            None => Err(format!("unknown video {video_id}")),
        }
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn ask(cfg: &Config, video_id: &str, text: &str, options: &[String], trace: Option<&Path>) -> Result<String> {
    if options.len() > 5 {
        bail!("at most 5 options are supported");
    }
    let templates = templates(cfg)?;
    let gw = gateway(cfg, "ask")?;
    let q = Question {
        question_id: "ask".into(),
        video_id: video_id.into(),
        text: text.into(),
        options: options.to_vec(),
        category: None,
        gt_answer: None,
        gt_interval: None,
    };
    let corpus = Corpus::load(cfg, std::slice::from_ref(&q), true);
    let (store, video) = corpus.get(video_id).map_err(anyhow::Error::msg)?;
    let diagnostics = Diagnostics::default();
    let ctx = AnalysisContext {
        gateway: &gw,
        templates: &templates,
        video: video.as_ref(),
        sampling: &cfg.sampling,
        cfg: &cfg.analysis,
        diagnostics: &diagnostics,
    };
    let t = answer_question(&ctx, store, &q)?;
    if let Some(p) = trace {
        write_json(p, &t)?;
    }
    let mut out = format!(
        "answer: {}{}\n",
        t.answer.letter,
        if t.answer.guessed { " (guessed)" } else { "" }
    );
    let relevant: Vec<String> = t.global.relevant.iter().map(|iv| iv.to_string()).collect();
    out.push_str(&format!("relevant: {}\n", relevant.join(" ")));
    if !t.answer.reasoning.is_empty() {
        out.push_str(&format!("reasoning: {}\n", t.answer.reasoning));
    }
    out.push_str(&warnings_line(&diagnostics));
    Ok(out)
}

fn finish_report(report: &Report, json: Option<&Path>, diagnostics: &Diagnostics) -> Result<String> {
    if let Some(p) = json {
        write_json(p, report)?;
    }
    Ok(format!("{}{}", report.render(), warnings_line(diagnostics)))
}

fn eval(cfg: &Config, benchmark: &Path, json: Option<&Path>, traces: Option<&Path>) -> Result<String> {
    let questions = load_benchmark(benchmark)?;
    let templates = templates(cfg)?;
    let gw = gateway(cfg, "eval")?;
    let corpus = Corpus::load(cfg, &questions, true);
    let diagnostics = Diagnostics::default();
    let all_traces = std::sync::Mutex::new(BTreeMap::new());
    let report = evaluate(
        &questions,
        cfg.harness.workers,
        || gw.ledger(),
        |q| {
            let (store, video) = corpus.get(&q.video_id)?;
            let ctx = AnalysisContext {
                gateway: &gw,
                templates: &templates,
                video: video.as_ref(),
                sampling: &cfg.sampling,
                cfg: &cfg.analysis,
                diagnostics: &diagnostics,
            };
            let t = answer_question(&ctx, store, q).map_err(|e| e.to_string())?;
            let p = Prediction {
                answer: t.answer.clone(),
                relevant: Some(t.global.relevant.clone()),
            };
            all_traces.lock().unwrap().insert(q.question_id.clone(), t);
            Ok(p)
        },
    );
    if let Some(path) = traces {
        let all = all_traces.into_inner().unwrap();
        let mut text = String::new();
        for q in &questions {
            if let Some(t) = all.get(&q.question_id) {
                text.push_str(&serde_json::to_string(t)?);
                text.push('\n');
            }
        }
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    finish_report(&report, json, &diagnostics)
}

fn baseline(cfg: &Config, benchmark: &Path, json: Option<&Path>) -> Result<String> {
    let questions = load_benchmark(benchmark)?;
    let templates = templates(cfg)?;
    let gw = gateway(cfg, "baseline")?;
    let corpus = Corpus::load(cfg, &questions, false);
    let report = evaluate(
        &questions,
        cfg.harness.workers,
        || gw.ledger(),
        |q| {
            let (_, video) = corpus.get(&q.video_id)?;
            let answer = run_baseline(&gw, &templates, video.as_ref(), q, &cfg.harness).map_err(|e| e.to_string())?;
            Ok(Prediction { answer, relevant: None })
        },
    );
    finish_report(&report, json, &Diagnostics::default())
}

fn inspect(cfg: &Config, video_id: &str, scenes: bool) -> Result<String> {
    let s = store::load(video_id, &cfg.store_root)?;
    let done: Vec<&str> = Phase::ALL
        .into_iter()
        .filter(|p| s.phases.is_done(*p))
        .map(Phase::as_str)
        .collect();
    let mut out = format!(
        "video: {}\nduration: {:.1}s\nphases done: {}\nscenes: {}\ncharacters: {}\n",
        s.video_id,
        s.duration,
        if done.is_empty() {
            "none".to_string()
        } else {
            done.join(", ")
        },
        s.scenes.len(),
        s.registry.records.len()
    );
    for r in &s.registry.records {
        out.push_str(&format!("  <{}> {}\n", r.name, r.description));
    }
    if scenes {
        for sc in &s.scenes {
            out.push_str(&format!("{}\n", sc.caption_line()));
        }
    }
    Ok(out)
}

fn cost(cfg: &Config, logs: Option<&Path>) -> Result<String> {
    let root = logs
        .map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.store_root.join(CALLS_DIR));
    let mut records = Vec::new();
    for file in jsonl_files(&root)? {
        records.extend(read_jsonl::<TranscriptRecord>(&file)?);
    }
    let ledger = replay_ledger(&records);
    Ok(format!("calls replayed: {}\n{}", records.len(), ledger.render_table()))
}
