//! Subcommand implementations.

use std::io::{BufRead, Read, Write};
use std::path::{Path, PathBuf};

use empalign::corpus::{self, DialogueSample, Mechanism};
use empalign::evalmetrics;
use empalign::generator::{finetune_mle, GeneratorModel, GeneratorRole};
use empalign::identifier::{train_identifier, IdentifierModel, JudgeSet};
use empalign::nn::AdamW;
use empalign::ppo::{PpoTrainer, StepEvent, TrainStats};
use empalign::tokenizer::Vocab;
use empalign::RunConfig;

use crate::errors::CliError;
use crate::Ablation;

fn require_path(path: &Option<PathBuf>, what: &str) -> Result<PathBuf, CliError> {
    path.clone()
        .ok_or_else(|| CliError::validation(format!("config is missing corpus.{what}")))
}

fn load_dialogues(cfg: &RunConfig, path: &Path) -> Result<Vec<DialogueSample>, CliError> {
    corpus::load_dialogues(path, cfg.corpus.dialogue_format).map_err(CliError::validation)
}

pub fn train_identifiers(cfg: &RunConfig) -> Result<(), CliError> {
    let annotated = require_path(&cfg.corpus.annotated, "annotated")?;
    let pairs = corpus::load_annotated_pairs_joint(&annotated).map_err(CliError::validation)?;
    let (train, val) = corpus::split(&pairs, cfg.corpus.holdout_fraction, cfg.identifier.seed)
        .map_err(CliError::validation)?;
    log::info!(
        "training identifiers on {} pairs ({} validation)",
        train.len(),
        val.len()
    );

    let mut summary = String::from("mechanism,best_epoch,best_val_weighted_f1\n");
    for mechanism in Mechanism::ALL {
        let (model, log) =
            train_identifier(&train, &val, mechanism, &cfg.identifier).map_err(CliError::general)?;
        let dir = cfg.identifier_dir(mechanism);
        model.save_checkpoint(&dir).map_err(CliError::general)?;
        cfg.snapshot(&dir).map_err(CliError::general)?;
        let mut csv = String::from("epoch,train_loss,val_weighted_f1\n");
        for row in &log {
            csv.push_str(&format!(
                "{},{},{}\n",
                row.epoch, row.train_loss, row.val_weighted_f1
            ));
        }
        std::fs::write(dir.join("metrics.csv"), csv).map_err(CliError::general)?;
        let best = log
            .iter()
            .max_by(|a, b| a.val_weighted_f1.partial_cmp(&b.val_weighted_f1).unwrap())
            .expect("at least one epoch");
        summary.push_str(&format!(
            "{},{},{}\n",
            mechanism, best.epoch, best.val_weighted_f1
        ));
        log::info!(
            "{mechanism}: best validation weighted-F1 {:.4} (epoch {})",
            best.val_weighted_f1,
            best.epoch
        );
    }
    std::fs::create_dir_all(cfg.identifiers_dir()).map_err(CliError::general)?;
    std::fs::write(cfg.identifiers_dir().join("summary.csv"), summary)
        .map_err(CliError::general)?;
    cfg.snapshot(&cfg.identifiers_dir()).map_err(CliError::general)?;
    Ok(())
}

pub fn finetune(cfg: &RunConfig) -> Result<(), CliError> {
    let train_path = require_path(&cfg.corpus.dialogues_train, "dialogues_train")?;
    let val_path = require_path(&cfg.corpus.dialogues_val, "dialogues_val")?;
    let train = load_dialogues(cfg, &train_path)?;
    let val = load_dialogues(cfg, &val_path)?;
    log::info!(
        "fine-tuning on {} samples ({} validation)",
        train.len(),
        val.len()
    );

    let sep = cfg.corpus.turn_separator.as_str();
    let vocab = Vocab::build(
        train
            .iter()
            .flat_map(|s| {
                s.context
                    .iter()
                    .map(|u| u.text.as_str())
                    .chain(std::iter::once(s.target.as_str()))
            }),
        cfg.generator.max_vocab,
    );
    let mut model = GeneratorModel::new(
        vocab,
        cfg.generator.model.clone(),
        cfg.generator.finetune.seed,
    );
    let log = finetune_mle(&mut model, &train, &val, sep, &cfg.generator.finetune)
        .map_err(CliError::general)?;

    let dir = cfg.generator_dir();
    model.save_checkpoint(&dir).map_err(CliError::general)?;
    cfg.snapshot(&dir).map_err(CliError::general)?;
    let mut csv = String::from("epoch,train_loss,val_ppl\n");
    for row in &log {
        csv.push_str(&format!("{},{},{}\n", row.epoch, row.train_loss, row.val_ppl));
    }
    std::fs::write(dir.join("metrics.csv"), csv).map_err(CliError::general)?;
    let best = log
        .iter()
        .map(|r| r.val_ppl)
        .fold(f64::INFINITY, f64::min);
    log::info!("fine-tuning done; best validation PPL {best:.4}");
    Ok(())
}

fn load_judges(cfg: &RunConfig) -> Result<JudgeSet, CliError> {
    let mut models = Vec::with_capacity(3);
    for mechanism in Mechanism::ALL {
        let dir = cfg.identifier_dir(mechanism);
        let model = IdentifierModel::load_checkpoint(&dir).map_err(|e| {
            CliError::missing(format!(
                "identifier checkpoint for {mechanism} not found at {}: {e}",
                dir.display()
            ))
        })?;
        if model.mechanism != mechanism {
            return Err(CliError::validation(format!(
                "checkpoint at {} is for {}, expected {mechanism}",
                dir.display(),
                model.mechanism
            )));
        }
        models.push(model);
    }
    let mut iter = models.into_iter();
    JudgeSet::new([
        Box::new(iter.next().unwrap()),
        Box::new(iter.next().unwrap()),
        Box::new(iter.next().unwrap()),
    ])
    .map_err(CliError::general)
}

struct StatsFile {
    path: PathBuf,
    rows: Vec<String>,
}

impl StatsFile {
    fn fresh(path: PathBuf) -> Self {
        Self {
            path,
            rows: Vec::new(),
        }
    }

    /// Keep rows up to and including `step`, dropping any later ones left
    /// behind by an interrupted run.
    fn resumed(path: PathBuf, step: usize) -> Result<Self, CliError> {
        let mut rows = Vec::new();
        if path.exists() {
            let raw = std::fs::read_to_string(&path).map_err(CliError::general)?;
            for line in raw.lines().skip(1) {
                let first = line.split(',').next().unwrap_or_default();
                if let Ok(s) = first.parse::<usize>() {
                    if s <= step {
                        rows.push(line.to_string());
                    }
                }
            }
        }
        Ok(Self { path, rows })
    }

    fn append(&mut self, stats: &TrainStats) -> Result<(), CliError> {
        self.rows.push(stats.csv_row());
        self.write()
    }

    fn write(&self) -> Result<(), CliError> {
        let mut body = String::from(TrainStats::CSV_HEADER);
        body.push('\n');
        for row in &self.rows {
            body.push_str(row);
            body.push('\n');
        }
        std::fs::write(&self.path, body).map_err(CliError::general)
    }
}

fn audit_lines(event: &StepEvent) -> Vec<String> {
    event
        .rollouts
        .iter()
        .map(|r| {
            let kl = &r.breakdown.kl_per_token;
            let mean_kl: f64 = kl.iter().sum::<f64>() / kl.len() as f64;
            serde_json::json!({
                "step": event.step,
                "id": r.trajectory.sample_id,
                "assessment": r.assessment,
                "empathy_reward": r.breakdown.empathy_reward,
                "mean_kl": mean_kl,
                "total_reward": r.trajectory.rewards.iter().sum::<f64>(),
            })
            .to_string()
        })
        .collect()
}

#[derive(serde::Serialize, serde::Deserialize)]
struct TrainerState {
    next_step: usize,
}

fn save_rl_checkpoint(
    dir: &Path,
    policy: &GeneratorModel,
    optimizer: &AdamW,
    next_step: usize,
) -> Result<(), CliError> {
    policy.save_checkpoint(dir).map_err(CliError::general)?;
    std::fs::write(
        dir.join("optimizer.json"),
        serde_json::to_string(optimizer).expect("optimizer serializes"),
    )
    .map_err(CliError::general)?;
    std::fs::write(
        dir.join("state.json"),
        serde_json::to_string(&TrainerState { next_step }).expect("state serializes"),
    )
    .map_err(CliError::general)
}

fn latest_rl_checkpoint(checkpoints_dir: &Path) -> Option<(usize, PathBuf)> {
    let entries = std::fs::read_dir(checkpoints_dir).ok()?;
    let mut best: Option<(usize, PathBuf)> = None;
    for entry in entries.flatten() {
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(step) = name.strip_prefix("step_").and_then(|s| s.parse::<usize>().ok()) {
            if best.as_ref().is_none_or(|(b, _)| step > *b) {
                best = Some((step, entry.path()));
            }
        }
    }
    best
}

pub fn train_rl(cfg: &RunConfig, ablation: Ablation, resume: bool) -> Result<(), CliError> {
    let generator_dir = cfg.generator_dir();
    let base = GeneratorModel::load_checkpoint(&generator_dir).map_err(|e| {
        CliError::missing(format!(
            "generator checkpoint not found at {}: {e} (run `finetune` first)",
            generator_dir.display()
        ))
    })?;
    let judges = load_judges(cfg)?;
    let reference = base.clone_as_reference();

    let mut run_cfg = cfg.clone();
    match ablation {
        Ablation::None => {}
        Ablation::NoKl => run_cfg.ppo.reward.use_kl = false,
        Ablation::NoEmpathy => run_cfg.ppo.reward.use_empathy = false,
    }

    let train_path = require_path(&run_cfg.corpus.dialogues_train, "dialogues_train")?;
    let corpus = load_dialogues(&run_cfg, &train_path)?;

    let rl_dir = run_cfg.rl_dir();
    std::fs::create_dir_all(&rl_dir).map_err(CliError::general)?;
    let checkpoints_dir = rl_dir.join("checkpoints");
    let stats_path = rl_dir.join("stats.csv");
    let audit_path = rl_dir.join("reward_audit.jsonl");

    let (mut policy, mut trainer, mut stats_file, mut audit_rows) = if resume {
        let (step, ck_dir) = latest_rl_checkpoint(&checkpoints_dir).ok_or_else(|| {
            CliError::missing(format!(
                "no checkpoint to resume from under {}",
                checkpoints_dir.display()
            ))
        })?;
        let policy = GeneratorModel::load_checkpoint(&ck_dir).map_err(CliError::general)?;
        let optimizer: AdamW = serde_json::from_str(
            &std::fs::read_to_string(ck_dir.join("optimizer.json")).map_err(CliError::general)?,
        )
        .map_err(CliError::general)?;
        let state: TrainerState = serde_json::from_str(
            &std::fs::read_to_string(ck_dir.join("state.json")).map_err(CliError::general)?,
        )
        .map_err(CliError::general)?;
        let trainer = PpoTrainer::with_state(run_cfg.ppo.clone(), optimizer, state.next_step);
        let stats_file = StatsFile::resumed(stats_path, step)?;
        let audit_rows = load_audit_rows(&audit_path, step)?;
        log::info!("resuming PPO from step {}", state.next_step);
        (policy, trainer, stats_file, audit_rows)
    } else {
        let trainer = PpoTrainer::new(run_cfg.ppo.clone(), &base);
        (base, trainer, StatsFile::fresh(stats_path), Vec::new())
    };

    let checkpoint_every = run_cfg.ppo.checkpoint_every.max(1);
    let sep = run_cfg.corpus.turn_separator.clone();
    let mut pending_stats: Vec<TrainStats> = Vec::new();
    let run_result = trainer.run(
        &mut policy,
        &reference,
        Some(&judges),
        &corpus,
        &sep,
        |event| {
            pending_stats.push(event.stats.clone());
            audit_rows.extend(audit_lines(event));
            if event.step % checkpoint_every == 0 {
                let dir = checkpoints_dir.join(format!("step_{}", event.step));
                save_rl_checkpoint(&dir, event.policy, event.optimizer, event.step + 1)
                    .map_err(|e| e.to_string())?;
            }
            Ok(())
        },
    );

    // persist whatever completed, then surface the error if any
    for stats in &pending_stats {
        stats_file.append(stats)?;
    }
    std::fs::write(&audit_path, audit_rows.join("\n") + "\n").map_err(CliError::general)?;
    run_cfg.snapshot(&rl_dir).map_err(CliError::general)?;
    match run_result {
        Ok(_) => {}
        Err(err) => return Err(CliError::from_ppo(err)),
    }

    policy
        .save_checkpoint(&rl_dir.join("policy"))
        .map_err(CliError::general)?;
    save_rl_checkpoint(
        &checkpoints_dir.join(format!("step_{}", run_cfg.ppo.steps)),
        &policy,
        trainer.optimizer(),
        run_cfg.ppo.steps + 1,
    )?;
    log::info!("PPO training complete; policy at {}", rl_dir.join("policy").display());
    Ok(())
}

fn load_audit_rows(path: &Path, step: usize) -> Result<Vec<String>, CliError> {
    let mut rows = Vec::new();
    if path.exists() {
        let file = std::fs::File::open(path).map_err(CliError::general)?;
        for line in std::io::BufReader::new(file).lines() {
            let line = line.map_err(CliError::general)?;
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value =
                serde_json::from_str(&line).map_err(CliError::general)?;
            if value.get("step").and_then(|s| s.as_u64()).unwrap_or(u64::MAX) <= step as u64 {
                rows.push(line);
            }
        }
    }
    Ok(rows)
}

fn resolve_model_dir(cfg: &RunConfig, explicit: Option<&Path>) -> Result<PathBuf, CliError> {
    if let Some(dir) = explicit {
        if dir.join("weights.json").exists() {
            return Ok(dir.to_path_buf());
        }
        return Err(CliError::missing(format!(
            "no model checkpoint at {}",
            dir.display()
        )));
    }
    let rl_policy = cfg.rl_dir().join("policy");
    if rl_policy.join("weights.json").exists() {
        return Ok(rl_policy);
    }
    let generator = cfg.generator_dir();
    if generator.join("weights.json").exists() {
        return Ok(generator);
    }
    Err(CliError::missing(
        "no model checkpoint found (looked in rl/policy and generator/); run `finetune` first",
    ))
}

pub fn evaluate(cfg: &RunConfig, model_dir: Option<&Path>) -> Result<(), CliError> {
    let test_path = require_path(&cfg.corpus.dialogues_test, "dialogues_test")?;
    let samples = load_dialogues(cfg, &test_path)?;
    let dir = resolve_model_dir(cfg, model_dir)?;
    let model = GeneratorModel::load_checkpoint(&dir).map_err(CliError::general)?;
    log::info!("evaluating {} on {} samples", dir.display(), samples.len());

    let judges = match load_judges(cfg) {
        Ok(judges) => Some(judges),
        Err(err) => {
            log::warn!("identifier checkpoints unavailable ({err}); Emp-F1 will be omitted");
            None
        }
    };

    let mut eval_cfg = cfg.eval.clone();
    eval_cfg.turn_separator = cfg.corpus.turn_separator.clone();
    let (report, records) = evalmetrics::evaluate(&model, judges.as_ref(), &samples, &eval_cfg)
        .map_err(CliError::general)?;

    let eval_dir = cfg.eval_dir();
    std::fs::create_dir_all(&eval_dir).map_err(CliError::general)?;
    std::fs::write(
        eval_dir.join("report.json"),
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )
    .map_err(CliError::general)?;
    let mut dump = String::new();
    for record in &records {
        dump.push_str(&serde_json::to_string(record).expect("record serializes"));
        dump.push('\n');
    }
    std::fs::write(eval_dir.join("generations.jsonl"), dump).map_err(CliError::general)?;
    cfg.snapshot(&eval_dir).map_err(CliError::general)?;

    println!("samples:  {}", report.n_samples);
    match report.ppl {
        Some(ppl) => println!("ppl:      {ppl:.4}"),
        None => println!("ppl:      n/a"),
    }
    println!("dist-1:   {:.2}", report.dist1 * 100.0);
    println!("dist-2:   {:.2}", report.dist2 * 100.0);
    match (&report.emp_f1, &report.per_mechanism_f1) {
        (Some(score), Some(per)) => {
            println!("emp-f1:   {:.2}", score * 100.0);
            for (mechanism, f1) in per {
                println!("  {mechanism}: {:.2}", f1 * 100.0);
            }
        }
        _ => println!("emp-f1:   n/a (identifiers unavailable)"),
    }
    Ok(())
}

pub fn generate(
    cfg: &RunConfig,
    context: Option<&str>,
    greedy: bool,
    model_dir: Option<&Path>,
) -> Result<(), CliError> {
    let context = match context {
        Some(text) => text.to_string(),
        None => {
            let mut buf = String::new();
            std::io::stdin()
                .read_to_string(&mut buf)
                .map_err(CliError::general)?;
            buf
        }
    };
    if context.trim().is_empty() {
        return Err(CliError::validation(
            "empty context: pass --context or pipe text on stdin",
        ));
    }
    let dir = resolve_model_dir(cfg, model_dir)?;
    let model = GeneratorModel::load_checkpoint(&dir).map_err(CliError::general)?;
    if model.role() == GeneratorRole::Reference {
        log::warn!("generating from a reference checkpoint");
    }
    let mut sampling = cfg.eval.sampling.clone();
    if greedy {
        sampling.top_k = 1;
    }
    let (_, text) = model
        .sample(context.trim(), &sampling)
        .map_err(CliError::general)?;
    let mut stdout = std::io::stdout();
    writeln!(stdout, "{text}").map_err(CliError::general)?;
    Ok(())
}
