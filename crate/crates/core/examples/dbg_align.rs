// debug: toy PPO alignment prototype
use empalign::generator::{finetune_mle, FinetuneConfig, GeneratorModel, SamplingConfig, Seq2SeqConfig};
use empalign::ppo::{PpoConfig, PpoTrainer};
use empalign::reward::RewardConfig;
use empalign::tokenizer::Vocab;
use empalign::toy;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let ppo_lr: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let steps: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(300);
    let mle_epochs: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(6);

    let mle_corpus = toy::dialogue_corpus(48, 0.5, 7);
    let rl_corpus = toy::dialogue_corpus(48, 1.0, 8);
    let vocab = Vocab::build(
        mle_corpus.iter().chain(&rl_corpus).flat_map(|s| {
            s.context.iter().map(|u| u.text.as_str()).chain(std::iter::once(s.target.as_str()))
        }),
        500,
    );
    println!("vocab size {}", vocab.len());
    let mut policy = GeneratorModel::new(
        vocab,
        Seq2SeqConfig { embed_dim: 16, hidden_dim: 16, max_context_tokens: 64 },
        5,
    );
    let ft = FinetuneConfig { lr: 0.02, batch_size: 8, epochs: mle_epochs, seed: 5 };
    let log = finetune_mle(&mut policy, &mle_corpus, &mle_corpus[..8].to_vec(), " ", &ft).unwrap();
    println!("mle final ppl {:.3}", log.last().unwrap().val_ppl);

    let reference = policy.clone_as_reference();
    let judges = toy::keyword_judges();
    let cfg = PpoConfig {
        steps,
        lr: ppo_lr,
        batch_size: 8,
        ppo_epochs: 4,
        rollout_sampling: SamplingConfig { max_steps: 8, ..SamplingConfig::default() },
        reward: RewardConfig::default(),
        seed: 11,
        ..PpoConfig::default()
    };
    let mut trainer = PpoTrainer::new(cfg, &policy);
    let t0 = std::time::Instant::now();
    let stats = trainer
        .run(&mut policy, &reference, Some(&judges), &rl_corpus, " ", |_| Ok(()))
        .unwrap();
    println!("ppo took {:.1}s", t0.elapsed().as_secs_f64());

    let decile = stats.len() / 10;
    let mean = |rows: &[empalign::TrainStats], f: fn(&empalign::TrainStats) -> f64| {
        rows.iter().map(f).sum::<f64>() / rows.len() as f64
    };
    let first = &stats[..decile];
    let last = &stats[stats.len() - decile..];
    println!(
        "reward first {:.4} last {:.4} | emp first {:.4} last {:.4} | loss first {:.4} last {:.4} | kl first {:.4} last {:.4}",
        mean(first, |s| s.mean_reward), mean(last, |s| s.mean_reward),
        mean(first, |s| s.mean_empathy_reward), mean(last, |s| s.mean_empathy_reward),
        mean(first, |s| s.total_loss), mean(last, |s| s.total_loss),
        mean(first, |s| s.mean_kl), mean(last, |s| s.mean_kl),
    );
    for (i, s) in rl_corpus.iter().take(3).enumerate() {
        let ctx = empalign::corpus::render_context(s, " ");
        let (_, text) = policy
            .sample(&ctx, &SamplingConfig { max_steps: 10, seed: 1000 + i as u64, ..SamplingConfig::default() })
            .unwrap();
        println!("gen: {text}");
    }
}
