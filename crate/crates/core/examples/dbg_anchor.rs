// debug: beta=10 empathy-off anchoring run
use empalign::generator::{finetune_mle, FinetuneConfig, GeneratorModel, SamplingConfig, Seq2SeqConfig};
use empalign::ppo::{PpoConfig, PpoTrainer};
use empalign::reward::RewardConfig;
use empalign::tokenizer::Vocab;
use empalign::toy;

fn main() {
    let corpus = toy::dialogue_corpus(24, 0.5, 7);
    let vocab = Vocab::build(
        corpus.iter().flat_map(|s| {
            s.context.iter().map(|u| u.text.as_str()).chain(std::iter::once(s.target.as_str()))
        }),
        500,
    );
    let mut policy = GeneratorModel::new(
        vocab,
        Seq2SeqConfig { embed_dim: 12, hidden_dim: 12, max_context_tokens: 64 },
        5,
    );
    let ft = FinetuneConfig { lr: 0.02, batch_size: 8, epochs: 4, seed: 5 };
    finetune_mle(&mut policy, &corpus, &corpus[..4].to_vec(), " ", &ft).unwrap();
    let reference = policy.clone_as_reference();
    let judges = toy::keyword_judges();

    let cfg = PpoConfig {
        steps: 100,
        lr: 1e-3,
        batch_size: 8,
        ppo_epochs: 4,
        rollout_sampling: SamplingConfig { max_steps: 8, ..SamplingConfig::default() },
        reward: RewardConfig { beta: 10.0, use_empathy: false, use_kl: true },
        seed: 11,
        ..PpoConfig::default()
    };
    let mut trainer = PpoTrainer::new(cfg, &policy);
    let stats = trainer
        .run(&mut policy, &reference, Some(&judges), &corpus, " ", |_| Ok(()))
        .unwrap();
    let max_abs_kl = stats.iter().map(|s| s.mean_kl.abs()).fold(0.0f64, f64::max);
    let final_kl = stats.last().unwrap().mean_kl;
    println!("steps {} max |mean KL| {max_abs_kl:.6} final {final_kl:.6}", stats.len());
    let moved: f64 = policy
        .flat_params()
        .iter()
        .zip(reference.flat_params())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("max param drift vs reference {moved:.3e}");
}
