// debug: finite-difference gradient check on the micro backbone
use empalign::generator::{GeneratorModel, SamplingConfig, Seq2SeqConfig};
use empalign::ppo::{collect_rollouts, policy_loss_components, policy_loss_gradients, PpoConfig};
use empalign::reward::RewardConfig;
use empalign::tokenizer::Vocab;
use empalign::toy;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let vocab = Vocab::build(["sad day here sorry sounds what ok"], 10);
    let mut policy = GeneratorModel::new(
        vocab,
        Seq2SeqConfig { embed_dim: 4, hidden_dim: 4, max_context_tokens: 16 },
        3,
    );
    println!("param count: {}", policy.flat_params().len());
    let reference = policy.clone_as_reference();

    let samples = toy::dialogue_corpus(2, 1.0, 3);
    let cfg = PpoConfig {
        batch_size: 2,
        rollout_sampling: SamplingConfig { max_steps: 4, ..SamplingConfig::default() },
        reward: RewardConfig::default(),
        ..PpoConfig::default()
    };
    let judges = toy::keyword_judges();
    let trajectories =
        collect_rollouts(&policy, &reference, Some(&judges), &samples, &cfg, " ").unwrap();

    // move off the ratio = 1 kink before differentiating
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut flat = policy.flat_params();
    for x in flat.iter_mut() {
        *x += rng.gen_range(-0.05..0.05);
    }
    policy.set_flat_params(&flat);

    let (loss, grads) = policy_loss_gradients(&policy, &trajectories, 0.2, 0.1).unwrap();
    let flat_grads: Vec<f64> = grads.iter().flat_map(|g| g.data().iter().copied()).collect();
    println!("loss {loss:.6}");

    let n = flat.len();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for k in 0..20 {
        let idx = ChaCha8Rng::seed_from_u64(100 + k).gen_range(0..n);
        let h = 1e-5;
        let mut plus = flat.clone();
        plus[idx] += h;
        let mut pm = policy.clone();
        pm.set_flat_params(&plus);
        let (lp, _, _) = policy_loss_components(&pm, &trajectories, 0.2, 0.1).unwrap();
        let mut minus = flat.clone();
        minus[idx] -= h;
        let mut mm = policy.clone();
        mm.set_flat_params(&minus);
        let (lm, _, _) = policy_loss_components(&mm, &trajectories, 0.2, 0.1).unwrap();
        let fd = (lp - lm) / (2.0 * h);
        let a = flat_grads[idx];
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
        if rel > worst { worst = rel; }
        checked += 1;
        if rel > 1e-3 {
            println!("FAIL idx {idx}: analytic {a:.8e} fd {fd:.8e} rel {rel:.3e}");
        }
    }
    println!("checked {checked} coords, worst rel err {worst:.3e}");
}
